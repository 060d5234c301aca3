//! Fixed-length tokenization of raw OCR text.

use serde::{Deserialize, Serialize};

/// Anything that can segment raw text into vocabulary ids.
///
/// Implementations must not normalize the input (no case folding, no
/// stripping of hashtags, emojis or URLs).
pub trait SubwordTokenizer: Send + Sync {
    fn encode(&self, text: &str) -> Vec<u32>;
    fn bos_id(&self) -> u32;
    fn eos_id(&self) -> u32;
    fn pad_id(&self) -> u32;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedText {
    pub token_ids: Vec<u32>,
    pub attention_mask: Vec<u8>,
}

impl TokenizedText {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    /// Ids at unmasked positions.
    pub fn active_ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.token_ids
            .iter()
            .zip(&self.attention_mask)
            .filter(|(_, &m)| m == 1)
            .map(|(&t, _)| t)
    }
}

/// `[bos] tokens.. [eos] [pad]..`, exactly `max_len` long. Overlong input keeps
/// its leading tokens. `max_len` below 2 is raised to 2.
pub fn tokenize_text(text: &str, tokenizer: &dyn SubwordTokenizer, max_len: usize) -> TokenizedText {
    let max_len = max_len.max(2);
    let mut ids = tokenizer.encode(text);
    ids.truncate(max_len - 2);

    let mut token_ids = Vec::with_capacity(max_len);
    token_ids.push(tokenizer.bos_id());
    token_ids.extend(ids);
    token_ids.push(tokenizer.eos_id());
    let active = token_ids.len();
    token_ids.resize(max_len, tokenizer.pad_id());

    let mut attention_mask = vec![1u8; active];
    attention_mask.resize(max_len, 0);
    TokenizedText {
        token_ids,
        attention_mask,
    }
}

const WORD_START: char = '\u{2581}';

/// Weight-free stand-in for a SentencePiece vocabulary.
///
/// Words are split on whitespace and cut into pieces of at most
/// `piece_chars` characters; the first piece of each word carries the `▁`
/// word-start marker. Piece ids come from an FNV-1a hash folded into the
/// vocabulary, leaving ids 0..4 for `<s>`, `<pad>`, `</s>` and `<unk>`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HashedSubwordTokenizer {
    pub vocab_size: u32,
    pub piece_chars: usize,
}

impl Default for HashedSubwordTokenizer {
    fn default() -> Self {
        Self {
            vocab_size: 250_002,
            piece_chars: 4,
        }
    }
}

const SPECIALS: u32 = 4;

impl HashedSubwordTokenizer {
    pub fn pre_tokenize(&self, text: &str) -> Vec<String> {
        let step = self.piece_chars.max(1);
        let mut pieces = Vec::new();
        for word in text.split_whitespace() {
            let chars: Vec<char> = word.chars().collect();
            for (i, chunk) in chars.chunks(step).enumerate() {
                let mut piece = String::new();
                if i == 0 {
                    piece.push(WORD_START);
                }
                piece.extend(chunk);
                pieces.push(piece);
            }
        }
        pieces
    }

    /// Inverse of [`pre_tokenize`](Self::pre_tokenize) up to whitespace runs.
    pub fn decode_pieces(pieces: &[String]) -> String {
        let joined: String = pieces.concat();
        joined.replace(WORD_START, " ").trim_start().to_string()
    }

    pub fn piece_id(&self, piece: &str) -> u32 {
        let span = u64::from(self.vocab_size.saturating_sub(SPECIALS).max(1));
        SPECIALS + (fnv1a(piece.as_bytes()) % span) as u32
    }
}

impl SubwordTokenizer for HashedSubwordTokenizer {
    fn encode(&self, text: &str) -> Vec<u32> {
        self.pre_tokenize(text).iter().map(|p| self.piece_id(p)).collect()
    }

    fn bos_id(&self) -> u32 {
        0
    }

    fn eos_id(&self) -> u32 {
        2
    }

    fn pad_id(&self) -> u32 {
        1
    }
}

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
