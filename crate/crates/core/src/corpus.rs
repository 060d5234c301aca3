//! Dataset manifests, class statistics and stratified k-fold splits.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("cannot read manifest {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed record at line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("duplicate sample id `{0}`")]
    DuplicateId(String),
    #[error("sample `{id}`: label {value} out of range for task {task}")]
    LabelOutOfRange { id: String, task: Task, value: i64 },
    #[error("sample `{0}` has no label for task {1}")]
    Unlabeled(String, Task),
    #[error("class {0} has zero samples; imbalance ratio is undefined")]
    EmptyClass(usize),
    #[error("manifest is empty")]
    Empty,
    #[error("k must be at least 2 (got {0})")]
    InvalidK(usize),
    #[error("class {class} has {count} samples, fewer than k = {k}")]
    ClassTooSmall { class: usize, count: usize, k: usize },
    #[error("fold file: {0}")]
    FoldFile(String),
}

/// Which classification task the labels refer to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Task {
    /// Binary hate detection: 0 = Non-Hate, 1 = Hate.
    A,
    /// Sentiment: 0 = Negative, 1 = Neutral, 2 = Positive.
    B,
}

impl Task {
    pub fn num_classes(self) -> usize {
        match self {
            Task::A => 2,
            Task::B => 3,
        }
    }

    pub fn class_name(self, class: usize) -> &'static str {
        match (self, class) {
            (Task::A, 0) => "Non-Hate",
            (Task::A, 1) => "Hate",
            (Task::B, 0) => "Negative",
            (Task::B, 1) => "Neutral",
            (Task::B, 2) => "Positive",
            _ => "?",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Task::A => f.write_str("A"),
            Task::B => f.write_str("B"),
        }
    }
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "A" | "a" => Ok(Task::A),
            "B" | "b" => Ok(Task::B),
            other => Err(format!("unknown task `{other}` (expected A or B)")),
        }
    }
}

/// One meme: image reference, raw OCR text and optional labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemeSample {
    pub id: String,
    pub image_path: PathBuf,
    /// Stored byte-for-byte as read from the manifest.
    #[serde(rename = "text")]
    pub ocr_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_a: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_b: Option<u8>,
}

impl MemeSample {
    pub fn label(&self, task: Task) -> Option<usize> {
        match task {
            Task::A => self.label_a,
            Task::B => self.label_b,
        }
        .map(usize::from)
    }
}

// Raw record with wide integer labels so out-of-range values reach validation
// instead of failing inside serde.
#[derive(Deserialize)]
struct RawRecord {
    id: String,
    image_path: PathBuf,
    text: String,
    #[serde(default)]
    label_a: Option<i64>,
    #[serde(default)]
    label_b: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub samples: Vec<MemeSample>,
    pub task: Task,
}

impl DatasetManifest {
    pub fn new(samples: Vec<MemeSample>, task: Task) -> Result<Self, CorpusError> {
        let mut seen = HashSet::with_capacity(samples.len());
        for s in &samples {
            if !seen.insert(s.id.as_str()) {
                return Err(CorpusError::DuplicateId(s.id.clone()));
            }
            check_range(&s.id, Task::A, s.label_a.map(i64::from))?;
            check_range(&s.id, Task::B, s.label_b.map(i64::from))?;
        }
        Ok(Self { samples, task })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Labels for the manifest's task, erroring on the first unlabeled sample.
    pub fn labels(&self) -> Result<Vec<usize>, CorpusError> {
        self.samples
            .iter()
            .map(|s| {
                s.label(self.task)
                    .ok_or_else(|| CorpusError::Unlabeled(s.id.clone(), self.task))
            })
            .collect()
    }

    /// Rewrites relative image paths against `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        for s in &mut self.samples {
            if s.image_path.is_relative() {
                s.image_path = base.join(&s.image_path);
            }
        }
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for s in &self.samples {
            serde_json::to_writer(&mut out, s)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

fn check_range(id: &str, task: Task, value: Option<i64>) -> Result<(), CorpusError> {
    match value {
        Some(v) if v < 0 || v >= task.num_classes() as i64 => Err(CorpusError::LabelOutOfRange {
            id: id.to_string(),
            task,
            value: v,
        }),
        _ => Ok(()),
    }
}

/// Loads a line-delimited JSON manifest. Blank lines are skipped; relative
/// image paths are kept as written.
pub fn load_manifest(path: &Path, task: Task) -> Result<DatasetManifest, CorpusError> {
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_manifest(BufReader::new(file), task).map_err(|e| match e {
        CorpusError::Io { source, .. } => CorpusError::Io {
            path: path.to_path_buf(),
            source,
        },
        other => other,
    })
}

pub fn parse_manifest<R: Read>(reader: R, task: Task) -> Result<DatasetManifest, CorpusError> {
    let mut samples = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|source| CorpusError::Io {
            path: PathBuf::new(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
        if !seen.insert(raw.id.clone()) {
            return Err(CorpusError::DuplicateId(raw.id));
        }
        check_range(&raw.id, Task::A, raw.label_a)?;
        check_range(&raw.id, Task::B, raw.label_b)?;
        samples.push(MemeSample {
            id: raw.id,
            image_path: raw.image_path,
            ocr_text: raw.text,
            label_a: raw.label_a.map(|v| v as u8),
            label_b: raw.label_b.map(|v| v as u8),
        });
    }
    Ok(DatasetManifest { samples, task })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub counts: Vec<usize>,
    pub proportions: Vec<f64>,
    pub imbalance_ratio: f64,
}

impl ClassStats {
    pub fn from_counts(counts: Vec<usize>) -> Result<Self, CorpusError> {
        if let Some(c) = counts.iter().position(|&n| n == 0) {
            return Err(CorpusError::EmptyClass(c));
        }
        let total: usize = counts.iter().sum();
        let proportions = counts.iter().map(|&n| n as f64 / total as f64).collect();
        let max = *counts.iter().max().ok_or(CorpusError::Empty)?;
        let min = *counts.iter().min().ok_or(CorpusError::Empty)?;
        Ok(Self {
            counts,
            proportions,
            imbalance_ratio: max as f64 / min as f64,
        })
    }
}

pub fn class_counts(labels: &[usize], num_classes: usize) -> Vec<usize> {
    let mut counts = vec![0; num_classes];
    for &l in labels {
        counts[l] += 1;
    }
    counts
}

pub fn compute_class_stats(manifest: &DatasetManifest) -> Result<ClassStats, CorpusError> {
    if manifest.is_empty() {
        return Err(CorpusError::Empty);
    }
    let labels = manifest.labels()?;
    ClassStats::from_counts(class_counts(&labels, manifest.task.num_classes()))
}

/// Sample id → fold index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub k: usize,
    pub seed: u64,
    pub assignment: IndexMap<String, usize>,
}

impl FoldAssignment {
    pub fn fold_of(&self, id: &str) -> Option<usize> {
        self.assignment.get(id).copied()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in self.assignment.values() {
            sizes[f] += 1;
        }
        sizes
    }

    /// Indices into `manifest.samples` as (train, validation) for `fold`.
    pub fn split_indices(
        &self,
        manifest: &DatasetManifest,
        fold: usize,
    ) -> Result<(Vec<usize>, Vec<usize>), CorpusError> {
        let mut train = Vec::new();
        let mut val = Vec::new();
        for (i, s) in manifest.samples.iter().enumerate() {
            match self.fold_of(&s.id) {
                Some(f) if f == fold => val.push(i),
                Some(_) => train.push(i),
                None => {
                    return Err(CorpusError::FoldFile(format!(
                        "sample `{}` has no fold assignment",
                        s.id
                    )))
                }
            }
        }
        Ok((train, val))
    }

    /// Two-column `id,fold` table in assignment order.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["id", "fold"])?;
        for (id, fold) in &self.assignment {
            w.write_record([id.as_str(), &fold.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R, seed: u64) -> Result<Self, CorpusError> {
        let mut r = csv::Reader::from_reader(input);
        let mut assignment = IndexMap::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| CorpusError::FoldFile(e.to_string()))?;
            let (Some(id), Some(fold)) = (rec.get(0), rec.get(1)) else {
                return Err(CorpusError::FoldFile(format!("row {} has fewer than 2 columns", i + 2)));
            };
            let fold: usize = fold
                .trim()
                .parse()
                .map_err(|_| CorpusError::FoldFile(format!("row {}: bad fold `{fold}`", i + 2)))?;
            if assignment.insert(id.to_string(), fold).is_some() {
                return Err(CorpusError::DuplicateId(id.to_string()));
            }
        }
        let k = assignment.values().max().map_or(0, |&m| m + 1);
        if k < 2 {
            return Err(CorpusError::InvalidK(k));
        }
        Ok(Self { k, seed, assignment })
    }
}

/// Stratified k-fold assignment.
///
/// Ids of each class (ascending class order) are shuffled with a ChaCha8 stream
/// seeded from `seed`, then dealt round-robin into folds. The dealing pointer
/// carries over between classes, so fold sizes never differ by more than one and
/// each fold holds either floor or ceil of `n_c / k` members of class `c`.
pub fn stratified_kfold(
    manifest: &DatasetManifest,
    k: usize,
    seed: u64,
) -> Result<FoldAssignment, CorpusError> {
    if k < 2 {
        return Err(CorpusError::InvalidK(k));
    }
    if manifest.is_empty() {
        return Err(CorpusError::Empty);
    }
    let labels = manifest.labels()?;
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    for (&class, members) in &by_class {
        if members.len() < k {
            return Err(CorpusError::ClassTooSmall {
                class,
                count: members.len(),
                k,
            });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold_of = vec![0usize; labels.len()];
    let mut next = 0usize;
    for members in by_class.values_mut() {
        members.shuffle(&mut rng);
        for &i in members.iter() {
            fold_of[i] = next;
            next = (next + 1) % k;
        }
    }

    let assignment = manifest
        .samples
        .iter()
        .zip(fold_of)
        .map(|(s, f)| (s.id.clone(), f))
        .collect();
    Ok(FoldAssignment { k, seed, assignment })
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;

    pub fn synthetic_manifest(counts: &[usize], task: Task) -> DatasetManifest {
        let mut samples = Vec::new();
        let mut n = 0;
        // Interleave classes so manifest order does not group them.
        let mut remaining = counts.to_vec();
        while remaining.iter().any(|&r| r > 0) {
            for (c, r) in remaining.iter_mut().enumerate() {
                if *r > 0 {
                    *r -= 1;
                    let label = Some(c as u8);
                    samples.push(MemeSample {
                        id: format!("s{n:05}"),
                        image_path: PathBuf::from(format!("img/{n}.png")),
                        ocr_text: String::new(),
                        label_a: if task == Task::A { label } else { None },
                        label_b: if task == Task::B { label } else { None },
                    });
                    n += 1;
                }
            }
        }
        DatasetManifest::new(samples, task).unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::test_support::synthetic_manifest;
    use super::*;
    use proptest::prelude::*;

    fn jsonl(lines: &[&str]) -> String {
        lines.join("\n")
    }

    #[test]
    fn loads_records_in_file_order() {
        let src = jsonl(&[
            r#"{"id":"b","image_path":"b.jpg","text":"दुई","label_a":1}"#,
            r#"{"id":"a","image_path":"a.jpg","text":"एक","label_a":0,"label_b":2}"#,
            r#"{"id":"c","image_path":"c.jpg","text":"","label_a":1}"#,
        ]);
        let m = parse_manifest(src.as_bytes(), Task::A).unwrap();
        let ids: Vec<_> = m.samples.iter().map(|s| s.id.as_str()).collect();
        assert_eq!(ids, ["b", "a", "c"]);
        assert_eq!(m.samples[1].label_b, Some(2));
    }

    #[test]
    fn text_is_kept_byte_for_byte() {
        let text = "  #नेपाल 😀 http://x/Y?z=1  ";
        let line = serde_json::json!({"id": "x", "image_path": "x.png", "text": text}).to_string();
        let m = parse_manifest(line.as_bytes(), Task::A).unwrap();
        assert_eq!(m.samples[0].ocr_text, text);
    }

    #[test]
    fn out_of_range_label_names_the_id() {
        let src = r#"{"id":"bad-one","image_path":"x","text":"t","label_a":2}"#;
        let err = parse_manifest(src.as_bytes(), Task::A).unwrap_err();
        assert!(matches!(err, CorpusError::LabelOutOfRange { ref id, .. } if id == "bad-one"));
        assert!(err.to_string().contains("bad-one"));
    }

    #[test]
    fn malformed_record_reports_line() {
        let src = jsonl(&[r#"{"id":"a","image_path":"x","text":"t"}"#, "", "{not json"]);
        match parse_manifest(src.as_bytes(), Task::A).unwrap_err() {
            CorpusError::Malformed { line, .. } => assert_eq!(line, 3),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn duplicate_id_rejected() {
        let src = jsonl(&[
            r#"{"id":"a","image_path":"x","text":"t"}"#,
            r#"{"id":"a","image_path":"y","text":"u"}"#,
        ]);
        assert!(matches!(
            parse_manifest(src.as_bytes(), Task::A),
            Err(CorpusError::DuplicateId(id)) if id == "a"
        ));
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = load_manifest(Path::new("/nonexistent/manifest.jsonl"), Task::A).unwrap_err();
        assert!(matches!(err, CorpusError::Io { .. }));
    }

    #[test]
    fn synthetic_1068_round_trips_with_hate_share() {
        // 720 hate out of 1068 reproduces the stated 67.4% share.
        let mut lines = String::new();
        for i in 0..1068 {
            let label = u8::from(i % 1068 < 720);
            lines.push_str(
                &serde_json::json!({"id": format!("m{i}"), "image_path": "i.png", "text": "t", "label_a": label})
                    .to_string(),
            );
            lines.push('\n');
        }
        let m = parse_manifest(lines.as_bytes(), Task::A).unwrap();
        assert_eq!(m.len(), 1068);
        let stats = compute_class_stats(&m).unwrap();
        assert_eq!(stats.counts, vec![348, 720]);
        assert!((stats.proportions[1] - 0.674).abs() < 5e-4);
    }

    #[test]
    fn class_stats_examples() {
        let s = ClassStats::from_counts(vec![348, 720]).unwrap();
        assert!((s.proportions[0] - 0.326).abs() < 5e-4);
        assert!((s.proportions[1] - 0.674).abs() < 5e-4);
        assert!((s.imbalance_ratio - 2.07).abs() < 5e-3);

        let s = ClassStats::from_counts(vec![10, 10]).unwrap();
        assert_eq!(s.imbalance_ratio, 1.0);

        let s = ClassStats::from_counts(vec![39, 50, 29]).unwrap();
        let expect = [39.0 / 118.0, 50.0 / 118.0, 29.0 / 118.0];
        for (p, e) in s.proportions.iter().zip(expect) {
            assert!((p - e).abs() < 1e-12);
        }
        assert!((s.proportions[0] - 0.331).abs() < 5e-4);
        assert!((s.proportions[1] - 0.424).abs() < 5e-4);
        assert!((s.proportions[2] - 0.246).abs() < 5e-4);
        assert!((s.imbalance_ratio - 50.0 / 29.0).abs() < 1e-12);
    }

    #[test]
    fn class_stats_errors() {
        assert!(matches!(ClassStats::from_counts(vec![5, 0]), Err(CorpusError::EmptyClass(1))));
        let mut m = synthetic_manifest(&[2, 2], Task::A);
        m.samples[0].label_a = None;
        assert!(matches!(compute_class_stats(&m), Err(CorpusError::Unlabeled(..))));
    }

    #[test]
    fn kfold_ten_samples_one_of_each_class_per_fold() {
        let m = synthetic_manifest(&[5, 5], Task::A);
        let folds = stratified_kfold(&m, 5, 42).unwrap();
        let labels = m.labels().unwrap();
        for f in 0..5 {
            let mut per_class = [0; 2];
            for (s, &l) in m.samples.iter().zip(&labels) {
                if folds.fold_of(&s.id) == Some(f) {
                    per_class[l] += 1;
                }
            }
            assert_eq!(per_class, [1, 1], "fold {f}");
        }
    }

    #[test]
    fn kfold_is_deterministic_bytewise() {
        let m = synthetic_manifest(&[30, 17], Task::A);
        let mut a = Vec::new();
        let mut b = Vec::new();
        stratified_kfold(&m, 5, 42).unwrap().write_csv(&mut a).unwrap();
        stratified_kfold(&m, 5, 42).unwrap().write_csv(&mut b).unwrap();
        assert_eq!(a, b);
        let mut c = Vec::new();
        stratified_kfold(&m, 5, 7).unwrap().write_csv(&mut c).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn kfold_1068_sizes_and_hate_counts() {
        let m = synthetic_manifest(&[348, 720], Task::A);
        let folds = stratified_kfold(&m, 5, 42).unwrap();
        let mut sizes = folds.fold_sizes();
        sizes.sort_unstable_by(|a, b| b.cmp(a));
        assert_eq!(sizes, vec![214, 214, 214, 213, 213]);
        let labels = m.labels().unwrap();
        for f in 0..5 {
            let hate = m
                .samples
                .iter()
                .zip(&labels)
                .filter(|(s, &l)| l == 1 && folds.fold_of(&s.id) == Some(f))
                .count();
            assert!((144..=145).contains(&hate), "fold {f} has {hate}");
        }
    }

    #[test]
    fn kfold_errors() {
        let m = synthetic_manifest(&[5, 5], Task::A);
        assert!(matches!(stratified_kfold(&m, 1, 0), Err(CorpusError::InvalidK(1))));
        let m = synthetic_manifest(&[5, 3], Task::A);
        assert!(matches!(
            stratified_kfold(&m, 5, 0),
            Err(CorpusError::ClassTooSmall { class: 1, count: 3, k: 5 })
        ));
    }

    #[test]
    fn fold_file_round_trip() {
        let m = synthetic_manifest(&[6, 4], Task::A);
        let folds = stratified_kfold(&m, 2, 42).unwrap();
        let mut buf = Vec::new();
        folds.write_csv(&mut buf).unwrap();
        assert!(buf.starts_with(b"id,fold\n"));
        let back = FoldAssignment::read_csv(buf.as_slice(), 42).unwrap();
        assert_eq!(back, folds);
        let (train, val) = folds.split_indices(&m, 0).unwrap();
        assert_eq!(train.len() + val.len(), 10);
    }

    proptest! {
        #[test]
        fn kfold_partition_and_stratification(
            counts in proptest::collection::vec(2usize..40, 2..4),
            k in 2usize..6,
            seed in any::<u64>(),
        ) {
            prop_assume!(counts.iter().all(|&c| c >= k));
            let task = if counts.len() == 2 { Task::A } else { Task::B };
            let m = synthetic_manifest(&counts, task);
            let folds = stratified_kfold(&m, k, seed).unwrap();
            prop_assert_eq!(folds.assignment.len(), m.len());
            let sizes = folds.fold_sizes();
            let (lo, hi) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
            prop_assert!(hi - lo <= 1);
            let labels = m.labels().unwrap();
            let total = m.len() as f64;
            for f in 0..k {
                for (c, &n_c) in counts.iter().enumerate() {
                    let in_fold = m.samples.iter().zip(&labels)
                        .filter(|(s, &l)| l == c && folds.fold_of(&s.id) == Some(f))
                        .count() as f64;
                    let expected = (sizes[f] as f64 * n_c as f64 / total).round();
                    prop_assert!((in_fold - expected).abs() <= 1.0,
                        "fold {} class {}: {} vs {}", f, c, in_fold, expected);
                }
            }
        }
    }
}
