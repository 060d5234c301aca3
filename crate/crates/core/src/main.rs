use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use modalfuse::config::{ConfigError, RunConfig};
use modalfuse::corpus::{load_manifest, stratified_kfold, CorpusError, DatasetManifest, FoldAssignment, Task};
use modalfuse::encoders::{EmbeddingCache, EncoderError};
use modalfuse::ensemble::EnsembleError;
use modalfuse::eval::{
    ablation_run, emit_predictions, emit_report, evaluate, per_class_table, summarize_predictions, write_per_class_csv,
    AblationTable, EvalError, ReportFormat,
};
use modalfuse::fusion::{FusionError, ImageVariant, ModelConfigId};
use modalfuse::pipeline::{
    embed_manifest, resolve_encoders, tokenize_sample, write_text_removed_variant, EmbedRequest, PipelineError,
};
use modalfuse::preprocess::{parse_box_file, PreprocessError};
use modalfuse::training::{train_model, EmbeddedDataset, TrainError, TrainedModel};

#[derive(Parser)]
#[command(name = "modalfuse", version, about = "Multimodal meme classification: splits, embeddings, training, ablations")]
struct Cli {
    /// TOML file with training and preprocessing settings.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "A")]
    task: Task,
    /// Use the deterministic toy encoders.
    #[arg(long, global = true)]
    toy_encoders: bool,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct DataArgs {
    /// JSONL manifest; relative image paths resolve against its directory.
    #[arg(long)]
    manifest: PathBuf,
    /// Manifest of the text-removed images (same ids).
    #[arg(long)]
    text_removed: Option<PathBuf>,
    /// Embedding cache file, read if present and updated afterwards.
    #[arg(long)]
    cache: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Stratified k-fold assignment, written as `id,fold` CSV.
    Split {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Tokenizes text and optionally writes the text-removed image variant.
    Preprocess {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, requires = "boxes")]
        remove_text: bool,
        /// CSV of `id,x,y,w,h,confidence` text boxes.
        #[arg(long)]
        boxes: Option<PathBuf>,
    },
    /// Fills the embedding cache.
    Encode {
        #[command(flatten)]
        data: DataArgs,
    },
    /// Cross-validates one configuration (all folds, or only `--fold`).
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        folds: PathBuf,
        #[arg(long)]
        model: ModelConfigId,
        #[arg(long)]
        fold: Option<usize>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Cross-validates a list of configurations and writes the ranked report.
    Ablate {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        folds: PathBuf,
        /// Comma-separated configuration ids (default: all eight).
        #[arg(long, value_delimiter = ',')]
        models: Vec<ModelConfigId>,
        /// Ranked CSV path; sibling .md, .svg, .json and detail CSVs are written next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Writes `id,prediction` for every sample of the manifest.
    Predict {
        #[command(flatten)]
        data: DataArgs,
        /// Checkpoint file, or ensemble checkpoint directory.
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Gate statistics JSON (hybrid models only).
        #[arg(long)]
        gating: Option<PathBuf>,
    },
    /// Renders a saved ablation table (the .json written by `ablate`).
    Report {
        #[arg(long)]
        table: PathBuf,
        #[arg(long, default_value = "csv")]
        format: ReportFormat,
        #[arg(long)]
        out: PathBuf,
    },
}

enum Failure {
    Usage(String),
    Data(String),
    Divergence(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Divergence(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Data(m) | Failure::Divergence(m) => m,
        }
    }
}

macro_rules! data_failure {
    ($($t:ty),*) => {
        $(impl From<$t> for Failure {
            fn from(e: $t) -> Self {
                Failure::Data(e.to_string())
            }
        })*
    };
}

data_failure!(
    CorpusError,
    PipelineError,
    PreprocessError,
    EncoderError,
    FusionError,
    EnsembleError,
    std::io::Error,
    serde_json::Error,
    csv::Error
);

impl From<TrainError> for Failure {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Divergence { .. } => Failure::Divergence(e.to_string()),
            other => Failure::Data(other.to_string()),
        }
    }
}

impl From<EvalError> for Failure {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Train(t) => t.into(),
            other => Failure::Data(other.to_string()),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Usage(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

struct Ctx {
    cfg: RunConfig,
    task: Task,
    toy: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

fn run(cli: Cli) -> Outcome {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.train.seed = s;
    }
    let ctx = Ctx {
        cfg,
        task: cli.task,
        toy: cli.toy_encoders,
    };
    match cli.command {
        Command::Split { manifest, k, out } => split(&ctx, &manifest, k, &out),
        Command::Preprocess {
            manifest,
            out_dir,
            remove_text,
            boxes,
        } => preprocess(&ctx, &manifest, &out_dir, remove_text.then_some(boxes).flatten()),
        Command::Encode { data } => encode(&ctx, &data),
        Command::Train {
            data,
            folds,
            model,
            fold,
            out_dir,
        } => train(&ctx, &data, &folds, model, fold, &out_dir),
        Command::Ablate {
            data,
            folds,
            models,
            out,
        } => ablate(&ctx, &data, &folds, &models, &out),
        Command::Predict {
            data,
            checkpoint,
            out,
            gating,
        } => predict(&ctx, &data, &checkpoint, &out, gating.as_deref()),
        Command::Report { table, format, out } => report(&table, format, &out),
    }
}

fn read_manifest(path: &Path, task: Task) -> Result<DatasetManifest, Failure> {
    let mut m = load_manifest(path, task)?;
    m.resolve_paths(path.parent().unwrap_or(Path::new(".")));
    Ok(m)
}

fn read_folds(path: &Path, seed: u64) -> Result<FoldAssignment, Failure> {
    let f = File::open(path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
    Ok(FoldAssignment::read_csv(f, seed)?)
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    Ok(BufWriter::new(
        File::create(path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?,
    ))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Outcome {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn split(ctx: &Ctx, manifest: &Path, k: usize, out: &Path) -> Outcome {
    let m = read_manifest(manifest, ctx.task)?;
    let folds = stratified_kfold(&m, k, ctx.cfg.train.seed)?;
    let mut w = create(out)?;
    folds.write_csv(&mut w)?;
    w.flush()?;
    let sizes: Vec<String> = folds.fold_sizes().iter().map(usize::to_string).collect();
    println!("{} samples in {k} folds (sizes {})", m.len(), sizes.join(", "));
    Ok(())
}

fn preprocess(ctx: &Ctx, manifest: &Path, out_dir: &Path, boxes: Option<PathBuf>) -> Outcome {
    let m = read_manifest(manifest, ctx.task)?;
    fs::create_dir_all(out_dir)?;
    let tokens_path = out_dir.join("tokens.jsonl");
    let mut w = create(&tokens_path)?;
    for s in &m.samples {
        let t = tokenize_sample(s, &ctx.cfg.preprocess);
        serde_json::to_writer(&mut w, &serde_json::json!({ "id": s.id, "tokens": t }))?;
        writeln!(w)?;
    }
    w.flush()?;
    println!("wrote {}", tokens_path.display());

    if let Some(box_path) = boxes {
        let f = File::open(&box_path).map_err(|e| Failure::Data(format!("{}: {e}", box_path.display())))?;
        let boxes = parse_box_file(f)?;
        let image_dir = out_dir.join("text_removed");
        let mut variant =
            write_text_removed_variant(&m, &boxes, ctx.cfg.preprocess.box_confidence_min, &image_dir)?;
        // image paths relative to the manifest written next to them
        for s in &mut variant.samples {
            if let Ok(rel) = s.image_path.strip_prefix(out_dir) {
                s.image_path = rel.to_path_buf();
            }
        }
        let manifest_path = out_dir.join("text_removed.jsonl");
        let mut w = create(&manifest_path)?;
        variant.write_jsonl(&mut w)?;
        w.flush()?;
        println!("wrote {} ({} images)", manifest_path.display(), variant.len());
    }
    Ok(())
}

struct Needs {
    text: bool,
    image: bool,
    text_removed: bool,
    labels: bool,
}

fn load_dataset(ctx: &Ctx, data: &DataArgs, needs: &Needs) -> Result<EmbeddedDataset, Failure> {
    let manifest = read_manifest(&data.manifest, ctx.task)?;
    let text_removed = match (&data.text_removed, needs.text_removed) {
        (Some(p), true) => Some(read_manifest(p, ctx.task)?),
        _ => None,
    };
    let encoders = resolve_encoders(ctx.toy, ctx.cfg.train.seed);
    for w in &encoders.warnings {
        log::warn!("{w}");
    }
    let mut cache = match &data.cache {
        Some(p) if p.exists() => EmbeddingCache::load(p)?,
        _ => EmbeddingCache::new(),
    };
    let before = cache.len();
    let req = EmbedRequest {
        manifest: &manifest,
        text_removed: text_removed.as_ref(),
        text: needs.text,
        image: needs.image,
        require_labels: needs.labels,
    };
    let dataset = embed_manifest(&req, &encoders, &ctx.cfg.preprocess, &mut cache)?;
    if let Some(p) = &data.cache {
        if cache.len() != before || !p.exists() {
            if let Some(parent) = p.parent().filter(|q| !q.as_os_str().is_empty()) {
                fs::create_dir_all(parent)?;
            }
            cache.save(p)?;
        }
    }
    log::info!("embedded {} samples ({} cached vectors)", dataset.len(), cache.len());
    Ok(dataset)
}

fn needs_for(configs: &[ModelConfigId], labels: bool) -> Needs {
    Needs {
        text: configs.iter().any(|c| c.uses_text()),
        image: configs.iter().any(|c| c.uses_image()),
        text_removed: configs
            .iter()
            .any(|c| c.uses_image() && c.image_variant() == ImageVariant::TextRemoved),
        labels,
    }
}

fn encode(ctx: &Ctx, data: &DataArgs) -> Outcome {
    if data.cache.is_none() {
        return Err(Failure::Usage("encode needs --cache".into()));
    }
    let d = load_dataset(
        ctx,
        data,
        &Needs {
            text: true,
            image: true,
            text_removed: true,
            labels: false,
        },
    )?;
    println!("encoded {} samples into {}", d.len(), data.cache.as_ref().unwrap().display());
    Ok(())
}

fn train(
    ctx: &Ctx,
    data: &DataArgs,
    folds_path: &Path,
    model: ModelConfigId,
    only: Option<usize>,
    out_dir: &Path,
) -> Outcome {
    let folds = read_folds(folds_path, ctx.cfg.train.seed)?;
    if let Some(f) = only.filter(|&f| f >= folds.k) {
        return Err(Failure::Usage(format!("fold {f} out of range for k = {}", folds.k)));
    }
    let dataset = load_dataset(ctx, data, &needs_for(&[model], true))?;
    let mut fold_of = Vec::with_capacity(dataset.len());
    for id in &dataset.ids {
        fold_of.push(
            folds
                .fold_of(id)
                .ok_or_else(|| Failure::Data(format!("sample `{id}` has no fold assignment")))?,
        );
    }
    fs::create_dir_all(out_dir)?;
    let mut summary = csv::Writer::from_writer(create(&out_dir.join("metrics.csv"))?);
    summary.write_record(["fold", "accuracy", "macro_precision", "macro_recall", "macro_f1", "best_epoch"])?;
    let fold_list: Vec<usize> = only.map_or_else(|| (0..folds.k).collect(), |f| vec![f]);
    for fold in fold_list {
        let train_idx: Vec<usize> = (0..dataset.len()).filter(|&i| fold_of[i] != fold).collect();
        let val_idx: Vec<usize> = (0..dataset.len()).filter(|&i| fold_of[i] == fold).collect();
        let train_set = dataset.subset(&train_idx);
        let val_set = dataset.subset(&val_idx);
        let (trained, records) = train_model(model, &train_set, &val_set, &ctx.cfg.train)?;
        let preds: Vec<usize> = trained.predict(&val_set)?.iter().map(|p| p.class).collect();
        let report = evaluate(&preds, &val_set.labels, val_set.num_classes)?;

        let ckpt = match trained {
            TrainedModel::Single(_) => out_dir.join(format!("fold{fold}.ckpt")),
            TrainedModel::Ensemble(_) => out_dir.join(format!("fold{fold}")),
        };
        trained.save(&ckpt, ctx.cfg.train.seed)?;
        for (j, r) in records.iter().enumerate() {
            let name = if records.len() == 1 {
                format!("fold{fold}_log.csv")
            } else {
                format!("fold{fold}_member{j}_log.csv")
            };
            let mut w = create(&out_dir.join(name))?;
            r.write_csv(&mut w)?;
            w.flush()?;
        }
        let best = records.first().map_or(0, |r| r.best_epoch);
        summary.write_record([
            fold.to_string(),
            format!("{:.4}", report.accuracy),
            format!("{:.4}", report.macro_precision),
            format!("{:.4}", report.macro_recall),
            format!("{:.4}", report.macro_f1),
            best.to_string(),
        ])?;
        println!(
            "{model} fold {fold}: macro-F1 {:.4}, accuracy {:.4} -> {}",
            report.macro_f1,
            report.accuracy,
            ckpt.display()
        );
    }
    summary.flush()?;
    Ok(())
}

fn sibling(path: &Path, suffix: &str, ext: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("ablation");
    path.with_file_name(format!("{stem}{suffix}.{ext}"))
}

fn ablate(ctx: &Ctx, data: &DataArgs, folds_path: &Path, models: &[ModelConfigId], out: &Path) -> Outcome {
    let configs: Vec<ModelConfigId> = if models.is_empty() {
        ModelConfigId::ALL.to_vec()
    } else {
        models.to_vec()
    };
    let folds = read_folds(folds_path, ctx.cfg.train.seed)?;
    let dataset = load_dataset(ctx, data, &needs_for(&configs, true))?;
    let outcome = ablation_run(&dataset, &folds, &configs, &ctx.cfg.train)?;
    let table = &outcome.table;

    let mut notes = Vec::new();
    let mut gating = Vec::new();
    for (config, results) in &outcome.results {
        if !config.is_hybrid() {
            continue;
        }
        let preds: Vec<_> = results.iter().flat_map(|r| r.predictions.iter().cloned()).collect();
        let s = summarize_predictions(&preds);
        notes.push(format!(
            "{config}: {:.1}% of held-out samples text-dominant (g_txt > 0.5); mean gate image {:.3}, text {:.3}.",
            100.0 * s.fraction_text_dominant,
            s.mean_g_img,
            s.mean_g_txt
        ));
        gating.push(serde_json::json!({ "config": config, "summary": s }));
    }

    let mut written = emit_report(table, ReportFormat::Csv, out, &notes)?;
    for (format, ext) in [(ReportFormat::Markdown, "md"), (ReportFormat::Figure, "svg")] {
        written.extend(emit_report(table, format, &out.with_extension(ext), &notes)?);
    }
    let json_path = out.with_extension("json");
    write_json(&json_path, table)?;
    written.push(json_path);

    let per_model: Vec<_> = table.rows.iter().map(|r| (r.config, r.aggregate.mean.clone())).collect();
    let class_names: Vec<&str> = (0..dataset.num_classes).map(|c| ctx.task.class_name(c)).collect();
    let per_class_path = sibling(out, "_per_class", "csv");
    let mut w = create(&per_class_path)?;
    write_per_class_csv(&per_class_table(&per_model, &class_names), &mut w)?;
    w.flush()?;
    written.push(per_class_path);
    if !gating.is_empty() {
        let p = sibling(out, "_gating", "json");
        write_json(&p, &gating)?;
        written.push(p);
    }

    for r in &table.rows {
        println!(
            "{:>2}. {:<45} F1 {:.4} ± {:.4}  acc {:.4}",
            r.rank,
            r.label(),
            r.f1_macro(),
            r.aggregate.std.macro_f1,
            r.accuracy()
        );
    }
    for p in written {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn predict(ctx: &Ctx, data: &DataArgs, checkpoint: &Path, out: &Path, gating: Option<&Path>) -> Outcome {
    let model = TrainedModel::load(checkpoint)?;
    let config = model.config();
    let dataset = load_dataset(ctx, data, &needs_for(&[config], false))?;
    let preds = model.predict(&dataset)?;
    let mut w = create(out)?;
    emit_predictions(&dataset.ids, &preds, &mut w)?;
    w.flush()?;
    println!("wrote {} predictions to {}", preds.len(), out.display());
    if let Some(g) = gating {
        if !config.is_hybrid() {
            return Err(Failure::Usage(format!("{config} has no gating network")));
        }
        write_json(g, &summarize_predictions(&preds))?;
        println!("wrote {}", g.display());
    }
    Ok(())
}

fn report(table_path: &Path, format: ReportFormat, out: &Path) -> Outcome {
    let text = fs::read_to_string(table_path).map_err(|e| Failure::Data(format!("{}: {e}", table_path.display())))?;
    let table: AblationTable = serde_json::from_str(&text)?;
    for p in emit_report(&table, format, out, &[])? {
        println!("wrote {}", p.display());
    }
    Ok(())
}
