use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::{AblationTable, EvalError, MetricsReport, Prediction};
use crate::fusion::ModelConfigId;

pub const RANKED_HEADER: [&str; 6] = ["Rank", "Model Configuration", "F1 Macro", "Accuracy", "Precision", "Recall"];

const FOOTER: &[&str] = &[
    "Precision and Recall are macro-averaged; any undefined ratio (0/0) is scored as 0.",
    "Values are means over cross-validation folds; ± is the sample standard deviation.",
    "M5 soft-votes the trained M1 and M2 heads; M6 bags the M4 architecture with k = 3.",
    "Bagging overlap is reported as the Jaccard index of unique bootstrap indices.",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Markdown,
    Figure,
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(ReportFormat::Csv),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            "figure" | "svg" => Ok(ReportFormat::Figure),
            other => Err(format!("unknown report format `{other}` (csv, markdown, figure)")),
        }
    }
}

/// Ranked table, four decimals.
pub fn write_ranked_csv<W: Write>(table: &AblationTable, out: W) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RANKED_HEADER)?;
    for r in &table.rows {
        w.write_record([
            r.rank.to_string(),
            r.label(),
            format!("{:.4}", r.f1_macro()),
            format!("{:.4}", r.accuracy()),
            format!("{:.4}", r.precision()),
            format!("{:.4}", r.recall()),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Per-fold metrics at full precision, in rank order.
pub fn write_fold_csv<W: Write>(table: &AblationTable, out: W) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["config", "fold", "f1_macro", "accuracy", "precision", "recall"])?;
    for r in &table.rows {
        for (i, f) in r.folds.iter().enumerate() {
            w.write_record([
                r.config.to_string(),
                i.to_string(),
                f.macro_f1.to_string(),
                f.accuracy.to_string(),
                f.macro_precision.to_string(),
                f.macro_recall.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_markdown<W: Write>(table: &AblationTable, extra_notes: &[String], mut out: W) -> Result<(), EvalError> {
    let mut s = String::new();
    writeln!(s, "| {} |", RANKED_HEADER.join(" | ")).unwrap();
    writeln!(s, "|---:|:---|---:|---:|---:|---:|").unwrap();
    for r in &table.rows {
        let sd = &r.aggregate.std;
        writeln!(
            s,
            "| {} | {} | {:.4} ± {:.4} | {:.4} ± {:.4} | {:.4} | {:.4} |",
            r.rank,
            r.label(),
            r.f1_macro(),
            sd.macro_f1,
            r.accuracy(),
            sd.accuracy,
            r.precision(),
            r.recall()
        )
        .unwrap();
    }
    writeln!(s).unwrap();
    for note in FOOTER.iter().map(|n| n.to_string()).chain(extra_notes.iter().cloned()) {
        writeln!(s, "- {note}").unwrap();
    }
    out.write_all(s.as_bytes())?;
    Ok(())
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Bar chart of mean macro-F1 per configuration with fold-std error bars.
/// Layout is fixed, so identical tables give identical bytes.
pub fn write_figure_svg<W: Write>(table: &AblationTable, mut out: W) -> Result<(), EvalError> {
    const BAR: f64 = 48.0;
    const GAP: f64 = 32.0;
    const LEFT: f64 = 64.0;
    const TOP: f64 = 40.0;
    const PLOT_H: f64 = 260.0;
    let n = table.rows.len() as f64;
    let width = LEFT + n * (BAR + GAP) + GAP;
    let height = TOP + PLOT_H + 90.0;
    let y_of = |v: f64| TOP + PLOT_H * (1.0 - v.clamp(0.0, 1.0));

    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif" font-size="11">"#
    )
    .unwrap();
    writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    writeln!(
        s,
        r#"<text x="{:.1}" y="20" text-anchor="middle" font-size="14">Macro-F1 by fusion strategy (mean ± fold std)</text>"#,
        width / 2.0
    )
    .unwrap();
    for tick in 0..=5 {
        let v = tick as f64 * 0.2;
        let y = y_of(v);
        writeln!(
            s,
            "<line x1=\"{LEFT:.1}\" y1=\"{y:.1}\" x2=\"{:.1}\" y2=\"{y:.1}\" stroke=\"#ddd\"/>",
            width - GAP / 2.0
        )
        .unwrap();
        writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{v:.1}</text>"#, LEFT - 6.0, y + 4.0).unwrap();
    }
    writeln!(
        s,
        r#"<text x="16" y="{:.1}" transform="rotate(-90 16 {:.1})" text-anchor="middle">F1 Macro</text>"#,
        TOP + PLOT_H / 2.0,
        TOP + PLOT_H / 2.0
    )
    .unwrap();
    for (i, r) in table.rows.iter().enumerate() {
        let x = LEFT + GAP + i as f64 * (BAR + GAP);
        let v = r.f1_macro();
        let sd = r.aggregate.std.macro_f1;
        let fill = if r.config.is_hybrid() { "#c0504d" } else { "#4f81bd" };
        writeln!(
            s,
            r#"<rect x="{x:.1}" y="{:.1}" width="{BAR:.1}" height="{:.1}" fill="{fill}"/>"#,
            y_of(v),
            TOP + PLOT_H - y_of(v)
        )
        .unwrap();
        let cx = x + BAR / 2.0;
        let (lo, hi) = (y_of(v - sd), y_of(v + sd));
        writeln!(s, r#"<line x1="{cx:.1}" y1="{lo:.1}" x2="{cx:.1}" y2="{hi:.1}" stroke="black"/>"#).unwrap();
        for y in [lo, hi] {
            writeln!(
                s,
                r#"<line x1="{:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="black"/>"#,
                cx - 6.0,
                cx + 6.0
            )
            .unwrap();
        }
        writeln!(s, r#"<text x="{cx:.1}" y="{:.1}" text-anchor="middle">{v:.4}</text>"#, hi - 4.0).unwrap();
        writeln!(
            s,
            r#"<text x="{cx:.1}" y="{:.1}" text-anchor="middle" font-size="12">{}</text>"#,
            TOP + PLOT_H + 16.0,
            xml_escape(r.config.as_str())
        )
        .unwrap();
    }
    let legend: Vec<String> = table.rows.iter().map(|r| xml_escape(&r.label())).collect();
    for (i, line) in legend.chunks(2).map(|c| c.join("   ")).enumerate() {
        writeln!(
            s,
            r#"<text x="{LEFT:.1}" y="{:.1}" font-size="10">{line}</text>"#,
            TOP + PLOT_H + 38.0 + 14.0 * i as f64
        )
        .unwrap();
    }
    writeln!(s, "</svg>").unwrap();
    out.write_all(s.as_bytes())?;
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>, EvalError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

/// Sibling path with `_folds` appended to the stem.
fn folds_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("ablation");
    path.with_file_name(format!("{stem}_folds.csv"))
}

/// Writes the report; CSV output also writes a `<stem>_folds.csv` sibling.
/// Returns every file written.
pub fn emit_report(
    table: &AblationTable,
    format: ReportFormat,
    path: &Path,
    extra_notes: &[String],
) -> Result<Vec<PathBuf>, EvalError> {
    let mut written = vec![path.to_path_buf()];
    let mut w = create(path)?;
    match format {
        ReportFormat::Csv => {
            write_ranked_csv(table, &mut w)?;
            let fp = folds_path(path);
            let mut fw = create(&fp)?;
            write_fold_csv(table, &mut fw)?;
            fw.flush()?;
            written.push(fp);
        }
        ReportFormat::Markdown => write_markdown(table, extra_notes, &mut w)?,
        ReportFormat::Figure => write_figure_svg(table, &mut w)?,
    }
    w.flush()?;
    Ok(written)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerClassRow {
    pub model: ModelConfigId,
    pub class_label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub fn per_class_table(reports: &[(ModelConfigId, MetricsReport)], class_names: &[&str]) -> Vec<PerClassRow> {
    reports
        .iter()
        .flat_map(|(model, r)| {
            (0..r.f1.len()).map(move |c| PerClassRow {
                model: *model,
                class_label: class_names.get(c).map_or_else(|| c.to_string(), |n| n.to_string()),
                precision: r.precision[c],
                recall: r.recall[c],
                f1: r.f1[c],
            })
        })
        .collect()
}

/// Two decimals, as displayed.
pub fn write_per_class_csv<W: Write>(rows: &[PerClassRow], out: W) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["Model", "Class", "Precision", "Recall", "F1"])?;
    for r in rows {
        w.write_record([
            format!("{}: {}", r.model, r.model.description()),
            r.class_label.clone(),
            format!("{:.2}", r.precision),
            format!("{:.2}", r.recall),
            format!("{:.2}", r.f1),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `id,prediction` with integer class codes.
pub fn emit_predictions<W: Write>(ids: &[String], predictions: &[Prediction], out: W) -> Result<(), EvalError> {
    if ids.len() != predictions.len() {
        return Err(EvalError::LengthMismatch {
            preds: predictions.len(),
            labels: ids.len(),
        });
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["id", "prediction"])?;
    for (id, p) in ids.iter().zip(predictions) {
        w.write_record([id.as_str(), &p.class.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
