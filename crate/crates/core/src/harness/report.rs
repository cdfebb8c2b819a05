//! Aggregate tables over run manifests.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::{CellStatus, RunManifest};
use crate::metrics::MetricReport;
use crate::models::ModelKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Markdown,
    Csv,
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Json => "json",
            ReportFormat::Markdown => "md",
            ReportFormat::Csv => "csv",
        }
    }
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(Error::InvalidArgument(format!("unknown report format `{other}`"))),
        }
    }
}

/// One row of the results table: a (dataset, model, λ) group, averaged over
/// seeds within each topic count and then over topic counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub dataset: String,
    pub model: ModelKind,
    pub lambda: Option<f64>,
    pub npmi: Option<f64>,
    pub we: Option<f64>,
    pub iec: Option<f64>,
    pub td: Option<f64>,
    pub irbo: Option<f64>,
    pub ieps: Option<f64>,
    pub image_recon: Option<f64>,
    pub topic_counts: Vec<usize>,
    pub completed: usize,
    pub failed: usize,
}

type Getter = fn(&RunManifest) -> Option<f64>;

fn metric(f: fn(&MetricReport) -> Option<f64>) -> impl Fn(&RunManifest) -> Option<f64> {
    move |m| m.metrics.as_ref().and_then(f)
}

/// Mean over seeds within each K, then mean over the K values that have at
/// least one value.
fn two_level_mean(cells: &[&RunManifest], get: &dyn Fn(&RunManifest) -> Option<f64>) -> Option<f64> {
    let mut by_k: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for m in cells {
        if let (CellStatus::Completed, Some(v)) = (&m.status, get(m)) {
            by_k.entry(m.num_topics).or_default().push(v);
        }
    }
    if by_k.is_empty() {
        return None;
    }
    let k_means: Vec<f64> = by_k
        .values()
        .map(|v| v.iter().sum::<f64>() / v.len() as f64)
        .collect();
    Some(k_means.iter().sum::<f64>() / k_means.len() as f64)
}

pub fn aggregate(manifests: &[RunManifest]) -> Vec<AggregateRow> {
    let mut groups: BTreeMap<(String, ModelKind, Option<u64>), Vec<&RunManifest>> = BTreeMap::new();
    for m in manifests {
        groups
            .entry((m.dataset.clone(), m.kind, m.lambda.map(f64::to_bits)))
            .or_default()
            .push(m);
    }
    let image_recon: Getter = |m| m.image_recon_loss;
    groups
        .into_iter()
        .map(|((dataset, model, lambda), cells)| {
            let mut topic_counts: Vec<usize> = cells.iter().map(|m| m.num_topics).collect();
            topic_counts.sort_unstable();
            topic_counts.dedup();
            let completed = cells
                .iter()
                .filter(|m| m.status == CellStatus::Completed)
                .count();
            AggregateRow {
                dataset,
                model,
                lambda: lambda.map(f64::from_bits),
                npmi: two_level_mean(&cells, &metric(|r| Some(r.npmi))),
                we: two_level_mean(&cells, &metric(|r| r.we)),
                iec: two_level_mean(&cells, &metric(|r| r.iec)),
                td: two_level_mean(&cells, &metric(|r| Some(r.td))),
                irbo: two_level_mean(&cells, &metric(|r| Some(r.irbo))),
                ieps: two_level_mean(&cells, &metric(|r| r.ieps)),
                image_recon: two_level_mean(&cells, &image_recon),
                topic_counts,
                completed,
                failed: cells.len() - completed,
            }
        })
        .collect()
}

fn cell2(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.2}")).unwrap_or_default()
}

fn cell_full(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn runs(r: &AggregateRow) -> String {
    let total = r.completed + r.failed;
    if r.failed > 0 {
        format!("{}/{} ({} failed)", r.completed, total, r.failed)
    } else {
        format!("{}/{}", r.completed, total)
    }
}

fn markdown(rows: &[AggregateRow]) -> String {
    let with_lambda = rows.iter().any(|r| r.lambda.is_some());
    let mut out = String::new();
    let lambda_head = if with_lambda { " λ |" } else { "" };
    let lambda_rule = if with_lambda { "---|" } else { "" };
    let _ = writeln!(
        out,
        "| Dataset | Model |{lambda_head} NPMI | WE | IEC | TD | I-RBO | IEPS | Runs |"
    );
    let _ = writeln!(out, "|---|---|{lambda_rule}---|---|---|---|---|---|---|");
    for r in rows {
        let lambda = if with_lambda {
            format!(" {} |", r.lambda.map(|l| l.to_string()).unwrap_or_default())
        } else {
            String::new()
        };
        let _ = writeln!(
            out,
            "| {} | {} |{} {} | {} | {} | {} | {} | {} | {} |",
            r.dataset,
            r.model,
            lambda,
            cell2(r.npmi),
            cell2(r.we),
            cell2(r.iec),
            cell2(r.td),
            cell2(r.irbo),
            cell2(r.ieps),
            runs(r)
        );
    }
    out
}

fn csv(rows: &[AggregateRow]) -> String {
    let mut out =
        String::from("dataset,model,lambda,npmi,we,iec,td,irbo,ieps,image_recon,completed,failed\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.dataset,
            r.model,
            cell_full(r.lambda),
            cell_full(r.npmi),
            cell_full(r.we),
            cell_full(r.iec),
            cell_full(r.td),
            cell_full(r.irbo),
            cell_full(r.ieps),
            cell_full(r.image_recon),
            r.completed,
            r.failed
        );
    }
    out
}

pub fn render(rows: &[AggregateRow], format: ReportFormat) -> Result<String> {
    Ok(match format {
        ReportFormat::Json => serde_json::to_string_pretty(rows)? + "\n",
        ReportFormat::Markdown => markdown(rows),
        ReportFormat::Csv => csv(rows),
    })
}

/// Coherence (NPMI, WE, IEC) and diversity (TD, I-RBO, IEPS) per model.
/// Markdown rounds to two decimals; JSON and CSV keep full precision. Missing
/// metrics are blank.
pub fn emit_report(manifests: &[RunManifest], format: ReportFormat) -> Result<String> {
    render(&aggregate(manifests), format)
}

/// λ-ablation table for multimodal zero-shot cells run with an explicit λ,
/// or `None` when there are none.
pub fn lambda_table(manifests: &[RunManifest]) -> Option<String> {
    let rows: Vec<AggregateRow> = aggregate(manifests)
        .into_iter()
        .filter(|r| r.model == ModelKind::MultimodalZeroShot && r.lambda.is_some())
        .collect();
    if rows.is_empty() {
        return None;
    }
    let mut out = String::from(
        "| Dataset | λ | NPMI | WE | IEC | TD | I-RBO | IEPS | Image recon. loss |\n|---|---|---|---|---|---|---|---|---|\n",
    );
    for r in &rows {
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {} | {} | {} | {} | {} |",
            r.dataset,
            r.lambda.expect("filtered"),
            cell2(r.npmi),
            cell2(r.we),
            cell2(r.iec),
            cell2(r.td),
            cell2(r.irbo),
            cell2(r.ieps),
            r.image_recon.map(|x| format!("{x:.4}")).unwrap_or_default()
        );
    }
    Some(out)
}
