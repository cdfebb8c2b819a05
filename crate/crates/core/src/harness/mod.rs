//! Experiment plans, per-cell runs and their manifests.
//!
//! A plan expands to cells (dataset × kind × K × seed, plus λ for a sweep).
//! Each cell writes its checkpoint, descriptors, metrics and manifest under
//! `<output_dir>/cells/<cell id>/`; aggregate tables go to `<output_dir>/`.

pub mod checkpoint;
pub mod report;

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use checkpoint::{load_model, load_model_as, save_model, CHECKPOINT_VERSION};
pub use report::{aggregate, emit_report, lambda_table, AggregateRow, ReportFormat};

use crate::corpus::{load_corpus, Corpus};
use crate::descriptors::{describe_topics, write_descriptors};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_model, load_word_embeddings, MetricParams, MetricReport, WordEmbeddings};
use crate::models::{image_reconstruction_error, train, LossTerms, ModelConfig, ModelKind};

/// Writes through a temporary file in the target directory and renames it
/// into place.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(tmp.path(), e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

/// Like [`write_atomic`], but leaves the file untouched when its content
/// already matches.
pub(crate) fn write_if_changed(path: &Path, bytes: &[u8]) -> Result<()> {
    if fs::read(path).is_ok_and(|old| old == bytes) {
        return Ok(());
    }
    write_atomic(path, bytes)
}

/// Optional replacements for [`ModelConfig`] fields.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigOverrides {
    pub lambda: Option<f64>,
    pub omega: Option<f64>,
    pub tau: Option<f64>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub epochs: Option<usize>,
    pub dropout_rate: Option<f64>,
    pub prior_alpha: Option<f64>,
    pub hidden_width: Option<usize>,
}

impl ConfigOverrides {
    pub fn apply(&self, cfg: &mut ModelConfig) {
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = self.$f { cfg.$f = v; } )* };
        }
        set!(lambda, omega, tau, batch_size, learning_rate, epochs, dropout_rate, hidden_width);
        if self.prior_alpha.is_some() {
            cfg.prior_alpha = self.prior_alpha;
        }
    }
}

fn default_kinds() -> Vec<ModelKind> {
    ModelKind::ALL.to_vec()
}

fn default_topic_counts() -> Vec<usize> {
    vec![25, 50, 75, 100]
}

fn default_seeds() -> Vec<u64> {
    (0..5).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    pub datasets: Vec<PathBuf>,
    #[serde(default = "default_kinds")]
    pub kinds: Vec<ModelKind>,
    #[serde(default = "default_topic_counts")]
    pub topic_counts: Vec<usize>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Applied to every cell.
    #[serde(default)]
    pub defaults: ConfigOverrides,
    /// Applied after `defaults`, per model kind.
    #[serde(default)]
    pub overrides: BTreeMap<ModelKind, ConfigOverrides>,
    /// When nonempty, multimodal zero-shot cells run once per λ listed here.
    #[serde(default)]
    pub lambda_sweep: Vec<f64>,
    pub output_dir: PathBuf,
    /// Parallel cells; `None` uses every core.
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default)]
    pub metrics: MetricParams,
    #[serde(default)]
    pub word_embeddings: Option<PathBuf>,
}

impl ExperimentPlan {
    pub fn new(datasets: Vec<PathBuf>, output_dir: PathBuf) -> Self {
        Self {
            datasets,
            kinds: default_kinds(),
            topic_counts: default_topic_counts(),
            seeds: default_seeds(),
            defaults: ConfigOverrides::default(),
            overrides: BTreeMap::new(),
            lambda_sweep: Vec::new(),
            output_dir,
            workers: None,
            metrics: MetricParams::default(),
            word_embeddings: None,
        }
    }

    /// Reads a JSON plan; relative paths are taken from the plan's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut plan: ExperimentPlan = serde_json::from_str(&text)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        plan.datasets.iter_mut().for_each(resolve);
        resolve(&mut plan.output_dir);
        if let Some(p) = plan.word_embeddings.as_mut() {
            resolve(p);
        }
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        if self.datasets.is_empty() || self.kinds.is_empty() || self.topic_counts.is_empty() || self.seeds.is_empty() {
            return Err(Error::InvalidConfig(
                "plan needs at least one dataset, kind, topic count and seed".into(),
            ));
        }
        let mut names: Vec<String> = self.datasets.iter().map(|p| dataset_name(p)).collect();
        names.sort();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidConfig("dataset file names must be distinct".into()));
        }
        if self.lambda_sweep.iter().any(|l| !(*l >= 0.0)) {
            return Err(Error::InvalidConfig("lambda_sweep values must be >= 0".into()));
        }
        Ok(())
    }

    /// Every cell of the plan in a fixed order.
    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for path in &self.datasets {
            for &kind in &self.kinds {
                let lambdas: Vec<Option<f64>> =
                    if kind == ModelKind::MultimodalZeroShot && !self.lambda_sweep.is_empty() {
                        self.lambda_sweep.iter().copied().map(Some).collect()
                    } else {
                        vec![None]
                    };
                for &k in &self.topic_counts {
                    for &lambda in &lambdas {
                        for &seed in &self.seeds {
                            out.push(Cell {
                                dataset: dataset_name(path),
                                dataset_path: path.clone(),
                                kind,
                                num_topics: k,
                                seed,
                                lambda,
                            });
                        }
                    }
                }
            }
        }
        out
    }

    pub fn resolve_config(&self, cell: &Cell) -> ModelConfig {
        let mut cfg = ModelConfig::new(cell.kind, cell.num_topics);
        cfg.seed = cell.seed;
        self.defaults.apply(&mut cfg);
        if let Some(o) = self.overrides.get(&cell.kind) {
            o.apply(&mut cfg);
        }
        if let Some(l) = cell.lambda {
            cfg.lambda = l;
        }
        cfg
    }
}

fn dataset_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub dataset: String,
    pub dataset_path: PathBuf,
    pub kind: ModelKind,
    pub num_topics: usize,
    pub seed: u64,
    pub lambda: Option<f64>,
}

impl Cell {
    pub fn id(&self) -> String {
        let mut id = format!("{}/{}/k{}", self.dataset, self.kind, self.num_topics);
        if let Some(l) = self.lambda {
            id.push_str(&format!("/lambda{l}"));
        }
        id.push_str(&format!("/seed{}", self.seed));
        id
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum CellStatus {
    Completed,
    Failed { error: String },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub train_secs: f64,
    pub eval_secs: f64,
}

/// Artifact paths, relative to the plan's output directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Artifacts {
    pub checkpoint: PathBuf,
    pub descriptors: PathBuf,
    pub metrics: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub cell_id: String,
    pub dataset: String,
    pub kind: ModelKind,
    pub num_topics: usize,
    pub seed: u64,
    pub lambda: Option<f64>,
    pub config: ModelConfig,
    /// SHA-256 of the corpus content; empty when the dataset failed to load.
    pub corpus_fingerprint: String,
    pub timings: Timings,
    pub artifacts: Artifacts,
    pub status: CellStatus,
    pub metrics: Option<MetricReport>,
    /// Mean `1 - cos(x_img, γᵀθ)` on the training corpus (multimodal
    /// zero-shot only).
    pub image_recon_loss: Option<f64>,
    pub final_loss: Option<LossTerms>,
}

impl RunManifest {
    /// SHA-256 of the manifest's JSON form.
    pub fn content_hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(serde_json::to_vec(self)?)))
    }

    fn failed(cell: &Cell, config: ModelConfig, fingerprint: String, error: String) -> Self {
        RunManifest {
            cell_id: cell.id(),
            dataset: cell.dataset.clone(),
            kind: cell.kind,
            num_topics: cell.num_topics,
            seed: cell.seed,
            lambda: cell.lambda,
            config,
            corpus_fingerprint: fingerprint,
            timings: Timings::default(),
            artifacts: Artifacts::default(),
            status: CellStatus::Failed { error },
            metrics: None,
            image_recon_loss: None,
            final_loss: None,
        }
    }
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFESTS_FILE: &str = "manifests.json";

/// Everything a finished plan produced.
#[derive(Debug, Clone)]
pub struct PlanOutcome {
    pub manifests: Vec<RunManifest>,
    pub aggregate: Vec<AggregateRow>,
    /// Cells skipped because a valid manifest already existed.
    pub reused: usize,
}

fn cell_dir(cell: &Cell) -> PathBuf {
    Path::new("cells").join(cell.id())
}

fn reusable(path: &Path, config: &ModelConfig, fingerprint: &str, output_dir: &Path) -> Option<RunManifest> {
    let text = fs::read_to_string(path).ok()?;
    let m: RunManifest = serde_json::from_str(&text).ok()?;
    let ok = m.status == CellStatus::Completed
        && &m.config == config
        && m.corpus_fingerprint == fingerprint
        && output_dir.join(&m.artifacts.checkpoint).is_file();
    ok.then_some(m)
}

fn run_cell(
    cell: &Cell,
    config: &ModelConfig,
    corpus: &Corpus,
    fingerprint: &str,
    embeddings: Option<&WordEmbeddings>,
    metric_params: &MetricParams,
    output_dir: &Path,
) -> Result<RunManifest> {
    let dir = cell_dir(cell);
    let artifacts = Artifacts {
        checkpoint: dir.join("model.ckpt"),
        descriptors: dir.join("descriptors.jsonl"),
        metrics: dir.join("metrics.json"),
    };
    let t0 = Instant::now();
    let model = train(corpus, config)?;
    let train_secs = t0.elapsed().as_secs_f64();
    save_model(&model, output_dir.join(&artifacts.checkpoint))?;

    let t1 = Instant::now();
    let descriptors = describe_topics(
        model.beta(),
        &model.vocabulary,
        &model.doc_theta,
        corpus,
        metric_params.n_descriptors,
    )?;
    let desc_path = output_dir.join(&artifacts.descriptors);
    let tmp = desc_path.with_extension("jsonl.partial");
    write_descriptors(&descriptors, &tmp)?;
    fs::rename(&tmp, &desc_path).map_err(|e| Error::io(&desc_path, e))?;
    let report = evaluate_model(&cell.id(), &model, corpus, embeddings, metric_params)?;
    write_atomic(
        &output_dir.join(&artifacts.metrics),
        &serde_json::to_vec_pretty(&report)?,
    )?;
    let image_recon_loss = match model.kind() {
        ModelKind::MultimodalZeroShot => Some(image_reconstruction_error(&model, corpus)?),
        _ => None,
    };
    Ok(RunManifest {
        cell_id: cell.id(),
        dataset: cell.dataset.clone(),
        kind: cell.kind,
        num_topics: cell.num_topics,
        seed: cell.seed,
        lambda: cell.lambda,
        config: config.clone(),
        corpus_fingerprint: fingerprint.to_owned(),
        timings: Timings {
            train_secs,
            eval_secs: t1.elapsed().as_secs_f64(),
        },
        artifacts,
        status: CellStatus::Completed,
        metrics: Some(report),
        image_recon_loss,
        final_loss: model.loss_trace.last().copied(),
    })
}

/// Runs every cell of a plan, reusing cells whose manifest is still valid.
/// A failing cell is recorded in its manifest and the others proceed.
pub fn run_plan(plan: &ExperimentPlan) -> Result<PlanOutcome> {
    plan.validate()?;
    let out = &plan.output_dir;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let embeddings = plan
        .word_embeddings
        .as_ref()
        .map(load_word_embeddings)
        .transpose()?;

    let corpora: BTreeMap<String, std::result::Result<(Corpus, String), String>> = plan
        .datasets
        .iter()
        .map(|p| {
            let loaded = load_corpus(p)
                .map(|c| {
                    let fp = c.fingerprint();
                    (c, fp)
                })
                .map_err(|e| format!("loading {}: {e}", p.display()));
            (dataset_name(p), loaded)
        })
        .collect();

    let cells = plan.cells();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(plan.workers.unwrap_or(0))
        .build()
        .map_err(|e| Error::InvalidConfig(format!("worker pool: {e}")))?;
    let results: Vec<(RunManifest, bool)> = pool.install(|| {
        cells
            .par_iter()
            .map(|cell| {
                let config = plan.resolve_config(cell);
                let (corpus, fingerprint) = match &corpora[&cell.dataset] {
                    Ok(c) => c,
                    Err(e) => return Ok((RunManifest::failed(cell, config, String::new(), e.clone()), false)),
                };
                let manifest_path = out.join(cell_dir(cell)).join(MANIFEST_FILE);
                if let Some(m) = reusable(&manifest_path, &config, fingerprint, out) {
                    return Ok((m, true));
                }
                let manifest = run_cell(
                    cell,
                    &config,
                    corpus,
                    fingerprint,
                    embeddings.as_ref(),
                    &plan.metrics,
                    out,
                )
                .unwrap_or_else(|e| {
                    RunManifest::failed(cell, config.clone(), fingerprint.clone(), e.to_string())
                });
                write_atomic(&manifest_path, &serde_json::to_vec_pretty(&manifest)?)?;
                Ok((manifest, false))
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let reused = results.iter().filter(|(_, r)| *r).count();
    let manifests: Vec<RunManifest> = results.into_iter().map(|(m, _)| m).collect();
    write_outputs(out, &manifests)?;
    Ok(PlanOutcome {
        aggregate: aggregate(&manifests),
        manifests,
        reused,
    })
}

/// Writes `manifests.json` and the aggregate tables in every format.
pub fn write_outputs(output_dir: &Path, manifests: &[RunManifest]) -> Result<()> {
    write_if_changed(
        &output_dir.join(MANIFESTS_FILE),
        &serde_json::to_vec_pretty(manifests)?,
    )?;
    for format in [ReportFormat::Json, ReportFormat::Markdown, ReportFormat::Csv] {
        let path = output_dir.join(format!("aggregate.{}", format.extension()));
        write_if_changed(&path, emit_report(manifests, format)?.as_bytes())?;
    }
    if let Some(table) = lambda_table(manifests) {
        write_if_changed(&output_dir.join("lambda_ablation.md"), table.as_bytes())?;
    }
    Ok(())
}

pub fn load_manifests(output_dir: impl AsRef<Path>) -> Result<Vec<RunManifest>> {
    let path = output_dir.as_ref().join(MANIFESTS_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}
