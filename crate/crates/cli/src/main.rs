use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use mmtopic::corpus::{load_corpus_with, load_stopwords, LoadOptions, DEFAULT_VOCAB_CAP};
use mmtopic::descriptors::{describe_topics, write_descriptors, DEFAULT_TOP_N};
use mmtopic::harness::report::{emit_report, ReportFormat};
use mmtopic::harness::{load_manifests, run_plan};
use mmtopic::metrics::{evaluate_model, load_word_embeddings, MetricParams, DEFAULT_RBO_P, DEFAULT_WINDOW};
use mmtopic::models::infer_corpus;
use mmtopic::overlap::{model_id, overlap_report};
use mmtopic::{
    generate_synthetic, load_corpus, load_model, save_corpus, save_model, train, ExperimentPlan,
    ModelConfig, ModelKind, SyntheticSpec,
};

#[derive(Parser)]
#[command(name = "mmtopic", version, about = "Multimodal neural topic models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a planted-topic dataset.
    Synth(SynthArgs),
    /// Tokenise a raw dataset and write it with a fixed vocabulary.
    Prep(PrepArgs),
    /// Train one model and write a checkpoint.
    Train(TrainArgs),
    /// Compute metrics (and optionally descriptors) for a checkpoint.
    Eval(EvalArgs),
    /// Align the topics of two checkpoints.
    Overlap(OverlapArgs),
    /// Run every cell of an experiment plan.
    Run(RunArgs),
    /// Render the aggregate table of a finished plan.
    Report(ReportArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// JSON file with generator settings; missing fields take defaults.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    docs: Option<usize>,
    /// Output dataset (JSONL). `vocab.txt` is written next to it.
    #[arg(long)]
    out: PathBuf,
    /// Where to write the planted topics as JSON.
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Args)]
struct PrepArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_VOCAB_CAP)]
    vocab_cap: usize,
    /// One stopword per line; replaces the built-in list.
    #[arg(long)]
    stopwords: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    kind: ModelKind,
    #[arg(long)]
    topics: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    omega: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    hidden_width: Option<usize>,
    #[arg(long)]
    prior_alpha: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    /// Reference corpus, read with the checkpoint's vocabulary.
    #[arg(long)]
    data: PathBuf,
    /// Word vectors in text format (`word v1 v2 ...`).
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_WINDOW)]
    window: usize,
    #[arg(long, default_value_t = DEFAULT_TOP_N)]
    top_n: usize,
    #[arg(long, default_value_t = DEFAULT_RBO_P)]
    rbo_p: f64,
    /// Metrics JSON; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write topic descriptors (JSONL) here.
    #[arg(long)]
    descriptors: Option<PathBuf>,
}

#[derive(Args)]
struct OverlapArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    #[arg(long, default_value_t = DEFAULT_TOP_N)]
    top_n: usize,
    #[arg(long, default_value_t = DEFAULT_RBO_P)]
    rbo_p: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    plan: PathBuf,
    /// Overrides the plan's worker count.
    #[arg(long)]
    workers: Option<usize>,
    /// Overrides the plan's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Output directory of a plan run.
    #[arg(long)]
    dir: PathBuf,
    #[arg(long, default_value = "markdown")]
    format: ReportFormat,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn write_or_print(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn synth(args: SynthArgs) -> Result<()> {
    let mut spec = match &args.spec {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str::<SyntheticSpec>(&text)
                .with_context(|| format!("parsing {}", p.display()))?
        }
        None => SyntheticSpec::default(),
    };
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    if let Some(docs) = args.docs {
        spec.docs = docs;
    }
    let planted = generate_synthetic(&spec)?;
    save_corpus(&planted.corpus, &args.out)?;
    if let Some(truth) = &args.truth {
        let vocab = planted.corpus.vocabulary();
        let topics: Vec<_> = planted
            .topics
            .iter()
            .map(|t| {
                json!({
                    "id": t.id,
                    "word_block": [t.word_block.start, t.word_block.end],
                    "top_words": t.top_words(vocab, DEFAULT_TOP_N),
                })
            })
            .collect();
        let doc = json!({ "spec": spec, "topics": topics });
        fs::write(truth, serde_json::to_string_pretty(&doc)? + "\n")
            .with_context(|| format!("writing {}", truth.display()))?;
    }
    eprintln!(
        "wrote {} documents, vocabulary {}",
        planted.corpus.len(),
        planted.corpus.vocabulary().len()
    );
    Ok(())
}

fn prep(args: PrepArgs) -> Result<()> {
    let mut opts = LoadOptions {
        vocab_cap: args.vocab_cap,
        use_sidecar: false,
        ..LoadOptions::default()
    };
    if let Some(p) = &args.stopwords {
        opts.stopwords = load_stopwords(p)?;
    }
    let corpus = load_corpus_with(&args.input, &opts)?;
    save_corpus(&corpus, &args.out)?;
    eprintln!(
        "wrote {} documents, vocabulary {}",
        corpus.len(),
        corpus.vocabulary().len()
    );
    Ok(())
}

fn train_cmd(args: TrainArgs) -> Result<()> {
    let mut config = ModelConfig::new(args.kind, args.topics);
    macro_rules! set {
        ($($field:ident <- $arg:expr),* $(,)?) => {
            $(if let Some(v) = $arg { config.$field = v; })*
        };
    }
    set!(
        seed <- args.seed,
        epochs <- args.epochs,
        batch_size <- args.batch_size,
        lambda <- args.lambda,
        omega <- args.omega,
        tau <- args.tau,
        learning_rate <- args.learning_rate,
        dropout_rate <- args.dropout,
        hidden_width <- args.hidden_width,
    );
    if args.prior_alpha.is_some() {
        config.prior_alpha = args.prior_alpha;
    }
    let corpus = load_corpus(&args.data)?;
    let model = train(&corpus, &config)?;
    save_model(&model, &args.out)?;
    if let Some(last) = model.loss_trace.last() {
        eprintln!("final loss per document: {:.4}", last.total);
    }
    Ok(())
}

fn eval(args: EvalArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    let corpus = load_corpus_with(
        &args.data,
        &LoadOptions {
            vocabulary: Some(model.vocabulary.clone()),
            ..LoadOptions::default()
        },
    )?;
    let embeddings = args.embeddings.as_ref().map(load_word_embeddings).transpose()?;
    let params = MetricParams {
        window: args.window,
        rbo_p: args.rbo_p,
        n_descriptors: args.top_n,
    };
    let report = evaluate_model(&model_id(&model), &model, &corpus, embeddings.as_ref(), &params)?;
    if let Some(path) = &args.descriptors {
        let theta = infer_corpus(&model, &corpus)?;
        let descriptors = describe_topics(model.beta(), &model.vocabulary, &theta, &corpus, args.top_n)?;
        write_descriptors(&descriptors, path)?;
    }
    write_or_print(args.out.as_deref(), &(serde_json::to_string_pretty(&report)? + "\n"))
}

fn overlap(args: OverlapArgs) -> Result<()> {
    let a = load_model(&args.a)?;
    let b = load_model(&args.b)?;
    let report = overlap_report(&a, &b, args.top_n, args.rbo_p)?;
    eprintln!("M = {:.4}, SD = {:.4}", report.mean, report.sd);
    write_or_print(args.out.as_deref(), &(serde_json::to_string_pretty(&report)? + "\n"))
}

fn run(args: RunArgs) -> Result<()> {
    let mut plan = ExperimentPlan::load(&args.plan)?;
    if args.workers.is_some() {
        plan.workers = args.workers;
    }
    if let Some(out) = args.out {
        plan.output_dir = out;
    }
    let outcome = run_plan(&plan)?;
    let failed: Vec<_> = outcome
        .manifests
        .iter()
        .filter_map(|m| match &m.status {
            mmtopic::harness::CellStatus::Failed { error } => Some((m.cell_id.as_str(), error)),
            mmtopic::harness::CellStatus::Completed => None,
        })
        .collect();
    eprintln!(
        "{} cells ({} reused, {} failed); results in {}",
        outcome.manifests.len(),
        outcome.reused,
        failed.len(),
        plan.output_dir.display()
    );
    for (id, err) in &failed {
        eprintln!("  {id}: {err}");
    }
    print!("{}", emit_report(&outcome.manifests, ReportFormat::Markdown)?);
    if !failed.is_empty() && failed.len() == outcome.manifests.len() {
        bail!("every cell failed");
    }
    Ok(())
}

fn report(args: ReportArgs) -> Result<()> {
    let manifests = load_manifests(&args.dir)?;
    write_or_print(args.out.as_deref(), &emit_report(&manifests, args.format)?)
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Synth(a) => synth(a),
        Command::Prep(a) => prep(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval(a),
        Command::Overlap(a) => overlap(a),
        Command::Run(a) => run(a),
        Command::Report(a) => report(a),
    }
}
