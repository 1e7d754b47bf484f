//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or computation error.

use std::ffi::OsString;
use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::corpus::{ingest_documents, ingest_queries, DocFormat};
use crate::error::{Error, Result};
use crate::evaluation::{CorrelationChoice, EvalReport, Metric};
use crate::pipeline::{
    evaluate_methods, prepare, read_targets, run_experiment, ExperimentConfig, MethodKind,
};
use crate::predictors::FeatureMatrix;
use crate::regression::{independent_columns, DesignMatrix};
use crate::retrieval::{retrieve, write_trec_run};
use crate::stepwise::{select, SelectionStrategy, StrategyKind};

#[derive(Debug, Parser)]
#[command(
    name = "stepqpp",
    version,
    about = "Query performance prediction with stepwise-selected linear models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    global: Global,
}

#[derive(Debug, Args)]
struct Global {
    /// Experiment configuration file (`key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory for output artifacts.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Master seed for cross-validation splits.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true, value_enum)]
    strategy: Option<StrategyArg>,
    #[arg(long, global = true, value_enum)]
    metric: Option<MetricArg>,
    #[arg(long, global = true, value_enum)]
    correlation: Option<CorrelationArg>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum StrategyArg {
    ForwardP,
    BackwardP,
    StepwiseAic,
}

impl From<StrategyArg> for StrategyKind {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::ForwardP => StrategyKind::ForwardP,
            StrategyArg::BackwardP => StrategyKind::BackwardP,
            StrategyArg::StepwiseAic => StrategyKind::StepwiseAic,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MetricArg {
    Ap,
    Ndcg,
}

impl From<MetricArg> for Metric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::Ap => Metric::Ap,
            MetricArg::Ndcg => Metric::Ndcg,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum CorrelationArg {
    Pearson,
    Spearman,
    Both,
}

impl From<CorrelationArg> for CorrelationChoice {
    fn from(c: CorrelationArg) -> Self {
        match c {
            CorrelationArg::Pearson => CorrelationChoice::Pearson,
            CorrelationArg::Spearman => CorrelationChoice::Spearman,
            CorrelationArg::Both => CorrelationChoice::Both,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load a collection and print its statistics as JSON.
    Index {
        /// Document file; defaults to the corpus named in --config.
        #[arg(long)]
        docs: Option<PathBuf>,
        #[arg(long, default_value = "tsv")]
        format: String,
    },
    /// Retrieve every configured query and write a TREC run.
    Search {
        /// Run file; defaults to <out-dir>/run.trec, or standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compute the predictor matrix and effectiveness targets.
    Features,
    /// Fit a selected linear model from bare CSV matrices.
    Select {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        target: PathBuf,
        /// Target column name (default: first value column).
        #[arg(long)]
        target_column: Option<String>,
        #[arg(long, default_value_t = 0.05)]
        p_threshold: f64,
        /// Model JSON path; the trace goes next to it as .trace.jsonl.
        #[arg(long)]
        out: PathBuf,
    },
    /// Cross-validate the method roster on precomputed features and targets.
    Evaluate {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        trials: Option<usize>,
        /// Comma-separated roster (default: all methods).
        #[arg(long, value_delimiter = ',')]
        methods: Vec<String>,
    },
    /// Run the full experiment.
    Run,
}

/// Parses `argv` (program name first) and executes the command.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}\n\nRun `stepqpp --help` for usage.");
            1
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            2
        }
    }
}

enum Failure {
    Usage(String),
    Data(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Data(e)
    }
}

fn load_config(global: &Global) -> std::result::Result<ExperimentConfig, Failure> {
    let path = global
        .config
        .as_ref()
        .ok_or_else(|| Failure::Usage("this command needs --config".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = global.seed {
        cfg.eval.seed = seed;
    }
    if let Some(t) = global.threads {
        cfg.threads = Some(t);
    }
    if let Some(s) = global.strategy {
        cfg.strategy.kind = s.into();
    }
    if let Some(m) = global.metric {
        cfg.metrics = vec![m.into()];
    }
    if let Some(c) = global.correlation {
        cfg.eval.correlation = c.into();
    }
    Ok(cfg)
}

fn out_dir(global: &Global) -> std::result::Result<PathBuf, Failure> {
    let dir = global.out_dir.clone().unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_matrix(path: &Path) -> Result<FeatureMatrix> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    FeatureMatrix::read_csv(BufReader::new(f), &path.display().to_string())
}

fn install_threads(threads: Option<usize>) {
    if let Some(n) = threads {
        if rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .is_err()
        {
            log::warn!("thread pool already initialised; --threads ignored");
        }
    }
}

fn execute(cli: Cli) -> std::result::Result<(), Failure> {
    let g = &cli.global;
    match cli.command {
        Command::Index { docs, format } => {
            let format: DocFormat = format
                .parse()
                .map_err(|e: Error| Failure::Usage(e.to_string()))?;
            let (path, format) = match docs {
                Some(p) => (p, format),
                None => {
                    let cfg = load_config(g)?;
                    (cfg.corpus, cfg.corpus_format)
                }
            };
            let corpus = ingest_documents(&path, format)?;
            let stats = serde_json::json!({
                "documents": corpus.num_documents(),
                "vocabulary": corpus.vocabulary().len(),
                "tokens": corpus.total_tokens(),
            });
            println!("{stats}");
        }
        Command::Search { out } => {
            let cfg = load_config(g)?;
            install_threads(cfg.threads);
            let corpus = ingest_documents(&cfg.corpus, cfg.corpus_format)?;
            let queries = ingest_queries(&cfg.queries)?;
            let runs = queries
                .iter()
                .map(|q| retrieve(q, &corpus, &cfg.retrieval))
                .collect::<Result<Vec<_>>>()?;
            let mut buf = Vec::new();
            write_trec_run(&mut buf, &runs, &corpus, "stepqpp-lm")
                .map_err(|e| Error::io("<run>", e))?;
            match (out, &g.out_dir) {
                (Some(p), _) => write_bytes(&p, &buf)?,
                (None, Some(_)) => write_bytes(&out_dir(g)?.join("run.trec"), &buf)?,
                (None, None) => std::io::stdout()
                    .write_all(&buf)
                    .map_err(|e| Error::io("<stdout>", e))?,
            }
        }
        Command::Features => {
            let cfg = load_config(g)?;
            install_threads(cfg.threads);
            let dir = out_dir(g)?;
            let prepared = prepare(&cfg, Some(&dir))?;
            println!(
                "{} queries, {} columns, {} excluded",
                prepared.features.num_rows(),
                prepared.features.num_columns(),
                prepared.excluded.len()
            );
        }
        Command::Select {
            features,
            target,
            target_column,
            p_threshold,
            out,
        } => {
            let matrix = read_matrix(&features)?;
            let y = read_targets(&target, matrix.query_ids(), target_column.as_deref())?;
            let design = DesignMatrix::new(
                matrix.columns().to_vec(),
                (0..matrix.num_columns())
                    .map(|j| matrix.column(j))
                    .collect(),
                y,
            )?;
            let mut strategy = SelectionStrategy::new(
                g.strategy
                    .map(Into::into)
                    .unwrap_or(StrategyKind::StepwiseAic),
            );
            strategy.p_threshold = p_threshold;
            strategy
                .validate()
                .map_err(|e| Failure::Usage(e.to_string()))?;
            let all: Vec<usize> = (0..design.num_columns()).collect();
            let (kept, dropped) = independent_columns(&design, &all);
            if !dropped.is_empty() {
                let names: Vec<&str> = dropped
                    .iter()
                    .map(|&j| design.labels()[j].as_str())
                    .collect();
                log::warn!("dropping linearly dependent columns: {}", names.join(", "));
            }
            let (model, trace) = select(&design, &kept, &strategy)?;
            write_bytes(&out, model.export().to_json()?.as_bytes())?;
            let mut buf = Vec::new();
            trace.write_jsonl(&mut buf)?;
            write_bytes(&out.with_extension("trace.jsonl"), &buf)?;
        }
        Command::Evaluate {
            features,
            target,
            trials,
            methods,
        } => {
            install_threads(g.threads);
            let matrix = read_matrix(&features)?;
            let metric: Metric = g.metric.map(Into::into).unwrap_or(Metric::Ap);
            let y = match read_targets(&target, matrix.query_ids(), Some(&metric.to_string())) {
                Ok(named) => named,
                Err(_) => read_targets(&target, matrix.query_ids(), None)?,
            };
            let mut cfg = ExperimentConfig::new("", "", "");
            if let Some(seed) = g.seed {
                cfg.eval.seed = seed;
            }
            if let Some(t) = trials {
                cfg.eval.trials = t;
            }
            if let Some(c) = g.correlation {
                cfg.eval.correlation = c.into();
            }
            if let Some(s) = g.strategy {
                cfg.strategy.kind = s.into();
            }
            cfg.eval
                .validate()
                .map_err(|e| Failure::Usage(e.to_string()))?;
            let kinds: Vec<MethodKind> = if methods.is_empty() {
                MethodKind::ALL.to_vec()
            } else {
                methods
                    .iter()
                    .map(|m| m.parse())
                    .collect::<Result<_>>()
                    .map_err(|e| Failure::Usage(e.to_string()))?
            };
            let roster: Vec<_> = kinds.iter().map(|&k| cfg.method(k)).collect();
            let results = evaluate_methods(&matrix, &y, metric, &roster, &cfg.eval)?;
            let summaries: Vec<_> = results.into_iter().map(|(s, _)| s).collect();
            let report = EvalReport {
                trials: cfg.eval.trials,
                seed: cfg.eval.seed,
                significance: crate::evaluation::significance(&summaries, cfg.eval.alpha),
                methods: summaries,
                excluded_queries: Vec::new(),
            };
            let dir = out_dir(g)?;
            write_report(&dir, &report)?;
        }
        Command::Run => {
            let cfg = load_config(g)?;
            cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
            let dir = out_dir(g)?;
            let out = run_experiment(&cfg, Some(&dir))?;
            for m in &out.report.methods {
                println!(
                    "{:<20} {:<5} pearson {:>7} spearman {:>7} features {:.2}",
                    m.method,
                    m.metric.to_string(),
                    m.mean_pearson.map_or("n/a".into(), |v| format!("{v:.3}")),
                    m.mean_spearman.map_or("n/a".into(), |v| format!("{v:.3}")),
                    m.avg_selected_features,
                );
            }
        }
    }
    Ok(())
}

fn write_report(dir: &Path, report: &EvalReport) -> Result<()> {
    write_bytes(&dir.join("report.json"), report.to_json()?.as_bytes())?;
    let csv = |name: &str, f: &dyn Fn(&mut Vec<u8>) -> std::io::Result<()>| -> Result<()> {
        let mut buf = Vec::new();
        f(&mut buf).map_err(|e| Error::io(dir.join(name), e))?;
        write_bytes(&dir.join(name), &buf)
    };
    csv("report_correlation.csv", &|b| {
        report.write_correlation_csv(b)
    })?;
    csv("report_sparsity.csv", &|b| report.write_sparsity_csv(b))?;
    csv("report_selection_frequency.csv", &|b| {
        report.write_frequency_csv(b)
    })?;
    csv("report_significance.csv", &|b| {
        report.write_significance_csv(b)
    })
}
