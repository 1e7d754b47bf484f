//! Two-stage prediction: per-family aggregation of depth variants (stage 1)
//! followed by a linear model over the aggregated families (stage 2), plus the
//! end-to-end experiment runner.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::corpus::{
    ingest_documents, ingest_qrels, ingest_queries, ingest_stopwords, Corpus, DocFormat, Qrels,
    Query, StopwordList,
};
use crate::error::{Error, Result};
use crate::evaluation::{
    average_precision, cross_validate, ndcg, pearson, significance, summarize, CorrelationChoice,
    EvalConfig, EvalReport, MethodSummary, Metric, PredictionMethod, TrainedPredictor, TrialResult,
};
use crate::predictors::{
    compute_variant, matrix_from_artifacts, FeatureMatrix, FeatureVariantId, PredictorConfig,
    QueryArtifacts,
};
use crate::regression::{fit_mle, independent_columns, DesignMatrix, LinearModel, ModelExport};
use crate::retrieval::{write_trec_run, RankedList, RetrievalConfig};
use crate::stepwise::{select, SelectionStep, SelectionStrategy, Start, StrategyKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AggregationKind {
    /// Linear combination of a family's variants trained on pairwise hinge loss.
    PairwiseRankLinear,
    /// The single variant with the largest absolute training Pearson correlation.
    BestVariantByPearson,
}

impl FromStr for AggregationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pairwise-rank-linear" | "pairwise_rank_linear" => {
                Ok(AggregationKind::PairwiseRankLinear)
            }
            "best-variant-pearson" | "best_variant_by_pearson" => {
                Ok(AggregationKind::BestVariantByPearson)
            }
            other => Err(Error::Config(format!("unknown aggregation {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregationMethod {
    pub kind: AggregationKind,
    /// Passes over the training pairs.
    pub iterations: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for AggregationMethod {
    fn default() -> Self {
        AggregationMethod {
            kind: AggregationKind::PairwiseRankLinear,
            iterations: 100,
            learning_rate: 0.05,
            seed: 7,
        }
    }
}

impl AggregationMethod {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return Err(Error::Config(
                "aggregation iterations and learning rate must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Groups columns by predictor family. Labels that are not `FAMILY@DEPTH`
/// form a group of their own. Groups keep first-appearance order; members
/// are sorted by depth.
pub fn group_columns(columns: &[String]) -> Vec<(String, Vec<usize>)> {
    let mut groups: Vec<(String, Vec<(usize, usize)>)> = Vec::new();
    for (j, label) in columns.iter().enumerate() {
        let (name, depth) = match label.parse::<FeatureVariantId>() {
            Ok(v) => (v.family.to_string(), v.depth),
            Err(_) => (label.clone(), 0),
        };
        match groups.iter_mut().find(|(g, _)| *g == name) {
            Some((_, members)) => members.push((depth, j)),
            None => groups.push((name, vec![(depth, j)])),
        }
    }
    groups
        .into_iter()
        .map(|(name, mut members)| {
            members.sort();
            (name, members.into_iter().map(|(_, j)| j).collect())
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
enum FamilyCombiner {
    PassThrough(String),
    Linear {
        columns: Vec<String>,
        mean: Vec<f64>,
        scale: Vec<f64>,
        weights: Vec<f64>,
    },
}

impl FamilyCombiner {
    fn columns(&self) -> Vec<String> {
        match self {
            FamilyCombiner::PassThrough(c) => vec![c.clone()],
            FamilyCombiner::Linear { columns, .. } => columns.clone(),
        }
    }
}

/// Frozen stage-1 mapping from depth variants to one column per family.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregator {
    families: Vec<(String, FamilyCombiner)>,
}

impl Aggregator {
    pub fn family_names(&self) -> Vec<String> {
        self.families.iter().map(|(n, _)| n.clone()).collect()
    }

    /// Input columns the given families depend on.
    pub fn input_columns(&self, families: &[String]) -> Vec<String> {
        self.families
            .iter()
            .filter(|(n, _)| families.contains(n))
            .flat_map(|(_, c)| c.columns())
            .collect()
    }

    pub fn apply(&self, matrix: &FeatureMatrix) -> Result<FeatureMatrix> {
        let lookup = |label: &str| {
            matrix
                .column_index(label)
                .ok_or_else(|| Error::MissingFeature(label.to_string()))
        };
        let mut out_cols = Vec::with_capacity(self.families.len());
        for (_, combiner) in &self.families {
            let col = match combiner {
                FamilyCombiner::PassThrough(c) => matrix.column(lookup(c)?),
                FamilyCombiner::Linear {
                    columns,
                    mean,
                    scale,
                    weights,
                } => {
                    let idx = columns
                        .iter()
                        .map(|c| lookup(c))
                        .collect::<Result<Vec<_>>>()?;
                    matrix
                        .rows()
                        .iter()
                        .map(|row| {
                            idx.iter()
                                .enumerate()
                                .map(|(v, &j)| weights[v] * (row[j] - mean[v]) / scale[v])
                                .sum()
                        })
                        .collect()
                }
            };
            out_cols.push(col);
        }
        let rows = (0..matrix.num_rows())
            .map(|i| out_cols.iter().map(|c| c[i]).collect())
            .collect();
        FeatureMatrix::new(matrix.query_ids().to_vec(), self.family_names(), rows)
    }
}

fn variance(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n
}

/// Learns weights `w` for standardized variant columns so that
/// `w·x_i > w·x_j + 1` whenever `y_i > y_j`, by seeded stochastic
/// subgradient descent on the pairwise hinge loss. Stops early once an
/// epoch sees no margin violation.
pub fn train_pairwise_weights(
    columns: &[Vec<f64>],
    targets: &[f64],
    method: &AggregationMethod,
) -> Vec<f64> {
    let d = columns.len();
    let n = targets.len();
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if targets[i] > targets[j] {
                pairs.push((i, j));
            }
        }
    }
    let mut w = vec![1.0 / d as f64; d];
    let mut rng = ChaCha8Rng::seed_from_u64(method.seed);
    for epoch in 0..method.iterations {
        pairs.shuffle(&mut rng);
        let step = method.learning_rate / ((epoch + 1) as f64).sqrt();
        let mut violations = 0usize;
        for &(i, j) in &pairs {
            let margin: f64 = (0..d).map(|v| w[v] * (columns[v][i] - columns[v][j])).sum();
            if margin < 1.0 {
                violations += 1;
                for v in 0..d {
                    w[v] += step * (columns[v][i] - columns[v][j]);
                }
            }
        }
        if violations == 0 {
            break;
        }
    }
    w
}

/// Mean pairwise hinge loss of a linear scorer.
pub fn pairwise_hinge_loss(columns: &[Vec<f64>], targets: &[f64], weights: &[f64]) -> f64 {
    let n = targets.len();
    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..n {
        for j in 0..n {
            if targets[i] > targets[j] {
                let margin: f64 = weights
                    .iter()
                    .enumerate()
                    .map(|(v, w)| w * (columns[v][i] - columns[v][j]))
                    .sum();
                total += (1.0 - margin).max(0.0);
                count += 1;
            }
        }
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}

/// Fits the stage-1 aggregator on training data.
pub fn fit_aggregator(
    matrix: &FeatureMatrix,
    targets: &[f64],
    method: &AggregationMethod,
) -> Result<Aggregator> {
    method.validate()?;
    if targets.len() != matrix.num_rows() {
        return Err(Error::Config(
            "targets not aligned with feature rows".into(),
        ));
    }
    let mut families = Vec::new();
    for (name, members) in group_columns(matrix.columns()) {
        let labels: Vec<String> = members
            .iter()
            .map(|&j| matrix.columns()[j].clone())
            .collect();
        let cols: Vec<Vec<f64>> = members.iter().map(|&j| matrix.column(j)).collect();
        if members.len() == 1 {
            families.push((name, FamilyCombiner::PassThrough(labels[0].clone())));
            continue;
        }
        let variances: Vec<f64> = cols.iter().map(|c| variance(c)).collect();
        if variances.iter().all(|&v| v == 0.0) {
            log::warn!(
                "family {name} has zero variance on the training fold; passing {} through",
                labels[0]
            );
            families.push((name, FamilyCombiner::PassThrough(labels[0].clone())));
            continue;
        }
        let combiner = match method.kind {
            AggregationKind::BestVariantByPearson => {
                let mut best: Option<(f64, usize)> = None;
                for (v, col) in cols.iter().enumerate() {
                    if let Ok(r) = pearson(col, targets) {
                        if best.is_none_or(|(b, _)| r.abs() > b) {
                            best = Some((r.abs(), v));
                        }
                    }
                }
                match best {
                    Some((_, v)) => FamilyCombiner::PassThrough(labels[v].clone()),
                    None => {
                        log::warn!("family {name}: no variant correlates with the target; passing {} through", labels[0]);
                        FamilyCombiner::PassThrough(labels[0].clone())
                    }
                }
            }
            AggregationKind::PairwiseRankLinear => {
                let mean: Vec<f64> = cols
                    .iter()
                    .map(|c| c.iter().sum::<f64>() / c.len() as f64)
                    .collect();
                let scale: Vec<f64> = variances
                    .iter()
                    .map(|&v| if v > 0.0 { v.sqrt() } else { 1.0 })
                    .collect();
                let z: Vec<Vec<f64>> = cols
                    .iter()
                    .enumerate()
                    .map(|(v, c)| c.iter().map(|x| (x - mean[v]) / scale[v]).collect())
                    .collect();
                let weights = train_pairwise_weights(&z, targets, method);
                FamilyCombiner::Linear {
                    columns: labels,
                    mean,
                    scale,
                    weights,
                }
            }
        };
        families.push((name, combiner));
    }
    Ok(Aggregator { families })
}

/// Stage 1 on a training fold: one column per family.
pub fn aggregate_variants(
    matrix: &FeatureMatrix,
    targets: &[f64],
    method: &AggregationMethod,
) -> Result<FeatureMatrix> {
    fit_aggregator(matrix, targets, method)?.apply(matrix)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum MethodKind {
    #[serde(rename = "one_stage_full_LM")]
    OneStageFullLm,
    #[serde(rename = "two_stage_full_LM")]
    TwoStageFullLm,
    #[serde(rename = "two_stage_AIC_FS")]
    TwoStageAicFs,
}

impl MethodKind {
    pub const ALL: [MethodKind; 3] = [
        MethodKind::OneStageFullLm,
        MethodKind::TwoStageFullLm,
        MethodKind::TwoStageAicFs,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MethodKind::OneStageFullLm => "one_stage_full_LM",
            MethodKind::TwoStageFullLm => "two_stage_full_LM",
            MethodKind::TwoStageAicFs => "two_stage_AIC_FS",
        }
    }
}

impl fmt::Display for MethodKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MethodKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MethodKind::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

/// A roster entry ready to train.
#[derive(Debug, Clone)]
pub struct Method {
    pub kind: MethodKind,
    pub aggregation: AggregationMethod,
    pub strategy: SelectionStrategy,
}

/// A fitted roster method.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub aggregator: Option<Aggregator>,
    pub model: LinearModel,
    pub trace: Option<Vec<SelectionStep>>,
    /// Columns dropped before fitting because they were constant or collinear
    /// on the training data.
    pub dropped: Vec<String>,
}

fn design_for(matrix: &FeatureMatrix, targets: &[f64]) -> Result<DesignMatrix> {
    DesignMatrix::new(
        matrix.columns().to_vec(),
        (0..matrix.num_columns())
            .map(|j| matrix.column(j))
            .collect(),
        targets.to_vec(),
    )
}

impl Method {
    pub fn fit(&self, features: &FeatureMatrix, targets: &[f64]) -> Result<TrainedModel> {
        let (aggregator, stage2) = match self.kind {
            MethodKind::OneStageFullLm => (None, features.clone()),
            _ => {
                let agg = fit_aggregator(features, targets, &self.aggregation)?;
                let m = agg.apply(features)?;
                (Some(agg), m)
            }
        };
        let design = design_for(&stage2, targets)?;
        let all: Vec<usize> = (0..design.num_columns()).collect();
        let (kept, dropped) = independent_columns(&design, &all);
        let dropped = dropped
            .iter()
            .map(|&j| design.labels()[j].clone())
            .collect();
        let (model, trace) = match self.kind {
            MethodKind::TwoStageAicFs => {
                let (model, trace) = select(&design, &kept, &self.strategy)?;
                (model, Some(trace.steps))
            }
            _ => (fit_mle(&design, &kept)?, None),
        };
        Ok(TrainedModel {
            aggregator,
            model,
            trace,
            dropped,
        })
    }
}

impl TrainedModel {
    /// Raw feature-matrix columns needed at inference time.
    pub fn required_columns(&self) -> Vec<String> {
        match &self.aggregator {
            Some(a) => a.input_columns(&self.model.feature_labels),
            None => self.model.feature_labels.clone(),
        }
    }
}

impl TrainedPredictor for TrainedModel {
    fn predict(&self, features: &FeatureMatrix) -> Result<Vec<f64>> {
        let stage2 = match &self.aggregator {
            Some(a) => a.apply(features)?,
            None => features.clone(),
        };
        let idx = self
            .model
            .feature_labels
            .iter()
            .map(|l| {
                stage2
                    .column_index(l)
                    .ok_or_else(|| Error::MissingFeature(l.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(stage2
            .rows()
            .iter()
            .map(|row| {
                self.model.intercept
                    + self
                        .model
                        .beta
                        .iter()
                        .zip(&idx)
                        .map(|(b, &j)| b * row[j])
                        .sum::<f64>()
            })
            .collect())
    }

    fn selected_features(&self) -> Vec<String> {
        self.model.feature_labels.clone()
    }

    fn export(&self) -> Option<ModelExport> {
        Some(self.model.export())
    }

    fn trace(&self) -> Option<Vec<SelectionStep>> {
        self.trace.clone()
    }
}

impl PredictionMethod for Method {
    fn name(&self) -> String {
        self.kind.to_string()
    }

    fn train(
        &self,
        features: &FeatureMatrix,
        targets: &[f64],
    ) -> Result<Box<dyn TrainedPredictor>> {
        Ok(Box::new(self.fit(features, targets)?))
    }
}

/// Features a method can select from: raw columns for the one-stage model,
/// family groups otherwise.
pub fn selection_universe(kind: MethodKind, features: &FeatureMatrix) -> Vec<String> {
    match kind {
        MethodKind::OneStageFullLm => features.columns().to_vec(),
        _ => group_columns(features.columns())
            .into_iter()
            .map(|(g, _)| g)
            .collect(),
    }
}

/// Mean per-query wall-clock cost of each pipeline component, in seconds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComponentCosts {
    pub retrieval: f64,
    pub expansion: f64,
    pub variants: BTreeMap<String, f64>,
}

impl ComponentCosts {
    /// Cost of computing the given raw columns for one query: the base
    /// retrieval, the expansion when any query-feedback column is needed, and
    /// each column.
    pub fn cost_of(&self, columns: &[String]) -> f64 {
        let needs_expansion = columns.iter().any(|c| {
            c.parse::<FeatureVariantId>()
                .is_ok_and(|v| v.family.needs_expansion())
        });
        self.retrieval
            + if needs_expansion { self.expansion } else { 0.0 }
            + columns
                .iter()
                .map(|c| self.variants.get(c).copied().unwrap_or(0.0))
                .sum::<f64>()
    }
}

/// Times every component over all queries, keeping the fastest of `reps`
/// repetitions of each.
pub fn measure_component_costs(
    queries: &[Query],
    corpus: &Corpus,
    retrieval: &RetrievalConfig,
    predictors: &PredictorConfig,
    reps: usize,
) -> Result<ComponentCosts> {
    let variants = predictors.variants();
    let nq = queries.len().max(1) as f64;
    let mut best_retrieval = f64::INFINITY;
    let mut best_expansion = f64::INFINITY;
    let mut best_variants = vec![f64::INFINITY; variants.len()];
    for _ in 0..reps.max(1) {
        let (mut r, mut e) = (0.0, 0.0);
        let mut v_tot = vec![0.0; variants.len()];
        for q in queries {
            let t = Instant::now();
            let mut a = QueryArtifacts::retrieve(q, corpus, retrieval)?;
            r += t.elapsed().as_secs_f64();
            let t = Instant::now();
            a.expand(corpus, retrieval)?;
            e += t.elapsed().as_secs_f64();
            for (k, &v) in variants.iter().enumerate() {
                let t = Instant::now();
                std::hint::black_box(compute_variant(v, &a, corpus, retrieval, predictors)?);
                v_tot[k] += t.elapsed().as_secs_f64();
            }
        }
        best_retrieval = best_retrieval.min(r / nq);
        best_expansion = best_expansion.min(e / nq);
        for (b, v) in best_variants.iter_mut().zip(v_tot) {
            *b = b.min(v / nq);
        }
    }
    Ok(ComponentCosts {
        retrieval: best_retrieval,
        expansion: best_expansion,
        variants: variants
            .iter()
            .map(ToString::to_string)
            .zip(best_variants)
            .collect(),
    })
}

/// Key/value experiment description.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub corpus: PathBuf,
    pub corpus_format: DocFormat,
    pub queries: PathBuf,
    pub qrels: PathBuf,
    pub stopwords: Option<PathBuf>,
    pub retrieval: RetrievalConfig,
    pub depths: Vec<usize>,
    pub sw1_cap: f64,
    pub aggregation: AggregationMethod,
    pub strategy: SelectionStrategy,
    pub eval: EvalConfig,
    pub methods: Vec<MethodKind>,
    pub metrics: Vec<Metric>,
    /// Defaults to the retrieval depth.
    pub ndcg_cutoff: Option<usize>,
    pub timing_reps: usize,
    pub threads: Option<usize>,
}

impl ExperimentConfig {
    pub fn new(
        corpus: impl Into<PathBuf>,
        queries: impl Into<PathBuf>,
        qrels: impl Into<PathBuf>,
    ) -> Self {
        ExperimentConfig {
            corpus: corpus.into(),
            corpus_format: DocFormat::Tsv,
            queries: queries.into(),
            qrels: qrels.into(),
            stopwords: None,
            retrieval: RetrievalConfig::default(),
            depths: crate::predictors::DEFAULT_DEPTHS.to_vec(),
            sw1_cap: 10.0,
            aggregation: AggregationMethod::default(),
            strategy: SelectionStrategy::default(),
            eval: EvalConfig::default(),
            methods: MethodKind::ALL.to_vec(),
            metrics: vec![Metric::Ap, Metric::Ndcg],
            ndcg_cutoff: None,
            timing_reps: 3,
            threads: None,
        }
    }

    /// Parses `key = value` lines; `#` starts a comment. Relative paths are
    /// resolved against `base`.
    ///
    /// Keys: corpus, corpus_format, queries, qrels, stopwords, mu, k,
    /// fb_docs, fb_terms, rm_lambda, depths, sw1_cap, aggregation,
    /// agg_iterations, agg_learning_rate, agg_seed, strategy, p_threshold,
    /// start, trials, seed, alpha, correlation, methods, metrics,
    /// ndcg_cutoff, timing_reps, threads.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut kv: BTreeMap<String, (usize, String)> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(base, i + 1, "expected `key = value`"))?;
            kv.insert(k.trim().to_string(), (i + 1, v.trim().to_string()));
        }
        let path = |v: &str| {
            let p = PathBuf::from(v);
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        };
        let required = |key: &str| {
            kv.get(key)
                .map(|(_, v)| v.clone())
                .ok_or_else(|| Error::Config(format!("missing required key {key:?}")))
        };
        let mut cfg = ExperimentConfig::new(
            path(&required("corpus")?),
            path(&required("queries")?),
            path(&required("qrels")?),
        );
        fn num<T: FromStr>(key: &str, line: usize, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::Config(format!("line {line}: bad value {v:?} for {key}")))
        }
        fn list<T: FromStr>(key: &str, line: usize, v: &str) -> Result<Vec<T>> {
            v.split(',').map(|s| num(key, line, s.trim())).collect()
        }
        for (key, (line, v)) in &kv {
            let line = *line;
            match key.as_str() {
                "corpus" | "queries" | "qrels" => {}
                "corpus_format" => cfg.corpus_format = v.parse()?,
                "stopwords" => cfg.stopwords = Some(path(v)),
                "mu" => cfg.retrieval.mu = num(key, line, v)?,
                "k" => cfg.retrieval.k = num(key, line, v)?,
                "fb_docs" => cfg.retrieval.fb_docs = num(key, line, v)?,
                "fb_terms" => cfg.retrieval.fb_terms = num(key, line, v)?,
                "rm_lambda" => cfg.retrieval.rm_interpolation = num(key, line, v)?,
                "depths" => cfg.depths = list(key, line, v)?,
                "sw1_cap" => cfg.sw1_cap = num(key, line, v)?,
                "aggregation" => cfg.aggregation.kind = v.parse()?,
                "agg_iterations" => cfg.aggregation.iterations = num(key, line, v)?,
                "agg_learning_rate" => cfg.aggregation.learning_rate = num(key, line, v)?,
                "agg_seed" => cfg.aggregation.seed = num(key, line, v)?,
                "strategy" => cfg.strategy.kind = v.parse::<StrategyKind>()?,
                "p_threshold" => cfg.strategy.p_threshold = num(key, line, v)?,
                "start" => cfg.strategy.start = v.parse::<Start>()?,
                "trials" => cfg.eval.trials = num(key, line, v)?,
                "seed" => cfg.eval.seed = num(key, line, v)?,
                "alpha" => cfg.eval.alpha = num(key, line, v)?,
                "correlation" => cfg.eval.correlation = v.parse::<CorrelationChoice>()?,
                "methods" => cfg.methods = list(key, line, v)?,
                "metrics" => cfg.metrics = list(key, line, v)?,
                "ndcg_cutoff" => cfg.ndcg_cutoff = Some(num(key, line, v)?),
                "timing_reps" => cfg.timing_reps = num(key, line, v)?,
                "threads" => cfg.threads = Some(num(key, line, v)?),
                other => return Err(Error::Config(format!("line {line}: unknown key {other:?}"))),
            }
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn validate(&self) -> Result<()> {
        self.retrieval.validate()?;
        self.aggregation.validate()?;
        self.strategy.validate()?;
        self.eval.validate()?;
        if self.methods.is_empty() {
            return Err(Error::Config("method roster is empty".into()));
        }
        if self.metrics.is_empty() {
            return Err(Error::Config("no target metric".into()));
        }
        for p in [&self.corpus, &self.queries, &self.qrels]
            .into_iter()
            .chain(self.stopwords.as_ref())
        {
            if !p.exists() {
                return Err(Error::Config(format!("file not found: {}", p.display())));
            }
        }
        Ok(())
    }

    pub fn method(&self, kind: MethodKind) -> Method {
        Method {
            kind,
            aggregation: self.aggregation.clone(),
            strategy: self.strategy,
        }
    }
}

/// Cross-validates each roster method against one target vector.
pub fn evaluate_methods(
    features: &FeatureMatrix,
    targets: &[f64],
    metric: Metric,
    methods: &[Method],
    eval: &EvalConfig,
) -> Result<Vec<(MethodSummary, Vec<TrialResult>)>> {
    methods
        .iter()
        .map(|m| {
            let trials = cross_validate(features, targets, m, eval)?;
            let summary = summarize(
                &m.kind.to_string(),
                metric,
                &selection_universe(m.kind, features),
                &trials,
            );
            Ok((summary, trials))
        })
        .collect()
}

/// Ground-truth effectiveness per query.
#[derive(Debug, Clone, PartialEq)]
pub struct Targets {
    pub query_ids: Vec<String>,
    pub values: BTreeMap<Metric, Vec<f64>>,
}

impl Targets {
    pub fn write_csv<W: std::io::Write>(&self, out: &mut W) -> std::io::Result<()> {
        let metrics: Vec<&Metric> = self.values.keys().collect();
        write!(out, "qid")?;
        for m in &metrics {
            write!(out, ",{m}")?;
        }
        writeln!(out)?;
        for (i, q) in self.query_ids.iter().enumerate() {
            write!(out, "{q}")?;
            for m in &metrics {
                write!(out, ",{}", self.values[m][i])?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub report: EvalReport,
    pub features: FeatureMatrix,
    pub targets: Targets,
    pub trials: BTreeMap<(Metric, MethodKind), Vec<TrialResult>>,
    /// Each method refit on every query, per metric.
    pub final_models: BTreeMap<(Metric, MethodKind), TrainedModel>,
    pub costs: ComponentCosts,
}

fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// Runs the whole pipeline. When `out_dir` is given, every artifact is
/// written there (partial artifacts stay on disk if a later stage fails).
pub fn run_experiment(
    config: &ExperimentConfig,
    out_dir: Option<&Path>,
) -> Result<ExperimentOutput> {
    config.validate()?;
    with_threads(config.threads, || run_inner(config, out_dir))?
}

fn write_file(
    dir: Option<&Path>,
    name: &str,
    f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>,
) -> Result<()> {
    if let Some(dir) = dir {
        let mut buf = Vec::new();
        let path = dir.join(name);
        f(&mut buf).map_err(|e| Error::io(&path, e))?;
        fs::write(&path, buf).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

fn load_inputs(config: &ExperimentConfig) -> Result<(Corpus, Vec<Query>, Qrels, StopwordList)> {
    let corpus = ingest_documents(&config.corpus, config.corpus_format)?;
    let queries = ingest_queries(&config.queries)?;
    let qrels = ingest_qrels(&config.qrels)?;
    let stopwords = match &config.stopwords {
        Some(p) => ingest_stopwords(p)?,
        None => StopwordList::default(),
    };
    Ok((corpus, queries, qrels, stopwords))
}

/// Inputs, base runs, targets and the predictor matrix for an experiment.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub corpus: Corpus,
    /// Queries with at least one relevant document, in file order.
    pub queries: Vec<Query>,
    pub excluded: Vec<String>,
    pub predictors: PredictorConfig,
    pub runs: Vec<RankedList>,
    pub targets: Targets,
    pub features: FeatureMatrix,
}

/// Ingests, retrieves, computes targets and features. With `out_dir`,
/// writes `run.trec`, `targets.csv` and `features.csv` as each is ready.
pub fn prepare(config: &ExperimentConfig, out_dir: Option<&Path>) -> Result<Prepared> {
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let (corpus, queries, qrels, stopwords) =
        load_inputs(config).map_err(|e| e.at_stage("ingest"))?;
    let predictors = PredictorConfig {
        depths: config.depths.clone(),
        stopwords,
        sw1_cap: config.sw1_cap,
    };
    predictors.validate()?;

    let mut excluded = Vec::new();
    let kept: Vec<Query> = queries
        .into_iter()
        .filter(|q| {
            let ok = qrels.num_relevant(&q.id) > 0;
            if !ok {
                log::warn!("query {} has no relevant documents; excluded", q.id);
                excluded.push(q.id.clone());
            }
            ok
        })
        .collect();

    use rayon::prelude::*;
    let artifacts = kept
        .par_iter()
        .map(|q| QueryArtifacts::prepare(q, &corpus, &config.retrieval))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| e.at_stage("retrieval"))?;
    let runs: Vec<_> = artifacts.iter().map(|a| a.ranked.clone()).collect();
    write_file(out_dir, "run.trec", |b| {
        write_trec_run(b, &runs, &corpus, "stepqpp-lm")
    })?;

    let cutoff = config.ndcg_cutoff.unwrap_or(config.retrieval.k);
    let mut values = BTreeMap::new();
    for &metric in &config.metrics {
        let v = runs
            .iter()
            .map(|r| match metric {
                Metric::Ap => average_precision(r, &corpus, &qrels),
                Metric::Ndcg => ndcg(r, &corpus, &qrels, cutoff),
            })
            .collect::<Result<Vec<f64>>>()
            .map_err(|e| e.at_stage("targets"))?;
        values.insert(metric, v);
    }
    let targets = Targets {
        query_ids: kept.iter().map(|q| q.id.clone()).collect(),
        values,
    };
    write_file(out_dir, "targets.csv", |b| targets.write_csv(b))?;

    let features = matrix_from_artifacts(&artifacts, &corpus, &config.retrieval, &predictors)
        .map_err(|e| e.at_stage("features"))?;
    write_file(out_dir, "features.csv", |b| features.write_csv(b))?;

    Ok(Prepared {
        corpus,
        queries: kept,
        excluded,
        predictors,
        runs,
        targets,
        features,
    })
}

fn run_inner(config: &ExperimentConfig, out_dir: Option<&Path>) -> Result<ExperimentOutput> {
    let Prepared {
        corpus,
        queries: kept,
        excluded,
        predictors,
        runs: _,
        targets,
        features,
    } = prepare(config, out_dir)?;
    let costs = measure_component_costs(
        &kept,
        &corpus,
        &config.retrieval,
        &predictors,
        config.timing_reps,
    )
    .map_err(|e| e.at_stage("timing"))?;

    let methods: Vec<Method> = config.methods.iter().map(|&k| config.method(k)).collect();
    let mut summaries = Vec::new();
    let mut all_trials = BTreeMap::new();
    let mut final_models = BTreeMap::new();
    for (&metric, y) in &targets.values {
        let results = evaluate_methods(&features, y, metric, &methods, &config.eval)
            .map_err(|e| e.at_stage("evaluation"))?;
        for (method, (mut summary, trials)) in methods.iter().zip(results) {
            let fold_costs: Vec<f64> = trials
                .iter()
                .flat_map(|t| t.folds.iter().filter_map(|f| f.evaluated()))
                .map(|f| {
                    let columns = match method.kind {
                        MethodKind::OneStageFullLm => f.selected_features.clone(),
                        _ => expand_families(&f.selected_features, features.columns()),
                    };
                    costs.cost_of(&columns)
                })
                .collect();
            if !fold_costs.is_empty() {
                summary.mean_inference_seconds =
                    Some(fold_costs.iter().sum::<f64>() / fold_costs.len() as f64);
            }
            summaries.push(summary);
            all_trials.insert((metric, method.kind), trials);
            match method.fit(&features, y) {
                Ok(model) => {
                    final_models.insert((metric, method.kind), model);
                }
                Err(e) => log::warn!("{} on all queries ({metric}) failed: {e}", method.kind),
            }
        }
    }
    let report = EvalReport {
        trials: config.eval.trials,
        seed: config.eval.seed,
        significance: significance(&summaries, config.eval.alpha),
        methods: summaries,
        excluded_queries: excluded,
    };

    write_file(out_dir, "report.json", |b| {
        b.extend_from_slice(report.to_json().map_err(std::io::Error::other)?.as_bytes());
        Ok(())
    })?;
    write_file(out_dir, "report_correlation.csv", |b| {
        report.write_correlation_csv(b)
    })?;
    write_file(out_dir, "report_sparsity.csv", |b| {
        report.write_sparsity_csv(b)
    })?;
    write_file(out_dir, "report_selection_frequency.csv", |b| {
        report.write_frequency_csv(b)
    })?;
    write_file(out_dir, "report_significance.csv", |b| {
        report.write_significance_csv(b)
    })?;
    for ((metric, kind), model) in &final_models {
        let stem = format!("model_{}_{}", kind, metric.to_string().to_lowercase());
        write_file(out_dir, &format!("{stem}.json"), |b| {
            b.extend_from_slice(
                model
                    .model
                    .export()
                    .to_json()
                    .map_err(std::io::Error::other)?
                    .as_bytes(),
            );
            Ok(())
        })?;
        if let Some(trace) = &model.trace {
            write_file(out_dir, &format!("{stem}.trace.jsonl"), |b| {
                for step in trace {
                    serde_json::to_writer(&mut *b, step).map_err(std::io::Error::other)?;
                    b.push(b'\n');
                }
                Ok(())
            })?;
        }
    }
    Ok(ExperimentOutput {
        report,
        features,
        targets,
        trials: all_trials,
        final_models,
        costs,
    })
}

/// Raw columns belonging to the given family groups.
pub fn expand_families(families: &[String], columns: &[String]) -> Vec<String> {
    group_columns(columns)
        .into_iter()
        .filter(|(g, _)| families.contains(g))
        .flat_map(|(_, members)| members.into_iter().map(|j| columns[j].clone()))
        .collect()
}

/// Reads a target CSV (`qid,<name>[,<name>...]` with a header row) and
/// aligns the chosen column to `query_ids`. Without a column name the first
/// value column is used; names match case-insensitively.
pub fn read_targets(
    path: impl AsRef<Path>,
    query_ids: &[String],
    column: Option<&str>,
) -> Result<Vec<f64>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    let header: Vec<&str> = match lines.next() {
        Some((_, h)) => h.split(',').map(str::trim).collect(),
        None => return Err(Error::parse(path, 1, "missing header")),
    };
    let col = match column {
        None => 1,
        Some(name) => header
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::Config(format!("no column {name:?} in {}", path.display())))?,
    };
    if col == 0 || col >= header.len() {
        return Err(Error::parse(path, 1, "expected `qid,value` header"));
    }
    let mut map = HashMap::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != header.len() {
            return Err(Error::parse(
                path,
                i + 1,
                format!("expected {} fields", header.len()),
            ));
        }
        let v: f64 = fields[col]
            .parse()
            .map_err(|_| Error::parse(path, i + 1, format!("bad number {:?}", fields[col])))?;
        if map.insert(fields[0].to_string(), v).is_some() {
            return Err(Error::parse(
                path,
                i + 1,
                format!("duplicate query {:?}", fields[0]),
            ));
        }
    }
    query_ids
        .iter()
        .map(|q| {
            map.get(q).copied().ok_or_else(|| {
                Error::Config(format!("no target for query {q:?} in {}", path.display()))
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(cols: &[&str], rows: Vec<Vec<f64>>) -> FeatureMatrix {
        FeatureMatrix::new(
            (0..rows.len()).map(|i| i.to_string()).collect(),
            cols.iter().map(|c| c.to_string()).collect(),
            rows,
        )
        .unwrap()
    }

    #[test]
    fn grouping_by_family() {
        let cols: Vec<String> = ["WIG@50", "WIG@10", "NQC@10", "x"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let g = group_columns(&cols);
        assert_eq!(
            g,
            vec![
                ("WIG".into(), vec![1, 0]),
                ("NQC".into(), vec![2]),
                ("x".into(), vec![3])
            ]
        );
    }

    #[test]
    fn single_variant_is_identity() {
        let m = matrix(
            &["WIG@10", "NQC@10"],
            vec![vec![1.0, 2.0], vec![3.0, 1.0], vec![0.5, 0.2]],
        );
        let y = [0.1, 0.5, 0.3];
        for kind in [
            AggregationKind::PairwiseRankLinear,
            AggregationKind::BestVariantByPearson,
        ] {
            let method = AggregationMethod {
                kind,
                ..Default::default()
            };
            let out = aggregate_variants(&m, &y, &method).unwrap();
            assert_eq!(out.rows(), m.rows());
            assert_eq!(out.columns(), &["WIG".to_string(), "NQC".to_string()]);
        }
    }

    #[test]
    fn best_variant_picks_correlated_column() {
        let y: Vec<f64> = (0..20).map(|i| i as f64 * 0.1).collect();
        let rows: Vec<Vec<f64>> = (0..20)
            .map(|i| vec![((i * 7) % 5) as f64, 2.0 * y[i] + 1.0, ((i * 3) % 7) as f64])
            .collect();
        let m = matrix(&["UQC@10", "UQC@50", "UQC@100"], rows);
        let method = AggregationMethod {
            kind: AggregationKind::BestVariantByPearson,
            ..Default::default()
        };
        let out = aggregate_variants(&m, &y, &method).unwrap();
        assert_eq!(out.column(0), m.column(1));
    }

    #[test]
    fn pairwise_separable_case_reaches_zero_loss() {
        let y: Vec<f64> = (0..15).map(|i| i as f64).collect();
        let x = vec![y.iter().map(|v| (v - 7.0) / 4.3).collect::<Vec<f64>>()];
        let w = train_pairwise_weights(&x, &y, &AggregationMethod::default());
        assert_eq!(pairwise_hinge_loss(&x, &y, &w), 0.0);
    }

    #[test]
    fn config_parsing() {
        let text = "corpus = c.tsv\nqueries=q.tsv # comment\nqrels = r.txt\nmu = 500\ndepths = 5, 10\nmethods = two_stage_AIC_FS\nstrategy = forward-p\n";
        let c = ExperimentConfig::parse(text, Path::new("/data")).unwrap();
        assert_eq!(c.corpus, PathBuf::from("/data/c.tsv"));
        assert_eq!(c.retrieval.mu, 500.0);
        assert_eq!(c.depths, vec![5, 10]);
        assert_eq!(c.methods, vec![MethodKind::TwoStageAicFs]);
        assert_eq!(c.strategy.kind, StrategyKind::ForwardP);
        assert!(
            ExperimentConfig::parse("corpus=a\nqueries=b\nqrels=c\nbogus=1", Path::new("."))
                .is_err()
        );
        assert!(ExperimentConfig::parse("queries=b\nqrels=c", Path::new(".")).is_err());
    }

    #[test]
    fn cost_model_is_monotone() {
        let costs = ComponentCosts {
            retrieval: 1.0,
            expansion: 2.0,
            variants: [("WIG@10".to_string(), 0.5), ("QFDOC@10".to_string(), 0.25)]
                .into_iter()
                .collect(),
        };
        assert_eq!(costs.cost_of(&["WIG@10".into()]), 1.5);
        assert_eq!(costs.cost_of(&["WIG@10".into(), "QFDOC@10".into()]), 3.75);
    }
}
