//! Ground-truth effectiveness, correlation measures, the repeated two-fold
//! cross-validation protocol and paired significance testing.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Qrels};
use crate::error::{Error, Result};
use crate::predictors::FeatureMatrix;
use crate::regression::{two_sided_t_p_value, ModelExport};
use crate::retrieval::RankedList;
use crate::stepwise::SelectionStep;

/// Relevance grades of a ranking, in rank order (unjudged = 0).
pub fn judged_grades(ranked: &RankedList, corpus: &Corpus, qrels: &Qrels) -> Vec<u32> {
    ranked
        .doc_ids()
        .map(|d| qrels.grade(&ranked.query_id, &corpus.document(d).external_id))
        .collect()
}

/// Precision at each relevant rank, summed and divided by the number of
/// relevant documents (grade > 0) for the query.
pub fn average_precision_from_grades(grades: &[u32], total_relevant: usize) -> Result<f64> {
    if total_relevant == 0 {
        return Err(Error::NoRelevant("<grades>".into()));
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, &g) in grades.iter().enumerate() {
        if g > 0 {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    Ok(sum / total_relevant as f64)
}

pub fn average_precision(ranked: &RankedList, corpus: &Corpus, qrels: &Qrels) -> Result<f64> {
    let total = qrels.num_relevant(&ranked.query_id);
    average_precision_from_grades(&judged_grades(ranked, corpus, qrels), total)
        .map_err(|_| Error::NoRelevant(ranked.query_id.clone()))
}

fn dcg(grades: impl Iterator<Item = u32>) -> f64 {
    grades
        .enumerate()
        .map(|(i, g)| (2f64.powi(g as i32) - 1.0) / ((i + 2) as f64).log2())
        .sum()
}

/// NDCG with gain `2^g - 1` and discount `log2(rank + 1)`. The ideal ranking
/// orders every judged grade of the query.
pub fn ndcg_from_grades(grades: &[u32], judged: &[u32], cutoff: usize) -> Result<f64> {
    let mut ideal = judged.to_vec();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg = dcg(ideal.into_iter().take(cutoff));
    if idcg <= 0.0 {
        return Err(Error::NoRelevant("<grades>".into()));
    }
    Ok(dcg(grades.iter().copied().take(cutoff)) / idcg)
}

pub fn ndcg(ranked: &RankedList, corpus: &Corpus, qrels: &Qrels, cutoff: usize) -> Result<f64> {
    let judged: Vec<u32> = qrels
        .judgments(&ranked.query_id)
        .map(|m| m.values().copied().collect())
        .unwrap_or_default();
    ndcg_from_grades(&judged_grades(ranked, corpus, qrels), &judged, cutoff)
        .map_err(|_| Error::NoRelevant(ranked.query_id.clone()))
}

fn check_pair(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::Config(format!(
            "lengths differ: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 3 {
        return Err(Error::Degenerate(format!(
            "correlation needs at least 3 points, got {}",
            x.len()
        )));
    }
    Ok(())
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Degenerate("zero variance".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// 1-based ranks; ties share the mean of the ranks they span.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    pearson(&average_ranks(x), &average_ranks(y))
}

/// Two-sided paired t-test on `a - b`. All-zero differences give 1.0; a
/// constant non-zero difference gives 0.0.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Config("paired samples differ in length".into()));
    }
    if a.len() < 2 {
        return Err(Error::Degenerate(
            "paired t-test needs at least 2 pairs".into(),
        ));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    if d.iter().all(|&v| v == 0.0) {
        return Ok(1.0);
    }
    if var == 0.0 {
        return Ok(0.0);
    }
    let t = mean / (var / n).sqrt();
    Ok(two_sided_t_p_value(t, n - 1.0))
}

/// Rejects hypothesis `i` iff `p_i < alpha / m`.
pub fn bonferroni(p_values: &[f64], m: usize, alpha: f64) -> Vec<bool> {
    let level = alpha / m.max(1) as f64;
    p_values.iter().map(|&p| p < level).collect()
}

/// Percentage of opportunities in which each feature was selected:
/// `100 * selected / opportunities`.
pub fn selection_frequency<'a>(
    universe: &[String],
    selections: impl IntoIterator<Item = &'a [String]>,
    opportunities: usize,
) -> BTreeMap<String, f64> {
    let mut counts: BTreeMap<String, usize> = universe.iter().map(|f| (f.clone(), 0)).collect();
    for selected in selections {
        for f in selected {
            *counts.entry(f.clone()).or_default() += 1;
        }
    }
    counts
        .into_iter()
        .map(|(f, c)| {
            (
                f,
                if opportunities == 0 {
                    0.0
                } else {
                    100.0 * c as f64 / opportunities as f64
                },
            )
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Ap,
    Ndcg,
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ap" => Ok(Metric::Ap),
            "ndcg" => Ok(Metric::Ndcg),
            other => Err(Error::Config(format!("unknown metric {other:?}"))),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Ap => "AP",
            Metric::Ndcg => "NDCG",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorrelationChoice {
    Pearson,
    Spearman,
    Both,
}

impl FromStr for CorrelationChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pearson" => Ok(CorrelationChoice::Pearson),
            "spearman" => Ok(CorrelationChoice::Spearman),
            "both" => Ok(CorrelationChoice::Both),
            other => Err(Error::Config(format!("unknown correlation {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub trials: usize,
    pub seed: u64,
    pub correlation: CorrelationChoice,
    pub alpha: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            trials: 30,
            seed: 42,
            correlation: CorrelationChoice::Both,
            alpha: 0.05,
        }
    }
}

impl EvalConfig {
    pub const FOLDS: usize = 2;

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// SplitMix64 finalizer applied to `master + (trial + 1) * golden gamma`.
pub fn trial_seed(master: u64, trial: usize) -> u64 {
    let mut z = master.wrapping_add((trial as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Shuffles row indices and cuts them in two; the first fold takes the
/// extra row when the count is odd.
pub fn split_folds(n: usize, seed: u64) -> [Vec<usize>; 2] {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let second = idx.split_off(n.div_ceil(2));
    [idx, second]
}

/// A model produced by [`PredictionMethod::train`].
pub trait TrainedPredictor: Send + Sync {
    fn predict(&self, features: &FeatureMatrix) -> Result<Vec<f64>>;

    /// Input-level features (families or raw columns) the model needs at
    /// inference time.
    fn selected_features(&self) -> Vec<String>;

    fn export(&self) -> Option<ModelExport> {
        None
    }

    fn trace(&self) -> Option<Vec<SelectionStep>> {
        None
    }
}

/// A trainable performance predictor. `train` sees the training fold only.
pub trait PredictionMethod: Send + Sync {
    fn name(&self) -> String;

    fn train(&self, features: &FeatureMatrix, targets: &[f64])
        -> Result<Box<dyn TrainedPredictor>>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub test_queries: Vec<String>,
    pub selected_features: Vec<String>,
    pub model: Option<ModelExport>,
    pub predictions: Vec<f64>,
    pub pearson: Option<f64>,
    pub spearman: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum FoldOutcome {
    Evaluated(FoldResult),
    Failed { fold: usize, reason: String },
}

impl FoldOutcome {
    pub fn evaluated(&self) -> Option<&FoldResult> {
        match self {
            FoldOutcome::Evaluated(r) => Some(r),
            FoldOutcome::Failed { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial: usize,
    pub seed: u64,
    pub folds: Vec<FoldOutcome>,
}

impl TrialResult {
    pub fn flagged(&self) -> bool {
        self.folds.iter().any(|f| f.evaluated().is_none())
    }

    fn mean_of(&self, pick: impl Fn(&FoldResult) -> Option<f64>) -> Option<f64> {
        let vals: Vec<f64> = self
            .folds
            .iter()
            .filter_map(|f| f.evaluated().and_then(&pick))
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }

    pub fn mean_pearson(&self) -> Option<f64> {
        self.mean_of(|f| f.pearson)
    }

    pub fn mean_spearman(&self) -> Option<f64> {
        self.mean_of(|f| f.spearman)
    }
}

fn evaluate_fold(
    method: &dyn PredictionMethod,
    features: &FeatureMatrix,
    targets: &[f64],
    train_idx: &[usize],
    test_idx: &[usize],
    fold: usize,
    choice: CorrelationChoice,
) -> FoldOutcome {
    let train_x = features.select_rows(train_idx);
    let train_y: Vec<f64> = train_idx.iter().map(|&i| targets[i]).collect();
    let model = match method.train(&train_x, &train_y) {
        Ok(m) => m,
        Err(e) => {
            return FoldOutcome::Failed {
                fold,
                reason: format!("training failed: {e}"),
            }
        }
    };
    let test_x = features.select_rows(test_idx);
    let test_y: Vec<f64> = test_idx.iter().map(|&i| targets[i]).collect();
    let predictions = match model.predict(&test_x) {
        Ok(p) => p,
        Err(e) => {
            return FoldOutcome::Failed {
                fold,
                reason: format!("prediction failed: {e}"),
            }
        }
    };
    let mut notes = Vec::new();
    let mut corr = |name: &str, f: fn(&[f64], &[f64]) -> Result<f64>, wanted: bool| {
        if !wanted {
            return None;
        }
        match f(&predictions, &test_y) {
            Ok(v) => Some(v),
            Err(e) => {
                notes.push(format!("{name} undefined: {e}"));
                None
            }
        }
    };
    let r = corr("pearson", pearson, choice != CorrelationChoice::Spearman);
    let rho = corr("spearman", spearman, choice != CorrelationChoice::Pearson);
    FoldOutcome::Evaluated(FoldResult {
        fold,
        test_queries: test_x.query_ids().to_vec(),
        selected_features: model.selected_features(),
        model: model.export(),
        predictions,
        pearson: r,
        spearman: rho,
        notes,
    })
}

/// Repeated two-fold cross-validation. Each trial reshuffles the queries with
/// its own derived seed; each half trains on itself and is scored on the
/// other half.
pub fn cross_validate(
    features: &FeatureMatrix,
    targets: &[f64],
    method: &dyn PredictionMethod,
    config: &EvalConfig,
) -> Result<Vec<TrialResult>> {
    config.validate()?;
    let n = features.num_rows();
    if targets.len() != n {
        return Err(Error::Config(format!(
            "{} targets for {n} queries",
            targets.len()
        )));
    }
    if n < 4 {
        return Err(Error::Degenerate(format!(
            "cross-validation needs at least 4 queries, got {n}"
        )));
    }
    if let Some(i) = targets.iter().position(|t| !t.is_finite()) {
        return Err(Error::NonFinite(format!(
            "target of query {}",
            features.query_ids()[i]
        )));
    }
    let trials = (0..config.trials)
        .into_par_iter()
        .map(|t| {
            let seed = trial_seed(config.seed, t);
            let [a, b] = split_folds(n, seed);
            let folds = vec![
                evaluate_fold(method, features, targets, &a, &b, 0, config.correlation),
                evaluate_fold(method, features, targets, &b, &a, 1, config.correlation),
            ];
            for f in &folds {
                if let FoldOutcome::Failed { fold, reason } = f {
                    log::warn!("{}: trial {t} fold {fold} flagged: {reason}", method.name());
                }
            }
            TrialResult {
                trial: t,
                seed,
                folds,
            }
        })
        .collect();
    Ok(trials)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub metric: Metric,
    pub fold_evaluations: usize,
    pub failed_folds: usize,
    /// Mean over all evaluated folds.
    pub mean_pearson: Option<f64>,
    pub mean_spearman: Option<f64>,
    /// Mean over trials of the per-trial fold means.
    pub trial_mean_pearson: Option<f64>,
    pub trial_mean_spearman: Option<f64>,
    pub per_trial_pearson: Vec<Option<f64>>,
    pub per_trial_spearman: Vec<Option<f64>>,
    pub avg_selected_features: f64,
    pub selection_frequency: BTreeMap<String, f64>,
    pub mean_inference_seconds: Option<f64>,
}

fn mean_some(v: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let vals: Vec<f64> = v.flatten().collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

/// Aggregates trial results. `universe` lists the features a model could
/// select; selection frequencies use `2 * trials` opportunities.
pub fn summarize(
    method: &str,
    metric: Metric,
    universe: &[String],
    trials: &[TrialResult],
) -> MethodSummary {
    let folds: Vec<&FoldResult> = trials
        .iter()
        .flat_map(|t| t.folds.iter().filter_map(FoldOutcome::evaluated))
        .collect();
    let total = trials.iter().map(|t| t.folds.len()).sum::<usize>();
    let avg_selected = if folds.is_empty() {
        0.0
    } else {
        folds
            .iter()
            .map(|f| f.selected_features.len())
            .sum::<usize>() as f64
            / folds.len() as f64
    };
    MethodSummary {
        method: method.to_string(),
        metric,
        fold_evaluations: folds.len(),
        failed_folds: total - folds.len(),
        mean_pearson: mean_some(folds.iter().map(|f| f.pearson)),
        mean_spearman: mean_some(folds.iter().map(|f| f.spearman)),
        trial_mean_pearson: mean_some(trials.iter().map(TrialResult::mean_pearson)),
        trial_mean_spearman: mean_some(trials.iter().map(TrialResult::mean_spearman)),
        per_trial_pearson: trials.iter().map(TrialResult::mean_pearson).collect(),
        per_trial_spearman: trials.iter().map(TrialResult::mean_spearman).collect(),
        avg_selected_features: avg_selected,
        selection_frequency: selection_frequency(
            universe,
            folds.iter().map(|f| f.selected_features.as_slice()),
            total,
        ),
        mean_inference_seconds: None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificanceEntry {
    pub metric: Metric,
    pub correlation: String,
    pub method: String,
    pub baseline: String,
    pub mean_difference: f64,
    pub p_value: f64,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub trials: usize,
    pub seed: u64,
    pub methods: Vec<MethodSummary>,
    pub significance: Vec<SignificanceEntry>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub excluded_queries: Vec<String>,
}

/// Pairwise paired t-tests over per-trial correlations, Bonferroni-corrected
/// within each (metric, correlation) table.
pub fn significance(methods: &[MethodSummary], alpha: f64) -> Vec<SignificanceEntry> {
    let mut out = Vec::new();
    let mut metrics: Vec<Metric> = methods.iter().map(|m| m.metric).collect();
    metrics.sort();
    metrics.dedup();
    for metric in metrics {
        let group: Vec<&MethodSummary> = methods.iter().filter(|m| m.metric == metric).collect();
        for (corr, pick) in [
            (
                "pearson",
                (|m: &MethodSummary| m.per_trial_pearson.clone())
                    as fn(&MethodSummary) -> Vec<Option<f64>>,
            ),
            ("spearman", |m: &MethodSummary| m.per_trial_spearman.clone()),
        ] {
            let mut entries = Vec::new();
            for i in 0..group.len() {
                for j in i + 1..group.len() {
                    let (a, b) = (pick(group[i]), pick(group[j]));
                    let (xa, xb): (Vec<f64>, Vec<f64>) = a
                        .iter()
                        .zip(&b)
                        .filter_map(|(x, y)| Some(((*x)?, (*y)?)))
                        .unzip();
                    let Ok(p) = paired_t_test(&xb, &xa) else {
                        continue;
                    };
                    let diff =
                        xb.iter().zip(&xa).map(|(x, y)| x - y).sum::<f64>() / xa.len() as f64;
                    entries.push(SignificanceEntry {
                        metric,
                        correlation: corr.to_string(),
                        method: group[j].method.clone(),
                        baseline: group[i].method.clone(),
                        mean_difference: diff,
                        p_value: p,
                        significant: false,
                    });
                }
            }
            let ps: Vec<f64> = entries.iter().map(|e| e.p_value).collect();
            for (e, sig) in entries.iter_mut().zip(bonferroni(&ps, ps.len(), alpha)) {
                e.significant = sig;
            }
            out.extend(entries);
        }
    }
    out
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl EvalReport {
    /// Correlation table: one row per method and metric.
    pub fn write_correlation_csv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(
            out,
            "method,metric,r,rho,r_trial_mean,rho_trial_mean,fold_evaluations,failed_folds"
        )?;
        for m in &self.methods {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                m.method,
                m.metric,
                opt(m.mean_pearson),
                opt(m.mean_spearman),
                opt(m.trial_mean_pearson),
                opt(m.trial_mean_spearman),
                m.fold_evaluations,
                m.failed_folds
            )?;
        }
        Ok(())
    }

    /// Sparsity and cost table.
    pub fn write_sparsity_csv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "method,metric,avg_features,mean_inference_seconds")?;
        for m in &self.methods {
            writeln!(
                out,
                "{},{},{},{}",
                m.method,
                m.metric,
                m.avg_selected_features,
                opt(m.mean_inference_seconds)
            )?;
        }
        Ok(())
    }

    pub fn write_frequency_csv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "method,metric,feature,percentage")?;
        for m in &self.methods {
            for (f, pct) in &m.selection_frequency {
                writeln!(out, "{},{},{},{}", m.method, m.metric, f, pct)?;
            }
        }
        Ok(())
    }

    pub fn write_significance_csv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(
            out,
            "metric,correlation,method,baseline,mean_difference,p_value,significant"
        )?;
        for e in &self.significance {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                e.metric,
                e.correlation,
                e.method,
                e.baseline,
                e.mean_difference,
                e.p_value,
                e.significant
            )?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Copy with wall-clock fields cleared, for byte-level comparisons.
    pub fn without_timing(&self) -> EvalReport {
        let mut r = self.clone();
        for m in &mut r.methods {
            m.mean_inference_seconds = None;
        }
        r
    }
}
