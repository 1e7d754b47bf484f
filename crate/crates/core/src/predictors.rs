//! Post-retrieval query performance predictors and the per-query feature matrix.
//!
//! Eight families are computed at every configured feedback depth `n`. The
//! three query-feedback families (QFDOC, QFTERM, QFJSD) look only at the top
//! `qf_cut(n) = min(50, n)` documents, so their values are constant for
//! `n >= 50`.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Query, StopwordList, TermId};
use crate::error::{Error, Result};
use crate::retrieval::{
    collection_score, expand_query, relevance_model, retrieve, retrieve_expanded, ExpandedQuery,
    QueryModel, RankedList, RelevanceSupport, RetrievalConfig,
};

pub const DEFAULT_DEPTHS: [usize; 6] = [10, 50, 100, 200, 500, 1000];

pub fn qf_cut(n: usize) -> usize {
    n.min(50)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Family {
    #[serde(rename = "QFDOC")]
    QfDoc,
    #[serde(rename = "QFTERM")]
    QfTerm,
    #[serde(rename = "QFJSD")]
    QfJsd,
    #[serde(rename = "CLARITY")]
    Clarity,
    #[serde(rename = "WIG")]
    Wig,
    #[serde(rename = "NQC")]
    Nqc,
    #[serde(rename = "UQC")]
    Uqc,
    #[serde(rename = "SW1")]
    Sw1,
}

impl Family {
    pub const ALL: [Family; 8] = [
        Family::QfDoc,
        Family::QfTerm,
        Family::QfJsd,
        Family::Clarity,
        Family::Wig,
        Family::Nqc,
        Family::Uqc,
        Family::Sw1,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::QfDoc => "QFDOC",
            Family::QfTerm => "QFTERM",
            Family::QfJsd => "QFJSD",
            Family::Clarity => "CLARITY",
            Family::Wig => "WIG",
            Family::Nqc => "NQC",
            Family::Uqc => "UQC",
            Family::Sw1 => "SW1",
        }
    }

    /// Whether the family needs the expanded query and its ranking.
    pub fn needs_expansion(self) -> bool {
        matches!(self, Family::QfDoc | Family::QfTerm | Family::QfJsd)
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown predictor family {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FeatureVariantId {
    pub family: Family,
    pub depth: usize,
}

impl fmt::Display for FeatureVariantId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.family, self.depth)
    }
}

impl FromStr for FeatureVariantId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (family, depth) = s
            .split_once('@')
            .ok_or_else(|| Error::Config(format!("expected FAMILY@DEPTH, got {s:?}")))?;
        let depth = depth
            .parse()
            .map_err(|_| Error::Config(format!("bad depth in {s:?}")))?;
        Ok(FeatureVariantId {
            family: family.parse()?,
            depth,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictorConfig {
    pub depths: Vec<usize>,
    pub stopwords: StopwordList,
    /// Upper bound on a document's stop/non-stop ratio.
    pub sw1_cap: f64,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        PredictorConfig {
            depths: DEFAULT_DEPTHS.to_vec(),
            stopwords: StopwordList::default(),
            sw1_cap: 10.0,
        }
    }
}

impl PredictorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depths.is_empty() || self.depths[0] == 0 {
            return Err(Error::Config(
                "depths must be non-empty and positive".into(),
            ));
        }
        if self.depths.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("depths must be strictly increasing".into()));
        }
        if self.sw1_cap.is_nan() || self.sw1_cap <= 0.0 {
            return Err(Error::Config("sw1_cap must be positive".into()));
        }
        Ok(())
    }

    pub fn variants(&self) -> Vec<FeatureVariantId> {
        Family::ALL
            .into_iter()
            .flat_map(|family| {
                self.depths
                    .iter()
                    .map(move |&depth| FeatureVariantId { family, depth })
            })
            .collect()
    }
}

fn non_empty(list: &RankedList) -> Result<()> {
    if list.is_empty() {
        Err(Error::EmptyRanking)
    } else {
        Ok(())
    }
}

/// Share of documents common to the two top-`qf_cut(n)` prefixes.
///
/// When either list is shorter than the cut, the shorter length is the
/// denominator.
pub fn qf_doc(orig: &RankedList, expanded: &RankedList, n: usize) -> Result<f64> {
    non_empty(orig)?;
    non_empty(expanded)?;
    let a = orig.top(qf_cut(n));
    let b = expanded.top(qf_cut(n));
    let denom = a.len().min(b.len());
    let set: HashSet<_> = a.iter().map(|&(d, _)| d).collect();
    let common = b.iter().filter(|(d, _)| set.contains(d)).count();
    Ok(common.min(denom) as f64 / denom as f64)
}

/// Share of the expanded query's terms that occur in the top-`qf_cut(n)`
/// documents of the original ranking.
pub fn qf_term(
    orig: &RankedList,
    expanded: &ExpandedQuery,
    corpus: &Corpus,
    n: usize,
) -> Result<f64> {
    non_empty(orig)?;
    if expanded.weights.is_empty() {
        return Err(Error::EmptyQuery("<expanded>".into()));
    }
    let docs: Vec<_> = orig
        .top(qf_cut(n))
        .iter()
        .map(|&(d, _)| corpus.document(d))
        .collect();
    let covered = expanded
        .weights
        .keys()
        .filter(|t| {
            corpus
                .term_id(t)
                .is_some_and(|id| docs.iter().any(|d| d.contains(id)))
        })
        .count();
    Ok(covered as f64 / expanded.weights.len() as f64)
}

fn unigram_counts(list: &RankedList, corpus: &Corpus, cut: usize) -> HashMap<TermId, u64> {
    let mut counts = HashMap::new();
    for &(d, _) in list.top(cut) {
        for &(t, tf) in corpus.document(d).term_freqs() {
            *counts.entry(t).or_default() += u64::from(tf);
        }
    }
    counts
}

/// Jensen-Shannon divergence (base 2) between maximum-likelihood unigram
/// models of the two top-`qf_cut(n)` prefixes.
pub fn qf_jsd(orig: &RankedList, expanded: &RankedList, corpus: &Corpus, n: usize) -> Result<f64> {
    non_empty(orig)?;
    non_empty(expanded)?;
    let cut = qf_cut(n);
    let p = unigram_counts(orig, corpus, cut);
    let q = unigram_counts(expanded, corpus, cut);
    let zp: u64 = p.values().sum();
    let zq: u64 = q.values().sum();
    if zp == 0 || zq == 0 {
        return Err(Error::Degenerate("top documents contain no tokens".into()));
    }
    let mut terms: Vec<TermId> = p
        .keys()
        .chain(q.keys())
        .copied()
        .collect::<HashSet<_>>()
        .into_iter()
        .collect();
    terms.sort_unstable();
    let pv: Vec<f64> = terms
        .iter()
        .map(|t| p.get(t).copied().unwrap_or(0) as f64 / zp as f64)
        .collect();
    let qv: Vec<f64> = terms
        .iter()
        .map(|t| q.get(t).copied().unwrap_or(0) as f64 / zq as f64)
        .collect();
    Ok(jensen_shannon_bits(&pv, &qv).clamp(0.0, 1.0))
}

/// `KL(p || q)` in bits over aligned probability vectors; zero-mass entries
/// of `p` contribute nothing.
pub fn kl_divergence_bits(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| pi * (pi / qi).log2())
        .sum()
}

pub fn jensen_shannon_bits(p: &[f64], q: &[f64]) -> f64 {
    let m: Vec<f64> = p.iter().zip(q).map(|(a, b)| 0.5 * (a + b)).collect();
    0.5 * kl_divergence_bits(p, &m) + 0.5 * kl_divergence_bits(q, &m)
}

/// KL divergence (bits) from the collection model to the RM1 relevance model
/// of the top-`n` documents.
pub fn clarity(
    orig: &RankedList,
    corpus: &Corpus,
    config: &RetrievalConfig,
    n: usize,
) -> Result<f64> {
    non_empty(orig)?;
    let rm = relevance_model(
        orig.top(n),
        corpus,
        config.mu,
        RelevanceSupport::FeedbackTerms,
    )?;
    let value: f64 = rm
        .iter()
        .map(|&(t, p)| p * (p / corpus.smoothing_prob(Some(t))).log2())
        .sum();
    // Gibbs' inequality; tiny negatives are rounding
    Ok(value.max(0.0))
}

fn mean_score(orig: &RankedList, n: usize) -> f64 {
    let top = orig.top(n);
    top.iter().map(|&(_, s)| s).sum::<f64>() / top.len() as f64
}

/// Weighted information gain: `(mean top-n score - collection score) / sqrt(|q|)`.
pub fn wig(
    orig: &RankedList,
    query: &Query,
    corpus: &Corpus,
    config: &RetrievalConfig,
    n: usize,
) -> Result<f64> {
    non_empty(orig)?;
    let model = QueryModel::from_query(query, corpus)?;
    let score_c = collection_score(&model, corpus, config.mu)?;
    Ok((mean_score(orig, n) - score_c) / model.mass().sqrt())
}

/// Population standard deviation of the top-`n` scores.
pub fn uqc(orig: &RankedList, n: usize) -> Result<f64> {
    non_empty(orig)?;
    let top = orig.top(n);
    let mean = mean_score(orig, n);
    let var = top.iter().map(|&(_, s)| (s - mean).powi(2)).sum::<f64>() / top.len() as f64;
    Ok(var.sqrt())
}

/// [`uqc`] normalized by the magnitude of the collection score.
pub fn nqc(
    orig: &RankedList,
    query: &Query,
    corpus: &Corpus,
    config: &RetrievalConfig,
    n: usize,
) -> Result<f64> {
    let spread = uqc(orig, n)?;
    let model = QueryModel::from_query(query, corpus)?;
    let score_c = collection_score(&model, corpus, config.mu)?;
    if score_c == 0.0 {
        return Err(Error::Degenerate("collection score is zero".into()));
    }
    Ok(spread / score_c.abs())
}

/// Mean over the top-`n` documents of the stopword / non-stopword token
/// ratio, each ratio capped at `sw1_cap`. Empty documents count as 0.
pub fn sw1(orig: &RankedList, corpus: &Corpus, config: &PredictorConfig, n: usize) -> Result<f64> {
    non_empty(orig)?;
    let stop = config.stopwords.term_ids(corpus);
    let top = orig.top(n);
    let total: f64 = top
        .iter()
        .map(|&(d, _)| {
            let doc = corpus.document(d);
            let stops: u64 = doc
                .term_freqs()
                .iter()
                .filter(|(t, _)| stop.contains(t))
                .map(|&(_, tf)| u64::from(tf))
                .sum();
            let content = doc.length - stops;
            match (stops, content) {
                (0, _) => 0.0,
                (_, 0) => config.sw1_cap,
                (s, c) => (s as f64 / c as f64).min(config.sw1_cap),
            }
        })
        .sum();
    Ok(total / top.len() as f64)
}

/// Everything a predictor needs about one query: the original ranking and,
/// when requested, the RM3 expansion and its ranking.
#[derive(Debug, Clone)]
pub struct QueryArtifacts<'q> {
    pub query: &'q Query,
    pub ranked: RankedList,
    pub expansion: Option<(ExpandedQuery, RankedList)>,
}

impl<'q> QueryArtifacts<'q> {
    pub fn retrieve(query: &'q Query, corpus: &Corpus, config: &RetrievalConfig) -> Result<Self> {
        Ok(QueryArtifacts {
            query,
            ranked: retrieve(query, corpus, config)?,
            expansion: None,
        })
    }

    pub fn expand(&mut self, corpus: &Corpus, config: &RetrievalConfig) -> Result<()> {
        let expanded = expand_query(self.query, &self.ranked, corpus, config)?;
        let ranked = retrieve_expanded(&self.query.id, &expanded, corpus, config)?;
        self.expansion = Some((expanded, ranked));
        Ok(())
    }

    pub fn prepare(query: &'q Query, corpus: &Corpus, config: &RetrievalConfig) -> Result<Self> {
        let mut a = Self::retrieve(query, corpus, config)?;
        a.expand(corpus, config)?;
        Ok(a)
    }

    fn expansion(&self) -> Result<&(ExpandedQuery, RankedList)> {
        self.expansion.as_ref().ok_or_else(|| {
            Error::Config("query-feedback predictor requested without expansion".into())
        })
    }
}

pub fn compute_variant(
    variant: FeatureVariantId,
    artifacts: &QueryArtifacts<'_>,
    corpus: &Corpus,
    retrieval: &RetrievalConfig,
    predictors: &PredictorConfig,
) -> Result<f64> {
    let n = variant.depth;
    let orig = &artifacts.ranked;
    let value = match variant.family {
        Family::QfDoc => qf_doc(orig, &artifacts.expansion()?.1, n)?,
        Family::QfTerm => qf_term(orig, &artifacts.expansion()?.0, corpus, n)?,
        Family::QfJsd => qf_jsd(orig, &artifacts.expansion()?.1, corpus, n)?,
        Family::Clarity => clarity(orig, corpus, retrieval, n)?,
        Family::Wig => wig(orig, artifacts.query, corpus, retrieval, n)?,
        Family::Nqc => nqc(orig, artifacts.query, corpus, retrieval, n)?,
        Family::Uqc => uqc(orig, n)?,
        Family::Sw1 => sw1(orig, corpus, predictors, n)?,
    };
    if !value.is_finite() {
        return Err(Error::NonFinite(variant.to_string()));
    }
    Ok(value)
}

/// Queries × predictor columns, dense and finite.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    query_ids: Vec<String>,
    columns: Vec<String>,
    rows: Vec<Vec<f64>>,
}

impl FeatureMatrix {
    pub fn new(query_ids: Vec<String>, columns: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.len() != query_ids.len() {
            return Err(Error::Config(format!(
                "{} rows but {} query ids",
                rows.len(),
                query_ids.len()
            )));
        }
        for (q, row) in query_ids.iter().zip(&rows) {
            if row.len() != columns.len() {
                return Err(Error::Config(format!(
                    "row {q} has {} values for {} columns",
                    row.len(),
                    columns.len()
                )));
            }
            if let Some(j) = row.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("row {q}, column {}", columns[j])));
            }
        }
        Ok(FeatureMatrix {
            query_ids,
            columns,
            rows,
        })
    }

    pub fn query_ids(&self) -> &[String] {
        &self.query_ids
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn num_columns(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[j]).collect()
    }

    pub fn column_index(&self, label: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == label)
    }

    pub fn select_rows(&self, indices: &[usize]) -> FeatureMatrix {
        FeatureMatrix {
            query_ids: indices.iter().map(|&i| self.query_ids[i].clone()).collect(),
            columns: self.columns.clone(),
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
        }
    }

    pub fn select_columns(&self, indices: &[usize]) -> FeatureMatrix {
        FeatureMatrix {
            query_ids: self.query_ids.clone(),
            columns: indices.iter().map(|&j| self.columns[j].clone()).collect(),
            rows: self
                .rows
                .iter()
                .map(|r| indices.iter().map(|&j| r[j]).collect())
                .collect(),
        }
    }

    /// Label -> value map for one row.
    pub fn row_map(&self, i: usize) -> HashMap<&str, f64> {
        self.columns
            .iter()
            .map(String::as_str)
            .zip(self.rows[i].iter().copied())
            .collect()
    }

    /// `qid,<col>,...` header; values with nine significant digits.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        write!(out, "qid")?;
        for c in &self.columns {
            write!(out, ",{c}")?;
        }
        writeln!(out)?;
        for (q, row) in self.query_ids.iter().zip(&self.rows) {
            write!(out, "{q}")?;
            for v in row {
                write!(out, ",{}", format_sig9(*v))?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R, origin: &str) -> Result<Self> {
        let mut lines = input.lines().enumerate();
        let header = match lines.next() {
            Some((_, line)) => line.map_err(|e| Error::io(origin, e))?,
            None => return Err(Error::parse(origin, 1, "missing header")),
        };
        let mut fields = header.split(',').map(str::trim);
        if fields.next() != Some("qid") {
            return Err(Error::parse(origin, 1, "header must start with `qid`"));
        }
        let columns: Vec<String> = fields.map(str::to_string).collect();
        let mut ids = Vec::new();
        let mut rows = Vec::new();
        for (i, line) in lines {
            let line = line.map_err(|e| Error::io(origin, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split(',').map(str::trim);
            let id = fields.next().unwrap_or_default().to_string();
            let row = fields
                .map(|v| {
                    v.parse::<f64>()
                        .map_err(|_| Error::parse(origin, i + 1, format!("bad number {v:?}")))
                })
                .collect::<Result<Vec<_>>>()?;
            if row.len() != columns.len() {
                return Err(Error::parse(
                    origin,
                    i + 1,
                    format!("expected {} values", columns.len()),
                ));
            }
            ids.push(id);
            rows.push(row);
        }
        FeatureMatrix::new(ids, columns, rows)
    }
}

pub(crate) fn format_sig9(v: f64) -> String {
    format!("{v:.8e}")
}

fn check_configs(retrieval: &RetrievalConfig, predictors: &PredictorConfig) -> Result<()> {
    retrieval.validate()?;
    predictors.validate()?;
    let max_depth = *predictors.depths.last().expect("validated non-empty");
    if retrieval.k < max_depth {
        return Err(Error::Config(format!(
            "retrieval depth {} is below the largest feedback depth {max_depth}",
            retrieval.k
        )));
    }
    Ok(())
}

/// Retrieves, expands and computes every family at every depth for each
/// query. Rows follow the order of `queries`.
pub fn build_matrix(
    queries: &[Query],
    corpus: &Corpus,
    retrieval: &RetrievalConfig,
    predictors: &PredictorConfig,
) -> Result<FeatureMatrix> {
    check_configs(retrieval, predictors)?;
    let artifacts = queries
        .par_iter()
        .map(|q| {
            QueryArtifacts::prepare(q, corpus, retrieval).map_err(|e| Error::Cell {
                query: q.id.clone(),
                column: "<retrieval>".into(),
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    matrix_from_artifacts(&artifacts, corpus, retrieval, predictors)
}

/// Computes every variant from already retrieved and expanded queries.
pub fn matrix_from_artifacts(
    artifacts: &[QueryArtifacts<'_>],
    corpus: &Corpus,
    retrieval: &RetrievalConfig,
    predictors: &PredictorConfig,
) -> Result<FeatureMatrix> {
    check_configs(retrieval, predictors)?;
    let variants = predictors.variants();
    let rows = artifacts
        .par_iter()
        .map(|a| {
            variants
                .iter()
                .map(|&v| {
                    compute_variant(v, a, corpus, retrieval, predictors).map_err(|e| Error::Cell {
                        query: a.query.id.clone(),
                        column: v.to_string(),
                        source: Box::new(e),
                    })
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    FeatureMatrix::new(
        artifacts.iter().map(|a| a.query.id.clone()).collect(),
        variants.iter().map(ToString::to_string).collect(),
        rows,
    )
}
