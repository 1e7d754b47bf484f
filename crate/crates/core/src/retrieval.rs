//! Query-likelihood retrieval with Dirichlet smoothing, plus relevance-model
//! (RM1/RM3) pseudo-relevance feedback.
//!
//! A document's score for a weighted query is
//! `sum_t w(t) * ln((tf(t,d) + mu * p(t|C)) / (|d| + mu))`. Terms that never
//! occur in the collection use `p(t|C) = 1 / (2 * total_tokens)`.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use crate::corpus::{Corpus, DocId, Document, Query, TermId};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalConfig {
    /// Dirichlet prior mass.
    pub mu: f64,
    /// Ranking depth.
    pub k: usize,
    pub fb_docs: usize,
    pub fb_terms: usize,
    /// Weight of the original query in the RM3 interpolation.
    pub rm_interpolation: f64,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig {
            mu: 1000.0,
            k: 1000,
            fb_docs: 10,
            fb_terms: 20,
            rm_interpolation: 0.5,
        }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(Error::Config(format!(
                "mu must be positive, got {}",
                self.mu
            )));
        }
        if self.k == 0 || self.fb_docs == 0 || self.fb_terms == 0 {
            return Err(Error::Config(
                "k, fb_docs and fb_terms must be at least 1".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.rm_interpolation) {
            return Err(Error::Config(format!(
                "rm_interpolation must lie in [0, 1], got {}",
                self.rm_interpolation
            )));
        }
        Ok(())
    }
}

/// A weighted bag of query terms, resolved against a corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryModel {
    terms: Vec<(Option<TermId>, f64)>,
}

impl QueryModel {
    /// Weights are raw term frequencies in the query.
    pub fn from_query(query: &Query, corpus: &Corpus) -> Result<Self> {
        if query.terms.is_empty() {
            return Err(Error::EmptyQuery(query.id.clone()));
        }
        let mut counts: BTreeMap<&str, f64> = BTreeMap::new();
        for t in &query.terms {
            *counts.entry(t.as_str()).or_default() += 1.0;
        }
        Ok(QueryModel {
            terms: counts
                .into_iter()
                .map(|(t, c)| (corpus.term_id(t), c))
                .collect(),
        })
    }

    pub fn from_expanded(expanded: &ExpandedQuery, corpus: &Corpus) -> Result<Self> {
        if expanded.weights.is_empty() {
            return Err(Error::EmptyQuery("<expanded>".into()));
        }
        Ok(QueryModel {
            terms: expanded
                .weights
                .iter()
                .map(|(t, &w)| (corpus.term_id(t), w))
                .collect(),
        })
    }

    pub fn terms(&self) -> &[(Option<TermId>, f64)] {
        &self.terms
    }

    /// Total weight; the token count for a plain query.
    pub fn mass(&self) -> f64 {
        self.terms.iter().map(|&(_, w)| w).sum()
    }
}

/// Smoothed in-document probability p(t|d).
pub fn smoothed_prob(doc: &Document, term: Option<TermId>, corpus: &Corpus, mu: f64) -> f64 {
    let tf = term.map(|t| doc.tf(t)).unwrap_or(0) as f64;
    (tf + mu * corpus.smoothing_prob(term)) / (doc.length as f64 + mu)
}

pub fn score_document(model: &QueryModel, doc: &Document, corpus: &Corpus, mu: f64) -> Result<f64> {
    if corpus.total_tokens() == 0 {
        return Err(Error::EmptyCorpus);
    }
    if model.terms.is_empty() {
        return Err(Error::EmptyQuery("<model>".into()));
    }
    Ok(model
        .terms
        .iter()
        .map(|&(t, w)| w * smoothed_prob(doc, t, corpus, mu).ln())
        .sum())
}

/// Log-likelihood of the query against the whole collection taken as a single
/// document. With Dirichlet smoothing this collapses to `sum_t w(t) ln p(t|C)`.
pub fn collection_score(model: &QueryModel, corpus: &Corpus, mu: f64) -> Result<f64> {
    if corpus.total_tokens() == 0 {
        return Err(Error::EmptyCorpus);
    }
    let total = corpus.total_tokens() as f64;
    Ok(model
        .terms
        .iter()
        .map(|&(t, w)| {
            let cf = t.map(|t| corpus.collection_freq(t)).unwrap_or(0) as f64;
            let p = corpus.smoothing_prob(t);
            w * ((cf + mu * p) / (total + mu)).ln()
        })
        .sum())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    pub query_id: String,
    /// Sorted by descending score, ties by ascending document id.
    pub entries: Vec<(DocId, f64)>,
}

impl RankedList {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn top(&self, n: usize) -> &[(DocId, f64)] {
        &self.entries[..n.min(self.entries.len())]
    }

    pub fn doc_ids(&self) -> impl Iterator<Item = DocId> + '_ {
        self.entries.iter().map(|&(d, _)| d)
    }
}

/// Descending score, then ascending document id.
pub(crate) fn ranking_order(a: &(DocId, f64), b: &(DocId, f64)) -> std::cmp::Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

/// Scores every document in the corpus and keeps the top `k`.
pub fn rank(
    query_id: &str,
    model: &QueryModel,
    corpus: &Corpus,
    config: &RetrievalConfig,
) -> Result<RankedList> {
    config.validate()?;
    if corpus.num_documents() == 0 || corpus.total_tokens() == 0 {
        return Err(Error::EmptyCorpus);
    }
    let mut entries = corpus
        .documents()
        .iter()
        .map(|d| Ok((d.internal_id, score_document(model, d, corpus, config.mu)?)))
        .collect::<Result<Vec<_>>>()?;
    entries.sort_by(ranking_order);
    entries.truncate(config.k);
    Ok(RankedList {
        query_id: query_id.to_string(),
        entries,
    })
}

pub fn retrieve(query: &Query, corpus: &Corpus, config: &RetrievalConfig) -> Result<RankedList> {
    let model = QueryModel::from_query(query, corpus)?;
    rank(&query.id, &model, corpus, config)
}

pub fn retrieve_expanded(
    query_id: &str,
    expanded: &ExpandedQuery,
    corpus: &Corpus,
    config: &RetrievalConfig,
) -> Result<RankedList> {
    let model = QueryModel::from_expanded(expanded, corpus)?;
    rank(query_id, &model, corpus, config)
}

/// A probability distribution over terms.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpandedQuery {
    pub weights: BTreeMap<String, f64>,
}

impl ExpandedQuery {
    /// Each query token gets weight `1/|q|`.
    pub fn uniform(query: &Query) -> Self {
        let mass = query.terms.len() as f64;
        let mut weights = BTreeMap::new();
        for t in &query.terms {
            *weights.entry(t.clone()).or_insert(0.0) += 1.0 / mass;
        }
        ExpandedQuery { weights }
    }

    pub fn total(&self) -> f64 {
        self.weights.values().sum()
    }
}

/// Which terms a relevance model is estimated over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RelevanceSupport {
    /// Every term in the collection vocabulary.
    Vocabulary,
    /// Only terms occurring in at least one feedback document; renormalized.
    FeedbackTerms,
}

/// Softmax over the log query-likelihoods of the given entries.
pub(crate) fn document_weights(entries: &[(DocId, f64)]) -> Vec<f64> {
    let max = entries
        .iter()
        .map(|&(_, s)| s)
        .fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = entries.iter().map(|&(_, s)| (s - max).exp()).collect();
    let z: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / z).collect()
}

/// RM1: `p(t|R) ∝ sum_d w(d) p(t|d)` over the feedback documents, with
/// Dirichlet-smoothed `p(t|d)` and softmax document weights.
///
/// Returned as (term, probability) pairs sorted by term id, summing to one.
pub fn relevance_model(
    feedback: &[(DocId, f64)],
    corpus: &Corpus,
    mu: f64,
    support: RelevanceSupport,
) -> Result<Vec<(TermId, f64)>> {
    if feedback.is_empty() {
        return Err(Error::EmptyRanking);
    }
    let weights = document_weights(feedback);
    // smoothing mass shared by every term: sum_d w(d) mu / (|d| + mu)
    let mut background = 0.0;
    let mut in_doc: HashMap<TermId, f64> = HashMap::new();
    for (&(d, _), &w) in feedback.iter().zip(&weights) {
        let doc = corpus.document(d);
        let denom = doc.length as f64 + mu;
        background += w * mu / denom;
        for &(t, tf) in doc.term_freqs() {
            *in_doc.entry(t).or_default() += w * tf as f64 / denom;
        }
    }
    let mut model: Vec<(TermId, f64)> = match support {
        RelevanceSupport::Vocabulary => (0..corpus.vocabulary().len() as TermId)
            .map(|t| {
                let p = background * corpus.smoothing_prob(Some(t))
                    + in_doc.get(&t).copied().unwrap_or(0.0);
                (t, p)
            })
            .collect(),
        RelevanceSupport::FeedbackTerms => {
            let mut m: Vec<(TermId, f64)> = in_doc
                .into_iter()
                .map(|(t, p)| (t, p + background * corpus.smoothing_prob(Some(t))))
                .collect();
            m.sort_by_key(|&(t, _)| t);
            m
        }
    };
    let z: f64 = model.iter().map(|&(_, p)| p).sum();
    if z.is_nan() || z <= 0.0 {
        return Err(Error::Degenerate("relevance model has no mass".into()));
    }
    for (_, p) in &mut model {
        *p /= z;
    }
    Ok(model)
}

/// RM3 expansion: RM1 over the top `fb_docs` documents, truncated to the
/// `fb_terms` heaviest terms, interpolated with the original query at weight
/// `rm_interpolation`.
pub fn expand_query(
    query: &Query,
    ranked: &RankedList,
    corpus: &Corpus,
    config: &RetrievalConfig,
) -> Result<ExpandedQuery> {
    config.validate()?;
    if ranked.is_empty() {
        return Err(Error::EmptyRanking);
    }
    if query.terms.is_empty() {
        return Err(Error::EmptyQuery(query.id.clone()));
    }
    let feedback = ranked.top(config.fb_docs);
    let mut rm = relevance_model(feedback, corpus, config.mu, RelevanceSupport::Vocabulary)?;
    rm.sort_by(|a, b| {
        b.1.total_cmp(&a.1)
            .then_with(|| corpus.term(a.0).cmp(corpus.term(b.0)))
    });
    rm.truncate(config.fb_terms);
    let kept: f64 = rm.iter().map(|&(_, p)| p).sum();

    let lambda = config.rm_interpolation;
    let mut weights: BTreeMap<String, f64> = BTreeMap::new();
    for (t, w) in ExpandedQuery::uniform(query).weights {
        *weights.entry(t).or_default() += lambda * w;
    }
    for (t, p) in rm {
        *weights.entry(corpus.term(t).to_string()).or_default() += (1.0 - lambda) * p / kept;
    }
    weights.retain(|_, w| *w > 0.0);
    let z: f64 = weights.values().sum();
    for w in weights.values_mut() {
        *w /= z;
    }
    Ok(ExpandedQuery { weights })
}

/// Writes `qid Q0 docid rank score tag` lines, scores with six decimals.
pub fn write_trec_run<W: Write>(
    out: &mut W,
    lists: &[RankedList],
    corpus: &Corpus,
    tag: &str,
) -> std::io::Result<()> {
    for list in lists {
        for (rank, &(d, score)) in list.entries.iter().enumerate() {
            writeln!(
                out,
                "{} Q0 {} {} {:.6} {}",
                list.query_id,
                corpus.document(d).external_id,
                rank + 1,
                score,
                tag
            )?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::CorpusBuilder;

    fn corpus() -> Corpus {
        let mut b = CorpusBuilder::new();
        b.add_document("d1", "dog runs").unwrap();
        b.add_document("d2", "cat sleeps").unwrap();
        b.build()
    }

    fn cfg(mu: f64) -> RetrievalConfig {
        RetrievalConfig {
            mu,
            ..Default::default()
        }
    }

    #[test]
    fn dirichlet_hand_case() {
        // d1 = "x runs", cf(runs) = 2 of 4 tokens
        let mut b = CorpusBuilder::new();
        b.add_document("d1", "x runs").unwrap();
        b.add_document("d2", "runs y").unwrap();
        let c = b.build();
        let q = Query::new("q", "runs").unwrap();
        let m = QueryModel::from_query(&q, &c).unwrap();
        let s = score_document(&m, c.document(0), &c, 2.0).unwrap();
        assert!((s - 0.5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn unseen_term_uses_floor() {
        let c = corpus();
        let q = Query::new("q", "zebra").unwrap();
        let m = QueryModel::from_query(&q, &c).unwrap();
        let d = c.document(0);
        let floor = 1.0 / (2.0 * c.total_tokens() as f64);
        let expected = (1000.0 * floor / (d.length as f64 + 1000.0)).ln();
        assert_eq!(score_document(&m, d, &c, 1000.0).unwrap(), expected);
    }

    #[test]
    fn matching_document_ranks_first() {
        let c = corpus();
        let q = Query::new("q", "dog").unwrap();
        let r = retrieve(&q, &c, &cfg(1000.0)).unwrap();
        assert_eq!(r.entries[0].0, 0);
        assert_eq!(r.len(), 2);
        let r1 = retrieve(
            &q,
            &c,
            &RetrievalConfig {
                k: 1,
                ..cfg(1000.0)
            },
        )
        .unwrap();
        assert_eq!(r1.len(), 1);
        assert_eq!(retrieve(&q, &c, &cfg(1000.0)).unwrap(), r);
    }

    #[test]
    fn ties_break_by_internal_id() {
        let mut b = CorpusBuilder::new();
        for i in 0..5 {
            b.add_document(&format!("d{i}"), "same words here").unwrap();
        }
        let c = b.build();
        let r = retrieve(&Query::new("q", "words").unwrap(), &c, &cfg(10.0)).unwrap();
        assert_eq!(r.doc_ids().collect::<Vec<_>>(), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn rm3_endpoints() {
        let c = corpus();
        let q = Query::new("q", "dog").unwrap();
        let r = retrieve(&q, &c, &cfg(1000.0)).unwrap();
        let lambda1 = RetrievalConfig {
            rm_interpolation: 1.0,
            ..cfg(1000.0)
        };
        assert_eq!(
            expand_query(&q, &r, &c, &lambda1).unwrap(),
            ExpandedQuery::uniform(&q)
        );

        // single feedback doc, no smoothing influence to speak of: the model
        // is the document's smoothed distribution over the vocabulary
        let lambda0 = RetrievalConfig {
            rm_interpolation: 0.0,
            fb_docs: 1,
            fb_terms: 2,
            mu: 2.0,
            ..Default::default()
        };
        let e = expand_query(&q, &r, &c, &lambda0).unwrap();
        // p(t|d1) for dog, runs = (1 + 2*0.25)/(2+2) = 0.375 each; others 0.125
        assert_eq!(e.weights.len(), 2);
        assert!((e.weights["dog"] - 0.5).abs() < 1e-12);
        assert!((e.weights["runs"] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn expansion_is_a_distribution() {
        let c = corpus();
        let q = Query::new("q", "dog dog cat").unwrap();
        let r = retrieve(&q, &c, &cfg(1000.0)).unwrap();
        let e = expand_query(&q, &r, &c, &cfg(1000.0)).unwrap();
        assert!((e.total() - 1.0).abs() < 1e-9);
        assert!(e.weights.len() <= 20 + 3);
    }

    #[test]
    fn empty_feedback_is_an_error() {
        let c = corpus();
        let q = Query::new("q", "dog").unwrap();
        let empty = RankedList {
            query_id: "q".into(),
            entries: vec![],
        };
        assert!(matches!(
            expand_query(&q, &empty, &c, &cfg(1000.0)),
            Err(Error::EmptyRanking)
        ));
    }

    #[test]
    fn trec_run_format() {
        let c = corpus();
        let q = Query::new("301", "dog").unwrap();
        let r = retrieve(
            &q,
            &c,
            &RetrievalConfig {
                k: 1,
                ..cfg(1000.0)
            },
        )
        .unwrap();
        let mut out = Vec::new();
        write_trec_run(&mut out, std::slice::from_ref(&r), &c, "lm").unwrap();
        let line = String::from_utf8(out).unwrap();
        assert_eq!(line, format!("301 Q0 d1 1 {:.6} lm\n", r.entries[0].1));
    }
}
