//! Document collection, topics, relevance judgments and stopwords.
//!
//! The [`Corpus`] is an immutable in-memory inverted index. Terms are interned
//! to dense [`TermId`]s; every statistic the retrieval model and the predictors
//! need (collection frequency, document frequency, document lengths) is
//! computed once at build time.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub type TermId = u32;
pub type DocId = u32;

/// Lowercases and splits on every non-alphanumeric character.
///
/// No stemming, no stopping.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub internal_id: DocId,
    pub external_id: String,
    pub length: u64,
    /// Sorted by term id.
    term_freqs: Vec<(TermId, u32)>,
}

impl Document {
    pub fn term_freqs(&self) -> &[(TermId, u32)] {
        &self.term_freqs
    }

    pub fn tf(&self, term: TermId) -> u32 {
        self.term_freqs
            .binary_search_by_key(&term, |&(t, _)| t)
            .map(|i| self.term_freqs[i].1)
            .unwrap_or(0)
    }

    pub fn contains(&self, term: TermId) -> bool {
        self.tf(term) > 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DocFormat {
    /// `<DOC><DOCNO>id</DOCNO><TEXT>...</TEXT></DOC>` records.
    TrecText,
    /// One document per line: `id<TAB>text`.
    Tsv,
}

impl std::str::FromStr for DocFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "trectext" | "trec" => Ok(DocFormat::TrecText),
            "tsv" => Ok(DocFormat::Tsv),
            other => Err(Error::Config(format!("unknown document format {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    documents: Vec<Document>,
    vocabulary: Vec<String>,
    term_ids: HashMap<String, TermId>,
    postings: Vec<Vec<(DocId, u32)>>,
    collection_freq: Vec<u64>,
    doc_freq: Vec<u32>,
    total_tokens: u64,
    by_external: HashMap<String, DocId>,
}

impl Corpus {
    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn document(&self, id: DocId) -> &Document {
        &self.documents[id as usize]
    }

    pub fn num_documents(&self) -> usize {
        self.documents.len()
    }

    pub fn vocabulary(&self) -> &[String] {
        &self.vocabulary
    }

    pub fn term_id(&self, term: &str) -> Option<TermId> {
        self.term_ids.get(term).copied()
    }

    pub fn term(&self, id: TermId) -> &str {
        &self.vocabulary[id as usize]
    }

    pub fn postings(&self, term: TermId) -> &[(DocId, u32)] {
        &self.postings[term as usize]
    }

    pub fn collection_freq(&self, term: TermId) -> u64 {
        self.collection_freq[term as usize]
    }

    pub fn doc_freq(&self, term: TermId) -> u32 {
        self.doc_freq[term as usize]
    }

    pub fn total_tokens(&self) -> u64 {
        self.total_tokens
    }

    pub fn external_to_internal(&self, external_id: &str) -> Option<DocId> {
        self.by_external.get(external_id).copied()
    }

    /// Maximum-likelihood collection model p(t|C); zero for unseen terms.
    pub fn collection_prob(&self, term: &str) -> Result<f64> {
        if self.total_tokens == 0 {
            return Err(Error::EmptyCorpus);
        }
        Ok(self
            .term_id(term)
            .map(|t| self.collection_prob_id(t))
            .unwrap_or(0.0))
    }

    pub(crate) fn collection_prob_id(&self, term: TermId) -> f64 {
        self.collection_freq[term as usize] as f64 / self.total_tokens as f64
    }

    /// Collection probability used inside smoothed estimates: unseen terms get
    /// `1 / (2 * total_tokens)` so log-probabilities stay finite.
    pub fn smoothing_prob(&self, term: Option<TermId>) -> f64 {
        match term {
            Some(t) if self.collection_freq[t as usize] > 0 => self.collection_prob_id(t),
            _ => 1.0 / (2.0 * self.total_tokens as f64),
        }
    }
}

/// Accumulates documents in arrival order; internal ids follow that order.
#[derive(Debug, Default)]
pub struct CorpusBuilder {
    documents: Vec<Document>,
    vocabulary: Vec<String>,
    term_ids: HashMap<String, TermId>,
    by_external: HashMap<String, DocId>,
}

impl CorpusBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_document(&mut self, external_id: &str, text: &str) -> Result<DocId> {
        self.add_tokens(external_id, tokenize(text))
    }

    pub fn add_tokens<S: AsRef<str>>(
        &mut self,
        external_id: &str,
        tokens: impl IntoIterator<Item = S>,
    ) -> Result<DocId> {
        if self.by_external.contains_key(external_id) {
            return Err(Error::DuplicateDocument(external_id.to_string()));
        }
        let internal_id = self.documents.len() as DocId;
        let mut counts: BTreeMap<TermId, u32> = BTreeMap::new();
        let mut length = 0u64;
        for token in tokens {
            let token = token.as_ref();
            let id = match self.term_ids.get(token) {
                Some(&id) => id,
                None => {
                    let id = self.vocabulary.len() as TermId;
                    self.vocabulary.push(token.to_string());
                    self.term_ids.insert(token.to_string(), id);
                    id
                }
            };
            *counts.entry(id).or_default() += 1;
            length += 1;
        }
        self.documents.push(Document {
            internal_id,
            external_id: external_id.to_string(),
            length,
            term_freqs: counts.into_iter().collect(),
        });
        self.by_external
            .insert(external_id.to_string(), internal_id);
        Ok(internal_id)
    }

    pub fn build(self) -> Corpus {
        let v = self.vocabulary.len();
        let mut postings = vec![Vec::new(); v];
        let mut collection_freq = vec![0u64; v];
        let mut total_tokens = 0u64;
        for doc in &self.documents {
            total_tokens += doc.length;
            for &(t, tf) in &doc.term_freqs {
                postings[t as usize].push((doc.internal_id, tf));
                collection_freq[t as usize] += u64::from(tf);
            }
        }
        let doc_freq = postings.iter().map(|p| p.len() as u32).collect();
        Corpus {
            documents: self.documents,
            vocabulary: self.vocabulary,
            term_ids: self.term_ids,
            postings,
            collection_freq,
            doc_freq,
            total_tokens,
            by_external: self.by_external,
        }
    }
}

pub fn ingest_documents(path: impl AsRef<Path>, format: DocFormat) -> Result<Corpus> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    match format {
        DocFormat::Tsv => parse_tsv(path, &text),
        DocFormat::TrecText => parse_trectext(path, &text),
    }
}

fn parse_tsv(path: &Path, text: &str) -> Result<Corpus> {
    let mut builder = CorpusBuilder::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (id, body) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(path, i + 1, "expected `id<TAB>text`"))?;
        let id = id.trim();
        if id.is_empty() {
            return Err(Error::parse(path, i + 1, "empty document id"));
        }
        builder.add_document(id, body)?;
    }
    Ok(builder.build())
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset].bytes().filter(|&b| b == b'\n').count() + 1
}

fn between<'a>(body: &'a str, open: &str, close: &str) -> Option<(usize, &'a str)> {
    let start = body.find(open)? + open.len();
    let end = body[start..].find(close)? + start;
    Some((start, &body[start..end]))
}

fn parse_trectext(path: &Path, text: &str) -> Result<Corpus> {
    let mut builder = CorpusBuilder::new();
    let mut cursor = 0;
    while let Some(rel) = text[cursor..].find("<DOC>") {
        let start = cursor + rel + "<DOC>".len();
        let end = text[start..]
            .find("</DOC>")
            .map(|e| start + e)
            .ok_or_else(|| Error::parse(path, line_of(text, start), "unterminated <DOC>"))?;
        let body = &text[start..end];
        let (_, docno) = between(body, "<DOCNO>", "</DOCNO>")
            .ok_or_else(|| Error::parse(path, line_of(text, start), "missing <DOCNO>"))?;
        let docno = docno.trim();
        if docno.is_empty() {
            return Err(Error::parse(path, line_of(text, start), "empty <DOCNO>"));
        }
        let mut content = String::new();
        let mut rest = body;
        while let Some((s, t)) = between(rest, "<TEXT>", "</TEXT>") {
            content.push_str(t);
            content.push(' ');
            rest = &rest[s + t.len() + "</TEXT>".len()..];
        }
        if rest.contains("<TEXT>") {
            return Err(Error::parse(
                path,
                line_of(text, start),
                "unterminated <TEXT>",
            ));
        }
        builder.add_document(docno, &content)?;
        cursor = end + "</DOC>".len();
    }
    Ok(builder.build())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Query {
    pub id: String,
    pub terms: Vec<String>,
}

impl Query {
    pub fn new(id: impl Into<String>, title: &str) -> Result<Self> {
        let id = id.into();
        let terms = tokenize(title);
        if terms.is_empty() {
            return Err(Error::EmptyQuery(id));
        }
        Ok(Query { id, terms })
    }
}

/// Reads `qid<TAB>title` lines.
pub fn ingest_queries(path: impl AsRef<Path>) -> Result<Vec<Query>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut seen = HashSet::new();
    let mut queries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (id, title) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(path, i + 1, "expected `qid<TAB>title`"))?;
        let id = id.trim();
        if !seen.insert(id.to_string()) {
            return Err(Error::parse(
                path,
                i + 1,
                format!("duplicate query id {id:?}"),
            ));
        }
        let query = Query::new(id, title).map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
        queries.push(query);
    }
    Ok(queries)
}

/// Graded judgments: query id -> external doc id -> grade.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Qrels {
    judgments: HashMap<String, HashMap<String, u32>>,
}

impl Qrels {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, query_id: &str, doc_id: &str, grade: u32) {
        self.judgments
            .entry(query_id.to_string())
            .or_default()
            .insert(doc_id.to_string(), grade);
    }

    /// Unjudged documents are grade 0.
    pub fn grade(&self, query_id: &str, doc_id: &str) -> u32 {
        self.judgments
            .get(query_id)
            .and_then(|m| m.get(doc_id))
            .copied()
            .unwrap_or(0)
    }

    pub fn judgments(&self, query_id: &str) -> Option<&HashMap<String, u32>> {
        self.judgments.get(query_id)
    }

    pub fn num_relevant(&self, query_id: &str) -> usize {
        self.judgments(query_id)
            .map(|m| m.values().filter(|&&g| g > 0).count())
            .unwrap_or(0)
    }
}

/// Reads trec_eval style `qid 0 docid rel` lines.
pub fn ingest_qrels(path: impl AsRef<Path>) -> Result<Qrels> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_qrels(path, &text)
}

pub(crate) fn parse_qrels(path: &Path, text: &str) -> Result<Qrels> {
    let mut qrels = Qrels::new();
    for (i, line) in text.lines().enumerate() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() != 4 {
            return Err(Error::parse(
                path,
                i + 1,
                format!("expected 4 fields, found {}", fields.len()),
            ));
        }
        let grade: i64 = fields[3]
            .parse()
            .map_err(|_| Error::parse(path, i + 1, format!("non-integer grade {:?}", fields[3])))?;
        // trec_eval treats negative grades as non-relevant
        let grade = u32::try_from(grade.max(0)).unwrap_or(u32::MAX);
        qrels.insert(fields[0], fields[2], grade);
    }
    Ok(qrels)
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StopwordList {
    words: HashSet<String>,
}

impl StopwordList {
    /// Entries go through [`tokenize`], same as document text.
    pub fn from_words<S: AsRef<str>>(words: impl IntoIterator<Item = S>) -> Self {
        StopwordList {
            words: words
                .into_iter()
                .flat_map(|w| tokenize(w.as_ref()))
                .collect(),
        }
    }

    pub fn contains(&self, term: &str) -> bool {
        self.words.contains(term)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Resolves the list against a corpus vocabulary.
    pub fn term_ids(&self, corpus: &Corpus) -> HashSet<TermId> {
        self.words
            .iter()
            .filter_map(|w| corpus.term_id(w))
            .collect()
    }
}

/// One stopword per line (whitespace-separated words are all accepted).
pub fn ingest_stopwords(path: impl AsRef<Path>) -> Result<StopwordList> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(StopwordList::from_words(text.split_whitespace()))
}
