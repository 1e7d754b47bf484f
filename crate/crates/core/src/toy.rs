//! Seeded synthetic test collection.
//!
//! Documents mix stopwords, a Zipf-distributed background vocabulary and,
//! for on-topic documents, topic words. Topics differ in how many relevant
//! documents they have, how strongly those documents use the topic words and
//! how many off-topic distractors borrow them, so retrieval quality varies
//! from query to query.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zipf};

use crate::error::{Error, Result};

const STOPWORDS: [&str; 30] = [
    "the", "of", "and", "a", "to", "in", "is", "that", "for", "it", "as", "was", "with", "be",
    "by", "on", "not", "he", "this", "are", "or", "his", "from", "at", "which", "but", "have",
    "an", "had", "they",
];

const SYLLABLES: [&str; 20] = [
    "ka", "lo", "mi", "ne", "su", "ta", "vo", "ri", "pe", "do", "gu", "ha", "zi", "bo", "fe", "ju",
    "ny", "xa", "we", "qu",
];

#[derive(Debug, Clone, PartialEq)]
pub struct ToyConfig {
    pub num_docs: usize,
    pub num_topics: usize,
    pub background_vocab: usize,
    pub words_per_topic: usize,
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            num_docs: 1500,
            num_topics: 100,
            background_vocab: 3000,
            words_per_topic: 8,
            seed: 20240611,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyCollection {
    pub documents: Vec<(String, String)>,
    pub queries: Vec<(String, String)>,
    /// `(query, document, grade)`
    pub qrels: Vec<(String, String, u32)>,
    pub stopwords: Vec<String>,
}

fn word(index: usize, prefix: &str) -> String {
    let mut w = prefix.to_string();
    let mut i = index;
    loop {
        w.push_str(SYLLABLES[i % SYLLABLES.len()]);
        i /= SYLLABLES.len();
        if i == 0 {
            break;
        }
    }
    w
}

struct TopicPlan {
    words: Vec<String>,
    strength: f64,
    relevant: usize,
    distractors: usize,
}

pub fn generate(config: &ToyConfig) -> Result<ToyCollection> {
    if config.num_topics == 0
        || config.num_docs < config.num_topics * 2
        || config.words_per_topic < 4
    {
        return Err(Error::Config(
            "toy collection too small for the requested topics".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let zipf = Zipf::new(config.background_vocab as f64, 1.05)
        .map_err(|e| Error::Config(e.to_string()))?;
    let background: Vec<String> = (0..config.background_vocab).map(|i| word(i, "b")).collect();

    let mut topics: Vec<TopicPlan> = Vec::with_capacity(config.num_topics);
    for t in 0..config.num_topics {
        let mut words: Vec<String> = (0..config.words_per_topic)
            .map(|i| word(t * config.words_per_topic + i, "t"))
            .collect();
        if t > 0 {
            // borrow words from earlier topics
            for slot in 0..rng.random_range(0..=3) {
                let other = rng.random_range(0..t);
                let borrowed =
                    topics[other].words[rng.random_range(0..config.words_per_topic)].clone();
                words[config.words_per_topic - 1 - slot] = borrowed;
            }
        }
        topics.push(TopicPlan {
            words,
            strength: rng.random_range(0.01..0.1),
            relevant: rng.random_range(3..=12),
            distractors: rng.random_range(0..=60),
        });
    }

    let mut documents = Vec::with_capacity(config.num_docs);
    let mut qrels = Vec::new();
    let mut topic_of: Vec<Option<(usize, f64)>> = vec![None; config.num_docs];
    let mut next = 0;
    for (t, plan) in topics.iter().enumerate() {
        for _ in 0..plan.relevant {
            if next >= config.num_docs {
                break;
            }
            let s = plan.strength * rng.random_range(0.3..1.7);
            topic_of[next] = Some((t, s));
            next += 1;
        }
    }

    for (d, assignment) in topic_of.iter().enumerate() {
        let id = format!("D{d:05}");
        let len = rng.random_range(60..=320);
        let distractor = if assignment.is_none() && rng.random_bool(0.5) {
            let t = rng.random_range(0..config.num_topics);
            (rng.random_range(0..=60) < topics[t].distractors)
                .then(|| (t, rng.random_range(0.01..0.06)))
        } else {
            None
        };
        let mut tokens = Vec::with_capacity(len);
        for _ in 0..len {
            let u: f64 = rng.random();
            let tok: &str = match (assignment, distractor) {
                (Some((t, s)), _) if u < *s => {
                    &topics[*t].words[rng.random_range(0..config.words_per_topic)]
                }
                (None, Some((t, s))) if u < s => {
                    &topics[t].words[rng.random_range(0..config.words_per_topic)]
                }
                _ if u < 0.45 => STOPWORDS[rng.random_range(0..STOPWORDS.len())],
                _ => &background[zipf.sample(&mut rng) as usize - 1],
            };
            tokens.push(tok);
        }
        if let Some((t, s)) = assignment {
            let grade = if *s > topics[*t].strength { 2 } else { 1 };
            qrels.push((format!("Q{:03}", t + 1), id.clone(), grade));
        } else if let Some((t, _)) = distractor {
            qrels.push((format!("Q{:03}", t + 1), id.clone(), 0));
        }
        documents.push((id, tokens.join(" ")));
    }

    let mut queries = Vec::with_capacity(config.num_topics);
    for (t, plan) in topics.iter().enumerate() {
        let n = rng.random_range(2..=4);
        let mut terms: Vec<String> = Vec::with_capacity(n + 1);
        while terms.len() < n {
            let w = &plan.words[rng.random_range(0..config.words_per_topic)];
            if !terms.contains(w) {
                terms.push(w.clone());
            }
        }
        match rng.random_range(0..10) {
            0..=2 => terms.push(background[rng.random_range(0..50)].clone()),
            3 => terms.push(
                background[rng.random_range(config.background_vocab / 2..config.background_vocab)]
                    .clone(),
            ),
            4 => terms.push(word(t, "x")),
            _ => {}
        }
        if rng.random_bool(0.3) {
            terms.insert(
                0,
                STOPWORDS[rng.random_range(0..STOPWORDS.len())].to_string(),
            );
        }
        queries.push((format!("Q{:03}", t + 1), terms.join(" ")));
    }
    qrels.sort();

    Ok(ToyCollection {
        documents,
        queries,
        qrels,
        stopwords: STOPWORDS.iter().map(|s| s.to_string()).collect(),
    })
}

impl ToyCollection {
    /// Writes `docs.tsv`, `queries.tsv`, `qrels.txt`, `stopwords.txt` and an
    /// `experiment.conf` pointing at them.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, body: String| -> Result<()> {
            let path = dir.join(name);
            let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            f.write_all(body.as_bytes())
                .map_err(|e| Error::io(&path, e))
        };
        write(
            "docs.tsv",
            self.documents
                .iter()
                .map(|(id, text)| format!("{id}\t{text}\n"))
                .collect(),
        )?;
        write(
            "queries.tsv",
            self.queries
                .iter()
                .map(|(id, title)| format!("{id}\t{title}\n"))
                .collect(),
        )?;
        write(
            "qrels.txt",
            self.qrels
                .iter()
                .map(|(q, d, g)| format!("{q} 0 {d} {g}\n"))
                .collect(),
        )?;
        write(
            "stopwords.txt",
            self.stopwords.iter().map(|w| format!("{w}\n")).collect(),
        )?;
        write(
            "experiment.conf",
            "corpus = docs.tsv\nqueries = queries.tsv\nqrels = qrels.txt\nstopwords = stopwords.txt\n".to_string(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_shaped() {
        let cfg = ToyConfig {
            num_docs: 200,
            num_topics: 10,
            ..Default::default()
        };
        let a = generate(&cfg).unwrap();
        assert_eq!(a, generate(&cfg).unwrap());
        assert_eq!(a.documents.len(), 200);
        assert_eq!(a.queries.len(), 10);
        assert!(a.qrels.iter().any(|(_, _, g)| *g > 0));
    }
}
