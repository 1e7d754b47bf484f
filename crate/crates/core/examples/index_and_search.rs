//! Loads the toy collection, ranks one query with the Dirichlet language
//! model and scores the ranking against the judgments.
//!
//! ```text
//! cargo run --example index_and_search -- T007
//! ```

use std::path::PathBuf;

use stepqpp::corpus::{ingest_documents, ingest_qrels, ingest_queries, DocFormat};
use stepqpp::evaluation::{average_precision, ndcg};
use stepqpp::retrieval::{retrieve, RetrievalConfig};

fn main() -> stepqpp::Result<()> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/toy");
    let corpus = ingest_documents(dir.join("docs.tsv"), DocFormat::Tsv)?;
    let queries = ingest_queries(dir.join("queries.tsv"))?;
    let qrels = ingest_qrels(dir.join("qrels.txt"))?;
    println!(
        "{} documents, {} terms, {} tokens",
        corpus.num_documents(),
        corpus.vocabulary().len(),
        corpus.total_tokens()
    );

    let wanted = std::env::args().nth(1);
    let query = match &wanted {
        Some(id) => queries
            .iter()
            .find(|q| &q.id == id)
            .expect("unknown query id"),
        None => &queries[0],
    };
    let config = RetrievalConfig::default();
    let ranked = retrieve(query, &corpus, &config)?;
    println!("query {} [{}]", query.id, query.terms.join(" "));
    for (rank, (doc, score)) in ranked.entries.iter().take(10).enumerate() {
        let ext = &corpus.document(*doc).external_id;
        println!(
            "{:>3} {:<10} {:>10.4} grade {}",
            rank + 1,
            ext,
            score,
            qrels.grade(&query.id, ext)
        );
    }
    println!(
        "AP {:.4}  NDCG@{} {:.4}",
        average_precision(&ranked, &corpus, &qrels)?,
        config.k,
        ndcg(&ranked, &corpus, &qrels, config.k)?
    );
    Ok(())
}
