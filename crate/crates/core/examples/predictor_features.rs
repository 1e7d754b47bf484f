//! Computes every predictor variant for the toy queries and prints the
//! first few rows of the matrix.

use std::path::PathBuf;

use stepqpp::corpus::{ingest_documents, ingest_queries, ingest_stopwords, DocFormat};
use stepqpp::predictors::{build_matrix, PredictorConfig, DEFAULT_DEPTHS};
use stepqpp::retrieval::RetrievalConfig;

fn main() -> stepqpp::Result<()> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/toy");
    let corpus = ingest_documents(dir.join("docs.tsv"), DocFormat::Tsv)?;
    let queries = ingest_queries(dir.join("queries.tsv"))?;
    let predictors = PredictorConfig {
        depths: DEFAULT_DEPTHS.to_vec(),
        stopwords: ingest_stopwords(dir.join("stopwords.txt"))?,
        ..PredictorConfig::default()
    };
    let matrix = build_matrix(
        &queries[..5],
        &corpus,
        &RetrievalConfig::default(),
        &predictors,
    )?;
    println!(
        "{} queries x {} columns",
        matrix.num_rows(),
        matrix.num_columns()
    );
    for (j, label) in matrix.columns().iter().enumerate().step_by(6) {
        let values: Vec<String> = matrix
            .rows()
            .iter()
            .map(|r| format!("{:>9.4}", r[j]))
            .collect();
        println!("{label:<12} {}", values.join(" "));
    }
    Ok(())
}
