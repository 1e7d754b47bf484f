//! Regenerates the bundled toy collection.
//!
//! ```text
//! cargo run --example generate_toy_collection -- crates/core/data/toy
//! ```

use std::path::PathBuf;

use stepqpp::toy::{generate, ToyConfig};

fn main() -> stepqpp::Result<()> {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/toy"));
    let toy = generate(&ToyConfig::default())?;
    toy.write_to(&dir)?;
    println!(
        "{} documents, {} queries, {} judgments -> {}",
        toy.documents.len(),
        toy.queries.len(),
        toy.qrels.len(),
        dir.display()
    );
    Ok(())
}
