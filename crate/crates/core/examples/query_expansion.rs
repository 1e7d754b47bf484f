//! Builds an RM3 expansion of a query from its top-ranked documents and
//! compares the original and expanded rankings.

use stepqpp::corpus::CorpusBuilder;
use stepqpp::corpus::Query;
use stepqpp::predictors::qf_doc;
use stepqpp::retrieval::{expand_query, retrieve, retrieve_expanded, RetrievalConfig};

fn main() -> stepqpp::Result<()> {
    let mut builder = CorpusBuilder::new();
    for (id, text) in [
        ("d1", "solar panels convert sunlight into electricity"),
        ("d2", "solar energy storage with home batteries"),
        ("d3", "wind turbines and solar farms feed the grid"),
        ("d4", "battery chemistry for electric cars"),
        ("d5", "the grid operator balances electricity demand"),
        ("d6", "gardening tips for sunny balconies"),
    ] {
        builder.add_document(id, text)?;
    }
    let corpus = builder.build();
    let config = RetrievalConfig {
        mu: 50.0,
        k: 6,
        fb_docs: 2,
        fb_terms: 6,
        rm_interpolation: 0.5,
    };
    let query = Query::new("q1", "solar electricity")?;
    let original = retrieve(&query, &corpus, &config)?;
    let expansion = expand_query(&query, &original, &corpus, &config)?;
    let expanded = retrieve_expanded(&query.id, &expansion, &corpus, &config)?;

    println!("expanded query:");
    let mut weights: Vec<_> = expansion.weights.iter().collect();
    weights.sort_by(|a, b| b.1.total_cmp(a.1).then(a.0.cmp(b.0)));
    for (term, w) in weights {
        println!("  {term:<12} {w:.4}");
    }
    let ids = |list: &stepqpp::retrieval::RankedList| -> Vec<String> {
        list.entries
            .iter()
            .map(|(d, _)| corpus.document(*d).external_id.clone())
            .collect()
    };
    println!("original: {:?}", ids(&original));
    println!("expanded: {:?}", ids(&expanded));
    println!("top-3 overlap {:.3}", qf_doc(&original, &expanded, 3)?);
    Ok(())
}
