//! Runs the complete experiment on the toy collection and writes every
//! artifact to the given directory.
//!
//! ```text
//! cargo run --release --example full_experiment -- /tmp/toy-run
//! ```

use std::path::PathBuf;

use stepqpp::pipeline::{run_experiment, ExperimentConfig};

fn main() -> stepqpp::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "toy-run".into()));
    let conf = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/toy/experiment.conf");
    let config = ExperimentConfig::load(conf)?;
    let result = run_experiment(&config, Some(&out))?;
    for m in &result.report.methods {
        println!(
            "{:<20} {:<5} pearson {:.3} features {:.2} inference {:.2e} s",
            m.method,
            m.metric.to_string(),
            m.mean_pearson.unwrap_or(f64::NAN),
            m.avg_selected_features,
            m.mean_inference_seconds.unwrap_or(f64::NAN)
        );
    }
    println!("artifacts in {}", out.display());
    Ok(())
}
