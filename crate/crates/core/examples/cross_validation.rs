//! Cross-validates the three roster methods on the toy predictor matrix
//! and prints mean correlations, sparsity and significance.

use std::path::PathBuf;

use stepqpp::evaluation::{cross_validate, significance, summarize, Metric};
use stepqpp::pipeline::{prepare, selection_universe, ExperimentConfig, MethodKind};

fn main() -> stepqpp::Result<()> {
    let conf = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/toy/experiment.conf");
    let mut config = ExperimentConfig::load(conf)?;
    config.eval.trials = 10;
    let prepared = prepare(&config, None)?;
    let targets = &prepared.targets.values[&Metric::Ap];

    let mut summaries = Vec::new();
    for kind in MethodKind::ALL {
        let trials = cross_validate(
            &prepared.features,
            targets,
            &config.method(kind),
            &config.eval,
        )?;
        let universe = selection_universe(kind, &prepared.features);
        let s = summarize(kind.name(), Metric::Ap, &universe, &trials);
        println!(
            "{:<20} pearson {:.3} spearman {:.3} features {:.2}",
            s.method,
            s.mean_pearson.unwrap_or(f64::NAN),
            s.mean_spearman.unwrap_or(f64::NAN),
            s.avg_selected_features
        );
        summaries.push(s);
    }
    for e in significance(&summaries, config.eval.alpha) {
        println!("{e:?}");
    }
    Ok(())
}
