//! Runs the three selection strategies on a synthetic design where only
//! some predictors carry signal, and prints the stepwise AIC trace.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use stepqpp::regression::DesignMatrix;
use stepqpp::stepwise::{select, SelectionStrategy, StrategyKind};

fn main() -> stepqpp::Result<()> {
    let n = 120;
    let beta = [1.0, 0.8, 0.0, 0.6, 0.0, 0.0];
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let columns: Vec<Vec<f64>> = beta
        .iter()
        .map(|_| (0..n).map(|_| normal.sample(&mut rng)).collect())
        .collect();
    let y: Vec<f64> = (0..n)
        .map(|i| {
            0.5 + beta
                .iter()
                .zip(&columns)
                .map(|(b, c)| b * c[i])
                .sum::<f64>()
                + normal.sample(&mut rng)
        })
        .collect();
    let labels = (1..=beta.len()).map(|j| format!("x{j}")).collect();
    let design = DesignMatrix::new(labels, columns, y)?;
    let all: Vec<usize> = (0..beta.len()).collect();

    for kind in [
        StrategyKind::StepwiseAic,
        StrategyKind::ForwardP,
        StrategyKind::BackwardP,
    ] {
        let (model, trace) = select(&design, &all, &SelectionStrategy::new(kind))?;
        println!(
            "{kind:?}: {:?} (AIC {:.3})",
            model.feature_labels, model.aic
        );
        if kind == StrategyKind::StepwiseAic {
            for (i, step) in trace.steps.iter().enumerate() {
                println!(
                    "  step {}: {:?} {} AIC {:.3} -> {:.3} ({} candidates)",
                    i + 1,
                    step.action,
                    step.feature,
                    step.aic_before,
                    step.aic_after,
                    step.candidates.len()
                );
            }
        }
    }
    Ok(())
}
