//! Fits a linear model by maximum likelihood and prints coefficients,
//! p-values, log-likelihood and AIC, then the exported JSON.

use std::collections::HashMap;

use stepqpp::regression::{fit_mle, DesignMatrix};

fn main() -> stepqpp::Result<()> {
    let x1 = vec![0.5, 1.2, 1.9, 2.4, 3.3, 3.9, 4.1, 5.6, 6.2, 7.0];
    let x2 = vec![2.0, 1.1, 3.4, 0.7, 2.9, 1.8, 4.2, 3.1, 0.9, 2.5];
    let y = vec![1.3, 2.0, 4.1, 2.9, 5.2, 4.8, 7.1, 7.4, 6.0, 8.3];
    let design = DesignMatrix::new(vec!["x1".into(), "x2".into()], vec![x1, x2], y)?;
    let model = fit_mle(&design, &[0, 1])?;

    println!(
        "{:<10} {:>10} {:>10} {:>10}",
        "term", "estimate", "std.err", "p"
    );
    println!(
        "{:<10} {:>10.4} {:>10.4} {:>10.2e}",
        "intercept",
        model.intercept,
        model.intercept_stats.std_error,
        model.intercept_stats.p_value
    );
    for ((label, b), s) in model
        .feature_labels
        .iter()
        .zip(&model.beta)
        .zip(&model.coef_stats)
    {
        println!(
            "{label:<10} {b:>10.4} {:>10.4} {:>10.2e}",
            s.std_error, s.p_value
        );
    }
    println!(
        "sigma2 {:.5}  logL {:.4}  AIC {:.4}",
        model.sigma2_mle, model.log_likelihood, model.aic
    );

    let row: HashMap<&str, f64> = [("x1", 4.0), ("x2", 2.0)].into_iter().collect();
    println!("prediction at x1=4, x2=2: {:.4}", model.predict(&row)?);
    println!("{}", model.export().to_json()?);
    Ok(())
}
