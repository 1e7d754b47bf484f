//! Maximum-likelihood linear regression.
//!
//! Coefficients solve the normal equations through a Householder QR
//! factorization of the design (intercept column first). The variance
//! estimate is the MLE `RSS / n`, floored at [`SIGMA2_FLOOR`]; it drives the
//! log-likelihood and AIC. Per-coefficient p-values are classical two-sided
//! t-tests that use the unbiased `RSS / (n - k - 1)` instead.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use crate::error::{Error, Result};

pub const SIGMA2_FLOOR: f64 = 1e-12;

/// Columns whose residual norm after projection onto the preceding columns
/// falls below this fraction of their own norm are treated as collinear.
pub const COLLINEARITY_TOL: f64 = 1e-10;

/// Labeled predictor columns plus a response. The intercept is implicit.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    labels: Vec<String>,
    columns: Vec<Vec<f64>>,
    target: Vec<f64>,
}

impl DesignMatrix {
    pub fn new(labels: Vec<String>, columns: Vec<Vec<f64>>, target: Vec<f64>) -> Result<Self> {
        if labels.len() != columns.len() {
            return Err(Error::Config(format!(
                "{} labels for {} columns",
                labels.len(),
                columns.len()
            )));
        }
        let n = target.len();
        if target.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("target".into()));
        }
        for (label, col) in labels.iter().zip(&columns) {
            if col.len() != n {
                return Err(Error::Config(format!(
                    "column {label} has {} rows, target has {n}",
                    col.len()
                )));
            }
            if col.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("column {label}")));
            }
        }
        Ok(DesignMatrix {
            labels,
            columns,
            target,
        })
    }

    /// Builds a design from row-major data.
    pub fn from_rows(labels: Vec<String>, rows: &[Vec<f64>], target: Vec<f64>) -> Result<Self> {
        let p = labels.len();
        if let Some(bad) = rows.iter().position(|r| r.len() != p) {
            return Err(Error::Config(format!("row {bad} does not have {p} values")));
        }
        let columns = (0..p)
            .map(|j| rows.iter().map(|r| r[j]).collect())
            .collect();
        Self::new(labels, columns, target)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.columns[j]
    }

    pub fn target(&self) -> &[f64] {
        &self.target
    }

    pub fn num_rows(&self) -> usize {
        self.target.len()
    }

    pub fn num_columns(&self) -> usize {
        self.columns.len()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoefficientStats {
    pub estimate: f64,
    pub std_error: f64,
    pub t_stat: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub feature_labels: Vec<String>,
    pub beta: Vec<f64>,
    pub intercept: f64,
    pub sigma2_mle: f64,
    pub log_likelihood: f64,
    pub aic: f64,
    /// Number of retained predictors; the intercept is not counted.
    pub k: usize,
    pub coef_stats: Vec<CoefficientStats>,
    pub intercept_stats: CoefficientStats,
    pub n: usize,
    pub rss: f64,
}

impl LinearModel {
    /// `intercept + sum_j beta_j x_j`, looking features up by label.
    pub fn predict(&self, row: &HashMap<&str, f64>) -> Result<f64> {
        predict_terms(
            self.intercept,
            self.feature_labels
                .iter()
                .map(String::as_str)
                .zip(self.beta.iter().copied()),
            row,
        )
    }

    pub fn export(&self) -> ModelExport {
        ModelExport {
            features: self
                .feature_labels
                .iter()
                .zip(&self.beta)
                .zip(&self.coef_stats)
                .map(|((name, &coefficient), stats)| ExportedFeature {
                    name: name.clone(),
                    coefficient,
                    p_value: Some(stats.p_value),
                })
                .collect(),
            intercept: self.intercept,
            sigma2: Some(self.sigma2_mle),
            log_likelihood: Some(self.log_likelihood),
            aic: Some(self.aic),
        }
    }
}

fn predict_terms<'a>(
    intercept: f64,
    terms: impl Iterator<Item = (&'a str, f64)>,
    row: &HashMap<&str, f64>,
) -> Result<f64> {
    let mut acc = intercept;
    for (name, coef) in terms {
        let x = row
            .get(name)
            .ok_or_else(|| Error::MissingFeature(name.to_string()))?;
        acc += coef * x;
    }
    Ok(acc)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportedFeature {
    pub name: String,
    pub coefficient: f64,
    pub p_value: Option<f64>,
}

/// JSON form of a fitted model:
/// `{features:[{name, coefficient, p_value}], intercept, sigma2, log_likelihood, aic}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelExport {
    pub features: Vec<ExportedFeature>,
    pub intercept: f64,
    pub sigma2: Option<f64>,
    pub log_likelihood: Option<f64>,
    pub aic: Option<f64>,
}

impl ModelExport {
    /// A model known only by its coefficients.
    pub fn from_coefficients(intercept: f64, coefficients: &[(&str, f64)]) -> Self {
        ModelExport {
            features: coefficients
                .iter()
                .map(|&(name, coefficient)| ExportedFeature {
                    name: name.to_string(),
                    coefficient,
                    p_value: None,
                })
                .collect(),
            intercept,
            sigma2: None,
            log_likelihood: None,
            aic: None,
        }
    }

    pub fn predict(&self, row: &HashMap<&str, f64>) -> Result<f64> {
        predict_terms(
            self.intercept,
            self.features
                .iter()
                .map(|f| (f.name.as_str(), f.coefficient)),
            row,
        )
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Column-wise Householder QR that skips (and reports) columns lying in the
/// span of the columns accepted before them.
struct HouseholderQr {
    n: usize,
    /// (v, tau) with reflector `I - tau v v'` acting on rows `r..n`.
    reflectors: Vec<(Vec<f64>, f64)>,
    /// Upper-triangular part of each accepted column, length = rank at acceptance + 1.
    r_columns: Vec<Vec<f64>>,
    accepted: Vec<usize>,
    rejected: Vec<usize>,
}

impl HouseholderQr {
    fn factor(columns: &[&[f64]], n: usize) -> Self {
        let mut qr = HouseholderQr {
            n,
            reflectors: Vec::new(),
            r_columns: Vec::new(),
            accepted: Vec::new(),
            rejected: Vec::new(),
        };
        for (j, col) in columns.iter().enumerate() {
            let scale = norm(col);
            let mut a = col.to_vec();
            qr.apply_qt(&mut a);
            let r = qr.reflectors.len();
            let tail = norm(&a[r..]);
            if r >= n || tail <= COLLINEARITY_TOL * scale || scale == 0.0 {
                qr.rejected.push(j);
                continue;
            }
            let alpha = if a[r] > 0.0 { -tail } else { tail };
            let mut v = a[r..].to_vec();
            v[0] -= alpha;
            let vv: f64 = v.iter().map(|x| x * x).sum();
            let tau = 2.0 / vv;
            let mut rcol = a[..r].to_vec();
            rcol.push(alpha);
            qr.reflectors.push((v, tau));
            qr.r_columns.push(rcol);
            qr.accepted.push(j);
        }
        qr
    }

    fn apply_qt(&self, x: &mut [f64]) {
        for (r, (v, tau)) in self.reflectors.iter().enumerate() {
            let seg = &mut x[r..self.n];
            let dot: f64 = v.iter().zip(seg.iter()).map(|(a, b)| a * b).sum();
            let f = tau * dot;
            for (s, vi) in seg.iter_mut().zip(v) {
                *s -= f * vi;
            }
        }
    }

    fn rank(&self) -> usize {
        self.accepted.len()
    }

    fn r(&self, i: usize, j: usize) -> f64 {
        self.r_columns[j][i]
    }

    /// Solves `R b = Q' y` restricted to the accepted columns.
    fn solve(&self, y: &[f64]) -> Vec<f64> {
        let mut qty = y.to_vec();
        self.apply_qt(&mut qty);
        let m = self.rank();
        let mut b = vec![0.0; m];
        for i in (0..m).rev() {
            let s = (i + 1..m).fold(qty[i], |s, j| s - self.r(i, j) * b[j]);
            b[i] = s / self.r(i, i);
        }
        b
    }

    /// Diagonal of `(X'X)^-1 = R^-1 R^-T`.
    fn gram_inverse_diagonal(&self) -> Vec<f64> {
        let m = self.rank();
        // columns of R^-1 by back substitution on unit vectors
        let mut inv = vec![vec![0.0; m]; m];
        for (c, col) in inv.iter_mut().enumerate() {
            for i in (0..=c).rev() {
                let unit = if i == c { 1.0 } else { 0.0 };
                let s = (i + 1..=c).fold(unit, |s, j| s - self.r(i, j) * col[j]);
                col[i] = s / self.r(i, i);
            }
        }
        (0..m)
            .map(|i| (i..m).map(|c| inv[c][i] * inv[c][i]).sum())
            .collect()
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Gaussian log-likelihood from the residual sum of squares.
pub fn gaussian_log_likelihood(n: usize, rss: f64, sigma2: f64) -> Result<f64> {
    if sigma2.is_nan() || sigma2 <= 0.0 {
        return Err(Error::Degenerate(format!(
            "variance must be positive, got {sigma2}"
        )));
    }
    let n = n as f64;
    Ok(-0.5 * n * (2.0 * std::f64::consts::PI).ln() - 0.5 * n * sigma2.ln() - rss / (2.0 * sigma2))
}

/// Log-likelihood of `y` under `y_i = b0 + sum_j b_j x_ij + N(0, sigma2)`.
/// `coefficients[0]` is the intercept; `rows` exclude the intercept column.
pub fn log_likelihood(
    coefficients: &[f64],
    sigma2: f64,
    rows: &[Vec<f64>],
    y: &[f64],
) -> Result<f64> {
    if rows.len() != y.len() {
        return Err(Error::Config("row count differs from target length".into()));
    }
    let rss: f64 = rows
        .iter()
        .zip(y)
        .map(|(x, &yi)| {
            let fitted = coefficients[0]
                + coefficients[1..]
                    .iter()
                    .zip(x)
                    .map(|(b, v)| b * v)
                    .sum::<f64>();
            (yi - fitted).powi(2)
        })
        .sum();
    gaussian_log_likelihood(y.len(), rss, sigma2)
}

/// `-2 logL + 2k`.
pub fn aic(log_likelihood: f64, k: usize) -> f64 {
    -2.0 * log_likelihood + 2.0 * k as f64
}

/// Two-sided Student-t tail probability `P(|T| >= |t|)`.
pub fn two_sided_t_p_value(t: f64, df: f64) -> f64 {
    if t.is_nan() {
        return f64::NAN;
    }
    if t.is_infinite() {
        return 0.0;
    }
    let x = df / (df + t * t);
    beta_reg(0.5 * df, 0.5, x).clamp(0.0, 1.0)
}

/// t statistics and p-values from the estimates, the diagonal of
/// `(X'X)^-1` and the residual sum of squares. `k` excludes the intercept.
pub fn p_values(
    estimates: &[f64],
    gram_inverse_diagonal: &[f64],
    rss: f64,
    n: usize,
    k: usize,
) -> Result<Vec<CoefficientStats>> {
    if n < k + 2 {
        return Err(Error::TooFewRows {
            rows: n,
            needed: k + 1,
        });
    }
    let df = (n - k - 1) as f64;
    let s2 = rss / df;
    Ok(estimates
        .iter()
        .zip(gram_inverse_diagonal)
        .map(|(&estimate, &d)| {
            let std_error = (s2 * d).sqrt();
            let t_stat = if std_error > 0.0 {
                estimate / std_error
            } else if estimate == 0.0 {
                0.0
            } else {
                estimate.signum() * f64::INFINITY
            };
            CoefficientStats {
                estimate,
                std_error,
                t_stat,
                p_value: two_sided_t_p_value(t_stat, df),
            }
        })
        .collect())
}

fn design_columns<'a>(
    design: &'a DesignMatrix,
    active: &[usize],
    ones: &'a [f64],
) -> Vec<&'a [f64]> {
    std::iter::once(ones)
        .chain(active.iter().map(|&j| design.column(j)))
        .collect()
}

/// Fits `y ~ 1 + active columns` by maximum likelihood.
pub fn fit_mle(design: &DesignMatrix, active: &[usize]) -> Result<LinearModel> {
    let n = design.num_rows();
    let k = active.len();
    if let Some(&bad) = active.iter().find(|&&j| j >= design.num_columns()) {
        return Err(Error::Config(format!("column index {bad} out of range")));
    }
    if n < k + 2 {
        return Err(Error::TooFewRows {
            rows: n,
            needed: k + 1,
        });
    }
    let ones = vec![1.0; n];
    let cols = design_columns(design, active, &ones);
    let qr = HouseholderQr::factor(&cols, n);
    if !qr.rejected.is_empty() {
        let names = qr
            .rejected
            .iter()
            .map(|&c| {
                if c == 0 {
                    "(intercept)".to_string()
                } else {
                    design.labels()[active[c - 1]].clone()
                }
            })
            .collect();
        return Err(Error::Collinear(names));
    }
    let coefficients = qr.solve(design.target());
    let intercept = coefficients[0];
    let beta = coefficients[1..].to_vec();

    let y = design.target();
    let mut rss = 0.0;
    for (i, yi) in y.iter().enumerate() {
        let mut fitted = intercept;
        for (b, &j) in beta.iter().zip(active) {
            fitted += b * design.column(j)[i];
        }
        let r = yi - fitted;
        rss += r * r;
    }
    let sigma2_mle = (rss / n as f64).max(SIGMA2_FLOOR);
    let log_likelihood = gaussian_log_likelihood(n, rss, sigma2_mle)?;
    let stats = p_values(&coefficients, &qr.gram_inverse_diagonal(), rss, n, k)?;
    Ok(LinearModel {
        feature_labels: active.iter().map(|&j| design.labels()[j].clone()).collect(),
        beta,
        intercept,
        sigma2_mle,
        log_likelihood,
        aic: aic(log_likelihood, k),
        k,
        intercept_stats: stats[0],
        coef_stats: stats[1..].to_vec(),
        n,
        rss,
    })
}

/// Greedily keeps, in the given order, the candidate columns that are
/// linearly independent of the intercept and of the columns kept before
/// them. Returns `(kept, dropped)`.
pub fn independent_columns(
    design: &DesignMatrix,
    candidates: &[usize],
) -> (Vec<usize>, Vec<usize>) {
    let n = design.num_rows();
    let ones = vec![1.0; n];
    let cols = design_columns(design, candidates, &ones);
    let qr = HouseholderQr::factor(&cols, n);
    let kept = qr
        .accepted
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| candidates[c - 1])
        .collect();
    let dropped = qr
        .rejected
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| candidates[c - 1])
        .collect();
    (kept, dropped)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn design(cols: &[&[f64]], y: &[f64]) -> DesignMatrix {
        DesignMatrix::new(
            (0..cols.len()).map(|j| format!("x{j}")).collect(),
            cols.iter().map(|c| c.to_vec()).collect(),
            y.to_vec(),
        )
        .unwrap()
    }

    #[test]
    fn exact_linear_data() {
        let d = design(&[&[1.0, 2.0, 3.0]], &[2.0, 4.0, 6.0]);
        let m = fit_mle(&d, &[0]).unwrap();
        assert!((m.beta[0] - 2.0).abs() < 1e-12);
        assert!(m.intercept.abs() < 1e-12);
        assert_eq!(m.sigma2_mle, SIGMA2_FLOOR);
        assert!(m.rss < 1e-24);
    }

    #[test]
    fn symmetric_two_point_fit() {
        let d = design(&[&[1.0, -1.0, 0.0]], &[1.0, -1.0, 0.0]);
        let m = fit_mle(&d, &[0]).unwrap();
        assert!((m.beta[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn aic_substitution() {
        assert_eq!(aic(-10.0, 3), 26.0);
    }

    #[test]
    fn log_likelihood_single_point() {
        let ll = log_likelihood(&[0.0], 1.0, &[vec![]], &[0.0]).unwrap();
        assert_eq!(ll, -0.5 * (2.0 * std::f64::consts::PI).ln());
        assert!(log_likelihood(&[0.0], 0.0, &[vec![]], &[0.0]).is_err());
    }

    #[test]
    fn duplicate_column_is_collinear() {
        let x = [1.0, 2.0, 4.0, 3.0, 5.0];
        let d = design(&[&x, &x], &[1.0, 0.0, 2.0, 1.0, 3.0]);
        match fit_mle(&d, &[0, 1]) {
            Err(Error::Collinear(cols)) => assert_eq!(cols, vec!["x1".to_string()]),
            other => panic!("expected collinearity error, got {other:?}"),
        }
        let (kept, dropped) = independent_columns(&d, &[0, 1]);
        assert_eq!((kept, dropped), (vec![0], vec![1]));
    }

    #[test]
    fn constant_column_is_collinear_with_intercept() {
        let d = design(&[&[3.0; 5]], &[1.0, 0.0, 2.0, 1.0, 3.0]);
        assert!(matches!(fit_mle(&d, &[0]), Err(Error::Collinear(_))));
    }

    #[test]
    fn too_few_rows() {
        let d = design(&[&[1.0, 2.0]], &[1.0, 2.0]);
        assert!(matches!(fit_mle(&d, &[0]), Err(Error::TooFewRows { .. })));
    }

    #[test]
    fn p_value_limits() {
        assert_eq!(two_sided_t_p_value(0.0, 5.0), 1.0);
        assert_eq!(two_sided_t_p_value(f64::INFINITY, 5.0), 0.0);
        assert!(two_sided_t_p_value(1e6, 5.0) < 1e-20);
        let s = p_values(&[0.0], &[1.0], 4.0, 10, 0).unwrap();
        assert_eq!(s[0].p_value, 1.0);
        assert!(p_values(&[0.0, 1.0], &[1.0, 1.0], 1.0, 2, 1).is_err());
    }

    #[test]
    fn intercept_only_model() {
        let d = design(&[], &[1.0, 2.0, 3.0, 6.0]);
        let m = fit_mle(&d, &[]).unwrap();
        assert_eq!(m.k, 0);
        assert!((m.intercept - 3.0).abs() < 1e-12);
        assert!((m.sigma2_mle - 3.5).abs() < 1e-12);
    }

    #[test]
    fn missing_feature_in_prediction() {
        let d = design(&[&[1.0, 2.0, 3.0, 5.0]], &[1.0, 2.0, 2.0, 4.0]);
        let m = fit_mle(&d, &[0]).unwrap();
        assert!(matches!(
            m.predict(&HashMap::new()),
            Err(Error::MissingFeature(_))
        ));
    }
}
