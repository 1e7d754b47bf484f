//! Fixtures, frozen oracle values and brute-force reference solvers shared by
//! the integration tests. Oracle constants come from the scripts in
//! `tests/oracles/`.
#![allow(dead_code, clippy::needless_range_loop)]

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use stepqpp::corpus::{Corpus, CorpusBuilder, Query, StopwordList};
use stepqpp::predictors::{FeatureMatrix, PredictorConfig};
use stepqpp::regression::DesignMatrix;
use stepqpp::retrieval::RetrievalConfig;

// ---- stats_oracle.py (statsmodels 0.14.6, scipy 1.15.3) ----

pub const OLS_X1: [f64; 10] = [0.5, 1.2, 1.9, 2.4, 3.3, 3.9, 4.1, 5.6, 6.2, 7.0];
pub const OLS_X2: [f64; 10] = [2.0, 1.1, 3.4, 0.7, 2.9, 1.8, 4.2, 3.1, 0.9, 2.5];
pub const OLS_Y: [f64; 10] = [1.3, 2.0, 4.1, 2.9, 5.2, 4.8, 7.1, 7.4, 6.0, 8.3];
/// intercept, x1, x2
pub const OLS_PARAMS: [f64; 3] = [-0.24605744067401636, 0.9384093780124094, 0.78247769294213];
pub const OLS_BSE: [f64; 3] = [0.2444599228292434, 0.04401108178405512, 0.08228390538956258];
pub const OLS_TVALUES: [f64; 3] = [-1.006534886480713, 21.322115702967974, 9.509486566511274];
pub const OLS_PVALUES: [f64; 3] = [
    0.34767677492582316,
    1.2569411073440773e-07,
    2.9775655964637777e-05,
];
pub const OLS_SIGMA2_MLE: f64 = 0.05646622729708749;
pub const OLS_LLF: f64 = 0.18117750048267567;
pub const OLS_AIC_PREDICTORS_ONLY: f64 = 3.6376449990346487;

pub const PAIRED: [(&[f64], &[f64], f64); 20] = [
    (
        &[0.3, 0.65, 0.45, 0.8, 0.6],
        &[0.27, 0.67, 0.45, 0.78, 0.63],
        0.9999999999999993,
    ),
    (
        &[0.46, 0.81, 0.61, 0.41, 0.76, 0.56],
        &[0.42, 0.82, 0.6, 0.38, 0.71, 0.56],
        0.09321632060943702,
    ),
    (
        &[0.62, 0.42, 0.77, 0.57, 0.37, 0.72, 0.52],
        &[0.57, 0.35, 0.75, 0.53, 0.31, 0.71, 0.49],
        0.0027136820350937944,
    ),
    (
        &[0.78, 0.58, 0.38, 0.73, 0.53, 0.33, 0.68, 0.48],
        &[0.72, 0.5, 0.35, 0.68, 0.46, 0.24, 0.64, 0.42],
        6.246430894185405e-05,
    ),
    (
        &[0.39, 0.74, 0.54, 0.34, 0.69, 0.49, 0.84, 0.64, 0.44],
        &[0.32, 0.65, 0.43, 0.28, 0.61, 0.39, 0.79, 0.57, 0.35],
        1.6758643907707334e-06,
    ),
    (
        &[0.55, 0.35, 0.7, 0.5, 0.85, 0.65, 0.45, 0.8, 0.6, 0.4],
        &[0.57, 0.35, 0.68, 0.53, 0.86, 0.64, 0.42, 0.82, 0.6, 0.38],
        0.9999999999999987,
    ),
    (
        &[
            0.71, 0.51, 0.86, 0.66, 0.46, 0.81, 0.61, 0.41, 0.76, 0.56, 0.36,
        ],
        &[
            0.72, 0.5, 0.83, 0.61, 0.46, 0.79, 0.57, 0.42, 0.75, 0.53, 0.31,
        ],
        0.012728098020765407,
    ),
    (
        &[
            0.87, 0.67, 0.47, 0.82, 0.62, 0.42, 0.77, 0.57, 0.37, 0.72, 0.52, 0.87,
        ],
        &[
            0.8, 0.65, 0.43, 0.76, 0.61, 0.39, 0.72, 0.5, 0.35, 0.68, 0.46, 0.86,
        ],
        6.22625389875316e-05,
    ),
    (
        &[0.48, 0.83, 0.63, 0.43, 0.78],
        &[0.4, 0.8, 0.58, 0.36, 0.69],
        0.004022518518747187,
    ),
    (
        &[0.64, 0.44, 0.79, 0.59, 0.39, 0.74],
        &[0.55, 0.33, 0.73, 0.51, 0.29, 0.69],
        0.00034395372486638776,
    ),
    (
        &[0.8, 0.6, 0.4, 0.75, 0.55, 0.9, 0.7],
        &[0.8, 0.58, 0.43, 0.76, 0.54, 0.87, 0.72],
        0.9999999999999993,
    ),
    (
        &[0.41, 0.76, 0.56, 0.91, 0.71, 0.51, 0.86, 0.66],
        &[0.4, 0.73, 0.51, 0.91, 0.69, 0.47, 0.87, 0.65],
        0.03485422167879475,
    ),
    (
        &[0.57, 0.92, 0.72, 0.52, 0.87, 0.67, 0.47, 0.82, 0.62],
        &[0.55, 0.88, 0.66, 0.51, 0.84, 0.62, 0.4, 0.8, 0.58],
        0.00045102343156714833,
    ),
    (
        &[0.73, 0.53, 0.88, 0.68, 0.48, 0.83, 0.63, 0.43, 0.78, 0.58],
        &[0.7, 0.48, 0.81, 0.59, 0.44, 0.77, 0.55, 0.4, 0.73, 0.51],
        1.0639170499504424e-05,
    ),
    (
        &[
            0.89, 0.69, 0.49, 0.84, 0.64, 0.44, 0.79, 0.59, 0.94, 0.74, 0.54,
        ],
        &[
            0.78, 0.63, 0.41, 0.74, 0.59, 0.37, 0.7, 0.48, 0.88, 0.66, 0.44,
        ],
        1.3191924243390854e-07,
    ),
    (
        &[
            0.5, 0.85, 0.65, 0.45, 0.8, 0.6, 0.95, 0.75, 0.55, 0.9, 0.7, 0.5,
        ],
        &[
            0.48, 0.88, 0.66, 0.44, 0.77, 0.62, 0.95, 0.73, 0.58, 0.91, 0.69, 0.47,
        ],
        0.7948604511751436,
    ),
    (
        &[0.66, 0.46, 0.81, 0.61, 0.96],
        &[0.63, 0.41, 0.81, 0.59, 0.92],
        0.031229813927076543,
    ),
    (
        &[0.82, 0.62, 0.97, 0.77, 0.57, 0.92],
        &[0.78, 0.56, 0.96, 0.74, 0.52, 0.85],
        0.00442219777888193,
    ),
    (
        &[0.98, 0.78, 0.58, 0.93, 0.73, 0.53, 0.88],
        &[0.93, 0.71, 0.49, 0.89, 0.67, 0.45, 0.85],
        0.0003249746792710831,
    ),
    (
        &[0.59, 0.94, 0.74, 0.54, 0.89, 0.69, 0.49, 0.84],
        &[0.53, 0.86, 0.64, 0.49, 0.82, 0.6, 0.38, 0.78],
        1.7228322166786302e-05,
    ),
];

/// Spearman of (1,2,2,4) against (1,3,2,4).
pub const SPEARMAN_TIES: f64 = 0.9486832980505139;

// ---- predictor_fixture.py ----

pub const FIXTURE_DOCS: [(&str, &str); 5] = [
    ("d1", "the dog runs fast the dog"),
    ("d2", "a cat runs and the cat sleeps"),
    ("d3", "dog park walk the runs dog pond"),
    ("d4", "the bird flies a bird sings"),
    ("d5", "fast dog fast cat the end"),
];
pub const FIXTURE_QUERY: &str = "dog runs swims";
pub const FIXTURE_STOPWORDS: [&str; 3] = ["the", "a", "and"];

pub const FIXTURE_ORIGINAL: [(&str, f64); 5] = [
    ("d1", -8.242203129244835),
    ("d3", -8.42407699469414),
    ("d2", -9.24825243766049),
    ("d5", -9.297619333758014),
    ("d4", -9.79231557559412),
];
pub const FIXTURE_EXPANDED_QUERY: [(&str, f64); 5] = [
    ("dog", 0.33739636402218215),
    ("fast", 0.07178215802362858),
    ("runs", 0.25951965996528037),
    ("swims", 0.16666666666666666),
    ("the", 0.16463515132224227),
];
pub const FIXTURE_EXPANDED: [(&str, f64); 5] = [
    ("d1", -2.2111939273721775),
    ("d3", -2.3730703122201904),
    ("d5", -2.530023483071379),
    ("d2", -2.651144109993408),
    ("d4", -2.7789144124511274),
];
pub const FIXTURE_VALUES: [(&str, f64); 24] = [
    ("QFDOC@2", 1.0),
    ("QFTERM@2", 0.8),
    ("QFJSD@2", 0.0),
    ("CLARITY@2", 0.6916767365394295),
    ("WIG@2", 0.8569316469763709),
    ("NQC@2", 0.009262842773196845),
    ("UQC@2", 0.09093693272465231),
    ("SW1@2", 0.3333333333333333),
    ("QFDOC@3", 0.6666666666666666),
    ("QFTERM@3", 0.8),
    ("QFJSD@3", 0.13405293411807923),
    ("CLARITY@3", 0.2680128358888941),
    ("WIG@3", 0.6808181881617182),
    ("NQC@3", 0.04458734628398836),
    ("UQC@3", 0.43773133245124335),
    ("SW1@3", 0.47222222222222215),
    ("QFDOC@5", 1.0),
    ("QFTERM@5", 0.8),
    ("QFJSD@5", 0.0),
    ("CLARITY@5", 0.01682845580302248),
    ("WIG@5", 0.47140402313137764),
    ("NQC@5", 0.05911237616257031),
    ("UQC@5", 0.5803292041018606),
    ("SW1@5", 0.42333333333333323),
];

pub struct Fixture {
    pub corpus: Corpus,
    pub query: Query,
    pub retrieval: RetrievalConfig,
    pub predictors: PredictorConfig,
}

pub fn five_doc_fixture() -> Fixture {
    let mut b = CorpusBuilder::new();
    for (id, text) in FIXTURE_DOCS {
        b.add_document(id, text).unwrap();
    }
    Fixture {
        corpus: b.build(),
        query: Query::new("q1", FIXTURE_QUERY).unwrap(),
        retrieval: RetrievalConfig {
            mu: 10.0,
            k: 5,
            fb_docs: 2,
            fb_terms: 4,
            rm_interpolation: 0.5,
        },
        predictors: PredictorConfig {
            depths: vec![2, 3, 5],
            stopwords: StopwordList::from_words(FIXTURE_STOPWORDS),
            sw1_cap: 10.0,
        },
    }
}

pub fn toy_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/toy")
}

pub fn labels(p: usize) -> Vec<String> {
    (1..=p).map(|j| format!("x{j}")).collect()
}

/// `y = intercept + sum beta_j x_j + N(0, sigma^2)` with standard normal
/// features.
pub fn synthetic_design(
    seed: u64,
    n: usize,
    beta: &[f64],
    intercept: f64,
    sigma: f64,
) -> DesignMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std = Normal::new(0.0, 1.0).unwrap();
    let columns: Vec<Vec<f64>> = beta
        .iter()
        .map(|_| (0..n).map(|_| std.sample(&mut rng)).collect())
        .collect();
    let y = (0..n)
        .map(|i| {
            intercept
                + beta
                    .iter()
                    .enumerate()
                    .map(|(j, b)| b * columns[j][i])
                    .sum::<f64>()
                + sigma * std.sample(&mut rng)
        })
        .collect();
    DesignMatrix::new(labels(beta.len()), columns, y).unwrap()
}

/// Ordinary least squares through the normal equations, solved by Gaussian
/// elimination with partial pivoting. Returns `[intercept, beta...]`.
pub fn normal_equations(columns: &[&[f64]], y: &[f64]) -> Vec<f64> {
    let n = y.len();
    let p = columns.len() + 1;
    let x = |i: usize, j: usize| if j == 0 { 1.0 } else { columns[j - 1][i] };
    let mut a = vec![vec![0.0; p + 1]; p];
    for r in 0..p {
        for c in 0..p {
            a[r][c] = (0..n).map(|i| x(i, r) * x(i, c)).sum();
        }
        a[r][p] = (0..n).map(|i| x(i, r) * y[i]).sum();
    }
    for col in 0..p {
        let piv = (col..p)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, piv);
        for r in 0..p {
            if r != col {
                let f = a[r][col] / a[col][col];
                for c in col..=p {
                    a[r][c] -= f * a[col][c];
                }
            }
        }
    }
    (0..p).map(|r| a[r][p] / a[r][r]).collect()
}

/// Gaussian log-likelihood evaluated as the log of a product of densities.
pub fn brute_force_log_likelihood(residuals: &[f64], sigma2: f64) -> f64 {
    let density: f64 = residuals
        .iter()
        .map(|r| (-(r * r) / (2.0 * sigma2)).exp() / (2.0 * std::f64::consts::PI * sigma2).sqrt())
        .product();
    density.ln()
}

/// AIC of the normal-equation fit on the given columns, with predictors-only
/// `k` and the MLE variance.
pub fn reference_aic(design: &DesignMatrix, subset: &[usize]) -> f64 {
    let cols: Vec<&[f64]> = subset.iter().map(|&j| design.column(j)).collect();
    let coef = normal_equations(&cols, design.target());
    let n = design.num_rows();
    let rss: f64 = (0..n)
        .map(|i| {
            let fit = coef[0]
                + cols
                    .iter()
                    .enumerate()
                    .map(|(j, c)| coef[j + 1] * c[i])
                    .sum::<f64>();
            (design.target()[i] - fit).powi(2)
        })
        .sum();
    let s2 = (rss / n as f64).max(1e-12);
    let ll = -0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln()
        - 0.5 * n as f64 * s2.ln()
        - rss / (2.0 * s2);
    -2.0 * ll + 2.0 * subset.len() as f64
}

/// Lowest AIC over every subset of the design's columns.
pub fn best_subset_aic(design: &DesignMatrix) -> f64 {
    let p = design.num_columns();
    (0u32..1 << p)
        .map(|mask| {
            let subset: Vec<usize> = (0..p).filter(|j| mask & (1 << j) != 0).collect();
            reference_aic(design, &subset)
        })
        .fold(f64::INFINITY, f64::min)
}

/// Builds a random corpus of 5..40 documents over a small vocabulary.
pub fn random_corpus(rng: &mut ChaCha8Rng) -> (Corpus, Query) {
    let vocab = rng.random_range(3..30);
    let docs = rng.random_range(5..40);
    let mut cb = CorpusBuilder::new();
    for d in 0..docs {
        let len = rng.random_range(1..25);
        let toks: Vec<String> = (0..len)
            .map(|_| format!("w{}", rng.random_range(0..vocab)))
            .collect();
        cb.add_tokens(&format!("d{d}"), toks).unwrap();
    }
    let qlen = rng.random_range(1..4);
    let title: Vec<String> = (0..qlen)
        .map(|_| format!("w{}", rng.random_range(0..vocab + 2)))
        .collect();
    (cb.build(), Query::new("q", &title.join(" ")).unwrap())
}

/// Random rows for two families at two depths plus one single-depth family.
pub fn synthetic_matrix(seed: u64, n: usize) -> (FeatureMatrix, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cols = ["WIG@10", "WIG@50", "NQC@10", "NQC@50", "UQC@10"];
    let mut rows = Vec::new();
    let mut y = Vec::new();
    for _ in 0..n {
        let row: Vec<f64> = (0..cols.len())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        y.push(
            0.5 + 0.3 * row[0] + 0.1 * row[1] - 0.2 * row[2] + 0.05 * rng.random_range(-1.0..1.0),
        );
        rows.push(row);
    }
    let ids = (0..n).map(|i| format!("q{i}")).collect();
    (
        FeatureMatrix::new(ids, cols.iter().map(|s| s.to_string()).collect(), rows).unwrap(),
        y,
    )
}
