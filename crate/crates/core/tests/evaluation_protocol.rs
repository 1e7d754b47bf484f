mod common;

use std::collections::HashSet;

use common::*;
use proptest::prelude::*;
use stepqpp::evaluation::*;
use stepqpp::pipeline::{AggregationMethod, Method, MethodKind};
use stepqpp::stepwise::SelectionStrategy;

#[test]
fn average_precision_hand_case() {
    let ap = average_precision_from_grades(&[1, 0, 1], 2).unwrap();
    assert!((ap - 5.0 / 6.0).abs() < 1e-12);
    assert!(average_precision_from_grades(&[0, 0], 0).is_err());
}

#[test]
fn ndcg_hand_case() {
    let v = ndcg_from_grades(&[0, 3], &[3], 10).unwrap();
    assert!((v - 1.0 / 3f64.log2()).abs() < 1e-9);
    assert!((v - 0.6309).abs() < 1e-4);
}

#[test]
fn correlation_identities() {
    let x = [0.2, 1.5, -0.3, 4.0, 2.2, 0.9];
    assert!((pearson(&x, &x).unwrap() - 1.0).abs() < 1e-12);
    let monotone: Vec<f64> = x.iter().map(|v: &f64| v.exp() * 3.0 + 1.0).collect();
    assert!((spearman(&x, &monotone).unwrap() - 1.0).abs() < 1e-12);
    let rho = spearman(&[1.0, 2.0, 2.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
    assert!((rho - SPEARMAN_TIES).abs() < 1e-12);
}

#[test]
fn paired_t_matches_scipy() {
    for (i, (a, b, want)) in PAIRED.iter().enumerate() {
        let p = paired_t_test(a, b).unwrap();
        assert!((p - want).abs() < 1e-9, "sample {i}: {p} vs {want}");
    }
}

#[test]
fn bonferroni_threshold() {
    let p = [0.01, 0.0166, 0.017, 0.2];
    assert_eq!(bonferroni(&p, 3, 0.05), vec![true, true, false, false]);
    let at = 0.05 / 3.0;
    assert_eq!(bonferroni(&[at], 3, 0.05), vec![false]);
}

fn brute_ap(grades: &[u32], total: usize) -> f64 {
    let mut s = 0.0;
    for k in 0..grades.len() {
        if grades[k] > 0 {
            let rel_at_k = grades[..=k].iter().filter(|&&g| g > 0).count();
            s += rel_at_k as f64 / (k + 1) as f64;
        }
    }
    s / total as f64
}

proptest! {
    #[test]
    fn ap_and_ndcg_agree_with_definitions(grades in prop::collection::vec(0u32..4, 1..30), extra in 0usize..5) {
        let relevant = grades.iter().filter(|&&g| g > 0).count() + extra;
        prop_assume!(relevant > 0);
        let ap = average_precision_from_grades(&grades, relevant).unwrap();
        prop_assert!((ap - brute_ap(&grades, relevant)).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&ap));

        let mut judged: Vec<u32> = grades.clone();
        judged.extend(std::iter::repeat_n(2, extra));
        if judged.iter().any(|&g| g > 0) {
            let v = ndcg_from_grades(&grades, &judged, 10).unwrap();
            prop_assert!((0.0..=1.0 + 1e-12).contains(&v));
            let mut ideal = judged.clone();
            ideal.sort_unstable_by(|a, b| b.cmp(a));
            prop_assert!((ndcg_from_grades(&ideal, &judged, 10).unwrap() - 1.0).abs() < 1e-12);
        }
    }
}

fn method(kind: MethodKind) -> Method {
    Method {
        kind,
        aggregation: AggregationMethod::default(),
        strategy: SelectionStrategy::default(),
    }
}

#[test]
fn thirty_trials_give_sixty_partitioning_folds() {
    let (x, y) = synthetic_matrix(1, 41);
    let cfg = EvalConfig::default();
    let trials = cross_validate(&x, &y, &method(MethodKind::TwoStageAicFs), &cfg).unwrap();
    assert_eq!(trials.len(), 30);
    let folds: Vec<&FoldResult> = trials
        .iter()
        .flat_map(|t| t.folds.iter().filter_map(|f| f.evaluated()))
        .collect();
    assert_eq!(folds.len(), 60);
    for t in &trials {
        let a: HashSet<&String> = t.folds[0]
            .evaluated()
            .unwrap()
            .test_queries
            .iter()
            .collect();
        let b: HashSet<&String> = t.folds[1]
            .evaluated()
            .unwrap()
            .test_queries
            .iter()
            .collect();
        assert!(a.is_disjoint(&b));
        assert_eq!(a.len() + b.len(), 41);
        assert!(a.len().abs_diff(b.len()) <= 1);
    }
}

#[test]
fn same_seed_same_report_bytes() {
    let (x, y) = synthetic_matrix(2, 40);
    let cfg = EvalConfig::default();
    let report = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        pool.install(|| {
            let methods: Vec<MethodSummary> = MethodKind::ALL
                .iter()
                .map(|&k| {
                    let trials = cross_validate(&x, &y, &method(k), &cfg).unwrap();
                    summarize(k.name(), Metric::Ap, x.columns(), &trials)
                })
                .collect();
            EvalReport {
                trials: cfg.trials,
                seed: cfg.seed,
                significance: significance(&methods, cfg.alpha),
                methods,
                excluded_queries: vec![],
            }
            .to_json()
            .unwrap()
        })
    };
    let one = report(1);
    assert_eq!(one, report(4));
    assert_eq!(one, report(1));
}

#[test]
fn test_fold_targets_never_reach_training() {
    let (x, y) = synthetic_matrix(3, 40);
    let cfg = EvalConfig {
        trials: 5,
        ..Default::default()
    };
    for kind in MethodKind::ALL {
        let m = method(kind);
        let base = cross_validate(&x, &y, &m, &cfg).unwrap();
        for trial in &base {
            for outcome in &trial.folds {
                let fold = outcome.evaluated().unwrap();
                let test: HashSet<usize> = fold
                    .test_queries
                    .iter()
                    .map(|q| x.query_ids().iter().position(|id| id == q).unwrap())
                    .collect();
                let perturbed: Vec<f64> = y
                    .iter()
                    .enumerate()
                    .map(|(i, v)| {
                        if test.contains(&i) {
                            v * -3.0 + 7.0
                        } else {
                            *v
                        }
                    })
                    .collect();
                let again = cross_validate(&x, &perturbed, &m, &cfg).unwrap();
                let same = again[trial.trial].folds[fold.fold].evaluated().unwrap();
                assert_eq!(
                    same.model, fold.model,
                    "{kind} trial {} fold {}",
                    trial.trial, fold.fold
                );
                assert_eq!(same.predictions, fold.predictions);
            }
        }
    }
}

#[test]
fn linear_target_is_predicted_almost_perfectly() {
    let (x, _) = synthetic_matrix(4, 40);
    let y: Vec<f64> = x.rows().iter().map(|r| 1.0 + 2.0 * r[0] - r[2]).collect();
    let trials = cross_validate(
        &x,
        &y,
        &method(MethodKind::OneStageFullLm),
        &EvalConfig::default(),
    )
    .unwrap();
    let s = summarize("lm", Metric::Ap, x.columns(), &trials);
    assert!(s.mean_pearson.unwrap() >= 0.99);
}

#[test]
fn too_few_queries_is_an_error() {
    let (x, y) = synthetic_matrix(5, 3);
    assert!(cross_validate(
        &x,
        &y,
        &method(MethodKind::OneStageFullLm),
        &EvalConfig::default()
    )
    .is_err());
}

#[test]
fn selection_frequency_counts_opportunities() {
    let universe = vec!["A".to_string(), "B".to_string(), "C".to_string()];
    let picks = [
        vec!["A".to_string()],
        vec!["A".to_string(), "B".to_string()],
    ];
    let f = selection_frequency(&universe, picks.iter().map(Vec::as_slice), 2);
    assert_eq!(f["A"], 100.0);
    assert_eq!(f["B"], 50.0);
    assert_eq!(f["C"], 0.0);
}
