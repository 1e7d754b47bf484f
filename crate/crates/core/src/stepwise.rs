//! Feature subset selection: forward and backward p-value searches, and the
//! AIC-guided stepwise search that may add or remove one feature per step.

use std::collections::HashSet;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::regression::{fit_mle, DesignMatrix, LinearModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyKind {
    ForwardP,
    BackwardP,
    StepwiseAic,
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "forward-p" | "forward_pvalue" => Ok(StrategyKind::ForwardP),
            "backward-p" | "backward_pvalue" => Ok(StrategyKind::BackwardP),
            "stepwise-aic" | "stepwise_aic" => Ok(StrategyKind::StepwiseAic),
            other => Err(Error::Config(format!(
                "unknown selection strategy {other:?}"
            ))),
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StrategyKind::ForwardP => "forward-p",
            StrategyKind::BackwardP => "backward-p",
            StrategyKind::StepwiseAic => "stepwise-aic",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Start {
    Full,
    Empty,
}

impl FromStr for Start {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Start::Full),
            "empty" => Ok(Start::Empty),
            other => Err(Error::Config(format!("unknown start {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectionStrategy {
    pub kind: StrategyKind,
    /// Used by the p-value strategies only.
    pub p_threshold: f64,
    /// Used by the stepwise AIC strategy only.
    pub start: Start,
}

impl Default for SelectionStrategy {
    fn default() -> Self {
        SelectionStrategy {
            kind: StrategyKind::StepwiseAic,
            p_threshold: 0.05,
            start: Start::Full,
        }
    }
}

impl SelectionStrategy {
    pub fn new(kind: StrategyKind) -> Self {
        SelectionStrategy {
            kind,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p_threshold > 0.0 && self.p_threshold < 1.0) {
            return Err(Error::Config(format!(
                "p threshold must lie in (0, 1), got {}",
                self.p_threshold
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    // declaration order is the tie-break order: removals win
    Remove,
    Add,
}

/// One evaluated move. `aic` is `None` when the candidate fit failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub action: Action,
    pub feature: String,
    pub aic: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub p_value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionStep {
    pub action: Action,
    pub feature: String,
    pub aic_before: f64,
    pub aic_after: f64,
    pub candidates: Vec<Candidate>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionTrace {
    pub steps: Vec<SelectionStep>,
    /// Moves evaluated in the final round, none of which was taken.
    pub terminal_candidates: Vec<Candidate>,
    pub initial_model: LinearModel,
    pub final_model: LinearModel,
}

impl SelectionTrace {
    /// One JSON object per step.
    pub fn write_jsonl<W: Write>(&self, out: &mut W) -> Result<()> {
        for step in &self.steps {
            serde_json::to_writer(&mut *out, step)?;
            out.write_all(b"\n").map_err(|e| Error::io("<trace>", e))?;
        }
        Ok(())
    }

    /// Feature sets visited, starting with the initial model.
    pub fn subsets(&self) -> Vec<Vec<String>> {
        let mut current: Vec<String> = self.initial_model.feature_labels.clone();
        let mut out = vec![sorted(&current)];
        for step in &self.steps {
            match step.action {
                Action::Add => current.push(step.feature.clone()),
                Action::Remove => current.retain(|f| f != &step.feature),
            }
            out.push(sorted(&current));
        }
        out
    }
}

fn sorted(v: &[String]) -> Vec<String> {
    let mut v = v.to_vec();
    v.sort();
    v
}

pub fn select(
    design: &DesignMatrix,
    features: &[usize],
    strategy: &SelectionStrategy,
) -> Result<(LinearModel, SelectionTrace)> {
    match strategy.kind {
        StrategyKind::StepwiseAic => select_stepwise_aic(design, features, strategy.start),
        StrategyKind::ForwardP => select_forward_pvalue(design, features, strategy.p_threshold),
        StrategyKind::BackwardP => select_backward_pvalue(design, features, strategy.p_threshold),
    }
}

fn check_features(design: &DesignMatrix, features: &[usize]) -> Result<()> {
    let mut seen = HashSet::new();
    for &j in features {
        if j >= design.num_columns() {
            return Err(Error::Config(format!("feature index {j} out of range")));
        }
        if !seen.insert(j) {
            return Err(Error::Config(format!(
                "feature {} listed twice",
                design.labels()[j]
            )));
        }
    }
    Ok(())
}

fn with(active: &[usize], j: usize) -> Vec<usize> {
    let mut v = active.to_vec();
    v.push(j);
    v.sort_unstable();
    v
}

fn without(active: &[usize], j: usize) -> Vec<usize> {
    active.iter().copied().filter(|&a| a != j).collect()
}

/// Starting from the full (or empty) model, repeatedly applies the single
/// add-or-remove move with the lowest AIC while it strictly lowers the AIC.
///
/// AIC ties prefer removal, then the lexicographically smallest label.
/// Failed candidate fits are recorded and never chosen.
pub fn select_stepwise_aic(
    design: &DesignMatrix,
    features: &[usize],
    start: Start,
) -> Result<(LinearModel, SelectionTrace)> {
    check_features(design, features)?;
    let mut active: Vec<usize> = match start {
        Start::Full => {
            let mut v = features.to_vec();
            v.sort_unstable();
            v
        }
        Start::Empty => Vec::new(),
    };
    let initial = fit_mle(design, &active)?;
    let mut current = initial.clone();
    let mut steps = Vec::new();
    let mut visited: HashSet<Vec<usize>> = HashSet::from([active.clone()]);
    let terminal;
    let labels = design.labels();

    loop {
        let moves: Vec<(Action, usize)> = active
            .iter()
            .map(|&j| (Action::Remove, j))
            .chain(
                features
                    .iter()
                    .filter(|j| !active.contains(j))
                    .map(|&j| (Action::Add, j)),
            )
            .collect();
        let mut candidates = Vec::with_capacity(moves.len());
        let mut best: Option<(f64, Action, usize, LinearModel)> = None;
        for (action, j) in moves {
            let subset = match action {
                Action::Remove => without(&active, j),
                Action::Add => with(&active, j),
            };
            match fit_mle(design, &subset) {
                Ok(model) => {
                    candidates.push(Candidate {
                        action,
                        feature: labels[j].clone(),
                        aic: Some(model.aic),
                        p_value: None,
                        failure: None,
                    });
                    let better = match &best {
                        None => true,
                        Some((aic, a, b, _)) => {
                            (model.aic, action, &labels[j]) < (*aic, *a, &labels[*b])
                        }
                    };
                    if better {
                        best = Some((model.aic, action, j, model));
                    }
                }
                Err(e) => candidates.push(Candidate {
                    action,
                    feature: labels[j].clone(),
                    aic: None,
                    p_value: None,
                    failure: Some(e.to_string()),
                }),
            }
        }
        let Some((aic, action, j, model)) = best.filter(|b| b.0 < current.aic) else {
            terminal = candidates;
            break;
        };
        active = match action {
            Action::Remove => without(&active, j),
            Action::Add => with(&active, j),
        };
        // strict decrease already forbids revisits
        let fresh = visited.insert(active.clone());
        debug_assert!(fresh, "feature subset revisited");
        steps.push(SelectionStep {
            action,
            feature: labels[j].clone(),
            aic_before: current.aic,
            aic_after: aic,
            candidates,
        });
        current = model;
    }
    Ok((
        current.clone(),
        SelectionTrace {
            steps,
            terminal_candidates: terminal,
            initial_model: initial,
            final_model: current,
        },
    ))
}

/// From the empty model, adds the candidate whose coefficient has the
/// smallest p-value while that p-value is below `threshold`.
pub fn select_forward_pvalue(
    design: &DesignMatrix,
    features: &[usize],
    threshold: f64,
) -> Result<(LinearModel, SelectionTrace)> {
    check_features(design, features)?;
    let labels = design.labels();
    let mut active: Vec<usize> = Vec::new();
    let initial = fit_mle(design, &active)?;
    let mut current = initial.clone();
    let mut steps = Vec::new();
    let terminal;
    loop {
        let mut candidates = Vec::new();
        let mut best: Option<(f64, usize, LinearModel)> = None;
        for &j in features.iter().filter(|j| !active.contains(j)) {
            let subset = with(&active, j);
            match fit_mle(design, &subset) {
                Ok(model) => {
                    let pos = model
                        .feature_labels
                        .iter()
                        .position(|l| l == &labels[j])
                        .expect("fitted feature");
                    let p = model.coef_stats[pos].p_value;
                    candidates.push(Candidate {
                        action: Action::Add,
                        feature: labels[j].clone(),
                        aic: Some(model.aic),
                        p_value: Some(p),
                        failure: None,
                    });
                    let better = match &best {
                        None => true,
                        Some((bp, b, _)) => (p, &labels[j]) < (*bp, &labels[*b]),
                    };
                    if better {
                        best = Some((p, j, model));
                    }
                }
                Err(e) => candidates.push(Candidate {
                    action: Action::Add,
                    feature: labels[j].clone(),
                    aic: None,
                    p_value: None,
                    failure: Some(e.to_string()),
                }),
            }
        }
        match best {
            Some((p, j, model)) if p < threshold => {
                active = with(&active, j);
                steps.push(SelectionStep {
                    action: Action::Add,
                    feature: labels[j].clone(),
                    aic_before: current.aic,
                    aic_after: model.aic,
                    candidates,
                });
                current = model;
            }
            _ => {
                terminal = candidates;
                break;
            }
        }
    }
    Ok((
        current.clone(),
        SelectionTrace {
            steps,
            terminal_candidates: terminal,
            initial_model: initial,
            final_model: current,
        },
    ))
}

/// From the full model, removes the feature with the largest p-value while
/// that p-value exceeds `threshold`.
pub fn select_backward_pvalue(
    design: &DesignMatrix,
    features: &[usize],
    threshold: f64,
) -> Result<(LinearModel, SelectionTrace)> {
    check_features(design, features)?;
    let labels = design.labels();
    let mut active = features.to_vec();
    active.sort_unstable();
    let initial = fit_mle(design, &active)?;
    let mut current = initial.clone();
    let mut steps = Vec::new();
    let mut terminal = Vec::new();
    while !active.is_empty() {
        let candidates: Vec<Candidate> = current
            .feature_labels
            .iter()
            .zip(&current.coef_stats)
            .map(|(label, stats)| Candidate {
                action: Action::Remove,
                feature: label.clone(),
                aic: None,
                p_value: Some(stats.p_value),
                failure: None,
            })
            .collect();
        let worst = active
            .iter()
            .zip(&current.coef_stats)
            .max_by(|(a, sa), (b, sb)| {
                sa.p_value
                    .total_cmp(&sb.p_value)
                    .then_with(|| labels[**b].cmp(&labels[**a]))
            })
            .map(|(&j, s)| (j, s.p_value));
        let Some((j, _)) = worst.filter(|w| w.1 > threshold) else {
            terminal = candidates;
            break;
        };
        active = without(&active, j);
        let model = fit_mle(design, &active)?;
        steps.push(SelectionStep {
            action: Action::Remove,
            feature: labels[j].clone(),
            aic_before: current.aic,
            aic_after: model.aic,
            candidates,
        });
        current = model;
    }
    Ok((
        current.clone(),
        SelectionTrace {
            steps,
            terminal_candidates: terminal,
            initial_model: initial,
            final_model: current,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_design() -> DesignMatrix {
        // y depends on a only; b is a deterministic wiggle
        let a: Vec<f64> = (0..30).map(|i| i as f64).collect();
        let b: Vec<f64> = (0..30).map(|i| ((i * 7) % 11) as f64).collect();
        let c: Vec<f64> = (0..30).map(|i| ((i * 5) % 13) as f64 - 6.0).collect();
        let y: Vec<f64> = a.iter().zip(&c).map(|(x, n)| 3.0 * x + 0.01 * n).collect();
        DesignMatrix::new(vec!["a".into(), "b".into(), "c".into()], vec![a, b, c], y).unwrap()
    }

    #[test]
    fn tie_break_order() {
        assert!(Action::Remove < Action::Add);
    }

    #[test]
    fn strategy_parsing_and_validation() {
        assert_eq!(
            "stepwise-aic".parse::<StrategyKind>().unwrap(),
            StrategyKind::StepwiseAic
        );
        assert!("lasso".parse::<StrategyKind>().is_err());
        let bad = SelectionStrategy {
            p_threshold: 1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn forward_threshold_zero_keeps_nothing() {
        let d = toy_design();
        let (m, t) = select_forward_pvalue(&d, &[0, 1, 2], 0.0).unwrap();
        assert_eq!(m.k, 0);
        assert!(t.steps.is_empty());
    }

    #[test]
    fn forward_adds_predictive_feature_first() {
        let d = toy_design();
        let (_, t) = select_forward_pvalue(&d, &[0, 1, 2], 0.05).unwrap();
        assert_eq!(t.steps[0].feature, "a");
    }

    #[test]
    fn backward_threshold_one_removes_nothing() {
        let d = toy_design();
        let (m, t) = select_backward_pvalue(&d, &[0, 1, 2], 1.0).unwrap();
        assert_eq!(m.k, 3);
        assert!(t.steps.is_empty());
    }

    #[test]
    fn stepwise_aic_trace_is_consistent() {
        let d = toy_design();
        let (m, t) = select_stepwise_aic(&d, &[0, 1, 2], Start::Full).unwrap();
        assert_eq!(t.steps.first().map(|s| s.candidates.len()), Some(3));
        for s in &t.steps {
            assert!(s.aic_after < s.aic_before);
        }
        assert!(m.feature_labels.contains(&"a".to_string()));
        assert_eq!(t.subsets().last().unwrap(), &sorted(&m.feature_labels));
    }

    #[test]
    fn duplicate_feature_list_rejected() {
        let d = toy_design();
        assert!(select_stepwise_aic(&d, &[0, 0], Start::Full).is_err());
    }

    #[test]
    fn jsonl_has_one_line_per_step() {
        let d = toy_design();
        let (_, t) = select_stepwise_aic(&d, &[0, 1, 2], Start::Full).unwrap();
        let mut buf = Vec::new();
        t.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), t.steps.len());
        for line in text.lines() {
            let step: SelectionStep = serde_json::from_str(line).unwrap();
            assert!(step.aic_after < step.aic_before);
        }
    }
}
