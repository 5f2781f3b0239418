//! Doubly robust population effects of a treatment rule: its value, its
//! contrast against a static strategy (OTE), and the CATE contrast between
//! the treated segments and the rest (HTE).

use serde::{Deserialize, Serialize};

use crate::cate::{estimate_cate_by_segment, group_summaries, test_segments, Correction};
use crate::dataset::{build_segment_index, ExperimentDataset, FoldAssignment, SegmentIndex};
use crate::error::{Error, Result};
use crate::nuisance::{NuisanceEstimates, PseudoOutcomes};
use crate::rules::{knapsack_rule, static_rule, threshold_rule, CostSpec, KnapsackOptions, Provenance, TreatmentRule};
use crate::stats::{mean_and_se, z_two_sided};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum EffectKind {
    /// `E[E(Y | A = d(V), W)]`.
    Value,
    /// Value of `d` minus value of the static strategy `A = static_arm`.
    Ote { static_arm: u8 },
    /// Mean CATE inside the treat set minus mean CATE outside it.
    Hte,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvaluationMode {
    /// Rule learned on the full sample, evaluated on the same sample.
    PlugIn,
    /// Each fold evaluated under a rule learned from the other folds.
    #[default]
    CrossValidated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleEffectEstimate {
    pub kind: EffectKind,
    pub estimate: f64,
    pub se: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub alpha: f64,
    pub n_used: usize,
    pub evaluation_mode: EvaluationMode,
    pub provenance: Provenance,
}

fn summarize(
    kind: EffectKind,
    contributions: &[f64],
    alpha: f64,
    mode: EvaluationMode,
    provenance: Provenance,
) -> RuleEffectEstimate {
    let (estimate, se) = mean_and_se(contributions);
    let se = if se.is_nan() { 0.0 } else { se };
    normal_estimate(kind, estimate, se, contributions.len(), alpha, mode, provenance)
}

fn normal_estimate(
    kind: EffectKind,
    estimate: f64,
    se: f64,
    n_used: usize,
    alpha: f64,
    mode: EvaluationMode,
    provenance: Provenance,
) -> RuleEffectEstimate {
    let half = z_two_sided(alpha) * se;
    RuleEffectEstimate {
        kind,
        estimate,
        se,
        ci_lower: estimate - half,
        ci_upper: estimate + half,
        alpha,
        n_used,
        evaluation_mode: mode,
        provenance,
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    Ok(())
}

/// Per-unit influence contributions of the rule value:
/// `1{A_i = d_i} / P(A_i | W_i) * (Y_i - Q(A_i, W_i)) + Q(d_i, W_i)`.
pub fn value_contributions(data: &ExperimentDataset, nuis: &NuisanceEstimates, d: &[u8]) -> Result<Vec<f64>> {
    nuis.check_aligned(data)?;
    if d.len() != data.n() {
        return Err(Error::Misaligned(format!(
            "assignment has {} entries, dataset {}",
            d.len(),
            data.n()
        )));
    }
    Ok(data
        .treatment()
        .iter()
        .zip(data.outcome())
        .zip(d)
        .enumerate()
        .map(|(i, ((&a, &y), &di))| {
            let augmentation = nuis.outcome_regression(i, di);
            if a == di {
                (y - nuis.outcome_regression(i, a)) / nuis.arm_probability(i, a) + augmentation
            } else {
                augmentation
            }
        })
        .collect())
}

fn ote_contributions(data: &ExperimentDataset, nuis: &NuisanceEstimates, d: &[u8], static_arm: u8) -> Result<Vec<f64>> {
    if static_arm > 1 {
        return Err(Error::InvalidArgument(format!("static arm must be 0 or 1, got {static_arm}")));
    }
    let rule = value_contributions(data, nuis, d)?;
    let fixed = value_contributions(data, nuis, &vec![static_arm; d.len()])?;
    Ok(rule.iter().zip(&fixed).map(|(r, s)| r - s).collect())
}

fn hte_from_membership(
    d: &[f64],
    in_t: &[u8],
    alpha: f64,
    mode: EvaluationMode,
    provenance: Provenance,
) -> Result<RuleEffectEstimate> {
    let membership: Vec<usize> = in_t.iter().map(|&t| usize::from(t)).collect();
    let groups = group_summaries(d, &membership, 2);
    let (n_out, mean_out, se_out) = groups[0];
    let (n_in, mean_in, se_in) = groups[1];
    if n_in < 2 || n_out < 2 {
        return Err(Error::HteUndefined);
    }
    Ok(normal_estimate(
        EffectKind::Hte,
        mean_in - mean_out,
        (se_in * se_in + se_out * se_out).sqrt(),
        d.len(),
        alpha,
        mode,
        provenance,
    ))
}

pub fn estimate_value(
    rule: &TreatmentRule,
    data: &ExperimentDataset,
    nuis: &NuisanceEstimates,
    alpha: f64,
) -> Result<RuleEffectEstimate> {
    check_alpha(alpha)?;
    let d = rule.unit_assignment(&build_segment_index(data))?;
    let phi = value_contributions(data, nuis, &d)?;
    Ok(summarize(EffectKind::Value, &phi, alpha, EvaluationMode::PlugIn, rule.provenance.clone()))
}

pub fn estimate_ote(
    rule: &TreatmentRule,
    static_arm: u8,
    data: &ExperimentDataset,
    nuis: &NuisanceEstimates,
    alpha: f64,
) -> Result<RuleEffectEstimate> {
    check_alpha(alpha)?;
    let d = rule.unit_assignment(&build_segment_index(data))?;
    let phi = ote_contributions(data, nuis, &d, static_arm)?;
    Ok(summarize(
        EffectKind::Ote { static_arm },
        &phi,
        alpha,
        EvaluationMode::PlugIn,
        rule.provenance.clone(),
    ))
}

pub fn estimate_hte(
    rule: &TreatmentRule,
    d: &PseudoOutcomes,
    idx: &SegmentIndex,
    alpha: f64,
) -> Result<RuleEffectEstimate> {
    check_alpha(alpha)?;
    if idx.n_units() != d.len() {
        return Err(Error::Misaligned(format!(
            "segment index covers {} units, pseudo-outcomes {}",
            idx.n_units(),
            d.len()
        )));
    }
    let in_t = rule.unit_assignment(idx)?;
    hte_from_membership(&d.values, &in_t, alpha, EvaluationMode::PlugIn, rule.provenance.clone())
}

/// How a rule is learned from a CATE table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum RuleLearner {
    Threshold {
        theta: f64,
        alpha: f64,
        correction: Correction,
        require_significance: bool,
    },
    Knapsack {
        costs: CostSpec,
        options: KnapsackOptions,
        theta: f64,
        alpha: f64,
        correction: Correction,
    },
    /// Same rule regardless of data.
    Static { arm: u8 },
}

impl RuleLearner {
    /// Learns a rule from the pseudo-outcomes of the units in `idx`.
    pub fn learn(&self, d: &PseudoOutcomes, idx: &SegmentIndex) -> Result<TreatmentRule> {
        match self {
            RuleLearner::Static { arm } => static_rule(*arm, idx),
            RuleLearner::Threshold {
                theta,
                alpha,
                correction,
                require_significance,
            } => {
                let table = estimate_cate_by_segment(d, idx, *alpha)?;
                let tested = test_segments(&table, *theta, *correction, *alpha)?;
                threshold_rule(&tested, *theta, *alpha, *require_significance)
            }
            RuleLearner::Knapsack {
                costs,
                options,
                theta,
                alpha,
                correction,
            } => {
                let table = estimate_cate_by_segment(d, idx, *alpha)?;
                let tested = test_segments(&table, *theta, *correction, *alpha)?;
                Ok(knapsack_rule(&tested, costs, options)?.0)
            }
        }
    }

    fn describe(&self) -> Provenance {
        match self {
            RuleLearner::Static { arm } => Provenance::Static { arm: *arm },
            _ => Provenance::External,
        }
    }
}

/// Per-unit assignment under fold-specific rules, each learned without the
/// fold it is applied to.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossValidatedAssignment {
    pub unit_d: Vec<u8>,
    pub fold_rules: Vec<TreatmentRule>,
}

/// Segments never seen in a training split default to control.
pub fn cross_validated_assignment(
    learner: &RuleLearner,
    d: &PseudoOutcomes,
    idx: &SegmentIndex,
    folds: &FoldAssignment,
) -> Result<CrossValidatedAssignment> {
    if folds.k < 2 {
        return Err(Error::InvalidArgument("cross-validated rules need K >= 2".into()));
    }
    if folds.n() != d.len() || idx.n_units() != d.len() {
        return Err(Error::Misaligned("folds, segments and pseudo-outcomes differ in length".into()));
    }
    let mut unit_d = vec![0u8; d.len()];
    let mut fold_rules = Vec::with_capacity(folds.k);
    for fold in 0..folds.k {
        let train = folds.training_units(fold);
        let train_idx = idx.restrict(&train);
        let train_d = PseudoOutcomes::from_values(train.iter().map(|&i| d.values[i]).collect());
        let rule = learner.learn(&train_d, &train_idx)?;
        for i in folds.fold_units(fold) {
            unit_d[i] = rule.d(&idx.segments[idx.membership[i]]).unwrap_or(0);
        }
        fold_rules.push(rule);
    }
    Ok(CrossValidatedAssignment { unit_d, fold_rules })
}

/// Any effect kind under fold-specific rules learned out of fold. Folds are
/// those used for cross-fitting the nuisances.
pub fn estimate_cross_validated(
    kind: EffectKind,
    learner: &RuleLearner,
    data: &ExperimentDataset,
    nuis: &NuisanceEstimates,
    d: &PseudoOutcomes,
    alpha: f64,
) -> Result<RuleEffectEstimate> {
    check_alpha(alpha)?;
    let idx = build_segment_index(data);
    let cv = cross_validated_assignment(learner, d, &idx, &nuis.folds)?;
    let provenance = learner.describe();
    let mode = EvaluationMode::CrossValidated;
    match kind {
        EffectKind::Value => {
            let phi = value_contributions(data, nuis, &cv.unit_d)?;
            Ok(summarize(kind, &phi, alpha, mode, provenance))
        }
        EffectKind::Ote { static_arm } => {
            let phi = ote_contributions(data, nuis, &cv.unit_d, static_arm)?;
            Ok(summarize(kind, &phi, alpha, mode, provenance))
        }
        EffectKind::Hte => hte_from_membership(&d.values, &cv.unit_d, alpha, mode, provenance),
    }
}

pub fn estimate_cv_rule_value(
    learner: &RuleLearner,
    data: &ExperimentDataset,
    nuis: &NuisanceEstimates,
    d: &PseudoOutcomes,
    alpha: f64,
) -> Result<RuleEffectEstimate> {
    estimate_cross_validated(EffectKind::Value, learner, data, nuis, d, alpha)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{ColumnRoles, RawColumn, RawTable, SegmentKey};

    pub(crate) fn two_unit_world() -> (ExperimentDataset, NuisanceEstimates) {
        let table = RawTable {
            header: vec!["y".into(), "a".into(), "v".into()],
            columns: vec![
                RawColumn::Numbers(vec![2.0, 0.0]),
                RawColumn::Numbers(vec![1.0, 0.0]),
                RawColumn::Numbers(vec![1.0, 1.0]),
            ],
        };
        let roles = ColumnRoles {
            outcome: "y".into(),
            treatment: "a".into(),
            adjustment: vec![],
            segmentation: vec!["v".into()],
        };
        let data = ExperimentDataset::from_table(&table, &roles).unwrap();
        let nuis = NuisanceEstimates {
            g: vec![0.5, 0.5],
            q0: vec![1.0, 1.0],
            q1: vec![1.5, 1.5],
            folds: FoldAssignment {
                k: 2,
                seed: 0,
                fold_of: vec![0, 1],
            },
            epsilon: 0.01,
            truncated: 0,
            selections: vec![],
        };
        (data, nuis)
    }

    #[test]
    fn two_unit_hand_example() {
        let (data, nuis) = two_unit_world();
        let idx = build_segment_index(&data);
        let rule = static_rule(1, &idx).unwrap();
        let phi = value_contributions(&data, &nuis, &[1, 1]).unwrap();
        assert_eq!(phi, vec![2.5, 1.5]);
        let v = estimate_value(&rule, &data, &nuis, 0.05).unwrap();
        assert_eq!(v.estimate, 2.0);
        let ote = estimate_ote(&rule, 1, &data, &nuis, 0.05).unwrap();
        assert_eq!((ote.estimate, ote.se), (0.0, 0.0));
    }

    #[test]
    fn hte_requires_both_groups() {
        let idx = SegmentIndex::from_keys(
            vec!["v".into()],
            &[0, 0, 1, 1].map(|s| SegmentKey(vec![s.to_string()])),
        );
        let d = PseudoOutcomes::from_values(vec![3.0, 3.0, 1.0, 1.0]);
        let all = static_rule(1, &idx).unwrap();
        assert!(matches!(estimate_hte(&all, &d, &idx, 0.05), Err(Error::HteUndefined)));
        let none = static_rule(0, &idx).unwrap();
        assert!(estimate_hte(&none, &d, &idx, 0.05).is_err());
        let first: std::collections::BTreeSet<_> = [idx.segments[0].clone()].into_iter().collect();
        let rule = TreatmentRule::new(Provenance::External, &idx.segments, &first);
        let hte = estimate_hte(&rule, &d, &idx, 0.05).unwrap();
        assert_eq!(hte.estimate, 2.0);
    }
}
