//! Treatment rules `d(v) = 1{v in T}`: CATE thresholding, budget-constrained
//! knapsack selection and static strategies.

pub mod knapsack;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::cate::{test_segments, CateTable, Correction, Decision};
use crate::dataset::{SegmentIndex, SegmentKey};
use crate::error::{Error, Result};

pub use knapsack::Solver;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Provenance {
    Threshold {
        theta: f64,
        require_significance: bool,
        correction: Option<Correction>,
        alpha: Option<f64>,
    },
    Knapsack {
        budget: f64,
        objective: KnapsackObjective,
        candidacy: Candidacy,
        solver: Solver,
        certified_optimal: bool,
    },
    Static {
        arm: u8,
    },
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleEntry {
    pub segment: SegmentKey,
    pub d: u8,
}

/// A segment-indexed treatment assignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreatmentRule {
    pub provenance: Provenance,
    pub treat_set: Vec<SegmentKey>,
    pub assignments: Vec<RuleEntry>,
}

impl TreatmentRule {
    pub fn new(provenance: Provenance, segments: &[SegmentKey], treat: &BTreeSet<SegmentKey>) -> Self {
        let mut segments = segments.to_vec();
        segments.sort();
        segments.dedup();
        let assignments = segments
            .iter()
            .map(|s| RuleEntry {
                segment: s.clone(),
                d: u8::from(treat.contains(s)),
            })
            .collect();
        TreatmentRule {
            provenance,
            treat_set: treat.iter().cloned().collect(),
            assignments,
        }
    }

    /// `d(v)`, if the rule covers `v`.
    pub fn d(&self, key: &SegmentKey) -> Option<u8> {
        self.assignments
            .binary_search_by(|e| e.segment.cmp(key))
            .ok()
            .map(|i| self.assignments[i].d)
    }

    pub fn treats(&self, key: &SegmentKey) -> bool {
        self.d(key) == Some(1)
    }

    pub fn treat_set(&self) -> BTreeSet<SegmentKey> {
        self.treat_set.iter().cloned().collect()
    }

    /// Per-segment assignment aligned with `idx.segments`.
    pub fn segment_assignment(&self, idx: &SegmentIndex) -> Result<Vec<u8>> {
        idx.segments
            .iter()
            .map(|s| self.d(s).ok_or_else(|| Error::RuleUndefined(s.to_string())))
            .collect()
    }

    /// Per-unit assignment `d(V_i)`.
    pub fn unit_assignment(&self, idx: &SegmentIndex) -> Result<Vec<u8>> {
        let by_segment = self.segment_assignment(idx)?;
        Ok(idx.membership.iter().map(|&s| by_segment[s]).collect())
    }

    pub fn check_consistency(&self) -> Result<()> {
        let mut sorted = self.assignments.clone();
        sorted.sort_by(|a, b| a.segment.cmp(&b.segment));
        if sorted != self.assignments {
            return Err(Error::InvalidArgument("rule assignments must be sorted by segment".into()));
        }
        let declared = self.treat_set();
        let implied: BTreeSet<SegmentKey> = self
            .assignments
            .iter()
            .filter(|e| e.d == 1)
            .map(|e| e.segment.clone())
            .collect();
        if declared != implied || self.assignments.iter().any(|e| e.d > 1) {
            return Err(Error::InvalidArgument(
                "rule treat_set disagrees with its assignments".into(),
            ));
        }
        Ok(())
    }
}

/// Treat segments whose CATE exceeds `theta`: by significance of the
/// one-sided test when `require_significance`, by point estimate otherwise.
/// Untestable (singleton) segments are never treated.
pub fn threshold_rule(table: &CateTable, theta: f64, alpha: f64, require_significance: bool) -> Result<TreatmentRule> {
    let segments: Vec<SegmentKey> = table.segments().cloned().collect();
    if require_significance {
        let correction = table.correction.unwrap_or_default();
        let tested = test_segments(table, theta, correction, alpha)?;
        let treat = tested
            .estimates
            .iter()
            .filter(|e| e.decision == Decision::Treat)
            .map(|e| e.segment.clone())
            .collect();
        Ok(TreatmentRule::new(
            Provenance::Threshold {
                theta,
                require_significance,
                correction: Some(correction),
                alpha: Some(alpha),
            },
            &segments,
            &treat,
        ))
    } else {
        let treat = table
            .estimates
            .iter()
            .filter(|e| e.testable && e.cate > theta)
            .map(|e| e.segment.clone())
            .collect();
        Ok(TreatmentRule::new(
            Provenance::Threshold {
                theta,
                require_significance,
                correction: None,
                alpha: None,
            },
            &segments,
            &treat,
        ))
    }
}

/// `d(v) = arm` everywhere.
pub fn static_rule(arm: u8, idx: &SegmentIndex) -> Result<TreatmentRule> {
    if arm > 1 {
        return Err(Error::InvalidArgument(format!("static arm must be 0 or 1, got {arm}")));
    }
    let treat = if arm == 1 {
        idx.segments.iter().cloned().collect()
    } else {
        BTreeSet::new()
    };
    Ok(TreatmentRule::new(Provenance::Static { arm }, &idx.segments, &treat))
}

/// Per-segment treatment cost and a budget on `sum_{v in T} cost(v) p(v)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostSpec {
    pub costs: BTreeMap<SegmentKey, f64>,
    pub budget: f64,
}

impl CostSpec {
    pub fn new(costs: BTreeMap<SegmentKey, f64>, budget: f64) -> Result<Self> {
        if !(budget >= 0.0 && budget.is_finite()) {
            return Err(Error::InvalidArgument(format!("budget must be finite and >= 0, got {budget}")));
        }
        if let Some((k, c)) = costs.iter().find(|(_, c)| !(**c >= 0.0 && c.is_finite())) {
            return Err(Error::InvalidArgument(format!(
                "cost for segment {k} must be finite and >= 0, got {c}"
            )));
        }
        Ok(CostSpec { costs, budget })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KnapsackObjective {
    /// `sum_{v in T} CATE(v) p(v)`.
    #[default]
    Weighted,
    /// `sum_{v in T} CATE(v)`.
    Unweighted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Candidacy {
    /// Segments with a positive point estimate.
    #[default]
    PointEstimate,
    /// Segments with a positive lower confidence limit; the lower limit
    /// replaces the point estimate in the objective.
    Conservative,
    /// Segments with a positive point estimate that also pass the one-sided
    /// test recorded in the table.
    Significant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnapsackOptions {
    pub objective: KnapsackObjective,
    pub candidacy: Candidacy,
    /// DP weight resolution; defaults to `budget / 1e4`.
    pub resolution: Option<f64>,
}

impl Default for KnapsackOptions {
    fn default() -> Self {
        KnapsackOptions {
            objective: KnapsackObjective::Weighted,
            candidacy: Candidacy::PointEstimate,
            resolution: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnapsackSolution {
    pub chosen: Vec<SegmentKey>,
    pub objective: f64,
    pub spend: f64,
    pub solver: Solver,
    pub certified_optimal: bool,
    pub resolution: Option<f64>,
}

pub fn knapsack_rule(
    table: &CateTable,
    costs: &CostSpec,
    options: &KnapsackOptions,
) -> Result<(TreatmentRule, KnapsackSolution)> {
    if options.candidacy == Candidacy::Significant && !table.is_tested() {
        return Err(Error::InvalidArgument(
            "significance candidacy needs a tested CATE table".into(),
        ));
    }
    let mut keys = Vec::new();
    let mut items = Vec::new();
    for e in table.estimates.iter().filter(|e| e.testable) {
        let benefit = match options.candidacy {
            Candidacy::PointEstimate => e.cate,
            Candidacy::Conservative => e.ci_lower,
            Candidacy::Significant if e.decision == Decision::Treat => e.cate,
            Candidacy::Significant => continue,
        };
        if !(benefit > 0.0) {
            continue;
        }
        let cost = *costs
            .costs
            .get(&e.segment)
            .ok_or_else(|| Error::InvalidArgument(format!("no cost given for segment {}", e.segment)))?;
        let value = match options.objective {
            KnapsackObjective::Weighted => benefit * e.proportion,
            KnapsackObjective::Unweighted => benefit,
        };
        keys.push(e.segment.clone());
        items.push(knapsack::Item {
            value,
            weight: cost * e.proportion,
        });
    }
    let packing = knapsack::solve(&items, costs.budget, options.resolution);
    let chosen: Vec<SegmentKey> = packing.chosen.iter().map(|&i| keys[i].clone()).collect();
    let treat: BTreeSet<SegmentKey> = chosen.iter().cloned().collect();
    let segments: Vec<SegmentKey> = table.segments().cloned().collect();
    let rule = TreatmentRule::new(
        Provenance::Knapsack {
            budget: costs.budget,
            objective: options.objective,
            candidacy: options.candidacy,
            solver: packing.solver,
            certified_optimal: packing.certified_optimal,
        },
        &segments,
        &treat,
    );
    Ok((
        rule,
        KnapsackSolution {
            chosen,
            objective: packing.objective,
            spend: packing.spend,
            solver: packing.solver,
            certified_optimal: packing.certified_optimal,
            resolution: packing.resolution,
        },
    ))
}
