//! Cross-fitted propensity and outcome regressions, and the doubly robust
//! pseudo-outcome built from them.

use serde::{Deserialize, Serialize};

use crate::dataset::{build_segment_index, ExperimentDataset, FoldAssignment};
use crate::error::{Error, Result};
use crate::learners::{fit_library, predict, FeatureKind, Features, LearnerSpec, Loss, Selection};

pub const DEFAULT_EPSILON: f64 = 0.01;

/// Propensities are clipped to `[epsilon, 1 - epsilon]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncationPolicy {
    epsilon: f64,
}

impl TruncationPolicy {
    pub fn new(epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon < 0.5) {
            return Err(Error::InvalidArgument(format!(
                "truncation epsilon must lie in (0, 0.5), got {epsilon}"
            )));
        }
        Ok(TruncationPolicy { epsilon })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    #[inline]
    pub fn apply(&self, g: f64) -> f64 {
        g.clamp(self.epsilon, 1.0 - self.epsilon)
    }
}

impl Default for TruncationPolicy {
    fn default() -> Self {
        TruncationPolicy {
            epsilon: DEFAULT_EPSILON,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutcomeModel {
    /// One regression of `Y` on `(A, W)`, predicted with `A` toggled.
    #[default]
    Joint,
    /// Separate regressions of `Y` on `W` within each arm.
    ArmSpecific,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuisanceConfig {
    pub propensity_library: Vec<LearnerSpec>,
    pub outcome_library: Vec<LearnerSpec>,
    pub truncation: TruncationPolicy,
    /// Known assignment probability of a randomised design. When set, no
    /// propensity model is fitted.
    pub known_propensity: Option<f64>,
    pub outcome_model: OutcomeModel,
    /// Replace the segmentation columns among the outcome covariates by one
    /// categorical segment indicator, so the outcome model is saturated in V.
    pub segment_indicator: bool,
    /// Internal folds used by library selection.
    pub selection_folds: usize,
    pub selection_seed: u64,
}

impl Default for NuisanceConfig {
    fn default() -> Self {
        NuisanceConfig {
            propensity_library: vec![LearnerSpec::logistic()],
            outcome_library: vec![LearnerSpec::linear()],
            truncation: TruncationPolicy::default(),
            known_propensity: None,
            outcome_model: OutcomeModel::Joint,
            segment_indicator: false,
            selection_folds: 5,
            selection_seed: 0,
        }
    }
}

impl NuisanceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.outcome_library.is_empty() {
            return Err(Error::InvalidArgument("outcome library is empty".into()));
        }
        match self.known_propensity {
            Some(p) if !(p > 0.0 && p < 1.0) => {
                return Err(Error::InvalidArgument(format!(
                    "known propensity must lie in (0, 1), got {p}"
                )))
            }
            None if self.propensity_library.is_empty() => {
                return Err(Error::InvalidArgument("propensity library is empty".into()))
            }
            _ => {}
        }
        for spec in self.propensity_library.iter().chain(&self.outcome_library) {
            spec.validate()?;
        }
        if self.selection_folds < 2 {
            return Err(Error::InvalidArgument("selection_folds must be >= 2".into()));
        }
        Ok(())
    }
}

/// Learners chosen when fitting on the complement of one fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSelections {
    pub propensity: Option<Selection>,
    /// One entry for a joint model, two (control, treated) for arm-specific.
    pub outcome: Vec<Selection>,
}

/// Out-of-fold nuisance predictions for every unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuisanceEstimates {
    /// Truncated `P(A = 1 | W)`.
    pub g: Vec<f64>,
    /// `E(Y | A = 0, W)`.
    pub q0: Vec<f64>,
    /// `E(Y | A = 1, W)`.
    pub q1: Vec<f64>,
    pub folds: FoldAssignment,
    pub epsilon: f64,
    /// Number of units whose propensity was clipped.
    pub truncated: usize,
    pub selections: Vec<FoldSelections>,
}

impl NuisanceEstimates {
    pub fn n(&self) -> usize {
        self.g.len()
    }

    /// `P(A = a | W_i)`.
    #[inline]
    pub fn arm_probability(&self, i: usize, a: u8) -> f64 {
        if a == 1 {
            self.g[i]
        } else {
            1.0 - self.g[i]
        }
    }

    /// `E(Y | A = a, W_i)`.
    #[inline]
    pub fn outcome_regression(&self, i: usize, a: u8) -> f64 {
        if a == 1 {
            self.q1[i]
        } else {
            self.q0[i]
        }
    }

    pub(crate) fn check_aligned(&self, data: &ExperimentDataset) -> Result<()> {
        let n = data.n();
        if self.g.len() != n || self.q0.len() != n || self.q1.len() != n || self.folds.n() != n {
            return Err(Error::Misaligned(format!(
                "dataset has {n} units, nuisance estimates have {}",
                self.g.len()
            )));
        }
        Ok(())
    }
}

/// Outcome covariates: `W`, optionally with V replaced by a segment indicator.
fn outcome_covariates(data: &ExperimentDataset, segment_indicator: bool) -> Features {
    if segment_indicator {
        let idx = build_segment_index(data);
        let codes: Vec<f64> = idx.membership.iter().map(|&s| s as f64).collect();
        data.adjustment_features_without_segments().prepend_column(
            "segment",
            FeatureKind::Categorical { levels: idx.len() },
            &codes,
        )
    } else {
        data.adjustment_features()
    }
}

pub fn cross_fit_nuisance(
    data: &ExperimentDataset,
    folds: &FoldAssignment,
    config: &NuisanceConfig,
) -> Result<NuisanceEstimates> {
    config.validate()?;
    let n = data.n();
    if folds.n() != n {
        return Err(Error::Misaligned(format!(
            "fold assignment covers {} units, dataset has {n}",
            folds.n()
        )));
    }
    let a = data.treatment();
    let y = data.outcome();
    let a_f: Vec<f64> = a.iter().map(|&t| f64::from(t)).collect();
    let w = data.adjustment_features();
    let covariates = outcome_covariates(data, config.segment_indicator);
    let joint = covariates.prepend_column("__treatment", FeatureKind::Numeric, &a_f);

    let mut g = vec![f64::NAN; n];
    let mut q0 = vec![f64::NAN; n];
    let mut q1 = vec![f64::NAN; n];
    let mut selections = Vec::with_capacity(folds.k);

    for fold in 0..folds.k {
        let train = folds.training_units(fold);
        let test = folds.fold_units(fold);
        let treated = train.iter().filter(|&&i| a[i] == 1).count();
        if treated == 0 || treated == train.len() {
            return Err(Error::DegenerateFold { fold });
        }
        if test.is_empty() {
            selections.push(FoldSelections {
                propensity: None,
                outcome: Vec::new(),
            });
            continue;
        }
        let seed = config.selection_seed.wrapping_add(fold as u64);

        let propensity = match config.known_propensity {
            Some(p) => {
                for &i in &test {
                    g[i] = p;
                }
                None
            }
            None => {
                let a_train: Vec<f64> = train.iter().map(|&i| a_f[i]).collect();
                let (model, sel) = fit_library(
                    &config.propensity_library,
                    &w.select_rows(&train),
                    &a_train,
                    Loss::LogLoss,
                    config.selection_folds,
                    seed,
                )?;
                let pred = predict(&model, &w.select_rows(&test))?;
                for (&i, p) in test.iter().zip(pred) {
                    g[i] = p;
                }
                Some(sel)
            }
        };

        let outcome = match config.outcome_model {
            OutcomeModel::Joint => {
                let y_train: Vec<f64> = train.iter().map(|&i| y[i]).collect();
                let (model, sel) = fit_library(
                    &config.outcome_library,
                    &joint.select_rows(&train),
                    &y_train,
                    Loss::SquaredError,
                    config.selection_folds,
                    seed,
                )?;
                let held_out = joint.select_rows(&test);
                let p0 = predict(&model, &held_out.with_constant_column(0, 0.0))?;
                let p1 = predict(&model, &held_out.with_constant_column(0, 1.0))?;
                for (j, &i) in test.iter().enumerate() {
                    q0[i] = p0[j];
                    q1[i] = p1[j];
                }
                vec![sel]
            }
            OutcomeModel::ArmSpecific => {
                let held_out = covariates.select_rows(&test);
                let mut sels = Vec::with_capacity(2);
                for arm in [0u8, 1] {
                    let rows: Vec<usize> = train.iter().copied().filter(|&i| a[i] == arm).collect();
                    let y_arm: Vec<f64> = rows.iter().map(|&i| y[i]).collect();
                    let (model, sel) = fit_library(
                        &config.outcome_library,
                        &covariates.select_rows(&rows),
                        &y_arm,
                        Loss::SquaredError,
                        config.selection_folds,
                        seed,
                    )?;
                    let pred = predict(&model, &held_out)?;
                    let target = if arm == 0 { &mut q0 } else { &mut q1 };
                    for (&i, p) in test.iter().zip(pred) {
                        target[i] = p;
                    }
                    sels.push(sel);
                }
                sels
            }
        };
        selections.push(FoldSelections {
            propensity,
            outcome,
        });
    }

    let mut truncated = 0;
    for gi in g.iter_mut() {
        let clipped = config.truncation.apply(*gi);
        if clipped != *gi {
            truncated += 1;
        }
        *gi = clipped;
    }
    if q0.iter().chain(&q1).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(
            "outcome regression produced non-finite predictions".into(),
        ));
    }

    Ok(NuisanceEstimates {
        g,
        q0,
        q1,
        folds: folds.clone(),
        epsilon: config.truncation.epsilon(),
        truncated,
        selections,
    })
}

/// Doubly robust transformation of one unit:
/// `(2A - 1) / P(A | W) * (Y - E(Y | A, W)) + E(Y | 1, W) - E(Y | 0, W)`.
#[inline]
pub fn pseudo_outcome(a: u8, y: f64, g: f64, q0: f64, q1: f64) -> f64 {
    if a == 1 {
        (y - q1) / g + q1 - q0
    } else {
        -(y - q0) / (1.0 - g) + q1 - q0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoOutcomes {
    pub values: Vec<f64>,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl PseudoOutcomes {
    pub fn from_values(values: Vec<f64>) -> Self {
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        PseudoOutcomes {
            values,
            mean,
            min,
            max,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

pub fn compute_pseudo_outcome(data: &ExperimentDataset, nuis: &NuisanceEstimates) -> Result<PseudoOutcomes> {
    nuis.check_aligned(data)?;
    let values = data
        .treatment()
        .iter()
        .zip(data.outcome())
        .enumerate()
        .map(|(i, (&a, &y))| pseudo_outcome(a, y, nuis.g[i], nuis.q0[i], nuis.q1[i]))
        .collect();
    Ok(PseudoOutcomes::from_values(values))
}
