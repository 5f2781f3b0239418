use serde::{Deserialize, Serialize};

use super::{fit, predict, Features, FittedLearner, LearnerSpec, Loss};
use crate::dataset::{partition_folds, partition_folds_stratified};
use crate::error::{Error, Result};

/// Outcome of cross-validated selection over a candidate library.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LibrarySelection {
    pub candidates: Vec<LearnerSpec>,
    /// Mean held-out loss per candidate; `inf` if any fold failed to fit.
    #[serde(with = "risk_serde")]
    pub risks: Vec<f64>,
    pub chosen: usize,
}

impl LibrarySelection {
    pub fn chosen_spec(&self) -> &LearnerSpec {
        &self.candidates[self.chosen]
    }

    pub fn chosen_risk(&self) -> f64 {
        self.risks[self.chosen]
    }
}

/// JSON has no infinity; failed candidates serialise as `null`.
mod risk_serde {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(risks: &[f64], s: S) -> Result<S::Ok, S::Error> {
        let v: Vec<Option<f64>> = risks.iter().map(|r| r.is_finite().then_some(*r)).collect();
        v.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let v: Vec<Option<f64>> = Vec::deserialize(d)?;
        Ok(v.into_iter().map(|r| r.unwrap_or(f64::INFINITY)).collect())
    }
}

/// Discrete Super Learner: the candidate with the smallest mean held-out
/// loss over an internal `k`-fold split, ties to the lowest index.
pub fn cv_select(
    candidates: &[LearnerSpec],
    x: &Features,
    y: &[f64],
    loss: Loss,
    k: usize,
    seed: u64,
) -> Result<LibrarySelection> {
    if candidates.is_empty() {
        return Err(Error::InvalidArgument("candidate library is empty".into()));
    }
    if k < 2 {
        return Err(Error::InvalidArgument(format!("cv_select needs K >= 2, got {k}")));
    }
    let n = y.len();
    if n < 2 {
        return Err(Error::InvalidArgument("cv_select needs at least two rows".into()));
    }
    let k = k.min(n);
    let binary = y.iter().all(|&t| t == 0.0 || t == 1.0);
    let folds = if loss == Loss::LogLoss && binary {
        let labels: Vec<u8> = y.iter().map(|&t| t as u8).collect();
        partition_folds_stratified(&labels, k, seed)?
    } else {
        partition_folds(n, k, seed)?
    };
    let splits: Vec<(Vec<usize>, Vec<usize>)> = (0..k)
        .map(|f| (folds.training_units(f), folds.fold_units(f)))
        .collect();

    let risks: Vec<f64> = candidates
        .iter()
        .map(|spec| {
            let mut total = 0.0;
            for (train, test) in &splits {
                let yt: Vec<f64> = train.iter().map(|&i| y[i]).collect();
                let fitted = fit(spec, loss, &x.select_rows(train), &yt);
                let pred = fitted.and_then(|m| predict(&m, &x.select_rows(test)));
                match pred {
                    Ok(p) => {
                        total += test
                            .iter()
                            .zip(&p)
                            .map(|(&i, &pi)| loss.evaluate(y[i], pi))
                            .sum::<f64>()
                    }
                    Err(_) => return f64::INFINITY,
                }
            }
            let risk = total / n as f64;
            if risk.is_nan() {
                f64::INFINITY
            } else {
                risk
            }
        })
        .collect();

    let mut chosen = 0;
    for (i, r) in risks.iter().enumerate() {
        if *r < risks[chosen] {
            chosen = i;
        }
    }
    if !risks[chosen].is_finite() {
        return Err(Error::AllCandidatesFailed);
    }
    Ok(LibrarySelection {
        candidates: candidates.to_vec(),
        risks,
        chosen,
    })
}

/// Record of which learner a library resolved to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub chosen: LearnerSpec,
    /// Absent when the library had a single candidate and no selection was
    /// needed.
    pub cv: Option<LibrarySelection>,
}

/// Selects from the library (skipping cross-validation for a single
/// candidate) and refits the winner on all rows.
pub fn fit_library(
    candidates: &[LearnerSpec],
    x: &Features,
    y: &[f64],
    loss: Loss,
    k: usize,
    seed: u64,
) -> Result<(FittedLearner, Selection)> {
    match candidates {
        [] => Err(Error::InvalidArgument("candidate library is empty".into())),
        [only] => {
            let model = fit(only, loss, x, y)?;
            Ok((
                model,
                Selection {
                    chosen: only.clone(),
                    cv: None,
                },
            ))
        }
        _ => {
            let sel = cv_select(candidates, x, y, loss, k, seed)?;
            let model = fit(sel.chosen_spec(), loss, x, y)?;
            Ok((
                model,
                Selection {
                    chosen: sel.chosen_spec().clone(),
                    cv: Some(sel),
                },
            ))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_candidate_reports_risk() {
        let x = Features::from_column("x", (0..10).map(f64::from).collect());
        let y: Vec<f64> = (0..10).map(f64::from).collect();
        let sel = cv_select(&[LearnerSpec::Mean], &x, &y, Loss::SquaredError, 5, 1).unwrap();
        assert_eq!(sel.chosen, 0);
        assert!(sel.chosen_risk().is_finite() && sel.chosen_risk() > 0.0);
    }

    #[test]
    fn identical_specs_tie_to_first() {
        let x = Features::from_column("x", (0..12).map(f64::from).collect());
        let y: Vec<f64> = (0..12).map(|i| (i % 3) as f64).collect();
        let lib = [LearnerSpec::linear(), LearnerSpec::linear()];
        let sel = cv_select(&lib, &x, &y, Loss::SquaredError, 3, 4).unwrap();
        assert_eq!(sel.risks[0], sel.risks[1]);
        assert_eq!(sel.chosen, 0);
    }

    #[test]
    fn failing_candidate_gets_infinite_risk() {
        let x = Features::from_column("x", (0..8).map(f64::from).collect());
        let y: Vec<f64> = (0..8).map(|i| i as f64 * 3.0).collect();
        // Logistic cannot fit targets outside [0, 1].
        let lib = [LearnerSpec::logistic(), LearnerSpec::Mean];
        let sel = cv_select(&lib, &x, &y, Loss::SquaredError, 2, 0).unwrap();
        assert!(sel.risks[0].is_infinite());
        assert_eq!(sel.chosen, 1);
        let err = cv_select(&[LearnerSpec::logistic()], &x, &y, Loss::SquaredError, 2, 0).unwrap_err();
        assert!(matches!(err, Error::AllCandidatesFailed));
        let json = serde_json::to_string(&sel).unwrap();
        let back: LibrarySelection = serde_json::from_str(&json).unwrap();
        assert!(back.risks[0].is_infinite());
    }
}
