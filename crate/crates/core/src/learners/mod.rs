//! Regression learners with a uniform fit/predict contract, and discrete
//! Super Learner selection by cross-validated risk.

mod features;
mod knn;
mod linalg;
mod linear;
mod logistic;
mod select;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use features::{FeatureKind, FeatureSchema, Features};
pub use select::{cv_select, fit_library, LibrarySelection, Selection};

pub(crate) use features::DesignEncoder;

/// Lower/upper clamp applied to every log-loss prediction.
pub const PROB_CLAMP: f64 = 1e-12;

/// Default ridge penalty, large enough to rescue near-singular systems and
/// small enough not to matter otherwise.
pub const DEFAULT_RIDGE: f64 = 1e-8;

fn default_ridge() -> f64 {
    DEFAULT_RIDGE
}

/// A learner and its hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum LearnerSpec {
    Mean,
    /// Least squares; `ridge` penalises the mean squared error objective.
    Linear {
        #[serde(default = "default_ridge")]
        ridge: f64,
    },
    /// Logistic regression fitted by IRLS.
    Logistic {
        #[serde(default = "default_ridge")]
        ridge: f64,
    },
    /// Per-stratum target means over the joint levels of all features.
    StratifiedMean,
    /// Mean target of the `k` nearest training rows.
    Knn { k: usize },
}

impl LearnerSpec {
    pub fn linear() -> Self {
        LearnerSpec::Linear {
            ridge: DEFAULT_RIDGE,
        }
    }

    pub fn logistic() -> Self {
        LearnerSpec::Logistic {
            ridge: DEFAULT_RIDGE,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            LearnerSpec::Linear { ridge } | LearnerSpec::Logistic { ridge }
                if !(ridge >= 0.0 && ridge.is_finite()) =>
            {
                Err(Error::InvalidArgument(format!("ridge penalty must be >= 0, got {ridge}")))
            }
            LearnerSpec::Knn { k: 0 } => Err(Error::InvalidArgument("knn requires k >= 1".into())),
            _ => Ok(()),
        }
    }

    pub fn describe(&self) -> String {
        match self {
            LearnerSpec::Mean => "mean".into(),
            LearnerSpec::Linear { ridge } => format!("linear(ridge={ridge:e})"),
            LearnerSpec::Logistic { ridge } => format!("logistic(ridge={ridge:e})"),
            LearnerSpec::StratifiedMean => "stratified-mean".into(),
            LearnerSpec::Knn { k } => format!("knn(k={k})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Loss {
    SquaredError,
    LogLoss,
}

impl Loss {
    #[inline]
    pub fn evaluate(self, target: f64, prediction: f64) -> f64 {
        match self {
            Loss::SquaredError => (target - prediction) * (target - prediction),
            Loss::LogLoss => {
                let p = prediction.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
                -(target * p.ln() + (1.0 - target) * (1.0 - p).ln())
            }
        }
    }
}

#[derive(Debug, Clone)]
enum Params {
    Constant(f64),
    Coefficients { encoder: DesignEncoder, coef: Vec<f64> },
    Logit { encoder: DesignEncoder, coef: Vec<f64> },
    Strata { means: HashMap<Vec<u64>, f64>, fallback: f64 },
    Neighbours(knn::KnnModel),
}

#[derive(Debug, Clone)]
pub struct FittedLearner {
    spec: LearnerSpec,
    loss: Loss,
    schema: FeatureSchema,
    params: Params,
}

impl FittedLearner {
    pub fn spec(&self) -> &LearnerSpec {
        &self.spec
    }

    pub fn loss(&self) -> Loss {
        self.loss
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    /// Coefficients of linear or logistic models, intercept first.
    pub fn coefficients(&self) -> Option<&[f64]> {
        match &self.params {
            Params::Coefficients { coef, .. } | Params::Logit { coef, .. } => Some(coef),
            _ => None,
        }
    }
}

fn stratum_key(row: &[f64]) -> Vec<u64> {
    // +0.0 and -0.0 must land in the same stratum.
    row.iter().map(|&x| if x == 0.0 { 0 } else { x.to_bits() }).collect()
}

pub fn fit(spec: &LearnerSpec, loss: Loss, x: &Features, y: &[f64]) -> Result<FittedLearner> {
    spec.validate()?;
    if x.n_rows() != y.len() || y.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "need matching non-empty features ({} rows) and target ({})",
            x.n_rows(),
            y.len()
        )));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("target contains non-finite values".into()));
    }
    let unit_interval = y.iter().all(|&v| (0.0..=1.0).contains(&v));
    if loss == Loss::LogLoss && !unit_interval {
        return Err(Error::InvalidArgument("log-loss requires targets in [0, 1]".into()));
    }

    let params = match *spec {
        LearnerSpec::Mean => Params::Constant(y.iter().sum::<f64>() / y.len() as f64),
        LearnerSpec::Linear { ridge } => {
            let encoder = DesignEncoder::new(x.kinds());
            let coef = linear::fit(&encoder, x, y, ridge)?;
            Params::Coefficients { encoder, coef }
        }
        LearnerSpec::Logistic { ridge } => {
            if !unit_interval {
                return Err(Error::InvalidArgument(
                    "logistic regression requires targets in [0, 1]".into(),
                ));
            }
            let encoder = DesignEncoder::new(x.kinds());
            let coef = logistic::fit(&encoder, x, y, ridge)?;
            Params::Logit { encoder, coef }
        }
        LearnerSpec::StratifiedMean => {
            let mut sums: HashMap<Vec<u64>, (f64, usize)> = HashMap::new();
            for (i, &t) in y.iter().enumerate() {
                let e = sums.entry(stratum_key(x.row(i))).or_insert((0.0, 0));
                e.0 += t;
                e.1 += 1;
            }
            let means = sums.into_iter().map(|(k, (s, c))| (k, s / c as f64)).collect();
            Params::Strata {
                means,
                fallback: y.iter().sum::<f64>() / y.len() as f64,
            }
        }
        LearnerSpec::Knn { k } => Params::Neighbours(knn::KnnModel::fit(x, y, k)),
    };
    Ok(FittedLearner {
        spec: spec.clone(),
        loss,
        schema: x.schema(),
        params,
    })
}

pub fn predict(model: &FittedLearner, x: &Features) -> Result<Vec<f64>> {
    x.check_schema(&model.schema)?;
    let n = x.n_rows();
    let mut out: Vec<f64> = match &model.params {
        Params::Constant(c) => vec![*c; n],
        Params::Coefficients { encoder, coef } => {
            let mut buf = vec![0.0; encoder.width()];
            (0..n)
                .map(|i| {
                    encoder.encode_row(x.row(i), &mut buf);
                    dot(&buf, coef)
                })
                .collect()
        }
        Params::Logit { encoder, coef } => {
            let mut buf = vec![0.0; encoder.width()];
            (0..n)
                .map(|i| {
                    encoder.encode_row(x.row(i), &mut buf);
                    logistic::sigmoid(dot(&buf, coef))
                })
                .collect()
        }
        Params::Strata { means, fallback } => (0..n)
            .map(|i| *means.get(&stratum_key(x.row(i))).unwrap_or(fallback))
            .collect(),
        Params::Neighbours(m) => m.predict(x),
    };
    if model.loss == Loss::LogLoss {
        for p in out.iter_mut() {
            *p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        }
    }
    Ok(out)
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_learner_predicts_constant() {
        let x = Features::from_rows(&["x"], &[vec![0.0], vec![5.0], vec![9.0]]);
        let m = fit(&LearnerSpec::Mean, Loss::SquaredError, &x, &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(predict(&m, &x).unwrap(), vec![2.0; 3]);
    }

    #[test]
    fn stratified_mean_and_fallback() {
        let x = Features::new(
            vec!["s".into()],
            vec![FeatureKind::Categorical { levels: 3 }],
            4,
            vec![0.0, 0.0, 1.0, 1.0],
        );
        let m = fit(&LearnerSpec::StratifiedMean, Loss::SquaredError, &x, &[0.0, 1.0, 1.0, 1.0]).unwrap();
        assert_eq!(predict(&m, &x).unwrap(), vec![0.5, 0.5, 1.0, 1.0]);
        let unseen = Features::new(
            vec!["s".into()],
            vec![FeatureKind::Categorical { levels: 3 }],
            1,
            vec![2.0],
        );
        assert_eq!(predict(&m, &unseen).unwrap(), vec![0.75]);
    }

    #[test]
    fn schema_mismatch_rejected() {
        let x = Features::from_rows(&["x"], &[vec![0.0], vec![1.0]]);
        let m = fit(&LearnerSpec::Mean, Loss::SquaredError, &x, &[1.0, 2.0]).unwrap();
        let other = Features::from_rows(&["z"], &[vec![0.0]]);
        assert!(matches!(predict(&m, &other), Err(Error::SchemaMismatch(_))));
    }

    #[test]
    fn log_loss_predictions_are_clamped() {
        let x = Features::from_rows(&["x"], &[vec![0.0], vec![1.0]]);
        let m = fit(&LearnerSpec::StratifiedMean, Loss::LogLoss, &x, &[0.0, 1.0]).unwrap();
        let p = predict(&m, &x).unwrap();
        assert_eq!(p, vec![PROB_CLAMP, 1.0 - PROB_CLAMP]);
        assert!(fit(&LearnerSpec::Mean, Loss::LogLoss, &x, &[0.0, 2.0]).is_err());
    }

    #[test]
    fn invalid_hyperparameters() {
        assert!(LearnerSpec::Knn { k: 0 }.validate().is_err());
        assert!(LearnerSpec::Linear { ridge: -1.0 }.validate().is_err());
    }

    #[test]
    fn spec_from_config_text() {
        let specs: Vec<LearnerSpec> =
            serde_json::from_str(r#"[{"kind":"linear"},{"kind":"knn","k":5},{"kind":"stratified-mean"}]"#)
                .unwrap();
        assert_eq!(
            specs,
            vec![LearnerSpec::linear(), LearnerSpec::Knn { k: 5 }, LearnerSpec::StratifiedMean]
        );
    }
}
