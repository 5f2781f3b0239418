//! Run configuration: a TOML document overlaid by command-line flags.

use std::path::{Path, PathBuf};

use causal_segments::cate::Correction;
use causal_segments::dataset::ColumnRoles;
use causal_segments::learners::LearnerSpec;
use causal_segments::nuisance::{NuisanceConfig, OutcomeModel, TruncationPolicy, DEFAULT_EPSILON};
use causal_segments::rules::{Candidacy, KnapsackObjective, KnapsackOptions};
use causal_segments::simgen::DgpSpec;
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum RuleMode {
    #[default]
    Threshold,
    Knapsack,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum EvalMode {
    PlugIn,
    #[default]
    CrossValidated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EffectRequest {
    Value,
    OteVsTreated,
    OteVsControl,
    Hte,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnerConfig {
    pub propensity: Vec<LearnerSpec>,
    pub outcome: Vec<LearnerSpec>,
    /// Library for a smoothed CATE function of the segmentation columns.
    /// Empty disables it.
    pub cate: Vec<LearnerSpec>,
    pub outcome_model: OutcomeModel,
    pub segment_indicator: bool,
    pub selection_folds: usize,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        LearnerConfig {
            propensity: vec![LearnerSpec::Mean, LearnerSpec::logistic(), LearnerSpec::Knn { k: 25 }],
            outcome: vec![LearnerSpec::Mean, LearnerSpec::linear(), LearnerSpec::Knn { k: 25 }],
            cate: vec![LearnerSpec::StratifiedMean],
            outcome_model: OutcomeModel::ArmSpecific,
            segment_indicator: true,
            selection_folds: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmentConfig {
    pub theta: f64,
    pub alpha: f64,
    pub correction: Correction,
    pub rule_mode: RuleMode,
    /// Threshold mode: treat only segments whose adjusted test rejects.
    pub require_significance: bool,
    /// Delimited file with the segmentation columns and a `cost` column.
    pub costs: Option<PathBuf>,
    pub budget: Option<f64>,
    pub objective: KnapsackObjective,
    pub candidacy: Candidacy,
    pub resolution: Option<f64>,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        SegmentConfig {
            theta: 0.0,
            alpha: 0.05,
            correction: Correction::Holm,
            rule_mode: RuleMode::Threshold,
            require_significance: true,
            costs: None,
            budget: None,
            objective: KnapsackObjective::Weighted,
            candidacy: Candidacy::PointEstimate,
            resolution: None,
        }
    }
}

impl SegmentConfig {
    pub fn knapsack_options(&self) -> KnapsackOptions {
        KnapsackOptions {
            objective: self.objective,
            candidacy: self.candidacy,
            resolution: self.resolution,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AssessConfig {
    pub effects: Vec<EffectRequest>,
    pub eval_mode: EvalMode,
}

impl Default for AssessConfig {
    fn default() -> Self {
        AssessConfig {
            effects: vec![
                EffectRequest::Value,
                EffectRequest::OteVsTreated,
                EffectRequest::OteVsControl,
                EffectRequest::Hte,
            ],
            eval_mode: EvalMode::CrossValidated,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub out: PathBuf,
    pub cache: Option<PathBuf>,
    pub rule: Option<PathBuf>,
    pub seed: u64,
    pub folds: usize,
    pub epsilon: f64,
    pub known_prob: Option<f64>,
    pub roles: ColumnRoles,
    pub learners: LearnerConfig,
    pub segment: SegmentConfig,
    pub assess: AssessConfig,
    pub simulate: DgpSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: None,
            out: PathBuf::from("out"),
            cache: None,
            rule: None,
            seed: 1,
            folds: 10,
            epsilon: DEFAULT_EPSILON,
            known_prob: None,
            roles: DgpSpec::roles(),
            learners: LearnerConfig::default(),
            segment: SegmentConfig::default(),
            assess: AssessConfig::default(),
            simulate: DgpSpec::default(),
        }
    }
}

/// Flags shared by every subcommand. Each overrides its config key.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Input data for calculate/segment/assess; output path for simulate.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Nuisance cache path (default: <out>/nuisance_cache.json).
    #[arg(long)]
    pub cache: Option<PathBuf>,
    /// Rule file path (default: <out>/rule.json).
    #[arg(long)]
    pub rule: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of cross-fitting folds.
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    pub theta: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// holm, bonferroni or none.
    #[arg(long)]
    pub correction: Option<Correction>,
    #[arg(long)]
    pub budget: Option<f64>,
    /// Cost file for knapsack mode.
    #[arg(long)]
    pub costs: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub rule_mode: Option<RuleMode>,
    #[arg(long, value_enum)]
    pub eval_mode: Option<EvalMode>,
    /// Known randomisation probability; skips propensity fitting.
    #[arg(long)]
    pub known_prob: Option<f64>,
    /// Propensity truncation level.
    #[arg(long)]
    pub epsilon: Option<f64>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::config(format!("invalid configuration: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Flag > config file > default.
    pub fn resolve(flags: &Overrides) -> Result<Self, CliError> {
        let mut cfg = match &flags.config {
            Some(path) => Self::load(path)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($flag:expr => $($field:tt)+) => {
                if let Some(v) = $flag.clone() {
                    cfg.$($field)+ = v;
                }
            };
        }
        set!(flags.out => out);
        set!(flags.seed => seed);
        set!(flags.seed => simulate.seed);
        set!(flags.folds => folds);
        set!(flags.epsilon => epsilon);
        set!(flags.theta => segment.theta);
        set!(flags.alpha => segment.alpha);
        set!(flags.correction => segment.correction);
        set!(flags.rule_mode => segment.rule_mode);
        set!(flags.eval_mode => assess.eval_mode);
        if flags.data.is_some() {
            cfg.data = flags.data.clone();
        }
        if flags.cache.is_some() {
            cfg.cache = flags.cache.clone();
        }
        if flags.rule.is_some() {
            cfg.rule = flags.rule.clone();
        }
        if flags.known_prob.is_some() {
            cfg.known_prob = flags.known_prob;
        }
        if flags.budget.is_some() {
            cfg.segment.budget = flags.budget;
        }
        if flags.costs.is_some() {
            cfg.segment.costs = flags.costs.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::config(m));
        if self.folds < 2 {
            return bad(format!("folds must be >= 2, got {}", self.folds));
        }
        if !(self.segment.alpha > 0.0 && self.segment.alpha < 1.0) {
            return bad(format!("alpha must lie in (0, 1), got {}", self.segment.alpha));
        }
        if self.segment.theta.is_nan() {
            return bad("theta must be a number".into());
        }
        if let Some(b) = self.segment.budget {
            if !(b >= 0.0 && b.is_finite()) {
                return bad(format!("budget must be finite and >= 0, got {b}"));
            }
        }
        self.roles.validate().map_err(|e| CliError::config(e.to_string()))?;
        self.nuisance_config()?.validate().map_err(|e| CliError::config(e.to_string()))?;
        for spec in &self.learners.cate {
            spec.validate().map_err(|e| CliError::config(e.to_string()))?;
        }
        Ok(())
    }

    pub fn nuisance_config(&self) -> Result<NuisanceConfig, CliError> {
        Ok(NuisanceConfig {
            propensity_library: self.learners.propensity.clone(),
            outcome_library: self.learners.outcome.clone(),
            truncation: TruncationPolicy::new(self.epsilon).map_err(|e| CliError::config(e.to_string()))?,
            known_propensity: self.known_prob,
            outcome_model: self.learners.outcome_model,
            segment_indicator: self.learners.segment_indicator,
            selection_folds: self.learners.selection_folds,
            selection_seed: self.seed,
        })
    }

    pub fn data_path(&self) -> Result<&Path, CliError> {
        self.data
            .as_deref()
            .ok_or_else(|| CliError::config("no data file given (--data or `data` in config)".into()))
    }

    pub fn cache_path(&self) -> PathBuf {
        self.cache.clone().unwrap_or_else(|| self.out.join("nuisance_cache.json"))
    }

    pub fn rule_path(&self) -> PathBuf {
        self.rule.clone().unwrap_or_else(|| self.out.join("rule.json"))
    }
}
