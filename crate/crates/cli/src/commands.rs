//! The four subcommands. Each computes everything before writing, so a
//! failure leaves no partial outputs behind.

use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use causal_segments::cache::{fingerprint, write_atomic, NuisanceCache};
use causal_segments::cate::{
    estimate_cate_by_segment, fit_cate_function, test_segments, Correction, Decision,
};
use causal_segments::dataset::{
    build_segment_index, partition_folds_stratified, ExperimentDataset, RawColumn, RawTable, SegmentIndex,
    SegmentKey,
};
use causal_segments::effects::{
    estimate_cross_validated, estimate_hte, estimate_ote, estimate_value, EffectKind, RuleEffectEstimate,
    RuleLearner,
};
use causal_segments::learners::Selection;
use causal_segments::nuisance::{compute_pseudo_outcome, cross_fit_nuisance};
use causal_segments::rules::{knapsack_rule, threshold_rule, CostSpec, KnapsackSolution, Provenance, TreatmentRule};
use causal_segments::simgen::{self, OracleTruth};
use serde::{Deserialize, Serialize};

use crate::config::{EffectRequest, EvalMode, RuleMode, RunConfig};
use crate::error::{CliError, Stage};
use crate::output;

pub const CATE_TABLE_CSV: &str = "cate_table.csv";
pub const CATE_TABLE_JSON: &str = "cate_table.json";
pub const CATE_PLOT_CSV: &str = "cate_plot.csv";
pub const CATE_MODEL_JSON: &str = "cate_model.json";
pub const SEGMENT_TABLE_CSV: &str = "segment_table.csv";
pub const SEGMENT_TABLE_JSON: &str = "segment_table.json";
pub const SEGMENT_PLOT_CSV: &str = "segment_plot.csv";
pub const EFFECTS_JSON: &str = "effects.json";
pub const EFFECTS_TXT: &str = "effects.txt";
pub const SIMULATED_CSV: &str = "simulated.csv";
pub const TRUTH_JSON: &str = "truth.json";

/// Files a command produced, for reporting.
pub type Written = Vec<PathBuf>;

fn read_data(path: &Path) -> Result<(Vec<u8>, String), CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::data(format!("cannot read {}: {e}", path.display())))?;
    let fp = fingerprint(&bytes);
    Ok((bytes, fp))
}

fn parse_dataset(
    stage: &'static str,
    bytes: &[u8],
    path: &Path,
    roles: &causal_segments::dataset::ColumnRoles,
) -> Result<ExperimentDataset, CliError> {
    let table = RawTable::from_bytes(bytes, &path.display().to_string()).stage(stage)?;
    ExperimentDataset::from_table(&table, roles).map_err(|e| {
        let mut err = CliError::from_core(stage, e);
        // Role names absent from the file are a data problem here, not a
        // configuration one.
        if matches!(err.kind, crate::error::ExitKind::Config) {
            err.kind = crate::error::ExitKind::Data;
        }
        err
    })
}

fn write_all(out: &Path, files: Vec<(PathBuf, Vec<u8>)>) -> Result<Written, CliError> {
    std::fs::create_dir_all(out)
        .map_err(|e| CliError::config(format!("cannot create output directory {}: {e}", out.display())))?;
    let mut written = Vec::with_capacity(files.len());
    for (path, bytes) in files {
        write_atomic(&path, &bytes).stage("write")?;
        written.push(path);
    }
    Ok(written)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CateModelFile {
    selection: Selection,
    /// Fitted CATE function evaluated at each segment.
    fitted: BTreeMap<String, f64>,
}

/// Cross-fits the nuisances, caches them with the pseudo-outcome, and
/// writes the segment CATE table.
pub fn calculate(cfg: &RunConfig) -> Result<Written, CliError> {
    let data_path = cfg.data_path()?;
    let (bytes, fp) = read_data(data_path)?;
    let data = parse_dataset("calculate", &bytes, data_path, &cfg.roles)?;
    let folds = partition_folds_stratified(data.treatment(), cfg.folds, cfg.seed).stage("calculate")?;
    let nuisance_cfg = cfg.nuisance_config()?;
    let nuis = cross_fit_nuisance(&data, &folds, &nuisance_cfg).stage("calculate")?;
    let d = compute_pseudo_outcome(&data, &nuis).stage("calculate")?;
    let idx = build_segment_index(&data);
    let table = estimate_cate_by_segment(&d, &idx, cfg.segment.alpha).stage("calculate")?;

    let cate_model = if cfg.learners.cate.is_empty() {
        None
    } else {
        let v = data.segmentation_features();
        let (model, selection) =
            fit_cate_function(&d, &v, &cfg.learners.cate, cfg.learners.selection_folds, cfg.seed).stage("calculate")?;
        let pred = causal_segments::learners::predict(&model, &v).stage("calculate")?;
        let mut fitted = BTreeMap::new();
        for (i, &s) in idx.membership.iter().enumerate() {
            fitted.entry(idx.segments[s].label()).or_insert(pred[i]);
        }
        Some(CateModelFile { selection, fitted })
    };

    let cache = NuisanceCache::new(fp, cfg.roles.clone(), nuisance_cfg, cfg.seed, nuis, &d);
    let mut files = vec![
        (cfg.cache_path(), cache.to_json()),
        (cfg.out.join(CATE_TABLE_CSV), output::cate_table_csv(&table)),
        (cfg.out.join(CATE_TABLE_JSON), output::json_bytes(&table)),
        (cfg.out.join(CATE_PLOT_CSV), output::plot_csv(&table)),
    ];
    if let Some(m) = &cate_model {
        files.push((cfg.out.join(CATE_MODEL_JSON), output::json_bytes(m)));
    }
    if let Some(parent) = cfg.cache_path().parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)
            .map_err(|e| CliError::config(format!("cannot create {}: {e}", parent.display())))?;
    }
    let written = write_all(&cfg.out, files)?;

    println!(
        "calculate: {} units, {} segments, K = {}, pseudo-outcome mean {}",
        data.n(),
        table.estimates.len(),
        cfg.folds,
        output::format_g(d.mean, 6)
    );
    if cache.estimates.truncated > 0 {
        println!("calculate: {} propensities truncated at epsilon = {}", cache.estimates.truncated, cfg.epsilon);
    }
    for w in &table.warnings {
        println!("warning: {w}");
    }
    Ok(written)
}

/// Loads the cache and the dataset it was computed from, refusing a cache
/// whose data fingerprint no longer matches.
fn load_cached(stage: &'static str, cfg: &RunConfig) -> Result<(NuisanceCache, ExperimentDataset), CliError> {
    let cache = NuisanceCache::load(&cfg.cache_path()).stage(stage)?;
    let data_path = cfg.data_path()?;
    let (bytes, fp) = read_data(data_path)?;
    cache.check_fresh(&fp).stage(stage)?;
    if cache.roles != cfg.roles {
        return Err(CliError::from_core(
            stage,
            causal_segments::Error::MalformedCache("cache was computed with different column roles".into()),
        ));
    }
    let data = parse_dataset(stage, &bytes, data_path, &cache.roles)?;
    if cache.pseudo_outcomes.len() != data.n() {
        return Err(CliError::from_core(
            stage,
            causal_segments::Error::Misaligned(format!(
                "cache covers {} units, data has {}",
                cache.pseudo_outcomes.len(),
                data.n()
            )),
        ));
    }
    Ok((cache, data))
}

fn load_costs(path: &Path, columns: &[String], budget: f64) -> Result<CostSpec, CliError> {
    let table = RawTable::from_path(path).stage("costs")?;
    let text = |name: &str| -> Result<Vec<String>, CliError> {
        let i = table
            .header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::data(format!("cost file {} lacks column `{name}`", path.display())))?;
        Ok(match &table.columns[i] {
            RawColumn::Text(v) => v.clone(),
            RawColumn::Numbers(v) => v.iter().map(|x| x.to_string()).collect(),
        })
    };
    let key_cols: Vec<Vec<String>> = columns.iter().map(|c| text(c)).collect::<Result<_, _>>()?;
    let cost_col = text("cost")?;
    let mut costs = BTreeMap::new();
    for (row, c) in cost_col.iter().enumerate() {
        let cost: f64 = c
            .trim()
            .parse()
            .map_err(|_| CliError::data(format!("cost file line {}: `{c}` is not a number", row + 2)))?;
        let key = SegmentKey(key_cols.iter().map(|col| col[row].clone()).collect());
        if costs.insert(key.clone(), cost).is_some() {
            return Err(CliError::data(format!("cost file repeats segment {key}")));
        }
    }
    CostSpec::new(costs, budget).stage("costs")
}

fn knapsack_costs(cfg: &RunConfig, columns: &[String]) -> Result<CostSpec, CliError> {
    let path = cfg
        .segment
        .costs
        .as_deref()
        .ok_or_else(|| CliError::config("knapsack mode needs a cost file (--costs)".into()))?;
    let budget = cfg
        .segment
        .budget
        .ok_or_else(|| CliError::config("knapsack mode needs a budget (--budget)".into()))?;
    load_costs(path, columns, budget)
}

/// The rule artifact passed from segment to assess.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RuleFile {
    /// Fingerprint of the data the rule was learned from.
    pub fingerprint: String,
    pub mode: RuleMode,
    pub theta: f64,
    pub alpha: f64,
    pub correction: Correction,
    pub rule: TreatmentRule,
    pub knapsack: Option<KnapsackSolution>,
}

/// Tests the cached CATE estimates and applies a threshold or knapsack
/// rule. No model is refitted.
pub fn segment(cfg: &RunConfig) -> Result<Written, CliError> {
    let (cache, data) = load_cached("segment", cfg)?;
    let idx = build_segment_index(&data);
    let d = cache.pseudo_outcomes();
    let s = &cfg.segment;
    let table = estimate_cate_by_segment(&d, &idx, s.alpha).stage("segment")?;
    let mut tested = test_segments(&table, s.theta, s.correction, s.alpha).stage("segment")?;
    let (rule, knapsack) = match s.rule_mode {
        RuleMode::Threshold => (
            threshold_rule(&tested, s.theta, s.alpha, s.require_significance).stage("segment")?,
            None,
        ),
        RuleMode::Knapsack => {
            let costs = knapsack_costs(cfg, &idx.columns)?;
            let (rule, solution) = knapsack_rule(&tested, &costs, &s.knapsack_options()).stage("segment")?;
            (rule, Some(solution))
        }
    };
    for e in tested.estimates.iter_mut() {
        e.decision = if rule.treats(&e.segment) { Decision::Treat } else { Decision::Hold };
    }
    let rule_file = RuleFile {
        fingerprint: cache.fingerprint.clone(),
        mode: s.rule_mode,
        theta: s.theta,
        alpha: s.alpha,
        correction: s.correction,
        rule,
        knapsack,
    };
    let files = vec![
        (cfg.rule_path(), output::json_bytes(&rule_file)),
        (cfg.out.join(SEGMENT_TABLE_CSV), output::cate_table_csv(&tested)),
        (cfg.out.join(SEGMENT_TABLE_JSON), output::json_bytes(&tested)),
        (cfg.out.join(SEGMENT_PLOT_CSV), output::plot_csv(&tested)),
    ];
    let written = write_all(&cfg.out, files)?;
    let treated: Vec<String> = rule_file.rule.treat_set.iter().map(|k| k.to_string()).collect();
    println!(
        "segment: {} of {} segments treated: {}",
        treated.len(),
        tested.estimates.len(),
        if treated.is_empty() { "none".into() } else { treated.join(" ") }
    );
    if let Some(k) = &rule_file.knapsack {
        println!(
            "segment: knapsack objective {}, spend {} of budget {}",
            output::format_g(k.objective, 6),
            output::format_g(k.spend, 6),
            output::format_g(cfg.segment.budget.unwrap_or(0.0), 6)
        );
    }
    Ok(written)
}

fn rule_learner(cfg: &RunConfig, idx: &SegmentIndex) -> Result<RuleLearner, CliError> {
    let s = &cfg.segment;
    Ok(match s.rule_mode {
        RuleMode::Threshold => RuleLearner::Threshold {
            theta: s.theta,
            alpha: s.alpha,
            correction: s.correction,
            require_significance: s.require_significance,
        },
        RuleMode::Knapsack => RuleLearner::Knapsack {
            costs: knapsack_costs(cfg, &idx.columns)?,
            options: s.knapsack_options(),
            theta: s.theta,
            alpha: s.alpha,
            correction: s.correction,
        },
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EffectsReport {
    pub rule: Provenance,
    pub treat_set: Vec<SegmentKey>,
    pub estimates: Vec<RuleEffectEstimate>,
}

fn effect_kind(req: EffectRequest) -> EffectKind {
    match req {
        EffectRequest::Value => EffectKind::Value,
        EffectRequest::OteVsTreated => EffectKind::Ote { static_arm: 1 },
        EffectRequest::OteVsControl => EffectKind::Ote { static_arm: 0 },
        EffectRequest::Hte => EffectKind::Hte,
    }
}

/// Estimates the requested population effects of the rule from the cached
/// nuisances.
pub fn assess(cfg: &RunConfig) -> Result<Written, CliError> {
    let (cache, data) = load_cached("assess", cfg)?;
    let rule_path = cfg.rule_path();
    let text = std::fs::read(&rule_path).map_err(|e| {
        CliError::config(format!("cannot read rule file {} (run segment first): {e}", rule_path.display()))
    })?;
    let rule_file: RuleFile = serde_json::from_slice(&text)
        .map_err(|e| CliError::data(format!("malformed rule file {}: {e}", rule_path.display())))?;
    rule_file.rule.check_consistency().stage("assess")?;
    if rule_file.fingerprint != cache.fingerprint {
        return Err(CliError::from_core(
            "assess",
            causal_segments::Error::StaleCache {
                expected: cache.fingerprint.clone(),
                found: rule_file.fingerprint.clone(),
            },
        ));
    }
    let idx = build_segment_index(&data);
    let d = cache.pseudo_outcomes();
    let nuis = &cache.estimates;
    let alpha = cfg.segment.alpha;
    let rule = &rule_file.rule;

    let mut requests = cfg.assess.effects.clone();
    requests.dedup();
    let learner = match cfg.assess.eval_mode {
        EvalMode::CrossValidated => Some(rule_learner(cfg, &idx)?),
        EvalMode::PlugIn => None,
    };
    let mut estimates = Vec::with_capacity(requests.len());
    for req in requests {
        let kind = effect_kind(req);
        let est = match &learner {
            Some(l) => estimate_cross_validated(kind, l, &data, nuis, &d, alpha),
            None => match kind {
                EffectKind::Value => estimate_value(rule, &data, nuis, alpha),
                EffectKind::Ote { static_arm } => estimate_ote(rule, static_arm, &data, nuis, alpha),
                EffectKind::Hte => estimate_hte(rule, &d, &idx, alpha),
            },
        }
        .stage("assess")?;
        estimates.push(est);
    }
    let report = EffectsReport {
        rule: rule.provenance.clone(),
        treat_set: rule.treat_set.clone(),
        estimates,
    };
    let summary = output::effects_text(&report.estimates, &[]);
    let files = vec![
        (cfg.out.join(EFFECTS_JSON), output::json_bytes(&report)),
        (cfg.out.join(EFFECTS_TXT), summary.clone().into_bytes()),
    ];
    let written = write_all(&cfg.out, files)?;
    print!("{summary}");
    Ok(written)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TruthFile {
    pub spec: simgen::DgpSpec,
    /// Rules in `truth.rules` order: oracle-optimal, treat all, treat none.
    pub rule_names: Vec<String>,
    pub truth: OracleTruth,
}

/// Generates a synthetic dataset and its oracle truths.
pub fn simulate(cfg: &RunConfig) -> Result<Written, CliError> {
    let spec = &cfg.simulate;
    let sim = simgen::simulate(spec).stage("simulate")?;
    let keys: Vec<SegmentKey> = spec.segments.iter().map(|s| s.key()).collect();
    let positive: BTreeSet<SegmentKey> = spec
        .segments
        .iter()
        .filter(|s| spec.true_cate(s) > 0.0)
        .map(|s| s.key())
        .collect();
    let all: BTreeSet<SegmentKey> = keys.iter().cloned().collect();
    let rules = [
        TreatmentRule::new(Provenance::External, &keys, &positive),
        TreatmentRule::new(Provenance::Static { arm: 1 }, &keys, &all),
        TreatmentRule::new(Provenance::Static { arm: 0 }, &keys, &BTreeSet::new()),
    ];
    let truth = simgen::oracle_truth(spec, &rules).stage("simulate")?;
    let data_path = cfg.data.clone().unwrap_or_else(|| cfg.out.join(SIMULATED_CSV));
    let truth_file = TruthFile {
        spec: spec.clone(),
        rule_names: vec!["oracle-optimal".into(), "treat-all".into(), "treat-none".into()],
        truth,
    };
    if let Some(parent) = data_path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)
            .map_err(|e| CliError::config(format!("cannot create {}: {e}", parent.display())))?;
    }
    let files = vec![
        (data_path, sim.table.to_csv_bytes()),
        (cfg.out.join(TRUTH_JSON), output::json_bytes(&truth_file)),
    ];
    let written = write_all(&cfg.out, files)?;

    println!("simulate: {} units, seed {}", spec.n, spec.seed);
    println!("{:<10} {:>8} {:>12} {:>12}", "segment", "count", "proportion", "true CATE");
    for (j, seg) in truth_file.truth.segments.iter().enumerate() {
        let spec_pos = spec.segments.iter().position(|s| s.key() == seg.segment).unwrap_or(j);
        let count = sim.segment.iter().filter(|&&s| s == spec_pos).count();
        println!(
            "{:<10} {:>8} {:>12} {:>12}",
            seg.segment.label(),
            count,
            output::format_g(count as f64 / spec.n as f64, 4),
            output::format_g(seg.true_cate, 6)
        );
    }
    Ok(written)
}
