//! Estimators checked against independently coded formulas and known truths.

use std::collections::BTreeSet;
use std::path::PathBuf;

use causal_segments::cate::Correction;
use causal_segments::dataset::{
    build_segment_index, partition_folds_stratified, ColumnRoles, ExperimentDataset, FoldAssignment, RawColumn,
    RawTable, SegmentKey,
};
use causal_segments::effects::{
    cross_validated_assignment, estimate_cross_validated, estimate_cv_rule_value, estimate_hte, estimate_ote,
    estimate_value, value_contributions, EffectKind, RuleLearner,
};
use causal_segments::nuisance::{
    compute_pseudo_outcome, cross_fit_nuisance, NuisanceConfig, NuisanceEstimates, OutcomeModel, PseudoOutcomes,
};
use causal_segments::rules::{static_rule, Provenance, TreatmentRule};
use causal_segments::simgen::{self, DgpSpec, OutcomeSpec, SegmentSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn dataset(a: &[f64], y: &[f64], w: &[f64]) -> ExperimentDataset {
    let table = RawTable {
        header: vec!["y".into(), "a".into(), "w".into()],
        columns: vec![
            RawColumn::Numbers(y.to_vec()),
            RawColumn::Numbers(a.to_vec()),
            RawColumn::Numbers(w.to_vec()),
        ],
    };
    let roles = ColumnRoles {
        outcome: "y".into(),
        treatment: "a".into(),
        adjustment: vec!["w".into()],
        segmentation: vec!["w".into()],
    };
    ExperimentDataset::from_table(&table, &roles).unwrap()
}

fn estimates(g: Vec<f64>, q0: Vec<f64>, q1: Vec<f64>) -> NuisanceEstimates {
    let n = g.len();
    NuisanceEstimates {
        g,
        q0,
        q1,
        folds: FoldAssignment {
            k: 2,
            seed: 0,
            fold_of: (0..n).map(|i| i % 2).collect(),
        },
        epsilon: 0.01,
        truncated: 0,
        selections: Vec::new(),
    }
}

/// Random units with arbitrary (not necessarily consistent) nuisances.
fn random_world(n: usize, seed: u64) -> (ExperimentDataset, NuisanceEstimates) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut a = Vec::new();
    let mut y = Vec::new();
    let mut w = Vec::new();
    let (mut g, mut q0, mut q1) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..n {
        a.push(f64::from(u8::from(rng.random::<bool>())));
        y.push(rng.random_range(-5.0..5.0));
        w.push(f64::from(rng.random_range(0..4u8)));
        g.push(rng.random_range(0.02..0.98));
        q0.push(rng.random_range(-3.0..3.0));
        q1.push(rng.random_range(-3.0..3.0));
    }
    (dataset(&a, &y, &w), estimates(g, q0, q1))
}

#[test]
fn pseudo_outcome_matches_direct_formula() {
    let (data, nuis) = random_world(1000, 11);
    let d = compute_pseudo_outcome(&data, &nuis).unwrap();
    for i in 0..data.n() {
        let a = data.treatment()[i];
        let p_a = if a == 1 { nuis.g[i] } else { 1.0 - nuis.g[i] };
        let q_a = if a == 1 { nuis.q1[i] } else { nuis.q0[i] };
        let sign = 2.0 * f64::from(a) - 1.0;
        let direct = sign / p_a * (data.outcome()[i] - q_a) + nuis.q1[i] - nuis.q0[i];
        assert!((d.values[i] - direct).abs() <= 1e-12 * direct.abs().max(1.0));
    }
}

fn aipw_arm_mean(data: &ExperimentDataset, nuis: &NuisanceEstimates, arm: u8) -> f64 {
    let n = data.n();
    (0..n)
        .map(|i| {
            let a = data.treatment()[i];
            let y = data.outcome()[i];
            let (p, q) = if arm == 1 { (nuis.g[i], nuis.q1[i]) } else { (1.0 - nuis.g[i], nuis.q0[i]) };
            let indicator = if a == arm { 1.0 } else { 0.0 };
            indicator * (y - q) / p + q
        })
        .sum::<f64>()
        / n as f64
}

#[test]
fn static_rules_match_aipw() {
    let (data, nuis) = random_world(500, 3);
    let idx = build_segment_index(&data);
    let treat_all = static_rule(1, &idx).unwrap();
    let treat_none = static_rule(0, &idx).unwrap();

    let v1 = estimate_value(&treat_all, &data, &nuis, 0.05).unwrap();
    assert!((v1.estimate - aipw_arm_mean(&data, &nuis, 1)).abs() < 1e-12);

    let ate = aipw_arm_mean(&data, &nuis, 1) - aipw_arm_mean(&data, &nuis, 0);
    let ote = estimate_ote(&treat_none, 1, &data, &nuis, 0.05).unwrap();
    assert!((ote.estimate + ate).abs() < 1e-12);

    let self_ote = estimate_ote(&treat_all, 1, &data, &nuis, 0.05).unwrap();
    assert_eq!((self_ote.estimate, self_ote.se), (0.0, 0.0));
    assert!(self_ote.ci_lower <= 0.0 && self_ote.ci_upper >= 0.0);

    // Unit-by-unit linearity of the OTE contributions.
    let mixed: BTreeSet<SegmentKey> = idx.segments.iter().take(2).cloned().collect();
    let rule = TreatmentRule::new(Provenance::External, &idx.segments, &mixed);
    let d = rule.unit_assignment(&idx).unwrap();
    let rule_phi = value_contributions(&data, &nuis, &d).unwrap();
    let static_phi = value_contributions(&data, &nuis, &vec![1; data.n()]).unwrap();
    let diff: f64 = rule_phi.iter().zip(&static_phi).map(|(a, b)| a - b).sum::<f64>() / data.n() as f64;
    let ote = estimate_ote(&rule, 1, &data, &nuis, 0.05).unwrap();
    assert!((ote.estimate - diff).abs() < 1e-12);
}

#[test]
fn saturated_world_recovers_exact_truth() {
    // Two strata of 16 units whose empirical law equals the population law:
    // P(A=1|W=0) = 1/4, P(A=1|W=1) = 1/2, and binary Y with
    // P(Y=1|A,W) = q(A,W) below.
    let g = [0.25, 0.5];
    let q = [[0.25, 0.75], [0.5, 0.25]]; // q[w][a]
    let (mut a, mut y, mut w) = (Vec::new(), Vec::new(), Vec::new());
    for wv in 0..2usize {
        for arm in 0..2usize {
            let p_arm = if arm == 1 { g[wv] } else { 1.0 - g[wv] };
            let cell = (16.0 * p_arm) as usize;
            let ones = (cell as f64 * q[wv][arm]) as usize;
            for j in 0..cell {
                a.push(arm as f64);
                y.push(if j < ones { 1.0 } else { 0.0 });
                w.push(wv as f64);
            }
        }
    }
    let data = dataset(&a, &y, &w);
    let wi: Vec<usize> = w.iter().map(|&x| x as usize).collect();
    let nuis = estimates(
        wi.iter().map(|&x| g[x]).collect(),
        wi.iter().map(|&x| q[x][0]).collect(),
        wi.iter().map(|&x| q[x][1]).collect(),
    );
    let idx = build_segment_index(&data);
    let treat: BTreeSet<SegmentKey> = [SegmentKey(vec!["0".into()])].into_iter().collect();
    let rule = TreatmentRule::new(Provenance::External, &idx.segments, &treat);

    let truth_value = 0.5 * q[0][1] + 0.5 * q[1][0];
    let truth_ote = 0.5 * (q[1][0] - q[1][1]);
    let truth_hte = (q[0][1] - q[0][0]) - (q[1][1] - q[1][0]);
    let value = estimate_value(&rule, &data, &nuis, 0.05).unwrap();
    assert!((value.estimate - truth_value).abs() < 1e-10);
    let ote = estimate_ote(&rule, 1, &data, &nuis, 0.05).unwrap();
    assert!((ote.estimate - truth_ote).abs() < 1e-10);
    let d = compute_pseudo_outcome(&data, &nuis).unwrap();
    let hte = estimate_hte(&rule, &d, &idx, 0.05).unwrap();
    assert!((hte.estimate - truth_hte).abs() < 1e-10);
}

fn simulated(spec: &DgpSpec, k: usize) -> (ExperimentDataset, NuisanceEstimates, PseudoOutcomes) {
    let data = simgen::generate(spec).unwrap();
    let folds = partition_folds_stratified(data.treatment(), k, spec.seed).unwrap();
    let cfg = NuisanceConfig {
        outcome_model: OutcomeModel::ArmSpecific,
        segment_indicator: true,
        ..NuisanceConfig::default()
    };
    let nuis = cross_fit_nuisance(&data, &folds, &cfg).unwrap();
    let d = compute_pseudo_outcome(&data, &nuis).unwrap();
    (data, nuis, d)
}

#[test]
fn cross_validated_static_rule_equals_plug_in() {
    let spec = DgpSpec { n: 1500, ..DgpSpec::default() };
    let (data, nuis, d) = simulated(&spec, 5);
    let idx = build_segment_index(&data);
    let learner = RuleLearner::Static { arm: 1 };
    let cv = estimate_cv_rule_value(&learner, &data, &nuis, &d, 0.05).unwrap();
    let plug = estimate_value(&static_rule(1, &idx).unwrap(), &data, &nuis, 0.05).unwrap();
    assert_eq!((cv.estimate, cv.se), (plug.estimate, plug.se));
}

#[test]
fn two_fold_value_matches_hand_assembly() {
    let spec = DgpSpec { n: 600, seed: 5, ..DgpSpec::default() };
    let (data, nuis, d) = simulated(&spec, 2);
    let idx = build_segment_index(&data);
    let learner = RuleLearner::Threshold {
        theta: 0.0,
        alpha: 0.05,
        correction: Correction::Holm,
        require_significance: false,
    };
    let cv = estimate_cv_rule_value(&learner, &data, &nuis, &d, 0.05).unwrap();

    let mut total = 0.0;
    for fold in 0..2 {
        // Rule from the other fold's segment means.
        let train = nuis.folds.training_units(fold);
        let mut sums = vec![(0.0, 0usize); idx.len()];
        for &i in &train {
            let s = idx.membership[i];
            sums[s].0 += d.values[i];
            sums[s].1 += 1;
        }
        let treat: BTreeSet<SegmentKey> = idx
            .segments
            .iter()
            .zip(&sums)
            .filter(|(_, &(sum, n))| n >= 2 && sum / n as f64 > 0.0)
            .map(|(k, _)| k.clone())
            .collect();
        let rule = TreatmentRule::new(Provenance::External, &idx.segments, &treat);
        let phi = value_contributions(&data, &nuis, &rule.unit_assignment(&idx).unwrap()).unwrap();
        total += nuis.folds.fold_units(fold).iter().map(|&i| phi[i]).sum::<f64>();
    }
    assert!((cv.estimate - total / data.n() as f64).abs() < 1e-12);
}

#[test]
fn segment_partition_hte_matches_grouping() {
    let (data, _, d) = simulated(&DgpSpec::default(), 5);
    let idx = build_segment_index(&data);
    let yes = ["1/0", "1/1", "2/1", "3/1", "4/0", "5/0"];
    let treat: BTreeSet<SegmentKey> = idx.segments.iter().filter(|k| yes.contains(&k.label().as_str())).cloned().collect();
    assert_eq!(treat.len(), 6);
    let rule = TreatmentRule::new(Provenance::External, &idx.segments, &treat);
    let hte = estimate_hte(&rule, &d, &idx, 0.05).unwrap();
    let (mut st, mut nt, mut sc, mut nc) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..data.n() {
        if yes.contains(&data.segment_key(i).label().as_str()) {
            st += d.values[i];
            nt += 1.0;
        } else {
            sc += d.values[i];
            nc += 1.0;
        }
    }
    assert!((hte.estimate - (st / nt - sc / nc)).abs() < 1e-12);
}

#[test]
fn separated_effects_give_stable_cross_validated_rules() {
    let segments = vec![
        SegmentSpec { num_devices: 1, is_p2plus: 0, proportion: 0.25, tau: 3.0 },
        SegmentSpec { num_devices: 2, is_p2plus: 0, proportion: 0.25, tau: -3.0 },
        SegmentSpec { num_devices: 3, is_p2plus: 1, proportion: 0.25, tau: 3.0 },
        SegmentSpec { num_devices: 4, is_p2plus: 1, proportion: 0.25, tau: -3.0 },
    ];
    let learner = RuleLearner::Threshold {
        theta: 0.0,
        alpha: 0.05,
        correction: Correction::Holm,
        require_significance: true,
    };
    let mut diffs = Vec::new();
    for rep in 0..20 {
        let spec = DgpSpec {
            n: 2000,
            seed: 100 + rep,
            segments: segments.clone(),
            newmarket_prob: 0.0,
            outcome: OutcomeSpec { sigma: 0.05, ..OutcomeSpec::default() },
            ..DgpSpec::default()
        };
        let (data, nuis, d) = simulated(&spec, 5);
        let idx = build_segment_index(&data);
        let cv = cross_validated_assignment(&learner, &d, &idx, &nuis.folds).unwrap();
        let plug_in = learner.learn(&d, &idx).unwrap();
        for rule in &cv.fold_rules {
            assert_eq!(rule.treat_set, plug_in.treat_set);
        }
        let a = estimate_cross_validated(EffectKind::Value, &learner, &data, &nuis, &d, 0.05).unwrap();
        let b = estimate_value(&plug_in, &data, &nuis, 0.05).unwrap();
        diffs.push(a.estimate - b.estimate);
    }
    assert!(diffs.iter().all(|x| x.abs() < 1e-12));
}

#[test]
fn doubly_robust_beats_naive_bias() {
    let reps = 30;
    let spec0 = DgpSpec::default();
    let truth = simgen::oracle_truth(&spec0, &[]).unwrap();
    let mut dr = vec![0.0; 10];
    let mut naive = vec![0.0; 10];
    for rep in 0..reps {
        let spec = DgpSpec { seed: 500 + rep, ..DgpSpec::default() };
        let (data, _, d) = simulated(&spec, 5);
        let idx = build_segment_index(&data);
        for (j, key) in idx.segments.iter().enumerate() {
            let units: Vec<usize> = (0..data.n()).filter(|&i| idx.membership[i] == j).collect();
            let mean_d = units.iter().map(|&i| d.values[i]).sum::<f64>() / units.len() as f64;
            let arm_mean = |arm: u8| {
                let ys: Vec<f64> =
                    units.iter().filter(|&&i| data.treatment()[i] == arm).map(|&i| data.outcome()[i]).collect();
                ys.iter().sum::<f64>() / ys.len() as f64
            };
            let t = truth.true_cate(key).unwrap();
            dr[j] += (mean_d - t) / reps as f64;
            naive[j] += (arm_mean(1) - arm_mean(0) - t) / reps as f64;
        }
    }
    for j in 0..10 {
        assert!(dr[j].abs() < naive[j].abs(), "segment {j}: dr {} naive {}", dr[j], naive[j]);
    }
}

const MC_DRAWS: usize = 1_000_000;
const MC_SEED: u64 = 2024;

fn fixture_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/default_true_cate.json")
}

/// Regenerates the frozen Monte Carlo fixture.
#[test]
#[ignore]
fn freeze_true_cate_fixture() {
    let mc = simgen::monte_carlo_cate(&DgpSpec::default(), MC_DRAWS, MC_SEED).unwrap();
    let rows: Vec<serde_json::Value> = mc
        .iter()
        .map(|(k, est, se)| serde_json::json!({ "segment": k, "true_cate": est, "mc_se": se }))
        .collect();
    let doc = serde_json::json!({ "draws_per_segment": MC_DRAWS, "seed": MC_SEED, "segments": rows });
    std::fs::write(fixture_path(), serde_json::to_string_pretty(&doc).unwrap() + "\n").unwrap();
}

#[test]
fn closed_form_truth_agrees_with_frozen_monte_carlo() {
    let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(fixture_path()).unwrap()).unwrap();
    let truth = simgen::oracle_truth(&DgpSpec::default(), &[]).unwrap();
    let rows = doc["segments"].as_array().unwrap();
    assert_eq!(rows.len(), 10);
    for row in rows {
        let key: SegmentKey = serde_json::from_value(row["segment"].clone()).unwrap();
        let mc = row["true_cate"].as_f64().unwrap();
        let se = row["mc_se"].as_f64().unwrap();
        assert!(se <= 0.005);
        assert!((mc - truth.true_cate(&key).unwrap()).abs() <= 4.0 * se, "{key}");
    }
}
