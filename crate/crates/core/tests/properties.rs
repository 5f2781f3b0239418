use std::collections::BTreeSet;

use causal_segments::cate::{adjust_p_values, estimate_cate_by_segment, test_segments, CateTable, Correction};
use causal_segments::dataset::{partition_folds_stratified, SegmentIndex, SegmentKey};
use causal_segments::effects::estimate_hte;
use causal_segments::learners::{fit, predict, FeatureKind, Features, LearnerSpec, Loss};
use causal_segments::nuisance::PseudoOutcomes;
use causal_segments::rules::knapsack::{solve, Item};
use causal_segments::rules::{knapsack_rule, threshold_rule, CostSpec, KnapsackOptions, Provenance, TreatmentRule};
use proptest::prelude::*;

fn key(s: usize) -> SegmentKey {
    SegmentKey(vec![s.to_string()])
}

fn index(labels: &[usize]) -> SegmentIndex {
    let keys: Vec<SegmentKey> = labels.iter().map(|&s| key(s)).collect();
    SegmentIndex::from_keys(vec!["v".into()], &keys)
}

/// Segment labels with at least two units each, plus pseudo-outcomes.
fn segmented() -> impl Strategy<Value = (Vec<usize>, Vec<f64>)> {
    (2usize..6)
        .prop_flat_map(|m| prop::collection::vec(0..m, 2 * m..80))
        .prop_map(|mut labels| {
            // Guarantee every segment is at least a pair.
            let m = labels.iter().max().unwrap() + 1;
            for s in 0..m {
                labels.push(s);
                labels.push(s);
            }
            labels
        })
        .prop_flat_map(|labels| {
            let n = labels.len();
            (Just(labels), prop::collection::vec(-10.0f64..10.0, n))
        })
}

fn brute_force(items: &[Item], capacity: f64) -> f64 {
    let mut best = 0.0f64;
    for mask in 0u32..(1 << items.len()) {
        let (mut v, mut w) = (0.0, 0.0);
        for (j, it) in items.iter().enumerate() {
            if mask >> j & 1 == 1 {
                v += it.value;
                w += it.weight;
            }
        }
        if w <= capacity && v > best {
            best = v;
        }
    }
    best
}

proptest! {
    #[test]
    fn folds_partition_units(labels in prop::collection::vec(0u8..2, 2..200), k in 2usize..12, seed: u64) {
        prop_assume!(k <= labels.len());
        let f = partition_folds_stratified(&labels, k, seed).unwrap();
        let mut seen = vec![0; labels.len()];
        for fold in 0..k {
            for i in f.fold_units(fold) {
                seen[i] += 1;
            }
        }
        prop_assert!(seen.iter().all(|&c| c == 1));
        let sizes = f.fold_sizes();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        for arm in 0..2u8 {
            let mut per = vec![0usize; k];
            for (i, &l) in labels.iter().enumerate() {
                if l == arm {
                    per[f.fold_of[i]] += 1;
                }
            }
            prop_assert!(per.iter().max().unwrap() - per.iter().min().unwrap() <= 1);
        }
        prop_assert_eq!(f, partition_folds_stratified(&labels, k, seed).unwrap());
    }

    #[test]
    fn proportions_and_weighted_cate((labels, d) in segmented()) {
        let idx = index(&labels);
        let total: f64 = idx.proportions.iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        let d = PseudoOutcomes::from_values(d);
        let t = estimate_cate_by_segment(&d, &idx, 0.05).unwrap();
        let weighted: f64 = t.estimates.iter().map(|e| e.proportion * e.cate).sum();
        prop_assert!((weighted - d.mean).abs() < 1e-10);
        for e in &t.estimates {
            prop_assert!(e.ci_lower <= e.cate && e.cate <= e.ci_upper && e.se >= 0.0);
        }
    }

    #[test]
    fn cate_table_is_permutation_invariant((labels, d) in segmented(), seed: u64) {
        let n = labels.len();
        let mut order: Vec<usize> = (0..n).collect();
        let mut s = seed;
        for i in (1..n).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            order.swap(i, (s >> 33) as usize % (i + 1));
        }
        let a = estimate_cate_by_segment(&PseudoOutcomes::from_values(d.clone()), &index(&labels), 0.05).unwrap();
        let pl: Vec<usize> = order.iter().map(|&i| labels[i]).collect();
        let pd: Vec<f64> = order.iter().map(|&i| d[i]).collect();
        let b = estimate_cate_by_segment(&PseudoOutcomes::from_values(pd), &index(&pl), 0.05).unwrap();
        for (x, y) in a.estimates.iter().zip(&b.estimates) {
            prop_assert_eq!(&x.segment, &y.segment);
            prop_assert_eq!(x.n, y.n);
            prop_assert!((x.cate - y.cate).abs() < 1e-10);
            prop_assert!((x.se - y.se).abs() < 1e-10);
        }
    }

    #[test]
    fn hte_decomposition((labels, d) in segmented(), pick in prop::collection::vec(any::<bool>(), 6)) {
        let idx = index(&labels);
        let treat: BTreeSet<SegmentKey> = idx.segments.iter().enumerate()
            .filter(|(j, _)| pick[*j]).map(|(_, k)| k.clone()).collect();
        prop_assume!(!treat.is_empty() && treat.len() < idx.len());
        let rule = TreatmentRule::new(Provenance::External, &idx.segments, &treat);
        let d = PseudoOutcomes::from_values(d);
        let hte = estimate_hte(&rule, &d, &idx, 0.05).unwrap();
        let in_t: Vec<bool> = idx.membership.iter().map(|&s| treat.contains(&idx.segments[s])).collect();
        let n_t = in_t.iter().filter(|&&b| b).count() as f64;
        let mean_t = d.values.iter().zip(&in_t).filter(|(_, &b)| b).map(|(x, _)| x).sum::<f64>() / n_t;
        let n_c = d.len() as f64 - n_t;
        let mean_c = d.values.iter().zip(&in_t).filter(|(_, &b)| !b).map(|(x, _)| x).sum::<f64>() / n_c;
        let p_t = n_t / d.len() as f64;
        prop_assert!((p_t * mean_t + (1.0 - p_t) * mean_c - d.mean).abs() < 1e-10);
        prop_assert!((hte.estimate - (mean_t - mean_c)).abs() < 1e-10);
    }

    #[test]
    fn holm_between_raw_and_bonferroni(raw in prop::collection::vec(0.0f64..1.0, 1..30)) {
        let holm = adjust_p_values(&raw, Correction::Holm);
        let bonf = adjust_p_values(&raw, Correction::Bonferroni);
        for ((r, h), b) in raw.iter().zip(&holm).zip(&bonf) {
            prop_assert!(r <= h && h <= b && *b <= 1.0);
        }
    }

    #[test]
    fn threshold_rule_shrinks_as_theta_rises((labels, d) in segmented(), t1 in -5.0f64..5.0, dt in 0.0f64..5.0) {
        let d = PseudoOutcomes::from_values(d);
        let table = estimate_cate_by_segment(&d, &index(&labels), 0.05).unwrap();
        for significance in [false, true] {
            let rule_at = |theta: f64| {
                let tested = test_segments(&table, theta, Correction::Holm, 0.05).unwrap();
                threshold_rule(&tested, theta, 0.05, significance).unwrap().treat_set()
            };
            prop_assert!(rule_at(t1 + dt).is_subset(&rule_at(t1)));
        }
    }

    #[test]
    fn knapsack_matches_enumeration(
        pairs in prop::collection::vec((-1.0f64..5.0, 0.0f64..3.0), 0..15),
        capacity in prop_oneof![Just(0.0), 0.0f64..10.0],
    ) {
        let items: Vec<Item> = pairs.iter().map(|&(value, weight)| Item { value, weight }).collect();
        let p = solve(&items, capacity, None);
        prop_assert!(p.spend <= capacity);
        prop_assert_eq!(p.objective, {
            let chosen: f64 = p.chosen.iter().map(|&i| items[i].value).sum();
            chosen
        });
        let best = brute_force(&items, capacity);
        prop_assert!((p.objective - best).abs() <= 1e-12 * best.abs().max(1.0));
    }

    #[test]
    fn knapsack_objective_grows_with_budget(
        rows in prop::collection::vec((0.01f64..1.0, -2.0f64..4.0, 0.1f64..3.0), 1..12),
        b1 in 0.0f64..2.0,
        db in 0.0f64..2.0,
    ) {
        let total: f64 = rows.iter().map(|r| r.0).sum();
        let summaries = rows.iter().enumerate()
            .map(|(j, &(p, cate, _))| (key(j), 50, p / total, cate, 0.1))
            .collect();
        let table = CateTable::from_summaries(vec!["v".into()], summaries, 0.05).unwrap();
        let costs: std::collections::BTreeMap<_, _> = rows.iter().enumerate().map(|(j, r)| (key(j), r.2)).collect();
        let objective_at = |budget: f64| {
            let spec = CostSpec::new(costs.clone(), budget).unwrap();
            knapsack_rule(&table, &spec, &KnapsackOptions::default()).unwrap().1
        };
        let lo = objective_at(b1);
        let hi = objective_at(b1 + db);
        prop_assert!(lo.spend <= b1 && hi.spend <= b1 + db);
        prop_assert!(hi.objective >= lo.objective - 1e-12);
    }

    #[test]
    fn ridge_shrinks_coefficients(
        rows in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0, -5.0f64..5.0), 6..40),
        l1 in 1e-6f64..1.0,
        factor in 1.0f64..100.0,
    ) {
        let x = Features::from_rows(&["a", "b"], &rows.iter().map(|r| vec![r.0, r.1]).collect::<Vec<_>>());
        let y: Vec<f64> = rows.iter().map(|r| r.2).collect();
        let norm = |ridge: f64| {
            let m = fit(&LearnerSpec::Linear { ridge }, Loss::SquaredError, &x, &y).unwrap();
            m.coefficients().unwrap().iter().map(|b| b * b).sum::<f64>()
        };
        prop_assert!(norm(l1 * factor) <= norm(l1) * (1.0 + 1e-9) + 1e-12);
    }

    #[test]
    fn stratified_mean_is_group_mean(cells in prop::collection::vec((0u8..3, -10.0f64..10.0), 1..60)) {
        let x = Features::new(
            vec!["g".into()],
            vec![FeatureKind::Categorical { levels: 3 }],
            cells.len(),
            cells.iter().map(|c| f64::from(c.0)).collect(),
        );
        let y: Vec<f64> = cells.iter().map(|c| c.1).collect();
        let m = fit(&LearnerSpec::StratifiedMean, Loss::SquaredError, &x, &y).unwrap();
        let pred = predict(&m, &x).unwrap();
        for (i, c) in cells.iter().enumerate() {
            let group: Vec<f64> = cells.iter().filter(|o| o.0 == c.0).map(|o| o.1).collect();
            let mean = group.iter().sum::<f64>() / group.len() as f64;
            prop_assert!((pred[i] - mean).abs() < 1e-10);
        }
    }
}
