//! Seeded synthetic quasi-experiment with a known data-generating process.
//!
//! Units fall into segments over `(num_devices, is_p2plus)`. Treatment is
//! confounded through `num_devices`, `baseline_ltv` and `baseline_viewing`;
//! the treatment effect is `tau(v) + newmarket_effect * is_newmarket`.
//! Because `is_newmarket` is independent of everything else, the true
//! segment CATE is `tau(v) + newmarket_effect * newmarket_prob`, and every
//! rule effect has a closed form.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::weighted::WeightedIndex;
use rand_distr::{Bernoulli, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{ColumnRoles, ExperimentDataset, RawColumn, RawTable, SegmentKey};
use crate::error::{Error, Result};
use crate::rules::TreatmentRule;
use crate::stats::mean_and_se;

pub const COLUMNS: [&str; 7] = [
    "num_devices",
    "is_p2plus",
    "is_newmarket",
    "baseline_ltv",
    "baseline_viewing",
    "treatment",
    "outcome_viewing",
];

/// Simulated propensities are clamped to this range.
pub const PROPENSITY_BOUNDS: (f64, f64) = (0.05, 0.95);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentSpec {
    pub num_devices: u32,
    pub is_p2plus: u8,
    pub proportion: f64,
    pub tau: f64,
}

impl SegmentSpec {
    pub fn key(&self) -> SegmentKey {
        SegmentKey(vec![self.num_devices.to_string(), self.is_p2plus.to_string()])
    }
}

/// How segment memberships are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Allocation {
    /// Independent categorical draws.
    #[default]
    Iid,
    /// Largest-remainder quotas, then shuffled; counts match the proportions
    /// as closely as integers allow.
    Quota,
}

/// Logistic propensity: `intercept + devices*(num_devices - 3) + ltv*baseline_ltv + viewing*baseline_viewing`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PropensitySpec {
    pub intercept: f64,
    pub devices: f64,
    pub ltv: f64,
    pub viewing: f64,
    /// Overrides the logistic model with a fixed randomisation probability.
    pub randomized: Option<f64>,
}

impl Default for PropensitySpec {
    fn default() -> Self {
        PropensitySpec {
            intercept: -1.0,
            devices: 0.25,
            ltv: 0.5,
            viewing: 0.3,
            randomized: None,
        }
    }
}

/// Control mean `intercept + devices*num_devices + p2plus*is_p2plus + ltv*baseline_ltv
/// + viewing*baseline_viewing + newmarket*is_newmarket`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutcomeSpec {
    pub intercept: f64,
    pub devices: f64,
    pub p2plus: f64,
    pub ltv: f64,
    pub viewing: f64,
    pub newmarket: f64,
    /// Extra treatment effect for new-market units.
    pub newmarket_effect: f64,
    pub sigma: f64,
}

impl Default for OutcomeSpec {
    fn default() -> Self {
        OutcomeSpec {
            intercept: 1.0,
            devices: 0.2,
            p2plus: 0.3,
            ltv: 0.8,
            viewing: 0.6,
            newmarket: 0.3,
            newmarket_effect: 0.5,
            sigma: 1.0,
        }
    }
}

/// Zero-inflated `Uniform(0, max)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZeroInflated {
    pub zero_prob: f64,
    pub max: f64,
}

impl ZeroInflated {
    pub fn mean(&self) -> f64 {
        (1.0 - self.zero_prob) * self.max / 2.0
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        let x: f64 = rng.random();
        if u < self.zero_prob {
            0.0
        } else {
            x * self.max
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DgpSpec {
    pub n: usize,
    pub seed: u64,
    pub segments: Vec<SegmentSpec>,
    pub allocation: Allocation,
    pub newmarket_prob: f64,
    pub ltv: ZeroInflated,
    pub viewing: ZeroInflated,
    pub propensity: PropensitySpec,
    pub outcome: OutcomeSpec,
}

const DEFAULT_SEGMENTS: [(u32, u8, f64, f64); 10] = [
    (1, 0, 0.0392, 0.6),
    (1, 1, 0.0862, 1.9),
    (2, 0, 0.0718, -0.6),
    (2, 1, 0.1752, 2.5),
    (3, 0, 0.0764, -1.5),
    (3, 1, 0.1796, 3.4),
    (4, 0, 0.0728, 4.3),
    (4, 1, 0.1814, -2.2),
    (5, 0, 0.0328, 5.1),
    (5, 1, 0.0846, -2.8),
];

impl Default for DgpSpec {
    fn default() -> Self {
        DgpSpec {
            n: 5000,
            seed: 20240101,
            segments: DEFAULT_SEGMENTS
                .iter()
                .map(|&(num_devices, is_p2plus, proportion, tau)| SegmentSpec {
                    num_devices,
                    is_p2plus,
                    proportion,
                    tau,
                })
                .collect(),
            allocation: Allocation::Iid,
            newmarket_prob: 0.3,
            ltv: ZeroInflated { zero_prob: 0.45, max: 3.0 },
            viewing: ZeroInflated { zero_prob: 0.45, max: 3.0 },
            propensity: PropensitySpec::default(),
            outcome: OutcomeSpec::default(),
        }
    }
}

fn check_prob(name: &str, p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidSpec(format!("{name} must lie in [0, 1], got {p}")));
    }
    Ok(())
}

impl DgpSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidSpec("n must be positive".into()));
        }
        if self.segments.is_empty() {
            return Err(Error::InvalidSpec("at least one segment is required".into()));
        }
        let mut keys: Vec<SegmentKey> = self.segments.iter().map(SegmentSpec::key).collect();
        keys.sort();
        if keys.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidSpec("duplicate segment".into()));
        }
        for s in &self.segments {
            if s.is_p2plus > 1 {
                return Err(Error::InvalidSpec(format!("is_p2plus must be 0 or 1, got {}", s.is_p2plus)));
            }
            if !(s.proportion > 0.0 && s.proportion.is_finite()) || !s.tau.is_finite() {
                return Err(Error::InvalidSpec(format!(
                    "segment {} needs a positive proportion and finite tau",
                    s.key()
                )));
            }
        }
        let total: f64 = self.segments.iter().map(|s| s.proportion).sum();
        if (total - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidSpec(format!("segment proportions sum to {total}, expected 1")));
        }
        check_prob("newmarket_prob", self.newmarket_prob)?;
        check_prob("ltv.zero_prob", self.ltv.zero_prob)?;
        check_prob("viewing.zero_prob", self.viewing.zero_prob)?;
        if !(self.ltv.max >= 0.0 && self.viewing.max >= 0.0) {
            return Err(Error::InvalidSpec("covariate maxima must be non-negative".into()));
        }
        if let Some(p) = self.propensity.randomized {
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::InvalidSpec(format!("randomized probability must lie in (0, 1), got {p}")));
            }
        }
        if !(self.outcome.sigma >= 0.0) {
            return Err(Error::InvalidSpec("sigma must be non-negative".into()));
        }
        Ok(())
    }

    /// Treatment probability for a unit, after clamping.
    pub fn propensity(&self, num_devices: f64, ltv: f64, viewing: f64) -> f64 {
        if let Some(p) = self.propensity.randomized {
            return p;
        }
        let m = &self.propensity;
        let eta = m.intercept + m.devices * (num_devices - 3.0) + m.ltv * ltv + m.viewing * viewing;
        (1.0 / (1.0 + (-eta).exp())).clamp(PROPENSITY_BOUNDS.0, PROPENSITY_BOUNDS.1)
    }

    /// `E[Y | A = a, W]`.
    pub fn mean_outcome(&self, seg: &SegmentSpec, newmarket: f64, ltv: f64, viewing: f64, a: u8) -> f64 {
        let o = &self.outcome;
        let control = o.intercept
            + o.devices * f64::from(seg.num_devices)
            + o.p2plus * f64::from(seg.is_p2plus)
            + o.ltv * ltv
            + o.viewing * viewing
            + o.newmarket * newmarket;
        control + f64::from(a) * (seg.tau + o.newmarket_effect * newmarket)
    }

    pub fn true_cate(&self, seg: &SegmentSpec) -> f64 {
        seg.tau + self.outcome.newmarket_effect * self.newmarket_prob
    }

    fn control_mean(&self, seg: &SegmentSpec) -> f64 {
        self.mean_outcome(seg, self.newmarket_prob, self.ltv.mean(), self.viewing.mean(), 0)
    }

    pub fn roles() -> ColumnRoles {
        ColumnRoles {
            outcome: "outcome_viewing".into(),
            treatment: "treatment".into(),
            adjustment: COLUMNS[..5].iter().map(|s| s.to_string()).collect(),
            segmentation: vec!["num_devices".into(), "is_p2plus".into()],
        }
    }
}

fn segment_draws(spec: &DgpSpec, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let weights: Vec<f64> = spec.segments.iter().map(|s| s.proportion).collect();
    match spec.allocation {
        Allocation::Iid => {
            let dist = WeightedIndex::new(&weights).expect("validated proportions");
            (0..spec.n).map(|_| dist.sample(rng)).collect()
        }
        Allocation::Quota => {
            let total: f64 = weights.iter().sum();
            let exact: Vec<f64> = weights.iter().map(|w| w / total * spec.n as f64).collect();
            let mut counts: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
            let mut order: Vec<usize> = (0..exact.len()).collect();
            order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
            let short = spec.n - counts.iter().sum::<usize>();
            for &j in order.iter().take(short) {
                counts[j] += 1;
            }
            let mut out: Vec<usize> = counts.iter().enumerate().flat_map(|(j, &c)| std::iter::repeat_n(j, c)).collect();
            rand::seq::SliceRandom::shuffle(out.as_mut_slice(), rng);
            out
        }
    }
}

/// Simulated table with the unit-level truth used to generate it.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub table: RawTable,
    pub propensity: Vec<f64>,
    /// Index into `spec.segments` per unit.
    pub segment: Vec<usize>,
}

pub fn simulate(spec: &DgpSpec) -> Result<Simulation> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let segment = segment_draws(spec, &mut rng);
    let newmarket = Bernoulli::new(spec.newmarket_prob).expect("validated probability");
    let n = spec.n;
    let mut cols: Vec<Vec<f64>> = vec![Vec::with_capacity(n); COLUMNS.len()];
    let mut propensity = Vec::with_capacity(n);
    for &j in &segment {
        let seg = &spec.segments[j];
        let nm = f64::from(u8::from(newmarket.sample(&mut rng)));
        let ltv = spec.ltv.sample(&mut rng);
        let viewing = spec.viewing.sample(&mut rng);
        let nd = f64::from(seg.num_devices);
        let g = spec.propensity(nd, ltv, viewing);
        let a = u8::from(rng.random::<f64>() < g);
        let noise: f64 = StandardNormal.sample(&mut rng);
        let y = spec.mean_outcome(seg, nm, ltv, viewing, a) + spec.outcome.sigma * noise;
        for (c, v) in cols.iter_mut().zip([nd, f64::from(seg.is_p2plus), nm, ltv, viewing, f64::from(a), y]) {
            c.push(v);
        }
        propensity.push(g);
    }
    Ok(Simulation {
        table: RawTable {
            header: COLUMNS.iter().map(|s| s.to_string()).collect(),
            columns: cols.into_iter().map(RawColumn::Numbers).collect(),
        },
        propensity,
        segment,
    })
}

pub fn generate(spec: &DgpSpec) -> Result<ExperimentDataset> {
    let sim = simulate(spec)?;
    ExperimentDataset::from_table(&sim.table, &DgpSpec::roles())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentTruth {
    pub segment: SegmentKey,
    pub proportion: f64,
    pub true_cate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleTruth {
    pub treat_set: Vec<SegmentKey>,
    pub value: f64,
    pub ote_vs_control: f64,
    pub ote_vs_treated: f64,
    /// `None` when the rule treats every segment or none.
    pub hte: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleTruth {
    pub segments: Vec<SegmentTruth>,
    pub ate: f64,
    pub rules: Vec<RuleTruth>,
}

impl OracleTruth {
    pub fn true_cate(&self, key: &SegmentKey) -> Option<f64> {
        self.segments.iter().find(|s| &s.segment == key).map(|s| s.true_cate)
    }
}

/// Exact population truths. Segments absent from a rule are treated as
/// control.
pub fn oracle_truth(spec: &DgpSpec, rules: &[TreatmentRule]) -> Result<OracleTruth> {
    spec.validate()?;
    let total: f64 = spec.segments.iter().map(|s| s.proportion).sum();
    let mut segments: Vec<SegmentTruth> = spec
        .segments
        .iter()
        .map(|s| SegmentTruth {
            segment: s.key(),
            proportion: s.proportion / total,
            true_cate: spec.true_cate(s),
        })
        .collect();
    segments.sort_by(|a, b| a.segment.cmp(&b.segment));
    let ate = segments.iter().map(|s| s.proportion * s.true_cate).sum();
    let base: f64 = spec.segments.iter().map(|s| s.proportion / total * spec.control_mean(s)).sum();

    let rules = rules
        .iter()
        .map(|rule| {
            let treated = |s: &SegmentTruth| rule.treats(&s.segment);
            let gain: f64 = segments.iter().filter(|s| treated(s)).map(|s| s.proportion * s.true_cate).sum();
            let p_t: f64 = segments.iter().filter(|s| treated(s)).map(|s| s.proportion).sum();
            let hte = (segments.iter().any(treated) && !segments.iter().all(treated))
                .then(|| gain / p_t - (ate - gain) / (1.0 - p_t));
            RuleTruth {
                treat_set: rule.treat_set().into_iter().collect(),
                value: base + gain,
                ote_vs_control: gain,
                ote_vs_treated: gain - ate,
                hte,
            }
        })
        .collect();
    Ok(OracleTruth { segments, ate, rules })
}

/// Monte Carlo estimate of each segment's CATE from `draws` units per
/// segment, returning `(key, estimate, standard error)` in key order.
pub fn monte_carlo_cate(spec: &DgpSpec, draws: usize, seed: u64) -> Result<Vec<(SegmentKey, f64, f64)>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let newmarket = Bernoulli::new(spec.newmarket_prob).expect("validated probability");
    let mut out: Vec<(SegmentKey, f64, f64)> = spec
        .segments
        .iter()
        .map(|seg| {
            let diffs: Vec<f64> = (0..draws)
                .map(|_| {
                    let nm = f64::from(u8::from(newmarket.sample(&mut rng)));
                    let ltv = spec.ltv.sample(&mut rng);
                    let viewing = spec.viewing.sample(&mut rng);
                    spec.mean_outcome(seg, nm, ltv, viewing, 1) - spec.mean_outcome(seg, nm, ltv, viewing, 0)
                })
                .collect();
            let (m, se) = mean_and_se(&diffs);
            (seg.key(), m, se)
        })
        .collect();
    out.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(out)
}
