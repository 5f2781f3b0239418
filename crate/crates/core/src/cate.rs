//! Segment-level CATE estimates from the pseudo-outcome, with standard
//! errors, confidence intervals and one-sided multiplicity-adjusted tests.

use serde::{Deserialize, Serialize};

use crate::dataset::{SegmentIndex, SegmentKey};
use crate::error::{Error, Result};
use crate::learners::{fit_library, Features, FittedLearner, LearnerSpec, Loss, Selection};
use crate::nuisance::PseudoOutcomes;
use crate::stats::{normal_sf, z_two_sided};

/// Segments smaller than this get a warning; they are still estimated.
pub const MIN_SEGMENT_WARNING: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Correction {
    Bonferroni,
    #[default]
    Holm,
    None,
}

impl std::str::FromStr for Correction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bonferroni" => Ok(Correction::Bonferroni),
            "holm" => Ok(Correction::Holm),
            "none" => Ok(Correction::None),
            other => Err(Error::InvalidArgument(format!(
                "unknown correction `{other}` (expected bonferroni, holm or none)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Decision {
    Treat,
    Hold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentCateEstimate {
    pub segment: SegmentKey,
    pub n: usize,
    pub proportion: f64,
    pub cate: f64,
    #[serde(with = "crate::float_serde")]
    pub se: f64,
    #[serde(with = "crate::float_serde")]
    pub ci_lower: f64,
    #[serde(with = "crate::float_serde")]
    pub ci_upper: f64,
    /// `None` until tested, and always for untestable segments.
    pub p_raw: Option<f64>,
    pub p_adjusted: Option<f64>,
    pub decision: Decision,
    /// Singleton segments have no variance estimate and are never tested.
    pub testable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CateTable {
    pub columns: Vec<String>,
    pub estimates: Vec<SegmentCateEstimate>,
    pub alpha: f64,
    pub z_quantile: f64,
    /// Set once the table has been tested.
    pub theta: Option<f64>,
    pub correction: Option<Correction>,
    pub warnings: Vec<String>,
}

impl CateTable {
    pub fn is_tested(&self) -> bool {
        self.theta.is_some()
    }

    pub fn segments(&self) -> impl Iterator<Item = &SegmentKey> {
        self.estimates.iter().map(|e| &e.segment)
    }

    pub fn find(&self, key: &SegmentKey) -> Option<&SegmentCateEstimate> {
        self.estimates.iter().find(|e| &e.segment == key)
    }

    /// Builds a table directly from per-segment summaries
    /// `(segment, n, proportion, cate, se)`.
    pub fn from_summaries(
        columns: Vec<String>,
        rows: Vec<(SegmentKey, usize, f64, f64, f64)>,
        alpha: f64,
    ) -> Result<Self> {
        check_alpha(alpha)?;
        if rows.is_empty() {
            return Err(Error::EmptySegments);
        }
        let z = z_two_sided(alpha);
        let estimates = rows
            .into_iter()
            .map(|(segment, n, proportion, cate, se)| {
                let (ci_lower, ci_upper) = confidence_interval(cate, se, alpha);
                SegmentCateEstimate {
                    segment,
                    n,
                    proportion,
                    cate,
                    se,
                    ci_lower,
                    ci_upper,
                    p_raw: None,
                    p_adjusted: None,
                    decision: Decision::Hold,
                    testable: n >= 2 && se.is_finite(),
                }
            })
            .collect();
        Ok(CateTable {
            columns,
            estimates,
            alpha,
            z_quantile: z,
            theta: None,
            correction: None,
            warnings: Vec::new(),
        })
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    Ok(())
}

/// Two-sided normal interval `cate ± z_{1-alpha/2} se`.
pub fn confidence_interval(cate: f64, se: f64, alpha: f64) -> (f64, f64) {
    if se.is_infinite() {
        return (f64::NEG_INFINITY, f64::INFINITY);
    }
    let half = z_two_sided(alpha) * se;
    (cate - half, cate + half)
}

/// One-sided p-value for `H0: CATE <= theta` against `H1: CATE > theta`.
pub fn one_sided_p(cate: f64, se: f64, theta: f64) -> f64 {
    if se == 0.0 {
        return if cate > theta { 0.0 } else { 1.0 };
    }
    normal_sf((cate - theta) / se).clamp(0.0, 1.0)
}

/// Family-wise adjusted p-values; `raw` holds the testable p-values only.
pub fn adjust_p_values(raw: &[f64], correction: Correction) -> Vec<f64> {
    let m = raw.len() as f64;
    match correction {
        Correction::None => raw.to_vec(),
        Correction::Bonferroni => raw.iter().map(|p| (p * m).min(1.0)).collect(),
        Correction::Holm => {
            let mut order: Vec<usize> = (0..raw.len()).collect();
            order.sort_by(|&a, &b| raw[a].total_cmp(&raw[b]).then(a.cmp(&b)));
            let mut adjusted = vec![0.0; raw.len()];
            let mut running: f64 = 0.0;
            for (rank, &i) in order.iter().enumerate() {
                let candidate = ((m - rank as f64) * raw[i]).min(1.0);
                running = running.max(candidate);
                adjusted[i] = running;
            }
            adjusted
        }
    }
}

/// Per-segment mean and standard error of `values` grouped by `idx`.
pub(crate) fn group_summaries(values: &[f64], membership: &[usize], n_groups: usize) -> Vec<(usize, f64, f64)> {
    let mut sums = vec![0.0; n_groups];
    let mut counts = vec![0usize; n_groups];
    for (&v, &s) in values.iter().zip(membership) {
        sums[s] += v;
        counts[s] += 1;
    }
    let means: Vec<f64> = sums.iter().zip(&counts).map(|(s, &c)| s / c as f64).collect();
    let mut ss = vec![0.0; n_groups];
    for (&v, &s) in values.iter().zip(membership) {
        ss[s] += (v - means[s]) * (v - means[s]);
    }
    (0..n_groups)
        .map(|g| {
            let c = counts[g];
            let se = if c >= 2 {
                (ss[g] / (c - 1) as f64 / c as f64).sqrt()
            } else {
                f64::INFINITY
            };
            (c, means[g], se)
        })
        .collect()
}

pub fn estimate_cate_by_segment(d: &PseudoOutcomes, idx: &SegmentIndex, alpha: f64) -> Result<CateTable> {
    check_alpha(alpha)?;
    if idx.is_empty() {
        return Err(Error::EmptySegments);
    }
    if idx.n_units() != d.len() {
        return Err(Error::Misaligned(format!(
            "segment index covers {} units, pseudo-outcomes {}",
            idx.n_units(),
            d.len()
        )));
    }
    let summaries = group_summaries(&d.values, &idx.membership, idx.len());
    let rows = summaries
        .iter()
        .enumerate()
        .map(|(s, &(n, cate, se))| (idx.segments[s].clone(), n, idx.proportions[s], cate, se))
        .collect();
    let mut table = CateTable::from_summaries(idx.columns.clone(), rows, alpha)?;
    for e in &table.estimates {
        if e.n == 1 {
            table.warnings.push(format!(
                "segment {} has a single unit; excluded from testing and rule candidacy",
                e.segment
            ));
        } else if e.se == 0.0 {
            table.warnings.push(format!(
                "segment {} has zero pseudo-outcome variance; degenerate interval",
                e.segment
            ));
        } else if e.n < MIN_SEGMENT_WARNING {
            table.warnings.push(format!(
                "segment {} has only {} units; interval may be unreliable",
                e.segment, e.n
            ));
        }
    }
    Ok(table)
}

/// Tests `H0: CATE(v) <= theta` for each testable segment and records the
/// adjusted p-values and decisions.
pub fn test_segments(table: &CateTable, theta: f64, correction: Correction, alpha: f64) -> Result<CateTable> {
    check_alpha(alpha)?;
    if !theta.is_finite() {
        return Err(Error::InvalidArgument(format!("theta must be finite, got {theta}")));
    }
    let testable: Vec<usize> = (0..table.estimates.len())
        .filter(|&i| table.estimates[i].testable)
        .collect();
    if testable.is_empty() {
        return Err(Error::NoTestableSegments);
    }
    let mut out = table.clone();
    out.alpha = alpha;
    out.z_quantile = z_two_sided(alpha);
    out.theta = Some(theta);
    out.correction = Some(correction);

    let raw: Vec<f64> = testable
        .iter()
        .map(|&i| one_sided_p(table.estimates[i].cate, table.estimates[i].se, theta))
        .collect();
    let adjusted = adjust_p_values(&raw, correction);
    for e in out.estimates.iter_mut() {
        let (lo, hi) = confidence_interval(e.cate, e.se, alpha);
        e.ci_lower = lo;
        e.ci_upper = hi;
        e.p_raw = None;
        e.p_adjusted = None;
        e.decision = Decision::Hold;
    }
    for ((&i, &p), &q) in testable.iter().zip(&raw).zip(&adjusted) {
        let e = &mut out.estimates[i];
        e.p_raw = Some(p);
        e.p_adjusted = Some(q);
        e.decision = if q < alpha { Decision::Treat } else { Decision::Hold };
    }
    Ok(out)
}

/// Regresses the pseudo-outcome on segmentation features with a learner
/// library.
pub fn fit_cate_function(
    d: &PseudoOutcomes,
    v: &Features,
    library: &[LearnerSpec],
    selection_folds: usize,
    seed: u64,
) -> Result<(FittedLearner, Selection)> {
    fit_library(library, v, &d.values, Loss::SquaredError, selection_folds, seed)
}
