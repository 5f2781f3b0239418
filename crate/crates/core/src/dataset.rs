//! Experiment data: column roles, validated storage, segment enumeration and
//! deterministic fold partitions.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learners::{FeatureKind, Features};

/// Which columns play which part in the analysis.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnRoles {
    pub outcome: String,
    pub treatment: String,
    /// Adjustment covariates `W`.
    #[serde(default)]
    pub adjustment: Vec<String>,
    /// Segmentation covariates `V`; may overlap `adjustment`.
    pub segmentation: Vec<String>,
}

impl ColumnRoles {
    pub fn validate(&self) -> Result<()> {
        if self.outcome == self.treatment {
            return Err(Error::InvalidRoles(
                "outcome and treatment must be different columns".into(),
            ));
        }
        for col in self.adjustment.iter().chain(&self.segmentation) {
            if col == &self.outcome || col == &self.treatment {
                return Err(Error::InvalidRoles(format!(
                    "`{col}` is the outcome or treatment column and cannot be a covariate"
                )));
            }
        }
        if self.segmentation.is_empty() {
            return Err(Error::InvalidRoles(
                "at least one segmentation column is required".into(),
            ));
        }
        for (name, cols) in [("adjustment", &self.adjustment), ("segmentation", &self.segmentation)] {
            let mut seen = std::collections::HashSet::new();
            for c in cols {
                if !seen.insert(c) {
                    return Err(Error::InvalidRoles(format!("duplicate {name} column `{c}`")));
                }
            }
        }
        Ok(())
    }
}

/// Raw, untyped columns as read from a file or produced by the simulator.
#[derive(Debug, Clone)]
pub struct RawTable {
    pub header: Vec<String>,
    pub columns: Vec<RawColumn>,
}

#[derive(Debug, Clone)]
pub enum RawColumn {
    Text(Vec<String>),
    Numbers(Vec<f64>),
}

impl RawColumn {
    fn len(&self) -> usize {
        match self {
            RawColumn::Text(v) => v.len(),
            RawColumn::Numbers(v) => v.len(),
        }
    }

    fn text_at(&self, i: usize) -> String {
        match self {
            RawColumn::Text(v) => v[i].clone(),
            RawColumn::Numbers(v) => format_number(v[i]),
        }
    }
}

/// Shortest round-trip representation, without a trailing `.0` for integers.
pub(crate) fn format_number(x: f64) -> String {
    if x.fract() == 0.0 && x.abs() < 1e15 {
        format!("{}", x as i64)
    } else {
        format!("{x}")
    }
}

impl RawTable {
    pub fn n_rows(&self) -> usize {
        self.columns.first().map_or(0, RawColumn::len)
    }

    fn column(&self, name: &str) -> Result<&RawColumn> {
        self.header
            .iter()
            .position(|h| h == name)
            .map(|i| &self.columns[i])
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    }

    /// Parses delimited text with a header row.
    pub fn from_reader<R: std::io::Read>(reader: R, delimiter: u8, source: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .delimiter(delimiter)
            .has_headers(true)
            .from_reader(reader);
        let header: Vec<String> = rdr
            .headers()
            .map_err(|e| Error::Parse {
                line: 1,
                message: e.to_string(),
            })?
            .iter()
            .map(|h| h.trim().to_string())
            .collect();
        if header.is_empty() || header.iter().all(String::is_empty) {
            return Err(Error::EmptyFile(source.to_string()));
        }
        let mut columns: Vec<Vec<String>> = vec![Vec::new(); header.len()];
        for (row, record) in rdr.records().enumerate() {
            let line = row + 2;
            let record = record.map_err(|e| Error::Parse {
                line,
                message: e.to_string(),
            })?;
            if record.len() != header.len() {
                return Err(Error::Parse {
                    line,
                    message: format!("expected {} fields, found {}", header.len(), record.len()),
                });
            }
            for (col, field) in columns.iter_mut().zip(record.iter()) {
                col.push(field.trim().to_string());
            }
        }
        if columns[0].is_empty() {
            return Err(Error::EmptyFile(source.to_string()));
        }
        Ok(RawTable {
            header,
            columns: columns.into_iter().map(RawColumn::Text).collect(),
        })
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_bytes(&bytes, &path.display().to_string())
    }

    /// Comma is the default delimiter; a header line with tabs and no commas
    /// selects tab.
    pub fn from_bytes(bytes: &[u8], source: &str) -> Result<Self> {
        if bytes.iter().all(u8::is_ascii_whitespace) {
            return Err(Error::EmptyFile(source.to_string()));
        }
        let first_line = bytes.split(|&b| b == b'\n').next().unwrap_or_default();
        let delimiter = if first_line.contains(&b'\t') && !first_line.contains(&b',') {
            b'\t'
        } else {
            b','
        };
        Self::from_reader(bytes, delimiter, source)
    }

    /// Comma-separated text with a header row and `\n` line endings.
    pub fn to_csv_bytes(&self) -> Vec<u8> {
        let mut wtr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        wtr.write_record(&self.header).expect("in-memory write");
        for i in 0..self.n_rows() {
            wtr.write_record(self.columns.iter().map(|c| c.text_at(i)))
                .expect("in-memory write");
        }
        wtr.into_inner().expect("in-memory flush")
    }
}

/// A typed covariate column.
#[derive(Debug, Clone, PartialEq)]
pub enum Column {
    Numeric(Vec<f64>),
    /// Levels in first-appearance order; `codes[i]` indexes `levels`.
    Categorical { levels: Vec<String>, codes: Vec<u32> },
}

impl Column {
    fn len(&self) -> usize {
        match self {
            Column::Numeric(v) => v.len(),
            Column::Categorical { codes, .. } => codes.len(),
        }
    }

    fn kind(&self) -> FeatureKind {
        match self {
            Column::Numeric(_) => FeatureKind::Numeric,
            Column::Categorical { levels, .. } => FeatureKind::Categorical {
                levels: levels.len(),
            },
        }
    }

    fn value(&self, i: usize) -> f64 {
        match self {
            Column::Numeric(v) => v[i],
            Column::Categorical { codes, .. } => codes[i] as f64,
        }
    }
}

fn is_missing(s: &str) -> bool {
    s.is_empty() || s.eq_ignore_ascii_case("na") || s.eq_ignore_ascii_case("nan")
}

fn typed_column(name: &str, raw: &RawColumn) -> Result<Column> {
    match raw {
        RawColumn::Numbers(v) => {
            if let Some(line) = v.iter().position(|x| !x.is_finite()) {
                return Err(Error::MissingValue {
                    line: line + 2,
                    column: name.to_string(),
                });
            }
            Ok(Column::Numeric(v.clone()))
        }
        RawColumn::Text(v) => {
            if let Some(line) = v.iter().position(|s| is_missing(s)) {
                return Err(Error::MissingValue {
                    line: line + 2,
                    column: name.to_string(),
                });
            }
            let parsed: Option<Vec<f64>> = v
                .iter()
                .map(|s| s.parse::<f64>().ok().filter(|x| x.is_finite()))
                .collect();
            match parsed {
                Some(nums) => Ok(Column::Numeric(nums)),
                None => {
                    let coding = LevelCoding::from_labels(v.iter().cloned());
                    Ok(Column::Categorical {
                        levels: coding.levels,
                        codes: coding.codes,
                    })
                }
            }
        }
    }
}

/// Text level coding of a discrete column, first-appearance ordered.
#[derive(Debug, Clone, PartialEq)]
struct LevelCoding {
    levels: Vec<String>,
    codes: Vec<u32>,
}

impl LevelCoding {
    fn from_labels(labels: impl Iterator<Item = String>) -> Self {
        let mut lookup: HashMap<String, u32> = HashMap::new();
        let mut levels = Vec::new();
        let codes = labels
            .map(|label| {
                *lookup.entry(label.clone()).or_insert_with(|| {
                    levels.push(label);
                    (levels.len() - 1) as u32
                })
            })
            .collect();
        LevelCoding { levels, codes }
    }
}

/// Validated experiment data.
#[derive(Debug, Clone)]
pub struct ExperimentDataset {
    roles: ColumnRoles,
    treatment: Vec<u8>,
    outcome: Vec<f64>,
    adjustment: Vec<Column>,
    segmentation: Vec<Column>,
    segment_levels: Vec<LevelCoding>,
}

impl ExperimentDataset {
    pub fn from_table(table: &RawTable, roles: &ColumnRoles) -> Result<Self> {
        roles.validate()?;
        let n = table.n_rows();
        if n == 0 {
            return Err(Error::EmptyFile("table has no rows".into()));
        }

        let treatment = match table.column(&roles.treatment)? {
            RawColumn::Numbers(v) => v
                .iter()
                .enumerate()
                .map(|(i, &x)| binary(x).ok_or_else(|| non_binary(i, &format_number(x))))
                .collect::<Result<Vec<_>>>()?,
            RawColumn::Text(v) => v
                .iter()
                .enumerate()
                .map(|(i, s)| {
                    s.parse::<f64>()
                        .ok()
                        .and_then(binary)
                        .ok_or_else(|| non_binary(i, s))
                })
                .collect::<Result<Vec<_>>>()?,
        };

        let outcome = match table.column(&roles.outcome)? {
            RawColumn::Numbers(v) => v
                .iter()
                .enumerate()
                .map(|(i, &x)| {
                    x.is_finite().then_some(x).ok_or_else(|| Error::NonNumericOutcome {
                        line: i + 2,
                        value: format!("{x}"),
                    })
                })
                .collect::<Result<Vec<_>>>()?,
            RawColumn::Text(v) => v
                .iter()
                .enumerate()
                .map(|(i, s)| {
                    s.parse::<f64>()
                        .ok()
                        .filter(|x| x.is_finite())
                        .ok_or_else(|| Error::NonNumericOutcome {
                            line: i + 2,
                            value: s.clone(),
                        })
                })
                .collect::<Result<Vec<_>>>()?,
        };

        let adjustment = roles
            .adjustment
            .iter()
            .map(|name| typed_column(name, table.column(name)?))
            .collect::<Result<Vec<_>>>()?;
        let mut segmentation = Vec::with_capacity(roles.segmentation.len());
        let mut segment_levels = Vec::with_capacity(roles.segmentation.len());
        for name in &roles.segmentation {
            let raw = table.column(name)?;
            segmentation.push(typed_column(name, raw)?);
            segment_levels.push(LevelCoding::from_labels((0..n).map(|i| raw.text_at(i))));
        }

        Ok(ExperimentDataset {
            roles: roles.clone(),
            treatment,
            outcome,
            adjustment,
            segmentation,
            segment_levels,
        })
    }

    pub fn n(&self) -> usize {
        self.outcome.len()
    }

    pub fn roles(&self) -> &ColumnRoles {
        &self.roles
    }

    pub fn treatment(&self) -> &[u8] {
        &self.treatment
    }

    pub fn outcome(&self) -> &[f64] {
        &self.outcome
    }

    pub fn adjustment_columns(&self) -> &[Column] {
        &self.adjustment
    }

    pub fn segmentation_columns(&self) -> &[Column] {
        &self.segmentation
    }

    /// The segment key of unit `i`.
    pub fn segment_key(&self, i: usize) -> SegmentKey {
        SegmentKey(
            self.segment_levels
                .iter()
                .map(|c| c.levels[c.codes[i] as usize].clone())
                .collect(),
        )
    }

    /// Adjustment covariates `W` as a feature matrix.
    pub fn adjustment_features(&self) -> Features {
        features_from_columns(&self.roles.adjustment, &self.adjustment, self.n())
    }

    /// Adjustment covariates with the segmentation columns removed. Used when
    /// a segment indicator replaces them as a single categorical feature.
    pub fn adjustment_features_without_segments(&self) -> Features {
        let (names, cols): (Vec<String>, Vec<Column>) = self
            .roles
            .adjustment
            .iter()
            .zip(&self.adjustment)
            .filter(|(name, _)| !self.roles.segmentation.contains(name))
            .map(|(n, c)| (n.clone(), c.clone()))
            .unzip();
        features_from_columns(&names, &cols, self.n())
    }

    /// Segmentation covariates `V` as a feature matrix.
    pub fn segmentation_features(&self) -> Features {
        features_from_columns(&self.roles.segmentation, &self.segmentation, self.n())
    }
}

fn binary(x: f64) -> Option<u8> {
    if x == 0.0 {
        Some(0)
    } else if x == 1.0 {
        Some(1)
    } else {
        None
    }
}

fn non_binary(row: usize, value: &str) -> Error {
    Error::NonBinaryTreatment {
        line: row + 2,
        value: value.to_string(),
    }
}

fn features_from_columns(names: &[String], cols: &[Column], n: usize) -> Features {
    let kinds: Vec<FeatureKind> = cols.iter().map(Column::kind).collect();
    let p = cols.len();
    let mut values = Vec::with_capacity(n * p);
    for i in 0..n {
        values.extend(cols.iter().map(|c| c.value(i)));
    }
    debug_assert!(cols.iter().all(|c| c.len() == n));
    Features::new(names.to_vec(), kinds, n, values)
}

/// Loads a delimited file and validates it against `roles`.
pub fn load_dataset(path: &Path, roles: &ColumnRoles) -> Result<ExperimentDataset> {
    let table = RawTable::from_path(path)?;
    ExperimentDataset::from_table(&table, roles)
}

/// One realisation `v` of the segmentation covariates, as level labels.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SegmentKey(pub Vec<String>);

impl SegmentKey {
    pub fn label(&self) -> String {
        self.0.join("/")
    }
}

impl std::fmt::Display for SegmentKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({})", self.0.join(", "))
    }
}

/// Componentwise; numeric labels compare numerically, otherwise as text.
impl Ord for SegmentKey {
    fn cmp(&self, other: &Self) -> Ordering {
        for (a, b) in self.0.iter().zip(&other.0) {
            let ord = match (a.parse::<f64>(), b.parse::<f64>()) {
                (Ok(x), Ok(y)) => x.total_cmp(&y).then_with(|| a.cmp(b)),
                _ => a.cmp(b),
            };
            if ord != Ordering::Equal {
                return ord;
            }
        }
        self.0.len().cmp(&other.0.len())
    }
}

impl PartialOrd for SegmentKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Observed segments, unit membership and empirical proportions.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentIndex {
    pub columns: Vec<String>,
    /// Sorted by key.
    pub segments: Vec<SegmentKey>,
    pub counts: Vec<usize>,
    pub proportions: Vec<f64>,
    /// Segment id of each unit.
    pub membership: Vec<usize>,
}

impl SegmentIndex {
    pub fn n_units(&self) -> usize {
        self.membership.len()
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn position(&self, key: &SegmentKey) -> Option<usize> {
        self.segments.binary_search(key).ok()
    }

    /// Builds an index from per-unit keys. Segments are the observed support.
    pub fn from_keys(columns: Vec<String>, keys: &[SegmentKey]) -> Self {
        let mut segments: Vec<SegmentKey> = keys.to_vec();
        segments.sort();
        segments.dedup();
        let lookup: HashMap<&SegmentKey, usize> =
            segments.iter().enumerate().map(|(i, k)| (k, i)).collect();
        let membership: Vec<usize> = keys.iter().map(|k| lookup[k]).collect();
        let mut counts = vec![0usize; segments.len()];
        for &s in &membership {
            counts[s] += 1;
        }
        let n = keys.len() as f64;
        let proportions = counts.iter().map(|&c| c as f64 / n).collect();
        SegmentIndex {
            columns,
            segments,
            counts,
            proportions,
            membership,
        }
    }

    /// Index over a subset of units, in the order given. Segments absent from
    /// the subset are dropped.
    pub fn restrict(&self, units: &[usize]) -> SegmentIndex {
        let mut present = vec![false; self.segments.len()];
        for &i in units {
            present[self.membership[i]] = true;
        }
        // Segments are already sorted, so relabelling in order keeps them so.
        let mut remap = vec![usize::MAX; self.segments.len()];
        let mut segments = Vec::new();
        for (s, _) in present.iter().enumerate().filter(|(_, &p)| p) {
            remap[s] = segments.len();
            segments.push(self.segments[s].clone());
        }
        let membership: Vec<usize> = units.iter().map(|&i| remap[self.membership[i]]).collect();
        let mut counts = vec![0usize; segments.len()];
        for &s in &membership {
            counts[s] += 1;
        }
        let n = units.len() as f64;
        let proportions = counts.iter().map(|&c| c as f64 / n).collect();
        SegmentIndex {
            columns: self.columns.clone(),
            segments,
            counts,
            proportions,
            membership,
        }
    }
}

pub fn build_segment_index(data: &ExperimentDataset) -> SegmentIndex {
    let n = data.n();
    // Key construction on level codes keeps this linear in n.
    let mut by_codes: HashMap<Vec<u32>, usize> = HashMap::new();
    let mut keys_by_id: Vec<SegmentKey> = Vec::new();
    let mut unit_ids = Vec::with_capacity(n);
    for i in 0..n {
        let codes: Vec<u32> = data.segment_levels.iter().map(|c| c.codes[i]).collect();
        let id = *by_codes.entry(codes).or_insert_with(|| {
            keys_by_id.push(data.segment_key(i));
            keys_by_id.len() - 1
        });
        unit_ids.push(id);
    }
    let mut order: Vec<usize> = (0..keys_by_id.len()).collect();
    order.sort_by(|&a, &b| keys_by_id[a].cmp(&keys_by_id[b]));
    let mut rank = vec![0usize; order.len()];
    for (r, &id) in order.iter().enumerate() {
        rank[id] = r;
    }
    let segments: Vec<SegmentKey> = order.iter().map(|&id| keys_by_id[id].clone()).collect();
    let membership: Vec<usize> = unit_ids.iter().map(|&id| rank[id]).collect();
    let mut counts = vec![0usize; segments.len()];
    for &s in &membership {
        counts[s] += 1;
    }
    let proportions = counts.iter().map(|&c| c as f64 / n as f64).collect();
    SegmentIndex {
        columns: data.roles.segmentation.clone(),
        segments,
        counts,
        proportions,
        membership,
    }
}

/// Zero-based fold label for every unit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub k: usize,
    pub seed: u64,
    pub fold_of: Vec<usize>,
}

impl FoldAssignment {
    pub fn n(&self) -> usize {
        self.fold_of.len()
    }

    pub fn fold_units(&self, fold: usize) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.fold_of[i] == fold).collect()
    }

    pub fn training_units(&self, fold: usize) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.fold_of[i] != fold).collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.fold_of {
            sizes[f] += 1;
        }
        sizes
    }
}

fn check_fold_count(n: usize, k: usize) -> Result<()> {
    if k < 2 || k > n {
        return Err(Error::InvalidArgument(format!(
            "fold count K={k} must satisfy 2 <= K <= n={n}"
        )));
    }
    Ok(())
}

/// Shuffled, balanced partition of `0..n` into `k` folds.
pub fn partition_folds(n: usize, k: usize, seed: u64) -> Result<FoldAssignment> {
    partition_folds_stratified(&vec![0u8; n], k, seed)
}

/// Balanced partition that also balances each stratum of `labels` across
/// folds. Units are shuffled within stratum and dealt round-robin, so fold
/// sizes differ by at most one overall and within every stratum.
pub fn partition_folds_stratified(labels: &[u8], k: usize, seed: u64) -> Result<FoldAssignment> {
    let n = labels.len();
    check_fold_count(n, k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut strata: Vec<u8> = labels.to_vec();
    strata.sort_unstable();
    strata.dedup();
    let mut fold_of = vec![0usize; n];
    let mut next = 0usize;
    for s in strata {
        let mut members: Vec<usize> = (0..n).filter(|&i| labels[i] == s).collect();
        members.shuffle(&mut rng);
        for i in members {
            fold_of[i] = next % k;
            next += 1;
        }
    }
    // Randomise which folds receive the remainder units.
    let mut relabel: Vec<usize> = (0..k).collect();
    relabel.shuffle(&mut rng);
    for f in fold_of.iter_mut() {
        *f = relabel[*f];
    }
    Ok(FoldAssignment { k, seed, fold_of })
}
