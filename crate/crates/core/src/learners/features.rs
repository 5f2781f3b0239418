use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum FeatureKind {
    Numeric,
    /// Values are level codes `0..levels`.
    Categorical { levels: usize },
}

/// Row-major feature matrix with a typed schema.
#[derive(Debug, Clone, PartialEq)]
pub struct Features {
    names: Vec<String>,
    kinds: Vec<FeatureKind>,
    n_rows: usize,
    values: Vec<f64>,
}

/// Column names and kinds; predictions require an exact match.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub names: Vec<String>,
    pub kinds: Vec<FeatureKind>,
}

impl Features {
    pub fn new(names: Vec<String>, kinds: Vec<FeatureKind>, n_rows: usize, values: Vec<f64>) -> Self {
        assert_eq!(names.len(), kinds.len());
        assert_eq!(values.len(), n_rows * kinds.len());
        Features {
            names,
            kinds,
            n_rows,
            values,
        }
    }

    /// Single numeric column.
    pub fn from_column(name: &str, values: Vec<f64>) -> Self {
        let n = values.len();
        Features::new(vec![name.to_string()], vec![FeatureKind::Numeric], n, values)
    }

    /// Numeric columns given row by row.
    pub fn from_rows(names: &[&str], rows: &[Vec<f64>]) -> Self {
        let p = names.len();
        let values: Vec<f64> = rows
            .iter()
            .flat_map(|r| {
                assert_eq!(r.len(), p);
                r.iter().copied()
            })
            .collect();
        Features::new(
            names.iter().map(|s| s.to_string()).collect(),
            vec![FeatureKind::Numeric; p],
            rows.len(),
            values,
        )
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.kinds.len()
    }

    pub fn kinds(&self) -> &[FeatureKind] {
        &self.kinds
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn schema(&self) -> FeatureSchema {
        FeatureSchema {
            names: self.names.clone(),
            kinds: self.kinds.clone(),
        }
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        let p = self.n_cols();
        &self.values[i * p..(i + 1) * p]
    }

    pub fn select_rows(&self, rows: &[usize]) -> Features {
        let mut values = Vec::with_capacity(rows.len() * self.n_cols());
        for &r in rows {
            values.extend_from_slice(self.row(r));
        }
        Features::new(self.names.clone(), self.kinds.clone(), rows.len(), values)
    }

    /// Returns a copy with `column` inserted as the first feature.
    pub fn prepend_column(&self, name: &str, kind: FeatureKind, column: &[f64]) -> Features {
        assert_eq!(column.len(), self.n_rows);
        let p = self.n_cols();
        let mut values = Vec::with_capacity(self.n_rows * (p + 1));
        for (i, &c) in column.iter().enumerate() {
            values.push(c);
            values.extend_from_slice(self.row(i));
        }
        let mut names = vec![name.to_string()];
        names.extend(self.names.iter().cloned());
        let mut kinds = vec![kind];
        kinds.extend(self.kinds.iter().copied());
        Features::new(names, kinds, self.n_rows, values)
    }

    /// Returns a copy with column `col` overwritten by the constant `value`.
    pub fn with_constant_column(&self, col: usize, value: f64) -> Features {
        let mut out = self.clone();
        let p = self.n_cols();
        for i in 0..self.n_rows {
            out.values[i * p + col] = value;
        }
        out
    }

    pub(crate) fn check_schema(&self, schema: &FeatureSchema) -> Result<()> {
        if self.names != schema.names || self.kinds != schema.kinds {
            return Err(Error::SchemaMismatch(format!(
                "model trained on {:?}, got {:?}",
                schema.names, self.names
            )));
        }
        Ok(())
    }
}

/// Dense design encoding: intercept, numeric columns as-is, categorical
/// columns one-hot with the first level as reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct DesignEncoder {
    kinds: Vec<FeatureKind>,
    width: usize,
}

impl DesignEncoder {
    pub(crate) fn new(kinds: &[FeatureKind]) -> Self {
        let width = 1 + kinds
            .iter()
            .map(|k| match k {
                FeatureKind::Numeric => 1,
                FeatureKind::Categorical { levels } => levels.saturating_sub(1),
            })
            .sum::<usize>();
        DesignEncoder {
            kinds: kinds.to_vec(),
            width,
        }
    }

    pub(crate) fn width(&self) -> usize {
        self.width
    }

    pub(crate) fn encode_row(&self, row: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        out[0] = 1.0;
        let mut at = 1;
        for (kind, &x) in self.kinds.iter().zip(row) {
            match kind {
                FeatureKind::Numeric => {
                    out[at] = x;
                    at += 1;
                }
                FeatureKind::Categorical { levels } => {
                    let code = x as usize;
                    if code > 0 && code < *levels {
                        out[at + code - 1] = 1.0;
                    }
                    at += levels.saturating_sub(1);
                }
            }
        }
    }

    pub(crate) fn encode(&self, x: &Features) -> Vec<f64> {
        let w = self.width;
        let mut out = vec![0.0; x.n_rows() * w];
        for i in 0..x.n_rows() {
            self.encode_row(x.row(i), &mut out[i * w..(i + 1) * w]);
        }
        out
    }
}
