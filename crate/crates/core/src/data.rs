//! Observation matrices with named columns, variable role partitions and
//! CSV input/output.

use std::io::{Read, Write};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, StandardizationRecord};

/// A standardized `n x q` observation matrix with column names.
#[derive(Debug, Clone)]
pub struct Dataset {
    names: Vec<String>,
    data: DMatrix<f64>,
    record: Option<StandardizationRecord>,
}

impl Dataset {
    /// Standardizes `raw` column-wise (mean 0, variance 1 under 1/n).
    pub fn from_raw(names: Vec<String>, raw: &DMatrix<f64>) -> Result<Self> {
        if names.len() != raw.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "{} names for {} columns",
                names.len(),
                raw.ncols()
            )));
        }
        let (data, record) = linalg::standardize_with(raw, |j| names[j].clone())?;
        Ok(Self {
            names,
            data,
            record: Some(record),
        })
    }

    /// Wraps data the caller has already standardized.
    pub fn from_standardized(names: Vec<String>, data: DMatrix<f64>) -> Result<Self> {
        if names.len() != data.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "{} names for {} columns",
                names.len(),
                data.ncols()
            )));
        }
        linalg::ensure_finite(&data, "dataset")?;
        Ok(Self {
            names,
            data,
            record: None,
        })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn record(&self) -> Option<&StandardizationRecord> {
        self.record.as_ref()
    }

    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    pub fn q(&self) -> usize {
        self.data.ncols()
    }

    pub fn column(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::UnknownVertex(name.to_string()))
    }

    /// Rows `rows` of the data, keeping names. No re-standardization.
    pub fn subset_rows(&self, rows: &[usize]) -> Dataset {
        Dataset {
            names: self.names.clone(),
            data: self.data.select_rows(rows),
            record: None,
        }
    }
}

/// Which column plays which part: treatment `x`, response `y`, known
/// covariates `z`, candidate covariates `zbar`, known mediators `s` and
/// candidate mediators `sbar`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RolePartition {
    pub x: usize,
    pub y: usize,
    pub z: Vec<usize>,
    pub zbar: Vec<usize>,
    pub s: Vec<usize>,
    pub sbar: Vec<usize>,
}

impl RolePartition {
    pub fn new(
        x: usize,
        y: usize,
        z: Vec<usize>,
        zbar: Vec<usize>,
        s: Vec<usize>,
        sbar: Vec<usize>,
    ) -> Self {
        Self {
            x,
            y,
            z,
            zbar,
            s,
            sbar,
        }
    }

    /// Checks disjointness and that every index is a column of a `q`-column
    /// dataset.
    pub fn validate(&self, q: usize) -> Result<()> {
        let all = self.all();
        let mut seen = vec![false; q];
        for v in all {
            if v >= q {
                return Err(Error::IndexOutOfRange { index: v, len: q });
            }
            if std::mem::replace(&mut seen[v], true) {
                return Err(Error::OverlappingSets);
            }
        }
        Ok(())
    }

    fn all(&self) -> Vec<usize> {
        let mut v = vec![self.x, self.y];
        v.extend(&self.z);
        v.extend(&self.zbar);
        v.extend(&self.s);
        v.extend(&self.sbar);
        v
    }

    /// Covariates `C = Z ∪ Zbar`, known ones first.
    pub fn c(&self) -> Vec<usize> {
        self.z.iter().chain(&self.zbar).copied().collect()
    }

    /// Mediators `M = S ∪ Sbar`, known ones first.
    pub fn m(&self) -> Vec<usize> {
        self.s.iter().chain(&self.sbar).copied().collect()
    }

    pub fn q_m(&self) -> usize {
        self.s.len() + self.sbar.len()
    }

    /// Same partition without any mediators.
    pub fn without_mediators(&self) -> Self {
        Self {
            s: Vec::new(),
            sbar: Vec::new(),
            ..self.clone()
        }
    }
}

/// Role assignment by column name, as written in role files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoleNames {
    pub x: String,
    pub y: String,
    #[serde(default)]
    pub z: Vec<String>,
    #[serde(default)]
    pub zbar: Vec<String>,
    #[serde(default)]
    pub s: Vec<String>,
    #[serde(default)]
    pub sbar: Vec<String>,
}

impl RoleNames {
    pub fn resolve(&self, names: &[String]) -> Result<RolePartition> {
        let find = |n: &String| {
            names
                .iter()
                .position(|m| m == n)
                .ok_or_else(|| Error::UnknownVertex(n.clone()))
        };
        let many = |v: &[String]| v.iter().map(find).collect::<Result<Vec<_>>>();
        let roles = RolePartition {
            x: find(&self.x)?,
            y: find(&self.y)?,
            z: many(&self.z)?,
            zbar: many(&self.zbar)?,
            s: many(&self.s)?,
            sbar: many(&self.sbar)?,
        };
        roles.validate(names.len())?;
        Ok(roles)
    }

    pub fn from_partition(roles: &RolePartition, names: &[String]) -> Self {
        let name = |i: &usize| names[*i].clone();
        Self {
            x: names[roles.x].clone(),
            y: names[roles.y].clone(),
            z: roles.z.iter().map(name).collect(),
            zbar: roles.zbar.iter().map(name).collect(),
            s: roles.s.iter().map(name).collect(),
            sbar: roles.sbar.iter().map(name).collect(),
        }
    }
}

/// Reads a numeric CSV with a mandatory header row.
pub fn read_csv<R: Read>(reader: R) -> Result<(Vec<String>, DMatrix<f64>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers().map_err(|e| Error::Csv {
        row: 1,
        column: 0,
        message: e.to_string(),
    })?;
    let names: Vec<String> = header.iter().map(str::to_string).collect();
    if names.is_empty() || names.iter().any(String::is_empty) {
        return Err(Error::Csv {
            row: 1,
            column: 0,
            message: "header must name every column".into(),
        });
    }
    let q = names.len();
    let mut values = Vec::new();
    let mut rows = 0;
    for (i, record) in rdr.records().enumerate() {
        let row = i + 2;
        let record = record.map_err(|e| Error::Csv {
            row,
            column: 0,
            message: e.to_string(),
        })?;
        if record.len() != q {
            return Err(Error::Csv {
                row,
                column: record.len().min(q) + 1,
                message: format!("expected {q} fields, found {}", record.len()),
            });
        }
        for (j, field) in record.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| Error::Csv {
                row,
                column: j + 1,
                message: format!("`{field}` is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Csv {
                    row,
                    column: j + 1,
                    message: "non-finite value".into(),
                });
            }
            values.push(v);
        }
        rows += 1;
    }
    Ok((names, DMatrix::from_row_slice(rows, q, &values)))
}

pub fn write_csv<W: Write>(writer: W, names: &[String], data: &DMatrix<f64>) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(names).map_err(io)?;
    for row in data.row_iter() {
        w.write_record(row.iter().map(|v| v.to_string())).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}
