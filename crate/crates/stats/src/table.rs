//! Column-oriented data table consumed by the model fitters.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Result, StatsError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Column {
    Numeric(Vec<f64>),
    Factor(Vec<String>),
}

impl Column {
    pub fn len(&self) -> usize {
        match self {
            Column::Numeric(v) => v.len(),
            Column::Factor(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A rectangular table of named numeric and factor columns.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DataTable {
    n_rows: usize,
    columns: BTreeMap<String, Column>,
}

impl DataTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn column_names(&self) -> impl Iterator<Item = &str> {
        self.columns.keys().map(String::as_str)
    }

    fn check_len(&mut self, name: &str, len: usize) -> Result<()> {
        if self.columns.is_empty() {
            self.n_rows = len;
            Ok(())
        } else if len != self.n_rows {
            Err(StatsError::LengthMismatch {
                column: name.to_string(),
                expected: self.n_rows,
                found: len,
            })
        } else {
            Ok(())
        }
    }

    pub fn with_numeric(mut self, name: &str, values: Vec<f64>) -> Result<Self> {
        self.insert_numeric(name, values)?;
        Ok(self)
    }

    pub fn with_factor<S: Into<String>>(mut self, name: &str, values: Vec<S>) -> Result<Self> {
        self.insert_factor(name, values.into_iter().map(Into::into).collect())?;
        Ok(self)
    }

    pub fn insert_numeric(&mut self, name: &str, values: Vec<f64>) -> Result<()> {
        self.check_len(name, values.len())?;
        self.columns.insert(name.to_string(), Column::Numeric(values));
        Ok(())
    }

    pub fn insert_factor(&mut self, name: &str, values: Vec<String>) -> Result<()> {
        self.check_len(name, values.len())?;
        self.columns.insert(name.to_string(), Column::Factor(values));
        Ok(())
    }

    pub fn column(&self, name: &str) -> Result<&Column> {
        self.columns
            .get(name)
            .ok_or_else(|| StatsError::UnknownColumn(name.to_string()))
    }

    /// Numeric column with every value finite.
    pub fn numeric(&self, name: &str) -> Result<&[f64]> {
        match self.column(name)? {
            Column::Numeric(v) => {
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(StatsError::MissingValue(name.to_string()));
                }
                Ok(v)
            }
            Column::Factor(_) => Err(StatsError::WrongColumnType {
                column: name.to_string(),
                expected: "numeric",
            }),
        }
    }

    pub fn factor(&self, name: &str) -> Result<&[String]> {
        match self.column(name)? {
            Column::Factor(v) => Ok(v),
            Column::Numeric(_) => Err(StatsError::WrongColumnType {
                column: name.to_string(),
                expected: "a factor",
            }),
        }
    }

    /// Sorted distinct levels of a factor column.
    pub fn levels(&self, name: &str) -> Result<Vec<String>> {
        let set: BTreeSet<&String> = self.factor(name)?.iter().collect();
        Ok(set.into_iter().cloned().collect())
    }

    /// Keeps only rows where `keep` is true.
    pub fn filter(&self, keep: &[bool]) -> Result<DataTable> {
        if keep.len() != self.n_rows {
            return Err(StatsError::LengthMismatch {
                column: "<filter mask>".to_string(),
                expected: self.n_rows,
                found: keep.len(),
            });
        }
        let mut out = DataTable::new();
        out.n_rows = keep.iter().filter(|k| **k).count();
        for (name, col) in &self.columns {
            let col = match col {
                Column::Numeric(v) => Column::Numeric(
                    v.iter().zip(keep).filter(|(_, k)| **k).map(|(x, _)| *x).collect(),
                ),
                Column::Factor(v) => Column::Factor(
                    v.iter()
                        .zip(keep)
                        .filter(|(_, k)| **k)
                        .map(|(x, _)| x.clone())
                        .collect(),
                ),
            };
            out.columns.insert(name.clone(), col);
        }
        Ok(out)
    }
}
