use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-sample conditioning: a class id or the unconditional branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Condition {
    Unconditional,
    Class(u32),
}

/// A batch of B samples of dimension D, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    conditions: Option<Vec<Condition>>,
}

impl SampleBatch {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(format!(
                "expected {} values for a {}x{} batch, got {}",
                rows * cols,
                rows,
                cols,
                data.len()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::numerical("batch contains non-finite values"));
        }
        Ok(SampleBatch {
            rows,
            cols,
            data,
            conditions: None,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map(|r| r.len()).unwrap_or(0);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::shape("ragged rows"));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        SampleBatch {
            rows,
            cols,
            data: vec![0.0; rows * cols],
            conditions: None,
        }
    }

    pub fn with_conditions(mut self, conditions: Vec<Condition>) -> Result<Self> {
        if conditions.len() != self.rows {
            return Err(Error::shape(format!(
                "{} conditions for {} rows",
                conditions.len(),
                self.rows
            )));
        }
        self.conditions = Some(conditions);
        Ok(self)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }
    pub fn cols(&self) -> usize {
        self.cols
    }
    pub fn data(&self) -> &[f64] {
        &self.data
    }
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
    pub fn conditions(&self) -> Option<&[Condition]> {
        self.conditions.as_deref()
    }
    pub fn condition_of(&self, i: usize) -> Condition {
        self.conditions
            .as_ref()
            .map(|c| c[i])
            .unwrap_or(Condition::Unconditional)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Elementwise a*self + b*other; shapes must match.
    pub fn scaled_add(&self, a: f64, other: &SampleBatch, b: f64) -> Result<SampleBatch> {
        self.check_same_shape(other)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(x, y)| a * x + b * y)
            .collect();
        SampleBatch::new(self.rows, self.cols, data)
    }

    pub fn check_same_shape(&self, other: &SampleBatch) -> Result<()> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::shape(format!(
                "shape mismatch: {}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(())
    }
}
