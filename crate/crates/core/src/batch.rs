use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{check_unit_cube, matrix_to_rows, rows_to_matrix};

/// A q x D matrix of jointly chosen design points in the unit cube.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BatchFile", into = "BatchFile")]
pub struct BatchCandidate(DMatrix<f64>);

#[derive(Serialize, Deserialize)]
struct BatchFile {
    points: Vec<Vec<f64>>,
}

impl TryFrom<BatchFile> for BatchCandidate {
    type Error = Error;

    fn try_from(f: BatchFile) -> Result<Self> {
        let dim = f.points.first().map(Vec::len).unwrap_or(0);
        BatchCandidate::new(rows_to_matrix(&f.points, dim)?)
    }
}

impl From<BatchCandidate> for BatchFile {
    fn from(b: BatchCandidate) -> Self {
        BatchFile { points: matrix_to_rows(&b.0) }
    }
}

impl BatchCandidate {
    pub fn new(points: DMatrix<f64>) -> Result<Self> {
        if points.nrows() == 0 || points.ncols() == 0 {
            return Err(Error::invalid("batch needs at least one point and one dimension"));
        }
        check_unit_cube(&points, "batch")?;
        Ok(BatchCandidate(points))
    }

    /// Projects every coordinate onto `[0, 1]`.
    pub fn clamped(mut points: DMatrix<f64>) -> Result<Self> {
        if points.iter().any(|v| v.is_nan()) {
            return Err(Error::invalid("NaN coordinate in batch"));
        }
        points.apply(|v| *v = v.clamp(0.0, 1.0));
        Self::new(points)
    }

    pub fn points(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_points(self) -> DMatrix<f64> {
        self.0
    }

    pub fn q(&self) -> usize {
        self.0.nrows()
    }

    pub fn dim(&self) -> usize {
        self.0.ncols()
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        matrix_to_rows(&self.0)
    }
}
