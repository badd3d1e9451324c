//! Matrix-free operator traits shared by the solver and the transforms.

use crate::error::{Error, Result};

/// A real linear map given by its action and the action of its transpose.
pub trait LinearOperator {
    fn input_len(&self) -> usize;
    fn output_len(&self) -> usize;
    fn apply(&self, x: &[f64]) -> Result<Vec<f64>>;
    fn apply_adjoint(&self, y: &[f64]) -> Result<Vec<f64>>;
}

/// An analysis operator used as a sparsity prior.
///
/// The first `coarse_len()` coefficients form the coarse (lowpass) band; the
/// rest are detail coefficients.
pub trait SparsifyingTransform: LinearOperator {
    fn coarse_len(&self) -> usize;
    /// Synthesis from (possibly modified) coefficients with the transform's left inverse.
    fn synthesize(&self, c: &[f64]) -> Result<Vec<f64>>;
    /// Largest eigenvalue of `S S*` (equivalently of `S* S`).
    fn upper_frame_bound(&self) -> f64;
}

/// The identity, as a trivial orthonormal "frame" with no coarse band.
#[derive(Clone, Copy, Debug)]
pub struct Identity(pub usize);

impl LinearOperator for Identity {
    fn input_len(&self) -> usize {
        self.0
    }

    fn output_len(&self) -> usize {
        self.0
    }

    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len(self.0, x.len())?;
        Ok(x.to_vec())
    }

    fn apply_adjoint(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.apply(y)
    }
}

impl SparsifyingTransform for Identity {
    fn coarse_len(&self) -> usize {
        0
    }

    fn synthesize(&self, c: &[f64]) -> Result<Vec<f64>> {
        self.apply(c)
    }

    fn upper_frame_bound(&self) -> f64 {
        1.0
    }
}

/// Small dense row-major matrix, for oracles and toy problems.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        check_len(rows * cols, data.len())?;
        Ok(Self { rows, cols, data })
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }
}

impl LinearOperator for DenseMatrix {
    fn input_len(&self) -> usize {
        self.cols
    }

    fn output_len(&self) -> usize {
        self.rows
    }

    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len(self.cols, x.len())?;
        Ok(self.data.chunks_exact(self.cols).map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum()).collect())
    }

    fn apply_adjoint(&self, y: &[f64]) -> Result<Vec<f64>> {
        check_len(self.rows, y.len())?;
        let mut out = vec![0.0; self.cols];
        for (row, &yv) in self.data.chunks_exact(self.cols).zip(y) {
            for (o, a) in out.iter_mut().zip(row) {
                *o += a * yv;
            }
        }
        Ok(out)
    }
}

pub(crate) fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected: vec![expected], got: vec![got] });
    }
    Ok(())
}
