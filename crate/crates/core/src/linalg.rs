//! Dense covariance utilities shared by the model and sampler.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Relative jitter ladder applied to the mean diagonal.
pub const JITTER_LADDER: [f64; 5] = [0.0, 1e-12, 1e-11, 1e-10, 1e-8];

/// Cholesky factor together with the absolute jitter that was needed.
#[derive(Debug, Clone)]
pub struct JitteredCholesky {
    chol: Cholesky<f64, Dyn>,
    jitter: f64,
}

impl JitteredCholesky {
    /// Factor `matrix`, escalating a diagonal jitter of `ε·mean(diag)` through
    /// [`JITTER_LADDER`] until the factorization succeeds.
    pub fn new(matrix: &DMatrix<f64>) -> Result<Self> {
        Self::with_ladder(matrix, &JITTER_LADDER)
    }

    pub fn with_ladder(matrix: &DMatrix<f64>, ladder: &[f64]) -> Result<Self> {
        let n = matrix.nrows();
        if n == 0 || n != matrix.ncols() {
            return Err(Error::invalid(format!(
                "cholesky needs a non-empty square matrix, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        let mean_diag = matrix.diagonal().mean().abs().max(f64::MIN_POSITIVE);
        let mut last = 0.0;
        for &eps in ladder {
            let jitter = eps * mean_diag;
            last = jitter;
            let mut m = matrix.clone();
            if jitter > 0.0 {
                for i in 0..n {
                    m[(i, i)] += jitter;
                }
            }
            if let Some(chol) = Cholesky::new(m) {
                if chol.l_dirty().diagonal().iter().all(|d| d.is_finite() && *d > 0.0) {
                    return Ok(Self { chol, jitter });
                }
            }
        }
        Err(Error::NotPositiveDefinite { jitter: last })
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn dim(&self) -> usize {
        self.chol.l_dirty().nrows()
    }

    pub fn l(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self.chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    pub fn solve_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }

    /// `L⁻¹ b`.
    pub fn whiten(&self, b: &DVector<f64>) -> DVector<f64> {
        let l = self.chol.l_dirty();
        let mut out = b.clone();
        // l_dirty's strict upper triangle is garbage; lower solve ignores it
        l.solve_lower_triangular_mut(&mut out);
        out
    }

    /// `bᵀ A⁻¹ b`.
    pub fn quad_form(&self, b: &DVector<f64>) -> f64 {
        self.whiten(b).norm_squared()
    }

    /// `L z`, a draw from `N(0, A)` when `z` is standard normal.
    pub fn color(&self, z: &DVector<f64>) -> DVector<f64> {
        self.chol.l() * z
    }

    /// Mean-zero Gaussian log density of `x`.
    pub fn log_density(&self, x: &DVector<f64>) -> f64 {
        let n = self.dim() as f64;
        -0.5 * (n * LN_2PI + self.log_det() + self.quad_form(x))
    }
}

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Symmetrize in place (`(A + Aᵀ)/2`).
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}
