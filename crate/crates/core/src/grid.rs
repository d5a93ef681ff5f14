//! Discretized time domain used as the quadrature backbone of every convolution.

use crate::error::{Error, Result};

/// Ordered knots over `[start, end]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    knots: Vec<f64>,
}

impl TimeGrid {
    /// `m` equally spaced knots spanning `[start, end]` inclusive.
    pub fn uniform(start: f64, end: f64, m: usize) -> Result<Self> {
        if m < 2 {
            return Err(Error::invalid(format!("grid needs at least 2 knots, got {m}")));
        }
        if !(start.is_finite() && end.is_finite()) || end <= start {
            return Err(Error::invalid(format!(
                "grid span must satisfy start < end, got [{start}, {end}]"
            )));
        }
        let step = (end - start) / (m - 1) as f64;
        let mut knots: Vec<f64> = (0..m).map(|k| start + step * k as f64).collect();
        // pin the endpoint exactly
        knots[m - 1] = end;
        Ok(Self { knots })
    }

    /// Arbitrary strictly increasing knots.
    pub fn from_knots(knots: Vec<f64>) -> Result<Self> {
        if knots.len() < 2 {
            return Err(Error::invalid("grid needs at least 2 knots"));
        }
        if knots.iter().any(|t| !t.is_finite()) {
            return Err(Error::invalid("grid knots must be finite"));
        }
        if knots.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("grid knots must be strictly increasing"));
        }
        Ok(Self { knots })
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn len(&self) -> usize {
        self.knots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.knots.is_empty()
    }

    pub fn start(&self) -> f64 {
        self.knots[0]
    }

    pub fn end(&self) -> f64 {
        self.knots[self.knots.len() - 1]
    }

    /// Spacings `τ_k - τ_{k-1}`, one fewer than the number of knots.
    pub fn spacings(&self) -> Vec<f64> {
        self.knots.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Mean spacing; equal to every spacing on a uniform grid.
    pub fn step(&self) -> f64 {
        (self.end() - self.start()) / (self.len() - 1) as f64
    }

    pub fn contains(&self, t: f64) -> bool {
        let tol = 1e-12 * (self.end() - self.start());
        t >= self.start() - tol && t <= self.end() + tol
    }

    /// Index of the knot equal to `t` (to within a relative tolerance).
    pub fn knot_index(&self, t: f64) -> Option<usize> {
        let tol = 1e-9 * self.step();
        let idx = self.nearest_knot(t);
        ((self.knots[idx] - t).abs() <= tol).then_some(idx)
    }

    pub fn nearest_knot(&self, t: f64) -> usize {
        match self.knots.binary_search_by(|k| k.total_cmp(&t)) {
            Ok(i) => i,
            Err(0) => 0,
            Err(i) if i >= self.knots.len() => self.knots.len() - 1,
            Err(i) => {
                if (t - self.knots[i - 1]) <= (self.knots[i] - t) {
                    i - 1
                } else {
                    i
                }
            }
        }
    }
}
