//! Modified Bessel function of the second kind, order one.
//!
//! Small arguments use the ascending series
//!
//! ```text
//! K₁(x) = 1/x + ln(x/2)·I₁(x) − (x/4)·Σₖ [ψ(k+1) + ψ(k+2)]·(x²/4)ᵏ / (k!(k+1)!)
//! ```
//!
//! and larger arguments use Steed's continued fraction for the ratio
//! `K₁/K₀`, normalized through the Temme sum. Both are accurate to a few ulps
//! on their branch.

use std::f64::consts::PI;

use crate::error::{Error, Result};

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
const SERIES_CUTOFF: f64 = 2.0;
const MAX_TERMS: usize = 10_000;

/// `K₁(x)` for `x > 0`.
pub fn bessel_k1(x: f64) -> Result<f64> {
    if x.is_nan() || x <= 0.0 {
        return Err(Error::Domain(format!("K1 requires x > 0, got {x}")));
    }
    if x.is_infinite() {
        return Ok(0.0);
    }
    Ok(if x <= SERIES_CUTOFF {
        k1_series(x)
    } else {
        k1_continued_fraction(x)
    })
}

/// Scaled form `x·K₁(x)`, continuous at 0 with limit 1. This is the Matérn
/// ν = 1 correlation at lag `x`.
pub fn x_k1(x: f64) -> f64 {
    let x = x.abs();
    if x == 0.0 {
        return 1.0;
    }
    if x > 745.0 {
        return 0.0;
    }
    if x <= SERIES_CUTOFF {
        x * k1_series(x)
    } else {
        x * k1_continued_fraction(x)
    }
}

fn k1_series(x: f64) -> f64 {
    let q = 0.25 * x * x;
    // I₁(x) = (x/2) Σ qᵏ / (k!(k+1)!)
    // ψ(k+1) = −γ + H_k
    let mut term = 1.0; // qᵏ / (k!(k+1)!)
    let mut harmonic = 0.0; // H_k
    let mut i1_sum = 0.0;
    let mut psi_sum = 0.0;
    for k in 0..MAX_TERMS {
        let psi_k1 = -EULER_GAMMA + harmonic;
        let psi_k2 = psi_k1 + 1.0 / (k as f64 + 1.0);
        i1_sum += term;
        psi_sum += (psi_k1 + psi_k2) * term;
        if term < 1e-17 * i1_sum {
            break;
        }
        harmonic += 1.0 / (k as f64 + 1.0);
        term *= q / ((k as f64 + 1.0) * (k as f64 + 2.0));
    }
    let i1 = 0.5 * x * i1_sum;
    1.0 / x + (0.5 * x).ln() * i1 - 0.25 * x * psi_sum
}

fn k1_continued_fraction(x: f64) -> f64 {
    // Steed's algorithm with order μ = 0; yields K₀ and K₁.
    let mut b = 2.0 * (1.0 + x);
    let mut d = 1.0 / b;
    let mut h = d;
    let mut delh = d;
    let mut q1 = 0.0;
    let mut q2 = 1.0;
    let a1 = 0.25;
    let mut q = a1;
    let mut c = a1;
    let mut a = -a1;
    let mut s = 1.0 + q * delh;
    for i in 2..MAX_TERMS {
        let fi = i as f64;
        a -= 2.0 * (fi - 1.0);
        c = -a * c / fi;
        let qnew = (q1 - b * q2) / a;
        q1 = q2;
        q2 = qnew;
        q += c * qnew;
        b += 2.0;
        d = 1.0 / (b + a * d);
        delh *= b * d - 1.0;
        h += delh;
        let dels = q * delh;
        s += dels;
        if (dels / s).abs() < f64::EPSILON {
            break;
        }
    }
    h *= a1;
    let k0 = (PI / (2.0 * x)).sqrt() * (-x).exp() / s;
    k0 * (x + 0.5 - h) / x
}
