//! Kernel evaluation, discretization into smoothing matrices, and composition
//! of kernel chains into one effective smoother.
//!
//! Every discretized matrix maps values indexed by (individual, source time)
//! to values indexed by (individual, target time). Rows and columns are
//! individual-major: all times of individual 0, then individual 1, and so on.
//! Covariances are always `Δτ·H·D·Hᵀ`, rows indexing outputs.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::bessel::x_k1;
use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::linalg::symmetrize;
use crate::network::SocialNetwork;

/// Per-individual time sequences indexing the rows (or columns) of a
/// [`KernelMatrix`].
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    times: Vec<Vec<f64>>,
}

impl Layout {
    pub fn new(times: Vec<Vec<f64>>) -> Self {
        Self { times }
    }

    /// The same times for each of `p` individuals.
    pub fn replicated(times: &[f64], p: usize) -> Self {
        Self {
            times: vec![times.to_vec(); p],
        }
    }

    /// Grid knots for each of `p` individuals; the layout of a noise vector.
    pub fn grid(grid: &TimeGrid, p: usize) -> Self {
        Self::replicated(grid.knots(), p)
    }

    pub fn individuals(&self) -> usize {
        self.times.len()
    }

    pub fn times(&self, individual: usize) -> &[f64] {
        &self.times[individual]
    }

    pub fn all(&self) -> &[Vec<f64>] {
        &self.times
    }

    /// Total number of (individual, time) entries.
    pub fn len(&self) -> usize {
        self.times.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Row offset of each individual's block.
    pub fn offsets(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.times.len());
        let mut acc = 0;
        for t in &self.times {
            out.push(acc);
            acc += t.len();
        }
        out
    }

    fn approx_eq(&self, other: &Layout) -> bool {
        self.times.len() == other.times.len()
            && self.times.iter().zip(&other.times).all(|(a, b)| {
                a.len() == b.len()
                    && a.iter()
                        .zip(b)
                        .all(|(x, y)| (x - y).abs() <= 1e-12 * (1.0 + x.abs()))
            })
    }
}

#[derive(Debug, Clone)]
pub enum KernelKind {
    /// Step function `𝟙{τ ≤ t}`.
    Brownian,
    /// Matérn ν = 1: `(|t−τ|/φ)·K₁(|t−τ|/φ)`.
    InertialMatern { range: f64 },
    /// `exp(−(τ−t)²/φ²)`.
    Gaussian { range: f64 },
    /// Tail-up stream kernel `(1 + (τ−t)/φ)·𝟙{−φ < τ−t ≤ 0}`.
    Stream { range: f64 },
    /// Integrated Wiener stage of order `l ≥ 2`. With `as_printed` the kernel
    /// is the bare ratio `(t−τ)/(l−1)`; otherwise the causal power kernel
    /// `(t−τ)₊^{l−1}/(l−1)!`.
    IntegratedWiener { order: u32, as_printed: bool },
    /// Time-local smoothing across individuals, `w_ij(τ)/|w_i·(τ)|`.
    Social(Arc<SocialNetwork>),
}

#[derive(Debug, Clone)]
pub struct KernelSpec {
    kind: KernelKind,
    normalize: bool,
}

impl KernelSpec {
    pub fn new(kind: KernelKind, normalize: bool) -> Result<Self> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} range must be > 0, got {v}")))
            }
        };
        match &kind {
            KernelKind::InertialMatern { range } => positive("inertial", *range)?,
            KernelKind::Gaussian { range } => positive("gaussian", *range)?,
            KernelKind::Stream { range } => positive("stream", *range)?,
            KernelKind::IntegratedWiener { order, .. } if *order < 2 => {
                return Err(Error::invalid(format!(
                    "integrated Wiener order must be >= 2, got {order}"
                )))
            }
            _ => {}
        }
        Ok(Self { kind, normalize })
    }

    pub fn brownian() -> Self {
        Self {
            kind: KernelKind::Brownian,
            normalize: false,
        }
    }

    /// Row-normalized Matérn ν = 1 smoother.
    pub fn inertial(range: f64) -> Result<Self> {
        Self::new(KernelKind::InertialMatern { range }, true)
    }

    /// Row-normalized Gaussian smoother.
    pub fn gaussian(range: f64) -> Result<Self> {
        Self::new(KernelKind::Gaussian { range }, true)
    }

    pub fn stream(range: f64) -> Result<Self> {
        Self::new(KernelKind::Stream { range }, false)
    }

    pub fn integrated_wiener(order: u32, as_printed: bool) -> Result<Self> {
        Self::new(KernelKind::IntegratedWiener { order, as_printed }, false)
    }

    pub fn social(network: Arc<SocialNetwork>) -> Self {
        Self {
            kind: KernelKind::Social(network),
            normalize: true,
        }
    }

    pub fn with_normalize(mut self, normalize: bool) -> Self {
        if !matches!(self.kind, KernelKind::Social(_)) {
            self.normalize = normalize;
        }
        self
    }

    pub fn kind(&self) -> &KernelKind {
        &self.kind
    }

    pub fn normalize(&self) -> bool {
        self.normalize
    }
}

/// Scalar kernel weight `h(t, τ)`. The social kernel has no scalar form; use
/// [`SocialNetwork::social_matrix`] instead.
pub fn eval_kernel(spec: &KernelSpec, t: f64, tau: f64) -> Result<f64> {
    if !(t.is_finite() && tau.is_finite()) {
        return Err(Error::invalid(format!(
            "kernel arguments must be finite, got t={t}, tau={tau}"
        )));
    }
    scalar_weight(&spec.kind, t, tau)
}

fn scalar_weight(kind: &KernelKind, t: f64, tau: f64) -> Result<f64> {
    Ok(match kind {
        KernelKind::Brownian => {
            if tau <= t {
                1.0
            } else {
                0.0
            }
        }
        KernelKind::InertialMatern { range } => x_k1((t - tau).abs() / range),
        KernelKind::Gaussian { range } => {
            let z = (tau - t) / range;
            (-z * z).exp()
        }
        KernelKind::Stream { range } => {
            let lag = tau - t;
            if lag > -range && lag <= 0.0 {
                1.0 + lag / range
            } else {
                0.0
            }
        }
        KernelKind::IntegratedWiener { order, as_printed } => {
            let l = f64::from(*order);
            if *as_printed {
                (t - tau) / (l - 1.0)
            } else if tau <= t {
                let k = *order as i32 - 1;
                let fact: f64 = (1..=k).map(f64::from).product();
                (t - tau).powi(k) / fact
            } else {
                0.0
            }
        }
        KernelKind::Social(_) => {
            return Err(Error::invalid(
                "social kernel acts across individuals; it has no scalar weight",
            ))
        }
    })
}

/// Discretized smoother.
#[derive(Debug, Clone)]
pub struct KernelMatrix {
    values: DMatrix<f64>,
    source: Layout,
    target: Layout,
}

impl KernelMatrix {
    pub fn new(values: DMatrix<f64>, source: Layout, target: Layout) -> Result<Self> {
        if values.nrows() != target.len() || values.ncols() != source.len() {
            return Err(Error::invalid(format!(
                "matrix is {}x{} but layouts need {}x{}",
                values.nrows(),
                values.ncols(),
                target.len(),
                source.len()
            )));
        }
        if source.individuals() != target.individuals() {
            return Err(Error::invalid("source and target individual counts differ"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("kernel matrix entries must be finite"));
        }
        Ok(Self {
            values,
            source,
            target,
        })
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn into_values(self) -> DMatrix<f64> {
        self.values
    }

    pub fn source(&self) -> &Layout {
        &self.source
    }

    pub fn target(&self) -> &Layout {
        &self.target
    }

    pub fn individuals(&self) -> usize {
        self.source.individuals()
    }

    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.values * v
    }
}

/// Discretize `spec` with the same `targets` for each of `p` individuals.
pub fn discretize(
    spec: &KernelSpec,
    targets: &[f64],
    grid: &TimeGrid,
    p: usize,
) -> Result<KernelMatrix> {
    discretize_layout(spec, &Layout::replicated(targets, p), grid)
}

/// Discretize `spec` onto per-individual `targets`, with grid knots as source.
pub fn discretize_layout(
    spec: &KernelSpec,
    targets: &Layout,
    grid: &TimeGrid,
) -> Result<KernelMatrix> {
    let p = targets.individuals();
    if p == 0 || targets.is_empty() {
        return Err(Error::invalid("discretize needs at least one target"));
    }
    for (i, ts) in targets.all().iter().enumerate() {
        if let Some(t) = ts.iter().find(|t| !grid.contains(**t)) {
            return Err(Error::invalid(format!(
                "target {t} of individual {i} lies outside [{}, {}]",
                grid.start(),
                grid.end()
            )));
        }
    }
    let m = grid.len();
    let source = Layout::grid(grid, p);
    let mut values = DMatrix::zeros(targets.len(), p * m);
    let offsets = targets.offsets();

    match &spec.kind {
        KernelKind::Social(net) => {
            if net.individuals() != p {
                return Err(Error::invalid(format!(
                    "network has {} individuals, layout has {p}",
                    net.individuals()
                )));
            }
            if net.times().len() != m {
                return Err(Error::invalid("network is not defined on this grid"));
            }
            for i in 0..p {
                for (r, &t) in targets.times(i).iter().enumerate() {
                    let k = grid.knot_index(t).ok_or_else(|| {
                        Error::invalid(format!("social kernel target {t} is not a grid knot"))
                    })?;
                    let row = offsets[i] + r;
                    for j in 0..p {
                        values[(row, j * m + k)] = net.social_weight(k, i, j);
                    }
                }
            }
        }
        kind => {
            for i in 0..p {
                for (r, &t) in targets.times(i).iter().enumerate() {
                    let row = offsets[i] + r;
                    let mut sum = 0.0;
                    for (k, &tau) in grid.knots().iter().enumerate() {
                        let w = scalar_weight(kind, t, tau)?;
                        values[(row, i * m + k)] = w;
                        sum += w;
                    }
                    if spec.normalize {
                        if sum == 0.0 || !sum.is_finite() {
                            return Err(Error::DegenerateKernel { row });
                        }
                        for k in 0..m {
                            values[(row, i * m + k)] /= sum;
                        }
                    }
                }
            }
        }
    }
    KernelMatrix::new(values, source, targets.clone())
}

/// Effective smoother of a chain applied first-to-last: `H^(L)···H^(1)`.
pub fn compose(chain: &[KernelMatrix]) -> Result<KernelMatrix> {
    let (first, rest) = chain
        .split_first()
        .ok_or_else(|| Error::invalid("cannot compose an empty chain"))?;
    let mut acc = first.values.clone();
    let mut target = &first.target;
    for (offset, stage) in rest.iter().enumerate() {
        if !stage.source.approx_eq(target) {
            return Err(Error::Composition {
                left: offset,
                right: offset + 1,
                reason: format!(
                    "stage {} outputs {} values but stage {} expects {}",
                    offset,
                    target.len(),
                    offset + 1,
                    stage.source.len()
                ),
            });
        }
        acc = &stage.values * acc;
        target = &stage.target;
    }
    KernelMatrix::new(acc, first.source.clone(), target.clone())
}

/// Diagonal white-noise covariance on the grid: `σ₀²` at each individual's
/// initial knot and 1 elsewhere, with the global `Δτ` factored out.
#[derive(Debug, Clone)]
pub struct NoiseSpec {
    grid: TimeGrid,
    individuals: usize,
    initial_variance: f64,
}

impl NoiseSpec {
    pub fn new(grid: TimeGrid, individuals: usize, initial_variance: f64) -> Result<Self> {
        if individuals == 0 {
            return Err(Error::invalid("noise needs at least one individual"));
        }
        if !(initial_variance.is_finite() && initial_variance >= 0.0) {
            return Err(Error::invalid(format!(
                "initial variance must be >= 0, got {initial_variance}"
            )));
        }
        Ok(Self {
            grid,
            individuals,
            initial_variance,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn step(&self) -> f64 {
        self.grid.step()
    }

    pub fn individuals(&self) -> usize {
        self.individuals
    }

    pub fn initial_variance(&self) -> f64 {
        self.initial_variance
    }

    pub fn diagonal(&self) -> DVector<f64> {
        let m = self.grid.len();
        DVector::from_fn(self.individuals * m, |r, _| {
            if r % m == 0 {
                self.initial_variance
            } else {
                1.0
            }
        })
    }
}

/// `Δτ·H·D·Hᵀ`.
pub fn pcc_covariance(h: &KernelMatrix, noise: &NoiseSpec) -> Result<DMatrix<f64>> {
    let expected = Layout::grid(noise.grid(), noise.individuals());
    if !h.source.approx_eq(&expected) {
        return Err(Error::invalid(format!(
            "smoother source ({} values) does not match the noise grid ({} values)",
            h.source.len(),
            expected.len()
        )));
    }
    let d = noise.diagonal();
    let mut scaled = h.values.clone();
    for (mut col, &dk) in scaled.column_iter_mut().zip(d.iter()) {
        col *= (dk * noise.step()).sqrt();
    }
    let mut cov = &scaled * scaled.transpose();
    symmetrize(&mut cov);
    Ok(cov)
}
