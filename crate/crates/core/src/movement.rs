//! Three-stage movement chain (Brownian → social → inertial), its marginal
//! observation covariance, likelihood, and forward simulation.
//!
//! The effective smoother is assembled directly from its stage structure
//! rather than by multiplying dense stage matrices. Writing `A_i` for the
//! inertial rows of individual `i` and `S_k` for the social matrix at knot
//! `k`, the default ordering gives
//!
//! ```text
//! H̃[(i,t),(j,l)] = Σ_{k ≥ l} A_i[t,k]·S_k[i,j]
//! ```
//!
//! and the social-first ordering gives `(Σ_{k ≥ l} A_i[t,k])·S_l[i,j]`. Both
//! are reverse cumulative sums, so building `H̃` costs `O(n·m·p)`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::bessel::x_k1;
use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::kernels::{pcc_covariance, KernelMatrix, Layout, NoiseSpec};
use crate::linalg::{symmetrize, JitteredCholesky, LN_2PI};
use crate::network::SocialNetwork;

/// Number of spatial coordinates; each is modeled independently.
pub const SPATIAL_DIM: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MovementParams {
    /// Inertial (Matérn) range, time units.
    pub phi_inl: f64,
    /// Measurement-error variance.
    pub sigma_s2: f64,
    /// Process-to-noise variance ratio.
    pub sigma_mu_s2: f64,
    /// Initial-position variance.
    pub sigma0_2: f64,
    /// Latent social-space dispersion.
    pub sigma_w2: f64,
    /// Latent social-space temporal range.
    pub phi_w: f64,
}

impl MovementParams {
    /// Simulation-study truth with the low-tortuosity inertial range.
    pub fn simulation_low_tortuosity() -> Self {
        Self {
            phi_inl: 0.04,
            sigma_s2: 0.0125,
            sigma_mu_s2: 800.0,
            sigma0_2: 1.0,
            sigma_w2: 10.0,
            phi_w: 4.0 / 15.0,
        }
    }

    /// Simulation-study truth with the high-tortuosity inertial range.
    pub fn simulation_high_tortuosity() -> Self {
        Self {
            phi_inl: 0.04 / 3.0,
            ..Self::simulation_low_tortuosity()
        }
    }

    /// Process variance `σ_μ² = σ_{μ/s}²·σ_s²`.
    pub fn sigma_mu2(&self) -> f64 {
        self.sigma_mu_s2 * self.sigma_s2
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("phi_inl", self.phi_inl),
            ("sigma_s2", self.sigma_s2),
            ("sigma_mu_s2", self.sigma_mu_s2),
            ("sigma0_2", self.sigma0_2),
            ("sigma_w2", self.sigma_w2),
            ("phi_w", self.phi_w),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!("{name} must be > 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// `Gamma(shape, rate)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GammaPrior {
    pub shape: f64,
    pub rate: f64,
}

impl GammaPrior {
    pub fn log_density(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return f64::NEG_INFINITY;
        }
        self.shape * self.rate.ln() - statrs::function::gamma::ln_gamma(self.shape)
            + (self.shape - 1.0) * x.ln()
            - self.rate * x
    }
}

/// `IG(shape, scale)` with density `∝ x^{−shape−1} e^{−scale/x}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InvGammaPrior {
    pub shape: f64,
    pub scale: f64,
}

impl InvGammaPrior {
    pub fn log_density(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return f64::NEG_INFINITY;
        }
        self.shape * self.scale.ln() - statrs::function::gamma::ln_gamma(self.shape)
            - (self.shape + 1.0) * x.ln()
            - self.scale / x
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorSpec {
    pub phi_inl: GammaPrior,
    pub sigma0_2: InvGammaPrior,
    pub sigma_mu_s2: InvGammaPrior,
    pub sigma_s2: InvGammaPrior,
    pub sigma_w2: InvGammaPrior,
}

impl Default for PriorSpec {
    /// Simulation-study priors.
    fn default() -> Self {
        let diffuse = InvGammaPrior {
            shape: 1e-3,
            scale: 1e-3,
        };
        Self {
            phi_inl: GammaPrior {
                shape: 2.0,
                rate: 100.0,
            },
            sigma0_2: diffuse,
            sigma_mu_s2: diffuse,
            sigma_s2: diffuse,
            sigma_w2: InvGammaPrior {
                shape: 52.0,
                scale: 10.0,
            },
        }
    }
}

impl PriorSpec {
    /// Priors for real-data fits: an informative initial-position variance.
    pub fn application() -> Self {
        Self {
            sigma0_2: InvGammaPrior {
                shape: 1.0,
                scale: 10.0,
            },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let checks = [
            ("phi_inl shape", self.phi_inl.shape),
            ("phi_inl rate", self.phi_inl.rate),
            ("sigma0_2 shape", self.sigma0_2.shape),
            ("sigma0_2 scale", self.sigma0_2.scale),
            ("sigma_mu_s2 shape", self.sigma_mu_s2.shape),
            ("sigma_mu_s2 scale", self.sigma_mu_s2.scale),
            ("sigma_s2 shape", self.sigma_s2.shape),
            ("sigma_s2 scale", self.sigma_s2.scale),
            ("sigma_w2 shape", self.sigma_w2.shape),
            ("sigma_w2 scale", self.sigma_w2.scale),
        ];
        for (name, v) in checks {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!("prior {name} must be > 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Observations of one individual.
#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub times: Vec<f64>,
    pub positions: Vec<[f64; SPATIAL_DIM]>,
}

impl Track {
    pub fn new(times: Vec<f64>, positions: Vec<[f64; SPATIAL_DIM]>) -> Result<Self> {
        if times.len() != positions.len() {
            return Err(Error::invalid("track times and positions differ in length"));
        }
        Ok(Self { times, positions })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Telemetry for `p` individuals on the internal time scale.
#[derive(Debug, Clone, PartialEq)]
pub struct Telemetry {
    tracks: Vec<Track>,
}

impl Telemetry {
    pub fn new(tracks: Vec<Track>) -> Result<Self> {
        if tracks.is_empty() {
            return Err(Error::invalid("telemetry needs at least one individual"));
        }
        for (i, tr) in tracks.iter().enumerate() {
            if tr.len() < 2 {
                return Err(Error::invalid(format!(
                    "individual {i} has {} observations; at least 2 are required",
                    tr.len()
                )));
            }
            if tr.times.iter().any(|t| !t.is_finite())
                || tr.positions.iter().flatten().any(|v| !v.is_finite())
            {
                return Err(Error::invalid(format!(
                    "individual {i} has non-finite observations"
                )));
            }
        }
        Ok(Self { tracks })
    }

    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    pub fn individuals(&self) -> usize {
        self.tracks.len()
    }

    pub fn total_observations(&self) -> usize {
        self.tracks.iter().map(Track::len).sum()
    }

    pub fn layout(&self) -> Layout {
        Layout::new(self.tracks.iter().map(|t| t.times.clone()).collect())
    }

    /// Stacked observations of one spatial coordinate, individual-major.
    pub fn coordinate(&self, c: usize) -> DVector<f64> {
        DVector::from_iterator(
            self.total_observations(),
            self.tracks
                .iter()
                .flat_map(|t| t.positions.iter().map(move |pos| pos[c])),
        )
    }

    pub fn check_within(&self, grid: &TimeGrid) -> Result<()> {
        for (i, tr) in self.tracks.iter().enumerate() {
            if let Some(t) = tr.times.iter().find(|t| !grid.contains(**t)) {
                return Err(Error::invalid(format!(
                    "observation time {t} of individual {i} is outside [{}, {}]",
                    grid.start(),
                    grid.end()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Brownian,
    Social,
    Inertial,
}

/// Ordered stage list of the movement chain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChainConfig {
    stages: Vec<Stage>,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            stages: vec![Stage::Brownian, Stage::Social, Stage::Inertial],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Ordering {
    BrownianFirst,
    SocialFirst,
    NoSocial,
}

impl ChainConfig {
    /// Accepts Brownian and (at most one) social stage in either order,
    /// followed by the inertial stage.
    pub fn new(stages: Vec<Stage>) -> Result<Self> {
        let count = |s: Stage| stages.iter().filter(|x| **x == s).count();
        if count(Stage::Brownian) != 1 || count(Stage::Inertial) != 1 {
            return Err(Error::invalid(
                "chain needs exactly one brownian and one inertial stage",
            ));
        }
        if count(Stage::Social) > 1 {
            return Err(Error::invalid("at most one social stage is permitted"));
        }
        if stages.last() != Some(&Stage::Inertial) {
            return Err(Error::invalid("the inertial stage must come last"));
        }
        Ok(Self { stages })
    }

    /// Social smoothing of velocities: social → Brownian → inertial.
    pub fn social_first() -> Self {
        Self {
            stages: vec![Stage::Social, Stage::Brownian, Stage::Inertial],
        }
    }

    pub fn stages(&self) -> &[Stage] {
        &self.stages
    }

    fn ordering(&self) -> Ordering {
        match self.stages.as_slice() {
            [Stage::Social, ..] => Ordering::SocialFirst,
            [Stage::Brownian, Stage::Social, ..] => Ordering::BrownianFirst,
            _ => Ordering::NoSocial,
        }
    }
}

/// Row-normalized inertial rows for each individual: `n_i × m` blocks.
pub fn inertial_rows(grid: &TimeGrid, targets: &Layout, phi_inl: f64) -> Result<Vec<DMatrix<f64>>> {
    if !(phi_inl.is_finite() && phi_inl > 0.0) {
        return Err(Error::invalid(format!("phi_inl must be > 0, got {phi_inl}")));
    }
    let knots = grid.knots();
    let mut row_offset = 0;
    targets
        .all()
        .iter()
        .map(|times| {
            let mut a = DMatrix::zeros(times.len(), knots.len());
            for (r, &t) in times.iter().enumerate() {
                if !grid.contains(t) {
                    return Err(Error::invalid(format!(
                        "target time {t} is outside [{}, {}]",
                        grid.start(),
                        grid.end()
                    )));
                }
                let mut sum = 0.0;
                for (k, &tau) in knots.iter().enumerate() {
                    let w = x_k1((t - tau).abs() / phi_inl);
                    a[(r, k)] = w;
                    sum += w;
                }
                // a subnormal sum would overflow on normalization
                if !(sum.is_finite() && sum >= f64::MIN_POSITIVE) {
                    return Err(Error::DegenerateKernel {
                        row: row_offset + r,
                    });
                }
                a.row_mut(r).scale_mut(1.0 / sum);
            }
            row_offset += times.len();
            Ok(a)
        })
        .collect()
}

/// Effective smoother `H̃` mapping the `p·m` noise vector to `targets`.
pub fn build_effective_h(
    config: &ChainConfig,
    net: &SocialNetwork,
    params: &MovementParams,
    grid: &TimeGrid,
    targets: &Layout,
) -> Result<KernelMatrix> {
    let rows = inertial_rows(grid, targets, params.phi_inl)?;
    assemble_effective_h(config, net, grid, targets, &rows)
}

/// [`build_effective_h`] with precomputed inertial rows.
pub fn assemble_effective_h(
    config: &ChainConfig,
    net: &SocialNetwork,
    grid: &TimeGrid,
    targets: &Layout,
    rows: &[DMatrix<f64>],
) -> Result<KernelMatrix> {
    let p = targets.individuals();
    let m = grid.len();
    if net.individuals() != p || net.times().len() != m {
        return Err(Error::invalid(format!(
            "network ({} individuals, {} knots) does not match layout ({p}, {m})",
            net.individuals(),
            net.times().len()
        )));
    }
    if rows.len() != p {
        return Err(Error::invalid("inertial rows do not match the layout"));
    }
    let ordering = config.ordering();
    let social: Vec<DMatrix<f64>> = match ordering {
        Ordering::NoSocial => Vec::new(),
        _ => (0..m).map(|k| net.social_matrix(k)).collect(),
    };

    let mut h = DMatrix::zeros(targets.len(), p * m);
    let offsets = targets.offsets();
    let mut acc = vec![0.0; p];
    for i in 0..p {
        let a = &rows[i];
        for r in 0..a.nrows() {
            let row = offsets[i] + r;
            match ordering {
                Ordering::BrownianFirst => {
                    acc.iter_mut().for_each(|v| *v = 0.0);
                    for k in (0..m).rev() {
                        let aik = a[(r, k)];
                        let s = &social[k];
                        for j in 0..p {
                            acc[j] += aik * s[(i, j)];
                            h[(row, j * m + k)] = acc[j];
                        }
                    }
                }
                Ordering::SocialFirst => {
                    let mut tail = 0.0;
                    for k in (0..m).rev() {
                        tail += a[(r, k)];
                        let s = &social[k];
                        for j in 0..p {
                            h[(row, j * m + k)] = tail * s[(i, j)];
                        }
                    }
                }
                Ordering::NoSocial => {
                    let mut tail = 0.0;
                    for k in (0..m).rev() {
                        tail += a[(r, k)];
                        h[(row, i * m + k)] = tail;
                    }
                }
            }
        }
    }
    KernelMatrix::new(h, Layout::grid(grid, p), targets.clone())
}

/// `Σ = σ_s²·I + σ_μ²·Δτ·H̃·D·H̃ᵀ`, shared by both spatial coordinates.
pub fn marginal_covariance(
    h: &KernelMatrix,
    params: &MovementParams,
    grid: &TimeGrid,
) -> Result<DMatrix<f64>> {
    if !(params.sigma_s2 >= 0.0 && params.sigma_mu_s2 >= 0.0) {
        return Err(Error::invalid("variances must be non-negative"));
    }
    let noise = NoiseSpec::new(grid.clone(), h.individuals(), params.sigma0_2)?;
    let mut sigma = pcc_covariance(h, &noise)? * params.sigma_mu2();
    for i in 0..sigma.nrows() {
        sigma[(i, i)] += params.sigma_s2;
    }
    Ok(sigma)
}

/// The two pieces of `Δτ·H̃·D·H̃ᵀ` that do not depend on the variance
/// parameters: the contribution of the non-initial knots (`base`) and of the
/// initial knots at unit variance (`initial`).
#[derive(Debug, Clone)]
pub struct CovarianceParts {
    pub base: DMatrix<f64>,
    pub initial: DMatrix<f64>,
}

impl CovarianceParts {
    pub fn new(h: &KernelMatrix, grid: &TimeGrid) -> Self {
        let m = grid.len();
        let p = h.individuals();
        let dt = grid.step();
        let mut rest = h.values().clone();
        let mut init = DMatrix::zeros(rest.nrows(), p);
        for i in 0..p {
            init.set_column(i, &rest.column(i * m));
            rest.column_mut(i * m).fill(0.0);
        }
        let mut base = (&rest * rest.transpose()) * dt;
        let mut initial = (&init * init.transpose()) * dt;
        symmetrize(&mut base);
        symmetrize(&mut initial);
        Self { base, initial }
    }

    pub fn covariance(&self, params: &MovementParams) -> DMatrix<f64> {
        let mut sigma = &self.base + &self.initial * params.sigma0_2;
        sigma *= params.sigma_mu2();
        for i in 0..sigma.nrows() {
            sigma[(i, i)] += params.sigma_s2;
        }
        sigma
    }
}

/// Sum over spatial coordinates of mean-zero Gaussian log densities with
/// shared covariance `sigma`. One factorization serves both coordinates.
pub fn log_likelihood(data: &Telemetry, sigma: &DMatrix<f64>) -> Result<f64> {
    let n = data.total_observations();
    if sigma.nrows() != n || sigma.ncols() != n {
        return Err(Error::invalid(format!(
            "covariance is {}x{} but there are {n} observations",
            sigma.nrows(),
            sigma.ncols()
        )));
    }
    let chol = JitteredCholesky::new(sigma)?;
    Ok(log_likelihood_with(data, &chol))
}

pub(crate) fn log_likelihood_with(data: &Telemetry, chol: &JitteredCholesky) -> f64 {
    let n = data.total_observations() as f64;
    let log_det = chol.log_det();
    (0..SPATIAL_DIM)
        .map(|c| -0.5 * (n * LN_2PI + log_det + chol.quad_form(&data.coordinate(c))))
        .sum()
}

/// Unscaled intermediate processes of one spatial coordinate on the grid,
/// in chain order. Each is a `p·m` vector, individual-major.
#[derive(Debug, Clone)]
pub struct StagedPaths {
    pub first: DVector<f64>,
    pub second: DVector<f64>,
    pub smoothed: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct Simulation {
    /// `σ_μ·μ̃` at every grid knot: `truth[i][knot]`.
    pub truth: Vec<Vec<[f64; SPATIAL_DIM]>>,
    /// One entry per spatial coordinate.
    pub staged: [StagedPaths; SPATIAL_DIM],
    pub telemetry: Telemetry,
}

/// Forward-simulate true paths on the grid and telemetry at `obs`.
pub fn simulate<R: Rng + ?Sized>(
    params: &MovementParams,
    net: &SocialNetwork,
    grid: &TimeGrid,
    obs: &Layout,
    config: &ChainConfig,
    rng: &mut R,
) -> Result<Simulation> {
    params.validate()?;
    let p = obs.individuals();
    let m = grid.len();
    if net.individuals() != p || net.times().len() != m {
        return Err(Error::invalid("network does not match the observation layout"));
    }
    let grid_layout = Layout::grid(grid, p);
    let grid_rows = inertial_rows(grid, &grid_layout, params.phi_inl)?;
    let obs_rows = inertial_rows(grid, obs, params.phi_inl)?;
    let dt = grid.step();
    let sigma_mu = params.sigma_mu2().sqrt();
    let noise_sd = params.sigma_s2.sqrt();
    let ordering = config.ordering();
    let social: Vec<DMatrix<f64>> = (0..m).map(|k| net.social_matrix(k)).collect();

    let mix = |v: &DVector<f64>| {
        let mut out = DVector::zeros(p * m);
        for k in 0..m {
            for i in 0..p {
                out[i * m + k] = (0..p).map(|j| social[k][(i, j)] * v[j * m + k]).sum();
            }
        }
        out
    };
    let cumsum = |v: &DVector<f64>| {
        let mut out = v.clone();
        for i in 0..p {
            for k in 1..m {
                out[i * m + k] += out[i * m + k - 1];
            }
        }
        out
    };
    let smooth = |rows: &[DMatrix<f64>], v: &DVector<f64>| -> Vec<DVector<f64>> {
        rows.iter()
            .enumerate()
            .map(|(i, a)| a * v.rows(i * m, m))
            .collect()
    };

    let mut truth = vec![vec![[0.0; SPATIAL_DIM]; m]; p];
    let mut observed: Vec<Vec<[f64; SPATIAL_DIM]>> =
        obs.all().iter().map(|t| vec![[0.0; SPATIAL_DIM]; t.len()]).collect();
    let mut staged = Vec::with_capacity(SPATIAL_DIM);

    for c in 0..SPATIAL_DIM {
        let noise = DVector::from_fn(p * m, |r, _| {
            let var = if r % m == 0 { params.sigma0_2 * dt } else { dt };
            var.sqrt() * rng.sample::<f64, _>(StandardNormal)
        });
        let (first, second) = match ordering {
            Ordering::BrownianFirst => {
                let bm = cumsum(&noise);
                let soc = mix(&bm);
                (bm, soc)
            }
            Ordering::SocialFirst => {
                let soc = mix(&noise);
                let bm = cumsum(&soc);
                (soc, bm)
            }
            Ordering::NoSocial => {
                let bm = cumsum(&noise);
                (bm.clone(), bm)
            }
        };
        let on_grid = smooth(&grid_rows, &second);
        let at_obs = smooth(&obs_rows, &second);
        let mut smoothed = DVector::zeros(p * m);
        for i in 0..p {
            smoothed.rows_mut(i * m, m).copy_from(&on_grid[i]);
            for k in 0..m {
                truth[i][k][c] = sigma_mu * on_grid[i][k];
            }
            for (r, v) in at_obs[i].iter().enumerate() {
                let eps = if noise_sd > 0.0 {
                    noise_sd * rng.sample::<f64, _>(StandardNormal)
                } else {
                    0.0
                };
                observed[i][r][c] = sigma_mu * v + eps;
            }
        }
        staged.push(StagedPaths {
            first,
            second,
            smoothed,
        });
    }

    let tracks = obs
        .all()
        .iter()
        .zip(observed)
        .map(|(t, pos)| Track::new(t.clone(), pos))
        .collect::<Result<Vec<_>>>()?;
    let staged: [StagedPaths; SPATIAL_DIM] = staged
        .try_into()
        .map_err(|_| Error::invalid("staged paths"))?;
    Ok(Simulation {
        truth,
        staged,
        telemetry: Telemetry::new(tracks)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{compose, discretize, discretize_layout, KernelSpec};
    use std::sync::Arc;

    fn varying_network(grid: &TimeGrid) -> SocialNetwork {
        let weights = grid
            .knots()
            .iter()
            .map(|t| {
                let w = 0.2 + 0.7 * t;
                DMatrix::from_row_slice(2, 2, &[1.0, w, w, 1.0])
            })
            .collect();
        SocialNetwork::new(grid, weights).unwrap()
    }

    fn generic_h(
        order: &[Stage],
        net: &SocialNetwork,
        grid: &TimeGrid,
        targets: &Layout,
        phi: f64,
    ) -> KernelMatrix {
        let p = targets.individuals();
        let stages: Vec<KernelMatrix> = order
            .iter()
            .map(|s| match s {
                Stage::Brownian => discretize(&KernelSpec::brownian(), grid.knots(), grid, p),
                Stage::Social => discretize(
                    &KernelSpec::social(Arc::new(net.clone())),
                    grid.knots(),
                    grid,
                    p,
                ),
                Stage::Inertial => {
                    discretize_layout(&KernelSpec::inertial(phi).unwrap(), targets, grid)
                }
            })
            .collect::<Result<_>>()
            .unwrap();
        compose(&stages).unwrap()
    }

    #[test]
    fn fast_builder_matches_dense_composition() {
        let grid = TimeGrid::uniform(0.0, 1.0, 12).unwrap();
        let net = varying_network(&grid);
        let targets = Layout::new(vec![vec![0.05, 0.5, 0.91], vec![0.0, 0.33, 0.7, 1.0]]);
        let params = MovementParams {
            phi_inl: 0.15,
            ..MovementParams::simulation_low_tortuosity()
        };
        for stages in [
            vec![Stage::Brownian, Stage::Social, Stage::Inertial],
            vec![Stage::Social, Stage::Brownian, Stage::Inertial],
            vec![Stage::Brownian, Stage::Inertial],
        ] {
            let config = ChainConfig::new(stages.clone()).unwrap();
            let fast = build_effective_h(&config, &net, &params, &grid, &targets).unwrap();
            let slow = generic_h(&stages, &net, &grid, &targets, params.phi_inl);
            let scale = slow.values().abs().max();
            assert!((fast.values() - slow.values()).abs().max() <= 1e-12 * scale);
        }
    }

    #[test]
    fn orderings_differ() {
        let grid = TimeGrid::uniform(0.0, 1.0, 5).unwrap();
        let net = varying_network(&grid);
        let targets = Layout::grid(&grid, 2);
        let params = MovementParams {
            phi_inl: 0.3,
            ..MovementParams::simulation_low_tortuosity()
        };
        let a = build_effective_h(&ChainConfig::default(), &net, &params, &grid, &targets).unwrap();
        let b = build_effective_h(&ChainConfig::social_first(), &net, &params, &grid, &targets)
            .unwrap();
        assert!((a.values() - b.values()).abs().max() > 1e-3);
    }

    #[test]
    fn full_connection_gives_identical_rows() {
        let grid = TimeGrid::uniform(0.0, 1.0, 20).unwrap();
        let net = SocialNetwork::constant_pair(&grid, 1.0).unwrap();
        let targets = Layout::replicated(&[0.1, 0.45, 0.8], 2);
        let params = MovementParams::simulation_low_tortuosity();
        let h = build_effective_h(&ChainConfig::default(), &net, &params, &grid, &targets).unwrap();
        for r in 0..3 {
            assert_eq!(h.values().row(r), h.values().row(r + 3));
        }
    }

    #[test]
    fn chain_config_validation() {
        assert!(ChainConfig::new(vec![Stage::Brownian, Stage::Social]).is_err());
        assert!(ChainConfig::new(vec![
            Stage::Social,
            Stage::Brownian,
            Stage::Social,
            Stage::Inertial
        ])
        .is_err());
        assert!(ChainConfig::new(vec![Stage::Inertial, Stage::Brownian]).is_err());
    }

    #[test]
    fn pure_noise_limit() {
        let grid = TimeGrid::uniform(0.0, 1.0, 10).unwrap();
        let net = SocialNetwork::empty(&grid, 1);
        let targets = Layout::replicated(&[0.2, 0.5, 0.9], 1);
        let mut params = MovementParams::simulation_low_tortuosity();
        params.sigma_mu_s2 = 0.0;
        let h = build_effective_h(&ChainConfig::default(), &net, &params, &grid, &targets).unwrap();
        let sigma = marginal_covariance(&h, &params, &grid).unwrap();
        assert!((sigma - DMatrix::identity(3, 3) * params.sigma_s2).abs().max() < 1e-18);
    }

    #[test]
    fn parts_match_direct_covariance() {
        let grid = TimeGrid::uniform(0.0, 1.0, 15).unwrap();
        let net = varying_network(&grid);
        let targets = Layout::new(vec![vec![0.1, 0.2, 0.95], vec![0.5, 0.6]]);
        let params = MovementParams {
            phi_inl: 0.1,
            sigma0_2: 3.0,
            ..MovementParams::simulation_low_tortuosity()
        };
        let h = build_effective_h(&ChainConfig::default(), &net, &params, &grid, &targets).unwrap();
        let direct = marginal_covariance(&h, &params, &grid).unwrap();
        let parts = CovarianceParts::new(&h, &grid).covariance(&params);
        assert!((direct.clone() - parts).abs().max() <= 1e-12 * direct.abs().max());
        for i in 0..direct.nrows() {
            assert!(direct[(i, i)] >= params.sigma_s2);
        }
    }

    #[test]
    fn identity_covariance_likelihood() {
        let tracks = vec![
            Track::new(vec![0.1, 0.2], vec![[0.0, 0.0]; 2]).unwrap(),
            Track::new(vec![0.3, 0.4, 0.5], vec![[0.0, 0.0]; 3]).unwrap(),
        ];
        let data = Telemetry::new(tracks).unwrap();
        let ll = log_likelihood(&data, &DMatrix::identity(5, 5)).unwrap();
        assert!((ll - 2.0 * (-2.5 * LN_2PI)).abs() < 1e-12);
        assert!(log_likelihood(&data, &DMatrix::identity(4, 4)).is_err());
    }

    #[test]
    fn telemetry_validation() {
        let one = Track::new(vec![0.5], vec![[0.0, 0.0]]).unwrap();
        assert!(Telemetry::new(vec![one]).is_err());
        assert!(Track::new(vec![0.1, 0.2], vec![[0.0, 0.0]]).is_err());
        let nan = Track::new(vec![0.1, 0.2], vec![[0.0, f64::NAN], [0.0, 0.0]]).unwrap();
        assert!(Telemetry::new(vec![nan]).is_err());
    }

    #[test]
    fn table_one_identity() {
        let p = MovementParams::simulation_low_tortuosity();
        assert_eq!(p.sigma_mu2(), 10.0);
    }

    #[test]
    fn prior_densities_normalize() {
        let g = GammaPrior {
            shape: 2.0,
            rate: 100.0,
        };
        let ig = InvGammaPrior {
            shape: 3.0,
            scale: 2.0,
        };
        let integrate = |f: &dyn Fn(f64) -> f64, hi: f64| {
            let n = 200_000;
            let h = hi / n as f64;
            (1..n).map(|k| f(k as f64 * h).exp()).sum::<f64>() * h
        };
        assert!((integrate(&|x| g.log_density(x), 1.0) - 1.0).abs() < 1e-6);
        assert!((integrate(&|x| ig.log_density(x), 200.0) - 1.0).abs() < 1e-4);
    }
}
