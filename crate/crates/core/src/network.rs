//! Latent-space dynamic social network.
//!
//! Each individual follows a smooth path through a 2-D latent space. Edge
//! weights are `exp(−‖μ_i − μ_j‖²)` between latent positions at each grid
//! knot, so connections inherit the triangle structure of Euclidean distance.
//!
//! Latent coordinates have prior `N(0, σ_w²·K)` where `K = Δτ·H_w·H_wᵀ` and
//! `H_w` is the unit-peak Gaussian kernel `exp(−(τ−t)²/φ_w²)` on the grid.
//! `K` is numerically rank deficient for any useful `φ_w`, so the factor
//! carries the jitter it needed and that jittered matrix *is* the prior: draws
//! and densities use the same factor, which keeps the σ_w² update exactly
//! conjugate.

use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::kernels::{discretize, KernelSpec};
use crate::linalg::{JitteredCholesky, LN_2PI};

/// Dimension of the latent social space.
pub const LATENT_DIM: usize = 2;

/// Weights below this are flushed to zero.
pub const WEIGHT_FLOOR: f64 = 1e-300;

/// Unit-dispersion latent prior on one grid, factored once.
#[derive(Debug)]
pub struct LatentPrior {
    grid: TimeGrid,
    range: f64,
    chol: JitteredCholesky,
    lower: DMatrix<f64>,
}

impl LatentPrior {
    pub fn new(grid: &TimeGrid, range: f64) -> Result<Self> {
        let spec = KernelSpec::gaussian(range)?.with_normalize(false);
        let h = discretize(&spec, grid.knots(), grid, 1)?.into_values();
        let k = (&h * h.transpose()) * grid.step();
        let chol = JitteredCholesky::new(&k)?;
        let lower = chol.l();
        Ok(Self {
            grid: grid.clone(),
            range,
            chol,
            lower,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn range(&self) -> f64 {
        self.range
    }

    pub fn jitter(&self) -> f64 {
        self.chol.jitter()
    }

    /// Unit-dispersion prior covariance, including jitter.
    pub fn covariance(&self) -> DMatrix<f64> {
        &self.lower * self.lower.transpose()
    }

    /// One coordinate path with unit dispersion.
    pub fn draw_unit<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let m = self.grid.len();
        let z = DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal));
        &self.lower * z
    }

    /// `xᵀK⁻¹x` for one coordinate path.
    pub fn quad_form(&self, x: &DVector<f64>) -> f64 {
        self.chol.quad_form(x)
    }

    pub fn log_det(&self) -> f64 {
        self.chol.log_det()
    }
}

/// Latent positions for every individual, aligned to the prior's grid.
#[derive(Debug, Clone)]
pub struct LatentSocialPaths {
    prior: Arc<LatentPrior>,
    sigma_w2: f64,
    // coords[i][c] is coordinate c of individual i across all knots
    coords: Vec<[DVector<f64>; LATENT_DIM]>,
}

impl LatentSocialPaths {
    pub fn new(
        prior: Arc<LatentPrior>,
        sigma_w2: f64,
        coords: Vec<[DVector<f64>; LATENT_DIM]>,
    ) -> Result<Self> {
        check_positive("sigma_w2", sigma_w2)?;
        let m = prior.grid.len();
        for (i, c) in coords.iter().enumerate() {
            for v in c {
                if v.len() != m {
                    return Err(Error::invalid(format!(
                        "latent path {i} has {} knots, grid has {m}",
                        v.len()
                    )));
                }
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(Error::invalid(format!("latent path {i} is not finite")));
                }
            }
        }
        Ok(Self {
            prior,
            sigma_w2,
            coords,
        })
    }

    /// All individuals at the origin.
    pub fn zeros(prior: Arc<LatentPrior>, sigma_w2: f64, p: usize) -> Result<Self> {
        let m = prior.grid.len();
        Self::new(
            prior,
            sigma_w2,
            vec![[DVector::zeros(m), DVector::zeros(m)]; p],
        )
    }

    pub fn prior(&self) -> &Arc<LatentPrior> {
        &self.prior
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.prior.grid
    }

    pub fn individuals(&self) -> usize {
        self.coords.len()
    }

    pub fn sigma_w2(&self) -> f64 {
        self.sigma_w2
    }

    pub fn set_sigma_w2(&mut self, sigma_w2: f64) -> Result<()> {
        check_positive("sigma_w2", sigma_w2)?;
        self.sigma_w2 = sigma_w2;
        Ok(())
    }

    pub fn range(&self) -> f64 {
        self.prior.range
    }

    pub fn path(&self, individual: usize) -> &[DVector<f64>; LATENT_DIM] {
        &self.coords[individual]
    }

    pub fn set_path(&mut self, individual: usize, path: [DVector<f64>; LATENT_DIM]) {
        self.coords[individual] = path;
    }

    pub fn coords(&self) -> &[[DVector<f64>; LATENT_DIM]] {
        &self.coords
    }

    pub fn position(&self, individual: usize, knot: usize) -> [f64; LATENT_DIM] {
        let c = &self.coords[individual];
        [c[0][knot], c[1][knot]]
    }

    /// `Σ xᵀK⁻¹x` over individuals and coordinates (unit σ_w²).
    pub fn total_quad_form(&self) -> f64 {
        self.coords
            .iter()
            .flat_map(|c| c.iter())
            .map(|x| self.prior.quad_form(x))
            .sum()
    }
}

/// Draw latent paths for `p` individuals from the prior.
pub fn sample_latent_paths<R: Rng + ?Sized>(
    p: usize,
    grid: &TimeGrid,
    sigma_w2: f64,
    range: f64,
    rng: &mut R,
) -> Result<LatentSocialPaths> {
    check_positive("sigma_w2", sigma_w2)?;
    let prior = Arc::new(LatentPrior::new(grid, range)?);
    sample_latent_paths_with(prior, p, sigma_w2, rng)
}

/// Same as [`sample_latent_paths`] with a prior factor that is already built.
pub fn sample_latent_paths_with<R: Rng + ?Sized>(
    prior: Arc<LatentPrior>,
    p: usize,
    sigma_w2: f64,
    rng: &mut R,
) -> Result<LatentSocialPaths> {
    check_positive("sigma_w2", sigma_w2)?;
    let sd = sigma_w2.sqrt();
    let coords = (0..p)
        .map(|_| [prior.draw_unit(rng) * sd, prior.draw_unit(rng) * sd])
        .collect();
    LatentSocialPaths::new(prior, sigma_w2, coords)
}

/// Log prior density of all latent coordinates.
pub fn latent_log_prior(paths: &LatentSocialPaths) -> f64 {
    let m = paths.grid().len() as f64;
    let blocks = (paths.individuals() * LATENT_DIM) as f64;
    let q = paths.total_quad_form();
    -0.5 * (blocks * (m * LN_2PI + m * paths.sigma_w2.ln() + paths.prior.log_det())
        + q / paths.sigma_w2)
}

/// Symmetric edge weights at every grid knot.
#[derive(Debug, Clone, PartialEq)]
pub struct SocialNetwork {
    times: Vec<f64>,
    weights: Vec<DMatrix<f64>>,
}

impl SocialNetwork {
    /// Validates symmetry, range, and unit diagonal.
    pub fn new(grid: &TimeGrid, weights: Vec<DMatrix<f64>>) -> Result<Self> {
        if weights.len() != grid.len() {
            return Err(Error::invalid(format!(
                "network has {} knots, grid has {}",
                weights.len(),
                grid.len()
            )));
        }
        let p = weights.first().map_or(0, |w| w.nrows());
        if p == 0 {
            return Err(Error::invalid("network needs at least one individual"));
        }
        for (k, w) in weights.iter().enumerate() {
            if w.nrows() != p || w.ncols() != p {
                return Err(Error::invalid(format!("weights at knot {k} are not {p}x{p}")));
            }
            for i in 0..p {
                if w[(i, i)] != 1.0 {
                    return Err(Error::invalid(format!(
                        "self weight of individual {i} at knot {k} must be 1"
                    )));
                }
                for j in 0..p {
                    let v = w[(i, j)];
                    if !(0.0..=1.0).contains(&v) {
                        return Err(Error::invalid(format!(
                            "weight ({i},{j}) at knot {k} is outside [0,1]: {v}"
                        )));
                    }
                    if v != w[(j, i)] {
                        return Err(Error::invalid(format!(
                            "weights at knot {k} are not symmetric"
                        )));
                    }
                }
            }
        }
        Ok(Self {
            times: grid.knots().to_vec(),
            weights,
        })
    }

    /// No connections: the social stage becomes the identity.
    pub fn empty(grid: &TimeGrid, p: usize) -> Self {
        Self {
            times: grid.knots().to_vec(),
            weights: vec![DMatrix::identity(p, p); grid.len()],
        }
    }

    /// The same weights at every knot.
    pub fn constant(grid: &TimeGrid, weights: DMatrix<f64>) -> Result<Self> {
        Self::new(grid, vec![weights; grid.len()])
    }

    /// Two individuals joined by a constant weight.
    pub fn constant_pair(grid: &TimeGrid, w12: f64) -> Result<Self> {
        Self::constant(grid, DMatrix::from_row_slice(2, 2, &[1.0, w12, w12, 1.0]))
    }

    /// The same weight `w` between every pair at every knot.
    pub fn uniform(grid: &TimeGrid, p: usize, w: f64) -> Result<Self> {
        let mut m = DMatrix::from_element(p, p, w);
        m.fill_diagonal(1.0);
        Self::constant(grid, m)
    }

    pub fn individuals(&self) -> usize {
        self.weights[0].nrows()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn weights_at(&self, knot: usize) -> &DMatrix<f64> {
        &self.weights[knot]
    }

    pub fn weight(&self, knot: usize, i: usize, j: usize) -> f64 {
        self.weights[knot][(i, j)]
    }

    /// `|w_i·(τ)|`, always ≥ 1.
    pub fn degree(&self, knot: usize, i: usize) -> f64 {
        self.weights[knot].row(i).sum()
    }

    /// Entry `(i, j)` of the social smoothing matrix at `knot`.
    pub fn social_weight(&self, knot: usize, i: usize, j: usize) -> f64 {
        self.weights[knot][(i, j)] / self.degree(knot, i)
    }

    /// Row-stochastic social smoothing matrix at `knot`.
    pub fn social_matrix(&self, knot: usize) -> DMatrix<f64> {
        let w = &self.weights[knot];
        let mut s = w.clone();
        for (mut row, wrow) in s.row_iter_mut().zip(w.row_iter()) {
            row /= wrow.sum();
        }
        s
    }

    /// Overwrite row and column `i` at every knot (used by the sampler when
    /// one latent path changes).
    pub(crate) fn set_individual_weights(&mut self, i: usize, paths: &LatentSocialPaths) {
        let p = self.individuals();
        for (k, w) in self.weights.iter_mut().enumerate() {
            let xi = paths.position(i, k);
            for j in 0..p {
                if j != i {
                    let v = edge_weight(xi, paths.position(j, k));
                    w[(i, j)] = v;
                    w[(j, i)] = v;
                }
            }
        }
    }

    /// Per-knot edge list with columns `time,i,j,weight`, upper triangle only.
    pub fn write_edge_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["time", "i", "j", "weight"])?;
        let p = self.individuals();
        for (k, &t) in self.times.iter().enumerate() {
            for i in 0..p {
                for j in (i + 1)..p {
                    wtr.write_record(&[
                        t.to_string(),
                        (i + 1).to_string(),
                        (j + 1).to_string(),
                        self.weights[k][(i, j)].to_string(),
                    ])?;
                }
            }
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Social smoothing matrix at knot index `knot` (free-function form).
pub fn social_matrix(net: &SocialNetwork, knot: usize) -> DMatrix<f64> {
    net.social_matrix(knot)
}

fn edge_weight(a: [f64; LATENT_DIM], b: [f64; LATENT_DIM]) -> f64 {
    let d2: f64 = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum();
    let w = (-d2).exp();
    if w < WEIGHT_FLOOR {
        0.0
    } else {
        w
    }
}

/// `w_ij(τ) = exp(−‖μ_i(τ) − μ_j(τ)‖²)`, unit diagonal.
pub fn weights_from_paths(paths: &LatentSocialPaths) -> SocialNetwork {
    weights_from_positions(paths.grid(), &paths.coords)
}

/// Network from raw latent coordinates (`coords[i][c]` over grid knots).
pub fn weights_from_positions(
    grid: &TimeGrid,
    coords: &[[DVector<f64>; LATENT_DIM]],
) -> SocialNetwork {
    let p = coords.len();
    let pos = |i: usize, k: usize| [coords[i][0][k], coords[i][1][k]];
    let weights = (0..grid.len())
        .map(|k| {
            let mut w = DMatrix::identity(p, p);
            for i in 0..p {
                for j in (i + 1)..p {
                    let v = edge_weight(pos(i, k), pos(j, k));
                    w[(i, j)] = v;
                    w[(j, i)] = v;
                }
            }
            w
        })
        .collect();
    SocialNetwork {
        times: grid.knots().to_vec(),
        weights,
    }
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} must be > 0, got {v}")))
    }
}
