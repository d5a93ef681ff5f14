//! Composition sampling of the true paths given one posterior draw.
//!
//! Given a parameter record, the scaled true path `σ_μ·μ̃` at any set of
//! prediction times and the telemetry are jointly Gaussian per spatial
//! coordinate. [`conditional_moments`] returns the exact conditional mean and
//! covariance. [`PathPosterior::draw`] produces conditional draws through
//! Matheron's update rule: draw the joint prior, then correct by
//! `C_po·Σ⁻¹·(s − f_o − ε)`. This needs only the factor of `Σ`, which the
//! likelihood already requires, so it never has to factor the (typically
//! near-singular) conditional covariance of a smooth path.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::inference::{ChainRecord, PosteriorChain};
use crate::kernels::{KernelMatrix, Layout, NoiseSpec};
use crate::linalg::{symmetrize, JitteredCholesky};
use crate::movement::{build_effective_h, ChainConfig, MovementParams, Telemetry, SPATIAL_DIM};

/// One draw of both coordinates at the prediction layout.
pub type PathDraw = [DVector<f64>; SPATIAL_DIM];

/// Conditional Gaussian of the scaled true path given the data.
#[derive(Debug, Clone)]
pub struct ConditionalMoments {
    pub mean: PathDraw,
    /// Shared by both coordinates.
    pub covariance: DMatrix<f64>,
    /// Unconditional covariance at the prediction layout.
    pub prior_covariance: DMatrix<f64>,
}

/// Everything needed to draw paths for one parameter record.
#[derive(Debug, Clone)]
pub struct PathPosterior {
    params: MovementParams,
    dt: f64,
    noise_sd: DVector<f64>,
    h_obs: DMatrix<f64>,
    h_pred: DMatrix<f64>,
    // C_po Σ⁻¹
    gain: DMatrix<f64>,
    data: PathDraw,
    pred: Layout,
}

struct Blocks {
    params: MovementParams,
    dt: f64,
    d: DVector<f64>,
    h_obs: KernelMatrix,
    h_pred: KernelMatrix,
    chol: JitteredCholesky,
    cross: DMatrix<f64>,
}

fn blocks(
    record: &ChainRecord,
    data: &Telemetry,
    pred: &Layout,
    grid: &TimeGrid,
    chain: &ChainConfig,
) -> Result<Blocks> {
    let p = data.individuals();
    if pred.individuals() != p {
        return Err(Error::invalid(format!(
            "prediction layout has {} individuals, data has {p}",
            pred.individuals()
        )));
    }
    if pred.is_empty() {
        return Err(Error::invalid("prediction layout is empty"));
    }
    data.check_within(grid)?;
    let params = record.params;
    params.validate()?;
    let net = record.network(grid, p);
    let h_obs = build_effective_h(chain, &net, &params, grid, &data.layout())?;
    let h_pred = build_effective_h(chain, &net, &params, grid, pred)?;
    let noise = NoiseSpec::new(grid.clone(), p, params.sigma0_2)?;
    let d = noise.diagonal();
    let dt = grid.step();
    let scale = params.sigma_mu2() * dt;

    let ho_d = scaled_columns(h_obs.values(), &d);
    let mut sigma = (&ho_d * h_obs.values().transpose()) * scale;
    symmetrize(&mut sigma);
    for i in 0..sigma.nrows() {
        sigma[(i, i)] += params.sigma_s2;
    }
    let chol = JitteredCholesky::new(&sigma)?;
    let cross = (h_pred.values() * ho_d.transpose()) * scale;
    Ok(Blocks {
        params,
        dt,
        d,
        h_obs,
        h_pred,
        chol,
        cross,
    })
}

fn scaled_columns(h: &DMatrix<f64>, d: &DVector<f64>) -> DMatrix<f64> {
    let mut out = h.clone();
    for (c, mut col) in out.column_iter_mut().enumerate() {
        col *= d[c];
    }
    out
}

fn coordinates(data: &Telemetry) -> PathDraw {
    [data.coordinate(0), data.coordinate(1)]
}

/// Exact conditional mean and covariance of `σ_μ·μ̃` at `pred` given `data`.
pub fn conditional_moments(
    record: &ChainRecord,
    data: &Telemetry,
    pred: &Layout,
    grid: &TimeGrid,
    chain: &ChainConfig,
) -> Result<ConditionalMoments> {
    let b = blocks(record, data, pred, grid, chain)?;
    let scale = b.params.sigma_mu2() * b.dt;
    let hp_d = scaled_columns(b.h_pred.values(), &b.d);
    let mut prior_covariance = (&hp_d * b.h_pred.values().transpose()) * scale;
    symmetrize(&mut prior_covariance);
    let s = coordinates(data);
    let mean = [
        &b.cross * b.chol.solve(&s[0]),
        &b.cross * b.chol.solve(&s[1]),
    ];
    let solved = b.chol.solve_mat(&b.cross.transpose());
    let mut covariance = &prior_covariance - &b.cross * solved;
    symmetrize(&mut covariance);
    Ok(ConditionalMoments {
        mean,
        covariance,
        prior_covariance,
    })
}

impl PathPosterior {
    pub fn new(
        record: &ChainRecord,
        data: &Telemetry,
        pred: &Layout,
        grid: &TimeGrid,
        chain: &ChainConfig,
    ) -> Result<Self> {
        let b = blocks(record, data, pred, grid, chain)?;
        let gain = b.chol.solve_mat(&b.cross.transpose()).transpose();
        Ok(Self {
            params: b.params,
            dt: b.dt,
            noise_sd: b.d.map(f64::sqrt),
            h_obs: b.h_obs.into_values(),
            h_pred: b.h_pred.into_values(),
            gain,
            data: coordinates(data),
            pred: pred.clone(),
        })
    }

    pub fn pred(&self) -> &Layout {
        &self.pred
    }

    /// Conditional mean for each coordinate.
    pub fn mean(&self) -> PathDraw {
        [&self.gain * &self.data[0], &self.gain * &self.data[1]]
    }

    /// One conditional draw of both coordinates.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> PathDraw {
        let sigma_mu = self.params.sigma_mu2().sqrt();
        let process_sd = sigma_mu * self.dt.sqrt();
        let obs_sd = self.params.sigma_s2.sqrt();
        let one = |c: usize, rng: &mut R| {
            let z = DVector::from_fn(self.noise_sd.len(), |k, _| {
                self.noise_sd[k] * rng.sample::<f64, _>(StandardNormal)
            });
            let f_obs = (&self.h_obs * &z) * process_sd;
            let f_pred = (&self.h_pred * &z) * process_sd;
            let resid = DVector::from_fn(self.data[c].len(), |r, _| {
                self.data[c][r] - f_obs[r] - obs_sd * rng.sample::<f64, _>(StandardNormal)
            });
            f_pred + &self.gain * resid
        };
        let x = one(0, rng);
        let y = one(1, rng);
        [x, y]
    }
}

/// One path draw at `pred` for a single posterior record.
pub fn composition_sample<R: Rng + ?Sized>(
    record: &ChainRecord,
    data: &Telemetry,
    pred: &Layout,
    grid: &TimeGrid,
    chain: &ChainConfig,
    rng: &mut R,
) -> Result<PathDraw> {
    Ok(PathPosterior::new(record, data, pred, grid, chain)?.draw(rng))
}

/// `count` path draws spread evenly over the chain's records, consecutive
/// draws sharing a record when `count` exceeds the record count.
pub fn reconstruct_paths<R: Rng + ?Sized>(
    chain: &PosteriorChain,
    data: &Telemetry,
    pred: &Layout,
    count: usize,
    rng: &mut R,
) -> Result<Vec<PathDraw>> {
    if chain.records.is_empty() {
        return Err(Error::InsufficientSample { needed: 1, got: 0 });
    }
    if count == 0 {
        return Ok(Vec::new());
    }
    let grid = chain.grid()?;
    let chain_config = chain.config.chain_config()?;
    let n = chain.records.len();
    let mut out = Vec::with_capacity(count);
    let mut current: Option<(usize, PathPosterior)> = None;
    for k in 0..count {
        let idx = k * n / count;
        let reuse = matches!(&current, Some((i, _)) if *i == idx);
        if !reuse {
            let post = PathPosterior::new(&chain.records[idx], data, pred, &grid, &chain_config)?;
            current = Some((idx, post));
        }
        let (_, post) = current.as_ref().expect("set above");
        out.push(post.draw(rng));
    }
    Ok(out)
}

/// Split a concatenated draw into per-individual position sequences.
pub fn split_by_individual(draw: &PathDraw, layout: &Layout) -> Vec<Vec<[f64; SPATIAL_DIM]>> {
    let offsets = layout.offsets();
    (0..layout.individuals())
        .map(|i| {
            (0..layout.times(i).len())
                .map(|r| [draw[0][offsets[i] + r], draw[1][offsets[i] + r]])
                .collect()
        })
        .collect()
}
