//! Metropolis-within-Gibbs sampler for the integrated movement model.
//!
//! One sweep updates, in order:
//!
//! 1. `φ_inl`, `σ_s²`, `σ_{μ/s}²`, `σ₀²` by log-scale random-walk
//!    Metropolis-Hastings against the integrated likelihood (Jacobian
//!    included),
//! 2. each individual's latent social path by preconditioned Crank-Nicolson,
//!    whose proposal leaves the Gaussian latent prior invariant so only the
//!    likelihood ratio enters the acceptance probability,
//! 3. `σ_w²` by its conjugate inverse-gamma full conditional.
//!
//! The IP-IND variant fixes the network to empty and skips steps 2 and 3.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::kernels::{KernelMatrix, Layout};
use crate::linalg::JitteredCholesky;
use crate::movement::{
    assemble_effective_h, inertial_rows, log_likelihood_with, ChainConfig, CovarianceParts,
    InvGammaPrior, MovementParams, PriorSpec, Stage, Telemetry,
};
use crate::network::{
    sample_latent_paths_with, weights_from_positions, LatentPrior, LatentSocialPaths,
    SocialNetwork, LATENT_DIM,
};

/// Iterations per burn-in adaptation window.
const ADAPT_WINDOW: usize = 50;
/// Iterations per acceptance-health window.
const HEALTH_WINDOW: usize = 500;
const TARGET_ACCEPT: (f64, f64) = (0.20, 0.45);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    /// Dependent paths with a latent dynamic network.
    #[serde(rename = "ip-dep")]
    Dependent,
    /// Independent paths (empty, fixed network).
    #[serde(rename = "ip-ind")]
    Independent,
}

impl Variant {
    pub fn label(&self) -> &'static str {
        match self {
            Variant::Dependent => "IP-DEP",
            Variant::Independent => "IP-IND",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ip-dep" | "dep" | "dependent" => Ok(Variant::Dependent),
            "ip-ind" | "ind" | "independent" => Ok(Variant::Independent),
            other => Err(Error::invalid(format!("unknown model variant '{other}'"))),
        }
    }
}

/// Where IP-DEP latent paths start.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentInit {
    /// Every individual at the latent origin, the prior mean.
    #[default]
    Origin,
    /// A draw from the latent prior.
    PriorDraw,
}

/// Log-scale random-walk standard deviations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProposalScales {
    pub phi_inl: f64,
    pub sigma_s2: f64,
    pub sigma_mu_s2: f64,
    pub sigma0_2: f64,
}

impl Default for ProposalScales {
    fn default() -> Self {
        Self {
            phi_inl: 0.1,
            sigma_s2: 0.1,
            sigma_mu_s2: 0.1,
            sigma0_2: 0.1,
        }
    }
}

/// Which blocks are sampled; disabled blocks stay at their initial values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UpdateMask {
    pub phi_inl: bool,
    pub sigma_s2: bool,
    pub sigma_mu_s2: bool,
    pub sigma0_2: bool,
    pub latent_paths: bool,
    pub sigma_w2: bool,
}

impl Default for UpdateMask {
    fn default() -> Self {
        Self {
            phi_inl: true,
            sigma_s2: true,
            sigma_mu_s2: true,
            sigma0_2: true,
            latent_paths: true,
            sigma_w2: true,
        }
    }
}

impl UpdateMask {
    /// Network hyperparameters held fixed, as in the simulation study.
    pub fn fixed_network_hyperparameters() -> Self {
        Self {
            sigma_w2: false,
            ..Self::default()
        }
    }

    /// Only `φ_inl` moves.
    pub fn only_phi_inl() -> Self {
        Self {
            phi_inl: true,
            sigma_s2: false,
            sigma_mu_s2: false,
            sigma0_2: false,
            latent_paths: false,
            sigma_w2: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MCMCConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    /// Number of knots of the `[0, 1]` grid.
    pub grid_size: usize,
    pub scales: ProposalScales,
    pub pcn_beta: f64,
    pub seed: u64,
    pub variant: Variant,
    /// Tune proposal scales during burn-in (frozen afterwards).
    pub adapt: bool,
    pub updates: UpdateMask,
    pub stages: Vec<Stage>,
    /// Starting values; `phi_w` is always held fixed.
    pub init: MovementParams,
    pub latent_init: LatentInit,
}

impl Default for MCMCConfig {
    /// Simulation-scale defaults: 4,000 iterations, 3,000 burn-in.
    fn default() -> Self {
        Self {
            iterations: 4_000,
            burn_in: 3_000,
            thin: 1,
            grid_size: 500,
            scales: ProposalScales::default(),
            pcn_beta: 0.1,
            seed: 0,
            variant: Variant::Dependent,
            adapt: true,
            updates: UpdateMask::default(),
            stages: ChainConfig::default().stages().to_vec(),
            init: MovementParams::simulation_low_tortuosity(),
            latent_init: LatentInit::default(),
        }
    }
}

impl MCMCConfig {
    /// Application-scale defaults: 100,000 iterations, 50,000 burn-in.
    pub fn application() -> Self {
        Self {
            iterations: 100_000,
            burn_in: 50_000,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.burn_in >= self.iterations {
            return Err(Error::invalid(format!(
                "burn-in ({}) must be smaller than iterations ({})",
                self.burn_in, self.iterations
            )));
        }
        if self.thin == 0 {
            return Err(Error::invalid("thinning must be >= 1"));
        }
        if !(self.pcn_beta > 0.0 && self.pcn_beta <= 1.0) {
            return Err(Error::invalid(format!(
                "pCN step must lie in (0, 1], got {}",
                self.pcn_beta
            )));
        }
        let s = &self.scales;
        for (name, v) in [
            ("phi_inl", s.phi_inl),
            ("sigma_s2", s.sigma_s2),
            ("sigma_mu_s2", s.sigma_mu_s2),
            ("sigma0_2", s.sigma0_2),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!("{name} proposal scale must be > 0")));
            }
        }
        if self.grid_size < 2 {
            return Err(Error::invalid("grid needs at least 2 knots"));
        }
        ChainConfig::new(self.stages.clone())?;
        self.init.validate()
    }

    pub fn chain_config(&self) -> Result<ChainConfig> {
        ChainConfig::new(self.stages.clone())
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::uniform(0.0, 1.0, self.grid_size)
    }

    pub fn retained(&self) -> usize {
        (self.iterations - self.burn_in) / self.thin
    }
}

/// Accepted / attempted counts per update type.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Acceptance {
    pub accepted: u64,
    pub attempted: u64,
}

impl Acceptance {
    pub fn rate(&self) -> f64 {
        if self.attempted == 0 {
            0.0
        } else {
            self.accepted as f64 / self.attempted as f64
        }
    }

    fn record(&mut self, accepted: bool) {
        self.attempted += 1;
        if accepted {
            self.accepted += 1;
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AcceptanceCounts {
    pub phi_inl: Acceptance,
    pub sigma_s2: Acceptance,
    pub sigma_mu_s2: Acceptance,
    pub sigma0_2: Acceptance,
    pub latent_paths: Acceptance,
}

/// One retained draw.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainRecord {
    pub iteration: usize,
    pub params: MovementParams,
    /// Latent coordinates (`[individual][coordinate]` over knots), IP-DEP only.
    pub latent: Option<Vec<[DVector<f64>; LATENT_DIM]>>,
    pub log_likelihood: f64,
}

impl ChainRecord {
    /// Network implied by this draw; empty for IP-IND.
    pub fn network(&self, grid: &TimeGrid, p: usize) -> SocialNetwork {
        match &self.latent {
            Some(coords) => weights_from_positions(grid, coords),
            None => SocialNetwork::empty(grid, p),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PosteriorChain {
    pub records: Vec<ChainRecord>,
    pub acceptance: AcceptanceCounts,
    pub seed: u64,
    pub config: MCMCConfig,
    /// Proposal scales and pCN step after burn-in tuning.
    pub tuned_scales: ProposalScales,
    pub tuned_beta: f64,
    /// Pathological acceptance windows and similar diagnostics.
    pub warnings: Vec<String>,
}

impl PosteriorChain {
    pub fn grid(&self) -> Result<TimeGrid> {
        self.config.grid()
    }

    /// Draws of one scalar, in record order.
    pub fn trace(&self, f: impl Fn(&MovementParams) -> f64) -> Vec<f64> {
        self.records.iter().map(|r| f(&r.params)).collect()
    }
}

/// Likelihood pieces that depend on the current `(φ_inl, network)`.
#[derive(Debug, Clone)]
struct Fit {
    rows: Vec<DMatrix<f64>>,
    h: KernelMatrix,
    parts: CovarianceParts,
    log_lik: f64,
}

/// Mutable sampler state.
#[derive(Debug, Clone)]
pub struct ChainState {
    params: MovementParams,
    latent: Option<LatentSocialPaths>,
    network: SocialNetwork,
    fit: Fit,
}

impl ChainState {
    pub fn params(&self) -> &MovementParams {
        &self.params
    }

    pub fn latent(&self) -> Option<&LatentSocialPaths> {
        self.latent.as_ref()
    }

    pub fn network(&self) -> &SocialNetwork {
        &self.network
    }

    pub fn log_likelihood(&self) -> f64 {
        self.fit.log_lik
    }

    pub fn effective_h(&self) -> &KernelMatrix {
        &self.fit.h
    }
}

/// Sampler over a fixed dataset; drives [`run_mcmc`] and can be stepped
/// manually.
pub struct Sampler {
    data: Telemetry,
    layout: Layout,
    grid: TimeGrid,
    chain: ChainConfig,
    priors: PriorSpec,
    config: MCMCConfig,
    latent_prior: Option<Arc<LatentPrior>>,
    scales: ProposalScales,
    beta: f64,
    state: ChainState,
    counts: AcceptanceCounts,
}

impl Sampler {
    /// Start from `config.init`, with IP-DEP latent paths placed per `config.latent_init`.
    pub fn new<R: Rng + ?Sized>(
        data: Telemetry,
        priors: PriorSpec,
        config: MCMCConfig,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let grid = config.grid()?;
        let latent = match config.variant {
            Variant::Dependent => {
                let prior = Arc::new(LatentPrior::new(&grid, config.init.phi_w)?);
                let p = data.individuals();
                let sigma_w2 = config.init.sigma_w2;
                Some(match config.latent_init {
                    LatentInit::Origin => LatentSocialPaths::zeros(prior, sigma_w2, p)?,
                    LatentInit::PriorDraw => sample_latent_paths_with(prior, p, sigma_w2, rng)?,
                })
            }
            Variant::Independent => None,
        };
        let init = config.init;
        Self::with_state(data, priors, config, init, latent)
    }

    /// Start from explicit parameters and latent paths (`None` for IP-IND).
    pub fn with_state(
        data: Telemetry,
        priors: PriorSpec,
        config: MCMCConfig,
        params: MovementParams,
        latent: Option<LatentSocialPaths>,
    ) -> Result<Self> {
        config.validate()?;
        priors.validate()?;
        params.validate()?;
        let grid = config.grid()?;
        data.check_within(&grid)?;
        let chain = config.chain_config()?;
        let p = data.individuals();
        let latent = match (config.variant, latent) {
            (Variant::Dependent, Some(l)) => {
                if l.individuals() != p || l.grid() != &grid {
                    return Err(Error::invalid("latent paths do not match data and grid"));
                }
                if (l.range() - params.phi_w).abs() > 1e-15 * params.phi_w {
                    return Err(Error::invalid("latent prior range differs from phi_w"));
                }
                let mut l = l;
                l.set_sigma_w2(params.sigma_w2)?;
                Some(l)
            }
            (Variant::Dependent, None) => {
                return Err(Error::invalid("IP-DEP needs initial latent paths"))
            }
            (Variant::Independent, _) => None,
        };
        let network = match &latent {
            Some(l) => weights_from_positions(&grid, l.coords()),
            None => SocialNetwork::empty(&grid, p),
        };
        let layout = data.layout();
        let rows = inertial_rows(&grid, &layout, params.phi_inl)?;
        let fit = evaluate(&data, &chain, &network, &grid, &layout, rows, &params)?;
        let latent_prior = latent.as_ref().map(|l| l.prior().clone());
        Ok(Self {
            scales: config.scales,
            beta: config.pcn_beta,
            data,
            layout,
            grid,
            chain,
            priors,
            config,
            latent_prior,
            state: ChainState {
                params,
                latent,
                network,
                fit,
            },
            counts: AcceptanceCounts::default(),
        })
    }

    pub fn state(&self) -> &ChainState {
        &self.state
    }

    pub fn counts(&self) -> &AcceptanceCounts {
        &self.counts
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn data(&self) -> &Telemetry {
        &self.data
    }

    /// Swap the dataset (same observation layout) and refresh the likelihood.
    pub fn replace_data(&mut self, data: Telemetry) -> Result<()> {
        if data.layout() != self.layout {
            return Err(Error::invalid("replacement data must keep the observation layout"));
        }
        self.data = data;
        let chol = JitteredCholesky::new(&self.state.fit.parts.covariance(&self.state.params))?;
        self.state.fit.log_lik = log_likelihood_with(&self.data, &chol);
        Ok(())
    }

    /// One full sweep.
    pub fn sweep<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        let mask = self.config.updates;
        if mask.phi_inl {
            let ok = self.update_phi_inl(rng)?;
            self.counts.phi_inl.record(ok);
        }
        if mask.sigma_s2 {
            let s = self.scales.sigma_s2;
            let prior = self.priors.sigma_s2;
            let ok = self.update_variance(rng, s, prior, |p| &mut p.sigma_s2)?;
            self.counts.sigma_s2.record(ok);
        }
        if mask.sigma_mu_s2 {
            let s = self.scales.sigma_mu_s2;
            let prior = self.priors.sigma_mu_s2;
            let ok = self.update_variance(rng, s, prior, |p| &mut p.sigma_mu_s2)?;
            self.counts.sigma_mu_s2.record(ok);
        }
        if mask.sigma0_2 {
            let s = self.scales.sigma0_2;
            let prior = self.priors.sigma0_2;
            let ok = self.update_variance(rng, s, prior, |p| &mut p.sigma0_2)?;
            self.counts.sigma0_2.record(ok);
        }
        if self.state.latent.is_some() {
            if mask.latent_paths {
                for i in 0..self.data.individuals() {
                    let ok = self.pcn_update_latent_path(i, rng)?;
                    self.counts.latent_paths.record(ok);
                }
            }
            if mask.sigma_w2 {
                let latent = self.state.latent.as_mut().expect("latent state");
                let draw = gibbs_sigma_w2(latent, &self.priors.sigma_w2, rng);
                latent.set_sigma_w2(draw)?;
                self.state.params.sigma_w2 = draw;
            }
        }
        Ok(())
    }

    fn update_phi_inl<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<bool> {
        let current = self.state.params.phi_inl;
        let proposal = current * (self.scales.phi_inl * rng.sample::<f64, _>(StandardNormal)).exp();
        let mut params = self.state.params;
        params.phi_inl = proposal;
        // a range so short that some inertial row underflows has no model density
        let rows = match inertial_rows(&self.grid, &self.layout, proposal) {
            Ok(rows) => rows,
            Err(Error::DegenerateKernel { .. }) => return Ok(false),
            Err(e) => return Err(e),
        };
        let fit = evaluate(
            &self.data,
            &self.chain,
            &self.state.network,
            &self.grid,
            &self.layout,
            rows,
            &params,
        )?;
        let prior = self.priors.phi_inl;
        let log_alpha = fit.log_lik - self.state.fit.log_lik + prior.log_density(proposal)
            - prior.log_density(current)
            + (proposal / current).ln();
        let accept = accept(rng, log_alpha);
        if accept {
            self.state.params = params;
            self.state.fit = fit;
        }
        Ok(accept)
    }

    fn update_variance<R, F>(
        &mut self,
        rng: &mut R,
        scale: f64,
        prior: InvGammaPrior,
        field: F,
    ) -> Result<bool>
    where
        R: Rng + ?Sized,
        F: Fn(&mut MovementParams) -> &mut f64,
    {
        let mut params = self.state.params;
        let current = *field(&mut params);
        let proposal = current * (scale * rng.sample::<f64, _>(StandardNormal)).exp();
        *field(&mut params) = proposal;
        let chol = JitteredCholesky::new(&self.state.fit.parts.covariance(&params))?;
        let log_lik = log_likelihood_with(&self.data, &chol);
        let log_alpha = log_lik - self.state.fit.log_lik + prior.log_density(proposal)
            - prior.log_density(current)
            + (proposal / current).ln();
        let accept = accept(rng, log_alpha);
        if accept {
            self.state.params = params;
            self.state.fit.log_lik = log_lik;
        }
        Ok(accept)
    }

    /// pCN move for individual `i`'s latent path. Returns whether it was
    /// accepted. Panics if the sampler is IP-IND.
    pub fn pcn_update_latent_path<R: Rng + ?Sized>(&mut self, i: usize, rng: &mut R) -> Result<bool> {
        let beta = self.beta;
        let latent = self
            .state
            .latent
            .as_ref()
            .expect("pCN update requires the IP-DEP variant");
        let prior = self.latent_prior.as_ref().expect("latent prior").clone();
        let sd = latent.sigma_w2().sqrt();
        let keep = (1.0 - beta * beta).sqrt();
        let current = latent.path(i);
        let proposal: [DVector<f64>; LATENT_DIM] = [
            &current[0] * keep + prior.draw_unit(rng) * (beta * sd),
            &current[1] * keep + prior.draw_unit(rng) * (beta * sd),
        ];
        let mut candidate = latent.clone();
        candidate.set_path(i, proposal);
        let mut network = self.state.network.clone();
        network.set_individual_weights(i, &candidate);
        let fit = evaluate(
            &self.data,
            &self.chain,
            &network,
            &self.grid,
            &self.layout,
            self.state.fit.rows.clone(),
            &self.state.params,
        )?;
        let accept = accept(rng, fit.log_lik - self.state.fit.log_lik);
        if accept {
            self.state.latent = Some(candidate);
            self.state.network = network;
            self.state.fit = fit;
        }
        Ok(accept)
    }

    fn adapt(&mut self, window: &AcceptanceCounts, latent_window: Acceptance) {
        let tune = |scale: &mut f64, acc: &Acceptance| {
            if acc.attempted == 0 {
                return;
            }
            let rate = acc.rate();
            if rate < TARGET_ACCEPT.0 {
                *scale /= 1.3;
            } else if rate > TARGET_ACCEPT.1 {
                *scale *= 1.3;
            }
        };
        tune(&mut self.scales.phi_inl, &window.phi_inl);
        tune(&mut self.scales.sigma_s2, &window.sigma_s2);
        tune(&mut self.scales.sigma_mu_s2, &window.sigma_mu_s2);
        tune(&mut self.scales.sigma0_2, &window.sigma0_2);
        let mut beta = self.beta;
        tune(&mut beta, &latent_window);
        self.beta = beta.clamp(1e-3, 1.0);
    }

    fn record(&self, iteration: usize) -> ChainRecord {
        ChainRecord {
            iteration,
            params: self.state.params,
            latent: self.state.latent.as_ref().map(|l| l.coords().to_vec()),
            log_likelihood: self.state.fit.log_lik,
        }
    }
}

fn accept<R: Rng + ?Sized>(rng: &mut R, log_alpha: f64) -> bool {
    if log_alpha.is_nan() {
        return false;
    }
    log_alpha >= 0.0 || rng.random::<f64>().ln() < log_alpha
}

fn evaluate(
    data: &Telemetry,
    chain: &ChainConfig,
    network: &SocialNetwork,
    grid: &TimeGrid,
    layout: &Layout,
    rows: Vec<DMatrix<f64>>,
    params: &MovementParams,
) -> Result<Fit> {
    let h = assemble_effective_h(chain, network, grid, layout, &rows)?;
    let parts = CovarianceParts::new(&h, grid);
    let chol = JitteredCholesky::new(&parts.covariance(params))?;
    let log_lik = log_likelihood_with(data, &chol);
    Ok(Fit {
        rows,
        h,
        parts,
        log_lik,
    })
}

/// Full conditional of `σ_w²`: `IG(a_w + p·d·m/2, b_w + q/2)` where `q` is the
/// unit-dispersion prior quadratic form summed over all latent coordinates.
pub fn sigma_w2_posterior(paths: &LatentSocialPaths, prior: &InvGammaPrior) -> InvGammaPrior {
    let count = (paths.individuals() * LATENT_DIM * paths.grid().len()) as f64;
    posterior_from_quad_form(prior, count, paths.total_quad_form())
}

/// Conjugate update given the number of Gaussian coordinates and their
/// unit-variance quadratic form.
pub fn posterior_from_quad_form(prior: &InvGammaPrior, count: f64, quad_form: f64) -> InvGammaPrior {
    InvGammaPrior {
        shape: prior.shape + 0.5 * count,
        scale: prior.scale + 0.5 * quad_form,
    }
}

/// Draw `σ_w²` from its full conditional.
pub fn gibbs_sigma_w2<R: Rng + ?Sized>(
    paths: &LatentSocialPaths,
    prior: &InvGammaPrior,
    rng: &mut R,
) -> f64 {
    draw_inv_gamma(&sigma_w2_posterior(paths, prior), rng)
}

pub fn draw_inv_gamma<R: Rng + ?Sized>(ig: &InvGammaPrior, rng: &mut R) -> f64 {
    let g = Gamma::new(ig.shape, 1.0 / ig.scale).expect("valid inverse-gamma parameters");
    1.0 / g.sample(rng)
}

/// Run a full chain. Deterministic given `config.seed`.
pub fn run_mcmc(data: &Telemetry, priors: &PriorSpec, config: &MCMCConfig) -> Result<PosteriorChain> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut sampler = Sampler::new(data.clone(), *priors, config.clone(), &mut rng)?;
    run_sampler(&mut sampler, &mut rng)
}

/// Run `sampler.config.iterations` sweeps on an already-built sampler.
pub fn run_sampler<R: Rng + ?Sized>(sampler: &mut Sampler, rng: &mut R) -> Result<PosteriorChain> {
    let config = sampler.config.clone();
    let mut records = Vec::with_capacity(config.retained());
    let mut warnings = Vec::new();
    let mut adapt_mark = sampler.counts;
    let mut health_mark = sampler.counts;

    for it in 0..config.iterations {
        sampler
            .sweep(rng)
            .map_err(|e| Error::ChainAborted {
                iteration: it,
                source: Box::new(e),
            })?;

        if config.adapt && it < config.burn_in && (it + 1) % ADAPT_WINDOW == 0 {
            let window = diff(&sampler.counts, &adapt_mark);
            sampler.adapt(&window, window.latent_paths);
            adapt_mark = sampler.counts;
        }
        if (it + 1) % HEALTH_WINDOW == 0 {
            let window = diff(&sampler.counts, &health_mark);
            check_health(&window, it + 1 - HEALTH_WINDOW, it, &mut warnings);
            health_mark = sampler.counts;
        }
        if it >= config.burn_in && (it - config.burn_in) % config.thin == config.thin - 1 {
            records.push(sampler.record(it));
        }
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(PosteriorChain {
        records,
        acceptance: sampler.counts,
        seed: config.seed,
        tuned_scales: sampler.scales,
        tuned_beta: sampler.beta,
        config,
        warnings,
    })
}

fn diff(now: &AcceptanceCounts, then: &AcceptanceCounts) -> AcceptanceCounts {
    let d = |a: Acceptance, b: Acceptance| Acceptance {
        accepted: a.accepted - b.accepted,
        attempted: a.attempted - b.attempted,
    };
    AcceptanceCounts {
        phi_inl: d(now.phi_inl, then.phi_inl),
        sigma_s2: d(now.sigma_s2, then.sigma_s2),
        sigma_mu_s2: d(now.sigma_mu_s2, then.sigma_mu_s2),
        sigma0_2: d(now.sigma0_2, then.sigma0_2),
        latent_paths: d(now.latent_paths, then.latent_paths),
    }
}

fn check_health(window: &AcceptanceCounts, from: usize, to: usize, warnings: &mut Vec<String>) {
    for (name, acc) in [
        ("phi_inl", window.phi_inl),
        ("sigma_s2", window.sigma_s2),
        ("sigma_mu_s2", window.sigma_mu_s2),
        ("sigma0_2", window.sigma0_2),
    ] {
        if acc.attempted == 0 {
            continue;
        }
        if acc.accepted == 0 || acc.accepted == acc.attempted {
            warnings.push(format!(
                "{name}: acceptance {:.0}% over iterations {from}..={to}",
                100.0 * acc.rate()
            ));
        }
    }
}
