//! Process convolution chains for multivariate Gaussian processes, built for
//! jointly modeling the trajectories of socially connected individuals.
//!
//! A path model is an ordered chain of smoothing kernels applied to white
//! noise on a time grid: Brownian integration, time-local social averaging
//! across individuals driven by a latent-space network, and Matérn ν = 1
//! inertial smoothing. The crate covers kernel discretization and
//! composition, the latent network prior, the integrated likelihood, an MCMC
//! sampler, composition sampling of paths, and a simulation-study harness.

pub mod bessel;
pub mod composition;
pub mod error;
pub mod evaluation;
pub mod grid;
pub mod inference;
pub mod io;
pub mod kernels;
pub mod linalg;
pub mod movement;
pub mod network;

pub use bessel::bessel_k1;
pub use composition::{
    composition_sample, conditional_moments, reconstruct_paths, ConditionalMoments, PathDraw,
    PathPosterior,
};
pub use error::{Error, Result};
pub use evaluation::{
    accrr, credible_radii, run_study, spe, GapSpec, StudyConfig, StudyTable, Tortuosity,
};
pub use grid::TimeGrid;
pub use inference::{
    run_mcmc, ChainRecord, MCMCConfig, PosteriorChain, Sampler, Variant,
};
pub use io::{load_telemetry, RunConfig, TelemetryFile, TimeMap};
pub use kernels::{
    compose, discretize, discretize_layout, eval_kernel, pcc_covariance, KernelKind,
    KernelMatrix, KernelSpec, Layout, NoiseSpec,
};
pub use movement::{
    build_effective_h, log_likelihood, marginal_covariance, simulate, ChainConfig,
    MovementParams, PriorSpec, Simulation, Stage, Telemetry, Track,
};
pub use network::{
    latent_log_prior, sample_latent_paths, weights_from_paths, LatentPrior, LatentSocialPaths,
    SocialNetwork,
};
