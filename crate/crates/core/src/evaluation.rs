//! Path-reconstruction metrics and the dependent-vs-independent simulation
//! study.
//!
//! Each study replicate simulates two individuals with a constant tie `w₁₂`,
//! deletes the observations of individual 2 inside a centered gap, fits both
//! model variants, draws posterior paths over the gap and scores them with
//! SPE (accuracy) and ACCRR (precision). Ratios are reported as IP-IND over
//! IP-DEP, so values above one favor the dependent model.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::composition::reconstruct_paths;
use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::inference::{run_mcmc, MCMCConfig, UpdateMask, Variant};
use crate::kernels::Layout;
use crate::movement::{simulate, MovementParams, PriorSpec, SPATIAL_DIM};
use crate::network::SocialNetwork;

/// Minimum number of draws for a credible radius.
pub const MIN_DRAWS: usize = 100;

type Point = [f64; SPATIAL_DIM];

/// Type-7 (linear interpolation) quantile of already sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty data");
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Type-7 quantile; NaNs are not allowed.
pub fn quantile(data: &[f64], q: f64) -> f64 {
    let mut v = data.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    quantile_sorted(&v, q)
}

/// Squared path error: mean squared Euclidean distance over the gap knots.
pub fn spe(reconstruction: &[Point], truth: &[Point]) -> Result<f64> {
    if reconstruction.is_empty() {
        return Err(Error::invalid("SPE needs a non-empty gap grid"));
    }
    if reconstruction.len() != truth.len() {
        return Err(Error::invalid(format!(
            "reconstruction has {} knots, truth has {}",
            reconstruction.len(),
            truth.len()
        )));
    }
    let total: f64 = reconstruction
        .iter()
        .zip(truth)
        .map(|(a, b)| (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2))
        .sum();
    Ok(total / reconstruction.len() as f64)
}

/// Pointwise mean of path draws (`draws[k][t]`).
pub fn pointwise_mean(draws: &[Vec<Point>]) -> Result<Vec<Point>> {
    let first = draws
        .first()
        .ok_or(Error::InsufficientSample { needed: 1, got: 0 })?;
    let len = first.len();
    if draws.iter().any(|d| d.len() != len) {
        return Err(Error::invalid("path draws have different lengths"));
    }
    let n = draws.len() as f64;
    Ok((0..len)
        .map(|t| {
            let (x, y) = draws
                .iter()
                .fold((0.0, 0.0), |(x, y), d| (x + d[t][0], y + d[t][1]));
            [x / n, y / n]
        })
        .collect())
}

/// Circular credible radius at each knot: the `level` quantile of the
/// distances between draws and their pointwise mean.
pub fn credible_radii(draws: &[Vec<Point>], level: f64) -> Result<Vec<f64>> {
    if draws.len() < MIN_DRAWS {
        return Err(Error::InsufficientSample {
            needed: MIN_DRAWS,
            got: draws.len(),
        });
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::invalid(format!("level must be in (0, 1), got {level}")));
    }
    let mean = pointwise_mean(draws)?;
    Ok(mean
        .iter()
        .enumerate()
        .map(|(t, c)| {
            let dist: Vec<f64> = draws
                .iter()
                .map(|d| ((d[t][0] - c[0]).powi(2) + (d[t][1] - c[1]).powi(2)).sqrt())
                .collect();
            quantile(&dist, level)
        })
        .collect())
}

/// Average circular credible region radius over the gap.
pub fn accrr(draws: &[Vec<Point>], level: f64) -> Result<f64> {
    let radii = credible_radii(draws, level)?;
    if radii.is_empty() {
        return Err(Error::invalid("ACCRR needs a non-empty gap grid"));
    }
    Ok(radii.iter().sum::<f64>() / radii.len() as f64)
}

/// An observation gap for one individual.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapSpec {
    pub individual: usize,
    pub start: f64,
    pub end: f64,
}

impl GapSpec {
    /// Gap of the given fraction of `[span_start, span_end]`, centered.
    pub fn centered(individual: usize, fraction: f64, span_start: f64, span_end: f64) -> Result<Self> {
        if !(fraction > 0.0 && fraction < 1.0) {
            return Err(Error::invalid(format!(
                "gap fraction must be in (0, 1), got {fraction}"
            )));
        }
        if span_end <= span_start {
            return Err(Error::invalid("study span must have positive length"));
        }
        let mid = 0.5 * (span_start + span_end);
        let half = 0.5 * fraction * (span_end - span_start);
        Ok(Self {
            individual,
            start: mid - half,
            end: mid + half,
        })
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.start && t <= self.end
    }

    pub fn fraction(&self, span_start: f64, span_end: f64) -> f64 {
        (self.end - self.start) / (span_end - span_start)
    }

    /// Grid knots that fall inside the gap.
    pub fn knots(&self, grid: &TimeGrid) -> Vec<usize> {
        (0..grid.len())
            .filter(|&k| self.contains(grid.knots()[k]))
            .collect()
    }
}

/// One tortuosity level of the design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tortuosity {
    pub label: String,
    pub phi_inl: f64,
}

impl Tortuosity {
    pub fn high() -> Self {
        Self {
            label: "high".into(),
            phi_inl: 0.04 / 3.0,
        }
    }

    pub fn low() -> Self {
        Self {
            label: "low".into(),
            phi_inl: 0.04,
        }
    }
}

/// Factorial design of the simulation study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    pub grid_size: usize,
    /// Observations drawn per individual before the gap is imposed.
    pub observations: usize,
    pub replicates: usize,
    pub weights: Vec<f64>,
    pub gap_fractions: Vec<f64>,
    pub tortuosity: Vec<Tortuosity>,
    pub path_draws: usize,
    pub level: f64,
    /// Simulation truth; `phi_inl` is overridden per tortuosity level.
    pub truth: MovementParams,
}

impl Default for StudyConfig {
    /// Desk-scale design.
    fn default() -> Self {
        Self {
            grid_size: 200,
            observations: 60,
            replicates: 10,
            weights: vec![0.0, 0.5, 0.9],
            gap_fractions: vec![0.4],
            tortuosity: vec![Tortuosity::high()],
            path_draws: 1000,
            level: 0.95,
            truth: MovementParams::simulation_low_tortuosity(),
        }
    }
}

impl StudyConfig {
    /// Full-scale design: 500 knots, 100 observations, 20 replicates.
    pub fn full_scale() -> Self {
        Self {
            grid_size: 500,
            observations: 100,
            replicates: 20,
            weights: vec![0.0, 0.25, 0.5, 0.75, 0.9],
            gap_fractions: vec![0.05, 0.1, 0.2, 0.4],
            tortuosity: vec![Tortuosity::high(), Tortuosity::low()],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::invalid("study needs at least one replicate"));
        }
        if self.grid_size < 2 {
            return Err(Error::invalid("grid needs at least 2 knots"));
        }
        if self.observations < 4 {
            return Err(Error::invalid("need at least 4 observations per individual"));
        }
        if self.weights.is_empty() || self.gap_fractions.is_empty() || self.tortuosity.is_empty() {
            return Err(Error::invalid("every study factor needs at least one level"));
        }
        if let Some(w) = self.weights.iter().find(|w| !(0.0..=1.0).contains(*w)) {
            return Err(Error::invalid(format!("w12 must be in [0, 1], got {w}")));
        }
        if let Some(f) = self.gap_fractions.iter().find(|f| !(**f > 0.0 && **f < 1.0)) {
            return Err(Error::invalid(format!("gap fraction must be in (0, 1), got {f}")));
        }
        if let Some(t) = self.tortuosity.iter().find(|t| !(t.phi_inl > 0.0)) {
            return Err(Error::invalid(format!("phi_inl must be > 0, got {}", t.phi_inl)));
        }
        if self.path_draws < MIN_DRAWS {
            return Err(Error::invalid(format!(
                "need at least {MIN_DRAWS} path draws, got {}",
                self.path_draws
            )));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::invalid("credible level must be in (0, 1)"));
        }
        self.truth.validate()
    }

    /// Factor combinations in a fixed order: gap, tortuosity, weight.
    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for &gap_fraction in &self.gap_fractions {
            for tort in &self.tortuosity {
                for &w12 in &self.weights {
                    out.push(Cell {
                        index: out.len(),
                        gap_fraction,
                        tortuosity: tort.label.clone(),
                        phi_inl: tort.phi_inl,
                        w12,
                    });
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub index: usize,
    pub gap_fraction: f64,
    pub tortuosity: String,
    pub phi_inl: f64,
    pub w12: f64,
}

/// Scores for one model on one replicate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub spe: f64,
    pub accrr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateResult {
    pub cell: Cell,
    pub replicate: usize,
    pub seed: u64,
    pub dependent: Scores,
    pub independent: Scores,
}

impl ReplicateResult {
    /// IP-IND over IP-DEP.
    pub fn spe_ratio(&self) -> f64 {
        self.independent.spe / self.dependent.spe
    }

    /// IP-IND over IP-DEP.
    pub fn accrr_ratio(&self) -> f64 {
        self.independent.accrr / self.dependent.accrr
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Failure {
    pub cell: Cell,
    pub replicate: usize,
    pub seed: u64,
    pub message: String,
}

/// Median and quartiles of one metric in one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    pub cell: Cell,
    pub metric: &'static str,
    pub count: usize,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
}

#[derive(Debug, Clone, Default)]
pub struct StudyTable {
    pub results: Vec<ReplicateResult>,
    pub failures: Vec<Failure>,
}

/// Metric names in summary order; ratios are IP-IND / IP-DEP.
pub const METRICS: [&str; 6] = [
    "spe_ratio",
    "accrr_ratio",
    "spe_dep",
    "spe_ind",
    "accrr_dep",
    "accrr_ind",
];

fn metric_value(r: &ReplicateResult, metric: &str) -> f64 {
    match metric {
        "spe_ratio" => r.spe_ratio(),
        "accrr_ratio" => r.accrr_ratio(),
        "spe_dep" => r.dependent.spe,
        "spe_ind" => r.independent.spe,
        "accrr_dep" => r.dependent.accrr,
        "accrr_ind" => r.independent.accrr,
        _ => unreachable!("unknown metric {metric}"),
    }
}

impl StudyTable {
    /// Per-cell medians and quartiles across successful replicates.
    pub fn summary(&self, cells: &[Cell]) -> Vec<CellSummary> {
        let mut out = Vec::new();
        for cell in cells {
            let rows: Vec<&ReplicateResult> =
                self.results.iter().filter(|r| r.cell.index == cell.index).collect();
            if rows.is_empty() {
                continue;
            }
            for metric in METRICS {
                let mut v: Vec<f64> = rows.iter().map(|r| metric_value(r, metric)).collect();
                v.sort_by(|a, b| a.total_cmp(b));
                out.push(CellSummary {
                    cell: cell.clone(),
                    metric,
                    count: v.len(),
                    q25: quantile_sorted(&v, 0.25),
                    median: quantile_sorted(&v, 0.5),
                    q75: quantile_sorted(&v, 0.75),
                });
            }
        }
        out
    }

    /// Long format: one row per (cell, replicate, model, metric). Failed
    /// replicates appear with `status = failed` and an empty value.
    pub fn write_rows<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "cell",
            "gap_fraction",
            "tortuosity",
            "phi_inl",
            "w12",
            "replicate",
            "seed",
            "model",
            "metric",
            "value",
            "status",
        ])?;
        for r in &self.results {
            let c = &r.cell;
            let entries = [
                (Variant::Dependent.label(), "spe", r.dependent.spe),
                (Variant::Dependent.label(), "accrr", r.dependent.accrr),
                (Variant::Independent.label(), "spe", r.independent.spe),
                (Variant::Independent.label(), "accrr", r.independent.accrr),
                ("ip-ind/ip-dep", "spe_ratio", r.spe_ratio()),
                ("ip-ind/ip-dep", "accrr_ratio", r.accrr_ratio()),
            ];
            for (model, metric, value) in entries {
                w.write_record([
                    c.index.to_string(),
                    c.gap_fraction.to_string(),
                    c.tortuosity.clone(),
                    c.phi_inl.to_string(),
                    c.w12.to_string(),
                    r.replicate.to_string(),
                    r.seed.to_string(),
                    model.to_string(),
                    metric.to_string(),
                    value.to_string(),
                    "ok".to_string(),
                ])?;
            }
        }
        for f in &self.failures {
            let c = &f.cell;
            w.write_record([
                c.index.to_string(),
                c.gap_fraction.to_string(),
                c.tortuosity.clone(),
                c.phi_inl.to_string(),
                c.w12.to_string(),
                f.replicate.to_string(),
                f.seed.to_string(),
                String::new(),
                String::new(),
                String::new(),
                format!("failed: {}", f.message),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_summary<W: Write>(&self, cells: &[Cell], out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "cell",
            "gap_fraction",
            "tortuosity",
            "phi_inl",
            "w12",
            "metric",
            "count",
            "failed",
            "q25",
            "median",
            "q75",
        ])?;
        for s in self.summary(cells) {
            let failed = self
                .failures
                .iter()
                .filter(|f| f.cell.index == s.cell.index)
                .count();
            w.write_record([
                s.cell.index.to_string(),
                s.cell.gap_fraction.to_string(),
                s.cell.tortuosity.clone(),
                s.cell.phi_inl.to_string(),
                s.cell.w12.to_string(),
                s.metric.to_string(),
                s.count.to_string(),
                failed.to_string(),
                s.q25.to_string(),
                s.median.to_string(),
                s.q75.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Panel data for the ratio plots, ratio metrics only.
    pub fn write_plot_data<W: Write>(&self, cells: &[Cell], out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["gap_fraction", "tortuosity", "w12", "metric", "q25", "median", "q75"])?;
        for s in self.summary(cells) {
            if !s.metric.ends_with("_ratio") {
                continue;
            }
            w.write_record([
                s.cell.gap_fraction.to_string(),
                s.cell.tortuosity.clone(),
                s.cell.w12.to_string(),
                s.metric.to_string(),
                s.q25.to_string(),
                s.median.to_string(),
                s.q75.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Seed for `(cell, replicate)` derived from the base seed by SplitMix64
/// mixing, so tasks get unrelated streams regardless of execution order.
pub fn derive_seed(base: u64, cell: usize, replicate: usize) -> u64 {
    let mut z = base
        ^ (cell as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (replicate as u64).wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Everything one replicate produces besides its scores.
#[derive(Debug, Clone)]
pub struct ReplicateDetail {
    pub gap_times: Vec<f64>,
    pub truth: Vec<Point>,
    pub draws_dep: Vec<Vec<Point>>,
    pub draws_ind: Vec<Vec<Point>>,
}

/// Steps 1 to 5 for one replicate of one cell.
pub fn run_replicate(
    study: &StudyConfig,
    cell: &Cell,
    priors: &PriorSpec,
    mcmc: &MCMCConfig,
    seed: u64,
) -> Result<(Scores, Scores, ReplicateDetail)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = TimeGrid::uniform(0.0, 1.0, study.grid_size)?;
    let truth_params = MovementParams {
        phi_inl: cell.phi_inl,
        ..study.truth
    };
    let gap = GapSpec::centered(1, cell.gap_fraction, 0.0, 1.0)?;

    // step 1: simulate
    let net = SocialNetwork::constant_pair(&grid, cell.w12)?;
    let obs: Vec<Vec<f64>> = (0..2)
        .map(|i| {
            let mut t: Vec<f64> = (0..study.observations)
                .map(|_| rng.random::<f64>())
                .filter(|&t| i != gap.individual || !gap.contains(t))
                .collect();
            t.sort_by(|a, b| a.total_cmp(b));
            t
        })
        .collect();
    if obs[gap.individual].len() < 2 {
        return Err(Error::invalid("gap left fewer than 2 observations"));
    }
    let chain_config = mcmc.chain_config()?;
    let sim = simulate(&truth_params, &net, &grid, &Layout::new(obs), &chain_config, &mut rng)?;

    let gap_knots = gap.knots(&grid);
    if gap_knots.is_empty() {
        return Err(Error::invalid("gap contains no grid knots"));
    }
    let gap_times: Vec<f64> = gap_knots.iter().map(|&k| grid.knots()[k]).collect();
    let truth: Vec<Point> = gap_knots
        .iter()
        .map(|&k| sim.truth[gap.individual][k])
        .collect();
    let mut pred_times = vec![Vec::new(); 2];
    pred_times[gap.individual] = gap_times.clone();
    let pred = Layout::new(pred_times);

    // steps 2 to 5 for each model variant
    let score = |variant: Variant, rng: &mut ChaCha8Rng| -> Result<(Scores, Vec<Vec<Point>>)> {
        let config = MCMCConfig {
            grid_size: study.grid_size,
            variant,
            seed: rng.random(),
            init: MovementParams {
                phi_inl: cell.phi_inl,
                ..study.truth
            },
            updates: UpdateMask {
                sigma_w2: false,
                ..mcmc.updates
            },
            ..mcmc.clone()
        };
        let chain = run_mcmc(&sim.telemetry, priors, &config)?;
        let draws = reconstruct_paths(&chain, &sim.telemetry, &pred, study.path_draws, rng)?;
        let draws: Vec<Vec<Point>> = draws
            .iter()
            .map(|d| (0..gap_times.len()).map(|t| [d[0][t], d[1][t]]).collect())
            .collect();
        let mean = pointwise_mean(&draws)?;
        let scores = Scores {
            spe: spe(&mean, &truth)?,
            accrr: accrr(&draws, study.level)?,
        };
        Ok((scores, draws))
    };
    let (dep, draws_dep) = score(Variant::Dependent, &mut rng)?;
    let (ind, draws_ind) = score(Variant::Independent, &mut rng)?;
    Ok((
        dep,
        ind,
        ReplicateDetail {
            gap_times,
            truth,
            draws_dep,
            draws_ind,
        },
    ))
}

/// Run every cell and replicate. Replicates run concurrently with derived
/// seeds; failures are collected rather than dropped.
pub fn run_study(
    study: &StudyConfig,
    priors: &PriorSpec,
    mcmc: &MCMCConfig,
    seed: u64,
) -> Result<StudyTable> {
    study.validate()?;
    priors.validate()?;
    let cells = study.cells();
    let tasks: Vec<(Cell, usize)> = cells
        .iter()
        .flat_map(|c| (0..study.replicates).map(move |r| (c.clone(), r)))
        .collect();
    let outcomes: Vec<std::result::Result<ReplicateResult, Failure>> = tasks
        .into_par_iter()
        .map(|(cell, replicate)| {
            let seed = derive_seed(seed, cell.index, replicate);
            match run_replicate(study, &cell, priors, mcmc, seed) {
                Ok((dependent, independent, _)) => {
                    log::info!(
                        "cell {} (w12 = {}) replicate {replicate}: SPE ratio {:.3}, ACCRR ratio {:.3}",
                        cell.index,
                        cell.w12,
                        independent.spe / dependent.spe,
                        independent.accrr / dependent.accrr
                    );
                    Ok(ReplicateResult {
                        cell,
                        replicate,
                        seed,
                        dependent,
                        independent,
                    })
                }
                Err(e) => {
                    log::warn!("cell {} replicate {replicate} failed: {e}", cell.index);
                    Err(Failure {
                        cell,
                        replicate,
                        seed,
                        message: e.to_string(),
                    })
                }
            }
        })
        .collect();
    let mut table = StudyTable::default();
    for o in outcomes {
        match o {
            Ok(r) => table.results.push(r),
            Err(f) => table.failures.push(f),
        }
    }
    Ok(table)
}
