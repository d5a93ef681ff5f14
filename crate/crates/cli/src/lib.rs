//! The `pcc` command line: simulate telemetry, fit the dependent and
//! independent path models, reconstruct paths, summarize the posterior
//! network and run the simulation study.
//!
//! Exit codes are 0 on success, 1 for usage and validation errors and 2 for
//! numerical failures.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pcc::composition::{reconstruct_paths, PathDraw};
use pcc::evaluation::{credible_radii, derive_seed, quantile_sorted, run_study};
use pcc::inference::{run_mcmc, AcceptanceCounts, PosteriorChain, ProposalScales, Variant};
use pcc::io::{
    attach_latent, load_telemetry, read_chain_csv, read_paths_binary, save_telemetry,
    summarize_chain, write_chain_csv, write_paths_binary, write_paths_csv, write_summary_csv,
    PathArray, RunConfig, TelemetryFile,
};
use pcc::kernels::Layout;
use pcc::movement::simulate;
use pcc::network::{sample_latent_paths, weights_from_paths, SocialNetwork};
use pcc::{Error, TimeGrid};

/// Name of the configuration snapshot written by `fit`.
pub const FIT_CONFIG: &str = "fit_config.toml";

#[derive(Debug, Parser)]
#[command(name = "pcc", version, about = "Process convolution chain path models")]
pub struct Cli {
    /// Seed for every random stream of the run.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Directory for all outputs.
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VariantArg {
    Dep,
    Ind,
    Both,
}

impl VariantArg {
    fn variants(self) -> Vec<Variant> {
        match self {
            VariantArg::Dep => vec![Variant::Dependent],
            VariantArg::Ind => vec![Variant::Independent],
            VariantArg::Both => vec![Variant::Dependent, Variant::Independent],
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Forward-simulate paths and telemetry.
    Simulate {
        #[arg(long)]
        individuals: Option<usize>,
        #[arg(long)]
        observations: Option<usize>,
        /// Constant weight for every pair instead of a latent network draw.
        #[arg(long)]
        w12: Option<f64>,
        #[arg(long)]
        grid_size: Option<usize>,
    },
    /// Fit one or both model variants by MCMC.
    Fit {
        /// Telemetry CSV with columns id,time,x,y.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "both")]
        variant: VariantArg,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        burn_in: Option<usize>,
        #[arg(long)]
        grid_size: Option<usize>,
    },
    /// Draw true paths from fitted chains and report credible radii.
    Reconstruct {
        #[arg(long)]
        data: PathBuf,
        /// Directory holding `fit` output (defaults to --out-dir).
        #[arg(long)]
        chain_dir: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "both")]
        variant: VariantArg,
        #[arg(long)]
        draws: Option<usize>,
        /// Also write path draws as CSV.
        #[arg(long)]
        csv: bool,
    },
    /// Posterior edge-weight trajectories of a dependent fit.
    Network {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        chain_dir: Option<PathBuf>,
    },
    /// Run the dependent-vs-independent simulation study.
    Study {
        #[arg(long)]
        replicates: Option<usize>,
        /// Comma-separated w12 levels.
        #[arg(long, value_delimiter = ',')]
        weights: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        gap_fractions: Option<Vec<f64>>,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        burn_in: Option<usize>,
        #[arg(long)]
        path_draws: Option<usize>,
    },
}

/// Parse `args` (including the program name) and run. Returns the exit code.
pub fn dispatch<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let _ = env_logger::Builder::new()
        .filter_level(match cli.verbose {
            0 => log::LevelFilter::Warn,
            1 => log::LevelFilter::Info,
            _ => log::LevelFilter::Debug,
        })
        .try_init();
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numerical() {
                2
            } else {
                1
            }
        }
    }
}

fn create(dir: &Path, name: &str) -> pcc::Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn tag(v: Variant) -> &'static str {
    match v {
        Variant::Dependent => "dep",
        Variant::Independent => "ind",
    }
}

pub fn run(cli: &Cli) -> pcc::Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let seed = cli.seed.or(cfg.seed).unwrap_or(0);
    cfg.seed = Some(seed);
    std::fs::create_dir_all(&cli.out_dir)?;
    let out = cli.out_dir.as_path();
    match &cli.command {
        Command::Simulate {
            individuals,
            observations,
            w12,
            grid_size,
        } => {
            let s = &mut cfg.simulate;
            s.individuals = individuals.unwrap_or(s.individuals);
            s.observations = observations.unwrap_or(s.observations);
            s.grid_size = grid_size.unwrap_or(s.grid_size);
            s.w12 = w12.or(s.w12);
            cfg.validate()?;
            run_simulate(&cfg, seed, out)
        }
        Command::Fit {
            data,
            variant,
            iterations,
            burn_in,
            grid_size,
        } => {
            cfg.mcmc.iterations = iterations.unwrap_or(cfg.mcmc.iterations);
            cfg.mcmc.burn_in = burn_in.unwrap_or(cfg.mcmc.burn_in);
            cfg.mcmc.grid_size = grid_size.unwrap_or(cfg.mcmc.grid_size);
            cfg.validate()?;
            run_fit(&cfg, seed, data, *variant, out)
        }
        Command::Reconstruct {
            data,
            chain_dir,
            variant,
            draws,
            csv,
        } => {
            let dir = chain_dir.as_deref().unwrap_or(out);
            let mut cfg = fit_config(dir, cfg)?;
            cfg.reconstruct.draws = draws.unwrap_or(cfg.reconstruct.draws);
            cfg.validate()?;
            run_reconstruct(&cfg, seed, data, dir, *variant, *csv, out)
        }
        Command::Network { data, chain_dir } => {
            let dir = chain_dir.as_deref().unwrap_or(out);
            let cfg = fit_config(dir, cfg)?;
            run_network(&cfg, data, dir, out)
        }
        Command::Study {
            replicates,
            weights,
            gap_fractions,
            iterations,
            burn_in,
            path_draws,
        } => {
            let st = &mut cfg.study;
            st.replicates = replicates.unwrap_or(st.replicates);
            st.path_draws = path_draws.unwrap_or(st.path_draws);
            if let Some(w) = weights {
                st.weights = w.clone();
            }
            if let Some(g) = gap_fractions {
                st.gap_fractions = g.clone();
            }
            cfg.mcmc.iterations = iterations.unwrap_or(cfg.mcmc.iterations);
            cfg.mcmc.burn_in = burn_in.unwrap_or(cfg.mcmc.burn_in);
            cfg.validate()?;
            let table = run_study(&cfg.study, &cfg.priors, &cfg.mcmc, seed)?;
            let cells = cfg.study.cells();
            table.write_rows(create(out, "study_rows.csv")?)?;
            table.write_summary(&cells, create(out, "study_summary.csv")?)?;
            table.write_plot_data(&cells, create(out, "study_plot.csv")?)?;
            println!(
                "study: {} replicates succeeded, {} failed",
                table.results.len(),
                table.failures.len()
            );
            Ok(())
        }
    }
}

/// The configuration `fit` used, so downstream commands rebuild the same
/// grid and chain. Falls back to `cfg` when there is no snapshot.
fn fit_config(dir: &Path, cfg: RunConfig) -> pcc::Result<RunConfig> {
    let path = dir.join(FIT_CONFIG);
    if !path.exists() {
        return Ok(cfg);
    }
    let snap = RunConfig::load(&path)?;
    Ok(RunConfig {
        mcmc: snap.mcmc,
        priors: snap.priors,
        ..cfg
    })
}

fn run_simulate(cfg: &RunConfig, seed: u64, out: &Path) -> pcc::Result<()> {
    let s = &cfg.simulate;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = TimeGrid::uniform(0.0, 1.0, s.grid_size)?;
    let p = s.individuals;
    let net = match s.w12 {
        Some(w) => SocialNetwork::uniform(&grid, p, w)?,
        None => {
            let latent = sample_latent_paths(p, &grid, s.params.sigma_w2, s.params.phi_w, &mut rng)?;
            weights_from_paths(&latent)
        }
    };
    let times: Vec<Vec<f64>> = (0..p)
        .map(|_| {
            let mut t: Vec<f64> = (0..s.observations).map(|_| rng.random::<f64>()).collect();
            t.sort_by(|a, b| a.total_cmp(b));
            t
        })
        .collect();
    let sim = simulate(
        &s.params,
        &net,
        &grid,
        &Layout::new(times),
        &cfg.mcmc.chain_config()?,
        &mut rng,
    )?;
    let file = TelemetryFile::from_unit(sim.telemetry);
    save_telemetry(&file, out.join("telemetry.csv"))?;

    let mut w = csv::Writer::from_writer(create(out, "truth.csv")?);
    w.write_record(["id", "time", "x", "y"])?;
    for (i, path) in sim.truth.iter().enumerate() {
        for (k, pos) in path.iter().enumerate() {
            w.write_record([
                file.ids[i].clone(),
                grid.knots()[k].to_string(),
                pos[0].to_string(),
                pos[1].to_string(),
            ])?;
        }
    }
    w.flush()?;
    net.write_edge_csv(create(out, "network_true.csv")?)?;
    println!(
        "simulated {p} individuals, {} observations each, on {} knots",
        s.observations, s.grid_size
    );
    Ok(())
}

fn run_fit(cfg: &RunConfig, seed: u64, data: &Path, which: VariantArg, out: &Path) -> pcc::Result<()> {
    let file = load_telemetry(data)?;
    let gaps = file.detect_gaps(cfg.ingest.gap_factor);
    println!(
        "loaded {} individuals, {} observations, time span [{}, {}]",
        file.ids.len(),
        file.original.total_observations(),
        file.time_map.start,
        file.time_map.end
    );
    for g in &gaps {
        println!("gap: individual {} from {} to {}", g.id, g.start, g.end);
    }
    let data = file.unit();
    let mut tables = Vec::new();
    for (k, variant) in which.variants().into_iter().enumerate() {
        let mcmc = pcc::MCMCConfig {
            variant,
            seed: derive_seed(seed, k, 0),
            ..cfg.mcmc.clone()
        };
        let chain = run_mcmc(&data, &cfg.priors, &mcmc)?;
        for w in &chain.warnings {
            eprintln!("warning ({}): {w}", variant.label());
        }
        write_chain_csv(&chain, create(out, &format!("chain_{}.csv", tag(variant)))?)?;
        if variant == Variant::Dependent {
            write_paths_binary(&PathArray::from_latent(&chain)?, create(out, "latent_dep.bin")?)?;
        }
        tables.push((variant, summarize_chain(&chain, &cfg.priors)?));
    }
    write_summary_csv(&tables, create(out, "summary.csv")?)?;
    let mut snap = cfg.clone();
    snap.mcmc.seed = 0;
    snap.seed = snap.seed.filter(|&s| s <= i64::MAX as u64);
    std::fs::write(out.join(FIT_CONFIG), snap.to_toml_string()?)?;
    write_summary_csv(&tables, std::io::stdout().lock())?;
    Ok(())
}

fn load_chain(cfg: &RunConfig, dir: &Path, variant: Variant) -> pcc::Result<PosteriorChain> {
    let path = dir.join(format!("chain_{}.csv", tag(variant)));
    let mut records = read_chain_csv(File::open(&path)?, cfg.mcmc.init.phi_w)?;
    if variant == Variant::Dependent {
        let latent = read_paths_binary(std::io::BufReader::new(File::open(dir.join("latent_dep.bin"))?))?;
        attach_latent(&mut records, &latent)?;
    }
    Ok(PosteriorChain {
        records,
        acceptance: AcceptanceCounts::default(),
        seed: 0,
        config: pcc::MCMCConfig {
            variant,
            ..cfg.mcmc.clone()
        },
        tuned_scales: ProposalScales::default(),
        tuned_beta: cfg.mcmc.pcn_beta,
        warnings: Vec::new(),
    })
}

fn draws_to_array(draws: &[PathDraw], p: usize, m: usize) -> pcc::Result<PathArray> {
    let mut data = Vec::with_capacity(draws.len() * p * m * 2);
    for d in draws {
        for i in 0..p {
            for k in 0..m {
                data.push(d[0][i * m + k]);
                data.push(d[1][i * m + k]);
            }
        }
    }
    PathArray::new(draws.len(), p, m, 2, data)
}

fn run_reconstruct(
    cfg: &RunConfig,
    seed: u64,
    data: &Path,
    chain_dir: &Path,
    which: VariantArg,
    csv_out: bool,
    out: &Path,
) -> pcc::Result<()> {
    let file = load_telemetry(data)?;
    let unit = file.unit();
    let p = file.ids.len();
    let m = cfg.reconstruct.pred_knots;
    let pred_grid = TimeGrid::uniform(0.0, 1.0, m)?;
    let pred = Layout::grid(&pred_grid, p);
    let times: Vec<f64> = pred_grid.knots().iter().map(|&u| file.time_map.from_unit(u)).collect();

    let mut radii: Vec<(Variant, Vec<Vec<f64>>)> = Vec::new();
    for (k, variant) in which.variants().into_iter().enumerate() {
        let chain = load_chain(cfg, chain_dir, variant)?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, k, 1));
        let draws = reconstruct_paths(&chain, &unit, &pred, cfg.reconstruct.draws, &mut rng)?;
        let arr = draws_to_array(&draws, p, m)?;
        write_paths_binary(&arr, create(out, &format!("paths_{}.bin", tag(variant)))?)?;
        if csv_out {
            write_paths_csv(&arr, &file.ids, &times, create(out, &format!("paths_{}.csv", tag(variant)))?)?;
        }
        let per_individual = (0..p)
            .map(|i| {
                let d: Vec<Vec<[f64; 2]>> = (0..arr.records)
                    .map(|r| (0..m).map(|t| [arr.get(r, i, t, 0), arr.get(r, i, t, 1)]).collect())
                    .collect();
                credible_radii(&d, cfg.reconstruct.level)
            })
            .collect::<pcc::Result<Vec<_>>>()?;
        radii.push((variant, per_individual));
    }

    let lookup = |v: Variant, i: usize, t: usize| {
        radii
            .iter()
            .find(|(rv, _)| *rv == v)
            .map_or("NA".to_string(), |(_, r)| r[i][t].to_string())
    };
    let mut w = csv::Writer::from_writer(create(out, "radii.csv")?);
    w.write_record(["time", "id", "radius_dep", "radius_ind"])?;
    for (i, id) in file.ids.iter().enumerate() {
        for (t, time) in times.iter().enumerate() {
            w.write_record([
                time.to_string(),
                id.clone(),
                lookup(Variant::Dependent, i, t),
                lookup(Variant::Independent, i, t),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn run_network(cfg: &RunConfig, data: &Path, chain_dir: &Path, out: &Path) -> pcc::Result<()> {
    let file = load_telemetry(data)?;
    let p = file.ids.len();
    let chain = load_chain(cfg, chain_dir, Variant::Dependent)?;
    let grid = chain.grid()?;
    let nets: Vec<SocialNetwork> = chain.records.iter().map(|r| r.network(&grid, p)).collect();
    if nets.is_empty() {
        return Err(Error::InsufficientSample { needed: 1, got: 0 });
    }
    let mut w = csv::Writer::from_writer(create(out, "network.csv")?);
    w.write_record(["time", "i", "j", "median", "q025", "q975"])?;
    for k in 0..grid.len() {
        let time = file.time_map.from_unit(grid.knots()[k]);
        for i in 0..p {
            for j in (i + 1)..p {
                let mut v: Vec<f64> = nets.iter().map(|n| n.weight(k, i, j)).collect();
                v.sort_by(|a, b| a.total_cmp(b));
                w.write_record([
                    time.to_string(),
                    file.ids[i].clone(),
                    file.ids[j].clone(),
                    quantile_sorted(&v, 0.5).to_string(),
                    quantile_sorted(&v, 0.025).to_string(),
                    quantile_sorted(&v, 0.975).to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}
