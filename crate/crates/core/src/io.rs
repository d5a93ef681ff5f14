//! File formats and run configuration.
//!
//! Telemetry is read from CSV with columns `id,time,x,y`. Internally the
//! model always works on the unit time interval, so ingestion records the
//! affine [`TimeMap`] that takes original times to `[0, 1]`; anything written
//! back out is mapped to original units.
//!
//! Path arrays use a small binary layout, all integers and floats little
//! endian:
//!
//! ```text
//! bytes 0..8    magic  b"PCCPATHS"
//! bytes 8..12   u32    format version (1)
//! bytes 12..20  u64    records n
//! bytes 20..28  u64    individuals p
//! bytes 28..36  u64    knots m
//! bytes 36..44  u64    coordinates d
//! then n·p·m·d  f64    row-major [record][individual][knot][coordinate]
//! ```

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::StudyConfig;
use crate::inference::{ChainRecord, MCMCConfig, PosteriorChain, Variant};
use crate::movement::{MovementParams, PriorSpec, Telemetry, Track, SPATIAL_DIM};

pub const PATH_MAGIC: &[u8; 8] = b"PCCPATHS";
pub const PATH_VERSION: u32 = 1;

/// Affine map between original time units and the unit interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeMap {
    pub start: f64,
    pub end: f64,
}

impl TimeMap {
    pub fn new(start: f64, end: f64) -> Result<Self> {
        if !(start.is_finite() && end.is_finite() && end > start) {
            return Err(Error::invalid(format!(
                "time span [{start}, {end}] must have positive length"
            )));
        }
        Ok(Self { start, end })
    }

    pub fn identity() -> Self {
        Self {
            start: 0.0,
            end: 1.0,
        }
    }

    pub fn span(&self) -> f64 {
        self.end - self.start
    }

    pub fn to_unit(&self, t: f64) -> f64 {
        ((t - self.start) / self.span()).clamp(0.0, 1.0)
    }

    pub fn from_unit(&self, u: f64) -> f64 {
        self.start + u * self.span()
    }
}

/// A stretch with no observations for one individual.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectedGap {
    pub id: String,
    pub start: f64,
    pub end: f64,
}

/// Telemetry in original units together with the ids and time map.
#[derive(Debug, Clone, PartialEq)]
pub struct TelemetryFile {
    /// Ids in order of first appearance; index `i` is individual `i`.
    pub ids: Vec<String>,
    /// Observations in original time units.
    pub original: Telemetry,
    pub time_map: TimeMap,
}

impl TelemetryFile {
    /// Wrap simulated telemetry that already lives on `[0, 1]`.
    pub fn from_unit(telemetry: Telemetry) -> Self {
        let ids = (1..=telemetry.individuals()).map(|i| i.to_string()).collect();
        Self {
            ids,
            original: telemetry,
            time_map: TimeMap::identity(),
        }
    }

    /// The same observations on the unit interval.
    pub fn unit(&self) -> Telemetry {
        let tracks = self
            .original
            .tracks()
            .iter()
            .map(|t| Track {
                times: t.times.iter().map(|&x| self.time_map.to_unit(x)).collect(),
                positions: t.positions.clone(),
            })
            .collect();
        Telemetry::new(tracks).expect("rescaling keeps telemetry valid")
    }

    /// Consecutive spacings larger than `factor` times the individual's
    /// median spacing.
    pub fn detect_gaps(&self, factor: f64) -> Vec<DetectedGap> {
        let mut out = Vec::new();
        for (id, track) in self.ids.iter().zip(self.original.tracks()) {
            let spacings: Vec<f64> = track.times.windows(2).map(|w| w[1] - w[0]).collect();
            if spacings.is_empty() {
                continue;
            }
            let median = crate::evaluation::quantile(&spacings, 0.5);
            for (k, &s) in spacings.iter().enumerate() {
                if s > factor * median && s > 0.0 {
                    out.push(DetectedGap {
                        id: id.clone(),
                        start: track.times[k],
                        end: track.times[k + 1],
                    });
                }
            }
        }
        out
    }
}

fn column(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim().eq_ignore_ascii_case(name))
        .ok_or_else(|| Error::Parse {
            line: 1,
            message: format!("missing column '{name}'"),
        })
}

fn number(record: &csv::StringRecord, idx: usize, name: &str, line: usize) -> Result<f64> {
    let raw = record.get(idx).unwrap_or("").trim();
    let v: f64 = raw.parse().map_err(|_| Error::Parse {
        line,
        message: format!("{name} '{raw}' is not a number"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            line,
            message: format!("{name} must be finite"),
        });
    }
    Ok(v)
}

/// Parse telemetry CSV from any reader.
pub fn read_telemetry<R: Read>(reader: R) -> Result<TelemetryFile> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let (ci, ct, cx, cy) = (
        column(&headers, "id")?,
        column(&headers, "time")?,
        column(&headers, "x")?,
        column(&headers, "y")?,
    );
    let mut ids: Vec<String> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut first_line: Vec<usize> = Vec::new();
    let mut rows: Vec<Vec<(f64, [f64; SPATIAL_DIM])>> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let id = rec.get(ci).unwrap_or("").to_string();
        if id.is_empty() {
            return Err(Error::Parse {
                line,
                message: "empty id".into(),
            });
        }
        let t = number(&rec, ct, "time", line)?;
        let x = number(&rec, cx, "x", line)?;
        let y = number(&rec, cy, "y", line)?;
        let i = *index.entry(id.clone()).or_insert_with(|| {
            ids.push(id.clone());
            first_line.push(line);
            rows.push(Vec::new());
            ids.len() - 1
        });
        rows[i].push((t, [x, y]));
    }
    if ids.is_empty() {
        return Err(Error::Parse {
            line: 1,
            message: "no observations".into(),
        });
    }
    let mut tracks = Vec::with_capacity(rows.len());
    for (i, mut r) in rows.into_iter().enumerate() {
        if r.len() < 2 {
            return Err(Error::Parse {
                line: first_line[i],
                message: format!("individual '{}' has {} observation(s), need at least 2", ids[i], r.len()),
            });
        }
        r.sort_by(|a, b| a.0.total_cmp(&b.0));
        tracks.push(Track {
            times: r.iter().map(|o| o.0).collect(),
            positions: r.iter().map(|o| o.1).collect(),
        });
    }
    let start = tracks.iter().map(|t| t.times[0]).fold(f64::INFINITY, f64::min);
    let end = tracks
        .iter()
        .map(|t| *t.times.last().expect("non-empty"))
        .fold(f64::NEG_INFINITY, f64::max);
    let time_map = TimeMap::new(start, end)?;
    Ok(TelemetryFile {
        ids,
        original: Telemetry::new(tracks)?,
        time_map,
    })
}

pub fn load_telemetry(path: impl AsRef<Path>) -> Result<TelemetryFile> {
    read_telemetry(BufReader::new(File::open(path)?))
}

/// Write `id,time,x,y` in original units.
pub fn write_telemetry<W: Write>(file: &TelemetryFile, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["id", "time", "x", "y"])?;
    for (id, track) in file.ids.iter().zip(file.original.tracks()) {
        for (t, p) in track.times.iter().zip(&track.positions) {
            w.write_record([id.clone(), t.to_string(), p[0].to_string(), p[1].to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn save_telemetry(file: &TelemetryFile, path: impl AsRef<Path>) -> Result<()> {
    write_telemetry(file, BufWriter::new(File::create(path)?))
}

/// Scalar parameters per retained iteration; `sigma_mu2` is derived.
pub fn write_chain_csv<W: Write>(chain: &PosteriorChain, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "iteration",
        "phi_inl",
        "sigma_s2",
        "sigma_mu_s2",
        "sigma0_2",
        "sigma_w2",
        "sigma_mu2",
        "log_likelihood",
    ])?;
    for r in &chain.records {
        let p = &r.params;
        w.write_record([
            r.iteration.to_string(),
            p.phi_inl.to_string(),
            p.sigma_s2.to_string(),
            p.sigma_mu_s2.to_string(),
            p.sigma0_2.to_string(),
            p.sigma_w2.to_string(),
            p.sigma_mu2().to_string(),
            r.log_likelihood.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Parameter records from [`write_chain_csv`] output. Latent paths, if any,
/// come from the matching path file via [`attach_latent`].
pub fn read_chain_csv<R: Read>(input: R, phi_w: f64) -> Result<Vec<ChainRecord>> {
    let mut rdr = csv::Reader::from_reader(input);
    let headers = rdr.headers()?.clone();
    let cols = [
        "iteration",
        "phi_inl",
        "sigma_s2",
        "sigma_mu_s2",
        "sigma0_2",
        "sigma_w2",
        "log_likelihood",
    ]
    .map(|c| column(&headers, c));
    let mut idx = [0usize; 7];
    for (slot, c) in idx.iter_mut().zip(cols) {
        *slot = c?;
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let v = |k: usize, name: &str| number(&rec, idx[k], name, line);
        let iteration = v(0, "iteration")?;
        if iteration < 0.0 || iteration.fract() != 0.0 {
            return Err(Error::Parse {
                line,
                message: format!("iteration {iteration} is not a count"),
            });
        }
        let params = MovementParams {
            phi_inl: v(1, "phi_inl")?,
            sigma_s2: v(2, "sigma_s2")?,
            sigma_mu_s2: v(3, "sigma_mu_s2")?,
            sigma0_2: v(4, "sigma0_2")?,
            sigma_w2: v(5, "sigma_w2")?,
            phi_w,
        };
        params.validate().map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        out.push(ChainRecord {
            iteration: iteration as usize,
            params,
            latent: None,
            log_likelihood: v(6, "log_likelihood")?,
        });
    }
    Ok(out)
}

/// Put latent coordinates from a path array back onto chain records.
pub fn attach_latent(records: &mut [ChainRecord], latent: &PathArray) -> Result<()> {
    if latent.records != records.len() || latent.dims != 2 {
        return Err(Error::invalid(format!(
            "latent file has {} records of dimension {}, chain has {} records",
            latent.records,
            latent.dims,
            records.len()
        )));
    }
    for (r, rec) in records.iter_mut().enumerate() {
        let coords = (0..latent.individuals)
            .map(|i| {
                [0, 1].map(|c| DVector::from_fn(latent.knots, |k, _| latent.get(r, i, k, c)))
            })
            .collect();
        rec.latent = Some(coords);
    }
    Ok(())
}

/// Dense `[record][individual][knot][coordinate]` array.
#[derive(Debug, Clone, PartialEq)]
pub struct PathArray {
    pub records: usize,
    pub individuals: usize,
    pub knots: usize,
    pub dims: usize,
    pub data: Vec<f64>,
}

impl PathArray {
    pub fn new(records: usize, individuals: usize, knots: usize, dims: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != records * individuals * knots * dims {
            return Err(Error::invalid(format!(
                "path array of {records}x{individuals}x{knots}x{dims} needs {} values, got {}",
                records * individuals * knots * dims,
                data.len()
            )));
        }
        Ok(Self {
            records,
            individuals,
            knots,
            dims,
            data,
        })
    }

    pub fn get(&self, record: usize, individual: usize, knot: usize, dim: usize) -> f64 {
        self.data[((record * self.individuals + individual) * self.knots + knot) * self.dims + dim]
    }

    /// Latent coordinates of every retained record of an IP-DEP chain.
    pub fn from_latent(chain: &PosteriorChain) -> Result<Self> {
        let first = chain
            .records
            .first()
            .and_then(|r| r.latent.as_ref())
            .ok_or_else(|| Error::invalid("chain has no latent paths"))?;
        let p = first.len();
        let m = first.first().map_or(0, |c| c[0].len());
        let mut data = Vec::with_capacity(chain.records.len() * p * m * 2);
        for r in &chain.records {
            let coords = r
                .latent
                .as_ref()
                .ok_or_else(|| Error::invalid("chain has no latent paths"))?;
            for c in coords {
                for k in 0..m {
                    data.push(c[0][k]);
                    data.push(c[1][k]);
                }
            }
        }
        Self::new(chain.records.len(), p, m, 2, data)
    }
}

pub fn write_paths_binary<W: Write>(paths: &PathArray, mut out: W) -> Result<()> {
    out.write_all(PATH_MAGIC)?;
    out.write_all(&PATH_VERSION.to_le_bytes())?;
    for v in [paths.records, paths.individuals, paths.knots, paths.dims] {
        out.write_all(&(v as u64).to_le_bytes())?;
    }
    for v in &paths.data {
        out.write_all(&v.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_paths_binary<R: Read>(mut input: R) -> Result<PathArray> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != PATH_MAGIC {
        return Err(Error::invalid("not a path file (bad magic)"));
    }
    let mut b4 = [0u8; 4];
    input.read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != PATH_VERSION {
        return Err(Error::invalid(format!("unsupported path file version {version}")));
    }
    let mut dims = [0usize; 4];
    let mut b8 = [0u8; 8];
    for d in &mut dims {
        input.read_exact(&mut b8)?;
        *d = u64::from_le_bytes(b8) as usize;
    }
    let n = dims.iter().product::<usize>();
    let mut data = Vec::with_capacity(n);
    for _ in 0..n {
        input.read_exact(&mut b8)?;
        data.push(f64::from_le_bytes(b8));
    }
    PathArray::new(dims[0], dims[1], dims[2], dims[3], data)
}

/// CSV fallback with columns `draw,id,time,x,y`.
pub fn write_paths_csv<W: Write>(paths: &PathArray, ids: &[String], times: &[f64], out: W) -> Result<()> {
    if paths.dims != SPATIAL_DIM || times.len() != paths.knots || ids.len() != paths.individuals {
        return Err(Error::invalid("path array does not match ids and times"));
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["draw", "id", "time", "x", "y"])?;
    for r in 0..paths.records {
        for (i, id) in ids.iter().enumerate() {
            for (k, t) in times.iter().enumerate() {
                w.write_record([
                    r.to_string(),
                    id.clone(),
                    t.to_string(),
                    paths.get(r, i, k, 0).to_string(),
                    paths.get(r, i, k, 1).to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// One row of a posterior summary: median with a central 95% interval.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSummary {
    pub name: &'static str,
    pub prior: String,
    /// `None` when the parameter is not part of the model variant.
    pub values: Option<[f64; 3]>,
}

fn summarize(values: &[f64]) -> [f64; 3] {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    use crate::evaluation::quantile_sorted as q;
    [q(&v, 0.5), q(&v, 0.025), q(&v, 0.975)]
}

/// Posterior medians and 2.5%/97.5% quantiles, including derived `σ_μ²`.
pub fn summarize_chain(chain: &PosteriorChain, priors: &PriorSpec) -> Result<Vec<ParameterSummary>> {
    if chain.records.is_empty() {
        return Err(Error::InsufficientSample { needed: 1, got: 0 });
    }
    let ig = |p: &crate::movement::InvGammaPrior| format!("IG({}, {})", p.shape, p.scale);
    let trace = |f: fn(&MovementParams) -> f64| Some(summarize(&chain.trace(f)));
    let dependent = chain.config.variant == Variant::Dependent;
    let sigma_w2_prior = if !dependent {
        "NA".to_string()
    } else if chain.config.updates.sigma_w2 {
        ig(&priors.sigma_w2)
    } else {
        "fixed".to_string()
    };
    Ok(vec![
        ParameterSummary {
            name: "phi_inl",
            prior: format!("Gamma({}, {})", priors.phi_inl.shape, priors.phi_inl.rate),
            values: trace(|p| p.phi_inl),
        },
        ParameterSummary {
            name: "sigma0_2",
            prior: ig(&priors.sigma0_2),
            values: trace(|p| p.sigma0_2),
        },
        ParameterSummary {
            name: "sigma_mu_s2",
            prior: ig(&priors.sigma_mu_s2),
            values: trace(|p| p.sigma_mu_s2),
        },
        ParameterSummary {
            name: "sigma_s2",
            prior: ig(&priors.sigma_s2),
            values: trace(|p| p.sigma_s2),
        },
        ParameterSummary {
            name: "sigma_mu2",
            prior: "NA".to_string(),
            values: trace(|p| p.sigma_mu2()),
        },
        ParameterSummary {
            name: "sigma_w2",
            prior: sigma_w2_prior,
            values: if dependent { trace(|p| p.sigma_w2) } else { None },
        },
    ])
}

/// Side-by-side summary, one column block per variant.
pub fn write_summary_csv<W: Write>(tables: &[(Variant, Vec<ParameterSummary>)], out: W) -> Result<()> {
    let first = tables
        .first()
        .ok_or_else(|| Error::invalid("no summaries to write"))?;
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["parameter".to_string(), "prior".to_string()];
    for (v, _) in tables {
        let tag = v.label().to_ascii_lowercase();
        header.push(format!("median_{tag}"));
        header.push(format!("q025_{tag}"));
        header.push(format!("q975_{tag}"));
    }
    w.write_record(&header)?;
    for (row, base) in first.1.iter().enumerate() {
        // priors shared by the variants; the network row differs
        let prior = tables
            .iter()
            .map(|(_, t)| t[row].prior.clone())
            .find(|p| p != "NA")
            .unwrap_or_else(|| base.prior.clone());
        let mut rec = vec![base.name.to_string(), prior];
        for (_, t) in tables {
            match t[row].values {
                Some(v) => rec.extend(v.iter().map(|x| x.to_string())),
                None => rec.extend(["NA".to_string(), "NA".to_string(), "NA".to_string()]),
            }
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Forward simulation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub individuals: usize,
    pub observations: usize,
    pub grid_size: usize,
    pub params: MovementParams,
    /// Constant weight for every pair; absent means a latent-network draw.
    pub w12: Option<f64>,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            individuals: 2,
            observations: 60,
            grid_size: 200,
            params: MovementParams::simulation_low_tortuosity(),
            w12: None,
        }
    }
}

impl SimulateConfig {
    pub fn validate(&self) -> Result<()> {
        if self.individuals == 0 {
            return Err(Error::invalid("need at least one individual"));
        }
        if self.observations < 2 {
            return Err(Error::invalid("need at least 2 observations per individual"));
        }
        if self.grid_size < 2 {
            return Err(Error::invalid("grid needs at least 2 knots"));
        }
        if let Some(w) = self.w12 {
            if !(0.0..=1.0).contains(&w) {
                return Err(Error::invalid(format!("w12 must be in [0, 1], got {w}")));
            }
        }
        self.params.validate()
    }
}

/// Path reconstruction settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconstructConfig {
    pub draws: usize,
    pub level: f64,
    /// Equally spaced prediction times on the study span.
    pub pred_knots: usize,
}

impl Default for ReconstructConfig {
    fn default() -> Self {
        Self {
            draws: 1000,
            level: 0.95,
            pred_knots: 200,
        }
    }
}

impl ReconstructConfig {
    pub fn validate(&self) -> Result<()> {
        if self.draws < crate::evaluation::MIN_DRAWS {
            return Err(Error::invalid(format!(
                "need at least {} draws, got {}",
                crate::evaluation::MIN_DRAWS,
                self.draws
            )));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::invalid("credible level must be in (0, 1)"));
        }
        if self.pred_knots < 2 {
            return Err(Error::invalid("need at least 2 prediction times"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestConfig {
    /// A spacing above this multiple of the median spacing is a gap.
    pub gap_factor: f64,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self { gap_factor: 5.0 }
    }
}

/// Everything a CLI run can be configured with, one section per module.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub mcmc: MCMCConfig,
    pub priors: PriorSpec,
    pub simulate: SimulateConfig,
    pub reconstruct: ReconstructConfig,
    pub study: StudyConfig,
    pub ingest: IngestConfig,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(seed) = self.seed {
            if seed > i64::MAX as u64 {
                return Err(Error::Config(format!("seed {seed} does not fit a TOML integer")));
            }
        }
        if self.mcmc.seed > i64::MAX as u64 {
            return Err(Error::Config("mcmc.seed does not fit a TOML integer".into()));
        }
        self.mcmc.validate()?;
        self.priors.validate()?;
        self.simulate.validate()?;
        self.reconstruct.validate()?;
        self.study.validate()?;
        if !(self.ingest.gap_factor.is_finite() && self.ingest.gap_factor > 1.0) {
            return Err(Error::invalid("ingest.gap_factor must be > 1"));
        }
        Ok(())
    }
}
