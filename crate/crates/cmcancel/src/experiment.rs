//! JSON-configured experiment pipelines behind the `cmcancel` binary.
//!
//! Each command loads one configuration file, runs a library pipeline end
//! to end, and writes CSV tables plus a short text report into an output
//! directory. Every CSV starts with `#`-prefixed metadata lines recording
//! the configuration hash and the effective seed, and all numeric cells
//! use one fixed format, so reruns with the same configuration and seed
//! are byte-identical for any thread count.
//!
//! Errors translate to process exit codes through [`exit_code`]: bad
//! configurations and malformed inputs give 1, statistical or numerical
//! rejections raised inside a pipeline give 2, and filesystem failures
//! give 3.

use std::fmt::Write as _;
use std::ops::Range;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::misalign::{
    optimize_misalignment, post_training_adjust, uncancellable_energy_mc_with, McOptions,
};
use crate::pertone::{estimate_beta, ptlb, BetaAccumulator, ToneStatsAccumulator};
use crate::scene::{
    autocorr_of, load_impulse_response, simulate_with, AutocorrSequence, NoiseModel, Scene,
    SimulateOptions,
};
use crate::signal::{response_spectrum, ImpulseResponse, WindowGeometry};
use crate::wiener::{apply_wiener, default_filter_len, design_wiener, residual_psd};

/// Energy fraction the ingest summary localizes.
pub const INGEST_SPAN_FRACTION: f64 = 0.995;

/// One experiment: the scene under test plus the run parameters.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scene: SceneConfig,
    pub run: RunConfig,
}

/// Scene description, mirroring [`Scene`] with file- and recipe-based
/// coupling sources.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    /// DFT size.
    pub p: usize,
    /// Cyclic-prefix length in samples.
    pub cp_length: usize,
    /// CM window lead used for simulation and training.
    pub t: usize,
    /// CM-to-DM coupling source.
    pub coupling: CouplingConfig,
    /// DM direct-channel taps; defaults to an ideal unit channel.
    #[serde(default = "default_direct")]
    pub direct: Vec<f64>,
    /// Transmit power per tone; 0 keeps the scene noise-only.
    #[serde(default)]
    pub sigma2_x: f64,
    /// Background AWGN variance at the CM sensor.
    #[serde(default)]
    pub sigma2_vc: f64,
    /// Background AWGN variance at the DM sensor.
    #[serde(default)]
    pub sigma2_vd: f64,
    /// Alien-noise model at the CM sensor.
    pub noise: NoiseConfig,
}

fn default_direct() -> Vec<f64> {
    vec![1.0]
}

/// Where the coupling taps come from.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub enum CouplingConfig {
    /// Tap-per-line text file (`#` comments allowed).
    File { path: PathBuf },
    /// Taps inline in the configuration.
    Taps { taps: Vec<f64> },
    /// Sum of exponentially decaying envelopes with pseudo-random tap
    /// signs; stands in for measured responses.
    Synthetic {
        length: usize,
        envelopes: Vec<EnvelopeConfig>,
        #[serde(default)]
        sign_seed: u64,
    },
}

impl CouplingConfig {
    /// Materializes the taps and a short label for output metadata.
    pub fn build(&self) -> Result<(ImpulseResponse, String)> {
        match self {
            CouplingConfig::File { path } => Ok((
                load_impulse_response(path)?,
                format!("file:{}", path.display()),
            )),
            CouplingConfig::Taps { taps } => Ok((
                ImpulseResponse::new(taps.clone())?,
                format!("inline:{}-tap", taps.len()),
            )),
            CouplingConfig::Synthetic {
                length,
                envelopes,
                sign_seed,
            } => Ok((
                synthetic_coupling(*length, envelopes, *sign_seed)?,
                format!("synthetic:{length}-tap(sign_seed={sign_seed})"),
            )),
        }
    }
}

/// One exponentially decaying envelope of a synthetic coupling.
#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvelopeConfig {
    /// Tap index of the envelope peak.
    pub center: usize,
    /// Exponential decay rate per tap away from the center (> 0).
    pub decay: f64,
    /// Peak amplitude.
    pub amplitude: f64,
}

/// Alien-noise model selector, mirroring [`NoiseModel`].
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub enum NoiseConfig {
    White {
        sigma2: f64,
    },
    Coloured {
        sigma2: f64,
        shaping: Vec<f64>,
    },
    ReinBurst {
        sigma2: f64,
        period: usize,
        burst_length: usize,
        burst_offset: usize,
    },
}

impl NoiseConfig {
    /// The simulator-side model.
    pub fn to_model(&self) -> NoiseModel {
        match self {
            NoiseConfig::White { sigma2 } => NoiseModel::White { sigma2: *sigma2 },
            NoiseConfig::Coloured { sigma2, shaping } => NoiseModel::Coloured {
                sigma2: *sigma2,
                shaping: shaping.clone(),
            },
            NoiseConfig::ReinBurst {
                sigma2,
                period,
                burst_length,
                burst_offset,
            } => NoiseModel::ReinBurst {
                sigma2: *sigma2,
                period: *period,
                burst_length: *burst_length,
                burst_offset: *burst_offset,
            },
        }
    }

    fn label(&self) -> String {
        match self {
            NoiseConfig::White { sigma2 } => format!("white(sigma2={sigma2})"),
            NoiseConfig::Coloured { sigma2, shaping } => {
                format!("coloured(sigma2={sigma2}, {} shaping taps)", shaping.len())
            }
            NoiseConfig::ReinBurst {
                sigma2,
                period,
                burst_length,
                burst_offset,
            } => format!(
                "rein(sigma2={sigma2}, period={period}, burst={burst_length}, offset={burst_offset})"
            ),
        }
    }
}

/// Run parameters shared by the pipelines.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Symbols to simulate for training and PSD averaging.
    pub n_symbols: usize,
    /// Base random seed; the `--seed` flag overrides it.
    pub seed: u64,
    /// Misalignment sweep for `sweep-xi`; defaults to every lead below the
    /// coupling length.
    #[serde(default)]
    pub t_sweep: Option<SweepConfig>,
    /// Monte-Carlo symbols per sweep row; 0 skips the Monte-Carlo columns.
    #[serde(default = "default_mc_symbols")]
    pub mc_symbols: usize,
    /// Extra misalignments to tabulate in `compare` besides the optimum.
    #[serde(default)]
    pub compare_t: Vec<usize>,
    /// Energy fraction for the adjustment span localization.
    #[serde(default = "default_energy_fraction")]
    pub energy_fraction: f64,
    /// Monte-Carlo worker threads (0 = all cores); the `--threads` flag
    /// overrides. Results are identical for every value.
    #[serde(default)]
    pub threads: usize,
    /// Tile the alien noise with period P (the cyclic exactness oracle).
    #[serde(default)]
    pub cyclic_noise: bool,
}

fn default_mc_symbols() -> usize {
    200
}

fn default_energy_fraction() -> f64 {
    0.995
}

/// Inclusive misalignment range with a step.
#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub start: usize,
    /// Inclusive upper end.
    pub end: usize,
    #[serde(default = "default_step")]
    pub step: usize,
}

fn default_step() -> usize {
    1
}

impl RunConfig {
    fn sweep_points(&self, l: usize) -> Result<Vec<usize>> {
        match &self.t_sweep {
            None => Ok((0..l).collect()),
            Some(s) => {
                if s.step == 0 {
                    return Err(Error::invalid("run.t_sweep.step must be positive"));
                }
                if s.start > s.end {
                    return Err(Error::invalid(format!(
                        "run.t_sweep: start {} exceeds end {}",
                        s.start, s.end
                    )));
                }
                if s.end >= l {
                    return Err(Error::invalid(format!(
                        "run.t_sweep.end = {} must lie below the coupling length {l}",
                        s.end
                    )));
                }
                Ok((s.start..=s.end).step_by(s.step).collect())
            }
        }
    }
}

/// A parsed configuration together with the hash stamped into its outputs.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    /// SHA-256 of the whitespace-canonicalized JSON text, lowercase hex.
    pub config_hash: String,
}

impl ExperimentConfig {
    /// Loads and validates a configuration file. A relative coupling-file
    /// path is resolved against the configuration's directory, so a config
    /// and its tap file can travel together.
    pub fn load(path: &Path) -> Result<LoadedConfig> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut loaded = Self::parse(&text)?;
        if let CouplingConfig::File { path: taps } = &mut loaded.config.scene.coupling {
            if taps.is_relative() {
                if let Some(dir) = path.parent() {
                    *taps = dir.join(taps.as_path());
                }
            }
        }
        Ok(loaded)
    }

    /// Parses configuration text; serde reports unknown and missing fields
    /// with line and column positions.
    pub fn parse(text: &str) -> Result<LoadedConfig> {
        let config: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::invalid(format!("config: {e}")))?;
        let value: serde_json::Value = serde_json::from_str(text).expect("validated JSON reparses");
        let canonical = serde_json::to_string(&value).expect("JSON value serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        let config_hash = digest.iter().fold(String::new(), |mut acc, b| {
            let _ = write!(acc, "{b:02x}");
            acc
        });
        Ok(LoadedConfig {
            config,
            config_hash,
        })
    }
}

impl SceneConfig {
    /// Builds and validates the scene.
    pub fn build(&self) -> Result<BuiltScene> {
        let (coupling, coupling_label) = self.coupling.build()?;
        let geom = WindowGeometry::new(self.p, self.t)?;
        let scene = Scene {
            direct: ImpulseResponse::new(self.direct.clone())?,
            coupling,
            sigma2_x: self.sigma2_x,
            sigma2_vc: self.sigma2_vc,
            sigma2_vd: self.sigma2_vd,
            noise: self.noise.to_model(),
            geom,
            cp_length: self.cp_length,
        };
        scene.validate()?;
        Ok(BuiltScene {
            scene,
            coupling_label,
        })
    }
}

/// A validated scene plus the label describing where its coupling came
/// from.
#[derive(Debug, Clone)]
pub struct BuiltScene {
    pub scene: Scene,
    pub coupling_label: String,
}

/// Command-line overrides applied on top of the configuration.
#[derive(Debug, Clone, Copy, Default)]
pub struct CliOverrides {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
}

impl LoadedConfig {
    fn effective_seed(&self, overrides: &CliOverrides) -> u64 {
        overrides.seed.unwrap_or(self.config.run.seed)
    }

    fn effective_threads(&self, overrides: &CliOverrides) -> usize {
        overrides.threads.unwrap_or(self.config.run.threads)
    }
}

/// Builds a synthetic coupling: per tap the envelope magnitudes add, and a
/// pseudo-random sign drawn from `sign_seed` flips the sum, mimicking the
/// sign-erratic look of measured responses.
pub fn synthetic_coupling(
    length: usize,
    envelopes: &[EnvelopeConfig],
    sign_seed: u64,
) -> Result<ImpulseResponse> {
    if length == 0 {
        return Err(Error::invalid("synthetic coupling: need at least one tap"));
    }
    if envelopes.is_empty() {
        return Err(Error::invalid(
            "synthetic coupling: need at least one envelope",
        ));
    }
    for (i, env) in envelopes.iter().enumerate() {
        if !env.decay.is_finite() || env.decay <= 0.0 {
            return Err(Error::invalid(format!(
                "synthetic coupling: envelope {i}: decay must be positive and finite, got {}",
                env.decay
            )));
        }
        if !env.amplitude.is_finite() {
            return Err(Error::invalid(format!(
                "synthetic coupling: envelope {i}: amplitude must be finite"
            )));
        }
        if env.center >= length {
            return Err(Error::invalid(format!(
                "synthetic coupling: envelope {i}: center {} must lie below the length {length}",
                env.center
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(sign_seed);
    let taps = (0..length)
        .map(|k| {
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            let magnitude: f64 = envelopes
                .iter()
                .map(|e| e.amplitude * (-e.decay * (k as f64 - e.center as f64).abs()).exp())
                .sum();
            sign * magnitude
        })
        .collect();
    ImpulseResponse::new(taps)
}

/// The stand-in for a measured coupling: 700 taps at unit energy, a sharp
/// peak near index 600 riding on a slow two-sided tail, random tap signs.
/// The dominant peak keeps the per-tone magnitude response within one
/// order of magnitude of flat, while the tail stretches the delay spread
/// across the whole length.
pub fn default_synthetic_coupling() -> ImpulseResponse {
    let envelopes = [
        EnvelopeConfig {
            center: 600,
            decay: 2.5,
            amplitude: 1.0,
        },
        EnvelopeConfig {
            center: 600,
            decay: 0.008,
            amplitude: 0.004,
        },
    ];
    let h = synthetic_coupling(700, &envelopes, 7).expect("fixed parameters are valid");
    let scale = 1.0 / h.energy().sqrt();
    ImpulseResponse::new(h.taps().iter().map(|v| v * scale).collect())
        .expect("scaled taps stay finite")
}

/// Expected per-tone power `E|Z(q)|^2` of one length-`P` window of a
/// wide-sense stationary process under the unnormalized DFT:
/// `P r(0) + 2 sum_{tau >= 1} (P - tau) r(tau) cos(2 pi q tau / P)`.
pub fn tone_power_spectrum(acf: &AutocorrSequence, p: usize) -> Vec<f64> {
    let maxlag = acf.max_lag().min(p - 1);
    (0..p)
        .map(|q| {
            let mut acc = p as f64 * acf.at(0);
            for tau in 1..=maxlag {
                let angle = 2.0 * std::f64::consts::PI * ((q * tau) % p) as f64 / p as f64;
                acc += 2.0 * (p - tau) as f64 * acf.at(tau) * angle.cos();
            }
            acc
        })
        .collect()
}

/// Maps an error to the process exit code: 1 for configuration and input
/// problems, 2 for statistical or numerical pipeline rejections, 3 for
/// filesystem failures.
pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::DiffuseCoupling { .. }
        | Error::IllConditioned { .. }
        | Error::NotStationary(_)
        | Error::NotHermitian { .. } => 2,
        Error::Io { .. } => 3,
        _ => 1,
    }
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| io_error(path, e))
}

/// Fixed-width scientific format shared by every CSV cell and report
/// value, so reruns are byte-identical.
fn fmt_float(v: f64) -> String {
    if v.is_nan() {
        "nan".to_string()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{v:.12e}")
    }
}

fn db(power: f64) -> f64 {
    10.0 * power.log10()
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_unstable_by(|a, b| a.total_cmp(b));
    let mid = values.len() / 2;
    if values.len() % 2 == 1 {
        values[mid]
    } else {
        0.5 * (values[mid - 1] + values[mid])
    }
}

/// CSV table with `#`-prefixed metadata lines above the header row.
struct CsvTable {
    metadata: Vec<(String, String)>,
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl CsvTable {
    fn new(header: &[&str]) -> Self {
        CsvTable {
            metadata: Vec::new(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    fn meta(&mut self, key: &str, value: impl ToString) {
        self.metadata.push((key.to_string(), value.to_string()));
    }

    fn row(&mut self, cells: Vec<String>) {
        debug_assert_eq!(cells.len(), self.header.len());
        self.rows.push(cells);
    }

    fn render(&self) -> String {
        let mut text = String::new();
        for (key, value) in &self.metadata {
            let _ = writeln!(text, "# {key} = {value}");
        }
        let _ = writeln!(text, "{}", self.header.join(","));
        for row in &self.rows {
            let _ = writeln!(text, "{}", row.join(","));
        }
        text
    }

    fn write(&self, path: &Path) -> Result<()> {
        write_text(path, &self.render())
    }
}

fn base_metadata(
    table: &mut CsvTable,
    command: &str,
    loaded: &LoadedConfig,
    seed: u64,
    built: &BuiltScene,
) {
    table.meta("command", command);
    table.meta("config_sha256", &loaded.config_hash);
    table.meta("seed", seed);
    table.meta("coupling", &built.coupling_label);
    table.meta("noise", loaded.config.scene.noise.label());
    table.meta("p", built.scene.geom.p());
}

/// Autocorrelation of the scene's alien model with just enough lags for
/// every quadratic form the closed-form energy needs (arguments reach
/// `2P`); white noise keeps the scan on its `O(L)` fast path.
fn scene_acf(model: &NoiseModel, p: usize) -> Result<AutocorrSequence> {
    let maxlag = match model {
        NoiseModel::White { .. } => 0,
        NoiseModel::Coloured { shaping, .. } => shaping.len().saturating_sub(1).min(2 * p),
        NoiseModel::ReinBurst { .. } => 0,
    };
    autocorr_of(model, maxlag)
}

/// Headline numbers of a `sweep-xi` run.
#[derive(Debug, Clone)]
pub struct SweepSummary {
    /// Global closed-form optimum (Monte-Carlo argmin over the sweep rows
    /// for cyclostationary noise).
    pub t_opt: usize,
    pub xi_at_opt: f64,
    pub rows: usize,
    pub csv_path: PathBuf,
}

/// Sweeps the uncancellable energy over candidate misalignments and writes
/// `xi_vs_T.csv` with analytic and Monte-Carlo columns.
pub fn run_sweep_xi(
    loaded: &LoadedConfig,
    out_dir: &Path,
    overrides: &CliOverrides,
) -> Result<SweepSummary> {
    let cfg = &loaded.config;
    let built = cfg.scene.build()?;
    let scene = &built.scene;
    let coupling = &scene.coupling;
    let l = coupling.len();
    let p = scene.geom.p();
    let seed = loaded.effective_seed(overrides);
    let threads = loaded.effective_threads(overrides);
    let points = cfg.run.sweep_points(l)?;
    let mc_symbols = cfg.run.mc_symbols;
    if mc_symbols != 0 && mc_symbols < 100 {
        return Err(Error::invalid(format!(
            "run.mc_symbols must be 0 (skip) or at least 100, got {mc_symbols}"
        )));
    }

    // Closed-form column: one scan over every candidate when the noise is
    // wide-sense stationary; cyclostationary models keep only the
    // Monte-Carlo columns.
    let scan = match scene_acf(&scene.noise, p) {
        Ok(acf) => Some(optimize_misalignment(coupling, p, &acf, 0..l)?),
        Err(Error::NotStationary(_)) => None,
        Err(e) => return Err(e),
    };
    if scan.is_none() && mc_symbols == 0 {
        return Err(Error::invalid(
            "sweep-xi: cyclostationary noise has no closed-form energy; set run.mc_symbols >= 100",
        ));
    }

    let options = McOptions {
        threads,
        cyclic_override: cfg.run.cyclic_noise,
    };
    let mut table = CsvTable::new(&["t", "xi_analytic", "xi_mc_mean", "xi_mc_stderr"]);
    let mut mc_by_t: Vec<(usize, f64)> = Vec::new();
    for &t in &points {
        let geom = scene.geom.with_t(t)?;
        let xi = scan
            .as_ref()
            .map(|s| s.energy_at(t).expect("scan covers every lead below L"));
        let mc = if mc_symbols > 0 {
            Some(uncancellable_energy_mc_with(
                coupling,
                &geom,
                &scene.noise,
                mc_symbols,
                seed,
                &options,
            )?)
        } else {
            None
        };
        if let Some(m) = &mc {
            mc_by_t.push((t, m.mean));
        }
        table.row(vec![
            t.to_string(),
            xi.map(fmt_float).unwrap_or_else(|| "nan".into()),
            mc.map(|m| fmt_float(m.mean))
                .unwrap_or_else(|| "nan".into()),
            mc.map(|m| fmt_float(m.std_error))
                .unwrap_or_else(|| "nan".into()),
        ]);
    }

    let (t_opt, xi_at_opt) = match &scan {
        Some(s) => (
            s.t_opt,
            s.energy_at(s.t_opt)
                .expect("optimizer evaluated its winner"),
        ),
        None => mc_by_t
            .iter()
            .copied()
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("Monte-Carlo rows exist when the closed form is unavailable"),
    };

    base_metadata(&mut table, "sweep-xi", loaded, seed, &built);
    table.meta("mc_symbols", mc_symbols);
    table.meta("t_opt", t_opt);
    table.meta("xi_at_t_opt", fmt_float(xi_at_opt));
    ensure_dir(out_dir)?;
    let csv_path = out_dir.join("xi_vs_T.csv");
    table.write(&csv_path)?;
    Ok(SweepSummary {
        t_opt,
        xi_at_opt,
        rows: points.len(),
        csv_path,
    })
}

/// Headline numbers of a `compare` run.
#[derive(Debug, Clone)]
pub struct CompareSummary {
    pub t_opt: usize,
    /// Median over the band of `per-tone at t_opt` minus `time domain`, in
    /// dB.
    pub band_median_gap_db: f64,
    pub csv_path: PathBuf,
    pub report_path: PathBuf,
}

/// Tabulates per-tone residual PSDs against the per-tone lower bound and
/// the time-domain reference canceller; writes `residual_psd.csv` and
/// `compare_report.txt`.
pub fn run_compare(
    loaded: &LoadedConfig,
    out_dir: &Path,
    overrides: &CliOverrides,
) -> Result<CompareSummary> {
    let cfg = &loaded.config;
    let built = cfg.scene.build()?;
    let scene = &built.scene;
    let coupling = &scene.coupling;
    let l = coupling.len();
    let p = scene.geom.p();
    if cfg.scene.sigma2_x != 0.0 {
        return Err(Error::invalid(
            "compare expects a noise-only scene (sigma2_x = 0): the known data contribution is \
             stripped exactly per tone, so it would only add variance to the PSD columns",
        ));
    }
    let n_symbols = cfg.run.n_symbols;
    if n_symbols < 2 {
        return Err(Error::invalid(
            "compare: run.n_symbols must be at least 2 for PSD averaging",
        ));
    }
    let acf = scene_acf(&scene.noise, p).map_err(|e| match e {
        Error::NotStationary(msg) => Error::invalid(format!(
            "compare needs a wide-sense stationary alien model: {msg}"
        )),
        other => other,
    })?;
    let seed = loaded.effective_seed(overrides);

    let scan = optimize_misalignment(coupling, p, &acf, 0..l)?;
    let t_opt = scan.t_opt;
    let mut t_list = cfg.run.compare_t.clone();
    t_list.push(t_opt);
    t_list.sort_unstable();
    t_list.dedup();
    if let Some(&bad) = t_list.iter().find(|&&t| t >= l) {
        return Err(Error::invalid(format!(
            "run.compare_t entries must lie below the coupling length {l}, got {bad}"
        )));
    }

    let sim = simulate_with(
        scene,
        n_symbols,
        seed,
        &SimulateOptions {
            cyclic_noise: cfg.run.cyclic_noise,
            keep_parts: true,
        },
    )?;
    let h_d = response_spectrum(&scene.direct, p)?;

    // One batched pass per misalignment: the least-squares accumulator
    // closes the in-sample residual without a second sweep over the data.
    const BATCH: usize = 64;
    let mut pertone_cols: Vec<Vec<f64>> = Vec::with_capacity(t_list.len());
    let mut uncancelled = vec![0.0; p];
    let mut stats_at_opt = None;
    for (i, &t) in t_list.iter().enumerate() {
        let mut beta_acc = BetaAccumulator::new(p);
        let mut stats_acc = (t == t_opt).then(|| ToneStatsAccumulator::new(p));
        let first_pass = i == 0;
        let mut lo = 0;
        while lo < n_symbols {
            let hi = (lo + BATCH).min(n_symbols);
            let stream = sim.frame_range_at(lo..hi, t)?;
            for rec in stream.symbols() {
                beta_acc.push_record(rec, &h_d)?;
                if let Some(acc) = stats_acc.as_mut() {
                    acc.push_record(rec, &h_d)?;
                }
                if first_pass {
                    for (q, slot) in uncancelled.iter_mut().enumerate() {
                        let e = rec.y_d.bins()[q] - h_d.bins()[q] * rec.x.bins()[q];
                        *slot += e.norm_sqr();
                    }
                }
            }
            lo = hi;
        }
        pertone_cols.push(beta_acc.in_sample_residual()?);
        if let Some(acc) = stats_acc {
            stats_at_opt = Some(acc.stats()?);
        }
    }
    for v in &mut uncancelled {
        *v /= n_symbols as f64;
    }

    // Lower-bound column with the uncancellable term dropped: the floor a
    // per-tone multiplier reaches when the window placement makes the
    // coupling look cyclic.
    let mut stats = stats_at_opt.expect("t_opt is always tabulated");
    stats.i_u = vec![0.0; p];
    let ptlb0 = ptlb(&stats);

    // Time-domain reference aligned with the optimal window lead.
    let delay = t_opt as i64;
    let n_f = default_filter_len(l, delay);
    let design = design_wiener(sim.cm(), sim.dm(), n_f, delay, None)?;
    let residual = apply_wiener(&design, sim.cm(), sim.dm())?;
    let psd_td = residual_psd(&residual, &scene.geom, scene.cp_length)?;

    let band: Range<usize> = 1..p / 2;
    let opt_col = t_list
        .iter()
        .position(|&t| t == t_opt)
        .expect("t_opt is always tabulated");
    let mut gaps: Vec<f64> = band
        .clone()
        .map(|q| db(pertone_cols[opt_col][q]) - db(psd_td[q]))
        .collect();
    let band_median_gap_db = median(&mut gaps);

    let mut header: Vec<String> = vec!["q".into(), "psd_uncancelled_db".into()];
    for &t in &t_list {
        header.push(format!("psd_pertone_t{t}_db"));
    }
    header.push("psd_ptlb_db".into());
    header.push("psd_timedomain_db".into());
    let header_refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
    let mut table = CsvTable::new(&header_refs);
    for q in 0..p {
        let mut cells = vec![q.to_string(), fmt_float(db(uncancelled[q]))];
        for col in &pertone_cols {
            cells.push(fmt_float(db(col[q])));
        }
        cells.push(fmt_float(db(ptlb0[q])));
        cells.push(fmt_float(db(psd_td[q])));
        table.row(cells);
    }
    base_metadata(&mut table, "compare", loaded, seed, &built);
    table.meta("n_symbols", n_symbols);
    table.meta("cyclic_noise", cfg.run.cyclic_noise);
    table.meta("t_opt", t_opt);
    table.meta("wiener_n_f", n_f);
    table.meta("wiener_delay", delay);
    table.meta("wiener_loading", fmt_float(design.regularization));
    table.meta(
        "band",
        format!("tones 1..={} (no DC, no Nyquist)", p / 2 - 1),
    );
    table.meta("band_median_gap_db", fmt_float(band_median_gap_db));

    ensure_dir(out_dir)?;
    let csv_path = out_dir.join("residual_psd.csv");
    table.write(&csv_path)?;

    let band_mean = |col: &dyn Fn(usize) -> f64| -> f64 {
        let n = (p / 2 - 1) as f64;
        band.clone().map(col).sum::<f64>() / n
    };
    let mut report = String::new();
    let _ = writeln!(
        report,
        "compare: per-tone cancellation vs time-domain reference"
    );
    let _ = writeln!(report, "config_sha256 = {}", loaded.config_hash);
    let _ = writeln!(report, "seed = {seed}");
    let _ = writeln!(report, "symbols = {n_symbols}");
    let _ = writeln!(report, "t_opt = {t_opt}");
    let _ = writeln!(
        report,
        "misalignments tabulated = {}",
        t_list
            .iter()
            .map(|t| t.to_string())
            .collect::<Vec<_>>()
            .join(", ")
    );
    let _ = writeln!(
        report,
        "wiener: n_f = {n_f}, delay = {delay}, loading = {}",
        fmt_float(design.regularization)
    );
    let _ = writeln!(report, "band = tones 1..={} (no DC, no Nyquist)", p / 2 - 1);
    let _ = writeln!(
        report,
        "band_median_gap_db = {} (per-tone at t_opt minus time domain)",
        fmt_float(band_median_gap_db)
    );
    let _ = writeln!(
        report,
        "band mean uncancelled = {} dB",
        fmt_float(band_mean(&|q| db(uncancelled[q])))
    );
    let _ = writeln!(
        report,
        "band mean per-tone at t_opt = {} dB",
        fmt_float(band_mean(&|q| db(pertone_cols[opt_col][q])))
    );
    let _ = writeln!(
        report,
        "band mean lower bound = {} dB",
        fmt_float(band_mean(&|q| db(ptlb0[q])))
    );
    let _ = writeln!(
        report,
        "band mean time domain = {} dB",
        fmt_float(band_mean(&|q| db(psd_td[q])))
    );
    let report_path = out_dir.join("compare_report.txt");
    write_text(&report_path, &report)?;

    Ok(CompareSummary {
        t_opt,
        band_median_gap_db,
        csv_path,
        report_path,
    })
}

/// Headline numbers of an `adjust` run.
#[derive(Debug, Clone)]
pub struct AdjustSummary {
    pub t_training: usize,
    pub l_hat: usize,
    pub t_opt: usize,
    pub xi_before: f64,
    pub xi_after: f64,
    /// `||new - old||` of the coefficient update, relative to `||old||`.
    pub coeff_update_relative: f64,
    pub report_path: PathBuf,
    pub taps_path: PathBuf,
}

fn energy_lookup(energy_by_t: &[(usize, f64)], t: usize) -> Option<f64> {
    energy_by_t
        .binary_search_by_key(&t, |&(c, _)| c)
        .ok()
        .map(|i| energy_by_t[i].1)
}

/// Runs the post-training window adjustment end to end on a simulated
/// scene; writes `adjustment.txt` and the recovered taps as `h_hat.csv`.
pub fn run_adjust(
    loaded: &LoadedConfig,
    out_dir: &Path,
    overrides: &CliOverrides,
) -> Result<AdjustSummary> {
    let cfg = &loaded.config;
    let built = cfg.scene.build()?;
    let scene = &built.scene;
    let p = scene.geom.p();
    let n_symbols = cfg.run.n_symbols;
    if n_symbols == 0 {
        return Err(Error::invalid("adjust: run.n_symbols must be positive"));
    }
    let acf = scene_acf(&scene.noise, p).map_err(|e| match e {
        Error::NotStationary(msg) => Error::invalid(format!(
            "adjust needs a wide-sense stationary alien model: {msg}"
        )),
        other => other,
    })?;
    let seed = loaded.effective_seed(overrides);

    let sim = simulate_with(
        scene,
        n_symbols,
        seed,
        &SimulateOptions {
            cyclic_noise: cfg.run.cyclic_noise,
            keep_parts: false,
        },
    )?;
    let stream = sim.frame_range(0..n_symbols)?;
    let h_d = response_spectrum(&scene.direct, p)?;

    // Per-tone background-to-alien ratio from the model: flat CM AWGN has
    // per-tone power P sigma_vc^2, the alien power follows the ACF.
    let delta: Vec<f64> = if scene.sigma2_vc == 0.0 {
        vec![0.0; p]
    } else {
        tone_power_spectrum(&acf, p)
            .iter()
            .enumerate()
            .map(|(q, &i_cm)| {
                if i_cm <= 0.0 {
                    Err(Error::invalid(format!(
                        "adjust: alien CM power vanishes at tone {q}; the background-to-alien \
                         ratio is undefined there"
                    )))
                } else {
                    Ok(p as f64 * scene.sigma2_vc / i_cm)
                }
            })
            .collect::<Result<_>>()?
    };

    let old_coeffs = estimate_beta(&stream, &h_d)?;
    let report = post_training_adjust(&stream, &h_d, &delta, &acf, cfg.run.energy_fraction)?;
    let l_hat = report.coupling.len();
    let xi_before = energy_lookup(&report.energy_by_t, report.t_training)
        .expect("the canonical training lead lies below the identified length");
    let xi_after =
        energy_lookup(&report.energy_by_t, report.t_opt).expect("optimizer evaluated its winner");

    let update_sq: f64 = report
        .new_coeffs
        .beta()
        .iter()
        .zip(old_coeffs.beta())
        .map(|(n, o)| (n - o).norm_sqr())
        .sum();
    let old_sq: f64 = old_coeffs.beta().iter().map(|b| b.norm_sqr()).sum();
    let coeff_update_norm = update_sq.sqrt();
    let coeff_update_relative = coeff_update_norm / old_sq.sqrt();

    ensure_dir(out_dir)?;
    let mut table = CsvTable::new(&["k", "h_hat"]);
    for (k, &tap) in report.coupling.taps().iter().enumerate() {
        table.row(vec![k.to_string(), fmt_float(tap)]);
    }
    base_metadata(&mut table, "adjust", loaded, seed, &built);
    table.meta("n_symbols", n_symbols);
    table.meta("energy_fraction", cfg.run.energy_fraction);
    table.meta("t_training", report.t_training);
    table.meta("l_hat", l_hat);
    table.meta("t_opt", report.t_opt);
    let taps_path = out_dir.join("h_hat.csv");
    table.write(&taps_path)?;

    let mut text = String::new();
    let _ = writeln!(text, "post-training window adjustment");
    let _ = writeln!(text, "config_sha256 = {}", loaded.config_hash);
    let _ = writeln!(text, "seed = {seed}");
    let _ = writeln!(text, "symbols = {n_symbols}");
    let _ = writeln!(text, "energy_fraction = {}", cfg.run.energy_fraction);
    let _ = writeln!(text, "t_training = {}", report.t_training);
    let _ = writeln!(text, "l_hat = {l_hat}");
    let _ = writeln!(text, "t_opt = {}", report.t_opt);
    let _ = writeln!(
        text,
        "window_shift = {} (samples to move the CM window)",
        report.t_opt as i64 - report.t_training as i64
    );
    let _ = writeln!(text, "xi_before = {}", fmt_float(xi_before));
    let _ = writeln!(text, "xi_after = {}", fmt_float(xi_after));
    let reduction = if xi_before > 0.0 {
        (1.0 - xi_after / xi_before) * 100.0
    } else {
        f64::NAN
    };
    let _ = writeln!(text, "xi_reduction_percent = {}", fmt_float(reduction));
    let _ = writeln!(text, "coeff_update_norm = {}", fmt_float(coeff_update_norm));
    let _ = writeln!(
        text,
        "coeff_update_relative = {}",
        fmt_float(coeff_update_relative)
    );
    let report_path = out_dir.join("adjustment.txt");
    write_text(&report_path, &text)?;

    Ok(AdjustSummary {
        t_training: report.t_training,
        l_hat,
        t_opt: report.t_opt,
        xi_before,
        xi_after,
        coeff_update_relative,
        report_path,
        taps_path,
    })
}

/// Headline numbers of an `ingest` run.
#[derive(Debug, Clone)]
pub struct IngestSummary {
    pub taps: usize,
    pub energy: f64,
    /// Length of the shortest contiguous run holding
    /// [`INGEST_SPAN_FRACTION`] of the energy.
    pub span: usize,
    pub span_start: usize,
    pub normalized_path: PathBuf,
}

/// Shortest contiguous run of taps holding at least `target` energy;
/// returns `(start, length)`. Ties break toward the earlier window.
fn shortest_linear_span(taps: &[f64], target: f64) -> (usize, usize) {
    let energies: Vec<f64> = taps.iter().map(|v| v * v).collect();
    let mut best_len = usize::MAX;
    let mut best_start = 0;
    let mut sum = 0.0;
    let mut left = 0;
    for (right, &e) in energies.iter().enumerate() {
        sum += e;
        while sum - energies[left] >= target {
            sum -= energies[left];
            left += 1;
        }
        if sum >= target && right - left + 1 < best_len {
            best_len = right - left + 1;
            best_start = left;
        }
    }
    if best_len == usize::MAX {
        (0, taps.len())
    } else {
        (best_start, best_len)
    }
}

/// Parses a measured coupling file, reports its delay-spread metrics, and
/// writes a unit-energy copy as `coupling_normalized.txt`.
pub fn run_ingest(input: &Path, out_dir: &Path) -> Result<IngestSummary> {
    let h = load_impulse_response(input)?;
    let energy = h.energy();
    if energy <= 0.0 {
        return Err(Error::invalid(
            "ingest: the coupling has no energy to normalize",
        ));
    }
    let (span_start, span) = shortest_linear_span(h.taps(), INGEST_SPAN_FRACTION * energy);
    let scale = 1.0 / energy.sqrt();

    ensure_dir(out_dir)?;
    let normalized_path = out_dir.join("coupling_normalized.txt");
    let mut text = String::new();
    let _ = writeln!(text, "# normalized coupling, unit energy");
    let _ = writeln!(text, "# source = {}", input.display());
    let _ = writeln!(text, "# taps = {}", h.len());
    let _ = writeln!(text, "# source_energy = {}", fmt_float(energy));
    let _ = writeln!(
        text,
        "# energy_span = {span} taps from index {span_start} ({INGEST_SPAN_FRACTION} of energy)"
    );
    for tap in h.taps() {
        let _ = writeln!(text, "{}", tap * scale);
    }
    write_text(&normalized_path, &text)?;

    Ok(IngestSummary {
        taps: h.len(),
        energy,
        span,
        span_start,
        normalized_path,
    })
}
