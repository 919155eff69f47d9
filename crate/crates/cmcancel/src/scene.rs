//! Loop scenes and the time-domain simulator.
//!
//! A [`Scene`] is the full statistical description of one simulated link:
//! the direct data channel, the CM-to-DM coupling, the alien-noise model at
//! the common-mode sensor, background AWGN levels on both sensors, the
//! transmit power, and the DFT window geometry. [`simulate`] turns a scene
//! into continuous CM/DM sample streams, and [`frame`] cuts those streams
//! into per-symbol spectra with the CM window leading the DM window by `T`
//! samples.
//!
//! Alien noise is generated as one long stream and then framed, never per
//! symbol: the whole point of the misalignment analysis is noise leaking
//! across window edges, which per-symbol generation would erase.

use std::fmt::Write as _;
use std::ops::Range;
use std::path::Path;

use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::signal::{
    convolve_linear, dft_real, extract_window, idft_real, ImpulseResponse, Spectrum, TimeBlock,
    WindowGeometry,
};

/// Statistical model of the alien noise arriving at the common-mode sensor.
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseModel {
    /// Zero-mean white Gaussian noise with variance `sigma2`.
    White { sigma2: f64 },
    /// White Gaussian innovation with variance `sigma2`, shaped by an FIR
    /// filter. Only the steady-state output is returned (the filter
    /// transient is discarded), so the result is wide-sense stationary.
    Coloured { sigma2: f64, shaping: Vec<f64> },
    /// Repetitive electrical impulse noise: bursts of white noise lasting
    /// `burst_length` samples repeating every `period` samples, zero in
    /// between. `burst_offset` positions the burst start on the absolute
    /// sample axis, so bursts can be placed relative to symbol boundaries.
    ReinBurst {
        sigma2: f64,
        period: usize,
        burst_length: usize,
        burst_offset: usize,
    },
}

impl NoiseModel {
    /// Checks the model parameters. Variances must be finite and
    /// non-negative (zero means a silent source, which the simulator
    /// accepts so degenerate scenes stay constructible).
    pub fn validate(&self) -> Result<()> {
        let sigma2 = self.sigma2();
        if !sigma2.is_finite() || sigma2 < 0.0 {
            return Err(Error::invalid(format!(
                "NoiseModel: sigma2 must be finite and non-negative, got {sigma2}"
            )));
        }
        match self {
            NoiseModel::White { .. } => Ok(()),
            NoiseModel::Coloured { shaping, .. } => {
                if shaping.is_empty() {
                    return Err(Error::invalid(
                        "NoiseModel: coloured model needs a shaping response of length >= 1",
                    ));
                }
                if shaping.iter().any(|v| !v.is_finite()) {
                    return Err(Error::invalid("NoiseModel: non-finite shaping tap"));
                }
                Ok(())
            }
            NoiseModel::ReinBurst {
                period,
                burst_length,
                burst_offset,
                ..
            } => {
                if *period == 0 {
                    return Err(Error::invalid("NoiseModel: REIN period must be positive"));
                }
                if burst_length > period {
                    return Err(Error::invalid(format!(
                        "NoiseModel: REIN burst length {burst_length} exceeds period {period}"
                    )));
                }
                if burst_offset >= period {
                    return Err(Error::invalid(format!(
                        "NoiseModel: REIN burst offset {burst_offset} must be below period {period}"
                    )));
                }
                Ok(())
            }
        }
    }

    /// Variance of the white innovation.
    pub fn sigma2(&self) -> f64 {
        match self {
            NoiseModel::White { sigma2 }
            | NoiseModel::Coloured { sigma2, .. }
            | NoiseModel::ReinBurst { sigma2, .. } => *sigma2,
        }
    }
}

/// Autocorrelation sequence `r(0..=maxlag)` of a wide-sense stationary
/// noise source. Lags beyond `maxlag` read as zero.
#[derive(Debug, Clone, PartialEq)]
pub struct AutocorrSequence {
    values: Vec<f64>,
}

impl AutocorrSequence {
    /// Wraps `r(0), r(1), ..., r(maxlag)`. Requires `r(0) > 0` and
    /// `|r(tau)| <= r(0)`.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid(
                "AutocorrSequence: need at least the lag-0 value",
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("AutocorrSequence: non-finite value"));
        }
        let r0 = values[0];
        if r0 <= 0.0 {
            return Err(Error::invalid(format!(
                "AutocorrSequence: r(0) must be positive, got {r0}"
            )));
        }
        if let Some((tau, _)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| v.abs() > r0 * (1.0 + 1e-12))
        {
            return Err(Error::invalid(format!(
                "AutocorrSequence: |r({tau})| exceeds r(0)"
            )));
        }
        Ok(AutocorrSequence { values })
    }

    /// Largest stored lag.
    pub fn max_lag(&self) -> usize {
        self.values.len() - 1
    }

    /// `r(lag)`, zero beyond the stored range.
    pub fn at(&self, lag: usize) -> f64 {
        self.values.get(lag).copied().unwrap_or(0.0)
    }

    /// The stored values, lag order.
    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Full statistical description of one simulated link.
#[derive(Debug, Clone)]
pub struct Scene {
    /// DM direct channel (`M` taps). Must fit inside the cyclic prefix so
    /// the data path is ISI-free per tone.
    pub direct: ImpulseResponse,
    /// CM-to-DM coupling (`L` taps) through which alien noise leaks into
    /// the differential mode.
    pub coupling: ImpulseResponse,
    /// Transmit-constellation power per tone.
    pub sigma2_x: f64,
    /// Background AWGN variance at the CM sensor.
    pub sigma2_vc: f64,
    /// Background AWGN variance at the DM sensor.
    pub sigma2_vd: f64,
    /// Alien-noise model at the CM sensor.
    pub noise: NoiseModel,
    /// DFT size and CM window misalignment.
    pub geom: WindowGeometry,
    /// Cyclic-prefix length in samples.
    pub cp_length: usize,
}

impl Scene {
    /// Checks the scene invariants: variances non-negative, the direct
    /// channel no longer than the cyclic prefix, the coupling shorter than
    /// the DFT size, and a valid noise model.
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("sigma2_x", self.sigma2_x),
            ("sigma2_vc", self.sigma2_vc),
            ("sigma2_vd", self.sigma2_vd),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::invalid(format!(
                    "Scene: {name} must be finite and non-negative, got {v}"
                )));
            }
        }
        if self.direct.len() > self.cp_length {
            return Err(Error::invalid(format!(
                "Scene: direct channel has {} taps but the cyclic prefix is only {} samples; \
                 the data path would not be ISI-free",
                self.direct.len(),
                self.cp_length
            )));
        }
        if self.coupling.len() >= self.geom.p() {
            return Err(Error::invalid(format!(
                "Scene: coupling length {} must be below the DFT size {}",
                self.coupling.len(),
                self.geom.p()
            )));
        }
        self.noise.validate()
    }

    /// Samples between consecutive DM window starts.
    pub fn symbol_spacing(&self) -> usize {
        self.geom.p() + self.cp_length
    }
}

/// One framed DMT symbol: CM spectrum, DM spectrum, and the transmitted
/// frequency-domain symbol (all-zero in noise-only scenes). Streams framed
/// out of a simulation also carry the alien-only spectra so estimators can
/// separate noise components.
#[derive(Debug, Clone)]
pub struct SymbolRecord {
    pub y_c: Spectrum,
    pub y_d: Spectrum,
    pub x: Spectrum,
    pub alien: Option<AlienSpectra>,
}

/// Alien-noise component spectra of one symbol: the CM window's spectrum
/// and the coupled DM alien spectrum, both without background AWGN.
#[derive(Debug, Clone)]
pub struct AlienSpectra {
    pub z_c: Spectrum,
    pub z_d: Spectrum,
}

/// A sequence of framed symbols sharing one DFT size.
#[derive(Debug, Clone)]
pub struct SymbolStream {
    p: usize,
    symbols: Vec<SymbolRecord>,
}

impl SymbolStream {
    /// Wraps framed symbols. All spectra must share one DFT size.
    pub fn new(symbols: Vec<SymbolRecord>) -> Result<Self> {
        let first = symbols
            .first()
            .ok_or_else(|| Error::invalid("SymbolStream: need at least one symbol"))?;
        let p = first.y_c.len();
        for (s, rec) in symbols.iter().enumerate() {
            let mut lens = vec![rec.y_c.len(), rec.y_d.len(), rec.x.len()];
            if let Some(alien) = &rec.alien {
                lens.push(alien.z_c.len());
                lens.push(alien.z_d.len());
            }
            if lens.iter().any(|&l| l != p) {
                return Err(Error::invalid(format!(
                    "SymbolStream: symbol {s} has mismatched spectrum lengths"
                )));
            }
        }
        Ok(SymbolStream { p, symbols })
    }

    /// DFT size shared by all spectra.
    pub fn p(&self) -> usize {
        self.p
    }

    /// Number of symbols.
    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    /// True if the stream has no symbols (never true for a constructed
    /// stream; present for completeness).
    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    /// The framed symbols in time order.
    pub fn symbols(&self) -> &[SymbolRecord] {
        &self.symbols
    }
}

/// Deterministic Gaussian noise block from a noise model.
///
/// The block is anchored at index 0; see [`generate_noise_from`] to anchor
/// elsewhere (REIN burst positions follow the absolute index).
pub fn generate_noise(model: &NoiseModel, n_samples: usize, seed: u64) -> Result<TimeBlock> {
    generate_noise_from(model, 0, n_samples, seed)
}

/// Deterministic Gaussian noise block starting at absolute index
/// `start_index`.
pub fn generate_noise_from(
    model: &NoiseModel,
    start_index: i64,
    n_samples: usize,
    seed: u64,
) -> Result<TimeBlock> {
    model.validate()?;
    if n_samples == 0 {
        return Err(Error::invalid("generate_noise: n_samples must be >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = model_samples(model, start_index, n_samples, &mut rng);
    TimeBlock::new(samples, start_index)
}

/// Noise samples from an already-seeded generator; the simulator calls this
/// once per independent component stream.
pub(crate) fn model_samples(
    model: &NoiseModel,
    start_index: i64,
    n_samples: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    match model {
        NoiseModel::White { sigma2 } => white_samples(*sigma2, n_samples, rng),
        NoiseModel::Coloured { sigma2, shaping } => {
            let g = shaping.len();
            // Extra leading innovation samples put the filter in steady
            // state from the first returned sample.
            let w = white_samples(*sigma2, n_samples + g - 1, rng);
            let mut out = vec![0.0; n_samples];
            for (i, slot) in out.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (j, &tap) in shaping.iter().enumerate() {
                    acc += tap * w[i + g - 1 - j];
                }
                *slot = acc;
            }
            out
        }
        NoiseModel::ReinBurst {
            sigma2,
            period,
            burst_length,
            burst_offset,
        } => {
            let sigma = sigma2.sqrt();
            let period = *period as i64;
            let offset = *burst_offset as i64;
            let burst = *burst_length as i64;
            (0..n_samples)
                .map(|i| {
                    let phase = (start_index + i as i64 - offset).rem_euclid(period);
                    if phase < burst && sigma > 0.0 {
                        sigma * rng.sample::<f64, _>(StandardNormal)
                    } else {
                        0.0
                    }
                })
                .collect()
        }
    }
}

fn white_samples(sigma2: f64, n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    if sigma2 == 0.0 {
        return vec![0.0; n];
    }
    let sigma = sigma2.sqrt();
    (0..n)
        .map(|_| sigma * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Autocorrelation sequence of a wide-sense stationary noise model up to
/// `maxlag`.
///
/// White noise gives `(sigma2, 0, 0, ...)`; a coloured model gives
/// `r(tau) = sigma2 * sum_i g(i) g(i+tau)`. REIN bursts are cyclostationary
/// and are rejected.
pub fn autocorr_of(model: &NoiseModel, maxlag: usize) -> Result<AutocorrSequence> {
    model.validate()?;
    match model {
        NoiseModel::White { sigma2 } => {
            let mut values = vec![0.0; maxlag + 1];
            values[0] = *sigma2;
            AutocorrSequence::new(values)
        }
        NoiseModel::Coloured { sigma2, shaping } => {
            let g = shaping.len();
            let mut values = vec![0.0; maxlag + 1];
            for (tau, slot) in values.iter_mut().enumerate() {
                if tau >= g {
                    break;
                }
                let mut acc = 0.0;
                for i in 0..g - tau {
                    acc += shaping[i] * shaping[i + tau];
                }
                *slot = sigma2 * acc;
            }
            AutocorrSequence::new(values)
        }
        NoiseModel::ReinBurst { .. } => Err(Error::NotStationary(
            "repetitive impulse bursts are cyclostationary; no single autocorrelation \
             sequence describes them"
                .into(),
        )),
    }
}

/// Simulator switches beyond the scene itself.
#[derive(Debug, Clone)]
pub struct SimulateOptions {
    /// Replace the alien stream by the periodic extension of its first `P`
    /// samples. A period-P CM noise makes the coupling look perfectly
    /// cyclic to the per-tone canceller, which gives estimators an
    /// exactness oracle.
    pub cyclic_noise: bool,
    /// Keep the alien component streams (`z_c`, coupled `z_d`) in the
    /// result so framed symbols carry separable components. Turn off to
    /// halve the memory of long noise-only runs.
    pub keep_parts: bool,
}

impl Default for SimulateOptions {
    fn default() -> Self {
        SimulateOptions {
            cyclic_noise: false,
            keep_parts: true,
        }
    }
}

/// Output of [`simulate`]: the two sensor streams, the transmitted
/// frequency-domain symbols, and (optionally) the alien component streams.
#[derive(Debug, Clone)]
pub struct Simulation {
    cm: TimeBlock,
    dm: TimeBlock,
    tx_symbols: Vec<Spectrum>,
    parts: Option<AlienParts>,
    geom: WindowGeometry,
    cp_length: usize,
    n_symbols: usize,
}

/// Alien component streams of a simulation, without background AWGN.
#[derive(Debug, Clone)]
pub struct AlienParts {
    /// Alien noise at the CM sensor.
    pub z_c: TimeBlock,
    /// Alien noise after the CM-to-DM coupling.
    pub z_d: TimeBlock,
}

impl Simulation {
    /// Common-mode sensor stream `cm = z_c + v_c`.
    pub fn cm(&self) -> &TimeBlock {
        &self.cm
    }

    /// Differential-mode sensor stream
    /// `dm = h_d * x + h_cd * z_c + v_d`.
    pub fn dm(&self) -> &TimeBlock {
        &self.dm
    }

    /// Transmitted frequency-domain symbols; empty when the scene has no
    /// data signal.
    pub fn tx_symbols(&self) -> &[Spectrum] {
        &self.tx_symbols
    }

    /// Alien component streams, if kept.
    pub fn parts(&self) -> Option<&AlienParts> {
        self.parts.as_ref()
    }

    /// Window geometry the scene was simulated under.
    pub fn geom(&self) -> &WindowGeometry {
        &self.geom
    }

    /// Cyclic-prefix length in samples.
    pub fn cp_length(&self) -> usize {
        self.cp_length
    }

    /// Number of simulated symbols.
    pub fn n_symbols(&self) -> usize {
        self.n_symbols
    }

    /// Frames a range of symbols at the scene's own misalignment.
    pub fn frame_range(&self, symbols: Range<usize>) -> Result<SymbolStream> {
        self.frame_range_at(symbols, self.geom.t())
    }

    /// Frames a range of symbols with the CM window leading by `t`
    /// (which may differ from the simulated geometry; the streams carry
    /// pre-roll for leads up to the simulated `max(L, T)`).
    ///
    /// Framed records carry alien component spectra when the simulation
    /// kept its parts.
    pub fn frame_range_at(&self, symbols: Range<usize>, t: usize) -> Result<SymbolStream> {
        if symbols.is_empty() {
            return Err(Error::invalid("frame_range: empty symbol range"));
        }
        if symbols.end > self.n_symbols {
            return Err(Error::invalid(format!(
                "frame_range: requested symbols up to {} of {} simulated",
                symbols.end, self.n_symbols
            )));
        }
        let geom = self.geom.with_t(t)?;
        let p = geom.p();
        let spacing = (p + self.cp_length) as i64;
        let mut records = Vec::with_capacity(symbols.len());
        for s in symbols {
            let n_s = s as i64 * spacing;
            let y_d = dft_real(&extract_window(&self.dm, n_s, p)?, &geom)?;
            let y_c = dft_real(&extract_window(&self.cm, n_s - t as i64, p)?, &geom)?;
            let x = self
                .tx_symbols
                .get(s)
                .cloned()
                .unwrap_or_else(|| Spectrum::zeros(p));
            let alien = match &self.parts {
                Some(parts) => Some(AlienSpectra {
                    z_c: dft_real(&extract_window(&parts.z_c, n_s - t as i64, p)?, &geom)?,
                    z_d: dft_real(&extract_window(&parts.z_d, n_s, p)?, &geom)?,
                }),
                None => None,
            };
            records.push(SymbolRecord { y_c, y_d, x, alien });
        }
        SymbolStream::new(records)
    }
}

/// Simulates `n_symbols` DMT symbols of a scene with default options.
pub fn simulate(scene: &Scene, n_symbols: usize, seed: u64) -> Result<Simulation> {
    simulate_with(scene, n_symbols, seed, &SimulateOptions::default())
}

/// Simulates a scene with explicit options.
///
/// The streams start `max(L, T) + cp_length` samples before the first DM
/// window so every window, prefix, and filter history stays inside the
/// record. Deterministic: identical `(scene, n_symbols, seed, options)`
/// give bit-identical streams. The four random components (alien noise, CM
/// AWGN, DM AWGN, data) draw from independent sub-streams of one seeded
/// generator.
pub fn simulate_with(
    scene: &Scene,
    n_symbols: usize,
    seed: u64,
    options: &SimulateOptions,
) -> Result<Simulation> {
    scene.validate()?;
    if n_symbols == 0 {
        return Err(Error::invalid("simulate: n_symbols must be >= 1"));
    }
    let p = scene.geom.p();
    let t = scene.geom.t();
    let cp = scene.cp_length;
    let l = scene.coupling.len();
    let spacing = (p + cp) as i64;

    // Stream extent: pre-roll before the first window, through the end of
    // the last window. The coupling convolution trims L-1 leading samples,
    // so generation starts that much earlier than the promised pre-roll.
    let pre_roll = (l.max(t) + cp) as i64;
    let gen_start = -pre_roll - (l as i64 - 1);
    let end = (n_symbols as i64 - 1) * spacing + p as i64;
    // After the valid-part trim, all returned streams share this range.
    let common_start = gen_start + (l as i64 - 1);
    let common_len = (end - common_start) as usize;

    let mut rng_z = ChaCha8Rng::seed_from_u64(seed);
    rng_z.set_stream(0);
    let mut rng_vc = ChaCha8Rng::seed_from_u64(seed);
    rng_vc.set_stream(1);
    let mut rng_vd = ChaCha8Rng::seed_from_u64(seed);
    rng_vd.set_stream(2);
    let mut rng_data = ChaCha8Rng::seed_from_u64(seed);
    rng_data.set_stream(3);

    // Alien noise over the full generation range, optionally tiled to a
    // period-P sequence anchored at absolute index 0.
    let gen_len = (end - gen_start) as usize;
    let z_c_full = if options.cyclic_noise {
        let period = model_samples(&scene.noise, 0, p, &mut rng_z);
        let samples: Vec<f64> = (0..gen_len)
            .map(|i| period[(gen_start + i as i64).rem_euclid(p as i64) as usize])
            .collect();
        TimeBlock::new(samples, gen_start)?
    } else {
        TimeBlock::new(
            model_samples(&scene.noise, gen_start, gen_len, &mut rng_z),
            gen_start,
        )?
    };

    // Coupled alien noise on the DM side; valid part starts at common_start.
    let z_d = convolve_linear(&scene.coupling, &z_c_full)?;
    debug_assert_eq!(z_d.start_index(), common_start);

    // Data path: per-symbol spectra, cyclically extended sample stream.
    let (tx_symbols, data_dm) = if scene.sigma2_x > 0.0 {
        let (tx, x_stream) = data_stream(scene, n_symbols, common_start, end, &mut rng_data)?;
        let through_direct = convolve_linear(&scene.direct, &x_stream)?;
        debug_assert!(through_direct.start_index() <= common_start);
        let trimmed = extract_window(&through_direct, common_start, common_len)?;
        (tx, Some(trimmed))
    } else {
        (Vec::new(), None)
    };

    // Sensor sums over the common range.
    let z_c = extract_window(&z_c_full, common_start, common_len)?;
    let v_c = white_samples(scene.sigma2_vc, common_len, &mut rng_vc);
    let v_d = white_samples(scene.sigma2_vd, common_len, &mut rng_vd);

    let cm_samples: Vec<f64> = z_c.samples().iter().zip(&v_c).map(|(z, v)| z + v).collect();
    let mut dm_samples: Vec<f64> = z_d.samples().iter().zip(&v_d).map(|(z, v)| z + v).collect();
    if let Some(data) = &data_dm {
        for (slot, d) in dm_samples.iter_mut().zip(data.samples()) {
            *slot += d;
        }
    }

    let parts = if options.keep_parts {
        Some(AlienParts { z_c, z_d })
    } else {
        None
    };

    Ok(Simulation {
        cm: TimeBlock::new(cm_samples, common_start)?,
        dm: TimeBlock::new(dm_samples, common_start)?,
        tx_symbols,
        parts,
        geom: scene.geom,
        cp_length: scene.cp_length,
        n_symbols,
    })
}

/// Random 4-phase symbols on every tone, scaled so each tone carries power
/// `sigma2_x`, assembled into the cyclically-extended transmit stream.
/// DC and (for even P) the Nyquist tone get random signs instead of phases
/// to keep the spectrum conjugate-symmetric.
fn data_stream(
    scene: &Scene,
    n_symbols: usize,
    common_start: i64,
    end: i64,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<Spectrum>, TimeBlock)> {
    let p = scene.geom.p();
    let cp = scene.cp_length;
    let m = scene.direct.len();
    let spacing = (p + cp) as i64;
    let amp = scene.sigma2_x.sqrt();
    let half_amp = (scene.sigma2_x / 2.0).sqrt();

    // The transmit stream must reach back far enough that its valid-part
    // convolution with the direct channel covers common_start, and x(n) is
    // zero before the first symbol's prefix.
    let x_start = common_start - (m as i64 - 1);
    let x_len = (end - x_start) as usize;
    let mut x_samples = vec![0.0; x_len];

    let mut tx = Vec::with_capacity(n_symbols);
    for s in 0..n_symbols {
        let mut bins = vec![Complex::new(0.0, 0.0); p];
        bins[0] = Complex::new(if rng.random::<bool>() { amp } else { -amp }, 0.0);
        if p.is_multiple_of(2) {
            bins[p / 2] = Complex::new(if rng.random::<bool>() { amp } else { -amp }, 0.0);
        }
        let top = if p.is_multiple_of(2) {
            p / 2
        } else {
            p.div_ceil(2)
        };
        for q in 1..top {
            let re = if rng.random::<bool>() {
                half_amp
            } else {
                -half_amp
            };
            let im = if rng.random::<bool>() {
                half_amp
            } else {
                -half_amp
            };
            bins[q] = Complex::new(re, im);
            bins[p - q] = bins[q].conj();
        }
        let spectrum = Spectrum::new(bins)?;
        let body = idft_real(&spectrum)?;

        // Prefix = last cp samples of the body, then the body itself.
        let sym_start = s as i64 * spacing - cp as i64;
        for (j, &v) in body.samples()[p - cp..].iter().enumerate() {
            let idx = sym_start + j as i64 - x_start;
            if idx >= 0 {
                x_samples[idx as usize] = v;
            }
        }
        for (j, &v) in body.samples().iter().enumerate() {
            let idx = sym_start + cp as i64 + j as i64 - x_start;
            if idx >= 0 && (idx as usize) < x_len {
                x_samples[idx as usize] = v;
            }
        }
        tx.push(spectrum);
    }
    Ok((tx, TimeBlock::new(x_samples, x_start)?))
}

/// Frames already-simulated streams into per-symbol spectra.
///
/// Symbol `s`'s DM window starts at absolute sample `s * (P + cp_length)`
/// (after the prefix); the CM window starts `T` samples earlier. `tx` may
/// be empty for noise-only streams (records then carry zero spectra). The
/// number of framed symbols is the largest count the streams fully cover
/// (at least one, or the call fails).
pub fn frame(
    cm: &TimeBlock,
    dm: &TimeBlock,
    tx: &[Spectrum],
    geom: &WindowGeometry,
    cp_length: usize,
) -> Result<SymbolStream> {
    let p = geom.p();
    let t = geom.t() as i64;
    let spacing = (p + cp_length) as i64;

    // Largest symbol count both streams cover.
    let dm_last = dm.end_index() - p as i64; // latest possible window start
    let cm_last = cm.end_index() - p as i64 + t;
    let max_start = dm_last.min(cm_last);
    if max_start < 0 || dm.start_index() > 0 || cm.start_index() > -t {
        return Err(Error::invalid(
            "frame: streams do not cover the first symbol window (missing pre-roll?)",
        ));
    }
    let count = (max_start / spacing + 1) as usize;
    let count = count.min(if tx.is_empty() { count } else { tx.len() });

    let mut records = Vec::with_capacity(count);
    for s in 0..count {
        let n_s = s as i64 * spacing;
        let y_d = dft_real(&extract_window(dm, n_s, p)?, geom)?;
        let y_c = dft_real(&extract_window(cm, n_s - t, p)?, geom)?;
        let x = tx.get(s).cloned().unwrap_or_else(|| Spectrum::zeros(p));
        records.push(SymbolRecord {
            y_c,
            y_d,
            x,
            alien: None,
        });
    }
    SymbolStream::new(records)
}

/// Reads an impulse response from tap-per-line text.
///
/// Format: one decimal float per line, `#` starts a comment (whole-line or
/// trailing), blank lines are ignored. Tap index follows line order
/// starting at `h(0)`.
pub fn parse_impulse_response(text: &str, origin: &str) -> Result<ImpulseResponse> {
    let mut taps = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let tap: f64 = line.parse().map_err(|_| Error::TapFileParse {
            path: origin.to_string(),
            line: lineno + 1,
            message: format!("expected a decimal float, got {line:?}"),
        })?;
        if !tap.is_finite() {
            return Err(Error::TapFileParse {
                path: origin.to_string(),
                line: lineno + 1,
                message: "tap must be finite".into(),
            });
        }
        taps.push(tap);
    }
    if taps.is_empty() {
        return Err(Error::TapFileParse {
            path: origin.to_string(),
            line: text.lines().count(),
            message: "no taps found".into(),
        });
    }
    ImpulseResponse::new(taps)
}

/// Loads an impulse response from a tap-per-line text file.
pub fn load_impulse_response(path: &Path) -> Result<ImpulseResponse> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_impulse_response(&text, &path.display().to_string())
}

/// Writes an impulse response in the tap-per-line text format. Values are
/// printed with enough digits to round-trip exactly.
pub fn save_impulse_response(h: &ImpulseResponse, path: &Path) -> Result<()> {
    let mut text = String::new();
    let _ = writeln!(text, "# impulse response, {} taps", h.len());
    for tap in h.taps() {
        let _ = writeln!(text, "{tap}");
    }
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::response_spectrum;

    fn white(sigma2: f64) -> NoiseModel {
        NoiseModel::White { sigma2 }
    }

    fn quiet_scene(p: usize, t: usize, coupling: Vec<f64>) -> Scene {
        Scene {
            direct: ImpulseResponse::new(vec![1.0]).unwrap(),
            coupling: ImpulseResponse::new(coupling).unwrap(),
            sigma2_x: 0.0,
            sigma2_vc: 0.0,
            sigma2_vd: 0.0,
            noise: white(1.0),
            geom: WindowGeometry::new(p, t).unwrap(),
            cp_length: 8,
        }
    }

    #[test]
    fn white_noise_sample_variance_matches_model() {
        let noise = generate_noise(&white(1.0), 1_000_000, 7).unwrap();
        let var = noise.energy() / noise.len() as f64;
        assert!(
            (var - 1.0).abs() < 0.01,
            "sample variance {var} deviates from 1 by more than 1%"
        );
    }

    #[test]
    fn coloured_noise_lag1_autocorrelation_matches_ma1() {
        let model = NoiseModel::Coloured {
            sigma2: 1.0,
            shaping: vec![1.0, 0.5],
        };
        let noise = generate_noise(&model, 1_000_000, 11).unwrap();
        let s = noise.samples();
        let var = noise.energy() / s.len() as f64;
        let lag1: f64 = s.windows(2).map(|w| w[0] * w[1]).sum::<f64>() / (s.len() - 1) as f64;
        let rho = lag1 / var;
        // MA(1) with taps [1, 0.5]: rho(1) = 0.5 / 1.25 = 0.4.
        assert!(
            (rho - 0.4).abs() < 0.008,
            "lag-1 correlation {rho} deviates from 0.4 by more than 2%"
        );
    }

    #[test]
    fn rein_with_zero_burst_length_is_silent() {
        let model = NoiseModel::ReinBurst {
            sigma2: 4.0,
            period: 100,
            burst_length: 0,
            burst_offset: 0,
        };
        let noise = generate_noise(&model, 1000, 3).unwrap();
        assert!(noise.samples().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rein_bursts_follow_the_absolute_index() {
        let model = NoiseModel::ReinBurst {
            sigma2: 1.0,
            period: 50,
            burst_length: 5,
            burst_offset: 2,
        };
        let noise = generate_noise_from(&model, -100, 300, 9).unwrap();
        for n in noise.start_index()..noise.end_index() {
            let in_burst = (n - 2).rem_euclid(50) < 5;
            let v = noise.sample_at(n).unwrap();
            if !in_burst {
                assert_eq!(v, 0.0, "sample {n} outside burst should be zero");
            }
        }
        // Bursts carry energy.
        assert!(noise.energy() > 0.0);
    }

    #[test]
    fn autocorr_of_white_noise() {
        let acf = autocorr_of(&white(2.0), 4).unwrap();
        assert_eq!(acf.values(), &[2.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn autocorr_of_ma1_shaping() {
        let model = NoiseModel::Coloured {
            sigma2: 1.0,
            shaping: vec![1.0, 0.5],
        };
        let acf = autocorr_of(&model, 3).unwrap();
        assert!((acf.at(0) - 1.25).abs() < 1e-15);
        assert!((acf.at(1) - 0.5).abs() < 1e-15);
        assert_eq!(acf.at(2), 0.0);
        assert_eq!(acf.at(17), 0.0);
    }

    #[test]
    fn autocorr_of_rein_is_rejected() {
        let model = NoiseModel::ReinBurst {
            sigma2: 1.0,
            period: 10,
            burst_length: 2,
            burst_offset: 0,
        };
        match autocorr_of(&model, 4) {
            Err(Error::NotStationary(_)) => {}
            other => panic!("expected NotStationary, got {other:?}"),
        }
    }

    /// Positive-semidefiniteness spot check: the Toeplitz matrix built from
    /// autocorr_of must have no negative pivots (LDL^T factorization up to
    /// size 64).
    #[test]
    fn autocorrelations_are_positive_semidefinite() {
        let models = [
            white(1.0),
            NoiseModel::Coloured {
                sigma2: 2.0,
                shaping: vec![1.0, 0.5],
            },
            NoiseModel::Coloured {
                sigma2: 0.5,
                shaping: vec![1.0, -0.8, 0.3, 0.1],
            },
        ];
        let n = 64;
        for model in &models {
            let acf = autocorr_of(model, n - 1).unwrap();
            let mut a: Vec<Vec<f64>> = (0..n)
                .map(|i| (0..n).map(|j| acf.at(i.abs_diff(j))).collect())
                .collect();
            // In-place LDL^T; pivots of a PSD matrix stay >= 0 up to
            // rounding.
            for k in 0..n {
                let pivot = a[k][k];
                assert!(
                    pivot > -1e-9 * acf.at(0),
                    "negative pivot {pivot} at step {k} for {model:?}"
                );
                if pivot.abs() < 1e-14 {
                    continue;
                }
                let (upper, lower) = a.split_at_mut(k + 1);
                let row_k = &upper[k][k..];
                for row_i in lower.iter_mut() {
                    let f = row_i[k] / pivot;
                    for (x, akj) in row_i[k..].iter_mut().zip(row_k) {
                        *x -= f * akj;
                    }
                }
            }
        }
    }

    #[test]
    fn null_scene_produces_silence() {
        let mut scene = quiet_scene(64, 4, vec![0.5, 0.25]);
        scene.noise = white(0.0);
        let sim = simulate(&scene, 3, 1).unwrap();
        assert!(sim.cm().samples().iter().all(|&v| v == 0.0));
        assert!(sim.dm().samples().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_coupling_makes_dm_equal_cm() {
        let scene = quiet_scene(64, 4, vec![1.0]);
        let sim = simulate(&scene, 5, 2).unwrap();
        assert_eq!(sim.cm().start_index(), sim.dm().start_index());
        assert_eq!(sim.cm().samples(), sim.dm().samples());
    }

    #[test]
    fn coupled_noise_power_matches_white_identity() {
        // E[z_d^2] = sigma2 * sum h(k)^2 for white alien noise.
        let taps = vec![0.9, -0.4, 0.2, 0.6, -0.1, 0.3, -0.7, 0.05];
        let tap_energy: f64 = taps.iter().map(|v| v * v).sum();
        let mut scene = quiet_scene(1024, 0, taps);
        scene.noise = white(1.0);
        scene.cp_length = 1;
        let sim = simulate(&scene, 970, 5).unwrap(); // ~1e6 samples
        let z_d = &sim.parts().unwrap().z_d;
        let measured = z_d.energy() / z_d.len() as f64;
        let expected = tap_energy;
        assert!(
            (measured / expected - 1.0).abs() < 0.02,
            "E[z_d^2] = {measured}, expected {expected} within 2%"
        );
    }

    #[test]
    fn background_noise_is_independent_of_alien_noise() {
        let mut scene = quiet_scene(1024, 0, vec![1.0]);
        scene.noise = white(1.0);
        scene.sigma2_vc = 1.0;
        scene.cp_length = 1;
        let sim = simulate(&scene, 970, 13).unwrap();
        let z_c = &sim.parts().unwrap().z_c;
        let n = z_c.len();
        // v_c = cm - z_c; cross-correlate with z_c.
        let mut cross = 0.0;
        for (cm, z) in sim.cm().samples().iter().zip(z_c.samples()) {
            cross += (cm - z) * z;
        }
        cross /= n as f64;
        let bound = 4.0 / (n as f64).sqrt(); // sigma_vc * sigma_z = 1
        assert!(
            cross.abs() < bound,
            "cross-correlation {cross} outside the 4-sigma bound {bound}"
        );
    }

    #[test]
    fn windows_coincide_when_t_is_zero() {
        let mut scene = quiet_scene(64, 0, vec![1.0]);
        scene.noise = white(1.0);
        let sim = simulate(&scene, 4, 3).unwrap();
        let stream = sim.frame_range(0..4).unwrap();
        for rec in stream.symbols() {
            for (c, d) in rec.y_c.bins().iter().zip(rec.y_d.bins()) {
                assert!((c - d).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn cyclic_noise_framing_satisfies_the_shifted_ratio_identity() {
        // With period-P alien noise, no AWGN, and no data, every tone obeys
        // Y_d(q) / Y_c(q) = sum_k h(k) W^{(k-T)q} exactly.
        let p = 64;
        let t = 9;
        let taps: Vec<f64> = (0..12).map(|k| ((k * 5 + 1) as f64 * 0.41).sin()).collect();
        let mut scene = quiet_scene(p, t, taps.clone());
        scene.noise = white(1.0);
        let sim = simulate_with(
            &scene,
            3,
            21,
            &SimulateOptions {
                cyclic_noise: true,
                keep_parts: true,
            },
        )
        .unwrap();
        let stream = sim.frame_range(0..3).unwrap();

        let h = ImpulseResponse::new(taps).unwrap();
        let h_spec = response_spectrum(&h, p).unwrap();
        let w = Complex::from_polar(1.0, 2.0 * std::f64::consts::PI * t as f64 / p as f64);
        for rec in stream.symbols() {
            for q in 0..p {
                let y_c = rec.y_c.bins()[q];
                if y_c.norm() < 1e-9 {
                    continue;
                }
                // Advancing the window by T multiplies tone q by W^{-Tq};
                // the expected ratio is H(q) * W^{+Tq} ... W = e^{+j2pi/P}.
                let expected = h_spec.bins()[q] * w.powu(q as u32);
                let ratio = rec.y_d.bins()[q] / y_c;
                assert!(
                    (ratio - expected).norm() < 1e-9 * (1.0 + expected.norm()),
                    "tone {q}: ratio {ratio} != {expected}"
                );
            }
        }
    }

    #[test]
    fn framing_rejects_symbols_beyond_the_record() {
        let scene = quiet_scene(64, 4, vec![1.0, 0.2]);
        let sim = simulate(&scene, 3, 1).unwrap();
        assert!(sim.frame_range(0..4).is_err());
        assert!(sim.frame_range(2..2).is_err());
    }

    #[test]
    fn free_frame_counts_symbols_and_rejects_missing_preroll() {
        let mut scene = quiet_scene(32, 3, vec![1.0]);
        scene.noise = white(1.0);
        scene.cp_length = 4;
        let sim = simulate(&scene, 5, 8).unwrap();
        let stream = frame(sim.cm(), sim.dm(), &[], &scene.geom, scene.cp_length).unwrap();
        assert_eq!(stream.len(), 5);

        // A record starting at 0 lacks the CM lead.
        let cm = TimeBlock::new(vec![0.5; 200], 0).unwrap();
        let dm = TimeBlock::new(vec![0.5; 200], 0).unwrap();
        assert!(frame(&cm, &dm, &[], &scene.geom, scene.cp_length).is_err());
    }

    #[test]
    fn data_path_is_isi_free_per_tone() {
        // With M <= cp_length and everything else silent, Y_d = H_d X.
        let mut scene = quiet_scene(64, 0, vec![0.0]);
        scene.noise = white(0.0);
        scene.direct = ImpulseResponse::new(vec![1.0, -0.35, 0.2]).unwrap();
        scene.sigma2_x = 2.0;
        scene.cp_length = 8;
        let sim = simulate(&scene, 6, 17).unwrap();
        let stream = sim.frame_range(0..6).unwrap();
        let h_d = response_spectrum(&scene.direct, 64).unwrap();
        for rec in stream.symbols() {
            for q in 0..64 {
                let expected = h_d.bins()[q] * rec.x.bins()[q];
                let got = rec.y_d.bins()[q];
                assert!(
                    (got - expected).norm() < 1e-9 * (1.0 + expected.norm()),
                    "tone {q}: Y_d = {got}, H_d X = {expected}"
                );
            }
        }
    }

    #[test]
    fn transmit_power_per_tone_matches_sigma2_x() {
        let mut scene = quiet_scene(32, 0, vec![0.0]);
        scene.noise = white(0.0);
        scene.sigma2_x = 3.0;
        scene.cp_length = 4;
        let sim = simulate(&scene, 40, 23).unwrap();
        for spec in sim.tx_symbols() {
            for bin in spec.bins() {
                assert!((bin.norm_sqr() - 3.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn simulation_is_deterministic() {
        let mut scene = quiet_scene(64, 5, vec![0.7, -0.3, 0.1]);
        scene.noise = NoiseModel::Coloured {
            sigma2: 0.8,
            shaping: vec![1.0, 0.4],
        };
        scene.sigma2_vc = 0.2;
        scene.sigma2_vd = 0.1;
        scene.sigma2_x = 1.0;
        let a = simulate(&scene, 4, 99).unwrap();
        let b = simulate(&scene, 4, 99).unwrap();
        assert_eq!(a.cm().samples(), b.cm().samples());
        assert_eq!(a.dm().samples(), b.dm().samples());
        for (sa, sb) in a.tx_symbols().iter().zip(b.tx_symbols()) {
            assert_eq!(sa.bins(), sb.bins());
        }
    }

    #[test]
    fn scene_invariants_are_enforced() {
        let mut scene = quiet_scene(64, 4, vec![0.0; 64]);
        assert!(scene.validate().is_err(), "L = P must be rejected");
        scene = quiet_scene(64, 4, vec![1.0]);
        scene.direct = ImpulseResponse::new(vec![1.0; 9]).unwrap();
        assert!(
            scene.validate().is_err(),
            "direct channel longer than the prefix must be rejected"
        );
        scene = quiet_scene(64, 4, vec![1.0]);
        scene.sigma2_vc = -1.0;
        assert!(scene.validate().is_err());
    }

    #[test]
    fn tap_file_round_trips_and_reports_bad_lines() {
        let text = "# measured coupling\n0.5\n\n-0.25  # trailing note\n1e-3\n";
        let h = parse_impulse_response(text, "inline").unwrap();
        assert_eq!(h.taps(), &[0.5, -0.25, 1e-3]);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("coupling.txt");
        save_impulse_response(&h, &path).unwrap();
        let back = load_impulse_response(&path).unwrap();
        assert_eq!(back.taps(), h.taps());

        match parse_impulse_response("0.5\nnot-a-number\n", "bad") {
            Err(Error::TapFileParse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected TapFileParse, got {other:?}"),
        }
    }
}
