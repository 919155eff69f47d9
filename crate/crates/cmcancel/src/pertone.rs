//! The per-tone canceller: coefficient estimation, cancellation, the
//! analytic per-tone coupling spectrum under window misalignment, and the
//! post-cancellation noise-floor bound.
//!
//! With the CM DFT window leading the DM window by `T` samples, white alien
//! noise makes the coupling look like a single complex coefficient per
//! tone,
//!
//! ```text
//! H(q) = sum_{k=0}^{T-1}  h(k) (1 + (k-T)/P) W^{(k-T)q}
//!      + sum_{k=T}^{L-1}  h(k) (1 - (k-T)/P) W^{(k-T)q},    W = e^{-j2pi/P},
//! ```
//!
//! which is the DFT of the coupling taps cyclically shifted by `T` and
//! weighted by a triangular window ([`pertone_response`]). The weights are
//! strictly positive for `L <= P`, so the map is invertible
//! ([`recover_coupling`]): estimated per-tone coefficients recover the true
//! coupling taps, which is what makes post-training window adjustment
//! possible.

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::scene::{SymbolRecord, SymbolStream};
use crate::signal::{dft_real, ImpulseResponse, Spectrum, TimeBlock, WindowGeometry};

/// Denominator floor below which a tone is treated as dead (no CM energy)
/// and gets a zero coefficient.
pub const DEAD_TONE_FLOOR: f64 = 1e-30;

/// Per-tone combiner coefficients `beta(q)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PerToneCoeffs {
    beta: Vec<Complex<f64>>,
}

impl PerToneCoeffs {
    /// Wraps coefficients. Rejects empty or non-finite input.
    pub fn new(beta: Vec<Complex<f64>>) -> Result<Self> {
        if beta.is_empty() {
            return Err(Error::invalid("PerToneCoeffs: beta must be non-empty"));
        }
        if let Some(pos) = beta
            .iter()
            .position(|c| !c.re.is_finite() || !c.im.is_finite())
        {
            return Err(Error::invalid(format!(
                "PerToneCoeffs: non-finite coefficient at tone {pos}"
            )));
        }
        Ok(PerToneCoeffs { beta })
    }

    /// The coefficients in tone order.
    pub fn beta(&self) -> &[Complex<f64>] {
        &self.beta
    }

    /// Number of tones.
    pub fn len(&self) -> usize {
        self.beta.len()
    }

    /// True if there are no coefficients (never true for a constructed
    /// value; present for completeness).
    pub fn is_empty(&self) -> bool {
        self.beta.is_empty()
    }
}

/// Per-tone second-order statistics of a scene, measured from a simulated
/// symbol stream with separable noise components. All powers are in DFT-bin
/// units (`E|X(q)|^2` of the unnormalized transform).
#[derive(Debug, Clone)]
pub struct ToneStats {
    /// Alien CM power `E|Z_c(q)|^2`.
    pub i_cm: Vec<f64>,
    /// Alien DM power `E|Z_d(q)|^2`.
    pub i_dm: Vec<f64>,
    /// Uncancellable DM alien power: residual of `Z_d` after projecting
    /// onto `Z_c` per tone.
    pub i_u: Vec<f64>,
    /// CM background-to-alien power ratio `sigma2_vc(q) / I_cm(q)`.
    pub delta: Vec<f64>,
    /// CM background AWGN power per tone.
    pub sigma2_vc: Vec<f64>,
    /// DM background AWGN power per tone.
    pub sigma2_vd: Vec<f64>,
    /// Per-tone coupling coefficient `E{Z_d Z_c*} / E{|Z_c|^2}`.
    pub h_pertone: Vec<Complex<f64>>,
}

impl ToneStats {
    /// Number of tones.
    pub fn p(&self) -> usize {
        self.i_cm.len()
    }
}

/// Streaming accumulator behind [`estimate_beta`].
///
/// Holds per-tone sums of the data-stripped error against the CM spectrum.
/// Partial accumulators over disjoint symbol subsets merge associatively,
/// so long trainings can run in fixed memory or in parallel.
#[derive(Debug, Clone)]
pub struct BetaAccumulator {
    /// Per tone: `sum_s E_s(q) conj(Y_c,s(q))`.
    num: Vec<Complex<f64>>,
    /// Per tone: `sum_s |Y_c,s(q)|^2`.
    den: Vec<f64>,
    /// Per tone: `sum_s |E_s(q)|^2`; closes the in-sample residual without
    /// a second pass.
    err_energy: Vec<f64>,
    count: usize,
}

impl BetaAccumulator {
    /// Empty accumulator for `p` tones.
    pub fn new(p: usize) -> Self {
        BetaAccumulator {
            num: vec![Complex::new(0.0, 0.0); p],
            den: vec![0.0; p],
            err_energy: vec![0.0; p],
            count: 0,
        }
    }

    /// Number of tones.
    pub fn p(&self) -> usize {
        self.den.len()
    }

    /// Number of accumulated symbols.
    pub fn count(&self) -> usize {
        self.count
    }

    /// Accumulates one symbol, stripping the known data contribution
    /// `H_d(q) X(q)` from the DM spectrum.
    pub fn push_record(&mut self, rec: &SymbolRecord, h_d: &Spectrum) -> Result<()> {
        let p = self.p();
        if rec.y_c.len() != p || rec.y_d.len() != p || rec.x.len() != p || h_d.len() != p {
            return Err(Error::invalid(
                "BetaAccumulator: spectra do not match the accumulator's tone count",
            ));
        }
        for q in 0..p {
            let e = rec.y_d.bins()[q] - h_d.bins()[q] * rec.x.bins()[q];
            let y_c = rec.y_c.bins()[q];
            self.num[q] += e * y_c.conj();
            self.den[q] += y_c.norm_sqr();
            self.err_energy[q] += e.norm_sqr();
        }
        self.count += 1;
        Ok(())
    }

    /// Merges another accumulator's sums into this one.
    pub fn merge(&mut self, other: &BetaAccumulator) -> Result<()> {
        if other.p() != self.p() {
            return Err(Error::invalid(
                "BetaAccumulator: cannot merge accumulators with different tone counts",
            ));
        }
        for q in 0..self.p() {
            self.num[q] += other.num[q];
            self.den[q] += other.den[q];
            self.err_energy[q] += other.err_energy[q];
        }
        self.count += other.count;
        Ok(())
    }

    /// Closes the least-squares estimate. Tones whose accumulated CM power
    /// is below [`DEAD_TONE_FLOOR`] get a zero coefficient.
    pub fn coeffs(&self) -> Result<PerToneCoeffs> {
        if self.count == 0 {
            return Err(Error::invalid("BetaAccumulator: no symbols accumulated"));
        }
        let beta = self
            .num
            .iter()
            .zip(&self.den)
            .map(|(n, &d)| {
                if d < DEAD_TONE_FLOOR {
                    Complex::new(0.0, 0.0)
                } else {
                    n / d
                }
            })
            .collect();
        PerToneCoeffs::new(beta)
    }

    /// Mean post-cancellation error power per tone on the accumulated
    /// symbols themselves, using the least-squares identity
    /// `sum |E - beta Y_c|^2 = sum |E|^2 - |sum E Y_c*|^2 / sum |Y_c|^2`.
    pub fn in_sample_residual(&self) -> Result<Vec<f64>> {
        if self.count == 0 {
            return Err(Error::invalid("BetaAccumulator: no symbols accumulated"));
        }
        let k = self.count as f64;
        Ok((0..self.p())
            .map(|q| {
                let explained = if self.den[q] < DEAD_TONE_FLOOR {
                    0.0
                } else {
                    self.num[q].norm_sqr() / self.den[q]
                };
                ((self.err_energy[q] - explained) / k).max(0.0)
            })
            .collect())
    }
}

/// Least-squares per-tone coefficients from a training stream.
///
/// Per tone, `beta(q) = [sum_s E_s(q) Y_c,s*(q)] / [sum_s |Y_c,s(q)|^2]`
/// with `E_s = Y_d,s - H_d X_s` the data-stripped error. Pass zero data
/// spectra (and any `H_d`) for noise-only training. Dead tones get zero.
pub fn estimate_beta(stream: &SymbolStream, h_d: &Spectrum) -> Result<PerToneCoeffs> {
    let mut acc = BetaAccumulator::new(stream.p());
    for rec in stream.symbols() {
        acc.push_record(rec, h_d)?;
    }
    acc.coeffs()
}

/// Subtracts the scaled CM spectrum from the DM spectrum:
/// `out(q) = Y_d(q) - beta(q) Y_c(q)`.
pub fn apply_canceller(y_d: &Spectrum, y_c: &Spectrum, coeffs: &PerToneCoeffs) -> Result<Spectrum> {
    let p = y_d.len();
    if y_c.len() != p || coeffs.len() != p {
        return Err(Error::invalid(format!(
            "apply_canceller: length mismatch (Y_d {p}, Y_c {}, beta {})",
            y_c.len(),
            coeffs.len()
        )));
    }
    let bins = (0..p)
        .map(|q| y_d.bins()[q] - coeffs.beta()[q] * y_c.bins()[q])
        .collect();
    Spectrum::new(bins)
}

fn check_pertone_regime(l: usize, geom: &WindowGeometry) -> Result<()> {
    if geom.t() >= l || l > geom.p() {
        return Err(Error::invalid(format!(
            "per-tone weighting regime requires 0 <= T < L <= P, got T={}, L={l}, P={}",
            geom.t(),
            geom.p()
        )));
    }
    Ok(())
}

/// Analytic per-tone coupling spectrum of a misaligned window (white alien
/// noise), evaluated directly from the defining double sum so it stays an
/// independent reference for the FFT-based paths.
///
/// Requires the regime `0 <= T < L <= P`.
pub fn analytic_h_pertone(coupling: &ImpulseResponse, geom: &WindowGeometry) -> Result<Spectrum> {
    check_pertone_regime(coupling.len(), geom)?;
    let p = geom.p();
    let t = geom.t();
    let pf = p as f64;

    // Per tap: signed delay d = k - T and triangular weight 1 - |d|/P.
    let terms: Vec<(i64, f64)> = coupling
        .taps()
        .iter()
        .enumerate()
        .map(|(k, &tap)| {
            let d = k as i64 - t as i64;
            let weight = 1.0 - d.unsigned_abs() as f64 / pf;
            (d, tap * weight)
        })
        .collect();

    let mut bins = Vec::with_capacity(p);
    for q in 0..p {
        let mut acc = Complex::new(0.0, 0.0);
        for &(d, amp) in &terms {
            // Reduce the phase index modulo P before converting to an
            // angle; d*q stays well inside exact-integer f64 range.
            let phase_idx = (d * q as i64).rem_euclid(p as i64);
            let angle = -2.0 * std::f64::consts::PI * phase_idx as f64 / pf;
            acc += amp * Complex::from_polar(1.0, angle);
        }
        bins.push(acc);
    }
    Spectrum::new(bins)
}

/// Signed distance of tap `k` from the misalignment, and the buffer
/// position it lands on after the cyclic shift by `T`.
fn shifted_position(k: usize, t: usize, p: usize) -> (i64, usize) {
    let d = k as i64 - t as i64;
    let pos = d.rem_euclid(p as i64) as usize;
    (d, pos)
}

/// Time-domain form of the per-tone coupling: the taps cyclically shifted
/// left by `T` into a length-`P` buffer and weighted by `1 - |k-T|/P`.
/// Its DFT equals [`analytic_h_pertone`].
pub fn pertone_response(
    coupling: &ImpulseResponse,
    geom: &WindowGeometry,
) -> Result<ImpulseResponse> {
    check_pertone_regime(coupling.len(), geom)?;
    let p = geom.p();
    let pf = p as f64;
    let mut buf = vec![0.0; p];
    for (k, &tap) in coupling.taps().iter().enumerate() {
        let (d, pos) = shifted_position(k, geom.t(), p);
        buf[pos] = tap * (1.0 - d.unsigned_abs() as f64 / pf);
    }
    ImpulseResponse::new(buf)
}

/// Inverts [`pertone_response`]: divides the weighted positions by their
/// weights and undoes the cyclic shift, returning the `l` coupling taps.
/// The weights are `>= 1 - (L-1)/P > 0`, so the division is always safe.
pub fn recover_coupling(
    pertone_time: &ImpulseResponse,
    geom: &WindowGeometry,
    l: usize,
) -> Result<ImpulseResponse> {
    check_pertone_regime(l, geom)?;
    let p = geom.p();
    if pertone_time.len() != p {
        return Err(Error::invalid(format!(
            "recover_coupling: buffer length {} does not match P={p}",
            pertone_time.len()
        )));
    }
    let pf = p as f64;
    let taps = (0..l)
        .map(|k| {
            let (d, pos) = shifted_position(k, geom.t(), p);
            let weight = 1.0 - d.unsigned_abs() as f64 / pf;
            pertone_time.taps()[pos] / weight
        })
        .collect();
    ImpulseResponse::new(taps)
}

/// Coupling spectrum implied by estimated coefficients:
/// `H(q) = beta(q) (1 + delta(q))`.
pub fn coupling_from_coeffs(coeffs: &PerToneCoeffs, delta: &[f64]) -> Result<Spectrum> {
    if delta.len() != coeffs.len() {
        return Err(Error::invalid(format!(
            "coupling_from_coeffs: {} coefficients but {} delta values",
            coeffs.len(),
            delta.len()
        )));
    }
    if let Some(pos) = delta.iter().position(|d| !d.is_finite() || *d < 0.0) {
        return Err(Error::invalid(format!(
            "coupling_from_coeffs: delta must be finite and non-negative, bad value at tone {pos}"
        )));
    }
    let bins = coeffs
        .beta()
        .iter()
        .zip(delta)
        .map(|(b, d)| b * (1.0 + d))
        .collect();
    Spectrum::new(bins)
}

/// Residual noise power per tone after cancellation with the optimal
/// coefficient (the per-tone lower bound):
///
/// ```text
/// Omega(q) = I_dm (delta/(1+delta))^2 + I_U + sigma2_vd
///          + |H|^2 sigma2_vc / (1+delta)^2
/// ```
pub fn ptlb(stats: &ToneStats) -> Vec<f64> {
    (0..stats.p())
        .map(|q| {
            let delta = stats.delta[q];
            let shrink = delta / (1.0 + delta);
            let fold = 1.0 / ((1.0 + delta) * (1.0 + delta));
            stats.i_dm[q] * shrink * shrink
                + stats.i_u[q]
                + stats.sigma2_vd[q]
                + stats.h_pertone[q].norm_sqr() * stats.sigma2_vc[q] * fold
        })
        .collect()
}

/// Streaming accumulator behind [`measure_tone_stats`]; merges
/// associatively like [`BetaAccumulator`].
#[derive(Debug, Clone)]
pub struct ToneStatsAccumulator {
    /// `sum |Z_c|^2`, `sum |Z_d|^2`, `sum Z_d Z_c*` per tone.
    zc2: Vec<f64>,
    zd2: Vec<f64>,
    cross: Vec<Complex<f64>>,
    /// Background sums: `sum |Y_c - Z_c|^2`, `sum |Y_d - H_d X - Z_d|^2`.
    vc2: Vec<f64>,
    vd2: Vec<f64>,
    count: usize,
}

impl ToneStatsAccumulator {
    /// Empty accumulator for `p` tones.
    pub fn new(p: usize) -> Self {
        ToneStatsAccumulator {
            zc2: vec![0.0; p],
            zd2: vec![0.0; p],
            cross: vec![Complex::new(0.0, 0.0); p],
            vc2: vec![0.0; p],
            vd2: vec![0.0; p],
            count: 0,
        }
    }

    /// Number of tones.
    pub fn p(&self) -> usize {
        self.zc2.len()
    }

    /// Number of accumulated symbols.
    pub fn count(&self) -> usize {
        self.count
    }

    /// Accumulates one symbol; the record must carry alien component
    /// spectra (stats need separable components).
    pub fn push_record(&mut self, rec: &SymbolRecord, h_d: &Spectrum) -> Result<()> {
        let p = self.p();
        let alien = rec.alien.as_ref().ok_or_else(|| {
            Error::invalid("tone stats require simulation-mode streams with separable components")
        })?;
        if rec.y_c.len() != p || h_d.len() != p {
            return Err(Error::invalid(
                "ToneStatsAccumulator: spectra do not match the accumulator's tone count",
            ));
        }
        for q in 0..p {
            let z_c = alien.z_c.bins()[q];
            let z_d = alien.z_d.bins()[q];
            let v_c = rec.y_c.bins()[q] - z_c;
            let v_d = rec.y_d.bins()[q] - h_d.bins()[q] * rec.x.bins()[q] - z_d;
            self.zc2[q] += z_c.norm_sqr();
            self.zd2[q] += z_d.norm_sqr();
            self.cross[q] += z_d * z_c.conj();
            self.vc2[q] += v_c.norm_sqr();
            self.vd2[q] += v_d.norm_sqr();
        }
        self.count += 1;
        Ok(())
    }

    /// Merges another accumulator's sums into this one.
    pub fn merge(&mut self, other: &ToneStatsAccumulator) -> Result<()> {
        if other.p() != self.p() {
            return Err(Error::invalid(
                "ToneStatsAccumulator: cannot merge accumulators with different tone counts",
            ));
        }
        for q in 0..self.p() {
            self.zc2[q] += other.zc2[q];
            self.zd2[q] += other.zd2[q];
            self.cross[q] += other.cross[q];
            self.vc2[q] += other.vc2[q];
            self.vd2[q] += other.vd2[q];
        }
        self.count += other.count;
        Ok(())
    }

    /// Closes the sample-mean statistics. Dead tones (no CM alien energy)
    /// get a zero coupling estimate and zero delta.
    pub fn stats(&self) -> Result<ToneStats> {
        if self.count < 2 {
            return Err(Error::invalid(
                "tone stats need at least 2 symbols for a meaningful sample mean",
            ));
        }
        let k = self.count as f64;
        let p = self.p();
        let mut stats = ToneStats {
            i_cm: vec![0.0; p],
            i_dm: vec![0.0; p],
            i_u: vec![0.0; p],
            delta: vec![0.0; p],
            sigma2_vc: vec![0.0; p],
            sigma2_vd: vec![0.0; p],
            h_pertone: vec![Complex::new(0.0, 0.0); p],
        };
        for q in 0..p {
            stats.i_cm[q] = self.zc2[q] / k;
            stats.i_dm[q] = self.zd2[q] / k;
            stats.sigma2_vc[q] = self.vc2[q] / k;
            stats.sigma2_vd[q] = self.vd2[q] / k;
            if self.zc2[q] < DEAD_TONE_FLOOR {
                // Dead tone: no coupling estimate, all DM alien power is
                // unexplained.
                stats.i_u[q] = stats.i_dm[q];
                continue;
            }
            stats.h_pertone[q] = self.cross[q] / self.zc2[q];
            // Least-squares identity: the projection residual closes from
            // the accumulated sums.
            let explained = self.cross[q].norm_sqr() / self.zc2[q];
            stats.i_u[q] = ((self.zd2[q] - explained) / k).max(0.0);
            stats.delta[q] = stats.sigma2_vc[q] / stats.i_cm[q];
        }
        Ok(stats)
    }
}

/// Per-tone second-order statistics from a simulation-mode stream (records
/// must carry alien component spectra). Needs at least 2 symbols.
pub fn measure_tone_stats(stream: &SymbolStream, h_d: &Spectrum) -> Result<ToneStats> {
    let mut acc = ToneStatsAccumulator::new(stream.p());
    for rec in stream.symbols() {
        acc.push_record(rec, h_d)?;
    }
    acc.stats()
}

/// DFT of one window of a sample stream; convenience for tests and
/// pipelines that frame ad hoc windows.
pub fn window_spectrum(stream: &TimeBlock, start: i64, geom: &WindowGeometry) -> Result<Spectrum> {
    let win = crate::signal::extract_window(stream, start, geom.p())?;
    dft_real(&win, geom)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{simulate, simulate_with, NoiseModel, Scene, SimulateOptions, SymbolRecord};
    use crate::signal::{idft_real, response_spectrum};

    fn geom(p: usize, t: usize) -> WindowGeometry {
        WindowGeometry::new(p, t).unwrap()
    }

    fn spectrum(values: &[(f64, f64)]) -> Spectrum {
        Spectrum::new(
            values
                .iter()
                .map(|&(re, im)| Complex::new(re, im))
                .collect(),
        )
        .unwrap()
    }

    fn noise_scene(p: usize, t: usize, taps: Vec<f64>, sigma2_vc: f64) -> Scene {
        Scene {
            direct: ImpulseResponse::new(vec![1.0]).unwrap(),
            coupling: ImpulseResponse::new(taps).unwrap(),
            sigma2_x: 0.0,
            sigma2_vc,
            sigma2_vd: 0.0,
            noise: NoiseModel::White { sigma2: 1.0 },
            geom: geom(p, t),
            cp_length: 8,
        }
    }

    fn decaying_taps(l: usize) -> Vec<f64> {
        // Dominant leading tap keeps |H(q)| bounded away from zero, so
        // relative per-tone errors stay meaningful.
        (0..l).map(|k| 0.45f64.powi(k as i32)).collect()
    }

    fn rms_relative_error(got: &[Complex<f64>], want: &[Complex<f64>]) -> f64 {
        let sum: f64 = got
            .iter()
            .zip(want)
            .map(|(g, w)| ((g - w).norm() / w.norm()).powi(2))
            .sum();
        (sum / got.len() as f64).sqrt()
    }

    #[test]
    fn single_symbol_estimate_is_the_ratio_form() {
        let y_c = spectrum(&[(1.0, 0.0), (2.0, 1.0), (0.5, -0.5), (0.0, 3.0)]);
        let y_d = spectrum(&[(0.5, 0.5), (-1.0, 2.0), (1.0, 0.0), (2.0, -1.0)]);
        let x = Spectrum::zeros(4);
        let h_d = Spectrum::zeros(4);
        let stream = crate::scene::SymbolStream::new(vec![SymbolRecord {
            y_c: y_c.clone(),
            y_d: y_d.clone(),
            x,
            alien: None,
        }])
        .unwrap();
        let coeffs = estimate_beta(&stream, &h_d).unwrap();
        for q in 0..4 {
            let expected = y_d.bins()[q] / y_c.bins()[q];
            assert!((coeffs.beta()[q] - expected).norm() < 1e-12);
        }
    }

    #[test]
    fn cyclic_training_recovers_the_unweighted_shifted_spectrum() {
        // Period-P alien noise makes the coupling exactly circular, so the
        // estimate equals sum_k h(k) W^{(k-T)q} with no triangular weights.
        let p = 64;
        let t = 9;
        let taps: Vec<f64> = (0..12).map(|k| ((k * 3 + 2) as f64 * 0.53).sin()).collect();
        let scene = noise_scene(p, t, taps.clone(), 0.0);
        let sim = simulate_with(
            &scene,
            4,
            31,
            &SimulateOptions {
                cyclic_noise: true,
                keep_parts: true,
            },
        )
        .unwrap();
        let stream = sim.frame_range(0..4).unwrap();
        let coeffs = estimate_beta(&stream, &Spectrum::zeros(p)).unwrap();

        let h = ImpulseResponse::new(taps).unwrap();
        let h_spec = response_spectrum(&h, p).unwrap();
        for q in 0..p {
            let angle = 2.0 * std::f64::consts::PI * (t * q) as f64 / p as f64;
            let expected = h_spec.bins()[q] * Complex::from_polar(1.0, angle);
            assert!(
                (coeffs.beta()[q] - expected).norm() < 1e-9 * (1.0 + expected.norm()),
                "tone {q}: beta {} != {expected}",
                coeffs.beta()[q]
            );
        }
    }

    #[test]
    fn noise_only_training_converges_to_the_analytic_spectrum() {
        // Small-scale version of the headline consistency check; the
        // full-size run lives in the acceptance suite.
        let p = 256;
        let t = 7;
        let l = 24;
        let scene = noise_scene(p, t, decaying_taps(l), 0.0);
        let sim = simulate(&scene, 4000, 41).unwrap();
        let stream = sim.frame_range(0..4000).unwrap();
        let coeffs = estimate_beta(&stream, &Spectrum::zeros(p)).unwrap();
        let analytic = analytic_h_pertone(&scene.coupling, &scene.geom).unwrap();
        let rms = rms_relative_error(coeffs.beta(), analytic.bins());
        assert!(rms < 0.05, "RMS relative error {rms} >= 5%");
    }

    #[test]
    fn delta_one_halves_the_estimated_coefficients() {
        // CM background power equal to the alien power (delta = 1) shrinks
        // the converged estimate to H/2.
        let p = 256;
        let t = 7;
        let l = 24;
        let scene = noise_scene(p, t, decaying_taps(l), 1.0);
        let sim = simulate(&scene, 20_000, 43).unwrap();
        let stream = sim.frame_range(0..20_000).unwrap();
        let coeffs = estimate_beta(&stream, &Spectrum::zeros(p)).unwrap();
        let analytic = analytic_h_pertone(&scene.coupling, &scene.geom).unwrap();
        let halved: Vec<Complex<f64>> = analytic.bins().iter().map(|b| b / 2.0).collect();
        let rms = rms_relative_error(coeffs.beta(), &halved);
        assert!(rms < 0.03, "RMS relative error {rms} >= 3%");
    }

    #[test]
    fn zero_coefficients_pass_the_dm_spectrum_through() {
        let y_d = spectrum(&[(1.0, 2.0), (3.0, -1.0)]);
        let y_c = spectrum(&[(0.5, 0.5), (1.0, 1.0)]);
        let coeffs = PerToneCoeffs::new(vec![Complex::new(0.0, 0.0); 2]).unwrap();
        let out = apply_canceller(&y_d, &y_c, &coeffs).unwrap();
        assert_eq!(out.bins(), y_d.bins());
    }

    #[test]
    fn constructed_perfect_cancellation_yields_zero() {
        let y_c = spectrum(&[(1.0, 1.0), (2.0, -1.0), (0.5, 0.25)]);
        let beta = vec![
            Complex::new(0.5, -0.5),
            Complex::new(1.5, 0.5),
            Complex::new(-2.0, 1.0),
        ];
        let y_d =
            Spectrum::new(y_c.bins().iter().zip(&beta).map(|(y, b)| y * b).collect()).unwrap();
        let coeffs = PerToneCoeffs::new(beta).unwrap();
        let out = apply_canceller(&y_d, &y_c, &coeffs).unwrap();
        for bin in out.bins() {
            assert!(bin.norm() < 1e-12);
        }
    }

    #[test]
    fn apply_canceller_matches_elementwise_oracle() {
        let y_d = spectrum(&[(1.0, -2.0), (0.3, 0.7), (-1.1, 0.2), (4.0, 4.0)]);
        let y_c = spectrum(&[(0.2, 0.1), (-0.5, 0.5), (1.0, -1.0), (0.0, 2.0)]);
        let beta = vec![
            Complex::new(0.9, 0.1),
            Complex::new(-0.2, 0.4),
            Complex::new(0.0, -1.0),
            Complex::new(1.0, 0.0),
        ];
        let coeffs = PerToneCoeffs::new(beta.clone()).unwrap();
        let out = apply_canceller(&y_d, &y_c, &coeffs).unwrap();
        for (q, b) in beta.iter().enumerate() {
            let expected = y_d.bins()[q] - b * y_c.bins()[q];
            assert!((out.bins()[q] - expected).norm() < 1e-15);
        }
        assert!(apply_canceller(&y_d, &spectrum(&[(1.0, 0.0)]), &coeffs).is_err());
    }

    #[test]
    fn unit_tap_at_the_misalignment_gives_flat_unit_spectrum() {
        let mut taps = vec![0.0; 20];
        taps[13] = 1.0;
        let h = ImpulseResponse::new(taps).unwrap();
        let spec = analytic_h_pertone(&h, &geom(128, 13)).unwrap();
        for bin in spec.bins() {
            assert!((bin - Complex::new(1.0, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn single_tap_zero_shift_gives_constant_spectrum() {
        let h = ImpulseResponse::new(vec![0.7]).unwrap();
        let spec = analytic_h_pertone(&h, &geom(32, 0)).unwrap();
        for bin in spec.bins() {
            assert!((bin - Complex::new(0.7, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn analytic_spectrum_is_conjugate_symmetric() {
        let taps: Vec<f64> = (0..24).map(|k| ((k * 7 + 3) as f64 * 0.31).sin()).collect();
        let h = ImpulseResponse::new(taps).unwrap();
        let spec = analytic_h_pertone(&h, &geom(128, 6)).unwrap();
        assert!(spec.hermitian_deviation() < 1e-10);
    }

    #[test]
    fn weighting_vanishes_as_p_grows() {
        // For P >> L the triangular weights approach 1 and the spectrum
        // approaches the plain shifted DFT, within (L/P) * sum |h|.
        let p = 1 << 16;
        let l = 32;
        let t = 5;
        let taps: Vec<f64> = (0..l).map(|k| ((k + 1) as f64 * 0.73).cos()).collect();
        let abs_sum: f64 = taps.iter().map(|v| v.abs()).sum();
        let h = ImpulseResponse::new(taps.clone()).unwrap();
        let spec = analytic_h_pertone(&h, &geom(p, t)).unwrap();
        let bound = l as f64 / p as f64 * abs_sum;
        // Spot-check a spread of tones; the full P-point scan would just
        // repeat the same bound arithmetic.
        for q in (0..p).step_by(997) {
            let mut plain = Complex::new(0.0, 0.0);
            for (k, &tap) in taps.iter().enumerate() {
                let d = k as i64 - t as i64;
                let phase_idx = (d * q as i64).rem_euclid(p as i64);
                let angle = -2.0 * std::f64::consts::PI * phase_idx as f64 / p as f64;
                plain += tap * Complex::from_polar(1.0, angle);
            }
            let dev = (spec.bins()[q] - plain).norm();
            assert!(
                dev <= bound,
                "tone {q}: deviation {dev} exceeds weighting bound {bound}"
            );
        }
    }

    #[test]
    fn zero_shift_response_scales_taps_in_place() {
        let taps = vec![1.0, 2.0, -1.0, 0.5];
        let h = ImpulseResponse::new(taps.clone()).unwrap();
        let resp = pertone_response(&h, &geom(16, 0)).unwrap();
        for (k, &tap) in taps.iter().enumerate() {
            let expected = tap * (1.0 - k as f64 / 16.0);
            assert!((resp.taps()[k] - expected).abs() < 1e-15);
        }
        for &v in &resp.taps()[4..] {
            assert_eq!(v, 0.0);
        }
    }

    #[test]
    fn weighted_response_round_trips_exactly() {
        let l = 100;
        let t = 37;
        let p = 1024;
        let taps: Vec<f64> = (0..l).map(|k| ((k * 11 + 5) as f64 * 0.17).sin()).collect();
        let h = ImpulseResponse::new(taps.clone()).unwrap();
        let g = geom(p, t);
        let back = recover_coupling(&pertone_response(&h, &g).unwrap(), &g, l).unwrap();
        let worst = back
            .taps()
            .iter()
            .zip(&taps)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(worst < 1e-12, "round-trip error {worst}");
    }

    #[test]
    fn weighted_response_spectrum_matches_the_analytic_form() {
        let l = 48;
        let t = 11;
        let p = 256;
        let taps: Vec<f64> = (0..l).map(|k| ((k * 5 + 1) as f64 * 0.29).cos()).collect();
        let h = ImpulseResponse::new(taps).unwrap();
        let g = geom(p, t);
        let resp = pertone_response(&h, &g).unwrap();
        let via_dft = response_spectrum(&resp, p).unwrap();
        let analytic = analytic_h_pertone(&h, &g).unwrap();
        let scale: f64 = analytic.bins().iter().map(|b| b.norm()).fold(0.0, f64::max);
        for q in 0..p {
            let dev = (via_dft.bins()[q] - analytic.bins()[q]).norm();
            assert!(dev < 1e-10 * scale, "tone {q}: deviation {dev}");
        }

        // And the reverse route: inverse DFT of the analytic spectrum is
        // the weighted buffer.
        let buf = idft_real(&analytic).unwrap();
        let worst = buf
            .samples()
            .iter()
            .zip(resp.taps())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(worst < 1e-9, "IDFT route deviates by {worst}");
    }

    #[test]
    fn regime_violations_are_rejected() {
        let h = ImpulseResponse::new(vec![1.0, 0.5]).unwrap();
        // T >= L
        assert!(analytic_h_pertone(&h, &geom(16, 2)).is_err());
        assert!(pertone_response(&h, &geom(16, 7)).is_err());
        // L > P
        let long = ImpulseResponse::new(vec![0.1; 20]).unwrap();
        assert!(analytic_h_pertone(&long, &geom(16, 0)).is_err());
    }

    #[test]
    fn coupling_from_coeffs_scales_by_one_plus_delta() {
        let beta = vec![Complex::new(1.0, -1.0), Complex::new(0.5, 2.0)];
        let coeffs = PerToneCoeffs::new(beta.clone()).unwrap();
        let same = coupling_from_coeffs(&coeffs, &[0.0, 0.0]).unwrap();
        assert_eq!(same.bins(), coeffs.beta());
        let doubled = coupling_from_coeffs(&coeffs, &[1.0, 1.0]).unwrap();
        for (bin, b) in doubled.bins().iter().zip(&beta) {
            assert!((bin - b * 2.0).norm() < 1e-15);
        }
        assert!(coupling_from_coeffs(&coeffs, &[0.0]).is_err());
        assert!(coupling_from_coeffs(&coeffs, &[0.0, -0.5]).is_err());
    }

    #[test]
    fn ptlb_reduces_to_the_dm_floor_for_perfect_sensors() {
        let stats = ToneStats {
            i_cm: vec![1.0; 4],
            i_dm: vec![2.0; 4],
            i_u: vec![0.0; 4],
            delta: vec![0.0; 4],
            sigma2_vc: vec![0.0; 4],
            sigma2_vd: vec![0.3; 4],
            h_pertone: vec![Complex::new(1.0, 0.5); 4],
        };
        for omega in ptlb(&stats) {
            assert!((omega - 0.3).abs() < 1e-15);
        }
    }

    #[test]
    fn ptlb_approaches_uncancelled_power_for_huge_delta() {
        let delta = 1e9;
        let stats = ToneStats {
            i_cm: vec![1.0],
            i_dm: vec![5.0],
            i_u: vec![0.7],
            delta: vec![delta],
            sigma2_vc: vec![delta], // sigma2_vc = delta * i_cm
            sigma2_vd: vec![0.2],
            h_pertone: vec![Complex::new(2.0, 0.0)],
        };
        let omega = ptlb(&stats)[0];
        // Limit: I_dm + I_U + sigma2_vd; the fold term dies as 1/delta.
        let limit = 5.0 + 0.7 + 0.2;
        assert!(
            (omega - limit).abs() < 1e-6 * limit,
            "omega {omega} != limit {limit}"
        );
    }

    #[test]
    fn ptlb_matches_measured_residual_on_a_white_scene() {
        // Apply the converged optimal coefficient H/(1+delta) built from
        // measured stats and compare the measured residual to the bound.
        let p = 256;
        let t = 6;
        let mut scene = noise_scene(p, t, decaying_taps(20), 0.5);
        scene.sigma2_vd = 0.1;
        let k = 5000;
        let sim = simulate(&scene, k, 47).unwrap();
        let stream = sim.frame_range(0..k).unwrap();
        let h_d = Spectrum::zeros(p);
        let stats = measure_tone_stats(&stream, &h_d).unwrap();

        let beta_opt = PerToneCoeffs::new(
            (0..p)
                .map(|q| stats.h_pertone[q] / (1.0 + stats.delta[q]))
                .collect(),
        )
        .unwrap();
        let mut residual = vec![0.0; p];
        for rec in stream.symbols() {
            let out = apply_canceller(&rec.y_d, &rec.y_c, &beta_opt).unwrap();
            for (slot, bin) in residual.iter_mut().zip(out.bins()) {
                *slot += bin.norm_sqr();
            }
        }
        for slot in residual.iter_mut() {
            *slot /= k as f64;
        }

        let bound = ptlb(&stats);
        let measured_avg: f64 = residual.iter().sum::<f64>() / p as f64;
        let bound_avg: f64 = bound.iter().sum::<f64>() / p as f64;
        let ratio = measured_avg / bound_avg;
        assert!(
            (ratio - 1.0).abs() < 0.05,
            "band-averaged residual/bound = {ratio}, expected within 5%"
        );
    }

    #[test]
    fn cyclic_noise_has_no_unexplained_dm_power() {
        let p = 64;
        let scene = noise_scene(p, 9, decaying_taps(12), 0.0);
        let sim = simulate_with(
            &scene,
            16,
            53,
            &SimulateOptions {
                cyclic_noise: true,
                keep_parts: true,
            },
        )
        .unwrap();
        let stream = sim.frame_range(0..16).unwrap();
        let stats = measure_tone_stats(&stream, &Spectrum::zeros(p)).unwrap();
        for q in 0..p {
            assert!(
                stats.i_u[q] <= 1e-4 * stats.i_dm[q] + 1e-20,
                "tone {q}: I_U {} vs I_dm {}",
                stats.i_u[q],
                stats.i_dm[q]
            );
        }
    }

    #[test]
    fn zero_alien_noise_yields_degenerate_stats() {
        let mut scene = noise_scene(32, 3, vec![1.0, 0.5, 0.25, 0.1], 0.5);
        scene.noise = NoiseModel::White { sigma2: 0.0 };
        scene.sigma2_vd = 0.2;
        let sim = simulate(&scene, 8, 3).unwrap();
        let stream = sim.frame_range(0..8).unwrap();
        let stats = measure_tone_stats(&stream, &Spectrum::zeros(32)).unwrap();
        for q in 0..32 {
            assert_eq!(stats.i_cm[q], 0.0);
            assert_eq!(stats.i_dm[q], 0.0);
            assert_eq!(stats.h_pertone[q], Complex::new(0.0, 0.0));
            assert_eq!(stats.delta[q], 0.0);
            assert!(stats.sigma2_vc[q] > 0.0);
        }
    }

    #[test]
    fn stats_require_component_separation() {
        let scene = noise_scene(32, 3, vec![1.0, 0.5], 0.1);
        let sim = simulate(&scene, 4, 5).unwrap();
        let stream =
            crate::scene::frame(sim.cm(), sim.dm(), &[], &scene.geom, scene.cp_length).unwrap();
        assert!(measure_tone_stats(&stream, &Spectrum::zeros(32)).is_err());
    }

    #[test]
    fn estimation_satisfies_the_orthogonality_conditions() {
        let p = 64;
        let mut scene = noise_scene(p, 5, decaying_taps(10), 0.3);
        scene.sigma2_vd = 0.2;
        let sim = simulate(&scene, 64, 59).unwrap();
        let stream = sim.frame_range(0..64).unwrap();
        let h_d = Spectrum::zeros(p);
        let coeffs = estimate_beta(&stream, &h_d).unwrap();

        let mut corr = vec![Complex::new(0.0, 0.0); p];
        let mut power = vec![0.0; p];
        for rec in stream.symbols() {
            let out = apply_canceller(&rec.y_d, &rec.y_c, &coeffs).unwrap();
            for q in 0..p {
                corr[q] += out.bins()[q] * rec.y_c.bins()[q].conj();
                power[q] += rec.y_c.bins()[q].norm_sqr();
            }
        }
        for q in 0..p {
            assert!(
                corr[q].norm() <= 1e-10 * power[q],
                "tone {q}: residual correlation {} vs power {}",
                corr[q].norm(),
                power[q]
            );
        }
    }

    #[test]
    fn estimation_is_scale_equivariant_in_the_cm_signal() {
        let p = 32;
        let mut scene = noise_scene(p, 3, decaying_taps(8), 0.25);
        scene.sigma2_vd = 0.1;
        let sim = simulate(&scene, 32, 61).unwrap();
        let stream = sim.frame_range(0..32).unwrap();
        let h_d = Spectrum::zeros(p);

        let a = 3.7;
        let scaled_cm = TimeBlock::new(
            sim.cm().samples().iter().map(|v| a * v).collect(),
            sim.cm().start_index(),
        )
        .unwrap();
        let scaled =
            crate::scene::frame(&scaled_cm, sim.dm(), &[], &scene.geom, scene.cp_length).unwrap();

        let coeffs = estimate_beta(&stream, &h_d).unwrap();
        let coeffs_scaled = estimate_beta(&scaled, &h_d).unwrap();
        for q in 0..p {
            let expected = coeffs.beta()[q] / a;
            assert!(
                (coeffs_scaled.beta()[q] - expected).norm() <= 1e-12 * (1.0 + expected.norm()),
                "tone {q}: scaled beta mismatch"
            );
        }

        // Residuals are unchanged by the rescaling.
        for (rec, rec_s) in stream.symbols().iter().zip(scaled.symbols()) {
            let r = apply_canceller(&rec.y_d, &rec.y_c, &coeffs).unwrap();
            let r_s = apply_canceller(&rec_s.y_d, &rec_s.y_c, &coeffs_scaled).unwrap();
            for q in 0..p {
                let dev = (r.bins()[q] - r_s.bins()[q]).norm();
                assert!(dev <= 1e-12 * (1.0 + r.bins()[q].norm()));
            }
        }
    }

    #[test]
    fn in_sample_residual_identity_matches_direct_evaluation() {
        let p = 32;
        let mut scene = noise_scene(p, 3, decaying_taps(8), 0.2);
        scene.sigma2_vd = 0.3;
        let sim = simulate(&scene, 48, 67).unwrap();
        let stream = sim.frame_range(0..48).unwrap();
        let h_d = Spectrum::zeros(p);

        let mut acc = BetaAccumulator::new(p);
        for rec in stream.symbols() {
            acc.push_record(rec, &h_d).unwrap();
        }
        let coeffs = acc.coeffs().unwrap();
        let closed = acc.in_sample_residual().unwrap();

        let mut direct = vec![0.0; p];
        for rec in stream.symbols() {
            let out = apply_canceller(&rec.y_d, &rec.y_c, &coeffs).unwrap();
            for (slot, bin) in direct.iter_mut().zip(out.bins()) {
                *slot += bin.norm_sqr();
            }
        }
        for q in 0..p {
            direct[q] /= stream.len() as f64;
            assert!(
                (closed[q] - direct[q]).abs() <= 1e-10 * (1.0 + direct[q]),
                "tone {q}: closed {} vs direct {}",
                closed[q],
                direct[q]
            );
        }
    }

    #[test]
    fn accumulator_merge_equals_single_pass() {
        let p = 32;
        let scene = noise_scene(p, 3, decaying_taps(8), 0.1);
        let sim = simulate(&scene, 20, 71).unwrap();
        let h_d = Spectrum::zeros(p);

        let whole = sim.frame_range(0..20).unwrap();
        let mut one = BetaAccumulator::new(p);
        for rec in whole.symbols() {
            one.push_record(rec, &h_d).unwrap();
        }

        let mut first = BetaAccumulator::new(p);
        for rec in sim.frame_range(0..7).unwrap().symbols() {
            first.push_record(rec, &h_d).unwrap();
        }
        let mut second = BetaAccumulator::new(p);
        for rec in sim.frame_range(7..20).unwrap().symbols() {
            second.push_record(rec, &h_d).unwrap();
        }
        first.merge(&second).unwrap();

        let a = one.coeffs().unwrap();
        let b = first.coeffs().unwrap();
        for q in 0..p {
            assert!((a.beta()[q] - b.beta()[q]).norm() < 1e-12);
        }
    }
}
