//! Sample-domain and tone-domain primitives.
//!
//! Everything downstream is built on four small types: [`TimeBlock`] (a run
//! of real samples anchored on an absolute sample axis), [`Spectrum`] (one
//! DFT frame of complex bins), [`ImpulseResponse`] (real FIR taps), and
//! [`WindowGeometry`] (DFT size `P` plus the window misalignment `T`).
//!
//! The DFT convention is pinned here once and used everywhere: the forward
//! transform is unnormalized, `X(q) = sum_n x(n) exp(-j 2 pi n q / P)`, and
//! the inverse carries the `1/P` factor. Under this convention the DFT of a
//! real block satisfies `X(P-q) = conj(X(q))`, and [`idft_real`] refuses
//! spectra that break that symmetry instead of silently discarding the
//! imaginary part.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Relative deviation from conjugate symmetry tolerated by [`idft_real`].
pub const HERMITIAN_TOLERANCE: f64 = 1e-6;

/// A contiguous run of real samples with an absolute position.
///
/// `start_index` may be negative: simulated records begin before sample 0 so
/// that windows reaching into the past (cyclic prefix, misaligned
/// common-mode window, filter history) stay inside the record.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeBlock {
    samples: Vec<f64>,
    start_index: i64,
}

impl TimeBlock {
    /// Wraps samples anchored at `start_index`. Rejects empty or non-finite
    /// input.
    pub fn new(samples: Vec<f64>, start_index: i64) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("TimeBlock: samples must be non-empty"));
        }
        if let Some(pos) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "TimeBlock: non-finite sample at offset {pos}"
            )));
        }
        Ok(TimeBlock {
            samples,
            start_index,
        })
    }

    /// The samples in index order.
    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    /// Absolute index of the first sample.
    pub fn start_index(&self) -> i64 {
        self.start_index
    }

    /// Absolute index one past the last sample.
    pub fn end_index(&self) -> i64 {
        self.start_index + self.samples.len() as i64
    }

    /// Number of samples.
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    /// True if the block holds no samples (never true for a constructed
    /// block; present for completeness).
    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Sample at absolute index `n`, or `None` outside the block.
    pub fn sample_at(&self, n: i64) -> Option<f64> {
        if n < self.start_index || n >= self.end_index() {
            None
        } else {
            Some(self.samples[(n - self.start_index) as usize])
        }
    }

    /// Sum of squared samples.
    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|v| v * v).sum()
    }
}

/// One DFT frame of complex bins, bin `q` holding tone `q`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    bins: Vec<Complex<f64>>,
}

impl Spectrum {
    /// Wraps DFT bins. Rejects empty or non-finite input.
    pub fn new(bins: Vec<Complex<f64>>) -> Result<Self> {
        if bins.is_empty() {
            return Err(Error::invalid("Spectrum: bins must be non-empty"));
        }
        if let Some(pos) = bins
            .iter()
            .position(|c| !c.re.is_finite() || !c.im.is_finite())
        {
            return Err(Error::invalid(format!(
                "Spectrum: non-finite bin at index {pos}"
            )));
        }
        Ok(Spectrum { bins })
    }

    /// An all-zero spectrum with `p` bins.
    pub fn zeros(p: usize) -> Self {
        Spectrum {
            bins: vec![Complex::new(0.0, 0.0); p.max(1)],
        }
    }

    /// The bins in tone order.
    pub fn bins(&self) -> &[Complex<f64>] {
        &self.bins
    }

    /// Number of bins (the DFT size `P`).
    pub fn len(&self) -> usize {
        self.bins.len()
    }

    /// True if the spectrum holds no bins (never true for a constructed
    /// spectrum; present for completeness).
    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }

    /// Largest deviation from conjugate symmetry, relative to the largest
    /// bin magnitude. Zero for the DFT of a real block (up to rounding).
    pub fn hermitian_deviation(&self) -> f64 {
        let p = self.bins.len();
        let peak = self.bins.iter().map(|c| c.norm()).fold(0.0f64, f64::max);
        if peak == 0.0 {
            return 0.0;
        }
        let mut worst = 0.0f64;
        for q in 0..p {
            let mirror = self.bins[(p - q) % p].conj();
            let dev = (self.bins[q] - mirror).norm();
            if dev > worst {
                worst = dev;
            }
        }
        worst / peak
    }

    /// Sum of squared bin magnitudes.
    pub fn energy(&self) -> f64 {
        self.bins.iter().map(|c| c.norm_sqr()).sum()
    }
}

/// Real FIR taps, tap `k` multiplying a delay of `k` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpulseResponse {
    taps: Vec<f64>,
}

impl ImpulseResponse {
    /// Wraps taps. Rejects empty or non-finite input.
    pub fn new(taps: Vec<f64>) -> Result<Self> {
        if taps.is_empty() {
            return Err(Error::invalid("ImpulseResponse: taps must be non-empty"));
        }
        if let Some(pos) = taps.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "ImpulseResponse: non-finite tap at index {pos}"
            )));
        }
        Ok(ImpulseResponse { taps })
    }

    /// The taps in delay order.
    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    /// Number of taps.
    pub fn len(&self) -> usize {
        self.taps.len()
    }

    /// True if the response has no taps (never true for a constructed
    /// response; present for completeness).
    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }

    /// Sum of squared taps.
    pub fn energy(&self) -> f64 {
        self.taps.iter().map(|v| v * v).sum()
    }
}

/// DFT size `P` together with the misalignment `T` of the common-mode
/// window: the common-mode DFT window starts `T` samples before the
/// differential-mode window it is paired with.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowGeometry {
    p: usize,
    t: usize,
}

impl WindowGeometry {
    /// Builds a geometry with DFT size `p` and misalignment `t`.
    /// Requires `p >= 2` and `t < p`.
    pub fn new(p: usize, t: usize) -> Result<Self> {
        if p < 2 {
            return Err(Error::invalid(format!(
                "WindowGeometry: P must be at least 2, got {p}"
            )));
        }
        if t >= p {
            return Err(Error::invalid(format!(
                "WindowGeometry: T must satisfy 0 <= T < P, got T={t}, P={p}"
            )));
        }
        Ok(WindowGeometry { p, t })
    }

    /// DFT size.
    pub fn p(&self) -> usize {
        self.p
    }

    /// Window misalignment in samples.
    pub fn t(&self) -> usize {
        self.t
    }

    /// Same DFT size with a different misalignment.
    pub fn with_t(&self, t: usize) -> Result<Self> {
        WindowGeometry::new(self.p, t)
    }
}

/// Cached FFT plans, keyed by size and direction. Plans are immutable and
/// shared; the cache keeps repeated per-symbol transforms cheap.
fn fft_plan(p: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    type PlanCache = Mutex<HashMap<(usize, bool), Arc<dyn Fft<f64>>>>;
    static CACHE: OnceLock<PlanCache> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut map = cache.lock().expect("fft plan cache poisoned");
    map.entry((p, inverse))
        .or_insert_with(|| {
            let mut planner = FftPlanner::new();
            if inverse {
                planner.plan_fft_inverse(p)
            } else {
                planner.plan_fft_forward(p)
            }
        })
        .clone()
}

/// Forward complex FFT of length `p` over a pre-filled buffer, in place.
/// Unnormalized, matching the crate-wide convention.
pub(crate) fn fft_forward_inplace(buf: &mut [Complex<f64>]) {
    fft_plan(buf.len(), false).process(buf);
}

/// Inverse complex FFT over a pre-filled buffer, in place, including the
/// `1/P` factor.
pub(crate) fn fft_inverse_inplace(buf: &mut [Complex<f64>]) {
    let p = buf.len();
    fft_plan(p, true).process(buf);
    let scale = 1.0 / p as f64;
    for c in buf.iter_mut() {
        *c *= scale;
    }
}

/// Forward DFT of one real window.
///
/// Requires `block.len() == geom.p()`. The result has `X(P-q) =
/// conj(X(q))`.
pub fn dft_real(block: &TimeBlock, geom: &WindowGeometry) -> Result<Spectrum> {
    let p = geom.p();
    if block.len() != p {
        return Err(Error::invalid(format!(
            "dft_real: block length {} does not match geometry P={p}",
            block.len()
        )));
    }
    let mut buf: Vec<Complex<f64>> = block
        .samples()
        .iter()
        .map(|&v| Complex::new(v, 0.0))
        .collect();
    fft_forward_inplace(&mut buf);
    Spectrum::new(buf)
}

/// Inverse DFT of a conjugate-symmetric spectrum back to real samples.
///
/// The spectrum must be conjugate-symmetric within
/// [`HERMITIAN_TOLERANCE`] (relative to its largest bin); otherwise the
/// input was not the DFT of a real window and the call fails rather than
/// discarding the imaginary residue. The returned block starts at index 0.
pub fn idft_real(spectrum: &Spectrum) -> Result<TimeBlock> {
    let p = spectrum.len();
    if p < 2 {
        return Err(Error::invalid(format!(
            "idft_real: spectrum must have at least 2 bins, got {p}"
        )));
    }
    let deviation = spectrum.hermitian_deviation();
    if deviation > HERMITIAN_TOLERANCE {
        let worst_bin = worst_hermitian_bin(spectrum);
        return Err(Error::NotHermitian {
            bin: worst_bin,
            deviation,
            tolerance: HERMITIAN_TOLERANCE,
        });
    }
    let mut buf: Vec<Complex<f64>> = spectrum.bins().to_vec();
    fft_inverse_inplace(&mut buf);
    let samples: Vec<f64> = buf.iter().map(|c| c.re).collect();
    TimeBlock::new(samples, 0)
}

fn worst_hermitian_bin(spectrum: &Spectrum) -> usize {
    let p = spectrum.len();
    let bins = spectrum.bins();
    let mut worst = 0.0f64;
    let mut at = 0usize;
    for q in 0..p {
        let dev = (bins[q] - bins[(p - q) % p].conj()).norm();
        if dev > worst {
            worst = dev;
            at = q;
        }
    }
    at
}

/// Copies `len` samples starting at absolute index `start` out of `signal`.
///
/// Fails if the requested range is not fully inside the record, so framing
/// bugs surface as errors instead of implicit zero-padding.
pub fn extract_window(signal: &TimeBlock, start: i64, len: usize) -> Result<TimeBlock> {
    if len == 0 {
        return Err(Error::invalid("extract_window: length must be positive"));
    }
    let end = start + len as i64;
    if start < signal.start_index() || end > signal.end_index() {
        return Err(Error::invalid(format!(
            "extract_window: window [{start}, {end}) outside record [{}, {})",
            signal.start_index(),
            signal.end_index()
        )));
    }
    let off = (start - signal.start_index()) as usize;
    TimeBlock::new(signal.samples()[off..off + len].to_vec(), start)
}

/// Linear convolution `y(n) = sum_k h(k) x(n-k)`, restricted to the output
/// range where the taps are fully covered by `x` (the valid part).
///
/// The result starts at `x.start_index() + h.len() - 1` and has
/// `x.len() - h.len() + 1` samples; `x` must be at least as long as `h`.
/// Short filters run directly; long ones run block-wise through the FFT.
pub fn convolve_linear(h: &ImpulseResponse, x: &TimeBlock) -> Result<TimeBlock> {
    let l = h.len();
    let n = x.len();
    if n < l {
        return Err(Error::invalid(format!(
            "convolve_linear: input length {n} shorter than {l} taps"
        )));
    }
    let out_len = n - l + 1;
    let start = x.start_index() + (l as i64 - 1);
    // Direct evaluation wins for short filters; overlap-save wins once the
    // tap count and block length are both large.
    let direct_cost = l.saturating_mul(out_len);
    let samples = if l <= 64 || direct_cost <= (1 << 22) {
        convolve_valid_direct(h.taps(), x.samples())
    } else {
        convolve_valid_overlap_save(h.taps(), x.samples())
    };
    TimeBlock::new(samples, start)
}

fn convolve_valid_direct(h: &[f64], x: &[f64]) -> Vec<f64> {
    let l = h.len();
    let out_len = x.len() - l + 1;
    let mut out = vec![0.0; out_len];
    for (j, slot) in out.iter_mut().enumerate() {
        // y(j + l - 1) = sum_k h(k) x(j + l - 1 - k)
        let window = &x[j..j + l];
        let mut acc = 0.0;
        for (k, &tap) in h.iter().enumerate() {
            acc += tap * window[l - 1 - k];
        }
        *slot = acc;
    }
    out
}

fn convolve_valid_overlap_save(h: &[f64], x: &[f64]) -> Vec<f64> {
    let l = h.len();
    let out_len = x.len() - l + 1;
    let block = (4 * l).max(4096).next_power_of_two();
    let step = block - l + 1;

    let mut h_spec = vec![Complex::new(0.0, 0.0); block];
    for (k, &tap) in h.iter().enumerate() {
        h_spec[k] = Complex::new(tap, 0.0);
    }
    fft_forward_inplace(&mut h_spec);

    let mut out = vec![0.0; out_len];
    let mut seg = vec![Complex::new(0.0, 0.0); block];
    let mut pos = 0usize;
    while pos < out_len {
        for (j, slot) in seg.iter_mut().enumerate() {
            let idx = pos + j;
            *slot = if idx < x.len() {
                Complex::new(x[idx], 0.0)
            } else {
                Complex::new(0.0, 0.0)
            };
        }
        fft_forward_inplace(&mut seg);
        for (s, hh) in seg.iter_mut().zip(h_spec.iter()) {
            *s *= hh;
        }
        fft_inverse_inplace(&mut seg);
        // Entries l-1 .. block are free of circular wrap and equal the
        // linear convolution at outputs pos .. pos+step.
        let take = step.min(out_len - pos);
        for j in 0..take {
            out[pos + j] = seg[l - 1 + j].re;
        }
        pos += take;
    }
    out
}

/// Cyclic convolution of `h` with one window of length `p`:
/// `y(n) = sum_k h(k) x((n - k) mod p)`.
///
/// This is the plain reference evaluation (cost `p * h.len()`); it exists
/// so FFT-based paths elsewhere can be checked against it. Requires
/// `x.len() == p` and `h.len() <= p`. The result keeps `x`'s start index.
pub fn convolve_cyclic(h: &ImpulseResponse, x: &TimeBlock, p: usize) -> Result<TimeBlock> {
    if x.len() != p {
        return Err(Error::invalid(format!(
            "convolve_cyclic: window length {} does not match P={p}",
            x.len()
        )));
    }
    if h.len() > p {
        return Err(Error::invalid(format!(
            "convolve_cyclic: {} taps exceed window length P={p}",
            h.len()
        )));
    }
    let xs = x.samples();
    let mut out = vec![0.0; p];
    for (n, slot) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (k, &tap) in h.taps().iter().enumerate() {
            let idx = (n + p - k) % p;
            acc += tap * xs[idx];
        }
        *slot = acc;
    }
    TimeBlock::new(out, x.start_index())
}

/// Frequency response of `h` on a `p`-point tone grid: the DFT of the taps
/// zero-padded to length `p`. Requires `h.len() <= p`.
pub fn response_spectrum(h: &ImpulseResponse, p: usize) -> Result<Spectrum> {
    if h.len() > p {
        return Err(Error::invalid(format!(
            "response_spectrum: {} taps exceed DFT size {p}",
            h.len()
        )));
    }
    let mut buf = vec![Complex::new(0.0, 0.0); p];
    for (k, &tap) in h.taps().iter().enumerate() {
        buf[k] = Complex::new(tap, 0.0);
    }
    fft_forward_inplace(&mut buf);
    Spectrum::new(buf)
}

/// Cyclic convolution through the FFT; used internally where the tap count
/// makes the direct form too slow. Checked against [`convolve_cyclic`] in
/// tests.
pub(crate) fn convolve_cyclic_fft(h: &[f64], x: &[f64]) -> Vec<f64> {
    let p = x.len();
    debug_assert!(h.len() <= p);
    let mut hx = vec![Complex::new(0.0, 0.0); p];
    for (k, &tap) in h.iter().enumerate() {
        hx[k] = Complex::new(tap, 0.0);
    }
    let mut xx: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    fft_forward_inplace(&mut hx);
    fft_forward_inplace(&mut xx);
    for (a, b) in xx.iter_mut().zip(hx.iter()) {
        *a *= b;
    }
    fft_inverse_inplace(&mut xx);
    xx.iter().map(|c| c.re).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// O(P^2) DFT straight from the defining sum; the oracle all FFT-backed
    /// paths are checked against.
    fn dft_naive(samples: &[f64]) -> Vec<Complex<f64>> {
        let p = samples.len();
        (0..p)
            .map(|q| {
                let mut acc = Complex::new(0.0, 0.0);
                for (n, &v) in samples.iter().enumerate() {
                    let angle = -2.0 * std::f64::consts::PI * (n * q) as f64 / p as f64;
                    acc += v * Complex::from_polar(1.0, angle);
                }
                acc
            })
            .collect()
    }

    fn block(samples: Vec<f64>) -> TimeBlock {
        TimeBlock::new(samples, 0).unwrap()
    }

    fn geom(p: usize) -> WindowGeometry {
        WindowGeometry::new(p, 0).unwrap()
    }

    fn max_bin_dev(a: &Spectrum, b: &[Complex<f64>]) -> f64 {
        a.bins()
            .iter()
            .zip(b.iter())
            .map(|(x, y)| (x - y).norm())
            .fold(0.0, f64::max)
    }

    #[test]
    fn dft_of_unit_impulse_is_flat() {
        let mut samples = vec![0.0; 16];
        samples[0] = 1.0;
        let spec = dft_real(&block(samples), &geom(16)).unwrap();
        for bin in spec.bins() {
            assert!((bin - Complex::new(1.0, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn dft_of_constant_concentrates_at_dc() {
        let spec = dft_real(&block(vec![1.0; 16]), &geom(16)).unwrap();
        assert!((spec.bins()[0] - Complex::new(16.0, 0.0)).norm() < 1e-12);
        for bin in &spec.bins()[1..] {
            assert!(bin.norm() < 1e-12);
        }
    }

    #[test]
    fn dft_matches_naive_oracle() {
        let samples: Vec<f64> = (0..16).map(|n| ((n * n + 3) as f64 * 0.37).sin()).collect();
        let spec = dft_real(&block(samples.clone()), &geom(16)).unwrap();
        let oracle = dft_naive(&samples);
        assert!(max_bin_dev(&spec, &oracle) < 1e-10);
    }

    #[test]
    fn idft_of_flat_spectrum_is_impulse() {
        let spec = Spectrum::new(vec![Complex::new(1.0, 0.0); 16]).unwrap();
        let time = idft_real(&spec).unwrap();
        assert_eq!(time.start_index(), 0);
        assert!((time.samples()[0] - 1.0).abs() < 1e-12);
        for &v in &time.samples()[1..] {
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn idft_rejects_non_hermitian_spectrum() {
        let mut bins = vec![Complex::new(1.0, 0.0); 8];
        bins[1] = Complex::new(0.0, 1.0); // mirror bin 7 stays (1, 0)
        let err = idft_real(&Spectrum::new(bins).unwrap()).unwrap_err();
        match err {
            Error::NotHermitian { deviation, .. } => assert!(deviation > 1e-3),
            other => panic!("expected NotHermitian, got {other:?}"),
        }
    }

    #[test]
    fn extract_window_reaches_negative_indices() {
        let samples: Vec<f64> = (0..20).map(|n| n as f64).collect();
        let record = TimeBlock::new(samples, -8).unwrap();
        let win = extract_window(&record, -3, 5).unwrap();
        assert_eq!(win.start_index(), -3);
        assert_eq!(win.samples(), &[5.0, 6.0, 7.0, 8.0, 9.0]);
    }

    #[test]
    fn extract_window_rejects_out_of_range() {
        let record = TimeBlock::new(vec![0.0; 10], 0).unwrap();
        assert!(extract_window(&record, -1, 4).is_err());
        assert!(extract_window(&record, 8, 4).is_err());
    }

    #[test]
    fn identity_filter_passes_signal_through() {
        let h = ImpulseResponse::new(vec![1.0]).unwrap();
        let x = block((0..10).map(|n| n as f64).collect());
        let y = convolve_linear(&h, &x).unwrap();
        assert_eq!(y.start_index(), 0);
        assert_eq!(y.samples(), x.samples());
    }

    #[test]
    fn linear_convolution_valid_part_tracks_start_index() {
        let h = ImpulseResponse::new(vec![0.0, 1.0]).unwrap(); // one-sample delay
        let x = TimeBlock::new(vec![1.0, 2.0, 3.0, 4.0], 10).unwrap();
        let y = convolve_linear(&h, &x).unwrap();
        assert_eq!(y.start_index(), 11);
        assert_eq!(y.samples(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn overlap_save_matches_direct_convolution() {
        // Force the FFT path with a tap count above the direct threshold.
        let l = 90;
        let n = 50_000;
        let h_taps: Vec<f64> = (0..l).map(|k| ((k * 7 + 1) as f64 * 0.61).sin()).collect();
        let x: Vec<f64> = (0..n)
            .map(|i| ((i * 13 + 5) as f64 * 0.043).cos())
            .collect();
        let fast = convolve_valid_overlap_save(&h_taps, &x);
        let slow = convolve_valid_direct(&h_taps, &x);
        let worst = fast
            .iter()
            .zip(slow.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(worst < 1e-9, "overlap-save deviates by {worst:.3e}");
    }

    #[test]
    fn cyclic_convolution_with_delayed_impulse_rotates_window() {
        let h = ImpulseResponse::new(vec![0.0, 0.0, 1.0]).unwrap();
        let x = block(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
        let y = convolve_cyclic(&h, &x, 8).unwrap();
        assert_eq!(y.samples(), &[7.0, 8.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn cyclic_fft_helper_matches_reference() {
        let h: Vec<f64> = (0..37).map(|k| ((k + 2) as f64 * 0.29).sin()).collect();
        let x: Vec<f64> = (0..128)
            .map(|n| ((n * 3 + 1) as f64 * 0.11).cos())
            .collect();
        let fast = convolve_cyclic_fft(&h, &x);
        let reference = convolve_cyclic(&ImpulseResponse::new(h).unwrap(), &block(x), 128).unwrap();
        let worst = fast
            .iter()
            .zip(reference.samples().iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(worst < 1e-10);
    }

    #[test]
    fn response_spectrum_matches_naive_padded_dft() {
        let taps = vec![0.5, -0.25, 0.125, 1.0, -0.7];
        let h = ImpulseResponse::new(taps.clone()).unwrap();
        let spec = response_spectrum(&h, 32).unwrap();
        let mut padded = taps;
        padded.resize(32, 0.0);
        assert!(max_bin_dev(&spec, &dft_naive(&padded)) < 1e-10);
    }

    #[test]
    fn constructors_reject_degenerate_input() {
        assert!(TimeBlock::new(vec![], 0).is_err());
        assert!(TimeBlock::new(vec![f64::NAN], 0).is_err());
        assert!(Spectrum::new(vec![]).is_err());
        assert!(ImpulseResponse::new(vec![f64::INFINITY]).is_err());
        assert!(WindowGeometry::new(1, 0).is_err());
        assert!(WindowGeometry::new(8, 8).is_err());
    }

    proptest! {
        #[test]
        fn roundtrip_recovers_samples(
            samples in proptest::collection::vec(-1e3f64..1e3, 2..96)
        ) {
            let p = samples.len();
            let spec = dft_real(&block(samples.clone()), &geom(p)).unwrap();
            let back = idft_real(&spec).unwrap();
            for (a, b) in samples.iter().zip(back.samples()) {
                prop_assert!((a - b).abs() < 1e-9 * (1.0 + a.abs()));
            }
        }

        #[test]
        fn parseval_energy_identity(
            samples in proptest::collection::vec(-1e3f64..1e3, 2..96)
        ) {
            let p = samples.len();
            let time_energy: f64 = samples.iter().map(|v| v * v).sum();
            let spec = dft_real(&block(samples), &geom(p)).unwrap();
            let freq_energy = spec.energy();
            let scale = 1.0 + time_energy.abs() * p as f64;
            prop_assert!(
                (freq_energy - p as f64 * time_energy).abs() < 1e-9 * scale
            );
        }

        #[test]
        fn dft_of_real_block_is_conjugate_symmetric(
            samples in proptest::collection::vec(-1e3f64..1e3, 2..96)
        ) {
            let p = samples.len();
            let spec = dft_real(&block(samples), &geom(p)).unwrap();
            prop_assert!(spec.hermitian_deviation() < 1e-12);
        }

        #[test]
        fn dft_is_linear(
            pair in proptest::collection::vec((-100f64..100.0, -100f64..100.0), 4..48),
            a in -4f64..4.0,
            b in -4f64..4.0,
        ) {
            let p = pair.len();
            let x: Vec<f64> = pair.iter().map(|(u, _)| *u).collect();
            let y: Vec<f64> = pair.iter().map(|(_, v)| *v).collect();
            let mixed: Vec<f64> = x.iter().zip(&y).map(|(u, v)| a * u + b * v).collect();
            let sx = dft_real(&block(x), &geom(p)).unwrap();
            let sy = dft_real(&block(y), &geom(p)).unwrap();
            let sm = dft_real(&block(mixed), &geom(p)).unwrap();
            for q in 0..p {
                let expect = a * sx.bins()[q] + b * sy.bins()[q];
                prop_assert!((sm.bins()[q] - expect).norm() < 1e-8);
            }
        }

        #[test]
        fn cyclic_convolution_matches_bin_products(
            taps in proptest::collection::vec(-2f64..2.0, 1..8),
            x in proptest::collection::vec(-10f64..10.0, 16..33),
        ) {
            let p = x.len();
            prop_assume!(taps.len() <= p);
            let h = ImpulseResponse::new(taps).unwrap();
            let y = convolve_cyclic(&h, &block(x.clone()), p).unwrap();
            let hx = response_spectrum(&h, p).unwrap();
            let xx = dft_real(&block(x), &geom(p)).unwrap();
            let products: Vec<Complex<f64>> = hx
                .bins()
                .iter()
                .zip(xx.bins())
                .map(|(a, b)| a * b)
                .collect();
            let yy = dft_real(&y, &geom(p)).unwrap();
            for (bin, product) in yy.bins().iter().zip(&products) {
                prop_assert!((bin - product).norm() < 1e-8);
            }
        }
    }
}
