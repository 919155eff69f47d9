//! Time-domain FIR Wiener canceller, the reference point the per-tone
//! canceller is compared against.
//!
//! The design is the classic block least-squares one: estimate the CM
//! autocorrelation and the DM/CM cross-correlation over a training record,
//! then solve the regularized normal equations `(R + lambda I) w = p` for
//! the filter taps. Both correlations are the biased full-record estimates
//! (streams treated as zero outside their records and sums divided by the
//! CM record length), which keeps `R` Toeplitz positive semidefinite and
//! the solve O(N^2) by Levinson recursion.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::error::{Error, Result};
use crate::signal::{
    convolve_cyclic_fft, convolve_linear, dft_real, extract_window, ImpulseResponse, TimeBlock,
    WindowGeometry,
};

/// Default diagonal loading as a fraction of the CM power: the design uses
/// `lambda = DEFAULT_LOADING_SCALE * r(0)` when none is given.
pub const DEFAULT_LOADING_SCALE: f64 = 1e-8;

/// A designed FIR canceller: `N_f` taps applied to the CM stream with a
/// lookahead of `delay` samples.
///
/// The taps of a [`design_wiener`] result satisfy the regularized normal
/// equations to a relative residual below `1e-8`.
#[derive(Debug, Clone)]
pub struct WienerDesign {
    /// Filter taps, delay order.
    pub taps: ImpulseResponse,
    /// CM lookahead in samples: tap `k` multiplies `cm(n + delay - k)`.
    pub delay: i64,
    /// Diagonal loading used in the solve.
    pub regularization: f64,
}

impl WienerDesign {
    /// Number of filter taps.
    pub fn len(&self) -> usize {
        self.taps.len()
    }

    /// True if the design has no taps (never true for a constructed
    /// design; present for completeness).
    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }
}

/// Default tap count for cancelling a coupling of `coupling_len` taps with
/// the given lookahead: the next power of two at or above
/// `coupling_len + delay`, so the filter can hold the coupling's full
/// support after the lookahead shift.
pub fn default_filter_len(coupling_len: usize, delay: i64) -> usize {
    (coupling_len + delay.max(0) as usize)
        .next_power_of_two()
        .max(1)
}

/// Correlation sums `c(j) = sum_n a(n) b(n + offset + j)` for
/// `j = 0..lags`, with `n` over `a`'s record and `b` read as zero outside
/// its own record.
///
/// The sum accumulates over fixed-size segments of `a` (each evaluated by
/// FFT) merged in segment order, so the result is independent of how many
/// worker threads run.
fn correlation_sums(a: &TimeBlock, b: &TimeBlock, offset: i64, lags: usize) -> Vec<f64> {
    const SEGMENT: usize = 1 << 14;
    let n_segments = a.len().div_ceil(SEGMENT);

    let run_segment = |seg: usize| -> Vec<f64> {
        let lo = seg * SEGMENT;
        let hi = ((seg + 1) * SEGMENT).min(a.len());
        let a_slice = &a.samples()[lo..hi];
        let alen = hi - lo;

        // b samples needed: absolute [seg_start + offset, seg_end - 1 +
        // offset + lags - 1], zero where outside b's record.
        let b_from = a.start_index() + lo as i64 + offset;
        let blen = alen + lags - 1;
        let fft_len = (alen + blen).next_power_of_two();
        let mut b_vec = vec![0.0; fft_len];
        for (i, slot) in b_vec.iter_mut().enumerate().take(blen) {
            if let Some(v) = b.sample_at(b_from + i as i64) {
                *slot = v;
            }
        }

        let a_rev: Vec<f64> = a_slice.iter().rev().copied().collect();
        let out = convolve_cyclic_fft(&a_rev, &b_vec);
        out[alen - 1..alen - 1 + lags].to_vec()
    };

    if n_segments == 1 {
        return run_segment(0);
    }

    let threads = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .min(n_segments);
    let results: Mutex<Vec<Option<Vec<f64>>>> = Mutex::new(vec![None; n_segments]);
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| loop {
                let seg = next.fetch_add(1, Ordering::Relaxed);
                if seg >= n_segments {
                    break;
                }
                let out = run_segment(seg);
                results.lock().expect("correlation lock")[seg] = Some(out);
            });
        }
    });

    let mut total = vec![0.0; lags];
    for part in results.into_inner().expect("correlation lock") {
        let part = part.expect("every segment scheduled");
        for (acc, v) in total.iter_mut().zip(&part) {
            *acc += v;
        }
    }
    total
}

/// Solves the symmetric Toeplitz system `T x = rhs` with first column `t`
/// by Levinson recursion.
///
/// Fails with a conditioning diagnostic when the prediction-error variance
/// falls to (or below) `1e-12` of `t[0]`, which flags genuinely degenerate
/// input such as an all-zero stream; gradual ill-conditioning is the
/// caller's to handle through diagonal loading.
fn solve_toeplitz(t: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
    let n = t.len();
    let t0 = t[0];
    let floor = 1e-12 * t0.abs();
    if t0 <= floor {
        return Err(Error::IllConditioned {
            order: 0,
            variance: t0,
            floor,
        });
    }

    let mut phi = vec![1.0];
    let mut x = vec![rhs[0] / t0];
    let mut e = t0;
    for m in 1..n {
        let disc: f64 = (0..m).map(|i| phi[i] * t[m - i]).sum();
        let k = -disc / e;
        let prev = phi.clone();
        phi.push(0.0);
        for i in 0..=m {
            let mirrored = if m - i < prev.len() { prev[m - i] } else { 0.0 };
            phi[i] = if i < prev.len() { prev[i] } else { 0.0 } + k * mirrored;
        }
        e *= 1.0 - k * k;
        if e <= floor {
            return Err(Error::IllConditioned {
                order: m,
                variance: e,
                floor,
            });
        }
        let short: f64 = (0..m).map(|i| x[i] * t[m - i]).sum();
        let mu = (rhs[m] - short) / e;
        x.push(0.0);
        for i in 0..=m {
            x[i] += mu * phi[m - i];
        }
    }
    Ok(x)
}

/// Designs the FIR Wiener canceller from a training record.
///
/// `cm` is the CM sensor stream and `dm_error` the DM stream the filter
/// should predict (for noise-only training, the raw DM stream). The filter
/// output at DM index `n` is `sum_k w(k) cm(n + delay - k)`, so `delay`
/// samples of CM lookahead are available to cover a coupling that the CM
/// window leads. `lambda` is the diagonal loading; `None` picks
/// `DEFAULT_LOADING_SCALE` times the CM power. Requires both records to be
/// at least `4 * n_f` samples long.
pub fn design_wiener(
    cm: &TimeBlock,
    dm_error: &TimeBlock,
    n_f: usize,
    delay: i64,
    lambda: Option<f64>,
) -> Result<WienerDesign> {
    if n_f == 0 {
        return Err(Error::invalid("design_wiener: need at least one tap"));
    }
    let shortest = cm.len().min(dm_error.len());
    if 4 * n_f > shortest {
        return Err(Error::invalid(format!(
            "design_wiener: {n_f} taps need records of at least {} samples, got {shortest}",
            4 * n_f
        )));
    }
    if let Some(l) = lambda {
        if !l.is_finite() || l < 0.0 {
            return Err(Error::invalid(format!(
                "design_wiener: lambda must be finite and non-negative, got {l}"
            )));
        }
    }

    let m = cm.len() as f64;
    let r: Vec<f64> = correlation_sums(cm, cm, 0, n_f)
        .iter()
        .map(|v| v / m)
        .collect();
    let lambda = lambda.unwrap_or(DEFAULT_LOADING_SCALE * r[0]);

    let raw = correlation_sums(dm_error, cm, delay - (n_f as i64 - 1), n_f);
    let p: Vec<f64> = (0..n_f).map(|k| raw[n_f - 1 - k] / m).collect();

    let mut t = r;
    t[0] += lambda;
    let w = solve_toeplitz(&t, &p)?;

    // Construction invariant: the solve must satisfy the regularized
    // normal equations tightly.
    let p_norm = p.iter().map(|v| v * v).sum::<f64>().sqrt();
    let res_norm = (0..n_f)
        .map(|i| {
            let row: f64 = (0..n_f)
                .map(|j| t[(i as i64 - j as i64).unsigned_abs() as usize] * w[j])
                .sum();
            let r = row - p[i];
            r * r
        })
        .sum::<f64>()
        .sqrt();
    if res_norm > 1e-8 * p_norm {
        return Err(Error::invalid(format!(
            "design_wiener: normal-equations residual {res_norm:.3e} exceeds 1e-8 of \
             |p| = {p_norm:.3e}; increase the regularization"
        )));
    }

    Ok(WienerDesign {
        taps: ImpulseResponse::new(w)?,
        delay,
        regularization: lambda,
    })
}

/// Runs the canceller over the overlap of the two streams:
/// `residual(n) = dm(n) - sum_k w(k) cm(n + delay - k)`.
///
/// The result keeps absolute indices, covering every DM sample whose full
/// CM regressor window is inside the CM record. Fails when no DM sample
/// has enough CM history and lookahead.
pub fn apply_wiener(design: &WienerDesign, cm: &TimeBlock, dm: &TimeBlock) -> Result<TimeBlock> {
    let n_f = design.len() as i64;
    let delta = design.delay;
    let lo = dm.start_index().max(cm.start_index() + n_f - 1 - delta);
    let hi = (dm.end_index() - 1).min(cm.end_index() - 1 - delta);
    if lo > hi {
        return Err(Error::invalid(format!(
            "apply_wiener: no DM sample in [{}, {}] has {n_f} CM samples of history at \
             lookahead {delta}",
            dm.start_index(),
            dm.end_index()
        )));
    }
    let len = (hi - lo + 1) as usize;

    let full = convolve_linear(&design.taps, cm)?;
    let cancel = extract_window(&full, lo + delta, len)?;
    let wanted = extract_window(dm, lo, len)?;
    let samples: Vec<f64> = wanted
        .samples()
        .iter()
        .zip(cancel.samples())
        .map(|(d, c)| d - c)
        .collect();
    TimeBlock::new(samples, lo)
}

/// Periodogram-averaged residual spectrum on the DM tone grid.
///
/// Frames the record with the DM window placement (window `s` starts at
/// absolute index `s * (P + cp_length)`), averages `|DFT|^2` per tone over
/// every window that lies fully inside the record, and skips partial
/// windows at the edges. Fails when not a single window is covered.
pub fn residual_psd(
    residual: &TimeBlock,
    geom: &WindowGeometry,
    cp_length: usize,
) -> Result<Vec<f64>> {
    let p = geom.p();
    let spacing = (p + cp_length) as i64;
    let mut s = residual.start_index().div_euclid(spacing);
    if s * spacing < residual.start_index() {
        s += 1;
    }
    let s_hi = (residual.end_index() - p as i64).div_euclid(spacing);
    if s > s_hi {
        return Err(Error::invalid(format!(
            "residual_psd: record [{}, {}] does not cover one full {p}-sample window",
            residual.start_index(),
            residual.end_index() - 1
        )));
    }

    let mut acc = vec![0.0; p];
    let mut count = 0.0;
    while s <= s_hi {
        let window = extract_window(residual, s * spacing, p)?;
        let spec = dft_real(&window, geom)?;
        for (slot, bin) in acc.iter_mut().zip(spec.bins()) {
            *slot += bin.norm_sqr();
        }
        count += 1.0;
        s += 1;
    }
    for slot in acc.iter_mut() {
        *slot /= count;
    }
    Ok(acc)
}
