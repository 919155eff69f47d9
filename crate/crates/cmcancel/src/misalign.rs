//! Window-misalignment analysis: the part of the alien noise no per-tone
//! canceller can remove, its closed-form energy, Monte-Carlo cross-checks,
//! the misalignment optimizer, and the post-training window adjustment.
//!
//! With the CM window leading the DM window by `T` samples, the alien DM
//! component inside one DM window is a linear convolution of the coupling
//! with the CM noise, while any per-tone canceller can only subtract a
//! cyclic convolution of the windowed CM samples. The difference is the
//! uncancellable signal `d(n)`; it lives at the window edges and its
//! expected energy per symbol, `xi(h, T)`, is what the misalignment
//! optimizer minimizes.

use std::ops::Range;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::pertone::{
    coupling_from_coeffs, estimate_beta, pertone_response, recover_coupling, PerToneCoeffs,
};
use crate::scene::{model_samples, AutocorrSequence, NoiseModel, SymbolStream};
use crate::signal::{
    convolve_cyclic_fft, idft_real, response_spectrum, ImpulseResponse, Spectrum, TimeBlock,
    WindowGeometry,
};

/// Closed-form uncancellable energy per DMT symbol, broken down by window
/// edge.
///
/// `start_terms[m-1]` is the Toeplitz quadratic form of the tail vector
/// `(h(T+m), ..., h(L-1))` for `m = 1..L-T-1`; `end_terms[t]` is the form
/// of the head vector `(h(0), ..., h(t))` for `t = 0..T-1`. The total also
/// subtracts the correlation terms at lags near `P`, so
/// `total = 2 (sum(start_terms) + sum(end_terms))` holds exactly only when
/// the autocorrelation vanishes near lag `P` (always true for white noise).
#[derive(Debug, Clone)]
pub struct UncancellableEnergy {
    /// Expected energy of `d(n)` summed over one DMT symbol.
    pub total: f64,
    /// Window-start contributions (tail vectors), before the factor 2.
    pub start_terms: Vec<f64>,
    /// Window-end contributions (head vectors), before the factor 2.
    pub end_terms: Vec<f64>,
}

/// Monte-Carlo estimate of the mean residual energy per symbol.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonteCarloEnergy {
    /// Sample mean of `sum_n r(n)^2` across symbols.
    pub mean: f64,
    /// Standard error of the mean.
    pub std_error: f64,
    /// Number of symbols the estimate used.
    pub symbols: usize,
}

/// Options for [`uncancellable_energy_mc_with`].
#[derive(Debug, Clone, Copy, Default)]
pub struct McOptions {
    /// Worker threads; 0 picks the available parallelism. The result is
    /// bit-identical for every thread count.
    pub threads: usize,
    /// Tile each symbol's noise periodically (period `P`) and cancel with
    /// the exact cyclic-case taps; the residual is then identically zero,
    /// which exercises the machinery end to end.
    pub cyclic_override: bool,
}

/// Result of an exhaustive misalignment scan.
#[derive(Debug, Clone)]
pub struct MisalignmentScan {
    /// Candidate with the smallest closed-form energy (smallest index on
    /// ties).
    pub t_opt: usize,
    /// `(T, xi)` for every evaluated candidate, ascending in `T`.
    pub energy_by_t: Vec<(usize, f64)>,
}

impl MisalignmentScan {
    /// Energy at a candidate, if it was evaluated.
    pub fn energy_at(&self, t: usize) -> Option<f64> {
        self.energy_by_t
            .binary_search_by_key(&t, |&(c, _)| c)
            .ok()
            .map(|i| self.energy_by_t[i].1)
    }
}

/// Everything the post-training adjustment pipeline identified.
#[derive(Debug, Clone)]
pub struct AdjustmentReport {
    /// Misalignment identified from the trained coefficients, in the
    /// canonical reading (see [`post_training_adjust`]).
    pub t_training: usize,
    /// Recovered coupling taps; their count is the identified length.
    pub coupling: ImpulseResponse,
    /// Optimizer output over candidates `0..coupling.len()`.
    pub t_opt: usize,
    /// Scan map from the optimizer run.
    pub energy_by_t: Vec<(usize, f64)>,
    /// Coefficients for the shifted window, ready to load.
    pub new_coeffs: PerToneCoeffs,
}

fn check_regime(l: usize, geom: &WindowGeometry) -> Result<()> {
    if geom.t() >= l || l > geom.p() {
        return Err(Error::invalid(format!(
            "misalignment analysis requires 0 <= T < L <= P, got T={}, L={l}, P={}",
            geom.t(),
            geom.p()
        )));
    }
    Ok(())
}

/// The uncancellable signal `d(n)` over one DM window, `n = 0..P-1`.
///
/// `z_c` is the alien CM noise on DM-window-local indices: index 0 is the
/// first DM window sample, the CM window occupies `[-T, P-T-1]`, and the
/// block must cover `[-(L-1), P-1]`. Nonzero only near the window edges:
///
/// ```text
/// d(n) = sum_{k=T+1}^{L-1-n} (z_c(-k) - z_c(P-k)) h(k+n)      0 <= n <= L-T-2
/// d(n) = sum_{k=0}^{n-(P-T)} (z_c(n-k) - z_c(n-k-P)) h(k)     P-T <= n <= P-1
/// d(n) = 0                                                     otherwise
/// ```
///
/// which equals the in-window linear convolution minus the cyclic
/// convolution with the periodized CM window (the form any per-tone
/// multiplier produces); tests hold the two routes together.
pub fn uncancellable_signal(
    z_c: &TimeBlock,
    coupling: &ImpulseResponse,
    geom: &WindowGeometry,
) -> Result<TimeBlock> {
    let l = coupling.len();
    check_regime(l, geom)?;
    let p = geom.p();
    let t = geom.t();
    let hist = -(l as i64 - 1);
    if z_c.start_index() > hist || z_c.end_index() < p as i64 {
        return Err(Error::invalid(format!(
            "uncancellable_signal: z_c must cover [{hist}, {}], got [{}, {}]",
            p as i64 - 1,
            z_c.start_index(),
            z_c.end_index() - 1
        )));
    }
    let h = coupling.taps();
    let z = |i: i64| z_c.sample_at(i).expect("coverage validated above");

    let mut d = vec![0.0; p];
    for (n, slot) in d.iter_mut().enumerate().take((l - t).saturating_sub(1)) {
        let mut acc = 0.0;
        for k in (t + 1)..=(l - 1 - n) {
            acc += (z(-(k as i64)) - z((p - k) as i64)) * h[k + n];
        }
        *slot = acc;
    }
    for (n, slot) in d.iter_mut().enumerate().skip(p - t) {
        let mut acc = 0.0;
        for (k, &tap) in h.iter().enumerate().take(n - (p - t) + 1) {
            acc += (z((n - k) as i64) - z(n as i64 - k as i64 - p as i64)) * tap;
        }
        *slot = acc;
    }
    TimeBlock::new(d, 0)
}

/// Unweighted shifted layout of the coupling taps: tap `k` at position
/// `(k - T) mod P`. This is the exact cyclic-case canceller in time.
pub fn shifted_taps(coupling: &ImpulseResponse, geom: &WindowGeometry) -> Result<ImpulseResponse> {
    check_regime(coupling.len(), geom)?;
    let p = geom.p();
    let mut buf = vec![0.0; p];
    for (k, &tap) in coupling.taps().iter().enumerate() {
        let pos = (k as i64 - geom.t() as i64).rem_euclid(p as i64) as usize;
        buf[pos] = tap;
    }
    ImpulseResponse::new(buf)
}

/// The full post-cancellation residual over one DM window:
/// `r(n) = d(n) + sum_k (h_shifted(k) - pertone_time(k)) ztilde(n-k)`,
/// with `ztilde` the period-`P` extension of the CM window and the
/// convolution cyclic. `pertone_time` is the canceller's time-domain form,
/// normally [`pertone_response`] of the same coupling.
pub fn residual_signal(
    z_c: &TimeBlock,
    coupling: &ImpulseResponse,
    pertone_time: &ImpulseResponse,
    geom: &WindowGeometry,
) -> Result<TimeBlock> {
    let p = geom.p();
    if pertone_time.len() != p {
        return Err(Error::invalid(format!(
            "residual_signal: canceller buffer length {} does not match P={p}",
            pertone_time.len()
        )));
    }
    let d = uncancellable_signal(z_c, coupling, geom)?;

    let shifted = shifted_taps(coupling, geom)?;
    let diff: Vec<f64> = shifted
        .taps()
        .iter()
        .zip(pertone_time.taps())
        .map(|(a, b)| a - b)
        .collect();
    if diff.iter().all(|&v| v == 0.0) {
        return Ok(d);
    }

    let t = geom.t();
    let ztilde: Vec<f64> = (0..p)
        .map(|n| {
            let idx = if n < p - t {
                n as i64
            } else {
                n as i64 - p as i64
            };
            z_c.sample_at(idx).expect("coverage validated above")
        })
        .collect();
    let mismatch = convolve_cyclic_fft(&diff, &ztilde);
    let r: Vec<f64> = d
        .samples()
        .iter()
        .zip(&mismatch)
        .map(|(a, b)| a + b)
        .collect();
    TimeBlock::new(r, 0)
}

/// `v' R v` with `R` the Toeplitz autocorrelation matrix, evaluated along
/// diagonals so short autocorrelations cost `O(len)`.
fn toeplitz_form(v: &[f64], acf: &AutocorrSequence) -> f64 {
    let n = v.len();
    let mut acc = acf.at(0) * v.iter().map(|x| x * x).sum::<f64>();
    for tau in 1..=acf.max_lag().min(n - 1) {
        let c: f64 = (0..n - tau).map(|i| v[i] * v[i + tau]).sum();
        acc += 2.0 * acf.at(tau) * c;
    }
    acc
}

/// `v' P v` with `P[i][j] = r(p + j - i)`: the correlation terms at lags
/// near the symbol length. Zero unless the autocorrelation reaches that
/// far.
fn near_p_form(v: &[f64], acf: &AutocorrSequence, p: usize) -> f64 {
    let n = v.len() as i64;
    if acf.max_lag() + v.len() <= p {
        return 0.0;
    }
    let mut acc = 0.0;
    for delta in -(n - 1)..=(n - 1) {
        let arg = p as i64 + delta;
        if arg < 0 || arg as usize > acf.max_lag() {
            continue;
        }
        let shift = delta.unsigned_abs() as usize;
        let c: f64 = (0..v.len() - shift).map(|i| v[i] * v[i + shift]).sum();
        acc += acf.at(arg as usize) * c;
    }
    acc
}

/// Closed-form uncancellable energy for wide-sense stationary noise with
/// the given autocorrelation.
pub fn uncancellable_energy(
    coupling: &ImpulseResponse,
    geom: &WindowGeometry,
    acf: &AutocorrSequence,
) -> Result<UncancellableEnergy> {
    let l = coupling.len();
    check_regime(l, geom)?;
    let h = coupling.taps();
    let t = geom.t();
    let p = geom.p();

    let mut start_terms = Vec::with_capacity(l - t - 1);
    let mut correction = 0.0;
    for m in 1..(l - t) {
        let v = &h[t + m..];
        start_terms.push(toeplitz_form(v, acf));
        correction += near_p_form(v, acf, p);
    }
    let mut end_terms = Vec::with_capacity(t);
    for tt in 0..t {
        let v = &h[..=tt];
        end_terms.push(toeplitz_form(v, acf));
        correction += near_p_form(v, acf, p);
    }
    let total =
        2.0 * (start_terms.iter().sum::<f64>() + end_terms.iter().sum::<f64>() - correction);
    Ok(UncancellableEnergy {
        total,
        start_terms,
        end_terms,
    })
}

/// White-noise fast path: the quadratic forms collapse to suffix and
/// prefix cumulative tap energies, `O(L)` in total.
pub fn uncancellable_energy_white(
    coupling: &ImpulseResponse,
    geom: &WindowGeometry,
    sigma2: f64,
) -> Result<UncancellableEnergy> {
    let l = coupling.len();
    check_regime(l, geom)?;
    if !sigma2.is_finite() || sigma2 < 0.0 {
        return Err(Error::invalid(
            "uncancellable_energy_white: sigma2 must be finite and non-negative",
        ));
    }
    let h = coupling.taps();
    let t = geom.t();

    let mut suffix = vec![0.0; l + 1];
    for j in (0..l).rev() {
        suffix[j] = suffix[j + 1] + h[j] * h[j];
    }
    let start_terms: Vec<f64> = (1..(l - t)).map(|m| sigma2 * suffix[t + m]).collect();

    let mut end_terms = Vec::with_capacity(t);
    let mut prefix = 0.0;
    for &tap in h.iter().take(t) {
        prefix += tap * tap;
        end_terms.push(sigma2 * prefix);
    }

    let total = 2.0 * (start_terms.iter().sum::<f64>() + end_terms.iter().sum::<f64>());
    Ok(UncancellableEnergy {
        total,
        start_terms,
        end_terms,
    })
}

/// Upper bound on the gap `|E[sum_n r(n)^2] - xi|` left open because the
/// closed form omits the weighting-mismatch part of the residual. The
/// bound is the mismatch term's exact total energy plus a Cauchy-Schwarz
/// bound on its cross terms with `d(n)`; Monte-Carlo tolerances add it to
/// their sampling error.
pub fn weighting_gap_bound(
    coupling: &ImpulseResponse,
    geom: &WindowGeometry,
    acf: &AutocorrSequence,
    xi: f64,
) -> Result<f64> {
    let l = coupling.len();
    check_regime(l, geom)?;
    let p = geom.p() as i64;
    let t = geom.t() as i64;
    let pf = p as f64;

    // Mismatch taps: position `(k-T) mod P` and weight `(|k-T|/P) h(k)`.
    let entries: Vec<(i64, f64)> = coupling
        .taps()
        .iter()
        .enumerate()
        .map(|(k, &tap)| {
            let d = k as i64 - t;
            (d.rem_euclid(p), tap * d.unsigned_abs() as f64 / pf)
        })
        .collect();

    // Covariance of the periodized CM window at DM-local indices.
    let win_cov = |a: i64, b: i64| -> f64 {
        let a0 = (a + t).rem_euclid(p) - t;
        let b0 = (b + t).rem_euclid(p) - t;
        acf.at((a0 - b0).unsigned_abs() as usize)
    };

    // Total mismatch energy over the window: summing E[ztilde(a) ztilde(a -
    // delta)] over one full period gives (P-delta) r(delta) + delta r(P-delta).
    let mut total_m = 0.0;
    for &(pos_i, w_i) in &entries {
        for &(pos_j, w_j) in &entries {
            let delta = (pos_j - pos_i).rem_euclid(p);
            let df = delta as f64;
            total_m += w_i
                * w_j
                * ((pf - df) * acf.at(delta as usize) + df * acf.at((p - delta) as usize));
        }
    }

    // Mismatch energy restricted to d(n)'s support, for the cross terms.
    let support = (0..(l as i64 - t - 1)).chain((p - t)..p);
    let mut supp_m = 0.0;
    for n in support {
        let mut e = 0.0;
        for &(pos_i, w_i) in &entries {
            for &(pos_j, w_j) in &entries {
                e += w_i * w_j * win_cov(n - pos_i, n - pos_j);
            }
        }
        supp_m += e.max(0.0);
    }

    Ok(total_m.max(0.0) + 2.0 * (xi.max(0.0) * supp_m).sqrt())
}

/// Monte-Carlo estimate of the mean residual energy per symbol with
/// default options.
pub fn uncancellable_energy_mc(
    coupling: &ImpulseResponse,
    geom: &WindowGeometry,
    model: &NoiseModel,
    n_symbols: usize,
    seed: u64,
) -> Result<MonteCarloEnergy> {
    uncancellable_energy_mc_with(
        coupling,
        geom,
        model,
        n_symbols,
        seed,
        &McOptions::default(),
    )
}

/// Monte-Carlo estimate of `E[sum_n r(n)^2]` per symbol.
///
/// Each symbol draws an independent noise stretch from its own generator
/// sub-stream and runs [`residual_signal`] with the coupling's per-tone
/// canceller. Symbols are processed in fixed batches whose accumulators
/// merge in batch order, so the estimate is identical for any thread
/// count. Needs at least 100 symbols.
pub fn uncancellable_energy_mc_with(
    coupling: &ImpulseResponse,
    geom: &WindowGeometry,
    model: &NoiseModel,
    n_symbols: usize,
    seed: u64,
    options: &McOptions,
) -> Result<MonteCarloEnergy> {
    let l = coupling.len();
    check_regime(l, geom)?;
    model.validate()?;
    if n_symbols < 100 {
        return Err(Error::invalid(format!(
            "uncancellable_energy_mc: need at least 100 symbols, got {n_symbols}"
        )));
    }
    let p = geom.p();
    let canceller = if options.cyclic_override {
        shifted_taps(coupling, geom)?
    } else {
        pertone_response(coupling, geom)?
    };
    let threads = if options.threads == 0 {
        std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1)
    } else {
        options.threads
    };

    const BATCH: usize = 64;
    // Per batch: symbol count, energy sum, energy sum of squares.
    type BatchMoments = Result<(usize, f64, f64)>;
    let n_batches = n_symbols.div_ceil(BATCH);
    let results: Mutex<Vec<Option<BatchMoments>>> =
        Mutex::new((0..n_batches).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    let hist = l as i64 - 1;
    // Spacing between symbol anchors keeps cyclostationary models rotating
    // through their phases.
    let span = (p + l) as i64;

    let run_batch = |batch: usize| -> Result<(usize, f64, f64)> {
        let lo = batch * BATCH;
        let hi = ((batch + 1) * BATCH).min(n_symbols);
        let mut count = 0usize;
        let mut mean = 0.0;
        let mut m2 = 0.0;
        for k in lo..hi {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            let anchor = k as i64 * span;
            let z = if options.cyclic_override {
                let period = model_samples(model, anchor, p, &mut rng);
                let samples: Vec<f64> = (-hist..p as i64)
                    .map(|i| period[i.rem_euclid(p as i64) as usize])
                    .collect();
                TimeBlock::new(samples, -hist)?
            } else {
                let samples = model_samples(model, anchor, (hist + p as i64) as usize, &mut rng);
                TimeBlock::new(samples, -hist)?
            };
            let r = residual_signal(&z, coupling, &canceller, geom)?;
            let e: f64 = r.samples().iter().map(|v| v * v).sum();
            count += 1;
            let delta = e - mean;
            mean += delta / count as f64;
            m2 += delta * (e - mean);
        }
        Ok((count, mean, m2))
    };

    std::thread::scope(|scope| {
        for _ in 0..threads.min(n_batches) {
            scope.spawn(|| loop {
                let batch = next.fetch_add(1, Ordering::Relaxed);
                if batch >= n_batches {
                    break;
                }
                let out = run_batch(batch);
                results.lock().expect("accumulator lock")[batch] = Some(out);
            });
        }
    });

    let mut count = 0usize;
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for slot in results.into_inner().expect("accumulator lock") {
        let (c, batch_mean, batch_m2) = slot.expect("every batch scheduled")?;
        if c == 0 {
            continue;
        }
        let delta = batch_mean - mean;
        let total = count + c;
        m2 += batch_m2 + delta * delta * (count as f64 * c as f64 / total as f64);
        mean += delta * c as f64 / total as f64;
        count = total;
    }
    let variance = if count > 1 {
        m2 / (count - 1) as f64
    } else {
        0.0
    };
    Ok(MonteCarloEnergy {
        mean,
        std_error: (variance / count as f64).sqrt(),
        symbols: count,
    })
}

/// Exhaustive closed-form scan over candidate misalignments.
///
/// Candidates must lie in `[0, L-1]`. For white noise (autocorrelation
/// with no lags beyond 0) the whole scan costs `O(L)` through shared
/// cumulative tap energies. Ties break toward the smaller candidate.
/// Scaling the coupling scales every energy by the square and leaves the
/// winner unchanged.
pub fn optimize_misalignment(
    coupling: &ImpulseResponse,
    p: usize,
    acf: &AutocorrSequence,
    candidates: Range<usize>,
) -> Result<MisalignmentScan> {
    let l = coupling.len();
    if candidates.is_empty() {
        return Err(Error::invalid(
            "optimize_misalignment: empty candidate range",
        ));
    }
    if candidates.end > l {
        return Err(Error::invalid(format!(
            "optimize_misalignment: candidates must lie in [0, {}], got end {}",
            l - 1,
            candidates.end - 1
        )));
    }
    if l > p {
        return Err(Error::invalid(format!(
            "optimize_misalignment: {l} taps exceed the window length P={p}"
        )));
    }

    let energy_by_t: Vec<(usize, f64)> = if acf.max_lag() == 0 {
        let sigma2 = acf.at(0);
        let h = coupling.taps();
        // cum_suffix[j] = sum_{j' >= j} sum_{a >= j'} h(a)^2
        let mut cum_suffix = vec![0.0; l + 1];
        let mut suffix = 0.0;
        for j in (0..l).rev() {
            suffix += h[j] * h[j];
            cum_suffix[j] = cum_suffix[j + 1] + suffix;
        }
        // cum_prefix[t] = sum_{t' < t} sum_{a <= t'} h(a)^2
        let mut cum_prefix = vec![0.0; l + 1];
        let mut prefix = 0.0;
        for (a, &tap) in h.iter().enumerate() {
            prefix += tap * tap;
            cum_prefix[a + 1] = cum_prefix[a] + prefix;
        }
        candidates
            .map(|t| (t, 2.0 * sigma2 * (cum_suffix[t + 1] + cum_prefix[t])))
            .collect()
    } else {
        let mut rows = Vec::with_capacity(candidates.len());
        for t in candidates {
            let geom = WindowGeometry::new(p, t)?;
            rows.push((t, uncancellable_energy(coupling, &geom, acf)?.total));
        }
        rows
    };

    let mut t_opt = energy_by_t[0].0;
    let mut best = energy_by_t[0].1;
    for &(t, xi) in &energy_by_t[1..] {
        if xi < best {
            best = xi;
            t_opt = t;
        }
    }
    Ok(MisalignmentScan { t_opt, energy_by_t })
}

/// Shortest cyclic contiguous span holding at least `target` of the tap
/// energy; returns `(start, len)`. Ties prefer the span whose canonical
/// window reading has the smaller misalignment, then the smaller start.
fn shortest_energy_span(energies: &[f64], target: f64) -> (usize, usize) {
    let p = energies.len();
    let mut prefix = vec![0.0; 2 * p + 1];
    for i in 0..2 * p {
        prefix[i + 1] = prefix[i] + energies[i % p];
    }
    let canonical_t = |start: usize, len: usize| if start + len > p { p - start } else { 0 };

    let mut best = (p, 0usize, 0usize); // (len, t, start)
    let mut right = 1usize;
    for left in 0..p {
        if right < left + 1 {
            right = left + 1;
        }
        while prefix[right] - prefix[left] < target && right < left + p {
            right += 1;
        }
        if prefix[right] - prefix[left] < target {
            continue;
        }
        let len = right - left;
        let key = (len, canonical_t(left, len), left);
        if key < best {
            best = key;
        }
    }
    (best.2, best.0)
}

fn hermitian_symmetrized(spec: &Spectrum) -> Result<Spectrum> {
    let p = spec.len();
    let b = spec.bins();
    let bins = (0..p)
        .map(|q| {
            let mirror = b[if q == 0 { 0 } else { p - q }].conj();
            (b[q] + mirror) * 0.5
        })
        .collect();
    Spectrum::new(bins)
}

/// Post-training window adjustment: identifies the coupling and the
/// training misalignment from estimated coefficients, finds the optimal
/// misalignment, and produces coefficients for the shifted window.
///
/// Pipeline: estimate per-tone coefficients from the stream, scale them to
/// the coupling spectrum by `1 + delta(q)`, take the inverse DFT (after
/// forcing exact conjugate symmetry, which the estimate satisfies up to
/// rounding), localize the energy to the shortest cyclic span holding
/// `energy_fraction` of it, read off `(T, L)` in the canonical form
/// (spans wrapping the buffer end map to `T = P - start`; plain spans map
/// to `T = 0` with the lead absorbed into the coupling, which describes
/// the same physical response), invert the per-tone weighting to recover
/// the taps, scan all candidate misalignments, and rebuild coefficients
/// at the winner.
///
/// The CM DFT window should then move by `t_opt - t_training` samples.
/// Rejects couplings whose energy span reaches `P/2` as too diffuse to
/// localize.
pub fn post_training_adjust(
    stream: &SymbolStream,
    h_d: &Spectrum,
    delta: &[f64],
    acf: &AutocorrSequence,
    energy_fraction: f64,
) -> Result<AdjustmentReport> {
    if !(energy_fraction > 0.0 && energy_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "post_training_adjust: energy_fraction must lie in (0, 1), got {energy_fraction}"
        )));
    }
    let p = stream.p();
    let coeffs = estimate_beta(stream, h_d)?;
    let spectrum = hermitian_symmetrized(&coupling_from_coeffs(&coeffs, delta)?)?;
    let buffer = idft_real(&spectrum)?;

    let energies: Vec<f64> = buffer.samples().iter().map(|v| v * v).collect();
    let total: f64 = energies.iter().sum();
    if total <= 0.0 {
        return Err(Error::invalid(
            "post_training_adjust: estimated coupling has no energy to localize",
        ));
    }
    let (start, span) = shortest_energy_span(&energies, energy_fraction * total);
    if 2 * span >= p {
        return Err(Error::DiffuseCoupling {
            fraction: energy_fraction,
            span,
            p,
        });
    }
    let (t_training, l_hat) = if start + span > p {
        (p - start, span)
    } else {
        (0, start + span)
    };

    let geom_trg = WindowGeometry::new(p, t_training)?;
    let pertone_time = ImpulseResponse::new(buffer.samples().to_vec())?;
    let coupling = recover_coupling(&pertone_time, &geom_trg, l_hat)?;

    let scan = optimize_misalignment(&coupling, p, acf, 0..l_hat)?;
    let geom_opt = WindowGeometry::new(p, scan.t_opt)?;
    let new_spectrum = response_spectrum(&pertone_response(&coupling, &geom_opt)?, p)?;
    let new_coeffs = PerToneCoeffs::new(
        new_spectrum
            .bins()
            .iter()
            .zip(delta)
            .map(|(b, d)| b / (1.0 + d))
            .collect(),
    )?;

    Ok(AdjustmentReport {
        t_training,
        coupling,
        t_opt: scan.t_opt,
        energy_by_t: scan.energy_by_t,
        new_coeffs,
    })
}
