//! Designs the time-domain FIR reference canceller on a simulated scene
//! and compares its residual spectrum with the per-tone canceller trained
//! on the same data.

use cmcancel::misalign::optimize_misalignment;
use cmcancel::pertone::BetaAccumulator;
use cmcancel::scene::{autocorr_of, simulate, NoiseModel, Scene};
use cmcancel::signal::{response_spectrum, ImpulseResponse, WindowGeometry};
use cmcancel::wiener::{apply_wiener, default_filter_len, design_wiener, residual_psd};

fn main() -> cmcancel::Result<()> {
    let p = 256;
    let l = 12;
    let taps: Vec<f64> = (0..l)
        .map(|k| if k % 2 == 0 { 1.0 } else { -0.8 } * 0.85f64.powi(k as i32))
        .collect();
    let noise = NoiseModel::White { sigma2: 1.0 };
    let scene = Scene {
        direct: ImpulseResponse::new(vec![1.0])?,
        coupling: ImpulseResponse::new(taps)?,
        sigma2_x: 0.0,
        sigma2_vc: 0.0,
        sigma2_vd: 0.01,
        noise: noise.clone(),
        geom: WindowGeometry::new(p, 3)?,
        cp_length: 16,
    };

    let n_symbols = 2000;
    let sim = simulate(&scene, n_symbols, 31)?;
    let acf = autocorr_of(&noise, 0)?;
    let t_opt = optimize_misalignment(&scene.coupling, p, &acf, 0..l)?.t_opt;

    // Per-tone canceller trained at the optimal window lead.
    let h_d = response_spectrum(&scene.direct, p)?;
    let mut acc = BetaAccumulator::new(p);
    for rec in sim.frame_range_at(0..n_symbols, t_opt)?.symbols() {
        acc.push_record(rec, &h_d)?;
    }
    let pertone = acc.in_sample_residual()?;

    // Time-domain reference: one FIR filter on the raw CM stream, delayed
    // by the same lead, with the default length and loading.
    let delay = t_opt as i64;
    let n_f = default_filter_len(l, delay);
    let design = design_wiener(sim.cm(), sim.dm(), n_f, delay, None)?;
    let residual = apply_wiener(&design, sim.cm(), sim.dm())?;
    let td = residual_psd(&residual, &scene.geom, scene.cp_length)?;
    println!(
        "wiener reference: {n_f} taps, delay {delay}, loading {:.3e}",
        design.regularization
    );

    let band = 1..p / 2;
    let db = |v: f64| 10.0 * v.log10();
    let mut gaps: Vec<f64> = band.map(|q| db(pertone[q]) - db(td[q])).collect();
    gaps.sort_unstable_by(|a, b| a.total_cmp(b));
    let median = gaps[gaps.len() / 2];
    println!("per-tone vs time-domain residual, band median gap: {median:.2} dB");
    println!(
        "dm background floor per tone: {:.2} dB",
        db(p as f64 * scene.sigma2_vd)
    );
    for q in [1usize, 32, 64, 100, 127] {
        println!(
            "tone {q:>3}: per-tone {:>7.2} dB, time-domain {:>7.2} dB",
            db(pertone[q]),
            db(td[q])
        );
    }
    Ok(())
}
