//! Runs the post-training window adjustment on an exactly estimated
//! coupling: feeds the pipeline a stream whose least-squares solution is
//! the analytic per-tone spectrum, then watches it identify the training
//! lead, recover the taps, and move the window to the optimum.

use cmcancel::misalign::post_training_adjust;
use cmcancel::pertone::analytic_h_pertone;
use cmcancel::scene::{AutocorrSequence, SymbolRecord, SymbolStream};
use cmcancel::signal::{ImpulseResponse, Spectrum, WindowGeometry};
use num_complex::Complex;

fn main() -> cmcancel::Result<()> {
    let p = 1024;
    let t_training = 11;
    let geom = WindowGeometry::new(p, t_training)?;
    let taps: Vec<f64> = (0..48)
        .map(|k| if k % 2 == 0 { 0.9 } else { -0.7 } * 0.94f64.powi(k))
        .collect();
    let coupling = ImpulseResponse::new(taps)?;

    // One synthetic record with Y_c = 1 on every tone and Y_d equal to the
    // misaligned coupling spectrum makes the least-squares estimate exact,
    // isolating the adjustment logic from estimation noise.
    let ones = Spectrum::new(vec![Complex::new(1.0, 0.0); p])?;
    let record = SymbolRecord {
        y_c: ones.clone(),
        y_d: analytic_h_pertone(&coupling, &geom)?,
        x: Spectrum::zeros(p),
        alien: None,
    };
    let stream = SymbolStream::new(vec![record])?;

    let acf = AutocorrSequence::new(vec![1.0])?;
    let delta = vec![0.0; p];
    let report = post_training_adjust(&stream, &ones, &delta, &acf, 0.99999)?;

    println!("identified training lead: {}", report.t_training);
    println!("identified coupling length: {}", report.coupling.len());
    println!("optimal lead: {}", report.t_opt);
    println!(
        "window shift: {} samples",
        report.t_opt as i64 - report.t_training as i64
    );

    let xi_at = |t: usize| {
        report
            .energy_by_t
            .iter()
            .find(|&&(c, _)| c == t)
            .map(|&(_, xi)| xi)
            .unwrap()
    };
    println!(
        "xi: {:.6} at the training lead -> {:.6} at the optimum",
        xi_at(report.t_training),
        xi_at(report.t_opt)
    );

    let worst_tap = report
        .coupling
        .taps()
        .iter()
        .zip(coupling.taps())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    println!("worst recovered-tap error: {worst_tap:.2e}");

    let new = report.new_coeffs.beta();
    println!(
        "new coefficients ready to load: {} tones, |beta(1)| = {:.4}",
        new.len(),
        new[1].norm()
    );
    Ok(())
}
