//! Scans the uncancellable energy over every candidate CM window lead for
//! a long synthetic coupling and prints the U-shaped profile around the
//! optimum.

use cmcancel::default_synthetic_coupling;
use cmcancel::misalign::optimize_misalignment;
use cmcancel::scene::AutocorrSequence;

fn main() -> cmcancel::Result<()> {
    let coupling = default_synthetic_coupling();
    let p = 8192;
    let acf = AutocorrSequence::new(vec![1.0])?;
    let scan = optimize_misalignment(&coupling, p, &acf, 0..coupling.len())?;

    println!(
        "scanned {} candidates for a {}-tap coupling at P = {p}",
        scan.energy_by_t.len(),
        coupling.len()
    );
    println!("t_opt = {}", scan.t_opt);
    println!();
    println!("   T        xi(T)");
    for t in [0, 150, 300, 450, 525, 570, 590, 600, 610, 630, 675, 699] {
        let xi = scan.energy_at(t).expect("scan covers 0..L");
        let marker = if t == scan.t_opt { "  <- optimum" } else { "" };
        println!("{t:>4}   {xi:>12.6}{marker}");
    }
    let xi_opt = scan.energy_at(scan.t_opt).unwrap();
    let xi_edge = scan
        .energy_at(0)
        .unwrap()
        .min(scan.energy_at(coupling.len() - 1).unwrap());
    println!();
    println!(
        "interior minimum: xi({}) = {xi_opt:.6} vs best edge {xi_edge:.6}",
        scan.t_opt
    );
    Ok(())
}
