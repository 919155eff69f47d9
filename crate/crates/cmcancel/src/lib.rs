//! Per-tone cancellation of common-mode-coupled alien noise in DMT
//! receivers.
//!
//! A DMT receiver that taps both the differential-mode (DM) signal and the
//! common-mode (CM) signal on the same pair can subtract a scaled copy of
//! each CM tone from the corresponding DM tone after the DFT. Because the
//! alien noise reaches the DM port through a long coupling response while
//! the data path is protected by its cyclic prefix, the effective per-tone
//! coupling depends on how the CM DFT window is placed relative to the DM
//! window. This crate provides:
//!
//! * [`signal`]: sample blocks, spectra, impulse responses, the pinned DFT
//!   convention, and convolution routines;
//! * [`scene`]: noise models, loop scenes, the time-domain simulator, and
//!   per-symbol framing into DFT frames;
//! * [`pertone`]: per-tone coefficient estimation, the analytic coupling
//!   spectrum for a misaligned window, the weighted time-domain form of the
//!   per-tone response, and the post-cancellation noise-floor bound;
//! * [`misalign`]: the window-misalignment residual (which part of the
//!   alien noise no per-tone canceller can remove), its closed-form energy,
//!   Monte-Carlo cross-checks, misalignment optimization, and the
//!   post-training window adjustment;
//! * [`wiener`]: a regularized FIR Wiener canceller as the time-domain
//!   reference point;
//! * [`experiment`]: JSON-configured experiment pipelines behind the
//!   `cmcancel` binary (`sweep-xi`, `compare`, `adjust`, `ingest`).
//!
//! The `examples/` directory walks each capability end to end.

pub mod error;
pub mod experiment;
pub mod misalign;
pub mod pertone;
pub mod scene;
pub mod signal;
pub mod wiener;

pub use error::{Error, Result};
pub use experiment::{
    default_synthetic_coupling, run_adjust, run_compare, run_ingest, run_sweep_xi,
    synthetic_coupling, tone_power_spectrum, CliOverrides, ExperimentConfig, LoadedConfig,
};
pub use misalign::{
    optimize_misalignment, post_training_adjust, residual_signal, shifted_taps,
    uncancellable_energy, uncancellable_energy_mc, uncancellable_energy_mc_with,
    uncancellable_energy_white, uncancellable_signal, weighting_gap_bound, AdjustmentReport,
    McOptions, MisalignmentScan, MonteCarloEnergy, UncancellableEnergy,
};
pub use pertone::{
    analytic_h_pertone, apply_canceller, coupling_from_coeffs, estimate_beta, measure_tone_stats,
    pertone_response, ptlb, recover_coupling, BetaAccumulator, PerToneCoeffs, ToneStats,
    ToneStatsAccumulator,
};
pub use scene::{
    autocorr_of, frame, generate_noise, simulate, simulate_with, AutocorrSequence, NoiseModel,
    Scene, Simulation, SymbolStream,
};
pub use signal::{dft_real, idft_real, ImpulseResponse, Spectrum, TimeBlock, WindowGeometry};
pub use wiener::{apply_wiener, default_filter_len, design_wiener, residual_psd, WienerDesign};
