//! Simulation and estimation toolkit for qubit dephasing-noise spectroscopy.
//!
//! The toolkit covers the full measurement chain for pure-dephasing noise:
//!
//! * [`pulses`] — π-pulse sequences, the ±1 switching function they imprint on
//!   the accumulated phase, its Fourier transform, and filter functions.
//! * [`spectra`] — evaluable noise-spectrum models S(ω) plus bath spectral
//!   densities J(ω) and their mappings onto S(ω).
//! * [`coherence`] — the normalized coherence W(t) by three routes: spectral
//!   integral, harmonic-comb asymptotic rate for equidistant sequences, and
//!   the exact product formula for a bath of spins.
//! * [`stochastic`] — Monte Carlo oracle on Ornstein–Uhlenbeck trajectories.
//! * [`estimation`] — coherence-time extraction and spectrum reconstruction
//!   from a coherence-time-vs-pulse-spacing scan.
//!
//! All frequencies are angular (rad/s) and ħ = 1 throughout.

pub mod coherence;
pub mod estimation;
mod fft;
pub mod pulses;
mod quad;
pub mod spectra;
pub mod stochastic;

pub use coherence::{
    asymptotic_rate, coherence_curve, coherence_exponent, coherence_integral, harmonic_rate,
    spin_echo_curve, spin_spin_exact, spin_spin_exact_log, weak_coupling_log, CoherenceCurve,
    CoherenceError, CoherenceOptions, CurvePoint, DecayRate, NoiseSource, DEFAULT_HARMONICS,
};
pub use estimation::{
    fit_spectrum, fit_t2, frequency_bounds, measure_t2l, out_of_range_flags,
    pointwise_reconstruct, t2se_to_s0, FitError, FitOptions, MeasurePolicy, ModelFamily,
    PointEstimate, ReconstructionResult, ScanEntry, T2Estimate, T2Scan, WindowPolicy,
};
pub use pulses::{
    equidistant_filter_sq, filter_function, filter_transform, fourier_coefficients,
    switching_function, FilterSample, PulseSequence, SequenceError, SequenceFamily,
};
pub use spectra::{
    bose_occupation, boson_to_spectrum, spinbath_to_spectrum, BosonBath, NoiseSpectrum,
    SpectralDensity, SpinBath, SpinMode, SpectrumError,
};
pub use stochastic::{
    estimate_spectrum_from_trajectories, generate_ou, mc_coherence, McError, McEstimate,
    OuProcessParams,
};
