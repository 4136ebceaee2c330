//! Normalized coherence W(t) of a dephasing qubit under a pulse sequence.
//!
//! Three evaluation routes:
//!
//! * [`coherence_integral`] — the spectral integral
//!   `W = exp(−(1/2π) ∫_0^∞ S(ω)|f̃_t(ω)|² dω)`, valid for Gaussian noise.
//! * [`asymptotic_rate`] — the harmonic-comb decay rate of an equidistant
//!   train in the large-pulse-number limit,
//!   `1/T2L = (4/π²) Σ_l S((2l+1)π/2τ)/(2l+1)²`.
//! * [`spin_spin_exact`] — the exact product `W = ∏_j |cos θ_j|` for a bath
//!   of spins, valid at any coupling.
//!
//! The spectral integral splits off the high-frequency plateau of S, which
//! integrates exactly to `plateau·t/2` (Parseval), and treats only the
//! decaying remainder numerically on panels aligned to the filter-function
//! oscillation (width π/t in ω). Truncation uses the rigorous pointwise bound
//! `|f̃(ω)|² ≤ (2n+2)²/ω²` together with each model's analytic tail mass, so
//! a converged result carries an exponent error below the requested
//! tolerance and non-convergence is an explicit failure.

use crate::pulses::{
    equidistant_filter_sq, filter_function, filter_transform, PulseSequence, SequenceError,
    SequenceFamily,
};
use crate::quad;
use crate::spectra::{NoiseSpectrum, SpinBath};
use rayon::prelude::*;
use std::f64::consts::PI;
use thiserror::Error;

/// Default harmonic cutoff for comb sums; the weights (2l+1)^−2 make
/// anything beyond a few tens of harmonics a bookkeeping correction.
pub const DEFAULT_HARMONICS: usize = 25;

#[derive(Debug, Error, PartialEq)]
pub enum CoherenceError {
    #[error("quadrature needs more than the budgeted {budget} panels to bound the tail")]
    QuadratureBudget { budget: usize },
    #[error("quadrature failed to reach the requested exponent tolerance")]
    QuadratureAccuracy,
    #[error("operation requires an equidistant sequence family, got `{0}`")]
    NonEquidistant(&'static str),
    #[error("harmonic cutoff must be at least 1")]
    ZeroHarmonics,
    #[error("pulse-count list must be nonempty and strictly increasing")]
    BadPulseList,
    #[error("pulse-spacing list must be nonempty and strictly increasing")]
    BadTauList,
    #[error(transparent)]
    Sequence(#[from] SequenceError),
}

/// Controls for the spectral-integral evaluator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoherenceOptions {
    /// Absolute tolerance on the decay exponent χ = −ln W.
    pub abs_tol: f64,
    /// Budget of Gauss–Kronrod evaluations (also caps the aligned panel count).
    pub max_panels: usize,
}

impl Default for CoherenceOptions {
    fn default() -> Self {
        Self {
            abs_tol: 1e-8,
            max_panels: 2_000_000,
        }
    }
}

/// Decay exponent χ(t) = −ln W(t) for an arbitrary pulse sequence.
///
/// Equidistant timing is detected and dispatched to the O(1) filter form
/// with comb-aware truncation; irregular sequences use the generic
/// closed-form transform.
pub fn coherence_exponent(
    seq: &PulseSequence,
    s: &NoiseSpectrum,
    opts: &CoherenceOptions,
) -> Result<f64, CoherenceError> {
    if let Some(tau) = seq.equidistant_half_spacing() {
        return equidistant_exponent(tau, seq.pulse_count(), s, opts);
    }
    exponent_with(
        |w| filter_function(seq, w),
        seq.readout_time(),
        seq.pulse_count(),
        None,
        s,
        opts,
    )
}

/// χ(t) for an equidistant train, using the O(1) closed-form filter.
pub(crate) fn equidistant_exponent(
    tau: f64,
    n: usize,
    s: &NoiseSpectrum,
    opts: &CoherenceOptions,
) -> Result<f64, CoherenceError> {
    let t = 2.0 * n as f64 * tau;
    exponent_with(
        |w| equidistant_filter_sq(tau, n, w),
        t,
        n,
        Some(tau),
        s,
        opts,
    )
}

/// Truncation bound for the one-sided integral past `omega`, from the
/// pointwise envelope `|f̃(ω)|² ≤ (2n+2)²/ω²`.
fn envelope_tail(s: &NoiseSpectrum, omega: f64, n_pulses: usize) -> f64 {
    let amp = (2 * n_pulses + 2) as f64;
    amp * amp / (2.0 * PI * omega * omega) * s.tail_integral_bound(omega)
}

/// Comb-aware truncation bound for equidistant trains: each harmonic
/// interval `φ = ωτ ∈ [kπ, (k+1)π]` carries `∫ (sin nμ / sin μ)² dμ = nπ`
/// of filter weight, so with a spectrum non-increasing past `omega`
///
/// `χ_tail ≤ (8nτ/π²) Σ_{k≥k0} S_dec(kπ/τ)/k²`.
///
/// Tighter than the pointwise envelope by roughly a factor n.
fn comb_tail(s: &NoiseSpectrum, omega: f64, tau: f64, n_pulses: usize) -> f64 {
    let k0 = (omega * tau / PI).floor() as usize;
    if k0 < 2 {
        return f64::INFINITY;
    }
    let plateau = s.plateau();
    let k_end = 4 * k0 + 64;
    let mut sum = 0.0;
    for k in k0..k_end {
        let w = k as f64 * PI / tau;
        sum += (s.eval(w) - plateau) / (k * k) as f64;
    }
    let omega_end = k_end as f64 * PI / tau;
    let remainder = (s.eval(omega_end) - plateau)
        + tau / PI * s.tail_integral_bound(omega_end);
    sum += remainder / (k_end * k_end) as f64;
    8.0 * n_pulses as f64 * tau / (PI * PI) * sum
}

fn exponent_with<F: Fn(f64) -> f64>(
    ff: F,
    total_time: f64,
    n_pulses: usize,
    equidistant_tau: Option<f64>,
    s: &NoiseSpectrum,
    opts: &CoherenceOptions,
) -> Result<f64, CoherenceError> {
    let plateau_part = 0.5 * s.plateau() * total_time;
    if s.tail_integral_bound(0.0) == 0.0 {
        // no decaying component (flat spectrum): the Parseval part is exact
        return Ok(plateau_part);
    }
    let tol = opts.abs_tol;
    // two filter oscillations per panel; refinement handles sharp features
    let width = 4.0 * PI / total_time;
    let tail_at = |omega: f64| -> f64 {
        let envelope = envelope_tail(s, omega, n_pulses);
        match (equidistant_tau, s.monotone_tail_start()) {
            (Some(tau), Some(start)) if omega >= start => {
                envelope.min(comb_tail(s, omega, tau, n_pulses))
            }
            _ => envelope,
        }
    };
    let mut n_panels = 1usize;
    loop {
        if tail_at(n_panels as f64 * width) <= 0.5 * tol {
            break;
        }
        n_panels = n_panels.saturating_mul(2);
        if n_panels > opts.max_panels {
            return Err(CoherenceError::QuadratureBudget {
                budget: opts.max_panels,
            });
        }
    }
    let plateau = s.plateau();
    let integrand = |w: f64| (s.eval(w) - plateau) * ff(w) / (2.0 * PI);
    let numeric = quad::integrate_panels(&integrand, n_panels, width, 0.5 * tol, opts.max_panels)
        .map_err(|_| CoherenceError::QuadratureAccuracy)?;
    Ok(plateau_part + numeric)
}

/// W(t) from the spectral integral.
pub fn coherence_integral(
    seq: &PulseSequence,
    s: &NoiseSpectrum,
    opts: &CoherenceOptions,
) -> Result<f64, CoherenceError> {
    Ok((-coherence_exponent(seq, s, opts)?).exp())
}

/// Truncated harmonic-comb rate `(4/π²) Σ_{l=0}^{L} S((2l+1)π/2τ)/(2l+1)²`.
pub fn harmonic_rate(tau: f64, s: &NoiseSpectrum, harmonics: usize) -> f64 {
    let a = PI / (2.0 * tau);
    let mut acc = 0.0;
    for l in 0..=harmonics {
        let m = (2 * l + 1) as f64;
        acc += s.eval(a * m) / (m * m);
    }
    acc * 4.0 / (PI * PI)
}

/// Asymptotic decay rate 1/T2L of an equidistant train.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayRate {
    /// 1/T2L (1/s), truncated at `harmonics_used`.
    pub rate: f64,
    /// Half-spacing of the train (s).
    pub tau: f64,
    /// Harmonic cutoff L.
    pub harmonics_used: usize,
    /// `(4/π²)·S_max·Σ_{l>L}(2l+1)^{−2}` with S_max probed over the next 64
    /// harmonics and the plateau; bounds the truncation deficit.
    pub tail_bound: f64,
}

/// Decay rate of the coherence in the large-pulse-number limit of an
/// equidistant train. Monotone non-decreasing in the harmonic cutoff.
pub fn asymptotic_rate(
    family: &SequenceFamily,
    s: &NoiseSpectrum,
    harmonics: usize,
) -> Result<DecayRate, CoherenceError> {
    let (tau, _n) = family
        .equidistant()
        .ok_or(CoherenceError::NonEquidistant(family.kind_name()))?;
    if harmonics < 1 {
        return Err(CoherenceError::ZeroHarmonics);
    }
    let rate = harmonic_rate(tau, s, harmonics);
    let a = PI / (2.0 * tau);
    let mut s_max = s.plateau();
    for l in harmonics + 1..=harmonics + 64 {
        s_max = s_max.max(s.eval(a * (2 * l + 1) as f64));
    }
    let partial: f64 = (0..=harmonics)
        .map(|l| {
            let m = (2 * l + 1) as f64;
            1.0 / (m * m)
        })
        .sum();
    let tail_sum = PI * PI / 8.0 - partial;
    Ok(DecayRate {
        rate,
        tau,
        harmonics_used: harmonics,
        tail_bound: 4.0 / (PI * PI) * s_max * tail_sum,
    })
}

/// ln W(t) for a bath of spins: `Σ_j ln|cos θ_j|` with
/// `θ_j = α_j γ_j |f̃_t(γ_j)|`, `α_j = arctan(2μ_j/ω_j)`,
/// `γ_j = sqrt(ω_j² + 4μ_j²)`.
///
/// This is the product formula of the decoupling-transformation treatment.
/// Against direct Hilbert-space evolution it is accurate to O((μ_j/ω_j)⁴)
/// per mode — the treatment assumes weakly coupled bath spins — while
/// retaining the dressed frequencies γ_j that the plain Gaussian
/// approximation [`weak_coupling_log`] drops.
///
/// Returns −∞ when any θ_j sits within 1e−12 of an odd multiple of π/2.
pub fn spin_spin_exact_log(seq: &PulseSequence, bath: &SpinBath) -> f64 {
    let mut log_w = 0.0;
    for m in bath.modes() {
        if m.mu == 0.0 {
            continue;
        }
        let alpha = (2.0 * m.mu / m.omega).atan();
        let gamma = (m.omega * m.omega + 4.0 * m.mu * m.mu).sqrt();
        let theta = alpha * gamma * filter_transform(seq, gamma).norm();
        let c = theta.cos().abs();
        if c < 1e-12 {
            return f64::NEG_INFINITY;
        }
        log_w += c.ln();
    }
    log_w
}

/// W(t) = ∏_j |cos θ_j| for a bath of spins; 0 exactly when some θ_j hits an
/// odd multiple of π/2 within floating tolerance.
pub fn spin_spin_exact(seq: &PulseSequence, bath: &SpinBath) -> f64 {
    let lw = spin_spin_exact_log(seq, bath);
    if lw == f64::NEG_INFINITY {
        0.0
    } else {
        lw.exp()
    }
}

/// Gaussian weak-coupling approximation `ln W = −2 Σ_j μ_j² |f̃_t(ω_j)|²`,
/// the discrete-mode form of the spectral integral with S = 4πJ.
pub fn weak_coupling_log(seq: &PulseSequence, bath: &SpinBath) -> f64 {
    -2.0 * bath
        .modes()
        .iter()
        .map(|m| m.mu * m.mu * filter_function(seq, m.omega))
        .sum::<f64>()
}

/// Noise description a coherence curve is computed against.
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseSource {
    Spectrum(NoiseSpectrum),
    SpinBath(SpinBath),
}

impl NoiseSource {
    fn describe(&self) -> String {
        match self {
            NoiseSource::Spectrum(s) => match s {
                NoiseSpectrum::White { .. } => "white".into(),
                NoiseSpectrum::Lorentzian { .. } => "lorentzian".into(),
                NoiseSpectrum::OneOverF { .. } => "one_over_f".into(),
                NoiseSpectrum::OhmicThermal { .. } => "ohmic_thermal".into(),
                NoiseSpectrum::SpinSpinWeak { .. } => "spin_spin_weak".into(),
                NoiseSpectrum::Tabulated { .. } => "tabulated".into(),
            },
            NoiseSource::SpinBath(b) => format!("spin_bath[{}]", b.modes().len()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    /// Readout time (s).
    pub t: f64,
    /// Normalized coherence; 0.0 only on exponent overflow or an exact
    /// spin-bath zero.
    pub w: f64,
    /// Decay exponent χ = −ln W, kept alongside to avoid underflow at long
    /// times.
    pub chi: f64,
}

/// Sampled coherence decay for one protocol.
#[derive(Debug, Clone, PartialEq)]
pub struct CoherenceCurve {
    pub points: Vec<CurvePoint>,
    /// Human-readable descriptor of sequence family and noise source.
    pub protocol: String,
}

impl CoherenceCurve {
    /// CSV export with header `t,W,chi`, 17 significant digits.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("t,W,chi\n");
        for p in &self.points {
            out.push_str(&format!("{:.16e},{:.16e},{:.16e}\n", p.t, p.w, p.chi));
        }
        out
    }
}

/// Coherence at readouts t = 2nτ for each pulse count in `n_list`, using the
/// exact route for the source (spectral integral for spectra, spin product
/// for spin baths).
pub fn coherence_curve(
    family: &SequenceFamily,
    source: &NoiseSource,
    n_list: &[usize],
    opts: &CoherenceOptions,
) -> Result<CoherenceCurve, CoherenceError> {
    let (tau, _) = family
        .equidistant()
        .ok_or(CoherenceError::NonEquidistant(family.kind_name()))?;
    if n_list.is_empty() || n_list.windows(2).any(|w| w[1] <= w[0]) || n_list[0] == 0 {
        return Err(CoherenceError::BadPulseList);
    }
    let points: Result<Vec<CurvePoint>, CoherenceError> = n_list
        .par_iter()
        .map(|&n| {
            let fam_n = family
                .with_pulse_count(n)
                .ok_or(CoherenceError::NonEquidistant(family.kind_name()))?;
            let chi = match source {
                NoiseSource::Spectrum(s) => {
                    fam_n.build()?; // validates the per-family pulse-count rules
                    equidistant_exponent(tau, n, s, opts)?
                }
                NoiseSource::SpinBath(b) => -spin_spin_exact_log(&fam_n.build()?, b),
            };
            Ok(CurvePoint {
                t: 2.0 * n as f64 * tau,
                w: (-chi).exp(),
                chi,
            })
        })
        .collect();
    Ok(CoherenceCurve {
        points: points?,
        protocol: format!("{} tau={:e} {}", family.kind_name(), tau, source.describe()),
    })
}

/// Single-refocusing-pulse coherence versus pulse spacing: points at t = 2τ
/// for each τ. Feeds the conventional echo coherence-time estimate.
pub fn spin_echo_curve(
    taus: &[f64],
    source: &NoiseSource,
    opts: &CoherenceOptions,
) -> Result<CoherenceCurve, CoherenceError> {
    if taus.is_empty() || taus.windows(2).any(|w| w[1] <= w[0]) || taus[0].is_nan() || taus[0] <= 0.0 {
        return Err(CoherenceError::BadTauList);
    }
    let points: Result<Vec<CurvePoint>, CoherenceError> = taus
        .par_iter()
        .map(|&tau| {
            let chi = match source {
                NoiseSource::Spectrum(s) => equidistant_exponent(tau, 1, s, opts)?,
                NoiseSource::SpinBath(b) => {
                    let seq = SequenceFamily::SpinEcho { tau }.build()?;
                    -spin_spin_exact_log(&seq, b)
                }
            };
            Ok(CurvePoint {
                t: 2.0 * tau,
                w: (-chi).exp(),
                chi,
            })
        })
        .collect();
    Ok(CoherenceCurve {
        points: points?,
        protocol: format!("spin_echo tau-sweep {}", source.describe()),
    })
}
