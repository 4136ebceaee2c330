//! Noise-spectrum models S(ω) and bath spectral densities.
//!
//! Every model evaluates the symmetrized power spectral density of the random
//! dephasing field: even in ω, nonnegative, finite for finite ω. Parameters
//! are validated at construction; evaluation never fails. Spectra serialize
//! to and from a JSON document `{"model": "...", "params": {...}}`.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SpectrumError {
    #[error("parameter `{name}` must be positive and finite, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("1/f band requires 0 < omega_min < omega_max")]
    InvalidBand,
    #[error("inverse temperature must be positive (omit it for zero temperature)")]
    InvalidBeta,
    #[error("spin bath needs at least one mode")]
    EmptyModes,
    #[error("mode {index}: splitting must be positive and coupling nonnegative")]
    InvalidMode { index: usize },
    #[error("tabulated spectrum needs >= 2 strictly increasing nonnegative frequencies and matching nonnegative values")]
    InvalidTable,
    #[error("spectrum JSON: {0}")]
    Json(String),
}

/// One bath spin: splitting ω and coupling μ, both rad/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpinMode {
    pub omega: f64,
    pub mu: f64,
}

/// An evaluable noise spectrum S(ω).
///
/// `beta` is the inverse temperature in 1/(rad/s); `None` means zero
/// temperature. The 1/f model is regularized with explicit band edges (flat
/// below `omega_min`, zero above `omega_max`) so that coherence integrals
/// stay finite; both edges are part of the model definition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", content = "params", rename_all = "snake_case")]
pub enum NoiseSpectrum {
    White {
        s0: f64,
    },
    Lorentzian {
        sigma2: f64,
        tau_c: f64,
    },
    OneOverF {
        amplitude: f64,
        omega_min: f64,
        omega_max: f64,
    },
    OhmicThermal {
        eta: f64,
        cutoff: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        beta: Option<f64>,
    },
    SpinSpinWeak {
        modes: Vec<SpinMode>,
        broadening: f64,
    },
    Tabulated {
        omegas: Vec<f64>,
        values: Vec<f64>,
    },
}

fn check_positive(x: f64, name: &'static str) -> Result<(), SpectrumError> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(SpectrumError::NonPositive { name, value: x })
    }
}

impl NoiseSpectrum {
    pub fn white(s0: f64) -> Result<Self, SpectrumError> {
        check_positive(s0, "s0")?;
        Ok(NoiseSpectrum::White { s0 })
    }

    /// S(ω) = 2σ²τ_c / (1 + ω²τ_c²), so S(0) = 2σ²τ_c.
    pub fn lorentzian(sigma2: f64, tau_c: f64) -> Result<Self, SpectrumError> {
        check_positive(sigma2, "sigma2")?;
        check_positive(tau_c, "tau_c")?;
        Ok(NoiseSpectrum::Lorentzian { sigma2, tau_c })
    }

    pub fn one_over_f(amplitude: f64, omega_min: f64, omega_max: f64) -> Result<Self, SpectrumError> {
        check_positive(amplitude, "amplitude")?;
        if !(omega_min > 0.0 && omega_max.is_finite() && omega_min < omega_max) {
            return Err(SpectrumError::InvalidBand);
        }
        Ok(NoiseSpectrum::OneOverF {
            amplitude,
            omega_min,
            omega_max,
        })
    }

    /// Thermal spectrum of an Ohmic boson bath, S(ω) = πη|ω|e^{−|ω|/ω_c}·coth(β|ω|/2).
    pub fn ohmic_thermal(eta: f64, cutoff: f64, beta: Option<f64>) -> Result<Self, SpectrumError> {
        check_positive(eta, "eta")?;
        check_positive(cutoff, "cutoff")?;
        if let Some(b) = beta {
            if !b.is_finite() || b <= 0.0 {
                return Err(SpectrumError::InvalidBeta);
            }
        }
        Ok(NoiseSpectrum::OhmicThermal { eta, cutoff, beta })
    }

    pub fn tabulated(omegas: Vec<f64>, values: Vec<f64>) -> Result<Self, SpectrumError> {
        if omegas.len() < 2
            || omegas.len() != values.len()
            || omegas[0] < 0.0
            || omegas.windows(2).any(|w| w[1] <= w[0])
            || values.iter().any(|&v| !v.is_finite() || v < 0.0)
        {
            return Err(SpectrumError::InvalidTable);
        }
        Ok(NoiseSpectrum::Tabulated { omegas, values })
    }

    /// Validate parameters after e.g. a JSON deserialization.
    pub fn validate(&self) -> Result<(), SpectrumError> {
        match self {
            NoiseSpectrum::White { s0 } => check_positive(*s0, "s0"),
            NoiseSpectrum::Lorentzian { sigma2, tau_c } => {
                check_positive(*sigma2, "sigma2")?;
                check_positive(*tau_c, "tau_c")
            }
            NoiseSpectrum::OneOverF {
                amplitude,
                omega_min,
                omega_max,
            } => {
                Self::one_over_f(*amplitude, *omega_min, *omega_max)?;
                Ok(())
            }
            NoiseSpectrum::OhmicThermal { eta, cutoff, beta } => {
                Self::ohmic_thermal(*eta, *cutoff, *beta)?;
                Ok(())
            }
            NoiseSpectrum::SpinSpinWeak { modes, broadening } => {
                check_positive(*broadening, "broadening")?;
                if modes.is_empty() {
                    return Err(SpectrumError::EmptyModes);
                }
                for (index, m) in modes.iter().enumerate() {
                    if !m.omega.is_finite() || m.omega <= 0.0 || m.mu.is_nan() || m.mu < 0.0 {
                        return Err(SpectrumError::InvalidMode { index });
                    }
                }
                Ok(())
            }
            NoiseSpectrum::Tabulated { omegas, values } => {
                Self::tabulated(omegas.clone(), values.clone())?;
                Ok(())
            }
        }
    }

    pub fn from_json_str(s: &str) -> Result<Self, SpectrumError> {
        let spec: NoiseSpectrum =
            serde_json::from_str(s).map_err(|e| SpectrumError::Json(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string(self).expect("spectrum serializes")
    }

    /// S(ω), evaluated on |ω|.
    pub fn eval(&self, omega: f64) -> f64 {
        let w = omega.abs();
        match self {
            NoiseSpectrum::White { s0 } => *s0,
            NoiseSpectrum::Lorentzian { sigma2, tau_c } => {
                let x = w * tau_c;
                2.0 * sigma2 * tau_c / (1.0 + x * x)
            }
            NoiseSpectrum::OneOverF {
                amplitude,
                omega_min,
                omega_max,
            } => {
                if w > *omega_max {
                    0.0
                } else {
                    amplitude / w.max(*omega_min)
                }
            }
            NoiseSpectrum::OhmicThermal { eta, cutoff, beta } => {
                PI * eta * (-w / cutoff).exp() * omega_coth(w, *beta)
            }
            NoiseSpectrum::SpinSpinWeak { modes, broadening } => {
                let norm = 1.0 / (broadening * (2.0 * PI).sqrt());
                4.0 * PI
                    * modes
                        .iter()
                        .map(|m| {
                            let z = (w - m.omega) / broadening;
                            m.mu * m.mu * norm * (-0.5 * z * z).exp()
                        })
                        .sum::<f64>()
            }
            NoiseSpectrum::Tabulated { omegas, values } => {
                if w < omegas[0] || w > *omegas.last().unwrap() {
                    return 0.0;
                }
                let i = omegas.partition_point(|&o| o <= w).min(omegas.len() - 1);
                let (lo, hi) = (i - 1, i);
                let frac = (w - omegas[lo]) / (omegas[hi] - omegas[lo]);
                values[lo] + frac * (values[hi] - values[lo])
            }
        }
    }

    /// High-frequency plateau lim_{ω→∞} S(ω); the flat part of the spectrum
    /// that coherence integrals handle analytically.
    pub fn plateau(&self) -> f64 {
        match self {
            NoiseSpectrum::White { s0 } => *s0,
            _ => 0.0,
        }
    }

    /// Frequency beyond which `S(ω) − plateau` is non-increasing, when the
    /// model guarantees one. Lets comb-structured integrators use per-harmonic
    /// tail bounds.
    pub fn monotone_tail_start(&self) -> Option<f64> {
        match self {
            NoiseSpectrum::White { .. }
            | NoiseSpectrum::Lorentzian { .. }
            | NoiseSpectrum::OneOverF { .. } => Some(0.0),
            NoiseSpectrum::OhmicThermal { cutoff, beta, .. } => {
                // ω·coth(βω/2) grows no faster than ω + 2/β, so the decaying
                // exponential wins past a couple of cutoff scales
                let thermal = beta.map(|b| 2.0 / b).unwrap_or(0.0);
                Some(2.0 * (cutoff + thermal))
            }
            NoiseSpectrum::SpinSpinWeak { .. } | NoiseSpectrum::Tabulated { .. } => None,
        }
    }

    /// Upper bound on `∫_Ω^∞ (S(ω) − plateau) dω`, used to truncate
    /// one-sided frequency integrals with a rigorous tail estimate.
    pub fn tail_integral_bound(&self, omega: f64) -> f64 {
        let w = omega.abs();
        match self {
            NoiseSpectrum::White { .. } => 0.0,
            NoiseSpectrum::Lorentzian { sigma2, tau_c } => {
                2.0 * sigma2 * (0.5 * PI - (w * tau_c).atan())
            }
            NoiseSpectrum::OneOverF {
                amplitude,
                omega_min,
                omega_max,
            } => {
                if w >= *omega_max {
                    0.0
                } else if w >= *omega_min {
                    amplitude * (omega_max / w).ln()
                } else {
                    amplitude * ((omega_min - w) / omega_min + (omega_max / omega_min).ln())
                }
            }
            NoiseSpectrum::OhmicThermal { eta, cutoff, beta } => {
                // ω·coth(βω/2) ≤ ω + 2/β, and ∫_Ω^∞ ω e^{−ω/c} dω = c(Ω+c)e^{−Ω/c}
                let decay = (-w / cutoff).exp();
                let linear = cutoff * (w + cutoff) * decay;
                let thermal = match beta {
                    Some(b) => 2.0 / b * cutoff * decay,
                    None => 0.0,
                };
                PI * eta * (linear + thermal)
            }
            NoiseSpectrum::SpinSpinWeak { modes, broadening } => {
                4.0 * PI
                    * modes
                        .iter()
                        .map(|m| {
                            let z = (w - m.omega) / broadening;
                            let tail = if z <= 0.0 { 1.0 } else { 0.5 * (-0.5 * z * z).exp() };
                            m.mu * m.mu * tail
                        })
                        .sum::<f64>()
            }
            NoiseSpectrum::Tabulated { omegas, values } => {
                // exact trapezoid mass of the piecewise-linear table beyond ω
                let end = *omegas.last().unwrap();
                if w >= end {
                    return 0.0;
                }
                let mut total = 0.0;
                for i in 0..omegas.len() - 1 {
                    let (a, b) = (omegas[i], omegas[i + 1]);
                    if b <= w {
                        continue;
                    }
                    let lo = a.max(w);
                    let va = self.eval(lo);
                    let vb = values[i + 1];
                    total += 0.5 * (va + vb) * (b - lo);
                }
                total
            }
        }
    }
}

/// ω·coth(βω/2), the thermal enhancement factor times ω, with the ω → 0
/// limit 2/β taken analytically. `beta = None` is zero temperature (coth = 1).
fn omega_coth(omega: f64, beta: Option<f64>) -> f64 {
    match beta {
        None => omega,
        Some(b) => {
            let x = 0.5 * b * omega;
            if x < 1e-4 {
                2.0 / b + b * omega * omega / 6.0
            } else {
                omega / x.tanh()
            }
        }
    }
}

/// Boson occupation `n_b(ω) = 1/(e^{βω} − 1)`; `beta = f64::INFINITY` gives 0.
pub fn bose_occupation(omega: f64, beta: f64) -> f64 {
    if beta.is_infinite() {
        0.0
    } else {
        1.0 / (beta * omega).exp_m1()
    }
}

/// Continuous bath spectral density families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum SpectralDensity {
    /// J(ω) = η ω e^{−ω/cutoff} for ω ≥ 0.
    Ohmic { eta: f64, cutoff: f64 },
}

impl SpectralDensity {
    pub fn eval(&self, omega: f64) -> f64 {
        match self {
            SpectralDensity::Ohmic { eta, cutoff } => {
                if omega < 0.0 {
                    0.0
                } else {
                    eta * omega * (-omega / cutoff).exp()
                }
            }
        }
    }
}

/// Boson bath: spectral density J(ω ≥ 0) and inverse temperature
/// (`None` = zero temperature).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BosonBath {
    pub density: SpectralDensity,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
}

impl BosonBath {
    pub fn new(density: SpectralDensity, beta: Option<f64>) -> Result<Self, SpectrumError> {
        match &density {
            SpectralDensity::Ohmic { eta, cutoff } => {
                check_positive(*eta, "eta")?;
                check_positive(*cutoff, "cutoff")?;
            }
        }
        if let Some(b) = beta {
            if !b.is_finite() || b <= 0.0 {
                return Err(SpectrumError::InvalidBeta);
            }
        }
        Ok(Self { density, beta })
    }

    pub fn j(&self, omega: f64) -> f64 {
        self.density.eval(omega)
    }
}

/// Map a boson bath to its noise spectrum, S(ω) = πJ(|ω|)(2n_b(|ω|) + 1).
///
/// At ω = 0 the Ohmic case has the analytic limit 2πη/β (zero at zero
/// temperature).
pub fn boson_to_spectrum(bath: &BosonBath) -> NoiseSpectrum {
    match bath.density {
        SpectralDensity::Ohmic { eta, cutoff } => NoiseSpectrum::OhmicThermal {
            eta,
            cutoff,
            beta: bath.beta,
        },
    }
}

/// Bath of spins coupled to the qubit, each a (splitting, coupling) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpinBath {
    modes: Vec<SpinMode>,
}

impl SpinBath {
    pub fn new(modes: Vec<SpinMode>) -> Result<Self, SpectrumError> {
        if modes.is_empty() {
            return Err(SpectrumError::EmptyModes);
        }
        for (index, m) in modes.iter().enumerate() {
            if !(m.omega > 0.0 && m.omega.is_finite()) || !(m.mu >= 0.0 && m.mu.is_finite()) {
                return Err(SpectrumError::InvalidMode { index });
            }
        }
        Ok(Self { modes })
    }

    pub fn modes(&self) -> &[SpinMode] {
        &self.modes
    }

    /// Largest coupling ratio max_j μ_j/ω_j.
    pub fn max_coupling_ratio(&self) -> f64 {
        self.modes
            .iter()
            .map(|m| m.mu / m.omega)
            .fold(0.0, f64::max)
    }

    /// Weak-coupling regime used by the Gaussian spectrum mapping.
    pub fn is_weak_coupling(&self) -> bool {
        self.max_coupling_ratio() <= 0.1
    }
}

/// Weak-coupling noise spectrum of a spin bath, S(ω) = 4πJ(|ω|), with the
/// discrete mode comb smoothed by a unit-area Gaussian kernel of the given
/// width.
///
/// The smoothed spectrum is for plotting and fitting; exact coherence
/// evaluation uses the raw modes directly.
pub fn spinbath_to_spectrum(bath: &SpinBath, broadening: f64) -> Result<NoiseSpectrum, SpectrumError> {
    check_positive(broadening, "broadening")?;
    Ok(NoiseSpectrum::SpinSpinWeak {
        modes: bath.modes().to_vec(),
        broadening,
    })
}
