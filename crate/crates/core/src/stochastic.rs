//! Monte Carlo oracle on Ornstein–Uhlenbeck noise trajectories.
//!
//! The OU process is the canonical stationary Gaussian process: exponential
//! autocorrelation `σ² e^{−|t|/τ_c}`, Lorentzian spectrum
//! `2σ²τ_c/(1+ω²τ_c²)`. Trajectories use the exact one-step discretization,
//! so the step size controls only the phase-integration error, not the
//! process law. Each trajectory draws from its own counter-derived RNG
//! stream, which makes results bit-identical regardless of how the batch is
//! parallelized.

use crate::pulses::PulseSequence;
use crate::spectra::NoiseSpectrum;
use num_complex::Complex64;
use rand::RngExt;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

const BATCHES: usize = 20;
const MAX_GRID: usize = 1 << 27;

#[derive(Debug, Error, PartialEq)]
pub enum McError {
    #[error("parameter `{0}` must be positive and finite")]
    NonPositive(&'static str),
    #[error("step dt = {dt} must not exceed tau_c/10 = {limit}")]
    StepTooCoarse { dt: f64, limit: f64 },
    #[error("need at least 100 trajectories, got {0}")]
    TooFewTrajectories(usize),
    #[error("grid of {0} steps exceeds the memory budget")]
    GridTooLong(usize),
    #[error("readout time {t} is not representable on the dt = {dt} grid")]
    OffGridReadout { t: f64, dt: f64 },
    #[error("pulses collide after snapping to the dt grid")]
    SnappedPulseCollision,
    #[error("record length {t_end} is shorter than 50 correlation times")]
    RecordTooShort { t_end: f64 },
    #[error("cannot split {n_traj} trajectories into {batches} batches")]
    TooFewBatches { n_traj: usize, batches: usize },
}

/// Parameters of the OU noise process and of the estimator run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OuProcessParams {
    /// Variance σ² of the stationary process (rad²/s²).
    pub sigma2: f64,
    /// Correlation time τ_c (s).
    pub tau_c: f64,
    /// Integration step (s); must satisfy dt ≤ τ_c/10.
    pub dt: f64,
    /// Trajectory count (≥ 100).
    pub n_traj: usize,
    /// Base RNG seed; trajectory k uses stream k of this seed.
    pub seed: u64,
}

impl OuProcessParams {
    pub fn validate(&self) -> Result<(), McError> {
        for (v, name) in [
            (self.sigma2, "sigma2"),
            (self.tau_c, "tau_c"),
            (self.dt, "dt"),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return Err(McError::NonPositive(name));
            }
        }
        if self.dt > self.tau_c / 10.0 {
            return Err(McError::StepTooCoarse {
                dt: self.dt,
                limit: self.tau_c / 10.0,
            });
        }
        if self.n_traj < 100 {
            return Err(McError::TooFewTrajectories(self.n_traj));
        }
        Ok(())
    }

    /// The spectrum this process realizes.
    pub fn spectrum(&self) -> NoiseSpectrum {
        NoiseSpectrum::Lorentzian {
            sigma2: self.sigma2,
            tau_c: self.tau_c,
        }
    }
}

/// One stationary OU trajectory on the grid 0, dt, …, t_end, generated from
/// stream `traj` of the base seed.
///
/// Exact update: `ξ_{k+1} = ξ_k e^{−dt/τ_c} + σ sqrt(1 − e^{−2dt/τ_c}) η_k`,
/// with a stationary start `ξ_0 ~ N(0, σ²)`.
pub fn generate_ou(params: &OuProcessParams, t_end: f64, traj: u64) -> Result<Vec<f64>, McError> {
    params.validate()?;
    if !t_end.is_finite() || t_end <= 0.0 {
        return Err(McError::NonPositive("t_end"));
    }
    let n_steps = (t_end / params.dt).round() as usize;
    if n_steps + 1 > MAX_GRID {
        return Err(McError::GridTooLong(n_steps + 1));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    rng.set_stream(traj);
    let sigma = params.sigma2.sqrt();
    let decay = (-params.dt / params.tau_c).exp();
    let kick = sigma * (1.0 - decay * decay).sqrt();
    let mut xi = Vec::with_capacity(n_steps + 1);
    let mut x = sigma * rng.sample::<f64, _>(StandardNormal);
    xi.push(x);
    for _ in 0..n_steps {
        x = x * decay + kick * rng.sample::<f64, _>(StandardNormal);
        xi.push(x);
    }
    Ok(xi)
}

/// Monte Carlo coherence estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    /// |⟨e^{iφ}⟩| over trajectories.
    pub w_hat: f64,
    /// Batch-means standard error (20 batches).
    pub stderr: f64,
    pub n_traj: usize,
    /// Sample variance of the accumulated phase, for Gaussian-consistency
    /// checks (ln W ≈ −Var(φ)/2).
    pub phase_variance: f64,
}

struct SnappedSequence {
    /// Segment boundaries as grid indices, including 0 and the readout index.
    boundary_idx: Vec<usize>,
}

fn snap_sequence(seq: &PulseSequence, dt: f64) -> Result<SnappedSequence, McError> {
    let t = seq.readout_time();
    let n_steps_f = t / dt;
    let n_steps = n_steps_f.round() as usize;
    if (n_steps_f - n_steps as f64).abs() > 1e-6 * n_steps_f.max(1.0) || n_steps == 0 {
        return Err(McError::OffGridReadout { t, dt });
    }
    let mut boundary_idx = Vec::with_capacity(seq.pulse_count() + 2);
    boundary_idx.push(0usize);
    for &tk in seq.times() {
        // snapping moves each pulse by at most dt/2
        let idx = (tk / dt).round() as usize;
        if idx == 0 || idx >= n_steps || Some(&idx) == boundary_idx.last() {
            return Err(McError::SnappedPulseCollision);
        }
        boundary_idx.push(idx);
    }
    boundary_idx.push(n_steps);
    Ok(SnappedSequence { boundary_idx })
}

/// Signed phase ∫ ξ(t′) f_t(t′) dt′ by trapezoid sums within each
/// constant-sign segment.
fn signed_phase(xi: &[f64], snapped: &SnappedSequence, dt: f64) -> f64 {
    let mut phase = 0.0;
    let mut sign = 1.0;
    for w in snapped.boundary_idx.windows(2) {
        let (a, b) = (w[0], w[1]);
        let mut seg = 0.5 * (xi[a] + xi[b]);
        for &x in &xi[a + 1..b] {
            seg += x;
        }
        phase += sign * seg * dt;
        sign = -sign;
    }
    phase
}

/// Estimate W(t) = |⟨e^{iφ}⟩| for a pulse sequence under OU noise.
///
/// Pulse times are snapped to the dt grid (≤ dt/2 perturbation each); the
/// trajectory set is reduced in index order with compensated summation, so
/// the estimate does not depend on thread count.
pub fn mc_coherence(seq: &PulseSequence, params: &OuProcessParams) -> Result<McEstimate, McError> {
    params.validate()?;
    if params.n_traj < BATCHES {
        return Err(McError::TooFewBatches {
            n_traj: params.n_traj,
            batches: BATCHES,
        });
    }
    let snapped = snap_sequence(seq, params.dt)?;
    let t_end = *snapped.boundary_idx.last().unwrap() as f64 * params.dt;

    let phases: Result<Vec<f64>, McError> = (0..params.n_traj as u64)
        .into_par_iter()
        .map(|traj| {
            let xi = generate_ou(params, t_end, traj)?;
            Ok(signed_phase(&xi, &snapped, params.dt))
        })
        .collect();
    let phases = phases?;

    // deterministic reduction: Kahan sums in trajectory order
    let mut sum = Complex64::new(0.0, 0.0);
    let mut comp = Complex64::new(0.0, 0.0);
    let mut phase_mean = 0.0;
    let mut phase_sq = 0.0;
    for &phi in &phases {
        let z = Complex64::new(phi.cos(), phi.sin());
        let y = z - comp;
        let t = sum + y;
        comp = (t - sum) - y;
        sum = t;
        phase_mean += phi;
        phase_sq += phi * phi;
    }
    let n = params.n_traj as f64;
    phase_mean /= n;
    let phase_variance = (phase_sq / n - phase_mean * phase_mean).max(0.0);
    let w_hat = (sum / n).norm();

    // batch means over contiguous index ranges
    let base = params.n_traj / BATCHES;
    let extra = params.n_traj % BATCHES;
    let mut batch_w = Vec::with_capacity(BATCHES);
    let mut start = 0usize;
    for b in 0..BATCHES {
        let len = base + usize::from(b < extra);
        let mut acc = Complex64::new(0.0, 0.0);
        for &phi in &phases[start..start + len] {
            acc += Complex64::new(phi.cos(), phi.sin());
        }
        batch_w.push((acc / len as f64).norm());
        start += len;
    }
    let mean_b: f64 = batch_w.iter().sum::<f64>() / BATCHES as f64;
    let var_b: f64 =
        batch_w.iter().map(|w| (w - mean_b) * (w - mean_b)).sum::<f64>() / (BATCHES - 1) as f64;
    let stderr = (var_b / BATCHES as f64).sqrt();

    Ok(McEstimate {
        w_hat,
        stderr,
        n_traj: params.n_traj,
        phase_variance,
    })
}

/// Averaged Hann-windowed periodogram of OU trajectories, returned as a
/// tabulated spectrum on the FFT grid up to ~12/τ_c.
///
/// The estimate targets `S(ω) = ∫ e^{iωt} ⟨ξ(t)ξ(0)⟩ dt`; for the OU process
/// it recovers the Lorentzian within a few percent once the record is much
/// longer than τ_c.
pub fn estimate_spectrum_from_trajectories(
    params: &OuProcessParams,
    t_end: f64,
) -> Result<NoiseSpectrum, McError> {
    params.validate()?;
    if t_end < 50.0 * params.tau_c {
        return Err(McError::RecordTooShort { t_end });
    }
    let n = (t_end / params.dt).round() as usize;
    let n_fft = crate::fft::next_pow2(n);
    if n_fft > MAX_GRID {
        return Err(McError::GridTooLong(n_fft));
    }
    // Hann window and its power normalization Σw²
    let window: Vec<f64> = (0..n)
        .map(|j| {
            let x = 2.0 * std::f64::consts::PI * j as f64 / (n - 1) as f64;
            0.5 * (1.0 - x.cos())
        })
        .collect();
    let w_power: f64 = window.iter().map(|w| w * w).sum();

    let omega_cut = 12.0 / params.tau_c;
    let domega = 2.0 * std::f64::consts::PI / (n_fft as f64 * params.dt);
    let k_max = ((omega_cut / domega).ceil() as usize).min(n_fft / 2);

    let accum: Result<Vec<Vec<f64>>, McError> = (0..params.n_traj as u64)
        .into_par_iter()
        .map(|traj| {
            let xi = generate_ou(params, (n - 1) as f64 * params.dt, traj)?;
            let mut buf = vec![Complex64::new(0.0, 0.0); n_fft];
            for j in 0..n {
                buf[j] = Complex64::new(xi[j] * window[j], 0.0);
            }
            crate::fft::fft_in_place(&mut buf);
            Ok((0..=k_max)
                .map(|k| params.dt * buf[k].norm_sqr() / w_power)
                .collect())
        })
        .collect();
    let accum = accum?;

    let mut values = vec![0.0; k_max + 1];
    for row in &accum {
        for (v, r) in values.iter_mut().zip(row) {
            *v += r;
        }
    }
    for v in values.iter_mut() {
        *v /= params.n_traj as f64;
    }
    let omegas: Vec<f64> = (0..=k_max).map(|k| k as f64 * domega).collect();
    NoiseSpectrum::tabulated(omegas, values).map_err(|_| McError::NonPositive("spectrum table"))
}
