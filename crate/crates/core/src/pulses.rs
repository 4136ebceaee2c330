//! π-pulse sequences and their filter functions.
//!
//! A sequence of ideal (instantaneous) π-pulses at times `t_1 < … < t_n`
//! followed by readout at `t` imprints a ±1 switching function `f_t(t')` on
//! the phase a dephasing qubit accumulates: the sign flips at every pulse.
//! Its Fourier transform `f̃_t(ω)` and the filter function `|f̃_t(ω)|²` decide
//! how strongly each noise frequency contributes to decoherence. Only pulse
//! timings matter here: rotation-axis choices contribute unit-modulus factors
//! and are dropped.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SequenceError {
    #[error("pulse times must be positive and strictly increasing (offending index {0})")]
    NonIncreasingTimes(usize),
    #[error("readout time {readout} must exceed the last pulse time {last}")]
    ReadoutBeforeLastPulse { readout: f64, last: f64 },
    #[error("readout time must be positive and finite, got {0}")]
    InvalidReadout(f64),
    #[error("alternating-phase block structure requires an even pulse count, got {0}")]
    OddAlternating(usize),
    #[error("parameter `{0}` must be positive and finite")]
    NonPositiveParameter(&'static str),
    #[error("pulse count must be at least 1")]
    ZeroPulses,
    #[error("family `{0}` is not equidistant")]
    NonEquidistant(&'static str),
}

/// Ordered π-pulse instants on (0, t) plus the readout time t.
///
/// The implicit segment boundaries are `t_0 = 0` and `t_{n+1} = t`; a sequence
/// with no pulses is free evolution.
#[derive(Debug, Clone, PartialEq)]
pub struct PulseSequence {
    times: Vec<f64>,
    readout_time: f64,
}

impl PulseSequence {
    pub fn new(times: Vec<f64>, readout_time: f64) -> Result<Self, SequenceError> {
        if !readout_time.is_finite() || readout_time <= 0.0 {
            return Err(SequenceError::InvalidReadout(readout_time));
        }
        let mut prev = 0.0;
        for (i, &t) in times.iter().enumerate() {
            if !t.is_finite() || t <= prev {
                return Err(SequenceError::NonIncreasingTimes(i));
            }
            prev = t;
        }
        if prev >= readout_time {
            return Err(SequenceError::ReadoutBeforeLastPulse {
                readout: readout_time,
                last: prev,
            });
        }
        Ok(Self {
            times,
            readout_time,
        })
    }

    /// Sequence with no pulses: free evolution until readout.
    pub fn free_evolution(readout_time: f64) -> Result<Self, SequenceError> {
        Self::new(Vec::new(), readout_time)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn readout_time(&self) -> f64 {
        self.readout_time
    }

    pub fn pulse_count(&self) -> usize {
        self.times.len()
    }

    /// Segment boundaries `0, t_1, …, t_n, t`.
    pub fn boundaries(&self) -> Vec<f64> {
        let mut b = Vec::with_capacity(self.times.len() + 2);
        b.push(0.0);
        b.extend_from_slice(&self.times);
        b.push(self.readout_time);
        b
    }

    /// Smallest gap between consecutive boundaries; sets the fastest
    /// oscillation scale of the filter function.
    pub fn min_gap(&self) -> f64 {
        let b = self.boundaries();
        b.windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::INFINITY, f64::min)
    }

    /// Half-spacing τ when the timing is an equidistant train
    /// (`t_k = (2k−1)τ`, readout at `2nτ`), detected to 1e−12 relative.
    /// Unlocks the O(1) filter form and comb-aware integral truncation.
    pub fn equidistant_half_spacing(&self) -> Option<f64> {
        let n = self.times.len();
        if n == 0 {
            return None;
        }
        let tau = self.readout_time / (2 * n) as f64;
        let tol = 1e-12 * self.readout_time;
        self.times
            .iter()
            .enumerate()
            .all(|(k, &tk)| (tk - (2 * k + 1) as f64 * tau).abs() <= tol)
            .then_some(tau)
    }
}

/// Named sequence constructions.
///
/// Equidistant families place pulses at `t_1 = τ`, spacing `2τ`, readout at
/// `t = 2nτ`. Under ideal pulses the alternating-phase and constant-phase
/// multipulse trains share these timings; they are kept as distinct variants
/// because the alternating variant constrains `n` to even values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SequenceFamily {
    /// Single refocusing pulse: `τ – π – τ`, readout at `2τ`.
    SpinEcho { tau: f64 },
    /// Equidistant train of n pulses with half-spacing τ.
    Cpmg { tau: f64, n: usize },
    /// Equidistant train with alternating pulse phase; n must be even.
    Apcp { tau: f64, n: usize },
    /// Nonuniform timings `t_k = t sin²(kπ/(2n+2))`, kept for comparison runs.
    Udd { t: f64, n: usize },
    Custom { times: Vec<f64>, t: f64 },
}

impl SequenceFamily {
    /// Instantiate the concrete pulse sequence.
    pub fn build(&self) -> Result<PulseSequence, SequenceError> {
        match self {
            SequenceFamily::SpinEcho { tau } => {
                check_positive(*tau, "tau")?;
                PulseSequence::new(vec![*tau], 2.0 * tau)
            }
            SequenceFamily::Cpmg { tau, n } => {
                check_positive(*tau, "tau")?;
                if *n == 0 {
                    return Err(SequenceError::ZeroPulses);
                }
                PulseSequence::new(equidistant_times(*tau, *n), 2.0 * *n as f64 * tau)
            }
            SequenceFamily::Apcp { tau, n } => {
                check_positive(*tau, "tau")?;
                if *n == 0 {
                    return Err(SequenceError::ZeroPulses);
                }
                if n % 2 != 0 {
                    return Err(SequenceError::OddAlternating(*n));
                }
                PulseSequence::new(equidistant_times(*tau, *n), 2.0 * *n as f64 * tau)
            }
            SequenceFamily::Udd { t, n } => {
                check_positive(*t, "t")?;
                if *n == 0 {
                    return Err(SequenceError::ZeroPulses);
                }
                let m = *n as f64;
                let times = (1..=*n)
                    .map(|k| t * (k as f64 * PI / (2.0 * m + 2.0)).sin().powi(2))
                    .collect();
                PulseSequence::new(times, *t)
            }
            SequenceFamily::Custom { times, t } => PulseSequence::new(times.clone(), *t),
        }
    }

    /// `(τ, n)` when the family is an equidistant train, `None` otherwise.
    pub fn equidistant(&self) -> Option<(f64, usize)> {
        match self {
            SequenceFamily::SpinEcho { tau } => Some((*tau, 1)),
            SequenceFamily::Cpmg { tau, n } | SequenceFamily::Apcp { tau, n } => Some((*tau, *n)),
            _ => None,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            SequenceFamily::SpinEcho { .. } => "spin_echo",
            SequenceFamily::Cpmg { .. } => "cpmg",
            SequenceFamily::Apcp { .. } => "apcp",
            SequenceFamily::Udd { .. } => "udd",
            SequenceFamily::Custom { .. } => "custom",
        }
    }

    /// Same timings with a different pulse count; only meaningful for the
    /// equidistant families (the spin-echo kind generalizes to a train).
    pub fn with_pulse_count(&self, n: usize) -> Option<SequenceFamily> {
        match self {
            SequenceFamily::SpinEcho { tau } | SequenceFamily::Cpmg { tau, .. } => {
                Some(SequenceFamily::Cpmg { tau: *tau, n })
            }
            SequenceFamily::Apcp { tau, .. } => Some(SequenceFamily::Apcp { tau: *tau, n }),
            _ => None,
        }
    }
}

fn check_positive(x: f64, name: &'static str) -> Result<(), SequenceError> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(SequenceError::NonPositiveParameter(name))
    }
}

fn equidistant_times(tau: f64, n: usize) -> Vec<f64> {
    (0..n).map(|k| tau * (2 * k + 1) as f64).collect()
}

/// Build the concrete sequence for a family.
pub fn make_sequence(family: &SequenceFamily) -> Result<PulseSequence, SequenceError> {
    family.build()
}

/// Sign of the accumulated phase at time `t_prime`: `(−1)^k` on the k-th
/// inter-pulse segment, 0 outside the support.
///
/// Segments are half-open, `[t_k, t_{k+1})`, so the value at an exact pulse
/// instant is the sign of the segment that starts there. Measure zero for all
/// integrals, fixed for determinism.
pub fn switching_function(seq: &PulseSequence, t_prime: f64) -> i32 {
    if t_prime < 0.0 || t_prime >= seq.readout_time {
        return 0;
    }
    let flips = seq.times.partition_point(|&p| p <= t_prime);
    if flips % 2 == 0 {
        1
    } else {
        -1
    }
}

/// sin(x)/x with the removable singularity filled in.
fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        let x2 = x * x;
        1.0 - x2 / 6.0 + x2 * x2 / 120.0
    } else {
        x.sin() / x
    }
}

/// Fourier transform `f̃_t(ω) = ∫ dt' e^{iωt'} f_t(t')` in closed form.
///
/// Each constant-sign segment `[a, b]` contributes
/// `±(b−a) e^{iω(a+b)/2} sinc(ω(b−a)/2)`, which is exact and remains stable
/// down to ω = 0, where the alternating segment lengths are returned directly.
pub fn filter_transform(seq: &PulseSequence, omega: f64) -> Complex64 {
    let b = seq.boundaries();
    let mut acc = Complex64::new(0.0, 0.0);
    let mut sign = 1.0;
    for w in b.windows(2) {
        let (a, c) = (w[0], w[1]);
        let half = 0.5 * omega * (c - a);
        let phase = Complex64::from_polar(1.0, 0.5 * omega * (a + c));
        acc += phase * (sign * (c - a) * sinc(half));
        sign = -sign;
    }
    acc
}

/// Filter function `|f̃_t(ω)|²`.
pub fn filter_function(seq: &PulseSequence, omega: f64) -> f64 {
    filter_transform(seq, omega).norm_sqr()
}

/// One evaluation of the filter at a frequency.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterSample {
    /// Angular frequency (rad/s).
    pub omega: f64,
    /// `|f̃_t(ω)|²` (s²).
    pub ff: f64,
    /// `f̃_t(ω)` (s).
    pub complex_value: Complex64,
}

impl FilterSample {
    pub fn evaluate(seq: &PulseSequence, omega: f64) -> Self {
        let complex_value = filter_transform(seq, omega);
        Self {
            omega,
            ff: complex_value.norm_sqr(),
            complex_value,
        }
    }
}

/// `|f̃_t(ω)|²` for an equidistant train of `n` pulses with half-spacing `τ`,
/// evaluated in O(1).
///
/// With φ = ωτ the closed form is `4 (1−cos φ)² sin²(n(φ+π/2)) / (ω² cos²φ)`;
/// near the odd multiples of π/2 (the harmonic peaks) the 0/0 ratio is
/// replaced by the equivalent Dirichlet ratio `sin(nμ)/sin(μ)` in the distance
/// μ to the nearest peak. Agrees with `filter_function` on the equidistant
/// timings to rounding.
pub fn equidistant_filter_sq(tau: f64, n: usize, omega: f64) -> f64 {
    debug_assert!(tau > 0.0 && n >= 1);
    if omega == 0.0 {
        // alternating segment lengths τ, 2τ, …, 2τ, τ cancel exactly
        return 0.0;
    }
    let phi = omega * tau;
    let c = phi.cos();
    let nf = n as f64;
    let g = if c.abs() > 0.01 {
        (nf * (phi + 0.5 * PI)).sin() / c
    } else {
        // distance to the nearest odd multiple of π/2
        let k = ((phi / PI) - 0.5).round();
        let mu = phi - (k + 0.5) * PI;
        if mu == 0.0 {
            nf
        } else {
            (nf * mu).sin() / mu.sin()
        }
    };
    let one_minus_cos = 2.0 * (0.5 * phi).sin().powi(2);
    let amp = 2.0 * one_minus_cos * g / omega;
    amp * amp
}

/// Squared Fourier coefficients `|C_m|²` of the periodic switching function of
/// an equidistant train (period 4τ), for m = 0..=m_max.
///
/// Computed by the exact piecewise integral of one period `(0,τ)↦+1,
/// (τ,3τ)↦−1, (3τ,4τ)↦+1`; for the equidistant families this reproduces
/// `4/(π²m²)` on odd m and 0 on even m.
pub fn fourier_coefficients(
    family: &SequenceFamily,
    m_max: usize,
) -> Result<Vec<f64>, SequenceError> {
    let (tau, _n) = family
        .equidistant()
        .ok_or(SequenceError::NonEquidistant(family.kind_name()))?;
    let period = 4.0 * tau;
    let segments = [(0.0, tau, 1.0), (tau, 3.0 * tau, -1.0), (3.0 * tau, period, 1.0)];
    let mut out = Vec::with_capacity(m_max + 1);
    for m in 0..=m_max {
        let omega_m = m as f64 * PI / (2.0 * tau);
        let mut cm = Complex64::new(0.0, 0.0);
        for &(a, b, s) in &segments {
            let half = 0.5 * omega_m * (b - a);
            let phase = Complex64::from_polar(1.0, 0.5 * omega_m * (a + b));
            cm += phase * (s * (b - a) * sinc(half));
        }
        cm /= period;
        out.push(cm.norm_sqr());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn spin_echo_layout() {
        let seq = SequenceFamily::SpinEcho { tau: 1.0 }.build().unwrap();
        assert_eq!(seq.times(), &[1.0]);
        assert_eq!(seq.readout_time(), 2.0);
    }

    #[test]
    fn cpmg_layout() {
        let seq = SequenceFamily::Cpmg { tau: 0.5, n: 4 }.build().unwrap();
        assert_eq!(seq.times(), &[0.5, 1.5, 2.5, 3.5]);
        assert_eq!(seq.readout_time(), 4.0);
    }

    #[test]
    fn custom_ordering_rejected() {
        let err = SequenceFamily::Custom {
            times: vec![2.0, 1.0],
            t: 3.0,
        }
        .build()
        .unwrap_err();
        assert_eq!(err, SequenceError::NonIncreasingTimes(1));
    }

    #[test]
    fn alternating_odd_count_rejected() {
        let err = SequenceFamily::Apcp { tau: 1.0, n: 3 }.build().unwrap_err();
        assert_eq!(err, SequenceError::OddAlternating(3));
    }

    #[test]
    fn udd_timings() {
        let seq = SequenceFamily::Udd { t: 1.0, n: 3 }.build().unwrap();
        for (k, &tk) in seq.times().iter().enumerate() {
            let expect = ((k + 1) as f64 * PI / 8.0).sin().powi(2);
            assert!((tk - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn switching_signs() {
        let se = SequenceFamily::SpinEcho { tau: 1.0 }.build().unwrap();
        assert_eq!(switching_function(&se, 0.5), 1);
        assert_eq!(switching_function(&se, 1.5), -1);
        assert_eq!(switching_function(&se, -0.1), 0);
        assert_eq!(switching_function(&se, 2.0), 0);
        // one pulse (at 0.5) precedes t' = 1.0
        let cpmg = SequenceFamily::Cpmg { tau: 0.5, n: 4 }.build().unwrap();
        assert_eq!(switching_function(&cpmg, 1.0), -1);
    }

    #[test]
    fn spin_echo_filter_closed_form() {
        // |f̃|²(ω) = (16/ω²) sin⁴(ωτ/2)
        let seq = SequenceFamily::SpinEcho { tau: 1.0 }.build().unwrap();
        let ff = filter_function(&seq, PI);
        assert!((ff - 16.0 / (PI * PI)).abs() < 1e-12, "ff = {ff}");
        assert!((ff - 1.62114).abs() < 1e-5);
        for &omega in &[0.3f64, 1.7, 4.0, 11.0] {
            let expect = 16.0 / (omega * omega) * (omega / 2.0).sin().powi(4);
            assert!((filter_function(&seq, omega) - expect).abs() < 1e-12 * expect.max(1.0));
        }
    }

    #[test]
    fn free_evolution_filter() {
        // single segment: |f̃|² = 4 sin²(ωt/2)/ω²
        let seq = PulseSequence::free_evolution(3.0).unwrap();
        for &omega in &[0.2f64, 1.0, 2.5, 9.0] {
            let expect = 4.0 * (1.5 * omega).sin().powi(2) / (omega * omega);
            assert!((filter_function(&seq, omega) - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn filter_at_zero_frequency() {
        let se = SequenceFamily::SpinEcho { tau: 1.0 }.build().unwrap();
        assert_eq!(filter_transform(&se, 0.0).norm(), 0.0);
        let free = PulseSequence::free_evolution(2.0).unwrap();
        assert!((filter_transform(&free, 0.0).re - 2.0).abs() < 1e-15);
    }

    #[test]
    fn fourier_coefficients_match_closed_form() {
        let fam = SequenceFamily::Apcp { tau: 0.7, n: 8 };
        let c = fourier_coefficients(&fam, 11).unwrap();
        assert!((c[1] - 4.0 / (PI * PI)).abs() < 1e-14);
        assert!((c[1] - 0.405285).abs() < 1e-6);
        assert!(c[2].abs() < 1e-28);
        for m in (1..=11).step_by(2) {
            let expect = 4.0 / (PI * PI * (m * m) as f64);
            assert!((c[m] - expect).abs() < 1e-14, "m = {m}");
        }
        for m in (0..=10).step_by(2) {
            assert!(c[m].abs() < 1e-26, "m = {m}");
        }
    }

    #[test]
    fn fourier_partial_sums_approach_half_from_below() {
        let fam = SequenceFamily::Cpmg { tau: 1.0, n: 2 };
        let c = fourier_coefficients(&fam, 401).unwrap();
        let mut partial = 0.0;
        let mut last = 0.0;
        for m in (1..=401).step_by(2) {
            partial += c[m];
            assert!(partial < 0.5, "partial sums stay below 1/2");
            assert!(partial > last);
            last = partial;
        }
        assert!(0.5 - partial < 2e-3);
    }

    #[test]
    fn fourier_rejects_non_equidistant() {
        let fam = SequenceFamily::Udd { t: 1.0, n: 5 };
        assert!(matches!(
            fourier_coefficients(&fam, 3),
            Err(SequenceError::NonEquidistant("udd"))
        ));
    }

    #[test]
    fn equidistant_fast_path_matches_generic() {
        for &(tau, n) in &[(0.5_f64, 1_usize), (0.3, 2), (1.2, 8), (0.05, 64), (0.7, 33)] {
            let seq = SequenceFamily::Cpmg { tau, n }.build().unwrap();
            for i in 0..200 {
                let omega = 1e-3 + 40.0 * i as f64 / (200.0 * tau * n as f64).max(1.0);
                let fast = equidistant_filter_sq(tau, n, omega);
                let slow = filter_function(&seq, omega);
                let scale = slow.abs().max(1e-10 * seq.readout_time().powi(2));
                assert!(
                    (fast - slow).abs() <= 1e-9 * scale,
                    "tau={tau} n={n} omega={omega}: {fast} vs {slow}"
                );
            }
        }
    }

    #[test]
    fn equidistant_fast_path_at_harmonic_peak() {
        // at ω_m = mπ/2τ (m odd) the peak value is (2n/ω)²
        let (tau, n) = (0.4, 16);
        let omega_1 = PI / (2.0 * tau);
        let expect = (2.0 * n as f64 / omega_1).powi(2);
        let got = equidistant_filter_sq(tau, n, omega_1);
        assert!((got - expect).abs() < 1e-9 * expect);
    }

    proptest! {
        #[test]
        fn switching_flips_only_at_pulses(times in proptest::collection::vec(0.01f64..0.99, 1..6)) {
            let mut ts: Vec<f64> = times;
            ts.sort_by(f64::total_cmp);
            ts.dedup_by(|a, b| (*a - *b).abs() < 1e-3);
            let seq = match PulseSequence::new(ts.clone(), 1.0) {
                Ok(s) => s,
                Err(_) => return Ok(()),
            };
            // constant inside segments, sign flip across each pulse
            let b = seq.boundaries();
            for w in b.windows(2) {
                let lo = w[0] + 1e-6;
                let hi = w[1] - 1e-6;
                if hi > lo {
                    prop_assert_eq!(switching_function(&seq, lo), switching_function(&seq, hi));
                }
            }
            for &tk in seq.times() {
                let before = switching_function(&seq, tk - 1e-9);
                let after = switching_function(&seq, tk + 1e-9);
                prop_assert_eq!(before, -after);
            }
        }

        #[test]
        fn filter_sample_invariant(omega in -30.0f64..30.0) {
            let seq = SequenceFamily::Cpmg { tau: 0.5, n: 4 }.build().unwrap();
            let s = FilterSample::evaluate(&seq, omega);
            prop_assert!(s.ff >= 0.0);
            prop_assert!((s.ff - s.complex_value.norm_sqr()).abs() <= 1e-15 * s.ff.max(1.0));
            // |f̃|² is even in ω
            let m = FilterSample::evaluate(&seq, -omega);
            prop_assert!((s.ff - m.ff).abs() <= 1e-12 * s.ff.max(1e-12));
        }
    }
}
