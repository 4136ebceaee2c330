//! Filter-function identities on irregular sequences and the spectrum
//! definition cross-check against a numeric transform of the
//! autocorrelation.

use noisespec_core::*;
use rand::RngExt;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

#[test]
fn parseval_on_random_sequences() {
    // (1/2π)∫_0^∞ |f̃|² dω = t/2 to 0.1% for arbitrary pulse placements
    let mut rng = ChaCha8Rng::seed_from_u64(424242);
    for _ in 0..3 {
        let n = rng.random_range(1..=9usize);
        let gaps: Vec<f64> = (0..n + 1).map(|_| rng.random_range(0.4..1.0)).collect();
        let total: f64 = gaps.iter().sum();
        let mut acc = 0.0;
        let times: Vec<f64> = gaps[..n]
            .iter()
            .map(|g| {
                acc += g / total;
                acc
            })
            .collect();
        let seq = PulseSequence::new(times, 1.0).unwrap();
        let t = seq.readout_time();
        let omega_max = 500.0 / seq.min_gap();
        let steps = ((omega_max * 20.0 * t / PI).ceil() as usize + 1) & !1usize;
        let h = omega_max / steps as f64;
        let mut integral = filter_function(&seq, 0.0) + filter_function(&seq, omega_max);
        for i in 1..steps {
            let coeff = if i % 2 == 1 { 4.0 } else { 2.0 };
            integral += coeff * filter_function(&seq, i as f64 * h);
        }
        integral *= h / 3.0;
        // mean-envelope tail: ∫_Ω^∞ |f̃|² dω → (4n+2)/Ω
        integral += (4 * n + 2) as f64 / omega_max;
        let one_sided = integral / (2.0 * PI);
        assert!(
            (one_sided / (0.5 * t) - 1.0).abs() <= 1e-3,
            "n={n}: {one_sided} vs {}",
            0.5 * t
        );
    }
}

#[test]
fn lorentzian_matches_autocorrelation_transform() {
    // S(ω) must equal 2∫_0^∞ σ² e^{−t/τ_c} cos(ωt) dt within 0.5% over
    // ωτ_c ∈ [0, 20]
    let (sigma2, tau_c) = (1.3, 0.8);
    let s = NoiseSpectrum::lorentzian(sigma2, tau_c).unwrap();
    let t_max = 40.0 * tau_c;
    let steps = 400_000usize;
    let h = t_max / steps as f64;
    for i in 0..=20 {
        let omega = i as f64 / tau_c;
        let f = |t: f64| sigma2 * (-t / tau_c).exp() * (omega * t).cos();
        let mut acc = f(0.0) + f(t_max);
        for j in 1..steps {
            acc += f(j as f64 * h) * if j % 2 == 1 { 4.0 } else { 2.0 };
        }
        let numeric = 2.0 * acc * h / 3.0;
        let model = s.eval(omega);
        assert!(
            (numeric - model).abs() <= 5e-3 * model,
            "omega={omega}: {numeric} vs {model}"
        );
    }
}
