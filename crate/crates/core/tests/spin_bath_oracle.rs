//! Cross-validation of the spin-bath coherence routes against dense
//! Hilbert-space evolution.

mod common;

use common::dense::DephasingModel;
use noisespec_core::*;

#[test]
fn dense_simulator_matches_two_level_algebra() {
    // single mode, no pulses: the two sector propagators give
    // W = |c² + s² cos 2α| directly, an independent check of the simulator
    let (omega, mu, t): (f64, f64, f64) = (1.3, 0.4, 0.9);
    let alpha = (2.0 * mu / omega).atan();
    let gamma = (omega * omega + 4.0 * mu * mu).sqrt();
    let (s, c) = (0.5 * gamma * t).sin_cos();
    let hand = (c * c + s * s * (2.0 * alpha).cos()).abs();
    let model = DephasingModel::new(0.7, &[SpinMode { omega, mu }]);
    let brute = model.coherence(&[], t, &[1.0, 1.0]);
    assert!(
        (hand - brute).abs() < 1e-12,
        "dense {brute} vs sector algebra {hand}"
    );
}

#[test]
fn product_formula_accuracy_scales_with_coupling() {
    // the product formula drops O((μ/ω)⁴) terms per mode; its deviation from
    // the full evolution must shrink accordingly
    let fam = SequenceFamily::Cpmg { tau: 0.7, n: 4 };
    let seq = fam.build().unwrap();
    let omega: f64 = 1.3;
    let mut devs = Vec::new();
    for &ratio in &[0.1, 0.03, 0.01] {
        let modes = vec![SpinMode {
            omega,
            mu: ratio * omega,
        }];
        let bath = SpinBath::new(modes.clone()).unwrap();
        let closed = spin_spin_exact(&seq, &bath);
        let model = DephasingModel::new(0.7, &modes);
        let brute = model.coherence(seq.times(), seq.readout_time(), &[1.0, 1.0]);
        devs.push((closed - brute).abs());
    }
    assert!(devs[0] > devs[1] && devs[1] > devs[2], "{devs:?}");
    // a decade in coupling buys about four decades in accuracy
    let order = (devs[0] / devs[2]).log10();
    assert!(order > 3.0 && order < 5.0, "observed order {order:.2}: {devs:?}");
}

#[test]
fn splitting_independence_of_qubit_phase() {
    // W is a modulus; the static qubit splitting must drop out entirely
    let seq = SequenceFamily::Cpmg { tau: 0.7, n: 4 }.build().unwrap();
    let modes = vec![SpinMode {
        omega: 1.3,
        mu: 0.013,
    }];
    let a = DephasingModel::new(0.0, &modes).coherence(seq.times(), seq.readout_time(), &[1.0, 1.0]);
    let b = DephasingModel::new(2.9, &modes).coherence(seq.times(), seq.readout_time(), &[1.0, 1.0]);
    assert!((a - b).abs() < 1e-12, "{a} vs {b}");
}
