//! Independent oracles for the integration suites: a numeric Fourier
//! transform of the switching function (segment-aligned Romberg trapezoid)
//! and a dense Hilbert-space simulator for small spin baths.
//!
//! Shared across test binaries; each uses its own subset.
#![allow(dead_code)]

use noisespec_core::pulses::{switching_function, PulseSequence};
use num_complex::Complex64;

/// Numeric `∫ dt' e^{iωt'} f_t(t')` by iterated trapezoid sums with
/// Richardson extrapolation, sampling the switching function itself on
/// segment-aligned grids. Independent of the closed-form transform.
pub fn numeric_filter_transform(seq: &PulseSequence, omega: f64) -> Complex64 {
    let bounds = seq.boundaries();
    let mut total = Complex64::new(0.0, 0.0);
    for w in bounds.windows(2) {
        let (a, b) = (w[0], w[1]);
        let len = b - a;
        let waves = (omega.abs() * len / (2.0 * std::f64::consts::PI)).ceil().max(1.0);
        let n0 = ((waves * 12.0) as usize).max(16);
        let g = |t: f64| {
            let f = switching_function(seq, t.min(b - 1e-13 * len).max(a)) as f64;
            Complex64::from_polar(f, omega * t)
        };
        // Romberg table over 4 trapezoid levels
        let mut row: Vec<Complex64> = Vec::with_capacity(4);
        for level in 0..4 {
            let n = n0 << level;
            let h = len / n as f64;
            let mut acc = (g(a) + g(b)) * 0.5;
            for i in 1..n {
                acc += g(a + i as f64 * h);
            }
            row.push(acc * h);
        }
        for j in 1..4 {
            let factor = 4.0f64.powi(j as i32);
            for k in (j..4).rev() {
                row[k] = (row[k] * factor - row[k - 1]) / (factor - 1.0);
            }
        }
        total += row[3];
    }
    total
}

/// Dense-matrix evolution of a qubit + ≤ a few bath spins under ideal
/// π-pulses, tracking the full density matrix. Brute force on purpose.
pub mod dense {
    use noisespec_core::spectra::SpinMode;
    use num_complex::Complex64;

    /// Cyclic Jacobi eigendecomposition of a real symmetric matrix
    /// (row-major). Returns eigenvalues; `a` is overwritten with the
    /// accumulated rotations so that column k of the result is the k-th
    /// eigenvector.
    fn jacobi_eigen(n: usize, a: &mut [f64]) -> Vec<f64> {
        let mut v = vec![0.0; n * n];
        for i in 0..n {
            v[i * n + i] = 1.0;
        }
        for _sweep in 0..100 {
            let mut off = 0.0;
            for i in 0..n {
                for j in i + 1..n {
                    off += a[i * n + j] * a[i * n + j];
                }
            }
            if off < 1e-26 {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    let apq = a[p * n + q];
                    if apq.abs() < 1e-300 {
                        continue;
                    }
                    let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let akp = a[k * n + p];
                        let akq = a[k * n + q];
                        a[k * n + p] = c * akp - s * akq;
                        a[k * n + q] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let apk = a[p * n + k];
                        let aqk = a[q * n + k];
                        a[p * n + k] = c * apk - s * aqk;
                        a[q * n + k] = s * apk + c * aqk;
                    }
                    for k in 0..n {
                        let vkp = v[k * n + p];
                        let vkq = v[k * n + q];
                        v[k * n + p] = c * vkp - s * vkq;
                        v[k * n + q] = s * vkp + c * vkq;
                    }
                }
            }
        }
        let eig: Vec<f64> = (0..n).map(|i| a[i * n + i]).collect();
        a.copy_from_slice(&v);
        eig
    }

    /// Qubit (highest bit) ⊗ bath spins, all Pauli algebra.
    pub struct DephasingModel {
        dim: usize,
        eigvals: Vec<f64>,
        eigvecs: Vec<f64>, // column k = eigenvector k
    }

    impl DephasingModel {
        /// H = (Ω + Σ_j 2μ_j s_x^j)/2 · σ_z + Σ_j (ω_j/2) s_z^j
        pub fn new(splitting: f64, modes: &[SpinMode]) -> Self {
            let m = modes.len();
            let dim = 1 << (m + 1);
            let mut h = vec![0.0; dim * dim];
            let sign = |i: usize, bit: usize| 1.0 - 2.0 * ((i >> bit) & 1) as f64;
            for i in 0..dim {
                let qubit = sign(i, m);
                let mut diag = 0.5 * splitting * qubit;
                for (j, mode) in modes.iter().enumerate() {
                    diag += 0.5 * mode.omega * sign(i, j);
                }
                h[i * dim + i] = diag;
                for (j, mode) in modes.iter().enumerate() {
                    h[(i ^ (1 << j)) * dim + i] += mode.mu * qubit;
                }
            }
            let eigvals = jacobi_eigen(dim, &mut h);
            Self {
                dim,
                eigvals,
                eigvecs: h,
            }
        }

        fn propagator(&self, dt: f64) -> Vec<Complex64> {
            let d = self.dim;
            let mut u = vec![Complex64::new(0.0, 0.0); d * d];
            // U = V e^{-iΛdt} Vᵀ
            for i in 0..d {
                for j in 0..d {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for k in 0..d {
                        let phase = Complex64::from_polar(1.0, -self.eigvals[k] * dt);
                        acc += self.eigvecs[i * d + k] * self.eigvecs[j * d + k] * phase;
                    }
                    u[i * d + j] = acc;
                }
            }
            u
        }

        /// |ρ_{+−}(t)| / |ρ_{+−}(0)| with the qubit prepared transverse and
        /// the bath in any diagonal state (`weights` over bath basis states,
        /// normalized internally).
        pub fn coherence(&self, pulse_times: &[f64], readout: f64, weights: &[f64]) -> f64 {
            let d = self.dim;
            let half = d / 2;
            let norm: f64 = weights.iter().sum();
            // ρ(0) = |+x⟩⟨+x| ⊗ diag(weights)/norm
            let mut rho = vec![Complex64::new(0.0, 0.0); d * d];
            for b in 0..half {
                let p = 0.5 * weights[b] / norm;
                for (s1, s2) in [(0usize, 0usize), (0, 1), (1, 0), (1, 1)] {
                    rho[(s1 * half + b) * d + (s2 * half + b)] = Complex64::new(p, 0.0);
                }
            }
            let coherence_of = |rho: &Vec<Complex64>| -> Complex64 {
                (0..half).map(|b| rho[b * d + (half + b)]).sum()
            };
            let w0 = coherence_of(&rho).norm();

            let mut prev = 0.0;
            for &tk in pulse_times {
                rho = self.evolved(&rho, tk - prev);
                // ideal π-pulse about x on the qubit: flip the qubit bit;
                // the (−i)² prefactors cancel between U and U†
                rho = flip_qubit(&rho, d, half);
                prev = tk;
            }
            rho = self.evolved(&rho, readout - prev);
            coherence_of(&rho).norm() / w0
        }

        fn evolved(&self, rho: &[Complex64], dt: f64) -> Vec<Complex64> {
            let d = self.dim;
            let u = self.propagator(dt);
            // U ρ U†
            let mut tmp = vec![Complex64::new(0.0, 0.0); d * d];
            for i in 0..d {
                for k in 0..d {
                    let uik = u[i * d + k];
                    if uik.norm_sqr() == 0.0 {
                        continue;
                    }
                    for j in 0..d {
                        tmp[i * d + j] += uik * rho[k * d + j];
                    }
                }
            }
            let mut out = vec![Complex64::new(0.0, 0.0); d * d];
            for i in 0..d {
                for j in 0..d {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for k in 0..d {
                        acc += tmp[i * d + k] * u[j * d + k].conj();
                    }
                    out[i * d + j] = acc;
                }
            }
            out
        }
    }

    fn flip_qubit(rho: &[Complex64], d: usize, half: usize) -> Vec<Complex64> {
        let flip = |i: usize| (i + half) % d;
        let mut out = vec![Complex64::new(0.0, 0.0); d * d];
        for i in 0..d {
            for j in 0..d {
                out[flip(i) * d + flip(j)] = rho[i * d + j];
            }
        }
        out
    }
}
