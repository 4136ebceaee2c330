//! Minimal iterative radix-2 FFT for periodogram estimation.

use num_complex::Complex64;

/// In-place forward DFT, `X_k = Σ_j x_j e^{−2πi jk/n}`. Length must be a
/// power of two.
pub(crate) fn fft_in_place(x: &mut [Complex64]) {
    let n = x.len();
    assert!(n.is_power_of_two(), "fft length must be a power of two");
    // bit-reversal permutation
    let mut j = 0usize;
    for i in 1..n {
        let mut bit = n >> 1;
        while j & bit != 0 {
            j ^= bit;
            bit >>= 1;
        }
        j |= bit;
        if i < j {
            x.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let ang = -2.0 * std::f64::consts::PI / len as f64;
        for start in (0..n).step_by(len) {
            for k in 0..len / 2 {
                let (s, c) = (ang * k as f64).sin_cos();
                let w = Complex64::new(c, s);
                let u = x[start + k];
                let v = x[start + k + len / 2] * w;
                x[start + k] = u + v;
                x[start + k + len / 2] = u - v;
            }
        }
        len <<= 1;
    }
}

pub(crate) fn next_pow2(n: usize) -> usize {
    n.next_power_of_two()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_direct_dft() {
        let n = 64;
        let x: Vec<Complex64> = (0..n)
            .map(|i| Complex64::new((i as f64 * 0.37).sin(), (i as f64 * 0.11).cos()))
            .collect();
        let mut fast = x.clone();
        fft_in_place(&mut fast);
        for (k, &f) in fast.iter().enumerate() {
            let mut direct = Complex64::new(0.0, 0.0);
            for (j, &xj) in x.iter().enumerate() {
                let ang = -2.0 * std::f64::consts::PI * (j * k) as f64 / n as f64;
                direct += xj * Complex64::new(ang.cos(), ang.sin());
            }
            assert!((f - direct).norm() < 1e-9);
        }
    }
}
