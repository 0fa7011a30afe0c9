//! Wavenumbers, dealiasing masks and real-field transforms.

use num_complex::Complex64;
use stssm_array::{fft_1d, fft_axes};

use crate::{PdeError, Result};

/// Integer wavenumbers in FFT order; the Nyquist bin is `-n/2`.
pub fn wavenumbers(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| if i < n / 2 { i as f64 } else { i as f64 - n as f64 })
        .collect()
}

/// 2/3 rule: keep `|k| <= n/3`.
pub fn dealias_mask(n: usize) -> Vec<bool> {
    wavenumbers(n).iter().map(|k| 3.0 * k.abs() <= n as f64).collect()
}

pub fn check_extent(n: usize) -> Result<()> {
    if n.is_power_of_two() && n >= 2 {
        Ok(())
    } else {
        Err(PdeError::NotPowerOfTwo(n))
    }
}

pub fn rfft(x: &[f64]) -> Vec<Complex64> {
    let c: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft_1d(&c, false).expect("power-of-two length")
}

pub fn irfft(x: &[Complex64]) -> Vec<f64> {
    fft_1d(x, true).expect("power-of-two length").into_iter().map(|c| c.re).collect()
}

pub fn rfft2(x: &[f64], n: usize) -> Vec<Complex64> {
    let mut c: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft_axes(&mut c, &[n, n], &[0, 1], false).expect("power-of-two grid");
    c
}

pub fn irfft2(x: &[Complex64], n: usize) -> Vec<f64> {
    let mut c = x.to_vec();
    fft_axes(&mut c, &[n, n], &[0, 1], true).expect("power-of-two grid");
    c.into_iter().map(|v| v.re).collect()
}

/// `Σ A sin(2π k x / L + φ)` on `n` points of `[0, L)`.
pub fn sine_superposition(terms: &[(f64, f64, f64)], n: usize, length: f64) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let x = i as f64 * length / n as f64;
            terms
                .iter()
                .map(|&(a, k, phi)| a * (2.0 * std::f64::consts::PI * k * x / length + phi).sin())
                .sum()
        })
        .collect()
}
