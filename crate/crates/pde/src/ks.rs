//! Kuramoto–Sivashinsky `u_t + u u_x + u_xx + ν u_xxxx = 0` with ETDRK4.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::spectral::{check_extent, dealias_mask, irfft, rfft, sine_superposition, wavenumbers};
use crate::{GridSpec, PdeError, Result};

pub const KS_TERMS: usize = 21;
pub const KS_MAX_WAVENUMBER: u32 = 8;

/// `(A, k, φ)` with `A ~ U[-0.5, 0.5]`, `k ~ U{1..8}`, `φ ~ U[0, 2π)`.
pub fn sample_sine_terms(rng: &mut ChaCha8Rng, terms: usize, k_max: u32) -> Vec<(f64, f64, f64)> {
    (0..terms)
        .map(|_| {
            let a = rng.random_range(-0.5..=0.5);
            let k = rng.random_range(1..=k_max) as f64;
            let phi = rng.random_range(0.0..2.0 * PI);
            (a, k, phi)
        })
        .collect()
}

pub fn sample_ks_ic(seed: u64, n: usize, length: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_ks_ic_with(&mut rng, n, length)
}

pub fn sample_ks_ic_with(rng: &mut ChaCha8Rng, n: usize, length: f64) -> Vec<f64> {
    sine_superposition(&sample_sine_terms(rng, KS_TERMS, KS_MAX_WAVENUMBER), n, length)
}

/// Contour points for the ETDRK4 coefficients.
const CONTOUR: usize = 32;

struct Etdrk4 {
    e: Vec<f64>,
    e2: Vec<f64>,
    q: Vec<f64>,
    f1: Vec<f64>,
    f2: Vec<f64>,
    f3: Vec<f64>,
    /// `-i q / 2` with dealiasing folded in.
    nl: Vec<Complex64>,
}

impl Etdrk4 {
    fn new(n: usize, length: f64, nu: f64, h: f64) -> Self {
        let q: Vec<f64> = wavenumbers(n).iter().map(|k| 2.0 * PI * k / length).collect();
        let lin: Vec<f64> = q.iter().map(|q| q * q - nu * q.powi(4)).collect();
        let roots: Vec<Complex64> = (1..=CONTOUR)
            .map(|j| Complex64::from_polar(1.0, PI * (j as f64 - 0.5) / CONTOUR as f64))
            .collect();
        let mean = |f: &dyn Fn(Complex64) -> Complex64, l: f64| {
            roots.iter().map(|r| f(h * l + r)).sum::<Complex64>().re / CONTOUR as f64
        };
        let mut s = Self {
            e: Vec::with_capacity(n),
            e2: Vec::with_capacity(n),
            q: Vec::with_capacity(n),
            f1: Vec::with_capacity(n),
            f2: Vec::with_capacity(n),
            f3: Vec::with_capacity(n),
            nl: Vec::with_capacity(n),
        };
        let mask = dealias_mask(n);
        for (i, &l) in lin.iter().enumerate() {
            s.e.push((h * l).exp());
            s.e2.push((h * l / 2.0).exp());
            s.q.push(h * mean(&|z| ((z / 2.0).exp() - 1.0) / z, l));
            s.f1.push(h * mean(&|z| (-4.0 - z + z.exp() * (4.0 - 3.0 * z + z * z)) / z.powi(3), l));
            s.f2.push(h * mean(&|z| (2.0 + z + z.exp() * (z - 2.0)) / z.powi(3), l));
            s.f3.push(h * mean(&|z| (-4.0 - 3.0 * z - z * z + z.exp() * (4.0 - z)) / z.powi(3), l));
            let keep = if mask[i] { 1.0 } else { 0.0 };
            s.nl.push(Complex64::new(0.0, -0.5 * q[i] * keep));
        }
        s
    }

    /// `-(u²/2)_x` in Fourier space.
    fn nonlinear(&self, v: &[Complex64]) -> Vec<Complex64> {
        let u = irfft(v);
        let sq: Vec<f64> = u.iter().map(|x| x * x).collect();
        rfft(&sq).iter().zip(&self.nl).map(|(a, b)| a * b).collect()
    }

    fn step(&self, v: &mut [Complex64]) {
        let nv = self.nonlinear(v);
        let a: Vec<Complex64> = (0..v.len()).map(|i| self.e2[i] * v[i] + self.q[i] * nv[i]).collect();
        let na = self.nonlinear(&a);
        let b: Vec<Complex64> = (0..v.len()).map(|i| self.e2[i] * v[i] + self.q[i] * na[i]).collect();
        let nb = self.nonlinear(&b);
        let c: Vec<Complex64> = (0..v.len())
            .map(|i| self.e2[i] * a[i] + self.q[i] * (2.0 * nb[i] - nv[i]))
            .collect();
        let nc = self.nonlinear(&c);
        for i in 0..v.len() {
            v[i] = self.e[i] * v[i]
                + nv[i] * self.f1[i]
                + 2.0 * (na[i] + nb[i]) * self.f2[i]
                + nc[i] * self.f3[i];
        }
    }
}

/// Saved frames of the solution from `u0`, including `u0` itself.
pub fn solve_ks(u0: &[f64], nu: f64, grid: &GridSpec) -> Result<Vec<Vec<f64>>> {
    grid.validate()?;
    let n = grid.extents[0];
    check_extent(n)?;
    if u0.len() != n {
        return Err(PdeError::Config(format!("initial field has {} points, grid {n}", u0.len())));
    }
    let scheme = Etdrk4::new(n, grid.lengths[0], nu, grid.dt_solver);
    let mut v = rfft(u0);
    let mut frames = vec![u0.to_vec()];
    for f in 1..grid.frames() {
        for _ in 0..grid.steps_per_save() {
            scheme.step(&mut v);
        }
        let u = irfft(&v);
        if u.iter().any(|x| !x.is_finite()) {
            return Err(PdeError::NonFinite { solver: "ks", t: f as f64 * grid.dt_save, seed: None });
        }
        frames.push(u);
    }
    Ok(frames)
}
