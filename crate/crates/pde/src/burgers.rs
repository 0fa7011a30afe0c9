//! Viscous Burgers `u_t + u u_x = ν u_xx`, RK4 with an integrating factor
//! for the diffusion term.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::ks::sample_sine_terms;
use crate::spectral::{check_extent, dealias_mask, irfft, rfft, sine_superposition, wavenumbers};
use crate::{GridSpec, PdeError, Result};

pub const BURGERS_TERMS: usize = 4;
pub const BURGERS_MAX_WAVENUMBER: u32 = 3;
/// Largest accepted `max|u| dt / dx`.
pub const CFL_LIMIT: f64 = 1.0;

pub fn sample_burgers_ic(seed: u64, n: usize, length: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_burgers_ic_with(&mut rng, n, length)
}

pub fn sample_burgers_ic_with(rng: &mut ChaCha8Rng, n: usize, length: f64) -> Vec<f64> {
    sine_superposition(&sample_sine_terms(rng, BURGERS_TERMS, BURGERS_MAX_WAVENUMBER), n, length)
}

pub fn solve_burgers(u0: &[f64], nu: f64, grid: &GridSpec) -> Result<Vec<Vec<f64>>> {
    grid.validate()?;
    let n = grid.extents[0];
    check_extent(n)?;
    if u0.len() != n {
        return Err(PdeError::Config(format!("initial field has {} points, grid {n}", u0.len())));
    }
    if !(nu > 0.0) {
        return Err(PdeError::Config("viscosity must be positive".into()));
    }
    let (h, dx) = (grid.dt_solver, grid.spacing(0));
    let q: Vec<f64> = wavenumbers(n).iter().map(|k| 2.0 * PI * k / grid.lengths[0]).collect();
    let e: Vec<f64> = q.iter().map(|q| (-nu * q * q * h).exp()).collect();
    let e2: Vec<f64> = q.iter().map(|q| (-nu * q * q * h / 2.0).exp()).collect();
    let mask = dealias_mask(n);
    let nl: Vec<Complex64> = q
        .iter()
        .zip(&mask)
        .map(|(q, &m)| Complex64::new(0.0, if m { -0.5 * q } else { 0.0 }))
        .collect();
    let nonlinear = |v: &[Complex64]| -> Vec<Complex64> {
        let u = irfft(v);
        let sq: Vec<f64> = u.iter().map(|x| x * x).collect();
        rfft(&sq).iter().zip(&nl).map(|(a, b)| a * b).collect()
    };
    let mut v = rfft(u0);
    let mut frames = vec![u0.to_vec()];
    let mut u = u0.to_vec();
    for f in 1..grid.frames() {
        for _ in 0..grid.steps_per_save() {
            let umax = u.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            let courant = umax * h / dx;
            if courant > CFL_LIMIT {
                return Err(PdeError::Cfl { courant, limit: CFL_LIMIT });
            }
            let a = nonlinear(&v);
            let vb: Vec<Complex64> = (0..n).map(|i| e2[i] * (v[i] + 0.5 * h * a[i])).collect();
            let b = nonlinear(&vb);
            let vc: Vec<Complex64> = (0..n).map(|i| e2[i] * v[i] + 0.5 * h * b[i]).collect();
            let c = nonlinear(&vc);
            let vd: Vec<Complex64> = (0..n).map(|i| e[i] * v[i] + h * e2[i] * c[i]).collect();
            let d = nonlinear(&vd);
            for i in 0..n {
                v[i] = e[i] * v[i] + h / 6.0 * (e[i] * a[i] + 2.0 * e2[i] * (b[i] + c[i]) + d[i]);
            }
            u = irfft(&v);
        }
        if u.iter().any(|x| !x.is_finite()) {
            return Err(PdeError::NonFinite { solver: "burgers", t: f as f64 * grid.dt_save, seed: None });
        }
        frames.push(u.clone());
    }
    Ok(frames)
}
