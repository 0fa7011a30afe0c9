//! Navier–Stokes in vorticity form on the unit torus,
//! `ω_t + u·∇ω = νΔω + f`, with `Δψ = -ω` and `u = (ψ_y, -ψ_x)`.
//! Diffusion is Crank–Nicolson, advection Adams–Bashforth 2, forcing is
//! sampled at the half step. Fields are `[x, y]` row-major on `n × n`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::spectral::{check_extent, dealias_mask, irfft2, rfft2, wavenumbers};
use crate::{GridSpec, PdeError, Result};

const TAU: f64 = 7.0;
const ALPHA: f64 = 2.5;

/// Standard deviation of the Fourier coefficient at integer wavenumber
/// `k`: `7^{3/2} (4π²|k|² + 49)^{-5/4}`.
pub fn grf_std(k2: f64) -> f64 {
    TAU.powf(1.5) * (4.0 * PI * PI * k2 + TAU * TAU).powf(-ALPHA / 2.0)
}

/// Gaussian random field `N(0, 7^{3/2} (-Δ + 49)^{-2.5})`, zero mean. The
/// spectrum of a real white-noise field is Hermitian, so the result is real.
pub fn sample_grf_vorticity(seed: u64, n: usize) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_grf_with(&mut rng, n)
}

pub fn sample_grf_with(rng: &mut ChaCha8Rng, n: usize) -> Result<Vec<f64>> {
    check_extent(n)?;
    let noise: Vec<f64> = (0..n * n).map(|_| StandardNormal.sample(rng)).collect();
    let mut w = rfft2(&noise, n);
    let k = wavenumbers(n);
    for i in 0..n {
        for j in 0..n {
            let k2 = k[i] * k[i] + k[j] * k[j];
            w[i * n + j] *= if k2 == 0.0 { 0.0 } else { grf_std(k2) * n as f64 };
        }
    }
    Ok(irfft2(&w, n))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Forcing {
    None,
    /// `0.1 [sin(2π(x+y)) + cos(2π(x+y))]`.
    Fixed,
    /// `0.1 Σ_{p,i,j} [α sin(2πp(ix+jy) + δt) + β cos(2πp(ix+jy) + δt)]`
    /// over `p ∈ {1,2}`, `i, j ∈ {0,1}`; coefficients indexed `[p-1][i][j]`.
    Random {
        alpha: [[[f64; 2]; 2]; 2],
        beta: [[[f64; 2]; 2]; 2],
        delta: f64,
    },
}

impl Forcing {
    pub fn sample(seed: u64, delta: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::sample_with(&mut rng, delta)
    }

    pub fn sample_with(rng: &mut ChaCha8Rng, delta: f64) -> Self {
        let mut draw = || {
            let mut c = [[[0.0; 2]; 2]; 2];
            c.iter_mut().flatten().flatten().for_each(|v| *v = rng.random_range(0.0..1.0));
            c
        };
        let alpha = draw();
        let beta = draw();
        Forcing::Random { alpha, beta, delta }
    }

    pub fn is_time_dependent(&self) -> bool {
        matches!(self, Forcing::Random { delta, .. } if *delta != 0.0)
    }

    pub fn eval(&self, t: f64, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let (x, y) = (i as f64 / n as f64, j as f64 / n as f64);
                out[i * n + j] = match self {
                    Forcing::None => 0.0,
                    Forcing::Fixed => {
                        let a = 2.0 * PI * (x + y);
                        0.1 * (a.sin() + a.cos())
                    }
                    Forcing::Random { alpha, beta, delta } => {
                        let mut s = 0.0;
                        for p in 0..2 {
                            for a in 0..2 {
                                for b in 0..2 {
                                    let arg = 2.0 * PI * (p + 1) as f64 * (a as f64 * x + b as f64 * y) + delta * t;
                                    s += alpha[p][a][b] * arg.sin() + beta[p][a][b] * arg.cos();
                                }
                            }
                        }
                        0.1 * s
                    }
                };
            }
        }
        out
    }
}

pub fn make_forcing(seed: u64, delta: f64, t: f64, n: usize) -> Vec<f64> {
    Forcing::sample(seed, delta).eval(t, n)
}

/// Precomputed spectral operators for one grid and viscosity.
pub struct NsSolver {
    pub n: usize,
    pub nu: f64,
    pub dt: f64,
    kx: Vec<f64>,
    ky: Vec<f64>,
    /// `1 / (4π²|k|²)` with the mean mode set to zero.
    inv_lap: Vec<f64>,
    mask: Vec<bool>,
    /// Crank–Nicolson factors `(1 - a) / (1 + a)` and `1 / (1 + a)`.
    cn_keep: Vec<f64>,
    cn_in: Vec<f64>,
}

impl NsSolver {
    pub fn new(n: usize, nu: f64, dt: f64) -> Result<Self> {
        check_extent(n)?;
        if !(dt > 0.0) || !(nu >= 0.0) {
            return Err(PdeError::BadStep(format!("dt {dt}, nu {nu}")));
        }
        let k = wavenumbers(n);
        let m = dealias_mask(n);
        let mut s = Self {
            n,
            nu,
            dt,
            kx: Vec::with_capacity(n * n),
            ky: Vec::with_capacity(n * n),
            inv_lap: Vec::with_capacity(n * n),
            mask: Vec::with_capacity(n * n),
            cn_keep: Vec::with_capacity(n * n),
            cn_in: Vec::with_capacity(n * n),
        };
        for i in 0..n {
            for j in 0..n {
                let (a, b) = (2.0 * PI * k[i], 2.0 * PI * k[j]);
                let lap = a * a + b * b;
                s.kx.push(a);
                s.ky.push(b);
                s.inv_lap.push(if lap == 0.0 { 0.0 } else { 1.0 / lap });
                s.mask.push(m[i] && m[j]);
                let h = 0.5 * dt * nu * lap;
                s.cn_keep.push((1.0 - h) / (1.0 + h));
                s.cn_in.push(1.0 / (1.0 + h));
            }
        }
        Ok(s)
    }

    /// Velocity `(ψ_y, -ψ_x)` from vorticity.
    pub fn velocity(&self, w_hat: &[Complex64]) -> (Vec<f64>, Vec<f64>) {
        let i = Complex64::new(0.0, 1.0);
        let psi: Vec<Complex64> = w_hat.iter().zip(&self.inv_lap).map(|(w, l)| w * l).collect();
        let u: Vec<Complex64> = psi.iter().zip(&self.ky).map(|(p, k)| i * k * p).collect();
        let v: Vec<Complex64> = psi.iter().zip(&self.kx).map(|(p, k)| -i * k * p).collect();
        (irfft2(&u, self.n), irfft2(&v, self.n))
    }

    /// `-(u·∇ω)` in Fourier space, dealiased.
    pub fn advection(&self, w_hat: &[Complex64]) -> Vec<Complex64> {
        let i = Complex64::new(0.0, 1.0);
        let (u, v) = self.velocity(w_hat);
        let wx: Vec<Complex64> = w_hat.iter().zip(&self.kx).map(|(w, k)| i * k * w).collect();
        let wy: Vec<Complex64> = w_hat.iter().zip(&self.ky).map(|(w, k)| i * k * w).collect();
        let (wx, wy) = (irfft2(&wx, self.n), irfft2(&wy, self.n));
        let prod: Vec<f64> = (0..u.len()).map(|p| -(u[p] * wx[p] + v[p] * wy[p])).collect();
        let mut out = rfft2(&prod, self.n);
        for (o, &m) in out.iter_mut().zip(&self.mask) {
            if !m {
                *o = Complex64::new(0.0, 0.0);
            }
        }
        out
    }

    /// One step; `prev` holds the previous advection term (Euler when absent).
    pub fn step(&self, w_hat: &mut [Complex64], prev: &mut Option<Vec<Complex64>>, f_hat: &[Complex64]) {
        let adv = self.advection(w_hat);
        for p in 0..w_hat.len() {
            let explicit = match prev {
                Some(old) => 1.5 * adv[p] - 0.5 * old[p],
                None => adv[p],
            };
            w_hat[p] = self.cn_keep[p] * w_hat[p] + self.dt * self.cn_in[p] * (explicit + f_hat[p]);
        }
        *prev = Some(adv);
    }
}

/// `½ ∫ |u|²` over the unit torus (grid mean).
pub fn energy(solver: &NsSolver, w: &[f64]) -> f64 {
    let (u, v) = solver.velocity(&rfft2(w, solver.n));
    0.5 * u.iter().zip(&v).map(|(a, b)| a * a + b * b).sum::<f64>() / w.len() as f64
}

/// `½ ∫ ω²` over the unit torus (grid mean).
pub fn enstrophy(w: &[f64]) -> f64 {
    0.5 * w.iter().map(|x| x * x).sum::<f64>() / w.len() as f64
}

/// Saved vorticity frames and the forcing at the same times.
pub fn solve_ns_vorticity(
    w0: &[f64],
    nu: f64,
    forcing: &Forcing,
    grid: &GridSpec,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    grid.validate()?;
    let n = grid.extents[0];
    if grid.extents.len() != 2 || grid.extents[1] != n {
        return Err(PdeError::Config("vorticity solver needs a square 2D grid".into()));
    }
    if w0.len() != n * n {
        return Err(PdeError::Config(format!("initial field has {} points, grid {n}²", w0.len())));
    }
    let solver = NsSolver::new(n, nu, grid.dt_solver)?;
    let mut w_hat = rfft2(w0, n);
    let mut prev = None;
    let mut frames = vec![w0.to_vec()];
    let mut forces = vec![forcing.eval(0.0, n)];
    // f(t) = cos(δt) f(0) + sin(δt) f(π / 2δ)
    let f0 = rfft2(&forces[0], n);
    let quarter = match forcing {
        Forcing::Random { delta, .. } if *delta != 0.0 => Some(rfft2(&forcing.eval(PI / (2.0 * delta), n), n)),
        _ => None,
    };
    let mut f_hat = f0.clone();
    let mut step = 0usize;
    for f in 1..grid.frames() {
        for _ in 0..grid.steps_per_save() {
            if let (Some(f1), Forcing::Random { delta, .. }) = (&quarter, forcing) {
                let phase = delta * (step as f64 + 0.5) * grid.dt_solver;
                let (s, c) = phase.sin_cos();
                for ((out, a), b) in f_hat.iter_mut().zip(&f0).zip(f1) {
                    *out = c * a + s * b;
                }
            }
            solver.step(&mut w_hat, &mut prev, &f_hat);
            step += 1;
        }
        let w = irfft2(&w_hat, n);
        if w.iter().any(|x| !x.is_finite()) {
            return Err(PdeError::NonFinite { solver: "ns", t: f as f64 * grid.dt_save, seed: None });
        }
        frames.push(w);
        forces.push(forcing.eval(f as f64 * grid.dt_save, n));
    }
    Ok((frames, forces))
}
