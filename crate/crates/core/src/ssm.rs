//! Diagonal (S4D) state-space kernels on one sequence axis.
//!
//! Each of the `H` channels owns an independent `N`-mode system
//! `v' = Λ v + B u`, `y = Re(C v) + D u`, discretized with the bilinear
//! rule. The same system can run as a zero-padded FFT convolution with its
//! impulse response or as a recurrent scan with caller-owned state.

use std::io::Write;

use num_complex::Complex64;
use rand::{Rng, RngExt};
use rand_distr::{Distribution, StandardNormal};
use stssm_array::{fft_1d, CustomOp, ParamId, ParamStore, Tape, Tensor, Var};

use crate::{CoreError, Result};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Continuous parameters for `h` channels of `n` modes each, stored
/// channel-major (`[h][n]`).
#[derive(Clone, Debug, PartialEq)]
pub struct S4DParams {
    pub h: usize,
    pub n: usize,
    pub lambda: Vec<Complex64>,
    pub b: Vec<Complex64>,
    pub c: Vec<Complex64>,
    pub d: Vec<f64>,
    pub log_dt: Vec<f64>,
}

impl S4DParams {
    /// S4D-Lin initialization: `λ_n = -1/2 + iπn`, `B = 1`, `C ~ CN(0, 1)`,
    /// `log dt ~ U[ln 1e-3, ln 1e-1]`, `D ~ N(0, 1)`.
    pub fn init_lin<R: Rng + ?Sized>(h: usize, n: usize, rng: &mut R) -> Self {
        let mut lambda = Vec::with_capacity(h * n);
        let mut b = Vec::with_capacity(h * n);
        let mut c = Vec::with_capacity(h * n);
        for _ in 0..h {
            for k in 0..n {
                lambda.push(Complex64::new(-0.5, std::f64::consts::PI * k as f64));
                b.push(Complex64::new(1.0, 0.0));
                let re: f64 = StandardNormal.sample(rng);
                let im: f64 = StandardNormal.sample(rng);
                c.push(Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2);
            }
        }
        let d = (0..h).map(|_| StandardNormal.sample(rng)).collect();
        let (lo, hi) = (1e-3f64.ln(), 1e-1f64.ln());
        let log_dt = (0..h).map(|_| rng.random_range(lo..hi)).collect();
        Self {
            h,
            n,
            lambda,
            b,
            c,
            d,
            log_dt,
        }
    }

    pub fn dt(&self, channel: usize) -> f64 {
        self.log_dt[channel].exp()
    }

    pub fn mode(&self, channel: usize, k: usize) -> usize {
        channel * self.n + k
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteSSM {
    pub h: usize,
    pub n: usize,
    pub abar: Vec<Complex64>,
    pub bbar: Vec<Complex64>,
    pub c: Vec<Complex64>,
    pub d: Vec<f64>,
}

/// Bilinear image of one mode: `(Ā, B̄)`.
pub fn bilinear(lambda: Complex64, b: Complex64, dt: f64) -> Result<(Complex64, Complex64)> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(CoreError::NonPositiveStep(dt));
    }
    let z = lambda * (dt / 2.0);
    let denom = Complex64::new(1.0, 0.0) - z;
    Ok(((Complex64::new(1.0, 0.0) + z) / denom, b * dt / denom))
}

pub fn discretize(p: &S4DParams) -> Result<DiscreteSSM> {
    let mut abar = Vec::with_capacity(p.h * p.n);
    let mut bbar = Vec::with_capacity(p.h * p.n);
    for ch in 0..p.h {
        let dt = p.dt(ch);
        for k in 0..p.n {
            let i = p.mode(ch, k);
            if !(p.lambda[i].re < 0.0) {
                return Err(CoreError::Unstable {
                    channel: ch,
                    mode: k,
                    re: p.lambda[i].re,
                });
            }
            let (a, b) = bilinear(p.lambda[i], p.b[i], dt)?;
            abar.push(a);
            bbar.push(b);
        }
    }
    Ok(DiscreteSSM {
        h: p.h,
        n: p.n,
        abar,
        bbar,
        c: p.c.clone(),
        d: p.d.clone(),
    })
}

/// Complex impulse response `Σ_k C_k Ā_k^t B̄_k`, `[h][len]`.
pub fn materialize_kernel_complex(d: &DiscreteSSM, len: usize) -> Vec<Complex64> {
    let mut out = vec![ZERO; d.h * len];
    for ch in 0..d.h {
        let row = &mut out[ch * len..(ch + 1) * len];
        for k in 0..d.n {
            let i = ch * d.n + k;
            let mut w = d.c[i] * d.bbar[i];
            for slot in row.iter_mut() {
                *slot += w;
                w *= d.abar[i];
            }
        }
    }
    out
}

/// Real kernel `κ[t] = Re Σ_k C_k Ā_k^t B̄_k` as an `[h, len]` tensor. The
/// skip term `D` is kept separate.
pub fn materialize_kernel(d: &DiscreteSSM, len: usize) -> Tensor {
    let k = materialize_kernel_complex(d, len);
    Tensor::from_vec(&[d.h, len], k.iter().map(|z| z.re).collect()).unwrap()
}

fn check_sequence(d: &DiscreteSSM, u: &Tensor) -> Result<usize> {
    if u.rank() != 2 || u.shape()[0] != d.h {
        return Err(CoreError::Shape(format!(
            "expected [{}, L] input, got {:?}",
            d.h,
            u.shape()
        )));
    }
    Ok(u.shape()[1])
}

/// Causal convolution with the impulse response plus the skip term, via a
/// zero-padded FFT of length `next_pow2(2L)`.
pub fn apply_conv(d: &DiscreteSSM, u: &Tensor) -> Result<Tensor> {
    let len = check_sequence(d, u)?;
    if len == 0 {
        return Ok(u.clone());
    }
    let padded = (2 * len).next_power_of_two();
    let kernel = materialize_kernel(d, len);
    let mut out = vec![0.0; d.h * len];
    for ch in 0..d.h {
        let mut kb = vec![ZERO; padded];
        let mut ub = vec![ZERO; padded];
        for t in 0..len {
            kb[t] = Complex64::new(kernel.data()[ch * len + t], 0.0);
            ub[t] = Complex64::new(u.data()[ch * len + t], 0.0);
        }
        let kf = fft_1d(&kb, false)?;
        let uf = fft_1d(&ub, false)?;
        let prod: Vec<Complex64> = kf.iter().zip(&uf).map(|(a, b)| a * b).collect();
        let y = fft_1d(&prod, true)?;
        for t in 0..len {
            out[ch * len + t] = y[t].re + d.d[ch] * u.data()[ch * len + t];
        }
    }
    Ok(Tensor::from_vec(&[d.h, len], out).unwrap())
}

/// Recurrent evaluation `v[t+1] = Ā v[t] + B̄ u[t]`,
/// `y[t] = Re(C·v[t+1]) + D u[t]`. Returns the outputs and the final state
/// (`[h][n]`); `v0 = None` starts from rest.
pub fn apply_scan(
    d: &DiscreteSSM,
    u: &Tensor,
    v0: Option<&[Complex64]>,
) -> Result<(Tensor, Vec<Complex64>)> {
    let len = check_sequence(d, u)?;
    let mut v = match v0 {
        Some(s) if s.len() == d.h * d.n => s.to_vec(),
        Some(s) => {
            return Err(CoreError::Shape(format!(
                "state has {} entries, expected {}",
                s.len(),
                d.h * d.n
            )))
        }
        None => vec![ZERO; d.h * d.n],
    };
    let mut out = vec![0.0; d.h * len];
    for ch in 0..d.h {
        let modes = ch * d.n..(ch + 1) * d.n;
        for t in 0..len {
            let x = u.data()[ch * len + t];
            let mut y = 0.0;
            for i in modes.clone() {
                v[i] = d.abar[i] * v[i] + d.bbar[i] * x;
                y += (d.c[i] * v[i]).re;
            }
            out[ch * len + t] = y + d.d[ch] * x;
        }
    }
    Ok((Tensor::from_vec(&[d.h, len], out).unwrap(), v))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Plus,
    Minus,
}

/// Closed-form continuous kernel of one channel,
/// `κ±(x) = 1_{R±}(x) Σ_k e^{r_k |x|} e^{i ω_k x} C_k B_k`.
pub fn eval_continuous_kernel(p: &S4DParams, channel: usize, side: Side, x: f64) -> Complex64 {
    let on_side = match side {
        Side::Plus => x >= 0.0,
        Side::Minus => x <= 0.0,
    };
    if !on_side {
        return ZERO;
    }
    (0..p.n)
        .map(|k| {
            let i = p.mode(channel, k);
            let l = p.lambda[i];
            (l.re * x.abs()).exp() * Complex64::from_polar(1.0, l.im * x) * p.c[i] * p.b[i]
        })
        .sum()
}

/// CSV with columns `t,channel,kappa_real,kappa_imag`.
pub fn write_kernel_csv<W: Write>(mut w: W, d: &DiscreteSSM, len: usize) -> std::io::Result<()> {
    writeln!(w, "t,channel,kappa_real,kappa_imag")?;
    let k = materialize_kernel_complex(d, len);
    for ch in 0..d.h {
        for t in 0..len {
            let z = k[ch * len + t];
            writeln!(w, "{t},{ch},{:e},{:e}", z.re, z.im)?;
        }
    }
    Ok(())
}

/// Tape parameters of one `S4DParams` block. `Re λ = -exp(rho)` keeps the
/// system stable for every parameter value.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SsmParamIds {
    pub h: usize,
    pub n: usize,
    pub rho: ParamId,
    pub omega: ParamId,
    pub b_re: ParamId,
    pub b_im: ParamId,
    pub c_re: ParamId,
    pub c_im: ParamId,
    pub d: ParamId,
    pub log_dt: ParamId,
}

impl SsmParamIds {
    pub fn register(store: &mut ParamStore, prefix: &str, p: &S4DParams) -> Result<Self> {
        if let Some(i) = p.lambda.iter().position(|l| !(l.re < 0.0)) {
            return Err(CoreError::Unstable {
                channel: i / p.n,
                mode: i % p.n,
                re: p.lambda[i].re,
            });
        }
        let hn = [p.h, p.n];
        let t = |v: Vec<f64>, shape: &[usize]| Tensor::from_vec(shape, v).unwrap();
        let mut add = |name: &str, v: Vec<f64>, shape: &[usize]| {
            store.add(format!("{prefix}.{name}"), t(v, shape))
        };
        Ok(Self {
            h: p.h,
            n: p.n,
            rho: add("rho", p.lambda.iter().map(|l| (-l.re).ln()).collect(), &hn),
            omega: add("omega", p.lambda.iter().map(|l| l.im).collect(), &hn),
            b_re: add("b_re", p.b.iter().map(|z| z.re).collect(), &hn),
            b_im: add("b_im", p.b.iter().map(|z| z.im).collect(), &hn),
            c_re: add("c_re", p.c.iter().map(|z| z.re).collect(), &hn),
            c_im: add("c_im", p.c.iter().map(|z| z.im).collect(), &hn),
            d: add("d", p.d.clone(), &[p.h]),
            log_dt: add("log_dt", p.log_dt.clone(), &[p.h]),
        })
    }

    pub fn params(&self, store: &ParamStore) -> S4DParams {
        let g = |id: ParamId| store.get(id).data();
        let zip = |a: ParamId, b: ParamId| {
            g(a).iter()
                .zip(g(b))
                .map(|(&x, &y)| Complex64::new(x, y))
                .collect()
        };
        S4DParams {
            h: self.h,
            n: self.n,
            lambda: g(self.rho)
                .iter()
                .zip(g(self.omega))
                .map(|(&r, &w)| Complex64::new(-r.exp(), w))
                .collect(),
            b: zip(self.b_re, self.b_im),
            c: zip(self.c_re, self.c_im),
            d: g(self.d).to_vec(),
            log_dt: g(self.log_dt).to_vec(),
        }
    }

    pub fn scalar_count(&self) -> usize {
        6 * self.h * self.n + 2 * self.h
    }

    /// Records the `[h, len]` kernel on the tape.
    pub fn kernel(&self, tape: &mut Tape, store: &ParamStore, len: usize) -> Var {
        let ids = [
            self.rho,
            self.omega,
            self.b_re,
            self.b_im,
            self.c_re,
            self.c_im,
            self.log_dt,
        ];
        let inputs: Vec<Var> = ids.iter().map(|&id| tape.param(store, id)).collect();
        let op = S4dKernel {
            h: self.h,
            n: self.n,
            len,
        };
        let value = {
            let vals: Vec<&Tensor> = inputs.iter().map(|&v| tape.value(v)).collect();
            op.forward(&vals)
        };
        tape.custom(&inputs, value, Box::new(op))
    }

    pub fn skip(&self, tape: &mut Tape, store: &ParamStore) -> Var {
        tape.param(store, self.d)
    }
}

/// Kernel materialization as a tape op. Inputs, in order: `rho`, `omega`,
/// `b_re`, `b_im`, `c_re`, `c_im` (all `[h, n]`) and `log_dt` (`[h]`).
#[derive(Clone, Debug)]
pub struct S4dKernel {
    pub h: usize,
    pub n: usize,
    pub len: usize,
}

struct Mode {
    lambda: Complex64,
    b: Complex64,
    c: Complex64,
    dt: f64,
}

impl S4dKernel {
    fn mode(inputs: &[&Tensor], n: usize, ch: usize, k: usize) -> Mode {
        let i = ch * n + k;
        let v = |j: usize| inputs[j].data()[i];
        Mode {
            lambda: Complex64::new(-v(0).exp(), v(1)),
            b: Complex64::new(v(2), v(3)),
            c: Complex64::new(v(4), v(5)),
            dt: inputs[6].data()[ch].exp(),
        }
    }

    pub fn forward(&self, inputs: &[&Tensor]) -> Tensor {
        let mut out = vec![0.0; self.h * self.len];
        for ch in 0..self.h {
            let row = &mut out[ch * self.len..(ch + 1) * self.len];
            for k in 0..self.n {
                let m = Self::mode(inputs, self.n, ch, k);
                let z = m.lambda * (m.dt / 2.0);
                let one = Complex64::new(1.0, 0.0);
                let a = (one + z) / (one - z);
                let mut w = m.c * m.b * m.dt / (one - z);
                for slot in row.iter_mut() {
                    *slot += w.re;
                    w *= a;
                }
            }
        }
        Tensor::from_vec(&[self.h, self.len], out).unwrap()
    }
}

impl CustomOp for S4dKernel {
    fn name(&self) -> &'static str {
        "s4d_kernel"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        let hn = self.h * self.n;
        let mut g: Vec<Vec<f64>> = (0..6).map(|_| vec![0.0; hn]).collect();
        let mut g_log_dt = vec![0.0; self.h];
        let one = Complex64::new(1.0, 0.0);
        for ch in 0..self.h {
            let gk = &grad[ch * self.len..(ch + 1) * self.len];
            for k in 0..self.n {
                let m = Self::mode(inputs, self.n, ch, k);
                let z = m.lambda * (m.dt / 2.0);
                let omz = one - z;
                let a = (one + z) / omz;
                let bbar = m.b * m.dt / omz;
                let q = m.c * bbar;
                // S0 = Σ G_j a^j, S1 = Σ G_j j a^(j-1)
                let (mut s0, mut s1) = (ZERO, ZERO);
                let (mut p, mut pm1) = (one, ZERO);
                for (j, &gj) in gk.iter().enumerate() {
                    s0 += p * gj;
                    s1 += pm1 * (gj * j as f64);
                    pm1 = p;
                    p *= a;
                }
                let g_q = s0.conj();
                let g_a = (q * s1).conj();
                let g_c = bbar.conj() * g_q;
                let g_bbar = m.c.conj() * g_q;
                let g_b = (m.dt / omz).conj() * g_bbar;
                let g_z = (m.b * m.dt / (omz * omz)).conj() * g_bbar + (2.0 / (omz * omz)).conj() * g_a;
                let g_lambda = g_z * (m.dt / 2.0);
                let dl_ddt = (g_z.conj() * m.lambda / 2.0).re + (g_bbar.conj() * m.b / omz).re;
                let i = ch * self.n + k;
                g[0][i] = m.lambda.re * g_lambda.re;
                g[1][i] = g_lambda.im;
                g[2][i] = g_b.re;
                g[3][i] = g_b.im;
                g[4][i] = g_c.re;
                g[5][i] = g_c.im;
                g_log_dt[ch] += m.dt * dl_ddt;
            }
        }
        let mut out: Vec<Option<Vec<f64>>> = g.into_iter().map(Some).collect();
        out.push(Some(g_log_dt));
        out
    }
}
