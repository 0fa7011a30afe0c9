//! Neural-operator layers on channel-last tensors.
//!
//! Every layer has the same outer form. The default is
//! `v + GELU(W v + b + K v)`; the feed-forward form used by F-FNO blocks
//! and the ST-SSM-FF variant is `v + W₂ GELU(W₁ K v)` with a 2H hidden width.
//! Only the kernel `K` differs: bidirectional or unidirectional state-space
//! scans along spatial axes, or truncated Fourier multipliers.

use num_complex::Complex64;
use rand::{Rng, RngExt};
use stssm_array::{fft_axes, CustomOp, ParamId, ParamStore, Tape, Tensor, Var};

use crate::ssm::{apply_conv, discretize, S4DParams, SsmParamIds};
use crate::{CoreError, Result};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Pointwise affine map over the channel axis, stored as `[out, in]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Dense {
    /// Uniform init on `±1/sqrt(fan_in)` for weights and bias.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let mut draw = |n: usize| (0..n).map(|_| rng.random_range(-bound..bound)).collect::<Vec<_>>();
        let w = Tensor::from_vec(&[fan_out, fan_in], draw(fan_in * fan_out)).unwrap();
        let b = Tensor::from_vec(&[fan_out], draw(fan_out)).unwrap();
        Self {
            w: store.add(format!("{name}.w"), w),
            b: store.add(format!("{name}.b"), b),
            fan_in,
            fan_out,
        }
    }

    pub fn apply(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Var {
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        tape.linear(x, w, Some(b))
    }

    pub fn scalar_count(&self) -> usize {
        self.fan_in * self.fan_out + self.fan_out
    }
}

/// Forward and backward scans along one axis:
/// `y = M_fwd(v) + flip(M_bwd(flip(v)))`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BidirSsm {
    pub fwd: SsmParamIds,
    pub bwd: SsmParamIds,
    pub axis: usize,
}

impl BidirSsm {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        h: usize,
        n: usize,
        axis: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let fwd = SsmParamIds::register(store, &format!("{name}.fwd"), &S4DParams::init_lin(h, n, rng))?;
        let bwd = SsmParamIds::register(store, &format!("{name}.bwd"), &S4DParams::init_lin(h, n, rng))?;
        Ok(Self { fwd, bwd, axis })
    }

    pub fn apply(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Var {
        let len = tape.value(x).shape()[self.axis];
        let yf = scan_conv(tape, store, &self.fwd, x, self.axis, len, false);
        let yb = scan_conv(tape, store, &self.bwd, x, self.axis, len, true);
        tape.add(yf, yb)
    }

    pub fn scalar_count(&self) -> usize {
        self.fwd.scalar_count() + self.bwd.scalar_count()
    }
}

/// A single scan along one axis, forward (`reverse = false`) or backward.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct UnidirSsm {
    pub ssm: SsmParamIds,
    pub axis: usize,
    pub reverse: bool,
}

impl UnidirSsm {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        h: usize,
        n: usize,
        axis: usize,
        reverse: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let ssm = SsmParamIds::register(store, name, &S4DParams::init_lin(h, n, rng))?;
        Ok(Self { ssm, axis, reverse })
    }

    pub fn apply(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Var {
        let len = tape.value(x).shape()[self.axis];
        scan_conv(tape, store, &self.ssm, x, self.axis, len, self.reverse)
    }
}

/// Kernel of `taps` steps applied along `axis` with the skip term.
pub fn scan_conv(
    tape: &mut Tape,
    store: &ParamStore,
    ssm: &SsmParamIds,
    x: Var,
    axis: usize,
    taps: usize,
    reverse: bool,
) -> Var {
    let k = ssm.kernel(tape, store, taps);
    let d = ssm.skip(tape, store);
    tape.axis_conv(x, k, Some(d), axis, reverse)
}

/// Truncated Fourier multiplier over one or more axes. Cutoffs are
/// inclusive: axis `a` keeps `|k| ≤ cutoffs[a]`, and the last transformed
/// axis keeps only `k ≥ 0` (the other half follows from conjugate symmetry).
#[derive(Clone, Debug)]
pub struct SpectralPlan {
    shape: Vec<usize>,
    axes: Vec<usize>,
    channels: usize,
    bases: Vec<usize>,
    modes: Vec<(usize, f64)>,
    spatial: usize,
}

impl SpectralPlan {
    pub fn new(shape: &[usize], axes: &[usize], cutoffs: &[usize]) -> Result<Self> {
        let rank = shape.len();
        if axes.is_empty() || axes.len() != cutoffs.len() {
            return Err(CoreError::Shape("one cutoff per transformed axis required".into()));
        }
        if axes.windows(2).any(|w| w[0] >= w[1]) || *axes.last().unwrap() + 1 >= rank {
            return Err(CoreError::Shape(format!(
                "axes {axes:?} must be increasing and exclude the channel axis of {shape:?}"
            )));
        }
        for (&a, &k) in axes.iter().zip(cutoffs) {
            if k > shape[a] / 2 {
                return Err(CoreError::ModesTooLarge {
                    modes: k,
                    extent: shape[a],
                });
            }
        }
        let mut strides = vec![1; rank];
        for a in (0..rank - 1).rev() {
            strides[a] = strides[a + 1] * shape[a + 1];
        }
        let mut bases = vec![0usize];
        for a in 0..rank - 1 {
            if axes.contains(&a) {
                continue;
            }
            let st = strides[a];
            bases = bases
                .iter()
                .flat_map(|&b| (0..shape[a]).map(move |i| b + i * st))
                .collect();
        }
        let last = *axes.last().unwrap();
        let mut modes = vec![(0usize, 1.0f64)];
        for (&a, &k) in axes.iter().zip(cutoffs) {
            let n = shape[a];
            let st = strides[a];
            let freqs: Vec<usize> = if a == last {
                (0..=k).collect()
            } else {
                let mut f: Vec<usize> = (0..=k).chain((n - k..n).filter(|&i| i > k)).collect();
                f.dedup();
                f
            };
            modes = modes
                .iter()
                .flat_map(|&(off, amp)| {
                    freqs.iter().map(move |&f| {
                        let a_amp = if a == last && f != 0 && 2 * f != n { 2.0 } else { 1.0 };
                        (off + f * st, amp * a_amp)
                    })
                })
                .collect();
        }
        Ok(Self {
            shape: shape.to_vec(),
            axes: axes.to_vec(),
            channels: shape[rank - 1],
            bases,
            spatial: axes.iter().map(|&a| shape[a]).product(),
            modes,
        })
    }

    pub fn mode_count(&self) -> usize {
        self.modes.len()
    }

    fn spectrum(&self, x: &[f64]) -> Result<Vec<Complex64>> {
        let mut xh: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        fft_axes(&mut xh, &self.shape, &self.axes, false)?;
        Ok(xh)
    }

    /// Weight index for input channel `i`, output `o`, mode `m`.
    fn widx(&self, diagonal: bool, i: usize, o: usize, m: usize) -> usize {
        let mc = self.modes.len();
        if diagonal {
            o * mc + m
        } else {
            (i * self.channels + o) * mc + m
        }
    }

    fn forward_from(&self, xh: &[Complex64], w: &[Complex64], diagonal: bool) -> Result<Vec<f64>> {
        let h = self.channels;
        let mut z = vec![ZERO; xh.len()];
        for &base in &self.bases {
            for (mi, &(moff, amp)) in self.modes.iter().enumerate() {
                let off = base + moff;
                for o in 0..h {
                    let acc = if diagonal {
                        w[self.widx(true, o, o, mi)] * xh[off + o]
                    } else {
                        (0..h).map(|i| w[self.widx(false, i, o, mi)] * xh[off + i]).sum()
                    };
                    z[off + o] = acc * amp;
                }
            }
        }
        fft_axes(&mut z, &self.shape, &self.axes, true)?;
        Ok(z.into_iter().map(|c| c.re).collect())
    }

    /// Applies complex weights, `[h, h, modes]` or `[h, modes]` when
    /// `diagonal`.
    pub fn apply(&self, x: &[f64], w: &[Complex64], diagonal: bool) -> Result<Vec<f64>> {
        self.check_weights(w.len(), diagonal)?;
        let xh = self.spectrum(x)?;
        self.forward_from(&xh, w, diagonal)
    }

    fn check_weights(&self, len: usize, diagonal: bool) -> Result<()> {
        let want = self.weight_shape(diagonal).iter().product::<usize>();
        if len != want {
            return Err(CoreError::Shape(format!(
                "spectral weights hold {len} values, expected {want}"
            )));
        }
        Ok(())
    }

    pub fn weight_shape(&self, diagonal: bool) -> Vec<usize> {
        if diagonal {
            vec![self.channels, self.modes.len()]
        } else {
            vec![self.channels, self.channels, self.modes.len()]
        }
    }
}

/// Number of modes kept for the given extents and inclusive cutoffs.
pub fn spectral_mode_count(extents: &[usize], cutoffs: &[usize]) -> usize {
    let last = extents.len() - 1;
    extents
        .iter()
        .zip(cutoffs)
        .enumerate()
        .map(|(a, (&n, &k))| {
            if a == last {
                k + 1
            } else {
                (2 * k + 1).min(n)
            }
        })
        .product()
}

struct SpectralConvOp {
    plan: SpectralPlan,
    xh: Vec<Complex64>,
    w: Vec<Complex64>,
    diagonal: bool,
}

impl CustomOp for SpectralConvOp {
    fn name(&self) -> &'static str {
        "spectral_conv"
    }

    fn backward(&self, _inputs: &[&Tensor], _output: &Tensor, grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        let p = &self.plan;
        let h = p.channels;
        let mut g: Vec<Complex64> = grad.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        fft_axes(&mut g, &p.shape, &p.axes, false).expect("plan shape is valid");
        let mut gw = vec![ZERO; self.w.len()];
        let mut gxh = vec![ZERO; g.len()];
        let scale = 1.0 / p.spatial as f64;
        for &base in &p.bases {
            for (mi, &(moff, amp)) in p.modes.iter().enumerate() {
                let off = base + moff;
                for o in 0..h {
                    let gy = g[off + o] * (amp * scale);
                    if self.diagonal {
                        let wi = p.widx(true, o, o, mi);
                        gw[wi] += self.xh[off + o].conj() * gy;
                        gxh[off + o] += self.w[wi].conj() * gy;
                    } else {
                        for i in 0..h {
                            let wi = p.widx(false, i, o, mi);
                            gw[wi] += self.xh[off + i].conj() * gy;
                            gxh[off + i] += self.w[wi].conj() * gy;
                        }
                    }
                }
            }
        }
        fft_axes(&mut gxh, &p.shape, &p.axes, true).expect("plan shape is valid");
        let n = p.spatial as f64;
        vec![
            Some(gxh.iter().map(|c| c.re * n).collect()),
            Some(gw.iter().map(|c| c.re).collect()),
            Some(gw.iter().map(|c| c.im).collect()),
        ]
    }
}

/// Spectral weights registered as separate real and imaginary parameters.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SpectralWeights {
    pub re: ParamId,
    pub im: ParamId,
    pub axes: Vec<usize>,
    pub cutoffs: Vec<usize>,
    pub diagonal: bool,
    pub channels: usize,
    pub modes: usize,
}

impl SpectralWeights {
    /// `scale · U[0, 1)` for both parts with `scale = 1 / H²`.
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        h: usize,
        axes: &[usize],
        extents: &[usize],
        cutoffs: &[usize],
        diagonal: bool,
        rng: &mut R,
    ) -> Self {
        let modes = spectral_mode_count(extents, cutoffs);
        let shape = if diagonal { vec![h, modes] } else { vec![h, h, modes] };
        let n: usize = shape.iter().product();
        let scale = 1.0 / (h * h) as f64;
        let mut draw = || {
            Tensor::from_vec(&shape, (0..n).map(|_| scale * rng.random::<f64>()).collect()).unwrap()
        };
        let re = draw();
        let im = draw();
        Self {
            re: store.add(format!("{name}.re"), re),
            im: store.add(format!("{name}.im"), im),
            axes: axes.to_vec(),
            cutoffs: cutoffs.to_vec(),
            diagonal,
            channels: h,
            modes,
        }
    }

    pub fn complex(&self, store: &ParamStore) -> Vec<Complex64> {
        let (r, i) = (store.get(self.re).data(), store.get(self.im).data());
        r.iter().zip(i).map(|(&a, &b)| Complex64::new(a, b)).collect()
    }

    pub fn apply(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let plan = SpectralPlan::new(tape.value(x).shape(), &self.axes, &self.cutoffs)?;
        if plan.mode_count() != self.modes {
            return Err(CoreError::Shape(format!(
                "grid {:?} keeps {} modes but weights hold {}",
                tape.value(x).shape(),
                plan.mode_count(),
                self.modes
            )));
        }
        let w = self.complex(store);
        let xh = plan.spectrum(tape.value(x).data())?;
        let y = plan.forward_from(&xh, &w, self.diagonal)?;
        let value = Tensor::from_vec(tape.value(x).shape(), y)?;
        let wr = tape.param(store, self.re);
        let wi = tape.param(store, self.im);
        let op = SpectralConvOp {
            plan,
            xh,
            w,
            diagonal: self.diagonal,
        };
        Ok(tape.custom(&[x, wr, wi], value, Box::new(op)))
    }

    pub fn scalar_count(&self) -> usize {
        let per = if self.diagonal { self.channels } else { self.channels * self.channels };
        2 * per * self.modes
    }
}

/// The convolution kernel `K` of one spatial layer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Mixer {
    /// Bidirectional scans applied one axis after another.
    Sequential(Vec<BidirSsm>),
    /// Bidirectional scans on each axis, summed.
    Parallel(Vec<BidirSsm>),
    /// Single-direction scans applied one axis after another.
    Unidir(Vec<UnidirSsm>),
    /// Dense spectral multiplier over all spatial axes at once.
    Fourier(SpectralWeights),
    /// One spectral multiplier per axis, summed.
    Factorized(Vec<SpectralWeights>),
}

impl Mixer {
    pub fn apply(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        Ok(match self {
            Mixer::Sequential(list) => list.iter().fold(x, |v, s| s.apply(tape, store, v)),
            Mixer::Unidir(list) => list.iter().fold(x, |v, s| s.apply(tape, store, v)),
            Mixer::Parallel(list) => {
                let parts: Vec<Var> = list.iter().map(|s| s.apply(tape, store, x)).collect();
                sum_all(tape, &parts)
            }
            Mixer::Fourier(w) => w.apply(tape, store, x)?,
            Mixer::Factorized(list) => {
                let mut parts = Vec::with_capacity(list.len());
                for w in list {
                    parts.push(w.apply(tape, store, x)?);
                }
                sum_all(tape, &parts)
            }
        })
    }

    pub fn scalar_count(&self) -> usize {
        match self {
            Mixer::Sequential(l) | Mixer::Parallel(l) => l.iter().map(BidirSsm::scalar_count).sum(),
            Mixer::Unidir(l) => l.iter().map(|u| u.ssm.scalar_count()).sum(),
            Mixer::Fourier(w) => w.scalar_count(),
            Mixer::Factorized(l) => l.iter().map(SpectralWeights::scalar_count).sum(),
        }
    }
}

fn sum_all(tape: &mut Tape, parts: &[Var]) -> Var {
    let mut acc = parts[0];
    for &p in &parts[1..] {
        acc = tape.add(acc, p);
    }
    acc
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LayerForm {
    /// `v + GELU(W v + b + K v)`
    Pointwise(Dense),
    /// `v + W₂ GELU(W₁ K v)`
    FeedForward(Dense, Dense),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layer {
    pub mixer: Mixer,
    pub form: LayerForm,
}

impl Layer {
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let k = self.mixer.apply(tape, store, x)?;
        let update = match &self.form {
            LayerForm::Pointwise(dense) => {
                let wx = dense.apply(tape, store, x);
                let pre = tape.add(wx, k);
                tape.gelu(pre)
            }
            LayerForm::FeedForward(up, down) => {
                let hid = up.apply(tape, store, k);
                let act = tape.gelu(hid);
                down.apply(tape, store, act)
            }
        };
        Ok(tape.add(x, update))
    }

    pub fn scalar_count(&self) -> usize {
        self.mixer.scalar_count()
            + match &self.form {
                LayerForm::Pointwise(d) => d.scalar_count(),
                LayerForm::FeedForward(a, b) => a.scalar_count() + b.scalar_count(),
            }
    }
}

fn complex_weights(w: &Tensor) -> Result<&[Complex64]> {
    Ok(w.try_complex()?)
}

/// FNO convolution of a `[x, h]` field with complex weights `[h, h, K+1]`.
pub fn fno_conv_1d(v: &Tensor, weights: &Tensor, cutoff: usize) -> Result<Tensor> {
    let plan = SpectralPlan::new(v.shape(), &[0], &[cutoff])?;
    let y = plan.apply(v.data(), complex_weights(weights)?, false)?;
    Ok(Tensor::from_vec(v.shape(), y)?)
}

/// FNO convolution of a `[x, y, h]` field; weights `[h, h, modes]` with
/// modes ordered as `kx ∈ {0..K1, -K1..-1}` (outer) × `ky ∈ 0..=K2`.
pub fn fno_conv_2d(v: &Tensor, weights: &Tensor, cutoffs: [usize; 2]) -> Result<Tensor> {
    let plan = SpectralPlan::new(v.shape(), &[0, 1], &cutoffs)?;
    let y = plan.apply(v.data(), complex_weights(weights)?, false)?;
    Ok(Tensor::from_vec(v.shape(), y)?)
}

/// Reduced FNO: per-channel spectral multiply, weights `[h, modes]`.
pub fn fno2d_reduced(v: &Tensor, weights: &Tensor, cutoffs: [usize; 2]) -> Result<Tensor> {
    let plan = SpectralPlan::new(v.shape(), &[0, 1], &cutoffs)?;
    let y = plan.apply(v.data(), complex_weights(weights)?, true)?;
    Ok(Tensor::from_vec(v.shape(), y)?)
}

/// Sum of 1D spectral convolutions along `x` and `y` of a `[x, y, h]`
/// field. Axes of extent one carry no spatial structure and are skipped.
pub fn ffno_conv(
    v: &Tensor,
    wx: &Tensor,
    wy: &Tensor,
    cutoffs: [usize; 2],
) -> Result<Tensor> {
    if v.rank() != 3 {
        return Err(CoreError::Shape(format!("expected [x, y, h], got {:?}", v.shape())));
    }
    let mut out = vec![0.0; v.len()];
    for (axis, w) in [(0usize, wx), (1, wy)] {
        if v.shape()[axis] == 1 {
            continue;
        }
        let plan = SpectralPlan::new(v.shape(), &[axis], &[cutoffs[axis]])?;
        let y = plan.apply(v.data(), complex_weights(w)?, false)?;
        out.iter_mut().zip(y).for_each(|(a, b)| *a += b);
    }
    Ok(Tensor::from_vec(v.shape(), out)?)
}

/// Runs `f` on every line of `v` along `axis`, presenting each line as
/// `[h, len]` to match the sequence layout of the SSM module.
fn map_lines(v: &Tensor, axis: usize, f: impl Fn(&Tensor) -> Result<Tensor>) -> Result<Tensor> {
    let shape = v.shape();
    let h = *shape.last().unwrap();
    let len = shape[axis];
    let (outer, _, inner) = stssm_array::tensor::axis_split(shape, axis);
    let reps = inner / h;
    let mut out = vec![0.0; v.len()];
    for o in 0..outer {
        for r in 0..reps {
            let at = |t: usize, ch: usize| (o * len + t) * inner + r * h + ch;
            let mut line = vec![0.0; h * len];
            for ch in 0..h {
                for t in 0..len {
                    line[ch * len + t] = v.data()[at(t, ch)];
                }
            }
            let y = f(&Tensor::from_vec(&[h, len], line)?)?;
            for ch in 0..h {
                for t in 0..len {
                    out[at(t, ch)] = y.data()[ch * len + t];
                }
            }
        }
    }
    Ok(Tensor::from_vec(shape, out)?)
}

fn flip_line(u: &Tensor) -> Tensor {
    stssm_array::tape::flip_tensor(u, 1)
}

/// Bidirectional scan along `axis`, computed line by line with the FFT
/// convolution path: `M_fwd(v) + flip(M_bwd(flip(v)))`.
pub fn spatial_ssm_bidir(v: &Tensor, fwd: &S4DParams, bwd: &S4DParams, axis: usize) -> Result<Tensor> {
    let (df, db) = (discretize(fwd)?, discretize(bwd)?);
    map_lines(v, axis, |u| {
        let yf = apply_conv(&df, u)?;
        let yb = flip_line(&apply_conv(&db, &flip_line(u))?);
        Ok(Tensor::from_vec(u.shape(), yf.data().iter().zip(yb.data()).map(|(a, b)| a + b).collect())?)
    })
}

/// `[x, h]` field through one bidirectional pass.
pub fn spatial_ssm_bidir_1d(v: &Tensor, fwd: &S4DParams, bwd: &S4DParams) -> Result<Tensor> {
    spatial_ssm_bidir(v, fwd, bwd, 0)
}

/// `[x, y, h]` field: the `y` pass consumes the output of the `x` pass.
pub fn spatial_ssm_2d(v: &Tensor, x_pass: (&S4DParams, &S4DParams), y_pass: (&S4DParams, &S4DParams)) -> Result<Tensor> {
    let u = spatial_ssm_bidir(v, x_pass.0, x_pass.1, 0)?;
    spatial_ssm_bidir(&u, y_pass.0, y_pass.1, 1)
}

/// Forward and backward scan parameters whose bidirectional kernel on a
/// grid of `grid` points over `[0, 1)` approximates the per-channel Fourier
/// multiplier `coeffs[c][k]`, `k = 0..=K`. Modes sit on the lattice
/// `ω_k = 2πk` with damping `exp(rho)`; `C_k` is chosen so that
/// `C_k B̄_k = dt a_k w_k`, the backward scan carries conjugate coefficients,
/// and the skip terms cancel the zero-lag tap counted by both scans.
pub fn ssm_from_fourier(coeffs: &[Vec<Complex64>], grid: usize, rho: f64) -> Result<(S4DParams, S4DParams)> {
    let h = coeffs.len();
    let n = coeffs.first().map_or(0, Vec::len);
    if h == 0 || n == 0 || coeffs.iter().any(|c| c.len() != n) {
        return Err(CoreError::Shape("coefficients must be a non-empty [h][K+1] table".into()));
    }
    if n - 1 > grid / 2 {
        return Err(CoreError::ModesTooLarge { modes: n - 1, extent: grid });
    }
    let dt = 1.0 / grid as f64;
    let mut fwd = S4DParams {
        h,
        n,
        lambda: Vec::with_capacity(h * n),
        b: vec![Complex64::new(1.0, 0.0); h * n],
        c: Vec::with_capacity(h * n),
        d: Vec::with_capacity(h),
        log_dt: vec![dt.ln(); h],
    };
    let mut bwd = fwd.clone();
    for row in coeffs {
        let mut zero_lag = 0.0;
        for (k, w) in row.iter().enumerate() {
            let lambda = Complex64::new(-rho.exp(), 2.0 * std::f64::consts::PI * k as f64);
            let (_, bbar) = crate::ssm::bilinear(lambda, Complex64::new(1.0, 0.0), dt)?;
            let amp = if k == 0 || 2 * k == grid { 1.0 } else { 2.0 };
            fwd.lambda.push(lambda);
            bwd.lambda.push(lambda);
            fwd.c.push(w * (dt * amp) / bbar);
            bwd.c.push(w.conj() * (dt * amp) / bbar);
            zero_lag += dt * amp * w.re;
        }
        fwd.d.push(-zero_lag / 2.0);
        bwd.d.push(-zero_lag / 2.0);
    }
    Ok((fwd, bwd))
}
