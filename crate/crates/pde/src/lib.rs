//! Periodic pseudospectral solvers and samplers for the training data:
//! viscous Burgers and Kuramoto–Sivashinsky in 1D, Navier–Stokes vorticity
//! on the unit torus in 2D.

pub mod burgers;
pub mod dataset;
pub mod ks;
pub mod ns;
pub mod spectral;

use serde::{Deserialize, Serialize};
use stssm_array::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum PdeError {
    #[error("grid extent {0} is not a power of two")]
    NotPowerOfTwo(usize),
    #[error("invalid time stepping: {0}")]
    BadStep(String),
    #[error("{solver} produced non-finite values at t = {t} (seed {seed:?})")]
    NonFinite { solver: &'static str, t: f64, seed: Option<u64> },
    #[error("CFL number {courant:.3} exceeds the limit {limit}")]
    Cfl { courant: f64, limit: f64 },
    #[error("factor {factor} does not divide extent {extent}")]
    BadFactor { factor: usize, extent: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Array(#[from] stssm_array::ArrayError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, PdeError>;

/// Periodic grid and time stepping of one solver run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub extents: Vec<usize>,
    pub lengths: Vec<f64>,
    pub dt_solver: f64,
    pub dt_save: f64,
    pub t_final: f64,
}

fn whole_ratio(a: f64, b: f64) -> Option<usize> {
    let r = a / b;
    let n = r.round();
    ((r - n).abs() < 1e-9 * r.max(1.0) && n >= 0.0).then_some(n as usize)
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.extents.is_empty() || self.extents.len() != self.lengths.len() {
            return Err(PdeError::Config("extents and lengths must match".into()));
        }
        if let Some(&n) = self.extents.iter().find(|n| !n.is_power_of_two()) {
            return Err(PdeError::NotPowerOfTwo(n));
        }
        if !(self.dt_solver > 0.0 && self.dt_save > 0.0 && self.t_final >= 0.0) {
            return Err(PdeError::BadStep("steps must be positive".into()));
        }
        if whole_ratio(self.dt_save, self.dt_solver).is_none_or(|n| n == 0) {
            return Err(PdeError::BadStep(format!(
                "dt_save {} is not a multiple of dt_solver {}",
                self.dt_save, self.dt_solver
            )));
        }
        if whole_ratio(self.t_final, self.dt_save).is_none() {
            return Err(PdeError::BadStep("t_final is not a multiple of dt_save".into()));
        }
        Ok(())
    }

    pub fn steps_per_save(&self) -> usize {
        whole_ratio(self.dt_save, self.dt_solver).unwrap()
    }

    /// Saved frames including the initial condition.
    pub fn frames(&self) -> usize {
        whole_ratio(self.t_final, self.dt_save).unwrap() + 1
    }

    pub fn points(&self) -> usize {
        self.extents.iter().product()
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.lengths[axis] / self.extents[axis] as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryParams {
    pub nu: f64,
    pub forcing_seed: Option<u64>,
    pub delta: Option<f64>,
}

/// One solution: `u` is `[t, x, y, 1]` (1D fields carry `y = 1`) and the
/// optional forcing is `[t, x, y]` at the saved times.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub u: Tensor,
    pub forcing: Option<Tensor>,
    pub params: TrajectoryParams,
    pub solver: &'static str,
    pub seed: Option<u64>,
}

impl Trajectory {
    pub fn from_frames(
        frames: &[Vec<f64>],
        extents: &[usize],
        params: TrajectoryParams,
        solver: &'static str,
    ) -> Result<Self> {
        let (x, y) = (extents[0], extents.get(1).copied().unwrap_or(1));
        let data: Vec<f64> = frames.iter().flatten().copied().collect();
        let u = Tensor::from_vec(&[frames.len(), x, y, 1], data)?;
        if !u.all_finite() {
            return Err(PdeError::NonFinite { solver, t: f64::NAN, seed: None });
        }
        Ok(Self { u, forcing: None, params, solver, seed: None })
    }

    pub fn frames(&self) -> usize {
        self.u.shape()[0]
    }
}

fn stride(t: &Tensor, factor_t: usize, factor_x: usize, spatial: usize) -> Tensor {
    let s = t.shape();
    let (nt, nx, ny) = (s[0], s[1], s[2]);
    let inner: usize = s[3..].iter().product();
    let fy = if spatial == 2 { factor_x } else { 1 };
    let mut out = Vec::new();
    for ti in (0..nt).step_by(factor_t) {
        for xi in (0..nx).step_by(factor_x) {
            for yi in (0..ny).step_by(fy) {
                let at = ((ti * nx + xi) * ny + yi) * inner;
                out.extend_from_slice(&t.data()[at..at + inner]);
            }
        }
    }
    let mut shape = s.to_vec();
    shape[0] = nt.div_ceil(factor_t);
    shape[1] = nx / factor_x;
    shape[2] = ny / fy;
    Tensor::from_vec(&shape, out).unwrap()
}

/// Strided subsampling in time and space, no filtering. Spatial factors
/// must divide every spatial extent, the time factor must divide either
/// the frame count or the number of intervals; frame 0 is always kept.
pub fn downsample(traj: &Trajectory, factor_t: usize, factor_x: usize) -> Result<Trajectory> {
    let s = traj.u.shape();
    let spatial = if s[2] > 1 { 2 } else { 1 };
    if factor_t == 0 || factor_x == 0 {
        return Err(PdeError::BadFactor { factor: 0, extent: s[1] });
    }
    for &n in &s[1..1 + spatial] {
        if n % factor_x != 0 {
            return Err(PdeError::BadFactor { factor: factor_x, extent: n });
        }
    }
    if s[0] % factor_t != 0 && (s[0] - 1) % factor_t != 0 {
        return Err(PdeError::BadFactor { factor: factor_t, extent: s[0] });
    }
    let forcing = traj.forcing.as_ref().map(|f| {
        let fs = f.shape();
        let f4 = f.reshape(&[fs[0], fs[1], fs[2], 1]).unwrap();
        let d = stride(&f4, factor_t, factor_x, spatial);
        let ds = d.shape().to_vec();
        d.reshape(&ds[..3]).unwrap()
    });
    Ok(Trajectory {
        u: stride(&traj.u, factor_t, factor_x, spatial),
        forcing,
        ..traj.clone()
    })
}
