//! Dataset generation from a config, and the on-disk layout: a versioned
//! `manifest.toml` plus one binary tensor per split (and per context split).

use std::fs;
use std::path::Path;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use stssm_array::{io as tio, Tensor};

use crate::burgers::{sample_burgers_ic_with, solve_burgers};
use crate::ks::{sample_ks_ic_with, solve_ks};
use crate::ns::{sample_grf_with, solve_ns_vorticity, Forcing};
use crate::{downsample, GridSpec, PdeError, Result, Trajectory, TrajectoryParams};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PdeKind {
    Burgers,
    Ks,
    Ns,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ForcingKind {
    None,
    Fixed,
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub pde: PdeKind,
    /// Points per axis on the solver grid.
    pub solver_points: usize,
    /// Points per axis after strided downsampling.
    pub save_points: usize,
    pub length: f64,
    pub dt_solver: f64,
    pub dt_save: f64,
    pub t_final: f64,
    /// `ν ~ U[lo, hi)`; equal bounds fix it.
    pub nu_range: [f64; 2],
    pub forcing: ForcingKind,
    pub delta: f64,
    pub n_train: usize,
    pub n_test: usize,
    #[serde(default)]
    pub seed: u64,
}

impl DataConfig {
    pub fn spatial_dim(&self) -> usize {
        if self.pde == PdeKind::Ns {
            2
        } else {
            1
        }
    }

    pub fn grid(&self) -> GridSpec {
        let d = self.spatial_dim();
        GridSpec {
            extents: vec![self.solver_points; d],
            lengths: vec![self.length; d],
            dt_solver: self.dt_solver,
            dt_save: self.dt_save,
            t_final: self.t_final,
        }
    }

    pub fn has_context(&self) -> bool {
        self.pde == PdeKind::Ns
    }

    pub fn validate(&self) -> Result<()> {
        self.grid().validate()?;
        if self.save_points == 0 || self.solver_points % self.save_points != 0 {
            return Err(PdeError::BadFactor { factor: self.save_points, extent: self.solver_points });
        }
        let [lo, hi] = self.nu_range;
        if !(lo <= hi) || lo < 0.0 || (self.pde != PdeKind::Ns && lo <= 0.0) {
            return Err(PdeError::Config(format!("bad viscosity range {:?}", self.nu_range)));
        }
        if self.n_train == 0 {
            return Err(PdeError::Config("n_train must be positive".into()));
        }
        Ok(())
    }
}

pub fn preset(name: &str) -> Option<DataConfig> {
    let ns = |nu_range, forcing, delta| DataConfig {
        pde: PdeKind::Ns,
        solver_points: 64,
        save_points: 64,
        length: 1.0,
        dt_solver: 1e-3,
        dt_save: 1.0,
        t_final: 19.0,
        nu_range,
        forcing,
        delta,
        n_train: 64,
        n_test: 16,
        seed: 0,
    };
    Some(match name {
        "burgers" => DataConfig {
            pde: PdeKind::Burgers,
            solver_points: 512,
            save_points: 128,
            length: 1.0,
            dt_solver: 2.5e-4,
            dt_save: 0.07,
            t_final: 1.33,
            nu_range: [0.01, 0.01],
            forcing: ForcingKind::None,
            delta: 0.0,
            n_train: 256,
            n_test: 64,
            seed: 0,
        },
        "ks" => DataConfig {
            pde: PdeKind::Ks,
            solver_points: 512,
            save_points: 128,
            length: 64.0,
            dt_solver: 0.005,
            dt_save: 0.1,
            t_final: 2.5,
            nu_range: [0.075, 0.075],
            forcing: ForcingKind::None,
            delta: 0.0,
            n_train: 256,
            n_test: 64,
            seed: 0,
        },
        "torus-li" => ns([1e-5, 1e-5], ForcingKind::Fixed, 0.0),
        "torus-vis" => ns([1e-5, 1e-4], ForcingKind::Random, 0.0),
        "torus-visforce" => ns([1e-5, 1e-4], ForcingKind::Random, 0.2),
        _ => return None,
    })
}

pub const PRESETS: [&str; 5] = ["burgers", "ks", "torus-li", "torus-vis", "torus-visforce"];

/// Trajectory `index` (train first, then test) from its own RNG stream.
pub fn generate_trajectory(cfg: &DataConfig, index: usize) -> Result<Trajectory> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64);
    let [lo, hi] = cfg.nu_range;
    let nu = if hi > lo { rng.random_range(lo..hi) } else { lo };
    let grid = cfg.grid();
    let n = cfg.solver_points;
    let mut traj = match cfg.pde {
        PdeKind::Burgers => {
            let u0 = sample_burgers_ic_with(&mut rng, n, cfg.length);
            let frames = solve_burgers(&u0, nu, &grid)?;
            let params = TrajectoryParams { nu, forcing_seed: None, delta: None };
            Trajectory::from_frames(&frames, &grid.extents, params, "burgers")?
        }
        PdeKind::Ks => {
            let u0 = sample_ks_ic_with(&mut rng, n, cfg.length);
            let frames = solve_ks(&u0, nu, &grid)?;
            let params = TrajectoryParams { nu, forcing_seed: None, delta: None };
            Trajectory::from_frames(&frames, &grid.extents, params, "ks")?
        }
        PdeKind::Ns => {
            let w0 = sample_grf_with(&mut rng, n)?;
            let forcing = match cfg.forcing {
                ForcingKind::None => Forcing::None,
                ForcingKind::Fixed => Forcing::Fixed,
                ForcingKind::Random => Forcing::sample_with(&mut rng, cfg.delta),
            };
            let (frames, forces) = solve_ns_vorticity(&w0, nu, &forcing, &grid)?;
            let params = TrajectoryParams {
                nu,
                forcing_seed: (cfg.forcing == ForcingKind::Random).then_some(index as u64),
                delta: Some(cfg.delta),
            };
            let mut t = Trajectory::from_frames(&frames, &grid.extents, params, "ns")?;
            let data: Vec<f64> = forces.into_iter().flatten().collect();
            t.forcing = Some(Tensor::from_vec(&[frames.len(), n, n], data)?);
            t
        }
    };
    traj.seed = Some(cfg.seed);
    let factor = cfg.solver_points / cfg.save_points;
    if factor > 1 {
        traj = downsample(&traj, 1, factor)?;
    }
    Ok(traj)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub config: DataConfig,
    pub frames: usize,
    /// `[x, y]` of the saved fields (`y = 1` in 1D).
    pub grid: [usize; 2],
    pub context_channels: Vec<String>,
    pub nu_train: Vec<f64>,
    pub nu_test: Vec<f64>,
}

/// Fields `[n, t, x, y, 1]` and, for the vorticity data, context
/// `[n, t, x, y, 2]` holding the viscosity and forcing fields.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedData {
    pub manifest: Manifest,
    pub train: Tensor,
    pub test: Tensor,
    pub train_context: Option<Tensor>,
    pub test_context: Option<Tensor>,
}

fn pack(trajs: &[Trajectory], context: bool) -> Result<(Tensor, Option<Tensor>)> {
    let s = trajs[0].u.shape().to_vec();
    let mut shape = vec![trajs.len()];
    shape.extend_from_slice(&s);
    let data: Vec<f64> = trajs.iter().flat_map(|t| t.u.data().to_vec()).collect();
    let fields = Tensor::from_vec(&shape, data)?;
    if !context {
        return Ok((fields, None));
    }
    let mut ctx = Vec::with_capacity(fields.len() * 2);
    for t in trajs {
        let f = t.forcing.as_ref().expect("forcing frames");
        for &v in f.data() {
            ctx.push(t.params.nu);
            ctx.push(v);
        }
    }
    let mut cshape = shape.clone();
    *cshape.last_mut().unwrap() = 2;
    Ok((fields, Some(Tensor::from_vec(&cshape, ctx)?)))
}

pub fn generate(cfg: &DataConfig, mut progress: impl FnMut(usize, usize)) -> Result<GeneratedData> {
    cfg.validate()?;
    let total = cfg.n_train + cfg.n_test;
    let mut trajs = Vec::with_capacity(total);
    for i in 0..total {
        let t = generate_trajectory(cfg, i).map_err(|e| match e {
            PdeError::NonFinite { solver, t, .. } => PdeError::NonFinite { solver, t, seed: Some(cfg.seed ^ i as u64) },
            other => other,
        })?;
        trajs.push(t);
        progress(i + 1, total);
    }
    let (train_t, test_t) = trajs.split_at(cfg.n_train);
    let (train, train_context) = pack(train_t, cfg.has_context())?;
    let (test, test_context) = if test_t.is_empty() {
        let s = train.shape();
        (Tensor::zeros(&[0, s[1], s[2], s[3], s[4]]), None)
    } else {
        pack(test_t, cfg.has_context())?
    };
    let s = train.shape();
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        config: cfg.clone(),
        frames: s[1],
        grid: [s[2], s[3]],
        context_channels: if cfg.has_context() { vec!["viscosity".into(), "forcing".into()] } else { vec![] },
        nu_train: train_t.iter().map(|t| t.params.nu).collect(),
        nu_test: test_t.iter().map(|t| t.params.nu).collect(),
    };
    Ok(GeneratedData { manifest, train, test, train_context, test_context })
}

impl GeneratedData {
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let text = toml::to_string(&self.manifest).map_err(|e| PdeError::Manifest(e.to_string()))?;
        fs::write(dir.join("manifest.toml"), text)?;
        tio::save(dir.join("train.bin"), &self.train)?;
        tio::save(dir.join("test.bin"), &self.test)?;
        if let (Some(a), Some(b)) = (&self.train_context, &self.test_context) {
            tio::save(dir.join("train_context.bin"), a)?;
            tio::save(dir.join("test_context.bin"), b)?;
        }
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.toml");
        let text = fs::read_to_string(&path)
            .map_err(|e| PdeError::Manifest(format!("{}: {e}", path.display())))?;
        let manifest: Manifest = toml::from_str(&text).map_err(|e| PdeError::Manifest(e.to_string()))?;
        if manifest.version != MANIFEST_VERSION {
            return Err(PdeError::Manifest(format!("unsupported version {}", manifest.version)));
        }
        let train = tio::load(dir.join("train.bin"))?;
        let test = tio::load(dir.join("test.bin"))?;
        let (train_context, test_context) = if manifest.context_channels.is_empty() {
            (None, None)
        } else {
            (Some(tio::load(dir.join("train_context.bin"))?), Some(tio::load(dir.join("test_context.bin"))?))
        };
        let expect = [manifest.config.n_train, manifest.frames, manifest.grid[0], manifest.grid[1], 1];
        if train.shape() != expect {
            return Err(PdeError::Manifest(format!("train tensor {:?} does not match manifest {expect:?}", train.shape())));
        }
        Ok(Self { manifest, train, test, train_context, test_context })
    }
}
