//! The space-time model `Q ∘ blocks ∘ R`.
//!
//! `R` lifts each grid point's input (field values, positional encoding and
//! optional context channels) to `H` channels, the blocks alternate spatial
//! layers with at most one temporal layer, and `Q` projects back to the
//! field channels. The model predicts the next frame from the current one;
//! the temporal layer carries information from earlier frames.

use std::collections::VecDeque;
use std::fs;
use std::path::Path;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use stssm_array::{io as tio, ParamStore, Tape, Tensor, Var};

use crate::fov::KernelSpec;
use crate::layers::{BidirSsm, Dense, Layer, LayerForm, Mixer, SpectralWeights, UnidirSsm};
use crate::ssm::{apply_scan, discretize, S4DParams, SsmParamIds};
use crate::{CoreError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Block {
    Spatial,
    Temporal,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MixerKind {
    /// Bidirectional scans, one axis after another (the default).
    Sequential,
    /// Bidirectional scans per axis summed, then a feed-forward block.
    Parallel,
    /// Forward-only scans.
    Unidir,
    /// Dense truncated Fourier multiplier.
    Fno,
    /// Per-channel truncated Fourier multiplier.
    FnoReduced,
    /// One Fourier multiplier per axis, summed, then a feed-forward block.
    Ffno,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub spatial_dim: usize,
    pub field_channels: usize,
    pub context_channels: usize,
    pub width: usize,
    pub state_size: usize,
    pub layout: Vec<Block>,
    pub mixer: MixerKind,
    /// Fourier cutoff for the spectral mixers.
    pub modes: usize,
    /// Frames visible to the temporal layer; `None` is unbounded and
    /// `Some(0)` removes the temporal layer. Written as an integer or
    /// `"unbounded"`.
    #[serde(with = "window_serde")]
    pub window: Option<usize>,
}

mod window_serde {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(w: &Option<usize>, s: S) -> Result<S::Ok, S::Error> {
        match w {
            Some(k) => s.serialize_u64(*k as u64),
            None => s.serialize_str("unbounded"),
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Taps(usize),
        Word(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<usize>, D::Error> {
        match Raw::deserialize(d)? {
            Raw::Taps(k) => Ok(Some(k)),
            Raw::Word(w) if w == "unbounded" => Ok(None),
            Raw::Word(w) => Err(de::Error::custom(format!("window must be an integer or \"unbounded\", got {w:?}"))),
        }
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::default_1d()
    }
}

impl ModelConfig {
    pub fn default_1d() -> Self {
        Self {
            spatial_dim: 1,
            field_channels: 1,
            context_channels: 0,
            width: 64,
            state_size: 16,
            layout: vec![
                Block::Spatial,
                Block::Spatial,
                Block::Temporal,
                Block::Spatial,
                Block::Spatial,
            ],
            mixer: MixerKind::Sequential,
            modes: 16,
            window: Some(4),
        }
    }

    pub fn default_2d() -> Self {
        Self {
            spatial_dim: 2,
            ..Self::default_1d()
        }
    }

    pub fn input_width(&self) -> usize {
        self.field_channels + self.spatial_dim + self.context_channels
    }

    pub fn has_temporal(&self) -> bool {
        self.window != Some(0) && self.layout.contains(&Block::Temporal)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(CoreError::Config(m.to_string()));
        if !(1..=2).contains(&self.spatial_dim) {
            return bad("spatial_dim must be 1 or 2");
        }
        if self.width == 0 || self.field_channels == 0 {
            return bad("width and field_channels must be positive");
        }
        if self.state_size == 0 {
            return bad("state_size must be positive");
        }
        if self.layout.iter().filter(|b| **b == Block::Temporal).count() > 1 {
            return bad("layout may hold at most one temporal block");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TemporalLayer {
    pub ssm: SsmParamIds,
    pub dense: Dense,
}

#[derive(Clone, Debug, PartialEq)]
pub enum BlockImpl {
    Spatial(Layer),
    Temporal(TemporalLayer),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub seed: u64,
    pub store: ParamStore,
    pub lift: Dense,
    pub proj: Dense,
    pub blocks: Vec<BlockImpl>,
}

/// Coordinates `i / X` (and `j / Y` in 2D) as a `[x, y, d]` tensor.
pub fn encode_positions(x: usize, y: usize, spatial_dim: usize) -> Tensor {
    let mut out = Vec::with_capacity(x * y * spatial_dim);
    for i in 0..x {
        for j in 0..y {
            out.push(i as f64 / x as f64);
            if spatial_dim == 2 {
                out.push(j as f64 / y as f64);
            }
        }
    }
    Tensor::from_vec(&[x, y, spatial_dim], out).unwrap()
}

fn build_mixer(
    cfg: &ModelConfig,
    store: &mut ParamStore,
    name: &str,
    rng: &mut ChaCha8Rng,
) -> Result<Layer> {
    let (h, n) = (cfg.width, cfg.state_size);
    let axes: Vec<usize> = (2..2 + cfg.spatial_dim).collect();
    let pointwise = |store: &mut ParamStore, rng: &mut ChaCha8Rng| {
        LayerForm::Pointwise(Dense::new(store, &format!("{name}.w"), h, h, rng))
    };
    let feed_forward = |store: &mut ParamStore, rng: &mut ChaCha8Rng| {
        let up = Dense::new(store, &format!("{name}.ff1"), h, 2 * h, rng);
        let down = Dense::new(store, &format!("{name}.ff2"), 2 * h, h, rng);
        LayerForm::FeedForward(up, down)
    };
    let bidir = |store: &mut ParamStore, rng: &mut ChaCha8Rng| -> Result<Vec<BidirSsm>> {
        axes.iter()
            .map(|&a| BidirSsm::new(store, &format!("{name}.ssm{}", a - 2), h, n, a, rng))
            .collect()
    };
    let big = vec![4 * cfg.modes + 2; cfg.spatial_dim];
    let cutoffs = vec![cfg.modes; cfg.spatial_dim];
    Ok(match cfg.mixer {
        MixerKind::Sequential => {
            let m = Mixer::Sequential(bidir(store, rng)?);
            Layer { mixer: m, form: pointwise(store, rng) }
        }
        MixerKind::Parallel => {
            let m = Mixer::Parallel(bidir(store, rng)?);
            Layer { mixer: m, form: feed_forward(store, rng) }
        }
        MixerKind::Unidir => {
            let list = axes
                .iter()
                .map(|&a| UnidirSsm::new(store, &format!("{name}.ssm{}", a - 2), h, n, a, false, rng))
                .collect::<Result<Vec<_>>>()?;
            Layer { mixer: Mixer::Unidir(list), form: pointwise(store, rng) }
        }
        MixerKind::Fno | MixerKind::FnoReduced => {
            let diag = cfg.mixer == MixerKind::FnoReduced;
            let w = SpectralWeights::new(store, &format!("{name}.spec"), h, &axes, &big, &cutoffs, diag, rng);
            Layer { mixer: Mixer::Fourier(w), form: pointwise(store, rng) }
        }
        MixerKind::Ffno => {
            let list = axes
                .iter()
                .map(|&a| {
                    SpectralWeights::new(store, &format!("{name}.spec{}", a - 2), h, &[a], &big[..1], &cutoffs[..1], false, rng)
                })
                .collect();
            Layer { mixer: Mixer::Factorized(list), form: feed_forward(store, rng) }
        }
    })
}

pub fn build_model(config: &ModelConfig, seed: u64) -> Result<Model> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let h = config.width;
    let lift = Dense::new(&mut store, "lift", config.input_width(), h, &mut rng);
    let mut blocks = Vec::new();
    for block in &config.layout {
        let i = blocks.len();
        match block {
            Block::Spatial => {
                blocks.push(BlockImpl::Spatial(build_mixer(config, &mut store, &format!("block{i}"), &mut rng)?))
            }
            Block::Temporal if config.has_temporal() => {
                let p = S4DParams::init_lin(h, config.state_size, &mut rng);
                let ssm = SsmParamIds::register(&mut store, &format!("block{i}.ssm"), &p)?;
                let dense = Dense::new(&mut store, &format!("block{i}.w"), h, h, &mut rng);
                blocks.push(BlockImpl::Temporal(TemporalLayer { ssm, dense }));
            }
            Block::Temporal => {}
        }
    }
    let proj = Dense::new(&mut store, "proj", h, config.field_channels, &mut rng);
    // Zero readout: an untrained model predicts a constant field, so its
    // rollouts start bounded instead of compounding the residual gain.
    store.get_mut(proj.w).data_mut().fill(0.0);
    store.get_mut(proj.b).data_mut().fill(0.0);
    Ok(Model {
        config: config.clone(),
        seed,
        store,
        lift,
        proj,
        blocks,
    })
}

/// Copies `t[:, lo..hi]` along axis 1.
pub fn slice_time(t: &Tensor, lo: usize, hi: usize) -> Tensor {
    let shape = t.shape();
    let (outer, n, inner) = stssm_array::tensor::axis_split(shape, 1);
    assert!(lo <= hi && hi <= n, "time slice {lo}..{hi} out of 0..{n}");
    let mut out = Vec::with_capacity(outer * (hi - lo) * inner);
    for o in 0..outer {
        out.extend_from_slice(&t.data()[(o * n + lo) * inner..(o * n + hi) * inner]);
    }
    let mut s = shape.to_vec();
    s[1] = hi - lo;
    Tensor::from_vec(&s, out).unwrap()
}

/// Concatenates real tensors along their last axis.
pub fn concat_last(parts: &[&Tensor]) -> Tensor {
    let lead = &parts[0].shape()[..parts[0].rank() - 1];
    let widths: Vec<usize> = parts.iter().map(|p| *p.shape().last().unwrap()).collect();
    let rows: usize = lead.iter().product();
    let mut out = Vec::with_capacity(rows * widths.iter().sum::<usize>());
    for r in 0..rows {
        for (p, &w) in parts.iter().zip(&widths) {
            out.extend_from_slice(&p.data()[r * w..(r + 1) * w]);
        }
    }
    let mut shape = lead.to_vec();
    shape.push(widths.iter().sum());
    Tensor::from_vec(&shape, out).unwrap()
}

impl Model {
    pub fn param_count(&self) -> usize {
        self.store.scalar_count()
    }

    fn temporal_index(&self) -> Option<usize> {
        self.blocks.iter().position(|b| matches!(b, BlockImpl::Temporal(_)))
    }

    /// Positional encoding and context for every frame: `[b, t, x, y, d + c]`.
    pub fn aux_channels(&self, frames: &Tensor, context: Option<&Tensor>) -> Result<Tensor> {
        let s = frames.shape();
        if s.len() != 5 || s[4] != self.config.field_channels {
            return Err(CoreError::Shape(format!(
                "frames must be [b, t, x, y, {}], got {s:?}",
                self.config.field_channels
            )));
        }
        let (b, t, x, y) = (s[0], s[1], s[2], s[3]);
        if self.config.spatial_dim == 1 && y != 1 {
            return Err(CoreError::Shape("1D model expects a singleton y axis".into()));
        }
        let d = self.config.spatial_dim;
        let pos = encode_positions(x, y, d);
        let mut tiled = Vec::with_capacity(b * t * pos.len());
        for _ in 0..b * t {
            tiled.extend_from_slice(pos.data());
        }
        let pos = Tensor::from_vec(&[b, t, x, y, d], tiled).unwrap();
        match (context, self.config.context_channels) {
            (None, 0) => Ok(pos),
            (Some(c), k) if k > 0 => {
                let cs = c.shape();
                if cs.len() != 5 || cs[0] != b || cs[2] != x || cs[3] != y || cs[4] != k || cs[1] < t {
                    return Err(CoreError::Shape(format!(
                        "context must be [{b}, >= {t}, {x}, {y}, {k}], got {cs:?}"
                    )));
                }
                Ok(concat_last(&[&pos, &slice_time(c, 0, t)]))
            }
            (None, k) => Err(CoreError::Shape(format!("model expects {k} context channels"))),
            (Some(_), _) => Err(CoreError::Shape("model takes no context channels".into())),
        }
    }

    fn run_blocks(&self, tape: &mut Tape, mut h: Var, range: std::ops::Range<usize>) -> Result<Var> {
        for block in &self.blocks[range] {
            h = match block {
                BlockImpl::Spatial(layer) => layer.forward(tape, &self.store, h)?,
                BlockImpl::Temporal(t) => self.temporal_forward(tape, t, h),
            };
        }
        Ok(h)
    }

    fn temporal_forward(&self, tape: &mut Tape, layer: &TemporalLayer, h: Var) -> Var {
        let frames = tape.value(h).shape()[1];
        let taps = self.config.window.unwrap_or(frames).min(frames);
        let conv = crate::layers::scan_conv(tape, &self.store, &layer.ssm, h, 1, taps, false);
        let wx = layer.dense.apply(tape, &self.store, h);
        let pre = tape.add(wx, conv);
        let act = tape.gelu(pre);
        tape.add(h, act)
    }

    /// All frames in parallel from given inputs `[b, t, x, y, input_width]`;
    /// output `t` is the prediction of frame `t + 1`.
    pub fn forward_parallel(&self, tape: &mut Tape, inputs: Var) -> Result<Var> {
        let h = self.lift.apply(tape, &self.store, inputs);
        let h = self.run_blocks(tape, h, 0..self.blocks.len())?;
        Ok(self.proj.apply(tape, &self.store, h))
    }

    /// Autoregressive pass: step `t` reads `known[:, t]` while `t < known
    /// frames` and the previous prediction afterwards. Returns `steps`
    /// predictions stacked on axis 1.
    pub fn forward_autoregressive(
        &self,
        tape: &mut Tape,
        known: &Tensor,
        aux: &Tensor,
        steps: usize,
    ) -> Result<Var> {
        let t_known = known.shape()[1];
        if t_known == 0 || steps == 0 {
            return Err(CoreError::ZeroHorizon);
        }
        let split = self.temporal_index();
        let (pre_end, post_start) = match split {
            Some(i) => (i, i + 1),
            None => (self.blocks.len(), self.blocks.len()),
        };
        let mut zs: Vec<Var> = Vec::new();
        let mut preds: Vec<Var> = Vec::with_capacity(steps);
        for t in 0..steps {
            let frame = if t < t_known {
                let f = slice_time(known, t, t + 1);
                tape.constant(f)
            } else {
                let last = *preds.last().unwrap();
                let s = tape.value(last).shape().to_vec();
                tape.reshape(last, &[s[0], 1, s[1], s[2], s[3]])
            };
            let a = tape.constant(slice_time(aux, t, t + 1));
            let inp = tape.concat(&[frame, a]);
            let h = self.lift.apply(tape, &self.store, inp);
            let mut h = self.run_blocks(tape, h, 0..pre_end)?;
            if let Some(i) = split {
                let BlockImpl::Temporal(layer) = &self.blocks[i] else { unreachable!() };
                zs.push(tape.select(h, 1, 0));
                let w = self.config.window.unwrap_or(zs.len()).min(zs.len());
                let window = tape.stack(&zs[zs.len() - w..], 1);
                let out = self.temporal_forward(tape, layer, window);
                let last = tape.select(out, 1, w - 1);
                let s = tape.value(last).shape().to_vec();
                h = tape.reshape(last, &[s[0], 1, s[1], s[2], s[3]]);
            }
            let h = self.run_blocks(tape, h, post_start..self.blocks.len())?;
            let p = self.proj.apply(tape, &self.store, h);
            preds.push(tape.select(p, 1, 0));
        }
        Ok(tape.stack(&preds, 1))
    }

    pub fn rollout_state(&self) -> RolloutState {
        RolloutState {
            scan: Vec::new(),
            history: VecDeque::new(),
            last_frame: None,
            step: 0,
        }
    }

    /// Advances one step: consumes frame `u_t` (`[b, x, y, v]`) with its
    /// auxiliary channels and returns the prediction of `u_{t+1}`.
    pub fn rollout_step(&self, state: &mut RolloutState, frame: &Tensor, aux: &Tensor) -> Result<Tensor> {
        let s = frame.shape().to_vec();
        let mut tape = Tape::new();
        let f = tape.constant(frame.reshape(&[s[0], 1, s[1], s[2], s[3]])?);
        let a = tape.constant(aux.reshape(&[s[0], 1, s[1], s[2], aux.shape()[3]])?);
        let inp = tape.concat(&[f, a]);
        let h = self.lift.apply(&mut tape, &self.store, inp);
        let split = self.temporal_index();
        let pre_end = split.unwrap_or(self.blocks.len());
        let mut h = self.run_blocks(&mut tape, h, 0..pre_end)?;
        if let Some(i) = split {
            let BlockImpl::Temporal(layer) = &self.blocks[i] else { unreachable!() };
            let z = tape.value(h).clone();
            let y = self.temporal_scan(state, layer, &z)?;
            let yv = tape.constant(y);
            let wx = layer.dense.apply(&mut tape, &self.store, h);
            let pre = tape.add(wx, yv);
            let act = tape.gelu(pre);
            h = tape.add(h, act);
            h = self.run_blocks(&mut tape, h, i + 1..self.blocks.len())?;
        }
        let p = self.proj.apply(&mut tape, &self.store, h);
        let out = tape.value(p).reshape(&s)?;
        if !out.all_finite() {
            return Err(CoreError::NonFinite(format!("rollout step {}", state.step)));
        }
        state.step += 1;
        state.last_frame = Some(out.clone());
        Ok(out)
    }

    /// Temporal SSM response (without the skip-free residual path) for the
    /// newest feature map `z` (`[b, 1, x, y, h]`). An unbounded window carries
    /// the scan state; a finite window re-warms the scan from rest over the
    /// retained frames.
    fn temporal_scan(&self, state: &mut RolloutState, layer: &TemporalLayer, z: &Tensor) -> Result<Tensor> {
        let d = discretize(&layer.ssm.params(&self.store))?;
        let h = self.config.width;
        let positions = z.len() / h;
        let mut out = vec![0.0; z.len()];
        match self.config.window {
            None => {
                if state.scan.is_empty() {
                    state.scan = vec![Complex64::new(0.0, 0.0); positions * h * d.n];
                }
                for p in 0..positions {
                    for c in 0..h {
                        let x = z.data()[p * h + c];
                        let mut y = d.d[c] * x;
                        for k in 0..d.n {
                            let i = c * d.n + k;
                            let v = &mut state.scan[(p * h + c) * d.n + k];
                            *v = d.abar[i] * *v + d.bbar[i] * x;
                            y += (d.c[i] * *v).re;
                        }
                        out[p * h + c] = y;
                    }
                }
            }
            Some(w) => {
                state.history.push_back(z.clone());
                while state.history.len() > w {
                    state.history.pop_front();
                }
                let len = state.history.len();
                for p in 0..positions {
                    let mut seq = vec![0.0; h * len];
                    for (t, frame) in state.history.iter().enumerate() {
                        for c in 0..h {
                            seq[c * len + t] = frame.data()[p * h + c];
                        }
                    }
                    let (y, _) = apply_scan(&d, &Tensor::from_vec(&[h, len], seq)?, None)?;
                    for c in 0..h {
                        out[p * h + c] = y.data()[c * len + len - 1];
                    }
                }
            }
        }
        Ok(Tensor::from_vec(z.shape(), out)?)
    }

    /// Kernel supports of the spatial layers for the field-of-view check;
    /// each inner list holds the branches summed inside one layer.
    /// Every SSM bank with a readable name, in block order.
    pub fn ssm_banks(&self) -> Vec<(String, SsmParamIds)> {
        let mut out = Vec::new();
        for (i, block) in self.blocks.iter().enumerate() {
            match block {
                BlockImpl::Temporal(t) => out.push((format!("block{i}.temporal"), t.ssm)),
                BlockImpl::Spatial(layer) => match &layer.mixer {
                    Mixer::Sequential(v) | Mixer::Parallel(v) => {
                        for b in v {
                            out.push((format!("block{i}.x{}.fwd", b.axis - 2), b.fwd));
                            out.push((format!("block{i}.x{}.bwd", b.axis - 2), b.bwd));
                        }
                    }
                    Mixer::Unidir(v) => {
                        for u in v {
                            out.push((format!("block{i}.x{}.uni", u.axis - 2), u.ssm));
                        }
                    }
                    Mixer::Fourier(_) | Mixer::Factorized(_) => {}
                },
            }
        }
        out
    }

    pub fn kernel_specs(&self) -> Vec<Vec<KernelSpec>> {
        let mut out = Vec::new();
        for block in &self.blocks {
            let BlockImpl::Spatial(layer) = block else { continue };
            match &layer.mixer {
                Mixer::Sequential(list) => {
                    out.extend(list.iter().map(|s| vec![KernelSpec::ssm_bidir(s.axis - 2)]))
                }
                Mixer::Unidir(list) => out.extend(
                    list.iter().map(|s| vec![KernelSpec::ssm_unidir(s.axis - 2, !s.reverse)]),
                ),
                Mixer::Parallel(list) => {
                    out.push(list.iter().map(|s| KernelSpec::ssm_bidir(s.axis - 2)).collect())
                }
                Mixer::Fourier(_) => out.push(vec![KernelSpec::fno()]),
                Mixer::Factorized(list) => {
                    out.push(list.iter().map(|w| KernelSpec::ffno_axis(w.axes[0] - 2)).collect())
                }
            }
        }
        out
    }

    pub fn save_checkpoint(&self, dir: &Path, epoch: usize) -> Result<()> {
        fs::create_dir_all(dir)?;
        let manifest = CheckpointManifest {
            version: CHECKPOINT_VERSION,
            seed: self.seed,
            epoch,
            params: self
                .store
                .iter()
                .map(|(_, name, t)| ParamEntry {
                    name: name.to_string(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
            config: self.config.clone(),
        };
        let text = toml::to_string(&manifest).map_err(|e| CoreError::Checkpoint(e.to_string()))?;
        fs::write(dir.join("checkpoint.toml"), text)?;
        let flat: Vec<f64> = self.store.iter().flat_map(|(_, _, t)| t.data().to_vec()).collect();
        let n = flat.len();
        tio::save(dir.join("params.bin"), &Tensor::from_vec(&[n], flat)?)?;
        Ok(())
    }

    /// Rebuilds the model from a checkpoint directory; returns it with the
    /// stored epoch.
    pub fn load_checkpoint(dir: &Path) -> Result<(Model, usize)> {
        let text = fs::read_to_string(dir.join("checkpoint.toml"))?;
        let m: CheckpointManifest = toml::from_str(&text).map_err(|e| CoreError::Checkpoint(e.to_string()))?;
        if m.version != CHECKPOINT_VERSION {
            return Err(CoreError::Checkpoint(format!("unsupported version {}", m.version)));
        }
        let mut model = build_model(&m.config, m.seed)?;
        let flat = tio::load(dir.join("params.bin"))?;
        if flat.len() != model.param_count() || m.params.len() != model.store.len() {
            return Err(CoreError::Checkpoint("parameter blob does not match the config".into()));
        }
        let mut at = 0;
        let ids: Vec<_> = model.store.ids().collect();
        for (id, entry) in ids.into_iter().zip(&m.params) {
            let t = model.store.get_mut(id);
            if entry.shape != t.shape() {
                return Err(CoreError::Checkpoint(format!("shape mismatch for {}", entry.name)));
            }
            let n = t.len();
            t.data_mut().copy_from_slice(&flat.data()[at..at + n]);
            at += n;
        }
        Ok((model, m.epoch))
    }
}

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointManifest {
    version: u32,
    seed: u64,
    epoch: usize,
    params: Vec<ParamEntry>,
    config: ModelConfig,
}

#[derive(Clone, Debug, Default)]
pub struct RolloutState {
    /// Carried temporal scan state, `[position][channel][mode]`.
    pub scan: Vec<Complex64>,
    /// Retained feature maps for a finite window.
    pub history: VecDeque<Tensor>,
    pub last_frame: Option<Tensor>,
    pub step: usize,
}

/// Warms the state on the known frames `[b, t_in, x, y, v]` and then feeds
/// predictions back, returning `horizon` predicted frames. Context, when the
/// model takes it, must cover `t_in + horizon - 1` frames.
pub fn rollout_infer(
    model: &Model,
    known: &Tensor,
    context: Option<&Tensor>,
    horizon: usize,
) -> Result<Tensor> {
    if horizon == 0 {
        return Err(CoreError::ZeroHorizon);
    }
    let t_in = known.shape()[1];
    if t_in == 0 {
        return Err(CoreError::Shape("at least one known frame is required".into()));
    }
    let total = t_in + horizon - 1;
    let s = known.shape();
    let probe = Tensor::zeros(&[s[0], total, s[2], s[3], s[4]]);
    let aux = model.aux_channels(&probe, context)?;
    let mut state = model.rollout_state();
    let mut preds = Vec::with_capacity(horizon);
    let frame_at = |t: &Tensor, i: usize| {
        let f = slice_time(t, i, i + 1);
        let fs = f.shape().to_vec();
        f.reshape(&[fs[0], fs[2], fs[3], fs[4]]).unwrap()
    };
    let mut next = None;
    for t in 0..total {
        let frame = if t < t_in { frame_at(known, t) } else { next.take().unwrap() };
        let p = model.rollout_step(&mut state, &frame, &frame_at(&aux, t))?;
        if t + 1 >= t_in {
            preds.push(p.clone());
        }
        next = Some(p);
    }
    let fs = preds[0].shape().to_vec();
    let mut data = Vec::with_capacity(preds.len() * preds[0].len());
    for b in 0..fs[0] {
        let per = preds[0].len() / fs[0];
        for p in &preds {
            data.extend_from_slice(&p.data()[b * per..(b + 1) * per]);
        }
    }
    Ok(Tensor::from_vec(&[fs[0], horizon, fs[1], fs[2], fs[3]], data)?)
}
