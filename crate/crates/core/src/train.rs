//! Normalization, metrics, the optimizer and the training/ablation loops.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use stssm_array::{Gradients, ParamStore, Tape, Tensor, Var};

use crate::model::{build_model, concat_last, rollout_infer, slice_time, Block, MixerKind, Model, ModelConfig};
use crate::params::param_count;
use crate::{CoreError, Result};

/// Affine map of the training split's global range onto `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub min: f64,
    pub max: f64,
}

impl Normalizer {
    pub fn fit(data: &Tensor) -> Result<Self> {
        if !data.all_finite() {
            return Err(CoreError::NonFinite("normalization input".into()));
        }
        let min = data.data().iter().copied().fold(f64::INFINITY, f64::min);
        let max = data.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !(max > min) {
            return Err(CoreError::DegenerateRange);
        }
        Ok(Self { min, max })
    }

    pub fn scale(&self) -> f64 {
        1.0 / (self.max - self.min)
    }

    pub fn shift(&self) -> f64 {
        -self.min / (self.max - self.min)
    }

    pub fn normalize(&self, t: &Tensor) -> Tensor {
        let (s, b) = (self.scale(), self.shift());
        t.map(|v| s * v + b)
    }

    pub fn denormalize(&self, t: &Tensor) -> Tensor {
        let (lo, w) = (self.min, self.max - self.min);
        t.map(|v| v * w + lo)
    }
}

/// Fits the normalizer on the training fields and applies it to both splits.
pub fn normalize_dataset(train: &Tensor, test: &Tensor) -> Result<(Tensor, Tensor, Normalizer)> {
    let n = Normalizer::fit(train)?;
    Ok((n.normalize(train), n.normalize(test), n))
}

/// Per-channel `[0, 1]` scaling of context fields (last axis) from the
/// training split. A constant channel is only shifted, to zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContextNormalizer {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl ContextNormalizer {
    pub fn fit(context: &Tensor) -> Result<Self> {
        if !context.all_finite() {
            return Err(CoreError::NonFinite("context input".into()));
        }
        let c = *context.shape().last().unwrap();
        let mut min = vec![f64::INFINITY; c];
        let mut max = vec![f64::NEG_INFINITY; c];
        for row in context.data().chunks(c.max(1)) {
            for (k, &v) in row.iter().enumerate() {
                min[k] = min[k].min(v);
                max[k] = max[k].max(v);
            }
        }
        Ok(Self { min, max })
    }

    pub fn normalize(&self, context: &Tensor) -> Result<Tensor> {
        let c = *context.shape().last().unwrap();
        if c != self.min.len() {
            return Err(CoreError::Shape(format!("context has {c} channels, normalizer {}", self.min.len())));
        }
        let mut out = context.clone();
        for row in out.data_mut().chunks_mut(c.max(1)) {
            for (k, v) in row.iter_mut().enumerate() {
                let w = self.max[k] - self.min[k];
                *v = if w > 0.0 { (*v - self.min[k]) / w } else { *v - self.min[k] };
            }
        }
        Ok(out)
    }
}

/// `‖u - û‖ / ‖u‖`.
pub fn relative_l2(u: &[f64], u_hat: &[f64]) -> Result<f64> {
    if u.len() != u_hat.len() {
        return Err(CoreError::Shape(format!("lengths {} and {}", u.len(), u_hat.len())));
    }
    let num: f64 = u.iter().zip(u_hat).map(|(a, b)| (a - b) * (a - b)).sum();
    let den: f64 = u.iter().map(|a| a * a).sum();
    if den == 0.0 {
        return Err(CoreError::ZeroReference);
    }
    Ok((num / den).sqrt())
}

/// Adam with decoupled weight decay.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl AdamW {
    pub fn new(store: &ParamStore, weight_decay: f64) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|(_, _, t)| vec![0.0; t.len()]).collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let ids: Vec<_> = store.ids().collect();
        for (i, id) in ids.into_iter().enumerate() {
            let g = grads.get(id).data();
            let p = store.get_mut(id).data_mut();
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..p.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let update = (m[j] / c1) / ((v[j] / c2).sqrt() + self.eps);
                p[j] -= lr * (update + self.weight_decay * p[j]);
            }
        }
    }
}

/// Cosine annealing from `base` at epoch 0 to zero after `epochs` epochs.
pub fn cosine_lr(base: f64, epoch: usize, epochs: usize) -> f64 {
    if epochs == 0 {
        return base;
    }
    0.5 * base * (1.0 + (std::f64::consts::PI * epoch as f64 / epochs as f64).cos())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ContextMode {
    #[default]
    Full,
    ForcingOnly,
    None,
}

impl ContextMode {
    /// Which of the stored `[viscosity, forcing]` channels the model sees.
    pub fn channels(self) -> &'static [usize] {
        match self {
            ContextMode::Full => &[0, 1],
            ContextMode::ForcingOnly => &[1],
            ContextMode::None => &[],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub teacher_forcing: bool,
    /// Input noise std drawn per batch from this range; `None` disables it.
    pub noise_std_range: Option<[f64; 2]>,
    /// Known frames given to the model before it predicts on its own.
    pub t_in: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            lr: 1e-3,
            weight_decay: 1e-4,
            batch_size: 16,
            seed: 0,
            teacher_forcing: true,
            noise_std_range: Some([0.001, 0.01]),
            t_in: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(CoreError::Config(m.to_string()));
        if !(self.lr >= 0.0) || !(self.weight_decay >= 0.0) {
            return bad("lr and weight_decay must be non-negative");
        }
        if self.batch_size == 0 || self.t_in == 0 {
            return bad("batch_size and t_in must be positive");
        }
        if let Some([a, b]) = self.noise_std_range {
            if !(0.0 <= a && a <= b) {
                return bad("noise_std_range must be ordered and non-negative");
            }
        }
        Ok(())
    }
}

/// Normalized trajectories `[n, t, x, y, v]` with optional context
/// `[n, t, x, y, c]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub frames: Tensor,
    pub context: Option<Tensor>,
}

fn gather(t: &Tensor, idx: &[usize]) -> Tensor {
    let per = t.len() / t.shape()[0];
    let mut out = Vec::with_capacity(per * idx.len());
    for &i in idx {
        out.extend_from_slice(&t.data()[i * per..(i + 1) * per]);
    }
    let mut shape = t.shape().to_vec();
    shape[0] = idx.len();
    Tensor::from_vec(&shape, out).unwrap()
}

/// Keeps the listed channels of the last axis.
pub fn select_channels(t: &Tensor, keep: &[usize]) -> Tensor {
    let c = *t.shape().last().unwrap();
    let rows = t.len() / c.max(1);
    let mut out = Vec::with_capacity(rows * keep.len());
    for r in 0..rows {
        out.extend(keep.iter().map(|&k| t.data()[r * c + k]));
    }
    let mut shape = t.shape().to_vec();
    *shape.last_mut().unwrap() = keep.len();
    Tensor::from_vec(&shape, out).unwrap()
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn frames_count(&self) -> usize {
        self.frames.shape()[1]
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            frames: gather(&self.frames, idx),
            context: self.context.as_ref().map(|c| gather(c, idx)),
        }
    }

    pub fn with_context(&self, mode: ContextMode) -> Dataset {
        let context = match (&self.context, mode) {
            (_, ContextMode::None) | (None, _) => None,
            (Some(c), m) => Some(select_channels(c, m.channels())),
        };
        Dataset { frames: self.frames.clone(), context }
    }
}

fn add_noise(t: &Tensor, std: f64, rng: &mut ChaCha8Rng) -> Tensor {
    if std == 0.0 {
        return t.clone();
    }
    let mut out = t.clone();
    for v in out.data_mut() {
        let z: f64 = StandardNormal.sample(rng);
        *v += std * z;
    }
    out
}

/// Mean per-step relative L2 of the next-frame predictions over a batch.
/// `noise_std` perturbs the ground-truth inputs only.
pub fn forward_loss(
    model: &Model,
    tape: &mut Tape,
    batch: &Dataset,
    cfg: &TrainConfig,
    noise_std: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(Var, Var)> {
    let frames = &batch.frames;
    let (b, t) = (frames.shape()[0], frames.shape()[1]);
    if t < 2 {
        return Err(CoreError::Shape("need at least two frames".into()));
    }
    let inputs = slice_time(frames, 0, t - 1);
    let target = slice_time(frames, 1, t);
    let aux = model.aux_channels(&inputs, batch.context.as_ref())?;
    let preds = if cfg.teacher_forcing {
        let noisy = add_noise(&inputs, noise_std, rng);
        let x = tape.constant(concat_last(&[&noisy, &aux]));
        model.forward_parallel(tape, x)?
    } else {
        let known = add_noise(&slice_time(frames, 0, cfg.t_in.min(t - 1)), noise_std, rng);
        model.forward_autoregressive(tape, &known, &aux, t - 1)?
    };
    let loss = tape.rel_l2(preds, &target, b * (t - 1))?;
    Ok((preds, loss))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalMetrics {
    /// Full-sequence relative L2 on denormalized fields, averaged over
    /// trajectories.
    pub rel_l2: f64,
    /// The same on normalized fields.
    pub rel_l2_normalized: f64,
}

/// Rolls out from `t_in` known frames and scores the predicted frames.
pub fn evaluate(model: &Model, data: &Dataset, norm: &Normalizer, t_in: usize) -> Result<EvalMetrics> {
    let (eval, _) = evaluate_detailed(model, data, norm, t_in)?;
    Ok(eval)
}

/// As [`evaluate`], plus the per-step relative L2 curve (denormalized).
pub fn evaluate_detailed(
    model: &Model,
    data: &Dataset,
    norm: &Normalizer,
    t_in: usize,
) -> Result<(EvalMetrics, Vec<f64>)> {
    let t = data.frames_count();
    if t_in == 0 || t_in >= t {
        return Err(CoreError::Config(format!("t_in must lie in 1..{t}")));
    }
    let horizon = t - t_in;
    let known = slice_time(&data.frames, 0, t_in);
    let preds = rollout_infer(model, &known, data.context.as_ref(), horizon)?;
    let truth = slice_time(&data.frames, t_in, t);
    let (pd, td) = (norm.denormalize(&preds), norm.denormalize(&truth));
    let n = data.len();
    let per = truth.len() / n;
    let step = per / horizon;
    let (mut phys, mut normd) = (0.0, 0.0);
    let mut curve = vec![0.0; horizon];
    for i in 0..n {
        let r = i * per..(i + 1) * per;
        phys += relative_l2(&td.data()[r.clone()], &pd.data()[r.clone()])?;
        normd += relative_l2(&truth.data()[r.clone()], &preds.data()[r])?;
        for (s, c) in curve.iter_mut().enumerate() {
            let q = i * per + s * step..i * per + (s + 1) * step;
            *c += relative_l2(&td.data()[q.clone()], &pd.data()[q])? / n as f64;
        }
    }
    let m = EvalMetrics {
        rel_l2: phys / n as f64,
        rel_l2_normalized: normd / n as f64,
    };
    Ok((m, curve))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_rel_l2: f64,
    pub val_rel_l2_normalized: f64,
    pub lr: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug)]
pub struct TrainRun {
    pub metrics: Vec<EpochMetrics>,
    pub best_epoch: usize,
    pub best_val: f64,
    pub best_params: ParamStore,
    pub param_count: usize,
}

/// Trains in place; the model ends with its final parameters and the run
/// holds the best validation snapshot.
pub fn train(
    model: &mut Model,
    train_set: &Dataset,
    val_set: &Dataset,
    norm: &Normalizer,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainRun> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(CoreError::Config("empty dataset".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = AdamW::new(&model.store, cfg.weight_decay);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut run = TrainRun {
        metrics: Vec::with_capacity(cfg.epochs),
        best_epoch: 0,
        best_val: f64::INFINITY,
        best_params: model.store.clone(),
        param_count: model.param_count(),
    };
    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let lr = cosine_lr(cfg.lr, epoch, cfg.epochs);
        order.shuffle(&mut rng);
        let (mut total, mut batches) = (0.0, 0);
        for chunk in order.chunks(cfg.batch_size) {
            let batch = train_set.subset(chunk);
            let std = match cfg.noise_std_range {
                Some([a, b]) if b > a => rng.random_range(a..b),
                Some([a, _]) => a,
                None => 0.0,
            };
            let mut tape = Tape::new();
            let (_, loss) = forward_loss(model, &mut tape, &batch, cfg, std, &mut rng)?;
            let value = tape.value(loss).data()[0];
            if !value.is_finite() {
                return Err(CoreError::NonFinite(format!("training loss at epoch {epoch}")));
            }
            let grads = tape.backward(loss, &model.store)?;
            opt.step(&mut model.store, &grads, lr);
            total += value;
            batches += 1;
        }
        let val = evaluate(model, val_set, norm, cfg.t_in)?;
        let m = EpochMetrics {
            epoch,
            train_loss: total / batches as f64,
            val_rel_l2: val.rel_l2,
            val_rel_l2_normalized: val.rel_l2_normalized,
            lr,
            seconds: started.elapsed().as_secs_f64(),
        };
        if val.rel_l2 < run.best_val {
            run.best_val = val.rel_l2;
            run.best_epoch = epoch;
            run.best_params = model.store.clone();
        }
        on_epoch(&m);
        run.metrics.push(m);
    }
    Ok(run)
}

/// Deterministic per-epoch metrics; wall time goes to [`write_timing_csv`].
pub fn write_metrics_csv<W: Write>(mut w: W, metrics: &[EpochMetrics]) -> std::io::Result<()> {
    writeln!(w, "epoch,train_loss,val_rel_l2,val_rel_l2_normalized,lr")?;
    for m in metrics {
        writeln!(
            w,
            "{},{:.10e},{:.10e},{:.10e},{:.10e}",
            m.epoch, m.train_loss, m.val_rel_l2, m.val_rel_l2_normalized, m.lr
        )?;
    }
    Ok(())
}

pub fn write_timing_csv<W: Write>(mut w: W, metrics: &[EpochMetrics]) -> std::io::Result<()> {
    writeln!(w, "epoch,seconds")?;
    for m in metrics {
        writeln!(w, "{},{:.3}", m.epoch, m.seconds)?;
    }
    Ok(())
}

/// Same model with every spatial layer forward-only and the spatial depth
/// doubled; the state size is picked to match the bidirectional parameter
/// count as closely as possible.
pub fn matched_unidir(base: &ModelConfig) -> Result<ModelConfig> {
    let target = param_count(base)?.total as i64;
    let mut layout = Vec::new();
    for b in &base.layout {
        match b {
            Block::Spatial => layout.extend([Block::Spatial, Block::Spatial]),
            Block::Temporal => layout.push(Block::Temporal),
        }
    }
    let mut best: Option<(i64, ModelConfig)> = None;
    for n in 1..=4 * base.state_size {
        let cfg = ModelConfig {
            mixer: MixerKind::Unidir,
            layout: layout.clone(),
            state_size: n,
            ..base.clone()
        };
        let gap = (param_count(&cfg)?.total as i64 - target).abs();
        if best.as_ref().is_none_or(|(g, _)| gap < *g) {
            best = Some((gap, cfg));
        }
    }
    Ok(best.unwrap().1)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Arm {
    pub name: String,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub context: ContextMode,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArmReport {
    pub name: String,
    pub params: usize,
    pub best_epoch: usize,
    /// Validation error of the best snapshot (denormalized, then normalized).
    pub val_rel_l2: f64,
    pub val_rel_l2_normalized: f64,
    pub seconds: f64,
}

/// The standard suite around a base configuration: spatial direction,
/// memory windows, teacher forcing, and (when the base takes two context
/// channels) context removal.
pub fn standard_arms(base: &ModelConfig, train: &TrainConfig) -> Result<Vec<Arm>> {
    let arm = |name: &str, model: ModelConfig, train: TrainConfig, context: ContextMode| Arm {
        name: name.to_string(),
        model,
        train,
        context,
    };
    let full = if base.context_channels == 2 { ContextMode::Full } else { ContextMode::None };
    let mut arms = vec![
        arm("bidir", base.clone(), train.clone(), full),
        arm("unidir-matched", matched_unidir(base)?, train.clone(), full),
    ];
    for k in [0, 1, 2, 4, 8] {
        let m = ModelConfig { window: Some(k), ..base.clone() };
        arms.push(arm(&format!("window-{k}"), m, train.clone(), full));
    }
    for tf in [true, false] {
        let t = TrainConfig { teacher_forcing: tf, ..train.clone() };
        arms.push(arm(if tf { "tf-on" } else { "tf-off" }, base.clone(), t, full));
    }
    if base.context_channels == 2 {
        for (name, mode) in [("context-full", ContextMode::Full), ("context-forcing", ContextMode::ForcingOnly), ("context-none", ContextMode::None)] {
            let m = ModelConfig { context_channels: mode.channels().len(), ..base.clone() };
            arms.push(arm(name, m, train.clone(), mode));
        }
    }
    Ok(arms)
}

/// Trains every arm from the same seed on the same data and reports the
/// best validation error of each. The datasets carry the full context.
pub fn ablate(
    arms: &[Arm],
    train_set: &Dataset,
    val_set: &Dataset,
    norm: &Normalizer,
    mut on_epoch: impl FnMut(&str, &EpochMetrics),
) -> Result<Vec<ArmReport>> {
    let mut out = Vec::with_capacity(arms.len());
    for arm in arms {
        let started = Instant::now();
        let tr = train_set.with_context(arm.context);
        let va = val_set.with_context(arm.context);
        let mut model = build_model(&arm.model, arm.train.seed)?;
        let run = train(&mut model, &tr, &va, norm, &arm.train, |m| on_epoch(&arm.name, m))?;
        model.store = run.best_params.clone();
        let best = evaluate(&model, &va, norm, arm.train.t_in)?;
        out.push(ArmReport {
            name: arm.name.clone(),
            params: run.param_count,
            best_epoch: run.best_epoch,
            val_rel_l2: best.rel_l2,
            val_rel_l2_normalized: best.rel_l2_normalized,
            seconds: started.elapsed().as_secs_f64(),
        });
    }
    Ok(out)
}

/// One row per arm; wall time is left out so reruns compare byte for byte.
pub fn write_report_csv<W: Write>(mut w: W, reports: &[ArmReport]) -> std::io::Result<()> {
    writeln!(w, "arm,params,best_epoch,val_rel_l2,val_rel_l2_normalized")?;
    for r in reports {
        writeln!(
            w,
            "{},{},{},{:.10e},{:.10e}",
            r.name, r.params, r.best_epoch, r.val_rel_l2, r.val_rel_l2_normalized
        )?;
    }
    Ok(())
}

pub fn write_csv_file(path: &Path, f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Result<()> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}
