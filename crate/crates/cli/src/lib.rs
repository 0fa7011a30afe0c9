//! The `stssm` command: data generation, training, evaluation, kernel
//! dumps, field-of-view checks and ablation suites, all driven by one TOML
//! run config plus a few flags.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use stssm_array::Tensor;
use stssm_core::fov::{fov_check_layers, FovResult};
use stssm_core::model::{build_model, Model, ModelConfig};
use stssm_core::ssm::{discretize, eval_continuous_kernel, write_kernel_csv, S4DParams, Side};
use stssm_core::train::{
    ablate, evaluate_detailed, standard_arms, train, write_csv_file, write_metrics_csv, write_report_csv,
    write_timing_csv, ContextMode, ContextNormalizer, Dataset, Normalizer, TrainConfig,
};
use stssm_core::CoreError;
use stssm_pde::dataset::{generate, preset, DataConfig, GeneratedData, PRESETS};
use stssm_pde::PdeError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Failed(String),
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Config(_) | CoreError::Checkpoint(_) => CliError::Usage(e.to_string()),
            _ => CliError::Failed(e.to_string()),
        }
    }
}

impl From<PdeError> for CliError {
    fn from(e: PdeError) -> Self {
        match e {
            PdeError::Manifest(_) | PdeError::Config(_) | PdeError::NotPowerOfTwo(_) | PdeError::BadFactor { .. } => {
                CliError::Usage(e.to_string())
            }
            _ => CliError::Failed(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Failed(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

fn default_data_dir() -> PathBuf {
    PathBuf::from("data")
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("run")
}

fn one() -> usize {
    1
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelForm {
    /// `κ[t] = C Ā^t B̄` of the bilinear discretization.
    #[default]
    Discrete,
    /// `Σ_k e^{-ρ_k x} e^{iω_k x}` sampled at `x = t dt`.
    Continuous,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelConfig {
    pub form: KernelForm,
    pub length: usize,
    pub dt: f64,
    /// Damping of each mode, `Re λ = -ρ`.
    pub rho: Vec<f64>,
    pub omega: Vec<f64>,
    /// Dump every SSM bank of `<out_dir>/checkpoint` instead.
    pub from_checkpoint: bool,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            form: KernelForm::Discrete,
            length: 64,
            dt: 1.0 / 64.0,
            rho: vec![1.0],
            omega: vec![0.0],
            from_checkpoint: false,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FovConfig {
    /// Grid to check on; defaults to 64 points per spatial axis.
    pub grid: Option<Vec<usize>>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblateConfig {
    /// Subset of the standard arms, by name; all of them when absent.
    pub arms: Option<Vec<String>>,
}

/// One run: where data and outputs live, how to generate and load the data,
/// and the model and training settings. Every section but `seed` has
/// defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default = "default_data_dir")]
    pub data_dir: PathBuf,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub preset: Option<String>,
    /// Overrides on top of the preset.
    #[serde(default)]
    pub data: Option<toml::Table>,
    /// Spatial and temporal strides applied when a dataset is loaded.
    #[serde(default = "one")]
    pub subsample_x: usize,
    #[serde(default = "one")]
    pub subsample_t: usize,
    #[serde(default)]
    pub context: ContextMode,
    /// Also write per-epoch wall times to `timing.csv`.
    #[serde(default)]
    pub timing: bool,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub kernel: KernelConfig,
    #[serde(default)]
    pub fov: FovConfig,
    #[serde(default)]
    pub ablate: AblateConfig,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::Usage(format!("config: {e}")))
    }

    pub fn data_config(&self) -> Result<DataConfig> {
        let name = self
            .preset
            .as_deref()
            .ok_or_else(|| CliError::Usage("no preset given (--preset or `preset = ...`)".into()))?;
        let base = preset(name).ok_or_else(|| CliError::Usage(format!("unknown preset {name:?}")))?;
        let mut table = toml::Table::try_from(&base).map_err(|e| CliError::Failed(e.to_string()))?;
        for (k, v) in self.data.iter().flatten() {
            table.insert(k.clone(), v.clone());
        }
        let mut cfg: DataConfig = table.try_into().map_err(|e| CliError::Usage(format!("[data]: {e}")))?;
        cfg.seed = self.seed;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum OnOff {
    On,
    Off,
}

#[derive(Parser, Debug)]
#[command(name = "stssm", version, about = "Space-time state-space neural operator toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_parser = PRESETS)]
    preset: Option<String>,
    /// Drop the viscosity and forcing channels from the model input.
    #[arg(long, global = true)]
    no_context: bool,
    #[arg(long, global = true, value_enum)]
    teacher_forcing: Option<OnOff>,
    /// Temporal memory window; 0 removes the temporal layer.
    #[arg(long, global = true)]
    window: Option<usize>,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Generate a dataset into `data_dir`.
    GenData,
    /// Train a model and write metrics and a checkpoint into `out_dir`.
    Train,
    /// Roll out the checkpoint in `out_dir` on the test split.
    Eval,
    /// Check the model's kernels for a full field of view.
    FovCheck,
    /// Write SSM convolution kernels as CSV.
    KernelDump,
    /// Train the standard comparison arms and write `report.csv`.
    Ablate,
}

#[derive(Debug, PartialEq, Eq)]
pub enum Outcome {
    Done,
    CheckFailed,
}

/// Runs the command line and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(Outcome::Done) => 0,
        Ok(Outcome::CheckFailed) => 1,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            2
        }
        Err(CliError::Failed(m)) => {
            eprintln!("error: {m}");
            1
        }
    }
}

fn resolve(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            let mut table: toml::Table = text.parse().map_err(|e| CliError::Usage(format!("config: {e}")))?;
            if let Some(seed) = cli.seed {
                table.insert("seed".into(), toml::Value::Integer(seed as i64));
            }
            RunConfig::parse(&toml::to_string(&table).unwrap())?
        }
        None => {
            let seed = cli.seed.ok_or_else(|| CliError::Usage("a seed is required (--seed or a config)".into()))?;
            RunConfig::parse(&format!("seed = {seed}"))?
        }
    };
    if let Some(p) = &cli.preset {
        cfg.preset = Some(p.clone());
    }
    if cli.no_context {
        cfg.context = ContextMode::None;
    }
    if let Some(tf) = cli.teacher_forcing {
        cfg.train.teacher_forcing = tf == OnOff::On;
    }
    if let Some(k) = cli.window {
        cfg.model.window = Some(k);
    }
    cfg.train.seed = cfg.seed;
    if cfg.subsample_x == 0 || cfg.subsample_t == 0 {
        return Err(CliError::Usage("subsample factors must be positive".into()));
    }
    Ok(cfg)
}

fn execute(cli: &Cli) -> Result<Outcome> {
    let cfg = resolve(cli)?;
    match cli.command {
        Command::GenData => gen_data(&cfg),
        Command::Train => train_cmd(&cfg),
        Command::Eval => eval_cmd(&cfg),
        Command::FovCheck => fov_cmd(&cfg),
        Command::KernelDump => kernel_cmd(&cfg),
        Command::Ablate => ablate_cmd(&cfg),
    }
}

fn gen_data(cfg: &RunConfig) -> Result<Outcome> {
    let data_cfg = cfg.data_config()?;
    let data = generate(&data_cfg, |done, total| {
        if done == total || done % 16 == 0 {
            eprintln!("generated {done}/{total}");
        }
    })?;
    data.write(&cfg.data_dir)?;
    let s = data.train.shape();
    println!(
        "wrote {} train / {} test trajectories of {} frames on {}x{} to {}",
        s[0],
        data.test.shape()[0],
        s[1],
        s[2],
        s[3],
        cfg.data_dir.display()
    );
    Ok(Outcome::Done)
}

/// Strided subsampling of `[n, t, x, y, c]` in time and space.
pub fn subsample(t: &Tensor, factor_t: usize, factor_x: usize) -> Result<Tensor> {
    let s = t.shape();
    let (n, nt, nx, ny, c) = (s[0], s[1], s[2], s[3], s[4]);
    let fy = if ny > 1 { factor_x } else { 1 };
    if nx % factor_x != 0 || ny % fy != 0 {
        return Err(CliError::Usage(format!("subsample_x {factor_x} does not divide the grid {nx}x{ny}")));
    }
    let mut out = Vec::new();
    for i in 0..n {
        for ti in (0..nt).step_by(factor_t) {
            for xi in (0..nx).step_by(factor_x) {
                for yi in (0..ny).step_by(fy) {
                    let at = t.offset(&[i, ti, xi, yi, 0]);
                    out.extend_from_slice(&t.data()[at..at + c]);
                }
            }
        }
    }
    let shape = [n, nt.div_ceil(factor_t), nx / factor_x, ny / fy, c];
    Tensor::from_vec(&shape, out).map_err(|e| CliError::Failed(e.to_string()))
}

/// Normalizers fitted on the training split, saved next to a checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub fields: Normalizer,
    pub context: Option<ContextNormalizer>,
}

/// Normalized train and test splits with the configured context channels.
pub struct Loaded {
    pub spatial_dim: usize,
    pub train: Dataset,
    pub test: Dataset,
    pub norm: Normalization,
}

pub fn load_data(cfg: &RunConfig) -> Result<Loaded> {
    let data = GeneratedData::read(&cfg.data_dir)?;
    if data.test.shape()[0] == 0 {
        return Err(CliError::Usage("dataset has no test trajectories".into()));
    }
    let (ft, fx) = (cfg.subsample_t, cfg.subsample_x);
    let train = subsample(&data.train, ft, fx)?;
    let test = subsample(&data.test, ft, fx)?;
    let fields = Normalizer::fit(&train)?;
    let (train_ctx, test_ctx, context) = match (&data.train_context, &data.test_context) {
        (Some(a), Some(b)) => {
            let (a, b) = (subsample(a, ft, fx)?, subsample(b, ft, fx)?);
            let n = ContextNormalizer::fit(&a)?;
            (Some(n.normalize(&a)?), Some(n.normalize(&b)?), Some(n))
        }
        _ => (None, None, None),
    };
    let train = Dataset { frames: fields.normalize(&train), context: train_ctx };
    let test = Dataset { frames: fields.normalize(&test), context: test_ctx };
    Ok(Loaded {
        spatial_dim: data.manifest.config.spatial_dim(),
        train: train.with_context(cfg.context),
        test: test.with_context(cfg.context),
        norm: Normalization { fields, context },
    })
}

/// The configured model adapted to the data: dimension and context width
/// come from the dataset.
pub fn model_config(cfg: &RunConfig, data: &Loaded) -> ModelConfig {
    let c = data.train.context.as_ref().map_or(0, |c| *c.shape().last().unwrap());
    ModelConfig { spatial_dim: data.spatial_dim, context_channels: c, ..cfg.model.clone() }
}

fn write_toml<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = toml::to_string(value).map_err(|e| CliError::Failed(e.to_string()))?;
    fs::write(path, text)?;
    Ok(())
}

fn train_cmd(cfg: &RunConfig) -> Result<Outcome> {
    let data = load_data(cfg)?;
    let mcfg = model_config(cfg, &data);
    let mut model = build_model(&mcfg, cfg.seed)?;
    eprintln!("training {} parameters", model.param_count());
    let run = train(&mut model, &data.train, &data.test, &data.norm.fields, &cfg.train, |m| {
        eprintln!(
            "epoch {:>4}  loss {:.6e}  val {:.6e}  ({:.1}s)",
            m.epoch, m.train_loss, m.val_rel_l2, m.seconds
        );
    })?;
    fs::create_dir_all(&cfg.out_dir)?;
    write_toml(&cfg.out_dir.join("run.toml"), cfg)?;
    write_csv_file(&cfg.out_dir.join("metrics.csv"), |w| write_metrics_csv(w, &run.metrics))?;
    if cfg.timing {
        write_csv_file(&cfg.out_dir.join("timing.csv"), |w| write_timing_csv(w, &run.metrics))?;
    }
    model.store = run.best_params.clone();
    model.save_checkpoint(&cfg.out_dir.join("checkpoint"), run.best_epoch)?;
    write_toml(&cfg.out_dir.join("checkpoint").join("normalization.toml"), &data.norm)?;
    println!(
        "best validation relative L2 {:.6e} at epoch {} ({} parameters)",
        run.best_val, run.best_epoch, run.param_count
    );
    Ok(Outcome::Done)
}

fn eval_cmd(cfg: &RunConfig) -> Result<Outcome> {
    let dir = cfg.out_dir.join("checkpoint");
    if !dir.join("checkpoint.toml").exists() {
        return Err(CliError::Usage(format!("no checkpoint in {}", dir.display())));
    }
    let (model, epoch) = Model::load_checkpoint(&dir)?;
    let data = load_data(cfg)?;
    let (metrics, curve) = evaluate_detailed(&model, &data.test, &data.norm.fields, cfg.train.t_in)?;
    write_csv_file(&cfg.out_dir.join("eval.csv"), |w| {
        writeln!(w, "step,rel_l2")?;
        for (s, e) in curve.iter().enumerate() {
            writeln!(w, "{},{:.10e}", s + 1, e)?;
        }
        Ok(())
    })?;
    println!("checkpoint epoch {epoch}");
    println!("relative L2 {:.6e} (normalized fields {:.6e})", metrics.rel_l2, metrics.rel_l2_normalized);
    for (s, e) in curve.iter().enumerate() {
        println!("step {:>3}  {:.6e}", s + 1, e);
    }
    Ok(Outcome::Done)
}

fn fov_cmd(cfg: &RunConfig) -> Result<Outcome> {
    let d = cfg.fov.grid.as_ref().map_or(cfg.model.spatial_dim, |g| g.len());
    let grid = cfg.fov.grid.clone().unwrap_or_else(|| vec![64; d]);
    let model = build_model(&ModelConfig { spatial_dim: d, ..cfg.model.clone() }, cfg.seed)?;
    let specs = model.kernel_specs();
    let layers: Vec<_> = specs.into_iter().filter(|l| !l.is_empty()).collect();
    match fov_check_layers(&layers, &grid)? {
        FovResult::Pass => {
            println!("PASS: {} spatial layers cover every offset on {grid:?}", layers.len());
            Ok(Outcome::Done)
        }
        FovResult::Fail { witness } => {
            println!("FAIL: offset {witness:?} is outside the field of view on {grid:?}");
            Ok(Outcome::CheckFailed)
        }
    }
}

fn write_continuous_csv<W: Write>(mut w: W, p: &S4DParams, len: usize) -> std::io::Result<()> {
    writeln!(w, "t,channel,kappa_real,kappa_imag")?;
    for ch in 0..p.h {
        for t in 0..len {
            let z = eval_continuous_kernel(p, ch, Side::Plus, t as f64 * p.dt(ch));
            writeln!(w, "{t},{ch},{:e},{:e}", z.re, z.im)?;
        }
    }
    Ok(())
}

fn dump(path: &Path, p: &S4DParams, form: KernelForm, len: usize) -> Result<()> {
    match form {
        KernelForm::Discrete => {
            let d = discretize(p)?;
            write_csv_file(path, |w| write_kernel_csv(w, &d, len))?;
        }
        KernelForm::Continuous => write_csv_file(path, |w| write_continuous_csv(w, p, len))?,
    }
    Ok(())
}

/// Single-channel system with `λ_k = -ρ_k + iω_k`, `B = C = 1`.
pub fn kernel_system(k: &KernelConfig) -> Result<S4DParams> {
    if k.rho.len() != k.omega.len() || k.rho.is_empty() {
        return Err(CliError::Usage("kernel.rho and kernel.omega need the same, nonzero length".into()));
    }
    if !(k.dt > 0.0) || k.rho.iter().any(|r| !(*r > 0.0)) {
        return Err(CliError::Usage("kernel.dt and every kernel.rho must be positive".into()));
    }
    let one = Complex64::new(1.0, 0.0);
    let n = k.rho.len();
    Ok(S4DParams {
        h: 1,
        n,
        lambda: k.rho.iter().zip(&k.omega).map(|(r, w)| Complex64::new(-r, *w)).collect(),
        b: vec![one; n],
        c: vec![one; n],
        d: vec![0.0],
        log_dt: vec![k.dt.ln()],
    })
}

fn kernel_cmd(cfg: &RunConfig) -> Result<Outcome> {
    let k = &cfg.kernel;
    if k.length == 0 {
        return Err(CliError::Usage("kernel.length must be positive".into()));
    }
    if k.from_checkpoint {
        let (model, _) = Model::load_checkpoint(&cfg.out_dir.join("checkpoint"))?;
        let dir = cfg.out_dir.join("kernels");
        fs::create_dir_all(&dir)?;
        let banks = model.ssm_banks();
        for (name, ids) in &banks {
            dump(&dir.join(format!("{name}.csv")), &ids.params(&model.store), k.form, k.length)?;
        }
        println!("wrote {} kernel files to {}", banks.len(), dir.display());
    } else {
        fs::create_dir_all(&cfg.out_dir)?;
        let path = cfg.out_dir.join("kernel.csv");
        dump(&path, &kernel_system(k)?, k.form, k.length)?;
        println!("wrote {}", path.display());
    }
    Ok(Outcome::Done)
}

fn ablate_cmd(cfg: &RunConfig) -> Result<Outcome> {
    let data = load_data(cfg)?;
    let base = model_config(cfg, &data);
    let mut arms = standard_arms(&base, &cfg.train)?;
    if let Some(keep) = &cfg.ablate.arms {
        for name in keep {
            if !arms.iter().any(|a| &a.name == name) {
                let known: Vec<_> = arms.iter().map(|a| a.name.as_str()).collect();
                return Err(CliError::Usage(format!("unknown arm {name:?}; available: {}", known.join(", "))));
            }
        }
        arms.retain(|a| keep.contains(&a.name));
    }
    let reports = ablate(&arms, &data.train, &data.test, &data.norm.fields, |arm, m| {
        eprintln!(
            "{arm:<16} epoch {:>4}  loss {:.4e}  val {:.6e}  (normalized {:.4e})",
            m.epoch, m.train_loss, m.val_rel_l2, m.val_rel_l2_normalized
        );
    })?;
    fs::create_dir_all(&cfg.out_dir)?;
    write_csv_file(&cfg.out_dir.join("report.csv"), |w| write_report_csv(w, &reports))?;
    for r in &reports {
        println!("{:<16} {:>8} params  val rel L2 {:.6e}", r.name, r.params, r.val_rel_l2);
    }
    Ok(Outcome::Done)
}
