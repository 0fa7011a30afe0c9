//! Closed-form parameter counts and the FNO-vs-SSM scaling comparison.

use crate::model::{Block, MixerKind, ModelConfig};
use crate::Result;

/// Published totals for the default 1D and 2D models.
pub const REFERENCE_TOTAL_1D: usize = 203_713;
pub const REFERENCE_TOTAL_2D: usize = 369_665;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ParamBreakdown {
    pub lifting: usize,
    pub projection: usize,
    /// Dense channel maps inside layers (`W`, `b`, feed-forward weights).
    pub pointwise: usize,
    /// SSM per-mode parameters: `λ`, `B`, `C`.
    pub modal: usize,
    /// SSM per-channel parameters: `D`, `log dt`.
    pub per_channel: usize,
    /// Fourier multiplier weights.
    pub spectral: usize,
    pub total: usize,
}

fn dense(fan_in: usize, fan_out: usize) -> usize {
    fan_in * fan_out + fan_out
}

/// One SSM bank of `h` channels and `n` modes: (modal, per-channel).
pub fn ssm_params(h: usize, n: usize) -> (usize, usize) {
    (6 * h * n, 2 * h)
}

/// Bidirectional scans on each of `d` axes: (modal, per-channel).
pub fn spatial_ssm_params(h: usize, n: usize, d: usize) -> (usize, usize) {
    let (m, c) = ssm_params(h, n);
    (2 * d * m, 2 * d * c)
}

/// Dense Fourier weights with `retained[a]` stored frequencies on axis `a`.
pub fn fno_spectral_params(h: usize, retained: &[usize]) -> usize {
    2 * h * h * retained.iter().product::<usize>()
}

fn spectral_modes(d: usize, k: usize) -> usize {
    if d == 1 {
        k + 1
    } else {
        (2 * k + 1) * (k + 1)
    }
}

pub fn param_count(cfg: &ModelConfig) -> Result<ParamBreakdown> {
    cfg.validate()?;
    let (h, n, d, k) = (cfg.width, cfg.state_size, cfg.spatial_dim, cfg.modes);
    let mut p = ParamBreakdown {
        lifting: dense(cfg.input_width(), h),
        projection: dense(h, cfg.field_channels),
        ..Default::default()
    };
    for block in &cfg.layout {
        match block {
            Block::Temporal if cfg.has_temporal() => {
                let (m, c) = ssm_params(h, n);
                p.modal += m;
                p.per_channel += c;
                p.pointwise += dense(h, h);
            }
            Block::Temporal => {}
            Block::Spatial => {
                match cfg.mixer {
                    MixerKind::Sequential | MixerKind::Parallel => {
                        let (m, c) = spatial_ssm_params(h, n, d);
                        p.modal += m;
                        p.per_channel += c;
                    }
                    MixerKind::Unidir => {
                        let (m, c) = ssm_params(h, n);
                        p.modal += d * m;
                        p.per_channel += d * c;
                    }
                    MixerKind::Fno => p.spectral += 2 * h * h * spectral_modes(d, k),
                    MixerKind::FnoReduced => p.spectral += 2 * h * spectral_modes(d, k),
                    MixerKind::Ffno => p.spectral += d * 2 * h * h * (k + 1),
                }
                p.pointwise += match cfg.mixer {
                    MixerKind::Parallel | MixerKind::Ffno => dense(h, 2 * h) + dense(2 * h, h),
                    _ => dense(h, h),
                };
            }
        }
    }
    p.total = p.lifting + p.projection + p.pointwise + p.modal + p.per_channel + p.spectral;
    Ok(p)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScalingRow {
    pub label: String,
    /// Fourier weights of one dense FNO layer.
    pub fno: usize,
    /// Per-mode SSM parameters of one bidirectional spatial layer.
    pub ssm_modal: usize,
    /// Per-channel SSM parameters of the same layer.
    pub ssm_per_channel: usize,
    /// The `H² + H` channel map both layers share.
    pub pointwise: usize,
    /// Ratios against the base row.
    pub fno_ratio: f64,
    pub ssm_ratio: f64,
}

/// One spatial layer of each kind at the base setting and with width,
/// modes (retained frequencies per axis for the FNO, state size for the
/// SSM) and dimension each doubled or raised.
pub fn scaling_report(h: usize, n: usize, retained: usize, d: usize) -> Vec<ScalingRow> {
    let cases = [
        ("base", h, n, retained, d),
        ("width x2", 2 * h, n, retained, d),
        ("modes x2", h, 2 * n, 2 * retained, d),
        ("dim +1", h, n, retained, d + 1),
    ];
    let base_fno = fno_spectral_params(h, &vec![retained; d]) as f64;
    let base_ssm = spatial_ssm_params(h, n, d).0 as f64;
    cases
        .iter()
        .map(|&(label, h, n, m, d)| {
            let fno = fno_spectral_params(h, &vec![m; d]);
            let (modal, per_channel) = spatial_ssm_params(h, n, d);
            ScalingRow {
                label: label.to_string(),
                fno,
                ssm_modal: modal,
                ssm_per_channel: per_channel,
                pointwise: dense(h, h),
                fno_ratio: fno as f64 / base_fno,
                ssm_ratio: modal as f64 / base_ssm,
            }
        })
        .collect()
}
