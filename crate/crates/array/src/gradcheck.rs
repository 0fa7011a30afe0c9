//! Central finite-difference checks against the tape.

use crate::tape::{ParamId, ParamStore, Tape, Var};
use crate::Result;

#[derive(Clone, Debug)]
pub struct GradcheckConfig {
    pub step: f64,
    /// Gradients smaller than this are compared on an absolute scale.
    pub floor: f64,
    /// Check at most this many entries per parameter, evenly spaced.
    pub max_entries_per_param: usize,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            floor: 1e-6,
            max_entries_per_param: usize::MAX,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradcheckReport {
    pub max_rel_err: f64,
    pub worst: Option<(ParamId, usize, f64, f64)>,
    pub checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares `backward` against central differences of the scalar returned
/// by `f`. Parameters are restored before returning.
pub fn check_gradients<F>(store: &mut ParamStore, f: F, cfg: &GradcheckConfig) -> Result<GradcheckReport>
where
    F: Fn(&mut Tape, &ParamStore) -> Var,
{
    let eval = |store: &ParamStore| {
        let mut tape = Tape::new();
        let loss = f(&mut tape, store);
        tape.value(loss).data()[0]
    };
    let analytic = {
        let mut tape = Tape::new();
        let loss = f(&mut tape, store);
        tape.backward(loss, store)?
    };
    let mut report = GradcheckReport {
        max_rel_err: 0.0,
        worst: None,
        checked: 0,
    };
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        let n = store.get(id).len();
        let stride = n.div_ceil(cfg.max_entries_per_param.max(1)).max(1);
        for i in (0..n).step_by(stride) {
            let orig = store.get(id).data()[i];
            store.get_mut(id).data_mut()[i] = orig + cfg.step;
            let up = eval(store);
            store.get_mut(id).data_mut()[i] = orig - cfg.step;
            let down = eval(store);
            store.get_mut(id).data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * cfg.step);
            let a = analytic.get(id).data()[i];
            let err = relative_error(a, numeric, cfg.floor);
            report.checked += 1;
            if err > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = report.max_rel_err.max(err);
                if err >= report.max_rel_err {
                    report.worst = Some((id, i, a, numeric));
                }
            }
        }
    }
    Ok(report)
}
