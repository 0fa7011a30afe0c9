//! Field-of-view check for stacks of convolution kernels.
//!
//! Each kernel is described only by its support on the grid of offsets
//! `-(n-1)..=(n-1)` per axis. Supports of stacked layers combine by
//! Minkowski sum, branches inside one layer by union. A stack passes when
//! the combined support covers every offset, so every output point can see
//! every input point.

use crate::{CoreError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KernelKind {
    Fno,
    FfnoAxis,
    SpatialSsmBidir,
    SpatialSsmUnidir,
    Localized,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Support {
    /// Every offset along the kernel's axes.
    Full,
    /// Offsets `>= 0` (`forward`) or `<= 0`.
    HalfLine { forward: bool },
    /// Offsets in `lo..=hi`.
    Interval(i64, i64),
}

/// Support of one kernel. `axis = None` applies the support on every axis.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KernelSpec {
    pub kind: KernelKind,
    pub axis: Option<usize>,
    pub support: Support,
    pub param: Option<String>,
}

impl KernelSpec {
    pub fn fno() -> Self {
        Self { kind: KernelKind::Fno, axis: None, support: Support::Full, param: None }
    }

    pub fn ffno_axis(axis: usize) -> Self {
        Self { kind: KernelKind::FfnoAxis, axis: Some(axis), support: Support::Full, param: None }
    }

    pub fn ssm_bidir(axis: usize) -> Self {
        Self { kind: KernelKind::SpatialSsmBidir, axis: Some(axis), support: Support::Full, param: None }
    }

    pub fn ssm_unidir(axis: usize, forward: bool) -> Self {
        Self {
            kind: KernelKind::SpatialSsmUnidir,
            axis: Some(axis),
            support: Support::HalfLine { forward },
            param: None,
        }
    }

    pub fn localized(axis: Option<usize>, lo: i64, hi: i64) -> Self {
        Self { kind: KernelKind::Localized, axis, support: Support::Interval(lo, hi), param: None }
    }

    fn validate(&self, dims: usize) -> Result<()> {
        let ok = match (self.kind, self.support) {
            (KernelKind::Fno, Support::Full) => self.axis.is_none(),
            (KernelKind::FfnoAxis | KernelKind::SpatialSsmBidir, Support::Full) => self.axis.is_some(),
            (KernelKind::SpatialSsmUnidir, Support::HalfLine { .. }) => self.axis.is_some(),
            (KernelKind::Localized, Support::Interval(lo, hi)) => lo <= hi,
            _ => false,
        };
        if !ok {
            return Err(CoreError::Config(format!("inconsistent kernel spec {self:?}")));
        }
        if self.axis.is_some_and(|a| a >= dims) {
            return Err(CoreError::Config(format!("kernel axis out of range for a {dims}D grid")));
        }
        Ok(())
    }

    /// Per-axis offset range, clipped to the difference grid; `None` if empty.
    fn boxed(&self, grid: &[usize]) -> Option<Vec<(i64, i64)>> {
        let mut out = Vec::with_capacity(grid.len());
        for (a, &n) in grid.iter().enumerate() {
            let m = n as i64 - 1;
            let (lo, hi) = if self.axis.is_none_or(|ax| ax == a) {
                match self.support {
                    Support::Full => (-m, m),
                    Support::HalfLine { forward: true } => (0, m),
                    Support::HalfLine { forward: false } => (-m, 0),
                    Support::Interval(lo, hi) => (lo.max(-m), hi.min(m)),
                }
            } else {
                (0, 0)
            };
            if lo > hi {
                return None;
            }
            out.push((lo, hi));
        }
        Some(out)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum FovResult {
    Pass,
    /// The first offset (scanning from the most negative corner) no output
    /// can reach.
    Fail { witness: Vec<i64> },
}

impl FovResult {
    pub fn passed(&self) -> bool {
        matches!(self, FovResult::Pass)
    }
}

type BoxSet = Vec<Vec<(i64, i64)>>;

fn contains(outer: &[(i64, i64)], inner: &[(i64, i64)]) -> bool {
    outer.iter().zip(inner).all(|(o, i)| o.0 <= i.0 && i.1 <= o.1)
}

fn prune(mut boxes: BoxSet) -> BoxSet {
    boxes.sort();
    boxes.dedup();
    let mut keep: BoxSet = Vec::new();
    for (i, b) in boxes.iter().enumerate() {
        let covered = boxes
            .iter()
            .enumerate()
            .any(|(j, o)| j != i && contains(o, b) && (o != b || j < i));
        if !covered {
            keep.push(b.clone());
        }
    }
    keep
}

/// Union of boxes covering the combined support of a stack of layers, each
/// layer a list of summed branches.
pub fn stack_support(layers: &[Vec<KernelSpec>], grid: &[usize]) -> Result<BoxSet> {
    if layers.is_empty() || layers.iter().any(Vec::is_empty) {
        return Err(CoreError::EmptyLayers);
    }
    if grid.is_empty() || grid.contains(&0) {
        return Err(CoreError::Shape(format!("invalid grid {grid:?}")));
    }
    let mut acc: BoxSet = vec![vec![(0, 0); grid.len()]];
    for layer in layers {
        let mut branches: BoxSet = Vec::new();
        for spec in layer {
            spec.validate(grid.len())?;
            branches.extend(spec.boxed(grid));
        }
        let mut next = Vec::new();
        for a in &acc {
            for b in &branches {
                let mut sum = Vec::with_capacity(grid.len());
                let mut empty = false;
                for (ax, (x, y)) in a.iter().zip(b).enumerate() {
                    let m = grid[ax] as i64 - 1;
                    let (lo, hi) = ((x.0 + y.0).max(-m), (x.1 + y.1).min(m));
                    empty |= lo > hi;
                    sum.push((lo, hi));
                }
                if !empty {
                    next.push(sum);
                }
            }
        }
        acc = prune(next);
    }
    Ok(acc)
}

/// Checks layers of summed branches against the full difference grid.
pub fn fov_check_layers(layers: &[Vec<KernelSpec>], grid: &[usize]) -> Result<FovResult> {
    let boxes = stack_support(layers, grid)?;
    let dims = grid.len();
    let mut off: Vec<i64> = grid.iter().map(|&n| -(n as i64 - 1)).collect();
    loop {
        let hit = boxes
            .iter()
            .any(|b| b.iter().zip(&off).all(|(r, &o)| r.0 <= o && o <= r.1));
        if !hit {
            return Ok(FovResult::Fail { witness: off });
        }
        let mut a = dims;
        loop {
            if a == 0 {
                return Ok(FovResult::Pass);
            }
            a -= 1;
            if off[a] < grid[a] as i64 - 1 {
                off[a] += 1;
                break;
            }
            off[a] = -(grid[a] as i64 - 1);
        }
    }
}

/// Checks a stack with one kernel per layer.
pub fn fov_check(specs: &[KernelSpec], grid: &[usize]) -> Result<FovResult> {
    let layers: Vec<Vec<KernelSpec>> = specs.iter().map(|s| vec![s.clone()]).collect();
    fov_check_layers(&layers, grid)
}
