//! Power-of-two FFTs. Forward transforms are unnormalized and inverse
//! transforms carry the 1/n factor, so `ifft(fft(x)) == x`.

use std::cell::RefCell;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftDirection, FftPlanner};

use crate::tensor::axis_split;
use crate::{ArrayError, Result};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    let direction = if inverse {
        FftDirection::Inverse
    } else {
        FftDirection::Forward
    };
    PLANNER.with(|p| p.borrow_mut().plan_fft(n, direction))
}

fn check_len(n: usize) -> Result<()> {
    if n == 0 {
        return Err(ArrayError::Empty);
    }
    if !n.is_power_of_two() {
        return Err(ArrayError::NotPowerOfTwo(n));
    }
    Ok(())
}

pub fn fft_1d(x: &[Complex64], inverse: bool) -> Result<Vec<Complex64>> {
    check_len(x.len())?;
    let mut buf = x.to_vec();
    let n = buf.len();
    plan(n, inverse).process(&mut buf);
    if inverse {
        let scale = 1.0 / n as f64;
        buf.iter_mut().for_each(|v| *v *= scale);
    }
    Ok(buf)
}

/// In-place transform of every line along `axis` of a row-major buffer.
pub fn fft_axis(data: &mut [Complex64], shape: &[usize], axis: usize, inverse: bool) -> Result<()> {
    if axis >= shape.len() {
        return Err(ArrayError::BadAxis {
            axis,
            rank: shape.len(),
        });
    }
    let total: usize = shape.iter().product();
    if total != data.len() {
        return Err(ArrayError::ShapeMismatch {
            shape: shape.to_vec(),
            expected: total,
            found: data.len(),
        });
    }
    let (outer, n, inner) = axis_split(shape, axis);
    check_len(n)?;
    let fft = plan(n, inverse);
    let scale = if inverse { 1.0 / n as f64 } else { 1.0 };
    if inner == 1 {
        for line in data.chunks_exact_mut(n) {
            fft.process(line);
            if inverse {
                line.iter_mut().for_each(|v| *v *= scale);
            }
        }
        return Ok(());
    }
    let mut line = vec![Complex64::new(0.0, 0.0); n];
    for o in 0..outer {
        let base = o * n * inner;
        for r in 0..inner {
            for (i, slot) in line.iter_mut().enumerate() {
                *slot = data[base + i * inner + r];
            }
            fft.process(&mut line);
            for (i, v) in line.iter().enumerate() {
                data[base + i * inner + r] = *v * scale;
            }
        }
    }
    Ok(())
}

pub fn fft_axes(
    data: &mut [Complex64],
    shape: &[usize],
    axes: &[usize],
    inverse: bool,
) -> Result<()> {
    for &axis in axes {
        fft_axis(data, shape, axis, inverse)?;
    }
    Ok(())
}

/// Periodic convolution `y[i] = Σ_j k[j] x[(i - j) mod n]` via FFT.
pub fn circular_convolve_complex(x: &[Complex64], k: &[Complex64]) -> Result<Vec<Complex64>> {
    if x.len() != k.len() {
        return Err(ArrayError::LengthMismatch(x.len(), k.len()));
    }
    let xf = fft_1d(x, false)?;
    let kf = fft_1d(k, false)?;
    let prod: Vec<Complex64> = xf.iter().zip(&kf).map(|(a, b)| a * b).collect();
    fft_1d(&prod, true)
}

pub fn circular_convolve(x: &[f64], k: &[f64]) -> Result<Vec<f64>> {
    let to_c = |v: &[f64]| v.iter().map(|&r| Complex64::new(r, 0.0)).collect::<Vec<_>>();
    let y = circular_convolve_complex(&to_c(x), &to_c(k))?;
    Ok(y.into_iter().map(|c| c.re).collect())
}
