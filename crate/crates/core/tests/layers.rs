use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stssm_array::{fft_axes, ParamStore, Tape, Tensor};
use stssm_core::layers::{
    ffno_conv, fno2d_reduced, fno_conv_1d, fno_conv_2d, spatial_ssm_2d, spatial_ssm_bidir_1d, BidirSsm,
    Mixer,
};
use stssm_core::ssm::{apply_scan, discretize, materialize_kernel, S4DParams, SsmParamIds};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random(shape: &[usize], r: &mut ChaCha8Rng) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
}

fn random_complex(shape: &[usize], r: &mut ChaCha8Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let z = (0..n)
        .map(|_| Complex64::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)))
        .collect();
    Tensor::from_complex(shape, z).unwrap()
}

fn max_diff(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.max_abs_diff(b)
}

fn identity_weights(h: usize, modes: usize) -> Tensor {
    let mut w = vec![Complex64::new(0.0, 0.0); h * h * modes];
    for i in 0..h {
        for m in 0..modes {
            w[(i * h + i) * modes + m] = Complex64::new(1.0, 0.0);
        }
    }
    Tensor::from_complex(&[h, h, modes], w).unwrap()
}

/// Real kernel of one retained-mode multiplier on a periodic line of `n`
/// points: `(1/n) Σ_k a_k Re(w_k e^{2πiks/n})`.
fn explicit_kernel(w: &[Complex64], n: usize, s: usize) -> f64 {
    w.iter()
        .enumerate()
        .map(|(k, wk)| {
            let amp = if k == 0 || 2 * k == n { 1.0 } else { 2.0 };
            amp * (wk * Complex64::from_polar(1.0, 2.0 * PI * (k * s) as f64 / n as f64)).re
        })
        .sum::<f64>()
        / n as f64
}

#[test]
fn fno_identity_at_full_cutoff() {
    let v = random(&[16, 3], &mut rng(1));
    let y = fno_conv_1d(&v, &identity_weights(3, 9), 8).unwrap();
    assert!(max_diff(&y, &v) < 1e-10);
}

#[test]
fn fno_dc_only_returns_mean() {
    let v = random(&[16, 2], &mut rng(2));
    let y = fno_conv_1d(&v, &identity_weights(2, 1), 0).unwrap();
    for ch in 0..2 {
        let mean: f64 = (0..16).map(|x| v.get(&[x, ch])).sum::<f64>() / 16.0;
        for x in 0..16 {
            assert!((y.get(&[x, ch]) - mean).abs() < 1e-12);
        }
    }
}

#[test]
fn fno_rejects_cutoff_above_half_grid() {
    let v = random(&[16, 2], &mut rng(3));
    assert!(fno_conv_1d(&v, &identity_weights(2, 10), 9).is_err());
}

#[test]
fn fno_matches_explicit_kernel_convolution() {
    let mut r = rng(4);
    let (n, h, k) = (32, 3, 4);
    let v = random(&[n, h], &mut r);
    let w = random_complex(&[h, h, k + 1], &mut r);
    let y = fno_conv_1d(&v, &w, k).unwrap();
    let wz = w.try_complex().unwrap();
    for x in 0..n {
        for o in 0..h {
            let mut acc = 0.0;
            for i in 0..h {
                let modes = &wz[(i * h + o) * (k + 1)..(i * h + o + 1) * (k + 1)];
                for xp in 0..n {
                    acc += explicit_kernel(modes, n, (x + n - xp) % n) * v.get(&[xp, i]);
                }
            }
            assert!((y.get(&[x, o]) - acc).abs() < 1e-8);
        }
    }
}

#[test]
fn ffno_with_degenerate_axis_equals_fno_1d() {
    let mut r = rng(5);
    let v = random(&[16, 1, 2], &mut r);
    let wx = random_complex(&[2, 2, 5], &mut r);
    let wy = random_complex(&[2, 2, 1], &mut r);
    let y = ffno_conv(&v, &wx, &wy, [4, 0]).unwrap();
    let y1 = fno_conv_1d(&v.reshape(&[16, 2]).unwrap(), &wx, 4).unwrap();
    assert!(max_diff(&y.reshape(&[16, 2]).unwrap(), &y1) < 1e-10);
}

#[test]
fn ffno_zero_weights_give_zero_convolution() {
    let v = random(&[8, 8, 2], &mut rng(6));
    let z = Tensor::from_complex(&[2, 2, 3], vec![Complex64::new(0.0, 0.0); 12]).unwrap();
    let y = ffno_conv(&v, &z, &z, [2, 2]).unwrap();
    assert!(y.data().iter().all(|&x| x == 0.0));
}

#[test]
fn ffno_matches_delta_factorized_kernel() {
    let mut r = rng(7);
    let (n, h, k) = (8, 2, 3);
    let v = random(&[n, n, h], &mut r);
    let wx = random_complex(&[h, h, k + 1], &mut r);
    let wy = random_complex(&[h, h, k + 1], &mut r);
    let y = ffno_conv(&v, &wx, &wy, [k, k]).unwrap();
    let (zx, zy) = (wx.try_complex().unwrap(), wy.try_complex().unwrap());
    let modes = |z: &[Complex64], i: usize, o: usize| z[(i * h + o) * (k + 1)..(i * h + o + 1) * (k + 1)].to_vec();
    for x in 0..n {
        for yy in 0..n {
            for o in 0..h {
                let mut acc = 0.0;
                for i in 0..h {
                    let (mx, my) = (modes(zx, i, o), modes(zy, i, o));
                    for xp in 0..n {
                        for yp in 0..n {
                            let kx = if yy == yp { explicit_kernel(&mx, n, (x + n - xp) % n) } else { 0.0 };
                            let ky = if x == xp { explicit_kernel(&my, n, (yy + n - yp) % n) } else { 0.0 };
                            acc += (kx + ky) * v.get(&[xp, yp, i]);
                        }
                    }
                }
                assert!((y.get(&[x, yy, o]) - acc).abs() < 1e-8);
            }
        }
    }
}

#[test]
fn reduced_fno_all_ones_is_identity() {
    let v = random(&[8, 8, 3], &mut rng(8));
    let modes = 8 * 5;
    let w = Tensor::from_complex(&[3, modes], vec![Complex64::new(1.0, 0.0); 3 * modes]).unwrap();
    assert!(max_diff(&fno2d_reduced(&v, &w, [4, 4]).unwrap(), &v) < 1e-10);
}

#[test]
fn reduced_fno_single_mode_is_bandpass() {
    let v = random(&[8, 8, 1], &mut rng(9));
    // modes ordered kx ∈ {0, 1, 2, -2, -1} × ky ∈ {0, 1, 2}; pick (kx, ky) = (1, 2)
    let mut w = vec![Complex64::new(0.0, 0.0); 15];
    w[3 + 2] = Complex64::new(1.0, 0.0);
    let y = fno2d_reduced(&v, &Tensor::from_complex(&[1, 15], w).unwrap(), [2, 2]).unwrap();
    let mut spec: Vec<Complex64> = y.data().iter().map(|&x| Complex64::new(x, 0.0)).collect();
    fft_axes(&mut spec, &[8, 8, 1], &[0, 1], false).unwrap();
    let mut vs: Vec<Complex64> = v.data().iter().map(|&x| Complex64::new(x, 0.0)).collect();
    fft_axes(&mut vs, &[8, 8, 1], &[0, 1], false).unwrap();
    for kx in 0..8 {
        for ky in 0..8 {
            let z = spec[kx * 8 + ky];
            let kept = (kx, ky) == (1, 2) || (kx, ky) == (7, 6);
            if kept {
                assert!((z - vs[kx * 8 + ky]).norm() < 1e-10);
            } else {
                assert!(z.norm() < 1e-10, "leak at ({kx}, {ky})");
            }
        }
    }
}

#[test]
fn reduced_fno_equals_dense_with_diagonal_weights() {
    let mut r = rng(10);
    let (h, modes) = (3, 5 * 3);
    let v = random(&[8, 8, h], &mut r);
    let w = random_complex(&[h, modes], &mut r);
    let wz = w.try_complex().unwrap();
    let mut dense = vec![Complex64::new(0.0, 0.0); h * h * modes];
    for c in 0..h {
        for m in 0..modes {
            dense[(c * h + c) * modes + m] = wz[c * modes + m];
        }
    }
    let a = fno2d_reduced(&v, &w, [2, 2]).unwrap();
    let b = fno_conv_2d(&v, &Tensor::from_complex(&[h, h, modes], dense).unwrap(), [2, 2]).unwrap();
    assert!(max_diff(&a, &b) < 1e-12);
}

fn params(h: usize, n: usize, seed: u64) -> S4DParams {
    let mut p = S4DParams::init_lin(h, n, &mut rng(seed));
    p.log_dt = vec![0.3f64.ln(); h];
    p
}

#[test]
fn bidir_symmetric_parameters_preserve_even_inputs() {
    let p = params(2, 4, 11);
    let mut r = rng(12);
    let half = random(&[8, 2], &mut r);
    let mut even = vec![0.0; 32];
    for x in 0..8 {
        for c in 0..2 {
            even[x * 2 + c] = half.get(&[x, c]);
            even[(15 - x) * 2 + c] = half.get(&[x, c]);
        }
    }
    let y = spatial_ssm_bidir_1d(&Tensor::from_vec(&[16, 2], even).unwrap(), &p, &p).unwrap();
    for x in 0..16 {
        for c in 0..2 {
            assert!((y.get(&[x, c]) - y.get(&[15 - x, c])).abs() < 1e-12);
        }
    }
}

#[test]
fn bidir_impulse_decomposes_into_half_kernels() {
    let (f, b) = (params(1, 4, 13), params(1, 4, 14));
    let mut v = vec![0.0; 16];
    v[8] = 1.0;
    let y = spatial_ssm_bidir_1d(&Tensor::from_vec(&[16, 1], v).unwrap(), &f, &b).unwrap();
    let (df, db) = (discretize(&f).unwrap(), discretize(&b).unwrap());
    let (kf, kb) = (materialize_kernel(&df, 16), materialize_kernel(&db, 16));
    for x in 0..16 {
        let want = if x < 8 {
            kb.data()[8 - x]
        } else if x > 8 {
            kf.data()[x - 8]
        } else {
            kf.data()[0] + kb.data()[0] + df.d[0] + db.d[0]
        };
        assert!((y.get(&[x, 0]) - want).abs() < 1e-12);
    }
}

#[test]
fn bidir_zero_input_gives_zero() {
    let y = spatial_ssm_bidir_1d(&Tensor::zeros(&[8, 3]), &params(3, 2, 15), &params(3, 2, 16)).unwrap();
    assert!(y.data().iter().all(|&v| v == 0.0));
}

#[test]
fn two_d_with_singleton_x_is_the_y_pass() {
    let ps: Vec<S4DParams> = (0..4).map(|i| params(2, 3, 20 + i)).collect();
    let v = random(&[1, 8, 2], &mut rng(17));
    let full = spatial_ssm_2d(&v, (&ps[0], &ps[1]), (&ps[2], &ps[3])).unwrap();
    let x_only = stssm_core::layers::spatial_ssm_bidir(&v, &ps[0], &ps[1], 0).unwrap();
    let y_only = spatial_ssm_bidir_1d(&x_only.reshape(&[8, 2]).unwrap(), &ps[2], &ps[3]).unwrap();
    assert!(max_diff(&full, &y_only.reshape(&[1, 8, 2]).unwrap()) < 1e-12);
    // a singleton x pass only scales by the zero-lag response
    let scale: Vec<f64> = (0..2)
        .map(|c| {
            let (a, b) = (discretize(&ps[0]).unwrap(), discretize(&ps[1]).unwrap());
            materialize_kernel(&a, 1).data()[c] + materialize_kernel(&b, 1).data()[c] + a.d[c] + b.d[c]
        })
        .collect();
    for y in 0..8 {
        for c in 0..2 {
            assert!((x_only.get(&[0, y, c]) - scale[c] * v.get(&[0, y, c])).abs() < 1e-12);
        }
    }
}

#[test]
fn two_d_separable_input_stays_separable() {
    let ps: Vec<S4DParams> = (0..4).map(|i| params(1, 3, 30 + i)).collect();
    let mut r = rng(18);
    let f: Vec<f64> = (0..8).map(|_| r.random_range(-1.0..1.0)).collect();
    let g: Vec<f64> = (0..8).map(|_| r.random_range(-1.0..1.0)).collect();
    let u: Vec<f64> = (0..64).map(|i| f[i / 8] * g[i % 8]).collect();
    let out = spatial_ssm_2d(&Tensor::from_vec(&[8, 8, 1], u).unwrap(), (&ps[0], &ps[1]), (&ps[2], &ps[3])).unwrap();
    let kf = spatial_ssm_bidir_1d(&Tensor::from_vec(&[8, 1], f).unwrap(), &ps[0], &ps[1]).unwrap();
    let kg = spatial_ssm_bidir_1d(&Tensor::from_vec(&[8, 1], g).unwrap(), &ps[2], &ps[3]).unwrap();
    for x in 0..8 {
        for y in 0..8 {
            assert!((out.get(&[x, y, 0]) - kf.data()[x] * kg.data()[y]).abs() < 1e-12);
        }
    }
}

/// Reference transcription of the pseudocode sweep: lines along `x` for
/// every `y` run a forward scan and a reversed backward scan, the sum is
/// then swept along `y` the same way. Uses the recurrent path throughout.
fn pseudocode_trace(v: &Tensor, ps: &[S4DParams]) -> Tensor {
    let (nx, ny, h) = (v.shape()[0], v.shape()[1], v.shape()[2]);
    let ds: Vec<_> = ps.iter().map(|p| discretize(p).unwrap()).collect();
    let sweep = |line: Vec<f64>, len: usize, fwd: usize| {
        let u = Tensor::from_vec(&[h, len], line.clone()).unwrap();
        let (yf, _) = apply_scan(&ds[fwd], &u, None).unwrap();
        let flipped: Vec<f64> = (0..h).flat_map(|c| (0..len).rev().map(move |t| (c, t))).map(|(c, t)| line[c * len + t]).collect();
        let (yb, _) = apply_scan(&ds[fwd + 1], &Tensor::from_vec(&[h, len], flipped).unwrap(), None).unwrap();
        (0..h * len)
            .map(|i| {
                let (c, t) = (i / len, i % len);
                yf.data()[i] + yb.data()[c * len + (len - 1 - t)]
            })
            .collect::<Vec<f64>>()
    };
    let mut mid = vec![0.0; nx * ny * h];
    for y in 0..ny {
        let line = (0..h).flat_map(|c| (0..nx).map(move |x| (c, x))).map(|(c, x)| v.get(&[x, y, c])).collect();
        let out = sweep(line, nx, 0);
        for c in 0..h {
            for x in 0..nx {
                mid[(x * ny + y) * h + c] = out[c * nx + x];
            }
        }
    }
    let mut res = vec![0.0; nx * ny * h];
    for x in 0..nx {
        let line = (0..h).flat_map(|c| (0..ny).map(move |y| (c, y))).map(|(c, y)| mid[(x * ny + y) * h + c]).collect();
        let out = sweep(line, ny, 2);
        for c in 0..h {
            for y in 0..ny {
                res[(x * ny + y) * h + c] = out[c * ny + y];
            }
        }
    }
    Tensor::from_vec(&[nx, ny, h], res).unwrap()
}

#[test]
fn two_d_matches_pseudocode_trace_and_tape_path() {
    let ps: Vec<S4DParams> = (0..4).map(|i| params(2, 3, 40 + i)).collect();
    let v = random(&[4, 4, 2], &mut rng(19));
    let direct = spatial_ssm_2d(&v, (&ps[0], &ps[1]), (&ps[2], &ps[3])).unwrap();
    let trace = pseudocode_trace(&v, &ps);
    assert!(max_diff(&direct, &trace) < 1e-12);

    let mut store = ParamStore::new();
    let reg = |store: &mut ParamStore, i: usize| SsmParamIds::register(store, &format!("s{i}"), &ps[i]).unwrap();
    let (a, b, c, d) = (reg(&mut store, 0), reg(&mut store, 1), reg(&mut store, 2), reg(&mut store, 3));
    let mixer = Mixer::Sequential(vec![
        BidirSsm { fwd: a, bwd: b, axis: 2 },
        BidirSsm { fwd: c, bwd: d, axis: 3 },
    ]);
    let mut tape = Tape::new();
    let x = tape.constant(v.reshape(&[1, 1, 4, 4, 2]).unwrap());
    let y = mixer.apply(&mut tape, &store, x).unwrap();
    assert!(max_diff(&tape.value(y).reshape(&[4, 4, 2]).unwrap(), &trace) < 1e-12);
}

#[test]
fn parallel_mixer_sums_axis_passes() {
    let ps: Vec<S4DParams> = (0..4).map(|i| params(1, 2, 50 + i)).collect();
    let v = random(&[4, 8, 1], &mut rng(21));
    let mut store = ParamStore::new();
    let ids: Vec<SsmParamIds> = ps
        .iter()
        .enumerate()
        .map(|(i, p)| SsmParamIds::register(&mut store, &format!("p{i}"), p).unwrap())
        .collect();
    let mixer = Mixer::Parallel(vec![
        BidirSsm { fwd: ids[0], bwd: ids[1], axis: 2 },
        BidirSsm { fwd: ids[2], bwd: ids[3], axis: 3 },
    ]);
    let mut tape = Tape::new();
    let x = tape.constant(v.reshape(&[1, 1, 4, 8, 1]).unwrap());
    let y = mixer.apply(&mut tape, &store, x).unwrap();
    let xs = stssm_core::layers::spatial_ssm_bidir(&v, &ps[0], &ps[1], 0).unwrap();
    let ys = stssm_core::layers::spatial_ssm_bidir(&v, &ps[2], &ps[3], 1).unwrap();
    let want: Vec<f64> = xs.data().iter().zip(ys.data()).map(|(a, b)| a + b).collect();
    let got = tape.value(y).data();
    for (a, b) in got.iter().zip(&want) {
        assert!((a - b).abs() < 1e-12);
    }
}

/// Returns (max effective-kernel error / max kernel, relative error of the
/// convolution on a smooth three-mode field) for one channel.
fn recovery_errors(k: usize, grid: usize) -> (f64, f64) {
    let mut r = rng(60);
    let coeffs = vec![(0..=k)
        .map(|_| Complex64::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)))
        .collect::<Vec<_>>()];
    let (f, b) = stssm_core::layers::ssm_from_fourier(&coeffs, grid, -30.0).unwrap();
    let (df, db) = (discretize(&f).unwrap(), discretize(&b).unwrap());
    let (kf, kb) = (materialize_kernel(&df, grid), materialize_kernel(&db, grid));
    let (mut kerr, mut kmax) = (0.0f64, 0.0f64);
    for s in 0..grid {
        let want = explicit_kernel(&coeffs[0], grid, s);
        kmax = kmax.max(want.abs());
        if s == 0 {
            let got = kf.data()[0] + kb.data()[0] + df.d[0] + db.d[0];
            kerr = kerr.max((got - want).abs());
        } else {
            kerr = kerr.max((kf.data()[s] - want).abs());
            kerr = kerr.max((kb.data()[s] - explicit_kernel(&coeffs[0], grid, grid - s)).abs());
        }
    }
    let v: Vec<f64> = (0..grid)
        .map(|x| {
            let t = 2.0 * PI * x as f64 / grid as f64;
            t.sin() + 0.5 * (2.0 * t + 0.3).cos() + 0.25 * (3.0 * t + 1.0).sin()
        })
        .collect();
    let v = Tensor::from_vec(&[grid, 1], v).unwrap();
    let ssm = spatial_ssm_bidir_1d(&v, &f, &b).unwrap();
    let fno = fno_conv_1d(&v, &Tensor::from_complex(&[1, 1, k + 1], coeffs[0].clone()).unwrap(), k).unwrap();
    let diff: f64 = ssm.data().iter().zip(fno.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    (kerr / kmax, diff / fno.norm())
}

#[test]
fn scan_kernel_recovers_fourier_kernel_at_second_order() {
    for k in 1..=3 {
        let errs: Vec<(f64, f64)> = [32, 64, 128, 256].iter().map(|&g| recovery_errors(k, g)).collect();
        for w in errs.windows(2) {
            let ratio = w[0].0 / w[1].0;
            assert!((3.5..4.5).contains(&ratio), "K={k}: {errs:?}");
            assert!(w[1].1 < w[0].1, "K={k}: {errs:?}");
        }
    }
    let (_, conv) = recovery_errors(1, 128);
    assert!(conv < 1e-3, "{conv}");
}

#[test]
fn recovery_rejects_cutoff_beyond_grid() {
    let coeffs = vec![vec![Complex64::new(1.0, 0.0); 6]];
    assert!(stssm_core::layers::ssm_from_fourier(&coeffs, 8, -30.0).is_err());
}
