use std::f64::consts::PI;

use num_complex::Complex64;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stssm_pde::burgers::{sample_burgers_ic, solve_burgers};
use stssm_pde::ks::{sample_ks_ic, sample_sine_terms, solve_ks, KS_MAX_WAVENUMBER, KS_TERMS};
use stssm_pde::ns::{energy, enstrophy, grf_std, sample_grf_vorticity, solve_ns_vorticity, Forcing, NsSolver};
use stssm_pde::spectral::{irfft, rfft, rfft2, sine_superposition};
use stssm_pde::dataset::preset;
use stssm_pde::{downsample, GridSpec, PdeError, Trajectory, TrajectoryParams};

fn grid1(n: usize, length: f64, dt: f64, dt_save: f64, t_final: f64) -> GridSpec {
    GridSpec { extents: vec![n], lengths: vec![length], dt_solver: dt, dt_save, t_final }
}

fn grid2(n: usize, dt: f64, dt_save: f64, t_final: f64) -> GridSpec {
    GridSpec { extents: vec![n, n], lengths: vec![1.0, 1.0], dt_solver: dt, dt_save, t_final }
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn sine_superposition_single_term_and_zero() {
    let u = sine_superposition(&[(0.3, 2.0, 0.5)], 16, 4.0);
    for (i, v) in u.iter().enumerate() {
        let x = i as f64 * 0.25;
        assert!((v - 0.3 * (PI * x + 0.5).sin()).abs() < 1e-14);
    }
    let zero = sine_superposition(&[(0.0, 3.0, 1.0), (0.0, 1.0, 2.0)], 16, 4.0);
    assert!(zero.iter().all(|&v| v == 0.0));
}

#[test]
fn ks_initial_condition_lives_on_low_wavenumbers() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let terms = sample_sine_terms(&mut rng, KS_TERMS, KS_MAX_WAVENUMBER);
    assert_eq!(terms.len(), 21);
    for &(a, k, phi) in &terms {
        assert!((-0.5..=0.5).contains(&a) && (1.0..=8.0).contains(&k) && (0.0..2.0 * PI).contains(&phi));
    }
    let u = sample_ks_ic(1, 128, 64.0);
    let spec = rfft(&u);
    for (i, c) in spec.iter().enumerate() {
        let k = i.min(128 - i);
        if k == 0 || k > 8 {
            assert!(c.norm() < 1e-9, "energy at k={k}");
        }
    }
}

#[test]
fn ks_small_mode_grows_at_linear_rate() {
    let (n, length, nu, k) = (128, 64.0, 0.075, 5.0);
    let u0 = sine_superposition(&[(1e-6, k, 0.0)], n, length);
    let frames = solve_ks(&u0, nu, &grid1(n, length, 0.01, 5.0, 5.0)).unwrap();
    let q = 2.0 * PI * k / length;
    let rate = q * q - nu * q.powi(4);
    let amp = |u: &[f64]| rfft(u)[5].norm();
    let measured = (amp(&frames[1]) / amp(&frames[0])).ln() / 5.0;
    assert!((measured - rate).abs() / rate < 0.02, "{measured} vs {rate}");
}

fn rel(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    (num / b.iter().map(|y| y * y).sum::<f64>()).sqrt()
}

#[test]
fn ks_converges_at_fourth_order() {
    let u0 = sample_ks_ic(3, 512, 64.0);
    let run = |dt| solve_ks(&u0, 0.075, &grid1(512, 64.0, dt, 2.5, 2.5)).unwrap().pop().unwrap();
    let preset = preset("ks").unwrap().dt_solver;
    assert!(rel(&run(preset), &run(preset / 2.0)) < 1e-4);
    let reference = run(0.0003125);
    let ratio = rel(&run(0.0025), &reference) / rel(&run(0.00125), &reference);
    assert!((16.0 * 0.8..=16.0 * 1.2).contains(&ratio), "{ratio}");
}

#[test]
fn ks_zero_stays_zero() {
    let frames = solve_ks(&vec![0.0; 64], 0.075, &grid1(64, 64.0, 0.01, 0.5, 2.0)).unwrap();
    assert!(frames.iter().flatten().all(|&v| v == 0.0));
}

#[test]
fn burgers_energy_decays_and_constants_persist() {
    let u0 = sample_burgers_ic(2, 128, 1.0);
    let frames = solve_burgers(&u0, 1.0, &grid1(128, 1.0, 1e-4, 0.01, 0.1)).unwrap();
    let e: Vec<f64> = frames.iter().map(|u| u.iter().map(|v| v * v).sum()).collect();
    assert!(e.windows(2).all(|w| w[1] < w[0]));
    let c = solve_burgers(&vec![0.25; 64], 0.1, &grid1(64, 1.0, 1e-3, 0.1, 0.5)).unwrap();
    assert!(c.iter().flatten().all(|v| (v - 0.25).abs() < 1e-12));
}

/// Cole–Hopf: `u = -2ν φ_x / φ` with `φ_t = ν φ_xx`, solved exactly in
/// Fourier space.
fn cole_hopf(amp: f64, nu: f64, t: f64, n: usize) -> Vec<f64> {
    let phi0: Vec<f64> = (0..n)
        .map(|i| {
            let x = i as f64 / n as f64;
            (amp * (2.0 * PI * x).cos() / (4.0 * PI * nu)).exp()
        })
        .collect();
    let hat = rfft(&phi0);
    let q: Vec<f64> = (0..n).map(|i| 2.0 * PI * if i < n / 2 { i as f64 } else { i as f64 - n as f64 }).collect();
    let evolved: Vec<Complex64> = hat.iter().zip(&q).map(|(c, q)| c * (-nu * q * q * t).exp()).collect();
    let phi = irfft(&evolved);
    let dphi = irfft(&evolved.iter().zip(&q).map(|(c, q)| c * Complex64::new(0.0, *q)).collect::<Vec<_>>());
    phi.iter().zip(&dphi).map(|(p, d)| -2.0 * nu * d / p).collect()
}

#[test]
fn burgers_matches_cole_hopf() {
    let (nu, n) = (0.1, 256);
    let u0 = sine_superposition(&[(1.0, 1.0, 0.0)], n, 1.0);
    let frames = solve_burgers(&u0, nu, &grid1(n, 1.0, 1e-4, 0.25, 0.5)).unwrap();
    assert!(max_diff(&u0, &cole_hopf(1.0, nu, 0.0, n)) < 1e-10);
    for (f, u) in frames.iter().enumerate() {
        let exact = cole_hopf(1.0, nu, 0.25 * f as f64, n);
        assert!(max_diff(u, &exact) < 1e-3, "frame {f}");
    }
}

#[test]
fn burgers_reports_cfl_violation() {
    let u0 = sine_superposition(&[(50.0, 1.0, 0.0)], 64, 1.0);
    let err = solve_burgers(&u0, 0.1, &grid1(64, 1.0, 1e-2, 0.1, 0.1)).unwrap_err();
    assert!(matches!(err, PdeError::Cfl { .. }));
}

#[test]
fn grf_is_zero_mean_with_the_prescribed_slope() {
    let n = 64;
    let mut shell = vec![0.0; n / 2];
    let mut count = vec![0usize; n / 2];
    for seed in 0..64 {
        let w = sample_grf_vorticity(seed, n).unwrap();
        assert!(mean(&w).abs() < 1e-12);
        let hat = rfft2(&w, n);
        assert!(hat.iter().all(|c| c.re.is_finite()));
        for i in 0..n {
            for j in 0..n {
                let (a, b) = (i.min(n - i) as f64, j.min(n - j) as f64);
                let k = (a * a + b * b).sqrt().round() as usize;
                if k < n / 2 {
                    shell[k] += hat[i * n + j].norm_sqr();
                    count[k] += 1;
                }
            }
        }
    }
    let pts: Vec<(f64, f64)> = (8..n / 2).map(|k| ((k as f64).ln(), (shell[k] / count[k] as f64).sqrt().ln())).collect();
    let (mx, my) = (pts.iter().map(|p| p.0).sum::<f64>() / pts.len() as f64, pts.iter().map(|p| p.1).sum::<f64>() / pts.len() as f64);
    let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
    assert!((slope + 2.5).abs() < 0.125, "slope {slope}");
    assert!((grf_std(1.0) - 7f64.powf(1.5) * (4.0 * PI * PI + 49.0).powf(-1.25)).abs() < 1e-15);
}

#[test]
fn forcing_variants() {
    let n = 16;
    let fixed = Forcing::Fixed.eval(0.0, n);
    assert!((fixed[0] - 0.1).abs() < 1e-15);
    let f = Forcing::sample(4, 0.0);
    assert!(!f.is_time_dependent());
    assert_eq!(f.eval(0.0, n), f.eval(3.7, n));
    let g = Forcing::sample(4, 0.2);
    assert!(g.is_time_dependent());
    assert!(max_diff(&g.eval(0.0, n), &g.eval(1.0, n)) > 1e-6);
    let hat = rfft2(&f.eval(0.0, n), n);
    let allowed = |i: usize, j: usize| {
        let (a, b) = (i.min(n - i), j.min(n - j));
        [(0, 0), (1, 0), (0, 1), (1, 1), (2, 0), (0, 2), (2, 2)].contains(&(a, b))
    };
    for i in 0..n {
        for j in 0..n {
            if !allowed(i, j) {
                assert!(hat[i * n + j].norm() < 1e-10, "({i},{j})");
            }
        }
    }
    assert!(Forcing::None.eval(0.5, n).iter().all(|&v| v == 0.0));
}

#[test]
fn inviscid_flow_conserves_energy_and_enstrophy() {
    let n = 64;
    let w0 = sample_grf_vorticity(5, n).unwrap();
    let solver = NsSolver::new(n, 0.0, 1e-3).unwrap();
    let (frames, _) = solve_ns_vorticity(&w0, 0.0, &Forcing::None, &grid2(n, 1e-3, 0.1, 0.1)).unwrap();
    let (e0, e1) = (energy(&solver, &frames[0]), energy(&solver, &frames[1]));
    let (z0, z1) = (enstrophy(&frames[0]), enstrophy(&frames[1]));
    assert!((e1 - e0).abs() / e0 < 5e-3, "energy {e0} {e1}");
    assert!((z1 - z0).abs() / z0 < 5e-3, "enstrophy {z0} {z1}");
}

#[test]
fn mean_vorticity_is_constant_under_zero_mean_forcing() {
    let n = 32;
    let w0: Vec<f64> = sample_grf_vorticity(6, n).unwrap().iter().map(|v| v + 0.3).collect();
    let (frames, _) = solve_ns_vorticity(&w0, 1e-3, &Forcing::Fixed, &grid2(n, 1e-3, 0.05, 0.2)).unwrap();
    for f in &frames {
        assert!((mean(f) - 0.3).abs() < 1e-10);
    }
}

#[test]
fn taylor_green_mode_decays_exponentially() {
    let (n, nu) = (32, 0.01);
    let w0: Vec<f64> = (0..n * n)
        .map(|p| {
            let (x, y) = ((p / n) as f64 / n as f64, (p % n) as f64 / n as f64);
            (2.0 * PI * x).sin() * (2.0 * PI * y).sin()
        })
        .collect();
    let (frames, _) = solve_ns_vorticity(&w0, nu, &Forcing::None, &grid2(n, 1e-3, 0.5, 1.0)).unwrap();
    for (f, w) in frames.iter().enumerate() {
        let decay = (-8.0 * PI * PI * nu * 0.5 * f as f64).exp();
        let expect: Vec<f64> = w0.iter().map(|v| v * decay).collect();
        assert!(max_diff(w, &expect) < 0.01 * decay, "frame {f}");
    }
}

#[test]
fn solvers_reject_bad_grids() {
    assert!(matches!(solve_ks(&vec![0.0; 48], 0.1, &grid1(48, 1.0, 0.01, 0.1, 0.1)), Err(PdeError::NotPowerOfTwo(48))));
    assert!(solve_burgers(&vec![0.0; 8], 0.1, &grid1(8, 1.0, 0.03, 0.1, 0.1)).is_err());
}

fn traj_1d(t: usize, x: usize) -> Trajectory {
    let frames: Vec<Vec<f64>> = (0..t).map(|i| (0..x).map(|j| (i * 1000 + j) as f64).collect()).collect();
    Trajectory::from_frames(&frames, &[x], TrajectoryParams { nu: 0.1, forcing_seed: None, delta: None }, "test").unwrap()
}

#[test]
fn downsample_identity_and_bad_factors() {
    let t = traj_1d(5, 8);
    assert_eq!(downsample(&t, 1, 1).unwrap(), t);
    assert!(matches!(downsample(&t, 1, 3), Err(PdeError::BadFactor { .. })));
    assert!(downsample(&t, 3, 1).is_err());
    assert!(downsample(&t, 0, 1).is_err());
    let d = downsample(&t, 2, 4).unwrap();
    assert_eq!(d.u.shape(), &[3, 2, 1, 1]);
    assert_eq!(d.u.get(&[2, 1, 0, 0]), 4004.0);
}

#[test]
fn downsampled_sine_matches_coarse_samples() {
    let fine = sine_superposition(&[(0.7, 3.0, 0.2)], 128, 2.0);
    let coarse = sine_superposition(&[(0.7, 3.0, 0.2)], 32, 2.0);
    let t = Trajectory::from_frames(&[fine], &[128], TrajectoryParams { nu: 0.1, forcing_seed: None, delta: None }, "test").unwrap();
    let d = downsample(&t, 1, 4).unwrap();
    assert!(max_diff(d.u.data(), &coarse) < 1e-12);
}

#[test]
fn two_dimensional_downsample_strides_both_axes() {
    let frames = vec![(0..64).map(|p| p as f64).collect::<Vec<_>>()];
    let t = Trajectory::from_frames(&frames, &[8, 8], TrajectoryParams { nu: 0.1, forcing_seed: None, delta: None }, "test").unwrap();
    let d = downsample(&t, 1, 2).unwrap();
    assert_eq!(d.u.shape(), &[1, 4, 4, 1]);
    assert_eq!(d.u.get(&[0, 1, 3, 0]), (2 * 8 + 6) as f64);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn downsampling_composes(a in 1usize..=2, b in 1usize..=2, ta in 1usize..=2, tb in 1usize..=2) {
        let t = traj_1d(9, 16);
        let twice = downsample(&downsample(&t, ta, a).unwrap(), tb, b).unwrap();
        let once = downsample(&t, ta * tb, a * b).unwrap();
        prop_assert_eq!(twice.u, once.u);
    }

    #[test]
    fn solvers_are_deterministic(seed in 0u64..1000) {
        let u0 = sample_burgers_ic(seed, 64, 1.0);
        let g = grid1(64, 1.0, 5e-4, 0.05, 0.1);
        prop_assert_eq!(solve_burgers(&u0, 0.05, &g).unwrap(), solve_burgers(&u0, 0.05, &g).unwrap());
        prop_assert_eq!(sample_grf_vorticity(seed, 16).unwrap(), sample_grf_vorticity(seed, 16).unwrap());
    }
}

#[test]
fn burgers_converges_at_fourth_order() {
    let u0 = sample_burgers_ic(8, 256, 1.0);
    let run = |dt| solve_burgers(&u0, 0.01, &grid1(256, 1.0, dt, 0.2, 0.2)).unwrap().pop().unwrap();
    let reference = run(1.5625e-5);
    let ratio = rel(&run(1e-3), &reference) / rel(&run(5e-4), &reference);
    assert!((16.0 * 0.8..=16.0 * 1.2).contains(&ratio), "{ratio}");
}

#[test]
fn vorticity_solver_converges_at_second_order() {
    let n = 32;
    let w0 = sample_grf_vorticity(9, n).unwrap();
    let forcing = Forcing::sample(9, 0.2);
    let run = |dt| solve_ns_vorticity(&w0, 1e-3, &forcing, &grid2(n, dt, 0.5, 0.5)).unwrap().0.pop().unwrap();
    let reference = run(1.5625e-4);
    let ratio = rel(&run(0.01), &reference) / rel(&run(0.005), &reference);
    assert!((4.0 * 0.8..=4.0 * 1.2).contains(&ratio), "{ratio}");
}

#[test]
fn drifting_forcing_is_a_rotation_of_two_fields() {
    let (n, delta) = (16, 0.2);
    let g = Forcing::sample(11, delta);
    let (f0, f1) = (g.eval(0.0, n), g.eval(PI / (2.0 * delta), n));
    for t in [0.3, 1.7, 12.0] {
        let (s, c) = (delta * t).sin_cos();
        let combo: Vec<f64> = f0.iter().zip(&f1).map(|(a, b)| c * a + s * b).collect();
        assert!(max_diff(&g.eval(t, n), &combo) < 1e-12);
    }
}
