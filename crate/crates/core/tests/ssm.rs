use num_complex::Complex64;
use proptest::prelude::*;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stssm_array::Tensor;
use stssm_core::ssm::{
    apply_conv, apply_scan, discretize, eval_continuous_kernel, materialize_kernel,
    write_kernel_csv, DiscreteSSM, S4DParams, Side,
};

fn random_system(h: usize, n: usize, seed: u64) -> S4DParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = S4DParams::init_lin(h, n, &mut rng);
    for l in p.lambda.iter_mut() {
        *l = Complex64::new(-rng.random_range(0.05..2.0), rng.random_range(-10.0..10.0));
    }
    for b in p.b.iter_mut() {
        *b = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    }
    p
}

fn random_input(h: usize, len: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_vec(&[h, len], (0..h * len).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn rel(a: &Tensor, b: &Tensor) -> f64 {
    let diff: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    diff / b.norm().max(1e-300)
}

/// Impulse response by stepping the recurrence with a unit input at t = 0.
fn recurrence_impulse(d: &DiscreteSSM, ch: usize, len: usize) -> Vec<f64> {
    let mut v = vec![Complex64::new(0.0, 0.0); d.n];
    (0..len)
        .map(|t| {
            let u = if t == 0 { 1.0 } else { 0.0 };
            let mut y = 0.0;
            for k in 0..d.n {
                let i = ch * d.n + k;
                v[k] = d.abar[i] * v[k] + d.bbar[i] * u;
                y += (d.c[i] * v[k]).re;
            }
            y
        })
        .collect()
}

#[test]
fn kernel_matches_recurrence_impulse_response() {
    let d = discretize(&random_system(2, 4, 3)).unwrap();
    let k = materialize_kernel(&d, 32);
    for ch in 0..2 {
        let want = recurrence_impulse(&d, ch, 32);
        for t in 0..32 {
            assert!((k.data()[ch * 32 + t] - want[t]).abs() < 1e-8);
        }
    }
}

#[test]
fn zero_c_gives_zero_kernel() {
    let mut p = random_system(2, 3, 4);
    p.c.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
    let k = materialize_kernel(&discretize(&p).unwrap(), 16);
    assert!(k.data().iter().all(|&v| v == 0.0));
}

#[test]
fn delta_input_returns_kernel_plus_skip() {
    let d = discretize(&random_system(3, 4, 5)).unwrap();
    let mut u = vec![0.0; 3 * 16];
    for ch in 0..3 {
        u[ch * 16] = 1.0;
    }
    let y = apply_conv(&d, &Tensor::from_vec(&[3, 16], u).unwrap()).unwrap();
    let k = materialize_kernel(&d, 16);
    for ch in 0..3 {
        for t in 0..16 {
            let want = k.data()[ch * 16 + t] + if t == 0 { d.d[ch] } else { 0.0 };
            assert!((y.data()[ch * 16 + t] - want).abs() < 1e-12);
        }
    }
}

#[test]
fn zero_input_and_state_stay_zero() {
    let d = discretize(&random_system(2, 3, 6)).unwrap();
    let u = Tensor::zeros(&[2, 10]);
    assert!(apply_conv(&d, &u).unwrap().data().iter().all(|&v| v == 0.0));
    let (y, v) = apply_scan(&d, &u, None).unwrap();
    assert!(y.data().iter().all(|&v| v == 0.0));
    assert!(v.iter().all(|z| z.norm() == 0.0));
}

#[test]
fn conv_matches_scan_at_length_64() {
    let d = discretize(&random_system(4, 8, 7)).unwrap();
    let u = random_input(4, 64, 8);
    let (scan, _) = apply_scan(&d, &u, None).unwrap();
    assert!(rel(&apply_conv(&d, &u).unwrap(), &scan) < 1e-6);
}

#[test]
fn chunked_scan_equals_full_scan() {
    let d = discretize(&random_system(3, 5, 9)).unwrap();
    let u = random_input(3, 40, 10);
    let (full, vf) = apply_scan(&d, &u, None).unwrap();
    let half = |lo: usize| {
        let data: Vec<f64> = (0..3).flat_map(|ch| u.data()[ch * 40 + lo..ch * 40 + lo + 20].to_vec()).collect();
        Tensor::from_vec(&[3, 20], data).unwrap()
    };
    let (y1, v1) = apply_scan(&d, &half(0), None).unwrap();
    let (y2, v2) = apply_scan(&d, &half(20), Some(&v1)).unwrap();
    for ch in 0..3 {
        for t in 0..20 {
            assert!((y1.data()[ch * 20 + t] - full.data()[ch * 40 + t]).abs() < 1e-12);
            assert!((y2.data()[ch * 20 + t] - full.data()[ch * 40 + 20 + t]).abs() < 1e-12);
        }
    }
    for (a, b) in v2.iter().zip(&vf) {
        assert!((a - b).norm() < 1e-12);
    }
}

#[test]
fn shape_mismatch_is_rejected() {
    let d = discretize(&random_system(2, 2, 1)).unwrap();
    assert!(apply_conv(&d, &Tensor::zeros(&[3, 8])).is_err());
    assert!(apply_scan(&d, &Tensor::zeros(&[2, 8]), Some(&[Complex64::new(0.0, 0.0)])).is_err());
}

#[test]
fn kernel_decays_and_obeys_envelope_bound() {
    let mut p = random_system(2, 6, 11);
    p.log_dt = vec![0.1f64.ln(); 2];
    let d = discretize(&p).unwrap();
    let k = materialize_kernel(&d, 4096);
    for ch in 0..2 {
        let bound: f64 = (0..6).map(|i| (d.c[ch * 6 + i] * d.bbar[ch * 6 + i]).norm()).sum();
        let row = &k.data()[ch * 4096..(ch + 1) * 4096];
        assert!(row.iter().all(|v| v.abs() <= bound + 1e-15));
        assert!(row[4095].abs() < 1e-3 * bound);
    }
}

/// Continuous kernel sampled at `t dt` against `κ[t] / dt`; the bilinear
/// rule is first order in this comparison, so halving dt halves the error.
#[test]
fn discrete_kernel_converges_to_continuous_kernel() {
    let mut p = random_system(1, 4, 12);
    let errs: Vec<f64> = [0.02, 0.01, 0.005]
        .iter()
        .map(|&dt: &f64| {
            p.log_dt = vec![dt.ln()];
            let d = discretize(&p).unwrap();
            let steps = (1.0 / dt).round() as usize;
            let k = materialize_kernel(&d, steps + 1);
            (0..=steps)
                .map(|t| {
                    let exact = eval_continuous_kernel(&p, 0, Side::Plus, t as f64 * dt).re;
                    (k.data()[t] / dt - exact).abs()
                })
                .fold(0.0, f64::max)
        })
        .collect();
    for w in errs.windows(2) {
        let ratio = w[0] / w[1];
        assert!((1.8..2.2).contains(&ratio), "ratio {ratio}, errors {errs:?}");
    }
}

#[test]
fn kernel_dump_csv_layout() {
    let d = discretize(&random_system(2, 2, 13)).unwrap();
    let mut buf = Vec::new();
    write_kernel_csv(&mut buf, &d, 3).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "t,channel,kappa_real,kappa_imag");
    assert_eq!(lines.len(), 1 + 2 * 3);
    assert!(lines[4].starts_with("0,1,"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn conv_scan_duality(h in 1usize..=4, n in 1usize..=8, len in 1usize..=256, seed in any::<u64>()) {
        let d = discretize(&random_system(h, n, seed)).unwrap();
        let u = random_input(h, len, seed ^ 0x5555);
        let (scan, _) = apply_scan(&d, &u, None).unwrap();
        let conv = apply_conv(&d, &u).unwrap();
        prop_assert!(rel(&conv, &scan) < 1e-6);
    }

    #[test]
    fn conv_is_causal(len in 2usize..64, t0 in 0usize..64, seed in any::<u64>()) {
        let t0 = t0 % len;
        let d = discretize(&random_system(2, 3, seed)).unwrap();
        let u = random_input(2, len, seed ^ 1);
        let mut bumped = u.clone();
        bumped.data_mut()[t0] += 1.0;
        bumped.data_mut()[len + t0] -= 0.5;
        let (a, _) = apply_scan(&d, &u, None).unwrap();
        let (b, _) = apply_scan(&d, &bumped, None).unwrap();
        for ch in 0..2 {
            for t in 0..t0 {
                prop_assert_eq!(a.data()[ch * len + t], b.data()[ch * len + t]);
            }
        }
    }
}
