use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stssm_array::gradcheck::{check_gradients, GradcheckConfig};
use stssm_array::{ArrayError, ParamStore, Tape, Tensor};

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()).unwrap()
}

#[test]
fn sum_gradient_is_ones() {
    let mut store = ParamStore::new();
    let p = store.add("p", Tensor::from_vec(&[3], vec![0.5, -1.0, 2.0]).unwrap());
    let mut tape = Tape::new();
    let v = tape.param(&store, p);
    let loss = tape.sum(v);
    let g = tape.backward(loss, &store).unwrap();
    assert_eq!(g.get(p).data(), &[1.0, 1.0, 1.0]);
}

#[test]
fn half_square_gradient_is_identity() {
    let mut store = ParamStore::new();
    let vals = vec![0.5, -1.0, 2.0, 0.25];
    let p = store.add("p", Tensor::from_vec(&[4], vals.clone()).unwrap());
    let mut tape = Tape::new();
    let v = tape.param(&store, p);
    let sq = tape.mul(v, v);
    let s = tape.sum(sq);
    let loss = tape.scale(s, 0.5);
    let g = tape.backward(loss, &store).unwrap();
    assert_eq!(g.get(p).data(), &vals[..]);
}

#[test]
fn unused_parameters_get_exact_zeros() {
    let mut store = ParamStore::new();
    let used = store.add("used", Tensor::full(&[2], 1.0));
    let unused = store.add("unused", Tensor::full(&[3], 7.0));
    let mut tape = Tape::new();
    let v = tape.param(&store, used);
    let _ = tape.param(&store, unused);
    let loss = tape.sum(v);
    let g = tape.backward(loss, &store).unwrap();
    assert!(g.get(unused).data().iter().all(|&x| x == 0.0));
    assert_eq!(g.len(), 2);
}

#[test]
fn rejects_non_scalar_and_disconnected_losses() {
    let mut store = ParamStore::new();
    let p = store.add("p", Tensor::full(&[2], 1.0));
    let mut tape = Tape::new();
    let v = tape.param(&store, p);
    assert!(matches!(tape.backward(v, &store), Err(ArrayError::NonScalarLoss(_))));
    let c = tape.constant(Tensor::full(&[2], 3.0));
    let loss = tape.sum(c);
    assert!(matches!(tape.backward(loss, &store), Err(ArrayError::Disconnected)));
}

#[test]
fn two_layer_net_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut store = ParamStore::new();
    let w1 = store.add("w1", random(&[6, 3], &mut rng));
    let b1 = store.add("b1", random(&[6], &mut rng));
    let w2 = store.add("w2", random(&[2, 6], &mut rng));
    let b2 = store.add("b2", random(&[2], &mut rng));
    let x = random(&[5, 3], &mut rng);
    let target = random(&[5, 2], &mut rng);
    let report = check_gradients(
        &mut store,
        |tape, store| {
            let xin = tape.constant(x.clone());
            let (w1, b1, w2, b2) = (
                tape.param(store, w1),
                tape.param(store, b1),
                tape.param(store, w2),
                tape.param(store, b2),
            );
            let h = tape.linear(xin, w1, Some(b1));
            let h = tape.gelu(h);
            let y = tape.linear(h, w2, Some(b2));
            tape.rel_l2(y, &target, 5).unwrap()
        },
        &GradcheckConfig::default(),
    )
    .unwrap();
    assert!(report.max_rel_err < 1e-4, "{report:?}");
}

#[test]
fn structural_ops_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut store = ParamStore::new();
    let a = store.add("a", random(&[2, 5, 3], &mut rng));
    let b = store.add("b", random(&[2, 5, 3], &mut rng));
    let k = store.add("k", random(&[3, 4], &mut rng));
    let d = store.add("d", random(&[3], &mut rng));
    let probe = random(&[2, 5, 3, 2], &mut rng);
    for reverse in [false, true] {
        let report = check_gradients(
            &mut store,
            |tape, store| {
                let (a, b, k, d) = (
                    tape.param(store, a),
                    tape.param(store, b),
                    tape.param(store, k),
                    tape.param(store, d),
                );
                let c = tape.axis_conv(a, k, Some(d), 1, reverse);
                let f = tape.flip(b, 1);
                let m = tape.mul(c, f);
                let s = tape.sub(m, a);
                let s = tape.add(s, b);
                let st = tape.stack(&[s, b], 3);
                let w = tape.constant(probe.clone());
                let prod = tape.mul(st, w);
                let sel = tape.select(prod, 3, 1);
                let cat = tape.concat(&[sel, s]);
                let r = tape.reshape(cat, &[60]);
                let r = tape.scale(r, 0.7);
                let sq = tape.mul(r, r);
                tape.sum(sq)
            },
            &GradcheckConfig::default(),
        )
        .unwrap();
        assert!(report.max_rel_err < 1e-4, "reverse={reverse}: {report:?}");
    }
}

#[test]
fn reverse_conv_equals_flip_conv_flip() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random(&[3, 7, 2], &mut rng);
    let k = random(&[2, 7], &mut rng);
    let mut tape = Tape::new();
    let xv = tape.constant(x);
    let kv = tape.constant(k);
    let direct = tape.axis_conv(xv, kv, None, 1, true);
    let fx = tape.flip(xv, 1);
    let c = tape.axis_conv(fx, kv, None, 1, false);
    let back = tape.flip(c, 1);
    assert!(tape.value(direct).max_abs_diff(tape.value(back)) < 1e-14);
}
