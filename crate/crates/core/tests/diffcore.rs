use caro::diffcore::{eval, gaussian_sample, grad_check, standard_normal, Adam, ParamStore, Tape, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_tensor(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::new(rows, cols, data).unwrap()
}

#[test]
fn dense_identity_and_zero_cases() {
    let x = Tensor::row(vec![3.0, -2.0]);
    let y = eval::dense(&x, &Tensor::identity(2), Some(&Tensor::zeros(1, 2))).unwrap();
    assert_eq!(y.data(), &[3.0, -2.0]);

    let b = Tensor::row(vec![0.25, -4.0, 9.0]);
    for x in [vec![1.0, 2.0], vec![-7.0, 0.5]] {
        let y = eval::dense(&Tensor::row(x), &Tensor::zeros(3, 2), Some(&b)).unwrap();
        assert_eq!(y.data(), b.data());
    }
}

#[test]
fn dense_matches_row_by_row_dot_products() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let w = rand_tensor(4, 3, &mut rng);
    let x = rand_tensor(1, 3, &mut rng);
    let y = eval::dense(&x, &w, None).unwrap();
    for o in 0..4 {
        let mut dot = 0.0;
        for k in 0..3 {
            dot += w.get(o, k) * x.get(0, k);
        }
        assert!((y.get(0, o) - dot).abs() < 1e-15);
    }
}

#[test]
fn dense_shape_mismatch_reports_both_shapes() {
    let err = eval::dense(&Tensor::<f64>::zeros(1, 3), &Tensor::zeros(4, 2), None).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("[1, 3]") && msg.contains("[4, 2]"), "{msg}");
}

#[test]
fn nonlinearity_definitions() {
    let x = Tensor::row(vec![-1.0, 2.0]);
    assert_eq!(eval::relu(&x).data(), &[0.0, 2.0]);
    assert_eq!(eval::sigmoid(&Tensor::scalar(0.0)).item(), 0.5);
    let s = eval::softmax(&Tensor::row(vec![1.5f64; 4])).unwrap();
    for &p in s.data() {
        assert!((p - 0.25).abs() < 1e-15);
    }
}

#[test]
fn non_finite_inputs_rejected() {
    let mut tape = Tape::<f64>::new();
    assert!(tape.var(Tensor::row(vec![1.0, f64::NAN])).is_err());
    assert!(tape.constant(Tensor::row(vec![f64::INFINITY])).is_err());
}

#[test]
fn gaussian_sample_substitution_and_zero_noise() {
    let mut tape = Tape::<f64>::new();
    let mu = tape.var(Tensor::row(vec![0.0, 0.0])).unwrap();
    let sd = tape.var(Tensor::row(vec![2.0, 3.0])).unwrap();
    let z = gaussian_sample(&mut tape, mu, sd, Tensor::row(vec![1.0, -1.0])).unwrap();
    assert_eq!(tape.value(z).data(), &[2.0, -3.0]);

    let mu2 = tape.var(Tensor::row(vec![0.3, -1.7])).unwrap();
    let z0 = gaussian_sample(&mut tape, mu2, sd, Tensor::zeros(1, 2)).unwrap();
    assert_eq!(tape.value(z0).data(), &[0.3, -1.7]);

    let bad = tape.var(Tensor::row(vec![1.0, 0.0])).unwrap();
    assert!(gaussian_sample(&mut tape, mu, bad, Tensor::zeros(1, 2)).is_err());
}

#[test]
fn gaussian_sample_gradients_reach_mean_and_stddev_only() {
    let mut tape = Tape::<f64>::new();
    let mu = tape.var(Tensor::row(vec![0.5, -0.5])).unwrap();
    let sd = tape.var(Tensor::row(vec![1.5, 0.2])).unwrap();
    let eps = Tensor::row(vec![0.7, -1.1]);
    let z = gaussian_sample(&mut tape, mu, sd, eps.clone()).unwrap();
    let s = tape.sum_cols(z);
    let g = tape.backward(s).unwrap();
    assert_eq!(g.wrt(mu).unwrap().data(), &[1.0, 1.0]);
    assert_eq!(g.wrt(sd).unwrap().data(), eps.data());
}

#[test]
fn gaussian_sample_monte_carlo_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 100_000;
    let mean = [0.4, -2.0, 5.0];
    let sd = [1.0, 0.5, 3.0];
    let mut tape = Tape::<f64>::new();
    let mu = tape.constant(Tensor::from_rows(&vec![mean.to_vec(); n]).unwrap()).unwrap();
    let s = tape.constant(Tensor::from_rows(&vec![sd.to_vec(); n]).unwrap()).unwrap();
    let z = gaussian_sample(&mut tape, mu, s, standard_normal(n, 3, &mut rng)).unwrap();
    let zv = tape.value(z);
    for j in 0..3 {
        let m: f64 = (0..n).map(|r| zv.get(r, j)).sum::<f64>() / n as f64;
        let se = sd[j] / (n as f64).sqrt();
        assert!((m - mean[j]).abs() < 3.0 * se, "coord {j}: {m} vs {}", mean[j]);
    }
}

#[test]
fn every_primitive_passes_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = rand_tensor(3, 4, &mut rng);
    let b = rand_tensor(3, 4, &mut rng).map(|v| v.abs() + 0.5);
    let w = rand_tensor(5, 4, &mut rng);
    let bias = rand_tensor(1, 5, &mut rng);
    let inputs = [("a", a), ("b", b), ("w", w), ("bias", bias)];
    let mask: Vec<bool> = (0..12).map(|i| i % 4 != 3).collect();
    let report = grad_check("primitives", &inputs, 1e-6, |t, v| {
        let mut terms = Vec::new();
        let d = t.dense(v[0], v[2], Some(v[3]))?;
        let d = t.leaky_relu(d, 0.1);
        terms.push(t.mean(d));
        let s = t.add(v[0], v[1])?;
        let s = t.sigmoid(s);
        terms.push(t.mean(s));
        let m = t.mul(v[0], v[1])?;
        let q = t.div(m, v[1])?;
        let q = t.square(q);
        terms.push(t.mean(q));
        let sp = t.softplus(v[0]);
        let l = t.log(v[1]);
        let e = t.exp(v[0]);
        let x = t.sub(sp, l)?;
        let x = t.add(x, e)?;
        terms.push(t.mean(x));
        let sm = t.masked_softmax(v[0], &mask)?;
        let sm = t.mul(sm, v[1])?;
        let sm = t.sum_cols(sm);
        terms.push(t.mean(sm));
        let cc = t.concat_cols(v[0], v[1])?;
        let cr = t.concat_rows(v[0], v[1])?;
        let sel = t.select_rows(cr, &[5, 0, 0, 2])?;
        let sel = t.square(sel);
        terms.push(t.mean(sel));
        let cc = t.affine(cc, -0.5, 2.0);
        let cc = t.relu(cc);
        terms.push(t.mean(cc));
        let ce = t.cross_entropy(v[0], &[3, 0, 1])?;
        terms.push(t.mean(ce));
        let mut total = terms[0];
        for &term in &terms[1..] {
            total = t.add(total, term)?;
        }
        Ok(total)
    })
    .unwrap();
    assert!(report.passed(), "{report:?}");
}

#[test]
fn embedding_and_token_sum_pass_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let table = rand_tensor(6, 3, &mut rng);
    let weights = rand_tensor(2, 4, &mut rng);
    let ids = [1, 4, 4, 0, 5, 2, 1, 0];
    let mask = [true, true, true, false, true, true, false, false];
    let report = grad_check("embed", &[("table", table), ("weights", weights)], 1e-6, |t, v| {
        let e = t.embed(v[0], &ids, &mask, 4)?;
        let s = t.token_weighted_sum(v[1], e, 3)?;
        let s = t.square(s);
        Ok(t.mean(s))
    })
    .unwrap();
    assert!(report.passed(), "{report:?}");
}

#[test]
fn optimizer_zero_gradient_is_fixed_point() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParamStore::<f64>::new();
    let g = store.add_group("all", 1e-2, 0.0).unwrap();
    let p = store.add_dense(g, "w", 3, 3, &mut rng);
    let before = store.value(p).clone();
    let mut opt = Adam::new(&store);
    for _ in 0..3 {
        let mut tape = Tape::new();
        let w = tape.param(&store, p);
        let z = tape.scale(w, 0.0);
        let loss = tape.mean(z);
        let grads = tape.backward(loss).unwrap();
        store.accumulate(&tape, &grads);
        opt.step(&mut store).unwrap();
    }
    assert_eq!(store.value(p), &before);
    assert_eq!(opt.steps(), 3);
}

#[test]
fn optimizer_first_step_matches_hand_update() {
    let mut store = ParamStore::<f64>::new();
    let lr = 1e-3;
    let g = store.add_group("all", lr, 0.0).unwrap();
    let p = store.add(g, "x", Tensor::scalar(2.0));
    let mut opt = Adam::new(&store);
    let mut tape = Tape::new();
    let x = tape.param(&store, p);
    let grads = tape.backward(x).unwrap();
    store.accumulate(&tape, &grads);
    opt.step(&mut store).unwrap();
    // m = 0.1, v = 0.001, mhat = 1, vhat = 1
    let expected = 2.0 - lr * 1.0 / (1.0 + 1e-8);
    assert!((store.value(p).item() - expected).abs() < 1e-15);
    assert!(store.grad(p).is_none(), "gradients cleared after step");
}

#[test]
fn optimizer_group_rates_scale_steps() {
    let mut store = ParamStore::<f64>::new();
    let slow = store.add_group("encoder", 1e-5, 0.0).unwrap();
    let fast = store.add_group("heads", 1e-4, 0.0).unwrap();
    let a = store.add(slow, "a", Tensor::row(vec![1.0, -1.0]));
    let b = store.add(fast, "b", Tensor::row(vec![1.0, -1.0]));
    let mut opt = Adam::new(&store);
    let mut tape = Tape::new();
    let av = tape.param(&store, a);
    let bv = tape.param(&store, b);
    let s = tape.add(av, bv).unwrap();
    let s = tape.square(s);
    let loss = tape.mean(s);
    let grads = tape.backward(loss).unwrap();
    store.accumulate(&tape, &grads);
    opt.step(&mut store).unwrap();
    let da = (store.value(a).get(0, 0) - 1.0).abs();
    let db = (store.value(b).get(0, 0) - 1.0).abs();
    assert!((db / da - 10.0).abs() < 1e-6, "ratio {}", db / da);
}

#[test]
fn optimizer_rejects_missing_gradients() {
    let mut store = ParamStore::<f64>::new();
    let g = store.add_group("all", 1e-3, 0.0).unwrap();
    store.add(g, "x", Tensor::scalar(1.0));
    let mut opt = Adam::new(&store);
    assert!(opt.step(&mut store).is_err());
}

#[test]
fn weight_decay_group_shrinks_without_gradient_signal() {
    let mut store = ParamStore::<f64>::new();
    let g = store.add_group("decayed", 1e-1, 0.5).unwrap();
    let p = store.add(g, "x", Tensor::scalar(2.0));
    let mut opt = Adam::new(&store);
    let mut tape = Tape::new();
    let x = tape.param(&store, p);
    let z = tape.scale(x, 0.0);
    let grads = tape.backward(z).unwrap();
    store.accumulate(&tape, &grads);
    opt.step(&mut store).unwrap();
    assert!((store.value(p).item() - 2.0 * (1.0 - 0.05)).abs() < 1e-15);
}

#[test]
fn f32_tape_runs_same_graph() {
    let mut tape = Tape::<f32>::new();
    let x = tape.var(Tensor::row(vec![0.5f32, -0.25])).unwrap();
    let y = tape.softplus(x);
    let y = tape.mean(y);
    let g = tape.backward(y).unwrap();
    let gx = g.wrt(x).unwrap();
    assert!((gx.get(0, 0) - 0.5 * caro::Scalar::sigmoid(0.5f32)).abs() < 1e-6);
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(
        rows in 1usize..5,
        cols in 1usize..8,
        seed in any::<u64>(),
        scale in 0.1f64..50.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = rand_tensor(rows, cols, &mut rng).map(|v| v * scale);
        let y = eval::softmax(&x).unwrap();
        for r in 0..rows {
            let row = y.row_slice(r);
            prop_assert!(row.iter().all(|&p| p >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn seeded_noise_is_deterministic(seed in any::<u64>()) {
        let a: Tensor<f64> = standard_normal(3, 4, &mut ChaCha8Rng::seed_from_u64(seed));
        let b: Tensor<f64> = standard_normal(3, 4, &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(a, b);
    }
}

#[test]
fn fragment_registry_passes_and_flags_the_corrupted_rule() {
    let reports = caro::checks::run_all(&caro::checks::registry(), 0, caro::checks::GRAD_TOLERANCE).unwrap();
    for r in &reports {
        assert!(r.passed(), "{r:?}");
    }
    let bad = caro::checks::corrupted_fixture().check(0, caro::checks::GRAD_TOLERANCE).unwrap();
    assert!(!bad.passed());
}
