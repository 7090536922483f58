//! Every differentiable op against central differences (h = 1e-5, rel. 1e-4).

use eend_core::numerics::{
    grad_check, lstm_cell, Eval, LstmParams, Ops, ParamStore, Tape, Tensor,
};
use eend_core::Result;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(-scale..scale)).collect(),
    )
    .unwrap()
}

/// Expands `$body` once on a tape (analytic) and once per perturbation on
/// `Eval` (numeric), then returns the max relative error.
macro_rules! check {
    ($store:expr, |$o:ident, $s:ident| $body:block) => {{
        fn build<O: Ops>($o: &mut O, $s: &ParamStore) -> Result<O::V> $body
        let mut store: ParamStore = $store;
        let mut tape = Tape::new();
        let loss = build(&mut tape, &store).unwrap();
        let grads = tape.backward(loss).unwrap().param_grads(&store);
        grad_check(&mut store, &grads, H, |s| {
            let mut e = Eval;
            let v = build(&mut e, s)?;
            Ok(e.scalar(&v))
        })
        .unwrap()
    }};
}

/// Weighted sum so every output coordinate gets a distinct upstream gradient.
fn weighted<O: Ops>(o: &mut O, y: &O::V) -> Result<O::V> {
    let shape = o.value(y).shape().to_vec();
    let n: usize = shape.iter().product();
    let w = Tensor::new(shape, (0..n).map(|k| 0.3 + 0.17 * (k as f64).sin()).collect())?;
    let w = o.constant(w);
    let p = o.mul(y, &w)?;
    Ok(o.sum(&p))
}

fn store(seed: u64, specs: &[(&str, &[usize])]) -> ParamStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = ParamStore::new();
    for (name, shape) in specs {
        s.insert(*name, rand_tensor(&mut rng, shape, 1.0));
    }
    s
}

#[test]
fn matmul_gradient_of_sum_is_ones_times_bt() {
    let s = store(1, &[("a", &[5, 4]), ("b", &[4, 3])]);
    let mut tape = Tape::new();
    let a = tape.param(&s, s.id("a").unwrap());
    let b = tape.param(&s, s.id("b").unwrap());
    let y = tape.matmul(&a, &b).unwrap();
    let l = tape.sum(&y);
    let g = tape.backward(l).unwrap();
    let expect = Tensor::full(&[5, 3], 1.0)
        .matmul(&s.get(s.id("b").unwrap()).transpose().unwrap())
        .unwrap();
    assert!(g.wrt(a).unwrap().max_abs_diff(&expect) < 1e-12);

    let err = check!(s, |o, s| {
        let a = o.param(s, s.id("a").unwrap());
        let b = o.param(s, s.id("b").unwrap());
        let y = o.matmul(&a, &b)?;
        Ok(o.sum(&y))
    });
    assert!(err < TOL, "{err}");
}

#[test]
fn elementwise_and_structural_ops() {
    for seed in 0..3 {
        let s = store(seed, &[("a", &[3, 4]), ("b", &[3, 4]), ("r", &[1, 4]), ("c", &[2, 4])]);
        let err = check!(s, |o, s| {
            let a = o.param(s, s.id("a").unwrap());
            let b = o.param(s, s.id("b").unwrap());
            let r = o.param(s, s.id("r").unwrap());
            let c = o.param(s, s.id("c").unwrap());
            let x = o.mul(&a, &b)?;
            let x = o.add_row(&x, &r)?;
            let x = o.scale(&x, 0.7);
            let t = o.tanh(&x);
            let g = o.sigmoid(&b);
            let x = o.add(&t, &g)?;
            let left = o.slice_cols(&x, 0, 1)?;
            let right = o.slice_cols(&x, 1, 3)?;
            let x = o.concat_cols(&[right, left])?;
            let x = o.concat_rows(&[x, c])?;
            let x = o.slice_rows(&x, 1, 4)?;
            let xt = o.transpose(&x)?;
            let x = o.transpose(&xt)?;
            weighted(o, &x)
        });
        assert!(err < TOL, "seed {seed}: {err}");
    }
}

#[test]
fn relu_away_from_kink() {
    // entries bounded away from zero so the finite difference never straddles the kink
    let mut s = ParamStore::new();
    s.insert(
        "a",
        Tensor::new(vec![2, 3], vec![0.5, -0.4, 1.2, -0.9, 0.3, -0.2]).unwrap(),
    );
    let err = check!(s, |o, s| {
        let a = o.param(s, s.id("a").unwrap());
        let y = o.relu(&a);
        weighted(o, &y)
    });
    assert!(err < TOL);
}

#[test]
fn softmax_layer_norm_and_matmul_bt() {
    for seed in 10..13 {
        let s = store(
            seed,
            &[("q", &[4, 3]), ("k", &[5, 3]), ("g", &[1, 5]), ("b", &[1, 5])],
        );
        let err = check!(s, |o, s| {
            let q = o.param(s, s.id("q").unwrap());
            let k = o.param(s, s.id("k").unwrap());
            let g = o.param(s, s.id("g").unwrap());
            let b = o.param(s, s.id("b").unwrap());
            let logits = o.matmul_bt(&q, &k)?;
            let w = o.softmax_rows(&logits)?;
            let y = o.layer_norm(&w, &g, &b)?;
            weighted(o, &y)
        });
        assert!(err < TOL, "seed {seed}: {err}");
    }
}

#[test]
fn bce_sum_gradient() {
    let s = store(20, &[("z", &[2, 5])]);
    let err = check!(s, |o, s| {
        let z = o.param(s, s.id("z").unwrap());
        let p = o.sigmoid(&z);
        let t = Tensor::new(vec![2, 5], vec![1., 0., 1., 1., 0., 0., 0., 1., 0., 1.])?;
        o.bce_sum(&p, &t)
    });
    assert!(err < TOL);
}

#[test]
fn lstm_cell_gradients() {
    let d = 3;
    for seed in 30..33 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        s.insert("w_ih", rand_tensor(&mut rng, &[d, 4 * d], 0.5));
        s.insert("w_hh", rand_tensor(&mut rng, &[d, 4 * d], 0.5));
        s.insert("bias", rand_tensor(&mut rng, &[1, 4 * d], 0.5));
        s.insert("h0", rand_tensor(&mut rng, &[1, d], 0.5));
        s.insert("c0", rand_tensor(&mut rng, &[1, d], 0.5));
        s.insert("x1", rand_tensor(&mut rng, &[1, d], 1.0));
        s.insert("x2", rand_tensor(&mut rng, &[1, d], 1.0));
        let err = check!(s, |o, s| {
            let p = LstmParams {
                w_ih: s.id("w_ih").unwrap(),
                w_hh: s.id("w_hh").unwrap(),
                bias: s.id("bias").unwrap(),
            };
            let vars = p.load(o, s);
            let h = o.param(s, s.id("h0").unwrap());
            let c = o.param(s, s.id("c0").unwrap());
            let x1 = o.param(s, s.id("x1").unwrap());
            let x2 = o.param(s, s.id("x2").unwrap());
            let (h, c) = lstm_cell(o, &vars, &h, &c, &x1)?;
            let (h, c) = lstm_cell(o, &vars, &h, &c, &x2)?;
            let both = o.concat_cols(&[h, c])?;
            weighted(o, &both)
        });
        assert!(err < TOL, "seed {seed}: {err}");
    }
}

#[test]
fn grad_check_on_sum_of_squares_and_constant() {
    let mut s = store(40, &[("x", &[3, 3])]);
    let mut tape = Tape::new();
    let x = tape.param(&s, s.id("x").unwrap());
    let sq = tape.mul(&x, &x).unwrap();
    let l = tape.sum(&sq);
    let g = tape.backward(l).unwrap().param_grads(&s);
    let err = grad_check(&mut s, &g, H, |s| {
        Ok(s.get(s.id("x").unwrap()).data().iter().map(|v| v * v).sum())
    })
    .unwrap();
    assert!(err < 1e-8, "{err}");

    // constant objective: the analytic gradient is exactly zero
    let mut tape = Tape::new();
    let x = tape.param(&s, s.id("x").unwrap());
    let c = tape.constant(Tensor::scalar(4.2));
    let zero = tape.scale(&x, 0.0);
    let total = tape.sum(&zero);
    let total = tape.add(&total, &c).unwrap();
    let g = tape.backward(total).unwrap().param_grads(&s);
    assert!(g[0].data().iter().all(|&v| v == 0.0));
    let err = grad_check(&mut s, &g, H, |_| Ok(4.2)).unwrap();
    assert_eq!(err, 0.0);
}

#[test]
fn grad_check_rejects_non_finite_objective() {
    let mut s = store(41, &[("x", &[1, 2])]);
    let g = s.zeros_like();
    assert!(grad_check(&mut s, &g, H, |_| Ok(f64::NAN)).is_err());
    assert!(grad_check(&mut s, &g, 0.0, |_| Ok(1.0)).is_err());
}

proptest! {
    #[test]
    fn softmax_rows_are_stochastic(rows in prop::collection::vec(prop::collection::vec(-500.0f64..500.0, 1..8), 1..6)) {
        let n = rows[0].len();
        let rows: Vec<Vec<f64>> = rows.into_iter().map(|mut r| { r.resize(n, 0.0); r }).collect();
        let y = Tensor::from_rows(&rows).softmax_rows().unwrap();
        for r in 0..y.rows() {
            let s: f64 = y.row(r).iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-9);
            prop_assert!(y.row(r).iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn matmul_is_associative(seed in 0u64..10_000, m in 1usize..5, k in 1usize..5, n in 1usize..5, p in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = rand_tensor(&mut rng, &[m, k], 1.0);
        let b = rand_tensor(&mut rng, &[k, n], 1.0);
        let c = rand_tensor(&mut rng, &[n, p], 1.0);
        let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
        let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
        prop_assert!(left.max_abs_diff(&right) < 1e-9);
    }
}
