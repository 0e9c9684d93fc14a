use proptest::prelude::*;
use rand::Rng as _;

use super::*;
use crate::seeded_rng;

fn t2(rows: &[&[f64]]) -> Tensor {
    Tensor::from_rows(rows).unwrap()
}

fn random(shape: &[usize], seed: u64, scale: f64) -> Tensor {
    let mut rng = seeded_rng(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

#[test]
fn matmul_identity_and_2x2() {
    let mut g = Graph::new();
    let i2 = g.constant(Tensor::eye(2));
    let a = g.constant(t2(&[&[1.0, 2.0], &[3.0, 4.0]]));
    let b = g.constant(t2(&[&[5.0, 6.0], &[7.0, 8.0]]));
    let ia = g.matmul(i2, a).unwrap();
    assert_eq!(g.value(ia).data(), &[1.0, 2.0, 3.0, 4.0]);
    let ab = g.matmul(a, b).unwrap();
    assert_eq!(g.value(ab).data(), &[19.0, 22.0, 43.0, 50.0]);
    let abt = g.matmul_bt(a, b).unwrap();
    assert_eq!(g.value(abt).data(), &[17.0, 23.0, 39.0, 53.0]);
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::zeros(&[2, 3]));
    let b = g.constant(Tensor::zeros(&[2, 3]));
    let err = g.matmul(a, b).unwrap_err();
    assert_eq!(err, TensorError::ShapeMismatch { op: "matmul", lhs: vec![2, 3], rhs: vec![2, 3] });
    assert!(err.to_string().contains("[2, 3] and [2, 3]"));
}

#[test]
fn matmul_sum_gradient_is_ones_times_bt() {
    let a = random(&[3, 4], 1, 1.0);
    let b = random(&[4, 2], 2, 1.0);
    let mut g = Graph::new();
    let av = g.param(a.clone());
    let bv = g.constant(b.clone());
    let c = g.matmul(av, bv).unwrap();
    let s = g.sum(c).unwrap();
    let grads = g.backward(s).unwrap();
    let ga = grads.get(av).unwrap();
    for i in 0..3 {
        for k in 0..4 {
            let expected: f64 = (0..2).map(|j| b.at2(k, j)).sum();
            assert!((ga.at2(i, k) - expected).abs() < 1e-12);
        }
    }
    let err = grad_check(
        |g, x| {
            let bv = g.constant(b.clone());
            let c = g.matmul(x, bv)?;
            g.sum(c)
        },
        &a,
        1e-6,
    );
    assert!(err < 1e-6, "{err}");
}

#[test]
fn unary_values_and_derivatives() {
    let mut g = Graph::new();
    let z = g.param(Tensor::scalar(0.0));
    let s = g.sigmoid(z).unwrap();
    assert_eq!(g.value(s).item(), 0.5);
    let t = g.tanh(z).unwrap();
    assert_eq!(g.value(t).item(), 0.0);
    let grads = g.backward(t).unwrap();
    assert_eq!(grads.get(z).unwrap().item(), 1.0);

    let mut g = Graph::new();
    let x = g.param(Tensor::vector(&[-1.0, 2.0, 0.0]));
    let r = g.relu(x).unwrap();
    let s = g.sum(r).unwrap();
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.get(x).unwrap().data(), &[0.0, 1.0, 0.0]);
}

#[test]
fn log_rejects_non_positive_with_index() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::vector(&[1.0, 0.5, -2.0]));
    match g.log(x) {
        Err(TensorError::Domain { op: "log", index: 2, .. }) => {}
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn division_by_zero_is_domain_error() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::vector(&[1.0, 2.0]));
    let b = g.constant(Tensor::vector(&[1.0, 0.0]));
    assert!(matches!(g.div(a, b), Err(TensorError::Domain { op: "div", index: 1, .. })));
}

#[test]
fn scalar_broadcast_only() {
    let mut g = Graph::new();
    let a = g.param(Tensor::vector(&[1.0, 2.0, 3.0]));
    let s = g.param(Tensor::scalar(2.0));
    let m = g.mul(a, s).unwrap();
    assert_eq!(g.value(m).data(), &[2.0, 4.0, 6.0]);
    let total = g.sum(m).unwrap();
    let grads = g.backward(total).unwrap();
    assert_eq!(grads.get(s).unwrap().item(), 6.0);
    assert_eq!(grads.get(a).unwrap().data(), &[2.0, 2.0, 2.0]);

    let mut g = Graph::new();
    let a = g.constant(Tensor::zeros(&[2, 3]));
    let b = g.constant(Tensor::zeros(&[3]));
    assert!(g.add(a, b).is_err());
}

#[test]
fn softmax_concat_mean_examples() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::vector(&[0.0, 0.0]));
    let s = g.softmax(x, 0).unwrap();
    assert_eq!(g.value(s).data(), &[0.5, 0.5]);

    let a = g.constant(Tensor::vector(&[1.0, 2.0]));
    let b = g.constant(Tensor::vector(&[3.0]));
    let c = g.concat(a, b, 0).unwrap();
    assert_eq!(g.value(c).data(), &[1.0, 2.0, 3.0]);

    let v = g.constant(Tensor::vector(&[1.0, 2.0, 3.0, 4.0]));
    let m = g.mean(v).unwrap();
    assert_eq!(g.value(m).item(), 2.5);
}

#[test]
fn concat_rejects_mismatched_off_axis() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::zeros(&[2, 3]));
    let b = g.constant(Tensor::zeros(&[3, 2]));
    assert!(g.concat(a, b, 0).is_err());
    assert!(g.concat(a, b, 1).is_err());
}

#[test]
fn backward_examples() {
    let mut g = Graph::new();
    let x = g.param(Tensor::vector(&[1.0, 2.0, 3.0]));
    let sq = g.mul(x, x).unwrap();
    let s = g.sum(sq).unwrap();
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.get(x).unwrap().data(), &[2.0, 4.0, 6.0]);

    let mut g = Graph::new();
    let x = g.param(Tensor::zeros(&[4]));
    let m = g.mean(x).unwrap();
    let grads = g.backward(m).unwrap();
    assert_eq!(grads.get(x).unwrap().data(), &[0.25; 4]);
}

#[test]
fn backward_errors() {
    let mut g = Graph::new();
    let x = g.param(Tensor::vector(&[1.0, 2.0]));
    let y = g.tanh(x).unwrap();
    assert!(matches!(g.backward(y), Err(TensorError::NonScalarRoot { .. })));
    let s = g.sum(y).unwrap();
    g.backward(s).unwrap();
    assert_eq!(g.backward(s).unwrap_err(), TensorError::GraphConsumed);
}

#[test]
fn unreached_leaf_gets_zero_gradient() {
    let mut g = Graph::new();
    let x = g.param(Tensor::vector(&[1.0, 2.0]));
    let unused = g.param(Tensor::vector(&[5.0]));
    let s = g.sum(x).unwrap();
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.get(unused).unwrap().data(), &[0.0]);
}

#[test]
fn grad_check_examples() {
    let x = random(&[8], 3, 1.0);
    let err = grad_check(
        |g, x| {
            let sq = g.mul(x, x)?;
            g.sum(sq)
        },
        &x,
        1e-6,
    );
    assert!(err < 1e-6, "{err}");

    let w = random(&[5, 8], 4, 1.0);
    let x2 = x.reshape(&[8, 1]).unwrap();
    let err = grad_check(
        |g, x| {
            let wv = g.constant(w.clone());
            let y = g.matmul(wv, x)?;
            let s = g.sigmoid(y)?;
            g.sum(s)
        },
        &x2,
        1e-6,
    );
    assert!(err < 1e-4, "{err}");

    let err = grad_check(|g, _| Ok(g.constant(Tensor::scalar(3.0))), &x, 1e-6);
    assert_eq!(err, 0.0);
}

#[test]
fn grad_check_reports_failure_as_infinity() {
    let x = Tensor::vector(&[-1.0, 1.0]);
    let err = grad_check(
        |g, x| {
            let l = g.log(x)?;
            g.sum(l)
        },
        &x,
        1e-6,
    );
    assert_eq!(err, f64::INFINITY);
}

#[test]
fn conv1d_moving_sum_and_identity() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::new(&[1, 1, 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let w = g.constant(Tensor::ones(&[1, 1, 3]));
    let b = g.constant(Tensor::zeros(&[1]));
    let y = g.conv1d(x, w, b, 1, 0).unwrap();
    assert_eq!(g.value(y).data(), &[6.0, 9.0]);

    let x = g.constant(random(&[2, 3, 5], 5, 1.0));
    let mut eye = vec![0.0; 9];
    for c in 0..3 {
        eye[c * 3 + c] = 1.0;
    }
    let w = g.constant(Tensor::new(&[3, 3, 1], eye).unwrap());
    let b = g.constant(Tensor::zeros(&[3]));
    let y = g.conv1d(x, w, b, 1, 0).unwrap();
    assert_eq!(g.value(y), g.value(x));

    let short = g.constant(Tensor::zeros(&[1, 1, 2]));
    let k3 = g.constant(Tensor::ones(&[1, 1, 3]));
    let b1 = g.constant(Tensor::zeros(&[1]));
    assert!(matches!(g.conv1d(short, k3, b1, 1, 0), Err(TensorError::ConvTooShort { .. })));
}

/// Composite of every differentiable op, used for the random-point sweeps.
fn composite(g: &mut Graph, v: &[Var]) -> Result<Var, TensorError> {
    let (a, b, w, cb) = (v[0], v[1], v[2], v[3]);
    let ab = g.matmul(a, b)?; // [3x4]
    let t = g.tanh(ab)?;
    let s = g.sigmoid(ab)?;
    let p = g.mul(t, s)?;
    let q = g.sub(p, ab)?;
    let e = g.exp(s)?;
    let r = g.div(q, e)?;
    let sm = g.softmax(r, 1)?;
    let ls = g.log_softmax(r, 0)?;
    let l = g.log(sm)?;
    let n = g.neg(ls)?;
    let cat = g.concat(l, n, 0)?; // [6x4]
    let sl = g.slice(cat, 1, 1..3)?; // [6x2]
    let rl = g.relu(sl)?;
    let m = g.reduce(ReduceKind::Mean, rl, Some(1))?; // [6]
    let m2 = g.reshape(m, &[1, 2, 3])?;
    let x3 = g.expand(m2, 0, 2)?; // [2x2x3]
    let conv = g.conv1d(x3, w, cb, 2, 1)?; // w [2x2x2] -> [2x2x2]
    let abt = g.matmul_bt(b, b)?; // [4x4]
    let sc = g.scale(abt, 0.3)?;
    let s1 = g.reduce(ReduceKind::Sum, sc, Some(0))?;
    let s1 = g.sum(s1)?;
    let s2 = g.sum(conv)?;
    let c = g.mul(s2, s1)?;
    g.add(c, s2)
}

fn composite_inputs(seed: u64) -> Vec<Tensor> {
    vec![
        random(&[3, 5], seed, 1.0),
        random(&[5, 4], seed + 1000, 1.0),
        random(&[2, 2, 2], seed + 2000, 1.0),
        random(&[2], seed + 3000, 1.0),
    ]
}

#[test]
fn every_op_matches_finite_differences_at_random_points() {
    for seed in 0..100 {
        let err = grad_check_many(composite, &composite_inputs(seed), 1e-6);
        assert!(err < 1e-4, "seed {seed}: {err}");
    }
}

#[test]
fn backward_is_linear_in_the_root() {
    for seed in 0..10 {
        let inputs = composite_inputs(seed);
        let grad_of = |f: &dyn Fn(&mut Graph, &[Var]) -> Result<Var, TensorError>| {
            let mut g = Graph::new();
            let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
            let root = f(&mut g, &vars).unwrap();
            let grads = g.backward(root).unwrap();
            vars.iter().map(|v| grads.get(*v).unwrap().clone()).collect::<Vec<_>>()
        };
        let other = |g: &mut Graph, v: &[Var]| -> Result<Var, TensorError> {
            let x = g.matmul(v[0], v[1])?;
            let y = g.sigmoid(x)?;
            let y = g.mul(y, y)?;
            g.sum(y)
        };
        let gf = grad_of(&composite);
        let gg = grad_of(&other);
        let gsum = grad_of(&|g, v| {
            let a = composite(g, v)?;
            let b = other(g, v)?;
            g.add(a, b)
        });
        for ((f, o), s) in gf.iter().zip(&gg).zip(&gsum) {
            for ((x, y), z) in f.data().iter().zip(o.data()).zip(s.data()) {
                assert!((x + y - z).abs() <= 1e-12 * (1.0 + z.abs()));
            }
        }
    }
}

#[test]
fn dump_lists_every_node() {
    let mut g = Graph::new();
    let x = g.param(Tensor::vector(&[1.0]));
    let y = g.exp(x).unwrap();
    g.sum(y).unwrap();
    let dump = g.dump();
    assert_eq!(dump.lines().count(), 3);
    assert!(dump.lines().nth(1).unwrap().starts_with("1 exp [0] [1] grad"));
}

#[test]
fn straight_through_forwards_hard_and_backprops_into_relaxed() {
    let mut g = Graph::new();
    let x = g.param(Tensor::vector(&[0.3, -0.2]));
    let soft = g.softmax(x, 0).unwrap();
    let st = g.straight_through(Tensor::vector(&[1.0, 0.0]), soft).unwrap();
    assert_eq!(g.value(st).data(), &[1.0, 0.0]);
    let w = g.constant(Tensor::vector(&[2.0, -1.0]));
    let y = g.mul(st, w).unwrap();
    let s = g.sum(y).unwrap();
    let grads = g.backward(s).unwrap();

    let mut g2 = Graph::new();
    let x2 = g2.param(Tensor::vector(&[0.3, -0.2]));
    let soft2 = g2.softmax(x2, 0).unwrap();
    let w2 = g2.constant(Tensor::vector(&[2.0, -1.0]));
    let y2 = g2.mul(soft2, w2).unwrap();
    let s2 = g2.sum(y2).unwrap();
    let grads2 = g2.backward(s2).unwrap();
    assert_eq!(grads.get(x).unwrap(), grads2.get(x2).unwrap());
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one(data in prop::collection::vec(-30.0f64..30.0, 12)) {
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(&[3, 4], data).unwrap());
        let s = g.softmax(x, 1).unwrap();
        let ls = g.log_softmax(x, 1).unwrap();
        let sv = g.value(s).clone();
        for r in 0..3 {
            let total: f64 = sv.row(r).iter().sum();
            prop_assert!((total - 1.0).abs() <= 1e-12);
        }
        for (a, b) in g.value(ls).data().iter().zip(sv.data()) {
            prop_assert!((a - b.ln()).abs() <= 1e-9);
        }
    }

    #[test]
    fn concat_then_slices_reproduce_inputs(
        rows_a in 1usize..4, rows_b in 1usize..4, cols in 1usize..4, axis in 0usize..2,
        seed in 0u64..1000,
    ) {
        let (sa, sb) = if axis == 0 { ([rows_a, cols], [rows_b, cols]) } else { ([cols, rows_a], [cols, rows_b]) };
        let a = random(&sa, seed, 1.0);
        let b = random(&sb, seed + 1, 1.0);
        let mut g = Graph::new();
        let av = g.constant(a.clone());
        let bv = g.constant(b.clone());
        let c = g.concat(av, bv, axis).unwrap();
        let n = g.shape(c)[axis];
        let left = g.slice(c, axis, 0..rows_a).unwrap();
        let right = g.slice(c, axis, rows_a..n).unwrap();
        prop_assert_eq!(g.value(left), &a);
        prop_assert_eq!(g.value(right), &b);
    }
}
