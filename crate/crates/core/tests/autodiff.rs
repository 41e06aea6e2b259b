use mgdpr_core::gradcheck::{central_difference, relative_error};
use mgdpr_core::{Graph, Tensor, TensorError, Var};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-5;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn positive(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(0.5..2.0)).collect()).unwrap()
}

/// Checks the analytic gradient of `build` (which must return a scalar) for
/// every input against central finite differences.
fn check<F>(inputs: Vec<Tensor>, build: F) -> f64
where
    F: for<'g> Fn(&'g Graph, &[Var<'g>]) -> Var<'g>,
{
    let graph = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| graph.param(t.clone())).collect();
    let loss = build(&graph, &vars);
    let grads = graph.backward(loss).unwrap();
    let analytic: Vec<Tensor> = vars.iter().map(|v| grads.get(v).unwrap().clone()).collect();
    let numeric = central_difference(&inputs, STEP, |xs| {
        let g = Graph::new();
        let vs: Vec<Var> = xs.iter().map(|t| g.constant(t.clone())).collect();
        build(&g, &vs).value().item()
    });
    analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| relative_error(a, n))
        .fold(0.0, f64::max)
}

/// Reduces any tensor to a scalar with non-uniform weights so that every
/// output entry contributes a distinct gradient.
fn weighted_sum<'g>(graph: &'g Graph, v: Var<'g>) -> Var<'g> {
    let shape = v.shape();
    let n: usize = shape.iter().product();
    let w = Tensor::new(&shape, (0..n).map(|i| ((i * 7 % 11) as f64 - 5.0) / 3.0).collect()).unwrap();
    v.hadamard(graph.constant(w)).unwrap().sum().unwrap()
}

#[test]
fn square_gradient() {
    let g = Graph::new();
    let x = g.param(Tensor::scalar(3.0));
    let loss = x.hadamard(x).unwrap().sum().unwrap();
    let grads = g.backward(loss).unwrap();
    assert_eq!(grads.get(&x).unwrap().data(), &[6.0]);
    assert!(g.is_empty(), "record is cleared after backward");
}

#[test]
fn exp_gradient_is_exp() {
    let g = Graph::new();
    let xs = Tensor::new(&[3], vec![-1.0, 0.0, 0.5]).unwrap();
    let x = g.param(xs.clone());
    let grads = g.backward(x.exp().unwrap().sum().unwrap()).unwrap();
    for (gv, xv) in grads.get(&x).unwrap().data().iter().zip(xs.data()) {
        assert!((gv - xv.exp()).abs() < 1e-15);
    }
}

#[test]
fn matmul_sum_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let err = check(vec![random(&mut rng, &[3, 4]), random(&mut rng, &[4, 2])], |_, v| {
        v[0].matmul(v[1]).unwrap().sum().unwrap()
    });
    assert!(err < 1e-6, "relative error {err}");
}

#[test]
fn non_scalar_loss_is_rejected() {
    let g = Graph::new();
    let x = g.param(Tensor::zeros(&[2]));
    assert_eq!(g.backward(x).unwrap_err(), TensorError::NonScalarLoss(vec![2]));
}

#[test]
fn unreachable_leaf_gets_zero_gradient() {
    let g = Graph::new();
    let x = g.param(Tensor::ones(&[2, 2]));
    let y = g.param(Tensor::ones(&[3]));
    let grads = g.backward(x.sum().unwrap()).unwrap();
    assert_eq!(grads.get(&y).unwrap(), &Tensor::zeros(&[3]));
    assert_eq!(grads.len(), 2);
}

#[test]
#[should_panic(expected = "cleared")]
fn stale_variable_panics() {
    let g = Graph::new();
    let x = g.param(Tensor::ones(&[1]));
    let _ = g.backward(x.sum().unwrap()).unwrap();
    let _ = x.value();
}

#[test]
fn every_differentiable_op_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let tol = 1e-4;
    let cases: Vec<(&str, f64)> = vec![
        ("matmul", check(vec![random(&mut rng, &[2, 3]), random(&mut rng, &[3, 4])], |g, v| {
            weighted_sum(g, v[0].matmul(v[1]).unwrap())
        })),
        ("bmm", check(vec![random(&mut rng, &[2, 3, 4]), random(&mut rng, &[2, 4, 2])], |g, v| {
            weighted_sum(g, v[0].bmm(v[1]).unwrap())
        })),
        (
            "affine",
            check(
                vec![random(&mut rng, &[3, 2]), random(&mut rng, &[2, 4]), random(&mut rng, &[4])],
                |g, v| weighted_sum(g, v[0].affine(v[1], v[2]).unwrap()),
            ),
        ),
        ("transpose", check(vec![random(&mut rng, &[2, 3, 4])], |g, v| {
            weighted_sum(g, v[0].transpose().unwrap())
        })),
        ("reshape", check(vec![random(&mut rng, &[2, 6])], |g, v| {
            weighted_sum(g, v[0].reshape(&[3, 4]).unwrap())
        })),
        ("add", check(vec![random(&mut rng, &[5]), random(&mut rng, &[5])], |g, v| {
            weighted_sum(g, v[0].add(v[1]).unwrap())
        })),
        ("sub", check(vec![random(&mut rng, &[5]), random(&mut rng, &[5])], |g, v| {
            weighted_sum(g, v[0].sub(v[1]).unwrap())
        })),
        ("hadamard", check(vec![random(&mut rng, &[2, 3]), random(&mut rng, &[2, 3])], |g, v| {
            weighted_sum(g, v[0].hadamard(v[1]).unwrap())
        })),
        ("scale", check(vec![random(&mut rng, &[4])], |g, v| weighted_sum(g, v[0].scale(-2.5).unwrap()))),
        ("exp", check(vec![random(&mut rng, &[4])], |g, v| weighted_sum(g, v[0].exp().unwrap()))),
        ("ln", check(vec![positive(&mut rng, &[4])], |g, v| weighted_sum(g, v[0].ln().unwrap()))),
        ("softmax axis 0", check(vec![random(&mut rng, &[3, 4])], |g, v| {
            weighted_sum(g, v[0].softmax(0).unwrap())
        })),
        ("softmax axis 1", check(vec![random(&mut rng, &[2, 3, 4])], |g, v| {
            weighted_sum(g, v[0].softmax(1).unwrap())
        })),
        ("activation", check(vec![random(&mut rng, &[6])], |g, v| {
            weighted_sum(g, v[0].leaky_relu(0.01).unwrap())
        })),
        ("group_normalize", check(vec![random(&mut rng, &[3, 8])], |g, v| {
            weighted_sum(g, v[0].group_normalize(2, 1e-5).unwrap())
        })),
        ("concat", check(vec![random(&mut rng, &[2, 3]), random(&mut rng, &[2, 5])], |g, v| {
            weighted_sum(g, v[0].concat(v[1], 1).unwrap())
        })),
        ("select", check(vec![random(&mut rng, &[3, 2, 2])], |g, v| {
            weighted_sum(g, v[0].select(1).unwrap())
        })),
        ("mean_axis", check(vec![random(&mut rng, &[2, 3, 4])], |g, v| {
            weighted_sum(g, v[0].mean_axis(1).unwrap())
        })),
        ("cross_entropy", check(vec![random(&mut rng, &[4, 2])], |_, v| {
            v[0].cross_entropy(&[0, 1, 1, 0]).unwrap()
        })),
    ];
    for (name, err) in cases {
        assert!(err < tol, "{name}: relative error {err}");
    }
}

#[test]
fn reused_operand_accumulates_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let err = check(vec![random(&mut rng, &[3, 3])], |g, v| {
        let sq = v[0].matmul(v[0]).unwrap();
        weighted_sum(g, sq.add(v[0]).unwrap())
    });
    assert!(err < 1e-6, "{err}");
}

#[test]
fn identical_sequences_are_bit_identical() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g = Graph::new();
        let a = g.param(random(&mut rng, &[4, 5]));
        let b = g.param(random(&mut rng, &[5, 3]));
        let y = a.matmul(b).unwrap().softmax(1).unwrap().group_normalize(1, 1e-5).unwrap();
        let out = y.value();
        let loss = weighted_sum(&g, y);
        let grads = g.backward(loss).unwrap();
        (out, grads.get(&a).unwrap().clone(), grads.get(&b).unwrap().clone())
    };
    assert_eq!(run(), run());
}

#[test]
fn softmax_slices_sum_to_one_on_random_tensors() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..100 {
        let shape = [rng.gen_range(1..5), rng.gen_range(1..6), rng.gen_range(1..5)];
        let scale = rng.gen_range(0.1..50.0);
        let t = random(&mut rng, &shape).scale(scale).unwrap();
        let axis = rng.gen_range(0..3);
        let s = t.softmax(axis).unwrap();
        assert!(s.data().iter().all(|&p| p > 0.0 && p <= 1.0));
        let (outer, len, inner) = (
            shape[..axis].iter().product::<usize>(),
            shape[axis],
            shape[axis + 1..].iter().product::<usize>(),
        );
        for o in 0..outer {
            for i in 0..inner {
                let total: f64 = (0..len).map(|j| s.data()[(o * len + j) * inner + i]).sum();
                assert!((total - 1.0).abs() < 1e-12);
            }
        }
    }
}

proptest! {
    #[test]
    fn group_means_vanish(values in prop::collection::vec(-100.0f64..100.0, 12)) {
        let t = Tensor::new(&[2, 6], values).unwrap();
        let n = t.group_normalize(3, 1e-5).unwrap();
        for chunk in n.data().chunks(2) {
            let mean = (chunk[0] + chunk[1]) / 2.0;
            prop_assert!(mean.abs() < 1e-9);
            let var = chunk.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 2.0;
            prop_assert!(var <= 1.0 + 1e-9);
        }
    }

    #[test]
    fn group_variance_is_unit_when_spread_dominates_eps(
        values in prop::collection::vec(-100.0f64..100.0, 8)
    ) {
        let mean = values.iter().sum::<f64>() / 8.0;
        let raw_var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 8.0;
        prop_assume!(raw_var > 10.0);
        let n = Tensor::new(&[1, 8], values).unwrap().group_normalize(1, 1e-5).unwrap();
        let var = n.data().iter().map(|v| v * v).sum::<f64>() / 8.0;
        prop_assert!((var - 1.0).abs() < 1e-6);
    }
}
