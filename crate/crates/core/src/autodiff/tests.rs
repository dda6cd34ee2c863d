use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

/// Relative error with a small floor on the denominator so exact zeros on
/// both sides compare equal.
fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

type Builder = dyn Fn(&mut Tape, &[Var]) -> Var;

fn eval(build: &Builder, inputs: &[Tensor]) -> f64 {
    let mut tape = Tape::inference();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = build(&mut tape, &vars);
    tape.value(out).item().unwrap()
}

/// Worst relative error between reverse-mode gradients and central finite
/// differences over every input coordinate (or `max_coords` sampled ones).
fn fd_check(build: &Builder, inputs: &[Tensor], h: f64, max_coords: Option<(usize, u64)>) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = build(&mut tape, &vars);
    let grads = tape.backward(out).unwrap();

    let mut coords: Vec<(usize, usize)> =
        inputs.iter().enumerate().flat_map(|(i, t)| (0..t.len()).map(move |k| (i, k))).collect();
    if let Some((n, seed)) = max_coords {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        coords = (0..n).map(|_| coords[rng.random_range(0..coords.len())]).collect();
    }
    let mut worst = 0.0f64;
    for (i, k) in coords {
        let analytic = grads.get(vars[i]).map_or(0.0, |g| g.data()[k]);
        let mut plus = inputs.to_vec();
        plus[i].data_mut()[k] += h;
        let mut minus = inputs.to_vec();
        minus[i].data_mut()[k] -= h;
        let numeric = (eval(build, &plus) - eval(build, &minus)) / (2.0 * h);
        worst = worst.max(rel_err(analytic, numeric));
    }
    worst
}

#[test]
fn relu_forward_matches_definition() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::vector(vec![-1.0, 0.0, 2.0]));
    let y = tape.relu(x).unwrap();
    assert_eq!(tape.value(y).data(), &[0.0, 0.0, 2.0]);
}

#[test]
fn relu_subgradient_at_zero_is_zero() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::vector(vec![0.0]));
    let y = tape.relu(x).unwrap();
    let s = tape.mean(y).unwrap();
    let g = tape.backward(s).unwrap();
    assert_eq!(g.get(x).unwrap().data(), &[0.0]);
}

#[test]
fn softmax_of_equal_logits_is_uniform() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::vector(vec![0.0, 0.0, 0.0]));
    let y = tape.softmax(x).unwrap();
    for v in tape.value(y).data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
}

#[test]
fn softmax_survives_huge_logits() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::vector(vec![1000.0, 1000.0, -1000.0]));
    let y = tape.softmax(x).unwrap();
    let v = tape.value(y).data();
    assert!(v.iter().all(|v| v.is_finite()));
    assert!((v[0] - 0.5).abs() < 1e-12);
}

#[test]
fn bce_at_half_is_ln2() {
    let mut tape = Tape::new();
    let p = tape.leaf(Tensor::vector(vec![0.5]));
    let l = tape.bce(p, &[1.0]).unwrap();
    assert!((tape.value(l).item().unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
}

#[test]
fn bce_clamps_saturated_probabilities() {
    let mut tape = Tape::new();
    let p = tape.leaf(Tensor::vector(vec![0.0, 1.0]));
    let l = tape.bce(p, &[1.0, 0.0]).unwrap();
    let v = tape.value(l).item().unwrap();
    assert!(v.is_finite());
    // 1 - (1 - eps) is not exactly eps in floating point
    assert!((v + BCE_EPS.ln()).abs() < 1e-3);
}

#[test]
fn square_derivative() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::scalar(3.0));
    let y = tape.mul(x, x).unwrap();
    let g = tape.backward(y).unwrap();
    assert_eq!(g.get(x).unwrap().item(), Some(6.0));
}

#[test]
fn sigmoid_derivative_at_zero() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::scalar(0.0));
    let y = tape.sigmoid(x).unwrap();
    let g = tape.backward(y).unwrap();
    assert_eq!(g.get(x).unwrap().item(), Some(0.25));
}

#[test]
fn backward_rejects_non_scalar_and_foreign_loss() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
    assert!(matches!(tape.backward(x), Err(AutodiffError::NotScalar { .. })));

    let mut other = Tape::new();
    let z = other.leaf(Tensor::scalar(1.0));
    assert_eq!(tape.backward(z).unwrap_err(), AutodiffError::ForeignVar);
}

#[test]
fn inference_tape_refuses_backward() {
    let mut tape = Tape::inference();
    let x = tape.leaf(Tensor::scalar(1.0));
    let y = tape.sigmoid(x).unwrap();
    assert_eq!(tape.backward(y).unwrap_err(), AutodiffError::NotRecording);
}

#[test]
fn shape_mismatch_is_reported() {
    let mut tape = Tape::new();
    let a = tape.leaf(Tensor::zeros(&[2, 3]));
    let b = tape.leaf(Tensor::zeros(&[2, 3]));
    let err = tape.matmul(a, b).unwrap_err();
    assert!(err.to_string().contains("[2, 3] x [2, 3]"), "{err}");
    let c = tape.leaf(Tensor::zeros(&[3]));
    assert!(tape.add(a, c).is_err());
}

#[test]
fn every_primitive_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let h = 1e-5;
    let tol = 1e-6;

    let cases: Vec<(&str, Box<Builder>, Vec<Tensor>)> = vec![
        (
            "matmul_shared",
            Box::new(|t: &mut Tape, v: &[Var]| {
                let y = t.matmul(v[0], v[1]).unwrap();
                let y2 = t.mul(y, y).unwrap();
                t.mean(y2).unwrap()
            }),
            vec![random_tensor(&mut rng, &[2, 3, 4], -1.0, 1.0), random_tensor(&mut rng, &[4, 5], -1.0, 1.0)],
        ),
        (
            "matmul_batched",
            Box::new(|t: &mut Tape, v: &[Var]| {
                let y = t.matmul(v[0], v[1]).unwrap();
                let y2 = t.mul(y, y).unwrap();
                t.mean(y2).unwrap()
            }),
            vec![random_tensor(&mut rng, &[3, 2, 4], -1.0, 1.0), random_tensor(&mut rng, &[3, 4, 5], -1.0, 1.0)],
        ),
        (
            "matmul_nt",
            Box::new(|t: &mut Tape, v: &[Var]| {
                let y = t.matmul_nt(v[0], v[1]).unwrap();
                let y2 = t.mul(y, y).unwrap();
                t.mean(y2).unwrap()
            }),
            vec![random_tensor(&mut rng, &[3, 2, 4], -1.0, 1.0), random_tensor(&mut rng, &[3, 5, 4], -1.0, 1.0)],
        ),
        (
            "add_bias_scale",
            Box::new(|t: &mut Tape, v: &[Var]| {
                let y = t.add_bias(v[0], v[1]).unwrap();
                let y = t.scale(y, -1.7).unwrap();
                let y2 = t.mul(y, y).unwrap();
                t.mean(y2).unwrap()
            }),
            vec![random_tensor(&mut rng, &[4, 3], -1.0, 1.0), random_tensor(&mut rng, &[3], -1.0, 1.0)],
        ),
        (
            "relu_away_from_kink",
            Box::new(|t: &mut Tape, v: &[Var]| {
                let y = t.relu(v[0]).unwrap();
                let y2 = t.mul(y, y).unwrap();
                t.mean(y2).unwrap()
            }),
            vec![Tensor::vector(vec![-0.9, -0.2, 0.3, 1.1, -0.01, 0.05])],
        ),
        (
            "sigmoid_tanh_gelu",
            Box::new(|t: &mut Tape, v: &[Var]| {
                let a = t.sigmoid(v[0]).unwrap();
                let b = t.tanh(v[0]).unwrap();
                let c = t.gelu(v[0]).unwrap();
                let ab = t.mul(a, b).unwrap();
                let abc = t.mul(ab, c).unwrap();
                t.mean(abc).unwrap()
            }),
            vec![random_tensor(&mut rng, &[7], -3.0, 3.0)],
        ),
        (
            "softmax",
            Box::new(|t: &mut Tape, v: &[Var]| {
                let y = t.softmax(v[0]).unwrap();
                let w = t.mul(y, v[1]).unwrap();
                t.mean(w).unwrap()
            }),
            vec![random_tensor(&mut rng, &[3, 5], -2.0, 2.0), random_tensor(&mut rng, &[3, 5], -2.0, 2.0)],
        ),
        (
            "layer_norm",
            Box::new(|t: &mut Tape, v: &[Var]| {
                let y = t.layer_norm(v[0], v[1], v[2]).unwrap();
                let w = t.mul(y, v[3]).unwrap();
                t.mean(w).unwrap()
            }),
            vec![
                random_tensor(&mut rng, &[4, 6], -2.0, 2.0),
                random_tensor(&mut rng, &[6], 0.5, 1.5),
                random_tensor(&mut rng, &[6], -0.5, 0.5),
                random_tensor(&mut rng, &[4, 6], -1.0, 1.0),
            ],
        ),
        (
            "gather",
            Box::new(|t: &mut Tape, v: &[Var]| {
                let y = t.gather(v[0], &[2, 0, 2, 1]).unwrap();
                let y2 = t.mul(y, y).unwrap();
                t.mean(y2).unwrap()
            }),
            vec![random_tensor(&mut rng, &[3, 4], -1.0, 1.0)],
        ),
        (
            "weighted_mse",
            Box::new(|t: &mut Tape, v: &[Var]| {
                let target = Tensor::vector(vec![0.3, -0.2, 1.0, 0.0]);
                t.weighted_mse(v[0], &target, &[1.0, 0.0, 2.0, 1.0]).unwrap()
            }),
            vec![random_tensor(&mut rng, &[4], -1.0, 1.0)],
        ),
        (
            "bce",
            Box::new(|t: &mut Tape, v: &[Var]| {
                let p = t.sigmoid(v[0]).unwrap();
                t.bce(p, &[1.0, 0.0, 1.0, 0.0, 1.0]).unwrap()
            }),
            vec![random_tensor(&mut rng, &[5], -3.0, 3.0)],
        ),
        (
            "reshape_swap_axes",
            Box::new(|t: &mut Tape, v: &[Var]| {
                let y = t.reshape(v[0], &[2, 3, 2, 2]).unwrap();
                let y = t.swap_axes12(y).unwrap();
                let y = t.reshape(y, &[24]).unwrap();
                let w = t.mul(y, v[1]).unwrap();
                let w2 = t.mul(w, w).unwrap();
                t.mean(w2).unwrap()
            }),
            vec![random_tensor(&mut rng, &[24], -1.0, 1.0), random_tensor(&mut rng, &[24], -1.0, 1.0)],
        ),
        (
            "mask_rows_pick_sum",
            Box::new(|t: &mut Tape, v: &[Var]| {
                let y = t.mask_rows(v[0], v[1], &[false, true, false]).unwrap();
                let y2 = t.mul(y, y).unwrap();
                t.pick_sum(y2, &[0, 3, 4, 7, 4]).unwrap()
            }),
            vec![random_tensor(&mut rng, &[3, 3], -1.0, 1.0), random_tensor(&mut rng, &[3], -1.0, 1.0)],
        ),
    ];

    for (name, build, inputs) in cases {
        let worst = fd_check(build.as_ref(), &inputs, h, None);
        assert!(worst <= tol, "{name}: worst relative error {worst:e}");
    }
}

/// Two-layer tanh network with a BCE head.
fn two_layer_loss(t: &mut Tape, v: &[Var]) -> Var {
    let h = t.matmul(v[0], v[1]).unwrap();
    let h = t.add_bias(h, v[2]).unwrap();
    let h = t.tanh(h).unwrap();
    let o = t.matmul(h, v[3]).unwrap();
    let o = t.add_bias(o, v[4]).unwrap();
    let p = t.sigmoid(o).unwrap();
    t.bce(p, &[1.0, 0.0, 1.0, 1.0, 0.0, 0.0]).unwrap()
}

fn two_layer_inputs(seed: u64) -> Vec<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    vec![
        random_tensor(&mut rng, &[6, 5], -1.0, 1.0),
        random_tensor(&mut rng, &[5, 8], -0.8, 0.8),
        random_tensor(&mut rng, &[8], -0.2, 0.2),
        random_tensor(&mut rng, &[8, 1], -0.8, 0.8),
        random_tensor(&mut rng, &[1], -0.2, 0.2),
    ]
}

#[test]
fn random_two_layer_network_matches_finite_differences() {
    let inputs = two_layer_inputs(11);
    let worst = fd_check(&two_layer_loss, &inputs, 1e-5, Some((100, 3)));
    assert!(worst <= 1e-6, "worst relative error {worst:e}");
}

#[test]
fn backward_is_bitwise_deterministic() {
    let inputs = two_layer_inputs(5);
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = two_layer_loss(&mut tape, &vars);
    let g1 = tape.backward(loss).unwrap();
    let g2 = tape.backward(loss).unwrap();
    for v in vars {
        let (a, b) = (g1.get(v).unwrap().data(), g2.get(v).unwrap().data());
        assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}

#[test]
fn adam_minimizes_a_quadratic() {
    let mut w = Tensor::vector(vec![3.0, -2.0]);
    let mut opt = Adam::new(0.1);
    for _ in 0..500 {
        let mut tape = Tape::new();
        let x = tape.leaf(w.clone());
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.mean(sq).unwrap();
        let grads = tape.backward(loss).unwrap();
        opt.step(&mut [&mut w], &[grads.get(x)]);
    }
    assert!(w.data().iter().all(|v| v.abs() < 1e-2), "{:?}", w.data());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gradient_is_linear_in_the_loss(
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
        xs in proptest::collection::vec(-2.0f64..2.0, 4),
    ) {
        // f = mean(sigmoid(x)), g = mean(x * x)
        let grad_of = |wa: f64, wb: f64| -> Vec<f64> {
            let mut t = Tape::new();
            let x = t.leaf(Tensor::vector(xs.clone()));
            let s = t.sigmoid(x).unwrap();
            let f = t.mean(s).unwrap();
            let sq = t.mul(x, x).unwrap();
            let g = t.mean(sq).unwrap();
            let fa = t.scale(f, wa).unwrap();
            let gb = t.scale(g, wb).unwrap();
            let l = t.add(fa, gb).unwrap();
            t.backward(l).unwrap().get(x).unwrap().data().to_vec()
        };
        let combined = grad_of(a, b);
        let gf = grad_of(1.0, 0.0);
        let gg = grad_of(0.0, 1.0);
        for k in 0..xs.len() {
            let expect = a * gf[k] + b * gg[k];
            prop_assert!((combined[k] - expect).abs() <= 1e-12 * (1.0 + expect.abs()));
        }
    }

    #[test]
    fn forward_stays_finite_on_finite_inputs(xs in proptest::collection::vec(-50.0f64..50.0, 6)) {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::matrix(2, 3, xs).unwrap());
        let g = t.leaf(Tensor::full(&[3], 1.0));
        let b = t.leaf(Tensor::zeros(&[3]));
        let s = t.softmax(x).unwrap();
        let n = t.layer_norm(x, g, b).unwrap();
        let p = t.sigmoid(x).unwrap();
        let l = t.bce(p, &[1.0, 0.0, 1.0, 0.0, 1.0, 0.0]).unwrap();
        for v in [s, n, p, l] {
            prop_assert!(t.value(v).is_finite());
        }
    }
}
