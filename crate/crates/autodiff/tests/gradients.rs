use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use selfex_autodiff::{gradient, jacobian, Result, Tape, Tensor, Var};

/// Central finite differences of a scalar function of several matrices,
/// with respect to input `which`.
fn finite_diff(
    f: &dyn Fn(&[Tensor]) -> f64,
    inputs: &[Tensor],
    which: usize,
    h: f64,
) -> Vec<f64> {
    let mut out = Vec::with_capacity(inputs[which].numel());
    for k in 0..inputs[which].numel() {
        let mut plus = inputs.to_vec();
        let mut minus = inputs.to_vec();
        plus[which].data_mut()[k] += h;
        minus[which].data_mut()[k] -= h;
        out.push((f(&plus) - f(&minus)) / (2.0 * h));
    }
    out
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a
        .iter()
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
        .max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor {
    Tensor::matrix(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect(),
    )
    .unwrap()
}

type Build = for<'t> fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>;

/// Checks every input gradient of `sum(weights ⊙ build(inputs))` against
/// finite differences.
fn check_op(build: Build, inputs: Vec<Tensor>, seed: u64) -> f64 {
    let out_shape = {
        let tape = Tape::new();
        let vars: Vec<_> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let y = build(&tape, &vars).unwrap();
        (y.rows(), y.cols())
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights = random_matrix(&mut rng, out_shape.0, out_shape.1, -1.0, 1.0);

    let scalar = |tape_inputs: &[Tensor]| -> f64 {
        let tape = Tape::new();
        let vars: Vec<_> = tape_inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let y = build(&tape, &vars).unwrap();
        y.mul(tape.constant(weights.clone())).unwrap().sum().item()
    };

    let tape = Tape::new();
    let vars: Vec<_> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let y = build(&tape, &vars).unwrap();
    let s = y.mul(tape.constant(weights.clone())).unwrap().sum();
    let grads = tape.grad_allow_unused(s, &vars).unwrap();

    let mut worst: f64 = 0.0;
    for (i, g) in grads.iter().enumerate() {
        let fd = finite_diff(&scalar, &inputs, i, 1e-5);
        worst = worst.max(rel_err(g.value().data(), &fd));
    }
    worst
}

fn ops() -> Vec<(&'static str, Build, Vec<(usize, usize, f64, f64)>)> {
    // (name, builder, input specs: rows, cols, lo, hi)
    vec![
        ("matmul", |_, v| v[0].matmul(v[1]), vec![(3, 4, -1., 1.), (4, 2, -1., 1.)]),
        ("matmul_tn", |_, v| v[0].matmul_t(v[1], true, false), vec![(4, 3, -1., 1.), (4, 2, -1., 1.)]),
        ("matmul_nt", |_, v| v[0].matmul_t(v[1], false, true), vec![(3, 4, -1., 1.), (2, 4, -1., 1.)]),
        ("matmul_tt", |_, v| v[0].matmul_t(v[1], true, true), vec![(4, 3, -1., 1.), (2, 4, -1., 1.)]),
        ("add", |_, v| v[0].add(v[1]), vec![(2, 3, -1., 1.), (2, 3, -1., 1.)]),
        ("sub", |_, v| v[0].sub(v[1]), vec![(2, 3, -1., 1.), (2, 3, -1., 1.)]),
        ("mul", |_, v| v[0].mul(v[1]), vec![(2, 3, -1., 1.), (2, 3, -1., 1.)]),
        ("add_row", |_, v| v[0].add_row(v[1]), vec![(3, 4, -1., 1.), (1, 4, -1., 1.)]),
        ("scale", |_, v| Ok(v[0].scale(-2.5)), vec![(2, 2, -1., 1.)]),
        ("add_scalar", |_, v| Ok(v[0].add_scalar(0.7)), vec![(2, 2, -1., 1.)]),
        ("tanh", |_, v| Ok(v[0].tanh()), vec![(3, 3, -2., 2.)]),
        ("relu", |_, v| Ok(v[0].relu()), vec![(3, 3, 0.05, 2.)]),
        ("relu_neg", |_, v| Ok(v[0].add_scalar(-3.0).relu().add(v[0])?), vec![(3, 3, -2., 2.)]),
        ("exp", |_, v| Ok(v[0].exp()), vec![(2, 3, -1., 1.)]),
        ("ln", |_, v| Ok(v[0].ln()), vec![(2, 3, 0.5, 2.)]),
        ("recip", |_, v| Ok(v[0].recip()), vec![(2, 3, 0.5, 2.)]),
        ("safe_recip", |_, v| Ok(v[0].safe_recip()), vec![(2, 3, 0.5, 2.)]),
        ("sqrt", |_, v| Ok(v[0].sqrt()), vec![(2, 3, 0.5, 2.)]),
        ("sum", |_, v| Ok(v[0].sum()), vec![(3, 2, -1., 1.)]),
        ("mean", |_, v| Ok(v[0].mean()), vec![(3, 2, -1., 1.)]),
        ("sum_rows", |_, v| Ok(v[0].sum_rows()), vec![(3, 2, -1., 1.)]),
        ("sum_cols", |_, v| Ok(v[0].sum_cols()), vec![(3, 2, -1., 1.)]),
        ("broadcast_row", |_, v| v[0].broadcast(4, 3), vec![(1, 3, -1., 1.)]),
        ("broadcast_col", |_, v| v[0].broadcast(4, 3), vec![(4, 1, -1., 1.)]),
        ("broadcast_scalar", |_, v| v[0].broadcast(2, 3), vec![(1, 1, -1., 1.)]),
        ("reshape", |_, v| v[0].reshape(3, 2), vec![(2, 3, -1., 1.)]),
        ("minimum", |_, v| v[0].minimum(v[1].add_scalar(1.0)), vec![(3, 3, 0., 2.), (3, 3, -0.5, 0.5)]),
        ("clamp", |_, v| Ok(v[0].clamp(-0.5, 0.5)), vec![(3, 3, -0.45, 0.45)]),
        ("log_softmax", |_, v| v[0].log_softmax(), vec![(3, 4, -2., 2.)]),
        ("softmax", |_, v| v[0].softmax(), vec![(3, 4, -2., 2.)]),
        ("norm", |_, v| Ok(v[0].norm()), vec![(3, 4, -1., 1.)]),
        ("row_norms", |_, v| Ok(v[0].row_norms()), vec![(3, 4, -1., 1.)]),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn every_op_matches_finite_differences(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (name, build, specs) in ops() {
            let inputs: Vec<Tensor> = specs
                .iter()
                .map(|&(r, c, lo, hi)| random_matrix(&mut rng, r, c, lo, hi))
                .collect();
            let err = check_op(build, inputs, seed ^ 0x5eed);
            prop_assert!(err < 1e-5, "{name}: relative error {err}");
        }
    }

    #[test]
    fn nested_gradient_norm_matches_finite_differences(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w1 = random_matrix(&mut rng, 4, 5, -1.0, 1.0);
        let w2 = random_matrix(&mut rng, 5, 3, -1.0, 1.0);
        let x = random_matrix(&mut rng, 2, 4, -1.0, 1.0);
        // g(W) = ‖∇x f(x; W)‖², f = sum(tanh(tanh(x W1) W2))
        fn f<'t>(x: Var<'t>, w1: Var<'t>, w2: Var<'t>) -> Var<'t> {
            x.matmul(w1).unwrap().tanh().matmul(w2).unwrap().tanh().sum()
        }
        let g_value = |params: &[Tensor]| -> f64 {
            let tape = Tape::new();
            let xv = tape.leaf(x.clone());
            let (a, b) = (tape.leaf(params[0].clone()), tape.leaf(params[1].clone()));
            let gx = tape.grad(f(xv, a, b), &[xv]).unwrap()[0];
            gx.square().sum().item()
        };
        let tape = Tape::new();
        let xv = tape.leaf(x.clone());
        let (a, b) = (tape.leaf(w1.clone()), tape.leaf(w2.clone()));
        let gx = tape.grad(f(xv, a, b), &[xv]).unwrap()[0];
        let g = gx.square().sum();
        let grads = tape.grad(g, &[a, b]).unwrap();
        let params = vec![w1, w2];
        for (i, gr) in grads.iter().enumerate() {
            let fd = finite_diff(&g_value, &params, i, 1e-5);
            let err = rel_err(gr.value().data(), &fd);
            prop_assert!(err < 1e-4, "param {i}: relative error {err}");
        }
    }

    #[test]
    fn same_inputs_give_bit_identical_gradients(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = random_matrix(&mut rng, 6, 4, -1.0, 1.0);
        let x = random_matrix(&mut rng, 3, 6, -1.0, 1.0);
        let run = || {
            let tape = Tape::new();
            let (xv, wv) = (tape.leaf(x.clone()), tape.leaf(w.clone()));
            let y = xv.matmul(wv).unwrap().tanh().log_softmax().unwrap().sum();
            (*tape.grad(y, &[wv]).unwrap()[0].value()).clone()
        };
        prop_assert_eq!(run(), run());
    }
}

#[test]
fn matmul_example() {
    let tape = Tape::new();
    let a = tape.leaf(Tensor::matrix(2, 2, vec![1., 2., 3., 4.]).unwrap());
    let x = tape.leaf(Tensor::column(vec![1., 1.]).unwrap());
    let y = a.matmul(x).unwrap();
    assert_eq!(y.value().shape(), &[2, 1]);
    assert_eq!(y.value().data(), &[3., 7.]);
}

#[test]
fn softmax_of_zeros_is_uniform() {
    let tape = Tape::new();
    let y = tape.leaf(Tensor::row(vec![0.0; 4]).unwrap()).softmax().unwrap();
    assert_eq!(y.value().data(), &[0.25; 4]);
}

#[test]
fn relu_example() {
    let tape = Tape::new();
    let y = tape.leaf(Tensor::row(vec![-1., 0., 2.]).unwrap()).relu();
    assert_eq!(y.value().data(), &[0., 0., 2.]);
}

#[test]
fn shape_mismatch_names_both_shapes() {
    let tape = Tape::new();
    let a = tape.leaf(Tensor::zeros(2, 3));
    let b = tape.leaf(Tensor::zeros(2, 2));
    let msg = a.matmul(b).unwrap_err().to_string();
    assert!(msg.contains("[2, 3]") && msg.contains("[2, 2]"), "{msg}");
    assert!(a.add(b).is_err());
}

#[test]
fn derivative_of_square() {
    let g = gradient(|_, x| Ok(x.mul(x)?.sum()), &Tensor::scalar(3.0).unwrap()).unwrap();
    assert_eq!(g.data(), &[6.0]);
}

#[test]
fn second_derivative_of_cube() {
    let tape = Tape::new();
    let x = tape.leaf(Tensor::scalar(2.0).unwrap());
    let cube = x.mul(x).unwrap().mul(x).unwrap();
    let d1 = tape.grad(cube, &[x]).unwrap()[0];
    assert_eq!(d1.item(), 12.0);
    let d2 = tape.grad(d1, &[x]).unwrap()[0];
    assert_eq!(d2.item(), 12.0);
}

#[test]
fn sum_tanh_wx_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..20 {
        let w = random_matrix(&mut rng, 5, 4, -1.0, 1.0);
        let x = random_matrix(&mut rng, 4, 1, -1.0, 1.0);
        let f = |inputs: &[Tensor]| inputs[0].matmul(&inputs[1]).unwrap().map(f64::tanh).sum();
        let tape = Tape::new();
        let (wv, xv) = (tape.leaf(w.clone()), tape.leaf(x.clone()));
        let y = wv.matmul(xv).unwrap().tanh().sum();
        let grads = tape.grad(y, &[wv, xv]).unwrap();
        let inputs = vec![w, x];
        for (i, g) in grads.iter().enumerate() {
            let fd = finite_diff(&f, &inputs, i, 1e-5);
            assert!(rel_err(g.value().data(), &fd) < 1e-6);
        }
    }
}

#[test]
fn grad_requires_scalar_output() {
    let tape = Tape::new();
    let x = tape.leaf(Tensor::row(vec![1.0, 2.0]).unwrap());
    assert!(tape.grad(x.tanh(), &[x]).is_err());
}

#[test]
fn grad_rejects_foreign_and_unreachable_variables() {
    let tape = Tape::new();
    let other = Tape::new();
    let x = tape.leaf(Tensor::scalar(1.0).unwrap());
    let unused = tape.leaf(Tensor::scalar(1.0).unwrap());
    let y = x.tanh().sum();
    let foreign = other.leaf(Tensor::scalar(1.0).unwrap());
    assert!(tape.grad(y, &[foreign]).is_err());
    assert!(tape.grad(y, &[unused]).is_err());
    let g = tape.grad_allow_unused(y, &[unused]).unwrap();
    assert_eq!(g[0].item(), 0.0);
}

#[test]
fn trace_is_topologically_ordered() {
    let tape = Tape::new();
    let x = tape.leaf(Tensor::row(vec![0.3, -0.2]).unwrap());
    let y = x.tanh().square().sum();
    tape.grad(y, &[x]).unwrap();
    for (id, op) in tape.ops().iter().enumerate() {
        let inputs: Vec<usize> = match *op {
            selfex_autodiff::OpKind::Tanh(a) | selfex_autodiff::OpKind::Sum(a) => vec![a],
            selfex_autodiff::OpKind::Mul(a, b) | selfex_autodiff::OpKind::Add(a, b) => vec![a, b],
            _ => vec![],
        };
        assert!(inputs.iter().all(|&i| i < id));
    }
}

#[test]
fn jacobian_of_linear_map_is_the_matrix() {
    let a = Tensor::matrix(3, 2, vec![1., 2., -3., 4., 0.5, 6.]).unwrap();
    let at = a.clone();
    let j = jacobian(
        move |tape, x| x.matmul_t(tape.constant(at.clone()), false, true),
        &Tensor::row(vec![0.3, -1.1]).unwrap(),
    )
    .unwrap();
    assert_eq!(j, a);
}

#[test]
fn jacobian_of_identity() {
    let j = jacobian(|_, x| Ok(x), &Tensor::row(vec![1.0, 2.0, 3.0]).unwrap()).unwrap();
    assert_eq!(j, Tensor::identity(3));
}

#[test]
fn jacobian_of_quadratic_matches_finite_differences() {
    // f(x) = (x1², x1·x2) at (2, 3)
    let f = |tape: &Tape, x: Var<'_>| -> Result<Tensor> {
        let _ = tape;
        let v = x.value();
        Tensor::row(vec![v.data()[0] * v.data()[0], v.data()[0] * v.data()[1]])
    };
    let x0 = [2.0, 3.0];
    let h = 1e-5;
    let mut fd = vec![0.0; 4];
    for j in 0..2 {
        let mut p = x0;
        let mut m = x0;
        p[j] += h;
        m[j] -= h;
        let tape = Tape::new();
        let fp = f(&tape, tape.leaf(Tensor::row(p.to_vec()).unwrap())).unwrap();
        let fm = f(&tape, tape.leaf(Tensor::row(m.to_vec()).unwrap())).unwrap();
        for i in 0..2 {
            fd[i * 2 + j] = (fp.data()[i] - fm.data()[i]) / (2.0 * h);
        }
    }
    let j = jacobian(
        |tape, x| {
            let e0 = tape.constant(Tensor::column(vec![1.0, 0.0]).unwrap());
            let e1 = tape.constant(Tensor::column(vec![0.0, 1.0]).unwrap());
            let x1 = x.matmul(e0)?;
            let x2 = x.matmul(e1)?;
            let a = x1.mul(x1)?;
            let b = x1.mul(x2)?;
            let r0 = tape.constant(Tensor::row(vec![1.0, 0.0]).unwrap());
            let r1 = tape.constant(Tensor::row(vec![0.0, 1.0]).unwrap());
            a.matmul(r0)?.add(b.matmul(r1)?)
        },
        &Tensor::row(x0.to_vec()).unwrap(),
    )
    .unwrap();
    assert!(rel_err(j.data(), &fd) < 1e-8);
    assert_eq!(j.data(), &[4.0, 0.0, 3.0, 2.0]);
}

#[test]
fn jacobian_rejects_matrix_input() {
    assert!(jacobian(|_, x| Ok(x), &Tensor::zeros(2, 2)).is_err());
}
