//! Finite-difference verification of every graph primitive and composite.
//!
//! Each case builds a scalar loss that weights the operation's output with
//! fixed random coefficients (so adjoints are non-uniform), then compares
//! reverse-mode gradients against the central-difference oracle over 10
//! random trials at double precision.

use lwau::graph::{
    append_gradient, compare_gradients, evaluate_nodes, finite_difference_oracle, gradient,
    Bindings, Graph, NodeId,
};
use lwau::rng::{self, Stream};
use lwau::tensor::Tensor;

const REL_TOL: f64 = 1e-6;
const ABS_TOL: f64 = 1e-8;
const TRIALS: usize = 10;
const FD_STEP: f64 = 1e-5;

fn rand_tensor(shape: &[usize], rng: &mut Stream, lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng::uniform_in(rng, lo, hi))
}

/// Uniform in [-1, 1] but kept away from zero, for kinked ops like relu.
fn rand_tensor_nonzero(shape: &[usize], rng: &mut Stream) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let v = rng::uniform_in(rng, -1.0, 1.0);
        v + 0.05 * v.signum() + if v == 0.0 { 0.05 } else { 0.0 }
    })
}

/// Attaches a fixed random linear functional so the loss is scalar.
fn weighted_loss(g: &mut Graph, out: NodeId, rng: &mut Stream) -> NodeId {
    let shape = g.shape_of(out).to_vec();
    if shape.is_empty() {
        let w = rng::uniform_in(rng, 0.5, 1.5);
        return g.scale(out, w);
    }
    let n: usize = shape.iter().product();
    let coeffs = (0..n).map(|_| rng::uniform_in(rng, 0.5, 1.5)).collect();
    let w = g.constant(&shape, coeffs).unwrap();
    let prod = g.mul(out, w).unwrap();
    g.sum_all(prod)
}

fn assert_matches_oracle(g: &Graph, wrt: &[&str], bindings: &Bindings<f64>, label: &str) {
    let analytic = gradient(g, "loss", wrt, bindings).unwrap();
    let oracle = finite_difference_oracle(g, "loss", wrt, bindings, FD_STEP).unwrap();
    let summary = compare_gradients(&analytic, &oracle, ABS_TOL);
    assert!(
        summary.within(REL_TOL, ABS_TOL),
        "{label}: rel {:.3e} abs {:.3e} over {} entries",
        summary.max_rel_err,
        summary.max_abs_err_small,
        summary.entries,
    );
}

/// Runs `TRIALS` random trials of a graph-building closure. The closure
/// declares params, returns the op output node, and fills bindings.
fn run_trials(
    label: &str,
    build: impl Fn(&mut Graph, &mut Bindings<f64>, &mut Stream) -> (NodeId, Vec<&'static str>),
) {
    for trial in 0..TRIALS {
        let mut rng = rng::stream(42, label, trial as u64);
        let mut g = Graph::new();
        let mut b = Bindings::new();
        let (out, wrt) = build(&mut g, &mut b, &mut rng);
        let loss = weighted_loss(&mut g, out, &mut rng);
        g.mark_output("loss", loss).unwrap();
        assert_matches_oracle(&g, &wrt, &b, &format!("{label} trial {trial}"));
    }
}

#[test]
fn elementwise_binary_ops() {
    for op in ["add", "sub", "mul"] {
        run_trials(op, |g, b, rng| {
            let x = g.param("x", &[3, 4]).unwrap();
            let y = g.param("y", &[3, 4]).unwrap();
            b.set("x", rand_tensor(&[3, 4], rng, -1.0, 1.0));
            b.set("y", rand_tensor(&[3, 4], rng, -1.0, 1.0));
            let out = match op {
                "add" => g.add(x, y).unwrap(),
                "sub" => g.sub(x, y).unwrap(),
                _ => g.mul(x, y).unwrap(),
            };
            (out, vec!["x", "y"])
        });
    }
}

#[test]
fn scalar_attribute_ops() {
    run_trials("scale_addscalar", |g, b, rng| {
        let x = g.param("x", &[5]).unwrap();
        b.set("x", rand_tensor(&[5], rng, -1.0, 1.0));
        let s = g.scale(x, -1.7);
        let out = g.add_scalar(s, 0.3);
        (out, vec!["x"])
    });
}

#[test]
fn smooth_unary_ops() {
    run_trials("exp", |g, b, rng| {
        let x = g.param("x", &[6]).unwrap();
        b.set("x", rand_tensor(&[6], rng, -1.0, 1.0));
        (g.exp(x), vec!["x"])
    });
    run_trials("log", |g, b, rng| {
        let x = g.param("x", &[6]).unwrap();
        b.set("x", rand_tensor(&[6], rng, 0.5, 1.5));
        (g.log(x), vec!["x"])
    });
    run_trials("sqrt", |g, b, rng| {
        let x = g.param("x", &[6]).unwrap();
        b.set("x", rand_tensor(&[6], rng, 0.5, 1.5));
        (g.sqrt(x), vec!["x"])
    });
    run_trials("recip", |g, b, rng| {
        let x = g.param("x", &[6]).unwrap();
        b.set("x", rand_tensor(&[6], rng, 0.5, 1.5));
        (g.recip(x), vec!["x"])
    });
}

#[test]
fn relu_and_abs_away_from_kinks() {
    run_trials("relu", |g, b, rng| {
        let x = g.param("x", &[8]).unwrap();
        b.set("x", rand_tensor_nonzero(&[8], rng));
        (g.relu(x), vec!["x"])
    });
    run_trials("abs_sum", |g, b, rng| {
        let x = g.param("x", &[8]).unwrap();
        b.set("x", rand_tensor_nonzero(&[8], rng));
        (g.abs_sum(x).unwrap(), vec!["x"])
    });
}

#[test]
fn matmul_and_transpose() {
    run_trials("matmul", |g, b, rng| {
        let x = g.param("x", &[3, 4]).unwrap();
        let y = g.param("y", &[4, 2]).unwrap();
        b.set("x", rand_tensor(&[3, 4], rng, -1.0, 1.0));
        b.set("y", rand_tensor(&[4, 2], rng, -1.0, 1.0));
        (g.matmul(x, y).unwrap(), vec!["x", "y"])
    });
    run_trials("transpose", |g, b, rng| {
        let x = g.param("x", &[3, 5]).unwrap();
        b.set("x", rand_tensor(&[3, 5], rng, -1.0, 1.0));
        (g.transpose(x).unwrap(), vec!["x"])
    });
}

#[test]
fn reshapes_and_reductions() {
    run_trials("reshape", |g, b, rng| {
        let x = g.param("x", &[2, 6]).unwrap();
        b.set("x", rand_tensor(&[2, 6], rng, -1.0, 1.0));
        (g.reshape(x, &[3, 4]).unwrap(), vec!["x"])
    });
    run_trials("sum_all", |g, b, rng| {
        let x = g.param("x", &[7]).unwrap();
        b.set("x", rand_tensor(&[7], rng, -1.0, 1.0));
        (g.sum_all(x), vec!["x"])
    });
    run_trials("broadcast_scalar", |g, b, rng| {
        let x = g.param("x", &[]).unwrap();
        b.set("x", rand_tensor(&[], rng, -1.0, 1.0));
        (g.broadcast_scalar(x, &[3, 3]).unwrap(), vec!["x"])
    });
    run_trials("row_sum", |g, b, rng| {
        let x = g.param("x", &[4, 3]).unwrap();
        b.set("x", rand_tensor(&[4, 3], rng, -1.0, 1.0));
        (g.row_sum(x).unwrap(), vec!["x"])
    });
    run_trials("broadcast_cols", |g, b, rng| {
        let x = g.param("x", &[4, 1]).unwrap();
        b.set("x", rand_tensor(&[4, 1], rng, -1.0, 1.0));
        (g.broadcast_cols(x, 5).unwrap(), vec!["x"])
    });
    run_trials("col_sum", |g, b, rng| {
        let x = g.param("x", &[4, 3]).unwrap();
        b.set("x", rand_tensor(&[4, 3], rng, -1.0, 1.0));
        (g.col_sum(x).unwrap(), vec!["x"])
    });
    run_trials("broadcast_rows", |g, b, rng| {
        let x = g.param("x", &[1, 3]).unwrap();
        b.set("x", rand_tensor(&[1, 3], rng, -1.0, 1.0));
        (g.broadcast_rows(x, 5).unwrap(), vec!["x"])
    });
}

#[test]
fn label_gather_and_scatter() {
    run_trials("gather_target", |g, b, rng| {
        let x = g.param("x", &[4, 3]).unwrap();
        let t = g.input("t", &[4]).unwrap();
        b.set("x", rand_tensor(&[4, 3], rng, -1.0, 1.0));
        b.set(
            "t",
            Tensor::from_fn(&[4], |_| rng.random_range(0..3) as f64),
        );
        (g.gather_target(x, t).unwrap(), vec!["x"])
    });
    run_trials("scatter_target", |g, b, rng| {
        let x = g.param("x", &[4, 1]).unwrap();
        let t = g.input("t", &[4]).unwrap();
        b.set("x", rand_tensor(&[4, 1], rng, -1.0, 1.0));
        b.set(
            "t",
            Tensor::from_fn(&[4], |_| rng.random_range(0..3) as f64),
        );
        (g.scatter_target(x, t, 3).unwrap(), vec!["x"])
    });
}

#[test]
fn patch_extraction_ops() {
    run_trials("im2col", |g, b, rng| {
        let x = g.param("x", &[2, 4, 5, 3]).unwrap();
        b.set("x", rand_tensor(&[2, 4, 5, 3], rng, -1.0, 1.0));
        (g.im2col(x, 3, 3).unwrap(), vec!["x"])
    });
    run_trials("col2im", |g, b, rng| {
        let x = g.param("x", &[12, 9]).unwrap();
        b.set("x", rand_tensor(&[12, 9], rng, -1.0, 1.0));
        (g.col2im(x, &[1, 3, 4, 1], 3, 3).unwrap(), vec!["x"])
    });
    run_trials("pool_patches", |g, b, rng| {
        let x = g.param("x", &[2, 5, 4, 2]).unwrap();
        b.set("x", rand_tensor(&[2, 5, 4, 2], rng, -1.0, 1.0));
        (g.pool_patches(x).unwrap(), vec!["x"])
    });
    run_trials("pool_scatter", |g, b, rng| {
        let x = g.param("x", &[8, 4]).unwrap();
        b.set("x", rand_tensor(&[8, 4], rng, -1.0, 1.0));
        (g.pool_scatter(x, &[1, 4, 4, 2]).unwrap(), vec!["x"])
    });
}

#[test]
fn composite_network_ops() {
    run_trials("conv2d", |g, b, rng| {
        let x = g.param("x", &[2, 5, 5, 2]).unwrap();
        let k = g.param("k", &[3, 3, 2, 3]).unwrap();
        let bias = g.param("bias", &[3]).unwrap();
        b.set("x", rand_tensor(&[2, 5, 5, 2], rng, -1.0, 1.0));
        b.set("k", rand_tensor(&[3, 3, 2, 3], rng, -1.0, 1.0));
        b.set("bias", rand_tensor(&[3], rng, -1.0, 1.0));
        (g.conv2d(x, k, bias).unwrap(), vec!["x", "k", "bias"])
    });
    // Pool inputs drawn on a coarse grid with distinct per-index offsets so
    // no window has a near-tie that a +/-1e-5 probe could flip.
    run_trials("max_pool2", |g, b, rng| {
        let x = g.param("x", &[1, 4, 4, 2]).unwrap();
        b.set(
            "x",
            Tensor::from_fn(&[1, 4, 4, 2], |i| {
                (rng.random_range(0..100) as f64) * 0.01 + i as f64 * 1e-4
            }),
        );
        (g.max_pool2(x).unwrap(), vec!["x"])
    });
    run_trials("batch_norm", |g, b, rng| {
        let x = g.param("x", &[6, 3]).unwrap();
        let scale = g.param("scale", &[3]).unwrap();
        let offset = g.param("offset", &[3]).unwrap();
        b.set("x", rand_tensor(&[6, 3], rng, -1.0, 1.0));
        b.set("scale", rand_tensor(&[3], rng, 0.5, 1.5));
        b.set("offset", rand_tensor(&[3], rng, -0.5, 0.5));
        (
            g.batch_norm(x, scale, offset).unwrap(),
            vec!["x", "scale", "offset"],
        )
    });
    run_trials("softmax_cross_entropy", |g, b, rng| {
        let z = g.param("z", &[5, 4]).unwrap();
        let t = g.input("t", &[5]).unwrap();
        b.set("z", rand_tensor(&[5, 4], rng, -1.0, 1.0));
        b.set(
            "t",
            Tensor::from_fn(&[5], |_| rng.random_range(0..4) as f64),
        );
        (g.softmax_cross_entropy(z, t).unwrap(), vec!["z"])
    });
    run_trials("linear", |g, b, rng| {
        let x = g.param("x", &[4, 3]).unwrap();
        let w = g.param("w", &[3, 2]).unwrap();
        let bias = g.param("bias", &[2]).unwrap();
        b.set("x", rand_tensor(&[4, 3], rng, -1.0, 1.0));
        b.set("w", rand_tensor(&[3, 2], rng, -1.0, 1.0));
        b.set("bias", rand_tensor(&[2], rng, -1.0, 1.0));
        (g.linear(x, w, bias).unwrap(), vec!["x", "w", "bias"])
    });
}

#[test]
fn stop_grad_blocks_flow() {
    let mut g = Graph::new();
    let x = g.param("x", &[3]).unwrap();
    let frozen = g.stop_grad(x);
    let prod = g.mul(frozen, x).unwrap();
    let loss = g.sum_all(prod);
    g.mark_output("loss", loss).unwrap();
    let mut b = Bindings::new();
    b.set("x", Tensor::new(vec![3], vec![1.0, -2.0, 3.0]).unwrap());
    let grads = gradient(&g, "loss", &["x"], &b).unwrap();
    // Only the live factor contributes: d/dx sg(x)*x = sg(x).
    assert_eq!(grads["x"].data(), &[1.0, -2.0, 3.0]);
}

#[test]
fn random_mlp_matches_oracle() {
    // A ~50-parameter two-layer perceptron with every parameter checked.
    for trial in 0..3u64 {
        let mut rng = rng::stream(7, "mlp", trial);
        let mut g = Graph::new();
        let x = g.input("x", &[6, 4]).unwrap();
        let w1 = g.param("w1", &[4, 6]).unwrap();
        let b1 = g.param("b1", &[6]).unwrap();
        let w2 = g.param("w2", &[6, 3]).unwrap();
        let b2 = g.param("b2", &[3]).unwrap();
        let t = g.input("t", &[6]).unwrap();
        let h = g.linear(x, w1, b1).unwrap();
        let a = g.relu(h);
        let z = g.linear(a, w2, b2).unwrap();
        let loss = g.softmax_cross_entropy(z, t).unwrap();
        g.mark_output("loss", loss).unwrap();

        let mut b = Bindings::new();
        b.set("x", rand_tensor(&[6, 4], &mut rng, -1.0, 1.0));
        b.set("w1", rand_tensor(&[4, 6], &mut rng, -1.0, 1.0));
        b.set("b1", rand_tensor(&[6], &mut rng, -1.0, 1.0));
        b.set("w2", rand_tensor(&[6, 3], &mut rng, -1.0, 1.0));
        b.set("b2", rand_tensor(&[3], &mut rng, -1.0, 1.0));
        b.set("t", Tensor::from_fn(&[6], |_| rng.random_range(0..3) as f64));
        assert_matches_oracle(&g, &["w1", "b1", "w2", "b2"], &b, "random mlp");
    }
}

#[test]
fn second_order_matches_closed_forms() {
    // Polynomials with known second derivatives, checked to 1e-8.
    // f(w) = w^3 + 2w^2 - w: f'' = 6w + 4.
    for &w0 in &[2.0f64, -1.5, 0.25] {
        let mut g = Graph::new();
        let w = g.param("w", &[]).unwrap();
        let w2 = g.mul(w, w).unwrap();
        let w3 = g.mul(w2, w).unwrap();
        let tw2 = g.scale(w2, 2.0);
        let neg = g.scale(w, -1.0);
        let s = g.add(w3, tw2).unwrap();
        let f = g.add(s, neg).unwrap();
        let first = append_gradient(&mut g, f, &[w]).unwrap()[0];
        let second = append_gradient(&mut g, first, &[w]).unwrap()[0];
        let mut b = Bindings::new();
        b.set("w", Tensor::scalar(w0));
        let out = evaluate_nodes(&g, &b, &[second]).unwrap();
        assert!((out[0].item() - (6.0 * w0 + 4.0)).abs() < 1e-8);
    }
}

use rand::Rng;
