//! Every tape primitive, checked against central finite differences.
//!
//! Two independent routes to the same derivative: the reverse sweep in
//! `graph::backward`, and re-evaluation of the forward function at perturbed
//! inputs. Inputs are seeded and kept away from kinks (clamp edges, division
//! near zero, log near zero) so both routes are well conditioned.

use kseg_core::gradcheck::{numerical_gradient, relative_error};
use kseg_core::rng::rng_from_seed;
use kseg_core::tensor::Tensor;
use kseg_core::{Graph, Var};

const H: f64 = 1e-5;
const TOL: f64 = 1e-6;

/// Check d(loss)/d(input) for every input, where `build` assembles a scalar
/// loss from leaves. `build` must be a pure function of the leaf values.
fn check<F>(inputs: &[Tensor], tol: f64, build: F)
where
    F: Fn(&mut Graph, &[Var]) -> Var,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| g.leaf(t.clone().with_grad()))
        .collect();
    let loss = build(&mut g, &vars);
    assert!(
        g.value(loss).numel() == 1,
        "test losses must be scalar, got {:?}",
        g.value(loss).shape()
    );
    let grads = g.backward(loss).unwrap();

    for (idx, t) in inputs.iter().enumerate() {
        let ad = grads
            .get(vars[idx])
            .unwrap_or_else(|| panic!("no gradient for input {idx}"))
            .data()
            .to_vec();
        let fd = numerical_gradient(
            |x| {
                let mut g = Graph::new();
                let vs: Vec<Var> = inputs
                    .iter()
                    .enumerate()
                    .map(|(i, ti)| {
                        if i == idx {
                            g.leaf(Tensor::new(ti.shape().to_vec(), x.to_vec()).unwrap())
                        } else {
                            g.leaf(ti.clone())
                        }
                    })
                    .collect();
                let l = build(&mut g, &vs);
                g.value(l).item().unwrap()
            },
            t.data(),
            H,
        );
        let err = relative_error(&ad, &fd);
        assert!(err <= tol, "input {idx}: relative error {err:.3e} > {tol:.0e}");
    }
}

/// A fixed weighting tensor makes the output gradient non-uniform, so
/// adjoints that mishandle per-element structure can't pass by accident.
fn weighted_sum(g: &mut Graph, y: Var) -> Var {
    let shape = g.value(y).shape().to_vec();
    let n = g.value(y).numel();
    let w = Tensor::new(
        shape,
        (0..n).map(|i| 0.3 + 0.1 * i as f64).collect::<Vec<_>>(),
    )
    .unwrap();
    let wv = g.constant(w);
    let p = g.mul(y, wv).unwrap();
    g.sum_all(p)
}

fn randn(shape: &[usize], std: f64, seed: u64) -> Tensor {
    let mut rng = rng_from_seed(seed);
    Tensor::randn(shape, std, &mut rng)
}

#[test]
fn fd_add_sub() {
    let a = randn(&[3, 4], 1.0, 1);
    let b = randn(&[3, 4], 1.0, 2);
    check(&[a.clone(), b.clone()], TOL, |g, v| {
        let s = g.add(v[0], v[1]).unwrap();
        weighted_sum(g, s)
    });
    check(&[a, b], TOL, |g, v| {
        let s = g.sub(v[0], v[1]).unwrap();
        weighted_sum(g, s)
    });
}

#[test]
fn fd_mul() {
    let a = randn(&[2, 5], 1.0, 3);
    let b = randn(&[2, 5], 1.0, 4);
    check(&[a, b], TOL, |g, v| {
        let s = g.mul(v[0], v[1]).unwrap();
        weighted_sum(g, s)
    });
}

#[test]
fn fd_div() {
    let a = randn(&[2, 4], 1.0, 5);
    // Keep the denominator clear of zero.
    let b = Tensor::new(
        vec![2, 4],
        randn(&[2, 4], 1.0, 6)
            .data()
            .iter()
            .map(|v| 1.5 + v.abs())
            .collect(),
    )
    .unwrap();
    check(&[a, b], TOL, |g, v| {
        let s = g.div(v[0], v[1]).unwrap();
        weighted_sum(g, s)
    });
}

#[test]
fn fd_scale_and_add_scalar() {
    let a = randn(&[7], 1.0, 7);
    check(std::slice::from_ref(&a), TOL, |g, v| {
        let s = g.scale(v[0], -2.75);
        weighted_sum(g, s)
    });
    check(&[a], TOL, |g, v| {
        let s = g.add_scalar(v[0], 0.37);
        weighted_sum(g, s)
    });
}

#[test]
fn fd_clamp_interior() {
    // All values strictly inside the clamp window, far from the edges.
    let a = Tensor::new(vec![5], vec![-0.8, -0.2, 0.0, 0.35, 0.9]).unwrap();
    check(&[a], TOL, |g, v| {
        let s = g.clamp(v[0], -1.0, 1.0);
        weighted_sum(g, s)
    });
}

#[test]
fn fd_clamp_saturated_region_gets_zero_gradient() {
    // Values well outside the window: FD sees a flat function there and the
    // adjoint must agree exactly.
    let a = Tensor::new(vec![4], vec![-3.0, -2.0, 2.0, 3.0]).unwrap();
    check(&[a], TOL, |g, v| {
        let s = g.clamp(v[0], -1.0, 1.0);
        weighted_sum(g, s)
    });
}

#[test]
fn fd_gelu_sigmoid() {
    let a = randn(&[3, 3], 1.5, 8);
    check(std::slice::from_ref(&a), TOL, |g, v| {
        let s = g.gelu(v[0]);
        weighted_sum(g, s)
    });
    check(&[a], TOL, |g, v| {
        let s = g.sigmoid(v[0]);
        weighted_sum(g, s)
    });
}

#[test]
fn fd_sin_cos() {
    let a = randn(&[6], 2.0, 9);
    check(std::slice::from_ref(&a), TOL, |g, v| {
        let s = g.sin(v[0]);
        weighted_sum(g, s)
    });
    check(&[a], TOL, |g, v| {
        let s = g.cos(v[0]);
        weighted_sum(g, s)
    });
}

#[test]
fn fd_log() {
    let a = Tensor::new(
        vec![5],
        randn(&[5], 1.0, 10)
            .data()
            .iter()
            .map(|v| 0.6 + v.abs())
            .collect(),
    )
    .unwrap();
    check(&[a], TOL, |g, v| {
        let s = g.log(v[0]);
        weighted_sum(g, s)
    });
}

#[test]
fn fd_matmul_plain() {
    let a = randn(&[3, 4], 1.0, 11);
    let b = randn(&[4, 2], 1.0, 12);
    check(&[a, b], TOL, |g, v| {
        let s = g.matmul(v[0], v[1]).unwrap();
        weighted_sum(g, s)
    });
}

#[test]
fn fd_matmul_batched_both() {
    let a = randn(&[2, 3, 4], 1.0, 13);
    let b = randn(&[2, 4, 5], 1.0, 14);
    check(&[a, b], TOL, |g, v| {
        let s = g.matmul(v[0], v[1]).unwrap();
        weighted_sum(g, s)
    });
}

#[test]
fn fd_matmul_broadcast_rhs() {
    // Batched left, shared right: db must sum over the batch.
    let a = randn(&[3, 2, 4], 1.0, 15);
    let b = randn(&[4, 3], 1.0, 16);
    check(&[a, b], TOL, |g, v| {
        let s = g.matmul(v[0], v[1]).unwrap();
        weighted_sum(g, s)
    });
}

#[test]
fn fd_matmul_broadcast_lhs() {
    let a = randn(&[2, 4], 1.0, 17);
    let b = randn(&[3, 4, 2], 1.0, 18);
    check(&[a, b], TOL, |g, v| {
        let s = g.matmul(v[0], v[1]).unwrap();
        weighted_sum(g, s)
    });
}

#[test]
fn fd_transpose() {
    let a = randn(&[2, 3, 4], 1.0, 19);
    check(&[a], TOL, |g, v| {
        let t = g.transpose(v[0]).unwrap();
        weighted_sum(g, t)
    });
}

#[test]
fn fd_bias_add() {
    let x = randn(&[4, 3], 1.0, 20);
    let b = randn(&[3], 1.0, 21);
    check(&[x, b], TOL, |g, v| {
        let s = g.bias_add(v[0], v[1]).unwrap();
        weighted_sum(g, s)
    });
}

#[test]
fn fd_softmax_last_axis() {
    let a = randn(&[3, 5], 2.0, 22);
    check(&[a], TOL, |g, v| {
        let s = g.softmax(v[0], 1).unwrap();
        weighted_sum(g, s)
    });
}

#[test]
fn fd_softmax_middle_axis() {
    let a = randn(&[2, 4, 3], 2.0, 23);
    check(&[a], TOL, |g, v| {
        let s = g.softmax(v[0], 1).unwrap();
        weighted_sum(g, s)
    });
}

#[test]
fn fd_layer_norm_all_inputs() {
    let x = randn(&[4, 6], 1.0, 24);
    let gain = Tensor::new(
        vec![6],
        randn(&[6], 0.3, 25).data().iter().map(|v| 1.0 + v).collect(),
    )
    .unwrap();
    let bias = randn(&[6], 0.3, 26);
    // Looser tolerance: the per-row 1/σ makes this the worst-conditioned
    // primitive under finite differences.
    check(&[x, gain, bias], 5e-6, |g, v| {
        let s = g.layer_norm(v[0], v[1], v[2], 1e-5).unwrap();
        weighted_sum(g, s)
    });
}

#[test]
fn fd_concat() {
    let a = randn(&[2, 3], 1.0, 27);
    let b = randn(&[2, 1], 1.0, 28);
    let c = randn(&[2, 4], 1.0, 29);
    check(&[a, b, c], TOL, |g, v| {
        let s = g.concat(&[v[0], v[1], v[2]], 1).unwrap();
        weighted_sum(g, s)
    });
}

#[test]
fn fd_slice() {
    let a = randn(&[3, 8], 1.0, 30);
    check(&[a], TOL, |g, v| {
        let s = g.slice(v[0], 1, 2, 4).unwrap();
        weighted_sum(g, s)
    });
}

#[test]
fn fd_reductions() {
    let a = randn(&[3, 4], 1.0, 31);
    check(std::slice::from_ref(&a), TOL, |g, v| g.sum_all(v[0]));
    check(std::slice::from_ref(&a), TOL, |g, v| g.mean_all(v[0]).unwrap());
    check(&[a], TOL, |g, v| {
        let s = g.sum_axis(v[0], 0).unwrap();
        weighted_sum(g, s)
    });
}

#[test]
fn fd_sum_axis_middle() {
    let a = randn(&[2, 5, 3], 1.0, 32);
    check(&[a], TOL, |g, v| {
        let s = g.sum_axis(v[0], 1).unwrap();
        weighted_sum(g, s)
    });
}

// ── Composites: realistic op chains ─────────────────────────────────────

#[test]
fn fd_scaled_dot_product_attention() {
    // softmax(Q·Kᵀ/√d)·V — the core computation the whole model is built on.
    let q = randn(&[3, 4], 1.0, 33);
    let k = randn(&[5, 4], 1.0, 34);
    let v = randn(&[5, 4], 1.0, 35);
    check(&[q, k, v], TOL, |g, vars| {
        let kt = g.transpose(vars[1]).unwrap();
        let scores = g.matmul(vars[0], kt).unwrap();
        let scaled = g.scale(scores, 0.5); // 1/√4
        let attn = g.softmax(scaled, 1).unwrap();
        let out = g.matmul(attn, vars[2]).unwrap();
        weighted_sum(g, out)
    });
}

#[test]
fn fd_mlp_block() {
    // layer_norm → linear → gelu → linear, with a residual connection.
    let x = randn(&[3, 4], 1.0, 36);
    let gain = Tensor::full(&[4], 1.0);
    let bias = Tensor::zeros(&[4]);
    let w1 = randn(&[4, 6], 0.5, 37);
    let b1 = randn(&[6], 0.2, 38);
    let w2 = randn(&[6, 4], 0.5, 39);
    let b2 = randn(&[4], 0.2, 40);
    check(
        &[x, gain, bias, w1, b1, w2, b2],
        5e-6,
        |g, v| {
            let n = g.layer_norm(v[0], v[1], v[2], 1e-5).unwrap();
            let h = g.matmul(n, v[3]).unwrap();
            let h = g.bias_add(h, v[4]).unwrap();
            let h = g.gelu(h);
            let h = g.matmul(h, v[5]).unwrap();
            let h = g.bias_add(h, v[6]).unwrap();
            let res = g.add(h, v[0]).unwrap();
            weighted_sum(g, res)
        },
    );
}

#[test]
fn fd_log_of_clamped_softmax() {
    // The cross-entropy pattern: clamp keeps log in-domain.
    let x = randn(&[4, 3], 2.0, 41);
    check(&[x], TOL, |g, v| {
        let p = g.softmax(v[0], 1).unwrap();
        let p = g.clamp(p, 1e-7, 1.0 - 1e-7);
        let lp = g.log(p);
        let s = g.sum_all(lp);
        g.scale(s, -1.0 / 12.0)
    });
}
