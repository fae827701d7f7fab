//! Training losses, composed from tape primitives so gradients flow to the
//! model: per-class soft Dice and elementwise binary cross-entropy over
//! class-probability rows, plus their weighted sum.

use crate::graph::{Graph, Var};
use crate::tensor::{Tensor, TensorError};

/// Smoothing added to the Dice numerator and denominator.
pub const DICE_EPS: f64 = 1e-6;
/// Probabilities are clamped to `[PROB_CLAMP, 1 − PROB_CLAMP]` before logs.
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub dice: f64,
    pub bce: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { dice: 1.0, bce: 1.0 }
    }
}

/// One-hot rows for class labels: `[P, classes]` with a single 1 per row.
pub fn one_hot(labels: &[usize], classes: usize) -> Tensor {
    let mut data = alloc::vec![0.0; labels.len() * classes];
    for (i, l) in labels.iter().enumerate() {
        debug_assert!(*l < classes, "label {l} out of range for {classes} classes");
        data[i * classes + l] = 1.0;
    }
    Tensor::new(alloc::vec![labels.len(), classes], data).expect("P×C one-hot")
}

/// Soft Dice loss over `P×C` probabilities and one-hot targets:
/// `1 − (1/C)·Σ_c (2·Σ_p p·t + ε)/(Σ_p p + Σ_p t + ε)`.
pub fn soft_dice_loss(g: &mut Graph, probs: Var, targets: Var) -> Result<Var, TensorError> {
    let inter = g.mul(probs, targets)?;
    let inter_c = g.sum_axis(inter, 0)?;
    let p_c = g.sum_axis(probs, 0)?;
    let t_c = g.sum_axis(targets, 0)?;
    let num = {
        let doubled = g.scale(inter_c, 2.0);
        g.add_scalar(doubled, DICE_EPS)
    };
    let den = {
        let s = g.add(p_c, t_c)?;
        g.add_scalar(s, DICE_EPS)
    };
    let frac = g.div(num, den)?;
    let mean = g.mean_all(frac)?;
    let neg = g.scale(mean, -1.0);
    Ok(g.add_scalar(neg, 1.0))
}

/// Binary cross-entropy averaged over every entry:
/// `−(1/(P·C))·Σ [t·log p + (1−t)·log(1−p)]`, with probabilities clamped
/// away from {0, 1}.
pub fn bce_loss(g: &mut Graph, probs: Var, targets: Var) -> Result<Var, TensorError> {
    let n = g.value(probs).numel();
    if n == 0 {
        return Err(TensorError::Empty { op: "bce_loss" });
    }
    let p = g.clamp(probs, PROB_CLAMP, 1.0 - PROB_CLAMP);
    let log_p = g.log(p);
    let one_minus_p = {
        let neg = g.scale(p, -1.0);
        g.add_scalar(neg, 1.0)
    };
    let log_q = g.log(one_minus_p);
    let one_minus_t = {
        let neg = g.scale(targets, -1.0);
        g.add_scalar(neg, 1.0)
    };
    let hit = g.mul(targets, log_p)?;
    let miss = g.mul(one_minus_t, log_q)?;
    let terms = g.add(hit, miss)?;
    let total = g.sum_all(terms);
    Ok(g.scale(total, -1.0 / n as f64))
}

/// `λ_d·dice + λ_b·bce`.
pub fn total_loss(
    g: &mut Graph,
    probs: Var,
    targets: Var,
    w: &LossWeights,
) -> Result<Var, TensorError> {
    let d = soft_dice_loss(g, probs, targets)?;
    let b = bce_loss(g, probs, targets)?;
    let dw = g.scale(d, w.dice);
    let bw = g.scale(b, w.bce);
    g.add(dw, bw)
}

fn eval_loss(
    probs: &Tensor,
    targets: &Tensor,
    f: impl Fn(&mut Graph, Var, Var) -> Result<Var, TensorError>,
) -> Result<f64, TensorError> {
    let mut g = Graph::new();
    let p = g.constant(probs.clone());
    let t = g.constant(targets.clone());
    let l = f(&mut g, p, t)?;
    g.value(l).item()
}

/// Value-only soft Dice loss (no gradients).
pub fn soft_dice_loss_value(probs: &Tensor, targets: &Tensor) -> Result<f64, TensorError> {
    eval_loss(probs, targets, soft_dice_loss)
}

/// Value-only BCE loss.
pub fn bce_loss_value(probs: &Tensor, targets: &Tensor) -> Result<f64, TensorError> {
    eval_loss(probs, targets, bce_loss)
}

/// Value-only combined loss.
pub fn total_loss_value(
    probs: &Tensor,
    targets: &Tensor,
    w: &LossWeights,
) -> Result<f64, TensorError> {
    eval_loss(probs, targets, |g, p, t| total_loss(g, p, t, w))
}
