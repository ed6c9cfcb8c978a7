//! The adaptive-learning family of adapter rules. A rule may adapt the
//! layer output (output adaptor) or the parameter gradients (gradient
//! adaptor); the concrete members are:
//!
//! - `Plain`: ordinary adapter forward/backward.
//! - `Dropout`: a `{0, 1/keep}` mask on the bottleneck during training.
//! - `Allora`: scales the gradient contribution of output row `i` by
//!   `1/sqrt(|BA_row_i| + 1/eta^2)` — maximum `eta` at zero norm, tapering
//!   as the row grows. Input gradients are left untouched so the adaptation
//!   stays confined to the layer.
//! - `AlloraDropout`: dropout mask first, then the same row scaling.
//! - `AlloraOd`:.the factor argument is the mean absolute adapter output
//!   per unit instead of the row norm.
//! - `Asf`: moves the same factor into the forward pass, scaling each
//!   adapter output element; the backward is the true gradient of that
//!   scaled forward, and such a layer can no longer be merged.
//!
//! All backward passes are hand-derived and checked against finite
//! differences and mask enumeration in the test suite.

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::lora::LoraLayer;

/// Which adaptation rule a training run applies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AdaptorKind {
    Plain,
    Dropout { keep: f64 },
    Allora { eta: f64 },
    AlloraDropout { eta: f64, keep: f64 },
    AlloraOd { eta: f64 },
    Asf { eta: f64 },
}

impl AdaptorKind {
    pub fn validate(&self) -> Result<()> {
        if let Some(eta) = self.eta() {
            if !(eta > 0.0 && eta.is_finite()) {
                return Err(Error::invalid(format!("eta must be positive, got {eta}")));
            }
        }
        if let Some(keep) = self.keep() {
            if !(keep > 0.0 && keep <= 1.0) {
                return Err(Error::invalid(format!(
                    "keep probability must lie in (0, 1], got {keep}"
                )));
            }
        }
        Ok(())
    }

    pub fn eta(&self) -> Option<f64> {
        match *self {
            AdaptorKind::Plain | AdaptorKind::Dropout { .. } => None,
            AdaptorKind::Allora { eta }
            | AdaptorKind::AlloraDropout { eta, .. }
            | AdaptorKind::AlloraOd { eta }
            | AdaptorKind::Asf { eta } => Some(eta),
        }
    }

    pub fn keep(&self) -> Option<f64> {
        match *self {
            AdaptorKind::Dropout { keep } | AdaptorKind::AlloraDropout { keep, .. } => Some(keep),
            _ => None,
        }
    }

    /// Whether training draws a bottleneck mask each step.
    pub fn uses_mask(&self) -> bool {
        self.keep().is_some()
    }

    pub fn name(&self) -> &'static str {
        match self {
            AdaptorKind::Plain => "plain",
            AdaptorKind::Dropout { .. } => "dropout",
            AdaptorKind::Allora { .. } => "allora",
            AdaptorKind::AlloraDropout { .. } => "allora-d",
            AdaptorKind::AlloraOd { .. } => "allora-od",
            AdaptorKind::Asf { .. } => "asf",
        }
    }
}

/// Gradients produced by one adapter backward pass.
#[derive(Debug, Clone)]
pub struct BackwardResult {
    pub grad_a: Matrix,
    pub grad_b: Matrix,
    pub grad_input: Matrix,
}

/// The adaptive factor `1/sqrt(x + 1/eta^2)`: equals `eta` at `x = 0`,
/// strictly decreasing in `x`.
pub fn adaptive_factor(x: f64, eta: f64) -> Result<f64> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::invalid(format!("eta must be positive, got {eta}")));
    }
    if !(x >= 0.0) {
        return Err(Error::invalid(format!(
            "adaptive factor argument must be nonnegative, got {x}"
        )));
    }
    Ok(1.0 / (x + 1.0 / (eta * eta)).sqrt())
}

fn check_backward_shapes(layer: &LoraLayer, x: &Matrix, upstream: &Matrix) -> Result<()> {
    if x.cols() != layer.n_in() {
        return Err(Error::DimMismatch {
            op: "adapter_backward",
            lhs: x.shape(),
            rhs: layer.w.shape(),
        });
    }
    if upstream.rows() != x.rows() || upstream.cols() != layer.n_out() {
        return Err(Error::DimMismatch {
            op: "adapter_backward",
            lhs: upstream.shape(),
            rhs: (x.rows(), layer.n_out()),
        });
    }
    Ok(())
}

fn check_mask(layer: &LoraLayer, x: &Matrix, mask: &Matrix) -> Result<()> {
    if mask.rows() != x.rows() || mask.cols() != layer.rank {
        return Err(Error::DimMismatch {
            op: "adapter_mask",
            lhs: mask.shape(),
            rhs: (x.rows(), layer.rank),
        });
    }
    Ok(())
}

/// Parameter gradients of the plain adapter branch for upstream gradient
/// `g`: `grad_a = scaling * (g b)^T x`, `grad_b = scaling * g^T (x a^T)`.
fn param_grads(layer: &LoraLayer, x: &Matrix, g: &Matrix) -> Result<(Matrix, Matrix)> {
    let s = layer.scaling();
    let grad_a = g.matmul(&layer.b)?.transpose().matmul(x)?.scale(s);
    let bottleneck = x.matmul(&layer.a.transpose())?;
    let grad_b = g.transpose().matmul(&bottleneck)?.scale(s);
    Ok((grad_a, grad_b))
}

/// Input gradient through base and unmasked adapter branch, with raw `g`.
/// ALLoRA uses this exact path so its input gradient is bit-identical to
/// the plain rule's.
fn unscaled_input_grad(layer: &LoraLayer, g: &Matrix) -> Result<Matrix> {
    let base = g.matmul(&layer.w)?;
    let through_branch = g.matmul(&layer.b)?.scale(layer.scaling()).matmul(&layer.a)?;
    base.add(&through_branch)
}

/// Ordinary adapter backward pass.
pub fn plain_backward(layer: &LoraLayer, x: &Matrix, upstream: &Matrix) -> Result<BackwardResult> {
    check_backward_shapes(layer, x, upstream)?;
    let (grad_a, grad_b) = param_grads(layer, x, upstream)?;
    Ok(BackwardResult {
        grad_a,
        grad_b,
        grad_input: unscaled_input_grad(layer, upstream)?,
    })
}

/// Shared tail of the row-scaled rules: scale upstream column `i` by
/// `factors[i]` before forming the parameter gradients; leave the input
/// gradient on the raw path.
fn row_scaled_backward(
    layer: &LoraLayer,
    x: &Matrix,
    upstream: &Matrix,
    factors: &[f64],
) -> Result<BackwardResult> {
    let scaled = upstream.scale_columns(factors)?;
    let (grad_a, grad_b) = param_grads(layer, x, &scaled)?;
    Ok(BackwardResult {
        grad_a,
        grad_b,
        grad_input: unscaled_input_grad(layer, upstream)?,
    })
}

/// Adaptive-learning-rate backward: the gradient contribution of output
/// row `i` is scaled by `adaptive_factor(|BA_row_i|, eta)`. At `B = 0`
/// every factor equals `eta`, so the first update matches a plain run at
/// learning rate `eta * base_lr`.
pub fn allora_backward(
    layer: &LoraLayer,
    x: &Matrix,
    upstream: &Matrix,
    eta: f64,
) -> Result<BackwardResult> {
    check_backward_shapes(layer, x, upstream)?;
    let factors = allora_factors(&layer.ba_row_norms(), eta)?;
    row_scaled_backward(layer, x, upstream, &factors)
}

fn allora_factors(args: &[f64], eta: f64) -> Result<Vec<f64>> {
    args.iter().map(|&v| adaptive_factor(v, eta)).collect()
}

/// Output-dependent variant: the factor argument for unit `i` is the batch
/// mean of `|adapter_output_i|` instead of the row norm. With a single
/// sample this is exactly the per-sample magnitude.
pub fn allora_od_backward(
    layer: &LoraLayer,
    x: &Matrix,
    upstream: &Matrix,
    eta: f64,
) -> Result<BackwardResult> {
    check_backward_shapes(layer, x, upstream)?;
    let branch = layer.lora_branch(x)?;
    let batch = branch.rows() as f64;
    let mut args = vec![0.0; branch.cols()];
    for i in 0..branch.rows() {
        for (j, arg) in args.iter_mut().enumerate() {
            *arg += branch.get(i, j).abs();
        }
    }
    for arg in args.iter_mut() {
        *arg /= batch;
    }
    let factors = allora_factors(&args, eta)?;
    row_scaled_backward(layer, x, upstream, &factors)
}

/// Derivative of `u -> u / sqrt(|u| + q)` with respect to `u`, treating
/// `|u|` as smooth away from zero; continuous at zero with value
/// `1/sqrt(q) = eta`.
fn asf_output_derivative(u: f64, q: f64) -> f64 {
    let au = u.abs();
    (au + 2.0 * q) / (2.0 * (au + q).powf(1.5))
}

/// Adaptive-scaling-factor forward: each adapter-branch output element `u`
/// becomes `u / sqrt(|u| + 1/eta^2)`; the base path is added unscaled.
pub fn asf_forward(layer: &LoraLayer, x: &Matrix, eta: f64) -> Result<Matrix> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::invalid(format!("eta must be positive, got {eta}")));
    }
    let q = 1.0 / (eta * eta);
    let base = x.matmul(&layer.w.transpose())?;
    let branch = layer.lora_branch(x)?;
    base.add(&branch.map(|u| u / (u.abs() + q).sqrt()))
}

/// True gradient of [`asf_forward`], chain rule through the output factor
/// included — also on the input gradient, since the scaled branch is part
/// of the function being differentiated.
pub fn asf_backward(
    layer: &LoraLayer,
    x: &Matrix,
    upstream: &Matrix,
    eta: f64,
) -> Result<BackwardResult> {
    check_backward_shapes(layer, x, upstream)?;
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::invalid(format!("eta must be positive, got {eta}")));
    }
    let q = 1.0 / (eta * eta);
    let branch = layer.lora_branch(x)?;
    let derivs = branch.map(|u| asf_output_derivative(u, q));
    let g_branch = upstream.hadamard(&derivs)?;
    let (grad_a, grad_b) = param_grads(layer, x, &g_branch)?;
    let base = upstream.matmul(&layer.w)?;
    let through_branch = g_branch
        .matmul(&layer.b)?
        .scale(layer.scaling())
        .matmul(&layer.a)?;
    Ok(BackwardResult {
        grad_a,
        grad_b,
        grad_input: base.add(&through_branch)?,
    })
}

/// Training-mode forward with a `{0, 1/keep}` mask on the bottleneck:
/// `x W^T + scaling * ((x A^T) .* V) B^T`. Evaluation applies no mask —
/// the mask has unit mean, so no rescale is needed.
pub fn dropout_forward(layer: &LoraLayer, x: &Matrix, mask: &Matrix) -> Result<Matrix> {
    check_mask(layer, x, mask)?;
    let base = x.matmul(&layer.w.transpose())?;
    let bottleneck = x.matmul(&layer.a.transpose())?.hadamard(mask)?;
    base.add(&bottleneck.matmul(&layer.b.transpose())?.scale(layer.scaling()))
}

fn masked_param_grads(
    layer: &LoraLayer,
    x: &Matrix,
    mask: &Matrix,
    g: &Matrix,
) -> Result<(Matrix, Matrix, Matrix)> {
    let s = layer.scaling();
    // dL/d(bottleneck) = scaling * (g b) .* V, shape batch x rank
    let dh = g.matmul(&layer.b)?.scale(s).hadamard(mask)?;
    let grad_a = dh.transpose().matmul(x)?;
    let masked_bottleneck = x.matmul(&layer.a.transpose())?.hadamard(mask)?;
    let grad_b = g.transpose().matmul(&masked_bottleneck)?.scale(s);
    Ok((grad_a, grad_b, dh))
}

/// Exact gradient of the masked forward. A zeroed bottleneck column kills
/// the matching row of `grad_a` and column of `grad_b`.
pub fn dropout_backward(
    layer: &LoraLayer,
    x: &Matrix,
    mask: &Matrix,
    upstream: &Matrix,
) -> Result<BackwardResult> {
    check_backward_shapes(layer, x, upstream)?;
    check_mask(layer, x, mask)?;
    let (grad_a, grad_b, dh) = masked_param_grads(layer, x, mask, upstream)?;
    let grad_input = upstream.matmul(&layer.w)?.add(&dh.matmul(&layer.a)?)?;
    Ok(BackwardResult {
        grad_a,
        grad_b,
        grad_input,
    })
}

/// Dropout mask first, then the ALLoRA row scaling on the resulting
/// parameter gradients; the input gradient keeps the raw masked path.
pub fn allora_dropout_backward(
    layer: &LoraLayer,
    x: &Matrix,
    mask: &Matrix,
    upstream: &Matrix,
    eta: f64,
) -> Result<BackwardResult> {
    check_backward_shapes(layer, x, upstream)?;
    check_mask(layer, x, mask)?;
    let factors = allora_factors(&layer.ba_row_norms(), eta)?;
    let scaled = upstream.scale_columns(&factors)?;
    let (grad_a, grad_b, _) = masked_param_grads(layer, x, mask, &scaled)?;
    let (_, _, dh_raw) = masked_param_grads(layer, x, mask, upstream)?;
    let grad_input = upstream.matmul(&layer.w)?.add(&dh_raw.matmul(&layer.a)?)?;
    Ok(BackwardResult {
        grad_a,
        grad_b,
        grad_input,
    })
}

/// Folds a trained adapter into its base weight. Refused for ASF: the
/// output factor depends on the input, so no single weight matrix
/// reproduces the adapted layer.
pub fn merge_adapted(layer: &LoraLayer, kind: AdaptorKind) -> Result<Matrix> {
    if matches!(kind, AdaptorKind::Asf { .. }) {
        return Err(Error::invalid(
            "an ASF-configured layer cannot be merged: the output scaling is input-dependent",
        ));
    }
    Ok(layer.merge())
}
