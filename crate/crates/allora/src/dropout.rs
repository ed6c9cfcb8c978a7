//! Closed-form expectations and exact gradients of dropout-regularized
//! least-squares losses, in the linear analysis layout: inputs `X (N x D)`,
//! base weight `W (D x C)`, targets `Y (N x C)`, adapter factors
//! `A (D x r)` and `B (r x C)`, predictions `X W + X A B`.
//!
//! Dropout masks have entries in `{0, 1/keep}` with `P(1/keep) = keep`, so
//! the mask has unit mean and taking the expectation of the stochastic loss
//! splits it into the dropout-free terms (`blue`) plus a nonnegative
//! dropout-induced regularizer (`orange`) with coefficient `1/keep - 1`.
//!
//! All gradients here are the exact derivatives of the corresponding scalar
//! losses — including the overall factor 2 from differentiating squared
//! norms — so central finite differences reproduce them to first order.

use crate::error::{Error, Result};
use crate::linalg::{solve, Matrix};

/// Split of an expected dropout loss into its dropout-free and
/// dropout-induced parts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpectedLossDecomposition {
    /// Loss terms that survive when dropout is disabled.
    pub blue: f64,
    /// The dropout-induced regularizer; zero when `keep = 1`, else >= 0.
    pub orange: f64,
    pub total: f64,
}

fn validate_keep(keep: f64) -> Result<()> {
    if !(keep > 0.0 && keep <= 1.0) {
        return Err(Error::invalid(format!(
            "keep probability must lie in (0, 1], got {keep}"
        )));
    }
    Ok(())
}

fn check_ols_shapes(x: &Matrix, w: &Matrix, y: &Matrix) -> Result<()> {
    if x.cols() != w.rows() {
        return Err(Error::DimMismatch {
            op: "expected_ols_dropout_loss",
            lhs: x.shape(),
            rhs: w.shape(),
        });
    }
    if x.rows() != y.rows() || w.cols() != y.cols() {
        return Err(Error::DimMismatch {
            op: "expected_ols_dropout_loss",
            lhs: (x.rows(), w.cols()),
            rhs: y.shape(),
        });
    }
    Ok(())
}

fn check_lora_shapes(x: &Matrix, w: &Matrix, y: &Matrix, a: &Matrix, b: &Matrix) -> Result<()> {
    check_ols_shapes(x, w, y)?;
    if a.rows() != x.cols() || b.cols() != y.cols() || a.cols() != b.rows() {
        return Err(Error::DimMismatch {
            op: "expected_lora_loss",
            lhs: a.shape(),
            rhs: b.shape(),
        });
    }
    Ok(())
}

/// Expectation of `|Y - (X W) .* V|_F^2` over prediction-level masks
/// `V in {0, 1/keep}^(N x C)`:
/// `blue = |Y - X W|_F^2`, `orange = (1/keep - 1) * |X W|_F^2`.
pub fn expected_ols_dropout_loss(
    x: &Matrix,
    w: &Matrix,
    y: &Matrix,
    keep: f64,
) -> Result<ExpectedLossDecomposition> {
    validate_keep(keep)?;
    check_ols_shapes(x, w, y)?;
    let pred = x.matmul(w)?;
    let blue = y.sub(&pred)?.frobenius_norm_sq();
    let orange = (1.0 / keep - 1.0) * pred.frobenius_norm_sq();
    Ok(ExpectedLossDecomposition {
        blue,
        orange,
        total: blue + orange,
    })
}

/// Exact minimizer of the expected prediction-dropout loss:
/// `keep * (X^T X)^(-1) X^T Y`. On whitened inputs (`X^T X = I`) this
/// coincides with ridge regression at `mu = (1 - keep) / keep`.
pub fn ols_dropout_minimizer(x: &Matrix, y: &Matrix, keep: f64) -> Result<Matrix> {
    validate_keep(keep)?;
    if x.rows() != y.rows() {
        return Err(Error::DimMismatch {
            op: "ols_dropout_minimizer",
            lhs: x.shape(),
            rhs: y.shape(),
        });
    }
    let xt = x.transpose();
    let gram = xt.matmul(x)?;
    let rhs = xt.matmul(y)?;
    Ok(solve(&gram, &rhs)?.scale(keep))
}

/// Expectation of `|Y - X W - ((X A) .* V) B|_F^2` over bottleneck masks
/// `V in {0, 1/keep}^(N x r)`:
/// `blue = |Y - X W - X A B|_F^2`,
/// `orange = (1/keep - 1) * sum_j |(X A)_col_j|^2 * |B_row_j|^2`.
pub fn expected_lora_loss(
    x: &Matrix,
    w: &Matrix,
    y: &Matrix,
    a: &Matrix,
    b: &Matrix,
    keep: f64,
) -> Result<ExpectedLossDecomposition> {
    validate_keep(keep)?;
    check_lora_shapes(x, w, y, a, b)?;
    let resid = y.sub(&x.matmul(w)?)?;
    let xa = x.matmul(a)?;
    let blue = resid.sub(&xa.matmul(b)?)?.frobenius_norm_sq();
    let xa_cols = xa.col_norms_sq();
    let b_rows: Vec<f64> = b.row_norms().iter().map(|n| n * n).collect();
    let coupling: f64 = xa_cols.iter().zip(&b_rows).map(|(&c, &r)| c * r).sum();
    let orange = (1.0 / keep - 1.0) * coupling;
    Ok(ExpectedLossDecomposition {
        blue,
        orange,
        total: blue + orange,
    })
}

/// Exact gradients of [`expected_lora_loss`]`.total` with respect to `A`
/// and `B`:
///
/// `grad_A = 2 [ -X^T R B^T + X^T X A (c diag(|B_row_j|^2) + B B^T) ]`
/// `grad_B = 2 [ -A^T X^T R + (A^T X^T X A + c diag(|(XA)_col_j|^2)) B ]`
///
/// with `R = Y - X W` and `c = 1/keep - 1`. At `B = 0` the gradient of `A`
/// vanishes identically while the gradient of `B` is `-2 A^T X^T R`.
pub fn grad_expected_lora(
    x: &Matrix,
    w: &Matrix,
    y: &Matrix,
    a: &Matrix,
    b: &Matrix,
    keep: f64,
) -> Result<(Matrix, Matrix)> {
    validate_keep(keep)?;
    check_lora_shapes(x, w, y, a, b)?;
    let c = 1.0 / keep - 1.0;
    let resid = y.sub(&x.matmul(w)?)?;
    let xt = x.transpose();
    let xa = x.matmul(a)?;
    let xt_resid = xt.matmul(&resid)?;

    let b_row_sq: Vec<f64> = b.row_norms().iter().map(|n| n * n).collect();
    let xa_col_sq = xa.col_norms_sq();

    // grad_A: -X^T R B^T + X^T X A (c diag + B B^T)
    let xtxa = xt.matmul(&xa)?;
    let bbt = b.matmul(&b.transpose())?;
    let mut mixer = bbt;
    for j in 0..mixer.rows() {
        mixer.set(j, j, mixer.get(j, j) + c * b_row_sq[j]);
    }
    let grad_a = xtxa
        .matmul(&mixer)?
        .sub(&xt_resid.matmul(&b.transpose())?)?
        .scale(2.0);

    // grad_B: -A^T X^T R + (A^T X^T X A + c diag) B
    let at_xt_resid = a.transpose().matmul(&xt_resid)?;
    let mut gram_xa = xa.transpose().matmul(&xa)?;
    for j in 0..gram_xa.rows() {
        gram_xa.set(j, j, gram_xa.get(j, j) + c * xa_col_sq[j]);
    }
    let grad_b = gram_xa.matmul(b)?.sub(&at_xt_resid)?.scale(2.0);

    Ok((grad_a, grad_b))
}

/// Gradients of the orange (dropout-induced) term alone, together with the
/// per-direction multipliers that weight them.
#[derive(Debug, Clone)]
pub struct RegularizerGrads {
    pub grad_a: Matrix,
    pub grad_b: Matrix,
    /// `|B_row_j|^2` per bottleneck direction: the weights damping `A`.
    pub a_multipliers: Vec<f64>,
    /// `|(X A)_col_j|^2` per bottleneck direction: the weights damping `B`.
    pub b_multipliers: Vec<f64>,
}

/// Exact gradient of the orange regularizer
/// `(1/keep - 1) * sum_j |X A_col_j B_row_j|_F^2`. Legal at `keep = 1`,
/// where both gradients are exactly zero; the multipliers are reported
/// regardless so the asymmetry at `B = 0` stays visible.
pub fn dropout_regularizer_grads(
    x: &Matrix,
    a: &Matrix,
    b: &Matrix,
    keep: f64,
) -> Result<RegularizerGrads> {
    validate_keep(keep)?;
    if a.rows() != x.cols() || a.cols() != b.rows() {
        return Err(Error::DimMismatch {
            op: "dropout_regularizer_grads",
            lhs: a.shape(),
            rhs: b.shape(),
        });
    }
    let c = 1.0 / keep - 1.0;
    let xa = x.matmul(a)?;
    let b_row_sq: Vec<f64> = b.row_norms().iter().map(|n| n * n).collect();
    let xa_col_sq = xa.col_norms_sq();

    let xtxa = x.transpose().matmul(&xa)?;
    let grad_a = xtxa.scale_columns(&b_row_sq)?.scale(2.0 * c);

    let mut grad_b = Matrix::from_fn(b.rows(), b.cols(), |j, k| xa_col_sq[j] * b.get(j, k));
    grad_b = grad_b.scale(2.0 * c);

    Ok(RegularizerGrads {
        grad_a,
        grad_b,
        a_multipliers: b_row_sq,
        b_multipliers: xa_col_sq,
    })
}
