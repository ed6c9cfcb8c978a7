//! The low-rank adapter layer: a frozen base weight `W` plus a trainable
//! pair `(A, B)` applied as `x W^T + (alpha/rank) * x A^T B^T`.
//!
//! `B` starts at exactly zero so the adapted layer initially computes the
//! frozen mapping; `A` starts with seeded uniform entries. `B A` has one row
//! per output unit, which is the convention every adaptor rule in
//! [`crate::adapters`] builds on.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Scaling factors `alpha` below this floor are rejected as degenerate:
/// they would make the adapter branch numerically indistinguishable from
/// zero while pretending to train.
pub const MIN_ALPHA: f64 = 1e-12;

/// Frozen weight plus trainable low-rank pair.
#[derive(Debug, Clone)]
pub struct LoraLayer {
    /// Frozen base weight, `n_out x n_in`.
    pub w: Matrix,
    /// Input-side factor, `rank x n_in`; random at init.
    pub a: Matrix,
    /// Output-side factor, `n_out x rank`; zero at init.
    pub b: Matrix,
    pub rank: usize,
    pub alpha: f64,
    /// Keep probability for bottleneck dropout; 1.0 means no dropout.
    pub keep_prob: f64,
}

impl LoraLayer {
    /// Attaches a fresh adapter to an externally supplied frozen weight.
    /// `a` is drawn i.i.d. uniform on `[-1/sqrt(n_in), 1/sqrt(n_in)]` from
    /// `seed`; `b` is exactly zero.
    pub fn init(w: Matrix, rank: usize, alpha: f64, keep_prob: f64, seed: u64) -> Result<Self> {
        let (n_out, n_in) = w.shape();
        if n_out == 0 || n_in == 0 {
            return Err(Error::invalid("layer dimensions must be positive"));
        }
        if rank == 0 || rank > n_out.min(n_in) {
            return Err(Error::invalid(format!(
                "rank {rank} outside 1..=min({n_out}, {n_in})"
            )));
        }
        validate_alpha(alpha)?;
        validate_keep(keep_prob)?;
        let bound = 1.0 / (n_in as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = Matrix::from_fn(rank, n_in, |_, _| rng.random_range(-bound..=bound));
        let b = Matrix::zeros(n_out, rank);
        Ok(LoraLayer {
            w,
            a,
            b,
            rank,
            alpha,
            keep_prob,
        })
    }

    /// Rebuilds a layer from explicit parts (deserialization, tests).
    pub fn from_parts(w: Matrix, a: Matrix, b: Matrix, alpha: f64, keep_prob: f64) -> Result<Self> {
        let (n_out, n_in) = w.shape();
        let rank = a.rows();
        if a.cols() != n_in || b.rows() != n_out || b.cols() != rank {
            return Err(Error::DimMismatch {
                op: "lora_from_parts",
                lhs: a.shape(),
                rhs: b.shape(),
            });
        }
        if rank == 0 || rank > n_out.min(n_in) {
            return Err(Error::invalid(format!(
                "rank {rank} outside 1..=min({n_out}, {n_in})"
            )));
        }
        validate_alpha(alpha)?;
        validate_keep(keep_prob)?;
        Ok(LoraLayer {
            w,
            a,
            b,
            rank,
            alpha,
            keep_prob,
        })
    }

    pub fn n_out(&self) -> usize {
        self.w.rows()
    }

    pub fn n_in(&self) -> usize {
        self.w.cols()
    }

    /// The scaling factor `alpha / rank` multiplying the adapter branch.
    pub fn scaling(&self) -> f64 {
        self.alpha / self.rank as f64
    }

    /// Adapter branch alone: `scaling * x A^T B^T`, shape `batch x n_out`.
    pub fn lora_branch(&self, x: &Matrix) -> Result<Matrix> {
        let bottleneck = x.matmul(&self.a.transpose())?;
        Ok(bottleneck.matmul(&self.b.transpose())?.scale(self.scaling()))
    }

    /// Full forward pass `x W^T + scaling * x A^T B^T`.
    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        let base = x.matmul(&self.w.transpose())?;
        base.add(&self.lora_branch(x)?)
    }

    /// Folds the adapter into the base weight: `W + scaling * B A`.
    pub fn merge(&self) -> Matrix {
        let ba = self.ba();
        self.w
            .add(&ba.scale(self.scaling()))
            .expect("w and ba share the layer shape")
    }

    /// The product `B A`, one row per output unit.
    pub fn ba(&self) -> Matrix {
        self.b.matmul(&self.a).expect("b and a shapes are validated")
    }

    /// Euclidean norms of the rows of `B A`.
    pub fn ba_row_norms(&self) -> Vec<f64> {
        self.ba().row_norms()
    }
}

fn validate_alpha(alpha: f64) -> Result<()> {
    if !alpha.is_finite() || alpha < MIN_ALPHA {
        return Err(Error::invalid(format!(
            "alpha must be a finite positive real >= {MIN_ALPHA}, got {alpha}"
        )));
    }
    Ok(())
}

fn validate_keep(keep: f64) -> Result<()> {
    if !(keep > 0.0 && keep <= 1.0) {
        return Err(Error::invalid(format!(
            "keep probability must lie in (0, 1], got {keep}"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layer(n_out: usize, n_in: usize, rank: usize, seed: u64) -> LoraLayer {
        let w = Matrix::random_uniform(n_out, n_in, -1.0, 1.0, seed.wrapping_add(1000));
        LoraLayer::init(w, rank, rank as f64, 1.0, seed).unwrap()
    }

    #[test]
    fn zero_init_forward_equals_base_mapping() {
        let w = Matrix::random_uniform(4, 6, -1.0, 1.0, 2);
        let layer = LoraLayer::init(w.clone(), 2, 2.0, 1.0, 3).unwrap();
        let x = Matrix::random_uniform(5, 6, -1.0, 1.0, 4);
        let out = layer.forward(&x).unwrap();
        let base = x.matmul(&w.transpose()).unwrap();
        assert_eq!(out, base, "B = 0 must leave the base mapping untouched");
        assert!(layer.ba_row_norms().iter().all(|&n| n == 0.0));
    }

    #[test]
    fn same_seed_gives_bit_identical_a() {
        let w = Matrix::zeros(3, 5);
        let l1 = LoraLayer::init(w.clone(), 2, 2.0, 1.0, 42).unwrap();
        let l2 = LoraLayer::init(w, 2, 2.0, 1.0, 42).unwrap();
        assert_eq!(l1.a, l2.a);
    }

    #[test]
    fn init_sampler_statistics() {
        let n_in = 100;
        let w = Matrix::zeros(100, n_in);
        let l = LoraLayer::init(w, 100, 100.0, 1.0, 7).unwrap();
        let bound = 1.0 / (n_in as f64).sqrt();
        let entries = l.a.data();
        assert_eq!(entries.len(), 10_000);
        assert!(entries.iter().all(|v| v.abs() <= bound));
        let mean: f64 = entries.iter().sum::<f64>() / entries.len() as f64;
        // std of the mean of 10^4 uniform samples on [-bound, bound]
        let sigma = bound / 3f64.sqrt() / (entries.len() as f64).sqrt();
        assert!(mean.abs() <= 3.0 * sigma, "mean {mean} vs 3 sigma {}", 3.0 * sigma);
    }

    #[test]
    fn init_rejects_bad_rank_and_alpha() {
        let w = Matrix::zeros(3, 5);
        assert!(LoraLayer::init(w.clone(), 0, 1.0, 1.0, 0).is_err());
        assert!(LoraLayer::init(w.clone(), 4, 1.0, 1.0, 0).is_err());
        assert!(LoraLayer::init(w.clone(), 2, 0.0, 1.0, 0).is_err());
        assert!(LoraLayer::init(w.clone(), 2, -1.0, 1.0, 0).is_err());
        assert!(LoraLayer::init(w.clone(), 2, 1e-300, 1.0, 0).is_err());
        assert!(LoraLayer::init(w, 2, 1.0, 0.0, 0).is_err());
    }

    #[test]
    fn scalar_layer_exact_arithmetic() {
        // w = 2, b*a = 3, scaling 1, x = 5 -> 5*2 + 5*3 = 25
        let w = Matrix::from_rows(&[vec![2.0]]).unwrap();
        let a = Matrix::from_rows(&[vec![1.5]]).unwrap();
        let b = Matrix::from_rows(&[vec![2.0]]).unwrap();
        let layer = LoraLayer::from_parts(w, a, b, 1.0, 1.0).unwrap();
        let x = Matrix::from_rows(&[vec![5.0]]).unwrap();
        assert_eq!(layer.forward(&x).unwrap().get(0, 0), 25.0);
    }

    #[test]
    fn merged_forward_matches_unmerged() {
        let mut layer = layer(4, 6, 2, 9);
        // give B some mass so the adapter actually contributes
        layer.b = Matrix::random_uniform(4, 2, -0.5, 0.5, 10);
        let merged = layer.merge();
        for trial in 0..100 {
            let x = Matrix::random_uniform(3, 6, -1.0, 1.0, 100 + trial);
            let direct = layer.forward(&x).unwrap();
            let via_merge = x.matmul(&merged.transpose()).unwrap();
            let diff = direct.sub(&via_merge).unwrap().frobenius_norm();
            assert!(
                diff <= 1e-12 * (1.0 + x.frobenius_norm()),
                "trial {trial}: diff {diff}"
            );
        }
    }

    #[test]
    fn merge_with_zero_b_returns_base_weight() {
        let w = Matrix::random_uniform(3, 4, -1.0, 1.0, 17);
        let layer = LoraLayer::init(w.clone(), 2, 2.0, 1.0, 18).unwrap();
        assert_eq!(layer.merge(), w);
    }

    #[test]
    fn alpha_equal_rank_gives_unit_scaling() {
        let l = layer(4, 6, 3, 20);
        assert_eq!(l.scaling(), 1.0);
    }
}
