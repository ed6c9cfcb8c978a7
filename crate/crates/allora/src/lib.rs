//! Desk-scale laboratory for low-rank adapter (LoRA) finetuning dynamics.
//!
//! The crate makes the analytical side of adapter finetuning executable and
//! checkable on small, fully deterministic problems:
//!
//! - [`linalg`]: minimal dense double-precision matrices (no BLAS, no SIMD).
//! - [`lora`]: the frozen-weight-plus-low-rank-pair layer with asymmetric
//!   zero initialization of the output factor.
//! - [`dropout`]: closed-form expected losses and exact gradients under
//!   bottleneck dropout, including the blue/orange decomposition.
//! - [`montecarlo`]: stochastic mask sampling, empirical losses, and the
//!   deviation/variance studies that quantify how slowly the empirical
//!   estimate approaches its expectation.
//! - [`adapters`]: the adaptive-learning family — ALLoRA, ALLoRA+D,
//!   ALLoRA-OD, ASF — next to plain and dropout baselines, all with
//!   hand-derived backward passes.
//! - [`ripple`]: the multi-linear layered model and the worst-case
//!   exponential growth bound of a constant scaling factor.
//! - [`trainer`]: a deterministic SGD loop over small MLPs with adapters,
//!   plus the escape / norm-spread / expected-vs-stochastic-gap studies.
//! - [`data`]: blob generation, whitening, IDX and CSV loaders, layer dumps.
//! - [`report`]: tabular study results and their CSV serializations.
//! - [`verify`]: enumeration oracles, finite-difference checks, and bound
//!   checks runnable as a self-test battery.

pub mod adapters;
pub mod data;
pub mod dropout;
mod error;
pub mod linalg;
pub mod lora;
pub mod montecarlo;
pub mod report;
pub mod ripple;
pub mod trainer;
pub mod verify;

pub use error::{Error, Result};
pub use linalg::Matrix;
