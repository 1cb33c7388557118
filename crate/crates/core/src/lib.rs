//! Truncated-power Kolmogorov–Arnold network layers.
//!
//! Each TruKAN edge function is a truncated-power spline plus a global
//! polynomial, `Σ_j c_j (x - t_j)_+^k + Σ_r a_r x^r`, with knots either
//! fixed on an equally spaced grid or learnable under an order-preserving
//! reparameterization, and either shared across outputs or per output.
//!
//! The crate also carries the reference comparators (B-spline KAN with a
//! SiLU base, SineKAN, dense MLP), a small reverse-mode autodiff core, an
//! AdamW + LookAhead training stack with a warmup/cosine schedule, magnitude
//! pruning, activation-curve export and an efficiency benchmark harness.
//!
//! Module map:
//! - [`tensor`]: 2-D tensors, the tape, gradient checking
//! - [`basis`]: truncated powers, B-splines, polynomials, SiLU, sine, knots
//! - [`layers`]: TruKAN/KAN/SineKAN/dense/norm layers, networks, checkpoints
//! - [`optim`]: parameter groups, AdamW, LookAhead, LR schedule
//! - [`data`]: datasets, generators, CSV, losses, metrics, training loop
//! - [`analysis`]: pruning, curves, FLOPs, benchmarks, gradient suite

pub mod analysis;
pub mod basis;
pub mod data;
pub mod error;
pub mod layers;
pub mod optim;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Tape, Tensor};
