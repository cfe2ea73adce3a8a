//! Unlearning-to-align experiments on an exactly differentiable toy policy.
//!
//! The crate implements weighted machine unlearning as a bi-level program: an
//! inner problem unlearns a weighted set of negative sequences from a bigram
//! softmax policy, and an outer problem tunes the per-sample weights on the
//! probability simplex so the policy's expected reward under a learned
//! Bradley-Terry model is maximized, with a √-sparsity term keeping the
//! unlearning set small. Because the policy is a dense logit table, every
//! quantity involved — losses, gradients, Hessian-vector products, the
//! implicit outer gradient — has a closed form that the test suite checks
//! against independent oracles.
//!
//! Start with the runnable examples (`cargo run --example u2a_run`) or the
//! `u2a` binary, which chains data generation, training, unlearning,
//! analysis, and evaluation into a reproducible pipeline.

pub mod analysis;
pub mod artifacts;
pub mod bilevel;
pub mod cli;
pub mod config;
pub mod error;
pub mod forget;
mod math;
pub mod metrics;
pub mod policy;
pub mod reward;
pub mod selector;
pub mod world;

pub use error::{Error, Result};
