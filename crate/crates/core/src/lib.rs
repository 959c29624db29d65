//! Laplace Matching: closed-form maps between exponential-family
//! parameters and Gaussians in transformed bases, with GP pipelines and
//! distance diagnostics built on top.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bridges;
pub mod cli;
pub mod diagnostics;
pub mod distributions;
pub mod error;
pub mod gp;
pub mod matrixops;
pub mod pipeline;
pub mod transforms;

pub use bridges::{lm_forward, lm_inverse, standard_laplace, BridgeSpec, Covariance, GaussianApprox, LatentDomain};
pub use distributions::{EFParams, Family};
pub use error::{Error, Result};
pub use transforms::{push_forward, Basis, BasisTransform, TransformedDensity};
