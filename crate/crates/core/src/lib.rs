//! Support vector machines on indefinite similarity matrices.
//!
//! The indefinite kernel `K0` is treated as a noisy observation of a Mercer
//! kernel. Training jointly picks support vector coefficients `alpha` and a
//! proxy kernel `K* = (K0 + (Y alpha)(Y alpha)^T / (4 rho))_+`, which has a
//! closed form, so the outer problem is a concave maximization in `alpha`
//! alone. Three outer solvers are provided (projected gradient, analytic
//! center cutting planes, and an exchange method on the semi-infinite
//! reformulation), along with SVR, one-class, Mercer-input and
//! componentwise-penalty variants and the usual spectral baselines.

pub mod bench;
pub mod error;
pub mod kernelbank;
pub mod objective;
pub mod proxy;
pub mod refqp;
pub mod solvers;
pub mod symlin;

pub use error::{Error, Result};
pub use symlin::{EigenSystem, SymmetricMatrix};
