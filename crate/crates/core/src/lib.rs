//! Single-phase slightly compressible flow in 3D porous media: an implicit
//! finite-difference simulator with Peaceman wells, Karhunen-Loève random
//! permeability, Monte Carlo ensembles, particle-swarm history matching and
//! the physics-residual terms used to train surrogate models.

// `!(x > 0.0)` is used on purpose: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bundle;
pub mod config;
pub mod error;
pub mod export;
pub mod forward;
pub mod grid;
pub mod metrics;
pub mod pso;
pub mod randfield;
pub mod residual;
pub mod simulator;
pub mod units;
pub mod uq;
pub mod wells;

pub use error::{Error, Result};
