//! Hybrid-order split learning.
//!
//! A network is cut at layer `k`: the client owns the first `k` layers and
//! trains them with a two-point zeroth-order estimator (forward passes only,
//! perturbations regenerated from 64-bit seeds), while the server owns the
//! rest and trains with ordinary backpropagation. This crate holds everything
//! that does not need an operating system:
//!
//! * [`rng`]: the counter-based PRNG and Box–Muller normal stream that make
//!   seed-regenerated perturbations bit-reproducible.
//! * [`model`]: dense split networks with analytic reverse-mode gradients,
//!   a linear-in-parameters split quadratic, and finite-difference oracles.
//! * [`optim`]: `perturb`, the SPSA scalar, `zo_update`, a dense estimator
//!   oracle and plain SGD.
//! * [`protocol`]: the `HOSL` wire frame, the [`protocol::Transport`]
//!   contract and a recording [`protocol::Channel`].
//! * [`roles`]: client and server state machines for ZO-FO, ZO-ZO and FO-FO,
//!   a single-threaded loopback transport and the iteration driver.
//! * [`accounting`]: memory formulas, a byte ledger and the convergence bound.
//!
//! Socket and thread based transports, datasets and the CLI live in the
//! `hosl` crate.

#![no_std]
#![warn(missing_debug_implementations)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod accounting;
pub mod model;
pub mod optim;
pub mod params;
pub mod protocol;
pub mod rng;
pub mod roles;
pub mod tensor;

pub use params::ParamVector;
pub use tensor::Matrix;
