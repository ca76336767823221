//! Client and server endpoints and the iteration driver.
//!
//! One ZO iteration on the client, for `q = 0..Q`:
//!
//! 1. perturb `+eps`, send `Forward(inference)`, receive `L+`;
//! 2. perturb `-2 eps`, send `Forward(inference)`, receive `L-`;
//! 3. perturb `+eps` (restore) and keep `((L+ - L-) / (2 eps Q), seed)`.
//!
//! Then `Forward(compute_grad)` with the unperturbed parameters, wait for
//! the `Ack` (the server has updated by then) and apply the `Q` stored
//! updates. FO-FO replaces all of this with one `Forward(compute_grad)` and a
//! `GradReply`.

mod client;
mod driver;
mod log;
mod loopback;
mod server;

#[cfg(test)]
mod tests;

pub use client::{ClientEndpoint, ClientState};
pub use driver::{run_iterations, Metrics, TrainError};
pub use log::{IterationRecord, TrainLog};
pub use loopback::Loopback;
pub use server::{run_server_loop, ServerEndpoint, ServerObserver};

use crate::model::ModelError;
use crate::optim::{FoConfig, OptimError, ZoConfig};
use crate::protocol::{ProtocolError, TransportError};
use crate::rng::derive_seed;

/// Which optimizer runs on each side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    /// Zeroth-order client, first-order server.
    ZoFo,
    /// Zeroth-order on both sides.
    ZoZo,
    /// Backpropagation through the cut.
    FoFo,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::FoFo, Mode::ZoFo, Mode::ZoZo];

    pub fn name(self) -> &'static str {
        match self {
            Mode::ZoFo => "zo-fo",
            Mode::ZoZo => "zo-zo",
            Mode::FoFo => "fo-fo",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "zo-fo" | "zo_fo" => Some(Mode::ZoFo),
            "zo-zo" | "zo_zo" => Some(Mode::ZoZo),
            "fo-fo" | "fo_fo" => Some(Mode::FoFo),
            _ => None,
        }
    }

    pub fn client_is_zo(self) -> bool {
        matches!(self, Mode::ZoFo | Mode::ZoZo)
    }

    pub fn server_is_zo(self) -> bool {
        self == Mode::ZoZo
    }
}

impl core::fmt::Display for Mode {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}

/// Settings both endpoints must agree on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoleConfig {
    pub mode: Mode,
    pub eps: f64,
    /// Perturbations per iteration; unused in FO-FO.
    pub q: u32,
    pub lr_client: f64,
    pub lr_server: f64,
    pub master_seed: u64,
}

impl RoleConfig {
    pub fn validate(&self) -> Result<(), RoleError> {
        if self.mode.client_is_zo() {
            self.zo().validate()?;
        } else if !(self.lr_client > 0.0 && self.lr_client.is_finite()) {
            return Err(OptimError::Config("client learning rate must be positive").into());
        }
        self.fo().validate()?;
        Ok(())
    }

    pub fn zo(&self) -> ZoConfig {
        ZoConfig {
            eps: self.eps,
            q: self.q,
            lr_client: self.lr_client,
        }
    }

    pub fn fo(&self) -> FoConfig {
        FoConfig {
            lr_server: self.lr_server,
        }
    }
}

const CLIENT_SEED_TAG: u64 = 0x636c_6965_6e74; // "client"
const SERVER_SEED_TAG: u64 = 0x7365_7276_6572; // "server"

/// Seed of the client's `q`-th direction in iteration `t`.
pub fn client_seed(master: u64, t: u64, q: u32) -> u64 {
    derive_seed(master, &[CLIENT_SEED_TAG, t, q as u64])
}

/// Seed of the server's `q`-th direction in iteration `t` (ZO-ZO only).
pub fn server_seed(master: u64, t: u64, q: u32) -> u64 {
    derive_seed(master, &[SERVER_SEED_TAG, t, q as u64])
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RoleError {
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error("expected {expected}, received {found}")]
    Unexpected {
        expected: &'static str,
        found: &'static str,
    },
}

impl From<ProtocolError> for RoleError {
    fn from(e: ProtocolError) -> Self {
        RoleError::Transport(TransportError::Protocol(e))
    }
}
