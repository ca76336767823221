use alloc::boxed::Box;
use alloc::vec::Vec;

use super::{server_seed, Mode, RoleConfig, RoleError};
use crate::model::{ActivationBatch, ServerModel};
use crate::optim::{perturb, sgd_step, spsa_scalar, zo_update, ZoGradientRecord};
use crate::params::ParamVector;
use crate::protocol::{Channel, Message, Phase, Transport, TransportError};
use crate::tensor::Matrix;

/// Called after every server update with the number of completed updates and
/// the new parameters, before the reply is sent.
pub type ServerObserver = Box<dyn FnMut(u64, &[f64]) + Send>;

/// ZO-ZO bookkeeping between the two halves of a perturbation pair.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Pair {
    Idle,
    Plus { seed: u64, loss: f64 },
}

/// The label-free endpoint owning the upper layers.
pub struct ServerEndpoint<S> {
    model: S,
    params: ParamVector,
    config: RoleConfig,
    updates: u64,
    pending: Vec<ZoGradientRecord>,
    pair: Pair,
    observer: Option<ServerObserver>,
}

impl<S: core::fmt::Debug> core::fmt::Debug for ServerEndpoint<S> {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("ServerEndpoint")
            .field("model", &self.model)
            .field("params", &self.params)
            .field("config", &self.config)
            .field("updates", &self.updates)
            .field("pending", &self.pending)
            .field("pair", &self.pair)
            .field("observer", &self.observer.is_some())
            .finish()
    }
}

impl<S: ServerModel> ServerEndpoint<S> {
    pub fn new(model: S, params: ParamVector, config: RoleConfig) -> Result<Self, RoleError> {
        config.validate()?;
        crate::model::check_dim("server parameters", model.param_dim(), params.dim())?;
        Ok(Self {
            model,
            params,
            config,
            updates: 0,
            pending: Vec::new(),
            pair: Pair::Idle,
            observer: None,
        })
    }

    pub fn with_observer(mut self, observer: ServerObserver) -> Self {
        self.observer = Some(observer);
        self
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    /// Completed compute_grad updates.
    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn config(&self) -> &RoleConfig {
        &self.config
    }

    pub fn model(&self) -> &S {
        &self.model
    }

    pub fn into_params(self) -> ParamVector {
        self.params
    }

    /// Process one client message and produce the reply.
    pub fn handle(&mut self, msg: Message) -> Result<Message, RoleError> {
        let (phase, activations, labels) = match msg {
            Message::Forward {
                phase,
                activations,
                labels,
            } => (phase, activations, labels),
            other => {
                return Err(RoleError::Unexpected {
                    expected: "forward",
                    found: other.kind(),
                })
            }
        };
        match (phase, self.config.mode) {
            (Phase::Inference, Mode::ZoZo) => self.zo_inference(&activations, &labels),
            (Phase::Inference, _) => {
                let value = self.model.loss(&self.params, &activations.values, &labels)?;
                Ok(Message::LossReply { value })
            }
            (Phase::ComputeGrad, Mode::ZoZo) => {
                if self.pair != Pair::Idle {
                    return Err(RoleError::Unexpected {
                        expected: "forward(inference)",
                        found: "forward(compute_grad)",
                    });
                }
                for r in &self.pending {
                    zo_update(&mut self.params, r, self.config.lr_server)?;
                }
                self.pending.clear();
                self.finish_update();
                Ok(Message::Ack)
            }
            (Phase::ComputeGrad, mode) => {
                let g = self.model.backward(&self.params, &activations.values, &labels)?;
                sgd_step(&mut self.params, &g.param_grad, self.config.lr_server)?;
                self.finish_update();
                Ok(if mode == Mode::FoFo {
                    Message::GradReply {
                        activation_grad: g.activation_grad,
                    }
                } else {
                    Message::Ack
                })
            }
        }
    }

    fn finish_update(&mut self) {
        self.updates += 1;
        if let Some(obs) = &mut self.observer {
            obs(self.updates, &self.params);
        }
    }

    /// Both halves of a ZO-ZO pair. The parameters stay perturbed by `+eps`
    /// between the two messages and are restored after the second.
    fn zo_inference(&mut self, h: &ActivationBatch, y: &Matrix) -> Result<Message, RoleError> {
        let eps = self.config.eps;
        match self.pair {
            Pair::Idle => {
                let q = self.pending.len() as u32;
                if q >= self.config.q {
                    return Err(RoleError::Unexpected {
                        expected: "forward(compute_grad)",
                        found: "forward(inference)",
                    });
                }
                let seed = server_seed(self.config.master_seed, self.updates, q);
                perturb(&mut self.params, eps, seed)?;
                match self.model.loss(&self.params, &h.values, y) {
                    Ok(loss) => {
                        self.pair = Pair::Plus { seed, loss };
                        Ok(Message::LossReply { value: loss })
                    }
                    Err(e) => {
                        perturb(&mut self.params, -eps, seed)?;
                        Err(e.into())
                    }
                }
            }
            Pair::Plus { seed, loss: plus } => {
                self.pair = Pair::Idle;
                perturb(&mut self.params, -2.0 * eps, seed)?;
                let minus = self.model.loss(&self.params, &h.values, y);
                perturb(&mut self.params, eps, seed)?;
                let minus = minus?;
                let g_hat = spsa_scalar(plus, minus, eps, self.config.q)?;
                self.pending.push(ZoGradientRecord { g_hat, seed });
                Ok(Message::LossReply { value: minus })
            }
        }
    }
}

/// Serve until the client closes the connection.
///
/// Returns `Ok` on a clean close between frames; any other failure ends the
/// loop with that error.
pub fn run_server_loop<S: ServerModel, T: Transport>(
    server: &mut ServerEndpoint<S>,
    ch: &mut Channel<T>,
) -> Result<(), RoleError> {
    loop {
        let msg = match ch.recv() {
            Ok(m) => m,
            Err(TransportError::Closed) => return Ok(()),
            Err(e) => return Err(e.into()),
        };
        let reply = server.handle(msg)?;
        ch.send(&reply)?;
    }
}
