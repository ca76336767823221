use alloc::vec::Vec;

use super::{client_seed, Mode, RoleConfig, RoleError};
use crate::model::{ActivationBatch, ClientModel, Minibatch};
use crate::optim::{perturb, sgd_step, spsa_scalar, zo_update, ZoGradientRecord};
use crate::params::ParamVector;
use crate::protocol::{Channel, Message, Phase, Transport};

#[derive(Debug, Clone, PartialEq)]
pub struct ClientState {
    pub params: ParamVector,
    /// Records of the current iteration; empty between iterations.
    pub pending: Vec<ZoGradientRecord>,
    /// Completed iterations.
    pub t: u64,
}

/// The data-owning endpoint.
#[derive(Debug)]
pub struct ClientEndpoint<C> {
    model: C,
    state: ClientState,
    config: RoleConfig,
}

/// Perturbation currently applied to the parameters, undone on abort.
struct Offset {
    seed: u64,
    delta: f64,
}

impl<C: ClientModel> ClientEndpoint<C> {
    pub fn new(model: C, params: ParamVector, config: RoleConfig) -> Result<Self, RoleError> {
        config.validate()?;
        crate::model::check_dim("client parameters", model.param_dim(), params.dim())?;
        Ok(Self {
            model,
            state: ClientState {
                params,
                pending: Vec::new(),
                t: 0,
            },
            config,
        })
    }

    pub fn params(&self) -> &ParamVector {
        &self.state.params
    }

    pub fn state(&self) -> &ClientState {
        &self.state
    }

    pub fn config(&self) -> &RoleConfig {
        &self.config
    }

    pub fn model(&self) -> &C {
        &self.model
    }

    pub fn into_state(self) -> ClientState {
        self.state
    }

    /// One iteration in the configured mode.
    pub fn run_iteration<T: Transport>(&mut self, ch: &mut Channel<T>, batch: &Minibatch) -> Result<(), RoleError> {
        match self.config.mode {
            Mode::ZoFo | Mode::ZoZo => self.run_client_iteration(ch, batch),
            Mode::FoFo => self.run_fo_fo_iteration(ch, batch),
        }
    }

    fn forward(&self, ch: &mut Channel<impl Transport>, phase: Phase, batch: &Minibatch) -> Result<(), RoleError> {
        let values = self.model.forward(&self.state.params, &batch.inputs)?;
        ch.send(&Message::Forward {
            phase,
            activations: ActivationBatch {
                batch_id: self.state.t as u32,
                values,
            },
            labels: batch.labels.clone(),
        })?;
        Ok(())
    }

    fn expect_loss(ch: &mut Channel<impl Transport>) -> Result<f64, RoleError> {
        match ch.recv()? {
            Message::LossReply { value } => Ok(value),
            other => Err(RoleError::Unexpected {
                expected: "loss_reply",
                found: other.kind(),
            }),
        }
    }

    /// Zeroth-order client iteration (ZO-FO and ZO-ZO).
    ///
    /// On any error the parameters are returned to their pre-iteration
    /// values, up to the rounding of undoing an open perturbation, and no
    /// update is applied.
    pub fn run_client_iteration<T: Transport>(
        &mut self,
        ch: &mut Channel<T>,
        batch: &Minibatch,
    ) -> Result<(), RoleError> {
        let mut offset = None;
        let result = self.zo_phases(ch, batch, &mut offset);
        if result.is_err() {
            if let Some(Offset { seed, delta }) = offset {
                // Coordinates were finite before perturbation.
                let _ = perturb(&mut self.state.params, -delta, seed);
            }
            self.state.pending.clear();
        }
        result
    }

    fn zo_phases<T: Transport>(
        &mut self,
        ch: &mut Channel<T>,
        batch: &Minibatch,
        offset: &mut Option<Offset>,
    ) -> Result<(), RoleError> {
        let zo = self.config.zo();
        let t = self.state.t;
        self.state.pending.clear();

        for q in 0..zo.q {
            let seed = client_seed(self.config.master_seed, t, q);
            perturb(&mut self.state.params, zo.eps, seed)?;
            *offset = Some(Offset { seed, delta: zo.eps });
            self.forward(ch, Phase::Inference, batch)?;
            let plus = Self::expect_loss(ch)?;

            perturb(&mut self.state.params, -2.0 * zo.eps, seed)?;
            *offset = Some(Offset { seed, delta: -zo.eps });
            self.forward(ch, Phase::Inference, batch)?;
            let minus = Self::expect_loss(ch)?;

            perturb(&mut self.state.params, zo.eps, seed)?;
            *offset = None;
            let g_hat = spsa_scalar(plus, minus, zo.eps, zo.q)?;
            self.state.pending.push(ZoGradientRecord { g_hat, seed });
        }

        self.forward(ch, Phase::ComputeGrad, batch)?;
        match ch.recv()? {
            Message::Ack => {}
            other => {
                return Err(RoleError::Unexpected {
                    expected: "ack",
                    found: other.kind(),
                })
            }
        }

        for r in &self.state.pending {
            zo_update(&mut self.state.params, r, zo.lr_client)?;
        }
        self.state.pending.clear();
        self.state.t += 1;
        Ok(())
    }

    /// Backpropagation through the cut: one Forward out, one GradReply in.
    pub fn run_fo_fo_iteration<T: Transport>(
        &mut self,
        ch: &mut Channel<T>,
        batch: &Minibatch,
    ) -> Result<(), RoleError> {
        self.forward(ch, Phase::ComputeGrad, batch)?;
        let g_h = match ch.recv()? {
            Message::GradReply { activation_grad } => activation_grad,
            other => {
                return Err(RoleError::Unexpected {
                    expected: "grad_reply",
                    found: other.kind(),
                })
            }
        };
        let grad = self.model.backward(&self.state.params, &batch.inputs, &g_h)?;
        sgd_step(&mut self.state.params, &grad, self.config.lr_client)?;
        self.state.t += 1;
        Ok(())
    }
}
