//! Split models.
//!
//! A split model is a pair of halves behind two traits: [`ClientModel`] maps
//! inputs to cut-layer activations, [`ServerModel`] maps activations and
//! labels to a batch-mean loss and supplies the two first-order gradients
//! (`dL/dtheta_s` and `g_h = dL/dh`). [`ClientModel::backward`] completes the
//! chain rule `(dh/dtheta_c)^T g_h`.
//!
//! Two families implement them: dense feedforward stacks ([`SplitModel`]) and
//! the linear-in-parameters split quadratic ([`quadratic`]).

mod dense;
mod loss;
pub mod oracle;
pub mod quadratic;

use alloc::string::String;
use alloc::vec::Vec;

use crate::tensor::Matrix;

pub use dense::{build_split_model, DenseClient, DenseServer, SplitArch, SplitModel, Stack};
pub use loss::LossKind;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("shape mismatch in {what}: expected {expected}, found {found}")]
    Shape {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}

pub(crate) fn check_dim(what: &'static str, expected: usize, found: usize) -> Result<(), ModelError> {
    if expected == found {
        Ok(())
    } else {
        Err(ModelError::Shape {
            what,
            expected,
            found,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Tanh,
    Relu,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Tanh => libm::tanh(z),
            Activation::Relu => {
                if z > 0.0 {
                    z
                } else {
                    0.0
                }
            }
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    /// The relu subgradient at 0 is 0.
    #[inline]
    pub fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "identity" | "id" | "linear" => Some(Activation::Identity),
            "tanh" => Some(Activation::Tanh),
            "relu" => Some(Activation::Relu),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub input_dim: usize,
    pub output_dim: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(input_dim: usize, output_dim: usize, activation: Activation) -> Self {
        Self {
            input_dim,
            output_dim,
            activation,
        }
    }

    /// Weights plus biases.
    pub fn param_count(&self) -> usize {
        self.input_dim * self.output_dim + self.output_dim
    }
}

/// Inputs `B x n_in` and labels with `B` rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Minibatch {
    pub inputs: Matrix,
    pub labels: Matrix,
}

impl Minibatch {
    pub fn new(inputs: Matrix, labels: Matrix) -> Result<Self, ModelError> {
        if inputs.rows() == 0 {
            return Err(ModelError::Config("empty minibatch".into()));
        }
        check_dim("minibatch labels rows", inputs.rows(), labels.rows())?;
        if !inputs.is_finite() {
            return Err(ModelError::NonFinite("minibatch inputs"));
        }
        if !labels.is_finite() {
            return Err(ModelError::NonFinite("minibatch labels"));
        }
        Ok(Self { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.rows() == 0
    }

    pub fn select(&self, indices: &[usize]) -> Minibatch {
        Minibatch {
            inputs: self.inputs.select_rows(indices),
            labels: self.labels.select_rows(indices),
        }
    }
}

/// Cut-layer activations for one minibatch, as they travel to the server.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationBatch {
    pub batch_id: u32,
    pub values: Matrix,
}

/// Client half: inputs to cut-layer activations.
pub trait ClientModel {
    fn param_dim(&self) -> usize;

    fn forward(&self, params: &[f64], inputs: &Matrix) -> Result<Matrix, ModelError>;

    /// `(dh/dtheta_c)^T activation_grad`.
    fn backward(
        &self,
        params: &[f64],
        inputs: &Matrix,
        activation_grad: &Matrix,
    ) -> Result<Vec<f64>, ModelError>;
}

/// Gradients produced by a server backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ServerGrad {
    pub loss: f64,
    pub param_grad: Vec<f64>,
    pub activation_grad: Matrix,
}

/// Server half: activations and labels to a batch-mean loss.
pub trait ServerModel {
    fn param_dim(&self) -> usize;

    fn loss(&self, params: &[f64], activations: &Matrix, labels: &Matrix) -> Result<f64, ModelError>;

    fn backward(
        &self,
        params: &[f64],
        activations: &Matrix,
        labels: &Matrix,
    ) -> Result<ServerGrad, ModelError>;
}

impl<T: ClientModel + ?Sized> ClientModel for &T {
    fn param_dim(&self) -> usize {
        (**self).param_dim()
    }
    fn forward(&self, params: &[f64], inputs: &Matrix) -> Result<Matrix, ModelError> {
        (**self).forward(params, inputs)
    }
    fn backward(&self, params: &[f64], inputs: &Matrix, g: &Matrix) -> Result<Vec<f64>, ModelError> {
        (**self).backward(params, inputs, g)
    }
}

impl<T: ServerModel + ?Sized> ServerModel for &T {
    fn param_dim(&self) -> usize {
        (**self).param_dim()
    }
    fn loss(&self, params: &[f64], h: &Matrix, y: &Matrix) -> Result<f64, ModelError> {
        (**self).loss(params, h, y)
    }
    fn backward(&self, params: &[f64], h: &Matrix, y: &Matrix) -> Result<ServerGrad, ModelError> {
        (**self).backward(params, h, y)
    }
}

/// Loss of the composed model, evaluated the way the protocol does it.
pub fn split_loss<C: ClientModel + ?Sized, S: ServerModel + ?Sized>(
    client: &C,
    server: &S,
    client_params: &[f64],
    server_params: &[f64],
    batch: &Minibatch,
) -> Result<f64, ModelError> {
    let h = client.forward(client_params, &batch.inputs)?;
    server.loss(server_params, &h, &batch.labels)
}

/// Full first-order gradient through the split, chained as server backward
/// followed by client backward.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitGrad {
    pub loss: f64,
    pub client: Vec<f64>,
    pub server: Vec<f64>,
}

impl SplitGrad {
    pub fn norm_sq(&self) -> f64 {
        self.client.iter().chain(&self.server).map(|g| g * g).sum()
    }
}

pub fn split_grad<C: ClientModel + ?Sized, S: ServerModel + ?Sized>(
    client: &C,
    server: &S,
    client_params: &[f64],
    server_params: &[f64],
    batch: &Minibatch,
) -> Result<SplitGrad, ModelError> {
    let h = client.forward(client_params, &batch.inputs)?;
    let sg = server.backward(server_params, &h, &batch.labels)?;
    let cg = client.backward(client_params, &batch.inputs, &sg.activation_grad)?;
    Ok(SplitGrad {
        loss: sg.loss,
        client: cg,
        server: sg.param_grad,
    })
}
