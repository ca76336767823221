use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::params::ParamVector;
use crate::rng::{derive_seed, PrngStream};
use crate::tensor::Matrix;

use super::{
    check_dim, ClientModel, LayerSpec, LossKind, Minibatch, ModelError, ServerGrad, ServerModel,
    SplitGrad,
};

/// Stream domain for weight initialization.
const INIT_DOMAIN: u64 = 0x494e_4954; // "INIT"

/// A chain of dense layers. May be empty, in which case it is the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct Stack {
    layers: Vec<LayerSpec>,
}

impl Stack {
    pub fn new(layers: Vec<LayerSpec>) -> Result<Self, ModelError> {
        for (i, l) in layers.iter().enumerate() {
            if l.input_dim == 0 || l.output_dim == 0 {
                return Err(ModelError::Config(format!("layer {i} has a zero dimension")));
            }
        }
        for (i, w) in layers.windows(2).enumerate() {
            if w[0].output_dim != w[1].input_dim {
                return Err(ModelError::Config(format!(
                    "layer {} outputs {} but layer {} expects {}",
                    i,
                    w[0].output_dim,
                    i + 1,
                    w[1].input_dim
                )));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LayerSpec::param_count).sum()
    }

    pub fn input_dim(&self) -> Option<usize> {
        self.layers.first().map(|l| l.input_dim)
    }

    pub fn output_dim(&self) -> Option<usize> {
        self.layers.last().map(|l| l.output_dim)
    }

    fn check_params(&self, params: &[f64]) -> Result<(), ModelError> {
        check_dim("parameter vector", self.param_count(), params.len())
    }

    fn check_input(&self, x: &Matrix) -> Result<(), ModelError> {
        match self.input_dim() {
            Some(n) => check_dim("input width", n, x.cols()),
            None => Ok(()),
        }
    }

    /// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` for weights and biases,
    /// drawn in parameter-layout order.
    pub fn init_params(&self, rng: &mut PrngStream) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            let bound = 1.0 / libm::sqrt(l.input_dim as f64);
            for _ in 0..l.param_count() {
                out.push(rng.uniform_in(-bound, bound));
            }
        }
        out
    }

    /// `act(x W^T + b)` for one layer.
    fn layer_forward(l: &LayerSpec, w: &[f64], b: &[f64], x: &Matrix) -> (Matrix, Matrix) {
        let mut z = Matrix::zeros(x.rows(), l.output_dim);
        let mut a = Matrix::zeros(x.rows(), l.output_dim);
        for r in 0..x.rows() {
            let xr = x.row(r);
            for o in 0..l.output_dim {
                let wr = &w[o * l.input_dim..(o + 1) * l.input_dim];
                let mut s = b[o];
                for (wi, xi) in wr.iter().zip(xr) {
                    s += wi * xi;
                }
                z[(r, o)] = s;
                a[(r, o)] = l.activation.apply(s);
            }
        }
        (z, a)
    }

    fn split_layer_params<'p>(l: &LayerSpec, p: &'p [f64]) -> (&'p [f64], &'p [f64]) {
        p.split_at(l.input_dim * l.output_dim)
    }

    pub fn forward(&self, params: &[f64], x: &Matrix) -> Result<Matrix, ModelError> {
        self.check_params(params)?;
        self.check_input(x)?;
        let mut a = x.clone();
        let mut off = 0;
        for l in &self.layers {
            let (w, b) = Self::split_layer_params(l, &params[off..off + l.param_count()]);
            a = Self::layer_forward(l, w, b, &a).1;
            off += l.param_count();
        }
        Ok(a)
    }

    /// Reverse-mode pass. Returns the parameter gradient and, when requested,
    /// the gradient with respect to the stack input.
    pub fn backward(
        &self,
        params: &[f64],
        x: &Matrix,
        output_grad: &Matrix,
        want_input_grad: bool,
    ) -> Result<(Vec<f64>, Option<Matrix>), ModelError> {
        self.check_params(params)?;
        self.check_input(x)?;
        check_dim("output gradient rows", x.rows(), output_grad.rows())?;
        let out_w = self.output_dim().unwrap_or(x.cols());
        check_dim("output gradient columns", out_w, output_grad.cols())?;

        // Forward trace: (input, pre-activation, output) per layer.
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut outs = Vec::with_capacity(self.layers.len());
        let mut a = x.clone();
        let mut off = 0;
        for l in &self.layers {
            offsets.push(off);
            let (w, b) = Self::split_layer_params(l, &params[off..off + l.param_count()]);
            let (z, next) = Self::layer_forward(l, w, b, &a);
            inputs.push(a);
            pre.push(z);
            outs.push(next.clone());
            a = next;
            off += l.param_count();
        }

        let mut grad = vec![0.0; params.len()];
        let mut upstream = output_grad.clone();
        for i in (0..self.layers.len()).rev() {
            let l = &self.layers[i];
            let (z, out, input) = (&pre[i], &outs[i], &inputs[i]);
            let mut delta = upstream;
            for r in 0..delta.rows() {
                for o in 0..l.output_dim {
                    delta[(r, o)] *= l.activation.derivative(z[(r, o)], out[(r, o)]);
                }
            }
            let base = offsets[i];
            let (gw, gb) = grad[base..base + l.param_count()].split_at_mut(l.input_dim * l.output_dim);
            for r in 0..delta.rows() {
                let xr = input.row(r);
                for o in 0..l.output_dim {
                    let d = delta[(r, o)];
                    gb[o] += d;
                    let gwr = &mut gw[o * l.input_dim..(o + 1) * l.input_dim];
                    for (g, xi) in gwr.iter_mut().zip(xr) {
                        *g += d * xi;
                    }
                }
            }
            if i == 0 && !want_input_grad {
                return Ok((grad, None));
            }
            let w = &params[base..base + l.input_dim * l.output_dim];
            let mut down = Matrix::zeros(delta.rows(), l.input_dim);
            for r in 0..delta.rows() {
                for o in 0..l.output_dim {
                    let d = delta[(r, o)];
                    let wr = &w[o * l.input_dim..(o + 1) * l.input_dim];
                    for (dn, wi) in down.row_mut(r).iter_mut().zip(wr) {
                        *dn += d * wi;
                    }
                }
            }
            upstream = down;
        }
        Ok((grad, want_input_grad.then_some(upstream)))
    }
}

/// Client half of a dense split network.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseClient {
    pub stack: Stack,
}

impl ClientModel for DenseClient {
    fn param_dim(&self) -> usize {
        self.stack.param_count()
    }

    fn forward(&self, params: &[f64], inputs: &Matrix) -> Result<Matrix, ModelError> {
        self.stack.forward(params, inputs)
    }

    fn backward(&self, params: &[f64], inputs: &Matrix, g: &Matrix) -> Result<Vec<f64>, ModelError> {
        Ok(self.stack.backward(params, inputs, g, false)?.0)
    }
}

/// Server half of a dense split network, ending in a loss.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseServer {
    pub stack: Stack,
    pub loss: LossKind,
}

impl ServerModel for DenseServer {
    fn param_dim(&self) -> usize {
        self.stack.param_count()
    }

    fn loss(&self, params: &[f64], h: &Matrix, y: &Matrix) -> Result<f64, ModelError> {
        let pred = self.stack.forward(params, h)?;
        self.loss.value(&pred, y)
    }

    fn backward(&self, params: &[f64], h: &Matrix, y: &Matrix) -> Result<ServerGrad, ModelError> {
        let pred = self.stack.forward(params, h)?;
        let (loss, dpred) = self.loss.value_and_grad(&pred, y)?;
        let (param_grad, g_h) = self.stack.backward(params, h, &dpred, true)?;
        Ok(ServerGrad {
            loss,
            param_grad,
            activation_grad: g_h.expect("input gradient requested"),
        })
    }
}

/// Layer stack, cut position and loss; no parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitArch {
    layers: Vec<LayerSpec>,
    cut: usize,
    loss: LossKind,
}

impl SplitArch {
    /// `1 <= cut < layers.len()`; the first `cut` layers belong to the client.
    pub fn new(layers: Vec<LayerSpec>, cut: usize, loss: LossKind) -> Result<Self, ModelError> {
        if cut == 0 || cut >= layers.len() {
            return Err(ModelError::Config(format!(
                "cut layer {cut} outside [1, {}]",
                layers.len().saturating_sub(1)
            )));
        }
        Self::unchecked_cut(layers, cut, loss)
    }

    /// Every layer on the client and an empty (identity) server stack, so
    /// `d_s = 0`. Only meaningful for ZO-ZO, where it reduces to plain
    /// client-side zeroth-order SGD.
    pub fn client_only(layers: Vec<LayerSpec>, loss: LossKind) -> Result<Self, ModelError> {
        let n = layers.len();
        if n == 0 {
            return Err(ModelError::Config("no layers".into()));
        }
        Self::unchecked_cut(layers, n, loss)
    }

    fn unchecked_cut(layers: Vec<LayerSpec>, cut: usize, loss: LossKind) -> Result<Self, ModelError> {
        Stack::new(layers.clone())?;
        Ok(Self { layers, cut, loss })
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn cut(&self) -> usize {
        self.cut
    }

    pub fn loss_kind(&self) -> LossKind {
        self.loss
    }

    pub fn client(&self) -> DenseClient {
        DenseClient {
            stack: Stack {
                layers: self.layers[..self.cut].to_vec(),
            },
        }
    }

    pub fn server(&self) -> DenseServer {
        DenseServer {
            stack: Stack {
                layers: self.layers[self.cut..].to_vec(),
            },
            loss: self.loss,
        }
    }

    /// The unsplit network.
    pub fn monolithic(&self) -> DenseServer {
        DenseServer {
            stack: Stack {
                layers: self.layers.clone(),
            },
            loss: self.loss,
        }
    }

    pub fn client_dim(&self) -> usize {
        self.layers[..self.cut].iter().map(LayerSpec::param_count).sum()
    }

    pub fn server_dim(&self) -> usize {
        self.layers[self.cut..].iter().map(LayerSpec::param_count).sum()
    }

    pub fn total_dim(&self) -> usize {
        self.client_dim() + self.server_dim()
    }

    /// Width of the cut-layer activations.
    pub fn cut_width(&self) -> usize {
        self.layers[self.cut - 1].output_dim
    }
}

/// A split architecture together with both halves' parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitModel {
    pub arch: SplitArch,
    pub client_params: ParamVector,
    pub server_params: ParamVector,
}

/// Build the architecture and initialize all parameters from the stream of
/// `init_seed`, client layers first.
pub fn build_split_model(
    layers: Vec<LayerSpec>,
    cut: usize,
    loss: LossKind,
    init_seed: u64,
) -> Result<SplitModel, ModelError> {
    let arch = SplitArch::new(layers, cut, loss)?;
    Ok(SplitModel::init(arch, init_seed))
}

impl SplitModel {
    pub fn init(arch: SplitArch, init_seed: u64) -> Self {
        let mut rng = PrngStream::new(derive_seed(init_seed, &[INIT_DOMAIN]));
        let all = arch.monolithic().stack.init_params(&mut rng);
        let (c, s) = all.split_at(arch.client_dim());
        Self {
            client_params: ParamVector::new(c.to_vec()),
            server_params: ParamVector::new(s.to_vec()),
            arch,
        }
    }

    pub fn client_dim(&self) -> usize {
        self.client_params.dim()
    }

    pub fn server_dim(&self) -> usize {
        self.server_params.dim()
    }

    /// `[theta_c, theta_s]`.
    pub fn params(&self) -> ParamVector {
        self.client_params.concat(&self.server_params)
    }

    pub fn client_forward(&self, client_params: &[f64], inputs: &Matrix) -> Result<Matrix, ModelError> {
        self.arch.client().forward(client_params, inputs)
    }

    pub fn server_forward(&self, server_params: &[f64], h: &Matrix, y: &Matrix) -> Result<f64, ModelError> {
        self.arch.server().loss(server_params, h, y)
    }

    pub fn server_backward(
        &self,
        server_params: &[f64],
        h: &Matrix,
        y: &Matrix,
    ) -> Result<ServerGrad, ModelError> {
        self.arch.server().backward(server_params, h, y)
    }

    pub fn client_backward(
        &self,
        client_params: &[f64],
        inputs: &Matrix,
        activation_grad: &Matrix,
    ) -> Result<Vec<f64>, ModelError> {
        self.arch.client().backward(client_params, inputs, activation_grad)
    }

    fn split_theta<'t>(&self, theta: &'t [f64]) -> Result<(&'t [f64], &'t [f64]), ModelError> {
        check_dim("full parameter vector", self.arch.total_dim(), theta.len())?;
        Ok(theta.split_at(self.arch.client_dim()))
    }

    /// `server_forward(theta_s, client_forward(theta_c, x), y)` for
    /// `theta = [theta_c, theta_s]`.
    pub fn full_loss(&self, theta: &[f64], batch: &Minibatch) -> Result<f64, ModelError> {
        let (c, s) = self.split_theta(theta)?;
        let h = self.client_forward(c, &batch.inputs)?;
        self.server_forward(s, &h, &batch.labels)
    }

    /// Chained gradient: server backward, then client backward on `g_h`.
    pub fn split_grad(&self, theta: &[f64], batch: &Minibatch) -> Result<SplitGrad, ModelError> {
        let (c, s) = self.split_theta(theta)?;
        super::split_grad(&self.arch.client(), &self.arch.server(), c, s, batch)
    }

    /// Backpropagation through the unsplit network.
    pub fn monolithic_grad(&self, theta: &[f64], batch: &Minibatch) -> Result<(f64, Vec<f64>), ModelError> {
        let m = self.arch.monolithic();
        let sg = m.backward(theta, &batch.inputs, &batch.labels)?;
        Ok((sg.loss, sg.param_grad))
    }

    /// Central differences of [`SplitModel::full_loss`].
    pub fn finite_diff_grad(&self, theta: &[f64], batch: &Minibatch, step: f64) -> Result<Vec<f64>, ModelError> {
        self.split_theta(theta)?;
        super::oracle::central_difference(theta, step, |t| self.full_loss(t, batch))
    }
}
