//! A model and a dataset bound together: both halves' modules, initial
//! parameters and full-data metrics.

use hosl_core::model::quadratic::{LinearClient, QuadraticHead, SplitQuadratic};
use hosl_core::model::{
    split_grad, Activation, ClientModel, DenseClient, DenseServer, LayerSpec, LossKind, Minibatch, ModelError,
    ServerGrad, ServerModel, SplitArch, SplitModel,
};
use hosl_core::roles::Metrics;
use hosl_core::rng::derive_seed;
use hosl_core::{Matrix, ParamVector};

use crate::dataset::{generate_dataset, smoothness, Dataset, DatasetKind, DatasetSpec};

/// Which network to split.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelChoice {
    /// Dense stack cut after `cut` layers.
    Dense { layers: Vec<LayerSpec>, cut: usize },
    /// Least squares with the first `client_dim` coordinates on the client.
    Quadratic { client_dim: usize },
}

/// Parse `in,width[:act],...` into layers. Hidden layers default to tanh
/// and the output layer to identity.
pub fn parse_layers(s: &str) -> Result<Vec<LayerSpec>, String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() < 2 {
        return Err(format!("layer list `{s}` needs an input width and at least one layer"));
    }
    let width = |p: &str| p.parse::<usize>().map_err(|_| format!("bad width `{p}` in `{s}`"));
    let mut prev = width(parts[0])?;
    let mut layers = Vec::new();
    for (i, p) in parts[1..].iter().enumerate() {
        let last = i + 2 == parts.len();
        let (w, act) = match p.split_once(':') {
            Some((w, a)) => (w, Activation::parse(a).ok_or_else(|| format!("unknown activation `{a}`"))?),
            None => (*p, if last { Activation::Identity } else { Activation::Tanh }),
        };
        let w = width(w)?;
        layers.push(LayerSpec::new(prev, w, act));
        prev = w;
    }
    Ok(layers)
}

#[derive(Debug, Clone, PartialEq)]
pub enum AnyClient {
    Dense(DenseClient),
    Linear(LinearClient),
}

#[derive(Debug, Clone, PartialEq)]
pub enum AnyServer {
    Dense(DenseServer),
    Quadratic(QuadraticHead),
}

impl ClientModel for AnyClient {
    fn param_dim(&self) -> usize {
        match self {
            AnyClient::Dense(c) => c.param_dim(),
            AnyClient::Linear(c) => c.param_dim(),
        }
    }

    fn forward(&self, p: &[f64], x: &Matrix) -> Result<Matrix, ModelError> {
        match self {
            AnyClient::Dense(c) => c.forward(p, x),
            AnyClient::Linear(c) => c.forward(p, x),
        }
    }

    fn backward(&self, p: &[f64], x: &Matrix, g: &Matrix) -> Result<Vec<f64>, ModelError> {
        match self {
            AnyClient::Dense(c) => c.backward(p, x, g),
            AnyClient::Linear(c) => c.backward(p, x, g),
        }
    }
}

impl ServerModel for AnyServer {
    fn param_dim(&self) -> usize {
        match self {
            AnyServer::Dense(s) => s.param_dim(),
            AnyServer::Quadratic(s) => s.param_dim(),
        }
    }

    fn loss(&self, p: &[f64], h: &Matrix, y: &Matrix) -> Result<f64, ModelError> {
        match self {
            AnyServer::Dense(s) => s.loss(p, h, y),
            AnyServer::Quadratic(s) => s.loss(p, h, y),
        }
    }

    fn backward(&self, p: &[f64], h: &Matrix, y: &Matrix) -> Result<ServerGrad, ModelError> {
        match self {
            AnyServer::Dense(s) => s.backward(p, h, y),
            AnyServer::Quadratic(s) => s.backward(p, h, y),
        }
    }
}

const INIT_TAG: u64 = 0x696e_6974; // "init"

/// Everything both endpoints need to start a run.
#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    pub client: AnyClient,
    pub server: AnyServer,
    pub client_init: ParamVector,
    pub server_init: ParamVector,
    /// The whole training set as one batch.
    pub data: Minibatch,
    pub quadratic: Option<SplitQuadratic>,
    /// Smoothness constant of the quadratic objective.
    pub smoothness: Option<f64>,
}

impl Problem {
    /// Build from a model choice and dataset. Dense parameters are drawn from
    /// `derive(master_seed, init)`; the quadratic starts at zero.
    pub fn build(model: &ModelChoice, dataset: &DatasetSpec, master_seed: u64) -> Result<Self, String> {
        let data = generate_dataset(dataset);
        match (model, data) {
            (ModelChoice::Quadratic { client_dim }, Dataset::Quadratic { a, b, .. }) => {
                let l = smoothness(&a);
                let q = SplitQuadratic::new(a, b, *client_dim).map_err(|e| e.to_string())?;
                Ok(Self {
                    client: AnyClient::Linear(q.client()),
                    server: AnyServer::Quadratic(q.server()),
                    client_init: ParamVector::zeros(q.client_dim()),
                    server_init: ParamVector::zeros(q.server_dim()),
                    data: q.full_batch(),
                    quadratic: Some(q),
                    smoothness: Some(l),
                })
            }
            (ModelChoice::Dense { layers, cut }, Dataset::Supervised(mb)) => {
                let loss = if dataset.kind == DatasetKind::Blobs {
                    LossKind::SoftmaxCrossEntropy
                } else {
                    LossKind::Mse
                };
                let first = layers.first().ok_or("empty layer list")?;
                let last = layers.last().expect("non-empty");
                if first.input_dim != mb.inputs.cols() {
                    return Err(format!(
                        "network input width {} does not match {} dataset features",
                        first.input_dim,
                        mb.inputs.cols()
                    ));
                }
                if last.output_dim != mb.labels.cols() {
                    return Err(format!(
                        "network output width {} does not match {} dataset targets",
                        last.output_dim,
                        mb.labels.cols()
                    ));
                }
                let arch = SplitArch::new(layers.clone(), *cut, loss).map_err(|e| e.to_string())?;
                let m = SplitModel::init(arch, derive_seed(master_seed, &[INIT_TAG]));
                Ok(Self {
                    client: AnyClient::Dense(m.arch.client()),
                    server: AnyServer::Dense(m.arch.server()),
                    client_init: m.client_params,
                    server_init: m.server_params,
                    data: mb,
                    quadratic: None,
                    smoothness: None,
                })
            }
            (ModelChoice::Quadratic { .. }, _) => Err("the quadratic model needs the quadratic dataset".into()),
            (ModelChoice::Dense { .. }, _) => Err("the quadratic dataset needs the quadratic model".into()),
        }
    }

    pub fn client_dim(&self) -> usize {
        self.client_init.dim()
    }

    pub fn server_dim(&self) -> usize {
        self.server_init.dim()
    }

    /// Full-data loss and squared gradient norm at `(theta_c, theta_s)`.
    pub fn metrics(&self, client: &[f64], server: &[f64]) -> Metrics {
        match split_grad(&self.client, &self.server, client, server, &self.data) {
            Ok(g) => Metrics {
                loss: g.loss,
                grad_norm_sq: g.norm_sq(),
            },
            Err(_) => Metrics::UNKNOWN,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use hosl_core::model::Activation::{Identity, Relu, Tanh};

    #[test]
    fn layer_strings() {
        let l = parse_layers("4,8:tanh,8:relu,3").unwrap();
        assert_eq!(
            l,
            vec![LayerSpec::new(4, 8, Tanh), LayerSpec::new(8, 8, Relu), LayerSpec::new(8, 3, Identity)]
        );
        let d = parse_layers("2,5,1").unwrap();
        assert_eq!(d[0].activation, Tanh);
        assert_eq!(d[1].activation, Identity);
        assert!(parse_layers("4").is_err());
        assert!(parse_layers("4,x").is_err());
        assert!(parse_layers("4,3:sigmoid").is_err());
    }

    #[test]
    fn quadratic_problem_metrics_match_direct_formulas() {
        let spec = DatasetSpec {
            kind: DatasetKind::Quadratic,
            samples: 20,
            features: 6,
            outputs: 1,
            noise: 0.3,
            seed: 1,
        };
        let p = Problem::build(&ModelChoice::Quadratic { client_dim: 2 }, &spec, 0).unwrap();
        let q = p.quadratic.as_ref().unwrap();
        let theta: Vec<f64> = (0..6).map(|i| 0.1 * i as f64 - 0.2).collect();
        let m = p.metrics(&theta[..2], &theta[2..]);
        assert!((m.loss - q.loss(&theta)).abs() < 1e-12);
        let g = q.grad(&theta);
        let gn: f64 = g.iter().map(|x| x * x).sum();
        assert!((m.grad_norm_sq - gn).abs() < 1e-12 * gn.max(1.0));
    }

    #[test]
    fn mismatched_choices_are_rejected() {
        let spec = DatasetSpec {
            kind: DatasetKind::Linreg,
            samples: 10,
            features: 3,
            outputs: 1,
            noise: 0.0,
            seed: 1,
        };
        let layers = parse_layers("3,4,1").unwrap();
        assert!(Problem::build(&ModelChoice::Dense { layers: layers.clone(), cut: 1 }, &spec, 0).is_ok());
        assert!(Problem::build(&ModelChoice::Dense { layers, cut: 2 }, &spec, 0).is_err());
        assert!(Problem::build(&ModelChoice::Quadratic { client_dim: 1 }, &spec, 0).is_err());
        let wrong = parse_layers("2,4,1").unwrap();
        assert!(Problem::build(&ModelChoice::Dense { layers: wrong, cut: 1 }, &spec, 0).is_err());
    }
}
