//! A split model whose loss is exactly quadratic in `theta = [theta_c, theta_s]`.
//!
//! Sample `j` contributes `1/2 (a_j . theta - b_j)^2` where the row `a_j` is
//! partitioned as `[a_cj | a_sj]`. The client holds the first block as its
//! input features and emits the scalar activation `h_j = a_cj . theta_c`;
//! the server owns the feature block `a_s` (keyed by sample index, carried in
//! the second label column) and finishes `h_j + a_sj . theta_s`. The
//! batch-mean loss is then `1/(2m) ||A theta - b||^2`, a least-squares
//! quadratic with Hessian `A^T A / m`.

use alloc::vec::Vec;

use crate::tensor::Matrix;

use super::{check_dim, ClientModel, Minibatch, ModelError, ServerGrad, ServerModel};

/// `h = X theta_c`, one output column, no bias.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearClient {
    pub dim: usize,
}

impl ClientModel for LinearClient {
    fn param_dim(&self) -> usize {
        self.dim
    }

    fn forward(&self, params: &[f64], x: &Matrix) -> Result<Matrix, ModelError> {
        check_dim("client parameters", self.dim, params.len())?;
        check_dim("client input width", self.dim, x.cols())?;
        let mut h = Matrix::zeros(x.rows(), 1);
        for r in 0..x.rows() {
            h[(r, 0)] = x.row(r).iter().zip(params).map(|(a, t)| a * t).sum();
        }
        Ok(h)
    }

    fn backward(&self, params: &[f64], x: &Matrix, g: &Matrix) -> Result<Vec<f64>, ModelError> {
        check_dim("client parameters", self.dim, params.len())?;
        check_dim("client input width", self.dim, x.cols())?;
        check_dim("activation gradient rows", x.rows(), g.rows())?;
        check_dim("activation gradient columns", 1, g.cols())?;
        let mut out = alloc::vec![0.0; self.dim];
        for r in 0..x.rows() {
            let gr = g[(r, 0)];
            for (o, a) in out.iter_mut().zip(x.row(r)) {
                *o += a * gr;
            }
        }
        Ok(out)
    }
}

/// Server half: owns `a_s` (`m x d_s`); labels are `[target, sample_index]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticHead {
    pub features: Matrix,
}

impl QuadraticHead {
    fn residuals(&self, params: &[f64], h: &Matrix, y: &Matrix) -> Result<Vec<(usize, f64)>, ModelError> {
        check_dim("server parameters", self.features.cols(), params.len())?;
        check_dim("activation columns", 1, h.cols())?;
        check_dim("label rows", h.rows(), y.rows())?;
        check_dim("label columns", 2, y.cols())?;
        let mut out = Vec::with_capacity(h.rows());
        for r in 0..h.rows() {
            let idx = y[(r, 1)];
            if !(idx >= 0.0 && idx < self.features.rows() as f64 && libm::trunc(idx) == idx) {
                return Err(ModelError::Config(alloc::format!("sample index {idx} out of range")));
            }
            let i = idx as usize;
            let s: f64 = self.features.row(i).iter().zip(params).map(|(a, t)| a * t).sum();
            out.push((i, h[(r, 0)] + s - y[(r, 0)]));
        }
        Ok(out)
    }
}

impl ServerModel for QuadraticHead {
    fn param_dim(&self) -> usize {
        self.features.cols()
    }

    fn loss(&self, params: &[f64], h: &Matrix, y: &Matrix) -> Result<f64, ModelError> {
        let res = self.residuals(params, h, y)?;
        Ok(res.iter().map(|(_, e)| 0.5 * e * e).sum::<f64>() / res.len() as f64)
    }

    fn backward(&self, params: &[f64], h: &Matrix, y: &Matrix) -> Result<ServerGrad, ModelError> {
        let res = self.residuals(params, h, y)?;
        let b = res.len() as f64;
        let mut loss = 0.0;
        let mut grad = alloc::vec![0.0; params.len()];
        let mut g_h = Matrix::zeros(res.len(), 1);
        for (r, &(i, e)) in res.iter().enumerate() {
            loss += 0.5 * e * e;
            g_h[(r, 0)] = e / b;
            for (g, a) in grad.iter_mut().zip(self.features.row(i)) {
                *g += a * e / b;
            }
        }
        Ok(ServerGrad {
            loss: loss / b,
            param_grad: grad,
            activation_grad: g_h,
        })
    }
}

/// Least-squares problem `1/(2m) ||A theta - b||^2` split after column `client_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitQuadratic {
    a: Matrix,
    b: Vec<f64>,
    client_dim: usize,
}

impl SplitQuadratic {
    pub fn new(a: Matrix, b: Vec<f64>, client_dim: usize) -> Result<Self, ModelError> {
        check_dim("target length", a.rows(), b.len())?;
        if a.rows() == 0 || client_dim == 0 || client_dim >= a.cols() {
            return Err(ModelError::Config(alloc::format!(
                "client block {client_dim} must lie in [1, {})",
                a.cols()
            )));
        }
        Ok(Self { a, b, client_dim })
    }

    pub fn design(&self) -> &Matrix {
        &self.a
    }

    pub fn targets(&self) -> &[f64] {
        &self.b
    }

    pub fn samples(&self) -> usize {
        self.a.rows()
    }

    pub fn dim(&self) -> usize {
        self.a.cols()
    }

    pub fn client_dim(&self) -> usize {
        self.client_dim
    }

    pub fn server_dim(&self) -> usize {
        self.a.cols() - self.client_dim
    }

    pub fn client(&self) -> LinearClient {
        LinearClient { dim: self.client_dim }
    }

    pub fn server(&self) -> QuadraticHead {
        let cols: Vec<usize> = (self.client_dim..self.a.cols()).collect();
        QuadraticHead {
            features: self.columns(&cols),
        }
    }

    fn columns(&self, cols: &[usize]) -> Matrix {
        let mut m = Matrix::zeros(self.a.rows(), cols.len());
        for r in 0..self.a.rows() {
            for (j, &c) in cols.iter().enumerate() {
                m[(r, j)] = self.a[(r, c)];
            }
        }
        m
    }

    /// Client features and `[target, index]` labels for the given samples.
    pub fn minibatch(&self, indices: &[usize]) -> Minibatch {
        let mut x = Matrix::zeros(indices.len(), self.client_dim);
        let mut y = Matrix::zeros(indices.len(), 2);
        for (r, &i) in indices.iter().enumerate() {
            x.row_mut(r).copy_from_slice(&self.a.row(i)[..self.client_dim]);
            y[(r, 0)] = self.b[i];
            y[(r, 1)] = i as f64;
        }
        Minibatch { inputs: x, labels: y }
    }

    pub fn full_batch(&self) -> Minibatch {
        let idx: Vec<usize> = (0..self.samples()).collect();
        self.minibatch(&idx)
    }

    /// Direct evaluation of `1/(2m) ||A theta - b||^2`.
    pub fn loss(&self, theta: &[f64]) -> f64 {
        let m = self.samples() as f64;
        (0..self.samples())
            .map(|r| {
                let e = self.residual(r, theta);
                0.5 * e * e
            })
            .sum::<f64>()
            / m
    }

    /// Direct evaluation of `A^T (A theta - b) / m`.
    pub fn grad(&self, theta: &[f64]) -> Vec<f64> {
        let m = self.samples() as f64;
        let mut g = alloc::vec![0.0; self.dim()];
        for r in 0..self.samples() {
            let e = self.residual(r, theta);
            for (gi, a) in g.iter_mut().zip(self.a.row(r)) {
                *gi += a * e / m;
            }
        }
        g
    }

    fn residual(&self, r: usize, theta: &[f64]) -> f64 {
        self.a.row(r).iter().zip(theta).map(|(a, t)| a * t).sum::<f64>() - self.b[r]
    }

    /// `A^T A / m`.
    pub fn hessian(&self) -> Matrix {
        let d = self.dim();
        let m = self.samples() as f64;
        let mut h = Matrix::zeros(d, d);
        for r in 0..self.samples() {
            let row = self.a.row(r);
            for i in 0..d {
                for j in 0..d {
                    h[(i, j)] += row[i] * row[j] / m;
                }
            }
        }
        h
    }
}
