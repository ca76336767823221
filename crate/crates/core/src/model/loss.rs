use crate::tensor::Matrix;

use super::{check_dim, ModelError};

/// Per-sample loss, reduced by the batch mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    /// `1/2 ||prediction - target||^2`.
    Mse,
    /// `-sum_k y_k log softmax(prediction)_k`, targets are one-hot or
    /// probability rows.
    SoftmaxCrossEntropy,
}

impl LossKind {
    fn check(self, pred: &Matrix, labels: &Matrix) -> Result<(), ModelError> {
        check_dim("label rows", pred.rows(), labels.rows())?;
        check_dim("label columns", pred.cols(), labels.cols())
    }

    fn sample(self, p: &[f64], y: &[f64]) -> f64 {
        match self {
            LossKind::Mse => {
                0.5 * p
                    .iter()
                    .zip(y)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
            }
            LossKind::SoftmaxCrossEntropy => {
                let lse = log_sum_exp(p);
                p.iter().zip(y).map(|(a, t)| t * (lse - a)).sum()
            }
        }
    }

    /// Batch-mean loss.
    pub fn value(self, pred: &Matrix, labels: &Matrix) -> Result<f64, ModelError> {
        self.check(pred, labels)?;
        let mut total = 0.0;
        for r in 0..pred.rows() {
            total += self.sample(pred.row(r), labels.row(r));
        }
        Ok(total / pred.rows() as f64)
    }

    /// Batch-mean loss and its gradient with respect to `pred`. The loss is
    /// bitwise equal to [`LossKind::value`].
    pub fn value_and_grad(self, pred: &Matrix, labels: &Matrix) -> Result<(f64, Matrix), ModelError> {
        self.check(pred, labels)?;
        let b = pred.rows() as f64;
        let mut total = 0.0;
        let mut grad = Matrix::zeros(pred.rows(), pred.cols());
        for r in 0..pred.rows() {
            let (p, y) = (pred.row(r), labels.row(r));
            total += self.sample(p, y);
            let g = grad.row_mut(r);
            match self {
                LossKind::Mse => {
                    for ((gi, a), t) in g.iter_mut().zip(p).zip(y) {
                        *gi = (a - t) / b;
                    }
                }
                LossKind::SoftmaxCrossEntropy => {
                    let lse = log_sum_exp(p);
                    let mass: f64 = y.iter().sum();
                    for ((gi, a), t) in g.iter_mut().zip(p).zip(y) {
                        *gi = (libm::exp(a - lse) * mass - t) / b;
                    }
                }
            }
        }
        Ok((total / b, grad))
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + libm::log(v.iter().map(|x| libm::exp(x - m)).sum::<f64>())
}
