use alloc::vec::Vec;

use crate::accounting::Totals;

/// State at the start of iteration `iter` and the traffic that iteration
/// produced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iter: u64,
    /// Full-objective loss at the unperturbed parameters; NaN when the
    /// logger cannot see both halves.
    pub loss: f64,
    pub grad_norm_sq: f64,
    pub client_tx_bytes: u64,
    pub client_rx_bytes: u64,
    pub elapsed_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub records: Vec<IterationRecord>,
    /// Loss and squared gradient norm at the final parameters.
    pub final_loss: f64,
    pub final_grad_norm_sq: f64,
    pub totals: Totals,
}

impl TrainLog {
    pub fn iterations(&self) -> usize {
        self.records.len()
    }

    pub fn initial_loss(&self) -> Option<f64> {
        self.records.first().map(|r| r.loss).filter(|l| l.is_finite())
    }

    /// `F = L(theta^0) - L(theta^T)`.
    pub fn loss_drop(&self) -> Option<f64> {
        let d = self.initial_loss()? - self.final_loss;
        d.is_finite().then_some(d)
    }

    /// `(1/T) sum_{t=0}^{T} |grad L(theta^t)|^2`, final iterate included.
    pub fn stationarity(&self) -> Option<f64> {
        if self.records.is_empty() {
            return None;
        }
        let s: f64 = self.records.iter().map(|r| r.grad_norm_sq).sum::<f64>() + self.final_grad_norm_sq;
        let v = s / self.records.len() as f64;
        v.is_finite().then_some(v)
    }

    /// First iteration whose starting loss is at most `target`; `T` if only
    /// the final iterate reaches it.
    pub fn iterations_to(&self, target: f64) -> Option<usize> {
        self.records
            .iter()
            .position(|r| r.loss <= target)
            .or_else(|| (self.final_loss <= target).then_some(self.records.len()))
    }
}
