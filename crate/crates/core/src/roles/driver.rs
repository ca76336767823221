use super::{ClientEndpoint, IterationRecord, RoleError, TrainLog};
use crate::model::{ClientModel, Minibatch};
use crate::protocol::{Channel, Transport};

/// Objective value and squared gradient norm at one iterate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub loss: f64,
    pub grad_norm_sq: f64,
}

impl Metrics {
    pub const UNKNOWN: Metrics = Metrics {
        loss: f64::NAN,
        grad_norm_sq: f64::NAN,
    };
}

/// A failed run with everything logged before the failure.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("iteration {} failed: {error}", log.iterations())]
pub struct TrainError {
    pub error: RoleError,
    pub log: TrainLog,
}

/// Drive `iterations` client iterations over `ch`.
///
/// `next_batch(t)` supplies the minibatch of iteration `t`. `metrics` is
/// evaluated on the client parameters (and the transport, which may expose
/// the server side) before every iteration and once at the end. `clock`
/// returns milliseconds since the start of the run.
pub fn run_iterations<C, T, B, M, K>(
    client: &mut ClientEndpoint<C>,
    ch: &mut Channel<T>,
    iterations: u64,
    mut next_batch: B,
    mut metrics: M,
    mut clock: K,
) -> Result<TrainLog, TrainError>
where
    C: ClientModel,
    T: Transport,
    B: FnMut(u64) -> Minibatch,
    M: FnMut(&[f64], &T) -> Metrics,
    K: FnMut() -> f64,
{
    let mut log = TrainLog::default();
    for t in 0..iterations {
        let m = metrics(client.params(), ch.transport());
        let batch = next_batch(t);
        if let Err(error) = client.run_iteration(ch, &batch) {
            log.totals = *ch.ledger().cumulative();
            log.final_loss = f64::NAN;
            log.final_grad_norm_sq = f64::NAN;
            return Err(TrainError { error, log });
        }
        let round = ch.ledger_mut().end_round();
        log.records.push(IterationRecord {
            iter: t,
            loss: m.loss,
            grad_norm_sq: m.grad_norm_sq,
            client_tx_bytes: round.client_to_server_bytes,
            client_rx_bytes: round.server_to_client_bytes,
            elapsed_ms: clock(),
        });
    }
    let m = metrics(client.params(), ch.transport());
    log.final_loss = m.loss;
    log.final_grad_norm_sq = m.grad_norm_sq;
    log.totals = *ch.ledger().cumulative();
    Ok(log)
}
