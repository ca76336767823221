//! CSV emission for training logs.

use std::io::{self, Write};

use hosl_core::protocol::{tag_name, TAG_ACK, TAG_FORWARD, TAG_GRAD_REPLY, TAG_LOSS_REPLY};
use hosl_core::accounting::Direction;
use hosl_core::roles::TrainLog;

pub const LOG_COLUMNS: [&str; 6] = [
    "iter",
    "loss",
    "grad_norm_sq",
    "client_tx_bytes",
    "client_rx_bytes",
    "elapsed_ms",
];

/// Shortest round-trip decimal form.
pub fn fmt_f64(x: f64) -> String {
    format!("{x}")
}

/// One row per iteration, then `# key=value` lines with the run totals.
pub fn write_log_csv<W: Write>(log: &TrainLog, out: W) -> io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(LOG_COLUMNS)?;
    for r in &log.records {
        w.write_record([
            r.iter.to_string(),
            fmt_f64(r.loss),
            fmt_f64(r.grad_norm_sq),
            r.client_tx_bytes.to_string(),
            r.client_rx_bytes.to_string(),
            fmt_f64(r.elapsed_ms),
        ])?;
    }
    w.flush()?;
    let mut out = w.into_inner().map_err(|e| e.into_error())?;
    for (k, v) in totals(log) {
        writeln!(out, "# {k}={v}")?;
    }
    out.flush()
}

/// Totals appended after the per-iteration rows.
pub fn totals(log: &TrainLog) -> Vec<(String, String)> {
    let t = &log.totals;
    let mut kv = vec![
        ("iterations".to_string(), log.iterations().to_string()),
        ("final_loss".into(), fmt_f64(log.final_loss)),
        ("final_grad_norm_sq".into(), fmt_f64(log.final_grad_norm_sq)),
        ("stationarity".into(), fmt_f64(log.stationarity().unwrap_or(f64::NAN))),
        ("client_to_server_bytes".into(), t.client_to_server_bytes.to_string()),
        ("server_to_client_bytes".into(), t.server_to_client_bytes.to_string()),
    ];
    for dir in [Direction::ClientToServer, Direction::ServerToClient] {
        for tag in [TAG_FORWARD, TAG_LOSS_REPLY, TAG_ACK, TAG_GRAD_REPLY] {
            kv.push((
                format!("{}_{}_frames", dir.name(), tag_name(tag)),
                t.frames(dir, tag).to_string(),
            ));
        }
    }
    kv
}
