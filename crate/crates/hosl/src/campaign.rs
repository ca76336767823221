//! Cartesian sweeps over mode, Q, split and seed.

use std::fs::{self, File};
use std::io::{self, BufWriter};
use std::path::PathBuf;

use hosl_core::accounting::{convergence_bound, TheoryParams};
use hosl_core::rng::derive_seed;
use hosl_core::roles::Mode;

use crate::output::{fmt_f64, write_log_csv};
use crate::problem::ModelChoice;
use crate::train::{run_training, RunOutput, TrainingConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignSpec {
    /// Settings shared by every cell; the swept fields are overwritten.
    pub base: TrainingConfig,
    pub modes: Vec<Mode>,
    pub qs: Vec<u32>,
    /// Cut layers for dense models, client dimensions for the quadratic.
    pub splits: Vec<usize>,
    pub seeds: Vec<u64>,
    pub reps: u32,
    pub out_dir: PathBuf,
    /// Cells run concurrently; 1 runs them in order on this thread.
    pub jobs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cell {
    pub mode: Mode,
    pub q: u32,
    pub split: usize,
    pub seed: u64,
    pub rep: u32,
}

impl Cell {
    pub fn file_name(&self) -> String {
        format!(
            "{}_q{}_k{}_s{}_r{}.csv",
            self.mode.name(),
            self.q,
            self.split,
            self.seed,
            self.rep
        )
    }

    /// Master seed of the cell: the seed itself for the first repetition.
    pub fn master_seed(&self) -> u64 {
        if self.rep == 0 {
            self.seed
        } else {
            derive_seed(self.seed, &[self.rep as u64])
        }
    }
}

impl CampaignSpec {
    /// Modes outermost, repetitions innermost.
    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for &mode in &self.modes {
            for &q in &self.qs {
                for &split in &self.splits {
                    for &seed in &self.seeds {
                        for rep in 0..self.reps.max(1) {
                            out.push(Cell {
                                mode,
                                q,
                                split,
                                seed,
                                rep,
                            });
                        }
                    }
                }
            }
        }
        out
    }

    pub fn cell_config(&self, cell: &Cell) -> TrainingConfig {
        let mut c = self.base.clone();
        c.role.mode = cell.mode;
        c.role.q = cell.q;
        c.role.master_seed = cell.master_seed();
        c.model = match &c.model {
            ModelChoice::Dense { layers, .. } => ModelChoice::Dense {
                layers: layers.clone(),
                cut: cell.split,
            },
            ModelChoice::Quadratic { .. } => ModelChoice::Quadratic { client_dim: cell.split },
        };
        c.record_transcript = false;
        c
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub cell: Cell,
    pub result: Result<CellResult, String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellResult {
    pub final_loss: f64,
    pub stationarity: f64,
    pub client_to_server_bytes: u64,
    pub server_to_client_bytes: u64,
    /// Convergence bound, for ZO-FO on the full-batch quadratic.
    pub bound: Option<f64>,
}

pub const SUMMARY_COLUMNS: [&str; 11] = [
    "mode",
    "q",
    "k",
    "seed",
    "rep",
    "final_loss",
    "final_stationarity",
    "client_to_server_bytes",
    "server_to_client_bytes",
    "bound",
    "status",
];

fn bound_for(cfg: &TrainingConfig, out: &RunOutput) -> Option<f64> {
    let l = out.smoothness?;
    if cfg.role.mode != Mode::ZoFo || !cfg.sampler().is_full() {
        return None;
    }
    let p = TheoryParams {
        l_smooth: l,
        sigma_c_sq: 0.0,
        sigma_s_sq: 0.0,
        d_c: out.client_dim as u64,
        t: out.log.iterations() as u64,
        q: cfg.role.q as u64,
        eta_client: cfg.role.lr_client,
        eta_server: cfg.role.lr_server,
        lambda: cfg.role.eps,
    };
    convergence_bound(&p, out.log.loss_drop()?).ok().map(|b| b.value)
}

fn run_cell(spec: &CampaignSpec, cell: &Cell) -> Result<CellResult, String> {
    let cfg = spec.cell_config(cell);
    let out = run_training(&cfg).map_err(|e| e.to_string())?;
    let f = File::create(spec.out_dir.join(cell.file_name())).map_err(|e| e.to_string())?;
    write_log_csv(&out.log, BufWriter::new(f)).map_err(|e| e.to_string())?;
    Ok(CellResult {
        final_loss: out.log.final_loss,
        stationarity: out.log.stationarity().unwrap_or(f64::NAN),
        client_to_server_bytes: out.log.totals.client_to_server_bytes,
        server_to_client_bytes: out.log.totals.server_to_client_bytes,
        bound: bound_for(&cfg, &out),
    })
}

/// Run every cell, writing one log per cell and `summary.csv`. Failed cells
/// are reported in the summary and do not stop the campaign.
pub fn run_campaign(spec: &CampaignSpec) -> io::Result<Vec<SummaryRow>> {
    fs::create_dir_all(&spec.out_dir)?;
    let cells = spec.cells();
    let run = |cell: &Cell| {
        let result = run_cell(spec, cell);
        if let Err(e) = &result {
            log::warn!("cell {} failed: {e}", cell.file_name());
        }
        SummaryRow { cell: *cell, result }
    };
    let rows: Vec<SummaryRow> = if spec.jobs > 1 {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(spec.jobs)
            .build()
            .map_err(io::Error::other)?;
        pool.install(|| cells.par_iter().map(run).collect())
    } else {
        cells.iter().map(run).collect()
    };
    write_summary(&rows, File::create(spec.out_dir.join("summary.csv"))?)?;
    Ok(rows)
}

pub fn write_summary<W: io::Write>(rows: &[SummaryRow], out: W) -> io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SUMMARY_COLUMNS)?;
    for r in rows {
        let c = &r.cell;
        let head = [
            c.mode.name().to_string(),
            c.q.to_string(),
            c.split.to_string(),
            c.seed.to_string(),
            c.rep.to_string(),
        ];
        let tail = match &r.result {
            Ok(res) => [
                fmt_f64(res.final_loss),
                fmt_f64(res.stationarity),
                res.client_to_server_bytes.to_string(),
                res.server_to_client_bytes.to_string(),
                res.bound.map(fmt_f64).unwrap_or_default(),
                "ok".to_string(),
            ],
            Err(e) => [
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                format!("error: {e}"),
            ],
        };
        w.write_record(head.iter().chain(tail.iter()))?;
    }
    w.flush()
}
