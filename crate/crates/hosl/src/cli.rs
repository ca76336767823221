//! Command-line front end.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hosl_core::accounting::{ModelSpec, MIB};
use hosl_core::roles::{Mode, RoleConfig};

use crate::campaign::{run_campaign, CampaignSpec};
use crate::dataset::{DatasetKind, DatasetSpec};
use crate::memreport::{parse_spec, render, set_field};
use crate::output::write_log_csv;
use crate::problem::{parse_layers, ModelChoice};
use crate::train::{run_remote_client, run_training, serve_remote, TrainingConfig, TransportKind};

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_RUNTIME: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "hosl", version, about = "Split learning with a zeroth-order client and a first-order server")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one model and write its log.
    Train(TrainArgs),
    /// Sweep modes, Q, splits and seeds.
    Campaign(CampaignArgs),
    /// Print the memory breakdown of a split transformer.
    Memreport(MemArgs),
}

fn positive_f64(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
        Ok(_) => Err("must be a positive number".into()),
        Err(e) => Err(e.to_string()),
    }
}

fn non_negative_f64(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v >= 0.0 && v.is_finite() => Ok(v),
        Ok(_) => Err("must be a non-negative number".into()),
        Err(e) => Err(e.to_string()),
    }
}

fn mode(s: &str) -> Result<Mode, String> {
    Mode::parse(s).ok_or_else(|| "expected one of zo-zo, fo-fo, zo-fo".into())
}

fn dataset(s: &str) -> Result<DatasetKind, String> {
    DatasetKind::parse(s).ok_or_else(|| "expected one of quadratic, linreg, blobs".into())
}

fn transport(s: &str) -> Result<TransportKind, String> {
    TransportKind::parse(s).ok_or_else(|| "expected one of inproc, tcp, loopback".into())
}

/// Settings of a single run.
#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[arg(long, default_value = "zo-fo", value_parser = mode)]
    pub mode: Mode,
    /// Perturbations per iteration (inert in fo-fo).
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u32).range(1..))]
    pub q: u32,
    #[arg(long, default_value_t = 1e-3, value_parser = positive_f64)]
    pub eps: f64,
    #[arg(long, default_value_t = 1e-3, value_parser = positive_f64)]
    pub lr_client: f64,
    #[arg(long, default_value_t = 1e-2, value_parser = positive_f64)]
    pub lr_server: f64,
    /// Layers on the client (dense models).
    #[arg(long, default_value_t = 1)]
    pub split_layer: usize,
    /// `in,width[:act],...`; hidden layers default to tanh, the output to identity.
    #[arg(long, default_value = "4,16:tanh,16:tanh,1")]
    pub layers: String,
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
    pub iters: u64,
    #[arg(long, default_value_t = 32, value_parser = clap::value_parser!(u64).range(1..))]
    pub batch: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "linreg", value_parser = dataset)]
    pub dataset: DatasetKind,
    #[arg(long, default_value_t = 256)]
    pub samples: usize,
    #[arg(long, default_value_t = 0.1, value_parser = non_negative_f64)]
    pub noise: f64,
    /// Dataset seed; defaults to `--seed`.
    #[arg(long)]
    pub data_seed: Option<u64>,
    /// Quadratic dimension `d`.
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    /// Quadratic coordinates on the client.
    #[arg(long, default_value_t = 16)]
    pub client_dim: usize,
    #[arg(long, default_value = "inproc", value_parser = transport)]
    pub transport: TransportKind,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Run only the server, accepting one client on `host:port`.
    #[arg(long, conflicts_with = "connect")]
    pub listen: Option<String>,
    /// Run only the client against a server at `host:port`.
    #[arg(long)]
    pub connect: Option<String>,
    /// Directory for `train_log.csv`; the log goes to stdout otherwise.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct CampaignArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, value_delimiter = ',', default_value = "fo-fo,zo-fo,zo-zo", value_parser = mode)]
    pub modes: Vec<Mode>,
    /// Defaults to `--q`.
    #[arg(long, value_delimiter = ',', value_parser = clap::value_parser!(u32).range(1..))]
    pub qs: Vec<u32>,
    /// Cut layers (dense) or client dimensions (quadratic); defaults to the
    /// single-run setting.
    #[arg(long, value_delimiter = ',')]
    pub splits: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub seeds: Vec<u64>,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    pub reps: u32,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Record real elapsed times; off by default so reruns are byte-identical.
    #[arg(long)]
    pub wall_clock: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct MemArgs {
    /// `key=value` file applied over the defaults before the flags below.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub batch: Option<u64>,
    #[arg(long)]
    pub seq_len: Option<u64>,
    #[arg(long)]
    pub hidden: Option<u64>,
    #[arg(long)]
    pub layers: Option<u64>,
    #[arg(long)]
    pub client_layers: Option<u64>,
    #[arg(long)]
    pub server_layers: Option<u64>,
    #[arg(long)]
    pub heads: Option<u64>,
    #[arg(long)]
    pub head_dim: Option<u64>,
    #[arg(long)]
    pub ffn_dim: Option<u64>,
    #[arg(long)]
    pub vocab: Option<u64>,
    #[arg(long)]
    pub max_positions: Option<u64>,
    #[arg(long)]
    pub bytes_per_element: Option<u64>,
    #[arg(long)]
    pub client_cuda_mib: Option<u64>,
    #[arg(long)]
    pub server_cuda_mib: Option<u64>,
}

/// A validated run plus remarks about flags that had no effect.
#[derive(Debug, Clone, PartialEq)]
pub struct Parsed {
    pub config: TrainingConfig,
    pub notes: Vec<String>,
}

/// Turn run flags into a validated configuration.
pub fn build_config(a: &RunArgs) -> Result<Parsed, String> {
    let mut notes = Vec::new();
    if a.mode == Mode::FoFo {
        notes.push(format!("--q {} is inert in fo-fo mode", a.q));
    }
    let (model, features, outputs) = if a.dataset == DatasetKind::Quadratic {
        if a.client_dim == 0 || a.client_dim >= a.dim {
            return Err(format!("--client-dim must lie in [1, {}]", a.dim.saturating_sub(1)));
        }
        (ModelChoice::Quadratic { client_dim: a.client_dim }, a.dim, 1)
    } else {
        let layers = parse_layers(&a.layers)?;
        if a.split_layer == 0 || a.split_layer >= layers.len() {
            return Err(format!("--split-layer must lie in [1, {}]", layers.len() - 1));
        }
        let (i, o) = (layers[0].input_dim, layers[layers.len() - 1].output_dim);
        (
            ModelChoice::Dense {
                layers,
                cut: a.split_layer,
            },
            i,
            o,
        )
    };
    let config = TrainingConfig {
        role: RoleConfig {
            mode: a.mode,
            eps: a.eps,
            q: a.q,
            lr_client: a.lr_client,
            lr_server: a.lr_server,
            master_seed: a.seed,
        },
        iterations: a.iters,
        batch: a.batch as usize,
        model,
        dataset: DatasetSpec {
            kind: a.dataset,
            samples: a.samples,
            features,
            outputs,
            noise: a.noise,
            seed: a.data_seed.unwrap_or(a.seed),
        },
        transport: a.transport,
        record_transcript: false,
        wall_clock: true,
    };
    config.validate().map_err(|e| e.to_string())?;
    Ok(Parsed { config, notes })
}

pub fn build_campaign(a: &CampaignArgs) -> Result<(CampaignSpec, Vec<String>), String> {
    let Parsed { mut config, notes } = build_config(&a.run)?;
    config.wall_clock = a.wall_clock;
    let qs = if a.qs.is_empty() { vec![a.run.q] } else { a.qs.clone() };
    let splits = if !a.splits.is_empty() {
        a.splits.clone()
    } else if let ModelChoice::Quadratic { client_dim } = config.model {
        vec![client_dim]
    } else {
        vec![a.run.split_layer]
    };
    Ok((
        CampaignSpec {
            base: config,
            modes: a.modes.clone(),
            qs,
            splits,
            seeds: a.seeds.clone(),
            reps: a.reps,
            out_dir: a.out.clone(),
            jobs: a.jobs.max(1),
        },
        notes,
    ))
}

pub fn build_model_spec(a: &MemArgs) -> Result<ModelSpec, String> {
    let mut spec = match &a.config {
        Some(p) => parse_spec(&fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?)?,
        None => ModelSpec::default(),
    };
    let flags = [
        ("batch", a.batch),
        ("seq_len", a.seq_len),
        ("hidden", a.hidden),
        ("layers", a.layers),
        ("client_layers", a.client_layers),
        ("server_layers", a.server_layers),
        ("heads", a.heads),
        ("head_dim", a.head_dim),
        ("ffn_dim", a.ffn_dim),
        ("vocab", a.vocab),
        ("max_positions", a.max_positions),
        ("bytes_per_element", a.bytes_per_element),
    ];
    for (k, v) in flags {
        if let Some(v) = v {
            set_field(&mut spec, k, &v.to_string())?;
        }
    }
    if let Some(v) = a.client_cuda_mib {
        spec.client_cuda_bytes = v * MIB;
    }
    if let Some(v) = a.server_cuda_mib {
        spec.server_cuda_bytes = v * MIB;
    }
    Ok(spec)
}

fn usage(msg: &str) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(EXIT_USAGE)
}

fn runtime(msg: &str) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(EXIT_RUNTIME)
}

fn write_log(log: &hosl_core::roles::TrainLog, out: Option<&PathBuf>) -> io::Result<()> {
    match out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            write_log_csv(log, BufWriter::new(File::create(dir.join("train_log.csv"))?))
        }
        None => write_log_csv(log, io::stdout().lock()),
    }
}

fn train(a: &TrainArgs) -> ExitCode {
    let Parsed { mut config, notes } = match build_config(&a.run) {
        Ok(p) => p,
        Err(e) => return usage(&e),
    };
    for n in notes {
        log::warn!("{n}");
    }
    if let Some(addr) = &a.listen {
        return match serve_remote(&config, addr) {
            Ok(p) => {
                log::info!("server finished with {} parameters", p.dim());
                ExitCode::SUCCESS
            }
            Err(e) => runtime(&e.to_string()),
        };
    }
    let result = match &a.connect {
        Some(addr) => run_remote_client(&config, addr),
        None => {
            config.record_transcript = false;
            run_training(&config)
        }
    };
    match result {
        Ok(out) => {
            if let Err(e) = write_log(&out.log, a.out.as_ref()) {
                return runtime(&e.to_string());
            }
            eprintln!(
                "final_loss={} stationarity={} client_to_server_bytes={} server_to_client_bytes={}",
                out.log.final_loss,
                out.log.stationarity().unwrap_or(f64::NAN),
                out.log.totals.client_to_server_bytes,
                out.log.totals.server_to_client_bytes
            );
            ExitCode::SUCCESS
        }
        Err(crate::train::RunError::Config(e)) => usage(&e),
        Err(e) => {
            if let crate::train::RunError::Train { log, .. } = &e {
                let _ = write_log(log, a.out.as_ref());
            }
            runtime(&e.to_string())
        }
    }
}

fn campaign(a: &CampaignArgs) -> ExitCode {
    let (spec, notes) = match build_campaign(a) {
        Ok(s) => s,
        Err(e) => return usage(&e),
    };
    for n in notes {
        log::warn!("{n}");
    }
    match run_campaign(&spec) {
        Ok(rows) => {
            let failed = rows.iter().filter(|r| r.result.is_err()).count();
            eprintln!("{} cells, {failed} failed, results in {}", rows.len(), spec.out_dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => runtime(&e.to_string()),
    }
}

fn memreport(a: &MemArgs) -> ExitCode {
    match build_model_spec(a) {
        Ok(spec) => {
            let text = render(&spec);
            let mut out = io::stdout().lock();
            if out.write_all(text.as_bytes()).is_err() {
                return ExitCode::from(EXIT_RUNTIME);
            }
            ExitCode::SUCCESS
        }
        Err(e) => usage(&e),
    }
}

/// Parse `args` (program name first), run, and map failures to exit codes:
/// 0 success, 2 usage, 3 runtime or transport.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter_or("HOSL_LOG", "warn")).try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match &cli.command {
        Command::Train(a) => train(a),
        Command::Campaign(a) => campaign(a),
        Command::Memreport(a) => memreport(a),
    }
}
