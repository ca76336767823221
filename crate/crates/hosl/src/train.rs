//! Training runs over a chosen transport.

use std::net::TcpListener;
use std::sync::mpsc;
use std::thread;
use std::time::{Duration, Instant};

use hosl_core::protocol::{Channel, Endpoint, Transport, TranscriptEntry, TransportError};
use hosl_core::roles::{
    run_iterations, run_server_loop, ClientEndpoint, Loopback, Metrics, RoleConfig, RoleError, ServerEndpoint,
    TrainLog,
};
use hosl_core::ParamVector;

use crate::dataset::{BatchSampler, DatasetSpec};
use crate::problem::{AnyClient, AnyServer, ModelChoice, Problem};
use crate::transport::{in_process_pair, Tcp};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TransportKind {
    /// Server runs synchronously inside the client's sends.
    Loopback,
    /// Server on its own thread, connected by in-memory queues.
    InProc,
    /// Server on its own thread, connected over a loopback TCP socket.
    Tcp,
}

impl TransportKind {
    pub fn name(self) -> &'static str {
        match self {
            TransportKind::Loopback => "loopback",
            TransportKind::InProc => "inproc",
            TransportKind::Tcp => "tcp",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "loopback" => Some(TransportKind::Loopback),
            "inproc" => Some(TransportKind::InProc),
            "tcp" => Some(TransportKind::Tcp),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    pub role: RoleConfig,
    pub iterations: u64,
    /// Minibatch size; the dataset size or more means full batch.
    pub batch: usize,
    pub model: ModelChoice,
    pub dataset: DatasetSpec,
    pub transport: TransportKind,
    pub record_transcript: bool,
    /// Record real elapsed time instead of zeros.
    pub wall_clock: bool,
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<(), RunError> {
        self.role.validate().map_err(|e| RunError::Config(e.to_string()))?;
        if self.iterations == 0 {
            return Err(RunError::Config("iterations must be at least 1".into()));
        }
        if self.batch == 0 {
            return Err(RunError::Config("batch size must be at least 1".into()));
        }
        if self.dataset.samples == 0 {
            return Err(RunError::Config("dataset needs at least one sample".into()));
        }
        Ok(())
    }

    pub fn sampler(&self) -> BatchSampler {
        BatchSampler {
            seed: self.role.master_seed,
            samples: self.dataset.samples,
            batch: self.batch,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub log: TrainLog,
    pub client_params: ParamVector,
    pub server_params: ParamVector,
    /// Client-side frames in order, both directions.
    pub transcript: Option<Vec<TranscriptEntry>>,
    pub smoothness: Option<f64>,
    pub client_dim: usize,
    pub server_dim: usize,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RunError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
    #[error("training stopped after {} iterations: {error}", log.iterations())]
    Train { error: RoleError, log: TrainLog },
}

fn clock(enabled: bool) -> impl FnMut() -> f64 {
    let start = Instant::now();
    move || {
        if enabled {
            start.elapsed().as_secs_f64() * 1e3
        } else {
            0.0
        }
    }
}

fn new_channel<T: Transport>(t: T, transcript: bool) -> Channel<T> {
    let ch = Channel::new(t, Endpoint::Client);
    if transcript {
        ch.with_transcript()
    } else {
        ch
    }
}

/// Run a full training job in this process.
pub fn run_training(cfg: &TrainingConfig) -> Result<RunOutput, RunError> {
    cfg.validate()?;
    let problem = Problem::build(&cfg.model, &cfg.dataset, cfg.role.master_seed).map_err(RunError::Config)?;
    let role_err = |e: RoleError| RunError::Config(e.to_string());
    let mut client =
        ClientEndpoint::new(problem.client.clone(), problem.client_init.clone(), cfg.role).map_err(role_err)?;
    let server =
        ServerEndpoint::new(problem.server.clone(), problem.server_init.clone(), cfg.role).map_err(role_err)?;
    let sampler = cfg.sampler();
    let batches = |t: u64| problem.data.select(&sampler.indices(t));

    let (log, server_params, transcript) = match cfg.transport {
        TransportKind::Loopback => {
            let mut ch = new_channel(Loopback::new(server), cfg.record_transcript);
            let res = run_iterations(
                &mut client,
                &mut ch,
                cfg.iterations,
                batches,
                |c, lb: &Loopback<AnyServer>| problem.metrics(c, lb.server().params()),
                clock(cfg.wall_clock),
            );
            let (lb, _, transcript) = ch.into_parts();
            let log = match res {
                Ok(log) => log,
                Err(e) => {
                    let error = lb.server_error().cloned().unwrap_or(e.error);
                    return Err(RunError::Train { error, log: e.log });
                }
            };
            (log, lb.into_server().into_params(), transcript)
        }
        TransportKind::InProc => {
            let (c, s) = in_process_pair();
            threaded(cfg, &problem, &mut client, server, c, move || Ok(s), batches)?
        }
        TransportKind::Tcp => {
            let listener = TcpListener::bind("127.0.0.1:0").map_err(|e| RunError::Io(e.to_string()))?;
            let addr = listener.local_addr().map_err(|e| RunError::Io(e.to_string()))?;
            let accept = move || Tcp::accept(&listener).map_err(|e| RoleError::Transport(TransportError::Io(e.to_string())));
            // The listener is bound, so connect succeeds before accept runs.
            let c = Tcp::connect(addr).map_err(|e| RunError::Io(e.to_string()))?;
            threaded(cfg, &problem, &mut client, server, c, accept, batches)?
        }
    };
    Ok(RunOutput {
        log,
        client_params: client.into_state().params,
        server_params,
        transcript,
        smoothness: problem.smoothness,
        client_dim: problem.client_dim(),
        server_dim: problem.server_dim(),
    })
}

type Parts = (TrainLog, ParamVector, Option<Vec<TranscriptEntry>>);

/// Server on a worker thread. Its observer streams parameter snapshots so the
/// client side can log full-objective metrics; each snapshot is queued before
/// the reply that ends the iteration, so draining the queue before an
/// iteration always yields the current server parameters.
fn threaded<T, S, F, B>(
    cfg: &TrainingConfig,
    problem: &Problem,
    client: &mut ClientEndpoint<AnyClient>,
    server: ServerEndpoint<AnyServer>,
    client_side: T,
    server_side: F,
    batches: B,
) -> Result<Parts, RunError>
where
    T: Transport,
    S: Transport + Send + 'static,
    F: FnOnce() -> Result<S, RoleError> + Send + 'static,
    B: FnMut(u64) -> hosl_core::model::Minibatch,
{
    let (snap_tx, snap_rx) = mpsc::channel::<Vec<f64>>();
    let mut server = server.with_observer(Box::new(move |_, p| {
        let _ = snap_tx.send(p.to_vec());
    }));
    let handle = thread::spawn(move || -> Result<ParamVector, RoleError> {
        let mut ch = Channel::new(server_side()?, Endpoint::Server);
        let res = run_server_loop(&mut server, &mut ch);
        res.map(|_| server.into_params())
    });

    let mut current = problem.server_init.to_vec();
    let mut ch = new_channel(client_side, cfg.record_transcript);
    let res = run_iterations(
        client,
        &mut ch,
        cfg.iterations,
        batches,
        |c, _: &T| {
            while let Ok(p) = snap_rx.try_recv() {
                current = p;
            }
            problem.metrics(c, &current)
        },
        clock(cfg.wall_clock),
    );
    let (transport, _, transcript) = ch.into_parts();
    drop(transport);
    let joined = handle.join().map_err(|_| RunError::Io("server thread panicked".into()))?;
    match (res, joined) {
        (Ok(log), Ok(params)) => Ok((log, params, transcript)),
        (Err(e), Err(server_error)) => Err(RunError::Train {
            error: server_error,
            log: e.log,
        }),
        (Err(e), Ok(_)) => Err(RunError::Train { error: e.error, log: e.log }),
        (Ok(log), Err(error)) => Err(RunError::Train { error, log }),
    }
}

/// Serve one client connection on `addr` until it disconnects.
pub fn serve_remote(cfg: &TrainingConfig, addr: &str) -> Result<ParamVector, RunError> {
    cfg.validate()?;
    let problem = Problem::build(&cfg.model, &cfg.dataset, cfg.role.master_seed).map_err(RunError::Config)?;
    let mut server = ServerEndpoint::new(problem.server, problem.server_init, cfg.role)
        .map_err(|e| RunError::Config(e.to_string()))?;
    let listener = TcpListener::bind(addr).map_err(|e| RunError::Io(format!("bind {addr}: {e}")))?;
    log::info!("listening on {}", listener.local_addr().map_err(|e| RunError::Io(e.to_string()))?);
    let t = Tcp::accept(&listener).map_err(|e| RunError::Io(e.to_string()))?;
    let mut ch = Channel::new(t, Endpoint::Server);
    run_server_loop(&mut server, &mut ch).map_err(|error| RunError::Train {
        error,
        log: TrainLog::default(),
    })?;
    log::info!("client disconnected after {} updates", server.updates());
    Ok(server.into_params())
}

/// Train as the client of a server at `addr`. The server's parameters are
/// not visible here, so loss and gradient columns are NaN.
pub fn run_remote_client(cfg: &TrainingConfig, addr: &str) -> Result<RunOutput, RunError> {
    cfg.validate()?;
    let problem = Problem::build(&cfg.model, &cfg.dataset, cfg.role.master_seed).map_err(RunError::Config)?;
    let mut client = ClientEndpoint::new(problem.client.clone(), problem.client_init.clone(), cfg.role)
        .map_err(|e| RunError::Config(e.to_string()))?;
    let mut attempt = 0;
    let t = loop {
        match Tcp::connect(addr) {
            Ok(t) => break t,
            Err(e) if attempt < 50 => {
                log::debug!("connect {addr}: {e}, retrying");
                attempt += 1;
                thread::sleep(Duration::from_millis(100));
            }
            Err(e) => return Err(RunError::Io(format!("connect {addr}: {e}"))),
        }
    };
    let sampler = cfg.sampler();
    let mut ch = new_channel(t, cfg.record_transcript);
    let log = run_iterations(
        &mut client,
        &mut ch,
        cfg.iterations,
        |t| problem.data.select(&sampler.indices(t)),
        |_, _: &Tcp| Metrics::UNKNOWN,
        clock(cfg.wall_clock),
    )
    .map_err(|e| RunError::Train { error: e.error, log: e.log })?;
    let (_, _, transcript) = ch.into_parts();
    Ok(RunOutput {
        log,
        client_params: client.into_state().params,
        server_params: ParamVector::zeros(0),
        transcript,
        smoothness: problem.smoothness,
        client_dim: problem.client_dim(),
        server_dim: problem.server_dim(),
    })
}
