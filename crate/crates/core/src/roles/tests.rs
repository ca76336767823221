use alloc::boxed::Box;
use alloc::collections::VecDeque;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicU64, Ordering};

use super::*;
use crate::accounting::Direction;
use crate::model::Activation::{Identity, Tanh};
use crate::model::oracle::central_difference;
use crate::model::quadratic::LinearClient;
use crate::model::{
    build_split_model, ActivationBatch, DenseClient, DenseServer, LayerSpec, LossKind, Minibatch,
    ServerModel, SplitArch, SplitModel,
};
use crate::optim::{perturb, zo_dense_estimate_with};
use crate::params::ParamVector;
use crate::protocol::{decode, encode, Channel, Endpoint, Message, Phase, Transport, TransportError};
use crate::rng::PrngStream;
use crate::tensor::Matrix;

fn config(mode: Mode, q: u32) -> RoleConfig {
    RoleConfig {
        mode,
        eps: 1e-3,
        q,
        lr_client: 0.05,
        lr_server: 0.05,
        master_seed: 0xfeed,
    }
}

fn small_model(seed: u64) -> SplitModel {
    build_split_model(
        vec![
            LayerSpec::new(3, 4, Tanh),
            LayerSpec::new(4, 3, Tanh),
            LayerSpec::new(3, 2, Identity),
        ],
        1,
        LossKind::Mse,
        seed,
    )
    .unwrap()
}

fn batch(seed: u64, b: usize, n_in: usize, n_out: usize) -> Minibatch {
    let mut rng = PrngStream::new(seed);
    let mut x = Matrix::zeros(b, n_in);
    rng.fill_normal(x.as_mut_slice());
    let mut y = Matrix::zeros(b, n_out);
    rng.fill_normal(y.as_mut_slice());
    Minibatch::new(x, y).unwrap()
}

type Pair = (ClientEndpoint<DenseClient>, Channel<Loopback<DenseServer>>);

fn endpoints(model: &SplitModel, cfg: RoleConfig) -> Pair {
    let client = ClientEndpoint::new(model.arch.client(), model.client_params.clone(), cfg).unwrap();
    let server = ServerEndpoint::new(model.arch.server(), model.server_params.clone(), cfg).unwrap();
    let ch = Channel::new(Loopback::new(server), Endpoint::Client).with_transcript();
    (client, ch)
}

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

/// Replies from a fixed script, recording what the client sends.
struct Scripted {
    replies: VecDeque<Message>,
    sent: Vec<Message>,
    fail_after: Option<usize>,
}

impl Scripted {
    fn new(replies: Vec<Message>) -> Self {
        Self {
            replies: replies.into(),
            sent: Vec::new(),
            fail_after: None,
        }
    }
}

impl Transport for Scripted {
    fn send_frame(&mut self, frame: &[u8]) -> Result<(), TransportError> {
        if self.fail_after == Some(self.sent.len()) {
            return Err(TransportError::Io("link down".into()));
        }
        self.sent.push(decode(frame)?);
        Ok(())
    }

    fn recv_frame(&mut self) -> Result<Vec<u8>, TransportError> {
        let m = self.replies.pop_front().ok_or(TransportError::Closed)?;
        Ok(encode(&m)?)
    }
}

#[test]
fn hand_executed_single_perturbation() {
    let mut cfg = config(Mode::ZoFo, 1);
    cfg.eps = 0.1;
    cfg.lr_client = 1.0;
    let theta0 = 0.3;
    let mut client = ClientEndpoint::new(LinearClient { dim: 1 }, ParamVector::new(vec![theta0]), cfg).unwrap();
    let script = Scripted::new(vec![
        Message::LossReply { value: 1.2 },
        Message::LossReply { value: 0.8 },
        Message::Ack,
    ]);
    let mut ch = Channel::new(script, Endpoint::Client);
    let b = Minibatch::new(Matrix::from_rows(&[&[1.0]]).unwrap(), Matrix::from_rows(&[&[0.0]]).unwrap()).unwrap();
    client.run_iteration(&mut ch, &b).unwrap();

    let z1 = PrngStream::new(client_seed(cfg.master_seed, 0, 0)).next_normal();
    let expected = theta0 - 2.0 * z1;
    assert!((client.params()[0] - expected).abs() < 1e-12);
    assert_eq!(client.state().t, 1);
    assert!(client.state().pending.is_empty());

    let sent = &ch.transport().sent;
    assert_eq!(sent.len(), 3);
    let h = |m: &Message| match m {
        Message::Forward { activations, .. } => activations.values[(0, 0)],
        _ => panic!("not a forward"),
    };
    assert!((h(&sent[0]) - (theta0 + 0.1 * z1)).abs() < 1e-15);
    assert!((h(&sent[1]) - (theta0 - 0.1 * z1)).abs() < 1e-15);
    assert_eq!(h(&sent[2]), theta0);
}

#[test]
fn zo_fo_census_and_phase_two_activations() {
    let model = small_model(1);
    let q = 4;
    let (mut client, mut ch) = endpoints(&model, config(Mode::ZoFo, q));
    let b = batch(2, 5, 3, 2);
    let before = client.params().clone();
    client.run_iteration(&mut ch, &b).unwrap();

    let round = *ch.ledger().open_round();
    assert_eq!(round.frames(Direction::ClientToServer, crate::protocol::TAG_FORWARD), 2 * q as u64 + 1);
    assert_eq!(round.frame_count(Direction::ClientToServer), 2 * q as u64 + 1);
    assert_eq!(round.frames(Direction::ServerToClient, crate::protocol::TAG_LOSS_REPLY), 2 * q as u64);
    assert_eq!(round.frames(Direction::ServerToClient, crate::protocol::TAG_ACK), 1);
    assert_eq!(round.frame_count(Direction::ServerToClient), 2 * q as u64 + 1);

    // The compute_grad forward is the last client frame and carries the
    // activations of the untouched parameters.
    let t = ch.transcript().unwrap();
    let c2s: Vec<Message> = t
        .iter()
        .filter(|e| e.direction == Direction::ClientToServer)
        .map(|e| decode(&e.frame).unwrap())
        .collect();
    let original = model.client_forward(&before, &b.inputs).unwrap();
    // Replaying the restore sequence on a copy reproduces the exact bits.
    let mut replay = before.to_vec();
    for k in 0..q {
        let s = client_seed(0xfeed, 0, k);
        perturb(&mut replay, 1e-3, s).unwrap();
        perturb(&mut replay, -2e-3, s).unwrap();
        perturb(&mut replay, 1e-3, s).unwrap();
    }
    let replayed = model.client_forward(&replay, &b.inputs).unwrap();
    for (i, m) in c2s.iter().enumerate() {
        let Message::Forward { phase, activations, labels } = m else { panic!() };
        assert_eq!(labels, &b.labels);
        if i + 1 == c2s.len() {
            assert_eq!(*phase, Phase::ComputeGrad);
            assert_eq!(bits(activations.values.as_slice()), bits(replayed.as_slice()));
            for (a, o) in activations.values.as_slice().iter().zip(original.as_slice()) {
                assert!((a - o).abs() <= 1e-12 * o.abs().max(1.0));
            }
        } else {
            assert_eq!(*phase, Phase::Inference);
        }
    }
}

/// Server on the far side of a transport, fingerprinting its parameters
/// after every message.
struct Inspecting {
    server: ServerEndpoint<DenseServer>,
    replies: VecDeque<Vec<u8>>,
    seen: Vec<(Phase, u64)>,
}

impl Transport for Inspecting {
    fn send_frame(&mut self, frame: &[u8]) -> Result<(), TransportError> {
        let msg = decode(frame)?;
        let Message::Forward { phase, .. } = &msg else { panic!() };
        let phase = *phase;
        let reply = self.server.handle(msg).map_err(|_| TransportError::Closed)?;
        self.seen.push((phase, self.server.params().fingerprint()));
        self.replies.push_back(encode(&reply)?);
        Ok(())
    }

    fn recv_frame(&mut self) -> Result<Vec<u8>, TransportError> {
        self.replies.pop_front().ok_or(TransportError::Closed)
    }
}

#[test]
fn server_parameters_fixed_under_inference() {
    let model = small_model(3);
    let cfg = config(Mode::ZoFo, 5);
    let mut client = ClientEndpoint::new(model.arch.client(), model.client_params.clone(), cfg).unwrap();
    let server = ServerEndpoint::new(model.arch.server(), model.server_params.clone(), cfg).unwrap();
    let mut ch = Channel::new(
        Inspecting {
            server,
            replies: VecDeque::new(),
            seen: Vec::new(),
        },
        Endpoint::Client,
    );
    for t in 0..3 {
        let start = ch.transport().server.params().fingerprint();
        let from = ch.transport().seen.len();
        client.run_iteration(&mut ch, &batch(10 + t, 4, 3, 2)).unwrap();
        let seen = &ch.transport().seen[from..];
        assert_eq!(seen.len(), 11);
        for (phase, fp) in &seen[..10] {
            assert_eq!(*phase, Phase::Inference);
            assert_eq!(*fp, start);
        }
        assert_ne!(seen[10].1, start);
    }
}

#[test]
fn inference_is_stateless() {
    let model = small_model(4);
    let mut server = ServerEndpoint::new(model.arch.server(), model.server_params.clone(), config(Mode::ZoFo, 1)).unwrap();
    let b = batch(5, 3, 3, 2);
    let h = model.client_forward(&model.client_params, &b.inputs).unwrap();
    let msg = Message::Forward {
        phase: Phase::Inference,
        activations: ActivationBatch { batch_id: 0, values: h },
        labels: b.labels.clone(),
    };
    let before = bits(server.params());
    let r1 = server.handle(msg.clone()).unwrap();
    let r2 = server.handle(msg).unwrap();
    let (Message::LossReply { value: a }, Message::LossReply { value: c }) = (r1, r2) else { panic!() };
    assert_eq!(a.to_bits(), c.to_bits());
    assert_eq!(bits(server.params()), before);
}

#[test]
fn compute_grad_step_matches_finite_differences() {
    let arch = SplitArch::new(
        vec![LayerSpec::new(2, 3, Tanh), LayerSpec::new(3, 2, Identity)],
        1,
        LossKind::Mse,
    )
    .unwrap();
    let model = SplitModel::init(arch, 9);
    let cfg = config(Mode::ZoFo, 1);
    let mut server = ServerEndpoint::new(model.arch.server(), model.server_params.clone(), cfg).unwrap();
    let b = batch(6, 4, 2, 2);
    let h = model.client_forward(&model.client_params, &b.inputs).unwrap();
    let head = model.arch.server();
    let fd = central_difference(&model.server_params, 1e-5, |p| head.loss(p, &h, &b.labels)).unwrap();
    let reply = server
        .handle(Message::Forward {
            phase: Phase::ComputeGrad,
            activations: ActivationBatch { batch_id: 0, values: h },
            labels: b.labels.clone(),
        })
        .unwrap();
    assert_eq!(reply, Message::Ack);
    for i in 0..fd.len() {
        let moved = (model.server_params[i] - server.params()[i]) / cfg.lr_server;
        assert!((moved - fd[i]).abs() <= 1e-6 * fd[i].abs().max(1.0), "{i}: {moved} vs {}", fd[i]);
    }
}

#[test]
fn fo_fo_equals_monolithic_sgd_bitwise() {
    for seed in 0..20 {
        let model = small_model(seed);
        let (mut client, mut ch) = endpoints(&model, config(Mode::FoFo, 1));
        let b = batch(100 + seed, 6, 3, 2);
        client.run_iteration(&mut ch, &b).unwrap();

        let theta = model.params();
        let (_, g) = model.monolithic_grad(&theta, &b).unwrap();
        let expected: Vec<f64> = theta.iter().zip(&g).map(|(t, g)| t - 0.05 * g).collect();
        let got = client.params().concat(ch.transport().server().params());
        assert_eq!(bits(&got), bits(&expected), "seed {seed}");

        let round = ch.ledger().open_round();
        assert_eq!(round.frame_count(Direction::ClientToServer), 1);
        assert_eq!(round.frames(Direction::ServerToClient, crate::protocol::TAG_GRAD_REPLY), 1);
        // g_h has the shape of h: same tensor section as the forward.
        let fwd_act = crate::protocol::tensor_section_len(6, 4);
        assert_eq!(round.server_to_client_bytes as usize, 10 + fwd_act);
    }
}

fn block_direction(master: u64, dc: usize, ds: usize) -> impl FnMut(u32, &mut [f64]) {
    move |q, out| {
        let (c, s) = out.split_at_mut(dc);
        PrngStream::new(client_seed(master, 0, q)).fill_normal(c);
        PrngStream::new(server_seed(master, 0, q)).fill_normal(s);
        assert_eq!(s.len(), ds);
    }
}

#[test]
fn zo_zo_equals_dense_block_spsa() {
    for seed in 0..10 {
        let model = small_model(seed);
        let cfg = config(Mode::ZoZo, 3);
        let (mut client, mut ch) = endpoints(&model, cfg);
        let b = batch(200 + seed, 5, 3, 2);
        client.run_iteration(&mut ch, &b).unwrap();
        let got = client.params().concat(ch.transport().server().params());

        let theta = model.params();
        let est = zo_dense_estimate_with(
            &theta,
            |p| model.full_loss(p, &b).map_err(RoleError::from),
            cfg.eps,
            cfg.q,
            block_direction(cfg.master_seed, model.client_dim(), model.server_dim()),
        )
        .unwrap();
        for i in 0..theta.len() {
            let want = theta[i] - cfg.lr_client * est[i];
            assert!((got[i] - want).abs() <= 1e-12 * want.abs().max(1.0), "seed {seed} coord {i}");
        }

        // Only scalars and the Ack travel back.
        let round = ch.ledger().open_round();
        assert_eq!(round.server_to_client_bytes, 2 * 3 * 18 + 10);
    }
}

#[test]
fn zo_zo_without_server_block_is_client_zo() {
    let layers = vec![LayerSpec::new(3, 4, Tanh), LayerSpec::new(4, 2, Identity)];
    let arch = SplitArch::client_only(layers, LossKind::Mse).unwrap();
    let model = SplitModel::init(arch, 11);
    assert_eq!(model.server_dim(), 0);
    let b = batch(12, 4, 3, 2);

    let mut finals = Vec::new();
    for mode in [Mode::ZoZo, Mode::ZoFo] {
        let (mut client, mut ch) = endpoints(&model, config(mode, 4));
        client.run_iteration(&mut ch, &b).unwrap();
        finals.push(bits(client.params()));
    }
    assert_eq!(finals[0], finals[1]);

    // And the sum of the Q record updates is the averaged estimator step.
    let cfg = config(Mode::ZoZo, 4);
    let est = zo_dense_estimate_with(
        &model.client_params,
        |p| model.full_loss(p, &b).map_err(RoleError::from),
        cfg.eps,
        cfg.q,
        block_direction(cfg.master_seed, model.client_dim(), 0),
    )
    .unwrap();
    for i in 0..est.len() {
        let want = model.client_params[i] - cfg.lr_client * est[i];
        assert!((f64::from_bits(finals[0][i]) - want).abs() < 1e-12);
    }
}

#[test]
fn transport_failure_restores_client() {
    let model = small_model(13);
    let b = batch(14, 3, 3, 2);
    let cfg = config(Mode::ZoFo, 3);
    // Fail on every possible send position of one iteration.
    for k in 0..7 {
        let mut client = ClientEndpoint::new(model.arch.client(), model.client_params.clone(), cfg).unwrap();
        let mut script = Scripted::new(vec![Message::LossReply { value: 0.5 }; 6]);
        script.replies.push_back(Message::Ack);
        script.fail_after = Some(k);
        let mut ch = Channel::new(script, Endpoint::Client);
        let err = client.run_iteration(&mut ch, &b).unwrap_err();
        assert!(matches!(err, RoleError::Transport(TransportError::Io(_))));
        for (a, o) in client.params().iter().zip(model.client_params.iter()) {
            assert!((a - o).abs() <= 1e-12 * o.abs().max(1.0));
        }
        assert!(client.state().pending.is_empty());
        assert_eq!(client.state().t, 0);
    }
}

#[test]
fn unexpected_reply_aborts() {
    let model = small_model(15);
    let mut client = ClientEndpoint::new(model.arch.client(), model.client_params.clone(), config(Mode::ZoFo, 1)).unwrap();
    let mut ch = Channel::new(Scripted::new(vec![Message::Ack]), Endpoint::Client);
    let err = client.run_iteration(&mut ch, &batch(1, 2, 3, 2)).unwrap_err();
    assert_eq!(
        err,
        RoleError::Unexpected {
            expected: "loss_reply",
            found: "ack"
        }
    );
}

#[test]
fn server_loop_ends_on_close_and_on_bad_message() {
    let model = small_model(16);
    let cfg = config(Mode::ZoFo, 1);
    let b = batch(17, 2, 3, 2);
    let h = model.client_forward(&model.client_params, &b.inputs).unwrap();
    let fwd = Message::Forward {
        phase: Phase::Inference,
        activations: ActivationBatch { batch_id: 0, values: h },
        labels: b.labels.clone(),
    };

    let mut server = ServerEndpoint::new(model.arch.server(), model.server_params.clone(), cfg).unwrap();
    let mut ch = Channel::new(Scripted::new(vec![fwd.clone(), fwd.clone()]), Endpoint::Server);
    run_server_loop(&mut server, &mut ch).unwrap();
    assert_eq!(ch.transport().sent.len(), 2);

    let mut ch = Channel::new(Scripted::new(vec![fwd, Message::Ack]), Endpoint::Server);
    let err = run_server_loop(&mut server, &mut ch).unwrap_err();
    assert!(matches!(err, RoleError::Unexpected { expected: "forward", .. }));
}

#[test]
fn zo_zo_server_rejects_out_of_order_phases() {
    let model = small_model(18);
    let cfg = config(Mode::ZoZo, 1);
    let mut server = ServerEndpoint::new(model.arch.server(), model.server_params.clone(), cfg).unwrap();
    let b = batch(19, 2, 3, 2);
    let h = model.client_forward(&model.client_params, &b.inputs).unwrap();
    let msg = |phase| Message::Forward {
        phase,
        activations: ActivationBatch { batch_id: 0, values: h.clone() },
        labels: b.labels.clone(),
    };
    server.handle(msg(Phase::Inference)).unwrap();
    assert!(server.handle(msg(Phase::ComputeGrad)).is_err());
    server.handle(msg(Phase::Inference)).unwrap();
    assert!(server.handle(msg(Phase::Inference)).is_err());
}

#[test]
fn observer_sees_every_update_before_reply() {
    let model = small_model(20);
    let cfg = config(Mode::ZoFo, 2);
    let count = Arc::new(AtomicU64::new(0));
    let c2 = count.clone();
    let server = ServerEndpoint::new(model.arch.server(), model.server_params.clone(), cfg)
        .unwrap()
        .with_observer(Box::new(move |n, _| c2.store(n, Ordering::SeqCst)));
    let mut client = ClientEndpoint::new(model.arch.client(), model.client_params.clone(), cfg).unwrap();
    let mut ch = Channel::new(Loopback::new(server), Endpoint::Client);
    for t in 0..4 {
        client.run_iteration(&mut ch, &batch(t, 3, 3, 2)).unwrap();
        assert_eq!(count.load(Ordering::SeqCst), t + 1);
    }
}

#[test]
fn driver_logs_every_iteration() {
    let model = small_model(21);
    let q = 2;
    let (mut client, mut ch) = endpoints(&model, config(Mode::ZoFo, q));
    let full = batch(22, 8, 3, 2);
    let log = run_iterations(
        &mut client,
        &mut ch,
        5,
        |t| full.select(&[(t as usize) % 8, (t as usize + 3) % 8]),
        |c, lb: &Loopback<DenseServer>| {
            let g = crate::model::split_grad(&model.arch.client(), &model.arch.server(), c, lb.server().params(), &full)
                .unwrap();
            Metrics {
                loss: g.loss,
                grad_norm_sq: g.norm_sq(),
            }
        },
        || 0.0,
    )
    .unwrap();
    assert_eq!(log.iterations(), 5);
    for (t, r) in log.records.iter().enumerate() {
        assert_eq!(r.iter, t as u64);
        assert_eq!(r.client_rx_bytes, (2 * q as u64) * 18 + 10);
        assert!(r.loss.is_finite() && r.grad_norm_sq >= 0.0);
    }
    let tx: u64 = log.records.iter().map(|r| r.client_tx_bytes).sum();
    assert_eq!(tx, log.totals.client_to_server_bytes);
    let transcript: u64 = ch.transcript().unwrap().iter().map(|e| e.frame.len() as u64).sum();
    assert_eq!(transcript, log.totals.client_to_server_bytes + log.totals.server_to_client_bytes);
    assert!(log.stationarity().is_some());
    assert!(log.loss_drop().is_some());
}

#[test]
fn driver_keeps_partial_log_on_failure() {
    let model = small_model(23);
    let cfg = config(Mode::FoFo, 1);
    let mut client = ClientEndpoint::new(model.arch.client(), model.client_params.clone(), cfg).unwrap();
    let b = batch(24, 2, 3, 2);
    let h = model.client_forward(&model.client_params, &b.inputs).unwrap();
    let script = Scripted::new(vec![Message::GradReply { activation_grad: h.clone() }, Message::Ack]);
    let mut ch = Channel::new(script, Endpoint::Client);
    let err = run_iterations(&mut client, &mut ch, 5, |_| b.clone(), |_, _| Metrics::UNKNOWN, || 0.0).unwrap_err();
    assert_eq!(err.log.iterations(), 1);
    assert!(matches!(err.error, RoleError::Unexpected { expected: "grad_reply", .. }));
}

#[test]
fn seeds_separate_sides_iterations_and_pairs() {
    let mut all = Vec::new();
    for t in 0..5 {
        for q in 0..5 {
            all.push(client_seed(7, t, q));
            all.push(server_seed(7, t, q));
        }
    }
    let n = all.len();
    all.sort_unstable();
    all.dedup();
    assert_eq!(all.len(), n);
}

#[test]
fn config_validation() {
    let mut c = config(Mode::ZoFo, 1);
    c.eps = 0.0;
    assert!(c.validate().is_err());
    let mut c = config(Mode::FoFo, 0);
    assert!(c.validate().is_ok());
    c.lr_server = 0.0;
    assert!(c.validate().is_err());
    assert_eq!(Mode::parse("zo-fo"), Some(Mode::ZoFo));
    assert_eq!(Mode::parse("fo_fo"), Some(Mode::FoFo));
    assert_eq!(Mode::parse("zo"), None);
}
