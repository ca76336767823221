//! Wire messages and framing.
//!
//! ```text
//! +--------+---------+-----+----------------+-----------+
//! | "HOSL" | version | tag | payload_len    | payload   |
//! | 4 B    | 1 B (1) | 1 B | 4 B, LE u32    | len bytes |
//! +--------+---------+-----+----------------+-----------+
//! ```
//!
//! Tags: 0 Forward, 1 LossReply, 2 Ack, 3 GradReply. All integers are
//! little-endian `u32`, all reals little-endian `f64`.
//!
//! * Forward: `[phase:1][batch_id:4][rows:4][cols:4][activations][label_rows:4][label_cols:4][labels]`,
//!   phase 0 = inference, 1 = compute_grad, matrices row-major.
//! * LossReply: `[loss:8]`.
//! * Ack: empty.
//! * GradReply: `[rows:4][cols:4][activation gradient]`, the same tensor
//!   encoding as the Forward activations.

use alloc::string::String;
use alloc::vec::Vec;

use crate::accounting::{CommLedger, Direction};
use crate::model::ActivationBatch;
use crate::tensor::Matrix;

pub const MAGIC: [u8; 4] = *b"HOSL";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 10;
/// Frames larger than this are rejected before allocation.
pub const MAX_PAYLOAD: u32 = 1 << 30;

pub const TAG_FORWARD: u8 = 0;
pub const TAG_LOSS_REPLY: u8 = 1;
pub const TAG_ACK: u8 = 2;
pub const TAG_GRAD_REPLY: u8 = 3;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProtocolError {
    #[error("bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported protocol version {0}")]
    BadVersion(u8),
    #[error("unknown message tag {0}")]
    BadTag(u8),
    #[error("unknown phase {0}")]
    BadPhase(u8),
    #[error("truncated frame: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("payload length mismatch: header declares {declared}, frame carries {actual}")]
    LengthMismatch { declared: usize, actual: usize },
    #[error("payload of {0} bytes exceeds the frame limit")]
    TooLarge(u32),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("malformed message: {0}")]
    Malformed(&'static str),
}

impl ProtocolError {
    /// Errors in the framing layer, as opposed to the message contents.
    pub fn is_framing(&self) -> bool {
        matches!(
            self,
            ProtocolError::Truncated { .. } | ProtocolError::LengthMismatch { .. } | ProtocolError::TooLarge(_)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Phase {
    Inference,
    ComputeGrad,
}

impl Phase {
    fn to_byte(self) -> u8 {
        match self {
            Phase::Inference => 0,
            Phase::ComputeGrad => 1,
        }
    }

    fn from_byte(b: u8) -> Result<Self, ProtocolError> {
        match b {
            0 => Ok(Phase::Inference),
            1 => Ok(Phase::ComputeGrad),
            other => Err(ProtocolError::BadPhase(other)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    /// Cut-layer activations and labels for one minibatch.
    Forward {
        phase: Phase,
        activations: ActivationBatch,
        labels: Matrix,
    },
    LossReply {
        value: f64,
    },
    Ack,
    /// `g_h`, FO-FO only.
    GradReply {
        activation_grad: Matrix,
    },
}

impl Message {
    pub fn tag(&self) -> u8 {
        match self {
            Message::Forward { .. } => TAG_FORWARD,
            Message::LossReply { .. } => TAG_LOSS_REPLY,
            Message::Ack => TAG_ACK,
            Message::GradReply { .. } => TAG_GRAD_REPLY,
        }
    }

    pub fn kind(&self) -> &'static str {
        tag_name(self.tag())
    }
}

pub fn tag_name(tag: u8) -> &'static str {
    match tag {
        TAG_FORWARD => "forward",
        TAG_LOSS_REPLY => "loss_reply",
        TAG_ACK => "ack",
        TAG_GRAD_REPLY => "grad_reply",
        _ => "unknown",
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<(), ProtocolError> {
    let v = u32::try_from(v).map_err(|_| ProtocolError::Malformed("dimension exceeds u32"))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_tensor(out: &mut Vec<u8>, m: &Matrix, what: &'static str) -> Result<(), ProtocolError> {
    if !m.is_finite() {
        return Err(ProtocolError::NonFinite(what));
    }
    put_u32(out, m.rows())?;
    put_u32(out, m.cols())?;
    for v in m.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(())
}

/// Encoded size of a tensor section: two dimensions plus the data.
pub fn tensor_section_len(rows: usize, cols: usize) -> usize {
    8 + 8 * rows * cols
}

/// Serialize a message into one complete frame.
pub fn encode(msg: &Message) -> Result<Vec<u8>, ProtocolError> {
    let mut payload = Vec::new();
    match msg {
        Message::Forward {
            phase,
            activations,
            labels,
        } => {
            if activations.values.rows() != labels.rows() {
                return Err(ProtocolError::Malformed("label rows differ from activation rows"));
            }
            payload.reserve(
                9 + tensor_section_len(activations.values.rows(), activations.values.cols())
                    + tensor_section_len(labels.rows(), labels.cols()),
            );
            payload.push(phase.to_byte());
            payload.extend_from_slice(&activations.batch_id.to_le_bytes());
            put_tensor(&mut payload, &activations.values, "activations")?;
            put_tensor(&mut payload, labels, "labels")?;
        }
        Message::LossReply { value } => {
            if !value.is_finite() {
                return Err(ProtocolError::NonFinite("loss"));
            }
            payload.extend_from_slice(&value.to_le_bytes());
        }
        Message::Ack => {}
        Message::GradReply { activation_grad } => {
            put_tensor(&mut payload, activation_grad, "activation gradient")?;
        }
    }
    let len = u32::try_from(payload.len()).map_err(|_| ProtocolError::TooLarge(u32::MAX))?;
    if len > MAX_PAYLOAD {
        return Err(ProtocolError::TooLarge(len));
    }
    let mut frame = Vec::with_capacity(HEADER_LEN + payload.len());
    frame.extend_from_slice(&MAGIC);
    frame.push(VERSION);
    frame.push(msg.tag());
    frame.extend_from_slice(&len.to_le_bytes());
    frame.extend_from_slice(&payload);
    Ok(frame)
}

/// Validate a 10-byte header and return `(tag, payload_len)`.
pub fn parse_header(header: &[u8]) -> Result<(u8, usize), ProtocolError> {
    if header.len() < HEADER_LEN {
        return Err(ProtocolError::Truncated {
            needed: HEADER_LEN,
            available: header.len(),
        });
    }
    let magic: [u8; 4] = header[..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(ProtocolError::BadMagic(magic));
    }
    if header[4] != VERSION {
        return Err(ProtocolError::BadVersion(header[4]));
    }
    let tag = header[5];
    if tag > TAG_GRAD_REPLY {
        return Err(ProtocolError::BadTag(tag));
    }
    let len = u32::from_le_bytes(header[6..10].try_into().unwrap());
    if len > MAX_PAYLOAD {
        return Err(ProtocolError::TooLarge(len));
    }
    Ok((tag, len as usize))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ProtocolError> {
        let end = self.pos.checked_add(n).ok_or(ProtocolError::Malformed("size overflow"))?;
        if end > self.buf.len() {
            return Err(ProtocolError::Malformed("payload shorter than its contents"));
        }
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, ProtocolError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, ProtocolError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, ProtocolError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn tensor(&mut self, what: &'static str) -> Result<Matrix, ProtocolError> {
        let rows = self.u32()? as usize;
        let cols = self.u32()? as usize;
        let n = rows.checked_mul(cols).ok_or(ProtocolError::Malformed("tensor size overflow"))?;
        let bytes = self.take(n.checked_mul(8).ok_or(ProtocolError::Malformed("tensor size overflow"))?)?;
        let data: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if !data.iter().all(|v| v.is_finite()) {
            return Err(ProtocolError::NonFinite(what));
        }
        Ok(Matrix::from_vec(rows, cols, data).expect("length checked"))
    }

    fn finish(&self) -> Result<(), ProtocolError> {
        if self.pos == self.buf.len() {
            Ok(())
        } else {
            Err(ProtocolError::Malformed("trailing bytes in payload"))
        }
    }
}

/// Parse one complete frame.
pub fn decode(frame: &[u8]) -> Result<Message, ProtocolError> {
    let (tag, len) = parse_header(frame)?;
    let actual = frame.len() - HEADER_LEN;
    if actual < len {
        return Err(ProtocolError::Truncated {
            needed: HEADER_LEN + len,
            available: frame.len(),
        });
    }
    if actual > len {
        return Err(ProtocolError::LengthMismatch { declared: len, actual });
    }
    decode_payload(tag, &frame[HEADER_LEN..])
}

/// Parse a payload whose header has already been validated.
pub fn decode_payload(tag: u8, payload: &[u8]) -> Result<Message, ProtocolError> {
    let mut r = Reader { buf: payload, pos: 0 };
    let msg = match tag {
        TAG_FORWARD => {
            let phase = Phase::from_byte(r.u8()?)?;
            let batch_id = r.u32()?;
            let values = r.tensor("activations")?;
            let labels = r.tensor("labels")?;
            if values.rows() != labels.rows() {
                return Err(ProtocolError::Malformed("label rows differ from activation rows"));
            }
            Message::Forward {
                phase,
                activations: ActivationBatch { batch_id, values },
                labels,
            }
        }
        TAG_LOSS_REPLY => {
            let value = r.f64()?;
            if !value.is_finite() {
                return Err(ProtocolError::NonFinite("loss"));
            }
            Message::LossReply { value }
        }
        TAG_ACK => Message::Ack,
        TAG_GRAD_REPLY => Message::GradReply {
            activation_grad: r.tensor("activation gradient")?,
        },
        other => return Err(ProtocolError::BadTag(other)),
    };
    r.finish()?;
    Ok(msg)
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TransportError {
    #[error("connection closed by peer")]
    Closed,
    #[error("transport I/O failure: {0}")]
    Io(String),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
}

/// A reliable, ordered, blocking frame pipe between the two endpoints.
///
/// `recv_frame` returns exactly one complete frame (header included) per
/// call, and [`TransportError::Closed`] once the peer has gone away.
pub trait Transport {
    fn send_frame(&mut self, frame: &[u8]) -> Result<(), TransportError>;

    fn recv_frame(&mut self) -> Result<Vec<u8>, TransportError>;
}

impl<T: Transport + ?Sized> Transport for &mut T {
    fn send_frame(&mut self, frame: &[u8]) -> Result<(), TransportError> {
        (**self).send_frame(frame)
    }

    fn recv_frame(&mut self) -> Result<Vec<u8>, TransportError> {
        (**self).recv_frame()
    }
}

impl<T: Transport + ?Sized> Transport for alloc::boxed::Box<T> {
    fn send_frame(&mut self, frame: &[u8]) -> Result<(), TransportError> {
        (**self).send_frame(frame)
    }

    fn recv_frame(&mut self) -> Result<Vec<u8>, TransportError> {
        (**self).recv_frame()
    }
}

/// Which end of the connection a [`Channel`] sits on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Endpoint {
    Client,
    Server,
}

/// One recorded frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TranscriptEntry {
    pub direction: Direction,
    pub frame: Vec<u8>,
}

/// Message-level view of a transport: encodes, decodes, and records every
/// frame in a [`CommLedger`] and, optionally, a byte transcript.
#[derive(Debug)]
pub struct Channel<T> {
    transport: T,
    endpoint: Endpoint,
    ledger: CommLedger,
    transcript: Option<Vec<TranscriptEntry>>,
}

impl<T: Transport> Channel<T> {
    pub fn new(transport: T, endpoint: Endpoint) -> Self {
        Self {
            transport,
            endpoint,
            ledger: CommLedger::default(),
            transcript: None,
        }
    }

    /// Start keeping a copy of every frame.
    pub fn with_transcript(mut self) -> Self {
        self.transcript = Some(Vec::new());
        self
    }

    fn outgoing(&self) -> Direction {
        match self.endpoint {
            Endpoint::Client => Direction::ClientToServer,
            Endpoint::Server => Direction::ServerToClient,
        }
    }

    fn record(&mut self, direction: Direction, frame: &[u8]) {
        self.ledger.record_frame(direction, frame);
        if let Some(t) = &mut self.transcript {
            t.push(TranscriptEntry {
                direction,
                frame: frame.to_vec(),
            });
        }
    }

    pub fn send(&mut self, msg: &Message) -> Result<(), TransportError> {
        let frame = encode(msg)?;
        self.transport.send_frame(&frame)?;
        let dir = self.outgoing();
        self.record(dir, &frame);
        Ok(())
    }

    pub fn recv(&mut self) -> Result<Message, TransportError> {
        let frame = self.transport.recv_frame()?;
        let msg = decode(&frame)?;
        let dir = self.outgoing().reverse();
        self.record(dir, &frame);
        Ok(msg)
    }

    pub fn ledger(&self) -> &CommLedger {
        &self.ledger
    }

    pub fn ledger_mut(&mut self) -> &mut CommLedger {
        &mut self.ledger
    }

    pub fn transcript(&self) -> Option<&[TranscriptEntry]> {
        self.transcript.as_deref()
    }

    pub fn transport(&self) -> &T {
        &self.transport
    }

    pub fn transport_mut(&mut self) -> &mut T {
        &mut self.transport
    }

    pub fn into_parts(self) -> (T, CommLedger, Option<Vec<TranscriptEntry>>) {
        (self.transport, self.ledger, self.transcript)
    }
}
