use alloc::vec::Vec;

use crate::protocol::{HEADER_LEN, TAG_GRAD_REPLY};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    ClientToServer,
    ServerToClient,
}

impl Direction {
    pub fn reverse(self) -> Self {
        match self {
            Direction::ClientToServer => Direction::ServerToClient,
            Direction::ServerToClient => Direction::ClientToServer,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Direction::ClientToServer => "client_to_server",
            Direction::ServerToClient => "server_to_client",
        }
    }
}

const KINDS: usize = TAG_GRAD_REPLY as usize + 1;

/// Byte and frame counters for one span of traffic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Totals {
    pub client_to_server_bytes: u64,
    pub server_to_client_bytes: u64,
    /// Frames per message tag, client to server.
    pub client_to_server_frames: [u64; KINDS],
    /// Frames per message tag, server to client.
    pub server_to_client_frames: [u64; KINDS],
}

impl Totals {
    pub fn bytes(&self, dir: Direction) -> u64 {
        match dir {
            Direction::ClientToServer => self.client_to_server_bytes,
            Direction::ServerToClient => self.server_to_client_bytes,
        }
    }

    /// Number of frames carrying `tag` in `dir`.
    pub fn frames(&self, dir: Direction, tag: u8) -> u64 {
        let counts = match dir {
            Direction::ClientToServer => &self.client_to_server_frames,
            Direction::ServerToClient => &self.server_to_client_frames,
        };
        counts.get(tag as usize).copied().unwrap_or(0)
    }

    pub fn frame_count(&self, dir: Direction) -> u64 {
        (0..KINDS as u8).map(|t| self.frames(dir, t)).sum()
    }

    fn add_frame(&mut self, dir: Direction, tag: u8, len: u64) {
        let (bytes, counts) = match dir {
            Direction::ClientToServer => (&mut self.client_to_server_bytes, &mut self.client_to_server_frames),
            Direction::ServerToClient => (&mut self.server_to_client_bytes, &mut self.server_to_client_frames),
        };
        *bytes += len;
        if let Some(c) = counts.get_mut(tag as usize) {
            *c += 1;
        }
    }

    fn merge(&mut self, other: &Totals) {
        self.client_to_server_bytes += other.client_to_server_bytes;
        self.server_to_client_bytes += other.server_to_client_bytes;
        for i in 0..KINDS {
            self.client_to_server_frames[i] += other.client_to_server_frames[i];
            self.server_to_client_frames[i] += other.server_to_client_frames[i];
        }
    }
}

/// Traffic counters kept per round and cumulatively.
///
/// A round is closed by [`CommLedger::end_round`]; frames recorded since the
/// last close belong to the open round.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CommLedger {
    rounds: Vec<Totals>,
    open: Totals,
    cumulative: Totals,
}

impl CommLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Count one frame as sent, header included.
    pub fn record_frame(&mut self, dir: Direction, frame: &[u8]) {
        let tag = if frame.len() >= HEADER_LEN { frame[5] } else { u8::MAX };
        let len = frame.len() as u64;
        self.open.add_frame(dir, tag, len);
        self.cumulative.add_frame(dir, tag, len);
    }

    /// Close the open round and return its totals.
    pub fn end_round(&mut self) -> Totals {
        let t = core::mem::take(&mut self.open);
        self.rounds.push(t);
        t
    }

    pub fn rounds(&self) -> &[Totals] {
        &self.rounds
    }

    pub fn open_round(&self) -> &Totals {
        &self.open
    }

    pub fn cumulative(&self) -> &Totals {
        &self.cumulative
    }

    /// Sum of closed rounds plus the open one; equals [`Self::cumulative`].
    pub fn summed_rounds(&self) -> Totals {
        let mut t = Totals::default();
        for r in &self.rounds {
            t.merge(r);
        }
        t.merge(&self.open);
        t
    }
}
