use alloc::collections::VecDeque;
use alloc::vec::Vec;

use super::{RoleError, ServerEndpoint};
use crate::model::ServerModel;
use crate::protocol::{decode, encode, Transport, TransportError};

/// A transport with the server on the far end, run synchronously inside
/// `send_frame`.
///
/// Frames are really encoded and decoded, so the bytes seen by a client
/// channel match any other transport. A server error closes the connection,
/// as a remote server would; the error is kept for inspection.
#[derive(Debug)]
pub struct Loopback<S> {
    server: ServerEndpoint<S>,
    replies: VecDeque<Vec<u8>>,
    server_error: Option<RoleError>,
}

impl<S: ServerModel> Loopback<S> {
    pub fn new(server: ServerEndpoint<S>) -> Self {
        Self {
            server,
            replies: VecDeque::new(),
            server_error: None,
        }
    }

    pub fn server(&self) -> &ServerEndpoint<S> {
        &self.server
    }

    pub fn server_error(&self) -> Option<&RoleError> {
        self.server_error.as_ref()
    }

    pub fn into_server(self) -> ServerEndpoint<S> {
        self.server
    }

    fn serve(&mut self, frame: &[u8]) -> Result<Vec<u8>, RoleError> {
        let msg = decode(frame)?;
        let reply = self.server.handle(msg)?;
        Ok(encode(&reply)?)
    }
}

impl<S: ServerModel> Transport for Loopback<S> {
    fn send_frame(&mut self, frame: &[u8]) -> Result<(), TransportError> {
        if self.server_error.is_some() {
            return Err(TransportError::Closed);
        }
        match self.serve(frame) {
            Ok(reply) => self.replies.push_back(reply),
            Err(e) => self.server_error = Some(e),
        }
        Ok(())
    }

    fn recv_frame(&mut self) -> Result<Vec<u8>, TransportError> {
        self.replies.pop_front().ok_or(TransportError::Closed)
    }
}
