//! Threaded in-process and TCP realizations of [`Transport`].

use std::io::{self, BufReader, BufWriter, ErrorKind, Read, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::sync::mpsc::{channel, Receiver, Sender};

use hosl_core::protocol::{parse_header, ProtocolError, Transport, TransportError, HEADER_LEN};

/// One end of an in-memory duplex queue.
#[derive(Debug)]
pub struct InProcess {
    tx: Sender<Vec<u8>>,
    rx: Receiver<Vec<u8>>,
}

/// Two connected ends. Dropping one makes the other see `Closed`.
pub fn in_process_pair() -> (InProcess, InProcess) {
    let (atx, brx) = channel();
    let (btx, arx) = channel();
    (InProcess { tx: atx, rx: arx }, InProcess { tx: btx, rx: brx })
}

impl Transport for InProcess {
    fn send_frame(&mut self, frame: &[u8]) -> Result<(), TransportError> {
        self.tx.send(frame.to_vec()).map_err(|_| TransportError::Closed)
    }

    fn recv_frame(&mut self) -> Result<Vec<u8>, TransportError> {
        self.rx.recv().map_err(|_| TransportError::Closed)
    }
}

/// A framed TCP stream.
#[derive(Debug)]
pub struct Tcp {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
}

fn io_err(e: io::Error) -> TransportError {
    match e.kind() {
        ErrorKind::BrokenPipe | ErrorKind::ConnectionReset | ErrorKind::ConnectionAborted | ErrorKind::UnexpectedEof => {
            TransportError::Closed
        }
        _ => TransportError::Io(e.to_string()),
    }
}

impl Tcp {
    pub fn from_stream(stream: TcpStream) -> io::Result<Self> {
        stream.set_nodelay(true)?;
        Ok(Self {
            reader: BufReader::new(stream.try_clone()?),
            writer: BufWriter::new(stream),
        })
    }

    pub fn connect(addr: impl ToSocketAddrs) -> io::Result<Self> {
        Self::from_stream(TcpStream::connect(addr)?)
    }

    /// Accept exactly one connection.
    pub fn accept(listener: &TcpListener) -> io::Result<Self> {
        let (stream, _) = listener.accept()?;
        Self::from_stream(stream)
    }

    /// Fill `buf` completely. `Ok(false)` if the stream ended before the
    /// first byte.
    fn read_full(&mut self, buf: &mut [u8]) -> Result<bool, TransportError> {
        let mut got = 0;
        while got < buf.len() {
            match self.reader.read(&mut buf[got..]) {
                Ok(0) if got == 0 => return Ok(false),
                Ok(0) => {
                    return Err(ProtocolError::Truncated {
                        needed: buf.len(),
                        available: got,
                    }
                    .into())
                }
                Ok(n) => got += n,
                Err(e) if e.kind() == ErrorKind::Interrupted => {}
                Err(e) => return Err(io_err(e)),
            }
        }
        Ok(true)
    }
}

impl Transport for Tcp {
    fn send_frame(&mut self, frame: &[u8]) -> Result<(), TransportError> {
        self.writer.write_all(frame).map_err(io_err)?;
        self.writer.flush().map_err(io_err)
    }

    fn recv_frame(&mut self) -> Result<Vec<u8>, TransportError> {
        let mut frame = vec![0u8; HEADER_LEN];
        if !self.read_full(&mut frame)? {
            return Err(TransportError::Closed);
        }
        let (_, len) = parse_header(&frame)?;
        frame.resize(HEADER_LEN + len, 0);
        if len > 0 && !self.read_full(&mut frame[HEADER_LEN..])? {
            return Err(ProtocolError::Truncated {
                needed: HEADER_LEN + len,
                available: HEADER_LEN,
            }
            .into());
        }
        Ok(frame)
    }
}
