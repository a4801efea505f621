//! Transport contract and its two implementations: in-process loopback
//! queues and a single TCP connection. Both deliver reliable, ordered,
//! bidirectional byte frames (u32 big-endian length prefix) and are
//! behaviorally indistinguishable to the protocol layer.

use crate::error::{Error, Result};
use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::sync::mpsc::{Receiver, Sender, channel};
use std::sync::{Arc, Mutex};

/// Frames larger than this are rejected as corruption.
pub const MAX_FRAME_BYTES: usize = 256 * 1024 * 1024;

pub trait Transport: Send {
    fn send_frame(&mut self, frame: &[u8]) -> Result<()>;
    fn recv_frame(&mut self) -> Result<Vec<u8>>;
}

// ---------------------------------------------------------------------------
// Loopback
// ---------------------------------------------------------------------------

/// One endpoint of an in-process transport pair.
pub struct LoopbackTransport {
    tx: Sender<Vec<u8>>,
    rx: Receiver<Vec<u8>>,
}

/// Connected loopback endpoints.
pub fn loopback_pair() -> (LoopbackTransport, LoopbackTransport) {
    let (tx_a, rx_b) = channel();
    let (tx_b, rx_a) = channel();
    (LoopbackTransport { tx: tx_a, rx: rx_a }, LoopbackTransport { tx: tx_b, rx: rx_b })
}

impl Transport for LoopbackTransport {
    fn send_frame(&mut self, frame: &[u8]) -> Result<()> {
        if frame.len() > MAX_FRAME_BYTES {
            return Err(Error::Transport(format!("frame too large: {} bytes", frame.len())));
        }
        self.tx
            .send(frame.to_vec())
            .map_err(|_| Error::Transport("peer disconnected".into()))
    }

    fn recv_frame(&mut self) -> Result<Vec<u8>> {
        self.rx.recv().map_err(|_| Error::Transport("peer disconnected".into()))
    }
}

// ---------------------------------------------------------------------------
// TCP
// ---------------------------------------------------------------------------

/// One TCP connection carrying length-prefixed frames.
pub struct TcpTransport {
    stream: TcpStream,
}

impl TcpTransport {
    pub fn connect<A: ToSocketAddrs>(addr: A) -> Result<Self> {
        let stream = TcpStream::connect(addr)
            .map_err(|e| Error::Transport(format!("connect failed: {e}")))?;
        stream.set_nodelay(true).ok();
        Ok(TcpTransport { stream })
    }

    /// Binds, accepts exactly one peer, and returns the transport.
    pub fn accept_one<A: ToSocketAddrs>(addr: A) -> Result<Self> {
        let listener =
            TcpListener::bind(addr).map_err(|e| Error::Transport(format!("bind failed: {e}")))?;
        let (stream, _) =
            listener.accept().map_err(|e| Error::Transport(format!("accept failed: {e}")))?;
        stream.set_nodelay(true).ok();
        Ok(TcpTransport { stream })
    }

    /// Binds to an ephemeral port; returns the listener and its address so a
    /// harness can hand the address to the connecting thread.
    pub fn bind_ephemeral() -> Result<(TcpListener, std::net::SocketAddr)> {
        let listener = TcpListener::bind(("127.0.0.1", 0))
            .map_err(|e| Error::Transport(format!("bind failed: {e}")))?;
        let addr =
            listener.local_addr().map_err(|e| Error::Transport(format!("local_addr: {e}")))?;
        Ok((listener, addr))
    }

    pub fn from_listener(listener: &TcpListener) -> Result<Self> {
        let (stream, _) =
            listener.accept().map_err(|e| Error::Transport(format!("accept failed: {e}")))?;
        stream.set_nodelay(true).ok();
        Ok(TcpTransport { stream })
    }
}

impl Transport for TcpTransport {
    fn send_frame(&mut self, frame: &[u8]) -> Result<()> {
        if frame.len() > MAX_FRAME_BYTES {
            return Err(Error::Transport(format!("frame too large: {} bytes", frame.len())));
        }
        let len = (frame.len() as u32).to_be_bytes();
        self.stream
            .write_all(&len)
            .and_then(|_| self.stream.write_all(frame))
            .map_err(|e| Error::Transport(format!("send failed: {e}")))
    }

    fn recv_frame(&mut self) -> Result<Vec<u8>> {
        let mut len_buf = [0u8; 4];
        self.stream.read_exact(&mut len_buf).map_err(|e| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                Error::Transport("peer disconnected".into())
            } else {
                Error::Transport(format!("recv failed: {e}"))
            }
        })?;
        let len = u32::from_be_bytes(len_buf) as usize;
        if len > MAX_FRAME_BYTES {
            return Err(Error::Transport(format!("frame too large: {len} bytes")));
        }
        let mut buf = vec![0u8; len];
        self.stream.read_exact(&mut buf).map_err(|e| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                Error::Transport("peer disconnected mid-frame".into())
            } else {
                Error::Transport(format!("recv failed: {e}"))
            }
        })?;
        Ok(buf)
    }
}

// ---------------------------------------------------------------------------
// Recording wrapper
// ---------------------------------------------------------------------------

/// Shared frame log captured by a [`RecordingTransport`].
pub type FrameLog = Arc<Mutex<Vec<Vec<u8>>>>;

pub fn new_frame_log() -> FrameLog {
    Arc::new(Mutex::new(Vec::new()))
}

/// Wraps another transport and appends every frame (both directions) to a
/// shared log, so the transcript scanner can audit a whole run.
pub struct RecordingTransport<T: Transport> {
    inner: T,
    log: FrameLog,
}

impl<T: Transport> RecordingTransport<T> {
    pub fn new(inner: T, log: FrameLog) -> Self {
        RecordingTransport { inner, log }
    }
}

impl<T: Transport> Transport for RecordingTransport<T> {
    fn send_frame(&mut self, frame: &[u8]) -> Result<()> {
        self.log.lock().expect("frame log poisoned").push(frame.to_vec());
        self.inner.send_frame(frame)
    }

    fn recv_frame(&mut self) -> Result<Vec<u8>> {
        // received frames are the peer's sends; logging only our own sends
        // would record half the transcript when a single endpoint is wrapped
        let frame = self.inner.recv_frame()?;
        self.log.lock().expect("frame log poisoned").push(frame.clone());
        Ok(frame)
    }
}
