//! Framed, byte-accounted channels between the parties.
//!
//! Every frame is a 13-byte header (type tag, session id, big-endian payload
//! length) followed by the payload. Two channel kinds share one trait: an
//! in-memory pair for single-process runs and a TCP stream.

use std::fmt;
use std::io::{self, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc;
use std::sync::{Arc, Mutex};

use thiserror::Error;

pub const HEADER_BYTES: usize = 13;
pub const MAX_PAYLOAD_BYTES: usize = 64 << 20;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TransportError {
    #[error("channel closed")]
    ChannelClosed,
    #[error("frame payload of {0} bytes exceeds the 64 MiB limit")]
    FrameTooLarge(usize),
    #[error("unknown message type {0}")]
    UnknownType(u8),
    #[error("cannot bind {addr}: {reason}")]
    BindFailure { addr: String, reason: String },
    #[error("cannot connect to {addr}: {reason}")]
    ConnectFailure { addr: String, reason: String },
    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T, E = TransportError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum MessageType {
    TreeUpload = 1,
    TreeAck = 2,
    QueryStart = 3,
    MaskedValue = 4,
    GarbledCircuit = 5,
    OtReceiverMsg = 6,
    OtSenderMsg = 7,
    Result = 8,
    Error = 9,
}

impl MessageType {
    pub const ALL: [MessageType; 9] = [
        MessageType::TreeUpload,
        MessageType::TreeAck,
        MessageType::QueryStart,
        MessageType::MaskedValue,
        MessageType::GarbledCircuit,
        MessageType::OtReceiverMsg,
        MessageType::OtSenderMsg,
        MessageType::Result,
        MessageType::Error,
    ];

    pub fn tag(self) -> u8 {
        self as u8
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        Self::ALL
            .get(usize::from(tag).wrapping_sub(1))
            .copied()
            .ok_or(TransportError::UnknownType(tag))
    }

    pub fn name(self) -> &'static str {
        match self {
            MessageType::TreeUpload => "TREE_UPLOAD",
            MessageType::TreeAck => "TREE_ACK",
            MessageType::QueryStart => "QUERY_START",
            MessageType::MaskedValue => "MASKED_VALUE",
            MessageType::GarbledCircuit => "GARBLED_CIRCUIT",
            MessageType::OtReceiverMsg => "OT_RECEIVER_MSG",
            MessageType::OtSenderMsg => "OT_SENDER_MSG",
            MessageType::Result => "RESULT",
            MessageType::Error => "ERROR",
        }
    }
}

impl fmt::Display for MessageType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub kind: MessageType,
    pub session: u64,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(kind: MessageType, session: u64, payload: Vec<u8>) -> Self {
        Self {
            kind,
            session,
            payload,
        }
    }

    /// Header plus payload.
    pub fn wire_len(&self) -> usize {
        HEADER_BYTES + self.payload.len()
    }

    fn check_size(&self) -> Result<()> {
        if self.payload.len() > MAX_PAYLOAD_BYTES {
            Err(TransportError::FrameTooLarge(self.payload.len()))
        } else {
            Ok(())
        }
    }

    pub fn header(&self) -> [u8; HEADER_BYTES] {
        let mut h = [0u8; HEADER_BYTES];
        h[0] = self.kind.tag();
        h[1..9].copy_from_slice(&self.session.to_be_bytes());
        h[9..].copy_from_slice(&(self.payload.len() as u32).to_be_bytes());
        h
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        self.check_size()?;
        let mut out = Vec::with_capacity(self.wire_len());
        out.extend_from_slice(&self.header());
        out.extend_from_slice(&self.payload);
        Ok(out)
    }

    /// Decodes exactly one frame occupying all of `bytes`.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut cursor = bytes;
        let frame = Self::read_from(&mut cursor)?;
        if !cursor.is_empty() {
            return Err(TransportError::Io("trailing bytes after frame".into()));
        }
        Ok(frame)
    }

    pub fn write_to<W: Write + ?Sized>(&self, w: &mut W) -> Result<()> {
        self.check_size()?;
        w.write_all(&self.header()).map_err(io_error)?;
        w.write_all(&self.payload).map_err(io_error)?;
        w.flush().map_err(io_error)
    }

    pub fn read_from<R: Read + ?Sized>(r: &mut R) -> Result<Self> {
        let mut h = [0u8; HEADER_BYTES];
        r.read_exact(&mut h).map_err(io_error)?;
        let kind = MessageType::from_tag(h[0])?;
        let session = u64::from_be_bytes(h[1..9].try_into().expect("8 bytes"));
        let len = u32::from_be_bytes(h[9..].try_into().expect("4 bytes")) as usize;
        if len > MAX_PAYLOAD_BYTES {
            return Err(TransportError::FrameTooLarge(len));
        }
        let mut payload = vec![0u8; len];
        r.read_exact(&mut payload).map_err(io_error)?;
        Ok(Self {
            kind,
            session,
            payload,
        })
    }
}

fn io_error(e: io::Error) -> TransportError {
    match e.kind() {
        io::ErrorKind::UnexpectedEof
        | io::ErrorKind::BrokenPipe
        | io::ErrorKind::ConnectionReset
        | io::ErrorKind::ConnectionAborted => TransportError::ChannelClosed,
        _ => TransportError::Io(e.to_string()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Party {
    CertifiedInstitution,
    CloudServer,
    Researcher,
}

impl fmt::Display for Party {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Party::CertifiedInstitution => "CI",
            Party::CloudServer => "CS",
            Party::Researcher => "Researcher",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TranscriptEntry {
    pub from: Party,
    pub to: Party,
    pub kind: MessageType,
    /// Bytes on the wire, header included.
    pub bytes: usize,
    pub session: u64,
    /// Preorder index of the tree node the message concerns, if any.
    pub node: Option<u32>,
    /// Raw payload, kept only by capturing transcripts.
    pub payload: Option<Vec<u8>>,
}

/// Ordered log of sent frames, shared by every channel it is attached to.
#[derive(Debug, Clone, Default)]
pub struct Transcript {
    entries: Arc<Mutex<Vec<TranscriptEntry>>>,
    capture: bool,
}

impl Transcript {
    pub fn new() -> Self {
        Self::default()
    }

    /// A transcript that also keeps every payload, for auditing.
    pub fn capturing() -> Self {
        Self {
            entries: Arc::default(),
            capture: true,
        }
    }

    fn record(&self, from: Party, to: Party, frame: &Frame, node: Option<u32>) {
        let entry = TranscriptEntry {
            from,
            to,
            kind: frame.kind,
            bytes: frame.wire_len(),
            session: frame.session,
            node,
            payload: self.capture.then(|| frame.payload.clone()),
        };
        self.entries.lock().expect("transcript lock").push(entry);
    }

    pub fn entries(&self) -> Vec<TranscriptEntry> {
        self.entries.lock().expect("transcript lock").clone()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("transcript lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn total_bytes(&self) -> u64 {
        self.entries
            .lock()
            .expect("transcript lock")
            .iter()
            .map(|e| e.bytes as u64)
            .sum()
    }

    /// Bytes sent in either direction between two parties.
    pub fn bytes_between(&self, a: Party, b: Party) -> u64 {
        self.entries
            .lock()
            .expect("transcript lock")
            .iter()
            .filter(|e| (e.from, e.to) == (a, b) || (e.from, e.to) == (b, a))
            .map(|e| e.bytes as u64)
            .sum()
    }

    pub fn count(&self, kind: MessageType) -> usize {
        self.entries
            .lock()
            .expect("transcript lock")
            .iter()
            .filter(|e| e.kind == kind)
            .count()
    }

    pub fn clear(&self) {
        self.entries.lock().expect("transcript lock").clear();
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Sent,
    Received,
}

/// Cumulative bytes per direction and message type, headers included.
#[derive(Debug, Default)]
pub struct ByteCounter {
    totals: [[AtomicU64; 9]; 2],
}

impl ByteCounter {
    pub fn new() -> Self {
        Self::default()
    }

    fn add(&self, direction: Direction, kind: MessageType, bytes: usize) {
        self.totals[direction as usize][usize::from(kind.tag()) - 1]
            .fetch_add(bytes as u64, Ordering::Relaxed);
    }

    pub fn get(&self, direction: Direction, kind: MessageType) -> u64 {
        self.totals[direction as usize][usize::from(kind.tag()) - 1].load(Ordering::Relaxed)
    }

    pub fn total(&self, direction: Direction) -> u64 {
        MessageType::ALL.iter().map(|&k| self.get(direction, k)).sum()
    }
}

/// Who is on each end of a channel, and where its traffic is logged.
#[derive(Debug, Clone)]
pub struct Endpoint {
    pub local: Party,
    pub remote: Party,
    pub transcript: Transcript,
    pub counter: Arc<ByteCounter>,
}

impl Endpoint {
    pub fn new(local: Party, remote: Party, transcript: Transcript) -> Self {
        Self {
            local,
            remote,
            transcript,
            counter: Arc::default(),
        }
    }

    fn on_send(&self, frame: &Frame, node: Option<u32>) {
        self.counter.add(Direction::Sent, frame.kind, frame.wire_len());
        self.transcript.record(self.local, self.remote, frame, node);
    }

    fn on_receive(&self, frame: &Frame) {
        self.counter.add(Direction::Received, frame.kind, frame.wire_len());
    }
}

/// One end of a bidirectional, ordered frame stream.
pub trait Channel: Send {
    /// Sends a frame, tagging the transcript entry with a tree node index.
    fn send_annotated(&mut self, frame: Frame, node: Option<u32>) -> Result<()>;

    fn recv(&mut self) -> Result<Frame>;

    fn endpoint(&self) -> &Endpoint;

    fn send(&mut self, frame: Frame) -> Result<()> {
        self.send_annotated(frame, None)
    }
}

impl<C: Channel + ?Sized> Channel for &mut C {
    fn send_annotated(&mut self, frame: Frame, node: Option<u32>) -> Result<()> {
        (**self).send_annotated(frame, node)
    }

    fn recv(&mut self) -> Result<Frame> {
        (**self).recv()
    }

    fn endpoint(&self) -> &Endpoint {
        (**self).endpoint()
    }
}

impl<C: Channel + ?Sized> Channel for Box<C> {
    fn send_annotated(&mut self, frame: Frame, node: Option<u32>) -> Result<()> {
        (**self).send_annotated(frame, node)
    }

    fn recv(&mut self) -> Result<Frame> {
        (**self).recv()
    }

    fn endpoint(&self) -> &Endpoint {
        (**self).endpoint()
    }
}

pub struct MemoryChannel {
    endpoint: Endpoint,
    tx: mpsc::Sender<Frame>,
    rx: mpsc::Receiver<Frame>,
}

/// Two connected in-memory ends sharing one transcript.
pub fn memory_pair(a: Party, b: Party, transcript: &Transcript) -> (MemoryChannel, MemoryChannel) {
    let (tx_ab, rx_ab) = mpsc::channel();
    let (tx_ba, rx_ba) = mpsc::channel();
    (
        MemoryChannel {
            endpoint: Endpoint::new(a, b, transcript.clone()),
            tx: tx_ab,
            rx: rx_ba,
        },
        MemoryChannel {
            endpoint: Endpoint::new(b, a, transcript.clone()),
            tx: tx_ba,
            rx: rx_ab,
        },
    )
}

impl Channel for MemoryChannel {
    fn send_annotated(&mut self, frame: Frame, node: Option<u32>) -> Result<()> {
        frame.check_size()?;
        self.endpoint.on_send(&frame, node);
        self.tx.send(frame).map_err(|_| TransportError::ChannelClosed)
    }

    fn recv(&mut self) -> Result<Frame> {
        let frame = self.rx.recv().map_err(|_| TransportError::ChannelClosed)?;
        self.endpoint.on_receive(&frame);
        Ok(frame)
    }

    fn endpoint(&self) -> &Endpoint {
        &self.endpoint
    }
}

/// Counts raw bytes passing through a stream.
struct Counted<S> {
    inner: S,
    bytes: Arc<AtomicU64>,
}

impl<S: Read> Read for Counted<S> {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        let n = self.inner.read(buf)?;
        self.bytes.fetch_add(n as u64, Ordering::Relaxed);
        Ok(n)
    }
}

impl<S: Write> Write for Counted<S> {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        let n = self.inner.write(buf)?;
        self.bytes.fetch_add(n as u64, Ordering::Relaxed);
        Ok(n)
    }

    fn flush(&mut self) -> io::Result<()> {
        self.inner.flush()
    }
}

pub struct TcpChannel {
    endpoint: Endpoint,
    reader: io::BufReader<Counted<TcpStream>>,
    writer: io::BufWriter<Counted<TcpStream>>,
    read_bytes: Arc<AtomicU64>,
    written_bytes: Arc<AtomicU64>,
}

impl TcpChannel {
    pub fn from_stream(stream: TcpStream, endpoint: Endpoint) -> Result<Self> {
        stream.set_nodelay(true).map_err(io_error)?;
        let read_bytes = Arc::<AtomicU64>::default();
        let written_bytes = Arc::<AtomicU64>::default();
        let reader = Counted {
            inner: stream.try_clone().map_err(io_error)?,
            bytes: read_bytes.clone(),
        };
        let writer = Counted {
            inner: stream,
            bytes: written_bytes.clone(),
        };
        Ok(Self {
            endpoint,
            reader: io::BufReader::new(reader),
            writer: io::BufWriter::new(writer),
            read_bytes,
            written_bytes,
        })
    }

    pub fn connect<A: ToSocketAddrs + fmt::Debug>(addr: A, endpoint: Endpoint) -> Result<Self> {
        let stream = TcpStream::connect(&addr).map_err(|e| TransportError::ConnectFailure {
            addr: format!("{addr:?}"),
            reason: e.to_string(),
        })?;
        Self::from_stream(stream, endpoint)
    }

    /// Raw bytes read from and written to the socket so far.
    pub fn wire_bytes(&self) -> (u64, u64) {
        (
            self.read_bytes.load(Ordering::Relaxed),
            self.written_bytes.load(Ordering::Relaxed),
        )
    }

    pub fn peer_addr(&self) -> Option<SocketAddr> {
        self.writer.get_ref().inner.peer_addr().ok()
    }
}

impl Channel for TcpChannel {
    fn send_annotated(&mut self, frame: Frame, node: Option<u32>) -> Result<()> {
        frame.check_size()?;
        // Log before writing so the entry precedes the peer's reply.
        self.endpoint.on_send(&frame, node);
        frame.write_to(&mut self.writer)
    }

    fn recv(&mut self) -> Result<Frame> {
        let frame = Frame::read_from(&mut self.reader)?;
        self.endpoint.on_receive(&frame);
        Ok(frame)
    }

    fn endpoint(&self) -> &Endpoint {
        &self.endpoint
    }
}

pub struct Listener {
    inner: TcpListener,
}

pub fn listen<A: ToSocketAddrs + fmt::Debug>(addr: A) -> Result<Listener> {
    TcpListener::bind(&addr)
        .map(|inner| Listener { inner })
        .map_err(|e| TransportError::BindFailure {
            addr: format!("{addr:?}"),
            reason: e.to_string(),
        })
}

pub fn connect<A: ToSocketAddrs + fmt::Debug>(addr: A, endpoint: Endpoint) -> Result<TcpChannel> {
    TcpChannel::connect(addr, endpoint)
}

impl Listener {
    pub fn local_addr(&self) -> Result<SocketAddr> {
        self.inner.local_addr().map_err(io_error)
    }

    /// Blocks for the next connection; each gets its own channel.
    pub fn accept(&self, endpoint: Endpoint) -> Result<TcpChannel> {
        let (stream, _) = self.inner.accept().map_err(io_error)?;
        TcpChannel::from_stream(stream, endpoint)
    }
}
