//! Wire format and TCP transport for the round protocol.
//!
//! Every frame is
//!
//! ```text
//! u32 length | u8 tag | u16 version | payload
//! ```
//!
//! with all integers and reals little-endian. `length` counts the bytes
//! after the length field (tag + version + payload), so the shortest frame
//! (`Shutdown`) is 7 bytes on the wire. Payloads by tag:
//!
//! | tag | message     | payload                                                                 |
//! |-----|-------------|-------------------------------------------------------------------------|
//! | 1   | Hello       | `u32 client_id, u64 train_size`                                         |
//! | 2   | GlobalModel | `u32 round, vector`                                                     |
//! | 3   | Update      | `u32 round, u32 client_id, u64 train_size, f64 weighted_loss_reduction, u32 n, n × f64 epoch_losses, vector` |
//! | 4   | Shutdown    | empty                                                                   |
//!
//! A `vector` is `u32 dim` followed by `dim` IEEE-754 `f64`s. Decoding is
//! strict: unknown tags, trailing bytes, zero-length vectors and non-finite
//! reals are rejected, so every accepted frame re-encodes to the same bytes.

use std::collections::BTreeSet;
use std::io::{self, Read, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::sync::mpsc;
use std::thread;

use crate::datagen::ClientDataset;
use crate::engine::{
    local_training, round_seed, AlgorithmSpec, ClientUpdate, FederatedRun, RoundExecutor,
    RoundRecord, Server,
};
use crate::error::{Error, Result};
use crate::models::ModelSpec;
use crate::tensor::ParamVector;

pub const PROTOCOL_VERSION: u16 = 1;
/// Largest value of the length field.
pub const MAX_FRAME_LEN: usize = i32::MAX as usize;

const TAG_HELLO: u8 = 1;
const TAG_GLOBAL_MODEL: u8 = 2;
const TAG_UPDATE: u8 = 3;
const TAG_SHUTDOWN: u8 = 4;
const HEADER_LEN: usize = 4 + 1 + 2;

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Hello { client_id: usize, train_size: usize },
    GlobalModel { round: usize, weights: ParamVector },
    Update { round: usize, update: ClientUpdate },
    Shutdown,
}

impl Message {
    fn tag(&self) -> u8 {
        match self {
            Self::Hello { .. } => TAG_HELLO,
            Self::GlobalModel { .. } => TAG_GLOBAL_MODEL,
            Self::Update { .. } => TAG_UPDATE,
            Self::Shutdown => TAG_SHUTDOWN,
        }
    }
}

fn put_u32(buf: &mut Vec<u8>, v: usize, what: &str) -> Result<()> {
    let v =
        u32::try_from(v).map_err(|_| Error::Protocol(format!("{what} {v} does not fit in u32")))?;
    buf.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_f64(buf: &mut Vec<u8>, v: f64) -> Result<()> {
    if !v.is_finite() {
        return Err(Error::NonFiniteResult("encode"));
    }
    buf.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_vector(buf: &mut Vec<u8>, v: &ParamVector) -> Result<()> {
    put_u32(buf, v.dim(), "vector dim")?;
    buf.reserve(8 * v.dim());
    for &x in v.as_slice() {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    Ok(())
}

pub fn encode(msg: &Message) -> Result<Vec<u8>> {
    let mut buf = vec![0u8; 4];
    buf.push(msg.tag());
    buf.extend_from_slice(&PROTOCOL_VERSION.to_le_bytes());
    match msg {
        Message::Hello {
            client_id,
            train_size,
        } => {
            put_u32(&mut buf, *client_id, "client id")?;
            buf.extend_from_slice(&(*train_size as u64).to_le_bytes());
        }
        Message::GlobalModel { round, weights } => {
            put_u32(&mut buf, *round, "round")?;
            put_vector(&mut buf, weights)?;
        }
        Message::Update { round, update } => {
            put_u32(&mut buf, *round, "round")?;
            put_u32(&mut buf, update.client_id, "client id")?;
            buf.extend_from_slice(&(update.train_size as u64).to_le_bytes());
            put_f64(&mut buf, update.weighted_loss_reduction)?;
            put_u32(&mut buf, update.epoch_losses.len(), "epoch count")?;
            for &l in &update.epoch_losses {
                put_f64(&mut buf, l)?;
            }
            put_vector(&mut buf, &update.delta)?;
        }
        Message::Shutdown => {}
    }
    let len = buf.len() - 4;
    if len > MAX_FRAME_LEN {
        return Err(Error::PayloadTooLarge(len));
    }
    buf[..4].copy_from_slice(&(len as u32).to_le_bytes());
    Ok(buf)
}

struct Cursor<'a> {
    bytes: &'a [u8],
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() < n {
            return Err(Error::MalformedFrame(format!("payload ends inside {what}")));
        }
        let (head, tail) = self.bytes.split_at(n);
        self.bytes = tail;
        Ok(head)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()) as usize)
    }

    fn u64(&mut self, what: &str) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8, what)?.try_into().unwrap());
        usize::try_from(v).map_err(|_| Error::MalformedFrame(format!("{what} out of range")))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        let v = f64::from_le_bytes(self.take(8, what)?.try_into().unwrap());
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::MalformedFrame(format!("non-finite {what}")))
        }
    }

    fn vector(&mut self) -> Result<ParamVector> {
        let dim = self.u32("vector dim")?;
        if dim == 0 {
            return Err(Error::MalformedFrame("zero-length vector".into()));
        }
        let raw = self.take(
            dim.checked_mul(8)
                .ok_or_else(|| Error::MalformedFrame("vector too long".into()))?,
            "vector",
        )?;
        let values: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        ParamVector::new(values)
            .map_err(|_| Error::MalformedFrame("non-finite vector entry".into()))
    }

    fn finish(&self) -> Result<()> {
        if self.bytes.is_empty() {
            Ok(())
        } else {
            Err(Error::MalformedFrame(format!(
                "{} trailing payload bytes",
                self.bytes.len()
            )))
        }
    }
}

/// Parse one frame from the front of `bytes`, returning the message and
/// the number of bytes consumed.
pub fn decode_prefix(bytes: &[u8]) -> Result<(Message, usize)> {
    if bytes.len() < 4 {
        return Err(Error::TruncatedFrame {
            needed: 4,
            available: bytes.len(),
        });
    }
    let len = u32::from_le_bytes(bytes[..4].try_into().unwrap()) as usize;
    if len > MAX_FRAME_LEN {
        return Err(Error::MalformedFrame(format!(
            "length {len} exceeds the frame limit"
        )));
    }
    if len < HEADER_LEN - 4 {
        return Err(Error::MalformedFrame(format!(
            "length {len} shorter than the frame header"
        )));
    }
    let total = 4 + len;
    if bytes.len() < total {
        return Err(Error::TruncatedFrame {
            needed: total,
            available: bytes.len(),
        });
    }
    let tag = bytes[4];
    let version = u16::from_le_bytes([bytes[5], bytes[6]]);
    if version != PROTOCOL_VERSION {
        return Err(Error::VersionMismatch {
            expected: PROTOCOL_VERSION,
            actual: version,
        });
    }
    let mut cur = Cursor {
        bytes: &bytes[HEADER_LEN..total],
    };
    let msg = match tag {
        TAG_HELLO => Message::Hello {
            client_id: cur.u32("client id")?,
            train_size: cur.u64("train size")?,
        },
        TAG_GLOBAL_MODEL => Message::GlobalModel {
            round: cur.u32("round")?,
            weights: cur.vector()?,
        },
        TAG_UPDATE => {
            let round = cur.u32("round")?;
            let client_id = cur.u32("client id")?;
            let train_size = cur.u64("train size")?;
            let weighted_loss_reduction = cur.f64("loss reduction")?;
            let n = cur.u32("epoch count")?;
            if n > cur.bytes.len() / 8 {
                return Err(Error::MalformedFrame("epoch count exceeds payload".into()));
            }
            let epoch_losses = (0..n)
                .map(|_| cur.f64("epoch loss"))
                .collect::<Result<Vec<_>>>()?;
            let delta = cur.vector()?;
            Message::Update {
                round,
                update: ClientUpdate {
                    client_id,
                    delta,
                    weighted_loss_reduction,
                    train_size,
                    epoch_losses,
                },
            }
        }
        TAG_SHUTDOWN => Message::Shutdown,
        other => return Err(Error::MalformedFrame(format!("unknown tag {other}"))),
    };
    cur.finish()?;
    Ok((msg, total))
}

/// Parse exactly one frame.
pub fn decode(bytes: &[u8]) -> Result<Message> {
    let (msg, used) = decode_prefix(bytes)?;
    if used != bytes.len() {
        return Err(Error::MalformedFrame(format!(
            "{} bytes after the frame",
            bytes.len() - used
        )));
    }
    Ok(msg)
}

/// Read one frame from a stream. `Ok(None)` on a clean end of stream
/// before the first byte.
pub fn read_message<R: Read>(r: &mut R) -> Result<Option<Message>> {
    let mut len_buf = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match r.read(&mut len_buf[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => {
                return Err(Error::TruncatedFrame {
                    needed: 4,
                    available: got,
                })
            }
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let len = u32::from_le_bytes(len_buf) as usize;
    if len > MAX_FRAME_LEN {
        return Err(Error::MalformedFrame(format!(
            "length {len} exceeds the frame limit"
        )));
    }
    let mut frame = len_buf.to_vec();
    r.take(len as u64).read_to_end(&mut frame)?;
    if frame.len() != 4 + len {
        return Err(Error::TruncatedFrame {
            needed: 4 + len,
            available: frame.len(),
        });
    }
    decode(&frame).map(Some)
}

pub fn write_message<W: Write>(w: &mut W, msg: &Message) -> Result<()> {
    w.write_all(&encode(msg)?)?;
    w.flush()?;
    Ok(())
}

/// Server side of a TCP federation: one reader thread per client feeds a
/// single queue; [`RoundExecutor::collect`] is the round barrier.
pub struct TcpClients {
    writers: Vec<TcpStream>,
    inbox: mpsc::Receiver<(usize, Result<Option<Message>>)>,
}

impl TcpClients {
    /// Accept one connection per entry of `sizes` and check each client's
    /// `Hello` against it.
    pub fn accept(listener: &TcpListener, sizes: &[usize]) -> Result<Self> {
        let n = sizes.len();
        let mut slots: Vec<Option<TcpStream>> = (0..n).map(|_| None).collect();
        while slots.iter().any(Option::is_none) {
            let (mut stream, peer) = listener.accept()?;
            stream.set_nodelay(true)?;
            let hello = read_message(&mut stream)?;
            let Some(Message::Hello {
                client_id,
                train_size,
            }) = hello
            else {
                return Err(Error::Protocol(format!("{peer} did not open with Hello")));
            };
            if client_id >= n || slots[client_id].is_some() {
                return Err(Error::Protocol(format!(
                    "unexpected or duplicate client id {client_id}"
                )));
            }
            if train_size != sizes[client_id] {
                return Err(Error::Protocol(format!(
                    "client {client_id} has {train_size} training examples, expected {}",
                    sizes[client_id]
                )));
            }
            log::info!("client {client_id} connected from {peer}");
            slots[client_id] = Some(stream);
        }

        let (tx, inbox) = mpsc::channel();
        let mut writers = Vec::with_capacity(n);
        for (id, stream) in slots.into_iter().enumerate() {
            let stream = stream.expect("all slots filled");
            let mut reader = stream.try_clone()?;
            let tx = tx.clone();
            thread::spawn(move || loop {
                let msg = read_message(&mut reader);
                let stop = !matches!(msg, Ok(Some(_)));
                if tx.send((id, msg)).is_err() || stop {
                    break;
                }
            });
            writers.push(stream);
        }
        Ok(Self { writers, inbox })
    }

    pub fn shutdown(&mut self) -> Result<()> {
        for w in &mut self.writers {
            write_message(w, &Message::Shutdown)?;
        }
        Ok(())
    }
}

impl RoundExecutor for TcpClients {
    fn collect(
        &mut self,
        round: usize,
        global: &ParamVector,
        participants: &[usize],
    ) -> Result<Vec<ClientUpdate>> {
        let frame = encode(&Message::GlobalModel {
            round,
            weights: global.clone(),
        })?;
        for &id in participants {
            let w = self
                .writers
                .get_mut(id)
                .ok_or_else(|| Error::Protocol(format!("unknown client {id}")))?;
            w.write_all(&frame)
                .map_err(|_| Error::ClientDisconnected(id))?;
        }
        let mut waiting: BTreeSet<usize> = participants.iter().copied().collect();
        let mut updates = Vec::with_capacity(participants.len());
        while !waiting.is_empty() {
            let (id, msg) = self
                .inbox
                .recv()
                .map_err(|_| Error::Protocol("all client readers stopped".into()))?;
            match msg {
                Ok(Some(Message::Update { round: r, update })) => {
                    if r != round || update.client_id != id || !waiting.remove(&id) {
                        return Err(Error::Protocol(format!(
                            "client {id} sent an update for round {r} (client {}) while the server is in round {round}",
                            update.client_id
                        )));
                    }
                    updates.push(update);
                }
                Ok(Some(other)) => {
                    return Err(Error::Protocol(format!(
                        "client {id} sent unexpected {other:?}"
                    )));
                }
                Ok(None) | Err(Error::Io(_)) | Err(Error::TruncatedFrame { .. }) => {
                    return Err(Error::ClientDisconnected(id));
                }
                Err(e) => return Err(e),
            }
        }
        Ok(updates)
    }
}

/// Accept all clients on `listener`, run every round over TCP and send
/// `Shutdown` at the end.
pub fn run_server(
    listener: &TcpListener,
    server: &Server<'_>,
    on_record: impl FnMut(&RoundRecord) -> Result<()>,
) -> Result<FederatedRun> {
    let mut clients = TcpClients::accept(listener, server.sizes)?;
    let run = server.run(&mut clients, on_record)?;
    clients.shutdown()?;
    Ok(run)
}

/// Client loop: say hello, then train on every global model received until
/// the server sends `Shutdown`. Returns the number of rounds served.
pub fn run_client<A: ToSocketAddrs>(
    server_addr: A,
    dataset: &ClientDataset,
    model: &ModelSpec,
    algo: &AlgorithmSpec,
    seed: u64,
) -> Result<usize> {
    let mut stream = TcpStream::connect(server_addr)?;
    stream.set_nodelay(true)?;
    let id = dataset.client_id;
    write_message(
        &mut stream,
        &Message::Hello {
            client_id: id,
            train_size: dataset.size(),
        },
    )?;
    let mut rounds = 0;
    loop {
        match read_message(&mut stream)? {
            Some(Message::GlobalModel { round, weights }) => {
                let update =
                    local_training(dataset, &weights, model, algo, round_seed(seed, round, id))?;
                write_message(&mut stream, &Message::Update { round, update })?;
                rounds += 1;
            }
            Some(Message::Shutdown) => return Ok(rounds),
            Some(other) => {
                return Err(Error::Protocol(format!(
                    "client {id} received unexpected {other:?}"
                )))
            }
            None => {
                return Err(Error::Protocol(
                    "server closed the connection without Shutdown".into(),
                ))
            }
        }
    }
}
