//! Federation protocol: message codec, in-process and TCP transports, and
//! the server/client round loops.
//!
//! The framing is fixed so the overhead claim is checkable on the wire: a
//! client's only post-Hello uplink is a loss report whose payload is
//! 16 + 8·entries bytes, independent of model size.

use std::io::{Read, Write};
use std::net::TcpStream;
use std::sync::mpsc;
use std::time::Duration;

use crate::detrand::CommonSeed;
use crate::error::{ConfigError, Error, ProtocolError};
use crate::escore::{
    aggregate, client_round, sgd_update, ClientWeights, EpsilonSource, LossEntry, LossReport,
    RoundConfig,
};
use crate::nn::{Batch, MlpSpec, ParamVector};

/// Hard cap on a frame payload. Far above any RoundStart this crate emits,
/// but small enough that a corrupt length cannot drive a huge allocation.
pub const MAX_PAYLOAD: u64 = 1 << 29;

const TAG_HELLO: u8 = 0;
const TAG_ROUND_START: u8 = 1;
const TAG_REPORT: u8 = 2;
const TAG_SHUTDOWN: u8 = 3;

/// Protocol messages. Frame layout: payload length (u32 LE), tag (u8),
/// payload. All integers little-endian, floats IEEE-754 LE.
#[derive(Clone, Debug, PartialEq)]
pub enum Message {
    /// First client frame: identity and sample count.
    Hello { client: u32, n_k: u64 },
    /// Server broadcast opening round t with the current parameters.
    RoundStart { t: u64, params: Vec<f32> },
    /// Client uplink for one round.
    Report(LossReport),
    /// Server farewell after the last round.
    Shutdown { final_t: u64 },
}

/// Serializes a message into one frame.
pub fn encode(msg: &Message) -> Vec<u8> {
    let (tag, payload) = match msg {
        Message::Hello { client, n_k } => {
            let mut p = Vec::with_capacity(12);
            p.extend_from_slice(&client.to_le_bytes());
            p.extend_from_slice(&n_k.to_le_bytes());
            (TAG_HELLO, p)
        }
        Message::RoundStart { t, params } => {
            let mut p = Vec::with_capacity(8 + 4 * params.len());
            p.extend_from_slice(&t.to_le_bytes());
            for v in params {
                p.extend_from_slice(&v.to_le_bytes());
            }
            (TAG_ROUND_START, p)
        }
        Message::Report(report) => {
            let mut p = Vec::with_capacity(16 + 8 * report.entries.len());
            p.extend_from_slice(&report.round.to_le_bytes());
            p.extend_from_slice(&report.client.to_le_bytes());
            p.extend_from_slice(&(report.entries.len() as u32).to_le_bytes());
            for e in &report.entries {
                p.extend_from_slice(&e.batch.to_le_bytes());
                p.extend_from_slice(&e.loss.to_le_bytes());
            }
            (TAG_REPORT, p)
        }
        Message::Shutdown { final_t } => (TAG_SHUTDOWN, final_t.to_le_bytes().to_vec()),
    };
    let mut frame = Vec::with_capacity(5 + payload.len());
    frame.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    frame.push(tag);
    frame.extend_from_slice(&payload);
    frame
}

struct PayloadReader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> PayloadReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ProtocolError> {
        if self.bytes.len() - self.at < n {
            return Err(ProtocolError::Malformed {
                len: self.bytes.len(),
                // Offsets count from the frame start: 4 length bytes and
                // the tag precede the payload.
                offset: 5 + self.at as u64,
            });
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, ProtocolError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, ProtocolError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f32(&mut self) -> Result<f32, ProtocolError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn finish(self) -> Result<(), ProtocolError> {
        if self.at != self.bytes.len() {
            return Err(ProtocolError::Malformed {
                len: self.bytes.len(),
                offset: 5 + self.at as u64,
            });
        }
        Ok(())
    }
}

fn parse_payload(tag: u8, payload: &[u8]) -> Result<Message, ProtocolError> {
    let mut r = PayloadReader {
        bytes: payload,
        at: 0,
    };
    let msg = match tag {
        TAG_HELLO => Message::Hello {
            client: r.u32()?,
            n_k: r.u64()?,
        },
        TAG_ROUND_START => {
            let t = r.u64()?;
            let body = payload.len() - 8;
            if body % 4 != 0 {
                return Err(ProtocolError::Malformed {
                    len: payload.len(),
                    offset: 5 + payload.len() as u64,
                });
            }
            let mut params = Vec::with_capacity(body / 4);
            for _ in 0..body / 4 {
                params.push(r.f32()?);
            }
            Message::RoundStart { t, params }
        }
        TAG_REPORT => {
            let round = r.u64()?;
            let client = r.u32()?;
            let count = r.u32()? as usize;
            // Reject before allocating: the declared count must account
            // for the rest of the payload exactly.
            if payload.len() != 16 + 8 * count {
                return Err(ProtocolError::Malformed {
                    len: payload.len(),
                    offset: 5 + 12,
                });
            }
            let mut entries = Vec::with_capacity(count);
            for _ in 0..count {
                entries.push(LossEntry {
                    batch: r.u32()?,
                    loss: r.f32()?,
                });
            }
            Message::Report(LossReport {
                round,
                client,
                entries,
            })
        }
        TAG_SHUTDOWN => Message::Shutdown { final_t: r.u64()? },
        _ => {
            return Err(ProtocolError::UnknownTag {
                tag,
                offset: 4,
            })
        }
    };
    r.finish()?;
    Ok(msg)
}

/// Decodes one frame from the front of `buf`, returning the message and
/// the bytes consumed.
pub fn decode(buf: &[u8]) -> Result<(Message, usize), ProtocolError> {
    if buf.len() < 5 {
        return Err(ProtocolError::Malformed {
            len: buf.len(),
            offset: buf.len() as u64,
        });
    }
    let len = u32::from_le_bytes(buf[..4].try_into().expect("4 bytes")) as u64;
    if len > MAX_PAYLOAD {
        return Err(ProtocolError::Oversize {
            len,
            max: MAX_PAYLOAD,
        });
    }
    let len = len as usize;
    if buf.len() < 5 + len {
        return Err(ProtocolError::Malformed {
            len,
            offset: buf.len() as u64,
        });
    }
    let msg = parse_payload(buf[4], &buf[5..5 + len])?;
    Ok((msg, 5 + len))
}

/// One duplex message channel to a peer. Implementations must preserve
/// frame order.
pub trait FrameLink: Send {
    fn send(&mut self, msg: &Message) -> Result<(), ProtocolError>;
    /// Blocks up to the link's timeout. `Timeout` carries a placeholder
    /// peer id; the server rewrites it to the client it was waiting on.
    fn recv(&mut self) -> Result<Message, ProtocolError>;
}

/// Channel-backed link. Frames are byte-encoded even in process, so both
/// transports exercise the same codec.
pub struct InprocLink {
    tx: mpsc::Sender<Vec<u8>>,
    rx: mpsc::Receiver<Vec<u8>>,
    timeout: Duration,
}

/// Connected pair of in-process links.
pub fn inproc_pair(timeout: Duration) -> (InprocLink, InprocLink) {
    let (left_tx, left_rx) = mpsc::channel();
    let (right_tx, right_rx) = mpsc::channel();
    (
        InprocLink {
            tx: left_tx,
            rx: right_rx,
            timeout,
        },
        InprocLink {
            tx: right_tx,
            rx: left_rx,
            timeout,
        },
    )
}

impl FrameLink for InprocLink {
    fn send(&mut self, msg: &Message) -> Result<(), ProtocolError> {
        self.tx.send(encode(msg)).map_err(|_| ProtocolError::Closed)
    }

    fn recv(&mut self) -> Result<Message, ProtocolError> {
        let frame = self.rx.recv_timeout(self.timeout).map_err(|e| match e {
            mpsc::RecvTimeoutError::Timeout => ProtocolError::Timeout(u32::MAX),
            mpsc::RecvTimeoutError::Disconnected => ProtocolError::Closed,
        })?;
        let (msg, used) = decode(&frame)?;
        if used != frame.len() {
            return Err(ProtocolError::Malformed {
                len: frame.len(),
                offset: used as u64,
            });
        }
        Ok(msg)
    }
}

/// Socket-backed link with a per-read timeout.
pub struct TcpLink {
    stream: TcpStream,
}

impl TcpLink {
    pub fn new(stream: TcpStream, timeout: Duration) -> Result<Self, ProtocolError> {
        stream.set_nodelay(true)?;
        stream.set_read_timeout(Some(timeout))?;
        Ok(TcpLink { stream })
    }

    fn read_exact(&mut self, out: &mut [u8]) -> Result<(), ProtocolError> {
        self.stream.read_exact(out).map_err(|e| match e.kind() {
            std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut => {
                ProtocolError::Timeout(u32::MAX)
            }
            std::io::ErrorKind::UnexpectedEof => ProtocolError::Closed,
            _ => ProtocolError::Io(e),
        })
    }
}

impl FrameLink for TcpLink {
    fn send(&mut self, msg: &Message) -> Result<(), ProtocolError> {
        self.stream.write_all(&encode(msg))?;
        Ok(())
    }

    fn recv(&mut self) -> Result<Message, ProtocolError> {
        let mut head = [0u8; 5];
        self.read_exact(&mut head)?;
        let len = u32::from_le_bytes(head[..4].try_into().expect("4 bytes")) as u64;
        if len > MAX_PAYLOAD {
            return Err(ProtocolError::Oversize {
                len,
                max: MAX_PAYLOAD,
            });
        }
        let mut payload = vec![0u8; len as usize];
        self.read_exact(&mut payload)?;
        parse_payload(head[4], &payload)
    }
}

/// What the server does when a client misses its round deadline.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum TimeoutPolicy {
    /// Fail the run (every client reports every round, as specified).
    #[default]
    Abort,
    /// Drop the client for that round and renormalize the remaining
    /// weights. Late reports for past rounds are discarded.
    Skip,
}

/// Per-round communication accounting, in scalars (f32 on the wire).
#[derive(Clone, Debug, PartialEq)]
pub struct RoundOutcome {
    pub t: u64,
    /// Largest per-client uplink this round: the entry count of the
    /// biggest report.
    pub uplink_per_client: u64,
    /// Parameters broadcast to each client.
    pub downlink_per_client: u64,
    pub skipped: Vec<u32>,
}

struct PeerSlot {
    link: Box<dyn FrameLink>,
    client: u32,
}

/// Runs the server side: Hello handshake, then `rounds` rounds of
/// broadcast, collect, aggregate, update, with `on_round` observing each
/// updated parameter vector.
pub fn server_run<S: EpsilonSource>(
    links: Vec<Box<dyn FrameLink>>,
    w0: ParamVector,
    cfg: &RoundConfig,
    rounds: u64,
    source: &S,
    policy: TimeoutPolicy,
    mut on_round: impl FnMut(&ParamVector, &RoundOutcome) -> Result<(), Error>,
) -> Result<ParamVector, Error> {
    if links.is_empty() {
        return Err(ConfigError::NoClients.into());
    }
    let clients = links.len() as u32;
    let mut slots = Vec::with_capacity(links.len());
    let mut counts = vec![0u64; links.len()];
    for mut link in links {
        match link.recv().map_err(Error::from)? {
            Message::Hello { client, n_k } => {
                if client >= clients {
                    return Err(ProtocolError::ClientRange { client, clients }.into());
                }
                if slots.iter().any(|s: &PeerSlot| s.client == client) {
                    return Err(ProtocolError::DuplicateClient(client).into());
                }
                counts[client as usize] = n_k;
                slots.push(PeerSlot { link, client });
            }
            other => {
                return Err(ProtocolError::Unexpected {
                    got: tag_name(&other),
                    want: "hello",
                }
                .into())
            }
        }
    }
    slots.sort_by_key(|s| s.client);
    let weights = ClientWeights::from_sample_counts(&counts, cfg.n_b())?;

    let mut w = w0;
    for t in 1..=rounds {
        let round_cfg = cfg.with_round(t);
        let mut live = vec![true; slots.len()];
        for (i, slot) in slots.iter_mut().enumerate() {
            let sent = slot.link.send(&Message::RoundStart {
                t,
                params: w.values().to_vec(),
            });
            match sent {
                Ok(()) => {}
                Err(e) if policy == TimeoutPolicy::Skip => {
                    let _ = e;
                    live[i] = false;
                }
                Err(e) => return Err(e.into()),
            }
        }

        let mut reports = Vec::with_capacity(slots.len());
        for (i, slot) in slots.iter_mut().enumerate() {
            if !live[i] {
                continue;
            }
            loop {
                match slot.link.recv() {
                    Ok(Message::Report(r)) if policy == TimeoutPolicy::Skip && r.round < t => {
                        // Late uplink from a round this client was skipped
                        // in; discard and keep waiting for the current one.
                        continue;
                    }
                    Ok(Message::Report(r)) => {
                        reports.push(r);
                        break;
                    }
                    Ok(other) => {
                        return Err(ProtocolError::Unexpected {
                            got: tag_name(&other),
                            want: "report",
                        }
                        .into())
                    }
                    Err(ProtocolError::Timeout(_)) | Err(ProtocolError::Closed)
                        if policy == TimeoutPolicy::Skip =>
                    {
                        live[i] = false;
                        break;
                    }
                    Err(ProtocolError::Timeout(_)) => {
                        return Err(ProtocolError::Timeout(slot.client).into())
                    }
                    Err(e) => return Err(e.into()),
                }
            }
        }

        let round_weights = if live.iter().all(|&l| l) {
            weights.clone()
        } else {
            weights.restrict(&live)?
        };
        let g = aggregate(&reports, &round_cfg, &round_weights, source, w.len())?;
        let g = ParamVector::from_values(w.spec(), g).expect("aggregate output length");
        w = sgd_update(&w, &g, &round_cfg)?;

        let outcome = RoundOutcome {
            t,
            uplink_per_client: reports.iter().map(|r| r.entries.len() as u64).max().unwrap_or(0),
            downlink_per_client: w.len() as u64,
            skipped: slots
                .iter()
                .zip(&live)
                .filter(|(_, &l)| !l)
                .map(|(s, _)| s.client)
                .collect(),
        };
        on_round(&w, &outcome)?;
    }

    for slot in &mut slots {
        // A client that already vanished cannot block the farewell.
        let _ = slot.link.send(&Message::Shutdown { final_t: rounds });
    }
    Ok(w)
}

/// Runs the client side: Hello, then answer every RoundStart with a loss
/// report until Shutdown.
pub fn client_run(
    link: &mut dyn FrameLink,
    k: u32,
    cfg: &RoundConfig,
    common: &CommonSeed,
    spec: &MlpSpec,
    shard: &[Batch],
) -> Result<(), Error> {
    if shard.is_empty() {
        return Err(ConfigError::EmptyShard { client: k }.into());
    }
    let n_k: u64 = shard.iter().map(|b| b.len() as u64).sum();
    link.send(&Message::Hello { client: k, n_k })
        .map_err(Error::from)?;
    let want = spec.param_count() as usize;
    loop {
        match link.recv().map_err(Error::from)? {
            Message::RoundStart { t, params } => {
                if params.len() != want {
                    return Err(ProtocolError::ParamLen {
                        got: params.len(),
                        want,
                    }
                    .into());
                }
                let w = ParamVector::from_values(spec, params).expect("length checked");
                let report = client_round(k, &w, &cfg.with_round(t), common, shard)?;
                link.send(&Message::Report(report)).map_err(Error::from)?;
            }
            Message::Shutdown { .. } => return Ok(()),
            other => {
                return Err(ProtocolError::Unexpected {
                    got: tag_name(&other),
                    want: "round start or shutdown",
                }
                .into())
            }
        }
    }
}

fn tag_name(msg: &Message) -> &'static str {
    match msg {
        Message::Hello { .. } => "hello",
        Message::RoundStart { .. } => "round start",
        Message::Report(_) => "report",
        Message::Shutdown { .. } => "shutdown",
    }
}
