//! Station state machines.

use std::io::{self, Read, Write};
use std::time::Duration;

use sha2::{Digest, Sha256};
use thiserror::Error;

use super::frame::{
    read_frame, write_frame, BatchPayload, Frame, FrameError, FrameKind, PaParamsPayload,
};
use crate::bitpool::{
    self, BitPoolError, BitPoolState, NoiseSource, PaMode, RoundOutput, RoundParams,
};
use crate::bits::{self, BitStr};
use crate::codec::{AdcCode, CodecError, MaryConfig};
use crate::security::AttackStats;

/// Read timeout transports should apply unless configured otherwise.
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

const ERR_CONFIG: u8 = 1;
const ERR_TRANSCRIPT: u8 = 2;
const ERR_OTHER: u8 = 3;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("peer configuration differs")]
    ConfigMismatch,
    #[error("distilled outputs differ between stations")]
    TranscriptMismatch,
    #[error("expected round {expected}, peer is at round {got}")]
    RoundMismatch { expected: u64, got: u64 },
    #[error("expected {expected:?} frame, got {got:?}")]
    UnexpectedFrame { expected: FrameKind, got: FrameKind },
    #[error("peer reported: {0}")]
    Peer(String),
    #[error("timed out waiting for peer")]
    Timeout,
    #[error("transcript is incomplete: {0}")]
    IncompleteTranscript(&'static str),
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error(transparent)]
    BitPool(#[from] BitPoolError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error("transport: {0}")]
    Io(io::Error),
}

impl From<io::Error> for SessionError {
    fn from(e: io::Error) -> Self {
        match e.kind() {
            io::ErrorKind::TimedOut | io::ErrorKind::WouldBlock => SessionError::Timeout,
            io::ErrorKind::InvalidData => match e.into_inner() {
                Some(inner) => match inner.downcast::<FrameError>() {
                    Ok(fe) => SessionError::Frame(*fe),
                    Err(other) => SessionError::Io(io::Error::new(io::ErrorKind::InvalidData, other)),
                },
                None => SessionError::Io(io::ErrorKind::InvalidData.into()),
            },
            _ => SessionError::Io(e),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Tx,
    Rx,
    Tap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Idle,
    Batch,
    Distill,
    Done,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SessionOptions {
    /// Bits added to `λ` to cover what the confirmation digest reveals.
    pub digest_allowance: u64,
    /// Codes per `BATCH` frame.
    pub batch_size: usize,
}

impl Default for SessionOptions {
    fn default() -> Self {
        Self {
            digest_allowance: 256,
            batch_size: 1 << 16,
        }
    }
}

/// Digest both stations exchange in `HELLO`.
pub fn config_digest(cfg: &MaryConfig, a: usize, mode: PaMode) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(b"mary-kd/hello/v1");
    h.update([cfg.bits_per_basis() as u8, cfg.adc_bits() as u8, mode.to_byte()]);
    h.update(cfg.b_max().to_be_bytes());
    h.update((a as u64).to_be_bytes());
    h.finalize().into()
}

/// Digest of a distilled round, sent by RX in its `ACK`.
pub fn output_digest(out: &RoundOutput) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(b"mary-kd/ack/v1");
    h.update(out.round_index.to_be_bytes());
    h.update((out.z_bits.len() as u64).to_be_bytes());
    h.update(bits::pack(&out.z_bits));
    h.update(bits::pack(&out.new_basis_bits));
    h.finalize().into()
}

/// One station's view of the link.
#[derive(Debug, Clone)]
pub struct SessionState {
    role: Role,
    pool: BitPoolState,
    mode: PaMode,
    digest: [u8; 32],
    phase: Phase,
    record: bool,
    transcript: Vec<u8>,
}

impl SessionState {
    pub fn new(role: Role, pool: BitPoolState, mode: PaMode) -> Self {
        let digest = config_digest(pool.config(), pool.a(), mode);
        Self {
            role,
            pool,
            mode,
            digest,
            phase: Phase::Idle,
            record: false,
            transcript: Vec::new(),
        }
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn pool(&self) -> &BitPoolState {
        &self.pool
    }

    pub fn into_pool(self) -> BitPoolState {
        self.pool
    }

    pub fn mode(&self) -> PaMode {
        self.mode
    }

    pub fn config_digest(&self) -> &[u8; 32] {
        &self.digest
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    /// Keep a copy of every frame sent or received, in wire order.
    pub fn set_recording(&mut self, on: bool) {
        self.record = on;
    }

    pub fn transcript(&self) -> &[u8] {
        &self.transcript
    }

    pub fn take_transcript(&mut self) -> Vec<u8> {
        std::mem::take(&mut self.transcript)
    }

    /// Installs a round served with [`serve_round`].
    pub fn commit(&mut self, prepared: &PreparedRound) -> Result<(), SessionError> {
        self.pool.commit(&prepared.output)?;
        Ok(())
    }

    fn round(&self) -> u32 {
        self.pool.round_index() as u32
    }

    fn send<T: Write>(&mut self, t: &mut T, kind: FrameKind, seq: u32, payload: Vec<u8>) -> Result<(), SessionError> {
        let bytes = write_frame(t, &Frame::new(kind, self.round(), seq, payload))?;
        if self.record {
            self.transcript.extend_from_slice(&bytes);
        }
        Ok(())
    }

    fn recv<T: Read>(&mut self, t: &mut T) -> Result<Frame, SessionError> {
        let (frame, bytes) = read_frame(t)?;
        if self.record {
            self.transcript.extend_from_slice(&bytes);
        }
        Ok(frame)
    }

    /// Receives a frame of `kind`; `ERROR` frames become the matching error.
    fn expect<T: Read>(&mut self, t: &mut T, kind: FrameKind) -> Result<Frame, SessionError> {
        let frame = self.recv(t)?;
        if frame.kind == FrameKind::Error {
            return Err(peer_error(&frame.payload));
        }
        if frame.kind != kind {
            return Err(SessionError::UnexpectedFrame {
                expected: kind,
                got: frame.kind,
            });
        }
        if u64::from(frame.round) != self.pool.round_index() {
            return Err(SessionError::RoundMismatch {
                expected: self.pool.round_index(),
                got: u64::from(frame.round),
            });
        }
        Ok(frame)
    }

    fn send_error<T: Write>(&mut self, t: &mut T, code: u8, msg: &str) {
        let mut payload = vec![code];
        payload.extend_from_slice(msg.as_bytes());
        // Best effort: the local error is what gets reported.
        let _ = self.send(t, FrameKind::Error, 0, payload);
    }

    fn hello<T: Read + Write>(&mut self, t: &mut T) -> Result<(), SessionError> {
        let digest = self.digest.to_vec();
        match self.role {
            Role::Tx => {
                self.send(t, FrameKind::Hello, 0, digest)?;
                let reply = self.expect(t, FrameKind::Hello)?;
                if reply.payload != self.digest {
                    self.send_error(t, ERR_CONFIG, "config mismatch");
                    return Err(SessionError::ConfigMismatch);
                }
            }
            Role::Rx | Role::Tap => {
                let frame = self.recv(t)?;
                if frame.kind != FrameKind::Hello {
                    return Err(SessionError::UnexpectedFrame {
                        expected: FrameKind::Hello,
                        got: frame.kind,
                    });
                }
                if frame.payload != self.digest {
                    self.send_error(t, ERR_CONFIG, "config mismatch");
                    return Err(SessionError::ConfigMismatch);
                }
                if u64::from(frame.round) != self.pool.round_index() {
                    self.send_error(t, ERR_OTHER, "round mismatch");
                    return Err(SessionError::RoundMismatch {
                        expected: self.pool.round_index(),
                        got: u64::from(frame.round),
                    });
                }
                self.send(t, FrameKind::Hello, 0, digest)?;
            }
        }
        Ok(())
    }
}

fn peer_error(payload: &[u8]) -> SessionError {
    match payload.first() {
        Some(&ERR_CONFIG) => SessionError::ConfigMismatch,
        Some(&ERR_TRANSCRIPT) => SessionError::TranscriptMismatch,
        _ => SessionError::Peer(String::from_utf8_lossy(payload.get(1..).unwrap_or(&[])).into_owned()),
    }
}

/// A TX round computed once and served to any number of receivers.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedRound {
    pub codes: Vec<AdcCode>,
    pub params: PaParamsPayload,
    pub output: RoundOutput,
    pub digest: [u8; 32],
}

/// Codes the fresh bits and distills the TX side without committing.
///
/// The effective `λ` is `params.lambda + opts.digest_allowance`.
pub fn prepare_round(
    pool: &BitPoolState,
    fresh: &BitStr,
    noise: &mut dyn NoiseSource,
    params: &RoundParams,
    stats: &AttackStats,
    opts: &SessionOptions,
) -> Result<PreparedRound, SessionError> {
    let t = params.leak(pool.a(), stats).map_err(BitPoolError::from)?;
    let effective = RoundParams {
        lambda: params.lambda.saturating_add(opts.digest_allowance),
        t_override: Some(t),
        ..*params
    };
    let codes = bitpool::encode_round(pool, fresh, noise)?;
    let output = bitpool::plan_round_with_leak(fresh, pool, &effective, t)?;
    Ok(PreparedRound {
        codes,
        params: PaParamsPayload {
            a: pool.a() as u64,
            t,
            lambda: effective.lambda,
            mode: params.mode,
            seed: params.shuffle_seed,
        },
        digest: output_digest(&output),
        output,
    })
}

/// Runs the TX half of a round for `prepared` on one connection. Does not
/// commit; call [`SessionState::commit`] once every receiver has confirmed.
pub fn serve_round<T: Read + Write>(
    t: &mut T,
    session: &mut SessionState,
    prepared: &PreparedRound,
    opts: &SessionOptions,
) -> Result<(), SessionError> {
    let result = serve_inner(t, session, prepared, opts);
    session.phase = if result.is_ok() { Phase::Done } else { Phase::Idle };
    result
}

fn serve_inner<T: Read + Write>(
    t: &mut T,
    session: &mut SessionState,
    prepared: &PreparedRound,
    opts: &SessionOptions,
) -> Result<(), SessionError> {
    if prepared.output.round_index != session.pool.round_index() || prepared.params.mode != session.mode {
        return Err(SessionError::IncompleteTranscript("prepared round belongs to another state"));
    }
    session.phase = Phase::Idle;
    session.hello(t)?;
    session.phase = Phase::Batch;
    for (seq, chunk) in prepared.codes.chunks(opts.batch_size.max(1)).enumerate() {
        let payload = BatchPayload {
            codes: chunk.iter().map(|c| c.get()).collect(),
        };
        session.send(t, FrameKind::Batch, seq as u32, payload.encode())?;
    }
    session.phase = Phase::Distill;
    session.send(t, FrameKind::PaParams, 0, prepared.params.encode())?;
    let ack = session.expect(t, FrameKind::Ack)?;
    if ack.payload != prepared.digest {
        session.send_error(t, ERR_TRANSCRIPT, "transcript mismatch");
        return Err(SessionError::TranscriptMismatch);
    }
    session.send(t, FrameKind::Ack, 1, Vec::new())?;
    Ok(())
}

/// Full TX round on one connection: prepare, serve, commit.
pub fn run_tx_session<T: Read + Write>(
    t: &mut T,
    session: &mut SessionState,
    fresh: &BitStr,
    noise: &mut dyn NoiseSource,
    params: &RoundParams,
    stats: &AttackStats,
    opts: &SessionOptions,
) -> Result<RoundOutput, SessionError> {
    let params = RoundParams {
        mode: session.mode,
        ..*params
    };
    let prepared = prepare_round(&session.pool, fresh, noise, &params, stats, opts)?;
    serve_round(t, session, &prepared, opts)?;
    session.commit(&prepared)?;
    Ok(prepared.output)
}

/// Full RX round: receive, decode, distill, confirm, commit.
pub fn run_rx_session<T: Read + Write>(
    t: &mut T,
    session: &mut SessionState,
) -> Result<RoundOutput, SessionError> {
    let result = rx_inner(t, session);
    session.phase = if result.is_ok() { Phase::Done } else { Phase::Idle };
    result
}

fn rx_inner<T: Read + Write>(t: &mut T, session: &mut SessionState) -> Result<RoundOutput, SessionError> {
    session.phase = Phase::Idle;
    session.hello(t)?;
    session.phase = Phase::Batch;
    let a = session.pool.a();
    let cfg = *session.pool.config();
    let mut codes = Vec::with_capacity(a);
    let mut seq = 0u32;
    let pa = loop {
        let frame = session.recv(t)?;
        if u64::from(frame.round) != session.pool.round_index() {
            return Err(SessionError::RoundMismatch {
                expected: session.pool.round_index(),
                got: u64::from(frame.round),
            });
        }
        match frame.kind {
            FrameKind::Batch => {
                if frame.seq != seq {
                    return Err(FrameError::Malformed("BATCH out of sequence").into());
                }
                seq += 1;
                for c in BatchPayload::decode(&frame.payload)?.codes {
                    codes.push(AdcCode::new(u32::from(c), &cfg)?);
                }
                if codes.len() > a {
                    return Err(FrameError::Malformed("more codes than fresh bits").into());
                }
            }
            FrameKind::PaParams => break PaParamsPayload::decode(&frame.payload)?,
            FrameKind::Error => return Err(peer_error(&frame.payload)),
            other => {
                return Err(SessionError::UnexpectedFrame {
                    expected: FrameKind::Batch,
                    got: other,
                })
            }
        }
    };
    if codes.len() != a {
        return Err(SessionError::IncompleteTranscript("fewer codes than fresh bits"));
    }
    if pa.a != a as u64 || pa.mode != session.mode {
        session.send_error(t, ERR_CONFIG, "PA parameters disagree with configuration");
        return Err(SessionError::ConfigMismatch);
    }
    session.phase = Phase::Distill;
    let fresh = bitpool::decode_round(&session.pool, &codes)?;
    let params = RoundParams {
        lambda: pa.lambda,
        shuffle_seed: pa.seed,
        t_override: Some(pa.t),
        mode: pa.mode,
    };
    let output = match bitpool::plan_round_with_leak(&fresh, &session.pool, &params, pa.t) {
        Ok(o) => o,
        Err(e) => {
            session.send_error(t, ERR_OTHER, &e.to_string());
            return Err(e.into());
        }
    };
    session.send(t, FrameKind::Ack, 0, output_digest(&output).to_vec())?;
    let frame = session.expect(t, FrameKind::Ack)?;
    if !frame.payload.is_empty() {
        return Err(FrameError::Malformed("final ACK carries a payload").into());
    }
    session.pool.commit(&output)?;
    Ok(output)
}
