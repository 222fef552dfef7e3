//! TX/RX stations, their wire protocol, and a passive eavesdropper.
//!
//! Stations talk over any ordered, reliable duplex byte stream. Each round
//! runs:
//!
//! 1. `HELLO` both ways, carrying a digest of the coding configuration.
//! 2. `BATCH` frames from TX with the `a` ADC codes of the round.
//! 3. `PA_PARAMS` from TX: `a`, `t`, `λ`, mixing mode and shuffle seed.
//! 4. `ACK` from RX with a SHA-256 digest of its distilled output.
//! 5. `ACK` (empty) or `ERROR` from TX. Both ends commit only on success.
//!
//! The confirmation digest is not part of the original scheme; its 256 bits
//! are charged to `λ` by default (see [`SessionOptions::digest_allowance`]).

mod frame;
mod session;
mod tap;
mod transport;

pub use frame::{
    decode_frame, encode_frame, read_frame, split_frames, write_frame, BatchPayload, Frame,
    FrameError, FrameKind, PaParamsPayload, HEADER_LEN, MAX_PAYLOAD, VERSION,
};
pub use session::{
    config_digest, output_digest, prepare_round, run_rx_session, run_tx_session, serve_round,
    Phase, PreparedRound, Role, SessionError, SessionOptions, SessionState, DEFAULT_TIMEOUT,
};
pub use tap::{run_tap, GroundTruth, TapReport, TapRound};
pub use transport::{duplex, MemoryPipe};
