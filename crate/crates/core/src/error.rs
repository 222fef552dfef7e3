use thiserror::Error;

use crate::{bitpool, channel, codec, entropy, otp, security, stations};

/// Any error produced by this crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Channel(#[from] channel::ChannelError),
    #[error(transparent)]
    Entropy(#[from] entropy::EntropyError),
    #[error(transparent)]
    Codec(#[from] codec::CodecError),
    #[error(transparent)]
    Security(#[from] security::SecurityError),
    #[error(transparent)]
    BitPool(#[from] bitpool::BitPoolError),
    #[error(transparent)]
    Otp(#[from] otp::OtpError),
    #[error(transparent)]
    Frame(#[from] stations::FrameError),
    #[error(transparent)]
    Session(#[from] stations::SessionError),
}
