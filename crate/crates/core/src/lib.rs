//! Noise-cloaked M-ary key distribution.
//!
//! A transmitter codes each fresh random bit on top of one of `M` secret
//! basis voltages and adds recorded optical noise wide enough to cover many
//! neighbouring bases. A receiver that shares the basis sequence subtracts it
//! and rounds; an eavesdropper without it is left close to a coin toss.
//! Every round the shared pool of `a + m·a` bits is privacy-amplified into
//! `z` encryption bits plus the next round's `m·a` basis bits.
//!
//! The crate is organised bottom-up:
//!
//! * [`channel`]: physical parameters and closed-form detector statistics.
//! * [`entropy`]: simulated physical random bit generator, LFSR whitener,
//!   run-length statistics.
//! * [`codec`]: basis arithmetic, cyclic wrapping, ADC quantization, decoding.
//! * [`security`]: attacker oracle, success probabilities, leak accounting,
//!   information-theory helpers.
//! * [`bitpool`]: shared pool state and privacy amplification rounds.
//! * [`otp`]: one-time pad and decentralized group encryption.
//! * [`stations`]: framed wire protocol, TX/RX sessions and a passive tap.
//!
//! Everything random is driven by explicit seeds, so every run is
//! reproducible bit for bit.
//!
//! ```
//! use mary_kd::codec::{self, BasisIndex, MaryConfig};
//!
//! let cfg = MaryConfig::new(8, 3.0).unwrap();
//! let k = BasisIndex::new(77, &cfg).unwrap();
//! let code = codec::encode_sample(true, k, 0.004, &cfg).unwrap();
//! assert!(codec::decode_sample(code, k, &cfg));
//! ```

pub mod bitpool;
pub mod bits;
pub mod channel;
pub mod codec;
pub mod entropy;
pub mod otp;
pub mod security;
pub mod stations;

mod error;

pub use bits::Bits;
pub use error::Error;
