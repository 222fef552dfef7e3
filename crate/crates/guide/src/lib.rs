//! The user guide's chapters, compiled so that every snippet runs as a
//! doc-test against the current library.

#![doc = include_str!("../../../book/src/introduction.md")]

#[doc = include_str!("../../../book/src/channel.md")]
pub mod channel {}

#[doc = include_str!("../../../book/src/entropy.md")]
pub mod entropy {}

#[doc = include_str!("../../../book/src/coding.md")]
pub mod coding {}

#[doc = include_str!("../../../book/src/security.md")]
pub mod security {}

#[doc = include_str!("../../../book/src/bitpool.md")]
pub mod bitpool {}

#[doc = include_str!("../../../book/src/otp.md")]
pub mod otp {}

#[doc = include_str!("../../../book/src/stations.md")]
pub mod stations {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
