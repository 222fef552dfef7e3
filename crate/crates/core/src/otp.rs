//! One-time pad primitives and the decentralized group scheme.
//!
//! Distilled key bits are arranged in a `d × d` matrix, one line per row. A
//! sender picks several distinct lines at random, XORs them into a pad and
//! XORs the pad onto a `d`-bit message block. The envelope lists the chosen
//! line numbers (1-based, top to bottom). Anyone holding the matrix can
//! decrypt.
//!
//! Envelopes carry no integrity protection: a tampered index list or
//! ciphertext decrypts to the wrong plaintext without any error.

use std::collections::BTreeSet;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::bits::{self, BitStr, Bits};

/// Default number of lines XORed into one pad.
pub const DEFAULT_LINE_COUNT: usize = 20;

#[derive(Debug, Error, PartialEq)]
pub enum OtpError {
    #[error("length mismatch: {left} vs {right} bits")]
    LengthMismatch { left: usize, right: usize },
    #[error("a key matrix needs at least 4 bits, got {0}")]
    TooFewKeyBits(usize),
    #[error("cannot pick {line_count} distinct lines from {d}")]
    TooManyLines { line_count: usize, d: usize },
    #[error("line index {index} is outside 1..={d}")]
    UnknownLine { index: u32, d: usize },
    #[error("repeated line index {0}")]
    RepeatedLine(u32),
    #[error("need at least one user, got {0}")]
    NoUsers(u64),
    #[error("{users} users exceed the {d} available lines")]
    TooManyUsers { users: u64, d: u64 },
    #[error("malformed envelope: {0}")]
    Malformed(&'static str),
    #[error("envelope CRC mismatch")]
    CrcMismatch,
    #[error("unsupported envelope version {0}")]
    UnsupportedVersion(u8),
}

/// Bitwise exclusive-or of two equal-length strings.
pub fn xor_bits(x: &BitStr, y: &BitStr) -> Result<Bits, OtpError> {
    if x.len() != y.len() {
        return Err(OtpError::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    Ok(x.to_bitvec() ^ y)
}

/// Key bits arranged as `d` lines of `d` bits.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyMatrix {
    d: usize,
    bits: Bits,
    consumed: BTreeSet<u32>,
}

impl KeyMatrix {
    pub fn d(&self) -> usize {
        self.d
    }

    pub fn bits(&self) -> &BitStr {
        &self.bits
    }

    /// Line `index`, counted from 1.
    pub fn line(&self, index: u32) -> Result<&BitStr, OtpError> {
        let i = index as usize;
        if i == 0 || i > self.d {
            return Err(OtpError::UnknownLine { index, d: self.d });
        }
        Ok(&self.bits[(i - 1) * self.d..i * self.d])
    }

    pub fn consumed_lines(&self) -> &BTreeSet<u32> {
        &self.consumed
    }

    /// True once every line has been used at least once.
    pub fn refresh_needed(&self) -> bool {
        self.consumed.len() == self.d
    }

    /// XOR of the named lines.
    pub fn pad(&self, indices: &[u32]) -> Result<Bits, OtpError> {
        let mut pad = Bits::repeat(false, self.d);
        for &i in indices {
            pad ^= self.line(i)?;
        }
        Ok(pad)
    }
}

/// Arranges the leading `d² = ⌊√len⌋²` bits row-major; returns the surplus.
pub fn build_key_matrix(key_bits: &BitStr) -> Result<(KeyMatrix, Bits), OtpError> {
    if key_bits.len() < 4 {
        return Err(OtpError::TooFewKeyBits(key_bits.len()));
    }
    let d = key_bits.len().isqrt();
    let (used, rest) = key_bits.split_at(d * d);
    Ok((
        KeyMatrix {
            d,
            bits: used.to_bitvec(),
            consumed: BTreeSet::new(),
        },
        rest.to_bitvec(),
    ))
}

/// One encrypted `d`-bit block and the lines that formed its pad.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CipherBlock {
    pub line_indices: Vec<u32>,
    pub ciphertext: Bits,
}

/// Encrypts one `d`-bit block with `line_count` lines drawn by `rng`.
pub fn encrypt_block(
    matrix: &mut KeyMatrix,
    message: &BitStr,
    line_count: usize,
    rng: &mut ChaCha20Rng,
) -> Result<CipherBlock, OtpError> {
    if message.len() != matrix.d {
        return Err(OtpError::LengthMismatch {
            left: message.len(),
            right: matrix.d,
        });
    }
    if line_count > matrix.d {
        return Err(OtpError::TooManyLines {
            line_count,
            d: matrix.d,
        });
    }
    let mut line_indices: Vec<u32> = index::sample(rng, matrix.d, line_count)
        .into_iter()
        .map(|i| i as u32 + 1)
        .collect();
    line_indices.sort_unstable();
    let ciphertext = matrix.pad(&line_indices)? ^ message;
    matrix.consumed.extend(&line_indices);
    Ok(CipherBlock {
        line_indices,
        ciphertext,
    })
}

/// Decrypts one block. An empty index list returns the ciphertext unchanged.
pub fn decrypt_block(matrix: &KeyMatrix, block: &CipherBlock) -> Result<Bits, OtpError> {
    if block.ciphertext.len() != matrix.d {
        return Err(OtpError::LengthMismatch {
            left: block.ciphertext.len(),
            right: matrix.d,
        });
    }
    Ok(matrix.pad(&block.line_indices)? ^ block.ciphertext.as_bitslice())
}

/// A message of any length split into `d`-bit blocks; the last is zero-padded.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CipherEnvelope {
    pub d: u32,
    pub message_bits: u64,
    pub blocks: Vec<CipherBlock>,
}

/// Encrypts `message`, drawing each block's lines independently from `seed`.
pub fn encrypt_decentralized(
    matrix: &mut KeyMatrix,
    message: &BitStr,
    line_count: usize,
    seed: u64,
) -> Result<CipherEnvelope, OtpError> {
    if line_count > matrix.d {
        return Err(OtpError::TooManyLines {
            line_count,
            d: matrix.d,
        });
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let d = matrix.d;
    let mut blocks = Vec::with_capacity(message.len().div_ceil(d));
    for chunk in message.chunks(d) {
        let mut block = chunk.to_bitvec();
        block.resize(d, false);
        blocks.push(encrypt_block(matrix, &block, line_count, &mut rng)?);
    }
    Ok(CipherEnvelope {
        d: d as u32,
        message_bits: message.len() as u64,
        blocks,
    })
}

pub fn decrypt_decentralized(matrix: &KeyMatrix, env: &CipherEnvelope) -> Result<Bits, OtpError> {
    if env.d as usize != matrix.d {
        return Err(OtpError::LengthMismatch {
            left: env.d as usize,
            right: matrix.d,
        });
    }
    let mut out = Bits::with_capacity(env.blocks.len() * matrix.d);
    for block in &env.blocks {
        out.extend_from_bitslice(&decrypt_block(matrix, block)?);
    }
    let len = usize::try_from(env.message_bits).map_err(|_| OtpError::Malformed("length"))?;
    if len.div_ceil(matrix.d) != env.blocks.len() {
        return Err(OtpError::Malformed("message length does not match block count"));
    }
    out.truncate(len);
    Ok(out)
}

const ENVELOPE_MAGIC: &[u8; 4] = b"KBEV";
const ENVELOPE_VERSION: u8 = 1;

impl CipherEnvelope {
    /// `"KBEV"`, version, `d` (u32 BE), then per block: line count (u16 BE),
    /// sorted indices (u32 BE each), message bit length (u64 BE), packed
    /// ciphertext; a CRC32 (BE) of everything closes the file.
    ///
    /// A single-block envelope is exactly the one-line layout; further blocks
    /// repeat the per-block section with the same message length field.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(ENVELOPE_MAGIC);
        out.push(ENVELOPE_VERSION);
        out.extend_from_slice(&self.d.to_be_bytes());
        for block in &self.blocks {
            out.extend_from_slice(&(block.line_indices.len() as u16).to_be_bytes());
            for i in &block.line_indices {
                out.extend_from_slice(&i.to_be_bytes());
            }
            out.extend_from_slice(&self.message_bits.to_be_bytes());
            out.extend_from_slice(&bits::pack(&block.ciphertext));
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_be_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, OtpError> {
        if bytes.len() < 13 || &bytes[..4] != ENVELOPE_MAGIC {
            return Err(OtpError::Malformed("bad magic or truncated"));
        }
        let (body, trailer) = bytes.split_at(bytes.len() - 4);
        if crc32fast::hash(body) != u32::from_be_bytes(trailer.try_into().expect("4 bytes")) {
            return Err(OtpError::CrcMismatch);
        }
        if body[4] != ENVELOPE_VERSION {
            return Err(OtpError::UnsupportedVersion(body[4]));
        }
        let d = u32::from_be_bytes(body[5..9].try_into().expect("4 bytes"));
        if d == 0 {
            return Err(OtpError::Malformed("zero line length"));
        }
        let block_bytes = bits::packed_len(d as usize);
        let mut rest = &body[9..];
        let mut take = |n: usize| -> Result<&[u8], OtpError> {
            if rest.len() < n {
                return Err(OtpError::Malformed("truncated block"));
            }
            let (head, tail) = rest.split_at(n);
            rest = tail;
            Ok(head)
        };
        let mut blocks = Vec::new();
        let mut message_bits = None;
        loop {
            let Ok(count) = take(2) else { break };
            let count = u16::from_be_bytes(count.try_into().expect("2 bytes")) as usize;
            let mut line_indices = Vec::with_capacity(count);
            for _ in 0..count {
                line_indices.push(u32::from_be_bytes(take(4)?.try_into().expect("4 bytes")));
            }
            if line_indices.windows(2).any(|w| w[0] >= w[1]) {
                return Err(OtpError::Malformed("line indices not strictly ascending"));
            }
            let len = u64::from_be_bytes(take(8)?.try_into().expect("8 bytes"));
            if *message_bits.get_or_insert(len) != len {
                return Err(OtpError::Malformed("inconsistent message length"));
            }
            let ciphertext = bits::unpack(take(block_bytes)?, d as usize).expect("length taken");
            blocks.push(CipherBlock {
                line_indices,
                ciphertext,
            });
        }
        if !rest.is_empty() {
            return Err(OtpError::Malformed("trailing bytes"));
        }
        let message_bits = message_bits.unwrap_or(0);
        if message_bits.div_ceil(u64::from(d)) != blocks.len() as u64 {
            return Err(OtpError::Malformed("message length does not match block count"));
        }
        Ok(Self {
            d,
            message_bits,
            blocks,
        })
    }
}

/// Exact and approximate chance that two of `users` pick the same line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollisionProbability {
    /// `1 − d!/((d−N)!·dᴺ)`.
    pub exact: f64,
    /// `1 − (1 − N/(2d))^(N−1)`.
    pub approx: f64,
}

fn lines_for(users: u64, key_bits: u64) -> Result<u64, OtpError> {
    if users == 0 {
        return Err(OtpError::NoUsers(users));
    }
    let d = key_bits.isqrt();
    if users > d {
        return Err(OtpError::TooManyUsers { users, d });
    }
    Ok(d)
}

/// Birthday collision probability for `users` each picking one of `⌊√K⌋` lines.
pub fn collision_prob_one(users: u64, key_bits: u64) -> Result<CollisionProbability, OtpError> {
    let d = lines_for(users, key_bits)?;
    let df = d as f64;
    // ln Π(1 − i/d) summed with ln_1p keeps full precision when N ≪ d.
    let ln_none: f64 = (1..users).map(|i| (-(i as f64) / df).ln_1p()).sum();
    let exact = -ln_none.exp_m1();
    let n = users as f64;
    let approx = -((n - 1.0) * (-n / (2.0 * df)).ln_1p()).exp_m1();
    Ok(CollisionProbability { exact, approx })
}

/// Order of magnitude for every one of `line_count` picks colliding.
pub fn collision_prob_all(users: u64, key_bits: u64, line_count: u32) -> Result<f64, OtpError> {
    Ok(collision_prob_one(users, key_bits)?.exact.powi(line_count as i32))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_bits(len: usize, seed: u64) -> Bits {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        (0..len).map(|_| rng.random::<bool>()).collect()
    }

    #[test]
    fn xor_truth_table() {
        for (x, y, z) in [(0, 0, 0), (0, 1, 1), (1, 0, 1), (1, 1, 0)] {
            let out = xor_bits(&bits::from_digits(&[x]), &bits::from_digits(&[y])).unwrap();
            assert_eq!(out, bits::from_digits(&[z]));
        }
        assert!(matches!(
            xor_bits(&Bits::repeat(false, 3), &Bits::repeat(false, 4)),
            Err(OtpError::LengthMismatch { .. })
        ));
    }

    proptest! {
        #[test]
        fn xor_is_an_involution(seed in any::<u64>()) {
            let x = random_bits(256, seed);
            let k = random_bits(256, seed ^ 0xFFFF);
            prop_assert!(xor_bits(&x, &x).unwrap().not_any());
            prop_assert_eq!(xor_bits(&xor_bits(&x, &k).unwrap(), &k).unwrap(), x);
        }

        #[test]
        fn pad_is_order_independent(seed in any::<u64>()) {
            let (m, _) = build_key_matrix(&random_bits(32 * 32, seed)).unwrap();
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let mut lines: Vec<u32> = index::sample(&mut rng, 32, 7).into_iter().map(|i| i as u32 + 1).collect();
            let forward = m.pad(&lines).unwrap();
            lines.reverse();
            lines.swap(0, 3);
            prop_assert_eq!(m.pad(&lines).unwrap(), forward);
        }
    }

    #[test]
    fn matrix_shapes() {
        let (m, rest) = build_key_matrix(&random_bits(16, 1)).unwrap();
        assert_eq!((m.d(), rest.len()), (4, 0));
        let key = random_bits(20, 2);
        let (m, rest) = build_key_matrix(&key).unwrap();
        assert_eq!((m.d(), rest.len()), (4, 4));
        assert_eq!(rest, key[16..]);
        assert_eq!(m.line(2).unwrap(), &key[4..8]);
        assert!(matches!(m.line(0), Err(OtpError::UnknownLine { .. })));
        assert!(matches!(m.line(5), Err(OtpError::UnknownLine { .. })));
        assert_eq!(build_key_matrix(&Bits::repeat(true, 3)).unwrap_err(), OtpError::TooFewKeyBits(3));
        assert_eq!((100_000_000u64).isqrt(), 10_000);
    }

    #[test]
    fn hand_worked_toy_matrix() {
        let key = bits::parse("1100 1010 0110 0001").unwrap();
        let (m, _) = build_key_matrix(&key).unwrap();
        let msg = bits::parse("1111").unwrap();
        let block = CipherBlock {
            line_indices: vec![1, 3],
            ciphertext: bits::parse("0101").unwrap(),
        };
        // 1100 ⊕ 0110 = 1010; 1010 ⊕ 1111 = 0101.
        assert_eq!(m.pad(&[1, 3]).unwrap(), bits::parse("1010").unwrap());
        assert_eq!(m.pad(&[1, 3]).unwrap() ^ msg.as_bitslice(), block.ciphertext);
        assert_eq!(decrypt_block(&m, &block).unwrap(), msg);
    }

    #[test]
    fn round_trips_on_d64() {
        let (mut m, _) = build_key_matrix(&random_bits(64 * 64, 3)).unwrap();
        for seed in 0..1000u64 {
            let msg = random_bits(64, seed + 100);
            let env = encrypt_decentralized(&mut m, &msg, DEFAULT_LINE_COUNT, seed).unwrap();
            let idx = &env.blocks[0].line_indices;
            assert_eq!(idx.len(), 20);
            assert!(idx.windows(2).all(|w| w[0] < w[1]));
            assert!(idx.iter().all(|&i| (1..=64).contains(&i)));
            assert_eq!(decrypt_decentralized(&m, &env).unwrap(), msg);
        }
    }

    #[test]
    fn errors_and_degenerate_cases() {
        let (mut m, _) = build_key_matrix(&random_bits(64, 4)).unwrap();
        assert!(matches!(
            encrypt_block(&mut m, &random_bits(8, 1), 9, &mut ChaCha20Rng::seed_from_u64(0)),
            Err(OtpError::TooManyLines { .. })
        ));
        assert!(matches!(
            encrypt_block(&mut m, &random_bits(7, 1), 2, &mut ChaCha20Rng::seed_from_u64(0)),
            Err(OtpError::LengthMismatch { .. })
        ));
        let ct = random_bits(8, 5);
        let empty = CipherBlock { line_indices: vec![], ciphertext: ct.clone() };
        assert_eq!(decrypt_block(&m, &empty).unwrap(), ct);
        let bad = CipherBlock { line_indices: vec![9], ciphertext: ct.clone() };
        assert!(matches!(decrypt_block(&m, &bad), Err(OtpError::UnknownLine { index: 9, .. })));
    }

    #[test]
    fn corrupted_indices_give_wrong_plaintext() {
        let (mut m, _) = build_key_matrix(&random_bits(64 * 64, 6)).unwrap();
        let msg = random_bits(64, 7);
        let mut env = encrypt_decentralized(&mut m, &msg, 20, 1).unwrap();
        let idx = &mut env.blocks[0].line_indices;
        let spare = (1..=64).find(|i| !idx.contains(i)).unwrap();
        idx[0] = spare;
        idx.sort_unstable();
        assert_ne!(decrypt_decentralized(&m, &env).unwrap(), msg);
    }

    #[test]
    fn multi_block_messages_and_envelope_bytes() {
        let (mut m, _) = build_key_matrix(&random_bits(64 * 64, 8)).unwrap();
        for len in [0usize, 1, 63, 64, 65, 200, 8192] {
            let msg = random_bits(len, len as u64);
            let env = encrypt_decentralized(&mut m, &msg, 20, len as u64).unwrap();
            assert_eq!(env.blocks.len(), len.div_ceil(64));
            let bytes = env.to_bytes();
            let parsed = CipherEnvelope::from_bytes(&bytes).unwrap();
            assert_eq!(parsed, env);
            assert_eq!(decrypt_decentralized(&m, &parsed).unwrap(), msg);
        }
    }

    #[test]
    fn single_block_envelope_layout() {
        let (mut m, _) = build_key_matrix(&random_bits(16, 9)).unwrap();
        let env = encrypt_decentralized(&mut m, &bits::parse("1011").unwrap(), 2, 0).unwrap();
        let bytes = env.to_bytes();
        assert_eq!(&bytes[..5], b"KBEV\x01");
        assert_eq!(&bytes[5..9], &4u32.to_be_bytes());
        assert_eq!(&bytes[9..11], &2u16.to_be_bytes());
        let i0 = u32::from_be_bytes(bytes[11..15].try_into().unwrap());
        let i1 = u32::from_be_bytes(bytes[15..19].try_into().unwrap());
        assert!(i0 < i1);
        assert_eq!(&bytes[19..27], &4u64.to_be_bytes());
        assert_eq!(bytes.len(), 27 + 1 + 4);
        let crc = crc32fast::hash(&bytes[..28]);
        assert_eq!(&bytes[28..], &crc.to_be_bytes());
        let mut bad = bytes.clone();
        bad[27] ^= 1;
        assert_eq!(CipherEnvelope::from_bytes(&bad), Err(OtpError::CrcMismatch));
    }

    #[test]
    fn full_sweep_raises_refresh_flag() {
        let (mut m, _) = build_key_matrix(&random_bits(16 * 16, 10)).unwrap();
        assert!(!m.refresh_needed());
        let msg = random_bits(16, 1);
        let mut seed = 0;
        while !m.refresh_needed() {
            encrypt_decentralized(&mut m, &msg, 4, seed).unwrap();
            seed += 1;
            assert!(seed < 1000);
        }
        assert_eq!(m.consumed_lines().len(), 16);
    }

    /// Direct product `1 − Π_{i<N} (d − i)/d`, no logarithms.
    fn birthday_oracle(n: u64, d: u64) -> f64 {
        1.0 - (0..n).map(|i| (d - i) as f64 / d as f64).product::<f64>()
    }

    #[test]
    fn collision_values() {
        let k = 100_000_000;
        assert_eq!(collision_prob_one(1, k).unwrap().exact, 0.0);
        assert_eq!(collision_prob_all(1, k, 20).unwrap(), 0.0);
        let two = collision_prob_one(2, k).unwrap().exact;
        assert!((two - 1e-4).abs() < 1e-16);
        let all = collision_prob_all(2, k, 20).unwrap();
        assert!((all / 1e-80 - 1.0).abs() < 1e-9);
        assert!(matches!(collision_prob_one(0, k), Err(OtpError::NoUsers(0))));
        assert!(matches!(collision_prob_one(5, 16), Err(OtpError::TooManyUsers { users: 5, d: 4 })));
        assert_eq!(collision_prob_one(4, 16).unwrap().exact, birthday_oracle(4, 4));
    }

    #[test]
    fn collision_grid_against_oracle_and_approximation() {
        for d in [1_000u64, 10_000, 100_000] {
            for n in 2..=20 {
                let p = collision_prob_one(n, d * d).unwrap();
                let oracle = birthday_oracle(n, d);
                assert!((p.exact - oracle).abs() <= 1e-12 * oracle.max(1e-300) + 1e-15);
                assert!((p.approx / p.exact - 1.0).abs() < 0.10, "d={d} n={n}");
            }
        }
    }

    #[test]
    fn collision_recurrence_and_monotonicity() {
        let d = 1000u64;
        let mut prev = 0.0;
        for n in 1..=50 {
            let p = collision_prob_one(n, d * d).unwrap().exact;
            if n > 1 {
                let rec = 1.0 - (1.0 - prev) * (d - n + 1) as f64 / d as f64;
                assert!((p - rec).abs() < 1e-12);
                assert!(p > prev);
                assert!(collision_prob_all(n, d * d, 20).unwrap() > collision_prob_all(n - 1, d * d, 20).unwrap());
            }
            prev = p;
        }
    }
}
