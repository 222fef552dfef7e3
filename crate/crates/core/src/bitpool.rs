//! The Bit Pool: shared basis bits and per-round privacy amplification.
//!
//! A round starts with `m·a` basis bits shared by both ends. The transmitter
//! codes `a` fresh bits on the bases they select; both ends then hold
//! `n = a + m·a` common bits. These are concatenated as `fresh ∥ bases`,
//! mixed, and the first `r = n − t − λ` bits kept: the leading
//! `z = a − t − λ` become encryption key, the trailing `m·a` become the next
//! round's bases.
//!
//! Two mixing modes exist. [`PaMode::Permute`] applies a seeded Fisher–Yates
//! permutation and truncates. [`PaMode::Toeplitz`] compresses `n → r` with a
//! seeded random Toeplitz matrix over GF(2), the standard universal hash.
//! Both ends must use the same mode and seed; the seed is public.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use rustfft::{num_complex::Complex, FftPlanner};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::bits::{self, BitStr, Bits};
use crate::codec::{self, AdcCode, BasisIndex, MaryConfig};
use crate::security::{self, AttackStats, LeakBudget, SecurityError};

#[derive(Debug, Error, PartialEq)]
pub enum BitPoolError {
    #[error("basis string has {got} bits, expected m·a = {expected}")]
    BasisLength { expected: usize, got: usize },
    #[error("a round needs at least one fresh bit")]
    EmptyRound,
    #[error("expected {expected} fresh bits, got {got}")]
    FreshLength { expected: usize, got: usize },
    #[error("insufficient bits: a = {a} but t + lambda = {spent}")]
    InsufficientBits { a: u64, spent: u64 },
    #[error("expected {expected} samples, got {got}")]
    SampleCount { expected: usize, got: usize },
    #[error("round output does not match this pool")]
    ForeignOutput,
    #[error("malformed pool file: {0}")]
    Malformed(&'static str),
    #[error("pool file CRC mismatch")]
    CrcMismatch,
    #[error("unsupported pool file version {0}")]
    UnsupportedVersion(u8),
    #[error(transparent)]
    Security(#[from] SecurityError),
}

/// Shared state carried from round to round.
#[derive(Debug, Clone, PartialEq)]
pub struct BitPoolState {
    basis_bits: Bits,
    round_index: u64,
    cfg: MaryConfig,
    a: usize,
}

impl BitPoolState {
    pub fn new(cfg: MaryConfig, a: usize, basis_bits: Bits) -> Result<Self, BitPoolError> {
        if a == 0 {
            return Err(BitPoolError::EmptyRound);
        }
        let expected = cfg.bits_per_basis() as usize * a;
        if basis_bits.len() != expected {
            return Err(BitPoolError::BasisLength {
                expected,
                got: basis_bits.len(),
            });
        }
        Ok(Self {
            basis_bits,
            round_index: 0,
            cfg,
            a,
        })
    }

    pub fn basis_bits(&self) -> &BitStr {
        &self.basis_bits
    }

    pub fn round_index(&self) -> u64 {
        self.round_index
    }

    pub fn config(&self) -> &MaryConfig {
        &self.cfg
    }

    /// Fresh bits per round.
    pub fn a(&self) -> usize {
        self.a
    }

    /// Bases for the next `a` fresh bits: consecutive `m`-bit blocks of the
    /// basis string, in order.
    pub fn next_bases(&self) -> Vec<BasisIndex> {
        self.basis_bits
            .chunks_exact(self.cfg.bits_per_basis() as usize)
            .map(|block| codec::basis_index(block, &self.cfg).expect("block length is m"))
            .collect()
    }

    /// Installs the bases produced by `output` and advances the round counter.
    pub fn commit(&mut self, output: &RoundOutput) -> Result<(), BitPoolError> {
        if output.round_index != self.round_index
            || output.new_basis_bits.len() != self.basis_bits.len()
        {
            return Err(BitPoolError::ForeignOutput);
        }
        self.basis_bits = output.new_basis_bits.clone();
        self.round_index += 1;
        Ok(())
    }

    const MAGIC: &'static [u8; 4] = b"KBPS";
    const VERSION: u8 = 1;

    /// Serializes as `"KBPS"`, version, `m` (u8), `a` (u64 BE), round index
    /// (u64 BE), packed basis bits, CRC32 (BE) of everything before it.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(22 + bits::packed_len(self.basis_bits.len()) + 4);
        out.extend_from_slice(Self::MAGIC);
        out.push(Self::VERSION);
        out.push(self.cfg.bits_per_basis() as u8);
        out.extend_from_slice(&(self.a as u64).to_be_bytes());
        out.extend_from_slice(&self.round_index.to_be_bytes());
        out.extend_from_slice(&bits::pack(&self.basis_bits));
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_be_bytes());
        out
    }

    /// Parses a pool file; `cfg` supplies the coding parameters not stored in it.
    pub fn from_bytes(bytes: &[u8], cfg: MaryConfig) -> Result<Self, BitPoolError> {
        if bytes.len() < 26 {
            return Err(BitPoolError::Malformed("file too short"));
        }
        if &bytes[..4] != Self::MAGIC {
            return Err(BitPoolError::Malformed("bad magic"));
        }
        let (body, trailer) = bytes.split_at(bytes.len() - 4);
        if crc32fast::hash(body) != u32::from_be_bytes(trailer.try_into().expect("4 bytes")) {
            return Err(BitPoolError::CrcMismatch);
        }
        if body[4] != Self::VERSION {
            return Err(BitPoolError::UnsupportedVersion(body[4]));
        }
        if u32::from(body[5]) != cfg.bits_per_basis() {
            return Err(BitPoolError::Malformed("bits per basis differs from configuration"));
        }
        let a = u64::from_be_bytes(body[6..14].try_into().expect("8 bytes"));
        let round_index = u64::from_be_bytes(body[14..22].try_into().expect("8 bytes"));
        let a = usize::try_from(a).map_err(|_| BitPoolError::Malformed("a too large"))?;
        let len = a
            .checked_mul(cfg.bits_per_basis() as usize)
            .ok_or(BitPoolError::Malformed("a too large"))?;
        let payload = &body[22..];
        if payload.len() != bits::packed_len(len) {
            return Err(BitPoolError::Malformed("basis length does not match a"));
        }
        let basis_bits = bits::unpack(payload, len).expect("length checked");
        let mut state = Self::new(cfg, a, basis_bits)?;
        state.round_index = round_index;
        Ok(state)
    }
}

/// How the shared bits are mixed before truncation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PaMode {
    /// Seeded permutation followed by truncation.
    #[default]
    Permute,
    /// Seeded Toeplitz-matrix compression.
    Toeplitz,
}

impl PaMode {
    pub fn to_byte(self) -> u8 {
        match self {
            PaMode::Permute => 0,
            PaMode::Toeplitz => 1,
        }
    }

    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(PaMode::Permute),
            1 => Some(PaMode::Toeplitz),
            _ => None,
        }
    }
}

/// Public parameters of one round.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoundParams {
    pub lambda: u64,
    pub shuffle_seed: [u8; 16],
    /// Use this leak count instead of deriving it from attack statistics.
    pub t_override: Option<u64>,
    pub mode: PaMode,
}

impl RoundParams {
    pub fn new(lambda: u64, shuffle_seed: [u8; 16]) -> Self {
        Self {
            lambda,
            shuffle_seed,
            t_override: None,
            mode: PaMode::Permute,
        }
    }

    /// Leak count for `a` fresh bits under `stats`, unless overridden.
    pub fn leak(&self, a: usize, stats: &AttackStats) -> Result<u64, SecurityError> {
        match self.t_override {
            Some(t) => Ok(t),
            None => security::leaked_bits(a as u64, stats.p_success),
        }
    }
}

/// Output of one distillation.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundOutput {
    /// Round this output was distilled in.
    pub round_index: u64,
    pub z_bits: Bits,
    pub new_basis_bits: Bits,
    pub budget: LeakBudget,
}

fn seeded_rng(domain: &[u8], seed: &[u8; 16]) -> ChaCha20Rng {
    let mut h = Sha256::new();
    h.update(domain);
    h.update(seed);
    ChaCha20Rng::from_seed(h.finalize().into())
}

/// Fisher–Yates permutation of `bits` driven by `seed`.
pub fn shuffle(bits: &BitStr, seed: &[u8; 16]) -> Bits {
    let mut rng = seeded_rng(b"mary-kd/shuffle/v1", seed);
    let mut out = bits.to_bitvec();
    for i in (1..out.len()).rev() {
        let j = rng.random_range(0..=i as u64) as usize;
        out.swap(i, j);
    }
    out
}

/// Bits of the `(rows + cols − 1)`-long diagonal vector of a Toeplitz matrix.
fn toeplitz_diagonals(rows: usize, cols: usize, seed: &[u8; 16]) -> Bits {
    let mut rng = seeded_rng(b"mary-kd/toeplitz/v1", seed);
    (0..rows + cols - 1).map(|_| rng.random::<bool>()).collect()
}

/// `y = T·x` over GF(2) with `T[i][j] = diag[i − j + cols − 1]`.
///
/// Evaluated as an FFT convolution; memory grows as 32 bytes per bit of
/// `n + out_len`.
pub fn toeplitz_hash(bits: &BitStr, out_len: usize, seed: &[u8; 16]) -> Bits {
    let n = bits.len();
    if n == 0 || out_len == 0 {
        return Bits::repeat(false, out_len);
    }
    let diag = toeplitz_diagonals(out_len, n, seed);
    let size = (n + out_len - 1).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(size);
    let inv = planner.plan_fft_inverse(size);
    let to_complex = |b: &BitStr| {
        let mut v: Vec<Complex<f64>> = b
            .iter()
            .by_vals()
            .map(|x| Complex::new(f64::from(u8::from(x)), 0.0))
            .collect();
        v.resize(size, Complex::new(0.0, 0.0));
        v
    };
    let mut a = to_complex(&diag);
    let mut b = to_complex(bits);
    fwd.process(&mut a);
    fwd.process(&mut b);
    for (x, y) in a.iter_mut().zip(&b) {
        *x *= *y;
    }
    inv.process(&mut a);
    let scale = size as f64;
    (0..out_len)
        .map(|i| {
            let count = (a[i + n - 1].re / scale).round() as u64;
            count % 2 == 1
        })
        .collect()
}

/// Computes the round output without touching the pool.
pub fn plan_round(
    fresh: &BitStr,
    state: &BitPoolState,
    params: &RoundParams,
    stats: &AttackStats,
) -> Result<RoundOutput, BitPoolError> {
    if fresh.len() != state.a {
        return Err(BitPoolError::FreshLength {
            expected: state.a,
            got: fresh.len(),
        });
    }
    let t = params.leak(state.a, stats)?;
    plan_round_with_leak(fresh, state, params, t)
}

/// [`plan_round`] with the leak count `t` already fixed, as on the receiving
/// side where it arrives with the public parameters.
pub fn plan_round_with_leak(
    fresh: &BitStr,
    state: &BitPoolState,
    params: &RoundParams,
    t: u64,
) -> Result<RoundOutput, BitPoolError> {
    if fresh.len() != state.a {
        return Err(BitPoolError::FreshLength {
            expected: state.a,
            got: fresh.len(),
        });
    }
    let a = state.a as u64;
    let spent = t.saturating_add(params.lambda);
    if a <= spent {
        return Err(BitPoolError::InsufficientBits { a, spent });
    }
    let budget = LeakBudget::new(a, state.cfg.bits_per_basis(), t, params.lambda)?;
    let r = budget.r as usize;
    let z = budget.z as usize;

    let mut pool = fresh.to_bitvec();
    pool.extend_from_bitslice(&state.basis_bits);
    let kept = match params.mode {
        PaMode::Permute => {
            let mut mixed = shuffle(&pool, &params.shuffle_seed);
            mixed.truncate(r);
            mixed
        }
        PaMode::Toeplitz => toeplitz_hash(&pool, r, &params.shuffle_seed),
    };
    Ok(RoundOutput {
        round_index: state.round_index,
        z_bits: kept[..z].to_bitvec(),
        new_basis_bits: kept[z..].to_bitvec(),
        budget,
    })
}

/// Distills one round and installs the new bases. On error the pool is untouched.
pub fn distill(
    fresh: &BitStr,
    state: &mut BitPoolState,
    params: &RoundParams,
    stats: &AttackStats,
) -> Result<RoundOutput, BitPoolError> {
    let out = plan_round(fresh, state, params, stats)?;
    state.commit(&out)?;
    Ok(out)
}

/// Source of per-sample cloaking noise voltages.
pub trait NoiseSource {
    fn next_noise(&mut self) -> f64;
}

/// Seeded Gaussian noise `N(0, σ)`.
pub struct GaussianNoise {
    rng: ChaCha20Rng,
    normal: Normal<f64>,
}

impl GaussianNoise {
    pub fn new(sigma_v: f64, seed: u64) -> Self {
        Self {
            rng: ChaCha20Rng::seed_from_u64(seed),
            normal: Normal::new(0.0, sigma_v).expect("sigma is finite and non-negative"),
        }
    }
}

impl NoiseSource for GaussianNoise {
    fn next_noise(&mut self) -> f64 {
        self.normal.sample(&mut self.rng)
    }
}

/// Noise that is always zero.
pub struct NoNoise;

impl NoiseSource for NoNoise {
    fn next_noise(&mut self) -> f64 {
        0.0
    }
}

/// Codes every fresh bit on its basis with one fresh noise draw.
pub fn encode_round(
    state: &BitPoolState,
    fresh: &BitStr,
    noise: &mut dyn NoiseSource,
) -> Result<Vec<AdcCode>, BitPoolError> {
    if fresh.len() != state.a {
        return Err(BitPoolError::FreshLength {
            expected: state.a,
            got: fresh.len(),
        });
    }
    Ok(state
        .next_bases()
        .into_iter()
        .zip(fresh.iter().by_vals())
        .map(|(k, bit)| {
            codec::encode_sample(bit, k, noise.next_noise(), &state.cfg)
                .expect("noise source yields finite values")
        })
        .collect())
}

/// Recovers the fresh bits by subtracting the shared bases.
pub fn decode_round(state: &BitPoolState, codes: &[AdcCode]) -> Result<Bits, BitPoolError> {
    if codes.len() != state.a {
        return Err(BitPoolError::SampleCount {
            expected: state.a,
            got: codes.len(),
        });
    }
    Ok(state
        .next_bases()
        .into_iter()
        .zip(codes)
        .map(|(k, &code)| codec::decode_sample(code, k, &state.cfg))
        .collect())
}

/// Transmitter side of a round: code the fresh bits, then distill.
pub fn run_round_tx(
    state: &mut BitPoolState,
    fresh: &BitStr,
    noise: &mut dyn NoiseSource,
    params: &RoundParams,
    stats: &AttackStats,
) -> Result<(Vec<AdcCode>, RoundOutput), BitPoolError> {
    let codes = encode_round(state, fresh, noise)?;
    let out = distill(fresh, state, params, stats)?;
    Ok((codes, out))
}

/// Receiver side of a round: decode the samples, then distill.
pub fn run_round_rx(
    state: &mut BitPoolState,
    codes: &[AdcCode],
    params: &RoundParams,
    stats: &AttackStats,
) -> Result<RoundOutput, BitPoolError> {
    let fresh = decode_round(state, codes)?;
    distill(&fresh, state, params, stats)
}
