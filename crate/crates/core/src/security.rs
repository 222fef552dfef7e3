//! What an eavesdropper can learn, and how much privacy amplification removes.
//!
//! The attacker records every transmitted sample, knows the coding map and
//! σ_V, but not the basis sequence. Its best single-sample strategy is to pick
//! the bit of the nearest of the `2M` noiseless levels.
//!
//! Two analytic success models are provided:
//!
//! * [`attack_stats`]: Gaussian weights sampled at displacements
//!   `j·v_max/(2M)`, `j = 0..M−1`, split into even (right bit) and odd (wrong
//!   bit) sets. This is the conservative estimate used for leak accounting.
//! * [`exact_attack_stats`]: the exact success probability of the
//!   nearest-level attacker, integrating the Gaussian over each decision cell
//!   of the cyclic level lattice. Monte Carlo attacks agree with this one.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use statrs::function::erf::erfc;
use thiserror::Error;

use crate::codec::{self, AdcCode, BasisIndex, MaryConfig};

#[derive(Debug, Error, PartialEq)]
pub enum SecurityError {
    #[error("success probability {0} is outside [0.5, 1]")]
    SuccessOutOfRange(f64),
    #[error("noise standard deviation must be positive and finite, got {0}")]
    Sigma(f64),
    #[error("t + lambda = {discarded} exceeds n = {n}")]
    Overspent { n: u64, discarded: u64 },
    #[error("n must be positive")]
    EmptyPool,
    #[error("q = {q} outside 0..{levels}")]
    Displacement { q: u32, levels: u32 },
    #[error("distribution has a negative or non-finite entry")]
    InvalidProbability,
    #[error("distribution sums to {0}, not 1")]
    Unnormalized(f64),
    #[error("exhaustive secrecy check supports at most 8 bits, got {0}")]
    MessageTooLong(u32),
}

/// Attacker success and error probabilities for one coded bit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttackStats {
    /// Probability that the guessed level belongs to the sent bit.
    pub p_right: f64,
    pub p_wrong: f64,
    /// `½ + ½(P_R − P_W)`.
    pub p_success: f64,
    /// `1 − P_s`.
    pub p_error: f64,
    /// Information advantage per bit, `P_s − ½`.
    pub per_bit_leak: f64,
}

impl AttackStats {
    fn from_right(p_right: f64) -> Self {
        let p_wrong = 1.0 - p_right;
        let p_success = 0.5 + 0.5 * (p_right - p_wrong);
        Self {
            p_right,
            p_wrong,
            p_success,
            p_error: 1.0 - p_success,
            per_bit_leak: p_success - 0.5,
        }
    }
}

fn check_sigma(sigma_v: f64) -> Result<f64, SecurityError> {
    if sigma_v.is_finite() && sigma_v > 0.0 {
        Ok(sigma_v)
    } else {
        Err(SecurityError::Sigma(sigma_v))
    }
}

/// Log of the Gaussian weight at lattice displacement `j`.
fn log_weight(j: u32, sigma_v: f64, cfg: &MaryConfig) -> f64 {
    let x = f64::from(j) * cfg.lattice_step();
    -(x * x) / (2.0 * sigma_v * sigma_v)
}

/// Even/odd split of sampled Gaussian weights `w_j = exp(−(j·v_max/2M)²/2σ²)`.
pub fn attack_stats(sigma_v: f64, cfg: &MaryConfig) -> Result<AttackStats, SecurityError> {
    let sigma_v = check_sigma(sigma_v)?;
    let (mut even, mut odd) = (0.0, 0.0);
    for j in 0..cfg.levels() {
        let w = log_weight(j, sigma_v, cfg).exp();
        if j % 2 == 0 {
            even += w;
        } else {
            odd += w;
        }
    }
    Ok(AttackStats::from_right(even / (even + odd)))
}

/// Bit carried by lattice level `j` (level voltage `j·v_max/(2M)`).
pub fn lattice_bit(j: u32, cfg: &MaryConfig) -> bool {
    (j % 2 == 1) ^ (j >= cfg.levels())
}

/// Gaussian mass of the interval `[lo, hi]` in units of σ.
fn normal_mass(lo: f64, hi: f64) -> f64 {
    let s = std::f64::consts::SQRT_2;
    if lo >= 0.0 {
        0.5 * (erfc(lo / s) - erfc(hi / s))
    } else if hi <= 0.0 {
        0.5 * (erfc(-hi / s) - erfc(-lo / s))
    } else {
        1.0 - 0.5 * erfc(-lo / s) - 0.5 * erfc(hi / s)
    }
}

/// Probability that noise moves a level by `d` lattice steps modulo `2M`,
/// i.e. into the decision cell of the level `d` steps away.
pub fn cell_masses(sigma_v: f64, cfg: &MaryConfig) -> Result<Vec<f64>, SecurityError> {
    let sigma_v = check_sigma(sigma_v)?;
    let n = 2 * cfg.levels() as i64;
    let step = cfg.lattice_step() / sigma_v;
    let wraps = (10.0 * sigma_v / cfg.v_max()).ceil() as i64 + 1;
    Ok((0..n)
        .map(|d| {
            (-wraps..=wraps)
                .map(|w| {
                    let c = (d + w * n) as f64;
                    normal_mass((c - 0.5) * step, (c + 0.5) * step)
                })
                .sum()
        })
        .collect())
}

/// Number of levels `l` with `bit(l) == bit(l + d mod 2M)`.
fn same_bit_count(d: u32, cfg: &MaryConfig) -> u64 {
    let n = 2 * u64::from(cfg.levels());
    let d = u64::from(d) % n;
    let crossings = 2 * d.min(n - d);
    if d % 2 == 0 {
        n - crossings
    } else {
        crossings
    }
}

/// Exact success probability of the nearest-level attacker against Gaussian
/// noise of standard deviation `sigma_v`, averaged over uniform bits and bases.
pub fn exact_attack_stats(sigma_v: f64, cfg: &MaryConfig) -> Result<AttackStats, SecurityError> {
    let masses = cell_masses(sigma_v, cfg)?;
    let n = masses.len() as f64;
    let right: f64 = masses
        .iter()
        .enumerate()
        .map(|(d, &p)| p * same_bit_count(d as u32, cfg) as f64 / n)
        .sum();
    Ok(AttackStats::from_right(right.min(1.0)))
}

/// A probability held as its natural logarithm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogProbability {
    pub ln: f64,
}

impl LogProbability {
    pub fn log10(self) -> f64 {
        self.ln / std::f64::consts::LN_10
    }

    pub fn value(self) -> f64 {
        self.ln.exp()
    }
}

/// Receiver error probability for a fluctuation of `q` lattice steps,
/// `w_q / Σ_j w_j`.
pub fn p_err_b(q: u32, sigma_v: f64, cfg: &MaryConfig) -> Result<LogProbability, SecurityError> {
    let sigma_v = check_sigma(sigma_v)?;
    if q >= cfg.levels() {
        return Err(SecurityError::Displacement {
            q,
            levels: cfg.levels(),
        });
    }
    // The largest weight is w_0 = 1, so the plain sum never overflows.
    let total: f64 = (0..cfg.levels())
        .map(|j| log_weight(j, sigma_v, cfg).exp())
        .sum();
    Ok(LogProbability {
        ln: log_weight(q, sigma_v, cfg) - total.ln(),
    })
}

/// Bits an attacker may have learned from `n` coded bits, `⌈n·(P_s − ½)⌉`.
pub fn leaked_bits(n: u64, p_success: f64) -> Result<u64, SecurityError> {
    if !(0.5..=1.0).contains(&p_success) {
        return Err(SecurityError::SuccessOutOfRange(p_success));
    }
    let raw = n as f64 * (p_success - 0.5);
    // Snap values that are integers up to rounding noise before taking the ceiling.
    let nearest = raw.round();
    if (raw - nearest).abs() <= 1e-9 * nearest.max(1.0) {
        Ok(nearest as u64)
    } else {
        Ok(raw.ceil() as u64)
    }
}

/// Fraction of the pool kept after discarding `t + lambda` bits.
pub fn fraction_left(n: u64, t: u64, lambda: u64) -> Result<f64, SecurityError> {
    if n == 0 {
        return Err(SecurityError::EmptyPool);
    }
    let discarded = t.checked_add(lambda).filter(|&d| d <= n).ok_or(SecurityError::Overspent {
        n,
        discarded: t.saturating_add(lambda),
    })?;
    Ok((n - discarded) as f64 / n as f64)
}

/// Residual mutual information after sacrificing `lambda` extra bits,
/// `I = 1/(2^λ·ln 2)`, kept as a base-2 logarithm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeakBound {
    pub log2_bits: f64,
}

impl LeakBound {
    /// The bound in bits; underflows to 0 beyond about λ = 1075.
    pub fn bits(self) -> f64 {
        self.log2_bits.exp2()
    }
}

pub fn pa_leak_bound(lambda: u64) -> LeakBound {
    LeakBound {
        log2_bits: -(lambda as f64) - std::f64::consts::LN_2.log2(),
    }
}

/// Length bookkeeping for one privacy amplification round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeakBudget {
    /// Shared bits entering the round, `a + m·a`.
    pub n: u64,
    /// Bits assumed leaked.
    pub t: u64,
    pub lambda: u64,
    /// Bits kept, `n − t − λ`.
    pub r: u64,
    /// Encryption bits, `a − t − λ`.
    pub z: u64,
    pub mutual_info_bound: LeakBound,
    /// `r / n`.
    pub fraction_left: f64,
}

impl LeakBudget {
    /// Budget for a round with `a` fresh bits and `m` bits per basis.
    pub fn new(a: u64, m: u32, t: u64, lambda: u64) -> Result<Self, SecurityError> {
        let n = a * (1 + u64::from(m));
        let spent = t.saturating_add(lambda);
        if spent >= a {
            return Err(SecurityError::Overspent { n: a, discarded: spent });
        }
        Ok(Self {
            n,
            t,
            lambda,
            r: n - spent,
            z: a - spent,
            mutual_info_bound: pa_leak_bound(lambda),
            fraction_left: fraction_left(n, t, lambda)?,
        })
    }
}

/// Nearest-level eavesdropper over the full table of `2M` noiseless levels.
#[derive(Debug, Clone)]
pub struct Attacker {
    cfg: MaryConfig,
    levels: Vec<(f64, bool)>,
}

impl Attacker {
    pub fn new(cfg: &MaryConfig) -> Self {
        let mut levels: Vec<(f64, bool)> = (0..cfg.levels())
            .flat_map(|k| {
                let k = BasisIndex::new(k, cfg).expect("k < M");
                [false, true].map(|bit| (codec::coded_voltage(bit, k, cfg), bit))
            })
            .collect();
        levels.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        Self { cfg: *cfg, levels }
    }

    pub fn config(&self) -> &MaryConfig {
        &self.cfg
    }

    /// Bit of the level nearest to `v` under cyclic distance; ties go to 0.
    pub fn guess_voltage(&self, v: f64) -> bool {
        let v = codec::wrap(v, &self.cfg);
        let n = self.levels.len();
        let idx = self.levels.partition_point(|&(x, _)| x < v);
        let candidates = [(idx + n - 1) % n, idx % n];
        let mut best: Option<(f64, bool)> = None;
        for i in candidates {
            let (level, bit) = self.levels[i];
            let d = codec::cyclic_distance(v, level, &self.cfg);
            best = match best {
                None => Some((d, bit)),
                Some((bd, bb)) if d < bd || (d == bd && !bit && bb) => Some((d, bit)),
                keep => keep,
            };
        }
        best.map(|(_, bit)| bit).unwrap_or(false)
    }

    pub fn guess(&self, code: AdcCode) -> bool {
        self.guess_voltage(codec::dequantize(code, &self.cfg))
    }
}

/// One-shot nearest-level guess from an ADC code.
pub fn ml_attack_guess(code: AdcCode, cfg: &MaryConfig) -> bool {
    Attacker::new(cfg).guess(code)
}

/// Result of a Monte Carlo attack.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttackTrial {
    pub trials: u64,
    pub successes: u64,
}

impl AttackTrial {
    pub fn rate(&self) -> f64 {
        self.successes as f64 / self.trials as f64
    }

    /// Binomial standard error around probability `p`.
    pub fn standard_error(&self, p: f64) -> f64 {
        (p * (1.0 - p) / self.trials as f64).sqrt()
    }

    pub fn merge(self, other: Self) -> Self {
        Self {
            trials: self.trials + other.trials,
            successes: self.successes + other.successes,
        }
    }
}

/// Codes `trials` random bits on random bases with Gaussian noise, then lets
/// the attacker guess each from its ADC code.
pub fn simulate_attack(cfg: &MaryConfig, sigma_v: f64, trials: u64, seed: u64) -> AttackTrial {
    let attacker = Attacker::new(cfg);
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma_v.max(0.0)).expect("sigma is finite");
    let mut successes = 0;
    for _ in 0..trials {
        let bit: bool = rng.random();
        let k = BasisIndex::new(rng.random_range(0..cfg.levels()), cfg).expect("k < M");
        let noise = if sigma_v > 0.0 { normal.sample(&mut rng) } else { 0.0 };
        let code = codec::encode_sample(bit, k, noise, cfg).expect("finite noise");
        if attacker.guess(code) == bit {
            successes += 1;
        }
    }
    AttackTrial { trials, successes }
}

fn check_distribution(p: &[f64]) -> Result<(), SecurityError> {
    if p.iter().any(|&x| !x.is_finite() || x < 0.0) {
        return Err(SecurityError::InvalidProbability);
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(SecurityError::Unnormalized(total));
    }
    Ok(())
}

fn plogp(p: f64) -> f64 {
    if p > 0.0 {
        -p * p.log2()
    } else {
        0.0
    }
}

/// Shannon entropy in bits, with `0·log 0 = 0`.
pub fn shannon_entropy(dist: &[f64]) -> Result<f64, SecurityError> {
    check_distribution(dist)?;
    Ok(dist.iter().map(|&p| plogp(p)).sum())
}

/// Joint distribution `P(x, y)` stored row-major (`x` selects the row).
#[derive(Debug, Clone, PartialEq)]
pub struct JointDistribution {
    rows: usize,
    cols: usize,
    p: Vec<f64>,
}

impl JointDistribution {
    pub fn new(rows: usize, cols: usize, p: Vec<f64>) -> Result<Self, SecurityError> {
        if p.len() != rows * cols {
            return Err(SecurityError::InvalidProbability);
        }
        check_distribution(&p)?;
        Ok(Self { rows, cols, p })
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.p[x * self.cols + y]
    }

    pub fn marginal_x(&self) -> Vec<f64> {
        self.p.chunks(self.cols).map(|row| row.iter().sum()).collect()
    }

    pub fn marginal_y(&self) -> Vec<f64> {
        (0..self.cols)
            .map(|y| (0..self.rows).map(|x| self.get(x, y)).sum())
            .collect()
    }
}

/// `H(X | Y) = −Σ P(x, y)·log₂ P(x | y)`.
pub fn conditional_entropy(joint: &JointDistribution) -> f64 {
    let py = joint.marginal_y();
    let mut h = 0.0;
    for x in 0..joint.rows {
        for (y, &q) in py.iter().enumerate() {
            let p = joint.get(x, y);
            if p > 0.0 {
                h -= p * (p / q).log2();
            }
        }
    }
    h
}

/// `I(X; Y) = Σ P(x, y)·log₂( P(x, y) / (P(x)·P(y)) )`.
pub fn mutual_information(joint: &JointDistribution) -> f64 {
    let px = joint.marginal_x();
    let py = joint.marginal_y();
    let mut i = 0.0;
    for (x, &a) in px.iter().enumerate() {
        for (y, &b) in py.iter().enumerate() {
            let p = joint.get(x, y);
            if p > 0.0 {
                i += p * (p / (a * b)).log2();
            }
        }
    }
    i
}

/// `I(M; C)` for an `n`-bit one-time pad with uniform messages and uniform
/// keys, built by enumerating every (message, key) pair.
pub fn otp_secrecy_check(n: u32) -> Result<f64, SecurityError> {
    let size = 1usize << n.min(31);
    let keys = vec![1.0 / size as f64; size];
    otp_mutual_information(n, &keys)
}

/// `I(M; C)` for uniform `n`-bit messages and the given key distribution.
pub fn otp_mutual_information(n: u32, key_dist: &[f64]) -> Result<f64, SecurityError> {
    if n > 8 {
        return Err(SecurityError::MessageTooLong(n));
    }
    let size = 1usize << n;
    if key_dist.len() != size {
        return Err(SecurityError::InvalidProbability);
    }
    check_distribution(key_dist)?;
    let pm = 1.0 / size as f64;
    let mut joint = vec![0.0; size * size];
    for m in 0..size {
        for (k, &pk) in key_dist.iter().enumerate() {
            joint[m * size + (m ^ k)] += pm * pk;
        }
    }
    Ok(mutual_information(&JointDistribution::new(size, size, joint)?))
}
