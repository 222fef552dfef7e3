//! Simulated physical random bit generator.
//!
//! Detector voltages are drawn from the Gaussian law of [`crate::channel`],
//! each sample is classified above or below the mean, and the raw bits are
//! XORed with a Fibonacci LFSR keystream to break residual bias. Quality is
//! judged by the run-length distribution, which for unbiased bits follows
//! `P(k) = 2^−k`.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::bits::{BitStr, Bits};
use crate::channel::{self, ChannelParams};

#[derive(Debug, Error, PartialEq)]
pub enum EntropyError {
    #[error("sampling window must be positive and finite, got {0}")]
    SamplingWindow(f64),
    #[error("LFSR width must be in 1..=64, got {0}")]
    LfsrWidth(u32),
    #[error("LFSR needs at least one tap")]
    NoTaps,
    #[error("LFSR tap {tap} outside 1..={width}")]
    TapOutOfRange { tap: u32, width: u32 },
    #[error("LFSR state must be nonzero")]
    ZeroState,
    #[error("LFSR state does not fit in {0} bits")]
    StateTooWide(u32),
    #[error("run-length fit needs at least 3 nonzero bins, got {0}")]
    DegenerateFit(usize),
}

/// Reference level used to turn voltages into bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MeanReference {
    /// The analytic mean voltage of the channel.
    #[default]
    FixedAnalytic,
    /// Mean of all samples seen so far in the stream.
    RunningAverage,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntropyConfig {
    pub channel: ChannelParams,
    /// Duration of one sampling window Δt, seconds.
    pub sampling_window: f64,
    pub seed: u64,
    pub mean_reference: MeanReference,
}

impl EntropyConfig {
    pub fn new(channel: ChannelParams, sampling_window: f64, seed: u64) -> Result<Self, EntropyError> {
        if !(sampling_window.is_finite() && sampling_window > 0.0) {
            return Err(EntropyError::SamplingWindow(sampling_window));
        }
        Ok(Self {
            channel,
            sampling_window,
            seed,
            mean_reference: MeanReference::default(),
        })
    }

    /// Nominal raw sample rate, `1/Δt`.
    pub fn sample_rate(&self) -> f64 {
        1.0 / self.sampling_window
    }
}

/// Draws `count` detector voltages from `N(⟨V⟩, σ_V)`.
///
/// The stream is a pure function of the configured seed.
pub fn sample_voltages(count: usize, cfg: &EntropyConfig) -> Vec<f64> {
    PhysicalRng::new(cfg).voltages(count)
}

/// Thresholds voltages against `mean_reference`: above is 1, below is 0 and a
/// sample exactly at the reference is dropped.
pub fn classify_bits(voltages: &[f64], mean_reference: f64) -> Bits {
    voltages
        .iter()
        .filter_map(|&v| {
            if v > mean_reference {
                Some(true)
            } else if v < mean_reference {
                Some(false)
            } else {
                None
            }
        })
        .collect()
}

/// Like [`classify_bits`] but against the mean of the preceding samples; the
/// first sample is compared to `seed_mean`.
pub fn classify_bits_running(voltages: &[f64], seed_mean: f64) -> Bits {
    let mut out = Bits::with_capacity(voltages.len());
    let mut sum = 0.0;
    for (i, &v) in voltages.iter().enumerate() {
        let reference = if i == 0 { seed_mean } else { sum / i as f64 };
        if v > reference {
            out.push(true);
        } else if v < reference {
            out.push(false);
        }
        sum += v;
    }
    out
}

/// Stateful generator: voltage sampler, classifier and whitener.
pub struct PhysicalRng {
    rng: ChaCha20Rng,
    normal: Normal<f64>,
    mean: f64,
    mode: MeanReference,
    running_sum: f64,
    running_count: u64,
}

impl PhysicalRng {
    pub fn new(cfg: &EntropyConfig) -> Self {
        let derived = cfg.channel.derived();
        Self {
            rng: ChaCha20Rng::seed_from_u64(cfg.seed),
            normal: Normal::new(derived.mean_voltage, derived.sigma_v)
                .expect("channel sigma is positive and finite"),
            mean: derived.mean_voltage,
            mode: cfg.mean_reference,
            running_sum: 0.0,
            running_count: 0,
        }
    }

    pub fn voltages(&mut self, count: usize) -> Vec<f64> {
        (0..count).map(|_| self.normal.sample(&mut self.rng)).collect()
    }

    /// Produces exactly `count` raw (unwhitened) bits.
    pub fn raw_bits(&mut self, count: usize) -> Bits {
        let mut out = Bits::with_capacity(count);
        while out.len() < count {
            let v = self.normal.sample(&mut self.rng);
            let reference = match self.mode {
                MeanReference::FixedAnalytic => self.mean,
                MeanReference::RunningAverage if self.running_count == 0 => self.mean,
                MeanReference::RunningAverage => self.running_sum / self.running_count as f64,
            };
            self.running_sum += v;
            self.running_count += 1;
            if v > reference {
                out.push(true);
            } else if v < reference {
                out.push(false);
            }
        }
        out
    }

    /// Produces `count` bits whitened by `lfsr`, continuing its keystream.
    pub fn whitened_bits(&mut self, count: usize, lfsr: &mut Lfsr) -> Bits {
        let mut bits = self.raw_bits(count);
        lfsr.apply(&mut bits);
        bits
    }
}

/// Fibonacci LFSR description.
///
/// Taps are polynomial exponents: `[4, 3]` is `x⁴ + x³ + 1`. The feedback is
/// the XOR of the stages named by the taps, the output is the stage at the
/// far end of the register from where feedback enters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LfsrSpec {
    width: u32,
    taps: Vec<u32>,
    initial_state: u64,
}

impl LfsrSpec {
    pub fn new(width: u32, taps: Vec<u32>, initial_state: u64) -> Result<Self, EntropyError> {
        if !(1..=64).contains(&width) {
            return Err(EntropyError::LfsrWidth(width));
        }
        if taps.is_empty() {
            return Err(EntropyError::NoTaps);
        }
        if let Some(&tap) = taps.iter().find(|&&t| t == 0 || t > width) {
            return Err(EntropyError::TapOutOfRange { tap, width });
        }
        if initial_state == 0 {
            return Err(EntropyError::ZeroState);
        }
        if width < 64 && initial_state >> width != 0 {
            return Err(EntropyError::StateTooWide(width));
        }
        Ok(Self {
            width,
            taps,
            initial_state,
        })
    }

    /// 32-bit maximal-length register `x³² + x²² + x² + x + 1`.
    pub fn default_whitener() -> Self {
        Self::new(32, vec![32, 22, 2, 1], 0xACE1_u64).expect("valid default LFSR")
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn taps(&self) -> &[u32] {
        &self.taps
    }
}

/// Running LFSR keystream.
#[derive(Debug, Clone)]
pub struct Lfsr {
    state: u64,
    width: u32,
    mask: u64,
}

impl Lfsr {
    pub fn new(spec: &LfsrSpec) -> Self {
        let mask = spec
            .taps
            .iter()
            .fold(0u64, |acc, &t| acc | 1u64 << (spec.width - t));
        Self {
            state: spec.initial_state,
            width: spec.width,
            mask,
        }
    }

    pub fn next_bit(&mut self) -> bool {
        let out = self.state & 1 == 1;
        let feedback = (self.state & self.mask).count_ones() & 1;
        self.state = (self.state >> 1) | (u64::from(feedback) << (self.width - 1));
        out
    }

    pub fn state(&self) -> u64 {
        self.state
    }

    /// XORs the next `bits.len()` keystream bits into `bits`.
    pub fn apply(&mut self, bits: &mut BitStr) {
        for mut bit in bits.iter_mut() {
            let k = self.next_bit();
            *bit ^= k;
        }
    }
}

/// `output[i] = input[i] XOR keystream[i]` for a fresh register built from `spec`.
pub fn lfsr_whiten(bits: &BitStr, spec: &LfsrSpec) -> Bits {
    let mut out = bits.to_bitvec();
    Lfsr::new(spec).apply(&mut out);
    out
}

/// Histogram of maximal runs of identical bits, both symbols pooled.
pub fn run_length_histogram(bits: &BitStr) -> BTreeMap<usize, u64> {
    let mut hist = BTreeMap::new();
    let mut iter = bits.iter().by_vals();
    let Some(mut current) = iter.next() else {
        return hist;
    };
    let mut run = 1usize;
    for b in iter {
        if b == current {
            run += 1;
        } else {
            *hist.entry(run).or_insert(0) += 1;
            current = b;
            run = 1;
        }
    }
    *hist.entry(run).or_insert(0) += 1;
    hist
}

/// Fitted run-length model `count(k) = c·exp(−k·ln2·(1−ε))`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunLengthFit {
    /// Amplitude, in counts.
    pub c: f64,
    /// Relative departure of the decay rate from `ln 2`.
    pub epsilon: f64,
    /// The (pooled) histogram that was fitted.
    pub histogram: BTreeMap<usize, u64>,
}

impl RunLengthFit {
    pub fn predicted(&self, k: usize) -> f64 {
        self.c * (-(k as f64) * std::f64::consts::LN_2 * (1.0 - self.epsilon)).exp()
    }
}

/// Count-weighted least squares of `ln count(k)` against `k`.
pub fn fit_run_length(hist: &BTreeMap<usize, u64>) -> Result<RunLengthFit, EntropyError> {
    fit_run_length_joint(std::slice::from_ref(hist))
}

/// Fits one model to several histograms of the same process, each bin of each
/// histogram being one observation. The amplitude is per histogram.
pub fn fit_run_length_joint(
    hists: &[BTreeMap<usize, u64>],
) -> Result<RunLengthFit, EntropyError> {
    let points: Vec<(f64, f64, f64)> = hists
        .iter()
        .flat_map(|h| h.iter())
        .filter(|(_, &n)| n > 0)
        .map(|(&k, &n)| (k as f64, (n as f64).ln(), n as f64))
        .collect();
    let distinct_bins = {
        let mut ks: Vec<usize> = hists
            .iter()
            .flat_map(|h| h.iter().filter(|(_, &n)| n > 0).map(|(&k, _)| k))
            .collect();
        ks.sort_unstable();
        ks.dedup();
        ks.len()
    };
    if distinct_bins < 3 {
        return Err(EntropyError::DegenerateFit(distinct_bins));
    }

    let (mut sw, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(x, y, w) in &points {
        sw += w;
        sx += w * x;
        sy += w * y;
        sxx += w * x * x;
        sxy += w * x * y;
    }
    let det = sw * sxx - sx * sx;
    let slope = (sw * sxy - sx * sy) / det;
    let intercept = (sy - slope * sx) / sw;

    let mut pooled = BTreeMap::new();
    for h in hists {
        for (&k, &n) in h {
            *pooled.entry(k).or_insert(0) += n;
        }
    }
    Ok(RunLengthFit {
        c: intercept.exp(),
        epsilon: 1.0 + slope / std::f64::consts::LN_2,
        histogram: pooled,
    })
}

/// Run-length histograms of two 0.65 Mbit captures from physical hardware.
pub mod fixtures {
    use std::collections::BTreeMap;

    pub const L1: [(usize, u64); 21] = [
        (1, 159676),
        (2, 79651),
        (3, 40253),
        (4, 20017),
        (5, 9864),
        (6, 4960),
        (7, 2567),
        (8, 1239),
        (9, 623),
        (10, 313),
        (11, 156),
        (12, 59),
        (13, 37),
        (14, 21),
        (15, 9),
        (16, 8),
        (17, 3),
        (18, 4),
        (19, 1),
        (20, 0),
        (21, 0),
    ];

    pub const L2: [(usize, u64); 21] = [
        (1, 159805),
        (2, 79964),
        (3, 39766),
        (4, 20021),
        (5, 9892),
        (6, 4962),
        (7, 2488),
        (8, 1306),
        (9, 630),
        (10, 336),
        (11, 148),
        (12, 71),
        (13, 42),
        (14, 10),
        (15, 11),
        (16, 6),
        (17, 2),
        (18, 0),
        (19, 1),
        (20, 1),
        (21, 1),
    ];

    pub fn histogram(list: &[(usize, u64)]) -> BTreeMap<usize, u64> {
        list.iter().copied().collect()
    }
}

/// Fraction of ones in `bits`.
pub fn ones_fraction(bits: &BitStr) -> f64 {
    bits.count_ones() as f64 / bits.len() as f64
}

/// The analytic classification threshold of a channel.
pub fn analytic_mean(params: &ChannelParams) -> f64 {
    channel::mean_voltage(params)
}
