//! M-ary basis arithmetic.
//!
//! A fresh bit `a ∈ {0, 1}` is sent as the voltage `a·b_max + b(k)`, where the
//! basis voltage
//!
//! ```text
//! b(k) = b_max · ( k/M − (1 − (−1)^k)/2 ),   k = 0..M−1
//! ```
//!
//! alternates between the lower half (even `k`) and, after wrapping modulo
//! `2·b_max`, the upper half (odd `k`) of the ADC range. Noise is added before
//! wrapping and quantization. A receiver that knows `k` subtracts `b(k)` and
//! picks the nearer bit level under cyclic distance.
//!
//! Together the `2M` possible noiseless levels form a lattice with step
//! `v_max/(2M)` whose bits alternate, except at the two seams `0` and `b_max`
//! where two levels of the same bit meet.

use thiserror::Error;

use crate::bits::BitStr;

#[derive(Debug, Error, PartialEq)]
pub enum CodecError {
    #[error("bits per basis must be in 2..=15, got {0}")]
    BitsPerBasis(u32),
    #[error("ADC resolution must be between m = {m} and 16 bits, got {adc_bits}")]
    AdcBits { m: u32, adc_bits: u32 },
    #[error("b_max must be positive and finite, got {0}")]
    BMax(f64),
    #[error("basis index {k} out of range for M = {levels}")]
    BasisOutOfRange { k: u32, levels: u32 },
    #[error("ADC code {code} out of range for {levels} levels")]
    CodeOutOfRange { code: u32, levels: u32 },
    #[error("expected {expected} basis bits, got {got}")]
    WrongBlockLength { expected: usize, got: usize },
    #[error("sample voltage is not finite")]
    NonFinite,
}

/// Coding geometry.
///
/// `M = 2^m` bases, bit levels `{0, b_max}`, ADC full scale `v_max = 2·b_max`.
/// The ADC has `2^adc_bits` levels; by default `adc_bits = m`, so the ADC and
/// the basis count share the same resolution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaryConfig {
    m: u32,
    b_max: f64,
    adc_bits: u32,
}

impl MaryConfig {
    pub fn new(m: u32, b_max: f64) -> Result<Self, CodecError> {
        Self::with_adc_bits(m, b_max, m)
    }

    /// Configuration whose ADC resolution differs from the basis count.
    ///
    /// With `adc_bits = m` every ADC cell holds one level of each bit, so a
    /// tap reading codes learns nothing even without noise. From `m + 2`
    /// upward, nearest-level decisions on dequantized codes coincide with
    /// decisions on the analog voltage.
    pub fn with_adc_bits(m: u32, b_max: f64, adc_bits: u32) -> Result<Self, CodecError> {
        if !(2..=15).contains(&m) {
            return Err(CodecError::BitsPerBasis(m));
        }
        if adc_bits < m || adc_bits > 16 {
            return Err(CodecError::AdcBits { m, adc_bits });
        }
        if !(b_max.is_finite() && b_max > 0.0) {
            return Err(CodecError::BMax(b_max));
        }
        Ok(Self { m, b_max, adc_bits })
    }

    /// Bits per basis, `m`.
    pub fn bits_per_basis(&self) -> u32 {
        self.m
    }

    /// Number of bases, `M = 2^m`.
    pub fn levels(&self) -> u32 {
        1 << self.m
    }

    pub fn b_max(&self) -> f64 {
        self.b_max
    }

    /// ADC full scale, `2·b_max`.
    pub fn v_max(&self) -> f64 {
        2.0 * self.b_max
    }

    pub fn adc_bits(&self) -> u32 {
        self.adc_bits
    }

    pub fn adc_levels(&self) -> u32 {
        1 << self.adc_bits
    }

    /// Width of one ADC level.
    pub fn lsb(&self) -> f64 {
        self.v_max() / f64::from(self.adc_levels())
    }

    /// Separation between bases of the same parity, `v_max/M`.
    pub fn basis_spacing(&self) -> f64 {
        self.v_max() / f64::from(self.levels())
    }

    /// Step of the combined bit-0/bit-1 level lattice, `v_max/(2M)`.
    pub fn lattice_step(&self) -> f64 {
        self.v_max() / (2.0 * f64::from(self.levels()))
    }
}

/// Index of one of the `M` bases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BasisIndex(u32);

impl BasisIndex {
    pub fn new(k: u32, cfg: &MaryConfig) -> Result<Self, CodecError> {
        if k < cfg.levels() {
            Ok(Self(k))
        } else {
            Err(CodecError::BasisOutOfRange {
                k,
                levels: cfg.levels(),
            })
        }
    }

    pub fn get(self) -> u32 {
        self.0
    }
}

/// One ADC output word.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AdcCode(u16);

impl AdcCode {
    pub fn new(code: u32, cfg: &MaryConfig) -> Result<Self, CodecError> {
        if code < cfg.adc_levels() {
            Ok(Self(code as u16))
        } else {
            Err(CodecError::CodeOutOfRange {
                code,
                levels: cfg.adc_levels(),
            })
        }
    }

    pub fn get(self) -> u16 {
        self.0
    }
}

/// Basis index from an `m`-bit block; the first bit is the least significant.
pub fn basis_index(block: &BitStr, cfg: &MaryConfig) -> Result<BasisIndex, CodecError> {
    let m = cfg.bits_per_basis() as usize;
    if block.len() != m {
        return Err(CodecError::WrongBlockLength {
            expected: m,
            got: block.len(),
        });
    }
    let k = block
        .iter()
        .by_vals()
        .enumerate()
        .fold(0u32, |acc, (i, b)| acc | (u32::from(b) << i));
    Ok(BasisIndex(k))
}

/// Basis voltage `b_max·(k/M − (1−(−1)^k)/2)`, before wrapping.
pub fn basis_voltage(k: BasisIndex, cfg: &MaryConfig) -> f64 {
    let k = k.get();
    let frac = f64::from(k) / f64::from(cfg.levels());
    if k % 2 == 0 {
        cfg.b_max() * frac
    } else {
        cfg.b_max() * (frac - 1.0)
    }
}

/// Voltage of a payload bit.
pub fn bit_level(bit: bool, cfg: &MaryConfig) -> f64 {
    if bit {
        cfg.b_max()
    } else {
        0.0
    }
}

/// Reduces `v` modulo `2·b_max` into `[0, 2·b_max)`.
pub fn wrap(v: f64, cfg: &MaryConfig) -> f64 {
    let span = cfg.v_max();
    let r = v.rem_euclid(span);
    // rem_euclid can round up to `span` for tiny negative inputs.
    if r >= span {
        0.0
    } else {
        r
    }
}

/// Distance between two voltages on the circle of circumference `v_max`.
pub fn cyclic_distance(x: f64, y: f64, cfg: &MaryConfig) -> f64 {
    let d = wrap(x - y, cfg);
    d.min(cfg.v_max() - d)
}

/// Noiseless transmitted voltage for `bit` on basis `k`, wrapped into range.
pub fn coded_voltage(bit: bool, k: BasisIndex, cfg: &MaryConfig) -> f64 {
    wrap(bit_level(bit, cfg) + basis_voltage(k, cfg), cfg)
}

/// ADC quantization: `floor(v / LSB)` clamped to the code range.
pub fn quantize(v: f64, cfg: &MaryConfig) -> Result<AdcCode, CodecError> {
    if !v.is_finite() {
        return Err(CodecError::NonFinite);
    }
    let top = cfg.adc_levels() - 1;
    let raw = (v / cfg.lsb()).floor();
    let code = if raw <= 0.0 {
        0
    } else if raw >= f64::from(top) {
        top
    } else {
        raw as u32
    };
    Ok(AdcCode(code as u16))
}

/// Midpoint of the ADC level, `(code + ½)·LSB`.
pub fn dequantize(code: AdcCode, cfg: &MaryConfig) -> f64 {
    (f64::from(code.get()) + 0.5) * cfg.lsb()
}

/// Codes one bit: bit level plus basis voltage plus noise, wrapped and quantized.
pub fn encode_sample(
    bit: bool,
    k: BasisIndex,
    noise_v: f64,
    cfg: &MaryConfig,
) -> Result<AdcCode, CodecError> {
    quantize(
        wrap(bit_level(bit, cfg) + basis_voltage(k, cfg) + noise_v, cfg),
        cfg,
    )
}

/// Legitimate receiver: subtract the known basis and round to the nearer bit
/// level. An exact tie decodes as 0.
pub fn decode_voltage(v: f64, k: BasisIndex, cfg: &MaryConfig) -> bool {
    let residual = wrap(v - basis_voltage(k, cfg), cfg);
    let to_zero = cyclic_distance(residual, 0.0, cfg);
    let to_one = cyclic_distance(residual, cfg.b_max(), cfg);
    to_one < to_zero
}

pub fn decode_sample(code: AdcCode, k: BasisIndex, cfg: &MaryConfig) -> bool {
    decode_voltage(dequantize(code, cfg), k, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bits;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;
    use rand_distr::{Distribution, Normal};

    fn cfg256() -> MaryConfig {
        MaryConfig::new(8, 3.0).unwrap()
    }

    #[test]
    fn config_validation() {
        assert_eq!(MaryConfig::new(1, 1.0), Err(CodecError::BitsPerBasis(1)));
        assert_eq!(MaryConfig::new(4, 0.0), Err(CodecError::BMax(0.0)));
        assert!(MaryConfig::with_adc_bits(8, 1.0, 7).is_err());
        assert!(MaryConfig::with_adc_bits(8, 1.0, 17).is_err());
        let c = MaryConfig::new(10, 10.0).unwrap();
        assert_eq!(c.levels(), 1024);
        assert_eq!(c.v_max(), 20.0);
        assert_eq!(c.basis_spacing(), 20.0 / 1024.0);
    }

    #[test]
    fn basis_index_first_bit_is_lsb() {
        let c3 = MaryConfig::new(3, 1.0).unwrap();
        let k = |s: &str| basis_index(&bits::parse(s).unwrap(), &c3).unwrap().get();
        assert_eq!(k("000"), 0);
        assert_eq!(k("101"), 5);
        assert_eq!(k("100"), 1);
        let c8 = cfg256();
        let ones = bits::parse("11111111").unwrap();
        assert_eq!(basis_index(&ones, &c8).unwrap().get(), 255);
        assert_eq!(
            basis_index(&bits::parse("11").unwrap(), &c3),
            Err(CodecError::WrongBlockLength { expected: 3, got: 2 })
        );
    }

    #[test]
    fn basis_voltage_values() {
        let c = cfg256();
        let b = |k| basis_voltage(BasisIndex::new(k, &c).unwrap(), &c);
        assert_eq!(b(0), 0.0);
        assert!((b(1) - (-2.98828125)).abs() < 1e-12);
        assert!((b(2) - 0.0234375).abs() < 1e-12);
        assert!(BasisIndex::new(256, &c).is_err());
    }

    #[test]
    fn wrap_values() {
        let c = cfg256();
        assert!((wrap(6.5, &c) - 0.5).abs() < 1e-12);
        assert!((wrap(-0.5, &c) - 5.5).abs() < 1e-12);
        assert_eq!(wrap(3.0, &c), 3.0);
        assert_eq!(wrap(-1e-300, &c), 0.0);
    }

    /// Reduces by repeated add/subtract of the full scale.
    fn wrap_oracle(mut v: f64, span: f64) -> f64 {
        while v >= span {
            v -= span;
        }
        while v < 0.0 {
            v += span;
        }
        v
    }

    proptest! {
        #[test]
        fn wrap_matches_repeated_subtraction(v in -40.0f64..40.0) {
            let c = cfg256();
            let w = wrap(v, &c);
            prop_assert!((0.0..6.0).contains(&w));
            prop_assert!((w - wrap_oracle(v, 6.0)).abs() < 1e-12);
        }

        #[test]
        fn quantization_error_is_at_most_half_lsb(v in 0.0f64..6.0) {
            let c = cfg256();
            let back = dequantize(quantize(v, &c).unwrap(), &c);
            prop_assert!((back - v).abs() <= c.lsb() / 2.0 + 1e-12);
        }
    }

    #[test]
    fn quantize_boundaries() {
        let c = cfg256();
        assert_eq!(quantize(0.0, &c).unwrap().get(), 0);
        assert_eq!(quantize(6.0 - 1e-12, &c).unwrap().get(), 255);
        assert_eq!(quantize(f64::NAN, &c), Err(CodecError::NonFinite));
    }

    #[test]
    fn encode_examples() {
        let c = cfg256();
        let k0 = BasisIndex::new(0, &c).unwrap();
        let k2 = BasisIndex::new(2, &c).unwrap();
        assert_eq!(encode_sample(false, k0, 0.0, &c).unwrap().get(), 0);
        assert_eq!(encode_sample(true, k0, 0.0, &c).unwrap().get(), 128);
        // 0.0234375 + 0.00586 V falls in the second ADC level.
        assert_eq!(encode_sample(false, k2, c.lsb() / 4.0, &c).unwrap().get(), 1);
    }

    #[test]
    fn exhaustive_noiseless_round_trip() {
        for m in 2..=10 {
            for adc_bits in [m, m + 2] {
                let c = MaryConfig::with_adc_bits(m, 3.0, adc_bits).unwrap();
                for k in 0..c.levels() {
                    let k = BasisIndex::new(k, &c).unwrap();
                    for bit in [false, true] {
                        let code = encode_sample(bit, k, 0.0, &c).unwrap();
                        assert_eq!(decode_sample(code, k, &c), bit, "m={m} k={k:?}");
                    }
                }
            }
        }
    }

    #[test]
    fn decode_tie_goes_to_zero() {
        let c = cfg256();
        let k = BasisIndex::new(0, &c).unwrap();
        assert!(!decode_voltage(c.b_max() / 2.0, k, &c));
        assert!(!decode_voltage(1.5 * c.b_max(), k, &c));
        assert!(decode_voltage(c.b_max() / 2.0 + 1e-9, k, &c));
    }

    #[test]
    fn noisy_round_trips_at_anchor_noise() {
        let c = MaryConfig::new(10, 10.0).unwrap();
        let normal = Normal::new(0.0, 19.6e-3).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        for _ in 0..100_000 {
            let bit = rng.random::<bool>();
            let k = BasisIndex::new(rng.random_range(0..c.levels()), &c).unwrap();
            let code = encode_sample(bit, k, normal.sample(&mut rng), &c).unwrap();
            assert_eq!(decode_sample(code, k, &c), bit);
        }
    }

    #[test]
    fn same_parity_bases_are_one_spacing_apart() {
        let c = cfg256();
        for k in 0..c.levels() - 2 {
            let a = coded_voltage(false, BasisIndex::new(k, &c).unwrap(), &c);
            let b = coded_voltage(false, BasisIndex::new(k + 2, &c).unwrap(), &c);
            assert!((cyclic_distance(a, b, &c) - c.basis_spacing()).abs() < 1e-12);
        }
    }

    #[test]
    fn wrapped_bases_are_distinct_and_on_two_grids() {
        let c = cfg256();
        let step = c.basis_spacing();
        let mut seen: Vec<f64> = (0..c.levels())
            .map(|k| coded_voltage(false, BasisIndex::new(k, &c).unwrap(), &c))
            .collect();
        for (k, v) in seen.iter().enumerate() {
            // Even bases sit on the grid j·step in the lower half, odd bases on
            // b_max + (j + ½)·step in the upper half.
            let offset = if k % 2 == 0 { 0.0 } else { c.b_max() + step / 2.0 };
            let j = (v - offset) / step;
            assert!((j - j.round()).abs() < 1e-9, "k={k} v={v}");
        }
        seen.sort_by(f64::total_cmp);
        seen.dedup();
        assert_eq!(seen.len(), c.levels() as usize);
    }

    #[test]
    fn combined_levels_alternate_except_at_seams() {
        let c = cfg256();
        let mut levels: Vec<(f64, bool)> = (0..c.levels())
            .flat_map(|k| {
                let k = BasisIndex::new(k, &c).unwrap();
                [false, true].map(|b| (coded_voltage(b, k, &c), b))
            })
            .collect();
        levels.sort_by(|x, y| x.0.total_cmp(&y.0));
        let m2 = levels.len();
        assert_eq!(m2, 512);
        for j in 0..m2 {
            let (v, bit) = levels[j];
            assert!((v - j as f64 * c.lattice_step()).abs() < 1e-12);
            let expected = (j % 2 == 1) ^ (j >= m2 / 2);
            assert_eq!(bit, expected, "j={j}");
        }
    }

    #[test]
    fn coarse_adc_hides_the_bit() {
        // With one ADC level per basis, each code is reached by exactly one
        // noiseless level of each bit.
        let c = cfg256();
        let mut hits = vec![[0u32; 2]; c.adc_levels() as usize];
        for k in 0..c.levels() {
            let k = BasisIndex::new(k, &c).unwrap();
            for bit in [false, true] {
                let code = encode_sample(bit, k, 0.0, &c).unwrap();
                hits[code.get() as usize][bit as usize] += 1;
            }
        }
        assert!(hits.iter().all(|h| h[0] == h[1]));
    }
}
