//! Physical channel: laser power to photon rate, detector voltage statistics,
//! ADC resolution and the operating conditions that make the cloak work.
//!
//! The detector is modelled as a photodiode and amplifier of gain `G` driving
//! an `RC` load. The voltage is Gaussian with mean `R·G·e·η·⟨n⟩₁` and a
//! variance that has an optical shot-noise part and a thermal part.

use std::f64::consts::PI;

use statrs::function::gamma::ln_gamma;
use thiserror::Error;

use crate::codec::MaryConfig;

#[derive(Debug, Error, PartialEq)]
pub enum ChannelError {
    #[error("channel parameter `{name}` must be strictly positive and finite, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("detector efficiency must lie in (0, 1], got {0}")]
    Efficiency(f64),
    #[error("ADC needs at least one bit")]
    NoAdcBits,
}

/// Physical constants (CODATA 2018 exact or recommended values).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicalConstants {
    /// Elementary charge, coulomb.
    pub elementary_charge: f64,
    /// Boltzmann constant, joule per kelvin.
    pub boltzmann: f64,
    /// Reduced Planck constant, joule second.
    pub reduced_planck: f64,
    /// Speed of light in vacuum, metre per second.
    pub light_speed: f64,
}

pub const CODATA: PhysicalConstants = PhysicalConstants {
    elementary_charge: 1.602_176_634e-19,
    boltzmann: 1.380_649e-23,
    reduced_planck: 1.054_571_817e-34,
    light_speed: 299_792_458.0,
};

/// Telecom C-band wavelength used when none is configured.
pub const DEFAULT_WAVELENGTH: f64 = 1550e-9;

/// Laser, amplifier and detector parameters, all in SI units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelParams {
    optical_power: f64,
    wavelength: f64,
    gain: f64,
    efficiency: f64,
    resistance: f64,
    capacitance: f64,
    temperature: f64,
}

fn positive(name: &'static str, value: f64) -> Result<f64, ChannelError> {
    if value.is_finite() && value > 0.0 {
        Ok(value)
    } else {
        Err(ChannelError::NonPositive { name, value })
    }
}

impl ChannelParams {
    pub fn new(
        optical_power: f64,
        wavelength: f64,
        gain: f64,
        efficiency: f64,
        resistance: f64,
        capacitance: f64,
        temperature: f64,
    ) -> Result<Self, ChannelError> {
        if !(efficiency > 0.0 && efficiency <= 1.0) {
            return Err(ChannelError::Efficiency(efficiency));
        }
        Ok(Self {
            optical_power: positive("optical_power", optical_power)?,
            wavelength: positive("wavelength", wavelength)?,
            gain: positive("gain", gain)?,
            efficiency,
            resistance: positive("resistance", resistance)?,
            capacitance: positive("capacitance", capacitance)?,
            temperature: positive("temperature", temperature)?,
        })
    }

    /// The reference operating point: 662 µW at 1550 nm, η = 0.5, 50 Ω, 1 pF,
    /// 300 K, with the gain chosen so that the mean detector voltage is 10 V.
    pub fn reference() -> Self {
        let base = Self::new(662e-6, DEFAULT_WAVELENGTH, 1.0, 0.5, 50.0, 1e-12, 300.0)
            .expect("reference parameters are valid");
        let gain = gain_for_mean_voltage(10.0, &base);
        base.with_gain(gain).expect("reference gain is positive")
    }

    pub fn optical_power(&self) -> f64 {
        self.optical_power
    }
    pub fn wavelength(&self) -> f64 {
        self.wavelength
    }
    pub fn gain(&self) -> f64 {
        self.gain
    }
    pub fn efficiency(&self) -> f64 {
        self.efficiency
    }
    pub fn resistance(&self) -> f64 {
        self.resistance
    }
    pub fn capacitance(&self) -> f64 {
        self.capacitance
    }
    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn with_optical_power(self, watts: f64) -> Result<Self, ChannelError> {
        Ok(Self {
            optical_power: positive("optical_power", watts)?,
            ..self
        })
    }

    pub fn with_gain(self, gain: f64) -> Result<Self, ChannelError> {
        Ok(Self {
            gain: positive("gain", gain)?,
            ..self
        })
    }

    pub fn with_temperature(self, kelvin: f64) -> Result<Self, ChannelError> {
        Ok(Self {
            temperature: positive("temperature", kelvin)?,
            ..self
        })
    }

    pub fn derived(&self) -> ChannelDerived {
        ChannelDerived {
            photon_rate: photon_rate(self),
            mean_voltage: mean_voltage(self),
            sigma_v: sigma_v(self),
            sigma_thermal: sigma_thermal(self),
        }
    }
}

/// Quantities derived from [`ChannelParams`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelDerived {
    /// Mean photons per second, ⟨n⟩₁.
    pub photon_rate: f64,
    /// Mean detector voltage ⟨V⟩.
    pub mean_voltage: f64,
    /// Total voltage standard deviation σ_V.
    pub sigma_v: f64,
    /// Thermal-only standard deviation.
    pub sigma_thermal: f64,
}

/// Photon energy `ħω₀` at the configured wavelength.
pub fn photon_energy(params: &ChannelParams) -> f64 {
    CODATA.reduced_planck * 2.0 * PI * CODATA.light_speed / params.wavelength
}

/// Mean photon rate `P / ħω₀`, photons per second.
pub fn photon_rate(params: &ChannelParams) -> f64 {
    params.optical_power / photon_energy(params)
}

/// Mean detector voltage `R·G·e·η·⟨n⟩₁`.
pub fn mean_voltage(params: &ChannelParams) -> f64 {
    params.resistance
        * params.gain
        * CODATA.elementary_charge
        * params.efficiency
        * photon_rate(params)
}

/// Gain that makes [`mean_voltage`] equal `target` volts, other parameters fixed.
pub fn gain_for_mean_voltage(target: f64, params: &ChannelParams) -> f64 {
    target
        / (params.resistance * CODATA.elementary_charge * params.efficiency * photon_rate(params))
}

/// Optical (shot-noise) contribution to the voltage variance.
fn optical_variance(params: &ChannelParams) -> f64 {
    let e = CODATA.elementary_charge;
    params.resistance / (2.0 * params.capacitance)
        * params.gain.powi(2)
        * e
        * e
        * params.efficiency
        * photon_rate(params)
}

fn thermal_variance(params: &ChannelParams) -> f64 {
    params.resistance / (2.0 * params.capacitance)
        * (2.0 * CODATA.boltzmann * params.temperature / params.resistance)
}

/// Total voltage standard deviation
/// `σ_V = sqrt( R/(2C) · (G²e²η⟨n⟩₁ + 2k_B·T/R) )`.
pub fn sigma_v(params: &ChannelParams) -> f64 {
    (optical_variance(params) + thermal_variance(params)).sqrt()
}

/// Thermal-only standard deviation, `sqrt(k_B·T/C)`.
pub fn sigma_thermal(params: &ChannelParams) -> f64 {
    thermal_variance(params).sqrt()
}

/// Optical-only standard deviation.
pub fn sigma_optical(params: &ChannelParams) -> f64 {
    optical_variance(params).sqrt()
}

/// Poisson probability of `n` photons at mean `mean`, evaluated in log space.
///
/// Returns 0 for a non-positive or non-finite mean.
pub fn poisson_pmf(n: u64, mean: f64) -> f64 {
    if !(mean.is_finite() && mean > 0.0) {
        return 0.0;
    }
    let n = n as f64;
    (-mean + n * mean.ln() - ln_gamma(n + 1.0)).exp()
}

/// Relative photon-number fluctuation `1/√⟨n⟩`.
pub fn noise_over_signal(mean_photons: f64) -> f64 {
    1.0 / mean_photons.sqrt()
}

/// ADC least significant bit: `full_scale / 2^adc_bits`.
pub fn lsb(full_scale: f64, adc_bits: u32) -> Result<f64, ChannelError> {
    let full_scale = positive("full_scale", full_scale)?;
    if adc_bits == 0 {
        return Err(ChannelError::NoAdcBits);
    }
    Ok(full_scale / 2f64.powi(adc_bits as i32))
}

/// How strong "much greater than" is when checking operating conditions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dominance {
    pub factor: f64,
}

impl Default for Dominance {
    fn default() -> Self {
        Self { factor: 2.0 }
    }
}

/// One evaluated inequality `lhs ⋛ rhs`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Condition {
    pub satisfied: bool,
    pub lhs: f64,
    pub rhs: f64,
    /// Signed distance in the natural units of the condition, positive when
    /// the condition holds with room to spare.
    pub margin: f64,
}

/// The four operating conditions of the cloaked channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionReport {
    /// Optical variance term dominates the thermal term.
    pub optical_over_thermal: Condition,
    /// Optical fluctuation exceeds one ADC step.
    pub fluctuation_resolved: Condition,
    /// Four standard deviations stay well inside the bit separation.
    pub noise_below_bit_separation: Condition,
    /// The noise spreads over many neighbouring bases.
    pub noise_covers_bases: Condition,
}

impl ConditionReport {
    pub fn all_satisfied(&self) -> bool {
        self.optical_over_thermal.satisfied
            && self.fluctuation_resolved.satisfied
            && self.noise_below_bit_separation.satisfied
            && self.noise_covers_bases.satisfied
    }
}

/// Evaluates the operating conditions for `params` under coding `cfg`.
///
/// The two noise-size conditions are measured against the bit separation
/// `b_max` (the mean detector voltage in the reference setup), with margins
/// `2Mσ_V − b_max` and `b_max − 4σ_V`.
pub fn check_conditions(
    params: &ChannelParams,
    cfg: &MaryConfig,
    dominance: Dominance,
) -> ConditionReport {
    let factor = dominance.factor;
    let e = CODATA.elementary_charge;
    let optical = params.gain.powi(2) * e * e * params.efficiency * photon_rate(params);
    let thermal = 2.0 * CODATA.boltzmann * params.temperature / params.resistance;
    let sigma = sigma_v(params);
    let sigma_opt = sigma_optical(params);
    let step = cfg.lsb();
    let levels = cfg.levels() as f64;
    let b_max = cfg.b_max();

    ConditionReport {
        optical_over_thermal: Condition {
            satisfied: optical >= factor * thermal,
            lhs: optical,
            rhs: thermal,
            margin: optical / thermal,
        },
        fluctuation_resolved: Condition {
            satisfied: sigma_opt > step,
            lhs: sigma_opt,
            rhs: step,
            margin: sigma_opt - step,
        },
        noise_below_bit_separation: Condition {
            satisfied: factor * 4.0 * sigma <= b_max,
            lhs: 4.0 * sigma,
            rhs: b_max,
            margin: b_max - 4.0 * sigma,
        },
        noise_covers_bases: Condition {
            satisfied: 2.0 * levels * sigma >= factor * b_max,
            lhs: 2.0 * levels * sigma,
            rhs: b_max,
            margin: 2.0 * levels * sigma - b_max,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn anchor(gain: f64) -> ChannelParams {
        ChannelParams::new(662e-6, 1550e-9, gain, 0.5, 50.0, 1e-12, 300.0).unwrap()
    }

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn rejects_invalid_parameters() {
        assert!(matches!(
            ChannelParams::new(0.0, 1550e-9, 1.0, 0.5, 50.0, 1e-12, 300.0),
            Err(ChannelError::NonPositive { name: "optical_power", .. })
        ));
        assert_eq!(
            ChannelParams::new(1e-3, 1550e-9, 1.0, 1.5, 50.0, 1e-12, 300.0),
            Err(ChannelError::Efficiency(1.5))
        );
        assert!(ChannelParams::new(1e-3, 1550e-9, 1.0, 0.5, 50.0, f64::NAN, 300.0).is_err());
    }

    #[test]
    fn photon_rate_at_anchor() {
        // P·λ / (2π·ħ·c) evaluated by hand: 5.1655e15 photons/s.
        assert!(rel(photon_rate(&anchor(1.0)), 5.1655e15) < 1e-3);
    }

    #[test]
    fn photon_rate_is_linear_in_power() {
        let p = anchor(1.0);
        let doubled = p.with_optical_power(2.0 * p.optical_power()).unwrap();
        assert!(rel(photon_rate(&doubled), 2.0 * photon_rate(&p)) < 1e-15);
    }

    #[test]
    fn mean_voltage_at_anchor_gain() {
        assert!(rel(mean_voltage(&anchor(483.4)), 10.0) < 0.01);
        let g = gain_for_mean_voltage(10.0, &anchor(1.0));
        assert!((483.0..484.0).contains(&g));
        assert!(rel(mean_voltage(&anchor(g)), 10.0) < 1e-12);
    }

    #[test]
    fn mean_voltage_vanishes_with_efficiency_and_scales_with_gain() {
        let tiny = ChannelParams::new(662e-6, 1550e-9, 483.4, 1e-300, 50.0, 1e-12, 300.0).unwrap();
        assert!(mean_voltage(&tiny) < 1e-290);
        let a = anchor(100.0);
        let b = anchor(300.0);
        assert!(rel(mean_voltage(&b), 3.0 * mean_voltage(&a)) < 1e-14);
    }

    #[test]
    fn thermal_sigma_is_64_microvolts() {
        let t = sigma_thermal(&anchor(1.0));
        assert!(rel(t, 64.36e-6) < 1e-3, "{t}");
        // With a vanishing gain the total collapses onto the thermal part.
        let p = anchor(1e-12);
        assert!(rel(sigma_v(&p), t) < 1e-9);
    }

    #[test]
    fn sigma_v_at_anchor() {
        let s = sigma_v(&anchor(483.4));
        assert!(rel(s, 19.6e-3) < 0.05, "{s}");
    }

    #[test]
    fn sigma_v_increases_with_power() {
        let mut last = 0.0;
        for i in 1..=20 {
            let p = anchor(483.4).with_optical_power(i as f64 * 50e-6).unwrap();
            let s = sigma_v(&p);
            assert!(s > last);
            last = s;
        }
    }

    #[test]
    fn poisson_values() {
        assert!((poisson_pmf(0, 1.0) - (-1.0f64).exp()).abs() < 1e-15);
        assert_eq!(poisson_pmf(3, 0.0), 0.0);
        for mean in [1.0f64, 10.0, 100.0, 1e4] {
            let hi = (mean + 20.0 * mean.sqrt()).ceil() as u64;
            let total: f64 = (0..=hi).map(|n| poisson_pmf(n, mean)).sum();
            assert!((total - 1.0).abs() < 1e-9, "mean {mean}: {total}");
        }
        let argmax = (0..300u64)
            .max_by(|&a, &b| poisson_pmf(a, 100.0).total_cmp(&poisson_pmf(b, 100.0)))
            .unwrap();
        assert!(argmax == 99 || argmax == 100);
    }

    #[test]
    fn noise_over_signal_values() {
        assert_eq!(noise_over_signal(1.0), 1.0);
        assert!((noise_over_signal(100.0) - 0.1).abs() < 1e-15);
        assert!((noise_over_signal(1e6) - 1e-3).abs() < 1e-18);
    }

    #[test]
    fn lsb_values() {
        assert!(rel(lsb(10.0, 8).unwrap(), 39.0625e-3) < 1e-12);
        assert!(rel(lsb(10.0, 10).unwrap(), 9.765625e-3) < 1e-12);
        assert!(lsb(0.0, 8).is_err());
        assert_eq!(lsb(10.0, 0), Err(ChannelError::NoAdcBits));
    }

    #[test]
    fn anchor_conditions_hold() {
        let p = ChannelParams::reference();
        let cfg = MaryConfig::new(10, 10.0).unwrap();
        let report = check_conditions(&p, &cfg, Dominance::default());
        assert!(report.all_satisfied(), "{report:?}");
        assert!((report.noise_covers_bases.margin - 30.3).abs() < 0.1);
        assert!((report.noise_below_bit_separation.margin - 9.92).abs() < 0.01);
    }

    #[test]
    fn thermal_dominates_at_tiny_gain() {
        let p = ChannelParams::reference().with_gain(1e-3).unwrap();
        let cfg = MaryConfig::new(10, 10.0).unwrap();
        let report = check_conditions(&p, &cfg, Dominance::default());
        assert!(!report.optical_over_thermal.satisfied);
    }

    #[test]
    fn few_bases_are_not_covered() {
        let p = ChannelParams::reference();
        let cfg = MaryConfig::new(2, 10.0).unwrap();
        let report = check_conditions(&p, &cfg, Dominance::default());
        // 2·4·0.0197 V is far below 10 V.
        assert!(!report.noise_covers_bases.satisfied);
    }

    #[test]
    fn variance_decomposition() {
        for gain in [1.0, 10.0, 483.4, 2000.0] {
            let p = anchor(gain);
            let e = CODATA.elementary_charge;
            let optical = p.resistance() / (2.0 * p.capacitance())
                * gain
                * gain
                * e
                * e
                * p.efficiency()
                * photon_rate(&p);
            let diff = sigma_v(&p).powi(2) - sigma_thermal(&p).powi(2);
            assert!(rel(diff, optical) < 1e-12, "gain {gain}");
        }
    }
}
