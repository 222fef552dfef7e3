//! Run configuration: defaults, TOML file, `--set` overrides, in that order.

use std::path::Path;

use anyhow::{anyhow, bail, Result};
use mary_kd::bitpool::PaMode;
use mary_kd::channel::{self, ChannelParams};
use mary_kd::codec::MaryConfig;
use mary_kd::entropy::EntropyConfig;
use mary_kd::security::{self, AttackStats};
use mary_kd::stations::{self, SessionOptions};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelSection {
    /// Watts.
    pub optical_power: f64,
    /// Metres.
    pub wavelength: f64,
    /// Detector gain. When absent it is chosen to hit `target_mean_voltage`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gain: Option<f64>,
    pub target_mean_voltage: f64,
    pub efficiency: f64,
    pub resistance: f64,
    pub capacitance: f64,
    pub temperature: f64,
    /// Seconds per raw sample.
    pub sampling_window: f64,
}

impl Default for ChannelSection {
    fn default() -> Self {
        Self {
            optical_power: 662e-6,
            wavelength: channel::DEFAULT_WAVELENGTH,
            gain: None,
            target_mean_voltage: 10.0,
            efficiency: 0.5,
            resistance: 50.0,
            capacitance: 1e-12,
            temperature: 300.0,
            sampling_window: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CodingSection {
    /// Bits per basis; `M = 2^m`.
    pub m: u32,
    pub b_max: f64,
    pub adc_bits: u32,
}

impl Default for CodingSection {
    fn default() -> Self {
        Self {
            m: 10,
            b_max: 10.0,
            adc_bits: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LeakModel {
    /// Sampled even/odd weight sums; larger, so more bits are discarded.
    Printed,
    /// Exact nearest-level attacker.
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Permute,
    Toeplitz,
}

impl From<Mode> for PaMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Permute => PaMode::Permute,
            Mode::Toeplitz => PaMode::Toeplitz,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RoundSection {
    /// Fresh bits per round.
    pub a: usize,
    pub lambda: u64,
    pub mode: Mode,
    pub leak_model: LeakModel,
    pub digest_allowance: u64,
    pub batch_size: usize,
    /// Lines XORed per OTP block.
    pub line_count: usize,
}

impl Default for RoundSection {
    fn default() -> Self {
        Self {
            a: 100_000,
            lambda: 1_000,
            mode: Mode::Permute,
            leak_model: LeakModel::Printed,
            digest_allowance: 256,
            batch_size: 1 << 16,
            line_count: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SeedSection {
    pub basis: u64,
    pub fresh: u64,
    pub noise: u64,
    pub shuffle: u64,
    pub encrypt: u64,
}

impl Default for SeedSection {
    fn default() -> Self {
        Self {
            basis: 1,
            fresh: 2,
            noise: 3,
            shuffle: 4,
            encrypt: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkSection {
    pub listen: String,
    pub connect: String,
    pub timeout_secs: u64,
    /// Receivers `serve-tx` waits for; all get the same frames.
    pub receivers: usize,
}

impl Default for NetworkSection {
    fn default() -> Self {
        Self {
            listen: "127.0.0.1:7878".into(),
            connect: "127.0.0.1:7878".into(),
            timeout_secs: stations::DEFAULT_TIMEOUT.as_secs(),
            receivers: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub channel: ChannelSection,
    pub coding: CodingSection,
    pub round: RoundSection,
    pub seeds: SeedSection,
    pub network: NetworkSection,
}

/// A configuration problem; exits with code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn config_err(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

/// Applies `section.key=value`; the value is parsed as a TOML value, falling
/// back to a bare string.
fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| config_err(format!("override `{spec}` is not key=value")))?;
    let value: toml::Value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("key just parsed"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let keys: Vec<&str> = path.trim().split('.').collect();
    let (last, parents) = keys.split_last().expect("split yields at least one item");
    let mut cur = table;
    for k in parents {
        cur = cur
            .entry(k.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()))
            .as_table_mut()
            .ok_or_else(|| config_err(format!("`{k}` is not a section")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = toml::Table::try_from(RunConfig::default()).expect("defaults serialize");
        if let Some(p) = path {
            let text = std::fs::read_to_string(p)
                .map_err(|e| config_err(format!("reading {}: {e}", p.display())))?;
            let file: toml::Table = toml::from_str(&text)
                .map_err(|e| config_err(format!("parsing {}: {e}", p.display())))?;
            merge(&mut table, file);
        }
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| config_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        self.channel_params()?;
        self.mary()?;
        self.entropy(0)?;
        if self.round.a == 0 {
            bail!(config_err("round.a must be positive"));
        }
        if self.network.receivers == 0 {
            bail!(config_err("network.receivers must be positive"));
        }
        Ok(())
    }

    pub fn channel_params(&self) -> Result<ChannelParams> {
        let c = &self.channel;
        let base = ChannelParams::new(
            c.optical_power,
            c.wavelength,
            c.gain.unwrap_or(1.0),
            c.efficiency,
            c.resistance,
            c.capacitance,
            c.temperature,
        )
        .map_err(|e| config_err(format!("channel: {e}")))?;
        match c.gain {
            Some(_) => Ok(base),
            None => base
                .with_gain(channel::gain_for_mean_voltage(c.target_mean_voltage, &base))
                .map_err(|e| config_err(format!("channel: {e}"))),
        }
    }

    pub fn sigma_v(&self) -> Result<f64> {
        Ok(channel::sigma_v(&self.channel_params()?))
    }

    pub fn mary(&self) -> Result<MaryConfig> {
        MaryConfig::with_adc_bits(self.coding.m, self.coding.b_max, self.coding.adc_bits)
            .map_err(|e| config_err(format!("coding: {e}")))
    }

    pub fn entropy(&self, seed: u64) -> Result<EntropyConfig> {
        EntropyConfig::new(self.channel_params()?, self.channel.sampling_window, seed)
            .map_err(|e| config_err(format!("channel: {e}")))
    }

    pub fn pa_mode(&self) -> PaMode {
        self.round.mode.into()
    }

    pub fn session_options(&self) -> SessionOptions {
        SessionOptions {
            digest_allowance: self.round.digest_allowance,
            batch_size: self.round.batch_size.max(1),
        }
    }

    /// Attack statistics that set the leak count `t`.
    pub fn leak_stats(&self) -> Result<AttackStats> {
        let sigma = self.sigma_v()?;
        let cfg = self.mary()?;
        let s = match self.round.leak_model {
            LeakModel::Printed => security::attack_stats(sigma, &cfg),
            LeakModel::Exact => security::exact_attack_stats(sigma, &cfg),
        };
        s.map_err(|e| anyhow!(e))
    }

    /// Public shuffle seed of round `round`.
    pub fn shuffle_seed(&self, round: u64) -> [u8; 16] {
        let mut h = Sha256::new();
        h.update(b"marykd/round-seed");
        h.update(self.seeds.shuffle.to_be_bytes());
        h.update(round.to_be_bytes());
        let d = h.finalize();
        d[..16].try_into().expect("digest has 32 bytes")
    }

    /// Canonical TOML of the resolved configuration.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn hello_digest(&self) -> Result<[u8; 32]> {
        Ok(stations::config_digest(&self.mary()?, self.round.a, self.pa_mode()))
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
