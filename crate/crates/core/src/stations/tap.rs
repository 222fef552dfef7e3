//! Passive eavesdropper working from a recorded transcript.
//!
//! The tap sees every frame but not the bases. It guesses each fresh bit with
//! the nearest-level attacker, then pushes its guesses through the public
//! privacy amplification (unknown basis bits filled with zeros) to estimate
//! how much of the distilled key it would know.

use std::collections::BTreeMap;

use super::frame::{BatchPayload, Frame, FrameKind, PaParamsPayload};
use super::session::SessionError;
use crate::bitpool::{self, BitPoolState, RoundParams};
use crate::bits::{BitStr, Bits};
use crate::codec::{AdcCode, MaryConfig};
use crate::security::{self, AttackStats, Attacker};

/// What the simulator knows and the tap does not, for scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub fresh_bits: Bits,
    /// Distilled encryption bits, if the post-PA check is wanted.
    pub z_bits: Option<Bits>,
}

/// The tap's view of one round.
#[derive(Debug, Clone, PartialEq)]
pub struct TapRound {
    pub round: u32,
    pub codes: Vec<AdcCode>,
    pub guessed_bits: Bits,
    pub pa: PaParamsPayload,
    /// The tap's reconstruction of `z`.
    pub guessed_z: Bits,
    /// Fraction of fresh bits guessed right.
    pub agreement: Option<f64>,
    /// Fraction of distilled bits guessed right.
    pub post_pa_agreement: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TapReport {
    pub rounds: Vec<TapRound>,
    /// Success probability under the sampled-sum estimate.
    pub predicted: Option<AttackStats>,
    /// Success probability of the nearest-level attacker, exact.
    pub predicted_exact: Option<AttackStats>,
}

impl TapReport {
    /// Agreement over all scored fresh bits.
    pub fn agreement(&self) -> Option<f64> {
        pooled(self.rounds.iter().map(|r| (r.agreement, r.guessed_bits.len())))
    }

    /// Agreement over all scored distilled bits.
    pub fn post_pa_agreement(&self) -> Option<f64> {
        pooled(self.rounds.iter().map(|r| (r.post_pa_agreement, r.guessed_z.len())))
    }

    pub fn total_samples(&self) -> usize {
        self.rounds.iter().map(|r| r.codes.len()).sum()
    }
}

fn pooled(it: impl Iterator<Item = (Option<f64>, usize)>) -> Option<f64> {
    let (mut hits, mut total) = (0.0, 0usize);
    for (rate, n) in it {
        let rate = rate?;
        hits += rate * n as f64;
        total += n;
    }
    (total > 0).then(|| hits / total as f64)
}

fn agreement(a: &BitStr, b: &BitStr) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    let same = a.iter().by_vals().zip(b.iter().by_vals()).filter(|(x, y)| x == y).count();
    same as f64 / a.len() as f64
}

/// Attacks every round in `frames`. `truth[i]`, when present, scores round `i`.
/// `sigma_v ≤ 0` skips the predicted statistics.
pub fn run_tap(
    frames: &[Frame],
    cfg: &MaryConfig,
    sigma_v: f64,
    truth: &[GroundTruth],
) -> Result<TapReport, SessionError> {
    let mut batches: BTreeMap<u32, Vec<AdcCode>> = BTreeMap::new();
    let mut params: BTreeMap<u32, PaParamsPayload> = BTreeMap::new();
    for f in frames {
        match f.kind {
            FrameKind::Batch => {
                let codes = batches.entry(f.round).or_default();
                for c in BatchPayload::decode(&f.payload)?.codes {
                    codes.push(AdcCode::new(u32::from(c), cfg)?);
                }
            }
            FrameKind::PaParams => {
                params.insert(f.round, PaParamsPayload::decode(&f.payload)?);
            }
            _ => {}
        }
    }
    if batches.is_empty() {
        return Err(SessionError::IncompleteTranscript("no BATCH frames"));
    }
    let attacker = Attacker::new(cfg);
    let m = cfg.bits_per_basis() as usize;
    let mut rounds = Vec::with_capacity(batches.len());
    for (i, (round, codes)) in batches.into_iter().enumerate() {
        let pa = *params
            .get(&round)
            .ok_or(SessionError::IncompleteTranscript("BATCH without PA_PARAMS"))?;
        if pa.a != codes.len() as u64 {
            return Err(SessionError::IncompleteTranscript("BATCH count differs from a"));
        }
        let guessed_bits: Bits = codes.iter().map(|&c| attacker.guess(c)).collect();
        let unknown_bases = BitPoolState::new(*cfg, codes.len(), Bits::repeat(false, m * codes.len()))?;
        let rp = RoundParams {
            lambda: pa.lambda,
            shuffle_seed: pa.seed,
            t_override: Some(pa.t),
            mode: pa.mode,
        };
        let guessed_z = bitpool::plan_round_with_leak(&guessed_bits, &unknown_bases, &rp, pa.t)?.z_bits;
        let gt = truth.get(i);
        rounds.push(TapRound {
            round,
            agreement: gt.map(|g| agreement(&guessed_bits, &g.fresh_bits)),
            post_pa_agreement: gt
                .and_then(|g| g.z_bits.as_ref())
                .map(|z| agreement(&guessed_z, z)),
            codes,
            guessed_bits,
            pa,
            guessed_z,
        });
    }
    let (predicted, predicted_exact) = if sigma_v > 0.0 {
        (
            security::attack_stats(sigma_v, cfg).ok(),
            security::exact_attack_stats(sigma_v, cfg).ok(),
        )
    } else {
        (None, None)
    };
    Ok(TapReport {
        rounds,
        predicted,
        predicted_exact,
    })
}
