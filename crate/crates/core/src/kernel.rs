//! Stake kernels, the per-second stake check, and difficulty retargeting.
//!
//! Kernel serialization is 40 bytes, all integers little-endian, in field order:
//!
//! | bytes  | field               | width |
//! |--------|---------------------|-------|
//! | 0..8   | `n_stake_modifier`  | u64   |
//! | 8..16  | `n_time_block_from` | i64   |
//! | 16..20 | `n_tx_prev_offset`  | u32   |
//! | 20..28 | `n_tx_prev_time`    | i64   |
//! | 28..32 | `n_prevout_num`     | u32   |
//! | 32..40 | `n_time_tx`         | i64   |
//!
//! The kernel hash is SHA-256 of those bytes, read as a little-endian integer.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hash::{sha256, Hash256};
use crate::params::{Amount, ChainParams, CoinAgeMode, NodeId, StakeInequality, Timestamp, DAY};

pub const KERNEL_BYTES: usize = 40;

/// Fixed-point one for time weights (32 fractional bits).
pub const WEIGHT_ONE: u64 = 1 << 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct UtxoId {
    pub tx_hash: Hash256,
    pub output_index: u32,
}

impl fmt::Display for UtxoId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.tx_hash, self.output_index)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Utxo {
    pub id: UtxoId,
    pub amount: Amount,
    /// Timestamp of the transaction that created the output.
    pub tx_time: Timestamp,
    /// Timestamp of the block that confirmed it.
    pub block_time_from: Timestamp,
    /// Byte offset of the transaction inside that block.
    pub tx_offset: u32,
    pub owner: NodeId,
}

impl Utxo {
    pub fn age_at(&self, now: Timestamp) -> i64 {
        now - self.tx_time
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Kernel {
    pub n_stake_modifier: u64,
    pub n_time_block_from: Timestamp,
    pub n_tx_prev_offset: u32,
    pub n_tx_prev_time: Timestamp,
    pub n_prevout_num: u32,
    pub n_time_tx: Timestamp,
}

impl Kernel {
    pub fn for_stake(utxo: &Utxo, modifier: u64, now: Timestamp) -> Self {
        Self {
            n_stake_modifier: modifier,
            n_time_block_from: utxo.block_time_from,
            n_tx_prev_offset: utxo.tx_offset,
            n_tx_prev_time: utxo.tx_time,
            n_prevout_num: utxo.id.output_index,
            n_time_tx: now,
        }
    }

    pub fn serialize(&self) -> [u8; KERNEL_BYTES] {
        let mut out = [0u8; KERNEL_BYTES];
        out[0..8].copy_from_slice(&self.n_stake_modifier.to_le_bytes());
        out[8..16].copy_from_slice(&self.n_time_block_from.to_le_bytes());
        out[16..20].copy_from_slice(&self.n_tx_prev_offset.to_le_bytes());
        out[20..28].copy_from_slice(&self.n_tx_prev_time.to_le_bytes());
        out[28..32].copy_from_slice(&self.n_prevout_num.to_le_bytes());
        out[32..40].copy_from_slice(&self.n_time_tx.to_le_bytes());
        out
    }
}

pub fn kernel_hash(k: &Kernel) -> Hash256 {
    sha256(&[&k.serialize()])
}

/// Network difficulty target. Always at least one.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Target(Hash256);

impl Target {
    pub fn new(value: Hash256) -> Self {
        if value.is_zero() {
            Self(Hash256::from_u64(1))
        } else {
            Self(value)
        }
    }

    pub fn value(&self) -> Hash256 {
        self.0
    }

    /// Target giving one expected block per `block_time_target` when
    /// `weighted_stake` (sum of amount times weight) is mining.
    pub fn equilibrium(weighted_stake: f64, params: &ChainParams) -> Self {
        let denom = params.block_time_target as f64 * weighted_stake.max(1.0);
        Self::new(Hash256::from_f64(2f64.powi(256) / denom))
    }

    /// Probability that one kernel with this stake passes.
    pub fn pass_probability(&self, amount: Amount, weight_fp: u64) -> f64 {
        (self.threshold(amount, weight_fp).to_f64() / 2f64.powi(256)).min(1.0)
    }

    pub fn threshold(&self, amount: Amount, weight_fp: u64) -> Hash256 {
        self.0.scale_by(amount, weight_fp)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("stake aged {age}s is younger than the minimum stake age {min_stake_age}s")]
pub struct Ineligible {
    pub age: i64,
    pub min_stake_age: i64,
}

/// Coin-age weight as a real number.
pub fn time_weight(age: i64, params: &ChainParams) -> f64 {
    time_weight_fp(age, params) as f64 / WEIGHT_ONE as f64
}

/// Coin-age weight with 32 fractional bits.
///
/// Time-weight mode: 0 before the minimum stake age, 1 for the following
/// day, then linear up to 60 over the next 60 days, capped at 60.
pub fn time_weight_fp(age: i64, params: &ChainParams) -> u64 {
    if age < params.min_stake_age {
        return 0;
    }
    match params.coin_age_mode {
        CoinAgeMode::NeucoinFlat => WEIGHT_ONE,
        CoinAgeMode::PeercoinTimeWeight => {
            let ramp_start = params.min_stake_age + DAY;
            if age <= ramp_start {
                return WEIGHT_ONE;
            }
            let ramp = 60 * DAY;
            let into = (age - ramp_start).min(ramp) as u128;
            WEIGHT_ONE + (59 * into * WEIGHT_ONE as u128 / ramp as u128) as u64
        }
    }
}

fn passes(hash: &Hash256, threshold: &Hash256, inequality: StakeInequality) -> bool {
    if *threshold == Hash256::MAX {
        return true;
    }
    match inequality {
        StakeInequality::Strict => hash < threshold,
        StakeInequality::NonStrict => hash <= threshold,
    }
}

/// The stake check against a precomputed hash.
pub fn check_hash(
    hash: &Hash256,
    target: &Target,
    utxo: &Utxo,
    now: Timestamp,
    params: &ChainParams,
) -> Result<bool, Ineligible> {
    let age = utxo.age_at(now);
    if age < params.min_stake_age {
        return Err(Ineligible {
            age,
            min_stake_age: params.min_stake_age,
        });
    }
    let weight = time_weight_fp(age, params);
    Ok(passes(hash, &target.threshold(utxo.amount, weight), params.stake_inequality))
}

pub fn check_stake(
    k: &Kernel,
    target: &Target,
    utxo: &Utxo,
    params: &ChainParams,
) -> Result<bool, Ineligible> {
    check_hash(&kernel_hash(k), target, utxo, k.n_time_tx, params)
}

/// Moving-average retarget after one block spaced `actual_spacing` seconds from its parent.
pub fn retarget(prev: Target, actual_spacing: i64, params: &ChainParams) -> Target {
    let tau = params.block_time_target as u64;
    let w = params.retarget_smoothing as u64;
    // Beyond 2(w+1)τ the per-block clamp binds anyway.
    let spacing = actual_spacing.clamp(0, (2 * (w + 1) * tau) as i64) as u64;
    let num = (w - 1) * tau + 2 * spacing;
    let den = (w + 1) * tau;
    let prev_v = prev.value();
    let lo = prev_v.div_u64(2);
    let hi = prev_v.saturating_mul_u64(2);
    let new = prev_v.mul_div_u64(num, den).clamp(lo, hi);
    Target::new(new)
}

/// A kernel that passed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StakeHit {
    pub utxo: Utxo,
    pub kernel: Kernel,
    pub hash_proof: Hash256,
}

/// One second of mining with a single modifier shared by all stakes.
pub fn mine_tick(
    utxos: &[Utxo],
    modifier: u64,
    target: &Target,
    now: Timestamp,
    params: &ChainParams,
) -> Vec<StakeHit> {
    let mut hashes = 0;
    mine_tick_with(utxos, |_| Some(modifier), target, now, params, &mut hashes)
}

/// One second of mining where each stake may use its own modifier.
///
/// Stakes that are too young, or for which `modifier_of` returns `None`, are
/// skipped. `hashes` is incremented once per kernel evaluated. Hits come
/// back sorted by UTXO id.
pub fn mine_tick_with<F>(
    utxos: &[Utxo],
    mut modifier_of: F,
    target: &Target,
    now: Timestamp,
    params: &ChainParams,
    hashes: &mut u64,
) -> Vec<StakeHit>
where
    F: FnMut(&Utxo) -> Option<u64>,
{
    let mut hits = Vec::new();
    for utxo in utxos {
        if utxo.age_at(now) < params.min_stake_age {
            continue;
        }
        let Some(modifier) = modifier_of(utxo) else {
            continue;
        };
        let kernel = Kernel::for_stake(utxo, modifier, now);
        let hash = kernel_hash(&kernel);
        *hashes += 1;
        if check_hash(&hash, target, utxo, now, params) == Ok(true) {
            hits.push(StakeHit {
                utxo: *utxo,
                kernel,
                hash_proof: hash,
            });
        }
    }
    hits.sort_by(|a, b| a.utxo.id.cmp(&b.utxo.id));
    hits
}
