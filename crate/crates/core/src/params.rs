//! Protocol parameter sets and the shared scalar types.
//!
//! All durations are integer seconds. Coin amounts are integers in the
//! smallest denomination, [`COIN`] units per coin.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Simulated wall-clock time in seconds.
pub type Timestamp = i64;
/// Coin amount in the smallest denomination.
pub type Amount = u64;
/// Identifier of a simulated node (and of the keys it controls).
pub type NodeId = u32;

pub const MINUTE: i64 = 60;
pub const HOUR: i64 = 60 * MINUTE;
pub const DAY: i64 = 24 * HOUR;
/// Reward years are 365 days.
pub const YEAR: i64 = 365 * DAY;

/// Units per coin.
pub const COIN: Amount = 1_000_000;

/// Number of bits in a stake modifier.
pub const MODIFIER_BITS: u32 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CoinAgeMode {
    /// Threshold is multiplied by a time weight that grows with coin age.
    PeercoinTimeWeight,
    /// Every eligible stake has weight one.
    NeucoinFlat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ModifierMode {
    /// A stake keeps the modifier fixed after its first selection interval.
    Static,
    /// Every stake mining at time `t` uses the modifier of the interval containing `t`.
    Dynamic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum StakeInequality {
    /// `hash <= threshold`
    NonStrict,
    /// `hash < threshold`
    Strict,
}

/// How the selection interval is cut into the 64 modifier windows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum WindowLaw {
    /// Window `k` (1-based) has length proportional to `k`.
    Linear,
    /// Window `k` (0-based) has length proportional to `63 / (63 + (63 - k) * 2)`,
    /// i.e. sections grow from a third of the longest to the longest.
    Sectioned,
}

/// What a node does when a second block carries an already-seen stake proof.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DuplicatePolicy {
    /// Drop the second block only.
    DetectOnly,
    /// Drop both blocks and reject everything the miner has produced.
    Punitive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(deny_unknown_fields)]
pub struct ChainParams {
    /// Target spacing between blocks (seconds).
    pub block_time_target: i64,
    pub min_stake_age: i64,
    pub modifier_interval: i64,
    pub selection_interval: i64,
    pub modifier_bits: u32,
    pub coin_age_mode: CoinAgeMode,
    pub modifier_mode: ModifierMode,
    pub stake_inequality: StakeInequality,
    /// Annual coinstake rate at genesis, as a fraction.
    pub reward_initial_rate: f64,
    /// Annual coinstake rate once the decline is over.
    pub reward_final_rate: f64,
    pub reward_decline_years: f64,
    /// Window (in blocks) of the exponential moving average used by retargeting.
    pub retarget_smoothing: u32,
    pub window_law: WindowLaw,
    pub duplicate_policy: DuplicatePolicy,
}

#[derive(Debug, Error, PartialEq)]
pub enum ParamsError {
    #[error("{0} must be positive")]
    NonPositive(&'static str),
    #[error("min_stake_age ({min_stake_age}s) must exceed selection_interval ({selection_interval}s)")]
    StakeAgeTooShort {
        min_stake_age: i64,
        selection_interval: i64,
    },
    #[error("modifier_interval ({modifier_interval}s) must not exceed selection_interval ({selection_interval}s)")]
    ModifierIntervalTooLong {
        modifier_interval: i64,
        selection_interval: i64,
    },
    #[error("reward rates must satisfy 0 < final ({final_rate}) <= initial ({initial_rate})")]
    BadRewardRates { initial_rate: f64, final_rate: f64 },
    #[error("modifier_bits must be {MODIFIER_BITS}, got {0}")]
    ModifierBits(u32),
    #[error("retarget_smoothing must be at least 1")]
    Smoothing,
    #[error("selection interval of {0}s is too short for 64 windows")]
    SelectionTooShort(i64),
    #[error("invalid parameter document: {0}")]
    Json(String),
    #[error("unknown preset {0:?} (expected neucoin or peercoin)")]
    UnknownPreset(String),
}

impl ChainParams {
    /// 1-minute blocks, 1.6-day stake age, floating modifier every 200 minutes,
    /// no coin age in the threshold, 100% annual reward declining to 6% over ten years.
    pub fn neucoin() -> Self {
        Self {
            block_time_target: MINUTE,
            min_stake_age: 16 * DAY / 10,
            modifier_interval: 200 * MINUTE,
            selection_interval: 2250 * MINUTE,
            modifier_bits: MODIFIER_BITS,
            coin_age_mode: CoinAgeMode::NeucoinFlat,
            modifier_mode: ModifierMode::Dynamic,
            stake_inequality: StakeInequality::Strict,
            reward_initial_rate: 1.00,
            reward_final_rate: 0.06,
            reward_decline_years: 10.0,
            retarget_smoothing: 100,
            window_law: WindowLaw::Sectioned,
            duplicate_policy: DuplicatePolicy::Punitive,
        }
    }

    /// 10-minute blocks, 30-day stake age, static modifier (6 h interval, 9 day
    /// selection), coin-age time weight, flat 1% reward.
    pub fn peercoin() -> Self {
        Self {
            block_time_target: 10 * MINUTE,
            min_stake_age: 30 * DAY,
            modifier_interval: 6 * HOUR,
            selection_interval: 9 * DAY,
            modifier_bits: MODIFIER_BITS,
            coin_age_mode: CoinAgeMode::PeercoinTimeWeight,
            modifier_mode: ModifierMode::Static,
            stake_inequality: StakeInequality::NonStrict,
            reward_initial_rate: 0.01,
            reward_final_rate: 0.01,
            reward_decline_years: 10.0,
            retarget_smoothing: 100,
            window_law: WindowLaw::Sectioned,
            duplicate_policy: DuplicatePolicy::DetectOnly,
        }
    }

    pub fn preset(name: &str) -> Result<Self, ParamsError> {
        match name.to_ascii_lowercase().as_str() {
            "neucoin" => Ok(Self::neucoin()),
            "peercoin" => Ok(Self::peercoin()),
            _ => Err(ParamsError::UnknownPreset(name.to_string())),
        }
    }

    pub fn validate(&self) -> Result<(), ParamsError> {
        for (name, v) in [
            ("block_time_target", self.block_time_target),
            ("min_stake_age", self.min_stake_age),
            ("modifier_interval", self.modifier_interval),
            ("selection_interval", self.selection_interval),
        ] {
            if v <= 0 {
                return Err(ParamsError::NonPositive(name));
            }
        }
        if self.min_stake_age <= self.selection_interval {
            return Err(ParamsError::StakeAgeTooShort {
                min_stake_age: self.min_stake_age,
                selection_interval: self.selection_interval,
            });
        }
        if self.modifier_interval > self.selection_interval {
            return Err(ParamsError::ModifierIntervalTooLong {
                modifier_interval: self.modifier_interval,
                selection_interval: self.selection_interval,
            });
        }
        if self.selection_interval < i64::from(MODIFIER_BITS) {
            return Err(ParamsError::SelectionTooShort(self.selection_interval));
        }
        let (initial, fin) = (self.reward_initial_rate, self.reward_final_rate);
        if !(fin > 0.0 && fin <= initial && initial.is_finite()) {
            return Err(ParamsError::BadRewardRates {
                initial_rate: initial,
                final_rate: fin,
            });
        }
        if !(self.reward_decline_years >= 0.0) {
            return Err(ParamsError::NonPositive("reward_decline_years"));
        }
        if self.modifier_bits != MODIFIER_BITS {
            return Err(ParamsError::ModifierBits(self.modifier_bits));
        }
        if self.retarget_smoothing == 0 {
            return Err(ParamsError::Smoothing);
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, ParamsError> {
        let params: Self = serde_json::from_str(text).map_err(|e| ParamsError::Json(e.to_string()))?;
        params.validate()?;
        Ok(params)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("params serialize")
    }

    /// Annual reward rate, in parts per million, after `elapsed` seconds since genesis.
    ///
    /// Linear from the initial to the final rate over `reward_decline_years`,
    /// constant afterwards.
    pub fn reward_rate_ppm(&self, elapsed: i64) -> u64 {
        let initial = (self.reward_initial_rate * 1e6).round() as u64;
        let fin = (self.reward_final_rate * 1e6).round() as u64;
        let decline = (self.reward_decline_years * YEAR as f64).round() as i64;
        let elapsed = elapsed.max(0);
        if decline <= 0 || elapsed >= decline {
            return fin;
        }
        let drop = (initial - fin) as u128 * elapsed as u128 / decline as u128;
        initial - drop as u64
    }

    /// Expected number of blocks produced during one modifier interval.
    pub fn blocks_per_modifier_interval(&self) -> f64 {
        self.modifier_interval as f64 / self.block_time_target as f64
    }
}

impl Default for ChainParams {
    fn default() -> Self {
        Self::neucoin()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_are_valid() {
        ChainParams::neucoin().validate().unwrap();
        ChainParams::peercoin().validate().unwrap();
    }

    #[test]
    fn stake_age_must_exceed_selection_interval() {
        let mut p = ChainParams::neucoin();
        p.selection_interval = p.min_stake_age;
        assert!(matches!(p.validate(), Err(ParamsError::StakeAgeTooShort { .. })));
    }

    #[test]
    fn modifier_interval_bounded_by_selection() {
        let mut p = ChainParams::neucoin();
        p.modifier_interval = p.selection_interval + 1;
        assert!(matches!(p.validate(), Err(ParamsError::ModifierIntervalTooLong { .. })));
    }

    #[test]
    fn reward_rates_ordered() {
        let mut p = ChainParams::neucoin();
        p.reward_final_rate = 1.5;
        assert!(p.validate().is_err());
        p.reward_final_rate = 0.0;
        assert!(p.validate().is_err());
    }

    #[test]
    fn json_round_trip() {
        let p = ChainParams::peercoin();
        let text = p.to_json();
        assert!(text.contains("PEERCOIN_TIME_WEIGHT"));
        assert_eq!(ChainParams::from_json(&text).unwrap(), p);
    }

    #[test]
    fn json_rejects_invalid_document() {
        let mut p = ChainParams::neucoin();
        p.min_stake_age = 10;
        let text = serde_json::to_string(&p).unwrap();
        assert!(ChainParams::from_json(&text).is_err());
        assert!(ChainParams::from_json("{").is_err());
    }

    #[test]
    fn reward_rate_schedule() {
        let p = ChainParams::neucoin();
        assert_eq!(p.reward_rate_ppm(0), 1_000_000);
        assert_eq!(p.reward_rate_ppm(5 * YEAR), 530_000);
        assert_eq!(p.reward_rate_ppm(10 * YEAR), 60_000);
        assert_eq!(p.reward_rate_ppm(40 * YEAR), 60_000);
        let pc = ChainParams::peercoin();
        assert_eq!(pc.reward_rate_ppm(0), 10_000);
        assert_eq!(pc.reward_rate_ppm(7 * YEAR), 10_000);
    }
}
