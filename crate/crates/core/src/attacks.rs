//! Scripted attackers.
//!
//! Double spend and history revision are block races between the attacker
//! and the honest network, either in continuous time (two Poisson miners) or
//! one-second ticks. Grinding and the preprogrammed attack hash real kernels
//! against modifiers from [`crate::modifier`].
//!
//! Every trial draws from its own stream, so results do not depend on the
//! number of worker threads.

use rand::Rng;
use rand_distr::{Distribution, Exp1, Geometric, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

use crate::analytics::{
    catchup_upper_bound, double_spend_probability, grinding_trial_probability, poisson_sf, GrindThreshold,
    RaceParams, DEFAULT_GRIND_STAKES,
};
use crate::hash::Hash256;
use crate::kernel::{check_hash, kernel_hash, time_weight_fp, Kernel, Target, Utxo, UtxoId};
use crate::modifier::{generate_modifier, stake_interval_start, LinearChain, ModifierCache, ModifierError, SourceBlock};
use crate::params::{Amount, ChainParams, ModifierMode, ParamsError, Timestamp, COIN};
use crate::rng::{derive_stream, SimRng};
use crate::tailprob::{log_sum_exp, TailProb};

/// Two-sided 99% normal quantile.
pub const Z_99: f64 = 2.575_829_303_548_900_4;

/// A race is abandoned as lost once the chance of ever closing the gap drops below this.
const HOPELESS: f64 = 1e-12;

/// Largest number of kernel hashes one grinding interval may need.
const MAX_INTERVAL_HASHES: f64 = (1u64 << 40) as f64;

const STREAM_DOUBLE_SPEND: u64 = 0xd5;
const STREAM_HISTORY: u64 = 0x4157;
const STREAM_GRIND: u64 = 0x96;
const STREAM_PREPROGRAMMED: u64 = 0x99;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AttackKind {
    DoubleSpend,
    HistoryRevision,
    Grinding,
    Preprogrammed,
}

/// When the double-spend race is decided.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RaceModel {
    /// The attacker mines for the time the honest network needs for `n`
    /// blocks on average (`nτ/q`), then races from the resulting gap; a tie
    /// counts as caught up.
    #[default]
    ExpectedWindow,
    /// Honest blocks are counted exactly: the attacker wins by being strictly
    /// ahead at any point after the victim has `n` confirmations.
    FullRace,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RaceClock {
    /// Poisson block arrivals.
    #[default]
    Continuous,
    /// One stake draw per second for each side; both may hit in the same second.
    PerSecond,
}

fn default_stakes() -> u64 {
    DEFAULT_GRIND_STAKES as u64
}

fn default_bits() -> u32 {
    64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(deny_unknown_fields)]
pub struct AttackSpec {
    pub kind: AttackKind,
    /// Fraction of the staked coins the attacker controls.
    pub p: f64,
    #[serde(default)]
    pub n_conf: u64,
    #[serde(default)]
    pub lag_blocks: u64,
    /// The attacker still holds the coins, so they do not mine on the main chain.
    #[serde(default)]
    pub owns_coins: bool,
    #[serde(default = "default_stakes")]
    pub n_stakes: u64,
    /// Kernel hashes per second available for grinding.
    #[serde(default)]
    pub hash_budget: f64,
    /// `[start, end)` in seconds after genesis.
    #[serde(default)]
    pub attack_window: Option<(Timestamp, Timestamp)>,
    pub trials: u64,
    /// Honest blocks after which a trial is abandoned. Defaults to `10 * n_conf`.
    #[serde(default)]
    pub give_up_blocks: Option<u64>,
    /// Width of the grinding search space. Below 64 only for toy runs.
    #[serde(default = "default_bits")]
    pub modifier_bits: u32,
    #[serde(default)]
    pub race_model: RaceModel,
    #[serde(default)]
    pub clock: RaceClock,
    #[serde(default)]
    pub grind_threshold: GrindThreshold,
}

impl AttackSpec {
    pub fn new(kind: AttackKind, p: f64, trials: u64) -> Self {
        Self {
            kind,
            p,
            n_conf: 0,
            lag_blocks: 0,
            owns_coins: false,
            n_stakes: default_stakes(),
            hash_budget: 0.0,
            attack_window: None,
            trials,
            give_up_blocks: None,
            modifier_bits: default_bits(),
            race_model: RaceModel::default(),
            clock: RaceClock::default(),
            grind_threshold: GrindThreshold::default(),
        }
    }

    pub fn double_spend(p: f64, n_conf: u64, trials: u64) -> Self {
        Self {
            n_conf,
            ..Self::new(AttackKind::DoubleSpend, p, trials)
        }
    }

    pub fn history_revision(p: f64, lag_blocks: u64, owns_coins: bool, trials: u64) -> Self {
        Self {
            lag_blocks,
            owns_coins,
            ..Self::new(AttackKind::HistoryRevision, p, trials)
        }
    }

    pub fn from_json(text: &str) -> Result<Self, AttackError> {
        let spec: Self = serde_json::from_str(text).map_err(|e| AttackError::Invalid(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }

    pub fn give_up(&self) -> u64 {
        self.give_up_blocks
            .unwrap_or(10 * self.n_conf.max(self.lag_blocks).max(1))
    }

    pub fn validate(&self) -> Result<(), AttackError> {
        let bad = |m: String| Err(AttackError::Invalid(m));
        if !(self.p > 0.0 && self.p < 1.0) {
            return bad(format!("p must lie in (0, 1), got {}", self.p));
        }
        if self.trials == 0 {
            return bad("trials must be positive".into());
        }
        if self.n_stakes == 0 {
            return bad("n_stakes must be positive".into());
        }
        if !(1..=64).contains(&self.modifier_bits) {
            return bad(format!("modifier_bits must be in 1..=64, got {}", self.modifier_bits));
        }
        if !(self.hash_budget >= 0.0 && self.hash_budget.is_finite()) {
            return bad(format!("hash_budget must be finite and non-negative, got {}", self.hash_budget));
        }
        if self.give_up() == 0 {
            return bad("give_up_blocks must be positive".into());
        }
        match self.kind {
            AttackKind::DoubleSpend => {
                if self.n_stakes <= self.n_conf {
                    return Err(AttackError::Infeasible {
                        factor: self.n_stakes,
                        needed: self.n_conf + 1,
                    });
                }
            }
            AttackKind::HistoryRevision => {
                if self.lag_blocks == 0 {
                    return bad("lag_blocks must be at least 1".into());
                }
            }
            AttackKind::Grinding => {}
            AttackKind::Preprogrammed => match self.attack_window {
                Some((s, e)) if e > s && s >= 0 => {}
                _ => return bad("attack_window must be [start, end) with 0 <= start < end".into()),
            },
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum AttackError {
    #[error("invalid attack spec: {0}")]
    Invalid(String),
    #[error("splitting into {factor} stakes is infeasible: need at least {needed}, the confirmations plus one")]
    Infeasible { factor: u64, needed: u64 },
    #[error("misconfigured attack: {0}")]
    Misconfigured(String),
    #[error(transparent)]
    Params(#[from] ParamsError),
    #[error(transparent)]
    Modifier(#[from] ModifierError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub lo: f64,
    pub hi: f64,
    pub z: f64,
}

impl ConfidenceInterval {
    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }
}

/// Wilson score interval for `successes` out of `trials`.
pub fn wilson_interval(successes: u64, trials: u64, z: f64) -> ConfidenceInterval {
    if trials == 0 {
        return ConfidenceInterval { lo: 0.0, hi: 1.0, z };
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    ConfidenceInterval {
        lo: if successes == 0 { 0.0 } else { (center - half).max(0.0) },
        hi: if successes >= trials { 1.0 } else { (center + half).min(1.0) },
        z,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackOutcome {
    pub kind: AttackKind,
    pub successes: u64,
    pub trials: u64,
    pub probability: f64,
    /// 99% Wilson interval.
    pub ci: ConfidenceInterval,
    /// Largest attacker lead over the chain it has to beat, over all trials.
    pub max_lead: i64,
    /// Trials stopped by the give-up rule rather than decided.
    pub gave_up: u64,
    pub give_up_blocks: u64,
    /// Model prediction for the race as simulated.
    pub analytic: Option<TailProb>,
    /// Catch-up upper bound, for history revision.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub analytic_bound: Option<TailProb>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grinding: Option<GrindingStats>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preprogrammed: Option<PreprogrammedStats>,
}

impl AttackOutcome {
    fn from_tally(kind: AttackKind, t: Tally, trials: u64, give_up: u64) -> Self {
        Self {
            kind,
            successes: t.successes,
            trials,
            probability: t.successes as f64 / trials as f64,
            ci: wilson_interval(t.successes, trials, Z_99),
            max_lead: t.max_lead,
            gave_up: t.gave_up,
            give_up_blocks: give_up,
            analytic: None,
            analytic_bound: None,
            grinding: None,
            preprogrammed: None,
        }
    }

    /// Whether the analytic prediction falls inside the 99% interval.
    pub fn agrees(&self) -> Option<bool> {
        self.analytic.map(|a| self.ci.contains(a.to_linear()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("outcome serializes")
    }
}

/// `factor` near-equal stakes summing to `total`.
pub fn plan_split(total: Amount, n_conf: u64, factor: u64) -> Result<Vec<Amount>, AttackError> {
    if factor < n_conf + 1 {
        return Err(AttackError::Infeasible {
            factor,
            needed: n_conf + 1,
        });
    }
    let base = total / factor;
    let extra = total % factor;
    Ok((0..factor).map(|i| base + u64::from(i < extra)).collect())
}

/// Share of the original stake still able to mine after `mined` stakes were used.
pub fn residual_fraction(factor: u64, mined: u64) -> f64 {
    factor.saturating_sub(mined) as f64 / factor as f64
}

/// Success chance of the full race: the attacker must be strictly ahead at
/// some point after the honest chain has `n` blocks.
///
/// `Σ_k NB(k; n, p) · (k > n ? 1 : (p/q)^{n-k+1})`, where `NB(k)` is the
/// chance of `k` attacker blocks before the `n`-th honest one.
pub fn full_race_probability(p: f64, n: u64) -> TailProb {
    assert!(p > 0.0 && p < 1.0);
    if p >= 0.5 {
        return TailProb::ONE;
    }
    let q = 1.0 - p;
    if n == 0 {
        return TailProb::from_ln((p / q).ln());
    }
    let nf = n as f64;
    let ln_nb = |k: u64| {
        let k = k as f64;
        ln_gamma(nf + k) - ln_gamma(k + 1.0) - ln_gamma(nf) + k * p.ln() + nf * q.ln()
    };
    let ln_r = (p / q).ln();
    let head: Vec<f64> = (0..=n).map(ln_nb).collect();
    // Summed directly: the complement of the head cancels when p is small.
    let mut tail = Vec::new();
    for k in n + 1.. {
        let t = ln_nb(k);
        tail.push(t);
        let ratio = p * (nf + k as f64) / (k as f64 + 1.0);
        if t < tail[0] - 40.0 && ratio < 0.99 {
            break;
        }
    }
    let ahead = TailProb::from_ln(log_sum_exp(&tail));
    let caught: Vec<f64> = (0..=n).map(|k| head[k as usize] + (n - k + 1) as f64 * ln_r).collect();
    ahead.add(TailProb::from_ln(log_sum_exp(&caught)))
}

#[derive(Clone, Copy, Debug, Default)]
struct Tally {
    successes: u64,
    gave_up: u64,
    max_lead: i64,
}

#[derive(Clone, Copy, Debug)]
struct Trial {
    success: bool,
    gave_up: bool,
    lead: i64,
}

impl Tally {
    fn add(mut self, t: Trial) -> Self {
        self.successes += t.success as u64;
        self.gave_up += t.gave_up as u64;
        self.max_lead = self.max_lead.max(t.lead);
        self
    }

    fn merge(self, o: Self) -> Self {
        Self {
            successes: self.successes + o.successes,
            gave_up: self.gave_up + o.gave_up,
            max_lead: self.max_lead.max(o.max_lead),
        }
    }
}

fn run_trials<F>(seed: u64, stream: u64, trials: u64, f: F) -> Tally
where
    F: Fn(&mut SimRng) -> Trial + Sync,
{
    let init = Tally {
        max_lead: i64::MIN,
        ..Tally::default()
    };
    (0..trials)
        .into_par_iter()
        .fold(
            || init,
            |acc, i| {
                let mut rng = SimRng::new(seed, derive_stream(stream, i));
                acc.add(f(&mut rng))
            },
        )
        .reduce(|| init, Tally::merge)
}

/// Per-second probability that at least one of `stakes` stakes, each passing
/// with probability `pi`, hits.
fn any_hit(stakes: u64, pi: f64) -> f64 {
    -((stakes as f64) * (-pi).ln_1p()).exp_m1()
}

/// Race two miners from `gap` (attacker minus target) until the attacker
/// reaches `need`. Rates are per τ; on the per-second clock they are
/// per-second hit probabilities.
struct Race {
    attacker: f64,
    honest: f64,
    clock: RaceClock,
}

impl Race {
    fn step<R: Rng>(&self, rng: &mut R) -> (bool, bool) {
        match self.clock {
            RaceClock::Continuous => {
                let a = rng.random::<f64>() * (self.attacker + self.honest) < self.attacker;
                (a, !a)
            }
            RaceClock::PerSecond => {
                let (a, h) = (self.attacker, self.honest);
                let any = a + h - a * h;
                let u = rng.random::<f64>() * any;
                if u < a * (1.0 - h) {
                    (true, false)
                } else if u < a * (1.0 - h) + h * (1.0 - a) {
                    (false, true)
                } else {
                    (true, true)
                }
            }
        }
    }

    /// Ratio of upward to downward moves; the chance of ever climbing `d` is `ratio^d`.
    fn ratio(&self) -> f64 {
        match self.clock {
            RaceClock::Continuous => self.attacker / self.honest,
            RaceClock::PerSecond => self.attacker * (1.0 - self.honest) / (self.honest * (1.0 - self.attacker)),
        }
    }

    /// Runs until `gap >= need` (success), the honest count passes `give_up`,
    /// or the gap is hopeless. Returns (success, gave_up, max gap).
    fn run<R: Rng>(&self, rng: &mut R, mut gap: i64, need: i64, mut honest: u64, give_up: u64) -> (bool, bool, i64) {
        let mut best = gap;
        let ln_ratio = self.ratio().ln();
        let cutoff = if ln_ratio < 0.0 {
            (HOPELESS.ln() / ln_ratio).ceil() as i64
        } else {
            i64::MAX
        };
        loop {
            if gap >= need {
                return (true, false, best);
            }
            if need - gap > cutoff {
                return (false, false, best);
            }
            if honest >= give_up {
                return (false, true, best);
            }
            let (a, h) = self.step(rng);
            gap += a as i64 - h as i64;
            honest += h as u64;
            best = best.max(gap);
        }
    }
}

/// Simple double spend: a private fork from the block before the payment.
pub fn run_double_spend(spec: &AttackSpec, params: &ChainParams, seed: u64) -> Result<AttackOutcome, AttackError> {
    expect_kind(spec, AttackKind::DoubleSpend)?;
    spec.validate()?;
    params.validate()?;
    let p = spec.p;
    let q = 1.0 - p;
    let n = spec.n_conf;
    let stakes = spec.n_stakes;
    let give_up = spec.give_up();
    let tau = params.block_time_target as f64;
    // Attacker intensity with `used` stakes already spent on fork blocks.
    let attacker_rate = |used: u64| match spec.clock {
        RaceClock::Continuous => p * residual_fraction(stakes, used),
        RaceClock::PerSecond => any_hit(stakes.saturating_sub(used), p / (tau * stakes as f64)),
    };
    let honest_rate = match spec.clock {
        RaceClock::Continuous => q,
        RaceClock::PerSecond => -(-q / tau).exp_m1(),
    };
    let race_from = |rng: &mut SimRng, k: u64, honest: u64, need: i64| {
        let race = Race {
            attacker: attacker_rate(k),
            honest: honest_rate,
            clock: spec.clock,
        };
        race.run(rng, k as i64 - honest as i64, need, honest, give_up)
    };

    let tally = run_trials(seed, STREAM_DOUBLE_SPEND, spec.trials, |rng| {
        let (success, gave_up, lead) = match spec.race_model {
            RaceModel::ExpectedWindow => {
                let k = window_blocks(rng, spec.clock, n as f64 / q, tau, &attacker_rate);
                if k >= n {
                    (true, false, k as i64 - n as i64)
                } else {
                    race_from(rng, k, n, 0)
                }
            }
            RaceModel::FullRace => {
                // Attacker blocks before the n-th honest block.
                let mut k = 0u64;
                let mut h = 0u64;
                let mut best = 0i64;
                while h < n {
                    let race = Race {
                        attacker: attacker_rate(k),
                        honest: honest_rate,
                        clock: spec.clock,
                    };
                    let (a, b) = race.step(rng);
                    k += a as u64;
                    h += b as u64;
                    best = best.max(k as i64 - h as i64);
                }
                let (s, g, l) = race_from(rng, k, h, 1);
                (s, g, best.max(l))
            }
        };
        Trial { success, gave_up, lead }
    });
    let mut out = AttackOutcome::from_tally(AttackKind::DoubleSpend, tally, spec.trials, give_up);
    if spec.clock == RaceClock::Continuous {
        out.analytic = Some(match spec.race_model {
            RaceModel::ExpectedWindow => double_spend_probability(p, n),
            RaceModel::FullRace => full_race_probability(p, n),
        });
    }
    Ok(out)
}

/// Attacker blocks found in a window of `window_tau` block times.
fn window_blocks<F: Fn(u64) -> f64>(rng: &mut SimRng, clock: RaceClock, window_tau: f64, tau: f64, rate: &F) -> u64 {
    let mut k = 0u64;
    match clock {
        RaceClock::Continuous => {
            let mut t = 0.0;
            loop {
                let r = rate(k);
                if r <= 0.0 {
                    return k;
                }
                let e: f64 = Exp1.sample(rng);
                t += e / r;
                if t > window_tau {
                    return k;
                }
                k += 1;
            }
        }
        RaceClock::PerSecond => {
            let seconds = (window_tau * tau).round() as u64;
            let mut s = 0u64;
            loop {
                let r = rate(k);
                if r <= 0.0 {
                    return k;
                }
                let skip = if r >= 1.0 {
                    0
                } else {
                    Geometric::new(r).expect("probability in (0, 1)").sample(rng)
                };
                s = s.saturating_add(skip).saturating_add(1);
                if s > seconds {
                    return k;
                }
                k += 1;
            }
        }
    }
}

/// History revision: a fork started `lag_blocks` behind the tip.
pub fn run_history_revision(spec: &AttackSpec, params: &ChainParams, seed: u64) -> Result<AttackOutcome, AttackError> {
    expect_kind(spec, AttackKind::HistoryRevision)?;
    spec.validate()?;
    params.validate()?;
    let p = spec.p;
    let alpha = if spec.owns_coins { RaceParams::owned_alpha(p) } else { 1.0 };
    let give_up = spec.give_up();
    let tau = params.block_time_target as f64;
    let race = match spec.clock {
        RaceClock::Continuous => Race {
            attacker: p,
            honest: alpha,
            clock: RaceClock::Continuous,
        },
        RaceClock::PerSecond => Race {
            attacker: -(-p / tau).exp_m1(),
            honest: -(-alpha / tau).exp_m1(),
            clock: RaceClock::PerSecond,
        },
    };
    let lag = spec.lag_blocks as i64;
    let tally = run_trials(seed, STREAM_HISTORY, spec.trials, |rng| {
        let (success, gave_up, best) = race.run(rng, -lag, 1, 0, give_up);
        Trial {
            success,
            gave_up,
            lead: best,
        }
    });
    let mut out = AttackOutcome::from_tally(AttackKind::HistoryRevision, tally, spec.trials, give_up);
    let ratio = race.ratio();
    out.analytic = Some(if ratio >= 1.0 {
        TailProb::ONE
    } else {
        TailProb::from_ln((lag + 1) as f64 * ratio.ln())
    });
    let rp = RaceParams {
        tau,
        ..RaceParams::new(p, spec.lag_blocks).with_alpha(alpha)
    };
    out.analytic_bound = Some(catchup_upper_bound(&rp).value);
    Ok(out)
}

fn expect_kind(spec: &AttackSpec, kind: AttackKind) -> Result<(), AttackError> {
    if spec.kind != kind {
        return Err(AttackError::Invalid(format!("expected a {kind:?} spec, got {:?}", spec.kind)));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrindingStats {
    pub modifier_bits: u32,
    pub attempts_per_interval: u64,
    pub blocks_per_interval: f64,
    /// Attacker blocks needed to win an interval.
    pub threshold_blocks: u64,
    /// Length of the solo mining phase.
    pub step_one_seconds: i64,
    /// Mean number of modifier bits chosen by attacker blocks after one
    /// interval of solo mining.
    pub step_one_bits_mean: f64,
    pub step_one_lag_mean: f64,
    pub intervals: u64,
    pub intervals_won: u64,
    pub candidates: u64,
    pub candidates_won: u64,
    /// Empirical chance that one candidate modifier wins.
    pub trial_probability: f64,
    pub trial_probability_sigma: f64,
    pub analytic_trial: TailProb,
    pub analytic_interval: TailProb,
}

/// Kernel-level grinding of one modifier interval.
struct Grinder<'a> {
    params: &'a ChainParams,
    target: Target,
    stakes: u64,
    period: i64,
    threshold: u64,
    attempts: u64,
    mask: u64,
}

impl<'a> Grinder<'a> {
    fn new(spec: &AttackSpec, params: &'a ChainParams) -> Result<Self, AttackError> {
        if params.modifier_mode == ModifierMode::Static {
            return Err(AttackError::Misconfigured(
                "grinding needs a modifier that is recomputed every interval (DYNAMIC mode)".into(),
            ));
        }
        let tau = params.block_time_target as f64;
        let period = params.modifier_interval;
        let m = period as f64 / tau;
        let space = 2f64.powi(spec.modifier_bits as i32);
        let attempts = (spec.hash_budget * period as f64 / spec.n_stakes as f64)
            .min(space)
            .max(1.0);
        let cost = attempts * spec.n_stakes as f64 * period as f64;
        if cost > MAX_INTERVAL_HASHES {
            return Err(AttackError::Misconfigured(format!(
                "one interval could need {cost:.3e} kernel hashes; shrink modifier_bits or hash_budget"
            )));
        }
        // Each stake passes with probability p / (τ n) per second.
        let pi = spec.p / (tau * spec.n_stakes as f64);
        let target = Target::new(Hash256::from_f64(pi * 2f64.powi(256) / COIN as f64));
        Ok(Self {
            params,
            target,
            stakes: spec.n_stakes,
            period,
            threshold: spec.grind_threshold.blocks(spec.p, m),
            attempts: attempts as u64,
            mask: if spec.modifier_bits == 64 {
                u64::MAX
            } else {
                (1u64 << spec.modifier_bits) - 1
            },
        })
    }

    fn stake(&self, j: u64, start: Timestamp) -> Utxo {
        let born = start - self.params.min_stake_age;
        Utxo {
            id: UtxoId {
                tx_hash: Hash256::from_u64(j),
                output_index: j as u32,
            },
            amount: COIN,
            tx_time: born,
            block_time_from: born,
            tx_offset: 81 + j as u32,
            owner: 0,
        }
    }

    /// Kernel passes over the interval starting at `start` under `modifier`.
    fn count(&self, modifier: u64, start: Timestamp) -> u64 {
        let mut n = 0;
        for j in 0..self.stakes {
            let utxo = self.stake(j, start);
            for t in start..start + self.period {
                let h = kernel_hash(&Kernel::for_stake(&utxo, modifier, t));
                if check_hash(&h, &self.target, &utxo, t, self.params) == Ok(true) {
                    n += 1;
                }
            }
        }
        n
    }

    /// Tries candidates in order from `base`; returns (candidates tried, winning count).
    fn interval(&self, start: Timestamp, base: u64) -> (u64, Option<u64>) {
        for c in 0..self.attempts {
            let count = self.count(base.wrapping_add(c) & self.mask, start);
            if count >= self.threshold {
                return (c + 1, Some(count));
            }
        }
        (self.attempts, None)
    }
}

fn grinding_analytics(spec: &AttackSpec, params: &ChainParams, attempts: u64) -> (TailProb, TailProb) {
    let rp = RaceParams::grinding(
        spec.p,
        params.modifier_interval as f64,
        params.block_time_target as f64,
        spec.hash_budget,
        spec.n_stakes as f64,
    );
    let trial = grinding_trial_probability(&rp, spec.grind_threshold);
    (trial, trial.complement_power(attempts as f64))
}

/// Step two alone: `intervals` independent grinding intervals.
///
/// Every candidate is scored by hashing the kernels of all attacker stakes
/// for every second of the interval; each pass counts as one block.
pub fn grind_intervals(
    spec: &AttackSpec,
    params: &ChainParams,
    seed: u64,
    intervals: u64,
) -> Result<GrindingStats, AttackError> {
    params.validate()?;
    spec.validate()?;
    let g = Grinder::new(spec, params)?;
    let (candidates, wins) = (0..intervals)
        .into_par_iter()
        .map(|i| {
            let mut rng = SimRng::new(seed, derive_stream(STREAM_GRIND, i));
            let start = (i as i64 + 1) * g.period * 4;
            let (tried, won) = g.interval(start, rng.random());
            (tried, won.is_some() as u64)
        })
        .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    let (analytic_trial, analytic_interval) = grinding_analytics(spec, params, g.attempts);
    let p_hat = wins as f64 / candidates.max(1) as f64;
    Ok(GrindingStats {
        modifier_bits: spec.modifier_bits,
        attempts_per_interval: g.attempts,
        blocks_per_interval: params.blocks_per_modifier_interval(),
        threshold_blocks: g.threshold,
        step_one_seconds: 0,
        step_one_bits_mean: f64::NAN,
        step_one_lag_mean: f64::NAN,
        intervals,
        intervals_won: wins,
        candidates,
        candidates_won: wins,
        trial_probability: p_hat,
        trial_probability_sigma: (p_hat * (1.0 - p_hat) / candidates.max(1) as f64).sqrt(),
        analytic_trial,
        analytic_interval,
    })
}

/// Blocks at Poisson times with `rate` per second over `[from, to)`.
fn poisson_blocks(rng: &mut SimRng, from: Timestamp, to: Timestamp, rate: f64, out: &mut Vec<SourceBlock>) {
    let mut t = from as f64;
    loop {
        let e: f64 = Exp1.sample(rng);
        t += e / rate;
        if t >= to as f64 {
            return;
        }
        out.push(SourceBlock {
            id: Hash256::from_limbs(rng.random()),
            timestamp: t.floor() as Timestamp,
            hash_proof: Hash256::from_limbs(rng.random()),
        });
    }
}

/// Modifier bits whose source block is an attacker block, after the
/// attacker mined alone for the one interval before `start`.
fn step_one_bits(rng: &mut SimRng, spec: &AttackSpec, params: &ChainParams) -> Result<u32, AttackError> {
    let tau = params.block_time_target as f64;
    let period = params.modifier_interval;
    let start = 1_000 * period;
    let fork = start - period;
    let mut chain = vec![SourceBlock {
        id: Hash256::from_limbs(rng.random()),
        timestamp: start - params.selection_interval - period,
        hash_proof: Hash256::from_limbs(rng.random()),
    }];
    poisson_blocks(rng, chain[0].timestamp, fork, 1.0 / tau, &mut chain);
    let honest = chain.len();
    poisson_blocks(rng, fork, start, spec.p / tau, &mut chain);
    let attacker: std::collections::HashSet<Hash256> = chain[honest..].iter().map(|b| b.id).collect();
    let schedule = generate_modifier(&chain, start, params, rng.random())?;
    Ok(schedule.source_blocks.iter().filter(|id| attacker.contains(id)).count() as u32)
}

/// Step one measured on its own: after one interval of solo mining by an
/// attacker with share `p`, how many bits of the next modifier come from
/// attacker blocks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepOneStats {
    pub p: f64,
    pub trials: u64,
    pub bits_mean: f64,
    pub bits_max: u32,
    /// Share of trials with at least one attacker-chosen bit.
    pub any_bit: f64,
}

pub fn grinding_step_one(p: f64, params: &ChainParams, seed: u64, trials: u64) -> Result<StepOneStats, AttackError> {
    params.validate()?;
    let spec = AttackSpec::new(AttackKind::Grinding, p, trials.max(1));
    spec.validate()?;
    let bits = (0..trials)
        .into_par_iter()
        .map(|i| step_one_bits(&mut SimRng::new(seed, derive_stream(STREAM_GRIND ^ 0x2, i)), &spec, params))
        .collect::<Result<Vec<u32>, AttackError>>()?;
    let n = trials.max(1) as f64;
    Ok(StepOneStats {
        p,
        trials,
        bits_mean: bits.iter().map(|&b| b as f64).sum::<f64>() / n,
        bits_max: bits.iter().copied().max().unwrap_or(0),
        any_bit: bits.iter().filter(|&&b| b > 0).count() as f64 / n,
    })
}

/// Grinding in two steps. The attacker first mines alone for a full
/// selection interval to control the modifier, falling behind by the honest
/// surplus; then grinds interval by interval until that lag is erased. A
/// trial fails at the first interval where no candidate wins, or after the
/// give-up budget.
pub fn run_grinding(spec: &AttackSpec, params: &ChainParams, seed: u64) -> Result<AttackOutcome, AttackError> {
    expect_kind(spec, AttackKind::Grinding)?;
    spec.validate()?;
    params.validate()?;
    let g = Grinder::new(spec, params)?;
    let tau = params.block_time_target as f64;
    let period = params.modifier_interval;
    let m = period as f64 / tau;
    let q = 1.0 - spec.p;
    let solo = (params.selection_interval + period - 1) / period * period;
    let give_up = spec.give_up();
    let max_intervals = ((give_up as f64 / m).ceil() as u64).max(1);

    struct GrindTrial {
        trial: Trial,
        bits: u32,
        lag: i64,
        intervals: u64,
        won: u64,
        candidates: u64,
    }
    let results: Vec<Result<GrindTrial, AttackError>> = (0..spec.trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = SimRng::new(seed, derive_stream(STREAM_GRIND ^ 0x1, i));
            let bits = step_one_bits(&mut rng, spec, params)?;
            let mean = solo as f64 / tau;
            let a = Poisson::new(spec.p * mean).expect("positive mean").sample(&mut rng) as i64;
            let h = Poisson::new(q * mean).expect("positive mean").sample(&mut rng) as i64;
            let lag = (h - a).max(0);
            let need = (lag + 1) as f64;
            let mut gained = 0.0;
            let mut best = -lag;
            let (mut intervals, mut won, mut candidates) = (0, 0, 0);
            let mut outcome = (false, true);
            let base_time = (i as i64 + 1) * 1_000_000 * period;
            while intervals < max_intervals {
                let start = base_time + intervals as i64 * period;
                intervals += 1;
                let (tried, count) = g.interval(start, rng.random());
                candidates += tried;
                let Some(count) = count else {
                    outcome = (false, false);
                    break;
                };
                won += 1;
                gained += count as f64 - q * m;
                best = best.max((gained - lag as f64).floor() as i64);
                if gained >= need {
                    outcome = (true, false);
                    break;
                }
            }
            Ok(GrindTrial {
                trial: Trial {
                    success: outcome.0,
                    gave_up: outcome.1,
                    lead: best,
                },
                bits,
                lag,
                intervals,
                won,
                candidates,
            })
        })
        .collect();
    let mut tally = Tally {
        max_lead: i64::MIN,
        ..Tally::default()
    };
    let (mut bits, mut lag, mut intervals, mut won, mut candidates) = (0u64, 0i64, 0u64, 0u64, 0u64);
    for r in results {
        let r = r?;
        tally = tally.add(r.trial);
        bits += r.bits as u64;
        lag += r.lag;
        intervals += r.intervals;
        won += r.won;
        candidates += r.candidates;
    }
    let (analytic_trial, analytic_interval) = grinding_analytics(spec, params, g.attempts);
    let p_hat = won as f64 / candidates.max(1) as f64;
    let n = spec.trials as f64;
    let mut out = AttackOutcome::from_tally(AttackKind::Grinding, tally, spec.trials, give_up);
    out.grinding = Some(GrindingStats {
        modifier_bits: spec.modifier_bits,
        attempts_per_interval: g.attempts,
        blocks_per_interval: m,
        threshold_blocks: g.threshold,
        step_one_seconds: solo,
        step_one_bits_mean: bits as f64 / n,
        step_one_lag_mean: lag as f64 / n,
        intervals,
        intervals_won: won,
        candidates,
        candidates_won: won,
        trial_probability: p_hat,
        trial_probability_sigma: (p_hat * (1.0 - p_hat) / candidates.max(1) as f64).sqrt(),
        analytic_trial,
        analytic_interval,
    });
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreprogrammedStats {
    pub mode: ModifierMode,
    /// Recycling rounds in which stakes were resent.
    pub rounds: u32,
    /// Stakes the attacker chose to keep, summed over trials.
    pub kept_stakes: u64,
    pub burst_blocks: u64,
    /// Expected burst for the same holdings with kernels the attacker knows nothing about.
    pub baseline_blocks: f64,
    /// `p × window / τ` per trial, summed.
    pub fair_share_blocks: f64,
    pub enrichment: f64,
    /// Standard error of `enrichment` if the burst were Poisson with the baseline mean.
    pub enrichment_sigma: f64,
}

fn next_round(r: Timestamp, params: &ChainParams) -> Timestamp {
    let t = params.modifier_interval;
    let from = r + params.selection_interval;
    from.div_euclid(t) * t + if from.rem_euclid(t) == 0 { 0 } else { t }
}

/// Earliest attack-window start leaving room for `rounds` recycling rounds,
/// with every stake old enough and its static modifier fixed by then.
pub fn window_after_rounds(params: &ChainParams, rounds: u32) -> Timestamp {
    let mut r = 0;
    for _ in 0..rounds {
        r = next_round(r, params);
    }
    next_round(r, params).max(r + params.min_stake_age)
}

struct Holding {
    utxo: Utxo,
    kept: bool,
}

/// The preprogrammed attack against one synthetic chain. Returns
/// (rounds, kept, burst, baseline).
fn preprogrammed_trial(
    rng: &mut SimRng,
    spec: &AttackSpec,
    params: &ChainParams,
) -> Result<(u32, u64, u64, f64), AttackError> {
    let (ws, we) = spec.attack_window.expect("validated");
    let tau = params.block_time_target as f64;
    let genesis = -2 * params.selection_interval - params.modifier_interval;
    let mut blocks = vec![SourceBlock {
        id: Hash256::from_limbs(rng.random()),
        timestamp: genesis,
        hash_proof: Hash256::from_limbs(rng.random()),
    }];
    poisson_blocks(rng, genesis, we + params.modifier_interval, 1.0 / tau, &mut blocks);
    let chain = LinearChain(&blocks);
    let mut cache = ModifierCache::new();
    let target = Target::equilibrium(spec.n_stakes as f64 * COIN as f64 / spec.p, params);

    let fresh = |rng: &mut SimRng, j: u64, at: Timestamp| Utxo {
        id: UtxoId {
            tx_hash: Hash256::from_limbs(rng.random()),
            output_index: 0,
        },
        amount: COIN,
        tx_time: at,
        block_time_from: at,
        tx_offset: 81 + j as u32,
        owner: 0,
    };
    let mut holdings: Vec<Holding> = (0..spec.n_stakes)
        .map(|j| Holding {
            utxo: fresh(rng, j, 0),
            kept: false,
        })
        .collect();
    let passes_in_window = |utxo: &Utxo, modifier: u64| {
        (ws..we).any(|t| {
            let h = kernel_hash(&Kernel::for_stake(utxo, modifier, t));
            check_hash(&h, &target, utxo, t, params) == Ok(true)
        })
    };

    let mut rounds = 0;
    let mut r = next_round(0, params);
    while r + params.min_stake_age <= ws {
        let current = cache.modifier_at(&chain, r.div_euclid(params.modifier_interval) * params.modifier_interval, params)?;
        let mut resent = false;
        for (j, h) in holdings.iter_mut().enumerate() {
            if h.kept {
                continue;
            }
            let guess = match params.modifier_mode {
                // The modifier used in the window is already on the chain.
                ModifierMode::Static => {
                    let s = stake_interval_start(&h.utxo, ws, params);
                    if s > r {
                        continue;
                    }
                    cache.modifier_at(&chain, s, params)?
                }
                // Only the current modifier is known.
                ModifierMode::Dynamic => current,
            };
            if passes_in_window(&h.utxo, guess) {
                h.kept = true;
            } else {
                h.utxo = fresh(rng, j as u64, r);
                resent = true;
            }
        }
        if resent {
            rounds += 1;
        }
        r = next_round(r, params);
    }
    let kept = holdings.iter().filter(|h| h.kept).count() as u64;

    // The burst: one block per second, each stake at most once.
    let mut modifiers: Vec<Option<u64>> = Vec::with_capacity(holdings.len());
    for h in &holdings {
        modifiers.push(match params.modifier_mode {
            ModifierMode::Static => {
                let s = stake_interval_start(&h.utxo, ws, params);
                if s > ws {
                    None
                } else {
                    Some(cache.modifier_at(&chain, s, params)?)
                }
            }
            ModifierMode::Dynamic => None,
        });
    }
    let mut used = vec![false; holdings.len()];
    let mut burst = 0u64;
    let mut baseline_ln_miss = vec![0.0f64; holdings.len()];
    let mut dynamic = None;
    for t in ws..we {
        let interval_modifier = match params.modifier_mode {
            ModifierMode::Dynamic => {
                let s = t.div_euclid(params.modifier_interval) * params.modifier_interval;
                if dynamic.map(|(k, _)| k) != Some(s) {
                    dynamic = Some((s, cache.modifier_at(&chain, s, params)?));
                }
                dynamic.map(|(_, v)| v)
            }
            ModifierMode::Static => None,
        };
        let mut best: Option<(Hash256, usize)> = None;
        for (i, h) in holdings.iter().enumerate() {
            let age = h.utxo.age_at(t);
            if age < params.min_stake_age {
                continue;
            }
            let Some(modifier) = modifiers[i].or(interval_modifier) else {
                continue;
            };
            baseline_ln_miss[i] += (-target.pass_probability(h.utxo.amount, time_weight_fp(age, params))).ln_1p();
            if used[i] {
                continue;
            }
            let hash = kernel_hash(&Kernel::for_stake(&h.utxo, modifier, t));
            if check_hash(&hash, &target, &h.utxo, t, params) == Ok(true) && best.is_none_or(|(b, _)| hash < b) {
                best = Some((hash, i));
            }
        }
        if let Some((_, i)) = best {
            used[i] = true;
            burst += 1;
        }
    }
    let baseline = baseline_ln_miss.iter().map(|l| -l.exp_m1()).sum();
    Ok((rounds, kept, burst, baseline))
}

/// Preprogrammed long-range attack: recycle stakes until many of them are
/// known to pass inside the attack window, then mine them all there.
///
/// Each trial builds its own chain. Success means at least `n_conf + 1`
/// blocks in the window.
pub fn run_preprogrammed(spec: &AttackSpec, params: &ChainParams, seed: u64) -> Result<AttackOutcome, AttackError> {
    expect_kind(spec, AttackKind::Preprogrammed)?;
    spec.validate()?;
    params.validate()?;
    let (ws, we) = spec.attack_window.expect("validated");
    let need = spec.n_conf + 1;
    let results: Vec<_> = (0..spec.trials)
        .into_par_iter()
        .map(|i| preprogrammed_trial(&mut SimRng::new(seed, derive_stream(STREAM_PREPROGRAMMED, i)), spec, params))
        .collect();
    let mut tally = Tally {
        max_lead: i64::MIN,
        ..Tally::default()
    };
    let (mut rounds, mut kept, mut burst, mut baseline) = (0u32, 0u64, 0u64, 0.0f64);
    for r in results {
        let (rd, k, b, base) = r?;
        rounds = rounds.max(rd);
        kept += k;
        burst += b;
        baseline += base;
        tally = tally.add(Trial {
            success: b >= need,
            gave_up: false,
            lead: b as i64 - need as i64,
        });
    }
    let n = spec.trials as f64;
    let fair = spec.p * (we - ws) as f64 / params.block_time_target as f64;
    let mut out = AttackOutcome::from_tally(AttackKind::Preprogrammed, tally, spec.trials, spec.give_up());
    out.analytic = Some(poisson_sf(need, baseline / n));
    out.preprogrammed = Some(PreprogrammedStats {
        mode: params.modifier_mode,
        rounds,
        kept_stakes: kept,
        burst_blocks: burst,
        baseline_blocks: baseline,
        fair_share_blocks: fair * n,
        enrichment: burst as f64 / baseline,
        enrichment_sigma: baseline.sqrt() / baseline,
    });
    Ok(out)
}

/// Runs whichever attack `spec.kind` names.
pub fn run_attack(spec: &AttackSpec, params: &ChainParams, seed: u64) -> Result<AttackOutcome, AttackError> {
    match spec.kind {
        AttackKind::DoubleSpend => run_double_spend(spec, params, seed),
        AttackKind::HistoryRevision => run_history_revision(spec, params, seed),
        AttackKind::Grinding => run_grinding(spec, params, seed),
        AttackKind::Preprogrammed => run_preprogrammed(spec, params, seed),
    }
}
