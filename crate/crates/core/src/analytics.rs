//! Closed-form attack probabilities.
//!
//! Everything is computed in the log domain and returned as [`TailProb`].
//! The Poisson survival function is a direct tail sum; the regularized
//! incomplete gamma function is implemented separately and used as a
//! cross-check, since `P[Poisson(λ) >= k] = P(k, λ)` (lower regularized).

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::tailprob::{log_add_exp, log_sum_exp, TailProb};

/// Bitcoin network hash rate used as the large-attacker reference (H/s).
pub const BITCOIN_HASH_RATE: f64 = 391_367_666e9;
/// Assumed hash rate of a single ASIC miner (H/s).
pub const ASIC_HASH_RATE: f64 = 1e13;
/// Stakes an attacker is assumed to split into when grinding.
pub const DEFAULT_GRIND_STAKES: f64 = 1e6;
/// Size of the stake-modifier search space.
pub const MODIFIER_SPACE: f64 = 18_446_744_073_709_551_616.0;

/// Columns and rows of the published double-spend table.
pub const TABLE1_CONFIRMATIONS: [u64; 4] = [1, 10, 60, 120];
pub const TABLE1_FRACTIONS: [f64; 7] = [0.01, 0.05, 0.10, 0.20, 0.30, 0.40, 0.50];
/// Published values, rows as in [`TABLE1_FRACTIONS`].
pub const TABLE1_PUBLISHED: [[f64; 4]; 7] = [
    [0.020, 1.3e-16, 6.1e-95, 6.8e-189],
    [0.10, 1.3e-09, 5.0e-53, 4.4e-105],
    [0.21, 1.2e-06, 4.4e-35, 3.5e-69],
    [0.42, 0.0011, 1.5e-17, 3.7e-34],
    [0.63, 0.042, 3.7e-08, 2.3e-15],
    [0.83, 0.36, 0.0083, 0.00010],
    [1.0, 1.0, 1.0, 1.0],
];

const SERIES_EPS: f64 = 1e-17;

fn ln_factorial(k: u64) -> f64 {
    ln_gamma(k as f64 + 1.0)
}

fn ln_pmf(k: u64, lambda: f64) -> f64 {
    if lambda == 0.0 {
        return if k == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    -lambda + k as f64 * lambda.ln() - ln_factorial(k)
}

/// `e^{-λ} λ^k / k!`
pub fn log_poisson_pmf(k: u64, lambda: f64) -> TailProb {
    TailProb::from_ln(ln_pmf(k, lambda))
}

/// `P[X >= k]` for `X ~ Poisson(λ)`.
pub fn poisson_sf(k: u64, lambda: f64) -> TailProb {
    TailProb::from_ln(ln_poisson_sf(k, lambda))
}

/// Natural log of `P[X >= k]`.
pub fn ln_poisson_sf(k: u64, lambda: f64) -> f64 {
    if k == 0 {
        return 0.0;
    }
    if lambda <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if k as f64 > lambda {
        // Upper tail: pmf(k) * (1 + λ/(k+1) + λ²/((k+1)(k+2)) + ...)
        let mut term = 1.0f64;
        let mut sum = 1.0f64;
        let mut j = k;
        loop {
            j += 1;
            term *= lambda / j as f64;
            sum += term;
            if term < SERIES_EPS * sum {
                break;
            }
        }
        ln_pmf(k, lambda) + sum.ln()
    } else {
        // 1 - P[X <= k-1], the lower sum running downward from k-1.
        let top = k - 1;
        let mut term = 1.0f64;
        let mut sum = 1.0f64;
        let mut j = top;
        while j > 0 {
            term *= j as f64 / lambda;
            sum += term;
            if term < SERIES_EPS * sum {
                break;
            }
            j -= 1;
        }
        let ln_cdf = ln_pmf(top, lambda) + sum.ln();
        (-ln_cdf.exp()).ln_1p()
    }
}

/// `ln P(a, x)`, the lower regularized incomplete gamma function.
pub fn ln_gamma_p(a: f64, x: f64) -> f64 {
    assert!(a > 0.0 && x >= 0.0);
    if x == 0.0 {
        return f64::NEG_INFINITY;
    }
    let prefix = a * x.ln() - x - ln_gamma(a);
    if x < a + 1.0 {
        // sum_n x^n / (a (a+1) ... (a+n))
        let mut ap = a;
        let mut del = 1.0 / a;
        let mut sum = del;
        for _ in 0..100_000 {
            ap += 1.0;
            del *= x / ap;
            sum += del;
            if del.abs() < sum.abs() * 1e-17 {
                break;
            }
        }
        prefix + sum.ln()
    } else {
        (-ln_gamma_q_cf(a, x, prefix).exp()).ln_1p()
    }
}

/// `ln Q(a, x)` by the modified Lentz continued fraction (valid for `x >= a + 1`).
fn ln_gamma_q_cf(a: f64, x: f64, prefix: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..100_000 {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < TINY {
            d = TINY;
        }
        c = b + an / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    prefix + h.ln()
}

/// Parameters shared by the race and grinding formulas.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RaceParams {
    /// Attacker share of the staked coins.
    pub p: f64,
    /// Confirmations (double spend) or lag in blocks (history revision).
    pub n: u64,
    /// Honest block intensity relative to one block per τ.
    pub alpha: f64,
    pub tau: f64,
    pub t_modifier: f64,
    pub hash_rate: f64,
    pub n_stakes: f64,
}

impl RaceParams {
    pub fn new(p: f64, n: u64) -> Self {
        Self {
            p,
            n,
            alpha: 1.0,
            tau: 60.0,
            t_modifier: 200.0 * 60.0,
            hash_rate: 0.0,
            n_stakes: DEFAULT_GRIND_STAKES,
        }
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    /// Grinding setup: modifier interval and block time in seconds.
    pub fn grinding(p: f64, t_modifier: f64, tau: f64, hash_rate: f64, n_stakes: f64) -> Self {
        Self {
            t_modifier,
            tau,
            hash_rate,
            n_stakes,
            ..Self::new(p, 0)
        }
    }

    pub fn q(&self) -> f64 {
        1.0 - self.p
    }

    /// Expected attacker blocks while the honest network makes `n`.
    pub fn lambda(&self) -> f64 {
        self.n as f64 * self.p / self.q()
    }

    /// Honest share when the attacker still holds the coins it stakes with.
    pub fn owned_alpha(p: f64) -> f64 {
        1.0 - p
    }
}

/// Probability that an attacker with share `p` overtakes a merchant waiting
/// `n` confirmations.
///
/// `P = 1 - Σ_{k=0}^{n} pmf(k; λ) (1 - (p/q)^{n-k})` with `λ = n p / q`,
/// rearranged as `sf(n+1; λ) + Σ_{k=0}^{n} pmf(k; λ) (p/q)^{n-k}` so that every
/// term is positive.
pub fn double_spend_probability(p: f64, n: u64) -> TailProb {
    assert!(p > 0.0 && p < 1.0, "p must lie in (0, 1)");
    if p >= 0.5 || n == 0 {
        return TailProb::ONE;
    }
    let q = 1.0 - p;
    let lambda = n as f64 * p / q;
    let ln_r = (p / q).ln();
    let mut terms = Vec::with_capacity(n as usize + 2);
    terms.push(ln_poisson_sf(n + 1, lambda));
    for k in 0..=n {
        terms.push(ln_pmf(k, lambda) + (n - k) as f64 * ln_r);
    }
    TailProb::from_ln(log_sum_exp(&terms))
}

/// The double-spend table for the given rows and columns.
pub fn double_spend_table(ps: &[f64], ns: &[u64]) -> Vec<Vec<TailProb>> {
    ps.iter()
        .map(|&p| ns.iter().map(|&n| double_spend_probability(p, n)).collect())
        .collect()
}

/// `P[attacker branch ahead at t] = sf(ceil(α t/τ + n), p t/τ)`.
pub fn catchup_probability_at(t: f64, rp: &RaceParams) -> TailProb {
    assert!(t > 0.0);
    let k = (rp.alpha * t / rp.tau + rp.n as f64).ceil().max(0.0) as u64;
    poisson_sf(k, rp.p * t / rp.tau)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CatchupBound {
    pub value: TailProb,
    /// Series terms summed before truncation.
    pub terms: u64,
    /// Geometric bound on the truncated remainder (already included in `value`).
    pub remainder: TailProb,
    /// `p >= α`: the series diverges and `value` is one.
    pub diverged: bool,
}

/// `Σ_{i>=1} sf(ceil(α i + n), p i)`, an upper bound on ever catching up.
pub fn catchup_upper_bound(rp: &RaceParams) -> CatchupBound {
    if rp.p >= rp.alpha {
        return CatchupBound {
            value: TailProb::ONE,
            terms: 0,
            remainder: TailProb::ZERO,
            diverged: true,
        };
    }
    let term = |i: u64| {
        let k = (rp.alpha * i as f64 + rp.n as f64).ceil() as u64;
        ln_poisson_sf(k, rp.p * i as f64)
    };
    let mut ln_sum = f64::NEG_INFINITY;
    let mut prev = f64::NEG_INFINITY;
    let mut ln_ratio = 0.0;
    let mut i = 0u64;
    loop {
        i += 1;
        let t = term(i);
        ln_sum = log_add_exp(ln_sum, t);
        let falling = t < prev;
        if falling {
            ln_ratio = t - prev;
        }
        prev = t;
        if falling && t - ln_sum < (1e-30f64).ln() {
            break;
        }
        if i > 10_000_000 {
            break;
        }
    }
    // Remainder ≤ last · r / (1 - r), with r the last observed term ratio.
    let r = ln_ratio.exp().min(1.0 - 1e-12);
    let ln_rem = prev + (r / (1.0 - r)).ln();
    CatchupBound {
        value: TailProb::from_ln(log_add_exp(ln_sum, ln_rem)),
        terms: i,
        remainder: TailProb::from_ln(ln_rem),
        diverged: false,
    }
}

/// Which attacker block count wins a modifier interval.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum GrindThreshold {
    /// Strictly more than the honest expectation: `floor((1-p) T/τ) + 1`.
    #[default]
    StrictlyMore,
    /// At least the honest expectation: `ceil((1-p) T/τ)`.
    AtLeast,
}

impl GrindThreshold {
    pub fn blocks(self, p: f64, blocks_per_interval: f64) -> u64 {
        let honest = (1.0 - p) * blocks_per_interval;
        match self {
            Self::StrictlyMore => (honest + 1e-9).floor() as u64 + 1,
            Self::AtLeast => (honest - 1e-9).ceil().max(0.0) as u64,
        }
    }
}

/// Chance that one candidate modifier gives the attacker enough blocks.
pub fn grinding_trial_probability(rp: &RaceParams, reading: GrindThreshold) -> TailProb {
    let m = rp.t_modifier / rp.tau;
    poisson_sf(reading.blocks(rp.p, m), rp.p * m)
}

/// Candidate modifiers the attacker can test per interval.
pub fn grinding_attempts(rp: &RaceParams) -> f64 {
    (rp.hash_rate * rp.t_modifier / rp.n_stakes).min(MODIFIER_SPACE).max(1.0)
}

/// `1 - (1 - trial)^attempts`.
pub fn grinding_success_probability(rp: &RaceParams, reading: GrindThreshold) -> TailProb {
    grinding_trial_probability(rp, reading).complement_power(grinding_attempts(rp))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdResult {
    /// Smallest attacker share reaching the success target (or the boundary).
    pub p_star: f64,
    /// False when even `p = 0.5` misses the target.
    pub crossed: bool,
    /// Success probability was nondecreasing on the checked grid.
    pub monotone: bool,
}

/// Attacker share at which grinding success reaches `success_target`.
pub fn grinding_threshold(
    hash_rate: f64,
    t_modifier: f64,
    tau: f64,
    n_stakes: f64,
    success_target: f64,
    reading: GrindThreshold,
) -> ThresholdResult {
    assert!(success_target > 0.0 && success_target < 1.0);
    let target = TailProb::from_linear(success_target).unwrap();
    let f = |p: f64| grinding_success_probability(&RaceParams::grinding(p, t_modifier, tau, hash_rate, n_stakes), reading);
    let mut monotone = true;
    let mut last = TailProb::ZERO;
    for i in 1..=50 {
        let v = f(i as f64 * 0.01);
        if v < last {
            monotone = false;
        }
        last = v;
    }
    if f(0.5) < target {
        return ThresholdResult {
            p_star: 0.5,
            crossed: false,
            monotone,
        };
    }
    let (mut lo, mut hi) = (0.0f64, 0.5f64);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if f(mid) >= target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    ThresholdResult {
        p_star: hi,
        crossed: true,
        monotone,
    }
}

/// Table with a header row of confirmation counts and one row per attacker share.
pub fn table1_csv(ps: &[f64], ns: &[u64]) -> String {
    let mut out = String::from("p");
    for n in ns {
        out.push_str(&format!(",n{n}"));
    }
    out.push('\n');
    for (p, row) in ps.iter().zip(double_spend_table(ps, ns)) {
        out.push_str(&format!("{p}"));
        for v in row {
            out.push_str(&format!(",{}", fmt_prob(v)));
        }
        out.push('\n');
    }
    out
}

/// Probability formatted as a plain float when representable, else in log notation.
pub fn fmt_prob(v: TailProb) -> String {
    if v.is_zero() {
        "0".into()
    } else if v.log10() > -300.0 {
        format!("{:.6e}", v.to_linear())
    } else {
        v.to_string()
    }
}

/// `(t, log10 P[ahead at t])` for each time in `ts` (seconds).
pub fn catchup_curve(rp: &RaceParams, ts: &[f64]) -> Vec<(f64, f64)> {
    ts.iter().map(|&t| (t, catchup_probability_at(t, rp).log10())).collect()
}

/// `(n, log10 bound)` for each lag in `ns`.
pub fn catchup_bound_series(p: f64, alpha: f64, ns: &[u64]) -> Vec<(f64, f64)> {
    ns.iter()
        .map(|&n| {
            let b = catchup_upper_bound(&RaceParams::new(p, n).with_alpha(alpha));
            (n as f64, b.value.log10())
        })
        .collect()
}

/// Poisson mass of the attacker's block count during one modifier interval.
pub fn grinding_mass_series(p: f64, t_modifier: f64, tau: f64, ks: std::ops::Range<u64>) -> Vec<(f64, f64)> {
    let lambda = p * t_modifier / tau;
    ks.map(|k| (k as f64, log_poisson_pmf(k, lambda).to_linear())).collect()
}

/// `(T_modifier minutes, p*)` for one hash rate.
pub fn threshold_curve(hash_rate: f64, tmods_minutes: &[f64], tau: f64, n_stakes: f64, target: f64) -> Vec<(f64, f64)> {
    tmods_minutes
        .iter()
        .map(|&m| {
            let r = grinding_threshold(hash_rate, m * 60.0, tau, n_stakes, target, GrindThreshold::StrictlyMore);
            (m, r.p_star)
        })
        .collect()
}

pub fn series_csv(x_name: &str, y_name: &str, rows: &[(f64, f64)]) -> String {
    let mut out = format!("{x_name},{y_name}\n");
    for (x, y) in rows {
        out.push_str(&format!("{x},{y}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn pmf_examples() {
        assert!(rel(log_poisson_pmf(0, 1.0).to_linear(), (-1f64).exp()) < 1e-14);
        let l = log_poisson_pmf(160, 40.0).log10();
        assert!((l + 45.8).abs() < 0.15, "{l}");
        let total: f64 = (0..=200).map(|k| log_poisson_pmf(k, 10.0).to_linear()).sum();
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn sf_examples() {
        assert_eq!(poisson_sf(0, 3.0), TailProb::ONE);
        assert!(rel(poisson_sf(1, 1.0).to_linear(), 1.0 - (-1f64).exp()) < 1e-14);
        // 60-digit reference values.
        let v = poisson_sf(160, 40.0);
        assert!(rel(v.log10(), 2.559254375729602e-46f64.log10()) < 1e-10, "{v}");
        let v = poisson_sf(120, 6.0);
        assert!(rel(v.log10(), 9.312518834613061e-109f64.log10()) < 1e-10, "{v}");
    }

    #[test]
    fn sf_matches_incomplete_gamma_on_grid() {
        let lambdas = [0.1, 0.5, 1.0, 3.0, 10.0, 40.0, 99.5, 100.0, 250.0, 500.0];
        for &lambda in &lambdas {
            for k in (1..=500).step_by(7).chain([1, 2, 100, 101, 499, 500]) {
                let a = poisson_sf(k, lambda).log10();
                let b = ln_gamma_p(k as f64, lambda) / std::f64::consts::LN_10;
                assert!((a - b).abs() <= 1e-8 * a.abs().max(1.0), "k={k} λ={lambda}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn double_spend_edges() {
        assert_eq!(double_spend_probability(0.5, 60), TailProb::ONE);
        assert_eq!(double_spend_probability(0.7, 1), TailProb::ONE);
        assert_eq!(double_spend_probability(0.1, 0), TailProb::ONE);
        let a = double_spend_probability(0.3, 10);
        let b = double_spend_probability(0.3, 11);
        assert!(b < a);
    }

    #[test]
    fn table1_within_five_percent() {
        for (i, &p) in TABLE1_FRACTIONS.iter().enumerate() {
            for (j, &n) in TABLE1_CONFIRMATIONS.iter().enumerate() {
                let got = double_spend_probability(p, n).log10();
                let want = TABLE1_PUBLISHED[i][j].log10();
                let ratio = 10f64.powf(got - want);
                assert!((ratio - 1.0).abs() <= 0.05, "p={p} n={n}: ratio {ratio}");
            }
        }
    }

    #[test]
    fn catchup_at_examples() {
        let solo = RaceParams::new(0.3, 0).with_alpha(0.0);
        assert!(catchup_probability_at(6000.0, &solo).to_linear() > 0.999);
        let rp = RaceParams::new(0.1, 60);
        assert_eq!(catchup_probability_at(3600.0, &rp), poisson_sf(120, 6.0));
        // With no head start the value falls at every doubling; with a lead
        // of n blocks it first rises and falls once t/τ passes the lead.
        for (rp, t0) in [(RaceParams::new(0.1, 0), 60.0), (RaceParams::new(0.3, 0), 60.0), (rp, 3600.0)] {
            let mut prev = catchup_probability_at(t0, &rp);
            let mut t = 2.0 * t0;
            while t < 1e7 {
                let v = catchup_probability_at(t, &rp);
                assert!(v < prev, "t={t}");
                prev = v;
                t *= 2.0;
            }
        }
    }

    #[test]
    fn catchup_bound_examples() {
        let b = catchup_upper_bound(&RaceParams::new(0.75, 240));
        assert!(!b.diverged);
        assert!(b.value.log10() < -56.0 && b.value.log10() > -58.0, "{}", b.value);
        let b = catchup_upper_bound(&RaceParams::new(0.10, 60));
        assert!((b.value.log10() - 2.40e-95f64.log10()).abs() < 0.05, "{}", b.value);
        let d = catchup_upper_bound(&RaceParams::new(0.6, 10).with_alpha(0.5));
        assert!(d.diverged);
        assert_eq!(d.value, TailProb::ONE);
        let mut prev = TailProb::ONE;
        for n in 0..40 {
            let v = catchup_upper_bound(&RaceParams::new(0.3, n)).value;
            assert!(v < prev || prev == TailProb::ONE);
            prev = v;
        }
    }

    #[test]
    fn grinding_trial_examples() {
        let rp = RaceParams::grinding(0.2, 12_000.0, 60.0, 0.0, 1e6);
        assert_eq!(GrindThreshold::StrictlyMore.blocks(0.2, 200.0), 161);
        assert_eq!(GrindThreshold::AtLeast.blocks(0.2, 200.0), 160);
        let strict = grinding_trial_probability(&rp, GrindThreshold::StrictlyMore);
        let loose = grinding_trial_probability(&rp, GrindThreshold::AtLeast);
        assert!((strict.log10() - 6.35e-47f64.log10()).abs() < 0.01, "{strict}");
        assert!((loose.log10() - 2.56e-46f64.log10()).abs() < 0.01, "{loose}");
        let half = grinding_trial_probability(&RaceParams { p: 0.5, ..rp }, GrindThreshold::StrictlyMore);
        assert!((0.3..0.6).contains(&half.to_linear()));
        let mut prev = TailProb::ONE;
        for m in [50.0, 100.0, 200.0, 400.0] {
            let v = grinding_trial_probability(&RaceParams { t_modifier: m * 60.0, ..rp }, GrindThreshold::StrictlyMore);
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn grinding_success_examples() {
        let base = RaceParams::grinding(0.2, 12_000.0, 60.0, 0.0, 1e6);
        let trial = grinding_trial_probability(&base, GrindThreshold::StrictlyMore);
        assert_eq!(grinding_success_probability(&base, GrindThreshold::StrictlyMore), trial);
        let big = RaceParams { hash_rate: 1e40, ..base };
        assert_eq!(grinding_attempts(&big), MODIFIER_SPACE);
        let btc = RaceParams::grinding(0.1, 12_000.0, 60.0, BITCOIN_HASH_RATE, 1e6);
        let v = grinding_success_probability(&btc, GrindThreshold::StrictlyMore);
        assert!((v.log10() + 89.03782392795006).abs() < 1e-8, "{v}");
        let v = grinding_success_probability(&btc, GrindThreshold::AtLeast);
        assert!((v.log10() + 88.08087967213985).abs() < 1e-8, "{v}");
    }

    #[test]
    fn grinding_thresholds() {
        let p = |rate: f64, tmin: f64| {
            let r = grinding_threshold(rate, tmin * 60.0, 60.0, 1e6, 0.5, GrindThreshold::StrictlyMore);
            assert!(r.crossed && r.monotone);
            r.p_star
        };
        assert!((p(BITCOIN_HASH_RATE, 200.0) - 0.3131).abs() < 0.002);
        assert!((p(BITCOIN_HASH_RATE, 400.0) - 0.3625).abs() < 0.002);
        assert!((p(BITCOIN_HASH_RATE, 800.0) - 0.400).abs() < 0.002);
        assert!((p(100.0 * BITCOIN_HASH_RATE, 200.0) - 0.3015).abs() < 0.002);
        assert!((p(ASIC_HASH_RATE, 200.0) - 0.3417).abs() < 0.002);
    }

    #[test]
    fn csv_exports() {
        let csv = table1_csv(&TABLE1_FRACTIONS, &TABLE1_CONFIRMATIONS);
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines.len(), 8);
        assert_eq!(lines[0], "p,n1,n10,n60,n120");
        assert!(lines[7].starts_with("0.5,1.000000e0"));
        assert!(lines[1].ends_with("e-189"));
        let s = series_csv("n", "log10_bound", &catchup_bound_series(0.1, 1.0, &[10, 20]));
        assert_eq!(s.lines().count(), 3);
    }
}
