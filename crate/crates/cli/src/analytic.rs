use clap::{Args, ValueEnum};
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use serde_json::json;
use stakesim::analytics::*;
use stakesim::ChainParams;

use crate::error::CliError;
use crate::job::Output;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "kebab-case")]
pub enum AnalyticKind {
    /// Double-spend success by attacker share (rows) and confirmations (columns).
    Table1,
    /// Chance the attacker's branch is longer at time t.
    Catchup,
    /// Upper bound on ever catching up from n blocks behind.
    CatchupBound,
    /// Poisson mass of attacker blocks in one modifier interval.
    GrindMass,
    /// Grinding success by attacker share, one curve per hash rate.
    GrindSuccess,
    /// Smallest share reaching the success target, per modifier interval.
    GrindThreshold,
}

/// Options shared by the command line and the `--config` document; flags win.
#[derive(Args, Clone, Debug, Default, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct AnalyticOpts {
    /// Attacker stake fractions, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub p: Vec<f64>,
    /// Confirmations or lags in blocks, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub n: Vec<u64>,
    /// Modifier intervals in minutes, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub tmod: Vec<f64>,
    /// Attacker hash rates in hashes per second, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub hash_rate: Vec<f64>,
    /// The attacker still owns the coins, so honest blocks arrive at 1 - p.
    #[arg(long)]
    pub owned: Option<bool>,
    /// Success probability the threshold solver aims for.
    #[arg(long)]
    pub target: Option<f64>,
    /// Number of stakes the grinding attacker controls.
    #[arg(long)]
    pub n_stakes: Option<f64>,
    /// Last time of the catch-up curve, in seconds.
    #[arg(long)]
    pub t_max: Option<f64>,
    /// Points on the catch-up curve.
    #[arg(long)]
    pub points: Option<usize>,
    /// Largest block count in the mass function.
    #[arg(long)]
    pub k_max: Option<u64>,
    /// STRICTLY_MORE or AT_LEAST.
    #[arg(long, value_parser = parse_reading)]
    pub reading: Option<GrindThreshold>,
}

fn parse_reading(s: &str) -> Result<GrindThreshold, String> {
    let name = s.to_ascii_uppercase().replace('-', "_");
    serde_json::from_value(json!(name)).map_err(|_| format!("unknown reading {s}; use STRICTLY_MORE or AT_LEAST"))
}

impl AnalyticOpts {
    /// `self` with anything unset taken from `base`.
    pub fn over(self, base: AnalyticOpts) -> AnalyticOpts {
        fn pick<T>(a: Vec<T>, b: Vec<T>) -> Vec<T> {
            if a.is_empty() {
                b
            } else {
                a
            }
        }
        AnalyticOpts {
            p: pick(self.p, base.p),
            n: pick(self.n, base.n),
            tmod: pick(self.tmod, base.tmod),
            hash_rate: pick(self.hash_rate, base.hash_rate),
            owned: self.owned.or(base.owned),
            target: self.target.or(base.target),
            n_stakes: self.n_stakes.or(base.n_stakes),
            t_max: self.t_max.or(base.t_max),
            points: self.points.or(base.points),
            k_max: self.k_max.or(base.k_max),
            reading: self.reading.or(base.reading),
        }
    }
}

/// Every input of an analytic run, defaults filled in.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct AnalyticJob {
    pub what: AnalyticKind,
    pub tau: f64,
    pub p: Vec<f64>,
    pub n: Vec<u64>,
    pub tmod_minutes: Vec<f64>,
    pub hash_rates: Vec<f64>,
    pub owned: bool,
    pub target: f64,
    pub n_stakes: f64,
    pub t_max: f64,
    pub points: usize,
    pub k_max: u64,
    pub reading: GrindThreshold,
}

pub fn resolve(what: AnalyticKind, o: AnalyticOpts, params: &ChainParams) -> Result<AnalyticJob, CliError> {
    let tau = params.block_time_target as f64;
    let tmod = params.modifier_interval as f64 / 60.0;
    let or = |v: Vec<f64>, d: &[f64]| if v.is_empty() { d.to_vec() } else { v };
    let owned = o.owned.unwrap_or(false);
    let p = match what {
        AnalyticKind::Table1 => or(o.p, &TABLE1_FRACTIONS),
        AnalyticKind::Catchup => or(o.p, &[0.1, 0.2, 0.3, 0.4]),
        AnalyticKind::CatchupBound if owned => or(o.p, &[0.1, 0.2, 0.3, 0.4, 0.45]),
        AnalyticKind::CatchupBound => or(o.p, &[0.1, 0.25, 0.5, 0.75]),
        AnalyticKind::GrindMass => or(o.p, &[0.2]),
        AnalyticKind::GrindSuccess => or(o.p, &(1..=50).map(|i| i as f64 / 100.0).collect::<Vec<_>>()),
        AnalyticKind::GrindThreshold => o.p,
    };
    let n = if !o.n.is_empty() {
        o.n
    } else {
        match what {
            AnalyticKind::Table1 => TABLE1_CONFIRMATIONS.to_vec(),
            AnalyticKind::Catchup => vec![1, 10],
            AnalyticKind::CatchupBound => (1..=60).collect(),
            _ => vec![],
        }
    };
    let hash_rates = match what {
        AnalyticKind::GrindSuccess => or(o.hash_rate, &[ASIC_HASH_RATE, 0.51 * BITCOIN_HASH_RATE, 100.0 * BITCOIN_HASH_RATE]),
        AnalyticKind::GrindThreshold => or(o.hash_rate, &[BITCOIN_HASH_RATE]),
        _ => o.hash_rate,
    };
    let job = AnalyticJob {
        what,
        tau,
        p,
        n,
        tmod_minutes: or(o.tmod, &[tmod]),
        hash_rates,
        owned,
        target: o.target.unwrap_or(0.5),
        n_stakes: o.n_stakes.unwrap_or(DEFAULT_GRIND_STAKES),
        t_max: o.t_max.unwrap_or(100.0 * tau),
        points: o.points.unwrap_or(101),
        k_max: o.k_max.unwrap_or(120),
        reading: o.reading.unwrap_or_default(),
    };
    job.validate()?;
    Ok(job)
}

impl AnalyticJob {
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Usage(m));
        if let Some(p) = self.p.iter().find(|&&p| !(p > 0.0 && p < 1.0)) {
            return bad(format!("attacker share {p} is outside (0, 1)"));
        }
        if let Some(m) = self.tmod_minutes.iter().find(|&&m| !(m > 0.0 && m.is_finite())) {
            return bad(format!("modifier interval {m} min is not positive"));
        }
        if let Some(h) = self.hash_rates.iter().find(|&&h| !(h >= 0.0 && h.is_finite())) {
            return bad(format!("hash rate {h} is negative or not finite"));
        }
        if !(self.target > 0.0 && self.target < 1.0) {
            return bad(format!("target {} is outside (0, 1)", self.target));
        }
        if !(self.n_stakes >= 1.0 && self.n_stakes.is_finite()) {
            return bad(format!("n_stakes {} must be at least one", self.n_stakes));
        }
        if !(self.t_max > 0.0 && self.t_max.is_finite()) || self.points < 2 {
            return bad("the catch-up curve needs t_max > 0 and at least two points".into());
        }
        if !(self.tau > 0.0) {
            return bad(format!("block time {} is not positive", self.tau));
        }
        if self.what == AnalyticKind::CatchupBound && self.n.contains(&0) {
            return bad("catch-up bound lags start at one block".into());
        }
        Ok(())
    }

    pub fn execute(&self) -> Vec<Output> {
        match self.what {
            AnalyticKind::Table1 => self.table1(),
            AnalyticKind::Catchup => {
                let mut t = Table::new(&["p", "n", "alpha", "t", "log10_prob"]);
                for &p in &self.p {
                    for &n in &self.n {
                        let rp = self.race(p, n);
                        let ts: Vec<f64> =
                            (1..=self.points).map(|i| self.t_max * i as f64 / self.points as f64).collect();
                        for (x, y) in catchup_curve(&rp, &ts) {
                            t.push(vec![p, n as f64, rp.alpha, x, y]);
                        }
                    }
                }
                t.outputs("catchup")
            }
            AnalyticKind::CatchupBound => {
                let mut t = Table::new(&["p", "alpha", "n", "log10_bound"]);
                for &p in &self.p {
                    let alpha = self.alpha(p);
                    for (n, y) in catchup_bound_series(p, alpha, &self.n) {
                        t.push(vec![p, alpha, n, y]);
                    }
                }
                t.outputs("catchup_bound")
            }
            AnalyticKind::GrindMass => {
                let mut t = Table::new(&["p", "tmod_minutes", "k", "mass"]);
                for &p in &self.p {
                    for &m in &self.tmod_minutes {
                        for (k, y) in grinding_mass_series(p, m * 60.0, self.tau, 0..self.k_max + 1) {
                            t.push(vec![p, m, k, y]);
                        }
                    }
                }
                t.outputs("grind_mass")
            }
            AnalyticKind::GrindSuccess => {
                let mut t = Table::new(&["hash_rate", "tmod_minutes", "p", "log10_success"]);
                for &h in &self.hash_rates {
                    for &m in &self.tmod_minutes {
                        for &p in &self.p {
                            let rp = RaceParams::grinding(p, m * 60.0, self.tau, h, self.n_stakes);
                            t.push(vec![h, m, p, grinding_success_probability(&rp, self.reading).log10()]);
                        }
                    }
                }
                t.outputs("grind_success")
            }
            AnalyticKind::GrindThreshold => {
                let mut t = Table::new(&["hash_rate", "tmod_minutes", "p_star", "crossed"]);
                for &h in &self.hash_rates {
                    for &m in &self.tmod_minutes {
                        let r = grinding_threshold(h, m * 60.0, self.tau, self.n_stakes, self.target, self.reading);
                        t.push(vec![h, m, r.p_star, r.crossed as u8 as f64]);
                    }
                }
                t.outputs("grind_threshold")
            }
        }
    }

    fn alpha(&self, p: f64) -> f64 {
        if self.owned {
            1.0 - p
        } else {
            1.0
        }
    }

    fn race(&self, p: f64, n: u64) -> RaceParams {
        let mut rp = RaceParams::new(p, n).with_alpha(self.alpha(p));
        rp.tau = self.tau;
        rp
    }

    fn table1(&self) -> Vec<Output> {
        let table = double_spend_table(&self.p, &self.n);
        let doc = json!({
            "p": self.p,
            "n": self.n,
            "log10": table.iter().map(|r| r.iter().map(|v| v.log10()).collect::<Vec<_>>()).collect::<Vec<_>>(),
            "display": table.iter().map(|r| r.iter().map(|&v| fmt_prob(v)).collect::<Vec<_>>()).collect::<Vec<_>>(),
        });
        vec![
            Output::new("table1.csv", table1_csv(&self.p, &self.n).into_bytes()),
            Output::json("table1.json", &doc),
        ]
    }
}

/// Numeric rows written as CSV and as a JSON array of objects.
struct Table {
    columns: Vec<&'static str>,
    rows: Vec<Vec<f64>>,
}

impl Table {
    fn new(columns: &[&'static str]) -> Self {
        Self {
            columns: columns.to_vec(),
            rows: Vec::new(),
        }
    }

    fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    fn outputs(&self, stem: &str) -> Vec<Output> {
        let mut csv = self.columns.join(",");
        csv.push('\n');
        for r in &self.rows {
            let cells: Vec<String> = r.iter().map(|v| v.to_string()).collect();
            csv.push_str(&cells.join(","));
            csv.push('\n');
        }
        let objects: Vec<serde_json::Value> = self
            .rows
            .iter()
            .map(|r| {
                let m: serde_json::Map<String, serde_json::Value> =
                    self.columns.iter().zip(r).map(|(c, v)| (c.to_string(), json!(v))).collect();
                serde_json::Value::Object(m)
            })
            .collect();
        vec![
            Output::new(format!("{stem}.csv"), csv.into_bytes()),
            Output::json(&format!("{stem}.json"), &objects),
        ]
    }
}
