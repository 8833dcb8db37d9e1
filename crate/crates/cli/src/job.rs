use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use flate2::{Compression, GzBuilder};
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use stakesim::attacks::{run_attack, AttackSpec};
use stakesim::modifier::trace_csv;
use stakesim::netsim::{fork_rate_curve, SimConfig, Simulation};
use stakesim::ChainParams;

use crate::analytic::AnalyticJob;
use crate::error::CliError;

/// One output file, held in memory until written.
pub struct Output {
    pub name: String,
    pub bytes: Vec<u8>,
}

impl Output {
    pub fn new(name: impl Into<String>, bytes: Vec<u8>) -> Self {
        Self {
            name: name.into(),
            bytes,
        }
    }

    pub fn json<T: Serialize + ?Sized>(name: &str, value: &T) -> Self {
        let mut bytes = serde_json::to_vec_pretty(value).expect("output serializes");
        bytes.push(b'\n');
        Self::new(name, bytes)
    }
}

/// Fully resolved inputs of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Job {
    Analytic(AnalyticJob),
    Simulate(SimulateJob),
    Attack(AttackJob),
    ModifierTrace(TraceJob),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct SimulateJob {
    pub config: SimConfig,
    /// Write every mined and received block as gzipped JSON lines.
    pub trace: bool,
    /// Block times for a fork-rate sweep; empty for none.
    pub sweep_block_times: Vec<i64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct AttackJob {
    pub spec: AttackSpec,
    pub params: ChainParams,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct TraceJob {
    pub config: SimConfig,
    /// Whose best chain is traced.
    pub node: usize,
}

impl Job {
    pub fn command(&self) -> &'static str {
        match self {
            Job::Analytic(_) => "analytic",
            Job::Simulate(_) => "simulate",
            Job::Attack(_) => "attack",
            Job::ModifierTrace(_) => "modifier-trace",
        }
    }

    pub fn seed(&self) -> Option<u64> {
        match self {
            Job::Analytic(_) => None,
            Job::Simulate(j) => Some(j.config.seed),
            Job::Attack(j) => Some(j.seed),
            Job::ModifierTrace(j) => Some(j.config.seed),
        }
    }

    /// Checks everything that can be checked before running.
    pub fn validate(&self) -> Result<(), CliError> {
        match self {
            Job::Analytic(j) => j.validate(),
            Job::Simulate(j) => {
                j.config.validate()?;
                if let Some(t) = j.sweep_block_times.iter().find(|&&t| t < 1) {
                    return Err(CliError::Usage(format!("sweep block time {t}s is below one second")));
                }
                Ok(())
            }
            Job::Attack(j) => {
                j.params.validate().map_err(|e| CliError::Config(e.to_string()))?;
                j.spec.validate()?;
                Ok(())
            }
            Job::ModifierTrace(j) => {
                j.config.validate()?;
                if j.node >= j.config.nodes.len() {
                    return Err(CliError::Usage(format!(
                        "node {} does not exist; the config has {} nodes",
                        j.node,
                        j.config.nodes.len()
                    )));
                }
                Ok(())
            }
        }
    }

    /// Runs into `out` and returns the names of the files written.
    pub fn execute(&self, out: &Path) -> Result<Vec<String>, CliError> {
        self.validate()?;
        fs::create_dir_all(out)?;
        let mut names = Vec::new();
        let outputs = match self {
            Job::Analytic(j) => j.execute(),
            Job::Simulate(j) => {
                let mut sim = Simulation::new(j.config.clone())?;
                let result = if j.trace {
                    let name = "trace.jsonl.gz";
                    let file = BufWriter::new(File::create(out.join(name))?);
                    // No timestamp or file name in the header, so reruns are byte-identical.
                    let mut gz = GzBuilder::new().write(file, Compression::default());
                    let r = sim.run(Some(&mut gz))?;
                    gz.finish()?.flush()?;
                    names.push(name.to_string());
                    r
                } else {
                    sim.run(None)?
                };
                for (i, node) in sim.nodes().iter().enumerate() {
                    node.audit().map_err(|e| CliError::Internal(format!("node {i} failed its audit: {e}")))?;
                }
                let mut outs = vec![Output::json("result.json", &result)];
                if !j.sweep_block_times.is_empty() {
                    let curve = fork_rate_curve(&j.sweep_block_times, j.config.latency, &j.config)?;
                    let mut csv = String::from("block_time,fork_rate,blocks,orphans\n");
                    for p in &curve.points {
                        csv.push_str(&format!("{},{},{},{}\n", p.block_time, p.fork_rate, p.blocks, p.orphans));
                    }
                    outs.push(Output::new("fork_rates.csv", csv.into_bytes()));
                    outs.push(Output::json("fork_rates.json", &curve));
                }
                outs
            }
            Job::Attack(j) => {
                let outcome = run_attack(&j.spec, &j.params, j.seed)?;
                vec![Output::json("outcome.json", &outcome)]
            }
            Job::ModifierTrace(j) => {
                let mut sim = Simulation::new(j.config.clone())?;
                sim.run(None)?;
                let node = sim.node(j.node);
                let branch = node.branch(node.tip_index());
                let csv = trace_csv(&branch, node.genesis_time(), node.tip().block.timestamp + 1, node.params())
                    .map_err(|e| CliError::Internal(e.to_string()))?;
                vec![Output::new("modifier_trace.csv", csv.into_bytes())]
            }
        };
        for o in outputs {
            fs::write(out.join(&o.name), &o.bytes)?;
            names.push(o.name);
        }
        names.sort();
        Ok(names)
    }
}
