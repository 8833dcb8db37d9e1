mod analytic;
mod error;
mod job;
mod manifest;
mod schema;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};
use stakesim::attacks::AttackSpec;
use stakesim::netsim::SimConfig;
use stakesim::ChainParams;

use analytic::{AnalyticKind, AnalyticOpts};
use error::CliError;
use job::{AttackJob, Job, SimulateJob, TraceJob};
use manifest::{file_digest, sha256_hex, RunManifest, MANIFEST_FILE};

#[derive(Parser)]
#[command(name = "stakesim", version, about = "Proof-of-stake consensus simulator and attack analyzer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Preset {
    Neucoin,
    Peercoin,
}

impl Preset {
    fn name(self) -> &'static str {
        match self {
            Preset::Neucoin => "neucoin",
            Preset::Peercoin => "peercoin",
        }
    }

    fn params(self) -> ChainParams {
        ChainParams::preset(self.name()).expect("built-in preset")
    }
}

#[derive(Args, Clone, Debug)]
struct Common {
    /// JSON config document (see `stakesim schema`).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Worker threads for trial-level parallelism.
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    jobs: Option<u32>,
    /// Chain parameters used when the config has none.
    #[arg(long, value_enum)]
    preset: Option<Preset>,
}

#[derive(Subcommand)]
enum Command {
    /// Closed-form tables and curves.
    Analytic {
        #[arg(value_enum)]
        what: AnalyticKind,
        #[command(flatten)]
        common: Common,
        /// Recorded in the manifest; analytic results do not depend on it.
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        opts: AnalyticOpts,
    },
    /// Run a network simulation.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: u64,
        /// Also write the block event trace as gzipped JSON lines.
        #[arg(long)]
        trace: bool,
        /// Rerun the config at these block times and report fork rates.
        #[arg(long, value_delimiter = ',')]
        sweep_block_times: Vec<i64>,
    },
    /// Run an attack scenario.
    Attack {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: u64,
    },
    /// Simulate a chain and export its stake modifiers as CSV.
    ModifierTrace {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: u64,
        /// Node whose best chain is traced.
        #[arg(long)]
        node: Option<usize>,
    },
    /// Rerun a manifest and check every output is byte-identical.
    Replay {
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
        jobs: Option<u32>,
    },
    /// Print the JSON Schema of a config document or of the manifest.
    Schema {
        #[arg(value_enum)]
        document: schema::Document,
    },
}

struct Invocation {
    common: Common,
    config_digest: Option<String>,
    overrides: BTreeMap<String, Value>,
}

fn read_config(path: &Path) -> Result<(Value, String), CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let value = serde_json::from_slice(&bytes).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    Ok((value, sha256_hex(&bytes)))
}

fn require_object(v: Value, what: &str) -> Result<serde_json::Map<String, Value>, CliError> {
    match v {
        Value::Object(m) => Ok(m),
        _ => Err(CliError::Config(format!("the {what} config must be a JSON object"))),
    }
}

fn config_error(e: serde_json::Error) -> CliError {
    CliError::Config(e.to_string())
}

/// Reads the config and fills `params` from the preset and `seed` from the flag.
fn sim_config(common: &Common, seed: u64, overrides: &mut BTreeMap<String, Value>) -> Result<(SimConfig, Option<String>), CliError> {
    let path = common
        .config
        .as_ref()
        .ok_or_else(|| CliError::Usage("--config is required".into()))?;
    let (doc, digest) = read_config(path)?;
    let mut m = require_object(doc, "simulation")?;
    let params = m.remove("params").filter(|p| !p.is_null());
    let params = match params {
        Some(_) if common.preset.is_some() => {
            return Err(CliError::Usage("--preset conflicts with the params in the config".into()))
        }
        Some(p) => p,
        None => serde_json::to_value(common.preset.unwrap_or(Preset::Neucoin).params()).expect("params serialize"),
    };
    m.insert("params".into(), params);
    if m.get("seed").is_some_and(|s| s.as_u64() != Some(seed)) {
        overrides.insert("seed".into(), json!(seed));
    }
    m.insert("seed".into(), json!(seed));
    let cfg: SimConfig = serde_json::from_value(Value::Object(m)).map_err(config_error)?;
    Ok((cfg, Some(digest)))
}

fn resolve(command: Command) -> Result<(Job, Invocation), CliError> {
    let mut overrides = BTreeMap::new();
    let (job, common, config_digest) = match command {
        Command::Analytic {
            what,
            common,
            seed,
            opts,
        } => {
            if let Some(s) = seed {
                overrides.insert("seed".into(), json!(s));
            }
            let flags = serde_json::to_value(&opts).expect("options serialize");
            for (k, v) in flags.as_object().expect("object") {
                let unset = v.is_null() || v.as_array().is_some_and(|a| a.is_empty());
                if !unset {
                    overrides.insert(k.clone(), v.clone());
                }
            }
            let (base, digest) = match &common.config {
                Some(path) => {
                    let (doc, digest) = read_config(path)?;
                    (serde_json::from_value(doc).map_err(config_error)?, Some(digest))
                }
                None => (AnalyticOpts::default(), None),
            };
            let params = common.preset.unwrap_or(Preset::Neucoin).params();
            let job = analytic::resolve(what, opts.over(base), &params)?;
            (Job::Analytic(job), common, digest)
        }
        Command::Simulate {
            common,
            seed,
            trace,
            sweep_block_times,
        } => {
            let (config, digest) = sim_config(&common, seed, &mut overrides)?;
            if trace {
                overrides.insert("trace".into(), json!(true));
            }
            if !sweep_block_times.is_empty() {
                overrides.insert("sweep_block_times".into(), json!(sweep_block_times));
            }
            let job = SimulateJob {
                config,
                trace,
                sweep_block_times,
            };
            (Job::Simulate(job), common, digest)
        }
        Command::Attack { common, seed } => {
            let path = common
                .config
                .as_ref()
                .ok_or_else(|| CliError::Usage("--config is required".into()))?;
            let (doc, digest) = read_config(path)?;
            let mut m = require_object(doc, "attack")?;
            let params = match m.remove("params").filter(|p| !p.is_null()) {
                Some(_) if common.preset.is_some() => {
                    return Err(CliError::Usage("--preset conflicts with the params in the config".into()))
                }
                Some(p) => serde_json::from_value(p).map_err(config_error)?,
                None => common.preset.unwrap_or(Preset::Neucoin).params(),
            };
            let spec: AttackSpec = serde_json::from_value(Value::Object(m)).map_err(config_error)?;
            let job = AttackJob { spec, params, seed };
            (Job::Attack(job), common, Some(digest))
        }
        Command::ModifierTrace { common, seed, node } => {
            let (config, digest) = sim_config(&common, seed, &mut overrides)?;
            if let Some(n) = node {
                overrides.insert("node".into(), json!(n));
            }
            let job = TraceJob {
                config,
                node: node.unwrap_or(0),
            };
            (Job::ModifierTrace(job), common, digest)
        }
        Command::Replay { .. } | Command::Schema { .. } => unreachable!("handled before resolution"),
    };
    if let Some(p) = common.preset {
        overrides.insert("preset".into(), json!(p.name()));
    }
    if let Some(j) = common.jobs {
        overrides.insert("jobs".into(), json!(j));
    }
    Ok((
        job,
        Invocation {
            common,
            config_digest,
            overrides,
        },
    ))
}

fn execute(job: &Job, out: &Path, jobs: usize) -> Result<BTreeMap<String, String>, CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Internal(e.to_string()))?;
    let names = pool.install(|| job.execute(out))?;
    names
        .into_iter()
        .map(|n| Ok((n.clone(), file_digest(&out.join(&n))?)))
        .collect()
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Schema { document } => {
            println!("{}", document.schema_json());
            Ok(())
        }
        Command::Replay { manifest, out, jobs } => {
            let original = RunManifest::read(&manifest)?;
            let jobs = jobs.map_or(original.jobs, |j| j as usize);
            let outputs = execute(&original.job, &out, jobs)?;
            let replayed = RunManifest {
                out_dir: out.display().to_string(),
                jobs,
                outputs: outputs.clone(),
                ..original.clone()
            };
            replayed.write(&out)?;
            let differing: Vec<&String> = original
                .outputs
                .iter()
                .filter(|(name, digest)| outputs.get(*name) != Some(digest))
                .map(|(name, _)| name)
                .collect();
            if !differing.is_empty() || outputs.len() != original.outputs.len() {
                return Err(CliError::Internal(format!("replay differs from {}: {differing:?}", manifest.display())));
            }
            eprintln!("replayed {} outputs into {}, all identical", outputs.len(), out.display());
            Ok(())
        }
        command => {
            let (job, inv) = resolve(command)?;
            let jobs = inv.common.jobs.unwrap_or(1) as usize;
            let out = &inv.common.out;
            let outputs = execute(&job, out, jobs)?;
            let manifest = RunManifest {
                tool: env!("CARGO_BIN_NAME").into(),
                tool_version: env!("CARGO_PKG_VERSION").into(),
                command: job.command().into(),
                config_path: inv.common.config.as_ref().map(|p| p.display().to_string()),
                config_digest: inv.config_digest,
                seed: job.seed().or(inv.overrides.get("seed").and_then(Value::as_u64)),
                preset: inv.common.preset.unwrap_or(Preset::Neucoin).name().into(),
                overrides: inv.overrides,
                out_dir: out.display().to_string(),
                jobs,
                job,
                outputs,
            };
            manifest.write(out)?;
            eprintln!(
                "wrote {} outputs and {MANIFEST_FILE} to {}",
                manifest.outputs.len(),
                out.display()
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("stakesim: {e}");
            e.exit_code()
        }
    }
}
