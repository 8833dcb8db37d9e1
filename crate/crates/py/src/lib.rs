//! Python bindings. Structured inputs and outputs cross the boundary as JSON
//! text in the same shapes the command-line tool reads and writes.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use serde_json::Value;
use stakesim::analytics::{self, GrindThreshold, DEFAULT_GRIND_STAKES, TABLE1_CONFIRMATIONS, TABLE1_FRACTIONS};
use stakesim::attacks::{self, AttackSpec};
use stakesim::netsim::{self, SimConfig};
use stakesim::{ChainParams, TailProb};

fn value_error(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn share(p: f64) -> PyResult<f64> {
    if p > 0.0 && p < 1.0 {
        Ok(p)
    } else {
        Err(value_error(format!("attacker share {p} is outside (0, 1)")))
    }
}

fn report(v: TailProb, log10: bool) -> f64 {
    if log10 {
        v.log10()
    } else {
        v.to_linear()
    }
}

fn params_from(preset: &str, params_json: Option<&str>) -> PyResult<ChainParams> {
    let params = match params_json {
        Some(text) => serde_json::from_str(text).map_err(value_error)?,
        None => ChainParams::preset(preset).map_err(value_error)?,
    };
    ChainParams::validate(&params).map_err(value_error)?;
    Ok(params)
}

/// Chance that an attacker holding share `p` reverses a payment after `n`
/// confirmations. With `log10=True` the base-10 logarithm is returned, which
/// stays finite far below the smallest double.
#[pyfunction]
#[pyo3(signature = (p, n, log10 = false))]
fn double_spend_probability(p: f64, n: u64, log10: bool) -> PyResult<f64> {
    Ok(report(analytics::double_spend_probability(share(p)?, n), log10))
}

/// Same race, evaluated without the expected-window shortcut.
#[pyfunction]
#[pyo3(signature = (p, n, log10 = false))]
fn full_race_probability(p: f64, n: u64, log10: bool) -> PyResult<f64> {
    Ok(report(attacks::full_race_probability(share(p)?, n), log10))
}

/// The double-spend table as `[(p, [log10 P for each n])]`, together with
/// the column confirmations.
#[pyfunction]
#[pyo3(signature = (ps = None, ns = None))]
fn double_spend_table(ps: Option<Vec<f64>>, ns: Option<Vec<u64>>) -> PyResult<(Vec<u64>, Vec<(f64, Vec<f64>)>)> {
    let ps = ps.unwrap_or_else(|| TABLE1_FRACTIONS.to_vec());
    let ns = ns.unwrap_or_else(|| TABLE1_CONFIRMATIONS.to_vec());
    for &p in &ps {
        share(p)?;
    }
    let rows = analytics::double_spend_table(&ps, &ns)
        .into_iter()
        .zip(&ps)
        .map(|(row, &p)| (p, row.iter().map(TailProb::log10).collect()))
        .collect();
    Ok((ns, rows))
}

/// Upper bound on an attacker `n` blocks behind ever catching up.
#[pyfunction]
#[pyo3(signature = (p, n, owned = false, log10 = false))]
fn catchup_bound(p: f64, n: u64, owned: bool, log10: bool) -> PyResult<f64> {
    let p = share(p)?;
    if n == 0 {
        return Err(value_error("the lag starts at one block"));
    }
    let alpha = if owned { analytics::RaceParams::owned_alpha(p) } else { 1.0 };
    let rp = analytics::RaceParams::new(p, n).with_alpha(alpha);
    Ok(report(analytics::catchup_upper_bound(&rp).value, log10))
}

/// Smallest attacker share whose modifier grinding succeeds with
/// probability `target`, as `(p_star, crossed, monotone)`.
#[pyfunction]
#[pyo3(signature = (hash_rate, tmod_minutes, tau = 60.0, n_stakes = DEFAULT_GRIND_STAKES, target = 0.5, at_least = false))]
fn grinding_threshold(
    hash_rate: f64,
    tmod_minutes: f64,
    tau: f64,
    n_stakes: f64,
    target: f64,
    at_least: bool,
) -> PyResult<(f64, bool, bool)> {
    if !(hash_rate >= 0.0 && hash_rate.is_finite()) || !(tmod_minutes > 0.0) || !(tau > 0.0) || !(n_stakes >= 1.0) {
        return Err(value_error("hash_rate, tmod_minutes, tau and n_stakes must be positive"));
    }
    if !(target > 0.0 && target < 1.0) {
        return Err(value_error(format!("target {target} is outside (0, 1)")));
    }
    let reading = if at_least { GrindThreshold::AtLeast } else { GrindThreshold::StrictlyMore };
    let r = analytics::grinding_threshold(hash_rate, tmod_minutes * 60.0, tau, n_stakes, target, reading);
    Ok((r.p_star, r.crossed, r.monotone))
}

/// Chain parameters of a named preset as JSON.
#[pyfunction]
fn preset_params(name: &str) -> PyResult<String> {
    let params = ChainParams::preset(name).map_err(value_error)?;
    Ok(serde_json::to_string(&params).expect("params serialize"))
}

/// Runs an attack spec (JSON) and returns the outcome as JSON. Chain
/// parameters come from `params_json` when given, else from the preset.
#[pyfunction]
#[pyo3(signature = (spec_json, seed, preset = "neucoin", params_json = None))]
fn run_attack(py: Python<'_>, spec_json: &str, seed: u64, preset: &str, params_json: Option<&str>) -> PyResult<String> {
    let spec: AttackSpec = serde_json::from_str(spec_json).map_err(value_error)?;
    let params = params_from(preset, params_json)?;
    let outcome = py
        .detach(|| attacks::run_attack(&spec, &params, seed))
        .map_err(value_error)?;
    Ok(serde_json::to_string(&outcome).expect("outcome serializes"))
}

/// Runs a network simulation config (JSON) and returns the result as JSON.
/// A missing `params` key is filled from the preset and `seed` always wins
/// over any seed in the config.
#[pyfunction]
#[pyo3(signature = (config_json, seed, preset = "neucoin"))]
fn simulate(py: Python<'_>, config_json: &str, seed: u64, preset: &str) -> PyResult<String> {
    let mut doc: Value = serde_json::from_str(config_json).map_err(value_error)?;
    let obj = doc
        .as_object_mut()
        .ok_or_else(|| value_error("the simulation config must be a JSON object"))?;
    if obj.get("params").is_none_or(Value::is_null) {
        let params = params_from(preset, None)?;
        obj.insert("params".into(), serde_json::to_value(params).expect("params serialize"));
    }
    obj.insert("seed".into(), Value::from(seed));
    let cfg: SimConfig = serde_json::from_value(doc).map_err(value_error)?;
    let result = py.detach(|| netsim::run_sim(cfg)).map_err(value_error)?;
    Ok(serde_json::to_string(&result).expect("result serializes"))
}

#[pymodule]
fn stakesim_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_function(wrap_pyfunction!(double_spend_probability, m)?)?;
    m.add_function(wrap_pyfunction!(full_race_probability, m)?)?;
    m.add_function(wrap_pyfunction!(double_spend_table, m)?)?;
    m.add_function(wrap_pyfunction!(catchup_bound, m)?)?;
    m.add_function(wrap_pyfunction!(grinding_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(preset_params, m)?)?;
    m.add_function(wrap_pyfunction!(run_attack, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    Ok(())
}
