#![allow(dead_code)]

use stakesim::netsim::{Behaviour, SimConfig};
use stakesim::{ChainParams, DuplicatePolicy, COIN};

/// Short-interval parameters for simulations: about a hundred blocks per
/// selection interval, so modifiers turn over quickly.
pub fn sim_params(tau: i64) -> ChainParams {
    ChainParams {
        block_time_target: tau,
        modifier_interval: 10 * tau,
        selection_interval: 100 * tau,
        min_stake_age: 101 * tau,
        retarget_smoothing: 20,
        ..ChainParams::neucoin()
    }
}

/// `n` equal nodes holding about 160 outputs in total, running `blocks`
/// block times past warmup.
pub fn sim_config(n: usize, tau: i64, blocks: i64, seed: u64) -> SimConfig {
    let splits = (160 / n as u32).max(16);
    let mut cfg = SimConfig::equal_nodes(n, 1000 * COIN, splits, sim_params(tau), 0, seed);
    cfg.warmup_blocks = 100;
    cfg.duration = cfg.warmup_end() + blocks * tau;
    cfg
}

pub fn dual_fork_config(policy: DuplicatePolicy, seed: u64) -> SimConfig {
    let mut cfg = sim_config(10, 60, 300, seed);
    cfg.params.duplicate_policy = policy;
    cfg.nodes[3].behaviour = Behaviour::DualFork;
    cfg
}
