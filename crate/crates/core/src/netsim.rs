//! Discrete-event network simulation.
//!
//! Every node keeps its own [`ChainState`]. Time advances in whole seconds:
//! at second `t` each node first processes every block delivery due at or
//! before `t`, then runs one mining tick. Blocks are flooded to all peers
//! with independently sampled per-link delays, and every node relays the
//! blocks it accepts. A zero-latency referee sees each block the moment it
//! is made; fork statistics are read from the referee's tree.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashMap};
use std::io::Write;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, LogNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hash::{sha256, Hash256};
use crate::kernel::{Target, Utxo, UtxoId, WEIGHT_ONE};
use crate::ledger::{Block, ChainState, GenesisSpec, Received, COINSTAKE_TX_OFFSET};
use crate::params::{Amount, ChainParams, NodeId, ParamsError, Timestamp};
use crate::rng::{derive_stream, SimRng};

/// Median one-way delay (seconds) of the default lognormal link model.
pub const DEFAULT_LATENCY_MEDIAN: f64 = 18.0;
pub const DEFAULT_LATENCY_SIGMA: f64 = 0.8;
/// Blocks excluded from statistics after the first selection interval.
pub const DEFAULT_WARMUP_BLOCKS: u64 = 1000;

const MICROS: i64 = 1_000_000;

/// Per-link one-way delay distribution, in seconds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LatencyModel {
    Fixed { seconds: f64 },
    Uniform { min: f64, max: f64 },
    Lognormal { median: f64, sigma: f64 },
}

impl Default for LatencyModel {
    fn default() -> Self {
        LatencyModel::Lognormal {
            median: DEFAULT_LATENCY_MEDIAN,
            sigma: DEFAULT_LATENCY_SIGMA,
        }
    }
}

impl LatencyModel {
    pub const ZERO: Self = LatencyModel::Fixed { seconds: 0.0 };

    fn validate(&self) -> Result<(), SimError> {
        let ok = match *self {
            LatencyModel::Fixed { seconds } => seconds >= 0.0,
            LatencyModel::Uniform { min, max } => min >= 0.0 && max >= min,
            LatencyModel::Lognormal { median, sigma } => median > 0.0 && sigma >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(SimError::Invalid(format!("bad latency model {self:?}")))
        }
    }

    /// One delay draw in seconds.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            LatencyModel::Fixed { seconds } => seconds,
            LatencyModel::Uniform { min, max } => {
                if max > min {
                    rng.random_range(min..max)
                } else {
                    min
                }
            }
            LatencyModel::Lognormal { median, sigma } => LogNormal::new(median.ln(), sigma)
                .expect("validated parameters")
                .sample(rng),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(rename_all = "snake_case")]
pub enum Behaviour {
    #[default]
    Honest,
    /// Signs each stake hit twice: once on the tip and once on the tip's
    /// parent, sending each block to a different half of the network.
    DualFork,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    /// Total coins held at genesis, in base units.
    pub stake: Amount,
    /// Number of equal outputs the stake is split into.
    pub splits: u32,
    #[serde(default)]
    pub behaviour: Behaviour,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub nodes: Vec<NodeSpec>,
    #[serde(default)]
    pub latency: LatencyModel,
    /// Simulated seconds.
    pub duration: i64,
    pub params: ChainParams,
    pub seed: u64,
    /// Blocks ignored by the statistics on top of the first selection interval.
    #[serde(default = "default_warmup")]
    pub warmup_blocks: u64,
    /// Relay accepted blocks to peers (in addition to the origin's flood).
    #[serde(default = "default_true")]
    pub relay: bool,
}

fn default_warmup() -> u64 {
    DEFAULT_WARMUP_BLOCKS
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Params(#[from] ParamsError),
    #[error("invalid simulation config: {0}")]
    Invalid(String),
    #[error("invalid simulation config document: {0}")]
    Json(#[from] serde_json::Error),
    #[error("trace write failed: {0}")]
    Io(#[from] std::io::Error),
}

impl SimConfig {
    /// `n` honest nodes with equal stake, each split into `splits` outputs.
    pub fn equal_nodes(n: usize, stake: Amount, splits: u32, params: ChainParams, duration: i64, seed: u64) -> Self {
        Self {
            nodes: vec![
                NodeSpec {
                    stake,
                    splits,
                    behaviour: Behaviour::Honest,
                };
                n
            ],
            latency: LatencyModel::default(),
            duration,
            params,
            seed,
            warmup_blocks: DEFAULT_WARMUP_BLOCKS,
            relay: true,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, SimError> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// First timestamp counted by the statistics.
    pub fn warmup_end(&self) -> Timestamp {
        self.params.selection_interval + self.warmup_blocks as i64 * self.params.block_time_target
    }

    pub fn validate(&self) -> Result<(), SimError> {
        self.params.validate()?;
        self.latency.validate()?;
        if self.nodes.is_empty() {
            return Err(SimError::Invalid("at least one node is required".into()));
        }
        for (i, n) in self.nodes.iter().enumerate() {
            if n.stake == 0 || n.splits == 0 || (n.stake as u128) < n.splits as u128 {
                return Err(SimError::Invalid(format!(
                    "node {i}: stake must be positive and at least one unit per split"
                )));
            }
        }
        let outputs: u64 = self.nodes.iter().map(|n| n.splits as u64).sum();
        let age_blocks = self.params.min_stake_age / self.params.block_time_target;
        if (outputs as i64) <= age_blocks {
            return Err(SimError::Invalid(format!(
                "{outputs} genesis outputs cannot sustain one block per target spacing \
                 while each staked output waits {age_blocks} block times"
            )));
        }
        if self.duration < self.warmup_end() {
            return Err(SimError::Invalid(format!(
                "duration {}s is shorter than selection interval plus warmup ({}s)",
                self.duration,
                self.warmup_end()
            )));
        }
        Ok(())
    }

    /// Label-free identity of each node: derived from the seed, the node's
    /// spec and how many identical specs precede it. Nothing in a run depends
    /// on node indices except through these keys, so relabelling nodes only
    /// relabels the results.
    pub fn node_keys(&self) -> Vec<u64> {
        let mut seen: Vec<&NodeSpec> = vec![];
        self.nodes
            .iter()
            .map(|n| {
                let occurrence = seen.iter().filter(|m| **m == n).count() as u64;
                seen.push(n);
                let spec = serde_json::to_vec(n).expect("node spec serializes");
                sha256(&[b"node", &self.seed.to_le_bytes(), &spec, &occurrence.to_le_bytes()]).low_u64()
            })
            .collect()
    }

    /// Node indices in key order.
    pub fn node_order(&self) -> Vec<usize> {
        let keys = self.node_keys();
        let mut order: Vec<usize> = (0..self.nodes.len()).collect();
        order.sort_by_key(|&i| keys[i]);
        order
    }

    /// Genesis outputs: each node's stake split into near-equal outputs, all
    /// old enough to stake at time zero. Offsets are distinct so no two
    /// outputs share a kernel.
    pub fn genesis(&self) -> GenesisSpec {
        let born = -self.params.min_stake_age;
        let keys = self.node_keys();
        let mut utxos = vec![];
        let mut offset = COINSTAKE_TX_OFFSET;
        for i in self.node_order() {
            let n = &self.nodes[i];
            let base = n.stake / n.splits as u64;
            let extra = n.stake % n.splits as u64;
            for j in 0..n.splits {
                utxos.push(Utxo {
                    id: UtxoId {
                        tx_hash: sha256(&[b"genesis", &keys[i].to_le_bytes()]),
                        output_index: j,
                    },
                    amount: base + u64::from((j as u64) < extra),
                    tx_time: born,
                    block_time_from: born,
                    tx_offset: offset,
                    owner: i as NodeId,
                });
                offset += 1;
            }
        }
        GenesisSpec { timestamp: 0, utxos }
    }

    /// Target at which the genesis stake produces one block per target spacing.
    pub fn initial_target(&self) -> Target {
        let weight = crate::kernel::time_weight_fp(self.params.min_stake_age, &self.params) as f64 / WEIGHT_ONE as f64;
        let total: f64 = self.nodes.iter().map(|n| n.stake as f64).sum();
        Target::equilibrium(total * weight, &self.params)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub seed: u64,
    pub block_time_target: i64,
    pub warmup_end: Timestamp,
    /// Blocks made by each node after warmup.
    pub blocks_per_node: Vec<u64>,
    /// Of those, blocks on the final main chain.
    pub main_chain_per_node: Vec<u64>,
    pub main_chain_blocks: u64,
    pub orphans: u64,
    /// `orphans / (main_chain_blocks + orphans)`.
    pub fork_rate: f64,
    /// Mean main-chain spacing after warmup (seconds).
    pub mean_block_interval: f64,
    pub height: u64,
    /// Reorganization depth histogram over all nodes.
    pub reorg_depths: BTreeMap<u32, u64>,
    /// Coinstake rewards on the main chain, by miner.
    pub rewards_per_node: Vec<u64>,
    /// Per node: blocks by dual-fork miners on that node's best chain at the end.
    pub dishonest_on_best_chain: Vec<u64>,
    /// Per node: miners it has banned.
    pub banned: Vec<Vec<NodeId>>,
    /// Per node: second-received duplicates dropped (detection-only policy).
    pub duplicates_dropped: Vec<u64>,
    pub messages: u64,
    pub trace_events: u64,
}

#[derive(Serialize)]
struct TraceLine<'a> {
    t: f64,
    event: &'a str,
    node: usize,
    block: Hash256,
    height: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    outcome: Option<&'a Received>,
}

struct Delivery {
    to: usize,
    from: usize,
    block: Arc<Block>,
}

/// Delivery order: time, then mining sequence of the block, then sender and
/// receiver keys. The trailing id only keeps entries unique.
type QueueKey = (i64, u64, u64, u64, u64);

/// A configured run; keeps the node states around for inspection.
pub struct Simulation {
    cfg: SimConfig,
    nodes: Vec<ChainState>,
    referee: ChainState,
    keys: Vec<u64>,
    order: Vec<usize>,
    block_seq: HashMap<Hash256, u64>,
    queue: BinaryHeap<Reverse<QueueKey>>,
    pending: HashMap<u64, Delivery>,
    next_event: u64,
    messages: u64,
    trace_events: u64,
    now: Timestamp,
    /// Per node: the tip its output list was read at, and that list.
    stakes: Vec<(usize, Vec<Utxo>)>,
}

impl Simulation {
    pub fn new(cfg: SimConfig) -> Result<Self, SimError> {
        cfg.validate()?;
        let genesis = cfg.genesis();
        let target = cfg.initial_target();
        let proto = ChainState::new(&genesis, cfg.params.clone(), target);
        Ok(Self {
            nodes: vec![proto.clone(); cfg.nodes.len()],
            referee: proto,
            keys: cfg.node_keys(),
            order: cfg.node_order(),
            block_seq: HashMap::new(),
            queue: BinaryHeap::new(),
            pending: HashMap::new(),
            next_event: 0,
            messages: 0,
            trace_events: 0,
            now: 0,
            stakes: vec![(usize::MAX, vec![]); cfg.nodes.len()],
            cfg,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn node(&self, i: usize) -> &ChainState {
        &self.nodes[i]
    }

    pub fn nodes(&self) -> &[ChainState] {
        &self.nodes
    }

    /// Global view with every block delivered instantly.
    pub fn referee(&self) -> &ChainState {
        &self.referee
    }

    fn send(&mut self, from: usize, to: usize, block: Arc<Block>, sent_at: f64) {
        let seq = self.block_seq[&block.hash()];
        let (fk, tk) = (self.keys[from], self.keys[to]);
        // One stream per (block, link): draws do not depend on send order.
        let mut rng = SimRng::new(self.cfg.seed, derive_stream(derive_stream(seq, fk), tk));
        let delay = self.cfg.latency.sample(&mut rng);
        let at = ((sent_at + delay) * MICROS as f64).ceil() as i64;
        let id = self.next_event;
        self.next_event += 1;
        self.queue.push(Reverse((at, seq, fk, tk, id)));
        self.pending.insert(id, Delivery { to, from, block });
        self.messages += 1;
    }

    fn register(&mut self, b: &Block) {
        let next = self.block_seq.len() as u64;
        self.block_seq.entry(b.hash()).or_insert(next);
    }

    fn flood(&mut self, from: usize, block: &Arc<Block>, sent_at: f64, to: impl Iterator<Item = usize>) {
        for peer in to {
            if peer != from {
                self.send(from, peer, block.clone(), sent_at);
            }
        }
    }

    fn trace(
        &mut self,
        out: &mut Option<&mut dyn Write>,
        t: f64,
        event: &str,
        node: usize,
        b: &Block,
        outcome: Option<&Received>,
    ) -> Result<(), SimError> {
        if let Some(w) = out.as_mut() {
            let line = TraceLine {
                t,
                event,
                node,
                block: b.hash(),
                height: b.height,
                outcome,
            };
            serde_json::to_writer(&mut *w, &line)?;
            w.write_all(b"\n")?;
            self.trace_events += 1;
        }
        Ok(())
    }

    fn deliver_due(&mut self, t: Timestamp, out: &mut Option<&mut dyn Write>) -> Result<(), SimError> {
        while let Some(&Reverse((at, _, _, _, id))) = self.queue.peek() {
            if at > t * MICROS {
                break;
            }
            self.queue.pop();
            let d = self.pending.remove(&id).expect("queued delivery");
            let at_s = at as f64 / MICROS as f64;
            let results = self.nodes[d.to].on_block_received((*d.block).clone(), t);
            for (hash, r) in &results {
                let block = if *hash == d.block.hash() {
                    d.block.clone()
                } else {
                    let i = self.nodes[d.to].lookup(hash).expect("connected orphan is stored");
                    Arc::new(self.nodes[d.to].entry(i).block.clone())
                };
                self.trace(out, at_s, "recv", d.to, &block, Some(r))?;
                if self.cfg.relay && r.relay() {
                    let n = self.nodes.len();
                    self.flood(d.to, &block, at_s, (0..n).filter(|&p| p != d.from));
                }
            }
        }
        Ok(())
    }

    fn mine(&mut self, i: usize, t: Timestamp, out: &mut Option<&mut dyn Write>) -> Result<(), SimError> {
        let mut hashes = 0;
        let tip = self.nodes[i].tip_index();
        if self.stakes[i].0 != tip {
            self.stakes[i] = (tip, self.nodes[i].owner_utxos(i as NodeId).copied().collect());
        }
        let hits = self.nodes[i].mine_utxos(tip, &self.stakes[i].1, t, &mut hashes);
        let Some(hit) = hits.into_iter().min_by_key(|h| h.hash_proof) else {
            return Ok(());
        };
        let x = self.nodes[i].make_block(tip, &hit, vec![], 0);
        let dual = match (self.cfg.nodes[i].behaviour, self.nodes[i].entry(tip).parent) {
            (Behaviour::DualFork, Some(parent)) => {
                let y = self.nodes[i].make_block(parent, &hit, vec![], 0);
                self.nodes[i].validate_block(&y).ok().map(|_| y)
            }
            _ => None,
        };
        let r = self.nodes[i].on_block_received(x.clone(), t);
        if !matches!(r[0].1, Received::Accepted { .. }) {
            return Ok(());
        }
        let x = Arc::new(x);
        self.register(&x);
        self.trace(out, t as f64, "mined", i, &x, None)?;
        self.referee.on_block_received((*x).clone(), t);
        let n = self.nodes.len();
        match dual {
            None => self.flood(i, &x, t as f64, 0..n),
            Some(y) => {
                let y = Arc::new(y);
                self.register(&y);
                self.trace(out, t as f64, "mined", i, &y, None)?;
                self.referee.on_block_received((*y).clone(), t);
                let others: Vec<usize> = self.order.iter().copied().filter(|&p| p != i).collect();
                for (k, &p) in others.iter().enumerate() {
                    let b = if k % 2 == 0 { &x } else { &y };
                    self.send(i, p, b.clone(), t as f64);
                }
            }
        }
        Ok(())
    }

    /// Run to `duration`, optionally writing a JSON-lines event trace.
    pub fn run(&mut self, mut trace: Option<&mut dyn Write>) -> Result<SimResult, SimError> {
        while self.now < self.cfg.duration {
            self.now += 1;
            let t = self.now;
            self.deliver_due(t, &mut trace)?;
            for k in 0..self.order.len() {
                self.mine(self.order[k], t, &mut trace)?;
            }
        }
        // Let in-flight blocks land so node views settle.
        let drain_until = self.queue.iter().map(|Reverse(k)| k.0).max().unwrap_or(0);
        let end = (drain_until + MICROS - 1) / MICROS;
        self.deliver_due(end.max(self.now), &mut trace)?;
        Ok(self.result())
    }

    fn result(&self) -> SimResult {
        let n = self.nodes.len();
        let warmup_end = self.cfg.warmup_end();
        let r = &self.referee;
        let mut blocks_per_node = vec![0u64; n];
        for e in r.entries().iter().skip(1) {
            if e.block.timestamp >= warmup_end {
                blocks_per_node[e.block.miner as usize] += 1;
            }
        }
        let mut main_chain_per_node = vec![0u64; n];
        let mut rewards_per_node = vec![0u64; n];
        let mut first_ts = None;
        let mut last_ts = 0;
        for e in r.best_chain().skip(1) {
            rewards_per_node[e.block.miner as usize] += e.block.reward;
            if e.block.timestamp >= warmup_end {
                main_chain_per_node[e.block.miner as usize] += 1;
                first_ts.get_or_insert(e.block.timestamp);
                last_ts = e.block.timestamp;
            }
        }
        let main: u64 = main_chain_per_node.iter().sum();
        let total: u64 = blocks_per_node.iter().sum();
        let orphans = total - main;
        let mean_block_interval = match first_ts {
            Some(f) if main > 1 => (last_ts - f) as f64 / (main - 1) as f64,
            _ => f64::NAN,
        };
        let mut reorg_depths = BTreeMap::new();
        for s in &self.nodes {
            for &d in s.reorg_depths() {
                *reorg_depths.entry(d).or_insert(0) += 1;
            }
        }
        let dishonest: Vec<NodeId> = (0..n)
            .filter(|&i| self.cfg.nodes[i].behaviour != Behaviour::Honest)
            .map(|i| i as NodeId)
            .collect();
        SimResult {
            seed: self.cfg.seed,
            block_time_target: self.cfg.params.block_time_target,
            warmup_end,
            blocks_per_node,
            main_chain_per_node,
            main_chain_blocks: main,
            orphans,
            fork_rate: if total == 0 { 0.0 } else { orphans as f64 / total as f64 },
            mean_block_interval,
            height: r.height(),
            reorg_depths,
            rewards_per_node,
            dishonest_on_best_chain: self
                .nodes
                .iter()
                .map(|s| s.best_chain().filter(|e| dishonest.contains(&e.block.miner)).count() as u64)
                .collect(),
            banned: self.nodes.iter().map(|s| s.banned_miners().iter().copied().collect()).collect(),
            duplicates_dropped: self.nodes.iter().map(|s| s.dropped_duplicates().len() as u64).collect(),
            messages: self.messages,
            trace_events: self.trace_events,
        }
    }
}

pub fn run_sim(cfg: SimConfig) -> Result<SimResult, SimError> {
    Simulation::new(cfg)?.run(None)
}

/// Config for block spacing `tau`: every time parameter of `base` (duration,
/// stake age, modifier and selection intervals) is rescaled by
/// `tau / base_tau`, so each point runs over the same number of blocks.
pub fn scaled_config(base: &SimConfig, tau: i64) -> SimConfig {
    let b = base.params.block_time_target;
    let scale = |x: i64| ((x as i128 * tau as i128) / b as i128) as i64;
    let mut cfg = base.clone();
    cfg.params.block_time_target = tau;
    cfg.params.min_stake_age = scale(base.params.min_stake_age);
    cfg.params.modifier_interval = scale(base.params.modifier_interval).max(1);
    cfg.params.selection_interval = scale(base.params.selection_interval);
    cfg.duration = scale(base.duration);
    cfg
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForkRatePoint {
    pub block_time: i64,
    pub fork_rate: f64,
    pub blocks: u64,
    pub orphans: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForkRateCurve {
    pub points: Vec<ForkRatePoint>,
    /// Fork rate never rises as the block time grows.
    pub monotone: bool,
}

/// One run per block time, each on its own stream derived from `base.seed`.
pub fn fork_rate_curve(block_times: &[i64], latency: LatencyModel, base: &SimConfig) -> Result<ForkRateCurve, SimError> {
    if let Some(bad) = block_times.iter().find(|&&t| t < 1) {
        return Err(SimError::Invalid(format!("block time {bad}s is below one second")));
    }
    let mut points = block_times
        .par_iter()
        .enumerate()
        .map(|(k, &tau)| {
            let mut cfg = scaled_config(base, tau);
            cfg.latency = latency;
            cfg.seed = derive_stream(base.seed, k as u64);
            let r = run_sim(cfg)?;
            Ok(ForkRatePoint {
                block_time: tau,
                fork_rate: r.fork_rate,
                blocks: r.main_chain_blocks + r.orphans,
                orphans: r.orphans,
            })
        })
        .collect::<Result<Vec<_>, SimError>>()?;
    points.sort_by_key(|p| p.block_time);
    let monotone = points.windows(2).all(|w| w[1].fork_rate <= w[0].fork_rate);
    Ok(ForkRateCurve { points, monotone })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::COIN;

    /// Short intervals so a few thousand blocks cover many modifiers.
    pub(crate) fn quick_params(tau: i64) -> ChainParams {
        ChainParams {
            block_time_target: tau,
            modifier_interval: 10 * tau,
            selection_interval: 100 * tau,
            min_stake_age: 110 * tau,
            ..ChainParams::neucoin()
        }
    }

    /// Every staked output sits out `min_stake_age`, so the network needs well
    /// over 110 outputs to keep up one block per `tau`.
    fn quick(n: usize, tau: i64, blocks: i64, seed: u64) -> SimConfig {
        let p = quick_params(tau);
        let mut cfg = SimConfig::equal_nodes(n, 1000 * COIN, 400 / n as u32, p, 0, seed);
        cfg.warmup_blocks = 100;
        cfg.duration = cfg.warmup_end() + blocks * tau;
        cfg
    }

    #[test]
    fn config_roundtrip_and_validation() {
        let cfg = quick(3, 10, 100, 1);
        assert_eq!(SimConfig::from_json(&cfg.to_json()).unwrap(), cfg);
        let mut bad = cfg.clone();
        bad.duration = 10;
        assert!(matches!(bad.validate(), Err(SimError::Invalid(_))));
        let mut bad = cfg.clone();
        bad.nodes[0].stake = 0;
        assert!(bad.validate().is_err());
        let mut bad = cfg;
        bad.latency = LatencyModel::Uniform { min: 3.0, max: 1.0 };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn genesis_kernels_are_distinct() {
        let cfg = quick(3, 10, 100, 1);
        let g = cfg.genesis();
        assert_eq!(g.utxos.len(), 399);
        let mut offsets: Vec<u32> = g.utxos.iter().map(|u| u.tx_offset).collect();
        offsets.dedup();
        assert_eq!(offsets.len(), 399);
        let total: u64 = g.utxos.iter().map(|u| u.amount).sum();
        assert_eq!(total, 3000 * COIN);
    }

    #[test]
    fn single_node_never_forks() {
        let r = run_sim(quick(1, 10, 400, 3)).unwrap();
        assert_eq!(r.orphans, 0);
        assert_eq!(r.fork_rate, 0.0);
        assert!(r.main_chain_blocks > 300);
    }

    #[test]
    fn deterministic() {
        let a = run_sim(quick(3, 10, 300, 5)).unwrap();
        let b = run_sim(quick(3, 10, 300, 5)).unwrap();
        assert_eq!(a, b);
        let c = run_sim(quick(3, 10, 300, 6)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn result_accounting() {
        let r = run_sim(quick(4, 10, 600, 8)).unwrap();
        assert_eq!(r.blocks_per_node.iter().sum::<u64>(), r.main_chain_blocks + r.orphans);
        assert!((0.0..=1.0).contains(&r.fork_rate));
        assert!(r.orphans > 0, "18 s median latency at 10 s blocks must fork");
        // Liveness: spacing close to target once the difficulty has settled.
        assert!((r.mean_block_interval / 10.0 - 1.0).abs() < 0.1, "{}", r.mean_block_interval);
    }

    #[test]
    fn trace_is_json_lines() {
        let mut sim = Simulation::new(quick(2, 10, 50, 2)).unwrap();
        let mut buf = Vec::new();
        let r = sim.run(Some(&mut buf)).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count() as u64, r.trace_events);
        let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(first["event"], "mined");
        // Every receive happens at or after the block was mined.
        let mut mined = HashMap::new();
        for l in text.lines() {
            let v: serde_json::Value = serde_json::from_str(l).unwrap();
            let t = v["t"].as_f64().unwrap();
            let h = v["block"].as_str().unwrap().to_string();
            if v["event"] == "mined" {
                mined.entry(h).or_insert(t);
            } else {
                assert!(t >= mined[&h]);
            }
        }
    }

    #[test]
    fn relabelling_nodes_relabels_results() {
        let mut cfg = quick(3, 10, 300, 21);
        cfg.nodes[0].stake = 500 * COIN;
        cfg.nodes[1].stake = 1500 * COIN;
        let a = run_sim(cfg.clone()).unwrap();
        // New index k holds old node perm[k].
        let perm = [2usize, 0, 1];
        let mut moved = cfg.clone();
        moved.nodes = perm.iter().map(|&k| cfg.nodes[k].clone()).collect();
        let b = run_sim(moved).unwrap();
        for (k, &old) in perm.iter().enumerate() {
            assert_eq!(b.blocks_per_node[k], a.blocks_per_node[old]);
            assert_eq!(b.rewards_per_node[k], a.rewards_per_node[old]);
        }
        assert_eq!((a.orphans, a.messages, &a.reorg_depths), (b.orphans, b.messages, &b.reorg_depths));
    }

    #[test]
    fn too_few_outputs_rejected() {
        let mut cfg = quick(2, 10, 100, 1);
        cfg.nodes[0].splits = 20;
        cfg.nodes[1].splits = 20;
        assert!(matches!(cfg.validate(), Err(SimError::Invalid(_))));
    }

    #[test]
    fn latency_samples() {
        let mut rng = SimRng::new(1, 1);
        let m = LatencyModel::Lognormal { median: 9.0, sigma: 0.8 };
        let mut xs: Vec<f64> = (0..20001).map(|_| m.sample(&mut rng)).collect();
        xs.sort_by(f64::total_cmp);
        assert!((xs[10000] - 9.0).abs() < 0.3);
        let u = LatencyModel::Uniform { min: 1.0, max: 2.0 };
        assert!((0..100).all(|_| (1.0..2.0).contains(&u.sample(&mut rng))));
        assert_eq!(LatencyModel::ZERO.sample(&mut rng), 0.0);
    }
}
