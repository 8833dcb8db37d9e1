use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::block::{coinstake_reward, Block, Transfer};
use crate::hash::{sha256, Hash256};
use crate::kernel::{check_hash, kernel_hash, mine_tick_with, retarget, Kernel, StakeHit, Target, Utxo, UtxoId};
use crate::modifier::{stake_interval_start, BranchView, ModifierCache, ModifierError, SourceBlock};
use crate::params::{ChainParams, DuplicatePolicy, NodeId, Timestamp};

/// Miner id recorded on the genesis block.
pub const GENESIS_MINER: NodeId = NodeId::MAX;

/// Version tag written on every chain-dump line.
pub const CHAIN_DUMP_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RejectReason {
    BadProof,
    YoungStake,
    UnknownUtxo,
    BadReward,
    BannedMiner,
    DuplicateStake,
    BadHeader,
    /// The parent, or one of its ancestors, was removed.
    InvalidParent,
    BadTransfer,
    /// The staked output belongs to someone else.
    NotOwner,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EntryStatus {
    Valid,
    /// Authored by a miner that was later banned.
    Removed,
}

#[derive(Clone, Debug)]
pub struct Entry {
    pub block: Block,
    pub hash: Hash256,
    pub parent: Option<usize>,
    /// Arrival order at this node.
    pub seq: u64,
    pub status: EntryStatus,
    /// This entry and all its ancestors are valid.
    pub branch_valid: bool,
    /// Target that children of this block are checked against.
    pub next_target: Target,
    pub spent: Vec<Utxo>,
    pub created: Vec<Utxo>,
}

/// What happened to one received block.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "outcome")]
pub enum Received {
    Accepted { tip_changed: bool, reorg_depth: u32 },
    /// Already stored or already rejected.
    Known,
    /// Parent unknown; held in the orphan pool.
    Orphaned,
    Rejected { reason: RejectReason },
    /// Valid block whose stake proof was already used by `first`.
    DuplicateStake {
        first: Hash256,
        banned: Option<NodeId>,
        reorg_depth: u32,
    },
}

impl Received {
    /// Whether the node forwards the block to its peers.
    pub fn relay(&self) -> bool {
        matches!(self, Received::Accepted { .. } | Received::DuplicateStake { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenesisSpec {
    pub timestamp: Timestamp,
    pub utxos: Vec<Utxo>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AuditError {
    #[error("block {height} stakes unknown output {utxo}")]
    UnknownStake { height: u64, utxo: UtxoId },
    #[error("block {height} stakes an output aged {age}s")]
    YoungStake { height: u64, age: i64 },
    #[error("block {height} was mined by banned miner {miner}")]
    BannedMiner { height: u64, miner: NodeId },
    #[error("replayed output set differs from the tip set")]
    UtxoMismatch,
    #[error("supply {actual} != genesis {genesis} + rewards {rewards}")]
    Supply { actual: u128, genesis: u128, rewards: u128 },
}

/// One node's view of the chain: a fork tree, the output set at its tip, and
/// the duplicate-stake bookkeeping.
#[derive(Clone, Debug)]
pub struct ChainState {
    params: ChainParams,
    entries: Vec<Entry>,
    index: HashMap<Hash256, usize>,
    tip: usize,
    /// Entry index by height along the tip branch.
    active: Vec<usize>,
    utxos: BTreeMap<UtxoId, Utxo>,
    by_owner: HashMap<NodeId, BTreeMap<UtxoId, Utxo>>,
    seen_proofs: HashMap<Hash256, Hash256>,
    banned: BTreeSet<NodeId>,
    rejected: HashMap<Hash256, RejectReason>,
    orphans: HashMap<Hash256, Vec<(Block, Hash256, Timestamp)>>,
    orphan_hashes: HashSet<Hash256>,
    modifiers: ModifierCache,
    tip_modifiers: HashMap<(usize, Timestamp), Result<u64, ModifierError>>,
    reorg_depths: Vec<u32>,
    dropped_duplicates: Vec<(Hash256, Hash256)>,
    genesis_supply: u128,
}

impl ChainState {
    pub fn new(genesis: &GenesisSpec, params: ChainParams, initial_target: Target) -> Self {
        let mut proof_input = Vec::new();
        for u in &genesis.utxos {
            proof_input.extend_from_slice(u.id.tx_hash.as_le_bytes());
            proof_input.extend_from_slice(&u.amount.to_le_bytes());
        }
        let block = Block {
            height: 0,
            timestamp: genesis.timestamp,
            prev: Hash256::ZERO,
            kernel: Kernel {
                n_stake_modifier: 0,
                n_time_block_from: genesis.timestamp,
                n_tx_prev_offset: 0,
                n_tx_prev_time: genesis.timestamp,
                n_prevout_num: 0,
                n_time_tx: genesis.timestamp,
            },
            hash_proof: sha256(&[b"genesis", &proof_input]),
            miner: GENESIS_MINER,
            staked_utxo: UtxoId {
                tx_hash: Hash256::ZERO,
                output_index: 0,
            },
            reward: 0,
            spends: vec![],
            nonce: 0,
        };
        let hash = block.hash();
        let mut state = Self {
            params,
            entries: vec![Entry {
                block,
                hash,
                parent: None,
                seq: 0,
                status: EntryStatus::Valid,
                branch_valid: true,
                next_target: initial_target,
                spent: vec![],
                created: genesis.utxos.clone(),
            }],
            index: HashMap::from([(hash, 0)]),
            tip: 0,
            active: vec![0],
            utxos: BTreeMap::new(),
            by_owner: HashMap::new(),
            seen_proofs: HashMap::new(),
            banned: BTreeSet::new(),
            rejected: HashMap::new(),
            orphans: HashMap::new(),
            orphan_hashes: HashSet::new(),
            modifiers: ModifierCache::new(),
            tip_modifiers: HashMap::new(),
            reorg_depths: vec![],
            dropped_duplicates: vec![],
            genesis_supply: genesis.utxos.iter().map(|u| u.amount as u128).sum(),
        };
        for u in &genesis.utxos {
            state.add_utxo(*u);
        }
        state
    }

    pub fn params(&self) -> &ChainParams {
        &self.params
    }

    pub fn genesis(&self) -> &Entry {
        &self.entries[0]
    }

    pub fn genesis_time(&self) -> Timestamp {
        self.entries[0].block.timestamp
    }

    pub fn tip(&self) -> &Entry {
        &self.entries[self.tip]
    }

    pub fn tip_index(&self) -> usize {
        self.tip
    }

    pub fn tip_hash(&self) -> Hash256 {
        self.entries[self.tip].hash
    }

    pub fn height(&self) -> u64 {
        self.entries[self.tip].block.height
    }

    pub fn entry(&self, index: usize) -> &Entry {
        &self.entries[index]
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn lookup(&self, hash: &Hash256) -> Option<usize> {
        self.index.get(hash).copied()
    }

    pub fn contains(&self, hash: &Hash256) -> bool {
        self.index.contains_key(hash)
    }

    pub fn rejection(&self, hash: &Hash256) -> Option<RejectReason> {
        self.rejected.get(hash).copied()
    }

    pub fn banned_miners(&self) -> &BTreeSet<NodeId> {
        &self.banned
    }

    pub fn reorg_depths(&self) -> &[u32] {
        &self.reorg_depths
    }

    /// `(dropped, first)` pairs: second-received duplicates dropped under
    /// detection-only policy, with the block that used the proof first.
    pub fn dropped_duplicates(&self) -> &[(Hash256, Hash256)] {
        &self.dropped_duplicates
    }

    pub fn orphan_count(&self) -> usize {
        self.orphan_hashes.len()
    }

    pub fn modifier_cache(&self) -> &ModifierCache {
        &self.modifiers
    }

    /// Blocks of the best branch from genesis to tip.
    pub fn best_chain(&self) -> impl Iterator<Item = &Entry> + '_ {
        self.active.iter().map(move |&i| &self.entries[i])
    }

    pub fn utxos(&self) -> &BTreeMap<UtxoId, Utxo> {
        &self.utxos
    }

    /// Outputs owned by `owner` at the tip, in id order.
    pub fn owner_utxos(&self, owner: NodeId) -> impl Iterator<Item = &Utxo> + '_ {
        self.by_owner.get(&owner).into_iter().flat_map(|m| m.values())
    }

    pub fn total_supply(&self) -> u128 {
        self.utxos.values().map(|u| u.amount as u128).sum()
    }

    pub fn target_after(&self, index: usize) -> Target {
        self.entries[index].next_target
    }

    fn add_utxo(&mut self, u: Utxo) {
        self.utxos.insert(u.id, u);
        self.by_owner.entry(u.owner).or_default().insert(u.id, u);
    }

    fn remove_utxo(&mut self, id: &UtxoId) {
        if let Some(u) = self.utxos.remove(id) {
            if let Some(m) = self.by_owner.get_mut(&u.owner) {
                m.remove(id);
            }
        }
    }

    fn on_active(&self, index: usize) -> bool {
        let h = self.entries[index].block.height as usize;
        self.active.get(h) == Some(&index)
    }

    /// Entries from `head` back to (excluding) the first one on the tip branch,
    /// newest first, plus that tip-branch entry.
    fn off_branch_path(&self, head: usize) -> (Vec<usize>, usize) {
        let mut path = vec![];
        let mut cur = head;
        while !self.on_active(cur) {
            path.push(cur);
            cur = self.entries[cur].parent.expect("genesis is on every branch");
        }
        (path, cur)
    }

    /// An output as it stands after block `head`.
    pub fn utxo_at(&self, head: usize, id: &UtxoId) -> Option<Utxo> {
        if head == self.tip {
            return self.utxos.get(id).copied();
        }
        let (path, fork) = self.off_branch_path(head);
        for &i in &path {
            let e = &self.entries[i];
            if let Some(u) = e.created.iter().find(|u| u.id == *id) {
                return Some(*u);
            }
            if e.spent.iter().any(|u| u.id == *id) {
                return None;
            }
        }
        // State at the fork point: undo the tip branch above it.
        for &i in &self.active[self.entries[fork].block.height as usize + 1..] {
            let e = &self.entries[i];
            if e.created.iter().any(|u| u.id == *id) {
                return None;
            }
            if let Some(u) = e.spent.iter().find(|u| u.id == *id) {
                return Some(*u);
            }
        }
        self.utxos.get(id).copied()
    }

    pub fn branch(&self, head: usize) -> BranchRef<'_> {
        BranchRef { state: self, head }
    }

    /// Modifier a stake uses at `now` on the branch ending at `head`.
    pub fn stake_modifier(&mut self, head: usize, utxo: &Utxo, now: Timestamp) -> Result<u64, ModifierError> {
        let s = stake_interval_start(utxo, now, &self.params);
        if s > now {
            return Err(ModifierError::NotReady { interval_start: s, now });
        }
        if let Some(v) = self.tip_modifiers.get(&(head, s)) {
            return v.clone();
        }
        let mut cache = std::mem::take(&mut self.modifiers);
        let result = cache.modifier_at(&BranchRef { state: self, head }, s, &self.params);
        self.modifiers = cache;
        self.tip_modifiers.insert((head, s), result.clone());
        result
    }

    /// Outputs owned by `owner` as they stand after block `head`, in id order.
    pub fn owner_utxos_at(&self, head: usize, owner: NodeId) -> Vec<Utxo> {
        if head == self.tip {
            return self.owner_utxos(owner).copied().collect();
        }
        let mut set: BTreeMap<UtxoId, Utxo> = self.by_owner.get(&owner).cloned().unwrap_or_default();
        if head != self.tip {
            let (path, fork) = self.off_branch_path(head);
            for &i in self.active[self.entries[fork].block.height as usize + 1..].iter().rev() {
                let e = &self.entries[i];
                for u in &e.created {
                    set.remove(&u.id);
                }
                set.extend(e.spent.iter().filter(|u| u.owner == owner).map(|u| (u.id, *u)));
            }
            for &i in path.iter().rev() {
                let e = &self.entries[i];
                for u in &e.spent {
                    set.remove(&u.id);
                }
                set.extend(e.created.iter().filter(|u| u.owner == owner).map(|u| (u.id, *u)));
            }
        }
        set.into_values().collect()
    }

    /// Kernels of `owner` that pass at `now` on top of `head`. Adds the number
    /// of kernels hashed to `hashes`.
    pub fn mine_at(&mut self, head: usize, owner: NodeId, now: Timestamp, hashes: &mut u64) -> Vec<StakeHit> {
        let utxos = self.owner_utxos_at(head, owner);
        self.mine_utxos(head, &utxos, now, hashes)
    }

    /// [`Self::mine_at`] over a caller-held output list, which must be
    /// spendable after `head`.
    pub fn mine_utxos(&mut self, head: usize, utxos: &[Utxo], now: Timestamp, hashes: &mut u64) -> Vec<StakeHit> {
        if now <= self.entries[head].block.timestamp {
            return vec![];
        }
        let target = self.entries[head].next_target;
        let params = self.params.clone();
        mine_tick_with(utxos, |u| self.stake_modifier(head, u, now).ok(), &target, now, &params, hashes)
    }

    /// Block on top of `head` for a stake hit, with the reward filled in.
    pub fn make_block(&self, head: usize, hit: &StakeHit, spends: Vec<Transfer>, nonce: u64) -> Block {
        let parent = &self.entries[head];
        let now = hit.kernel.n_time_tx;
        Block {
            height: parent.block.height + 1,
            timestamp: now,
            prev: parent.hash,
            kernel: hit.kernel,
            hash_proof: hit.hash_proof,
            miner: hit.utxo.owner,
            staked_utxo: hit.utxo.id,
            reward: coinstake_reward(hit.utxo.amount, hit.utxo.age_at(now), now - self.genesis_time(), &self.params),
            spends,
            nonce,
        }
    }

    /// Check `b` against the branch ending at its parent.
    pub fn validate_block(&mut self, b: &Block) -> Result<Entry, RejectReason> {
        let parent = *self.index.get(&b.prev).ok_or(RejectReason::InvalidParent)?;
        let pe = &self.entries[parent];
        if !pe.branch_valid {
            return Err(RejectReason::InvalidParent);
        }
        if b.height != pe.block.height + 1 || b.timestamp <= pe.block.timestamp || b.kernel.n_time_tx != b.timestamp {
            return Err(RejectReason::BadHeader);
        }
        if self.banned.contains(&b.miner) {
            return Err(RejectReason::BannedMiner);
        }
        if kernel_hash(&b.kernel) != b.hash_proof {
            return Err(RejectReason::BadProof);
        }
        let parent_target = pe.next_target;
        let parent_time = pe.block.timestamp;
        let utxo = self.utxo_at(parent, &b.staked_utxo).ok_or(RejectReason::UnknownUtxo)?;
        if utxo.owner != b.miner {
            return Err(RejectReason::NotOwner);
        }
        let k = &b.kernel;
        if k.n_time_block_from != utxo.block_time_from
            || k.n_tx_prev_offset != utxo.tx_offset
            || k.n_tx_prev_time != utxo.tx_time
            || k.n_prevout_num != utxo.id.output_index
        {
            return Err(RejectReason::BadProof);
        }
        if utxo.age_at(b.timestamp) < self.params.min_stake_age {
            return Err(RejectReason::YoungStake);
        }
        let modifier = self
            .stake_modifier(parent, &utxo, b.timestamp)
            .map_err(|_| RejectReason::BadProof)?;
        if modifier != k.n_stake_modifier {
            return Err(RejectReason::BadProof);
        }
        if check_hash(&b.hash_proof, &parent_target, &utxo, b.timestamp, &self.params) != Ok(true) {
            return Err(RejectReason::BadProof);
        }
        let reward = coinstake_reward(
            utxo.amount,
            b.timestamp - utxo.tx_time,
            b.timestamp - self.genesis_time(),
            &self.params,
        );
        if reward != b.reward {
            return Err(RejectReason::BadReward);
        }
        let mut spent = vec![utxo];
        let mut created = vec![b.coinstake_output(utxo.amount)];
        for t in &b.spends {
            let (input, output) = self.check_transfer(parent, b, t, &spent, &created)?;
            spent.push(input);
            created.push(output);
        }
        Ok(Entry {
            block: b.clone(),
            hash: b.hash(),
            parent: Some(parent),
            seq: 0,
            status: EntryStatus::Valid,
            branch_valid: true,
            next_target: retarget(parent_target, b.timestamp - parent_time, &self.params),
            spent,
            created,
        })
    }

    fn check_transfer(
        &self,
        parent: usize,
        b: &Block,
        t: &Transfer,
        spent: &[Utxo],
        created: &[Utxo],
    ) -> Result<(Utxo, Utxo), RejectReason> {
        if spent.iter().any(|u| u.id == t.input) {
            return Err(RejectReason::BadTransfer);
        }
        let input = self.utxo_at(parent, &t.input).ok_or(RejectReason::BadTransfer)?;
        let out = t.output;
        let fresh = !created.iter().any(|u| u.id == out.id) && self.utxo_at(parent, &out.id).is_none();
        if !fresh || out.amount != input.amount || out.amount == 0 || out.block_time_from != b.timestamp || out.tx_time > b.timestamp {
            return Err(RejectReason::BadTransfer);
        }
        Ok((input, out))
    }

    /// Handle a block arriving from the network at time `now`.
    ///
    /// Returns the outcome for `b` followed by outcomes for any orphans it connected.
    pub fn on_block_received(&mut self, b: Block, now: Timestamp) -> Vec<(Hash256, Received)> {
        let hash = b.hash();
        if self.index.contains_key(&hash) || self.rejected.contains_key(&hash) || self.orphan_hashes.contains(&hash) {
            return vec![(hash, Received::Known)];
        }
        self.expire_orphans(now);
        if !self.index.contains_key(&b.prev) {
            self.orphan_hashes.insert(hash);
            self.orphans.entry(b.prev).or_default().push((b, hash, now));
            return vec![(hash, Received::Orphaned)];
        }
        let mut out = vec![];
        let mut queue = vec![(b, hash)];
        while let Some((b, hash)) = queue.pop() {
            let outcome = self.process(b, hash);
            if matches!(outcome, Received::Accepted { .. }) {
                if let Some(children) = self.orphans.remove(&hash) {
                    for (child, h, _) in children.into_iter().rev() {
                        self.orphan_hashes.remove(&h);
                        queue.push((child, h));
                    }
                }
            }
            out.push((hash, outcome));
        }
        out
    }

    fn expire_orphans(&mut self, now: Timestamp) {
        if self.orphan_hashes.is_empty() {
            return;
        }
        let horizon = now - 2 * self.params.selection_interval;
        let hashes = &mut self.orphan_hashes;
        self.orphans.retain(|_, list| {
            list.retain(|(_, h, at)| {
                let keep = *at >= horizon;
                if !keep {
                    hashes.remove(h);
                }
                keep
            });
            !list.is_empty()
        });
    }

    fn process(&mut self, b: Block, hash: Hash256) -> Received {
        let mut entry = match self.validate_block(&b) {
            Ok(e) => e,
            Err(reason) => {
                self.rejected.insert(hash, reason);
                return Received::Rejected { reason };
            }
        };
        if let Some(&first) = self.seen_proofs.get(&b.hash_proof) {
            self.rejected.insert(hash, RejectReason::DuplicateStake);
            return match self.params.duplicate_policy {
                DuplicatePolicy::DetectOnly => {
                    self.dropped_duplicates.push((hash, first));
                    Received::DuplicateStake {
                        first,
                        banned: None,
                        reorg_depth: 0,
                    }
                }
                DuplicatePolicy::Punitive => {
                    let reorg_depth = self.ban(b.miner);
                    Received::DuplicateStake {
                        first,
                        banned: Some(b.miner),
                        reorg_depth,
                    }
                }
            };
        }
        let index = self.entries.len();
        entry.seq = index as u64;
        self.seen_proofs.insert(b.hash_proof, hash);
        self.index.insert(hash, index);
        self.entries.push(entry);
        let tip_height = self.entries[self.tip].block.height;
        if b.height > tip_height {
            let depth = self.switch_tip(index);
            Received::Accepted {
                tip_changed: true,
                reorg_depth: depth,
            }
        } else {
            Received::Accepted {
                tip_changed: false,
                reorg_depth: 0,
            }
        }
    }

    /// Ban `miner`, drop its blocks and re-select the tip. Returns the reorg depth.
    pub fn ban(&mut self, miner: NodeId) -> u32 {
        self.banned.insert(miner);
        for i in 0..self.entries.len() {
            if self.entries[i].block.miner == miner {
                self.entries[i].status = EntryStatus::Removed;
            }
            let parent_ok = self.entries[i].parent.is_none_or(|p| self.entries[p].branch_valid);
            self.entries[i].branch_valid = parent_ok && self.entries[i].status == EntryStatus::Valid;
        }
        let best = self.best_entry();
        if best != self.tip {
            self.switch_tip(best)
        } else {
            0
        }
    }

    /// Deepest entry with a fully valid branch; ties go to the first seen.
    pub fn best_entry(&self) -> usize {
        let mut best = 0;
        for (i, e) in self.entries.iter().enumerate() {
            if e.branch_valid && e.block.height > self.entries[best].block.height {
                best = i;
            }
        }
        best
    }

    /// Move the tip to `new_tip`, undoing and applying blocks. Returns blocks undone.
    fn switch_tip(&mut self, new_tip: usize) -> u32 {
        let (path, fork) = self.off_branch_path(new_tip);
        let fork_height = self.entries[fork].block.height as usize;
        let undo: Vec<usize> = self.active[fork_height + 1..].iter().rev().copied().collect();
        for &i in &undo {
            let (created, spent) = (self.entries[i].created.clone(), self.entries[i].spent.clone());
            for u in &created {
                self.remove_utxo(&u.id);
            }
            for u in spent {
                self.add_utxo(u);
            }
        }
        self.active.truncate(fork_height + 1);
        for &i in path.iter().rev() {
            let (created, spent) = (self.entries[i].created.clone(), self.entries[i].spent.clone());
            for u in &spent {
                self.remove_utxo(&u.id);
            }
            for u in created {
                self.add_utxo(u);
            }
            self.active.push(i);
        }
        self.tip = new_tip;
        self.tip_modifiers.clear();
        let depth = undo.len() as u32;
        if depth > 0 {
            self.reorg_depths.push(depth);
        }
        depth
    }

    /// Replay the best branch from genesis and check the ledger invariants.
    pub fn audit(&self) -> Result<(), AuditError> {
        let genesis = &self.entries[0];
        let mut set: BTreeMap<UtxoId, Utxo> = genesis.created.iter().map(|u| (u.id, *u)).collect();
        let mut rewards: u128 = 0;
        for &i in &self.active[1..] {
            let e = &self.entries[i];
            let b = &e.block;
            let staked = set.get(&b.staked_utxo).ok_or(AuditError::UnknownStake {
                height: b.height,
                utxo: b.staked_utxo,
            })?;
            let age = staked.age_at(b.timestamp);
            if age < self.params.min_stake_age {
                return Err(AuditError::YoungStake { height: b.height, age });
            }
            if self.banned.contains(&b.miner) {
                return Err(AuditError::BannedMiner {
                    height: b.height,
                    miner: b.miner,
                });
            }
            for u in &e.spent {
                set.remove(&u.id);
            }
            for u in &e.created {
                set.insert(u.id, *u);
            }
            rewards += b.reward as u128;
        }
        if set != self.utxos {
            return Err(AuditError::UtxoMismatch);
        }
        let actual = self.total_supply();
        if actual != self.genesis_supply + rewards {
            return Err(AuditError::Supply {
                actual,
                genesis: self.genesis_supply,
                rewards,
            });
        }
        Ok(())
    }

    /// Every stored block as JSON lines, in arrival order.
    pub fn dump_jsonl(&self) -> String {
        let mut out = String::new();
        for (i, e) in self.entries.iter().enumerate() {
            let line = DumpLine {
                v: CHAIN_DUMP_VERSION,
                hash: e.hash,
                seq: e.seq,
                best: self.on_active(i),
                status: e.status,
                block: &e.block,
            };
            out.push_str(&serde_json::to_string(&line).expect("block serializes"));
            out.push('\n');
        }
        out
    }
}

#[derive(Serialize)]
struct DumpLine<'a> {
    v: u32,
    hash: Hash256,
    seq: u64,
    best: bool,
    status: EntryStatus,
    #[serde(flatten)]
    block: &'a Block,
}

/// One branch of a [`ChainState`], ending at `head`.
pub struct BranchRef<'a> {
    state: &'a ChainState,
    head: usize,
}

impl BranchRef<'_> {
    fn source(&self, i: usize) -> SourceBlock {
        let e = &self.state.entries[i];
        SourceBlock {
            id: e.hash,
            timestamp: e.block.timestamp,
            hash_proof: e.block.hash_proof,
        }
    }
}

impl BranchView for BranchRef<'_> {
    fn genesis_time(&self) -> Timestamp {
        self.state.genesis_time()
    }

    fn anchor_before(&self, t: Timestamp) -> Option<Hash256> {
        let s = self.state;
        let mut cur = self.head;
        while !s.on_active(cur) {
            if s.entries[cur].block.timestamp < t {
                return Some(s.entries[cur].hash);
            }
            cur = s.entries[cur].parent?;
        }
        let h = s.entries[cur].block.height as usize;
        let n = s.active[..=h].partition_point(|&i| s.entries[i].block.timestamp < t);
        n.checked_sub(1).map(|k| s.entries[s.active[k]].hash)
    }

    fn blocks_for_selection(&self, from: Timestamp, to: Timestamp, extra: usize) -> Vec<SourceBlock> {
        let s = self.state;
        let mut off = vec![];
        let mut cur = self.head;
        while !s.on_active(cur) {
            off.push(cur);
            cur = s.entries[cur].parent.expect("genesis is on every branch");
        }
        let h = s.entries[cur].block.height as usize;
        let chain = &s.active[..=h];
        let lo = chain.partition_point(|&i| s.entries[i].block.timestamp < from);
        let hi = chain.partition_point(|&i| s.entries[i].block.timestamp < to);
        let mut out: Vec<SourceBlock> = chain[lo.saturating_sub(extra)..hi].iter().map(|&i| self.source(i)).collect();
        out.extend(
            off.iter()
                .rev()
                .filter(|&&i| s.entries[i].block.timestamp < to)
                .map(|&i| self.source(i)),
        );
        // Off-branch blocks all post-date the fork point, so order is kept.
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::COIN;

    fn params(policy: DuplicatePolicy) -> ChainParams {
        let p = ChainParams {
            modifier_interval: 600,
            selection_interval: 6400,
            min_stake_age: 7200,
            duplicate_policy: policy,
            ..ChainParams::neucoin()
        };
        p.validate().unwrap();
        p
    }

    fn utxo(tag: u8, owner: NodeId, amount: u64, tx_time: Timestamp) -> Utxo {
        Utxo {
            id: UtxoId {
                tx_hash: sha256(&[b"g", &[tag]]),
                output_index: 0,
            },
            amount,
            tx_time,
            block_time_from: tx_time,
            tx_offset: 100 + tag as u32,
            owner,
        }
    }

    fn setup(policy: DuplicatePolicy) -> ChainState {
        let g = GenesisSpec {
            timestamp: 0,
            utxos: (0..40).map(|i| utxo(i, (i % 4) as NodeId, 10 * COIN, -10_000)).collect(),
        };
        let p = params(policy);
        let target = Target::equilibrium(400.0 * COIN as f64, &p);
        ChainState::new(&g, p, target)
    }

    /// First hit by anyone on top of `head` after its timestamp.
    fn next_hit(c: &mut ChainState, head: usize, owners: &[NodeId]) -> StakeHit {
        let mut t = c.entry(head).block.timestamp + 1;
        let mut hashes = 0;
        loop {
            for &o in owners {
                if let Some(h) = c.mine_at(head, o, t, &mut hashes).into_iter().next() {
                    return h;
                }
            }
            t += 1;
        }
    }

    fn extend(c: &mut ChainState, head: usize, owners: &[NodeId], nonce: u64) -> (Block, Vec<(Hash256, Received)>) {
        let hit = next_hit(c, head, owners);
        let b = c.make_block(head, &hit, vec![], nonce);
        let now = b.timestamp;
        let r = c.on_block_received(b.clone(), now);
        (b, r)
    }

    fn accepted(r: &[(Hash256, Received)]) -> bool {
        matches!(r[0].1, Received::Accepted { .. })
    }

    #[test]
    fn grows_and_audits() {
        let mut c = setup(DuplicatePolicy::Punitive);
        let supply0 = c.total_supply();
        for _ in 0..30 {
            let tip = c.tip_index();
            let (_, r) = extend(&mut c, tip, &[0, 1, 2, 3], 0);
            assert!(accepted(&r), "{r:?}");
        }
        assert_eq!(c.height(), 30);
        c.audit().unwrap();
        assert!(c.total_supply() > supply0);
        // Coinstakes are themselves stakeable once old enough, so the owner sets move.
        let n: usize = (0..4).map(|o| c.owner_utxos(o).count()).sum();
        assert_eq!(n, c.utxos().len());
    }

    #[test]
    fn rejects_are_reported_and_remembered() {
        let mut c = setup(DuplicatePolicy::Punitive);
        let hit = next_hit(&mut c, 0, &[0, 1, 2, 3]);
        let good = c.make_block(0, &hit, vec![], 0);

        let mut bad = good.clone();
        bad.reward += 1;
        let r = c.on_block_received(bad.clone(), good.timestamp);
        assert_eq!(r[0].1, Received::Rejected { reason: RejectReason::BadReward });
        assert_eq!(c.on_block_received(bad, good.timestamp)[0].1, Received::Known);

        let mut bad = good.clone();
        bad.miner = (good.miner + 1) % 4;
        assert_eq!(c.validate_block(&bad).unwrap_err(), RejectReason::NotOwner);

        let mut bad = good.clone();
        bad.hash_proof = Hash256::ZERO;
        assert_eq!(c.validate_block(&bad).unwrap_err(), RejectReason::BadProof);

        let mut bad = good.clone();
        bad.kernel.n_stake_modifier ^= 1;
        bad.hash_proof = kernel_hash(&bad.kernel);
        assert_eq!(c.validate_block(&bad).unwrap_err(), RejectReason::BadProof);

        let mut bad = good.clone();
        bad.height = 5;
        assert_eq!(c.validate_block(&bad).unwrap_err(), RejectReason::BadHeader);

        let mut bad = good.clone();
        bad.staked_utxo.output_index = 9;
        bad.kernel.n_prevout_num = 9;
        bad.hash_proof = kernel_hash(&bad.kernel);
        assert_eq!(c.validate_block(&bad).unwrap_err(), RejectReason::UnknownUtxo);

        assert!(accepted(&c.on_block_received(good, hit.kernel.n_time_tx)));
        c.audit().unwrap();
    }

    #[test]
    fn young_stake_rejected() {
        let g = GenesisSpec {
            timestamp: 0,
            utxos: vec![utxo(0, 0, 100 * COIN, -10_000), utxo(1, 1, 100 * COIN, -100)],
        };
        let p = params(DuplicatePolicy::Punitive);
        let target = Target::new(Hash256::MAX);
        let mut c = ChainState::new(&g, p, target);
        let young = g.utxos[1];
        let k = Kernel::for_stake(&young, 0, 50);
        let hit = StakeHit {
            utxo: young,
            kernel: k,
            hash_proof: kernel_hash(&k),
        };
        let b = c.make_block(0, &hit, vec![], 0);
        assert_eq!(c.validate_block(&b).unwrap_err(), RejectReason::YoungStake);
        let mut hashes = 0;
        let hits = c.mine_at(0, 1, 50, &mut hashes);
        assert!(hits.is_empty());
        assert_eq!(hashes, 0);
    }

    #[test]
    fn orphans_connect_when_parent_arrives() {
        let mut c = setup(DuplicatePolicy::Punitive);
        let mut other = c.clone();
        let (a, _) = extend(&mut other, 0, &[0, 1, 2, 3], 0);
        let tip = other.tip_index();
        let (b, _) = extend(&mut other, tip, &[0, 1, 2, 3], 0);
        assert_eq!(c.on_block_received(b.clone(), b.timestamp)[0].1, Received::Orphaned);
        assert_eq!(c.orphan_count(), 1);
        let r = c.on_block_received(a, b.timestamp);
        assert_eq!(r.len(), 2);
        assert!(r.iter().all(|(_, x)| matches!(x, Received::Accepted { .. })));
        assert_eq!(c.tip_hash(), b.hash());
        assert_eq!(c.orphan_count(), 0);
    }

    #[test]
    fn orphans_expire() {
        let mut c = setup(DuplicatePolicy::Punitive);
        let mut other = c.clone();
        extend(&mut other, 0, &[0, 1, 2, 3], 0);
        let tip = other.tip_index();
        let (b, _) = extend(&mut other, tip, &[0, 1, 2, 3], 0);
        c.on_block_received(b.clone(), b.timestamp);
        let later = b.timestamp + 2 * c.params().selection_interval + 1;
        let mut third = setup(DuplicatePolicy::Punitive);
        let (x, _) = extend(&mut third, 0, &[0], 7);
        c.on_block_received(x, later);
        assert_eq!(c.orphan_count(), 0);
    }

    #[test]
    fn longest_branch_wins_and_ties_keep_first() {
        let mut c = setup(DuplicatePolicy::Punitive);
        let (a, _) = extend(&mut c, 0, &[0, 1], 0);
        let (b, r) = extend(&mut c, 0, &[2, 3], 0);
        assert_eq!(r[0].1, Received::Accepted { tip_changed: false, reorg_depth: 0 });
        assert_eq!(c.tip_hash(), a.hash());
        let bi = c.lookup(&b.hash()).unwrap();
        let (_, r) = extend(&mut c, bi, &[2, 3], 0);
        assert_eq!(r[0].1, Received::Accepted { tip_changed: true, reorg_depth: 1 });
        assert_eq!(c.reorg_depths(), &[1]);
        c.audit().unwrap();
        // The losing block's coinstake is gone from the tip but visible on its branch.
        let ai = c.lookup(&a.hash()).unwrap();
        let out = a.coinstake_output(10 * COIN);
        assert!(c.utxos().get(&out.id).is_none());
        assert_eq!(c.utxo_at(ai, &out.id), Some(out));
        assert!(c.owner_utxos_at(ai, a.miner).contains(&out));
    }

    fn duplicate_pair(c: &mut ChainState) -> (Block, Block) {
        let tip = c.tip_index();
        let hit = next_hit(c, tip, &[0, 1, 2, 3]);
        (c.make_block(tip, &hit, vec![], 0), c.make_block(tip, &hit, vec![], 1))
    }

    #[test]
    fn punitive_duplicate_bans_and_reorgs() {
        let mut c = setup(DuplicatePolicy::Punitive);
        for _ in 0..3 {
            let tip = c.tip_index();
            extend(&mut c, tip, &[0, 1, 2, 3], 0);
        }
        let (x, y) = duplicate_pair(&mut c);
        assert!(accepted(&c.on_block_received(x.clone(), x.timestamp)));
        // Everything from the miner's first block up is dropped.
        let first_own = c.best_chain().find(|e| e.block.miner == x.miner).unwrap().block.height;
        let expected_depth = (c.height() - first_own + 1) as u32;
        let r = c.on_block_received(y.clone(), y.timestamp);
        assert_eq!(
            r[0].1,
            Received::DuplicateStake {
                first: x.hash(),
                banned: Some(x.miner),
                reorg_depth: expected_depth
            }
        );
        assert!(r[0].1.relay());
        assert!(c.banned_miners().contains(&x.miner));
        assert_ne!(c.tip_hash(), x.hash());
        assert!(c.best_chain().all(|e| e.block.miner != x.miner));
        assert_eq!(c.height(), first_own - 1);
        c.audit().unwrap();
        // Children of a removed block are refused.
        let xi = c.lookup(&x.hash()).unwrap();
        assert_eq!(c.entry(xi).status, EntryStatus::Removed);
    }

    #[test]
    fn detect_only_drops_second() {
        let mut c = setup(DuplicatePolicy::DetectOnly);
        let (x, y) = duplicate_pair(&mut c);
        c.on_block_received(x.clone(), x.timestamp);
        let r = c.on_block_received(y.clone(), y.timestamp);
        assert_eq!(
            r[0].1,
            Received::DuplicateStake {
                first: x.hash(),
                banned: None,
                reorg_depth: 0
            }
        );
        assert_eq!(c.tip_hash(), x.hash());
        assert!(c.banned_miners().is_empty());
        assert_eq!(c.dropped_duplicates(), &[(y.hash(), x.hash())]);
        c.audit().unwrap();
    }

    #[test]
    fn transfers_move_outputs() {
        let mut c = setup(DuplicatePolicy::Punitive);
        let hit = next_hit(&mut c, 0, &[0, 1, 2, 3]);
        let src = *c.owner_utxos((hit.utxo.owner + 1) % 4).next().unwrap();
        let ts = hit.kernel.n_time_tx;
        let out = Utxo {
            id: UtxoId {
                tx_hash: sha256(&[b"pay"]),
                output_index: 0,
            },
            owner: 9,
            tx_time: ts,
            block_time_from: ts,
            ..src
        };
        let bad = Transfer {
            input: src.id,
            output: Utxo { amount: src.amount + 1, ..out },
        };
        let b = c.make_block(0, &hit, vec![bad], 0);
        assert_eq!(c.validate_block(&b).unwrap_err(), RejectReason::BadTransfer);
        let b = c.make_block(0, &hit, vec![Transfer { input: src.id, output: out }], 0);
        assert!(accepted(&c.on_block_received(b, ts)));
        assert_eq!(c.owner_utxos(9).count(), 1);
        assert!(c.utxos().get(&src.id).is_none());
        c.audit().unwrap();
    }

    #[test]
    fn dump_has_one_versioned_line_per_block() {
        let mut c = setup(DuplicatePolicy::Punitive);
        for _ in 0..3 {
            let tip = c.tip_index();
            extend(&mut c, tip, &[0, 1, 2, 3], 0);
        }
        let dump = c.dump_jsonl();
        let lines: Vec<serde_json::Value> = dump.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(lines.len(), 4);
        assert!(lines.iter().all(|l| l["v"] == 1 && l["best"] == true));
        assert_eq!(lines[3]["height"], 3);
    }
}
