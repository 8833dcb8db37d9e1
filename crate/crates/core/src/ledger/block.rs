use serde::{Deserialize, Serialize};

use crate::hash::{sha256, Hash256};
use crate::kernel::{Kernel, Utxo, UtxoId};
use crate::params::{Amount, ChainParams, NodeId, Timestamp, YEAR};

/// Byte offset given to coinstake outputs (an 80-byte header plus a count byte).
pub const COINSTAKE_TX_OFFSET: u32 = 81;

/// Moves one output to a new owner inside a block.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transfer {
    pub input: UtxoId,
    pub output: Utxo,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub height: u64,
    pub timestamp: Timestamp,
    pub prev: Hash256,
    pub kernel: Kernel,
    pub hash_proof: Hash256,
    pub miner: NodeId,
    pub staked_utxo: UtxoId,
    pub reward: Amount,
    pub spends: Vec<Transfer>,
    /// Free field; changes the block hash without touching the stake proof.
    pub nonce: u64,
}

fn put_utxo(buf: &mut Vec<u8>, u: &Utxo) {
    buf.extend_from_slice(u.id.tx_hash.as_le_bytes());
    buf.extend_from_slice(&u.id.output_index.to_le_bytes());
    buf.extend_from_slice(&u.amount.to_le_bytes());
    buf.extend_from_slice(&u.tx_time.to_le_bytes());
    buf.extend_from_slice(&u.block_time_from.to_le_bytes());
    buf.extend_from_slice(&u.tx_offset.to_le_bytes());
    buf.extend_from_slice(&u.owner.to_le_bytes());
}

impl Block {
    /// SHA-256 over every field, integers little-endian, in declaration order.
    pub fn hash(&self) -> Hash256 {
        let mut buf = Vec::with_capacity(232 + self.spends.len() * 100);
        buf.extend_from_slice(&self.height.to_le_bytes());
        buf.extend_from_slice(&self.timestamp.to_le_bytes());
        buf.extend_from_slice(self.prev.as_le_bytes());
        buf.extend_from_slice(&self.kernel.serialize());
        buf.extend_from_slice(self.hash_proof.as_le_bytes());
        buf.extend_from_slice(&self.miner.to_le_bytes());
        buf.extend_from_slice(self.staked_utxo.tx_hash.as_le_bytes());
        buf.extend_from_slice(&self.staked_utxo.output_index.to_le_bytes());
        buf.extend_from_slice(&self.reward.to_le_bytes());
        buf.extend_from_slice(&(self.spends.len() as u32).to_le_bytes());
        for t in &self.spends {
            buf.extend_from_slice(t.input.tx_hash.as_le_bytes());
            buf.extend_from_slice(&t.input.output_index.to_le_bytes());
            put_utxo(&mut buf, &t.output);
        }
        buf.extend_from_slice(&self.nonce.to_le_bytes());
        sha256(&[&buf])
    }

    /// The output paying back the stake plus reward.
    pub fn coinstake_output(&self, staked_amount: Amount) -> Utxo {
        Utxo {
            id: UtxoId {
                tx_hash: sha256(&[b"coinstake", self.prev.as_le_bytes(), self.hash_proof.as_le_bytes()]),
                output_index: 0,
            },
            amount: staked_amount + self.reward,
            tx_time: self.timestamp,
            block_time_from: self.timestamp,
            tx_offset: COINSTAKE_TX_OFFSET,
            owner: self.miner,
        }
    }
}

/// Reward for staking `amount` units idle for `idle_secs`, `elapsed_secs`
/// after genesis: `amount * idle / year * rate`, rounded down.
pub fn coinstake_reward(amount: Amount, idle_secs: i64, elapsed_secs: i64, params: &ChainParams) -> Amount {
    let idle = idle_secs.max(0) as u128;
    let rate = params.reward_rate_ppm(elapsed_secs) as u128;
    (amount as u128 * idle * rate / (1_000_000u128 * YEAR as u128)) as Amount
}

/// The same reward with idle time in days and elapsed time in years.
pub fn coinstake_reward_days(amount: Amount, days_idle: f64, years_elapsed: f64, params: &ChainParams) -> Amount {
    let day = crate::params::DAY as f64;
    coinstake_reward(amount, (days_idle * day).round() as i64, (years_elapsed * YEAR as f64).round() as i64, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{COIN, DAY};

    #[test]
    fn reward_examples() {
        let p = ChainParams::neucoin();
        assert_eq!(coinstake_reward(1000 * COIN, 365 * DAY, 0, &p), 1000 * COIN);
        assert_eq!(coinstake_reward(1000 * COIN, 365 * DAY, 10 * YEAR, &p), 60 * COIN);
        assert_eq!(coinstake_reward(1000 * COIN, 365 * DAY, 5 * YEAR, &p), 530 * COIN);
        assert_eq!(coinstake_reward_days(1000 * COIN, 365.0, 12.0, &p), 60 * COIN);
        let pc = ChainParams::peercoin();
        assert_eq!(coinstake_reward(1000 * COIN, 365 * DAY, 0, &pc), 10 * COIN);
        assert_eq!(coinstake_reward(1000 * COIN, 365 * DAY, 8 * YEAR, &pc), 10 * COIN);
        assert_eq!(coinstake_reward(1, DAY, 0, &p), 0);
    }

    #[test]
    fn hash_covers_nonce() {
        let b = Block {
            height: 1,
            timestamp: 100,
            prev: Hash256::ZERO,
            kernel: Kernel {
                n_stake_modifier: 0,
                n_time_block_from: 0,
                n_tx_prev_offset: 0,
                n_tx_prev_time: 0,
                n_prevout_num: 0,
                n_time_tx: 100,
            },
            hash_proof: Hash256::ZERO,
            miner: 0,
            staked_utxo: UtxoId {
                tx_hash: Hash256::ZERO,
                output_index: 0,
            },
            reward: 0,
            spends: vec![],
            nonce: 0,
        };
        let c = Block { nonce: 1, ..b.clone() };
        assert_ne!(b.hash(), c.hash());
        assert_eq!(b.hash(), b.clone().hash());
    }
}
