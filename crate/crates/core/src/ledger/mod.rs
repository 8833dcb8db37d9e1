//! Blocks, the per-node chain state and fork choice.

mod block;
mod state;

pub use block::{coinstake_reward, coinstake_reward_days, Block, Transfer, COINSTAKE_TX_OFFSET};
pub use state::{
    AuditError, BranchRef, ChainState, Entry, EntryStatus, GenesisSpec, Received, RejectReason, CHAIN_DUMP_VERSION,
    GENESIS_MINER,
};
