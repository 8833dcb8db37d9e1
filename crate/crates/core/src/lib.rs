//! Proof-of-stake consensus simulator and attack analyzer.
//!
//! The crate covers the stake kernel and difficulty target ([`kernel`]),
//! stake-modifier generation ([`modifier`]), per-node chain state with
//! duplicate-stake punishment ([`ledger`]), a seeded network simulator
//! ([`netsim`]), scripted attackers ([`attacks`]) and the closed-form
//! probabilities they are checked against ([`analytics`]).

pub mod analytics;
pub mod attacks;
pub mod hash;
pub mod kernel;
pub mod ledger;
pub mod modifier;
pub mod netsim;
pub mod params;
pub mod rng;
pub mod tailprob;

pub use hash::{sha256, Hash256};
pub use params::{
    Amount, ChainParams, CoinAgeMode, DuplicatePolicy, ModifierMode, NodeId, StakeInequality,
    Timestamp, WindowLaw, COIN, DAY, HOUR, MINUTE, YEAR,
};
pub use rng::SimRng;
pub use tailprob::TailProb;
