use proptest::prelude::*;
use stakesim::kernel::{Target, Utxo, UtxoId};
use stakesim::ledger::{Block, ChainState, GenesisSpec, Received};
use stakesim::{sha256, ChainParams, NodeId, COIN};

fn fresh() -> ChainState {
    let params = ChainParams {
        modifier_interval: 600,
        selection_interval: 6400,
        min_stake_age: 7200,
        ..ChainParams::neucoin()
    };
    let utxos = (0..40u8)
        .map(|i| Utxo {
            id: UtxoId {
                tx_hash: sha256(&[b"g", &[i]]),
                output_index: 0,
            },
            amount: 10 * COIN,
            tx_time: -10_000,
            block_time_from: -10_000,
            tx_offset: 100 + i as u32,
            owner: (i % 4) as NodeId,
        })
        .collect();
    let target = Target::equilibrium(400.0 * COIN as f64, &params);
    ChainState::new(&GenesisSpec { timestamp: 0, utxos }, params, target)
}

/// Mines `len` blocks on the tip of a fresh chain using only `owners`.
fn branch(owners: &[NodeId], len: usize) -> Vec<Block> {
    let mut c = fresh();
    let mut out = Vec::new();
    let mut hashes = 0;
    for _ in 0..len {
        let tip = c.tip_index();
        let mut t = c.tip().block.timestamp + 1;
        let hit = loop {
            if let Some(h) = owners.iter().find_map(|&o| c.mine_at(tip, o, t, &mut hashes).into_iter().next()) {
                break h;
            }
            t += 1;
        };
        let b = c.make_block(tip, &hit, vec![], 0);
        c.on_block_received(b.clone(), t);
        out.push(b);
    }
    out
}

fn feed(c: &mut ChainState, blocks: &[Block]) {
    for b in blocks {
        let r = c.on_block_received(b.clone(), b.timestamp);
        assert!(matches!(r[0].1, Received::Accepted { .. }), "{:?}", r[0].1);
    }
}

fn same_state(x: &ChainState, y: &ChainState) {
    assert_eq!(x.tip_hash(), y.tip_hash());
    assert_eq!(x.utxos(), y.utxos());
    for o in 0..4 {
        assert!(x.owner_utxos(o).eq(y.owner_utxos(o)));
    }
    assert_eq!(x.total_supply(), y.total_supply());
    x.audit().unwrap();
    y.audit().unwrap();
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, ..ProptestConfig::default() })]

    /// Reorganizing onto a branch and back gives the state of never leaving.
    #[test]
    fn reorg_round_trip_is_exact(a in 1usize..4, extra in 1usize..3) {
        let b_len = a + extra;
        let a_blocks = branch(&[0, 1], b_len + 1);
        let b_blocks = branch(&[2, 3], b_len);

        let mut c = fresh();
        feed(&mut c, &a_blocks[..a]);
        feed(&mut c, &b_blocks);
        let mut only_b = fresh();
        feed(&mut only_b, &b_blocks);
        same_state(&c, &only_b);

        feed(&mut c, &a_blocks[a..]);
        let mut only_a = fresh();
        feed(&mut only_a, &a_blocks);
        same_state(&c, &only_a);
        prop_assert_eq!(c.reorg_depths(), &[a as u32, b_len as u32][..]);
    }
}
