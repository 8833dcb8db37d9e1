use stakesim::analytics::*;
use stakesim::attacks::*;
use stakesim::ChainParams;
use statrs::distribution::{ContinuousCDF, Normal};

const TRIALS: u64 = 100_000;

fn cells() -> Vec<(f64, u64, f64)> {
    let mut out = Vec::new();
    for &p in TABLE1_FRACTIONS.iter().filter(|&&p| p < 0.5) {
        for &n in &TABLE1_CONFIRMATIONS {
            let a = double_spend_probability(p, n).to_linear();
            if a >= 1e-4 {
                out.push((p, n, a));
            }
        }
    }
    out
}

#[test]
fn every_visible_cell_agrees_with_simulation() {
    let params = ChainParams::neucoin();
    let cells = cells();
    // 99% for the whole family of cells, not for each one.
    let z = Normal::standard().inverse_cdf(1.0 - 0.01 / (2.0 * cells.len() as f64));
    let mut misses = Vec::new();
    for (k, &(p, n, a)) in cells.iter().enumerate() {
        let spec = AttackSpec {
            give_up_blocks: Some(100 * n.max(10)),
            ..AttackSpec::double_spend(p, n, TRIALS)
        };
        let out = run_double_spend(&spec, &params, 5_000 + k as u64).unwrap();
        let ci = wilson_interval(out.successes, out.trials, z);
        println!(
            "p={p} n={n}: {:.5} [{:.5}, {:.5}] analytic {a:.5}, per-cell 99% agrees: {}",
            out.probability,
            ci.lo,
            ci.hi,
            out.ci.contains(a)
        );
        if !ci.contains(a) {
            misses.push((p, n));
        }
    }
    assert!(misses.is_empty(), "{misses:?}");
}

/// The default horizon of ten times the confirmations cuts off slow wins.
#[test]
fn give_up_horizon_sensitivity() {
    let params = ChainParams::neucoin();
    for &n in &TABLE1_CONFIRMATIONS {
        let spec = AttackSpec::double_spend(0.4, n, TRIALS);
        let short = run_double_spend(&spec, &params, 6_000 + n).unwrap();
        let long_spec = AttackSpec {
            give_up_blocks: Some(100 * n.max(10)),
            ..spec
        };
        let long = run_double_spend(&long_spec, &params, 6_000 + n).unwrap();
        let a = double_spend_probability(0.4, n).to_linear();
        println!(
            "p=0.4 n={n}: horizon {} -> {:.5} ({} gave up), horizon {} -> {:.5}, analytic {a:.5}",
            short.give_up_blocks, short.probability, short.gave_up, long.give_up_blocks, long.probability
        );
        // Same seed, same paths: a longer horizon can only add wins.
        assert!(short.successes <= long.successes);
        assert!(long.ci.contains(a));
    }
}
