//! Oracles shared by the statistical suite and the acceptance report.
#![allow(dead_code)]

use overchain::chain::{Block, ChainConfig, ChainOracle, ProducerPool};
use overchain::model::{NetAddr, PeerId};
use overchain::puzzle::{Puzzle, RandomOracle};
use overchain::rng::stream;
use overchain::scenario::Scenario;
use rand::Rng;
use std::path::Path;

// Upper 0.001 quantiles of the chi-square distribution.
pub const CHI2_DF15_P001: f64 = 37.697;
pub const CHI2_DF63_P001: f64 = 103.442;

pub fn scenario(name: &str) -> Scenario {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(format!("{name}.json"));
    Scenario::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

pub fn puzzle(seed: u64, success_prob: f64, p_n: f64) -> Puzzle {
    Puzzle {
        oracle: RandomOracle::new(seed, 64),
        target: (p_n * 2f64.powi(64)) as u128,
        success_prob,
        mu_s: 6,
        node_lifetime: 400,
    }
}

pub fn within_3_sigma(observed: f64, n: f64, p: f64) -> bool {
    (observed - n * p).abs() <= 3.0 * (n * p * (1.0 - p)).sqrt()
}

/// Proofs found by one peer over `rounds` rounds of mining.
pub fn mining_hits(seed: u64, rounds: u64, success_prob: f64) -> u64 {
    let pz = puzzle(seed, success_prob, 0.01);
    let mut rng = stream(seed, "mine");
    (0..rounds).filter(|&r| pz.mine_attempt(&mut rng, NetAddr(7), r, r.wrapping_mul(0x9e37)).is_some()).count() as u64
}

/// Chi-square statistic of the committee histogram over `proofs` mined proofs.
pub fn committee_chi2(committees: u32, proofs: usize, seed: u64) -> f64 {
    let pz = puzzle(seed, 1.0, 0.01);
    let mut rng = stream(seed, "addrs");
    let mut counts = vec![0u64; committees as usize];
    for i in 0..proofs as u64 {
        let proof = pz.find_nonce(rng.gen(), NetAddr(rng.gen()), i / 16, rng.gen());
        counts[pz.committee_of(proof.p_join, committees) as usize] += 1;
    }
    let expected = proofs as f64 / f64::from(committees);
    counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum()
}

/// 90 honest and 10 Byzantine producers with the adversary requesting every
/// block. Returns the first `blocks` produced blocks and the last round.
pub fn biased_chain(seed: u64, blocks: usize) -> (Vec<Block>, u64) {
    let honest: Vec<_> = (0..90).map(|i| (PeerId(i), NetAddr(u64::from(i)))).collect();
    let byz: Vec<_> = (90..100).map(|i| (PeerId(i), NetAddr(u64::from(i)))).collect();
    let pool = ProducerPool { honest: &honest, byzantine: &byz };
    let cfg = ChainConfig {
        block_interval: 4,
        mu_b: 2.0,
        mu_s: 6,
        fairness_delta: 0.1,
        intro_lag_blocks: 2,
        delta: 16,
        liveness_window_blocks: 16,
    };
    let mut chain = ChainOracle::new(cfg, RandomOracle::new(seed, 64), stream(seed, "chain"));
    chain.prehistory(0, pool);
    let mut r = 0;
    while chain.blocks().len() <= blocks {
        r += 1;
        chain.advance_round(r, pool, 1.0, &mut |_, _, _| None);
    }
    (chain.blocks()[1..=blocks].to_vec(), r)
}

/// Honest share of `blocks` against the envelope floor (1 - delta)(1 - rho)
/// less three binomial standard deviations.
pub fn fairness_holds(blocks: &[Block]) -> (f64, f64, bool) {
    let n = blocks.len() as f64;
    let share = blocks.iter().filter(|b| b.honest).count() as f64 / n;
    let floor: f64 = 0.9 * 0.9;
    let bound = floor - 3.0 * (floor * (1.0 - floor) / n).sqrt();
    (share, bound, share >= bound)
}
