//! The blockchain as an ideal functionality: production with a liveness
//! envelope, fairness-bounded producer choice, lagged views and the
//! introductory service.

use crate::model::{BlockNumber, NetAddr, ParamProposal, PeerId, Round};
use crate::puzzle::RandomOracle;
use crate::rng::SimRng;
use rand::Rng;
use serde::Serialize;
use std::collections::VecDeque;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Block {
    pub number: BlockNumber,
    pub producer: PeerId,
    pub producer_addr: NetAddr,
    pub honest: bool,
    pub proposal: Option<ParamProposal>,
    pub hash: u64,
    /// Round in which the block was produced at the tip.
    pub round: Round,
}

/// Live peers eligible to produce, split by honesty.
#[derive(Clone, Copy, Debug)]
pub struct ProducerPool<'a> {
    pub honest: &'a [(PeerId, NetAddr)],
    pub byzantine: &'a [(PeerId, NetAddr)],
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChainConfig {
    pub block_interval: u32,
    pub mu_b: f64,
    pub mu_s: u64,
    pub fairness_delta: f64,
    pub intro_lag_blocks: u64,
    pub delta: u64,
    /// Window (in blocks) over which the liveness envelope is clamped.
    pub liveness_window_blocks: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ChainStats {
    pub forced_blocks: u64,
    pub suppressed_blocks: u64,
    pub clamped_bias_requests: u64,
}

pub struct ChainOracle {
    cfg: ChainConfig,
    oracle: RandomOracle,
    rng: SimRng,
    blocks: Vec<Block>,
    /// Leading confirmed height after each simulated round.
    history: Vec<BlockNumber>,
    recent: VecDeque<Round>,
    pub stats: ChainStats,
}

/// Honest producer probability after applying a requested adversarial bias,
/// clamped to the fairness envelope. Returns (probability, clamped?).
pub fn honest_share(honest: usize, byzantine: usize, bias: f64, fairness_delta: f64) -> (f64, bool) {
    let total = honest + byzantine;
    if byzantine == 0 {
        return (1.0, false);
    }
    if honest == 0 {
        return (0.0, false);
    }
    let fair = honest as f64 / total as f64;
    let floor = (1.0 - fairness_delta) * fair;
    let wanted = fair * (1.0 - bias.max(0.0));
    if wanted < floor {
        (floor, true)
    } else {
        (wanted.min(fair), false)
    }
}

impl ChainOracle {
    pub fn new(cfg: ChainConfig, oracle: RandomOracle, rng: SimRng) -> Self {
        assert!(cfg.block_interval >= 1);
        ChainOracle {
            cfg,
            oracle,
            rng,
            blocks: Vec::new(),
            history: Vec::new(),
            recent: VecDeque::new(),
            stats: ChainStats::default(),
        }
    }

    pub fn config(&self) -> &ChainConfig {
        &self.cfg
    }

    /// Picks a producer: honest with the clamped share, uniform inside the group.
    pub fn select_producer(&mut self, pool: ProducerPool<'_>, bias: f64) -> (PeerId, NetAddr, bool) {
        let (p, clamped) = honest_share(pool.honest.len(), pool.byzantine.len(), bias, self.cfg.fairness_delta);
        if clamped {
            self.stats.clamped_bias_requests += 1;
            log::debug!("producer bias {bias} clamped to honest share {p:.3}");
        }
        assert!(!pool.honest.is_empty() || !pool.byzantine.is_empty(), "no live peers");
        let honest = self.rng.gen_bool(p);
        let group = if honest { pool.honest } else { pool.byzantine };
        let (id, addr) = group[self.rng.gen_range(0..group.len())];
        (id, addr, honest)
    }

    fn push_block(&mut self, producer: (PeerId, NetAddr, bool), proposal: Option<ParamProposal>, round: Round) {
        let number = self.blocks.len() as BlockNumber;
        let parent = self.blocks.last().map_or(0, |b| b.hash);
        let hash = self.oracle.block_hash(number, producer.1, parent);
        self.blocks.push(Block {
            number,
            producer: producer.0,
            producer_addr: producer.1,
            honest: producer.2,
            proposal,
            hash,
            round,
        });
    }

    /// Builds the pre-existing chain up to a confirmed height of `confirmed`.
    pub fn prehistory(&mut self, confirmed: BlockNumber, pool: ProducerPool<'_>) {
        assert!(self.blocks.is_empty());
        for _ in 0..=confirmed + self.cfg.mu_s {
            let p = self.select_producer(pool, 0.0);
            self.push_block(p, None, 0);
        }
        self.history.push(self.leading_tip_confirmed());
    }

    fn leading_tip_confirmed(&self) -> BlockNumber {
        (self.blocks.len() as u64 - 1).saturating_sub(self.cfg.mu_s)
    }

    fn window_rounds(&self) -> u64 {
        self.cfg.liveness_window_blocks * u64::from(self.cfg.block_interval)
    }

    /// Advances one round. `payload` decides the block content given
    /// (block number, producer, honest?). Returns the new block, if any.
    pub fn advance_round(
        &mut self,
        round: Round,
        pool: ProducerPool<'_>,
        bias: f64,
        payload: &mut dyn FnMut(BlockNumber, PeerId, bool) -> Option<ParamProposal>,
    ) -> Option<&Block> {
        assert_eq!(round as usize, self.history.len(), "rounds must advance by one");
        let w = self.window_rounds();
        while self.recent.front().is_some_and(|&r| r + w <= round) {
            self.recent.pop_front();
        }
        let t = self.cfg.liveness_window_blocks as f64;
        let max_in_window = (t * self.cfg.mu_b).floor() as usize;
        let min_in_window = (t / self.cfg.mu_b).ceil() as usize;
        let drawn = self.rng.gen_bool(1.0 / f64::from(self.cfg.block_interval));
        let produce = if drawn && self.recent.len() + 1 > max_in_window {
            self.stats.suppressed_blocks += 1;
            false
        } else if !drawn && round + 1 >= w && self.recent.len() < min_in_window {
            self.stats.forced_blocks += 1;
            true
        } else {
            drawn
        };
        let mut made = false;
        if produce && (!pool.honest.is_empty() || !pool.byzantine.is_empty()) {
            let p = self.select_producer(pool, bias);
            let number = self.blocks.len() as BlockNumber;
            let proposal = payload(number, p.0, p.2);
            self.push_block(p, proposal, round);
            self.recent.push_back(round);
            made = true;
        }
        self.history.push(self.leading_tip_confirmed());
        if made {
            self.blocks.last()
        } else {
            None
        }
    }

    pub fn tip(&self) -> BlockNumber {
        self.blocks.len() as BlockNumber - 1
    }

    /// Leading confirmed height at the end of `round` (round 0 is the
    /// bootstrap state).
    pub fn leading_height(&self, round: Round) -> BlockNumber {
        let i = (round as usize).min(self.history.len() - 1);
        self.history[i]
    }

    pub fn current_height(&self) -> BlockNumber {
        *self.history.last().expect("chain bootstrapped")
    }

    pub fn current_round(&self) -> Round {
        self.history.len() as Round - 1
    }

    /// Confirmed height seen by a peer whose view trails by `lag` rounds.
    /// Never more than mu_s blocks behind the leader, never decreasing.
    pub fn view_height(&self, lag: u64, round: Round) -> BlockNumber {
        let lead = self.leading_height(round);
        let lagged = self.leading_height(round.saturating_sub(lag));
        lagged.max(lead.saturating_sub(self.cfg.mu_s))
    }

    /// Height offered by the introductory service: a copy of an honest chain
    /// at most `intro_lag_blocks` behind and never older than the leader was
    /// `delta - 2` rounds ago.
    pub fn intro_height(&self, round: Round) -> BlockNumber {
        let lead = self.leading_height(round);
        let recent = self.leading_height(round.saturating_sub(self.cfg.delta.saturating_sub(2)));
        lead.saturating_sub(self.cfg.intro_lag_blocks).max(recent)
    }

    pub fn block(&self, n: BlockNumber) -> Option<&Block> {
        self.blocks.get(n as usize)
    }

    pub fn block_hash(&self, n: BlockNumber) -> Option<u64> {
        self.blocks.get(n as usize).map(|b| b.hash)
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    /// First round at which the leading confirmed height reached `h`.
    pub fn first_round_at(&self, h: BlockNumber) -> Option<Round> {
        let i = self.history.partition_point(|&x| x < h);
        (i < self.history.len()).then_some(i as Round)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn cfg(beta: u32) -> ChainConfig {
        ChainConfig {
            block_interval: beta,
            mu_b: 2.0,
            mu_s: 6,
            fairness_delta: 0.1,
            intro_lag_blocks: 2,
            delta: 16,
            liveness_window_blocks: 16,
        }
    }

    type Group = Vec<(PeerId, NetAddr)>;

    fn peers(h: u32, b: u32) -> (Group, Group) {
        let hon = (0..h).map(|i| (PeerId(i), NetAddr(u64::from(i)))).collect();
        let byz = (h..h + b).map(|i| (PeerId(i), NetAddr(u64::from(i)))).collect();
        (hon, byz)
    }

    fn run(seed: u64, beta: u32, rounds: u64, bias: f64) -> ChainOracle {
        let (h, b) = peers(90, 10);
        let pool = ProducerPool { honest: &h, byzantine: &b };
        let mut c = ChainOracle::new(cfg(beta), RandomOracle::new(seed, 64), stream(seed, "chain"));
        c.prehistory(0, pool);
        for r in 1..=rounds {
            c.advance_round(r, pool, bias, &mut |_, _, _| None);
        }
        c
    }

    #[test]
    fn liveness_envelope() {
        let c = run(3, 10, 1000, 0.0);
        let made = c.tip() - 6;
        assert!((50..=200).contains(&made), "{made}");
    }

    #[test]
    fn deterministic_schedule() {
        let a: Vec<_> = run(42, 4, 64, 0.0).blocks().iter().map(|b| (b.round, b.producer)).collect();
        let b: Vec<_> = run(42, 4, 64, 0.0).blocks().iter().map(|b| (b.round, b.producer)).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn views_are_bounded_and_monotone() {
        let c = run(5, 4, 500, 0.0);
        for lag in [0, 3, 16, 100] {
            let mut prev = 0;
            for r in 0..=500 {
                let v = c.view_height(lag, r);
                assert!(v >= prev);
                assert!(c.leading_height(r) - v <= 6);
                prev = v;
            }
        }
        for r in 0..=500 {
            let i = c.intro_height(r);
            assert!(c.leading_height(r) - i <= 2);
        }
    }

    #[test]
    fn share_envelope() {
        assert_eq!(honest_share(100, 0, 5.0, 0.1), (1.0, false));
        let (p, clamped) = honest_share(90, 10, 1.0, 0.1);
        assert!(clamped);
        assert!((p - 0.81).abs() < 1e-12);
        let (p, clamped) = honest_share(90, 10, 0.05, 0.1);
        assert!(!clamped);
        assert!((p - 0.855).abs() < 1e-12);
    }

    #[test]
    fn single_peer_produces_everything() {
        let (h, _) = peers(1, 0);
        let pool = ProducerPool { honest: &h, byzantine: &[] };
        let mut c = ChainOracle::new(cfg(4), RandomOracle::new(1, 64), stream(1, "chain"));
        c.prehistory(0, pool);
        for r in 1..200 {
            c.advance_round(r, pool, 0.0, &mut |_, _, _| None);
        }
        assert!(c.blocks().iter().all(|b| b.producer == PeerId(0)));
    }
}
