//! The deterministic round loop: bootstrap, the fixed per-round step order,
//! and the analyzer hooks that turn ground truth into trace records.
//!
//! Step order within round `r`:
//! chain advance, directory phases, b-epoch events, node expiry, churn and
//! Byzantine population, directory delivery (requests sent in `r - 1`),
//! join unions, JOINING acceptance, size-estimation flood, mining and new
//! joins, adversary actions, analyzer snapshot.

use crate::adversary::{
    generate_churn, select_catastrophe, verify_catastrophe, ByzantineStrategy, CatastropheInput, ChurnError, ChurnKind,
    ChurnSchedule, CorruptionMode,
};
use crate::analyzer::{full_scan, honest_committee_graph, links_into_generation};
use crate::chain::{ChainConfig, ChainOracle, ProducerPool};
use crate::directory::{
    dir_round, Bucket, DirContext, DirNode, Directory, Geometry, Phase, Request, RequestKind, Responder,
};
use crate::epoch::{estimate_size, proposal_for, selected_committee, tally, EpochClock, EpochPhase, Estimate};
use crate::model::{
    committee_to_bucket, relevant_committees, BlockNumber, BucketIndex, CommitteeId, DimChange, NetAddr, NodeId,
    NodeRecord, ParamProposal, PeerId, Round,
};
use crate::overlay::{Overlay, PrThresholds};
use crate::params::{Derived, ParamError, SimParams};
use crate::puzzle::{InvalidReason, NodeProof, Puzzle, RandomOracle};
use crate::rng::{stream, SimRng};
use crate::scenario::Scenario;
use crate::trace::{EpochReport, Event, EventRecord, Header, JoinStats, RoundReport, Summary, Trace};
use rand::Rng;
use rustc_hash::{FxHashMap, FxHashSet};
use std::collections::{BTreeMap, VecDeque};
use thiserror::Error;
use xxhash_rust::xxh3::{xxh3_64, Xxh3};

pub const TOOL: &str = "overchain";

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Params(#[from] ParamError),
    #[error(transparent)]
    Churn(#[from] ChurnError),
    #[error("bootstrap rejected: {0}")]
    Bootstrap(String),
}

/// Runs a scenario for its configured length (or `rounds`, if given).
pub fn run(scenario: &Scenario, seed: u64, rounds: Option<Round>) -> Result<Trace, RunError> {
    let mut e = Engine::new(scenario, seed, rounds)?;
    e.run_to_end();
    Ok(e.finish())
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum JoinOutcome {
    Success,
    /// Some relevant committee got no COMM_INFO at all.
    PartialJoin,
    /// Replies arrived but missed honest members.
    MissedEntries,
    /// No directory stored the node.
    Unregistered,
}

struct PendingJoin {
    owner: PeerId,
    started: Round,
    gen: u32,
    rel: Vec<CommitteeId>,
    learned: FxHashSet<NodeId>,
    answered: FxHashSet<CommitteeId>,
    registered: bool,
}

struct Transition {
    epoch: u64,
    old: u32,
    new: u32,
}

/// Messages per peer, keyed by the round they are sent or received in.
#[derive(Default)]
struct Traffic {
    by_round: BTreeMap<Round, Vec<u32>>,
}

impl Traffic {
    fn add(&mut self, round: Round, peer: PeerId, n: u32) {
        if n == 0 {
            return;
        }
        let v = self.by_round.entry(round).or_default();
        let i = peer.0 as usize;
        if v.len() <= i {
            v.resize(i + 1, 0);
        }
        v[i] += n;
    }

    fn take(&mut self, round: Round) -> Vec<u32> {
        self.by_round.remove(&round).unwrap_or_default()
    }
}

struct UnionFind(Vec<u32>);

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind((0..n as u32).collect())
    }
    fn find(&mut self, mut x: u32) -> u32 {
        while self.0[x as usize] != x {
            let p = self.0[x as usize];
            self.0[x as usize] = self.0[p as usize];
            x = p;
        }
        x
    }
    fn union(&mut self, a: u32, b: u32) {
        let (a, b) = (self.find(a), self.find(b));
        if a != b {
            self.0[a.max(b) as usize] = a.min(b);
        }
    }
}

/// Accumulates one b-epoch's report.
struct EpochAcc {
    epoch: u64,
    start_round: Round,
    from_start: bool,
    committees: u32,
    transformation: bool,
    phase1_end_round: Option<Round>,
    est_round: Option<Round>,
    size_sum: f64,
    size_rounds: u64,
    /// Per peer: (round it is ready to vote, estimate, proposal).
    estimates: FxHashMap<PeerId, (Round, f64, ParamProposal)>,
    consensus: Option<ParamProposal>,
    estimate: Option<f64>,
    estimate_min: Option<f64>,
    estimate_max: Option<f64>,
    stalled: u32,
    joins_seen: u64,
    rounds: u64,
    resilient_rounds: u64,
    stable: bool,
    bandwidth_ok: bool,
    max_msgs: u32,
    dropped_over_cap: u64,
    honest_joins: u64,
    honest_join_failures: u64,
}

impl EpochAcc {
    fn new(epoch: u64, start_round: Round, from_start: bool, committees: u32, transformation: bool) -> Self {
        EpochAcc {
            epoch,
            start_round,
            from_start,
            committees,
            transformation,
            phase1_end_round: None,
            est_round: None,
            size_sum: 0.0,
            size_rounds: 0,
            estimates: FxHashMap::default(),
            consensus: None,
            estimate: None,
            estimate_min: None,
            estimate_max: None,
            stalled: 0,
            joins_seen: 0,
            rounds: 0,
            resilient_rounds: 0,
            stable: true,
            bandwidth_ok: true,
            max_msgs: 0,
            dropped_over_cap: 0,
            honest_joins: 0,
            honest_join_failures: 0,
        }
    }
}

#[derive(Default)]
struct Counters {
    joins: JoinStats,
    dropped_over_cap: u64,
    dropped_invalid: u64,
    dropped_phase: u64,
    max_bucket_load: u64,
    suppressed_byzantine: u64,
    tracker_checks: u64,
    max_stale_links: u64,
    increases: u64,
    decreases: u64,
    switches: u64,
    resilient_rounds: u64,
    isolated_rounds: u64,
    dir_robust_rounds: u64,
    min_dir_honest: u32,
    max_msgs: u32,
    max_nodes_per_peer: u32,
}

/// A JOINING delivery: the joiner and whom it contacts (`None`: every
/// rostered node of its relevant committees, used by Byzantine joiners).
type JoiningDelivery = (NodeId, Option<Vec<NodeId>>);

pub struct Engine {
    sc: Scenario,
    p: SimParams,
    d: Derived,
    seed: u64,
    round: Round,
    total_rounds: Round,
    max_committees: u32,
    chain: ChainOracle,
    puzzle: Puzzle,
    dir: Directory,
    ov: Overlay,
    clock: EpochClock,
    rng_mine: SimRng,
    rng_byz: SimRng,
    rng_lag: SimRng,
    churn: ChurnSchedule,
    churn_pos: usize,
    slot_peer: FxHashMap<u32, PeerId>,
    honest_pool: Vec<(PeerId, NetAddr)>,
    byz_pool: Vec<(PeerId, NetAddr)>,
    pools_dirty: bool,
    next_addr: u64,
    /// Requests delivered to buckets next round.
    dir_inbox: FxHashMap<BucketIndex, Vec<Request>>,
    pending: FxHashMap<NodeId, PendingJoin>,
    unions_due: BTreeMap<Round, Vec<NodeId>>,
    accept_due: BTreeMap<Round, Vec<JoiningDelivery>>,
    traffic: Traffic,
    expiry: BTreeMap<BlockNumber, Vec<NodeId>>,
    op_gen: u32,
    transition: Option<Transition>,
    cleanup_due: Option<(u64, u32)>,
    epoch: EpochAcc,
    last_height: BlockNumber,
    held: Vec<(PeerId, NodeProof)>,
    joins_this_round: u32,
    bucket_load: u64,
    dropped_this_round: u64,
    counters: Counters,
    resilient_by_round: Vec<bool>,
    rounds: Vec<RoundReport>,
    epochs: Vec<EpochReport>,
    events: Vec<EventRecord>,
    state_hashes: Vec<(Round, String)>,
    catastrophe_round: Option<Round>,
    breach: Option<String>,
}

fn proposal_keep(committees: u32) -> ParamProposal {
    ParamProposal { committees, change: DimChange::NoChange }
}

/// What a disruptive Byzantine producer writes into a vote block.
fn byzantine_vote(current: u32, consensus: Option<ParamProposal>, lambda_s: u32, max: u32) -> ParamProposal {
    let flip = if current > 1 {
        ParamProposal { committees: (current / lambda_s).max(1), change: DimChange::Decrease }
    } else {
        ParamProposal { committees: current.saturating_mul(lambda_s).min(max), change: DimChange::Increase }
    };
    match consensus {
        Some(p) if p.change != DimChange::NoChange => proposal_keep(current),
        _ => flip,
    }
}

impl Engine {
    pub fn new(scenario: &Scenario, seed: u64, rounds: Option<Round>) -> Result<Self, RunError> {
        let p = scenario.params.clone();
        let d = p.derive()?;
        let total_rounds = rounds.unwrap_or_else(|| scenario.total_rounds(d.bepoch_blocks));
        let rho = p.byz_fraction;
        let byz0 = (rho * f64::from(p.initial_peers)).floor() as u32;
        let honest0 = p.initial_peers - byz0;
        if honest0 < d.honest_floor {
            return Err(RunError::Bootstrap(format!(
                "{honest0} initial honest peers cannot give every committee {} honest peers",
                d.honest_floor
            )));
        }
        let max_committees = 1u32 << (63 - p.max_peers.leading_zeros()).min(31);
        if d.initial_committees > max_committees {
            return Err(RunError::Bootstrap(format!(
                "{} initial committees exceed the {max_committees} a network of at most {} peers can use",
                d.initial_committees, p.max_peers
            )));
        }
        let mut churn_profile = scenario.churn.clone();
        if churn_profile.honest_cap.is_none() {
            churn_profile.honest_cap = Some(((1.0 - rho) * p.max_peers as f64).floor() as u32);
        }
        let churn = generate_churn(&churn_profile, honest0, p.halflife, total_rounds, seed)?;
        let oracle = RandomOracle::new(xxh3_64(&seed.to_le_bytes()), p.kappa);
        let puzzle = Puzzle {
            oracle: oracle.clone(),
            target: d.join_target,
            success_prob: d.success_prob,
            mu_s: p.mu_s,
            node_lifetime: d.node_lifetime,
        };
        let chain = ChainOracle::new(
            ChainConfig {
                block_interval: p.block_interval,
                mu_b: p.mu_b,
                mu_s: p.mu_s,
                fairness_delta: p.fairness_delta,
                intro_lag_blocks: p.intro_lag_blocks,
                delta: d.delta,
                liveness_window_blocks: d.delta,
            },
            oracle,
            stream(seed, "chain"),
        );
        let geo = Geometry { bucket_size: d.bucket_size, buckets: d.buckets, active: d.active_buckets, delta: d.delta };
        let clock =
            EpochClock { bepoch_blocks: d.bepoch_blocks, phase1_blocks: d.phase1_blocks, vote_blocks: d.vote_blocks };
        let thresholds =
            PrThresholds { honest_floor: d.honest_floor, committee_cap: d.committee_cap, conn_floor: d.conn_floor };
        let mut e = Engine {
            sc: scenario.clone(),
            p,
            seed,
            round: 0,
            total_rounds,
            max_committees,
            chain,
            puzzle,
            dir: Directory::new(geo),
            ov: Overlay::new(thresholds, d.initial_committees),
            clock,
            rng_mine: stream(seed, "mining"),
            rng_byz: stream(seed, "adversary"),
            rng_lag: stream(seed, "lag"),
            churn,
            churn_pos: 0,
            slot_peer: FxHashMap::default(),
            honest_pool: Vec::new(),
            byz_pool: Vec::new(),
            pools_dirty: true,
            next_addr: 1,
            dir_inbox: FxHashMap::default(),
            pending: FxHashMap::default(),
            unions_due: BTreeMap::new(),
            accept_due: BTreeMap::new(),
            traffic: Traffic::default(),
            expiry: BTreeMap::new(),
            op_gen: 0,
            transition: None,
            cleanup_due: None,
            epoch: EpochAcc::new(0, 0, false, d.initial_committees, false),
            last_height: 0,
            held: Vec::new(),
            joins_this_round: 0,
            bucket_load: 0,
            dropped_this_round: 0,
            counters: Counters { min_dir_honest: u32::MAX, ..Counters::default() },
            resilient_by_round: Vec::new(),
            rounds: Vec::new(),
            epochs: Vec::new(),
            events: Vec::new(),
            state_hashes: Vec::new(),
            catastrophe_round: None,
            breach: None,
            d,
        };
        let per_committee = f64::from(e.p.initial_peers)
            * e.d.success_prob
            * (e.d.node_lifetime * u64::from(e.p.block_interval)) as f64
            / f64::from(e.d.initial_committees);
        e.ov.degree_hint = (f64::from(e.ov.gens[0].dim + 1) * per_committee * 1.25) as usize;
        e.bootstrap(honest0, byz0);
        Ok(e)
    }

    fn fresh_peer(&mut self, honest: bool, round: Round) -> PeerId {
        let lag = self.rng_lag.gen_range(0..=self.d.max_view_lag);
        let addr = NetAddr(self.next_addr);
        self.next_addr += 1;
        self.pools_dirty = true;
        self.ov.add_peer(addr, honest, lag, round)
    }

    fn refresh_pools(&mut self) {
        if !self.pools_dirty {
            return;
        }
        self.honest_pool.clear();
        self.byz_pool.clear();
        for p in self.ov.alive_peers() {
            if p.honest {
                self.honest_pool.push((p.id, p.addr));
            } else {
                self.byz_pool.push((p.id, p.addr));
            }
        }
        self.pools_dirty = false;
    }

    /// Round-0 world: a pre-existing chain and directory, and a complete
    /// hypercube of committees whose nodes were mined over the last node lifetime.
    fn bootstrap(&mut self, honest0: u32, byz0: u32) {
        for slot in 0..honest0 {
            let id = self.fresh_peer(true, 0);
            self.slot_peer.insert(slot, id);
        }
        for _ in 0..byz0 {
            self.fresh_peer(false, 0);
        }
        self.refresh_pools();
        let need = u64::from(self.d.active_buckets + 1) * self.d.bucket_size;
        let need = need.max(self.d.node_lifetime + 1);
        let e0 = need.div_ceil(self.d.bepoch_blocks).max(1);
        let h0 = e0 * self.d.bepoch_blocks - 1;
        let pool = ProducerPool { honest: &self.honest_pool, byzantine: &self.byz_pool };
        self.chain.prehistory(h0, pool);
        for b in self.chain.blocks() {
            self.dir.on_block(b.number, b.producer, self.d.dir_lifetime, 0);
        }
        self.dir.prehistory(h0);
        for b in self.dir.iter_mut() {
            b.generations = vec![0];
        }
        // Nodes mined over the last node lifetime, one draw per round.
        let committees = self.d.initial_committees;
        let mut by_committee: Vec<Vec<NodeId>> = vec![Vec::new(); committees as usize];
        let peers: Vec<(PeerId, NetAddr, bool)> = self.ov.alive_peers().map(|p| (p.id, p.addr, p.honest)).collect();
        let first = (h0 + 1).saturating_sub(self.d.node_lifetime);
        for b in first..=h0 {
            let hash = self.chain.block_hash(b).expect("prehistory block");
            for _ in 0..self.p.block_interval {
                for &(pid, addr, honest) in &peers {
                    let rng = if honest { &mut self.rng_mine } else { &mut self.rng_byz };
                    let Some(proof) = self.puzzle.mine_attempt(rng, addr, b, hash) else { continue };
                    let c = self.puzzle.committee_of(proof.p_join, committees);
                    let rec = NodeRecord {
                        entry: proof.entry,
                        p_join: proof.p_join,
                        committee: c,
                        is_directory: false,
                        expiry_block: b + self.d.node_lifetime,
                        owner: pid,
                    };
                    let id = self.ov.create_node(rec, 0, false);
                    self.expiry.entry(b + self.d.node_lifetime).or_default().push(id);
                    if let Some(idx) = self.dir.geo.middle_aged_for(c, b) {
                        if let Some(bucket) = self.dir.get_mut(idx) {
                            bucket.store(0, c, id);
                        }
                    }
                    self.ov.roster(id, 0);
                    by_committee[c as usize].push(id);
                }
            }
        }
        let dim = self.ov.gens[0].dim;
        for c in 0..committees {
            let own = by_committee[c as usize].clone();
            for (i, &a) in own.iter().enumerate() {
                for &b in &own[i + 1..] {
                    self.ov.connect(a, b);
                }
            }
            for bit in 0..dim {
                let other = c ^ (1 << bit);
                if other < c {
                    continue;
                }
                for &a in &own {
                    for &b in &by_committee[other as usize] {
                        self.ov.connect(a, b);
                    }
                }
            }
        }
        for list in &by_committee {
            for &id in list {
                self.ov.make_member(id, 0);
            }
        }
        self.last_height = self.chain.current_height();
        let e = self.clock.epoch_of(self.last_height);
        self.epoch = EpochAcc::new(e, 0, false, committees, false);
        self.resilient_by_round.push(self.ov.tracked_violation(0).is_none());
        if self.sc.engine.state_hash_every > 0 {
            self.state_hashes.push((0, self.state_hash()));
        }
    }

    pub fn run_to_end(&mut self) {
        while self.round < self.total_rounds && self.breach.is_none() {
            self.step();
        }
    }

    fn halt(&mut self, what: String) {
        log::error!("invariant breach at round {}: {what}", self.round);
        self.events.push(EventRecord {
            round: self.round,
            event: Event::InvariantBreach { round: self.round, what: what.clone() },
        });
        self.breach = Some(format!("round {}: {what}", self.round));
    }

    fn gens_for_mining(&self) -> Vec<u32> {
        match &self.transition {
            Some(t) => vec![t.old, t.new],
            None => vec![self.op_gen],
        }
    }

    pub fn step(&mut self) {
        let r = self.round + 1;
        self.round = r;
        self.joins_this_round = 0;
        self.bucket_load = 0;
        self.dropped_this_round = 0;
        self.advance_chain(r);
        let h = self.chain.leading_height(r);
        let fresh = self.dir.step(h, r);
        let gens = self.gens_for_mining();
        for idx in fresh {
            if let Some(b) = self.dir.get_mut(idx) {
                b.split_state = gens.len() > 1;
                b.generations = gens.clone();
            }
        }
        if h != self.last_height {
            for height in self.last_height + 1..=h {
                self.epoch_events(height, r);
            }
            self.last_height = h;
        }
        self.expire(h);
        self.churn_step(r);
        self.adjust_byzantine(r);
        self.deliver_directory(r, h);
        self.union_step(r);
        self.accept_step(r);
        if self.epoch.est_round == Some(r) {
            self.estimate(r);
        }
        self.mine(r);
        self.adversary_step(r, h);
        self.observe(r, h);
    }

    fn advance_chain(&mut self, r: Round) {
        self.refresh_pools();
        let pool = ProducerPool { honest: &self.honest_pool, byzantine: &self.byz_pool };
        let clock = self.clock;
        let acc = &self.epoch;
        let strategy = &self.sc.adversary.strategy;
        let lambda_s = self.p.lambda_s;
        let max = self.max_committees;
        let mut payload = |n: BlockNumber, producer: PeerId, honest: bool| -> Option<ParamProposal> {
            if clock.epoch_of(n) != acc.epoch || !clock.vote_range(acc.epoch).contains(&n) {
                return None;
            }
            if honest || strategy.is_passive() {
                let &(ready, _, p) = acc.estimates.get(&producer)?;
                if r >= ready {
                    return Some(if honest { p } else { acc.consensus.unwrap_or(p) });
                }
                return None;
            }
            Some(byzantine_vote(acc.committees, acc.consensus, lambda_s, max))
        };
        let made = self
            .chain
            .advance_round(r, pool, self.sc.adversary.producer_bias, &mut payload)
            .map(|b| (b.number, b.producer));
        if let Some((n, producer)) = made {
            self.dir.on_block(n, producer, self.d.dir_lifetime, r);
        }
    }

    /// Reacts to the leading confirmed height reaching `height` in round `r`.
    fn epoch_events(&mut self, height: BlockNumber, r: Round) {
        let e = self.clock.epoch_of(height);
        if e != self.epoch.epoch {
            let adopted = self.finalize_epoch(r, true);
            self.boundary(e, adopted, r);
        }
        if height == self.clock.phase1_end(e) && self.epoch.phase1_end_round.is_none() {
            self.epoch.phase1_end_round = Some(r);
            self.epoch.est_round = Some(r + self.d.delta);
        }
    }

    fn finalize_epoch(&mut self, r: Round, complete: bool) -> ParamProposal {
        let acc = &self.epoch;
        let e = acc.epoch;
        let range = self.clock.vote_range(e);
        let mut payloads = Vec::new();
        let mut honest_blocks = 0;
        let mut honest_votes: Vec<ParamProposal> = Vec::new();
        let mut seen_blocks = 0;
        for n in range.clone() {
            let Some(b) = self.chain.block(n) else { continue };
            seen_blocks += 1;
            payloads.push(b.proposal);
            if b.honest {
                honest_blocks += 1;
                honest_votes.extend(b.proposal);
            }
        }
        let t = tally(payloads, acc.committees);
        let adopted = if acc.transformation { proposal_keep(acc.committees) } else { t.adopted };
        let complete = complete && acc.from_start;
        let agree = honest_votes.windows(2).all(|w| w[0] == w[1]) && !honest_votes.is_empty();
        let synchronized = complete && 2 * honest_blocks > seen_blocks && agree;
        let mean_size = if acc.size_rounds == 0 { 0.0 } else { acc.size_sum / acc.size_rounds as f64 };
        let ratio = match acc.estimate {
            Some(v) if v > 0.0 && acc.size_rounds > 0 => Some(mean_size / v),
            _ => None,
        };
        let component = Some(honest_committee_graph(&self.ov, self.op_gen));
        self.epochs.push(EpochReport {
            epoch: e,
            start_round: acc.start_round,
            end_round: r.saturating_sub(1),
            complete,
            committees: acc.committees,
            transformation: acc.transformation,
            estimate: acc.estimate,
            estimate_min: acc.estimate_min,
            estimate_max: acc.estimate_max,
            stalled_peers: acc.stalled,
            joins_seen: acc.joins_seen,
            mean_size,
            ratio,
            adopted: Some(adopted),
            votes: t.votes,
            honest_vote_blocks: honest_blocks,
            vote_blocks: seen_blocks,
            synchronized,
            stable: acc.stable,
            bandwidth_adequate: acc.bandwidth_ok,
            max_msgs_per_peer: acc.max_msgs,
            resilient_rounds: acc.resilient_rounds,
            rounds: acc.rounds,
            dropped_over_cap: acc.dropped_over_cap,
            honest_joins: acc.honest_joins,
            honest_join_failures: acc.honest_join_failures,
            component,
        });
        adopted
    }

    /// First height of b-epoch `e`: switch, clean up, maybe start a transformation.
    fn boundary(&mut self, e: u64, adopted: ParamProposal, r: Round) {
        let prev_transformation = self.epoch.transformation;
        if self.transition.as_ref().is_some_and(|t| t.epoch + 1 == e) {
            let t = self.transition.take().expect("checked");
            self.op_gen = t.new;
            let twins: Vec<NodeId> = {
                let mut v: Vec<NodeId> =
                    self.ov.nodes.iter().filter(|(_, n)| n.generation == t.old && n.twin).map(|(&id, _)| id).collect();
                v.sort_unstable();
                v
            };
            for &id in &twins {
                self.ov.remove_node(id);
            }
            self.counters.switches += 1;
            self.events.push(EventRecord {
                round: r,
                event: Event::Switch { epoch: e, generation: t.new, removed_twins: twins.len() as u64 },
            });
            self.cleanup_due = Some((e + 1, t.old));
        }
        if let Some((due, old)) = self.cleanup_due {
            if due == e {
                self.cleanup_due = None;
                self.cleanup(e, old, r);
            }
        }
        let committees = self.ov.gens[self.op_gen as usize].committees;
        let mut transformation = false;
        if adopted.change != DimChange::NoChange && !prev_transformation && adopted.committees != committees {
            let new = self.ov.add_generation(adopted.committees);
            for b in self.dir.iter_mut() {
                if b.phase == Phase::MiddleAged && b.serves(self.op_gen) {
                    b.generations.push(new);
                    b.split_state = true;
                }
            }
            match adopted.change {
                DimChange::Increase => self.counters.increases += 1,
                DimChange::Decrease => self.counters.decreases += 1,
                DimChange::NoChange => {}
            }
            self.events.push(EventRecord {
                round: r,
                event: Event::Transformation {
                    epoch: e,
                    from_committees: committees,
                    to_committees: adopted.committees,
                    generation: new,
                },
            });
            self.transition = Some(Transition { epoch: e, old: self.op_gen, new });
            transformation = true;
        }
        self.epoch = EpochAcc::new(e, r, true, committees, transformation);
    }

    /// Start of b-epoch `e` = transformation + 2: the old hypercube is gone.
    fn cleanup(&mut self, e: u64, old: u32, r: Round) {
        let mut ids: Vec<NodeId> =
            self.ov.nodes.iter().filter(|(_, n)| n.generation == old).map(|(&id, _)| id).collect();
        ids.sort_unstable();
        for &id in &ids {
            self.ov.remove_node(id);
        }
        let mut killed = 0;
        for b in self.dir.iter_mut() {
            if !b.serves(old) {
                continue;
            }
            if b.generations.len() == 1 {
                b.kill(r);
                killed += 1;
            } else {
                b.drop_generation(old);
                b.split_state = false;
            }
        }
        self.ov.gens[old as usize].retired = true;
        let h = self.chain.leading_height(r);
        self.expire(h);
        let scan = full_scan(&self.ov, self.op_gen, h);
        let stale = scan.stale_links + links_into_generation(&self.ov, old);
        self.counters.max_stale_links = self.counters.max_stale_links.max(stale);
        self.events.push(EventRecord {
            round: r,
            event: Event::Cleanup {
                epoch: e,
                generation: old,
                removed_nodes: ids.len() as u64,
                stale_links: stale,
                killed_buckets: killed,
            },
        });
    }

    fn expire(&mut self, h: BlockNumber) {
        while let Some(entry) = self.expiry.first_entry() {
            if *entry.key() > h {
                break;
            }
            for id in entry.remove() {
                self.ov.remove_node(id);
            }
        }
    }

    fn churn_step(&mut self, r: Round) {
        while let Some(ev) = self.churn.events.get(self.churn_pos).copied() {
            if ev.round > r {
                break;
            }
            self.churn_pos += 1;
            match ev.kind {
                ChurnKind::Join => {
                    let id = self.fresh_peer(true, r);
                    self.slot_peer.insert(ev.slot, id);
                }
                ChurnKind::Leave => {
                    let Some(id) = self.slot_peer.remove(&ev.slot) else { continue };
                    let p = self.ov.peer(id);
                    if p.alive && p.honest {
                        self.ov.remove_peer(id, r);
                        self.pools_dirty = true;
                    }
                }
            }
        }
    }

    fn byzantine_ids(&self) -> Vec<PeerId> {
        self.ov.alive_peers().filter(|p| !p.honest).map(|p| p.id).collect()
    }

    /// Keeps the Byzantine share at the largest count the bound allows, and
    /// runs the leave/rejoin rotation.
    fn adjust_byzantine(&mut self, r: Round) {
        let rho = self.p.byz_fraction;
        let honest = self.ov.alive_peers().filter(|p| p.honest).count() as f64;
        let target = (rho * honest / (1.0 - rho) + 1e-9).floor() as usize;
        let mut byz = self.byzantine_ids();
        while byz.len() > target {
            let id = byz.pop().expect("nonempty");
            self.ov.remove_peer(id, r);
            self.pools_dirty = true;
        }
        while byz.len() < target {
            byz.push(self.fresh_peer(false, r));
        }
        if let ByzantineStrategy::TargetCommitteeRejoin { rejoin_interval, .. } = &self.sc.adversary.strategy {
            let every = rejoin_interval.unwrap_or(self.d.bepoch_blocks * u64::from(self.p.block_interval) / 4).max(1);
            if r.is_multiple_of(every) && !byz.is_empty() {
                let oldest = byz.remove(0);
                self.ov.remove_peer(oldest, r);
                self.pools_dirty = true;
                byz.push(self.fresh_peer(false, r));
            }
        }
        let total = honest + byz.len() as f64;
        if byz.len() as f64 > rho * total + 1e-9 {
            self.halt(format!("Byzantine share {} of {total} peers exceeds the bound {rho}", byz.len()));
        }
    }

    fn deliver_directory(&mut self, r: Round, h: BlockNumber) {
        let inbox = std::mem::take(&mut self.dir_inbox);
        let mut idxs: Vec<BucketIndex> = inbox.keys().copied().collect();
        idxs.sort_unstable();
        let partial = match self.sc.adversary.strategy {
            ByzantineStrategy::UnderReportCommInfo { fraction } => Responder::Partial(fraction.clamp(0.0, 1.0)),
            ByzantineStrategy::PassiveFair => Responder::Honest,
            _ => Responder::Silent,
        };
        for idx in idxs {
            let reqs = &inbox[&idx];
            let Some(bucket) = self.dir.get_mut(idx) else {
                self.counters.dropped_phase += reqs.len() as u64;
                continue;
            };
            let ov = &self.ov;
            let puzzle = &self.puzzle;
            let chain = &self.chain;
            let live = |dn: &DirNode| dn.expiry_block > h && ov.peer(dn.owner).alive;
            let has_honest = bucket.dir_nodes.iter().any(|dn| live(dn) && ov.peer(dn.owner).honest);
            let verify = |proof: &NodeProof, g: u32, b: &Bucket| -> Result<CommitteeId, InvalidReason> {
                puzzle.check(proof, h, &|n| chain.block_hash(n))?;
                if !b.serves(g) {
                    return Err(InvalidReason::WrongCommittee);
                }
                Ok(puzzle.committee_of(proof.p_join, ov.gens[g as usize].committees))
            };
            let responder = |dn: &DirNode| {
                if !live(dn) {
                    Responder::Silent
                } else if ov.peer(dn.owner).honest {
                    Responder::Honest
                } else {
                    partial
                }
            };
            let valid = |n: NodeId| ov.nodes.get(&n).is_some_and(|x| x.record.expiry_block > h);
            let ctx = DirContext {
                cap: self.d.join_capacity,
                buckets: self.d.buckets,
                verify: &verify,
                responder: &responder,
                has_honest,
                valid: &valid,
            };
            let out = dir_round(bucket, reqs, &ctx);
            self.bucket_load = self.bucket_load.max(out.handled);
            self.dropped_this_round += out.dropped_over_cap;
            self.counters.dropped_over_cap += out.dropped_over_cap;
            self.counters.dropped_phase += out.dropped_phase;
            self.counters.dropped_invalid += out.dropped_invalid.len() as u64;
            for id in out.stored {
                if self.ov.nodes.contains_key(&id) {
                    self.ov.roster(id, r);
                }
                if let Some(pj) = self.pending.get_mut(&id) {
                    pj.registered = true;
                }
            }
            for reply in out.replies {
                for &owner in &reply.repliers {
                    self.traffic.add(r, owner, 1);
                }
                if let Some(pj) = self.pending.get_mut(&reply.to) {
                    self.traffic.add(r + 1, pj.owner, reply.repliers.len() as u32);
                    pj.answered.insert(reply.committee);
                    pj.learned.extend(reply.entries);
                }
            }
        }
    }

    /// Two rounds after a join started: union the replies and contact everyone learned.
    fn union_step(&mut self, r: Round) {
        let Some(ids) = self.unions_due.remove(&r) else { return };
        for id in ids {
            let Some(pj) = self.pending.remove(&id) else { continue };
            if !self.ov.nodes.contains_key(&id) {
                self.counters.joins.aborted += 1;
                continue;
            }
            let gen = &self.ov.gens[pj.gen as usize];
            let complete = pj.rel.iter().all(|&k| {
                gen.roster[k as usize].iter().all(|y| {
                    *y == id
                        || self.ov.nodes.get(y).is_none_or(|n| {
                            !n.honest || n.rostered.is_none_or(|t| t > pj.started + 1) || pj.learned.contains(y)
                        })
                })
            });
            let outcome = if !pj.registered {
                JoinOutcome::Unregistered
            } else if pj.answered.len() < pj.rel.len() {
                JoinOutcome::PartialJoin
            } else if !complete {
                JoinOutcome::MissedEntries
            } else {
                JoinOutcome::Success
            };
            let j = &mut self.counters.joins;
            match outcome {
                JoinOutcome::Success => j.success += 1,
                JoinOutcome::PartialJoin => j.partial_join += 1,
                JoinOutcome::MissedEntries => j.missed_entries += 1,
                JoinOutcome::Unregistered => j.unregistered += 1,
            }
            self.epoch.honest_joins += 1;
            if outcome != JoinOutcome::Success {
                self.epoch.honest_join_failures += 1;
                log::debug!("round {r}: join of {id:?} ended {outcome:?}");
            }
            let mut targets: Vec<NodeId> = pj.learned.into_iter().filter(|&y| y != id).collect();
            targets.sort_unstable();
            self.traffic.add(r, pj.owner, targets.len() as u32);
            self.accept_due.entry(r + 1).or_default().push((id, Some(targets)));
        }
    }

    fn accept_step(&mut self, r: Round) {
        let Some(list) = self.accept_due.remove(&r) else { return };
        for (id, targets) in list {
            let Some(n) = self.ov.node(id) else { continue };
            let (g, c) = (n.generation, n.committee());
            let targets = targets.unwrap_or_else(|| {
                let gen = &self.ov.gens[g as usize];
                relevant_committees(c, gen.dim)
                    .into_iter()
                    .flat_map(|k| gen.roster[k as usize].iter().copied())
                    .filter(|&y| y != id)
                    .collect()
            });
            for y in targets {
                let Some(yn) = self.ov.node(y) else { continue };
                let (yo, y_honest, y_committee) = (yn.owner(), yn.honest, yn.committee());
                self.ov.connect(id, y);
                self.traffic.add(r, yo, 1);
                if y_honest && y_committee == c {
                    let view = self.chain.view_height(self.ov.peer(yo).lag, r);
                    let (e, phase) = self.clock.at(view);
                    if phase == EpochPhase::Phase1 {
                        let yn = self.ov.nodes.get_mut(&y).expect("present");
                        if yn.seen_epoch != e {
                            yn.seen_epoch = e;
                            yn.seen_joins.clear();
                        }
                        yn.seen_joins.push(id);
                    }
                }
            }
            self.ov.make_member(id, r);
        }
    }

    /// Size estimation for the current b-epoch: selected committees flood
    /// their phase-1 join sets over honest member nodes.
    fn estimate(&mut self, r: Round) {
        let e = self.epoch.epoch;
        let g = self.op_gen;
        let committees = self.ov.gens[g as usize].committees;
        let Some(hash) = self.chain.block_hash(self.clock.phase1_end(e)) else { return };
        let count = if self.p.recovery_estimation { self.d.recovery_committees } else { 1 };
        let kappa = self.puzzle.oracle.kappa();
        let selected: Vec<CommitteeId> = (0..u64::from(count))
            .map(|i| selected_committee(self.puzzle.oracle.selector(hash, i), kappa, committees))
            .collect();
        let mut ids: Vec<NodeId> = self
            .ov
            .nodes
            .iter()
            .filter(|(_, n)| n.generation == g && n.honest && n.member)
            .map(|(&id, _)| id)
            .collect();
        ids.sort_unstable();
        let index: FxHashMap<NodeId, u32> = ids.iter().enumerate().map(|(i, &id)| (id, i as u32)).collect();
        let mut uf = UnionFind::new(ids.len());
        for (i, id) in ids.iter().enumerate() {
            for m in &self.ov.nodes[id].adj {
                if let Some(&j) = index.get(m) {
                    uf.union(i as u32, j);
                }
            }
        }
        // Union of phase-1 joins per (component, selected committee).
        let mut unions: FxHashMap<(u32, usize), FxHashSet<NodeId>> = FxHashMap::default();
        let mut sources: Vec<Vec<u32>> = vec![Vec::new(); selected.len()];
        for (si, &s) in selected.iter().enumerate() {
            for y in &self.ov.gens[g as usize].roster[s as usize] {
                let Some(&i) = index.get(y) else { continue };
                sources[si].push(i);
                let root = uf.find(i);
                let set = unions.entry((root, si)).or_default();
                let n = &self.ov.nodes[y];
                if n.seen_epoch == e {
                    set.extend(n.seen_joins.iter().copied());
                }
            }
        }
        let phase1_round = self.epoch.phase1_end_round.unwrap_or(r);
        let rate = self.d.success_prob * self.d.alpha1;
        let mut values = Vec::new();
        let mut stalled = 0;
        let mut estimates = FxHashMap::default();
        let peers: Vec<(PeerId, u64, bool, Vec<NodeId>)> =
            self.ov.alive_peers().map(|p| (p.id, p.lag, p.honest, p.nodes.clone())).collect();
        for (pid, lag, honest, nodes) in peers {
            let mut roots: Vec<u32> = nodes.iter().filter_map(|n| index.get(n)).map(|&i| uf.find(i)).collect();
            roots.sort_unstable();
            roots.dedup();
            let mut best: Option<usize> = None;
            for si in 0..selected.len() {
                let sets: Vec<&FxHashSet<NodeId>> = roots.iter().filter_map(|&root| unions.get(&(root, si))).collect();
                let h = match sets.as_slice() {
                    [] => continue,
                    [one] => one.len(),
                    many => many.iter().flat_map(|s| s.iter()).collect::<FxHashSet<_>>().len(),
                };
                best = Some(best.map_or(h, |b| b.max(h)));
            }
            let est = match best {
                None => Estimate::Stalled,
                Some(h) => estimate_size(h, committees, self.p.mu_b, rate),
            };
            let Some(value) = est.value() else {
                if honest {
                    stalled += 1;
                }
                continue;
            };
            let proposal = proposal_for(value, committees, self.p.lambda_s, self.p.drift_factor, self.max_committees);
            estimates.insert(pid, (phase1_round + lag + 3 * self.d.delta, value, proposal));
            if honest {
                values.push((value, proposal));
            }
        }
        values.sort_by(|a, b| a.0.total_cmp(&b.0));
        let acc = &mut self.epoch;
        acc.estimates = estimates;
        acc.stalled = stalled;
        if !values.is_empty() {
            let (median, proposal) = values[values.len() / 2];
            acc.estimate = Some(median);
            acc.estimate_min = Some(values[0].0);
            acc.estimate_max = Some(values[values.len() - 1].0);
            acc.consensus = Some(proposal);
            acc.joins_seen = (median * rate / (self.p.mu_b * f64::from(committees))).round() as u64;
        }
        self.flood_traffic(r, &ids, &index, &sources);
    }

    /// Message counts of the estimation flood: every node relays its current
    /// union to all neighbours once per round in which it learns something new.
    fn flood_traffic(&mut self, r: Round, ids: &[NodeId], index: &FxHashMap<NodeId, u32>, sources: &[Vec<u32>]) {
        let mut relay: Vec<Vec<u32>> = vec![Vec::new(); ids.len()];
        for srcs in sources {
            let mut dist = vec![u32::MAX; ids.len()];
            let mut q = VecDeque::new();
            for &s in srcs {
                if dist[s as usize] == u32::MAX {
                    dist[s as usize] = 0;
                    q.push_back(s);
                }
            }
            while let Some(x) = q.pop_front() {
                let dx = dist[x as usize];
                for m in &self.ov.nodes[&ids[x as usize]].adj {
                    if let Some(&j) = index.get(m) {
                        if dist[j as usize] == u32::MAX {
                            dist[j as usize] = dx + 1;
                            q.push_back(j);
                        }
                    }
                }
            }
            for (i, &d) in dist.iter().enumerate() {
                if d != u32::MAX && !relay[i].contains(&d) {
                    relay[i].push(d);
                }
            }
        }
        for (i, rounds) in relay.iter().enumerate() {
            if rounds.is_empty() {
                continue;
            }
            let n = &self.ov.nodes[&ids[i]];
            let owner = n.owner();
            let deg = n.adj.len() as u32;
            let nbrs: Vec<PeerId> = n.adj.iter().filter_map(|m| self.ov.nodes.get(m)).map(|x| x.owner()).collect();
            for &d in rounds {
                let t = r + u64::from(d);
                self.traffic.add(t, owner, deg);
                for &o in &nbrs {
                    self.traffic.add(t + 1, o, 1);
                }
            }
        }
    }

    fn mine(&mut self, r: Round) {
        let b0 = self.chain.intro_height(r);
        let hash = self.chain.block_hash(b0).expect("introductory block exists");
        let peers: Vec<(PeerId, NetAddr, bool, u64)> =
            self.ov.alive_peers().map(|p| (p.id, p.addr, p.honest, p.lag)).collect();
        for (pid, addr, honest, lag) in peers {
            let rng = if honest { &mut self.rng_mine } else { &mut self.rng_byz };
            let Some(proof) = self.puzzle.mine_attempt(rng, addr, b0, hash) else { continue };
            if honest {
                self.start_node(pid, proof, r, true);
                continue;
            }
            let view = self.chain.view_height(lag, r);
            let (_, phase) = self.clock.at(view);
            match &self.sc.adversary.strategy {
                ByzantineStrategy::WithholdPhase1Mining if phase == EpochPhase::Phase1 => {}
                ByzantineStrategy::AllInPhase1 if phase == EpochPhase::Phase2 => {}
                ByzantineStrategy::PrecomputeBurst { .. } => self.held.push((pid, proof)),
                ByzantineStrategy::TargetCommitteeRejoin { targets, .. } => {
                    let gen = &self.ov.gens[self.op_gen as usize];
                    let c = self.puzzle.committee_of(proof.p_join, gen.committees);
                    let hit = if targets.is_empty() {
                        c == 0 || c.count_ones() == 1
                    } else {
                        targets.iter().any(|&t| t % gen.committees == c)
                    };
                    if hit {
                        self.start_node(pid, proof, r, false);
                    }
                }
                _ => self.start_node(pid, proof, r, false),
            }
        }
    }

    /// Creates the node (or both twins during a transformation) and sends
    /// the first JOIN messages.
    fn start_node(&mut self, owner: PeerId, proof: NodeProof, r: Round, honest: bool) {
        let gens = self.gens_for_mining();
        let twin = gens.len() > 1;
        for g in gens {
            let committees = self.ov.gens[g as usize].committees;
            let c = self.puzzle.committee_of(proof.p_join, committees);
            let expiry = proof.entry.block_number + self.d.node_lifetime;
            let rec = NodeRecord {
                entry: proof.entry,
                p_join: proof.p_join,
                committee: c,
                is_directory: false,
                expiry_block: expiry,
                owner,
            };
            let id = self.ov.create_node(rec, g, twin);
            self.expiry.entry(expiry).or_default().push(id);
            if honest {
                self.send_join(id, owner, proof, g, c, r);
            } else {
                self.send_byzantine_join(id, owner, proof, g, c, r);
            }
        }
    }

    fn joining_to_bucket(&mut self, idx: BucketIndex, req: Request, copies: u32, r: Round) -> u32 {
        let Some(b) = self.dir.get(idx) else { return 0 };
        if !b.serves(req.generation) || b.dir_nodes.is_empty() {
            return 0;
        }
        for dn in &b.dir_nodes {
            self.traffic.add(r + 1, dn.owner, copies);
        }
        let sent = b.dir_nodes.len() as u32 * copies;
        let inbox = self.dir_inbox.entry(idx).or_default();
        for _ in 0..copies {
            inbox.push(req.clone());
        }
        sent
    }

    fn send_join(&mut self, id: NodeId, owner: PeerId, proof: NodeProof, g: u32, c: CommitteeId, r: Round) {
        self.joins_this_round += 1;
        self.counters.joins.honest_started += 1;
        let b0 = proof.entry.block_number;
        let geo = self.dir.geo;
        let joining = Request { node: id, proof, generation: g, kind: RequestKind::Joining };
        let mut sent = 0;
        if let Some(idx) = geo.middle_aged_for(c, b0) {
            sent += self.joining_to_bucket(idx, joining.clone(), 1, r);
        }
        // A bucket that completed within the last mu_s blocks may not yet be
        // middle-aged for every peer; the one it displaces is still storing
        // during its grace period, so it gets a copy too.
        let done = geo.complete(b0);
        if done > u64::from(geo.buckets) {
            let b1 = done - 1;
            let last = (b1 + 1) * geo.bucket_size - 1;
            if b0 - last <= self.p.mu_s && geo.slot(b1) == committee_to_bucket(c, geo.buckets) {
                sent += self.joining_to_bucket(b1 - u64::from(geo.buckets), joining, 1, r);
            }
        }
        let dim = self.ov.gens[g as usize].dim;
        let rel = relevant_committees(c, dim);
        for &k in &rel {
            for idx in geo.responsible_for(k, b0) {
                let Some(b) = self.dir.get(idx) else { continue };
                if !b.serves(g) || b.dir_nodes.is_empty() {
                    continue;
                }
                let positions =
                    self.puzzle.sample_directory_nodes(proof.p_join, idx, b.dir_nodes.len(), self.d.samples_per_bucket);
                for &pos in &positions {
                    let o = b.dir_nodes[pos as usize].owner;
                    self.traffic.add(r + 1, o, 1);
                }
                sent += positions.len() as u32;
                self.dir_inbox.entry(idx).or_default().push(Request {
                    node: id,
                    proof,
                    generation: g,
                    kind: RequestKind::ReqInfo { committee: k, positions },
                });
            }
        }
        self.traffic.add(r, owner, sent);
        self.pending.insert(
            id,
            PendingJoin {
                owner,
                started: r,
                gen: g,
                rel,
                learned: FxHashSet::default(),
                answered: FxHashSet::default(),
                registered: false,
            },
        );
        self.unions_due.entry(r + 2).or_default().push(id);
    }

    /// Byzantine joiners register and then link to every node they can find.
    fn send_byzantine_join(&mut self, id: NodeId, owner: PeerId, proof: NodeProof, g: u32, c: CommitteeId, r: Round) {
        self.counters.joins.byzantine_started += 1;
        let copies = match self.sc.adversary.strategy {
            ByzantineStrategy::FloodJoinRequests { rate } => rate.max(1),
            _ => 1,
        };
        let joining = Request { node: id, proof, generation: g, kind: RequestKind::Joining };
        let mut sent = 0;
        if let Some(idx) = self.dir.geo.middle_aged_for(c, proof.entry.block_number) {
            sent += self.joining_to_bucket(idx, joining, copies, r);
        }
        self.traffic.add(r, owner, sent);
        self.accept_due.entry(r + 3).or_default().push((id, None));
    }

    fn adversary_step(&mut self, r: Round, h: BlockNumber) {
        if let ByzantineStrategy::PrecomputeBurst { window } = self.sc.adversary.strategy {
            let window = window.max(1);
            let intro = self.chain.intro_height(r);
            let due = intro.is_multiple_of(window) && intro != self.chain.intro_height(r - 1);
            if due && !self.held.is_empty() {
                let held = std::mem::take(&mut self.held);
                for (pid, proof) in held {
                    let fresh = intro - proof.entry.block_number < self.p.mu_s;
                    if !self.ov.peer(pid).alive || !fresh {
                        self.counters.suppressed_byzantine += 1;
                        continue;
                    }
                    self.start_node(pid, proof, r, false);
                }
            }
        }
        if let Some(spec) = self.sc.catastrophe.clone() {
            if spec.round == r {
                self.inject_catastrophe(r, h, spec.eps, spec.delta, spec.mode);
            }
        }
    }

    fn catastrophe_view(&self, h: BlockNumber) -> (Vec<Vec<u32>>, Vec<Vec<u32>>) {
        let stats = self.ov.committee_stats(self.op_gen);
        let honest_peers: Vec<Vec<u32>> = stats
            .iter()
            .map(|s| {
                let mut v: Vec<u32> = s.honest_peers.keys().map(|p| p.0).collect();
                v.sort_unstable();
                v
            })
            .collect();
        let bucket_honest = self
            .dir
            .geo
            .newest(h, self.d.active_buckets)
            .filter_map(|i| self.dir.get(i))
            .map(|b| {
                let mut v: Vec<u32> = b
                    .dir_nodes
                    .iter()
                    .filter(|dn| dn.expiry_block > h)
                    .map(|dn| self.ov.peer(dn.owner))
                    .filter(|p| p.alive && p.honest)
                    .map(|p| p.id.0)
                    .collect();
                v.sort_unstable();
                v.dedup();
                v
            })
            .collect();
        (honest_peers, bucket_honest)
    }

    fn catastrophe_input<'a>(
        &self,
        honest_peers: &'a [Vec<u32>],
        bucket_honest: &'a [Vec<u32>],
        eps: f64,
        delta: f64,
        mode: CorruptionMode,
    ) -> CatastropheInput<'a> {
        let honest_total = self.ov.alive_peers().filter(|p| p.honest).count() as u32;
        let total = self.ov.alive_peers().count() as u32;
        CatastropheInput {
            committees: self.ov.gens[self.op_gen as usize].committees,
            honest_peers,
            bucket_honest,
            total_peers: total,
            byzantine_peers: total - honest_total,
            honest_total,
            safe_floor: self.d.safe_floor,
            eps,
            delta,
            mu_n: self.p.recovery_mu_n,
            a: self.p.recovery_a,
            b: self.p.recovery_b,
            max_diameter: (2.0 * self.d.log_n).floor() as u32,
            mode,
        }
    }

    fn inject_catastrophe(
        &mut self,
        r: Round,
        h: BlockNumber,
        eps: Option<f64>,
        delta: Option<f64>,
        mode: CorruptionMode,
    ) {
        let eps = eps.unwrap_or(self.p.recovery_eps);
        let delta = delta.unwrap_or(self.p.recovery_delta);
        let (hp, bh) = self.catastrophe_view(h);
        let report = match select_catastrophe(&self.catastrophe_input(&hp, &bh, eps, delta, mode)) {
            Ok(rep) => rep,
            Err(e) => {
                log::warn!("round {r}: {e}");
                self.events.push(EventRecord {
                    round: r,
                    event: Event::CatastropheRejected { round: r, reason: e.to_string() },
                });
                return;
            }
        };
        let rho = self.p.byz_fraction;
        for &v in &report.victims {
            let id = PeerId(v);
            let honest_left = self.ov.alive_peers().filter(|p| p.honest).count() as f64 - 1.0;
            let byz = self.byzantine_ids().len() as f64;
            let can_turn = mode == CorruptionMode::TurnByzantine && byz + 1.0 <= rho * (honest_left + byz + 1.0);
            if can_turn {
                self.ov.corrupt_peer(id);
            } else {
                self.ov.remove_peer(id, r);
            }
        }
        self.pools_dirty = true;
        // Independent re-check of the surviving world.
        let (hp2, bh2) = self.catastrophe_view(h);
        let post = self.catastrophe_input(&hp2, &bh2, eps, delta, mode);
        let none = vec![false; self.ov.peers.len()];
        let verified = verify_catastrophe(&post, &none).is_ok();
        self.catastrophe_round = Some(r);
        self.events.push(EventRecord { round: r, event: Event::Catastrophe { round: r, report, verified } });
    }

    fn observe(&mut self, r: Round, h: BlockNumber) {
        let g = self.op_gen;
        let violation = self.ov.tracked_violation(g);
        let resilient = violation.is_none();
        let isolated = self.ov.isolated(g);
        let counts = self.traffic.take(r);
        let ov = &self.ov;
        let max_msgs = counts
            .iter()
            .enumerate()
            .filter(|&(i, _)| ov.peers.get(i).is_some_and(|p| p.alive && p.honest))
            .map(|(_, &c)| c)
            .max()
            .unwrap_or(0);
        let bw_ok = u64::from(max_msgs) <= self.d.bandwidth_cap;
        let mut min_dir = u32::MAX;
        for i in self.dir.geo.newest(h, self.d.active_buckets) {
            let n = self.dir.get(i).map_or(0, |b| {
                b.dir_nodes
                    .iter()
                    .filter(|dn| dn.expiry_block > h && ov.peer(dn.owner).alive && ov.peer(dn.owner).honest)
                    .count()
            });
            min_dir = min_dir.min(n as u32);
        }
        let dir_robust = min_dir >= self.d.dir_floor;
        let stats = ov.committee_stats(g);
        let min_h = stats.iter().map(|s| s.honest_peers.len() as u32).min().unwrap_or(0);
        let max_h = stats.iter().map(|s| s.honest_peers.len() as u32).max().unwrap_or(0);
        let max_nodes = stats.iter().map(|s| s.members).max().unwrap_or(0);
        let mut max_per_peer = 0;
        let mut alive = 0u32;
        let mut honest_alive = 0u32;
        for p in ov.alive_peers() {
            alive += 1;
            honest_alive += u32::from(p.honest);
            let n = p.nodes.iter().filter(|id| ov.nodes.get(id).is_some_and(|x| x.generation == g)).count() as u32;
            max_per_peer = max_per_peer.max(n);
        }
        let committees = ov.gens[g as usize].committees;
        let s = f64::from(self.p.lambda_s);
        let stable = (f64::from(committees) / s..=s * f64::from(committees)).contains(&f64::from(alive));

        let c = &mut self.counters;
        c.resilient_rounds += u64::from(resilient);
        c.isolated_rounds += u64::from(isolated > 0);
        c.dir_robust_rounds += u64::from(dir_robust);
        c.min_dir_honest = c.min_dir_honest.min(min_dir);
        c.max_msgs = c.max_msgs.max(max_msgs);
        c.max_bucket_load = c.max_bucket_load.max(self.bucket_load);
        c.max_nodes_per_peer = c.max_nodes_per_peer.max(max_per_peer);
        let acc = &mut self.epoch;
        acc.rounds += 1;
        acc.resilient_rounds += u64::from(resilient);
        acc.stable &= stable;
        acc.bandwidth_ok &= bw_ok;
        acc.max_msgs = acc.max_msgs.max(max_msgs);
        acc.dropped_over_cap += self.dropped_this_round;
        if self.clock.at(h) == (acc.epoch, EpochPhase::Phase1) {
            acc.size_sum += f64::from(alive);
            acc.size_rounds += 1;
        }
        self.resilient_by_round.push(resilient);

        let every = self.sc.engine.verify_every;
        if every > 0 && r.is_multiple_of(every) {
            self.counters.tracker_checks += 1;
            let scan = full_scan(&self.ov, g, h);
            if scan.violation != violation || scan.isolated != isolated {
                self.halt(format!(
                    "resilience tracker disagrees with full scan: tracked {violation:?}/{isolated}, scanned {:?}/{}",
                    scan.violation, scan.isolated
                ));
            }
        }
        let every = self.sc.engine.state_hash_every;
        if every > 0 && r.is_multiple_of(every) {
            let hash = self.state_hash();
            self.state_hashes.push((r, hash));
        }
        if self.sc.engine.round_records {
            self.rounds.push(RoundReport {
                round: r,
                height: h,
                epoch: self.clock.epoch_of(h),
                committees,
                peers: alive,
                honest_peers: honest_alive,
                partition_resilient: resilient,
                violation,
                isolated,
                max_msgs_per_peer: max_msgs,
                directory_robust: dir_robust,
                min_dir_honest: min_dir,
                min_honest_per_committee: min_h,
                max_honest_per_committee: max_h,
                max_nodes_per_committee: max_nodes,
                max_nodes_per_peer: max_per_peer,
                joins_started: self.joins_this_round,
                max_bucket_load: self.bucket_load,
                dropped_over_cap: self.dropped_this_round,
            });
        }
    }

    /// Digest of the ground truth: peers, nodes, memberships and degrees.
    pub fn state_hash(&self) -> String {
        let mut h = Xxh3::new();
        h.update(&self.round.to_le_bytes());
        h.update(&self.chain.current_height().to_le_bytes());
        h.update(&self.op_gen.to_le_bytes());
        for p in &self.ov.peers {
            h.update(&[u8::from(p.alive), u8::from(p.honest)]);
            h.update(&(p.nodes.len() as u32).to_le_bytes());
        }
        let mut ids: Vec<&NodeId> = self.ov.nodes.keys().collect();
        ids.sort_unstable();
        for id in ids {
            let n = &self.ov.nodes[id];
            h.update(&id.0.to_le_bytes());
            h.update(&n.generation.to_le_bytes());
            h.update(&n.committee().to_le_bytes());
            h.update(&[u8::from(n.member), u8::from(n.honest)]);
            h.update(&(n.adj.len() as u32).to_le_bytes());
        }
        format!("{:016x}", h.digest())
    }

    pub fn round(&self) -> Round {
        self.round
    }

    pub fn overlay(&self) -> &Overlay {
        &self.ov
    }

    pub fn chain(&self) -> &ChainOracle {
        &self.chain
    }

    pub fn directory(&self) -> &Directory {
        &self.dir
    }

    pub fn derived(&self) -> &Derived {
        &self.d
    }

    pub fn operating_generation(&self) -> u32 {
        self.op_gen
    }

    pub fn churn_schedule(&self) -> &ChurnSchedule {
        &self.churn
    }

    pub fn finish(mut self) -> Trace {
        let r = self.round;
        self.finalize_epoch(r + 1, false);
        let header = Header {
            tool: TOOL.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            scenario: self.sc.name.clone(),
            scenario_hash: self.sc.hash(),
            seed: self.seed,
        };
        let synced: Vec<f64> = self.epochs.iter().filter(|e| e.synchronized).filter_map(|e| e.ratio).collect();
        let complete: Vec<&EpochReport> = self.epochs.iter().filter(|e| e.complete).collect();
        let mut bounds: Vec<Round> = complete.iter().map(|e| e.start_round).collect();
        if let Some(last) = complete.last() {
            bounds.push(last.end_round + 1);
        }
        let resilient = &self.resilient_by_round;
        let recovery_epochs = self.catastrophe_round.and_then(|inj| {
            crate::analyzer::measure_recovery(
                &bounds,
                &|x| resilient.get(x as usize).copied().unwrap_or(false),
                Some(inj),
            )
            .ok()
            .flatten()
        });
        let c = &self.counters;
        let summary = Summary {
            rounds: r,
            final_height: self.chain.current_height(),
            epochs_measured: complete.len() as u64,
            resilient_rounds: c.resilient_rounds,
            resilience_fraction: if r == 0 { 1.0 } else { c.resilient_rounds as f64 / r as f64 },
            isolated_rounds: c.isolated_rounds,
            max_msgs_per_peer: c.max_msgs,
            bandwidth_cap: self.d.bandwidth_cap,
            directory_robust_rounds: c.dir_robust_rounds,
            min_dir_honest: if c.min_dir_honest == u32::MAX { 0 } else { c.min_dir_honest },
            joins: c.joins.clone(),
            ratio_min: synced.iter().copied().reduce(f64::min),
            ratio_max: synced.iter().copied().reduce(f64::max),
            synchronized_epochs: self.epochs.iter().filter(|e| e.synchronized).count() as u64,
            stable_epochs: complete.iter().filter(|e| e.stable).count() as u64,
            increases: c.increases,
            decreases: c.decreases,
            switches: c.switches,
            max_stale_links_at_cleanup: c.max_stale_links,
            dropped_over_cap: c.dropped_over_cap,
            dropped_invalid: c.dropped_invalid,
            dropped_phase: c.dropped_phase,
            max_bucket_load: c.max_bucket_load,
            join_capacity: self.d.join_capacity,
            max_nodes_per_peer: c.max_nodes_per_peer,
            peer_node_cap: self.d.peer_node_cap,
            final_peers: self.ov.alive_peers().count() as u32,
            final_committees: self.ov.gens[self.op_gen as usize].committees,
            postponed_leaves: self.churn.postponed_leaves,
            suppressed_byzantine: c.suppressed_byzantine,
            producer_bias_clamped: self.chain.stats.clamped_bias_requests,
            tracker_checks: c.tracker_checks,
            recovery_epochs,
            catastrophe_round: self.catastrophe_round,
            breach: self.breach.clone(),
            state_hash: self.state_hash(),
        };
        Trace {
            header,
            rounds: self.rounds,
            epochs: self.epochs,
            events: self.events,
            state_hashes: self.state_hashes,
            summary,
        }
    }
}
