//! Checkers that recompute the protocol's guarantees from ground truth, the
//! parameter calculator, and recovery measurement.

use crate::model::{BlockNumber, CommitteeId, NodeId, PeerId, Round};
use crate::overlay::{Overlay, PrThresholds, PrViolation};
use crate::params::ParamError;
use rustc_hash::{FxHashMap, FxHashSet};
use serde::Serialize;
use std::collections::VecDeque;
use thiserror::Error;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScanReport {
    pub violation: Option<PrViolation>,
    pub isolated: u64,
    /// Connection entries whose target is gone, expired, or of another generation.
    pub stale_links: u64,
    /// Valid nodes past their lifetime.
    pub overdue_nodes: u64,
    pub min_honest_peers: u32,
    pub max_honest_peers: u32,
    pub max_nodes: u32,
}

/// Recomputes every partition-resilience clause for `generation` by walking
/// the whole overlay. Shares no state with the incremental tracker.
pub fn full_scan(ov: &Overlay, generation: u32, height: BlockNumber) -> ScanReport {
    let t: PrThresholds = ov.thresholds;
    let committees = ov.gens[generation as usize].committees as usize;
    let dim = ov.gens[generation as usize].dim;
    let mut by_committee: Vec<Vec<NodeId>> = vec![Vec::new(); committees];
    let mut stale = 0;
    let mut overdue = 0;
    let mut ids: Vec<&NodeId> = ov.nodes.keys().collect();
    ids.sort_unstable();
    for id in ids {
        let n = &ov.nodes[id];
        if n.record.expiry_block <= height {
            overdue += 1;
        }
        for m in &n.adj {
            match ov.nodes.get(m) {
                Some(x) if x.generation == n.generation && x.record.expiry_block > height => {}
                _ => stale += 1,
            }
        }
        if n.generation == generation && n.member {
            by_committee[n.record.committee as usize].push(*id);
        }
    }
    let honest_member =
        |id: &NodeId| ov.nodes.get(id).is_some_and(|n| n.honest && n.member && n.generation == generation);
    let mut violation = None;
    let (mut lo, mut hi, mut max_nodes) = (u32::MAX, 0, 0);
    for (c, members) in by_committee.iter().enumerate() {
        let peers: FxHashSet<PeerId> =
            members.iter().filter(|m| honest_member(m)).map(|m| ov.nodes[m].record.owner).collect();
        let h = peers.len() as u32;
        lo = lo.min(h);
        hi = hi.max(h);
        max_nodes = max_nodes.max(members.len() as u32);
        if violation.is_none() {
            if h < t.honest_floor {
                violation = Some(PrViolation::TooFewHonestPeers { committee: c as CommitteeId, honest_peers: h });
            } else if members.len() as u32 > t.committee_cap {
                violation =
                    Some(PrViolation::TooManyNodes { committee: c as CommitteeId, nodes: members.len() as u32 });
            }
        }
    }
    if violation.is_none() {
        'outer: for (c, members) in by_committee.iter().enumerate() {
            let honest: Vec<NodeId> = members.iter().copied().filter(|m| honest_member(m)).collect();
            for (i, a) in honest.iter().enumerate() {
                for b in &honest[i + 1..] {
                    if !ov.nodes[a].adj.contains(b) {
                        violation = Some(PrViolation::MissingIntraEdge { committee: c as CommitteeId });
                        break 'outer;
                    }
                }
            }
        }
    }
    let mut isolated = 0;
    let mut weak = false;
    for members in &by_committee {
        for a in members.iter().filter(|m| honest_member(m)) {
            let n = &ov.nodes[a];
            let mut per_dim = vec![0u32; dim as usize];
            let mut any = false;
            for m in n.adj.iter().filter(|m| honest_member(m)) {
                any = true;
                let other = ov.nodes[m].record.committee;
                if other != n.record.committee {
                    per_dim[(other ^ n.record.committee).trailing_zeros() as usize] += 1;
                }
            }
            if !any {
                isolated += 1;
            }
            if per_dim.iter().any(|&d| d < t.conn_floor) {
                weak = true;
            }
        }
    }
    if violation.is_none() && weak {
        violation = Some(PrViolation::WeakCrossLink);
    }
    ScanReport {
        violation,
        isolated,
        stale_links: stale,
        overdue_nodes: overdue,
        min_honest_peers: if committees == 0 { 0 } else { lo },
        max_honest_peers: hi,
        max_nodes,
    }
}

pub fn check_partition_resilience(ov: &Overlay, generation: u32, height: BlockNumber) -> (bool, Option<PrViolation>) {
    let r = full_scan(ov, generation, height);
    (r.violation.is_none(), r.violation)
}

/// Connection entries that point into `generation` from anywhere.
pub fn links_into_generation(ov: &Overlay, generation: u32) -> u64 {
    ov.nodes
        .values()
        .map(|n| n.adj.iter().filter(|m| ov.nodes.get(m).is_none_or(|x| x.generation == generation)).count() as u64)
        .sum::<u64>()
        + ov.nodes.values().filter(|n| n.generation == generation).count() as u64
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ComponentStats {
    pub committees_with_honest: u32,
    pub largest_component: u32,
    pub diameter: u32,
    pub components: u32,
}

/// Components of the committee graph restricted to honest member nodes: two
/// adjacent committees are linked if some honest pair across them is connected.
pub fn honest_committee_graph(ov: &Overlay, generation: u32) -> ComponentStats {
    let g = &ov.gens[generation as usize];
    let n = g.committees as usize;
    let mut present = vec![false; n];
    let mut links: Vec<FxHashSet<CommitteeId>> = vec![FxHashSet::default(); n];
    for node in ov.nodes.values().filter(|x| x.generation == generation && x.honest && x.member) {
        let c = node.record.committee;
        present[c as usize] = true;
        for m in &node.adj {
            if let Some(x) = ov.nodes.get(m) {
                if x.honest && x.member && x.record.committee != c {
                    links[c as usize].insert(x.record.committee);
                }
            }
        }
    }
    let bfs = |src: usize| -> Vec<u32> {
        let mut d = vec![u32::MAX; n];
        d[src] = 0;
        let mut q = VecDeque::from([src]);
        while let Some(c) = q.pop_front() {
            for &x in &links[c] {
                if d[x as usize] == u32::MAX {
                    d[x as usize] = d[c] + 1;
                    q.push_back(x as usize);
                }
            }
        }
        d
    };
    let mut seen = vec![false; n];
    let mut stats =
        ComponentStats { committees_with_honest: present.iter().filter(|&&p| p).count() as u32, ..Default::default() };
    let mut largest: Vec<usize> = Vec::new();
    for c in 0..n {
        if !present[c] || seen[c] {
            continue;
        }
        stats.components += 1;
        let d = bfs(c);
        let comp: Vec<usize> = (0..n).filter(|&x| d[x] != u32::MAX).collect();
        for &x in &comp {
            seen[x] = true;
        }
        if comp.len() > largest.len() {
            largest = comp;
        }
    }
    stats.largest_component = largest.len() as u32;
    // Exact diameter for small graphs, sampled sources above 2^14 committees.
    let step = if largest.len() > 1 << 14 { largest.len() / 256 } else { 1 };
    for &c in largest.iter().step_by(step.max(1)) {
        let d = bfs(c);
        stats.diameter = stats.diameter.max(largest.iter().map(|&x| d[x]).max().unwrap_or(0));
    }
    stats
}

/// Largest per-peer message count among honest peers this round.
pub fn check_bandwidth(counts: &[u32], honest: &dyn Fn(usize) -> bool, cap: u64) -> (u32, bool) {
    let max = counts.iter().enumerate().filter(|&(i, _)| honest(i)).map(|(_, &c)| c).max().unwrap_or(0);
    (max, u64::from(max) <= cap)
}

/// Bounds on the estimate ratio of a synchronized b-epoch.
pub fn estimate_ratio_bounds(mu_b: f64, delta_err: f64, rho: f64) -> (f64, f64) {
    (1.0 / (2.0 * mu_b * (1.0 + delta_err)), 2.0 * mu_b / ((1.0 - rho) * (1.0 - delta_err)))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ParamTable {
    pub max_peers: u64,
    pub block_interval: f64,
    pub halflife: f64,
    pub buckets: u64,
    pub bucket_size: u64,
    pub active_buckets: u64,
    pub node_lifetime: u64,
    pub dir_lifetime: u64,
    /// Expected successful mining attempts per peer per round.
    pub join_rate: f64,
    pub join_capacity: u64,
    /// `node_lifetime - buckets * bucket_size`.
    pub lifetime_slack: i64,
    /// Directory join capacity per round minus the worst-case demand.
    pub capacity_slack: f64,
    pub halflife_floor: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SolverInput {
    pub max_peers: u64,
    pub block_interval: f64,
    pub byz_fraction: f64,
    pub join_capacity: Option<u64>,
    pub c_alpha: f64,
    pub lambda_d: f64,
    pub lambda_l: f64,
    pub lambda_dl: f64,
    pub lambda_n: f64,
}

impl Default for SolverInput {
    fn default() -> Self {
        let p = crate::params::SimParams::default();
        SolverInput {
            max_peers: p.max_peers,
            block_interval: f64::from(p.block_interval),
            byz_fraction: p.byz_fraction,
            join_capacity: None,
            c_alpha: p.c_alpha,
            lambda_d: p.lambda_d,
            lambda_l: p.lambda_l,
            lambda_dl: p.lambda_dl,
            lambda_n: p.lambda_n,
        }
    }
}

fn ceil_u(x: f64) -> u64 {
    (x - 1e-9).ceil().max(0.0) as u64
}

/// Half-life and directory layout for a target size. Lifetimes are raised to
/// the smallest values that fit a directory (and an active directory) inside
/// them; the join-capacity constraint is the one that can genuinely fail.
pub fn solve_parameters(input: &SolverInput) -> Result<ParamTable, ParamError> {
    if input.max_peers < 2 {
        return Err(ParamError::Degenerate(format!("max_peers = {} has no logarithm to scale by", input.max_peers)));
    }
    for (f, v) in [
        ("block_interval", input.block_interval),
        ("c_alpha", input.c_alpha),
        ("lambda_d", input.lambda_d),
        ("lambda_l", input.lambda_l),
        ("lambda_dl", input.lambda_dl),
        ("lambda_n", input.lambda_n),
    ] {
        if !(v.is_finite() && v > 0.0) {
            return Err(ParamError::OutOfRange { field: f, value: v.to_string(), expected: "> 0" });
        }
    }
    if !(0.0..0.5).contains(&input.byz_fraction) {
        return Err(ParamError::OutOfRange {
            field: "byz_fraction",
            value: input.byz_fraction.to_string(),
            expected: "[0, 0.5)",
        });
    }
    let n = input.max_peers as f64;
    let log_n = n.log2();
    let beta = input.block_interval;
    let alpha = input.c_alpha * beta * n.sqrt() * log_n;
    let buckets = ceil_u(n.sqrt() / log_n).max(1);
    let bucket_size = ceil_u(input.lambda_d * log_n * log_n).max(1);
    let node_lifetime = ceil_u(input.lambda_l * alpha / beta).max(buckets * bucket_size);
    let active_buckets = buckets + node_lifetime.div_ceil(bucket_size) + 1;
    let dir_lifetime = ceil_u(input.lambda_dl * alpha / beta).max((active_buckets + 1) * bucket_size);
    let join_capacity = input.join_capacity.unwrap_or_else(|| ceil_u(4.0 * log_n * log_n));
    let demand = beta * n * log_n * log_n / alpha;
    let capacity = (buckets * join_capacity) as f64;
    if capacity < demand {
        return Err(ParamError::JoinCapacity { capacity: buckets * join_capacity, demand });
    }
    Ok(ParamTable {
        max_peers: input.max_peers,
        block_interval: beta,
        halflife: alpha,
        buckets,
        bucket_size,
        active_buckets,
        node_lifetime,
        dir_lifetime,
        join_rate: input.lambda_n * log_n / alpha,
        join_capacity,
        lifetime_slack: node_lifetime as i64 - (buckets * bucket_size) as i64,
        capacity_slack: capacity - demand,
        halflife_floor: min_halflife(n, beta, join_capacity as f64),
    })
}

/// Smallest half-life any directory design with per-round capacity
/// `join_capacity` can sustain, up to constants.
pub fn min_halflife(max_peers: f64, block_interval: f64, join_capacity: f64) -> f64 {
    (block_interval * max_peers / (2.0 * join_capacity * max_peers.log2())).sqrt()
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RecoveryError {
    #[error("trace contains no catastrophe injection")]
    NotApplicable,
}

/// b-epochs after the injection until a whole b-epoch stays partition
/// resilient. `epoch_starts[e]` is the first round of b-epoch `e`; the last
/// entry closes the final complete b-epoch. `None` means not within the trace.
pub fn measure_recovery(
    epoch_starts: &[Round],
    resilient: &dyn Fn(Round) -> bool,
    injection: Option<Round>,
) -> Result<Option<u64>, RecoveryError> {
    let inj = injection.ok_or(RecoveryError::NotApplicable)?;
    let Some(e) = epoch_starts.windows(2).position(|w| w[0] <= inj && inj < w[1]) else {
        return Ok(None);
    };
    for j in e..epoch_starts.len() - 1 {
        let from = epoch_starts[j].max(inj);
        if (from..epoch_starts[j + 1]).all(resilient) {
            return Ok(Some((j - e) as u64));
        }
    }
    Ok(None)
}

/// Multi-source hop distances over honest member nodes.
pub fn honest_distances(ov: &Overlay, sources: &[NodeId]) -> FxHashMap<NodeId, u32> {
    let mut dist = FxHashMap::default();
    let mut q = VecDeque::new();
    for &s in sources {
        if dist.insert(s, 0).is_none() {
            q.push_back(s);
        }
    }
    while let Some(x) = q.pop_front() {
        let d = dist[&x];
        for m in &ov.nodes[&x].adj {
            if !dist.contains_key(m) && ov.nodes.get(m).is_some_and(|n| n.honest && n.member) {
                dist.insert(*m, d + 1);
                q.push_back(*m);
            }
        }
    }
    dist
}
