//! Oblivious honest churn, Byzantine strategies and catastrophe selection.

use crate::model::{CommitteeId, Round};
use crate::rng::stream;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use thiserror::Error;

/// Shape of the honest population over time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChurnProfile {
    /// Probability that an honest peer fails within one half-life.
    pub fail_prob: f64,
    /// Target size multiplier per half-life (1 keeps the size constant).
    pub growth_per_halflife: f64,
    /// Ceiling on the honest target; defaults to the honest share of `max_peers`.
    pub honest_cap: Option<u32>,
    pub enabled: bool,
}

impl Default for ChurnProfile {
    fn default() -> Self {
        ChurnProfile { fail_prob: 0.5, growth_per_halflife: 1.0, honest_cap: None, enabled: true }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChurnError {
    #[error("failure probability {0} must lie in [0, 0.5]")]
    FailProb(f64),
    #[error("size trajectory changes by {0}x per half-life; at most 2x either way is allowed")]
    Trajectory(f64),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize)]
pub enum ChurnKind {
    Join,
    Leave,
}

/// One honest event. `slot` names an honest identity in the schedule; slots
/// `0..initial` exist at round 0.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ChurnEvent {
    pub round: Round,
    pub kind: ChurnKind,
    pub slot: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ChurnSchedule {
    pub initial: u32,
    pub events: Vec<ChurnEvent>,
    pub halflife: u64,
    /// Leaves drawn but held back to respect the window bound.
    pub postponed_leaves: u64,
}

impl ChurnSchedule {
    /// Serialized bytes, for replay comparisons.
    pub fn fingerprint(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("schedule serializes")
    }

    pub fn honest_count_at(&self, round: Round) -> u32 {
        let mut n = i64::from(self.initial);
        for e in self.events.iter().take_while(|e| e.round <= round) {
            n += if e.kind == ChurnKind::Join { 1 } else { -1 };
        }
        n as u32
    }
}

/// Ring of per-window-start counters over the last `alpha` rounds.
struct Windows {
    alpha: usize,
    start_size: VecDeque<u32>,
    leaves: VecDeque<u32>,
    joins: VecDeque<u32>,
    first: Round,
}

impl Windows {
    fn open(&mut self, round: Round, size: u32) {
        if self.start_size.len() == self.alpha {
            self.start_size.pop_front();
            self.leaves.pop_front();
            self.joins.pop_front();
            self.first += 1;
        }
        debug_assert_eq!(self.first + self.start_size.len() as u64, round);
        self.start_size.push_back(size);
        self.leaves.push_back(0);
        self.joins.push_back(0);
    }

    fn try_leave(&mut self) -> bool {
        Self::bump(&self.start_size, &mut self.leaves)
    }

    fn try_join(&mut self) -> bool {
        Self::bump(&self.start_size, &mut self.joins)
    }

    /// Counts one event in every open window unless one would exceed half its start size.
    fn bump(sizes: &VecDeque<u32>, counts: &mut VecDeque<u32>) -> bool {
        if sizes.iter().zip(counts.iter()).any(|(&h, &c)| 2 * (c + 1) > h) {
            return false;
        }
        for c in counts.iter_mut() {
            *c += 1;
        }
        true
    }
}

/// Draws the honest join/leave sequence before the run starts. Each honest
/// peer fails with a constant hazard that gives probability `fail_prob` per
/// half-life; joins steer the population towards the target trajectory. In
/// every window of `halflife` rounds both leaves and joins stay at or below
/// half the honest count at the window's start.
pub fn generate_churn(
    profile: &ChurnProfile,
    initial: u32,
    halflife: u64,
    rounds: Round,
    seed: u64,
) -> Result<ChurnSchedule, ChurnError> {
    if !(0.0..=0.5).contains(&profile.fail_prob) {
        return Err(ChurnError::FailProb(profile.fail_prob));
    }
    let g = profile.growth_per_halflife;
    if !(0.5..=2.0).contains(&g) {
        return Err(ChurnError::Trajectory(g));
    }
    let mut sched = ChurnSchedule { initial, events: Vec::new(), halflife, postponed_leaves: 0 };
    if !profile.enabled || rounds == 0 {
        return Ok(sched);
    }
    let mut rng = stream(seed, "churn");
    let hazard = -(1.0 - profile.fail_prob).ln() / halflife as f64;
    let cap = f64::from(profile.honest_cap.unwrap_or(u32::MAX));
    let mut alive: Vec<u32> = (0..initial).collect();
    let mut next_slot = initial;
    let mut win = Windows {
        alpha: halflife as usize,
        start_size: VecDeque::new(),
        leaves: VecDeque::new(),
        joins: VecDeque::new(),
        first: 1,
    };
    for round in 1..=rounds {
        win.open(round, alive.len() as u32);
        let mut i = 0;
        while i < alive.len() {
            if hazard > 0.0 && rng.gen_bool(hazard.min(1.0)) {
                if win.try_leave() {
                    let slot = alive.swap_remove(i);
                    sched.events.push(ChurnEvent { round, kind: ChurnKind::Leave, slot });
                    continue;
                }
                sched.postponed_leaves += 1;
            }
            i += 1;
        }
        let target = (f64::from(initial) * g.powf(round as f64 / halflife as f64)).min(cap).round() as usize;
        while alive.len() < target && win.try_join() {
            alive.push(next_slot);
            sched.events.push(ChurnEvent { round, kind: ChurnKind::Join, slot: next_slot });
            next_slot += 1;
        }
    }
    Ok(sched)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ByzantineStrategy {
    /// Behaves like an honest peer.
    PassiveFair,
    /// Keeps only proofs for the target committees and periodically leaves and
    /// rejoins under a fresh address. Empty targets mean committee 0 and its
    /// neighbours.
    TargetCommitteeRejoin {
        #[serde(default)]
        targets: Vec<CommitteeId>,
        #[serde(default)]
        rejoin_interval: Option<u64>,
    },
    /// Hoards proofs and releases them together every `window` blocks.
    PrecomputeBurst { window: u64 },
    /// Byzantine directory nodes report only part of what they store.
    UnderReportCommInfo { fraction: f64 },
    /// Joins only in phase 2, hiding from the size estimate.
    WithholdPhase1Mining,
    /// Joins only in phase 1, inflating the size estimate.
    AllInPhase1,
    /// Repeats every join request `rate` times.
    FloodJoinRequests { rate: u32 },
}

impl Default for ByzantineStrategy {
    fn default() -> Self {
        ByzantineStrategy::TargetCommitteeRejoin { targets: Vec::new(), rejoin_interval: None }
    }
}

impl ByzantineStrategy {
    pub fn name(&self) -> &'static str {
        match self {
            ByzantineStrategy::PassiveFair => "passive_fair",
            ByzantineStrategy::TargetCommitteeRejoin { .. } => "target_committee_rejoin",
            ByzantineStrategy::PrecomputeBurst { .. } => "precompute_burst",
            ByzantineStrategy::UnderReportCommInfo { .. } => "under_report_comm_info",
            ByzantineStrategy::WithholdPhase1Mining => "withhold_phase1_mining",
            ByzantineStrategy::AllInPhase1 => "all_in_phase1",
            ByzantineStrategy::FloodJoinRequests { .. } => "flood_join_requests",
        }
    }

    pub fn is_passive(&self) -> bool {
        matches!(self, ByzantineStrategy::PassiveFair)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdversaryConfig {
    pub strategy: ByzantineStrategy,
    /// Requested reduction of the honest producer share (clamped by the chain).
    pub producer_bias: f64,
}

impl Default for AdversaryConfig {
    fn default() -> Self {
        AdversaryConfig { strategy: ByzantineStrategy::default(), producer_bias: 0.0 }
    }
}

#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionMode {
    #[default]
    FailStop,
    TurnByzantine,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CatastropheSpec {
    /// Round at which the failure hits.
    pub round: Round,
    /// Overrides for the failed-committee and corrupted-peer fractions.
    pub eps: Option<f64>,
    pub delta: Option<f64>,
    pub mode: CorruptionMode,
}

impl Default for CatastropheSpec {
    fn default() -> Self {
        CatastropheSpec { round: 0, eps: None, delta: None, mode: CorruptionMode::FailStop }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize)]
pub enum Clause {
    /// Too many unsafe committees, or a failed bucket.
    SafeCommittees,
    /// Too many corrupted peers or a corrupted majority.
    Corruption,
    /// No large, low-diameter safe-committee subgraph.
    SafeSubgraph,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CatastropheError {
    #[error("catastrophe unsatisfiable: {clause:?} ({detail})")]
    Unsatisfiable { clause: Clause, detail: String },
}

/// What the selector sees of the operating hypercube.
pub struct CatastropheInput<'a> {
    pub committees: u32,
    /// Honest peers with a member node in each committee (sorted, deduplicated).
    pub honest_peers: &'a [Vec<u32>],
    /// Honest peers owning a live directory node in each active bucket.
    pub bucket_honest: &'a [Vec<u32>],
    pub total_peers: u32,
    pub byzantine_peers: u32,
    pub honest_total: u32,
    pub safe_floor: u32,
    pub eps: f64,
    pub delta: f64,
    pub mu_n: f64,
    pub a: f64,
    pub b: f64,
    pub max_diameter: u32,
    pub mode: CorruptionMode,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct CatastropheReport {
    pub victims: Vec<u32>,
    pub failed_committees: Vec<CommitteeId>,
    pub failed_buckets: Vec<usize>,
    pub safe_committees: u32,
    pub component_size: u32,
    pub component_diameter: u32,
    pub component_peer_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SafeGraphStats {
    pub unsafe_committees: Vec<CommitteeId>,
    pub failed_buckets: Vec<usize>,
    pub component_size: u32,
    pub component_diameter: u32,
    pub component_peer_fraction: f64,
}

fn honest_left(peers: &[u32], corrupted: &[bool]) -> u32 {
    peers.iter().filter(|&&p| !corrupted[p as usize]).count() as u32
}

/// Hop distances from `src` inside the set `keep` of a `dim`-dimensional hypercube.
fn cube_bfs(src: u32, keep: &[bool], dim: u32) -> Vec<u32> {
    let mut dist = vec![u32::MAX; keep.len()];
    let mut q = VecDeque::from([src]);
    dist[src as usize] = 0;
    while let Some(c) = q.pop_front() {
        for bit in 0..dim {
            let n = c ^ (1 << bit);
            if keep[n as usize] && dist[n as usize] == u32::MAX {
                dist[n as usize] = dist[c as usize] + 1;
                q.push_back(n);
            }
        }
    }
    dist
}

/// Evaluates the safe-committee graph for a candidate set of corrupted peers.
pub fn evaluate_safe_graph(input: &CatastropheInput<'_>, corrupted: &[bool]) -> SafeGraphStats {
    let dim = crate::model::dimension_of(input.committees);
    let safe: Vec<bool> = input.honest_peers.iter().map(|p| honest_left(p, corrupted) >= input.safe_floor).collect();
    let failed_buckets: Vec<usize> = input
        .bucket_honest
        .iter()
        .enumerate()
        .filter(|(_, hs)| !hs.is_empty() && 2 * (hs.len() as u32 - honest_left(hs, corrupted)) > hs.len() as u32)
        .map(|(i, _)| i)
        .collect();
    let unsafe_committees = (0..input.committees).filter(|&c| !safe[c as usize]).collect();
    // Largest component of safe committees, then its diameter and peer coverage.
    let mut seen = vec![false; safe.len()];
    let mut best: Vec<u32> = Vec::new();
    for c in 0..input.committees {
        if !safe[c as usize] || seen[c as usize] {
            continue;
        }
        let d = cube_bfs(c, &safe, dim);
        let comp: Vec<u32> = (0..input.committees).filter(|&x| d[x as usize] != u32::MAX).collect();
        for &x in &comp {
            seen[x as usize] = true;
        }
        if comp.len() > best.len() {
            best = comp;
        }
    }
    let mut diameter = 0;
    for &c in &best {
        let d = cube_bfs(c, &safe, dim);
        diameter = diameter.max(best.iter().map(|&x| d[x as usize]).max().unwrap_or(0));
    }
    let mut covered = vec![false; corrupted.len()];
    for &c in &best {
        for &p in &input.honest_peers[c as usize] {
            if !corrupted[p as usize] {
                covered[p as usize] = true;
            }
        }
    }
    let honest_after = input.honest_total.saturating_sub(corrupted.iter().filter(|&&x| x).count() as u32);
    let fraction =
        if honest_after == 0 { 0.0 } else { covered.iter().filter(|&&x| x).count() as f64 / f64::from(honest_after) };
    SafeGraphStats {
        unsafe_committees,
        failed_buckets,
        component_size: best.len() as u32,
        component_diameter: diameter,
        component_peer_fraction: fraction,
    }
}

/// Checks the three clauses of an (eps, delta) catastrophic failure.
pub fn verify_catastrophe(
    input: &CatastropheInput<'_>,
    corrupted: &[bool],
) -> Result<SafeGraphStats, CatastropheError> {
    let s = evaluate_safe_graph(input, corrupted);
    let allowed = (input.eps * f64::from(input.committees)).floor() as usize;
    if s.unsafe_committees.len() > allowed {
        return Err(CatastropheError::Unsatisfiable {
            clause: Clause::SafeCommittees,
            detail: format!("{} unsafe committees, at most {allowed} allowed", s.unsafe_committees.len()),
        });
    }
    if !s.failed_buckets.is_empty() {
        return Err(CatastropheError::Unsatisfiable {
            clause: Clause::SafeCommittees,
            detail: format!("buckets {:?} lost their honest majority", s.failed_buckets),
        });
    }
    let victims = corrupted.iter().filter(|&&x| x).count() as u32;
    let budget = (input.delta * f64::from(input.total_peers)).floor() as u32;
    if victims > budget {
        return Err(CatastropheError::Unsatisfiable {
            clause: Clause::Corruption,
            detail: format!("{victims} corrupted peers exceed the budget {budget}"),
        });
    }
    let needed_size = input.a * input.b * input.mu_n * f64::from(input.committees);
    let size_ok = f64::from(s.component_size) >= needed_size.min(f64::from(input.committees));
    if !size_ok
        || s.component_diameter > input.max_diameter
        || s.component_peer_fraction < (input.mu_n * input.a).min(1.0) - 1e-9
    {
        return Err(CatastropheError::Unsatisfiable {
            clause: Clause::SafeSubgraph,
            detail: format!(
                "safe component of {} committees, diameter {}, covering {:.3} of honest peers",
                s.component_size, s.component_diameter, s.component_peer_fraction
            ),
        });
    }
    Ok(s)
}

/// Greedy construction of a failure: pushes the weakest committees below the
/// safety floor, one at a time, while the three clauses still hold.
pub fn select_catastrophe(input: &CatastropheInput<'_>) -> Result<CatastropheReport, CatastropheError> {
    let budget = (input.delta * f64::from(input.total_peers)).floor() as u32;
    if input.mode == CorruptionMode::TurnByzantine && 2 * (input.byzantine_peers + budget) >= input.total_peers {
        return Err(CatastropheError::Unsatisfiable {
            clause: Clause::Corruption,
            detail: format!(
                "{} Byzantine plus {budget} corrupted peers would reach half of {}",
                input.byzantine_peers, input.total_peers
            ),
        });
    }
    let mut corrupted = vec![
        false;
        input
            .honest_peers
            .iter()
            .flatten()
            .chain(input.bucket_honest.iter().flatten())
            .map(|&p| p as usize + 1)
            .max()
            .unwrap_or(0)
            .max(1)
    ];
    verify_catastrophe(input, &corrupted)?;
    let allowed = (input.eps * f64::from(input.committees)).floor() as usize;
    let mut order: Vec<u32> = (0..input.committees).collect();
    order.sort_by_key(|&c| (input.honest_peers[c as usize].len(), c));
    let mut used = 0u32;
    let mut failed = Vec::new();
    for c in order {
        if failed.len() >= allowed {
            break;
        }
        let peers = &input.honest_peers[c as usize];
        let left = honest_left(peers, &corrupted);
        if left < input.safe_floor {
            continue;
        }
        let need = left + 1 - input.safe_floor;
        if used + need > budget {
            continue;
        }
        let picks: Vec<u32> = peers.iter().copied().filter(|&p| !corrupted[p as usize]).take(need as usize).collect();
        for &p in &picks {
            corrupted[p as usize] = true;
        }
        if verify_catastrophe(input, &corrupted).is_ok() {
            used += need;
            failed.push(c);
        } else {
            for &p in &picks {
                corrupted[p as usize] = false;
            }
        }
    }
    let s = verify_catastrophe(input, &corrupted)?;
    let victims: Vec<u32> = (0..corrupted.len() as u32).filter(|&p| corrupted[p as usize]).collect();
    Ok(CatastropheReport {
        victims,
        failed_committees: s.unsafe_committees,
        failed_buckets: s.failed_buckets,
        safe_committees: input.committees - failed.len() as u32,
        component_size: s.component_size,
        component_diameter: s.component_diameter,
        component_peer_fraction: s.component_peer_fraction,
    })
}
