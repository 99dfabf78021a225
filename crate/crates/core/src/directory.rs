//! Buckets of block producers acting as the bootstrapping directory.

use crate::model::{BlockNumber, BucketIndex, CommitteeId, NodeId, PeerId, Round};
use crate::puzzle::{InvalidReason, NodeProof};
use rustc_hash::{FxHashMap, FxHashSet};
use serde::Serialize;
use std::collections::BTreeMap;

#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Phase {
    Infant,
    MiddleAged,
    Veteran,
    Dead,
}

impl Phase {
    pub fn stores(self) -> bool {
        self == Phase::MiddleAged
    }
    pub fn replies(self) -> bool {
        matches!(self, Phase::MiddleAged | Phase::Veteran)
    }
}

/// Bucket geometry shared by every bucket of a run.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Geometry {
    pub bucket_size: u64,
    /// Buckets per directory.
    pub buckets: u32,
    /// Buckets in the active directory.
    pub active: u32,
    /// Grace period in rounds.
    pub delta: u64,
}

impl Geometry {
    pub fn bucket_of(&self, block: BlockNumber) -> BucketIndex {
        block / self.bucket_size
    }

    /// Number of fully confirmed buckets at `height`.
    pub fn complete(&self, height: BlockNumber) -> u64 {
        (height + 1) / self.bucket_size
    }

    pub fn slot(&self, index: BucketIndex) -> u32 {
        (index % u64::from(self.buckets)) as u32
    }

    /// Bucket indices of the newest `count` complete buckets at `height`, oldest first.
    pub fn newest(&self, height: BlockNumber, count: u32) -> std::ops::Range<BucketIndex> {
        let done = self.complete(height);
        done.saturating_sub(u64::from(count))..done
    }

    /// The middle-aged bucket responsible for `c` as seen at `height`.
    pub fn middle_aged_for(&self, c: CommitteeId, height: BlockNumber) -> Option<BucketIndex> {
        let slot = crate::model::committee_to_bucket(c, self.buckets);
        self.newest(height, self.buckets).find(|&i| self.slot(i) == slot)
    }

    /// Active-directory buckets responsible for `c` as seen at `height`.
    pub fn responsible_for(&self, c: CommitteeId, height: BlockNumber) -> impl Iterator<Item = BucketIndex> + '_ {
        let slot = crate::model::committee_to_bucket(c, self.buckets);
        self.newest(height, self.active).filter(move |&i| self.slot(i) == slot)
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize)]
pub struct DirNode {
    pub owner: PeerId,
    pub block: BlockNumber,
    pub expiry_block: BlockNumber,
}

#[derive(Clone, Debug, Serialize)]
pub struct Bucket {
    pub index: BucketIndex,
    pub first_block: BlockNumber,
    pub last_block: BlockNumber,
    pub phase: Phase,
    pub phase_entered_round: Round,
    pub split_state: bool,
    /// Hypercube generations whose mapping this bucket serves.
    pub generations: Vec<u32>,
    /// One directory node per block, ordered by block number.
    pub dir_nodes: Vec<DirNode>,
    #[serde(skip)]
    stored: FxHashMap<(u32, CommitteeId), Vec<NodeId>>,
    left_recent: Option<Round>,
    left_active: Option<Round>,
}

impl Bucket {
    pub fn new(index: BucketIndex, geo: &Geometry, round: Round) -> Self {
        Bucket {
            index,
            first_block: index * geo.bucket_size,
            last_block: (index + 1) * geo.bucket_size - 1,
            phase: Phase::Infant,
            phase_entered_round: round,
            split_state: false,
            generations: Vec::new(),
            dir_nodes: Vec::with_capacity(geo.bucket_size as usize),
            stored: FxHashMap::default(),
            left_recent: None,
            left_active: None,
        }
    }

    pub fn serves(&self, generation: u32) -> bool {
        self.generations.contains(&generation)
    }

    /// Recomputes the phase from the leading confirmed height. Transitions out
    /// of middle age and out of the active directory lag their chain trigger
    /// by `delta` rounds; during that grace the bucket keeps its old duties,
    /// which is what lets a late JOINING sent to the previous middle-aged
    /// bucket still be stored.
    pub fn phase_step(&mut self, height: BlockNumber, round: Round, geo: &Geometry) -> Phase {
        let next = if self.last_block > height {
            Phase::Infant
        } else {
            let done = geo.complete(height);
            let in_recent = self.index + u64::from(geo.buckets) >= done;
            let in_active = self.index + u64::from(geo.active) >= done;
            if in_recent {
                Phase::MiddleAged
            } else {
                let left = *self.left_recent.get_or_insert(round);
                if round < left + geo.delta {
                    Phase::MiddleAged
                } else if in_active {
                    Phase::Veteran
                } else {
                    let left = *self.left_active.get_or_insert(round);
                    if round < left + geo.delta {
                        Phase::Veteran
                    } else {
                        Phase::Dead
                    }
                }
            }
        };
        let next = next.max(self.phase);
        if next != self.phase {
            self.phase = next;
            self.phase_entered_round = round;
        }
        self.phase
    }

    pub fn kill(&mut self, round: Round) {
        if self.phase != Phase::Dead {
            self.phase = Phase::Dead;
            self.phase_entered_round = round;
            self.stored.clear();
        }
    }

    /// Adds an entry; duplicates are ignored. Returns true if newly stored.
    pub fn store(&mut self, generation: u32, committee: CommitteeId, node: NodeId) -> bool {
        let list = self.stored.entry((generation, committee)).or_default();
        if list.contains(&node) {
            false
        } else {
            list.push(node);
            true
        }
    }

    /// Stored entries for a committee, dropping invalid ones as they are read.
    pub fn entries(&mut self, generation: u32, committee: CommitteeId, valid: &dyn Fn(NodeId) -> bool) -> &[NodeId] {
        match self.stored.get_mut(&(generation, committee)) {
            Some(list) => {
                list.retain(|&n| valid(n));
                list
            }
            None => &[],
        }
    }

    pub fn stored_len(&self) -> usize {
        self.stored.values().map(Vec::len).sum()
    }

    pub fn holds(&self, generation: u32, committee: CommitteeId, node: NodeId) -> bool {
        self.stored.get(&(generation, committee)).is_some_and(|l| l.contains(&node))
    }

    pub fn drop_generation(&mut self, generation: u32) {
        self.stored.retain(|&(g, _), _| g != generation);
        self.generations.retain(|&g| g != generation);
    }
}

/// How a directory node answers a REQ_INFO.
#[derive(Copy, Clone, Debug, PartialEq)]
pub enum Responder {
    /// Offline, expired, or choosing silence.
    Silent,
    Honest,
    /// Byzantine node that reports only the given fraction of entries.
    Partial(f64),
}

#[derive(Clone, Debug)]
pub enum RequestKind {
    Joining,
    ReqInfo { committee: CommitteeId, positions: Vec<u32> },
}

#[derive(Clone, Debug)]
pub struct Request {
    pub node: NodeId,
    pub proof: NodeProof,
    pub generation: u32,
    pub kind: RequestKind,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Reply {
    pub to: NodeId,
    pub generation: u32,
    pub committee: CommitteeId,
    pub bucket: BucketIndex,
    /// Union of everything the repliers sent.
    pub entries: Vec<NodeId>,
    /// Owners of replying directory nodes, one per COMM_INFO message.
    pub repliers: Vec<PeerId>,
    pub honest_replied: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DirOutcome {
    pub stored: Vec<NodeId>,
    pub replies: Vec<Reply>,
    pub dropped_over_cap: u64,
    pub dropped_phase: u64,
    pub dropped_invalid: Vec<InvalidReason>,
    /// Distinct valid requesters handled.
    pub handled: u64,
}

pub struct DirContext<'a> {
    pub cap: u64,
    /// Buckets per directory (for the responsibility check).
    pub buckets: u32,
    /// Verifies a proof for this bucket; returns the proof's committee.
    pub verify: &'a dyn Fn(&NodeProof, u32, &Bucket) -> Result<CommitteeId, InvalidReason>,
    pub responder: &'a dyn Fn(&DirNode) -> Responder,
    /// Whether any honest, live directory node remains to do the storing.
    pub has_honest: bool,
    pub valid: &'a dyn Fn(NodeId) -> bool,
}

/// One DIR round for a bucket: stores first, then answers.
pub fn dir_round(bucket: &mut Bucket, inbox: &[Request], ctx: &DirContext<'_>) -> DirOutcome {
    let mut out = DirOutcome::default();
    if !bucket.phase.replies() {
        out.dropped_phase = inbox.len() as u64;
        return out;
    }
    let slot = (bucket.index % u64::from(ctx.buckets)) as u32;
    let mut admitted: FxHashSet<(u32, u64)> = FxHashSet::default();
    let mut rejected: FxHashSet<(u32, u64)> = FxHashSet::default();
    let mut accepted: Vec<(&Request, CommitteeId)> = Vec::with_capacity(inbox.len());
    for req in inbox {
        let key = (req.generation, req.proof.p_join);
        if rejected.contains(&key) {
            continue;
        }
        let c = match (ctx.verify)(&req.proof, req.generation, bucket) {
            Err(reason) => {
                out.dropped_invalid.push(reason);
                continue;
            }
            Ok(c) => c,
        };
        if !admitted.contains(&key) {
            if admitted.len() as u64 >= ctx.cap {
                rejected.insert(key);
                out.dropped_over_cap += 1;
                continue;
            }
            admitted.insert(key);
        }
        accepted.push((req, c));
    }
    out.handled = admitted.len() as u64;
    for &(req, c) in accepted.iter().filter(|(r, _)| matches!(r.kind, RequestKind::Joining)) {
        if !bucket.phase.stores() {
            out.dropped_phase += 1;
            continue;
        }
        if crate::model::committee_to_bucket(c, ctx.buckets) != slot {
            out.dropped_invalid.push(InvalidReason::WrongCommittee);
            continue;
        }
        if !ctx.has_honest {
            continue;
        }
        if bucket.store(req.generation, c, req.node) {
            out.stored.push(req.node);
        }
    }
    for &(req, c) in &accepted {
        let RequestKind::ReqInfo { committee, positions } = &req.kind else { continue };
        let relevant = *committee == c || crate::model::are_adjacent(*committee, c);
        if !relevant || crate::model::committee_to_bucket(*committee, ctx.buckets) != slot {
            out.dropped_invalid.push(InvalidReason::WrongCommittee);
            continue;
        }
        let mut repliers = Vec::new();
        let mut honest = false;
        let mut partial: f64 = 0.0;
        for &pos in positions {
            let Some(dn) = bucket.dir_nodes.get(pos as usize) else { continue };
            match (ctx.responder)(dn) {
                Responder::Silent => {}
                Responder::Honest => {
                    honest = true;
                    repliers.push(dn.owner);
                }
                Responder::Partial(f) => {
                    partial = partial.max(f);
                    repliers.push(dn.owner);
                }
            }
        }
        if repliers.is_empty() {
            continue;
        }
        let all = bucket.entries(req.generation, *committee, ctx.valid);
        let entries = if honest {
            all.to_vec()
        } else {
            let keep = ((1.0 - partial) * all.len() as f64).floor() as usize;
            all[..keep.min(all.len())].to_vec()
        };
        out.replies.push(Reply {
            to: req.node,
            generation: req.generation,
            committee: *committee,
            bucket: bucket.index,
            entries,
            repliers,
            honest_replied: honest,
        });
    }
    out
}

/// All buckets of a run, keyed by index.
pub struct Directory {
    pub geo: Geometry,
    buckets: BTreeMap<BucketIndex, Bucket>,
}

impl Directory {
    pub fn new(geo: Geometry) -> Self {
        Directory { geo, buckets: BTreeMap::new() }
    }

    /// Registers the directory node embedded in a new block.
    pub fn on_block(&mut self, block: BlockNumber, owner: PeerId, dir_lifetime: u64, round: Round) {
        let idx = self.geo.bucket_of(block);
        let geo = self.geo;
        let b = self.buckets.entry(idx).or_insert_with(|| Bucket::new(idx, &geo, round));
        debug_assert_eq!(b.first_block + b.dir_nodes.len() as u64, block);
        b.dir_nodes.push(DirNode { owner, block, expiry_block: block + dir_lifetime });
    }

    /// Sets phases for a chain that already exists at `height`, as if every
    /// grace period had long elapsed.
    pub fn prehistory(&mut self, height: BlockNumber) {
        let geo = self.geo;
        let done = geo.complete(height);
        for b in self.buckets.values_mut() {
            b.phase = if b.last_block > height {
                Phase::Infant
            } else if b.index + u64::from(geo.buckets) >= done {
                Phase::MiddleAged
            } else if b.index + u64::from(geo.active) >= done {
                b.left_recent = Some(0);
                Phase::Veteran
            } else {
                Phase::Dead
            };
        }
        self.buckets.retain(|_, b| b.phase != Phase::Dead);
    }

    /// Advances phases; returns indices of buckets that just became middle-aged.
    pub fn step(&mut self, height: BlockNumber, round: Round) -> Vec<BucketIndex> {
        let geo = self.geo;
        let mut fresh = Vec::new();
        for b in self.buckets.values_mut() {
            let before = b.phase;
            let after = b.phase_step(height, round, &geo);
            if before == Phase::Infant && after == Phase::MiddleAged {
                fresh.push(b.index);
            }
        }
        while let Some(e) = self.buckets.first_entry() {
            if e.get().phase == Phase::Dead {
                e.remove();
            } else {
                break;
            }
        }
        fresh
    }

    pub fn get(&self, idx: BucketIndex) -> Option<&Bucket> {
        self.buckets.get(&idx)
    }

    pub fn get_mut(&mut self, idx: BucketIndex) -> Option<&mut Bucket> {
        self.buckets.get_mut(&idx)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Bucket> {
        self.buckets.values()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Bucket> {
        self.buckets.values_mut()
    }
}
