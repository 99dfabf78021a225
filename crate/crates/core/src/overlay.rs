//! Ground-truth overlay: peers, their nodes, hypercube connections, and an
//! incrementally maintained view of the partition-resilience clauses.

use crate::model::{are_adjacent, dimension_of, BlockNumber, CommitteeId, NetAddr, NodeId, NodeRecord, PeerId, Round};
use rustc_hash::{FxHashMap, FxHashSet};
use serde::Serialize;

#[derive(Clone, Debug)]
pub struct Node {
    pub record: NodeRecord,
    pub generation: u32,
    pub honest: bool,
    /// Joined: its JOININGs to the committee and its neighbours were delivered.
    pub member: bool,
    /// First round the node was stored by a directory or became a member.
    pub rostered: Option<Round>,
    /// Second copy of a node mined during a transformation b-epoch.
    pub twin: bool,
    pub adj: FxHashSet<NodeId>,
    /// Joins to this node's committee observed during phase 1 of `seen_epoch`.
    pub seen_epoch: u64,
    pub seen_joins: Vec<NodeId>,
    honest_intra: u32,
    honest_dim: Vec<u32>,
    honest_total: u32,
}

impl Node {
    pub fn committee(&self) -> CommitteeId {
        self.record.committee
    }
    pub fn owner(&self) -> PeerId {
        self.record.owner
    }
    fn honest_degree(&self) -> u32 {
        self.honest_total
    }
}

#[derive(Clone, Debug)]
pub struct Peer {
    pub id: PeerId,
    pub addr: NetAddr,
    pub honest: bool,
    pub alive: bool,
    /// Rounds by which this peer's chain view trails the leader.
    pub lag: u64,
    pub joined_round: Round,
    pub left_round: Option<Round>,
    pub nodes: Vec<NodeId>,
}

#[derive(Clone, Debug, Default)]
pub struct CommitteeStats {
    pub members: u32,
    pub honest_members: u32,
    /// Honest member nodes per honest peer.
    pub honest_peers: FxHashMap<PeerId, u32>,
    pub honest_intra_edges: u64,
}

#[derive(Clone, Debug)]
pub struct Generation {
    pub committees: u32,
    pub dim: u32,
    /// Nodes that are rostered or members, per committee.
    pub roster: Vec<Vec<NodeId>>,
    pub stats: Vec<CommitteeStats>,
    /// (honest member, dimension) pairs below the connectivity floor.
    pub deficient: u64,
    /// Honest members with no honest neighbour at all.
    pub isolated: u64,
    pub retired: bool,
}

impl Generation {
    fn new(committees: u32) -> Self {
        Generation {
            committees,
            dim: dimension_of(committees),
            roster: vec![Vec::new(); committees as usize],
            stats: vec![CommitteeStats::default(); committees as usize],
            deficient: 0,
            isolated: 0,
            retired: false,
        }
    }
}

/// First violated clause of partition resilience.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize)]
pub enum PrViolation {
    TooFewHonestPeers { committee: CommitteeId, honest_peers: u32 },
    TooManyNodes { committee: CommitteeId, nodes: u32 },
    MissingIntraEdge { committee: CommitteeId },
    WeakCrossLink,
}

impl PrViolation {
    pub fn clause(self) -> u8 {
        match self {
            PrViolation::TooFewHonestPeers { .. } | PrViolation::TooManyNodes { .. } => 1,
            PrViolation::MissingIntraEdge { .. } => 2,
            PrViolation::WeakCrossLink => 3,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PrThresholds {
    pub honest_floor: u32,
    pub committee_cap: u32,
    pub conn_floor: u32,
}

/// Nodes indexed by id. Ids are handed out sequentially and nodes die in
/// roughly creation order, so a vector with a moving live prefix beats hashing.
#[derive(Default)]
pub struct NodeTable {
    slots: Vec<Option<(NodeId, Node)>>,
    first: usize,
    len: usize,
}

impl NodeTable {
    pub fn get(&self, id: &NodeId) -> Option<&Node> {
        self.slots.get(id.0 as usize)?.as_ref().map(|(_, n)| n)
    }

    pub fn get_mut(&mut self, id: &NodeId) -> Option<&mut Node> {
        self.slots.get_mut(id.0 as usize)?.as_mut().map(|(_, n)| n)
    }

    pub fn contains_key(&self, id: &NodeId) -> bool {
        self.get(id).is_some()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Live nodes in id order.
    pub fn iter(&self) -> impl Iterator<Item = (&NodeId, &Node)> {
        self.slots[self.first..].iter().filter_map(|s| s.as_ref().map(|(id, n)| (id, n)))
    }

    pub fn keys(&self) -> impl Iterator<Item = &NodeId> {
        self.iter().map(|(id, _)| id)
    }

    pub fn values(&self) -> impl Iterator<Item = &Node> {
        self.iter().map(|(_, n)| n)
    }

    fn insert(&mut self, id: NodeId, node: Node) {
        let i = id.0 as usize;
        if self.slots.len() <= i {
            self.slots.resize_with(i + 1, || None);
        }
        debug_assert!(self.slots[i].is_none());
        self.slots[i] = Some((id, node));
        self.first = self.first.min(i);
        self.len += 1;
    }

    fn remove(&mut self, id: &NodeId) -> Option<Node> {
        let (_, n) = self.slots.get_mut(id.0 as usize)?.take()?;
        self.len -= 1;
        while self.first < self.slots.len() && self.slots[self.first].is_none() {
            self.first += 1;
        }
        Some(n)
    }
}

impl std::ops::Index<&NodeId> for NodeTable {
    type Output = Node;
    fn index(&self, id: &NodeId) -> &Node {
        self.get(id).expect("live node")
    }
}

pub struct Overlay {
    pub nodes: NodeTable,
    pub peers: Vec<Peer>,
    pub gens: Vec<Generation>,
    pub thresholds: PrThresholds,
    /// Initial capacity of a new node's neighbour set.
    pub degree_hint: usize,
    next_node: u32,
}

impl Overlay {
    pub fn new(thresholds: PrThresholds, committees: u32) -> Self {
        Overlay {
            nodes: NodeTable::default(),
            peers: Vec::new(),
            gens: vec![Generation::new(committees)],
            thresholds,
            degree_hint: 0,
            next_node: 0,
        }
    }

    pub fn add_generation(&mut self, committees: u32) -> u32 {
        self.gens.push(Generation::new(committees));
        self.gens.len() as u32 - 1
    }

    pub fn add_peer(&mut self, addr: NetAddr, honest: bool, lag: u64, round: Round) -> PeerId {
        let id = PeerId(self.peers.len() as u32);
        self.peers.push(Peer {
            id,
            addr,
            honest,
            alive: true,
            lag,
            joined_round: round,
            left_round: None,
            nodes: Vec::new(),
        });
        id
    }

    pub fn peer(&self, id: PeerId) -> &Peer {
        &self.peers[id.0 as usize]
    }

    pub fn node(&self, id: NodeId) -> Option<&Node> {
        self.nodes.get(&id)
    }

    /// Creates a node for `record` in `generation`, not yet rostered or joined.
    pub fn create_node(&mut self, record: NodeRecord, generation: u32, twin: bool) -> NodeId {
        let id = NodeId(self.next_node);
        self.next_node += 1;
        let owner = record.owner;
        let honest = self.peers[owner.0 as usize].honest;
        let dim = self.gens[generation as usize].dim;
        self.nodes.insert(
            id,
            Node {
                record,
                generation,
                honest,
                member: false,
                rostered: None,
                twin,
                adj: FxHashSet::with_capacity_and_hasher(self.degree_hint, Default::default()),
                seen_epoch: u64::MAX,
                seen_joins: Vec::new(),
                honest_intra: 0,
                honest_dim: vec![0; dim as usize],
                honest_total: 0,
            },
        );
        self.peers[owner.0 as usize].nodes.push(id);
        id
    }

    pub fn roster(&mut self, id: NodeId, round: Round) {
        let n = self.nodes.get_mut(&id).expect("rostering a live node");
        if n.rostered.is_none() {
            n.rostered = Some(round);
            self.gens[n.generation as usize].roster[n.record.committee as usize].push(id);
        }
    }

    fn counts_for_pr(&self, id: NodeId) -> bool {
        self.nodes.get(&id).is_some_and(|n| n.honest && n.member)
    }

    /// Applies the contribution of one honest-honest member edge.
    fn contrib(&mut self, a: NodeId, b: NodeId, sign: i64) {
        let floor = self.thresholds.conn_floor;
        let (ga, ca) = {
            let n = &self.nodes[&a];
            (n.generation, n.record.committee)
        };
        let cb = self.nodes[&b].record.committee;
        let gen = &mut self.gens[ga as usize];
        if ca == cb {
            let s = &mut gen.stats[ca as usize];
            s.honest_intra_edges = (s.honest_intra_edges as i64 + sign) as u64;
        }
        for (x, other) in [(a, cb), (b, ca)] {
            let n = self.nodes.get_mut(&x).expect("live endpoint");
            let was_isolated = n.honest_total == 0;
            n.honest_total = (i64::from(n.honest_total) + sign) as u32;
            if n.record.committee == other {
                n.honest_intra = (i64::from(n.honest_intra) + sign) as u32;
            } else {
                let bit = (n.record.committee ^ other).trailing_zeros() as usize;
                let before = n.honest_dim[bit];
                let after = (i64::from(before) + sign) as u32;
                n.honest_dim[bit] = after;
                if before < floor && after >= floor {
                    gen.deficient -= 1;
                } else if before >= floor && after < floor {
                    gen.deficient += 1;
                }
            }
            let isolated = n.honest_total == 0;
            if was_isolated && !isolated {
                gen.isolated -= 1;
            } else if !was_isolated && isolated {
                gen.isolated += 1;
            }
        }
    }

    fn register(&mut self, id: NodeId) {
        let floor = self.thresholds.conn_floor;
        let n = &self.nodes[&id];
        let gen = &mut self.gens[n.generation as usize];
        let s = &mut gen.stats[n.record.committee as usize];
        s.members += 1;
        if !n.honest {
            return;
        }
        s.honest_members += 1;
        *s.honest_peers.entry(n.record.owner).or_insert(0) += 1;
        debug_assert_eq!(n.honest_degree(), 0);
        gen.isolated += 1;
        gen.deficient += n.honest_dim.iter().filter(|&&d| d < floor).count() as u64;
        let nbrs: Vec<NodeId> = n.adj.iter().copied().filter(|&m| self.counts_for_pr(m)).collect();
        for m in nbrs {
            self.contrib(id, m, 1);
        }
    }

    fn unregister(&mut self, id: NodeId) {
        let floor = self.thresholds.conn_floor;
        let honest = self.nodes[&id].honest;
        if honest {
            let nbrs: Vec<NodeId> = self.nodes[&id].adj.iter().copied().filter(|&m| self.counts_for_pr(m)).collect();
            for m in nbrs {
                self.contrib(id, m, -1);
            }
        }
        let n = &self.nodes[&id];
        let gen = &mut self.gens[n.generation as usize];
        let s = &mut gen.stats[n.record.committee as usize];
        s.members -= 1;
        if !honest {
            return;
        }
        s.honest_members -= 1;
        let owner = n.record.owner;
        let left = s.honest_peers.get_mut(&owner).expect("owner counted");
        *left -= 1;
        if *left == 0 {
            s.honest_peers.remove(&owner);
        }
        gen.isolated -= 1;
        gen.deficient -= n.honest_dim.iter().filter(|&&d| d < floor).count() as u64;
    }

    /// Marks a node as joined and folds it into the tracked clauses.
    pub fn make_member(&mut self, id: NodeId, round: Round) {
        self.roster(id, round);
        let n = self.nodes.get_mut(&id).expect("live node");
        if n.member {
            return;
        }
        n.member = true;
        self.register(id);
    }

    /// Connects two nodes of the same generation in equal or adjacent
    /// committees. Returns false if the pair is not connectable or already linked.
    pub fn connect(&mut self, a: NodeId, b: NodeId) -> bool {
        if a == b {
            return false;
        }
        let (Some(na), Some(nb)) = (self.nodes.get(&a), self.nodes.get(&b)) else { return false };
        if na.generation != nb.generation {
            return false;
        }
        let (ca, cb) = (na.record.committee, nb.record.committee);
        if ca != cb && !are_adjacent(ca, cb) {
            return false;
        }
        if !self.nodes.get_mut(&a).expect("checked").adj.insert(b) {
            return false;
        }
        self.nodes.get_mut(&b).expect("checked").adj.insert(a);
        if self.counts_for_pr(a) && self.counts_for_pr(b) {
            self.contrib(a, b, 1);
        }
        true
    }

    /// Deletes a node everywhere: owner, neighbours' maps and rosters.
    pub fn remove_node(&mut self, id: NodeId) -> Option<Node> {
        if self.nodes.get(&id)?.member {
            self.unregister(id);
        }
        let n = self.nodes.remove(&id)?;
        for m in &n.adj {
            if let Some(x) = self.nodes.get_mut(m) {
                x.adj.remove(&id);
            }
        }
        if n.rostered.is_some() {
            let r = &mut self.gens[n.generation as usize].roster[n.record.committee as usize];
            if let Some(i) = r.iter().position(|&x| x == id) {
                r.swap_remove(i);
            }
        }
        let nodes = &mut self.peers[n.record.owner.0 as usize].nodes;
        if let Some(i) = nodes.iter().position(|&x| x == id) {
            nodes.swap_remove(i);
        }
        Some(n)
    }

    /// Removes a peer and all of its nodes.
    pub fn remove_peer(&mut self, id: PeerId, round: Round) -> Vec<NodeId> {
        let nodes = std::mem::take(&mut self.peers[id.0 as usize].nodes);
        for &n in &nodes {
            self.remove_node(n);
        }
        let p = &mut self.peers[id.0 as usize];
        p.alive = false;
        p.left_round = Some(round);
        nodes
    }

    /// Hands a peer to the adversary; its nodes stop counting as honest.
    pub fn corrupt_peer(&mut self, id: PeerId) {
        let nodes = self.peers[id.0 as usize].nodes.clone();
        let members: Vec<NodeId> = nodes.iter().copied().filter(|n| self.nodes[n].member).collect();
        // Flip each node right after unregistering it so an edge between two
        // of this peer's nodes is withdrawn once, not twice.
        for &n in &members {
            self.unregister(n);
            self.nodes.get_mut(&n).expect("owned node").honest = false;
        }
        self.peers[id.0 as usize].honest = false;
        for &n in &nodes {
            self.nodes.get_mut(&n).expect("owned node").honest = false;
        }
        for &n in &members {
            self.register(n);
        }
    }

    /// Incrementally tracked clause check for one generation.
    pub fn tracked_violation(&self, generation: u32) -> Option<PrViolation> {
        let t = self.thresholds;
        let gen = &self.gens[generation as usize];
        for (c, s) in gen.stats.iter().enumerate() {
            let c = c as CommitteeId;
            if (s.honest_peers.len() as u32) < t.honest_floor {
                return Some(PrViolation::TooFewHonestPeers {
                    committee: c,
                    honest_peers: s.honest_peers.len() as u32,
                });
            }
            if s.members > t.committee_cap {
                return Some(PrViolation::TooManyNodes { committee: c, nodes: s.members });
            }
        }
        for (c, s) in gen.stats.iter().enumerate() {
            let h = u64::from(s.honest_members);
            if s.honest_intra_edges != h * h.saturating_sub(1) / 2 {
                return Some(PrViolation::MissingIntraEdge { committee: c as CommitteeId });
            }
        }
        if gen.deficient > 0 {
            return Some(PrViolation::WeakCrossLink);
        }
        None
    }

    pub fn isolated(&self, generation: u32) -> u64 {
        self.gens[generation as usize].isolated
    }

    pub fn committee_stats(&self, generation: u32) -> &[CommitteeStats] {
        &self.gens[generation as usize].stats
    }

    pub fn alive_peers(&self) -> impl Iterator<Item = &Peer> {
        self.peers.iter().filter(|p| p.alive)
    }

    /// Nodes whose expiry block has been reached.
    pub fn expired_at(&self, height: BlockNumber) -> Vec<NodeId> {
        let mut v: Vec<NodeId> =
            self.nodes.iter().filter(|(_, n)| n.record.expiry_block <= height).map(|(&id, _)| id).collect();
        v.sort_unstable();
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::EntryInfo;

    fn rec(owner: u32, committee: u32) -> NodeRecord {
        NodeRecord {
            entry: EntryInfo { net_addr: NetAddr(u64::from(owner)), nonce: 0, block_number: 0 },
            p_join: 0,
            committee,
            is_directory: false,
            expiry_block: 100,
            owner: PeerId(owner),
        }
    }

    fn world() -> Overlay {
        let mut o = Overlay::new(PrThresholds { honest_floor: 2, committee_cap: 10, conn_floor: 1 }, 2);
        for i in 0..4 {
            o.add_peer(NetAddr(i), i != 3, 0, 0);
        }
        o
    }

    #[test]
    fn clique_and_cross_links_make_resilient() {
        let mut o = world();
        let ids: Vec<NodeId> = (0..4).map(|p| o.create_node(rec(p % 3, p / 2), 0, false)).collect();
        for &i in &ids {
            o.make_member(i, 0);
        }
        assert!(matches!(o.tracked_violation(0), Some(PrViolation::MissingIntraEdge { .. })));
        assert_eq!(o.isolated(0), 4);
        for a in 0..4 {
            for b in a + 1..4 {
                o.connect(ids[a], ids[b]);
            }
        }
        assert_eq!(o.tracked_violation(0), None);
        assert_eq!(o.isolated(0), 0);
        o.remove_peer(PeerId(0), 1);
        assert!(matches!(o.tracked_violation(0), Some(PrViolation::TooFewHonestPeers { committee: 0, .. })));
    }

    #[test]
    fn duplicate_and_non_adjacent_edges_are_ignored() {
        let mut o = Overlay::new(PrThresholds { honest_floor: 1, committee_cap: 10, conn_floor: 1 }, 4);
        o.add_peer(NetAddr(0), true, 0, 0);
        let a = o.create_node(rec(0, 0), 0, false);
        let b = o.create_node(rec(0, 3), 0, false);
        let c = o.create_node(rec(0, 1), 0, false);
        assert!(!o.connect(a, b));
        assert!(o.connect(a, c));
        assert!(!o.connect(c, a));
        assert_eq!(o.node(a).unwrap().adj.len(), 1);
    }

    #[test]
    fn corruption_moves_counts() {
        let mut o = world();
        let a = o.create_node(rec(0, 0), 0, false);
        let b = o.create_node(rec(1, 0), 0, false);
        o.make_member(a, 0);
        o.make_member(b, 0);
        o.connect(a, b);
        assert_eq!(o.committee_stats(0)[0].honest_intra_edges, 1);
        o.corrupt_peer(PeerId(1));
        let s = &o.committee_stats(0)[0];
        assert_eq!((s.honest_members, s.members, s.honest_intra_edges), (1, 2, 0));
        assert_eq!(o.isolated(0), 1);
    }

    #[test]
    fn corrupting_a_peer_with_linked_nodes() {
        let mut o = world();
        let a = o.create_node(rec(0, 0), 0, false);
        let b = o.create_node(rec(0, 0), 0, false);
        let c = o.create_node(rec(1, 0), 0, false);
        for id in [a, b, c] {
            o.make_member(id, 0);
        }
        o.connect(a, b);
        o.connect(b, c);
        o.connect(a, c);
        o.corrupt_peer(PeerId(0));
        let s = &o.committee_stats(0)[0];
        assert_eq!((s.honest_members, s.honest_intra_edges), (1, 0));
        assert_eq!(o.isolated(0), 1);
    }
}
