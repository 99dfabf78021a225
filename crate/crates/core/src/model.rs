//! Identifiers, wire messages and hypercube arithmetic.

use serde::{Deserialize, Serialize};
use std::sync::Arc;

pub type Round = u64;
pub type BlockNumber = u64;
pub type CommitteeId = u32;
pub type BucketIndex = u64;

/// A physical participant.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PeerId(pub u32);

/// Engine handle for one mined overlay node (never reused within a run).
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeId(pub u32);

/// Opaque network address of a peer.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NetAddr(pub u64);

/// The triple that identifies a node and lets anyone recheck its puzzle.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntryInfo {
    pub net_addr: NetAddr,
    pub nonce: u64,
    pub block_number: BlockNumber,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub entry: EntryInfo,
    pub p_join: u64,
    pub committee: CommitteeId,
    pub is_directory: bool,
    pub expiry_block: BlockNumber,
    pub owner: PeerId,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MessageKind {
    Joining,
    ReqInfo,
    CommInfo,
    EstInfo,
    BlockGossip,
    ParamVote,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DimChange {
    Increase,
    Decrease,
    NoChange,
}

/// Overlay parameters carried by phase-2 blocks.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamProposal {
    pub committees: u32,
    pub change: DimChange,
}

/// Message bodies. The kind is implied by the variant, so a payload can never
/// disagree with its kind.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Payload {
    Joining { committee: CommitteeId },
    ReqInfo { committee: CommitteeId },
    CommInfo { committee: CommitteeId, entries: Arc<[EntryInfo]> },
    EstInfo { committee: CommitteeId, entries: Arc<[EntryInfo]> },
    BlockGossip { number: BlockNumber },
    ParamVote { proposal: ParamProposal },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Message {
    pub sender: EntryInfo,
    pub payload: Payload,
}

impl Message {
    pub fn kind(&self) -> MessageKind {
        match self.payload {
            Payload::Joining { .. } => MessageKind::Joining,
            Payload::ReqInfo { .. } => MessageKind::ReqInfo,
            Payload::CommInfo { .. } => MessageKind::CommInfo,
            Payload::EstInfo { .. } => MessageKind::EstInfo,
            Payload::BlockGossip { .. } => MessageKind::BlockGossip,
            Payload::ParamVote { .. } => MessageKind::ParamVote,
        }
    }

    /// Entry set carried by COMM_INFO / EST_INFO, if any.
    pub fn entries(&self) -> Option<&[EntryInfo]> {
        match &self.payload {
            Payload::CommInfo { entries, .. } | Payload::EstInfo { entries, .. } => Some(entries),
            _ => None,
        }
    }
}

/// Committees adjacent to `c` in a `dim`-dimensional hypercube, ordered by
/// flipped bit.
pub fn hypercube_neighbors(c: CommitteeId, dim: u32) -> Vec<CommitteeId> {
    debug_assert!(dim == 0 || dim >= 32 || u64::from(c) < (1u64 << dim));
    (0..dim).map(|bit| c ^ (1 << bit)).collect()
}

/// Committee plus its hypercube neighbours.
pub fn relevant_committees(c: CommitteeId, dim: u32) -> Vec<CommitteeId> {
    let mut out = Vec::with_capacity(dim as usize + 1);
    out.push(c);
    out.extend(hypercube_neighbors(c, dim));
    out
}

pub fn are_adjacent(a: CommitteeId, b: CommitteeId) -> bool {
    (a ^ b).count_ones() == 1
}

/// Committee-to-bucket mapping (`c mod buckets`).
pub fn committee_to_bucket(c: CommitteeId, buckets: u32) -> u32 {
    assert!(buckets >= 1, "bucket count must be positive");
    c % buckets
}

/// log2 of a power of two.
pub fn dimension_of(committees: u32) -> u32 {
    debug_assert!(committees.is_power_of_two());
    committees.trailing_zeros()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn neighbors_examples() {
        let mut n = hypercube_neighbors(5, 4);
        n.sort();
        assert_eq!(n, vec![1, 4, 7, 13]);
        assert_eq!(hypercube_neighbors(0, 1), vec![1]);
        assert!(hypercube_neighbors(0, 0).is_empty());
    }

    #[test]
    fn bucket_mapping_examples() {
        assert_eq!(committee_to_bucket(13, 4), 1);
        assert_eq!(committee_to_bucket(0, 1), 0);
        let mut counts = [0; 4];
        for c in 0..16 {
            counts[committee_to_bucket(c, 4) as usize] += 1;
        }
        assert_eq!(counts, [4; 4]);
    }

    #[test]
    fn message_kind_follows_payload() {
        let e = EntryInfo { net_addr: NetAddr(1), nonce: 2, block_number: 3 };
        let m = Message { sender: e, payload: Payload::CommInfo { committee: 0, entries: Arc::from(vec![e]) } };
        assert_eq!(m.kind(), MessageKind::CommInfo);
        assert_eq!(m.entries().unwrap().len(), 1);
        let r = Message { sender: e, payload: Payload::ReqInfo { committee: 3 } };
        assert_eq!(r.kind(), MessageKind::ReqInfo);
        assert!(r.entries().is_none());
    }
}
