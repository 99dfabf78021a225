//! Random oracle, node mining, proof verification and directory sampling.

use crate::model::{BlockNumber, CommitteeId, EntryInfo, NetAddr};
use rand::Rng;
use serde::{Deserialize, Serialize};
use xxhash_rust::xxh3::xxh3_64_with_seed;

/// Seeded hash standing in for the ideal random oracle. Outputs are
/// truncated to `kappa` bits.
#[derive(Clone, Debug)]
pub struct RandomOracle {
    seed: u64,
    kappa: u32,
}

impl RandomOracle {
    pub fn new(seed: u64, kappa: u32) -> Self {
        assert!((1..=64).contains(&kappa));
        RandomOracle { seed, kappa }
    }

    pub fn kappa(&self) -> u32 {
        self.kappa
    }

    pub fn digest(&self, bytes: &[u8]) -> u64 {
        let h = xxh3_64_with_seed(bytes, self.seed);
        if self.kappa == 64 {
            h
        } else {
            h >> (64 - self.kappa)
        }
    }

    fn digest_words(&self, tag: u8, words: &[u64]) -> u64 {
        let mut buf = [0u8; 1 + 8 * 4];
        buf[0] = tag;
        for (i, w) in words.iter().enumerate() {
            buf[1 + 8 * i..9 + 8 * i].copy_from_slice(&w.to_le_bytes());
        }
        self.digest(&buf[..1 + 8 * words.len()])
    }

    pub fn block_hash(&self, number: BlockNumber, producer: NetAddr, parent: u64) -> u64 {
        self.digest_words(1, &[number, producer.0, parent])
    }

    /// Puzzle digest over (block hash, address, nonce).
    pub fn join_digest(&self, block_hash: u64, addr: NetAddr, nonce: u64) -> u64 {
        self.digest_words(2, &[block_hash, addr.0, nonce])
    }

    /// Digest used to pick the estimation committee(s) of a b-epoch.
    pub fn selector(&self, block_hash: u64, counter: u64) -> u64 {
        self.digest_words(3, &[block_hash, counter])
    }

    fn sample_word(&self, p_join: u64, bucket: u64, counter: u64) -> u64 {
        self.digest_words(4, &[p_join, bucket, counter])
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NodeProof {
    pub entry: EntryInfo,
    pub p_join: u64,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum InvalidReason {
    StaleBlock,
    UnknownBlock,
    BadTarget,
    WrongCommittee,
    Expired,
}

/// Committee of a digest below `target`: the leading `log2 committees` bits of
/// the digest's position inside the target range. With a full-width target
/// this is exactly the leading bits of the digest.
pub fn committee_from_digest(p_join: u64, committees: u32, target: u128) -> CommitteeId {
    debug_assert!(committees.is_power_of_two());
    debug_assert!(u128::from(p_join) < target);
    ((u128::from(p_join) * u128::from(committees)) / target) as CommitteeId
}

/// Everything needed to check a proof against a verifier's chain.
pub struct VerifyContext<'a> {
    pub height: BlockNumber,
    /// Hash of a confirmed block, if the verifier knows it.
    pub block_hash: &'a dyn Fn(BlockNumber) -> Option<u64>,
    pub committees: u32,
    /// Committees the verifier serves (directory) or belongs to / borders (node).
    pub expected: &'a [CommitteeId],
    /// At a directory the proof's neighbours also count as relevant.
    pub include_neighbors: bool,
}

#[derive(Clone, Debug)]
pub struct Puzzle {
    pub oracle: RandomOracle,
    pub target: u128,
    pub success_prob: f64,
    pub mu_s: u64,
    pub node_lifetime: u64,
}

impl Puzzle {
    pub fn committee_of(&self, p_join: u64, committees: u32) -> CommitteeId {
        committee_from_digest(p_join, committees, self.target)
    }

    /// One round of mining. Success is a Bernoulli draw; on success a nonce is
    /// searched so the proof genuinely meets the target.
    pub fn mine_attempt<R: Rng>(
        &self,
        rng: &mut R,
        addr: NetAddr,
        block_number: BlockNumber,
        block_hash: u64,
    ) -> Option<NodeProof> {
        if !rng.gen_bool(self.success_prob) {
            return None;
        }
        Some(self.find_nonce(rng.gen(), addr, block_number, block_hash))
    }

    pub fn find_nonce(&self, start: u64, addr: NetAddr, block_number: BlockNumber, block_hash: u64) -> NodeProof {
        let mut nonce = start;
        loop {
            let d = self.oracle.join_digest(block_hash, addr, nonce);
            if u128::from(d) < self.target {
                return NodeProof { entry: EntryInfo { net_addr: addr, nonce, block_number }, p_join: d };
            }
            nonce = nonce.wrapping_add(1);
        }
    }

    /// Freshness, lifetime and puzzle checks, without committee relevance.
    pub fn check(
        &self,
        proof: &NodeProof,
        height: BlockNumber,
        block_hash: &dyn Fn(BlockNumber) -> Option<u64>,
    ) -> Result<(), InvalidReason> {
        let b = proof.entry.block_number;
        if b > height {
            return Err(InvalidReason::UnknownBlock);
        }
        let Some(hash) = block_hash(b) else {
            return Err(InvalidReason::UnknownBlock);
        };
        if b + self.node_lifetime <= height {
            return Err(InvalidReason::Expired);
        }
        if height - b > self.mu_s {
            return Err(InvalidReason::StaleBlock);
        }
        let d = self.oracle.join_digest(hash, proof.entry.net_addr, proof.entry.nonce);
        if d != proof.p_join || u128::from(d) >= self.target {
            return Err(InvalidReason::BadTarget);
        }
        Ok(())
    }

    pub fn verify(&self, proof: &NodeProof, ctx: &VerifyContext<'_>) -> Result<CommitteeId, InvalidReason> {
        self.check(proof, ctx.height, ctx.block_hash)?;
        let c = self.committee_of(proof.p_join, ctx.committees);
        let relevant = ctx.expected.contains(&c)
            || (ctx.include_neighbors && ctx.expected.iter().any(|&e| crate::model::are_adjacent(e, c)));
        if relevant {
            Ok(c)
        } else {
            Err(InvalidReason::WrongCommittee)
        }
    }

    /// Verifiable sample of `count` positions in a bucket of `len` directory
    /// nodes, with replacement.
    pub fn sample_directory_nodes(&self, p_join: u64, bucket: u64, len: usize, count: u32) -> Vec<u32> {
        assert!(len > 0, "cannot sample an empty bucket");
        (0..u64::from(count))
            .map(|i| {
                let w = self.oracle.sample_word(p_join, bucket, i);
                ((u128::from(w) * len as u128) >> self.oracle.kappa()) as u32
            })
            .collect()
    }
}
