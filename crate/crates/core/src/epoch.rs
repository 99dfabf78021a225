//! b-epoch clock, network-size estimation and parameter agreement.

use crate::model::{BlockNumber, DimChange, ParamProposal};
use serde::{Deserialize, Serialize};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EpochPhase {
    Phase1,
    Phase2,
}

/// Maps confirmed heights to b-epochs. Phase 1 of b-epoch `e` covers blocks
/// `[e*L, e*L + phase1 - 1]`; it is over once its last block is confirmed.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize)]
pub struct EpochClock {
    pub bepoch_blocks: u64,
    pub phase1_blocks: u64,
    pub vote_blocks: u64,
}

impl EpochClock {
    pub fn at(&self, height: BlockNumber) -> (u64, EpochPhase) {
        let e = height / self.bepoch_blocks;
        let phase = if height < self.phase1_end(e) { EpochPhase::Phase1 } else { EpochPhase::Phase2 };
        (e, phase)
    }

    pub fn epoch_of(&self, height: BlockNumber) -> u64 {
        height / self.bepoch_blocks
    }

    pub fn start(&self, e: u64) -> BlockNumber {
        e * self.bepoch_blocks
    }

    /// Last block of phase 1 (the block whose hash seeds committee selection).
    pub fn phase1_end(&self, e: u64) -> BlockNumber {
        self.start(e) + self.phase1_blocks - 1
    }

    /// Blocks whose payloads count in the vote of b-epoch `e`.
    pub fn vote_range(&self, e: u64) -> std::ops::RangeInclusive<BlockNumber> {
        let k = self.phase1_end(e);
        k + 1..=k + self.vote_blocks
    }

    pub fn last_block(&self, e: u64) -> BlockNumber {
        self.start(e + 1) - 1
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize)]
pub enum Estimate {
    Value(f64),
    /// No joins observed at all.
    Degenerate,
    /// No EST_INFO reached this peer.
    Stalled,
}

impl Estimate {
    pub fn value(self) -> Option<f64> {
        match self {
            Estimate::Value(v) => Some(v),
            Estimate::Degenerate => Some(0.0),
            Estimate::Stalled => None,
        }
    }
}

/// Size estimate from the number of distinct joins `joins` seen by one
/// committee in phase 1. `rate_times_phase1` is the expected joins per peer
/// over phase 1 at nominal block speed (per-round success probability times
/// the phase-1 length in rounds).
pub fn estimate_size(joins: usize, committees: u32, mu_b: f64, rate_times_phase1: f64) -> Estimate {
    if joins == 0 {
        return Estimate::Degenerate;
    }
    let g = joins as f64 * f64::from(committees);
    Estimate::Value(mu_b * g / rate_times_phase1)
}

/// Whether the hypercube must grow or shrink so that the size, after drifting
/// by at most `drift` either way, stays within the stability band
/// `[committees / lambda_s, lambda_s * committees]`.
pub fn decide_change(estimate: f64, committees: u32, lambda_s: u32, drift: f64) -> DimChange {
    let c = f64::from(committees);
    let s = f64::from(lambda_s);
    if drift * estimate > s * c {
        DimChange::Increase
    } else if estimate / drift < c / s && committees > 1 {
        DimChange::Decrease
    } else {
        DimChange::NoChange
    }
}

pub fn next_committees(committees: u32, change: DimChange, lambda_s: u32, max: u32) -> u32 {
    match change {
        DimChange::Increase => committees.saturating_mul(lambda_s).min(max.max(committees)),
        DimChange::Decrease => (committees / lambda_s).max(1),
        DimChange::NoChange => committees,
    }
}

pub fn proposal_for(estimate: f64, committees: u32, lambda_s: u32, drift: f64, max: u32) -> ParamProposal {
    let mut change = decide_change(estimate, committees, lambda_s, drift);
    let next = next_committees(committees, change, lambda_s, max);
    if next == committees {
        change = DimChange::NoChange;
    }
    ParamProposal { committees: next, change }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VoteTally {
    pub adopted: ParamProposal,
    pub votes: usize,
    pub abstentions: usize,
    pub winning_count: usize,
    pub tie: bool,
}

/// Majority over vote payloads; absent payloads abstain. A tie or an empty
/// vote keeps the current hypercube.
pub fn tally<I>(payloads: I, current: u32) -> VoteTally
where
    I: IntoIterator<Item = Option<ParamProposal>>,
{
    let mut counts: Vec<(ParamProposal, usize)> = Vec::new();
    let mut votes = 0;
    let mut abstentions = 0;
    for p in payloads {
        match p {
            None => abstentions += 1,
            Some(p) => {
                votes += 1;
                match counts.iter_mut().find(|(q, _)| *q == p) {
                    Some((_, n)) => *n += 1,
                    None => counts.push((p, 1)),
                }
            }
        }
    }
    let keep = ParamProposal { committees: current, change: DimChange::NoChange };
    let best = counts.iter().map(|&(_, n)| n).max().unwrap_or(0);
    let leaders: Vec<_> = counts.iter().filter(|&&(_, n)| n == best).collect();
    let (adopted, tie) = match leaders.as_slice() {
        [] => (keep, false),
        [(p, _)] => (*p, false),
        _ => (keep, true),
    };
    VoteTally { adopted, votes, abstentions, winning_count: best, tie }
}

/// Committee picked by a selector digest: its leading `log2 committees` bits.
pub fn selected_committee(digest: u64, kappa: u32, committees: u32) -> u32 {
    ((u128::from(digest) * u128::from(committees)) >> kappa) as u32
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clock_examples() {
        let c = EpochClock { bepoch_blocks: 40, phase1_blocks: 32, vote_blocks: 2 };
        assert_eq!(c.at(71), (1, EpochPhase::Phase2));
        assert_eq!(c.at(70), (1, EpochPhase::Phase1));
        assert_eq!(c.at(0), (0, EpochPhase::Phase1));
        assert_eq!(c.at(79), (1, EpochPhase::Phase2));
        assert_eq!(c.at(80), (2, EpochPhase::Phase1));
        assert_eq!(c.vote_range(1), 72..=73);
    }

    #[test]
    fn estimator_arithmetic() {
        assert_eq!(estimate_size(3, 16, 2.0, 0.75), Estimate::Value(128.0));
        assert_eq!(estimate_size(0, 16, 2.0, 0.75), Estimate::Degenerate);
    }

    #[test]
    fn majority_examples() {
        let honest = ParamProposal { committees: 64, change: DimChange::Increase };
        let byz = ParamProposal { committees: 8, change: DimChange::Decrease };
        let mut v = vec![Some(honest); 8];
        v.push(Some(byz));
        let t = tally(v, 16);
        assert_eq!(t.adopted, honest);
        assert_eq!(t.winning_count, 8);

        let t = tally(vec![Some(honest), Some(byz), None], 16);
        assert!(t.tie);
        assert_eq!(t.adopted, ParamProposal { committees: 16, change: DimChange::NoChange });
        let t = tally(vec![None, None], 16);
        assert_eq!(t.adopted.change, DimChange::NoChange);
        assert_eq!(t.abstentions, 2);
    }

    #[test]
    fn change_boundaries() {
        assert_eq!(decide_change(16.0, 16, 4, 2.0), DimChange::NoChange);
        assert_eq!(decide_change(32.0, 16, 4, 2.0), DimChange::NoChange);
        assert_eq!(decide_change(32.5, 16, 4, 2.0), DimChange::Increase);
        assert_eq!(decide_change(8.0, 16, 4, 2.0), DimChange::NoChange);
        assert_eq!(decide_change(7.9, 16, 4, 2.0), DimChange::Decrease);
        assert_eq!(decide_change(0.1, 1, 4, 2.0), DimChange::NoChange);
        assert_eq!(next_committees(16, DimChange::Increase, 4, 1024), 64);
        assert_eq!(next_committees(16, DimChange::Decrease, 4, 1024), 4);
        assert_eq!(next_committees(512, DimChange::Increase, 4, 1024), 1024);
    }

    #[test]
    fn selection_uses_leading_bits() {
        assert_eq!(selected_committee(0b1101 << 60, 64, 8), 6);
        assert_eq!(selected_committee(u64::MAX, 64, 1), 0);
    }
}
