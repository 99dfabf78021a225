//! Per-round, per-b-epoch and event records, and the run summary.

use crate::adversary::CatastropheReport;
use crate::analyzer::ComponentStats;
use crate::model::{ParamProposal, Round};
use crate::overlay::PrViolation;
use serde::Serialize;
use std::io::Write;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Header {
    pub tool: String,
    pub version: String,
    pub scenario: String,
    pub scenario_hash: String,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RoundReport {
    pub round: Round,
    pub height: u64,
    pub epoch: u64,
    pub committees: u32,
    pub peers: u32,
    pub honest_peers: u32,
    pub partition_resilient: bool,
    pub violation: Option<PrViolation>,
    pub isolated: u64,
    pub max_msgs_per_peer: u32,
    pub directory_robust: bool,
    pub min_dir_honest: u32,
    pub min_honest_per_committee: u32,
    pub max_honest_per_committee: u32,
    pub max_nodes_per_committee: u32,
    pub max_nodes_per_peer: u32,
    pub joins_started: u32,
    pub max_bucket_load: u64,
    pub dropped_over_cap: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochReport {
    pub epoch: u64,
    pub start_round: Round,
    pub end_round: Round,
    pub complete: bool,
    pub committees: u32,
    pub transformation: bool,
    pub estimate: Option<f64>,
    pub estimate_min: Option<f64>,
    pub estimate_max: Option<f64>,
    pub stalled_peers: u32,
    pub joins_seen: u64,
    pub mean_size: f64,
    pub ratio: Option<f64>,
    pub adopted: Option<ParamProposal>,
    pub votes: usize,
    pub honest_vote_blocks: usize,
    pub vote_blocks: usize,
    pub synchronized: bool,
    pub stable: bool,
    pub bandwidth_adequate: bool,
    pub max_msgs_per_peer: u32,
    pub resilient_rounds: u64,
    pub rounds: u64,
    pub dropped_over_cap: u64,
    pub honest_joins: u64,
    pub honest_join_failures: u64,
    pub component: Option<ComponentStats>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Transformation { epoch: u64, from_committees: u32, to_committees: u32, generation: u32 },
    Switch { epoch: u64, generation: u32, removed_twins: u64 },
    Cleanup { epoch: u64, generation: u32, removed_nodes: u64, stale_links: u64, killed_buckets: u64 },
    Catastrophe { round: Round, report: CatastropheReport, verified: bool },
    CatastropheRejected { round: Round, reason: String },
    InvariantBreach { round: Round, what: String },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EventRecord {
    pub round: Round,
    #[serde(flatten)]
    pub event: Event,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct JoinStats {
    pub honest_started: u64,
    pub success: u64,
    /// Some relevant committee returned no entries.
    pub partial_join: u64,
    /// Replies missed honest members of a relevant committee.
    pub missed_entries: u64,
    pub unregistered: u64,
    pub aborted: u64,
    pub byzantine_started: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Summary {
    pub rounds: Round,
    pub final_height: u64,
    pub epochs_measured: u64,
    pub resilient_rounds: u64,
    pub resilience_fraction: f64,
    pub isolated_rounds: u64,
    pub max_msgs_per_peer: u32,
    pub bandwidth_cap: u64,
    pub directory_robust_rounds: u64,
    pub min_dir_honest: u32,
    pub joins: JoinStats,
    pub ratio_min: Option<f64>,
    pub ratio_max: Option<f64>,
    pub synchronized_epochs: u64,
    pub stable_epochs: u64,
    pub increases: u64,
    pub decreases: u64,
    pub switches: u64,
    pub max_stale_links_at_cleanup: u64,
    pub dropped_over_cap: u64,
    pub dropped_invalid: u64,
    pub dropped_phase: u64,
    pub max_bucket_load: u64,
    pub join_capacity: u64,
    pub max_nodes_per_peer: u32,
    pub peer_node_cap: u32,
    pub final_peers: u32,
    pub final_committees: u32,
    pub postponed_leaves: u64,
    pub suppressed_byzantine: u64,
    pub producer_bias_clamped: u64,
    pub tracker_checks: u64,
    pub recovery_epochs: Option<u64>,
    pub catastrophe_round: Option<Round>,
    pub breach: Option<String>,
    pub state_hash: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Trace {
    pub header: Header,
    pub rounds: Vec<RoundReport>,
    pub epochs: Vec<EpochReport>,
    pub events: Vec<EventRecord>,
    pub state_hashes: Vec<(Round, String)>,
    pub summary: Summary,
}

#[derive(Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum Line<'a> {
    Header(&'a Header),
    Round(&'a RoundReport),
    Epoch(&'a EpochReport),
    Event(&'a EventRecord),
    StateHash { round: Round, hash: &'a str },
}

impl Trace {
    /// Newline-delimited records; the first line is the header.
    pub fn write_ndjson<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let mut put = |l: Line<'_>| -> std::io::Result<()> {
            serde_json::to_writer(&mut w, &l)?;
            w.write_all(b"\n")
        };
        put(Line::Header(&self.header))?;
        for r in &self.rounds {
            put(Line::Round(r))?;
        }
        for e in &self.epochs {
            put(Line::Epoch(e))?;
        }
        for e in &self.events {
            put(Line::Event(e))?;
        }
        for (round, hash) in &self.state_hashes {
            put(Line::StateHash { round: *round, hash })?;
        }
        Ok(())
    }

    pub fn ndjson_bytes(&self) -> Vec<u8> {
        let mut v = Vec::new();
        self.write_ndjson(&mut v).expect("writing to memory");
        v
    }

    /// Summary document with the provenance header embedded.
    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({ "header": self.header, "summary": self.summary })
    }

    /// b-epoch start rounds for recovery measurement; the final entry closes
    /// the last complete b-epoch.
    pub fn epoch_bounds(&self) -> Vec<Round> {
        let complete: Vec<&EpochReport> = self.epochs.iter().filter(|e| e.complete).collect();
        let mut v: Vec<Round> = complete.iter().map(|e| e.start_round).collect();
        if let Some(last) = complete.last() {
            v.push(last.end_round + 1);
        }
        v
    }
}
