//! Seed sweeps: independent runs on a thread pool, then min/median/max
//! aggregation of the per-run summaries.

use crate::engine::{run, RunError};
use crate::model::Round;
use crate::scenario::Scenario;
use crate::trace::{Summary, Trace};
use rayon::prelude::*;
use serde::Serialize;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Spread {
    pub min: f64,
    pub median: f64,
    pub max: f64,
    pub n: usize,
}

impl Spread {
    /// `None` for an empty sample.
    pub fn of(values: &[f64]) -> Option<Spread> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let median = if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 };
        Some(Spread { min: v[0], median, max: v[n - 1], n })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepSummary {
    pub scenario: String,
    pub scenario_hash: String,
    pub seeds: Vec<u64>,
    pub failed_seeds: Vec<(u64, String)>,
    pub resilience_fraction: Option<Spread>,
    pub max_msgs_per_peer: Option<Spread>,
    pub ratio_min: Option<Spread>,
    pub ratio_max: Option<Spread>,
    pub recovery_epochs: Option<Spread>,
    pub dropped_over_cap: Option<Spread>,
    pub isolated_rounds: u64,
    pub breaches: Vec<(u64, String)>,
}

/// Sorted seeds without repeats.
pub fn unique_seeds(seeds: &[u64]) -> Vec<u64> {
    let mut v = seeds.to_vec();
    v.sort_unstable();
    v.dedup();
    v
}

/// Runs every seed with at most `parallel` worker threads. Results come back
/// in seed order whatever the scheduling was.
pub fn sweep(
    scenario: &Scenario,
    seeds: &[u64],
    rounds: Option<Round>,
    parallel: usize,
) -> Vec<(u64, Result<Trace, RunError>)> {
    let seeds = unique_seeds(seeds);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(parallel.max(1)).build().expect("thread pool");
    pool.install(|| seeds.par_iter().map(|&s| (s, run(scenario, s, rounds))).collect())
}

pub fn aggregate(scenario: &Scenario, results: &[(u64, Result<Trace, RunError>)]) -> SweepSummary {
    let ok: Vec<(u64, &Summary)> =
        results.iter().filter_map(|(s, r)| r.as_ref().ok().map(|t| (*s, &t.summary))).collect();
    let collect = |f: &dyn Fn(&Summary) -> Option<f64>| -> Option<Spread> {
        Spread::of(&ok.iter().filter_map(|(_, s)| f(s)).collect::<Vec<_>>())
    };
    SweepSummary {
        scenario: scenario.name.clone(),
        scenario_hash: scenario.hash(),
        seeds: results.iter().map(|(s, _)| *s).collect(),
        failed_seeds: results.iter().filter_map(|(s, r)| r.as_ref().err().map(|e| (*s, e.to_string()))).collect(),
        resilience_fraction: collect(&|s| Some(s.resilience_fraction)),
        max_msgs_per_peer: collect(&|s| Some(f64::from(s.max_msgs_per_peer))),
        ratio_min: collect(&|s| s.ratio_min),
        ratio_max: collect(&|s| s.ratio_max),
        recovery_epochs: collect(&|s| s.recovery_epochs.map(|x| x as f64)),
        dropped_over_cap: collect(&|s| Some(s.dropped_over_cap as f64)),
        isolated_rounds: ok.iter().map(|(_, s)| s.isolated_rounds).sum(),
        breaches: ok.iter().filter_map(|(seed, s)| s.breach.clone().map(|b| (*seed, b))).collect(),
    }
}
