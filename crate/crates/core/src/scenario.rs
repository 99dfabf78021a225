//! Scenario files: everything a run needs besides the seed.

use crate::adversary::{AdversaryConfig, CatastropheSpec, ChurnProfile};
use crate::params::SimParams;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineOptions {
    /// Cross-check the incremental resilience tracker against a full scan
    /// every this many rounds (0 disables).
    pub verify_every: u64,
    /// Record a state hash every this many rounds (0 disables).
    pub state_hash_every: u64,
    /// Keep per-round records in the trace.
    pub round_records: bool,
}

impl Default for EngineOptions {
    fn default() -> Self {
        EngineOptions { verify_every: 0, state_hash_every: 100, round_records: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: u32,
    pub name: String,
    pub params: SimParams,
    pub churn: ChurnProfile,
    pub adversary: AdversaryConfig,
    pub catastrophe: Option<CatastropheSpec>,
    /// Run length in rounds; overrides `bepochs`.
    pub rounds: Option<u64>,
    /// Run length in nominal b-epochs.
    pub bepochs: u64,
    pub engine: EngineOptions,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            schema_version: SCHEMA_VERSION,
            name: "default".into(),
            params: SimParams::default(),
            churn: ChurnProfile::default(),
            adversary: AdversaryConfig::default(),
            catastrophe: None,
            rounds: None,
            bepochs: 20,
            engine: EngineOptions::default(),
        }
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("invalid scenario: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unsupported schema_version {0} (expected {SCHEMA_VERSION})")]
    Schema(u32),
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let s: Scenario = serde_json::from_str(text)?;
        if s.schema_version != SCHEMA_VERSION {
            return Err(ScenarioError::Schema(s.schema_version));
        }
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ScenarioError::Io { path: path.display().to_string(), source })?;
        Self::from_json(&text)
    }

    /// Hash of the canonical JSON form (defaults filled in).
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("scenario serializes");
        format!("{:016x}", xxhash_rust::xxh3::xxh3_64(&bytes))
    }

    /// Rounds to simulate given the nominal b-epoch length.
    pub fn total_rounds(&self, bepoch_blocks: u64) -> u64 {
        self.rounds.unwrap_or(self.bepochs * bepoch_blocks * u64::from(self.params.block_interval))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_and_hash_is_stable() {
        let s = Scenario::default();
        let back = Scenario::from_json(&serde_json::to_string(&s).unwrap()).unwrap();
        assert_eq!(s, back);
        assert_eq!(s.hash(), back.hash());
        let other = Scenario { bepochs: 3, ..Scenario::default() };
        assert_ne!(s.hash(), other.hash());
    }

    #[test]
    fn unknown_nested_key_is_named() {
        let e = Scenario::from_json(r#"{"params": {"lambda_q": 3}}"#).unwrap_err();
        assert!(e.to_string().contains("lambda_q"), "{e}");
        let e = Scenario::from_json("{\n  \"bepochs\": \"x\"\n}").unwrap_err();
        assert!(e.to_string().contains("line 2"), "{e}");
    }
}
