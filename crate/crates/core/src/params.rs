//! Simulation constants and the quantities derived from them.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParamError {
    #[error("degenerate configuration: {0}")]
    Degenerate(String),
    #[error("`{field}` = {value} is out of range ({expected})")]
    OutOfRange { field: &'static str, value: String, expected: &'static str },
    #[error("`{0}` must be a power of two")]
    NotPowerOfTwo(&'static str),
    #[error("half-life too short: alpha = {alpha} rounds must exceed beta * log N = {floor:.1}")]
    HalflifeTooShort { alpha: u64, floor: f64 },
    #[error("node lifetime constant lambda_l ({l}) must be below lambda_dl ({dl})")]
    LifetimeOrder { l: f64, dl: f64 },
    #[error("lifetime constraint violated: a directory spans {span} blocks but a node lives only {lifetime} blocks")]
    LifetimeConstraint { span: u64, lifetime: u64 },
    #[error(
        "join-capacity constraint violated: directory capacity {capacity} joins/round is below the demand {demand:.1}"
    )]
    JoinCapacity { capacity: u64, demand: f64 },
    #[error(
        "directory-lifetime constraint violated: directory nodes live {dir_lifetime} blocks but must outlive {needed} blocks"
    )]
    DirectoryLifetime { dir_lifetime: u64, needed: u64 },
}

/// Every tunable constant of the protocol and of the desk experiments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimParams {
    /// Upper bound on network size; sets every log factor.
    pub max_peers: u64,
    /// Network size never drops below `max_peers^(1/y)`.
    pub min_size_exponent: f64,
    pub initial_peers: u32,
    /// Committee count at bootstrap; defaults to the largest power of two <= initial_peers.
    pub initial_committees: Option<u32>,
    /// Expected rounds per block.
    pub block_interval: u32,
    /// Churn half-life in rounds.
    pub halflife: u64,
    pub byz_fraction: f64,
    pub mu_b: f64,
    /// Confirmation depth in blocks.
    pub mu_s: u64,
    /// Synchrony bound in rounds; defaults to 2 * ceil(log N).
    pub delta_sync: Option<u64>,
    /// Oracle output width.
    pub kappa: u32,
    /// Oracle queries per peer per round.
    pub hash_rate: f64,
    pub lambda_d: f64,
    pub lambda_j: f64,
    pub lambda_l: f64,
    pub lambda_dl: f64,
    pub lambda_n: f64,
    pub lambda_s: u32,
    pub lambda_lb: f64,
    pub lambda_p: f64,
    pub lambda_b: f64,
    /// Join requests a bucket handles per round; defaults to ceil(4 log^2 N).
    pub lambda_jr: Option<u64>,
    /// Honest neighbours required per adjacent committee, in units of log N; defaults to lambda_p / 4.
    pub lambda_conn: Option<f64>,
    /// Per-peer per-round message budget, in units of log^3 N.
    pub lambda_bw: f64,
    /// Committee size ceiling in units of log N.
    pub c_upper: f64,
    /// Per-peer valid node ceiling in units of log N.
    pub peer_node_factor: f64,
    /// Buckets per directory; defaults to ceil(sqrt N / log N).
    pub buckets_per_directory: Option<u32>,
    pub delta_err: f64,
    pub fairness_delta: f64,
    pub recovery_eps: f64,
    pub recovery_delta: f64,
    pub recovery_mu_n: f64,
    pub recovery_a: f64,
    pub recovery_b: f64,
    /// Honest peers a committee needs to count as safe, in units of log N.
    pub safe_factor: f64,
    /// Phase-2 length in blocks; defaults to ceil(lambda_lb log N) + mu_s.
    pub phase2_blocks: Option<u64>,
    /// How many blocks the introductory chain may trail the leading honest view.
    pub intro_lag_blocks: u64,
    /// Worst-case per-peer view lag in rounds (at most delta_sync).
    pub max_view_lag: Option<u64>,
    /// Size change factor assumed possible before the next hypercube takes over.
    pub drift_factor: f64,
    /// Estimate from several committees and keep the largest join count.
    pub recovery_estimation: bool,
    /// Committees sampled in recovery estimation; defaults to ceil(log N).
    pub recovery_committees: Option<u32>,
    /// Multiplier for the half-life in the parameter solver.
    pub c_alpha: f64,
}

impl Default for SimParams {
    fn default() -> Self {
        SimParams {
            max_peers: 256,
            min_size_exponent: 2.0,
            initial_peers: 64,
            initial_committees: None,
            block_interval: 4,
            halflife: 2048,
            byz_fraction: 0.1,
            mu_b: 2.0,
            mu_s: 6,
            delta_sync: None,
            kappa: 64,
            hash_rate: 2.0,
            lambda_d: 1.0,
            lambda_j: 5.0,
            lambda_l: 0.34,
            lambda_dl: 0.9,
            lambda_n: 24.0,
            lambda_s: 4,
            lambda_lb: 6.0,
            lambda_p: 2.0,
            lambda_b: 0.25,
            lambda_jr: None,
            lambda_conn: None,
            lambda_bw: 256.0,
            c_upper: 32.0,
            peer_node_factor: 16.0,
            buckets_per_directory: None,
            delta_err: 0.25,
            fairness_delta: 0.1,
            recovery_eps: 0.1,
            recovery_delta: 0.1,
            recovery_mu_n: 0.7,
            recovery_a: 1.05,
            recovery_b: 1.0,
            safe_factor: 20.0,
            phase2_blocks: None,
            intro_lag_blocks: 2,
            max_view_lag: None,
            drift_factor: 2.0,
            recovery_estimation: true,
            recovery_committees: None,
            c_alpha: 4.0,
        }
    }
}

/// Quantities computed once from [`SimParams`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Derived {
    pub log_n: f64,
    pub bucket_size: u64,
    /// Buckets per directory.
    pub buckets: u32,
    /// Buckets in the active directory.
    pub active_buckets: u32,
    /// Node lifetime in blocks.
    pub node_lifetime: u64,
    /// Directory-node lifetime in blocks.
    pub dir_lifetime: u64,
    /// Per-query success probability.
    pub p_n: f64,
    /// Per-peer per-round mining success probability.
    pub success_prob: f64,
    /// Mining target; a digest below it is a valid proof. Stored wide so
    /// a target of 2^kappa is representable.
    pub join_target: u128,
    pub samples_per_bucket: u32,
    pub join_capacity: u64,
    pub delta: u64,
    pub max_view_lag: u64,
    pub bepoch_blocks: u64,
    pub phase1_blocks: u64,
    pub phase2_blocks: u64,
    /// Phase-2 blocks whose payloads are counted in the vote.
    pub vote_blocks: u64,
    /// Phase-1 duration in rounds as used by the estimator.
    pub alpha1: f64,
    pub honest_floor: u32,
    pub conn_floor: u32,
    pub committee_cap: u32,
    pub dir_floor: u32,
    pub bandwidth_cap: u64,
    pub peer_node_cap: u32,
    pub safe_floor: u32,
    pub initial_committees: u32,
    pub recovery_committees: u32,
    pub min_size: f64,
}

fn check_range(field: &'static str, v: f64, lo: f64, hi: f64, expected: &'static str) -> Result<(), ParamError> {
    if v.is_finite() && v >= lo && v <= hi {
        Ok(())
    } else {
        Err(ParamError::OutOfRange { field, value: v.to_string(), expected })
    }
}

fn ceil_u(x: f64) -> u64 {
    // Guard against 127.99999 style float noise.
    (x - 1e-9).ceil().max(0.0) as u64
}

fn positive(field: &'static str, v: f64) -> Result<(), ParamError> {
    check_range(field, v, f64::MIN_POSITIVE, f64::MAX, "> 0")
}

impl SimParams {
    pub fn log_n(&self) -> f64 {
        (self.max_peers as f64).log2()
    }

    /// Validates every constraint and computes the derived quantities.
    pub fn derive(&self) -> Result<Derived, ParamError> {
        if self.max_peers < 2 {
            return Err(ParamError::Degenerate(format!(
                "max_peers = {} leaves no room for log-scaled constants",
                self.max_peers
            )));
        }
        let log_n = self.log_n();
        check_range("min_size_exponent", self.min_size_exponent, 1.0 + 1e-12, f64::MAX, "> 1")?;
        check_range("byz_fraction", self.byz_fraction, 0.0, 0.5 - 1e-12, "[0, 0.5)")?;
        check_range("mu_b", self.mu_b, 1.0, f64::MAX, ">= 1")?;
        check_range("delta_err", self.delta_err, 1e-12, 1.0 - 1e-12, "(0, 1)")?;
        check_range("fairness_delta", self.fairness_delta, 1e-12, 1.0 - 1e-12, "(0, 1)")?;
        check_range("recovery_eps", self.recovery_eps, 0.0, 1.0 - 1e-12, "[0, 1)")?;
        check_range("recovery_delta", self.recovery_delta, 0.0, 1.0 - 1e-12, "[0, 1)")?;
        check_range("recovery_mu_n", self.recovery_mu_n, 1e-12, 1.0, "(0, 1]")?;
        check_range("drift_factor", self.drift_factor, 1.0, f64::MAX, ">= 1")?;
        for (f, v) in [
            ("lambda_d", self.lambda_d),
            ("lambda_j", self.lambda_j),
            ("lambda_l", self.lambda_l),
            ("lambda_dl", self.lambda_dl),
            ("lambda_n", self.lambda_n),
            ("lambda_lb", self.lambda_lb),
            ("lambda_p", self.lambda_p),
            ("lambda_b", self.lambda_b),
            ("lambda_bw", self.lambda_bw),
            ("c_upper", self.c_upper),
            ("peer_node_factor", self.peer_node_factor),
            ("hash_rate", self.hash_rate),
            ("safe_factor", self.safe_factor),
            ("recovery_a", self.recovery_a),
            ("recovery_b", self.recovery_b),
            ("c_alpha", self.c_alpha),
        ] {
            positive(f, v)?;
        }
        if self.kappa == 0 || self.kappa > 64 {
            return Err(ParamError::OutOfRange { field: "kappa", value: self.kappa.to_string(), expected: "1..=64" });
        }
        if self.block_interval == 0 {
            return Err(ParamError::Degenerate("block_interval must be at least one round".into()));
        }
        if !self.lambda_s.is_power_of_two() || self.lambda_s < 2 {
            return Err(ParamError::NotPowerOfTwo("lambda_s"));
        }
        if self.initial_peers == 0 || u64::from(self.initial_peers) > self.max_peers {
            return Err(ParamError::OutOfRange {
                field: "initial_peers",
                value: self.initial_peers.to_string(),
                expected: "1..=max_peers",
            });
        }
        let initial_committees = match self.initial_committees {
            Some(c) if !c.is_power_of_two() => return Err(ParamError::NotPowerOfTwo("initial_committees")),
            Some(c) => c,
            None => 1u32 << (31 - self.initial_peers.leading_zeros()),
        };
        let beta = f64::from(self.block_interval);
        let alpha = self.halflife as f64;
        if alpha <= beta * log_n {
            return Err(ParamError::HalflifeTooShort { alpha: self.halflife, floor: beta * log_n });
        }
        if self.lambda_l >= self.lambda_dl {
            return Err(ParamError::LifetimeOrder { l: self.lambda_l, dl: self.lambda_dl });
        }
        let bucket_size = ceil_u(self.lambda_d * log_n * log_n).max(1);
        let buckets =
            self.buckets_per_directory.unwrap_or_else(|| ceil_u((self.max_peers as f64).sqrt() / log_n).max(1) as u32);
        if buckets == 0 {
            return Err(ParamError::Degenerate("buckets_per_directory must be positive".into()));
        }
        let node_lifetime = ceil_u(self.lambda_l * alpha / beta).max(1);
        let dir_lifetime = ceil_u(self.lambda_dl * alpha / beta).max(1);
        let span = u64::from(buckets) * bucket_size;
        if span > node_lifetime {
            return Err(ParamError::LifetimeConstraint { span, lifetime: node_lifetime });
        }
        let join_capacity = self.lambda_jr.unwrap_or_else(|| ceil_u(4.0 * log_n * log_n));
        let demand = beta * self.max_peers as f64 * log_n * log_n / alpha;
        let capacity = u64::from(buckets) * join_capacity;
        if (capacity as f64) < demand {
            return Err(ParamError::JoinCapacity { capacity, demand });
        }
        let active_buckets = buckets + node_lifetime.div_ceil(bucket_size) as u32 + 1;
        let needed = (u64::from(active_buckets) + 1) * bucket_size;
        if dir_lifetime < needed {
            return Err(ParamError::DirectoryLifetime { dir_lifetime, needed });
        }
        let p_n = self.lambda_n * log_n / (self.hash_rate * alpha);
        let success_prob = (self.hash_rate * p_n).min(1.0);
        let full = 1u128 << self.kappa;
        let join_target = ((p_n.min(1.0) * full as f64) as u128).clamp(1, full);
        let delta = self.delta_sync.unwrap_or(2 * log_n.ceil() as u64);
        if delta == 0 {
            return Err(ParamError::Degenerate("delta_sync must be at least one round".into()));
        }
        let max_view_lag = self.max_view_lag.unwrap_or(delta);
        if max_view_lag > delta {
            return Err(ParamError::OutOfRange {
                field: "max_view_lag",
                value: max_view_lag.to_string(),
                expected: "<= delta_sync",
            });
        }
        let bepoch_blocks = (alpha / (self.mu_b * beta)).floor() as u64;
        let phase2_blocks = self.phase2_blocks.unwrap_or(ceil_u(self.lambda_lb * log_n) + self.mu_s);
        if phase2_blocks <= self.mu_s || phase2_blocks + 1 > bepoch_blocks {
            return Err(ParamError::OutOfRange {
                field: "phase2_blocks",
                value: phase2_blocks.to_string(),
                expected: "more than mu_s and shorter than a b-epoch",
            });
        }
        let phase1_blocks = bepoch_blocks - phase2_blocks;
        let alpha1 = phase1_blocks as f64 * self.mu_b * beta;
        let lambda_conn = self.lambda_conn.unwrap_or(self.lambda_p / 4.0);
        positive("lambda_conn", lambda_conn)?;
        Ok(Derived {
            log_n,
            bucket_size,
            buckets,
            active_buckets,
            node_lifetime,
            dir_lifetime,
            p_n,
            success_prob,
            join_target,
            samples_per_bucket: ceil_u(self.lambda_j * log_n).max(1) as u32,
            join_capacity,
            delta,
            max_view_lag,
            bepoch_blocks,
            phase1_blocks,
            phase2_blocks,
            vote_blocks: phase2_blocks - self.mu_s,
            alpha1,
            honest_floor: ceil_u(self.lambda_p * log_n) as u32,
            conn_floor: ceil_u(lambda_conn * log_n).max(1) as u32,
            committee_cap: (self.c_upper * log_n).floor() as u32,
            dir_floor: ceil_u(self.lambda_b * log_n * log_n) as u32,
            bandwidth_cap: (self.lambda_bw * log_n.powi(3)).floor() as u64,
            peer_node_cap: (self.peer_node_factor * log_n).floor() as u32,
            safe_floor: ceil_u(self.safe_factor * log_n) as u32,
            initial_committees,
            recovery_committees: self.recovery_committees.unwrap_or(log_n.ceil() as u32).max(1),
            min_size: (self.max_peers as f64).powf(1.0 / self.min_size_exponent),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let d = SimParams::default().derive().unwrap();
        assert_eq!(d.bucket_size, 64);
        assert_eq!(d.buckets, 2);
        assert_eq!(d.node_lifetime, 175);
        assert_eq!(d.active_buckets, 6);
        assert_eq!(d.join_capacity, 256);
        assert_eq!(d.delta, 16);
        assert_eq!(d.bepoch_blocks, 256);
        assert_eq!(d.phase2_blocks, 54);
        assert_eq!(d.vote_blocks, 48);
        assert_eq!(d.honest_floor, 16);
        assert_eq!(d.conn_floor, 4);
        assert_eq!(d.dir_floor, 16);
        assert_eq!(d.initial_committees, 64);
    }

    #[test]
    fn lifetime_constraint_is_named() {
        let p = SimParams { lambda_l: 0.2, ..SimParams::default() };
        let e = p.derive().unwrap_err();
        assert!(matches!(e, ParamError::LifetimeConstraint { .. }));
        assert!(e.to_string().contains("lifetime constraint"));
    }

    #[test]
    fn join_capacity_is_named() {
        let p = SimParams { lambda_jr: Some(1), ..SimParams::default() };
        let e = p.derive().unwrap_err();
        assert!(e.to_string().contains("join-capacity constraint"), "{e}");
    }

    #[test]
    fn rejects_non_power_of_two_lambda_s() {
        let p = SimParams { lambda_s: 3, ..SimParams::default() };
        assert_eq!(p.derive().unwrap_err(), ParamError::NotPowerOfTwo("lambda_s"));
    }

    #[test]
    fn rejects_short_halflife_and_lifetime_order() {
        let p = SimParams { halflife: 30, ..SimParams::default() };
        assert!(matches!(p.derive().unwrap_err(), ParamError::HalflifeTooShort { .. }));
        let p = SimParams { lambda_dl: 0.3, ..SimParams::default() };
        assert!(matches!(p.derive().unwrap_err(), ParamError::LifetimeOrder { .. }));
    }

    #[test]
    fn rejects_tiny_network() {
        let p = SimParams { max_peers: 1, initial_peers: 1, ..SimParams::default() };
        assert!(matches!(p.derive().unwrap_err(), ParamError::Degenerate(_)));
    }

    #[test]
    fn unknown_keys_fail_closed() {
        let r: Result<SimParams, _> = serde_json::from_str(r#"{"max_peers": 256, "bogus": 1}"#);
        assert!(r.unwrap_err().to_string().contains("bogus"));
    }
}
