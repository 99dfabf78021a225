use overchain::adversary::{
    generate_churn, select_catastrophe, verify_catastrophe, CatastropheInput, ChurnKind, ChurnProfile, CorruptionMode,
};
use overchain::analyzer::{full_scan, measure_recovery, solve_parameters, SolverInput};
use overchain::chain::{ChainConfig, ChainOracle, ProducerPool};
use overchain::epoch::{next_committees, tally};
use overchain::model::{
    are_adjacent, committee_to_bucket, hypercube_neighbors, DimChange, EntryInfo, NetAddr, NodeId, NodeRecord,
    ParamProposal, PeerId,
};
use overchain::overlay::{Overlay, PrThresholds};
use overchain::puzzle::committee_from_digest;
use overchain::puzzle::RandomOracle;
use overchain::rng::stream;
use proptest::prelude::*;

#[derive(Clone, Debug)]
enum Op {
    Create { owner: u32, committee: u32, member: bool },
    Join(usize),
    Connect(usize, usize),
    Remove(usize),
    Leave(u32),
    Corrupt(u32),
}

const PEERS: u32 = 8;
const COMMITTEES: u32 = 4;

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        3 => (0..PEERS, 0..COMMITTEES, any::<bool>()).prop_map(|(owner, committee, member)| Op::Create { owner, committee, member }),
        1 => any::<usize>().prop_map(Op::Join),
        6 => (any::<usize>(), any::<usize>()).prop_map(|(a, b)| Op::Connect(a, b)),
        1 => any::<usize>().prop_map(Op::Remove),
        1 => (0..PEERS).prop_map(Op::Leave),
        1 => (0..PEERS).prop_map(Op::Corrupt),
    ]
}

fn record(owner: u32, committee: u32) -> NodeRecord {
    NodeRecord {
        entry: EntryInfo { net_addr: NetAddr(u64::from(owner)), nonce: 0, block_number: 0 },
        p_join: 0,
        committee,
        is_directory: false,
        expiry_block: 1_000,
        owner: PeerId(owner),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1024))]

    #[test]
    fn tracker_agrees_with_full_scan(ops in prop::collection::vec(op(), 1..120)) {
        let mut ov = Overlay::new(PrThresholds { honest_floor: 2, committee_cap: 6, conn_floor: 1 }, COMMITTEES);
        for p in 0..PEERS {
            ov.add_peer(NetAddr(u64::from(p)), p % 4 != 3, 0, 0);
        }
        let mut made: Vec<NodeId> = Vec::new();
        let pick = |made: &[NodeId], i: usize| (!made.is_empty()).then(|| made[i % made.len()]);
        for op in ops {
            match op {
                Op::Create { owner, committee, member } => {
                    if !ov.peer(PeerId(owner)).alive {
                        continue;
                    }
                    let id = ov.create_node(record(owner, committee), 0, false);
                    if member {
                        ov.make_member(id, 0);
                    }
                    made.push(id);
                }
                Op::Join(i) => {
                    if let Some(id) = pick(&made, i).filter(|id| ov.node(*id).is_some()) {
                        ov.make_member(id, 0);
                    }
                }
                Op::Connect(a, b) => {
                    if let (Some(a), Some(b)) = (pick(&made, a), pick(&made, b)) {
                        ov.connect(a, b);
                    }
                }
                Op::Remove(i) => {
                    if let Some(id) = pick(&made, i) {
                        ov.remove_node(id);
                    }
                }
                Op::Leave(p) => {
                    ov.remove_peer(PeerId(p), 1);
                }
                Op::Corrupt(p) => ov.corrupt_peer(PeerId(p)),
            }
            let scan = full_scan(&ov, 0, 0);
            prop_assert_eq!(ov.tracked_violation(0), scan.violation);
            prop_assert_eq!(ov.isolated(0), scan.isolated);
            prop_assert_eq!(scan.stale_links, 0);
        }
    }

    #[test]
    fn hypercube_neighbourhood_is_symmetric(dim in 0u32..12, seed in any::<u32>()) {
        let c = if dim == 0 { 0 } else { seed % (1 << dim) };
        let ns = hypercube_neighbors(c, dim);
        prop_assert_eq!(ns.len() as u32, dim);
        for &n in &ns {
            prop_assert!(n < 1 << dim);
            prop_assert!(are_adjacent(c, n));
            prop_assert!(hypercube_neighbors(n, dim).contains(&c));
        }
    }

    #[test]
    fn committee_and_bucket_ids_stay_in_range(
        digest in any::<u64>(),
        dim in 0u32..16,
        frac in 0.001f64..1.0,
        buckets in 1u32..64,
    ) {
        let target = ((frac * 2f64.powi(64)) as u128).max(1);
        let d = u64::try_from(u128::from(digest) % target).unwrap();
        let committees = 1u32 << dim;
        let c = committee_from_digest(d, committees, target);
        prop_assert!(c < committees);
        prop_assert!(committee_to_bucket(c, buckets) < buckets);
    }

    #[test]
    fn committee_count_moves_by_the_split_factor(exp in 0u32..12, lambda_s in prop::sample::select(vec![2u32, 4, 8])) {
        let c = 1u32 << exp;
        let max = 1u32 << 14;
        let up = next_committees(c, DimChange::Increase, lambda_s, max);
        let down = next_committees(c, DimChange::Decrease, lambda_s, max);
        prop_assert!(up.is_power_of_two() && down.is_power_of_two());
        prop_assert!(up == (c * lambda_s).min(max));
        prop_assert!(down == (c / lambda_s).max(1));
        prop_assert_eq!(next_committees(c, DimChange::NoChange, lambda_s, max), c);
    }

    #[test]
    fn chain_views_are_monotone_and_bounded(seed in any::<u64>(), lag in 0u64..16) {
        let honest: Vec<_> = (0..9).map(|i| (PeerId(i), NetAddr(u64::from(i)))).collect();
        let byz = [(PeerId(9), NetAddr(9))];
        let pool = ProducerPool { honest: &honest, byzantine: &byz };
        let cfg = ChainConfig {
            block_interval: 4,
            mu_b: 2.0,
            mu_s: 6,
            fairness_delta: 0.1,
            intro_lag_blocks: 2,
            delta: 16,
            liveness_window_blocks: 16,
        };
        let mut chain = ChainOracle::new(cfg, RandomOracle::new(seed, 64), stream(seed, "chain"));
        chain.prehistory(0, pool);
        for r in 1..=400 {
            chain.advance_round(r, pool, 0.5, &mut |_, _, _| None);
        }
        let (mut prev_view, mut prev_lead) = (0, 0);
        for r in 0..=400 {
            let (view, lead) = (chain.view_height(lag, r), chain.leading_height(r));
            prop_assert!(view <= lead && view >= prev_view && lead >= prev_lead);
            // A lagged view reaches every confirmed height within lag rounds.
            prop_assert!(view >= chain.leading_height(r.saturating_sub(lag)));
            prop_assert!(lead - chain.intro_height(r) <= 2);
            prev_view = view;
            prev_lead = lead;
        }
    }

    #[test]
    fn churn_respects_halflife_windows(
        seed in any::<u64>(),
        initial in 8u32..80,
        halflife in 16u64..96,
        fail_prob in 0.0f64..=0.5,
        growth in 0.5f64..=2.0,
    ) {
        let profile = ChurnProfile { fail_prob, growth_per_halflife: growth, honest_cap: None, enabled: true };
        let rounds = halflife * 6;
        let s = generate_churn(&profile, initial, halflife, rounds, seed).unwrap();
        let mut size = vec![initial; rounds as usize + 1];
        let mut leaves = vec![0u32; rounds as usize + 1];
        let mut joins = vec![0u32; rounds as usize + 1];
        for e in &s.events {
            match e.kind {
                ChurnKind::Leave => leaves[e.round as usize] += 1,
                ChurnKind::Join => joins[e.round as usize] += 1,
            }
        }
        for r in 1..=rounds as usize {
            size[r] = size[r - 1] + joins[r] - leaves[r];
        }
        for start in 1..=rounds as usize {
            let end = (start + halflife as usize).min(rounds as usize + 1);
            let l: u32 = leaves[start..end].iter().sum();
            let j: u32 = joins[start..end].iter().sum();
            prop_assert!(2 * l <= size[start - 1], "leaves {} from {}", l, size[start - 1]);
            prop_assert!(2 * j <= size[start - 1], "joins {} from {}", j, size[start - 1]);
        }
    }

    #[test]
    fn selected_catastrophes_verify(
        dim in 3u32..7,
        per in 10u32..24,
        eps in 0.0f64..0.3,
        delta in 0.0f64..0.3,
    ) {
        let committees = 1u32 << dim;
        let peers = committees * per / 2;
        let mut hp = vec![Vec::new(); committees as usize];
        for p in 0..peers {
            hp[(p % committees) as usize].push(p);
            hp[((p + 1) % committees) as usize].push(p);
        }
        for l in &mut hp {
            l.sort_unstable();
        }
        let input = CatastropheInput {
            committees,
            honest_peers: &hp,
            bucket_honest: &[],
            total_peers: peers,
            byzantine_peers: 0,
            honest_total: peers,
            safe_floor: 8,
            eps,
            delta,
            mu_n: 0.7,
            a: 1.05,
            b: 1.0,
            max_diameter: 2 * dim,
            mode: CorruptionMode::FailStop,
        };
        let report = select_catastrophe(&input).unwrap();
        let mut corrupted = vec![false; peers as usize];
        for &v in &report.victims {
            corrupted[v as usize] = true;
        }
        let stats = verify_catastrophe(&input, &corrupted).unwrap();
        prop_assert_eq!(stats.unsafe_committees, report.failed_committees.clone());
        prop_assert!(report.failed_committees.len() as f64 <= eps * f64::from(committees));
        prop_assert!(report.victims.len() as f64 <= delta * f64::from(peers));
    }

    #[test]
    fn strict_majority_wins_the_vote(
        current in prop::sample::select(vec![16u32, 64, 256]),
        yes in 0usize..40,
        no in 0usize..40,
        abstain in 0usize..10,
    ) {
        let grow = ParamProposal { committees: current * 4, change: DimChange::Increase };
        let keep = ParamProposal { committees: current, change: DimChange::NoChange };
        let payloads = std::iter::repeat_n(Some(grow), yes)
            .chain(std::iter::repeat_n(Some(keep), no))
            .chain(std::iter::repeat_n(None, abstain));
        let t = tally(payloads, current);
        prop_assert_eq!(t.votes, yes + no);
        prop_assert_eq!(t.abstentions, abstain);
        prop_assert_eq!(t.adopted, if yes > no { grow } else { keep });
    }

    #[test]
    fn recovery_counts_whole_bepochs(
        lengths in prop::collection::vec(20u64..60, 3..10),
        bad in prop::collection::vec((0u64..400, 1u64..30), 0..5),
        inj in 0u64..400,
    ) {
        let mut starts = vec![0u64];
        for l in &lengths {
            starts.push(starts.last().unwrap() + l);
        }
        let end = *starts.last().unwrap();
        prop_assume!(inj < end);
        let resilient = |r: u64| !bad.iter().any(|&(s, len)| s <= r && r < s + len);
        let got = measure_recovery(&starts, &resilient, Some(inj)).unwrap();
        // Oracle: first b-epoch index at or after the injection's with no bad round from max(start, inj).
        let e = starts.windows(2).position(|w| w[0] <= inj && inj < w[1]).unwrap();
        let want = (e..lengths.len())
            .find(|&j| (starts[j].max(inj)..starts[j + 1]).all(resilient))
            .map(|j| (j - e) as u64);
        prop_assert_eq!(got, want);
        // Fewer bad rounds never lengthens recovery.
        let none = measure_recovery(&starts, &|_| true, Some(inj)).unwrap();
        prop_assert_eq!(none, Some(0));
    }

    #[test]
    fn solved_parameters_are_self_consistent(
        log_n in 6u32..20,
        beta in 1.0f64..16.0,
        rho in 0.0f64..0.3,
    ) {
        let input = SolverInput { max_peers: 1u64 << log_n, block_interval: beta, byz_fraction: rho, ..SolverInput::default() };
        if let Ok(t) = solve_parameters(&input) {
            prop_assert!(t.halflife > t.halflife_floor);
            prop_assert!(t.buckets * t.bucket_size <= t.node_lifetime);
            prop_assert!((t.active_buckets + 1) * t.bucket_size <= t.dir_lifetime);
            prop_assert!(t.lifetime_slack >= 0 && t.capacity_slack >= 0.0);
        }
    }
}
