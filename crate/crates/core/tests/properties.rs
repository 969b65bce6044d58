use branchmc::channel::{expected_trace, p_ob, ChannelParams, SymbolSequence, VelocityMode};
use branchmc::mle::{log_likelihood, KnownChannel, NoiseModel};
use branchmc::nn::{make_windows, WindowConfig};
use branchmc::pipeline::{assign_splits, relative_error, MetricsReport, Prediction, Split};
use branchmc::sim::{axial_position, run_iteration, Particle, SimConfig};
use branchmc::{BranchTopology, CountTrace, TimeGrid, TraceMeta};
use proptest::prelude::*;

fn bits(len: usize) -> impl Strategy<Value = SymbolSequence> {
    proptest::collection::vec(0u8..=1, len).prop_map(|b| SymbolSequence::new(b).unwrap())
}

fn branch_params(topo: &BranchTopology, n_tx: f64) -> Vec<ChannelParams> {
    (0..topo.branch_count())
        .map(|k| ChannelParams::for_branch(topo, k, VelocityMode::Harmonic, n_tx, 1.0).unwrap())
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn moving_a_tx_changes_its_distance_by_the_same_amount(d in 0.02f64..0.25, delta in 0.0f64..0.05) {
        let a = BranchTopology::symmetric(&[d, 0.1]).unwrap();
        let b = a.with_distances(&[d + delta, 0.1]).unwrap();
        let moved = b.tx_rx_distance(0).unwrap() - a.tx_rx_distance(0).unwrap();
        prop_assert!((moved - delta).abs() < 1e-12);
        let total: f64 = b.branches().iter().map(|s| s.flow_rate).sum();
        prop_assert!((b.main_flow_rate() - total).abs() <= 1e-12 * total);
    }

    #[test]
    fn expected_trace_is_the_sum_of_branch_traces(
        d1 in 0.03f64..0.25, d2 in 0.03f64..0.25, a in bits(6), b in bits(6)
    ) {
        let topo = BranchTopology::symmetric(&[d1, d2]).unwrap();
        let params = branch_params(&topo, 1000.0);
        let grid = TimeGrid::over_horizon(0.01, 8.0).unwrap();
        let both = expected_trace(&params, &[a.clone(), b.clone()], grid).unwrap();
        let one = expected_trace(&params[..1], &[a], grid).unwrap();
        let two = expected_trace(&params[1..], &[b], grid).unwrap();
        for j in 0..grid.len {
            let sum = one.counts[j] + two.counts[j];
            prop_assert!((both.counts[j] - sum).abs() <= 1e-12 * sum.abs().max(1e-300));
        }
    }

    #[test]
    fn simulated_particles_are_conserved_and_bounded(seed in any::<u64>(), a in bits(4), b in bits(4)) {
        let topo = BranchTopology::symmetric(&[0.08, 0.16]).unwrap();
        let cfg = SimConfig { n_tx: 50, horizon: 6.0, ..SimConfig::new(topo) };
        let trace = run_iteration(&cfg, &[a.clone(), b.clone()], seed).unwrap();
        prop_assert_eq!(trace.meta.released, 50 * (a.ones() + b.ones()) as u64);
        prop_assert!(trace.counts.iter().all(|&c| c >= 0.0 && c <= trace.meta.released as f64));
        prop_assert_eq!(trace.counts.len(), 1200);
    }

    #[test]
    fn particle_positions_never_move_backwards(rho in 0.0f64..0.999, t in 0.0f64..20.0, dt in 0.0f64..5.0) {
        let topo = BranchTopology::symmetric(&[0.15]).unwrap();
        let p = Particle { rho, release_time: 0.0, branch_index: 0 };
        prop_assert!(axial_position(&p, &topo, t + dt).unwrap() >= axial_position(&p, &topo, t).unwrap());
    }

    #[test]
    fn likelihood_is_symmetric_under_swapping_identical_branches(
        d1 in 0.03f64..0.25, d2 in 0.03f64..0.25, seq in bits(5)
    ) {
        let topo = BranchTopology::symmetric(&[0.1, 0.1]).unwrap();
        let known = KnownChannel {
            topology: topo,
            sequences: vec![seq.clone(), seq],
            n_tx: 500.0,
            t_s: 1.0,
            velocity_mode: VelocityMode::Harmonic,
            dt_sample: None,
        };
        let counts: Vec<f64> = (0..600).map(|j| ((j * 7) % 13) as f64).collect();
        let trace = CountTrace { dt_sample: 0.01, counts, meta: TraceMeta::default() };
        for noise in [NoiseModel::Poisson, NoiseModel::Gaussian] {
            let ab = log_likelihood(&trace, &[d1, d2], &known, noise).unwrap();
            let ba = log_likelihood(&trace, &[d2, d1], &known, noise).unwrap();
            prop_assert!((ab - ba).abs() <= 1e-9 * ab.abs().max(1.0));
        }
    }

    #[test]
    fn window_targets_are_sorted(d in proptest::collection::vec(0.02f64..0.3, 1..5)) {
        let trace = CountTrace { dt_sample: 0.005, counts: vec![1.0; 2400], meta: TraceMeta::default() };
        let b = make_windows(&trace, &WindowConfig::default(), 1.0, &d).unwrap();
        for r in 0..b.len() {
            prop_assert!(b.targets.row(r).windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn splits_are_deterministic_and_cover_every_iteration(n in 1usize..60, seed in any::<u64>()) {
        let s = assign_splits(n, seed);
        prop_assert_eq!(&s, &assign_splits(n, seed));
        prop_assert_eq!(s.len(), n);
        if n >= 3 {
            prop_assert!(s.contains(&Split::Validation) && s.contains(&Split::Test));
        }
    }

    #[test]
    fn threshold_fractions_are_nested(
        cases in proptest::collection::vec((0.02f64..0.3, 0.0f64..0.4), 1..40)
    ) {
        let preds: Vec<Prediction> = cases
            .iter()
            .enumerate()
            .map(|(i, &(gt, p))| Prediction::new(i, vec![gt], vec![p]).unwrap())
            .collect();
        let report = MetricsReport::from_predictions("x", &preds).unwrap();
        prop_assert!(report.fractions.is_nested());
        for p in &preds {
            prop_assert!(relative_error(p.estimate[0], p.ground_truth[0]).unwrap() >= 0.0);
        }
    }
}

#[test]
fn single_pulse_probability_matches_expected_count() {
    let topo = BranchTopology::symmetric(&[0.12]).unwrap();
    let params = branch_params(&topo, 1000.0);
    let seq = SymbolSequence::parse("1").unwrap();
    let grid = TimeGrid::over_horizon(0.05, 5.0).unwrap();
    let trace = expected_trace(&params, &[seq], grid).unwrap();
    for (j, c) in trace.counts.iter().enumerate() {
        assert!((c - 1000.0 * p_ob(&params[0], grid.time(j))).abs() < 1e-9);
    }
}
