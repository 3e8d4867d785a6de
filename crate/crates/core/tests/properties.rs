use proptest::prelude::*;
use rand::Rng;

use dfl_core::analysis::{compute_zetas, phi, BoundConstants, BoundMatrices};
use dfl_core::channel::{build_channel_matrix, ChannelMatrix, LinkBudget, PacketPlan};
use dfl_core::consensus::{build_aware, build_unaware, mixing_gap, optimal_alpha, ConsensusMode};
use dfl_core::flcore::{aggregate_once, lossy_receive, FleetState, LossPolicy};
use dfl_core::linalg::{hadamard, matrix_power, spectral_norm, uniform_average, Mat};
use dfl_core::seed::{stream, SimRng};
use dfl_core::topology::{edge_target, Topology};
use dfl_core::verify::{mc_expectation_bias, McInstance};

fn graph(seed: u64, n_max: usize, side_m: f64) -> (Topology, SimRng) {
    let mut rng = stream(seed, &[]);
    let n = rng.random_range(2..=n_max);
    let coords = (0..n)
        .map(|_| (rng.random_range(0.0..side_m), rng.random_range(0.0..side_m)))
        .collect();
    let base = Topology::from_coords(coords).unwrap();
    let rho = loop {
        let rho = rng.random_range(0.05..=1.0);
        if edge_target(rho, n) >= n - 1 {
            break rho;
        }
    };
    (base.build_edges_by_density(rho, &mut rng).unwrap(), rng)
}

fn uniform_success(topo: &Topology, rng: &mut SimRng, lo: f64) -> ChannelMatrix {
    let n = topo.n_devices();
    let mut t = Mat::identity(n, n);
    for (a, b) in topo.edges() {
        let s = rng.random_range(lo..=1.0);
        t[(a, b)] = s;
        t[(b, a)] = s;
    }
    ChannelMatrix::from_matrix(t, topo).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn closed_form_alpha_beats_sampled_steps(seed in any::<u64>()) {
        let (topo, mut rng) = graph(seed, 12, 5000.0);
        let best = optimal_alpha(&topo).unwrap().spectral_norm;
        let cap = 1.0 / topo.max_degree() as f64;
        for _ in 0..50 {
            let a = rng.random_range(0.0..cap).max(1e-9);
            prop_assert!(best <= mixing_gap(&topo, a).unwrap() + 1e-10);
        }
    }

    #[test]
    fn compensated_design_reduces_to_plain_in_expectation(seed in any::<u64>()) {
        let (topo, mut rng) = graph(seed, 15, 5000.0);
        let ch = uniform_success(&topo, &mut rng, 0.05);
        let alpha = optimal_alpha(&topo).unwrap().alpha;
        let plain = build_unaware(&topo, alpha).unwrap();
        let aware = build_aware(&topo, &ch, alpha).unwrap();
        let diff = hadamard(aware.matrix(), ch.succ()) - plain.matrix();
        prop_assert!(diff.amax() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn distance_to_average_shrinks_with_powers(seed in any::<u64>()) {
        let (topo, _) = graph(seed, 12, 5000.0);
        let c = build_unaware(&topo, optimal_alpha(&topo).unwrap().alpha).unwrap();
        let avg = uniform_average(topo.n_devices());
        let mut prev = f64::INFINITY;
        for j in 1..=40 {
            let gap = spectral_norm(&(matrix_power(c.matrix(), j) - &avg)).unwrap();
            prop_assert!(gap <= prev * (1.0 + 1e-9) + 1e-14);
            prev = gap;
        }
    }

    #[test]
    fn perfect_links_track_the_error_free_shadow(seed in any::<u64>()) {
        let (topo, mut rng) = graph(seed, 8, 5000.0);
        let n = topo.n_devices();
        let c = build_unaware(&topo, optimal_alpha(&topo).unwrap().alpha).unwrap().matrix().clone();
        let succ = ChannelMatrix::perfect(&topo).succ().clone();
        let plan = PacketPlan::by_packet_len(12, 5).unwrap();
        let mut fleet = FleetState::new(vec![1.0 / n as f64; n], vec![0.0; 12]).unwrap();
        fleet.w = (0..n).map(|_| (0..12).map(|_| rng.random_range(-3.0..3.0)).collect()).collect();
        fleet.x = fleet.w.clone();
        for j in 1..=6 {
            aggregate_once(&mut fleet, &c, &succ, &plan, LossPolicy::ZeroFill, seed, j);
            prop_assert_eq!(&fleet.w, &fleet.x);
        }
    }

    #[test]
    fn received_weight_never_exceeds_row_sum(seed in any::<u64>()) {
        let (topo, mut rng) = graph(seed, 10, 5000.0);
        let n = topo.n_devices();
        let c = build_unaware(&topo, optimal_alpha(&topo).unwrap().alpha).unwrap().matrix().clone();
        let ch = uniform_success(&topo, &mut rng, 0.0);
        let plan = PacketPlan::by_packet_len(20, 3).unwrap();
        let ones = vec![vec![1.0; 20]; n];
        for r in 0..n {
            let got = lossy_receive(&ones, r, &c, ch.succ(), &plan, LossPolicy::ZeroFill, &mut rng);
            let perfect = lossy_receive(&ones, r, &c, &Mat::from_element(n, n, 1.0), &plan, LossPolicy::ZeroFill, &mut rng);
            for (g, p) in got.iter().zip(&perfect) {
                prop_assert!(*g <= 1.0 + 1e-12);
                prop_assert!((p - 1.0).abs() < 1e-12);
            }
        }
    }
}

/// Fewer packet errors never make the bound worse.
#[test]
fn bound_is_monotone_in_error_scaling() {
    let budget = LinkBudget::default();
    let plan = PacketPlan::by_packet_count(1_210_000, 1600).unwrap();
    for seed in 0..20u64 {
        let (topo, mut rng) = graph(seed, 12, 4000.0);
        let topo = if topo.n_devices() < 3 { graph(seed + 100, 12, 4000.0).0 } else { topo };
        let base = build_channel_matrix(&topo, &budget, &plan).unwrap();
        let base = if base.tau_eps() > 0.0 { base } else { uniform_success(&topo, &mut rng, 0.5) };
        let alpha = optimal_alpha(&topo).unwrap().alpha;
        let c = build_unaware(&topo, alpha).unwrap().matrix().clone();
        let p_max = 0.3;
        for j in [1usize, 2, 5, 10] {
            let mut prev = f64::INFINITY;
            for factor in [1.0, 0.5, 0.25, 0.1, 0.01] {
                let ch = base.with_scaled_errors(factor, &topo).unwrap();
                let z = compute_zetas(&BoundConstants::CNN, ch.tau_eps()).unwrap();
                let norms = BoundMatrices::compute(&c, ch.succ(), j, ConsensusMode::Unaware).norms().unwrap();
                let v = phi(&norms, &z, p_max);
                assert!(v <= prev * (1.0 + 1e-9), "seed {seed} J={j} factor {factor}: {v} > {prev}");
                prev = v;
            }
        }
    }
}

/// Quadrupling the replications roughly halves the worst bias error.
#[test]
fn bias_error_shrinks_with_replications() {
    let c = Mat::from_row_slice(3, 3, &[0.5, 0.25, 0.25, 0.25, 0.5, 0.25, 0.25, 0.25, 0.5]);
    let t = Mat::from_row_slice(3, 3, &[1.0, 0.6, 0.4, 0.6, 1.0, 0.5, 0.4, 0.5, 1.0]);
    let plan = PacketPlan::by_packet_len(16, 4).unwrap();
    let w0 = Mat::from_fn(3, 16, |i, k| ((i * 16 + k) as f64 * 0.37).sin());
    let inst = McInstance { c, t, w0, plan, mode: ConsensusMode::Unaware };
    let err = |reps, seed| mc_expectation_bias(&inst, 2, reps, seed).unwrap().max_abs_error;
    let small: f64 = (0..4).map(|s| err(1_000, s)).sum();
    let large: f64 = (0..4).map(|s| err(16_000, s)).sum();
    assert!(large < 0.5 * small, "{large} vs {small}");
}
