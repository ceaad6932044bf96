mod common;

use mgsim::engine::{simulate, synchronous_equilibrium};
use mgsim::network::NodeKind;
use mgsim::validation::{
    audit_equilibrium, is_monotone, oracle_crosscheck, outside_layers, random_network, static_line_check,
    trajectory_gaps, SignalGaps, SweepRow,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{load_scenario, OMEGA};

fn row(epsilon: f64, g: f64) -> SweepRow {
    SweepRow {
        epsilon,
        boundary_layer: 0.0,
        gaps: Ok(SignalGaps { delta: g, v: g, p_m: g }),
    }
}

#[test]
fn trajectory_has_no_gap_to_itself() {
    let traj = simulate(&load_scenario("ref3bus.json")).unwrap();
    let g = trajectory_gaps(&traj, &traj, |_| true).unwrap();
    assert_eq!((g.delta, g.v, g.p_m), (0.0, 0.0, 0.0));
}

#[test]
fn layers_exclude_start_and_events() {
    assert!(!outside_layers(0.005, 0.01, &[1.0]));
    assert!(outside_layers(0.5, 0.01, &[1.0]));
    assert!(!outside_layers(1.005, 0.01, &[1.0]));
    assert!(outside_layers(1.02, 0.01, &[1.0]));
}

#[test]
fn monotonicity_requires_every_row() {
    assert!(is_monotone(&[row(1.0, 1.0), row(0.1, 0.5), row(0.01, 0.1)], 0.95));
    assert!(!is_monotone(&[row(1.0, 1.0), row(0.1, 0.97)], 0.95));
    let mut failed = row(0.01, 0.0);
    failed.gaps = Err("integration failed".into());
    assert!(!is_monotone(&[row(1.0, 1.0), failed], 0.95));
}

#[test]
fn uniform_voltages_carry_no_line_current() {
    let s = load_scenario("ref3bus.json");
    assert_eq!(static_line_check(s.topology(), OMEGA, &[0.3; 3], &[400.0; 3]), 0.0);
}

#[test]
fn power_flow_oracle_on_random_networks() {
    let report = oracle_crosscheck(100, 10, 17, OMEGA);
    assert_eq!(report.rows.len(), 100);
    assert!(report.all_pass(), "{:?}", report.dumps);
}

#[test]
fn audit_of_reference_equilibrium_balances() {
    let s = load_scenario("ref3bus.json");
    let eq = synchronous_equilibrium(&s).unwrap();
    let audit = audit_equilibrium(&s, &eq).unwrap();
    assert!(audit.relative_residual() < 1e-10);
    assert!(audit.losses > 0.0 && audit.generation > audit.losses);
    assert!(audit.nodes.iter().all(|n| n.mismatch < 1e-6));
}

proptest! {
    #[test]
    fn random_networks_are_connected_and_well_formed(seed in any::<u64>(), n in 2usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let topo = random_network(&mut rng, n, OMEGA);
        prop_assert_eq!(topo.node_count(), n);
        prop_assert!(topo.line_count() >= n - 1);
        prop_assert_eq!(topo.kind(0), NodeKind::GridForming);
        for l in topo.lines() {
            let ratio = l.params.reactance(OMEGA) / l.params.resistance();
            prop_assert!((0.5 - 1e-12..=5.0 + 1e-12).contains(&ratio));
        }
    }
}
