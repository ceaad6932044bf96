mod common;

use mgsim::components::{CascadeParams, InnerLoopModel, ZipCoefficients};
use mgsim::engine::simulate::simulate_with;
use mgsim::engine::{
    find_equilibrium, simulate, synchronous_equilibrium, DynamicalSystem, EngineError, FullSystem, InitialCondition,
    LogKind, Method, ModelKind, NodeConfig, OmegaCom, ReducedSystem, RunOptions,
};
use mgsim::network::{build_admittance, power_flow};
use mgsim::signals::DqPair;
use proptest::prelude::*;

use common::{build, inverter, load_scenario, settings, zip_load, OMEGA};

#[test]
fn ref3bus_state_dimensions() {
    let s = load_scenario("ref3bus.json");
    let red = ReducedSystem::new(&s, OMEGA).unwrap();
    assert_eq!((red.ode_dim(), red.algebraic_dim()), (6, 2));
    let full = FullSystem::new(&s, OMEGA).unwrap();
    let lay = full.layout();
    assert_eq!(lay.dim, 18);
    assert_eq!(lay.inverter_offsets, vec![0, 5]);
    assert_eq!(lay.line_offset, 10);
    assert_eq!(lay.load_offset, 14);
}

#[test]
fn lifted_equilibrium_is_stationary_in_full_model() {
    let s = load_scenario("ref3bus.json");
    let eq = synchronous_equilibrium(&s).unwrap();
    let mut full = FullSystem::new(&s, eq.omega_com).unwrap();
    let x = eq.reduced_state(&s);
    let n_gf = s.grid_forming_nodes().len();
    let p_m: Vec<f64> = (0..n_gf).map(|j| x[3 * j + 1]).collect();
    let q_m: Vec<f64> = (0..n_gf).map(|j| x[3 * j + 2]).collect();
    let lifted = full.lift(&eq.delta, &eq.v, &p_m, &q_m).unwrap();
    let mut dx = vec![0.0; full.dim()];
    full.derivative(0.0, &lifted, &mut dx).unwrap();
    let worst = dx.iter().fold(0.0f64, |m, d| m.max(d.abs()));
    let scale = lifted.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(worst < 1e-6 * scale, "max |ẋ| = {worst:e}");
}

#[test]
fn node_currents_satisfy_kirchhoff() {
    let s = load_scenario("ref3bus.json");
    let eq = find_equilibrium(&s, OMEGA).unwrap();
    let mut full = FullSystem::new(&s, OMEGA).unwrap();
    let gf = s.grid_forming_nodes();
    let p_m: Vec<f64> = gf.iter().map(|&i| eq.p[i]).collect();
    let q_m: Vec<f64> = gf.iter().map(|&i| eq.q[i]).collect();
    let x = full.lift(&eq.delta, &eq.v, &p_m, &q_m).unwrap();
    let inj = full.node_injections(&x);
    let total = inj.iter().fold(DqPair::new(0.0, 0.0), |a, &b| a + b);
    let scale = inj.iter().fold(0.0f64, |m, i| m.max(i.norm()));
    assert!(total.norm() < 1e-12 * scale, "Σ injections = {total:?}");
}

#[test]
fn reduced_equilibrium_does_not_drift() {
    let s = load_scenario("ref3bus.json");
    let mut set = s.settings;
    set.horizon = 10.0;
    set.dt = 1e-2;
    set.omega_com = OmegaCom::Synchronous;
    set.initial = InitialCondition::Equilibrium;
    let s = s.with_settings(set).unwrap().with_events(vec![]).unwrap();
    let traj = simulate(&s).unwrap();
    let (first, last) = (&traj.samples[0], traj.samples.last().unwrap());
    for i in 0..3 {
        assert!((first.delta[i] - last.delta[i]).abs() < 1e-8);
        assert!((first.v[i] - last.v[i]).abs() < 1e-8 * first.v[i]);
    }
}

#[test]
fn no_load_settles_at_set_points() {
    let s = load_scenario("noload.json");
    let eq = synchronous_equilibrium(&s).unwrap();
    assert!((eq.omega_s - OMEGA).abs() < 1e-9);
    for &i in &s.grid_forming_nodes() {
        assert!(eq.p[i].abs() < 1e-6 && eq.q[i].abs() < 1e-6);
        assert!((eq.v[i] - 400.0).abs() < 1e-9);
    }
}

#[test]
fn symmetric_inverters_share_equally() {
    let mut st = settings(1.0, 1e-3);
    st.initial = InitialCondition::Equilibrium;
    let s = build(
        vec![
            ("a", NodeConfig::GridForming(inverter(1.57e-4, 1e-3))),
            ("b", NodeConfig::GridForming(inverter(1.57e-4, 1e-3))),
            (
                "m",
                zip_load(ZipCoefficients {
                    a_p: 0.05,
                    c_p: 5000.0,
                    a_q: 0.02,
                    ..Default::default()
                }),
            ),
        ],
        &[(0, 2, 0.2, 1e-3), (1, 2, 0.2, 1e-3)],
        st,
    );
    let eq = synchronous_equilibrium(&s).unwrap();
    assert!((eq.p[0] - eq.p[1]).abs() < 1e-9 * eq.p[0].abs());
    assert!((eq.q[0] - eq.q[1]).abs() < 1e-9 * eq.q[0].abs());
    assert!((eq.v[0] - eq.v[1]).abs() < 1e-9);
}

#[test]
fn load_step_is_logged_and_grid_is_exact() {
    let s = load_scenario("ref3bus.json");
    let traj = simulate(&s).unwrap();
    assert_eq!(traj.samples.len(), 2001);
    assert_eq!(traj.samples[1000].t, 1.0);
    assert!(traj
        .log
        .iter()
        .any(|e| e.t == 1.0 && matches!(&e.kind, LogKind::LoadStep { node } if node == "l3")));
    // Heavier load lowers the frequency.
    let w = |k: usize| traj.samples[k].omega[0].unwrap();
    assert!(w(2000) < w(999));
}

#[test]
fn full_model_integrators_agree() {
    let s = load_scenario("ref3bus.json");
    let mut opts = RunOptions::from_settings(&s.settings);
    opts.model = ModelKind::Full;
    opts.horizon = 0.3;
    let rk = simulate_with(&s, &opts).unwrap();
    opts.method = Method::Trapezoidal;
    let tr = simulate_with(&s, &opts).unwrap();
    let (a, b) = (rk.samples.last().unwrap(), tr.samples.last().unwrap());
    for i in 0..3 {
        assert!((a.v[i] - b.v[i]).abs() < 1e-2 * a.v[i], "V {} vs {}", a.v[i], b.v[i]);
        assert!((a.delta[i] - b.delta[i]).abs() < 1e-3);
    }
}

#[test]
fn cascade_inner_loop_tracks_reduced_model() {
    let s = load_scenario("ref3bus.json");
    let configs = s
        .configs()
        .iter()
        .map(|c| match c {
            NodeConfig::GridForming(g) => {
                let mut g = *g;
                g.inner = InnerLoopModel::LcPiCascade(CascadeParams::default());
                NodeConfig::GridForming(g)
            }
            other => *other,
        })
        .collect();
    let s = s.with_configs(configs).unwrap();
    let mut opts = RunOptions::from_settings(&s.settings);
    opts.horizon = 0.2;
    let red = simulate_with(&s, &opts).unwrap();
    opts.model = ModelKind::Full;
    let full = simulate_with(&s, &opts).unwrap();
    assert_eq!(full.states[0].len(), 2 * (3 + 8) + 4 + 4);
    let (a, b) = (red.samples.last().unwrap(), full.samples.last().unwrap());
    for i in 0..3 {
        assert!(b.v[i].is_finite());
        assert!((a.v[i] - b.v[i]).abs() < 0.02 * a.v[i], "V {} vs {}", a.v[i], b.v[i]);
    }
}

#[test]
fn excessive_load_is_reported_infeasible() {
    let s = load_scenario("minimal.json");
    let mut configs = s.configs().to_vec();
    configs[1] = zip_load(ZipCoefficients {
        c_p: 5e7,
        ..Default::default()
    });
    let s = s.with_configs(configs).unwrap();
    let err = find_equilibrium(&s, OMEGA).unwrap_err();
    assert!(err.is_model_failure(), "{err}");
    let err = simulate(&s).unwrap_err();
    assert!(err.is_model_failure(), "{err}");
}

#[test]
fn zero_nu_rejected_for_full_model() {
    let s = load_scenario("minimal.json");
    let mut configs = s.configs().to_vec();
    if let NodeConfig::GridForming(g) = &mut configs[0] {
        g.nu = 0.0;
    }
    match s.with_configs(configs) {
        Ok(s) => assert!(matches!(FullSystem::new(&s, OMEGA), Err(EngineError::Component { .. }))),
        Err(e) => assert!(!e.is_model_failure()),
    }
}

proptest! {
    #[test]
    fn power_flow_invariant_under_common_angle_shift(shift in -10.0f64..10.0, d1 in -1.0f64..1.0, d2 in -1.0f64..1.0) {
        let s = load_scenario("ref3bus.json");
        let y = build_admittance(s.topology(), OMEGA).unwrap();
        let v = [400.0, 395.0, 380.0];
        let base = [0.0, d1, d2];
        let shifted: Vec<f64> = base.iter().map(|d| d + shift).collect();
        let (p0, q0) = power_flow(&base, &v, &y).unwrap();
        let (p1, q1) = power_flow(&shifted, &v, &y).unwrap();
        for i in 0..3 {
            prop_assert!((p0[i] - p1[i]).abs() < 1e-9 * (1.0 + p0[i].abs()));
            prop_assert!((q0[i] - q1[i]).abs() < 1e-9 * (1.0 + q0[i].abs()));
        }
    }
}
