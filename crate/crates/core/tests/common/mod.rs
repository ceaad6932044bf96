#![allow(dead_code)]

use std::f64::consts::PI;
use std::path::PathBuf;

use mgsim::cli::parse_scenario;
use mgsim::components::{GridFormingConfig, InnerLoopModel, ZipCoefficients, ZipConfig};
use mgsim::engine::{NodeConfig, Scenario, SimulationSettings};
use mgsim::network::{build_topology, Line, LineParams, NetworkTopology, NodeKind, NodeSpec};
use mgsim::validation::random_network;
use rand::Rng;

pub const OMEGA: f64 = 2.0 * PI * 50.0;

pub fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name)
}

pub fn load_scenario(name: &str) -> Scenario {
    parse_scenario(&scenario_path(name)).expect("shipped scenario parses")
}

pub fn inverter(k_p: f64, k_q: f64) -> GridFormingConfig {
    GridFormingConfig {
        gamma: 1.0,
        nu: 3.18e-4,
        tau_p: 0.0318,
        k_p,
        k_q,
        omega_set: OMEGA,
        v_set: 400.0,
        p_set: 0.0,
        q_set: 0.0,
        inner: InnerLoopModel::FirstOrderLag,
    }
}

pub fn zip_load(zip: ZipCoefficients) -> NodeConfig {
    NodeConfig::Load(ZipConfig {
        coefficients: zip,
        kappa: 1e-3,
        c_snub: 1e-4,
    })
}

pub fn settings(horizon: f64, dt: f64) -> SimulationSettings {
    SimulationSettings::new(OMEGA, 400.0, horizon, dt)
}

/// Scenario from `(id, config)` pairs and `(from, to, R, L)` lines.
pub fn build(
    nodes: Vec<(&str, NodeConfig)>,
    lines: &[(usize, usize, f64, f64)],
    settings: SimulationSettings,
) -> Scenario {
    let specs = nodes.iter().map(|(id, c)| NodeSpec::new(*id, c.kind())).collect();
    let lines = lines
        .iter()
        .map(|&(a, b, r, l)| Line::new(a, b, LineParams::new(r, l).unwrap()))
        .collect();
    let topo = build_topology(specs, lines).unwrap();
    Scenario::new(topo, nodes.into_iter().map(|(_, c)| c).collect(), settings, vec![]).unwrap()
}

/// Random connected network with `gf` grid-forming nodes and modest random ZIP loads.
pub fn random_scenario<R: Rng>(rng: &mut R, n: usize, gf: usize) -> Scenario {
    let base = random_network(rng, n, OMEGA);
    let specs: Vec<NodeSpec> = (0..n)
        .map(|i| {
            NodeSpec::new(
                format!("n{i}"),
                if i < gf {
                    NodeKind::GridForming
                } else {
                    NodeKind::LoadOrFeeding
                },
            )
        })
        .collect();
    let topo: NetworkTopology = build_topology(specs, base.lines().to_vec()).unwrap();
    let configs = (0..n)
        .map(|i| {
            if i < gf {
                NodeConfig::GridForming(inverter(rng.gen_range(1e-4..3e-4), rng.gen_range(5e-4..2e-3)))
            } else {
                zip_load(ZipCoefficients {
                    a_p: rng.gen_range(0.0..0.01),
                    b_p: rng.gen_range(0.0..2.0),
                    c_p: rng.gen_range(0.0..1500.0),
                    a_q: rng.gen_range(0.0..0.005),
                    b_q: rng.gen_range(-1.0..1.0),
                    c_q: rng.gen_range(-300.0..600.0),
                })
            }
        })
        .collect();
    Scenario::new(topo, configs, settings(1.0, 1e-3), vec![]).unwrap()
}
