//! Time-domain runs with load-step events and recorded outputs.

use nalgebra::DMatrix;

use crate::components::{droop_control, zip_power, GridFormingConfig, ZipCoefficients};
use crate::network::{build_admittance, power_flow_into, NodeKind};
use crate::signals::DqPair;

use super::equilibrium::{find_equilibrium, synchronous_equilibrium, Equilibrium};
use super::full::FullSystem;
use super::integrate::{integrate, DynamicalSystem, IntegrationStats, IntegratorOptions, Method};
use super::newton::{fd_jacobian, newton_solve, NewtonOptions};
use super::reduced::ReducedSystem;
use super::scenario::{FilterStart, InitialCondition, ModelKind, OmegaCom, Scenario, SimulationSettings};
use super::EngineError;

/// Outputs at one time point. Angles are unwrapped; `omega` is `None` for loads.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub v: Vec<f64>,
    pub delta: Vec<f64>,
    pub omega: Vec<Option<f64>>,
    /// Injected powers (consumption is negative).
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    /// Filtered active power per grid-forming node.
    pub p_m: Vec<f64>,
    /// Line currents, source → sink, common frame.
    pub lines: Vec<DqPair>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LogKind {
    LoadStep { node: String },
    EventShifted { requested: f64 },
    VoltageClamp { node: String, active: bool },
    StepRetry { depth: u32 },
    Substeps { count: usize, spectral_radius: f64 },
    Warning(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogEntry {
    pub t: f64,
    pub kind: LogKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub node_ids: Vec<String>,
    pub node_kinds: Vec<NodeKind>,
    pub line_count: usize,
    pub model: ModelKind,
    pub method: Method,
    pub omega_com: f64,
    pub samples: Vec<Sample>,
    pub states: Vec<Vec<f64>>,
    pub log: Vec<LogEntry>,
}

impl Trajectory {
    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        self.samples.iter().map(|s| s.t)
    }

    pub fn clamp_count(&self) -> usize {
        self.log
            .iter()
            .filter(|e| matches!(e.kind, LogKind::VoltageClamp { active: true, .. }))
            .count()
    }

    pub fn retry_count(&self) -> usize {
        self.log
            .iter()
            .filter(|e| matches!(e.kind, LogKind::StepRetry { .. }))
            .count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    pub model: ModelKind,
    pub method: Method,
    pub dt: f64,
    pub horizon: f64,
    /// Internal steps per output interval; `None` picks them from the
    /// stiffness of the full model (RK4) or uses 1.
    pub substeps: Option<usize>,
}

impl RunOptions {
    pub fn from_settings(s: &SimulationSettings) -> Self {
        RunOptions {
            model: s.model,
            method: s.method,
            dt: s.dt,
            horizon: s.horizon,
            substeps: None,
        }
    }
}

/// Resolves the common-frame speed; returns the equilibrium when one was solved on the way.
pub fn resolve_omega_com(scenario: &Scenario) -> Result<(f64, Option<Equilibrium>), EngineError> {
    match scenario.settings.omega_com {
        OmegaCom::Nominal => Ok((scenario.settings.omega_nominal, None)),
        OmegaCom::Fixed(w) => Ok((w, None)),
        OmegaCom::Synchronous => {
            let eq = synchronous_equilibrium(scenario)?;
            Ok((eq.omega_com, Some(eq)))
        }
    }
}

/// Reduced ODE state with node angles and voltages.
pub type InitialState = (Vec<f64>, Vec<f64>, Vec<f64>);

/// Initial reduced ODE state and node phasors.
pub fn initial_reduced_state(
    scenario: &Scenario,
    omega_com: f64,
    equilibrium: Option<&Equilibrium>,
) -> Result<InitialState, EngineError> {
    match scenario.settings.initial {
        InitialCondition::Equilibrium => {
            let eq = match equilibrium {
                Some(eq) if eq.omega_com == omega_com => eq.clone(),
                _ => find_equilibrium(scenario, omega_com)?,
            };
            Ok((eq.reduced_state(scenario), eq.delta, eq.v))
        }
        InitialCondition::FlatStart => match scenario.settings.filter_start {
            FilterStart::Cold => {
                let x = vec![0.0; 3 * scenario.grid_forming_nodes().len()];
                let mut sys = ReducedSystem::new(scenario, omega_com)?;
                sys.solve(&x)?;
                let (d, v) = sys.node_phasors();
                Ok((x, d.to_vec(), v.to_vec()))
            }
            FilterStart::Settled => settled_flat_start(scenario, omega_com),
        },
    }
}

/// `δ = 0` at the inverters with `P^m, Q^m` equal to the powers they produce.
fn settled_flat_start(scenario: &Scenario, omega_com: f64) -> Result<InitialState, EngineError> {
    let y = build_admittance(scenario.topology(), omega_com)?;
    let n = y.size();
    let gf = scenario.grid_forming_nodes();
    let gf_cfg: Vec<GridFormingConfig> = gf
        .iter()
        .map(|&i| *scenario.grid_forming(i).expect("grid-forming"))
        .collect();
    let loads: Vec<(usize, ZipCoefficients)> = scenario
        .load_nodes()
        .into_iter()
        .map(|i| (i, scenario.load(i).expect("load").coefficients))
        .collect();
    let (n1, nl) = (gf.len(), loads.len());
    let mut delta = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut q = vec![0.0; n];
    let mut residual = |u: &[f64], r: &mut [f64]| {
        for (j, (&node, c)) in gf.iter().zip(&gf_cfg).enumerate() {
            v[node] = droop_control(0.0, u[j], c).1;
        }
        for (k, &(node, _)) in loads.iter().enumerate() {
            delta[node] = u[n1 + k];
            v[node] = u[n1 + nl + k];
        }
        if v.iter().any(|&x| !(x > 0.0)) {
            r.fill(f64::NAN);
            return;
        }
        power_flow_into(&delta, &v, &y, &mut p, &mut q);
        for (j, &node) in gf.iter().enumerate() {
            r[j] = u[j] - q[node];
        }
        for (k, &(node, ref zip)) in loads.iter().enumerate() {
            let (ps, qs) = zip_power(v[node], zip);
            r[n1 + k] = p[node] - ps;
            r[n1 + nl + k] = q[node] - qs;
        }
    };
    let mut u0 = vec![0.0; n1 + 2 * nl];
    for (j, c) in gf_cfg.iter().enumerate() {
        u0[j] = c.q_set;
    }
    for k in 0..nl {
        u0[n1 + nl + k] = scenario.settings.v_nominal;
    }
    let opts = NewtonOptions {
        tol: 1e-12 * scenario.power_scale(&y),
        max_iter: 100,
        ..Default::default()
    };
    let rep = newton_solve(&mut residual, &u0, &opts).map_err(|err| EngineError::Infeasible {
        node: scenario.node_id(gf[0]).to_string(),
        detail: format!("flat start has no consistent filter state ({err})"),
    })?;
    let mut r = vec![0.0; u0.len()];
    residual(&rep.solution, &mut r);
    let mut x = Vec::with_capacity(3 * n1);
    for (j, &node) in gf.iter().enumerate() {
        x.extend_from_slice(&[0.0, p[node], rep.solution[j]]);
    }
    Ok((x, delta, v))
}

/// Spectral radius of the finite-difference Jacobian at `x`.
pub fn spectral_radius<S: DynamicalSystem + ?Sized>(sys: &mut S, t: f64, x: &[f64]) -> Result<f64, EngineError> {
    let n = x.len();
    let mut f0 = vec![0.0; n];
    sys.derivative(t, x, &mut f0)?;
    let mut jac = DMatrix::zeros(n, n);
    let mut err = None;
    let mut f = |y: &[f64], out: &mut [f64]| {
        if let Err(e) = sys.derivative(t, y, out) {
            err.get_or_insert(e);
            out.fill(f64::NAN);
        }
    };
    fd_jacobian(&mut f, x, &f0, &mut jac);
    if let Some(e) = err {
        return Err(e);
    }
    let rho = jac.complex_eigenvalues().iter().fold(0.0f64, |m, l| m.max(l.norm()));
    Ok(if rho.is_finite() { rho } else { jac.amax() * n as f64 })
}

enum Model {
    Reduced(ReducedSystem),
    Full(FullSystem),
}

fn sample_of(model: &mut Model, t: f64, x: &[f64]) -> Result<Sample, EngineError> {
    match model {
        Model::Reduced(s) => s.sample(t, x),
        Model::Full(s) => Ok(s.sample(t, x)),
    }
}

pub fn simulate(scenario: &Scenario) -> Result<Trajectory, EngineError> {
    simulate_with(scenario, &RunOptions::from_settings(&scenario.settings))
}

pub fn simulate_with(scenario: &Scenario, opts: &RunOptions) -> Result<Trajectory, EngineError> {
    if !(opts.dt > 0.0 && opts.dt.is_finite() && opts.horizon >= opts.dt) {
        return Err(EngineError::InvalidOption(format!(
            "need 0 < dt <= horizon, got dt = {}, horizon = {}",
            opts.dt, opts.horizon
        )));
    }
    let mut log = Vec::new();
    for &node in &scenario.grid_forming_nodes() {
        if let Some(w) = scenario.grid_forming(node).and_then(|g| g.time_scale_warning()) {
            log::warn!("node {}: {w}", scenario.node_id(node));
            log.push(LogEntry {
                t: 0.0,
                kind: LogKind::Warning(format!("node {}: {w}", scenario.node_id(node))),
            });
        }
    }
    let (omega_com, eq) = resolve_omega_com(scenario)?;
    let (x_red, delta0, v0) = initial_reduced_state(scenario, omega_com, eq.as_ref())?;

    let n_total = (opts.horizon / opts.dt).round() as usize;
    if ((n_total as f64) * opts.dt - opts.horizon).abs() > 1e-9 * opts.horizon {
        log.push(LogEntry {
            t: 0.0,
            kind: LogKind::Warning(format!("horizon rounded to {} s", n_total as f64 * opts.dt)),
        });
    }

    let (mut model, x0) = match opts.model {
        ModelKind::Reduced => {
            let mut sys = ReducedSystem::new(scenario, omega_com)?;
            sys.set_load_guess(&delta0, &v0);
            (Model::Reduced(sys), x_red)
        }
        ModelKind::Full => {
            let sys = FullSystem::new(scenario, omega_com)?;
            let gf = scenario.grid_forming_nodes();
            let p_m: Vec<f64> = (0..gf.len()).map(|j| x_red[3 * j + 1]).collect();
            let q_m: Vec<f64> = (0..gf.len()).map(|j| x_red[3 * j + 2]).collect();
            let x = sys.lift(&delta0, &v0, &p_m, &q_m)?;
            (Model::Full(sys), x)
        }
    };

    // events snapped to the output grid, grouped by index
    let mut boundaries: Vec<(usize, Vec<usize>)> = Vec::new();
    for (e_idx, e) in scenario.events().iter().enumerate() {
        let k = ((e.time / opts.dt).round() as usize).min(n_total);
        if ((k as f64) * opts.dt - e.time).abs() > 1e-9 * opts.dt.max(e.time) {
            log.push(LogEntry {
                t: k as f64 * opts.dt,
                kind: LogKind::EventShifted { requested: e.time },
            });
        }
        match boundaries.last_mut() {
            Some((kk, list)) if *kk == k => list.push(e_idx),
            _ => boundaries.push((k, vec![e_idx])),
        }
    }

    let mut samples = Vec::with_capacity(n_total + 1);
    let mut states = Vec::with_capacity(n_total + 1);
    let mut x = x0;
    let mut k_cur = 0usize;
    let mut next_event = 0usize;
    loop {
        if next_event < boundaries.len() && boundaries[next_event].0 == k_cur {
            if k_cur == 0 && samples.is_empty() {
                samples.push(sample_of(&mut model, 0.0, &x)?);
                states.push(x.clone());
            }
            for &e_idx in &boundaries[next_event].1 {
                let e = scenario.events()[e_idx];
                match &mut model {
                    Model::Reduced(s) => s.set_load_coefficients(e.node, e.coefficients),
                    Model::Full(s) => s.set_load_coefficients(e.node, e.coefficients),
                }
                log.push(LogEntry {
                    t: k_cur as f64 * opts.dt,
                    kind: LogKind::LoadStep {
                        node: scenario.node_id(e.node).to_string(),
                    },
                });
            }
            next_event += 1;
        }
        let k_end = boundaries.get(next_event).map_or(n_total, |b| b.0);
        if k_end == k_cur {
            if k_cur >= n_total {
                break;
            }
            continue;
        }
        let t0 = k_cur as f64 * opts.dt;
        let substeps = match (opts.substeps, &mut model, opts.method) {
            (Some(s), _, _) => s.max(1),
            (None, Model::Full(sys), Method::Rk4) => {
                let rho = spectral_radius(sys, t0, &x)?;
                let count = ((opts.dt * rho).ceil() as usize).max(1);
                log.push(LogEntry {
                    t: t0,
                    kind: LogKind::Substeps {
                        count,
                        spectral_radius: rho,
                    },
                });
                count
            }
            _ => 1,
        };
        let iopts = IntegratorOptions::new(opts.method, opts.dt).with_substeps(substeps);
        let skip_first = !samples.is_empty();
        let base = k_cur;
        let observe = |sys: &mut Model, k: usize, _t: f64, xs: &[f64]| -> Result<(), EngineError> {
            if k == 0 && skip_first {
                return Ok(());
            }
            let t = (base + k) as f64 * opts.dt;
            samples.push(sample_of(sys, t, xs)?);
            states.push(xs.to_vec());
            Ok(())
        };
        let (x_end, stats) = integrate(&mut model, t0, &x, k_end - k_cur, &iopts, observe)?;
        record_stats(&mut log, &stats);
        x = x_end;
        k_cur = k_end;
        if k_cur >= n_total && next_event >= boundaries.len() {
            break;
        }
    }

    if let Model::Full(sys) = &model {
        for &(t, node, active) in &sys.clamp_changes {
            log.push(LogEntry {
                t,
                kind: LogKind::VoltageClamp {
                    node: scenario.node_id(node).to_string(),
                    active,
                },
            });
        }
    }
    log.sort_by(|a, b| a.t.total_cmp(&b.t));

    let topo = scenario.topology();
    Ok(Trajectory {
        node_ids: topo.nodes().iter().map(|s| s.id.clone()).collect(),
        node_kinds: (0..topo.node_count()).map(|i| topo.kind(i)).collect(),
        line_count: topo.line_count(),
        model: opts.model,
        method: opts.method,
        omega_com,
        samples,
        states,
        log,
    })
}

fn record_stats(log: &mut Vec<LogEntry>, stats: &IntegrationStats) {
    for &(t, depth) in &stats.retries {
        log.push(LogEntry {
            t,
            kind: LogKind::StepRetry { depth },
        });
    }
}

impl DynamicalSystem for Model {
    fn dim(&self) -> usize {
        match self {
            Model::Reduced(s) => s.dim(),
            Model::Full(s) => s.dim(),
        }
    }

    fn derivative(&mut self, t: f64, x: &[f64], dx: &mut [f64]) -> Result<(), EngineError> {
        match self {
            Model::Reduced(s) => s.derivative(t, x, dx),
            Model::Full(s) => s.derivative(t, x, dx),
        }
    }

    fn accept(&mut self, t: f64, x: &[f64]) {
        match self {
            Model::Reduced(s) => s.accept(t, x),
            Model::Full(s) => s.accept(t, x),
        }
    }
}
