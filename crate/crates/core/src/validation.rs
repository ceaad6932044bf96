//! Executable checks of the model reduction: ε-sweeps, static-vs-dynamic line
//! equivalence, power-balance audits and power-flow oracle cross-checks.

use nalgebra::DVector;
use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::components::{line_dq_deriv, zip_power};
use crate::engine::simulate::{simulate_with, RunOptions, Trajectory};
use crate::engine::{
    synchronous_equilibrium, EngineError, Equilibrium, FilterStart, InitialCondition, LoadEvent, Method, ModelKind,
    OmegaCom, Scenario,
};
use crate::network::{
    build_admittance, build_topology, line_currents, line_losses, polar_phasors, power_flow, Line, LineParams,
    NetworkTopology, NodeKind, NodeSpec,
};
use crate::signals::{wrap_pi, DqPair};

/// Sup-norm differences between two trajectories, per signal class.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SignalGaps {
    /// rad, all nodes, wrapped differences
    pub delta: f64,
    /// V, all nodes
    pub v: f64,
    /// W, grid-forming nodes
    pub p_m: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub epsilon: f64,
    pub boundary_layer: f64,
    pub gaps: Result<SignalGaps, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    /// Largest angle excursion of the reduced model after the disturbance.
    pub delta_swing: f64,
    pub omega_com: f64,
    /// Required factor per decade of ε.
    pub decay_per_decade: f64,
    pub monotone: bool,
}

impl SweepReport {
    pub fn epsilons(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.epsilon).collect()
    }

    /// δ gap at the smallest ε relative to the disturbance swing.
    pub fn final_delta_ratio(&self) -> Option<f64> {
        let last = self.rows.last()?.gaps.as_ref().ok()?;
        (self.delta_swing > 0.0).then(|| last.delta / self.delta_swing)
    }
}

/// Includes `t` unless it falls in the initial layer or the layer after a disturbance.
pub fn outside_layers(t: f64, t_bl: f64, event_times: &[f64]) -> bool {
    t >= t_bl && !event_times.iter().any(|&te| t >= te && t < te + t_bl)
}

/// Gaps between two trajectories on their shared output grid, restricted to
/// samples accepted by `keep`.
pub fn trajectory_gaps(a: &Trajectory, b: &Trajectory, keep: impl Fn(f64) -> bool) -> Result<SignalGaps, String> {
    if a.samples.len() != b.samples.len() {
        return Err(format!(
            "output grids differ: {} vs {} samples",
            a.samples.len(),
            b.samples.len()
        ));
    }
    let mut g = SignalGaps::default();
    for (sa, sb) in a.samples.iter().zip(&b.samples) {
        if (sa.t - sb.t).abs() > 1e-12 * sa.t.abs().max(1.0) {
            return Err(format!("output times differ: {} vs {}", sa.t, sb.t));
        }
        if !keep(sa.t) {
            continue;
        }
        for (x, y) in sa.delta.iter().zip(&sb.delta) {
            g.delta = g.delta.max(wrap_pi(x - y).abs());
        }
        for (x, y) in sa.v.iter().zip(&sb.v) {
            g.v = g.v.max((x - y).abs());
        }
        for (x, y) in sa.p_m.iter().zip(&sb.p_m) {
            g.p_m = g.p_m.max((x - y).abs());
        }
    }
    Ok(g)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepOptions {
    pub dt: f64,
    /// Disturbance used when the scenario has no events: every load scaled at `t`.
    pub default_step: (f64, f64),
    pub decay_per_decade: f64,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            dt: 1e-3,
            default_step: (1.0, 1.2),
            decay_per_decade: 0.95,
        }
    }
}

/// Prepares the comparison baseline: equilibrium start with the frame
/// rotating at the synchronous frequency, and a disturbance.
pub fn sweep_baseline(scenario: &Scenario, opts: &SweepOptions) -> Result<(Scenario, Equilibrium), EngineError> {
    let eq = synchronous_equilibrium(scenario)?;
    let mut settings = scenario.settings;
    settings.omega_com = OmegaCom::Fixed(eq.omega_com);
    settings.initial = InitialCondition::Equilibrium;
    settings.filter_start = FilterStart::Settled;
    let mut base = scenario.with_settings(settings)?;
    if base.events().is_empty() {
        let (t, k) = opts.default_step;
        let events = scenario
            .load_nodes()
            .into_iter()
            .map(|node| LoadEvent {
                time: t,
                node,
                coefficients: scenario.load(node).expect("load").coefficients.scaled(k),
            })
            .collect();
        base = base.with_events(events)?;
    }
    Ok((base, eq))
}

/// Runs the reduced model once and the full model for each `ε`, with fast
/// time constants scaled by `ε`, and compares them away from boundary layers.
pub fn epsilon_sweep(scenario: &Scenario, epsilons: &[f64]) -> Result<SweepReport, EngineError> {
    epsilon_sweep_with(scenario, epsilons, &SweepOptions::default())
}

pub fn epsilon_sweep_with(
    scenario: &Scenario,
    epsilons: &[f64],
    opts: &SweepOptions,
) -> Result<SweepReport, EngineError> {
    if epsilons.is_empty() || epsilons.iter().any(|&e| !(e > 0.0 && e.is_finite())) {
        return Err(EngineError::InvalidOption("epsilon values must be positive".into()));
    }
    if epsilons.windows(2).any(|w| w[1] >= w[0]) {
        return Err(EngineError::InvalidOption(
            "epsilon values must be strictly decreasing".into(),
        ));
    }
    let (base, eq) = sweep_baseline(scenario, opts)?;
    let event_times: Vec<f64> = base.events().iter().map(|e| e.time).collect();
    let run = |s: &Scenario, model: ModelKind| {
        simulate_with(
            s,
            &RunOptions {
                model,
                method: Method::Rk4,
                dt: opts.dt,
                horizon: s.settings.horizon,
                substeps: None,
            },
        )
    };
    let reduced = run(&base, ModelKind::Reduced)?;
    let t_event = event_times.first().copied().unwrap_or(0.0);
    let mut swing = 0.0f64;
    if let Some(at_event) = reduced.samples.iter().rev().find(|s| s.t <= t_event) {
        let gf = base.grid_forming_nodes();
        for s in reduced.samples.iter().filter(|s| s.t >= t_event) {
            for &i in &gf {
                swing = swing.max(wrap_pi(s.delta[i] - at_event.delta[i]).abs());
            }
        }
    }

    let mut rows = Vec::with_capacity(epsilons.len());
    for &eps in epsilons {
        let scaled = base.scaled(eps)?;
        let t_bl = 10.0 * scaled.fast_time_constant();
        let gaps = match run(&scaled, ModelKind::Full) {
            Ok(full) => trajectory_gaps(&full, &reduced, |t| outside_layers(t, t_bl, &event_times)),
            Err(e) => {
                log::warn!("full model failed at epsilon = {eps}: {e}");
                Err(e.to_string())
            }
        };
        log::info!("epsilon = {eps}: {gaps:?}");
        rows.push(SweepRow {
            epsilon: eps,
            boundary_layer: t_bl,
            gaps,
        });
    }
    let monotone = is_monotone(&rows, opts.decay_per_decade);
    Ok(SweepReport {
        rows,
        delta_swing: swing,
        omega_com: eq.omega_com,
        decay_per_decade: opts.decay_per_decade,
        monotone,
    })
}

/// Every class must shrink by at least `rate^decades` between consecutive rows.
pub fn is_monotone(rows: &[SweepRow], rate: f64) -> bool {
    rows.windows(2).all(|w| match (&w[0].gaps, &w[1].gaps) {
        (Ok(a), Ok(b)) => {
            let factor = rate.powf((w[0].epsilon / w[1].epsilon).log10());
            b.delta <= factor * a.delta && b.v <= factor * a.v && b.p_m <= factor * a.p_m
        }
        _ => false,
    })
}

/// Simulates the dynamic lines with node voltages frozen at the given phasors
/// for `20·max(L/R)` and returns the largest deviation from the static line
/// currents, relative to the largest static current (absolute if all vanish).
pub fn static_line_check(topology: &NetworkTopology, omega_com: f64, delta: &[f64], v: &[f64]) -> f64 {
    let phasors = polar_phasors(delta, v);
    let targets: Vec<DqPair> = line_currents(topology, omega_com, &phasors)
        .into_iter()
        .map(DqPair::from_qd)
        .collect();
    let v_dq: Vec<DqPair> = phasors.iter().map(|&z| DqPair::from_qd(z)).collect();
    let tau_min = topology
        .lines()
        .iter()
        .map(|l| l.params.time_constant())
        .fold(f64::INFINITY, f64::min);
    let h = tau_min / 100.0;
    let steps = (20.0 * topology.max_time_constant() / h).ceil() as usize;
    let mut worst = 0.0f64;
    for (line, target) in topology.lines().iter().zip(&targets) {
        let f = |x: DqPair| line_dq_deriv(x, v_dq[line.source()], v_dq[line.sink()], &line.params, omega_com);
        let mut x = DqPair::ZERO;
        for _ in 0..steps {
            let k1 = f(x);
            let k2 = f(x + k1.scale(0.5 * h));
            let k3 = f(x + k2.scale(0.5 * h));
            let k4 = f(x + k3.scale(h));
            x = x + (k1 + k2.scale(2.0) + k3.scale(2.0) + k4).scale(h / 6.0);
        }
        worst = worst.max((x - *target).norm());
    }
    let scale = targets.iter().map(|t| t.norm()).fold(0.0, f64::max);
    if scale > 0.0 {
        worst / scale
    } else {
        worst
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeMismatch {
    pub node: String,
    /// Injection from the power-flow equations.
    pub p_flow: f64,
    /// Injection from the node's line currents.
    pub p_lines: f64,
    /// ZIP injection `P*(V)` for loads.
    pub p_zip: Option<f64>,
    pub mismatch: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditReport {
    /// `Σ_GF P_i + Σ_loads P*_k(V_k) − Σ_l R_l|I_l|²`, signed.
    pub residual: f64,
    pub losses: f64,
    pub generation: f64,
    pub consumption: f64,
    pub nodes: Vec<NodeMismatch>,
}

impl AuditReport {
    /// `|residual|` over the larger of generation and consumption, floored at 1 W.
    pub fn relative_residual(&self) -> f64 {
        self.residual.abs() / self.generation.abs().max(self.consumption.abs()).max(1.0)
    }
}

/// Energy bookkeeping at the node phasors `(δ, V)` of a solved operating point.
pub fn power_balance_audit(
    scenario: &Scenario,
    omega_com: f64,
    delta: &[f64],
    v: &[f64],
) -> Result<AuditReport, EngineError> {
    let topo = scenario.topology();
    let y = build_admittance(topo, omega_com)?;
    let (p, _) = power_flow(delta, v, &y)?;
    let phasors = polar_phasors(delta, v);
    let currents = line_currents(topo, omega_com, &phasors);
    let losses = line_losses(topo, &currents);
    let mut inj = vec![Complex64::new(0.0, 0.0); topo.node_count()];
    for (l, i) in topo.lines().iter().zip(&currents) {
        inj[l.source()] += i;
        inj[l.sink()] -= i;
    }
    let mut generation = 0.0;
    let mut consumption = 0.0;
    let mut nodes = Vec::with_capacity(topo.node_count());
    for i in 0..topo.node_count() {
        let p_lines = (phasors[i] * inj[i].conj()).re;
        let p_zip = scenario.load(i).map(|z| zip_power(v[i], &z.coefficients).0);
        match p_zip {
            Some(pz) => consumption += pz,
            None => generation += p[i],
        }
        let mismatch = (p[i] - p_lines).abs().max(p_zip.map_or(0.0, |pz| (p[i] - pz).abs()));
        nodes.push(NodeMismatch {
            node: scenario.node_id(i).to_string(),
            p_flow: p[i],
            p_lines,
            p_zip,
            mismatch,
        });
    }
    Ok(AuditReport {
        residual: generation + consumption - losses,
        losses,
        generation,
        consumption,
        nodes,
    })
}

pub fn audit_equilibrium(scenario: &Scenario, eq: &Equilibrium) -> Result<AuditReport, EngineError> {
    power_balance_audit(scenario, eq.omega_com, &eq.delta, &eq.v)
}

/// Random connected network: a random spanning tree plus up to `n` extra
/// edges; `R ∈ U[0.1, 1] Ω`, `X/R ∈ U[0.5, 5]` at `omega`. Node 0 is
/// grid-forming, the rest are loads.
pub fn random_network<R: Rng>(rng: &mut R, nodes: usize, omega: f64) -> NetworkTopology {
    let n = nodes.max(2);
    let specs: Vec<NodeSpec> = (0..n)
        .map(|i| {
            let kind = if i == 0 {
                NodeKind::GridForming
            } else {
                NodeKind::LoadOrFeeding
            };
            NodeSpec::new(format!("n{i}"), kind)
        })
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut pairs = Vec::new();
    for i in 1..n {
        let j = rng.gen_range(0..i);
        pairs.push((order[i].min(order[j]), order[i].max(order[j])));
    }
    let extra = rng.gen_range(0..=n);
    for _ in 0..extra {
        let a = rng.gen_range(0..n);
        let b = rng.gen_range(0..n);
        let key = (a.min(b), a.max(b));
        if a != b && !pairs.contains(&key) {
            pairs.push(key);
        }
    }
    let lines = pairs
        .into_iter()
        .map(|(a, b)| {
            let r = rng.gen_range(0.1..=1.0);
            let ratio = rng.gen_range(0.5..=5.0);
            let params = LineParams::new(r, ratio * r / omega).expect("positive parameters");
            if rng.gen_bool(0.5) {
                Line::new(a, b, params)
            } else {
                Line::new(b, a, params)
            }
        })
        .collect();
    build_topology(specs, lines).expect("spanning tree keeps the network connected")
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrosscheckRow {
    pub instance: usize,
    pub nodes: usize,
    pub lines: usize,
    /// Largest `|S_flow − S_oracle|` relative to the instance's largest `|S|`.
    pub error: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrosscheckReport {
    pub seed: u64,
    pub tolerance: f64,
    pub rows: Vec<CrosscheckRow>,
    /// Reproduction data for failing instances.
    pub dumps: Vec<String>,
}

impl CrosscheckReport {
    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }
}

/// Compares the power-flow equations with `V̂·conj(𝒴V̂)` on random networks.
pub fn oracle_crosscheck(count: usize, max_nodes: usize, seed: u64, omega: f64) -> CrosscheckReport {
    let tolerance = 1e-10;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(count);
    let mut dumps = Vec::new();
    for instance in 0..count {
        let n = rng.gen_range(2..=max_nodes.max(2));
        let topo = random_network(&mut rng, n, omega);
        let delta: Vec<f64> = (0..n)
            .map(|_| rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI))
            .collect();
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(200.0..600.0)).collect();
        let y = build_admittance(&topo, omega).expect("positive frequency");
        let (p, q) = power_flow(&delta, &v, &y).expect("matching dimensions");
        let vh = DVector::from_vec(polar_phasors(&delta, &v));
        let i = y.matrix() * &vh;
        let s: Vec<Complex64> = vh.iter().zip(i.iter()).map(|(a, b)| a * b.conj()).collect();
        let scale = s.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let err = s
            .iter()
            .enumerate()
            .map(|(k, z)| (Complex64::new(p[k], q[k]) - z).norm())
            .fold(0.0, f64::max);
        let error = if scale > 0.0 { err / scale } else { err };
        let pass = error < tolerance;
        if !pass {
            dumps.push(format!(
                "instance {instance}: lines {:?}, delta {delta:?}, v {v:?}",
                topo.lines()
                    .iter()
                    .map(|l| (l.from, l.to, l.params.resistance(), l.params.inductance()))
                    .collect::<Vec<_>>()
            ));
        }
        rows.push(CrosscheckRow {
            instance,
            nodes: n,
            lines: topo.line_count(),
            error,
            pass,
        });
    }
    CrosscheckReport {
        seed,
        tolerance,
        rows,
        dumps,
    }
}
