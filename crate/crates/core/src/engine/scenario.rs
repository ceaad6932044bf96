//! Validated, immutable description of a simulation case.

use crate::components::{GridFormingConfig, ZipCoefficients, ZipConfig};
use crate::network::{AdmittanceMatrix, NetworkTopology, NodeKind};

use super::integrate::Method;
use super::EngineError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NodeConfig {
    GridForming(GridFormingConfig),
    Load(ZipConfig),
}

impl NodeConfig {
    pub fn kind(&self) -> NodeKind {
        match self {
            NodeConfig::GridForming(_) => NodeKind::GridForming,
            NodeConfig::Load(_) => NodeKind::LoadOrFeeding,
        }
    }
}

/// Step change of a load's ZIP coefficients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoadEvent {
    pub time: f64,
    pub node: usize,
    pub coefficients: ZipCoefficients,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Full,
    Reduced,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Full => "full",
            ModelKind::Reduced => "reduced",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitialCondition {
    /// `δ = 0` at every inverter; loads solved algebraically.
    FlatStart,
    /// Start at the solved operating point.
    Equilibrium,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterStart {
    /// `P^m, Q^m` equal to the instantaneous powers at `t = 0`.
    Settled,
    Cold,
}

/// Rotation speed of the common reference frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OmegaCom {
    Nominal,
    Fixed(f64),
    /// The solved synchronous frequency (iterated to a fixed point, since the
    /// line reactances depend on it).
    Synchronous,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulationSettings {
    pub omega_nominal: f64,
    pub omega_com: OmegaCom,
    pub v_nominal: f64,
    pub horizon: f64,
    pub dt: f64,
    pub method: Method,
    pub model: ModelKind,
    pub initial: InitialCondition,
    pub filter_start: FilterStart,
    /// Multiplies the line inductance on the derivative side only; the
    /// reactance `L·ω^com` is unaffected.
    pub line_time_scale: f64,
}

impl SimulationSettings {
    pub fn new(omega_nominal: f64, v_nominal: f64, horizon: f64, dt: f64) -> Self {
        SimulationSettings {
            omega_nominal,
            omega_com: OmegaCom::Nominal,
            v_nominal,
            horizon,
            dt,
            method: Method::Rk4,
            model: ModelKind::Reduced,
            initial: InitialCondition::FlatStart,
            filter_start: FilterStart::Settled,
            line_time_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    topology: NetworkTopology,
    configs: Vec<NodeConfig>,
    pub settings: SimulationSettings,
    events: Vec<LoadEvent>,
}

fn positive(name: &str, v: f64) -> Result<(), EngineError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(EngineError::Scenario(format!(
            "{name} must be positive and finite, got {v}"
        )))
    }
}

impl Scenario {
    pub fn new(
        topology: NetworkTopology,
        configs: Vec<NodeConfig>,
        settings: SimulationSettings,
        mut events: Vec<LoadEvent>,
    ) -> Result<Self, EngineError> {
        if configs.len() != topology.node_count() {
            return Err(EngineError::Scenario(format!(
                "{} node configurations for {} nodes",
                configs.len(),
                topology.node_count()
            )));
        }
        for (i, c) in configs.iter().enumerate() {
            let id = &topology.nodes()[i].id;
            if c.kind() != topology.kind(i) {
                return Err(EngineError::Scenario(format!(
                    "node {id}: configuration does not match node kind"
                )));
            }
            let checked = match c {
                NodeConfig::GridForming(g) => g.validate(),
                NodeConfig::Load(z) => z.validate(),
            };
            checked.map_err(|source| EngineError::Component {
                node: id.clone(),
                source,
            })?;
        }
        if !configs.iter().any(|c| matches!(c, NodeConfig::GridForming(_))) {
            return Err(EngineError::Scenario(
                "at least one grid-forming node is required".into(),
            ));
        }
        positive("omega_nominal", settings.omega_nominal)?;
        positive("v_nominal", settings.v_nominal)?;
        positive("horizon", settings.horizon)?;
        positive("dt", settings.dt)?;
        positive("line_time_scale", settings.line_time_scale)?;
        if let OmegaCom::Fixed(w) = settings.omega_com {
            positive("omega_com", w)?;
        }
        if settings.dt > settings.horizon {
            return Err(EngineError::Scenario("dt exceeds the horizon".into()));
        }
        for e in &events {
            if e.node >= configs.len() || !matches!(configs[e.node], NodeConfig::Load(_)) {
                return Err(EngineError::Scenario(format!(
                    "event at t = {} targets a node that is not a load",
                    e.time
                )));
            }
            if !(e.time >= 0.0 && e.time <= settings.horizon) {
                return Err(EngineError::Scenario(format!(
                    "event time {} outside [0, {}]",
                    e.time, settings.horizon
                )));
            }
        }
        events.sort_by(|a, b| a.time.total_cmp(&b.time));
        Ok(Scenario {
            topology,
            configs,
            settings,
            events,
        })
    }

    pub fn topology(&self) -> &NetworkTopology {
        &self.topology
    }

    pub fn configs(&self) -> &[NodeConfig] {
        &self.configs
    }

    pub fn events(&self) -> &[LoadEvent] {
        &self.events
    }

    pub fn node_id(&self, node: usize) -> &str {
        &self.topology.nodes()[node].id
    }

    pub fn grid_forming_nodes(&self) -> Vec<usize> {
        self.topology.nodes_of_kind(NodeKind::GridForming)
    }

    pub fn load_nodes(&self) -> Vec<usize> {
        self.topology.nodes_of_kind(NodeKind::LoadOrFeeding)
    }

    pub fn grid_forming(&self, node: usize) -> Option<&GridFormingConfig> {
        match &self.configs[node] {
            NodeConfig::GridForming(g) => Some(g),
            NodeConfig::Load(_) => None,
        }
    }

    pub fn load(&self, node: usize) -> Option<&ZipConfig> {
        match &self.configs[node] {
            NodeConfig::Load(z) => Some(z),
            NodeConfig::GridForming(_) => None,
        }
    }

    /// Lower voltage bound used by constant-current/power commands.
    pub fn v_clamp(&self) -> f64 {
        0.1 * self.settings.v_nominal
    }

    pub fn with_settings(&self, settings: SimulationSettings) -> Result<Self, EngineError> {
        Scenario::new(
            self.topology.clone(),
            self.configs.clone(),
            settings,
            self.events.clone(),
        )
    }

    pub fn with_events(&self, events: Vec<LoadEvent>) -> Result<Self, EngineError> {
        Scenario::new(self.topology.clone(), self.configs.clone(), self.settings, events)
    }

    pub fn with_configs(&self, configs: Vec<NodeConfig>) -> Result<Self, EngineError> {
        Scenario::new(self.topology.clone(), configs, self.settings, self.events.clone())
    }

    /// Scales every fast time constant by `eps`: inner loops (`ν`), load
    /// dynamics (`κ`, `C_snub`) and line storage.
    pub fn scaled(&self, eps: f64) -> Result<Self, EngineError> {
        positive("epsilon", eps)?;
        let configs = self
            .configs
            .iter()
            .map(|c| match *c {
                NodeConfig::GridForming(mut g) => {
                    g.nu *= eps;
                    NodeConfig::GridForming(g)
                }
                NodeConfig::Load(mut z) => {
                    z.kappa *= eps;
                    z.c_snub *= eps;
                    NodeConfig::Load(z)
                }
            })
            .collect();
        let mut settings = self.settings;
        settings.line_time_scale *= eps;
        Scenario::new(self.topology.clone(), configs, settings, self.events.clone())
    }

    /// Largest fast time constant: `max(νγ, L/R, κ)` with the current scaling.
    pub fn fast_time_constant(&self) -> f64 {
        let mut t = self.topology.max_time_constant() * self.settings.line_time_scale;
        for c in &self.configs {
            t = t.max(match c {
                NodeConfig::GridForming(g) => g.nu * g.gamma,
                NodeConfig::Load(z) => z.kappa,
            });
        }
        t
    }

    /// Typical power magnitude used to scale algebraic tolerances.
    pub fn power_scale(&self, y: &AdmittanceMatrix) -> f64 {
        let v2 = self.settings.v_nominal * self.settings.v_nominal;
        (0..y.size()).map(|i| y.entry(i, i).norm() * v2).fold(1.0, f64::max)
    }
}

/// Snubber capacitance giving a terminal time constant of `nu/10` against the
/// larger of the load's own conductance and the network's self-admittance.
pub fn default_snubber(zip: &ZipCoefficients, self_admittance: f64, nu: f64, v_nominal: f64) -> f64 {
    let v = v_nominal;
    let p = zip.a_p.abs() * v * v + zip.b_p.abs() * v + zip.c_p.abs();
    let q = zip.a_q.abs() * v * v + zip.b_q.abs() * v + zip.c_q.abs();
    let g = (p.hypot(q) / (v * v)).max(self_admittance);
    nu / 10.0 * g
}
