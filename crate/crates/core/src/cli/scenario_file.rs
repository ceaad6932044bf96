//! JSON scenario documents.

use std::collections::HashMap;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::components::{CascadeParams, GridFormingConfig, InnerLoopModel, ZipCoefficients, ZipConfig};
use crate::engine::scenario::default_snubber;
use crate::engine::{
    FilterStart, InitialCondition, LoadEvent, Method, ModelKind, NodeConfig, OmegaCom, Scenario, SimulationSettings,
};
use crate::network::{build_admittance, build_topology, Line, LineParams, NetworkError, NodeKind, NodeSpec};

use super::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KindEntry {
    GridForming,
    Load,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeEntry {
    pub id: String,
    pub kind: KindEntry,
    #[serde(default)]
    pub params: Value,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InnerLoopEntry {
    FirstOrderLag,
    LcPiCascade,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CascadeEntry {
    pub l_f_henry: f64,
    pub c_f_farad: f64,
    pub r_f1_ohm: f64,
    pub r_f2_ohm: f64,
    pub kp_v_a_per_v: f64,
    pub ki_v_a_per_v_s: f64,
    pub kp_c_v_per_a: f64,
    pub ki_c_v_per_a_s: f64,
    pub design_nu_s: f64,
}

impl From<CascadeParams> for CascadeEntry {
    fn from(c: CascadeParams) -> Self {
        CascadeEntry {
            l_f_henry: c.l_f,
            c_f_farad: c.c_f,
            r_f1_ohm: c.r_f1,
            r_f2_ohm: c.r_f2,
            kp_v_a_per_v: c.kp_v,
            ki_v_a_per_v_s: c.ki_v,
            kp_c_v_per_a: c.kp_c,
            ki_c_v_per_a_s: c.ki_c,
            design_nu_s: c.design_nu,
        }
    }
}

impl From<CascadeEntry> for CascadeParams {
    fn from(c: CascadeEntry) -> Self {
        CascadeParams {
            l_f: c.l_f_henry,
            c_f: c.c_f_farad,
            r_f1: c.r_f1_ohm,
            r_f2: c.r_f2_ohm,
            kp_v: c.kp_v_a_per_v,
            ki_v: c.ki_v_a_per_v_s,
            kp_c: c.kp_c_v_per_a,
            ki_c: c.ki_c_v_per_a_s,
            design_nu: c.design_nu_s,
        }
    }
}

fn one() -> f64 {
    1.0
}

fn is_zero(v: &f64) -> bool {
    *v == 0.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridFormingParams {
    #[serde(default = "one")]
    pub gamma: f64,
    pub nu_s: f64,
    pub tau_p_s: f64,
    pub k_p_rad_s_per_w: f64,
    pub k_q_v_per_var: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega_set_rad_s: Option<f64>,
    pub v_set_v: f64,
    #[serde(default)]
    pub p_set_w: f64,
    #[serde(default)]
    pub q_set_var: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inner_loop: Option<InnerLoopEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cascade: Option<CascadeEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZipEntry {
    #[serde(default, skip_serializing_if = "is_zero")]
    pub a_p_w_per_v2: f64,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub b_p_w_per_v: f64,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub c_p_w: f64,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub a_q_var_per_v2: f64,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub b_q_var_per_v: f64,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub c_q_var: f64,
}

impl From<ZipEntry> for ZipCoefficients {
    fn from(z: ZipEntry) -> Self {
        ZipCoefficients {
            a_p: z.a_p_w_per_v2,
            b_p: z.b_p_w_per_v,
            c_p: z.c_p_w,
            a_q: z.a_q_var_per_v2,
            b_q: z.b_q_var_per_v,
            c_q: z.c_q_var,
        }
    }
}

impl From<ZipCoefficients> for ZipEntry {
    fn from(z: ZipCoefficients) -> Self {
        ZipEntry {
            a_p_w_per_v2: z.a_p,
            b_p_w_per_v: z.b_p,
            c_p_w: z.c_p,
            a_q_var_per_v2: z.a_q,
            b_q_var_per_v: z.b_q,
            c_q_var: z.c_q,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadParams {
    #[serde(default, skip_serializing_if = "is_zero")]
    pub a_p_w_per_v2: f64,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub b_p_w_per_v: f64,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub c_p_w: f64,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub a_q_var_per_v2: f64,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub b_q_var_per_v: f64,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub c_q_var: f64,
    #[serde(default)]
    pub kappa_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_snub_f: Option<f64>,
}

impl LoadParams {
    pub fn zip(&self) -> ZipCoefficients {
        ZipCoefficients {
            a_p: self.a_p_w_per_v2,
            b_p: self.b_p_w_per_v,
            c_p: self.c_p_w,
            a_q: self.a_q_var_per_v2,
            b_q: self.b_q_var_per_v,
            c_q: self.c_q_var,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineEntry {
    pub from: String,
    pub to: String,
    #[serde(rename = "R_ohm")]
    pub r_ohm: f64,
    #[serde(rename = "L_henry")]
    pub l_henry: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodEntry {
    Rk4,
    Trapezoidal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelEntry {
    Full,
    Reduced,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OmegaComEntry {
    Nominal,
    Synchronous,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialEntry {
    Flat,
    Equilibrium,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterStartEntry {
    Settled,
    Cold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SettingsEntry {
    pub omega_nominal_rad_s: f64,
    pub horizon_s: f64,
    pub dt_s: f64,
    pub method: MethodEntry,
    pub model: ModelEntry,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_nominal_v: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega_com: Option<OmegaComEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega_com_rad_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<InitialEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filter_start: Option<FilterStartEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventEntry {
    pub time_s: f64,
    pub node: String,
    pub zip: ZipEntry,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub nodes: Vec<NodeEntry>,
    pub lines: Vec<LineEntry>,
    pub settings: SettingsEntry,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub events: Vec<EventEntry>,
}

fn input(path: impl Into<String>, message: impl Into<String>) -> CliError {
    CliError::Input {
        path: path.into(),
        message: message.into(),
    }
}

fn parse_params<T: DeserializeOwned>(value: &Value, prefix: &str) -> Result<T, CliError> {
    let value = if value.is_null() {
        Value::Object(Default::default())
    } else {
        value.clone()
    };
    serde_path_to_error::deserialize(value).map_err(|e| {
        let inner = e.path().to_string();
        let path = if inner == "." {
            prefix.to_string()
        } else {
            format!("{prefix}.{inner}")
        };
        input(path, e.into_inner().to_string())
    })
}

impl ScenarioFile {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            input(if path == "." { "$".into() } else { path }, e.into_inner().to_string())
        })
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| input(path.display().to_string(), e.to_string()))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("scenario documents serialize");
        s.push('\n');
        s
    }

    /// Validates the document and builds the scenario; errors name the JSON path.
    pub fn to_scenario(&self) -> Result<Scenario, CliError> {
        let mut index = HashMap::new();
        for (i, n) in self.nodes.iter().enumerate() {
            if n.id.is_empty() {
                return Err(input(format!("nodes[{i}].id"), "node id must not be empty"));
            }
            if index.insert(n.id.as_str(), i).is_some() {
                return Err(input(format!("nodes[{i}].id"), format!("duplicate node id '{}'", n.id)));
            }
        }
        let s = &self.settings;
        let omega_nominal = s.omega_nominal_rad_s;

        let mut gf_params = Vec::new();
        let mut load_params = Vec::new();
        for (i, n) in self.nodes.iter().enumerate() {
            let prefix = format!("nodes[{i}].params");
            match n.kind {
                KindEntry::GridForming => gf_params.push((i, parse_params::<GridFormingParams>(&n.params, &prefix)?)),
                KindEntry::Load => load_params.push((i, parse_params::<LoadParams>(&n.params, &prefix)?)),
            }
        }
        let v_nominal = match (s.v_nominal_v, gf_params.first()) {
            (Some(v), _) => v,
            (None, Some((_, g))) => g.v_set_v,
            (None, None) => return Err(input("nodes", "at least one grid_forming node is required")),
        };

        let specs: Vec<NodeSpec> = self
            .nodes
            .iter()
            .map(|n| {
                let kind = match n.kind {
                    KindEntry::GridForming => NodeKind::GridForming,
                    KindEntry::Load => NodeKind::LoadOrFeeding,
                };
                NodeSpec::new(n.id.clone(), kind)
            })
            .collect();
        let mut lines = Vec::with_capacity(self.lines.len());
        for (l, e) in self.lines.iter().enumerate() {
            let from = *index
                .get(e.from.as_str())
                .ok_or_else(|| input(format!("lines[{l}].from"), format!("unknown node '{}'", e.from)))?;
            let to = *index
                .get(e.to.as_str())
                .ok_or_else(|| input(format!("lines[{l}].to"), format!("unknown node '{}'", e.to)))?;
            let params = LineParams::new(e.r_ohm, e.l_henry).map_err(|err| {
                let field = if !(e.r_ohm > 0.0 && e.r_ohm.is_finite()) {
                    "R_ohm"
                } else {
                    "L_henry"
                };
                input(format!("lines[{l}].{field}"), err.to_string())
            })?;
            lines.push(Line::new(from, to, params));
        }
        let topology = build_topology(specs, lines).map_err(|err| match &err {
            NetworkError::SelfLoop { line, .. } | NetworkError::DuplicateLine { line, .. } => {
                input(format!("lines[{line}]"), err.to_string())
            }
            NetworkError::TooFewNodes(_) => input("nodes", err.to_string()),
            _ => input("lines", err.to_string()),
        })?;

        let inverter_nu = gf_params.iter().map(|(_, g)| g.nu_s).fold(f64::INFINITY, f64::min);
        let y = if omega_nominal > 0.0 && omega_nominal.is_finite() {
            Some(
                build_admittance(&topology, omega_nominal)
                    .map_err(|e| input("settings.omega_nominal_rad_s", e.to_string()))?,
            )
        } else {
            None
        };

        let mut configs: Vec<Option<NodeConfig>> = vec![None; self.nodes.len()];
        for (i, g) in &gf_params {
            let inner = match g.inner_loop.unwrap_or(InnerLoopEntry::FirstOrderLag) {
                InnerLoopEntry::FirstOrderLag => {
                    if g.cascade.is_some() {
                        return Err(input(
                            format!("nodes[{i}].params.cascade"),
                            "only valid with inner_loop = lc_pi_cascade",
                        ));
                    }
                    InnerLoopModel::FirstOrderLag
                }
                InnerLoopEntry::LcPiCascade => {
                    InnerLoopModel::LcPiCascade(g.cascade.map(Into::into).unwrap_or_default())
                }
            };
            configs[*i] = Some(NodeConfig::GridForming(GridFormingConfig {
                gamma: g.gamma,
                nu: g.nu_s,
                tau_p: g.tau_p_s,
                k_p: g.k_p_rad_s_per_w,
                k_q: g.k_q_v_per_var,
                omega_set: g.omega_set_rad_s.unwrap_or(omega_nominal),
                v_set: g.v_set_v,
                p_set: g.p_set_w,
                q_set: g.q_set_var,
                inner,
            }));
        }
        for (i, p) in &load_params {
            let coefficients = p.zip();
            let c_snub = match (p.c_snub_f, &y) {
                (Some(c), _) => c,
                (None, Some(y)) => default_snubber(&coefficients, y.entry(*i, *i).norm(), inverter_nu, v_nominal),
                (None, None) => 0.0,
            };
            configs[*i] = Some(NodeConfig::Load(ZipConfig {
                coefficients,
                kappa: p.kappa_s,
                c_snub,
            }));
        }
        let configs: Vec<NodeConfig> = configs.into_iter().map(|c| c.expect("every node configured")).collect();

        let omega_com = match (s.omega_com, s.omega_com_rad_s) {
            (Some(_), Some(_)) => {
                return Err(input("settings.omega_com_rad_s", "conflicts with settings.omega_com"));
            }
            (Some(OmegaComEntry::Synchronous), None) => OmegaCom::Synchronous,
            (Some(OmegaComEntry::Nominal), None) | (None, None) => OmegaCom::Nominal,
            (None, Some(w)) => OmegaCom::Fixed(w),
        };
        let settings = SimulationSettings {
            omega_nominal,
            omega_com,
            v_nominal,
            horizon: s.horizon_s,
            dt: s.dt_s,
            method: match s.method {
                MethodEntry::Rk4 => Method::Rk4,
                MethodEntry::Trapezoidal => Method::Trapezoidal,
            },
            model: match s.model {
                ModelEntry::Full => ModelKind::Full,
                ModelEntry::Reduced => ModelKind::Reduced,
            },
            initial: match s.initial.unwrap_or(InitialEntry::Flat) {
                InitialEntry::Flat => InitialCondition::FlatStart,
                InitialEntry::Equilibrium => InitialCondition::Equilibrium,
            },
            filter_start: match s.filter_start.unwrap_or(FilterStartEntry::Settled) {
                FilterStartEntry::Settled => FilterStart::Settled,
                FilterStartEntry::Cold => FilterStart::Cold,
            },
            line_time_scale: 1.0,
        };

        let mut events = Vec::with_capacity(self.events.len());
        for (k, e) in self.events.iter().enumerate() {
            let node = *index
                .get(e.node.as_str())
                .ok_or_else(|| input(format!("events[{k}].node"), format!("unknown node '{}'", e.node)))?;
            if self.nodes[node].kind != KindEntry::Load {
                return Err(input(
                    format!("events[{k}].node"),
                    format!("node '{}' is not a load", e.node),
                ));
            }
            if !(e.time_s >= 0.0 && e.time_s <= s.horizon_s) {
                return Err(input(
                    format!("events[{k}].time_s"),
                    "event time must lie within [0, horizon_s]",
                ));
            }
            events.push(LoadEvent {
                time: e.time_s,
                node,
                coefficients: e.zip.into(),
            });
        }

        Scenario::new(topology, configs, settings, events).map_err(|err| match &err {
            crate::engine::EngineError::Component { node, .. } => {
                let i = index.get(node.as_str()).copied().unwrap_or(0);
                input(format!("nodes[{i}].params"), err.to_string())
            }
            _ => input("settings", err.to_string()),
        })
    }

    /// Document with every value explicit, reproducing `scenario` when parsed.
    pub fn from_scenario(scenario: &Scenario) -> Self {
        let topo = scenario.topology();
        let nodes = (0..topo.node_count())
            .map(|i| {
                let id = scenario.node_id(i).to_string();
                match scenario.configs()[i] {
                    NodeConfig::GridForming(g) => {
                        let (inner_loop, cascade) = match g.inner {
                            InnerLoopModel::FirstOrderLag => (None, None),
                            InnerLoopModel::LcPiCascade(c) => (Some(InnerLoopEntry::LcPiCascade), Some(c.into())),
                        };
                        let p = GridFormingParams {
                            gamma: g.gamma,
                            nu_s: g.nu,
                            tau_p_s: g.tau_p,
                            k_p_rad_s_per_w: g.k_p,
                            k_q_v_per_var: g.k_q,
                            omega_set_rad_s: Some(g.omega_set),
                            v_set_v: g.v_set,
                            p_set_w: g.p_set,
                            q_set_var: g.q_set,
                            inner_loop,
                            cascade,
                        };
                        NodeEntry {
                            id,
                            kind: KindEntry::GridForming,
                            params: serde_json::to_value(p).expect("serializable"),
                        }
                    }
                    NodeConfig::Load(z) => {
                        let c = z.coefficients;
                        let p = LoadParams {
                            a_p_w_per_v2: c.a_p,
                            b_p_w_per_v: c.b_p,
                            c_p_w: c.c_p,
                            a_q_var_per_v2: c.a_q,
                            b_q_var_per_v: c.b_q,
                            c_q_var: c.c_q,
                            kappa_s: z.kappa,
                            c_snub_f: Some(z.c_snub),
                        };
                        NodeEntry {
                            id,
                            kind: KindEntry::Load,
                            params: serde_json::to_value(p).expect("serializable"),
                        }
                    }
                }
            })
            .collect();
        let lines = topo
            .lines()
            .iter()
            .map(|l| LineEntry {
                from: scenario.node_id(l.from).to_string(),
                to: scenario.node_id(l.to).to_string(),
                r_ohm: l.params.resistance(),
                l_henry: l.params.inductance(),
            })
            .collect();
        let s = &scenario.settings;
        let (omega_com, omega_com_rad_s) = match s.omega_com {
            OmegaCom::Nominal => (Some(OmegaComEntry::Nominal), None),
            OmegaCom::Synchronous => (Some(OmegaComEntry::Synchronous), None),
            OmegaCom::Fixed(w) => (None, Some(w)),
        };
        let settings = SettingsEntry {
            omega_nominal_rad_s: s.omega_nominal,
            horizon_s: s.horizon,
            dt_s: s.dt,
            method: match s.method {
                Method::Rk4 => MethodEntry::Rk4,
                Method::Trapezoidal => MethodEntry::Trapezoidal,
            },
            model: match s.model {
                ModelKind::Full => ModelEntry::Full,
                ModelKind::Reduced => ModelEntry::Reduced,
            },
            v_nominal_v: Some(s.v_nominal),
            omega_com,
            omega_com_rad_s,
            initial: Some(match s.initial {
                InitialCondition::FlatStart => InitialEntry::Flat,
                InitialCondition::Equilibrium => InitialEntry::Equilibrium,
            }),
            filter_start: Some(match s.filter_start {
                FilterStart::Settled => FilterStartEntry::Settled,
                FilterStart::Cold => FilterStartEntry::Cold,
            }),
        };
        let events = scenario
            .events()
            .iter()
            .map(|e| EventEntry {
                time_s: e.time,
                node: scenario.node_id(e.node).to_string(),
                zip: e.coefficients.into(),
            })
            .collect();
        ScenarioFile {
            nodes,
            lines,
            settings,
            events,
        }
    }
}

/// Reads and validates a scenario file.
pub fn parse_scenario(path: &Path) -> Result<Scenario, CliError> {
    ScenarioFile::read(path)?.to_scenario()
}
