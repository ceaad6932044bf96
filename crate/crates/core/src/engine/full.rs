//! Full-order model: inverter inner loops, dynamic RL lines and dynamic loads,
//! all in the common dq frame.

use num_complex::Complex64;

use crate::components::{
    droop_control, dynamic_load_deriv, inner_loop_deriv, inner_loop_output, inner_loop_steady_state,
    line_dq_deriv_scaled, reduced_inverter_deriv, zip_current_command, GridFormingConfig, InverterReducedState,
    LoadState, ZipConfig,
};
use crate::network::{line_currents, polar_phasors, LineParams};
use crate::signals::{instantaneous_power, wrap_pi, DqPair};

use super::integrate::DynamicalSystem;
use super::scenario::Scenario;
use super::simulate::Sample;
use super::EngineError;

/// State index map.
///
/// Per grid-forming node: `[δ, P^m, Q^m, inner…]`; then per line `[x_d, x_q]`
/// (source → sink); then per load `[v_d, v_q, x_d, x_q]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FullLayout {
    pub inverter_offsets: Vec<usize>,
    pub inner_dims: Vec<usize>,
    pub line_offset: usize,
    pub load_offset: usize,
    pub dim: usize,
}

impl FullLayout {
    pub fn line(&self, l: usize) -> usize {
        self.line_offset + 2 * l
    }

    pub fn load(&self, k: usize) -> usize {
        self.load_offset + 4 * k
    }
}

#[derive(Debug, Clone)]
struct LineData {
    source: usize,
    sink: usize,
    params: LineParams,
}

#[derive(Debug, Clone)]
pub struct FullSystem {
    layout: FullLayout,
    ids: Vec<String>,
    lines: Vec<LineData>,
    gf: Vec<usize>,
    gf_cfg: Vec<GridFormingConfig>,
    loads: Vec<usize>,
    load_cfg: Vec<ZipConfig>,
    omega_com: f64,
    line_scale: f64,
    v_clamp: f64,
    v_node: Vec<DqPair>,
    i_node: Vec<DqPair>,
    clamped: Vec<bool>,
    /// `(time, node, entering)` for every change of clamp status at accepted steps.
    pub clamp_changes: Vec<(f64, usize, bool)>,
}

fn to_common(local: DqPair, delta: f64) -> DqPair {
    DqPair::from_qd(local.to_qd() * Complex64::from_polar(1.0, delta))
}

fn to_local(common: DqPair, delta: f64) -> DqPair {
    DqPair::from_qd(common.to_qd() * Complex64::from_polar(1.0, -delta))
}

impl FullSystem {
    pub fn new(scenario: &Scenario, omega_com: f64) -> Result<Self, EngineError> {
        let topo = scenario.topology();
        let gf = scenario.grid_forming_nodes();
        let loads = scenario.load_nodes();
        let gf_cfg: Vec<GridFormingConfig> = gf
            .iter()
            .map(|&i| *scenario.grid_forming(i).expect("grid-forming"))
            .collect();
        for (&node, cfg) in gf.iter().zip(&gf_cfg) {
            if !(cfg.nu > 0.0) {
                return Err(EngineError::Component {
                    node: scenario.node_id(node).to_string(),
                    source: crate::components::ComponentError::ZeroTimeScale,
                });
            }
        }
        let mut offsets = Vec::new();
        let mut dims = Vec::new();
        let mut at = 0;
        for cfg in &gf_cfg {
            offsets.push(at);
            dims.push(cfg.inner.dim());
            at += 3 + cfg.inner.dim();
        }
        let line_offset = at;
        let load_offset = line_offset + 2 * topo.line_count();
        let dim = load_offset + 4 * loads.len();
        let n = topo.node_count();
        Ok(FullSystem {
            layout: FullLayout {
                inverter_offsets: offsets,
                inner_dims: dims,
                line_offset,
                load_offset,
                dim,
            },
            ids: topo.nodes().iter().map(|s| s.id.clone()).collect(),
            lines: topo
                .lines()
                .iter()
                .map(|l| LineData {
                    source: l.source(),
                    sink: l.sink(),
                    params: l.params,
                })
                .collect(),
            gf,
            gf_cfg,
            load_cfg: loads.iter().map(|&i| *scenario.load(i).expect("load")).collect(),
            loads,
            omega_com,
            line_scale: scenario.settings.line_time_scale,
            v_clamp: scenario.v_clamp(),
            v_node: vec![DqPair::ZERO; n],
            i_node: vec![DqPair::ZERO; n],
            clamped: vec![false; n],
            clamp_changes: Vec::new(),
        })
    }

    pub fn layout(&self) -> &FullLayout {
        &self.layout
    }

    pub fn omega_com(&self) -> f64 {
        self.omega_com
    }

    pub fn set_load_coefficients(&mut self, node: usize, coefficients: crate::components::ZipCoefficients) {
        if let Some(k) = self.loads.iter().position(|&n| n == node) {
            self.load_cfg[k].coefficients = coefficients;
        }
    }

    /// Number of loads whose current command is clamped at the last accepted step.
    pub fn clamped_loads(&self) -> usize {
        self.clamped.iter().filter(|&&c| c).count()
    }

    /// Node terminal voltages and injected currents, common frame.
    fn terminals(&mut self, x: &[f64]) {
        for (j, (&node, cfg)) in self.gf.iter().zip(&self.gf_cfg).enumerate() {
            let o = self.layout.inverter_offsets[j];
            let inner = &x[o + 3..o + 3 + self.layout.inner_dims[j]];
            let out = inner_loop_output(inner, cfg);
            self.v_node[node] = if cfg.inner.uses_local_frame() {
                to_common(out, x[o])
            } else {
                out
            };
        }
        for (k, &node) in self.loads.iter().enumerate() {
            let o = self.layout.load(k);
            self.v_node[node] = DqPair::new(x[o], x[o + 1]);
        }
        self.i_node.fill(DqPair::ZERO);
        for (l, line) in self.lines.iter().enumerate() {
            let o = self.layout.line(l);
            let cur = DqPair::new(x[o], x[o + 1]);
            self.i_node[line.source] = self.i_node[line.source] + cur;
            self.i_node[line.sink] = self.i_node[line.sink] - cur;
        }
    }

    /// Node current injections `ℬ·x_L` for state `x`.
    pub fn node_injections(&mut self, x: &[f64]) -> Vec<DqPair> {
        self.terminals(x);
        self.i_node.clone()
    }

    /// Builds the state with lines at their static currents, inner loops and
    /// loads at rest, from node phasors and filter states.
    pub fn lift(&self, delta: &[f64], v: &[f64], p_m: &[f64], q_m: &[f64]) -> Result<Vec<f64>, EngineError> {
        let mut x = vec![0.0; self.layout.dim];
        let phasors = polar_phasors(delta, v);
        let mut inj = vec![Complex64::new(0.0, 0.0); phasors.len()];
        for (l, (line, cur)) in self
            .lines
            .iter()
            .zip(line_currents_of(&self.lines, self.omega_com, &phasors))
            .enumerate()
        {
            let o = self.layout.line(l);
            x[o] = cur.im;
            x[o + 1] = cur.re;
            inj[line.source] += cur;
            inj[line.sink] -= cur;
        }
        for (j, (&node, cfg)) in self.gf.iter().zip(&self.gf_cfg).enumerate() {
            let o = self.layout.inverter_offsets[j];
            x[o] = delta[node];
            x[o + 1] = p_m[j];
            x[o + 2] = q_m[j];
            let (u_d, u_v) = droop_control(p_m[j], q_m[j], cfg);
            let i_out = DqPair::from_qd(inj[node]);
            let inner = if cfg.inner.uses_local_frame() {
                let speed = self.omega_com + (u_d - self.omega_com) / cfg.gamma;
                inner_loop_steady_state(DqPair::new(0.0, u_v), to_local(i_out, delta[node]), speed, cfg)
            } else {
                inner_loop_steady_state(DqPair::from_polar(u_v, delta[node]), i_out, self.omega_com, cfg)
            };
            x[o + 3..o + 3 + inner.len()].copy_from_slice(&inner);
        }
        for (k, &node) in self.loads.iter().enumerate() {
            let o = self.layout.load(k);
            let vn = DqPair::from_polar(v[node], delta[node]);
            let (cmd, _) = zip_current_command(vn, &self.load_cfg[k].coefficients, self.v_clamp).map_err(|source| {
                EngineError::Component {
                    node: self.ids[node].clone(),
                    source,
                }
            })?;
            x[o..o + 4].copy_from_slice(&[vn.d, vn.q, cmd.d, cmd.q]);
        }
        Ok(x)
    }

    pub fn sample(&mut self, t: f64, x: &[f64]) -> Sample {
        self.terminals(x);
        let n = self.v_node.len();
        let mut delta = vec![0.0; n];
        let mut omega = vec![None; n];
        let mut p_m = Vec::with_capacity(self.gf.len());
        for (j, (&node, cfg)) in self.gf.iter().zip(&self.gf_cfg).enumerate() {
            let o = self.layout.inverter_offsets[j];
            delta[node] = x[o];
            let (u_d, _) = droop_control(x[o + 1], x[o + 2], cfg);
            omega[node] = Some(self.omega_com + (u_d - self.omega_com) / cfg.gamma);
            p_m.push(x[o + 1]);
        }
        let reference = delta[self.gf[0]];
        for &node in &self.loads {
            delta[node] = reference + wrap_pi(self.v_node[node].angle() - reference);
        }
        let mut p = vec![0.0; n];
        let mut q = vec![0.0; n];
        for i in 0..n {
            let s = instantaneous_power(self.v_node[i], self.i_node[i]);
            p[i] = s.p();
            q[i] = s.q();
        }
        let lines = (0..self.lines.len())
            .map(|l| {
                let o = self.layout.line(l);
                DqPair::new(x[o], x[o + 1])
            })
            .collect();
        Sample {
            t,
            v: self.v_node.iter().map(|v| v.norm()).collect(),
            delta,
            omega,
            p,
            q,
            p_m,
            lines,
        }
    }
}

fn line_currents_of(lines: &[LineData], omega: f64, phasors: &[Complex64]) -> Vec<Complex64> {
    lines
        .iter()
        .map(|l| (phasors[l.source] - phasors[l.sink]) * l.params.admittance(omega))
        .collect()
}

impl DynamicalSystem for FullSystem {
    fn dim(&self) -> usize {
        self.layout.dim
    }

    fn derivative(&mut self, _t: f64, x: &[f64], dx: &mut [f64]) -> Result<(), EngineError> {
        self.terminals(x);
        for (l, line) in self.lines.iter().enumerate() {
            let o = self.layout.line(l);
            let d = line_dq_deriv_scaled(
                DqPair::new(x[o], x[o + 1]),
                self.v_node[line.source],
                self.v_node[line.sink],
                &line.params,
                self.omega_com,
                self.line_scale,
            );
            dx[o] = d.d;
            dx[o + 1] = d.q;
        }
        for (j, (&node, cfg)) in self.gf.iter().zip(&self.gf_cfg).enumerate() {
            let o = self.layout.inverter_offsets[j];
            let s = InverterReducedState {
                delta: x[o],
                p_m: x[o + 1],
                q_m: x[o + 2],
            };
            let v = self.v_node[node];
            let i = self.i_node[node];
            let pq = instantaneous_power(v, i);
            let (u_d, u_v) = droop_control(s.p_m, s.q_m, cfg);
            let (d, _) = reduced_inverter_deriv(&s, u_d, u_v, pq.p(), pq.q(), cfg, self.omega_com);
            dx[o] = d.delta;
            dx[o + 1] = d.p_m;
            dx[o + 2] = d.q_m;
            let end = o + 3 + self.layout.inner_dims[j];
            let res = if cfg.inner.uses_local_frame() {
                let speed = self.omega_com + d.delta;
                inner_loop_deriv(
                    &x[o + 3..end],
                    DqPair::new(0.0, u_v),
                    to_local(i, s.delta),
                    speed,
                    cfg,
                    &mut dx[o + 3..end],
                )
            } else {
                inner_loop_deriv(
                    &x[o + 3..end],
                    DqPair::from_polar(u_v, s.delta),
                    i,
                    self.omega_com,
                    cfg,
                    &mut dx[o + 3..end],
                )
            };
            res.map_err(|source| EngineError::Component {
                node: self.ids[node].clone(),
                source,
            })?;
        }
        for (k, &node) in self.loads.iter().enumerate() {
            let o = self.layout.load(k);
            let st = LoadState {
                v: DqPair::new(x[o], x[o + 1]),
                x: DqPair::new(x[o + 2], x[o + 3]),
            };
            let d = dynamic_load_deriv(&st, -self.i_node[node], &self.load_cfg[k], self.v_clamp).map_err(|source| {
                EngineError::Component {
                    node: self.ids[node].clone(),
                    source,
                }
            })?;
            dx[o..o + 4].copy_from_slice(&[d.dv.d, d.dv.q, d.dx.d, d.dx.q]);
        }
        Ok(())
    }

    fn accept(&mut self, t: f64, x: &[f64]) {
        for (k, &node) in self.loads.iter().enumerate() {
            let o = self.layout.load(k);
            let active =
                DqPair::new(x[o], x[o + 1]).norm() < self.v_clamp && !self.load_cfg[k].coefficients.is_impedance_only();
            if active != self.clamped[node] {
                self.clamped[node] = active;
                self.clamp_changes.push((t, node, active));
            }
        }
    }
}

/// Static line currents for the node phasors, as dq pairs.
pub fn static_line_currents(scenario: &Scenario, omega_com: f64, delta: &[f64], v: &[f64]) -> Vec<DqPair> {
    line_currents(scenario.topology(), omega_com, &polar_phasors(delta, v))
        .into_iter()
        .map(DqPair::from_qd)
        .collect()
}
