//! Reduced model: inverter angle/filter ODEs coupled to algebraic power
//! balances at the load nodes.

use crate::components::{
    droop_control, reduced_inverter_deriv, zip_power, GridFormingConfig, InverterReducedState, ZipCoefficients,
};
use crate::network::{
    build_admittance, line_currents, polar_phasors, power_flow_into, AdmittanceMatrix, NetworkTopology,
};
use crate::signals::DqPair;

use super::integrate::DynamicalSystem;
use super::newton::{newton_solve, NewtonError, NewtonOptions};
use super::scenario::Scenario;
use super::simulate::Sample;
use super::EngineError;

/// Solves the load-node power balances `P_k = P*_k(V_k)`, `Q_k = Q*_k(V_k)`
/// for `(δ_k, V_k)`, with all other node phasors held fixed.
///
/// `delta` and `v` are full node vectors; load entries serve as the initial
/// guess and receive the solution. Returns the Newton iteration count.
pub fn solve_algebraic_loads(
    y: &AdmittanceMatrix,
    loads: &[(usize, ZipCoefficients)],
    node_ids: &[String],
    delta: &mut [f64],
    v: &mut [f64],
    opts: &NewtonOptions,
) -> Result<usize, EngineError> {
    if loads.is_empty() {
        return Ok(0);
    }
    let n = y.size();
    let m = loads.len();
    let mut d = delta.to_vec();
    let mut vv = v.to_vec();
    let mut p = vec![0.0; n];
    let mut q = vec![0.0; n];
    let mut residual = |u: &[f64], r: &mut [f64]| {
        for (j, &(node, _)) in loads.iter().enumerate() {
            d[node] = u[j];
            vv[node] = u[m + j];
        }
        if u[m..].iter().any(|&x| !(x > 0.0)) {
            r.fill(f64::NAN);
            return;
        }
        power_flow_into(&d, &vv, y, &mut p, &mut q);
        for (j, &(node, ref zip)) in loads.iter().enumerate() {
            let (ps, qs) = zip_power(vv[node], zip);
            r[j] = p[node] - ps;
            r[m + j] = q[node] - qs;
        }
    };
    let mut x0 = vec![0.0; 2 * m];
    for (j, &(node, _)) in loads.iter().enumerate() {
        x0[j] = delta[node];
        x0[m + j] = v[node];
    }
    match newton_solve(&mut residual, &x0, opts) {
        Ok(rep) => {
            for (j, &(node, _)) in loads.iter().enumerate() {
                delta[node] = rep.solution[j];
                v[node] = rep.solution[m + j];
            }
            Ok(rep.iterations)
        }
        Err(err) => {
            let (node, worst) = match err.best() {
                Some(best) => {
                    let mut r = vec![0.0; 2 * m];
                    residual(best, &mut r);
                    let j = (0..2 * m)
                        .max_by(|&a, &b| r[a].abs().total_cmp(&r[b].abs()))
                        .unwrap_or(0);
                    (loads[j % m].0, r[j].abs())
                }
                None => (loads[0].0, f64::NAN),
            };
            let detail = match &err {
                NewtonError::NonFiniteStart => "non-positive voltage in the initial guess".to_string(),
                _ => format!(
                    "power balance cannot be met (largest mismatch {worst:.4e}); demand may exceed the transfer limit ({err})"
                ),
            };
            Err(EngineError::Infeasible {
                node: node_ids[node].clone(),
                detail,
            })
        }
    }
}

#[derive(Debug, Clone)]
pub struct ReducedSystem {
    topology: NetworkTopology,
    y: AdmittanceMatrix,
    ids: Vec<String>,
    gf: Vec<usize>,
    gf_cfg: Vec<GridFormingConfig>,
    loads: Vec<(usize, ZipCoefficients)>,
    omega_com: f64,
    newton: NewtonOptions,
    delta: Vec<f64>,
    v: Vec<f64>,
    p: Vec<f64>,
    q: Vec<f64>,
}

impl ReducedSystem {
    pub fn new(scenario: &Scenario, omega_com: f64) -> Result<Self, EngineError> {
        let topology = scenario.topology().clone();
        let y = build_admittance(&topology, omega_com)?;
        let gf = scenario.grid_forming_nodes();
        let gf_cfg = gf
            .iter()
            .map(|&i| *scenario.grid_forming(i).expect("grid-forming node"))
            .collect();
        let loads = scenario
            .load_nodes()
            .into_iter()
            .map(|i| (i, scenario.load(i).expect("load node").coefficients))
            .collect();
        let n = topology.node_count();
        let tol = 1e-12 * scenario.power_scale(&y);
        Ok(ReducedSystem {
            ids: topology.nodes().iter().map(|s| s.id.clone()).collect(),
            topology,
            y,
            gf,
            gf_cfg,
            loads,
            omega_com,
            newton: NewtonOptions {
                tol,
                ..Default::default()
            },
            delta: vec![0.0; n],
            v: vec![scenario.settings.v_nominal; n],
            p: vec![0.0; n],
            q: vec![0.0; n],
        })
    }

    pub fn ode_dim(&self) -> usize {
        3 * self.gf.len()
    }

    pub fn algebraic_dim(&self) -> usize {
        2 * self.loads.len()
    }

    pub fn admittance(&self) -> &AdmittanceMatrix {
        &self.y
    }

    pub fn omega_com(&self) -> f64 {
        self.omega_com
    }

    pub fn newton_options(&self) -> &NewtonOptions {
        &self.newton
    }

    pub fn set_load_coefficients(&mut self, node: usize, coefficients: ZipCoefficients) {
        if let Some(entry) = self.loads.iter_mut().find(|(n, _)| *n == node) {
            entry.1 = coefficients;
        }
    }

    /// Current node angles and voltages (load entries hold the last solution).
    pub fn node_phasors(&self) -> (&[f64], &[f64]) {
        (&self.delta, &self.v)
    }

    /// Overwrites the load-node warm start.
    pub fn set_load_guess(&mut self, delta: &[f64], v: &[f64]) {
        for &(node, _) in &self.loads {
            self.delta[node] = delta[node];
            self.v[node] = v[node];
        }
    }

    fn set_inverters(&mut self, x: &[f64]) -> Result<(), EngineError> {
        for (j, (&node, cfg)) in self.gf.iter().zip(&self.gf_cfg).enumerate() {
            let (_, u_v) = droop_control(x[3 * j + 1], x[3 * j + 2], cfg);
            if !(u_v > 0.0) {
                return Err(EngineError::Infeasible {
                    node: self.ids[node].clone(),
                    detail: format!("voltage reference dropped to {u_v:.4e} V"),
                });
            }
            self.delta[node] = x[3 * j];
            self.v[node] = u_v;
        }
        Ok(())
    }

    /// Sets inverter outputs from `x` and solves the load balances.
    pub fn solve(&mut self, x: &[f64]) -> Result<usize, EngineError> {
        if x.len() != self.ode_dim() {
            return Err(EngineError::Dimension {
                expected: self.ode_dim(),
                got: x.len(),
            });
        }
        self.set_inverters(x)?;
        let it = solve_algebraic_loads(
            &self.y,
            &self.loads,
            &self.ids,
            &mut self.delta,
            &mut self.v,
            &self.newton,
        )?;
        power_flow_into(&self.delta, &self.v, &self.y, &mut self.p, &mut self.q);
        Ok(it)
    }

    /// Largest load-balance mismatch at the last solution.
    pub fn algebraic_residual(&self) -> f64 {
        self.loads
            .iter()
            .map(|&(node, ref zip)| {
                let (ps, qs) = zip_power(self.v[node], zip);
                (self.p[node] - ps).abs().max((self.q[node] - qs).abs())
            })
            .fold(0.0, f64::max)
    }

    pub fn powers(&self) -> (&[f64], &[f64]) {
        (&self.p, &self.q)
    }

    pub fn sample(&mut self, t: f64, x: &[f64]) -> Result<Sample, EngineError> {
        self.solve(x)?;
        let n = self.delta.len();
        let mut omega = vec![None; n];
        let mut p_m = Vec::with_capacity(self.gf.len());
        for (j, (&node, cfg)) in self.gf.iter().zip(&self.gf_cfg).enumerate() {
            let (u_d, _) = droop_control(x[3 * j + 1], x[3 * j + 2], cfg);
            omega[node] = Some(self.omega_com + (u_d - self.omega_com) / cfg.gamma);
            p_m.push(x[3 * j + 1]);
        }
        let phasors = polar_phasors(&self.delta, &self.v);
        let lines = line_currents(&self.topology, self.omega_com, &phasors)
            .into_iter()
            .map(DqPair::from_qd)
            .collect();
        Ok(Sample {
            t,
            v: self.v.clone(),
            delta: self.delta.clone(),
            omega,
            p: self.p.clone(),
            q: self.q.clone(),
            p_m,
            lines,
        })
    }
}

impl DynamicalSystem for ReducedSystem {
    fn dim(&self) -> usize {
        self.ode_dim()
    }

    fn derivative(&mut self, _t: f64, x: &[f64], dx: &mut [f64]) -> Result<(), EngineError> {
        self.solve(x)?;
        for (j, (&node, cfg)) in self.gf.iter().zip(&self.gf_cfg).enumerate() {
            let s = InverterReducedState {
                delta: x[3 * j],
                p_m: x[3 * j + 1],
                q_m: x[3 * j + 2],
            };
            let (u_d, u_v) = droop_control(s.p_m, s.q_m, cfg);
            let (d, _) = reduced_inverter_deriv(&s, u_d, u_v, self.p[node], self.q[node], cfg, self.omega_com);
            dx[3 * j] = d.delta;
            dx[3 * j + 1] = d.p_m;
            dx[3 * j + 2] = d.q_m;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;

    fn two_node(y_line: Complex64) -> AdmittanceMatrix {
        AdmittanceMatrix::from_matrix(nalgebra::DMatrix::from_row_slice(
            2,
            2,
            &[y_line, -y_line, -y_line, y_line],
        ))
    }

    fn ids() -> Vec<String> {
        vec!["s".into(), "l".into()]
    }

    #[test]
    fn impedance_load_matches_voltage_divider() {
        let z_line = Complex64::new(0.3, 0.5);
        let y = two_node(1.0 / z_line);
        let zip = ZipCoefficients {
            a_p: 0.02,
            a_q: 0.01,
            ..Default::default()
        };
        let (mut d, mut v) = (vec![0.2, 0.0], vec![400.0, 400.0]);
        solve_algebraic_loads(
            &y,
            &[(1, zip)],
            &ids(),
            &mut d,
            &mut v,
            &NewtonOptions {
                tol: 1e-8,
                ..Default::default()
            },
        )
        .unwrap();
        // load admittance drawing S = (a_P + j a_Q)V² is (a_P − j a_Q) in qd phasors
        let y_load = Complex64::new(zip.a_p, -zip.a_q);
        let vs = Complex64::from_polar(400.0, 0.2);
        let vl = vs / (1.0 + z_line * y_load);
        assert!((v[1] - vl.norm()).abs() < 1e-9 * 400.0);
        assert!((d[1] - vl.arg()).abs() < 1e-10);
    }

    #[test]
    fn zero_load_has_no_drop() {
        let y = two_node(1.0 / Complex64::new(0.3, 0.5));
        let (mut d, mut v) = (vec![0.4, 0.0], vec![410.0, 380.0]);
        solve_algebraic_loads(
            &y,
            &[(1, ZipCoefficients::default())],
            &ids(),
            &mut d,
            &mut v,
            &NewtonOptions {
                tol: 1e-9,
                ..Default::default()
            },
        )
        .unwrap();
        assert!((d[1] - 0.4).abs() < 1e-12 && (v[1] - 410.0).abs() < 1e-10);
    }

    #[test]
    fn demand_beyond_transfer_limit_is_infeasible() {
        // lossless X = 1, V_source = 1: at most 0.5 W of constant power can reach the load
        let y = two_node(Complex64::new(0.0, -1.0));
        let zip = ZipCoefficients {
            c_p: 1.5,
            ..Default::default()
        };
        let (mut d, mut v) = (vec![0.0, 0.0], vec![1.0, 1.0]);
        let err =
            solve_algebraic_loads(&y, &[(1, zip)], &ids(), &mut d, &mut v, &NewtonOptions::default()).unwrap_err();
        match err {
            EngineError::Infeasible { node, .. } => assert_eq!(node, "l"),
            other => panic!("{other:?}"),
        }
        // just inside the limit the solve succeeds
        let zip = ZipCoefficients {
            c_p: 0.45,
            ..Default::default()
        };
        let (mut d, mut v) = (vec![0.0, 0.0], vec![1.0, 1.0]);
        solve_algebraic_loads(&y, &[(1, zip)], &ids(), &mut d, &mut v, &NewtonOptions::default()).unwrap();
        assert!(v[1] > 0.5);
    }
}
