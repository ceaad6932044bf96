//! Synchronous operating point of the reduced model.

use crate::components::{zip_power, GridFormingConfig, ZipCoefficients};
use crate::network::{build_admittance, power_flow_into};

use super::newton::{newton_solve, NewtonOptions};
use super::scenario::Scenario;
use super::EngineError;

#[derive(Debug, Clone, PartialEq)]
pub struct Equilibrium {
    /// Node angles with the first grid-forming node at 0.
    pub delta: Vec<f64>,
    pub v: Vec<f64>,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub omega_s: f64,
    /// Frame speed the line reactances were evaluated at.
    pub omega_com: f64,
    pub residual: f64,
    pub iterations: usize,
}

impl Equilibrium {
    /// Reduced ODE state `[δ, P^m, Q^m]` per grid-forming node with filters settled.
    pub fn reduced_state(&self, scenario: &Scenario) -> Vec<f64> {
        scenario
            .grid_forming_nodes()
            .into_iter()
            .flat_map(|i| [self.delta[i], self.p[i], self.q[i]])
            .collect()
    }
}

/// Solves droop and load balances for node phasors and the common frequency.
///
/// Unknowns are `δ` of all but the first grid-forming node, inverter and load
/// voltages, load angles and `ω^s`. Droop rows are divided by their gains so
/// every residual is in W or var.
pub fn find_equilibrium(scenario: &Scenario, omega_com: f64) -> Result<Equilibrium, EngineError> {
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
    let n1 = gf.len();
    let nl = loads.len();
    let dim = (n1 - 1) + n1 + 2 * nl + 1;

    let unpack = |u: &[f64], delta: &mut [f64], v: &mut [f64]| -> f64 {
        delta[gf[0]] = 0.0;
        for j in 1..n1 {
            delta[gf[j]] = u[j - 1];
        }
        for j in 0..n1 {
            v[gf[j]] = u[n1 - 1 + j];
        }
        let base = 2 * n1 - 1;
        for (k, &(node, _)) in loads.iter().enumerate() {
            delta[node] = u[base + k];
            v[node] = u[base + nl + k];
        }
        u[dim - 1]
    };

    let mut delta = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut q = vec![0.0; n];
    let mut residual = |u: &[f64], r: &mut [f64]| {
        let omega_s = unpack(u, &mut delta, &mut v);
        if v.iter().any(|&x| !(x > 0.0)) {
            r.fill(f64::NAN);
            return;
        }
        power_flow_into(&delta, &v, &y, &mut p, &mut q);
        for (j, (&node, c)) in gf.iter().zip(&gf_cfg).enumerate() {
            r[j] = (c.omega_set - c.k_p * (p[node] - c.p_set) - omega_s) / c.k_p;
            r[n1 + j] = (c.v_set - c.k_q * (q[node] - c.q_set) - v[node]) / c.k_q;
        }
        for (k, &(node, ref zip)) in loads.iter().enumerate() {
            let (ps, qs) = zip_power(v[node], zip);
            r[2 * n1 + k] = p[node] - ps;
            r[2 * n1 + nl + k] = q[node] - qs;
        }
    };

    let mut u0 = vec![0.0; dim];
    for j in 0..n1 {
        u0[n1 - 1 + j] = gf_cfg[j].v_set;
    }
    for k in 0..nl {
        u0[2 * n1 - 1 + nl + k] = scenario.settings.v_nominal;
    }
    u0[dim - 1] = gf_cfg.iter().map(|c| c.omega_set).sum::<f64>() / n1 as f64;

    let opts = NewtonOptions {
        tol: 1e-12 * scenario.power_scale(&y),
        max_iter: 100,
        ..Default::default()
    };
    let rep = newton_solve(&mut residual, &u0, &opts).map_err(|err| {
        let node = match err.best() {
            Some(best) => {
                let mut r = vec![0.0; dim];
                residual(best, &mut r);
                let j = (0..dim).max_by(|&a, &b| r[a].abs().total_cmp(&r[b].abs())).unwrap_or(0);
                if j < 2 * n1 {
                    gf[j % n1]
                } else {
                    loads[(j - 2 * n1) % nl].0
                }
            }
            None => gf[0],
        };
        EngineError::Infeasible {
            node: scenario.node_id(node).to_string(),
            detail: format!("no synchronous operating point found ({err})"),
        }
    })?;

    let mut r = vec![0.0; dim];
    residual(&rep.solution, &mut r);
    let omega_s = unpack(&rep.solution, &mut delta, &mut v);
    power_flow_into(&delta, &v, &y, &mut p, &mut q);
    Ok(Equilibrium {
        delta: delta.clone(),
        v: v.clone(),
        p: p.clone(),
        q: q.clone(),
        omega_s,
        omega_com,
        residual: r.iter().fold(0.0, |m, x| m.max(x.abs())),
        iterations: rep.iterations,
    })
}

/// Equilibrium with `ω^com = ω^s`, iterating because the line reactances depend on `ω^com`.
pub fn synchronous_equilibrium(scenario: &Scenario) -> Result<Equilibrium, EngineError> {
    let mut omega = scenario.settings.omega_nominal;
    for _ in 0..50 {
        let eq = find_equilibrium(scenario, omega)?;
        if (eq.omega_s - omega).abs() <= 1e-12 * omega {
            return Ok(eq);
        }
        omega = eq.omega_s;
    }
    let eq = find_equilibrium(scenario, omega)?;
    log::warn!(
        "synchronous frequency iteration stopped with |ω^s − ω^com| = {:.3e}",
        (eq.omega_s - omega).abs()
    );
    Ok(eq)
}
