//! Electrical network: topology, incidence and admittance matrices, static
//! phasor currents, power flow equations and Kron reduction.
//!
//! Phasors use the `q + j·d` convention, so a node voltage with magnitude
//! `V_i` and angle `δ_i` in the common frame is `V_i·e^{jδ_i}`.

use std::collections::{HashSet, VecDeque};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("network needs at least two nodes, got {0}")]
    TooFewNodes(usize),
    #[error("network needs at least one line")]
    NoLines,
    #[error("line {line} references node index {node}, but only {count} nodes exist")]
    UnknownNode { line: usize, node: usize, count: usize },
    #[error("line {line} is a self-loop at node '{node}'")]
    SelfLoop { line: usize, node: String },
    #[error("line {line} duplicates line {first} between '{a}' and '{b}'")]
    DuplicateLine {
        line: usize,
        first: usize,
        a: String,
        b: String,
    },
    #[error("network is disconnected: node '{0}' is unreachable from '{1}'")]
    Disconnected(String, String),
    #[error("line {line}: resistance and inductance must be positive (R = {r}, L = {l})")]
    InvalidLine { line: usize, r: f64, l: f64 },
    #[error("invalid line parameters: R = {r} ohm, L = {l} H (both must be > 0)")]
    InvalidLineParams { r: f64, l: f64 },
    #[error("common frame speed must be positive, got {0} rad/s")]
    InvalidFrequency(f64),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("cannot eliminate node '{0}': it has an independent current injection")]
    InjectingNodeEliminated(String),
    #[error("node index {0} listed twice or out of range in Kron reduction")]
    BadKronIndex(usize),
    #[error("eliminated sub-block is singular (reciprocal condition estimate {rcond:.3e})")]
    SingularElimination { rcond: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NodeKind {
    /// Grid-forming inverter (voltage source).
    GridForming,
    /// Load or grid-feeding unit.
    LoadOrFeeding,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeSpec {
    pub id: String,
    pub kind: NodeKind,
}

impl NodeSpec {
    pub fn new(id: impl Into<String>, kind: NodeKind) -> Self {
        NodeSpec { id: id.into(), kind }
    }
}

/// Symmetric series RL line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineParams {
    resistance: f64,
    inductance: f64,
}

impl LineParams {
    pub fn new(resistance: f64, inductance: f64) -> Result<Self, NetworkError> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !ok(resistance) || !ok(inductance) {
            return Err(NetworkError::InvalidLineParams {
                r: resistance,
                l: inductance,
            });
        }
        Ok(LineParams { resistance, inductance })
    }

    pub fn resistance(&self) -> f64 {
        self.resistance
    }

    pub fn inductance(&self) -> f64 {
        self.inductance
    }

    pub fn reactance(&self, omega_com: f64) -> f64 {
        self.inductance * omega_com
    }

    pub fn time_constant(&self) -> f64 {
        self.inductance / self.resistance
    }

    /// Series admittance `1/(R + jX)` at the given frame speed.
    pub fn admittance(&self, omega_com: f64) -> Complex64 {
        Complex64::new(self.resistance, self.reactance(omega_com)).inv()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Line {
    /// Endpoints as given by the caller.
    pub from: usize,
    pub to: usize,
    pub params: LineParams,
}

impl Line {
    pub fn new(from: usize, to: usize, params: LineParams) -> Self {
        Line { from, to, params }
    }

    /// Source node for the incidence sign convention (lower index).
    pub fn source(&self) -> usize {
        self.from.min(self.to)
    }

    pub fn sink(&self) -> usize {
        self.from.max(self.to)
    }
}

/// Nodes, lines and the node-line incidence matrix.
///
/// Lines keep their input order. For line `l`, the lower node index is the
/// source (`+1`) and the higher is the sink (`−1`); line currents are
/// positive when flowing from source to sink.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkTopology {
    nodes: Vec<NodeSpec>,
    lines: Vec<Line>,
    incidence: DMatrix<i8>,
}

pub fn build_topology(nodes: Vec<NodeSpec>, lines: Vec<Line>) -> Result<NetworkTopology, NetworkError> {
    let n = nodes.len();
    if n < 2 {
        return Err(NetworkError::TooFewNodes(n));
    }
    if lines.is_empty() {
        return Err(NetworkError::NoLines);
    }
    let mut seen = std::collections::HashMap::new();
    for (l, line) in lines.iter().enumerate() {
        for node in [line.from, line.to] {
            if node >= n {
                return Err(NetworkError::UnknownNode {
                    line: l,
                    node,
                    count: n,
                });
            }
        }
        if line.from == line.to {
            return Err(NetworkError::SelfLoop {
                line: l,
                node: nodes[line.from].id.clone(),
            });
        }
        if let Some(&first) = seen.get(&(line.source(), line.sink())) {
            return Err(NetworkError::DuplicateLine {
                line: l,
                first,
                a: nodes[line.source()].id.clone(),
                b: nodes[line.sink()].id.clone(),
            });
        }
        seen.insert((line.source(), line.sink()), l);
    }

    let mut incidence = DMatrix::<i8>::zeros(n, lines.len());
    for (l, line) in lines.iter().enumerate() {
        incidence[(line.source(), l)] = 1;
        incidence[(line.sink(), l)] = -1;
    }

    let topology = NetworkTopology {
        nodes,
        lines,
        incidence,
    };
    if let Some(k) = topology.unreachable_from_first() {
        return Err(NetworkError::Disconnected(
            topology.nodes[k].id.clone(),
            topology.nodes[0].id.clone(),
        ));
    }
    Ok(topology)
}

impl NetworkTopology {
    pub fn nodes(&self) -> &[NodeSpec] {
        &self.nodes
    }

    pub fn lines(&self) -> &[Line] {
        &self.lines
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn line_count(&self) -> usize {
        self.lines.len()
    }

    pub fn incidence(&self) -> &DMatrix<i8> {
        &self.incidence
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.id == id)
    }

    pub fn kind(&self, node: usize) -> NodeKind {
        self.nodes[node].kind
    }

    /// Indices of nodes of the given kind, in node order.
    pub fn nodes_of_kind(&self, kind: NodeKind) -> Vec<usize> {
        (0..self.nodes.len()).filter(|&i| self.nodes[i].kind == kind).collect()
    }

    /// Indices of the lines touching `node`.
    pub fn lines_at(&self, node: usize) -> Vec<usize> {
        (0..self.lines.len())
            .filter(|&l| self.incidence[(node, l)] != 0)
            .collect()
    }

    pub fn max_time_constant(&self) -> f64 {
        self.lines.iter().map(|l| l.params.time_constant()).fold(0.0, f64::max)
    }

    /// Same topology with every line parameter replaced by `f(line)`.
    pub fn map_lines(&self, mut f: impl FnMut(&Line) -> LineParams) -> NetworkTopology {
        let mut out = self.clone();
        for line in out.lines.iter_mut() {
            line.params = f(line);
        }
        out
    }

    fn unreachable_from_first(&self) -> Option<usize> {
        let n = self.nodes.len();
        let mut adj = vec![Vec::new(); n];
        for line in &self.lines {
            adj[line.from].push(line.to);
            adj[line.to].push(line.from);
        }
        let mut visited = vec![false; n];
        let mut queue = VecDeque::from([0usize]);
        visited[0] = true;
        while let Some(i) = queue.pop_front() {
            for &k in &adj[i] {
                if !visited[k] {
                    visited[k] = true;
                    queue.push_back(k);
                }
            }
        }
        visited.iter().position(|v| !v)
    }
}

/// Nodal admittance matrix `𝒴 = ℬ·diag(1/(R_l + jX_l))·ℬᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmittanceMatrix {
    y: DMatrix<Complex64>,
}

pub fn build_admittance(topology: &NetworkTopology, omega_com: f64) -> Result<AdmittanceMatrix, NetworkError> {
    if !(omega_com > 0.0) || !omega_com.is_finite() {
        return Err(NetworkError::InvalidFrequency(omega_com));
    }
    let n = topology.node_count();
    let mut y = DMatrix::<Complex64>::zeros(n, n);
    for line in topology.lines() {
        let yl = line.params.admittance(omega_com);
        let (i, k) = (line.source(), line.sink());
        y[(i, i)] += yl;
        y[(k, k)] += yl;
        y[(i, k)] -= yl;
        y[(k, i)] -= yl;
    }
    Ok(AdmittanceMatrix { y })
}

impl AdmittanceMatrix {
    pub fn from_matrix(y: DMatrix<Complex64>) -> Self {
        assert!(y.is_square(), "admittance matrix must be square");
        AdmittanceMatrix { y }
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.y
    }

    pub fn size(&self) -> usize {
        self.y.nrows()
    }

    pub fn entry(&self, i: usize, k: usize) -> Complex64 {
        self.y[(i, k)]
    }

    /// `G_ii = Re 𝒴_ii`.
    pub fn g_self(&self, i: usize) -> f64 {
        self.y[(i, i)].re
    }

    /// `B_ii = Im 𝒴_ii`.
    pub fn b_self(&self, i: usize) -> f64 {
        self.y[(i, i)].im
    }

    /// `Y_ik = G_ik + jB_ik = −𝒴_ik` for `i ≠ k`.
    pub fn mutual(&self, i: usize, k: usize) -> Complex64 {
        -self.y[(i, k)]
    }

    /// `max |𝒴 − 𝒴ᵀ|`.
    pub fn asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.size() {
            for k in 0..self.size() {
                worst = worst.max((self.y[(i, k)] - self.y[(k, i)]).norm());
            }
        }
        worst
    }

    /// `max_i |Σ_k 𝒴_ik|`.
    pub fn max_row_sum(&self) -> f64 {
        self.y
            .row_iter()
            .map(|r| r.iter().sum::<Complex64>().norm())
            .fold(0.0, f64::max)
    }
}

/// Common-frame node current injections `Î = 𝒴·V̂`.
pub fn static_currents(y: &AdmittanceMatrix, v_hat: &[Complex64]) -> Result<Vec<Complex64>, NetworkError> {
    if v_hat.len() != y.size() {
        return Err(NetworkError::Dimension {
            expected: y.size(),
            got: v_hat.len(),
        });
    }
    let v = DVector::from_column_slice(v_hat);
    Ok((&y.y * v).iter().copied().collect())
}

/// Static line currents `(V̂_source − V̂_sink)/(R + jX)`, source → sink.
///
/// Accepts `ω = 0` (purely resistive lines).
pub fn line_currents(topology: &NetworkTopology, omega_com: f64, v_hat: &[Complex64]) -> Vec<Complex64> {
    topology
        .lines()
        .iter()
        .map(|l| (v_hat[l.source()] - v_hat[l.sink()]) * l.params.admittance(omega_com))
        .collect()
}

/// Total ohmic loss `Σ R_l |I_l|²` for the given static line currents.
pub fn line_losses(topology: &NetworkTopology, currents: &[Complex64]) -> f64 {
    topology
        .lines()
        .iter()
        .zip(currents)
        .map(|(l, i)| l.params.resistance() * i.norm_sqr())
        .sum()
}

pub fn polar_phasors(delta: &[f64], v: &[f64]) -> Vec<Complex64> {
    delta
        .iter()
        .zip(v)
        .map(|(&d, &m)| Complex64::from_polar(m, d))
        .collect()
}

fn check_lengths(y: &AdmittanceMatrix, delta: &[f64], v: &[f64]) -> Result<(), NetworkError> {
    for got in [delta.len(), v.len()] {
        if got != y.size() {
            return Err(NetworkError::Dimension {
                expected: y.size(),
                got,
            });
        }
    }
    Ok(())
}

/// Local-frame currents `(I_q,i, I_d,i)` of every node.
pub fn local_currents(delta: &[f64], v: &[f64], y: &AdmittanceMatrix) -> Result<Vec<(f64, f64)>, NetworkError> {
    check_lengths(y, delta, v)?;
    let n = y.size();
    Ok((0..n)
        .map(|i| {
            let mut iq = y.g_self(i) * v[i];
            let mut id = y.b_self(i) * v[i];
            for k in 0..n {
                if k == i || y.y[(i, k)] == Complex64::new(0.0, 0.0) {
                    continue;
                }
                let yik = y.mutual(i, k);
                let (s, c) = (delta[i] - delta[k]).sin_cos();
                iq -= (yik.re * c + yik.im * s) * v[k];
                id -= (yik.im * c - yik.re * s) * v[k];
            }
            (iq, id)
        })
        .collect())
}

/// Active and reactive power injections at every node.
pub fn power_flow(delta: &[f64], v: &[f64], y: &AdmittanceMatrix) -> Result<(Vec<f64>, Vec<f64>), NetworkError> {
    check_lengths(y, delta, v)?;
    let n = y.size();
    let mut p = vec![0.0; n];
    let mut q = vec![0.0; n];
    power_flow_into(delta, v, y, &mut p, &mut q);
    Ok((p, q))
}

/// Allocation-free [`power_flow`]; lengths are the caller's responsibility.
pub fn power_flow_into(delta: &[f64], v: &[f64], y: &AdmittanceMatrix, p: &mut [f64], q: &mut [f64]) {
    let n = y.size();
    for i in 0..n {
        let vi = v[i];
        let mut pi = y.g_self(i) * vi * vi;
        let mut qi = -y.b_self(i) * vi * vi;
        for k in 0..n {
            if k == i {
                continue;
            }
            let yik = -y.y[(i, k)];
            if yik.re == 0.0 && yik.im == 0.0 {
                continue;
            }
            let (s, c) = (delta[i] - delta[k]).sin_cos();
            let vv = v[k] * vi;
            pi -= (yik.re * c + yik.im * s) * vv;
            qi += (yik.im * c - yik.re * s) * vv;
        }
        p[i] = pi;
        q[i] = qi;
    }
}

/// Analytic Jacobian of [`power_flow`] with respect to `(δ, V)`.
///
/// Rows are `[P_0..P_{n−1}, Q_0..Q_{n−1}]`, columns `[δ_0..δ_{n−1}, V_0..V_{n−1}]`.
pub fn power_flow_jacobian(delta: &[f64], v: &[f64], y: &AdmittanceMatrix) -> Result<DMatrix<f64>, NetworkError> {
    check_lengths(y, delta, v)?;
    let n = y.size();
    let mut j = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        j[(i, n + i)] += 2.0 * y.g_self(i) * v[i];
        j[(n + i, n + i)] += -2.0 * y.b_self(i) * v[i];
        for k in 0..n {
            if k == i {
                continue;
            }
            let yik = -y.y[(i, k)];
            if yik.re == 0.0 && yik.im == 0.0 {
                continue;
            }
            let (g, b) = (yik.re, yik.im);
            let (s, c) = (delta[i] - delta[k]).sin_cos();
            // P_i term: −(g c + b s) V_i V_k
            let dp_ddelta = -(-g * s + b * c) * v[i] * v[k];
            j[(i, i)] += dp_ddelta;
            j[(i, k)] -= dp_ddelta;
            j[(i, n + i)] += -(g * c + b * s) * v[k];
            j[(i, n + k)] += -(g * c + b * s) * v[i];
            // Q_i term: (b c − g s) V_i V_k
            let dq_ddelta = (-b * s - g * c) * v[i] * v[k];
            j[(n + i, i)] += dq_ddelta;
            j[(n + i, k)] -= dq_ddelta;
            j[(n + i, n + i)] += (b * c - g * s) * v[k];
            j[(n + i, n + k)] += (b * c - g * s) * v[i];
        }
    }
    Ok(j)
}

/// Role of a node in a Kron reduction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KronRole {
    Retain,
    /// Zero-injection node; its load, if any, folded in as a shunt admittance.
    Eliminate {
        shunt: Complex64,
    },
}

/// Kron-reduced admittance matrix over the retained nodes (in original order).
#[derive(Debug, Clone, PartialEq)]
pub struct KronReduction {
    pub retained: Vec<usize>,
    pub admittance: AdmittanceMatrix,
}

/// Schur-complement elimination `𝒴_rr − 𝒴_re·(𝒴_ee + Y_sh)⁻¹·𝒴_er`.
///
/// Grid-forming nodes carry an independent injection and cannot be eliminated.
pub fn kron_reduce(
    topology: &NetworkTopology,
    y: &AdmittanceMatrix,
    roles: &[KronRole],
) -> Result<KronReduction, NetworkError> {
    let n = y.size();
    if roles.len() != n {
        return Err(NetworkError::Dimension {
            expected: n,
            got: roles.len(),
        });
    }
    let mut retained = Vec::new();
    let mut eliminated = Vec::new();
    for (i, role) in roles.iter().enumerate() {
        match role {
            KronRole::Retain => retained.push(i),
            KronRole::Eliminate { shunt } => {
                if topology.kind(i) == NodeKind::GridForming {
                    return Err(NetworkError::InjectingNodeEliminated(topology.nodes()[i].id.clone()));
                }
                eliminated.push((i, *shunt));
            }
        }
    }
    kron_reduce_indices(y, &retained, &eliminated)
}

/// Index-level Kron reduction without node-kind checks.
pub fn kron_reduce_indices(
    y: &AdmittanceMatrix,
    retained: &[usize],
    eliminated: &[(usize, Complex64)],
) -> Result<KronReduction, NetworkError> {
    let n = y.size();
    let mut used = HashSet::new();
    for &i in retained.iter().chain(eliminated.iter().map(|(i, _)| i)) {
        if i >= n || !used.insert(i) {
            return Err(NetworkError::BadKronIndex(i));
        }
    }
    let m = y.matrix();
    let (r, e) = (retained.len(), eliminated.len());
    let yrr = DMatrix::from_fn(r, r, |a, b| m[(retained[a], retained[b])]);
    if e == 0 {
        return Ok(KronReduction {
            retained: retained.to_vec(),
            admittance: AdmittanceMatrix { y: yrr },
        });
    }
    let yee = DMatrix::from_fn(e, e, |a, b| {
        let v = m[(eliminated[a].0, eliminated[b].0)];
        if a == b {
            v + eliminated[a].1
        } else {
            v
        }
    });
    let yre = DMatrix::from_fn(r, e, |a, b| m[(retained[a], eliminated[b].0)]);
    let yer = DMatrix::from_fn(e, r, |a, b| m[(eliminated[a].0, retained[b])]);

    let norm1 = |a: &DMatrix<Complex64>| {
        a.column_iter()
            .map(|c| c.iter().map(|z| z.norm()).sum::<f64>())
            .fold(0.0, f64::max)
    };
    let lu = yee.clone().lu();
    let rcond = match lu.try_inverse() {
        Some(inv) => 1.0 / (norm1(&yee) * norm1(&inv)),
        None => 0.0,
    };
    if !(rcond > 1e-14) {
        return Err(NetworkError::SingularElimination { rcond });
    }
    let x = yee
        .lu()
        .solve(&yer)
        .ok_or(NetworkError::SingularElimination { rcond })?;
    Ok(KronReduction {
        retained: retained.to_vec(),
        admittance: AdmittanceMatrix { y: yrr - yre * x },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn nodes(n: usize) -> Vec<NodeSpec> {
        (0..n)
            .map(|i| {
                let kind = if i == 0 {
                    NodeKind::GridForming
                } else {
                    NodeKind::LoadOrFeeding
                };
                NodeSpec::new(format!("n{i}"), kind)
            })
            .collect()
    }

    fn line(a: usize, b: usize, r: f64, l: f64) -> Line {
        Line::new(a, b, LineParams::new(r, l).unwrap())
    }

    #[test]
    fn two_node_incidence() {
        let t = build_topology(nodes(2), vec![line(0, 1, 1.0, 1.0)]).unwrap();
        assert_eq!(t.incidence().column(0).as_slice(), &[1, -1]);
        // reversed input keeps the lower index as source
        let t = build_topology(nodes(2), vec![line(1, 0, 1.0, 1.0)]).unwrap();
        assert_eq!(t.incidence().column(0).as_slice(), &[1, -1]);
    }

    #[test]
    fn path_graph_rank() {
        let t = build_topology(nodes(3), vec![line(0, 1, 1.0, 1.0), line(1, 2, 1.0, 1.0)]).unwrap();
        let b = t.incidence().map(|v| v as f64);
        assert_eq!(b.shape(), (3, 2));
        assert_eq!(b.svd(false, false).rank(1e-12), 2);
    }

    #[test]
    fn construction_errors_name_the_offender() {
        let e = build_topology(nodes(3), vec![line(0, 1, 1.0, 1.0)]).unwrap_err();
        assert_eq!(e, NetworkError::Disconnected("n2".into(), "n0".into()));
        let e = build_topology(nodes(2), vec![line(1, 1, 1.0, 1.0)]).unwrap_err();
        assert_eq!(
            e,
            NetworkError::SelfLoop {
                line: 0,
                node: "n1".into()
            }
        );
        let e = build_topology(nodes(2), vec![line(0, 1, 1.0, 1.0), line(1, 0, 2.0, 1.0)]).unwrap_err();
        assert!(matches!(e, NetworkError::DuplicateLine { line: 1, first: 0, .. }));
        assert_eq!(
            build_topology(nodes(1), vec![]).unwrap_err(),
            NetworkError::TooFewNodes(1)
        );
        assert_eq!(build_topology(nodes(2), vec![]).unwrap_err(), NetworkError::NoLines);
        assert!(LineParams::new(0.0, 1.0).is_err());
        assert!(LineParams::new(1.0, -1.0).is_err());
    }

    #[test]
    fn single_line_admittance() {
        let t = build_topology(nodes(2), vec![line(0, 1, 1.0, 1.0)]).unwrap();
        let y = build_admittance(&t, 1.0).unwrap();
        let yl = Complex64::new(0.5, -0.5);
        assert!((y.entry(0, 0) - yl).norm() < 1e-15);
        assert!((y.entry(0, 1) + yl).norm() < 1e-15);
        assert!((y.entry(1, 0) + yl).norm() < 1e-15);
        assert!((y.entry(1, 1) - yl).norm() < 1e-15);
        assert!((y.mutual(0, 1) - yl).norm() < 1e-15);
        assert_eq!((y.g_self(0), y.b_self(0)), (0.5, -0.5));
        assert!(build_admittance(&t, 0.0).is_err());
    }

    #[test]
    fn non_adjacent_entries_vanish() {
        let t = build_topology(nodes(3), vec![line(0, 1, 1.0, 1.0), line(1, 2, 1.0, 1.0)]).unwrap();
        let y = build_admittance(&t, 100.0).unwrap();
        assert_eq!(y.entry(0, 2), Complex64::new(0.0, 0.0));
        assert_eq!(y.entry(2, 0), Complex64::new(0.0, 0.0));
    }

    #[test]
    fn two_node_static_currents() {
        let t = build_topology(nodes(2), vec![line(0, 1, 1.0, 1.0)]).unwrap();
        let y = build_admittance(&t, 1.0).unwrap();
        let i = static_currents(&y, &[Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)]).unwrap();
        assert!((i[0] - Complex64::new(0.5, -0.5)).norm() < 1e-15);
        assert!((i[1] - Complex64::new(-0.5, 0.5)).norm() < 1e-15);
        let c = Complex64::new(0.3, -2.0);
        let i = static_currents(&y, &[c, c]).unwrap();
        assert!(i.iter().all(|z| z.norm() < 1e-15));
        assert!(static_currents(&y, &[c]).is_err());
    }

    fn lossless_pair() -> AdmittanceMatrix {
        // R = 0 is outside LineParams' domain, so build 𝒴 by hand
        let yl = Complex64::new(0.0, -1.0);
        AdmittanceMatrix::from_matrix(DMatrix::from_row_slice(2, 2, &[yl, -yl, -yl, yl]))
    }

    #[test]
    fn lossless_two_node_flow() {
        // frozen from the phasor product S_i = V̂_i·conj(Î_i)
        let y = lossless_pair();
        let (p, q) = power_flow(&[PI / 6.0, 0.0], &[1.0, 1.0], &y).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-15);
        assert!((p[1] + 0.5).abs() < 1e-15);
        let q_expected = 1.0 - (PI / 6.0).cos();
        assert!((q[0] - q_expected).abs() < 1e-15);
        assert!((q[1] - q_expected).abs() < 1e-15);
        assert!((q_expected - 0.133975).abs() < 1e-6);

        let v = polar_phasors(&[PI / 6.0, 0.0], &[1.0, 1.0]);
        let i = static_currents(&y, &v).unwrap();
        for k in 0..2 {
            let s = v[k] * i[k].conj();
            assert!((s.re - p[k]).abs() < 1e-15 && (s.im - q[k]).abs() < 1e-15);
        }

        let (p, q) = power_flow(&[0.2, 0.2], &[1.0, 1.0], &y).unwrap();
        assert!(p.iter().chain(&q).all(|x| x.abs() < 1e-15));
    }

    #[test]
    fn local_currents_consistent_with_power() {
        let t = build_topology(
            nodes(3),
            vec![line(0, 1, 0.3, 0.002), line(1, 2, 0.5, 0.001), line(0, 2, 0.2, 0.003)],
        )
        .unwrap();
        let y = build_admittance(&t, 314.0).unwrap();
        let (d, v) = ([0.1, -0.05, 0.02], [1.02, 0.97, 1.0]);
        let i = local_currents(&d, &v, &y).unwrap();
        let (p, q) = power_flow(&d, &v, &y).unwrap();
        for k in 0..3 {
            assert!((p[k] - v[k] * i[k].0).abs() < 1e-12);
            assert!((q[k] + v[k] * i[k].1).abs() < 1e-12);
        }
        let flat = local_currents(&[0.3; 3], &[1.0; 3], &y).unwrap();
        assert!(flat.iter().all(|(a, b)| a.abs() < 1e-12 && b.abs() < 1e-12));
    }

    #[test]
    fn chain_elimination_is_series_combination() {
        let t = build_topology(nodes(3), vec![line(0, 1, 0.3, 0.002), line(1, 2, 0.5, 0.001)]).unwrap();
        let w = 314.0;
        let y = build_admittance(&t, w).unwrap();
        let roles = [
            KronRole::Retain,
            KronRole::Eliminate {
                shunt: Complex64::new(0.0, 0.0),
            },
            KronRole::Retain,
        ];
        let red = kron_reduce(&t, &y, &roles).unwrap();
        let (y12, y23) = (t.lines()[0].params.admittance(w), t.lines()[1].params.admittance(w));
        let ys = y12 * y23 / (y12 + y23);
        let m = red.admittance.matrix();
        assert!((m[(0, 0)] - ys).norm() < 1e-12);
        assert!((m[(0, 1)] + ys).norm() < 1e-12);
        assert_eq!(red.retained, vec![0, 2]);
    }

    #[test]
    fn kron_rejects_grid_forming_and_singular() {
        let t = build_topology(nodes(2), vec![line(0, 1, 1.0, 1.0)]).unwrap();
        let y = build_admittance(&t, 1.0).unwrap();
        let zero = Complex64::new(0.0, 0.0);
        let e = kron_reduce(&t, &y, &[KronRole::Eliminate { shunt: zero }, KronRole::Retain]).unwrap_err();
        assert_eq!(e, NetworkError::InjectingNodeEliminated("n0".into()));

        // eliminating a floating island without shunts
        let e = kron_reduce_indices(&y, &[], &[(0, zero), (1, zero)]).unwrap_err();
        assert!(matches!(e, NetworkError::SingularElimination { .. }));
    }

    #[test]
    fn kron_with_nothing_eliminated_is_identity() {
        let t = build_topology(nodes(3), vec![line(0, 1, 0.3, 0.002), line(1, 2, 0.5, 0.001)]).unwrap();
        let y = build_admittance(&t, 314.0).unwrap();
        let red = kron_reduce(&t, &y, &[KronRole::Retain; 3]).unwrap();
        assert_eq!(red.admittance, y);
    }

    #[test]
    fn analytic_jacobian_matches_finite_differences() {
        let t = build_topology(
            nodes(4),
            vec![
                line(0, 1, 0.3, 0.002),
                line(1, 2, 0.5, 0.001),
                line(2, 3, 0.2, 0.003),
                line(0, 3, 0.8, 0.001),
            ],
        )
        .unwrap();
        let y = build_admittance(&t, 314.0).unwrap();
        let d = [0.1, -0.2, 0.05, 0.3];
        let v = [400.0, 395.0, 402.0, 390.0];
        let j = power_flow_jacobian(&d, &v, &y).unwrap();
        let n = 4;
        let eval = |x: &[f64]| {
            let (p, q) = power_flow(&x[..n], &x[n..], &y).unwrap();
            [p, q].concat()
        };
        let x0: Vec<f64> = d.iter().chain(&v).copied().collect();
        let f0 = eval(&x0);
        let scale = j.amax();
        for c in 0..2 * n {
            let h = 1e-7 * x0[c].abs().max(1.0);
            let mut xp = x0.clone();
            let mut xm = x0.clone();
            xp[c] += h;
            xm[c] -= h;
            let (fp, fm) = (eval(&xp), eval(&xm));
            for r in 0..2 * n {
                let fd = (fp[r] - fm[r]) / (2.0 * h);
                assert!(
                    (fd - j[(r, c)]).abs() <= 1e-6 * scale,
                    "({r},{c}) fd={fd} an={} f0={}",
                    j[(r, c)],
                    f0[r]
                );
            }
        }
    }

    proptest! {
        #[test]
        fn admittance_symmetric_with_zero_rows(
            rs in proptest::collection::vec(0.1f64..1.0, 4),
            ls in proptest::collection::vec(1e-4f64..1e-2, 4),
        ) {
            let lines = vec![
                line(0, 1, rs[0], ls[0]),
                line(1, 2, rs[1], ls[1]),
                line(2, 3, rs[2], ls[2]),
                line(3, 4, rs[3], ls[3]),
            ];
            let t = build_topology(nodes(5), lines).unwrap();
            let y = build_admittance(&t, 314.0).unwrap();
            prop_assert!(y.asymmetry() < 1e-12);
            prop_assert!(y.max_row_sum() < 1e-12 * y.matrix().camax().max(1.0));
            let col_sums: Vec<i32> = t.incidence().column_iter()
                .map(|c| c.iter().map(|&v| v as i32).sum()).collect();
            prop_assert!(col_sums.iter().all(|&s| s == 0));
        }

        #[test]
        fn reciprocal_scaling_leaves_admittance_unchanged(k in 0.1f64..10.0) {
            let t = build_topology(nodes(3), vec![line(0, 1, 0.3, 0.002), line(1, 2, 0.5, 0.001)]).unwrap();
            let scaled = t.map_lines(|l| LineParams::new(l.params.resistance(), l.params.inductance() * k).unwrap());
            let a = build_admittance(&t, 314.0).unwrap();
            let b = build_admittance(&scaled, 314.0 / k).unwrap();
            prop_assert!((a.matrix() - b.matrix()).camax() < 1e-12 * a.matrix().camax());
        }

        #[test]
        fn uniform_angle_shift_invariance(
            d in proptest::collection::vec(-1.0f64..1.0, 3),
            v in proptest::collection::vec(0.9f64..1.1, 3),
            shift in -10.0f64..10.0,
        ) {
            let t = build_topology(nodes(3), vec![line(0, 1, 0.3, 0.002), line(1, 2, 0.5, 0.001)]).unwrap();
            let y = build_admittance(&t, 314.0).unwrap();
            let (p0, q0) = power_flow(&d, &v, &y).unwrap();
            let ds: Vec<f64> = d.iter().map(|x| x + shift).collect();
            let (p1, q1) = power_flow(&ds, &v, &y).unwrap();
            for k in 0..3 {
                prop_assert!((p0[k] - p1[k]).abs() < 1e-10);
                prop_assert!((q0[k] - q1[k]).abs() < 1e-10);
            }
        }
    }
}
