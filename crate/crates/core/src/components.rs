//! Device models: grid-forming inverters (reduced and full), droop control,
//! power measurement filters, ZIP loads and dq-frame RL line dynamics.

use num_complex::Complex64;
use thiserror::Error;

use crate::network::LineParams;
use crate::signals::{instantaneous_power, DqPair};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ComponentError {
    #[error("inner-loop time scale is zero; use the reduced inverter model instead")]
    ZeroTimeScale,
    #[error("invalid parameter {name} = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("terminal voltage collapsed to zero with a non-zero constant-current/power demand")]
    VoltageSingularity,
    #[error("inner-loop state has {got} entries, expected {expected}")]
    StateDimension { expected: usize, got: usize },
}

fn require(name: &'static str, value: f64, ok: bool, reason: &'static str) -> Result<(), ComponentError> {
    if ok && value.is_finite() {
        Ok(())
    } else {
        Err(ComponentError::InvalidParameter { name, value, reason })
    }
}

/// `J·x` with `J = [[0, −1], [1, 0]]` acting on `(d, q)`.
fn rot90(x: DqPair) -> DqPair {
    DqPair::new(-x.q, x.d)
}

/// Parameters of the optional LC filter with cascaded voltage/current PI control.
///
/// State layout (local frame of the inverter):
/// `[i_f,d, i_f,q, v_C,d, v_C,q, ξ_v,d, ξ_v,q, ξ_c,d, ξ_c,q]`.
/// The physical values describe the loop when `ν = design_nu`; other values
/// of `ν` rescale the whole inner subsystem in time by `design_nu/ν`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CascadeParams {
    pub l_f: f64,
    pub c_f: f64,
    /// Series resistance of the filter inductor.
    pub r_f1: f64,
    /// Damping resistor across the filter capacitor.
    pub r_f2: f64,
    pub kp_v: f64,
    pub ki_v: f64,
    pub kp_c: f64,
    pub ki_c: f64,
    pub design_nu: f64,
}

impl Default for CascadeParams {
    // ~2 kHz current loop, ~500 Hz voltage loop
    fn default() -> Self {
        let w_v = 2.0 * std::f64::consts::PI * 500.0;
        let w_c = 2.0 * std::f64::consts::PI * 2000.0;
        let (l_f, c_f, r_f1) = (1.35e-3, 50e-6, 0.1);
        CascadeParams {
            l_f,
            c_f,
            r_f1,
            r_f2: 1000.0,
            kp_v: c_f * w_v,
            ki_v: c_f * w_v * w_v / 10.0,
            kp_c: l_f * w_c,
            ki_c: r_f1 * w_c,
            design_nu: 1.0 / w_v,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InnerLoopModel {
    /// `νγ·v̇ = v_ref − v`, output `v`; two states in the common frame.
    FirstOrderLag,
    LcPiCascade(CascadeParams),
}

impl InnerLoopModel {
    pub fn dim(&self) -> usize {
        match self {
            InnerLoopModel::FirstOrderLag => 2,
            InnerLoopModel::LcPiCascade(_) => 8,
        }
    }

    /// Whether the loop's dq quantities are in the inverter's local frame
    /// (otherwise the common frame).
    pub fn uses_local_frame(&self) -> bool {
        matches!(self, InnerLoopModel::LcPiCascade(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridFormingConfig {
    /// Clock drift factor γ.
    pub gamma: f64,
    /// Inner-loop time scale ν (s).
    pub nu: f64,
    /// Power measurement filter time constant τ_P (s).
    pub tau_p: f64,
    /// Frequency droop gain (rad/s per W).
    pub k_p: f64,
    /// Voltage droop gain (V per var).
    pub k_q: f64,
    pub omega_set: f64,
    pub v_set: f64,
    pub p_set: f64,
    pub q_set: f64,
    pub inner: InnerLoopModel,
}

impl GridFormingConfig {
    pub fn validate(&self) -> Result<(), ComponentError> {
        require("gamma", self.gamma, self.gamma > 0.0, "must be > 0")?;
        require("nu", self.nu, self.nu >= 0.0, "must be >= 0")?;
        require("tau_p", self.tau_p, self.tau_p > 0.0, "must be > 0")?;
        require("k_p", self.k_p, self.k_p > 0.0, "must be > 0")?;
        require("k_q", self.k_q, self.k_q > 0.0, "must be > 0")?;
        require("omega_set", self.omega_set, true, "must be finite")?;
        require("v_set", self.v_set, self.v_set > 0.0, "must be > 0")?;
        require("p_set", self.p_set, true, "must be finite")?;
        require("q_set", self.q_set, true, "must be finite")?;
        if let InnerLoopModel::LcPiCascade(c) = &self.inner {
            for (name, v) in [
                ("l_f", c.l_f),
                ("c_f", c.c_f),
                ("r_f2", c.r_f2),
                ("design_nu", c.design_nu),
            ] {
                require(name, v, v > 0.0, "must be > 0")?;
            }
            for (name, v) in [
                ("r_f1", c.r_f1),
                ("kp_v", c.kp_v),
                ("ki_v", c.ki_v),
                ("kp_c", c.kp_c),
                ("ki_c", c.ki_c),
            ] {
                require(name, v, v >= 0.0, "must be >= 0")?;
            }
            require("ki_v", c.ki_v, c.ki_v > 0.0, "must be > 0")?;
            require("ki_c", c.ki_c, c.ki_c > 0.0, "must be > 0")?;
        }
        Ok(())
    }

    /// Warning text when the inner loop is not clearly faster than the power filter.
    pub fn time_scale_warning(&self) -> Option<String> {
        (self.nu * 10.0 > self.tau_p).then(|| {
            format!(
                "inner-loop time scale nu = {:.3e} s is not well separated from tau_p = {:.3e} s",
                self.nu, self.tau_p
            )
        })
    }
}

/// Droop law: returns `(u^δ, u^V)` in rad/s and V.
pub fn droop_control(p_m: f64, q_m: f64, cfg: &GridFormingConfig) -> (f64, f64) {
    (
        cfg.omega_set - cfg.k_p * (p_m - cfg.p_set),
        cfg.v_set - cfg.k_q * (q_m - cfg.q_set),
    )
}

/// Slow states of a grid-forming inverter.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct InverterReducedState {
    /// Angle relative to the common frame (rad).
    pub delta: f64,
    pub p_m: f64,
    pub q_m: f64,
}

/// Angle integrator and power filters; returns the state derivative and the
/// terminal voltage amplitude `V = u^V`.
pub fn reduced_inverter_deriv(
    state: &InverterReducedState,
    u_delta: f64,
    u_v: f64,
    p: f64,
    q: f64,
    cfg: &GridFormingConfig,
    omega_com: f64,
) -> (InverterReducedState, f64) {
    let filt = cfg.gamma * cfg.tau_p;
    (
        InverterReducedState {
            delta: (u_delta - omega_com) / cfg.gamma,
            p_m: (p - state.p_m) / filt,
            q_m: (q - state.q_m) / filt,
        },
        u_v,
    )
}

/// Inner-loop output `v_out = h(x)` without evaluating derivatives.
pub fn inner_loop_output(x: &[f64], cfg: &GridFormingConfig) -> DqPair {
    match cfg.inner {
        InnerLoopModel::FirstOrderLag => DqPair::new(x[0], x[1]),
        InnerLoopModel::LcPiCascade(_) => DqPair::new(x[2], x[3]),
    }
}

/// Inner control and output filter dynamics.
///
/// `v_ref` and `i_out` must be in the loop's frame (see
/// [`InnerLoopModel::uses_local_frame`]); `frame_speed` is the absolute speed
/// of that frame in rad/s and only enters the cascade's cross-coupling terms.
pub fn inner_loop_deriv(
    x: &[f64],
    v_ref: DqPair,
    i_out: DqPair,
    frame_speed: f64,
    cfg: &GridFormingConfig,
    dx: &mut [f64],
) -> Result<DqPair, ComponentError> {
    let dim = cfg.inner.dim();
    if x.len() != dim || dx.len() != dim {
        return Err(ComponentError::StateDimension {
            expected: dim,
            got: x.len().min(dx.len()),
        });
    }
    if !(cfg.nu > 0.0) {
        return Err(ComponentError::ZeroTimeScale);
    }
    let scale = 1.0 / (cfg.nu * cfg.gamma);
    match cfg.inner {
        InnerLoopModel::FirstOrderLag => {
            dx[0] = (v_ref.d - x[0]) * scale;
            dx[1] = (v_ref.q - x[1]) * scale;
            Ok(DqPair::new(x[0], x[1]))
        }
        InnerLoopModel::LcPiCascade(c) => {
            let i_f = DqPair::new(x[0], x[1]);
            let v_c = DqPair::new(x[2], x[3]);
            let xi_v = DqPair::new(x[4], x[5]);
            let xi_c = DqPair::new(x[6], x[7]);

            let ev = v_ref - v_c;
            let i_ref = ev.scale(c.kp_v) + xi_v.scale(c.ki_v);
            let ei = i_ref - i_f;
            let v_inv = ei.scale(c.kp_c) + xi_c.scale(c.ki_c) + v_c;

            let di = (v_inv - i_f.scale(c.r_f1) - v_c + rot90(i_f).scale(frame_speed * c.l_f)).scale(1.0 / c.l_f);
            let dv = (i_f - i_out - v_c.scale(1.0 / c.r_f2) + rot90(v_c).scale(frame_speed * c.c_f)).scale(1.0 / c.c_f);

            let k = c.design_nu * scale;
            let rates = [di.d, di.q, dv.d, dv.q, ev.d, ev.q, ei.d, ei.q];
            for (d, r) in dx.iter_mut().zip(rates) {
                *d = r * k;
            }
            Ok(v_c)
        }
    }
}

/// Inner-loop state at which the output equals `v_ref` while delivering `i_out`.
pub fn inner_loop_steady_state(v_ref: DqPair, i_out: DqPair, frame_speed: f64, cfg: &GridFormingConfig) -> Vec<f64> {
    match cfg.inner {
        InnerLoopModel::FirstOrderLag => vec![v_ref.d, v_ref.q],
        InnerLoopModel::LcPiCascade(c) => {
            let v_c = v_ref;
            let i_f = i_out + v_c.scale(1.0 / c.r_f2) - rot90(v_c).scale(frame_speed * c.c_f);
            let xi_v = i_f.scale(1.0 / c.ki_v);
            let v_inv = i_f.scale(c.r_f1) + v_c - rot90(i_f).scale(frame_speed * c.l_f);
            let xi_c = (v_inv - v_c).scale(1.0 / c.ki_c);
            vec![i_f.d, i_f.q, v_c.d, v_c.q, xi_v.d, xi_v.q, xi_c.d, xi_c.q]
        }
    }
}

/// ZIP polynomial coefficients: consumption `P = a_P V² + b_P V + c_P`, same for Q.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ZipCoefficients {
    pub a_p: f64,
    pub b_p: f64,
    pub c_p: f64,
    pub a_q: f64,
    pub b_q: f64,
    pub c_q: f64,
}

impl ZipCoefficients {
    pub fn scaled(&self, k: f64) -> Self {
        ZipCoefficients {
            a_p: self.a_p * k,
            b_p: self.b_p * k,
            c_p: self.c_p * k,
            a_q: self.a_q * k,
            b_q: self.b_q * k,
            c_q: self.c_q * k,
        }
    }

    pub fn is_impedance_only(&self) -> bool {
        self.b_p == 0.0 && self.c_p == 0.0 && self.b_q == 0.0 && self.c_q == 0.0
    }

    /// Admittance drawing the impedance part: `(a_P − j·a_Q)` in qd phasors.
    pub fn impedance_admittance(&self) -> Complex64 {
        Complex64::new(self.a_p, -self.a_q)
    }

    fn is_finite(&self) -> bool {
        [self.a_p, self.b_p, self.c_p, self.a_q, self.b_q, self.c_q]
            .iter()
            .all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZipConfig {
    pub coefficients: ZipCoefficients,
    /// Time constant of the current-command state (s).
    pub kappa: f64,
    /// Terminal capacitance of the dynamic realization (F).
    pub c_snub: f64,
}

impl ZipConfig {
    pub fn validate(&self) -> Result<(), ComponentError> {
        if !self.coefficients.is_finite() {
            return Err(ComponentError::InvalidParameter {
                name: "zip coefficients",
                value: f64::NAN,
                reason: "must be finite",
            });
        }
        require("kappa", self.kappa, self.kappa >= 0.0, "must be >= 0")?;
        require("c_snub", self.c_snub, self.c_snub > 0.0, "must be > 0")
    }
}

/// Power injections `(P*, Q*)` of a ZIP load at voltage amplitude `v`.
pub fn zip_power(v: f64, zip: &ZipCoefficients) -> (f64, f64) {
    (
        -(zip.a_p * v * v + zip.b_p * v + zip.c_p),
        -(zip.a_q * v * v + zip.b_q * v + zip.c_q),
    )
}

/// Current drawn by the constant-current and constant-power terms at `v`.
///
/// Below `v_clamp` the magnitude is evaluated at `v_clamp` (direction kept);
/// the boolean reports whether clamping was active.
pub fn zip_current_command(v: DqPair, zip: &ZipCoefficients, v_clamp: f64) -> Result<(DqPair, bool), ComponentError> {
    let s_of = |m: f64| Complex64::new(zip.b_p * m + zip.c_p, zip.b_q * m + zip.c_q);
    let mag = v.norm();
    let clamped = mag < v_clamp;
    let eff = mag.max(v_clamp);
    if eff == 0.0 {
        if s_of(0.0).norm() == 0.0 && zip.b_p == 0.0 && zip.b_q == 0.0 {
            return Ok((DqPair::ZERO, clamped));
        }
        return Err(ComponentError::VoltageSingularity);
    }
    let dir = if mag > 0.0 {
        v.to_qd() / mag
    } else {
        Complex64::new(1.0, 0.0)
    };
    let i = s_of(eff).conj() / eff * dir;
    Ok((DqPair::from_qd(i), clamped))
}

/// Terminal state of a dynamic load: `[v_d, v_q, x_d, x_q]` in the common frame.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LoadState {
    pub v: DqPair,
    pub x: DqPair,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoadDerivative {
    pub dv: DqPair,
    pub dx: DqPair,
    pub v_out: DqPair,
    pub clamped: bool,
}

/// Dynamic realization of a ZIP load.
///
/// `C·v̇ = i_in − i_Z(v) − x` and `κ·ẋ = i_cmd(v) − x`, where `i_in` is the
/// current flowing from the network into the load. The capacitor is a
/// dq-domain integrator without rotational coupling, so the equilibrium draws
/// exactly the ZIP power. With `κ = 0` the command acts instantaneously and
/// `dx` is zero.
pub fn dynamic_load_deriv(
    state: &LoadState,
    i_in: DqPair,
    cfg: &ZipConfig,
    v_clamp: f64,
) -> Result<LoadDerivative, ComponentError> {
    let (i_cmd, clamped) = zip_current_command(state.v, &cfg.coefficients, v_clamp)?;
    let i_z = DqPair::from_qd(cfg.coefficients.impedance_admittance() * state.v.to_qd());
    let (x, dx) = if cfg.kappa > 0.0 {
        (state.x, (i_cmd - state.x).scale(1.0 / cfg.kappa))
    } else {
        (i_cmd, DqPair::ZERO)
    };
    Ok(LoadDerivative {
        dv: (i_in - i_z - x).scale(1.0 / cfg.c_snub),
        dx,
        v_out: state.v,
        clamped,
    })
}

/// Load state at which the terminal voltage is stationary at `v`.
pub fn load_steady_state(v: DqPair, zip: &ZipCoefficients, v_clamp: f64) -> Result<LoadState, ComponentError> {
    let (x, _) = zip_current_command(v, zip, v_clamp)?;
    Ok(LoadState { v, x })
}

/// Power consumed by the load state's terminal, for diagnostics.
pub fn load_consumption(v: DqPair, i_in: DqPair) -> (f64, f64) {
    let s = instantaneous_power(v, i_in);
    (s.p(), s.q())
}

/// RL line in the common dq frame:
/// `L·ẋ = −R·x + X·J·x + (v_source − v_sink)`, with `X = L·ω`.
pub fn line_dq_deriv(x: DqPair, v_source: DqPair, v_sink: DqPair, params: &LineParams, omega_com: f64) -> DqPair {
    line_dq_deriv_scaled(x, v_source, v_sink, params, omega_com, 1.0)
}

/// [`line_dq_deriv`] with the storage inductance multiplied by `time_scale`
/// while the reactance `X = L·ω` is kept; `time_scale → 0` is the static limit.
pub fn line_dq_deriv_scaled(
    x: DqPair,
    v_source: DqPair,
    v_sink: DqPair,
    params: &LineParams,
    omega_com: f64,
    time_scale: f64,
) -> DqPair {
    let r = params.resistance();
    let xl = params.reactance(omega_com);
    let drive = x.scale(-r) + rot90(x).scale(xl) + (v_source - v_sink);
    drive.scale(1.0 / (params.inductance() * time_scale))
}

/// Equilibrium line current for fixed end voltages.
pub fn line_steady_current(v_source: DqPair, v_sink: DqPair, params: &LineParams, omega_com: f64) -> DqPair {
    DqPair::from_qd((v_source - v_sink).to_qd() * params.admittance(omega_com))
}
