//! Fixed-step integrators: classical RK4 and the implicit trapezoidal rule.

use nalgebra::{DMatrix, DVector};

use super::newton::fd_jacobian;
use super::EngineError;

/// A system `ẋ = f(t, x)`. `derivative` may keep internal caches (warm
/// starts); `accept` is called once per accepted step.
pub trait DynamicalSystem {
    fn dim(&self) -> usize;
    fn derivative(&mut self, t: f64, x: &[f64], dx: &mut [f64]) -> Result<(), EngineError>;
    fn accept(&mut self, _t: f64, _x: &[f64]) {}
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Rk4,
    Trapezoidal,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Rk4 => "rk4",
            Method::Trapezoidal => "trapezoidal",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorOptions {
    pub method: Method,
    /// Output interval; the internal step is `dt / substeps`.
    pub dt: f64,
    pub substeps: usize,
    /// Trapezoidal step rejections allowed per step (each halves the step).
    pub max_halvings: u32,
    pub newton_max_iter: usize,
}

impl IntegratorOptions {
    pub fn new(method: Method, dt: f64) -> Self {
        IntegratorOptions {
            method,
            dt,
            substeps: 1,
            max_halvings: 8,
            newton_max_iter: 12,
        }
    }

    pub fn with_substeps(mut self, substeps: usize) -> Self {
        self.substeps = substeps.max(1);
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IntegrationStats {
    pub steps: usize,
    /// `(time, halving depth)` of every rejected implicit step.
    pub retries: Vec<(f64, u32)>,
}

enum TrapFailure {
    Engine(EngineError),
    NoConvergence,
}

/// Reusable work buffers for one system dimension.
pub struct Stepper {
    method: Method,
    k: [Vec<f64>; 4],
    tmp: Vec<f64>,
    jac: DMatrix<f64>,
    newton_max_iter: usize,
    max_halvings: u32,
    pub stats: IntegrationStats,
}

fn finite(x: &[f64]) -> bool {
    x.iter().all(|v| v.is_finite())
}

impl Stepper {
    pub fn new(dim: usize, opts: &IntegratorOptions) -> Self {
        Stepper {
            method: opts.method,
            k: std::array::from_fn(|_| vec![0.0; dim]),
            tmp: vec![0.0; dim],
            jac: DMatrix::zeros(dim, dim),
            newton_max_iter: opts.newton_max_iter,
            max_halvings: opts.max_halvings,
            stats: IntegrationStats::default(),
        }
    }

    /// Advances `x` from `t` to `t + h`, calling `accept` on success.
    pub fn step<S: DynamicalSystem + ?Sized>(
        &mut self,
        sys: &mut S,
        t: f64,
        h: f64,
        x: &mut [f64],
    ) -> Result<(), EngineError> {
        match self.method {
            Method::Rk4 => self.rk4(sys, t, h, x)?,
            Method::Trapezoidal => self.trapezoidal_retrying(sys, t, h, x, 0)?,
        }
        if !finite(x) {
            return Err(EngineError::NonFinite { t: t + h });
        }
        self.stats.steps += 1;
        sys.accept(t + h, x);
        Ok(())
    }

    fn rk4<S: DynamicalSystem + ?Sized>(
        &mut self,
        sys: &mut S,
        t: f64,
        h: f64,
        x: &mut [f64],
    ) -> Result<(), EngineError> {
        let n = x.len();
        let [k1, k2, k3, k4] = &mut self.k;
        let tmp = &mut self.tmp;
        sys.derivative(t, x, k1)?;
        for i in 0..n {
            tmp[i] = x[i] + 0.5 * h * k1[i];
        }
        sys.derivative(t + 0.5 * h, tmp, k2)?;
        for i in 0..n {
            tmp[i] = x[i] + 0.5 * h * k2[i];
        }
        sys.derivative(t + 0.5 * h, tmp, k3)?;
        for i in 0..n {
            tmp[i] = x[i] + h * k3[i];
        }
        sys.derivative(t + h, tmp, k4)?;
        for i in 0..n {
            x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        Ok(())
    }

    fn trapezoidal_retrying<S: DynamicalSystem + ?Sized>(
        &mut self,
        sys: &mut S,
        t: f64,
        h: f64,
        x: &mut [f64],
        depth: u32,
    ) -> Result<(), EngineError> {
        let saved = x.to_vec();
        match self.trapezoidal(sys, t, h, x) {
            Ok(()) => Ok(()),
            Err(TrapFailure::Engine(e)) if !matches!(e, EngineError::Infeasible { .. }) => Err(e),
            Err(fail) => {
                x.copy_from_slice(&saved);
                if depth >= self.max_halvings {
                    return Err(match fail {
                        TrapFailure::Engine(e) => e,
                        TrapFailure::NoConvergence => EngineError::StepRejected { t, h },
                    });
                }
                self.stats.retries.push((t, depth + 1));
                log::debug!("trapezoidal step at t = {t} rejected, retrying with h = {}", h / 2.0);
                self.trapezoidal_retrying(sys, t, h / 2.0, x, depth + 1)?;
                self.trapezoidal_retrying(sys, t + h / 2.0, h / 2.0, x, depth + 1)
            }
        }
    }

    fn trapezoidal<S: DynamicalSystem + ?Sized>(
        &mut self,
        sys: &mut S,
        t: f64,
        h: f64,
        x: &mut [f64],
    ) -> Result<(), TrapFailure> {
        let n = x.len();
        let x0 = x.to_vec();
        let mut f0 = vec![0.0; n];
        sys.derivative(t, &x0, &mut f0).map_err(TrapFailure::Engine)?;

        let mut err: Option<EngineError> = None;
        {
            let mut f = |y: &[f64], out: &mut [f64]| {
                if let Err(e) = sys.derivative(t, y, out) {
                    err.get_or_insert(e);
                    out.fill(f64::NAN);
                }
            };
            fd_jacobian(&mut f, &x0, &f0, &mut self.jac);
        }
        if let Some(e) = err {
            return Err(TrapFailure::Engine(e));
        }
        let mut m = -0.5 * h * &self.jac;
        for i in 0..n {
            m[(i, i)] += 1.0;
        }
        let lu = m.lu();

        let scale = x0.iter().fold(1.0f64, |a, v| a.max(v.abs()));
        let mut y = x0.clone();
        let mut fy = vec![0.0; n];
        let mut g = DVector::zeros(n);
        let mut last = f64::INFINITY;
        for _ in 0..self.newton_max_iter {
            sys.derivative(t + h, &y, &mut fy).map_err(TrapFailure::Engine)?;
            for i in 0..n {
                g[i] = y[i] - x0[i] - 0.5 * h * (f0[i] + fy[i]);
            }
            let Some(dy) = lu.solve(&g) else {
                return Err(TrapFailure::NoConvergence);
            };
            let mut converged = true;
            let mut size = 0.0f64;
            for i in 0..n {
                y[i] -= dy[i];
                let tol = 1e-10 * y[i].abs() + 1e-12 * scale;
                converged &= dy[i].abs() <= tol;
                size = size.max(dy[i].abs());
            }
            if !size.is_finite() {
                return Err(TrapFailure::NoConvergence);
            }
            if converged {
                x.copy_from_slice(&y);
                return Ok(());
            }
            if size > last {
                return Err(TrapFailure::NoConvergence);
            }
            last = size;
        }
        Err(TrapFailure::NoConvergence)
    }
}

/// Integrates `n_out` output intervals from `t0`, calling `observe(sys, k, t_k, x_k)`
/// at every output time including the initial one. Times are `t0 + j·h`
/// with integer `j`, so they do not accumulate rounding.
pub fn integrate<S, O>(
    sys: &mut S,
    t0: f64,
    x0: &[f64],
    n_out: usize,
    opts: &IntegratorOptions,
    mut observe: O,
) -> Result<(Vec<f64>, IntegrationStats), EngineError>
where
    S: DynamicalSystem + ?Sized,
    O: FnMut(&mut S, usize, f64, &[f64]) -> Result<(), EngineError>,
{
    if x0.len() != sys.dim() {
        return Err(EngineError::Dimension {
            expected: sys.dim(),
            got: x0.len(),
        });
    }
    if !(opts.dt > 0.0) || !opts.dt.is_finite() {
        return Err(EngineError::InvalidOption(format!(
            "step size must be positive, got {}",
            opts.dt
        )));
    }
    let mut stepper = Stepper::new(x0.len(), opts);
    let sub = opts.substeps.max(1);
    let h = opts.dt / sub as f64;
    let mut x = x0.to_vec();
    observe(sys, 0, t0, &x)?;
    for k in 0..n_out {
        for j in 0..sub {
            let t = t0 + (k * sub + j) as f64 * h;
            let before = x.clone();
            if let Err(e) = stepper.step(sys, t, h, &mut x) {
                return Err(e.at_last_good(t, before));
            }
        }
        observe(sys, k + 1, t0 + (k + 1) as f64 * opts.dt, &x)?;
    }
    Ok((x, stepper.stats))
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Linear(f64);
    impl DynamicalSystem for Linear {
        fn dim(&self) -> usize {
            1
        }
        fn derivative(&mut self, _t: f64, x: &[f64], dx: &mut [f64]) -> Result<(), EngineError> {
            dx[0] = self.0 * x[0];
            Ok(())
        }
    }

    struct Oscillator;
    impl DynamicalSystem for Oscillator {
        fn dim(&self) -> usize {
            2
        }
        fn derivative(&mut self, t: f64, x: &[f64], dx: &mut [f64]) -> Result<(), EngineError> {
            dx[0] = x[1];
            dx[1] = -x[0] + 0.3 * t.cos();
            Ok(())
        }
    }

    fn run(
        sys: &mut impl DynamicalSystem,
        x0: &[f64],
        method: Method,
        h: f64,
        n: usize,
    ) -> Result<Vec<Vec<f64>>, EngineError> {
        let mut out = Vec::new();
        integrate(sys, 0.0, x0, n, &IntegratorOptions::new(method, h), |_, _, _, x| {
            out.push(x.to_vec());
            Ok(())
        })?;
        Ok(out)
    }

    #[test]
    fn trapezoidal_matches_closed_form() {
        let h = 0.1;
        let traj = run(&mut Linear(-1.0), &[1.0], Method::Trapezoidal, h, 20).unwrap();
        let amp = (1.0 - h / 2.0) / (1.0 + h / 2.0);
        for (k, x) in traj.iter().enumerate() {
            let exact = amp.powi(k as i32);
            assert!((x[0] - exact).abs() <= 4.0 * f64::EPSILON * (k as f64 + 1.0), "{k}");
        }
    }

    #[test]
    fn rk4_is_fourth_order() {
        let err = |h: f64| {
            let n = (2.0 / h).round() as usize;
            let x = run(&mut Linear(-1.0), &[1.0], Method::Rk4, h, n).unwrap();
            (x[n][0] - (-2.0f64).exp()).abs()
        };
        let ratio = err(0.1) / err(0.05);
        assert!((ratio - 16.0).abs() < 1.0, "{ratio}");
    }

    #[test]
    fn stiff_decay() {
        let trap = run(&mut Linear(-1e6), &[1.0], Method::Trapezoidal, 1e-3, 50).unwrap();
        assert!(trap.windows(2).all(|w| w[1][0].abs() < w[0][0].abs()));
        let rk = run(&mut Linear(-1e6), &[1.0], Method::Rk4, 1e-3, 50);
        assert!(matches!(
            rk,
            Err(EngineError::NonFinite { .. }) | Err(EngineError::Integration { .. })
        ));
    }

    #[test]
    fn output_grid_and_substeps() {
        let mut times = Vec::new();
        let opts = IntegratorOptions::new(Method::Rk4, 0.1).with_substeps(7);
        let (x, stats) = integrate(&mut Oscillator, 0.0, &[1.0, 0.0], 10, &opts, |_, k, t, _| {
            times.push((k, t));
            Ok(())
        })
        .unwrap();
        assert_eq!(stats.steps, 70);
        assert_eq!(times.len(), 11);
        assert_eq!(times[10], (10, 1.0));
        let coarse = run(&mut Oscillator, &[1.0, 0.0], Method::Rk4, 0.1 / 7.0, 70).unwrap();
        assert_eq!(coarse[70], x);
    }
}
