//! Symmetric three-phase signals, dq0/dq frame transforms and instantaneous power.
//!
//! Conventions used throughout the crate:
//!
//! * a symmetric abc triple of amplitude `A` and phase `θ` is
//!   `A·[sin θ, sin(θ − 2π/3), sin(θ + 2π/3)]`;
//! * `T_dq0(ϱ)` is the power-invariant (unitary) Park matrix with rows
//!   `√(2/3)·cos(ϱ − k)`, `√(2/3)·sin(ϱ − k)` and `1/√3`, so a symmetric
//!   signal maps to `√(3/2)·A·[sin(θ − ϱ), cos(θ − ϱ), 0]`;
//! * powers follow the generator convention (delivered power positive).
//!
//! Every operation here assumes symmetric inputs where it matters. Asymmetric
//! triples can be fed in as raw `[f64; 3]` values; checking symmetry would
//! require a full period of samples and is left to the caller.

use std::f64::consts::{FRAC_PI_3, PI, TAU};

use nalgebra::{Matrix2x3, Matrix3};
use num_complex::Complex64;
use thiserror::Error;

const TWO_THIRDS_PI: f64 = 2.0 * FRAC_PI_3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SignalError {
    #[error("amplitude must be a finite non-negative number, got {0}")]
    NegativeAmplitude(f64),
}

/// Reduces an angle onto `[0, 2π)`.
pub fn mod_2pi(angle: f64) -> f64 {
    let r = angle.rem_euclid(TAU);
    // rem_euclid rounds tiny negative inputs up to exactly 2π
    if r >= TAU {
        0.0
    } else {
        r
    }
}

/// Wraps an angle difference onto `(−π, π]`.
pub fn wrap_pi(angle: f64) -> f64 {
    let r = mod_2pi(angle);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

/// A transformation angle on the circle, stored reduced to `[0, 2π)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default)]
pub struct FrameAngle(f64);

impl FrameAngle {
    pub fn new(radians: f64) -> Self {
        FrameAngle(mod_2pi(radians))
    }

    /// Angle of the common reference frame at time `t`: `mod_2π(ω·t)`.
    pub fn common(omega_com: f64, t: f64) -> Self {
        Self::new(omega_com * t)
    }

    pub fn radians(self) -> f64 {
        self.0
    }
}

impl From<f64> for FrameAngle {
    fn from(radians: f64) -> Self {
        FrameAngle::new(radians)
    }
}

/// Amplitude/phase description of a symmetric three-phase signal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThreePhaseSignal {
    amplitude: f64,
    angle: FrameAngle,
}

impl ThreePhaseSignal {
    pub fn new(amplitude: f64, angle: f64) -> Result<Self, SignalError> {
        if !(amplitude >= 0.0) || !amplitude.is_finite() {
            return Err(SignalError::NegativeAmplitude(amplitude));
        }
        Ok(ThreePhaseSignal {
            amplitude,
            angle: FrameAngle::new(angle),
        })
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    pub fn angle(&self) -> FrameAngle {
        self.angle
    }

    pub fn abc(&self) -> [f64; 3] {
        symmetric_abc(self.amplitude, self.angle.radians())
    }
}

fn symmetric_abc(amplitude: f64, angle: f64) -> [f64; 3] {
    [
        amplitude * angle.sin(),
        amplitude * (angle - TWO_THIRDS_PI).sin(),
        amplitude * (angle + TWO_THIRDS_PI).sin(),
    ]
}

/// Samples the symmetric abc triple `A·[sin δ, sin(δ−2π/3), sin(δ+2π/3)]`.
pub fn make_symmetric(amplitude: f64, angle: f64) -> Result<[f64; 3], SignalError> {
    ThreePhaseSignal::new(amplitude, angle).map(|_| symmetric_abc(amplitude, angle))
}

/// A two-axis (d, q) quantity. Also viewed as the complex phasor `q + j·d`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DqPair {
    pub d: f64,
    pub q: f64,
}

impl DqPair {
    pub const ZERO: DqPair = DqPair { d: 0.0, q: 0.0 };

    pub fn new(d: f64, q: f64) -> Self {
        DqPair { d, q }
    }

    /// Phasor `V·e^{jδ}` expressed in dq coordinates: `(V sin δ, V cos δ)`.
    pub fn from_polar(magnitude: f64, angle: f64) -> Self {
        DqPair {
            d: magnitude * angle.sin(),
            q: magnitude * angle.cos(),
        }
    }

    /// Complex phasor with the q-axis as real part.
    pub fn to_qd(self) -> Complex64 {
        Complex64::new(self.q, self.d)
    }

    pub fn from_qd(z: Complex64) -> Self {
        DqPair { d: z.im, q: z.re }
    }

    pub fn norm(self) -> f64 {
        self.d.hypot(self.q)
    }

    /// Angle δ such that `self = |self|·(sin δ, cos δ)`.
    pub fn angle(self) -> f64 {
        self.d.atan2(self.q)
    }

    pub fn scale(self, k: f64) -> Self {
        DqPair::new(self.d * k, self.q * k)
    }
}

impl std::ops::Add for DqPair {
    type Output = DqPair;
    fn add(self, rhs: DqPair) -> DqPair {
        DqPair::new(self.d + rhs.d, self.q + rhs.q)
    }
}

impl std::ops::Sub for DqPair {
    type Output = DqPair;
    fn sub(self, rhs: DqPair) -> DqPair {
        DqPair::new(self.d - rhs.d, self.q - rhs.q)
    }
}

impl std::ops::Neg for DqPair {
    type Output = DqPair;
    fn neg(self) -> DqPair {
        DqPair::new(-self.d, -self.q)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Dq0Triple {
    pub d: f64,
    pub q: f64,
    pub zero: f64,
}

impl Dq0Triple {
    pub fn dq(self) -> DqPair {
        DqPair::new(self.d, self.q)
    }
}

/// Instantaneous active, reactive and complex apparent power.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerTriple {
    p: f64,
    q: f64,
}

impl PowerTriple {
    pub fn new(p: f64, q: f64) -> Self {
        PowerTriple { p, q }
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn s(&self) -> Complex64 {
        Complex64::new(self.p, self.q)
    }
}

/// The 3×3 dq0 transformation matrix.
pub fn dq0_matrix(rho: FrameAngle) -> Matrix3<f64> {
    let r = rho.radians();
    let k = (2.0f64 / 3.0).sqrt();
    let z = k * std::f64::consts::FRAC_1_SQRT_2;
    Matrix3::new(
        k * r.cos(),
        k * (r - TWO_THIRDS_PI).cos(),
        k * (r + TWO_THIRDS_PI).cos(),
        k * r.sin(),
        k * (r - TWO_THIRDS_PI).sin(),
        k * (r + TWO_THIRDS_PI).sin(),
        z,
        z,
        z,
    )
}

/// The 2×3 dq transformation matrix (first two rows of [`dq0_matrix`]).
pub fn dq_matrix(rho: FrameAngle) -> Matrix2x3<f64> {
    dq0_matrix(rho).fixed_rows::<2>(0).into_owned()
}

pub fn park_dq0(x_abc: [f64; 3], rho: FrameAngle) -> Dq0Triple {
    let y = dq0_matrix(rho) * nalgebra::Vector3::from(x_abc);
    Dq0Triple {
        d: y[0],
        q: y[1],
        zero: y[2],
    }
}

pub fn park_dq(x_abc: [f64; 3], rho: FrameAngle) -> DqPair {
    let y = dq_matrix(rho) * nalgebra::Vector3::from(x_abc);
    DqPair::new(y[0], y[1])
}

/// `T_dq(ϱ)ᵀ·x_dq`; the result has no zero-sequence component.
pub fn inverse_park(x_dq: DqPair, rho: FrameAngle) -> [f64; 3] {
    let y = dq_matrix(rho).transpose() * nalgebra::Vector2::new(x_dq.d, x_dq.q);
    [y[0], y[1], y[2]]
}

/// Applies `T_δ(ϖ) = [[cos ϖ, sin ϖ], [−sin ϖ, cos ϖ]]`.
///
/// Maps local-frame coordinates of a node with angle `ϖ` into the common
/// frame; `rotate_frame(x, −ϖ)` goes the other way.
pub fn rotate_frame(x_dq: DqPair, angle: f64) -> DqPair {
    let (s, c) = angle.sin_cos();
    DqPair::new(c * x_dq.d + s * x_dq.q, -s * x_dq.d + c * x_dq.q)
}

/// `P = V_d I_d + V_q I_q`, `Q = V_d I_q − V_q I_d`; both inputs in the same frame.
pub fn instantaneous_power(v: DqPair, i: DqPair) -> PowerTriple {
    PowerTriple::new(v.d * i.d + v.q * i.q, v.d * i.q - v.q * i.d)
}
