//! Quadrotor rigid-body model: parameters, state, the rotor mixing matrix and
//! the continuous-time equations of motion.
//!
//! Axis convention: the inertial `e3` axis points *down*, so gravity is
//! `+g e3` and a hovering vehicle has `R = I` with positive thrust `f = m g`
//! acting along `-b3`. Altitude is `-x3`.

use nalgebra::Matrix4;

use crate::error::{Error, Result};
use crate::so3::{e3, hat, Mat3, RotationMatrix, Vec3};

pub const DEFAULT_GRAVITY: f64 = 9.81;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadParams {
    /// Mass, kg.
    pub m: f64,
    /// Inertia about the body axes, kg·m². Any symmetric positive-definite
    /// matrix is accepted.
    pub j: Mat3,
    /// Arm length, m.
    pub d: f64,
    /// Rotor torque-to-thrust coefficient, m.
    pub c_tau_f: f64,
    /// Gravitational acceleration, m/s².
    pub g: f64,
}

impl QuadParams {
    /// Vehicle used in both reference maneuvers.
    pub fn reference() -> Self {
        QuadParams {
            m: 4.34,
            j: Mat3::from_diagonal(&Vec3::new(0.0820, 0.0845, 0.1377)),
            d: 0.315,
            c_tau_f: 8.004e-3,
            g: DEFAULT_GRAVITY,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.m > 0.0 && self.m.is_finite()) {
            return Err(Error::Validation("mass must be positive".into()));
        }
        if !(self.d > 0.0 && self.d.is_finite()) {
            return Err(Error::Validation("arm length must be positive".into()));
        }
        if !(self.c_tau_f != 0.0 && self.c_tau_f.is_finite()) {
            return Err(Error::Validation(
                "torque coefficient must be nonzero".into(),
            ));
        }
        if !(self.g > 0.0 && self.g.is_finite()) {
            return Err(Error::Validation("gravity must be positive".into()));
        }
        if !self.j.iter().all(|x| x.is_finite())
            || (self.j - self.j.transpose()).norm() > 1e-12 * self.j.norm().max(1.0)
        {
            return Err(Error::Validation("inertia must be symmetric".into()));
        }
        if self.j.cholesky().is_none() {
            return Err(Error::Validation(
                "inertia must be positive definite".into(),
            ));
        }
        Ok(())
    }

    pub fn inertia_inverse(&self) -> Mat3 {
        self.j
            .cholesky()
            .map(|c| c.inverse())
            .unwrap_or_else(Mat3::zeros)
    }

    /// Smallest and largest eigenvalues of the inertia matrix.
    pub fn inertia_eigen_range(&self) -> (f64, f64) {
        let eig = self.j.symmetric_eigenvalues();
        (eig.min(), eig.max())
    }

    pub fn weight(&self) -> f64 {
        self.m * self.g
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleState {
    /// Position in the inertial frame, m.
    pub x: Vec3,
    /// Velocity in the inertial frame, m/s.
    pub v: Vec3,
    /// Body-to-inertial rotation.
    pub r: RotationMatrix,
    /// Body angular velocity, rad/s.
    pub omega: Vec3,
}

impl VehicleState {
    pub fn at_rest(r: RotationMatrix) -> Self {
        VehicleState {
            x: Vec3::zeros(),
            v: Vec3::zeros(),
            r,
            omega: Vec3::zeros(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.x.iter().all(|c| c.is_finite())
            && self.v.iter().all(|c| c.is_finite())
            && self.r.matrix().iter().all(|c| c.is_finite())
            && self.omega.iter().all(|c| c.is_finite())
    }
}

/// Total thrust, body moment and the per-rotor thrusts that realize them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlOutput {
    /// Total thrust along `-b3`, N. Negative values reverse the thrust.
    pub f: f64,
    /// Body moment, N·m.
    pub moment: Vec3,
    pub rotor_thrusts: [f64; 4],
}

impl ControlOutput {
    pub fn zero() -> Self {
        ControlOutput {
            f: 0.0,
            moment: Vec3::zeros(),
            rotor_thrusts: [0.0; 4],
        }
    }

    /// Builds the output and fills in rotor thrusts through the mixer.
    pub fn from_thrust_moment(f: f64, moment: Vec3, p: &QuadParams) -> Result<Self> {
        let rotor_thrusts = mixing_to_rotors(f, &moment, p)?;
        Ok(ControlOutput {
            f,
            moment,
            rotor_thrusts,
        })
    }

    pub fn has_negative_rotor(&self) -> bool {
        self.rotor_thrusts.iter().any(|&t| t < 0.0)
    }
}

/// The 4×4 map from rotor thrusts to `(f, M1, M2, M3)`.
pub fn mixing_matrix(p: &QuadParams) -> Matrix4<f64> {
    let (d, c) = (p.d, p.c_tau_f);
    Matrix4::new(
        1.0, 1.0, 1.0, 1.0, //
        0.0, -d, 0.0, d, //
        d, 0.0, -d, 0.0, //
        -c, c, -c, c,
    )
}

/// Closed-form inverse of the mixing matrix. Rotor thrusts may come out
/// negative; there is no actuator saturation in the model.
pub fn mixing_to_rotors(f: f64, moment: &Vec3, p: &QuadParams) -> Result<[f64; 4]> {
    if p.d.abs() <= 1e-12 || p.c_tau_f.abs() <= 1e-12 {
        return Err(Error::SingularMixing {
            d: p.d,
            c_tau_f: p.c_tau_f,
        });
    }
    let yaw = moment.z / p.c_tau_f;
    let pair_24 = 0.5 * (f + yaw);
    let pair_13 = 0.5 * (f - yaw);
    let roll = moment.x / p.d;
    let pitch = moment.y / p.d;
    Ok([
        0.5 * (pair_13 + pitch),
        0.5 * (pair_24 - roll),
        0.5 * (pair_13 - pitch),
        0.5 * (pair_24 + roll),
    ])
}

pub fn mixing_from_rotors(rotor_thrusts: &[f64; 4], p: &QuadParams) -> (f64, Vec3) {
    let [f1, f2, f3, f4] = *rotor_thrusts;
    let f = f1 + f2 + f3 + f4;
    let moment = Vec3::new(
        p.d * (f4 - f2),
        p.d * (f1 - f3),
        p.c_tau_f * (-f1 + f2 - f3 + f4),
    );
    (f, moment)
}

/// Time derivative of the embedded state `(x, v, R, Ω)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateDerivative {
    pub dx: Vec3,
    pub dv: Vec3,
    pub dr: Mat3,
    pub domega: Vec3,
}

/// Equations of motion:
/// `ẋ = v`, `m v̇ = m g e3 - f R e3`, `Ṙ = R Ω^`, `J Ω̇ = M - Ω × JΩ`.
pub fn state_derivative(s: &VehicleState, u: &ControlOutput, p: &QuadParams) -> StateDerivative {
    let r = s.r.matrix();
    let dv = p.g * e3() - (u.f / p.m) * (r * e3());
    let dr = r * hat(&s.omega);
    let j_omega = p.j * s.omega;
    let domega = p.inertia_inverse() * (u.moment - s.omega.cross(&j_omega));
    StateDerivative {
        dx: s.v,
        dv,
        dr,
        domega,
    }
}

/// `½ m|v|² + ½ ΩᵀJΩ - m g (e3·x)`; conserved when `f = 0` and `M = 0`.
pub fn mechanical_energy(s: &VehicleState, p: &QuadParams) -> f64 {
    0.5 * p.m * s.v.norm_squared() + 0.5 * s.omega.dot(&(p.j * s.omega)) - p.m * p.g * s.x.z
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::so3::exp_so3;
    use approx::assert_relative_eq;

    #[test]
    fn hover_thrust_splits_evenly() {
        let p = QuadParams::reference();
        let rotors = mixing_to_rotors(p.weight(), &Vec3::zeros(), &p).unwrap();
        assert_relative_eq!(p.weight(), 42.5754, epsilon = 1e-12);
        for t in rotors {
            assert_relative_eq!(t, 10.64385, epsilon = 1e-12);
        }
        assert_eq!(mixing_to_rotors(0.0, &Vec3::zeros(), &p).unwrap(), [0.0; 4]);
    }

    #[test]
    fn mixing_determinant_matches_closed_form() {
        let p = QuadParams::reference();
        let det = mixing_matrix(&p).determinant();
        let expected = 8.0 * p.c_tau_f * p.d * p.d;
        assert_relative_eq!(expected, 6.3536e-3, max_relative = 1e-4);
        assert_relative_eq!(det, expected, max_relative = 1e-12);
    }

    #[test]
    fn forward_mixing_examples() {
        let p = QuadParams::reference();
        let (f, m) = mixing_from_rotors(&[1.0; 4], &p);
        assert_eq!(f, 4.0);
        assert_eq!(m, Vec3::zeros());
        let (f, m) = mixing_from_rotors(&[0.0; 4], &p);
        assert_eq!((f, m), (0.0, Vec3::zeros()));
        let (f, m) = mixing_from_rotors(&[1.0, 0.0, 0.0, 0.0], &p);
        assert_eq!(f, 1.0);
        assert_eq!(m, Vec3::new(0.0, 0.315, -8.004e-3));
    }

    #[test]
    fn forward_mixing_agrees_with_matrix() {
        let p = QuadParams::reference();
        let rotors = nalgebra::Vector4::new(1.5, -0.25, 3.0, 0.75);
        let out = mixing_matrix(&p) * rotors;
        let (f, m) = mixing_from_rotors(&[1.5, -0.25, 3.0, 0.75], &p);
        assert_relative_eq!(f, out[0], epsilon = 1e-15);
        assert!((m - Vec3::new(out[1], out[2], out[3])).norm() < 1e-15);
    }

    #[test]
    fn singular_mixing_is_rejected() {
        let mut p = QuadParams::reference();
        p.d = 0.0;
        assert!(matches!(
            mixing_to_rotors(1.0, &Vec3::zeros(), &p),
            Err(Error::SingularMixing { .. })
        ));
        let mut p = QuadParams::reference();
        p.c_tau_f = 1e-13;
        assert!(mixing_to_rotors(1.0, &Vec3::zeros(), &p).is_err());
    }

    #[test]
    fn hover_is_an_equilibrium() {
        let p = QuadParams::reference();
        let s = VehicleState::at_rest(RotationMatrix::identity());
        let u = ControlOutput::from_thrust_moment(p.weight(), Vec3::zeros(), &p).unwrap();
        let d = state_derivative(&s, &u, &p);
        assert_eq!(d.dx, Vec3::zeros());
        assert!(d.dv.norm() < 1e-15);
        assert_eq!(d.dr, Mat3::zeros());
        assert_eq!(d.domega, Vec3::zeros());
    }

    #[test]
    fn free_fall_accelerates_along_e3() {
        let p = QuadParams::reference();
        let s = VehicleState::at_rest(exp_so3(&Vec3::new(0.3, 0.2, 0.1)));
        let d = state_derivative(&s, &ControlOutput::zero(), &p);
        assert_eq!(d.dv, Vec3::new(0.0, 0.0, 9.81));
    }

    #[test]
    fn principal_axis_spin_is_steady() {
        let p = QuadParams::reference();
        let mut s = VehicleState::at_rest(RotationMatrix::identity());
        s.omega = Vec3::new(1.0, 0.0, 0.0);
        let d = state_derivative(&s, &ControlOutput::zero(), &p);
        assert!(d.domega.norm() < 1e-15);
    }

    #[test]
    fn rotation_rate_is_tangent() {
        let p = QuadParams::reference();
        let mut s = VehicleState::at_rest(exp_so3(&Vec3::new(-0.4, 1.2, 0.9)));
        s.omega = Vec3::new(2.0, -1.0, 0.5);
        let d = state_derivative(&s, &ControlOutput::zero(), &p);
        let body = s.r.matrix().transpose() * d.dr;
        assert!((body + body.transpose()).norm() < 1e-12);
    }

    #[test]
    fn params_validation_messages() {
        let mut p = QuadParams::reference();
        assert!(p.validate().is_ok());
        p.m = -1.0;
        assert_eq!(
            p.validate(),
            Err(Error::Validation("mass must be positive".into()))
        );
        let mut p = QuadParams::reference();
        p.j[(0, 1)] = 0.01;
        assert!(p.validate().is_err());
        let mut p = QuadParams::reference();
        p.j = Mat3::from_diagonal(&Vec3::new(0.1, -0.1, 0.1));
        assert!(p.validate().is_err());
    }

    #[test]
    fn full_inertia_is_accepted() {
        let mut p = QuadParams::reference();
        p.j[(0, 1)] = 0.005;
        p.j[(1, 0)] = 0.005;
        assert!(p.validate().is_ok());
        assert!((p.inertia_inverse() * p.j - Mat3::identity()).norm() < 1e-12);
    }
}
