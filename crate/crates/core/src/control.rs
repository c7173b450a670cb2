//! Geometric tracking controllers for the three flight modes.
//!
//! * Attitude mode: moment law driving `R → R_d`, with thrust chosen by an
//!   altitude-tracking or position-hold policy.
//! * Position mode: thrust along the feedback direction `b3c = -A/|A|` with
//!   `A = -kx e_x - kv e_v - m g e3 + m ẍ_d`, and the same moment law applied
//!   against the computed attitude `R_c`.
//! * Velocity mode: as position mode with the position feedback removed.
//!
//! The computed angular velocity `Ω_c` and its derivative are obtained by
//! differentiating `R_c` analytically. `ė_v` comes from the translational
//! equation of motion, and the thrust rate `ḟ` from differentiating
//! `f = -A·Re3` along `Ṙ = RΩ^`, so the whole chain is exact for the model.

use log::warn;

use crate::dynamics::{ControlOutput, QuadParams, VehicleState};
use crate::error::{Error, Result};
use crate::so3::{
    angular_velocity_error, attitude_error, e3, hat, normalized_projection, Mat3, RotationMatrix,
    Vec3,
};

/// Minimum `|A|` for which the thrust direction is defined.
pub const THRUST_VECTOR_EPS: f64 = 1e-6;
/// Minimum `|e3·Re3|` for the altitude-tracking thrust.
pub const ALTITUDE_THRUST_EPS: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gains {
    pub kx: f64,
    pub kv: f64,
    pub kr: f64,
    pub komega: f64,
}

impl Gains {
    /// Gains used in both reference maneuvers, scaled by vehicle mass.
    pub fn reference(mass: f64) -> Self {
        Gains {
            kx: 16.0 * mass,
            kv: 5.6 * mass,
            kr: 8.81,
            komega: 2.54,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, k) in [
            ("kx", self.kx),
            ("kv", self.kv),
            ("kR", self.kr),
            ("kOmega", self.komega),
        ] {
            if !(k > 0.0 && k.is_finite()) {
                return Err(Error::Validation(format!("gain {name} must be positive")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttitudeCommand {
    pub rd: RotationMatrix,
    pub omega_d: Vec3,
    pub domega_d: Vec3,
}

/// Position reference with derivatives up to fourth order and a desired
/// heading `b1d` with its first two derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PositionCommand {
    /// `[x_d, ẋ_d, ẍ_d, x_d⁽³⁾, x_d⁽⁴⁾]`
    pub xd: [Vec3; 5],
    /// `[b1d, ḃ1d, b̈1d]`
    pub b1d: [Vec3; 3],
}

impl PositionCommand {
    pub fn hover(xd: Vec3, b1d: Vec3) -> Self {
        PositionCommand {
            xd: [
                xd,
                Vec3::zeros(),
                Vec3::zeros(),
                Vec3::zeros(),
                Vec3::zeros(),
            ],
            b1d: [b1d, Vec3::zeros(), Vec3::zeros()],
        }
    }
}

/// Velocity reference with derivatives up to third order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VelocityCommand {
    /// `[v_d, v̇_d, v̈_d, v_d⁽³⁾]`
    pub vd: [Vec3; 4],
    /// `[b1d, ḃ1d, b̈1d]`
    pub b1d: [Vec3; 3],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TranslationalCommand<'a> {
    Position(&'a PositionCommand),
    Velocity(&'a VelocityCommand),
}

impl TranslationalCommand<'_> {
    fn heading(&self) -> &[Vec3; 3] {
        match self {
            TranslationalCommand::Position(c) => &c.b1d,
            TranslationalCommand::Velocity(c) => &c.b1d,
        }
    }
}

/// Attitude setpoint built from the thrust-direction feedback.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComputedAttitude {
    pub rc: RotationMatrix,
    pub omega_c: Vec3,
    pub domega_c: Vec3,
    pub b3c: Vec3,
    /// Un-normalized thrust vector `A`, N.
    pub a: Vec3,
    /// True when `b1d` was parallel to `b3c` and the previous `b1c` was used.
    pub heading_fallback: bool,
}

/// Tracking errors with respect to a translational command.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TranslationalErrors {
    pub ex: Vec3,
    pub ev: Vec3,
}

pub fn translational_errors(
    s: &VehicleState,
    cmd: TranslationalCommand<'_>,
) -> TranslationalErrors {
    match cmd {
        TranslationalCommand::Position(c) => TranslationalErrors {
            ex: s.x - c.xd[0],
            ev: s.v - c.xd[1],
        },
        TranslationalCommand::Velocity(c) => TranslationalErrors {
            ex: Vec3::zeros(),
            ev: s.v - c.vd[0],
        },
    }
}

/// Moment law `M = -kR e_R - kΩ e_Ω + Ω×JΩ - J(Ω^ RᵀR_d Ω_d - RᵀR_d Ω̇_d)`.
pub fn attitude_moment(
    s: &VehicleState,
    cmd: &AttitudeCommand,
    gains: &Gains,
    p: &QuadParams,
) -> Vec3 {
    let er = attitude_error(&s.r, &cmd.rd);
    let ew = angular_velocity_error(&s.omega, &s.r, &cmd.rd, &cmd.omega_d);
    let rel = s.r.matrix().transpose() * cmd.rd.matrix();
    let omega = s.omega;
    -gains.kr * er - gains.komega * ew + omega.cross(&(p.j * omega))
        - p.j * (hat(&omega) * (rel * cmd.omega_d) - rel * cmd.domega_d)
}

/// Thrust that makes the altitude error obey
/// `m ë + kv ė + kx e = 0` while the attitude is commanded independently.
pub fn altitude_thrust(
    s: &VehicleState,
    x3d: f64,
    dx3d: f64,
    ddx3d: f64,
    gains: &Gains,
    p: &QuadParams,
) -> Result<f64> {
    let tilt = e3().dot(&s.r.apply(&e3()));
    if tilt.abs() <= ALTITUDE_THRUST_EPS {
        return Err(Error::ThrustSingularity(tilt));
    }
    let num = gains.kx * (s.x.z - x3d) + gains.kv * (s.v.z - dx3d) + p.m * p.g - p.m * ddx3d;
    Ok(num / tilt)
}

/// `f = (kx (x - x_c) + kv v + m g e3)·Re3`: keeps the vehicle near `x_c`
/// while an attitude maneuver is flown.
pub fn position_hold_thrust(s: &VehicleState, xc: &Vec3, gains: &Gains, p: &QuadParams) -> f64 {
    (gains.kx * (s.x - xc) + gains.kv * s.v + p.m * p.g * e3()).dot(&s.r.apply(&e3()))
}

/// Thrust vector `A` with its first two time derivatives, and the thrust
/// magnitude `f = -A·Re3` the controller applies.
#[derive(Debug, Clone, Copy)]
struct ThrustVectorChain {
    a: Vec3,
    da: Vec3,
    dda: Vec3,
    f: f64,
}

fn thrust_vector_chain(
    s: &VehicleState,
    cmd: TranslationalCommand<'_>,
    gains: &Gains,
    p: &QuadParams,
) -> ThrustVectorChain {
    let m = p.m;
    let b3 = s.r.apply(&e3());
    let db3 = s.r.apply(&s.omega.cross(&e3()));
    let gravity = p.g * e3();

    // Velocity mode has no position feedback.
    let (kx, ex, ev, acc_d, jerk_d, snap_d) = match cmd {
        TranslationalCommand::Position(c) => (
            gains.kx,
            s.x - c.xd[0],
            s.v - c.xd[1],
            c.xd[2],
            c.xd[3],
            c.xd[4],
        ),
        TranslationalCommand::Velocity(c) => {
            (0.0, Vec3::zeros(), s.v - c.vd[0], c.vd[1], c.vd[2], c.vd[3])
        }
    };

    let a = -kx * ex - gains.kv * ev - m * gravity + m * acc_d;
    let f = -a.dot(&b3);

    let dev = gravity - (f / m) * b3 - acc_d;
    let da = -kx * ev - gains.kv * dev + m * jerk_d;
    let df = -da.dot(&b3) - a.dot(&db3);
    let ddev = -(df / m) * b3 - (f / m) * db3 - jerk_d;
    let dda = -kx * dev - gains.kv * ddev + m * snap_d;

    ThrustVectorChain { a, da, dda, f }
}

/// Unit vector `u = w/|w|` and its first two derivatives.
fn normalized_with_rates(w: &Vec3, dw: &Vec3, ddw: &Vec3) -> (Vec3, Vec3, Vec3) {
    let n = w.norm();
    let u = w / n;
    let du = dw / n - u * (u.dot(dw) / n);
    // d/dt of u·ẇ/n
    let s = u.dot(dw) / n;
    let ds = (du.dot(dw) + u.dot(ddw)) / n - s * s;
    let ddu = ddw / n - dw * (s / n) - du * s - u * ds;
    (u, du, ddu)
}

/// Builds `R_c = [b1c, b3c × b1c, b3c]` and its angular velocity and
/// acceleration.
pub fn compute_attitude_setpoint(
    s: &VehicleState,
    cmd: TranslationalCommand<'_>,
    gains: &Gains,
    p: &QuadParams,
    prev: Option<&ComputedAttitude>,
) -> Result<ComputedAttitude> {
    Ok(setpoint_with_thrust(s, cmd, gains, p, prev)?.0)
}

fn setpoint_with_thrust(
    s: &VehicleState,
    cmd: TranslationalCommand<'_>,
    gains: &Gains,
    p: &QuadParams,
    prev: Option<&ComputedAttitude>,
) -> Result<(ComputedAttitude, f64)> {
    let chain = thrust_vector_chain(s, cmd, gains, p);
    let a_norm = chain.a.norm();
    if !(a_norm > THRUST_VECTOR_EPS) {
        return Err(Error::ThrustVectorSingularity(a_norm));
    }
    let (u, du, ddu) = normalized_with_rates(&chain.a, &chain.da, &chain.dda);
    let (b3c, db3c, ddb3c) = (-u, -du, -ddu);

    let mut heading = *cmd.heading();
    let mut heading_fallback = false;
    if let Err(err @ Error::DegenerateProjection(_)) = normalized_projection(&heading[0], &b3c) {
        match prev {
            Some(prev) => {
                warn!("desired heading parallel to thrust axis; holding previous b1c");
                heading = [prev.rc.axis(0), Vec3::zeros(), Vec3::zeros()];
                heading_fallback = true;
            }
            None => return Err(err),
        }
    }
    let [b1d, db1d, ddb1d] = heading;

    // b2c = (b3c × b1d)/|b3c × b1d|, b1c = b2c × b3c
    let c = b3c.cross(&b1d);
    if !(c.norm() > 1e-6) {
        return Err(Error::DegenerateProjection(c.norm()));
    }
    let dc = db3c.cross(&b1d) + b3c.cross(&db1d);
    let ddc = ddb3c.cross(&b1d) + 2.0 * db3c.cross(&db1d) + b3c.cross(&ddb1d);
    let (b2c, db2c, ddb2c) = normalized_with_rates(&c, &dc, &ddc);
    let b1c = b2c.cross(&b3c);
    let db1c = db2c.cross(&b3c) + b2c.cross(&db3c);
    let ddb1c = ddb2c.cross(&b3c) + 2.0 * db2c.cross(&db3c) + b2c.cross(&ddb3c);

    let rc = Mat3::from_columns(&[b1c, b2c, b3c]);
    let drc = Mat3::from_columns(&[db1c, db2c, db3c]);
    let ddrc = Mat3::from_columns(&[ddb1c, ddb2c, ddb3c]);

    // Ω_c^ = R_cᵀṘ_c and Ω̇_c^ = R_cᵀR̈_c - (Ω_c^)²
    let w_hat = rc.transpose() * drc;
    let omega_c = skew_components(&w_hat);
    let dw_hat = rc.transpose() * ddrc - hat(&omega_c) * hat(&omega_c);
    let domega_c = skew_components(&dw_hat);

    let rc = RotationMatrix::new(rc)
        .map_err(|e| Error::Invalid(format!("computed attitude left SO(3): {e}")))?;
    Ok((
        ComputedAttitude {
            rc,
            omega_c,
            domega_c,
            b3c,
            a: chain.a,
            heading_fallback,
        },
        chain.f,
    ))
}

/// Vector of the skew part of `m` (exact for skew input).
fn skew_components(m: &Mat3) -> Vec3 {
    0.5 * Vec3::new(
        m[(2, 1)] - m[(1, 2)],
        m[(0, 2)] - m[(2, 0)],
        m[(1, 0)] - m[(0, 1)],
    )
}

fn tracking_output(
    s: &VehicleState,
    cmd: TranslationalCommand<'_>,
    gains: &Gains,
    p: &QuadParams,
    prev: Option<&ComputedAttitude>,
) -> Result<(ControlOutput, ComputedAttitude)> {
    let (sp, f) = setpoint_with_thrust(s, cmd, gains, p, prev)?;
    let att = AttitudeCommand {
        rd: sp.rc,
        omega_d: sp.omega_c,
        domega_d: sp.domega_c,
    };
    let moment = attitude_moment(s, &att, gains, p);
    Ok((ControlOutput::from_thrust_moment(f, moment, p)?, sp))
}

/// Position-mode controller: `f = (kx e_x + kv e_v + m g e3 - m ẍ_d)·Re3`
/// and the moment law against the computed attitude.
pub fn position_control(
    s: &VehicleState,
    cmd: &PositionCommand,
    gains: &Gains,
    p: &QuadParams,
    prev: Option<&ComputedAttitude>,
) -> Result<(ControlOutput, ComputedAttitude)> {
    tracking_output(s, TranslationalCommand::Position(cmd), gains, p, prev)
}

/// Velocity-mode controller: `f = (kv e_v + m g e3 - m v̇_d)·Re3`.
pub fn velocity_control(
    s: &VehicleState,
    cmd: &VelocityCommand,
    gains: &Gains,
    p: &QuadParams,
    prev: Option<&ComputedAttitude>,
) -> Result<(ControlOutput, ComputedAttitude)> {
    tracking_output(s, TranslationalCommand::Velocity(cmd), gains, p, prev)
}
