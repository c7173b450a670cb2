//! Flight segments, mode switching schedules and the reference maneuvers.
//!
//! Commands are built from [`Signal`]s (polynomials plus sinusoids in absolute
//! time) so every derivative a controller needs is available in closed form.

use std::f64::consts::PI;

use crate::control::{AttitudeCommand, Gains, PositionCommand, VelocityCommand};
use crate::dynamics::{QuadParams, VehicleState};
use crate::error::{Error, Result};
use crate::so3::{e1, e2, exp_so3, mat3_from_rows, orthonormalize, RotationMatrix, Vec3};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sine {
    pub amplitude: f64,
    /// Angular frequency, rad/s.
    pub omega: f64,
    pub phase: f64,
}

/// Scalar signal `Σ c_k t^k + Σ a_j sin(ω_j t + φ_j)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Signal {
    pub poly: Vec<f64>,
    pub sines: Vec<Sine>,
}

impl Signal {
    pub fn constant(c: f64) -> Self {
        Signal {
            poly: vec![c],
            sines: Vec::new(),
        }
    }

    pub fn linear(c0: f64, c1: f64) -> Self {
        Signal {
            poly: vec![c0, c1],
            sines: Vec::new(),
        }
    }

    /// `order`-th time derivative at `t`.
    pub fn derivative(&self, order: usize, t: f64) -> f64 {
        let mut acc = 0.0;
        // Horner over the differentiated coefficients, highest power first.
        for (k, &c) in self.poly.iter().enumerate().skip(order).rev() {
            let falling: f64 = ((k - order + 1)..=k).map(|i| i as f64).product();
            acc = acc * t + c * falling;
        }
        for s in &self.sines {
            let arg = s.omega * t + s.phase + order as f64 * PI / 2.0;
            acc += s.amplitude * s.omega.powi(order as i32) * arg.sin();
        }
        acc
    }

    pub fn value(&self, t: f64) -> f64 {
        self.derivative(0, t)
    }

    fn is_finite(&self) -> bool {
        self.poly.iter().all(|c| c.is_finite())
            && self
                .sines
                .iter()
                .all(|s| s.amplitude.is_finite() && s.omega.is_finite() && s.phase.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct VectorSignal(pub [Signal; 3]);

impl VectorSignal {
    pub fn constant(v: Vec3) -> Self {
        VectorSignal([
            Signal::constant(v.x),
            Signal::constant(v.y),
            Signal::constant(v.z),
        ])
    }

    pub fn derivative(&self, order: usize, t: f64) -> Vec3 {
        Vec3::new(
            self.0[0].derivative(order, t),
            self.0[1].derivative(order, t),
            self.0[2].derivative(order, t),
        )
    }

    /// `[s, ṡ, …]` up to and including derivative `N - 1`.
    pub fn jet<const N: usize>(&self, t: f64) -> [Vec3; N] {
        std::array::from_fn(|k| self.derivative(k, t))
    }

    fn is_finite(&self) -> bool {
        self.0.iter().all(Signal::is_finite)
    }
}

/// Constant-rate attitude profile `R_d(t) = R_0 exp((t - t_0) ω^)`, which has
/// `Ω_d = ω` and `Ω̇_d = 0` exactly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttitudeProfile {
    pub r0: RotationMatrix,
    pub rate: Vec3,
    pub t0: f64,
}

impl AttitudeProfile {
    pub fn at(&self, t: f64) -> AttitudeCommand {
        AttitudeCommand {
            rd: self.r0.mul(&exp_so3(&(self.rate * (t - self.t0)))),
            omega_d: self.rate,
            domega_d: Vec3::zeros(),
        }
    }
}

/// Thrust magnitude policy for attitude segments.
#[derive(Debug, Clone, PartialEq)]
pub enum ThrustPolicy {
    /// Track `x3_d(t)`.
    AltitudeTracking(Signal),
    /// Stay near a fixed point.
    PositionHold(Vec3),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModeTag {
    Attitude,
    Position,
    Velocity,
}

impl ModeTag {
    pub fn name(&self) -> &'static str {
        match self {
            ModeTag::Attitude => "attitude",
            ModeTag::Position => "position",
            ModeTag::Velocity => "velocity",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SegmentCommand {
    Attitude {
        profile: AttitudeProfile,
        thrust: ThrustPolicy,
    },
    Position {
        xd: VectorSignal,
        b1d: VectorSignal,
    },
    Velocity {
        vd: VectorSignal,
        b1d: VectorSignal,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlightSegment {
    pub t_start: f64,
    pub t_end: f64,
    pub command: SegmentCommand,
}

/// Thrust reference sampled from a [`ThrustPolicy`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThrustSample {
    Altitude { x3d: f64, dx3d: f64, ddx3d: f64 },
    Hold(Vec3),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CommandSample {
    Attitude {
        cmd: AttitudeCommand,
        thrust: ThrustSample,
    },
    Position(PositionCommand),
    Velocity(VelocityCommand),
}

impl FlightSegment {
    pub fn mode(&self) -> ModeTag {
        match self.command {
            SegmentCommand::Attitude { .. } => ModeTag::Attitude,
            SegmentCommand::Position { .. } => ModeTag::Position,
            SegmentCommand::Velocity { .. } => ModeTag::Velocity,
        }
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.t_start && t <= self.t_end
    }

    fn validate(&self) -> Result<()> {
        if !(self.t_end > self.t_start) || !self.t_start.is_finite() || !self.t_end.is_finite() {
            return Err(Error::Validation(format!(
                "segment window [{}, {}] is empty",
                self.t_start, self.t_end
            )));
        }
        let finite = match &self.command {
            SegmentCommand::Attitude { profile, thrust } => {
                profile.rate.iter().all(|c| c.is_finite())
                    && profile.t0.is_finite()
                    && match thrust {
                        ThrustPolicy::AltitudeTracking(s) => s.is_finite(),
                        ThrustPolicy::PositionHold(xc) => xc.iter().all(|c| c.is_finite()),
                    }
            }
            SegmentCommand::Position { xd, b1d } => xd.is_finite() && b1d.is_finite(),
            SegmentCommand::Velocity { vd, b1d } => vd.is_finite() && b1d.is_finite(),
        };
        if !finite {
            return Err(Error::Validation("segment command is not finite".into()));
        }
        Ok(())
    }
}

fn heading_jet(b1d: &VectorSignal, t: f64) -> Result<[Vec3; 3]> {
    let jet = b1d.jet::<3>(t);
    if (jet[0].norm() - 1.0).abs() > 1e-9 {
        return Err(Error::Invalid(format!(
            "desired heading must be a unit vector, |b1d({t})| = {}",
            jet[0].norm()
        )));
    }
    Ok(jet)
}

/// Samples the segment's command, with every derivative the mode's
/// controller consumes.
pub fn evaluate_command(seg: &FlightSegment, t: f64) -> Result<CommandSample> {
    if !seg.contains(t) {
        return Err(Error::OutOfWindow {
            t,
            t_start: seg.t_start,
            t_end: seg.t_end,
        });
    }
    Ok(match &seg.command {
        SegmentCommand::Attitude { profile, thrust } => CommandSample::Attitude {
            cmd: profile.at(t),
            thrust: match thrust {
                ThrustPolicy::AltitudeTracking(x3d) => ThrustSample::Altitude {
                    x3d: x3d.derivative(0, t),
                    dx3d: x3d.derivative(1, t),
                    ddx3d: x3d.derivative(2, t),
                },
                ThrustPolicy::PositionHold(xc) => ThrustSample::Hold(*xc),
            },
        },
        SegmentCommand::Position { xd, b1d } => CommandSample::Position(PositionCommand {
            xd: xd.jet::<5>(t),
            b1d: heading_jet(b1d, t)?,
        }),
        SegmentCommand::Velocity { vd, b1d } => CommandSample::Velocity(VelocityCommand {
            vd: vd.jet::<4>(t),
            b1d: heading_jet(b1d, t)?,
        }),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mission {
    pub name: String,
    pub segments: Vec<FlightSegment>,
    pub initial: VehicleState,
    pub params: QuadParams,
    pub gains: Gains,
}

impl Mission {
    pub fn duration(&self) -> f64 {
        self.segments.last().map_or(0.0, |s| s.t_end)
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.gains.validate()?;
        if !self.initial.is_finite() {
            return Err(Error::Validation("initial state is not finite".into()));
        }
        RotationMatrix::new(*self.initial.r.matrix())
            .map_err(|e| Error::Validation(format!("initial attitude: {e}")))?;
        let first = self
            .segments
            .first()
            .ok_or_else(|| Error::Validation("mission has no segments".into()))?;
        if first.t_start != 0.0 {
            return Err(Error::Validation(
                "first segment must start at t = 0".into(),
            ));
        }
        for seg in &self.segments {
            seg.validate()?;
        }
        for pair in self.segments.windows(2) {
            if pair[1].t_start != pair[0].t_end {
                return Err(Error::Validation(format!(
                    "segments are not contiguous at t = {}",
                    pair[0].t_end
                )));
            }
        }
        Ok(())
    }

    /// Index of the segment active at `t`. Segments are half-open except the
    /// last, which includes its end time.
    pub fn segment_index(&self, t: f64) -> Option<usize> {
        let n = self.segments.len();
        self.segments
            .iter()
            .enumerate()
            .position(|(i, s)| t >= s.t_start && (t < s.t_end || (i + 1 == n && t <= s.t_end)))
    }
}

/// The inverted starting attitude, re-orthonormalized from its printed
/// four-digit entries.
pub fn case1_initial_attitude() -> RotationMatrix {
    let printed = mat3_from_rows(&[
        [1.0, 0.0, 0.0],
        [0.0, -0.9995, -0.0314],
        [0.0, 0.0314, -0.9995],
    ]);
    orthonormalize(&printed).expect("printed attitude is nonsingular")
}

fn reference_initial_state() -> VehicleState {
    VehicleState::at_rest(case1_initial_attitude())
}

/// Recovery from an inverted start while holding the origin.
pub fn build_case1() -> Mission {
    let p = QuadParams::reference();
    Mission {
        name: "case1".into(),
        segments: vec![FlightSegment {
            t_start: 0.0,
            t_end: 10.0,
            command: SegmentCommand::Position {
                xd: VectorSignal::constant(Vec3::zeros()),
                b1d: VectorSignal::constant(e1()),
            },
        }],
        initial: reference_initial_state(),
        params: p,
        gains: Gains::reference(p.m),
    }
}

/// Five-segment maneuver: velocity tracking, a 720° flip about `e2`,
/// position tracking, a 360° roll about `e1`, and position tracking with a
/// sideways heading.
pub fn build_case2() -> Mission {
    let p = QuadParams::reference();
    let two_pi = 2.0 * PI;
    let segments = vec![
        FlightSegment {
            t_start: 0.0,
            t_end: 4.0,
            command: SegmentCommand::Velocity {
                vd: VectorSignal([
                    Signal::linear(1.0, 0.5),
                    Signal {
                        poly: Vec::new(),
                        sines: vec![Sine {
                            amplitude: 0.2,
                            omega: two_pi,
                            phase: 0.0,
                        }],
                    },
                    Signal::constant(-0.1),
                ]),
                b1d: VectorSignal::constant(e1()),
            },
        },
        FlightSegment {
            t_start: 4.0,
            t_end: 6.0,
            command: SegmentCommand::Attitude {
                profile: AttitudeProfile {
                    r0: RotationMatrix::identity(),
                    rate: two_pi * e2(),
                    t0: 4.0,
                },
                thrust: ThrustPolicy::PositionHold(Vec3::new(8.0, 0.0, 0.0)),
            },
        },
        FlightSegment {
            t_start: 6.0,
            t_end: 8.0,
            command: SegmentCommand::Position {
                xd: VectorSignal([
                    Signal::linear(14.0, -1.0),
                    Signal::constant(0.0),
                    Signal::constant(0.0),
                ]),
                b1d: VectorSignal::constant(e1()),
            },
        },
        FlightSegment {
            t_start: 8.0,
            t_end: 9.0,
            command: SegmentCommand::Attitude {
                profile: AttitudeProfile {
                    r0: RotationMatrix::identity(),
                    rate: two_pi * e1(),
                    t0: 8.0,
                },
                thrust: ThrustPolicy::PositionHold(Vec3::new(6.0, 0.0, 0.0)),
            },
        },
        FlightSegment {
            t_start: 9.0,
            t_end: 12.0,
            command: SegmentCommand::Position {
                xd: VectorSignal([
                    Signal::linear(20.0, -5.0 / 3.0),
                    Signal::constant(0.0),
                    Signal::constant(0.0),
                ]),
                b1d: VectorSignal::constant(e2()),
            },
        },
    ];
    Mission {
        name: "case2".into(),
        segments,
        initial: reference_initial_state(),
        params: p,
        gains: Gains::reference(p.m),
    }
}
