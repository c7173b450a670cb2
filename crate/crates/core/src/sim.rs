//! Fixed-step simulation of the closed loop.
//!
//! The state `(x, v, R, Ω)` is integrated with classical RK4, treating `R` as
//! nine independent reals. The control law is re-evaluated at every stage.
//! After each step the rotation is projected back onto SO(3) (polar factor)
//! whenever its orthogonality error exceeds the configured tolerance.

use log::warn;

use crate::control::{
    altitude_thrust, attitude_moment, position_control, position_hold_thrust, translational_errors,
    velocity_control, ComputedAttitude, Gains, TranslationalCommand,
};
use crate::dynamics::{state_derivative, ControlOutput, QuadParams, VehicleState};
use crate::error::{Error, Result};
use crate::mission::{
    evaluate_command, CommandSample, FlightSegment, Mission, ModeTag, ThrustSample,
};
use crate::monitor::{monitor_trace, MonitorReport};
use crate::so3::{
    angular_velocity_error, attitude_error, orthonormalize, psi, Mat3, RotationMatrix, Vec3,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    /// Integration step, s.
    pub dt: f64,
    /// Simulated time span, s.
    pub duration: f64,
    /// Re-orthonormalize `R` when `|RᵀR - I|_F` exceeds this.
    pub ortho_tolerance: f64,
    /// Log every n-th step.
    pub log_decimation: usize,
}

impl SimConfig {
    pub const DEFAULT_DT: f64 = 1e-3;
    pub const DEFAULT_ORTHO_TOLERANCE: f64 = 1e-9;
    pub const DEFAULT_LOG_DECIMATION: usize = 10;

    pub fn new(duration: f64) -> Self {
        SimConfig {
            dt: Self::DEFAULT_DT,
            duration,
            ortho_tolerance: Self::DEFAULT_ORTHO_TOLERANCE,
            log_decimation: Self::DEFAULT_LOG_DECIMATION,
        }
    }

    pub fn for_mission(mission: &Mission) -> Self {
        Self::new(mission.duration())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Validation("dt must be positive".into()));
        }
        if !(self.duration >= 0.0 && self.duration.is_finite()) {
            return Err(Error::Validation("duration must be non-negative".into()));
        }
        if self.duration > 0.0 && self.duration < self.dt {
            return Err(Error::Validation("duration must be at least dt".into()));
        }
        if !(self.ortho_tolerance > 0.0) {
            return Err(Error::Validation("ortho_tolerance must be positive".into()));
        }
        if self.log_decimation == 0 {
            return Err(Error::Validation("log_decimation must be positive".into()));
        }
        Ok(())
    }

    /// Number of integration steps covering `duration`.
    pub fn steps(&self) -> usize {
        if self.duration <= 0.0 {
            return 0;
        }
        (self.duration / self.dt - 1e-9).ceil() as usize
    }
}

/// Attitude the vehicle is tracking: `R_d` in attitude mode, `R_c` otherwise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceAttitude {
    pub r: RotationMatrix,
    pub omega: Vec3,
    pub domega: Vec3,
}

/// Control output together with the tracking diagnostics at one state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlEval {
    pub output: ControlOutput,
    pub reference: ReferenceAttitude,
    pub computed: Option<ComputedAttitude>,
    pub e_x: Vec3,
    pub e_v: Vec3,
}

/// A flight segment's controller with its one-step memory.
#[derive(Debug, Clone)]
pub struct SegmentController<'a> {
    pub segment: &'a FlightSegment,
    pub params: &'a QuadParams,
    pub gains: &'a Gains,
    prev: Option<ComputedAttitude>,
}

impl<'a> SegmentController<'a> {
    pub fn new(segment: &'a FlightSegment, params: &'a QuadParams, gains: &'a Gains) -> Self {
        SegmentController {
            segment,
            params,
            gains,
            prev: None,
        }
    }

    pub fn evaluate(&self, t: f64, s: &VehicleState) -> Result<ControlEval> {
        let (p, g) = (self.params, self.gains);
        match evaluate_command(self.segment, t)? {
            CommandSample::Attitude { cmd, thrust } => {
                let (f, e_x, e_v) = match thrust {
                    ThrustSample::Altitude { x3d, dx3d, ddx3d } => (
                        altitude_thrust(s, x3d, dx3d, ddx3d, g, p)?,
                        Vec3::new(0.0, 0.0, s.x.z - x3d),
                        Vec3::new(0.0, 0.0, s.v.z - dx3d),
                    ),
                    ThrustSample::Hold(xc) => (position_hold_thrust(s, &xc, g, p), s.x - xc, s.v),
                };
                let moment = attitude_moment(s, &cmd, g, p);
                Ok(ControlEval {
                    output: ControlOutput::from_thrust_moment(f, moment, p)?,
                    reference: ReferenceAttitude {
                        r: cmd.rd,
                        omega: cmd.omega_d,
                        domega: cmd.domega_d,
                    },
                    computed: None,
                    e_x,
                    e_v,
                })
            }
            CommandSample::Position(cmd) => {
                let (output, sp) = position_control(s, &cmd, g, p, self.prev.as_ref())?;
                let err = translational_errors(s, TranslationalCommand::Position(&cmd));
                Ok(Self::tracking_eval(output, sp, err.ex, err.ev))
            }
            CommandSample::Velocity(cmd) => {
                let (output, sp) = velocity_control(s, &cmd, g, p, self.prev.as_ref())?;
                let err = translational_errors(s, TranslationalCommand::Velocity(&cmd));
                Ok(Self::tracking_eval(output, sp, err.ex, err.ev))
            }
        }
    }

    fn tracking_eval(
        output: ControlOutput,
        sp: ComputedAttitude,
        e_x: Vec3,
        e_v: Vec3,
    ) -> ControlEval {
        ControlEval {
            output,
            reference: ReferenceAttitude {
                r: sp.rc,
                omega: sp.omega_c,
                domega: sp.domega_c,
            },
            computed: Some(sp),
            e_x,
            e_v,
        }
    }

    /// Stores the setpoint of an accepted step.
    pub fn accept(&mut self, eval: &ControlEval) {
        if let Some(sp) = eval.computed {
            self.prev = Some(sp);
        }
    }

    pub fn reset(&mut self) {
        self.prev = None;
    }
}

fn advance(s: &VehicleState, d: &crate::dynamics::StateDerivative, h: f64) -> VehicleState {
    VehicleState {
        x: s.x + d.dx * h,
        v: s.v + d.dv * h,
        r: RotationMatrix::from_matrix_unchecked(s.r.matrix() + d.dr * h),
        omega: s.omega + d.domega * h,
    }
}

/// One classical RK4 step. `control` is called at each stage with the stage
/// time and state; `first` may supply the already-evaluated first-stage
/// control.
pub fn rk4_step<F>(
    s: &VehicleState,
    t: f64,
    dt: f64,
    p: &QuadParams,
    first: Option<ControlOutput>,
    mut control: F,
) -> Result<VehicleState>
where
    F: FnMut(f64, &VehicleState) -> Result<ControlOutput>,
{
    let u1 = match first {
        Some(u) => u,
        None => control(t, s)?,
    };
    let k1 = state_derivative(s, &u1, p);
    let s2 = advance(s, &k1, 0.5 * dt);
    let k2 = state_derivative(&s2, &control(t + 0.5 * dt, &s2)?, p);
    let s3 = advance(s, &k2, 0.5 * dt);
    let k3 = state_derivative(&s3, &control(t + 0.5 * dt, &s3)?, p);
    let s4 = advance(s, &k3, dt);
    let k4 = state_derivative(&s4, &control(t + dt, &s4)?, p);
    let w = dt / 6.0;
    Ok(VehicleState {
        x: s.x + (k1.dx + 2.0 * k2.dx + 2.0 * k3.dx + k4.dx) * w,
        v: s.v + (k1.dv + 2.0 * k2.dv + 2.0 * k3.dv + k4.dv) * w,
        r: RotationMatrix::from_matrix_unchecked(
            s.r.matrix() + (k1.dr + 2.0 * k2.dr + 2.0 * k3.dr + k4.dr) * w,
        ),
        omega: s.omega + (k1.domega + 2.0 * k2.domega + 2.0 * k3.domega + k4.domega) * w,
    })
}

/// Projects `R` back onto SO(3) when its drift exceeds `tolerance`.
pub fn repair_attitude(s: &mut VehicleState, tolerance: f64) -> Result<bool> {
    if s.r.orthogonality_error() > tolerance {
        s.r = orthonormalize(s.r.matrix())?;
        return Ok(true);
    }
    Ok(false)
}

/// RK4 step under a segment controller followed by drift repair.
pub fn step(
    s: &VehicleState,
    t: f64,
    dt: f64,
    controller: &SegmentController<'_>,
    ortho_tolerance: f64,
) -> Result<VehicleState> {
    if !(dt > 0.0) {
        return Err(Error::Invalid("dt must be positive".into()));
    }
    let mut next = rk4_step(s, t, dt, controller.params, None, |tt, ss| {
        Ok(controller.evaluate(tt, ss)?.output)
    })?;
    repair_attitude(&mut next, ortho_tolerance)?;
    Ok(next)
}

/// One logged sample of the closed loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub t: f64,
    pub segment: usize,
    pub mode: ModeTag,
    pub x: Vec3,
    pub v: Vec3,
    pub r: Mat3,
    pub omega: Vec3,
    pub f: f64,
    pub moment: Vec3,
    pub rotor_thrusts: [f64; 4],
    pub psi: f64,
    pub e_r: Vec3,
    pub e_omega: Vec3,
    pub e_x: Vec3,
    pub e_v: Vec3,
    /// Tracked attitude and its rates (not part of the CSV contract).
    pub r_ref: Mat3,
    pub omega_ref: Vec3,
    pub domega_ref: Vec3,
}

impl TraceRecord {
    pub fn new(
        t: f64,
        segment: usize,
        mode: ModeTag,
        s: &VehicleState,
        eval: &ControlEval,
    ) -> Self {
        let rf = &eval.reference;
        TraceRecord {
            t,
            segment,
            mode,
            x: s.x,
            v: s.v,
            r: *s.r.matrix(),
            omega: s.omega,
            f: eval.output.f,
            moment: eval.output.moment,
            rotor_thrusts: eval.output.rotor_thrusts,
            psi: psi(&s.r, &rf.r),
            e_r: attitude_error(&s.r, &rf.r),
            e_omega: angular_velocity_error(&s.omega, &s.r, &rf.r, &rf.omega),
            e_x: eval.e_x,
            e_v: eval.e_v,
            r_ref: *rf.r.matrix(),
            omega_ref: rf.omega,
            domega_ref: rf.domega,
        }
    }

    pub fn is_finite(&self) -> bool {
        let vecs = [
            self.x,
            self.v,
            self.omega,
            self.moment,
            self.e_r,
            self.e_omega,
            self.e_x,
            self.e_v,
        ];
        self.t.is_finite()
            && self.f.is_finite()
            && self.psi.is_finite()
            && vecs.iter().all(|v| v.iter().all(|c| c.is_finite()))
            && self.r.iter().all(|c| c.is_finite())
            && self.rotor_thrusts.iter().all(|c| c.is_finite())
    }
}

/// Why a run stopped early.
#[derive(Debug, Clone, PartialEq)]
pub struct Abort {
    pub t: f64,
    pub reason: String,
}

/// Run counters that are not per-record.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RunStats {
    pub steps: usize,
    pub negative_rotor_steps: usize,
    pub heading_fallbacks: usize,
    pub reorthonormalizations: usize,
    /// Largest `|RᵀR - I|_F` over accepted states.
    pub max_orthogonality_error: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trace: Vec<TraceRecord>,
    pub report: MonitorReport,
    pub stats: RunStats,
    pub abort: Option<Abort>,
}

impl RunOutput {
    pub fn completed(&self) -> bool {
        self.abort.is_none()
    }
}

/// Simulates `mission` and runs the stability monitor over the trace.
pub fn run(mission: &Mission, cfg: &SimConfig) -> Result<RunOutput> {
    run_with(mission, cfg, |_, _, _| {})
}

/// As [`run`], calling `observe(t, state, eval)` at every accepted step.
pub fn run_with<O>(mission: &Mission, cfg: &SimConfig, mut observe: O) -> Result<RunOutput>
where
    O: FnMut(f64, &VehicleState, &ControlEval),
{
    mission.validate()?;
    cfg.validate()?;

    let n_steps = cfg.steps();
    let mut trace = Vec::with_capacity(n_steps / cfg.log_decimation + 2);
    let mut stats = RunStats {
        max_orthogonality_error: mission.initial.r.orthogonality_error(),
        ..RunStats::default()
    };
    let mut abort = None;

    if n_steps > 0 {
        let mut s = mission.initial;
        let mut seg_idx = usize::MAX;
        let mut controller: Option<SegmentController<'_>> = None;
        let last_seg = mission.segments.len() - 1;

        for k in 0..=n_steps {
            let t = k as f64 * cfg.dt;
            let idx = mission.segment_index(t).unwrap_or(last_seg);
            if idx != seg_idx {
                // Mode switch: fresh controller memory.
                seg_idx = idx;
                controller = Some(SegmentController::new(
                    &mission.segments[idx],
                    &mission.params,
                    &mission.gains,
                ));
            }
            let ctrl = controller.as_mut().expect("controller set above");
            let seg = &mission.segments[idx];
            // Stage times may run past the segment end by a rounding margin.
            let t_eval = t.min(seg.t_end);

            let eval = match ctrl.evaluate(t_eval, &s) {
                Ok(e) => e,
                Err(e) => {
                    abort = Some(Abort {
                        t,
                        reason: e.to_string(),
                    });
                    break;
                }
            };
            if eval.output.has_negative_rotor() {
                stats.negative_rotor_steps += 1;
            }
            if eval.computed.is_some_and(|c| c.heading_fallback) {
                stats.heading_fallbacks += 1;
            }
            observe(t, &s, &eval);

            let record = TraceRecord::new(t, idx, seg.mode(), &s, &eval);
            if !record.is_finite() || !s.is_finite() {
                abort = Some(Abort {
                    t,
                    reason: "state became non-finite".into(),
                });
                break;
            }
            if k % cfg.log_decimation == 0 || k == n_steps {
                trace.push(record);
            }
            if k == n_steps {
                break;
            }

            ctrl.accept(&eval);
            let ctrl_ref: &SegmentController<'_> = ctrl;
            let seg_end = seg.t_end;
            let stepped = rk4_step(
                &s,
                t,
                cfg.dt,
                &mission.params,
                Some(eval.output),
                |tt, ss| Ok(ctrl_ref.evaluate(tt.min(seg_end), ss)?.output),
            );
            match stepped {
                Ok(mut next) => {
                    match repair_attitude(&mut next, cfg.ortho_tolerance) {
                        Ok(true) => stats.reorthonormalizations += 1,
                        Ok(false) => {}
                        Err(e) => {
                            abort = Some(Abort {
                                t: t + cfg.dt,
                                reason: e.to_string(),
                            });
                            break;
                        }
                    }
                    stats.max_orthogonality_error = stats
                        .max_orthogonality_error
                        .max(next.r.orthogonality_error());
                    s = next;
                    stats.steps += 1;
                }
                Err(e) => {
                    abort = Some(Abort {
                        t,
                        reason: e.to_string(),
                    });
                    break;
                }
            }
        }
    }

    if let Some(a) = &abort {
        warn!("run aborted at t = {}: {}", a.t, a.reason);
    }
    let report = monitor_trace(&trace, mission, &stats, abort.as_ref());
    Ok(RunOutput {
        trace,
        report,
        stats,
        abort,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mission::{build_case1, FlightSegment, SegmentCommand, VectorSignal};
    use crate::so3::{e1, exp_so3};
    use approx::assert_relative_eq;

    fn hover_mission() -> Mission {
        let mut m = build_case1();
        m.initial = VehicleState::at_rest(RotationMatrix::identity());
        m
    }

    #[test]
    fn hover_is_a_fixed_point() {
        let m = hover_mission();
        let ctrl = SegmentController::new(&m.segments[0], &m.params, &m.gains);
        let mut s = m.initial;
        for k in 0..100 {
            let next = step(&s, k as f64 * 1e-3, 1e-3, &ctrl, 1e-9).unwrap();
            assert!((next.x - s.x).norm() < 1e-12);
            assert!((next.v - s.v).norm() < 1e-12);
            assert!((next.r.matrix() - s.r.matrix()).norm() < 1e-12);
            assert!((next.omega - s.omega).norm() < 1e-12);
            s = next;
        }
    }

    #[test]
    fn free_fall_matches_ballistic_solution() {
        let p = QuadParams::reference();
        let mut s = VehicleState::at_rest(RotationMatrix::identity());
        let dt = 1e-3;
        for k in 0..1000 {
            s = rk4_step(&s, k as f64 * dt, dt, &p, None, |_, _| {
                Ok(ControlOutput::zero())
            })
            .unwrap();
        }
        assert_relative_eq!(s.x.z, 4.905, epsilon = 1e-9);
        assert_relative_eq!(s.v.z, 9.81, epsilon = 1e-9);
    }

    #[test]
    fn principal_axis_spin_is_preserved() {
        let p = QuadParams::reference();
        let mut s = VehicleState::at_rest(RotationMatrix::identity());
        s.omega = 3.0 * e1();
        let dt = 1e-3;
        for k in 0..1000 {
            s = rk4_step(&s, k as f64 * dt, dt, &p, None, |_, _| {
                Ok(ControlOutput::zero())
            })
            .unwrap();
            repair_attitude(&mut s, 1e-9).unwrap();
        }
        assert!((s.omega - 3.0 * e1()).norm() < 1e-10);
        let expected = exp_so3(&(3.0 * e1()));
        assert!((s.r.matrix() - expected.matrix()).norm() < 1e-9);
    }

    #[test]
    fn zero_duration_run_is_empty() {
        let m = build_case1();
        let cfg = SimConfig {
            duration: 0.0,
            ..SimConfig::for_mission(&m)
        };
        let out = run(&m, &cfg).unwrap();
        assert!(out.trace.is_empty());
        assert!(out.completed());
        assert!(out.report.violations().is_empty());
    }

    #[test]
    fn step_count_and_logging() {
        let cfg = SimConfig::new(10.0);
        assert_eq!(cfg.steps(), 10_000);
        assert_eq!(SimConfig { dt: 5e-4, ..cfg }.steps(), 20_000);
        let m = hover_mission();
        let out = run(
            &m,
            &SimConfig {
                duration: 0.1,
                ..cfg
            },
        )
        .unwrap();
        assert_eq!(out.trace.len(), 11);
        assert_relative_eq!(out.trace.last().unwrap().t, 0.1, epsilon = 1e-15);
    }

    #[test]
    fn singular_command_aborts_with_time() {
        let mut m = hover_mission();
        m.segments = vec![FlightSegment {
            t_start: 0.0,
            t_end: 1.0,
            command: SegmentCommand::Position {
                xd: VectorSignal::constant(Vec3::zeros()),
                b1d: VectorSignal::constant(crate::so3::e3()),
            },
        }];
        let out = run(&m, &SimConfig::new(1.0)).unwrap();
        let abort = out.abort.expect("projection is degenerate at t = 0");
        assert_eq!(abort.t, 0.0);
        assert!(abort.reason.contains("parallel"));
    }

    #[test]
    fn invalid_config_is_rejected() {
        let m = build_case1();
        assert!(run(
            &m,
            &SimConfig {
                dt: 0.0,
                ..SimConfig::new(1.0)
            }
        )
        .is_err());
        assert!(run(
            &m,
            &SimConfig {
                log_decimation: 0,
                ..SimConfig::new(1.0)
            }
        )
        .is_err());
    }
}
