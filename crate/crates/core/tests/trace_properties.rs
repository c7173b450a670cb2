//! Properties of simulated closed-loop traces, checked against finite
//! differences and an independent first-order integrator.

use std::f64::consts::PI;

use quadrotor_se3::mission::{
    build_case1, build_case2, evaluate_command, AttitudeProfile, CommandSample, FlightSegment,
    SegmentCommand, ThrustPolicy,
};
use quadrotor_se3::sim::{run, SegmentController, SimConfig, TraceRecord};
use quadrotor_se3::so3::{e2, e3, exp_so3, Mat3, RotationMatrix, Vec3};
use quadrotor_se3::{Mission, QuadParams, VehicleState};

fn fine_trace(mission: &Mission, dt: f64, duration: f64) -> Vec<TraceRecord> {
    let cfg = SimConfig {
        dt,
        duration,
        log_decimation: 1,
        ..SimConfig::new(duration)
    };
    let out = run(mission, &cfg).unwrap();
    assert!(out.completed());
    out.trace
}

/// One second of the 720° flip, starting level at rest on the hold point.
fn flip_mission() -> Mission {
    let mut m = build_case2();
    m.segments = vec![FlightSegment {
        t_start: 0.0,
        t_end: 1.0,
        command: SegmentCommand::Attitude {
            profile: AttitudeProfile {
                r0: RotationMatrix::identity(),
                rate: 2.0 * PI * e2(),
                t0: 0.0,
            },
            thrust: ThrustPolicy::PositionHold(Vec3::new(8.0, 0.0, 0.0)),
        },
    }];
    m.initial = VehicleState::at_rest(RotationMatrix::identity());
    m.initial.x = Vec3::new(8.0, 0.0, 0.0);
    m
}

#[test]
fn error_function_rate_matches_errors() {
    let dt = 1e-4;
    let trace = fine_trace(&flip_mission(), dt, 1.0);
    let mut worst = 0.0f64;
    for w in trace.windows(3) {
        let fd = (w[2].psi - w[0].psi) / (2.0 * dt);
        let exact = w[1].e_r.dot(&w[1].e_omega);
        worst = worst.max((fd - exact).abs());
    }
    assert!(worst < 1e-5, "max |dPsi/dt - eR.eW| = {worst:e}");
}

#[test]
fn attitude_error_rate_is_bounded_by_rate_error() {
    let dt = 1e-4;
    let trace = fine_trace(&flip_mission(), dt, 1.0);
    // The bound is tight near R = R_d, so leave room for the O(dt²)
    // truncation error of the central difference.
    for w in trace.windows(3) {
        let de_r = (w[2].e_r - w[0].e_r) / (2.0 * dt);
        assert!(
            de_r.norm() <= w[1].e_omega.norm() * (1.0 + 1e-5) + 1e-6,
            "t = {}: |deR| = {} > |eW| = {}",
            w[1].t,
            de_r.norm(),
            w[1].e_omega.norm()
        );
    }
}

#[test]
fn computed_attitude_rates_match_finite_differences() {
    let dt = 1e-4;
    let trace = fine_trace(&build_case1(), dt, 0.5);
    let mut worst_omega = 0.0f64;
    let mut worst_domega = 0.0f64;
    for w in trace.windows(3) {
        let dr = (w[2].r_ref - w[0].r_ref) / (2.0 * dt);
        let body: Mat3 = w[1].r_ref.transpose() * dr;
        let omega_fd = 0.5
            * Vec3::new(
                body[(2, 1)] - body[(1, 2)],
                body[(0, 2)] - body[(2, 0)],
                body[(1, 0)] - body[(0, 1)],
            );
        let domega_fd = (w[2].omega_ref - w[0].omega_ref) / (2.0 * dt);
        worst_omega =
            worst_omega.max((omega_fd - w[1].omega_ref).norm() / (1.0 + w[1].omega_ref.norm()));
        worst_domega =
            worst_domega.max((domega_fd - w[1].domega_ref).norm() / (1.0 + w[1].domega_ref.norm()));
    }
    assert!(worst_omega < 1e-4, "Omega_c mismatch {worst_omega:e}");
    assert!(worst_domega < 1e-3, "dOmega_c mismatch {worst_domega:e}");
}

#[test]
fn command_derivatives_match_finite_differences() {
    let m = build_case2();
    let h = 1e-5;
    let sample = |seg: &FlightSegment, t: f64| -> Vec<Vec3> {
        match evaluate_command(seg, t).unwrap() {
            CommandSample::Position(c) => c.xd.to_vec(),
            CommandSample::Velocity(c) => c.vd.to_vec(),
            CommandSample::Attitude { .. } => unreachable!(),
        }
    };
    for (k, t) in [(0, 1.3), (2, 7.1), (4, 10.4)] {
        let seg = &m.segments[k];
        let (lo, mid, hi) = (sample(seg, t - h), sample(seg, t), sample(seg, t + h));
        for d in 0..mid.len() - 1 {
            let fd = (hi[d] - lo[d]) / (2.0 * h);
            assert!(
                (fd - mid[d + 1]).norm() < 1e-6 * (1.0 + mid[d + 1].norm()),
                "segment {k}, derivative {}: {fd} vs {}",
                d + 1,
                mid[d + 1]
            );
        }
    }
}

/// First-order Lie group Euler stepper: `R ← R exp(h Ω^)`, everything else
/// explicit Euler. Stays exactly on SO(3) and shares no code with RK4.
fn lie_euler(mission: &Mission, dt: f64, duration: f64) -> VehicleState {
    let p: &QuadParams = &mission.params;
    let j_inv = p.j.try_inverse().unwrap();
    let mut ctl = SegmentController::new(&mission.segments[0], p, &mission.gains);
    let mut s = mission.initial;
    let n = (duration / dt).round() as usize;
    for k in 0..n {
        let eval = ctl.evaluate(k as f64 * dt, &s).unwrap();
        ctl.accept(&eval);
        let u = eval.output;
        let r = *s.r.matrix();
        let dv = p.g * e3() - u.f / p.m * (r * e3());
        let domega = j_inv * (u.moment - s.omega.cross(&(p.j * s.omega)));
        s = VehicleState {
            x: s.x + dt * s.v,
            v: s.v + dt * dv,
            r: s.r.mul(&exp_so3(&(dt * s.omega))),
            omega: s.omega + dt * domega,
        };
    }
    s
}

fn state_distance(a: &VehicleState, b: &VehicleState) -> f64 {
    ((a.x - b.x).norm_squared()
        + (a.v - b.v).norm_squared()
        + (a.r.matrix() - b.r.matrix()).norm_squared()
        + (a.omega - b.omega).norm_squared())
    .sqrt()
}

#[test]
fn rk4_agrees_with_a_lie_group_integrator() {
    let m = build_case1();
    let duration = 0.5;
    let last = *fine_trace(&m, 1e-3, duration).last().unwrap();
    assert_eq!(last.t, duration);
    let rk4 = VehicleState {
        x: last.x,
        v: last.v,
        r: RotationMatrix::from_matrix_unchecked(last.r),
        omega: last.omega,
    };
    let coarse = state_distance(&lie_euler(&m, 1e-4, duration), &rk4);
    let fine = state_distance(&lie_euler(&m, 5e-5, duration), &rk4);
    assert!(fine < 2e-2, "Lie-Euler gap {fine:e}");
    let ratio = coarse / fine;
    assert!((1.7..2.3).contains(&ratio), "first-order ratio {ratio}");
}

#[test]
fn rk4_converges_at_fourth_order_on_the_recovery_transient() {
    let m = build_case1();
    let end = |dt: f64| {
        let out = run(
            &m,
            &SimConfig {
                dt,
                ..SimConfig::new(2.0)
            },
        )
        .unwrap();
        out.trace.last().unwrap().x
    };
    let (a, b, c) = (end(1e-2), end(5e-3), end(2.5e-3));
    let ratio = (a - b).norm() / (b - c).norm();
    assert!((8.0..24.0).contains(&ratio), "convergence ratio {ratio}");
}

#[test]
fn runs_are_bit_for_bit_repeatable() {
    let m = build_case2();
    let cfg = SimConfig::for_mission(&m);
    let a = run(&m, &cfg).unwrap();
    let b = run(&m, &cfg).unwrap();
    assert_eq!(a.trace, b.trace);
    assert_eq!(a.report.to_json(), b.report.to_json());
}

#[test]
fn case1_trace_shape() {
    let m = build_case1();
    let out = run(&m, &SimConfig::for_mission(&m)).unwrap();
    assert_eq!(out.trace.len(), 1001);
    assert_eq!(out.trace[0].t, 0.0);
    assert!((out.trace[1000].t - 10.0).abs() < 1e-12);
    assert!(out.trace.iter().all(TraceRecord::is_finite));
}

#[test]
fn case1_certificate_regression() {
    let m = build_case1();
    let out = run(&m, &SimConfig::for_mission(&m)).unwrap();
    let c = out.report.segments[0].certificate.unwrap();
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * b.abs();
    assert!(close(c.c1, 1.5653309842866527e-4), "c1 = {:e}", c.c1);
    assert!(close(c.c2, 6.140643999363377e-2), "c2 = {:e}", c.c2);
    assert_eq!(c.psi1, 0.9);
    assert_eq!(c.e_x_max, 1.0);
    assert!(close(c.b, 43.001154), "B = {}", c.b);
    assert!(!c.feasible);
}

#[test]
fn case2_initial_control_regression() {
    let m = build_case2();
    let ctl = SegmentController::new(&m.segments[0], &m.params, &m.gains);
    let u = ctl.evaluate(0.0, &m.initial).unwrap().output;
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-10 * (1.0 + b.abs());
    assert!(close(u.f, -44.81235661007981), "f = {}", u.f);
    let moment = [0.5945164633582931, 0.5916779947217052, 0.4574805247447358];
    for (got, want) in u.moment.iter().zip(moment) {
        assert!(close(*got, want), "M = {}", u.moment);
    }
    let rotors = [
        -24.553039569681083,
        2.1423557588688165,
        -26.43138241006745,
        4.029709610799905,
    ];
    for (got, want) in u.rotor_thrusts.iter().zip(rotors) {
        assert!(close(*got, want), "rotors = {:?}", u.rotor_thrusts);
    }
}

#[test]
fn body_rates_integrate_to_the_logged_attitude() {
    let dt = 1e-4;
    let trace = fine_trace(&build_case1(), dt, 0.2);
    for w in trace.windows(2) {
        let mid = 0.5 * (w[0].omega + w[1].omega);
        let predicted = w[0].r * exp_so3(&(dt * mid)).matrix();
        assert!((predicted - w[1].r).norm() < 1e-6, "t = {}", w[1].t);
    }
}
