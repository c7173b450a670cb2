//! Runtime checks of the closed-loop stability analysis.
//!
//! The monitor evaluates the Lyapunov candidates along a logged trace, looks
//! for a gain certificate `(c1, c2)`, tests the attitude region of
//! attraction at each segment start and fits an exponential envelope to the
//! attitude error. Failed checks become report entries; they never stop a
//! simulation.

use nalgebra::Matrix2;
use serde::Serialize;

use crate::control::{AttitudeCommand, Gains};
use crate::dynamics::{QuadParams, VehicleState};
use crate::error::{Error, Result};
use crate::mission::{evaluate_command, CommandSample, FlightSegment, Mission, ModeTag};
use crate::sim::{Abort, RunStats, TraceRecord};
use crate::so3::{angular_velocity_error, e3, psi, RotationMatrix};

/// Grid resolution per gain constant in [`search_certificate`].
pub const CERTIFICATE_GRID: usize = 100;
/// Decades spanned below each gain bound by the search grid.
const GRID_DECADES: f64 = 4.0;
/// Relative tolerance for monotonicity checks.
pub const MONOTONE_JITTER: f64 = 1e-9;
/// Relative slack allowed on the fitted envelope.
pub const ENVELOPE_SLACK: f64 = 1e-6;
/// Samples of Ψ at or below this are treated as converged and excluded from
/// the envelope fit.
pub const PSI_FLOOR: f64 = 1e-12;

/// Row-major 2×2 matrix as stored in reports.
pub type Rows2 = [[f64; 2]; 2];

fn rows(m: &Matrix2<f64>) -> Rows2 {
    [[m[(0, 0)], m[(0, 1)]], [m[(1, 0)], m[(1, 1)]]]
}

/// Eigenvalues `(λ_min, λ_max)` of a symmetric 2×2 matrix.
///
/// Only the upper triangle is read.
pub fn sym2_eigenvalues(m: &Matrix2<f64>) -> (f64, f64) {
    let (a, b, c) = (m[(0, 0)], m[(0, 1)], m[(1, 1)]);
    let mean = 0.5 * (a + c);
    let radius = (0.5 * (a - c)).hypot(b);
    // Avoid cancellation in the smaller root.
    let big = if mean >= 0.0 {
        mean + radius
    } else {
        mean - radius
    };
    let det = a * c - b * b;
    let small = if big != 0.0 { det / big } else { 0.0 };
    if big >= small {
        (small, big)
    } else {
        (big, small)
    }
}

pub fn sym2_min_eigenvalue(m: &Matrix2<f64>) -> f64 {
    sym2_eigenvalues(m).0
}

pub fn sym2_max_eigenvalue(m: &Matrix2<f64>) -> f64 {
    sym2_eigenvalues(m).1
}

fn is_positive_definite(m: &Matrix2<f64>) -> bool {
    sym2_min_eigenvalue(m) > 0.0
}

/// Outcome of the attitude region-of-attraction test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RoaCheck {
    pub holds: bool,
    pub psi0: f64,
    /// `2 - Ψ(0)`.
    pub psi_margin: f64,
    /// `(2/λ_M(J)) k_R (2 - Ψ(0)) - |e_Ω(0)|²`.
    pub omega_margin: f64,
}

pub fn check_attitude_roa(
    s0: &VehicleState,
    cmd0: &AttitudeCommand,
    gains: &Gains,
    p: &QuadParams,
) -> RoaCheck {
    let psi0 = psi(&s0.r, &cmd0.rd);
    let e_omega = angular_velocity_error(&s0.omega, &s0.r, &cmd0.rd, &cmd0.omega_d);
    let (_, lambda_max) = p.inertia_eigen_range();
    let psi_margin = 2.0 - psi0;
    let omega_margin = 2.0 / lambda_max * gains.kr * psi_margin - e_omega.norm_squared();
    RoaCheck {
        holds: psi_margin > 0.0 && omega_margin > 0.0,
        psi0,
        psi_margin,
        omega_margin,
    }
}

/// Constants and matrices of the complete-system Lyapunov analysis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GainCertificate {
    pub c1: f64,
    pub c2: f64,
    pub c1_bound: f64,
    pub c2_bound: f64,
    pub psi1: f64,
    pub alpha: f64,
    pub e_x_max: f64,
    pub b: f64,
    pub w1: Rows2,
    pub w12: Rows2,
    pub w2: Rows2,
    pub m11: Rows2,
    pub m12: Rows2,
    pub m21: Rows2,
    /// Evaluated with `ψ₂ = psi1`, which makes it coincide with `m22prime`.
    pub m22: Rows2,
    pub m22prime: Rows2,
    /// `λ_m(W2) - 4|W12|²/λ_m(W1)` at the chosen pair.
    pub objective: f64,
    pub feasible: bool,
}

impl GainCertificate {
    fn mat(r: &Rows2) -> Matrix2<f64> {
        Matrix2::new(r[0][0], r[0][1], r[1][0], r[1][1])
    }

    pub fn w1(&self) -> Matrix2<f64> {
        Self::mat(&self.w1)
    }
    pub fn w12(&self) -> Matrix2<f64> {
        Self::mat(&self.w12)
    }
    pub fn w2(&self) -> Matrix2<f64> {
        Self::mat(&self.w2)
    }
    pub fn m11(&self) -> Matrix2<f64> {
        Self::mat(&self.m11)
    }
    pub fn m12(&self) -> Matrix2<f64> {
        Self::mat(&self.m12)
    }
    pub fn m21(&self) -> Matrix2<f64> {
        Self::mat(&self.m21)
    }
    pub fn m22prime(&self) -> Matrix2<f64> {
        Self::mat(&self.m22prime)
    }
}

/// Upper bound on `c1` for the translational matrices to stay definite.
pub fn c1_bound(gains: &Gains, p: &QuadParams, alpha: f64) -> f64 {
    let (kx, kv, m) = (gains.kx, gains.kv, p.m);
    let a = kv * (1.0 - alpha);
    let b = 4.0 * m * kx * kv * (1.0 - alpha).powi(2)
        / (kv * kv * (1.0 + alpha).powi(2) + 4.0 * m * kx * (1.0 - alpha));
    a.min(b).min((kx * m).sqrt())
}

/// Upper bound on `c2` for the attitude matrices to stay definite.
pub fn c2_bound(gains: &Gains, p: &QuadParams) -> f64 {
    let (lm, lmax) = p.inertia_eigen_range();
    let (kr, kw) = (gains.kr, gains.komega);
    let b = 4.0 * kw * kr * lm * lm / (kw * kw * lmax + 4.0 * kr * lm * lm);
    kw.min(b).min((kr * lm).sqrt())
}

struct CertMatrices {
    w1: Matrix2<f64>,
    w12: Matrix2<f64>,
    w2: Matrix2<f64>,
}

fn cert_matrices(
    c1: f64,
    c2: f64,
    gains: &Gains,
    p: &QuadParams,
    alpha: f64,
    e_x_max: f64,
    b: f64,
) -> CertMatrices {
    let (kx, kv, kr, kw, m) = (gains.kx, gains.kv, gains.kr, gains.komega, p.m);
    let (lm, lmax) = p.inertia_eigen_range();
    let w1_off = -c1 * kv / (2.0 * m) * (1.0 + alpha);
    let w2_off = -c2 * kw / (2.0 * lm);
    CertMatrices {
        w1: Matrix2::new(
            c1 * kx / m * (1.0 - alpha),
            w1_off,
            w1_off,
            kv * (1.0 - alpha) - c1,
        ),
        w12: Matrix2::new(c1 / m * b, 0.0, b + kx * e_x_max, 0.0),
        w2: Matrix2::new(c2 * kr / lmax, w2_off, w2_off, kw - c2),
    }
}

/// Spectral norm of a matrix whose second column vanishes.
fn w12_norm(w12: &Matrix2<f64>) -> f64 {
    w12[(0, 0)].hypot(w12[(1, 0)])
}

/// Grid search for `(c1, c2)` satisfying the complete-system gain condition.
///
/// Both constants range over a logarithmic grid strictly below their bounds;
/// the pair maximizing `λ_m(W2) - 4|W12|²/λ_m(W1)` is returned whether or
/// not the condition is met.
pub fn search_certificate(
    gains: &Gains,
    p: &QuadParams,
    psi1: f64,
    e_x_max: f64,
    b: f64,
) -> Result<GainCertificate> {
    if !(psi1 > 0.0 && psi1 < 1.0) {
        return Err(Error::InfeasibleInputs(format!(
            "psi1 = {psi1} is outside (0, 1)"
        )));
    }
    if !(e_x_max > 0.0 && e_x_max.is_finite()) {
        return Err(Error::InfeasibleInputs(format!(
            "e_x_max = {e_x_max} must be positive"
        )));
    }
    if !(b >= 0.0 && b.is_finite()) {
        return Err(Error::InfeasibleInputs(format!(
            "B = {b} must be non-negative"
        )));
    }
    gains.validate()?;
    p.validate()?;

    let alpha = (psi1 * (2.0 - psi1)).sqrt();
    let c1_max = c1_bound(gains, p, alpha);
    let c2_max = c2_bound(gains, p);
    let grid = |bound: f64, i: usize| {
        let frac = (i as f64 + 0.5) / CERTIFICATE_GRID as f64;
        bound * 10f64.powf(-GRID_DECADES * (1.0 - frac))
    };

    let mut best: Option<(f64, f64, f64)> = None;
    for i in 0..CERTIFICATE_GRID {
        let c1 = grid(c1_max, i);
        for j in 0..CERTIFICATE_GRID {
            let c2 = grid(c2_max, j);
            let mats = cert_matrices(c1, c2, gains, p, alpha, e_x_max, b);
            let l1 = sym2_min_eigenvalue(&mats.w1);
            if !(l1 > 0.0) {
                continue;
            }
            let n12 = w12_norm(&mats.w12);
            let objective = sym2_min_eigenvalue(&mats.w2) - 4.0 * n12 * n12 / l1;
            if best.is_none_or(|(_, _, o)| objective > o) {
                best = Some((c1, c2, objective));
            }
        }
    }
    let (c1, c2, objective) = best.ok_or_else(|| {
        Error::InfeasibleInputs("no grid point keeps W1 positive definite".into())
    })?;

    let (lm, lmax) = p.inertia_eigen_range();
    let (kx, kr, m) = (gains.kx, gains.kr, p.m);
    let mats = cert_matrices(c1, c2, gains, p, alpha, e_x_max, b);
    let m11 = 0.5 * Matrix2::new(kx, -c1, -c1, m);
    let m12 = 0.5 * Matrix2::new(kx, c1, c1, m);
    let m21 = 0.5 * Matrix2::new(kr, -c2, -c2, lm);
    let m22prime = 0.5 * Matrix2::new(2.0 * kr / (2.0 - psi1), c2, c2, lmax);
    let feasible = objective > 0.0
        && [&mats.w1, &mats.w2, &m11, &m12, &m21, &m22prime]
            .iter()
            .all(|x| is_positive_definite(x));

    Ok(GainCertificate {
        c1,
        c2,
        c1_bound: c1_max,
        c2_bound: c2_max,
        psi1,
        alpha,
        e_x_max,
        b,
        w1: rows(&mats.w1),
        w12: rows(&mats.w12),
        w2: rows(&mats.w2),
        m11: rows(&m11),
        m12: rows(&m12),
        m21: rows(&m21),
        m22: rows(&m22prime),
        m22prime: rows(&m22prime),
        objective,
        feasible,
    })
}

/// Least-squares exponential envelope `Ψ(t) ≤ α e^{-β (t - t0)}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnvelopeFit {
    /// Window start; the envelope is measured from here.
    pub t0: f64,
    /// Smallest `α` making the envelope hold on every sample at the fitted rate.
    pub alpha: f64,
    pub beta: f64,
    /// Intercept of the least-squares line, `exp(ln α̂)`.
    pub alpha_fit: f64,
    pub samples: usize,
    pub decaying: bool,
}

impl EnvelopeFit {
    pub fn bound(&self, t: f64) -> f64 {
        (self.alpha * (-self.beta * (t - self.t0)).exp()).min(2.0)
    }

    pub fn holds(&self, t: &[f64], psi: &[f64]) -> bool {
        t.iter()
            .zip(psi)
            .all(|(&ti, &pi)| pi <= self.bound(ti) * (1.0 + ENVELOPE_SLACK))
    }
}

/// Fits `ln Ψ = ln α̂ - β (t - t0)` by least squares over the given window.
pub fn fit_exponential_envelope(t: &[f64], psi_series: &[f64]) -> Result<EnvelopeFit> {
    if t.len() != psi_series.len() {
        return Err(Error::FitFailed(
            "time and value series differ in length".into(),
        ));
    }
    if t.len() < 3 {
        return Err(Error::FitFailed(format!("{} samples are too few", t.len())));
    }
    if let Some(bad) = psi_series.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
        return Err(Error::FitFailed(format!(
            "series contains non-positive value {bad}"
        )));
    }
    let t0 = t[0];
    let n = t.len() as f64;
    let tau: Vec<f64> = t.iter().map(|ti| ti - t0).collect();
    let logs: Vec<f64> = psi_series.iter().map(|v| v.ln()).collect();
    let mt = tau.iter().sum::<f64>() / n;
    let ml = logs.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (x, y) in tau.iter().zip(&logs) {
        sxy += (x - mt) * (y - ml);
        sxx += (x - mt) * (x - mt);
    }
    if !(sxx > 0.0) {
        return Err(Error::FitFailed("sample times are not distinct".into()));
    }
    let slope = sxy / sxx;
    let beta = -slope;
    let alpha_fit = (ml - slope * mt).exp();
    let alpha = tau
        .iter()
        .zip(psi_series)
        .map(|(x, v)| v * (beta * x).exp())
        .fold(0.0, f64::max);
    Ok(EnvelopeFit {
        t0,
        alpha,
        beta,
        alpha_fit,
        samples: t.len(),
        decaying: beta > 0.0,
    })
}

/// A failed check, stamped with the time it was detected.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub t: f64,
    pub kind: String,
    pub detail: String,
}

impl Violation {
    fn new(t: f64, kind: &str, detail: String) -> Self {
        Violation {
            t,
            kind: kind.to_string(),
            detail,
        }
    }
}

/// Lyapunov values along one segment; one entry per trace record.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct LyapunovSeries {
    pub t: Vec<f64>,
    pub psi: Vec<f64>,
    pub v2prime: Vec<f64>,
    /// Complete-system candidate; `None` before `t*` or without a certificate.
    pub v: Vec<Option<f64>>,
}

/// `(|A V(0)|² bound, ½ k_x e_x_max²)` region test at `t*`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegionCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SegmentReport {
    pub index: usize,
    pub mode: String,
    pub t_start: f64,
    pub t_end: f64,
    pub records: usize,
    pub roa: Option<RoaCheck>,
    pub psi0: Option<f64>,
    pub psi1: Option<f64>,
    pub psi2: Option<f64>,
    /// First logged time with `Ψ < psi1` (translational modes).
    pub t_star: Option<f64>,
    pub certificate: Option<GainCertificate>,
    pub region: Option<RegionCheck>,
    pub series: LyapunovSeries,
    pub envelope: Option<EnvelopeFit>,
    pub violations: Vec<Violation>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonitorReport {
    pub scenario: String,
    pub completed: bool,
    pub abort_time: Option<f64>,
    pub abort_reason: Option<String>,
    pub records: usize,
    pub negative_rotor_steps: usize,
    pub heading_fallbacks: usize,
    pub reorthonormalizations: usize,
    pub max_orthogonality_error: f64,
    pub segments: Vec<SegmentReport>,
    pub violations: Vec<Violation>,
}

impl MonitorReport {
    /// Every violation, run-level first.
    pub fn violations(&self) -> Vec<&Violation> {
        self.violations
            .iter()
            .chain(self.segments.iter().flat_map(|s| s.violations.iter()))
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Inputs to [`lyapunov_series`] besides the records.
#[derive(Debug, Clone, Copy)]
pub struct SegmentContext<'a> {
    pub mode: ModeTag,
    pub gains: &'a Gains,
    pub params: &'a QuadParams,
    /// Overrides the default `psi1` rule.
    pub psi1: Option<f64>,
}

/// Default `psi1` for an initial attitude error `psi0`.
pub fn default_psi1(psi0: f64) -> f64 {
    if psi0 >= 1.0 {
        0.9
    } else {
        let candidate = (psi0 + 0.05).max(0.9);
        if candidate < 1.0 {
            candidate
        } else {
            0.5 * (1.0 + psi0)
        }
    }
}

/// `½ e_Ωᵀ J e_Ω + k_R Ψ`.
pub fn v2prime(rec: &TraceRecord, gains: &Gains, p: &QuadParams) -> f64 {
    0.5 * rec.e_omega.dot(&(p.j * rec.e_omega)) + gains.kr * rec.psi
}

/// Complete-system candidate `V₁ + V₂` for constants `(c1, c2)`.
pub fn v_total(rec: &TraceRecord, c1: f64, c2: f64, gains: &Gains, p: &QuadParams) -> f64 {
    let v1 = 0.5 * gains.kx * rec.e_x.norm_squared()
        + 0.5 * p.m * rec.e_v.norm_squared()
        + c1 * rec.e_x.dot(&rec.e_v);
    let v2 = v2prime(rec, gains, p) + c2 * rec.e_r.dot(&rec.e_omega);
    v1 + v2
}

fn z_vectors(rec: &TraceRecord) -> (nalgebra::Vector2<f64>, nalgebra::Vector2<f64>) {
    (
        nalgebra::Vector2::new(rec.e_x.norm(), rec.e_v.norm()),
        nalgebra::Vector2::new(rec.e_r.norm(), rec.e_omega.norm()),
    )
}

fn check_nonincreasing(t: &[f64], values: &[f64], kind: &str, out: &mut Vec<Violation>) {
    let scale = values.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let jitter = MONOTONE_JITTER * scale;
    for k in 1..values.len() {
        if values[k] > values[k - 1] + jitter {
            out.push(Violation::new(
                t[k],
                kind,
                format!("increased from {:e} to {:e}", values[k - 1], values[k]),
            ));
        }
    }
}

/// Evaluates the Lyapunov checks over the records of one segment.
///
/// `certificate` is used after `t*` in translational modes.
pub fn lyapunov_series(
    records: &[TraceRecord],
    certificate: Option<&GainCertificate>,
    ctx: &SegmentContext<'_>,
) -> SegmentReport {
    let (g, p) = (ctx.gains, ctx.params);
    let mut report = SegmentReport {
        index: records.first().map_or(0, |r| r.segment),
        mode: ctx.mode.name().to_string(),
        t_start: records.first().map_or(0.0, |r| r.t),
        t_end: records.last().map_or(0.0, |r| r.t),
        records: records.len(),
        roa: None,
        psi0: None,
        psi1: None,
        psi2: None,
        t_star: None,
        certificate: certificate.copied(),
        region: None,
        series: LyapunovSeries::default(),
        envelope: None,
        violations: Vec::new(),
        notes: Vec::new(),
    };
    let Some(first) = records.first() else {
        return report;
    };

    let t: Vec<f64> = records.iter().map(|r| r.t).collect();
    let psis: Vec<f64> = records.iter().map(|r| r.psi).collect();
    let v2p: Vec<f64> = records.iter().map(|r| v2prime(r, g, p)).collect();

    let psi0 = first.psi;
    report.psi0 = Some(psi0);
    let mut psi2 = v2p[0] / g.kr;
    if psi2 > 2.0 {
        report
            .notes
            .push(format!("psi2 = {psi2:.6} exceeds 2; clamped to 2"));
        psi2 = 2.0;
    }
    report.psi2 = Some(psi2);

    // Attitude mode: the whole segment is the attitude analysis window.
    // Translational modes: the window ends at t*, where Ψ first drops below psi1.
    let star_idx = match ctx.mode {
        ModeTag::Attitude => None,
        _ => {
            let psi1 = ctx.psi1.unwrap_or_else(|| default_psi1(psi0));
            report.psi1 = Some(psi1);
            let idx = psis.iter().position(|&v| v < psi1);
            if idx.is_none() {
                report
                    .notes
                    .push(format!("attitude error never dropped below psi1 = {psi1}"));
            }
            idx
        }
    };
    report.t_star = star_idx.map(|i| t[i]);
    let attitude_end = match ctx.mode {
        ModeTag::Attitude => records.len(),
        _ => star_idx.map_or(records.len(), |i| i + 1),
    };

    check_nonincreasing(
        &t[..attitude_end],
        &v2p[..attitude_end],
        "v2prime_increase",
        &mut report.violations,
    );
    let v2p0 = v2p[0];
    let jitter = MONOTONE_JITTER * v2p[..attitude_end].iter().fold(0.0_f64, |a, v| a.max(*v));
    for k in 0..attitude_end {
        let lower = g.kr * psis[k];
        if lower > v2p[k] + jitter || v2p[k] > v2p0 + jitter {
            report.violations.push(Violation::new(
                t[k],
                "v2prime_bounds",
                format!("k_R Psi = {lower:e}, V2' = {:e}, V2'(0) = {v2p0:e}", v2p[k]),
            ));
        }
    }

    // Boundedness of the translational errors before the certificate applies.
    if ctx.mode != ModeTag::Attitude {
        for r in &records[..attitude_end] {
            if !(r.e_x.iter().chain(r.e_v.iter()).all(|c| c.is_finite())) {
                report.violations.push(Violation::new(
                    r.t,
                    "unbounded_translation",
                    "non-finite e_x or e_v".into(),
                ));
            }
        }
    }

    let mut v_series = vec![None; records.len()];
    if let (Some(i0), Some(cert)) = (star_idx, certificate) {
        let values: Vec<f64> = records[i0..]
            .iter()
            .map(|r| v_total(r, cert.c1, cert.c2, g, p))
            .collect();
        for (slot, v) in v_series[i0..].iter_mut().zip(&values) {
            *slot = Some(*v);
        }
        let mut increases = Vec::new();
        check_nonincreasing(&t[i0..], &values, "v_increase", &mut increases);
        if cert.feasible {
            report.violations.extend(increases);
            let (m11, m12, m21, m22p) = (cert.m11(), cert.m12(), cert.m21(), cert.m22prime());
            let scale = values.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
            for (r, v) in records[i0..].iter().zip(&values) {
                if r.psi >= cert.psi1 {
                    continue;
                }
                let (z1, z2) = z_vectors(r);
                let lo = z1.dot(&(m11 * z1)) + z2.dot(&(m21 * z2));
                let hi = z1.dot(&(m12 * z1)) + z2.dot(&(m22p * z2));
                let tol = MONOTONE_JITTER * scale.max(1.0);
                if lo > v + tol || *v > hi + tol {
                    report.violations.push(Violation::new(
                        r.t,
                        "v_sandwich",
                        format!("{lo:e} <= {v:e} <= {hi:e} fails"),
                    ));
                }
            }
        } else if !increases.is_empty() {
            report.notes.push(format!(
                "certificate infeasible; V increased at {} samples",
                increases.len()
            ));
        }

        let start = &records[i0];
        let (z1, z2) = z_vectors(start);
        let lhs = sym2_max_eigenvalue(&cert.m12()) * z1.norm_squared()
            + sym2_max_eigenvalue(&cert.m22prime()) * z2.norm_squared();
        let rhs = 0.5 * g.kx * cert.e_x_max * cert.e_x_max;
        report.region = Some(RegionCheck {
            lhs,
            rhs,
            holds: lhs < rhs,
        });
    }

    // Envelope over the converging window, stopping at the numerical floor.
    let fit_start = star_idx.unwrap_or(0);
    if ctx.mode == ModeTag::Attitude || star_idx.is_some() {
        let fit_end = psis[fit_start..]
            .iter()
            .position(|&v| v <= PSI_FLOOR)
            .map_or(psis.len(), |k| fit_start + k);
        match fit_exponential_envelope(&t[fit_start..fit_end], &psis[fit_start..fit_end]) {
            Ok(fit) => {
                if !fit.holds(&t[fit_start..fit_end], &psis[fit_start..fit_end]) {
                    report.violations.push(Violation::new(
                        fit.t0,
                        "envelope",
                        format!(
                            "alpha = {:e}, beta = {:e} does not bound Psi",
                            fit.alpha, fit.beta
                        ),
                    ));
                }
                if !fit.decaying {
                    report.violations.push(Violation::new(
                        fit.t0,
                        "envelope_not_decaying",
                        format!("fitted beta = {:e}", fit.beta),
                    ));
                }
                report.envelope = Some(fit);
            }
            Err(e) => report.notes.push(format!("envelope not fitted: {e}")),
        }
    }

    report.series = LyapunovSeries {
        t,
        psi: psis,
        v2prime: v2p,
        v: v_series,
    };
    report
}

/// `B` bound: the largest `|-m g e3 + m ẍ_d|` sampled at 1 kHz, plus 1 %.
pub fn sample_thrust_bound(seg: &FlightSegment, p: &QuadParams) -> Result<f64> {
    let n = ((seg.t_end - seg.t_start) * 1000.0).ceil().max(1.0) as usize;
    let mut b = 0.0_f64;
    for k in 0..=n {
        let t = (seg.t_start + k as f64 * 1e-3).min(seg.t_end);
        let acc = match evaluate_command(seg, t)? {
            CommandSample::Position(c) => c.xd[2],
            CommandSample::Velocity(c) => c.vd[1],
            CommandSample::Attitude { .. } => nalgebra::Vector3::zeros(),
        };
        b = b.max((-p.m * p.g * e3() + p.m * acc).norm());
    }
    Ok(1.01 * b)
}

fn segment_report(
    records: &[TraceRecord],
    seg: &FlightSegment,
    mission: &Mission,
) -> SegmentReport {
    let (g, p) = (&mission.gains, &mission.params);
    let mode = seg.mode();
    let ctx = SegmentContext {
        mode,
        gains: g,
        params: p,
        psi1: None,
    };
    let first = &records[0];
    let mut cert_note = None;
    let certificate = if mode == ModeTag::Attitude {
        None
    } else {
        let psi1 = default_psi1(first.psi);
        let e_x_max = 2.0 * first.e_x.norm() + 1.0;
        let cert =
            sample_thrust_bound(seg, p).and_then(|b| search_certificate(g, p, psi1, e_x_max, b));
        match cert {
            Ok(c) => Some(c),
            Err(e) => {
                cert_note = Some(format!("no certificate: {e}"));
                None
            }
        }
    };
    let mut report = lyapunov_series(records, certificate.as_ref(), &ctx);
    report.index = first.segment;
    report.t_start = seg.t_start;
    report.t_end = seg.t_end;
    report.notes.extend(cert_note);
    if let Some(c) = &certificate {
        if !c.feasible {
            report.notes.push(format!(
                "gain condition not met: best objective {:e} at c1 = {:e}, c2 = {:e}",
                c.objective, c.c1, c.c2
            ));
        }
    }

    let s0 = VehicleState {
        x: first.x,
        v: first.v,
        r: RotationMatrix::from_matrix_unchecked(first.r),
        omega: first.omega,
    };
    let cmd0 = AttitudeCommand {
        rd: RotationMatrix::from_matrix_unchecked(first.r_ref),
        omega_d: first.omega_ref,
        domega_d: first.domega_ref,
    };
    let roa = check_attitude_roa(&s0, &cmd0, g, p);
    if !roa.holds {
        report.violations.push(Violation::new(
            first.t,
            "roa",
            format!(
                "psi margin {:e}, angular velocity margin {:e}",
                roa.psi_margin, roa.omega_margin
            ),
        ));
    }
    report.roa = Some(roa);
    report
}

/// Builds the report for a simulated trace.
pub fn monitor_trace(
    trace: &[TraceRecord],
    mission: &Mission,
    stats: &RunStats,
    abort: Option<&Abort>,
) -> MonitorReport {
    let mut segments = Vec::new();
    let mut start = 0;
    while start < trace.len() {
        let idx = trace[start].segment;
        let len = trace[start..]
            .iter()
            .take_while(|r| r.segment == idx)
            .count();
        segments.push(segment_report(
            &trace[start..start + len],
            &mission.segments[idx],
            mission,
        ));
        start += len;
    }
    let mut violations = Vec::new();
    if let Some(a) = abort {
        violations.push(Violation::new(a.t, "abort", a.reason.clone()));
    }
    MonitorReport {
        scenario: mission.name.clone(),
        completed: abort.is_none(),
        abort_time: abort.map(|a| a.t),
        abort_reason: abort.map(|a| a.reason.clone()),
        records: trace.len(),
        negative_rotor_steps: stats.negative_rotor_steps,
        heading_fallbacks: stats.heading_fallbacks,
        reorthonormalizations: stats.reorthonormalizations,
        max_orthogonality_error: stats.max_orthogonality_error,
        segments,
        violations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mission::build_case1;
    use crate::so3::{exp_so3, Vec3};
    use approx::assert_relative_eq;

    /// Roots of λ² - tr λ + det = 0 by bisection on the characteristic polynomial.
    fn eigen_oracle(m: &Matrix2<f64>) -> (f64, f64) {
        let tr = m[(0, 0)] + m[(1, 1)];
        let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
        let poly = |l: f64| l * l - tr * l + det;
        let half = 0.5 * tr;
        let bound = m.iter().map(|v| v.abs()).sum::<f64>() + 1.0;
        let root = |mut lo: f64, mut hi: f64| {
            let increasing = poly(hi) > poly(lo);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if (poly(mid) > 0.0) == increasing {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            0.5 * (lo + hi)
        };
        (root(-bound, half), root(half, bound))
    }

    #[test]
    fn closed_form_eigenvalues_match_characteristic_roots() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let a = rng.random_range(-10.0..10.0);
            let b = rng.random_range(-10.0..10.0);
            let c = rng.random_range(-10.0..10.0);
            let m = Matrix2::new(a, b, b, c);
            let (lo, hi) = sym2_eigenvalues(&m);
            let (olo, ohi) = eigen_oracle(&m);
            assert!(
                (lo - olo).abs() <= 1e-12 * (1.0 + olo.abs()),
                "{m} {lo} {olo}"
            );
            assert!(
                (hi - ohi).abs() <= 1e-12 * (1.0 + ohi.abs()),
                "{m} {hi} {ohi}"
            );
        }
        assert_eq!(
            sym2_eigenvalues(&Matrix2::new(2.0, 0.0, 0.0, 3.0)),
            (2.0, 3.0)
        );
        assert_eq!(sym2_eigenvalues(&Matrix2::zeros()), (0.0, 0.0));
    }

    #[test]
    fn roa_at_rest_on_target_has_full_margin() {
        let p = QuadParams::reference();
        let g = Gains::reference(p.m);
        let s = VehicleState::at_rest(RotationMatrix::identity());
        let cmd = AttitudeCommand {
            rd: RotationMatrix::identity(),
            omega_d: Vec3::zeros(),
            domega_d: Vec3::zeros(),
        };
        let roa = check_attitude_roa(&s, &cmd, &g, &p);
        assert!(roa.holds);
        assert_eq!(roa.psi_margin, 2.0);
        assert_relative_eq!(roa.omega_margin, 4.0 * g.kr / 0.1377, epsilon = 1e-12);
    }

    #[test]
    fn roa_fails_at_antipodal_attitude() {
        let p = QuadParams::reference();
        let g = Gains::reference(p.m);
        let s = VehicleState::at_rest(exp_so3(&Vec3::new(std::f64::consts::PI, 0.0, 0.0)));
        let cmd = AttitudeCommand {
            rd: RotationMatrix::identity(),
            omega_d: Vec3::zeros(),
            domega_d: Vec3::zeros(),
        };
        let roa = check_attitude_roa(&s, &cmd, &g, &p);
        assert!(!roa.holds);
        assert!(roa.psi_margin.abs() < 1e-12);
    }

    #[test]
    fn case1_start_is_inside_roa() {
        let m = build_case1();
        let cmd = AttitudeCommand {
            rd: RotationMatrix::identity(),
            omega_d: Vec3::zeros(),
            domega_d: Vec3::zeros(),
        };
        let roa = check_attitude_roa(&m.initial, &cmd, &m.gains, &m.params);
        assert!(roa.holds);
        assert!((roa.psi0 - 1.995).abs() <= 0.005);
    }

    #[test]
    fn certificate_respects_bounds() {
        let p = QuadParams::reference();
        let g = Gains::reference(p.m);
        let cert = search_certificate(&g, &p, 0.9, 1.0, 43.0).unwrap();
        let (lm, lmax) = p.inertia_eigen_range();
        let c2_max = g
            .komega
            .min(4.0 * g.komega * g.kr * lm * lm / (g.komega.powi(2) * lmax + 4.0 * g.kr * lm * lm))
            .min((g.kr * lm).sqrt());
        assert!(cert.c2 > 0.0 && cert.c2 < c2_max);
        assert!(cert.c1 > 0.0 && cert.c1 < cert.c1_bound);
        assert_relative_eq!(cert.alpha, (0.9f64 * 1.1).sqrt(), epsilon = 1e-15);
        assert!(sym2_min_eigenvalue(&cert.w1()) > 0.0);
        assert!(sym2_min_eigenvalue(&cert.w2()) > 0.0);
        let again = search_certificate(&g, &p, 0.9, 1.0, 43.0).unwrap();
        assert_eq!(cert, again);
    }

    #[test]
    fn vanishing_attitude_gain_is_infeasible() {
        let p = QuadParams::reference();
        let mut g = Gains::reference(p.m);
        g.kr = 1e-9;
        let cert = search_certificate(&g, &p, 0.5, 1.0, 43.0).unwrap();
        assert!(!cert.feasible);
    }

    #[test]
    fn certificate_rejects_bad_inputs() {
        let p = QuadParams::reference();
        let g = Gains::reference(p.m);
        for (psi1, ex) in [(0.0, 1.0), (1.0, 1.0), (-0.5, 1.0), (0.5, 0.0), (0.5, -1.0)] {
            assert!(matches!(
                search_certificate(&g, &p, psi1, ex, 43.0),
                Err(Error::InfeasibleInputs(_))
            ));
        }
    }

    #[test]
    fn envelope_recovers_exact_exponential() {
        let (alpha, beta) = (1.7, 2.3);
        let t: Vec<f64> = (0..200).map(|k| 0.01 * k as f64).collect();
        let y: Vec<f64> = t.iter().map(|ti| alpha * (-beta * ti).exp()).collect();
        let fit = fit_exponential_envelope(&t, &y).unwrap();
        assert_relative_eq!(fit.alpha, alpha, epsilon = 1e-6);
        assert_relative_eq!(fit.beta, beta, epsilon = 1e-6);
        assert!(fit.decaying);
        assert!(fit.holds(&t, &y));
    }

    #[test]
    fn envelope_of_constant_is_not_decaying() {
        let t: Vec<f64> = (0..10).map(|k| k as f64).collect();
        let fit = fit_exponential_envelope(&t, &[2.0; 10]).unwrap();
        assert!(fit.beta.abs() < 1e-12);
        assert!(!fit.decaying);
    }

    #[test]
    fn envelope_rejects_bad_series() {
        assert!(fit_exponential_envelope(&[0.0, 1.0], &[1.0, 0.5]).is_err());
        assert!(fit_exponential_envelope(&[0.0, 1.0, 2.0], &[1.0, 0.0, 0.5]).is_err());
        assert!(fit_exponential_envelope(&[0.0, 1.0, 2.0], &[1.0, 0.5]).is_err());
    }

    #[test]
    fn default_psi1_rule() {
        assert_eq!(default_psi1(1.995), 0.9);
        assert_eq!(default_psi1(0.2), 0.9);
        assert_relative_eq!(default_psi1(0.88), 0.93, epsilon = 1e-15);
        let p = default_psi1(0.99);
        assert!(p > 0.99 && p < 1.0);
    }
}
