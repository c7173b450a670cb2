//! Scenario files and the built-in scenario registry.
//!
//! A scenario file is TOML. It either names a built-in scenario and
//! optionally overrides its vehicle, gains and simulation settings:
//!
//! ```toml
//! scenario = "case1"
//! output = "runs/case1"
//!
//! [sim]
//! dt = 5e-4
//! ```
//!
//! or describes the mission inline:
//!
//! ```toml
//! name = "climb"
//!
//! [initial]
//! x = [0.0, 0.0, 0.0]
//! r = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
//!
//! [[segments]]
//! mode = "position"
//! t_start = 0.0
//! t_end = 5.0
//! xd = [0.0, 0.0, { poly = [0.0, -0.2] }]
//! b1d = [1.0, 0.0, 0.0]
//!
//! [[segments]]
//! mode = "attitude"
//! t_start = 5.0
//! t_end = 6.0
//! rate = [6.283185307179586, 0.0, 0.0]
//! thrust = { hold = [0.0, 0.0, -1.0] }
//! ```
//!
//! A signal component is either a number or a table
//! `{ poly = [c0, c1, ...], sines = [{ amplitude, omega, phase }] }`
//! meaning `Σ c_k t^k + Σ a sin(ω t + φ)` in absolute time. Attitude
//! segments follow `R_d(t) = r0 exp((t - t0) rate^)`; `r0` defaults to the
//! identity and `t0` to `t_start`. Their thrust is either
//! `{ hold = [x, y, z] }` or `{ altitude = <signal> }`.
//!
//! Omitted `[params]` entries take the reference vehicle's values, omitted
//! `[gains]` entries the reference gains for the configured mass, and
//! omitted `[sim]` entries the [`SimConfig`] defaults with the mission's
//! full duration. Unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::control::Gains;
use crate::dynamics::{QuadParams, VehicleState};
use crate::error::{Error, Result};
use crate::mission::{
    build_case1, build_case2, AttitudeProfile, FlightSegment, Mission, SegmentCommand, Signal,
    Sine, ThrustPolicy, VectorSignal,
};
use crate::sim::SimConfig;
use crate::so3::{mat3_from_rows, Mat3, RotationMatrix, Vec3};

/// Names accepted by [`builtin_mission`].
pub const SCENARIOS: [&str; 2] = ["case1", "case2"];

pub fn builtin_mission(name: &str) -> Option<Mission> {
    match name {
        "case1" => Some(build_case1()),
        "case2" => Some(build_case2()),
        _ => None,
    }
}

/// One-line description of a built-in scenario.
pub fn describe(name: &str) -> Option<&'static str> {
    match name {
        "case1" => Some("hover recovery from an inverted start (10 s, position mode)"),
        "case2" => Some("velocity, flip, position, roll, position maneuver (12 s, five segments)"),
        _ => None,
    }
}

/// A fully validated scenario: what to fly, how to simulate it, where to write.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub mission: Mission,
    pub sim: SimConfig,
    pub output: Option<String>,
}

impl ScenarioConfig {
    pub fn builtin(name: &str) -> Result<Self> {
        let mission = builtin_mission(name).ok_or_else(|| Error::UnknownScenario(name.into()))?;
        let sim = SimConfig::for_mission(&mission);
        Ok(ScenarioConfig {
            mission,
            sim,
            output: None,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.mission.validate()?;
        self.sim.validate()?;
        let end = self.mission.duration();
        if self.sim.duration > end * (1.0 + 1e-12) {
            return Err(Error::Validation(format!(
                "duration {} exceeds the mission's last segment end {end}",
                self.sim.duration
            )));
        }
        Ok(())
    }

    /// Output prefix, defaulting to the mission name.
    pub fn output_prefix(&self) -> String {
        self.output
            .clone()
            .unwrap_or_else(|| self.mission.name.clone())
    }

    /// Inline TOML describing this scenario.
    pub fn to_toml(&self) -> String {
        toml::to_string(&RawConfig::from_scenario(self)).expect("config serializes")
    }
}

/// Resolves a registry name or a path to a scenario file.
pub fn load_scenario(name_or_path: &str) -> Result<ScenarioConfig> {
    if builtin_mission(name_or_path).is_some() {
        return ScenarioConfig::builtin(name_or_path);
    }
    let path = Path::new(name_or_path);
    if path.is_file() {
        return load_config_file(path);
    }
    Err(Error::UnknownScenario(name_or_path.into()))
}

pub fn load_config_file(path: &Path) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config(&text)
}

/// Parses and validates scenario text.
pub fn parse_config(text: &str) -> Result<ScenarioConfig> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| {
        let (line, column) = e
            .span()
            .map(|s| line_column(text, s.start))
            .unwrap_or((0, 0));
        Error::Parse {
            line,
            column,
            message: e.message().to_string(),
        }
    })?;
    let cfg = raw.into_scenario()?;
    cfg.validate()?;
    Ok(cfg)
}

/// 1-based line and column of a byte offset.
fn line_column(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

type Rows3 = [[f64; 3]; 3];

fn mat_rows(m: &Mat3) -> Rows3 {
    std::array::from_fn(|i| std::array::from_fn(|j| m[(i, j)]))
}

fn vec_arr(v: &Vec3) -> [f64; 3] {
    [v.x, v.y, v.z]
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    scenario: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    output: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    params: Option<RawParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gains: Option<RawGains>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sim: Option<RawSim>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    initial: Option<RawInitial>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    segments: Option<Vec<RawSegment>>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawParams {
    m: Option<f64>,
    j: Option<RawInertia>,
    d: Option<f64>,
    c_tau_f: Option<f64>,
    g: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum RawInertia {
    Diagonal([f64; 3]),
    Full(Rows3),
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGains {
    kx: Option<f64>,
    kv: Option<f64>,
    kr: Option<f64>,
    komega: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSim {
    dt: Option<f64>,
    duration: Option<f64>,
    ortho_tolerance: Option<f64>,
    log_decimation: Option<usize>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInitial {
    x: Option<[f64; 3]>,
    v: Option<[f64; 3]>,
    r: Option<Rows3>,
    omega: Option<[f64; 3]>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSine {
    amplitude: f64,
    omega: f64,
    #[serde(default)]
    phase: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum RawSignal {
    Constant(f64),
    Table(RawSignalTable),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSignalTable {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    poly: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    sines: Vec<RawSine>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
enum RawThrust {
    Hold([f64; 3]),
    Altitude(RawSignal),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
enum RawSegment {
    Attitude {
        t_start: f64,
        t_end: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        r0: Option<Rows3>,
        rate: [f64; 3],
        #[serde(default, skip_serializing_if = "Option::is_none")]
        t0: Option<f64>,
        thrust: RawThrust,
    },
    Position {
        t_start: f64,
        t_end: f64,
        xd: [RawSignal; 3],
        b1d: [RawSignal; 3],
    },
    Velocity {
        t_start: f64,
        t_end: f64,
        vd: [RawSignal; 3],
        b1d: [RawSignal; 3],
    },
}

impl From<RawSignal> for Signal {
    fn from(raw: RawSignal) -> Self {
        match raw {
            RawSignal::Constant(c) => Signal::constant(c),
            RawSignal::Table(t) => Signal {
                poly: t.poly,
                sines: t
                    .sines
                    .into_iter()
                    .map(|s| Sine {
                        amplitude: s.amplitude,
                        omega: s.omega,
                        phase: s.phase,
                    })
                    .collect(),
            },
        }
    }
}

impl From<&Signal> for RawSignal {
    fn from(s: &Signal) -> Self {
        if s.sines.is_empty() && s.poly.len() == 1 {
            return RawSignal::Constant(s.poly[0]);
        }
        RawSignal::Table(RawSignalTable {
            poly: s.poly.clone(),
            sines: s
                .sines
                .iter()
                .map(|x| RawSine {
                    amplitude: x.amplitude,
                    omega: x.omega,
                    phase: x.phase,
                })
                .collect(),
        })
    }
}

fn vector_signal(raw: [RawSignal; 3]) -> VectorSignal {
    VectorSignal(raw.map(Signal::from))
}

fn raw_vector_signal(v: &VectorSignal) -> [RawSignal; 3] {
    std::array::from_fn(|i| RawSignal::from(&v.0[i]))
}

fn rotation(rows: &Rows3, what: &str) -> Result<RotationMatrix> {
    RotationMatrix::new(mat3_from_rows(rows)).map_err(|e| Error::Validation(format!("{what}: {e}")))
}

impl RawSegment {
    fn into_segment(self) -> Result<FlightSegment> {
        Ok(match self {
            RawSegment::Attitude {
                t_start,
                t_end,
                r0,
                rate,
                t0,
                thrust,
            } => FlightSegment {
                t_start,
                t_end,
                command: SegmentCommand::Attitude {
                    profile: AttitudeProfile {
                        r0: match r0 {
                            Some(rows) => rotation(&rows, "segment r0")?,
                            None => RotationMatrix::identity(),
                        },
                        rate: Vec3::from(rate),
                        t0: t0.unwrap_or(t_start),
                    },
                    thrust: match thrust {
                        RawThrust::Hold(xc) => ThrustPolicy::PositionHold(Vec3::from(xc)),
                        RawThrust::Altitude(s) => ThrustPolicy::AltitudeTracking(s.into()),
                    },
                },
            },
            RawSegment::Position {
                t_start,
                t_end,
                xd,
                b1d,
            } => FlightSegment {
                t_start,
                t_end,
                command: SegmentCommand::Position {
                    xd: vector_signal(xd),
                    b1d: vector_signal(b1d),
                },
            },
            RawSegment::Velocity {
                t_start,
                t_end,
                vd,
                b1d,
            } => FlightSegment {
                t_start,
                t_end,
                command: SegmentCommand::Velocity {
                    vd: vector_signal(vd),
                    b1d: vector_signal(b1d),
                },
            },
        })
    }

    fn from_segment(seg: &FlightSegment) -> Self {
        let (t_start, t_end) = (seg.t_start, seg.t_end);
        match &seg.command {
            SegmentCommand::Attitude { profile, thrust } => RawSegment::Attitude {
                t_start,
                t_end,
                r0: Some(mat_rows(profile.r0.matrix())),
                rate: vec_arr(&profile.rate),
                t0: Some(profile.t0),
                thrust: match thrust {
                    ThrustPolicy::PositionHold(xc) => RawThrust::Hold(vec_arr(xc)),
                    ThrustPolicy::AltitudeTracking(s) => RawThrust::Altitude(s.into()),
                },
            },
            SegmentCommand::Position { xd, b1d } => RawSegment::Position {
                t_start,
                t_end,
                xd: raw_vector_signal(xd),
                b1d: raw_vector_signal(b1d),
            },
            SegmentCommand::Velocity { vd, b1d } => RawSegment::Velocity {
                t_start,
                t_end,
                vd: raw_vector_signal(vd),
                b1d: raw_vector_signal(b1d),
            },
        }
    }
}

impl RawConfig {
    fn into_scenario(self) -> Result<ScenarioConfig> {
        let mut mission = match (&self.scenario, &self.segments) {
            (Some(_), Some(_)) => {
                return Err(Error::Validation(
                    "give either a scenario name or inline segments, not both".into(),
                ))
            }
            (Some(name), None) => {
                builtin_mission(name).ok_or_else(|| Error::UnknownScenario(name.clone()))?
            }
            (None, Some(_)) => Mission {
                name: "custom".into(),
                segments: Vec::new(),
                initial: VehicleState::at_rest(RotationMatrix::identity()),
                params: QuadParams::reference(),
                gains: Gains::reference(QuadParams::reference().m),
            },
            (None, None) => {
                return Err(Error::Validation(
                    "config needs a scenario name or a segments list".into(),
                ))
            }
        };
        if let Some(name) = self.name {
            mission.name = name;
        }

        if let Some(p) = self.params {
            let q = &mut mission.params;
            let mass_changed = p.m.is_some_and(|m| m != q.m);
            q.m = p.m.unwrap_or(q.m);
            q.d = p.d.unwrap_or(q.d);
            q.c_tau_f = p.c_tau_f.unwrap_or(q.c_tau_f);
            q.g = p.g.unwrap_or(q.g);
            match p.j {
                Some(RawInertia::Diagonal(d)) => q.j = Mat3::from_diagonal(&Vec3::from(d)),
                Some(RawInertia::Full(rows)) => q.j = mat3_from_rows(&rows),
                None => {}
            }
            q.validate()?;
            if mass_changed {
                // Mass-scaled reference gains follow the vehicle.
                let base = Gains::reference(q.m);
                mission.gains.kx = base.kx;
                mission.gains.kv = base.kv;
            }
        }
        if let Some(g) = self.gains {
            let k = &mut mission.gains;
            k.kx = g.kx.unwrap_or(k.kx);
            k.kv = g.kv.unwrap_or(k.kv);
            k.kr = g.kr.unwrap_or(k.kr);
            k.komega = g.komega.unwrap_or(k.komega);
        }
        if let Some(init) = self.initial {
            let s = &mut mission.initial;
            if let Some(x) = init.x {
                s.x = Vec3::from(x);
            }
            if let Some(v) = init.v {
                s.v = Vec3::from(v);
            }
            if let Some(r) = init.r {
                s.r = rotation(&r, "initial attitude")?;
            }
            if let Some(w) = init.omega {
                s.omega = Vec3::from(w);
            }
        }
        if let Some(segments) = self.segments {
            mission.segments = segments
                .into_iter()
                .map(RawSegment::into_segment)
                .collect::<Result<_>>()?;
        }

        let mut sim = SimConfig::for_mission(&mission);
        if let Some(s) = self.sim {
            sim.dt = s.dt.unwrap_or(sim.dt);
            sim.duration = s.duration.unwrap_or(sim.duration);
            sim.ortho_tolerance = s.ortho_tolerance.unwrap_or(sim.ortho_tolerance);
            sim.log_decimation = s.log_decimation.unwrap_or(sim.log_decimation);
        }
        Ok(ScenarioConfig {
            mission,
            sim,
            output: self.output,
        })
    }

    fn from_scenario(cfg: &ScenarioConfig) -> Self {
        let m = &cfg.mission;
        let p = &m.params;
        let j = if p.j == Mat3::from_diagonal(&p.j.diagonal()) {
            RawInertia::Diagonal(vec_arr(&p.j.diagonal()))
        } else {
            RawInertia::Full(mat_rows(&p.j))
        };
        RawConfig {
            scenario: None,
            name: Some(m.name.clone()),
            output: cfg.output.clone(),
            params: Some(RawParams {
                m: Some(p.m),
                j: Some(j),
                d: Some(p.d),
                c_tau_f: Some(p.c_tau_f),
                g: Some(p.g),
            }),
            gains: Some(RawGains {
                kx: Some(m.gains.kx),
                kv: Some(m.gains.kv),
                kr: Some(m.gains.kr),
                komega: Some(m.gains.komega),
            }),
            sim: Some(RawSim {
                dt: Some(cfg.sim.dt),
                duration: Some(cfg.sim.duration),
                ortho_tolerance: Some(cfg.sim.ortho_tolerance),
                log_decimation: Some(cfg.sim.log_decimation),
            }),
            initial: Some(RawInitial {
                x: Some(vec_arr(&m.initial.x)),
                v: Some(vec_arr(&m.initial.v)),
                r: Some(mat_rows(m.initial.r.matrix())),
                omega: Some(vec_arr(&m.initial.omega)),
            }),
            segments: Some(m.segments.iter().map(RawSegment::from_segment).collect()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_names_resolve() {
        for name in SCENARIOS {
            let cfg = ScenarioConfig::builtin(name).unwrap();
            assert_eq!(cfg.mission.name, name);
            assert!(describe(name).is_some());
            cfg.validate().unwrap();
        }
        assert!(matches!(
            ScenarioConfig::builtin("nosuch"),
            Err(Error::UnknownScenario(_))
        ));
    }

    #[test]
    fn named_config_equals_builder() {
        let cfg = parse_config("scenario = \"case1\"\n").unwrap();
        assert_eq!(cfg.mission, build_case1());
        assert_eq!(cfg.sim, SimConfig::new(10.0));
        assert_eq!(cfg.output, None);
    }

    #[test]
    fn dt_override_keeps_mission() {
        let cfg = parse_config("scenario = \"case2\"\n[sim]\ndt = 5e-4\n").unwrap();
        assert_eq!(cfg.mission, build_case2());
        assert_eq!(cfg.sim.dt, 5e-4);
        assert_eq!(cfg.sim.duration, 12.0);
    }

    #[test]
    fn negative_mass_is_rejected() {
        let err = parse_config("scenario = \"case1\"\n[params]\nm = -1.0\n").unwrap_err();
        assert_eq!(err, Error::Validation("mass must be positive".into()));
    }

    #[test]
    fn unknown_key_reports_position() {
        let err = parse_config("scenario = \"case1\"\n\n[sim]\nstep = 1e-3\n").unwrap_err();
        match err {
            Error::Parse {
                line,
                column,
                message,
            } => {
                assert_eq!((line, column), (4, 1));
                assert!(message.contains("step"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn syntax_error_reports_position() {
        let err = parse_config("scenario = \"case1\"\nname = \n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err:?}");
    }

    #[test]
    fn inline_mission_parses() {
        let text = r#"
name = "climb"
output = "out/climb"

[params]
j = [[0.08, 0.001, 0.0], [0.001, 0.09, 0.0], [0.0, 0.0, 0.14]]

[initial]
x = [0.0, 0.0, 0.0]

[[segments]]
mode = "position"
t_start = 0.0
t_end = 2.0
xd = [0.0, { sines = [{ amplitude = 0.5, omega = 3.0 }] }, { poly = [0.0, -0.2] }]
b1d = [1.0, 0.0, 0.0]

[[segments]]
mode = "attitude"
t_start = 2.0
t_end = 3.0
rate = [6.283185307179586, 0.0, 0.0]
thrust = { altitude = -0.4 }
"#;
        let cfg = parse_config(text).unwrap();
        assert_eq!(cfg.mission.name, "climb");
        assert_eq!(cfg.output_prefix(), "out/climb");
        assert_eq!(cfg.mission.segments.len(), 2);
        assert_eq!(cfg.mission.params.j[(0, 1)], 0.001);
        assert_eq!(cfg.sim.duration, 3.0);
        match &cfg.mission.segments[1].command {
            SegmentCommand::Attitude { profile, .. } => assert_eq!(profile.t0, 2.0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn scenario_and_segments_conflict() {
        let text = "scenario = \"case1\"\n[[segments]]\nmode = \"position\"\nt_start = 0.0\nt_end = 1.0\nxd = [0.0, 0.0, 0.0]\nb1d = [1.0, 0.0, 0.0]\n";
        assert!(matches!(parse_config(text), Err(Error::Validation(_))));
    }

    #[test]
    fn duration_past_mission_end_is_rejected() {
        let err = parse_config("scenario = \"case1\"\n[sim]\nduration = 11.0\n").unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn registry_configs_round_trip() {
        for name in SCENARIOS {
            let cfg = ScenarioConfig::builtin(name).unwrap();
            let text = cfg.to_toml();
            let back = parse_config(&text).unwrap();
            assert_eq!(back, cfg, "{text}");
        }
    }

    #[test]
    fn line_column_counts_from_one() {
        assert_eq!(line_column("ab\ncd", 0), (1, 1));
        assert_eq!(line_column("ab\ncd", 4), (2, 2));
    }
}
