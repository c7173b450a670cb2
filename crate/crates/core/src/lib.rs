//! Geometric tracking control of a quadrotor on SE(3), with a deterministic
//! closed-loop simulator and runtime stability monitor.
//!
//! The inertial frame has `e3` pointing down, so gravity is `+g e3` and the
//! rotor thrust acts along `-R e3`.
//!
//! ```
//! use quadrotor_se3::{mission::build_case1, sim::{run, SimConfig}};
//!
//! let mission = build_case1();
//! let out = run(&mission, &SimConfig { duration: 0.1, ..SimConfig::for_mission(&mission) }).unwrap();
//! assert_eq!(out.trace.len(), 11);
//! ```

// Validation uses `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod control;
pub mod dynamics;
pub mod error;
pub mod mission;
pub mod monitor;
pub mod sim;
pub mod so3;
pub mod trace_io;

pub use config::{load_scenario, parse_config, ScenarioConfig};
pub use control::{AttitudeCommand, Gains, PositionCommand, VelocityCommand};
pub use dynamics::{ControlOutput, QuadParams, VehicleState};
pub use error::{Error, Result};
pub use mission::{FlightSegment, Mission, ModeTag};
pub use monitor::{GainCertificate, MonitorReport};
pub use sim::{run, RunOutput, SimConfig, TraceRecord};
pub use so3::{RotationMatrix, Vec3};
