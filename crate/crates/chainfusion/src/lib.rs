//! Pose fusion for a chain of IMU-instrumented links.
//!
//! Strapdown dead reckoning per link, corrected by joint biomechanical
//! pseudo-measurements, an external camera-position stream, and stationary
//! gravity referencing, with sensor biases and link geometry co-estimated.
//! Two filter back ends share the same propagation and measurement models:
//! an error-state EKF and a square-root UKF operating on the error chart.

pub mod body;
pub mod check;
pub mod config;
pub mod ekf;
pub mod harness;
pub mod ins;
pub mod io;
pub mod meas;
pub mod rotation;
pub mod runner;
pub mod sim;
pub mod srukf;

pub use body::{build_layout, ChainModel, NavState, StateLayout};
pub use ekf::{Channel, EkfState, FilterError, GravityMode, NoiseConfig};
pub use harness::{compute_metrics, run_filter, HarnessError, Metrics, RunOutput, RunSetup};
pub use ins::{correct_imu, propagate_link, CorrectedImu, ImuSample};
pub use meas::{SlamFix, StationaryParams};
pub use rotation::{skew, Dcm, Quat, RotVec};
pub use runner::{FilterKind, OnlineFilter, PosSource, RunnerConfig};
pub use sim::{gen_trajectory, synthesize_imu, synthesize_mocap, synthesize_slam, GroundTruth, ScenarioConfig};
pub use srukf::{SigmaWeights, SrukfState};
