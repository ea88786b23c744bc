//! Synthetic multi-link arm scenarios: ground-truth motion with analytic
//! specific force and angular rate, noisy IMU streams with injected biases,
//! irregular camera-position fixes, and full-rate reference fixes.
//!
//! All motion profiles are closed-form and twice differentiable, so the
//! emitted sensor values are exact rather than finite-differenced, and a
//! fixed seed reproduces every stream byte for byte.

use crate::body::{build_layout, ChainModel, NavState, StateLayout};
use crate::ins::ImuSample;
use crate::meas::SlamFix;
use crate::rotation::{Quat, RotVec};
use nalgebra::Vector3;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use std::sync::Arc;
use thiserror::Error;

const STREAM_IMU: u64 = 1;
const STREAM_SLAM: u64 = 2;
const STREAM_MOCAP: u64 = 3;
const STREAM_DEFORM: u64 = 4;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    BadConfig(String),
    #[error("simulator requires a serial chain (joint {0} breaks the path)")]
    NotSerialChain(usize),
    #[error("geometry does not define segment l[{owner},{other}]")]
    GeometryMismatch { owner: usize, other: usize },
    #[error(transparent)]
    Model(#[from] crate::body::ModelError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScenarioKind {
    Gait,
    Jump,
}

impl std::str::FromStr for ScenarioKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "gait" => Ok(ScenarioKind::Gait),
            "jump" => Ok(ScenarioKind::Jump),
            other => Err(format!("unknown scenario kind `{other}` (expected gait|jump)")),
        }
    }
}

impl std::fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ScenarioKind::Gait => "gait",
            ScenarioKind::Jump => "jump",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PathKind {
    OShape,
    Straight,
}

impl std::str::FromStr for PathKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "o_shape" => Ok(PathKind::OShape),
            "straight" => Ok(PathKind::Straight),
            other => Err(format!("unknown path `{other}` (expected o_shape|straight)")),
        }
    }
}

impl std::fmt::Display for PathKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PathKind::OShape => "o_shape",
            PathKind::Straight => "straight",
        })
    }
}

/// Sensor noise levels used by the synthesizers. IMU values are per-sample
/// SDs at the configured rate; fix values are per-fix SDs.
#[derive(Clone, Debug)]
pub struct SimNoise {
    pub sigma_a_sample: f64,
    pub sigma_g_sample: f64,
    /// Stationary SD of the slow accelerometer bias drift (0 disables).
    pub bias_instab_a: f64,
    pub bias_instab_g: f64,
    pub drift_tau: f64,
    pub slam_sigma: f64,
    /// Slowly varying camera-position bias emulating drift of the external
    /// tracker (0 disables).
    pub slam_drift_sd: f64,
    pub slam_drift_tau: f64,
    pub mocap_sigma: f64,
}

impl SimNoise {
    /// Datasheet-derived defaults: random walks 60 ug/sqrt(hr) and
    /// 0.01 deg/s/sqrt(hr) converted to per-sample SDs at `imu_rate`; bias
    /// instabilities 15 ug and 10 deg/h as slow-drift SDs; camera fixes at
    /// 5 cm, reference fixes at 2 mm.
    pub fn default_for_rate(imu_rate: f64) -> Self {
        let sigma_a_psd = 60e-6 * 9.80665 / 60.0;
        let sigma_g_psd = 0.01_f64.to_radians() / 60.0;
        SimNoise {
            sigma_a_sample: sigma_a_psd * imu_rate.sqrt(),
            sigma_g_sample: sigma_g_psd * imu_rate.sqrt(),
            bias_instab_a: 15e-6 * 9.80665,
            bias_instab_g: (10.0_f64 / 3600.0).to_radians(),
            drift_tau: 200.0,
            slam_sigma: 0.05,
            slam_drift_sd: 0.0,
            slam_drift_tau: 40.0,
            mocap_sigma: 0.002,
        }
    }

    pub fn zero() -> Self {
        SimNoise {
            sigma_a_sample: 0.0,
            sigma_g_sample: 0.0,
            bias_instab_a: 0.0,
            bias_instab_g: 0.0,
            drift_tau: 200.0,
            slam_sigma: 0.0,
            slam_drift_sd: 0.0,
            slam_drift_tau: 40.0,
            mocap_sigma: 0.0,
        }
    }
}

/// True link geometry: segment lever arms and the camera lever arm.
#[derive(Clone, Debug)]
pub struct ChainGeometry {
    /// `(owner, other, lever)` for every `l_{owner,other}`.
    pub segments: Vec<(usize, usize, Vector3<f64>)>,
    pub camera_lever: Vector3<f64>,
}

impl ChainGeometry {
    pub fn arm3_default() -> Self {
        ChainGeometry {
            segments: vec![
                (0, 1, Vector3::new(0.12, -0.05, 0.02)),
                (1, 0, Vector3::new(-0.14, 0.02, -0.01)),
                (1, 2, Vector3::new(0.16, 0.01, 0.02)),
                (2, 1, Vector3::new(-0.11, -0.02, 0.015)),
            ],
            camera_lever: Vector3::new(0.08, 0.03, -0.12),
        }
    }

    pub fn lever(&self, owner: usize, other: usize) -> Option<Vector3<f64>> {
        self.segments
            .iter()
            .find(|(o, n, _)| *o == owner && *n == other)
            .map(|(_, _, l)| *l)
    }
}

#[derive(Clone, Debug)]
pub struct ScenarioConfig {
    pub kind: ScenarioKind,
    pub path: PathKind,
    pub duration: f64,
    pub imu_rate: f64,
    pub slam_mean_rate: f64,
    /// Fractional timestamp jitter of the fix interval, in [0, 1).
    pub slam_jitter: f64,
    /// Probability that a scheduled fix is dropped.
    pub slam_dropout: f64,
    pub seed: u64,
    /// Nominal path speed, m/s.
    pub speed: f64,
    /// Shoulder swing amplitude, rad; downstream joints scale from it.
    pub swing_amplitude: f64,
    pub swing_freq: f64,
    /// O-shape path radius, m.
    pub o_radius: f64,
    pub jump_height: f64,
    pub jump_count: usize,
    /// Lead-in/лead-out standstill, s.
    pub standstill: f64,
    /// Motion envelope ramp time, s.
    pub ramp: f64,
    /// Scale of the secondary (cross-axis) sway components in [0, 1];
    /// 0 keeps all rotation on one axis per joint, which the coning-free
    /// integrator reproduces best.
    pub cross_sway: f64,
    pub noise: SimNoise,
    pub model: ChainModel,
    pub geometry: ChainGeometry,
    pub bias_a_true: Vec<Vector3<f64>>,
    pub bias_g_true: Vec<Vector3<f64>>,
    /// Joint play SD, m (0 disables deformation episodes).
    pub deformation_sd: f64,
}

impl ScenarioConfig {
    pub fn nominal(kind: ScenarioKind, path: PathKind, seed: u64, duration: f64) -> Self {
        let imu_rate = 100.0;
        let (speed, swing, freq, jumps) = match kind {
            ScenarioKind::Gait => (1.05, 0.5, 0.9, 0),
            ScenarioKind::Jump => (0.5, 0.35, 0.8, 3),
        };
        ScenarioConfig {
            kind,
            path,
            duration,
            imu_rate,
            slam_mean_rate: imu_rate / 3.0,
            slam_jitter: 0.35,
            slam_dropout: 0.05,
            seed,
            speed,
            swing_amplitude: swing,
            swing_freq: freq,
            o_radius: 22.0,
            jump_height: 0.35,
            jump_count: jumps,
            standstill: 2.5,
            ramp: 2.0,
            cross_sway: 1.0,
            noise: SimNoise::default_for_rate(imu_rate),
            model: ChainModel::arm3(),
            geometry: ChainGeometry::arm3_default(),
            // Bias z-components stay small: the stationarity detector's
            // accel-norm test only sees the along-gravity projection.
            bias_a_true: vec![
                Vector3::new(0.06, -0.05, 0.035),
                Vector3::new(-0.055, 0.06, -0.03),
                Vector3::new(0.05, -0.065, 0.03),
            ],
            bias_g_true: vec![
                Vector3::new(0.006, -0.004, 0.005),
                Vector3::new(-0.005, 0.0065, -0.004),
                Vector3::new(0.004, 0.0055, -0.0065),
            ],
            deformation_sd: 0.0,
        }
    }

    /// Low-dynamics gait used by integrator self-tests.
    pub fn moderate(seed: u64, duration: f64) -> Self {
        let mut cfg = ScenarioConfig::nominal(ScenarioKind::Gait, PathKind::Straight, seed, duration);
        cfg.speed = 1.0;
        cfg.swing_amplitude = 0.1;
        cfg.swing_freq = 0.6;
        cfg.cross_sway = 0.0;
        cfg
    }

    /// Near-static straight walk with a long speed ramp; jerk stays below
    /// 0.03 m/s^3 so position/velocity finite-difference checks are exact
    /// to the stated tolerance.
    pub fn calm(seed: u64, duration: f64) -> Self {
        let mut cfg = ScenarioConfig::nominal(ScenarioKind::Gait, PathKind::Straight, seed, duration);
        cfg.speed = 0.5;
        cfg.swing_amplitude = 0.0;
        cfg.ramp = 12.0;
        cfg
    }

    /// Zero motion for the whole duration.
    pub fn static_scene(seed: u64, duration: f64) -> Self {
        let mut cfg = ScenarioConfig::nominal(ScenarioKind::Gait, PathKind::Straight, seed, duration);
        cfg.speed = 0.0;
        cfg.swing_amplitude = 0.0;
        cfg.standstill = 1.0;
        cfg.ramp = 1.0;
        cfg
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.duration > 0.0) {
            return Err(SimError::BadConfig("duration must be positive".into()));
        }
        if !(self.imu_rate > 0.0) || !(self.slam_mean_rate > 0.0) {
            return Err(SimError::BadConfig("rates must be positive".into()));
        }
        if self.duration < 2.0 * self.standstill + 2.0 * self.ramp {
            return Err(SimError::BadConfig(format!(
                "duration {} too short for standstill {} and ramp {}",
                self.duration, self.standstill, self.ramp
            )));
        }
        if !(0.0..1.0).contains(&self.slam_jitter) {
            return Err(SimError::BadConfig("slam_jitter must be in [0, 1)".into()));
        }
        if !(0.0..1.0).contains(&self.slam_dropout) {
            return Err(SimError::BadConfig("slam_dropout must be in [0, 1)".into()));
        }
        self.model.validate()?;
        let n = self.model.num_links();
        if self.bias_a_true.len() != n || self.bias_g_true.len() != n {
            return Err(SimError::BadConfig("true biases must cover every link".into()));
        }
        for (idx, &(i, j)) in self.model.joints.iter().enumerate() {
            if !(i == idx && j == idx + 1) {
                return Err(SimError::NotSerialChain(idx));
            }
            for (owner, other) in [(i, j), (j, i)] {
                if self.geometry.lever(owner, other).is_none() {
                    return Err(SimError::GeometryMismatch { owner, other });
                }
            }
        }
        Ok(())
    }
}

/// Ground-truth motion of the whole chain on the IMU epoch grid.
#[derive(Clone, Debug)]
pub struct GroundTruth {
    pub cfg: ScenarioConfig,
    pub layout: Arc<StateLayout>,
    pub times: Vec<f64>,
    pub states: Vec<NavState>,
    /// True body angular rate per epoch per link.
    pub omega_b: Vec<Vec<Vector3<f64>>>,
    /// True navigation-frame acceleration per epoch per link.
    pub accel_n: Vec<Vec<Vector3<f64>>>,
    pub stationary: Vec<Vec<bool>>,
}

impl GroundTruth {
    pub fn camera_position(&self, epoch: usize) -> Vector3<f64> {
        let cam = self.layout.model.camera_link;
        let x = &self.states[epoch];
        x.p(cam) + x.q(cam).matrix() * x.lever_cam()
    }
}

// ---------------------------------------------------------------------------
// Analytic motion: value / first / second derivative scalars.

#[derive(Clone, Copy, Debug)]
struct C2 {
    v: f64,
    d: f64,
    dd: f64,
}

impl C2 {
    fn constant(v: f64) -> C2 {
        C2 { v, d: 0.0, dd: 0.0 }
    }

    fn add(self, o: C2) -> C2 {
        C2 { v: self.v + o.v, d: self.d + o.d, dd: self.dd + o.dd }
    }

    fn mul(self, o: C2) -> C2 {
        C2 {
            v: self.v * o.v,
            d: self.d * o.v + self.v * o.d,
            dd: self.dd * o.v + 2.0 * self.d * o.d + self.v * o.dd,
        }
    }

    fn scale(self, k: f64) -> C2 {
        C2 { v: self.v * k, d: self.d * k, dd: self.dd * k }
    }

    fn sin(self) -> C2 {
        let (s, c) = self.v.sin_cos();
        C2 { v: s, d: c * self.d, dd: -s * self.d * self.d + c * self.dd }
    }

    fn cos(self) -> C2 {
        let (s, c) = self.v.sin_cos();
        C2 { v: c, d: -s * self.d, dd: -c * self.d * self.d - s * self.dd }
    }
}

/// Quintic smoothstep and its derivatives/integral on [0, 1].
fn smoothstep(u: f64) -> (f64, f64, f64) {
    let s = 6.0 * u.powi(5) - 15.0 * u.powi(4) + 10.0 * u.powi(3);
    let d = 30.0 * u.powi(4) - 60.0 * u.powi(3) + 30.0 * u.powi(2);
    let dd = 120.0 * u.powi(3) - 180.0 * u.powi(2) + 60.0 * u;
    (s, d, dd)
}

fn smoothstep_integral(u: f64) -> f64 {
    u.powi(6) - 3.0 * u.powi(5) + 2.5 * u.powi(4)
}

#[derive(Clone, Copy, Debug)]
pub struct LinkTruth {
    pub p: Vector3<f64>,
    pub v: Vector3<f64>,
    pub a: Vector3<f64>,
    pub q: Quat,
    /// Body angular rate.
    pub w: Vector3<f64>,
    /// Body angular acceleration.
    pub alpha: Vector3<f64>,
}

struct MotionModel<'a> {
    cfg: &'a ScenarioConfig,
    motion_end: f64,
    jump_windows: Vec<(f64, f64)>,
}

impl<'a> MotionModel<'a> {
    fn new(cfg: &'a ScenarioConfig) -> Self {
        let motion_end = cfg.duration - cfg.standstill;
        let lo = cfg.standstill + cfg.ramp + 1.0;
        let hi = motion_end - cfg.ramp - 1.0;
        let jump_len = 0.9_f64;
        let jump_windows = (0..cfg.jump_count)
            .map(|i| {
                let frac = (i + 1) as f64 / (cfg.jump_count + 1) as f64;
                let center = lo + frac * (hi - lo);
                (center - jump_len / 2.0, center + jump_len / 2.0)
            })
            .collect();
        MotionModel { cfg, motion_end, jump_windows }
    }

    /// Motion activation envelope: 0 at standstill, quintic ramps between.
    fn envelope(&self, t: f64) -> C2 {
        let ss = self.cfg.standstill;
        let r = self.cfg.ramp;
        let te = self.motion_end;
        if t < ss || t >= te {
            C2::constant(0.0)
        } else if t < ss + r {
            let u = (t - ss) / r;
            let (s, d, dd) = smoothstep(u);
            C2 { v: s, d: d / r, dd: dd / (r * r) }
        } else if t < te - r {
            C2::constant(1.0)
        } else {
            let u = (te - t) / r;
            let (s, d, dd) = smoothstep(u);
            C2 { v: s, d: -d / r, dd: dd / (r * r) }
        }
    }

    fn envelope_integral(&self, t: f64) -> f64 {
        let ss = self.cfg.standstill;
        let r = self.cfg.ramp;
        let te = self.motion_end;
        let up_full = r * smoothstep_integral(1.0);
        if t < ss {
            0.0
        } else if t < ss + r {
            r * smoothstep_integral((t - ss) / r)
        } else if t < te - r {
            up_full + (t - ss - r)
        } else if t < te {
            let u = (te - t) / r;
            up_full + (te - 2.0 * r - ss) + r * (smoothstep_integral(1.0) - smoothstep_integral(u))
        } else {
            2.0 * up_full + (te - 2.0 * r - ss)
        }
    }

    /// Path progress: `s = speed * integral(envelope)`.
    fn progress(&self, t: f64) -> C2 {
        let a = self.envelope(t);
        C2 {
            v: self.cfg.speed * self.envelope_integral(t),
            d: self.cfg.speed * a.v,
            dd: self.cfg.speed * a.d,
        }
    }

    /// Vertical excursion (NED: up is negative z): gait bob plus jump bumps.
    fn vertical(&self, t: f64) -> C2 {
        let a = self.envelope(t);
        let f = self.cfg.swing_freq;
        let two_pi = std::f64::consts::TAU;
        // Bob at twice the swing frequency, scaled with the swing vigor.
        let bob_amp = 0.04 * self.cfg.swing_amplitude;
        let osc = C2 { v: two_pi * 2.0 * f * t, d: two_pi * 2.0 * f, dd: 0.0 };
        let bob = C2::constant(1.0).add(osc.cos().scale(-1.0)).scale(-0.5 * bob_amp).mul(a);
        let mut z = bob;
        for &(t0, t1) in &self.jump_windows {
            if t >= t0 && t < t1 {
                let u = C2 { v: (t - t0) / (t1 - t0), d: 1.0 / (t1 - t0), dd: 0.0 };
                let s = u.scale(std::f64::consts::PI).sin();
                // sin^4 bump is C2 at both window edges.
                let bump = s.mul(s).mul(s.mul(s)).scale(-self.cfg.jump_height);
                z = z.add(bump);
            }
        }
        z
    }

    /// Heading and planar path position as C2 per axis.
    fn base_pose(&self, t: f64) -> (C2, [C2; 3]) {
        let s = self.progress(t);
        match self.cfg.path {
            PathKind::Straight => {
                let psi = C2::constant(0.0);
                (psi, [s, C2::constant(0.0), self.vertical(t)])
            }
            PathKind::OShape => {
                let r = self.cfg.o_radius;
                let psi = s.scale(1.0 / r);
                let x = psi.sin().scale(r);
                let y = C2::constant(1.0).add(psi.cos().scale(-1.0)).scale(r);
                (psi, [x, y, self.vertical(t)])
            }
        }
    }

    /// Rotation factor list (axis, angle) for link `k`, cumulative from the base.
    fn rotation_factors(&self, k: usize, t: f64) -> Vec<(Vector3<f64>, C2)> {
        let a = self.envelope(t);
        let (psi, _) = self.base_pose(t);
        let two_pi = std::f64::consts::TAU;
        let f = self.cfg.swing_freq;
        let phase = |off: f64| C2 { v: two_pi * f * t + off, d: two_pi * f, dd: 0.0 };
        let amp = self.cfg.swing_amplitude;
        let cross = self.cfg.cross_sway;
        let mut factors = vec![
            (Vector3::z(), psi),
            // Body sway during motion, scaled with the swing vigor. The yaw
            // component keeps the base link's heading excited, which is what
            // makes its lever arms (and hence its yaw) identifiable.
            (Vector3::z(), phase(0.9).sin().mul(a).scale(0.24 * amp * cross)),
            (Vector3::x(), phase(0.3).sin().mul(a).scale(0.10 * amp * cross)),
            (Vector3::y(), phase(1.1).sin().mul(a).scale(0.06 * amp)),
        ];
        for depth in 1..=k {
            let scale = 0.8_f64.powi(depth as i32 - 1);
            if depth % 2 == 1 {
                // Pendulum swing about the body y axis.
                factors.push((
                    Vector3::y(),
                    phase(0.15 * depth as f64).sin().mul(a).scale(amp * scale),
                ));
                factors.push((
                    Vector3::x(),
                    phase(0.4 + 0.2 * depth as f64)
                        .sin()
                        .mul(a)
                        .scale(0.3 * amp * scale * cross),
                ));
            } else {
                // Flexion-style raised-cosine swing, always one-sided, with a
                // small off-axis component so both lever arms of the joint
                // become observable.
                let raised = C2::constant(1.0).add(phase(0.7).cos().scale(-1.0)).scale(0.5);
                factors.push((Vector3::y(), raised.mul(a).scale(1.1 * amp * scale)));
                let raised_x = C2::constant(1.0).add(phase(1.9).cos().scale(-1.0)).scale(0.5);
                factors.push((
                    Vector3::x(),
                    raised_x.mul(a).scale(0.4 * amp * scale * cross),
                ));
            }
        }
        factors
    }

    /// Composes (axis, angle) factors into attitude, body rate, and body
    /// angular acceleration.
    fn compose(factors: &[(Vector3<f64>, C2)]) -> (Quat, Vector3<f64>, Vector3<f64>) {
        let mut q = Quat::identity();
        let mut w = Vector3::zeros();
        let mut alpha = Vector3::zeros();
        for (axis, ang) in factors {
            let qf = Quat::from_rotvec(&RotVec(axis * ang.v));
            let wf = axis * ang.d;
            let af = axis * ang.dd;
            let rt = qf.matrix().transpose();
            let w_in = rt * w;
            alpha = rt * alpha - wf.cross(&w_in) + af;
            w = w_in + wf;
            q = q.mul(&qf);
        }
        (q, w, alpha)
    }

    /// Full kinematics of every link at time `t`, root to tip.
    fn eval(&self, t: f64, deform: Option<&[(Vector3<f64>, Vector3<f64>, Vector3<f64>)]>) -> Vec<LinkTruth> {
        let n = self.cfg.model.num_links();
        let (_, pos) = self.base_pose(t);
        let mut out: Vec<LinkTruth> = Vec::with_capacity(n);
        for k in 0..n {
            let factors = self.rotation_factors(k, t);
            let (q, w, alpha) = Self::compose(&factors);
            if k == 0 {
                out.push(LinkTruth {
                    p: Vector3::new(pos[0].v, pos[1].v, pos[2].v),
                    v: Vector3::new(pos[0].d, pos[1].d, pos[2].d),
                    a: Vector3::new(pos[0].dd, pos[1].dd, pos[2].dd),
                    q,
                    w,
                    alpha,
                });
            } else {
                let parent = &out[k - 1];
                let l_pc = self.cfg.geometry.lever(k - 1, k).expect("validated geometry");
                let l_cp = self.cfg.geometry.lever(k, k - 1).expect("validated geometry");
                let rp = parent.q.matrix();
                let rc = q.matrix();
                let mut p_joint = parent.p + rp * l_pc;
                let mut v_joint = parent.v + rp * parent.w.cross(&l_pc);
                let mut a_joint = parent.a
                    + rp * (parent.alpha.cross(&l_pc) + parent.w.cross(&parent.w.cross(&l_pc)));
                if let Some(d) = deform {
                    let (dp, dv, da) = d[k - 1];
                    p_joint += dp;
                    v_joint += dv;
                    a_joint += da;
                }
                out.push(LinkTruth {
                    p: p_joint - rc * l_cp,
                    v: v_joint - rc * w.cross(&l_cp),
                    a: a_joint - rc * (alpha.cross(&l_cp) + w.cross(&w.cross(&l_cp))),
                    q,
                    w,
                    alpha,
                });
            }
        }
        out
    }

}

/// Joint-play generator: per joint and axis, a sum of three incommensurate
/// sines whose combined SD matches the configured deformation level, gated
/// by the motion envelope so standstill stays rigid.
struct DeformationModel {
    /// Per joint, per axis: (amplitude, angular frequency, phase).
    per_joint: Vec<[[(f64, f64, f64); 3]; 3]>,
}

impl DeformationModel {
    fn new(cfg: &ScenarioConfig) -> Option<Self> {
        if cfg.deformation_sd <= 0.0 {
            return None;
        }
        let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
        rng.set_stream(STREAM_DEFORM);
        // Each sine carries variance amp^2/2; three of them hit the target SD.
        let amp = cfg.deformation_sd / (3.0_f64 / 2.0).sqrt();
        let freqs = [0.9, 1.7, 2.6];
        let per_joint = cfg
            .model
            .joints
            .iter()
            .map(|_| {
                std::array::from_fn(|_| {
                    std::array::from_fn(|i| {
                        let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                        (amp, freqs[i] * std::f64::consts::TAU, phase)
                    })
                })
            })
            .collect();
        Some(DeformationModel { per_joint })
    }

    fn eval(&self, t: f64, env: &C2, joint: usize) -> (Vector3<f64>, Vector3<f64>, Vector3<f64>) {
        let mut p = Vector3::zeros();
        let mut v = Vector3::zeros();
        let mut a = Vector3::zeros();
        for axis in 0..3 {
            let mut s = C2::constant(0.0);
            for &(amp, w, phase) in &self.per_joint[joint][axis] {
                let arg = C2 { v: w * t + phase, d: w, dd: 0.0 };
                s = s.add(arg.sin().scale(amp));
            }
            let gated = s.mul(*env);
            p[axis] = gated.v;
            v[axis] = gated.d;
            a[axis] = gated.dd;
        }
        (p, v, a)
    }
}

/// Generates ground truth on the epoch grid.
pub fn gen_trajectory(cfg: &ScenarioConfig) -> Result<GroundTruth, SimError> {
    cfg.validate()?;
    let layout = Arc::new(build_layout(&cfg.model)?);
    let model = MotionModel::new(cfg);
    let deform = DeformationModel::new(cfg);
    let dt = 1.0 / cfg.imu_rate;
    let n_epochs = (cfg.duration * cfg.imu_rate).round() as usize + 1;
    let mut times = Vec::with_capacity(n_epochs);
    let mut states = Vec::with_capacity(n_epochs);
    let mut omega_b = Vec::with_capacity(n_epochs);
    let mut accel_n = Vec::with_capacity(n_epochs);
    let mut stationary = Vec::with_capacity(n_epochs);
    for i in 0..n_epochs {
        let t = i as f64 * dt;
        let deform_vals = deform.as_ref().map(|d| {
            let env = model.envelope(t);
            (0..cfg.model.joints.len())
                .map(|j| d.eval(t, &env, j))
                .collect::<Vec<_>>()
        });
        let links = model.eval(t, deform_vals.as_deref());
        let mut x = NavState::zeroed(layout.clone());
        for (k, lk) in links.iter().enumerate() {
            x.set_p(k, &lk.p);
            x.set_v(k, &lk.v);
            x.set_q(k, &lk.q);
            x.set_bias_a(k, &cfg.bias_a_true[k]);
            x.set_bias_g(k, &cfg.bias_g_true[k]);
        }
        for &(owner, other, l) in &cfg.geometry.segments {
            x.set_seg(owner, other, &l);
        }
        x.set_lever_cam(&cfg.geometry.camera_lever);
        times.push(t);
        omega_b.push(links.iter().map(|l| l.w).collect());
        accel_n.push(links.iter().map(|l| l.a).collect());
        stationary.push(
            links
                .iter()
                .map(|l| l.v.norm() == 0.0 && l.w.norm() == 0.0 && l.a.norm() == 0.0)
                .collect(),
        );
        states.push(x);
    }
    Ok(GroundTruth {
        cfg: cfg.clone(),
        layout,
        times,
        states,
        omega_b,
        accel_n,
        stationary,
    })
}

/// First-order Gauss-Markov step.
fn gm_step(state: f64, dt: f64, tau: f64, sd: f64, xi: f64) -> f64 {
    let a = (-dt / tau).exp();
    state * a + sd * (1.0 - a * a).sqrt() * xi
}

/// IMU streams with injected biases, optional slow drift, and white noise.
pub fn synthesize_imu(gt: &GroundTruth, cfg: &ScenarioConfig) -> Vec<ImuSample> {
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    rng.set_stream(STREAM_IMU);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let n_links = cfg.model.num_links();
    let g_n = cfg.model.gravity_n;
    let dt = 1.0 / cfg.imu_rate;
    let mut drift_a = vec![Vector3::zeros(); n_links];
    let mut drift_g = vec![Vector3::zeros(); n_links];
    let mut out = Vec::with_capacity(gt.times.len() * n_links);
    for (ei, &t) in gt.times.iter().enumerate() {
        for k in 0..n_links {
            let x = &gt.states[ei];
            let f_true = x.q(k).matrix().transpose() * (gt.accel_n[ei][k] - g_n);
            let w_true = gt.omega_b[ei][k];
            for axis in 0..3 {
                drift_a[k][axis] = gm_step(
                    drift_a[k][axis],
                    dt,
                    cfg.noise.drift_tau,
                    cfg.noise.bias_instab_a,
                    normal.sample(&mut rng),
                );
                drift_g[k][axis] = gm_step(
                    drift_g[k][axis],
                    dt,
                    cfg.noise.drift_tau,
                    cfg.noise.bias_instab_g,
                    normal.sample(&mut rng),
                );
            }
            let noise_a = Vector3::from_fn(|_, _| normal.sample(&mut rng) * cfg.noise.sigma_a_sample);
            let noise_g = Vector3::from_fn(|_, _| normal.sample(&mut rng) * cfg.noise.sigma_g_sample);
            out.push(ImuSample {
                t,
                link: k,
                f_raw: f_true + cfg.bias_a_true[k] + drift_a[k] + noise_a,
                w_raw: w_true + cfg.bias_g_true[k] + drift_g[k] + noise_g,
            });
        }
    }
    out
}

/// Irregular camera-position fixes: jittered intervals around the mean rate,
/// dropout gaps, optional slow drift, and white noise.
pub fn synthesize_slam(gt: &GroundTruth, cfg: &ScenarioConfig) -> Vec<SlamFix> {
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    rng.set_stream(STREAM_SLAM);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let model = MotionModel::new(cfg);
    let cam = cfg.model.camera_link;
    let period = 1.0 / cfg.slam_mean_rate;
    let duration = *gt.times.last().expect("non-empty ground truth");
    let mut drift = Vector3::zeros();
    let mut out = Vec::new();
    let mut t = period;
    let mut last_t = 0.0_f64;
    while t < duration {
        let links = model.eval(t, None);
        let p_cam = links[cam].p + links[cam].q.matrix() * cfg.geometry.camera_lever;
        for axis in 0..3 {
            drift[axis] = gm_step(
                drift[axis],
                t - last_t,
                cfg.noise.slam_drift_tau,
                cfg.noise.slam_drift_sd,
                normal.sample(&mut rng),
            );
        }
        last_t = t;
        let noise = Vector3::from_fn(|_, _| normal.sample(&mut rng) * cfg.noise.slam_sigma);
        let keep = rng.random_range(0.0..1.0) >= cfg.slam_dropout;
        if keep {
            out.push(SlamFix { t, p_meas: p_cam + drift + noise, sigma: cfg.noise.slam_sigma.max(1e-6) });
        }
        let u: f64 = rng.random_range(-1.0..1.0);
        t += period * (1.0 + cfg.slam_jitter * u);
    }
    out
}

/// Full-rate reference fixes of the camera position (optical-tracker style).
pub fn synthesize_mocap(gt: &GroundTruth, cfg: &ScenarioConfig) -> Vec<SlamFix> {
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    rng.set_stream(STREAM_MOCAP);
    let normal = Normal::new(0.0, 1.0).unwrap();
    gt.times
        .iter()
        .enumerate()
        .map(|(ei, &t)| {
            let noise = Vector3::from_fn(|_, _| normal.sample(&mut rng) * cfg.noise.mocap_sigma);
            SlamFix {
                t,
                p_meas: gt.camera_position(ei) + noise,
                sigma: cfg.noise.mocap_sigma.max(1e-9),
            }
        })
        .collect()
}
