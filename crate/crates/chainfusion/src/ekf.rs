//! Error-state extended Kalman filter: continuous error dynamics assembled
//! into a block-sparse F, first-order covariance discretization, linearized
//! measurement rows for the four correction channels, and a Joseph-form
//! update with multiplicative attitude reset through the error chart.

use crate::body::NavState;
use crate::ins::CorrectedImu;
use crate::meas::{camera_pos_predicted, gravity_predicted, joint_pos_predicted,
    joint_vel_predicted, MeasError};
use crate::rotation::skew;
use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum FilterError {
    #[error("innovation covariance is not positive definite")]
    InnovationNotSpd,
    #[error("measurement has {got} columns, error state has {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Measurement(#[from] MeasError),
    #[error("state chart error: {0}")]
    Chart(#[from] crate::body::BodyError),
    #[error(transparent)]
    Propagation(#[from] crate::ins::InsError),
    #[error("square-root factor lost positive diagonal (min {0:.3e})")]
    FactorNotPositive(f64),
    #[error("filter state contains non-finite values")]
    NonFinite,
}

/// When gravity referencing fires.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GravityMode {
    /// Any stationary period, including mid-trial ones.
    Throughout,
    /// Only before the first motion onset.
    InitialOnly,
    Off,
}

impl std::str::FromStr for GravityMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "throughout" => Ok(GravityMode::Throughout),
            "initial" => Ok(GravityMode::InitialOnly),
            "off" => Ok(GravityMode::Off),
            other => Err(format!("unknown gravity mode `{other}` (expected throughout|initial|off)")),
        }
    }
}

impl std::fmt::Display for GravityMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            GravityMode::Throughout => "throughout",
            GravityMode::InitialOnly => "initial",
            GravityMode::Off => "off",
        })
    }
}

/// Process, measurement, and initial-uncertainty configuration.
///
/// White-noise densities are per-root-hertz; bias and segment random walks
/// are PSDs. Measurement SDs are per-sample.
#[derive(Clone, Debug)]
pub struct NoiseConfig {
    /// Accelerometer white noise per link, m/s^2/sqrt(Hz).
    pub sigma_a: Vec<f64>,
    /// Gyroscope white noise per link, rad/s/sqrt(Hz).
    pub sigma_g: Vec<f64>,
    /// Accelerometer bias random-walk PSD, (m/s^2)^2/s.
    pub q_bias_a: f64,
    /// Gyroscope bias random-walk PSD, (rad/s)^2/s.
    pub q_bias_g: f64,
    /// Segment process PSD, m^2/s; zero models constants.
    pub q_seg: f64,
    /// Camera lever-arm process PSD, m^2/s.
    pub q_lever: f64,
    /// Joint position deformation SD, m.
    pub sigma_joint_pos: f64,
    /// Joint velocity deformation SD, m/s.
    pub sigma_joint_vel: f64,
    /// Default camera-position SD, m (per-fix values override).
    pub sigma_cam: f64,
    /// Gravity-referencing SD, m/s^2; `None` derives the per-sample
    /// accelerometer SD `sigma_a / sqrt(dt)` at the IMU rate.
    pub sigma_grav: Option<f64>,
    pub init_sd_pos: f64,
    pub init_sd_vel: f64,
    pub init_sd_att: f64,
    pub init_sd_bias_a: f64,
    pub init_sd_bias_g: f64,
    pub init_sd_seg: f64,
    pub gravity_mode: GravityMode,
}

impl NoiseConfig {
    /// Sensor-table noise plus the trial-established SDs for the arm setup:
    /// joints 1 cm / 1 cm/s, camera 5 cm, initial SDs 10 cm, 1 cm/s, 1 deg,
    /// 0.1 deg/s, 0.1 m/s^2, 10 cm.
    pub fn default_for(n_links: usize) -> Self {
        // Datasheet random walks converted to per-root-second:
        // 60 ug/sqrt(hr) and 0.01 deg/s/sqrt(hr), divided by 60.
        let sigma_a_psd = 60e-6 * 9.80665 / 60.0;
        let sigma_g_psd = 0.01_f64.to_radians() / 60.0;
        NoiseConfig {
            sigma_a: vec![sigma_a_psd; n_links],
            sigma_g: vec![sigma_g_psd; n_links],
            // Slow drift headroom so constants do not freeze the covariance.
            q_bias_a: (1.5e-5_f64).powi(2),
            q_bias_g: (5e-7_f64).powi(2),
            q_seg: 0.0,
            q_lever: 0.0,
            sigma_joint_pos: 0.01,
            sigma_joint_vel: 0.01,
            sigma_cam: 0.05,
            // The stationarity detector admits quasi-static motion up to its
            // thresholds, so the gravity reference carries that uncertainty,
            // not the (far smaller) accelerometer noise floor.
            sigma_grav: Some(0.05),
            init_sd_pos: 0.10,
            init_sd_vel: 0.01,
            init_sd_att: 1.0_f64.to_radians(),
            init_sd_bias_g: 0.1_f64.to_radians(),
            init_sd_bias_a: 0.1,
            init_sd_seg: 0.10,
            gravity_mode: GravityMode::Throughout,
        }
    }

    /// Initial error covariance from the configured SDs.
    pub fn initial_covariance(&self, x: &NavState) -> DMatrix<f64> {
        let layout = x.layout();
        let mut p = DMatrix::zeros(layout.error_dim(), layout.error_dim());
        for k in 0..layout.num_links() {
            let ls = layout.link(k);
            for (ofs, sd) in [
                (ls.p_e, self.init_sd_pos),
                (ls.v_e, self.init_sd_vel),
                (ls.phi_e, self.init_sd_att),
                (ls.ba_e, self.init_sd_bias_a),
                (ls.bg_e, self.init_sd_bias_g),
            ] {
                for i in ofs..ofs + 3 {
                    p[(i, i)] = sd * sd;
                }
            }
        }
        for slot in layout.seg_slots() {
            for i in slot.err_ofs..slot.err_ofs + 3 {
                p[(i, i)] = self.init_sd_seg * self.init_sd_seg;
            }
        }
        let lc = layout.lever_cam_err();
        for i in lc..lc + 3 {
            p[(i, i)] = self.init_sd_seg * self.init_sd_seg;
        }
        p
    }

    /// Discrete process noise for one step: PSD * dt on each block diagonal.
    pub fn discrete_q(&self, x: &NavState, dt: f64) -> DMatrix<f64> {
        let layout = x.layout();
        let mut q = DMatrix::zeros(layout.error_dim(), layout.error_dim());
        for k in 0..layout.num_links() {
            let ls = layout.link(k);
            let qv = self.sigma_a[k] * self.sigma_a[k] * dt;
            let qphi = self.sigma_g[k] * self.sigma_g[k] * dt;
            for i in 0..3 {
                q[(ls.v_e + i, ls.v_e + i)] = qv;
                q[(ls.phi_e + i, ls.phi_e + i)] = qphi;
                q[(ls.ba_e + i, ls.ba_e + i)] = self.q_bias_a * dt;
                q[(ls.bg_e + i, ls.bg_e + i)] = self.q_bias_g * dt;
            }
        }
        for slot in layout.seg_slots() {
            for i in 0..3 {
                q[(slot.err_ofs + i, slot.err_ofs + i)] = self.q_seg * dt;
            }
        }
        let lc = layout.lever_cam_err();
        for i in 0..3 {
            q[(lc + i, lc + i)] = self.q_lever * dt;
        }
        q
    }
}

/// EKF estimate: nominal state plus error covariance.
#[derive(Clone, Debug)]
pub struct EkfState {
    pub x: NavState,
    pub p: DMatrix<f64>,
    pub t: f64,
}

impl EkfState {
    pub fn new(x: NavState, noise: &NoiseConfig, t: f64) -> Self {
        let p = noise.initial_covariance(&x);
        EkfState { x, p, t }
    }
}

/// One correction channel at one epoch, carrying the raw sensor context the
/// nonlinear prediction needs. `measured` follows the residual convention
/// `residual = measured - predicted`.
#[derive(Clone, Debug)]
pub enum Channel {
    JointPos { joint: usize, sigma: f64 },
    JointVel { joint: usize, w_raw_i: Vector3<f64>, w_raw_j: Vector3<f64>, sigma: f64 },
    CameraPos { measured: Vector3<f64>, sigma: f64 },
    Gravity { link: usize, f_raw: Vector3<f64>, sigma: f64 },
}

impl Channel {
    pub fn dim(&self) -> usize {
        3
    }

    pub fn sigma(&self) -> f64 {
        match self {
            Channel::JointPos { sigma, .. }
            | Channel::JointVel { sigma, .. }
            | Channel::CameraPos { sigma, .. }
            | Channel::Gravity { sigma, .. } => *sigma,
        }
    }

    /// Nonlinear predicted value at an arbitrary state. Raw readings are
    /// corrected with the state's own bias estimates, so the prediction is a
    /// pure function of the state once the sensor context is fixed.
    pub fn predicted(&self, x: &NavState) -> Result<Vector3<f64>, MeasError> {
        match self {
            Channel::JointPos { joint, .. } => joint_pos_predicted(x, *joint),
            Channel::JointVel { joint, w_raw_i, w_raw_j, .. } => {
                let (i, j) = x.layout().model.joints[*joint];
                let w_hat_i = w_raw_i - x.bias_g(i);
                let w_hat_j = w_raw_j - x.bias_g(j);
                joint_vel_predicted(x, *joint, &w_hat_i, &w_hat_j)
            }
            Channel::CameraPos { .. } => Ok(camera_pos_predicted(x)),
            Channel::Gravity { link, f_raw, .. } => {
                let f_hat = f_raw - x.bias_a(*link);
                Ok(gravity_predicted(x, *link, &f_hat))
            }
        }
    }

    pub fn measured(&self, x: &NavState) -> Vector3<f64> {
        match self {
            Channel::JointPos { .. } | Channel::JointVel { .. } => Vector3::zeros(),
            Channel::CameraPos { measured, .. } => *measured,
            Channel::Gravity { .. } => x.layout().gravity(),
        }
    }

    pub fn residual(&self, x: &NavState) -> Result<Vector3<f64>, MeasError> {
        Ok(self.measured(x) - self.predicted(x)?)
    }
}

fn set_block3(m: &mut DMatrix<f64>, row: usize, col: usize, b: &Matrix3<f64>) {
    for r in 0..3 {
        for c in 0..3 {
            m[(row + r, col + c)] = b[(r, c)];
        }
    }
}

/// Continuous error dynamics matrix. Per link: position error feeds on
/// velocity error; velocity error couples to attitude through `-skew(R f)`
/// and to accelerometer bias through `-R`; attitude error couples to gyro
/// bias through `-R`. Biases and geometry have zero dynamics.
pub fn assemble_f(x: &NavState, imu: &[CorrectedImu]) -> DMatrix<f64> {
    let layout = x.layout();
    let n = layout.error_dim();
    let mut f = DMatrix::zeros(n, n);
    let eye = Matrix3::identity();
    for k in 0..layout.num_links() {
        let ls = layout.link(k);
        let r = x.q(k).matrix();
        let f_n = r * imu[k].f_hat;
        set_block3(&mut f, ls.p_e, ls.v_e, &eye);
        set_block3(&mut f, ls.v_e, ls.phi_e, &(-skew(&f_n)));
        set_block3(&mut f, ls.v_e, ls.ba_e, &(-r));
        set_block3(&mut f, ls.phi_e, ls.bg_e, &(-r));
    }
    f
}

/// First-order discrete covariance propagation:
/// `P' = (I + F dt) P (I + F dt)^T + Q_d`, resymmetrized.
pub fn propagate_cov(
    p: &DMatrix<f64>,
    f: &DMatrix<f64>,
    x: &NavState,
    noise: &NoiseConfig,
    dt: f64,
) -> DMatrix<f64> {
    let n = p.nrows();
    let phi = DMatrix::identity(n, n) + f * dt;
    let mut out = &phi * p * phi.transpose() + noise.discrete_q(x, dt);
    symmetrize(&mut out);
    out
}

pub fn symmetrize(p: &mut DMatrix<f64>) {
    let n = p.nrows();
    for r in 0..n {
        for c in (r + 1)..n {
            let avg = 0.5 * (p[(r, c)] + p[(c, r)]);
            p[(r, c)] = avg;
            p[(c, r)] = avg;
        }
    }
}

/// Measurement rows for one channel on the error-state columns.
///
/// Each row is the derivative of the channel's nonlinear prediction through
/// the error chart, so `residual ~ H e` for the true estimation error `e`.
pub fn assemble_h(channel: &Channel, x: &NavState) -> Result<DMatrix<f64>, MeasError> {
    let layout = x.layout();
    let mut h = DMatrix::zeros(3, layout.error_dim());
    match channel {
        Channel::JointPos { joint, .. } => {
            let &(i, j) = layout
                .model
                .joints
                .get(*joint)
                .ok_or(MeasError::UnknownJoint(*joint))?;
            let (li, lj) = (layout.link(i), layout.link(j));
            let r_i = x.q(i).matrix();
            let r_j = x.q(j).matrix();
            let l_ij = x.seg(i, j).ok_or(MeasError::UnknownJoint(*joint))?;
            let l_ji = x.seg(j, i).ok_or(MeasError::UnknownJoint(*joint))?;
            let eye = Matrix3::identity();
            set_block3(&mut h, 0, lj.p_e, &eye);
            set_block3(&mut h, 0, li.p_e, &(-eye));
            // d/dphi of R(exp(phi) q) l = -skew(R l).
            set_block3(&mut h, 0, lj.phi_e, &(-skew(&(r_j * l_ji))));
            set_block3(&mut h, 0, li.phi_e, &skew(&(r_i * l_ij)));
            let sj = layout.seg_slot(j, i).unwrap().err_ofs;
            let si = layout.seg_slot(i, j).unwrap().err_ofs;
            set_block3(&mut h, 0, sj, &r_j);
            set_block3(&mut h, 0, si, &(-r_i));
        }
        Channel::JointVel { joint, w_raw_i, w_raw_j, .. } => {
            let &(i, j) = layout
                .model
                .joints
                .get(*joint)
                .ok_or(MeasError::UnknownJoint(*joint))?;
            let (li, lj) = (layout.link(i), layout.link(j));
            let r_i = x.q(i).matrix();
            let r_j = x.q(j).matrix();
            let l_ij = x.seg(i, j).ok_or(MeasError::UnknownJoint(*joint))?;
            let l_ji = x.seg(j, i).ok_or(MeasError::UnknownJoint(*joint))?;
            let w_i = w_raw_i - x.bias_g(i);
            let w_j = w_raw_j - x.bias_g(j);
            let eye = Matrix3::identity();
            set_block3(&mut h, 0, lj.v_e, &eye);
            set_block3(&mut h, 0, li.v_e, &(-eye));
            set_block3(&mut h, 0, lj.phi_e, &(-skew(&(r_j * w_j.cross(&l_ji)))));
            set_block3(&mut h, 0, li.phi_e, &skew(&(r_i * w_i.cross(&l_ij))));
            // w_hat = w_raw - b_g, so d(w_hat x l)/d(db_g) = skew(l).
            set_block3(&mut h, 0, lj.bg_e, &(r_j * skew(&l_ji)));
            set_block3(&mut h, 0, li.bg_e, &(-r_i * skew(&l_ij)));
            let sj = layout.seg_slot(j, i).unwrap().err_ofs;
            let si = layout.seg_slot(i, j).unwrap().err_ofs;
            set_block3(&mut h, 0, sj, &(r_j * skew(&w_j)));
            set_block3(&mut h, 0, si, &(-r_i * skew(&w_i)));
        }
        Channel::CameraPos { .. } => {
            let cam = layout.model.camera_link;
            let lc = layout.link(cam);
            let r0 = x.q(cam).matrix();
            set_block3(&mut h, 0, lc.p_e, &Matrix3::identity());
            set_block3(&mut h, 0, lc.phi_e, &(-skew(&(r0 * x.lever_cam()))));
            set_block3(&mut h, 0, layout.lever_cam_err(), &r0);
        }
        Channel::Gravity { link, f_raw, .. } => {
            let ls = layout.link(*link);
            let r = x.q(*link).matrix();
            let f_hat = f_raw - x.bias_a(*link);
            let g_pred = -(r * f_hat);
            // residual = g - g_pred(x): the phi column of the prediction is
            // -skew(g_pred), the bias column +R; the residual rows negate.
            set_block3(&mut h, 0, ls.phi_e, &(-skew(&g_pred)));
            set_block3(&mut h, 0, ls.ba_e, &r);
        }
    }
    Ok(h)
}

/// Linear-algebra core of the Kalman update (Joseph form). Returns the error
/// estimate to inject and the posterior covariance.
pub fn kalman_update_core(
    p: &DMatrix<f64>,
    h: &DMatrix<f64>,
    r_meas: &DMatrix<f64>,
    residual: &DVector<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>), FilterError> {
    let n = p.nrows();
    if h.ncols() != n {
        return Err(FilterError::DimensionMismatch { expected: n, got: h.ncols() });
    }
    let pht = p * h.transpose();
    let s = h * &pht + r_meas;
    let chol = s
        .clone()
        .cholesky()
        .ok_or(FilterError::InnovationNotSpd)?;
    // K = P H^T S^-1 via the Cholesky solve of S K^T = (P H^T)^T.
    let k = chol.solve(&pht.transpose()).transpose();
    let e = &k * residual;
    let ikh = DMatrix::identity(n, n) - &k * h;
    let mut p_post = &ikh * p * ikh.transpose() + &k * r_meas * k.transpose();
    symmetrize(&mut p_post);
    Ok((e, p_post))
}

/// Full EKF measurement update: Joseph-form covariance, state corrected
/// through the error chart (the attitude reset happens inside the inject).
pub fn ekf_update(
    state: &EkfState,
    h: &DMatrix<f64>,
    residual: &DVector<f64>,
    r_meas: &DMatrix<f64>,
) -> Result<EkfState, FilterError> {
    let (e, p_post) = kalman_update_core(&state.p, h, r_meas, residual)?;
    let x = state.x.inject_error(&e)?;
    Ok(EkfState { x, p: p_post, t: state.t })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body::{build_layout, ChainModel, NavState};
    use approx::assert_abs_diff_eq;
    use std::sync::Arc;

    fn arm_zero_state() -> NavState {
        NavState::zeroed(Arc::new(build_layout(&ChainModel::arm3()).unwrap()))
    }

    #[test]
    fn f_structure_with_zero_imu_identity_attitude() {
        let x = arm_zero_state();
        let imu = vec![CorrectedImu { f_hat: Vector3::zeros(), w_hat: Vector3::zeros() }; 3];
        let f = assemble_f(&x, &imu);
        let layout = x.layout();
        for k in 0..3 {
            let ls = layout.link(k);
            for i in 0..3 {
                assert_eq!(f[(ls.p_e + i, ls.v_e + i)], 1.0);
                assert_eq!(f[(ls.v_e + i, ls.ba_e + i)], -1.0);
                assert_eq!(f[(ls.phi_e + i, ls.bg_e + i)], -1.0);
                for j in 0..3 {
                    assert_eq!(f[(ls.v_e + i, ls.phi_e + j)], 0.0);
                }
            }
        }
        // Bias and segment rows are all zero.
        let ba = layout.link(0).ba_e;
        assert!(f.row(ba).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn f_attitude_coupling_for_stationary_link() {
        let x = arm_zero_state();
        let g = x.layout().gravity();
        let mut imu = vec![CorrectedImu { f_hat: Vector3::zeros(), w_hat: Vector3::zeros() }; 3];
        // Stationary: f = -R^T g with R = I.
        imu[1].f_hat = -g;
        let f = assemble_f(&x, &imu);
        let ls = x.layout().link(1);
        let block = skew(&g);
        for r in 0..3 {
            for c in 0..3 {
                assert_abs_diff_eq!(f[(ls.v_e + r, ls.phi_e + c)], block[(r, c)], epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn propagate_cov_identity_cases() {
        let x = arm_zero_state();
        let n = x.layout().error_dim();
        let mut noise = NoiseConfig::default_for(3);
        noise.sigma_a = vec![0.0; 3];
        noise.sigma_g = vec![0.0; 3];
        noise.q_bias_a = 0.0;
        noise.q_bias_g = 0.0;
        let p = DMatrix::identity(n, n) * 0.3;
        let f = DMatrix::zeros(n, n);
        let p2 = propagate_cov(&p, &f, &x, &noise, 0.01);
        assert!((p2 - p).abs().max() < 1e-15);
    }

    #[test]
    fn propagate_cov_gyro_noise_enters_attitude_only() {
        let x = arm_zero_state();
        let n = x.layout().error_dim();
        let mut noise = NoiseConfig::default_for(3);
        noise.sigma_a = vec![0.0; 3];
        noise.sigma_g = vec![0.1; 3];
        noise.q_bias_a = 0.0;
        noise.q_bias_g = 0.0;
        let p = DMatrix::zeros(n, n);
        let f = DMatrix::zeros(n, n);
        let dt = 0.01;
        let p2 = propagate_cov(&p, &f, &x, &noise, dt);
        for k in 0..3 {
            let phi = x.layout().link(k).phi_e;
            for i in 0..3 {
                assert_abs_diff_eq!(p2[(phi + i, phi + i)], 0.1 * 0.1 * dt, epsilon = 1e-18);
            }
        }
        let total: f64 = p2.diagonal().iter().sum();
        assert_abs_diff_eq!(total, 9.0 * 0.1 * 0.1 * dt, epsilon = 1e-15);
    }

    #[test]
    fn default_noise_matches_trial_established_values() {
        let n = NoiseConfig::default_for(3);
        assert_eq!(n.sigma_joint_pos, 0.01);
        assert_eq!(n.sigma_joint_vel, 0.01);
        assert_eq!(n.sigma_cam, 0.05);
        assert_eq!(n.init_sd_pos, 0.10);
        assert_eq!(n.init_sd_vel, 0.01);
        assert!((n.init_sd_att - 1.0_f64.to_radians()).abs() < 1e-15);
        assert!((n.init_sd_bias_g - 0.1_f64.to_radians()).abs() < 1e-15);
        assert_eq!(n.init_sd_bias_a, 0.1);
        assert_eq!(n.init_sd_seg, 0.10);
        // Datasheet random walks per sqrt-hour, converted to per-sqrt-second.
        assert!((n.sigma_a[0] - 60e-6 * 9.80665 / 60.0).abs() < 1e-18);
        assert!((n.sigma_g[0] - 0.01_f64.to_radians() / 60.0).abs() < 1e-18);
    }

    #[test]
    fn scalar_textbook_update() {
        let p = DMatrix::from_element(1, 1, 1.0);
        let h = DMatrix::from_element(1, 1, 1.0);
        let r = DMatrix::from_element(1, 1, 1.0);
        let z = DVector::from_element(1, 1.0);
        let (e, p2) = kalman_update_core(&p, &h, &r, &z).unwrap();
        assert_abs_diff_eq!(e[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(p2[(0, 0)], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn zero_residual_keeps_state_and_shrinks_trace() {
        let x = arm_zero_state();
        let noise = NoiseConfig::default_for(3);
        let state = EkfState::new(x, &noise, 0.0);
        let ch = Channel::CameraPos { measured: Vector3::zeros(), sigma: 0.05 };
        let h = assemble_h(&ch, &state.x).unwrap();
        let r = DMatrix::identity(3, 3) * 0.05 * 0.05;
        let z = DVector::zeros(3);
        let next = ekf_update(&state, &h, &z, &r).unwrap();
        assert!((next.x.raw() - state.x.raw()).amax() < 1e-12);
        assert!(next.p.trace() <= state.p.trace() + 1e-15);
    }

    #[test]
    fn infinite_noise_limit_changes_nothing() {
        let x = arm_zero_state();
        let noise = NoiseConfig::default_for(3);
        let state = EkfState::new(x, &noise, 0.0);
        let ch = Channel::CameraPos { measured: Vector3::new(1.0, 2.0, 3.0), sigma: 1e6 };
        let h = assemble_h(&ch, &state.x).unwrap();
        let r = DMatrix::identity(3, 3) * 1e12;
        let resid = ch.residual(&state.x).unwrap();
        let next = ekf_update(&state, &h, &DVector::from_row_slice(resid.as_slice()), &r).unwrap();
        assert!((next.x.raw() - state.x.raw()).amax() < 1e-9);
    }

    #[test]
    fn h_joint_pos_term_audit() {
        // Identity attitudes, zero segments: +-I at positions and segments,
        // zero at attitude.
        let x = arm_zero_state();
        let ch = Channel::JointPos { joint: 0, sigma: 0.01 };
        let h = assemble_h(&ch, &x).unwrap();
        let layout = x.layout();
        let (i, j) = layout.model.joints[0];
        let (li, lj) = (layout.link(i), layout.link(j));
        for d in 0..3 {
            assert_eq!(h[(d, lj.p_e + d)], 1.0);
            assert_eq!(h[(d, li.p_e + d)], -1.0);
            assert_eq!(h[(d, layout.seg_slot(j, i).unwrap().err_ofs + d)], 1.0);
            assert_eq!(h[(d, layout.seg_slot(i, j).unwrap().err_ofs + d)], -1.0);
            for c in 0..3 {
                assert_eq!(h[(d, li.phi_e + c)], 0.0);
                assert_eq!(h[(d, lj.phi_e + c)], 0.0);
            }
        }
    }

    #[test]
    fn h_gravity_term_audit() {
        let x = arm_zero_state();
        let g = x.layout().gravity();
        // Stationary raw reading at identity attitude, zero bias estimate.
        let ch = Channel::Gravity { link: 0, f_raw: -g, sigma: 1e-3 };
        let h = assemble_h(&ch, &x).unwrap();
        let ls = x.layout().link(0);
        let want_phi = -skew(&g);
        for r in 0..3 {
            for c in 0..3 {
                assert_abs_diff_eq!(h[(r, ls.phi_e + c)], want_phi[(r, c)], epsilon = 1e-12);
            }
            assert_abs_diff_eq!(h[(r, ls.ba_e + r)], 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn singular_innovation_reported() {
        let p = DMatrix::zeros(2, 2);
        let h = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let r = DMatrix::zeros(1, 1);
        let z = DVector::zeros(1);
        assert_eq!(
            kalman_update_core(&p, &h, &r, &z).unwrap_err(),
            FilterError::InnovationNotSpd
        );
    }
}
