//! The four correction channels in their nonlinear (predicted-value) form:
//! joint-position and joint-velocity pseudo-measurements, camera position,
//! and stationary gravity referencing, plus the stationarity detector.
//!
//! Every channel is exposed as a predicted value; the filter residual is
//! always `measured - predicted`. Joint pseudo-measurements have measured
//! value zero (the constraint demands coincident joint positions and
//! velocities; the noise term models joint deformation).

use crate::body::NavState;
use crate::ins::ImuSample;
use nalgebra::Vector3;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MeasError {
    #[error("joint index {0} does not exist")]
    UnknownJoint(usize),
    #[error("stationarity window of {got:.3} s is shorter than {min:.3} s")]
    WindowTooShort { got: f64, min: f64 },
    #[error("stationarity window is empty")]
    EmptyWindow,
    #[error("stationarity window mixes links {a} and {b}")]
    MixedLinks { a: usize, b: usize },
}

/// Camera position fix in the navigation frame (SLAM output or an absolute
/// reference such as an optical tracker).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SlamFix {
    pub t: f64,
    pub p_meas: Vector3<f64>,
    pub sigma: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum JointObsKind {
    Position,
    Velocity,
}

/// A joint pseudo-measurement declaration: which joint, which kind, and the
/// deformation-noise SD (m or m/s).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JointObservation {
    pub joint: usize,
    pub kind: JointObsKind,
    pub sigma: f64,
}

/// Outcome of the stationarity detector for one link over one window.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StationaryFlag {
    pub link: usize,
    pub window: (f64, f64),
    pub is_stationary: bool,
}

/// Stationarity detector thresholds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StationaryParams {
    /// Shortest admissible window, seconds.
    pub min_window: f64,
    /// Gyro norm SD threshold, rad/s.
    pub theta_g: f64,
    /// Accel norm mean/SD threshold, m/s^2.
    pub theta_a: f64,
}

impl Default for StationaryParams {
    fn default() -> Self {
        StationaryParams { min_window: 0.25, theta_g: 0.02, theta_a: 0.08 }
    }
}

/// Joint position predicted from the two adjacent links:
/// `p_j - p_i + R_j l_ji - R_i l_ij`. The measured value is zero.
pub fn joint_pos_predicted(x: &NavState, joint: usize) -> Result<Vector3<f64>, MeasError> {
    let &(i, j) = x
        .layout()
        .model
        .joints
        .get(joint)
        .ok_or(MeasError::UnknownJoint(joint))?;
    let l_ij = x.seg(i, j).ok_or(MeasError::UnknownJoint(joint))?;
    let l_ji = x.seg(j, i).ok_or(MeasError::UnknownJoint(joint))?;
    Ok(x.p(j) - x.p(i) + x.q(j).matrix() * l_ji - x.q(i).matrix() * l_ij)
}

/// Joint velocity predicted from the two adjacent links:
/// `v_j - v_i + R_j (w_j x l_ji) - R_i (w_i x l_ij)` with bias-corrected
/// rates. The measured value is zero.
pub fn joint_vel_predicted(
    x: &NavState,
    joint: usize,
    w_hat_i: &Vector3<f64>,
    w_hat_j: &Vector3<f64>,
) -> Result<Vector3<f64>, MeasError> {
    let &(i, j) = x
        .layout()
        .model
        .joints
        .get(joint)
        .ok_or(MeasError::UnknownJoint(joint))?;
    let l_ij = x.seg(i, j).ok_or(MeasError::UnknownJoint(joint))?;
    let l_ji = x.seg(j, i).ok_or(MeasError::UnknownJoint(joint))?;
    Ok(x.v(j) - x.v(i) + x.q(j).matrix() * w_hat_j.cross(&l_ji)
        - x.q(i).matrix() * w_hat_i.cross(&l_ij))
}

/// Camera position predicted from the camera link: `p_0 + R_0 l_c`.
pub fn camera_pos_predicted(x: &NavState) -> Vector3<f64> {
    let cam = x.layout().model.camera_link;
    x.p(cam) + x.q(cam).matrix() * x.lever_cam()
}

/// Gravity vector predicted from a stationary link's accelerometer:
/// `-R_k f_hat`. The measured value is the configured gravity vector.
pub fn gravity_predicted(x: &NavState, link: usize, f_hat: &Vector3<f64>) -> Vector3<f64> {
    -(x.q(link).matrix() * f_hat)
}

/// Decides stationarity of one link from a trailing window of raw samples.
///
/// True iff the gyro norm SD, the deviation of the mean accel norm from
/// gravity, and the accel norm SD all stay below their thresholds.
pub fn detect_stationary(
    window: &[ImuSample],
    gravity_norm: f64,
    params: &StationaryParams,
) -> Result<StationaryFlag, MeasError> {
    let first = window.first().ok_or(MeasError::EmptyWindow)?;
    let last = window.last().unwrap();
    for s in window {
        if s.link != first.link {
            return Err(MeasError::MixedLinks { a: first.link, b: s.link });
        }
    }
    let span = last.t - first.t;
    if span < params.min_window {
        return Err(MeasError::WindowTooShort { got: span, min: params.min_window });
    }
    let n = window.len() as f64;
    let w_norms: Vec<f64> = window.iter().map(|s| s.w_raw.norm()).collect();
    let f_norms: Vec<f64> = window.iter().map(|s| s.f_raw.norm()).collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / n;
    let sd = |v: &[f64]| {
        let m = mean(v);
        (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n).sqrt()
    };
    let is_stationary = sd(&w_norms) < params.theta_g
        && (mean(&f_norms) - gravity_norm).abs() < params.theta_a
        && sd(&f_norms) < params.theta_a;
    Ok(StationaryFlag { link: first.link, window: (first.t, last.t), is_stationary })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body::{build_layout, ChainModel, NavState};
    use crate::rotation::Quat;
    use nalgebra::{DVector, Matrix3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;
    use std::sync::Arc;

    fn arm_state(rng: &mut ChaCha20Rng) -> NavState {
        let layout = Arc::new(build_layout(&ChainModel::arm3()).unwrap());
        let mut x = NavState::zeroed(layout.clone());
        for k in 0..3 {
            x.set_p(k, &Vector3::from_fn(|_, _| rng.random_range(-2.0..2.0)));
            x.set_v(k, &Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0)));
            x.set_q(
                k,
                &Quat::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                ),
            );
            x.set_bias_a(k, &Vector3::from_fn(|_, _| rng.random_range(-0.2..0.2)));
            x.set_bias_g(k, &Vector3::from_fn(|_, _| rng.random_range(-0.02..0.02)));
        }
        for slot in layout.seg_slots().to_vec() {
            let v = Vector3::from_fn(|_, _| rng.random_range(-0.3..0.3));
            x.set_seg(slot.owner, slot.other, &v);
        }
        x.set_lever_cam(&Vector3::from_fn(|_, _| rng.random_range(-0.2..0.2)));
        x
    }

    /// Places link j so the joint positions from both sides coincide.
    fn make_joint_consistent(x: &mut NavState, joint: usize) {
        let (i, j) = x.layout().model.joints[joint];
        let l_ij = x.seg(i, j).unwrap();
        let l_ji = x.seg(j, i).unwrap();
        let pj = x.p(i) + x.q(i).matrix() * l_ij - x.q(j).matrix() * l_ji;
        x.set_p(j, &pj);
    }

    #[test]
    fn joint_pos_zero_on_consistent_chain() {
        let mut rng = ChaCha20Rng::seed_from_u64(21);
        let mut x = arm_state(&mut rng);
        make_joint_consistent(&mut x, 0);
        make_joint_consistent(&mut x, 1);
        assert!(joint_pos_predicted(&x, 0).unwrap().norm() < 1e-12);
        assert!(joint_pos_predicted(&x, 1).unwrap().norm() < 1e-12);
    }

    #[test]
    fn joint_pos_linear_in_position_shift() {
        let mut rng = ChaCha20Rng::seed_from_u64(22);
        let mut x = arm_state(&mut rng);
        make_joint_consistent(&mut x, 0);
        let shift = Vector3::new(0.01, 0.0, 0.0);
        x.set_p(1, &(x.p(1) + shift));
        assert!((joint_pos_predicted(&x, 0).unwrap() - shift).norm() < 1e-12);
    }

    // Independent literal transcription of the joint equations, written with
    // explicit matrix algebra so a sign or frame slip in the library shows up.
    fn joint_pos_literal(x: &NavState, joint: usize) -> Vector3<f64> {
        let (i, j) = x.layout().model.joints[joint];
        let r_i: Matrix3<f64> = x.q(i).matrix();
        let r_j: Matrix3<f64> = x.q(j).matrix();
        x.p(j) + r_j * x.seg(j, i).unwrap() - (x.p(i) + r_i * x.seg(i, j).unwrap())
    }

    fn joint_vel_literal(
        x: &NavState,
        joint: usize,
        w_i: &Vector3<f64>,
        w_j: &Vector3<f64>,
    ) -> Vector3<f64> {
        let (i, j) = x.layout().model.joints[joint];
        let r_i: Matrix3<f64> = x.q(i).matrix();
        let r_j: Matrix3<f64> = x.q(j).matrix();
        x.v(j) + r_j * (w_j.cross(&x.seg(j, i).unwrap()))
            - (x.v(i) + r_i * (w_i.cross(&x.seg(i, j).unwrap())))
    }

    #[test]
    fn joint_channels_match_literal_transcription() {
        let mut rng = ChaCha20Rng::seed_from_u64(23);
        for _ in 0..10_000 {
            let x = arm_state(&mut rng);
            let joint = rng.random_range(0..2);
            let w_i = Vector3::from_fn(|_, _| rng.random_range(-3.0..3.0));
            let w_j = Vector3::from_fn(|_, _| rng.random_range(-3.0..3.0));
            let pos = joint_pos_predicted(&x, joint).unwrap();
            let vel = joint_vel_predicted(&x, joint, &w_i, &w_j).unwrap();
            assert!((pos - joint_pos_literal(&x, joint)).norm() < 1e-12);
            assert!((vel - joint_vel_literal(&x, joint, &w_i, &w_j)).norm() < 1e-12);
        }
    }

    #[test]
    fn joint_vel_with_zero_rates_is_velocity_difference() {
        let mut rng = ChaCha20Rng::seed_from_u64(24);
        let mut x = arm_state(&mut rng);
        let dv = Vector3::new(0.0, 0.02, 0.0);
        x.set_v(1, &(x.v(0) + dv));
        let z = Vector3::zeros();
        let got = joint_vel_predicted(&x, 0, &z, &z).unwrap();
        assert!((got - dv).norm() < 1e-12);
    }

    #[test]
    fn joint_vel_zero_for_rigid_rotation_about_joint() {
        // Both links rotate rigidly with the same angular velocity about the
        // shared joint; the constraint must vanish.
        let mut rng = ChaCha20Rng::seed_from_u64(25);
        let mut x = arm_state(&mut rng);
        make_joint_consistent(&mut x, 0);
        let w_n = Vector3::new(0.4, -0.8, 1.3);
        let (i, j) = x.layout().model.joints[0];
        let p_joint = x.p(i) + x.q(i).matrix() * x.seg(i, j).unwrap();
        for k in [i, j] {
            let v = w_n.cross(&(x.p(k) - p_joint));
            x.set_v(k, &v);
        }
        let w_i = x.q(i).matrix().transpose() * w_n;
        let w_j = x.q(j).matrix().transpose() * w_n;
        assert!(joint_vel_predicted(&x, 0, &w_i, &w_j).unwrap().norm() < 1e-12);
    }

    #[test]
    fn unknown_joint_rejected() {
        let mut rng = ChaCha20Rng::seed_from_u64(26);
        let x = arm_state(&mut rng);
        assert_eq!(joint_pos_predicted(&x, 7).unwrap_err(), MeasError::UnknownJoint(7));
    }

    #[test]
    fn camera_prediction_trivials() {
        let mut rng = ChaCha20Rng::seed_from_u64(27);
        let mut x = arm_state(&mut rng);
        x.set_lever_cam(&Vector3::zeros());
        assert!((camera_pos_predicted(&x) - x.p(0)).norm() < 1e-15);

        x.set_q(0, &Quat::identity());
        let lever = Vector3::new(0.1, 0.0, 0.0);
        x.set_lever_cam(&lever);
        assert!((camera_pos_predicted(&x) - (x.p(0) + lever)).norm() < 1e-15);
    }

    #[test]
    fn gravity_residual_zero_at_truth() {
        let mut rng = ChaCha20Rng::seed_from_u64(28);
        let x = arm_state(&mut rng);
        let g_n = x.layout().gravity();
        // Stationary truth: f = -R^T g, biases exactly known.
        let f_hat = -(x.q(1).matrix().transpose() * g_n);
        let residual = g_n - gravity_predicted(&x, 1, &f_hat);
        assert!(residual.norm() < 1e-12);
    }

    // Attitude estimation error phi produces residual ~ -g x phi (the
    // first term of the linearized gravity residual). Central perturbation
    // cancels the quadratic term, which at 0.01 rad already reaches 5e-4.
    #[test]
    fn gravity_residual_first_order_in_attitude_error() {
        let mut rng = ChaCha20Rng::seed_from_u64(29);
        let estimate = arm_state(&mut rng);
        let g_n = estimate.layout().gravity();
        let phi = Vector3::new(0.01, 0.0, 0.0);
        let residual_for = |sign: f64| {
            let mut e = DVector::zeros(estimate.layout().error_dim());
            let ofs = estimate.layout().link(1).phi_e;
            e[ofs] = sign * phi.x;
            let truth = estimate.inject_error(&e).unwrap();
            // Raw reading comes from the stationary truth; no bias error.
            let f_true = -(truth.q(1).matrix().transpose() * g_n);
            let f_hat = f_true + truth.bias_a(1) - estimate.bias_a(1);
            g_n - gravity_predicted(&estimate, 1, &f_hat)
        };
        let central = (residual_for(1.0) - residual_for(-1.0)) * 0.5;
        let expected = -g_n.cross(&phi);
        assert!(
            (central - expected).norm() < 1e-4,
            "residual {central:?} vs linear model {expected:?}"
        );
    }

    #[test]
    fn gravity_residual_from_accel_bias_error() {
        let layout = Arc::new(build_layout(&ChainModel::arm3()).unwrap());
        let estimate = NavState::zeroed(layout.clone());
        let g_n = layout.gravity();
        let delta_ba = Vector3::new(0.05, 0.0, 0.0);
        // True bias exceeds the estimate by delta_ba; identity attitude.
        let f_true = -(Quat::identity().matrix().transpose() * g_n);
        let f_raw = f_true + (estimate.bias_a(0) + delta_ba);
        let f_hat = f_raw - estimate.bias_a(0);
        let residual = g_n - gravity_predicted(&estimate, 0, &f_hat);
        assert!((residual - delta_ba).norm() < 1e-12);
    }

    fn window(link: usize, n: usize, dt: f64, f: Vector3<f64>, w: Vector3<f64>) -> Vec<ImuSample> {
        (0..n)
            .map(|i| ImuSample { t: i as f64 * dt, link, f_raw: f, w_raw: w })
            .collect()
    }

    #[test]
    fn detector_accepts_static_window_with_sensor_noise() {
        let mut rng = ChaCha20Rng::seed_from_u64(30);
        let g = 9.81;
        let samples: Vec<ImuSample> = (0..50)
            .map(|i| ImuSample {
                t: i as f64 * 0.01,
                link: 0,
                f_raw: Vector3::new(0.0, 0.0, -g)
                    + Vector3::from_fn(|_, _| rng.random_range(-3e-4..3e-4)),
                w_raw: Vector3::from_fn(|_, _| rng.random_range(-1e-4..1e-4)),
            })
            .collect();
        let flag = detect_stationary(&samples, g, &StationaryParams::default()).unwrap();
        assert!(flag.is_stationary);
        assert_eq!(flag.link, 0);
    }

    #[test]
    fn detector_rejects_swing() {
        let g = 9.81;
        let samples: Vec<ImuSample> = (0..50)
            .map(|i| {
                let t = i as f64 * 0.01;
                ImuSample {
                    t,
                    link: 2,
                    f_raw: Vector3::new(2.0 * (12.0 * t).sin(), 0.0, -g),
                    w_raw: Vector3::new(0.0, 3.0 * (6.0 * t).cos(), 0.0),
                }
            })
            .collect();
        let flag = detect_stationary(&samples, g, &StationaryParams::default()).unwrap();
        assert!(!flag.is_stationary);
    }

    #[test]
    fn detector_rejects_free_fall() {
        let samples = window(0, 50, 0.01, Vector3::zeros(), Vector3::zeros());
        let flag = detect_stationary(&samples, 9.81, &StationaryParams::default()).unwrap();
        assert!(!flag.is_stationary);
    }

    #[test]
    fn detector_rejects_short_window() {
        let samples = window(0, 10, 0.01, Vector3::new(0.0, 0.0, -9.81), Vector3::zeros());
        assert!(matches!(
            detect_stationary(&samples, 9.81, &StationaryParams::default()),
            Err(MeasError::WindowTooShort { .. })
        ));
    }
}
