//! Square-root unscented Kalman filter on the error-state chart.
//!
//! Sigma points live on the manifold: they are generated by injecting scaled
//! columns of the Cholesky factor through the error chart, so quaternion
//! blocks stay unit-norm. Covariance square roots propagate by QR over the
//! weighted sigma deviations with rank-1 Cholesky updates for the center
//! point, and measurement gains come from two triangular solves followed by
//! rank-1 downdates.

use crate::body::NavState;
use crate::ekf::{Channel, FilterError, NoiseConfig};
use crate::ins::{correct_imu, propagate_link_two_sample};
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Sigma-point spread parameters and the derived weights for `2L+1` points.
#[derive(Clone, Debug)]
pub struct SigmaWeights {
    pub alpha: f64,
    pub beta: f64,
    pub kappa: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub wm: Vec<f64>,
    pub wc: Vec<f64>,
}

impl SigmaWeights {
    pub fn new(l: usize, alpha: f64, beta: f64, kappa: f64) -> Self {
        let lf = l as f64;
        let lambda = alpha * alpha * (lf + kappa) - lf;
        let gamma = (lf + lambda).sqrt();
        let mut wm = vec![1.0 / (2.0 * (lf + lambda)); 2 * l + 1];
        let mut wc = wm.clone();
        wm[0] = lambda / (lf + lambda);
        wc[0] = wm[0] + 1.0 - alpha * alpha + beta;
        SigmaWeights { alpha, beta, kappa, lambda, gamma, wm, wc }
    }

    /// Reference settings: alpha = 1, beta = 2, kappa = 0.
    pub fn standard(l: usize) -> Self {
        SigmaWeights::new(l, 1.0, 2.0, 0.0)
    }

    pub fn num_points(&self) -> usize {
        self.wm.len()
    }
}

/// SRUKF estimate: nominal state and lower-triangular covariance factor.
#[derive(Clone, Debug)]
pub struct SrukfState {
    pub x: NavState,
    /// Lower-triangular, `S S^T` is the error covariance.
    pub s: DMatrix<f64>,
    pub t: f64,
}

#[derive(Debug, Error, PartialEq)]
pub enum DowndateError {
    #[error("rank-1 downdate lost positive definiteness at row {0}")]
    NotPositiveDefinite(usize),
}

impl SrukfState {
    pub fn new(x: NavState, noise: &NoiseConfig, t: f64) -> Self {
        let p = noise.initial_covariance(&x);
        let n = p.nrows();
        let mut s = DMatrix::zeros(n, n);
        for i in 0..n {
            s[(i, i)] = p[(i, i)].sqrt();
        }
        SrukfState { x, s, t }
    }

    pub fn min_diag(&self) -> f64 {
        (0..self.s.nrows()).map(|i| self.s[(i, i)]).fold(f64::INFINITY, f64::min)
    }

    /// Reconstructed covariance `S S^T`.
    pub fn covariance(&self) -> DMatrix<f64> {
        &self.s * self.s.transpose()
    }
}

/// Rank-1 Cholesky update/downdate in place: `S S^T + sign * v v^T`.
///
/// `S` lower-triangular with positive diagonal; `sign` is +1 or -1. The
/// downdate fails if the result would lose positive definiteness.
pub fn cholupdate(s: &mut DMatrix<f64>, v: &DVector<f64>, sign: f64) -> Result<(), DowndateError> {
    let n = s.nrows();
    let mut w = v.clone();
    for k in 0..n {
        // A zero entry leaves this column and the workspace untouched.
        if w[k] == 0.0 {
            continue;
        }
        let skk = s[(k, k)];
        let d = skk * skk + sign * w[k] * w[k];
        if d <= 0.0 {
            return Err(DowndateError::NotPositiveDefinite(k));
        }
        let r = d.sqrt();
        let c = r / skk;
        let sfac = w[k] / skk;
        s[(k, k)] = r;
        for i in (k + 1)..n {
            s[(i, k)] = (s[(i, k)] + sign * sfac * w[i]) / c;
            w[i] = c * w[i] - sfac * s[(i, k)];
        }
    }
    Ok(())
}

/// Weighted rank-1 update: `S S^T + weight * v v^T` for any real weight.
pub fn cholupdate_weighted(
    s: &mut DMatrix<f64>,
    v: &DVector<f64>,
    weight: f64,
) -> Result<(), DowndateError> {
    if weight == 0.0 {
        return Ok(());
    }
    let scaled = v * weight.abs().sqrt();
    cholupdate(s, &scaled, weight.signum())
}

/// Lower-triangular factor `S` with `S S^T = A A^T`, via QR of `A^T`.
/// Diagonal signs are normalized positive.
pub fn sqrt_factor_from_wide(a: &DMatrix<f64>) -> DMatrix<f64> {
    sqrt_factor_from_tall(a.transpose())
}

/// Same factor from the already-transposed (tall) matrix; consumes it.
pub fn sqrt_factor_from_tall(a_t: DMatrix<f64>) -> DMatrix<f64> {
    let n = a_t.ncols();
    let qr = a_t.qr();
    let r = qr.r();
    let mut s = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            s[(i, j)] = r[(j, i)];
        }
    }
    for j in 0..n {
        if s[(j, j)] < 0.0 {
            for i in j..n {
                s[(i, j)] = -s[(i, j)];
            }
        }
    }
    s
}

/// Square-root factor of the weighted sigma spread plus additive noise:
/// QR over the non-center deviations, additive-noise square-root columns
/// folded in as rank-1 updates, then the center deviation at its
/// covariance weight. Algebraically identical to the QR of the augmented
/// block matrix.
pub fn sr_factor_from_devs(
    devs: &[DVector<f64>],
    sqrt_q_cols: &DMatrix<f64>,
    w: &SigmaWeights,
) -> Result<DMatrix<f64>, FilterError> {
    let n = devs[0].len();
    let m = devs.len() - 1;
    let wc1 = w.wc[1].sqrt();
    let mut a_t = DMatrix::zeros(m, n);
    for (idx, dev) in devs.iter().skip(1).enumerate() {
        for r in 0..n {
            a_t[(idx, r)] = dev[r] * wc1;
        }
    }
    let mut s = sqrt_factor_from_tall(a_t);
    let mut col = DVector::zeros(n);
    for c in 0..sqrt_q_cols.ncols() {
        let src = sqrt_q_cols.column(c);
        if src.iter().all(|&v| v == 0.0) {
            continue;
        }
        col.copy_from(&src);
        cholupdate(&mut s, &col, 1.0).map_err(|_| FilterError::FactorNotPositive(0.0))?;
    }
    cholupdate_weighted(&mut s, &devs[0], w.wc[0])
        .map_err(|_| FilterError::FactorNotPositive(0.0))?;
    Ok(s)
}

/// Result of the square-root measurement core.
pub struct SrCorrection {
    /// Error-state correction to inject.
    pub e: DVector<f64>,
    /// Posterior factor.
    pub s_post: DMatrix<f64>,
    /// Innovation square root.
    pub s_y: DMatrix<f64>,
}

/// Pure linear-algebra measurement update of the square-root filter:
/// innovation factor by QR + center update, gain by two triangular solves,
/// posterior factor by rank-1 downdates of the gain columns.
pub fn sr_measurement_core(
    s: &DMatrix<f64>,
    devs: &[DVector<f64>],
    ys: &[DVector<f64>],
    measured: &DVector<f64>,
    sqrt_r: &DMatrix<f64>,
    w: &SigmaWeights,
) -> Result<SrCorrection, FilterError> {
    let m = measured.len();
    let n = s.nrows();
    let points = devs.len();
    let mut y_mean = DVector::zeros(m);
    for (i, y) in ys.iter().enumerate() {
        y_mean += y * w.wm[i];
    }
    let dys: Vec<DVector<f64>> = ys.iter().map(|y| y - &y_mean).collect();

    let wc1 = w.wc[1].sqrt();
    let mut a_t = DMatrix::zeros(points - 1 + m, m);
    for (idx, dy) in dys.iter().skip(1).enumerate() {
        for r in 0..m {
            a_t[(idx, r)] = dy[r] * wc1;
        }
    }
    for c in 0..m {
        for r in 0..m {
            a_t[(points - 1 + c, r)] = sqrt_r[(r, c)];
        }
    }
    let mut s_y = sqrt_factor_from_tall(a_t);
    cholupdate_weighted(&mut s_y, &dys[0], w.wc[0])
        .map_err(|_| FilterError::InnovationNotSpd)?;
    for i in 0..m {
        if s_y[(i, i)] <= 0.0 {
            return Err(FilterError::InnovationNotSpd);
        }
    }

    // Cross covariance as one matrix product over weighted deviations.
    let mut d = DMatrix::zeros(n, points);
    let mut yw = DMatrix::zeros(points, m);
    for i in 0..points {
        d.column_mut(i).copy_from(&devs[i]);
        for r in 0..m {
            yw[(i, r)] = w.wc[i] * dys[i][r];
        }
    }
    let p_xy = &d * &yw;

    // K = P_xy S_y^-T S_y^-1 via two triangular solves.
    let w1 = s_y
        .solve_lower_triangular(&p_xy.transpose())
        .ok_or(FilterError::InnovationNotSpd)?;
    let k = s_y
        .transpose()
        .solve_upper_triangular(&w1)
        .ok_or(FilterError::InnovationNotSpd)?
        .transpose();

    let residual = measured - &y_mean;
    let e = &k * residual;

    let u = &k * &s_y;
    let mut s_post = s.clone();
    for c in 0..m {
        let col = DVector::from_column_slice(u.column(c).as_slice());
        cholupdate(&mut s_post, &col, -1.0)
            .map_err(|_| FilterError::FactorNotPositive(0.0))?;
    }
    Ok(SrCorrection { e, s_post, s_y })
}

/// Chart deviations of the sigma set: `[0, +gamma S, -gamma S]` columns.
fn sigma_devs(s: &DMatrix<f64>, w: &SigmaWeights) -> Vec<DVector<f64>> {
    let n = s.nrows();
    let mut devs = vec![DVector::zeros(n); 2 * n + 1];
    fill_sigma_devs(s, w, &mut devs);
    devs
}

fn fill_sigma_devs(s: &DMatrix<f64>, w: &SigmaWeights, devs: &mut [DVector<f64>]) {
    let n = s.nrows();
    devs[0].fill(0.0);
    for c in 0..n {
        for r in 0..n {
            let v = w.gamma * s[(r, c)];
            devs[1 + c][r] = v;
            devs[1 + n + c][r] = -v;
        }
    }
}

/// Reusable sigma-point buffers for the hot filter loop.
struct SigmaScratch {
    devs: Vec<DVector<f64>>,
    points: Vec<NavState>,
}

impl SigmaScratch {
    fn new(x: &NavState) -> Self {
        let n = x.layout().error_dim();
        SigmaScratch {
            devs: vec![DVector::zeros(n); 2 * n + 1],
            points: vec![x.clone(); 2 * n + 1],
        }
    }

    /// Regenerates points about `x` with factor `s`.
    fn fill(&mut self, x: &NavState, s: &DMatrix<f64>, w: &SigmaWeights) -> Result<(), FilterError> {
        fill_sigma_devs(s, w, &mut self.devs);
        for (dev, pt) in self.devs.iter().zip(&mut self.points) {
            x.inject_error_into(dev, pt)?;
        }
        Ok(())
    }
}

/// The `2L+1` sigma points of a state, generated through the error chart.
pub fn sigma_points(state: &SrukfState, w: &SigmaWeights) -> Result<Vec<NavState>, FilterError> {
    let min_diag = state.min_diag();
    if min_diag <= 0.0 {
        return Err(FilterError::FactorNotPositive(min_diag));
    }
    sigma_devs(&state.s, w)
        .iter()
        .map(|d| state.x.inject_error(d).map_err(FilterError::from))
        .collect()
}

/// Iterated weighted chart mean of a set of states. On return `devs` holds
/// the chart deviation of every point about the final mean.
fn chart_mean_with_devs(
    points: &[NavState],
    seed: &NavState,
    w: &SigmaWeights,
    devs: &mut [DVector<f64>],
) -> Result<NavState, FilterError> {
    let n = seed.layout().error_dim();
    let mut mean = seed.clone();
    let mut next = seed.clone();
    let mut shift = DVector::zeros(n);
    for iter in 0..5 {
        shift.fill(0.0);
        for (i, pt) in points.iter().enumerate() {
            pt.retract_error_into(&mean, &mut devs[i])?;
            if w.wm[i] != 0.0 {
                shift.axpy(w.wm[i], &devs[i], 1.0);
            }
        }
        if shift.amax() < 1e-12 || iter == 4 {
            break;
        }
        mean.inject_error_into(&shift, &mut next)?;
        std::mem::swap(&mut mean, &mut next);
    }
    // The loop always exits right after a retract pass about the final mean,
    // so `devs` is consistent with it except for the sub-1e-12 residual
    // shift, which sits far below the factor's working precision.
    Ok(mean)
}

/// Time update: every sigma point runs the full nonlinear strapdown step
/// (with its own bias estimates applied to the raw readings), the new mean
/// is the iterated chart mean, and the factor comes from QR + center update.
pub fn srukf_propagate(
    state: &SrukfState,
    raw_start: &[(nalgebra::Vector3<f64>, nalgebra::Vector3<f64>)],
    raw_end: &[(nalgebra::Vector3<f64>, nalgebra::Vector3<f64>)],
    noise: &NoiseConfig,
    dt: f64,
    w: &SigmaWeights,
) -> Result<SrukfState, FilterError> {
    let layout = state.x.layout().clone();
    let gravity = layout.gravity();
    let min_diag = state.min_diag();
    if min_diag <= 0.0 {
        return Err(FilterError::FactorNotPositive(min_diag));
    }
    let mut scratch = SigmaScratch::new(&state.x);
    scratch.fill(&state.x, &state.s, w)?;
    for pt in &mut scratch.points {
        for k in 0..layout.num_links() {
            let start = correct_imu(&raw_start[k].0, &raw_start[k].1, &pt.bias_a(k), &pt.bias_g(k));
            let end = correct_imu(&raw_end[k].0, &raw_end[k].1, &pt.bias_a(k), &pt.bias_g(k));
            let (p, v, q) = propagate_link_two_sample(
                &pt.p(k),
                &pt.v(k),
                &pt.q(k),
                &start,
                &end,
                &gravity,
                dt,
            )?;
            pt.set_p(k, &p);
            pt.set_v(k, &v);
            pt.set_q(k, &q);
        }
    }
    let seed = scratch.points[0].clone();
    let mean = chart_mean_with_devs(&scratch.points, &seed, w, &mut scratch.devs)?;
    let qd = noise.discrete_q(&mean, dt);
    let n = qd.nrows();
    let mut sqrt_q = DMatrix::zeros(n, n);
    for i in 0..n {
        sqrt_q[(i, i)] = qd[(i, i)].sqrt();
    }
    let s = sr_factor_from_devs(&scratch.devs, &sqrt_q, w)?;
    if !s.iter().all(|v| v.is_finite()) {
        return Err(FilterError::NonFinite);
    }
    Ok(SrukfState { x: mean, s, t: state.t + dt })
}

/// A channel skipped by the rejected-downdate policy.
#[derive(Clone, Debug)]
pub struct SkippedChannel {
    pub index: usize,
    pub reason: String,
}

/// Measurement update. All channels of the epoch stack into a single
/// unscented update on one sigma set, mirroring the EKF's schedule. If a
/// rank-1 downdate rejects the stacked step (factor would lose positive
/// definiteness), the epoch falls back to sequential per-channel processing
/// so the offending channel alone can be skipped and reported.
pub fn srukf_update(
    state: &SrukfState,
    channels: &[Channel],
    w: &SigmaWeights,
) -> Result<(SrukfState, Vec<SkippedChannel>), FilterError> {
    if channels.is_empty() {
        return Ok((state.clone(), Vec::new()));
    }
    let mut scratch = SigmaScratch::new(&state.x);
    match srukf_update_stacked(state, channels, w, &mut scratch) {
        Ok(next) => Ok((next, Vec::new())),
        Err(FilterError::FactorNotPositive(_)) | Err(FilterError::InnovationNotSpd) => {
            srukf_update_sequential(state, channels, w, &mut scratch)
        }
        Err(other) => Err(other),
    }
}

fn srukf_update_stacked(
    state: &SrukfState,
    channels: &[Channel],
    w: &SigmaWeights,
    scratch: &mut SigmaScratch,
) -> Result<SrukfState, FilterError> {
    let m = 3 * channels.len();
    scratch.fill(&state.x, &state.s, w)?;
    let mut ys: Vec<DVector<f64>> = vec![DVector::zeros(m); scratch.points.len()];
    for (pt, y) in scratch.points.iter().zip(&mut ys) {
        for (ci, channel) in channels.iter().enumerate() {
            let v = channel.predicted(pt)?;
            y[3 * ci] = v.x;
            y[3 * ci + 1] = v.y;
            y[3 * ci + 2] = v.z;
        }
    }
    let mut measured = DVector::zeros(m);
    let mut sqrt_r = DMatrix::zeros(m, m);
    for (ci, channel) in channels.iter().enumerate() {
        let z = channel.measured(&state.x);
        for i in 0..3 {
            measured[3 * ci + i] = z[i];
            sqrt_r[(3 * ci + i, 3 * ci + i)] = channel.sigma();
        }
    }
    let corr = sr_measurement_core(&state.s, &scratch.devs, &ys, &measured, &sqrt_r, w)?;
    let x = state.x.inject_error(&corr.e)?;
    Ok(SrukfState { x, s: corr.s_post, t: state.t })
}

fn srukf_update_sequential(
    state: &SrukfState,
    channels: &[Channel],
    w: &SigmaWeights,
    scratch: &mut SigmaScratch,
) -> Result<(SrukfState, Vec<SkippedChannel>), FilterError> {
    let mut current = state.clone();
    let mut skipped = Vec::new();
    let mut ys: Vec<DVector<f64>> = vec![DVector::zeros(3); scratch.points.len()];
    for (index, channel) in channels.iter().enumerate() {
        scratch.fill(&current.x, &current.s, w)?;
        for (pt, y) in scratch.points.iter().zip(&mut ys) {
            let v = channel.predicted(pt)?;
            y[0] = v.x;
            y[1] = v.y;
            y[2] = v.z;
        }
        let measured = DVector::from_column_slice(channel.measured(&current.x).as_slice());
        let mut sqrt_r = DMatrix::zeros(3, 3);
        for i in 0..3 {
            sqrt_r[(i, i)] = channel.sigma();
        }
        match sr_measurement_core(&current.s, &scratch.devs, &ys, &measured, &sqrt_r, w) {
            Ok(corr) => {
                let x = current.x.inject_error(&corr.e)?;
                current = SrukfState { x, s: corr.s_post, t: current.t };
            }
            Err(FilterError::FactorNotPositive(_)) | Err(FilterError::InnovationNotSpd) => {
                log::warn!("srukf: channel {index} rejected by downdate, skipping");
                skipped.push(SkippedChannel { index, reason: "downdate rejected".into() });
            }
            Err(other) => return Err(other),
        }
    }
    Ok((current, skipped))
}
