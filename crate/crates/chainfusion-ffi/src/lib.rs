//! C ABI for the pose-fusion engine.
//!
//! Opaque handles (`cf_chain`, `cf_filter`), integer status codes, and plain
//! double buffers; the matching declarations live in `include/chainfusion.h`.
//! Every function is panic-safe at the boundary: internal panics surface as
//! `CF_INTERNAL_PANIC` instead of unwinding into the caller.
//!
//! Handles are not thread-safe; guard a handle with a mutex to share it.

use chainfusion::body::{build_layout, ChainModel, NavState};
use chainfusion::ekf::{FilterError, NoiseConfig};
use chainfusion::meas::SlamFix;
use chainfusion::rotation::Quat;
use chainfusion::runner::{FilterKind, OnlineFilter, RunnerConfig};
use nalgebra::Vector3;
use std::ffi::{c_char, c_int, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;

/// Status codes returned by every fallible entry point.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum CfStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    InvalidUtf8 = 3,
    IoError = 4,
    BadConfig = 5,
    DimensionMismatch = 6,
    FilterDiverged = 7,
    InternalPanic = 8,
}

/// Opaque chain description handle.
pub struct CfChain {
    model: ChainModel,
    state_dim: usize,
    error_dim: usize,
}

/// Opaque filter handle.
pub struct CfFilter {
    inner: OnlineFilter,
    n_links: usize,
    started: bool,
    initial: NavState,
    kind: FilterKind,
    t0: f64,
}

fn guard<F: FnOnce() -> CfStatus>(f: F) -> CfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => CfStatus::InternalPanic,
    }
}

unsafe fn write3(dst: *mut f64, v: &Vector3<f64>) {
    *dst.add(0) = v.x;
    *dst.add(1) = v.y;
    *dst.add(2) = v.z;
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Static description of a status code.
#[no_mangle]
pub extern "C" fn cf_status_message(status: CfStatus) -> *const c_char {
    let msg: &'static str = match status {
        CfStatus::Ok => "ok\0",
        CfStatus::NullArgument => "null argument\0",
        CfStatus::InvalidArgument => "invalid argument\0",
        CfStatus::InvalidUtf8 => "path is not valid UTF-8\0",
        CfStatus::IoError => "file could not be read or parsed\0",
        CfStatus::BadConfig => "configuration is invalid\0",
        CfStatus::DimensionMismatch => "buffer length does not match the chain\0",
        CfStatus::FilterDiverged => "filter diverged\0",
        CfStatus::InternalPanic => "internal panic\0",
    };
    msg.as_ptr() as *const c_char
}

fn chain_out(model: ChainModel, out: *mut *mut CfChain) -> CfStatus {
    let layout = match build_layout(&model) {
        Ok(l) => l,
        Err(_) => return CfStatus::BadConfig,
    };
    let chain = Box::new(CfChain {
        state_dim: layout.state_dim(),
        error_dim: layout.error_dim(),
        model,
    });
    unsafe { *out = Box::into_raw(chain) };
    CfStatus::Ok
}

/// Builds the stock 3-link arm chain (camera on link 0).
#[no_mangle]
pub extern "C" fn cf_chain_arm3(out_chain: *mut *mut CfChain) -> CfStatus {
    if out_chain.is_null() {
        return CfStatus::NullArgument;
    }
    guard(|| chain_out(ChainModel::arm3(), out_chain))
}

/// Loads a chain description from a key-value file.
///
/// # Safety
/// `path` must be a valid NUL-terminated string; `out_chain` must be a valid
/// pointer to receive the handle.
#[no_mangle]
pub unsafe extern "C" fn cf_chain_load(
    path: *const c_char,
    out_chain: *mut *mut CfChain,
) -> CfStatus {
    if path.is_null() || out_chain.is_null() {
        return CfStatus::NullArgument;
    }
    guard(|| {
        let Ok(path) = CStr::from_ptr(path).to_str() else {
            return CfStatus::InvalidUtf8;
        };
        match chainfusion::io::read_chain(std::path::Path::new(path)) {
            Ok(model) => chain_out(model, out_chain),
            Err(_) => CfStatus::IoError,
        }
    })
}

/// Releases a chain handle. Accepts NULL.
///
/// # Safety
/// `chain` must have come from a `cf_chain_*` constructor and not yet be freed.
#[no_mangle]
pub unsafe extern "C" fn cf_chain_free(chain: *mut CfChain) {
    if !chain.is_null() {
        drop(Box::from_raw(chain));
    }
}

/// # Safety
/// `chain` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn cf_chain_num_links(chain: *const CfChain) -> u32 {
    if chain.is_null() {
        return 0;
    }
    (*chain).model.num_links() as u32
}

/// # Safety
/// `chain` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn cf_chain_state_dim(chain: *const CfChain) -> u32 {
    if chain.is_null() {
        return 0;
    }
    (*chain).state_dim as u32
}

/// # Safety
/// `chain` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn cf_chain_error_dim(chain: *const CfChain) -> u32 {
    if chain.is_null() {
        return 0;
    }
    (*chain).error_dim as u32
}

/// Creates a filter over a chain. `kind`: 0 = error-state EKF,
/// 1 = square-root UKF. The state starts at zero with identity attitudes;
/// set known initial link states before the first step.
///
/// # Safety
/// `chain` must be a live handle; `out_filter` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn cf_filter_new(
    chain: *const CfChain,
    kind: c_int,
    t0: f64,
    out_filter: *mut *mut CfFilter,
) -> CfStatus {
    if chain.is_null() || out_filter.is_null() {
        return CfStatus::NullArgument;
    }
    guard(|| {
        let kind = match kind {
            0 => FilterKind::Ekf,
            1 => FilterKind::Srukf,
            _ => return CfStatus::InvalidArgument,
        };
        let model = (*chain).model.clone();
        let layout = match build_layout(&model) {
            Ok(l) => l,
            Err(_) => return CfStatus::BadConfig,
        };
        let n = model.num_links();
        let initial = NavState::zeroed(Arc::new(layout));
        let runner = RunnerConfig::new(kind, NoiseConfig::default_for(n));
        let filter = Box::new(CfFilter {
            inner: OnlineFilter::new(initial.clone(), t0, runner),
            n_links: n,
            started: false,
            initial,
            kind,
            t0,
        });
        *out_filter = Box::into_raw(filter);
        CfStatus::Ok
    })
}

/// Releases a filter handle. Accepts NULL.
///
/// # Safety
/// `filter` must have come from `cf_filter_new` and not yet be freed.
#[no_mangle]
pub unsafe extern "C" fn cf_filter_free(filter: *mut CfFilter) {
    if !filter.is_null() {
        drop(Box::from_raw(filter));
    }
}

/// Sets one link's initial position, velocity, and attitude (scalar-first
/// quaternion). Only valid before the first step.
///
/// # Safety
/// Pointers must be valid for reads of 3, 3, and 4 doubles.
#[no_mangle]
pub unsafe extern "C" fn cf_filter_set_link_state(
    filter: *mut CfFilter,
    link: u32,
    pos: *const f64,
    vel: *const f64,
    quat_wxyz: *const f64,
) -> CfStatus {
    if filter.is_null() || pos.is_null() || vel.is_null() || quat_wxyz.is_null() {
        return CfStatus::NullArgument;
    }
    guard(|| {
        let f = &mut *filter;
        if f.started {
            return CfStatus::InvalidArgument;
        }
        let link = link as usize;
        if link >= f.n_links {
            return CfStatus::InvalidArgument;
        }
        let p = Vector3::new(*pos.add(0), *pos.add(1), *pos.add(2));
        let v = Vector3::new(*vel.add(0), *vel.add(1), *vel.add(2));
        let q = Quat::from_parts(
            *quat_wxyz.add(0),
            Vector3::new(*quat_wxyz.add(1), *quat_wxyz.add(2), *quat_wxyz.add(3)),
        );
        if !(p.iter().all(|x| x.is_finite()) && v.iter().all(|x| x.is_finite())) {
            return CfStatus::InvalidArgument;
        }
        f.initial.set_p(link, &p);
        f.initial.set_v(link, &v);
        f.initial.set_q(link, &q);
        f.inner = OnlineFilter::new(
            f.initial.clone(),
            f.t0,
            RunnerConfig::new(f.kind, NoiseConfig::default_for(f.n_links)),
        );
        CfStatus::Ok
    })
}

/// Queues a camera-position fix; it is applied at the next step.
///
/// # Safety
/// `pos` must be valid for a read of 3 doubles.
#[no_mangle]
pub unsafe extern "C" fn cf_filter_push_fix(
    filter: *mut CfFilter,
    t: f64,
    pos: *const f64,
    sigma: f64,
) -> CfStatus {
    if filter.is_null() || pos.is_null() {
        return CfStatus::NullArgument;
    }
    guard(|| {
        if !(sigma > 0.0) {
            return CfStatus::InvalidArgument;
        }
        let p = Vector3::new(*pos.add(0), *pos.add(1), *pos.add(2));
        if !p.iter().all(|x| x.is_finite()) {
            return CfStatus::InvalidArgument;
        }
        (*filter).inner.push_fix(SlamFix { t, p_meas: p, sigma });
        CfStatus::Ok
    })
}

/// Advances to the IMU epoch at time `t`. `raw` holds `num_links * 6`
/// doubles, per link `[fx fy fz wx wy wz]` (specific force m/s^2, angular
/// rate rad/s).
///
/// # Safety
/// `raw` must be valid for a read of `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn cf_filter_step(
    filter: *mut CfFilter,
    t: f64,
    raw: *const f64,
    len: usize,
) -> CfStatus {
    if filter.is_null() || raw.is_null() {
        return CfStatus::NullArgument;
    }
    guard(|| {
        let f = &mut *filter;
        if len != f.n_links * 6 {
            return CfStatus::DimensionMismatch;
        }
        let slice = std::slice::from_raw_parts(raw, len);
        if !slice.iter().all(|x| x.is_finite()) {
            return CfStatus::InvalidArgument;
        }
        if f.started && t <= f.inner.time() {
            return CfStatus::InvalidArgument;
        }
        let readings: Vec<(Vector3<f64>, Vector3<f64>)> = (0..f.n_links)
            .map(|k| {
                let b = &slice[k * 6..k * 6 + 6];
                (Vector3::new(b[0], b[1], b[2]), Vector3::new(b[3], b[4], b[5]))
            })
            .collect();
        match f.inner.step(t, &readings) {
            Ok(()) => {
                f.started = true;
                CfStatus::Ok
            }
            Err(
                FilterError::NonFinite
                | FilterError::FactorNotPositive(_)
                | FilterError::InnovationNotSpd,
            ) => CfStatus::FilterDiverged,
            Err(_) => CfStatus::InvalidArgument,
        }
    })
}

/// Current estimate time.
///
/// # Safety
/// `out_t` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn cf_filter_time(filter: *const CfFilter, out_t: *mut f64) -> CfStatus {
    if filter.is_null() || out_t.is_null() {
        return CfStatus::NullArgument;
    }
    *out_t = (*filter).inner.time();
    CfStatus::Ok
}

/// One link's estimated position, velocity, and attitude. Any output
/// pointer may be NULL to skip it.
///
/// # Safety
/// Non-NULL outputs must be valid for writes of 3, 3, and 4 doubles.
#[no_mangle]
pub unsafe extern "C" fn cf_filter_link_pose(
    filter: *const CfFilter,
    link: u32,
    out_pos: *mut f64,
    out_vel: *mut f64,
    out_quat_wxyz: *mut f64,
) -> CfStatus {
    if filter.is_null() {
        return CfStatus::NullArgument;
    }
    guard(|| {
        let f = &*filter;
        let link = link as usize;
        if link >= f.n_links {
            return CfStatus::InvalidArgument;
        }
        let x = f.inner.nav();
        if !out_pos.is_null() {
            write3(out_pos, &x.p(link));
        }
        if !out_vel.is_null() {
            write3(out_vel, &x.v(link));
        }
        if !out_quat_wxyz.is_null() {
            let q = x.q(link);
            *out_quat_wxyz.add(0) = q.w;
            *out_quat_wxyz.add(1) = q.v.x;
            *out_quat_wxyz.add(2) = q.v.y;
            *out_quat_wxyz.add(3) = q.v.z;
        }
        CfStatus::Ok
    })
}

/// One link's estimated sensor biases.
///
/// # Safety
/// Non-NULL outputs must be valid for writes of 3 doubles each.
#[no_mangle]
pub unsafe extern "C" fn cf_filter_link_biases(
    filter: *const CfFilter,
    link: u32,
    out_bias_accel: *mut f64,
    out_bias_gyro: *mut f64,
) -> CfStatus {
    if filter.is_null() {
        return CfStatus::NullArgument;
    }
    guard(|| {
        let f = &*filter;
        let link = link as usize;
        if link >= f.n_links {
            return CfStatus::InvalidArgument;
        }
        let x = f.inner.nav();
        if !out_bias_accel.is_null() {
            write3(out_bias_accel, &x.bias_a(link));
        }
        if !out_bias_gyro.is_null() {
            write3(out_bias_gyro, &x.bias_g(link));
        }
        CfStatus::Ok
    })
}

/// Estimated segment lever arm from `owner`'s IMU to the joint it shares
/// with `other`.
///
/// # Safety
/// `out_lever` must be valid for a write of 3 doubles.
#[no_mangle]
pub unsafe extern "C" fn cf_filter_segment(
    filter: *const CfFilter,
    owner: u32,
    other: u32,
    out_lever: *mut f64,
) -> CfStatus {
    if filter.is_null() || out_lever.is_null() {
        return CfStatus::NullArgument;
    }
    guard(|| {
        match (*filter).inner.nav().seg(owner as usize, other as usize) {
            Some(l) => {
                write3(out_lever, &l);
                CfStatus::Ok
            }
            None => CfStatus::InvalidArgument,
        }
    })
}

/// Estimated camera lever arm.
///
/// # Safety
/// `out_lever` must be valid for a write of 3 doubles.
#[no_mangle]
pub unsafe extern "C" fn cf_filter_camera_lever(
    filter: *const CfFilter,
    out_lever: *mut f64,
) -> CfStatus {
    if filter.is_null() || out_lever.is_null() {
        return CfStatus::NullArgument;
    }
    guard(|| {
        write3(out_lever, &(*filter).inner.nav().lever_cam());
        CfStatus::Ok
    })
}

/// Error-state covariance diagonal; `len` must equal the chain's error
/// dimension.
///
/// # Safety
/// `out` must be valid for writes of `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn cf_filter_covariance_diagonal(
    filter: *const CfFilter,
    out: *mut f64,
    len: usize,
) -> CfStatus {
    if filter.is_null() || out.is_null() {
        return CfStatus::NullArgument;
    }
    guard(|| {
        let diag = (*filter).inner.covariance_diagonal();
        if len != diag.len() {
            return CfStatus::DimensionMismatch;
        }
        for (i, v) in diag.iter().enumerate() {
            *out.add(i) = *v;
        }
        CfStatus::Ok
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn version_and_status_strings() {
        let v = unsafe { CStr::from_ptr(cf_version()) };
        assert!(!v.to_str().unwrap().is_empty());
        let m = unsafe { CStr::from_ptr(cf_status_message(CfStatus::FilterDiverged)) };
        assert_eq!(m.to_str().unwrap(), "filter diverged");
    }

    #[test]
    fn chain_lifecycle_and_dims() {
        let mut chain: *mut CfChain = std::ptr::null_mut();
        assert_eq!(cf_chain_arm3(&mut chain), CfStatus::Ok);
        unsafe {
            assert_eq!(cf_chain_num_links(chain), 3);
            assert_eq!(cf_chain_error_dim(chain), 60);
            assert_eq!(cf_chain_state_dim(chain), 63);
            cf_chain_free(chain);
        }
    }

    #[test]
    fn null_arguments_rejected() {
        assert_eq!(cf_chain_arm3(std::ptr::null_mut()), CfStatus::NullArgument);
        unsafe {
            assert_eq!(
                cf_filter_step(std::ptr::null_mut(), 0.0, std::ptr::null(), 0),
                CfStatus::NullArgument
            );
        }
    }

    #[test]
    fn filter_streams_static_readings() {
        let mut chain: *mut CfChain = std::ptr::null_mut();
        assert_eq!(cf_chain_arm3(&mut chain), CfStatus::Ok);
        let mut filter: *mut CfFilter = std::ptr::null_mut();
        unsafe {
            assert_eq!(cf_filter_new(chain, 0, 0.0, &mut filter), CfStatus::Ok);
            // Wrong kind id.
            let mut bogus: *mut CfFilter = std::ptr::null_mut();
            assert_eq!(cf_filter_new(chain, 9, 0.0, &mut bogus), CfStatus::InvalidArgument);

            // Static readings: f = -g in the body frame, zero rates.
            let mut raw = [0.0_f64; 18];
            for k in 0..3 {
                raw[k * 6 + 2] = -9.81;
            }
            // Wrong buffer length is rejected.
            assert_eq!(cf_filter_step(filter, 0.0, raw.as_ptr(), 6), CfStatus::DimensionMismatch);
            for i in 0..200 {
                let t = i as f64 * 0.01;
                let fix = [0.0, 0.0, 0.0];
                assert_eq!(cf_filter_push_fix(filter, t, fix.as_ptr(), 0.05), CfStatus::Ok);
                assert_eq!(cf_filter_step(filter, t, raw.as_ptr(), raw.len()), CfStatus::Ok);
            }
            // Time regression is rejected.
            assert_eq!(cf_filter_step(filter, 0.5, raw.as_ptr(), raw.len()), CfStatus::InvalidArgument);

            let mut t = 0.0;
            assert_eq!(cf_filter_time(filter, &mut t), CfStatus::Ok);
            assert!((t - 1.99).abs() < 1e-12);

            let mut pos = [0.0; 3];
            let mut vel = [0.0; 3];
            let mut quat = [0.0; 4];
            assert_eq!(
                cf_filter_link_pose(filter, 0, pos.as_mut_ptr(), vel.as_mut_ptr(), quat.as_mut_ptr()),
                CfStatus::Ok
            );
            assert!(pos.iter().all(|v| v.abs() < 0.3));
            assert!((quat[0] - 1.0).abs() < 0.01);
            assert_eq!(
                cf_filter_link_pose(filter, 7, pos.as_mut_ptr(), vel.as_mut_ptr(), quat.as_mut_ptr()),
                CfStatus::InvalidArgument
            );

            let mut lever = [0.0; 3];
            assert_eq!(cf_filter_segment(filter, 0, 1, lever.as_mut_ptr()), CfStatus::Ok);
            assert_eq!(cf_filter_segment(filter, 0, 2, lever.as_mut_ptr()), CfStatus::InvalidArgument);
            assert_eq!(cf_filter_camera_lever(filter, lever.as_mut_ptr()), CfStatus::Ok);

            let mut biases = [0.0; 3];
            let mut biases_g = [0.0; 3];
            assert_eq!(
                cf_filter_link_biases(filter, 1, biases.as_mut_ptr(), biases_g.as_mut_ptr()),
                CfStatus::Ok
            );

            let mut diag = vec![0.0; 60];
            assert_eq!(
                cf_filter_covariance_diagonal(filter, diag.as_mut_ptr(), diag.len()),
                CfStatus::Ok
            );
            assert!(diag.iter().all(|&d| d >= 0.0));
            assert_eq!(
                cf_filter_covariance_diagonal(filter, diag.as_mut_ptr(), 10),
                CfStatus::DimensionMismatch
            );

            cf_filter_free(filter);
            cf_chain_free(chain);
        }
    }

    #[test]
    fn initial_state_can_be_set_before_start() {
        let mut chain: *mut CfChain = std::ptr::null_mut();
        assert_eq!(cf_chain_arm3(&mut chain), CfStatus::Ok);
        let mut filter: *mut CfFilter = std::ptr::null_mut();
        unsafe {
            assert_eq!(cf_filter_new(chain, 1, 0.0, &mut filter), CfStatus::Ok);
            let pos = [1.0, 2.0, 3.0];
            let vel = [0.0, 0.0, 0.0];
            let quat = [1.0, 0.0, 0.0, 0.0];
            assert_eq!(
                cf_filter_set_link_state(filter, 0, pos.as_ptr(), vel.as_ptr(), quat.as_ptr()),
                CfStatus::Ok
            );
            let mut got = [0.0; 3];
            assert_eq!(
                cf_filter_link_pose(filter, 0, got.as_mut_ptr(), std::ptr::null_mut(), std::ptr::null_mut()),
                CfStatus::Ok
            );
            assert_eq!(got, pos);

            // After the first step the initial state is frozen.
            let mut raw = [0.0_f64; 18];
            for k in 0..3 {
                raw[k * 6 + 2] = -9.81;
            }
            assert_eq!(cf_filter_step(filter, 0.0, raw.as_ptr(), raw.len()), CfStatus::Ok);
            assert_eq!(
                cf_filter_set_link_state(filter, 0, pos.as_ptr(), vel.as_ptr(), quat.as_ptr()),
                CfStatus::InvalidArgument
            );
            cf_filter_free(filter);
            cf_chain_free(chain);
        }
    }
}
