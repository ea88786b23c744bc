//! Acceptance suite: every release criterion as an executable check with its
//! tolerance pinned in code, plus the independent numerical oracles
//! (finite-difference Jacobians, statistical estimators) the checks rely on.

use crate::body::{build_layout, ChainModel, NavState};
use crate::ekf::{
    assemble_f, assemble_h, kalman_update_core, Channel, GravityMode, NoiseConfig,
};
use crate::harness::{
    aggregate_batch, build_epochs, noise_for_scenario, run_batch, run_variant, simulate_scenario,
    write_aggregate_csv, STANDARD_VARIANTS,
};
use crate::ins::correct_imu;
use crate::meas::SlamFix;
use crate::rotation::{Quat, RotVec};
use crate::runner::{FilterKind, OnlineFilter, PosSource, RunnerConfig};
use crate::sim::{PathKind, ScenarioConfig, ScenarioKind};
use crate::srukf::{sr_measurement_core, SigmaWeights};
use nalgebra::{DMatrix, DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use std::sync::Arc;

pub struct CriterionReport {
    pub id: usize,
    pub name: &'static str,
    pub passed: bool,
    pub details: String,
    pub seconds: f64,
}

/// Runs the selected criteria (all by default) in order.
pub fn run_suite(only: Option<&[usize]>) -> Vec<CriterionReport> {
    let all: Vec<(usize, &'static str, fn() -> (bool, String))> = vec![
        (1, "state census", c1_state_census),
        (2, "jacobian suite", c2_jacobians),
        (3, "filter equivalence", c3_equivalence),
        (4, "square-root stability", c4_sqrt_stability),
        (5, "convergence from ignorance", c5_convergence),
        (6, "variant ordering", c6_variant_ordering),
        (7, "runtime ratio", c7_runtime_ratio),
        (8, "dead-reckoning contrast", c8_dead_reckoning),
        (9, "batch determinism", c9_determinism),
        (10, "statistical oracles", c10_statistics),
    ];
    all.into_iter()
        .filter(|(id, _, _)| only.map(|sel| sel.contains(id)).unwrap_or(true))
        .map(|(id, name, f)| {
            let started = std::time::Instant::now();
            let (passed, details) = f();
            CriterionReport { id, name, passed, details, seconds: started.elapsed().as_secs_f64() }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Oracles.

/// Random arm state with unit-norm attitudes and plausible magnitudes.
pub fn random_arm_state(rng: &mut ChaCha20Rng) -> NavState {
    let layout = Arc::new(build_layout(&ChainModel::arm3()).unwrap());
    let mut x = NavState::zeroed(layout.clone());
    for k in 0..3 {
        x.set_p(k, &Vector3::from_fn(|_, _| rng.random_range(-2.0..2.0)));
        x.set_v(k, &Vector3::from_fn(|_, _| rng.random_range(-1.5..1.5)));
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
        x.set_seg(slot.owner, slot.other, &Vector3::from_fn(|_, _| rng.random_range(-0.3..0.3)));
    }
    x.set_lever_cam(&Vector3::from_fn(|_, _| rng.random_range(-0.2..0.2)));
    x
}

/// Central finite differences of a channel's nonlinear prediction through
/// the error chart; the independent oracle for `assemble_h`.
pub fn fd_jacobian_h(channel: &Channel, x: &NavState, eps: f64) -> DMatrix<f64> {
    let n = x.layout().error_dim();
    let mut h = DMatrix::zeros(3, n);
    for col in 0..n {
        let mut e = DVector::zeros(n);
        e[col] = eps;
        let plus = channel.predicted(&x.inject_error(&e).unwrap()).unwrap();
        e[col] = -eps;
        let minus = channel.predicted(&x.inject_error(&e).unwrap()).unwrap();
        let d = (plus - minus) / (2.0 * eps);
        for row in 0..3 {
            h[(row, col)] = d[row];
        }
    }
    h
}

/// Central finite differences of the continuous error dynamics: position
/// and velocity rows from closed-form rate differences, attitude rows from
/// a short symmetric time step of the perturbed/reference quaternion pair.
/// Independent of `assemble_f`'s block formulas.
pub fn fd_jacobian_f(
    x: &NavState,
    raw: &[(Vector3<f64>, Vector3<f64>)],
    eps: f64,
    h_t: f64,
) -> DMatrix<f64> {
    let layout = x.layout().clone();
    let n = layout.error_dim();
    let n_links = layout.num_links();
    let g = layout.gravity();

    // Instantaneous error rates of the perturbed state about the reference.
    let rates = |e: &DVector<f64>| -> DVector<f64> {
        let xp = x.inject_error(e).unwrap();
        let mut out = DVector::zeros(n);
        for k in 0..n_links {
            let ls = layout.link(k);
            // d(dp)/dt = v_pert - v_ref
            let dv = xp.v(k) - x.v(k);
            // d(dv)/dt = a_pert - a_ref with a = R (f_raw - b_a) + g
            let a_p = xp.q(k).matrix() * (raw[k].0 - xp.bias_a(k)) + g;
            let a_r = x.q(k).matrix() * (raw[k].0 - x.bias_a(k)) + g;
            let da = a_p - a_r;
            // d(phi)/dt from a symmetric time step of both attitudes under
            // their own corrected rates.
            let w_p = raw[k].1 - xp.bias_g(k);
            let w_r = raw[k].1 - x.bias_g(k);
            let phi_at = |s: f64| {
                let qp = xp.q(k).mul(&Quat::from_rotvec(&RotVec(w_p * s)));
                let qr = x.q(k).mul(&Quat::from_rotvec(&RotVec(w_r * s)));
                qp.mul(&qr.conjugate()).to_rotvec().0
            };
            let dphi = (phi_at(h_t) - phi_at(-h_t)) / (2.0 * h_t);
            for i in 0..3 {
                out[ls.p_e + i] = dv[i];
                out[ls.v_e + i] = da[i];
                out[ls.phi_e + i] = dphi[i];
            }
        }
        out
    };

    let mut f = DMatrix::zeros(n, n);
    for col in 0..n {
        let mut e = DVector::zeros(n);
        e[col] = eps;
        let plus = rates(&e);
        e[col] = -eps;
        let minus = rates(&e);
        let d = (plus - minus) / (2.0 * eps);
        f.column_mut(col).copy_from(&d);
    }
    f
}

/// Scale-relative matrix deviation: `max|a-b| / max|b|`.
pub fn rel_matrix_error(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let denom = b.abs().max().max(1e-12);
    (a - b).abs().max() / denom
}

fn random_raw(rng: &mut ChaCha20Rng) -> Vec<(Vector3<f64>, Vector3<f64>)> {
    (0..3)
        .map(|_| {
            (
                Vector3::from_fn(|_, _| rng.random_range(-12.0..12.0)),
                Vector3::from_fn(|_, _| rng.random_range(-4.0..4.0)),
            )
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Criteria.

fn c1_state_census() -> (bool, String) {
    let layout = match build_layout(&ChainModel::arm3()) {
        Ok(l) => l,
        Err(e) => return (false, format!("layout failed: {e}")),
    };
    let motion = 9 * layout.num_links();
    let constants = layout.error_dim() - motion;
    let pass = layout.error_dim() == 60 && layout.state_dim() == 63 && motion == 27 && constants == 33;
    (
        pass,
        format!(
            "error_dim={} state_dim={} ({} variables + {} constants)",
            layout.error_dim(),
            layout.state_dim(),
            motion,
            constants
        ),
    )
}

fn c2_jacobians() -> (bool, String) {
    let mut rng = ChaCha20Rng::seed_from_u64(2001);
    let mut worst_f = 0.0_f64;
    let mut worst_h = 0.0_f64;
    for _ in 0..100 {
        let x = random_arm_state(&mut rng);
        let raw = random_raw(&mut rng);
        let imu: Vec<_> = (0..3)
            .map(|k| correct_imu(&raw[k].0, &raw[k].1, &x.bias_a(k), &x.bias_g(k)))
            .collect();
        let f = assemble_f(&x, &imu);
        let f_fd = fd_jacobian_f(&x, &raw, 1e-4, 1e-4);
        worst_f = worst_f.max(rel_matrix_error(&f_fd, &f));

        let channels = [
            Channel::JointPos { joint: 0, sigma: 0.01 },
            Channel::JointVel { joint: 1, w_raw_i: raw[1].1, w_raw_j: raw[2].1, sigma: 0.01 },
            Channel::CameraPos { measured: Vector3::zeros(), sigma: 0.05 },
            Channel::Gravity { link: 1, f_raw: raw[1].0, sigma: 0.05 },
        ];
        for ch in &channels {
            let h = assemble_h(ch, &x).unwrap();
            let h_fd = fd_jacobian_h(ch, &x, 1e-6);
            worst_h = worst_h.max(rel_matrix_error(&h_fd, &h));
        }
    }
    let pass = worst_f < 1e-5 && worst_h < 1e-5;
    (pass, format!("max rel err: F {worst_f:.2e}, H {worst_h:.2e} (tol 1e-5)"))
}

fn c3_equivalence() -> (bool, String) {
    // Scalar textbook case through both update cores.
    let p = DMatrix::from_element(1, 1, 1.0);
    let h = DMatrix::from_element(1, 1, 1.0);
    let r = DMatrix::from_element(1, 1, 1.0);
    let z = DVector::from_element(1, 1.0);
    let (e_kf, p_kf) = match kalman_update_core(&p, &h, &r, &z) {
        Ok(v) => v,
        Err(e) => return (false, format!("scalar EKF update failed: {e}")),
    };
    let w1 = SigmaWeights::standard(1);
    let s1 = DMatrix::from_element(1, 1, 1.0);
    let devs: Vec<DVector<f64>> = vec![
        DVector::zeros(1),
        DVector::from_element(1, w1.gamma),
        DVector::from_element(1, -w1.gamma),
    ];
    let ys = devs.clone();
    let corr = match sr_measurement_core(&s1, &devs, &ys, &z, &r, &w1) {
        Ok(c) => c,
        Err(e) => return (false, format!("scalar SRUKF update failed: {e}")),
    };
    let scalar_ok = (e_kf[0] - 0.5).abs() < 1e-12
        && (p_kf[(0, 0)] - 0.5).abs() < 1e-12
        && (corr.e[0] - 0.5).abs() < 1e-12
        && (corr.s_post[(0, 0)].powi(2) - 0.5).abs() < 1e-12;

    // Linear-Gaussian subproblem: single link, zero rates and specific
    // force, nonlinear blocks pinned by near-zero uncertainty, camera fix
    // each step. EKF and SRUKF must agree to 1e-8 per entry.
    let model = ChainModel::new(
        vec![crate::body::LinkSpec { id: 0, label: "only".into() }],
        vec![],
        0,
        Vector3::new(0.0, 0.0, crate::body::DEFAULT_GRAVITY),
    )
    .unwrap();
    let layout = Arc::new(build_layout(&model).unwrap());
    let mut noise = NoiseConfig::default_for(1);
    noise.sigma_a = vec![1e-3; 1];
    noise.sigma_g = vec![1e-9; 1];
    noise.q_bias_a = 0.0;
    noise.q_bias_g = 0.0;
    noise.init_sd_pos = 1.0;
    noise.init_sd_vel = 0.3;
    noise.init_sd_att = 1e-9;
    noise.init_sd_bias_a = 1e-9;
    noise.init_sd_bias_g = 1e-9;
    noise.init_sd_seg = 1e-9;
    noise.gravity_mode = GravityMode::Off;
    let x0 = NavState::zeroed(layout.clone());
    let mk_runner = |kind| {
        let mut r = RunnerConfig::new(kind, noise.clone());
        r.joints_pos = false;
        r.joints_vel = false;
        r
    };
    let mut ekf = OnlineFilter::new(x0.clone(), 0.0, mk_runner(FilterKind::Ekf));
    let mut srukf = OnlineFilter::new(x0, 0.0, mk_runner(FilterKind::Srukf));
    let mut rng = ChaCha20Rng::seed_from_u64(3003);
    // Free fall with zero raw readings keeps the propagation exactly linear.
    let raw = vec![(Vector3::zeros(), Vector3::zeros())];
    let mut worst_mean = 0.0_f64;
    let mut worst_cov = 0.0_f64;
    for i in 1..=100 {
        let t = i as f64 * 0.01;
        let fix = SlamFix {
            t,
            p_meas: Vector3::from_fn(|_, _| rng.random_range(-0.5..0.5)),
            sigma: 0.1,
        };
        ekf.push_fix(fix);
        srukf.push_fix(fix);
        if let Err(e) = ekf.step(t, &raw).and(srukf.step(t, &raw)) {
            return (false, format!("equivalence run failed: {e}"));
        }
        let ls = layout.link(0);
        for ofs in [ls.p_s, ls.v_s] {
            for d in 0..3 {
                let diff = (ekf.nav().raw()[ofs + d] - srukf.nav().raw()[ofs + d]).abs();
                worst_mean = worst_mean.max(diff);
            }
        }
        let pe = ekf.covariance();
        let ps = srukf.covariance();
        for r0 in [ls.p_e, ls.v_e] {
            for c0 in [ls.p_e, ls.v_e] {
                for dr in 0..3 {
                    for dc in 0..3 {
                        worst_cov = worst_cov.max((pe[(r0 + dr, c0 + dc)] - ps[(r0 + dr, c0 + dc)]).abs());
                    }
                }
            }
        }
    }
    let linear_ok = worst_mean < 1e-8 && worst_cov < 1e-8;
    (
        scalar_ok && linear_ok,
        format!(
            "scalar exact: {scalar_ok}; linear subproblem over 100 steps: mean diff {worst_mean:.2e}, cov diff {worst_cov:.2e} (tol 1e-8)"
        ),
    )
}

fn c4_sqrt_stability() -> (bool, String) {
    let cfg = ScenarioConfig::nominal(ScenarioKind::Gait, PathKind::OShape, 404, 180.0);
    let sim = match simulate_scenario(&cfg) {
        Ok(s) => s,
        Err(e) => return (false, format!("simulation failed: {e}")),
    };
    let epochs = match build_epochs(&sim.imu, 3, &sim.slam) {
        Ok(e) => e,
        Err(e) => return (false, format!("{e}")),
    };
    let runner = RunnerConfig::new(FilterKind::Srukf, noise_for_scenario(&cfg));
    let mut filter = OnlineFilter::new(sim.truth.states[0].clone(), epochs[0].t, runner);
    let mut min_diag = f64::INFINITY;
    let mut cycles = 0u64;
    for e in &epochs {
        for fix in &e.fixes {
            filter.push_fix(*fix);
        }
        if let Err(err) = filter.step(e.t, &e.raw) {
            return (false, format!("filter failed at t={}: {err}", e.t));
        }
        let d = filter.factor_min_diag().unwrap();
        min_diag = min_diag.min(d);
        if d <= 0.0 {
            return (false, format!("factor diagonal hit {d:.3e} at t={}", e.t));
        }
        if filter.covariance().cholesky().is_none() {
            return (false, format!("covariance not SPD at t={}", e.t));
        }
        cycles += 1;
    }
    (
        true,
        format!("{cycles} cycles, min diag(S) = {min_diag:.3e}, Cholesky(SS^T) succeeded throughout"),
    )
}

fn c5_convergence() -> (bool, String) {
    let final_third_start = 120.0;
    let mut details = String::new();
    let mut pass = true;
    let mut mean_seg_conv = [0.0_f64; 2]; // [ekf, srukf]
    for (fi, kind) in [FilterKind::Ekf, FilterKind::Srukf].into_iter().enumerate() {
        for seed in [11u64, 12, 13] {
            let cfg = ScenarioConfig::nominal(ScenarioKind::Gait, PathKind::OShape, seed, 180.0);
            let sim = match simulate_scenario(&cfg) {
                Ok(s) => s,
                Err(e) => return (false, format!("simulation failed: {e}")),
            };
            let (_, metrics) = match run_variant(&sim, kind, PosSource::Slam) {
                Ok(v) => v,
                Err(e) => return (false, format!("{kind} seed {seed} failed: {e}")),
            };
            // Joint segments: below 2 cm for the whole final third.
            for c in metrics.seg_convergence.iter().filter(|c| c.name.starts_with("segment")) {
                let ok = c.converged_at.map(|t| t <= final_third_start).unwrap_or(false);
                if !ok {
                    pass = false;
                    details.push_str(&format!(
                        "{kind} seed {seed} {} not converged by {final_third_start} s; ",
                        c.name
                    ));
                }
                mean_seg_conv[fi] += c.converged_at.unwrap_or(180.0);
            }
            for c in &metrics.bias_g_convergence {
                let ok = c.converged_at.map(|t| t <= final_third_start).unwrap_or(false);
                if !ok {
                    pass = false;
                    details.push_str(&format!(
                        "{kind} seed {seed} {} (gyro bias) not converged by {final_third_start} s; ",
                        c.name
                    ));
                }
            }
        }
    }
    mean_seg_conv[0] /= 12.0;
    mean_seg_conv[1] /= 12.0;
    if mean_seg_conv[1] > mean_seg_conv[0] + 1e-9 {
        pass = false;
        details.push_str(&format!(
            "srukf mean segment convergence {:.2} s later than ekf {:.2} s; ",
            mean_seg_conv[1], mean_seg_conv[0]
        ));
    }
    if details.is_empty() {
        details = format!(
            "segments < 2 cm and gyro bias < 20% over the final third on 3 seeds; mean segment convergence ekf {:.2} s, srukf {:.2} s",
            mean_seg_conv[0], mean_seg_conv[1]
        );
    }
    (pass, details)
}

/// The six-scenario batch used by the ordering criterion.
pub fn ordering_batch() -> Vec<ScenarioConfig> {
    let mut scenarios = vec![
        ScenarioConfig::nominal(ScenarioKind::Gait, PathKind::OShape, 21, 60.0),
        ScenarioConfig::nominal(ScenarioKind::Gait, PathKind::Straight, 22, 60.0),
        ScenarioConfig::nominal(ScenarioKind::Gait, PathKind::OShape, 23, 60.0),
        ScenarioConfig::nominal(ScenarioKind::Gait, PathKind::Straight, 24, 60.0),
        ScenarioConfig::nominal(ScenarioKind::Jump, PathKind::OShape, 25, 60.0),
        ScenarioConfig::nominal(ScenarioKind::Jump, PathKind::Straight, 26, 60.0),
    ];
    for cfg in &mut scenarios {
        // Realistic external-tracker error structure: slow drift on top of
        // the white fix noise.
        cfg.noise.slam_drift_sd = 0.02;
    }
    scenarios
}

fn c6_variant_ordering() -> (bool, String) {
    let scenarios = ordering_batch();
    let runs = match run_batch(&scenarios, &STANDARD_VARIANTS) {
        Ok(r) => r,
        Err(e) => return (false, format!("batch failed: {e}")),
    };
    let rows = aggregate_batch(&runs);
    let grand_mean = |variant: &str| -> f64 {
        let of: Vec<&crate::harness::AggregateRow> =
            rows.iter().filter(|r| r.variant == variant).collect();
        of.iter().map(|r| r.mean_pos_rmse_cm).sum::<f64>() / of.len() as f64
    };
    let ekf_s = grand_mean("ekf-s");
    let ekf_v = grand_mean("ekf-v");
    let srukf_s = grand_mean("srukf-s");
    let srukf_v = grand_mean("srukf-v");
    let ordering = ekf_v <= ekf_s && srukf_v <= srukf_s;
    let resistance = (ekf_s / ekf_v) >= (srukf_s / srukf_v);
    (
        ordering && resistance,
        format!(
            "mean pos RMSE cm: ekf-s {ekf_s:.2}, ekf-v {ekf_v:.2}, srukf-s {srukf_s:.2}, srukf-v {srukf_v:.2}; degradation ekf {:.2}x vs srukf {:.2}x",
            ekf_s / ekf_v,
            srukf_s / srukf_v
        ),
    )
}

fn c7_runtime_ratio() -> (bool, String) {
    let cfg = ScenarioConfig::nominal(ScenarioKind::Gait, PathKind::OShape, 707, 60.0);
    let sim = match simulate_scenario(&cfg) {
        Ok(s) => s,
        Err(e) => return (false, format!("simulation failed: {e}")),
    };
    // Interleaved best-of-three passes after a warmup run, so both filters
    // see the same machine state and scheduler noise cancels.
    let one = |kind| -> Result<f64, String> {
        let (out, _) = run_variant(&sim, kind, PosSource::Slam).map_err(|e| e.to_string())?;
        Ok(out.mean_cycle_ms)
    };
    if let Err(e) = one(FilterKind::Ekf) {
        return (false, e);
    }
    let mut ekf = f64::INFINITY;
    let mut srukf = f64::INFINITY;
    for _ in 0..3 {
        match (one(FilterKind::Ekf), one(FilterKind::Srukf)) {
            (Ok(a), Ok(b)) => {
                ekf = ekf.min(a);
                srukf = srukf.min(b);
            }
            (Err(e), _) | (_, Err(e)) => return (false, e),
        }
    }
    let ratio = srukf / ekf;
    (
        (1.5..=6.0).contains(&ratio),
        format!("mean cycle: ekf {ekf:.3} ms, srukf {srukf:.3} ms, ratio {ratio:.2} (band [1.5, 6])"),
    )
}

fn c8_dead_reckoning() -> (bool, String) {
    // Dead reckoning: no corrections at all.
    let cfg = ScenarioConfig::nominal(ScenarioKind::Gait, PathKind::OShape, 808, 60.0);
    let sim = match simulate_scenario(&cfg) {
        Ok(s) => s,
        Err(e) => return (false, format!("simulation failed: {e}")),
    };
    let mut noise = noise_for_scenario(&cfg);
    noise.gravity_mode = GravityMode::Off;
    let mut runner = RunnerConfig::new(FilterKind::Ekf, noise);
    runner.joints_pos = false;
    runner.joints_vel = false;
    let setup = crate::harness::RunSetup {
        model: cfg.model.clone(),
        imu: sim.imu.clone(),
        fixes: Vec::new(),
        pos_source: PosSource::None,
        runner,
        leveling_window: 1.0,
    };
    let out = match crate::harness::run_filter(&setup) {
        Ok(o) => o,
        Err(e) => return (false, format!("dead-reckoning run failed: {e}")),
    };
    let mut dr_max = 0.0_f64;
    for (i, x) in out.states.iter().enumerate() {
        let ti = out.times[i];
        let truth_idx = ((ti * cfg.imu_rate).round()) as usize;
        let truth = &sim.truth.states[truth_idx.min(sim.truth.states.len() - 1)];
        for k in 0..3 {
            dr_max = dr_max.max((x.p(k) - truth.p(k)).norm());
        }
    }
    let dr_ok = dr_max > 1.0;

    // Full corrections on nominal scenarios: every link under 30 cm RMSE.
    let mut worst_rmse = 0.0_f64;
    for kind in [ScenarioKind::Gait, ScenarioKind::Jump] {
        let cfg = ScenarioConfig::nominal(kind, PathKind::OShape, 809, 90.0);
        let sim = match simulate_scenario(&cfg) {
            Ok(s) => s,
            Err(e) => return (false, format!("simulation failed: {e}")),
        };
        for fk in [FilterKind::Ekf, FilterKind::Srukf] {
            match run_variant(&sim, fk, PosSource::Slam) {
                Ok((_, m)) => {
                    for lm in &m.links {
                        worst_rmse = worst_rmse.max(lm.pos_rmse_cm);
                    }
                }
                Err(e) => return (false, format!("{fk} full run failed: {e}")),
            }
        }
    }
    let full_ok = worst_rmse < 30.0;
    (
        dr_ok && full_ok,
        format!(
            "dead-reckoning error reaches {dr_max:.1} m in 60 s; corrected worst link RMSE {worst_rmse:.2} cm (limit 30)"
        ),
    )
}

fn c9_determinism() -> (bool, String) {
    let scenarios = vec![
        ScenarioConfig::nominal(ScenarioKind::Gait, PathKind::OShape, 901, 30.0),
        ScenarioConfig::nominal(ScenarioKind::Jump, PathKind::Straight, 902, 30.0),
    ];
    let dir = match tempfile::tempdir() {
        Ok(d) => d,
        Err(e) => return (false, format!("tempdir: {e}")),
    };
    let mut outputs = Vec::new();
    for pass in 0..2 {
        let runs = match run_batch(&scenarios, &STANDARD_VARIANTS) {
            Ok(r) => r,
            Err(e) => return (false, format!("batch failed: {e}")),
        };
        let rows = aggregate_batch(&runs);
        let path = dir.path().join(format!("aggregate_{pass}.csv"));
        if let Err(e) = write_aggregate_csv(&path, &rows) {
            return (false, format!("write failed: {e}"));
        }
        outputs.push(std::fs::read(&path).unwrap());
    }
    let identical = outputs[0] == outputs[1];
    (
        identical,
        format!(
            "two batch invocations produced {} aggregate CSVs ({} bytes)",
            if identical { "byte-identical" } else { "DIFFERING" },
            outputs[0].len()
        ),
    )
}

fn c10_statistics() -> (bool, String) {
    let mut problems = String::new();

    // IMU noise SDs on a static scene, >= 1e5 samples.
    let mut cfg = ScenarioConfig::static_scene(1001, 120.0);
    cfg.noise.bias_instab_a = 0.0;
    cfg.noise.bias_instab_g = 0.0;
    let gt = crate::sim::gen_trajectory(&cfg).unwrap();
    let samples = crate::sim::synthesize_imu(&gt, &cfg);
    let g = cfg.model.gravity_n;
    let mut acc_a = Vec::new();
    let mut acc_g = Vec::new();
    for s in &samples {
        let r = gt.states[0].q(s.link).matrix();
        let da = s.f_raw - (-(r.transpose() * g)) - cfg.bias_a_true[s.link];
        let dg = s.w_raw - cfg.bias_g_true[s.link];
        for axis in 0..3 {
            acc_a.push(da[axis]);
            acc_g.push(dg[axis]);
        }
    }
    let sd = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64).sqrt()
    };
    let rel_a = (sd(&acc_a) - cfg.noise.sigma_a_sample).abs() / cfg.noise.sigma_a_sample;
    let rel_g = (sd(&acc_g) - cfg.noise.sigma_g_sample).abs() / cfg.noise.sigma_g_sample;
    if acc_a.len() < 100_000 {
        problems.push_str("too few IMU samples; ");
    }
    if rel_a > 0.03 {
        problems.push_str(&format!("accel SD off by {:.1}%; ", rel_a * 100.0));
    }
    if rel_g > 0.03 {
        problems.push_str(&format!("gyro SD off by {:.1}%; ", rel_g * 100.0));
    }

    // Camera-fix noise and rate on a moving scenario.
    let mut cfg = ScenarioConfig::nominal(ScenarioKind::Gait, PathKind::OShape, 1002, 180.0);
    cfg.noise.slam_drift_sd = 0.0;
    let sim = simulate_scenario(&cfg).unwrap();
    let rate = sim.slam.len() as f64 / cfg.duration;
    if !(25.0..=40.0).contains(&rate) {
        problems.push_str(&format!("slam rate {rate:.1} Hz outside [25, 40]; "));
    }
    let mut slam_resid = Vec::new();
    // Nearest-epoch truth is not exact for off-grid fix times, but the
    // half-sample skew contributes well under a percent against the 5 cm
    // noise under test.
    let model_truth = |t: f64| -> Vector3<f64> {
        let idx = ((t * cfg.imu_rate).round() as usize).min(sim.truth.times.len() - 1);
        sim.truth.camera_position(idx)
    };
    for fix in &sim.slam {
        let d = fix.p_meas - model_truth(fix.t);
        for axis in 0..3 {
            slam_resid.push(d[axis]);
        }
    }
    let slam_sd = sd(&slam_resid);
    let rel_slam = (slam_sd - cfg.noise.slam_sigma).abs() / cfg.noise.slam_sigma;
    if slam_resid.len() < 10_000 {
        problems.push_str("too few slam fixes; ");
    }
    if rel_slam > 0.05 {
        problems.push_str(&format!("slam SD off by {:.1}%; ", rel_slam * 100.0));
    }

    let mut mocap_resid = Vec::new();
    for (ei, fix) in sim.mocap.iter().enumerate() {
        let d = fix.p_meas - sim.truth.camera_position(ei);
        for axis in 0..3 {
            mocap_resid.push(d[axis]);
        }
    }
    let rel_mocap = (sd(&mocap_resid) - cfg.noise.mocap_sigma).abs() / cfg.noise.mocap_sigma;
    if rel_mocap > 0.05 {
        problems.push_str(&format!("mocap SD off by {:.1}%; ", rel_mocap * 100.0));
    }
    if sim.mocap.len() != sim.truth.times.len() {
        problems.push_str("mocap rate != imu rate; ");
    }

    if problems.is_empty() {
        (
            true,
            format!(
                "accel SD {:.2}%, gyro SD {:.2}%, slam SD {:.2}%, mocap SD {:.2}%, slam rate {rate:.1} Hz",
                rel_a * 100.0,
                rel_g * 100.0,
                rel_slam * 100.0,
                rel_mocap * 100.0
            ),
        )
    } else {
        (false, problems)
    }
}
