//! Replay and evaluation: merges the sensor streams into a time-ordered
//! epoch queue, runs a filter variant over it, and reduces estimate traces
//! against ground truth into RMSE, convergence, and runtime summaries.

use crate::body::{build_layout, ChainModel, ModelError, NavState};
use crate::ekf::{FilterError, NoiseConfig};
use crate::ins::ImuSample;
use crate::io::{IoError, TruthMeta};
use crate::meas::SlamFix;
use crate::rotation::Quat;
use crate::runner::{FilterKind, OnlineFilter, PosSource, RunnerConfig};
use crate::sim::{
    gen_trajectory, synthesize_imu, synthesize_mocap, synthesize_slam, ScenarioConfig, SimError,
};
use nalgebra::Vector3;
use rayon::prelude::*;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("input error: {0}")]
    Input(String),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("filter diverged: {0}")]
    Filter(#[from] FilterError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// One epoch of the merged event queue: raw IMU per link plus the camera
/// fixes assigned to this epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochEvents {
    pub t: f64,
    pub raw: Vec<(Vector3<f64>, Vector3<f64>)>,
    pub fixes: Vec<SlamFix>,
}

/// Merges an IMU stream and a fix stream into a strictly time-ordered epoch
/// queue. Every epoch must carry exactly one sample per link; fixes attach
/// to the nearest IMU epoch.
pub fn build_epochs(
    imu: &[ImuSample],
    n_links: usize,
    fixes: &[SlamFix],
) -> Result<Vec<EpochEvents>, HarnessError> {
    if imu.is_empty() {
        return Err(HarnessError::Input("IMU stream is empty".into()));
    }
    let mut epochs: Vec<EpochEvents> = Vec::new();
    let mut seen: Vec<bool> = vec![false; n_links];
    for s in imu {
        if s.link >= n_links {
            return Err(HarnessError::Input(format!(
                "IMU sample at t={} references link {} of a {}-link chain",
                s.t, s.link, n_links
            )));
        }
        match epochs.last_mut() {
            Some(e) if e.t == s.t => {
                if seen[s.link] {
                    return Err(HarnessError::Input(format!(
                        "duplicate IMU sample for link {} at t={}",
                        s.link, s.t
                    )));
                }
                seen[s.link] = true;
                e.raw[s.link] = (s.f_raw, s.w_raw);
            }
            Some(e) if s.t < e.t => {
                return Err(HarnessError::Input(format!(
                    "IMU timestamps regress at t={} after {}",
                    s.t, e.t
                )));
            }
            _ => {
                if let Some(prev) = epochs.last() {
                    if let Some(missing) = seen.iter().position(|&x| !x) {
                        return Err(HarnessError::Input(format!(
                            "epoch t={} is missing a sample for link {missing}",
                            prev.t
                        )));
                    }
                }
                seen.fill(false);
                seen[s.link] = true;
                let mut raw = vec![(Vector3::zeros(), Vector3::zeros()); n_links];
                raw[s.link] = (s.f_raw, s.w_raw);
                epochs.push(EpochEvents { t: s.t, raw, fixes: Vec::new() });
            }
        }
    }
    if let Some(missing) = seen.iter().position(|&x| !x) {
        return Err(HarnessError::Input(format!(
            "final epoch is missing a sample for link {missing}"
        )));
    }
    let times: Vec<f64> = epochs.iter().map(|e| e.t).collect();
    for fix in fixes {
        let idx = nearest_index(&times, fix.t);
        epochs[idx].fixes.push(*fix);
    }
    Ok(epochs)
}

fn nearest_index(sorted: &[f64], value: f64) -> usize {
    match sorted.binary_search_by(|probe| probe.partial_cmp(&value).unwrap()) {
        Ok(i) => i,
        Err(0) => 0,
        Err(i) if i >= sorted.len() => sorted.len() - 1,
        Err(i) => {
            if (value - sorted[i - 1]).abs() <= (sorted[i] - value).abs() {
                i - 1
            } else {
                i
            }
        }
    }
}

/// Everything a single replay needs.
pub struct RunSetup {
    pub model: ChainModel,
    pub imu: Vec<ImuSample>,
    /// Fix stream of the selected position source (empty for dead reckoning).
    pub fixes: Vec<SlamFix>,
    pub pos_source: PosSource,
    pub runner: RunnerConfig,
    /// Initial standstill window used for gravity leveling, seconds.
    pub leveling_window: f64,
}

pub struct RunOutput {
    pub times: Vec<f64>,
    pub states: Vec<NavState>,
    pub mean_cycle_ms: f64,
    pub skipped_channels: u64,
}

/// Deterministic replay: initializes from the first fix and initial-standstill
/// gravity leveling (yaw = 0, biases and geometry zero), then steps the
/// filter over every epoch past the leveling window.
pub fn run_filter(setup: &RunSetup) -> Result<RunOutput, HarnessError> {
    let layout = Arc::new(build_layout(&setup.model)?);
    let n = layout.num_links();
    let epochs = build_epochs(&setup.imu, n, &setup.fixes)?;
    let t0 = epochs[0].t;
    let level_end = t0 + setup.leveling_window;

    // Gravity leveling from the initial standstill: mean specific force per
    // link fixes roll/pitch, yaw is set to zero.
    let mut f_sum = vec![Vector3::<f64>::zeros(); n];
    let mut count = 0usize;
    for e in epochs.iter().take_while(|e| e.t <= level_end) {
        for k in 0..n {
            f_sum[k] += e.raw[k].0;
        }
        count += 1;
    }
    if count < 2 {
        return Err(HarnessError::Input(format!(
            "leveling window {} s covers fewer than 2 epochs",
            setup.leveling_window
        )));
    }
    let mut init = NavState::zeroed(layout.clone());
    for k in 0..n {
        let f = f_sum[k] / count as f64;
        let roll = (-f.y).atan2(-f.z);
        let pitch = f.x.atan2((f.y * f.y + f.z * f.z).sqrt());
        init.set_q(k, &Quat::from_euler_zyx(roll, pitch, 0.0));
    }
    if setup.pos_source != PosSource::None {
        if let Some(first) = setup.fixes.first() {
            for k in 0..n {
                init.set_p(k, &first.p_meas);
            }
        }
    }

    let start_idx = epochs.iter().position(|e| e.t > level_end).ok_or_else(|| {
        HarnessError::Input("no epochs remain after the leveling window".into())
    })?;
    let mut filter = OnlineFilter::new(init, epochs[start_idx].t, setup.runner.clone());
    let mut times = Vec::with_capacity(epochs.len() - start_idx);
    let mut states = Vec::with_capacity(epochs.len() - start_idx);
    for e in &epochs[start_idx..] {
        for fix in &e.fixes {
            filter.push_fix(*fix);
        }
        filter.step(e.t, &e.raw)?;
        times.push(e.t);
        states.push(filter.nav().clone());
    }
    Ok(RunOutput {
        times,
        states,
        mean_cycle_ms: filter.mean_cycle_ms(),
        skipped_channels: filter.skipped_channels,
    })
}

// ---------------------------------------------------------------------------
// Metrics.

#[derive(Clone, Debug)]
pub struct LinkMetrics {
    pub link: usize,
    pub label: String,
    pub pos_rmse_cm: f64,
    pub att_rmse_deg: f64,
    /// Per-axis roll/pitch/yaw RMSE, degrees.
    pub euler_rmse_deg: [f64; 3],
}

#[derive(Clone, Debug)]
pub struct ParamConvergence {
    pub name: String,
    pub threshold: f64,
    pub final_err: f64,
    /// First time after which the error stays below threshold to the end.
    pub converged_at: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct Metrics {
    pub links: Vec<LinkMetrics>,
    pub mean_cycle_ms: f64,
    pub n_epochs: usize,
    pub times: Vec<f64>,
    /// Per-epoch per-link position error, m.
    pub pos_err: Vec<Vec<f64>>,
    /// Per-epoch per-link total attitude error, deg.
    pub att_err_deg: Vec<Vec<f64>>,
    pub seg_convergence: Vec<ParamConvergence>,
    pub bias_g_convergence: Vec<ParamConvergence>,
    pub bias_a_convergence: Vec<ParamConvergence>,
}

fn wrap_deg(x: f64) -> f64 {
    let mut v = x % 360.0;
    if v >= 180.0 {
        v -= 360.0;
    } else if v < -180.0 {
        v += 360.0;
    }
    v
}

struct ConvergenceTracker {
    name: String,
    threshold: f64,
    last_above: Option<usize>,
    final_err: f64,
}

impl ConvergenceTracker {
    fn observe(&mut self, idx: usize, err: f64) {
        if err >= self.threshold {
            self.last_above = Some(idx);
        }
        self.final_err = err;
    }

    fn finish(self, times: &[f64]) -> ParamConvergence {
        let converged_at = match self.last_above {
            None => times.first().copied(),
            Some(i) if i + 1 < times.len() => Some(times[i + 1]),
            Some(_) => None,
        };
        ParamConvergence {
            name: self.name,
            threshold: self.threshold,
            final_err: self.final_err,
            converged_at,
        }
    }
}

/// RMSE over the full estimate trace against nearest-epoch ground truth,
/// plus per-parameter convergence when the true constants are known.
pub fn compute_metrics(
    out: &RunOutput,
    truth_times: &[f64],
    truth_states: &[NavState],
    meta: Option<&TruthMeta>,
) -> Result<Metrics, HarnessError> {
    if out.times.is_empty() {
        return Err(HarnessError::Input("empty estimate trace".into()));
    }
    if truth_times.is_empty() {
        return Err(HarnessError::Input("empty ground-truth trace".into()));
    }
    let layout = out.states[0].layout().clone();
    let n = layout.num_links();
    let truth_dt = if truth_times.len() > 1 {
        (truth_times[truth_times.len() - 1] - truth_times[0]) / (truth_times.len() - 1) as f64
    } else {
        f64::INFINITY
    };

    let mut sq_pos = vec![0.0; n];
    let mut sq_att = vec![0.0; n];
    let mut sq_euler = vec![[0.0; 3]; n];
    let mut pos_err = Vec::with_capacity(out.times.len());
    let mut att_err_deg = Vec::with_capacity(out.times.len());

    let mut seg_track: Vec<ConvergenceTracker> = Vec::new();
    let mut bias_g_track: Vec<ConvergenceTracker> = Vec::new();
    let mut bias_a_track: Vec<ConvergenceTracker> = Vec::new();
    if let Some(meta) = meta {
        for &(i, j, _) in &meta.segments {
            seg_track.push(ConvergenceTracker {
                name: format!("segment.{i}.{j}"),
                threshold: 0.02,
                last_above: None,
                final_err: f64::NAN,
            });
        }
        seg_track.push(ConvergenceTracker {
            name: "camera_lever".into(),
            threshold: 0.02,
            last_above: None,
            final_err: f64::NAN,
        });
        for k in 0..n {
            bias_g_track.push(ConvergenceTracker {
                name: format!("bias_g.{k}"),
                threshold: 0.2 * meta.bias_g[k].norm(),
                last_above: None,
                final_err: f64::NAN,
            });
            bias_a_track.push(ConvergenceTracker {
                name: format!("bias_a.{k}"),
                threshold: 0.3 * meta.bias_a[k].norm(),
                last_above: None,
                final_err: f64::NAN,
            });
        }
    }

    for (idx, (&t, x)) in out.times.iter().zip(&out.states).enumerate() {
        let ti = nearest_index(truth_times, t);
        if (truth_times[ti] - t).abs() > truth_dt * 0.5 + 1e-9 {
            return Err(HarnessError::Input(format!(
                "estimate epoch t={t} has no ground-truth epoch within half a step"
            )));
        }
        let truth = &truth_states[ti];
        let mut row_pos = Vec::with_capacity(n);
        let mut row_att = Vec::with_capacity(n);
        for k in 0..n {
            let dp = (x.p(k) - truth.p(k)).norm();
            let da = truth.q(k).angle_to(&x.q(k));
            sq_pos[k] += dp * dp;
            sq_att[k] += da * da;
            let (re, pe, ye) = x.q(k).to_euler_zyx();
            let (rt, pt, yt) = truth.q(k).to_euler_zyx();
            for (slot, diff) in [(0, re - rt), (1, pe - pt), (2, ye - yt)] {
                let d = wrap_deg(diff.to_degrees());
                sq_euler[k][slot] += d * d;
            }
            row_pos.push(dp);
            row_att.push(da.to_degrees());
        }
        pos_err.push(row_pos);
        att_err_deg.push(row_att);

        if let Some(meta) = meta {
            for (si, &(i, j, l_true)) in meta.segments.iter().enumerate() {
                let err = (x.seg(i, j).unwrap_or_default() - l_true).norm();
                seg_track[si].observe(idx, err);
            }
            let cam_err = (x.lever_cam() - meta.camera_lever).norm();
            let last = seg_track.len() - 1;
            seg_track[last].observe(idx, cam_err);
            for k in 0..n {
                bias_g_track[k].observe(idx, (x.bias_g(k) - meta.bias_g[k]).norm());
                bias_a_track[k].observe(idx, (x.bias_a(k) - meta.bias_a[k]).norm());
            }
        }
    }

    let count = out.times.len() as f64;
    let links = (0..n)
        .map(|k| LinkMetrics {
            link: k,
            label: layout.model.links[k].label.clone(),
            pos_rmse_cm: (sq_pos[k] / count).sqrt() * 100.0,
            att_rmse_deg: (sq_att[k] / count).sqrt().to_degrees(),
            euler_rmse_deg: [
                (sq_euler[k][0] / count).sqrt(),
                (sq_euler[k][1] / count).sqrt(),
                (sq_euler[k][2] / count).sqrt(),
            ],
        })
        .collect();

    Ok(Metrics {
        links,
        mean_cycle_ms: out.mean_cycle_ms,
        n_epochs: out.times.len(),
        times: out.times.clone(),
        pos_err,
        att_err_deg,
        seg_convergence: seg_track.into_iter().map(|t| t.finish(&out.times)).collect(),
        bias_g_convergence: bias_g_track.into_iter().map(|t| t.finish(&out.times)).collect(),
        bias_a_convergence: bias_a_track.into_iter().map(|t| t.finish(&out.times)).collect(),
    })
}

// ---------------------------------------------------------------------------
// Scenario-level drivers and the batch layer.

/// Filter noise settings consistent with a simulated scenario: per-sample
/// sensor SDs converted back to densities at the scenario's IMU rate.
pub fn noise_for_scenario(cfg: &ScenarioConfig) -> NoiseConfig {
    let n = cfg.model.num_links();
    let mut noise = NoiseConfig::default_for(n);
    let sqrt_rate = cfg.imu_rate.sqrt();
    noise.sigma_a = vec![cfg.noise.sigma_a_sample / sqrt_rate; n];
    noise.sigma_g = vec![cfg.noise.sigma_g_sample / sqrt_rate; n];
    noise.sigma_cam = cfg.noise.slam_sigma;
    noise
}

/// Ground truth plus the synthesized streams of one scenario.
pub struct SimulatedScenario {
    pub truth: crate::sim::GroundTruth,
    pub imu: Vec<ImuSample>,
    pub slam: Vec<SlamFix>,
    pub mocap: Vec<SlamFix>,
}

pub fn simulate_scenario(cfg: &ScenarioConfig) -> Result<SimulatedScenario, HarnessError> {
    let truth = gen_trajectory(cfg)?;
    let imu = synthesize_imu(&truth, cfg);
    let slam = synthesize_slam(&truth, cfg);
    let mocap = synthesize_mocap(&truth, cfg);
    Ok(SimulatedScenario { truth, imu, slam, mocap })
}

pub fn truth_meta_of(cfg: &ScenarioConfig) -> TruthMeta {
    TruthMeta {
        bias_a: cfg.bias_a_true.clone(),
        bias_g: cfg.bias_g_true.clone(),
        segments: cfg.geometry.segments.clone(),
        camera_lever: cfg.geometry.camera_lever,
        gravity: cfg.model.gravity_n,
    }
}

/// Runs one filter variant over an already-simulated scenario.
pub fn run_variant(
    sim: &SimulatedScenario,
    kind: FilterKind,
    source: PosSource,
) -> Result<(RunOutput, Metrics), HarnessError> {
    let cfg = &sim.truth.cfg;
    let fixes = match source {
        PosSource::Slam => sim.slam.clone(),
        PosSource::Mocap => sim.mocap.clone(),
        PosSource::None => Vec::new(),
    };
    let setup = RunSetup {
        model: cfg.model.clone(),
        imu: sim.imu.clone(),
        fixes,
        pos_source: source,
        runner: RunnerConfig::new(kind, noise_for_scenario(cfg)),
        leveling_window: 1.0,
    };
    let out = run_filter(&setup)?;
    let meta = truth_meta_of(cfg);
    let metrics = compute_metrics(&out, &sim.truth.times, &sim.truth.states, Some(&meta))?;
    Ok((out, metrics))
}

pub const STANDARD_VARIANTS: [(FilterKind, PosSource, &str); 4] = [
    (FilterKind::Ekf, PosSource::Slam, "ekf-s"),
    (FilterKind::Ekf, PosSource::Mocap, "ekf-v"),
    (FilterKind::Srukf, PosSource::Slam, "srukf-s"),
    (FilterKind::Srukf, PosSource::Mocap, "srukf-v"),
];

#[derive(Clone, Debug)]
pub struct BatchRun {
    pub scenario: usize,
    pub variant: String,
    pub metrics: Metrics,
}

/// Runs every (scenario, variant) pair on a worker pool; results come back
/// in a fixed order regardless of scheduling.
pub fn run_batch(
    scenarios: &[ScenarioConfig],
    variants: &[(FilterKind, PosSource, &str)],
) -> Result<Vec<BatchRun>, HarnessError> {
    let sims: Vec<SimulatedScenario> = scenarios
        .par_iter()
        .map(simulate_scenario)
        .collect::<Result<_, _>>()?;
    let mut jobs: Vec<(usize, usize)> = Vec::new();
    for si in 0..scenarios.len() {
        for vi in 0..variants.len() {
            jobs.push((si, vi));
        }
    }
    let mut runs: Vec<BatchRun> = jobs
        .par_iter()
        .map(|&(si, vi)| {
            let (kind, source, name) = variants[vi];
            let (_, metrics) = run_variant(&sims[si], kind, source)?;
            Ok(BatchRun { scenario: si, variant: name.to_string(), metrics })
        })
        .collect::<Result<_, HarnessError>>()?;
    runs.sort_by(|a, b| (a.scenario, &a.variant).cmp(&(b.scenario, &b.variant)));
    Ok(runs)
}

#[derive(Clone, Debug)]
pub struct AggregateRow {
    pub variant: String,
    pub link: usize,
    pub label: String,
    pub mean_pos_rmse_cm: f64,
    pub sd_pos_rmse_cm: f64,
    pub min_pos_rmse_cm: f64,
    pub max_pos_rmse_cm: f64,
    pub mean_att_rmse_deg: f64,
    pub sd_att_rmse_deg: f64,
    pub min_att_rmse_deg: f64,
    pub max_att_rmse_deg: f64,
}

/// Mean/SD/min/max of the per-run RMSEs, per variant and link.
pub fn aggregate_batch(runs: &[BatchRun]) -> Vec<AggregateRow> {
    let mut variants: Vec<String> = runs.iter().map(|r| r.variant.clone()).collect();
    variants.sort();
    variants.dedup();
    let mut rows = Vec::new();
    for variant in &variants {
        let of_variant: Vec<&BatchRun> = runs.iter().filter(|r| &r.variant == variant).collect();
        if of_variant.is_empty() {
            continue;
        }
        let n_links = of_variant[0].metrics.links.len();
        for link in 0..n_links {
            let pos: Vec<f64> =
                of_variant.iter().map(|r| r.metrics.links[link].pos_rmse_cm).collect();
            let att: Vec<f64> =
                of_variant.iter().map(|r| r.metrics.links[link].att_rmse_deg).collect();
            let stats = |v: &[f64]| {
                let mean = v.iter().sum::<f64>() / v.len() as f64;
                let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / v.len() as f64;
                let min = v.iter().cloned().fold(f64::INFINITY, f64::min);
                let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                (mean, var.sqrt(), min, max)
            };
            let (pm, ps, pmin, pmax) = stats(&pos);
            let (am, asd, amin, amax) = stats(&att);
            rows.push(AggregateRow {
                variant: variant.clone(),
                link,
                label: of_variant[0].metrics.links[link].label.clone(),
                mean_pos_rmse_cm: pm,
                sd_pos_rmse_cm: ps,
                min_pos_rmse_cm: pmin,
                max_pos_rmse_cm: pmax,
                mean_att_rmse_deg: am,
                sd_att_rmse_deg: asd,
                min_att_rmse_deg: amin,
                max_att_rmse_deg: amax,
            });
        }
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{PathKind, ScenarioKind};

    #[test]
    fn epoch_queue_orders_and_assigns_fixes() {
        let mk = |t: f64, link: usize| ImuSample {
            t,
            link,
            f_raw: Vector3::zeros(),
            w_raw: Vector3::zeros(),
        };
        let imu = vec![mk(0.0, 0), mk(0.0, 1), mk(0.01, 0), mk(0.01, 1), mk(0.02, 0), mk(0.02, 1)];
        let fixes = vec![
            SlamFix { t: 0.004, p_meas: Vector3::zeros(), sigma: 0.05 },
            SlamFix { t: 0.019, p_meas: Vector3::zeros(), sigma: 0.05 },
        ];
        let epochs = build_epochs(&imu, 2, &fixes).unwrap();
        assert_eq!(epochs.len(), 3);
        assert!(epochs.windows(2).all(|w| w[0].t < w[1].t));
        assert_eq!(epochs[0].fixes.len(), 1);
        assert_eq!(epochs[2].fixes.len(), 1);
        assert!(epochs[1].fixes.is_empty());
    }

    #[test]
    fn epoch_queue_accepts_empty_fix_stream() {
        let mk = |t: f64, link: usize| ImuSample {
            t,
            link,
            f_raw: Vector3::zeros(),
            w_raw: Vector3::zeros(),
        };
        let imu = vec![mk(0.0, 0), mk(0.01, 0)];
        let epochs = build_epochs(&imu, 1, &[]).unwrap();
        assert_eq!(epochs.len(), 2);
        assert!(epochs.iter().all(|e| e.fixes.is_empty()));
    }

    #[test]
    fn epoch_queue_rejects_bad_streams() {
        let mk = |t: f64, link: usize| ImuSample {
            t,
            link,
            f_raw: Vector3::zeros(),
            w_raw: Vector3::zeros(),
        };
        assert!(build_epochs(&[], 1, &[]).is_err());
        assert!(build_epochs(&[mk(0.0, 3)], 2, &[]).is_err());
        // Missing link at the first epoch.
        let imu = vec![mk(0.0, 0), mk(0.01, 0), mk(0.01, 1)];
        assert!(build_epochs(&imu, 2, &[]).is_err());
    }

    #[test]
    fn metrics_trivials() {
        let cfg = ScenarioConfig::static_scene(3, 6.0);
        let truth = gen_trajectory(&cfg).unwrap();
        // Estimates identical to truth: zero RMSE.
        let out = RunOutput {
            times: truth.times.clone(),
            states: truth.states.clone(),
            mean_cycle_ms: 0.1,
            skipped_channels: 0,
        };
        let m = compute_metrics(&out, &truth.times, &truth.states, None).unwrap();
        for lm in &m.links {
            assert!(lm.pos_rmse_cm < 1e-12);
            assert!(lm.att_rmse_deg < 1e-12);
        }

        // Constant 5 cm offset on one link: exactly 5 cm RMSE there.
        let mut shifted = truth.states.clone();
        for x in &mut shifted {
            let p = x.p(1) + Vector3::new(0.05, 0.0, 0.0);
            x.set_p(1, &p);
        }
        let out = RunOutput {
            times: truth.times.clone(),
            states: shifted,
            mean_cycle_ms: 0.1,
            skipped_channels: 0,
        };
        let m = compute_metrics(&out, &truth.times, &truth.states, None).unwrap();
        assert!((m.links[1].pos_rmse_cm - 5.0).abs() < 1e-9);
        assert!(m.links[1].att_rmse_deg < 1e-12);
        assert!(m.links[0].pos_rmse_cm < 1e-12);
    }

    #[test]
    fn rmse_of_white_noise_matches_sqrt3_sigma() {
        use rand::SeedableRng;
        use rand_distr::{Distribution, Normal};
        let cfg = ScenarioConfig::static_scene(3, 120.0);
        let truth = gen_trajectory(&cfg).unwrap();
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(8);
        let sigma = 0.03;
        let normal = Normal::new(0.0, sigma).unwrap();
        let mut noisy = truth.states.clone();
        for x in &mut noisy {
            for k in 0..3 {
                let p = x.p(k) + Vector3::from_fn(|_, _| normal.sample(&mut rng));
                x.set_p(k, &p);
            }
        }
        let out = RunOutput {
            times: truth.times.clone(),
            states: noisy,
            mean_cycle_ms: 0.1,
            skipped_channels: 0,
        };
        let m = compute_metrics(&out, &truth.times, &truth.states, None).unwrap();
        let expect = sigma * 3.0_f64.sqrt() * 100.0;
        for lm in &m.links {
            let rel = (lm.pos_rmse_cm - expect).abs() / expect;
            assert!(rel < 0.03, "RMSE {:.3} vs {:.3}", lm.pos_rmse_cm, expect);
        }
    }

    #[test]
    fn ingested_files_match_in_memory_streams() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ScenarioConfig::nominal(ScenarioKind::Gait, PathKind::OShape, 11, 12.0);
        let sim = simulate_scenario(&cfg).unwrap();
        let imu_path = dir.path().join("imu.csv");
        let slam_path = dir.path().join("slam.csv");
        crate::io::write_imu(&imu_path, &sim.imu).unwrap();
        crate::io::write_fixes(&slam_path, &sim.slam).unwrap();
        let imu_back = crate::io::read_imu(&imu_path).unwrap();
        let slam_back = crate::io::read_fixes(&slam_path).unwrap();
        let from_mem = build_epochs(&sim.imu, 3, &sim.slam).unwrap();
        let from_disk = build_epochs(&imu_back, 3, &slam_back).unwrap();
        assert_eq!(from_mem, from_disk);
    }
}

// ---------------------------------------------------------------------------
// Report files.

use crate::io::fmt_f64;
use std::fmt::Write as _;
use std::path::Path;

fn write_file(path: &Path, content: &str) -> Result<(), HarnessError> {
    std::fs::write(path, content)
        .map_err(|e| HarnessError::Input(format!("{}: {e}", path.display())))?;
    Ok(())
}

/// Per-epoch estimate trace with presentation Euler angles (ZYX, degrees).
pub fn write_estimates_csv(path: &Path, out: &RunOutput) -> Result<(), HarnessError> {
    let mut s = String::new();
    let _ = writeln!(s, "# t,link,px,py,pz,vx,vy,vz,qw,qx,qy,qz,roll_deg,pitch_deg,yaw_deg");
    for (i, x) in out.states.iter().enumerate() {
        let t = out.times[i];
        for k in 0..x.layout().num_links() {
            let p = x.p(k);
            let v = x.v(k);
            let q = x.q(k);
            let (roll, pitch, yaw) = q.to_euler_zyx();
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                fmt_f64(t),
                k,
                fmt_f64(p.x),
                fmt_f64(p.y),
                fmt_f64(p.z),
                fmt_f64(v.x),
                fmt_f64(v.y),
                fmt_f64(v.z),
                fmt_f64(q.w),
                fmt_f64(q.v.x),
                fmt_f64(q.v.y),
                fmt_f64(q.v.z),
                fmt_f64(roll.to_degrees()),
                fmt_f64(pitch.to_degrees()),
                fmt_f64(yaw.to_degrees()),
            );
        }
    }
    write_file(path, &s)
}

/// Estimated constants over time (segments, biases, camera lever arm),
/// decimated to every tenth epoch.
pub fn write_params_csv(path: &Path, out: &RunOutput) -> Result<(), HarnessError> {
    let mut s = String::new();
    let _ = writeln!(s, "# t,name,x,y,z");
    for (i, x) in out.states.iter().enumerate() {
        if i % 10 != 0 {
            continue;
        }
        let t = out.times[i];
        let mut row = |name: String, v: nalgebra::Vector3<f64>| {
            let _ = writeln!(s, "{},{},{},{},{}", fmt_f64(t), name, fmt_f64(v.x), fmt_f64(v.y), fmt_f64(v.z));
        };
        for slot in x.layout().seg_slots().to_vec() {
            row(format!("segment.{}.{}", slot.owner, slot.other), x.seg(slot.owner, slot.other).unwrap());
        }
        row("camera_lever".into(), x.lever_cam());
        for k in 0..x.layout().num_links() {
            row(format!("bias_a.{k}"), x.bias_a(k));
            row(format!("bias_g.{k}"), x.bias_g(k));
        }
    }
    write_file(path, &s)
}

/// Per-epoch estimation errors against truth, including per-Euler-axis
/// errors in degrees.
pub fn write_errors_csv(
    path: &Path,
    out: &RunOutput,
    truth_times: &[f64],
    truth_states: &[NavState],
) -> Result<(), HarnessError> {
    let mut s = String::new();
    let _ = writeln!(s, "# t,link,pos_err_m,att_err_deg,droll_deg,dpitch_deg,dyaw_deg");
    for (i, x) in out.states.iter().enumerate() {
        let t = out.times[i];
        let ti = nearest_index(truth_times, t);
        let truth = &truth_states[ti];
        for k in 0..x.layout().num_links() {
            let dp = (x.p(k) - truth.p(k)).norm();
            let da = truth.q(k).angle_to(&x.q(k)).to_degrees();
            let (re, pe, ye) = x.q(k).to_euler_zyx();
            let (rt, pt, yt) = truth.q(k).to_euler_zyx();
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                fmt_f64(t),
                k,
                fmt_f64(dp),
                fmt_f64(da),
                fmt_f64(wrap_deg((re - rt).to_degrees())),
                fmt_f64(wrap_deg((pe - pt).to_degrees())),
                fmt_f64(wrap_deg((ye - yt).to_degrees())),
            );
        }
    }
    write_file(path, &s)
}

pub fn write_metrics_csv(path: &Path, metrics: &Metrics) -> Result<(), HarnessError> {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "# link,label,pos_rmse_cm,att_rmse_deg,roll_rmse_deg,pitch_rmse_deg,yaw_rmse_deg"
    );
    for lm in &metrics.links {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            lm.link,
            lm.label,
            fmt_f64(lm.pos_rmse_cm),
            fmt_f64(lm.att_rmse_deg),
            fmt_f64(lm.euler_rmse_deg[0]),
            fmt_f64(lm.euler_rmse_deg[1]),
            fmt_f64(lm.euler_rmse_deg[2]),
        );
    }
    write_file(path, &s)
}

/// Run summary as a flat key-value report.
pub fn write_report(path: &Path, metrics: &Metrics, skipped: u64) -> Result<(), HarnessError> {
    let mut s = String::new();
    let _ = writeln!(s, "n_epochs = {}", metrics.n_epochs);
    let _ = writeln!(s, "mean_cycle_ms = {}", fmt_f64(metrics.mean_cycle_ms));
    let _ = writeln!(s, "skipped_channels = {skipped}");
    for c in metrics
        .seg_convergence
        .iter()
        .chain(&metrics.bias_g_convergence)
        .chain(&metrics.bias_a_convergence)
    {
        let at = c.converged_at.map(|t| fmt_f64(t)).unwrap_or_else(|| "never".into());
        let _ = writeln!(
            s,
            "convergence.{} = final_err={} threshold={} at={}",
            c.name,
            fmt_f64(c.final_err),
            fmt_f64(c.threshold),
            at
        );
    }
    write_file(path, &s)
}

pub fn write_aggregate_csv(path: &Path, rows: &[AggregateRow]) -> Result<(), HarnessError> {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "# variant,link,label,mean_pos_rmse_cm,sd_pos_rmse_cm,min_pos_rmse_cm,max_pos_rmse_cm,\
         mean_att_rmse_deg,sd_att_rmse_deg,min_att_rmse_deg,max_att_rmse_deg"
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.variant,
            r.link,
            r.label,
            fmt_f64(r.mean_pos_rmse_cm),
            fmt_f64(r.sd_pos_rmse_cm),
            fmt_f64(r.min_pos_rmse_cm),
            fmt_f64(r.max_pos_rmse_cm),
            fmt_f64(r.mean_att_rmse_deg),
            fmt_f64(r.sd_att_rmse_deg),
            fmt_f64(r.min_att_rmse_deg),
            fmt_f64(r.max_att_rmse_deg),
        );
    }
    write_file(path, &s)
}
