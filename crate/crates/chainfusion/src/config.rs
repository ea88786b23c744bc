//! Builds scenario, run, and batch configurations from flat key-value files.
//!
//! Every key is optional unless noted; unknown keys are ignored. Paths are
//! resolved relative to the config file's directory.

use crate::body::ChainModel;
use crate::ekf::{GravityMode, NoiseConfig};
use crate::harness::HarnessError;
use crate::io::{read_chain, read_fixes, read_imu, read_truth_meta, KvFile, TruthMeta};
use crate::ins::ImuSample;
use crate::meas::{SlamFix, StationaryParams};
use crate::runner::{FilterKind, PosSource, RunnerConfig};
use crate::sim::{ChainGeometry, PathKind, ScenarioConfig, ScenarioKind, SimNoise};
use std::path::{Path, PathBuf};

fn resolve(base: &Path, rel: &str) -> PathBuf {
    let p = Path::new(rel);
    if p.is_absolute() {
        p.into()
    } else {
        base.parent().unwrap_or(Path::new(".")).join(p)
    }
}

fn parse_enum<T: std::str::FromStr<Err = String>>(
    kv: &KvFile,
    key: &str,
    default: T,
) -> Result<T, HarnessError> {
    match kv.get(key) {
        Some(v) => v
            .parse()
            .map_err(|e: String| HarnessError::Input(format!("{}: {e}", kv.path().display()))),
        None => Ok(default),
    }
}

/// Scenario file: kind, path, rates, seed, motion shape, noise levels, true
/// biases and geometry. Defaults are the nominal arm setup.
pub fn scenario_from_file(path: &Path) -> Result<ScenarioConfig, HarnessError> {
    let kv = KvFile::load(path)?;
    let kind: ScenarioKind = parse_enum(&kv, "kind", ScenarioKind::Gait)?;
    let path_kind: PathKind = parse_enum(&kv, "path", PathKind::OShape)?;
    let seed = kv.u64_or("seed", 0)?;
    let duration = kv.f64_or("duration", 180.0)?;
    let mut cfg = ScenarioConfig::nominal(kind, path_kind, seed, duration);

    if let Some(chain_rel) = kv.get("chain") {
        cfg.model = read_chain(&resolve(path, chain_rel))?;
    }
    cfg.imu_rate = kv.f64_or("imu_rate", cfg.imu_rate)?;
    cfg.slam_mean_rate = kv.f64_or("slam_mean_rate", cfg.imu_rate / 3.0)?;
    cfg.slam_jitter = kv.f64_or("slam_jitter", cfg.slam_jitter)?;
    cfg.slam_dropout = kv.f64_or("slam_dropout", cfg.slam_dropout)?;
    cfg.speed = kv.f64_or("speed", cfg.speed)?;
    cfg.swing_amplitude = kv.f64_or("swing_amplitude", cfg.swing_amplitude)?;
    cfg.swing_freq = kv.f64_or("swing_freq", cfg.swing_freq)?;
    cfg.o_radius = kv.f64_or("o_radius", cfg.o_radius)?;
    cfg.jump_height = kv.f64_or("jump_height", cfg.jump_height)?;
    cfg.jump_count = kv.usize_or("jump_count", cfg.jump_count)?;
    cfg.standstill = kv.f64_or("standstill", cfg.standstill)?;
    cfg.ramp = kv.f64_or("ramp", cfg.ramp)?;
    cfg.cross_sway = kv.f64_or("cross_sway", cfg.cross_sway)?;
    cfg.deformation_sd = kv.f64_or("deformation_sd", cfg.deformation_sd)?;

    let defaults = SimNoise::default_for_rate(cfg.imu_rate);
    cfg.noise = SimNoise {
        sigma_a_sample: kv.f64_or("noise.sigma_a_sample", defaults.sigma_a_sample)?,
        sigma_g_sample: kv.f64_or("noise.sigma_g_sample", defaults.sigma_g_sample)?,
        bias_instab_a: kv.f64_or("noise.bias_instab_a", defaults.bias_instab_a)?,
        bias_instab_g: kv.f64_or("noise.bias_instab_g", defaults.bias_instab_g)?,
        drift_tau: kv.f64_or("noise.drift_tau", defaults.drift_tau)?,
        slam_sigma: kv.f64_or("noise.slam_sigma", defaults.slam_sigma)?,
        slam_drift_sd: kv.f64_or("noise.slam_drift_sd", defaults.slam_drift_sd)?,
        slam_drift_tau: kv.f64_or("noise.slam_drift_tau", defaults.slam_drift_tau)?,
        mocap_sigma: kv.f64_or("noise.mocap_sigma", defaults.mocap_sigma)?,
    };

    // True geometry and biases; defaults only fit the stock arm.
    let n = cfg.model.num_links();
    if cfg.model != ChainModel::arm3() {
        cfg.geometry = ChainGeometry { segments: Vec::new(), camera_lever: Default::default() };
        cfg.bias_a_true = vec![Default::default(); n];
        cfg.bias_g_true = vec![Default::default(); n];
    }
    for &(i, j) in &cfg.model.joints {
        for (owner, other) in [(i, j), (j, i)] {
            let key = format!("segment.{owner}.{other}");
            if let Some(cur) = cfg.geometry.lever(owner, other) {
                let v = kv.vec3_or(&key, cur)?;
                for s in &mut cfg.geometry.segments {
                    if s.0 == owner && s.1 == other {
                        s.2 = v;
                    }
                }
            } else {
                cfg.geometry.segments.push((owner, other, kv.vec3(&key)?));
            }
        }
    }
    cfg.geometry.camera_lever = kv.vec3_or("camera_lever", cfg.geometry.camera_lever)?;
    for k in 0..n {
        cfg.bias_a_true[k] = kv.vec3_or(&format!("bias_a.{k}"), cfg.bias_a_true[k])?;
        cfg.bias_g_true[k] = kv.vec3_or(&format!("bias_g.{k}"), cfg.bias_g_true[k])?;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// A parsed run configuration: streams loaded, filter settings resolved.
pub struct LoadedRun {
    pub model: ChainModel,
    pub imu: Vec<ImuSample>,
    pub slam: Vec<SlamFix>,
    pub mocap: Vec<SlamFix>,
    pub kind: FilterKind,
    pub pos_source: PosSource,
    pub runner_template: RunnerConfig,
    pub leveling_window: f64,
    pub truth_path: Option<PathBuf>,
    pub truth_meta: Option<TruthMeta>,
}

pub fn run_from_file(
    path: &Path,
    filter_override: Option<FilterKind>,
    source_override: Option<PosSource>,
) -> Result<LoadedRun, HarnessError> {
    let kv = KvFile::load(path)?;
    let model = match kv.get("chain") {
        Some(rel) => read_chain(&resolve(path, rel))?,
        None => ChainModel::arm3(),
    };
    let imu = read_imu(&resolve(path, kv.required("imu")?))?;
    let slam = match kv.get("slam") {
        Some(rel) => read_fixes(&resolve(path, rel))?,
        None => Vec::new(),
    };
    let mocap = match kv.get("mocap") {
        Some(rel) => read_fixes(&resolve(path, rel))?,
        None => Vec::new(),
    };
    let kind = match filter_override {
        Some(k) => k,
        None => parse_enum(&kv, "filter", FilterKind::Ekf)?,
    };
    let pos_source = match source_override {
        Some(s) => s,
        None => parse_enum(&kv, "pos_source", PosSource::Slam)?,
    };

    let n = model.num_links();
    let mut noise = NoiseConfig::default_for(n);
    noise.sigma_a = vec![kv.f64_or("noise.sigma_a_psd", noise.sigma_a[0])?; n];
    noise.sigma_g = vec![kv.f64_or("noise.sigma_g_psd", noise.sigma_g[0])?; n];
    noise.q_bias_a = kv.f64_or("noise.q_bias_a", noise.q_bias_a)?;
    noise.q_bias_g = kv.f64_or("noise.q_bias_g", noise.q_bias_g)?;
    noise.q_seg = kv.f64_or("noise.q_seg", noise.q_seg)?;
    noise.q_lever = kv.f64_or("noise.q_lever", noise.q_lever)?;
    noise.sigma_joint_pos = kv.f64_or("noise.sigma_joint_pos", noise.sigma_joint_pos)?;
    noise.sigma_joint_vel = kv.f64_or("noise.sigma_joint_vel", noise.sigma_joint_vel)?;
    noise.sigma_cam = kv.f64_or("noise.sigma_cam", noise.sigma_cam)?;
    noise.sigma_grav = match kv.get("noise.sigma_grav") {
        Some("derive") => None,
        Some(v) => Some(v.parse().map_err(|_| kv.bad_value("noise.sigma_grav", "number or `derive`"))?),
        None => noise.sigma_grav,
    };
    noise.init_sd_pos = kv.f64_or("init.sd_pos", noise.init_sd_pos)?;
    noise.init_sd_vel = kv.f64_or("init.sd_vel", noise.init_sd_vel)?;
    noise.init_sd_att = kv.f64_or("init.sd_att", noise.init_sd_att)?;
    noise.init_sd_bias_a = kv.f64_or("init.sd_bias_a", noise.init_sd_bias_a)?;
    noise.init_sd_bias_g = kv.f64_or("init.sd_bias_g", noise.init_sd_bias_g)?;
    noise.init_sd_seg = kv.f64_or("init.sd_seg", noise.init_sd_seg)?;
    noise.gravity_mode = parse_enum(&kv, "gravity_mode", GravityMode::Throughout)?;

    let mut runner = RunnerConfig::new(kind, noise);
    runner.joints_pos = kv.bool_or("joints_pos", true)?;
    runner.joints_vel = kv.bool_or("joints_vel", true)?;
    runner.stationary = StationaryParams {
        min_window: kv.f64_or("stationary.min_window", runner.stationary.min_window)?,
        theta_g: kv.f64_or("stationary.theta_g", runner.stationary.theta_g)?,
        theta_a: kv.f64_or("stationary.theta_a", runner.stationary.theta_a)?,
    };
    runner.stationary_window = kv.f64_or("stationary.window", runner.stationary_window)?;
    runner.ukf_alpha = kv.f64_or("ukf.alpha", runner.ukf_alpha)?;
    runner.ukf_beta = kv.f64_or("ukf.beta", runner.ukf_beta)?;
    runner.ukf_kappa = kv.f64_or("ukf.kappa", runner.ukf_kappa)?;

    let truth_path = kv.get("truth").map(|rel| resolve(path, rel));
    let truth_meta = match kv.get("truth_meta") {
        Some(rel) => Some(read_truth_meta(&resolve(path, rel))?),
        None => None,
    };
    Ok(LoadedRun {
        model,
        imu,
        slam,
        mocap,
        kind,
        pos_source,
        runner_template: runner,
        leveling_window: kv.f64_or("leveling_window", 1.0)?,
        truth_path,
        truth_meta,
    })
}

/// Batch file: a scenario matrix plus the variant list.
pub struct BatchSpec {
    pub scenarios: Vec<ScenarioConfig>,
    pub variants: Vec<(FilterKind, PosSource, &'static str)>,
}

pub fn batch_from_file(path: &Path, seed_override: Option<u64>) -> Result<BatchSpec, HarnessError> {
    let kv = KvFile::load(path)?;
    let default_duration = kv.f64_or("duration", 60.0)?;
    let mut scenarios = Vec::new();
    for i in 0.. {
        let kind_key = format!("scenario.{i}.kind");
        if kv.get(&kind_key).is_none() {
            break;
        }
        let kind: ScenarioKind = parse_enum(&kv, &kind_key, ScenarioKind::Gait)?;
        let path_kind: PathKind = parse_enum(&kv, &format!("scenario.{i}.path"), PathKind::OShape)?;
        let seed = match seed_override {
            Some(base) => base + i as u64,
            None => kv.u64_or(&format!("scenario.{i}.seed"), i as u64)?,
        };
        let duration = kv.f64_or(&format!("scenario.{i}.duration"), default_duration)?;
        let mut cfg = ScenarioConfig::nominal(kind, path_kind, seed, duration);
        cfg.noise.slam_drift_sd =
            kv.f64_or(&format!("scenario.{i}.slam_drift_sd"), kv.f64_or("slam_drift_sd", 0.02)?)?;
        cfg.validate()?;
        scenarios.push(cfg);
    }
    if scenarios.is_empty() {
        return Err(HarnessError::Input(format!(
            "{}: batch file declares no scenarios",
            path.display()
        )));
    }
    let variants = match kv.get("variants") {
        None => crate::harness::STANDARD_VARIANTS.to_vec(),
        Some(list) => {
            let mut out = Vec::new();
            for name in list.split(',') {
                let name = name.trim();
                let v = crate::harness::STANDARD_VARIANTS
                    .iter()
                    .find(|(_, _, n)| *n == name)
                    .ok_or_else(|| {
                        HarnessError::Input(format!("unknown variant `{name}` in {}", path.display()))
                    })?;
                out.push(*v);
            }
            out
        }
    };
    Ok(BatchSpec { scenarios, variants })
}
