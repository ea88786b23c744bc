//! Newline-delimited record files and flat key-value configs.
//!
//! All streams are plain text: IMU rows `t,link_id,fx,fy,fz,wx,wy,wz`,
//! position fixes `t,px,py,pz,sigma`, SI units throughout. Floats are
//! written in scientific form with 18 significant digits, so files
//! round-trip bit-exactly and reruns are byte-identical.

use crate::body::{ChainModel, LinkSpec, NavState, StateLayout};
use crate::ins::ImuSample;
use crate::meas::SlamFix;
use crate::rotation::Quat;
use nalgebra::Vector3;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("{path}:{line}: timestamp regression {prev} -> {cur}")]
    TimestampRegression { path: PathBuf, line: usize, prev: f64, cur: f64 },
    #[error("{path}: missing key `{key}`")]
    MissingKey { path: PathBuf, key: String },
    #[error("{path}:{line}: key `{key}`: {msg}")]
    BadValue { path: PathBuf, line: usize, key: String, msg: String },
}

/// 18 significant digits: enough to reproduce any f64 exactly on re-parse.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.17e}")
}

fn read_to_string(path: &Path) -> Result<String, IoError> {
    std::fs::read_to_string(path).map_err(|source| IoError::File { path: path.into(), source })
}

fn write_string(path: &Path, content: &str) -> Result<(), IoError> {
    std::fs::write(path, content).map_err(|source| IoError::File { path: path.into(), source })
}

fn parse_field<T: std::str::FromStr>(
    path: &Path,
    line: usize,
    field: &str,
    what: &str,
) -> Result<T, IoError> {
    field.trim().parse().map_err(|_| IoError::Parse {
        path: path.into(),
        line,
        msg: format!("cannot parse {what} from `{field}`"),
    })
}

// ---------------------------------------------------------------------------
// IMU and fix streams.

pub fn write_imu(path: &Path, samples: &[ImuSample]) -> Result<(), IoError> {
    let mut out = String::with_capacity(samples.len() * 64);
    for s in samples {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            fmt_f64(s.t),
            s.link,
            fmt_f64(s.f_raw.x),
            fmt_f64(s.f_raw.y),
            fmt_f64(s.f_raw.z),
            fmt_f64(s.w_raw.x),
            fmt_f64(s.w_raw.y),
            fmt_f64(s.w_raw.z),
        );
    }
    write_string(path, &out)
}

/// Reads an IMU stream, enforcing strictly increasing timestamps per link.
pub fn read_imu(path: &Path) -> Result<Vec<ImuSample>, IoError> {
    let content = read_to_string(path)?;
    let mut out = Vec::new();
    let mut last_t: BTreeMap<usize, f64> = BTreeMap::new();
    for (idx, raw_line) in content.lines().enumerate() {
        let line = idx + 1;
        let l = raw_line.trim();
        if l.is_empty() || l.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = l.split(',').collect();
        if parts.len() != 8 {
            return Err(IoError::Parse {
                path: path.into(),
                line,
                msg: format!("expected 8 comma-separated fields, got {}", parts.len()),
            });
        }
        let t: f64 = parse_field(path, line, parts[0], "timestamp")?;
        let link: usize = parse_field(path, line, parts[1], "link id")?;
        if let Some(&prev) = last_t.get(&link) {
            if t <= prev {
                return Err(IoError::TimestampRegression { path: path.into(), line, prev, cur: t });
            }
        }
        last_t.insert(link, t);
        let f: Vec<f64> = parts[2..8]
            .iter()
            .map(|p| parse_field(path, line, p, "value"))
            .collect::<Result<_, _>>()?;
        out.push(ImuSample {
            t,
            link,
            f_raw: Vector3::new(f[0], f[1], f[2]),
            w_raw: Vector3::new(f[3], f[4], f[5]),
        });
    }
    Ok(out)
}

pub fn write_fixes(path: &Path, fixes: &[SlamFix]) -> Result<(), IoError> {
    let mut out = String::with_capacity(fixes.len() * 48);
    for f in fixes {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            fmt_f64(f.t),
            fmt_f64(f.p_meas.x),
            fmt_f64(f.p_meas.y),
            fmt_f64(f.p_meas.z),
            fmt_f64(f.sigma),
        );
    }
    write_string(path, &out)
}

pub fn read_fixes(path: &Path) -> Result<Vec<SlamFix>, IoError> {
    let content = read_to_string(path)?;
    let mut out: Vec<SlamFix> = Vec::new();
    for (idx, raw_line) in content.lines().enumerate() {
        let line = idx + 1;
        let l = raw_line.trim();
        if l.is_empty() || l.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = l.split(',').collect();
        if parts.len() != 5 {
            return Err(IoError::Parse {
                path: path.into(),
                line,
                msg: format!("expected 5 comma-separated fields, got {}", parts.len()),
            });
        }
        let vals: Vec<f64> = parts
            .iter()
            .map(|p| parse_field(path, line, p, "value"))
            .collect::<Result<_, _>>()?;
        if let Some(prev) = out.last() {
            if vals[0] <= prev.t {
                return Err(IoError::TimestampRegression {
                    path: path.into(),
                    line,
                    prev: prev.t,
                    cur: vals[0],
                });
            }
        }
        if vals[4] <= 0.0 {
            return Err(IoError::Parse {
                path: path.into(),
                line,
                msg: format!("fix sigma must be positive, got {}", vals[4]),
            });
        }
        out.push(SlamFix {
            t: vals[0],
            p_meas: Vector3::new(vals[1], vals[2], vals[3]),
            sigma: vals[4],
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Ground-truth state trace.

/// Truth trace read back from disk.
pub struct TruthTrace {
    pub times: Vec<f64>,
    pub states: Vec<NavState>,
    pub stationary: Vec<Vec<bool>>,
}

/// Rows `t,link,px,py,pz,vx,vy,vz,qw,qx,qy,qz,stationary`; constants
/// (biases, segments, camera lever) travel in the companion meta file.
pub fn write_truth(path: &Path, gt: &crate::sim::GroundTruth) -> Result<(), IoError> {
    let n = gt.layout.num_links();
    let mut out = String::with_capacity(gt.times.len() * n * 140);
    for (ei, &t) in gt.times.iter().enumerate() {
        let x = &gt.states[ei];
        for k in 0..n {
            let p = x.p(k);
            let v = x.v(k);
            let q = x.q(k);
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{}",
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
                u8::from(gt.stationary[ei][k]),
            );
        }
    }
    write_string(path, &out)
}

pub fn read_truth(path: &Path, layout: &Arc<StateLayout>) -> Result<TruthTrace, IoError> {
    let content = read_to_string(path)?;
    let n = layout.num_links();
    let mut times = Vec::new();
    let mut states: Vec<NavState> = Vec::new();
    let mut stationary: Vec<Vec<bool>> = Vec::new();
    for (idx, raw_line) in content.lines().enumerate() {
        let line = idx + 1;
        let l = raw_line.trim();
        if l.is_empty() || l.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = l.split(',').collect();
        if parts.len() != 13 {
            return Err(IoError::Parse {
                path: path.into(),
                line,
                msg: format!("expected 13 fields, got {}", parts.len()),
            });
        }
        let t: f64 = parse_field(path, line, parts[0], "timestamp")?;
        let link: usize = parse_field(path, line, parts[1], "link id")?;
        if link >= n {
            return Err(IoError::Parse {
                path: path.into(),
                line,
                msg: format!("link id {link} out of range for {n}-link chain"),
            });
        }
        let vals: Vec<f64> = parts[2..12]
            .iter()
            .map(|p| parse_field(path, line, p, "value"))
            .collect::<Result<_, _>>()?;
        let flag: u8 = parse_field(path, line, parts[12], "stationary flag")?;
        if times.last() != Some(&t) {
            times.push(t);
            states.push(NavState::zeroed(layout.clone()));
            stationary.push(vec![false; n]);
        }
        let x = states.last_mut().unwrap();
        x.set_p(link, &Vector3::new(vals[0], vals[1], vals[2]));
        x.set_v(link, &Vector3::new(vals[3], vals[4], vals[5]));
        x.set_q(link, &Quat::from_parts(vals[6], Vector3::new(vals[7], vals[8], vals[9])));
        stationary.last_mut().unwrap()[link] = flag != 0;
    }
    Ok(TruthTrace { times, states, stationary })
}

/// Constant ground-truth parameters: injected biases and true geometry.
#[derive(Clone, Debug, PartialEq)]
pub struct TruthMeta {
    pub bias_a: Vec<Vector3<f64>>,
    pub bias_g: Vec<Vector3<f64>>,
    pub segments: Vec<(usize, usize, Vector3<f64>)>,
    pub camera_lever: Vector3<f64>,
    pub gravity: Vector3<f64>,
}

pub fn write_truth_meta(path: &Path, meta: &TruthMeta) -> Result<(), IoError> {
    let mut out = String::new();
    let v3 = |v: &Vector3<f64>| format!("{},{},{}", fmt_f64(v.x), fmt_f64(v.y), fmt_f64(v.z));
    for (k, b) in meta.bias_a.iter().enumerate() {
        let _ = writeln!(out, "bias_a.{k} = {}", v3(b));
    }
    for (k, b) in meta.bias_g.iter().enumerate() {
        let _ = writeln!(out, "bias_g.{k} = {}", v3(b));
    }
    for (i, j, l) in &meta.segments {
        let _ = writeln!(out, "segment.{i}.{j} = {}", v3(l));
    }
    let _ = writeln!(out, "camera_lever = {}", v3(&meta.camera_lever));
    let _ = writeln!(out, "gravity = {}", v3(&meta.gravity));
    write_string(path, &out)
}

pub fn read_truth_meta(path: &Path) -> Result<TruthMeta, IoError> {
    let kv = KvFile::load(path)?;
    let mut bias_a = Vec::new();
    let mut bias_g = Vec::new();
    for k in 0.. {
        match kv.get(&format!("bias_a.{k}")) {
            Some(_) => bias_a.push(kv.vec3(&format!("bias_a.{k}"))?),
            None => break,
        }
    }
    for k in 0.. {
        match kv.get(&format!("bias_g.{k}")) {
            Some(_) => bias_g.push(kv.vec3(&format!("bias_g.{k}"))?),
            None => break,
        }
    }
    let mut segments = Vec::new();
    for key in kv.keys() {
        if let Some(rest) = key.strip_prefix("segment.") {
            let mut it = rest.split('.');
            let (Some(i), Some(j), None) = (it.next(), it.next(), it.next()) else {
                return Err(kv.bad_value(key, "expected segment.<i>.<j>"));
            };
            let i: usize = i.parse().map_err(|_| kv.bad_value(key, "bad link id"))?;
            let j: usize = j.parse().map_err(|_| kv.bad_value(key, "bad link id"))?;
            segments.push((i, j, kv.vec3(key)?));
        }
    }
    Ok(TruthMeta {
        bias_a,
        bias_g,
        segments,
        camera_lever: kv.vec3("camera_lever")?,
        gravity: kv.vec3("gravity")?,
    })
}

// ---------------------------------------------------------------------------
// Chain model files.

/// `link.<id> = label`, `joint.<n> = i,j`, `camera_link = id`,
/// `gravity = x,y,z`.
pub fn write_chain(path: &Path, model: &ChainModel) -> Result<(), IoError> {
    let mut out = String::new();
    for link in &model.links {
        let _ = writeln!(out, "link.{} = {}", link.id, link.label);
    }
    for (n, (i, j)) in model.joints.iter().enumerate() {
        let _ = writeln!(out, "joint.{n} = {i},{j}");
    }
    let _ = writeln!(out, "camera_link = {}", model.camera_link);
    let _ = writeln!(
        out,
        "gravity = {},{},{}",
        fmt_f64(model.gravity_n.x),
        fmt_f64(model.gravity_n.y),
        fmt_f64(model.gravity_n.z)
    );
    write_string(path, &out)
}

pub fn read_chain(path: &Path) -> Result<ChainModel, IoError> {
    let kv = KvFile::load(path)?;
    let mut links = Vec::new();
    for id in 0.. {
        match kv.get(&format!("link.{id}")) {
            Some(label) => links.push(LinkSpec { id, label: label.to_string() }),
            None => break,
        }
    }
    let mut joints = Vec::new();
    for n in 0.. {
        let key = format!("joint.{n}");
        match kv.get(&key) {
            Some(v) => {
                let parts: Vec<&str> = v.split(',').collect();
                if parts.len() != 2 {
                    return Err(kv.bad_value(&key, "expected `i,j`"));
                }
                let i = parts[0].trim().parse().map_err(|_| kv.bad_value(&key, "bad link id"))?;
                let j = parts[1].trim().parse().map_err(|_| kv.bad_value(&key, "bad link id"))?;
                joints.push((i, j));
            }
            None => break,
        }
    }
    let camera_link = kv.usize_value("camera_link")?;
    let gravity = kv.vec3("gravity")?;
    ChainModel::new(links, joints, camera_link, gravity)
        .map_err(|e| kv.bad_value("link", &e.to_string()))
}

// ---------------------------------------------------------------------------
// Flat key-value files: `key = value`, `#` comments.

pub struct KvFile {
    path: PathBuf,
    entries: BTreeMap<String, (usize, String)>,
}

impl KvFile {
    pub fn load(path: &Path) -> Result<Self, IoError> {
        let content = read_to_string(path)?;
        let mut entries = BTreeMap::new();
        for (idx, raw_line) in content.lines().enumerate() {
            let line = idx + 1;
            let l = raw_line.trim();
            if l.is_empty() || l.starts_with('#') {
                continue;
            }
            let Some((key, value)) = l.split_once('=') else {
                return Err(IoError::Parse {
                    path: path.into(),
                    line,
                    msg: "expected `key = value`".into(),
                });
            };
            entries.insert(key.trim().to_string(), (line, value.trim().to_string()));
        }
        Ok(KvFile { path: path.into(), entries })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|s| s.as_str())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(_, v)| v.as_str())
    }

    pub fn required(&self, key: &str) -> Result<&str, IoError> {
        self.get(key).ok_or_else(|| IoError::MissingKey { path: self.path.clone(), key: key.into() })
    }

    fn line_of(&self, key: &str) -> usize {
        self.entries.get(key).map(|(l, _)| *l).unwrap_or(0)
    }

    pub fn bad_value(&self, key: &str, msg: &str) -> IoError {
        IoError::BadValue {
            path: self.path.clone(),
            line: self.line_of(key),
            key: key.into(),
            msg: msg.into(),
        }
    }

    pub fn f64_value(&self, key: &str) -> Result<f64, IoError> {
        self.required(key)?
            .parse()
            .map_err(|_| self.bad_value(key, "expected a number"))
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64, IoError> {
        match self.get(key) {
            Some(v) => v.parse().map_err(|_| self.bad_value(key, "expected a number")),
            None => Ok(default),
        }
    }

    pub fn usize_value(&self, key: &str) -> Result<usize, IoError> {
        self.required(key)?
            .parse()
            .map_err(|_| self.bad_value(key, "expected an unsigned integer"))
    }

    pub fn usize_or(&self, key: &str, default: usize) -> Result<usize, IoError> {
        match self.get(key) {
            Some(v) => v.parse().map_err(|_| self.bad_value(key, "expected an unsigned integer")),
            None => Ok(default),
        }
    }

    pub fn u64_or(&self, key: &str, default: u64) -> Result<u64, IoError> {
        match self.get(key) {
            Some(v) => v.parse().map_err(|_| self.bad_value(key, "expected an unsigned integer")),
            None => Ok(default),
        }
    }

    pub fn bool_or(&self, key: &str, default: bool) -> Result<bool, IoError> {
        match self.get(key) {
            Some("true") | Some("1") => Ok(true),
            Some("false") | Some("0") => Ok(false),
            Some(_) => Err(self.bad_value(key, "expected true/false")),
            None => Ok(default),
        }
    }

    pub fn vec3(&self, key: &str) -> Result<Vector3<f64>, IoError> {
        let raw = self.required(key)?;
        let parts: Vec<&str> = raw.split(',').collect();
        if parts.len() != 3 {
            return Err(self.bad_value(key, "expected `x,y,z`"));
        }
        let mut v = [0.0; 3];
        for (slot, p) in v.iter_mut().zip(&parts) {
            *slot = p
                .trim()
                .parse()
                .map_err(|_| self.bad_value(key, "expected numeric components"))?;
        }
        Ok(Vector3::new(v[0], v[1], v[2]))
    }

    pub fn vec3_or(&self, key: &str, default: Vector3<f64>) -> Result<Vector3<f64>, IoError> {
        if self.get(key).is_some() {
            self.vec3(key)
        } else {
            Ok(default)
        }
    }
}
