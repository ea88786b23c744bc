//! End-to-end CLI checks: simulate -> run -> batch, exit codes, and
//! byte-identical reruns.

use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_chainfusion"))
}

fn write(path: &Path, content: &str) {
    std::fs::write(path, content).unwrap();
}

#[test]
fn simulate_run_and_batch_flow() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("scenario.cfg");
    write(&scenario, "kind = gait\npath = o_shape\nduration = 20\nseed = 5\n");
    let data = dir.path().join("data");

    let out = bin()
        .args(["simulate", "--config"])
        .arg(&scenario)
        .arg("--out")
        .arg(&data)
        .output()
        .unwrap();
    assert!(out.status.success(), "simulate failed: {}", String::from_utf8_lossy(&out.stderr));
    for f in ["chain.cfg", "imu.csv", "slam.csv", "mocap.csv", "truth.csv", "truth_meta.cfg", "run.cfg"] {
        assert!(data.join(f).exists(), "missing {f}");
    }

    // Replay with both filters through the generated run config.
    for filter in ["ekf", "srukf"] {
        let run_out = dir.path().join(format!("out_{filter}"));
        let out = bin()
            .args(["run", "--config"])
            .arg(data.join("run.cfg"))
            .arg("--out")
            .arg(&run_out)
            .args(["--filter", filter])
            .output()
            .unwrap();
        assert!(
            out.status.success(),
            "run --filter {filter} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        for f in ["estimates.csv", "params.csv", "errors.csv", "metrics.csv", "report.cfg"] {
            assert!(run_out.join(f).exists(), "missing {f}");
        }
        let text = String::from_utf8_lossy(&out.stdout).to_string();
        assert!(text.contains("position RMSE"));
    }

    // Identical seeds -> byte-identical simulate outputs.
    let data2 = dir.path().join("data2");
    let out = bin()
        .args(["simulate", "--config"])
        .arg(&scenario)
        .arg("--out")
        .arg(&data2)
        .output()
        .unwrap();
    assert!(out.status.success());
    for f in ["imu.csv", "slam.csv", "mocap.csv", "truth.csv"] {
        let a = std::fs::read(data.join(f)).unwrap();
        let b = std::fs::read(data2.join(f)).unwrap();
        assert_eq!(a, b, "{f} differs between identical simulate runs");
    }
}

#[test]
fn batch_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let batch = dir.path().join("batch.cfg");
    write(
        &batch,
        "duration = 15\nscenario.0.kind = gait\nscenario.0.path = straight\n\
         scenario.1.kind = jump\nscenario.1.path = o_shape\nvariants = ekf-s,srukf-s\n",
    );
    let mut outputs = Vec::new();
    for pass in 0..2 {
        let out_dir = dir.path().join(format!("batch_{pass}"));
        let out = bin()
            .args(["batch", "--config"])
            .arg(&batch)
            .arg("--out")
            .arg(&out_dir)
            .args(["--seed", "7"])
            .output()
            .unwrap();
        assert!(out.status.success(), "batch failed: {}", String::from_utf8_lossy(&out.stderr));
        outputs.push(std::fs::read(out_dir.join("aggregate.csv")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1], "aggregate.csv not byte-identical");
}

#[test]
fn input_errors_exit_with_code_one() {
    let dir = tempfile::tempdir().unwrap();
    // Missing config file.
    let out = bin()
        .args(["run", "--config"])
        .arg(dir.path().join("nope.cfg"))
        .arg("--out")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));

    // Malformed scenario value.
    let bad = dir.path().join("bad.cfg");
    write(&bad, "kind = cartwheel\n");
    let out = bin()
        .args(["simulate", "--config"])
        .arg(&bad)
        .arg("--out")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));

    // IMU stream with a timestamp regression.
    let data = dir.path().join("data");
    std::fs::create_dir_all(&data).unwrap();
    write(&data.join("imu.csv"), "1.0,0,0,0,-9.81,0,0,0\n0.5,0,0,0,-9.81,0,0,0\n");
    write(&data.join("run.cfg"), "imu = imu.csv\npos_source = none\n");
    let out = bin()
        .args(["run", "--config"])
        .arg(data.join("run.cfg"))
        .arg("--out")
        .arg(dir.path().join("out2"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("imu.csv:2"), "error should carry file and line: {err}");
}

#[test]
fn check_subcommand_reports_selected_criteria() {
    let out = bin().args(["check", "--only", "1"]).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("criterion  1 [PASS] state census"));
}
