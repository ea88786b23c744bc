//! Runs all four filter variants over one synthetic scenario and prints
//! per-link RMSEs plus the convergence report.
//!
//!     cargo run --release --example run_variants -- 60

use chainfusion::harness::{run_variant, simulate_scenario, STANDARD_VARIANTS};
use chainfusion::sim::{PathKind, ScenarioConfig, ScenarioKind};

fn main() {
    let duration: f64 = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(60.0);
    let cfg = ScenarioConfig::nominal(ScenarioKind::Gait, PathKind::OShape, 42, duration);
    let sim = simulate_scenario(&cfg).expect("simulate");
    for (kind, source, name) in STANDARD_VARIANTS {
        let started = std::time::Instant::now();
        match run_variant(&sim, kind, source) {
            Ok((out, m)) => {
                print!("{name:8} cycle={:7.3} ms wall={:5.1} s", m.mean_cycle_ms, started.elapsed().as_secs_f64());
                for lm in &m.links {
                    print!(
                        "  {}: pos={:6.2} cm att={:5.2} deg",
                        lm.label, lm.pos_rmse_cm, lm.att_rmse_deg
                    );
                }
                println!();
                for c in m.seg_convergence.iter().chain(&m.bias_g_convergence).chain(&m.bias_a_convergence) {
                    println!(
                        "    {:14} final={:9.4e} thr={:9.4e} conv_at={:?}",
                        c.name, c.final_err, c.threshold, c.converged_at
                    );
                }
                let _ = out;
            }
            Err(e) => println!("{name:8} FAILED: {e}"),
        }
    }
}
