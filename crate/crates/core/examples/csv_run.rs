//! A run described in configuration text, written to disk as CSV: metrics,
//! state snapshots, the echoed configuration and a summary report.
//!
//! `cargo run --release -p softrod --example csv_run [out_dir]`

use std::path::PathBuf;

use softrod::harness::{emit_csv, run_closed_loop, RunConfig};

const CONFIG: &str = "
# a gentle swing from a straight rod at rest, filter running alongside
scenario = straight_at_rest
amplitude = 0.05
duration = 0.5
seed = 7
log_every = 25
snapshot_every = 1250
";

fn sci(values: &[f64]) -> String {
    values.iter().map(|v| format!("{v:.3e}")).collect::<Vec<_>>().join(" ")
}

fn main() -> softrod::Result<()> {
    let out_dir = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("softrod_csv_run"));
    let cfg = RunConfig::from_text(CONFIG)?;
    let out = run_closed_loop(&cfg)?;
    for path in emit_csv(&out, &out_dir)? {
        println!("wrote {}", path.display());
    }
    match &out.failure {
        None => println!("completed {} steps", out.steps_completed),
        Some(err) => println!("stopped after {} steps: {err}", out.steps_completed),
    }
    let last = out.records.last().expect("at least one record");
    println!("final tracking sup-norms {}", sci(&last.tracking));
    if let Some(eps) = last.estimation {
        println!("final estimation errors   {}", sci(&eps));
    }
    Ok(())
}
