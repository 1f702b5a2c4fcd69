//! Sweeping the position and attitude gains with the same reference and
//! reporting the tracking error left after a few seconds.
//!
//! `cargo run --release -p softrod --example gain_sweep`

use softrod::harness::{run_closed_loop, RunConfig};

fn main() -> softrod::Result<()> {
    let base = RunConfig { estimator: false, duration: 3.0, log_every: 100, ..RunConfig::default() };
    println!("{:>5} {:>5} {:>11} {:>11}", "k_p", "k_R", "|e_p| end", "|e_R| end");
    for (k_p, k_r) in [(0.5f64, 0.5f64), (1.0, 1.0), (2.0, 2.0), (4.0, 4.0)] {
        let mut cfg = base.clone();
        cfg.apply_overrides(&format!("k_p={k_p},k_v={},k_r={k_r},k_omega={}", 2.0 * k_p.sqrt(), 2.0 * k_r.sqrt()))?;
        let out = run_closed_loop(&cfg)?;
        let last = out.records.last().expect("records");
        let status = out.failure.as_ref().map_or(String::new(), |e| format!("  ({e})"));
        println!("{k_p:>5} {k_r:>5} {:>11.3e} {:>11.3e}{status}", last.tracking[0], last.tracking[2]);
    }
    Ok(())
}
