//! Closed-loop tracking of the rigid swing reference with full state
//! feedback. Prints the sup-norm tracking errors once per simulated second.
//!
//! `cargo run --release -p softrod --example swing_tracking`

use softrod::harness::{run_closed_loop, RunConfig};

fn main() -> softrod::Result<()> {
    let cfg = RunConfig { estimator: false, duration: 6.0, log_every: 50, ..RunConfig::default() };
    let out = run_closed_loop(&cfg)?;
    if let Some(err) = &out.failure {
        eprintln!("run stopped early: {err}");
    }
    println!("{:>5} {:>10} {:>10} {:>10} {:>10}", "t", "|e_p|", "|e_v|", "|e_R|", "|e_w|");
    for r in out.records.iter().filter(|r| r.t.fract() < 1e-9 || 1.0 - r.t.fract() < 1e-9) {
        let [p, v, rot, w] = r.tracking;
        println!("{:>5.1} {p:>10.3e} {v:>10.3e} {rot:>10.3e} {w:>10.3e}", r.t);
    }
    Ok(())
}
