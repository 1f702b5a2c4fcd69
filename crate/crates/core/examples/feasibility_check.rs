//! Checking a run before starting it: per-node initial-condition gate of the
//! attitude controller, the admissible Lyapunov coupling and the explicit
//! stepping bound.
//!
//! `cargo run -p softrod --example feasibility_check`

use softrod::control::{check_convergence_conditions, c_upper_bound};
use softrod::discretize::check_cfl;
use softrod::harness::RunConfig;
use softrod::rod::{make_initial_state, Scenario};

fn main() -> softrod::Result<()> {
    for scenario in [Scenario::StraightAtRest, Scenario::MovingStart] {
        let cfg = RunConfig { scenario, ..RunConfig::default() };
        let grid = cfg.grid()?;
        let gains = cfg.gains(grid.n_nodes())?;
        let report = check_convergence_conditions(&make_initial_state(&grid, scenario), &cfg.trajectory()?, &grid, &gains);
        println!(
            "{scenario:?}: all hold = {}, min attitude margin {:.4}, min rate margin {:.4}, failing {:?}",
            report.all_hold(),
            report.min_attitude_margin(),
            report.min_rate_margin(),
            report.failing_nodes()
        );
    }

    // A large initial spin violates the rate condition.
    let cfg = RunConfig { k_r: 0.2, ..RunConfig::default() };
    let grid = cfg.grid()?;
    let gains = cfg.gains(grid.n_nodes())?;
    let report = check_convergence_conditions(&make_initial_state(&grid, Scenario::MovingStart), &cfg.trajectory()?, &grid, &gains);
    println!("k_R = 0.2: failing nodes {:?}", report.failing_nodes());

    println!("c upper bound for k_R = 1, k_omega = 2: {:.4}", c_upper_bound(1.0, 2.0));
    for dt in [1e-4, 2e-4, 5e-4] {
        let cfl = check_cfl(&cfg.params()?, &grid, dt);
        println!("dt = {dt:.0e}: bound {:.3e}, margin {:.2}, passes {}", cfl.dt_max, cfl.margin(), cfl.passes);
    }
    Ok(())
}
