//! Open-loop plant: a straight rod clamped at its base, released under
//! gravity acting along -x. Without damping the tip oscillates about the
//! sagged equilibrium.
//!
//! `cargo run --release -p softrod --example gravity_sag`

use softrod::geometry::Vec3;
use softrod::discretize::{check_cfl, step, IntegratorConfig};
use softrod::rod::{dynamics_rhs, make_initial_state, Grid, RodParams, RodState, Scenario, Wrench};

fn main() -> softrod::Result<()> {
    let params = RodParams::circular(0.5, 0.02, 2000.0, 3e7, 1e7)?;
    let grid = Grid::new(0.5, 0.025)?;
    let integ = IntegratorConfig::default();
    let cfl = check_cfl(&params, &grid, integ.dt);
    println!("dt = {:.1e}, bound {:.2e}, passes: {}", cfl.dt, cfl.dt_max, cfl.passes);

    let n = grid.n_nodes();
    // Distributed weight per unit length, acting sideways so the rod bends.
    let load = Wrench { f: vec![Vec3::new(-params.rho_sigma() * 9.81, 0.0, 0.0); n], l: vec![Vec3::zeros(); n] };
    let mut x = make_initial_state(&grid, Scenario::StraightAtRest);
    let tip = grid.last();
    let steps = 5000u64;
    for k in 0..steps {
        let t = k as f64 * integ.dt;
        if k % 500 == 0 {
            println!("t = {t:.2} s  tip = ({:+.5}, {:+.5}, {:+.5})", x.p[tip].x, x.p[tip].y, x.p[tip].z);
        }
        x = step(&x, t, |s: &RodState, _| dynamics_rhs(s, &load, &params, &grid), &integ, k)?;
    }
    x.check_finite()?;
    Ok(())
}
