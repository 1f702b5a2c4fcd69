//! The filter's sparse Jacobian: structure, a finite-difference check along a
//! random direction, and the fastest modes of the linearization for a rod at
//! rest and for the default swing shortly after a moving start.
//!
//! `cargo run --release -p softrod --example linearization`

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use softrod::discretize::ManifoldState;
use softrod::estimate::assemble_a;
use softrod::control::Controller;
use softrod::geometry::Vec3;
use softrod::harness::{run_closed_loop, RunConfig};
use softrod::rod::{dynamics_rhs, make_initial_state, Grid, RodParams, RodState, RodTangent, Scenario, Wrench};

fn random_field(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec3> {
    (0..n).map(|_| Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect()
}

fn fastest_mode(x: &RodState, wrench: &Wrench, params: &RodParams, grid: &Grid) -> softrod::Result<f64> {
    let a = assemble_a(x, wrench, params, grid)?;
    Ok(a.a.to_dense().complex_eigenvalues().iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max))
}

fn main() -> softrod::Result<()> {
    let params = RodParams::circular(0.5, 0.02, 2000.0, 3e7, 1e7)?;
    let grid = Grid::new(0.5, 0.025)?;
    let n = grid.n_nodes();
    let mut rng = ChaCha8Rng::seed_from_u64(3);

    // A gently bent, moving rod.
    let mut x = make_initial_state(&grid, Scenario::StraightAtRest);
    for (i, s) in grid.s_values().iter().enumerate() {
        x.p[i].x = 0.01 * s * s;
        x.v[i] = Vec3::new(0.1, 0.0, 0.0) * *s;
    }
    let zero = Wrench::zeros(n);
    let a = assemble_a(&x, &zero, &params, &grid)?;
    let dim = a.a.nrows();
    println!("A: {dim} x {dim}, {} nonzeros ({:.1}% dense)", a.a.nnz(), 100.0 * a.a.nnz() as f64 / (dim * dim) as f64);

    let dir = RodTangent { p_t: random_field(&mut rng, n), rot: random_field(&mut rng, n), v_t: random_field(&mut rng, n), omega_t: random_field(&mut rng, n) };
    let lin = a.apply(&dir);
    let f0 = dynamics_rhs(&x, &zero, &params, &grid)?;
    for h in [1e-4, 1e-6, 1e-8] {
        let f1 = dynamics_rhs(&x.retract(&dir, h), &zero, &params, &grid)?;
        let err: f64 = (0..n).map(|i| ((f1.v_t[i] - f0.v_t[i]) / h - lin.v_t[i]).norm_squared()).sum::<f64>().sqrt();
        let scale: f64 = lin.v_t.iter().map(|v| v.norm_squared()).sum::<f64>().sqrt();
        println!("h = {h:.0e}: relative error of velocity rows {:.2e}", err / scale);
    }

    let rest = make_initial_state(&grid, Scenario::StraightAtRest);
    println!("largest real part, straight at rest: {:.3e} 1/s", fastest_mode(&rest, &zero, &params, &grid)?);

    // The default closed loop 0.1 s after a moving start, with the wrench the
    // controller applies there.
    let cfg = RunConfig { estimator: false, duration: 0.1, ..RunConfig::default() };
    let out = run_closed_loop(&cfg)?;
    let (traj, gains) = (cfg.trajectory()?, cfg.gains(n)?);
    let wrench = Controller::new(&traj, &gains, &params, &grid, &zero)?.total_wrench(&out.final_plant, cfg.duration)?;
    println!("largest real part, swinging at 0.1 s: {:.3e} 1/s", fastest_mode(&out.final_plant, &wrench, &params, &grid)?);
    Ok(())
}
