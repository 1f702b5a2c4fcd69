//! Recovering linear and angular strains from a sampled configuration.
//! A rod bent into a quarter circle has constant curvature `pi / (2L)`
//! about its local y axis and no stretch or shear.
//!
//! `cargo run -p softrod --example strain_recovery`

use std::f64::consts::PI;

use softrod::geometry::{exp_so3, Vec3};
use softrod::rod::{strains, Grid, RodState};

fn quarter_circle(grid: &Grid) -> RodState {
    let k = PI / (2.0 * grid.length());
    let s = grid.s_values();
    RodState {
        p: s.iter().map(|&s| Vec3::new(1.0 - (k * s).cos(), 0.0, (k * s).sin()) / k).collect(),
        r: s.iter().map(|&s| exp_so3(&(Vec3::y() * (k * s)))).collect(),
        v: vec![Vec3::zeros(); s.len()],
        omega: vec![Vec3::zeros(); s.len()],
    }
}

fn main() -> softrod::Result<()> {
    let exact_u = PI / (2.0 * 0.5);
    println!("{:>6} {:>12} {:>12}", "nodes", "max|q-e_z|", "max|u-u*|");
    for nodes in [11, 21, 41, 81] {
        let grid = Grid::with_nodes(0.5, nodes)?;
        let (q, u) = strains(&quarter_circle(&grid), &grid)?;
        let eq = q.iter().map(|q| (q - Vec3::z()).norm()).fold(0.0, f64::max);
        let eu = u.iter().map(|u| (u - Vec3::y() * exact_u).norm()).fold(0.0, f64::max);
        println!("{nodes:>6} {eq:>12.3e} {eu:>12.3e}");
    }
    Ok(())
}
