//! The SO(3) toolkit: hat/vee, the exponential and logarithm, attitude
//! errors and projection of a noisy matrix back onto the group.
//!
//! `cargo run -p softrod --example so3_maps`

use softrod::geometry::{c_matrix, exp_so3, hat, log_so3, orthogonality_defect, project_so3, rotation_error, vee, Mat3, Vec3};

fn main() -> softrod::Result<()> {
    let eta = Vec3::new(0.3, -1.2, 0.7);
    let r = exp_so3(&eta);
    println!("exp(eta) =\n{}", r.matrix());
    println!("log(exp(eta)) = {:?}", log_so3(&r)?.as_slice());
    println!("vee(hat(eta)) = {:?}", vee(&hat(&eta))?.as_slice());

    // Attitude error against a reference rotated a little about x.
    let r_star = exp_so3(&(eta + Vec3::new(0.1, 0.0, 0.0)));
    let e_r = rotation_error(&r, &r_star);
    let trace_error = 3.0 - (r_star.transpose() * r).matrix().trace();
    println!("e_R = {:?}, tr[I - R*^T R] = {trace_error:.6}", e_r.as_slice());
    println!("spectral norm of C(R, R*) = {:.6}", c_matrix(&r, &r_star).singular_values().max());

    // A matrix that drifted off the group, e.g. after many explicit steps.
    let drifted: Mat3 = r.matrix() * 1.001 + Mat3::from_element(1e-4);
    let fixed = project_so3(&drifted)?;
    println!("projection: defect {:.2e} -> {:.2e}", (drifted.transpose() * drifted - Mat3::identity()).norm(), orthogonality_defect(&fixed));
    Ok(())
}
