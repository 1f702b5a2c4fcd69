//! Task-space tracking control: error terms, the feedforward transform that
//! cancels the rod's nonlinear dynamics, PD laws for the resulting
//! double-integrator/attitude system, and the feasibility and Lyapunov checks
//! that certify convergence.

use nalgebra::Matrix2;

use crate::discretize::DerivativeOperator;
use crate::error::{Error, Result};
use crate::geometry::{c_matrix, rotation_error, Mat3, Rotation, Vec3};
use crate::rod::{angular_rate, elastic_terms, Grid, RodParams, RodState, Wrench};

/// Strict inequalities in the feasibility conditions are tested against this
/// margin, which absorbs rounding in `tr[R*^T R]`.
pub const FEASIBILITY_EPS: f64 = 1e-13;

/// Desired values at one `(s, t)`: `p*`, `R*`, `v*` (global), `omega*`
/// (local) and their time derivatives `v_t*`, `omega_t*`.
#[derive(Clone, Debug, PartialEq)]
pub struct DesiredSample {
    pub p: Vec3,
    pub r: Rotation,
    pub v: Vec3,
    pub omega: Vec3,
    pub v_t: Vec3,
    pub omega_t: Vec3,
}

/// A smooth reference satisfying `p_t* = v*`, `R_t* = R* omega*^`.
pub trait DesiredTrajectory {
    fn sample(&self, s: f64, t: f64) -> DesiredSample;

    fn sample_grid(&self, grid: &Grid, t: f64) -> Vec<DesiredSample> {
        grid.s_values().iter().map(|&s| self.sample(s, t)).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConsistencyResidual {
    /// max |(p*(t+h) - p*(t-h))/2h - v*|
    pub position: f64,
    /// max |(R*(t+h) - R*(t-h))/2h - R* omega*^|
    pub rotation: f64,
    /// max |(v*(t+h) - v*(t-h))/2h - v_t*|
    pub velocity: f64,
    /// max |(omega*(t+h) - omega*(t-h))/2h - omega_t*|
    pub angular_velocity: f64,
}

/// Central-difference check of the trajectory's kinematic consistency.
pub fn trajectory_consistency<T: DesiredTrajectory + ?Sized>(
    traj: &T,
    grid: &Grid,
    times: &[f64],
    h: f64,
) -> ConsistencyResidual {
    let mut res = ConsistencyResidual {
        position: 0.0,
        rotation: 0.0,
        velocity: 0.0,
        angular_velocity: 0.0,
    };
    for &t in times {
        for &s in grid.s_values() {
            let (a, b, c) = (traj.sample(s, t - h), traj.sample(s, t), traj.sample(s, t + h));
            let inv = 0.5 / h;
            res.position = res.position.max(((c.p - a.p) * inv - b.v).norm());
            let r_t = (c.r.matrix() - a.r.matrix()) * inv;
            res.rotation = res.rotation.max((r_t - b.r.matrix() * crate::geometry::hat(&b.omega)).norm());
            res.velocity = res.velocity.max(((c.v - a.v) * inv - b.v_t).norm());
            res.angular_velocity = res.angular_velocity.max(((c.omega - a.omega) * inv - b.omega_t).norm());
        }
    }
    res
}

/// Upper bound on the Lyapunov coupling `c` at one node.
pub fn c_upper_bound(k_r: f64, k_omega: f64) -> f64 {
    k_omega
        .min(4.0 * k_r * k_omega / (k_omega * k_omega + 4.0 * k_r))
        .min(k_r.sqrt())
}

/// Per-node gains. Construction enforces positivity and `0 < c < c_upper_bound`.
#[derive(Clone, Debug, PartialEq)]
pub struct GainProfile {
    pub k_p: Vec<f64>,
    pub k_v: Vec<f64>,
    pub k_r: Vec<f64>,
    pub k_omega: Vec<f64>,
    pub c: Vec<f64>,
}

impl GainProfile {
    pub fn new(k_p: Vec<f64>, k_v: Vec<f64>, k_r: Vec<f64>, k_omega: Vec<f64>, c: Vec<f64>) -> Result<Self> {
        let n = k_p.len();
        for len in [k_v.len(), k_r.len(), k_omega.len(), c.len()] {
            if len != n {
                return Err(Error::LengthMismatch { expected: n, actual: len });
            }
        }
        for i in 0..n {
            for (name, value) in [
                ("k_p", k_p[i]),
                ("k_v", k_v[i]),
                ("k_R", k_r[i]),
                ("k_omega", k_omega[i]),
                ("c", c[i]),
            ] {
                if !(value > 0.0 && value.is_finite()) {
                    return Err(Error::InvalidGains {
                        node: i,
                        reason: format!("{name} = {value} must be positive"),
                    });
                }
            }
            let bound = c_upper_bound(k_r[i], k_omega[i]);
            if c[i] >= bound {
                return Err(Error::InvalidGains {
                    node: i,
                    reason: format!("c = {} must be below {bound}", c[i]),
                });
            }
        }
        Ok(Self { k_p, k_v, k_r, k_omega, c })
    }

    /// Uniform gains; `c` defaults to half its admissible upper bound.
    pub fn constant(n: usize, k_p: f64, k_v: f64, k_r: f64, k_omega: f64) -> Result<Self> {
        let c = 0.5 * c_upper_bound(k_r, k_omega);
        Self::new(vec![k_p; n], vec![k_v; n], vec![k_r; n], vec![k_omega; n], vec![c; n])
    }

    /// All-zero gains: the controller reduces to pure feedforward. Not a
    /// valid Lyapunov profile, so it bypasses validation.
    pub fn feedforward_only(n: usize) -> Self {
        Self {
            k_p: vec![0.0; n],
            k_v: vec![0.0; n],
            k_r: vec![0.0; n],
            k_omega: vec![0.0; n],
            c: vec![0.0; n],
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.k_p.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrackingErrors {
    pub e_p: Vec<Vec3>,
    pub e_v: Vec<Vec3>,
    pub e_r: Vec<Vec3>,
    pub e_omega: Vec<Vec3>,
}

impl TrackingErrors {
    /// `[sup|e_p|, sup|e_v|, sup|e_R|, sup|e_omega|]` over nodes `from..`.
    pub fn sup_norms(&self, from: usize) -> [f64; 4] {
        let sup = |f: &[Vec3]| f[from..].iter().map(|x| x.norm()).fold(0.0, f64::max);
        [sup(&self.e_p), sup(&self.e_v), sup(&self.e_r), sup(&self.e_omega)]
    }
}

fn errors_from_samples(state: &RodState, desired: &[DesiredSample]) -> TrackingErrors {
    let n = state.n_nodes();
    let mut e = TrackingErrors {
        e_p: Vec::with_capacity(n),
        e_v: Vec::with_capacity(n),
        e_r: Vec::with_capacity(n),
        e_omega: Vec::with_capacity(n),
    };
    for (i, d) in desired.iter().enumerate() {
        let r = &state.r[i];
        e.e_p.push(state.p[i] - d.p);
        e.e_v.push(state.v[i] - d.v);
        e.e_r.push(rotation_error(r, &d.r));
        e.e_omega.push(state.omega[i] - r.transpose() * (d.r * d.omega));
    }
    e
}

pub fn tracking_errors<T: DesiredTrajectory + ?Sized>(state: &RodState, traj: &T, grid: &Grid, t: f64) -> TrackingErrors {
    errors_from_samples(state, &traj.sample_grid(grid, t))
}

fn virtual_from_samples(
    errors: &TrackingErrors,
    state: &RodState,
    desired: &[DesiredSample],
    gains: &GainProfile,
) -> (Vec<Vec3>, Vec<Vec3>) {
    let n = state.n_nodes();
    let mut f_star = Vec::with_capacity(n);
    let mut l_star = Vec::with_capacity(n);
    for (i, d) in desired.iter().enumerate() {
        f_star.push(d.v_t - errors.e_p[i] * gains.k_p[i] - errors.e_v[i] * gains.k_v[i]);
        let rel = state.r[i].transpose() * d.r;
        let w = state.omega[i];
        l_star.push(
            rel * d.omega_t - errors.e_r[i] * gains.k_r[i] - errors.e_omega[i] * gains.k_omega[i]
                - w.cross(&(rel * d.omega)),
        );
    }
    (f_star, l_star)
}

/// PD laws for the decoupled system: `f* = v_t* - k_p e_p - k_v e_v` and
/// `l* = R^T R* omega_t* - k_R e_R - k_omega e_omega - omega^ R^T R* omega*`.
pub fn virtual_inputs<T: DesiredTrajectory + ?Sized>(
    errors: &TrackingErrors,
    state: &RodState,
    traj: &T,
    grid: &Grid,
    t: f64,
    gains: &GainProfile,
) -> (Vec<Vec3>, Vec<Vec3>) {
    virtual_from_samples(errors, state, &traj.sample_grid(grid, t), gains)
}

/// Control wrench `(f_c, l_c)` that turns the rod dynamics into
/// `v_t = f*`, `omega_t = l*`.
pub fn feedforward_transform(
    state: &RodState,
    f_star: &[Vec3],
    l_star: &[Vec3],
    env: &Wrench,
    params: &RodParams,
    grid: &Grid,
) -> Result<Wrench> {
    let d = DerivativeOperator::new(grid)?;
    feedforward_with(state, f_star, l_star, env, params, &d)
}

fn feedforward_with(
    state: &RodState,
    f_star: &[Vec3],
    l_star: &[Vec3],
    env: &Wrench,
    params: &RodParams,
    d: &DerivativeOperator,
) -> Result<Wrench> {
    let (elastic, _) = elastic_terms(state, params, d)?;
    let n = state.n_nodes();
    let rho_j = params.rho_j();
    let mut out = Wrench::zeros(n);
    for i in 0..n {
        let w = state.omega[i];
        out.f[i] = -elastic.linear[i] + f_star[i] * params.rho_sigma() - env.f[i];
        let inner = elastic.angular[i] - w.cross(&(rho_j * w)) - rho_j * l_star[i];
        out.l[i] = -(state.r[i] * inner) - env.l[i];
        // The elastic moment can exceed `rho_J l*` by six orders of magnitude,
        // so one refinement step against the model removes the rounding left
        // by the rotation round trip.
        let residual = angular_rate(&elastic.angular[i], &w, &state.r[i], &(out.l[i] + env.l[i]), params) - l_star[i];
        out.l[i] -= state.r[i] * (rho_j * residual);
    }
    Ok(out)
}

/// Full-state tracking controller bound to a trajectory, gains and the known
/// environment wrench. The state it is given may be true or estimated.
pub struct Controller<'a, T: DesiredTrajectory + ?Sized> {
    pub trajectory: &'a T,
    pub gains: &'a GainProfile,
    pub params: &'a RodParams,
    pub grid: &'a Grid,
    pub env: &'a Wrench,
    d: DerivativeOperator,
}

impl<'a, T: DesiredTrajectory + ?Sized> Controller<'a, T> {
    pub fn new(trajectory: &'a T, gains: &'a GainProfile, params: &'a RodParams, grid: &'a Grid, env: &'a Wrench) -> Result<Self> {
        Ok(Self {
            trajectory,
            gains,
            params,
            grid,
            env,
            d: DerivativeOperator::new(grid)?,
        })
    }

    /// Control part `(f_c, l_c)` only.
    pub fn control_wrench(&self, state: &RodState, t: f64) -> Result<Wrench> {
        let desired = self.trajectory.sample_grid(self.grid, t);
        let errors = errors_from_samples(state, &desired);
        let (f_star, l_star) = virtual_from_samples(&errors, state, &desired, self.gains);
        feedforward_with(state, &f_star, &l_star, self.env, self.params, &self.d)
    }

    /// Environment plus control wrench, i.e. what the plant sees.
    pub fn total_wrench(&self, state: &RodState, t: f64) -> Result<Wrench> {
        Ok(self.control_wrench(state, t)?.plus(self.env))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NodeFeasibility {
    /// `tr[I - R*^T R]` at `t = 0`, in `[0, 4]`.
    pub trace_error: f64,
    /// `4 - tr[I - R*^T R]`.
    pub attitude_margin: f64,
    pub attitude_ok: bool,
    /// `k_R (4 - tr[I - R*^T R]) - |e_omega|^2`.
    pub rate_margin: f64,
    pub rate_ok: bool,
    /// `V2(s, 0) / k_R` evaluated with `c = 0`; must stay below 2.
    pub d: f64,
    pub c_upper_bound: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeasibilityReport {
    pub nodes: Vec<NodeFeasibility>,
}

impl FeasibilityReport {
    pub fn all_hold(&self) -> bool {
        self.nodes.iter().all(|n| n.attitude_ok && n.rate_ok)
    }

    pub fn min_attitude_margin(&self) -> f64 {
        self.nodes.iter().map(|n| n.attitude_margin).fold(f64::INFINITY, f64::min)
    }

    pub fn min_rate_margin(&self) -> f64 {
        self.nodes.iter().map(|n| n.rate_margin).fold(f64::INFINITY, f64::min)
    }

    pub fn failing_nodes(&self) -> Vec<usize> {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| !(n.attitude_ok && n.rate_ok))
            .map(|(i, _)| i)
            .collect()
    }
}

/// Evaluates the initial-condition requirements of the convergence theorem at
/// every node, for a state taken as the `t = 0` state.
pub fn feasibility_from_samples(state: &RodState, desired: &[DesiredSample], gains: &GainProfile) -> FeasibilityReport {
    let errors = errors_from_samples(state, desired);
    let nodes = desired
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let trace_error = 3.0 - (d.r.transpose() * state.r[i]).matrix().trace();
            let attitude_margin = 4.0 - trace_error;
            let k_r = gains.k_r[i];
            let ew2 = errors.e_omega[i].norm_squared();
            let rate_margin = k_r * attitude_margin - ew2;
            let d_val = if k_r > 0.0 {
                (0.5 * k_r * trace_error + 0.5 * ew2) / k_r
            } else {
                f64::INFINITY
            };
            NodeFeasibility {
                trace_error,
                attitude_margin,
                attitude_ok: attitude_margin > FEASIBILITY_EPS,
                rate_margin,
                rate_ok: rate_margin > FEASIBILITY_EPS,
                d: d_val,
                c_upper_bound: c_upper_bound(k_r, gains.k_omega[i]),
            }
        })
        .collect();
    FeasibilityReport { nodes }
}

pub fn check_convergence_conditions<T: DesiredTrajectory + ?Sized>(
    state0: &RodState,
    traj: &T,
    grid: &Grid,
    gains: &GainProfile,
) -> FeasibilityReport {
    feasibility_from_samples(state0, &traj.sample_grid(grid, 0.0), gains)
}

/// Solution of `A^T P + P A = -I` for `A = [[0, 1], [-k_p, -k_v]]`.
pub fn position_lyapunov_matrix(k_p: f64, k_v: f64) -> Matrix2<f64> {
    let p12 = 0.5 / k_p;
    let p22 = (1.0 + 2.0 * p12) / (2.0 * k_v);
    let p11 = k_p * p22 + k_v * p12;
    Matrix2::new(p11, p12, p12, p22)
}

/// Per-node `(V1, V2)`.
pub fn lyapunov_value<T: DesiredTrajectory + ?Sized>(
    errors: &TrackingErrors,
    state: &RodState,
    traj: &T,
    grid: &Grid,
    t: f64,
    gains: &GainProfile,
) -> (Vec<f64>, Vec<f64>) {
    lyapunov_from_samples(errors, state, &traj.sample_grid(grid, t), gains)
}

pub fn lyapunov_from_samples(
    errors: &TrackingErrors,
    state: &RodState,
    desired: &[DesiredSample],
    gains: &GainProfile,
) -> (Vec<f64>, Vec<f64>) {
    let mut v1 = Vec::with_capacity(desired.len());
    let mut v2 = Vec::with_capacity(desired.len());
    for (i, d) in desired.iter().enumerate() {
        let p = position_lyapunov_matrix(gains.k_p[i], gains.k_v[i]);
        let (ep, ev) = (errors.e_p[i], errors.e_v[i]);
        v1.push(p[(0, 0)] * ep.norm_squared() + 2.0 * p[(0, 1)] * ep.dot(&ev) + p[(1, 1)] * ev.norm_squared());
        let trace_error = 3.0 - (d.r.transpose() * state.r[i]).matrix().trace();
        let (er, ew) = (errors.e_r[i], errors.e_omega[i]);
        v2.push(0.5 * gains.k_r[i] * trace_error + 0.5 * ew.norm_squared() + gains.c[i] * er.dot(&ew));
    }
    (v1, v2)
}

/// Quadratic-form bounds `e2^T M1 e2 <= V2 <= e2^T M2 e2` with
/// `e2 = [|e_R|, |e_omega|]`.
pub fn v2_bounds(e_r_norm: f64, e_omega_norm: f64, k_r: f64, c: f64, d: f64) -> (f64, f64) {
    let e2 = nalgebra::Vector2::new(e_r_norm, e_omega_norm);
    let m1 = Matrix2::new(k_r, -c, -c, 1.0) * 0.5;
    let m2 = Matrix2::new(2.0 * k_r / (2.0 - d), c, c, 1.0) * 0.5;
    (e2.dot(&(m1 * e2)), e2.dot(&(m2 * e2)))
}

/// Closed-form error rates of the decoupled closed loop:
/// `(e_v, -k_p e_p - k_v e_v, C(R*^T R) e_omega, -k_R e_R - k_omega e_omega)`.
pub fn closed_loop_error_rates(
    errors: &TrackingErrors,
    state: &RodState,
    desired: &[DesiredSample],
    gains: &GainProfile,
) -> TrackingErrors {
    let n = desired.len();
    let mut out = TrackingErrors {
        e_p: Vec::with_capacity(n),
        e_v: Vec::with_capacity(n),
        e_r: Vec::with_capacity(n),
        e_omega: Vec::with_capacity(n),
    };
    for (i, d) in desired.iter().enumerate() {
        out.e_p.push(errors.e_v[i]);
        out.e_v.push(-errors.e_p[i] * gains.k_p[i] - errors.e_v[i] * gains.k_v[i]);
        let c: Mat3 = c_matrix(&state.r[i], &d.r);
        out.e_r.push(c * errors.e_omega[i]);
        out.e_omega.push(-errors.e_r[i] * gains.k_r[i] - errors.e_omega[i] * gains.k_omega[i]);
    }
    out
}

/// Watches `V = V1 + V2` per node and counts increases after a transient.
#[derive(Clone, Debug)]
pub struct LyapunovMonitor {
    transient: f64,
    tolerance: f64,
    previous: Option<Vec<f64>>,
    pub checks: usize,
    pub increases: usize,
    pub worst_increase: f64,
}

impl LyapunovMonitor {
    /// `tolerance` is relative to the previous value (plus an absolute floor
    /// of the same size).
    pub fn new(transient: f64, tolerance: f64) -> Self {
        Self {
            transient,
            tolerance,
            previous: None,
            checks: 0,
            increases: 0,
            worst_increase: 0.0,
        }
    }

    pub fn observe(&mut self, t: f64, values: Vec<f64>) {
        if let Some(prev) = &self.previous {
            if t >= self.transient {
                for (a, b) in prev.iter().zip(&values) {
                    self.checks += 1;
                    let slack = self.tolerance * (a.abs() + 1e-300) + self.tolerance * 1e-12;
                    if *b > a + slack {
                        self.increases += 1;
                        self.worst_increase = self.worst_increase.max(b - a);
                    }
                }
            }
        }
        self.previous = Some(values);
    }

    pub fn is_descending(&self) -> bool {
        self.increases == 0
    }
}
