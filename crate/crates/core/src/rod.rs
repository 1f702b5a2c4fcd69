//! The Cosserat rod plant.
//!
//! State is `(p, R, v, omega)` sampled on a uniform grid: positions and linear
//! velocities in the global frame, cross-section frames, and angular
//! velocities in the local frame. Node 0 is clamped, the last node is free.

use std::f64::consts::PI;

use crate::discretize::{DerivativeOperator, ManifoldState, Tangent};
use crate::error::{Error, Result};
use crate::geometry::{exp_so3, is_rotation, orthogonality_defect, project_so3, vee_skew, Mat3, Rotation, Vec3, TAU_SKEW};

/// Uniform arc-length grid on `[0, L]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    ds: f64,
    s: Vec<f64>,
}

impl Grid {
    /// Grid with spacing `ds`; `length / ds` must be (numerically) an integer.
    pub fn new(length: f64, ds: f64) -> Result<Self> {
        if !(length > 0.0 && ds > 0.0 && length.is_finite() && ds.is_finite()) {
            return Err(Error::InvalidGrid(format!("length {length} and ds {ds} must be positive")));
        }
        let intervals = (length / ds).round();
        if intervals < 1.0 || ((intervals * ds - length) / length).abs() > 1e-9 {
            return Err(Error::InvalidGrid(format!(
                "length {length} is not an integer multiple of ds {ds}"
            )));
        }
        Self::with_nodes(length, intervals as usize + 1)
    }

    pub fn with_nodes(length: f64, n_nodes: usize) -> Result<Self> {
        if n_nodes < 2 || !(length.is_finite() && length > 0.0) {
            return Err(Error::InvalidGrid(format!(
                "need at least 2 nodes on a positive length, got {n_nodes} on {length}"
            )));
        }
        let ds = length / (n_nodes - 1) as f64;
        let mut s: Vec<f64> = (0..n_nodes).map(|i| i as f64 * ds).collect();
        s[n_nodes - 1] = length;
        Ok(Self { ds, s })
    }

    pub fn n_nodes(&self) -> usize {
        self.s.len()
    }

    pub fn ds(&self) -> f64 {
        self.ds
    }

    pub fn length(&self) -> f64 {
        self.s[self.s.len() - 1]
    }

    pub fn s_values(&self) -> &[f64] {
        &self.s
    }

    pub fn last(&self) -> usize {
        self.s.len() - 1
    }
}

/// Material and geometric constants. The reference configuration is straight
/// (`q_bar = e_z`, `u_bar = 0`) and uniform along the rod.
#[derive(Clone, Debug, PartialEq)]
pub struct RodParams {
    pub length: f64,
    pub radius: f64,
    pub density: f64,
    /// Cross-sectional area sigma.
    pub area: f64,
    /// Cross-section second-moment matrix J.
    pub inertia: Mat3,
    pub youngs: f64,
    pub shear: f64,
    pub k_l: Mat3,
    pub k_a: Mat3,
    pub q_bar: Vec3,
    pub u_bar: Vec3,
    rho_sigma: f64,
    rho_j: Mat3,
    rho_j_inv: Mat3,
}

impl RodParams {
    /// Circular cross-section: `sigma = pi r^2`, `J = diag(pi r^4/4, pi r^4/4, pi r^4/2)`.
    pub fn circular(length: f64, radius: f64, density: f64, youngs: f64, shear: f64) -> Result<Self> {
        let area = PI * radius * radius;
        let i2 = PI * radius.powi(4) / 4.0;
        let inertia = Mat3::from_diagonal(&Vec3::new(i2, i2, 2.0 * i2));
        Self::new(length, radius, density, area, inertia, youngs, shear)
    }

    pub fn new(
        length: f64,
        radius: f64,
        density: f64,
        area: f64,
        inertia: Mat3,
        youngs: f64,
        shear: f64,
    ) -> Result<Self> {
        for (name, value) in [
            ("length", length),
            ("radius", radius),
            ("density", density),
            ("area", area),
            ("youngs", youngs),
            ("shear", shear),
        ] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::InvalidParams(format!("{name} must be positive and finite, got {value}")));
            }
        }
        if (inertia - inertia.transpose()).norm() > 1e-12 * inertia.norm() {
            return Err(Error::InvalidParams("inertia J must be symmetric".into()));
        }
        if inertia.cholesky().is_none() {
            return Err(Error::InvalidParams("inertia J must be positive definite".into()));
        }
        let k_l = Mat3::from_diagonal(&Vec3::new(shear, shear, youngs)) * area;
        let k_a = Mat3::from_diagonal(&Vec3::new(youngs, youngs, shear)) * inertia;
        let rho_j = inertia * density;
        let rho_j_inv = rho_j
            .try_inverse()
            .ok_or_else(|| Error::InvalidParams("rho J is not invertible".into()))?;
        Ok(Self {
            length,
            radius,
            density,
            area,
            inertia,
            youngs,
            shear,
            k_l,
            k_a,
            q_bar: Vec3::new(0.0, 0.0, 1.0),
            u_bar: Vec3::zeros(),
            rho_sigma: density * area,
            rho_j,
            rho_j_inv,
        })
    }

    /// Same geometry with both moduli scaled by `factor`.
    pub fn with_scaled_moduli(&self, factor: f64) -> Result<Self> {
        Self::new(
            self.length,
            self.radius,
            self.density,
            self.area,
            self.inertia,
            self.youngs * factor,
            self.shear * factor,
        )
    }

    /// Mass per unit length, rho * sigma.
    pub fn rho_sigma(&self) -> f64 {
        self.rho_sigma
    }

    pub fn rho_j(&self) -> &Mat3 {
        &self.rho_j
    }

    pub fn rho_j_inv(&self) -> &Mat3 {
        &self.rho_j_inv
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RodState {
    pub p: Vec<Vec3>,
    pub r: Vec<Rotation>,
    pub v: Vec<Vec3>,
    pub omega: Vec<Vec3>,
}

impl RodState {
    pub fn n_nodes(&self) -> usize {
        self.p.len()
    }

    pub fn validate(&self, grid: &Grid) -> Result<()> {
        let n = grid.n_nodes();
        for len in [self.p.len(), self.r.len(), self.v.len(), self.omega.len()] {
            if len != n {
                return Err(Error::LengthMismatch { expected: n, actual: len });
            }
        }
        for (i, r) in self.r.iter().enumerate() {
            if !is_rotation(r) {
                return Err(Error::NonFiniteState { what: "rotation field (not in SO(3))", node: i });
            }
        }
        self.check_finite()
    }

    pub fn check_finite(&self) -> Result<()> {
        let fields: [(&'static str, &[Vec3]); 3] = [("p", &self.p), ("v", &self.v), ("omega", &self.omega)];
        for (what, field) in fields {
            if let Some(node) = field.iter().position(|x| !x.iter().all(|c| c.is_finite())) {
                return Err(Error::NonFiniteState { what, node });
            }
        }
        if let Some(node) = self.r.iter().position(|r| !r.matrix().iter().all(|c| c.is_finite())) {
            return Err(Error::NonFiniteState { what: "R", node });
        }
        Ok(())
    }

    /// Applies a rigid rotation `Q` about the origin: `p -> Qp`, `R -> QR`,
    /// `v -> Qv`; body angular velocities are unchanged.
    pub fn rotated(&self, q: &Rotation) -> Self {
        Self {
            p: self.p.iter().map(|p| q * p).collect(),
            r: self.r.iter().map(|r| q * r).collect(),
            v: self.v.iter().map(|v| q * v).collect(),
            omega: self.omega.clone(),
        }
    }
}

/// Time derivative of a [`RodState`]. `rot` is the body-frame angular
/// velocity driving `R_t = R rot^`.
#[derive(Clone, Debug, PartialEq)]
pub struct RodTangent {
    pub p_t: Vec<Vec3>,
    pub rot: Vec<Vec3>,
    pub v_t: Vec<Vec3>,
    pub omega_t: Vec<Vec3>,
}

impl RodTangent {
    pub fn zeros(n: usize) -> Self {
        Self {
            p_t: vec![Vec3::zeros(); n],
            rot: vec![Vec3::zeros(); n],
            v_t: vec![Vec3::zeros(); n],
            omega_t: vec![Vec3::zeros(); n],
        }
    }

    pub fn max_abs(&self) -> f64 {
        [&self.p_t, &self.rot, &self.v_t, &self.omega_t]
            .iter()
            .flat_map(|f| f.iter())
            .map(|x| x.amax())
            .fold(0.0, f64::max)
    }

    pub(crate) fn check_finite(&self) -> Result<()> {
        let fields: [(&'static str, &[Vec3]); 4] = [
            ("p_t", &self.p_t),
            ("R_t", &self.rot),
            ("v_t", &self.v_t),
            ("omega_t", &self.omega_t),
        ];
        for (what, field) in fields {
            if let Some(node) = field.iter().position(|x| !x.iter().all(|c| c.is_finite())) {
                return Err(Error::NonFiniteState { what, node });
            }
        }
        Ok(())
    }
}

impl Tangent for RodTangent {
    fn weighted_sum(terms: &[(f64, &Self)]) -> Self {
        let n = terms[0].1.p_t.len();
        let combine = |pick: fn(&RodTangent) -> &Vec<Vec3>| -> Vec<Vec3> {
            (0..n)
                .map(|i| terms.iter().fold(Vec3::zeros(), |acc, (w, t)| acc + pick(t)[i] * *w))
                .collect()
        };
        Self {
            p_t: combine(|t| &t.p_t),
            rot: combine(|t| &t.rot),
            v_t: combine(|t| &t.v_t),
            omega_t: combine(|t| &t.omega_t),
        }
    }
}

impl ManifoldState for RodState {
    type Tangent = RodTangent;

    fn retract(&self, k: &RodTangent, h: f64) -> Self {
        let axpy = |x: &[Vec3], dx: &[Vec3]| -> Vec<Vec3> { x.iter().zip(dx).map(|(a, b)| a + b * h).collect() };
        Self {
            p: axpy(&self.p, &k.p_t),
            r: self.r.iter().zip(&k.rot).map(|(r, w)| r * exp_so3(&(w * h))).collect(),
            v: axpy(&self.v, &k.v_t),
            omega: axpy(&self.omega, &k.omega_t),
        }
    }

    fn reorthonormalize(&mut self) -> Result<()> {
        for r in self.r.iter_mut() {
            *r = project_so3(r.matrix())?;
        }
        Ok(())
    }
}

/// Distributed external force `f` and moment `l`, both in the global frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Wrench {
    pub f: Vec<Vec3>,
    pub l: Vec<Vec3>,
}

impl Wrench {
    pub fn zeros(n: usize) -> Self {
        Self {
            f: vec![Vec3::zeros(); n],
            l: vec![Vec3::zeros(); n],
        }
    }

    /// Uniform gravity along `-z` with acceleration `g`.
    pub fn gravity(n: usize, params: &RodParams, g: f64) -> Self {
        Self {
            f: vec![Vec3::new(0.0, 0.0, -params.rho_sigma() * g); n],
            l: vec![Vec3::zeros(); n],
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.f.len()
    }

    pub fn plus(&self, other: &Wrench) -> Wrench {
        Wrench {
            f: self.f.iter().zip(&other.f).map(|(a, b)| a + b).collect(),
            l: self.l.iter().zip(&other.l).map(|(a, b)| a + b).collect(),
        }
    }
}

/// Everything derived from `(p, R)` that the dynamics and its linearization need.
///
/// `q` and `u` carry the free-end substitution (`q[last] = q_bar`,
/// `u[last] = u_bar`); `q_raw`/`u_raw` are the recovered strains everywhere.
#[derive(Clone, Debug)]
pub struct StrainData {
    pub p_s: Vec<Vec3>,
    pub r_s: Vec<Mat3>,
    pub q_raw: Vec<Vec3>,
    pub u_raw: Vec<Vec3>,
    pub q: Vec<Vec3>,
    pub u: Vec<Vec3>,
    pub q_s: Vec<Vec3>,
    pub u_s: Vec<Vec3>,
}

impl StrainData {
    pub fn compute(state: &RodState, params: &RodParams, d: &DerivativeOperator) -> Result<Self> {
        let (p_s, r_s, q_raw, u_raw) = recover(state, d)?;
        let last = q_raw.len() - 1;
        let mut q = q_raw.clone();
        let mut u = u_raw.clone();
        q[last] = params.q_bar;
        u[last] = params.u_bar;
        let q_s = d.d_ds(&q)?;
        let u_s = d.d_ds(&u)?;
        Ok(Self {
            p_s,
            r_s,
            q_raw,
            u_raw,
            q,
            u,
            q_s,
            u_s,
        })
    }
}

type Recovered = (Vec<Vec3>, Vec<Mat3>, Vec<Vec3>, Vec<Vec3>);

fn recover(state: &RodState, d: &DerivativeOperator) -> Result<Recovered> {
    let n = state.n_nodes();
    if n != d.n_nodes() {
        return Err(Error::LengthMismatch { expected: d.n_nodes(), actual: n });
    }
    let p_s = d.d_ds(&state.p)?;
    let mats: Vec<Mat3> = state.r.iter().map(|r| *r.matrix()).collect();
    let r_s = d.d_ds(&mats)?;
    let mut q = Vec::with_capacity(n);
    let mut u = Vec::with_capacity(n);
    for i in 0..n {
        let rt = state.r[i].matrix().transpose();
        q.push(rt * p_s[i]);
        let m = rt * r_s[i];
        // A discrete R^T R_s is only skew up to terms that exact rotations
        // produce from the neighbour angles; anything beyond that means the
        // rotation field itself is corrupted.
        let asymmetry = (m + m.transpose()).norm();
        let allowed: f64 = d
            .first_weights(i)
            .iter()
            .map(|&(j, w)| {
                let rel_trace = (state.r[i].matrix().transpose() * state.r[j].matrix()).trace();
                std::f64::consts::SQRT_2 * w.abs() * (3.0 - rel_trace).max(0.0)
            })
            .sum();
        if asymmetry > allowed * (1.0 + 1e-6) + TAU_SKEW {
            return Err(Error::NotSkewSymmetric { asymmetry });
        }
        u.push(vee_skew(&m));
    }
    Ok((p_s, r_s, q, u))
}

/// Linear and angular strains `q = R^T p_s`, `u = (R^T R_s)^vee` at every node.
pub fn strains(state: &RodState, grid: &Grid) -> Result<(Vec<Vec3>, Vec<Vec3>)> {
    let d = DerivativeOperator::new(grid)?;
    let (_, _, q, u) = recover(state, &d)?;
    Ok((q, u))
}

/// Internal force `n = R K_l (q - q_bar)` and moment `m = R K_a (u - u_bar)`,
/// global frame.
pub fn internal_loads(q: &[Vec3], u: &[Vec3], r: &[Rotation], params: &RodParams) -> (Vec<Vec3>, Vec<Vec3>) {
    let n = q
        .iter()
        .zip(r)
        .map(|(q, r)| r * (params.k_l * (q - params.q_bar)))
        .collect();
    let m = u
        .iter()
        .zip(r)
        .map(|(u, r)| r * (params.k_a * (u - params.u_bar)))
        .collect();
    (n, m)
}

/// The elastic parts of the momentum balances:
/// `linear = R K_l q_s + R_s K_l (q - q_bar)` (global frame) and
/// `angular = K_a u_s + u^ K_a (u - u_bar) + q^ K_l (q - q_bar)` (local frame).
#[derive(Clone, Debug)]
pub struct ElasticTerms {
    pub linear: Vec<Vec3>,
    pub angular: Vec<Vec3>,
}

pub fn elastic_terms(state: &RodState, params: &RodParams, d: &DerivativeOperator) -> Result<(ElasticTerms, StrainData)> {
    let sd = StrainData::compute(state, params, d)?;
    let n = state.n_nodes();
    let mut linear = Vec::with_capacity(n);
    let mut angular = Vec::with_capacity(n);
    for i in 0..n {
        let dq = sd.q[i] - params.q_bar;
        let du = sd.u[i] - params.u_bar;
        // reference strains are uniform, so q_bar_s = u_bar_s = 0
        linear.push(state.r[i] * (params.k_l * sd.q_s[i]) + sd.r_s[i] * (params.k_l * dq));
        angular.push(
            params.k_a * sd.u_s[i]
                + sd.u[i].cross(&(params.k_a * du))
                + sd.q[i].cross(&(params.k_l * dq)),
        );
    }
    Ok((ElasticTerms { linear, angular }, sd))
}

/// `omega_t` at one node given its elastic term and the applied global moment.
pub(crate) fn angular_rate(elastic_angular: &Vec3, omega: &Vec3, r: &Rotation, l: &Vec3, params: &RodParams) -> Vec3 {
    let gyro = omega.cross(&(params.rho_j() * omega));
    params.rho_j_inv() * (elastic_angular - gyro + r.transpose() * l)
}

/// Right-hand side of the reduced rod PDE on the grid.
///
/// Node 0 is clamped (all derivatives zero). The free end uses the
/// substituted strains, so `n(L) = m(L) = 0`.
pub fn dynamics_rhs(state: &RodState, wrench: &Wrench, params: &RodParams, grid: &Grid) -> Result<RodTangent> {
    let d = DerivativeOperator::new(grid)?;
    dynamics_rhs_with(state, wrench, params, &d)
}

pub(crate) fn dynamics_rhs_with(
    state: &RodState,
    wrench: &Wrench,
    params: &RodParams,
    d: &DerivativeOperator,
) -> Result<RodTangent> {
    let n = state.n_nodes();
    if wrench.n_nodes() != n {
        return Err(Error::LengthMismatch { expected: n, actual: wrench.n_nodes() });
    }
    let (elastic, _) = elastic_terms(state, params, d)?;
    let mut out = RodTangent::zeros(n);
    let inv_rho_sigma = 1.0 / params.rho_sigma();
    for i in 1..n {
        out.p_t[i] = state.v[i];
        out.rot[i] = state.omega[i];
        out.v_t[i] = (elastic.linear[i] + wrench.f[i]) * inv_rho_sigma;
        out.omega_t[i] = angular_rate(&elastic.angular[i], &state.omega[i], &state.r[i], &wrench.l[i], params);
    }
    out.check_finite()?;
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scenario {
    /// Straight along z, at rest.
    StraightAtRest,
    /// Straight along z with `v = omega = e_z` away from the clamped node.
    MovingStart,
}

impl std::str::FromStr for Scenario {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "straight_at_rest" => Ok(Scenario::StraightAtRest),
            "moving_start" => Ok(Scenario::MovingStart),
            other => Err(format!(
                "unknown scenario `{other}` (expected straight_at_rest|moving_start)"
            )),
        }
    }
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Scenario::StraightAtRest => "straight_at_rest",
            Scenario::MovingStart => "moving_start",
        })
    }
}

pub fn make_initial_state(grid: &Grid, scenario: Scenario) -> RodState {
    let n = grid.n_nodes();
    let p = grid.s_values().iter().map(|&s| Vec3::new(0.0, 0.0, s)).collect();
    let r = vec![Rotation::identity(); n];
    let (mut v, mut omega) = match scenario {
        Scenario::StraightAtRest => (vec![Vec3::zeros(); n], vec![Vec3::zeros(); n]),
        Scenario::MovingStart => (vec![Vec3::z(); n], vec![Vec3::z(); n]),
    };
    v[0] = Vec3::zeros();
    omega[0] = Vec3::zeros();
    RodState { p, r, v, omega }
}

/// Largest orthogonality defect over a rotation field.
pub fn max_orthogonality_defect(r: &[Rotation]) -> f64 {
    r.iter().map(orthogonality_defect).fold(0.0, f64::max)
}
