//! Extended Kalman filter on the discretized rod.
//!
//! The error state at each node is `xi = (dp, eta, dv, domega)` with the
//! rotation error applied on the right, `R' = R exp(eta^)`. Flat vectors and
//! the covariance `P` are node-major: entry `12 * node + 3 * field + k`.

use nalgebra::{DMatrix, SMatrix};

use crate::discretize::{step, DerivativeOperator, IntegratorConfig, Scheme};
use crate::error::{Error, Result};
use crate::geometry::{hat, Mat3, Vec3};
use crate::rod::{dynamics_rhs_with, strains, Grid, RodParams, RodState, RodTangent, StrainData, Wrench};
use crate::sparse::{BlockOperator, CsrMatrix};

pub type Mat12 = SMatrix<f64, 12, 12>;

/// Per-node error-state dimension.
pub const NODE_DIM: usize = 12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Field {
    Position = 0,
    Rotation = 1,
    Velocity = 2,
    AngularVelocity = 3,
}

impl Field {
    pub const ALL: [Field; 4] = [Field::Position, Field::Rotation, Field::Velocity, Field::AngularVelocity];

    #[inline]
    pub fn index(self, node: usize, k: usize) -> usize {
        NODE_DIM * node + 3 * self as usize + k
    }
}

/// Packs a tangent into a flat node-major error vector.
pub fn flatten(t: &RodTangent) -> Vec<f64> {
    let n = t.p_t.len();
    let mut out = vec![0.0; NODE_DIM * n];
    for i in 0..n {
        for (f, field) in [&t.p_t, &t.rot, &t.v_t, &t.omega_t].iter().enumerate() {
            for k in 0..3 {
                out[NODE_DIM * i + 3 * f + k] = field[i][k];
            }
        }
    }
    out
}

pub fn unflatten(x: &[f64]) -> RodTangent {
    let n = x.len() / NODE_DIM;
    let pick = |f: usize| -> Vec<Vec3> {
        (0..n)
            .map(|i| {
                let o = NODE_DIM * i + 3 * f;
                Vec3::new(x[o], x[o + 1], x[o + 2])
            })
            .collect()
    };
    RodTangent {
        p_t: pick(0),
        rot: pick(1),
        v_t: pick(2),
        omega_t: pick(3),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseModel {
    /// Per-node measurement covariance of the position samples.
    pub r_cov: Vec<Mat3>,
    /// Per-node process covariance.
    pub q_cov: Vec<Mat12>,
}

impl NoiseModel {
    pub fn new(r_cov: Vec<Mat3>, q_cov: Vec<Mat12>) -> Result<Self> {
        if r_cov.len() != q_cov.len() {
            return Err(Error::LengthMismatch { expected: r_cov.len(), actual: q_cov.len() });
        }
        for (i, r) in r_cov.iter().enumerate() {
            if (r - r.transpose()).norm() > 1e-12 * r.norm() || r.cholesky().is_none() {
                return Err(Error::InvalidNoise(format!("measurement covariance at node {i} is not positive definite")));
            }
        }
        for (i, q) in q_cov.iter().enumerate() {
            let asym = (q - q.transpose()).norm();
            let min = q.symmetric_eigen().eigenvalues.min();
            if asym > 1e-12 * (1.0 + q.norm()) || min < -1e-12 * (1.0 + q.norm()) {
                return Err(Error::InvalidNoise(format!("process covariance at node {i} is not positive semidefinite")));
            }
        }
        Ok(Self { r_cov, q_cov })
    }

    /// `r_cov = variance * I` at every node and zero process noise.
    pub fn isotropic(n_nodes: usize, variance: f64) -> Result<Self> {
        if !(variance > 0.0 && variance.is_finite()) {
            return Err(Error::InvalidNoise(format!("measurement variance must be positive, got {variance}")));
        }
        Ok(Self {
            r_cov: vec![Mat3::identity() * variance; n_nodes],
            q_cov: vec![Mat12::zeros(); n_nodes],
        })
    }

    /// Adds `q * I` to every node's process covariance except the clamped one.
    pub fn with_process_diagonal(mut self, q: f64) -> Self {
        for block in self.q_cov.iter_mut().skip(1) {
            *block += Mat12::identity() * q;
        }
        self
    }

    pub fn n_nodes(&self) -> usize {
        self.r_cov.len()
    }

    fn has_process_noise(&self) -> bool {
        self.q_cov.iter().any(|q| q.iter().any(|x| *x != 0.0))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EstimatorState {
    pub xi_hat: RodState,
    pub p: DMatrix<f64>,
}

impl EstimatorState {
    /// Diagonal initial covariance with one variance per field. The clamped
    /// node is known exactly and gets zero covariance.
    pub fn new(xi_hat: RodState, field_variance: [f64; 4]) -> Self {
        let n = xi_hat.n_nodes();
        let mut p = DMatrix::zeros(NODE_DIM * n, NODE_DIM * n);
        for i in 1..n {
            for f in Field::ALL {
                for k in 0..3 {
                    let j = f.index(i, k);
                    p[(j, j)] = field_variance[f as usize];
                }
            }
        }
        Self { xi_hat, p }
    }

    pub fn uniform(xi_hat: RodState, variance: f64) -> Self {
        Self::new(xi_hat, [variance; 4])
    }

    pub fn asymmetry(&self) -> f64 {
        (&self.p - self.p.transpose()).amax()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.p.clone().symmetric_eigen().eigenvalues.min()
    }

    /// Largest diagonal entry of `P` per field.
    pub fn max_variance(&self) -> [f64; 4] {
        let mut out = [0.0; 4];
        for j in 0..self.p.nrows() {
            let f = (j % NODE_DIM) / 3;
            out[f] = f64::max(out[f], self.p[(j, j)]);
        }
        out
    }
}

/// Sparse Jacobian `A` of the discretized dynamics and the observation map.
#[derive(Clone, Debug)]
pub struct LinearizedOperator {
    pub a: CsrMatrix,
    n_nodes: usize,
}

impl LinearizedOperator {
    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn apply(&self, dxi: &RodTangent) -> RodTangent {
        unflatten(&self.a.mul_vec(&flatten(dxi)))
    }

    /// `C`: picks the position block of every node.
    pub fn observation(&self) -> CsrMatrix {
        let n = self.n_nodes;
        let trip = (0..n)
            .flat_map(|i| (0..3).map(move |k| (3 * i + k, Field::Position.index(i, k), 1.0)))
            .collect();
        CsrMatrix::from_triplets(3 * n, NODE_DIM * n, trip)
    }
}

/// First-order strain perturbations as operators on `dp` and `eta`:
/// `dq = Q_p dp + Q_eta eta`, `dq_s = D dq`, `du = U_eta eta`, `du_s = D du`.
/// The free-end rows are zero because the end strains are pinned to their
/// reference values.
#[derive(Clone, Debug)]
pub struct StrainPerturbation {
    pub q_p: BlockOperator,
    pub q_eta: BlockOperator,
    pub qs_p: BlockOperator,
    pub qs_eta: BlockOperator,
    pub u_eta: BlockOperator,
    pub us_eta: BlockOperator,
}

impl StrainPerturbation {
    pub fn new(state: &RodState, sd: &StrainData, d: &DerivativeOperator) -> Self {
        let n = state.n_nodes();
        let last = n - 1;
        let dop = BlockOperator::first_derivative(d);
        let rt: Vec<Mat3> = state.r.iter().map(|r| r.matrix().transpose()).collect();

        let mut q_p = dop.left_diag(&rt);
        let mut q_eta = BlockOperator::diag(sd.q_raw.iter().map(hat));
        let mut u_eta = BlockOperator::zeros(n);
        for i in 0..n {
            let m = rt[i] * sd.r_s[i];
            u_eta.add_block(i, i, (Mat3::identity() * m.trace() - m) * -0.5);
            for (j, w) in d.first_weights(i) {
                if w == 0.0 {
                    continue;
                }
                let x = rt[i] * state.r[j].matrix();
                u_eta.add_block(i, j, (Mat3::identity() * x.trace() - x.transpose()) * (0.5 * w));
            }
        }
        for op in [&mut q_p, &mut q_eta, &mut u_eta] {
            op.clear_row(last);
        }
        Self {
            qs_p: dop.compose(&q_p),
            qs_eta: dop.compose(&q_eta),
            us_eta: dop.compose(&u_eta),
            q_p,
            q_eta,
            u_eta,
        }
    }
}

/// Assembles the exact Jacobian of [`crate::rod::dynamics_rhs`] with respect
/// to `(dp, eta, dv, domega)`, holding the wrench fixed. Rows of the clamped
/// node are zero.
pub fn assemble_a(state: &RodState, wrench_total: &Wrench, params: &RodParams, grid: &Grid) -> Result<LinearizedOperator> {
    let d = DerivativeOperator::new(grid)?;
    assemble_a_with(state, wrench_total, params, &d)
}

pub(crate) fn assemble_a_with(
    state: &RodState,
    wrench: &Wrench,
    params: &RodParams,
    d: &DerivativeOperator,
) -> Result<LinearizedOperator> {
    let n = state.n_nodes();
    if wrench.n_nodes() != n {
        return Err(Error::LengthMismatch { expected: n, actual: wrench.n_nodes() });
    }
    let sd = StrainData::compute(state, params, d)?;
    let sp = StrainPerturbation::new(state, &sd, d);
    let (k_l, k_a) = (params.k_l, params.k_a);
    let rho_j = params.rho_j();

    let r: Vec<Mat3> = state.r.iter().map(|r| *r.matrix()).collect();
    let r_kl: Vec<Mat3> = r.iter().map(|r| r * k_l).collect();
    let rs_kl: Vec<Mat3> = sd.r_s.iter().map(|m| m * k_l).collect();
    let dq: Vec<Vec3> = sd.q.iter().map(|q| q - params.q_bar).collect();
    let du: Vec<Vec3> = sd.u.iter().map(|u| u - params.u_bar).collect();

    // linear momentum rows, before the 1/(rho sigma) factor
    let mut vp = sp.qs_p.left_diag(&r_kl);
    vp.add(&sp.q_p.left_diag(&rs_kl));
    let mut veta = BlockOperator::diag((0..n).map(|i| -(r[i] * hat(&(k_l * sd.q_s[i])))));
    veta.add(&sp.qs_eta.left_diag(&r_kl));
    veta.add(&sp.q_eta.left_diag(&rs_kl));
    for i in 0..n {
        let kdq = hat(&(k_l * dq[i]));
        for (j, w) in d.first_weights(i) {
            if w != 0.0 {
                veta.add_block(i, j, -(r[j] * kdq) * w);
            }
        }
    }

    // angular momentum rows, before the (rho J)^-1 factor
    let g: Vec<Mat3> = (0..n).map(|i| -hat(&(k_l * dq[i])) + hat(&sd.q[i]) * k_l).collect();
    let h: Vec<Mat3> = (0..n).map(|i| -hat(&(k_a * du[i])) + hat(&sd.u[i]) * k_a).collect();
    let wp = sp.q_p.left_diag(&g);
    let mut weta = sp.us_eta.left_diag(&vec![k_a; n]);
    weta.add(&sp.u_eta.left_diag(&h));
    weta.add(&sp.q_eta.left_diag(&g));
    weta.add(&BlockOperator::diag((0..n).map(|i| hat(&(state.r[i].transpose() * wrench.l[i])))));
    let ww = BlockOperator::diag(state.omega.iter().map(|w| hat(&(rho_j * w)) - hat(w) * rho_j));

    let inv_rs = 1.0 / params.rho_sigma();
    let jinv = vec![*params.rho_j_inv(); n];
    let blocks: [(Field, Field, BlockOperator); 8] = [
        (Field::Position, Field::Velocity, BlockOperator::identity(n)),
        (Field::Rotation, Field::Rotation, BlockOperator::diag(state.omega.iter().map(|w| -hat(w)))),
        (Field::Rotation, Field::AngularVelocity, BlockOperator::identity(n)),
        (Field::Velocity, Field::Position, scaled(vp, inv_rs)),
        (Field::Velocity, Field::Rotation, scaled(veta, inv_rs)),
        (Field::AngularVelocity, Field::Position, wp.left_diag(&jinv)),
        (Field::AngularVelocity, Field::Rotation, weta.left_diag(&jinv)),
        (Field::AngularVelocity, Field::AngularVelocity, ww.left_diag(&jinv)),
    ];

    let mut trip = Vec::new();
    for (fr, fc, op) in &blocks {
        for i in 1..n {
            for (j, b) in op.row(i) {
                for a in 0..3 {
                    for c in 0..3 {
                        trip.push((fr.index(i, a), fc.index(*j, c), b[(a, c)]));
                    }
                }
            }
        }
    }
    Ok(LinearizedOperator {
        a: CsrMatrix::from_triplets(NODE_DIM * n, NODE_DIM * n, trip),
        n_nodes: n,
    })
}

fn scaled(mut op: BlockOperator, factor: f64) -> BlockOperator {
    op.scale(factor);
    op
}

/// How the covariance is advanced over one step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CovarianceScheme {
    /// `P += dt (A P + P A^T + Q - P C^T R^-1 C P)`.
    Euler,
    /// `M = Phi P Phi^T + dt Q`, then `P <- M - M C^T (C M C^T + R/dt)^-1 C M`,
    /// with `Phi` the fourth-order Taylor polynomial of `exp(dt A)`. The
    /// update is the sampled form of the continuous measurement term (they
    /// agree to first order in `dt`) and, unlike it, cannot overshoot to an
    /// indefinite matrix when position variances exceed `R/dt`.
    Transition,
}

impl CovarianceScheme {
    /// The scheme matching a state integrator.
    pub fn for_scheme(scheme: Scheme) -> Self {
        match scheme {
            Scheme::ExplicitEuler => CovarianceScheme::Euler,
            Scheme::Rk4 => CovarianceScheme::Transition,
        }
    }
}

impl std::str::FromStr for CovarianceScheme {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "euler" => Ok(CovarianceScheme::Euler),
            "transition" => Ok(CovarianceScheme::Transition),
            other => Err(format!("unknown covariance scheme `{other}` (expected euler|transition)")),
        }
    }
}

impl std::fmt::Display for CovarianceScheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CovarianceScheme::Euler => "euler",
            CovarianceScheme::Transition => "transition",
        })
    }
}

/// `P C^T`: the position columns of `P`.
fn position_columns(p: &DMatrix<f64>) -> DMatrix<f64> {
    let n = p.nrows() / NODE_DIM;
    let mut g = DMatrix::zeros(p.nrows(), 3 * n);
    for i in 0..n {
        for k in 0..3 {
            g.set_column(3 * i + k, &p.column(Field::Position.index(i, k)));
        }
    }
    g
}

/// `G R^-1` with `R` block diagonal.
fn times_r_inv(g: &DMatrix<f64>, noise: &NoiseModel) -> Result<DMatrix<f64>> {
    let mut k = DMatrix::zeros(g.nrows(), g.ncols());
    for (i, r) in noise.r_cov.iter().enumerate() {
        let r_inv = r.try_inverse().ok_or(Error::SingularMatrix { det: r.determinant() })?;
        let cols = g.columns(3 * i, 3);
        k.columns_mut(3 * i, 3).copy_from(&(cols * r_inv));
    }
    Ok(k)
}

/// Advances `P` by one step. The result is symmetrized; a diagonal entry above
/// `cap` (or a non-finite one) is reported as divergence.
pub fn riccati_step(
    p: &mut DMatrix<f64>,
    a: &LinearizedOperator,
    noise: &NoiseModel,
    dt: f64,
    scheme: CovarianceScheme,
    cap: f64,
) -> Result<()> {
    let dim = p.nrows();
    if dim != a.a.nrows() || noise.n_nodes() * NODE_DIM != dim {
        return Err(Error::LengthMismatch { expected: a.a.nrows(), actual: dim });
    }
    let mut next = DMatrix::zeros(dim, dim);
    match scheme {
        CovarianceScheme::Euler => {
            let g = position_columns(p);
            let k = times_r_inv(&g, noise)?;
            a.a.right_mul_transpose(p, &mut next);
            let pat = next.clone();
            next += pat.transpose();
            next *= dt;
            next += &*p;
            next.gemm(-dt, &k, &g.transpose(), 1.0);
            add_process_noise(&mut next, noise, dt);
        }
        CovarianceScheme::Transition => {
            let mut y = p.clone();
            horner_right(&a.a, p, &mut y, &mut next, dt);
            let yt = y.transpose();
            let mut z = yt.clone();
            horner_right(&a.a, &yt, &mut z, &mut next, dt);
            next.copy_from(&z);
            add_process_noise(&mut next, noise, dt);
            sampled_update(&mut next, noise, dt)?;
        }
    }
    let sym = (&next + next.transpose()) * 0.5;
    for j in 0..dim {
        let value = sym[(j, j)];
        if !value.is_finite() || value > cap {
            return Err(Error::CovarianceBlowup { value, cap });
        }
    }
    *p = sym;
    Ok(())
}

fn add_process_noise(p: &mut DMatrix<f64>, noise: &NoiseModel, dt: f64) {
    if noise.has_process_noise() {
        for (i, q) in noise.q_cov.iter().enumerate() {
            let mut view = p.view_mut((NODE_DIM * i, NODE_DIM * i), (NODE_DIM, NODE_DIM));
            view += q * dt;
        }
    }
}

/// `M <- M - G S^-1 G^T` with `G = M C^T` and `S = C M C^T + R/dt`.
fn sampled_update(m: &mut DMatrix<f64>, noise: &NoiseModel, dt: f64) -> Result<()> {
    let g = position_columns(m);
    let n = noise.n_nodes();
    let mut s = DMatrix::zeros(3 * n, 3 * n);
    for i in 0..n {
        for k in 0..3 {
            s.set_row(3 * i + k, &g.row(Field::Position.index(i, k)));
        }
        let mut block = s.view_mut((3 * i, 3 * i), (3, 3));
        block += noise.r_cov[i] / dt;
    }
    let s = (&s + s.transpose()) * 0.5;
    let chol = s.cholesky().ok_or(Error::CovarianceIndefinite { min_eigenvalue: f64::NAN })?;
    let s_inv_gt = chol.solve(&g.transpose());
    m.gemm(-1.0, &g, &s_inv_gt, 1.0);
    Ok(())
}

/// `out = base * Phi^T` for the fourth-order Taylor `Phi` of `exp(dt A)`,
/// evaluated as nested `base + (dt/k) (.) A^T`.
fn horner_right(a: &CsrMatrix, base: &DMatrix<f64>, out: &mut DMatrix<f64>, scratch: &mut DMatrix<f64>, dt: f64) {
    out.copy_from(base);
    for k in (1..=4).rev() {
        a.right_mul_transpose(out, scratch);
        *scratch *= dt / k as f64;
        *scratch += base;
        std::mem::swap(out, scratch);
    }
}

/// `K = P C^T R^-1`, one row per error coordinate and one column per
/// measured position component.
#[derive(Clone, Debug, PartialEq)]
pub struct KalmanGain {
    pub k: DMatrix<f64>,
}

impl KalmanGain {
    /// The `3 n x 3 n` rows belonging to one field (`K_1 .. K_4`).
    pub fn field_block(&self, field: Field) -> DMatrix<f64> {
        let n = self.k.nrows() / NODE_DIM;
        let mut out = DMatrix::zeros(3 * n, self.k.ncols());
        for i in 0..n {
            for c in 0..3 {
                out.set_row(3 * i + c, &self.k.row(field.index(i, c)));
            }
        }
        out
    }

    /// `K (y - p_hat)` arranged as a tangent. The clamped node gets none.
    pub fn correction(&self, innovation: &[Vec3]) -> RodTangent {
        let flat: Vec<f64> = innovation.iter().flat_map(|v| [v.x, v.y, v.z]).collect();
        let x = nalgebra::DVector::from_vec(flat);
        let mut out = unflatten((&self.k * x).as_slice());
        out.p_t[0] = Vec3::zeros();
        out.rot[0] = Vec3::zeros();
        out.v_t[0] = Vec3::zeros();
        out.omega_t[0] = Vec3::zeros();
        out
    }
}

pub fn kalman_gain(p: &DMatrix<f64>, noise: &NoiseModel) -> Result<KalmanGain> {
    Ok(KalmanGain {
        k: times_r_inv(&position_columns(p), noise)?,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EkfConfig {
    pub integrator: IntegratorConfig,
    pub covariance: CovarianceScheme,
    /// Largest admissible diagonal entry of `P`.
    pub p_cap: f64,
    /// Smallest-eigenvalue check period in steps (0 disables it).
    pub psd_check_every: u64,
}

impl EkfConfig {
    pub fn new(integrator: IntegratorConfig) -> Self {
        Self {
            covariance: CovarianceScheme::for_scheme(integrator.scheme),
            integrator,
            p_cap: 1e6,
            psd_check_every: 1000,
        }
    }
}

/// Estimator right-hand side: plant dynamics at the estimate plus a
/// constant innovation correction.
pub fn estimator_rhs(
    xi_hat: &RodState,
    wrench_total: &Wrench,
    correction: &RodTangent,
    params: &RodParams,
    d: &DerivativeOperator,
) -> Result<RodTangent> {
    let mut f = dynamics_rhs_with(xi_hat, wrench_total, params, d)?;
    for i in 0..f.p_t.len() {
        f.p_t[i] += correction.p_t[i];
        f.rot[i] += correction.rot[i];
        f.v_t[i] += correction.v_t[i];
        f.omega_t[i] += correction.omega_t[i];
    }
    Ok(f)
}

/// The filter: model, noise, numerical policy and a step counter.
#[derive(Clone, Debug)]
pub struct Ekf {
    params: RodParams,
    noise: NoiseModel,
    cfg: EkfConfig,
    d: DerivativeOperator,
    steps: u64,
    last_min_eigenvalue: Option<f64>,
}

impl Ekf {
    pub fn new(params: RodParams, grid: &Grid, noise: NoiseModel, cfg: EkfConfig) -> Result<Self> {
        cfg.integrator.validate()?;
        if noise.n_nodes() != grid.n_nodes() {
            return Err(Error::LengthMismatch { expected: grid.n_nodes(), actual: noise.n_nodes() });
        }
        Ok(Self {
            params,
            noise,
            cfg,
            d: DerivativeOperator::new(grid)?,
            steps: 0,
            last_min_eigenvalue: None,
        })
    }

    pub fn config(&self) -> &EkfConfig {
        &self.cfg
    }

    pub fn noise(&self) -> &NoiseModel {
        &self.noise
    }

    pub fn derivative(&self) -> &DerivativeOperator {
        &self.d
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Smallest eigenvalue of `P` at the most recent check.
    pub fn last_min_eigenvalue(&self) -> Option<f64> {
        self.last_min_eigenvalue
    }

    /// Linearizes at the estimate, advances `P`, and returns the innovation
    /// correction `K (y - p_hat)` to hold over the coming step.
    pub fn predict_covariance(&mut self, est: &mut EstimatorState, y: &[Vec3], wrench_total: &Wrench) -> Result<RodTangent> {
        let n = est.xi_hat.n_nodes();
        if y.len() != n {
            return Err(Error::LengthMismatch { expected: n, actual: y.len() });
        }
        let a = assemble_a_with(&est.xi_hat, wrench_total, &self.params, &self.d)?;
        riccati_step(&mut est.p, &a, &self.noise, self.cfg.integrator.dt, self.cfg.covariance, self.cfg.p_cap)?;
        self.steps += 1;
        if self.cfg.psd_check_every > 0 && self.steps.is_multiple_of(self.cfg.psd_check_every) {
            let min = est.min_eigenvalue();
            self.last_min_eigenvalue = Some(min);
            // Relative to the largest variance: eigenvalue roundoff scales with it.
            let scale = est.max_variance().into_iter().fold(1.0, f64::max);
            if min < -1e-9 * scale {
                return Err(Error::CovarianceIndefinite { min_eigenvalue: min });
            }
        }
        let gain = kalman_gain(&est.p, &self.noise)?;
        let innovation: Vec<Vec3> = y.iter().zip(&est.xi_hat.p).map(|(y, p)| y - p).collect();
        Ok(gain.correction(&innovation))
    }

    /// One predict-correct step with the wrench held over the step.
    pub fn ekf_step(&mut self, est: &mut EstimatorState, y: &[Vec3], wrench_total: &Wrench, t: f64) -> Result<()> {
        let step_index = self.steps;
        let correction = self.predict_covariance(est, y, wrench_total)?;
        let (params, d) = (&self.params, &self.d);
        est.xi_hat = step(
            &est.xi_hat,
            t,
            |x: &RodState, _| estimator_rhs(x, wrench_total, &correction, params, d),
            &self.cfg.integrator,
            step_index,
        )?;
        Ok(())
    }
}

/// Strains of the current estimate.
pub fn reconstruct_strains(est: &EstimatorState, grid: &Grid) -> Result<(Vec<Vec3>, Vec<Vec3>)> {
    strains(&est.xi_hat, grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretize::ManifoldState;
    use crate::geometry::{exp_so3, log_so3};
    use crate::rod::{dynamics_rhs, make_initial_state, Scenario};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params() -> RodParams {
        RodParams::circular(0.5, 0.02, 2000.0, 3e7, 1e7).unwrap()
    }

    fn rv(rng: &mut ChaCha8Rng, s: f64) -> Vec3 {
        Vec3::new(rng.random_range(-s..s), rng.random_range(-s..s), rng.random_range(-s..s))
    }

    fn random_state(grid: &Grid, rng: &mut ChaCha8Rng) -> RodState {
        let a = rv(rng, 1.0);
        let b = rv(rng, 1.0);
        let s = grid.s_values();
        RodState {
            p: s.iter().map(|&s| Vec3::new(0.05 * a.x * s * s, 0.03 * a.y * s, s * (1.0 + 0.02 * a.z)) + rv(rng, 1e-4)).collect(),
            r: s.iter().map(|&s| exp_so3(&(Vec3::new(b.x * s, b.y * s * s, 0.5 * b.z * s) + rv(rng, 1e-3)))).collect(),
            v: s.iter().map(|&s| rv(rng, 1.0) * s).collect(),
            omega: s.iter().map(|&s| rv(rng, 2.0) * s).collect(),
        }
    }

    fn random_tangent(n: usize, rng: &mut ChaCha8Rng) -> RodTangent {
        RodTangent {
            p_t: (0..n).map(|_| rv(rng, 1.0)).collect(),
            rot: (0..n).map(|_| rv(rng, 1.0)).collect(),
            v_t: (0..n).map(|_| rv(rng, 1.0)).collect(),
            omega_t: (0..n).map(|_| rv(rng, 1.0)).collect(),
        }
    }

    fn field_diff(a: &[Vec3], b: &[Vec3]) -> Vec<Vec3> {
        a.iter().zip(b).map(|(x, y)| x - y).collect()
    }

    fn field_norm(a: &[Vec3]) -> f64 {
        a.iter().map(|x| x.norm_squared()).sum::<f64>().sqrt()
    }

    #[test]
    fn strain_perturbations_match_finite_differences() {
        let g = Grid::new(0.5, 0.025).unwrap();
        let p = params();
        let d = DerivativeOperator::new(&g).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..5 {
            let x = random_state(&g, &mut rng);
            let sd = StrainData::compute(&x, &p, &d).unwrap();
            let sp = StrainPerturbation::new(&x, &sd, &d);
            let mut dir = random_tangent(g.n_nodes(), &mut rng);
            dir.v_t.iter_mut().chain(dir.omega_t.iter_mut()).for_each(|v| *v = Vec3::zeros());
            let lin_q: Vec<Vec3> = sp.q_p.apply(&dir.p_t).iter().zip(sp.q_eta.apply(&dir.rot)).map(|(a, b)| a + b).collect();
            let lin_qs: Vec<Vec3> = sp.qs_p.apply(&dir.p_t).iter().zip(sp.qs_eta.apply(&dir.rot)).map(|(a, b)| a + b).collect();
            let lin_u = sp.u_eta.apply(&dir.rot);
            let lin_us = sp.us_eta.apply(&dir.rot);
            let mut errors = Vec::new();
            for h in [1e-4, 1e-6] {
                let moved = x.retract(&dir, h);
                let sm = StrainData::compute(&moved, &p, &d).unwrap();
                let rel = |a: &[Vec3], b: &[Vec3], lin: &[Vec3]| {
                    let fd: Vec<Vec3> = field_diff(a, b).iter().map(|v| v / h).collect();
                    field_norm(&field_diff(&fd, lin)) / field_norm(lin)
                };
                errors.push([
                    rel(&sm.q, &sd.q, &lin_q),
                    rel(&sm.q_s, &sd.q_s, &lin_qs),
                    rel(&sm.u, &sd.u, &lin_u),
                    rel(&sm.u_s, &sd.u_s, &lin_us),
                ]);
            }
            for k in 0..4 {
                assert!(errors[1][k] < 1e-4, "component {k}: {:?}", errors);
                assert!(errors[1][k] < errors[0][k] * 0.1, "component {k}: {:?}", errors);
            }
        }
    }

    #[test]
    fn a_matches_finite_differences() {
        let g = Grid::new(0.5, 0.025).unwrap();
        let p = params();
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let n = g.n_nodes();
        for _ in 0..3 {
            let x = random_state(&g, &mut rng);
            let w = Wrench {
                f: (0..n).map(|_| rv(&mut rng, 1.0)).collect(),
                l: (0..n).map(|_| rv(&mut rng, 1.0)).collect(),
            };
            let a = assemble_a(&x, &w, &p, &g).unwrap();
            let dir = random_tangent(n, &mut rng);
            let lin = a.apply(&dir);
            let f0 = dynamics_rhs(&x, &w, &p, &g).unwrap();
            let h = 1e-6;
            let f1 = dynamics_rhs(&x.retract(&dir, h), &w, &p, &g).unwrap();
            for (fd, exact) in [(field_diff(&f1.v_t, &f0.v_t), &lin.v_t), (field_diff(&f1.omega_t, &f0.omega_t), &lin.omega_t), (field_diff(&f1.p_t, &f0.p_t), &lin.p_t)] {
                let fd: Vec<Vec3> = fd.iter().map(|v| v / h).collect();
                let rel = field_norm(&field_diff(&fd, exact)) / field_norm(exact);
                assert!(rel < 1e-3, "relative error {rel}");
            }
            // eta rows against the propagated group error
            for i in 1..n {
                let (w0, w1) = (x.omega[i], x.omega[i] + dir.omega_t[i] * h);
                let e = exp_so3(&(dir.rot[i] * h));
                let l = |tau: f64| log_so3(&(exp_so3(&(-w0 * tau)) * e * exp_so3(&(w1 * tau)))).unwrap();
                let tau = 1e-6;
                let rate = (l(tau) - l(-tau)) / (2.0 * tau * h);
                assert!((rate - lin.rot[i]).norm() < 1e-3 * (1.0 + lin.rot[i].norm()), "node {i}");
            }
        }
    }

    #[test]
    fn a_at_trivial_state() {
        let g = Grid::new(0.5, 0.025).unwrap();
        let p = params();
        let x = make_initial_state(&g, Scenario::StraightAtRest);
        let a = assemble_a(&x, &Wrench::zeros(g.n_nodes()), &p, &g).unwrap();
        for i in 1..g.n_nodes() {
            for k in 0..3 {
                for j in 0..g.n_nodes() {
                    for c in 0..3 {
                        assert_eq!(a.a.get(Field::Rotation.index(i, k), Field::Rotation.index(j, c)), 0.0);
                        assert_eq!(a.a.get(Field::AngularVelocity.index(i, k), Field::AngularVelocity.index(j, c)), 0.0);
                    }
                }
            }
        }
        // only the q^ stencil part survives in the v/eta block: d/ds (R K_l q_bar^ eta)
        let i = 5;
        let ds = g.ds();
        let e = p.k_l * hat(&p.q_bar) / (p.rho_sigma() * 2.0 * ds);
        for k in 0..3 {
            for c in 0..3 {
                let got = a.a.get(Field::Velocity.index(i, k), Field::Rotation.index(i + 1, c));
                assert!((got - e[(k, c)]).abs() < 1e-9 * (1.0 + e.amax()), "{k}{c}");
            }
        }
        // node 0 rows vanish
        for k in 0..NODE_DIM {
            assert_eq!(a.a.row_nnz(k), 0);
        }
    }

    #[test]
    fn a_sparsity_bound() {
        let g = Grid::new(0.5, 0.025).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let x = random_state(&g, &mut rng);
        let a = assemble_a(&x, &Wrench::zeros(g.n_nodes()), &params(), &g).unwrap();
        for r in 0..a.a.nrows() {
            assert!(a.a.row_nnz(r) <= NODE_DIM * 5);
        }
    }

    fn one_node_noise(r: f64, n: usize) -> NoiseModel {
        NoiseModel::isotropic(n, r).unwrap()
    }

    fn zero_operator(n: usize) -> LinearizedOperator {
        LinearizedOperator {
            a: CsrMatrix::from_triplets(NODE_DIM * n, NODE_DIM * n, Vec::new()),
            n_nodes: n,
        }
    }

    #[test]
    fn riccati_scalar_closed_form() {
        let n = 3;
        let (p0, r, dt) = (0.5, 0.02, 1e-5);
        let mut p = DMatrix::zeros(NODE_DIM * n, NODE_DIM * n);
        let j = Field::Position.index(1, 0);
        p[(j, j)] = p0;
        let noise = one_node_noise(r, n);
        let a = zero_operator(n);
        let mut prev = p0;
        for step_no in 1..=2000 {
            riccati_step(&mut p, &a, &noise, dt, CovarianceScheme::Euler, 1e6).unwrap();
            assert!(p[(j, j)] < prev);
            prev = p[(j, j)];
            if step_no % 500 == 0 {
                let t = step_no as f64 * dt;
                let exact = p0 / (1.0 + p0 * t / r);
                assert!((p[(j, j)] - exact).abs() < 2e-3 * exact, "{} vs {exact}", p[(j, j)]);
            }
        }
    }

    #[test]
    fn sampled_update_is_exact_without_dynamics() {
        // Large variance and the default step: the explicit measurement term
        // would overshoot to a negative variance here.
        let n = 3;
        let (p0, r, dt) = (1e4, 0.02, 2e-4);
        let mut p = DMatrix::zeros(NODE_DIM * n, NODE_DIM * n);
        let j = Field::Position.index(2, 1);
        p[(j, j)] = p0;
        let mut euler = p.clone();
        let noise = one_node_noise(r, n);
        let a = zero_operator(n);
        assert!(riccati_step(&mut euler, &a, &noise, dt, CovarianceScheme::Euler, 1e6).is_err() || euler[(j, j)] < 0.0);
        for step_no in 1..=50 {
            riccati_step(&mut p, &a, &noise, dt, CovarianceScheme::Transition, 1e6).unwrap();
            let exact = p0 / (1.0 + p0 * step_no as f64 * dt / r);
            assert!((p[(j, j)] - exact).abs() < 1e-12 * exact, "{} vs {exact}", p[(j, j)]);
        }
    }

    #[test]
    fn riccati_fixed_point_and_symmetry() {
        let g = Grid::new(0.5, 0.025).unwrap();
        let n = g.n_nodes();
        let noise = one_node_noise(0.02, n);
        let x = make_initial_state(&g, Scenario::MovingStart);
        let a = assemble_a(&x, &Wrench::zeros(n), &params(), &g).unwrap();
        let mut zero = DMatrix::zeros(NODE_DIM * n, NODE_DIM * n);
        riccati_step(&mut zero, &a, &noise, 2e-4, CovarianceScheme::Transition, 1e6).unwrap();
        assert_eq!(zero.amax(), 0.0);

        let mut est = EstimatorState::uniform(x, 1e-6);
        for _ in 0..1000 {
            riccati_step(&mut est.p, &a, &noise, 2e-4, CovarianceScheme::Transition, 1e6).unwrap();
        }
        assert!(est.asymmetry() < 1e-9);
        assert!(est.min_eigenvalue() > -1e-8);
    }

    #[test]
    fn transition_agrees_with_euler_for_small_steps() {
        let g = Grid::with_nodes(0.5, 6).unwrap();
        let n = g.n_nodes();
        let noise = one_node_noise(0.02, n);
        let mut rng = ChaCha8Rng::seed_from_u64(35);
        let x = random_state(&g, &mut rng);
        let a = assemble_a(&x, &Wrench::zeros(n), &params(), &g).unwrap();
        let est = EstimatorState::uniform(x, 1e-3);
        let (mut p1, mut p2) = (est.p.clone(), est.p.clone());
        let dt = 1e-13;
        riccati_step(&mut p1, &a, &noise, dt, CovarianceScheme::Euler, 1e6).unwrap();
        riccati_step(&mut p2, &a, &noise, dt, CovarianceScheme::Transition, 1e6).unwrap();
        let change = (&p1 - &est.p).norm();
        assert!((&p1 - &p2).norm() < 1e-3 * change, "{} vs {change}", (&p1 - &p2).norm());
    }

    #[test]
    fn blowup_is_reported() {
        let n = 3;
        let mut p = DMatrix::identity(NODE_DIM * n, NODE_DIM * n) * 10.0;
        let noise = one_node_noise(0.02, n);
        let err = riccati_step(&mut p, &zero_operator(n), &noise, 1e-3, CovarianceScheme::Euler, 5.0).unwrap_err();
        assert!(matches!(err, Error::CovarianceBlowup { .. }));
    }

    #[test]
    fn gain_blocks() {
        let n = 4;
        let noise = one_node_noise(0.5, n);
        let zero = kalman_gain(&DMatrix::zeros(NODE_DIM * n, NODE_DIM * n), &noise).unwrap();
        assert_eq!(zero.k.amax(), 0.0);
        let eye = kalman_gain(&DMatrix::identity(NODE_DIM * n, NODE_DIM * n), &noise).unwrap();
        assert!((eye.field_block(Field::Position) - DMatrix::identity(3 * n, 3 * n) * 2.0).amax() < 1e-15);
        for f in [Field::Rotation, Field::Velocity, Field::AngularVelocity] {
            assert_eq!(eye.field_block(f).amax(), 0.0);
        }
    }

    #[test]
    fn gain_structure_follows_covariance() {
        // P couples node 2 position only to node 2 velocity.
        let n = 4;
        let noise = one_node_noise(0.1, n);
        let mut p = DMatrix::zeros(NODE_DIM * n, NODE_DIM * n);
        let (a, b) = (Field::Position.index(2, 1), Field::Velocity.index(2, 1));
        p[(a, a)] = 1.0;
        p[(b, b)] = 1.0;
        p[(a, b)] = 0.5;
        p[(b, a)] = 0.5;
        let gain = kalman_gain(&p, &noise).unwrap();
        let innovation: Vec<Vec3> = (0..n).map(|i| Vec3::new(1.0, 2.0, 3.0) * (i as f64 + 1.0)).collect();
        let c = flatten(&gain.correction(&innovation));
        for (j, value) in c.iter().enumerate() {
            if j == a || j == b {
                assert!(value.abs() > 0.0);
            } else {
                assert_eq!(*value, 0.0);
            }
        }
    }

    #[test]
    fn zero_covariance_replays_plant() {
        let g = Grid::new(0.5, 0.025).unwrap();
        let p = params();
        let n = g.n_nodes();
        let noise = one_node_noise(0.02, n);
        let cfg = EkfConfig::new(IntegratorConfig::default());
        let mut ekf = Ekf::new(p.clone(), &g, noise, cfg.clone()).unwrap();
        let mut plant = make_initial_state(&g, Scenario::MovingStart);
        let mut est = EstimatorState::uniform(plant.clone(), 0.0);
        let w = Wrench::gravity(n, &p, 9.81);
        let mut rng = ChaCha8Rng::seed_from_u64(36);
        let d = DerivativeOperator::new(&g).unwrap();
        for k in 0..50 {
            let t = k as f64 * cfg.integrator.dt;
            let y: Vec<Vec3> = plant.p.iter().map(|x| x + rv(&mut rng, 0.1)).collect();
            ekf.ekf_step(&mut est, &y, &w, t).unwrap();
            plant = step(&plant, t, |x: &RodState, _| dynamics_rhs_with(x, &w, &p, &d), &cfg.integrator, k).unwrap();
        }
        assert_eq!(est.xi_hat, plant);
    }

    #[test]
    fn euler_covariance_is_unstable_at_default_step() {
        let g = Grid::new(0.5, 0.025).unwrap();
        let n = g.n_nodes();
        let p = params();
        let x = make_initial_state(&g, Scenario::StraightAtRest);
        let a = assemble_a(&x, &Wrench::zeros(n), &p, &g).unwrap();
        let noise = one_node_noise(0.02, n);
        let mut pe = EstimatorState::uniform(x.clone(), 1e-12).p;
        let mut pt = pe.clone();
        let mut euler_failed = false;
        for _ in 0..2000 {
            if riccati_step(&mut pe, &a, &noise, 2e-4, CovarianceScheme::Euler, 1e6).is_err() {
                euler_failed = true;
                break;
            }
        }
        let mut early = 0.0;
        for k in 0..2000 {
            riccati_step(&mut pt, &a, &noise, 2e-4, CovarianceScheme::Transition, 1e6).unwrap();
            if k < 50 {
                early = f64::max(early, pt.amax());
            }
        }
        assert!(euler_failed);
        assert!(pt.amax() < 10.0 * early, "{} vs {early}", pt.amax());
    }

    #[test]
    fn strains_of_estimate() {
        let g = Grid::new(0.5, 0.025).unwrap();
        let x = make_initial_state(&g, Scenario::StraightAtRest);
        let est = EstimatorState::uniform(x, 1e-6);
        let (q, u) = reconstruct_strains(&est, &g).unwrap();
        assert!(q.iter().all(|q| (q - Vec3::z()).norm() < 1e-12));
        assert!(u.iter().all(|u| u.norm() < 1e-12));
    }

    #[test]
    fn noisy_positions_amplify_through_stencil() {
        let g = Grid::new(0.5, 0.025).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let sigma = 1e-4;
        let x = make_initial_state(&g, Scenario::StraightAtRest);
        let mut sum = 0.0;
        let mut count = 0usize;
        for _ in 0..200 {
            let mut noisy = x.clone();
            for p in noisy.p.iter_mut().skip(1) {
                *p += Vec3::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5) * (sigma * 12f64.sqrt());
            }
            let (q, _) = reconstruct_strains(&EstimatorState::uniform(noisy, 0.0), &g).unwrap();
            for qi in &q[2..g.n_nodes() - 1] {
                sum += (qi - Vec3::z()).norm_squared() / 3.0;
                count += 1;
            }
        }
        // central stencil: var = 2 sigma^2 / (2 ds)^2
        let predicted = (2.0f64).sqrt() * sigma / (2.0 * g.ds());
        let observed = (sum / count as f64).sqrt();
        assert!((observed / predicted - 1.0).abs() < 0.05, "{observed} vs {predicted}");
    }
}
