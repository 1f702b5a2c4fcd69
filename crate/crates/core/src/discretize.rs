//! Finite-difference operators on a uniform arc-length grid and explicit time
//! stepping that keeps rotation fields on SO(3).

use std::ops::{Add, Div, Mul, Sub};

use crate::error::{Error, Result};
use crate::geometry::{Mat3, Vec3};
use crate::rod::{Grid, RodParams};

/// Values that can live on grid nodes and be differentiated.
pub trait FieldValue: Copy + Add<Output = Self> + Sub<Output = Self> + Mul<f64, Output = Self> + Div<f64, Output = Self> {
    fn zero() -> Self;
}

impl FieldValue for f64 {
    fn zero() -> Self {
        0.0
    }
}

impl FieldValue for Vec3 {
    fn zero() -> Self {
        Vec3::zeros()
    }
}

impl FieldValue for Mat3 {
    fn zero() -> Self {
        Mat3::zeros()
    }
}

/// Second-order first/second derivative stencils: central in the interior,
/// one-sided at both ends.
#[derive(Clone, Debug)]
pub struct DerivativeOperator {
    n: usize,
    ds: f64,
    /// `s[i+1] - s[i-1]` from the stored node coordinates. Dividing by it
    /// (rather than multiplying by `1/(2 ds)`) differentiates the coordinates
    /// themselves exactly, so a straight rod is an exact discrete equilibrium.
    span: Vec<f64>,
}

impl DerivativeOperator {
    pub fn new(grid: &Grid) -> Result<Self> {
        if grid.n_nodes() < 3 {
            return Err(Error::GridTooSmall {
                n_nodes: grid.n_nodes(),
                required: 3,
            });
        }
        let s = grid.s_values();
        let span = (0..grid.n_nodes())
            .map(|i| if i == 0 || i + 1 == s.len() { 2.0 * grid.ds() } else { s[i + 1] - s[i - 1] })
            .collect();
        Ok(Self {
            n: grid.n_nodes(),
            ds: grid.ds(),
            span,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.n
    }

    pub fn ds(&self) -> f64 {
        self.ds
    }

    /// `(node, weight)` pairs of the first-derivative stencil at node `i`,
    /// already scaled by `1/ds`.
    pub fn first_weights(&self, i: usize) -> [(usize, f64); 3] {
        let h = 0.5 / self.ds;
        let last = self.n - 1;
        if i == 0 {
            [(0, -3.0 * h), (1, 4.0 * h), (2, -h)]
        } else if i == last {
            [(last, 3.0 * h), (last - 1, -4.0 * h), (last - 2, h)]
        } else {
            let h = 1.0 / self.span[i];
            [(i - 1, -h), (i, 0.0), (i + 1, h)]
        }
    }

    /// Second-derivative stencil at node `i`, scaled by `1/ds^2`. Interior rows
    /// use three points; the fourth entry is then a zero-weight placeholder.
    pub fn second_weights(&self, i: usize) -> [(usize, f64); 4] {
        let h = 1.0 / (self.ds * self.ds);
        let last = self.n - 1;
        if i == 0 {
            [(0, 2.0 * h), (1, -5.0 * h), (2, 4.0 * h), (3, -h)]
        } else if i == last {
            [
                (last, 2.0 * h),
                (last - 1, -5.0 * h),
                (last - 2, 4.0 * h),
                (last - 3, -h),
            ]
        } else {
            [(i - 1, h), (i, -2.0 * h), (i + 1, h), (i, 0.0)]
        }
    }

    pub fn d_ds<T: FieldValue>(&self, field: &[T]) -> Result<Vec<T>> {
        self.check_len(field.len())?;
        let last = self.n - 1;
        Ok((0..self.n)
            .map(|i| {
                if i == 0 || i == last {
                    self.first_weights(i)
                        .iter()
                        .fold(T::zero(), |acc, &(j, w)| acc + field[j] * w)
                } else {
                    (field[i + 1] - field[i - 1]) / self.span[i]
                }
            })
            .collect())
    }

    pub fn d2_ds2<T: FieldValue>(&self, field: &[T]) -> Result<Vec<T>> {
        self.check_len(field.len())?;
        if self.n < 4 {
            return Err(Error::GridTooSmall {
                n_nodes: self.n,
                required: 4,
            });
        }
        Ok((0..self.n)
            .map(|i| {
                self.second_weights(i)
                    .iter()
                    .fold(T::zero(), |acc, &(j, w)| acc + field[j] * w)
            })
            .collect())
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.n {
            return Err(Error::LengthMismatch {
                expected: self.n,
                actual: len,
            });
        }
        Ok(())
    }
}

/// Tangent vectors that can be linearly combined (stage derivatives).
pub trait Tangent: Sized {
    fn weighted_sum(terms: &[(f64, &Self)]) -> Self;
}

/// A state on a product of vector spaces and SO(3) copies.
pub trait ManifoldState: Sized {
    type Tangent: Tangent;

    /// Move along `tangent` for time `h` (additive on vector parts,
    /// `R exp(h w)` on rotations).
    fn retract(&self, tangent: &Self::Tangent, h: f64) -> Self;

    fn reorthonormalize(&mut self) -> Result<()>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scheme {
    ExplicitEuler,
    Rk4,
}

impl std::str::FromStr for Scheme {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "euler" | "explicit_euler" => Ok(Scheme::ExplicitEuler),
            "rk4" => Ok(Scheme::Rk4),
            other => Err(format!("unknown scheme `{other}` (expected euler|rk4)")),
        }
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Scheme::ExplicitEuler => "euler",
            Scheme::Rk4 => "rk4",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IntegratorConfig {
    pub dt: f64,
    pub scheme: Scheme,
    pub reorthonormalize_every: u64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            dt: 2e-4,
            scheme: Scheme::Rk4,
            reorthonormalize_every: 100,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidIntegrator(format!("dt must be positive, got {}", self.dt)));
        }
        if self.reorthonormalize_every == 0 {
            return Err(Error::InvalidIntegrator(
                "reorthonormalize_every must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Advance `state` from time `t` by one step of `cfg.dt`.
///
/// `rhs(x, t)` returns the tangent at `x`. For RK4 the stage tangents are
/// combined with the classical weights and applied through a single
/// retraction. `step_index` is the zero-based index of this step; rotation
/// fields are re-projected after every `reorthonormalize_every`-th step.
pub fn step<S, F>(state: &S, t: f64, mut rhs: F, cfg: &IntegratorConfig, step_index: u64) -> Result<S>
where
    S: ManifoldState,
    F: FnMut(&S, f64) -> Result<S::Tangent>,
{
    let h = cfg.dt;
    let mut next = match cfg.scheme {
        Scheme::ExplicitEuler => {
            let k1 = rhs(state, t)?;
            state.retract(&k1, h)
        }
        Scheme::Rk4 => {
            let k1 = rhs(state, t)?;
            let k2 = rhs(&state.retract(&k1, 0.5 * h), t + 0.5 * h)?;
            let k3 = rhs(&state.retract(&k2, 0.5 * h), t + 0.5 * h)?;
            let k4 = rhs(&state.retract(&k3, h), t + h)?;
            let k = S::Tangent::weighted_sum(&[
                (1.0 / 6.0, &k1),
                (2.0 / 6.0, &k2),
                (2.0 / 6.0, &k3),
                (1.0 / 6.0, &k4),
            ]);
            state.retract(&k, h)
        }
    };
    if (step_index + 1).is_multiple_of(cfg.reorthonormalize_every) {
        next.reorthonormalize()?;
    }
    Ok(next)
}

impl<A: Tangent, B: Tangent> Tangent for (A, B) {
    fn weighted_sum(terms: &[(f64, &Self)]) -> Self {
        let a: Vec<(f64, &A)> = terms.iter().map(|(w, t)| (*w, &t.0)).collect();
        let b: Vec<(f64, &B)> = terms.iter().map(|(w, t)| (*w, &t.1)).collect();
        (A::weighted_sum(&a), B::weighted_sum(&b))
    }
}

impl<A: ManifoldState, B: ManifoldState> ManifoldState for (A, B) {
    type Tangent = (A::Tangent, B::Tangent);

    fn retract(&self, tangent: &Self::Tangent, h: f64) -> Self {
        (self.0.retract(&tangent.0, h), self.1.retract(&tangent.1, h))
    }

    fn reorthonormalize(&mut self) -> Result<()> {
        self.0.reorthonormalize()?;
        self.1.reorthonormalize()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CflReport {
    /// Longitudinal wave speed sqrt(E/rho), m/s.
    pub longitudinal_speed: f64,
    /// Shear wave speed sqrt(G/rho), m/s.
    pub shear_speed: f64,
    pub dt: f64,
    pub dt_max: f64,
    pub passes: bool,
}

impl CflReport {
    /// `dt_max / dt`; above 1 means the step is inside the bound.
    pub fn margin(&self) -> f64 {
        self.dt_max / self.dt
    }
}

/// Advisory explicit-stepping bound `dt <= ds / max(c_l, c_s)`.
pub fn check_cfl(params: &RodParams, grid: &Grid, dt: f64) -> CflReport {
    let longitudinal_speed = (params.youngs / params.density).sqrt();
    let shear_speed = (params.shear / params.density).sqrt();
    let speed = longitudinal_speed.max(shear_speed);
    let dt_max = if speed > 0.0 {
        grid.ds() / speed
    } else {
        f64::INFINITY
    };
    CflReport {
        longitudinal_speed,
        shear_speed,
        dt,
        dt_max,
        passes: dt <= dt_max,
    }
}
