#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use softrod::geometry::{exp_so3, Vec3};
use softrod::harness::MetricsRecord;
use softrod::rod::{Grid, RodParams, RodState, RodTangent, Wrench};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn default_params() -> RodParams {
    RodParams::circular(0.5, 0.02, 2000.0, 3e7, 1e7).unwrap()
}

pub fn default_grid() -> Grid {
    Grid::new(0.5, 0.025).unwrap()
}

pub fn uniform(rng: &mut ChaCha8Rng, scale: f64) -> Vec3 {
    Vec3::new(
        rng.random_range(-scale..scale),
        rng.random_range(-scale..scale),
        rng.random_range(-scale..scale),
    )
}

/// A configuration the rod can actually reach: frames and positions are
/// integrated from smooth, bounded strain profiles starting at the clamp,
/// and velocities are smooth in `s` and vanish at the clamp.
pub fn reachable_state(grid: &Grid, rng: &mut ChaCha8Rng) -> RodState {
    let (u0, u1) = (uniform(rng, 2.0), uniform(rng, 2.0));
    let (q0, q1) = (uniform(rng, 0.05), uniform(rng, 0.05));
    let (v0, v1) = (uniform(rng, 1.0), uniform(rng, 1.0));
    let (w0, w1) = (uniform(rng, 2.0), uniform(rng, 2.0));
    let ds = grid.ds();
    let s = grid.s_values();
    let l = grid.length();
    let n = grid.n_nodes();
    let mut state = RodState {
        p: vec![Vec3::zeros(); n],
        r: vec![exp_so3(&Vec3::zeros()); n],
        v: vec![Vec3::zeros(); n],
        omega: vec![Vec3::zeros(); n],
    };
    for i in 1..n {
        let mid = s[i] - 0.5 * ds;
        let shape = (std::f64::consts::PI * mid / l).sin();
        let u = u0 + u1 * shape;
        let q = Vec3::z() + q0 + q1 * shape;
        let half = state.r[i - 1] * exp_so3(&(u * (0.5 * ds)));
        state.r[i] = half * exp_so3(&(u * (0.5 * ds)));
        state.p[i] = state.p[i - 1] + half * q * ds;
        let sn = s[i] / l;
        state.v[i] = v0 * sn + v1 * (std::f64::consts::PI * sn).sin();
        state.omega[i] = w0 * sn + w1 * (2.0 * sn * sn);
    }
    state
}

/// Arbitrary (not necessarily reachable) smooth state with moderate strain.
pub fn rough_state(grid: &Grid, rng: &mut ChaCha8Rng) -> RodState {
    let a = uniform(rng, 1.0);
    let b = uniform(rng, 1.0);
    let s = grid.s_values();
    RodState {
        p: s.iter().map(|&s| Vec3::new(0.05 * a.x * s * s, 0.03 * a.y * s, s * (1.0 + 0.02 * a.z)) + uniform(rng, 1e-4)).collect(),
        r: s.iter().map(|&s| exp_so3(&(Vec3::new(b.x * s, b.y * s * s, 0.5 * b.z * s) + uniform(rng, 1e-3)))).collect(),
        v: s.iter().map(|&s| uniform(rng, 1.0) * s).collect(),
        omega: s.iter().map(|&s| uniform(rng, 2.0) * s).collect(),
    }
}

pub fn random_wrench(n: usize, rng: &mut ChaCha8Rng) -> Wrench {
    Wrench {
        f: (0..n).map(|_| uniform(rng, 1.0)).collect(),
        l: (0..n).map(|_| uniform(rng, 1.0)).collect(),
    }
}

pub fn random_direction(n: usize, rng: &mut ChaCha8Rng) -> RodTangent {
    RodTangent {
        p_t: (0..n).map(|_| uniform(rng, 1.0)).collect(),
        rot: (0..n).map(|_| uniform(rng, 1.0)).collect(),
        v_t: (0..n).map(|_| uniform(rng, 1.0)).collect(),
        omega_t: (0..n).map(|_| uniform(rng, 1.0)).collect(),
    }
}

/// Result of fitting `ln(envelope) = a + slope * t` to windowed maxima.
#[derive(Debug, Clone, Copy)]
pub struct Envelope {
    pub slope: f64,
    pub initial: f64,
    pub last: f64,
}

impl Envelope {
    pub fn decays_below(&self, fraction: f64) -> bool {
        self.slope < 0.0 && self.last < fraction * self.initial
    }
}

/// Per-component envelope of the tracking sup-norms: maxima over windows of
/// `window` seconds after `transient`, fitted by least squares in log space.
pub fn tracking_envelopes(records: &[MetricsRecord], transient: f64, window: f64) -> [Envelope; 4] {
    let t_end = records.last().map_or(0.0, |r| r.t);
    let first = records.first().map_or([0.0; 4], |r| r.tracking);
    let last = records.last().map_or([f64::NAN; 4], |r| r.tracking);
    std::array::from_fn(|k| {
        let mut points = Vec::new();
        let mut start = transient;
        while start + window <= t_end + 1e-9 {
            let peak = records
                .iter()
                .filter(|r| r.t >= start - 1e-12 && r.t <= start + window + 1e-12)
                .map(|r| r.tracking[k])
                .fold(0.0, f64::max);
            points.push((start + 0.5 * window, peak.max(1e-300).ln()));
            start += window;
        }
        Envelope { slope: log_slope(&points), initial: first[k], last: last[k] }
    })
}

fn log_slope(points: &[(f64, f64)]) -> f64 {
    if points.len() < 2 {
        return f64::NAN;
    }
    let n = points.len() as f64;
    let (mt, my) = points.iter().fold((0.0, 0.0), |(a, b), (t, y)| (a + t / n, b + y / n));
    let (num, den) = points.iter().fold((0.0, 0.0), |(a, b), (t, y)| (a + (t - mt) * (y - my), b + (t - mt).powi(2)));
    num / den
}

pub fn field_norm(a: &[Vec3]) -> f64 {
    a.iter().map(|x| x.norm_squared()).sum::<f64>().sqrt()
}

pub fn field_diff(a: &[Vec3], b: &[Vec3]) -> Vec<Vec3> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}
