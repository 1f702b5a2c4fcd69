use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::control::{
    check_convergence_conditions, feasibility_from_samples, lyapunov_from_samples, tracking_errors, Controller,
    DesiredTrajectory, FeasibilityReport, GainProfile, LyapunovMonitor, TrackingErrors,
};
use crate::discretize::{check_cfl, step, CflReport, DerivativeOperator, IntegratorConfig};
use crate::error::{Error, Result};
use crate::estimate::{estimator_rhs, Ekf, EstimatorState};
use crate::geometry::{log_so3, Rotation, Vec3};
use crate::rod::{dynamics_rhs_with, make_initial_state, Grid, RodParams, RodState, RodTangent, Wrench};

use super::config::{FeedbackSource, RunConfig};
use super::trajectory::SwingTrajectory;

/// One logged row.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRecord {
    pub t: f64,
    /// `[e_p, e_v, e_R, e_omega]` sup-norms over the non-clamped nodes.
    pub tracking: [f64; 4],
    /// `[eps_p, eps_R, eps_v, eps_omega]` sup-norms; `None` without a filter.
    pub estimation: Option<[f64; 4]>,
    /// `sup_s (V1 + V2)` over the non-clamped nodes.
    pub v_sup: f64,
    /// Smallest feasibility margin if the current state were the initial one.
    pub margin: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SnapshotKind {
    Plant,
    Estimate,
}

impl SnapshotKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SnapshotKind::Plant => "plant",
            SnapshotKind::Estimate => "estimate",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub step: u64,
    pub t: f64,
    pub kind: SnapshotKind,
    pub state: RodState,
}

#[derive(Debug)]
pub struct RunOutput {
    pub config: RunConfig,
    pub records: Vec<MetricsRecord>,
    pub snapshots: Vec<Snapshot>,
    pub feasibility: FeasibilityReport,
    pub cfl: CflReport,
    pub lyapunov: LyapunovMonitor,
    pub steps_completed: u64,
    pub final_plant: RodState,
    pub final_estimate: Option<EstimatorState>,
    /// The error that stopped the run early, if any. Snapshots then end with
    /// the last good state.
    pub failure: Option<Error>,
}

impl RunOutput {
    pub fn succeeded(&self) -> bool {
        self.failure.is_none()
    }
}

/// Sup-norm estimation errors `[eps_p, eps_R, eps_v, eps_omega]`, with the
/// attitude error measured as `|log(R_hat^T R)|`.
pub fn estimation_errors(truth: &RodState, estimate: &RodState) -> [f64; 4] {
    let sup = |a: &[Vec3], b: &[Vec3]| a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
    let angle = |a: &Rotation, b: &Rotation| log_so3(&(a.transpose() * b)).map_or(PI, |v| v.norm());
    [
        sup(&truth.p, &estimate.p),
        truth.r.iter().zip(&estimate.r).map(|(r, rh)| angle(rh, r)).fold(0.0, f64::max),
        sup(&truth.v, &estimate.v),
        sup(&truth.omega, &estimate.omega),
    ]
}

struct Loop<'a> {
    traj: &'a SwingTrajectory,
    gains: &'a GainProfile,
    grid: &'a Grid,
}

impl Loop<'_> {
    fn record(&self, t: f64, plant: &RodState, estimate: Option<&RodState>) -> (MetricsRecord, Vec<f64>) {
        let desired = self.traj.sample_grid(self.grid, t);
        let errors: TrackingErrors = tracking_errors(plant, self.traj, self.grid, t);
        let (v1, v2) = lyapunov_from_samples(&errors, plant, &desired, self.gains);
        let v: Vec<f64> = v1.iter().zip(&v2).map(|(a, b)| a + b).skip(1).collect();
        let feas = feasibility_from_samples(plant, &desired, self.gains);
        let margin = feas.nodes[1..]
            .iter()
            .map(|n| n.attitude_margin.min(n.rate_margin))
            .fold(f64::INFINITY, f64::min);
        let record = MetricsRecord {
            t,
            tracking: errors.sup_norms(1),
            estimation: estimate.map(|e| estimation_errors(plant, e)),
            v_sup: v.iter().copied().fold(0.0, f64::max),
            margin,
        };
        (record, v)
    }
}

/// Runs plant, controller and (optionally) the filter for `cfg.duration`.
///
/// Each step: measure `y = p + w`, linearize and advance the covariance at
/// the current estimate, then advance plant and estimate together with RK4
/// (or Euler). The control wrench is recomputed at every stage from the
/// configured feedback source; the filter's innovation is held over the step.
pub fn run_closed_loop(cfg: &RunConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let params: RodParams = cfg.params()?;
    let grid = cfg.grid()?;
    let n = grid.n_nodes();
    let traj = cfg.trajectory()?;
    let gains = cfg.gains(n)?;
    let env = Wrench::gravity(n, &params, cfg.gravity);
    let ctrl = Controller::new(&traj, &gains, &params, &grid, &env)?;
    let integ: IntegratorConfig = cfg.integrator();
    let d = DerivativeOperator::new(&grid)?;

    let mut plant = make_initial_state(&grid, cfg.scenario);
    let feasibility = check_convergence_conditions(&plant, &traj, &grid, &gains);
    if !feasibility.all_hold() {
        log::warn!("initial state violates the convergence conditions at nodes {:?}", feasibility.failing_nodes());
    }
    let cfl = check_cfl(&params, &grid, cfg.dt);
    if !cfl.passes {
        log::warn!("dt = {} exceeds the CFL bound {:.4e}", cfg.dt, cfl.dt_max);
    }

    let mut ekf = if cfg.estimator {
        Some(Ekf::new(params.clone(), &grid, cfg.noise(n)?, cfg.ekf())?)
    } else {
        None
    };
    let mut est = ekf.as_ref().map(|_| EstimatorState::new(plant.clone(), cfg.p0));

    let normal = Normal::new(0.0, cfg.noise_variance.sqrt()).map_err(|e| Error::InvalidNoise(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let lp = Loop { traj: &traj, gains: &gains, grid: &grid };
    let mut monitor = LyapunovMonitor::new(0.0, 1e-9);
    let mut records = Vec::new();
    let mut snapshots = Vec::new();
    let n_steps = cfg.n_steps();
    let mut failure = None;
    let mut k = 0u64;

    let snap = |snapshots: &mut Vec<Snapshot>, k: u64, plant: &RodState, est: Option<&EstimatorState>| {
        let t = k as f64 * cfg.dt;
        snapshots.push(Snapshot { step: k, t, kind: SnapshotKind::Plant, state: plant.clone() });
        if let Some(e) = est {
            snapshots.push(Snapshot { step: k, t, kind: SnapshotKind::Estimate, state: e.xi_hat.clone() });
        }
    };

    while k < n_steps {
        let t = k as f64 * cfg.dt;
        if k.is_multiple_of(cfg.log_every) {
            let (rec, v) = lp.record(t, &plant, est.as_ref().map(|e| &e.xi_hat));
            monitor.observe(t, v);
            records.push(rec);
            if let Some(e) = &est {
                log::debug!("t = {t:.4}: max variance per field {:?}", e.max_variance());
            }
        }
        if k == 0 || (cfg.snapshot_every > 0 && k.is_multiple_of(cfg.snapshot_every)) {
            snap(&mut snapshots, k, &plant, est.as_ref());
        }

        let y: Vec<Vec3> = if cfg.inject_noise {
            plant
                .p
                .iter()
                .map(|p| p + Vec3::new(normal.sample(&mut rng), normal.sample(&mut rng), normal.sample(&mut rng)))
                .collect()
        } else {
            plant.p.clone()
        };

        let advanced = match (ekf.as_mut(), est.as_mut()) {
            (Some(filter), Some(e)) => step_with_filter(&ctrl, filter, e, &plant, &y, cfg.feedback, &params, &d, &integ, t, k),
            _ => step(&plant, t, |x: &RodState, ts| dynamics_rhs_with(x, &ctrl.total_wrench(x, ts)?, &params, &d), &integ, k)
                .map(|x| (x, None)),
        };
        match advanced {
            Ok((next_plant, next_est)) => {
                plant = next_plant;
                if let (Some(e), Some(xh)) = (est.as_mut(), next_est) {
                    e.xi_hat = xh;
                }
            }
            Err(err) => {
                log::error!("run stopped at step {k} (t = {t:.4}): {err}");
                snap(&mut snapshots, k, &plant, est.as_ref());
                failure = Some(err);
                break;
            }
        }
        k += 1;
    }

    if failure.is_none() && n_steps > 0 {
        let t = n_steps as f64 * cfg.dt;
        if n_steps.is_multiple_of(cfg.log_every) {
            let (rec, v) = lp.record(t, &plant, est.as_ref().map(|e| &e.xi_hat));
            monitor.observe(t, v);
            records.push(rec);
        }
        snap(&mut snapshots, n_steps, &plant, est.as_ref());
    }

    Ok(RunOutput {
        config: cfg.clone(),
        records,
        snapshots,
        feasibility,
        cfl,
        lyapunov: monitor,
        steps_completed: k,
        final_plant: plant,
        final_estimate: est,
        failure,
    })
}

#[allow(clippy::too_many_arguments)]
fn step_with_filter(
    ctrl: &Controller<'_, SwingTrajectory>,
    ekf: &mut Ekf,
    est: &mut EstimatorState,
    plant: &RodState,
    y: &[Vec3],
    feedback: FeedbackSource,
    params: &RodParams,
    d: &DerivativeOperator,
    integ: &IntegratorConfig,
    t: f64,
    k: u64,
) -> Result<(RodState, Option<RodState>)> {
    let source = |x: &RodState, xh: &RodState, ts: f64| -> Result<Wrench> {
        match feedback {
            FeedbackSource::TrueState => ctrl.total_wrench(x, ts),
            FeedbackSource::EstimatedState => ctrl.total_wrench(xh, ts),
        }
    };
    let w0 = source(plant, &est.xi_hat, t)?;
    let correction = ekf.predict_covariance(est, y, &w0)?;
    let joint = (plant.clone(), est.xi_hat.clone());
    let rhs = |s: &(RodState, RodState), ts: f64| -> Result<(RodTangent, RodTangent)> {
        let w = source(&s.0, &s.1, ts)?;
        Ok((dynamics_rhs_with(&s.0, &w, params, d)?, estimator_rhs(&s.1, &w, &correction, params, d)?))
    };
    let (x, xh) = step(&joint, t, rhs, integ, k)?;
    Ok((x, Some(xh)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn short(duration: f64) -> RunConfig {
        RunConfig {
            duration,
            log_every: 10,
            ..RunConfig::default()
        }
    }

    #[test]
    fn zero_duration_has_no_records() {
        let out = run_closed_loop(&short(0.0)).unwrap();
        assert!(out.records.is_empty());
        assert!(out.succeeded());
        assert_eq!(out.steps_completed, 0);
    }

    #[test]
    fn initial_record_matches_moving_start() {
        let out = run_closed_loop(&short(0.01)).unwrap();
        assert!(out.succeeded());
        let first = &out.records[0];
        assert_eq!(first.t, 0.0);
        // R*(0) = Rot_x(pi/3): |e_R| = sin(pi/3); v = e_z with v* = 0
        assert!((first.tracking[2] - (PI / 3.0).sin()).abs() < 1e-12);
        assert!((first.tracking[1] - 1.0).abs() < 1e-12);
        assert_eq!(first.estimation.unwrap(), [0.0; 4]);
        assert!(out.feasibility.all_hold());
        assert_eq!(out.records.len(), 6);
    }

    #[test]
    fn feedforward_from_matched_start_stays_on_trajectory() {
        let cfg = RunConfig {
            duration: 0.2,
            estimator: false,
            ..RunConfig::default()
        };
        let traj = cfg.trajectory().unwrap();
        let grid = cfg.grid().unwrap();
        let params = cfg.params().unwrap();
        let n = grid.n_nodes();
        let gains = GainProfile::feedforward_only(n);
        let env = Wrench::zeros(n);
        let ctrl = Controller::new(&traj, &gains, &params, &grid, &env).unwrap();
        let desired = traj.sample_grid(&grid, 0.0);
        let mut x = RodState {
            p: desired.iter().map(|d| d.p).collect(),
            r: desired.iter().map(|d| d.r).collect(),
            v: desired.iter().map(|d| d.v).collect(),
            omega: desired.iter().map(|d| d.omega).collect(),
        };
        let d = DerivativeOperator::new(&grid).unwrap();
        let integ = cfg.integrator();
        for k in 0..cfg.n_steps() {
            let t = k as f64 * cfg.dt;
            x = step(&x, t, |s: &RodState, ts| dynamics_rhs_with(s, &ctrl.total_wrench(s, ts)?, &params, &d), &integ, k).unwrap();
        }
        let e = tracking_errors(&x, &traj, &grid, cfg.duration);
        let sup = e.sup_norms(1);
        assert!(sup.iter().all(|v| *v < 1e-9), "{sup:?}");
    }
}
