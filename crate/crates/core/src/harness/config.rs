use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::control::GainProfile;
use crate::discretize::{IntegratorConfig, Scheme};
use crate::error::{Error, Result};
use crate::estimate::{CovarianceScheme, EkfConfig, NoiseModel};
use crate::rod::{Grid, RodParams, Scenario};

use super::trajectory::SwingTrajectory;

/// Which state the controller sees.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeedbackSource {
    TrueState,
    EstimatedState,
}

impl FromStr for FeedbackSource {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "true" | "true_state" => Ok(FeedbackSource::TrueState),
            "estimated" | "estimated_state" => Ok(FeedbackSource::EstimatedState),
            other => Err(format!("unknown feedback source `{other}` (expected true|estimated)")),
        }
    }
}

impl std::fmt::Display for FeedbackSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FeedbackSource::TrueState => "true",
            FeedbackSource::EstimatedState => "estimated",
        })
    }
}

/// Everything that defines a run. Text form is flat `key = value` lines with
/// `#` comments; keys are the field names below.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub length: f64,
    pub radius: f64,
    pub density: f64,
    pub youngs: f64,
    pub shear: f64,
    pub gravity: f64,
    pub ds: f64,
    pub dt: f64,
    pub scheme: Scheme,
    pub reorthonormalize_every: u64,
    pub k_p: f64,
    pub k_v: f64,
    pub k_r: f64,
    pub k_omega: f64,
    /// Lyapunov coupling as a fraction of its upper bound.
    pub c_fraction: f64,
    pub duration: f64,
    pub feedback: FeedbackSource,
    pub estimator: bool,
    pub noise_variance: f64,
    pub inject_noise: bool,
    /// Initial variance per error field: position, rotation, velocity,
    /// angular velocity. The clamped node always starts at zero.
    pub p0: [f64; 4],
    pub process_noise: f64,
    /// Covariance propagation; `None` follows `scheme`.
    pub covariance: Option<CovarianceScheme>,
    pub p_cap: f64,
    pub psd_check_every: u64,
    pub seed: u64,
    pub scenario: Scenario,
    pub amplitude: f64,
    pub frequency: f64,
    pub phase: f64,
    pub log_every: u64,
    /// Snapshot period in steps; 0 keeps only the first and last.
    pub snapshot_every: u64,
    pub out_dir: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        let swing = SwingTrajectory::default();
        Self {
            length: 0.5,
            radius: 0.02,
            density: 2000.0,
            youngs: 3e7,
            shear: 1e7,
            gravity: 0.0,
            ds: 0.025,
            dt: 2e-4,
            scheme: Scheme::Rk4,
            reorthonormalize_every: 100,
            k_p: 1.0,
            k_v: 2.0,
            k_r: 1.0,
            k_omega: 2.0,
            c_fraction: 0.5,
            duration: 10.0,
            feedback: FeedbackSource::TrueState,
            estimator: true,
            noise_variance: 0.02,
            inject_noise: true,
            p0: [1e-6; 4],
            process_noise: 0.0,
            covariance: None,
            p_cap: 1e6,
            psd_check_every: 1000,
            seed: 0,
            scenario: Scenario::MovingStart,
            amplitude: swing.amplitude,
            frequency: swing.frequency,
            phase: swing.phase,
            log_every: 50,
            snapshot_every: 0,
            out_dir: "out".into(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| Error::ConfigValue {
        key: key.into(),
        reason: format!("`{value}`: {e}"),
    })
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        other => Err(Error::ConfigValue {
            key: key.into(),
            reason: format!("`{other}` is not a boolean"),
        }),
    }
}

impl RunConfig {
    pub const KEYS: [&'static str; 36] = [
        "length",
        "radius",
        "density",
        "youngs",
        "shear",
        "gravity",
        "ds",
        "dt",
        "scheme",
        "reorthonormalize_every",
        "k_p",
        "k_v",
        "k_r",
        "k_omega",
        "c_fraction",
        "duration",
        "feedback",
        "estimator",
        "noise_variance",
        "inject_noise",
        "p0_position",
        "p0_rotation",
        "p0_velocity",
        "p0_angular_velocity",
        "process_noise",
        "covariance",
        "p_cap",
        "psd_check_every",
        "seed",
        "scenario",
        "amplitude",
        "frequency",
        "phase",
        "log_every",
        "snapshot_every",
        "out_dir",
    ];

    /// Sets one field from its text form. Unknown keys are an error.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key.trim() {
            "length" => self.length = parse(key, value)?,
            "radius" => self.radius = parse(key, value)?,
            "density" => self.density = parse(key, value)?,
            "youngs" => self.youngs = parse(key, value)?,
            "shear" => self.shear = parse(key, value)?,
            "gravity" => self.gravity = parse(key, value)?,
            "ds" => self.ds = parse(key, value)?,
            "dt" => self.dt = parse(key, value)?,
            "scheme" => self.scheme = parse(key, value)?,
            "reorthonormalize_every" => self.reorthonormalize_every = parse(key, value)?,
            "k_p" => self.k_p = parse(key, value)?,
            "k_v" => self.k_v = parse(key, value)?,
            "k_r" => self.k_r = parse(key, value)?,
            "k_omega" => self.k_omega = parse(key, value)?,
            "c_fraction" => self.c_fraction = parse(key, value)?,
            "duration" => self.duration = parse(key, value)?,
            "feedback" => self.feedback = parse(key, value)?,
            "estimator" => self.estimator = parse_bool(key, value)?,
            "noise_variance" => self.noise_variance = parse(key, value)?,
            "inject_noise" => self.inject_noise = parse_bool(key, value)?,
            "p0" => self.p0 = [parse(key, value)?; 4],
            "p0_position" => self.p0[0] = parse(key, value)?,
            "p0_rotation" => self.p0[1] = parse(key, value)?,
            "p0_velocity" => self.p0[2] = parse(key, value)?,
            "p0_angular_velocity" => self.p0[3] = parse(key, value)?,
            "process_noise" => self.process_noise = parse(key, value)?,
            "covariance" => {
                self.covariance = match value {
                    "auto" => None,
                    other => Some(parse(key, other)?),
                }
            }
            "p_cap" => self.p_cap = parse(key, value)?,
            "psd_check_every" => self.psd_check_every = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "scenario" => self.scenario = parse(key, value)?,
            "amplitude" => self.amplitude = parse(key, value)?,
            "frequency" => self.frequency = parse(key, value)?,
            "phase" => self.phase = parse(key, value)?,
            "log_every" => self.log_every = parse(key, value)?,
            "snapshot_every" => self.snapshot_every = parse(key, value)?,
            "out_dir" => self.out_dir = value.to_string(),
            other => {
                return Err(Error::ConfigValue {
                    key: other.into(),
                    reason: "unknown key".into(),
                })
            }
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of the current values.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Config {
                line: n + 1,
                reason: format!("expected `key = value`, got `{line}`"),
            })?;
            self.set(key, value).map_err(|e| Error::Config {
                line: n + 1,
                reason: e.to_string(),
            })?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    /// Applies a comma- or whitespace-separated override list such as
    /// `k_p=2,seed=3`.
    pub fn apply_overrides(&mut self, overrides: &str) -> Result<()> {
        for item in overrides.split([',', ' ']).filter(|s| !s.is_empty()) {
            let (key, value) = item.split_once('=').ok_or_else(|| Error::ConfigValue {
                key: item.into(),
                reason: "expected key=value".into(),
            })?;
            self.set(key, value)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("length", self.length),
            ("radius", self.radius),
            ("density", self.density),
            ("youngs", self.youngs),
            ("shear", self.shear),
            ("ds", self.ds),
            ("dt", self.dt),
            ("k_p", self.k_p),
            ("k_v", self.k_v),
            ("k_r", self.k_r),
            ("k_omega", self.k_omega),
            ("noise_variance", self.noise_variance),
            ("frequency", self.frequency),
            ("p_cap", self.p_cap),
        ];
        for (key, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::ConfigValue {
                    key: key.into(),
                    reason: format!("must be positive and finite, got {value}"),
                });
            }
        }
        let nonnegative = [
            ("gravity", self.gravity),
            ("duration", self.duration),
            ("p0_position", self.p0[0]),
            ("p0_rotation", self.p0[1]),
            ("p0_velocity", self.p0[2]),
            ("p0_angular_velocity", self.p0[3]),
            ("process_noise", self.process_noise),
        ];
        for (key, value) in nonnegative {
            if !(value >= 0.0 && value.is_finite()) {
                return Err(Error::ConfigValue {
                    key: key.into(),
                    reason: format!("must be non-negative and finite, got {value}"),
                });
            }
        }
        if !(self.c_fraction > 0.0 && self.c_fraction < 1.0) {
            return Err(Error::ConfigValue {
                key: "c_fraction".into(),
                reason: format!("must lie in (0, 1), got {}", self.c_fraction),
            });
        }
        if self.log_every == 0 || self.reorthonormalize_every == 0 {
            return Err(Error::ConfigValue {
                key: "log_every".into(),
                reason: "log_every and reorthonormalize_every must be at least 1".into(),
            });
        }
        if self.feedback == FeedbackSource::EstimatedState && !self.estimator {
            return Err(Error::ConfigValue {
                key: "feedback".into(),
                reason: "estimated feedback needs estimator = true".into(),
            });
        }
        self.trajectory()?;
        self.grid()?;
        self.params()?;
        self.integrator().validate()
    }

    pub fn params(&self) -> Result<RodParams> {
        RodParams::circular(self.length, self.radius, self.density, self.youngs, self.shear)
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.length, self.ds)
    }

    pub fn integrator(&self) -> IntegratorConfig {
        IntegratorConfig {
            dt: self.dt,
            scheme: self.scheme,
            reorthonormalize_every: self.reorthonormalize_every,
        }
    }

    pub fn trajectory(&self) -> Result<SwingTrajectory> {
        SwingTrajectory::new(self.amplitude, self.frequency, self.phase)
    }

    pub fn gains(&self, n_nodes: usize) -> Result<GainProfile> {
        let c = self.c_fraction * crate::control::c_upper_bound(self.k_r, self.k_omega);
        GainProfile::new(
            vec![self.k_p; n_nodes],
            vec![self.k_v; n_nodes],
            vec![self.k_r; n_nodes],
            vec![self.k_omega; n_nodes],
            vec![c; n_nodes],
        )
    }

    pub fn noise(&self, n_nodes: usize) -> Result<NoiseModel> {
        let noise = NoiseModel::isotropic(n_nodes, self.noise_variance)?;
        Ok(if self.process_noise > 0.0 {
            noise.with_process_diagonal(self.process_noise)
        } else {
            noise
        })
    }

    pub fn ekf(&self) -> EkfConfig {
        let mut cfg = EkfConfig::new(self.integrator());
        if let Some(c) = self.covariance {
            cfg.covariance = c;
        }
        cfg.p_cap = self.p_cap;
        cfg.psd_check_every = self.psd_check_every;
        cfg
    }

    /// Number of steps covering `duration`.
    pub fn n_steps(&self) -> u64 {
        (self.duration / self.dt).round() as u64
    }

    /// `key = value` echo that [`RunConfig::from_text`] reads back exactly.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let covariance = self.covariance.map_or("auto".to_string(), |c| c.to_string());
        let entries: [(&str, String); 36] = [
            ("length", format!("{:?}", self.length)),
            ("radius", format!("{:?}", self.radius)),
            ("density", format!("{:?}", self.density)),
            ("youngs", format!("{:?}", self.youngs)),
            ("shear", format!("{:?}", self.shear)),
            ("gravity", format!("{:?}", self.gravity)),
            ("ds", format!("{:?}", self.ds)),
            ("dt", format!("{:?}", self.dt)),
            ("scheme", self.scheme.to_string()),
            ("reorthonormalize_every", self.reorthonormalize_every.to_string()),
            ("k_p", format!("{:?}", self.k_p)),
            ("k_v", format!("{:?}", self.k_v)),
            ("k_r", format!("{:?}", self.k_r)),
            ("k_omega", format!("{:?}", self.k_omega)),
            ("c_fraction", format!("{:?}", self.c_fraction)),
            ("duration", format!("{:?}", self.duration)),
            ("feedback", self.feedback.to_string()),
            ("estimator", self.estimator.to_string()),
            ("noise_variance", format!("{:?}", self.noise_variance)),
            ("inject_noise", self.inject_noise.to_string()),
            ("p0_position", format!("{:?}", self.p0[0])),
            ("p0_rotation", format!("{:?}", self.p0[1])),
            ("p0_velocity", format!("{:?}", self.p0[2])),
            ("p0_angular_velocity", format!("{:?}", self.p0[3])),
            ("process_noise", format!("{:?}", self.process_noise)),
            ("covariance", covariance),
            ("p_cap", format!("{:?}", self.p_cap)),
            ("psd_check_every", self.psd_check_every.to_string()),
            ("seed", self.seed.to_string()),
            ("scenario", self.scenario.to_string()),
            ("amplitude", format!("{:?}", self.amplitude)),
            ("frequency", format!("{:?}", self.frequency)),
            ("phase", format!("{:?}", self.phase)),
            ("log_every", self.log_every.to_string()),
            ("snapshot_every", self.snapshot_every.to_string()),
            ("out_dir", self.out_dir.clone()),
        ];
        for (k, v) in entries {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}
