use std::f64::consts::{FRAC_PI_2, PI};

use crate::control::{DesiredSample, DesiredTrajectory};
use crate::error::{Error, Result};
use crate::geometry::{rot_x, Vec3};

/// Rigid swing of the straight rod about the global x axis through the base,
/// `phi(t) = amplitude * sin(2 pi frequency t + phase)`. Motion stays in the
/// yz-plane.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SwingTrajectory {
    pub amplitude: f64,
    pub frequency: f64,
    pub phase: f64,
}

impl SwingTrajectory {
    pub fn new(amplitude: f64, frequency: f64, phase: f64) -> Result<Self> {
        if !(0.0..FRAC_PI_2).contains(&amplitude) {
            return Err(Error::InvalidTrajectory(format!("amplitude {amplitude} must lie in [0, pi/2)")));
        }
        if !(frequency > 0.0 && frequency.is_finite()) {
            return Err(Error::InvalidTrajectory(format!("frequency {frequency} must be positive")));
        }
        if !phase.is_finite() {
            return Err(Error::InvalidTrajectory("phase must be finite".into()));
        }
        Ok(Self { amplitude, frequency, phase })
    }

    /// `(phi, phi_t, phi_tt)` at time `t`.
    pub fn angle(&self, t: f64) -> (f64, f64, f64) {
        let w = 2.0 * PI * self.frequency;
        let arg = w * t + self.phase;
        let a = self.amplitude;
        (a * arg.sin(), a * w * arg.cos(), -a * w * w * arg.sin())
    }
}

impl Default for SwingTrajectory {
    fn default() -> Self {
        Self {
            amplitude: PI / 3.0,
            frequency: 0.5,
            phase: FRAC_PI_2,
        }
    }
}

impl DesiredTrajectory for SwingTrajectory {
    fn sample(&self, s: f64, t: f64) -> DesiredSample {
        let (phi, phi_t, phi_tt) = self.angle(t);
        let r = rot_x(phi);
        let p = r * Vec3::new(0.0, 0.0, s);
        let ex = Vec3::x();
        let v = ex.cross(&p) * phi_t;
        DesiredSample {
            p,
            r,
            v,
            omega: ex * phi_t,
            v_t: ex.cross(&p) * phi_tt + ex.cross(&v) * phi_t,
            omega_t: ex * phi_tt,
        }
    }
}
