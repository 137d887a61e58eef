//! Ornstein-Uhlenbeck exploration noise.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Discretised OU process:
/// `x <- x + theta_drift * (mu - x) * dt + sigma * sqrt(dt) * xi`, `xi ~ N(0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OuProcess {
    theta_drift: f64,
    sigma: f64,
    mu: f64,
    dt: f64,
    x: f64,
}

impl Default for OuProcess {
    fn default() -> Self {
        Self {
            theta_drift: 0.15,
            sigma: 0.3,
            mu: 0.0,
            dt: 1.0,
            x: 0.0,
        }
    }
}

impl OuProcess {
    /// Starts at the mean. `theta_drift * dt` must lie in `(0, 2)` for the
    /// discrete recursion to be stable.
    pub fn new(theta_drift: f64, sigma: f64, mu: f64, dt: f64) -> Result<Self> {
        let rate = theta_drift * dt;
        if !(rate.is_finite() && rate > 0.0 && rate < 2.0) {
            return Err(Error::InvalidConfig(format!(
                "theta_drift * dt must lie in (0, 2), got {rate}"
            )));
        }
        if !(sigma.is_finite() && sigma >= 0.0) || !mu.is_finite() || !(dt.is_finite() && dt > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "invalid OU parameters sigma={sigma} mu={mu} dt={dt}"
            )));
        }
        Ok(Self {
            theta_drift,
            sigma,
            mu,
            dt,
            x: mu,
        })
    }

    pub fn value(&self) -> f64 {
        self.x
    }

    /// Overrides the current value.
    pub fn set_value(&mut self, x: f64) {
        self.x = x;
    }

    pub fn theta_drift(&self) -> f64 {
        self.theta_drift
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn sample<R: Rng + ?Sized>(&mut self, rng: &mut R) -> f64 {
        let xi: f64 = rng.sample(StandardNormal);
        self.x += self.theta_drift * (self.mu - self.x) * self.dt + self.sigma * self.dt.sqrt() * xi;
        self.x
    }

    pub fn reset(&mut self) {
        self.x = self.mu;
    }

    /// Variance of the stationary distribution of the discrete recursion.
    pub fn stationary_variance(&self) -> f64 {
        let rate = self.theta_drift * self.dt;
        self.sigma * self.sigma * self.dt / (rate * (2.0 - rate))
    }
}
