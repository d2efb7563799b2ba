//! Control-cycle timing-noise model.
//!
//! Each cycle is re-anchored to its ideal start time, so perturbations are
//! transient phase errors and never accumulate into missed cycles. A cycle
//! draws one Gaussian phase error shared by its command and status frames;
//! with probability `p_tail` the command frame is additionally late by a
//! uniform excursion.
//!
//! A phase error enters two successive `t[n] - t[n-2]` windows with opposite
//! signs, so the per-cycle standard deviation is `sigma_us / sqrt(2)`; that
//! makes `sigma_us` the standard deviation of the resulting cycle period.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimingNoise {
    /// Standard deviation of the Gaussian part of the cycle period, in µs.
    pub sigma_us: f64,
    pub p_tail: f64,
    pub tail_range_us: (f64, f64),
}

impl Default for TimingNoise {
    fn default() -> Self {
        Self::NONE
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NoiseError {
    #[error("sigma_us must be finite and non-negative")]
    BadSigma,
    #[error("p_tail must be in [0, 1]")]
    BadTailProbability,
    #[error("tail_range_us must satisfy 0 <= lo <= hi")]
    BadTailRange,
}

impl TimingNoise {
    pub const NONE: Self = Self { sigma_us: 0.0, p_tail: 0.0, tail_range_us: (50.0, 350.0) };
    /// Partition-isolated regime.
    pub const ISOLATED: Self = Self { sigma_us: 2.0, p_tail: 0.0, tail_range_us: (50.0, 350.0) };
    /// Shared-core regime with heavy-tailed excursions.
    pub const CONTENDED: Self = Self { sigma_us: 10.0, p_tail: 0.02, tail_range_us: (50.0, 350.0) };

    pub fn profile(name: &str) -> Option<Self> {
        match name {
            "none" => Some(Self::NONE),
            "isolated" => Some(Self::ISOLATED),
            "contended" => Some(Self::CONTENDED),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), NoiseError> {
        if !(self.sigma_us.is_finite() && self.sigma_us >= 0.0) {
            return Err(NoiseError::BadSigma);
        }
        if !(0.0..=1.0).contains(&self.p_tail) {
            return Err(NoiseError::BadTailProbability);
        }
        let (lo, hi) = self.tail_range_us;
        if !(lo >= 0.0 && lo <= hi && hi.is_finite()) {
            return Err(NoiseError::BadTailRange);
        }
        Ok(())
    }

    /// Offsets in ns for (command, status) frames of one cycle.
    pub fn perturb<R: Rng + ?Sized>(&self, rng: &mut R) -> (i64, i64) {
        let phase_sd_ns = self.sigma_us * 1e3 / core::f64::consts::SQRT_2;
        let phase = if phase_sd_ns > 0.0 {
            Normal::new(0.0, phase_sd_ns).expect("validated sigma").sample(rng)
        } else {
            0.0
        };
        let tail = if self.p_tail > 0.0 && rng.random_bool(self.p_tail) {
            let (lo, hi) = self.tail_range_us;
            if hi > lo {
                rng.random_range(lo..hi) * 1e3
            } else {
                lo * 1e3
            }
        } else {
            0.0
        };
        let phase = libm::round(phase) as i64;
        (phase + libm::round(tail) as i64, phase)
    }

    /// Expected standard deviation of cycle-period jitter with two frames per
    /// cycle: the Gaussian part plus tail excursions hitting one window in
    /// two as +X and the next as -X.
    pub fn expected_period_sigma_us(&self) -> f64 {
        let (lo, hi) = self.tail_range_us;
        let second_moment = (hi * hi + hi * lo + lo * lo) / 3.0;
        libm::sqrt(self.sigma_us * self.sigma_us + self.p_tail * second_moment)
    }
}
