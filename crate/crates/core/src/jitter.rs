//! Control-cycle timing analysis from frame timestamps.
//!
//! With two frames per control cycle, consecutive timestamps alternate
//! between intra-cycle and inter-cycle gaps. The cycle period is therefore
//! estimated as `t[n] - t[n-2]` over a sliding window, the nominal period is
//! the median of those estimates, and signed jitter is the deviation of each
//! estimate from that median.
//!
//! Conventions: population standard deviation of signed jitter; percentiles
//! of |jitter| by linear interpolation between order statistics (rank
//! `p * (n - 1)`); thresholds are strict (`>`), the ±band is inclusive.

use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::noise::TimingNoise;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameKind {
    Command,
    Status,
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub index: u64,
    pub timestamp_ns: u64,
    pub frame_kind: FrameKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum JitterError {
    #[error("trace has {0} records, at least 3 are needed")]
    TraceTooShort(usize),
    #[error("timestamp decreases at record {0}")]
    NonMonotonicTimestamps(u64),
    #[error("invalid generator config: {0}")]
    InvalidConfig(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalyzeConfig {
    pub excursion_threshold_us: f64,
    pub missed_cycle_threshold_ms: f64,
    pub band_us: f64,
}

impl Default for AnalyzeConfig {
    fn default() -> Self {
        Self { excursion_threshold_us: 50.0, missed_cycle_threshold_ms: 2.0, band_us: 10.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JitterReport {
    pub nominal_cycle_us: f64,
    pub sigma_us: f64,
    pub p99_abs_us: f64,
    pub p999_abs_us: f64,
    pub max_abs_us: f64,
    pub excursion_fraction: f64,
    pub excursion_count: u64,
    pub missed_cycles: u64,
    pub within_pm10us_fraction: f64,
    pub cycles_analyzed: u64,
}

pub fn compute_delta2(trace: &[TraceRecord]) -> Result<Vec<u64>, JitterError> {
    if trace.len() < 3 {
        return Err(JitterError::TraceTooShort(trace.len()));
    }
    if let Some(w) = trace.windows(2).find(|w| w[1].timestamp_ns < w[0].timestamp_ns) {
        return Err(JitterError::NonMonotonicTimestamps(w[1].index));
    }
    Ok(trace.windows(3).map(|w| w[2].timestamp_ns - w[0].timestamp_ns).collect())
}

/// Only the records of one frame kind, re-indexed from zero.
pub fn filter_kind(trace: &[TraceRecord], kind: FrameKind) -> Vec<TraceRecord> {
    trace
        .iter()
        .filter(|r| r.frame_kind == kind)
        .enumerate()
        .map(|(i, r)| TraceRecord { index: i as u64, ..*r })
        .collect()
}

fn median_sorted(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    let rank = p * (sorted.len() - 1) as f64;
    let lo = libm::floor(rank) as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = rank - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Median-centred signed jitter in ns, with the median itself.
fn signed_jitter_ns(delta2: &[u64]) -> (f64, Vec<f64>) {
    let mut sorted: Vec<f64> = delta2.iter().map(|&d| d as f64).collect();
    sorted.sort_by(f64::total_cmp);
    let nominal = median_sorted(&sorted);
    (nominal, delta2.iter().map(|&d| d as f64 - nominal).collect())
}

pub fn analyze(trace: &[TraceRecord], cfg: &AnalyzeConfig) -> Result<JitterReport, JitterError> {
    let delta2 = compute_delta2(trace)?;
    let n = delta2.len();
    let (nominal_ns, jitter) = signed_jitter_ns(&delta2);

    let mean = jitter.iter().sum::<f64>() / n as f64;
    let var = jitter.iter().map(|j| (j - mean) * (j - mean)).sum::<f64>() / n as f64;

    let mut abs: Vec<f64> = jitter.iter().map(|j| j.abs()).collect();
    abs.sort_by(f64::total_cmp);

    let excursion_ns = cfg.excursion_threshold_us * 1e3;
    let band_ns = cfg.band_us * 1e3;
    let missed_ns = cfg.missed_cycle_threshold_ms * 1e6;
    let excursion_count = abs.iter().filter(|&&a| a > excursion_ns).count() as u64;
    let within = abs.iter().filter(|&&a| a <= band_ns).count();
    let missed_cycles = delta2.iter().filter(|&&d| d as f64 > missed_ns).count() as u64;

    Ok(JitterReport {
        nominal_cycle_us: nominal_ns / 1e3,
        sigma_us: libm::sqrt(var) / 1e3,
        p99_abs_us: percentile_sorted(&abs, 0.99) / 1e3,
        p999_abs_us: percentile_sorted(&abs, 0.999) / 1e3,
        max_abs_us: abs[n - 1] / 1e3,
        excursion_fraction: excursion_count as f64 / n as f64,
        excursion_count,
        missed_cycles,
        within_pm10us_fraction: within as f64 / n as f64,
        cycles_analyzed: n as u64,
    })
}

/// Complementary CDF points: (threshold µs, fraction of cycles with |jitter| > threshold).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Ccdf {
    pub points: Vec<(f64, f64)>,
}

pub const DEFAULT_CCDF_THRESHOLDS_US: [f64; 9] = [1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0, 200.0, 500.0];

pub fn ccdf(trace: &[TraceRecord], thresholds_us: &[f64]) -> Result<Ccdf, JitterError> {
    let delta2 = compute_delta2(trace)?;
    let (_, jitter) = signed_jitter_ns(&delta2);
    let mut abs: Vec<f64> = jitter.iter().map(|j| j.abs()).collect();
    abs.sort_by(f64::total_cmp);
    let n = abs.len() as f64;
    let mut thresholds = thresholds_us.to_vec();
    thresholds.sort_by(f64::total_cmp);
    let points = thresholds
        .into_iter()
        .map(|t| {
            let t_ns = t * 1e3;
            let at_or_below = abs.partition_point(|&a| a <= t_ns);
            (t, (abs.len() - at_or_below) as f64 / n)
        })
        .collect();
    Ok(Ccdf { points })
}

const NS_PER_S: u64 = 1_000_000_000;

/// Excursion counts per one-second bucket of `t[n] - t[0]`, zero-filled.
pub fn excursions_per_second(trace: &[TraceRecord], threshold_us: f64) -> Result<Vec<(u64, u64)>, JitterError> {
    let delta2 = compute_delta2(trace)?;
    let (_, jitter) = signed_jitter_ns(&delta2);
    let t0 = trace[0].timestamp_ns;
    let last_bucket = (trace[trace.len() - 1].timestamp_ns - t0) / NS_PER_S;
    let mut counts: Vec<(u64, u64)> = (0..=last_bucket).map(|s| (s, 0)).collect();
    let threshold_ns = threshold_us * 1e3;
    for (i, j) in jitter.iter().enumerate() {
        if j.abs() > threshold_ns {
            let bucket = (trace[i + 2].timestamp_ns - t0) / NS_PER_S;
            counts[bucket as usize].1 += 1;
        }
    }
    Ok(counts)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TraceGenConfig {
    pub n_cycles: u64,
    pub nominal_us: f64,
    pub sigma_us: f64,
    pub p_tail: f64,
    pub tail_range_us: (f64, f64),
    pub seed: u64,
}

impl Default for TraceGenConfig {
    fn default() -> Self {
        Self { n_cycles: 1000, nominal_us: 1000.0, sigma_us: 0.0, p_tail: 0.0, tail_range_us: (50.0, 350.0), seed: 0 }
    }
}

impl TraceGenConfig {
    pub fn from_noise(n_cycles: u64, noise: TimingNoise, seed: u64) -> Self {
        Self {
            n_cycles,
            sigma_us: noise.sigma_us,
            p_tail: noise.p_tail,
            tail_range_us: noise.tail_range_us,
            seed,
            ..Self::default()
        }
    }

    pub fn noise(&self) -> TimingNoise {
        TimingNoise { sigma_us: self.sigma_us, p_tail: self.p_tail, tail_range_us: self.tail_range_us }
    }
}

/// Ideal in-cycle offset of the status frame, as a fraction of the period.
pub const STATUS_PHASE: f64 = 0.4;

/// Emits the (command, status) pair of one cycle, clamped so timestamps
/// never decrease.
#[derive(Debug, Clone, Default)]
pub struct TraceEmitter {
    records: Vec<TraceRecord>,
}

impl TraceEmitter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn emit_cycle(&mut self, cycle_start_ns: u64, period_ns: f64, offsets: (i64, i64)) {
        let status_ideal = cycle_start_ns as f64 + STATUS_PHASE * period_ns;
        for (ideal, off, kind) in [
            (cycle_start_ns as f64, offsets.0, FrameKind::Command),
            (status_ideal, offsets.1, FrameKind::Status),
        ] {
            let raw = (libm::round(ideal) as i64).saturating_add(off).max(0) as u64;
            let floor = self.records.last().map_or(0, |r| r.timestamp_ns);
            let index = self.records.len() as u64;
            self.records.push(TraceRecord { index, timestamp_ns: raw.max(floor), frame_kind: kind });
        }
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<TraceRecord> {
        self.records
    }
}

pub fn generate_trace(cfg: &TraceGenConfig) -> Result<Vec<TraceRecord>, JitterError> {
    if cfg.n_cycles < 3 {
        return Err(JitterError::InvalidConfig("n_cycles must be at least 3"));
    }
    if !(cfg.nominal_us.is_finite() && cfg.nominal_us > 0.0) {
        return Err(JitterError::InvalidConfig("nominal_us must be positive"));
    }
    let noise = cfg.noise();
    noise.validate().map_err(|_| JitterError::InvalidConfig("noise parameters out of range"))?;
    let period_ns = cfg.nominal_us * 1e3;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = TraceEmitter::new();
    for k in 0..cfg.n_cycles {
        let start = libm::round(k as f64 * period_ns) as u64;
        out.emit_cycle(start, period_ns, noise.perturb(&mut rng));
    }
    Ok(out.into_records())
}
