//! Simulated shared-memory transport with doorbell notification and seeded
//! black-channel faults.
//!
//! Faults are applied to each sent buffer in a fixed order: lose, corrupt,
//! duplicate, delay, reorder. Every random draw comes from the channel's own
//! ChaCha stream, so runs are reproducible from the seed alone and adding a
//! channel never shifts another channel's fault pattern.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_CAPACITY: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DelayModel {
    pub fixed_ns: u64,
    /// Half-width of a uniform perturbation around `fixed_ns`.
    pub jitter_ns: u64,
}

impl Default for DelayModel {
    fn default() -> Self {
        Self { fixed_ns: 1_000, jitter_ns: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelFaultModel {
    /// Independent flip probability per transmitted bit.
    pub bit_error_rate: f64,
    pub loss_prob: f64,
    pub dup_prob: f64,
    pub delay_dist: DelayModel,
    /// Probability that a frame is held back and delivered after its successor.
    pub reorder_prob: f64,
    pub seed: u64,
}

impl Default for ChannelFaultModel {
    fn default() -> Self {
        Self {
            bit_error_rate: 0.0,
            loss_prob: 0.0,
            dup_prob: 0.0,
            delay_dist: DelayModel::default(),
            reorder_prob: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FaultModelError {
    #[error("{field} = {value} is not a probability in [0, 1]")]
    NotAProbability { field: &'static str, value: f64 },
}

impl ChannelFaultModel {
    /// A channel that delivers every frame once, intact, after `delay_ns`.
    pub fn identity(delay_ns: u64) -> Self {
        Self { delay_dist: DelayModel { fixed_ns: delay_ns, jitter_ns: 0 }, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), FaultModelError> {
        for (field, value) in [
            ("bit_error_rate", self.bit_error_rate),
            ("loss_prob", self.loss_prob),
            ("dup_prob", self.dup_prob),
            ("reorder_prob", self.reorder_prob),
        ] {
            if !(0.0..=1.0).contains(&value) {
                return Err(FaultModelError::NotAProbability { field, value });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum ChannelError {
    #[error("channel full, frame dropped")]
    ChannelFull,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SendOutcome {
    /// Copies now in flight, with the delivery time of each one enqueued by
    /// this call (including a previously held frame released behind it).
    Queued { deliveries: Vec<u64> },
    /// Held back to be delivered after the next frame sent.
    Held,
    Lost,
}

/// Per-channel accounting. Conservation holds at every instant:
/// `sent + duplicated == delivered + injected_losses + overflow_drops + in_flight`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct ChannelStats {
    pub sent: u64,
    pub duplicated: u64,
    pub delivered: u64,
    pub injected_losses: u64,
    pub overflow_drops: u64,
    pub corrupted_frames: u64,
    pub bits_flipped: u64,
    pub reordered: u64,
}

#[derive(Debug, Clone)]
struct InFlight {
    bytes: Vec<u8>,
    /// Receivers that have not yet polled this copy.
    pending: u32,
}

#[derive(Debug, Clone)]
pub struct Channel {
    model: ChannelFaultModel,
    capacity: usize,
    receivers: usize,
    queue: BTreeMap<(u64, u64), InFlight>,
    held: Vec<(u64, Vec<u8>)>,
    doorbell: Vec<bool>,
    next_order: u64,
    rng: ChaCha8Rng,
    stats: ChannelStats,
}

impl Channel {
    /// `receivers` is the number of independent readers (at most 32); each
    /// sees every delivered copy once.
    pub fn new(model: ChannelFaultModel, capacity: usize, receivers: usize) -> Self {
        assert!((1..=32).contains(&receivers), "receivers must be in 1..=32");
        let rng = ChaCha8Rng::seed_from_u64(model.seed);
        Self {
            model,
            capacity,
            receivers,
            queue: BTreeMap::new(),
            held: Vec::new(),
            doorbell: vec![false; receivers],
            next_order: 0,
            rng,
            stats: ChannelStats::default(),
        }
    }

    /// Select an independent ChaCha stream for the same seed.
    pub fn with_stream(mut self, stream: u64) -> Self {
        self.rng.set_stream(stream);
        self
    }

    pub fn model(&self) -> &ChannelFaultModel {
        &self.model
    }

    /// Swap fault parameters mid-run; the random stream continues.
    pub fn set_model(&mut self, model: ChannelFaultModel) {
        self.model = model;
    }

    pub fn stats(&self) -> ChannelStats {
        self.stats
    }

    pub fn in_flight(&self) -> u64 {
        (self.queue.len() + self.held.len()) as u64
    }

    pub fn len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    pub fn send(&mut self, raw: &[u8], now_ns: u64) -> Result<SendOutcome, ChannelError> {
        self.stats.sent += 1;

        if self.rng.random_bool(self.model.loss_prob) {
            self.stats.injected_losses += 1;
            return Ok(SendOutcome::Lost);
        }

        let mut bytes = raw.to_vec();
        let flipped = self.corrupt(&mut bytes);
        if flipped > 0 {
            self.stats.corrupted_frames += 1;
            self.stats.bits_flipped += flipped;
        }

        let copies = if self.rng.random_bool(self.model.dup_prob) {
            self.stats.duplicated += 1;
            2
        } else {
            1
        };

        let mut timed = Vec::with_capacity(copies);
        for _ in 0..copies {
            let at = self.delivery_time(now_ns);
            timed.push((at, bytes.clone()));
        }

        if !self.held.is_empty() {
            // This frame is the successor of a held one: it goes first.
            let mut deliveries = Vec::new();
            let latest = timed.iter().map(|(at, _)| *at).max().unwrap_or(now_ns);
            let own = self.enqueue_all(timed, &mut deliveries);
            let held = core::mem::take(&mut self.held);
            let released = held.into_iter().map(|(at, b)| (at.max(latest), b)).collect();
            self.enqueue_all(released, &mut deliveries);
            return if own { Ok(SendOutcome::Queued { deliveries }) } else { Err(ChannelError::ChannelFull) };
        }

        if self.rng.random_bool(self.model.reorder_prob) {
            self.stats.reordered += 1;
            self.held = timed;
            return Ok(SendOutcome::Held);
        }

        let mut deliveries = Vec::new();
        if self.enqueue_all(timed, &mut deliveries) {
            Ok(SendOutcome::Queued { deliveries })
        } else {
            Err(ChannelError::ChannelFull)
        }
    }

    /// Returns false if the first copy did not fit.
    fn enqueue_all(&mut self, copies: Vec<(u64, Vec<u8>)>, deliveries: &mut Vec<u64>) -> bool {
        let mut first_fit = true;
        for (i, (at, bytes)) in copies.into_iter().enumerate() {
            if self.queue.len() >= self.capacity {
                self.stats.overflow_drops += 1;
                if i == 0 {
                    first_fit = false;
                }
                continue;
            }
            let order = self.next_order;
            self.next_order += 1;
            let pending = if self.receivers == 32 { u32::MAX } else { (1u32 << self.receivers) - 1 };
            self.queue.insert((at, order), InFlight { bytes, pending });
            deliveries.push(at);
        }
        first_fit
    }

    fn corrupt(&mut self, bytes: &mut [u8]) -> u64 {
        let ber = self.model.bit_error_rate;
        if ber <= 0.0 {
            return 0;
        }
        let total_bits = bytes.len() as u64 * 8;
        let mut flipped = 0;
        if ber >= 1.0 {
            for b in bytes.iter_mut() {
                *b = !*b;
            }
            return total_bits;
        }
        let skip = Geometric::new(ber).expect("bit_error_rate validated");
        let mut pos = 0u64;
        loop {
            pos = pos.saturating_add(skip.sample(&mut self.rng));
            if pos >= total_bits {
                break;
            }
            bytes[(pos / 8) as usize] ^= 1 << (pos % 8);
            flipped += 1;
            pos += 1;
        }
        flipped
    }

    fn delivery_time(&mut self, now_ns: u64) -> u64 {
        let DelayModel { fixed_ns, jitter_ns } = self.model.delay_dist;
        let delay = if jitter_ns == 0 {
            fixed_ns
        } else {
            let offset = self.rng.random_range(-(jitter_ns as i128)..=jitter_ns as i128);
            (fixed_ns as i128 + offset).max(0) as u64
        };
        now_ns.saturating_add(delay)
    }

    /// Mark the doorbell of `receiver` as rung.
    pub fn ring(&mut self, receiver: usize) {
        self.doorbell[receiver] = true;
    }

    pub fn doorbell_pending(&self, receiver: usize) -> bool {
        self.doorbell[receiver]
    }

    /// All copies due for `receiver` at `now_ns`, in delivery order.
    pub fn poll(&mut self, receiver: usize, now_ns: u64) -> Vec<Vec<u8>> {
        let bit = 1u32 << receiver;
        let mut out = Vec::new();
        let mut done = Vec::new();
        for (key, entry) in self.queue.range_mut(..=(now_ns, u64::MAX)) {
            if entry.pending & bit != 0 {
                entry.pending &= !bit;
                if entry.pending == 0 {
                    done.push(*key);
                    // Last reader takes ownership.
                    out.push(core::mem::take(&mut entry.bytes));
                } else {
                    out.push(entry.bytes.clone());
                }
            }
        }
        for key in done {
            self.queue.remove(&key);
            self.stats.delivered += 1;
        }
        if !self.queue.values().any(|e| e.pending & bit != 0) {
            self.doorbell[receiver] = false;
        }
        out
    }
}
