//! Receive-side verification and transient/persistent degradation policy.
//!
//! Each received buffer is classified in a fixed order: corruption (codec
//! result), replay/duplicate/reorder (serial sequence comparison), staleness
//! (sender timestamp against the freshness budget), then gap detection.
//!
//! | failure mode        | transient action | persistent action |
//! |---------------------|------------------|-------------------|
//! | corruption          | `Retry`          | `SafeStop`        |
//! | replay / dup / reord| `None`           | `Degrade`         |
//! | delay / stale       | `Degrade`        | `SafeStop`        |
//! | loss (see [`check_loss`]) | `Retry`    | `Override`        |

use alloc::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{CorruptReason, Decoded, SclFrame};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EndpointConfig {
    pub freshness_budget_ns: u64,
    pub persistent_corrupt_threshold: u32,
    /// Replay events counted within `failure_window_ns`.
    pub persistent_replay_threshold: u32,
    pub persistent_stale_threshold: u32,
    pub loss_timeout_ns: u64,
    pub failure_window_ns: u64,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        Self {
            freshness_budget_ns: 5_000_000,
            persistent_corrupt_threshold: 3,
            persistent_replay_threshold: 3,
            persistent_stale_threshold: 3,
            // three 1 ms heartbeat periods
            loss_timeout_ns: 3_000_000,
            failure_window_ns: 100_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EndpointConfigError {
    #[error("{0} must be at least 1")]
    ZeroThreshold(&'static str),
    #[error("{0} must be positive")]
    ZeroDuration(&'static str),
}

impl EndpointConfig {
    pub fn validate(&self) -> Result<(), EndpointConfigError> {
        for (name, v) in [
            ("persistent_corrupt_threshold", self.persistent_corrupt_threshold),
            ("persistent_replay_threshold", self.persistent_replay_threshold),
            ("persistent_stale_threshold", self.persistent_stale_threshold),
        ] {
            if v == 0 {
                return Err(EndpointConfigError::ZeroThreshold(name));
            }
        }
        for (name, v) in [
            ("freshness_budget_ns", self.freshness_budget_ns),
            ("loss_timeout_ns", self.loss_timeout_ns),
            ("failure_window_ns", self.failure_window_ns),
        ] {
            if v == 0 {
                return Err(EndpointConfigError::ZeroDuration(name));
            }
        }
        Ok(())
    }
}

/// Accumulated endpoint health, ordered by severity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DegradationState {
    #[default]
    Healthy,
    Warning,
    Degrade,
    SafeStopRequest,
    OverrideRequest,
}

/// Reaction attached to a verdict, ordered by severity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    #[default]
    None,
    Retry,
    Degrade,
    SafeStop,
    Override,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum VerdictKind {
    Accept(SclFrame),
    /// Intact and fresh, but `missing` frames were skipped before it.
    GapDetected { frame: SclFrame, missing: u32 },
    DropCorrupt(CorruptReason),
    DropReplay,
    DropStale,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReceiveVerdict {
    pub kind: VerdictKind,
    pub action: Action,
}

impl ReceiveVerdict {
    /// The frame to hand to the application, if the verdict delivers one.
    pub fn frame(&self) -> Option<&SclFrame> {
        match &self.kind {
            VerdictKind::Accept(f) | VerdictKind::GapDetected { frame: f, .. } => Some(f),
            _ => None,
        }
    }

    pub fn is_drop(&self) -> bool {
        self.frame().is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct EndpointState {
    pub last_accepted_seqno: Option<u32>,
    /// Time of the last delivered (accepted) frame; the loss timer runs from here.
    pub last_receipt_ns: u64,
    pub consecutive_crc_failures: u32,
    pub consecutive_stale: u32,
    /// Receipt times of replay events still inside the failure window.
    pub replay_events_in_window: VecDeque<u64>,
    /// Frames known missing from sequence gaps.
    pub lost_frames: u64,
    pub health: DegradationState,
}

impl EndpointState {
    /// A fresh endpoint whose loss timer starts at `now_ns`.
    pub fn new(now_ns: u64) -> Self {
        Self { last_receipt_ns: now_ns, ..Self::default() }
    }

    fn recompute_health(&mut self, cfg: &EndpointConfig) {
        let corrupt = severity(
            self.consecutive_crc_failures,
            cfg.persistent_corrupt_threshold,
            DegradationState::Warning,
            DegradationState::SafeStopRequest,
        );
        let stale = severity(
            self.consecutive_stale,
            cfg.persistent_stale_threshold,
            DegradationState::Degrade,
            DegradationState::SafeStopRequest,
        );
        let replay = severity(
            self.replay_events_in_window.len() as u32,
            cfg.persistent_replay_threshold,
            DegradationState::Warning,
            DegradationState::Degrade,
        );
        self.health = corrupt.max(stale).max(replay);
    }
}

fn severity(count: u32, threshold: u32, transient: DegradationState, persistent: DegradationState) -> DegradationState {
    if count == 0 {
        DegradationState::Healthy
    } else if count >= threshold {
        persistent
    } else {
        transient
    }
}

/// Serial-number difference `a - b` in the 2^31 half-range window.
pub fn serial_diff(a: u32, b: u32) -> i32 {
    a.wrapping_sub(b) as i32
}

/// `a` is serially newer than `b`.
pub fn serial_gt(a: u32, b: u32) -> bool {
    serial_diff(a, b) > 0
}

/// Classify one received buffer. A pure transition: the input state is not
/// modified and the successor is returned alongside the verdict.
pub fn classify(
    state: &EndpointState,
    cfg: &EndpointConfig,
    decoded: &Decoded,
    now_ns: u64,
) -> (ReceiveVerdict, EndpointState) {
    let mut next = state.clone();
    while let Some(&t) = next.replay_events_in_window.front() {
        if now_ns.saturating_sub(t) >= cfg.failure_window_ns {
            next.replay_events_in_window.pop_front();
        } else {
            break;
        }
    }

    let verdict = match decoded {
        Err(reason) => {
            next.consecutive_crc_failures = next.consecutive_crc_failures.saturating_add(1);
            let action = if next.consecutive_crc_failures >= cfg.persistent_corrupt_threshold {
                Action::SafeStop
            } else {
                Action::Retry
            };
            ReceiveVerdict { kind: VerdictKind::DropCorrupt(*reason), action }
        }
        Ok(frame) => classify_intact(&mut next, cfg, frame, now_ns),
    };
    next.recompute_health(cfg);
    (verdict, next)
}

fn classify_intact(next: &mut EndpointState, cfg: &EndpointConfig, frame: &SclFrame, now_ns: u64) -> ReceiveVerdict {
    let diff = next.last_accepted_seqno.map(|last| serial_diff(frame.seqno, last));
    if matches!(diff, Some(d) if d <= 0) {
        next.replay_events_in_window.push_back(now_ns);
        let action = if next.replay_events_in_window.len() as u32 >= cfg.persistent_replay_threshold {
            Action::Degrade
        } else {
            Action::None
        };
        return ReceiveVerdict { kind: VerdictKind::DropReplay, action };
    }

    if now_ns.saturating_sub(frame.timestamp_ns) > cfg.freshness_budget_ns {
        next.consecutive_stale = next.consecutive_stale.saturating_add(1);
        let action = if next.consecutive_stale >= cfg.persistent_stale_threshold {
            Action::SafeStop
        } else {
            Action::Degrade
        };
        return ReceiveVerdict { kind: VerdictKind::DropStale, action };
    }

    // Intact and fresh: this disproves both corruption and staleness.
    next.consecutive_crc_failures = 0;
    next.consecutive_stale = 0;
    next.last_accepted_seqno = Some(frame.seqno);
    next.last_receipt_ns = now_ns;
    let kind = match diff {
        Some(d) if d > 1 => {
            let missing = (d - 1) as u32;
            next.lost_frames += u64::from(missing);
            VerdictKind::GapDetected { frame: frame.clone(), missing }
        }
        _ => VerdictKind::Accept(frame.clone()),
    };
    ReceiveVerdict { kind, action: Action::None }
}

/// Loss supervision: silence beyond one timeout asks for a retry, beyond
/// twice the timeout asks the Safe IO cell to override.
pub fn check_loss(state: &EndpointState, cfg: &EndpointConfig, now_ns: u64) -> Action {
    let silence = now_ns.saturating_sub(state.last_receipt_ns);
    if silence <= cfg.loss_timeout_ns {
        Action::None
    } else if silence <= cfg.loss_timeout_ns.saturating_mul(2) {
        Action::Retry
    } else {
        Action::Override
    }
}

/// Per-(channel, direction) sender sequence counter.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct SeqnoSender {
    next: u32,
}

impl SeqnoSender {
    pub fn new() -> Self {
        Self::default()
    }

    /// Start from an arbitrary value, e.g. to exercise wrap-around.
    pub fn starting_at(next: u32) -> Self {
        Self { next }
    }

    pub fn next_send_seqno(&mut self) -> u32 {
        let s = self.next;
        self.next = self.next.wrapping_add(1);
        s
    }
}
