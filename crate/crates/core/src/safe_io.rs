//! Safe IO supervisor: heartbeat watchdog, command envelopes, and the
//! NORMAL / DEGRADED / SAFE_STOP state machine driving the override lines.
//!
//! [`step`] consumes only [`SafetyEvent`]s and configuration. SAFE_STOP is
//! latched: the only way out is [`SafetyEvent::OperatorAck`].

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisEnvelope {
    pub name: String,
    pub position_min: f64,
    pub position_max: f64,
    pub velocity_max: f64,
    pub torque_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SafeIoConfig {
    pub heartbeat_period_ns: u64,
    pub heartbeat_timeout_multiple: u32,
    pub envelopes: Vec<AxisEnvelope>,
    /// Applied to velocity and torque limits while DEGRADED.
    pub degraded_scale: f64,
    /// Healthy time required before DEGRADED recovers on its own.
    pub recovery_window_ns: u64,
}

impl Default for SafeIoConfig {
    fn default() -> Self {
        Self {
            heartbeat_period_ns: 1_000_000,
            heartbeat_timeout_multiple: 3,
            envelopes: Vec::new(),
            degraded_scale: 0.5,
            recovery_window_ns: 1_000_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SafeIoConfigError {
    #[error("heartbeat_timeout_multiple must be at least 1")]
    ZeroMultiple,
    #[error("heartbeat_period_ns must be positive")]
    ZeroPeriod,
    #[error("degraded_scale must be in (0, 1]")]
    BadScale,
    #[error("envelope for axis {0:?} needs position_min < position_max and positive limits")]
    BadEnvelope(String),
    #[error("more than 255 axes")]
    TooManyAxes,
}

impl SafeIoConfig {
    pub fn validate(&self) -> Result<(), SafeIoConfigError> {
        if self.heartbeat_timeout_multiple == 0 {
            return Err(SafeIoConfigError::ZeroMultiple);
        }
        if self.heartbeat_period_ns == 0 {
            return Err(SafeIoConfigError::ZeroPeriod);
        }
        if !(self.degraded_scale > 0.0 && self.degraded_scale <= 1.0) {
            return Err(SafeIoConfigError::BadScale);
        }
        if self.envelopes.len() > 255 {
            return Err(SafeIoConfigError::TooManyAxes);
        }
        for e in &self.envelopes {
            let ok = e.position_min < e.position_max && e.velocity_max > 0.0 && e.torque_max > 0.0;
            if !ok {
                return Err(SafeIoConfigError::BadEnvelope(e.name.clone()));
            }
        }
        Ok(())
    }

    pub fn heartbeat_timeout_ns(&self) -> u64 {
        self.heartbeat_period_ns.saturating_mul(u64::from(self.heartbeat_timeout_multiple))
    }

    pub fn axis_index(&self, name: &str) -> Option<u8> {
        self.envelopes.iter().position(|e| e.name == name).map(|i| i as u8)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Mode {
    Normal,
    Degraded,
    SafeStop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransitionCause {
    Init,
    HeartbeatTimeout,
    EnvelopeViolation,
    SclDegrade,
    SclSafeStop,
    SclOverride,
    OperatorAck,
    OperatorEstop,
    Recovered,
}

impl TransitionCause {
    fn is_physical_hazard(self) -> bool {
        matches!(self, Self::EnvelopeViolation | Self::OperatorEstop)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SafeIoState {
    pub mode: Mode,
    pub cause: TransitionCause,
    pub entered_at_ns: u64,
    pub ack_required: bool,
    pub last_heartbeat_ns: u64,
    pub last_anomaly_ns: u64,
}

impl SafeIoState {
    pub fn new(now_ns: u64) -> Self {
        Self {
            mode: Mode::Normal,
            cause: TransitionCause::Init,
            entered_at_ns: now_ns,
            ack_required: false,
            last_heartbeat_ns: now_ns,
            last_anomaly_ns: now_ns,
        }
    }

    pub fn lines(&self) -> OverrideLines {
        OverrideLines::for_state(self.mode, self.cause)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct OverrideLines {
    pub motor_enable: bool,
    pub brake_engaged: bool,
    pub estop_asserted: bool,
}

impl OverrideLines {
    pub fn for_state(mode: Mode, cause: TransitionCause) -> Self {
        match mode {
            Mode::Normal | Mode::Degraded => Self { motor_enable: true, brake_engaged: false, estop_asserted: false },
            Mode::SafeStop => Self { motor_enable: false, brake_engaged: true, estop_asserted: cause.is_physical_hazard() },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    Position,
    Velocity,
    Torque,
}

/// Escalations an SCL endpoint can hand to the supervisor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SclEscalation {
    Degrade,
    SafeStop,
    Override,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum SafetyEvent {
    HeartbeatSeen,
    HeartbeatTimeout,
    EnvelopeViolation { axis: u8, quantity: Quantity, value: f64 },
    SclAction { action: SclEscalation },
    OperatorAck,
    OperatorEstop,
}

fn enter(state: &SafeIoState, mode: Mode, cause: TransitionCause, now_ns: u64) -> SafeIoState {
    SafeIoState {
        mode,
        cause,
        entered_at_ns: now_ns,
        ack_required: mode == Mode::SafeStop,
        ..*state
    }
}

pub fn step(state: &SafeIoState, cfg: &SafeIoConfig, event: &SafetyEvent, now_ns: u64) -> (SafeIoState, OverrideLines) {
    let stop_cause = match *event {
        SafetyEvent::HeartbeatTimeout => Some(TransitionCause::HeartbeatTimeout),
        SafetyEvent::EnvelopeViolation { .. } => Some(TransitionCause::EnvelopeViolation),
        SafetyEvent::SclAction { action: SclEscalation::SafeStop } => Some(TransitionCause::SclSafeStop),
        SafetyEvent::SclAction { action: SclEscalation::Override } => Some(TransitionCause::SclOverride),
        SafetyEvent::OperatorEstop => Some(TransitionCause::OperatorEstop),
        _ => None,
    };

    let next = match (state.mode, event) {
        (Mode::SafeStop, SafetyEvent::OperatorAck) => enter(state, Mode::Normal, TransitionCause::OperatorAck, now_ns),
        (Mode::SafeStop, SafetyEvent::HeartbeatSeen) => SafeIoState { last_heartbeat_ns: now_ns, ..*state },
        (Mode::SafeStop, _) => match stop_cause {
            // Latched; a physical hazard upgrades the cause so estop asserts.
            Some(c) if c.is_physical_hazard() && !state.cause.is_physical_hazard() => SafeIoState { cause: c, ..*state },
            _ => *state,
        },
        (_, _) if stop_cause.is_some() => enter(state, Mode::SafeStop, stop_cause.unwrap(), now_ns),
        (Mode::Normal, SafetyEvent::SclAction { action: SclEscalation::Degrade }) => SafeIoState {
            last_anomaly_ns: now_ns,
            ..enter(state, Mode::Degraded, TransitionCause::SclDegrade, now_ns)
        },
        (Mode::Degraded, SafetyEvent::SclAction { action: SclEscalation::Degrade }) => {
            SafeIoState { last_anomaly_ns: now_ns, ..*state }
        }
        (Mode::Degraded, SafetyEvent::HeartbeatSeen)
            if now_ns.saturating_sub(state.last_anomaly_ns) >= cfg.recovery_window_ns =>
        {
            SafeIoState { last_heartbeat_ns: now_ns, ..enter(state, Mode::Normal, TransitionCause::Recovered, now_ns) }
        }
        (_, SafetyEvent::HeartbeatSeen) => SafeIoState { last_heartbeat_ns: now_ns, ..*state },
        // OperatorAck outside SAFE_STOP has nothing to acknowledge.
        _ => *state,
    };
    let lines = next.lines();
    (next, lines)
}

/// Emits `HeartbeatTimeout` once silence exceeds period x multiple.
pub fn supervise_heartbeat(state: &SafeIoState, cfg: &SafeIoConfig, now_ns: u64) -> Option<SafetyEvent> {
    (now_ns.saturating_sub(state.last_heartbeat_ns) > cfg.heartbeat_timeout_ns()).then_some(SafetyEvent::HeartbeatTimeout)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisCommand {
    pub axis: u8,
    pub position: f64,
    pub velocity: f64,
    pub torque: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("command names unknown axis {0}")]
pub struct UnknownAxis(pub u8);

/// Result of an envelope check: `None` when every axis is within limits,
/// otherwise the first violating (axis, quantity) as a `SafetyEvent`.
pub fn check_envelope(cfg: &SafeIoConfig, command: &[AxisCommand], mode: Mode) -> Result<Option<SafetyEvent>, UnknownAxis> {
    let scale = if mode == Mode::Degraded { cfg.degraded_scale } else { 1.0 };
    for c in command {
        let env = cfg.envelopes.get(c.axis as usize).ok_or(UnknownAxis(c.axis))?;
        let violation = |quantity, value| Some(SafetyEvent::EnvelopeViolation { axis: c.axis, quantity, value });
        // Negated comparisons so NaN always violates.
        if !(env.position_min <= c.position && c.position <= env.position_max) {
            return Ok(violation(Quantity::Position, c.position));
        }
        if !(c.velocity.abs() <= env.velocity_max * scale) {
            return Ok(violation(Quantity::Velocity, c.velocity));
        }
        if !(c.torque.abs() <= env.torque_max * scale) {
            return Ok(violation(Quantity::Torque, c.torque));
        }
    }
    Ok(None)
}

const AXIS_COMMAND_LEN: usize = 25;

/// `Command` payload: `count u8 | count x { axis u8 | position f64 | velocity f64 | torque f64 }`.
pub fn encode_command(command: &[AxisCommand]) -> Vec<u8> {
    let mut out = Vec::with_capacity(1 + command.len() * AXIS_COMMAND_LEN);
    out.push(command.len() as u8);
    for c in command {
        out.push(c.axis);
        out.extend_from_slice(&c.position.to_le_bytes());
        out.extend_from_slice(&c.velocity.to_le_bytes());
        out.extend_from_slice(&c.torque.to_le_bytes());
    }
    out
}

pub fn decode_command(bytes: &[u8]) -> Option<Vec<AxisCommand>> {
    let (&count, rest) = bytes.split_first()?;
    if rest.len() != count as usize * AXIS_COMMAND_LEN {
        return None;
    }
    let f = |b: &[u8]| f64::from_le_bytes(b.try_into().unwrap());
    Some(
        rest.chunks_exact(AXIS_COMMAND_LEN)
            .map(|c| AxisCommand { axis: c[0], position: f(&c[1..9]), velocity: f(&c[9..17]), torque: f(&c[17..25]) })
            .collect(),
    )
}
