//! Deterministic discrete-event harness wiring the Non-RT, RT and Safe IO
//! cells over simulated black channels.
//!
//! Three links connect the cells:
//!
//! - `pss`: Non-RT to RT parameter updates; the Safe IO cell taps it as a
//!   second receiver.
//! - `pss_ack`: RT to Non-RT acknowledgments.
//! - `rt_monitor`: RT to Safe IO heartbeats and envelope-checked commands.
//!
//! Events are ordered by time, then cell priority (harness, Safe IO, RT,
//! Non-RT), then insertion order. Nothing reads a wall clock and every random
//! draw comes from a stream split off the scenario seed, so a scenario and
//! seed fully determine the log, the trace and the final state.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{Channel, ChannelError, ChannelFaultModel, ChannelStats, DelayModel, SendOutcome, DEFAULT_CAPACITY};
use crate::codec::{decode, encode, ChannelId, CorruptReason, MsgType, SclFrame};
use crate::endpoint::{check_loss, classify, Action, DegradationState, EndpointConfig, EndpointState, SeqnoSender, VerdictKind};
use crate::jitter::{TraceEmitter, TraceRecord};
use crate::noise::TimingNoise;
use crate::pss::{
    AckPayload, Criticality, ParamDescriptor, ParamRegistry, ParamTransaction, ParamValue, RtParamStore, SyncConfig,
    SyncManager, TxnState, UpdateError, ValueType,
};
use crate::safe_io::{
    check_envelope, decode_command, encode_command, step, supervise_heartbeat, AxisCommand, Mode, OverrideLines,
    Quantity, SafeIoConfig, SafeIoState, SafetyEvent, SclEscalation, TransitionCause,
};

pub const RT_TICK_NS: u64 = 1_000_000;
pub const NON_RT_TICK_NS: u64 = 10_000_000;
pub const SAFE_IO_TICK_NS: u64 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    Pss,
    PssAck,
    RtMonitor,
}

impl Link {
    pub const ALL: [Link; 3] = [Link::Pss, Link::PssAck, Link::RtMonitor];

    fn index(self) -> usize {
        self as usize
    }

    fn receivers(self) -> usize {
        match self {
            Link::Pss => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndpointName {
    /// RT cell receiving on `pss`.
    RtPss,
    /// Non-RT cell receiving on `pss_ack`.
    NonRtAck,
    /// Safe IO cell receiving on `rt_monitor`.
    SafeIoMonitor,
    /// Safe IO cell tapping `pss`.
    SafeIoPss,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cell {
    Harness,
    SafeIo,
    Rt,
    NonRt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSpec {
    pub link: Link,
    #[serde(default)]
    pub faults: ChannelFaultModel,
    #[serde(default = "default_capacity")]
    pub capacity: usize,
}

fn default_capacity() -> usize {
    DEFAULT_CAPACITY
}

/// Parameter declaration as written in a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamDecl {
    pub name: String,
    #[serde(rename = "type")]
    pub value_type: ValueType,
    #[serde(default)]
    pub min: Option<ParamValue>,
    #[serde(default)]
    pub max: Option<ParamValue>,
    pub default: ParamValue,
    #[serde(default = "default_criticality")]
    pub criticality: Criticality,
}

fn default_criticality() -> Criticality {
    Criticality::Low
}

impl ParamDecl {
    pub fn to_descriptor(&self) -> Result<ParamDescriptor, String> {
        let coerce = |v: ParamValue, what: &str| {
            v.coerce(self.value_type).ok_or_else(|| format!("{what} does not match type {:?}", self.value_type))
        };
        let default = coerce(self.default, "default")?;
        let (min, max) = match self.value_type {
            ValueType::Bool => (ParamValue::Bool(false), ParamValue::Bool(true)),
            _ => (
                coerce(self.min.ok_or("min is required")?, "min")?,
                coerce(self.max.ok_or("max is required")?, "max")?,
            ),
        };
        Ok(ParamDescriptor { name: self.name.clone(), value_type: self.value_type, min, max, default, criticality: self.criticality })
    }
}

/// Partial fault-model update; absent fields keep their current value.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FaultPatch {
    pub bit_error_rate: Option<f64>,
    pub loss_prob: Option<f64>,
    pub dup_prob: Option<f64>,
    pub delay_dist: Option<DelayModel>,
    pub reorder_prob: Option<f64>,
}

impl FaultPatch {
    pub fn apply(&self, base: &ChannelFaultModel) -> ChannelFaultModel {
        ChannelFaultModel {
            bit_error_rate: self.bit_error_rate.unwrap_or(base.bit_error_rate),
            loss_prob: self.loss_prob.unwrap_or(base.loss_prob),
            dup_prob: self.dup_prob.unwrap_or(base.dup_prob),
            delay_dist: self.delay_dist.unwrap_or(base.delay_dist),
            reorder_prob: self.reorder_prob.unwrap_or(base.reorder_prob),
            seed: base.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedValue {
    pub name: String,
    pub value: ParamValue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScriptAction {
    ParamUpdate { name: String, value: ParamValue },
    ParamTransaction { updates: Vec<NamedValue> },
    SilenceHeartbeats { duration_ns: u64 },
    InjectEnvelopeCommand { axis: String, position: f64, velocity: f64, torque: f64 },
    SetFaultModel { link: Link, fields: FaultPatch },
    OperatorAck,
    OperatorEstop,
}

impl ScriptAction {
    fn cell(&self) -> Cell {
        match self {
            Self::ParamUpdate { .. } | Self::ParamTransaction { .. } => Cell::NonRt,
            Self::SilenceHeartbeats { .. } | Self::InjectEnvelopeCommand { .. } => Cell::Rt,
            Self::OperatorAck | Self::OperatorEstop => Cell::SafeIo,
            Self::SetFaultModel { .. } => Cell::Harness,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptEntry {
    pub at_ns: u64,
    pub action: ScriptAction,
}

/// Either a named profile (`none`, `isolated`, `contended`) or explicit parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NoiseSpec {
    Profile(String),
    Custom(TimingNoise),
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self::Profile("none".into())
    }
}

impl NoiseSpec {
    pub fn resolve(&self) -> Option<TimingNoise> {
        match self {
            Self::Profile(name) => TimingNoise::profile(name),
            Self::Custom(n) => Some(*n),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub duration_ns: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub channels: Vec<ChannelSpec>,
    #[serde(default)]
    pub endpoint_cfgs: BTreeMap<EndpointName, EndpointConfig>,
    #[serde(default)]
    pub safe_io_cfg: SafeIoConfig,
    #[serde(default)]
    pub sync_cfg: SyncConfig,
    #[serde(default)]
    pub param_declarations: Vec<ParamDecl>,
    #[serde(default)]
    pub timing_noise: NoiseSpec,
    #[serde(default)]
    pub script: Vec<ScriptEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("invalid scenario at {path}: {message}")]
    InvalidScenario { path: String, message: String },
}

fn invalid(path: impl Into<String>, message: impl ToString) -> SimError {
    SimError::InvalidScenario { path: path.into(), message: message.to_string() }
}

impl Scenario {
    /// A scenario with identity channels and default configuration.
    pub fn new(duration_ns: u64) -> Self {
        Self {
            duration_ns,
            seed: 0,
            channels: Vec::new(),
            endpoint_cfgs: BTreeMap::new(),
            safe_io_cfg: SafeIoConfig::default(),
            sync_cfg: SyncConfig::default(),
            param_declarations: Vec::new(),
            timing_noise: NoiseSpec::default(),
            script: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.duration_ns == 0 {
            return Err(invalid("duration_ns", "must be positive"));
        }
        let mut seen = BTreeSet::new();
        for (i, c) in self.channels.iter().enumerate() {
            if !seen.insert(c.link) {
                return Err(invalid(format!("channels[{i}].link"), "link configured twice"));
            }
            c.faults.validate().map_err(|e| invalid(format!("channels[{i}].faults"), e))?;
            if c.capacity == 0 {
                return Err(invalid(format!("channels[{i}].capacity"), "must be positive"));
            }
        }
        for (name, cfg) in &self.endpoint_cfgs {
            cfg.validate().map_err(|e| invalid(format!("endpoint_cfgs.{name:?}"), e))?;
        }
        self.safe_io_cfg.validate().map_err(|e| invalid("safe_io_cfg", e))?;
        if self.sync_cfg.retry_limit == 0 {
            return Err(invalid("sync_cfg.retry_limit", "must be at least 1"));
        }
        self.registry()?;
        let noise = self.timing_noise.resolve().ok_or_else(|| invalid("timing_noise", "unknown profile"))?;
        noise.validate().map_err(|e| invalid("timing_noise", e))?;

        let mut prev = 0;
        for (i, e) in self.script.iter().enumerate() {
            let path = format!("script[{i}]");
            if e.at_ns < prev {
                return Err(invalid(format!("{path}.at_ns"), "script must be sorted by at_ns"));
            }
            if e.at_ns > self.duration_ns {
                return Err(invalid(format!("{path}.at_ns"), "beyond duration_ns"));
            }
            prev = e.at_ns;
            match &e.action {
                ScriptAction::InjectEnvelopeCommand { axis, .. } if self.safe_io_cfg.axis_index(axis).is_none() => {
                    return Err(invalid(format!("{path}.action.axis"), format!("unknown axis {axis:?}")));
                }
                ScriptAction::SetFaultModel { fields, .. } => {
                    fields.apply(&ChannelFaultModel::default()).validate().map_err(|e| invalid(format!("{path}.action.fields"), e))?;
                }
                _ => {}
            }
        }
        Ok(())
    }

    fn registry(&self) -> Result<ParamRegistry, SimError> {
        let mut r = ParamRegistry::new();
        for (i, d) in self.param_declarations.iter().enumerate() {
            let desc = d.to_descriptor().map_err(|m| invalid(format!("param_declarations[{i}]"), m))?;
            r.declare(desc).map_err(|e| invalid(format!("param_declarations[{i}]"), e))?;
        }
        r.seal();
        Ok(r)
    }

    fn endpoint_cfg(&self, name: EndpointName) -> EndpointConfig {
        self.endpoint_cfgs.get(&name).cloned().unwrap_or_default()
    }
}

/// Short label for a receive verdict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictLabel {
    Accept,
    GapDetected,
    DropCorrupt,
    DropReplay,
    DropStale,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogDetail {
    Transition { from: Mode, to: Mode, cause: TransitionCause, lines: OverrideLines },
    Override { cause: TransitionCause, lines: OverrideLines },
    Verdict {
        endpoint: EndpointName,
        verdict: VerdictLabel,
        #[serde(skip_serializing_if = "Option::is_none")]
        reason: Option<CorruptReason>,
        #[serde(skip_serializing_if = "Option::is_none")]
        missing: Option<u32>,
        action: Action,
    },
    LossAction { endpoint: EndpointName, action: Action },
    EnvelopeViolation { axis: u8, quantity: Quantity, value: f64 },
    UnknownAxis { axis: u8 },
    ParamRequest { txn_id: u32, names: Vec<String>, criticality: Criticality },
    ParamRejected { error: String },
    ParamApply { outcome: AckPayload },
    TxnUpdate { txn_id: u32, state: TxnState },
    StaleAck { txn_id: u32 },
    ChannelFull { link: Link },
    Script { action: ScriptAction },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogEntry {
    pub t_ns: u64,
    pub source: Cell,
    #[serde(flatten)]
    pub detail: LogDetail,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct DropCounts {
    pub corrupt: u64,
    pub replay: u64,
    pub stale: u64,
}

impl DropCounts {
    pub fn total(&self) -> u64 {
        self.corrupt + self.replay + self.stale
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EndpointSummary {
    pub health: DegradationState,
    pub last_accepted_seqno: Option<u32>,
    pub accepted: u64,
    pub lost_frames: u64,
    pub drops: DropCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChannelSummary {
    #[serde(flatten)]
    pub stats: ChannelStats,
    pub in_flight: u64,
}

impl ChannelSummary {
    /// Every copy put on the channel is delivered, lost, dropped, or still in flight.
    pub fn conserved(&self) -> bool {
        let s = &self.stats;
        s.sent + s.duplicated == s.delivered + s.injected_losses + s.overflow_drops + self.in_flight
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SafeIoSummary {
    #[serde(flatten)]
    pub state: SafeIoState,
    pub lines: OverrideLines,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FinalState {
    pub t_ns: u64,
    pub safe_io: SafeIoSummary,
    pub params: BTreeMap<String, ParamValue>,
    pub param_generation: u64,
    pub transactions: Vec<ParamTransaction>,
    pub stale_acks: u64,
    pub endpoints: BTreeMap<EndpointName, EndpointSummary>,
    pub channels: BTreeMap<Link, ChannelSummary>,
    pub trace_records: u64,
}

impl FinalState {
    pub fn mode(&self) -> Mode {
        self.safe_io.state.mode
    }

    pub fn total_drops(&self) -> u64 {
        self.endpoints.values().map(|e| e.drops.total()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimOutput {
    pub log: Vec<LogEntry>,
    pub final_state: FinalState,
    pub trace: Vec<TraceRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum EventKind {
    Script(usize),
    Tick(Cell),
    Doorbell { link: Link, receiver: usize },
}

struct Endpoint {
    cfg: EndpointConfig,
    state: EndpointState,
    accepted: u64,
    drops: DropCounts,
    last_loss_action: Action,
}

impl Endpoint {
    fn new(cfg: EndpointConfig) -> Self {
        Self { cfg, state: EndpointState::new(0), accepted: 0, drops: DropCounts::default(), last_loss_action: Action::None }
    }

    fn summary(&self) -> EndpointSummary {
        EndpointSummary {
            health: self.state.health,
            last_accepted_seqno: self.state.last_accepted_seqno,
            accepted: self.accepted,
            lost_frames: self.state.lost_frames,
            drops: self.drops,
        }
    }
}

struct Sim<'a> {
    scenario: &'a Scenario,
    now: u64,
    queue: BTreeMap<(u64, Cell, u64), EventKind>,
    next_seq: u64,
    doorbells: BTreeSet<(u64, Link, usize)>,
    links: Vec<Channel>,
    log: Vec<LogEntry>,

    sync: SyncManager,
    ack_ep: Endpoint,

    store: RtParamStore,
    rt_pss_ep: Endpoint,
    rt_ack_sender: SeqnoSender,
    rt_mon_sender: SeqnoSender,
    rt_tick: u64,
    silenced_until: u64,
    pending_commands: Vec<Vec<AxisCommand>>,
    trace: TraceEmitter,
    noise: TimingNoise,
    noise_rng: ChaCha8Rng,

    safe_io: SafeIoState,
    mon_ep: Endpoint,
    tap_ep: Endpoint,
}

pub fn run(scenario: &Scenario) -> Result<SimOutput, SimError> {
    scenario.validate()?;
    let mut sim = Sim::new(scenario)?;
    sim.run();
    Ok(sim.finish())
}

fn heartbeat_payload(tick: u64, generation: u64) -> Vec<u8> {
    let mut p = Vec::with_capacity(16);
    p.extend_from_slice(&tick.to_le_bytes());
    p.extend_from_slice(&generation.to_le_bytes());
    p
}

impl<'a> Sim<'a> {
    fn new(scenario: &'a Scenario) -> Result<Self, SimError> {
        let registry = scenario.registry()?;
        let links = Link::ALL
            .iter()
            .map(|&link| {
                let spec = scenario.channels.iter().find(|c| c.link == link);
                let mut model = spec.map(|c| c.faults.clone()).unwrap_or_default();
                model.seed ^= scenario.seed;
                let capacity = spec.map_or(DEFAULT_CAPACITY, |c| c.capacity);
                Channel::new(model, capacity, link.receivers()).with_stream(link.index() as u64 + 1)
            })
            .collect();
        let mut noise_rng = ChaCha8Rng::seed_from_u64(scenario.seed);
        noise_rng.set_stream(100);
        let mut sim = Self {
            scenario,
            now: 0,
            queue: BTreeMap::new(),
            next_seq: 0,
            doorbells: BTreeSet::new(),
            links,
            log: Vec::new(),
            sync: SyncManager::new(registry.clone(), scenario.sync_cfg),
            ack_ep: Endpoint::new(scenario.endpoint_cfg(EndpointName::NonRtAck)),
            store: RtParamStore::new(registry),
            rt_pss_ep: Endpoint::new(scenario.endpoint_cfg(EndpointName::RtPss)),
            rt_ack_sender: SeqnoSender::new(),
            rt_mon_sender: SeqnoSender::new(),
            rt_tick: 0,
            silenced_until: 0,
            pending_commands: Vec::new(),
            trace: TraceEmitter::new(),
            noise: scenario.timing_noise.resolve().unwrap_or_default(),
            noise_rng,
            safe_io: SafeIoState::new(0),
            mon_ep: Endpoint::new(scenario.endpoint_cfg(EndpointName::SafeIoMonitor)),
            tap_ep: Endpoint::new(scenario.endpoint_cfg(EndpointName::SafeIoPss)),
        };
        for (i, e) in scenario.script.iter().enumerate() {
            sim.schedule(e.at_ns, e.action.cell(), EventKind::Script(i));
        }
        for cell in [Cell::SafeIo, Cell::Rt, Cell::NonRt] {
            sim.schedule(0, cell, EventKind::Tick(cell));
        }
        Ok(sim)
    }

    fn schedule(&mut self, t: u64, cell: Cell, kind: EventKind) {
        self.queue.insert((t, cell, self.next_seq), kind);
        self.next_seq += 1;
    }

    fn log(&mut self, source: Cell, detail: LogDetail) {
        self.log.push(LogEntry { t_ns: self.now, source, detail });
    }

    fn run(&mut self) {
        while let Some(((t, cell, _), kind)) = self.queue.pop_first() {
            if t > self.scenario.duration_ns {
                break;
            }
            self.now = t;
            match kind {
                EventKind::Script(i) => self.on_script(i),
                EventKind::Tick(_) => self.on_tick(cell),
                EventKind::Doorbell { link, receiver } => {
                    self.doorbells.remove(&(t, link, receiver));
                    self.on_doorbell(link, receiver);
                }
            }
        }
        self.now = self.scenario.duration_ns;
    }

    fn send(&mut self, source: Cell, link: Link, frame: &SclFrame) {
        let raw = encode(frame).expect("cells only build bounded payloads");
        match self.links[link.index()].send(&raw, self.now) {
            Ok(SendOutcome::Queued { deliveries }) => {
                for at in deliveries {
                    for receiver in 0..link.receivers() {
                        if self.doorbells.insert((at, link, receiver)) {
                            let cell = receiver_cell(link, receiver);
                            self.schedule(at, cell, EventKind::Doorbell { link, receiver });
                        }
                    }
                }
            }
            Ok(SendOutcome::Held | SendOutcome::Lost) => {}
            Err(ChannelError::ChannelFull) => self.log(source, LogDetail::ChannelFull { link }),
        }
    }

    fn on_script(&mut self, i: usize) {
        let action = self.scenario.script[i].action.clone();
        let cell = action.cell();
        self.log(cell, LogDetail::Script { action: action.clone() });
        match action {
            ScriptAction::ParamUpdate { name, value } => self.request(&[(name, value)]),
            ScriptAction::ParamTransaction { updates } => {
                let pairs: Vec<_> = updates.into_iter().map(|u| (u.name, u.value)).collect();
                self.request(&pairs);
            }
            ScriptAction::SilenceHeartbeats { duration_ns } => {
                self.silenced_until = self.silenced_until.max(self.now.saturating_add(duration_ns));
            }
            ScriptAction::InjectEnvelopeCommand { axis, position, velocity, torque } => {
                let axis = self.scenario.safe_io_cfg.axis_index(&axis).expect("validated axis");
                self.pending_commands.push(alloc::vec![AxisCommand { axis, position, velocity, torque }]);
            }
            ScriptAction::SetFaultModel { link, fields } => {
                let ch = &mut self.links[link.index()];
                let model = fields.apply(ch.model());
                ch.set_model(model);
            }
            ScriptAction::OperatorAck => self.safety_event(SafetyEvent::OperatorAck),
            ScriptAction::OperatorEstop => self.safety_event(SafetyEvent::OperatorEstop),
        }
    }

    fn request(&mut self, updates: &[(String, ParamValue)]) {
        let refs: Vec<(&str, ParamValue)> = updates.iter().map(|(n, v)| (n.as_str(), *v)).collect();
        match self.sync.request_transaction(&refs, self.now) {
            Ok(txn_id) => {
                let criticality = updates
                    .iter()
                    .filter_map(|(n, _)| self.sync.registry().get(n).map(|d| d.criticality))
                    .max()
                    .unwrap_or(Criticality::Low);
                let names = updates.iter().map(|(n, _)| n.clone()).collect();
                self.log(Cell::NonRt, LogDetail::ParamRequest { txn_id, names, criticality });
                self.flush_outbox();
            }
            Err(e) => self.log(Cell::NonRt, LogDetail::ParamRejected { error: update_error_label(&e) }),
        }
    }

    fn flush_outbox(&mut self) {
        for frame in self.sync.take_outgoing() {
            self.send(Cell::NonRt, Link::Pss, &frame);
        }
    }

    fn on_tick(&mut self, cell: Cell) {
        let period = match cell {
            Cell::SafeIo => {
                self.safe_io_tick();
                SAFE_IO_TICK_NS
            }
            Cell::Rt => {
                self.rt_tick();
                RT_TICK_NS
            }
            Cell::NonRt => {
                self.non_rt_tick();
                NON_RT_TICK_NS
            }
            Cell::Harness => return,
        };
        let next = self.now + period;
        if next < self.scenario.duration_ns {
            self.schedule(next, cell, EventKind::Tick(cell));
        }
    }

    fn rt_tick(&mut self) {
        let offsets = self.noise.perturb(&mut self.noise_rng);
        self.trace.emit_cycle(self.now, RT_TICK_NS as f64, offsets);
        if self.now >= self.silenced_until {
            let seqno = self.rt_mon_sender.next_send_seqno();
            let payload = heartbeat_payload(self.rt_tick, self.store.generation());
            let hb = SclFrame::new(ChannelId::RtMonitor, MsgType::Heartbeat, seqno, self.now, payload);
            self.send(Cell::Rt, Link::RtMonitor, &hb);
        }
        for cmd in core::mem::take(&mut self.pending_commands) {
            let seqno = self.rt_mon_sender.next_send_seqno();
            let frame = SclFrame::new(ChannelId::RtMonitor, MsgType::Command, seqno, self.now, encode_command(&cmd));
            self.send(Cell::Rt, Link::RtMonitor, &frame);
        }
        self.rt_tick += 1;
    }

    fn non_rt_tick(&mut self) {
        for effect in self.sync.poll(self.now) {
            self.log(Cell::NonRt, LogDetail::TxnUpdate { txn_id: effect.txn_id, state: effect.state });
        }
        self.flush_outbox();
    }

    fn safe_io_tick(&mut self) {
        if let Some(ev) = supervise_heartbeat(&self.safe_io, &self.scenario.safe_io_cfg, self.now) {
            self.safety_event(ev);
        }
        let action = check_loss(&self.mon_ep.state, &self.mon_ep.cfg, self.now);
        if action != self.mon_ep.last_loss_action {
            self.mon_ep.last_loss_action = action;
            self.log(Cell::SafeIo, LogDetail::LossAction { endpoint: EndpointName::SafeIoMonitor, action });
        }
        if action == Action::Override {
            self.safety_event(SafetyEvent::SclAction { action: SclEscalation::Override });
        }
    }

    fn safety_event(&mut self, event: SafetyEvent) {
        let before = self.safe_io;
        let (after, lines) = step(&before, &self.scenario.safe_io_cfg, &event, self.now);
        self.safe_io = after;
        if (before.mode, before.cause) != (after.mode, after.cause) {
            self.log(Cell::SafeIo, LogDetail::Transition { from: before.mode, to: after.mode, cause: after.cause, lines });
            let before_lines = before.lines();
            if lines != before_lines && !lines.motor_enable {
                self.log(Cell::SafeIo, LogDetail::Override { cause: after.cause, lines });
            }
        }
    }

    fn on_doorbell(&mut self, link: Link, receiver: usize) {
        let ch = &mut self.links[link.index()];
        ch.ring(receiver);
        let frames = ch.poll(receiver, self.now);
        for raw in frames {
            let decoded = decode(&raw);
            match (link, receiver) {
                (Link::Pss, 0) => self.rt_receive_pss(&decoded),
                (Link::Pss, _) => self.safe_io_receive(EndpointName::SafeIoPss, &decoded),
                (Link::PssAck, _) => self.non_rt_receive_ack(&decoded),
                (Link::RtMonitor, _) => self.safe_io_receive(EndpointName::SafeIoMonitor, &decoded),
            }
        }
    }

    fn classify_at(&mut self, name: EndpointName, decoded: &crate::codec::Decoded) -> (Option<SclFrame>, Action) {
        let now = self.now;
        let ep = match name {
            EndpointName::RtPss => &mut self.rt_pss_ep,
            EndpointName::NonRtAck => &mut self.ack_ep,
            EndpointName::SafeIoMonitor => &mut self.mon_ep,
            EndpointName::SafeIoPss => &mut self.tap_ep,
        };
        let (verdict, next) = classify(&ep.state, &ep.cfg, decoded, now);
        ep.state = next;
        let (label, reason, missing) = match &verdict.kind {
            VerdictKind::Accept(_) => (VerdictLabel::Accept, None, None),
            VerdictKind::GapDetected { missing, .. } => (VerdictLabel::GapDetected, None, Some(*missing)),
            VerdictKind::DropCorrupt(r) => (VerdictLabel::DropCorrupt, Some(*r), None),
            VerdictKind::DropReplay => (VerdictLabel::DropReplay, None, None),
            VerdictKind::DropStale => (VerdictLabel::DropStale, None, None),
        };
        match label {
            VerdictLabel::DropCorrupt => ep.drops.corrupt += 1,
            VerdictLabel::DropReplay => ep.drops.replay += 1,
            VerdictLabel::DropStale => ep.drops.stale += 1,
            _ => ep.accepted += 1,
        }
        if label != VerdictLabel::Accept {
            let source = match name {
                EndpointName::RtPss => Cell::Rt,
                EndpointName::NonRtAck => Cell::NonRt,
                _ => Cell::SafeIo,
            };
            self.log(source, LogDetail::Verdict { endpoint: name, verdict: label, reason, missing, action: verdict.action });
        }
        (verdict.frame().cloned(), verdict.action)
    }

    fn rt_receive_pss(&mut self, decoded: &crate::codec::Decoded) {
        let (frame, _) = self.classify_at(EndpointName::RtPss, decoded);
        let Some(frame) = frame else { return };
        if frame.msg_type != MsgType::ParamUpdate {
            return;
        }
        let outcome = self.store.rt_apply(&frame, self.now);
        self.log(Cell::Rt, LogDetail::ParamApply { outcome });
        let seqno = self.rt_ack_sender.next_send_seqno();
        let ack = outcome.to_frame(seqno, self.now);
        self.send(Cell::Rt, Link::PssAck, &ack);
    }

    fn non_rt_receive_ack(&mut self, decoded: &crate::codec::Decoded) {
        let (frame, _) = self.classify_at(EndpointName::NonRtAck, decoded);
        let Some(frame) = frame else { return };
        if frame.msg_type != MsgType::ParamAck {
            return;
        }
        match self.sync.handle_ack(&frame, self.now) {
            Ok(effect) => self.log(Cell::NonRt, LogDetail::TxnUpdate { txn_id: effect.txn_id, state: effect.state }),
            Err(crate::pss::AckError::UnknownTxn(txn_id)) => self.log(Cell::NonRt, LogDetail::StaleAck { txn_id }),
            Err(crate::pss::AckError::Malformed) => {}
        }
    }

    fn safe_io_receive(&mut self, name: EndpointName, decoded: &crate::codec::Decoded) {
        let (frame, action) = self.classify_at(name, decoded);
        let escalation = match action {
            Action::Degrade => Some(SclEscalation::Degrade),
            Action::SafeStop => Some(SclEscalation::SafeStop),
            Action::Override => Some(SclEscalation::Override),
            Action::None | Action::Retry => None,
        };
        if let Some(action) = escalation {
            self.safety_event(SafetyEvent::SclAction { action });
        }
        let Some(frame) = frame else { return };
        if name != EndpointName::SafeIoMonitor {
            return;
        }
        match frame.msg_type {
            MsgType::Heartbeat => self.safety_event(SafetyEvent::HeartbeatSeen),
            MsgType::Command => {
                let Some(cmd) = decode_command(&frame.payload) else { return };
                match check_envelope(&self.scenario.safe_io_cfg, &cmd, self.safe_io.mode) {
                    Ok(Some(ev)) => {
                        if let SafetyEvent::EnvelopeViolation { axis, quantity, value } = ev {
                            self.log(Cell::SafeIo, LogDetail::EnvelopeViolation { axis, quantity, value });
                        }
                        self.safety_event(ev);
                    }
                    Ok(None) => {}
                    Err(e) => self.log(Cell::SafeIo, LogDetail::UnknownAxis { axis: e.0 }),
                }
            }
            _ => {}
        }
    }

    fn finish(self) -> SimOutput {
        let snapshot = self.store.read_params();
        let endpoints = [
            (EndpointName::RtPss, &self.rt_pss_ep),
            (EndpointName::NonRtAck, &self.ack_ep),
            (EndpointName::SafeIoMonitor, &self.mon_ep),
            (EndpointName::SafeIoPss, &self.tap_ep),
        ]
        .into_iter()
        .map(|(n, e)| (n, e.summary()))
        .collect();
        let channels = Link::ALL
            .iter()
            .map(|&l| {
                let ch = &self.links[l.index()];
                (l, ChannelSummary { stats: ch.stats(), in_flight: ch.in_flight() })
            })
            .collect();
        let trace = self.trace.into_records();
        let final_state = FinalState {
            t_ns: self.now,
            safe_io: SafeIoSummary { state: self.safe_io, lines: self.safe_io.lines() },
            params: self.store.named(&snapshot),
            param_generation: snapshot.generation,
            transactions: self.sync.transactions().cloned().collect(),
            stale_acks: self.sync.stale_acks,
            endpoints,
            channels,
            trace_records: trace.len() as u64,
        };
        SimOutput { log: self.log, final_state, trace }
    }
}

fn receiver_cell(link: Link, receiver: usize) -> Cell {
    match (link, receiver) {
        (Link::Pss, 0) => Cell::Rt,
        (Link::Pss, _) | (Link::RtMonitor, _) => Cell::SafeIo,
        (Link::PssAck, _) => Cell::NonRt,
    }
}

fn update_error_label(e: &UpdateError) -> String {
    e.to_string()
}
