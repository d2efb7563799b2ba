//! Parameter Synchronization Service.
//!
//! The Non-RT [`SyncManager`] validates an update against its declared
//! descriptor, packages it as a `ParamUpdate` SCL frame and tracks the
//! transaction until the RT side acknowledges it. The RT [`RtParamStore`]
//! re-validates, then applies the update to a double-buffered table under a
//! generation counter (odd while a write is in progress), so a reader never
//! sees half of a multi-parameter transaction. Rejected updates leave the
//! store at its last-known-good table.
//!
//! ## Payload layouts (little-endian)
//!
//! `ParamUpdate`:
//! ```text
//! txn_id u32 | count u8 | count x { name_hash u64 | type u8 | value u64 | min u64 | max u64 }
//! ```
//! `name_hash` is FNV-1a 64 of the UTF-8 name. `type` is 0 Float64, 1 Int64,
//! 2 Bool. Values are IEEE-754 bits for Float64, two's complement for Int64
//! and 0/1 for Bool; `min`/`max` echo the declared bounds (zero for Bool).
//!
//! `ParamAck`:
//! ```text
//! txn_id u32 | status u8 (0 ack, 1 nack) | reason u8 | generation u64
//! ```

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::hash::Hasher;

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{ChannelId, MsgType, SclFrame, MAX_PAYLOAD};
use crate::endpoint::SeqnoSender;

pub const MAX_NAME_LEN: usize = 64;
const UPDATE_HEADER_LEN: usize = 5;
const UPDATE_ENTRY_LEN: usize = 33;
pub const ACK_PAYLOAD_LEN: usize = 14;
/// Entries that fit in one frame.
pub const MAX_TXN_ENTRIES: usize = (MAX_PAYLOAD - UPDATE_HEADER_LEN) / UPDATE_ENTRY_LEN;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueType {
    Float64,
    Int64,
    Bool,
}

impl ValueType {
    fn tag(self) -> u8 {
        match self {
            Self::Float64 => 0,
            Self::Int64 => 1,
            Self::Bool => 2,
        }
    }

    fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Self::Float64),
            1 => Some(Self::Int64),
            2 => Some(Self::Bool),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Bool(bool),
    Int64(i64),
    Float64(f64),
}

impl ParamValue {
    pub fn value_type(&self) -> ValueType {
        match self {
            Self::Float64(_) => ValueType::Float64,
            Self::Int64(_) => ValueType::Int64,
            Self::Bool(_) => ValueType::Bool,
        }
    }

    fn to_bits(self) -> u64 {
        match self {
            Self::Float64(v) => v.to_bits(),
            Self::Int64(v) => v as u64,
            Self::Bool(v) => v as u64,
        }
    }

    fn from_bits(ty: ValueType, bits: u64) -> Option<Self> {
        match ty {
            ValueType::Float64 => Some(Self::Float64(f64::from_bits(bits))),
            ValueType::Int64 => Some(Self::Int64(bits as i64)),
            ValueType::Bool => match bits {
                0 => Some(Self::Bool(false)),
                1 => Some(Self::Bool(true)),
                _ => None,
            },
        }
    }

    /// Coerce a JSON-style number to `ty` (integers are accepted for floats).
    pub fn coerce(self, ty: ValueType) -> Option<Self> {
        match (self, ty) {
            (Self::Int64(v), ValueType::Float64) => Some(Self::Float64(v as f64)),
            (v, t) if v.value_type() == t => Some(v),
            _ => None,
        }
    }

    /// Bit-level identity, so NaN payloads and signed zeros compare exactly.
    fn same_bits(&self, other: &Self) -> bool {
        self.value_type() == other.value_type() && self.to_bits() == other.to_bits()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criticality {
    Low,
    Medium,
    Critical,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamDescriptor {
    pub name: String,
    pub value_type: ValueType,
    pub min: ParamValue,
    pub max: ParamValue,
    pub default: ParamValue,
    pub criticality: Criticality,
}

impl ParamDescriptor {
    pub fn float(name: &str, min: f64, max: f64, default: f64, criticality: Criticality) -> Self {
        Self {
            name: name.into(),
            value_type: ValueType::Float64,
            min: ParamValue::Float64(min),
            max: ParamValue::Float64(max),
            default: ParamValue::Float64(default),
            criticality,
        }
    }

    pub fn int(name: &str, min: i64, max: i64, default: i64, criticality: Criticality) -> Self {
        Self {
            name: name.into(),
            value_type: ValueType::Int64,
            min: ParamValue::Int64(min),
            max: ParamValue::Int64(max),
            default: ParamValue::Int64(default),
            criticality,
        }
    }

    pub fn boolean(name: &str, default: bool, criticality: Criticality) -> Self {
        Self {
            name: name.into(),
            value_type: ValueType::Bool,
            min: ParamValue::Bool(false),
            max: ParamValue::Bool(true),
            default: ParamValue::Bool(default),
            criticality,
        }
    }

    pub fn name_hash(&self) -> u64 {
        name_hash(&self.name)
    }

    /// Type and bounds check. NaN is never within bounds.
    pub fn admits(&self, value: &ParamValue) -> Result<(), NackReason> {
        match (self.min, self.max, *value) {
            (ParamValue::Float64(lo), ParamValue::Float64(hi), ParamValue::Float64(v)) => {
                if lo <= v && v <= hi {
                    Ok(())
                } else {
                    Err(NackReason::OutOfBounds)
                }
            }
            (ParamValue::Int64(lo), ParamValue::Int64(hi), ParamValue::Int64(v)) => {
                if lo <= v && v <= hi {
                    Ok(())
                } else {
                    Err(NackReason::OutOfBounds)
                }
            }
            (_, _, ParamValue::Bool(_)) if self.value_type == ValueType::Bool => Ok(()),
            _ => Err(NackReason::TypeMismatch),
        }
    }

    fn bounds_bits(&self) -> (u64, u64) {
        match self.value_type {
            ValueType::Bool => (0, 0),
            _ => (self.min.to_bits(), self.max.to_bits()),
        }
    }
}

pub fn name_hash(name: &str) -> u64 {
    let mut h = FnvHasher::default();
    h.write(name.as_bytes());
    h.finish()
}

fn valid_name(name: &str) -> bool {
    !name.is_empty()
        && name.split('.').all(|seg| {
            !seg.is_empty() && seg.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'_' || b == b'-')
        })
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DeclareError {
    #[error("parameter {0:?} already declared")]
    DuplicateName(String),
    #[error("parameter {0:?}: bounds must satisfy min <= default <= max with matching types")]
    InvalidBounds(String),
    #[error("parameter name {0:?} must be 1-64 chars of dot-separated [A-Za-z0-9_-] segments")]
    InvalidName(String),
    #[error("parameter {0:?} collides with {1:?} under the 64-bit name hash")]
    HashCollision(String, String),
    #[error("registry is sealed")]
    Sealed,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ParamRegistry {
    descriptors: Vec<ParamDescriptor>,
    #[serde(skip)]
    by_name: BTreeMap<String, usize>,
    #[serde(skip)]
    by_hash: BTreeMap<u64, usize>,
    sealed: bool,
}

impl ParamRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn declare(&mut self, d: ParamDescriptor) -> Result<(), DeclareError> {
        if self.sealed {
            return Err(DeclareError::Sealed);
        }
        if d.name.len() > MAX_NAME_LEN || !valid_name(&d.name) {
            return Err(DeclareError::InvalidName(d.name));
        }
        if self.by_name.contains_key(&d.name) {
            return Err(DeclareError::DuplicateName(d.name));
        }
        let typed = [d.min, d.max, d.default].iter().all(|v| v.value_type() == d.value_type);
        if !typed || d.admits(&d.min).is_err() || d.admits(&d.default).is_err() {
            return Err(DeclareError::InvalidBounds(d.name));
        }
        let h = d.name_hash();
        if let Some(&other) = self.by_hash.get(&h) {
            return Err(DeclareError::HashCollision(d.name, self.descriptors[other].name.clone()));
        }
        let idx = self.descriptors.len();
        self.by_name.insert(d.name.clone(), idx);
        self.by_hash.insert(h, idx);
        self.descriptors.push(d);
        Ok(())
    }

    pub fn seal(&mut self) {
        self.sealed = true;
    }

    pub fn is_sealed(&self) -> bool {
        self.sealed
    }

    pub fn len(&self) -> usize {
        self.descriptors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.descriptors.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.by_name.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&ParamDescriptor> {
        self.index_of(name).map(|i| &self.descriptors[i])
    }

    fn index_of_hash(&self, h: u64) -> Option<usize> {
        self.by_hash.get(&h).copied()
    }

    pub fn descriptors(&self) -> &[ParamDescriptor] {
        &self.descriptors
    }

    fn defaults(&self) -> Vec<ParamValue> {
        self.descriptors.iter().map(|d| d.default).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NackReason {
    OutOfBounds,
    UnknownParam,
    TypeMismatch,
    StoreBusy,
    /// Payload does not parse, or its bounds echo disagrees with the RT registry.
    Malformed,
}

impl NackReason {
    fn code(self) -> u8 {
        match self {
            Self::OutOfBounds => 1,
            Self::UnknownParam => 2,
            Self::TypeMismatch => 3,
            Self::StoreBusy => 4,
            Self::Malformed => 5,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(Self::OutOfBounds),
            2 => Some(Self::UnknownParam),
            3 => Some(Self::TypeMismatch),
            4 => Some(Self::StoreBusy),
            5 => Some(Self::Malformed),
            _ => None,
        }
    }
}

/// One entry of a `ParamUpdate` payload as it appears on the wire.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WireEntry {
    pub name_hash: u64,
    pub type_tag: u8,
    pub value_bits: u64,
    pub min_bits: u64,
    pub max_bits: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpdatePayload {
    pub txn_id: u32,
    pub entries: Vec<WireEntry>,
}

impl UpdatePayload {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(UPDATE_HEADER_LEN + self.entries.len() * UPDATE_ENTRY_LEN);
        out.extend_from_slice(&self.txn_id.to_le_bytes());
        out.push(self.entries.len() as u8);
        for e in &self.entries {
            out.extend_from_slice(&e.name_hash.to_le_bytes());
            out.push(e.type_tag);
            out.extend_from_slice(&e.value_bits.to_le_bytes());
            out.extend_from_slice(&e.min_bits.to_le_bytes());
            out.extend_from_slice(&e.max_bits.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Option<Self> {
        if bytes.len() < UPDATE_HEADER_LEN {
            return None;
        }
        let txn_id = u32::from_le_bytes(bytes[0..4].try_into().ok()?);
        let count = bytes[4] as usize;
        if count == 0 || bytes.len() != UPDATE_HEADER_LEN + count * UPDATE_ENTRY_LEN {
            return None;
        }
        let u64_at = |off: usize| u64::from_le_bytes(bytes[off..off + 8].try_into().unwrap());
        let entries = (0..count)
            .map(|i| {
                let b = UPDATE_HEADER_LEN + i * UPDATE_ENTRY_LEN;
                WireEntry {
                    name_hash: u64_at(b),
                    type_tag: bytes[b + 8],
                    value_bits: u64_at(b + 9),
                    min_bits: u64_at(b + 17),
                    max_bits: u64_at(b + 25),
                }
            })
            .collect();
        Some(Self { txn_id, entries })
    }
}

/// RT-side verdict on one update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum AckPayload {
    Ack { txn_id: u32, generation: u64 },
    Nack { txn_id: u32, reason: NackReason },
}

impl AckPayload {
    pub fn txn_id(&self) -> u32 {
        match *self {
            Self::Ack { txn_id, .. } | Self::Nack { txn_id, .. } => txn_id,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let (txn_id, status, reason, generation) = match *self {
            Self::Ack { txn_id, generation } => (txn_id, 0u8, 0u8, generation),
            Self::Nack { txn_id, reason } => (txn_id, 1, reason.code(), 0),
        };
        let mut out = Vec::with_capacity(ACK_PAYLOAD_LEN);
        out.extend_from_slice(&txn_id.to_le_bytes());
        out.push(status);
        out.push(reason);
        out.extend_from_slice(&generation.to_le_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Option<Self> {
        if bytes.len() != ACK_PAYLOAD_LEN {
            return None;
        }
        let txn_id = u32::from_le_bytes(bytes[0..4].try_into().ok()?);
        let generation = u64::from_le_bytes(bytes[6..14].try_into().ok()?);
        match (bytes[4], bytes[5]) {
            (0, 0) => Some(Self::Ack { txn_id, generation }),
            (1, code) => NackReason::from_code(code).map(|reason| Self::Nack { txn_id, reason }),
            _ => None,
        }
    }

    /// Wrap in a `ParamAck` frame on the PSS channel's return direction.
    pub fn to_frame(&self, seqno: u32, now_ns: u64) -> SclFrame {
        SclFrame::new(ChannelId::Pss, MsgType::ParamAck, seqno, now_ns, self.encode())
    }
}

/// Consistent view of the RT parameter table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamSnapshot {
    pub generation: u64,
    pub values: Vec<ParamValue>,
}

/// A validated update ready to be written: (table index, value) pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct ApplyPlan {
    pub txn_id: u32,
    pub writes: Vec<(usize, ParamValue)>,
}

/// Writer micro-steps of one apply, in order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WriteStep {
    /// Copy front to back and make the generation odd.
    Begin,
    /// Write the i-th planned value into the back table.
    Write(usize),
    /// Publish the back table.
    Swap,
    /// Make the generation even and record last-known-good.
    End,
}

impl ApplyPlan {
    pub fn steps(&self) -> impl Iterator<Item = WriteStep> + '_ {
        core::iter::once(WriteStep::Begin)
            .chain((0..self.writes.len()).map(WriteStep::Write))
            .chain([WriteStep::Swap, WriteStep::End])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RtParamStore {
    #[serde(skip)]
    registry: ParamRegistry,
    #[serde(skip)]
    tables: [Vec<ParamValue>; 2],
    #[serde(skip)]
    front: usize,
    generation: u64,
    last_known_good: Vec<ParamValue>,
    pub applied: u64,
    pub rejected: u64,
}

impl RtParamStore {
    pub fn new(registry: ParamRegistry) -> Self {
        let defaults = registry.defaults();
        Self {
            registry,
            tables: [defaults.clone(), defaults.clone()],
            front: 0,
            generation: 0,
            last_known_good: defaults,
            applied: 0,
            rejected: 0,
        }
    }

    pub fn registry(&self) -> &ParamRegistry {
        &self.registry
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn last_known_good(&self) -> &[ParamValue] {
        &self.last_known_good
    }

    /// RT-side re-validation of a decoded `ParamUpdate` payload.
    pub fn validate(&self, payload: &[u8]) -> Result<ApplyPlan, (u32, NackReason)> {
        let txn_hint = payload.get(0..4).map_or(0, |b| u32::from_le_bytes(b.try_into().unwrap()));
        let update = UpdatePayload::decode(payload).ok_or((txn_hint, NackReason::Malformed))?;
        let txn_id = update.txn_id;
        let mut writes = Vec::with_capacity(update.entries.len());
        for e in &update.entries {
            let idx = self.registry.index_of_hash(e.name_hash).ok_or((txn_id, NackReason::UnknownParam))?;
            let d = &self.registry.descriptors[idx];
            let ty = ValueType::from_tag(e.type_tag).ok_or((txn_id, NackReason::TypeMismatch))?;
            if ty != d.value_type {
                return Err((txn_id, NackReason::TypeMismatch));
            }
            let value = ParamValue::from_bits(ty, e.value_bits).ok_or((txn_id, NackReason::Malformed))?;
            if (e.min_bits, e.max_bits) != d.bounds_bits() {
                return Err((txn_id, NackReason::Malformed));
            }
            d.admits(&value).map_err(|r| (txn_id, r))?;
            if writes.iter().any(|(i, _)| *i == idx) {
                return Err((txn_id, NackReason::Malformed));
            }
            writes.push((idx, value));
        }
        Ok(ApplyPlan { txn_id, writes })
    }

    /// Execute one writer micro-step. Steps must arrive in [`ApplyPlan::steps`] order.
    pub fn execute(&mut self, plan: &ApplyPlan, step: WriteStep) {
        let back = self.front ^ 1;
        match step {
            WriteStep::Begin => {
                debug_assert!(self.generation % 2 == 0);
                self.tables[back] = self.tables[self.front].clone();
                self.generation += 1;
            }
            WriteStep::Write(i) => {
                let (idx, v) = plan.writes[i];
                self.tables[back][idx] = v;
            }
            WriteStep::Swap => self.front = back,
            WriteStep::End => {
                self.generation += 1;
                self.last_known_good = self.tables[self.front].clone();
            }
        }
    }

    /// Validate and apply one accepted `ParamUpdate` frame.
    pub fn rt_apply(&mut self, frame: &SclFrame, _now_ns: u64) -> AckPayload {
        let outcome = if frame.msg_type != MsgType::ParamUpdate {
            Err((0, NackReason::Malformed))
        } else if self.generation % 2 == 1 {
            let txn = frame.payload.get(0..4).map_or(0, |b| u32::from_le_bytes(b.try_into().unwrap()));
            Err((txn, NackReason::StoreBusy))
        } else {
            self.validate(&frame.payload)
        };
        match outcome {
            Ok(plan) => {
                let steps: Vec<_> = plan.steps().collect();
                for s in steps {
                    self.execute(&plan, s);
                }
                self.applied += 1;
                AckPayload::Ack { txn_id: plan.txn_id, generation: self.generation }
            }
            Err((txn_id, reason)) => {
                self.rejected += 1;
                AckPayload::Nack { txn_id, reason }
            }
        }
    }

    /// Snapshot under the generation protocol. Single-threaded callers never
    /// retry; if a stepped apply is left half-done, the last-known-good
    /// table is returned instead.
    pub fn read_params(&self) -> ParamSnapshot {
        let mut reader = SnapshotReader::new();
        for _ in 0..64 {
            loop {
                match reader.step(self) {
                    ReadStep::Pending => continue,
                    ReadStep::Done(s) => return s,
                    ReadStep::Retry => break,
                }
            }
        }
        ParamSnapshot { generation: self.generation & !1, values: self.last_known_good.clone() }
    }

    pub fn value(&self, snapshot: &ParamSnapshot, name: &str) -> Option<ParamValue> {
        self.registry.index_of(name).and_then(|i| snapshot.values.get(i).copied())
    }

    /// Named view of a snapshot, for reports.
    pub fn named(&self, snapshot: &ParamSnapshot) -> BTreeMap<String, ParamValue> {
        self.registry
            .descriptors
            .iter()
            .zip(&snapshot.values)
            .map(|(d, v)| (d.name.clone(), *v))
            .collect()
    }

    fn front_entry(&self, i: usize) -> ParamValue {
        self.tables[self.front][i]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ReadStep {
    Pending,
    Done(ParamSnapshot),
    /// A concurrent write was observed; the reader has reset itself.
    Retry,
}

/// Reader side of the generation protocol, one memory access per step:
/// read generation, read each entry, re-read generation.
#[derive(Debug, Clone, Default)]
pub struct SnapshotReader {
    start_gen: Option<u64>,
    values: Vec<ParamValue>,
}

impl SnapshotReader {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn step(&mut self, store: &RtParamStore) -> ReadStep {
        let n = store.registry.len();
        match self.start_gen {
            None => {
                let g = store.generation;
                if g % 2 == 1 {
                    return ReadStep::Retry;
                }
                self.start_gen = Some(g);
                self.values.clear();
                ReadStep::Pending
            }
            Some(_) if self.values.len() < n => {
                self.values.push(store.front_entry(self.values.len()));
                ReadStep::Pending
            }
            Some(g) => {
                let values = core::mem::take(&mut self.values);
                self.start_gen = None;
                if store.generation == g {
                    ReadStep::Done(ParamSnapshot { generation: g, values })
                } else {
                    ReadStep::Retry
                }
            }
        }
    }
}

fn entries_equal(a: &[ParamValue], b: &[ParamValue]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.same_bits(y))
}

impl ParamSnapshot {
    /// Bit-exact table comparison (NaN-safe).
    pub fn same_values(&self, other: &[ParamValue]) -> bool {
        entries_equal(&self.values, other)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyncConfig {
    /// Rejected or unanswered attempts allowed before a transaction is exhausted.
    pub retry_limit: u32,
    pub retry_interval_ns: u64,
    pub ack_timeout_ns: u64,
}

impl Default for SyncConfig {
    fn default() -> Self {
        Self { retry_limit: 3, retry_interval_ns: 10_000_000, ack_timeout_ns: 50_000_000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum TxnState {
    Pending,
    Sent,
    Acked { generation: u64 },
    Nacked { reason: NackReason },
    Exhausted,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamTransaction {
    pub txn_id: u32,
    pub entries: Vec<(String, ParamValue)>,
    pub state: TxnState,
    pub retries_used: u32,
    #[serde(skip)]
    payload: Vec<u8>,
    #[serde(skip)]
    last_sent_ns: u64,
    #[serde(skip)]
    retry_at_ns: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum UpdateError {
    #[error("unknown parameter {0:?}")]
    UnknownParam(String),
    #[error("value for {0:?} is outside its declared bounds")]
    OutOfBounds(String),
    #[error("value for {0:?} has the wrong type")]
    TypeMismatch(String),
    #[error("transaction must carry 1..={MAX_TXN_ENTRIES} distinct parameters")]
    BadEntryCount,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AckError {
    #[error("ack for unknown transaction {0}")]
    UnknownTxn(u32),
    #[error("malformed ack payload")]
    Malformed,
}

/// Observable result of processing an ack, for logging.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AckEffect {
    pub txn_id: u32,
    pub state: TxnState,
}

/// Non-RT side of the service.
#[derive(Debug, Clone)]
pub struct SyncManager {
    registry: ParamRegistry,
    cfg: SyncConfig,
    next_txn: u32,
    txns: BTreeMap<u32, ParamTransaction>,
    sender: SeqnoSender,
    outbox: Vec<SclFrame>,
    pub stale_acks: u64,
}

impl SyncManager {
    pub fn new(registry: ParamRegistry, cfg: SyncConfig) -> Self {
        Self {
            registry,
            cfg,
            next_txn: 1,
            txns: BTreeMap::new(),
            sender: SeqnoSender::new(),
            outbox: Vec::new(),
            stale_acks: 0,
        }
    }

    pub fn registry(&self) -> &ParamRegistry {
        &self.registry
    }

    pub fn request_update(&mut self, name: &str, value: ParamValue, now_ns: u64) -> Result<u32, UpdateError> {
        self.request_transaction(&[(name, value)], now_ns)
    }

    /// Validate and send a k-parameter transaction as a single frame.
    pub fn request_transaction(&mut self, updates: &[(&str, ParamValue)], now_ns: u64) -> Result<u32, UpdateError> {
        if updates.is_empty() || updates.len() > MAX_TXN_ENTRIES {
            return Err(UpdateError::BadEntryCount);
        }
        let mut entries = Vec::with_capacity(updates.len());
        let mut wire = Vec::with_capacity(updates.len());
        for (name, value) in updates {
            let d = self.registry.get(name).ok_or_else(|| UpdateError::UnknownParam((*name).into()))?;
            if entries.iter().any(|(n, _): &(String, ParamValue)| n == name) {
                return Err(UpdateError::BadEntryCount);
            }
            let value = value.coerce(d.value_type).ok_or_else(|| UpdateError::TypeMismatch((*name).into()))?;
            d.admits(&value).map_err(|r| match r {
                NackReason::OutOfBounds => UpdateError::OutOfBounds((*name).into()),
                _ => UpdateError::TypeMismatch((*name).into()),
            })?;
            let (min_bits, max_bits) = d.bounds_bits();
            wire.push(WireEntry {
                name_hash: d.name_hash(),
                type_tag: d.value_type.tag(),
                value_bits: value.to_bits(),
                min_bits,
                max_bits,
            });
            entries.push((d.name.clone(), value));
        }
        let txn_id = self.next_txn;
        self.next_txn = self.next_txn.wrapping_add(1).max(1);
        let payload = UpdatePayload { txn_id, entries: wire }.encode();
        let mut txn = ParamTransaction {
            txn_id,
            entries,
            state: TxnState::Pending,
            retries_used: 0,
            payload,
            last_sent_ns: now_ns,
            retry_at_ns: None,
        };
        self.send(&mut txn, now_ns);
        self.txns.insert(txn_id, txn);
        Ok(txn_id)
    }

    fn send(&mut self, txn: &mut ParamTransaction, now_ns: u64) {
        let seqno = self.sender.next_send_seqno();
        self.outbox.push(SclFrame::new(ChannelId::Pss, MsgType::ParamUpdate, seqno, now_ns, txn.payload.clone()));
        txn.state = TxnState::Sent;
        txn.last_sent_ns = now_ns;
        txn.retry_at_ns = None;
    }

    /// Frames waiting to be written to the PSS channel.
    pub fn take_outgoing(&mut self) -> Vec<SclFrame> {
        core::mem::take(&mut self.outbox)
    }

    pub fn transaction(&self, txn_id: u32) -> Option<&ParamTransaction> {
        self.txns.get(&txn_id)
    }

    pub fn transactions(&self) -> impl Iterator<Item = &ParamTransaction> {
        self.txns.values()
    }

    /// Process an accepted `ParamAck` frame.
    pub fn handle_ack(&mut self, frame: &SclFrame, now_ns: u64) -> Result<AckEffect, AckError> {
        let ack = AckPayload::decode(&frame.payload).ok_or(AckError::Malformed)?;
        self.handle_ack_payload(ack, now_ns)
    }

    pub fn handle_ack_payload(&mut self, ack: AckPayload, now_ns: u64) -> Result<AckEffect, AckError> {
        let txn_id = ack.txn_id();
        let Some(txn) = self.txns.get_mut(&txn_id) else {
            self.stale_acks += 1;
            return Err(AckError::UnknownTxn(txn_id));
        };
        match (txn.state, ack) {
            // Late replies to a finished transaction change nothing.
            (TxnState::Acked { .. } | TxnState::Exhausted, _) => {}
            (_, AckPayload::Ack { generation, .. }) => {
                txn.state = TxnState::Acked { generation };
                txn.retry_at_ns = None;
            }
            (_, AckPayload::Nack { reason, .. }) => {
                txn.retries_used += 1;
                if txn.retries_used >= self.cfg.retry_limit {
                    txn.state = TxnState::Exhausted;
                    txn.retry_at_ns = None;
                } else {
                    txn.state = TxnState::Nacked { reason };
                    txn.retry_at_ns = Some(now_ns.saturating_add(self.cfg.retry_interval_ns));
                }
            }
        }
        Ok(AckEffect { txn_id, state: txn.state })
    }

    /// Resend due retries and time out unanswered attempts. Returns the
    /// transactions whose state changed.
    pub fn poll(&mut self, now_ns: u64) -> Vec<AckEffect> {
        let mut changed = Vec::new();
        let ids: Vec<u32> = self.txns.keys().copied().collect();
        for id in ids {
            let mut txn = self.txns.remove(&id).expect("key present");
            match txn.state {
                TxnState::Nacked { .. } if txn.retry_at_ns.is_some_and(|t| now_ns >= t) => {
                    self.send(&mut txn, now_ns);
                    changed.push(AckEffect { txn_id: id, state: txn.state });
                }
                TxnState::Sent if now_ns.saturating_sub(txn.last_sent_ns) >= self.cfg.ack_timeout_ns => {
                    txn.retries_used += 1;
                    if txn.retries_used >= self.cfg.retry_limit {
                        txn.state = TxnState::Exhausted;
                    } else {
                        self.send(&mut txn, now_ns);
                    }
                    changed.push(AckEffect { txn_id: id, state: txn.state });
                }
                _ => {}
            }
            self.txns.insert(id, txn);
        }
        changed
    }
}
