//! Straightforward reference implementations used by the integration and
//! acceptance tests. Deliberately naive: bit loops and explicit counters.

#![allow(dead_code)]

/// Bit-serial CRC-32C, reflected, one bit per iteration.
pub fn crc32c_bitwise(data: &[u8]) -> u32 {
    let mut crc: u32 = 0xFFFF_FFFF;
    for &byte in data {
        for bit in 0..8 {
            let in_bit = ((byte >> bit) & 1) as u32;
            let mix = (crc ^ in_bit) & 1;
            crc >>= 1;
            if mix == 1 {
                crc ^= 0x82F6_3B78;
            }
        }
    }
    !crc
}

/// The receiver output a reaction table prescribes for each fault class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Accept,
    Gap(u32),
    Corrupt,
    Replay,
    Stale,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reaction {
    None,
    Retry,
    Degrade,
    SafeStop,
}

/// One receiver's counters, updated from the table row by row.
#[derive(Debug, Clone)]
pub struct TableOracle {
    pub last: u32,
    pub crc_run: u32,
    pub stale_run: u32,
    pub replay_times: Vec<u64>,
    pub lost: u64,
    pub corrupt_limit: u32,
    pub stale_limit: u32,
    pub replay_limit: u32,
    pub window_ns: u64,
}

impl TableOracle {
    pub fn primed(last: u32) -> Self {
        Self {
            last,
            crc_run: 0,
            stale_run: 0,
            replay_times: Vec::new(),
            lost: 0,
            corrupt_limit: 3,
            stale_limit: 3,
            replay_limit: 3,
            window_ns: 100_000_000,
        }
    }

    pub fn corrupt(&mut self) -> (Verdict, Reaction) {
        self.crc_run += 1;
        let r = if self.crc_run >= self.corrupt_limit { Reaction::SafeStop } else { Reaction::Retry };
        (Verdict::Corrupt, r)
    }

    /// An intact frame with sequence number `seq` stamped `age_ns` before `now`.
    pub fn intact(&mut self, seq: u32, age_ns: u64, budget_ns: u64, now: u64) -> (Verdict, Reaction) {
        let ahead = seq.wrapping_sub(self.last);
        if ahead == 0 || ahead >= 1 << 31 {
            self.replay_times.retain(|&t| now - t < self.window_ns);
            self.replay_times.push(now);
            let r = if self.replay_times.len() as u32 >= self.replay_limit { Reaction::Degrade } else { Reaction::None };
            return (Verdict::Replay, r);
        }
        if age_ns > budget_ns {
            self.stale_run += 1;
            let r = if self.stale_run >= self.stale_limit { Reaction::SafeStop } else { Reaction::Degrade };
            return (Verdict::Stale, r);
        }
        self.crc_run = 0;
        self.stale_run = 0;
        self.last = seq;
        if ahead > 1 {
            self.lost += u64::from(ahead - 1);
            (Verdict::Gap(ahead - 1), Reaction::None)
        } else {
            (Verdict::Accept, Reaction::None)
        }
    }
}

/// Every jitter statistic recomputed by brute force from raw timestamps.
#[derive(Debug, Clone, PartialEq)]
pub struct BruteReport {
    pub nominal_us: f64,
    pub sigma_us: f64,
    pub p99_us: f64,
    pub p999_us: f64,
    pub max_us: f64,
    pub excursions: u64,
    pub missed: u64,
    pub within: u64,
    pub n: u64,
}

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut out = v.to_vec();
    out.sort_by(|a, b| a.partial_cmp(b).unwrap());
    out
}

fn percentile(s: &[f64], p: f64) -> f64 {
    let rank = p * (s.len() as f64 - 1.0);
    let i = rank.floor() as usize;
    if i + 1 >= s.len() {
        return s[s.len() - 1];
    }
    s[i] + (rank - i as f64) * (s[i + 1] - s[i])
}

pub fn brute_report(ts: &[u64]) -> BruteReport {
    let mut d2 = Vec::new();
    for n in 2..ts.len() {
        d2.push((ts[n] - ts[n - 2]) as f64);
    }
    let s = sorted(&d2);
    let m = s.len();
    let median = if m % 2 == 1 { s[m / 2] } else { 0.5 * (s[m / 2 - 1] + s[m / 2]) };
    let jitter: Vec<f64> = d2.iter().map(|d| d - median).collect();
    let mut sum = 0.0;
    for j in &jitter {
        sum += j;
    }
    let mean = sum / m as f64;
    let mut ss = 0.0;
    for j in &jitter {
        ss += (j - mean) * (j - mean);
    }
    let abs = sorted(&jitter.iter().map(|j| j.abs()).collect::<Vec<_>>());
    let mut excursions = 0;
    let mut within = 0;
    let mut missed = 0;
    for i in 0..m {
        if jitter[i].abs() > 50_000.0 {
            excursions += 1;
        }
        if jitter[i].abs() <= 10_000.0 {
            within += 1;
        }
        if d2[i] > 2_000_000.0 {
            missed += 1;
        }
    }
    BruteReport {
        nominal_us: median / 1e3,
        sigma_us: (ss / m as f64).sqrt() / 1e3,
        p99_us: percentile(&abs, 0.99) / 1e3,
        p999_us: percentile(&abs, 0.999) / 1e3,
        max_us: abs[m - 1] / 1e3,
        excursions,
        missed,
        within,
        n: m as u64,
    }
}

/// Relative difference with an absolute floor for values near zero.
pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-9)
}

use cellguard_core::safe_io::{Quantity, SclEscalation};
use cellguard_core::{step, Mode, SafeIoConfig, SafeIoState, SafetyEvent};

pub const SAFETY_EVENTS: [SafetyEvent; 8] = [
    SafetyEvent::HeartbeatSeen,
    SafetyEvent::HeartbeatTimeout,
    SafetyEvent::EnvelopeViolation { axis: 0, quantity: Quantity::Velocity, value: 9.0 },
    SafetyEvent::SclAction { action: SclEscalation::Degrade },
    SafetyEvent::SclAction { action: SclEscalation::SafeStop },
    SafetyEvent::SclAction { action: SclEscalation::Override },
    SafetyEvent::OperatorAck,
    SafetyEvent::OperatorEstop,
];

/// Gaps between events: one supervision tick, or longer than the recovery window.
pub const SAFETY_GAPS_NS: [u64; 2] = [1_000_000, 2_000_000_000];

#[derive(Debug, Default, Clone, Copy)]
pub struct BfsStats {
    pub transitions: u64,
    pub safe_stop_states: u64,
    pub exits_via_ack: u64,
    pub recoveries: u64,
}

/// Walks every (event, gap) sequence up to `depth` from a fresh NORMAL
/// state and checks the latch and line invariants on each transition.
pub fn safe_io_bfs(cfg: &SafeIoConfig, depth: u32) -> Result<BfsStats, String> {
    let mut stats = BfsStats::default();
    let mut frontier = vec![(SafeIoState::new(0), 0u64)];
    for level in 0..depth {
        let mut next = Vec::new();
        for (state, now) in &frontier {
            for gap in SAFETY_GAPS_NS {
                let t = now + gap;
                for ev in &SAFETY_EVENTS {
                    let (after, lines) = step(state, cfg, ev, t);
                    stats.transitions += 1;
                    if lines != after.lines() {
                        return Err(format!("level {level}: returned lines disagree with state"));
                    }
                    let hazard = matches!(ev, SafetyEvent::EnvelopeViolation { .. } | SafetyEvent::OperatorEstop);
                    if hazard && !(after.mode == Mode::SafeStop && lines.estop_asserted) {
                        return Err(format!("level {level}: {ev:?} left {:?} without estop", after.mode));
                    }
                    if state.mode == Mode::SafeStop && after.mode != Mode::SafeStop {
                        if *ev != SafetyEvent::OperatorAck {
                            return Err(format!("level {level}: SAFE_STOP left on {ev:?}"));
                        }
                        stats.exits_via_ack += 1;
                    }
                    if state.mode == Mode::Degraded && after.mode == Mode::Normal {
                        let quiet = t - state.last_anomaly_ns >= cfg.recovery_window_ns;
                        if !(*ev == SafetyEvent::HeartbeatSeen && quiet) {
                            return Err(format!("level {level}: DEGRADED left on {ev:?}"));
                        }
                        stats.recoveries += 1;
                    }
                    if after.mode == Mode::SafeStop {
                        stats.safe_stop_states += 1;
                        if lines.motor_enable || !lines.brake_engaged || !after.ack_required {
                            return Err(format!("level {level}: SAFE_STOP with lines {lines:?}"));
                        }
                    } else if !lines.motor_enable || lines.brake_engaged || lines.estop_asserted {
                        return Err(format!("level {level}: {:?} with lines {lines:?}", after.mode));
                    }
                    if level + 1 < depth {
                        next.push((after, t));
                    }
                }
            }
        }
        frontier = next;
    }
    Ok(stats)
}

use cellguard_core::{classify, decode, encode, Action, ChannelId, Decoded, EndpointConfig, EndpointState, MsgType, SclFrame, VerdictKind};

pub const MS: u64 = 1_000_000;
const T0: u64 = 100 * MS;

#[derive(Debug, Clone, Copy)]
enum Ev {
    Next,
    Gap,
    Replay,
    Stale,
    Corrupt,
}

const EVENTS: [Ev; 5] = [Ev::Next, Ev::Gap, Ev::Replay, Ev::Stale, Ev::Corrupt];

pub fn heartbeat(seq: u32, ts: u64) -> SclFrame {
    SclFrame::new(ChannelId::RtMonitor, MsgType::Heartbeat, seq, ts, vec![1, 2, 3])
}

pub fn corrupted_heartbeat(seq: u32, ts: u64) -> Decoded {
    let mut wire = encode(&heartbeat(seq, ts)).unwrap();
    wire[22] ^= 0x10;
    decode(&wire)
}

fn lib_labels(kind: &VerdictKind) -> Verdict {
    match kind {
        VerdictKind::Accept(_) => Verdict::Accept,
        VerdictKind::GapDetected { missing, .. } => Verdict::Gap(*missing),
        VerdictKind::DropCorrupt(_) => Verdict::Corrupt,
        VerdictKind::DropReplay => Verdict::Replay,
        VerdictKind::DropStale => Verdict::Stale,
    }
}

fn reaction(a: Action) -> Reaction {
    match a {
        Action::None => Reaction::None,
        Action::Retry => Reaction::Retry,
        Action::Degrade => Reaction::Degrade,
        Action::SafeStop => Reaction::SafeStop,
        Action::Override => panic!("classify never overrides"),
    }
}

fn primed(cfg: &EndpointConfig) -> EndpointState {
    let (v, s) = classify(&EndpointState::new(0), cfg, &Ok(heartbeat(0, T0)), T0);
    assert!(matches!(v.kind, VerdictKind::Accept(_)));
    s
}

fn sweep(cfg: &EndpointConfig, state: &EndpointState, oracle: &TableOracle, step: u64, depth: u32) -> u64 {
    if depth == 0 {
        return 1;
    }
    let now = T0 + step * MS;
    let mut leaves = 0;
    for ev in EVENTS {
        let mut o = oracle.clone();
        let next_seq = o.last.wrapping_add(1);
        let (decoded, expected) = match ev {
            Ev::Next => (Ok(heartbeat(next_seq, now)), o.intact(next_seq, 0, cfg.freshness_budget_ns, now)),
            Ev::Gap => {
                let s = next_seq.wrapping_add(1);
                (Ok(heartbeat(s, now)), o.intact(s, 0, cfg.freshness_budget_ns, now))
            }
            Ev::Replay => (Ok(heartbeat(o.last, now)), o.intact(o.last, 0, cfg.freshness_budget_ns, now)),
            Ev::Stale => {
                let age = 6 * MS;
                (Ok(heartbeat(next_seq, now - age)), o.intact(next_seq, age, cfg.freshness_budget_ns, now))
            }
            Ev::Corrupt => (corrupted_heartbeat(next_seq, now), o.corrupt()),
        };
        let (v, s) = classify(state, cfg, &decoded, now);
        assert_eq!((lib_labels(&v.kind), reaction(v.action)), expected, "event {ev:?} at step {step}");
        assert_eq!(s.lost_frames, o.lost);
        assert_eq!(s.consecutive_crc_failures, o.crc_run);
        assert_eq!(s.consecutive_stale, o.stale_run);
        leaves += sweep(cfg, &s, &o, step + 1, depth - 1);
    }
    leaves
}

/// Depth-first walk over every sequence of `depth` events after one accepted
/// frame, comparing verdict, action and counters at each step against the
/// table oracle. Returns the number of complete sequences.
pub fn endpoint_sweep(cfg: &EndpointConfig, depth: u32) -> u64 {
    sweep(cfg, &primed(cfg), &TableOracle::primed(0), 1, depth)
}


use cellguard_core::pss::{ApplyPlan, ReadStep, SnapshotReader, UpdatePayload, WireEntry, WriteStep};
use cellguard_core::{Criticality, ParamDescriptor, ParamRegistry, ParamValue, RtParamStore, ValueType};

/// The first `k` of four fixture parameters.
pub fn pss_registry(k: usize) -> ParamRegistry {
    let mut r = ParamRegistry::new();
    r.declare(ParamDescriptor::float("servo.kp", 0.0, 100.0, 1.0, Criticality::Critical)).unwrap();
    r.declare(ParamDescriptor::int("planner.horizon", 1, 100, 10, Criticality::Medium)).unwrap();
    r.declare(ParamDescriptor::float("servo.kd", -1.0, 1.0, 0.0, Criticality::Critical)).unwrap();
    r.declare(ParamDescriptor::boolean("vision.enabled", true, Criticality::Low)).unwrap();
    let keep: Vec<_> = r.descriptors()[..k].to_vec();
    let mut out = ParamRegistry::new();
    for d in keep {
        out.declare(d).unwrap();
    }
    out.seal();
    out
}

fn bits(v: ParamValue) -> u64 {
    match v {
        ParamValue::Float64(f) => f.to_bits(),
        ParamValue::Int64(i) => i as u64,
        ParamValue::Bool(b) => b as u64,
    }
}

pub fn honest_entry(d: &ParamDescriptor, v: ParamValue) -> WireEntry {
    let (min_bits, max_bits) = match v {
        ParamValue::Bool(_) => (0, 0),
        _ => (bits(d.min), bits(d.max)),
    };
    let type_tag = match d.value_type {
        ValueType::Float64 => 0,
        ValueType::Int64 => 1,
        ValueType::Bool => 2,
    };
    WireEntry { name_hash: d.name_hash(), type_tag, value_bits: bits(v), min_bits, max_bits }
}

/// Every interleaving of one k-entry apply with one reader that retries
/// until it completes (spinning at most twice in a row between writer steps). Returns the number of interleavings explored.
fn interleave(store: &RtParamStore, plan: &ApplyPlan, steps: &[WriteStep], reader: SnapshotReader,
              old: &[ParamValue], new: &[ParamValue], retries: u32) -> u64 {
    let mut count = 0;
    // writer moves
    if let Some((&s, rest)) = steps.split_first() {
        let mut st = store.clone();
        st.execute(plan, s);
        count += interleave(&st, plan, rest, reader.clone(), old, new, 0);
    }
    // reader moves
    let mut r = reader;
    match r.step(store) {
        ReadStep::Pending => count += interleave(store, plan, steps, r, old, new, retries),
        ReadStep::Done(snap) => {
            assert_eq!(snap.generation % 2, 0);
            let matches_old = snap.same_values(old);
            let matches_new = snap.same_values(new);
            assert!(matches_old || matches_new, "torn snapshot {:?}", snap.values);
            if matches_new && !matches_old {
                assert!(snap.generation >= 2);
            }
            count += 1;
        }
        ReadStep::Retry => {
            // Retrying only makes progress once the writer moves; bound the
            // spinning so the enumeration stays finite.
            // Once the writer is done, a reader may retry once for a write it
            // overlapped, never twice.
            assert!(!(steps.is_empty() && retries > 0), "reader retried with no writer active");
            if retries < 2 {
                count += interleave(store, plan, steps, r, old, new, retries + 1);
            }
        }
    }
    count
}

/// Explores every interleaving of a k-entry apply with one reader and returns
/// how many completed reads were checked.
pub fn pss_interleavings(k: usize) -> u64 {
    let values = [ParamValue::Float64(42.0), ParamValue::Int64(77), ParamValue::Float64(-0.5)];
    let reg = pss_registry(k);
    let store = RtParamStore::new(reg.clone());
    let entries: Vec<_> = reg.descriptors().iter().zip(values).map(|(d, v)| honest_entry(d, v)).collect();
    let plan = store.validate(&UpdatePayload { txn_id: 1, entries }.encode()).unwrap();
    let steps: Vec<WriteStep> = plan.steps().collect();
    assert_eq!(steps.len(), k + 3);
    let old = store.read_params().values;
    let new: Vec<_> = values[..k].to_vec();
    interleave(&store, &plan, &steps, SnapshotReader::new(), &old, &new, 0)
}
