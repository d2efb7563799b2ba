//! Safety protocol core for statically partitioned control systems.
//!
//! Everything in this crate is a pure state transition or a pure function
//! over values: the SCL wire codec, receive-side verdicts, the simulated
//! black channel, the parameter synchronization service, the Safe IO
//! supervisor, the discrete-event harness, and the cycle-jitter statistics.
//! No I/O happens here; the `cellguard` crate carries files and CLIs.

#![cfg_attr(not(test), no_std)]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod channel;
pub mod codec;
pub mod crc;
pub mod endpoint;
pub mod jitter;
pub mod noise;
pub mod pss;
pub mod safe_io;
pub mod sim;

pub use channel::{Channel, ChannelError, ChannelFaultModel, ChannelStats, DelayModel, SendOutcome};
pub use codec::{decode, encode, ChannelId, CodecError, CorruptReason, Decoded, MsgType, SclFrame};
pub use crc::crc32c;
pub use endpoint::{
    check_loss, classify, Action, DegradationState, EndpointConfig, EndpointState, ReceiveVerdict,
    SeqnoSender, VerdictKind,
};
pub use jitter::{
    analyze, ccdf, compute_delta2, excursions_per_second, generate_trace, AnalyzeConfig, Ccdf,
    FrameKind, JitterError, JitterReport, TraceRecord,
};
pub use noise::TimingNoise;
pub use pss::{
    Criticality, NackReason, ParamDescriptor, ParamRegistry, ParamSnapshot, ParamValue, RtParamStore,
    SyncManager, TxnState, ValueType,
};
pub use safe_io::{
    check_envelope, step, supervise_heartbeat, AxisCommand, AxisEnvelope, Mode, OverrideLines,
    SafeIoConfig, SafeIoState, SafetyEvent, TransitionCause,
};
pub use sim::{run, Scenario, SimOutput};
