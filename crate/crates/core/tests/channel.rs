use std::collections::HashMap;

use cellguard_core::channel::DEFAULT_CAPACITY;
use cellguard_core::{
    classify, decode, encode, Channel, ChannelError, ChannelFaultModel, ChannelId, DelayModel, EndpointConfig,
    EndpointState, MsgType, SclFrame, SendOutcome,
};
use proptest::prelude::*;

fn wire(seq: u32, ts: u64) -> Vec<u8> {
    let payload = seq.to_le_bytes().repeat(4);
    encode(&SclFrame::new(ChannelId::Pss, MsgType::Diagnostic, seq, ts, payload)).unwrap()
}

fn noisy(seed: u64) -> ChannelFaultModel {
    ChannelFaultModel {
        bit_error_rate: 1e-3,
        loss_prob: 0.1,
        dup_prob: 0.1,
        delay_dist: DelayModel { fixed_ns: 5_000, jitter_ns: 4_000 },
        reorder_prob: 0.1,
        seed,
    }
}

/// Sends `n` frames 1 µs apart and polls every µs; returns (poll time, bytes).
fn drive(ch: &mut Channel, n: u32) -> Vec<(u64, Vec<u8>)> {
    let mut got = Vec::new();
    for i in 0..n {
        let now = u64::from(i) * 1_000;
        let _ = ch.send(&wire(i, now), now);
        for b in ch.poll(0, now) {
            got.push((now, b));
        }
    }
    let end = u64::from(n) * 1_000 + 1_000_000;
    for b in ch.poll(0, end) {
        got.push((end, b));
    }
    got
}

#[test]
fn same_seed_same_behaviour() {
    let a = drive(&mut Channel::new(noisy(11), 1024, 1), 5_000);
    let b = drive(&mut Channel::new(noisy(11), 1024, 1), 5_000);
    let c = drive(&mut Channel::new(noisy(12), 1024, 1), 5_000);
    assert_eq!(a, b);
    assert_ne!(a, c);
    let d = drive(&mut Channel::new(noisy(11), 1024, 1).with_stream(3), 5_000);
    assert_ne!(a, d);
}

#[test]
fn identity_channel_delivers_everything_once_in_order() {
    let mut ch = Channel::new(ChannelFaultModel::identity(2_500), DEFAULT_CAPACITY, 1);
    for i in 0..1_000u32 {
        let now = u64::from(i) * 10_000;
        let out = ch.send(&wire(i, now), now).unwrap();
        assert_eq!(out, SendOutcome::Queued { deliveries: vec![now + 2_500] });
        assert!(ch.poll(0, now + 2_499).is_empty());
        assert_eq!(ch.poll(0, now + 2_500), vec![wire(i, now)]);
    }
    let s = ch.stats();
    assert_eq!((s.sent, s.delivered, s.duplicated, s.injected_losses, s.bits_flipped), (1_000, 1_000, 0, 0, 0));
}

#[test]
fn ber_one_inverts_every_bit() {
    let model = ChannelFaultModel { bit_error_rate: 1.0, ..ChannelFaultModel::identity(0) };
    let mut ch = Channel::new(model, 8, 1);
    let w = wire(3, 0);
    ch.send(&w, 0).unwrap();
    let got = ch.poll(0, 0).pop().unwrap();
    assert!(got.iter().zip(&w).all(|(a, b)| *a == !*b));
    assert_eq!(ch.stats().bits_flipped, w.len() as u64 * 8);
}

#[test]
fn certain_reorder_swaps_pairs() {
    let model = ChannelFaultModel { reorder_prob: 1.0, ..ChannelFaultModel::identity(0) };
    let mut ch = Channel::new(model, 8, 1);
    assert_eq!(ch.send(&wire(0, 0), 0), Ok(SendOutcome::Held));
    assert!(matches!(ch.send(&wire(1, 0), 0), Ok(SendOutcome::Queued { .. })));
    assert_eq!(ch.send(&wire(2, 0), 0), Ok(SendOutcome::Held));
    assert!(matches!(ch.send(&wire(3, 0), 0), Ok(SendOutcome::Queued { .. })));
    let seqs: Vec<u32> = ch.poll(0, 0).iter().map(|b| decode(b).unwrap().seqno).collect();
    assert_eq!(seqs, [1, 0, 3, 2]);
}

#[test]
fn full_channel_reports_overflow() {
    let mut ch = Channel::new(ChannelFaultModel::identity(1_000_000), 4, 1);
    for i in 0..4 {
        ch.send(&wire(i, 0), 0).unwrap();
    }
    assert_eq!(ch.send(&wire(4, 0), 0), Err(ChannelError::ChannelFull));
    let s = ch.stats();
    assert_eq!((s.overflow_drops, ch.in_flight()), (1, 4));
}

#[test]
fn every_receiver_sees_each_copy() {
    let mut ch = Channel::new(ChannelFaultModel::identity(0), 8, 2);
    ch.send(&wire(1, 0), 0).unwrap();
    ch.ring(0);
    ch.ring(1);
    assert_eq!(ch.poll(0, 0).len(), 1);
    assert!(!ch.doorbell_pending(0));
    assert!(ch.doorbell_pending(1));
    assert_eq!(ch.stats().delivered, 0);
    assert_eq!(ch.poll(1, 0).len(), 1);
    assert_eq!(ch.stats().delivered, 1);
    assert!(ch.is_empty());
}

#[test]
fn noisy_channel_never_yields_an_accepted_corrupt_frame() {
    let model = ChannelFaultModel { bit_error_rate: 1e-4, ..ChannelFaultModel::identity(1_000) };
    let mut ch = Channel::new(model, DEFAULT_CAPACITY, 1);
    let cfg = EndpointConfig::default();
    let mut ep = EndpointState::new(0);
    let mut sent: HashMap<u32, Vec<u8>> = HashMap::new();
    let (mut accepted, mut dropped) = (0u64, 0u64);
    for i in 0..100_000u32 {
        let now = u64::from(i) * 10_000;
        let w = wire(i, now);
        sent.insert(i, w.clone());
        ch.send(&w, now).unwrap();
        for raw in ch.poll(0, now + 1_000) {
            let decoded = decode(&raw);
            let (v, next) = classify(&ep, &cfg, &decoded, now + 1_000);
            ep = next;
            match v.frame() {
                Some(f) => {
                    accepted += 1;
                    assert_eq!(encode(f).unwrap(), sent[&f.seqno], "altered frame accepted");
                }
                None => dropped += 1,
            }
        }
        sent.remove(&i.wrapping_sub(2));
    }
    let s = ch.stats();
    assert!(s.corrupted_frames > 1_000, "only {} corrupted", s.corrupted_frames);
    assert_eq!(dropped, s.corrupted_frames);
    assert_eq!(accepted + dropped, 100_000);
}

fn model_strategy() -> impl Strategy<Value = ChannelFaultModel> {
    (0.0..0.01f64, 0.0..0.5f64, 0.0..0.5f64, 0u64..20_000, 0u64..20_000, 0.0..0.5f64, any::<u64>()).prop_map(
        |(ber, loss, dup, fixed, jitter, reorder, seed)| ChannelFaultModel {
            bit_error_rate: ber,
            loss_prob: loss,
            dup_prob: dup,
            delay_dist: DelayModel { fixed_ns: fixed, jitter_ns: jitter },
            reorder_prob: reorder,
            seed,
        },
    )
}

proptest! {
    #[test]
    fn conservation_holds_at_every_step(model in model_strategy(), capacity in 1usize..16, receivers in 1usize..4,
                                         ops in proptest::collection::vec((any::<bool>(), 0u64..5_000), 1..300)) {
        let mut ch = Channel::new(model, capacity, receivers);
        let mut now = 0;
        let mut seq = 0;
        for (send, dt) in ops {
            now += dt;
            if send {
                let _ = ch.send(&wire(seq, now), now);
                seq += 1;
            } else {
                for r in 0..receivers {
                    ch.poll(r, now);
                }
            }
            let s = ch.stats();
            prop_assert_eq!(s.sent + s.duplicated, s.delivered + s.injected_losses + s.overflow_drops + ch.in_flight());
            prop_assert!(ch.len() <= capacity);
        }
    }

    #[test]
    fn identity_is_transparent(frames in proptest::collection::vec(proptest::collection::vec(any::<u8>(), 0..64), 1..50), delay in 0u64..10_000) {
        let mut ch = Channel::new(ChannelFaultModel::identity(delay), 64, 1);
        for (i, f) in frames.iter().enumerate() {
            ch.send(f, i as u64).unwrap();
        }
        prop_assert_eq!(ch.poll(0, frames.len() as u64 + delay), frames);
    }
}
