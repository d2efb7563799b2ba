mod oracle;

use cellguard_core::pss::{AckPayload, SyncConfig, UpdatePayload, WireEntry, WriteStep};
use cellguard_core::{ChannelId, MsgType, NackReason, ParamValue, RtParamStore, SclFrame, SyncManager, TxnState};
use oracle::{honest_entry, pss_registry as registry};
use proptest::prelude::*;

fn update_frame(payload: Vec<u8>) -> SclFrame {
    SclFrame::new(ChannelId::Pss, MsgType::ParamUpdate, 1, 0, payload)
}

fn assert_in_bounds(store: &RtParamStore) {
    let snap = store.read_params();
    assert_eq!(snap.generation % 2, 0);
    for (d, v) in store.registry().descriptors().iter().zip(&snap.values) {
        assert_eq!(d.admits(v), Ok(()), "{} holds {v:?}", d.name);
    }
}

fn adversarial_entry() -> impl Strategy<Value = (usize, u8, u64, bool, u64, u64)> {
    // (param index, type tag, value bits, echo honest bounds, min bits, max bits)
    (0usize..5, 0u8..4, prop_oneof![any::<u64>(), Just(f64::NAN.to_bits()), Just(1e300f64.to_bits()), Just((-5i64) as u64), Just(1000u64), Just(2u64)],
     any::<bool>(), any::<u64>(), any::<u64>())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn adversarial_updates_never_leave_out_of_bounds_values(
        batches in proptest::collection::vec(proptest::collection::vec(adversarial_entry(), 1..4), 1..20),
        garbage in proptest::collection::vec(any::<u8>(), 0..80),
    ) {
        let reg = registry(4);
        let mut store = RtParamStore::new(reg.clone());
        for (txn, batch) in batches.into_iter().enumerate() {
            let entries = batch.into_iter().map(|(idx, tag, value_bits, honest, lo, hi)| {
                let mut e = match reg.descriptors().get(idx) {
                    Some(d) => honest_entry(d, d.default),
                    None => WireEntry { name_hash: 0xdead_beef, type_tag: 0, value_bits: 0, min_bits: 0, max_bits: 0 },
                };
                e.type_tag = tag;
                e.value_bits = value_bits;
                if !honest {
                    e.min_bits = lo;
                    e.max_bits = hi;
                }
                e
            }).collect();
            let payload = UpdatePayload { txn_id: txn as u32, entries }.encode();
            let ack = store.rt_apply(&update_frame(payload), 0);
            let gen_after = store.generation();
            if let AckPayload::Ack { generation, .. } = ack {
                prop_assert_eq!(generation, gen_after);
            }
            assert_in_bounds(&store);
        }
        let before = store.read_params();
        let ack = store.rt_apply(&update_frame(garbage), 0);
        prop_assert!(matches!(ack, AckPayload::Nack { .. }), "garbage accepted");
        prop_assert_eq!(store.read_params(), before);
    }

    #[test]
    fn honest_float_updates_ack_iff_in_bounds(v in prop_oneof![-200.0..200.0f64, Just(f64::NAN), Just(f64::INFINITY), Just(0.0), Just(100.0)]) {
        let reg = registry(1);
        let d = &reg.descriptors()[0];
        let mut store = RtParamStore::new(reg.clone());
        let payload = UpdatePayload { txn_id: 1, entries: vec![honest_entry(d, ParamValue::Float64(v))] }.encode();
        let ack = store.rt_apply(&update_frame(payload), 0);
        let ok = (0.0..=100.0).contains(&v);
        if ok {
            prop_assert_eq!(ack, AckPayload::Ack { txn_id: 1, generation: 2 });
            prop_assert_eq!(store.value(&store.read_params(), "servo.kp"), Some(ParamValue::Float64(v)));
        } else {
            prop_assert_eq!(ack, AckPayload::Nack { txn_id: 1, reason: NackReason::OutOfBounds });
            prop_assert_eq!(store.generation(), 0);
        }
        // the Non-RT side refuses the same value before it ever reaches the wire
        let mut sync = SyncManager::new(reg, SyncConfig::default());
        prop_assert_eq!(sync.request_update("servo.kp", ParamValue::Float64(v), 0).is_ok(), ok);
    }
}

#[test]
fn no_interleaving_of_apply_and_read_is_torn() {
    for k in 1..=3 {
        let n = oracle::pss_interleavings(k);
        assert!(n > (k as u64 + 3), "only {n} interleavings for k={k}");
    }
}

#[test]
fn generation_is_odd_exactly_while_writing() {
    let reg = registry(2);
    let mut store = RtParamStore::new(reg.clone());
    let entries = vec![honest_entry(&reg.descriptors()[0], ParamValue::Float64(3.0))];
    for round in 0..5u64 {
        let plan = store.validate(&UpdatePayload { txn_id: 1, entries: entries.clone() }.encode()).unwrap();
        for s in plan.steps() {
            store.execute(&plan, s);
            let odd = store.generation() % 2 == 1;
            assert_eq!(odd, s != WriteStep::End, "{s:?}");
        }
        assert_eq!(store.generation(), 2 * (round + 1));
        assert!(store.read_params().same_values(store.last_known_good()));
    }
}

#[test]
fn busy_store_nacks_and_reader_falls_back_to_last_known_good() {
    let reg = registry(2);
    let mut store = RtParamStore::new(reg.clone());
    let d = &reg.descriptors()[0];
    let plan = store.validate(&UpdatePayload { txn_id: 1, entries: vec![honest_entry(d, ParamValue::Float64(9.0))] }.encode()).unwrap();
    store.execute(&plan, WriteStep::Begin);
    let payload = UpdatePayload { txn_id: 2, entries: vec![honest_entry(d, ParamValue::Float64(8.0))] }.encode();
    assert_eq!(store.rt_apply(&update_frame(payload), 0), AckPayload::Nack { txn_id: 2, reason: NackReason::StoreBusy });
    let snap = store.read_params();
    assert_eq!(snap.generation, 0);
    assert!(snap.same_values(store.last_known_good()));
}

#[test]
fn retries_then_exhaustion() {
    let mut sync = SyncManager::new(registry(1), SyncConfig::default());
    let id = sync.request_update("servo.kp", ParamValue::Float64(5.0), 0).unwrap();
    assert_eq!(sync.take_outgoing().len(), 1);
    let nack = AckPayload::Nack { txn_id: id, reason: NackReason::StoreBusy };
    let mut now = 0;
    for attempt in 1..=3 {
        let effect = sync.handle_ack_payload(nack, now).unwrap();
        if attempt < 3 {
            assert_eq!(effect.state, TxnState::Nacked { reason: NackReason::StoreBusy });
            now += 10_000_000;
            sync.poll(now);
            assert_eq!(sync.take_outgoing().len(), 1);
        } else {
            assert_eq!(effect.state, TxnState::Exhausted);
        }
    }
    assert_eq!(sync.transaction(id).unwrap().retries_used, 3);
    sync.poll(now + 1_000_000_000);
    assert!(sync.take_outgoing().is_empty());
}

#[test]
fn unanswered_updates_time_out() {
    let mut sync = SyncManager::new(registry(1), SyncConfig::default());
    let id = sync.request_update("servo.kp", ParamValue::Float64(5.0), 0).unwrap();
    sync.take_outgoing();
    assert!(sync.poll(49_999_999).is_empty());
    sync.poll(50_000_000);
    assert_eq!(sync.take_outgoing().len(), 1);
    sync.poll(100_000_000);
    sync.poll(150_000_000);
    assert_eq!(sync.transaction(id).unwrap().state, TxnState::Exhausted);
    assert!(sync.handle_ack_payload(AckPayload::Ack { txn_id: 99, generation: 2 }, 0).is_err());
    assert_eq!(sync.stale_acks, 1);
}
