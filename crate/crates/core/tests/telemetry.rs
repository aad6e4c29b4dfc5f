use pointsim::fabric::TrafficClass;
use pointsim::simkernel::VirtualTime;
use pointsim::telemetry::{chain_hash, Event, LogRecord, RunArtifacts, Telemetry};
use proptest::prelude::*;
use sha2::{Digest, Sha256};

fn event() -> impl Strategy<Value = Event> {
    prop_oneof![
        (any::<u64>(), 1u32..1500).prop_map(|(pkt, size)| Event::Inject { pkt, size, class: TrafficClass::Chunk, msg: Some(pkt / 3) }),
        (any::<u64>(), 1u32..1500, any::<bool>()).prop_map(|(pkt, size, fp)| Event::LinkTx { pkt, size, class: TrafficClass::Iptv, fp }),
        (any::<u64>(), "[ -~]{0,16}").prop_map(|(pkt, reason)| Event::Drop { pkt, size: 1, reason }),
        "[ -~]{0,24}".prop_map(|url| Event::ServerRequest { url }),
        (0u64..1 << 40, 0u64..1 << 40, any::<bool>())
            .prop_map(|(a, b, truncated)| Event::Stall { start: VirtualTime(a.min(b)), end: VirtualTime(a.max(b)), truncated }),
        (any::<Option<u32>>(), any::<u32>()).prop_map(|(from, to)| Event::Zap { from, to }),
        Just(Event::RunEnd),
    ]
}

fn stream() -> impl Strategy<Value = Vec<(u64, String, Event, Option<(String, f64)>)>> {
    proptest::collection::vec(
        (
            0u64..1_000,
            "[a-z0-9:>,\" ]{1,12}",
            event(),
            proptest::option::of(("[a-z_.,]{1,10}", -1e12f64..1e12)),
        ),
        0..60,
    )
}

fn collect(items: &[(u64, String, Event, Option<(String, f64)>)], samples: bool) -> Telemetry {
    let mut tel = Telemetry::new(samples);
    let mut t = 0;
    for (gap, element, ev, sample) in items {
        t += gap;
        tel.log(VirtualTime(t), element, ev.clone());
        if let Some((metric, value)) = sample {
            tel.record(VirtualTime(t), element, metric, *value);
        }
    }
    tel
}

proptest! {
    #[test]
    fn jsonl_round_trips(items in stream()) {
        let art = collect(&items, true).into_artifacts();
        let mut buf = Vec::new();
        art.write_jsonl(&mut buf).unwrap();
        let back = RunArtifacts::read_jsonl(buf.as_slice()).unwrap();
        prop_assert_eq!(&back, &art);
        prop_assert_eq!(back.event_hash(), art.event_hash());
    }

    #[test]
    fn event_hash_is_the_hash_of_the_event_only_export(items in stream()) {
        let art = collect(&items, false).into_artifacts();
        let mut buf = b"pointsim event log v1\n".to_vec();
        art.write_jsonl(&mut buf).unwrap();
        prop_assert_eq!(hex::encode(Sha256::digest(&buf)), chain_hash(&art.events));
    }

    #[test]
    fn samples_never_touch_the_event_stream(items in stream()) {
        let on = collect(&items, true);
        let off = collect(&items, false);
        prop_assert_eq!(on.events(), off.events());
        prop_assert_eq!(on.event_hash(), off.event_hash());
        prop_assert!(off.samples().is_empty());
    }

    #[test]
    fn csv_round_trips(items in stream()) {
        let art = collect(&items, true).into_artifacts();
        let mut buf = b"# header comment\n".to_vec();
        art.write_csv(&mut buf).unwrap();
        let back: Vec<LogRecord> = RunArtifacts::read_csv(buf.as_slice()).unwrap();
        prop_assert_eq!(back, art.samples);
    }
}
