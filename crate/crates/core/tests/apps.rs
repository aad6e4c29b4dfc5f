use pointsim::apps::{eligible_bitrate, replay_stalls, AbrParams, ClientInput, ClientOutput, HlsCatalog, HlsClient, Resource, Stb};
use pointsim::simkernel::{Scheduler, VirtualTime};
use proptest::prelude::*;

const D: u64 = 2_000_000;

fn catalog() -> HlsCatalog {
    HlsCatalog {
        host: "tv.example".into(),
        chunk_duration: VirtualTime(D),
        bitrates: vec![1_000_000, 2_000_000, 4_000_000, 8_000_000],
        window: 5,
    }
}

#[derive(Debug)]
enum Ev {
    Wake,
    Respond { req: u64, path: String },
    Timeout { req: u64 },
}

/// Runs a client against a catalog over a path whose throughput changes per
/// request and which silently loses some requests. Returns all outputs with
/// their times.
fn drive(rates: &[(u64, bool)], t_end: u64) -> (Vec<(VirtualTime, ClientOutput)>, Vec<u64>) {
    let cat = catalog();
    let mut client = HlsClient::new(AbrParams::default(), cat.chunk_duration, &cat.bitrates, 0);
    let mut sched = Scheduler::new();
    let mut log = Vec::new();
    let mut currents = Vec::new();
    let mut n = 0usize;
    let mut feed = |s: &mut Scheduler<Ev>, outs: Vec<ClientOutput>, log: &mut Vec<(VirtualTime, ClientOutput)>| {
        for o in outs {
            match &o {
                ClientOutput::Request { req, path, timeout_at } => {
                    let (rate, lost) = rates[n % rates.len()];
                    n += 1;
                    let size = cat.serve(s.now(), path).size;
                    let delay = 20_000 + size * 8 * 1_000_000 / rate;
                    if !lost {
                        s.schedule(VirtualTime(delay), Ev::Respond { req: *req, path: path.clone() });
                    }
                    s.schedule_at(*timeout_at, Ev::Timeout { req: *req }).unwrap();
                }
                ClientOutput::WakeAt(t) => {
                    s.schedule_at(*t, Ev::Wake).unwrap();
                }
                _ => {}
            }
            log.push((s.now(), o));
        }
    };
    let first = client.on_input(VirtualTime::ZERO, ClientInput::Start);
    feed(&mut sched, first, &mut log);
    sched
        .run_until(VirtualTime(t_end), |s, _, ev| {
            let now = s.now();
            let input = match ev {
                Ev::Wake => ClientInput::Wake,
                Ev::Respond { req, path } => ClientInput::Response { req, response: cat.serve(now, &path) },
                Ev::Timeout { req } => ClientInput::Timeout { req },
            };
            let outs = client.on_input(now, input);
            currents.push(client.current_bitrate());
            feed(s, outs, &mut log);
        })
        .unwrap();
    let outs = client.on_input(VirtualTime(t_end), ClientInput::Finish);
    feed(&mut sched, outs, &mut log);
    (log, currents)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn client_stays_inside_the_catalog_and_its_buffer_model(
        rates in proptest::collection::vec((500_000u64..40_000_000, prop::bool::weighted(0.05)), 1..20),
        secs in 10u64..90,
    ) {
        let cat = catalog();
        let t_end = secs * 1_000_000;
        let (log, currents) = drive(&rates, t_end);
        prop_assert!(currents.iter().all(|b| cat.bitrates.contains(b)));
        let mut arrivals = Vec::new();
        let mut stalls = Vec::new();
        for (t, o) in &log {
            match o {
                ClientOutput::Request { path, .. } => {
                    prop_assert!(cat.parse_path(path).is_some(), "{}", path);
                    if let Some(Resource::Chunk { bitrate, .. }) = cat.parse_path(path) {
                        prop_assert!(cat.bitrates.contains(&bitrate));
                    }
                }
                ClientOutput::BitrateSwitch { from, to } => {
                    prop_assert!(cat.bitrates.contains(from) && cat.bitrates.contains(to) && from != to);
                }
                ClientOutput::ChunkArrival { bitrate, size, .. } => {
                    prop_assert_eq!(*size, bitrate * D / 8_000_000);
                    arrivals.push(*t);
                }
                ClientOutput::Stall { start, end, .. } => {
                    prop_assert!(start <= end);
                    stalls.push((*start, *end));
                }
                _ => {}
            }
        }
        if rates.iter().all(|(r, lost)| !lost && *r >= 2_000_000) {
            // The first chunk is fetched at the lowest bitrate and fits in the timeout.
            prop_assert!(!arrivals.is_empty());
        }
        let replay = replay_stalls(VirtualTime(D), &arrivals, VirtualTime(t_end));
        let total = |v: &[(VirtualTime, VirtualTime)]| v.iter().map(|(a, b)| b.as_micros() - a.as_micros()).sum::<u64>();
        prop_assert_eq!(total(&stalls), total(&replay));
    }

    #[test]
    fn eligible_bitrate_is_in_the_catalog(tput in 0.0f64..1e9, alpha in 0.1f64..1.0) {
        let cat = catalog();
        let b = eligible_bitrate(&cat.bitrates, alpha, tput);
        prop_assert!(cat.bitrates.contains(&b));
        prop_assert!(b as f64 <= alpha * tput || b == cat.bitrates[0]);
    }

    #[test]
    fn replayed_stalls_are_ordered_and_account_for_the_gap(
        gaps in proptest::collection::vec(0u64..6_000_000, 1..40),
        tail in 0u64..10_000_000,
    ) {
        let mut t = 0;
        let arrivals: Vec<VirtualTime> = gaps.iter().map(|g| { t += g; VirtualTime(t) }).collect();
        let t_end = VirtualTime(t + tail);
        let stalls = replay_stalls(VirtualTime(D), &arrivals, t_end);
        for w in stalls.windows(2) {
            prop_assert!(w[0].1 <= w[1].0);
        }
        let stalled: u64 = stalls.iter().map(|(a, b)| b.as_micros() - a.as_micros()).sum();
        // Wall time since the first arrival is either playing or stalled.
        let played = (arrivals.len() as u64 * D).min(t_end.as_micros() - arrivals[0].as_micros() - stalled);
        prop_assert!(played + stalled >= t_end.as_micros() - arrivals[0].as_micros());
        prop_assert!(stalled + arrivals[0].as_micros() + arrivals.len() as u64 * D >= t_end.as_micros());
    }

    #[test]
    fn acquisition_is_measured_once_from_the_zap(
        zap_at in 0u64..1_000_000,
        pkts in proptest::collection::vec((0u64..100_000, 1u32..3), 1..30),
    ) {
        let mut stb = Stb::default();
        stb.zap(VirtualTime(zap_at), 1);
        let mut t = zap_at;
        let mut measured = Vec::new();
        for (gap, ch) in pkts {
            t += gap;
            if let Some(a) = stb.on_packet(VirtualTime(t), ch) {
                measured.push((t, a));
            }
        }
        prop_assert!(measured.len() <= 1);
        if let Some((t, a)) = measured.first() {
            prop_assert_eq!(a.as_micros(), t - zap_at);
        }
    }
}

#[test]
fn chunk_size_follows_bitrate_and_duration() {
    let cat = catalog();
    for b in &cat.bitrates {
        assert_eq!(cat.chunk_size(*b), b * 2 / 8);
    }
}
