use pointsim::fabric::HostId;
use pointsim::nap::{segment_count, segment_size, Cnap, CnapAction, Demux, HttpRequest, MatchOutcome, RequestFingerprint, Snap};
use pointsim::simkernel::VirtualTime;
use pointsim::topology::NodeId;
use proptest::prelude::*;
use std::collections::{BTreeMap, BTreeSet};

#[derive(Debug, Clone)]
enum Op {
    Match { path: u8, sub: usize, gap: u64 },
    CloseDue,
    Respond,
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        4 => (0u8..4, 0usize..6, 0u64..30_000).prop_map(|(path, sub, gap)| Op::Match { path, sub, gap }),
        1 => Just(Op::CloseDue),
        1 => Just(Op::Respond),
    ]
}

fn fp(path: u8) -> RequestFingerprint {
    RequestFingerprint::parse(&HttpRequest::get("tv.example", &format!("/live/2000k/seg{path}.ts"))).unwrap()
}

proptest! {
    #[test]
    fn one_upstream_request_per_window(ops in proptest::collection::vec(op(), 1..200), window in 1u64..50_000) {
        let window = VirtualTime(window);
        let mut snap = Snap::new(NodeId(0), window, true);
        let mut now = VirtualTime::ZERO;
        // group -> (opened at, close at)
        let mut open: BTreeMap<u64, VirtualTime> = BTreeMap::new();
        let mut serving: Vec<u64> = Vec::new();
        let mut served_members = 0usize;
        let mut matched = 0usize;
        for o in ops {
            match o {
                Op::Match { path, sub, gap } => {
                    now += VirtualTime(gap);
                    // Windows that have expired close before the new request.
                    let due: Vec<u64> = open.iter().filter(|(_, c)| **c <= now).map(|(g, _)| *g).collect();
                    for g in due {
                        open.remove(&g);
                        prop_assert!(snap.close(g).is_some());
                        serving.push(g);
                    }
                    match snap.on_match(now, &fp(path), NodeId(sub + 1)) {
                        MatchOutcome::Opened { group, close_at } => {
                            prop_assert_eq!(close_at, now + window);
                            open.insert(group, close_at);
                            matched += 1;
                        }
                        MatchOutcome::Joined { group } => {
                            prop_assert!(open.contains_key(&group));
                            matched += 1;
                        }
                        MatchOutcome::AlreadyMember { group } => prop_assert!(open.contains_key(&group)),
                    }
                }
                Op::CloseDue => {
                    if let Some(c) = open.values().min().copied() {
                        now = now.max(c);
                        let due: Vec<u64> = open.iter().filter(|(_, c)| **c <= now).map(|(g, _)| *g).collect();
                        for g in due {
                            open.remove(&g);
                            let group = snap.close(g).unwrap();
                            let members: BTreeSet<_> = group.members.iter().collect();
                            prop_assert_eq!(members.len(), group.members.len());
                            prop_assert!(now.saturating_sub(group.window_open_at) <= window);
                            serving.push(g);
                        }
                    }
                }
                Op::Respond => {
                    if let Some(g) = serving.pop() {
                        let group = snap.take_for_response(g).unwrap();
                        served_members += group.members.len();
                        prop_assert!(snap.close(g).is_none());
                    }
                }
            }
        }
        for (g, _) in std::mem::take(&mut open) {
            snap.close(g).unwrap();
            serving.push(g);
        }
        for g in serving {
            served_members += snap.take_for_response(g).unwrap().members.len();
        }
        prop_assert_eq!(served_members, matched);
        for p in 0..4 {
            let name = fp(p).name();
            prop_assert_eq!(snap.upstream_requests(&name), snap.windows_opened(&name));
        }
    }

    #[test]
    fn cnap_answers_every_waiting_client_once(reqs in proptest::collection::vec((0usize..5, 0u8..3, any::<bool>()), 1..100)) {
        let mut cnap = Cnap::new(NodeId(1));
        let mut waiting: BTreeMap<u8, BTreeMap<HostId, u64>> = BTreeMap::new();
        let mut msg = 0;
        for (i, (client, path, respond)) in reqs.into_iter().enumerate() {
            let req = HttpRequest::get("tv.example", &format!("/live/2000k/seg{path}.ts"));
            let name = fp(path).name();
            let first = waiting.get(&path).is_none_or(|w| w.is_empty());
            let action = cnap.handle_http(HostId(client), i as u64, &req);
            if first {
                prop_assert_eq!(action, CnapAction::Subscribe(name));
            } else {
                prop_assert_eq!(action, CnapAction::MergedLocally(name));
            }
            waiting.entry(path).or_default().insert(HostId(client), i as u64);
            if respond {
                msg += 1;
                prop_assert_eq!(cnap.on_fragment(&name, msg, 2), Demux::Partial);
                match cnap.on_fragment(&name, msg, 2) {
                    Demux::Complete { clients, unsubscribe, .. } => {
                        prop_assert_eq!(unsubscribe, name);
                        let got: BTreeMap<HostId, u64> = clients.iter().map(|c| (c.client, c.req)).collect();
                        prop_assert_eq!(got.len(), clients.len());
                        prop_assert_eq!(&got, &waiting.remove(&path).unwrap());
                    }
                    other => return Err(TestCaseError::fail(format!("{other:?}"))),
                }
                prop_assert_eq!(cnap.on_fragment(&name, msg + 1000, 1), Demux::Spurious);
            }
        }
    }

    #[test]
    fn segmentation_covers_the_message(size in 1u64..200_000) {
        let n = segment_count(size);
        let total: u64 = (0..n).map(|s| segment_size(size, s) as u64).sum();
        prop_assert_eq!(total, size);
        prop_assert!((0..n).all(|s| segment_size(size, s) > 0));
    }
}

#[test]
fn malformed_requests_stay_on_the_ip_side() {
    let mut cnap = Cnap::new(NodeId(1));
    let bad = HttpRequest::get("tv.example", "no-slash");
    assert!(matches!(cnap.handle_http(HostId(0), 7, &bad), CnapAction::ErrorResponse { req: 7, .. }));
}
