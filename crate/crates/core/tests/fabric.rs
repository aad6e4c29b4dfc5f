mod common;

use common::{build, graph, physical_count};
use pointsim::fabric::{serialization, Fabric, Header, Packet, PacketKind, Payload, TrafficClass, DEFAULT_TTL};
use pointsim::fid::{encode_path, FidConfig};
use pointsim::pce::ContentName;
use pointsim::simkernel::VirtualTime;
use pointsim::topology::{LinkIdx, NodeId, NodeRole, TopologyGraph};
use proptest::prelude::*;
use std::rc::Rc;

fn packet(id: u64, size: u32, m: usize) -> Packet {
    Packet {
        id,
        header: Header::Icn { fid: pointsim::fid::Fid::zero(m) },
        name: ContentName::new(1, 1),
        kind: PacketKind::Data,
        class: TrafficClass::Other,
        size,
        payload: Rc::new(Payload::Empty),
        origin: NodeId(0),
        ttl: DEFAULT_TTL,
        intended: None,
    }
}

fn pair(capacity: u64, latency: u64) -> Fabric {
    let mut t = TopologyGraph::new();
    let a = t.add_node("a", NodeRole::Fn).unwrap();
    let b = t.add_node("b", NodeRole::Fn).unwrap();
    t.add_link(a, b, capacity, VirtualTime(latency), "ab").unwrap();
    t.assign_link_ids(&FidConfig::default(), 0).unwrap();
    Fabric::new(t, None)
}

proptest! {
    #[test]
    fn links_serialize_in_fifo_order(
        sends in proptest::collection::vec((0u64..2_000, 40u32..1500), 1..100),
        capacity in 1_000_000u64..1_000_000_000,
        latency in 0u64..5_000,
    ) {
        let mut f = pair(capacity, latency);
        let mut now = 0;
        let mut prev_arrival = VirtualTime::ZERO;
        let mut bytes = 0;
        for (i, (gap, size)) in sends.iter().enumerate() {
            now += gap;
            let tx = f.transmit(LinkIdx(0), &packet(i as u64, *size, 256), VirtualTime(now)).unwrap();
            let floor = VirtualTime(now) + serialization(*size, capacity) + VirtualTime(latency);
            prop_assert!(tx.arrival >= floor);
            prop_assert!(tx.arrival >= prev_arrival + serialization(*size, capacity));
            prev_arrival = tx.arrival;
            bytes += *size as u64;
            prop_assert!(f.arrive(&tx, *size));
        }
        let c = f.counters(LinkIdx(0));
        prop_assert_eq!(c.tx_bytes, bytes);
        prop_assert_eq!(c.rx_bytes, bytes);
        prop_assert_eq!(c.tx_packets, sends.len() as u64);
    }

    #[test]
    fn queue_cap_accounts_for_every_packet(
        sizes in proptest::collection::vec(40u32..1500, 1..200),
        cap in 1_500u64..20_000,
    ) {
        let mut t = TopologyGraph::new();
        let a = t.add_node("a", NodeRole::Fn).unwrap();
        let b = t.add_node("b", NodeRole::Fn).unwrap();
        t.add_link(a, b, 10_000_000, VirtualTime(100), "ab").unwrap();
        t.assign_link_ids(&FidConfig::default(), 0).unwrap();
        let mut f = Fabric::new(t, Some(cap));
        let mut sent = 0;
        for (i, s) in sizes.iter().enumerate() {
            if f.transmit(LinkIdx(0), &packet(i as u64, *s, 256), VirtualTime::ZERO).is_ok() {
                sent += 1;
            }
        }
        let c = f.counters(LinkIdx(0));
        prop_assert_eq!(c.tx_packets, sent);
        prop_assert_eq!(c.tx_packets + c.drops, sizes.len() as u64);
        prop_assert!(c.queue_peak_bytes <= cap);
    }

    #[test]
    fn packets_in_flight_on_a_failed_link_are_lost(size in 40u32..1500, at in 0u64..100) {
        let mut f = pair(1_000_000, 1_000);
        let tx = f.transmit(LinkIdx(0), &packet(0, size, 256), VirtualTime::ZERO).unwrap();
        f.set_link_state(LinkIdx(0), false, VirtualTime(at)).unwrap();
        prop_assert!(!f.arrive(&tx, size));
        prop_assert!(f.transmit(LinkIdx(0), &packet(1, size, 256), VirtualTime(at)).is_err());
        let c = f.counters(LinkIdx(0));
        prop_assert_eq!(c.tx_packets, c.rx_packets + c.drops - 1);
    }

    #[test]
    fn forwarding_skips_ingress_and_splits_down_links(
        (g, down, members) in graph(16).prop_flat_map(|g| {
            let p = physical_count(&g);
            (Just(g), proptest::collection::vec(any::<bool>(), p), proptest::collection::vec(any::<bool>(), 2 * p))
        }),
        bloom in any::<bool>(),
    ) {
        let cfg = if bloom { FidConfig::bloom(64, 3) } else { FidConfig::exact(256) };
        let topo = build(&g, &cfg);
        let m = topo.fid_width();
        let chosen: Vec<LinkIdx> = members.iter().enumerate().filter(|(_, b)| **b).map(|(i, _)| LinkIdx(i)).collect();
        let fid = encode_path(m, chosen.iter().map(|l| topo.lid(*l))).unwrap();
        let mut f = Fabric::new(topo, None);
        for (p, d) in down.iter().enumerate() {
            if *d {
                f.set_link_state(LinkIdx(2 * p), false, VirtualTime::ZERO).unwrap();
            }
        }
        for (l, link) in f.topology().links() {
            let node = link.dst;
            let d = f.forward_step(node, &fid, Some(l)).unwrap();
            prop_assert!(!d.egress.contains(&l.reverse()) && !d.blocked.contains(&l.reverse()));
            prop_assert!(d.egress.iter().all(|e| f.is_up(*e)));
            prop_assert!(d.blocked.iter().all(|e| !f.is_up(*e)));
            if !bloom {
                for e in f.topology().out_links(node) {
                    let expect = chosen.contains(e) && *e != l.reverse();
                    prop_assert_eq!(d.egress.contains(e) || d.blocked.contains(e), expect);
                }
            }
        }
    }
}
