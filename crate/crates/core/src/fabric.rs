//! Simulated forwarding plane.
//!
//! Links are store-and-forward FIFO pipes with a capacity, a propagation
//! latency and an up/down state. Forwarding nodes hold nothing but their
//! attached link ids: the egress set of a packet is a pure function of its
//! FID and of which attached links are up.
//!
//! The fabric does not run events itself; the scenario engine asks it when a
//! transmission would arrive and later confirms the arrival, which fails if
//! the link went down in the meantime.

use std::collections::BTreeSet;
use std::rc::Rc;

use thiserror::Error;

use crate::fid::{should_forward, Fid, LinkId};
use crate::pce::ContentName;
use crate::simkernel::VirtualTime;
use crate::topology::{LinkIdx, NodeId, NodeRole, TopologyEvent, TopologyGraph};

/// Host (IP endpoint) identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
#[serde(transparent)]
pub struct HostId(pub usize);

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Header {
    /// Source-routed ICN packet.
    Icn { fid: Fid },
    /// Plain IP unicast between hosts.
    IpUnicast { src: HostId, dst: HostId },
    /// IP multicast data for a group.
    IpMulticast { group: u32 },
    /// IGMP membership report/leave travelling toward the querier.
    Igmp { group: u32, host: HostId, join: bool },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PacketKind {
    Data,
    Control,
}

/// Content class, used for per-class byte accounting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrafficClass {
    Chunk,
    Playlist,
    Request,
    Iptv,
    Igmp,
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Payload {
    /// Part `seq` of `total` of an application message.
    Fragment { msg: u64, seq: u32, total: u32 },
    Iptv { channel: u32, seq: u64 },
    Empty,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Packet {
    pub id: u64,
    pub header: Header,
    pub name: ContentName,
    pub kind: PacketKind,
    pub class: TrafficClass,
    pub size: u32,
    pub payload: Rc<Payload>,
    pub origin: NodeId,
    pub ttl: u8,
    /// Links the sender meant to use. Telemetry only, never consulted for
    /// forwarding; lets bloom false positives be counted.
    pub intended: Option<Rc<BTreeSet<LinkIdx>>>,
}

pub const DEFAULT_TTL: u8 = 64;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FabricError {
    #[error("unknown node {0:?}")]
    UnknownNode(NodeId),
    #[error("unknown link {0:?}")]
    UnknownLink(LinkIdx),
    #[error("link {0:?} is already {1}")]
    NoOpTransition(LinkIdx, &'static str),
    #[error("malformed packet: {0}")]
    Malformed(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropReason {
    LinkDown,
    QueueFull,
    NoEgress,
    TtlExpired,
    LostInFlight,
}

impl DropReason {
    pub fn as_str(self) -> &'static str {
        match self {
            DropReason::LinkDown => "link_down",
            DropReason::QueueFull => "queue_full",
            DropReason::NoEgress => "no_egress",
            DropReason::TtlExpired => "ttl",
            DropReason::LostInFlight => "lost_in_flight",
        }
    }
}

/// A stateless forwarding node: its id and the ids of its outgoing links.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ForwardingNode {
    pub node: NodeId,
    pub role: NodeRole,
    ports: Vec<(LinkIdx, LinkId)>,
}

/// Result of applying the FID test at one node.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ForwardDecision {
    /// Up links that passed the test.
    pub egress: Vec<LinkIdx>,
    /// Down links that passed the test (their copies are dropped).
    pub blocked: Vec<LinkIdx>,
}

impl ForwardingNode {
    pub fn ports(&self) -> impl Iterator<Item = LinkIdx> + '_ {
        self.ports.iter().map(|(l, _)| *l)
    }

    /// FID test over every attached link except the reverse of `ingress`.
    pub fn forward_step<F>(&self, fid: &Fid, ingress: Option<LinkIdx>, is_up: F) -> ForwardDecision
    where
        F: Fn(LinkIdx) -> bool,
    {
        let back = ingress.map(LinkIdx::reverse);
        let mut d = ForwardDecision::default();
        for (l, lid) in &self.ports {
            if Some(*l) == back || !should_forward(fid, lid) {
                continue;
            }
            if is_up(*l) {
                d.egress.push(*l);
            } else {
                d.blocked.push(*l);
            }
        }
        d
    }

    /// Digest of the node's forwarding configuration. FNs have no other state.
    pub fn state_digest(&self) -> String {
        let mut s = format!("{}:", self.node.0);
        for (l, lid) in &self.ports {
            s.push_str(&format!("{}={};", l.0, lid.bits.to_hex()));
        }
        hex::encode(<sha2::Sha256 as sha2::Digest>::digest(s.as_bytes()))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LinkCounters {
    pub tx_bytes: u64,
    pub tx_packets: u64,
    pub rx_bytes: u64,
    pub rx_packets: u64,
    pub drops: u64,
    pub false_positives: u64,
    pub queue_peak_bytes: u64,
}

#[derive(Debug, Clone, Default)]
struct LinkRuntime {
    busy_until: VirtualTime,
    generation: u64,
    counters: LinkCounters,
}

/// Outcome of putting a packet on a link.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Transmission {
    pub link: LinkIdx,
    pub arrival: VirtualTime,
    pub generation: u64,
}

#[derive(Debug, Clone)]
pub struct Fabric {
    topo: TopologyGraph,
    nodes: Vec<ForwardingNode>,
    links: Vec<LinkRuntime>,
    queue_cap_bytes: Option<u64>,
}

impl Fabric {
    /// Builds the forwarding plane; link ids must already be assigned.
    pub fn new(topo: TopologyGraph, queue_cap_bytes: Option<u64>) -> Self {
        let nodes = topo
            .nodes()
            .map(|(id, n)| ForwardingNode {
                node: id,
                role: n.role,
                ports: topo
                    .out_links(id)
                    .iter()
                    .map(|l| (*l, topo.lid(*l).clone()))
                    .collect(),
            })
            .collect();
        let links = vec![LinkRuntime::default(); topo.link_count()];
        Fabric {
            topo,
            nodes,
            links,
            queue_cap_bytes,
        }
    }

    pub fn topology(&self) -> &TopologyGraph {
        &self.topo
    }

    pub fn node(&self, n: NodeId) -> Result<&ForwardingNode, FabricError> {
        self.nodes.get(n.0).ok_or(FabricError::UnknownNode(n))
    }

    pub fn is_up(&self, l: LinkIdx) -> bool {
        self.topo.is_up(l)
    }

    pub fn counters(&self, l: LinkIdx) -> &LinkCounters {
        &self.links[l.0].counters
    }

    /// Validates a packet about to be injected at `node`.
    pub fn check_inject(&self, node: NodeId, pkt: &Packet) -> Result<(), FabricError> {
        if node.0 >= self.nodes.len() {
            return Err(FabricError::UnknownNode(node));
        }
        if pkt.size == 0 {
            return Err(FabricError::Malformed("zero size"));
        }
        if let Header::Icn { fid } = &pkt.header {
            if fid.width() != self.topo.fid_width() {
                return Err(FabricError::Malformed("FID width"));
            }
        }
        Ok(())
    }

    /// FID forwarding decision for an ICN packet at `node`.
    pub fn forward_step(
        &self,
        node: NodeId,
        fid: &Fid,
        ingress: Option<LinkIdx>,
    ) -> Result<ForwardDecision, FabricError> {
        let n = self.node(node)?;
        Ok(n.forward_step(fid, ingress, |l| self.topo.is_up(l)))
    }

    /// Queues `pkt` on `link` at time `now`.
    pub fn transmit(
        &mut self,
        link: LinkIdx,
        pkt: &Packet,
        now: VirtualTime,
    ) -> Result<Transmission, DropReason> {
        let info = self.topo.link(link);
        let rt = &mut self.links[link.0];
        if !info.up {
            rt.counters.drops += 1;
            return Err(DropReason::LinkDown);
        }
        let backlog_us = rt.busy_until.saturating_sub(now).as_micros();
        let backlog_bytes = (backlog_us as u128 * info.capacity_bps as u128 / 8_000_000) as u64;
        if let Some(cap) = self.queue_cap_bytes {
            if backlog_bytes + pkt.size as u64 > cap {
                rt.counters.drops += 1;
                return Err(DropReason::QueueFull);
            }
        }
        rt.counters.queue_peak_bytes = rt.counters.queue_peak_bytes.max(backlog_bytes);
        let start = rt.busy_until.max(now);
        let end = start + serialization(pkt.size, info.capacity_bps);
        rt.busy_until = end;
        rt.counters.tx_bytes += pkt.size as u64;
        rt.counters.tx_packets += 1;
        if let Some(intended) = &pkt.intended {
            if !intended.contains(&link) {
                rt.counters.false_positives += 1;
            }
        }
        Ok(Transmission {
            link,
            arrival: end + info.latency,
            generation: rt.generation,
        })
    }

    /// Confirms an arrival; false if the link failed while the packet was
    /// queued or in flight.
    pub fn arrive(&mut self, tx: &Transmission, size: u32) -> bool {
        let rt = &mut self.links[tx.link.0];
        if rt.generation != tx.generation {
            rt.counters.drops += 1;
            return false;
        }
        rt.counters.rx_bytes += size as u64;
        rt.counters.rx_packets += 1;
        true
    }

    /// Changes the state of the physical link carrying `link`. Taking a link
    /// down loses everything queued or in flight on it.
    pub fn set_link_state(
        &mut self,
        link: LinkIdx,
        up: bool,
        now: VirtualTime,
    ) -> Result<TopologyEvent, FabricError> {
        if link.0 >= self.topo.link_count() {
            return Err(FabricError::UnknownLink(link));
        }
        if self.topo.is_up(link) == up {
            return Err(FabricError::NoOpTransition(link, if up { "up" } else { "down" }));
        }
        self.topo.set_physical_state(link, up);
        if !up {
            for l in [link, link.reverse()] {
                let rt = &mut self.links[l.0];
                rt.generation += 1;
                rt.busy_until = now;
            }
        }
        Ok(TopologyEvent { link, up, at: now })
    }
}

/// Serialization time of `size` bytes at `capacity_bps`, rounded up to a
/// whole microsecond.
pub fn serialization(size: u32, capacity_bps: u64) -> VirtualTime {
    if capacity_bps == 0 {
        return VirtualTime::ZERO;
    }
    let bits = size as u128 * 8 * 1_000_000;
    VirtualTime(bits.div_ceil(capacity_bps as u128) as u64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fid::{encode_path, FidConfig};

    fn line() -> (Fabric, [NodeId; 3], [LinkIdx; 2]) {
        let mut g = TopologyGraph::new();
        let a = g.add_node("a", NodeRole::Nap).unwrap();
        let b = g.add_node("b", NodeRole::Fn).unwrap();
        let c = g.add_node("c", NodeRole::Nap).unwrap();
        let (ab, _) = g.add_link(a, b, 8_000_000, VirtualTime(100), "ab").unwrap();
        let (bc, _) = g.add_link(b, c, 8_000_000, VirtualTime(100), "bc").unwrap();
        g.assign_link_ids(&FidConfig::exact(8), 0).unwrap();
        (Fabric::new(g, None), [a, b, c], [ab, bc])
    }

    fn pkt(fid: Fid, size: u32) -> Packet {
        Packet {
            id: 0,
            header: Header::Icn { fid },
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

    #[test]
    fn zero_fid_forwards_nowhere() {
        let (f, [a, ..], _) = line();
        let d = f.forward_step(a, &Fid::zero(8), None).unwrap();
        assert!(d.egress.is_empty() && d.blocked.is_empty());
    }

    #[test]
    fn single_link_timing_is_latency_plus_serialization() {
        let (mut f, [a, ..], [ab, _]) = line();
        let fid = encode_path(8, [f.topology().lid(ab)]).unwrap();
        let d = f.forward_step(a, &fid, None).unwrap();
        assert_eq!(d.egress, vec![ab]);
        // 1000 bytes at 8 Mb/s = 1 ms, plus 100 us latency.
        let tx = f.transmit(ab, &pkt(fid, 1000), VirtualTime(0)).unwrap();
        assert_eq!(tx.arrival, VirtualTime(1_100));
        // A second packet queues behind the first.
        let tx2 = f.transmit(ab, &pkt(Fid::zero(8), 1000), VirtualTime(0)).unwrap();
        assert_eq!(tx2.arrival, VirtualTime(2_100));
        assert_eq!(f.counters(ab).tx_bytes, 2000);
    }

    #[test]
    fn down_link_blocks_and_loses_in_flight() {
        let (mut f, [_, b, _], [ab, bc]) = line();
        let fid = encode_path(8, [f.topology().lid(ab), f.topology().lid(bc)]).unwrap();
        let tx = f.transmit(bc, &pkt(fid.clone(), 100), VirtualTime(0)).unwrap();
        let ev = f.set_link_state(bc, false, VirtualTime(10)).unwrap();
        assert!(!ev.up);
        assert!(!f.arrive(&tx, 100));
        let d = f.forward_step(b, &fid, Some(ab)).unwrap();
        assert_eq!(d.blocked, vec![bc]);
        assert!(d.egress.is_empty());
        assert!(f.set_link_state(bc, false, VirtualTime(10)).is_err());
        f.set_link_state(bc, true, VirtualTime(20)).unwrap();
        let d = f.forward_step(b, &fid, Some(ab)).unwrap();
        assert_eq!(d.egress, vec![bc]);
    }

    #[test]
    fn queue_cap_discards() {
        let mut g = TopologyGraph::new();
        let a = g.add_node("a", NodeRole::Nap).unwrap();
        let b = g.add_node("b", NodeRole::Nap).unwrap();
        let (ab, _) = g.add_link(a, b, 8_000, VirtualTime(0), "ab").unwrap();
        g.assign_link_ids(&FidConfig::exact(8), 0).unwrap();
        let mut f = Fabric::new(g, Some(1500));
        assert!(f.transmit(ab, &pkt(Fid::zero(8), 1000), VirtualTime(0)).is_ok());
        assert_eq!(
            f.transmit(ab, &pkt(Fid::zero(8), 1000), VirtualTime(0)),
            Err(DropReason::QueueFull)
        );
    }

    #[test]
    fn ingress_reverse_is_never_used() {
        let (f, [_, b, _], [ab, _]) = line();
        let all = encode_path(8, (0..4).map(|i| f.topology().lid(LinkIdx(i)))).unwrap();
        let d = f.forward_step(b, &all, Some(ab)).unwrap();
        assert!(!d.egress.contains(&ab.reverse()));
    }
}
