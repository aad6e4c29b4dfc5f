//! The conventional comparison network: learning switches on a spanning
//! tree, IGMP snooping, and DNS-based server failover.
//!
//! Every node of the topology acts as a switch in this mode. The spanning
//! tree is rooted at the lowest node index and built breadth-first over up
//! links in link-index order, so of two parallel trunks the first one is
//! active and the second blocked.
//!
//! A tree change is not instant. For `reconvergence_delay` after a link
//! event only ports whose role does not change keep forwarding; at the end
//! the new tree takes over and all learned state (MAC and snooping tables)
//! is flushed.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use sha2::{Digest, Sha256};

use crate::fabric::{Header, HostId};
use crate::simkernel::VirtualTime;
use crate::topology::{LinkIdx, NodeId, NodeRole, TopologyGraph};

/// Spanning tree as a set of physical link numbers.
pub type Tree = BTreeSet<usize>;

/// Breadth-first spanning tree over up links from `root`.
pub fn compute_tree(topo: &TopologyGraph, root: NodeId) -> Tree {
    let mut tree = Tree::new();
    let mut seen = vec![false; topo.node_count()];
    seen[root.0] = true;
    let mut q = VecDeque::from([root]);
    while let Some(u) = q.pop_front() {
        let mut out: Vec<LinkIdx> = topo.out_links(u).to_vec();
        out.sort();
        for l in out {
            let link = topo.link(l);
            if link.up && !seen[link.dst.0] {
                seen[link.dst.0] = true;
                tree.insert(l.physical());
                q.push_back(link.dst);
            }
        }
    }
    tree
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StpState {
    pub root: NodeId,
    /// Tree in force outside reconvergence.
    pub active: Tree,
    /// Links currently forwarding.
    pub forwarding: Tree,
    pub reconverging_until: Option<VirtualTime>,
    pub delay: VirtualTime,
    pub epoch: u64,
}

impl StpState {
    pub fn new(topo: &TopologyGraph, delay: VirtualTime) -> Self {
        let root = topo
            .nodes()
            .find(|(_, n)| n.role != NodeRole::Pce)
            .map(|(id, _)| id)
            .unwrap_or(NodeId(0));
        let active = compute_tree(topo, root);
        StpState {
            root,
            forwarding: active.clone(),
            active,
            reconverging_until: None,
            delay,
            epoch: 0,
        }
    }

    /// Reacts to a link event. Returns the end of reconvergence if the tree
    /// has to change; a new event during reconvergence restarts the timer.
    pub fn on_link_event(&mut self, topo: &TopologyGraph, now: VirtualTime) -> Option<VirtualTime> {
        let target = compute_tree(topo, self.root);
        if target == self.active && self.reconverging_until.is_none() {
            // Not a tree link; just stop forwarding on it if it went down.
            self.forwarding = up_only(topo, &self.active);
            return None;
        }
        self.forwarding = up_only(
            topo,
            &self.forwarding.intersection(&target).copied().collect(),
        );
        let end = now + self.delay;
        self.reconverging_until = Some(end);
        Some(end)
    }

    /// Completes reconvergence at `now` if `end` is still the pending one.
    pub fn finish(&mut self, topo: &TopologyGraph, end: VirtualTime) -> bool {
        if self.reconverging_until != Some(end) {
            return false;
        }
        self.active = compute_tree(topo, self.root);
        self.forwarding = self.active.clone();
        self.reconverging_until = None;
        self.epoch += 1;
        true
    }

    pub fn is_forwarding(&self, topo: &TopologyGraph, l: LinkIdx) -> bool {
        topo.is_up(l) && self.forwarding.contains(&l.physical())
    }
}

fn up_only(topo: &TopologyGraph, t: &Tree) -> Tree {
    t.iter().copied().filter(|p| topo.is_up(LinkIdx(p * 2))).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Port {
    Link(LinkIdx),
    Host(HostId),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IpSwitch {
    pub hosts: BTreeSet<HostId>,
    mac: BTreeMap<HostId, Port>,
    /// group -> egress port -> hosts that reported through it.
    snoop: BTreeMap<u32, BTreeMap<Port, BTreeSet<HostId>>>,
}

impl IpSwitch {
    pub fn snoop_ports(&self, group: u32) -> impl Iterator<Item = Port> + '_ {
        self.snoop.get(&group).into_iter().flat_map(|m| m.keys().copied())
    }

    pub fn learned(&self, host: HostId) -> Option<Port> {
        self.mac.get(&host).copied()
    }

    pub fn snoop_len(&self) -> usize {
        self.snoop.values().map(BTreeMap::len).sum()
    }

    /// Applies a membership report received on `port`.
    pub fn snoop(&mut self, group: u32, host: HostId, join: bool, port: Port) {
        if join {
            self.snoop.entry(group).or_default().entry(port).or_default().insert(host);
        } else if let Some(ports) = self.snoop.get_mut(&group) {
            if let Some(hs) = ports.get_mut(&port) {
                hs.remove(&host);
                if hs.is_empty() {
                    ports.remove(&port);
                }
            }
            if ports.is_empty() {
                self.snoop.remove(&group);
            }
        }
    }

    pub fn flush(&mut self) {
        self.mac.clear();
        self.snoop.clear();
    }

    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(format!("{:?}{:?}", self.mac, self.snoop));
        hex::encode(h.finalize())
    }
}

/// Where a packet goes from one switch.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IpDecision {
    pub links: Vec<LinkIdx>,
    pub hosts: Vec<HostId>,
}

impl IpDecision {
    pub fn copies(&self) -> usize {
        self.links.len() + self.hosts.len()
    }
}

/// Switch state of the whole IP network.
#[derive(Debug, Clone)]
pub struct IpNetwork {
    pub stp: StpState,
    switches: Vec<IpSwitch>,
    host_node: BTreeMap<HostId, NodeId>,
    /// Node where membership reports for a group terminate.
    querier: BTreeMap<u32, NodeId>,
}

impl IpNetwork {
    pub fn new(topo: &TopologyGraph, reconvergence_delay: VirtualTime) -> Self {
        IpNetwork {
            stp: StpState::new(topo, reconvergence_delay),
            switches: vec![IpSwitch::default(); topo.node_count()],
            host_node: BTreeMap::new(),
            querier: BTreeMap::new(),
        }
    }

    pub fn attach_host(&mut self, host: HostId, node: NodeId) {
        self.host_node.insert(host, node);
        self.switches[node.0].hosts.insert(host);
    }

    pub fn set_querier(&mut self, group: u32, node: NodeId) {
        self.querier.insert(group, node);
    }

    pub fn switch(&self, n: NodeId) -> &IpSwitch {
        &self.switches[n.0]
    }

    pub fn flush_all(&mut self) {
        for s in &mut self.switches {
            s.flush();
        }
    }

    /// Next link from `from` toward `to` along forwarding tree links.
    pub fn tree_next_hop(&self, topo: &TopologyGraph, from: NodeId, to: NodeId) -> Option<LinkIdx> {
        if from == to {
            return None;
        }
        let mut first: Vec<Option<LinkIdx>> = vec![None; topo.node_count()];
        let mut seen = vec![false; topo.node_count()];
        seen[from.0] = true;
        let mut q = VecDeque::from([from]);
        while let Some(u) = q.pop_front() {
            for &l in topo.out_links(u) {
                if !self.stp.is_forwarding(topo, l) {
                    continue;
                }
                let v = topo.link(l).dst;
                if seen[v.0] {
                    continue;
                }
                seen[v.0] = true;
                first[v.0] = if u == from { Some(l) } else { first[u.0] };
                if v == to {
                    return first[v.0];
                }
                q.push_back(v);
            }
        }
        None
    }

    fn flood(&self, topo: &TopologyGraph, node: NodeId, ingress: Option<LinkIdx>) -> Vec<LinkIdx> {
        let back = ingress.map(LinkIdx::reverse);
        topo.out_links(node)
            .iter()
            .copied()
            .filter(|l| Some(*l) != back && self.stp.is_forwarding(topo, *l))
            .collect()
    }

    /// Forwarding decision for a packet at `node`, arriving on `ingress`
    /// (a link into `node`) or from a local host. Updates learned state.
    pub fn ip_forward(
        &mut self,
        topo: &TopologyGraph,
        node: NodeId,
        header: &Header,
        ingress: Option<LinkIdx>,
        from_host: Option<HostId>,
    ) -> IpDecision {
        let in_port = match (ingress, from_host) {
            (Some(l), _) => Some(Port::Link(l.reverse())),
            (None, Some(h)) => Some(Port::Host(h)),
            _ => None,
        };
        // Frames arriving on a non-forwarding port are discarded.
        if let Some(l) = ingress {
            if !self.stp.is_forwarding(topo, l) {
                return IpDecision::default();
            }
        }
        let mut d = IpDecision::default();
        match header {
            Header::IpUnicast { src, dst } => {
                if let Some(p) = in_port {
                    self.switches[node.0].mac.insert(*src, p);
                }
                let sw = &self.switches[node.0];
                if sw.hosts.contains(dst) {
                    d.hosts.push(*dst);
                } else {
                    match sw.mac.get(dst) {
                        Some(Port::Link(l)) if self.stp.is_forwarding(topo, *l) && Some(*l) != ingress.map(LinkIdx::reverse) => {
                            d.links.push(*l)
                        }
                        Some(_) => {}
                        None => d.links = self.flood(topo, node, ingress),
                    }
                }
            }
            Header::IpMulticast { group } => {
                let back = ingress.map(LinkIdx::reverse);
                for p in self.switches[node.0].snoop_ports(*group) {
                    match p {
                        Port::Host(h) if Some(h) != from_host => d.hosts.push(h),
                        Port::Link(l) if Some(l) != back && self.stp.is_forwarding(topo, l) => d.links.push(l),
                        _ => {}
                    }
                }
            }
            Header::Igmp { group, host, join } => {
                if let Some(p) = in_port {
                    self.switches[node.0].snoop(*group, *host, *join, p);
                }
                if let Some(&q) = self.querier.get(group) {
                    if let Some(l) = self.tree_next_hop(topo, node, q) {
                        d.links.push(l);
                    }
                }
            }
            Header::Icn { .. } => {}
        }
        d
    }

    pub fn digest(&self, n: NodeId) -> String {
        self.switches[n.0].digest()
    }
}

/// A name with an ordered list of server addresses.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DnsRecord {
    pub name: String,
    pub addresses: Vec<HostId>,
}

/// Per-client resolver position. No fail-back: it only ever advances.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DnsClient {
    record: DnsRecord,
    index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailoverOutcome {
    Switched { from: HostId, to: HostId },
    /// Every address failed; starts over at the first one.
    Exhausted { from: HostId, to: HostId },
}

impl DnsClient {
    pub fn new(record: DnsRecord) -> Self {
        DnsClient { record, index: 0 }
    }

    pub fn current(&self) -> HostId {
        self.record.addresses[self.index]
    }

    pub fn on_timeout(&mut self) -> FailoverOutcome {
        let from = self.current();
        self.index += 1;
        if self.index >= self.record.addresses.len() {
            self.index = 0;
            FailoverOutcome::Exhausted {
                from,
                to: self.current(),
            }
        } else {
            FailoverOutcome::Switched {
                from,
                to: self.current(),
            }
        }
    }
}
