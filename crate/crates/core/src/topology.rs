//! Directed multigraph of nodes and links, shared by the PCE view, the
//! forwarding plane and the IP baseline.
//!
//! A physical link `i` between `a` and `b` becomes two directed links:
//! `2i` (a -> b) and `2i + 1` (b -> a). Both directions change state together.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::fid::{self, FidConfig, FidError, LinkId};
use crate::simkernel::VirtualTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub usize);

/// Directed link index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LinkIdx(pub usize);

impl LinkIdx {
    pub fn physical(self) -> usize {
        self.0 / 2
    }

    pub fn reverse(self) -> LinkIdx {
        LinkIdx(self.0 ^ 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeRole {
    /// Forwarding node (a switch).
    Fn,
    /// Network attachment point (an edge gateway).
    Nap,
    /// Path computation entity (control only, no data links).
    Pce,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Node {
    pub name: String,
    pub role: NodeRole,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DirLink {
    pub src: NodeId,
    pub dst: NodeId,
    pub capacity_bps: u64,
    pub latency: VirtualTime,
    pub up: bool,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TopologyError {
    #[error("unknown node {0:?}")]
    UnknownNode(String),
    #[error("unknown link {0:?}")]
    UnknownLink(String),
    #[error("link {0:?} connects a node to itself")]
    SelfLoop(String),
    #[error("more than one PCE node")]
    MultiplePce,
    #[error("duplicate node name {0:?}")]
    DuplicateNode(String),
    #[error(transparent)]
    Fid(#[from] FidError),
}

#[derive(Debug, Clone, Default)]
pub struct TopologyGraph {
    nodes: Vec<Node>,
    links: Vec<DirLink>,
    lids: Vec<LinkId>,
    out: Vec<Vec<LinkIdx>>,
    by_name: BTreeMap<String, NodeId>,
    m: usize,
}

impl TopologyGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_node(&mut self, name: &str, role: NodeRole) -> Result<NodeId, TopologyError> {
        if self.by_name.contains_key(name) {
            return Err(TopologyError::DuplicateNode(name.to_owned()));
        }
        if role == NodeRole::Pce && self.nodes.iter().any(|n| n.role == NodeRole::Pce) {
            return Err(TopologyError::MultiplePce);
        }
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            name: name.to_owned(),
            role,
        });
        self.out.push(Vec::new());
        self.by_name.insert(name.to_owned(), id);
        Ok(id)
    }

    /// Adds a bidirectional link; returns the (a -> b, b -> a) directed links.
    pub fn add_link(
        &mut self,
        a: NodeId,
        b: NodeId,
        capacity_bps: u64,
        latency: VirtualTime,
        label: &str,
    ) -> Result<(LinkIdx, LinkIdx), TopologyError> {
        if a.0 >= self.nodes.len() {
            return Err(TopologyError::UnknownNode(format!("#{}", a.0)));
        }
        if b.0 >= self.nodes.len() {
            return Err(TopologyError::UnknownNode(format!("#{}", b.0)));
        }
        if a == b {
            return Err(TopologyError::SelfLoop(label.to_owned()));
        }
        let fwd = LinkIdx(self.links.len());
        for (src, dst) in [(a, b), (b, a)] {
            self.links.push(DirLink {
                src,
                dst,
                capacity_bps,
                latency,
                up: true,
                label: label.to_owned(),
            });
        }
        let rev = fwd.reverse();
        self.out[a.0].push(fwd);
        self.out[b.0].push(rev);
        // Neighbour scan order: by destination index, then link index.
        for n in [a, b] {
            let links = &self.links;
            self.out[n.0].sort_by_key(|l| (links[l.0].dst, *l));
        }
        self.lids.clear();
        Ok((fwd, rev))
    }

    /// Assigns link ids to every directed link.
    pub fn assign_link_ids(&mut self, config: &FidConfig, seed: u64) -> Result<(), TopologyError> {
        self.lids = fid::assign_link_ids(self.links.len(), config, seed)?;
        self.m = config.m;
        Ok(())
    }

    pub fn fid_width(&self) -> usize {
        self.m
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn link_count(&self) -> usize {
        self.links.len()
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    pub fn nodes(&self) -> impl Iterator<Item = (NodeId, &Node)> {
        self.nodes.iter().enumerate().map(|(i, n)| (NodeId(i), n))
    }

    pub fn node_id(&self, name: &str) -> Option<NodeId> {
        self.by_name.get(name).copied()
    }

    pub fn link(&self, l: LinkIdx) -> &DirLink {
        &self.links[l.0]
    }

    pub fn links(&self) -> impl Iterator<Item = (LinkIdx, &DirLink)> {
        self.links.iter().enumerate().map(|(i, l)| (LinkIdx(i), l))
    }

    /// Directed link index of the first physical link with this label.
    pub fn link_by_label(&self, label: &str) -> Option<LinkIdx> {
        self.links
            .iter()
            .position(|l| l.label == label)
            .map(LinkIdx)
    }

    pub fn lid(&self, l: LinkIdx) -> &LinkId {
        &self.lids[l.0]
    }

    pub fn has_link_ids(&self) -> bool {
        self.lids.len() == self.links.len() && !self.links.is_empty()
    }

    pub fn out_links(&self, n: NodeId) -> &[LinkIdx] {
        &self.out[n.0]
    }

    pub fn is_up(&self, l: LinkIdx) -> bool {
        self.links[l.0].up
    }

    /// Sets both directions of the physical link carrying `l`.
    pub fn set_physical_state(&mut self, l: LinkIdx, up: bool) {
        let f = LinkIdx(l.physical() * 2);
        self.links[f.0].up = up;
        self.links[f.reverse().0].up = up;
    }

    /// Links between two nodes, lowest index first.
    pub fn links_between(&self, a: NodeId, b: NodeId) -> impl Iterator<Item = LinkIdx> + '_ {
        self.out[a.0]
            .iter()
            .copied()
            .filter(move |l| self.links[l.0].dst == b)
    }
}

/// A change of state on a physical link (identified by either direction).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopologyEvent {
    pub link: LinkIdx,
    pub up: bool,
    pub at: VirtualTime,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn directed_pairs_and_order() {
        let mut g = TopologyGraph::new();
        let a = g.add_node("a", NodeRole::Fn).unwrap();
        let b = g.add_node("b", NodeRole::Fn).unwrap();
        let c = g.add_node("c", NodeRole::Nap).unwrap();
        let (ac, ca) = g.add_link(a, c, 1, VirtualTime(1), "ac").unwrap();
        let (ab, _) = g.add_link(a, b, 1, VirtualTime(1), "ab").unwrap();
        assert_eq!(ca, ac.reverse());
        assert_eq!(g.out_links(a), &[ab, ac]);
        g.set_physical_state(ca, false);
        assert!(!g.is_up(ac) && !g.is_up(ca));
        assert!(g.add_link(a, a, 1, VirtualTime(1), "x").is_err());
        assert!(g.add_node("p", NodeRole::Pce).is_ok());
        assert_eq!(g.add_node("q", NodeRole::Pce), Err(TopologyError::MultiplePce));
    }
}
