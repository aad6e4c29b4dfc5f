//! Path computation entity: rendezvous (publisher/subscriber matching) and
//! topology management (paths, FIDs, path cache) in one component.
//!
//! The PCE keeps its own view of the topology, updated only through
//! [`Pce::on_topology_event`]. Unicast paths are cached per (source NAP,
//! destination NAP) and shared by every name; multicast trees are the OR of
//! cached unicast FIDs. When the topology changes, only the cache entries that
//! used the affected link are dropped and only the entry-point NAPs of
//! affected stream trees are sent new FIDs.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::fid::{encode_path, Fid};
use crate::topology::{LinkIdx, NodeId, TopologyEvent, TopologyGraph};

/// Name of a published information item.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ContentName {
    pub scope: u64,
    pub item: u64,
}

impl ContentName {
    /// Item value of a scope-wide registration.
    pub const ANY_ITEM: u64 = u64::MAX;

    pub fn new(scope: u64, item: u64) -> Self {
        ContentName { scope, item }
    }

    /// Hashes textual scope and item labels (e.g. FQDN and URL path).
    pub fn from_labels(scope: &str, item: &str) -> Self {
        ContentName {
            scope: label_hash(scope),
            item: label_hash(item),
        }
    }

    pub fn whole_scope(scope: u64) -> Self {
        ContentName {
            scope,
            item: Self::ANY_ITEM,
        }
    }

    /// True iff a registration under `self` covers `other`.
    pub fn covers(&self, other: &ContentName) -> bool {
        self.scope == other.scope && (self.item == Self::ANY_ITEM || self.item == other.item)
    }
}

/// Stable 64-bit hash of a label (never `ANY_ITEM`).
pub fn label_hash(s: &str) -> u64 {
    let d = Sha256::digest(s.as_bytes());
    let v = u64::from_le_bytes(d[..8].try_into().expect("8 bytes"));
    if v == ContentName::ANY_ITEM {
        v - 1
    } else {
        v
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PceError {
    #[error("no up path from node {src:?} to node {dst:?}")]
    Unreachable { src: NodeId, dst: NodeId },
    #[error("unknown node {0:?}")]
    UnknownNode(NodeId),
    #[error("unknown link {0:?}")]
    UnknownLink(LinkIdx),
    #[error("link {0:?} already in the requested state")]
    NoOpTransition(LinkIdx),
    #[error("no reachable publisher for {0:?}")]
    NoPublisher(ContentName),
    #[error("receivers {unreachable:?} unreachable; partial tree returned")]
    PartialTree { fid: Fid, unreachable: Vec<NodeId> },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathResult {
    pub links: Vec<LinkIdx>,
    pub fid: Fid,
    pub cost: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathCacheEntry {
    pub dst: NodeId,
    pub links: Vec<LinkIdx>,
    pub fid: Fid,
    pub epoch: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Publisher,
    Subscriber,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Registration {
    pub name: ContentName,
    pub node: NodeId,
}

/// A multicast tree: its FID and the directed links it encodes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tree {
    pub fid: Fid,
    pub links: BTreeSet<LinkIdx>,
}

/// Control messages the PCE sends to NAPs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PceNotice {
    /// `subscriber` wants `name`; `publisher` was selected to serve it.
    Match {
        publisher: NodeId,
        subscriber: NodeId,
        name: ContentName,
    },
    /// New tree FID for a stream the NAP is the entry point of.
    FidUpdate {
        nap: NodeId,
        name: ContentName,
        tree: Tree,
        epoch: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InvalidationReport {
    pub epoch: u64,
    pub invalidated: usize,
    pub notices: Vec<PceNotice>,
}

#[derive(Debug, Clone, Default)]
pub struct Pce {
    topo: TopologyGraph,
    epoch: u64,
    cache: BTreeMap<(NodeId, NodeId), PathCacheEntry>,
    publishers: BTreeMap<ContentName, BTreeSet<NodeId>>,
    subscribers: BTreeMap<ContentName, BTreeSet<NodeId>>,
    assignment: BTreeMap<(ContentName, NodeId), NodeId>,
    stream_scopes: BTreeSet<u64>,
    trees: BTreeMap<(ContentName, NodeId), Tree>,
    compute_calls: u64,
    violations: Vec<String>,
}

impl Pce {
    /// Creates a PCE over a topology whose link ids are already assigned.
    pub fn new(topo: TopologyGraph) -> Self {
        Pce {
            topo,
            ..Default::default()
        }
    }

    pub fn topology(&self) -> &TopologyGraph {
        &self.topo
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    /// Number of times a path was computed (cache misses included).
    pub fn compute_calls(&self) -> u64 {
        self.compute_calls
    }

    pub fn cache_len(&self) -> usize {
        self.cache.len()
    }

    pub fn cached(&self, src: NodeId, dst: NodeId) -> Option<&PathCacheEntry> {
        self.cache.get(&(src, dst))
    }

    /// Internal consistency failures (a handed-out FID using a down link).
    pub fn violations(&self) -> &[String] {
        &self.violations
    }

    /// Names under `scope` are long-lived streams: the PCE keeps their trees
    /// up to date at the publisher NAP.
    pub fn mark_stream_scope(&mut self, scope: u64) {
        self.stream_scopes.insert(scope);
    }

    pub fn subscriber_count(&self, name: &ContentName) -> usize {
        self.subscribers.get(name).map_or(0, |s| s.len())
    }

    pub fn assigned_publisher(&self, name: &ContentName, sub: NodeId) -> Option<NodeId> {
        self.assignment.get(&(*name, sub)).copied()
    }

    fn check_node(&self, n: NodeId) -> Result<(), PceError> {
        if n.0 < self.topo.node_count() {
            Ok(())
        } else {
            Err(PceError::UnknownNode(n))
        }
    }

    /// Shortest up path by hop count. BFS scans neighbours by ascending node
    /// index (then link index), which fixes the tie-break.
    pub fn compute_path(&mut self, src: NodeId, dst: NodeId) -> Result<PathResult, PceError> {
        self.check_node(src)?;
        self.check_node(dst)?;
        self.compute_calls += 1;
        let links = bfs_path(&self.topo, src, dst).ok_or(PceError::Unreachable { src, dst })?;
        let fid = self.encode(&links);
        Ok(PathResult {
            cost: links.len() as u32,
            links,
            fid,
        })
    }

    fn encode(&self, links: &[LinkIdx]) -> Fid {
        encode_path(
            self.topo.fid_width(),
            links.iter().map(|l| self.topo.lid(*l)),
        )
        .expect("uniform link id width")
    }

    fn entry_valid(&self, e: &PathCacheEntry) -> bool {
        e.epoch == self.epoch && e.links.iter().all(|l| self.topo.is_up(*l))
    }

    /// Cached unicast path, recomputed (and stored) when missing or stale.
    pub fn cached_path(&mut self, src: NodeId, dst: NodeId) -> Result<PathCacheEntry, PceError> {
        if let Some(e) = self.cache.get(&(src, dst)) {
            if self.entry_valid(e) {
                return Ok(e.clone());
            }
        }
        let p = self.compute_path(src, dst)?;
        let entry = PathCacheEntry {
            dst,
            links: p.links,
            fid: p.fid,
            epoch: self.epoch,
        };
        self.cache.insert((src, dst), entry.clone());
        Ok(entry)
    }

    fn publishers_of(&self, name: &ContentName) -> BTreeSet<NodeId> {
        let mut out = BTreeSet::new();
        for key in [*name, ContentName::whole_scope(name.scope)] {
            if let Some(p) = self.publishers.get(&key) {
                out.extend(p.iter().copied());
            }
        }
        out
    }

    /// Nearest reachable publisher of `name` for `subscriber` (lowest index on ties).
    pub fn select_publisher(
        &mut self,
        name: &ContentName,
        subscriber: NodeId,
    ) -> Result<NodeId, PceError> {
        let mut best: Option<(u32, NodeId)> = None;
        for p in self.publishers_of(name) {
            if let Ok(e) = self.cached_path(p, subscriber) {
                let c = (e.links.len() as u32, p);
                if best.is_none_or(|b| c < b) {
                    best = Some(c);
                }
            }
        }
        best.map(|(_, p)| p).ok_or(PceError::NoPublisher(*name))
    }

    /// OR of the cached unicast paths from `src` to each receiver.
    pub fn build_multicast_tree(
        &mut self,
        src: NodeId,
        receivers: &BTreeSet<NodeId>,
    ) -> Result<Tree, PceError> {
        let mut links = BTreeSet::new();
        let mut unreachable = Vec::new();
        for &r in receivers {
            match self.cached_path(src, r) {
                Ok(e) => links.extend(e.links.iter().copied()),
                Err(_) => unreachable.push(r),
            }
        }
        let fid = self.encode(&links.iter().copied().collect::<Vec<_>>());
        for l in &links {
            if !self.topo.is_up(*l) {
                self.violations.push(format!(
                    "epoch {}: tree from {:?} encodes down link {:?}",
                    self.epoch, src, l
                ));
            }
        }
        if unreachable.is_empty() {
            Ok(Tree { fid, links })
        } else {
            Err(PceError::PartialTree { fid, unreachable })
        }
    }

    pub fn build_multicast_fid(
        &mut self,
        src: NodeId,
        receivers: &BTreeSet<NodeId>,
    ) -> Result<Fid, PceError> {
        self.build_multicast_tree(src, receivers).map(|t| t.fid)
    }

    pub fn publish(&mut self, name: ContentName, node: NodeId) -> Result<Vec<PceNotice>, PceError> {
        self.check_node(node)?;
        if !self.publishers.entry(name).or_default().insert(node) {
            return Ok(Vec::new());
        }
        Ok(self.reassign(|n| name.covers(n)))
    }

    pub fn unpublish(
        &mut self,
        name: ContentName,
        node: NodeId,
    ) -> Result<Vec<PceNotice>, PceError> {
        self.check_node(node)?;
        let removed = self
            .publishers
            .get_mut(&name)
            .is_some_and(|s| s.remove(&node));
        if !removed {
            return Ok(Vec::new());
        }
        Ok(self.reassign(|n| name.covers(n)))
    }

    pub fn subscribe(
        &mut self,
        name: ContentName,
        node: NodeId,
    ) -> Result<Vec<PceNotice>, PceError> {
        self.check_node(node)?;
        if !self.subscribers.entry(name).or_default().insert(node) {
            return Ok(Vec::new());
        }
        Ok(self.reassign(|n| *n == name))
    }

    pub fn unsubscribe(
        &mut self,
        name: ContentName,
        node: NodeId,
    ) -> Result<Vec<PceNotice>, PceError> {
        self.check_node(node)?;
        let removed = self
            .subscribers
            .get_mut(&name)
            .is_some_and(|s| s.remove(&node));
        if !removed {
            return Ok(Vec::new());
        }
        if self.subscribers.get(&name).is_some_and(|s| s.is_empty()) {
            self.subscribers.remove(&name);
        }
        let mut touched = BTreeSet::new();
        if let Some(p) = self.assignment.remove(&(name, node)) {
            touched.insert((name, p));
        }
        let mut out = Vec::new();
        self.refresh_trees(touched, &mut out);
        Ok(out)
    }

    /// Re-runs publisher selection for every subscription whose name matches
    /// `filter`, emitting matches for changed assignments and tree updates for
    /// affected streams.
    fn reassign<F: Fn(&ContentName) -> bool>(&mut self, filter: F) -> Vec<PceNotice> {
        let subs: Vec<(ContentName, NodeId)> = self
            .subscribers
            .iter()
            .filter(|(n, _)| filter(n))
            .flat_map(|(n, s)| s.iter().map(move |x| (*n, *x)))
            .collect();
        let mut out = Vec::new();
        let mut touched = BTreeSet::new();
        for (name, sub) in subs {
            let old = self.assignment.get(&(name, sub)).copied();
            let new = self.select_publisher(&name, sub).ok();
            if old == new {
                continue;
            }
            if let Some(o) = old {
                touched.insert((name, o));
            }
            match new {
                Some(p) => {
                    self.assignment.insert((name, sub), p);
                    touched.insert((name, p));
                    out.push(PceNotice::Match {
                        publisher: p,
                        subscriber: sub,
                        name,
                    });
                }
                None => {
                    self.assignment.remove(&(name, sub));
                }
            }
        }
        self.refresh_trees(touched, &mut out);
        out
    }

    fn receivers_of(&self, name: &ContentName, publisher: NodeId) -> BTreeSet<NodeId> {
        self.subscribers
            .get(name)
            .into_iter()
            .flatten()
            .copied()
            .filter(|s| self.assignment.get(&(*name, *s)) == Some(&publisher))
            .collect()
    }

    fn refresh_trees(
        &mut self,
        touched: BTreeSet<(ContentName, NodeId)>,
        out: &mut Vec<PceNotice>,
    ) {
        for (name, publisher) in touched {
            if !self.stream_scopes.contains(&name.scope) {
                continue;
            }
            let receivers = self.receivers_of(&name, publisher);
            let tree = match self.build_multicast_tree(publisher, &receivers) {
                Ok(t) => t,
                Err(PceError::PartialTree { fid, .. }) => Tree {
                    links: self.links_of_fid_receivers(publisher, &receivers),
                    fid,
                },
                Err(_) => continue,
            };
            if self.trees.get(&(name, publisher)) == Some(&tree) {
                continue;
            }
            if receivers.is_empty() {
                self.trees.remove(&(name, publisher));
            } else {
                self.trees.insert((name, publisher), tree.clone());
            }
            out.push(PceNotice::FidUpdate {
                nap: publisher,
                name,
                tree,
                epoch: self.epoch,
            });
        }
    }

    fn links_of_fid_receivers(
        &self,
        src: NodeId,
        receivers: &BTreeSet<NodeId>,
    ) -> BTreeSet<LinkIdx> {
        receivers
            .iter()
            .filter_map(|r| self.cache.get(&(src, *r)))
            .filter(|e| self.entry_valid(e))
            .flat_map(|e| e.links.iter().copied())
            .collect()
    }

    /// Applies a topology change reported by the forwarding plane.
    pub fn on_topology_event(
        &mut self,
        ev: &TopologyEvent,
    ) -> Result<InvalidationReport, PceError> {
        if ev.link.0 >= self.topo.link_count() {
            return Err(PceError::UnknownLink(ev.link));
        }
        if self.topo.is_up(ev.link) == ev.up {
            return Err(PceError::NoOpTransition(ev.link));
        }
        self.topo.set_physical_state(ev.link, ev.up);
        self.epoch += 1;
        let fwd = LinkIdx(ev.link.physical() * 2);
        let affected = [fwd, fwd.reverse()];

        let mut dropped: Vec<(NodeId, NodeId)> = Vec::new();
        let keys: Vec<(NodeId, NodeId)> = self.cache.keys().copied().collect();
        for key in keys {
            let entry = &self.cache[&key];
            let stale = if ev.up {
                // A restored link can only shorten (or re-tie-break) paths.
                bfs_path(&self.topo, key.0, key.1).as_ref() != Some(&entry.links)
            } else {
                entry.links.iter().any(|l| affected.contains(l))
            };
            if stale {
                self.cache.remove(&key);
                dropped.push(key);
            } else if let Some(e) = self.cache.get_mut(&key) {
                e.epoch = self.epoch;
            }
        }

        let mut touched = BTreeSet::new();
        for (name, publisher) in self.trees.keys() {
            let receivers = self.receivers_of(name, *publisher);
            if dropped
                .iter()
                .any(|(s, d)| s == publisher && receivers.contains(d))
            {
                touched.insert((*name, *publisher));
            }
        }
        let mut notices = self.reassign(|_| true);
        self.refresh_trees(touched, &mut notices);
        Ok(InvalidationReport {
            epoch: self.epoch,
            invalidated: dropped.len(),
            notices,
        })
    }

    /// Digest of all routing state held by the PCE.
    pub fn state_digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.epoch.to_le_bytes());
        for ((s, d), e) in &self.cache {
            h.update(format!("{}>{}:{:?}@{};", s.0, d.0, e.links, e.epoch));
        }
        for ((n, p), t) in &self.trees {
            h.update(format!("{n:?}@{}:{};", p.0, t.fid.to_hex()));
        }
        hex::encode(h.finalize())
    }
}

/// Hop-count BFS over up links; `None` if unreachable.
pub fn bfs_path(topo: &TopologyGraph, src: NodeId, dst: NodeId) -> Option<Vec<LinkIdx>> {
    if src == dst {
        return Some(Vec::new());
    }
    let mut parent: Vec<Option<LinkIdx>> = vec![None; topo.node_count()];
    let mut seen = vec![false; topo.node_count()];
    seen[src.0] = true;
    let mut q = VecDeque::from([src]);
    while let Some(u) = q.pop_front() {
        for &l in topo.out_links(u) {
            if !topo.is_up(l) {
                continue;
            }
            let v = topo.link(l).dst;
            if seen[v.0] {
                continue;
            }
            seen[v.0] = true;
            parent[v.0] = Some(l);
            if v == dst {
                let mut path = Vec::new();
                let mut cur = v;
                while let Some(pl) = parent[cur.0] {
                    path.push(pl);
                    cur = topo.link(pl).src;
                }
                path.reverse();
                return Some(path);
            }
            q.push_back(v);
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fid::{should_forward, FidConfig};
    use crate::simkernel::VirtualTime;
    use crate::topology::NodeRole;

    /// sNAP - sw1 = sw2 - cNAP, plus a second cNAP and a surrogate at sw2.
    fn trial() -> (TopologyGraph, [NodeId; 6]) {
        let mut g = TopologyGraph::new();
        let sw1 = g.add_node("sw1", NodeRole::Fn).unwrap();
        let sw2 = g.add_node("sw2", NodeRole::Fn).unwrap();
        let snap = g.add_node("snap", NodeRole::Nap).unwrap();
        let surr = g.add_node("surr", NodeRole::Nap).unwrap();
        let c1 = g.add_node("c1", NodeRole::Nap).unwrap();
        let c2 = g.add_node("c2", NodeRole::Nap).unwrap();
        let l = VirtualTime(100);
        g.add_link(snap, sw1, 1_000_000_000, l, "snap").unwrap();
        g.add_link(sw1, sw2, 1_000_000_000, l, "trunk_primary").unwrap();
        g.add_link(sw1, sw2, 1_000_000_000, l, "trunk_backup").unwrap();
        g.add_link(surr, sw2, 1_000_000_000, l, "surr").unwrap();
        g.add_link(c1, sw2, 1_000_000_000, l, "c1").unwrap();
        g.add_link(c2, sw2, 1_000_000_000, l, "c2").unwrap();
        g.assign_link_ids(&FidConfig::exact(64), 0).unwrap();
        (g, [sw1, sw2, snap, surr, c1, c2])
    }

    #[test]
    fn self_path_is_empty() {
        let (g, [_, _, snap, ..]) = trial();
        let mut pce = Pce::new(g);
        let p = pce.compute_path(snap, snap).unwrap();
        assert!(p.links.is_empty() && p.fid.is_zero() && p.cost == 0);
    }

    #[test]
    fn server_to_client_uses_primary_trunk() {
        let (g, [_, _, snap, _, c1, _]) = trial();
        let trunk = g.link_by_label("trunk_primary").unwrap();
        let mut pce = Pce::new(g);
        let p = pce.compute_path(snap, c1).unwrap();
        assert_eq!(p.cost, 3);
        assert_eq!(p.links[1], trunk);
    }

    #[test]
    fn unreachable_is_an_error() {
        let (mut g, [_, _, snap, _, c1, _]) = trial();
        let l = g.link_by_label("c1").unwrap();
        g.set_physical_state(l, false);
        let mut pce = Pce::new(g);
        assert!(matches!(
            pce.compute_path(snap, c1),
            Err(PceError::Unreachable { .. })
        ));
    }

    #[test]
    fn subscribe_before_publish_matches_on_publish() {
        let (g, [_, _, snap, _, c1, _]) = trial();
        let mut pce = Pce::new(g);
        let n = ContentName::from_labels("tv", "/a");
        assert!(pce.subscribe(n, c1).unwrap().is_empty());
        let out = pce.publish(ContentName::whole_scope(n.scope), snap).unwrap();
        assert_eq!(
            out,
            vec![PceNotice::Match {
                publisher: snap,
                subscriber: c1,
                name: n
            }]
        );
    }

    #[test]
    fn three_subscribers_three_matches() {
        let (g, [_, _, snap, surr, c1, c2]) = trial();
        let mut pce = Pce::new(g);
        let n = ContentName::from_labels("tv", "/a");
        pce.publish(n, snap).unwrap();
        let mut count = 0;
        for s in [c1, c2, surr] {
            count += pce.subscribe(n, s).unwrap().len();
        }
        assert_eq!(count, 3);
        // Re-subscription is idempotent.
        assert!(pce.subscribe(n, c1).unwrap().is_empty());
    }

    #[test]
    fn nearer_surrogate_wins_and_withdrawal_falls_back() {
        let (g, [_, _, snap, surr, c1, _]) = trial();
        let mut pce = Pce::new(g);
        let n = ContentName::from_labels("tv", "/seg1");
        pce.publish(n, snap).unwrap();
        assert_eq!(pce.select_publisher(&n, c1).unwrap(), snap);
        pce.subscribe(n, c1).unwrap();
        let out = pce.publish(n, surr).unwrap();
        assert_eq!(pce.select_publisher(&n, c1).unwrap(), surr);
        assert!(out.contains(&PceNotice::Match {
            publisher: surr,
            subscriber: c1,
            name: n
        }));
        pce.unpublish(n, surr).unwrap();
        assert_eq!(pce.assigned_publisher(&n, c1), Some(snap));
    }

    #[test]
    fn shared_trunk_appears_once_and_cache_is_transparent() {
        let (g, [_, _, snap, _, c1, c2]) = trial();
        let trunk = g.link_by_label("trunk_primary").unwrap();
        let mut pce = Pce::new(g);
        let rx: BTreeSet<_> = [c1, c2].into();
        let cold = pce.build_multicast_tree(snap, &rx).unwrap();
        let calls = pce.compute_calls();
        let warm = pce.build_multicast_tree(snap, &rx).unwrap();
        assert_eq!(cold, warm);
        assert_eq!(pce.compute_calls(), calls);
        assert_eq!(cold.links.len(), 4);
        assert!(should_forward(&cold.fid, pce.topology().lid(trunk)));
        let single = pce.build_multicast_fid(snap, &[c1].into()).unwrap();
        assert_eq!(single, pce.compute_path(snap, c1).unwrap().fid);
    }

    #[test]
    fn trunk_failure_updates_only_the_stream_entry_point() {
        let (g, [_, _, snap, _, c1, c2]) = trial();
        let trunk = g.link_by_label("trunk_primary").unwrap();
        let backup = g.link_by_label("trunk_backup").unwrap();
        let mut pce = Pce::new(g);
        let ch = ContentName::from_labels("239.1.1.1", "1");
        pce.mark_stream_scope(ch.scope);
        pce.publish(ch, snap).unwrap();
        pce.subscribe(ch, c1).unwrap();
        pce.subscribe(ch, c2).unwrap();

        let rep = pce
            .on_topology_event(&TopologyEvent {
                link: trunk,
                up: false,
                at: VirtualTime(0),
            })
            .unwrap();
        assert_eq!(rep.epoch, 1);
        assert_eq!(rep.invalidated, 2);
        assert_eq!(rep.notices.len(), 1);
        match &rep.notices[0] {
            PceNotice::FidUpdate { nap, tree, .. } => {
                assert_eq!(*nap, snap);
                assert!(tree.links.contains(&backup));
                assert!(!tree.links.contains(&trunk));
            }
            other => panic!("unexpected {other:?}"),
        }

        // Fail-back moves the tree to the primary trunk again.
        let rep = pce
            .on_topology_event(&TopologyEvent {
                link: trunk,
                up: true,
                at: VirtualTime(0),
            })
            .unwrap();
        match &rep.notices[..] {
            [PceNotice::FidUpdate { tree, .. }] => assert!(tree.links.contains(&trunk)),
            other => panic!("unexpected {other:?}"),
        }
        assert!(pce.violations().is_empty());
    }

    #[test]
    fn unrelated_event_bumps_epoch_only() {
        let (g, [_, _, snap, _, c1, _]) = trial();
        let surr_link = g.link_by_label("surr").unwrap();
        let mut pce = Pce::new(g);
        pce.cached_path(snap, c1).unwrap();
        let rep = pce
            .on_topology_event(&TopologyEvent {
                link: surr_link,
                up: false,
                at: VirtualTime(0),
            })
            .unwrap();
        assert_eq!((rep.epoch, rep.invalidated), (1, 0));
        assert!(rep.notices.is_empty());
        // Surviving entries are re-stamped and still served from cache.
        let calls = pce.compute_calls();
        pce.cached_path(snap, c1).unwrap();
        assert_eq!(pce.compute_calls(), calls);
    }

    #[test]
    fn bad_events_rejected() {
        let (g, _) = trial();
        let n = g.link_count();
        let mut pce = Pce::new(g);
        let ev = |l, up| TopologyEvent {
            link: LinkIdx(l),
            up,
            at: VirtualTime(0),
        };
        assert_eq!(
            pce.on_topology_event(&ev(n, false)),
            Err(PceError::UnknownLink(LinkIdx(n)))
        );
        assert_eq!(
            pce.on_topology_event(&ev(0, true)),
            Err(PceError::NoOpTransition(LinkIdx(0)))
        );
    }

    #[test]
    fn partial_tree_lists_failures() {
        let (g, [_, _, snap, _, c1, c2]) = trial();
        let c2_link = g.link_by_label("c2").unwrap();
        let mut pce = Pce::new(g);
        pce.on_topology_event(&TopologyEvent {
            link: c2_link,
            up: false,
            at: VirtualTime(0),
        })
        .unwrap();
        match pce.build_multicast_fid(snap, &[c1, c2].into()) {
            Err(PceError::PartialTree { unreachable, fid }) => {
                assert_eq!(unreachable, vec![c2]);
                assert!(!fid.is_zero());
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
