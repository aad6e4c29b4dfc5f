#![allow(dead_code)]

use pointsim::fid::FidConfig;
use pointsim::simkernel::VirtualTime;
use pointsim::topology::{NodeId, NodeRole, TopologyGraph};
use proptest::prelude::*;

#[derive(Debug, Clone)]
pub struct Graph {
    pub n: usize,
    /// Parent of node i+1 in a random spanning tree.
    pub parents: Vec<usize>,
    pub extra: Vec<(usize, usize)>,
    pub seed: u64,
}

pub fn graph(max_nodes: usize) -> impl Strategy<Value = Graph> {
    (2..=max_nodes).prop_flat_map(|n| {
        (
            Just(n),
            proptest::collection::vec(any::<prop::sample::Index>(), n - 1),
            proptest::collection::vec((0..n, 0..n), 0..n),
            any::<u64>(),
        )
            .prop_map(|(n, parents, extra, seed)| Graph {
                n,
                parents: parents.iter().enumerate().map(|(i, ix)| ix.index(i + 1)).collect(),
                extra: extra.into_iter().filter(|(a, b)| a != b).collect(),
                seed,
            })
    })
}

/// Builds the graph with every third node a NAP; tree links first.
pub fn build(g: &Graph, fid: &FidConfig) -> TopologyGraph {
    let mut t = TopologyGraph::new();
    for i in 0..g.n {
        let role = if i % 3 == 0 { NodeRole::Nap } else { NodeRole::Fn };
        t.add_node(&format!("n{i}"), role).unwrap();
    }
    let edges = g
        .parents
        .iter()
        .enumerate()
        .map(|(i, &p)| (i + 1, p))
        .chain(g.extra.iter().copied());
    for (k, (a, b)) in edges.enumerate() {
        t.add_link(NodeId(a), NodeId(b), 1_000_000_000, VirtualTime(10), &format!("l{k}"))
            .unwrap();
    }
    t.assign_link_ids(fid, g.seed).unwrap();
    t
}

pub fn physical_count(g: &Graph) -> usize {
    g.parents.len() + g.extra.len()
}
