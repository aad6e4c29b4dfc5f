mod common;

use common::{build, graph, physical_count};
use pointsim::fid::FidConfig;
use pointsim::ip_baseline::{compute_tree, StpState, Tree};
use pointsim::simkernel::VirtualTime;
use pointsim::topology::{LinkIdx, NodeId, NodeRole, TopologyGraph};
use proptest::prelude::*;
use std::collections::BTreeSet;

/// Number of nodes reachable from `root` over up links.
fn component(topo: &TopologyGraph, root: NodeId) -> usize {
    let mut seen = BTreeSet::from([root]);
    let mut stack = vec![root];
    while let Some(u) = stack.pop() {
        for l in topo.out_links(u) {
            let link = topo.link(*l);
            if link.up && seen.insert(link.dst) {
                stack.push(link.dst);
            }
        }
    }
    seen.len()
}

/// True if the physical links in `tree` contain no cycle (union-find).
fn acyclic(topo: &TopologyGraph, tree: &Tree) -> bool {
    let mut parent: Vec<usize> = (0..topo.node_count()).collect();
    fn find(p: &mut Vec<usize>, x: usize) -> usize {
        if p[x] != x {
            let r = find(p, p[x]);
            p[x] = r;
        }
        p[x]
    }
    for &phys in tree {
        let l = topo.link(LinkIdx(2 * phys));
        let (a, b) = (find(&mut parent, l.src.0), find(&mut parent, l.dst.0));
        if a == b {
            return false;
        }
        parent[a] = b;
    }
    true
}

proptest! {
    #[test]
    fn spanning_tree_stays_acyclic_through_failures(
        (g, flips) in graph(16).prop_flat_map(|g| {
            let p = physical_count(&g);
            (Just(g), proptest::collection::vec((0..p, 0u64..40_000_000), 0..12))
        }),
    ) {
        let mut topo = build(&g, &FidConfig::default());
        let delay = VirtualTime::from_secs(30);
        let mut stp = StpState::new(&topo, delay);
        let mut now = VirtualTime::ZERO;
        let mut pending = None;
        for (phys, gap) in flips {
            now += VirtualTime(gap);
            if let Some(end) = pending.filter(|e| *e <= now) {
                prop_assert!(stp.finish(&topo, end));
                pending = None;
            }
            let l = LinkIdx(2 * phys);
            topo.set_physical_state(l, !topo.is_up(l));
            if let Some(end) = stp.on_link_event(&topo, now) {
                pending = Some(end);
            }
            prop_assert!(stp.forwarding.iter().all(|p| topo.is_up(LinkIdx(2 * p))));
            prop_assert!(acyclic(&topo, &stp.forwarding));
        }
        if let Some(end) = pending {
            prop_assert!(stp.finish(&topo, end));
        }
        prop_assert!(acyclic(&topo, &stp.active));
        prop_assert_eq!(stp.forwarding.clone(), stp.active.clone());
        prop_assert_eq!(stp.active.len() + 1, component(&topo, stp.root));
        prop_assert_eq!(stp.active.clone(), compute_tree(&topo, stp.root));
    }
}

#[test]
fn exactly_one_of_two_parallel_trunks_forwards() {
    let mut t = TopologyGraph::new();
    let a = t.add_node("sw1", NodeRole::Fn).unwrap();
    let b = t.add_node("sw2", NodeRole::Fn).unwrap();
    let primary = t.add_link(a, b, 1_000_000_000, VirtualTime(10), "primary").unwrap().0;
    let backup = t.add_link(a, b, 1_000_000_000, VirtualTime(10), "backup").unwrap().0;
    t.assign_link_ids(&FidConfig::default(), 0).unwrap();
    let mut stp = StpState::new(&t, VirtualTime::from_secs(30));
    let active = |s: &StpState, t: &TopologyGraph| [primary, backup].iter().filter(|l| s.is_forwarding(t, **l)).count();
    assert_eq!(active(&stp, &t), 1);
    assert!(stp.is_forwarding(&t, primary));

    t.set_physical_state(primary, false);
    let end = stp.on_link_event(&t, VirtualTime::from_secs(3)).unwrap();
    assert_eq!(active(&stp, &t), 0);
    assert!(stp.finish(&t, end));
    assert_eq!(active(&stp, &t), 1);
    assert!(stp.is_forwarding(&t, backup));

    t.set_physical_state(primary, true);
    let end = stp.on_link_event(&t, VirtualTime::from_secs(40)).unwrap();
    assert!(active(&stp, &t) <= 1);
    assert!(stp.finish(&t, end));
    assert_eq!(active(&stp, &t), 1);
}
