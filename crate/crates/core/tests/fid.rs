use pointsim::fid::{assign_link_ids, combine_trees, encode_path, false_positive_rate, should_forward, FidConfig};
use proptest::prelude::*;
use std::collections::BTreeSet;

fn subset(n: usize) -> impl Strategy<Value = BTreeSet<usize>> {
    proptest::collection::btree_set(0..n, 0..=n)
}

proptest! {
    #[test]
    fn bloom_members_always_pass(
        (n, members) in (1usize..120).prop_flat_map(|n| (Just(n), subset(n))),
        k in 1usize..8,
        seed in any::<u64>(),
    ) {
        let ids = assign_link_ids(n, &FidConfig::bloom(256, k), seed).unwrap();
        let fid = encode_path(256, members.iter().map(|i| &ids[*i])).unwrap();
        for i in &members {
            prop_assert!(should_forward(&fid, &ids[*i]));
        }
    }

    #[test]
    fn exact_mode_matches_membership(
        (n, members) in (1usize..256).prop_flat_map(|n| (Just(n), subset(n))),
    ) {
        let ids = assign_link_ids(n, &FidConfig::exact(256), 0).unwrap();
        let fid = encode_path(256, members.iter().map(|i| &ids[*i])).unwrap();
        for (i, id) in ids.iter().enumerate() {
            prop_assert_eq!(should_forward(&fid, id), members.contains(&i));
        }
    }

    #[test]
    fn or_of_trees_is_the_tree_of_the_union(
        (n, sets) in (1usize..80).prop_flat_map(|n| (Just(n), proptest::collection::vec(subset(n), 0..6))),
        bloom in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let cfg = if bloom { FidConfig::bloom(128, 4) } else { FidConfig::exact(128) };
        let ids = assign_link_ids(n, &cfg, seed).unwrap();
        let fids: Vec<_> = sets
            .iter()
            .map(|s| encode_path(128, s.iter().map(|i| &ids[*i])).unwrap())
            .collect();
        let union: BTreeSet<usize> = sets.iter().flatten().copied().collect();
        let direct = encode_path(128, union.iter().map(|i| &ids[*i])).unwrap();
        prop_assert_eq!(combine_trees(128, &fids).unwrap(), direct.clone());
        for f in &fids {
            prop_assert!(f.bits.ones().all(|b| direct.bits.get(b)));
        }
    }

    #[test]
    fn analytic_fp_rate_grows_with_load(m in 16usize..512, k in 1usize..8, n in 1usize..64) {
        let a = false_positive_rate(m, k, n);
        let b = false_positive_rate(m, k, n + 1);
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!(b >= a);
    }
}

#[test]
fn exact_mode_rejects_more_links_than_bits() {
    assert!(assign_link_ids(257, &FidConfig::exact(256), 0).is_err());
}
