mod common;

use common::*;
use increc::eval::{recall_at_k, top_k};
use increc::FinalEmbeddings;
use proptest::prelude::*;

#[test]
fn recall_matches_full_sort_oracle() {
    for seed in 0..50 {
        let (emb, test, mask) = ranking_instance(seed, 200, 100);
        let fast = recall_at_k(&emb, &test, &mask, 20, seed % 2 == 0).unwrap().recall;
        let slow = brute_force_recall(&emb, &test, &mask, 20);
        assert_eq!(fast, slow, "seed {seed}");
    }
}

#[test]
fn recall_is_rank_based() {
    // Scaling one user's embedding by a positive constant scales all of its
    // scores, a strictly monotone transform.
    let (emb, test, mask) = ranking_instance(3, 50, 60);
    let base = recall_at_k(&emb, &test, &mask, 10, false).unwrap();
    let mut scaled = emb.users.clone();
    for (r, row) in scaled.as_mut_slice().chunks_mut(4).enumerate() {
        row.iter_mut().for_each(|x| *x *= 1.0 + r as f64);
    }
    let emb2 = FinalEmbeddings { users: scaled, ..emb.clone() };
    assert_eq!(recall_at_k(&emb2, &test, &mask, 10, false).unwrap(), base);
}

proptest! {
    #[test]
    fn masked_items_never_ranked(seed in 0u64..500, k in 1usize..15) {
        let (emb, _, mask) = ranking_instance(seed, 20, 40);
        for u in 0..20u32 {
            let top = top_k(&emb, u, &mask, k.min(40 - mask.degree(increc::Side::User, u))).unwrap();
            for i in top {
                prop_assert!(!mask.has_edge(u, i));
            }
        }
    }

    #[test]
    fn recall_within_unit_interval(seed in 0u64..500) {
        let (emb, test, mask) = ranking_instance(seed, 30, 40);
        let r = recall_at_k(&emb, &test, &mask, 5, false).unwrap();
        prop_assert!((0.0..=1.0).contains(&r.recall));
    }
}
