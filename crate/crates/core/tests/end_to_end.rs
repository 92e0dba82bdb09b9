//! Full protocol runs against the plaintext oracles.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use snpvault_core::index_tree::traverse_plaintext;
use snpvault_core::{
    audit_transcript, build_tree, generate_synthetic, naive_count, run_count_query, Dataset,
    ProtocolConfig, QueryPredicate, SnpId,
};

/// 10–200 records, 5–10 SNP columns, 1–5 query terms whose values come from
/// random records, so both hits and misses occur.
fn instance(rng: &mut ChaCha8Rng) -> (Dataset, QueryPredicate) {
    let data = generate_synthetic(rng.gen_range(10..=200), rng.gen_range(5..=10), rng.gen(), None).unwrap();
    let size = rng.gen_range(1..=5);
    let sids = rand::seq::index::sample(rng, data.depth(), size);
    let terms = sids.into_iter().map(|i| {
        let sid = SnpId(i as u32 + 1);
        let donor = &data.records()[rng.gen_range(0..data.len())];
        (sid, donor.value(sid).unwrap())
    });
    let pred = QueryPredicate::new(terms).unwrap();
    (data, pred)
}

#[test]
fn randomized_instances_match_oracle_and_pass_audit() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut nonzero = 0;
    for i in 0..100u64 {
        let (data, pred) = instance(&mut rng);
        let config = ProtocolConfig {
            capture_payloads: true,
            ..ProtocolConfig::seeded(i)
        };
        let run = run_count_query(&data, &pred, &config).unwrap();
        let expected = naive_count(&data, &pred).unwrap();
        assert_eq!(run.count, expected, "instance {i}: {pred}");
        nonzero += usize::from(expected > 0);

        let report = audit_transcript(&run.transcript.entries(), &run.public_key, run.count);
        assert!(report.passed(), "instance {i}: {:?}", report.violations);
        assert!(run.researcher_deltas.iter().all(|d| d > &16u32.into()));

        let tree = build_tree(&data).unwrap();
        let pos = tree.preorder_positions();
        let reference = traverse_plaintext(&tree, &pred).unwrap();
        let map = |ids: &[snpvault_core::index_tree::NodeId]| -> Vec<u32> {
            ids.iter().map(|id| pos[id.index()]).collect()
        };
        assert_eq!(run.trace.visited, map(&reference.visited), "instance {i}");
        assert_eq!(run.trace.accumulated, map(&reference.accumulated), "instance {i}");
    }
    assert!(nonzero > 20, "too few instances with matches: {nonzero}");
}

#[test]
fn visited_nodes_have_matching_queried_ancestors() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for i in 0..10u64 {
        let (data, pred) = instance(&mut rng);
        let run = run_count_query(&data, &pred, &ProtocolConfig::seeded(1000 + i)).unwrap();
        let tree = build_tree(&data).unwrap();
        let order = tree.preorder();
        let mut parent = vec![None; order.len()];
        for (pos, &id) in order.iter().enumerate() {
            for c in tree.node(id).children() {
                let child_pos = order.iter().position(|x| x == c).unwrap();
                parent[child_pos] = Some(pos);
            }
        }
        for &v in &run.trace.visited {
            let mut up = parent[v as usize];
            while let Some(p) = up {
                let node = tree.node(order[p]);
                if let Some(k) = pred.position(node.sid) {
                    assert_eq!(node.val, pred.terms()[k].val, "node {v} has an unmatched queried ancestor");
                }
                up = parent[p];
            }
        }
    }
}
