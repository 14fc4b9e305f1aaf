use std::collections::BTreeSet;

use promptcs::eval::{generate_synthetic, SynthConfig};
use promptcs::graph::{load_graph_file, save_graph, AttributedGraph, Community};
use promptcs::query::{
    gen_afn, load_workload, sample_labels, save_workload, LabeledQuery, Query, WorkloadParams,
};
use promptcs::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn erdos_renyi(n: usize, p: f64, c: usize, seed: u64) -> AttributedGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.gen_bool(p) {
                edges.push((u, v));
            }
        }
    }
    let attrs = (0..n)
        .map(|_| (0..c).filter(|_| rng.gen_bool(0.3)).collect())
        .collect();
    AttributedGraph::new(n, c, edges, attrs).unwrap()
}

#[test]
fn synthetic_graph_survives_a_file_round_trip() {
    let (g, cs) = generate_synthetic(&SynthConfig::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("g.json");
    save_graph(&path, &g, Some(&cs), None).unwrap();
    let back = load_graph_file(&path).unwrap();
    assert_eq!(back.graph, g);
    assert_eq!(back.communities.unwrap(), cs);
}

#[test]
fn malformed_and_missing_graph_files_are_distinguished() {
    let dir = tempfile::tempdir().unwrap();
    let missing = load_graph_file(&dir.path().join("absent.json"));
    assert!(matches!(missing, Err(Error::Io { .. })));

    let bad = dir.path().join("bad.json");
    std::fs::write(
        &bad,
        "{\"n\": 2, \"c\": 1, \"edges\": [[0, 5]], \"attrs\": [[], []]}",
    )
    .unwrap();
    assert!(matches!(load_graph_file(&bad), Err(Error::Graph(_))));

    std::fs::write(&bad, "not json").unwrap();
    assert!(matches!(load_graph_file(&bad), Err(Error::Parse { .. })));
}

#[test]
fn neighbour_lists_match_a_linear_scan() {
    let g = erdos_renyi(50, 0.1, 4, 7);
    for v in 0..50 {
        let scan: Vec<usize> = g
            .edges()
            .iter()
            .filter_map(|&(a, b)| match (a == v, b == v) {
                (true, _) => Some(b),
                (_, true) => Some(a),
                _ => None,
            })
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        assert_eq!(g.neighbors(v).unwrap(), scan.as_slice());
        assert_eq!(g.degree(v), scan.len());
    }
    for a in 0..4 {
        let scan: Vec<usize> = (0..50).filter(|&v| g.node_attrs(v).contains(&a)).collect();
        assert_eq!(g.nodes_with_attribute(a).unwrap(), scan.as_slice());
    }
    assert!(g.neighbors(50).is_err());
}

#[test]
fn adjacency_is_symmetric() {
    let g = erdos_renyi(50, 0.1, 2, 11);
    for u in 0..50 {
        for v in 0..50 {
            let uv = g.neighbors(u).unwrap().contains(&v);
            let vu = g.neighbors(v).unwrap().contains(&u);
            assert_eq!(uv, vu, "({u},{v})");
        }
    }
}

#[test]
fn afn_attributes_are_the_union_of_query_node_attributes() {
    let (g, cs) = generate_synthetic(&SynthConfig {
        noise: 0.1,
        ..SynthConfig::default()
    })
    .unwrap();
    let params = WorkloadParams {
        count: 20,
        min_nodes: 1,
        max_nodes: 4,
        attrs_per_query: 3,
        seed: 5,
    };
    for q in gen_afn(&g, &cs, &params).unwrap() {
        let mut union = BTreeSet::new();
        for &v in &q.nodes {
            union.extend(g.node_attrs(v).iter().copied());
        }
        assert_eq!(q.attrs, union.into_iter().collect::<Vec<_>>());
        let community = &cs[q.community.unwrap()];
        assert!(q.nodes.iter().all(|&v| community.contains(v)));
    }
}

#[test]
fn label_counts_follow_the_ceiling_rule() {
    let (g, cs) = generate_synthetic(&SynthConfig {
        communities: 5,
        community_size: 50,
        ..SynthConfig::default()
    })
    .unwrap();
    assert_eq!(g.node_count(), 250);
    let q = Query::new(&g, vec![3, 17], vec![0], Some(0)).unwrap();
    let lq = sample_labels(&g, &q, &cs[0], 0.2, 9).unwrap();
    assert!(lq.positives.len() >= 10);
    assert!(lq.positives.len() <= 12);
    assert_eq!(lq.negatives.len(), 40);
    assert!(lq.positives.iter().all(|&v| cs[0].contains(v)));
    assert!(lq.negatives.iter().all(|&v| !cs[0].contains(v)));
    assert!(q.nodes.iter().all(|v| lq.positives.contains(v)));
}

#[test]
fn query_node_outside_its_community_is_rejected() {
    let (g, cs) = generate_synthetic(&SynthConfig::default()).unwrap();
    let q = Query::new(&g, vec![0, 70], vec![], Some(0)).unwrap();
    assert!(matches!(
        sample_labels(&g, &q, &cs[0], 1.0, 0),
        Err(Error::Query(_))
    ));
    assert!(Community::new(vec![0, 300], g.node_count()).is_err());
}

#[test]
fn workload_files_round_trip_with_and_without_header() {
    let g = erdos_renyi(10, 0.3, 3, 1);
    let queries = vec![LabeledQuery {
        query: Query::new(&g, vec![1, 2], vec![0], Some(0)).unwrap(),
        positives: vec![1, 2, 3],
        negatives: vec![7, 8],
    }];
    let dir = tempfile::tempdir().unwrap();
    let bare = dir.path().join("bare.json");
    let wrapped = dir.path().join("wrapped.json");
    save_workload(&bare, &queries, None).unwrap();
    save_workload(
        &wrapped,
        &queries,
        Some(promptcs::io::OutputHeader::new(&"cfg", 3)),
    )
    .unwrap();
    assert_eq!(load_workload(&bare).unwrap(), queries);
    assert_eq!(load_workload(&wrapped).unwrap(), queries);
}
