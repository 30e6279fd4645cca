mod common;

use common::{graph_and_dense, max_abs_diff, named_graphs, random_digraph};
use dhse::features::extract_hop_features;
use dhse::graph::NodeId;
use dhse::structure::{self, structure_vector, structure_width};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn random_graphs_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..100 {
        let n = 1 + case % 30;
        let edges = random_digraph(n, 0.3, 0.1, &mut rng);
        let (g, d) = graph_and_dense(n, &edges);
        for v in 0..n {
            let got = structure_vector(&g, v as NodeId, 2).to_vec();
            let want = common::structure_vector(&d, v, 2);
            assert!(max_abs_diff(&got, &want) <= 1e-12, "case {case} node {v}: {got:?} vs {want:?}");
        }
    }
}

#[test]
fn named_graphs_match_brute_force_and_hand_values() {
    for (name, n, edges) in named_graphs() {
        let (g, d) = graph_and_dense(n, &edges);
        for v in 0..n {
            let got = structure_vector(&g, v as NodeId, 2).to_vec();
            let want = common::structure_vector(&d, v, 2);
            assert!(max_abs_diff(&got, &want) <= 1e-12, "{name} node {v}");
        }
    }
    let tri = |edges: &[(NodeId, NodeId)], n, v| {
        let g = dhse::Graph::from_edges(n, edges).unwrap();
        let net = g.extract_ego_net(v, 1);
        structure::count_triangles(&net, net.center_local())
    };
    let graphs = named_graphs();
    assert_eq!(tri(&graphs[0].2, 3, 0), 1);
    assert_eq!(tri(&graphs[1].2, 4, 2), 3);
    assert_eq!(tri(&graphs[3].2, 4, 0), 0);

    // C4 opposite corners share two neighbors: one realized square per
    // neighbor pair of the center, nothing else possible
    let g = dhse::Graph::from_edges(4, &graphs[4].2).unwrap();
    let net = g.extract_ego_net(0, 2);
    assert_eq!(structure::square_clustering(&net, net.center_local()), 1.0);
    let gl = structure::graph_level(&net);
    assert_eq!(gl.density, 4.0 / 6.0);
    assert_eq!(gl.transitivity, 0.0);
}

#[test]
fn batch_extraction_matches_per_node_vectors() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let edges = random_digraph(40, 0.15, 0.05, &mut rng);
    let (g, _) = graph_and_dense(40, &edges);
    let hop = extract_hop_features(&g, 3).unwrap();
    assert_eq!(hop.structure.cols(), structure_width(3));
    for v in 0..40 {
        let want: Vec<f32> = structure_vector(&g, v as NodeId, 3).to_vec().iter().map(|&x| x as f32).collect();
        assert_eq!(hop.structure.row(v), &want[..]);
    }
}

#[test]
fn ratios_lie_in_unit_interval() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..30 {
        let edges = random_digraph(25, 0.4, 0.2, &mut rng);
        let (g, _) = graph_and_dense(25, &edges);
        for v in 0..25 {
            for h in structure_vector(&g, v, 2).hops {
                for r in [h.clustering, h.square_clustering, h.density, h.transitivity] {
                    assert!((0.0..=1.0).contains(&r));
                }
            }
        }
    }
}
