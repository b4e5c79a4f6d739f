mod common;

use common::*;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

use robgc::baselines::{jaccard_denoise, knn_augment};
use robgc::denoise::{add_reliable, delete_unreliable, edge_reliability, label_propagate, ReliabilityScores};
use robgc::graph::{build_graph, edge_homophily, khop_candidates, normalize, propagate, EdgeCandidateSet, Masks};
use robgc::noise::{changed_edge_ratio, inject_random_noise, NoiseSpec};
use robgc::Matrix;

fn instance() -> impl Strategy<Value = (usize, f64, u64)> {
    (3usize..40, 0.02f64..0.4, any::<u64>())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn deletion_is_monotone_in_eps1((n, p, seed) in instance(), a in -1.0f64..1.0, b in -1.0f64..1.0) {
        let g = random_graph(&mut rng(seed), n, p, 4, 3);
        let s = edge_reliability(g.features(), None, g.edges()).unwrap();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let loose = delete_unreliable(&g, &s, lo).unwrap();
        let strict = delete_unreliable(&g, &s, hi).unwrap();
        prop_assert!(strict.edges().iter().all(|&(i, j)| loose.has_edge(i, j)));
        prop_assert!(loose.edges().iter().all(|&(i, j)| g.has_edge(i, j)));
    }

    #[test]
    fn addition_is_monotone_in_eps2((n, p, seed) in instance(), a in -1.0f64..1.0, b in -1.0f64..1.0) {
        let g = random_graph(&mut rng(seed), n, p, 4, 3);
        let cands = khop_candidates(&g, 3);
        let s = edge_reliability(g.features(), None, cands.pairs()).unwrap();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let loose = add_reliable(&g, &cands, &s, lo).unwrap();
        let strict = add_reliable(&g, &cands, &s, hi).unwrap();
        prop_assert!(strict.edges().iter().all(|&(i, j)| loose.has_edge(i, j)));
        prop_assert!(g.edges().iter().all(|&(i, j)| strict.has_edge(i, j)));
        prop_assert!(loose.is_symmetric());
    }

    #[test]
    fn oracle_reliability_gives_pure_homophily((n, p, seed) in instance()) {
        let g = random_graph(&mut rng(seed), n, p, 2, 3);
        let label = |v: usize| g.label(v).unwrap();
        let oracle = |pairs: &[(usize, usize)]| ReliabilityScores {
            edges: pairs.to_vec(),
            scores: pairs.iter().map(|&(i, j)| if label(i) == label(j) { 1.0 } else { -1.0 }).collect(),
        };
        let pruned = delete_unreliable(&g, &oracle(g.edges()), 0.0).unwrap();
        let cands = khop_candidates(&pruned, 3);
        let edited = add_reliable(&pruned, &cands, &oracle(cands.pairs()), 0.0).unwrap();
        prop_assert_eq!(edge_homophily(&edited).unwrap(), 1.0);
    }

    #[test]
    fn khop_candidates_nest((n, p, seed) in instance()) {
        let g = random_graph(&mut rng(seed), n, p, 1, 1);
        let mut prev = khop_candidates(&g, 1);
        prop_assert!(prev.is_empty());
        for hops in 2..=4 {
            let cur = khop_candidates(&g, hops);
            prop_assert!(prev.pairs().iter().all(|e| cur.pairs().binary_search(e).is_ok()));
            prop_assert!(cur.pairs().iter().all(|&(i, j)| i < j && !g.has_edge(i, j)));
            prev = cur;
        }
    }

    #[test]
    fn propagate_is_additive((n, p, seed) in instance(), k1 in 0usize..4, k2 in 0usize..4) {
        let mut r = rng(seed);
        let g = random_graph(&mut r, n, p, 3, 2);
        let adj = normalize(&g);
        let y = Matrix::from_fn(n, 3, |_, _| r.random_range(-1.0..1.0));
        let mut sum = g.features().clone();
        sum.axpy(1.0, &y).unwrap();
        let mut split = propagate(&adj, g.features(), k1).unwrap();
        split.axpy(1.0, &propagate(&adj, &y, k1).unwrap()).unwrap();
        prop_assert!(propagate(&adj, &sum, k1).unwrap().max_abs_diff(&split) < 1e-12);
        let chained = propagate(&adj, &propagate(&adj, g.features(), k1).unwrap(), k2).unwrap();
        prop_assert!(propagate(&adj, g.features(), k1 + k2).unwrap().max_abs_diff(&chained) < 1e-12);
    }

    #[test]
    fn homophily_is_permutation_invariant((n, p, seed) in instance()) {
        let mut r = rng(seed);
        let g = random_graph(&mut r, n, p, 1, 3);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut r);
        let edges: Vec<(usize, usize)> = g.edges().iter().map(|&(i, j)| (perm[i], perm[j])).collect();
        let mut labels = vec![None; n];
        for v in 0..n {
            labels[perm[v]] = g.label(v);
        }
        let h = build_graph(&edges, n, Matrix::zeros(n, 1), labels, Masks::train_only(n)).unwrap();
        prop_assert_eq!(edge_homophily(&g).unwrap(), edge_homophily(&h).unwrap());
    }

    #[test]
    fn noise_hits_requested_ratio((n, p, seed) in instance(), level in 0.0f64..1.0) {
        let g = random_graph(&mut rng(seed), n.max(10), p.max(0.1), 1, 1);
        prop_assume!(g.num_edges() > 0);
        let spec = NoiseSpec::new(level, seed);
        let (adds, dels) = spec.counts(g.num_edges());
        let possible = g.num_nodes() * (g.num_nodes() - 1) / 2 - g.num_edges();
        prop_assume!(adds <= possible && dels <= g.num_edges());
        let noisy = inject_random_noise(&g, &spec).unwrap();
        let ratio = changed_edge_ratio(&g, &noisy).unwrap();
        prop_assert!((ratio - level).abs() <= 0.5 / g.num_edges() as f64 + 1e-12);
        prop_assert!(noisy.is_symmetric());
        let again = inject_random_noise(&g, &spec).unwrap();
        prop_assert_eq!(noisy.edges(), again.edges());
    }

    #[test]
    fn label_propagation_commutes_with_relabeling((n, p, seed) in instance()) {
        let mut r = rng(seed);
        let g = random_graph(&mut r, n, p, 1, 3);
        let support: Vec<usize> = (0..n).step_by(2).collect();
        let y0 = robgc::denoise::seed_matrix(&g, &support).unwrap();
        let adj = normalize(&g);
        let y = label_propagate(&adj, &y0, 0.9, 10).unwrap();
        let mut perm: Vec<usize> = (0..3).collect();
        perm.shuffle(&mut r);
        let permuted = Matrix::from_fn(n, 3, |i, c| y0[(i, perm[c])]);
        let z = label_propagate(&adj, &permuted, 0.9, 10).unwrap();
        prop_assert!((0..n).all(|i| (0..3).all(|c| (z[(i, c)] - y[(i, perm[c])]).abs() < 1e-12)));
        // Â = D^1/2 P D^-1/2 with P row-stochastic, so Y_ic <= sqrt(d_i) max_j Y0_jc / sqrt(d_j)
        let d = |v: usize| (g.degree(v) + 1) as f64;
        for c in 0..3 {
            let bound = (0..n).map(|j| y0[(j, c)] / d(j).sqrt()).fold(0.0, f64::max);
            prop_assert!((0..n).all(|i| y[(i, c)] >= -1e-12 && y[(i, c)] <= d(i).sqrt() * bound + 1e-12));
        }
    }

    #[test]
    fn baselines_respect_direction((n, p, seed) in instance(), k in 1usize..4, t in 0.0f64..0.6) {
        let mut r = rng(seed);
        let g = random_graph(&mut r, n, p, 5, 2);
        let x = Matrix::from_fn(n, 6, |_, _| if r.random_bool(0.4) { 1.0 } else { 0.0 });
        let g = build_graph(g.edges(), n, x, g.labels().to_vec(), Masks::train_only(n)).unwrap();
        let pruned = jaccard_denoise(&g, t);
        prop_assert!(pruned.edges().iter().all(|&(i, j)| g.has_edge(i, j)));
        let grown = knn_augment(&g, k).unwrap();
        prop_assert!(g.edges().iter().all(|&(i, j)| grown.has_edge(i, j)));
        prop_assert!(pruned.is_symmetric() && grown.is_symmetric());
    }

    #[test]
    fn candidate_sets_are_canonical(pairs in proptest::collection::vec((0usize..20, 0usize..20), 0..40)) {
        let set = EdgeCandidateSet::new(pairs.iter().copied().filter(|(a, b)| a != b));
        prop_assert!(set.pairs().windows(2).all(|w| w[0] < w[1]));
        prop_assert!(set.pairs().iter().all(|&(i, j)| i < j));
    }
}
