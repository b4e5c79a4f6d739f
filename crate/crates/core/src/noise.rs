//! Seeded random structural noise: fake edges added, real edges removed.

use std::collections::HashSet;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Changed edges as a fraction of the original edge count.
    pub level: f64,
    /// Share of the changes that are additions.
    pub add_fraction: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(level: f64, seed: u64) -> Self {
        NoiseSpec {
            level,
            add_fraction: 0.5,
            seed,
        }
    }

    /// `(additions, deletions)` for an edge set of the given size. The total
    /// is `round(level·|E|)`; additions take the floor of their share and
    /// deletions the remainder.
    pub fn counts(&self, num_edges: usize) -> (usize, usize) {
        let total = (self.level * num_edges as f64).round() as usize;
        let adds = (total as f64 * self.add_fraction).floor() as usize;
        (adds, total - adds)
    }
}

pub fn inject_random_noise(graph: &Graph, spec: &NoiseSpec) -> Result<Graph> {
    if !(spec.level >= 0.0) || !(0.0..=1.0).contains(&spec.add_fraction) {
        return Err(Error::Noise(format!(
            "invalid noise spec: level {} add_fraction {}",
            spec.level, spec.add_fraction
        )));
    }
    let m = graph.num_edges();
    let n = graph.num_nodes();
    let (adds, dels) = spec.counts(m);
    if dels > m {
        return Err(Error::Noise(format!(
            "requested {dels} deletions but the graph has {m} edges"
        )));
    }
    let possible = n * n.saturating_sub(1) / 2;
    if adds > possible - m {
        return Err(Error::Noise(format!(
            "graph too dense: {adds} additions requested, {} non-edges available",
            possible - m
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut removed = vec![false; m];
    for k in index::sample(&mut rng, m, dels) {
        removed[k] = true;
    }

    let added = sample_non_edges(graph, adds, &mut rng);
    let kept = graph
        .edges()
        .iter()
        .zip(&removed)
        .filter(|(_, &r)| !r)
        .map(|(&e, _)| e);
    let mut edges: Vec<(usize, usize)> = kept.chain(added).collect();
    edges.sort_unstable();
    Ok(graph.with_canonical_edges(edges))
}

/// Uniform sample of `count` distinct non-edges. Rejection sampling with a
/// cap of `100·count` draws, then exact enumeration of what is left.
fn sample_non_edges(graph: &Graph, count: usize, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    let n = graph.num_nodes();
    let mut chosen: HashSet<(usize, usize)> = HashSet::with_capacity(count);
    let mut out = Vec::with_capacity(count);
    let cap = 100 * count;
    let mut draws = 0;
    while out.len() < count && draws < cap {
        draws += 1;
        let i = rng.random_range(0..n);
        let j = rng.random_range(0..n);
        if i == j {
            continue;
        }
        let e = (i.min(j), i.max(j));
        if graph.has_edge(e.0, e.1) || !chosen.insert(e) {
            continue;
        }
        out.push(e);
    }
    if out.len() < count {
        log::debug!("non-edge rejection sampling hit its cap; enumerating");
        let rest: Vec<(usize, usize)> = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .filter(|&(i, j)| !graph.has_edge(i, j) && !chosen.contains(&(i, j)))
            .collect();
        let need = count - out.len();
        for k in index::sample(rng, rest.len(), need) {
            out.push(rest[k]);
        }
    }
    out
}

/// `|E_orig Δ E_noisy| / |E_orig|`.
pub fn changed_edge_ratio(original: &Graph, noisy: &Graph) -> Result<f64> {
    if original.num_nodes() != noisy.num_nodes() {
        return Err(Error::LengthMismatch {
            what: "node count",
            expected: original.num_nodes(),
            found: noisy.num_nodes(),
        });
    }
    if original.num_edges() == 0 {
        return Err(Error::EmptyOriginal);
    }
    let (a, b) = (original.edges(), noisy.edges());
    let (mut i, mut j, mut common) = (0, 0, 0usize);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                common += 1;
                i += 1;
                j += 1;
            }
        }
    }
    let sym_diff = a.len() + b.len() - 2 * common;
    Ok(sym_diff as f64 / a.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense::Matrix;
    use crate::graph::{build_graph, Masks};

    fn ring(n: usize) -> Graph {
        let edges: Vec<_> = (0..n).map(|i| (i, (i + 1) % n)).collect();
        build_graph(&edges, n, Matrix::zeros(n, 1), vec![Some(0); n], Masks::default()).unwrap()
    }

    #[test]
    fn level_zero_is_identity() {
        let g = ring(20);
        let h = inject_random_noise(&g, &NoiseSpec::new(0.0, 4)).unwrap();
        assert_eq!(g.edges(), h.edges());
        assert_eq!(changed_edge_ratio(&g, &h).unwrap(), 0.0);
    }

    #[test]
    fn rounding_rule_matches_cora_count() {
        assert_eq!(NoiseSpec::new(1.0, 0).counts(5429), (2714, 2715));
    }

    #[test]
    fn deterministic_and_exact_ratio() {
        let g = ring(200);
        let spec = NoiseSpec::new(0.4, 11);
        let a = inject_random_noise(&g, &spec).unwrap();
        let b = inject_random_noise(&g, &spec).unwrap();
        assert_eq!(a.edges(), b.edges());
        assert_eq!(changed_edge_ratio(&g, &a).unwrap(), 0.4);
        assert!(a.is_symmetric());
    }

    #[test]
    fn dense_graph_falls_back_to_enumeration() {
        // 6 nodes: 15 pairs, ring has 6 edges, 9 non-edges; ask for all of them
        let g = ring(6);
        let spec = NoiseSpec {
            level: 2.0,
            add_fraction: 0.75,
            seed: 1,
        };
        let h = inject_random_noise(&g, &spec).unwrap();
        assert_eq!(h.num_edges(), 6 - 3 + 9);
        assert_eq!(changed_edge_ratio(&g, &h).unwrap(), 2.0);
        let too_many = NoiseSpec {
            level: 4.0,
            add_fraction: 1.0,
            seed: 1,
        };
        assert!(inject_random_noise(&g, &too_many).is_err());
        let too_many_dels = NoiseSpec {
            level: 2.0,
            add_fraction: 0.0,
            seed: 1,
        };
        assert!(inject_random_noise(&g, &too_many_dels).is_err());
    }

    #[test]
    fn ratio_guards() {
        let empty = build_graph(&[], 3, Matrix::zeros(3, 1), vec![None; 3], Masks::default()).unwrap();
        let one = empty.with_edges([(0, 1)]).unwrap();
        assert!(matches!(changed_edge_ratio(&empty, &one), Err(Error::EmptyOriginal)));
        assert!(changed_edge_ratio(&ring(4), &ring(5)).is_err());
    }
}
