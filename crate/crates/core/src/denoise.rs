//! Structure denoising guided by a condensed graph.
//!
//! Every training node is correlated with the condensed nodes (`E`, cosine),
//! the correlations are propagated over the condensed graph (`U^(k)`), and
//! each candidate edge `(i, j)`, `i < j`, is scored as
//!
//! ```text
//! cos([X_i ‖ E_i ‖ … ‖ E_i], [X_j ‖ U^(0)ᵀ_j ‖ … ‖ U^(K)ᵀ_j])
//! ```
//!
//! with `E_i` repeated `K + 1` times so both sides have the same width.
//! Existing edges scoring `<= ε1` are deleted; `L`-hop candidates, reduced
//! to each node's `r_nn` best partners, are added when scoring `> ε2`. The
//! pair `(ε1, ε2)` is picked on an `h × h` lattice by label propagation
//! accuracy from a random half of the training nodes to the other half.
//!
//! Scoring touches `O(N′·N)` correlation entries and one score per edge or
//! candidate; no pass enumerates all `N²` node pairs. [`DenoiseStats`]
//! carries the counters that check this.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::condense::{CondenseConfig, CondensedGraph, Condenser};
use crate::dense::{argmax, dot, norm, Matrix};
use crate::error::{Error, Result};
use crate::graph::{normalize, EdgeCandidateSet, Graph, KhopExplorer, NormalizedAdjacency};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenoiseConfig {
    /// Correlation propagation order `K`.
    pub corr_order: usize,
    /// Candidate hops `L`.
    pub hops: usize,
    /// Nearest candidate partners kept per node.
    pub r_nn: usize,
    /// Teleport probability of label propagation.
    pub alpha: f64,
    /// Label propagation iterations `l`.
    pub lp_iters: usize,
    /// Lattice points per threshold axis `h`.
    pub search_points: usize,
    /// Structure optimization period `τ`, in condensation epochs.
    pub period: usize,
    /// Share of training nodes used as label propagation seeds.
    pub support_fraction: f64,
    pub seed: u64,
}

impl Default for DenoiseConfig {
    fn default() -> Self {
        DenoiseConfig {
            corr_order: 2,
            hops: 3,
            r_nn: 3,
            alpha: 0.9,
            lp_iters: 10,
            search_points: 20,
            period: 50,
            support_fraction: 0.5,
            seed: 0,
        }
    }
}

impl DenoiseConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad("alpha must lie in (0, 1)");
        }
        if self.lp_iters == 0 {
            return bad("lp_iters must be >= 1");
        }
        if self.search_points < 2 {
            return bad("search_points must be >= 2");
        }
        if self.corr_order == 0 {
            return bad("corr_order must be >= 1");
        }
        if !(1..=5).contains(&self.hops) {
            return bad("hops must lie in 1..=5");
        }
        if self.period == 0 {
            return bad("period must be >= 1");
        }
        if !(self.support_fraction > 0.0 && self.support_fraction < 1.0) {
            return bad("support_fraction must lie in (0, 1)");
        }
        Ok(())
    }
}

/// `E` (`N × N′`) and `U^(0..=K)` (each `N′ × N`).
#[derive(Clone, Debug)]
pub struct CorrelationBundle {
    pub e: Matrix,
    pub u_powers: Vec<Matrix>,
}

/// `E_ij = cos(X_i, X′_j)`; zero-norm rows give 0.
pub fn correlation_matrix(x: &Matrix, x_syn: &Matrix) -> Result<Matrix> {
    if x.cols() != x_syn.cols() {
        return Err(Error::shape(
            "correlation_matrix",
            format!("feature dims {} vs {}", x.cols(), x_syn.cols()),
        ));
    }
    let syn_norms = x_syn.row_norms();
    let mut e = Matrix::zeros(x.rows(), x_syn.rows());
    let width = x_syn.rows();
    if width == 0 {
        return Ok(e);
    }
    e.as_mut_slice()
        .par_chunks_mut(width)
        .enumerate()
        .for_each(|(i, out)| {
            let xi = x.row(i);
            let ni = norm(xi);
            if ni == 0.0 {
                return;
            }
            for (j, o) in out.iter_mut().enumerate() {
                if syn_norms[j] != 0.0 {
                    *o = dot(xi, x_syn.row(j)) / (ni * syn_norms[j]);
                }
            }
        });
    Ok(e)
}

/// `U^(0) = Eᵀ`, `U^(k) = Â′·U^(k−1)` with `Â′` the symmetric
/// normalization of `A′` (whose diagonal already holds the self-loops).
pub fn propagate_correlation(a_syn: &Matrix, e: &Matrix, order: usize) -> Result<CorrelationBundle> {
    if a_syn.rows() != a_syn.cols() || a_syn.rows() != e.cols() {
        return Err(Error::shape(
            "propagate_correlation",
            format!("A′ {:?}, E {:?}", a_syn.shape(), e.shape()),
        ));
    }
    let adj = NormalizedAdjacency::from_dense_weighted(a_syn)?;
    let mut u_powers = vec![e.transpose()];
    for _ in 0..order {
        let next = adj.spmm(u_powers.last().unwrap())?;
        u_powers.push(next);
    }
    Ok(CorrelationBundle { e: e.clone(), u_powers })
}

/// Per-edge reliability over an explicit edge list, each pair `(i, j)`
/// with `i < j`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ReliabilityScores {
    pub edges: Vec<(usize, usize)>,
    pub scores: Vec<f64>,
}

impl ReliabilityScores {
    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    fn min_max(&self) -> Option<(f64, f64)> {
        self.scores.iter().fold(None, |acc, &s| match acc {
            None => Some((s, s)),
            Some((lo, hi)) => Some((lo.min(s), hi.max(s))),
        })
    }
}

/// Pre-normalized left/right halves of the concatenations, so one score
/// is a single dot product of width `d + N′`.
///
/// `𝓜_i·𝓦_j = X_i·X_j + E_i·Σ_k U^(k)ᵀ_j` because `E_i` is repeated once per
/// order; the norms are `‖𝓜_i‖² = ‖X_i‖² + (K+1)‖E_i‖²` and
/// `‖𝓦_j‖² = ‖X_j‖² + Σ_k ‖U^(k)ᵀ_j‖²`.
pub struct ReliabilityScorer {
    left: Matrix,
    right: Matrix,
}

impl ReliabilityScorer {
    /// Feature-only scorer (warm-up): `cos(X_i, X_j)`.
    pub fn features_only(x: &Matrix) -> Self {
        let mut left = x.clone();
        for r in 0..left.rows() {
            let row = left.row_mut(r);
            let n = norm(row);
            if n > 0.0 {
                row.iter_mut().for_each(|v| *v /= n);
            }
        }
        ReliabilityScorer {
            right: left.clone(),
            left,
        }
    }

    pub fn new(x: &Matrix, bundle: &CorrelationBundle) -> Result<Self> {
        let n = x.rows();
        let n_syn = bundle.e.cols();
        if bundle.e.rows() != n || bundle.u_powers.iter().any(|u| u.shape() != (n_syn, n)) {
            return Err(Error::shape(
                "edge_reliability",
                format!("X has {n} rows, correlation bundle E {:?}", bundle.e.shape()),
            ));
        }
        let copies = bundle.u_powers.len() as f64;
        let d = x.cols();
        let mut left = Matrix::zeros(n, d + n_syn);
        let mut right = Matrix::zeros(n, d + n_syn);
        for i in 0..n {
            let xi = x.row(i);
            let ei = bundle.e.row(i);
            let l = left.row_mut(i);
            l[..d].copy_from_slice(xi);
            l[d..].copy_from_slice(ei);
            let lnorm = (dot(xi, xi) + copies * dot(ei, ei)).sqrt();
            if lnorm > 0.0 {
                l.iter_mut().for_each(|v| *v /= lnorm);
            }
            let r = right.row_mut(i);
            r[..d].copy_from_slice(xi);
            let mut rsq = dot(xi, xi);
            for u in &bundle.u_powers {
                for (j, slot) in r[d..].iter_mut().enumerate() {
                    let v = u[(j, i)];
                    *slot += v;
                    rsq += v * v;
                }
            }
            let rnorm = rsq.sqrt();
            if rnorm > 0.0 {
                r.iter_mut().for_each(|v| *v /= rnorm);
            }
        }
        Ok(ReliabilityScorer { left, right })
    }

    pub fn num_nodes(&self) -> usize {
        self.left.rows()
    }

    /// Reliability of the pair `(i, j)`, read as `cos(𝓜_i, 𝓦_j)`.
    #[inline]
    pub fn score(&self, i: usize, j: usize) -> f64 {
        dot(self.left.row(i), self.right.row(j))
    }

    pub fn score_edges(&self, edges: &[(usize, usize)]) -> Result<ReliabilityScores> {
        let n = self.num_nodes();
        if let Some(&(u, v)) = edges.iter().find(|&&(u, v)| u >= n || v >= n) {
            return Err(Error::EndpointOutOfRange { u, v, num_nodes: n });
        }
        let scores = edges.par_iter().map(|&(i, j)| self.score(i, j)).collect();
        Ok(ReliabilityScores {
            edges: edges.to_vec(),
            scores,
        })
    }
}

/// Reliability of each listed edge; `bundle = None` is the feature-only
/// warm-up score.
pub fn edge_reliability(
    x: &Matrix,
    bundle: Option<&CorrelationBundle>,
    edges: &[(usize, usize)],
) -> Result<ReliabilityScores> {
    let scorer = match bundle {
        Some(b) => ReliabilityScorer::new(x, b)?,
        None => ReliabilityScorer::features_only(x),
    };
    scorer.score_edges(edges)
}

fn check_cover(graph: &Graph, scores: &ReliabilityScores) -> Result<()> {
    if scores.edges.as_slice() != graph.edges() || scores.scores.len() != scores.edges.len() {
        return Err(Error::ScoreMismatch {
            scores: scores.edges.len(),
            edges: graph.num_edges(),
        });
    }
    Ok(())
}

/// Keep an existing edge iff its score is above `ε1`.
pub fn delete_unreliable(graph: &Graph, scores: &ReliabilityScores, eps1: f64) -> Result<Graph> {
    check_cover(graph, scores)?;
    let kept: Vec<(usize, usize)> = scores
        .edges
        .iter()
        .zip(&scores.scores)
        .filter(|(_, &s)| s > eps1)
        .map(|(&e, _)| e)
        .collect();
    Ok(graph.with_canonical_edges(kept))
}

/// Add a candidate iff its score is above `ε2`.
pub fn add_reliable(
    graph: &Graph,
    candidates: &EdgeCandidateSet,
    scores: &ReliabilityScores,
    eps2: f64,
) -> Result<Graph> {
    if scores.edges.as_slice() != candidates.pairs() {
        return Err(Error::ScoreMismatch {
            scores: scores.edges.len(),
            edges: candidates.len(),
        });
    }
    let mut edges = graph.edges().to_vec();
    for (&(i, j), &s) in scores.edges.iter().zip(&scores.scores) {
        if graph.has_edge(i, j) {
            return Err(Error::CandidateOverlap(i, j));
        }
        if s > eps2 {
            edges.push((i, j));
        }
    }
    edges.sort_unstable();
    Ok(graph.with_canonical_edges(edges))
}

/// Ranking used to pick nearest candidates: higher score first, then the
/// lower partner id.
fn partner_order(a: &(usize, f64), b: &(usize, f64)) -> std::cmp::Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

fn keep_top(buf: &mut Vec<(usize, f64)>, r_nn: usize) {
    if buf.len() > r_nn {
        if r_nn > 0 {
            buf.select_nth_unstable_by(r_nn - 1, partner_order);
        }
        buf.truncate(r_nn);
    }
}

/// Per node, keep its `r_nn` best-scoring candidate partners; a pair
/// survives if either endpoint keeps it.
pub fn select_knn_candidates(
    candidates: &EdgeCandidateSet,
    scores: &ReliabilityScores,
    r_nn: usize,
) -> Result<EdgeCandidateSet> {
    if scores.edges.as_slice() != candidates.pairs() {
        return Err(Error::ScoreMismatch {
            scores: scores.edges.len(),
            edges: candidates.len(),
        });
    }
    let n = candidates
        .pairs()
        .iter()
        .map(|&(_, j)| j + 1)
        .max()
        .unwrap_or(0);
    let mut per_node: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for (&(i, j), &s) in candidates.pairs().iter().zip(&scores.scores) {
        per_node[i].push((j, s));
        per_node[j].push((i, s));
    }
    let mut kept = Vec::new();
    for (i, mut list) in per_node.into_iter().enumerate() {
        keep_top(&mut list, r_nn);
        kept.extend(list.into_iter().map(|(j, _)| (i, j)));
    }
    Ok(EdgeCandidateSet::new(kept))
}

/// Streaming `L`-hop candidate generation fused with scoring and `r_nn`
/// selection; never materializes the full `L`-hop set. Returns the kept
/// candidates with their scores and the number of pairs scored.
pub fn nearest_khop_candidates(
    graph: &Graph,
    hops: usize,
    r_nn: usize,
    scorer: &ReliabilityScorer,
) -> (ReliabilityScores, usize) {
    let n = graph.num_nodes();
    let per_node: Vec<(Vec<(usize, f64)>, usize)> = (0..n)
        .into_par_iter()
        .map_init(
            || KhopExplorer::new(graph, hops),
            |explorer, i| {
                let mut buf: Vec<(usize, f64)> = explorer
                    .partners(i)
                    .iter()
                    .map(|&j| (j, scorer.score(i.min(j), i.max(j))))
                    .collect();
                let scored = buf.len();
                keep_top(&mut buf, r_nn);
                (buf, scored)
            },
        )
        .collect();
    let mut scored = 0;
    let mut pairs: Vec<((usize, usize), f64)> = Vec::new();
    for (i, (list, count)) in per_node.into_iter().enumerate() {
        scored += count;
        pairs.extend(list.into_iter().map(|(j, s)| ((i.min(j), i.max(j)), s)));
    }
    pairs.sort_unstable_by(|a, b| a.0.cmp(&b.0));
    pairs.dedup_by(|a, b| a.0 == b.0);
    let (edges, scores) = pairs.into_iter().unzip();
    (ReliabilityScores { edges, scores }, scored)
}

/// `Ŷ^(k) = α·Â·Ŷ^(k−1) + (1−α)·Ŷ^(0)`, iterated `iters` times.
pub fn label_propagate(adj: &NormalizedAdjacency, seed: &Matrix, alpha: f64, iters: usize) -> Result<Matrix> {
    if seed.rows() != adj.num_nodes() {
        return Err(Error::shape(
            "label_propagate",
            format!("adjacency has {} rows, seed matrix {}", adj.num_nodes(), seed.rows()),
        ));
    }
    let mut cur = seed.clone();
    for _ in 0..iters {
        let mut next = adj.spmm(&cur)?;
        for (v, &s) in next.as_mut_slice().iter_mut().zip(seed.as_slice()) {
            *v = alpha * *v + (1.0 - alpha) * s;
        }
        cur = next;
    }
    Ok(cur)
}

/// Number of query nodes whose propagated argmax (lowest class on ties)
/// equals the true label.
pub fn lp_objective(propagated: &Matrix, labels: &[Option<usize>], query: &[usize]) -> Result<usize> {
    if query.is_empty() {
        return Err(Error::EmptyMask("query"));
    }
    let mut correct = 0;
    for &v in query {
        let y = labels[v].ok_or(Error::Unlabeled { node: v })?;
        correct += usize::from(argmax(propagated.row(v)) == y);
    }
    Ok(correct)
}

/// Random support/query partition of the training nodes, seeded.
pub fn support_split(train_nodes: &[usize], fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut order = train_nodes.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let k = ((fraction * order.len() as f64).round() as usize).min(order.len());
    let mut support = order[..k].to_vec();
    let mut query = order[k..].to_vec();
    support.sort_unstable();
    query.sort_unstable();
    (support, query)
}

/// One-hot rows for support nodes, zero rows elsewhere.
pub fn seed_matrix(graph: &Graph, support: &[usize]) -> Result<Matrix> {
    let mut y = Matrix::zeros(graph.num_nodes(), graph.num_classes());
    for &v in support {
        let c = graph.label(v).ok_or(Error::Unlabeled { node: v })?;
        y[(v, c)] = 1.0;
    }
    Ok(y)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub eps1: f64,
    pub eps2: f64,
    /// `(ε1, ε2, correct query count)` per evaluated lattice pair, in
    /// lattice order.
    pub trace: Vec<(f64, f64, usize)>,
}

impl Thresholds {
    pub fn new(eps1: f64, eps2: f64) -> Self {
        Thresholds {
            eps1,
            eps2,
            trace: Vec::new(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Threshold lattice `{min + m·c : m = 0..h−1}`, `c = (max − min)/(h − 1)`.
/// The last point is `max` itself rather than the rounded sum.
pub fn threshold_lattice(min: f64, max: f64, points: usize) -> Vec<f64> {
    if max <= min {
        return vec![min];
    }
    let c = (max - min) / (points - 1) as f64;
    let mut out: Vec<f64> = (0..points).map(|m| min + m as f64 * c).collect();
    out[points - 1] = max;
    out
}

/// Counters and wall-clock seconds of one structure optimization.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DenoiseStats {
    pub edges_before: usize,
    pub edges_after_delete: usize,
    pub edges_after_add: usize,
    /// Candidate pairs scored during `L`-hop expansion.
    pub candidate_pairs_scored: usize,
    /// Existing edges scored.
    pub edge_pairs_scored: usize,
    /// Entries of `E` and all `U^(k)` computed.
    pub correlation_entries: usize,
    pub lattice_pairs: usize,
    pub t_correlation_s: f64,
    pub t_delete_s: f64,
    pub t_add_s: f64,
    pub t_search_s: f64,
    pub t_total_s: f64,
}

impl DenoiseStats {
    pub fn accumulate(&mut self, other: &DenoiseStats) {
        self.candidate_pairs_scored += other.candidate_pairs_scored;
        self.edge_pairs_scored += other.edge_pairs_scored;
        self.correlation_entries += other.correlation_entries;
        self.lattice_pairs += other.lattice_pairs;
        self.t_correlation_s += other.t_correlation_s;
        self.t_delete_s += other.t_delete_s;
        self.t_add_s += other.t_add_s;
        self.t_search_s += other.t_search_s;
        self.t_total_s += other.t_total_s;
    }
}

#[derive(Clone, Debug)]
pub struct DenoiseOutcome {
    pub graph: Graph,
    pub thresholds: Thresholds,
    pub stats: DenoiseStats,
}

/// Scores for both phases plus what it cost to get them.
struct ScoredStructure {
    edges: ReliabilityScores,
    candidates: ReliabilityScores,
    stats: DenoiseStats,
}

fn score_structure(graph: &Graph, syn: Option<&CondensedGraph>, config: &DenoiseConfig) -> Result<ScoredStructure> {
    let mut stats = DenoiseStats {
        edges_before: graph.num_edges(),
        ..Default::default()
    };
    let t0 = Instant::now();
    let scorer = match syn {
        Some(s) => {
            if s.features.cols() != graph.feature_dim() {
                return Err(Error::shape(
                    "denoise",
                    format!(
                        "graph features have dim {}, condensed graph {}",
                        graph.feature_dim(),
                        s.features.cols()
                    ),
                ));
            }
            let e = correlation_matrix(graph.features(), &s.features)?;
            let bundle = propagate_correlation(&s.adjacency, &e, config.corr_order)?;
            stats.correlation_entries = e.rows() * e.cols() * (1 + bundle.u_powers.len());
            ReliabilityScorer::new(graph.features(), &bundle)?
        }
        None => ReliabilityScorer::features_only(graph.features()),
    };
    stats.t_correlation_s = t0.elapsed().as_secs_f64();

    let t1 = Instant::now();
    let edges = scorer.score_edges(graph.edges())?;
    stats.edge_pairs_scored = edges.len();
    stats.t_delete_s = t1.elapsed().as_secs_f64();

    let t2 = Instant::now();
    let (candidates, scored) = nearest_khop_candidates(graph, config.hops, config.r_nn, &scorer);
    stats.candidate_pairs_scored = scored;
    stats.t_add_s = t2.elapsed().as_secs_f64();
    Ok(ScoredStructure {
        edges,
        candidates,
        stats,
    })
}

/// Edge and candidate lists sorted by descending score, so the edges kept
/// at any threshold form a prefix.
struct SortedPhase {
    edges: Vec<(usize, usize)>,
    scores: Vec<f64>,
}

impl SortedPhase {
    fn new(s: &ReliabilityScores) -> Self {
        let mut idx: Vec<usize> = (0..s.len()).collect();
        idx.sort_by(|&a, &b| s.scores[b].total_cmp(&s.scores[a]).then(s.edges[a].cmp(&s.edges[b])));
        SortedPhase {
            edges: idx.iter().map(|&k| s.edges[k]).collect(),
            scores: idx.iter().map(|&k| s.scores[k]).collect(),
        }
    }

    /// Number of entries scoring strictly above `eps`.
    fn kept(&self, eps: f64) -> usize {
        self.scores.partition_point(|&s| s > eps)
    }
}

/// Total order for the search: more correct first, then larger ε1, then
/// larger ε2.
fn better(a: (usize, usize, usize), b: (usize, usize, usize)) -> bool {
    (a.2, a.0, a.1) > (b.2, b.0, b.1)
}

fn search_lattice(
    graph: &Graph,
    scored: &ScoredStructure,
    config: &DenoiseConfig,
) -> Result<(Thresholds, usize, usize)> {
    let (support, query) = support_split(&graph.masks().train, config.support_fraction, config.seed);
    let seed = seed_matrix(graph, &support)?;
    let range = match (scored.edges.min_max(), scored.candidates.min_max()) {
        (Some((a, b)), Some((c, d))) => Some((a.min(c), b.max(d))),
        (Some(r), None) | (None, Some(r)) => Some(r),
        (None, None) => None,
    };
    let Some((lo, hi)) = range else {
        log::warn!("no edges or candidates to score; leaving structure unchanged");
        return Ok((Thresholds::new(-1.0, 1.0), 0, 0));
    };
    if hi <= lo {
        log::warn!("degenerate threshold lattice: every score equals {lo}");
    }
    let lattice = threshold_lattice(lo, hi, config.search_points);
    let del = SortedPhase::new(&scored.edges);
    let add = SortedPhase::new(&scored.candidates);

    // identical prefix lengths give identical graphs; evaluate each once
    let mut keys: Vec<(usize, usize)> = Vec::with_capacity(lattice.len() * lattice.len());
    for &e1 in &lattice {
        for &e2 in &lattice {
            keys.push((del.kept(e1), add.kept(e2)));
        }
    }
    let mut unique = keys.clone();
    unique.sort_unstable();
    unique.dedup();
    let n = graph.num_nodes();
    let results: Vec<Result<usize>> = unique
        .par_iter()
        .map(|&(k1, k2)| {
            let edges = del.edges[..k1].iter().chain(&add.edges[..k2]).copied();
            let adj = NormalizedAdjacency::from_canonical_edges(n, edges);
            let y = label_propagate(&adj, &seed, config.alpha, config.lp_iters)?;
            lp_objective(&y, graph.labels(), &query)
        })
        .collect();
    let mut objective = std::collections::HashMap::with_capacity(unique.len());
    for (key, r) in unique.into_iter().zip(results) {
        objective.insert(key, r?);
    }

    let mut trace = Vec::with_capacity(keys.len());
    let mut best: Option<(usize, usize, usize)> = None;
    let h = lattice.len();
    for (m1, &e1) in lattice.iter().enumerate() {
        for (m2, &e2) in lattice.iter().enumerate() {
            let count = objective[&keys[m1 * h + m2]];
            trace.push((e1, e2, count));
            let cand = (m1, m2, count);
            if best.is_none_or(|b| better(cand, b)) {
                best = Some(cand);
            }
        }
    }
    let (m1, m2, _) = best.expect("lattice is never empty");
    let kept = keys[m1 * h + m2];
    Ok((
        Thresholds {
            eps1: lattice[m1],
            eps2: lattice[m2],
            trace,
        },
        kept.0,
        kept.1,
    ))
}

fn optimize_structure(graph: &Graph, syn: Option<&CondensedGraph>, config: &DenoiseConfig) -> Result<DenoiseOutcome> {
    config.validate()?;
    let t_all = Instant::now();
    let scored = score_structure(graph, syn, config)?;
    let t_search = Instant::now();
    let (thresholds, k1, k2) = search_lattice(graph, &scored, config)?;
    let out = apply_thresholds(graph, &scored.edges, &scored.candidates, &thresholds)?;
    let mut stats = scored.stats;
    stats.lattice_pairs = thresholds.trace.len();
    debug_assert_eq!(out.0, k1);
    debug_assert_eq!(out.1.num_edges(), k1 + k2);
    stats.edges_after_delete = out.0;
    stats.edges_after_add = out.1.num_edges();
    stats.t_search_s = t_search.elapsed().as_secs_f64();
    stats.t_total_s = t_all.elapsed().as_secs_f64();
    Ok(DenoiseOutcome {
        graph: out.1,
        thresholds,
        stats,
    })
}

/// Delete then add; returns the edge count after deletion and the result.
fn apply_thresholds(
    graph: &Graph,
    edge_scores: &ReliabilityScores,
    cand_scores: &ReliabilityScores,
    thresholds: &Thresholds,
) -> Result<(usize, Graph)> {
    let pruned = delete_unreliable(graph, edge_scores, thresholds.eps1)?;
    let after_delete = pruned.num_edges();
    let cands = EdgeCandidateSet::new(cand_scores.edges.iter().copied());
    let added = add_reliable(&pruned, &cands, cand_scores, thresholds.eps2)?;
    Ok((after_delete, added))
}

/// Score `𝓔` and the nearest `L`-hop candidates against the condensed
/// graph, then search `(ε1, ε2)` by label propagation accuracy. Edits
/// always start from `graph`'s own edge set.
pub fn grid_search_thresholds(graph: &Graph, s: &CondensedGraph, config: &DenoiseConfig) -> Result<DenoiseOutcome> {
    optimize_structure(graph, Some(s), config)
}

/// Same search with feature-only reliability `cos(X_i, X_j)`.
pub fn warmup_denoise(graph: &Graph, config: &DenoiseConfig) -> Result<DenoiseOutcome> {
    optimize_structure(graph, None, config)
}

/// Apply frozen thresholds and the condensed graph to a (test) graph: no
/// label propagation, no search.
pub fn test_time_denoise(
    graph: &Graph,
    s: &CondensedGraph,
    thresholds: &Thresholds,
    config: &DenoiseConfig,
) -> Result<DenoiseOutcome> {
    config.validate()?;
    let t_all = Instant::now();
    let scored = score_structure(graph, Some(s), config)?;
    let (after_delete, out) = apply_thresholds(graph, &scored.edges, &scored.candidates, thresholds)?;
    let mut stats = scored.stats;
    stats.edges_after_delete = after_delete;
    stats.edges_after_add = out.num_edges();
    stats.t_total_s = t_all.elapsed().as_secs_f64();
    Ok(DenoiseOutcome {
        graph: out,
        thresholds: Thresholds::new(thresholds.eps1, thresholds.eps2),
        stats,
    })
}

#[derive(Clone, Debug)]
pub struct AlternatingOutcome {
    pub condensed: CondensedGraph,
    pub thresholds: Thresholds,
    pub graph: Graph,
    /// Warm-up first, then one entry per periodic re-optimization.
    pub structure_stats: Vec<DenoiseStats>,
    pub t_condense_s: f64,
}

/// Warm-up, then alternate condensation epochs with a structure search
/// every `period` epochs.
pub fn alternating_optimize(
    train: &Graph,
    condense_config: &CondenseConfig,
    denoise_config: &DenoiseConfig,
) -> Result<AlternatingOutcome> {
    denoise_config.validate()?;
    let warm = warmup_denoise(train, denoise_config)?;
    log::info!(
        "warm-up: {} -> {} edges (eps1 {:.4}, eps2 {:.4})",
        train.num_edges(),
        warm.graph.num_edges(),
        warm.thresholds.eps1,
        warm.thresholds.eps2
    );
    let mut structure = warm.graph;
    let mut thresholds = warm.thresholds;
    let mut structure_stats = vec![warm.stats];

    let t_condense = Instant::now();
    let mut condense_secs = 0.0;
    let mut condenser = Condenser::new(train, condense_config)?;
    let labels = train.labels_of(&train.masks().train)?;
    let mut z = condenser.relay_embeddings(&structure, &normalize(&structure))?;
    for epoch in 1..=condense_config.outer_epochs {
        let t = Instant::now();
        let loss = condenser.step(&z, &labels)?;
        condense_secs += t.elapsed().as_secs_f64();
        if epoch % denoise_config.period == 0 {
            let out = grid_search_thresholds(train, &condenser.finish(), denoise_config)?;
            log::info!(
                "epoch {epoch}: loss {loss:.5}, structure {} -> {} edges (eps1 {:.4}, eps2 {:.4})",
                train.num_edges(),
                out.graph.num_edges(),
                out.thresholds.eps1,
                out.thresholds.eps2
            );
            structure = out.graph;
            thresholds = out.thresholds;
            structure_stats.push(out.stats);
            let t = Instant::now();
            z = condenser.relay_embeddings(&structure, &normalize(&structure))?;
            condense_secs += t.elapsed().as_secs_f64();
        }
    }
    log::debug!("alternating loop took {:.2}s", t_condense.elapsed().as_secs_f64());
    Ok(AlternatingOutcome {
        condensed: condenser.finish(),
        thresholds,
        graph: structure,
        structure_stats,
        t_condense_s: condense_secs,
    })
}
