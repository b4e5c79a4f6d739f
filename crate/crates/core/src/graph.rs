//! Sparse undirected graphs, symmetric normalization and propagation.
//!
//! Adjacency is stored as compressed sparse rows with both directions
//! present, so a neighbor scan of node `i` costs `O(deg(i))`. The canonical
//! edge list keeps each undirected edge once as `(i, j)` with `i < j`,
//! sorted.

use std::collections::VecDeque;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dense::Matrix;
use crate::error::{Error, Result};

/// Node-role sets. Pairwise disjoint subsets of `[0, N)`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Masks {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Masks {
    pub fn train_only(n: usize) -> Self {
        Masks {
            train: (0..n).collect(),
            ..Default::default()
        }
    }

    pub fn validate(&self, num_nodes: usize) -> Result<()> {
        let mut owner: Vec<Option<&'static str>> = vec![None; num_nodes];
        for (name, set) in [("train", &self.train), ("val", &self.val), ("test", &self.test)] {
            for &v in set {
                if v >= num_nodes {
                    return Err(Error::NodeOutOfRange { node: v, num_nodes });
                }
                if let Some(first) = owner[v] {
                    return Err(Error::SplitOverlap {
                        node: v,
                        first,
                        second: name,
                    });
                }
                owner[v] = Some(name);
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Graph {
    num_nodes: usize,
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
    edges: Vec<(usize, usize)>,
    features: Arc<Matrix>,
    labels: Arc<Vec<Option<usize>>>,
    num_classes: usize,
    masks: Masks,
}

/// Canonicalize an edge list: drop self-loops, orient `i < j`, sort, dedup.
pub fn canonical_edges(
    edges: impl IntoIterator<Item = (usize, usize)>,
    num_nodes: usize,
) -> Result<Vec<(usize, usize)>> {
    let mut out = Vec::new();
    for (u, v) in edges {
        if u >= num_nodes || v >= num_nodes {
            return Err(Error::EndpointOutOfRange { u, v, num_nodes });
        }
        if u != v {
            out.push((u.min(v), u.max(v)));
        }
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

fn csr_from_canonical(num_nodes: usize, edges: &[(usize, usize)]) -> (Vec<usize>, Vec<usize>) {
    let mut deg = vec![0usize; num_nodes];
    for &(i, j) in edges {
        deg[i] += 1;
        deg[j] += 1;
    }
    let mut offsets = Vec::with_capacity(num_nodes + 1);
    offsets.push(0);
    for d in &deg {
        offsets.push(offsets.last().unwrap() + d);
    }
    let mut fill = offsets[..num_nodes].to_vec();
    let mut neighbors = vec![0usize; offsets[num_nodes]];
    for &(i, j) in edges {
        neighbors[fill[i]] = j;
        fill[i] += 1;
        neighbors[fill[j]] = i;
        fill[j] += 1;
    }
    for i in 0..num_nodes {
        neighbors[offsets[i]..offsets[i + 1]].sort_unstable();
    }
    (offsets, neighbors)
}

/// Build a validated graph. Directed input is symmetrized, duplicates and
/// self-loops are dropped. The class count is `max label + 1`.
pub fn build_graph(
    edge_list: &[(usize, usize)],
    num_nodes: usize,
    features: Matrix,
    labels: Vec<Option<usize>>,
    masks: Masks,
) -> Result<Graph> {
    let num_classes = labels.iter().flatten().max().map_or(0, |m| m + 1);
    Graph::from_parts(
        edge_list.iter().copied(),
        num_nodes,
        Arc::new(features),
        Arc::new(labels),
        num_classes,
        masks,
    )
}

impl Graph {
    pub fn from_parts(
        edges: impl IntoIterator<Item = (usize, usize)>,
        num_nodes: usize,
        features: Arc<Matrix>,
        labels: Arc<Vec<Option<usize>>>,
        num_classes: usize,
        masks: Masks,
    ) -> Result<Graph> {
        if features.rows() != num_nodes {
            return Err(Error::LengthMismatch {
                what: "feature rows",
                expected: num_nodes,
                found: features.rows(),
            });
        }
        if labels.len() != num_nodes {
            return Err(Error::LengthMismatch {
                what: "labels",
                expected: num_nodes,
                found: labels.len(),
            });
        }
        for (node, l) in labels.iter().enumerate() {
            if let Some(class) = *l {
                if class >= num_classes {
                    return Err(Error::ClassOutOfRange {
                        node,
                        class,
                        num_classes,
                    });
                }
            }
        }
        masks.validate(num_nodes)?;
        let edges = canonical_edges(edges, num_nodes)?;
        let (offsets, neighbors) = csr_from_canonical(num_nodes, &edges);
        Ok(Graph {
            num_nodes,
            offsets,
            neighbors,
            edges,
            features,
            labels,
            num_classes,
            masks,
        })
    }

    /// Same nodes, features, labels and masks; a different edge set.
    pub fn with_edges(&self, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Graph> {
        let edges = canonical_edges(edges, self.num_nodes)?;
        Ok(self.with_canonical_edges(edges))
    }

    pub(crate) fn with_canonical_edges(&self, edges: Vec<(usize, usize)>) -> Graph {
        debug_assert!(edges.windows(2).all(|w| w[0] < w[1]));
        let (offsets, neighbors) = csr_from_canonical(self.num_nodes, &edges);
        Graph {
            num_nodes: self.num_nodes,
            offsets,
            neighbors,
            edges,
            features: Arc::clone(&self.features),
            labels: Arc::clone(&self.labels),
            num_classes: self.num_classes,
            masks: self.masks.clone(),
        }
    }

    pub fn with_masks(&self, masks: Masks) -> Result<Graph> {
        masks.validate(self.num_nodes)?;
        let mut g = self.clone();
        g.masks = masks;
        Ok(g)
    }

    /// Induced subgraph on `nodes`; node `nodes[k]` becomes node `k`.
    pub fn induced_subgraph(&self, nodes: &[usize], masks: Masks) -> Result<Graph> {
        let mut new_id = vec![usize::MAX; self.num_nodes];
        for (k, &v) in nodes.iter().enumerate() {
            if v >= self.num_nodes {
                return Err(Error::NodeOutOfRange {
                    node: v,
                    num_nodes: self.num_nodes,
                });
            }
            new_id[v] = k;
        }
        let edges = self.edges.iter().filter_map(|&(i, j)| {
            let (a, b) = (new_id[i], new_id[j]);
            (a != usize::MAX && b != usize::MAX).then_some((a, b))
        });
        let features = Arc::new(self.features.select_rows(nodes));
        let labels = Arc::new(nodes.iter().map(|&v| self.labels[v]).collect());
        Graph::from_parts(edges, nodes.len(), features, labels, self.num_classes, masks)
    }

    #[inline]
    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    #[inline]
    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    #[inline]
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[self.offsets[i]..self.offsets[i + 1]]
    }

    #[inline]
    pub fn degree(&self, i: usize) -> usize {
        self.offsets[i + 1] - self.offsets[i]
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        i < self.num_nodes && self.neighbors(i).binary_search(&j).is_ok()
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn features_arc(&self) -> &Arc<Matrix> {
        &self.features
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn labels(&self) -> &[Option<usize>] {
        &self.labels
    }

    pub fn labels_arc(&self) -> &Arc<Vec<Option<usize>>> {
        &self.labels
    }

    pub fn label(&self, i: usize) -> Option<usize> {
        self.labels[i]
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn masks(&self) -> &Masks {
        &self.masks
    }

    /// Labels of `nodes`, failing on the first unlabeled one.
    pub fn labels_of(&self, nodes: &[usize]) -> Result<Vec<usize>> {
        nodes
            .iter()
            .map(|&v| self.labels[v].ok_or(Error::Unlabeled { node: v }))
            .collect()
    }

    /// True when both directions of every stored edge are present.
    pub fn is_symmetric(&self) -> bool {
        (0..self.num_nodes).all(|i| {
            self.neighbors(i)
                .iter()
                .all(|&j| j != i && self.neighbors(j).binary_search(&i).is_ok())
        })
    }
}

/// `D̃^{-1/2} (A + I) D̃^{-1/2}` in compressed sparse rows.
#[derive(Clone, Debug)]
pub struct NormalizedAdjacency {
    n: usize,
    offsets: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

pub fn normalize(graph: &Graph) -> NormalizedAdjacency {
    NormalizedAdjacency::from_canonical_edges(graph.num_nodes, graph.edges.iter().copied())
}

impl NormalizedAdjacency {
    /// Normalize an unweighted undirected edge set given once per edge
    /// (either orientation, no self-loops, no duplicates).
    pub fn from_canonical_edges(
        n: usize,
        edges: impl Iterator<Item = (usize, usize)> + Clone,
    ) -> Self {
        let mut deg = vec![1usize; n];
        for (i, j) in edges.clone() {
            deg[i] += 1;
            deg[j] += 1;
        }
        let mut offsets = Vec::with_capacity(n + 1);
        offsets.push(0);
        for d in &deg {
            offsets.push(offsets.last().unwrap() + d);
        }
        let nnz = offsets[n];
        let mut cols = vec![0usize; nnz];
        let mut vals = vec![0.0; nnz];
        let inv_sqrt: Vec<f64> = deg.iter().map(|&d| 1.0 / (d as f64).sqrt()).collect();
        let mut fill = offsets[..n].to_vec();
        for i in 0..n {
            cols[fill[i]] = i;
            vals[fill[i]] = inv_sqrt[i] * inv_sqrt[i];
            fill[i] += 1;
        }
        for (i, j) in edges {
            let w = inv_sqrt[i] * inv_sqrt[j];
            cols[fill[i]] = j;
            vals[fill[i]] = w;
            fill[i] += 1;
            cols[fill[j]] = i;
            vals[fill[j]] = w;
            fill[j] += 1;
        }
        NormalizedAdjacency {
            n,
            offsets,
            cols,
            vals,
        }
    }

    /// Symmetric normalization of a dense nonnegative weight matrix whose
    /// diagonal already carries the self-loops.
    pub fn from_dense_weighted(a: &Matrix) -> Result<Self> {
        let n = a.rows();
        if a.cols() != n {
            return Err(Error::shape("from_dense_weighted", format!("{:?}", a.shape())));
        }
        let deg: Vec<f64> = a.row_iter().map(|r| r.iter().sum()).collect();
        let inv_sqrt: Vec<f64> = deg
            .iter()
            .map(|&d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 })
            .collect();
        let mut offsets = vec![0];
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        for i in 0..n {
            for (j, &w) in a.row(i).iter().enumerate() {
                if w != 0.0 {
                    cols.push(j);
                    vals.push(w * inv_sqrt[i] * inv_sqrt[j]);
                }
            }
            offsets.push(cols.len());
        }
        Ok(NormalizedAdjacency {
            n,
            offsets,
            cols,
            vals,
        })
    }

    pub fn identity(n: usize) -> Self {
        NormalizedAdjacency {
            n,
            offsets: (0..=n).collect(),
            cols: (0..n).collect(),
            vals: vec![1.0; n],
        }
    }

    #[inline]
    pub fn num_nodes(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    #[inline]
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.offsets[i]..self.offsets[i + 1];
        (&self.cols[r.clone()], &self.vals[r])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (c, v) = self.row(i);
        c.iter().position(|&x| x == j).map_or(0.0, |p| v[p])
    }

    pub fn to_dense(&self) -> Matrix {
        let mut m = Matrix::zeros(self.n, self.n);
        for i in 0..self.n {
            let (c, v) = self.row(i);
            for (&j, &w) in c.iter().zip(v) {
                m[(i, j)] += w;
            }
        }
        m
    }

    /// One sparse-dense product `Â · m`. Rows are computed independently
    /// with a fixed summation order, so the result does not depend on the
    /// thread count.
    pub fn spmm(&self, m: &Matrix) -> Result<Matrix> {
        if m.rows() != self.n {
            return Err(Error::shape(
                "propagate",
                format!("adjacency has {} rows, matrix has {}", self.n, m.rows()),
            ));
        }
        let width = m.cols();
        let mut out = Matrix::zeros(self.n, width);
        if width == 0 {
            return Ok(out);
        }
        let kernel = |(i, o): (usize, &mut [f64])| {
            let (c, v) = self.row(i);
            for (&j, &w) in c.iter().zip(v) {
                for (ov, &x) in o.iter_mut().zip(m.row(j)) {
                    *ov += w * x;
                }
            }
        };
        if self.nnz() * width > 1 << 16 {
            out.as_mut_slice()
                .par_chunks_mut(width)
                .enumerate()
                .for_each(kernel);
        } else {
            out.as_mut_slice()
                .chunks_mut(width)
                .enumerate()
                .for_each(kernel);
        }
        Ok(out)
    }
}

/// `Â^k · matrix`; `k = 0` returns the input.
pub fn propagate(adj: &NormalizedAdjacency, matrix: &Matrix, steps: usize) -> Result<Matrix> {
    if matrix.rows() != adj.num_nodes() {
        return Err(Error::shape(
            "propagate",
            format!(
                "adjacency has {} rows, matrix has {}",
                adj.num_nodes(),
                matrix.rows()
            ),
        ));
    }
    let mut cur = matrix.clone();
    for _ in 0..steps {
        cur = adj.spmm(&cur)?;
    }
    Ok(cur)
}

/// Fraction of edges joining same-class endpoints. An empty edge set has
/// homophily 1.0.
pub fn edge_homophily(graph: &Graph) -> Result<f64> {
    homophily_of(graph.labels(), graph.edges().iter().copied(), graph.num_edges())
}

pub(crate) fn homophily_of(
    labels: &[Option<usize>],
    edges: impl Iterator<Item = (usize, usize)>,
    count: usize,
) -> Result<f64> {
    if count == 0 {
        return Ok(1.0);
    }
    let mut same = 0usize;
    for (i, j) in edges {
        let li = labels[i].ok_or(Error::Unlabeled { node: i })?;
        let lj = labels[j].ok_or(Error::Unlabeled { node: j })?;
        same += usize::from(li == lj);
    }
    Ok(same as f64 / count as f64)
}

/// Unordered node pairs, no self-loops, no duplicates, each as `(i, j)` with
/// `i < j`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EdgeCandidateSet(Vec<(usize, usize)>);

impl EdgeCandidateSet {
    pub fn new(pairs: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut v: Vec<(usize, usize)> = pairs
            .into_iter()
            .filter(|(i, j)| i != j)
            .map(|(i, j)| (i.min(j), i.max(j)))
            .collect();
        v.sort_unstable();
        v.dedup();
        EdgeCandidateSet(v)
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_vec(self) -> Vec<(usize, usize)> {
        self.0
    }
}

/// Breadth-first explorer reporting, for a source node, every node at
/// shortest-path distance `2..=hops`. Reuses its buffers across sources.
pub struct KhopExplorer<'g> {
    graph: &'g Graph,
    hops: usize,
    stamp: Vec<usize>,
    epoch: usize,
    queue: VecDeque<(usize, usize)>,
    found: Vec<usize>,
}

impl<'g> KhopExplorer<'g> {
    pub fn new(graph: &'g Graph, hops: usize) -> Self {
        KhopExplorer {
            graph,
            hops,
            stamp: vec![0; graph.num_nodes()],
            epoch: 0,
            queue: VecDeque::new(),
            found: Vec::new(),
        }
    }

    /// Nodes at distance 2..=hops from `src`, in BFS discovery order.
    pub fn partners(&mut self, src: usize) -> &[usize] {
        self.epoch += 1;
        let epoch = self.epoch;
        self.found.clear();
        self.queue.clear();
        self.stamp[src] = epoch;
        self.queue.push_back((src, 0));
        while let Some((v, d)) = self.queue.pop_front() {
            if d == self.hops {
                continue;
            }
            for &w in self.graph.neighbors(v) {
                if self.stamp[w] != epoch {
                    self.stamp[w] = epoch;
                    if d + 1 >= 2 {
                        self.found.push(w);
                    }
                    self.queue.push_back((w, d + 1));
                }
            }
        }
        &self.found
    }
}

/// Pairs at shortest-path distance `<= hops` that are not already edges.
pub fn khop_candidates(graph: &Graph, hops: usize) -> EdgeCandidateSet {
    let mut explorer = KhopExplorer::new(graph, hops);
    let mut pairs = Vec::new();
    for i in 0..graph.num_nodes() {
        for &j in explorer.partners(i) {
            if i < j {
                pairs.push((i, j));
            }
        }
    }
    pairs.sort_unstable();
    EdgeCandidateSet(pairs)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphStats {
    pub num_nodes: usize,
    /// `2|E|`, counting both directions.
    pub directed_edges: usize,
    /// `2|E| / N²` as a percentage.
    pub sparsity_percent: f64,
    /// `None` when some edge endpoint is unlabeled.
    pub homophily: Option<f64>,
}

pub fn graph_statistics(graph: &Graph) -> GraphStats {
    let n = graph.num_nodes();
    let directed = 2 * graph.num_edges();
    GraphStats {
        num_nodes: n,
        directed_edges: directed,
        sparsity_percent: if n == 0 {
            0.0
        } else {
            100.0 * directed as f64 / (n as f64 * n as f64)
        },
        homophily: edge_homophily(graph).ok(),
    }
}
