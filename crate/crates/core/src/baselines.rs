//! Comparison denoisers: Jaccard edge filtering, kNN augmentation and a
//! truncated-SVD low-rank reconstruction of the adjacency.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dense::{cosine, dot, Matrix};
use crate::error::{Error, Result};
use crate::graph::Graph;

pub const JACCARD_GRID: [f64; 5] = [0.01, 0.02, 0.03, 0.04, 0.05];
pub const SVD_RANK_GRID: [usize; 4] = [10, 50, 100, 200];
pub const KNN_GRID: [usize; 5] = [1, 2, 3, 4, 5];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub jaccard_threshold: f64,
    pub svd_rank: usize,
    pub knn_k: usize,
    /// Reconstructed entries at or above this become edges.
    pub svd_cutoff: f64,
    pub seed: u64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            jaccard_threshold: 0.03,
            svd_rank: 50,
            knn_k: 3,
            svd_cutoff: 0.5,
            seed: 0,
        }
    }
}

fn support(row: &[f64]) -> Vec<usize> {
    row.iter()
        .enumerate()
        .filter(|(_, &v)| v != 0.0)
        .map(|(k, _)| k)
        .collect()
}

/// `|a ∩ b| / |a ∪ b|` over sorted index sets; two empty sets count as
/// identical.
pub fn jaccard(a: &[usize], b: &[usize]) -> f64 {
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
    let union = a.len() + b.len() - common;
    if union == 0 {
        1.0
    } else {
        common as f64 / union as f64
    }
}

/// Drop edges whose endpoints' feature supports have Jaccard similarity
/// below `threshold`.
pub fn jaccard_denoise(graph: &Graph, threshold: f64) -> Graph {
    let supports: Vec<Vec<usize>> = graph.features().row_iter().map(support).collect();
    let kept: Vec<(usize, usize)> = graph
        .edges()
        .par_iter()
        .filter(|&&(i, j)| jaccard(&supports[i], &supports[j]) >= threshold)
        .copied()
        .collect();
    graph.with_canonical_edges(kept)
}

/// Link every node to its `k` most cosine-similar non-neighbors (higher
/// similarity first, lower id on ties); the result is the union with the
/// existing edges.
pub fn knn_augment(graph: &Graph, k: usize) -> Result<Graph> {
    if k == 0 {
        return Err(Error::Config("knn k must be >= 1".into()));
    }
    let x = graph.features();
    let n = graph.num_nodes();
    let picked: Vec<Vec<(usize, usize)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut sims: Vec<(usize, f64)> = (0..n)
                .filter(|&j| j != i && !graph.has_edge(i, j))
                .map(|j| (j, cosine(x.row(i), x.row(j))))
                .collect();
            let order = |a: &(usize, f64), b: &(usize, f64)| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0));
            if sims.len() > k {
                sims.select_nth_unstable_by(k - 1, order);
                sims.truncate(k);
            }
            sims.into_iter().map(|(j, _)| (i.min(j), i.max(j))).collect()
        })
        .collect();
    let mut edges = graph.edges().to_vec();
    edges.extend(picked.into_iter().flatten());
    edges.sort_unstable();
    edges.dedup();
    Ok(graph.with_canonical_edges(edges))
}

/// Truncated SVD of a square matrix: `(singular values descending, U, Vᵀ)`
/// with `U: n × rank`, `Vᵀ: rank × n`.
pub struct TruncatedSvd {
    pub values: Vec<f64>,
    pub u: Matrix,
    pub vt: Matrix,
}

impl TruncatedSvd {
    pub fn reconstruct(&self) -> Result<Matrix> {
        let mut us = self.u.clone();
        for r in 0..us.rows() {
            for (v, s) in us.row_mut(r).iter_mut().zip(&self.values) {
                *v *= s;
            }
        }
        us.matmul(&self.vt)
    }
}

const POWER_STEPS: usize = 20;
const OVERSAMPLE: usize = 10;
const JACOBI_SWEEPS: usize = 60;

/// In-place modified Gram-Schmidt on the columns of `m`, run twice for
/// stability. Columns that collapse numerically are zeroed.
fn orthonormalize_columns(m: &mut Matrix) {
    let (rows, cols) = m.shape();
    let mut colv: Vec<Vec<f64>> = (0..cols).map(|c| (0..rows).map(|r| m[(r, c)]).collect()).collect();
    let scale = colv.iter().map(|c| dot(c, c).sqrt()).fold(0.0, f64::max).max(1.0);
    for _ in 0..2 {
        for c in 0..cols {
            let (done, rest) = colv.split_at_mut(c);
            let cur = &mut rest[0];
            for q in done.iter() {
                let p = dot(q, cur);
                cur.iter_mut().zip(q).for_each(|(v, qv)| *v -= p * qv);
            }
            let nrm = dot(cur, cur).sqrt();
            if nrm <= 1e-12 * scale {
                cur.iter_mut().for_each(|v| *v = 0.0);
            } else {
                cur.iter_mut().for_each(|v| *v /= nrm);
            }
        }
    }
    for (c, col) in colv.iter().enumerate() {
        for (r, &v) in col.iter().enumerate() {
            m.as_mut_slice()[r * cols + c] = v;
        }
    }
}

/// One-sided Jacobi SVD of a small `l × n` matrix `b` (rows are the short
/// side). Returns singular values descending, the `l × l` left factor and
/// `Vᵀ` (`l × n`).
fn jacobi_svd(b: &Matrix) -> Result<(Vec<f64>, Matrix, Matrix)> {
    let (l, n) = b.shape();
    // rotate rows of b (columns of bᵀ) until mutually orthogonal
    let mut w: Vec<Vec<f64>> = (0..l).map(|r| b.row(r).to_vec()).collect();
    let mut j = Matrix::identity(l);
    let total: f64 = w.iter().map(|r| dot(r, r)).sum();
    let tol = 1e-15;
    let mut converged = false;
    let mut off = 0.0;
    for _ in 0..JACOBI_SWEEPS {
        off = 0.0f64;
        for p in 0..l {
            for q in p + 1..l {
                let alpha = dot(&w[p], &w[p]);
                let beta = dot(&w[q], &w[q]);
                let gamma = dot(&w[p], &w[q]);
                if alpha == 0.0 || beta == 0.0 {
                    continue;
                }
                let rel = gamma.abs() / (alpha * beta).sqrt();
                off = off.max(rel);
                if rel <= tol {
                    continue;
                }
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                let (lo, hi) = w.split_at_mut(q);
                for (a, bq) in lo[p].iter_mut().zip(hi[0].iter_mut()) {
                    let (x, y) = (*a, *bq);
                    *a = c * x - s * y;
                    *bq = s * x + c * y;
                }
                for r in 0..l {
                    let (x, y) = (j[(r, p)], j[(r, q)]);
                    j.as_mut_slice()[r * l + p] = c * x - s * y;
                    j.as_mut_slice()[r * l + q] = s * x + c * y;
                }
            }
        }
        if off <= tol {
            converged = true;
            break;
        }
    }
    if !converged && off > 1e-10 {
        return Err(Error::SvdNoConvergence {
            iterations: JACOBI_SWEEPS,
            residual: off * total.sqrt(),
        });
    }
    let sig: Vec<f64> = w.iter().map(|r| dot(r, r).sqrt()).collect();
    let mut order: Vec<usize> = (0..l).collect();
    order.sort_by(|&a, &b| sig[b].total_cmp(&sig[a]).then(a.cmp(&b)));
    let values: Vec<f64> = order.iter().map(|&k| sig[k]).collect();
    let u = Matrix::from_fn(l, l, |r, c| j[(r, order[c])]);
    let vt = Matrix::from_fn(l, n, |r, c| {
        let s = sig[order[r]];
        if s > 0.0 {
            w[order[r]][c] / s
        } else {
            0.0
        }
    });
    Ok((values, u, vt))
}

/// Randomized subspace iteration: `POWER_STEPS` power steps with
/// `OVERSAMPLE` extra columns, seeded Gaussian start.
pub fn truncated_svd(a: &Matrix, rank: usize, seed: u64) -> Result<TruncatedSvd> {
    let (rows, cols) = a.shape();
    if rows != cols {
        return Err(Error::shape("truncated_svd", format!("expected a square matrix, got {rows}×{cols}")));
    }
    let n = rows;
    let rank = rank.min(n);
    let width = (rank + OVERSAMPLE).min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let omega = Matrix::from_fn(n, width, |_, _| StandardNormal.sample(&mut rng));
    let mut q = a.matmul(&omega)?;
    orthonormalize_columns(&mut q);
    for _ in 0..POWER_STEPS {
        let mut z = a.t_matmul(&q)?;
        orthonormalize_columns(&mut z);
        q = a.matmul(&z)?;
        orthonormalize_columns(&mut q);
    }
    let b = q.t_matmul(a)?; // width × n
    let (values, ub, vt) = jacobi_svd(&b)?;
    let u_full = q.matmul(&ub)?;
    let keep: Vec<usize> = (0..rank).collect();
    let u = Matrix::from_fn(n, rank, |r, c| u_full[(r, c)]);
    Ok(TruncatedSvd {
        values: values[..rank].to_vec(),
        u,
        vt: vt.select_rows(&keep),
    })
}

pub fn dense_adjacency(graph: &Graph) -> Matrix {
    let n = graph.num_nodes();
    let mut a = Matrix::zeros(n, n);
    for &(i, j) in graph.edges() {
        a.as_mut_slice()[i * n + j] = 1.0;
        a.as_mut_slice()[j * n + i] = 1.0;
    }
    a
}

/// Rank-`rank` reconstruction of the adjacency, binarized at `cutoff`,
/// symmetrized (either direction suffices) and without self-loops. A rank
/// above `N` is clamped to `N`.
pub fn svd_denoise(graph: &Graph, rank: usize, cutoff: f64, seed: u64) -> Result<Graph> {
    let n = graph.num_nodes();
    if rank == 0 {
        return Err(Error::Config("svd rank must be >= 1".into()));
    }
    if rank > n {
        log::warn!("svd rank {rank} exceeds node count {n}; clamping");
    }
    let svd = truncated_svd(&dense_adjacency(graph), rank, seed)?;
    let r = svd.reconstruct()?;
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if r[(i, j)] >= cutoff || r[(j, i)] >= cutoff {
                edges.push((i, j));
            }
        }
    }
    Ok(graph.with_canonical_edges(edges))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Baseline {
    Jaccard,
    Svd,
    Knn,
}

impl Baseline {
    pub fn name(self) -> &'static str {
        match self {
            Baseline::Jaccard => "jaccard",
            Baseline::Svd => "svd",
            Baseline::Knn => "knn",
        }
    }

    pub fn apply(self, graph: &Graph, config: &BaselineConfig) -> Result<Graph> {
        match self {
            Baseline::Jaccard => Ok(jaccard_denoise(graph, config.jaccard_threshold)),
            Baseline::Svd => svd_denoise(graph, config.svd_rank, config.svd_cutoff, config.seed),
            Baseline::Knn => knn_augment(graph, config.knn_k),
        }
    }
}
