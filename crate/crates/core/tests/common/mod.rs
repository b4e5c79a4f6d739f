//! Dense, brute-force reference implementations shared by the integration
//! tests. Nothing here calls the library code it is checked against.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use robgc::dense::Matrix;
use robgc::graph::{build_graph, Graph, Masks};

pub type Dense = Vec<Vec<f64>>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Erdős–Rényi graph with random features and labels, every node training.
pub fn random_graph(r: &mut ChaCha8Rng, n: usize, p: f64, dim: usize, classes: usize) -> Graph {
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if r.random_bool(p) {
                edges.push((i, j));
            }
        }
    }
    let x = Matrix::from_fn(n, dim, |_, _| r.random_range(-1.0..1.0));
    let labels = (0..n).map(|_| Some(r.random_range(0..classes))).collect();
    let mut g = build_graph(&edges, n, x, labels, Masks::train_only(n)).unwrap();
    if g.num_classes() < classes {
        // keep the class count fixed even if a class was never drawn
        let mut labels: Vec<Option<usize>> = g.labels().to_vec();
        labels[0] = Some(classes - 1);
        g = build_graph(&edges, n, g.features().clone(), labels, Masks::train_only(n)).unwrap();
    }
    g
}

pub fn to_dense(m: &Matrix) -> Dense {
    (0..m.rows()).map(|r| m.row(r).to_vec()).collect()
}

pub fn adjacency(n: usize, edges: &[(usize, usize)]) -> Dense {
    let mut a = vec![vec![0.0; n]; n];
    for &(i, j) in edges {
        a[i][j] = 1.0;
        a[j][i] = 1.0;
    }
    a
}

/// `D^-1/2 W D^-1/2` with `D` the row sums of `W`.
pub fn sym_normalize(w: &Dense) -> Dense {
    let n = w.len();
    let d: Vec<f64> = w.iter().map(|r| r.iter().sum()).collect();
    let mut out = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            if w[i][j] != 0.0 {
                out[i][j] = w[i][j] / (d[i].sqrt() * d[j].sqrt());
            }
        }
    }
    out
}

/// `D̃^-1/2 (A + I) D̃^-1/2`.
pub fn gcn_normalize(n: usize, edges: &[(usize, usize)]) -> Dense {
    let mut a = adjacency(n, edges);
    for (i, row) in a.iter_mut().enumerate() {
        row[i] += 1.0;
    }
    sym_normalize(&a)
}

pub fn matmul(a: &Dense, b: &Dense) -> Dense {
    let k = b.len();
    let m = b.first().map_or(0, Vec::len);
    a.iter()
        .map(|row| {
            let mut out = vec![0.0; m];
            for t in 0..k {
                for c in 0..m {
                    out[c] += row[t] * b[t][c];
                }
            }
            out
        })
        .collect()
}

pub fn transpose(a: &Dense) -> Dense {
    let m = a.first().map_or(0, Vec::len);
    (0..m).map(|c| a.iter().map(|r| r[c]).collect()).collect()
}

pub fn cos(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

pub fn max_abs_diff(a: &Dense, b: &Matrix) -> f64 {
    let mut worst = 0.0f64;
    for (r, row) in a.iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            worst = worst.max((v - b[(r, c)]).abs());
        }
    }
    worst
}

/// Plain dense label propagation.
pub fn dense_lp(a_hat: &Dense, y0: &Dense, alpha: f64, iters: usize) -> Dense {
    let mut y = y0.clone();
    for _ in 0..iters {
        let ay = matmul(a_hat, &y);
        y = ay
            .iter()
            .zip(y0)
            .map(|(r, s)| r.iter().zip(s).map(|(a, b)| alpha * a + (1.0 - alpha) * b).collect())
            .collect();
    }
    y
}

/// Reliability through the literal concatenations
/// `[X_i ‖ E_i ‖ … ‖ E_i]` and `[X_j ‖ U^(0)ᵀ_j ‖ … ‖ U^(K)ᵀ_j]`.
pub fn dense_reliability(x: &Dense, x_syn: &Dense, a_syn: &Dense, order: usize, pairs: &[(usize, usize)]) -> Vec<f64> {
    let e: Dense = x.iter().map(|xi| x_syn.iter().map(|s| cos(xi, s)).collect()).collect();
    let a_hat = sym_normalize(a_syn);
    let mut u = vec![transpose(&e)];
    for _ in 0..order {
        let next = matmul(&a_hat, u.last().unwrap());
        u.push(next);
    }
    let left = |i: usize| -> Vec<f64> {
        let mut v = x[i].clone();
        for _ in 0..=order {
            v.extend_from_slice(&e[i]);
        }
        v
    };
    let right = |j: usize| -> Vec<f64> {
        let mut v = x[j].clone();
        for uk in &u {
            v.extend(uk.iter().map(|row| row[j]));
        }
        v
    };
    pairs.iter().map(|&(i, j)| cos(&left(i), &right(j))).collect()
}

/// All-pairs hop distances (`usize::MAX` when unreachable).
pub fn floyd_warshall(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<usize>> {
    let inf = usize::MAX / 4;
    let mut d = vec![vec![inf; n]; n];
    for (i, row) in d.iter_mut().enumerate() {
        row[i] = 0;
    }
    for &(i, j) in edges {
        d[i][j] = 1;
        d[j][i] = 1;
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                let via = d[i][k] + d[k][j];
                if via < d[i][j] {
                    d[i][j] = via;
                }
            }
        }
    }
    d
}

/// Pairs `i < j` at distance `2..=hops`.
pub fn khop_oracle(n: usize, edges: &[(usize, usize)], hops: usize) -> Vec<(usize, usize)> {
    let d = floyd_warshall(n, edges);
    let mut out = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if d[i][j] >= 2 && d[i][j] <= hops {
                out.push((i, j));
            }
        }
    }
    out
}

/// Per node full sort of its candidate partners by (score desc, id asc),
/// keep `r`; union over nodes.
pub fn knn_oracle(pairs: &[(usize, usize)], scores: &[f64], n: usize, r: usize) -> Vec<(usize, usize)> {
    let mut kept = Vec::new();
    for v in 0..n {
        let mut mine: Vec<(usize, f64)> = pairs
            .iter()
            .zip(scores)
            .filter(|((a, b), _)| *a == v || *b == v)
            .map(|(&(a, b), &s)| (if a == v { b } else { a }, s))
            .collect();
        mine.sort_by(|x, y| y.1.partial_cmp(&x.1).unwrap().then(x.0.cmp(&y.0)));
        for &(w, _) in mine.iter().take(r) {
            kept.push((v.min(w), v.max(w)));
        }
    }
    kept.sort();
    kept.dedup();
    kept
}

pub struct SearchOracle {
    pub eps1: f64,
    pub eps2: f64,
    pub best: usize,
}

/// Exhaustive search over the lattice with dense label propagation.
#[allow(clippy::too_many_arguments)]
pub fn brute_force_search(
    n: usize,
    labels: &[usize],
    edges: &[(usize, usize)],
    edge_scores: &[f64],
    cands: &[(usize, usize)],
    cand_scores: &[f64],
    support: &[usize],
    query: &[usize],
    classes: usize,
    alpha: f64,
    iters: usize,
    h: usize,
) -> SearchOracle {
    let all: Vec<f64> = edge_scores.iter().chain(cand_scores).copied().collect();
    let lo = all.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = all.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lattice: Vec<f64> = if hi > lo {
        let c = (hi - lo) / (h - 1) as f64;
        (0..h).map(|m| if m == h - 1 { hi } else { lo + m as f64 * c }).collect()
    } else {
        vec![lo]
    };
    let mut y0 = vec![vec![0.0; classes]; n];
    for &s in support {
        y0[s][labels[s]] = 1.0;
    }
    let mut best: Option<(usize, f64, f64)> = None;
    for &e1 in &lattice {
        for &e2 in &lattice {
            let mut kept: Vec<(usize, usize)> = edges
                .iter()
                .zip(edge_scores)
                .filter(|(_, &s)| s > e1)
                .map(|(&e, _)| e)
                .collect();
            kept.extend(cands.iter().zip(cand_scores).filter(|(_, &s)| s > e2).map(|(&e, _)| e));
            let y = dense_lp(&gcn_normalize(n, &kept), &y0, alpha, iters);
            let correct = query
                .iter()
                .filter(|&&q| {
                    let row = &y[q];
                    let mut arg = 0;
                    for c in 1..classes {
                        if row[c] > row[arg] {
                            arg = c;
                        }
                    }
                    arg == labels[q]
                })
                .count();
            let better = match best {
                None => true,
                Some((b, b1, b2)) => (correct, e1, e2) > (b, b1, b2),
            };
            if better {
                best = Some((correct, e1, e2));
            }
        }
    }
    let (best, eps1, eps2) = best.unwrap();
    SearchOracle { eps1, eps2, best }
}

/// Central finite difference of `f` with respect to every entry of `m`.
pub fn finite_difference(m: &Matrix, h: f64, mut f: impl FnMut(&Matrix) -> f64) -> Matrix {
    let mut out = Matrix::zeros(m.rows(), m.cols());
    for r in 0..m.rows() {
        for c in 0..m.cols() {
            let mut plus = m.clone();
            plus.as_mut_slice()[r * m.cols() + c] += h;
            let mut minus = m.clone();
            minus.as_mut_slice()[r * m.cols() + c] -= h;
            out.as_mut_slice()[r * m.cols() + c] = (f(&plus) - f(&minus)) / (2.0 * h);
        }
    }
    out
}

/// `‖a − b‖ / max(‖a‖, ‖b‖, tiny)`.
pub fn relative_error(a: &Matrix, b: &Matrix) -> f64 {
    let diff: f64 = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let scale = a.frobenius_sq().sqrt().max(b.frobenius_sq().sqrt()).max(1e-12);
    diff / scale
}
