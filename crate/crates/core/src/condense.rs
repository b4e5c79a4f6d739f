//! Graph condensation: synthesize a small labeled graph `(A′, X′, Y′)`
//! from a training graph by distribution matching or gradient matching.
//!
//! The relay model is SGC: a linear classifier on `Â^K X`. On the
//! condensed side matching runs structure-free (identity adjacency, so the
//! relay sees `X′` directly). `A′` is synthesized from `X′` afterwards as a
//! thresholded cosine kernel with unit diagonal.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dense::{cosine, dot, norm, one_hot, softmax_rows, Matrix};
use crate::error::{Error, Result};
use crate::graph::{propagate, Graph, NormalizedAdjacency};
use crate::relay::init_weights;

#[derive(Clone, Debug, PartialEq)]
pub struct CondensedGraph {
    /// `N′ × d`.
    pub features: Matrix,
    /// `N′ × N′`, symmetric, entries in `[0, 1]`, unit diagonal.
    pub adjacency: Matrix,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    /// `N′ / N` against the training graph.
    pub ratio: f64,
    pub method: String,
}

impl CondensedGraph {
    pub fn num_nodes(&self) -> usize {
        self.labels.len()
    }

    pub fn normalized_adjacency(&self) -> Result<NormalizedAdjacency> {
        NormalizedAdjacency::from_dense_weighted(&self.adjacency)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CondenseMethod {
    Distribution,
    Gradient,
}

impl std::str::FromStr for CondenseMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "distribution" | "dm" => Ok(CondenseMethod::Distribution),
            "gradient" | "gm" => Ok(CondenseMethod::Gradient),
            other => Err(Error::Config(format!(
                "unknown condense method {other:?} (distribution|gradient)"
            ))),
        }
    }
}

impl CondenseMethod {
    pub fn name(self) -> &'static str {
        match self {
            CondenseMethod::Distribution => "distribution",
            CondenseMethod::Gradient => "gradient",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CondenseConfig {
    pub ratio: f64,
    pub method: CondenseMethod,
    /// Propagation steps of the SGC relay on the training side.
    pub relay_steps: usize,
    pub outer_epochs: usize,
    /// Inner matching steps per relay initialization.
    pub match_steps: usize,
    pub feature_lr: f64,
    pub relay_lr: f64,
    /// Relay initializations drawn per outer epoch.
    pub relay_inits: usize,
    /// Cosine cutoff `δ` for `A′`.
    pub adjacency_threshold: f64,
    pub seed: u64,
}

impl Default for CondenseConfig {
    fn default() -> Self {
        CondenseConfig {
            ratio: 0.05,
            method: CondenseMethod::Gradient,
            relay_steps: 2,
            outer_epochs: 100,
            match_steps: 10,
            feature_lr: 1.0,
            relay_lr: 0.5,
            relay_inits: 5,
            adjacency_threshold: 0.5,
            seed: 0,
        }
    }
}

impl CondenseConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.ratio > 0.0 && self.ratio < 0.2) {
            return bad(format!("condensation ratio {} outside (0, 0.2)", self.ratio));
        }
        if self.relay_steps == 0 || self.match_steps == 0 || self.relay_inits == 0 {
            return bad("relay_steps, match_steps and relay_inits must be >= 1".into());
        }
        if !(self.feature_lr > 0.0 && self.relay_lr > 0.0) {
            return bad("step sizes must be > 0".into());
        }
        if !(0.0..1.0).contains(&self.adjacency_threshold) {
            return bad(format!(
                "adjacency threshold {} outside [0, 1)",
                self.adjacency_threshold
            ));
        }
        Ok(())
    }
}

/// Per class `max(1, round(r·|class|))` condensed nodes, grouped by class.
pub fn init_condensed_labels(labels: &[usize], num_classes: usize, ratio: f64) -> Result<Vec<usize>> {
    if !(ratio > 0.0 && ratio < 0.2) {
        return Err(Error::Config(format!("condensation ratio {ratio} outside (0, 0.2)")));
    }
    let mut counts = vec![0usize; num_classes];
    for &c in labels {
        counts[c] += 1;
    }
    let mut out = Vec::new();
    for (c, &n) in counts.iter().enumerate() {
        if n == 0 {
            return Err(Error::EmptyClass(c));
        }
        let k = ((ratio * n as f64).round() as usize).max(1);
        out.extend(std::iter::repeat_n(c, k));
    }
    Ok(out)
}

/// Each condensed node copies the features of a training node of its class,
/// drawn without replacement while the class has members left.
pub fn init_condensed_features(
    graph: &Graph,
    train_nodes: &[usize],
    condensed_labels: &[usize],
    seed: u64,
) -> Result<Matrix> {
    let labels = graph.labels_of(train_nodes)?;
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); graph.num_classes()];
    for (&v, &c) in train_nodes.iter().zip(&labels) {
        by_class[c].push(v);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(condensed_labels.len());
    for c in 0..graph.num_classes() {
        let want = condensed_labels.iter().filter(|&&l| l == c).count();
        if want == 0 {
            continue;
        }
        let members = &by_class[c];
        if members.is_empty() {
            return Err(Error::EmptyClass(c));
        }
        if want <= members.len() {
            rows.extend(index::sample(&mut rng, members.len(), want).into_iter().map(|k| members[k]));
        } else {
            rows.extend((0..want).map(|_| members[rng.random_range(0..members.len())]));
        }
    }
    // rows follow class order, as do the labels from init_condensed_labels;
    // map back onto the caller's label order
    let mut order: Vec<usize> = (0..condensed_labels.len()).collect();
    order.sort_by_key(|&k| (condensed_labels[k], k));
    let mut x = Matrix::zeros(condensed_labels.len(), graph.feature_dim());
    for (slot, &k) in order.iter().enumerate() {
        x.row_mut(k).copy_from_slice(graph.features().row(rows[slot]));
    }
    Ok(x)
}

/// `Zᵀ (softmax(Z·W) − Y) / n`: gradient of mean cross-entropy wrt `W`.
pub fn relay_gradient(weights: &Matrix, embeddings: &Matrix, labels_onehot: &Matrix) -> Result<Matrix> {
    if embeddings.rows() != labels_onehot.rows() || weights.cols() != labels_onehot.cols() {
        return Err(Error::shape(
            "relay_gradient",
            format!(
                "W {:?}, Z {:?}, Y {:?}",
                weights.shape(),
                embeddings.shape(),
                labels_onehot.shape()
            ),
        ));
    }
    let mut r = softmax_rows(&embeddings.matmul(weights)?);
    r.axpy(-1.0, labels_onehot)?;
    let mut g = embeddings.t_matmul(&r)?;
    g.scale(1.0 / embeddings.rows().max(1) as f64);
    Ok(g)
}

fn column(m: &Matrix, c: usize) -> Vec<f64> {
    (0..m.rows()).map(|r| m[(r, c)]).collect()
}

fn column_distance(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (norm(a), norm(b));
    match (na == 0.0, nb == 0.0) {
        (true, true) => 0.0,
        (true, false) | (false, true) => 1.0,
        _ => 1.0 - dot(a, b) / (na * nb),
    }
}

/// `Σ_layers Σ_columns (1 − cos)`. A zero column against a nonzero one
/// contributes 1; two zero columns contribute 0.
pub fn gradient_distance(real: &[Matrix], synthetic: &[Matrix]) -> Result<f64> {
    if real.len() != synthetic.len() {
        return Err(Error::shape(
            "gradient_distance",
            format!("{} vs {} layers", real.len(), synthetic.len()),
        ));
    }
    let mut total = 0.0;
    for (g, h) in real.iter().zip(synthetic) {
        if g.shape() != h.shape() {
            return Err(Error::shape(
                "gradient_distance",
                format!("{:?} vs {:?}", g.shape(), h.shape()),
            ));
        }
        for c in 0..g.cols() {
            total += column_distance(&column(g, c), &column(h, c));
        }
    }
    Ok(total)
}

/// Matching distance between the relay gradients on the real and condensed
/// sides, and its gradient with respect to the condensed features.
pub fn matching_distance_and_grad(
    weights: &Matrix,
    real_embeddings: &Matrix,
    real_onehot: &Matrix,
    syn_features: &Matrix,
    syn_onehot: &Matrix,
) -> Result<(f64, Matrix)> {
    let g_real = relay_gradient(weights, real_embeddings, real_onehot)?;
    let n = syn_features.rows() as f64;
    let p = softmax_rows(&syn_features.matmul(weights)?);
    let mut resid = p.clone();
    resid.axpy(-1.0, syn_onehot)?;
    let mut g_syn = syn_features.t_matmul(&resid)?;
    g_syn.scale(1.0 / n);

    // dD/dG′ column by column
    let (d, classes) = g_syn.shape();
    let mut gamma = Matrix::zeros(d, classes);
    let mut dist = 0.0;
    for c in 0..classes {
        let a = column(&g_real, c);
        let b = column(&g_syn, c);
        dist += column_distance(&a, &b);
        let (na, nb) = (norm(&a), norm(&b));
        if na == 0.0 || nb == 0.0 {
            continue;
        }
        let cos = dot(&a, &b) / (na * nb);
        for k in 0..d {
            gamma[(k, c)] = -(a[k] / (na * nb) - cos * b[k] / (nb * nb));
        }
    }

    // G′ = X′ᵀ R / n with R = softmax(X′W) − Y′
    let mut grad = resid.matmul_t(&gamma)?;
    let b = syn_features.matmul(&gamma)?;
    let mut dlogits = Matrix::zeros(p.rows(), classes);
    for r in 0..p.rows() {
        let (pr, br) = (p.row(r), b.row(r));
        let inner = dot(pr, br);
        for (c, out) in dlogits.row_mut(r).iter_mut().enumerate() {
            *out = pr[c] * (br[c] - inner);
        }
    }
    grad.axpy(1.0, &dlogits.matmul_t(weights)?)?;
    grad.scale(1.0 / n);
    Ok((dist, grad))
}

/// `A′_ij = cos(X′_i, X′_j)` when above `δ`, else 0; unit diagonal.
pub fn synthesize_condensed_adjacency(features: &Matrix, threshold: f64) -> Matrix {
    let n = features.rows();
    let mut a = Matrix::identity(n);
    for i in 0..n {
        for j in i + 1..n {
            let c = cosine(features.row(i), features.row(j));
            if c > threshold {
                a[(i, j)] = c;
                a[(j, i)] = c;
            }
        }
    }
    a
}

fn class_means(x: &Matrix, labels: &[usize], num_classes: usize) -> (Matrix, Vec<usize>) {
    let mut means = Matrix::zeros(num_classes, x.cols());
    let mut counts = vec![0usize; num_classes];
    for (r, &c) in labels.iter().enumerate() {
        counts[c] += 1;
        for (m, &v) in means.row_mut(c).iter_mut().zip(x.row(r)) {
            *m += v;
        }
    }
    for (c, &n) in counts.iter().enumerate() {
        if n > 0 {
            means.row_mut(c).iter_mut().for_each(|v| *v /= n as f64);
        }
    }
    (means, counts)
}

fn dm_loss(target: &Matrix, syn: &Matrix, labels: &[usize], num_classes: usize) -> f64 {
    let (m, counts) = class_means(syn, labels, num_classes);
    (0..num_classes)
        .filter(|&c| counts[c] > 0)
        .map(|c| {
            target
                .row(c)
                .iter()
                .zip(m.row(c))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
        })
        .sum()
}

/// Incremental condensation state; one [`Condenser::step`] is one outer
/// epoch against a fixed set of propagated training features.
#[derive(Clone, Debug)]
pub struct Condenser {
    config: CondenseConfig,
    labels: Vec<usize>,
    num_classes: usize,
    num_train: usize,
    features: Matrix,
    rng: ChaCha8Rng,
    dm_lr: f64,
    initial_loss: Option<f64>,
    over_count: usize,
    last_finite: f64,
    steps_taken: usize,
}

impl Condenser {
    pub fn new(train: &Graph, config: &CondenseConfig) -> Result<Self> {
        config.validate()?;
        let train_nodes = &train.masks().train;
        let labels = train.labels_of(train_nodes)?;
        let syn_labels = init_condensed_labels(&labels, train.num_classes(), config.ratio)?;
        let features = init_condensed_features(train, train_nodes, &syn_labels, config.seed)?;
        Ok(Condenser {
            config: config.clone(),
            num_classes: train.num_classes(),
            num_train: train_nodes.len(),
            labels: syn_labels,
            features,
            rng: ChaCha8Rng::seed_from_u64(config.seed ^ 0x9e37_79b9_7f4a_7c15),
            dm_lr: config.feature_lr,
            initial_loss: None,
            over_count: 0,
            last_finite: f64::NAN,
            steps_taken: 0,
        })
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn set_features(&mut self, features: Matrix) {
        self.features = features;
    }

    pub fn steps_taken(&self) -> usize {
        self.steps_taken
    }

    /// `Â^K · X` restricted to the training nodes, the relay's input.
    pub fn relay_embeddings(&self, train: &Graph, adj: &NormalizedAdjacency) -> Result<Matrix> {
        let z = propagate(adj, train.features(), self.config.relay_steps)?;
        Ok(z.select_rows(&train.masks().train))
    }

    /// One outer epoch. `embeddings` are the training nodes' propagated
    /// features with `labels` their classes. Returns the epoch's loss.
    pub fn step(&mut self, embeddings: &Matrix, labels: &[usize]) -> Result<f64> {
        let loss = match self.config.method {
            CondenseMethod::Distribution => self.dm_step(embeddings, labels)?,
            CondenseMethod::Gradient => self.gm_step(embeddings, labels)?,
        };
        self.steps_taken += 1;
        Ok(loss)
    }

    fn check(&mut self, stage: &'static str, loss: f64) -> Result<()> {
        if !loss.is_finite() || !self.features.is_finite() {
            return Err(Error::NonFinite {
                stage,
                step: self.steps_taken,
                last_finite: self.last_finite,
            });
        }
        self.last_finite = loss;
        let initial = *self.initial_loss.get_or_insert(loss);
        if initial > 0.0 && loss > 10.0 * initial {
            self.over_count += 1;
            if self.over_count >= 50 {
                return Err(Error::Diverged {
                    stage,
                    loss,
                    initial,
                });
            }
        } else {
            self.over_count = 0;
        }
        Ok(())
    }

    /// Gradient descent on `Σ_c ‖mean_c(Z) − mean_c(X′)‖²` with step halving
    /// whenever a step fails to decrease the loss.
    fn dm_step(&mut self, embeddings: &Matrix, labels: &[usize]) -> Result<f64> {
        let (target, _) = class_means(embeddings, labels, self.num_classes);
        let mut loss = dm_loss(&target, &self.features, &self.labels, self.num_classes);
        self.check("distribution matching", loss)?;
        for _ in 0..self.config.match_steps {
            let (cur, counts) = class_means(&self.features, &self.labels, self.num_classes);
            let mut grad = Matrix::zeros(self.features.rows(), self.features.cols());
            for (r, &c) in self.labels.iter().enumerate() {
                let scale = -2.0 / counts[c] as f64;
                for ((g, &t), &m) in grad.row_mut(r).iter_mut().zip(target.row(c)).zip(cur.row(c)) {
                    *g = scale * (t - m);
                }
            }
            let mut accepted = false;
            for _ in 0..60 {
                let mut trial = self.features.clone();
                trial.axpy(-self.dm_lr, &grad)?;
                let trial_loss = dm_loss(&target, &trial, &self.labels, self.num_classes);
                if trial_loss < loss {
                    self.features = trial;
                    loss = trial_loss;
                    accepted = true;
                    break;
                }
                self.dm_lr *= 0.5;
            }
            if !accepted {
                break;
            }
            self.check("distribution matching", loss)?;
        }
        Ok(loss)
    }

    fn gm_step(&mut self, embeddings: &Matrix, labels: &[usize]) -> Result<f64> {
        let real_onehot = one_hot(labels, self.num_classes);
        let syn_onehot = one_hot(&self.labels, self.num_classes);
        let d = self.features.cols();
        let mut total = 0.0;
        let mut count = 0usize;
        for _ in 0..self.config.relay_inits {
            let mut theta = init_weights(d, self.num_classes, &mut self.rng);
            for _ in 0..self.config.match_steps {
                let (dist, grad) = matching_distance_and_grad(
                    &theta,
                    embeddings,
                    &real_onehot,
                    &self.features,
                    &syn_onehot,
                )?;
                self.features.axpy(-self.config.feature_lr, &grad)?;
                self.check("gradient matching", dist)?;
                total += dist;
                count += 1;
                let g_syn = relay_gradient(&theta, &self.features, &syn_onehot)?;
                theta.axpy(-self.config.relay_lr, &g_syn)?;
            }
        }
        Ok(total / count as f64)
    }

    pub fn finish(&self) -> CondensedGraph {
        CondensedGraph {
            adjacency: synthesize_condensed_adjacency(&self.features, self.config.adjacency_threshold),
            features: self.features.clone(),
            labels: self.labels.clone(),
            num_classes: self.num_classes,
            ratio: self.labels.len() as f64 / self.num_train as f64,
            method: self.config.method.name().to_string(),
        }
    }
}

fn run_condenser(graph: &Graph, adj: &NormalizedAdjacency, config: &CondenseConfig) -> Result<CondensedGraph> {
    let mut condenser = Condenser::new(graph, config)?;
    let z = condenser.relay_embeddings(graph, adj)?;
    let labels = graph.labels_of(&graph.masks().train)?;
    for _ in 0..config.outer_epochs {
        condenser.step(&z, &labels)?;
    }
    Ok(condenser.finish())
}

pub fn condense_distribution_matching(
    graph: &Graph,
    adj: &NormalizedAdjacency,
    config: &CondenseConfig,
) -> Result<CondensedGraph> {
    if config.method != CondenseMethod::Distribution {
        return Err(Error::Config("condense_distribution_matching needs method = distribution".into()));
    }
    run_condenser(graph, adj, config)
}

pub fn condense_gradient_matching(
    graph: &Graph,
    adj: &NormalizedAdjacency,
    config: &CondenseConfig,
) -> Result<CondensedGraph> {
    if config.method != CondenseMethod::Gradient {
        return Err(Error::Config("condense_gradient_matching needs method = gradient".into()));
    }
    run_condenser(graph, adj, config)
}

pub fn condense(graph: &Graph, adj: &NormalizedAdjacency, config: &CondenseConfig) -> Result<CondensedGraph> {
    run_condenser(graph, adj, config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_counts_follow_ratio_with_floor_of_one() {
        let labels: Vec<usize> = (0..100).map(|i| i / 50).collect();
        let y = init_condensed_labels(&labels, 2, 0.1).unwrap();
        assert_eq!(y, vec![0, 0, 0, 0, 0, 1, 1, 1, 1, 1]);
        let y = init_condensed_labels(&[0, 0, 0, 1, 1, 1, 1], 2, 0.01).unwrap();
        assert_eq!(y, vec![0, 1]);
        assert!(matches!(init_condensed_labels(&[0, 2], 3, 0.1), Err(Error::EmptyClass(1))));
        assert!(init_condensed_labels(&[0], 1, 0.5).is_err());
    }

    #[test]
    fn relay_gradient_hand_computed() {
        let z = Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let w = Matrix::zeros(2, 2);
        let y = Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let g = relay_gradient(&w, &z, &y).unwrap();
        assert_eq!(g.row(0), &[-0.5, 0.5]);
        assert_eq!(g.row(1), &[0.0, 0.0]);
    }

    #[test]
    fn gradient_distance_cases() {
        let g = Matrix::from_rows(&[vec![1.0, -2.0, 0.5], vec![0.3, 1.0, -1.0]]).unwrap();
        assert!(gradient_distance(&[g.clone()], &[g.clone()]).unwrap().abs() < 1e-12);
        let mut g3 = g.clone();
        g3.scale(3.0);
        assert!(gradient_distance(&[g.clone()], &[g3]).unwrap().abs() < 1e-12);
        let mut neg = g.clone();
        neg.scale(-1.0);
        assert!((gradient_distance(&[g.clone()], &[neg]).unwrap() - 6.0).abs() < 1e-12);
        let z = Matrix::zeros(2, 3);
        assert_eq!(gradient_distance(&[z.clone()], &[z.clone()]).unwrap(), 0.0);
        assert_eq!(gradient_distance(&[z], &[g.clone()]).unwrap(), 3.0);
        assert!(gradient_distance(&[g], &[Matrix::zeros(3, 3)]).is_err());
    }

    #[test]
    fn adjacency_kernel_cases() {
        let same = Matrix::from_fn(3, 2, |_, c| c as f64 + 1.0);
        let a = synthesize_condensed_adjacency(&same, 0.0);
        assert!(a.as_slice().iter().all(|&v| (v - 1.0).abs() < 1e-12));
        let orth = Matrix::identity(3);
        assert_eq!(synthesize_condensed_adjacency(&orth, 0.0), Matrix::identity(3));
    }
}
