//! Classifiers with hand-derived gradients: SGC (linear model on
//! propagated features) and a two-layer graph convolution network.
//!
//! Training is full-batch gradient descent on mean cross-entropy plus
//! `weight_decay/2 · ‖W‖²`. No biases.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::condense::CondensedGraph;
use crate::dense::{argmax, softmax_rows, Matrix};
use crate::error::{Error, Result};
use crate::graph::{normalize, propagate, Graph, NormalizedAdjacency};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Sgc,
    Gcn,
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgc" => Ok(ModelKind::Sgc),
            "gcn" => Ok(ModelKind::Gcn),
            other => Err(Error::Config(format!("unknown model {other:?} (sgc|gcn)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub weight_decay: f64,
    /// Early-stop patience in epochs on validation accuracy.
    pub patience: usize,
    pub seed: u64,
    pub hidden: usize,
    pub sgc_steps: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-2,
            epochs: 300,
            weight_decay: 5e-4,
            patience: 50,
            seed: 0,
            hidden: 256,
            sgc_steps: 2,
        }
    }
}

/// Learning rates searched for condensation and training.
pub const LR_GRID: [f64; 5] = [1e-2, 5e-3, 1e-3, 5e-4, 1e-4];

#[derive(Clone, Debug, PartialEq)]
pub struct LinearGraphModel {
    pub steps: usize,
    pub weights: Matrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TwoLayerGCN {
    pub w1: Matrix,
    pub w2: Matrix,
}

impl TwoLayerGCN {
    pub fn hidden(&self) -> usize {
        self.w1.cols()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Model {
    Sgc(LinearGraphModel),
    Gcn(TwoLayerGCN),
}

impl Model {
    /// Class probabilities for every node.
    pub fn predict_proba(&self, adj: &NormalizedAdjacency, x: &Matrix) -> Result<Matrix> {
        match self {
            Model::Sgc(m) => {
                let z = propagate(adj, x, m.steps)?;
                Ok(softmax_rows(&z.matmul(&m.weights)?))
            }
            Model::Gcn(m) => {
                let ax = adj.spmm(x)?;
                let mut h = ax.matmul(&m.w1)?;
                h.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
                let logits = adj.spmm(&h)?.matmul(&m.w2)?;
                Ok(softmax_rows(&logits))
            }
        }
    }
}

/// Standard normal scaled by `1/sqrt(fan_in)`.
pub fn init_weights(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
    let scale = 1.0 / (rows.max(1) as f64).sqrt();
    Matrix::from_fn(rows, cols, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

/// Mean cross-entropy of `softmax(logits)` over `rows` and its gradient
/// with respect to the logits (zero outside `rows`).
pub fn cross_entropy(logits: &Matrix, rows: &[usize], labels: &[usize]) -> (f64, Matrix) {
    let p = softmax_rows(logits);
    let n = rows.len() as f64;
    let mut grad = Matrix::zeros(logits.rows(), logits.cols());
    let mut loss = 0.0;
    for (&r, &y) in rows.iter().zip(labels) {
        loss -= p[(r, y)].max(f64::MIN_POSITIVE).ln();
        let g = grad.row_mut(r);
        g.copy_from_slice(p.row(r));
        g[y] -= 1.0;
        g.iter_mut().for_each(|v| *v /= n);
    }
    (loss / n, grad)
}

fn decay(loss: &mut f64, grad: &mut Matrix, w: &Matrix, wd: f64) {
    if wd != 0.0 {
        *loss += 0.5 * wd * w.frobenius_sq();
        grad.axpy(wd, w).expect("same shape");
    }
}

/// Objective and gradient of SGC given already-propagated features.
pub fn sgc_loss_and_grad(
    z: &Matrix,
    rows: &[usize],
    labels: &[usize],
    w: &Matrix,
    weight_decay: f64,
) -> Result<(f64, Matrix)> {
    let (mut loss, dlogits) = cross_entropy(&z.matmul(w)?, rows, labels);
    let mut grad = z.t_matmul(&dlogits)?;
    decay(&mut loss, &mut grad, w, weight_decay);
    Ok((loss, grad))
}

/// Objective and gradients `(dW1, dW2)` of the two-layer GCN.
pub fn gcn_loss_and_grad(
    adj: &NormalizedAdjacency,
    ax: &Matrix,
    rows: &[usize],
    labels: &[usize],
    model: &TwoLayerGCN,
    weight_decay: f64,
) -> Result<(f64, Matrix, Matrix)> {
    let pre = ax.matmul(&model.w1)?;
    let mut h = pre.clone();
    h.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
    let ah = adj.spmm(&h)?;
    let (mut loss, dlogits) = cross_entropy(&ah.matmul(&model.w2)?, rows, labels);
    let mut dw2 = ah.t_matmul(&dlogits)?;
    // Â is symmetric, so Âᵀ·G = Â·G
    let mut dpre = adj.spmm(&dlogits.matmul_t(&model.w2)?)?;
    for (g, &p) in dpre.as_mut_slice().iter_mut().zip(pre.as_slice()) {
        if p <= 0.0 {
            *g = 0.0;
        }
    }
    let mut dw1 = ax.t_matmul(&dpre)?;
    let mut decay_loss = 0.0;
    decay(&mut decay_loss, &mut dw1, &model.w1, weight_decay);
    decay(&mut decay_loss, &mut dw2, &model.w2, weight_decay);
    loss += decay_loss;
    Ok((loss, dw1, dw2))
}

/// Validation data for early stopping.
pub struct Validation<'a> {
    pub adj: &'a NormalizedAdjacency,
    pub features: &'a Matrix,
    pub labels: &'a [Option<usize>],
    pub mask: &'a [usize],
}

fn training_labels(labels: &[Option<usize>], mask: &[usize]) -> Result<Vec<usize>> {
    if mask.is_empty() {
        return Err(Error::EmptyMask("train"));
    }
    mask.iter()
        .map(|&v| labels[v].ok_or(Error::Unlabeled { node: v }))
        .collect()
}

struct EarlyStop<'a> {
    val: Option<Validation<'a>>,
    best: f64,
    best_model: Option<Model>,
    since_best: usize,
    patience: usize,
}

impl<'a> EarlyStop<'a> {
    fn new(val: Option<Validation<'a>>, patience: usize) -> Self {
        EarlyStop {
            val,
            best: f64::NEG_INFINITY,
            best_model: None,
            since_best: 0,
            patience,
        }
    }

    /// Returns true when training should stop.
    fn observe(&mut self, model: &Model) -> Result<bool> {
        let Some(v) = &self.val else {
            return Ok(false);
        };
        let acc = evaluate_accuracy(model, v.adj, v.features, v.labels, v.mask)?;
        if acc > self.best {
            self.best = acc;
            self.best_model = Some(model.clone());
            self.since_best = 0;
        } else {
            self.since_best += 1;
        }
        Ok(self.since_best >= self.patience)
    }

    fn finish(self, last: Model) -> Model {
        self.best_model.unwrap_or(last)
    }
}

pub fn train_sgc(
    adj: &NormalizedAdjacency,
    x: &Matrix,
    labels: &[Option<usize>],
    train_mask: &[usize],
    num_classes: usize,
    config: &TrainConfig,
    val: Option<Validation<'_>>,
) -> Result<LinearGraphModel> {
    let y = training_labels(labels, train_mask)?;
    let z = propagate(adj, x, config.sgc_steps)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut w = init_weights(x.cols(), num_classes, &mut rng);
    let mut stop = EarlyStop::new(val, config.patience);
    let mut last_finite = f64::NAN;
    for epoch in 0..config.epochs {
        let (loss, grad) = sgc_loss_and_grad(&z, train_mask, &y, &w, config.weight_decay)?;
        if !loss.is_finite() || !grad.is_finite() {
            return Err(Error::NonFinite {
                stage: "train_sgc",
                step: epoch,
                last_finite,
            });
        }
        last_finite = loss;
        w.axpy(-config.lr, &grad)?;
        let snapshot = Model::Sgc(LinearGraphModel {
            steps: config.sgc_steps,
            weights: w.clone(),
        });
        if stop.observe(&snapshot)? {
            break;
        }
    }
    let last = Model::Sgc(LinearGraphModel {
        steps: config.sgc_steps,
        weights: w,
    });
    match stop.finish(last) {
        Model::Sgc(m) => Ok(m),
        Model::Gcn(_) => unreachable!(),
    }
}

pub fn train_gcn(
    adj: &NormalizedAdjacency,
    x: &Matrix,
    labels: &[Option<usize>],
    train_mask: &[usize],
    num_classes: usize,
    config: &TrainConfig,
    val: Option<Validation<'_>>,
) -> Result<TwoLayerGCN> {
    let y = training_labels(labels, train_mask)?;
    let ax = adj.spmm(x)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = TwoLayerGCN {
        w1: init_weights(x.cols(), config.hidden, &mut rng),
        w2: init_weights(config.hidden, num_classes, &mut rng),
    };
    let mut stop = EarlyStop::new(val, config.patience);
    let mut last_finite = f64::NAN;
    for epoch in 0..config.epochs {
        let (loss, d1, d2) =
            gcn_loss_and_grad(adj, &ax, train_mask, &y, &model, config.weight_decay)?;
        if !loss.is_finite() || !d1.is_finite() || !d2.is_finite() {
            return Err(Error::NonFinite {
                stage: "train_gcn",
                step: epoch,
                last_finite,
            });
        }
        last_finite = loss;
        model.w1.axpy(-config.lr, &d1)?;
        model.w2.axpy(-config.lr, &d2)?;
        if stop.observe(&Model::Gcn(model.clone()))? {
            break;
        }
    }
    match stop.finish(Model::Gcn(model)) {
        Model::Gcn(m) => Ok(m),
        Model::Sgc(_) => unreachable!(),
    }
}

pub fn train_model(
    kind: ModelKind,
    adj: &NormalizedAdjacency,
    x: &Matrix,
    labels: &[Option<usize>],
    train_mask: &[usize],
    num_classes: usize,
    config: &TrainConfig,
    val: Option<Validation<'_>>,
) -> Result<Model> {
    Ok(match kind {
        ModelKind::Sgc => Model::Sgc(train_sgc(adj, x, labels, train_mask, num_classes, config, val)?),
        ModelKind::Gcn => Model::Gcn(train_gcn(adj, x, labels, train_mask, num_classes, config, val)?),
    })
}

/// Argmax accuracy on `mask`; ties go to the lowest class id.
pub fn evaluate_accuracy(
    model: &Model,
    adj: &NormalizedAdjacency,
    x: &Matrix,
    labels: &[Option<usize>],
    mask: &[usize],
) -> Result<f64> {
    if mask.is_empty() {
        return Err(Error::EmptyMask("evaluation"));
    }
    let p = model.predict_proba(adj, x)?;
    let mut correct = 0usize;
    for &v in mask {
        let y = labels[v].ok_or(Error::Unlabeled { node: v })?;
        correct += usize::from(argmax(p.row(v)) == y);
    }
    Ok(correct as f64 / mask.len() as f64)
}

/// Train on every node of the condensed graph, then score the inductive
/// (test-mask) nodes of `test`. With a validation graph, its val-mask
/// accuracy drives early stopping.
pub fn train_on_condensed_eval_on_graph(
    s: &CondensedGraph,
    test: &Graph,
    kind: ModelKind,
    config: &TrainConfig,
    val: Option<&Graph>,
) -> Result<f64> {
    let model = train_on_condensed(s, kind, config, val)?;
    evaluate_accuracy(
        &model,
        &normalize(test),
        test.features(),
        test.labels(),
        &test.masks().test,
    )
}

pub fn train_on_condensed(
    s: &CondensedGraph,
    kind: ModelKind,
    config: &TrainConfig,
    val: Option<&Graph>,
) -> Result<Model> {
    let adj = NormalizedAdjacency::from_dense_weighted(&s.adjacency)?;
    let labels: Vec<Option<usize>> = s.labels.iter().copied().map(Some).collect();
    let mask: Vec<usize> = (0..labels.len()).collect();
    let val_adj = val.filter(|g| !g.masks().val.is_empty()).map(normalize);
    let validation = match (val, &val_adj) {
        (Some(g), Some(a)) => Some(Validation {
            adj: a,
            features: g.features(),
            labels: g.labels(),
            mask: &g.masks().val,
        }),
        _ => None,
    };
    train_model(kind, &adj, &s.features, &labels, &mask, s.num_classes, config, validation)
}

fn write_matrix(path: &Path, m: &Matrix) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    w.write_all(&(m.rows() as u64).to_le_bytes()).map_err(io)?;
    w.write_all(&(m.cols() as u64).to_le_bytes()).map_err(io)?;
    for &v in m.as_slice() {
        w.write_all(&(v as f32).to_le_bytes()).map_err(io)?;
    }
    w.flush().map_err(io)
}

fn read_matrix(path: &Path) -> Result<Matrix> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 16 {
        return Err(Error::Parse {
            file: path.display().to_string(),
            line: 0,
            msg: "truncated header".into(),
        });
    }
    let rows = u64::from_le_bytes(bytes[0..8].try_into().unwrap()) as usize;
    let cols = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let data: Vec<f64> = bytes[16..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Matrix::from_vec(rows, cols, data)
}

/// Write `manifest.txt` plus one binary file per weight matrix.
pub fn save_model(model: &Model, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = match model {
        Model::Sgc(m) => {
            write_matrix(&dir.join("w.bin"), &m.weights)?;
            format!("sgc steps={} w.bin\n", m.steps)
        }
        Model::Gcn(m) => {
            write_matrix(&dir.join("w1.bin"), &m.w1)?;
            write_matrix(&dir.join("w2.bin"), &m.w2)?;
            format!("gcn hidden={} w1.bin w2.bin\n", m.hidden())
        }
    };
    let path = dir.join("manifest.txt");
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))
}

pub fn load_model(dir: &Path) -> Result<Model> {
    let path = dir.join("manifest.txt");
    if !path.exists() {
        return Err(Error::MissingFile("manifest.txt".into()));
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let fields: Vec<&str> = text.split_whitespace().collect();
    let bad = || Error::Parse {
        file: "manifest.txt".into(),
        line: 1,
        msg: format!("unrecognized manifest {text:?}"),
    };
    match fields.as_slice() {
        ["sgc", steps, w] => {
            let steps = steps
                .strip_prefix("steps=")
                .and_then(|s| s.parse().ok())
                .ok_or_else(bad)?;
            Ok(Model::Sgc(LinearGraphModel {
                steps,
                weights: read_matrix(&dir.join(w))?,
            }))
        }
        ["gcn", _hidden, w1, w2] => Ok(Model::Gcn(TwoLayerGCN {
            w1: read_matrix(&dir.join(w1))?,
            w2: read_matrix(&dir.join(w2))?,
        })),
        _ => Err(bad()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_graph, Masks};

    #[test]
    fn zero_features_give_uniform_output_and_ln_c_loss() {
        let adj = NormalizedAdjacency::identity(4);
        let x = Matrix::zeros(4, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let model = TwoLayerGCN {
            w1: init_weights(3, 8, &mut rng),
            w2: init_weights(8, 5, &mut rng),
        };
        let (loss, _, _) = gcn_loss_and_grad(&adj, &x, &[0, 1, 2, 3], &[0, 1, 2, 3], &model, 0.0).unwrap();
        assert!((loss - 5f64.ln()).abs() < 1e-12);
        let p = Model::Gcn(model).predict_proba(&adj, &x).unwrap();
        assert!(p.as_slice().iter().all(|&v| (v - 0.2).abs() < 1e-12));
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let adj = NormalizedAdjacency::identity(2);
        let x = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let cfg = TrainConfig {
            epochs: 0,
            seed: 5,
            ..Default::default()
        };
        let m = train_sgc(&adj, &x, &[Some(0), Some(1)], &[0, 1], 2, &cfg, None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        assert_eq!(m.weights, init_weights(2, 2, &mut rng));
    }

    #[test]
    fn separable_sgc_reaches_full_training_accuracy() {
        let n = 8;
        let x = Matrix::from_fn(n, 2, |r, c| if c == r % 2 { 1.0 } else { 0.0 });
        let labels: Vec<Option<usize>> = (0..n).map(|r| Some(r % 2)).collect();
        let g = build_graph(&[], n, x.clone(), labels.clone(), Masks::default()).unwrap();
        let adj = normalize(&g);
        let cfg = TrainConfig {
            lr: 0.5,
            epochs: 200,
            ..Default::default()
        };
        let mask: Vec<usize> = (0..n).collect();
        let m = Model::Sgc(train_sgc(&adj, &x, &labels, &mask, 2, &cfg, None).unwrap());
        assert_eq!(evaluate_accuracy(&m, &adj, &x, &labels, &mask).unwrap(), 1.0);
        assert!(evaluate_accuracy(&m, &adj, &x, &labels, &[]).is_err());
    }

    #[test]
    fn constant_predictor_on_balanced_labels_scores_half() {
        let adj = NormalizedAdjacency::identity(4);
        let x = Matrix::zeros(4, 2);
        let model = Model::Sgc(LinearGraphModel {
            steps: 0,
            weights: Matrix::zeros(2, 2),
        });
        let labels = [Some(0), Some(1), Some(0), Some(1)];
        assert_eq!(evaluate_accuracy(&model, &adj, &x, &labels, &[0, 1, 2, 3]).unwrap(), 0.5);
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        // f32-representable weights survive exactly
        let mut w1 = init_weights(3, 4, &mut rng);
        w1.as_mut_slice().iter_mut().for_each(|v| *v = *v as f32 as f64);
        let mut w2 = init_weights(4, 2, &mut rng);
        w2.as_mut_slice().iter_mut().for_each(|v| *v = *v as f32 as f64);
        let model = Model::Gcn(TwoLayerGCN { w1, w2 });
        save_model(&model, dir.path()).unwrap();
        assert_eq!(load_model(dir.path()).unwrap(), model);
    }
}
