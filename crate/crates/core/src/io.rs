//! Dataset directories, synthetic block-model graphs and the inductive split.
//!
//! A dataset directory holds:
//!
//! - `edges.txt`: one `u v` pair per line, 0-based. Duplicates and
//!   self-loops are tolerated and cleaned.
//! - `features.bin` (`[u64 N][u64 d]` then `N·d` little-endian `f32`,
//!   row-major) or `features.csv` (`N` lines of `d` comma-separated values).
//! - `labels.txt`: one class id per line; a negative id marks an unlabeled node.
//! - `split.json`: `{"train": [..], "val": [..], "test": [..]}`.
//!
//! A condensed graph directory uses the same files plus `adjacency.bin`
//! (`[u64 N′]` then `N′²` little-endian `f32`, row-major).

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::condense::CondensedGraph;
use crate::dense::Matrix;
use crate::error::{Error, Result};
use crate::graph::{Graph, Masks};

#[derive(Clone, Debug)]
pub struct DatasetBundle {
    pub name: String,
    /// Full graph; its masks carry the train/val/test node sets.
    pub graph: Graph,
}

impl DatasetBundle {
    pub fn split_sizes(&self) -> (usize, usize, usize) {
        let m = self.graph.masks();
        (m.train.len(), m.val.len(), m.test.len())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub nodes_per_class: usize,
    pub intra_p: f64,
    pub inter_p: f64,
    pub feature_dim: usize,
    pub feature_noise: f64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes == 0 || self.nodes_per_class == 0 {
            return Err(Error::Config("SBM needs at least one class and node".into()));
        }
        if !(0.0 <= self.inter_p && self.inter_p < self.intra_p && self.intra_p <= 1.0) {
            return Err(Error::Config(format!(
                "SBM probabilities must satisfy 0 <= inter_p < intra_p <= 1 (got {} / {})",
                self.inter_p, self.intra_p
            )));
        }
        if !(self.feature_noise >= 0.0) {
            return Err(Error::Config("feature_noise must be >= 0".into()));
        }
        if self.feature_dim < self.classes {
            return Err(Error::Config(format!(
                "feature_dim {} cannot hold {} orthogonal class means",
                self.feature_dim, self.classes
            )));
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct SplitFile {
    train: Vec<usize>,
    val: Vec<usize>,
    test: Vec<usize>,
}

fn read_text(path: &Path) -> Result<String> {
    if !path.exists() {
        let name = path
            .file_name()
            .map_or_else(|| path.display().to_string(), |f| f.to_string_lossy().into_owned());
        return Err(Error::MissingFile(name));
    }
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_err(file: &str, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        file: file.to_string(),
        line,
        msg: msg.into(),
    }
}

fn parse_edges(text: &str) -> Result<Vec<(usize, usize)>> {
    let mut edges = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut it = line.split_whitespace();
        let mut next = || -> Result<usize> {
            it.next()
                .ok_or_else(|| parse_err("edges.txt", k + 1, "expected two node ids"))?
                .parse()
                .map_err(|e| parse_err("edges.txt", k + 1, format!("{e}")))
        };
        let u = next()?;
        let v = next()?;
        if it.next().is_some() {
            return Err(parse_err("edges.txt", k + 1, "more than two fields"));
        }
        edges.push((u, v));
    }
    Ok(edges)
}

fn parse_labels(text: &str) -> Result<Vec<Option<usize>>> {
    let mut labels = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let v: i64 = line
            .parse()
            .map_err(|e| parse_err("labels.txt", k + 1, format!("{e}")))?;
        labels.push(usize::try_from(v).ok());
    }
    Ok(labels)
}

fn parse_features_csv(text: &str) -> Result<Matrix> {
    let mut rows = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| parse_err("features.csv", k + 1, format!("{e}")))?;
        if let Some(first) = rows.first() {
            let first: &Vec<f64> = first;
            if first.len() != row.len() {
                return Err(parse_err(
                    "features.csv",
                    k + 1,
                    format!("expected {} columns, found {}", first.len(), row.len()),
                ));
            }
        }
        rows.push(row);
    }
    Matrix::from_rows(&rows)
}

fn read_u64(r: &mut impl Read) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f32_block(r: &mut impl Read, count: usize) -> std::io::Result<Vec<f64>> {
    let mut bytes = vec![0u8; count * 4];
    r.read_exact(&mut bytes)?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

fn write_f32_block(w: &mut impl Write, values: &[f64]) -> std::io::Result<()> {
    for &v in values {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    Ok(())
}

pub fn read_features_bin(path: &Path) -> Result<Matrix> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let io = |e| Error::io(path, e);
    let n = read_u64(&mut r).map_err(io)? as usize;
    let d = read_u64(&mut r).map_err(io)? as usize;
    let data = read_f32_block(&mut r, n * d).map_err(io)?;
    Matrix::from_vec(n, d, data)
}

pub fn write_features_bin(path: &Path, features: &Matrix) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    w.write_all(&(features.rows() as u64).to_le_bytes()).map_err(io)?;
    w.write_all(&(features.cols() as u64).to_le_bytes()).map_err(io)?;
    write_f32_block(&mut w, features.as_slice()).map_err(io)?;
    w.flush().map_err(io)
}

/// Load and validate a dataset directory.
pub fn load_dataset(dir: &Path) -> Result<DatasetBundle> {
    let edges_text = read_text(&dir.join("edges.txt"))?;
    let labels = parse_labels(&read_text(&dir.join("labels.txt"))?)?;
    let bin = dir.join("features.bin");
    let features = if bin.exists() {
        read_features_bin(&bin)?
    } else {
        let csv = dir.join("features.csv");
        if !csv.exists() {
            return Err(Error::MissingFile("features.bin or features.csv".into()));
        }
        parse_features_csv(&read_text(&csv)?)?
    };
    let split: SplitFile = serde_json::from_str(&read_text(&dir.join("split.json"))?)?;
    let n = features.rows();
    let edges = parse_edges(&edges_text)?;
    let masks = Masks {
        train: split.train,
        val: split.val,
        test: split.test,
    };
    let graph = crate::graph::build_graph(&edges, n, features, labels, masks)?;
    let name = dir
        .file_name()
        .map_or_else(|| "dataset".to_string(), |f| f.to_string_lossy().into_owned());
    log::info!(
        "loaded {name}: {} nodes, {} edges, split {:?}",
        graph.num_nodes(),
        graph.num_edges(),
        (graph.masks().train.len(), graph.masks().val.len(), graph.masks().test.len())
    );
    Ok(DatasetBundle { name, graph })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn edges_text(edges: &[(usize, usize)]) -> String {
    let mut s = String::with_capacity(edges.len() * 10);
    for (u, v) in edges {
        s.push_str(&format!("{u} {v}\n"));
    }
    s
}

fn labels_text(labels: &[Option<usize>]) -> String {
    labels
        .iter()
        .map(|l| l.map_or("-1".to_string(), |c| c.to_string()) + "\n")
        .collect()
}

/// Write a dataset directory (binary features).
pub fn save_dataset(graph: &Graph, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_text(&dir.join("edges.txt"), &edges_text(graph.edges()))?;
    write_features_bin(&dir.join("features.bin"), graph.features())?;
    write_text(&dir.join("labels.txt"), &labels_text(graph.labels()))?;
    let m = graph.masks();
    let split = SplitFile {
        train: m.train.clone(),
        val: m.val.clone(),
        test: m.test.clone(),
    };
    write_text(&dir.join("split.json"), &serde_json::to_string(&split)?)
}

pub fn save_condensed(s: &CondensedGraph, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let n = s.labels.len();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if s.adjacency[(i, j)] != 0.0 {
                edges.push((i, j));
            }
        }
    }
    write_text(&dir.join("edges.txt"), &edges_text(&edges))?;
    write_features_bin(&dir.join("features.bin"), &s.features)?;
    let labels: Vec<Option<usize>> = s.labels.iter().copied().map(Some).collect();
    write_text(&dir.join("labels.txt"), &labels_text(&labels))?;
    let split = SplitFile {
        train: (0..n).collect(),
        val: vec![],
        test: vec![],
    };
    write_text(&dir.join("split.json"), &serde_json::to_string(&split)?)?;
    let path = dir.join("adjacency.bin");
    let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(&path, e);
    w.write_all(&(n as u64).to_le_bytes()).map_err(io)?;
    write_f32_block(&mut w, s.adjacency.as_slice()).map_err(io)?;
    w.flush().map_err(io)?;
    write_text(
        &dir.join("meta.json"),
        &serde_json::to_string(&serde_json::json!({
            "ratio": s.ratio,
            "num_classes": s.num_classes,
            "method": s.method,
        }))?,
    )
}

pub fn load_condensed(dir: &Path) -> Result<CondensedGraph> {
    let features = read_features_bin(&dir.join("features.bin"))?;
    let labels: Vec<usize> = parse_labels(&read_text(&dir.join("labels.txt"))?)?
        .into_iter()
        .enumerate()
        .map(|(k, l)| l.ok_or_else(|| parse_err("labels.txt", k + 1, "condensed nodes must be labeled")))
        .collect::<Result<_>>()?;
    let path = dir.join("adjacency.bin");
    if !path.exists() {
        return Err(Error::MissingFile("adjacency.bin".into()));
    }
    let file = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
    let mut r = BufReader::new(file);
    let io = |e| Error::io(&path, e);
    let n = read_u64(&mut r).map_err(io)? as usize;
    let adjacency = Matrix::from_vec(n, n, read_f32_block(&mut r, n * n).map_err(io)?)?;
    if features.rows() != n || labels.len() != n {
        return Err(Error::LengthMismatch {
            what: "condensed node count",
            expected: n,
            found: features.rows().min(labels.len()),
        });
    }
    let meta: serde_json::Value = match read_text(&dir.join("meta.json")) {
        Ok(t) => serde_json::from_str(&t)?,
        Err(_) => serde_json::Value::Null,
    };
    let num_classes = meta["num_classes"]
        .as_u64()
        .map_or_else(|| labels.iter().max().map_or(0, |m| m + 1), |c| c as usize);
    Ok(CondensedGraph {
        features,
        adjacency,
        labels,
        num_classes,
        ratio: meta["ratio"].as_f64().unwrap_or(f64::NAN),
        method: meta["method"].as_str().unwrap_or("unknown").to_string(),
    })
}

/// Visit every index in `0..total` independently with probability `p`,
/// using geometric gaps so the cost is proportional to the hits.
fn bernoulli_indices(total: u64, p: f64, rng: &mut impl Rng, mut hit: impl FnMut(u64)) {
    if total == 0 || p <= 0.0 {
        return;
    }
    if p >= 1.0 {
        (0..total).for_each(hit);
        return;
    }
    let log_q = (1.0 - p).ln();
    let mut k: u64 = 0;
    loop {
        let u: f64 = rng.random::<f64>();
        // 1 - u lies in (0, 1]
        let skip = ((1.0 - u).ln() / log_q).floor();
        if !skip.is_finite() || skip >= (total - k) as f64 {
            return;
        }
        k += skip as u64;
        hit(k);
        k += 1;
        if k >= total {
            return;
        }
    }
}

/// Stochastic block model with orthogonal unit class means plus Gaussian
/// feature noise. Nodes are grouped by class; the split is 60/20/20 over a
/// shuffled node order.
pub fn generate_sbm(spec: &SyntheticSpec, seed: u64) -> Result<DatasetBundle> {
    spec.validate()?;
    let c = spec.classes;
    let m = spec.nodes_per_class;
    let n = c * m;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for a in 0..c {
        for b in a..c {
            if a == b {
                let total = (m * (m - 1) / 2) as u64;
                let base = a * m;
                // walk the strict upper triangle row by row
                let (mut row, mut row_start) = (0usize, 0u64);
                bernoulli_indices(total, spec.intra_p, &mut rng, |k| {
                    while k >= row_start + (m - 1 - row) as u64 {
                        row_start += (m - 1 - row) as u64;
                        row += 1;
                    }
                    let col = row + 1 + (k - row_start) as usize;
                    edges.push((base + row, base + col));
                });
            } else {
                let total = (m * m) as u64;
                bernoulli_indices(total, spec.inter_p, &mut rng, |k| {
                    let (i, j) = ((k / m as u64) as usize, (k % m as u64) as usize);
                    edges.push((a * m + i, b * m + j));
                });
            }
        }
    }
    let labels: Vec<Option<usize>> = (0..n).map(|v| Some(v / m)).collect();
    let features = Matrix::from_fn(n, spec.feature_dim, |v, k| {
        let mean = if k == v / m { 1.0 } else { 0.0 };
        let z: f64 = rng.sample(StandardNormal);
        mean + spec.feature_noise * z
    });
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let n_train = (0.6 * n as f64).round() as usize;
    let n_val = (0.2 * n as f64).round() as usize;
    let mut train = order[..n_train].to_vec();
    let mut val = order[n_train..n_train + n_val].to_vec();
    let mut test = order[n_train + n_val..].to_vec();
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    let graph = Graph::from_parts(
        edges,
        n,
        Arc::new(features),
        Arc::new(labels),
        c,
        Masks { train, val, test },
    )?;
    Ok(DatasetBundle {
        name: format!("sbm-c{c}-n{m}-seed{seed}"),
        graph,
    })
}

/// Train, validation and test graphs of the inductive setting, each with a
/// mapping from local to original node ids. Training nodes come first in
/// every graph, so `0..num_train` is the training range everywhere.
#[derive(Clone, Debug)]
pub struct InductiveSplit {
    pub train: Graph,
    pub val: Graph,
    pub test: Graph,
    pub num_train: usize,
    pub train_ids: Vec<usize>,
    pub val_ids: Vec<usize>,
    pub test_ids: Vec<usize>,
}

pub fn inductive_split(bundle: &DatasetBundle) -> Result<InductiveSplit> {
    split_graph(&bundle.graph)
}

pub fn split_graph(full: &Graph) -> Result<InductiveSplit> {
    let masks = full.masks();
    let nt = masks.train.len();
    let train_ids = masks.train.clone();
    let train = full.induced_subgraph(&train_ids, Masks::train_only(nt))?;
    let extend = |extra: &[usize], as_val: bool| -> Result<(Graph, Vec<usize>)> {
        let ids: Vec<usize> = train_ids.iter().chain(extra).copied().collect();
        let mut m = Masks::train_only(nt);
        let tail: Vec<usize> = (nt..ids.len()).collect();
        if as_val {
            m.val = tail;
        } else {
            m.test = tail;
        }
        Ok((full.induced_subgraph(&ids, m)?, ids))
    };
    let (val, val_ids) = extend(&masks.val, true)?;
    let (test, test_ids) = extend(&masks.test, false)?;
    Ok(InductiveSplit {
        train,
        val,
        test,
        num_train: nt,
        train_ids,
        val_ids,
        test_ids,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> SyntheticSpec {
        SyntheticSpec {
            classes: 2,
            nodes_per_class: 50,
            intra_p: 0.1,
            inter_p: 0.0,
            feature_dim: 4,
            feature_noise: 0.0,
        }
    }

    #[test]
    fn sbm_without_inter_edges_is_fully_homophilous() {
        let b = generate_sbm(&spec(), 3).unwrap();
        assert!(b.graph.num_edges() > 0);
        assert_eq!(crate::graph::edge_homophily(&b.graph).unwrap(), 1.0);
        assert_eq!(b.split_sizes(), (60, 20, 20));
    }

    #[test]
    fn sbm_noise_free_features_equal_class_means() {
        let b = generate_sbm(&spec(), 1).unwrap();
        let x = b.graph.features();
        for v in 0..100 {
            let expect: Vec<f64> = (0..4).map(|k| if k == v / 50 { 1.0 } else { 0.0 }).collect();
            assert_eq!(x.row(v), expect.as_slice());
        }
    }

    #[test]
    fn sbm_is_deterministic_and_validated() {
        let a = generate_sbm(&spec(), 9).unwrap();
        let b = generate_sbm(&spec(), 9).unwrap();
        assert_eq!(a.graph.edges(), b.graph.edges());
        let mut bad = spec();
        bad.inter_p = 0.2;
        assert!(generate_sbm(&bad, 0).is_err());
    }

    #[test]
    fn bernoulli_full_and_empty() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut hits = Vec::new();
        bernoulli_indices(5, 1.0, &mut rng, |k| hits.push(k));
        assert_eq!(hits, vec![0, 1, 2, 3, 4]);
        hits.clear();
        bernoulli_indices(5, 0.0, &mut rng, |k| hits.push(k));
        assert!(hits.is_empty());
    }

    #[test]
    fn split_with_empty_val_equals_train() {
        let b = generate_sbm(&spec(), 2).unwrap();
        let mut masks = b.graph.masks().clone();
        masks.val.clear();
        let g = b.graph.with_masks(masks).unwrap();
        let s = split_graph(&g).unwrap();
        assert_eq!(s.val.num_nodes(), s.train.num_nodes());
        assert_eq!(s.val.edges(), s.train.edges());
    }

    #[test]
    fn missing_labels_file_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("edges.txt"), "0 1\n").unwrap();
        let err = load_dataset(dir.path()).unwrap_err();
        assert_eq!(err.to_string(), "labels.txt not found");
    }

    #[test]
    fn malformed_edge_line_reports_line_number() {
        let err = parse_edges("0 1\n2 x\n").unwrap_err();
        assert!(err.to_string().starts_with("edges.txt:2:"), "{err}");
    }
}
