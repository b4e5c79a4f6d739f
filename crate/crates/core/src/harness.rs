//! Experiment driver: ingest, noise, split, condense and denoise, train,
//! test-time denoise, evaluate; plus sweeps and report files.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::baselines::{Baseline, BaselineConfig};
use crate::condense::{condense, CondenseConfig, CondensedGraph};
use crate::denoise::{alternating_optimize, test_time_denoise, DenoiseConfig, DenoiseStats, Thresholds};
use crate::error::{Error, Result};
use crate::graph::{edge_homophily, normalize, Graph};
use crate::io::{generate_sbm, load_dataset, save_condensed, split_graph, DatasetBundle, SyntheticSpec};
use crate::noise::{inject_random_noise, NoiseSpec};
use crate::relay::{evaluate_accuracy, train_model, train_on_condensed, ModelKind, TrainConfig, Validation};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Downstream model trained on the noisy training graph itself.
    Whole,
    /// Condensation on the noisy graph, no denoising.
    Plain,
    Robgc,
    Jaccard,
    Svd,
    Knn,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Whole => "whole",
            Method::Plain => "plain",
            Method::Robgc => "robgc",
            Method::Jaccard => "jaccard",
            Method::Svd => "svd",
            Method::Knn => "knn",
        }
    }

    fn baseline(self) -> Option<Baseline> {
        match self {
            Method::Jaccard => Some(Baseline::Jaccard),
            Method::Svd => Some(Baseline::Svd),
            Method::Knn => Some(Baseline::Knn),
            _ => None,
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "whole" => Method::Whole,
            "plain" | "none" => Method::Plain,
            "robgc" => Method::Robgc,
            "jaccard" => Method::Jaccard,
            "svd" => Method::Svd,
            "knn" => Method::Knn,
            other => {
                return Err(Error::Config(format!(
                    "unknown method {other:?} (whole|plain|none|robgc|jaccard|svd|knn)"
                )))
            }
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum DatasetSource {
    Directory(PathBuf),
    Synthetic { spec: SyntheticSpec, seed: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ReportFormat {
    Csv,
    Markdown,
    Json,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            "json" => Ok(ReportFormat::Json),
            other => Err(Error::Config(format!("unknown report format {other:?} (csv|markdown|json)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    /// Name written in the `dataset` column; derived from the source if empty.
    pub name: String,
    pub noise_levels: Vec<f64>,
    pub add_fraction: f64,
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    pub model: ModelKind,
    pub condense: CondenseConfig,
    pub denoise: DenoiseConfig,
    pub baseline: BaselineConfig,
    pub train: TrainConfig,
    pub output: Option<PathBuf>,
    pub formats: Vec<ReportFormat>,
    /// Fill the timing columns of report.csv (breaks byte-identical reruns).
    pub csv_timings: bool,
    pub save_condensed: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: DatasetSource::Synthetic {
                spec: SyntheticSpec {
                    classes: 4,
                    nodes_per_class: 150,
                    intra_p: 0.05,
                    inter_p: 0.005,
                    feature_dim: 16,
                    feature_noise: 0.6,
                },
                seed: 0,
            },
            name: String::new(),
            noise_levels: vec![0.0],
            add_fraction: 0.5,
            methods: vec![Method::Plain, Method::Robgc],
            seeds: vec![0],
            model: ModelKind::Sgc,
            condense: CondenseConfig::default(),
            denoise: DenoiseConfig::default(),
            baseline: BaselineConfig::default(),
            train: TrainConfig::default(),
            output: None,
            formats: vec![ReportFormat::Csv, ReportFormat::Json],
            csv_timings: false,
            save_condensed: false,
        }
    }
}

/// Every accepted configuration key with its meaning.
pub const CONFIG_KEYS: &[(&str, &str)] = &[
    ("dataset", "directory with edges.txt/labels.txt/features/split.json, or `sbm`"),
    ("name", "dataset name for reports (default: directory name or sbm)"),
    ("sbm_classes", "SBM class count"),
    ("sbm_nodes_per_class", "SBM nodes per class"),
    ("sbm_intra_p", "SBM within-class edge probability"),
    ("sbm_inter_p", "SBM cross-class edge probability"),
    ("sbm_feature_dim", "SBM feature dimension (>= classes)"),
    ("sbm_feature_noise", "SBM Gaussian feature noise std"),
    ("dataset_seed", "SBM generator seed"),
    ("noise_levels", "comma-separated changed-edge ratios in [0, 2]"),
    ("add_fraction", "share of noise changes that are additions"),
    ("methods", "comma-separated: whole, plain (alias none), robgc, jaccard, svd, knn"),
    ("seeds", "comma-separated run seeds (ROBGC_SEED overrides with one seed)"),
    ("model", "downstream model: sgc or gcn"),
    ("ratio", "condensation ratio N'/N in (0, 0.2)"),
    ("condense_method", "gm (gradient matching) or dm (distribution matching)"),
    ("relay_steps", "propagation steps of the SGC relay"),
    ("outer_epochs", "condensation epochs"),
    ("match_steps", "matching steps per relay initialization"),
    ("feature_lr", "condensed feature step size"),
    ("relay_lr", "relay weight step size"),
    ("relay_inits", "relay initializations per epoch"),
    ("adjacency_threshold", "cosine cutoff for condensed edges"),
    ("corr_order", "correlation propagation order K"),
    ("hops", "candidate hops L"),
    ("r_nn", "nearest candidates kept per node"),
    ("alpha", "label propagation teleport"),
    ("lp_iters", "label propagation iterations"),
    ("search_points", "threshold lattice points per axis h"),
    ("period", "structure re-optimization period tau in epochs"),
    ("support_fraction", "share of training nodes seeding label propagation"),
    ("jaccard_threshold", "Jaccard edge filter threshold"),
    ("svd_rank", "SVD reconstruction rank"),
    ("svd_cutoff", "SVD binarization cutoff"),
    ("knn_k", "kNN neighbors added per node"),
    ("lr", "downstream learning rate"),
    ("epochs", "downstream epochs"),
    ("weight_decay", "downstream weight decay"),
    ("patience", "downstream early-stop patience"),
    ("hidden", "GCN hidden width"),
    ("sgc_steps", "downstream SGC propagation steps"),
    ("output", "output directory for report files"),
    ("formats", "comma-separated report formats: csv, markdown, json"),
    ("csv_timings", "true to fill timing columns of report.csv"),
    ("save_condensed", "true to write each robgc cell's condensed graph"),
];

pub fn config_help() -> String {
    let mut s = String::from("configuration keys (one `key = value` per line, # comments):\n");
    for (k, d) in CONFIG_KEYS {
        let _ = writeln!(s, "  {k:<22} {d}");
    }
    s
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .map(|v| parse(key, v))
        .collect()
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("invalid value {value:?} for {key} (true|false)"))),
    }
}

/// Split a config document into `(line, key, value)` entries.
fn entries(text: &str) -> Result<Vec<(usize, String, String)>> {
    let mut out = Vec::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value", no + 1)))?;
        out.push((no + 1, k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

impl ExperimentConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if let Some(field) = key.strip_prefix("sbm_").or((key == "dataset_seed").then_some("seed")) {
            let DatasetSource::Synthetic { spec, seed } = &mut self.dataset else {
                return Err(Error::Config(format!("{key} only applies to dataset = sbm")));
            };
            match field {
                "classes" => spec.classes = parse(key, value)?,
                "nodes_per_class" => spec.nodes_per_class = parse(key, value)?,
                "intra_p" => spec.intra_p = parse(key, value)?,
                "inter_p" => spec.inter_p = parse(key, value)?,
                "feature_dim" => spec.feature_dim = parse(key, value)?,
                "feature_noise" => spec.feature_noise = parse(key, value)?,
                "seed" => *seed = parse(key, value)?,
                _ => return Err(Error::Config(format!("unknown key {key:?}"))),
            }
            return Ok(());
        }
        match key {
            "dataset" => {
                if value == "sbm" {
                    if !matches!(self.dataset, DatasetSource::Synthetic { .. }) {
                        self.dataset = ExperimentConfig::default().dataset;
                    }
                } else {
                    self.dataset = DatasetSource::Directory(PathBuf::from(value));
                }
            }
            "name" => self.name = value.to_string(),
            "noise_levels" => self.noise_levels = parse_list(key, value)?,
            "add_fraction" => self.add_fraction = parse(key, value)?,
            "methods" => self.methods = parse_list(key, value)?,
            "seeds" => self.seeds = parse_list(key, value)?,
            "model" => self.model = value.parse()?,
            "ratio" => self.condense.ratio = parse(key, value)?,
            "condense_method" => self.condense.method = value.parse()?,
            "relay_steps" => self.condense.relay_steps = parse(key, value)?,
            "outer_epochs" => self.condense.outer_epochs = parse(key, value)?,
            "match_steps" => self.condense.match_steps = parse(key, value)?,
            "feature_lr" => self.condense.feature_lr = parse(key, value)?,
            "relay_lr" => self.condense.relay_lr = parse(key, value)?,
            "relay_inits" => self.condense.relay_inits = parse(key, value)?,
            "adjacency_threshold" => self.condense.adjacency_threshold = parse(key, value)?,
            "corr_order" => self.denoise.corr_order = parse(key, value)?,
            "hops" => self.denoise.hops = parse(key, value)?,
            "r_nn" => self.denoise.r_nn = parse(key, value)?,
            "alpha" => self.denoise.alpha = parse(key, value)?,
            "lp_iters" => self.denoise.lp_iters = parse(key, value)?,
            "search_points" => self.denoise.search_points = parse(key, value)?,
            "period" => self.denoise.period = parse(key, value)?,
            "support_fraction" => self.denoise.support_fraction = parse(key, value)?,
            "jaccard_threshold" => self.baseline.jaccard_threshold = parse(key, value)?,
            "svd_rank" => self.baseline.svd_rank = parse(key, value)?,
            "svd_cutoff" => self.baseline.svd_cutoff = parse(key, value)?,
            "knn_k" => self.baseline.knn_k = parse(key, value)?,
            "lr" => self.train.lr = parse(key, value)?,
            "epochs" => self.train.epochs = parse(key, value)?,
            "weight_decay" => self.train.weight_decay = parse(key, value)?,
            "patience" => self.train.patience = parse(key, value)?,
            "hidden" => self.train.hidden = parse(key, value)?,
            "sgc_steps" => self.train.sgc_steps = parse(key, value)?,
            "output" => self.output = Some(PathBuf::from(value)),
            "formats" => self.formats = parse_list(key, value)?,
            "csv_timings" => self.csv_timings = parse_bool(key, value)?,
            "save_condensed" => self.save_condensed = parse_bool(key, value)?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Parse a `key = value` document on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        for (line, k, v) in entries(text)? {
            cfg.set(&k, &v)
                .map_err(|e| Error::Config(format!("line {line}: {}", strip_config(e))))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Apply `key=value` overrides.
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<()> {
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {o:?} is not key=value")))?;
            self.set(k.trim(), v.trim())?;
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("at least one method is required".into()));
        }
        if self.noise_levels.is_empty() || self.noise_levels.iter().any(|p| !(0.0..=2.0).contains(p)) {
            return Err(Error::Config("noise levels must be a non-empty subset of [0, 2]".into()));
        }
        if let DatasetSource::Synthetic { spec, .. } = &self.dataset {
            spec.validate()?;
        }
        self.condense.validate()?;
        self.denoise.validate()
    }

    pub fn dataset_name(&self) -> String {
        if !self.name.is_empty() {
            return self.name.clone();
        }
        match &self.dataset {
            DatasetSource::Directory(p) => p
                .file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| p.display().to_string()),
            DatasetSource::Synthetic { .. } => "sbm".into(),
        }
    }
}

fn strip_config(e: Error) -> String {
    match e {
        Error::Config(m) => m,
        other => other.to_string(),
    }
}

/// One raw result row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub dataset: String,
    pub ratio: f64,
    pub noise_level: f64,
    pub method: Method,
    pub seed: u64,
    pub accuracy: f64,
    pub homophily_before: f64,
    pub homophily_after: f64,
    pub edges_before: usize,
    pub edges_after_delete: usize,
    pub edges_after_add: usize,
    pub t_correlation_s: f64,
    pub t_delete_s: f64,
    pub t_add_s: f64,
    pub t_search_s: f64,
    pub t_denoise_total_s: f64,
    pub t_condense_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub dataset: String,
    pub ratio: f64,
    pub noise_level: f64,
    pub method: Method,
    pub runs: usize,
    pub mean: f64,
    /// Sample standard deviation (`n − 1`); 0 for a single run.
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub dataset: String,
    pub ratio: f64,
    pub noise_level: f64,
    pub method: Method,
    pub seed: u64,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellThresholds {
    pub dataset: String,
    pub ratio: f64,
    pub noise_level: f64,
    pub seed: u64,
    pub thresholds: Thresholds,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub rows: Vec<RunRow>,
    pub aggregates: Vec<AggregateRow>,
    pub failures: Vec<CellFailure>,
    pub thresholds: Vec<CellThresholds>,
    pub notes: Vec<String>,
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// One aggregate per (dataset, ratio, noise level, method) in first-seen
/// order.
pub fn aggregate(rows: &[RunRow]) -> Vec<AggregateRow> {
    let mut order: Vec<(String, u64, u64, Method)> = Vec::new();
    let mut groups: HashMap<(String, u64, u64, Method), Vec<f64>> = HashMap::new();
    for r in rows {
        let key = (r.dataset.clone(), r.ratio.to_bits(), r.noise_level.to_bits(), r.method);
        groups
            .entry(key.clone())
            .or_insert_with(|| {
                order.push(key.clone());
                Vec::new()
            })
            .push(r.accuracy);
    }
    order
        .into_iter()
        .map(|key| {
            let accs = &groups[&key];
            let (mean, std) = mean_std(accs);
            AggregateRow {
                dataset: key.0,
                ratio: f64::from_bits(key.1),
                noise_level: f64::from_bits(key.2),
                method: key.3,
                runs: accs.len(),
                mean,
                std,
            }
        })
        .collect()
}

pub fn load_source(source: &DatasetSource) -> Result<DatasetBundle> {
    match source {
        DatasetSource::Directory(dir) => load_dataset(dir),
        DatasetSource::Synthetic { spec, seed } => generate_sbm(spec, *seed),
    }
}

/// Result of one (noise level, seed, method) cell.
#[derive(Clone, Debug)]
pub struct CellResult {
    pub row: RunRow,
    pub thresholds: Option<Thresholds>,
    pub condensed: Option<CondensedGraph>,
}

/// Noisy graphs shared by every method of one (noise level, seed).
pub struct NoisyCell {
    pub train: Graph,
    pub val: Graph,
    pub test: Graph,
}

/// Noise the full graph once, then split it inductively.
pub fn prepare_cell(bundle: &DatasetBundle, level: f64, add_fraction: f64, seed: u64) -> Result<NoisyCell> {
    let spec = NoiseSpec {
        level,
        add_fraction,
        seed,
    };
    let noisy = inject_random_noise(&bundle.graph, &spec)?;
    let split = split_graph(&noisy)?;
    Ok(NoisyCell {
        train: split.train,
        val: split.val,
        test: split.test,
    })
}

fn seeded(config: &ExperimentConfig, seed: u64) -> (CondenseConfig, DenoiseConfig, BaselineConfig, TrainConfig) {
    let mut c = config.condense.clone();
    c.seed = seed;
    let mut d = config.denoise.clone();
    d.seed = seed;
    let mut b = config.baseline.clone();
    b.seed = seed;
    let mut t = config.train.clone();
    t.seed = seed;
    (c, d, b, t)
}

fn eval_condensed(s: &CondensedGraph, val: &Graph, test: &Graph, kind: ModelKind, train: &TrainConfig) -> Result<f64> {
    let model = train_on_condensed(s, kind, train, Some(val))?;
    evaluate_accuracy(
        &model,
        &normalize(test),
        test.features(),
        test.labels(),
        &test.masks().test,
    )
}

/// Run one method on one prepared cell.
pub fn run_cell(
    config: &ExperimentConfig,
    dataset: &str,
    cell: &NoisyCell,
    level: f64,
    seed: u64,
    method: Method,
) -> Result<CellResult> {
    let (ccfg, dcfg, bcfg, tcfg) = seeded(config, seed);
    let train = &cell.train;
    let h_before = edge_homophily(train)?;
    let mut row = RunRow {
        dataset: dataset.to_string(),
        ratio: ccfg.ratio,
        noise_level: level,
        method,
        seed,
        accuracy: f64::NAN,
        homophily_before: h_before,
        homophily_after: h_before,
        edges_before: train.num_edges(),
        edges_after_delete: train.num_edges(),
        edges_after_add: train.num_edges(),
        t_correlation_s: 0.0,
        t_delete_s: 0.0,
        t_add_s: 0.0,
        t_search_s: 0.0,
        t_denoise_total_s: 0.0,
        t_condense_s: 0.0,
    };
    let mut thresholds = None;
    let mut condensed = None;
    match method {
        Method::Whole => {
            let adj = normalize(train);
            let val_adj = normalize(&cell.val);
            let validation = Validation {
                adj: &val_adj,
                features: cell.val.features(),
                labels: cell.val.labels(),
                mask: &cell.val.masks().val,
            };
            let model = train_model(
                config.model,
                &adj,
                train.features(),
                train.labels(),
                &train.masks().train,
                train.num_classes(),
                &tcfg,
                (!cell.val.masks().val.is_empty()).then_some(validation),
            )?;
            row.accuracy = evaluate_accuracy(
                &model,
                &normalize(&cell.test),
                cell.test.features(),
                cell.test.labels(),
                &cell.test.masks().test,
            )?;
        }
        Method::Plain => {
            let t = Instant::now();
            let s = condense(train, &normalize(train), &ccfg)?;
            row.t_condense_s = t.elapsed().as_secs_f64();
            row.accuracy = eval_condensed(&s, &cell.val, &cell.test, config.model, &tcfg)?;
            condensed = Some(s);
        }
        Method::Robgc => {
            let out = alternating_optimize(train, &ccfg, &dcfg)?;
            let last: &DenoiseStats = out.structure_stats.last().expect("warm-up stats always present");
            row.homophily_after = edge_homophily(&out.graph)?;
            row.edges_after_delete = last.edges_after_delete;
            row.edges_after_add = last.edges_after_add;
            row.t_correlation_s = last.t_correlation_s;
            row.t_delete_s = last.t_delete_s;
            row.t_add_s = last.t_add_s;
            row.t_search_s = last.t_search_s;
            row.t_denoise_total_s = last.t_total_s;
            row.t_condense_s = out.t_condense_s;
            let val = test_time_denoise(&cell.val, &out.condensed, &out.thresholds, &dcfg)?.graph;
            let test = test_time_denoise(&cell.test, &out.condensed, &out.thresholds, &dcfg)?.graph;
            row.accuracy = eval_condensed(&out.condensed, &val, &test, config.model, &tcfg)?;
            thresholds = Some(out.thresholds);
            condensed = Some(out.condensed);
        }
        Method::Jaccard | Method::Svd | Method::Knn => {
            let b = method.baseline().expect("baseline method");
            let t = Instant::now();
            let cleaned = b.apply(train, &bcfg)?;
            row.t_denoise_total_s = t.elapsed().as_secs_f64();
            row.homophily_after = edge_homophily(&cleaned)?;
            match b {
                Baseline::Jaccard => row.edges_after_delete = cleaned.num_edges(),
                Baseline::Knn => row.edges_after_delete = train.num_edges(),
                Baseline::Svd => row.edges_after_delete = cleaned.num_edges(),
            }
            row.edges_after_add = cleaned.num_edges();
            let t = Instant::now();
            let s = condense(&cleaned, &normalize(&cleaned), &ccfg)?;
            row.t_condense_s = t.elapsed().as_secs_f64();
            let val = b.apply(&cell.val, &bcfg)?;
            let test = b.apply(&cell.test, &bcfg)?;
            row.accuracy = eval_condensed(&s, &val, &test, config.model, &tcfg)?;
            condensed = Some(s);
        }
    }
    Ok(CellResult {
        row,
        thresholds,
        condensed,
    })
}

fn cell_dir_name(method: Method, level: f64, seed: u64) -> String {
    format!("{}-noise{}-seed{}", method.name(), level, seed)
}

/// Run every (noise level, seed, method) cell of one configuration. A
/// failing cell is recorded and the rest continue.
pub fn run_with_bundle(config: &ExperimentConfig, bundle: &DatasetBundle) -> Result<RunReport> {
    config.validate()?;
    let dataset = config.dataset_name();
    let mut report = RunReport::default();
    report
        .notes
        .push("baselines are applied to the training, validation and test graphs".into());
    for &level in &config.noise_levels {
        for &seed in &config.seeds {
            let cell = match prepare_cell(bundle, level, config.add_fraction, seed) {
                Ok(c) => c,
                Err(e) => {
                    for &method in &config.methods {
                        report.failures.push(CellFailure {
                            dataset: dataset.clone(),
                            ratio: config.condense.ratio,
                            noise_level: level,
                            method,
                            seed,
                            error: e.to_string(),
                        });
                    }
                    continue;
                }
            };
            for &method in &config.methods {
                log::info!("{dataset}: noise {level} seed {seed} method {}", method.name());
                match run_cell(config, &dataset, &cell, level, seed, method) {
                    Ok(res) => {
                        if let Some(t) = res.thresholds {
                            report.thresholds.push(CellThresholds {
                                dataset: dataset.clone(),
                                ratio: config.condense.ratio,
                                noise_level: level,
                                seed,
                                thresholds: t,
                            });
                        }
                        if let (true, Some(out), Some(s)) = (config.save_condensed, &config.output, &res.condensed) {
                            if method == Method::Robgc {
                                save_condensed(s, &out.join("condensed").join(cell_dir_name(method, level, seed)))?;
                            }
                        }
                        report.rows.push(res.row);
                    }
                    Err(e) => {
                        log::warn!("cell failed: {e}");
                        report.failures.push(CellFailure {
                            dataset: dataset.clone(),
                            ratio: config.condense.ratio,
                            noise_level: level,
                            method,
                            seed,
                            error: e.to_string(),
                        });
                    }
                }
            }
        }
    }
    report.aggregates = aggregate(&report.rows);
    Ok(report)
}

pub fn run_pipeline(config: &ExperimentConfig) -> Result<RunReport> {
    config.validate()?;
    let bundle = load_source(&config.dataset)?;
    run_with_bundle(config, &bundle)
}

/// Base configuration plus the keys that vary, each with its values.
#[derive(Clone, Debug)]
pub struct SweepGrid {
    pub base: ExperimentConfig,
    pub axes: Vec<(String, Vec<String>)>,
}

impl SweepGrid {
    /// Same syntax as a config file; a value with `|` separators becomes a
    /// sweep axis.
    pub fn parse(text: &str) -> Result<Self> {
        let mut base = ExperimentConfig::default();
        let mut axes = Vec::new();
        for (line, k, v) in entries(text)? {
            let values: Vec<String> = v.split('|').map(|s| s.trim().to_string()).collect();
            // check every value parses, reporting the line
            for val in &values {
                let mut probe = base.clone();
                probe
                    .set(&k, val)
                    .map_err(|e| Error::Config(format!("line {line}: {}", strip_config(e))))?;
            }
            if values.len() > 1 {
                axes.push((k, values));
            } else {
                base.set(&k, &values[0])?;
            }
        }
        Ok(SweepGrid { base, axes })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Cross product of all axes, first axis varying slowest.
    pub fn configs(&self) -> Result<Vec<ExperimentConfig>> {
        let mut out = vec![self.base.clone()];
        for (k, values) in &self.axes {
            let mut next = Vec::with_capacity(out.len() * values.len());
            for cfg in &out {
                for v in values {
                    let mut c = cfg.clone();
                    c.set(k, v)?;
                    next.push(c);
                }
            }
            out = next;
        }
        for c in &out {
            c.validate()?;
        }
        Ok(out)
    }
}

/// Run every grid point, loading each distinct dataset once.
pub fn sweep(configs: &[ExperimentConfig]) -> Result<RunReport> {
    if configs.is_empty() {
        return Err(Error::Config("empty sweep grid".into()));
    }
    let mut cache: BTreeMap<String, DatasetBundle> = BTreeMap::new();
    let mut report = RunReport::default();
    for cfg in configs {
        let key = serde_json::to_string(&cfg.dataset)?;
        if !cache.contains_key(&key) {
            cache.insert(key.clone(), load_source(&cfg.dataset)?);
        }
        let part = run_with_bundle(cfg, &cache[&key])?;
        report.rows.extend(part.rows);
        report.failures.extend(part.failures);
        report.thresholds.extend(part.thresholds);
        for n in part.notes {
            if !report.notes.contains(&n) {
                report.notes.push(n);
            }
        }
    }
    report.aggregates = aggregate(&report.rows);
    Ok(report)
}

pub const CSV_COLUMNS: [&str; 15] = [
    "dataset",
    "ratio",
    "noise_level",
    "method",
    "seed",
    "accuracy",
    "homophily_before",
    "homophily_after",
    "edges_before",
    "edges_after_delete",
    "edges_after_add",
    "t_correlation_s",
    "t_delete_s",
    "t_add_s",
    "t_search_s",
];

/// Results as CSV. Timing columns stay empty unless `timings` is set, so
/// reruns are byte-identical.
pub fn report_csv(report: &RunReport, timings: bool) -> String {
    let mut s = CSV_COLUMNS.join(",");
    s.push('\n');
    for r in &report.rows {
        let t = |v: f64| if timings { v.to_string() } else { String::new() };
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.dataset,
            r.ratio,
            r.noise_level,
            r.method.name(),
            r.seed,
            r.accuracy,
            r.homophily_before,
            r.homophily_after,
            r.edges_before,
            r.edges_after_delete,
            r.edges_after_add,
            t(r.t_correlation_s),
            t(r.t_delete_s),
            t(r.t_add_s),
            t(r.t_search_s),
        );
    }
    s
}

pub fn timings_csv(report: &RunReport) -> String {
    let mut s = String::from(
        "dataset,ratio,noise_level,method,seed,t_correlation_s,t_delete_s,t_add_s,t_search_s,t_denoise_total_s,t_condense_s\n",
    );
    for r in &report.rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.dataset,
            r.ratio,
            r.noise_level,
            r.method.name(),
            r.seed,
            r.t_correlation_s,
            r.t_delete_s,
            r.t_add_s,
            r.t_search_s,
            r.t_denoise_total_s,
            r.t_condense_s
        );
    }
    s
}

pub fn report_markdown(report: &RunReport) -> String {
    let mut s = String::from("| dataset | ratio | noise | method | runs | accuracy (%) |\n|---|---|---|---|---|---|\n");
    for a in &report.aggregates {
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {} | {:.2} ± {:.2} |",
            a.dataset,
            a.ratio,
            a.noise_level,
            a.method.name(),
            a.runs,
            100.0 * a.mean,
            100.0 * a.std
        );
    }
    if !report.failures.is_empty() {
        s.push_str("\nFailed cells:\n\n");
        for f in &report.failures {
            let _ = writeln!(
                s,
                "- {} noise {} seed {} {}: {}",
                f.dataset,
                f.noise_level,
                f.seed,
                f.method.name(),
                f.error
            );
        }
    }
    s
}

/// Write the report in the requested formats plus `thresholds.json` and
/// `timings.csv`. Returns the files written.
pub fn emit_report(
    report: &RunReport,
    dir: &Path,
    formats: &[ReportFormat],
    csv_timings: bool,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    let mut write = |name: &str, body: String| -> Result<()> {
        let p = dir.join(name);
        fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
        written.push(p);
        Ok(())
    };
    for f in formats {
        match f {
            ReportFormat::Csv => write("report.csv", report_csv(report, csv_timings))?,
            ReportFormat::Markdown => write("report.md", report_markdown(report))?,
            ReportFormat::Json => write("report.json", serde_json::to_string_pretty(report)?)?,
        }
    }
    write("thresholds.json", serde_json::to_string_pretty(&report.thresholds)?)?;
    write("timings.csv", timings_csv(report))?;
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_keys_and_rejects_unknown() {
        let cfg = ExperimentConfig::parse("# demo\nnoise_levels = 0, 0.4\nseeds=1,2\nmethods = plain,robgc\nmodel = gcn\n").unwrap();
        assert_eq!(cfg.noise_levels, vec![0.0, 0.4]);
        assert_eq!(cfg.seeds, vec![1, 2]);
        assert_eq!(cfg.model, ModelKind::Gcn);
        let err = ExperimentConfig::parse("bogus = 1").unwrap_err().to_string();
        assert!(err.contains("line 1") && err.contains("bogus"), "{err}");
        assert!(ExperimentConfig::parse("seeds = ").is_err());
        assert!(ExperimentConfig::parse("noise_levels = 2.5").is_err());
    }

    #[test]
    fn every_key_is_documented_and_settable() {
        for (k, _) in CONFIG_KEYS {
            let mut cfg = ExperimentConfig::default();
            let err = cfg.set(k, "definitely-not-valid");
            if let Err(e) = err {
                assert!(!e.to_string().contains("unknown key"), "{k}");
            }
        }
    }

    #[test]
    fn mean_std_sample_normalization() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-15);
        assert_eq!(mean_std(&[4.0]), (4.0, 0.0));
    }

    #[test]
    fn empty_report_is_header_only() {
        let csv = report_csv(&RunReport::default(), false);
        assert_eq!(csv, format!("{}\n", CSV_COLUMNS.join(",")));
    }

    #[test]
    fn grid_expands_cross_product() {
        let g = SweepGrid::parse("seeds = 1|2|3\nnoise_levels = 0|0.4\n").unwrap();
        let cfgs = g.configs().unwrap();
        assert_eq!(cfgs.len(), 6);
        assert_eq!(cfgs[0].seeds, vec![1]);
        assert_eq!(cfgs[1].noise_levels, vec![0.4]);
        assert!(SweepGrid::parse("seeds = 1|x").is_err());
    }
}
