use std::process::Command;

use robgc::condense::{condense, CondenseConfig};
use robgc::denoise::{alternating_optimize, test_time_denoise, DenoiseConfig};
use robgc::graph::{normalize, Graph};
use robgc::harness::{
    emit_report, prepare_cell, report_csv, run_pipeline, sweep, ExperimentConfig, Method, ReportFormat, RunReport,
    SweepGrid,
};
use robgc::io::{generate_sbm, load_condensed, load_dataset, save_condensed, save_dataset, SyntheticSpec};
use robgc::relay::{load_model, save_model, train_on_condensed, train_on_condensed_eval_on_graph, ModelKind, TrainConfig};

const SMALL: &str = "
dataset = sbm
sbm_classes = 3
sbm_nodes_per_class = 40
sbm_intra_p = 0.15
sbm_inter_p = 0.01
sbm_feature_dim = 6
sbm_feature_noise = 0.8
ratio = 0.1
outer_epochs = 12
period = 6
search_points = 6
epochs = 80
";

fn small(extra: &str) -> ExperimentConfig {
    ExperimentConfig::parse(&format!("{SMALL}\n{extra}")).unwrap()
}

#[test]
fn reruns_are_byte_identical() {
    let cfg = small("noise_levels = 0.5\nseeds = 3\nmethods = plain, robgc, svd");
    let a = run_pipeline(&cfg).unwrap();
    let b = run_pipeline(&cfg).unwrap();
    assert!(a.failures.is_empty(), "{:?}", a.failures);
    let (da, db) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let formats = [ReportFormat::Csv, ReportFormat::Json];
    emit_report(&a, da.path(), &formats, false).unwrap();
    emit_report(&b, db.path(), &formats, false).unwrap();
    for f in ["report.csv", "thresholds.json"] {
        let x = std::fs::read(da.path().join(f)).unwrap();
        let y = std::fs::read(db.path().join(f)).unwrap();
        assert_eq!(x, y, "{f}");
    }
}

#[test]
fn plain_on_clean_graph_equals_direct_evaluation() {
    let cfg = small("noise_levels = 0\nseeds = 2\nmethods = plain");
    let report = run_pipeline(&cfg).unwrap();
    let bundle = generate_sbm(
        &match &cfg.dataset {
            robgc::harness::DatasetSource::Synthetic { spec, .. } => spec.clone(),
            _ => unreachable!(),
        },
        0,
    )
    .unwrap();
    let cell = prepare_cell(&bundle, 0.0, 0.5, 2).unwrap();
    let ccfg = CondenseConfig { seed: 2, ..cfg.condense.clone() };
    let tcfg = TrainConfig { seed: 2, ..cfg.train.clone() };
    let s = condense(&cell.train, &normalize(&cell.train), &ccfg).unwrap();
    let direct = train_on_condensed_eval_on_graph(&s, &cell.test, ModelKind::Sgc, &tcfg, Some(&cell.val)).unwrap();
    assert_eq!(report.rows[0].accuracy, direct);
}

#[test]
fn json_report_round_trips() {
    let cfg = small("noise_levels = 0.2\nseeds = 1\nmethods = robgc, knn");
    let report = run_pipeline(&cfg).unwrap();
    let text = serde_json::to_string(&report).unwrap();
    let back: RunReport = serde_json::from_str(&text).unwrap();
    assert_eq!(back, report);
}

#[test]
fn seeds_times_levels_row_counts() {
    let grid = SweepGrid::parse(&format!("{SMALL}\nmethods = plain\nseeds = 1,2,3\nnoise_levels = 0|0.4")).unwrap();
    let report = sweep(&grid.configs().unwrap()).unwrap();
    assert_eq!(report.rows.len(), 6);
    assert_eq!(report.aggregates.len(), 2);
    for agg in &report.aggregates {
        let accs: Vec<f64> = report
            .rows
            .iter()
            .filter(|r| r.noise_level == agg.noise_level)
            .map(|r| r.accuracy)
            .collect();
        let mean = accs.iter().sum::<f64>() / 3.0;
        let var = accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / 2.0;
        assert!((agg.mean - mean).abs() < 1e-12);
        assert!((agg.std - var.sqrt()).abs() < 1e-12);
    }
    // a grid of one is the plain pipeline
    let one = small("methods = plain\nseeds = 1\nnoise_levels = 0.4");
    let direct = run_pipeline(&one).unwrap();
    assert_eq!(report_csv(&sweep(&[one]).unwrap(), false), report_csv(&direct, false));
}

#[test]
fn failing_cell_does_not_stop_the_run() {
    // more deletions than edges at level 2 with add_fraction 0
    let cfg = small("noise_levels = 0, 2\nadd_fraction = 0\nseeds = 1\nmethods = plain");
    let report = run_pipeline(&cfg).unwrap();
    assert_eq!(report.rows.len(), 1);
    assert_eq!(report.failures.len(), 1);
}

fn sbm(seed: u64) -> Graph {
    let spec = SyntheticSpec {
        classes: 3,
        nodes_per_class: 40,
        intra_p: 0.15,
        inter_p: 0.01,
        feature_dim: 6,
        feature_noise: 0.5,
    };
    generate_sbm(&spec, seed).unwrap().graph
}

#[test]
fn alternating_loop_reoptimizes_every_period() {
    let g = sbm(4);
    let cell = robgc::io::split_graph(&g).unwrap();
    let ccfg = CondenseConfig { outer_epochs: 20, ratio: 0.1, ..Default::default() };
    let dcfg = DenoiseConfig { period: 5, search_points: 5, ..Default::default() };
    let out = alternating_optimize(&cell.train, &ccfg, &dcfg).unwrap();
    assert_eq!(out.structure_stats.len(), 1 + 4);
    for st in &out.structure_stats {
        assert_eq!(st.edges_before, cell.train.num_edges());
        assert_eq!(st.lattice_pairs, 25);
        let stages = st.t_correlation_s + st.t_delete_s + st.t_add_s + st.t_search_s;
        assert!(stages <= st.t_total_s * 1.05 + 1e-6 && stages >= st.t_total_s * 0.95 - 1e-4);
    }
    // test-time: no search, frozen thresholds, linear work
    let t = test_time_denoise(&cell.test, &out.condensed, &out.thresholds, &dcfg).unwrap();
    assert_eq!(t.stats.lattice_pairs, 0);
    let n = cell.test.num_nodes();
    assert!(t.stats.correlation_entries <= n * out.condensed.num_nodes() * (2 + dcfg.corr_order));
    assert_eq!(t.stats.edge_pairs_scored, cell.test.num_edges());
}

#[test]
fn dataset_and_condensed_round_trip() {
    let g = sbm(5);
    let dir = tempfile::tempdir().unwrap();
    save_dataset(&g, dir.path()).unwrap();
    let back = load_dataset(dir.path()).unwrap().graph;
    assert_eq!(back.edges(), g.edges());
    assert_eq!(back.labels(), g.labels());
    assert_eq!(back.masks(), g.masks());
    assert!(back.features().max_abs_diff(g.features()) < 1e-6);

    let split = robgc::io::split_graph(&g).unwrap();
    let s = condense(&split.train, &normalize(&split.train), &CondenseConfig { outer_epochs: 3, ratio: 0.1, ..Default::default() }).unwrap();
    let cdir = tempfile::tempdir().unwrap();
    save_condensed(&s, cdir.path()).unwrap();
    let t = load_condensed(cdir.path()).unwrap();
    assert_eq!(t.labels, s.labels);
    assert!(t.features.max_abs_diff(&s.features) < 1e-6);
    assert!(t.adjacency.max_abs_diff(&s.adjacency) < 1e-6);

    let model = train_on_condensed(&s, ModelKind::Gcn, &TrainConfig { epochs: 5, hidden: 8, ..Default::default() }, None).unwrap();
    let mdir = tempfile::tempdir().unwrap();
    save_model(&model, mdir.path()).unwrap();
    let loaded = load_model(mdir.path()).unwrap();
    let adj = normalize(&g);
    let p1 = model.predict_proba(&adj, g.features()).unwrap();
    let p2 = loaded.predict_proba(&adj, g.features()).unwrap();
    assert!(p1.max_abs_diff(&p2) < 1e-4);
}

#[test]
fn cli_run_stats_and_denoise() {
    let exe = env!("CARGO_BIN_EXE_robgc");
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, format!("{SMALL}\nnoise_levels = 0.5\nseeds = 1\nmethods = robgc\nsave_condensed = true\nformats = csv,markdown,json\n")).unwrap();
    let out = dir.path().join("out");
    let status = Command::new(exe)
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .args(["--override", "epochs=40"])
        .env("ROBGC_THREADS", "2")
        .status()
        .unwrap();
    assert!(status.success());
    for f in ["report.csv", "report.md", "report.json", "thresholds.json", "timings.csv"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let cells: Vec<serde_json::Value> =
        serde_json::from_str(&std::fs::read_to_string(out.join("thresholds.json")).unwrap()).unwrap();
    let t = dir.path().join("t.json");
    std::fs::write(&t, cells[0]["thresholds"].to_string()).unwrap();

    let data = dir.path().join("data");
    save_dataset(&sbm(1), &data).unwrap();
    let stats = Command::new(exe).args(["stats", "--graph"]).arg(&data).output().unwrap();
    assert!(stats.status.success());
    assert!(String::from_utf8_lossy(&stats.stdout).contains("edge homophily"));

    let denoised = dir.path().join("denoised");
    let d = Command::new(exe)
        .args(["denoise", "--graph"])
        .arg(&data)
        .arg("--condensed")
        .arg(out.join("condensed").join("robgc-noise0.5-seed1"))
        .arg("--thresholds")
        .arg(&t)
        .arg("--out")
        .arg(&denoised)
        .output()
        .unwrap();
    assert!(d.status.success(), "{}", String::from_utf8_lossy(&d.stderr));
    assert!(load_dataset(&denoised).is_ok());

    let bad = Command::new(exe)
        .args(["run", "--config"])
        .arg(&cfg)
        .args(["--override", "nonsense=1"])
        .output()
        .unwrap();
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("unknown key"));

    let help = Command::new(exe).args(["run", "--help"]).output().unwrap();
    let text = String::from_utf8_lossy(&help.stdout);
    for (k, _) in robgc::harness::CONFIG_KEYS {
        assert!(text.contains(k), "--help misses {k}");
    }
}

#[test]
fn methods_parse_including_none_alias() {
    assert_eq!("none".parse::<Method>().unwrap(), Method::Plain);
    assert!("stable".parse::<Method>().is_err());
}
