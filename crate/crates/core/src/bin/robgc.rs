use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use robgc::denoise::{test_time_denoise, DenoiseConfig, Thresholds};
use robgc::error::{Error, Result};
use robgc::graph::graph_statistics;
use robgc::harness::{config_help, emit_report, run_pipeline, sweep, ExperimentConfig, ReportFormat, SweepGrid};
use robgc::io::{load_condensed, load_dataset, save_dataset};

#[derive(Parser)]
#[command(name = "robgc", version, about = "Joint graph condensation and structure denoising")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment configuration.
    #[command(after_help = config_help())]
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Override a config key, e.g. --override seeds=1,2
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Output directory (overrides the `output` key).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the cross product of a grid file (config syntax, `a|b|c` values).
    #[command(after_help = config_help())]
    Sweep {
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print node, edge, sparsity and homophily statistics of a dataset.
    Stats {
        #[arg(long)]
        graph: PathBuf,
    },
    /// Denoise a graph with a saved condensed graph and frozen thresholds.
    Denoise {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        condensed: PathBuf,
        #[arg(long)]
        thresholds: PathBuf,
        #[arg(long, default_value_t = 3)]
        hops: usize,
        #[arg(long, default_value_t = 3)]
        r_nn: usize,
        #[arg(long, default_value_t = 2)]
        corr_order: usize,
        /// Where to write the denoised dataset.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn seed_override(cfg: &mut ExperimentConfig) -> Result<()> {
    if let Ok(s) = std::env::var("ROBGC_SEED") {
        let seed = s
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("ROBGC_SEED={s:?} is not an integer")))?;
        cfg.seeds = vec![seed];
    }
    Ok(())
}

fn output_dir(cfg: &ExperimentConfig, out: Option<PathBuf>) -> PathBuf {
    out.or_else(|| cfg.output.clone()).unwrap_or_else(|| PathBuf::from("robgc-out"))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config, overrides, out } => {
            let mut cfg = ExperimentConfig::from_file(&config)?;
            cfg.apply_overrides(&overrides)?;
            seed_override(&mut cfg)?;
            let dir = output_dir(&cfg, out);
            cfg.output = Some(dir.clone());
            let report = run_pipeline(&cfg)?;
            for p in emit_report(&report, &dir, &cfg.formats, cfg.csv_timings)? {
                println!("wrote {}", p.display());
            }
            for f in &report.failures {
                eprintln!("failed: noise {} seed {} {}: {}", f.noise_level, f.seed, f.method.name(), f.error);
            }
        }
        Command::Sweep { grid, out } => {
            let mut grid = SweepGrid::from_file(&grid)?;
            seed_override(&mut grid.base)?;
            let dir = output_dir(&grid.base, out);
            let mut configs = grid.configs()?;
            for c in &mut configs {
                c.output = Some(dir.clone());
            }
            let report = sweep(&configs)?;
            let formats = [ReportFormat::Csv, ReportFormat::Markdown, ReportFormat::Json];
            for p in emit_report(&report, &dir, &formats, grid.base.csv_timings)? {
                println!("wrote {}", p.display());
            }
        }
        Command::Stats { graph } => {
            let bundle = load_dataset(&graph)?;
            let s = graph_statistics(&bundle.graph);
            println!("nodes            {}", s.num_nodes);
            println!("directed edges   {}", s.directed_edges);
            println!("sparsity (%)     {:.4}", s.sparsity_percent);
            match s.homophily {
                Some(h) => println!("edge homophily   {h:.4}"),
                None => println!("edge homophily   n/a"),
            }
        }
        Command::Denoise {
            graph,
            condensed,
            thresholds,
            hops,
            r_nn,
            corr_order,
            out,
        } => {
            let bundle = load_dataset(&graph)?;
            let s = load_condensed(&condensed)?;
            let text = std::fs::read_to_string(&thresholds).map_err(|e| Error::io(&thresholds, e))?;
            let t = Thresholds::from_json(&text)?;
            let cfg = DenoiseConfig {
                hops,
                r_nn,
                corr_order,
                ..Default::default()
            };
            let res = test_time_denoise(&bundle.graph, &s, &t, &cfg)?;
            println!(
                "edges {} -> {} after deletion -> {} after addition",
                res.stats.edges_before, res.stats.edges_after_delete, res.stats.edges_after_add
            );
            if let Some(dir) = out {
                save_dataset(&res.graph, &dir)?;
                println!("wrote {}", dir.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Ok(t) = std::env::var("ROBGC_THREADS") {
        match t.trim().parse::<usize>() {
            Ok(n) if n > 0 => {
                if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                    eprintln!("warning: could not size thread pool: {e}");
                }
            }
            _ => eprintln!("warning: ignoring ROBGC_THREADS={t:?}"),
        }
    }
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
