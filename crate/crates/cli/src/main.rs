//! `silentrisk` batch driver.
//!
//! Exit codes: 0 success, 2 input/schema/config error, 3 numerical failure,
//! 4 missing output of an earlier stage.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use silentrisk_core::pipeline::{self, RunConfig};
use silentrisk_core::synth::{Scenario, SynthConfig};
use silentrisk_core::Error;

#[derive(Debug, Parser)]
#[command(name = "silentrisk", version, about = "County-level mortality risk analytics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct Common {
    /// Run configuration (flat TOML); flags override its values.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    #[arg(long, global = true, value_name = "N")]
    permutations: Option<usize>,
    #[arg(long, global = true, value_name = "N")]
    folds: Option<usize>,
    #[arg(long = "top-n", global = true, value_name = "N")]
    top_n: Option<usize>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Merge the source tables, compute SMR and burden scores.
    Ingest,
    /// Cross-validate the four model families and save the boosted model.
    Train,
    /// TreeSHAP attributions for the saved model.
    Explain,
    /// K-means clusters, risk quadrants and the silent-risk ranking.
    Cluster,
    /// Global and local Moran's I of SMR.
    Spatial,
    /// Bundle stage outputs into report.json and write the run manifest.
    Report,
    /// Run every stage in order.
    Run,
    /// Generate a synthetic input set and a config.toml pointing at it.
    Synth {
        #[arg(long, default_value_t = 500)]
        n: usize,
        #[arg(long, default_value = "threshold", value_name = "NAME")]
        scenario: String,
    },
}

fn load_config(c: &Common) -> Result<RunConfig, Error> {
    let mut cfg = match &c.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(out) = &c.out {
        cfg.out_dir = out.clone();
    }
    if let Some(v) = c.seed {
        cfg.seed = v;
    }
    if let Some(v) = c.permutations {
        cfg.permutations = v;
    }
    if let Some(v) = c.folds {
        cfg.folds = v;
    }
    if let Some(v) = c.top_n {
        cfg.top_n = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), Error> {
    if let Some(n) = cli.common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    if let Command::Synth { n, scenario } = &cli.command {
        let scenario: Scenario = scenario.parse()?;
        let dir = cli.common.out.clone().unwrap_or_else(|| PathBuf::from("synthetic"));
        let seed = cli.common.seed.unwrap_or(RunConfig::default().seed);
        pipeline::run_synth(&SynthConfig::new(*n, seed, scenario), &dir)?;
        info!("wrote {scenario} scenario with {n} counties to {}", dir.display());
        println!("{}", dir.join(pipeline::files::CONFIG).display());
        return Ok(());
    }
    let cfg = load_config(&cli.common)?;
    match cli.command {
        Command::Ingest => {
            let s = pipeline::run_ingest(&cfg)?;
            println!(
                "ingested {} counties: {} observed, {} suppressed; reference rate {:.4} per 100k",
                s.join.records, s.join.observed, s.join.suppressed, s.reference_rate.rate_per_100k
            );
        }
        Command::Train => {
            let s = pipeline::run_train(&cfg)?;
            for r in &s.comparison.rows {
                println!("{:<18} R2 {:.3} ± {:.3}  RMSE {:.3}  MAE {:.3}", r.model, r.r2_mean, r.r2_sd, r.rmse_mean, r.mae);
            }
        }
        Command::Explain => {
            let ranking = pipeline::run_explain(&cfg)?;
            for e in ranking.entries.iter().take(10) {
                println!("{:<24} {:.4}", e.feature, e.mean_abs_phi);
            }
        }
        Command::Cluster => {
            let s = pipeline::run_cluster(&cfg)?;
            let q = s.quadrant_counts;
            println!(
                "k={} silhouette {:.3}; crisis {} silent_risk {} moderate_risk {} lower_risk {}",
                s.k, s.silhouette, q.crisis, q.silent_risk, q.moderate_risk, q.lower_risk
            );
        }
        Command::Spatial => {
            let s = pipeline::run_spatial(&cfg)?;
            println!(
                "Moran's I {:.4} (p_sim {}); {} hotspots, {} coldspots",
                s.global.i, s.global.p_sim, s.lisa.significant.hh, s.lisa.significant.ll
            );
        }
        Command::Report => {
            pipeline::run_report(&cfg)?;
            println!("{}", cfg.out(pipeline::files::MANIFEST).display());
        }
        Command::Run => {
            pipeline::run_all(&cfg)?;
            println!("{}", cfg.out(pipeline::files::MANIFEST).display());
        }
        Command::Synth { .. } => unreachable!("handled above"),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
