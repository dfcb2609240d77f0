//! Command-line front end for the RIS-aided MU-MIMO EMF simulation library.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ris_emf_core::config::ExperimentConfig;
use ris_emf_core::harness;

#[derive(Parser)]
#[command(
    name = "ris-emf",
    version,
    about = "RIS-aided MU-MIMO downlink simulation with EMF-aware beamforming"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// JSON experiment configuration; defaults are used when omitted.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Master seed; overrides the RIS_EMF_SEED environment variable and the
    /// config file.
    #[arg(short, long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run a single draw and write heatmaps, exceedance maps, and
    /// compliance reports.
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
        /// Number of UEs; defaults to the config's scene value.
        #[arg(short = 'l', long)]
        ues: Option<usize>,
        /// Draw index within the seeded stream.
        #[arg(short, long, default_value_t = 0)]
        draw: u64,
        /// Output directory.
        #[arg(short, long, default_value = "out/simulate")]
        out: PathBuf,
    },
    /// Run the Monte Carlo sweep over UE counts and write summary CSVs.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        /// Worker threads; 0 means one per logical CPU.
        #[arg(short, long, default_value_t = 0)]
        workers: usize,
        /// Output directory.
        #[arg(short, long, default_value = "out/sweep")]
        out: PathBuf,
    },
    /// Run the fixed-seed invariant suite; exits non-zero on any failure.
    Validate {
        #[command(flatten)]
        common: CommonArgs,
    },
}

fn load_config(common: &CommonArgs) -> Result<ExperimentConfig, ris_emf_core::Error> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    // precedence: --seed flag, then RIS_EMF_SEED, then the config file
    if let Some(seed) = common.seed {
        cfg.scene.seed = seed;
    } else if let Ok(env_seed) = std::env::var("RIS_EMF_SEED") {
        cfg.scene.seed = env_seed.parse().map_err(|_| {
            ris_emf_core::Error::Config(format!("RIS_EMF_SEED is not a valid u64: {env_seed}"))
        })?;
    }
    Ok(cfg)
}

fn run() -> Result<bool, ris_emf_core::Error> {
    match Cli::parse().command {
        Command::Simulate {
            common,
            ues,
            draw,
            out,
        } => {
            let cfg = load_config(&common)?;
            let l = ues.unwrap_or(cfg.scene.num_ues);
            let (record, artifacts) = harness::run_draw_detailed(&cfg, l, draw)?;
            harness::write_maps(&cfg, &artifacts, &out)?;
            std::fs::write(
                out.join("record.json"),
                serde_json::to_string_pretty(&record)
                    .map_err(ris_emf_core::Error::from)?,
            )?;
            println!(
                "draw l={} d={} seed={}: nu={}, reference {:.1} W / {:.1} Mbps, \
                 reduced alpha={:.4}, enhanced {} iterations",
                record.l,
                record.draw_index,
                record.seed,
                record.nu,
                record.reference.total_power_w,
                record.reference.capacity_mbps,
                record.alpha,
                record.enhanced_iterations
            );
            println!("artifacts written to {}", out.display());
            Ok(true)
        }
        Command::Sweep {
            common,
            workers,
            out,
        } => {
            let cfg = load_config(&common)?;
            let result = harness::run_sweep(&cfg, Some(&out), workers)?;
            println!(
                "{} draws completed, {} failed; summary written to {}",
                result.records.len(),
                result.failures.len(),
                out.join("summary.csv").display()
            );
            for row in &result.summary.rows {
                println!(
                    "L={} {:>9}: capacity {:8.1} Mbps ({:5.1}% of ref), power {:7.2} W",
                    row.l,
                    row.scheme,
                    row.mean_capacity_mbps,
                    row.capacity_pct_vs_ref,
                    row.mean_power_w
                );
            }
            Ok(result.failures.is_empty())
        }
        Command::Validate { common } => {
            let cfg = load_config(&common)?;
            let checks = harness::validate(&cfg)?;
            let mut all_passed = true;
            for c in &checks {
                let status = if c.passed { "PASS" } else { "FAIL" };
                println!("{status} {:<35} {}", c.name, c.detail);
                all_passed &= c.passed;
            }
            Ok(all_passed)
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
