//! Command-line front end: `run` drives the stage pipeline for one config,
//! `sweep-omega-high` traces the mass/constraint trade curve, `compare`
//! runs several designs and prints one table. Log verbosity comes from the
//! FLEXSTAGE_LOG environment variable.

use clap::{Parser, Subcommand};
use flexstage::analysis::comparison_table;
use flexstage::config::ProjectConfig;
use flexstage::error::Result;
use flexstage::pipeline::{compare_designs, run_pipeline, sweep_omega_high, RunOptions, Stage};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "flexstage",
    version,
    about = "Co-design pipeline for lightweight actively damped positioning stages"
)]
struct Cli {
    /// Worker threads for parallel sections (0 means one per core).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    /// Override the seed from the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the pipeline for one design config.
    Run {
        /// Project config (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Last stage to run: modes, structure, placement, assembly, tune,
        /// analysis, or report.
        #[arg(long, default_value = "report")]
        through: Stage,
        /// Run directory for artifacts.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Re-run the structure optimization over a range of upper frequency
    /// constraints and tabulate the achievable mass.
    SweepOmegaHigh {
        /// Project config (TOML); must use structure.goal = "band".
        #[arg(long)]
        config: PathBuf,
        /// Lowest upper-constraint corner, Hz.
        #[arg(long)]
        from: f64,
        /// Highest upper-constraint corner, Hz.
        #[arg(long)]
        to: f64,
        /// Number of corners, endpoints included.
        #[arg(long)]
        steps: usize,
        /// Run directory for artifacts.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run each design's full pipeline and produce one trade table.
    Compare {
        /// Two or more project configs, one per design.
        #[arg(long, num_args = 2.., required = true)]
        designs: Vec<PathBuf>,
        /// Run directory; each design gets a subdirectory by name.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter("FLEXSTAGE_LOG")).init();
    let cli = Cli::parse();
    if cli.jobs > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.jobs)
            .build_global()
        {
            eprintln!("error: config: {e}");
            return ExitCode::FAILURE;
        }
    }
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            // one line, stable "error: <category>:" prefix for scripts
            let text = err.to_string().replace('\n', " ");
            let category = err.category();
            let detail = text
                .strip_prefix(&format!("{category}: "))
                .unwrap_or(&text);
            eprintln!("error: {category}: {detail}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            config,
            through,
            out,
        } => cmd_run(&config, through, out, cli.seed),
        Command::SweepOmegaHigh {
            config,
            from,
            to,
            steps,
            out,
        } => cmd_sweep(&config, from, to, steps, &out, cli.seed),
        Command::Compare { designs, out } => cmd_compare(&designs, out, cli.seed),
    }
}

fn cmd_run(config: &Path, through: Stage, out: PathBuf, seed: Option<u64>) -> Result<()> {
    let cfg = ProjectConfig::load(config)?;
    let opts = RunOptions {
        out_dir: out,
        through,
        seed,
    };
    let run = run_pipeline(&cfg, &opts)?;
    for s in &run.statuses {
        println!(
            "{:<10} {:<8} {:>7.2} s",
            s.stage.name(),
            if s.skipped { "skipped" } else { "ran" },
            s.seconds
        );
    }
    if let Some(summary) = &run.summary {
        println!(
            "\ndesign {}: mass {:.4} kg, peak acceleration {:.3} m/s^2 at {:.1} N per axis",
            summary.name, summary.mass_kg, summary.peak_acceleration, summary.force_budget_n
        );
    }
    if let Some(report) = &run.loop_report {
        println!();
        print!("{}", comparison_table(std::slice::from_ref(report)));
    }
    println!("\nartifacts in {}", run.out_dir.display());
    Ok(())
}

fn cmd_sweep(
    config: &Path,
    from: f64,
    to: f64,
    steps: usize,
    out: &Path,
    seed: Option<u64>,
) -> Result<()> {
    let mut cfg = ProjectConfig::load(config)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    let sweep_dir = out.join("sweep");
    let art = sweep_omega_high(&cfg, from, to, steps, &sweep_dir)?;
    println!("{:>14} {:>10} {:>9}", "omega_high_hz", "mass_kg", "feasible");
    for p in &art.points {
        println!(
            "{:>14.2} {:>10} {:>9}",
            p.omega_high_hz,
            p.mass_kg.map_or_else(|| "-".to_string(), |m| format!("{m:.4}")),
            p.feasible
        );
    }
    println!("\nartifacts in {}", sweep_dir.display());
    Ok(())
}

fn cmd_compare(designs: &[PathBuf], out: PathBuf, seed: Option<u64>) -> Result<()> {
    let cfgs = designs
        .iter()
        .map(|p| ProjectConfig::load(p))
        .collect::<Result<Vec<_>>>()?;
    let opts = RunOptions {
        out_dir: out.clone(),
        through: Stage::Report,
        seed,
    };
    let outcome = compare_designs(&cfgs, &opts)?;
    print!("{}", outcome.table);
    println!();
    for d in &outcome.trade.designs {
        println!(
            "{}: mass {:.4} kg, peak acceleration {:.3} m/s^2",
            d.name, d.mass_kg, d.peak_acceleration
        );
    }
    println!("\nartifacts in {}", out.join("compare").display());
    Ok(())
}
