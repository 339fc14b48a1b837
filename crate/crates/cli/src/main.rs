use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use vform_core::fitness::FitnessParams;
use vform_core::game::run_game;
use vform_core::smc::{required_samples, run_seed};

use vform_cli::campaign::{effective_entry, run_campaign, trace_path, write_trace, RunOptions};
use vform_cli::config::parse_config;
use vform_cli::render::{find_step, read_trace, render_svg, RenderOptions};

#[derive(Parser)]
#[command(name = "vform", version, about = "V-formation controller-versus-attacker games")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every entry of a campaign and write reports, summary.csv and traces.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Worker threads per entry.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Write traces of the first K runs of every entry.
        #[arg(long, num_args = 0..=1, default_missing_value = "5", value_name = "K")]
        trace: Option<usize>,
        /// Override every entry's sample count.
        #[arg(long)]
        samples: Option<u64>,
        /// Override every entry's master seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print the number of runs needed for additive error EPSILON with
    /// confidence 1 - DELTA, or the per-entry sample counts of a config.
    Samples {
        #[arg(long, conflicts_with = "config")]
        epsilon: Option<f64>,
        #[arg(long, requires = "epsilon")]
        delta: Option<f64>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        samples: Option<u64>,
    },
    /// Draw one step of a JSONL trace as SVG.
    Render {
        trace: PathBuf,
        #[arg(long, default_value_t = 0)]
        step: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Take wing span and view cone from this config's entry.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        entry: Option<String>,
        #[arg(long)]
        upwash_grid: bool,
    },
    /// Re-execute a single run of an entry with tracing.
    Replay {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        entry: Option<String>,
        /// Run index within the entry; its seed is derived from the master seed.
        #[arg(long, conflicts_with = "run_seed")]
        run: Option<u64>,
        /// Explicit run seed, as reported in a run record.
        #[arg(long = "run-seed")]
        run_seed: Option<u64>,
        /// Master seed override, as for `run`.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

fn read_campaign(path: &PathBuf) -> Result<vform_cli::config::Campaign> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_config(&text).with_context(|| format!("in {}", path.display()))
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config, out, jobs, trace, samples, seed } => {
            let campaign = read_campaign(&config)?;
            let options = RunOptions { jobs, trace, samples, seed };
            for row in run_campaign(&campaign, &out, &options)? {
                println!(
                    "{}: {} wins {:.4} over {} runs",
                    row.name, row.game, row.win_rate, row.samples
                );
            }
        }
        Command::Samples { epsilon, delta, config, samples } => match (epsilon, config) {
            (Some(e), _) => println!("{}", required_samples(e, delta.unwrap_or(0.01))?),
            (None, Some(path)) => {
                let campaign = read_campaign(&path)?;
                let options = RunOptions { samples, ..Default::default() };
                for entry in &campaign.entries {
                    let plan = effective_entry(entry, &options).plan()?;
                    println!("{}\t{}", entry.name(), plan.sample_count);
                }
            }
            (None, None) => println!("{}", required_samples(0.1, 0.01)?),
        },
        Command::Render { trace, step, out, config, entry, upwash_grid } => {
            let text = fs::read_to_string(&trace).with_context(|| format!("reading {}", trace.display()))?;
            let records = read_trace(&text)?;
            let record = find_step(&records, step)?;
            let params = match config {
                Some(path) => read_campaign(&path)?.entry(entry.as_deref())?.fitness.clone(),
                None => FitnessParams::default(),
            };
            let svg = render_svg(record, &params, &RenderOptions { upwash_grid })?;
            match out {
                Some(path) => fs::write(&path, svg).with_context(|| format!("writing {}", path.display()))?,
                None => print!("{svg}"),
            }
        }
        Command::Replay { config, entry, run, run_seed: explicit, seed, out } => {
            let campaign = read_campaign(&config)?;
            let options = RunOptions { seed, ..Default::default() };
            let entry = effective_entry(campaign.entry(entry.as_deref())?, &options);
            let index = run.unwrap_or(0);
            let seed = explicit.unwrap_or_else(|| run_seed(entry.seed, index));
            let game = entry.game_config()?.with_seed(seed);
            let mut records = Vec::new();
            let record = run_game(&game, &mut records).with_context(|| format!("run with seed {seed}"))?;
            fs::create_dir_all(&out)?;
            let path = match explicit {
                Some(s) => out.join(format!("{}-seed-{s}.jsonl", entry.name())),
                None => trace_path(&out, entry.name(), index),
            };
            write_trace(&path, &records)?;
            println!("{}", serde_json::to_string_pretty(&record)?);
            eprintln!("trace written to {}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
