//! Campaign execution: per-entry reports, the summary table and traces.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use vform_core::game::{run_game, GameConfig, RunRecord};
use vform_core::smc::{estimate, run_seed, SmcPlan, SmcReport};
use vform_core::trace::{NoTrace, StepRecord};

use crate::config::{Campaign, Entry, GameKind};

pub const SUMMARY_FILE: &str = "summary.csv";
pub const SUMMARY_COLUMNS: [&str; 11] = [
    "name",
    "game",
    "B",
    "R",
    "M",
    "h_max",
    "m",
    "samples",
    "win_rate",
    "mean_steps_to_v",
    "mean_avg_horizon",
];

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Worker threads for the SMC runs.
    pub jobs: usize,
    /// Write JSONL traces for the first `k` runs of every entry.
    pub trace: Option<usize>,
    /// Replaces every entry's sample count.
    pub samples: Option<u64>,
    /// Replaces every entry's master seed.
    pub seed: Option<u64>,
}

/// Contents of `<name>-report.json`. Holds no timing data, so equal inputs
/// give identical files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub name: String,
    pub entry: Entry,
    pub master_seed: u64,
    pub report: SmcReport,
}

/// One row of `summary.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub name: String,
    pub game: String,
    #[serde(rename = "B")]
    pub birds: usize,
    #[serde(rename = "R")]
    pub r: usize,
    #[serde(rename = "M")]
    pub magnitude: Option<f64>,
    pub h_max: usize,
    pub m: usize,
    pub samples: u64,
    pub win_rate: f64,
    pub mean_steps_to_v: Option<f64>,
    pub mean_avg_horizon: Option<f64>,
}

pub fn report_path(out: &Path, name: &str) -> PathBuf {
    out.join(format!("{name}-report.json"))
}

pub fn trace_path(out: &Path, name: &str, index: u64) -> PathBuf {
    out.join(format!("{name}-trace-{index}.jsonl"))
}

/// Applies the command-line overrides to an entry.
pub fn effective_entry(entry: &Entry, options: &RunOptions) -> Entry {
    let mut entry = entry.clone();
    if let Some(n) = options.samples {
        entry.samples = Some(n);
    }
    if let Some(seed) = options.seed {
        entry.seed = seed;
    }
    entry
}

pub fn write_trace(path: &Path, records: &[StepRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Opens `summary.csv` for appending, writing the header if the file is new
/// or empty.
fn open_summary(out: &Path) -> Result<csv::Writer<File>> {
    let path = out.join(SUMMARY_FILE);
    let fresh = fs::metadata(&path).map(|m| m.len() == 0).unwrap_or(true);
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .with_context(|| format!("opening {}", path.display()))?;
    let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    if fresh {
        writer.write_record(SUMMARY_COLUMNS)?;
        writer.flush()?;
    }
    Ok(writer)
}

fn summary_row(entry: &Entry, game: &GameConfig, report: &SmcReport) -> SummaryRow {
    let displaced = matches!(entry.game, GameKind::Rdg | GameKind::Ampc);
    SummaryRow {
        name: entry.name().to_string(),
        game: entry.game.as_str().to_string(),
        birds: game.bird_count,
        r: game.attack.r(),
        magnitude: displaced.then_some(entry.magnitude),
        h_max: entry.h_max,
        m: entry.m,
        samples: report.samples,
        win_rate: report.estimate,
        mean_steps_to_v: report.mean_steps_to_v,
        mean_avg_horizon: report.mean_avg_horizon,
    }
}

/// Runs one entry and returns its report; traces of the first `trace` runs
/// are collected on the side.
pub fn run_entry(
    entry: &Entry,
    options: &RunOptions,
) -> Result<(SmcReport, GameConfig, SmcPlan, Vec<(u64, Vec<StepRecord>)>)> {
    let game = entry.game_config()?;
    let mut plan = entry.plan()?;
    plan.parallelism = options.jobs.max(1);
    let traced = options.trace.unwrap_or(0) as u64;
    let traced_seeds: HashMap<u64, u64> =
        (0..traced.min(plan.sample_count)).map(|i| (run_seed(plan.master_seed, i), i)).collect();
    let traces = Mutex::new(Vec::new());
    let report = estimate(
        |seed| -> vform_core::Result<RunRecord> {
            let config = game.with_seed(seed);
            match traced_seeds.get(&seed) {
                Some(&index) => {
                    let mut records = Vec::new();
                    let record = run_game(&config, &mut records)?;
                    traces.lock().unwrap_or_else(|e| e.into_inner()).push((index, records));
                    Ok(record)
                }
                None => run_game(&config, &mut NoTrace),
            }
        },
        &plan,
    )
    .with_context(|| format!("entry {}", entry.name()))?;
    let mut traces = traces.into_inner().unwrap_or_else(|e| e.into_inner());
    traces.sort_by_key(|(i, _)| *i);
    Ok((report, game, plan, traces))
}

/// Runs every entry, writing `<name>-report.json`, one `summary.csv` row
/// per entry and, if requested, traces. Stops at the first failed run.
pub fn run_campaign(campaign: &Campaign, out: &Path, options: &RunOptions) -> Result<Vec<SummaryRow>> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut summary = open_summary(out)?;
    let mut rows = Vec::new();
    for entry in &campaign.entries {
        let entry = effective_entry(entry, options);
        let (report, game, plan, traces) = run_entry(&entry, options)?;
        let name = entry.name().to_string();
        for (index, records) in &traces {
            write_trace(&trace_path(out, &name, *index), records)?;
        }
        let row = summary_row(&entry, &game, &report);
        let file = ReportFile { name: name.clone(), entry, master_seed: plan.master_seed, report };
        let path = report_path(out, &name);
        fs::write(&path, serde_json::to_string_pretty(&file)? + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
        summary.serialize(&row)?;
        summary.flush()?;
        rows.push(row);
    }
    Ok(rows)
}
