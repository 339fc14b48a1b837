//! Statistical model checking of the controller's win probability.
//!
//! `N = ceil(4 ln(2/delta) / epsilon^2)` i.i.d. runs give an estimate within
//! `epsilon` of the true probability with confidence `1 - delta`
//! (Chernoff-Hoeffding).

use std::panic::{catch_unwind, AssertUnwindSafe};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::RunRecord;

/// `ceil(4 ln(2/delta) / epsilon^2)`.
pub fn required_samples(epsilon: f64, delta: f64) -> Result<u64> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::invalid(format!("epsilon must lie in (0, 1), got {epsilon}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid(format!("delta must lie in (0, 1), got {delta}")));
    }
    Ok((4.0 * (2.0 / delta).ln() / (epsilon * epsilon)).ceil() as u64)
}

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of run `index`: `splitmix64(master ^ splitmix64(index))`.
pub fn run_seed(master_seed: u64, index: u64) -> u64 {
    splitmix64(master_seed ^ splitmix64(index))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmcPlan {
    pub epsilon: f64,
    pub delta: f64,
    pub sample_count: u64,
    pub master_seed: u64,
    pub parallelism: usize,
}

impl SmcPlan {
    /// Plan with the sample count derived from `(epsilon, delta)`.
    pub fn derived(epsilon: f64, delta: f64, master_seed: u64) -> Result<Self> {
        Ok(SmcPlan { epsilon, delta, sample_count: required_samples(epsilon, delta)?, master_seed, parallelism: 1 })
    }

    /// Plan with an explicit sample count.
    pub fn with_samples(epsilon: f64, delta: f64, sample_count: u64, master_seed: u64) -> Result<Self> {
        let plan = SmcPlan { epsilon, delta, sample_count, master_seed, parallelism: 1 };
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        required_samples(self.epsilon, self.delta)?;
        if self.sample_count == 0 {
            return Err(Error::invalid("sample_count must be positive"));
        }
        if self.parallelism == 0 {
            return Err(Error::invalid("parallelism must be positive"));
        }
        Ok(())
    }

    /// Whether the `(epsilon, delta)` guarantee holds for this sample count.
    pub fn meets_bound(&self) -> bool {
        required_samples(self.epsilon, self.delta).is_ok_and(|n| self.sample_count >= n)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmcReport {
    /// `wins / samples`.
    pub estimate: f64,
    pub wins: u64,
    pub samples: u64,
    pub epsilon: f64,
    pub delta: f64,
    /// Mean steps to V-formation over winning runs.
    pub mean_steps_to_v: Option<f64>,
    /// Mean average horizon over winning runs that searched at least once.
    pub mean_avg_horizon: Option<f64>,
    pub run_records: Vec<RunRecord>,
}

fn panic_message(payload: Box<dyn std::any::Any + Send>) -> String {
    payload
        .downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| payload.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "panic".to_string())
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Runs `plan.sample_count` games, each seeded with [`run_seed`], on up to
/// `plan.parallelism` worker threads. Records are kept in run-index order,
/// so the report does not depend on scheduling.
pub fn estimate<F>(game_runner: F, plan: &SmcPlan) -> Result<SmcReport>
where
    F: Fn(u64) -> Result<RunRecord> + Sync,
{
    plan.validate()?;
    let run = |index: u64| -> Result<RunRecord> {
        let seed = run_seed(plan.master_seed, index);
        match catch_unwind(AssertUnwindSafe(|| game_runner(seed))) {
            Ok(Ok(record)) => Ok(record),
            Ok(Err(e)) => Err(Error::RunFailed { index, seed, message: e.to_string() }),
            Err(payload) => Err(Error::RunFailed { index, seed, message: panic_message(payload) }),
        }
    };
    let results: Vec<Result<RunRecord>> = if plan.parallelism == 1 {
        (0..plan.sample_count).map(run).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(plan.parallelism)
            .build()
            .map_err(|e| Error::invalid(format!("cannot start worker pool: {e}")))?;
        pool.install(|| (0..plan.sample_count).into_par_iter().map(run).collect())
    };
    let run_records = results.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(summarize(run_records, plan))
}

/// Aggregates finished runs (in any order) into a report.
pub fn summarize(mut run_records: Vec<RunRecord>, plan: &SmcPlan) -> SmcReport {
    let samples = run_records.len() as u64;
    let wins = run_records.iter().filter(|r| r.won).count() as u64;
    let winners = || run_records.iter().filter(|r| r.won);
    let mean_steps_to_v = mean(winners().filter_map(|r| r.steps_to_v).map(|s| s as f64));
    let mean_avg_horizon = mean(winners().filter_map(|r| r.avg_horizon));
    run_records.shrink_to_fit();
    SmcReport {
        estimate: if samples == 0 { 0.0 } else { wins as f64 / samples as f64 },
        wins,
        samples,
        epsilon: plan.epsilon,
        delta: plan.delta,
        mean_steps_to_v,
        mean_avg_horizon,
        run_records,
    }
}
