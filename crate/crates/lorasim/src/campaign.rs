//! Replication and sweep orchestration.
//!
//! Replications are fully isolated runs: each gets its own seed derived from
//! (master seed, replication index) and its own world, so they can execute
//! in parallel without sharing state. Results are collected in replication
//! order, keeping outputs deterministic regardless of thread timing.

use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

use crate::config::{ConfigError, SimConfig};
use crate::metrics::{compute_metrics, MetricsReport, OutcomeLedger};
use crate::output;
use crate::rng::{derive_seed, StreamPurpose, WORLD_OWNER};
use crate::scenario::{build_world, BuildError, DeviceSummary};
use crate::time::SimTime;

pub struct RunResult {
    pub seed: u64,
    pub cell_radius_m: f64,
    pub metrics: MetricsReport,
    /// Full logs, kept only when requested (they dwarf the metrics).
    pub ledger: Option<OutcomeLedger>,
    pub device_summaries: Option<Vec<DeviceSummary>>,
}

/// Seed of replication `rep` under a campaign master seed.
pub fn replication_seed(master_seed: u64, rep: u32) -> u64 {
    derive_seed(master_seed, WORLD_OWNER ^ u64::from(rep), StreamPurpose::Replication)
}

/// Execute one run and compute its metrics over [warmup, duration).
pub fn run_single(cfg: &SimConfig, seed: u64, keep_logs: bool) -> Result<RunResult, BuildError> {
    let built = build_world(cfg, seed)?;
    let cell_radius_m = built.cell_radius_m;
    let device_summaries = keep_logs.then_some(built.device_summaries);
    let ledger = built.world.run_until(SimTime::ZERO + cfg.sim_duration);
    let metrics = compute_metrics(
        &ledger,
        SimTime::ZERO + cfg.warmup,
        SimTime::ZERO + cfg.sim_duration,
    );
    Ok(RunResult {
        seed,
        cell_radius_m,
        metrics,
        ledger: keep_logs.then_some(ledger),
        device_summaries,
    })
}

/// Run `replications` isolated replications in parallel, in index order.
pub fn run_replications(
    cfg: &SimConfig,
    replications: u32,
    keep_logs: bool,
) -> Result<Vec<RunResult>, BuildError> {
    (0..replications)
        .into_par_iter()
        .map(|rep| run_single(cfg, replication_seed(cfg.master_seed, rep), keep_logs))
        .collect()
}

/// Mean and 95% normal-approximation confidence half-width.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Stat {
    pub mean: f64,
    pub half_width: f64,
}

impl Stat {
    pub fn from_values(values: &[f64]) -> Stat {
        let n = values.len();
        if n == 0 {
            return Stat::default();
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        if n < 2 {
            return Stat { mean, half_width: 0.0 };
        }
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n as f64 - 1.0);
        Stat { mean, half_width: 1.96 * (var / n as f64).sqrt() }
    }

    /// Do the confidence intervals of two stats overlap?
    pub fn overlaps(&self, other: &Stat) -> bool {
        (self.mean - other.mean).abs() <= self.half_width + other.half_width
    }
}

/// Across-replication aggregation of the headline metrics.
#[derive(Debug, Clone, Default)]
pub struct AggregateReport {
    pub replications: u32,
    pub ulpdr: Stat,
    pub ulpdr_confirmed: Stat,
    pub ulpdr_unconfirmed: Stat,
    pub cpsr: Stat,
    pub avg_rx1: Stat,
    pub avg_rx2: Stat,
}

pub fn aggregate(reports: &[MetricsReport]) -> AggregateReport {
    let collect = |f: &dyn Fn(&MetricsReport) -> f64| -> Stat {
        Stat::from_values(&reports.iter().map(|r| f(r)).collect::<Vec<_>>())
    };
    AggregateReport {
        replications: reports.len() as u32,
        ulpdr: collect(&|r| r.ulpdr()),
        ulpdr_confirmed: collect(&|r| r.ulpdr_confirmed()),
        ulpdr_unconfirmed: collect(&|r| r.ulpdr_unconfirmed()),
        cpsr: collect(&|r| r.cpsr()),
        avg_rx1: collect(&|r| r.avg_rx1_per_confirmed),
        avg_rx2: collect(&|r| r.avg_rx2_per_confirmed),
    }
}

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Build(#[from] BuildError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl RunnerError {
    /// Process exit code: 2 for configuration problems (including worlds
    /// that cannot be built), 1 for I/O failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunnerError::Config(_) | RunnerError::Build(_) => 2,
            RunnerError::Io(_) => 1,
        }
    }
}

/// Run all replications of one configuration and write the full output
/// tree: header, per-replication logs, metrics and aggregate tables.
pub fn simulate_to_dir(cfg: &SimConfig, out: &Path) -> Result<(), RunnerError> {
    output::write_run_header(out, cfg)?;
    let results = run_replications(cfg, cfg.replications, true)?;
    output::write_replication_logs(out, &results)?;

    let mut metrics_file = fs::File::create(out.join("metrics.csv"))?;
    writeln!(metrics_file, "{}", output::METRICS_HEADER)?;
    for (rep, result) in results.iter().enumerate() {
        writeln!(
            metrics_file,
            "{}",
            output::metrics_row("single", "-", rep as u32, result.seed, &result.metrics)
        )?;
    }

    let reports: Vec<MetricsReport> = results.iter().map(|r| r.metrics.clone()).collect();
    let mut aggregate_file = fs::File::create(out.join("aggregate.csv"))?;
    writeln!(aggregate_file, "{}", output::AGGREGATE_HEADER)?;
    writeln!(aggregate_file, "{}", output::aggregate_row("single", "-", &aggregate(&reports)))?;
    Ok(())
}

/// Run the `[sweep]` block: metrics and aggregate rows per point. Points
/// that fail are recorded in `failures.txt` and the sweep continues.
pub fn sweep_to_dir(cfg: &SimConfig, out: &Path) -> Result<(), RunnerError> {
    let sweep = cfg
        .sweep
        .clone()
        .ok_or_else(|| ConfigError::Invalid("sweep requires a [sweep] block".into()))?;
    output::write_run_header(out, cfg)?;

    let mut metrics_file = fs::File::create(out.join("metrics.csv"))?;
    writeln!(metrics_file, "{}", output::METRICS_HEADER)?;
    let mut aggregate_file = fs::File::create(out.join("aggregate.csv"))?;
    writeln!(aggregate_file, "{}", output::AGGREGATE_HEADER)?;
    let mut failures = Vec::new();

    for point in &sweep.points {
        let label = point.label();
        let outcome = point
            .apply(cfg)
            .map_err(RunnerError::from)
            .and_then(|pcfg| Ok(run_replications(&pcfg, pcfg.replications, false)?));
        match outcome {
            Ok(results) => {
                for (rep, result) in results.iter().enumerate() {
                    writeln!(
                        metrics_file,
                        "{}",
                        output::metrics_row(
                            &label,
                            &point.axis_value(),
                            rep as u32,
                            result.seed,
                            &result.metrics
                        )
                    )?;
                }
                let reports: Vec<MetricsReport> =
                    results.iter().map(|r| r.metrics.clone()).collect();
                writeln!(
                    aggregate_file,
                    "{}",
                    output::aggregate_row(&label, &point.axis_value(), &aggregate(&reports))
                )?;
            }
            Err(err) => failures.push(format!("{label}: {err}")),
        }
    }
    if !failures.is_empty() {
        fs::write(out.join("failures.txt"), failures.join("\n") + "\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{default_config, TrafficModel};
    use crate::time::SimDuration;

    #[test]
    fn stat_of_constant_series_has_zero_width() {
        let s = Stat::from_values(&[0.5, 0.5, 0.5]);
        assert_eq!(s.mean, 0.5);
        assert_eq!(s.half_width, 0.0);
    }

    #[test]
    fn replication_seeds_differ() {
        let a = replication_seed(1, 0);
        let b = replication_seed(1, 1);
        let c = replication_seed(2, 0);
        assert_ne!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn replications_are_ordered_and_deterministic() {
        let mut cfg = default_config();
        cfg.n_devices = 30;
        cfg.cell_radius_m = Some(800.0);
        cfg.traffic = TrafficModel::AggregateLambda(0.2);
        cfg.sim_duration = SimDuration::from_secs(2_000);
        cfg.warmup = SimDuration::from_secs(200);
        let a = run_replications(&cfg, 3, false).unwrap();
        let b = run_replications(&cfg, 3, false).unwrap();
        assert_eq!(a.len(), 3);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.seed, y.seed);
            assert_eq!(x.metrics, y.metrics);
        }
        // Different replications explore different randomness.
        assert_ne!(a[0].metrics.generated(), 0);
        assert_ne!(a[0].seed, a[1].seed);
    }
}
