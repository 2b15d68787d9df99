//! The `bench` subcommand: wall-clock times, speedups, and operation
//! counters over an (algorithm x threads) matrix.

use std::io::Write;
use std::path::PathBuf;

use clap::Args;

use super::train::Algorithm;
use super::{load_features_or_identity, scan_observation_dims, CliError};
use crate::cd::{efficient_cd_epoch, naive_cd_epoch};
use crate::hogwild::{hogwild_epoch, SgdConfig};
use crate::loss::{Hyperparameters, LossKind};
use crate::model::{FactorModel, LatentState};
use crate::parallel::{pl2m_epoch, worker_pool, Pl2mOptions};
use crate::sparse::ObservationSet;

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Query feature file; identity when omitted.
    #[arg(long)]
    pub x: Option<PathBuf>,
    /// Target feature file; identity when omitted.
    #[arg(long)]
    pub z: Option<PathBuf>,
    #[arg(long)]
    pub train: PathBuf,
    /// Comma-separated algorithms to time.
    #[arg(long, default_value = "efficient,pl2m", value_delimiter = ',')]
    pub algorithms: Vec<String>,
    /// Comma-separated worker counts (parallel algorithms only).
    #[arg(long, default_value = "1", value_delimiter = ',')]
    pub threads: Vec<usize>,
    #[arg(long, default_value_t = 3)]
    pub epochs: usize,
    #[arg(long, default_value_t = 16)]
    pub dim: usize,
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,
    #[arg(long, default_value = "square")]
    pub loss: String,
    #[arg(long = "block-size", default_value_t = 500)]
    pub block_size: usize,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn cmd_bench(args: &BenchArgs) -> Result<(), CliError> {
    let loss = LossKind::parse(&args.loss)
        .ok_or_else(|| CliError::Usage(format!("unknown loss {:?}", args.loss)))?;
    let algorithms: Vec<Algorithm> = args
        .algorithms
        .iter()
        .map(|raw| {
            Algorithm::parse(raw)
                .ok_or_else(|| CliError::Usage(format!("unknown algorithm {raw:?}")))
        })
        .collect::<Result<_, _>>()?;
    if args.epochs == 0 {
        return Err(CliError::Usage("bench needs at least one epoch".into()));
    }

    let (scan_q, scan_p) = if args.x.is_none() || args.z.is_none() {
        scan_observation_dims(&args.train)?
    } else {
        (0, 0)
    };
    let x = load_features_or_identity(&args.x, scan_q, "query")?;
    let z = load_features_or_identity(&args.z, scan_p, "target")?;
    let obs = ObservationSet::load(&args.train, x.n_instances(), z.n_instances())?;
    let hyper = Hyperparameters::new(args.alpha, args.lambda, args.dim);

    let mut cells = Vec::new();
    for &algorithm in &algorithms {
        let thread_counts: Vec<usize> = if algorithm.is_parallel() {
            args.threads.clone()
        } else {
            vec![1]
        };
        for &threads in &thread_counts {
            let mut model = FactorModel::init(
                (args.dim, x.n_features(), z.n_features()),
                hyper,
                loss,
                args.seed,
            );
            let mut state = LatentState::refresh(&model, &x, &z, &obs)?;
            let pool = worker_pool(threads);
            let mut epoch_seconds = Vec::with_capacity(args.epochs);
            let mut ops_per_epoch = Vec::with_capacity(args.epochs);
            let mut phase_seconds = Vec::new();
            let mut final_objective = f64::NAN;
            for epoch in 0..args.epochs {
                let report = match algorithm {
                    Algorithm::Naive => {
                        naive_cd_epoch(&mut model, &mut state, &x, &z, &obs, None)
                    }
                    Algorithm::Efficient => {
                        efficient_cd_epoch(&mut model, &mut state, &x, &z, &obs, None)
                    }
                    Algorithm::Pl2m => pl2m_epoch(
                        &mut model,
                        &mut state,
                        &x,
                        &z,
                        &obs,
                        &Pl2mOptions::new(args.block_size, args.seed, epoch),
                        &pool,
                        None,
                    ),
                    Algorithm::Hogwild => {
                        let sgd =
                            SgdConfig::new(args.lr, args.alpha, args.lambda, args.epochs, args.seed);
                        hogwild_epoch(&mut model, &x, &z, &obs, &sgd, epoch, threads)
                    }
                };
                epoch_seconds.push(report.seconds);
                ops_per_epoch.push(report.ops);
                if let Some(p) = report.phase_seconds {
                    phase_seconds.push(p);
                }
                final_objective = report.objective_after;
            }
            let mean = epoch_seconds.iter().sum::<f64>() / epoch_seconds.len() as f64;
            let mut sorted = epoch_seconds.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let median = sorted[sorted.len() / 2];
            cells.push(Cell {
                algorithm,
                threads,
                epoch_seconds,
                mean_seconds: mean,
                median_seconds: median,
                ops_per_epoch,
                phase_seconds,
                final_objective,
            });
        }
    }

    let report = render(&cells);
    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    match &args.out {
        Some(path) => {
            let mut f = std::fs::File::create(path)
                .map_err(|e| CliError::Data(format!("cannot create {}: {e}", path.display())))?;
            writeln!(f, "{text}").map_err(|e| CliError::Data(e.to_string()))?;
        }
        None => println!("{text}"),
    }
    Ok(())
}

struct Cell {
    algorithm: Algorithm,
    threads: usize,
    epoch_seconds: Vec<f64>,
    mean_seconds: f64,
    median_seconds: f64,
    ops_per_epoch: Vec<u64>,
    phase_seconds: Vec<crate::cd::PhaseSeconds>,
    final_objective: f64,
}

fn render(cells: &[Cell]) -> serde_json::Value {
    // speedups compare medians so one stalled epoch cannot skew a cell
    let baseline = |algorithm: Algorithm| -> Option<f64> {
        cells
            .iter()
            .find(|c| c.algorithm == algorithm && c.threads == 1)
            .map(|c| c.median_seconds)
    };
    let rendered: Vec<serde_json::Value> = cells
        .iter()
        .map(|c| {
            let speedup = baseline(c.algorithm).map(|base| base / c.median_seconds);
            let phases: Vec<serde_json::Value> = c
                .phase_seconds
                .iter()
                .map(|p| {
                    serde_json::json!({
                        "stats": p.stats,
                        "blocks": p.blocks,
                        "apply": p.apply,
                        "refresh": p.refresh,
                    })
                })
                .collect();
            let mut cell = serde_json::json!({
                "algorithm": c.algorithm.as_str(),
                "threads": c.threads,
                "epoch_seconds": c.epoch_seconds,
                "mean_seconds": c.mean_seconds,
                "median_seconds": c.median_seconds,
                "speedup_vs_1": speedup,
                "ops_per_epoch": c.ops_per_epoch,
                "final_objective": c.final_objective,
            });
            if !phases.is_empty() {
                cell["phase_seconds"] = serde_json::Value::Array(phases);
            }
            cell
        })
        .collect();
    serde_json::json!({ "cells": rendered })
}
