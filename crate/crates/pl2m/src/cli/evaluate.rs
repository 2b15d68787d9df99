//! The `evaluate` subcommand: one JSON object of held-out metrics.

use std::io::Write;
use std::path::PathBuf;

use clap::Args;

use super::train::rank_test_queries;
use super::{scan_observation_dims, CliError};
use crate::error::Error;
use crate::loss::LossKind;
use crate::metrics::{map_at_k, precision_at_k, rmse};
use crate::model::{predict_pair, FactorModel, LatentState};
use crate::sparse::{FeatureMatrix, ObservationSet};

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Query feature file; identity when omitted.
    #[arg(long)]
    pub x: Option<PathBuf>,
    /// Target feature file; identity when omitted.
    #[arg(long)]
    pub z: Option<PathBuf>,
    /// Held-out observations.
    #[arg(long)]
    pub test: PathBuf,
    /// Truncation for MAP@K (logistic loss only).
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    /// Write the JSON object here as well as to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<(), CliError> {
    let model = FactorModel::load(&args.model)?;
    let (scan_q, scan_p) = scan_observation_dims(&args.test)?;
    let x = match &args.x {
        Some(p) => FeatureMatrix::load(p)?,
        None => FeatureMatrix::identity(scan_q.max(1)),
    };
    let z = match &args.z {
        Some(p) => FeatureMatrix::load(p)?,
        None => FeatureMatrix::identity(scan_p.max(1)),
    };
    let test = ObservationSet::load(&args.test, x.n_instances(), z.n_instances())?;
    if test.is_empty() {
        return Err(CliError::Data("test observations are empty".into()));
    }
    // only the latents are needed; evaluate against an empty pair buffer
    let empty = ObservationSet::from_triples(&[], x.n_instances(), z.n_instances())?;
    let state = LatentState::refresh(&model, &x, &z, &empty)?;

    let report = match model.loss {
        LossKind::Square => {
            let mut predictions = Vec::with_capacity(test.len());
            let mut truths = Vec::with_capacity(test.len());
            for i in 0..test.n_queries() {
                let u_i = state.u.column(i);
                for (j, flat) in test.by_query(i) {
                    predictions.push(predict_pair(&u_i, &state.v.column(j)));
                    truths.push(test.values()[flat]);
                }
            }
            serde_json::json!({ "rmse": rmse(&predictions, &truths)? })
        }
        LossKind::Logistic => {
            let results = rank_test_queries(&state, &test);
            let mean_precision = |k: usize| -> f64 {
                let sum: f64 = results
                    .iter()
                    .map(|r| precision_at_k(r, k).unwrap_or(0.0))
                    .sum();
                sum / results.len() as f64
            };
            let full_depth = results
                .iter()
                .map(|r| r.ranked.len())
                .max()
                .unwrap_or(1)
                .max(1);
            serde_json::json!({
                "map": map_at_k(&results, full_depth)?,
                "p_at_1": mean_precision(1),
                "p_at_3": mean_precision(3),
                "map_at_k": map_at_k(&results, args.k)?,
            })
        }
    };

    let text = report.to_string();
    println!("{text}");
    if let Some(path) = &args.out {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        writeln!(f, "{text}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}
