//! The `train` subcommand.

use std::collections::HashMap;
use std::io::Write;
use std::path::PathBuf;

use clap::Args;

use super::config::{load_config, resolve, resolve_opt};
use super::{load_features_or_identity, scan_observation_dims, CliError};
use crate::cd::{efficient_cd_epoch, naive_cd_epoch, EpochReport};
use crate::hogwild::{hogwild_epoch, SgdConfig};
use crate::loss::{Hyperparameters, LossKind};
use crate::metrics::{map_at_k, rmse, RankedQueryResult};
use crate::model::{observed_loss, predict_pair, FactorModel, LatentState};
use crate::parallel::{pl2m_epoch, worker_pool, Pl2mOptions};
use crate::sparse::{FeatureMatrix, ObservationSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    Naive,
    Efficient,
    Pl2m,
    Hogwild,
}

impl Algorithm {
    pub fn parse(s: &str) -> Option<Algorithm> {
        match s {
            "naive" => Some(Algorithm::Naive),
            "efficient" => Some(Algorithm::Efficient),
            "pl2m" => Some(Algorithm::Pl2m),
            "hogwild" => Some(Algorithm::Hogwild),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Algorithm::Naive => "naive",
            Algorithm::Efficient => "efficient",
            Algorithm::Pl2m => "pl2m",
            Algorithm::Hogwild => "hogwild",
        }
    }

    pub fn is_parallel(&self) -> bool {
        matches!(self, Algorithm::Pl2m | Algorithm::Hogwild)
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Optional flat `key = value` config file; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// naive | efficient | pl2m | hogwild
    #[arg(long)]
    pub algorithm: Option<String>,
    /// square | logistic
    #[arg(long)]
    pub loss: Option<String>,
    /// Latent dimension d.
    #[arg(long)]
    pub dim: Option<usize>,
    /// l2 weight.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// l1 weight.
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Worker threads for the parallel trainers.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Parallel coordinate block size |S|.
    #[arg(long = "block-size")]
    pub block_size: Option<usize>,
    /// Learning rate (hogwild only).
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Query feature file; identity features when omitted.
    #[arg(long)]
    pub x: Option<PathBuf>,
    /// Target feature file; identity features when omitted.
    #[arg(long)]
    pub z: Option<PathBuf>,
    /// Training observations.
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Held-out observations for the per-epoch test metric.
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long = "model-out")]
    pub model_out: Option<PathBuf>,
    /// JSON-lines metrics file, one object per epoch.
    #[arg(long = "metrics-out")]
    pub metrics_out: Option<PathBuf>,
}

/// Fully resolved training configuration; defaults follow the experimental
/// setting (d = 64, lambda = 1, alpha = 0.1, block size 500).
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub algorithm: Algorithm,
    pub loss: LossKind,
    pub dim: usize,
    pub lambda: f64,
    pub alpha: f64,
    pub epochs: usize,
    pub threads: usize,
    pub block_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub x: Option<PathBuf>,
    pub z: Option<PathBuf>,
    pub train: PathBuf,
    pub test: Option<PathBuf>,
    pub model_out: Option<PathBuf>,
    pub metrics_out: Option<PathBuf>,
}

pub fn resolve_config(args: &TrainArgs) -> Result<TrainConfig, CliError> {
    let file: HashMap<String, String> = match &args.config {
        Some(path) => load_config(path)?,
        None => HashMap::new(),
    };
    let algorithm_raw = resolve(
        args.algorithm.clone(),
        &file,
        "algorithm",
        "efficient".to_string(),
    )?;
    let algorithm = Algorithm::parse(&algorithm_raw)
        .ok_or_else(|| CliError::Usage(format!("unknown algorithm {algorithm_raw:?}")))?;
    let loss_raw = resolve(args.loss.clone(), &file, "loss", "square".to_string())?;
    let loss = LossKind::parse(&loss_raw)
        .ok_or_else(|| CliError::Usage(format!("unknown loss {loss_raw:?}")))?;
    let train = resolve_opt(args.train.clone(), &file, "train")?
        .ok_or_else(|| CliError::Usage("missing --train observations".into()))?;
    Ok(TrainConfig {
        algorithm,
        loss,
        dim: resolve(args.dim, &file, "dim", 64)?,
        lambda: resolve(args.lambda, &file, "lambda", 1.0)?,
        alpha: resolve(args.alpha, &file, "alpha", 0.1)?,
        epochs: resolve(args.epochs, &file, "epochs", 10)?,
        threads: resolve(args.threads, &file, "threads", 1)?,
        block_size: resolve(args.block_size, &file, "block-size", 500)?,
        lr: resolve(args.lr, &file, "lr", 0.01)?,
        seed: resolve(args.seed, &file, "seed", 42)?,
        x: resolve_opt(args.x.clone(), &file, "x")?,
        z: resolve_opt(args.z.clone(), &file, "z")?,
        train,
        test: resolve_opt(args.test.clone(), &file, "test")?,
        model_out: resolve_opt(args.model_out.clone(), &file, "model-out")?,
        metrics_out: resolve_opt(args.metrics_out.clone(), &file, "metrics-out")?,
    })
}

pub fn cmd_train(args: &TrainArgs) -> Result<(), CliError> {
    let cfg = resolve_config(args)?;
    let (x, z, train_obs, test_obs) = load_training_data(&cfg)?;

    if cfg.dim == 0 {
        return Err(CliError::Usage("dim must be >= 1".into()));
    }
    if x.n_features() == 0 || x.n_instances() == 0 {
        return Err(CliError::Data("query feature matrix is empty".into()));
    }
    if z.n_features() == 0 || z.n_instances() == 0 {
        return Err(CliError::Data("target feature matrix is empty".into()));
    }
    if cfg.epochs > 0 && train_obs.is_empty() {
        return Err(CliError::Data("no training observations".into()));
    }

    let hyper = Hyperparameters::new(cfg.alpha, cfg.lambda, cfg.dim);
    let mut model = FactorModel::init(
        (cfg.dim, x.n_features(), z.n_features()),
        hyper,
        cfg.loss,
        cfg.seed,
    );

    let mut metrics_file = match &cfg.metrics_out {
        Some(path) => Some(std::io::BufWriter::new(
            std::fs::File::create(path)
                .map_err(|e| CliError::Data(format!("cannot create {}: {e}", path.display())))?,
        )),
        None => None,
    };

    let mut state = LatentState::refresh(&model, &x, &z, &train_obs)?;
    let pool = worker_pool(cfg.threads);
    for epoch in 0..cfg.epochs {
        let report: EpochReport = match cfg.algorithm {
            Algorithm::Naive => naive_cd_epoch(&mut model, &mut state, &x, &z, &train_obs, None),
            Algorithm::Efficient => {
                efficient_cd_epoch(&mut model, &mut state, &x, &z, &train_obs, None)
            }
            Algorithm::Pl2m => pl2m_epoch(
                &mut model,
                &mut state,
                &x,
                &z,
                &train_obs,
                &Pl2mOptions::new(cfg.block_size, cfg.seed, epoch),
                &pool,
                None,
            ),
            Algorithm::Hogwild => {
                let sgd = SgdConfig::new(cfg.lr, cfg.alpha, cfg.lambda, cfg.epochs, cfg.seed);
                let report =
                    hogwild_epoch(&mut model, &x, &z, &train_obs, &sgd, epoch, cfg.threads);
                // hogwild maintains no incremental state
                state = LatentState::refresh(&model, &x, &z, &train_obs)?;
                report
            }
        };
        if !report.objective_after.is_finite() {
            return Err(CliError::Numerical(format!(
                "objective became non-finite at epoch {epoch} (diverged: {})",
                report.diverged
            )));
        }
        let train_loss = observed_loss(cfg.loss, &state, &train_obs) / train_obs.len() as f64;
        let test_metric = test_obs
            .as_ref()
            .map(|t| test_metric(&model, &state, t))
            .transpose()?
            .flatten();
        if let Some(out) = metrics_file.as_mut() {
            let line = serde_json::json!({
                "epoch": epoch,
                "objective": report.objective_after,
                "train_loss": train_loss,
                "test_metric": test_metric,
                "seconds": report.seconds,
            });
            writeln!(out, "{line}").map_err(|e| CliError::Data(e.to_string()))?;
        }
    }

    if let Some(path) = &cfg.model_out {
        model.save(path)?;
    }
    Ok(())
}

fn load_training_data(
    cfg: &TrainConfig,
) -> Result<
    (
        FeatureMatrix,
        FeatureMatrix,
        ObservationSet,
        Option<ObservationSet>,
    ),
    CliError,
> {
    // dimensions come from the feature files when present, otherwise from
    // the ids named in the observation files
    let (scan_q, scan_p) = if cfg.x.is_none() || cfg.z.is_none() {
        let (mut q, mut p) = scan_observation_dims(&cfg.train)?;
        if let Some(test) = &cfg.test {
            let (tq, tp) = scan_observation_dims(test)?;
            q = q.max(tq);
            p = p.max(tp);
        }
        (q, p)
    } else {
        (0, 0)
    };
    let x = load_features_or_identity(&cfg.x, scan_q, "query")?;
    let z = load_features_or_identity(&cfg.z, scan_p, "target")?;
    let train_obs = ObservationSet::load(&cfg.train, x.n_instances(), z.n_instances())?;
    let test_obs = cfg
        .test
        .as_ref()
        .map(|p| ObservationSet::load(p, x.n_instances(), z.n_instances()))
        .transpose()?;
    if cfg.loss == LossKind::Logistic {
        train_obs.check_unit_labels()?;
        if let Some(t) = &test_obs {
            t.check_unit_labels()?;
        }
    }
    Ok((x, z, train_obs, test_obs))
}

/// Held-out metric: RMSE for the square loss, MAP@5 for the logistic loss
/// (relevant = label above 0.5). None when the metric is undefined, e.g. no
/// test query has a relevant target.
fn test_metric(
    model: &FactorModel,
    state: &LatentState,
    test: &ObservationSet,
) -> Result<Option<f64>, CliError> {
    if test.is_empty() {
        return Ok(None);
    }
    match model.loss {
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
            Ok(Some(rmse(&predictions, &truths)?))
        }
        LossKind::Logistic => {
            let results = rank_test_queries(state, test);
            match map_at_k(&results, 5) {
                Ok(v) => Ok(Some(v)),
                Err(crate::Error::NoRelevantTargets) => Ok(None),
                Err(e) => Err(e.into()),
            }
        }
    }
}

/// Rank each test query's candidate targets by predicted score.
pub(crate) fn rank_test_queries(
    state: &LatentState,
    test: &ObservationSet,
) -> Vec<RankedQueryResult> {
    let mut results = Vec::new();
    for i in 0..test.n_queries() {
        let mut scored = Vec::new();
        let mut relevant = std::collections::HashSet::new();
        let u_i = state.u.column(i);
        for (j, flat) in test.by_query(i) {
            scored.push((j, predict_pair(&u_i, &state.v.column(j))));
            if test.values()[flat] > 0.5 {
                relevant.insert(j);
            }
        }
        if !scored.is_empty() {
            results.push(RankedQueryResult::new(i, scored, relevant));
        }
    }
    results
}
