//! The `gen-synthetic` subcommand.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::Args;

use super::CliError;
use crate::error::Error;
use crate::loss::LossKind;
use crate::sparse::ObservationSet;
use crate::synth::{generate, SyntheticSpec};

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub queries: usize,
    #[arg(long)]
    pub targets: usize,
    #[arg(long = "x-features")]
    pub x_features: usize,
    #[arg(long = "z-features")]
    pub z_features: usize,
    /// Latent dimension of the planted model.
    #[arg(long, default_value_t = 8)]
    pub dim: usize,
    /// Nonzero features per instance.
    #[arg(long)]
    pub nnz: usize,
    #[arg(long)]
    pub observations: usize,
    /// Extra held-out pairs written to test.txt.
    #[arg(long = "test-observations", default_value_t = 0)]
    pub test_observations: usize,
    /// square | logistic
    #[arg(long, default_value = "square")]
    pub loss: String,
    /// Gaussian label noise (square loss).
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Directory for x.txt, z.txt, train.txt, optional test.txt, truth.txt.
    #[arg(long = "out-dir")]
    pub out_dir: PathBuf,
}

pub fn cmd_gen_synthetic(args: &GenArgs) -> Result<(), CliError> {
    let loss = LossKind::parse(&args.loss)
        .ok_or_else(|| CliError::Usage(format!("unknown loss {:?}", args.loss)))?;
    let spec = SyntheticSpec {
        n_queries: args.queries,
        n_targets: args.targets,
        n_query_features: args.x_features,
        n_target_features: args.z_features,
        dim: args.dim,
        nnz_per_instance: args.nnz,
        n_observations: args.observations,
        n_test_observations: args.test_observations,
        loss,
        noise: args.noise,
        seed: args.seed,
    };
    let data = generate(&spec)?;

    std::fs::create_dir_all(&args.out_dir).map_err(|e| Error::io(&args.out_dir, e))?;
    data.x.write_to_path(args.out_dir.join("x.txt"))?;
    data.z.write_to_path(args.out_dir.join("z.txt"))?;
    write_observations(&data.train, &args.out_dir.join("train.txt"))?;
    if args.test_observations > 0 {
        write_observations(&data.test, &args.out_dir.join("test.txt"))?;
    }
    data.truth.save(args.out_dir.join("truth.txt"))?;
    Ok(())
}

pub(crate) fn write_observations(obs: &ObservationSet, path: &Path) -> Result<(), CliError> {
    let mut out =
        std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    for i in 0..obs.n_queries() {
        for (j, flat) in obs.by_query(i) {
            writeln!(out, "{i} {j} {}", obs.values()[flat]).map_err(|e| Error::io(path, e))?;
        }
    }
    Ok(())
}
