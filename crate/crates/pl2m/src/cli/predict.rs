//! The `predict` subcommand: score `<query> <target>` pairs with a trained
//! model.

use std::io::{BufRead, BufReader, Write};
use std::path::PathBuf;

use clap::Args;

use super::CliError;
use crate::error::Error;
use crate::model::{compute_latents, FactorModel};
use crate::sparse::FeatureMatrix;

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Query feature file; identity when omitted.
    #[arg(long)]
    pub x: Option<PathBuf>,
    /// Target feature file; identity when omitted.
    #[arg(long)]
    pub z: Option<PathBuf>,
    /// Pair list, one `<query> <target>` per line.
    #[arg(long)]
    pub pairs: PathBuf,
    /// Output file, one `<query> <target> <score>` per line.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn cmd_predict(args: &PredictArgs) -> Result<(), CliError> {
    let model = FactorModel::load(&args.model)?;
    let pairs = read_pairs(&args.pairs)?;

    let max_q = pairs.iter().map(|p| p.0 + 1).max().unwrap_or(0);
    let max_t = pairs.iter().map(|p| p.1 + 1).max().unwrap_or(0);
    let x = match &args.x {
        Some(p) => FeatureMatrix::load(p)?,
        None => FeatureMatrix::identity(max_q.max(model.n_query_features()).max(1)),
    };
    let z = match &args.z {
        Some(p) => FeatureMatrix::load(p)?,
        None => FeatureMatrix::identity(max_t.max(model.n_target_features()).max(1)),
    };

    let u = compute_latents(&model.p, &x)?;
    let v = compute_latents(&model.q, &z)?;
    for &(i, j) in &pairs {
        if i >= x.n_instances() {
            return Err(Error::IdOutOfRange {
                what: "query",
                id: i,
                bound: x.n_instances(),
            }
            .into());
        }
        if j >= z.n_instances() {
            return Err(Error::IdOutOfRange {
                what: "target",
                id: j,
                bound: z.n_instances(),
            }
            .into());
        }
    }

    let mut out = std::io::BufWriter::new(
        std::fs::File::create(&args.out).map_err(|e| Error::io(&args.out, e))?,
    );
    let d = model.dim();
    for &(i, j) in &pairs {
        let mut score = 0.0;
        for k in 0..d {
            score += u.at(k, i) * v.at(k, j);
        }
        writeln!(out, "{i} {j} {score}").map_err(|e| Error::io(&args.out, e))?;
    }
    Ok(())
}

fn read_pairs(path: &PathBuf) -> Result<Vec<(usize, usize)>, CliError> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut pairs = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let mut tokens = line.split_whitespace();
        let Some(a) = tokens.next() else { continue };
        let b = tokens
            .next()
            .ok_or_else(|| Error::parse(path, idx + 1, "missing target id"))?;
        let i: usize = a
            .parse()
            .map_err(|_| Error::parse(path, idx + 1, format!("bad query id {a:?}")))?;
        let j: usize = b
            .parse()
            .map_err(|_| Error::parse(path, idx + 1, format!("bad target id {b:?}")))?;
        pairs.push((i, j));
    }
    Ok(pairs)
}
