//! Planted-model synthetic benchmark generator.
//!
//! Plants ground-truth transformation matrices, samples sparse feature
//! matrices and a set of observed pairs, and labels the pairs from the
//! planted model: Gaussian-perturbed scores under the square loss,
//! Bernoulli draws through a sigmoid under the logistic loss. Everything is
//! deterministic for a given seed.

use std::collections::HashSet;

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::loss::{Hyperparameters, LossKind};
use crate::model::{compute_latents, predict_pair, Dense, FactorModel};
use crate::sparse::{FeatureMatrix, ObservationSet};

#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub n_queries: usize,
    pub n_targets: usize,
    pub n_query_features: usize,
    pub n_target_features: usize,
    /// Latent dimension of the planted model.
    pub dim: usize,
    /// Nonzeros sampled per instance, in both domains.
    pub nnz_per_instance: usize,
    pub n_observations: usize,
    /// Extra held-out pairs, disjoint from the training pairs.
    pub n_test_observations: usize,
    pub loss: LossKind,
    /// Square loss: Gaussian label noise std. Logistic: ignored.
    pub noise: f64,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub x: FeatureMatrix,
    pub z: FeatureMatrix,
    /// The planted ground-truth model.
    pub truth: FactorModel,
    pub train: ObservationSet,
    pub test: ObservationSet,
}

impl SyntheticSpec {
    fn validate(&self) -> Result<()> {
        if self.n_queries == 0 || self.n_targets == 0 {
            return Err(Error::Invalid("need at least one query and target".into()));
        }
        if self.dim == 0 {
            return Err(Error::Invalid("dim must be >= 1".into()));
        }
        if self.nnz_per_instance > self.n_query_features
            || self.nnz_per_instance > self.n_target_features
        {
            return Err(Error::Invalid(
                "nnz per instance exceeds the feature count".into(),
            ));
        }
        let cells = (self.n_queries as u64) * (self.n_targets as u64);
        let wanted = (self.n_observations + self.n_test_observations) as u64;
        if wanted > cells {
            return Err(Error::Invalid(format!(
                "{wanted} observations requested but only {cells} query-target cells exist"
            )));
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return Err(Error::Invalid("noise must be finite and >= 0".into()));
        }
        Ok(())
    }
}

pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let truth = plant_truth(spec, &mut rng);
    let x = sample_features(
        spec.n_queries,
        spec.n_query_features,
        spec.nnz_per_instance,
        &mut rng,
    )?;
    let z = sample_features(
        spec.n_targets,
        spec.n_target_features,
        spec.nnz_per_instance,
        &mut rng,
    )?;

    let total_pairs = spec.n_observations + spec.n_test_observations;
    let pairs = sample_pairs(spec.n_queries, spec.n_targets, total_pairs, &mut rng);

    let u = compute_latents(&truth.p, &x)?;
    let v = compute_latents(&truth.q, &z)?;
    let mut labelled: Vec<(usize, usize, f64)> = Vec::with_capacity(total_pairs);
    for &(i, j) in &pairs {
        let score = predict_pair(&u.column(i), &v.column(j));
        let value = match spec.loss {
            LossKind::Square => {
                let eps: f64 = StandardNormal.sample(&mut rng);
                score + spec.noise * eps
            }
            LossKind::Logistic => {
                let prob = 1.0 / (1.0 + (-score).exp());
                if rng.random_bool(prob) {
                    1.0
                } else {
                    0.0
                }
            }
        };
        labelled.push((i, j, value));
    }

    let (train_part, test_part) = labelled.split_at(spec.n_observations);
    let train = ObservationSet::from_triples(train_part, spec.n_queries, spec.n_targets)?;
    let test = ObservationSet::from_triples(test_part, spec.n_queries, spec.n_targets)?;

    Ok(SyntheticData {
        x,
        z,
        truth,
        train,
        test,
    })
}

fn plant_truth(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> FactorModel {
    let mut p = Dense::zeros(spec.dim, spec.n_query_features);
    for v in p.as_mut_slice() {
        *v = rng.random_range(-0.5..=0.5);
    }
    let mut q = Dense::zeros(spec.dim, spec.n_target_features);
    for v in q.as_mut_slice() {
        *v = rng.random_range(-0.5..=0.5);
    }
    FactorModel::from_parts(p, q, Hyperparameters::new(0.0, 0.0, spec.dim), spec.loss)
}

fn sample_features(
    instances: usize,
    features: usize,
    nnz: usize,
    rng: &mut ChaCha8Rng,
) -> Result<FeatureMatrix> {
    let mut triples = Vec::with_capacity(instances * nnz);
    for i in 0..instances {
        let mut ids = sample_indices(rng, features, nnz).into_vec();
        ids.sort_unstable();
        for s in ids {
            triples.push((i, s, rng.random_range(0.0..1.0)));
        }
    }
    FeatureMatrix::from_triplets(&triples, instances, features)
}

/// Uniform sample of `count` distinct query-target pairs (Floyd's
/// algorithm), then shuffled so a train/test split stays unbiased.
fn sample_pairs(
    n_queries: usize,
    n_targets: usize,
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<(usize, usize)> {
    let cells = (n_queries as u64) * (n_targets as u64);
    let mut chosen: HashSet<u64> = HashSet::with_capacity(count);
    let mut order: Vec<u64> = Vec::with_capacity(count);
    for v in (cells - count as u64)..cells {
        let t = rng.random_range(0..=v);
        if chosen.insert(t) {
            order.push(t);
        } else {
            chosen.insert(v);
            order.push(v);
        }
    }
    use rand::seq::SliceRandom;
    order.shuffle(rng);
    order
        .into_iter()
        .map(|code| {
            (
                (code / n_targets as u64) as usize,
                (code % n_targets as u64) as usize,
            )
        })
        .collect()
}
