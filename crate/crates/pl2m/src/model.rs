//! The factorization model: transformation matrices `P` (d x n) and `Q`
//! (d x m), cached latents `U = P*X`, `V = Q*Z`, and buffered predictions
//! over the observed pairs.
//!
//! Matrices are stored row-major by latent dimension so that a row-k pass
//! touches contiguous memory. Buffered predictions are kept up to date once
//! per completed row via [`LatentState::apply_query_row_delta`] /
//! [`LatentState::apply_target_row_delta`] and fully recomputed once per
//! epoch to cancel float drift.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::loss::{self, Hyperparameters, LossKind};
use crate::sparse::{FeatureMatrix, ObservationSet};

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Dense {
    pub fn zeros(rows: usize, cols: usize) -> Dense {
        Dense {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Dense {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        assert!(rows.iter().all(|row| row.len() == c));
        Dense {
            rows: r,
            cols: c,
            data: rows.into_iter().flatten().collect(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, k: usize) -> &[f64] {
        &self.data[k * self.cols..(k + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.data[k * self.cols..(k + 1) * self.cols]
    }

    #[inline]
    pub fn at(&self, k: usize, i: usize) -> f64 {
        self.data[k * self.cols + i]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Column `i` gathered into a fresh vector (rows-many entries).
    pub fn column(&self, i: usize) -> Vec<f64> {
        (0..self.rows).map(|k| self.at(k, i)).collect()
    }

    pub fn max_abs_diff(&self, other: &Dense) -> f64 {
        assert_eq!(self.rows, other.rows);
        assert_eq!(self.cols, other.cols);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Parameters and hyperparameters of the matching model.
#[derive(Debug, Clone)]
pub struct FactorModel {
    /// d x n map from query features to the latent space.
    pub p: Dense,
    /// d x m map from target features to the latent space.
    pub q: Dense,
    pub hyper: Hyperparameters,
    pub loss: LossKind,
}

impl FactorModel {
    /// Random initialization, entries i.i.d. uniform in `[-0.01, 0.01]`,
    /// deterministic for a given seed.
    pub fn init(
        dims: (usize, usize, usize),
        hyper: Hyperparameters,
        loss: LossKind,
        seed: u64,
    ) -> FactorModel {
        let (d, n, m) = dims;
        assert!(d >= 1 && n >= 1 && m >= 1);
        assert_eq!(hyper.dim, d, "hyperparameter dim must match model dim");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Dense::zeros(d, n);
        for v in p.as_mut_slice() {
            *v = rng.random_range(-0.01..=0.01);
        }
        let mut q = Dense::zeros(d, m);
        for v in q.as_mut_slice() {
            *v = rng.random_range(-0.01..=0.01);
        }
        FactorModel { p, q, hyper, loss }
    }

    pub fn from_parts(p: Dense, q: Dense, hyper: Hyperparameters, loss: LossKind) -> FactorModel {
        assert_eq!(p.rows(), hyper.dim);
        assert_eq!(q.rows(), hyper.dim);
        FactorModel { p, q, hyper, loss }
    }

    pub fn dim(&self) -> usize {
        self.p.rows()
    }

    pub fn n_query_features(&self) -> usize {
        self.p.cols()
    }

    pub fn n_target_features(&self) -> usize {
        self.q.cols()
    }

    /// Elastic-net penalty of both parameter matrices.
    pub fn penalty(&self) -> f64 {
        loss::elastic_net_penalty(self.p.as_slice(), self.hyper.alpha, self.hyper.lambda)
            + loss::elastic_net_penalty(self.q.as_slice(), self.hyper.alpha, self.hyper.lambda)
    }

    /// Write the textual model format: header `FMF <d> <n> <m> <loss>`,
    /// then the rows of `P`, then the rows of `Q`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out =
            std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
        let write = |out: &mut dyn Write| -> std::io::Result<()> {
            writeln!(
                out,
                "FMF {} {} {} {}",
                self.dim(),
                self.p.cols(),
                self.q.cols(),
                self.loss
            )?;
            for matrix in [&self.p, &self.q] {
                for k in 0..matrix.rows() {
                    let mut line = String::new();
                    for (idx, v) in matrix.row(k).iter().enumerate() {
                        if idx > 0 {
                            line.push(' ');
                        }
                        line.push_str(&format!("{v}"));
                    }
                    writeln!(out, "{line}")?;
                }
            }
            Ok(())
        };
        write(&mut out).map_err(|e| Error::io(path, e))
    }

    /// Read the format written by [`FactorModel::save`]. The stored loss is
    /// restored; `alpha`/`lambda` are not part of the file and default to 0.
    pub fn load(path: impl AsRef<Path>) -> Result<FactorModel> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(file).lines().enumerate();

        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::parse(path, 1, "empty model file"))?;
        let header = header.map_err(|e| Error::io(path, e))?;
        let tokens: Vec<&str> = header.split_whitespace().collect();
        if tokens.len() != 5 || tokens[0] != "FMF" {
            return Err(Error::parse(path, 1, "expected header FMF <d> <n> <m> <loss>"));
        }
        let d: usize = tokens[1]
            .parse()
            .map_err(|_| Error::parse(path, 1, "bad dimension"))?;
        let n: usize = tokens[2]
            .parse()
            .map_err(|_| Error::parse(path, 1, "bad feature count"))?;
        let m: usize = tokens[3]
            .parse()
            .map_err(|_| Error::parse(path, 1, "bad feature count"))?;
        let loss = LossKind::parse(tokens[4])
            .ok_or_else(|| Error::parse(path, 1, format!("unknown loss {:?}", tokens[4])))?;

        let mut read_matrix = |rows: usize, cols: usize| -> Result<Dense> {
            let mut m = Dense::zeros(rows, cols);
            for k in 0..rows {
                let (idx, line) = lines
                    .next()
                    .ok_or_else(|| Error::parse(path, 0, "truncated model file"))?;
                let line = line.map_err(|e| Error::io(path, e))?;
                let row = m.row_mut(k);
                let mut count = 0usize;
                for (slot, tok) in line.split_whitespace().enumerate() {
                    if slot >= cols {
                        return Err(Error::parse(path, idx + 1, "too many entries in row"));
                    }
                    let v: f64 = tok
                        .parse()
                        .map_err(|_| Error::parse(path, idx + 1, format!("bad float {tok:?}")))?;
                    if !v.is_finite() {
                        return Err(Error::parse(path, idx + 1, "non-finite entry"));
                    }
                    row[slot] = v;
                    count += 1;
                }
                if count != cols {
                    return Err(Error::parse(
                        path,
                        idx + 1,
                        format!("expected {cols} entries, got {count}"),
                    ));
                }
            }
            Ok(m)
        };

        let p = read_matrix(d, n)?;
        let q = read_matrix(d, m)?;
        Ok(FactorModel {
            p,
            q,
            hyper: Hyperparameters::new(0.0, 0.0, d),
            loss,
        })
    }
}

/// Cached latents and buffered predictions.
///
/// After a refresh, `u = P*X`, `v = Q*Z`, and `y_hat[flat] = U_i . V_j` for
/// every observed pair. Between refreshes the buffers are maintained
/// incrementally by the trainers.
#[derive(Debug, Clone)]
pub struct LatentState {
    /// d x q cached query latents.
    pub u: Dense,
    /// d x p cached target latents.
    pub v: Dense,
    /// Buffered predictions, aligned with the observation set's flat order.
    pub y_hat: Vec<f64>,
}

impl LatentState {
    /// Build a fresh state from the current parameters.
    pub fn refresh(
        model: &FactorModel,
        x: &FeatureMatrix,
        z: &FeatureMatrix,
        obs: &ObservationSet,
    ) -> Result<LatentState> {
        let mut state = LatentState {
            u: Dense::zeros(model.dim(), x.n_instances()),
            v: Dense::zeros(model.dim(), z.n_instances()),
            y_hat: vec![0.0; obs.len()],
        };
        state.recompute(model, x, z, obs)?;
        Ok(state)
    }

    /// Recompute `u`, `v`, and `y_hat` exactly from the parameters.
    pub fn recompute(
        &mut self,
        model: &FactorModel,
        x: &FeatureMatrix,
        z: &FeatureMatrix,
        obs: &ObservationSet,
    ) -> Result<()> {
        compute_latents_into(&model.p, x, &mut self.u)?;
        compute_latents_into(&model.q, z, &mut self.v)?;
        if obs.n_queries() != x.n_instances() {
            return Err(Error::DimensionMismatch {
                what: "observation queries",
                expected: x.n_instances(),
                got: obs.n_queries(),
            });
        }
        if obs.n_targets() != z.n_instances() {
            return Err(Error::DimensionMismatch {
                what: "observation targets",
                expected: z.n_instances(),
                got: obs.n_targets(),
            });
        }
        let d = model.dim();
        for i in 0..obs.n_queries() {
            for (j, flat) in obs.by_query(i) {
                let mut acc = 0.0;
                for k in 0..d {
                    acc += self.u.at(k, i) * self.v.at(k, j);
                }
                self.y_hat[flat] = acc;
            }
        }
        Ok(())
    }

    /// Fold a completed row-k change on the query side into the caches:
    /// `U_ki += delta_u[i]` and `y_hat_ij += delta_u[i] * V_kj`.
    pub fn apply_query_row_delta(&mut self, k: usize, delta_u: &[f64], obs: &ObservationSet) {
        let LatentState { u, v, y_hat } = self;
        let u_row = u.row_mut(k);
        let v_row = v.row(k);
        debug_assert_eq!(delta_u.len(), u_row.len());
        for (i, &du) in delta_u.iter().enumerate() {
            if du == 0.0 {
                continue;
            }
            u_row[i] += du;
            for (j, flat) in obs.by_query(i) {
                y_hat[flat] += du * v_row[j];
            }
        }
    }

    /// Mirror of [`LatentState::apply_query_row_delta`] for the target side:
    /// `V_kj += delta_v[j]` and `y_hat_ij += U_ki * delta_v[j]`.
    pub fn apply_target_row_delta(&mut self, k: usize, delta_v: &[f64], obs: &ObservationSet) {
        let LatentState { u, v, y_hat } = self;
        let v_row = v.row_mut(k);
        let u_row = u.row(k);
        for (j, &dv) in delta_v.iter().enumerate() {
            if dv != 0.0 {
                v_row[j] += dv;
            }
        }
        for (i, &ui) in u_row.iter().enumerate().take(obs.n_queries()) {
            if ui == 0.0 {
                continue;
            }
            for (j, flat) in obs.by_query(i) {
                let dv = delta_v[j];
                if dv != 0.0 {
                    y_hat[flat] += ui * dv;
                }
            }
        }
    }
}

/// `U = P * X` over the nonzero entries of `X`, written into `out` (d x q).
pub fn compute_latents_into(p: &Dense, x: &FeatureMatrix, out: &mut Dense) -> Result<()> {
    if p.cols() != x.n_features() {
        return Err(Error::DimensionMismatch {
            what: "latent map columns vs features",
            expected: x.n_features(),
            got: p.cols(),
        });
    }
    assert_eq!(out.rows(), p.rows());
    assert_eq!(out.cols(), x.n_instances());
    let d = p.rows();
    for k in 0..d {
        let p_row = p.row(k);
        let out_row = out.row_mut(k);
        for (i, slot) in out_row.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (s, xv) in x.instance(i) {
                acc += p_row[s] * xv;
            }
            *slot = acc;
        }
    }
    Ok(())
}

/// `U = P * X` as a fresh matrix.
pub fn compute_latents(p: &Dense, x: &FeatureMatrix) -> Result<Dense> {
    let mut out = Dense::zeros(p.rows(), x.n_instances());
    compute_latents_into(p, x, &mut out)?;
    Ok(out)
}

/// Inner product of two latent vectors.
pub fn predict_pair(u_i: &[f64], v_j: &[f64]) -> f64 {
    debug_assert_eq!(u_i.len(), v_j.len());
    u_i.iter().zip(v_j).map(|(a, b)| a * b).sum()
}

/// The full objective: loss summed over observed pairs plus the elastic-net
/// penalty of both parameter matrices. Requires a fresh state.
pub fn regularized_objective(
    model: &FactorModel,
    state: &LatentState,
    obs: &ObservationSet,
) -> f64 {
    observed_loss(model.loss, state, obs) + model.penalty()
}

/// Loss part of the objective, from the buffered predictions.
pub fn observed_loss(kind: LossKind, state: &LatentState, obs: &ObservationSet) -> f64 {
    state
        .y_hat
        .iter()
        .zip(obs.values())
        .map(|(&y_hat, &y)| loss::loss_value(kind, y_hat, y))
        .sum()
}

/// Objective recomputed from scratch, independent of any incrementally
/// maintained buffers. This is what monotonicity checks audit against.
pub fn exact_objective(
    model: &FactorModel,
    x: &FeatureMatrix,
    z: &FeatureMatrix,
    obs: &ObservationSet,
) -> Result<f64> {
    let state = LatentState::refresh(model, x, z, obs)?;
    Ok(regularized_objective(model, &state, obs))
}
