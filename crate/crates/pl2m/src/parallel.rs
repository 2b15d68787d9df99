//! The parallel relaxed coordinate-descent trainer.
//!
//! Features are partitioned into random blocks; all features of a block are
//! updated simultaneously under an inflated curvature `y = sum_i H_ki *
//! |X_is| * C_ki`, where the conflict weight `C_ki = sum_{s in S} |X_is|`
//! measures how much of the block lands on instance `i`. The inflation makes
//! simultaneous steps conservative enough that the objective still decreases
//! after every row, for any block size and worker count.
//!
//! Concurrency model: every phase (statistics, conflict weights, feature
//! updates, gradient refresh, prediction updates) writes either
//! worker-disjoint feature slots or worker-disjoint instance slots, with a
//! full barrier between phases. No locks, no atomics. Results are
//! deterministic for a fixed (seed, worker count) pair.

use std::ops::Range;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rayon::ThreadPool;

use crate::cd::{row_statistics_range, EpochReport, PhaseSeconds, RowHook, RowStatistics, Side};
use crate::error::{Error, Result};
use crate::loss::{self, LossKind};
use crate::model::{Dense, FactorModel, LatentState};
use crate::sparse::{FeatureMatrix, ObservationSet};

/// Disjoint feature blocks covering `0..n`, updated one block at a time.
#[derive(Debug, Clone)]
pub struct Partition {
    perm: Vec<usize>,
    block_size: usize,
}

impl Partition {
    /// Random partition: a seeded shuffle of the feature indices chunked
    /// into blocks of `block_size`.
    pub fn random(n: usize, block_size: usize, seed: u64) -> Partition {
        assert!(n >= 1 && block_size >= 1);
        let mut perm: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        perm.shuffle(&mut rng);
        Partition { perm, block_size }
    }

    /// Blocks in ascending index order; makes a block-size-1 run visit
    /// features exactly like the serial trainer.
    pub fn identity(n: usize, block_size: usize) -> Partition {
        assert!(n >= 1 && block_size >= 1);
        Partition {
            perm: (0..n).collect(),
            block_size,
        }
    }

    pub fn blocks(&self) -> impl Iterator<Item = &[usize]> {
        self.perm.chunks(self.block_size)
    }

    pub fn n_blocks(&self) -> usize {
        self.perm.len().div_ceil(self.block_size)
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    pub fn n_features(&self) -> usize {
        self.perm.len()
    }
}

/// Per-instance conflict weights of one block: `c[i] = sum_{s in S} |X_is|`.
#[derive(Debug, Clone)]
pub struct ConflictWeights {
    pub c: Vec<f64>,
}

/// Conflict weights of block `block` against the feature matrix, dense over
/// all instances.
pub fn conflict_weights(block: &[usize], x: &FeatureMatrix) -> ConflictWeights {
    let mut c = vec![0.0; x.n_instances()];
    for &s in block {
        for (i, xv) in x.feature(s) {
            c[i] += xv.abs();
        }
    }
    ConflictWeights { c }
}

/// One relaxed block update on the query side, serial reference form.
///
/// For each feature of the block independently: `x = sum_i G_ki X_is`,
/// `y = sum_i H_ki |X_is| C_ki`, step by the thresholding rule, then refresh
/// `G_ki += sum_{s in S} X_is dP_ks H_ki`. Returns the per-feature deltas in
/// block order.
pub fn parallel_block_update(
    k: usize,
    block: &[usize],
    stats: &mut RowStatistics,
    conflicts: &ConflictWeights,
    x: &FeatureMatrix,
    model: &mut FactorModel,
) -> Vec<f64> {
    assert_eq!(stats.k, k);
    let alpha = model.hyper.alpha;
    let lambda = model.hyper.lambda;
    let own_row = model.p.row_mut(k);
    let mut deltas = vec![0.0; block.len()];
    for (slot, &s) in block.iter().enumerate() {
        let mut grad_sum = 0.0;
        let mut curv_sum = 0.0;
        for (i, xv) in x.feature(s) {
            grad_sum += stats.g[i] * xv;
            curv_sum += (stats.h[i] * xv.abs()) * conflicts.c[i];
        }
        if curv_sum + lambda <= 0.0 {
            continue;
        }
        deltas[slot] = loss::threshold_t_unchecked(grad_sum, curv_sum, own_row[s], alpha, lambda);
    }
    for (slot, &s) in block.iter().enumerate() {
        if deltas[slot] != 0.0 {
            own_row[s] += deltas[slot];
        }
    }
    // gradient refresh, the instance-parallel reduction of the epoch driver
    for (slot, &s) in block.iter().enumerate() {
        let delta = deltas[slot];
        if delta == 0.0 {
            continue;
        }
        for (i, xv) in x.feature(s) {
            stats.g[i] += (xv * delta) * stats.h[i];
        }
    }
    deltas
}

/// Shrinkage factor of a parallel step relative to the serial step:
/// `eta = (sum_i H X^2 + lambda) / (sum_i H C |X| + lambda)`. Diagnostic
/// only; 1 means no conflict, `1/|S|` means fully duplicated features.
pub fn shrinkage_eta(
    s: usize,
    stats: &RowStatistics,
    conflicts: &ConflictWeights,
    x: &FeatureMatrix,
    lambda: f64,
) -> Result<f64> {
    let mut serial = 0.0;
    let mut parallel = 0.0;
    for (i, xv) in x.feature(s) {
        serial += stats.h[i] * xv * xv;
        parallel += stats.h[i] * conflicts.c[i] * xv.abs();
    }
    let denom = parallel + lambda;
    if denom == 0.0 {
        return Err(Error::DegenerateCurvature);
    }
    Ok((serial + lambda) / denom)
}

/// Epoch-level knobs for [`pl2m_epoch`].
#[derive(Debug, Clone)]
pub struct Pl2mOptions {
    /// Target block size `|S|`.
    pub block_size: usize,
    /// Base seed; the partition is re-drawn each epoch from
    /// `seed + epoch`.
    pub seed: u64,
    /// Epoch index, used to derive the partition seed.
    pub epoch: usize,
}

impl Pl2mOptions {
    pub fn new(block_size: usize, seed: u64, epoch: usize) -> Self {
        Pl2mOptions {
            block_size,
            seed,
            epoch,
        }
    }
}

/// One epoch of the parallel trainer with per-epoch random partitions.
#[allow(clippy::too_many_arguments)]
pub fn pl2m_epoch(
    model: &mut FactorModel,
    state: &mut LatentState,
    x: &FeatureMatrix,
    z: &FeatureMatrix,
    obs: &ObservationSet,
    opts: &Pl2mOptions,
    pool: &ThreadPool,
    hook: Option<&mut RowHook<'_>>,
) -> EpochReport {
    let epoch_seed = opts.seed.wrapping_add(opts.epoch as u64);
    let part_x = Partition::random(x.n_features(), opts.block_size, epoch_seed);
    let part_z = Partition::random(
        z.n_features(),
        opts.block_size,
        epoch_seed.wrapping_add(0x9e37_79b9_7f4a_7c15),
    );
    pl2m_epoch_with_partitions(model, state, x, z, obs, &part_x, &part_z, pool, hook)
}

/// One epoch with caller-provided partitions; with identity partitions of
/// block size 1 and one worker this reproduces the serial efficient trainer
/// exactly.
#[allow(clippy::too_many_arguments)]
pub fn pl2m_epoch_with_partitions(
    model: &mut FactorModel,
    state: &mut LatentState,
    x: &FeatureMatrix,
    z: &FeatureMatrix,
    obs: &ObservationSet,
    part_x: &Partition,
    part_z: &Partition,
    pool: &ThreadPool,
    mut hook: Option<&mut RowHook<'_>>,
) -> EpochReport {
    assert_eq!(part_x.n_features(), x.n_features());
    assert_eq!(part_z.n_features(), z.n_features());
    let start = Instant::now();
    let workers = pool.current_num_threads();
    let mut ops = 0u64;
    let mut rows_updated = 0usize;

    let query_cuts = side_cuts(obs, Side::Query, workers);
    let target_cuts = side_cuts(obs, Side::Target, workers);

    let objective_before = parallel_objective(model, state, obs, &query_cuts, pool);

    let mut phases = PhaseSeconds::default();
    for side in [Side::Query, Side::Target] {
        let (feats, partition, cuts) = match side {
            Side::Query => (x, part_x, &query_cuts),
            Side::Target => (z, part_z, &target_cuts),
        };
        let build_start = Instant::now();
        let blocks = build_blocks(partition, feats, workers, pool, &mut ops);
        phases.refresh += build_start.elapsed().as_secs_f64();
        let count = match side {
            Side::Query => obs.n_queries(),
            Side::Target => obs.n_targets(),
        };
        let mut g = vec![0.0; count];
        let mut h = vec![0.0; count];
        let mut delta_latent = vec![0.0; count];
        let d = model.dim();
        let alpha = model.hyper.alpha;
        let lambda = model.hyper.lambda;
        let loss_kind = model.loss;
        let blocks_ref = &blocks;
        let q_cuts = query_cuts.as_slice();
        for k in 0..d {
            // one pool entry per row keeps the workers hot across the
            // row's phase barriers
            let own_row = match side {
                Side::Query => model.p.row_mut(k),
                Side::Target => model.q.row_mut(k),
            };
            let row_state = &mut *state;
            let g_ref = &mut g;
            let h_ref = &mut h;
            let delta_ref = &mut delta_latent;
            let (row_ops, row_phases) = pool.install(move || {
                let mut timer = Instant::now();
                let mut row_ops =
                    stats_phase(side, k, row_state, obs, loss_kind, cuts, g_ref, h_ref);
                let stats_s = timer.elapsed().as_secs_f64();
                timer = Instant::now();
                delta_ref.iter_mut().for_each(|v| *v = 0.0);
                for block in blocks_ref {
                    row_ops +=
                        block_phase(block, own_row, g_ref, &*h_ref, delta_ref, alpha, lambda);
                }
                let blocks_s = timer.elapsed().as_secs_f64();
                timer = Instant::now();
                row_ops += apply_phase(side, k, row_state, obs, delta_ref, q_cuts);
                let apply_s = timer.elapsed().as_secs_f64();
                (
                    row_ops,
                    PhaseSeconds {
                        stats: stats_s,
                        blocks: blocks_s,
                        apply: apply_s,
                        refresh: 0.0,
                    },
                )
            });
            ops += row_ops;
            phases.stats += row_phases.stats;
            phases.blocks += row_phases.blocks;
            phases.apply += row_phases.apply;
            rows_updated += 1;
            if let Some(hook) = hook.as_deref_mut() {
                hook(side, k, model);
            }
        }
        // recalculate the buffered latents of the side just updated
        let refresh_start = Instant::now();
        match side {
            Side::Query => {
                let inst_cuts = nnz_cuts(x, workers);
                refresh_latents_phase(&model.p, x, &mut state.u, &inst_cuts, pool);
            }
            Side::Target => {
                let inst_cuts = nnz_cuts(z, workers);
                refresh_latents_phase(&model.q, z, &mut state.v, &inst_cuts, pool);
            }
        }
        phases.refresh += refresh_start.elapsed().as_secs_f64();
    }

    let refresh_start = Instant::now();
    let max_drift = predictions_phase(state, obs, &query_cuts, pool);
    phases.refresh += refresh_start.elapsed().as_secs_f64();
    let objective_after = parallel_objective(model, state, obs, &query_cuts, pool);

    EpochReport {
        objective_before,
        objective_after,
        seconds: start.elapsed().as_secs_f64(),
        rows_updated,
        ops,
        max_drift,
        diverged: false,
        phase_seconds: Some(phases),
    }
}

// ---------------------------------------------------------------------------
// chunking helpers

/// Contiguous ranges with approximately equal total weight. `prefix` holds
/// cumulative weights, `prefix[0] == 0`. Ranges cover `0..n` in order; some
/// may be empty.
pub(crate) fn balanced_ranges(prefix: &[u64], parts: usize) -> Vec<Range<usize>> {
    let n = prefix.len() - 1;
    let parts = parts.max(1);
    let total = prefix[n];
    let mut ranges = Vec::with_capacity(parts);
    let mut start = 0usize;
    for c in 1..=parts {
        let end = if c == parts {
            n
        } else {
            let target = (total as u128 * c as u128 / parts as u128) as u64;
            prefix.partition_point(|&w| w < target).clamp(start, n)
        };
        ranges.push(start..end);
        start = end;
    }
    ranges
}

fn prefix_weights(n: usize, weight: impl Fn(usize) -> u64) -> Vec<u64> {
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0);
    let mut acc = 0u64;
    for i in 0..n {
        acc += weight(i);
        prefix.push(acc);
    }
    prefix
}

fn side_cuts(obs: &ObservationSet, side: Side, workers: usize) -> Vec<Range<usize>> {
    let (count, weight): (usize, Box<dyn Fn(usize) -> u64>) = match side {
        Side::Query => (
            obs.n_queries(),
            Box::new(|i| 1 + obs.query_count(i) as u64),
        ),
        Side::Target => (
            obs.n_targets(),
            Box::new(|j| 1 + obs.target_count(j) as u64),
        ),
    };
    balanced_ranges(&prefix_weights(count, weight), workers)
}

fn nnz_cuts(feats: &FeatureMatrix, workers: usize) -> Vec<Range<usize>> {
    balanced_ranges(
        &prefix_weights(feats.n_instances(), |i| 1 + feats.instance_nnz(i) as u64),
        workers,
    )
}

/// Split a slice into chunks at the given consecutive ranges.
fn split_by_ranges<'a, T>(mut data: &'a mut [T], ranges: &[Range<usize>]) -> Vec<&'a mut [T]> {
    let mut parts = Vec::with_capacity(ranges.len());
    let mut consumed = 0;
    for r in ranges {
        debug_assert_eq!(r.start, consumed);
        let (head, tail) = data.split_at_mut(r.end - consumed);
        parts.push(head);
        data = tail;
        consumed = r.end;
    }
    parts
}

// ---------------------------------------------------------------------------
// per-block index structures

/// One feature block reorganized for the four phases: a feature-major view
/// for the update phase and an instance-major view for the conflict and
/// refresh phases. Conflict weights do not depend on the latent row, so they
/// are computed once per epoch.
struct BlockData {
    feats: Vec<usize>,
    col_offsets: Vec<usize>,
    /// Feature-major entries: (global instance, position in `inst_ids`, value).
    col_entries: Vec<(u32, u32, f64)>,
    inst_ids: Vec<usize>,
    inst_offsets: Vec<usize>,
    /// Instance-major entries: (local feature index, value).
    inst_entries: Vec<(u32, f64)>,
    /// `sum_{s in S} |X_is|` per `inst_ids` position.
    conflict: Vec<f64>,
    feat_cuts: Vec<Range<usize>>,
    inst_cuts: Vec<Range<usize>>,
}

fn build_blocks(
    partition: &Partition,
    feats: &FeatureMatrix,
    workers: usize,
    pool: &ThreadPool,
    ops: &mut u64,
) -> Vec<BlockData> {
    let n = feats.n_features();
    // feature id -> (block, local index)
    let mut block_of = vec![(0u32, 0u32); n];
    for (b, block) in partition.blocks().enumerate() {
        for (lf, &s) in block.iter().enumerate() {
            block_of[s] = (b as u32, lf as u32);
        }
    }

    let mut blocks: Vec<BlockData> = partition
        .blocks()
        .map(|block| BlockData {
            feats: block.to_vec(),
            col_offsets: Vec::new(),
            col_entries: Vec::new(),
            inst_ids: Vec::new(),
            inst_offsets: vec![0],
            inst_entries: Vec::new(),
            conflict: Vec::new(),
            feat_cuts: Vec::new(),
            inst_cuts: Vec::new(),
        })
        .collect();

    // one instance-major sweep distributes every nonzero to its block
    for i in 0..feats.n_instances() {
        for (s, xv) in feats.instance(i) {
            let (b, lf) = block_of[s];
            let blk = &mut blocks[b as usize];
            if blk.inst_ids.last() != Some(&i) {
                blk.inst_ids.push(i);
                blk.inst_offsets.push(blk.inst_entries.len());
            }
            blk.inst_entries.push((lf, xv));
            *blk.inst_offsets.last_mut().unwrap() += 1;
        }
    }

    for blk in &mut blocks {
        // counting sort into the feature-major view
        let nf = blk.feats.len();
        let mut counts = vec![0usize; nf + 1];
        for &(lf, _) in &blk.inst_entries {
            counts[lf as usize + 1] += 1;
        }
        for t in 0..nf {
            counts[t + 1] += counts[t];
        }
        blk.col_offsets = counts.clone();
        blk.col_entries = vec![(0, 0, 0.0); blk.inst_entries.len()];
        for pos in 0..blk.inst_ids.len() {
            let i = blk.inst_ids[pos] as u32;
            for e in blk.inst_offsets[pos]..blk.inst_offsets[pos + 1] {
                let (lf, xv) = blk.inst_entries[e];
                let slot = counts[lf as usize];
                blk.col_entries[slot] = (i, pos as u32, xv);
                counts[lf as usize] += 1;
            }
        }

        blk.feat_cuts = balanced_ranges(
            &prefix_weights(nf, |t| {
                1 + (blk.col_offsets[t + 1] - blk.col_offsets[t]) as u64
            }),
            workers,
        );
        blk.inst_cuts = balanced_ranges(
            &prefix_weights(blk.inst_ids.len(), |p| {
                1 + (blk.inst_offsets[p + 1] - blk.inst_offsets[p]) as u64
            }),
            workers,
        );
    }

    // conflict weights, instance-parallel per block
    *ops += pool.install(|| {
        let mut total_ops = 0u64;
        for blk in &mut blocks {
            blk.conflict = vec![0.0; blk.inst_ids.len()];
            let inst_cuts = &blk.inst_cuts;
            let inst_offsets = &blk.inst_offsets;
            let inst_entries = &blk.inst_entries;
            let parts = split_by_ranges(&mut blk.conflict, inst_cuts);
            total_ops += parts
                .into_par_iter()
                .enumerate()
                .map(|(ci, out)| {
                    let range = inst_cuts[ci].clone();
                    let mut local = 0u64;
                    for (slot, pos) in range.enumerate() {
                        let mut acc = 0.0;
                        for &(_, xv) in &inst_entries[inst_offsets[pos]..inst_offsets[pos + 1]] {
                            acc += xv.abs();
                            local += 1;
                        }
                        out[slot] = acc;
                    }
                    local
                })
                .sum::<u64>();
        }
        total_ops
    });
    blocks
}

// ---------------------------------------------------------------------------
// phases

/// Runs inside the worker pool (callers enter it once per row).
#[allow(clippy::too_many_arguments)] // phase kernel mirroring the algorithm's inputs
fn stats_phase(
    side: Side,
    k: usize,
    state: &LatentState,
    obs: &ObservationSet,
    kind: LossKind,
    cuts: &[Range<usize>],
    g: &mut [f64],
    h: &mut [f64],
) -> u64 {
    let g_parts = split_by_ranges(g, cuts);
    let h_parts = split_by_ranges(h, cuts);
    (g_parts, h_parts)
        .into_par_iter()
        .enumerate()
        .map(|(ci, (g_chunk, h_chunk))| {
            let mut local = 0u64;
            row_statistics_range(
                side,
                k,
                state,
                obs,
                kind,
                cuts[ci].clone(),
                g_chunk,
                h_chunk,
                &mut local,
            );
            local
        })
        .sum()
}

/// Feature updates followed by the gradient refresh, both chunked. Runs
/// inside the worker pool.
fn block_phase(
    block: &BlockData,
    own_row: &mut [f64],
    g: &mut [f64],
    h: &[f64],
    delta_latent: &mut [f64],
    alpha: f64,
    lambda: f64,
) -> u64 {
    let nf = block.feats.len();
    let mut deltas = vec![0.0; nf];
    let delta_parts = split_by_ranges(&mut deltas, &block.feat_cuts);
    let row_ref: &[f64] = own_row;
    let g_ref: &[f64] = g;
    let update_ops: u64 = delta_parts
        .into_par_iter()
        .enumerate()
        .map(|(ci, out)| {
            let range = block.feat_cuts[ci].clone();
            let mut local = 0u64;
            for (slot, t) in range.enumerate() {
                let mut grad_sum = 0.0;
                let mut curv_sum = 0.0;
                for e in block.col_offsets[t]..block.col_offsets[t + 1] {
                    let (i, pos, xv) = block.col_entries[e];
                    grad_sum += g_ref[i as usize] * xv;
                    curv_sum += (h[i as usize] * xv.abs()) * block.conflict[pos as usize];
                    local += 1;
                }
                if curv_sum + lambda <= 0.0 {
                    continue;
                }
                out[slot] = loss::threshold_t_unchecked(
                    grad_sum,
                    curv_sum,
                    row_ref[block.feats[t]],
                    alpha,
                    lambda,
                );
            }
            local
        })
        .sum();

    for (t, &s) in block.feats.iter().enumerate() {
        if deltas[t] != 0.0 {
            own_row[s] += deltas[t];
        }
    }

    // instance-parallel gradient refresh and latent-delta accumulation;
    // each chunk owns a contiguous id range of g/delta_latent
    let g_cell = SlicePartition::new(g, block, &block.inst_cuts);
    let du_cell = SlicePartition::new(delta_latent, block, &block.inst_cuts);
    let refresh_ops: u64 = (g_cell.parts, du_cell.parts)
        .into_par_iter()
        .enumerate()
        .map(|(ci, ((g_off, g_chunk), (du_off, du_chunk)))| {
            let mut local = 0u64;
            for pos in block.inst_cuts[ci].clone() {
                let i = block.inst_ids[pos];
                let mut t = 0.0;
                for e in block.inst_offsets[pos]..block.inst_offsets[pos + 1] {
                    let (lf, xv) = block.inst_entries[e];
                    t += xv * deltas[lf as usize];
                    local += 1;
                }
                g_chunk[i - g_off] += t * h[i];
                du_chunk[i - du_off] += t;
            }
            local
        })
        .sum();
    update_ops + refresh_ops
}

/// Disjoint slices of a dense array covering each chunk's instance-id span.
struct SlicePartition<'a> {
    parts: Vec<(usize, &'a mut [f64])>,
}

impl<'a> SlicePartition<'a> {
    fn new(data: &'a mut [f64], block: &BlockData, cuts: &[Range<usize>]) -> SlicePartition<'a> {
        let mut parts = Vec::with_capacity(cuts.len());
        let mut data = data;
        let mut consumed = 0usize;
        for r in cuts {
            if r.is_empty() {
                parts.push((consumed, &mut [] as &mut [f64]));
                continue;
            }
            let lo = block.inst_ids[r.start];
            let hi = block.inst_ids[r.end - 1] + 1;
            debug_assert!(lo >= consumed);
            let (_, tail) = data.split_at_mut(lo - consumed);
            let (chunk, tail) = tail.split_at_mut(hi - lo);
            parts.push((lo, chunk));
            data = tail;
            consumed = hi;
        }
        SlicePartition { parts }
    }
}

/// Fold a completed row's latent deltas into the caches, chunked over
/// queries so prediction writes stay contiguous. Runs inside the worker
/// pool.
fn apply_phase(
    side: Side,
    k: usize,
    state: &mut LatentState,
    obs: &ObservationSet,
    delta: &[f64],
    query_cuts: &[Range<usize>],
) -> u64 {
    let LatentState { u, v, y_hat } = state;
    match side {
        Side::Query => {
            let v_row: &[f64] = v.row(k);
            let u_parts = split_by_ranges(u.row_mut(k), query_cuts);
            let flat_cuts: Vec<Range<usize>> = query_cuts
                .iter()
                .map(|r| flat_span(obs, r.clone()))
                .collect();
            let y_parts = split_by_ranges(y_hat, &flat_cuts);
            (u_parts, y_parts)
                .into_par_iter()
                .enumerate()
                .map(|(ci, (u_chunk, y_chunk))| {
                    let range = query_cuts[ci].clone();
                    let flat_off = flat_cuts[ci].start;
                    let mut local = 0u64;
                    for (slot, i) in range.enumerate() {
                        let du = delta[i];
                        if du == 0.0 {
                            continue;
                        }
                        u_chunk[slot] += du;
                        for (j, flat) in obs.by_query(i) {
                            y_chunk[flat - flat_off] += du * v_row[j];
                            local += 1;
                        }
                    }
                    local
                })
                .sum()
        }
        Side::Target => {
            // latent update chunked over targets
            let v_row = v.row_mut(k);
            for (j, slot) in v_row.iter_mut().enumerate() {
                let dv = delta[j];
                if dv != 0.0 {
                    *slot += dv;
                }
            }
            let u_row: &[f64] = u.row(k);
            let flat_cuts: Vec<Range<usize>> = query_cuts
                .iter()
                .map(|r| flat_span(obs, r.clone()))
                .collect();
            let y_parts = split_by_ranges(y_hat, &flat_cuts);
            y_parts
                .into_par_iter()
                .enumerate()
                .map(|(ci, y_chunk)| {
                    let range = query_cuts[ci].clone();
                    let flat_off = flat_cuts[ci].start;
                    let mut local = 0u64;
                    for i in range {
                        let ui = u_row[i];
                        if ui == 0.0 {
                            continue;
                        }
                        for (j, flat) in obs.by_query(i) {
                            let dv = delta[j];
                            if dv != 0.0 {
                                y_chunk[flat - flat_off] += ui * dv;
                            }
                            local += 1;
                        }
                    }
                    local
                })
                .sum()
        }
    }
}

fn flat_span(obs: &ObservationSet, queries: Range<usize>) -> Range<usize> {
    let start = if queries.start < obs.n_queries() {
        obs.query_range(queries.start).start
    } else {
        obs.len()
    };
    let end = if queries.end == 0 {
        0
    } else {
        obs.query_range(queries.end - 1).end
    };
    start..end.max(start)
}

/// `out = P * X`, tasks split over (row, instance-chunk) pairs.
fn refresh_latents_phase(
    p: &Dense,
    feats: &FeatureMatrix,
    out: &mut Dense,
    inst_cuts: &[Range<usize>],
    pool: &ThreadPool,
) {
    let d = out.rows();
    let cols = out.cols();
    let mut tasks: Vec<(usize, usize, &mut [f64])> = Vec::with_capacity(d * inst_cuts.len());
    for (k, row) in out.as_mut_slice().chunks_exact_mut(cols).enumerate() {
        for (ci, chunk) in split_by_ranges(row, inst_cuts).into_iter().enumerate() {
            tasks.push((k, ci, chunk));
        }
    }
    pool.install(|| {
        tasks.into_par_iter().for_each(|(k, ci, chunk)| {
            let p_row = p.row(k);
            for (slot, i) in inst_cuts[ci].clone().enumerate() {
                let mut acc = 0.0;
                for (s, xv) in feats.instance(i) {
                    acc += p_row[s] * xv;
                }
                chunk[slot] = acc;
            }
        });
    });
}

/// Recompute buffered predictions; returns the worst drift observed.
fn predictions_phase(
    state: &mut LatentState,
    obs: &ObservationSet,
    query_cuts: &[Range<usize>],
    pool: &ThreadPool,
) -> f64 {
    let LatentState { u, v, y_hat } = state;
    let d = u.rows();
    let flat_cuts: Vec<Range<usize>> = query_cuts
        .iter()
        .map(|r| flat_span(obs, r.clone()))
        .collect();
    let y_parts = split_by_ranges(y_hat, &flat_cuts);
    let u_ref: &Dense = u;
    let v_ref: &Dense = v;
    let drifts: Vec<f64> = pool.install(|| {
        y_parts
            .into_par_iter()
            .enumerate()
            .map(|(ci, y_chunk)| {
                let flat_off = flat_cuts[ci].start;
                let mut drift = 0.0f64;
                for i in query_cuts[ci].clone() {
                    for (j, flat) in obs.by_query(i) {
                        let mut acc = 0.0;
                        for k in 0..d {
                            acc += u_ref.at(k, i) * v_ref.at(k, j);
                        }
                        let slot = &mut y_chunk[flat - flat_off];
                        drift = drift.max((acc - *slot).abs());
                        *slot = acc;
                    }
                }
                drift
            })
            .collect()
    });
    drifts.into_iter().fold(0.0, f64::max)
}

/// Exact objective from the buffered predictions, with a deterministic
/// chunk-ordered reduction.
fn parallel_objective(
    model: &FactorModel,
    state: &LatentState,
    obs: &ObservationSet,
    query_cuts: &[Range<usize>],
    pool: &ThreadPool,
) -> f64 {
    let kind = model.loss;
    let flat_cuts: Vec<Range<usize>> = query_cuts
        .iter()
        .map(|r| flat_span(obs, r.clone()))
        .collect();
    let partials: Vec<f64> = pool.install(|| {
        flat_cuts
            .par_iter()
            .map(|r| {
                let mut acc = 0.0;
                for flat in r.clone() {
                    acc += loss::loss_value(kind, state.y_hat[flat], obs.values()[flat]);
                }
                acc
            })
            .collect()
    });
    partials.into_iter().sum::<f64>() + model.penalty()
}

/// Thread pool with `workers` threads for the parallel phases.
pub fn worker_pool(workers: usize) -> ThreadPool {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .expect("failed to build worker pool")
}
