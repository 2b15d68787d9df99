//! Sparse feature matrices with dual-orientation access, and the observed
//! query-target triples.
//!
//! Both structures are immutable after construction and safe to share across
//! worker threads. [`FeatureMatrix`] keeps the same nonzero set in
//! instance-major and feature-major order; trainers pick whichever
//! orientation makes a sum contiguous.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Sparse matrix of instance features, stored in both orientations.
///
/// Entry `(i, s, v)` means instance `i` has value `v` for feature `s`.
/// Explicit zeros are dropped at build time; all sums over the matrix
/// implicitly skip them.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    n_features: usize,
    n_instances: usize,
    inst_offsets: Vec<usize>,
    inst_feature_ids: Vec<usize>,
    inst_values: Vec<f64>,
    feat_offsets: Vec<usize>,
    feat_instance_ids: Vec<usize>,
    feat_values: Vec<f64>,
}

impl FeatureMatrix {
    /// Build from `(instance, feature, value)` triplets.
    ///
    /// Rejects out-of-range ids, duplicate `(instance, feature)` pairs, and
    /// non-finite values. Explicit zeros are dropped.
    pub fn from_triplets(
        entries: &[(usize, usize, f64)],
        n_instances: usize,
        n_features: usize,
    ) -> Result<FeatureMatrix> {
        let mut triples: Vec<(usize, usize, f64)> = Vec::with_capacity(entries.len());
        for &(i, s, v) in entries {
            if i >= n_instances {
                return Err(Error::IdOutOfRange {
                    what: "instance",
                    id: i,
                    bound: n_instances,
                });
            }
            if s >= n_features {
                return Err(Error::IdOutOfRange {
                    what: "feature",
                    id: s,
                    bound: n_features,
                });
            }
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    what: "feature value",
                });
            }
            if v != 0.0 {
                triples.push((i, s, v));
            }
        }
        triples.sort_unstable_by_key(|&(i, s, _)| (i, s));
        for pair in triples.windows(2) {
            if pair[0].0 == pair[1].0 && pair[0].1 == pair[1].1 {
                return Err(Error::DuplicateEntry {
                    row: pair[0].0,
                    col: pair[0].1,
                });
            }
        }
        Ok(Self::from_sorted(triples, n_instances, n_features))
    }

    /// `triples` must be sorted by (instance, feature), deduplicated, with
    /// all ids in range and no zeros.
    fn from_sorted(
        triples: Vec<(usize, usize, f64)>,
        n_instances: usize,
        n_features: usize,
    ) -> FeatureMatrix {
        let nnz = triples.len();
        let mut inst_offsets = vec![0usize; n_instances + 1];
        let mut inst_feature_ids = Vec::with_capacity(nnz);
        let mut inst_values = Vec::with_capacity(nnz);
        for &(i, s, v) in &triples {
            inst_offsets[i + 1] += 1;
            inst_feature_ids.push(s);
            inst_values.push(v);
        }
        for i in 0..n_instances {
            inst_offsets[i + 1] += inst_offsets[i];
        }

        // transpose via counting sort on feature id
        let mut feat_offsets = vec![0usize; n_features + 1];
        for &(_, s, _) in &triples {
            feat_offsets[s + 1] += 1;
        }
        for s in 0..n_features {
            feat_offsets[s + 1] += feat_offsets[s];
        }
        let mut cursor = feat_offsets.clone();
        let mut feat_instance_ids = vec![0usize; nnz];
        let mut feat_values = vec![0.0f64; nnz];
        for &(i, s, v) in &triples {
            let slot = cursor[s];
            feat_instance_ids[slot] = i;
            feat_values[slot] = v;
            cursor[s] += 1;
        }

        FeatureMatrix {
            n_features,
            n_instances,
            inst_offsets,
            inst_feature_ids,
            inst_values,
            feat_offsets,
            feat_instance_ids,
            feat_values,
        }
    }

    /// The `n x n` identity, used when a domain has no informative features
    /// and the model degenerates to plain matrix factorization.
    pub fn identity(n: usize) -> FeatureMatrix {
        assert!(n >= 1, "identity matrix needs n >= 1");
        let triples: Vec<(usize, usize, f64)> = (0..n).map(|i| (i, i, 1.0)).collect();
        Self::from_sorted(triples, n, n)
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_instances(&self) -> usize {
        self.n_instances
    }

    pub fn nnz(&self) -> usize {
        self.inst_values.len()
    }

    /// Nonzero `(feature, value)` pairs of one instance, ascending by feature.
    pub fn instance(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.inst_offsets[i]..self.inst_offsets[i + 1];
        self.inst_feature_ids[range.clone()]
            .iter()
            .copied()
            .zip(self.inst_values[range].iter().copied())
    }

    /// Nonzero `(instance, value)` pairs of one feature, ascending by instance.
    pub fn feature(&self, s: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.feat_offsets[s]..self.feat_offsets[s + 1];
        self.feat_instance_ids[range.clone()]
            .iter()
            .copied()
            .zip(self.feat_values[range].iter().copied())
    }

    pub fn instance_nnz(&self, i: usize) -> usize {
        self.inst_offsets[i + 1] - self.inst_offsets[i]
    }

    pub fn feature_nnz(&self, s: usize) -> usize {
        self.feat_offsets[s + 1] - self.feat_offsets[s]
    }

    /// All triples in instance-major order.
    pub fn triples(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n_instances).flat_map(move |i| self.instance(i).map(move |(s, v)| (i, s, v)))
    }

    /// Parse the textual feature format: one instance per line,
    /// `<instance_id> <fid>:<value> ...`, feature ids strictly increasing
    /// within a line. Dimensions are inferred from the largest ids seen.
    pub fn load(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let reader = BufReader::new(file);

        let mut rows: Vec<(usize, Vec<(usize, f64)>)> = Vec::new();
        let mut n_features = 0usize;
        let mut n_instances = 0usize;
        for (idx, line) in reader.lines().enumerate() {
            let lineno = idx + 1;
            let line = line.map_err(|e| Error::io(path, e))?;
            let mut tokens = line.split_whitespace();
            let Some(id_tok) = tokens.next() else {
                continue; // blank line
            };
            let instance: usize = id_tok
                .parse()
                .map_err(|_| Error::parse(path, lineno, format!("bad instance id {id_tok:?}")))?;
            let mut entries: Vec<(usize, f64)> = Vec::new();
            let mut prev_fid: Option<usize> = None;
            for tok in tokens {
                let (fid_tok, val_tok) = tok.split_once(':').ok_or_else(|| {
                    Error::parse(path, lineno, format!("expected <fid>:<value>, got {tok:?}"))
                })?;
                let fid: usize = fid_tok.parse().map_err(|_| {
                    Error::parse(path, lineno, format!("bad feature id {fid_tok:?}"))
                })?;
                let value: f64 = val_tok
                    .parse()
                    .map_err(|_| Error::parse(path, lineno, format!("bad value {val_tok:?}")))?;
                if !value.is_finite() {
                    return Err(Error::parse(path, lineno, "non-finite feature value"));
                }
                if let Some(prev) = prev_fid {
                    if fid <= prev {
                        return Err(Error::parse(
                            path,
                            lineno,
                            format!("non-increasing feature id, line {lineno}"),
                        ));
                    }
                }
                prev_fid = Some(fid);
                n_features = n_features.max(fid + 1);
                if value != 0.0 {
                    entries.push((fid, value));
                }
            }
            n_instances = n_instances.max(instance + 1);
            rows.push((instance, entries));
        }

        rows.sort_by_key(|&(i, _)| i);
        for pair in rows.windows(2) {
            if pair[0].0 == pair[1].0 {
                return Err(Error::Invalid(format!(
                    "{}: instance {} appears on more than one line",
                    path.display(),
                    pair[0].0
                )));
            }
        }
        let triples: Vec<(usize, usize, f64)> = rows
            .into_iter()
            .flat_map(|(i, entries)| entries.into_iter().map(move |(s, v)| (i, s, v)))
            .collect();
        Ok(Self::from_sorted(triples, n_instances, n_features))
    }

    /// Serialize in the same format [`FeatureMatrix::load`] reads, one line
    /// per instance, floats in shortest round-trip decimal form.
    pub fn write(&self, out: &mut impl Write) -> std::io::Result<()> {
        let mut line = String::new();
        for i in 0..self.n_instances {
            line.clear();
            write!(line, "{i}").unwrap();
            for (s, v) in self.instance(i) {
                write!(line, " {s}:{v}").unwrap();
            }
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    pub fn write_to_path(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut file =
            std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
        self.write(&mut file).map_err(|e| Error::io(path, e))
    }
}

/// Observed `(query, target, value)` triples with both groupings.
///
/// The query-major grouping is the storage order; the target-major grouping
/// carries, for each entry, its index into the flat query-major arrays so
/// buffered predictions can be addressed from either side.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    n_queries: usize,
    n_targets: usize,
    query_offsets: Vec<usize>,
    target_ids: Vec<usize>,
    values: Vec<f64>,
    target_offsets: Vec<usize>,
    query_ids: Vec<usize>,
    flat_index: Vec<usize>,
}

impl ObservationSet {
    pub fn from_triples(
        entries: &[(usize, usize, f64)],
        n_queries: usize,
        n_targets: usize,
    ) -> Result<ObservationSet> {
        let mut triples: Vec<(usize, usize, f64)> = Vec::with_capacity(entries.len());
        for &(i, j, v) in entries {
            if i >= n_queries {
                return Err(Error::IdOutOfRange {
                    what: "query",
                    id: i,
                    bound: n_queries,
                });
            }
            if j >= n_targets {
                return Err(Error::IdOutOfRange {
                    what: "target",
                    id: j,
                    bound: n_targets,
                });
            }
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    what: "observation value",
                });
            }
            triples.push((i, j, v));
        }
        triples.sort_unstable_by_key(|&(i, j, _)| (i, j));
        for pair in triples.windows(2) {
            if pair[0].0 == pair[1].0 && pair[0].1 == pair[1].1 {
                return Err(Error::DuplicateEntry {
                    row: pair[0].0,
                    col: pair[0].1,
                });
            }
        }

        let total = triples.len();
        let mut query_offsets = vec![0usize; n_queries + 1];
        let mut target_ids = Vec::with_capacity(total);
        let mut values = Vec::with_capacity(total);
        for &(i, j, v) in &triples {
            query_offsets[i + 1] += 1;
            target_ids.push(j);
            values.push(v);
        }
        for i in 0..n_queries {
            query_offsets[i + 1] += query_offsets[i];
        }

        let mut target_offsets = vec![0usize; n_targets + 1];
        for &(_, j, _) in &triples {
            target_offsets[j + 1] += 1;
        }
        for j in 0..n_targets {
            target_offsets[j + 1] += target_offsets[j];
        }
        let mut cursor = target_offsets.clone();
        let mut query_ids = vec![0usize; total];
        let mut flat_index = vec![0usize; total];
        for (flat, &(i, j, _)) in triples.iter().enumerate() {
            let slot = cursor[j];
            query_ids[slot] = i;
            flat_index[slot] = flat;
            cursor[j] += 1;
        }

        Ok(ObservationSet {
            n_queries,
            n_targets,
            query_offsets,
            target_ids,
            values,
            target_offsets,
            query_ids,
            flat_index,
        })
    }

    /// Parse `<query> <target> <value>` lines.
    pub fn load(path: impl AsRef<Path>, n_queries: usize, n_targets: usize) -> Result<Self> {
        let triples = read_triple_file(path.as_ref())?;
        Self::from_triples(&triples, n_queries, n_targets)
    }

    pub fn n_queries(&self) -> usize {
        self.n_queries
    }

    pub fn n_targets(&self) -> usize {
        self.n_targets
    }

    /// Number of observed pairs.
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Flat array of observed values, query-major.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `(target, flat_index)` pairs observed for one query. The flat index
    /// addresses [`ObservationSet::values`] and any buffer aligned with it.
    pub fn by_query(&self, i: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        let range = self.query_offsets[i]..self.query_offsets[i + 1];
        self.target_ids[range.clone()].iter().copied().zip(range)
    }

    /// `(query, flat_index)` pairs observed for one target.
    pub fn by_target(&self, j: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        let range = self.target_offsets[j]..self.target_offsets[j + 1];
        self.query_ids[range.clone()]
            .iter()
            .copied()
            .zip(self.flat_index[range].iter().copied())
    }

    /// Flat range of one query's entries, for slicing aligned buffers.
    pub fn query_range(&self, i: usize) -> std::ops::Range<usize> {
        self.query_offsets[i]..self.query_offsets[i + 1]
    }

    pub fn query_count(&self, i: usize) -> usize {
        self.query_offsets[i + 1] - self.query_offsets[i]
    }

    pub fn target_count(&self, j: usize) -> usize {
        self.target_offsets[j + 1] - self.target_offsets[j]
    }

    /// Check that every value lies in `[0, 1]`, required by the logistic loss.
    pub fn check_unit_labels(&self) -> Result<()> {
        for &v in &self.values {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::NonFinite {
                    what: "logistic label outside [0, 1]",
                });
            }
        }
        Ok(())
    }
}

/// Read whitespace-separated `<a> <b> <value>` triples.
pub(crate) fn read_triple_file(path: &Path) -> Result<Vec<(usize, usize, f64)>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut triples = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        let mut tokens = line.split_whitespace();
        let Some(a_tok) = tokens.next() else {
            continue;
        };
        let b_tok = tokens
            .next()
            .ok_or_else(|| Error::parse(path, lineno, "missing target id"))?;
        let v_tok = tokens
            .next()
            .ok_or_else(|| Error::parse(path, lineno, "missing value"))?;
        if tokens.next().is_some() {
            return Err(Error::parse(path, lineno, "trailing tokens"));
        }
        let a: usize = a_tok
            .parse()
            .map_err(|_| Error::parse(path, lineno, format!("bad query id {a_tok:?}")))?;
        let b: usize = b_tok
            .parse()
            .map_err(|_| Error::parse(path, lineno, format!("bad target id {b_tok:?}")))?;
        let v: f64 = v_tok
            .parse()
            .map_err(|_| Error::parse(path, lineno, format!("bad value {v_tok:?}")))?;
        triples.push((a, b, v));
    }
    Ok(triples)
}
