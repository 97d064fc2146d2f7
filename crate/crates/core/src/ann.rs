//! Nearest-neighbor index over codevectors.
//!
//! Each hash function is `h(x) = floor((a . x + b) / w)` with `a` drawn from a
//! standard normal (a 2-stable distribution) and `b` uniform in `[0, w)`.
//! Every hash function owns one table and a query probes a single bucket per
//! table; the candidate set is the union of those buckets. Small candidate
//! sets fall back to an exact linear scan, so `nearest` is total on any
//! non-empty index.
//!
//! An index may declare a split point `s` for vectors of the form
//! `x = (d, w)`. Projections are then always evaluated as
//! `a[..s] . x[..s] + a[s..] . x[s..]`, which lets [`LshIndex::nearest_split`]
//! reuse cached `a[s..] . w` terms for a fixed set of weight samples and still
//! agree bit-for-bit with [`LshIndex::nearest`] on the concatenated vector.

use std::collections::{BTreeMap, HashMap};

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::CounterRng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IndexError {
    #[error("invalid index parameters: {0}")]
    InvalidParams(String),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("id {0} is already present in the index")]
    DuplicateId(u64),
    #[error("id {0} is not present in the index")]
    UnknownId(u64),
    #[error("nearest-neighbor query on an empty index")]
    Empty,
    #[error("weight sample {0} has no cached projections")]
    UnknownWeightSample(u64),
    #[error("index was built without a data/weight split")]
    NoSplit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LshParams {
    pub num_hashes: usize,
    pub bucket_width: f64,
    pub seed: u64,
    /// Candidate sets smaller than this trigger an exact scan.
    pub exact_fallback_threshold: usize,
}

/// Histograms at or below this target size always use exact search.
pub const EXACT_SCAN_MAX_K: usize = 64;

const DEFAULT_BUCKET_WIDTH: f64 = 4.0;
const LARGE_K_FALLBACK: usize = 8;

impl LshParams {
    /// Defaults for an index expected to hold about `k_target` vectors.
    pub fn for_capacity(k_target: usize, seed: u64) -> Self {
        let log_k = (k_target.max(1) as f64).log2().ceil() as usize;
        Self {
            num_hashes: (log_k * 4).max(4),
            bucket_width: DEFAULT_BUCKET_WIDTH,
            seed,
            exact_fallback_threshold: if k_target <= EXACT_SCAN_MAX_K {
                usize::MAX
            } else {
                LARGE_K_FALLBACK
            },
        }
    }

    pub fn validate(&self) -> Result<(), IndexError> {
        if self.num_hashes == 0 {
            return Err(IndexError::InvalidParams("num_hashes must be >= 1".into()));
        }
        if !(self.bucket_width > 0.0 && self.bucket_width.is_finite()) {
            return Err(IndexError::InvalidParams(format!(
                "bucket_width must be positive and finite, got {}",
                self.bucket_width
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HashFunction {
    pub a: Vec<f64>,
    pub b: f64,
}

impl HashFunction {
    fn projection(&self, x: &[f64], split_at: Option<usize>) -> f64 {
        match split_at {
            Some(s) => dot(&self.a[..s], &x[..s]) + dot(&self.a[s..], &x[s..]),
            None => dot(&self.a, x),
        }
    }

    #[inline]
    fn bucket(&self, projection: f64, width: f64) -> i64 {
        ((projection + self.b) / width).floor() as i64
    }
}

/// Precomputed weight-side projections `a[s..] . w`, keyed by weight sample id.
#[derive(Debug, Clone, Default)]
pub struct SplitProjectionCache {
    samples: HashMap<u64, CachedSample>,
}

#[derive(Debug, Clone)]
struct CachedSample {
    weights: Vec<f64>,
    projections: Vec<f64>,
}

impl SplitProjectionCache {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn contains(&self, sample_id: u64) -> bool {
        self.samples.contains_key(&sample_id)
    }

    /// Cached `a[s..] . w` for one hash function.
    pub fn projection(&self, hash_id: usize, sample_id: u64) -> Option<f64> {
        self.samples
            .get(&sample_id)
            .and_then(|s| s.projections.get(hash_id).copied())
    }

    pub fn weights(&self, sample_id: u64) -> Option<&[f64]> {
        self.samples.get(&sample_id).map(|s| s.weights.as_slice())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub id: u64,
    pub distance: f64,
}

#[derive(Debug, Clone)]
struct Entry {
    vector: Vec<f64>,
    keys: Vec<i64>,
}

#[derive(Debug, Clone)]
pub struct LshIndex {
    dim: usize,
    split_at: Option<usize>,
    params: LshParams,
    hashes: Vec<HashFunction>,
    tables: Vec<HashMap<i64, Vec<u64>>>,
    entries: BTreeMap<u64, Entry>,
    cache: SplitProjectionCache,
}

impl LshIndex {
    pub fn new(dim: usize, params: LshParams) -> Result<Self, IndexError> {
        Self::build(dim, None, params)
    }

    /// An index over `(data, weights)` vectors whose first `data_dim`
    /// coordinates are the data part.
    pub fn with_split(dim: usize, data_dim: usize, params: LshParams) -> Result<Self, IndexError> {
        if data_dim == 0 || data_dim >= dim {
            return Err(IndexError::InvalidParams(format!(
                "split point {data_dim} must lie strictly inside dimension {dim}"
            )));
        }
        Self::build(dim, Some(data_dim), params)
    }

    fn build(dim: usize, split_at: Option<usize>, params: LshParams) -> Result<Self, IndexError> {
        if dim == 0 {
            return Err(IndexError::InvalidParams("dimension must be >= 1".into()));
        }
        params.validate()?;
        let mut rng = CounterRng::new(params.seed);
        let hashes = (0..params.num_hashes)
            .map(|_| {
                let a = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
                let b = rng.next_f64() * params.bucket_width;
                HashFunction { a, b }
            })
            .collect();
        Ok(Self {
            dim,
            split_at,
            params,
            hashes,
            tables: vec![HashMap::new(); params.num_hashes],
            entries: BTreeMap::new(),
            cache: SplitProjectionCache::default(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn split_at(&self) -> Option<usize> {
        self.split_at
    }

    pub fn params(&self) -> &LshParams {
        &self.params
    }

    pub fn hash_functions(&self) -> &[HashFunction] {
        &self.hashes
    }

    pub fn split_cache(&self) -> &SplitProjectionCache {
        &self.cache
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, id: u64) -> bool {
        self.entries.contains_key(&id)
    }

    pub fn ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.entries.keys().copied()
    }

    pub fn vector(&self, id: u64) -> Option<&[f64]> {
        self.entries.get(&id).map(|e| e.vector.as_slice())
    }

    /// Full projection `a . x` for hash function `hash_id`.
    pub fn projection(&self, hash_id: usize, x: &[f64]) -> f64 {
        self.hashes[hash_id].projection(x, self.split_at)
    }

    /// Number of buckets, over all tables, that list `id`.
    pub fn bucket_occurrences(&self, id: u64) -> usize {
        self.tables
            .iter()
            .flat_map(|t| t.values())
            .filter(|ids| ids.contains(&id))
            .count()
    }

    fn check_dim(&self, expected: usize, actual: usize) -> Result<(), IndexError> {
        if expected != actual {
            return Err(IndexError::DimensionMismatch { expected, actual });
        }
        Ok(())
    }

    fn keys_for(&self, x: &[f64]) -> Vec<i64> {
        let w = self.params.bucket_width;
        self.hashes
            .iter()
            .map(|h| h.bucket(h.projection(x, self.split_at), w))
            .collect()
    }

    pub fn insert(&mut self, id: u64, vector: Vec<f64>) -> Result<(), IndexError> {
        self.check_dim(self.dim, vector.len())?;
        if self.entries.contains_key(&id) {
            return Err(IndexError::DuplicateId(id));
        }
        let keys = self.keys_for(&vector);
        for (table, &key) in self.tables.iter_mut().zip(&keys) {
            table.entry(key).or_default().push(id);
        }
        self.entries.insert(id, Entry { vector, keys });
        Ok(())
    }

    pub fn remove(&mut self, id: u64) -> Result<Vec<f64>, IndexError> {
        let entry = self.entries.remove(&id).ok_or(IndexError::UnknownId(id))?;
        for (table, key) in self.tables.iter_mut().zip(&entry.keys) {
            if let Some(bucket) = table.get_mut(key) {
                bucket.retain(|&x| x != id);
                if bucket.is_empty() {
                    table.remove(key);
                }
            }
        }
        Ok(entry.vector)
    }

    /// Registers a weight sample for split queries, caching `a[s..] . w` for
    /// every hash function.
    pub fn cache_weight_sample(&mut self, sample_id: u64, weights: Vec<f64>) -> Result<(), IndexError> {
        let s = self.split_at.ok_or(IndexError::NoSplit)?;
        self.check_dim(self.dim - s, weights.len())?;
        let projections = self.hashes.iter().map(|h| dot(&h.a[s..], &weights)).collect();
        self.cache
            .samples
            .insert(sample_id, CachedSample { weights, projections });
        Ok(())
    }

    pub fn nearest(&self, query: &[f64]) -> Result<Neighbor, IndexError> {
        self.check_dim(self.dim, query.len())?;
        if self.entries.is_empty() {
            return Err(IndexError::Empty);
        }
        let candidates = if self.params.exact_fallback_threshold == usize::MAX {
            Vec::new()
        } else {
            self.candidates(&self.keys_for(query))
        };
        Ok(self.pick(candidates, |v| squared_distance(query, v)))
    }

    /// Same result as [`nearest`](Self::nearest) on `concat(data, w)` where
    /// `w` is the cached weight sample `sample_id`.
    pub fn nearest_split(&self, data: &[f64], sample_id: u64) -> Result<Neighbor, IndexError> {
        let s = self.split_at.ok_or(IndexError::NoSplit)?;
        self.check_dim(s, data.len())?;
        let sample = self
            .cache
            .samples
            .get(&sample_id)
            .ok_or(IndexError::UnknownWeightSample(sample_id))?;
        if self.entries.is_empty() {
            return Err(IndexError::Empty);
        }
        let candidates = if self.params.exact_fallback_threshold == usize::MAX {
            Vec::new()
        } else {
            let w = self.params.bucket_width;
            let keys: Vec<i64> = self
                .hashes
                .iter()
                .zip(&sample.projections)
                .map(|(h, &weight_part)| h.bucket(dot(&h.a[..s], data) + weight_part, w))
                .collect();
            self.candidates(&keys)
        };
        let weights = &sample.weights;
        Ok(self.pick(candidates, |v| {
            let acc = squared_distance(data, &v[..s]);
            accumulate_squared_distance(acc, weights, &v[s..])
        }))
    }

    fn candidates(&self, keys: &[i64]) -> Vec<u64> {
        let mut out: Vec<u64> = self
            .tables
            .iter()
            .zip(keys)
            .filter_map(|(t, k)| t.get(k))
            .flatten()
            .copied()
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    fn pick(&self, candidates: Vec<u64>, dist2: impl Fn(&[f64]) -> f64) -> Neighbor {
        let exact = candidates.is_empty() || candidates.len() < self.params.exact_fallback_threshold;
        let mut best: Option<(u64, f64)> = None;
        let mut consider = |id: u64, v: &[f64]| {
            let d = dist2(v);
            // ascending id order, so strict < keeps the lowest id on ties
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((id, d));
            }
        };
        if exact {
            for (&id, e) in &self.entries {
                consider(id, &e.vector);
            }
        } else {
            for id in candidates {
                consider(id, &self.entries[&id].vector);
            }
        }
        let (id, d2) = best.expect("non-empty index");
        Neighbor { id, distance: d2.sqrt() }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |acc, (x, y)| acc + x * y)
}

#[inline]
pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    accumulate_squared_distance(0.0, a, b)
}

#[inline]
fn accumulate_squared_distance(init: f64, a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(init, |acc, (x, y)| {
        let d = x - y;
        acc + d * d
    })
}
