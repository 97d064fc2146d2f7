//! Online codevector histogram (OCH).
//!
//! A decaying, self-resizing histogram over a vector stream. Each bin is the
//! Voronoi cell of a codevector under nearest-neighbor assignment and carries
//! a fractional count; the normalized counts `pi_i = n_i / N` approximate the
//! stream density as `p(x) ~ sum_i pi_i V(x | c_i)`.
//!
//! One update (see [`Och::update`]) runs five steps in order:
//!
//! 1. find the nearest codevector `c_i` and add the input count to `n_i`;
//! 2. with probability `sigmoid(pi_i - 1/K + phi)` split the bin: insert the
//!    input as a new codevector with count `n_i * exp(-lambda / N)` and keep
//!    `n_i * (1 - exp(-lambda / N))` on `c_i`;
//! 3. multiply every count by `exp(-lambda / N)`;
//! 4. delete each codevector with probability `sigmoid(1/K - pi_k + phi) / K`;
//! 5. drop codevectors whose count fell below `count_floor`.
//!
//! `N` is the total count right after step 1 and is used for both the gate in
//! step 2 and the decay factor of steps 2 and 3. The deletion gates of step 4
//! read `pi_k` from the counts as they stand after step 3. The gate in step 2
//! and every gate in step 4 (taken in ascending id order) consume exactly one
//! draw from the histogram's [`CounterRng`], also when a gate is overridden.
//!
//! Neither step 4 nor step 5 may empty a histogram. In step 4 a firing gate is
//! ignored while only one codevector remains; in step 5 the largest
//! codevector (lowest id on ties) is kept, and if its count underflowed to
//! zero it is reset to `count_floor`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ann::{squared_distance, IndexError, LshIndex, LshParams, Neighbor};
use crate::rng::CounterRng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OchError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("state error: the histogram is empty")]
    Empty,
    #[error("format error at byte {offset}: {reason}")]
    Format { offset: usize, reason: String },
    #[error("format error: unsupported version {found} (this build reads version {expected})")]
    Version { expected: u8, found: u8 },
    #[error(transparent)]
    Index(#[from] IndexError),
}

/// How a Bernoulli gate is resolved. Overridden gates still consume their draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Gate {
    #[default]
    Stochastic,
    Always,
    Never,
}

impl Gate {
    fn resolve(self, rng: &mut CounterRng, p: f64) -> bool {
        let fired = rng.bernoulli(p);
        match self {
            Gate::Stochastic => fired,
            Gate::Always => true,
            Gate::Never => false,
        }
    }

    fn to_byte(self) -> u8 {
        match self {
            Gate::Stochastic => 0,
            Gate::Always => 1,
            Gate::Never => 2,
        }
    }

    fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(Gate::Stochastic),
            1 => Some(Gate::Always),
            2 => Some(Gate::Never),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OchParams {
    /// Target number of codevectors, `K`.
    pub k_target: usize,
    /// Forget rate; counts decay by `exp(-lambda / N)` per update.
    pub lambda: f64,
    /// `logit(phi)`; gates use `phi = sigmoid(phi_logit)`.
    pub phi_logit: f64,
    pub count_floor: f64,
    pub rng_seed: u64,
    pub insert_gate: Gate,
    pub delete_gate: Gate,
}

pub const DEFAULT_COUNT_FLOOR: f64 = 1e-12;

impl Default for OchParams {
    fn default() -> Self {
        Self {
            k_target: 5,
            lambda: 5.0,
            phi_logit: 1.0,
            count_floor: DEFAULT_COUNT_FLOOR,
            rng_seed: 0,
            insert_gate: Gate::Stochastic,
            delete_gate: Gate::Stochastic,
        }
    }
}

impl OchParams {
    pub fn validate(&self) -> Result<(), OchError> {
        if self.k_target < 1 {
            return Err(OchError::Config("k_target must be >= 1".into()));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(OchError::Config(format!(
                "lambda must be finite and >= 0, got {}",
                self.lambda
            )));
        }
        if self.phi_logit.is_nan() {
            return Err(OchError::Config("phi_logit must not be NaN".into()));
        }
        if !(self.count_floor > 0.0 && self.count_floor.is_finite()) {
            return Err(OchError::Config(format!(
                "count_floor must be positive, got {}",
                self.count_floor
            )));
        }
        Ok(())
    }

    pub fn phi(&self) -> f64 {
        sigmoid(self.phi_logit)
    }

    /// Both gates pinned shut: the histogram only reweights existing bins.
    pub fn without_gates(self) -> Self {
        Self { insert_gate: Gate::Never, delete_gate: Gate::Never, ..self }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Codevector {
    pub id: u64,
    pub vector: Vec<f64>,
    pub count: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpdateOutcome {
    /// Nearest codevector before any insertion (the new codevector itself
    /// when the histogram was empty).
    pub matched_id: u64,
    pub inserted_id: Option<u64>,
    /// Ids removed by the deletion gates or the count floor, ascending.
    pub deleted_ids: Vec<u64>,
    /// Net change of the matched bin's count over the whole update.
    pub delta_count: f64,
    pub total_count_after: f64,
}

impl UpdateOutcome {
    /// `delta_count / total_count_after`.
    pub fn alpha(&self) -> f64 {
        self.delta_count / self.total_count_after
    }
}

#[derive(Debug, Clone)]
pub struct Och {
    dim: usize,
    params: OchParams,
    entries: Vec<Codevector>,
    total_count: f64,
    next_id: u64,
    index: LshIndex,
    rng: CounterRng,
}

const INDEX_SEED_SALT: u64 = 0x6c73_685f_7365_6564;

impl Och {
    pub fn new(dim: usize, params: OchParams) -> Result<Self, OchError> {
        Self::check_new(dim, &params)?;
        let lsh = LshParams::for_capacity(params.k_target, params.rng_seed ^ INDEX_SEED_SALT);
        Self::with_index(dim, params, LshIndex::new(dim, lsh)?)
    }

    /// A histogram over `(data, weights)` vectors with `data_dim` data
    /// coordinates, searchable through [`update_split`](Self::update_split).
    pub fn with_split(dim: usize, data_dim: usize, params: OchParams) -> Result<Self, OchError> {
        Self::check_new(dim, &params)?;
        let lsh = LshParams::for_capacity(params.k_target, params.rng_seed ^ INDEX_SEED_SALT);
        Self::with_index(dim, params, LshIndex::with_split(dim, data_dim, lsh)?)
    }

    pub fn with_index_params(dim: usize, params: OchParams, lsh: LshParams) -> Result<Self, OchError> {
        Self::check_new(dim, &params)?;
        Self::with_index(dim, params, LshIndex::new(dim, lsh)?)
    }

    fn check_new(dim: usize, params: &OchParams) -> Result<(), OchError> {
        if dim == 0 {
            return Err(OchError::Config("dimension must be >= 1".into()));
        }
        params.validate()
    }

    fn with_index(dim: usize, params: OchParams, index: LshIndex) -> Result<Self, OchError> {
        Ok(Self {
            dim,
            params,
            entries: Vec::new(),
            total_count: 0.0,
            next_id: 0,
            index,
            rng: CounterRng::new(params.rng_seed),
        })
    }

    /// A histogram seeded with explicit `(vector, count)` bins, ids assigned
    /// in order.
    pub fn from_bins(dim: usize, params: OchParams, bins: Vec<(Vec<f64>, f64)>) -> Result<Self, OchError> {
        let mut och = Self::new(dim, params)?;
        for (vector, count) in bins {
            och.check_input(vector.len(), count)?;
            och.insert_entry(vector, count)?;
        }
        och.total_count = och.sum_counts();
        Ok(och)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn params(&self) -> &OchParams {
        &self.params
    }

    pub fn set_params(&mut self, params: OchParams) -> Result<(), OchError> {
        params.validate()?;
        self.params = params;
        Ok(())
    }

    /// Entries in ascending id order.
    pub fn entries(&self) -> &[Codevector] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total_count(&self) -> f64 {
        self.total_count
    }

    pub fn get(&self, id: u64) -> Option<&Codevector> {
        self.position(id).map(|p| &self.entries[p])
    }

    pub fn contains(&self, id: u64) -> bool {
        self.position(id).is_some()
    }

    pub fn index(&self) -> &LshIndex {
        &self.index
    }

    pub fn rng(&self) -> &CounterRng {
        &self.rng
    }

    /// `(id, pi_i)` pairs in ascending id order.
    pub fn weights(&self) -> impl Iterator<Item = (u64, f64)> + '_ {
        let n = self.total_count;
        self.entries.iter().map(move |e| (e.id, e.count / n))
    }

    fn position(&self, id: u64) -> Option<usize> {
        self.entries.binary_search_by_key(&id, |e| e.id).ok()
    }

    fn sum_counts(&self) -> f64 {
        self.entries.iter().fold(0.0, |acc, e| acc + e.count)
    }

    fn check_input(&self, len: usize, count: f64) -> Result<(), OchError> {
        if len != self.dim {
            return Err(OchError::Input(format!(
                "dimension mismatch: expected {}, got {len}",
                self.dim
            )));
        }
        if !(count > 0.0 && count.is_finite()) {
            return Err(OchError::Input(format!("input count must be positive, got {count}")));
        }
        Ok(())
    }

    /// Feeds one input vector with the given count through the update.
    pub fn update(&mut self, input: &[f64], count: f64) -> Result<UpdateOutcome, OchError> {
        let gate = self.params.insert_gate;
        self.update_gated(input, count, gate)
    }

    /// As [`update`](Self::update) with the insertion gate overridden for this
    /// update only.
    pub fn update_gated(&mut self, input: &[f64], count: f64, insert_gate: Gate) -> Result<UpdateOutcome, OchError> {
        if input.iter().any(|x| !x.is_finite()) {
            return Err(OchError::Input("input vector has non-finite entries".into()));
        }
        self.check_input(input.len(), count)?;
        let nearest = if self.entries.is_empty() {
            None
        } else {
            Some(self.index.nearest(input)?)
        };
        self.apply(input.to_vec(), count, nearest, insert_gate)
    }

    /// Registers a weight sample for [`update_split`](Self::update_split).
    pub fn register_weight_sample(&mut self, sample_id: u64, weights: Vec<f64>) -> Result<(), OchError> {
        Ok(self.index.cache_weight_sample(sample_id, weights)?)
    }

    /// Updates with `concat(data, w)` where `w` is a registered weight sample.
    /// The nearest-neighbor step uses the cached weight-side projections.
    pub fn update_split(&mut self, data: &[f64], sample_id: u64, count: f64) -> Result<UpdateOutcome, OchError> {
        if data.iter().any(|x| !x.is_finite()) {
            return Err(OchError::Input("input vector has non-finite entries".into()));
        }
        let weights = self
            .index
            .split_cache()
            .weights(sample_id)
            .ok_or(IndexError::UnknownWeightSample(sample_id))?;
        let mut input = Vec::with_capacity(self.dim);
        input.extend_from_slice(data);
        input.extend_from_slice(weights);
        self.check_input(input.len(), count)?;
        let nearest = if self.entries.is_empty() {
            None
        } else {
            Some(self.index.nearest_split(data, sample_id)?)
        };
        let gate = self.params.insert_gate;
        self.apply(input, count, nearest, gate)
    }

    fn insert_entry(&mut self, vector: Vec<f64>, count: f64) -> Result<u64, OchError> {
        let id = self.next_id;
        self.next_id += 1;
        self.index.insert(id, vector.clone())?;
        self.entries.push(Codevector { id, vector, count });
        Ok(id)
    }

    fn remove_at(&mut self, pos: usize) -> Result<u64, OchError> {
        let e = self.entries.remove(pos);
        self.index.remove(e.id)?;
        Ok(e.id)
    }

    fn apply(
        &mut self,
        input: Vec<f64>,
        count: f64,
        nearest: Option<Neighbor>,
        insert_gate: Gate,
    ) -> Result<UpdateOutcome, OchError> {
        let Some(nearest) = nearest else {
            let id = self.insert_entry(input, count)?;
            self.total_count = count;
            return Ok(UpdateOutcome {
                matched_id: id,
                inserted_id: Some(id),
                deleted_ids: Vec::new(),
                delta_count: count,
                total_count_after: count,
            });
        };

        let k_inv = 1.0 / self.params.k_target as f64;
        let phi = self.params.phi();
        let matched = nearest.id;
        let pos = self.position(matched).expect("index and entries agree");
        let before = self.entries[pos].count;

        // (1) assign
        self.entries[pos].count += count;
        let n = self.sum_counts();

        // (2) split
        let pi = self.entries[pos].count / n;
        let decay = (-self.params.lambda / n).exp();
        let mut inserted_id = None;
        if insert_gate.resolve(&mut self.rng, sigmoid(pi - k_inv + phi)) {
            let n_i = self.entries[pos].count;
            self.entries[pos].count = n_i * (1.0 - decay);
            inserted_id = Some(self.insert_entry(input, n_i * decay)?);
        }

        // (3) decay
        for e in &mut self.entries {
            e.count *= decay;
        }

        // (4) stochastic deletion
        let n = self.sum_counts();
        let delete_gate = self.params.delete_gate;
        let mut doomed = Vec::new();
        let mut remaining = self.entries.len();
        for e in &self.entries {
            let p = sigmoid(k_inv - e.count / n + phi) * k_inv;
            if delete_gate.resolve(&mut self.rng, p) && remaining > 1 {
                doomed.push(e.id);
                remaining -= 1;
            }
        }

        // (5) count floor
        let floor = self.params.count_floor;
        let survivors = self.entries.iter().filter(|e| !doomed.contains(&e.id) && e.count >= floor).count();
        let keep = if survivors == 0 {
            self.entries
                .iter()
                .filter(|e| !doomed.contains(&e.id))
                .fold(None::<&Codevector>, |best, e| match best {
                    Some(b) if b.count >= e.count => Some(b),
                    _ => Some(e),
                })
                .map(|e| e.id)
        } else {
            None
        };
        for e in &self.entries {
            if e.count < floor && Some(e.id) != keep && !doomed.contains(&e.id) {
                doomed.push(e.id);
            }
        }
        doomed.sort_unstable();

        let mut deleted_ids = Vec::with_capacity(doomed.len());
        for id in doomed {
            let p = self.position(id).expect("doomed id is live");
            deleted_ids.push(self.remove_at(p)?);
        }
        if let Some(id) = keep {
            let p = self.position(id).expect("kept id is live");
            if self.entries[p].count <= 0.0 {
                self.entries[p].count = floor;
            }
        }

        self.total_count = self.sum_counts();
        let delta_count = match self.get(matched) {
            Some(e) => e.count - before,
            None => -before,
        };
        Ok(UpdateOutcome {
            matched_id: matched,
            inserted_id,
            deleted_ids,
            delta_count,
            total_count_after: self.total_count,
        })
    }

    /// Nearest codevector to `query`, with its id and distance.
    pub fn nearest(&self, query: &[f64]) -> Result<Neighbor, OchError> {
        if self.entries.is_empty() {
            return Err(OchError::Empty);
        }
        if query.len() != self.dim {
            return Err(OchError::Input(format!(
                "dimension mismatch: expected {}, got {}",
                self.dim,
                query.len()
            )));
        }
        Ok(self.index.nearest(query)?)
    }

    /// Exact nearest codevector when only the first `prefix.len()`
    /// coordinates are compared. Ties go to the lowest id.
    pub fn nearest_on_prefix(&self, prefix: &[f64]) -> Result<Neighbor, OchError> {
        if self.entries.is_empty() {
            return Err(OchError::Empty);
        }
        if prefix.is_empty() || prefix.len() > self.dim {
            return Err(OchError::Input(format!(
                "prefix length {} out of range for dimension {}",
                prefix.len(),
                self.dim
            )));
        }
        let k = prefix.len();
        let mut best = (self.entries[0].id, f64::INFINITY);
        for e in &self.entries {
            let d = squared_distance(prefix, &e.vector[..k]);
            if d < best.1 {
                best = (e.id, d);
            }
        }
        Ok(Neighbor { id: best.0, distance: best.1.sqrt() })
    }

    /// Mass `pi_i` of the Voronoi cell containing `query`.
    ///
    /// Cell volumes are not tracked, so this is a probability mass rather
    /// than a density value.
    pub fn density(&self, query: &[f64]) -> Result<f64, OchError> {
        let n = self.nearest(query)?;
        let e = self.get(n.id).expect("index and entries agree");
        Ok(e.count / self.total_count)
    }

    /// Draws a codevector with probability `pi_i` using the histogram's own
    /// generator (one draw).
    pub fn sample(&mut self) -> Result<&Codevector, OchError> {
        let mut rng = self.rng;
        let pos = self.sample_position(&mut rng)?;
        self.rng = rng;
        Ok(&self.entries[pos])
    }

    /// Draws a codevector with an explicitly passed generator (one draw).
    pub fn sample_with(&self, rng: &mut CounterRng) -> Result<&Codevector, OchError> {
        let pos = self.sample_position(rng)?;
        Ok(&self.entries[pos])
    }

    fn sample_position(&self, rng: &mut CounterRng) -> Result<usize, OchError> {
        if self.entries.is_empty() {
            return Err(OchError::Empty);
        }
        let target = rng.next_f64() * self.total_count;
        let mut acc = 0.0;
        for (i, e) in self.entries.iter().enumerate() {
            acc += e.count;
            if target < acc {
                return Ok(i);
            }
        }
        Ok(self.entries.len() - 1)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        codec::encode(self)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, OchError> {
        codec::decode(bytes)
    }
}

/// Binary layout, all integers and floats little-endian:
///
/// ```text
/// offset  size  field
/// 0       4     magic "OCH1"
/// 4       1     format version (1)
/// 5       4     dim: u32
/// 9       8     entry count: u64
/// 17      82    params block
///               k_target u64 | lambda f64 | phi_logit f64 | count_floor f64
///               rng_seed u64 | insert_gate u8 | delete_gate u8
///               index: num_hashes u64 | bucket_width f64 | seed u64
///                      exact_fallback_threshold u64 | split_at u64 (u64::MAX = none)
/// 99      24    state: rng_counter u64 | next_id u64 | total_count f64
/// 123     ...   entries: id u64 | count f64 | vector f64 x dim
/// ```
///
/// Gates are encoded 0 = stochastic, 1 = always, 2 = never. Weight samples
/// registered for split updates are not part of the format.
pub mod codec {
    use super::*;

    pub const MAGIC: &[u8; 4] = b"OCH1";
    pub const VERSION: u8 = 1;
    pub const HEADER_LEN: usize = 123;

    pub fn encode(och: &Och) -> Vec<u8> {
        let p = &och.params;
        let lsh = och.index.params();
        let mut out = Vec::with_capacity(HEADER_LEN + och.entries.len() * (16 + 8 * och.dim));
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.extend_from_slice(&(och.dim as u32).to_le_bytes());
        out.extend_from_slice(&(och.entries.len() as u64).to_le_bytes());
        out.extend_from_slice(&(p.k_target as u64).to_le_bytes());
        out.extend_from_slice(&p.lambda.to_le_bytes());
        out.extend_from_slice(&p.phi_logit.to_le_bytes());
        out.extend_from_slice(&p.count_floor.to_le_bytes());
        out.extend_from_slice(&p.rng_seed.to_le_bytes());
        out.push(p.insert_gate.to_byte());
        out.push(p.delete_gate.to_byte());
        out.extend_from_slice(&(lsh.num_hashes as u64).to_le_bytes());
        out.extend_from_slice(&lsh.bucket_width.to_le_bytes());
        out.extend_from_slice(&lsh.seed.to_le_bytes());
        out.extend_from_slice(&usize_to_u64(lsh.exact_fallback_threshold).to_le_bytes());
        out.extend_from_slice(&och.index.split_at().map_or(u64::MAX, |s| s as u64).to_le_bytes());
        out.extend_from_slice(&och.rng.counter().to_le_bytes());
        out.extend_from_slice(&och.next_id.to_le_bytes());
        out.extend_from_slice(&och.total_count.to_le_bytes());
        debug_assert_eq!(out.len(), HEADER_LEN);
        for e in &och.entries {
            out.extend_from_slice(&e.id.to_le_bytes());
            out.extend_from_slice(&e.count.to_le_bytes());
            for x in &e.vector {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    fn usize_to_u64(x: usize) -> u64 {
        if x == usize::MAX {
            u64::MAX
        } else {
            x as u64
        }
    }

    fn u64_to_usize(x: u64) -> usize {
        if x == u64::MAX {
            usize::MAX
        } else {
            x as usize
        }
    }

    struct Reader<'a> {
        bytes: &'a [u8],
        pos: usize,
    }

    impl<'a> Reader<'a> {
        fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], OchError> {
            if self.bytes.len() - self.pos < n {
                return Err(OchError::Format {
                    offset: self.pos,
                    reason: format!("truncated while reading {what}"),
                });
            }
            let s = &self.bytes[self.pos..self.pos + n];
            self.pos += n;
            Ok(s)
        }

        fn u8(&mut self, what: &str) -> Result<u8, OchError> {
            Ok(self.take(1, what)?[0])
        }

        fn u32(&mut self, what: &str) -> Result<u32, OchError> {
            Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
        }

        fn u64(&mut self, what: &str) -> Result<u64, OchError> {
            Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
        }

        fn f64(&mut self, what: &str) -> Result<f64, OchError> {
            Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
        }

        fn gate(&mut self, what: &str) -> Result<Gate, OchError> {
            let at = self.pos;
            let b = self.u8(what)?;
            Gate::from_byte(b).ok_or_else(|| OchError::Format {
                offset: at,
                reason: format!("unknown {what} code {b}"),
            })
        }
    }

    pub fn decode(bytes: &[u8]) -> Result<Och, OchError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != MAGIC {
            return Err(OchError::Format { offset: 0, reason: "bad magic, expected \"OCH1\"".into() });
        }
        let version = r.u8("version")?;
        if version != VERSION {
            return Err(OchError::Version { expected: VERSION, found: version });
        }
        let dim = r.u32("dim")? as usize;
        let count_at = r.pos;
        let len = r.u64("entry count")?;
        let params = OchParams {
            k_target: r.u64("k_target")? as usize,
            lambda: r.f64("lambda")?,
            phi_logit: r.f64("phi_logit")?,
            count_floor: r.f64("count_floor")?,
            rng_seed: r.u64("rng_seed")?,
            insert_gate: r.gate("insert_gate")?,
            delete_gate: r.gate("delete_gate")?,
        };
        let lsh = LshParams {
            num_hashes: r.u64("num_hashes")? as usize,
            bucket_width: r.f64("bucket_width")?,
            seed: r.u64("index seed")?,
            exact_fallback_threshold: u64_to_usize(r.u64("exact_fallback_threshold")?),
        };
        let split_at = r.u64("split_at")?;
        let rng_counter = r.u64("rng counter")?;
        let next_id = r.u64("next_id")?;
        let total_at = r.pos;
        let total_count = r.f64("total_count")?;

        let config = |reason: OchError| match reason {
            OchError::Config(m) | OchError::Index(IndexError::InvalidParams(m)) => {
                OchError::Format { offset: 17, reason: format!("invalid params: {m}") }
            }
            other => other,
        };
        let index = if split_at == u64::MAX {
            LshIndex::new(dim, lsh)
        } else {
            LshIndex::with_split(dim, split_at as usize, lsh)
        }
        .map_err(|e| config(e.into()))?;
        Och::check_new(dim, &params).map_err(config)?;
        let mut och = Och::with_index(dim, params, index)?;
        och.rng = CounterRng::from_parts(params.rng_seed, rng_counter);

        let entry_size = 16 + 8 * dim;
        if (bytes.len() - r.pos) / entry_size < len as usize {
            return Err(OchError::Format {
                offset: count_at,
                reason: format!("entry count {len} exceeds the {} bytes remaining", bytes.len() - r.pos),
            });
        }
        for _ in 0..len {
            let at = r.pos;
            let id = r.u64("entry id")?;
            let count = r.f64("entry count")?;
            let vector = (0..dim).map(|_| r.f64("entry vector")).collect::<Result<Vec<_>, _>>()?;
            if och.entries.last().is_some_and(|e| e.id >= id) || id >= next_id {
                return Err(OchError::Format { offset: at, reason: format!("entry id {id} out of order") });
            }
            if !(count > 0.0 && count.is_finite()) {
                return Err(OchError::Format { offset: at + 8, reason: format!("non-positive count {count}") });
            }
            och.index.insert(id, vector.clone())?;
            och.entries.push(Codevector { id, vector, count });
        }
        if r.pos != bytes.len() {
            return Err(OchError::Format { offset: r.pos, reason: "trailing bytes".into() });
        }
        let recomputed = och.sum_counts();
        if (recomputed - total_count).abs() > 1e-9 * recomputed.abs().max(1.0) {
            return Err(OchError::Format {
                offset: total_at,
                reason: format!("total_count {total_count} disagrees with entry sum {recomputed}"),
            });
        }
        och.total_count = total_count;
        och.next_id = next_id;
        Ok(och)
    }
}
