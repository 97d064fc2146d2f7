//! Straight-line histogram update used as an oracle: brute-force nearest
//! neighbor, totals re-summed from scratch, no index.
//!
//! It consumes random draws in the documented order (insertion gate, then one
//! deletion gate per codevector in ascending id order), so it can share a
//! seed with the real implementation and be compared step by step.

#![allow(dead_code)]

use dbnn_core::{CounterRng, Gate, OchParams};

#[derive(Debug, Clone, PartialEq)]
pub struct RefEntry {
    pub id: u64,
    pub vector: Vec<f64>,
    pub count: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefOutcome {
    pub matched_id: u64,
    pub inserted_id: Option<u64>,
    pub deleted_ids: Vec<u64>,
    pub delta_count: f64,
    pub total_after: f64,
}

pub struct RefOch {
    pub params: OchParams,
    pub rng: CounterRng,
    pub entries: Vec<RefEntry>,
    next_id: u64,
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn gate(g: Gate, rng: &mut CounterRng, p: f64) -> bool {
    let u = rng.next_f64();
    match g {
        Gate::Stochastic => u < p,
        Gate::Always => true,
        Gate::Never => false,
    }
}

impl RefOch {
    pub fn new(params: OchParams) -> Self {
        Self { params, rng: CounterRng::new(params.rng_seed), entries: Vec::new(), next_id: 0 }
    }

    pub fn total(&self) -> f64 {
        let mut t = 0.0;
        for e in &self.entries {
            t += e.count;
        }
        t
    }

    fn new_id(&mut self) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        id
    }

    pub fn update(&mut self, x: &[f64], n_star: f64) -> RefOutcome {
        if self.entries.is_empty() {
            let id = self.new_id();
            self.entries.push(RefEntry { id, vector: x.to_vec(), count: n_star });
            return RefOutcome { matched_id: id, inserted_id: Some(id), deleted_ids: vec![], delta_count: n_star, total_after: n_star };
        }
        let k = self.params.k_target as f64;
        let phi = logistic(self.params.phi_logit);
        let lambda = self.params.lambda;

        let mut i = 0;
        let mut best = f64::INFINITY;
        for (j, e) in self.entries.iter().enumerate() {
            let mut d = 0.0;
            for (a, b) in x.iter().zip(&e.vector) {
                d += (a - b) * (a - b);
            }
            if d < best {
                best = d;
                i = j;
            }
        }
        let matched_id = self.entries[i].id;
        let before = self.entries[i].count;

        self.entries[i].count += n_star;
        let n = self.total();
        let f = (-lambda / n).exp();

        let mut inserted_id = None;
        let pi = self.entries[i].count / n;
        if gate(self.params.insert_gate, &mut self.rng, logistic(pi - 1.0 / k + phi)) {
            let n_i = self.entries[i].count;
            self.entries[i].count = n_i * (1.0 - f);
            let id = self.new_id();
            self.entries.push(RefEntry { id, vector: x.to_vec(), count: n_i * f });
            inserted_id = Some(id);
        }

        for e in self.entries.iter_mut() {
            e.count *= f;
        }

        let n = self.total();
        let mut delete = vec![false; self.entries.len()];
        let mut alive = self.entries.len();
        for (j, e) in self.entries.iter().enumerate() {
            let p = logistic(1.0 / k - e.count / n + phi) / k;
            if gate(self.params.delete_gate, &mut self.rng, p) && alive > 1 {
                delete[j] = true;
                alive -= 1;
            }
        }

        let floor = self.params.count_floor;
        let any_above = self.entries.iter().zip(&delete).any(|(e, &d)| !d && e.count >= floor);
        let mut keep = None;
        if !any_above {
            let mut best = f64::NEG_INFINITY;
            for (j, e) in self.entries.iter().enumerate() {
                if !delete[j] && e.count > best {
                    best = e.count;
                    keep = Some(j);
                }
            }
        }
        for (j, e) in self.entries.iter().enumerate() {
            if e.count < floor && Some(j) != keep {
                delete[j] = true;
            }
        }
        let mut deleted_ids = Vec::new();
        let mut kept = Vec::new();
        for (j, e) in self.entries.drain(..).enumerate() {
            if delete[j] {
                deleted_ids.push(e.id);
            } else {
                kept.push(e);
            }
        }
        self.entries = kept;
        for e in self.entries.iter_mut() {
            if e.count <= 0.0 {
                e.count = floor;
            }
        }

        let total_after = self.total();
        let delta_count = match self.entries.iter().find(|e| e.id == matched_id) {
            Some(e) => e.count - before,
            None => -before,
        };
        RefOutcome { matched_id, inserted_id, deleted_ids, delta_count, total_after }
    }
}
