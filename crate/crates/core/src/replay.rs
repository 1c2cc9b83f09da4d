//! Experience replay: a uniform ring buffer and a sum-tree backed
//! proportional prioritized buffer.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::Experience;
use crate::error::{DarpError, Result};

/// Complete binary tree over `capacity` leaves; every internal node holds the
/// sum (and the max) of its children.
#[derive(Debug, Clone)]
pub struct SumTree {
    capacity: usize,
    base: usize,
    sums: Vec<f64>,
    maxes: Vec<f64>,
}

impl SumTree {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "sum tree needs at least one leaf");
        let base = capacity.next_power_of_two();
        Self { capacity, base, sums: vec![0.0; 2 * base], maxes: vec![0.0; 2 * base] }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn total(&self) -> f64 {
        self.sums[1]
    }

    pub fn max(&self) -> f64 {
        self.maxes[1]
    }

    pub fn get(&self, leaf: usize) -> f64 {
        self.sums[self.base + leaf]
    }

    pub fn set(&mut self, leaf: usize, priority: f64) {
        assert!(leaf < self.capacity, "leaf {leaf} out of range");
        assert!(priority >= 0.0 && priority.is_finite(), "priority must be finite and >= 0");
        let mut node = self.base + leaf;
        self.sums[node] = priority;
        self.maxes[node] = priority;
        while node > 1 {
            node /= 2;
            let (l, r) = (2 * node, 2 * node + 1);
            self.sums[node] = self.sums[l] + self.sums[r];
            self.maxes[node] = self.maxes[l].max(self.maxes[r]);
        }
    }

    /// Leaf `i` with `sum_{k<i} p_k <= mass < sum_{k<=i} p_k`. Masses at or past
    /// the total (rounding) resolve to the last positive leaf.
    pub fn find(&self, mut mass: f64) -> usize {
        let mut node = 1;
        while node < self.base {
            let (l, r) = (2 * node, 2 * node + 1);
            if self.sums[r] <= 0.0 || (mass < self.sums[l] && self.sums[l] > 0.0) {
                node = l;
            } else {
                mass -= self.sums[l];
                node = r;
            }
        }
        node - self.base
    }

    /// Checks every internal node against its children.
    pub fn is_consistent(&self) -> bool {
        (1..self.base).all(|k| {
            let s = self.sums[2 * k] + self.sums[2 * k + 1];
            let m = self.maxes[2 * k].max(self.maxes[2 * k + 1]);
            self.sums[k] == s && self.maxes[k] == m
        })
    }
}

/// A sampled experience with its buffer slot and importance weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sampled {
    pub index: usize,
    pub experience: Experience,
    pub weight: f64,
}

/// Fixed-capacity ring buffer; the oldest experience is overwritten first.
#[derive(Debug, Clone)]
pub struct UniformBuffer {
    capacity: usize,
    items: Vec<Experience>,
    cursor: usize,
}

impl UniformBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0);
        Self { capacity, items: Vec::with_capacity(capacity.min(1 << 16)), cursor: 0 }
    }

    /// Stores `e` and returns its slot.
    pub fn push(&mut self, e: Experience) -> usize {
        let slot = self.cursor;
        if self.items.len() < self.capacity {
            self.items.push(e);
        } else {
            self.items[slot] = e;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
        slot
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, slot: usize) -> Option<&Experience> {
        self.items.get(slot)
    }

    /// `batch` distinct slots drawn uniformly, all with weight 1.
    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<Vec<Sampled>> {
        if batch == 0 || self.items.len() < batch {
            return Err(DarpError::Underfilled { size: self.items.len(), requested: batch });
        }
        Ok(sample(rng, self.items.len(), batch)
            .into_iter()
            .map(|i| Sampled { index: i, experience: self.items[i], weight: 1.0 })
            .collect())
    }
}

/// Prioritization hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorityConfig {
    /// Priority exponent `a`, applied when a priority is stored.
    pub alpha: f64,
    /// Importance-sampling exponent at the start and end of training.
    pub beta_start: f64,
    pub beta_end: f64,
    /// Floor added to `|td|` so no experience becomes unsampleable.
    pub eps: f64,
}

impl Default for PriorityConfig {
    fn default() -> Self {
        Self { alpha: 0.6, beta_start: 0.4, beta_end: 1.0, eps: 1e-2 }
    }
}

impl PriorityConfig {
    /// Linear anneal of beta over `progress` in `[0, 1]`.
    pub fn beta(&self, progress: f64) -> f64 {
        let t = progress.clamp(0.0, 1.0);
        self.beta_start + (self.beta_end - self.beta_start) * t
    }
}

/// Proportional prioritized replay over a [`SumTree`].
#[derive(Debug, Clone)]
pub struct PrioritizedBuffer {
    tree: SumTree,
    items: Vec<Experience>,
    cursor: usize,
    config: PriorityConfig,
}

impl PrioritizedBuffer {
    pub fn new(capacity: usize, config: PriorityConfig) -> Self {
        Self {
            tree: SumTree::new(capacity),
            items: Vec::with_capacity(capacity.min(1 << 16)),
            cursor: 0,
            config,
        }
    }

    pub fn tree(&self) -> &SumTree {
        &self.tree
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Stores `e` with the given priority, or the current maximum (1 when
    /// empty) so new experiences are sampled at least once.
    pub fn push(&mut self, e: Experience, priority: Option<f64>) -> usize {
        let slot = self.cursor;
        let p = priority.unwrap_or_else(|| {
            let m = self.tree.max();
            if m > 0.0 { m } else { 1.0 }
        });
        if self.items.len() < self.tree.capacity() {
            self.items.push(e);
        } else {
            self.items[slot] = e;
        }
        self.tree.set(slot, p);
        self.cursor = (self.cursor + 1) % self.tree.capacity();
        slot
    }

    /// Stratified proportional draw: one sample per equal-mass segment, with
    /// importance weights `(N P(i))^-beta` normalised by the batch maximum.
    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, beta: f64, rng: &mut R) -> Result<Vec<Sampled>> {
        if batch == 0 || self.items.len() < batch {
            return Err(DarpError::Underfilled { size: self.items.len(), requested: batch });
        }
        let total = self.tree.total();
        let segment = total / batch as f64;
        let n = self.items.len() as f64;
        let mut out: Vec<Sampled> = (0..batch)
            .map(|k| {
                let mass = segment * (k as f64 + rng.random::<f64>());
                let index = self.tree.find(mass.min(total));
                let prob = self.tree.get(index) / total;
                Sampled { index, experience: self.items[index], weight: (n * prob).powf(-beta) }
            })
            .collect();
        let max_w = out.iter().map(|s| s.weight).fold(0.0, f64::max);
        out.iter_mut().for_each(|s| s.weight /= max_w);
        Ok(out)
    }

    /// Sets each slot's priority to `(|td| + eps)^alpha`.
    pub fn update_priorities(&mut self, indices: &[usize], td_errors: &[f64]) -> Result<()> {
        for (&i, &td) in indices.iter().zip(td_errors) {
            if i >= self.items.len() {
                return Err(DarpError::InvalidIndex(i));
            }
            self.tree.set(i, (td.abs() + self.config.eps).powf(self.config.alpha));
        }
        Ok(())
    }
}

/// Replay storage mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum ReplayMode {
    Uniform,
    Prioritized(PriorityConfig),
}

impl Default for ReplayMode {
    fn default() -> Self {
        ReplayMode::Prioritized(PriorityConfig::default())
    }
}

#[derive(Debug, Clone)]
pub enum ReplayBuffer {
    Uniform(UniformBuffer),
    Prioritized(PrioritizedBuffer),
}

impl ReplayBuffer {
    pub fn new(capacity: usize, mode: ReplayMode) -> Self {
        match mode {
            ReplayMode::Uniform => ReplayBuffer::Uniform(UniformBuffer::new(capacity)),
            ReplayMode::Prioritized(cfg) => ReplayBuffer::Prioritized(PrioritizedBuffer::new(capacity, cfg)),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            ReplayBuffer::Uniform(b) => b.len(),
            ReplayBuffer::Prioritized(b) => b.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn push(&mut self, e: Experience) -> usize {
        match self {
            ReplayBuffer::Uniform(b) => b.push(e),
            ReplayBuffer::Prioritized(b) => b.push(e, None),
        }
    }

    /// `progress` in `[0, 1]` drives the importance-sampling anneal.
    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, progress: f64, rng: &mut R) -> Result<Vec<Sampled>> {
        match self {
            ReplayBuffer::Uniform(b) => b.sample(batch, rng),
            ReplayBuffer::Prioritized(b) => b.sample(batch, b.config.beta(progress), rng),
        }
    }

    /// No-op for the uniform buffer.
    pub fn update_priorities(&mut self, indices: &[usize], td_errors: &[f64]) -> Result<()> {
        match self {
            ReplayBuffer::Uniform(_) => Ok(()),
            ReplayBuffer::Prioritized(b) => b.update_priorities(indices, td_errors),
        }
    }
}
