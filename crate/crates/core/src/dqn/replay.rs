//! Proportional prioritized replay backed by a sum tree.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReplayError {
    #[error("buffer holds {have} transitions, batch needs {need}")]
    Underfilled { have: usize, need: usize },
    #[error("transition index {0} out of range")]
    Index(usize),
    #[error("non-finite reward")]
    Reward,
}

/// Binary sum tree over a power-of-two number of leaves.
#[derive(Debug, Clone, PartialEq)]
pub struct SumTree {
    leaves: usize,
    nodes: Vec<f64>,
}

impl SumTree {
    pub fn new(capacity: usize) -> Self {
        let leaves = capacity.max(1).next_power_of_two();
        Self {
            leaves,
            nodes: vec![0.0; 2 * leaves],
        }
    }

    pub fn total(&self) -> f64 {
        self.nodes[1]
    }

    pub fn get(&self, i: usize) -> f64 {
        self.nodes[self.leaves + i]
    }

    /// Sets a leaf and recomputes its ancestors from their children.
    pub fn set(&mut self, i: usize, value: f64) {
        let mut n = self.leaves + i;
        self.nodes[n] = value;
        while n > 1 {
            n /= 2;
            self.nodes[n] = self.nodes[2 * n] + self.nodes[2 * n + 1];
        }
    }

    /// Leaf whose cumulative range contains `mass`.
    pub fn find(&self, mut mass: f64) -> usize {
        let mut n = 1;
        while n < self.leaves {
            let left = self.nodes[2 * n];
            if mass < left || self.nodes[2 * n + 1] == 0.0 {
                n *= 2;
            } else {
                mass -= left;
                n = 2 * n + 1;
            }
        }
        n - self.leaves
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub s: Vec<f64>,
    pub a: usize,
    pub r: f64,
    pub s_next: Vec<f64>,
    pub end: bool,
}

/// Stored form: single precision, and when the next window is the current
/// one shifted by one block only the new block is kept.
#[derive(Debug, Clone)]
struct Stored {
    s: Box<[f32]>,
    next: Box<[f32]>,
    shifted: bool,
    a: usize,
    r: f64,
    end: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplayConfig {
    pub capacity: usize,
    pub alpha: f64,
    pub beta_start: f64,
    pub beta_end: f64,
    pub eps: f64,
    /// Feature-block size used to detect shifted windows; 0 disables it.
    pub block: usize,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        Self {
            capacity: 1 << 17,
            alpha: 0.6,
            beta_start: 0.4,
            beta_end: 1.0,
            eps: 1e-3,
            block: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    cfg: ReplayConfig,
    data: Vec<Stored>,
    next: usize,
    tree: SumTree,
    max_priority: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampledBatch {
    pub indices: Vec<usize>,
    pub weights: Vec<f64>,
    pub transitions: Vec<Transition>,
}

impl ReplayBuffer {
    pub fn new(cfg: ReplayConfig) -> Self {
        Self {
            tree: SumTree::new(cfg.capacity),
            cfg,
            data: Vec::new(),
            next: 0,
            max_priority: 1.0,
        }
    }

    pub fn config(&self) -> &ReplayConfig {
        &self.cfg
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn total_priority(&self) -> f64 {
        self.tree.total()
    }

    pub fn priority(&self, i: usize) -> f64 {
        self.tree.get(i)
    }

    /// Stores a transition at the current maximum priority, overwriting the
    /// oldest once full. Returns its slot.
    pub fn push(&mut self, t: Transition) -> Result<usize, ReplayError> {
        if !t.r.is_finite() {
            return Err(ReplayError::Reward);
        }
        let b = self.cfg.block;
        let shifted = b > 0
            && t.s.len() == t.s_next.len()
            && t.s.len() >= b
            && t.s[b..] == t.s_next[..t.s.len() - b];
        let next: Vec<f32> = if shifted {
            t.s_next[t.s.len() - b..].iter().map(|&x| x as f32).collect()
        } else {
            t.s_next.iter().map(|&x| x as f32).collect()
        };
        let stored = Stored {
            s: t.s.iter().map(|&x| x as f32).collect(),
            next: next.into_boxed_slice(),
            shifted,
            a: t.a,
            r: t.r,
            end: t.end,
        };
        let slot = self.next;
        if slot == self.data.len() {
            self.data.push(stored);
        } else {
            self.data[slot] = stored;
        }
        self.tree.set(slot, self.max_priority);
        self.next = (slot + 1) % self.cfg.capacity;
        Ok(slot)
    }

    pub fn get(&self, i: usize) -> Option<Transition> {
        let st = self.data.get(i)?;
        let s: Vec<f64> = st.s.iter().map(|&x| x as f64).collect();
        let s_next = if st.shifted {
            let b = st.next.len();
            s[b..]
                .iter()
                .copied()
                .chain(st.next.iter().map(|&x| x as f64))
                .collect()
        } else {
            st.next.iter().map(|&x| x as f64).collect()
        };
        Some(Transition {
            s,
            a: st.a,
            r: st.r,
            s_next,
            end: st.end,
        })
    }

    /// Sets a raw priority; the stored value is `priority^alpha`.
    pub fn set_priority(&mut self, i: usize, priority: f64) -> Result<(), ReplayError> {
        if i >= self.data.len() {
            return Err(ReplayError::Index(i));
        }
        let p = priority.powf(self.cfg.alpha);
        self.max_priority = self.max_priority.max(p);
        self.tree.set(i, p);
        Ok(())
    }

    /// Refreshes priorities from absolute TD errors: `(|δ| + eps)^alpha`.
    pub fn update_priorities(&mut self, indices: &[usize], td_abs: &[f64]) -> Result<(), ReplayError> {
        for (&i, &d) in indices.iter().zip(td_abs) {
            self.set_priority(i, d.abs() + self.cfg.eps)?;
        }
        Ok(())
    }

    /// Importance-sampling exponent after `progress` ∈ [0, 1] of training.
    pub fn beta(&self, progress: f64) -> f64 {
        let p = progress.clamp(0.0, 1.0);
        self.cfg.beta_start + (self.cfg.beta_end - self.cfg.beta_start) * p
    }

    /// Draws one index with probability proportional to its priority.
    pub fn sample_index(&self, rng: &mut impl Rng) -> usize {
        let u = rng.random::<f64>() * self.tree.total();
        self.tree.find(u).min(self.data.len() - 1)
    }

    /// `b` i.i.d. proportional draws with normalized IS weights.
    pub fn sample_batch(&self, b: usize, beta: f64, rng: &mut impl Rng) -> Result<SampledBatch, ReplayError> {
        if self.data.len() < b || b == 0 {
            return Err(ReplayError::Underfilled {
                have: self.data.len(),
                need: b.max(1),
            });
        }
        let total = self.tree.total();
        let n = self.data.len() as f64;
        let indices: Vec<usize> = (0..b).map(|_| self.sample_index(rng)).collect();
        let raw: Vec<f64> = indices
            .iter()
            .map(|&i| (n * self.tree.get(i) / total).powf(-beta))
            .collect();
        let max = raw.iter().copied().fold(0.0, f64::max);
        let weights = raw.iter().map(|w| w / max).collect();
        let transitions = indices.iter().map(|&i| self.get(i).expect("in range")).collect();
        Ok(SampledBatch {
            indices,
            weights,
            transitions,
        })
    }
}
