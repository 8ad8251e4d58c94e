//! Categorical tree-structured Parzen estimator over (instruction, example set)
//! pairs with independent per-dimension densities.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::PromptCandidate;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TpeConfig {
    pub gamma: f64,
    pub prior_weight: f64,
    pub n_startup: usize,
    /// Products up to this size are scored exhaustively.
    pub enumeration_limit: usize,
    pub n_candidates: usize,
}

impl Default for TpeConfig {
    fn default() -> Self {
        Self {
            gamma: 0.25,
            prior_weight: 1.0,
            n_startup: 10,
            enumeration_limit: 4096,
            n_candidates: 64,
        }
    }
}

impl TpeConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(format!("gamma must lie in (0, 1), got {}", self.gamma));
        }
        if !(self.prior_weight > 0.0 && self.prior_weight.is_finite()) {
            return Err(format!("prior weight must be positive, got {}", self.prior_weight));
        }
        if self.n_candidates == 0 {
            return Err("n_candidates must be at least 1".into());
        }
        Ok(())
    }
}

/// One completed evaluation as seen by the sampler. Aborted trials enter with
/// score 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub candidate: PromptCandidate,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TpeState {
    pub config: TpeConfig,
    pub seed: u64,
    pub history: Vec<Observation>,
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

impl TpeState {
    pub fn new(config: TpeConfig, seed: u64) -> Self {
        Self {
            config,
            seed,
            history: Vec::new(),
        }
    }

    pub fn observe(&mut self, candidate: PromptCandidate, score: Option<f64>) {
        self.history.push(Observation {
            candidate,
            score: score.unwrap_or(0.0),
        });
    }

    /// RNG for the suggestion following `history.len()` observations, so a
    /// replayed history reproduces the same stream.
    fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(splitmix(self.seed ^ splitmix(self.history.len() as u64)))
    }

    fn counts(&self) -> BTreeMap<PromptCandidate, usize> {
        let mut m = BTreeMap::new();
        for o in &self.history {
            *m.entry(o.candidate).or_insert(0) += 1;
        }
        m
    }

    /// Smoothed categorical densities of the good and bad groups for one
    /// dimension of size `k`.
    fn densities(&self, good: &[Observation], bad: &[Observation], k: usize, dim: fn(&PromptCandidate) -> usize) -> (Vec<f64>, Vec<f64>) {
        let w = self.config.prior_weight;
        let density = |group: &[Observation]| {
            let mut c = vec![w; k];
            for o in group {
                if let Some(slot) = c.get_mut(dim(&o.candidate)) {
                    *slot += 1.0;
                }
            }
            let total = group.len() as f64 + w * k as f64;
            c.into_iter().map(|x| x / total).collect::<Vec<_>>()
        };
        (density(good), density(bad))
    }

    /// Splits the history at the gamma quantile: the best ceil(gamma n)
    /// observations (earlier trials first on ties) form the good group.
    pub fn split(&self) -> (Vec<Observation>, Vec<Observation>) {
        let mut order: Vec<usize> = (0..self.history.len()).collect();
        order.sort_by(|&a, &b| self.history[b].score.total_cmp(&self.history[a].score).then(a.cmp(&b)));
        let n_good = ((self.config.gamma * self.history.len() as f64).ceil() as usize).max(1);
        let good = order[..n_good.min(order.len())].iter().map(|&i| self.history[i]).collect();
        let bad = order[n_good.min(order.len())..].iter().map(|&i| self.history[i]).collect();
        (good, bad)
    }

    /// Next pair to evaluate over an `n_instr` by `n_sets` grid. Unevaluated
    /// pairs are preferred while any remain.
    pub fn suggest(&self, n_instr: usize, n_sets: usize) -> PromptCandidate {
        assert!(n_instr > 0 && n_sets > 0, "search space must be non-empty");
        let mut rng = self.rng();
        let product = n_instr * n_sets;
        let counts = self.counts();
        let exhausted = counts.len() >= product;
        let fresh = |c: &PromptCandidate| exhausted || !counts.contains_key(c);

        if self.history.len() < self.config.n_startup {
            return uniform_pair(&mut rng, n_instr, n_sets, &counts, exhausted);
        }

        let (good, bad) = self.split();
        let (li, gi) = self.densities(&good, &bad, n_instr, |c| c.instruction_id);
        let (le, ge) = self.densities(&good, &bad, n_sets, |c| c.example_set_id);
        let score = |c: &PromptCandidate| {
            (li[c.instruction_id] / gi[c.instruction_id]).ln() + (le[c.example_set_id] / ge[c.example_set_id]).ln()
        };

        let candidates: Vec<PromptCandidate> = if product <= self.config.enumeration_limit {
            (0..n_instr)
                .flat_map(|i| (0..n_sets).map(move |e| PromptCandidate::new(i, e)))
                .filter(|c| fresh(c))
                .collect()
        } else {
            let mut set = BTreeSet::new();
            for _ in 0..self.config.n_candidates {
                let c = PromptCandidate::new(sample_index(&mut rng, &li), sample_index(&mut rng, &le));
                if fresh(&c) {
                    set.insert(c);
                }
            }
            if set.is_empty() {
                set.insert(uniform_pair(&mut rng, n_instr, n_sets, &counts, exhausted));
            }
            set.into_iter().collect()
        };

        let mut best: Vec<PromptCandidate> = Vec::new();
        let mut best_key = (f64::NEG_INFINITY, usize::MAX);
        for c in candidates {
            let s = score(&c);
            let n = counts.get(&c).copied().unwrap_or(0);
            // higher score, then fewer evaluations
            let better = s > best_key.0 || (s == best_key.0 && n < best_key.1);
            if better {
                best_key = (s, n);
                best.clear();
                best.push(c);
            } else if s == best_key.0 && n == best_key.1 {
                best.push(c);
            }
        }
        best[rng.random_range(0..best.len())]
    }
}

fn sample_index(rng: &mut ChaCha8Rng, p: &[f64]) -> usize {
    let u: f64 = rng.random::<f64>() * p.iter().sum::<f64>();
    let mut acc = 0.0;
    for (i, &x) in p.iter().enumerate() {
        acc += x;
        if u < acc {
            return i;
        }
    }
    p.len() - 1
}

/// Uniform over unevaluated pairs, or over all pairs once exhausted.
fn uniform_pair(
    rng: &mut ChaCha8Rng,
    n_instr: usize,
    n_sets: usize,
    counts: &BTreeMap<PromptCandidate, usize>,
    exhausted: bool,
) -> PromptCandidate {
    let product = n_instr * n_sets;
    let at = |k: usize| PromptCandidate::new(k / n_sets, k % n_sets);
    if exhausted || counts.is_empty() {
        return at(rng.random_range(0..product));
    }
    let remaining = product - counts.len();
    let mut r = rng.random_range(0..remaining);
    for k in 0..product {
        let c = at(k);
        if !counts.contains_key(&c) {
            if r == 0 {
                return c;
            }
            r -= 1;
        }
    }
    unreachable!("remaining count matches unevaluated pairs")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn startup_never_repeats_until_exhausted() {
        let mut s = TpeState::new(TpeConfig { n_startup: 100, ..TpeConfig::default() }, 5);
        let mut seen = BTreeSet::new();
        for _ in 0..12 {
            let c = s.suggest(3, 4);
            assert!(seen.insert(c));
            s.observe(c, Some(0.5));
        }
        let c = s.suggest(3, 4);
        assert!(c.instruction_id < 3 && c.example_set_id < 4);
    }

    #[test]
    fn degenerate_posterior_picks_the_good_instruction() {
        let mut s = TpeState::new(TpeConfig::default(), 1);
        for e in 0..4 {
            for i in 0..5 {
                let score = if i == 3 { 1.0 } else { 0.0 };
                s.observe(PromptCandidate::new(i, e), Some(score));
            }
        }
        let c = s.suggest(5, 8);
        assert_eq!(c.instruction_id, 3);
        assert!(c.example_set_id >= 4);
    }

    #[test]
    fn suggestions_are_reproducible() {
        let mut a = TpeState::new(TpeConfig::default(), 9);
        for k in 0..15 {
            a.observe(PromptCandidate::new(k % 4, k % 3), Some(k as f64 / 15.0));
        }
        let b = a.clone();
        assert_eq!(a.suggest(4, 6), b.suggest(4, 6));
    }

    #[test]
    fn split_respects_gamma() {
        let mut s = TpeState::new(TpeConfig::default(), 0);
        for k in 0..8 {
            s.observe(PromptCandidate::new(k, 0), Some(k as f64));
        }
        let (g, b) = s.split();
        assert_eq!(g.len(), 2);
        assert_eq!(b.len(), 6);
        assert_eq!(g[0].score, 7.0);
    }
}
