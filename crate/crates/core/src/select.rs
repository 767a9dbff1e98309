//! Greedy maximization of the quality-diversity objective
//! `f(a | A, α) = (1 − α)·d(a | A) + α·q(a)`.
//!
//! All selectors break gain ties toward the smaller dataset index, and every
//! gain goes through the same summation path, so `lazy` reproduces `greedy`
//! bit for bit and `stochastic` reproduces `greedy` whenever its sample
//! covers the whole remaining pool.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{QditError, Result};
use crate::facility::{CoverageState, SimilarityBackend};
use crate::metrics::subset_metrics;
use crate::types::{Algorithm, Dataset, SelectionConfig, SelectionResult};
use crate::variants;

#[inline]
fn mix(alpha: f64, diversity_gain: f64, quality: f64) -> f64 {
    (1.0 - alpha) * diversity_gain + alpha * quality
}

/// Q-D gain of `candidate` against the current coverage.
pub fn qd_gain(
    state: &CoverageState,
    backend: &SimilarityBackend,
    dataset: &Dataset,
    candidate: usize,
    alpha: f64,
) -> Result<f64> {
    let d = state.marginal_gain(backend, candidate)?;
    Ok(mix(alpha, d, dataset.normalized_quality()[candidate]))
}

/// Stochastic-greedy sample size `ceil((n / k)·ln(1/ε))`, at least one.
pub fn stochastic_sample_size(n: usize, k: usize, epsilon: f64) -> usize {
    let s = (n as f64 / k as f64 * (1.0 / epsilon).ln()).ceil();
    (s as usize).max(1)
}

/// Runs the selector named by `config.algorithm`.
pub fn select(
    dataset: &Dataset,
    backend: &SimilarityBackend,
    config: &SelectionConfig,
) -> Result<SelectionResult> {
    match config.algorithm {
        Algorithm::Greedy => select_greedy(dataset, backend, config),
        Algorithm::Lazy => select_lazy(dataset, backend, config),
        Algorithm::Stochastic => select_stochastic(dataset, backend, config),
        Algorithm::StochasticLazy => select_stochastic_lazy(dataset, backend, config),
        Algorithm::Cluster => variants::select_cluster(dataset, config),
        Algorithm::Threshold => variants::select_threshold(dataset, config),
    }
}

fn prepare(
    dataset: &Dataset,
    backend: &SimilarityBackend,
    config: &SelectionConfig,
    expect: &[Algorithm],
) -> Result<()> {
    if !expect.contains(&config.algorithm) {
        return Err(QditError::InvalidConfig(format!(
            "selector for {:?} called with algorithm {}",
            expect, config.algorithm
        )));
    }
    if backend.len() != dataset.len() {
        return Err(QditError::InvalidConfig(format!(
            "similarity backend covers {} points, dataset has {}",
            backend.len(),
            dataset.len()
        )));
    }
    config.validate(dataset.len())
}

pub(crate) fn finish(
    dataset: &Dataset,
    config: &SelectionConfig,
    selected: Vec<usize>,
    objective_trace: Vec<f64>,
    truncated: bool,
    gain_evaluations: u64,
) -> Result<SelectionResult> {
    let (diversity, mean_quality) = subset_metrics(dataset, &selected)?;
    Ok(SelectionResult {
        selected,
        objective_trace,
        diversity,
        mean_quality,
        config: config.clone(),
        truncated,
        gain_evaluations,
    })
}

/// Position of the best `(gain desc, index asc)` entry; `candidates` ascending.
fn argmax(candidates: &[usize], gains: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..gains.len() {
        if gains[i] > gains[best] || (gains[i] == gains[best] && candidates[i] < candidates[best]) {
            best = i;
        }
    }
    best
}

/// Exhaustive greedy: every step evaluates every remaining candidate.
pub fn select_greedy(
    dataset: &Dataset,
    backend: &SimilarityBackend,
    config: &SelectionConfig,
) -> Result<SelectionResult> {
    prepare(dataset, backend, config, &[Algorithm::Greedy])?;
    let q = dataset.normalized_quality();
    let mut state = CoverageState::new(dataset.len());
    let mut remaining: Vec<usize> = (0..dataset.len()).collect();
    let mut selected = Vec::with_capacity(config.k_select);
    let mut trace = Vec::with_capacity(config.k_select);
    let mut evaluations = 0u64;
    for _ in 0..config.k_select {
        let mut gains = state.marginal_gains(backend, &remaining)?;
        evaluations += remaining.len() as u64;
        for (g, &c) in gains.iter_mut().zip(&remaining) {
            *g = mix(config.alpha, *g, q[c]);
        }
        let pos = argmax(&remaining, &gains);
        let pick = remaining.remove(pos);
        state.commit(backend, pick)?;
        selected.push(pick);
        trace.push(gains[pos]);
    }
    finish(dataset, config, selected, trace, false, evaluations)
}

#[derive(Debug, Clone, Copy)]
struct LazyEntry {
    bound: f64,
    candidate: usize,
    epoch: usize,
}

impl PartialEq for LazyEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for LazyEntry {}

impl PartialOrd for LazyEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for LazyEntry {
    // Max-heap order: larger bound first, then smaller index.
    fn cmp(&self, other: &Self) -> Ordering {
        self.bound
            .total_cmp(&other.bound)
            .then_with(|| other.candidate.cmp(&self.candidate))
    }
}

/// Pops until the top entry is fresh for `step`, refreshing stale entries.
/// Returns the winning entry.
fn lazy_pop(
    heap: &mut BinaryHeap<LazyEntry>,
    step: usize,
    state: &CoverageState,
    backend: &SimilarityBackend,
    dataset: &Dataset,
    alpha: f64,
    evaluations: &mut u64,
) -> Result<LazyEntry> {
    loop {
        let top = heap.pop().expect("heap holds every remaining candidate");
        if top.epoch == step {
            return Ok(top);
        }
        let bound = qd_gain(state, backend, dataset, top.candidate, alpha)?;
        *evaluations += 1;
        heap.push(LazyEntry {
            bound,
            candidate: top.candidate,
            epoch: step,
        });
    }
}

/// Lazy greedy: cached gains are upper bounds, only the top is refreshed.
pub fn select_lazy(
    dataset: &Dataset,
    backend: &SimilarityBackend,
    config: &SelectionConfig,
) -> Result<SelectionResult> {
    prepare(dataset, backend, config, &[Algorithm::Lazy])?;
    let q = dataset.normalized_quality();
    let mut state = CoverageState::new(dataset.len());
    let all: Vec<usize> = (0..dataset.len()).collect();
    let initial = state.marginal_gains(backend, &all)?;
    let mut evaluations = all.len() as u64;
    let mut heap: BinaryHeap<LazyEntry> = initial
        .iter()
        .zip(&all)
        .map(|(&d, &c)| LazyEntry {
            bound: mix(config.alpha, d, q[c]),
            candidate: c,
            epoch: 0,
        })
        .collect();
    let mut selected = Vec::with_capacity(config.k_select);
    let mut trace = Vec::with_capacity(config.k_select);
    for step in 0..config.k_select {
        let top = lazy_pop(
            &mut heap,
            step,
            &state,
            backend,
            dataset,
            config.alpha,
            &mut evaluations,
        )?;
        state.commit(backend, top.candidate)?;
        selected.push(top.candidate);
        trace.push(top.bound);
    }
    finish(dataset, config, selected, trace, false, evaluations)
}

/// Seeded generator for one selection step.
fn step_rng(seed: u64, step: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step as u64);
    rng
}

/// Candidates evaluated at `step`, ascending. The whole pool when the
/// sample size reaches it.
fn step_sample(remaining: &[usize], sample_size: usize, seed: u64, step: usize) -> Vec<usize> {
    if sample_size >= remaining.len() {
        return remaining.to_vec();
    }
    let mut rng = step_rng(seed, step);
    let mut picked: Vec<usize> = rand::seq::index::sample(&mut rng, remaining.len(), sample_size)
        .into_iter()
        .map(|i| remaining[i])
        .collect();
    picked.sort_unstable();
    picked
}

/// Stochastic greedy: each step evaluates a random sample of the remaining pool.
pub fn select_stochastic(
    dataset: &Dataset,
    backend: &SimilarityBackend,
    config: &SelectionConfig,
) -> Result<SelectionResult> {
    prepare(dataset, backend, config, &[Algorithm::Stochastic])?;
    let q = dataset.normalized_quality();
    let epsilon = config.epsilon.expect("validated");
    let sample_size = stochastic_sample_size(dataset.len(), config.k_select, epsilon);
    let mut state = CoverageState::new(dataset.len());
    let mut remaining: Vec<usize> = (0..dataset.len()).collect();
    let mut selected = Vec::with_capacity(config.k_select);
    let mut trace = Vec::with_capacity(config.k_select);
    let mut evaluations = 0u64;
    for step in 0..config.k_select {
        let sample = step_sample(&remaining, sample_size, config.seed, step);
        let mut gains = state.marginal_gains(backend, &sample)?;
        evaluations += sample.len() as u64;
        for (g, &c) in gains.iter_mut().zip(&sample) {
            *g = mix(config.alpha, *g, q[c]);
        }
        let pos = argmax(&sample, &gains);
        let pick = sample[pos];
        let at = remaining
            .binary_search(&pick)
            .expect("sampled from remaining");
        remaining.remove(at);
        state.commit(backend, pick)?;
        selected.push(pick);
        trace.push(gains[pos]);
    }
    finish(dataset, config, selected, trace, false, evaluations)
}

/// Stochastic greedy where each step's sample is ranked through cached
/// upper bounds, refreshing only what can still win. Produces the same
/// selection as [`select_stochastic`] with the same seed.
pub fn select_stochastic_lazy(
    dataset: &Dataset,
    backend: &SimilarityBackend,
    config: &SelectionConfig,
) -> Result<SelectionResult> {
    prepare(dataset, backend, config, &[Algorithm::StochasticLazy])?;
    let epsilon = config.epsilon.expect("validated");
    let sample_size = stochastic_sample_size(dataset.len(), config.k_select, epsilon);
    let mut state = CoverageState::new(dataset.len());
    let mut bounds = vec![f64::INFINITY; dataset.len()];
    let mut fresh_at = vec![usize::MAX; dataset.len()];
    let mut remaining: Vec<usize> = (0..dataset.len()).collect();
    let mut selected = Vec::with_capacity(config.k_select);
    let mut trace = Vec::with_capacity(config.k_select);
    let mut evaluations = 0u64;
    for step in 0..config.k_select {
        let sample = step_sample(&remaining, sample_size, config.seed, step);
        let mut heap: BinaryHeap<LazyEntry> = sample
            .iter()
            .map(|&c| LazyEntry {
                bound: bounds[c],
                candidate: c,
                epoch: fresh_at[c],
            })
            .collect();
        let top = lazy_pop(
            &mut heap,
            step,
            &state,
            backend,
            dataset,
            config.alpha,
            &mut evaluations,
        )?;
        for e in heap {
            bounds[e.candidate] = e.bound;
            fresh_at[e.candidate] = e.epoch;
        }
        let at = remaining
            .binary_search(&top.candidate)
            .expect("sampled from remaining");
        remaining.remove(at);
        state.commit(backend, top.candidate)?;
        selected.push(top.candidate);
        trace.push(top.bound);
    }
    finish(dataset, config, selected, trace, false, evaluations)
}
