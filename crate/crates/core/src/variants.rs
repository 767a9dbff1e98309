//! Cluster-quota and similarity-threshold selection, and the k-means they use.

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{QditError, Result};
use crate::facility::exact_sim;
use crate::select::finish;
use crate::types::{Algorithm, Dataset, SelectionConfig, SelectionResult};

pub const DEFAULT_KMEANS_ITERS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    pub labels: Vec<usize>,
    /// `k × dim`, row-major.
    pub centroids: Vec<f64>,
    pub k: usize,
    pub dim: usize,
    /// Sum of squared distances from each point to its assigned centroid.
    pub inertia: f64,
    /// Inertia after every assignment step, first to last.
    pub inertia_history: Vec<f64>,
}

impl ClusterAssignment {
    pub fn centroid(&self, c: usize) -> &[f64] {
        &self.centroids[c * self.dim..(c + 1) * self.dim]
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid (smallest id on ties) and its squared distance.
fn nearest(point: &[f64], centroids: &[f64], dim: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.chunks_exact(dim).enumerate() {
        let d = sq_dist(point, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn kmeans_plus_plus(dataset: &Dataset, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = dataset.len();
    let dim = dataset.dim();
    let mut chosen = vec![false; n];
    let mut centroids = Vec::with_capacity(k * dim);
    let first = rng.gen_range(0..n);
    chosen[first] = true;
    centroids.extend_from_slice(dataset.embedding(first));
    let mut d2: Vec<f64> = (0..n)
        .map(|i| sq_dist(dataset.embedding(i), dataset.embedding(first)))
        .collect();
    for _ in 1..k {
        let next = match WeightedIndex::new(&d2) {
            Ok(dist) => dist.sample(rng),
            // every remaining point coincides with a chosen center
            Err(_) => (0..n).find(|&i| !chosen[i]).expect("k <= n"),
        };
        chosen[next] = true;
        let c = dataset.embedding(next);
        centroids.extend_from_slice(c);
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(dataset.embedding(i), c));
        }
        d2[next] = 0.0;
    }
    centroids
}

/// Lloyd's algorithm on unit-normalized embeddings with k-means++ seeding.
///
/// Stops after `max_iters` update rounds or once no label changes. A cluster
/// left empty by an update is reseeded at the point farthest from its own
/// centroid.
pub fn kmeans(
    dataset: &Dataset,
    k: usize,
    seed: u64,
    max_iters: usize,
) -> Result<ClusterAssignment> {
    let n = dataset.len();
    let dim = dataset.dim();
    if k == 0 || k > n {
        return Err(QditError::InvalidConfig(format!(
            "k-means needs 1 <= k <= {n}, got {k}"
        )));
    }
    if max_iters == 0 {
        return Err(QditError::InvalidConfig(
            "k-means needs at least one iteration".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeans_plus_plus(dataset, k, &mut rng);

    let assign = |centroids: &[f64]| -> (Vec<usize>, Vec<f64>) {
        (0..n)
            .into_par_iter()
            .map(|i| nearest(dataset.embedding(i), centroids, dim))
            .unzip()
    };
    let (mut labels, mut dists) = assign(&centroids);
    let mut history = vec![dists.iter().sum::<f64>()];

    for _ in 0..max_iters {
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
        for (i, &l) in labels.iter().enumerate() {
            members[l].push(i);
        }
        centroids
            .par_chunks_mut(dim)
            .zip(members.par_iter())
            .for_each(|(centroid, m)| {
                if m.is_empty() {
                    return;
                }
                centroid.iter_mut().for_each(|x| *x = 0.0);
                for &i in m {
                    for (x, e) in centroid.iter_mut().zip(dataset.embedding(i)) {
                        *x += e;
                    }
                }
                let count = m.len() as f64;
                centroid.iter_mut().for_each(|x| *x /= count);
            });
        let mut used = vec![false; n];
        for c in (0..k).filter(|&c| members[c].is_empty()) {
            let far = (0..n)
                .filter(|&i| !used[i])
                .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)))
                .expect("k <= n");
            used[far] = true;
            centroids[c * dim..(c + 1) * dim].copy_from_slice(dataset.embedding(far));
        }
        let (next_labels, next_dists) = assign(&centroids);
        history.push(next_dists.iter().sum());
        let changed = next_labels != labels;
        labels = next_labels;
        dists = next_dists;
        if !changed {
            break;
        }
    }

    Ok(ClusterAssignment {
        labels,
        centroids,
        k,
        dim,
        inertia: *history.last().expect("non-empty"),
        inertia_history: history,
    })
}

/// Per-cluster selection counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuotaPlan {
    /// Even split: `⌊K/k⌋` each, one more for the `K mod k` largest clusters.
    pub initial: Vec<usize>,
    /// After capping at cluster size and handing the shortfall to clusters
    /// with spare members.
    pub adjusted: Vec<usize>,
}

/// Splits `k_select` picks across clusters of the given sizes. Ranking for
/// extra picks is size descending, cluster id ascending.
pub fn cluster_quotas(sizes: &[usize], k_select: usize) -> QuotaPlan {
    let m = sizes.len();
    let mut by_size: Vec<usize> = (0..m).collect();
    by_size.sort_by(|&a, &b| sizes[b].cmp(&sizes[a]).then(a.cmp(&b)));
    let mut initial = vec![k_select / m; m];
    for &c in by_size.iter().take(k_select % m) {
        initial[c] += 1;
    }
    let mut adjusted: Vec<usize> = initial.iter().zip(sizes).map(|(&q, &s)| q.min(s)).collect();
    let target = k_select.min(sizes.iter().sum());
    let mut shortfall = target - adjusted.iter().sum::<usize>();
    while shortfall > 0 {
        for &c in &by_size {
            if shortfall == 0 {
                break;
            }
            if adjusted[c] < sizes[c] {
                adjusted[c] += 1;
                shortfall -= 1;
            }
        }
    }
    QuotaPlan { initial, adjusted }
}

fn by_quality_desc(dataset: &Dataset, indices: &mut [usize]) {
    let q = dataset.normalized_quality();
    indices.sort_by(|&a, &b| q[b].total_cmp(&q[a]).then(a.cmp(&b)));
}

/// Cluster selection with the k-means run it was built from.
pub fn select_cluster_with_assignment(
    dataset: &Dataset,
    config: &SelectionConfig,
) -> Result<(SelectionResult, ClusterAssignment, QuotaPlan)> {
    check_algorithm(config, Algorithm::Cluster)?;
    config.validate(dataset.len())?;
    let clusters = config.n_clusters.expect("validated");
    let assignment = kmeans(dataset, clusters, config.seed, DEFAULT_KMEANS_ITERS)?;
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); clusters];
    for (i, &l) in assignment.labels.iter().enumerate() {
        members[l].push(i);
    }
    let plan = cluster_quotas(&assignment.sizes(), config.k_select);
    let q = dataset.normalized_quality();
    let mut selected = Vec::with_capacity(config.k_select);
    for (m, &quota) in members.iter_mut().zip(&plan.adjusted) {
        by_quality_desc(dataset, m);
        selected.extend_from_slice(&m[..quota]);
    }
    let trace = selected.iter().map(|&i| q[i]).collect();
    let result = finish(dataset, config, selected, trace, false, 0)?;
    Ok((result, assignment, plan))
}

/// Equal per-cluster quotas of the highest-quality points.
pub fn select_cluster(dataset: &Dataset, config: &SelectionConfig) -> Result<SelectionResult> {
    select_cluster_with_assignment(dataset, config).map(|(r, _, _)| r)
}

/// Quality-descending scan that skips any candidate whose similarity to an
/// accepted point exceeds `tau`. May return fewer than `k` points.
pub fn select_threshold(dataset: &Dataset, config: &SelectionConfig) -> Result<SelectionResult> {
    check_algorithm(config, Algorithm::Threshold)?;
    config.validate(dataset.len())?;
    let tau = config.tau.expect("validated");
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    by_quality_desc(dataset, &mut order);
    let mut accepted: Vec<usize> = Vec::with_capacity(config.k_select);
    for c in order {
        if accepted.len() == config.k_select {
            break;
        }
        if accepted.iter().all(|&a| exact_sim(dataset, a, c) <= tau) {
            accepted.push(c);
        }
    }
    let truncated = accepted.len() < config.k_select;
    let q = dataset.normalized_quality();
    let trace = accepted.iter().map(|&i| q[i]).collect();
    finish(dataset, config, accepted, trace, truncated, 0)
}

fn check_algorithm(config: &SelectionConfig, expect: Algorithm) -> Result<()> {
    if config.algorithm != expect {
        return Err(QditError::InvalidConfig(format!(
            "{expect} selection called with algorithm {}",
            config.algorithm
        )));
    }
    Ok(())
}
