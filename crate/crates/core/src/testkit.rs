//! Naive reference implementations and synthetic data for tests.
//!
//! Nothing here calls into the optimized selection or coverage code; the
//! oracles recompute cosine similarity from the supplied (raw) embeddings.
//! They are slow on purpose.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{QditError, Result};
use crate::types::{DataPoint, Dataset};

/// Largest number of subsets `exhaustive_optimum` will enumerate.
pub const EXHAUSTIVE_BUDGET: u128 = 1_000_000;

/// Gains closer than this count as tied in [`brute_greedy`]. Recomputing `F`
/// from scratch adds rounding noise of a few ulps to exact ties.
pub const BRUTE_TIE_TOLERANCE: f64 = 1e-12;

fn naive_cosine(a: &[f64], b: &[f64]) -> f64 {
    let mut ab = 0.0;
    let mut aa = 0.0;
    let mut bb = 0.0;
    for i in 0..a.len() {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    ab / (aa.sqrt() * bb.sqrt())
}

fn check(dataset: &Dataset, subset: &[usize]) -> Result<()> {
    for (k, &i) in subset.iter().enumerate() {
        if i >= dataset.len() {
            return Err(QditError::IndexOutOfRange {
                index: i,
                len: dataset.len(),
            });
        }
        if subset[..k].contains(&i) {
            return Err(QditError::DuplicateIndex { index: i });
        }
    }
    Ok(())
}

/// Direct double loop over the ground set and the subset, normalized by `n`.
pub fn brute_fl_score(dataset: &Dataset, subset: &[usize]) -> Result<f64> {
    check(dataset, subset)?;
    let n = dataset.len();
    let mut sum = 0.0;
    for v in 0..n {
        let mut best = 0.0f64;
        for &a in subset {
            let s = naive_cosine(dataset.raw_embedding(a), dataset.raw_embedding(v));
            if s > best {
                best = s;
            }
        }
        sum += best.min(1.0);
    }
    Ok(sum / n as f64)
}

/// Set objective whose greedy increments are the Q-D gains:
/// `(1 − α)·d(A) + α·Σ_{a∈A} q(a)`, with `d` normalized by `n`.
pub fn brute_objective(dataset: &Dataset, subset: &[usize], alpha: f64) -> Result<f64> {
    let d = brute_fl_score(dataset, subset)?;
    let q: f64 = subset
        .iter()
        .map(|&a| dataset.normalized_quality()[a])
        .sum();
    Ok((1.0 - alpha) * d + alpha * q)
}

fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k);
    let mut c: u128 = 1;
    for i in 0..k {
        c = c * (n - i) as u128 / (i + 1) as u128;
    }
    c
}

/// Best `k`-subset under [`brute_objective`] by full enumeration. Ties go to
/// the lexicographically smallest subset.
pub fn exhaustive_optimum(dataset: &Dataset, k: usize, alpha: f64) -> Result<(Vec<usize>, f64)> {
    let n = dataset.len();
    if k > n {
        return Err(QditError::InvalidConfig(format!("k = {k} exceeds n = {n}")));
    }
    let subsets = binomial(n, k);
    if subsets > EXHAUSTIVE_BUDGET {
        return Err(QditError::BudgetExceeded {
            subsets,
            budget: EXHAUSTIVE_BUDGET,
        });
    }
    let mut comb: Vec<usize> = (0..k).collect();
    let mut best = (comb.clone(), brute_objective(dataset, &comb, alpha)?);
    loop {
        // next combination in lexicographic order
        let mut i = k;
        while i > 0 && comb[i - 1] == n - k + i - 1 {
            i -= 1;
        }
        if i == 0 {
            break;
        }
        comb[i - 1] += 1;
        for j in i..k {
            comb[j] = comb[j - 1] + 1;
        }
        let value = brute_objective(dataset, &comb, alpha)?;
        if value > best.1 {
            best = (comb.clone(), value);
        }
    }
    Ok(best)
}

/// Greedy by brute force: every step evaluates `F(A ∪ {a}) − F(A)` from
/// scratch for every remaining `a`; ties (within [`BRUTE_TIE_TOLERANCE`]) go
/// to the smaller index.
pub fn brute_greedy(dataset: &Dataset, k: usize, alpha: f64) -> Result<Vec<usize>> {
    let mut chosen: Vec<usize> = Vec::with_capacity(k);
    for _ in 0..k {
        let base = brute_objective(dataset, &chosen, alpha)?;
        let mut best: Option<(usize, f64)> = None;
        for a in 0..dataset.len() {
            if chosen.contains(&a) {
                continue;
            }
            chosen.push(a);
            let gain = brute_objective(dataset, &chosen, alpha)? - base;
            chosen.pop();
            if best.map_or(true, |(_, g)| gain > g + BRUTE_TIE_TOLERANCE) {
                best = Some((a, gain));
            }
        }
        chosen.push(best.expect("k <= n").0);
    }
    Ok(chosen)
}

/// Indices of the `k` highest normalized qualities, quality descending, index ascending on ties.
pub fn top_k_quality(dataset: &Dataset, k: usize) -> Vec<usize> {
    let q = dataset.normalized_quality();
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.sort_by(|&a, &b| q[b].partial_cmp(&q[a]).unwrap().then(a.cmp(&b)));
    order.truncate(k);
    order
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QualityMode {
    UniformRandom,
    /// Blob 0 draws qualities from `[0.5, 1)`, every other blob from `[0, 0.5)`.
    ClusterCorrelated,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub n: usize,
    pub dim: usize,
    pub n_blobs: usize,
    pub blob_sigma: f64,
    pub quality_mode: QualityMode,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn new(
        n: usize,
        dim: usize,
        n_blobs: usize,
        blob_sigma: f64,
        quality_mode: QualityMode,
        seed: u64,
    ) -> Self {
        SyntheticSpec {
            n,
            dim,
            n_blobs,
            blob_sigma,
            quality_mode,
            seed,
        }
    }

    /// The 3000-point, 20-blob mixture used by the acceptance suite.
    pub fn acceptance_fixture(quality_mode: QualityMode) -> Self {
        SyntheticSpec::new(3000, 32, 20, 0.6, quality_mode, 20_240_917)
    }
}

/// Blob membership of each generated point.
pub fn synthetic_labels(spec: &SyntheticSpec) -> Vec<usize> {
    generate(spec).1
}

/// Gaussian-mixture dataset with ids `p0000…`. Deterministic in `spec`.
pub fn make_synthetic(spec: &SyntheticSpec) -> Dataset {
    generate(spec).0
}

fn generate(spec: &SyntheticSpec) -> (Dataset, Vec<usize>) {
    assert!(
        spec.n >= spec.n_blobs && spec.n_blobs >= 1,
        "need n >= n_blobs >= 1"
    );
    assert!(spec.blob_sigma > 0.0 && spec.dim >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let normal = |rng: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };
    let centers: Vec<Vec<f64>> = (0..spec.n_blobs)
        .map(|_| (0..spec.dim).map(|_| normal(&mut rng)).collect())
        .collect();
    let width = (spec.n as f64).log10().ceil().max(1.0) as usize;
    let mut labels = Vec::with_capacity(spec.n);
    let points = (0..spec.n)
        .map(|i| {
            let blob = if i < spec.n_blobs {
                i
            } else {
                rng.gen_range(0..spec.n_blobs)
            };
            labels.push(blob);
            let mut embedding: Vec<f64> = centers[blob]
                .iter()
                .map(|c| c + spec.blob_sigma * normal(&mut rng))
                .collect();
            if embedding.iter().all(|&x| x == 0.0) {
                embedding[0] = 1.0;
            }
            let u: f64 = rng.gen();
            let quality = match spec.quality_mode {
                QualityMode::UniformRandom => u,
                QualityMode::ClusterCorrelated if blob == 0 => 0.5 + 0.5 * u,
                QualityMode::ClusterCorrelated => 0.5 * u,
            };
            DataPoint {
                id: format!("p{i:0width$}"),
                text: String::new(),
                quality,
                embedding,
            }
        })
        .collect();
    (
        Dataset::from_points(points).expect("synthetic points are valid"),
        labels,
    )
}
