//! Facility-location diversity: `d(A) = Σ_v max_{a∈A} sim(a, v)`, reported as
//! a mean over the ground set, plus its incremental evaluation.
//!
//! Selection runs against a [`SimilarityBackend`]. The dense backend holds the
//! full `n × n` matrix of clamped f64 similarities; the streaming backend keeps
//! f32 unit embeddings and recomputes similarities on demand. Reporting
//! (`fl_score`) always uses exact f64 similarities from the dataset.
//!
//! Gains are summed over fixed blocks of `GAIN_CHUNK` ground points, block
//! partials added in order. The sum is identical whether a candidate is
//! evaluated alone (block partials computed in parallel) or in a batch
//! (candidates in parallel), and it is monotone under entrywise growth of the
//! coverage vector, so cached gains stay exact upper bounds.

use rayon::prelude::*;

use crate::error::{QditError, Result};
use crate::kernel;
use crate::types::Dataset;

pub(crate) const GAIN_CHUNK: usize = 1024;

/// Candidate batches below this size are evaluated on the calling thread.
const PAR_MIN_CANDIDATES: usize = 8;

/// Clamped cosine similarity of points `a` and `v` in f64, with `sim(a, a) = 1`.
#[inline]
pub fn exact_sim(dataset: &Dataset, a: usize, v: usize) -> f64 {
    if a == v {
        1.0
    } else {
        kernel::dot_f64(dataset.embedding(a), dataset.embedding(v)).clamp(0.0, 1.0)
    }
}

/// Normalized facility-location score of `subset`; zero for the empty set.
pub fn fl_score(dataset: &Dataset, subset: &[usize]) -> Result<f64> {
    dataset.check_subset(subset)?;
    if subset.is_empty() {
        return Ok(0.0);
    }
    let n = dataset.len();
    let partials: Vec<f64> = (0..n.div_ceil(GAIN_CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut part = 0.0;
            for v in c * GAIN_CHUNK..((c + 1) * GAIN_CHUNK).min(n) {
                let best = subset
                    .iter()
                    .map(|&a| exact_sim(dataset, a, v))
                    .fold(0.0f64, f64::max);
                part += best;
            }
            part
        })
        .collect();
    Ok(partials.iter().sum::<f64>() / n as f64)
}

#[derive(Debug)]
pub struct DenseSimilarity {
    n: usize,
    sims: Vec<f64>,
}

#[derive(Debug)]
pub struct StreamingSimilarity {
    n: usize,
    dim: usize,
    emb: Vec<f32>,
}

/// Source of `sim(a, v)` values for selection.
#[derive(Debug)]
pub enum SimilarityBackend {
    Dense(DenseSimilarity),
    Streaming(StreamingSimilarity),
}

impl SimilarityBackend {
    /// Dense when the dataset has at most `dense_cap` points, streaming above.
    pub fn for_dataset(dataset: &Dataset, dense_cap: usize) -> Self {
        if dataset.len() <= dense_cap {
            Self::dense(dataset)
        } else {
            Self::streaming(dataset)
        }
    }

    pub fn dense(dataset: &Dataset) -> Self {
        let n = dataset.len();
        let mut sims = vec![0.0; n * n];
        sims.par_chunks_mut(n).enumerate().for_each(|(a, row)| {
            for (v, s) in row.iter_mut().enumerate() {
                *s = exact_sim(dataset, a, v);
            }
        });
        SimilarityBackend::Dense(DenseSimilarity { n, sims })
    }

    pub fn streaming(dataset: &Dataset) -> Self {
        let emb = dataset
            .unit_embeddings()
            .iter()
            .map(|&x| x as f32)
            .collect();
        SimilarityBackend::Streaming(StreamingSimilarity {
            n: dataset.len(),
            dim: dataset.dim(),
            emb,
        })
    }

    pub fn len(&self) -> usize {
        match self {
            SimilarityBackend::Dense(d) => d.n,
            SimilarityBackend::Streaming(s) => s.n,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_dense(&self) -> bool {
        matches!(self, SimilarityBackend::Dense(_))
    }

    /// `sim(a, v)` for a single pair.
    pub fn sim(&self, a: usize, v: usize) -> f64 {
        match self {
            SimilarityBackend::Dense(d) => d.sims[a * d.n + v],
            SimilarityBackend::Streaming(s) => {
                let mut out = [0.0];
                kernel::sim_row_f32(&s.emb, s.dim, a, v..v + 1, &mut out);
                out[0]
            }
        }
    }

    /// Writes `sim(a, v)` for every `v` into `out`.
    fn sim_row(&self, a: usize, out: &mut [f64]) {
        match self {
            SimilarityBackend::Dense(d) => out.copy_from_slice(&d.sims[a * d.n..(a + 1) * d.n]),
            SimilarityBackend::Streaming(s) => {
                out.par_chunks_mut(GAIN_CHUNK)
                    .enumerate()
                    .for_each(|(c, o)| {
                        let start = c * GAIN_CHUNK;
                        kernel::sim_row_f32(&s.emb, s.dim, a, start..start + o.len(), o);
                    });
            }
        }
    }

    /// Unnormalized coverage gain of one candidate, block partials in parallel.
    fn gain_sum_single(&self, cur_max: &[f64], a: usize) -> f64 {
        let partials: Vec<f64> = match self {
            SimilarityBackend::Dense(d) => d.sims[a * d.n..(a + 1) * d.n]
                .par_chunks(GAIN_CHUNK)
                .zip(cur_max.par_chunks(GAIN_CHUNK))
                .map(|(s, c)| chunk_gain(s, c))
                .collect(),
            SimilarityBackend::Streaming(s) => cur_max
                .par_chunks(GAIN_CHUNK)
                .enumerate()
                .map(|(c, cm)| {
                    let start = c * GAIN_CHUNK;
                    let mut sims = vec![0.0; cm.len()];
                    kernel::sim_row_f32(&s.emb, s.dim, a, start..start + cm.len(), &mut sims);
                    chunk_gain(&sims, cm)
                })
                .collect(),
        };
        let mut total = 0.0;
        for p in partials {
            total += p;
        }
        total
    }

    /// Unnormalized coverage gains of many candidates, candidates in parallel.
    fn gain_sums(&self, cur_max: &[f64], candidates: &[usize], out: &mut [f64]) {
        match self {
            SimilarityBackend::Dense(d) => {
                let one = |a: usize| {
                    let row = &d.sims[a * d.n..(a + 1) * d.n];
                    let mut total = 0.0;
                    for (s, c) in row.chunks(GAIN_CHUNK).zip(cur_max.chunks(GAIN_CHUNK)) {
                        total += chunk_gain(s, c);
                    }
                    total
                };
                if candidates.len() < PAR_MIN_CANDIDATES {
                    out.iter_mut()
                        .zip(candidates)
                        .for_each(|(o, &a)| *o = one(a));
                } else {
                    out.par_iter_mut()
                        .zip(candidates.par_iter())
                        .for_each(|(o, &a)| *o = one(a));
                }
            }
            SimilarityBackend::Streaming(s) => {
                const GROUP: usize = 128;
                out.par_chunks_mut(GROUP)
                    .zip(candidates.par_chunks(GROUP))
                    .for_each(|(o, c)| {
                        kernel::coverage_gains_f32(&s.emb, s.dim, cur_max, c, GAIN_CHUNK, o)
                    });
            }
        }
    }
}

#[inline]
fn chunk_gain(sims: &[f64], cur_max: &[f64]) -> f64 {
    let mut part = 0.0;
    for (s, c) in sims.iter().zip(cur_max) {
        part += (s - c).max(0.0);
    }
    part
}

#[inline]
fn ordered_sum(values: &[f64]) -> f64 {
    let mut total = 0.0;
    for chunk in values.chunks(GAIN_CHUNK) {
        let mut part = 0.0;
        for x in chunk {
            part += x;
        }
        total += part;
    }
    total
}

/// Per-ground-point coverage of the current selection: the incremental form
/// of the facility-location function.
#[derive(Debug, Clone)]
pub struct CoverageState {
    cur_max: Vec<f64>,
    total: f64,
    selected: Vec<bool>,
    n_selected: usize,
}

impl CoverageState {
    pub fn new(n: usize) -> Self {
        CoverageState {
            cur_max: vec![0.0; n],
            total: 0.0,
            selected: vec![false; n],
            n_selected: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.cur_max.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cur_max.is_empty()
    }

    pub fn cur_max(&self) -> &[f64] {
        &self.cur_max
    }

    /// `Σ_v cur_max[v]`.
    pub fn total(&self) -> f64 {
        self.total
    }

    /// `total / n`, the normalized facility-location score of the selection.
    pub fn score(&self) -> f64 {
        self.total / self.len() as f64
    }

    pub fn is_selected(&self, i: usize) -> bool {
        self.selected[i]
    }

    pub fn selected_count(&self) -> usize {
        self.n_selected
    }

    fn check_candidate(&self, candidate: usize) -> Result<()> {
        if candidate >= self.len() {
            return Err(QditError::IndexOutOfRange {
                index: candidate,
                len: self.len(),
            });
        }
        if self.selected[candidate] {
            return Err(QditError::AlreadySelected { index: candidate });
        }
        Ok(())
    }

    /// Normalized gain `d(A ∪ {a}) − d(A)`; does not modify the state.
    pub fn marginal_gain(&self, backend: &SimilarityBackend, candidate: usize) -> Result<f64> {
        self.check_candidate(candidate)?;
        Ok(backend.gain_sum_single(&self.cur_max, candidate) / self.len() as f64)
    }

    /// Normalized gains of every candidate, in input order. Each value equals
    /// `marginal_gain` of that candidate exactly.
    pub fn marginal_gains(
        &self,
        backend: &SimilarityBackend,
        candidates: &[usize],
    ) -> Result<Vec<f64>> {
        for &c in candidates {
            self.check_candidate(c)?;
        }
        let mut out = vec![0.0; candidates.len()];
        backend.gain_sums(&self.cur_max, candidates, &mut out);
        let n = self.len() as f64;
        out.iter_mut().for_each(|g| *g /= n);
        Ok(out)
    }

    /// Adds `candidate` to the selection and returns the realized normalized
    /// gain, which equals the preceding `marginal_gain` exactly.
    pub fn commit(&mut self, backend: &SimilarityBackend, candidate: usize) -> Result<f64> {
        self.check_candidate(candidate)?;
        let n = self.len();
        let mut sims = vec![0.0; n];
        backend.sim_row(candidate, &mut sims);
        let mut gain = 0.0;
        for (s, c) in sims
            .chunks(GAIN_CHUNK)
            .zip(self.cur_max.chunks_mut(GAIN_CHUNK))
        {
            let mut part = 0.0;
            for (s, c) in s.iter().zip(c.iter_mut()) {
                part += (s - *c).max(0.0);
                *c = c.max(*s);
            }
            gain += part;
        }
        self.selected[candidate] = true;
        self.n_selected += 1;
        self.total = ordered_sum(&self.cur_max);
        Ok(gain / n as f64)
    }
}
