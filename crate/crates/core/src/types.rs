//! Domain types: data points, the dataset, selection configuration and results.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{QditError, Result};
use crate::similarity::{normalize_quality, unit_normalize};

/// Default sampling slack for stochastic greedy.
pub const DEFAULT_EPSILON: f64 = 0.01;
/// Default similarity threshold for threshold selection.
pub const DEFAULT_TAU: f64 = 0.5;
/// Default number of k-means clusters for cluster selection.
pub const DEFAULT_CLUSTERS: usize = 100;
/// Largest ground set for which the dense similarity matrix is built.
pub const DEFAULT_DENSE_CAP: usize = 20_000;

/// One record of the input dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct DataPoint {
    pub id: String,
    pub text: String,
    pub quality: f64,
    pub embedding: Vec<f64>,
}

/// Ordered ground set with a consistent embedding dimension.
///
/// Embeddings are kept twice: as supplied (for lossless saving) and unit
/// normalized (for every similarity computation). Record order is the input
/// order and never changes.
#[derive(Debug, Clone)]
pub struct Dataset {
    ids: Vec<String>,
    texts: Vec<String>,
    quality: Vec<f64>,
    normalized_quality: Vec<f64>,
    dim: usize,
    raw: Vec<f64>,
    unit: Vec<f64>,
}

impl Dataset {
    pub fn from_points(points: Vec<DataPoint>) -> Result<Self> {
        let Some(first) = points.first() else {
            return Err(QditError::InvalidDataset("dataset has no points".into()));
        };
        let dim = first.embedding.len();
        if dim == 0 {
            return Err(QditError::InvalidDataset(
                "embedding dimension is zero".into(),
            ));
        }
        let n = points.len();
        let mut ids = Vec::with_capacity(n);
        let mut texts = Vec::with_capacity(n);
        let mut quality = Vec::with_capacity(n);
        let mut raw = Vec::with_capacity(n * dim);
        let mut seen = HashSet::with_capacity(n);
        for (i, p) in points.into_iter().enumerate() {
            if p.embedding.len() != dim {
                return Err(QditError::InvalidDataset(format!(
                    "point {i} ({}) has dimension {}, expected {dim}",
                    p.id,
                    p.embedding.len()
                )));
            }
            if p.embedding.iter().any(|x| !x.is_finite()) {
                return Err(QditError::InvalidDataset(format!(
                    "point {i} ({}) has a non-finite embedding component",
                    p.id
                )));
            }
            if !p.quality.is_finite() {
                return Err(QditError::InvalidDataset(format!(
                    "point {i} ({}) has non-finite quality",
                    p.id
                )));
            }
            if !seen.insert(p.id.clone()) {
                return Err(QditError::InvalidDataset(format!(
                    "duplicate id {:?}",
                    p.id
                )));
            }
            raw.extend_from_slice(&p.embedding);
            ids.push(p.id);
            texts.push(p.text);
            quality.push(p.quality);
        }
        let normalized_quality = normalize_quality(&quality)?;
        let mut unit = raw.clone();
        for (i, row) in unit.chunks_exact_mut(dim).enumerate() {
            unit_normalize(row).map_err(|_| {
                QditError::InvalidDataset(format!(
                    "point {i} ({}) has a zero-norm embedding",
                    ids[i]
                ))
            })?;
        }
        Ok(Dataset {
            ids,
            texts,
            quality,
            normalized_quality,
            dim,
            raw,
            unit,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn id(&self, i: usize) -> &str {
        &self.ids[i]
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn text(&self, i: usize) -> &str {
        &self.texts[i]
    }

    pub fn raw_quality(&self) -> &[f64] {
        &self.quality
    }

    pub fn normalized_quality(&self) -> &[f64] {
        &self.normalized_quality
    }

    /// Unit-normalized embedding of point `i`.
    pub fn embedding(&self, i: usize) -> &[f64] {
        &self.unit[i * self.dim..(i + 1) * self.dim]
    }

    /// Embedding of point `i` as it was supplied.
    pub fn raw_embedding(&self, i: usize) -> &[f64] {
        &self.raw[i * self.dim..(i + 1) * self.dim]
    }

    /// Row-major `len × dim` unit embeddings.
    pub fn unit_embeddings(&self) -> &[f64] {
        &self.unit
    }

    pub fn point(&self, i: usize) -> DataPoint {
        DataPoint {
            id: self.ids[i].clone(),
            text: self.texts[i].clone(),
            quality: self.quality[i],
            embedding: self.raw_embedding(i).to_vec(),
        }
    }

    pub fn points(&self) -> impl Iterator<Item = DataPoint> + '_ {
        (0..self.len()).map(|i| self.point(i))
    }

    /// Checks that `subset` holds valid, distinct indices.
    pub fn check_subset(&self, subset: &[usize]) -> Result<()> {
        let mut seen = vec![false; self.len()];
        for &index in subset {
            if index >= self.len() {
                return Err(QditError::IndexOutOfRange {
                    index,
                    len: self.len(),
                });
            }
            if std::mem::replace(&mut seen[index], true) {
                return Err(QditError::DuplicateIndex { index });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Greedy,
    Lazy,
    Stochastic,
    /// Stochastic sampling with a lazy bound queue over each sample.
    StochasticLazy,
    Cluster,
    Threshold,
}

impl Algorithm {
    pub const ALL: [Algorithm; 6] = [
        Algorithm::Greedy,
        Algorithm::Lazy,
        Algorithm::Stochastic,
        Algorithm::StochasticLazy,
        Algorithm::Cluster,
        Algorithm::Threshold,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Greedy => "greedy",
            Algorithm::Lazy => "lazy",
            Algorithm::Stochastic => "stochastic",
            Algorithm::StochasticLazy => "stochastic-lazy",
            Algorithm::Cluster => "cluster",
            Algorithm::Threshold => "threshold",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = QditError;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| QditError::InvalidConfig(format!("unknown algorithm {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub alpha: f64,
    pub k_select: usize,
    pub algorithm: Algorithm,
    pub epsilon: Option<f64>,
    pub tau: Option<f64>,
    pub n_clusters: Option<usize>,
    pub seed: u64,
}

impl SelectionConfig {
    /// A configuration with the variant parameter of `algorithm` set to its default.
    pub fn new(algorithm: Algorithm, k_select: usize, alpha: f64) -> Self {
        let mut config = SelectionConfig {
            alpha,
            k_select,
            algorithm,
            epsilon: None,
            tau: None,
            n_clusters: None,
            seed: 0,
        };
        config.fill_defaults();
        config
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Sets the parameter the chosen algorithm needs, if it is missing.
    pub fn fill_defaults(&mut self) {
        match self.algorithm {
            Algorithm::Stochastic | Algorithm::StochasticLazy => {
                self.epsilon.get_or_insert(DEFAULT_EPSILON);
            }
            Algorithm::Threshold => {
                self.tau.get_or_insert(DEFAULT_TAU);
            }
            Algorithm::Cluster => {
                self.n_clusters.get_or_insert(DEFAULT_CLUSTERS);
            }
            Algorithm::Greedy | Algorithm::Lazy => {}
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        let bad = |m: String| Err(QditError::InvalidConfig(m));
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad(format!("alpha must lie in [0, 1], got {}", self.alpha));
        }
        if self.k_select == 0 {
            return bad("k must be at least 1".into());
        }
        if self.k_select > n {
            return bad(format!("k = {} exceeds dataset size {n}", self.k_select));
        }
        match self.algorithm {
            Algorithm::Stochastic | Algorithm::StochasticLazy => match self.epsilon {
                Some(e) if e > 0.0 && e < 1.0 => {}
                Some(e) => return bad(format!("epsilon must lie in (0, 1), got {e}")),
                None => return bad("epsilon is required for stochastic selection".into()),
            },
            Algorithm::Threshold => match self.tau {
                Some(t) if (0.0..=1.0).contains(&t) => {}
                Some(t) => return bad(format!("tau must lie in [0, 1], got {t}")),
                None => return bad("tau is required for threshold selection".into()),
            },
            Algorithm::Cluster => match self.n_clusters {
                Some(k) if k >= 1 && k <= n => {}
                Some(k) => {
                    return bad(format!("cluster count {k} must lie in [1, {n}]"));
                }
                None => return bad("cluster count is required for cluster selection".into()),
            },
            Algorithm::Greedy | Algorithm::Lazy => {}
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    /// Dataset indices in selection order.
    pub selected: Vec<usize>,
    /// Per-pick objective value. For the greedy family this is the Q-D gain
    /// of the pick; for the cluster and threshold variants it is the pick's
    /// normalized quality.
    pub objective_trace: Vec<f64>,
    pub diversity: f64,
    pub mean_quality: f64,
    pub config: SelectionConfig,
    /// Set when threshold selection ran out of candidates before reaching `k`.
    pub truncated: bool,
    /// Number of single-candidate gain evaluations performed.
    pub gain_evaluations: u64,
}
