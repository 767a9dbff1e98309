//! Cosine similarity, the clamped variant used by every coverage computation,
//! and min-max quality normalization.

use crate::error::{QditError, Result};

/// Plain f64 dot product, sequential left-to-right accumulation.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `dot(a, b) / (|a| |b|)`, clamped to `[-1, 1]`.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(QditError::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 || !na.is_finite() || !nb.is_finite() {
        return Err(QditError::DegenerateEmbedding);
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Cosine similarity with negative values mapped to zero. This is the
/// `sim(a, v)` of the facility-location function.
pub fn clamped_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    cosine_similarity(a, b).map(|s| s.max(0.0))
}

/// Min-max normalization onto `[0, 1]`. A constant input maps to all zeros.
pub fn normalize_quality(raw: &[f64]) -> Result<Vec<f64>> {
    if raw.is_empty() {
        return Err(QditError::InvalidDataset("empty quality vector".into()));
    }
    if let Some(index) = raw.iter().position(|x| !x.is_finite()) {
        return Err(QditError::NonFinite { index });
    }
    let min = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == min {
        return Ok(vec![0.0; raw.len()]);
    }
    let span = max - min;
    Ok(raw
        .iter()
        .map(|&x| ((x - min) / span).clamp(0.0, 1.0))
        .collect())
}

/// Scales `v` to unit length in place.
pub fn unit_normalize(v: &mut [f64]) -> Result<()> {
    let n = norm(v);
    if n == 0.0 || !n.is_finite() {
        return Err(QditError::DegenerateEmbedding);
    }
    v.iter_mut().for_each(|x| *x /= n);
    Ok(())
}
