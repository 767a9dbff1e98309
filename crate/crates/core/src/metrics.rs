//! Subset quality/diversity metrics and the α tradeoff sweep.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{QditError, Result};
use crate::facility::{fl_score, SimilarityBackend};
use crate::io::atomic_write;
use crate::select::select;
use crate::types::{Dataset, SelectionConfig};

/// `(diversity, mean_quality)` of a subset. Mean quality of the empty set is 0.
pub fn subset_metrics(dataset: &Dataset, subset: &[usize]) -> Result<(f64, f64)> {
    let diversity = fl_score(dataset, subset)?;
    let mean_quality = if subset.is_empty() {
        0.0
    } else {
        let q = dataset.normalized_quality();
        subset.iter().map(|&i| q[i]).sum::<f64>() / subset.len() as f64
    };
    Ok((diversity, mean_quality))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TradeoffPoint {
    /// `None` for the random baseline.
    pub alpha: Option<f64>,
    pub diversity: f64,
    pub mean_quality: f64,
    pub k_select: usize,
    pub algorithm: String,
    pub seed: u64,
}

pub const RANDOM_TAG: &str = "random";

/// One selection per α with everything else taken from `base`, in input order.
pub fn sweep_alpha(
    dataset: &Dataset,
    backend: &SimilarityBackend,
    alphas: &[f64],
    base: &SelectionConfig,
) -> Result<Vec<TradeoffPoint>> {
    if alphas.is_empty() {
        return Err(QditError::InvalidConfig("alpha list is empty".into()));
    }
    alphas
        .par_iter()
        .map(|&alpha| {
            let config = SelectionConfig {
                alpha,
                ..base.clone()
            };
            let r = select(dataset, backend, &config)?;
            Ok(TradeoffPoint {
                alpha: Some(alpha),
                diversity: r.diversity,
                mean_quality: r.mean_quality,
                k_select: config.k_select,
                algorithm: config.algorithm.to_string(),
                seed: config.seed,
            })
        })
        .collect()
}

/// Uniform `k_select`-subset drawn without replacement.
pub fn random_subset(n: usize, k_select: usize, seed: u64) -> Result<Vec<usize>> {
    if k_select > n {
        return Err(QditError::InvalidConfig(format!(
            "k = {k_select} exceeds dataset size {n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(rand::seq::index::sample(&mut rng, n, k_select).into_vec())
}

pub fn random_baseline(dataset: &Dataset, k_select: usize, seed: u64) -> Result<TradeoffPoint> {
    let subset = random_subset(dataset.len(), k_select, seed)?;
    let (diversity, mean_quality) = subset_metrics(dataset, &subset)?;
    Ok(TradeoffPoint {
        alpha: None,
        diversity,
        mean_quality,
        k_select,
        algorithm: RANDOM_TAG.into(),
        seed,
    })
}

/// Formats `x` in plain decimal notation with 9 significant digits.
pub fn format_sig9(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{:.8}", x);
    }
    let magnitude = x.abs().log10().floor() as i32;
    let decimals = (8 - magnitude).max(0) as usize;
    let s = format!("{:.*}", decimals, x);
    // rounding can carry into a new leading digit (9.999999999 -> 10.00000000)
    let digits = s.chars().filter(|c| c.is_ascii_digit()).collect::<String>();
    let significant = digits.trim_start_matches('0').len();
    if significant > 9 && decimals > 0 {
        format!("{:.*}", decimals - 1, x)
    } else {
        s
    }
}

pub const SWEEP_HEADER: &str = "alpha,algorithm,k,seed,diversity,mean_quality";

pub fn sweep_csv(points: &[TradeoffPoint]) -> String {
    let mut out = String::from(SWEEP_HEADER);
    out.push('\n');
    for p in points {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            p.alpha.map(format_sig9).unwrap_or_default(),
            p.algorithm,
            p.k_select,
            p.seed,
            format_sig9(p.diversity),
            format_sig9(p.mean_quality)
        ));
    }
    out
}

pub fn write_sweep_csv(points: &[TradeoffPoint], path: &Path) -> Result<()> {
    let csv = sweep_csv(points);
    atomic_write(path, |w| w.write_all(csv.as_bytes()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testkit::{
        brute_fl_score, make_synthetic, top_k_quality, QualityMode, SyntheticSpec,
    };
    use crate::types::Algorithm;

    #[test]
    fn metrics_of_full_and_top_sets() {
        let ds = make_synthetic(&SyntheticSpec::new(
            10,
            4,
            2,
            0.5,
            QualityMode::UniformRandom,
            5,
        ));
        let all: Vec<usize> = (0..10).collect();
        assert_eq!(subset_metrics(&ds, &all).unwrap().0, 1.0);
        let top = top_k_quality(&ds, 1);
        assert_eq!(subset_metrics(&ds, &top).unwrap().1, 1.0);
        assert_eq!(subset_metrics(&ds, &[]).unwrap(), (0.0, 0.0));
        let (d, _) = subset_metrics(&ds, &[2, 5, 9]).unwrap();
        assert!((d - brute_fl_score(&ds, &[2, 5, 9]).unwrap()).abs() < 1e-9);
        assert!(subset_metrics(&ds, &[10]).is_err());
    }

    #[test]
    fn sweep_endpoints() {
        let ds = make_synthetic(&SyntheticSpec::new(
            120,
            6,
            4,
            0.4,
            QualityMode::ClusterCorrelated,
            2,
        ));
        let backend = SimilarityBackend::dense(&ds);
        let base = SelectionConfig::new(Algorithm::Lazy, 10, 0.0);
        let pts = sweep_alpha(&ds, &backend, &[0.0, 0.5, 1.0], &base).unwrap();
        assert_eq!(pts.len(), 3);
        assert_eq!(
            pts.iter().map(|p| p.alpha.unwrap()).collect::<Vec<_>>(),
            vec![0.0, 0.5, 1.0]
        );
        let (_, top_q) = subset_metrics(&ds, &top_k_quality(&ds, 10)).unwrap();
        assert_eq!(pts[2].mean_quality, top_q);
        let greedy = select(
            &ds,
            &backend,
            &SelectionConfig::new(Algorithm::Greedy, 10, 0.0),
        )
        .unwrap();
        assert_eq!(pts[0].diversity, greedy.diversity);
        assert!(pts.iter().all(|p| p.mean_quality <= pts[2].mean_quality));
        assert!(sweep_alpha(&ds, &backend, &[], &base).is_err());
    }

    #[test]
    fn random_baseline_contract() {
        let ds = make_synthetic(&SyntheticSpec::new(
            50,
            4,
            2,
            0.5,
            QualityMode::UniformRandom,
            6,
        ));
        assert_eq!(random_baseline(&ds, 50, 1).unwrap().diversity, 1.0);
        assert_eq!(
            random_subset(50, 10, 3).unwrap(),
            random_subset(50, 10, 3).unwrap()
        );
        assert_ne!(
            random_subset(50, 10, 3).unwrap(),
            random_subset(50, 10, 4).unwrap()
        );
        assert!(random_baseline(&ds, 51, 1).is_err());
        assert_eq!(random_baseline(&ds, 5, 1).unwrap().algorithm, "random");
    }

    #[test]
    fn nine_significant_digits() {
        assert_eq!(format_sig9(0.569035594), "0.569035594");
        assert_eq!(format_sig9(1.0), "1.00000000");
        assert_eq!(format_sig9(0.1), "0.100000000");
        assert_eq!(format_sig9(0.0), "0.00000000");
        assert_eq!(format_sig9(123.456), "123.456000");
        assert_eq!(format_sig9(0.99999999999), "1.00000000");
        assert_eq!(format_sig9(0.000123456789123), "0.000123456789");
    }

    #[test]
    fn csv_layout() {
        let pts = vec![
            TradeoffPoint {
                alpha: Some(0.5),
                diversity: 0.25,
                mean_quality: 0.75,
                k_select: 3,
                algorithm: "lazy".into(),
                seed: 0,
            },
            TradeoffPoint {
                alpha: None,
                diversity: 0.125,
                mean_quality: 0.5,
                k_select: 3,
                algorithm: RANDOM_TAG.into(),
                seed: 9,
            },
        ];
        assert_eq!(
            sweep_csv(&pts),
            "alpha,algorithm,k,seed,diversity,mean_quality\n\
             0.500000000,lazy,3,0,0.250000000,0.750000000\n\
             ,random,3,9,0.125000000,0.500000000\n"
        );
    }
}
