//! Rank correlation and its annotator-resampling bootstrap interval.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::hypothesis::mid_ranks;
use crate::error::{Error, Result};
use crate::rng::replicate_rng;

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman's rho: Pearson correlation of mid-ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::InvalidInput(format!("spearman inputs differ in length ({} vs {})", x.len(), y.len())));
    }
    if x.len() < 3 {
        return Err(Error::InvalidInput("spearman needs at least 3 paired values".into()));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("spearman input is not finite".into()));
    }
    pearson(&mid_ranks(x), &mid_ranks(y)).ok_or_else(|| Error::Numerical("spearman undefined for constant input".into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationCi {
    pub rho: f64,
    pub lo: f64,
    pub hi: f64,
    pub n_boot: usize,
    /// Replicates whose resampled means were constant and had no defined rho.
    pub skipped: usize,
    pub seed: u64,
}

/// Linear-interpolation percentile of sorted data, `q` in [0, 1].
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Spearman correlation between per-topic mean human scores and metric
/// scores, with a percentile 95% interval from resampling each topic's
/// annotations with replacement.
pub fn bootstrap_spearman_ci(annotations: &[Vec<f64>], metric_scores: &[f64], n_boot: usize, seed: u64) -> Result<CorrelationCi> {
    if annotations.len() != metric_scores.len() {
        return Err(Error::InvalidInput("one metric score per topic required".into()));
    }
    if n_boot < 100 {
        return Err(Error::InvalidInput(format!("n_boot must be at least 100, got {n_boot}")));
    }
    if let Some(i) = annotations.iter().position(Vec::is_empty) {
        return Err(Error::InvalidInput(format!("topic {i} has no annotations")));
    }
    let means: Vec<f64> = annotations.iter().map(|a| a.iter().sum::<f64>() / a.len() as f64).collect();
    let rho = spearman(&means, metric_scores)?;
    let reps: Vec<Option<f64>> = (0..n_boot as u64)
        .into_par_iter()
        .map(|b| {
            let mut rng = replicate_rng(seed, b);
            let resampled: Vec<f64> = annotations.iter().map(|a| (0..a.len()).map(|_| a[rng.random_range(0..a.len())]).sum::<f64>() / a.len() as f64).collect();
            spearman(&resampled, metric_scores).ok()
        })
        .collect();
    let mut ok: Vec<f64> = reps.iter().flatten().copied().collect();
    let skipped = n_boot - ok.len();
    if ok.is_empty() {
        return Err(Error::Numerical("every bootstrap replicate was degenerate".into()));
    }
    ok.sort_by(f64::total_cmp);
    Ok(CorrelationCi { rho, lo: percentile_sorted(&ok, 0.025), hi: percentile_sorted(&ok, 0.975), n_boot, skipped, seed })
}
