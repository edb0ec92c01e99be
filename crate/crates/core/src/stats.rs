//! Summary statistics used by evaluation and the experiment reports.

use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{ensure, Result};

pub fn mean(x: &[f64]) -> f64 {
    if x.is_empty() {
        return f64::NAN;
    }
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample standard deviation (`n - 1` denominator); zero for one value.
pub fn std_dev(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    let m = mean(x);
    (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64).sqrt()
}

/// Midranks (1-based) of `x`, ties sharing their average rank.
fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut r = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            r[idx[k]] = avg;
        }
        i = j + 1;
    }
    r
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MannWhitney {
    /// `U` statistic of the first sample.
    pub u: f64,
    /// Normal-approximation z score with tie and continuity corrections.
    pub z: f64,
    /// One-sided p-value for "first sample tends to be larger".
    pub p_greater: f64,
    pub p_two_sided: f64,
}

/// Mann-Whitney U test of `a` against `b`.
pub fn mann_whitney(a: &[f64], b: &[f64]) -> Result<MannWhitney> {
    ensure(!a.is_empty() && !b.is_empty(), || {
        "Mann-Whitney needs two non-empty samples".into()
    })?;
    let n1 = a.len() as f64;
    let n2 = b.len() as f64;
    let all: Vec<f64> = a.iter().chain(b).copied().collect();
    let r = ranks(&all);
    let r1: f64 = r[..a.len()].iter().sum();
    let u = r1 - n1 * (n1 + 1.0) / 2.0;
    let n = n1 + n2;
    let mut tie_term = 0.0;
    let mut sorted = all.clone();
    sorted.sort_by(f64::total_cmp);
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    let mu = n1 * n2 / 2.0;
    let var = n1 * n2 / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
    let std = Normal::standard();
    if var <= 0.0 {
        return Ok(MannWhitney {
            u,
            z: 0.0,
            p_greater: 0.5,
            p_two_sided: 1.0,
        });
    }
    let sd = var.sqrt();
    let z_greater = (u - mu - 0.5) / sd;
    let z = (u - mu) / sd;
    let z_abs = ((u - mu).abs() - 0.5).max(0.0) / sd;
    Ok(MannWhitney {
        u,
        z,
        p_greater: 1.0 - std.cdf(z_greater),
        p_two_sided: (2.0 * (1.0 - std.cdf(z_abs))).min(1.0),
    })
}

/// Area under the ROC curve of `scores` against binary `labels`, counting
/// ties as one half.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    ensure(scores.len() == labels.len(), || {
        "scores and labels differ in length".into()
    })?;
    let pos: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l)
        .map(|(s, _)| *s)
        .collect();
    let neg: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter(|(_, &l)| !l)
        .map(|(s, _)| *s)
        .collect();
    ensure(!pos.is_empty() && !neg.is_empty(), || {
        "AUC needs both classes".into()
    })?;
    let u = mann_whitney(&pos, &neg)?.u;
    Ok(u / (pos.len() as f64 * neg.len() as f64))
}
