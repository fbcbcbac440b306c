//! Recovery scoring that is blind to the inherent ambiguities of source
//! separation: per-pair absolute Pearson correlation (sign-blind,
//! scale-blind) maximized over all assignments of estimated to true sources
//! (order-blind).
//!
//! The assignment search is exhaustive over all `n!` permutations, which is
//! exact and instant for the source counts this crate targets (`n ≤ 8`).

use itertools::Itertools;
use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest source count the exhaustive assignment search accepts.
pub const MAX_MATCH_SOURCES: usize = 8;

/// Absolute Pearson correlation `|r|` between two equally long signals.
///
/// # Errors
/// - `DimensionMismatch` when lengths differ.
/// - `InvalidArgument` for signals shorter than 2 samples.
/// - `UndefinedCorrelation` when either signal is numerically constant.
pub fn pearson_abs_corr(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!(
            "signals have lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "correlation needs at least 2 samples, got {}",
            a.len()
        )));
    }
    let n = a.len() as f64;
    let ma = a.sum() / n;
    let mb = b.sum() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        let da = x - ma;
        let db = y - mb;
        cov += da * db;
        va += da * da;
        vb += db * db;
    }
    let floor = |mean: f64| {
        let tol = f64::EPSILON * 16.0 * (1.0 + mean.abs());
        n * tol * tol
    };
    if va <= floor(ma) || vb <= floor(mb) {
        return Err(Error::UndefinedCorrelation(
            "a constant signal has no defined correlation".into(),
        ));
    }
    // Rounding can push |r| a hair above 1 for perfectly collinear inputs.
    Ok((cov / (va * vb).sqrt()).abs().min(1.0))
}

/// Best assignment of estimated to true sources and its scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchReport {
    /// `permutation[j]` is the 0-based true-source column matched to
    /// estimated column `j`; a bijection over the columns.
    pub permutation: Vec<usize>,
    /// `|r|` between estimated column `j` and its matched true column.
    pub per_pair_abs_corr: Vec<f64>,
    /// Arithmetic mean of `per_pair_abs_corr`.
    pub mean_abs_corr: f64,
}

/// Score recovered sources against the ground truth: maximize the mean
/// absolute Pearson correlation over all column assignments.
///
/// Ties between assignments keep the lexicographically smallest permutation
/// (permutations are enumerated in lexicographic order and replaced only on
/// strict improvement).
///
/// # Errors
/// - `DimensionMismatch` when the matrices differ in shape.
/// - `UnsupportedSize` for more than [`MAX_MATCH_SOURCES`] sources.
/// - Propagates [`pearson_abs_corr`] errors (constant columns, short signals).
pub fn permutation_match(
    estimated: ArrayView2<f64>,
    truth: ArrayView2<f64>,
) -> Result<MatchReport> {
    if estimated.dim() != truth.dim() {
        return Err(Error::DimensionMismatch(format!(
            "estimated is {:?}, truth is {:?}",
            estimated.dim(),
            truth.dim()
        )));
    }
    let n = estimated.ncols();
    if n == 0 {
        return Err(Error::InvalidArgument("no sources to match".into()));
    }
    if n > MAX_MATCH_SOURCES {
        return Err(Error::UnsupportedSize(format!(
            "exhaustive matching supports up to {MAX_MATCH_SOURCES} sources, got {n}"
        )));
    }

    // All |r| values up front: corr[est][true].
    let mut corr = Array2::<f64>::zeros((n, n));
    for je in 0..n {
        for jt in 0..n {
            corr[[je, jt]] = pearson_abs_corr(estimated.column(je), truth.column(jt))?;
        }
    }

    let mut best_perm: Option<Vec<usize>> = None;
    let mut best_sum = f64::NEG_INFINITY;
    for perm in (0..n).permutations(n) {
        let sum: f64 = perm.iter().enumerate().map(|(je, &jt)| corr[[je, jt]]).sum();
        if sum > best_sum {
            best_sum = sum;
            best_perm = Some(perm);
        }
    }
    let permutation = best_perm.expect("at least one permutation exists");
    let per_pair_abs_corr: Vec<f64> =
        permutation.iter().enumerate().map(|(je, &jt)| corr[[je, jt]]).collect();
    let mean_abs_corr = per_pair_abs_corr.iter().sum::<f64>() / n as f64;
    Ok(MatchReport { permutation, per_pair_abs_corr, mean_abs_corr })
}
