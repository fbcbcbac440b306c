//! Gaussian-process energies of latent source trajectories and their exact
//! gradients with respect to the trajectory and the log length-scale.
//!
//! For a source `s` with covariance `K`: `E(s) = ½·sᵀK⁻¹s + ½·log|K|`. The
//! gradient in `s` is `K⁻¹s`; the gradient in `η = log ℓ` is
//! `ℓ·(½·tr(K⁻¹·∂K/∂ℓ) − ½·αᵀ·(∂K/∂ℓ)·α)` with `α = K⁻¹s`.
//!
//! [`per_source_stats`] fuses energy and both gradients for every source in
//! one pass over the factorizations; with the `parallel` feature it fans the
//! sources out over a thread pool. Results are collected by source index and
//! each source's arithmetic is single-threaded with a fixed operation order,
//! so sequential and parallel builds produce bit-identical numbers.

use ndarray::{Array1, Array2, ArrayView1};

use crate::error::{Error, Result};
use crate::kernel::{
    build_rbf_covariance, cholesky, kernel_lengthscale_derivative, log_determinant,
    solve_and_quadform, CholFactor, IndexGrid, KernelSpec,
};

/// Energy of one trajectory under its factored covariance:
/// `½·sᵀK⁻¹s + ½·log|K|`.
///
/// # Errors
/// `DimensionMismatch` when the trajectory length does not match the factor.
pub fn gp_energy(s: ArrayView1<f64>, factor: &CholFactor) -> Result<f64> {
    let (_, quad) = solve_and_quadform(factor, s)?;
    Ok(0.5 * quad + 0.5 * log_determinant(factor))
}

/// Gradient of the energy with respect to the trajectory: `α = K⁻¹s`.
///
/// # Errors
/// `DimensionMismatch` when the trajectory length does not match the factor.
pub fn gp_energy_grad_latent(factor: &CholFactor, s: ArrayView1<f64>) -> Result<Array1<f64>> {
    let (alpha, _) = solve_and_quadform(factor, s)?;
    Ok(alpha)
}

/// Gradient of the energy with respect to the log length-scale `η = log ℓ`.
///
/// `factor` must be the Cholesky factorization of the covariance built from
/// `grid` and `spec`; passing a mismatched factor silently yields the wrong
/// number, so the call sites keep the pairing local.
///
/// # Errors
/// - `DimensionMismatch` when dimensions disagree.
/// - `NumericalInstability` when the result is not finite.
pub fn gp_energy_grad_logscale(
    grid: &IndexGrid,
    spec: &KernelSpec,
    s: ArrayView1<f64>,
    factor: &CholFactor,
) -> Result<f64> {
    if grid.len() != factor.dim() {
        return Err(Error::DimensionMismatch(format!(
            "grid has {} points, factor is {}×{}",
            grid.len(),
            factor.dim(),
            factor.dim()
        )));
    }
    let (alpha, _) = solve_and_quadform(factor, s)?;
    let d = kernel_lengthscale_derivative(grid, spec);
    let g = logscale_grad_from_parts(spec, factor, &alpha, &d)?;
    if !g.is_finite() {
        return Err(Error::NumericalInstability(format!(
            "log length-scale gradient is {g}"
        )));
    }
    Ok(g)
}

/// Shared core of the `η` gradient: `ℓ·(½·tr(K⁻¹D) − ½·αᵀDα)`.
fn logscale_grad_from_parts(
    spec: &KernelSpec,
    factor: &CholFactor,
    alpha: &Array1<f64>,
    d: &Array2<f64>,
) -> Result<f64> {
    let trace = factor.trace_inverse_times(d)?;
    let quad = symmetric_quadform(d, alpha);
    Ok(spec.length_scale() * (0.5 * trace - 0.5 * quad))
}

/// `αᵀDα` for symmetric `D`, summed in a fixed row-major order.
fn symmetric_quadform(d: &Array2<f64>, alpha: &Array1<f64>) -> f64 {
    let t = alpha.len();
    let mut total = 0.0;
    for i in 0..t {
        let row = d.row(i);
        let mut acc = row[i] * alpha[i] * alpha[i];
        for j in (i + 1)..t {
            acc += 2.0 * row[j] * alpha[i] * alpha[j];
        }
        total += acc;
    }
    total
}

/// Per-source energies of a latent matrix, split into their quadratic and
/// log-determinant parts.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceEnergyReport {
    /// `E_j` for each source, in column order.
    pub per_source_energy: Vec<f64>,
    /// Sum of the per-source energies, accumulated in column order.
    pub total: f64,
    /// `s_jᵀK_j⁻¹s_j` per source.
    pub per_source_quad: Vec<f64>,
    /// `log|K_j|` per source.
    pub per_source_logdet: Vec<f64>,
}

/// Energies of all columns of `latents` under the matching factors.
///
/// `total` is the per-source sum left-to-right, so it is bit-identical to
/// summing `per_source_energy` in order.
///
/// # Errors
/// `DimensionMismatch` when the factor count differs from the column count or
/// any factor dimension differs from the row count.
pub fn structural_energy(
    latents: &Array2<f64>,
    factors: &[CholFactor],
) -> Result<SourceEnergyReport> {
    let n = latents.ncols();
    if factors.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} factors for {n} sources",
            factors.len()
        )));
    }
    let mut per_source_energy = Vec::with_capacity(n);
    let mut per_source_quad = Vec::with_capacity(n);
    let mut per_source_logdet = Vec::with_capacity(n);
    let mut total = 0.0;
    for (j, factor) in factors.iter().enumerate() {
        let col = to_contiguous(latents.column(j));
        let (_, quad) = solve_and_quadform(factor, ArrayView1::from(&col[..]))?;
        let logdet = log_determinant(factor);
        let energy = 0.5 * quad + 0.5 * logdet;
        per_source_energy.push(energy);
        per_source_quad.push(quad);
        per_source_logdet.push(logdet);
        total += energy;
    }
    Ok(SourceEnergyReport { per_source_energy, total, per_source_quad, per_source_logdet })
}

/// Everything the trainer needs from one source in one pass.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceStat {
    /// `½·quad + ½·log_det`.
    pub energy: f64,
    /// `s_jᵀK_j⁻¹s_j`.
    pub quad: f64,
    /// `log|K_j|`.
    pub log_det: f64,
    /// `α_j = K_j⁻¹s_j` — the energy gradient in the trajectory.
    pub alpha: Array1<f64>,
    /// Energy gradient in `η_j = log ℓ_j`; `0.0` when gradients were skipped.
    pub grad_logscale: f64,
}

/// Build covariance, factorize, and evaluate one source end to end.
fn one_source_stat(
    column: &[f64],
    grid: &IndexGrid,
    spec: &KernelSpec,
    with_grads: bool,
) -> Result<SourceStat> {
    let k = build_rbf_covariance(grid, spec);
    let factor = cholesky(&k)?;
    let (alpha, quad) = solve_and_quadform(&factor, ArrayView1::from(column))?;
    let log_det = log_determinant(&factor);
    let energy = 0.5 * quad + 0.5 * log_det;
    let grad_logscale = if with_grads {
        let d = kernel_lengthscale_derivative(grid, spec);
        let g = logscale_grad_from_parts(spec, &factor, &alpha, &d)?;
        if !g.is_finite() {
            return Err(Error::NumericalInstability(format!(
                "log length-scale gradient is {g}"
            )));
        }
        g
    } else {
        0.0
    };
    Ok(SourceStat { energy, quad, log_det, alpha, grad_logscale })
}

fn check_stat_shapes(latents: &Array2<f64>, grid: &IndexGrid, specs: &[KernelSpec]) -> Result<()> {
    if latents.nrows() != grid.len() {
        return Err(Error::DimensionMismatch(format!(
            "latents have {} rows, grid has {} points",
            latents.nrows(),
            grid.len()
        )));
    }
    if latents.ncols() != specs.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} kernel specs for {} sources",
            specs.len(),
            latents.ncols()
        )));
    }
    Ok(())
}

/// Sequential per-source driver: one [`SourceStat`] per latent column.
pub fn per_source_stats_seq(
    latents: &Array2<f64>,
    grid: &IndexGrid,
    specs: &[KernelSpec],
    with_grads: bool,
) -> Result<Vec<SourceStat>> {
    check_stat_shapes(latents, grid, specs)?;
    specs
        .iter()
        .enumerate()
        .map(|(j, spec)| {
            let col = to_contiguous(latents.column(j));
            one_source_stat(&col, grid, spec, with_grads)
        })
        .collect()
}

/// Parallel per-source driver: sources fan out across the rayon pool and are
/// collected back in column order, so the output is bit-identical to
/// [`per_source_stats_seq`].
#[cfg(feature = "parallel")]
pub fn per_source_stats_par(
    latents: &Array2<f64>,
    grid: &IndexGrid,
    specs: &[KernelSpec],
    with_grads: bool,
) -> Result<Vec<SourceStat>> {
    use rayon::prelude::*;

    check_stat_shapes(latents, grid, specs)?;
    let columns: Vec<Vec<f64>> =
        (0..latents.ncols()).map(|j| to_contiguous(latents.column(j))).collect();
    columns
        .par_iter()
        .zip(specs.par_iter())
        .map(|(col, spec)| one_source_stat(col, grid, spec, with_grads))
        .collect()
}

/// Per-source energies and gradients; parallel when the `parallel` feature is
/// enabled, sequential otherwise. Both paths return bit-identical numbers.
pub fn per_source_stats(
    latents: &Array2<f64>,
    grid: &IndexGrid,
    specs: &[KernelSpec],
    with_grads: bool,
) -> Result<Vec<SourceStat>> {
    #[cfg(feature = "parallel")]
    {
        per_source_stats_par(latents, grid, specs, with_grads)
    }
    #[cfg(not(feature = "parallel"))]
    {
        per_source_stats_seq(latents, grid, specs, with_grads)
    }
}

/// Copy a (possibly strided) column view into a contiguous buffer.
fn to_contiguous(v: ArrayView1<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}
