//! Per-source RBF covariance matrices over the normalized index, their
//! Cholesky factorizations, and the solves / log-determinants / kernel
//! derivatives that every energy evaluation and gradient needs.
//!
//! All matrices are dense, row-major `f64`. Factorizations never form an
//! explicit matrix inverse: quadratic forms and traces are evaluated through
//! triangular solves against the factor. Every routine is a pure function of
//! its inputs and is deterministic, so per-source work can run in parallel
//! without changing any result.

use ndarray::{Array1, Array2, ArrayView1};

use crate::error::{Error, Result};

/// Normalized sample positions `u ∈ [0, 1]^T` shared by every source kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexGrid {
    values: Vec<f64>,
}

impl IndexGrid {
    /// Validate and wrap a grid: non-empty, finite, non-decreasing, inside
    /// `[0, 1]`.
    ///
    /// # Errors
    /// `InvalidArgument` when any of the above fails.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("index grid must be non-empty".into()));
        }
        for (i, &v) in values.iter().enumerate() {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidArgument(format!(
                    "grid entry {i} is {v}; entries must be finite and in [0, 1]"
                )));
            }
            if i > 0 && v < values[i - 1] {
                return Err(Error::InvalidArgument(format!(
                    "grid entry {i} ({v}) is smaller than its predecessor ({})",
                    values[i - 1]
                )));
            }
        }
        Ok(Self { values })
    }

    /// Number of sample positions.
    pub fn len(&self) -> usize {
        self.values.len()
    }

    /// True when the grid has no entries (never, for a constructed grid).
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// The positions as a slice.
    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }
}

/// Uniform normalized index: `u_i = i/(T-1)` for `T ≥ 2`, `[0]` for `T = 1`.
///
/// # Errors
/// `InvalidArgument` when `t == 0`.
pub fn normalized_index(t: usize) -> Result<IndexGrid> {
    if t == 0 {
        return Err(Error::InvalidArgument("index grid needs at least one sample".into()));
    }
    if t == 1 {
        return IndexGrid::new(vec![0.0]);
    }
    let denom = (t - 1) as f64;
    IndexGrid::new((0..t).map(|i| i as f64 / denom).collect())
}

/// RBF kernel hyperparameters for one source: signal variance `σ_f²`
/// (`amplitude`), diagonal `jitter` `ε`, and the `length_scale` `ℓ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    amplitude: f64,
    jitter: f64,
    length_scale: f64,
}

impl KernelSpec {
    /// Validate and construct. Amplitude and length-scale must be strictly
    /// positive and finite; jitter must be finite and non-negative (zero is
    /// allowed for analytically exact test matrices — training configs keep
    /// it strictly positive).
    ///
    /// # Errors
    /// `InvalidArgument` on any violated bound.
    pub fn new(amplitude: f64, jitter: f64, length_scale: f64) -> Result<Self> {
        if !amplitude.is_finite() || amplitude <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "kernel amplitude must be finite and > 0, got {amplitude}"
            )));
        }
        if !jitter.is_finite() || jitter < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "kernel jitter must be finite and >= 0, got {jitter}"
            )));
        }
        if !length_scale.is_finite() || length_scale <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "kernel length-scale must be finite and > 0, got {length_scale}"
            )));
        }
        Ok(Self { amplitude, jitter, length_scale })
    }

    /// Signal variance `σ_f²`.
    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    /// Diagonal jitter `ε`.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Length-scale `ℓ`.
    pub fn length_scale(&self) -> f64 {
        self.length_scale
    }
}

/// Dense RBF covariance over the grid:
/// `K(i,r) = σ_f²·exp(−(u_i−u_r)²/(2ℓ²)) + ε·δ_ir`.
///
/// The lower triangle is computed and mirrored, so the result is symmetric
/// bit-for-bit; diagonal entries are exactly `σ_f² + ε`.
pub fn build_rbf_covariance(grid: &IndexGrid, spec: &KernelSpec) -> Array2<f64> {
    let t = grid.len();
    let u = grid.as_slice();
    let inv_two_ell_sq = 1.0 / (2.0 * spec.length_scale * spec.length_scale);
    let mut k = Array2::<f64>::zeros((t, t));
    {
        let buf = k.as_slice_mut().expect("freshly allocated matrix is contiguous");
        for i in 0..t {
            for r in 0..i {
                let d = u[i] - u[r];
                let v = spec.amplitude * (-(d * d) * inv_two_ell_sq).exp();
                buf[i * t + r] = v;
                buf[r * t + i] = v;
            }
            buf[i * t + i] = spec.amplitude + spec.jitter;
        }
    }
    k
}

/// Entrywise derivative of the RBF covariance with respect to the
/// length-scale: `∂K/∂ℓ (i,r) = σ_f²·exp(−Δ²/(2ℓ²))·Δ²/ℓ³` with
/// `Δ = u_i − u_r`. The diagonal is exactly zero (the jitter does not depend
/// on `ℓ`). Symmetric bit-for-bit by the same mirroring as the covariance.
pub fn kernel_lengthscale_derivative(grid: &IndexGrid, spec: &KernelSpec) -> Array2<f64> {
    let t = grid.len();
    let u = grid.as_slice();
    let ell = spec.length_scale;
    let inv_two_ell_sq = 1.0 / (2.0 * ell * ell);
    let inv_ell_cubed = 1.0 / (ell * ell * ell);
    let mut d = Array2::<f64>::zeros((t, t));
    {
        let buf = d.as_slice_mut().expect("freshly allocated matrix is contiguous");
        for i in 0..t {
            for r in 0..i {
                let delta = u[i] - u[r];
                let sq = delta * delta;
                let v = spec.amplitude * (-sq * inv_two_ell_sq).exp() * sq * inv_ell_cubed;
                buf[i * t + r] = v;
                buf[r * t + i] = v;
            }
            // Δ = 0 on the diagonal, and the jitter is ℓ-independent.
        }
    }
    d
}

/// Lower-triangular Cholesky factor `L` with `L·Lᵀ = K`.
///
/// Constructed only through [`cholesky`], which guarantees strictly positive
/// diagonal entries.
#[derive(Debug, Clone, PartialEq)]
pub struct CholFactor {
    lower: Array2<f64>,
}

impl CholFactor {
    /// Matrix dimension `T`.
    pub fn dim(&self) -> usize {
        self.lower.nrows()
    }

    /// The lower-triangular factor (entries above the diagonal are zero).
    pub fn lower(&self) -> &Array2<f64> {
        &self.lower
    }

    fn lower_slice(&self) -> &[f64] {
        self.lower.as_slice().expect("factor storage is contiguous")
    }

    /// `tr(K⁻¹ M)` for a symmetric `M`, evaluated against the factor.
    ///
    /// The triangular factor is inverted (a sequence of forward solves against
    /// unit vectors) and entries of `K⁻¹ = L⁻ᵀL⁻¹` are contracted against `M`
    /// on the fly — `K⁻¹` itself is never materialized.
    ///
    /// # Errors
    /// `DimensionMismatch` when `M` is not `T×T`.
    pub fn trace_inverse_times(&self, m: &Array2<f64>) -> Result<f64> {
        let t = self.dim();
        if m.nrows() != t || m.ncols() != t {
            return Err(Error::DimensionMismatch(format!(
                "trace argument is {}×{}, factor is {t}×{t}",
                m.nrows(),
                m.ncols()
            )));
        }
        let minv = self.invert_lower();
        // (K⁻¹)_ij = Σ_k (L⁻¹)_ki (L⁻¹)_kj, nonzero summands start at k = max(i,j).
        // Contract row by row; the accumulation order is fixed.
        let mut total = 0.0;
        for i in 0..t {
            let row_i = &minv[i * t..(i + 1) * t];
            let m_row = m.row(i);
            let mut row_acc = dot(&row_i[i..], &row_i[i..]) * m_row[i];
            for j in (i + 1)..t {
                let row_j = &minv[j * t..(j + 1) * t];
                let kinv_ij = dot(&row_i[j..], &row_j[j..]);
                row_acc += 2.0 * kinv_ij * m_row[j];
            }
            total += row_acc;
        }
        Ok(total)
    }

    /// Rows of `L⁻¹` stored transposed: returned buffer row `j` holds column
    /// `j` of `L⁻¹` (nonzero from index `j` on), keeping every later dot
    /// product contiguous.
    fn invert_lower(&self) -> Vec<f64> {
        let t = self.dim();
        let l = self.lower_slice();
        let mut minv = vec![0.0; t * t];
        for j in 0..t {
            minv[j * t + j] = 1.0 / l[j * t + j];
            for k in (j + 1)..t {
                let acc = dot(&l[k * t + j..k * t + k], &minv[j * t + j..j * t + k]);
                minv[j * t + k] = -acc / l[k * t + k];
            }
        }
        minv
    }
}

/// Cholesky factorization of a symmetric positive-definite matrix.
///
/// Only the lower triangle of `k` is read (the caller promises symmetry).
///
/// # Errors
/// - `DimensionMismatch` when `k` is not square.
/// - `NotPositiveDefinite` on a non-positive (or non-finite) pivot, usually a
///   sign the jitter is too small for the requested length-scale.
pub fn cholesky(k: &Array2<f64>) -> Result<CholFactor> {
    let t = k.nrows();
    if k.ncols() != t {
        return Err(Error::DimensionMismatch(format!(
            "covariance must be square, got {}×{}",
            t,
            k.ncols()
        )));
    }
    let mut l = vec![0.0; t * t];
    for i in 0..t {
        let row_i = k.row(i);
        for j in 0..=i {
            let acc = dot(&l[i * t..i * t + j], &l[j * t..j * t + j]);
            let v = row_i[j] - acc;
            if i == j {
                if !v.is_finite() || v <= 0.0 {
                    return Err(Error::NotPositiveDefinite { index: i, value: v });
                }
                l[i * t + i] = v.sqrt();
            } else {
                l[i * t + j] = v / l[j * t + j];
            }
        }
    }
    let lower = Array2::from_shape_vec((t, t), l).expect("shape matches buffer");
    Ok(CholFactor { lower })
}

/// `log|K| = 2·Σ_i log L_ii` of the factored matrix.
pub fn log_determinant(factor: &CholFactor) -> f64 {
    let t = factor.dim();
    let l = factor.lower_slice();
    let mut acc = 0.0;
    for i in 0..t {
        acc += l[i * t + i].ln();
    }
    2.0 * acc
}

/// Solve `K·alpha = s` through the factor and return `(alpha, sᵀK⁻¹s)`.
///
/// `alpha` comes from a forward then a backward triangular solve; the
/// quadratic form is the squared norm of the forward solve, which equals
/// `sᵀ·alpha` in exact arithmetic and is non-negative by construction. No
/// matrix inverse is formed.
///
/// # Errors
/// `DimensionMismatch` when `s` does not match the factor dimension.
pub fn solve_and_quadform(factor: &CholFactor, s: ArrayView1<f64>) -> Result<(Array1<f64>, f64)> {
    let t = factor.dim();
    if s.len() != t {
        return Err(Error::DimensionMismatch(format!(
            "vector length {} does not match factor dimension {t}",
            s.len()
        )));
    }
    let l = factor.lower_slice();
    // Forward solve L·y = s.
    let mut y = vec![0.0; t];
    for i in 0..t {
        let acc = dot(&l[i * t..i * t + i], &y[..i]);
        y[i] = (s[i] - acc) / l[i * t + i];
    }
    let quad = dot(&y, &y);
    // Backward solve Lᵀ·alpha = y, in place, reading rows of L (saxpy form).
    let mut alpha = y;
    for k in (0..t).rev() {
        alpha[k] /= l[k * t + k];
        let a_k = alpha[k];
        let row_k = &l[k * t..k * t + k];
        for i in 0..k {
            alpha[i] -= row_k[i] * a_k;
        }
    }
    Ok((Array1::from_vec(alpha), quad))
}

/// Dot product with four independent accumulators.
///
/// The fixed reassociation lets the optimizer vectorize the reduction while
/// keeping the result deterministic across runs and across the
/// sequential/parallel feature builds.
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}
