//! Decorrelation regularizer over latent sources: columns are standardized,
//! their empirical correlation matrix is compared against the identity, and
//! the full chain-rule gradient flows back through the standardization.
//!
//! With `S̃` the column-standardized latents, `C = S̃ᵀS̃/T` and
//! `L_sep = ‖C − I‖²_F`. The gradient accounts for the dependence of each
//! column's mean and variance on the raw entries, which makes the loss
//! exactly invariant to shifting a column by a constant.

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};

/// Empirical correlation matrix of standardized columns, `C = S̃ᵀS̃/T`.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix(pub Array2<f64>);

fn check_rows(latents: &ArrayView2<f64>) -> Result<()> {
    if latents.nrows() < 2 {
        return Err(Error::InvalidArgument(format!(
            "column standardization needs at least 2 rows, got {}",
            latents.nrows()
        )));
    }
    Ok(())
}

/// Center each column and divide by `√(var + eps_s)` (population variance).
///
/// A constant column maps to the zero column: its centered values are zero
/// and the `eps_s` floor keeps the division finite.
///
/// # Errors
/// `InvalidArgument` when there are fewer than 2 rows or `eps_s` is not
/// finite and strictly positive.
pub fn normalize_columns(latents: ArrayView2<f64>, eps_s: f64) -> Result<Array2<f64>> {
    check_rows(&latents)?;
    if !eps_s.is_finite() || eps_s <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "variance floor eps_s must be finite and > 0, got {eps_s}"
        )));
    }
    let t = latents.nrows() as f64;
    let mut out = latents.to_owned();
    for mut col in out.axis_iter_mut(Axis(1)) {
        let mean = col.sum() / t;
        col.mapv_inplace(|x| x - mean);
        let var = col.iter().map(|&x| x * x).sum::<f64>() / t;
        let denom = (var + eps_s).sqrt();
        col.mapv_inplace(|x| x / denom);
    }
    Ok(out)
}

/// `C = S̃ᵀS̃/T` for already-standardized columns.
///
/// # Errors
/// `InvalidArgument` when there are fewer than 2 rows.
pub fn correlation_matrix(standardized: ArrayView2<f64>) -> Result<CorrelationMatrix> {
    check_rows(&standardized)?;
    let t = standardized.nrows() as f64;
    let c = standardized.t().dot(&standardized) / t;
    Ok(CorrelationMatrix(c))
}

/// Squared Frobenius distance of the correlation matrix from the identity.
///
/// The squared deviations are summed in a canonical (sorted) order, so the
/// loss is exactly invariant to column permutations and sign flips — those
/// only permute and sign-flip the matrix entries, never change the term
/// multiset.
pub fn separation_loss(corr: &CorrelationMatrix) -> f64 {
    let n = corr.0.nrows();
    let mut terms = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let target = if i == j { 1.0 } else { 0.0 };
            let d = corr.0[[i, j]] - target;
            terms.push(d * d);
        }
    }
    terms.sort_by(f64::total_cmp);
    terms.iter().sum()
}

/// Gradient of [`separation_loss`] with respect to the raw latents, with the
/// standardization chain rule applied in full.
///
/// Writing `c_j` for the centered column, `d_j = √(var_j + eps_s)`,
/// `S̃` for the standardized matrix, and `G = 2(C − I)`:
/// `∂L/∂S̃ = (2/T)·S̃·G`, per column
/// `∂L/∂c_j = g̃_j/d_j − (c_jᵀg̃_j/d_j³)·c_j/T`, and centering the result
/// accounts for the mean's dependence on every raw entry.
///
/// # Errors
/// Same conditions as [`normalize_columns`].
pub fn separation_grad(latents: ArrayView2<f64>, eps_s: f64) -> Result<Array2<f64>> {
    check_rows(&latents)?;
    if !eps_s.is_finite() || eps_s <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "variance floor eps_s must be finite and > 0, got {eps_s}"
        )));
    }
    let t_rows = latents.nrows();
    let n = latents.ncols();
    let t = t_rows as f64;

    // Centered columns and their variance floors.
    let mut centered = latents.to_owned();
    let mut denoms = Array1::<f64>::zeros(n);
    for (j, mut col) in centered.axis_iter_mut(Axis(1)).enumerate() {
        let mean = col.sum() / t;
        col.mapv_inplace(|x| x - mean);
        let var = col.iter().map(|&x| x * x).sum::<f64>() / t;
        denoms[j] = (var + eps_s).sqrt();
    }
    let mut standardized = centered.clone();
    for (j, mut col) in standardized.axis_iter_mut(Axis(1)).enumerate() {
        let d = denoms[j];
        col.mapv_inplace(|x| x / d);
    }

    let c = standardized.t().dot(&standardized) / t;
    let mut g = c;
    for i in 0..n {
        g[[i, i]] -= 1.0;
    }
    g.mapv_inplace(|x| 2.0 * x);

    // ∂L/∂S̃ = (2/T)·S̃·G  (G is symmetric).
    let grad_std = standardized.dot(&g) * (2.0 / t);

    // Chain through the per-column scale, then through the mean.
    let mut grad = Array2::<f64>::zeros((t_rows, n));
    for j in 0..n {
        let d = denoms[j];
        let cj = centered.column(j);
        let gj = grad_std.column(j);
        let dot_cg: f64 = cj.iter().zip(gj.iter()).map(|(a, b)| a * b).sum();
        let scale = dot_cg / (d * d * d * t);
        let mut col = grad.column_mut(j);
        for i in 0..t_rows {
            col[i] = gj[i] / d - scale * cj[i];
        }
        let mean = col.sum() / t;
        col.mapv_inplace(|x| x - mean);
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    const EPS: f64 = 1e-8;

    #[test]
    fn normalize_centers_and_scales() {
        let s = array![[1.0, 10.0], [3.0, 10.0], [5.0, 10.0]];
        let st = normalize_columns(s.view(), EPS).unwrap();
        // Column 0: mean 3, population var 8/3.
        let d = (8.0 / 3.0 + EPS).sqrt();
        assert!((st[[0, 0]] + 2.0 / d).abs() < 1e-12);
        assert!((st[[1, 0]]).abs() < 1e-12);
        assert!((st[[2, 0]] - 2.0 / d).abs() < 1e-12);
        // Constant column maps to zeros.
        for i in 0..3 {
            assert_eq!(st[[i, 1]], 0.0);
        }
    }

    #[test]
    fn normalize_rejects_too_few_rows_and_bad_eps() {
        let s = array![[1.0, 2.0]];
        assert!(normalize_columns(s.view(), EPS).is_err());
        let s = array![[1.0], [2.0]];
        assert!(normalize_columns(s.view(), 0.0).is_err());
        assert!(normalize_columns(s.view(), -1.0).is_err());
    }

    #[test]
    fn correlation_of_identical_columns_is_all_ones() {
        let s = array![[1.0, 1.0], [-1.0, -1.0], [2.0, 2.0], [-2.0, -2.0]];
        let st = normalize_columns(s.view(), 1e-14).unwrap();
        let c = correlation_matrix(st.view()).unwrap();
        for v in c.0.iter() {
            assert!((v - 1.0).abs() < 1e-9);
        }
        // ‖C − I‖²_F = 2 for the two off-diagonal ones.
        assert!((separation_loss(&c) - 2.0).abs() < 1e-8);
    }

    #[test]
    fn loss_is_zero_for_orthogonal_standardized_columns() {
        // sign patterns (+,+,−,−) and (+,−,+,−) are orthogonal and unit-variance.
        let s = array![[1.0, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]];
        let st = normalize_columns(s.view(), 1e-14).unwrap();
        let c = correlation_matrix(st.view()).unwrap();
        assert!(separation_loss(&c) < 1e-12);
    }

    #[test]
    fn grad_matches_finite_difference() {
        let s = Array2::from_shape_fn((9, 3), |(i, j)| ((i as f64 + 1.3 * j as f64) * 0.7).sin());
        let g = separation_grad(s.view(), EPS).unwrap();
        let h = 1e-6;
        let loss_at = |m: &Array2<f64>| {
            let st = normalize_columns(m.view(), EPS).unwrap();
            separation_loss(&correlation_matrix(st.view()).unwrap())
        };
        let mut pert = s.clone();
        for i in 0..9 {
            for j in 0..3 {
                let orig = pert[[i, j]];
                pert[[i, j]] = orig + h;
                let lp = loss_at(&pert);
                pert[[i, j]] = orig - h;
                let lm = loss_at(&pert);
                pert[[i, j]] = orig;
                let fd = (lp - lm) / (2.0 * h);
                assert!(
                    (g[[i, j]] - fd).abs() < 1e-4,
                    "entry ({i},{j}): analytic {} vs fd {fd}",
                    g[[i, j]]
                );
            }
        }
    }

    #[test]
    fn grad_is_shift_invariant_along_all_ones() {
        // The loss ignores adding a constant to a column, so the gradient's
        // projection onto the all-ones direction vanishes.
        let s = Array2::from_shape_fn((12, 3), |(i, j)| ((i * (j + 1)) as f64 * 0.37).cos());
        let g = separation_grad(s.view(), EPS).unwrap();
        for j in 0..3 {
            let col_sum: f64 = g.column(j).sum();
            assert!(col_sum.abs() < 1e-10, "column {j} gradient sums to {col_sum}");
        }
    }

    #[test]
    fn loss_invariant_to_column_permutation_and_sign() {
        let s = Array2::from_shape_fn((15, 3), |(i, j)| ((i as f64) * 0.3 + (j as f64)).sin());
        let loss_of = |m: &Array2<f64>| {
            let st = normalize_columns(m.view(), EPS).unwrap();
            separation_loss(&correlation_matrix(st.view()).unwrap())
        };
        let base = loss_of(&s);

        // Swap columns 0 and 2, flip column 1.
        let mut permuted = Array2::<f64>::zeros((15, 3));
        for i in 0..15 {
            permuted[[i, 0]] = s[[i, 2]];
            permuted[[i, 1]] = -s[[i, 1]];
            permuted[[i, 2]] = s[[i, 0]];
        }
        assert_eq!(loss_of(&permuted).to_bits(), base.to_bits());
    }
}
