//! Random sampling and the handful of dense linear-algebra primitives the
//! rest of the crate needs.

mod matrix;
mod rng;
mod spectral;

pub use matrix::{
    axpy, dot, mul_rows_by, mul_rows_by_transpose, norm, sum_outer_products, Matrix,
};
pub use rng::Rng;
pub use spectral::{
    min_eigenvalue_sym, spectral_norm, symmetric_eigenvalues, DEFAULT_MAX_ITER, DEFAULT_TOL,
};

use crate::{Error, Result};

/// `rows × cols` matrix with i.i.d. `N(0, std²)` entries, filled row-major.
pub fn gaussian_matrix(rows: usize, cols: usize, std: f64, rng: &mut Rng) -> Result<Matrix> {
    if rows == 0 || cols == 0 {
        return Err(Error::Dimension(format!(
            "gaussian matrix needs positive dimensions, got {rows}x{cols}"
        )));
    }
    if !(std >= 0.0) || !std.is_finite() {
        return Err(Error::Domain(format!("standard deviation must be >= 0, got {std}")));
    }
    let data = (0..rows * cols).map(|_| std * rng.normal()).collect();
    Matrix::from_vec(rows, cols, data)
}

/// Spectral norm with the default tolerance and iteration budget.
pub fn spectral_norm_default(m: &Matrix) -> Result<f64> {
    spectral_norm(m, DEFAULT_TOL, DEFAULT_MAX_ITER)
}

/// Ordinary least-squares line `y ≈ a + b·x`; returns `(a, b, r²)`.
///
/// `y` is measured from its first value, so constant data gives a slope of
/// exactly zero.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    assert_eq!(xs.len(), ys.len());
    assert!(!xs.is_empty(), "linear fit of no points");
    let n = xs.len() as f64;
    let y0 = ys[0];
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().map(|y| y - y0).sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        let y = y - y0;
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
        syy += (y - my) * (y - my);
    }
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = y0 + my - slope * mx;
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    (intercept, slope, r2)
}
