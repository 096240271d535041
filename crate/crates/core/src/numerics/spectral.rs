use super::matrix::{axpy, dot, norm, Matrix};
use crate::{Error, Result};

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 1000;

/// Deterministic power-iteration start: normalized ones plus a small ramp so
/// the start is never exactly orthogonal to a structured top singular vector.
fn start_vector(n: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n)
        .map(|i| 1.0 + 1e-3 * (i as f64 + 1.0) / n as f64)
        .collect();
    let s = norm(&v);
    v.iter_mut().for_each(|x| *x /= s);
    v
}

/// Largest singular value by power iteration on `MᵀM`.
///
/// Stops once the eigen-residual `‖MᵀMv − θv‖` drops below `tol·θ`, which
/// pins `θ = σ²` to relative accuracy `tol`.
pub fn spectral_norm(m: &Matrix, tol: f64, max_iter: usize) -> Result<f64> {
    if m.rows() == 0 || m.cols() == 0 {
        return Err(Error::Dimension("spectral norm of an empty matrix".into()));
    }
    if !(tol > 0.0) {
        return Err(Error::Domain(format!("tolerance must be positive, got {tol}")));
    }
    let mut v = start_vector(m.cols());
    let mut theta = 0.0;
    for _ in 0..max_iter {
        let u = m.mul_vec(&v);
        let w = m.transpose_mul_vec(&u);
        theta = dot(&u, &u);
        if theta == 0.0 {
            // v lies in the null space; a zero matrix is the only way to get
            // here from the generic start.
            return if m.max_abs() == 0.0 {
                Ok(0.0)
            } else {
                Err(Error::NoConvergence {
                    iterations: 0,
                    estimate: 0.0,
                })
            };
        }
        let mut resid = w.clone();
        axpy(-theta, &v, &mut resid);
        let wn = norm(&w);
        v = w;
        v.iter_mut().for_each(|x| *x /= wn);
        if norm(&resid) <= tol * theta {
            return Ok(theta.sqrt());
        }
    }
    Err(Error::NoConvergence {
        iterations: max_iter,
        estimate: theta.sqrt(),
    })
}

/// Eigenvalues of a symmetric matrix by the cyclic Jacobi method, ascending.
pub fn symmetric_eigenvalues(m: &Matrix) -> Result<Vec<f64>> {
    check_symmetric(m)?;
    let n = m.rows();
    let mut a = m.clone();
    let scale = a.frobenius_norm().max(f64::MIN_POSITIVE);
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                off += a[(p, q)] * a[(p, q)];
            }
        }
        if off.sqrt() <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let app = a[(p, p)];
                let aqq = a[(q, q)];
                let tau = (aqq - app) / (2.0 * apq);
                let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                let t = if tau == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    eig.sort_by(f64::total_cmp);
    Ok(eig)
}

/// Smallest eigenvalue of a symmetric matrix.
///
/// A full Jacobi eigensolve, so the answer is accurate to roughly machine
/// precision times `‖M‖₂`, well inside any `tol·‖M‖₂` a caller asks for.
pub fn min_eigenvalue_sym(m: &Matrix, tol: f64) -> Result<f64> {
    if !(tol > 0.0) {
        return Err(Error::Domain(format!("tolerance must be positive, got {tol}")));
    }
    Ok(symmetric_eigenvalues(m)?[0])
}

fn check_symmetric(m: &Matrix) -> Result<()> {
    match m.asymmetry() {
        None => Err(Error::Validation(format!(
            "expected a square matrix, got {}x{}",
            m.rows(),
            m.cols()
        ))),
        Some(_) if m.rows() == 0 => Err(Error::Dimension("empty matrix".into())),
        Some(a) if a > 1e-12 * m.max_abs().max(1.0) => Err(Error::Validation(format!(
            "matrix is not symmetric (max |a_ij - a_ji| = {a:e})"
        ))),
        Some(_) => Ok(()),
    }
}
