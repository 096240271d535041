use relu_lab::numerics::Matrix;

/// Largest dimension the textbook decompositions accept.
pub const ORACLE_MAX_DIM: usize = 200;

fn guard(m: &Matrix) {
    assert!(
        m.rows() <= ORACLE_MAX_DIM && m.cols() <= ORACLE_MAX_DIM,
        "oracle size guard: {}x{} exceeds {ORACLE_MAX_DIM}",
        m.rows(),
        m.cols()
    );
}

/// Singular values, descending, by one-sided (Hestenes) Jacobi.
pub fn dense_svd(m: &Matrix) -> Vec<f64> {
    guard(m);
    // Work on columns of A (or Aᵀ when wide) so that the count of columns is min(r, c).
    let a = if m.rows() >= m.cols() { m.clone() } else { m.transpose() };
    let (r, c) = a.shape();
    let mut cols: Vec<Vec<f64>> = (0..c).map(|j| a.column(j)).collect();
    for _sweep in 0..100 {
        let mut rotated = false;
        for p in 0..c {
            for q in p + 1..c {
                let alpha: f64 = cols[p].iter().map(|v| v * v).sum();
                let beta: f64 = cols[q].iter().map(|v| v * v).sum();
                let gamma: f64 = cols[p].iter().zip(&cols[q]).map(|(x, y)| x * y).sum();
                if gamma == 0.0 || gamma.abs() <= 1e-15 * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let cs = 1.0 / (1.0 + t * t).sqrt();
                let sn = cs * t;
                for i in 0..r {
                    let x = cols[p][i];
                    let y = cols[q][i];
                    cols[p][i] = cs * x - sn * y;
                    cols[q][i] = sn * x + cs * y;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut s: Vec<f64> = cols
        .iter()
        .map(|col| col.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Eigenvalues of a symmetric matrix, ascending.
///
/// Householder reduction to tridiagonal form followed by the implicit QL
/// iteration with Wilkinson-style shifts.
pub fn dense_sym_eig(m: &Matrix) -> Vec<f64> {
    guard(m);
    assert!(m.is_square(), "dense_sym_eig needs a square matrix");
    let n = m.rows();
    if n == 0 {
        return Vec::new();
    }
    let mut a: Vec<Vec<f64>> = (0..n).map(|i| m.row(i).to_vec()).collect();
    let mut diag = vec![0.0; n];
    let mut off = vec![0.0; n];

    for i in (1..n).rev() {
        let l = i - 1;
        let mut h = 0.0;
        if l > 0 {
            let scale: f64 = a[i][..=l].iter().map(|v| v.abs()).sum();
            if scale == 0.0 {
                off[i] = a[i][l];
            } else {
                for k in 0..=l {
                    a[i][k] /= scale;
                    h += a[i][k] * a[i][k];
                }
                let f = a[i][l];
                let g = if f >= 0.0 { -h.sqrt() } else { h.sqrt() };
                off[i] = scale * g;
                h -= f * g;
                a[i][l] = f - g;
                let mut f = 0.0;
                for j in 0..=l {
                    let mut g = 0.0;
                    for k in 0..=j {
                        g += a[j][k] * a[i][k];
                    }
                    for k in j + 1..=l {
                        g += a[k][j] * a[i][k];
                    }
                    diag[j] = g / h;
                    f += diag[j] * a[i][j];
                }
                let hh = f / (h + h);
                for j in 0..=l {
                    let f = a[i][j];
                    let g = diag[j] - hh * f;
                    diag[j] = g;
                    for k in 0..=j {
                        a[j][k] -= f * diag[k] + g * a[i][k];
                    }
                }
            }
        } else {
            off[i] = a[i][l];
        }
        diag[i] = h;
    }
    for i in 0..n {
        diag[i] = a[i][i];
    }

    // Implicit QL on (diag, off).
    for i in 1..n {
        off[i - 1] = off[i];
    }
    off[n - 1] = 0.0;
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut mm = l;
            while mm + 1 < n {
                let dd = diag[mm].abs() + diag[mm + 1].abs();
                if off[mm].abs() <= f64::EPSILON * dd {
                    break;
                }
                mm += 1;
            }
            if mm == l {
                break;
            }
            iter += 1;
            assert!(iter < 60, "QL iteration did not converge");
            let mut g = (diag[l + 1] - diag[l]) / (2.0 * off[l]);
            let mut r = g.hypot(1.0);
            g = diag[mm] - diag[l] + off[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut i = mm;
            let mut early = false;
            while i > l {
                i -= 1;
                let f = s * off[i];
                let b = c * off[i];
                r = f.hypot(g);
                off[i + 1] = r;
                if r == 0.0 {
                    diag[i + 1] -= p;
                    off[mm] = 0.0;
                    early = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = diag[i + 1] - p;
                r = (diag[i] - g) * s + 2.0 * c * b;
                p = s * r;
                diag[i + 1] = g + p;
                g = c * r - b;
            }
            if early {
                continue;
            }
            diag[l] -= p;
            off[l] = g;
            off[mm] = 0.0;
        }
    }
    diag.sort_by(|a, b| a.total_cmp(b));
    diag
}
