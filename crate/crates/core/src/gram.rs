//! The two-layer NTK Gram matrix
//! `H_ij = E_{w~N(0,I)}[xᵢᵀxⱼ 1(wᵀxᵢ > 0) 1(wᵀxⱼ > 0)]` and its least eigenvalue.

use serde::{Deserialize, Serialize};

use crate::data::{min_separation, Dataset};
use crate::numerics::{dot, min_eigenvalue_sym, norm, Matrix, Rng, DEFAULT_TOL};
use crate::{Error, Result};

const UNIT_ROW_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GramMethod {
    ClosedForm,
    MonteCarlo,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GramMatrix {
    pub h: Matrix,
    pub n: usize,
    pub method: GramMethod,
    /// Zero for the closed form.
    pub mc_samples: usize,
}

/// Arc-cosine evaluation `ρ (π − θ) / 2π` with `ρ = xᵢᵀxⱼ` and `θ` the angle
/// between the rows.
///
/// `θ = 2·atan2(‖xᵢ − xⱼ‖, ‖xᵢ + xⱼ‖)` rather than `arccos ρ`: near `ρ = ±1`
/// the arccosine turns a rounding error of `ε` in `ρ` into `√(2ε)` in `θ`.
pub fn gram_closed_form(x: &Matrix) -> Result<GramMatrix> {
    for i in 0..x.rows() {
        let r = norm(x.row(i));
        if (r - 1.0).abs() > UNIT_ROW_TOL {
            return Err(Error::Validation(format!("row {i} has norm {r}, expected 1")));
        }
    }
    let n = x.rows();
    let mut h = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = arc_cosine_entry(x.row(i), x.row(j));
            h[(i, j)] = v;
            h[(j, i)] = v;
        }
    }
    Ok(GramMatrix {
        h,
        n,
        method: GramMethod::ClosedForm,
        mc_samples: 0,
    })
}

fn arc_cosine_entry(a: &[f64], b: &[f64]) -> f64 {
    let (mut diff, mut sum) = (0.0, 0.0);
    for (u, v) in a.iter().zip(b) {
        diff += (u - v) * (u - v);
        sum += (u + v) * (u + v);
    }
    let theta = 2.0 * diff.sqrt().atan2(sum.sqrt());
    dot(a, b) * (std::f64::consts::PI - theta) / (2.0 * std::f64::consts::PI)
}

/// Sample average over `samples` directions `w ~ N(0, I_d)` drawn from `rng`.
pub fn gram_monte_carlo(x: &Matrix, samples: usize, rng: &mut Rng) -> Result<GramMatrix> {
    if samples == 0 {
        return Err(Error::Domain("need at least one Monte Carlo sample".into()));
    }
    let d = x.cols();
    let mut w = Matrix::zeros(samples, d);
    for v in w.as_mut_slice() {
        *v = rng.normal();
    }
    gram_from_directions(x, &w)
}

/// The sample average for explicitly given directions (rows of `w`).
pub fn gram_from_directions(x: &Matrix, w: &Matrix) -> Result<GramMatrix> {
    let (n, d) = x.shape();
    if n == 0 || w.rows() == 0 {
        return Err(Error::Dimension("empty inputs or directions".into()));
    }
    if w.cols() != d {
        return Err(Error::Dimension(format!(
            "directions have {} coordinates, inputs have {d}",
            w.cols()
        )));
    }
    // Counting joint activations keeps the average exact up to the final division.
    let mut hits = vec![0u64; n * n];
    let mut active = vec![false; n];
    for s in 0..w.rows() {
        let ws = w.row(s);
        for (i, a) in active.iter_mut().enumerate() {
            *a = dot(ws, x.row(i)) > 0.0;
        }
        for i in 0..n {
            if !active[i] {
                continue;
            }
            for j in i..n {
                if active[j] {
                    hits[i * n + j] += 1;
                }
            }
        }
    }
    let samples = w.rows();
    let mut h = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = dot(x.row(i), x.row(j)) * hits[i * n + j] as f64 / samples as f64;
            h[(i, j)] = v;
            h[(j, i)] = v;
        }
    }
    Ok(GramMatrix {
        h,
        n,
        method: GramMethod::MonteCarlo,
        mc_samples: samples,
    })
}

/// `λ₀ = λ_min(H)`.
pub fn lambda0(gm: &GramMatrix) -> Result<f64> {
    min_eigenvalue_sym(&gm.h, DEFAULT_TOL)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lambda0Check {
    pub lambda0: f64,
    pub phi: f64,
    /// `φ / (100 n²)`.
    pub bound: f64,
    pub pass: bool,
}

/// Compares `λ₀` of the closed-form Gram matrix with `φ/(100n²)`.
pub fn check_lambda0_phi_bound(ds: &Dataset) -> Result<Lambda0Check> {
    let n = ds.n();
    if n < 2 {
        return Err(Error::Domain("the separation bound needs n >= 2".into()));
    }
    let lambda0 = lambda0(&gram_closed_form(&ds.x)?)?;
    let phi = min_separation(&ds.x)?;
    let bound = phi / (100.0 * (n * n) as f64);
    Ok(Lambda0Check {
        lambda0,
        phi,
        bound,
        pass: lambda0 >= bound,
    })
}
