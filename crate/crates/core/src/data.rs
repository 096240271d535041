//! Synthetic training sets: unit-norm inputs with a fixed last coordinate and
//! a guaranteed minimum pairwise separation, plus unit-norm targets.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::numerics::{norm, Matrix, Rng};
use crate::{Error, Result};

pub const DEFAULT_MU: f64 = 0.5;
const UNIT_NORM_TOL: f64 = 1e-12;
const REJECTIONS_PER_POINT: usize = 1000;
const FORMAT_VERSION: u32 = 1;

/// Inputs `x` (rows `xᵢ`, `n×d`) and targets `y` (rows `yᵢ`, `n×k`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub x: Matrix,
    pub y: Matrix,
    /// The shared last input coordinate.
    pub mu: f64,
    /// Minimum pairwise input distance; `None` when `n = 1`.
    pub phi: Option<f64>,
    pub seed: Option<u64>,
}

impl Dataset {
    /// Wraps raw matrices, computing the separation.
    pub fn new(x: Matrix, y: Matrix, mu: f64) -> Result<Self> {
        if x.rows() != y.rows() {
            return Err(Error::Dimension(format!(
                "{} inputs but {} targets",
                x.rows(),
                y.rows()
            )));
        }
        if x.rows() == 0 {
            return Err(Error::Dimension("empty dataset".into()));
        }
        let phi = if x.rows() >= 2 {
            Some(min_separation(&x)?)
        } else {
            None
        };
        Ok(Self {
            x,
            y,
            mu,
            phi,
            seed: None,
        })
    }

    pub fn n(&self) -> usize {
        self.x.rows()
    }

    pub fn d(&self) -> usize {
        self.x.cols()
    }

    pub fn k(&self) -> usize {
        self.y.cols()
    }

    /// The separation, or a domain error for a single-point dataset.
    pub fn phi(&self) -> Result<f64> {
        self.phi
            .ok_or_else(|| Error::Domain("separation is undefined for n = 1".into()))
    }

    /// The examples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<(Matrix, Matrix)> {
        let n = self.n();
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(Error::IndexOutOfRange { index: bad, len: n });
        }
        let pick = |m: &Matrix| {
            let mut data = Vec::with_capacity(indices.len() * m.cols());
            for &i in indices {
                data.extend_from_slice(m.row(i));
            }
            Matrix::from_vec(indices.len(), m.cols(), data)
        };
        Ok((pick(&self.x)?, pick(&self.y)?))
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&DatasetFile::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str::<DatasetFile>(s)?.try_into()
    }
}

/// On-disk layout. Floats are written in shortest round-trip decimal form,
/// so loading reproduces every bit.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetFile {
    format_version: u32,
    n: usize,
    d: usize,
    k: usize,
    mu: f64,
    phi: Option<f64>,
    #[serde(rename = "X")]
    x: Vec<f64>,
    #[serde(rename = "Y")]
    y: Vec<f64>,
    seed: Option<u64>,
}

impl From<&Dataset> for DatasetFile {
    fn from(ds: &Dataset) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            n: ds.n(),
            d: ds.d(),
            k: ds.k(),
            mu: ds.mu,
            phi: ds.phi,
            x: ds.x.as_slice().to_vec(),
            y: ds.y.as_slice().to_vec(),
            seed: ds.seed,
        }
    }
}

impl TryFrom<DatasetFile> for Dataset {
    type Error = Error;

    fn try_from(f: DatasetFile) -> Result<Self> {
        if f.format_version != FORMAT_VERSION {
            return Err(Error::Validation(format!(
                "unsupported dataset format version {}",
                f.format_version
            )));
        }
        Ok(Dataset {
            x: Matrix::from_vec(f.n, f.d, f.x)?,
            y: Matrix::from_vec(f.n, f.k, f.y)?,
            mu: f.mu,
            phi: f.phi,
            seed: f.seed,
        })
    }
}

/// Rejection-samples `n` inputs on the unit sphere with last coordinate `mu`
/// and pairwise distance at least `phi_target`, plus uniform unit targets.
///
/// Inputs are drawn first, then targets, from the same stream.
pub fn generate_dataset(
    n: usize,
    d: usize,
    k: usize,
    mu: f64,
    phi_target: f64,
    rng: &mut Rng,
) -> Result<Dataset> {
    if n == 0 || k == 0 {
        return Err(Error::Dimension("need n >= 1 and k >= 1".into()));
    }
    if d < 2 {
        return Err(Error::Dimension(format!("need d >= 2, got {d}")));
    }
    if !(mu > 0.0 && mu < 1.0) {
        return Err(Error::Domain(format!("mu must lie in (0, 1), got {mu}")));
    }
    let radius = (1.0 - mu * mu).sqrt();
    let max_phi = std::f64::consts::SQRT_2 * radius;
    if !(phi_target >= 0.0 && phi_target < max_phi) {
        return Err(Error::Domain(format!(
            "phi_target must lie in [0, {max_phi:.6}) for mu = {mu}, got {phi_target}"
        )));
    }

    let budget = REJECTIONS_PER_POINT * n;
    let mut rejections = 0;
    let mut accepted: Vec<Vec<f64>> = Vec::with_capacity(n);
    while accepted.len() < n {
        let mut g: Vec<f64> = (0..d - 1).map(|_| rng.normal()).collect();
        let gn = norm(&g);
        if gn == 0.0 {
            continue;
        }
        g.iter_mut().for_each(|v| *v *= radius / gn);
        g.push(mu);
        let too_close = accepted.iter().any(|a| distance(a, &g) < phi_target);
        if too_close {
            rejections += 1;
            if rejections > budget {
                return Err(Error::Generation(format!(
                    "placed {} of {n} points at separation {phi_target} before exhausting \
                     {budget} rejections",
                    accepted.len()
                )));
            }
            continue;
        }
        accepted.push(g);
    }

    let targets: Vec<Vec<f64>> = (0..n)
        .map(|_| loop {
            let mut t: Vec<f64> = (0..k).map(|_| rng.normal()).collect();
            let tn = norm(&t);
            if tn > 0.0 {
                t.iter_mut().for_each(|v| *v /= tn);
                break t;
            }
        })
        .collect();

    let mut ds = Dataset::new(Matrix::from_rows(&accepted)?, Matrix::from_rows(&targets)?, mu)?;
    ds.seed = Some(rng.seed());
    Ok(ds)
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// `min_{i<j} ‖xᵢ − xⱼ‖₂` by exhaustive search.
pub fn min_separation(x: &Matrix) -> Result<f64> {
    min_separation_pair(x).map(|(d, _, _)| d)
}

/// Like [`min_separation`], also returning the closest pair `(i, j)`, `i < j`.
pub fn min_separation_pair(x: &Matrix) -> Result<(f64, usize, usize)> {
    let n = x.rows();
    if n < 2 {
        return Err(Error::Domain(format!(
            "separation needs at least two points, got {n}"
        )));
    }
    let mut best = (f64::INFINITY, 0, 1);
    for i in 0..n {
        for j in i + 1..n {
            let dij = distance(x.row(i), x.row(j));
            if dij < best.0 {
                best = (dij, i, j);
            }
        }
    }
    Ok(best)
}

/// One line of a [`ValidationReport`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssumptionCheck {
    pub name: String,
    pub pass: bool,
    /// The worst value seen (deviation, or separation for the distance check).
    pub worst_value: f64,
    /// Offending row index, or pair of indices for the separation check.
    pub worst_index: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub checks: Vec<AssumptionCheck>,
}

impl ValidationReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn check(&self, name: &str) -> Option<&AssumptionCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Checks unit input norms, the fixed last coordinate, positive separation
/// (consistent with the recorded `phi`), and bounded target norms.
pub fn validate_assumptions(ds: &Dataset) -> ValidationReport {
    let n = ds.n();
    let mut checks = Vec::with_capacity(4);

    let (dev, idx) = worst_row(n, |i| (norm(ds.x.row(i)) - 1.0).abs());
    checks.push(AssumptionCheck {
        name: "unit_norm".into(),
        pass: dev <= UNIT_NORM_TOL,
        worst_value: dev,
        worst_index: vec![idx],
    });

    let last = ds.d() - 1;
    let (dev, idx) = worst_row(n, |i| (ds.x[(i, last)] - ds.mu).abs());
    checks.push(AssumptionCheck {
        name: "last_coordinate".into(),
        pass: dev == 0.0,
        worst_value: dev,
        worst_index: vec![idx],
    });

    checks.push(match min_separation_pair(&ds.x) {
        Ok((sep, i, j)) => AssumptionCheck {
            name: "separation".into(),
            pass: sep > 0.0 && ds.phi.is_none_or(|p| sep >= p),
            worst_value: sep,
            worst_index: vec![i, j],
        },
        Err(_) => AssumptionCheck {
            name: "separation".into(),
            pass: true,
            worst_value: f64::INFINITY,
            worst_index: vec![],
        },
    });

    let (tn, idx) = worst_row(n, |i| norm(ds.y.row(i)));
    checks.push(AssumptionCheck {
        name: "target_norm".into(),
        pass: tn <= 1.0 + UNIT_NORM_TOL,
        worst_value: tn,
        worst_index: vec![idx],
    });

    ValidationReport { checks }
}

fn worst_row(n: usize, f: impl Fn(usize) -> f64) -> (f64, usize) {
    (0..n)
        .map(|i| (f(i), i))
        .fold((f64::NEG_INFINITY, 0), |best, cur| if cur.0 > best.0 { cur } else { best })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_point() {
        let ds = generate_dataset(1, 3, 1, 0.5, 0.0, &mut Rng::new(1)).unwrap();
        assert!((norm(ds.x.row(0)) - 1.0).abs() <= 1e-12);
        assert_eq!(ds.x[(0, 2)], 0.5);
        assert!(ds.phi.is_none());
        assert!(matches!(ds.phi(), Err(Error::Domain(_))));
        assert!(validate_assumptions(&ds).all_pass());
    }

    #[test]
    fn separated_dataset_passes_all_checks() {
        let ds = generate_dataset(16, 16, 2, 0.5, 0.3, &mut Rng::new(2)).unwrap();
        assert!(min_separation(&ds.x).unwrap() >= 0.3);
        assert!(ds.phi.unwrap() >= 0.3);
        let report = validate_assumptions(&ds);
        assert!(report.all_pass(), "{report:?}");
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_dataset(8, 5, 3, 0.5, 0.2, &mut Rng::new(4)).unwrap();
        let b = generate_dataset(8, 5, 3, 0.5, 0.2, &mut Rng::new(4)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn infeasible_separation_errors() {
        // Nine points on a circle of radius sqrt(0.75) cannot be 1.2 apart.
        let r = generate_dataset(9, 3, 1, 0.5, 1.2, &mut Rng::new(5));
        assert!(matches!(r, Err(Error::Generation(_))));
        let r = generate_dataset(2, 3, 1, 0.5, 1.3, &mut Rng::new(5));
        assert!(matches!(r, Err(Error::Domain(_))));
    }

    #[test]
    fn separation_examples() {
        let x = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert!((min_separation(&x).unwrap() - std::f64::consts::SQRT_2).abs() < 1e-15);
        let x = Matrix::from_rows(&[vec![0.6, 0.8], vec![0.6, 0.8]]).unwrap();
        assert_eq!(min_separation(&x).unwrap(), 0.0);
        let x = Matrix::from_rows(&[vec![0.6, 0.8]]).unwrap();
        assert!(matches!(min_separation(&x), Err(Error::Domain(_))));
    }

    #[test]
    fn scaled_row_fails_unit_norm() {
        let mut ds = generate_dataset(6, 4, 1, 0.5, 0.1, &mut Rng::new(6)).unwrap();
        for v in ds.x.row_mut(3) {
            *v *= 1.1;
        }
        let report = validate_assumptions(&ds);
        let c = report.check("unit_norm").unwrap();
        assert!(!c.pass);
        assert_eq!(c.worst_index, vec![3]);
    }

    #[test]
    fn duplicated_row_fails_separation() {
        let ds = generate_dataset(5, 4, 1, 0.5, 0.1, &mut Rng::new(7)).unwrap();
        let mut rows: Vec<Vec<f64>> = (0..5).map(|i| ds.x.row(i).to_vec()).collect();
        rows[4] = rows[1].clone();
        let dup = Dataset::new(Matrix::from_rows(&rows).unwrap(), ds.y.clone(), 0.5).unwrap();
        assert_eq!(dup.phi, Some(0.0));
        let c = validate_assumptions(&dup).check("separation").unwrap().clone();
        assert!(!c.pass);
        assert_eq!(c.worst_value, 0.0);
        assert_eq!(c.worst_index, vec![1, 4]);
    }

    #[test]
    fn json_roundtrip_is_bit_exact() {
        let ds = generate_dataset(7, 5, 2, 0.5, 0.2, &mut Rng::new(8)).unwrap();
        let back = Dataset::from_json(&ds.to_json().unwrap()).unwrap();
        assert_eq!(back, ds);
        for (a, b) in ds.x.as_slice().iter().zip(back.x.as_slice()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn json_rejects_unknown_fields() {
        let ds = generate_dataset(2, 3, 1, 0.5, 0.0, &mut Rng::new(9)).unwrap();
        let mut v: serde_json::Value = serde_json::from_str(&ds.to_json().unwrap()).unwrap();
        v["extra"] = serde_json::json!(1);
        assert!(Dataset::from_json(&v.to_string()).is_err());
    }
}
