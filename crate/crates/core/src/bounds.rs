//! Theory calculator: required widths, iteration budgets, step sizes and
//! perturbation radii for the deep GD, deep SGD and two-layer SGD
//! guarantees, plus the cross-analysis width/iteration comparison table.
//!
//! Every hidden `O(·)`/`Ω(·)` constant is the dial `c` (default 1) and every
//! logarithm is natural.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const FIXED_POINT_MAX_ITER: usize = 200;
pub const FIXED_POINT_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Theorem {
    GdDeep,
    SgdDeep,
    SgdTwoLayer,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoryQuery {
    pub theorem: Theorem,
    pub n: usize,
    /// Number of hidden layers.
    pub depth: usize,
    pub k: usize,
    pub phi: f64,
    /// Minibatch size (SGD forms).
    pub batch: Option<usize>,
    pub epsilon: f64,
    pub c: f64,
}

impl TheoryQuery {
    pub fn gd(n: usize, depth: usize, k: usize, phi: f64) -> Self {
        Self {
            theorem: Theorem::GdDeep,
            n,
            depth,
            k,
            phi,
            batch: None,
            epsilon: 1e-3,
            c: 1.0,
        }
    }

    pub fn sgd(theorem: Theorem, n: usize, depth: usize, k: usize, phi: f64, batch: usize) -> Self {
        Self {
            theorem,
            batch: Some(batch),
            ..Self::gd(n, depth, k, phi)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.depth == 0 || self.k == 0 {
            return Err(Error::Domain("n, L and k must be positive".into()));
        }
        if !(self.phi > 0.0 && self.phi <= std::f64::consts::SQRT_2) {
            return Err(Error::Domain(format!("phi must lie in (0, sqrt 2], got {}", self.phi)));
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return Err(Error::Domain(format!("epsilon must lie in (0, 1], got {}", self.epsilon)));
        }
        if !(self.c > 0.0) || !self.c.is_finite() {
            return Err(Error::Domain(format!("constant c must be positive, got {}", self.c)));
        }
        if self.theorem != Theorem::GdDeep {
            match self.batch {
                Some(b) if (1..=self.n).contains(&b) => {}
                Some(b) => return Err(Error::Domain(format!("batch size {b} outside 1..={}", self.n))),
                None => return Err(Error::Domain("SGD bounds need a batch size".into())),
            }
        }
        Ok(())
    }

    fn batch_f64(&self) -> f64 {
        self.batch.unwrap_or(self.n) as f64
    }
}

/// The width requirement without its `ln³ m` factor.
pub fn width_base(q: &TheoryQuery) -> f64 {
    let (n, l, k, phi) = (q.n as f64, q.depth as f64, q.k as f64, q.phi);
    let b = q.batch_f64();
    match q.theorem {
        Theorem::GdDeep => k * n.powi(8) * l.powi(12) / phi.powi(4),
        Theorem::SgdDeep => k * n.powi(17) * l.powi(12) / (b.powi(4) * phi.powi(8)),
        Theorem::SgdTwoLayer => k.powf(2.5) * n.powi(11) / (phi.powi(5) * b),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WidthSolution {
    pub m: f64,
    pub base: f64,
    pub iterations: usize,
    pub converged: bool,
    /// `|m − c·base·ln³ m| / m` at the returned `m`.
    pub residual: f64,
}

/// Solves `m = c·base·ln³ m` by iterating `m ← c·base·ln³(max(m, e))` from `c·base`.
pub fn required_width(q: &TheoryQuery) -> Result<WidthSolution> {
    q.validate()?;
    let a = q.c * width_base(q);
    let g = |m: f64| a * m.max(std::f64::consts::E).ln().powi(3);
    let mut m = a;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < FIXED_POINT_MAX_ITER {
        let next = g(m);
        iterations += 1;
        let done = ((next - m) / next).abs() <= FIXED_POINT_TOL;
        m = next;
        if done {
            converged = true;
            break;
        }
    }
    Ok(WidthSolution {
        m,
        base: width_base(q),
        iterations,
        converged,
        residual: ((m - g(m)) / m).abs(),
    })
}

/// Iterations to reach loss `ε` at width `m`.
pub fn iteration_budget(q: &TheoryQuery, m: f64) -> Result<f64> {
    q.validate()?;
    let (n, l, phi) = (q.n as f64, q.depth as f64, q.phi);
    let log_eps = (1.0 / q.epsilon).ln();
    let b = q.batch_f64();
    Ok(q.c
        * match q.theorem {
            Theorem::GdDeep => n * n * l * l * log_eps / phi,
            Theorem::SgdDeep => {
                check_log_width(m)?;
                n.powi(5) * m.ln() * log_eps * log_eps / (b * phi * phi)
            }
            Theorem::SgdTwoLayer => {
                check_log_width(m)?;
                n.powi(5) * m.ln() * log_eps / (b * phi * phi)
            }
        })
}

fn check_log_width(m: f64) -> Result<()> {
    if !(m > std::f64::consts::E) {
        return Err(Error::Domain(format!("width {m} must exceed e for the log term")));
    }
    Ok(())
}

/// Step size at width `m`: `c·k/(L²m)` for GD, `c·kBφ/(n³ m ln m)` for SGD.
pub fn step_size(q: &TheoryQuery, m: f64) -> Result<f64> {
    q.validate()?;
    let (n, l, k) = (q.n as f64, q.depth as f64, q.k as f64);
    Ok(q.c
        * match q.theorem {
            Theorem::GdDeep => k / (l * l * m),
            Theorem::SgdDeep | Theorem::SgdTwoLayer => {
                check_log_width(m)?;
                k * q.batch_f64() * q.phi / (n * n * n * m * m.ln())
            }
        })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RadiusContext {
    GdLemma,
    SgdLemma,
    TwoLayerSgd,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RadiusInputs {
    pub n: usize,
    pub depth: usize,
    pub k: usize,
    pub m: f64,
    pub phi: f64,
    pub batch: usize,
    pub c: f64,
}

/// Radius `τ` of the spectral ball around initialization that the analysis needs.
pub fn perturbation_radius(context: RadiusContext, r: RadiusInputs) -> Result<f64> {
    check_log_width(r.m)?;
    let (n, l, k, phi, b) = (r.n as f64, r.depth as f64, r.k as f64, r.phi, r.batch as f64);
    let log15 = r.m.ln().powf(1.5);
    Ok(r.c
        * match context {
            RadiusContext::GdLemma => phi.powf(1.5) / (n.powi(3) * l.powi(6) * log15),
            RadiusContext::SgdLemma => {
                phi.powi(3) * b.powf(1.5) / (n.powi(6) * l.powi(6) * log15)
            }
            RadiusContext::TwoLayerSgd => phi.powi(3) / (n.powi(3) * k.powf(0.75) * log15),
        })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoryAnswer {
    pub m_required: f64,
    pub eta: f64,
    #[serde(rename = "T")]
    pub iterations: f64,
    pub tau: f64,
    pub converged_fixed_point: bool,
}

/// Width, step size, iteration budget and radius for one query.
pub fn solve(q: &TheoryQuery) -> Result<TheoryAnswer> {
    let w = required_width(q)?;
    let context = match q.theorem {
        Theorem::GdDeep => RadiusContext::GdLemma,
        Theorem::SgdDeep => RadiusContext::SgdLemma,
        Theorem::SgdTwoLayer => RadiusContext::TwoLayerSgd,
    };
    let tau = perturbation_radius(
        context,
        RadiusInputs {
            n: q.n,
            depth: q.depth,
            k: q.k,
            m: w.m,
            phi: q.phi,
            batch: q.batch.unwrap_or(q.n),
            c: q.c,
        },
    )?;
    Ok(TheoryAnswer {
        m_required: w.m,
        eta: step_size(q, w.m)?,
        iterations: iteration_budget(q, w.m)?,
        tau,
        converged_fixed_point: w.converged,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorWorkInputs {
    pub n: usize,
    pub depth: usize,
    pub k: usize,
    pub phi: f64,
    /// `‖X‖₂`; defaults to `√(n/d)` when `d` is given.
    pub x_spectral: Option<f64>,
    pub d: Option<usize>,
    /// Defaults to `φ/(100n²)`.
    pub lambda0: Option<f64>,
    pub epsilon: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub work: String,
    pub width: f64,
    pub iterations: f64,
    /// Covers networks with more than one hidden layer.
    pub deep: bool,
    pub relu: bool,
    /// `2^{O(L)}` evaluated as `2^L`.
    pub symbolic: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub lambda0: f64,
    pub x_spectral: f64,
    pub rows: Vec<ComparisonRow>,
}

pub const THIS_WORK: &str = "this work";

impl ComparisonTable {
    pub fn row(&self, work: &str) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.work == work)
    }
}

/// Width conditions and iteration complexities of the prior analyses and
/// this one, all with unit constants.
pub fn compare_prior_work(p: &PriorWorkInputs) -> Result<ComparisonTable> {
    if p.n == 0 || p.depth == 0 || p.k == 0 || !(p.phi > 0.0) {
        return Err(Error::Domain("n, L, k and phi must be positive".into()));
    }
    let (n, l, k, phi) = (p.n as f64, p.depth as f64, p.k as f64, p.phi);
    let lambda0 = p.lambda0.unwrap_or(phi / (100.0 * n * n));
    let x_spectral = match (p.x_spectral, p.d) {
        (Some(x), _) => x,
        (None, Some(d)) if d > 0 => (n / d as f64).sqrt(),
        _ => return Err(Error::Domain("need either ||X||_2 or the input dimension d".into())),
    };
    if !(lambda0 > 0.0) || !(x_spectral > 0.0) {
        return Err(Error::Domain("lambda0 and ||X||_2 must be positive".into()));
    }
    let log = (1.0 / p.epsilon).ln();
    let two_l = 2f64.powf(l);
    let row = |work: &str, width: f64, iterations: f64, deep: bool, relu: bool, symbolic: bool| {
        ComparisonRow {
            work: work.into(),
            width,
            iterations,
            deep,
            relu,
            symbolic,
        }
    };
    Ok(ComparisonTable {
        lambda0,
        x_spectral,
        rows: vec![
            row("du2018gradient", n.powi(6) / lambda0.powi(4), n * n * log / lambda0.powi(2), false, true, false),
            row("wu2019global", n.powi(6) / lambda0.powi(4), n * log / lambda0.powi(2), false, true, false),
            row(
                "oymak2019towards",
                n * x_spectral.powi(6) / lambda0.powi(4),
                x_spectral.powi(2) * log / lambda0,
                false,
                true,
                false,
            ),
            row(
                "du2018gradientdeep",
                two_l * n.powi(4) / lambda0.powi(4),
                two_l * n * n * log / lambda0.powi(2),
                true,
                false,
                true,
            ),
            row(
                "allen2018convergence",
                k * n.powi(24) * l.powi(12) / phi.powi(8),
                n.powi(6) * l * l * log / (phi * phi),
                true,
                true,
                false,
            ),
            row(THIS_WORK, k * n.powi(8) * l.powi(12) / phi.powi(4), n * n * l * l * log / phi, true, true, false),
        ],
    })
}

impl fmt::Display for ComparisonTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<22} {:>14} {:>14}  {:<5} {:<5}",
            "work", "width", "iterations", "deep", "relu"
        )?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<22} {:>14.4e} {:>14.4e}  {:<5} {:<5}{}",
                r.work,
                r.width,
                r.iterations,
                r.deep,
                r.relu,
                if r.symbolic { "  (2^L for 2^O(L))" } else { "" }
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gd_width_fixed_point() {
        let q = TheoryQuery::gd(16, 3, 2, 0.3);
        let w = required_width(&q).unwrap();
        assert!(w.converged);
        assert_eq!(w.base, 2.0 * 16f64.powi(8) * 3f64.powi(12) / 0.3f64.powi(4));
        assert!(w.residual <= 1e-10);
        let q2 = TheoryQuery { n: 32, ..q.clone() };
        assert!((width_base(&q2) / width_base(&q) - 256.0).abs() < 1e-9);
    }

    #[test]
    fn sgd_to_gd_base_ratio() {
        let gd = TheoryQuery::gd(16, 3, 2, 0.3);
        let sgd = TheoryQuery::sgd(Theorem::SgdDeep, 16, 3, 2, 0.3, 16);
        let ratio = width_base(&sgd) / width_base(&gd);
        let expected = 16f64.powi(9) / (16f64.powi(4) * 0.3f64.powi(4));
        assert!((ratio / expected - 1.0).abs() < 1e-12);
    }

    #[test]
    fn iteration_budgets() {
        let q = TheoryQuery::gd(16, 3, 2, 0.3);
        let t = iteration_budget(&q, 1e6).unwrap();
        assert!((t - 2304.0 * 1000f64.ln() / 0.3).abs() < 1e-9);
        assert!((t / 53044.0 - 1.0).abs() < 1e-3);
        assert_eq!(iteration_budget(&TheoryQuery { epsilon: 1.0, ..q }, 1e6).unwrap(), 0.0);

        let s4 = TheoryQuery::sgd(Theorem::SgdDeep, 16, 3, 2, 0.3, 4);
        let s8 = TheoryQuery { batch: Some(8), ..s4.clone() };
        let ratio = iteration_budget(&s4, 1e9).unwrap() / iteration_budget(&s8, 1e9).unwrap();
        assert!((ratio - 2.0).abs() < 1e-12);
    }

    #[test]
    fn radii() {
        let base = RadiusInputs {
            n: 16,
            depth: 3,
            k: 2,
            m: 1024.0,
            phi: 0.3,
            batch: 1,
            c: 1.0,
        };
        let tau = perturbation_radius(RadiusContext::GdLemma, base).unwrap();
        assert!((tau / 3.0e-9 - 1.0).abs() < 0.01, "{tau}");
        let tau2 = perturbation_radius(RadiusContext::GdLemma, RadiusInputs { n: 32, ..base }).unwrap();
        assert!((tau / tau2 - 8.0).abs() < 1e-12);
        let sgd = perturbation_radius(RadiusContext::SgdLemma, base).unwrap();
        assert!(sgd <= tau);
    }

    #[test]
    fn step_sizes() {
        let q = TheoryQuery::gd(16, 3, 2, 0.3);
        assert_eq!(step_size(&q, 1024.0).unwrap(), 2.0 / 9216.0);
        let s = TheoryQuery::sgd(Theorem::SgdDeep, 16, 3, 1, 0.3, 4);
        let eta = step_size(&s, 1024.0).unwrap();
        assert!((eta / 4.13e-8 - 1.0).abs() < 1e-3);
    }

    #[test]
    fn validation() {
        let q = TheoryQuery::gd(16, 3, 2, 0.0);
        assert!(required_width(&q).is_err());
        let q = TheoryQuery::sgd(Theorem::SgdDeep, 4, 3, 2, 0.3, 5);
        assert!(required_width(&q).is_err());
    }

    #[test]
    fn comparison_rows() {
        let t = compare_prior_work(&PriorWorkInputs {
            n: 16,
            depth: 3,
            k: 1,
            phi: 0.3,
            x_spectral: None,
            d: Some(16),
            lambda0: None,
            epsilon: 1e-3,
        })
        .unwrap();
        let ours = t.row(THIS_WORK).unwrap();
        let allen = t.row("allen2018convergence").unwrap();
        let ratio = allen.width / ours.width;
        let expected = 16f64.powi(16) / 0.3f64.powi(4);
        assert!((ratio / expected - 1.0).abs() < 1e-12);
        let it_ratio = allen.iterations / ours.iterations;
        assert!((it_ratio / (16f64.powi(4) / 0.3) - 1.0).abs() < 1e-12);
        let du = t.row("du2018gradient").unwrap();
        let expected = 1e8 * 16f64.powi(14) / 0.3f64.powi(4);
        assert!((du.width / expected - 1.0).abs() < 1e-12);
        assert!(t.row("du2018gradientdeep").unwrap().symbolic);
        assert!(t.to_string().contains("this work"));
    }
}
