//! Gradient regions: for vectors `z₁..z_n` with normalizations `z̄ᵢ`,
//!
//! `𝒲ᵢ = { w : |⟨w, z̄ᵢ⟩| ≤ γ  and  |⟨Qᵢ'uᵢ', z̄ⱼ⟩| ≥ 2γ for every j ≠ i }`
//!
//! where `w = uᵢ⁽¹⁾ z̄ᵢ + Qᵢ'uᵢ'` splits `w` along `z̄ᵢ` and its orthogonal
//! complement. A Gaussian `w` lands in `𝒲ᵢ` with probability at least
//! `φ̃/(n√(128e))`, the regions are pairwise disjoint, and inside `𝒲ᵢ` the
//! vector `h(w) = Σⱼ aⱼ σ'(⟨w, zⱼ⟩) zⱼ` is at least `|aᵢ|/4` long with
//! probability at least one half. Everything here is checked by sampling.

use serde::{Deserialize, Serialize};

use crate::numerics::{dot, norm, Matrix, Rng};
use crate::{Error, Result};

/// Conditional estimates are refused below this many samples inside the region.
pub const MIN_CONDITIONAL_HITS: usize = 500;
/// Region probabilities need at least this many samples.
pub const MIN_REGION_SAMPLES: usize = 10_000;
const SAMPLE_BLOCK: usize = 1 << 16;

/// `√π φ̃ / (8n)`.
pub fn default_gamma(phi_tilde: f64, n: usize) -> f64 {
    std::f64::consts::PI.sqrt() * phi_tilde / (8.0 * n as f64)
}

/// `φ̃ / (n √(128e))`.
pub fn region_probability_bound(phi_tilde: f64, n: usize) -> f64 {
    phi_tilde / (n as f64 * (128.0 * std::f64::consts::E).sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RegionConfig {
    /// Rows are `z₁..z_n`.
    pub z: Matrix,
    pub phi_tilde: f64,
    pub gamma: f64,
    #[serde(skip)]
    unit: Matrix,
    /// `⟨z̄ᵢ, z̄ⱼ⟩`.
    #[serde(skip)]
    cosines: Matrix,
}

impl RegionConfig {
    /// Validates `z` and `phi_tilde`; `gamma` defaults to [`default_gamma`].
    pub fn new(z: Matrix, phi_tilde: f64, gamma: Option<f64>) -> Result<Self> {
        let (n, d) = z.shape();
        if n == 0 || d == 0 {
            return Err(Error::Dimension("need at least one non-empty vector".into()));
        }
        if !(0.0..=std::f64::consts::SQRT_2).contains(&phi_tilde) {
            return Err(Error::Domain(format!(
                "phi_tilde must lie in [0, sqrt 2], got {phi_tilde}"
            )));
        }
        let gamma = gamma.unwrap_or_else(|| default_gamma(phi_tilde, n));
        if !(gamma >= 0.0) || !gamma.is_finite() {
            return Err(Error::Domain(format!("gamma must be finite and >= 0, got {gamma}")));
        }
        let mut unit = z.clone();
        for i in 0..n {
            let r = norm(z.row(i));
            if !(0.5..=2.0).contains(&r) {
                return Err(Error::Validation(format!(
                    "vector {i} has norm {r}, outside [1/2, 2]"
                )));
            }
            unit.row_mut(i).iter_mut().for_each(|v| *v /= r);
        }
        for i in 0..n {
            for j in i + 1..n {
                let sep = norm(&unit.row(i).iter().zip(unit.row(j)).map(|(a, b)| a - b).collect::<Vec<_>>());
                if sep < phi_tilde {
                    return Err(Error::Validation(format!(
                        "normalized vectors {i} and {j} are {sep} apart, below phi_tilde = {phi_tilde}"
                    )));
                }
            }
        }
        let cosines = Matrix::from_fn(n, n, |i, j| dot(unit.row(i), unit.row(j)));
        Ok(Self {
            z,
            phi_tilde,
            gamma,
            unit,
            cosines,
        })
    }

    pub fn n(&self) -> usize {
        self.z.rows()
    }

    pub fn d(&self) -> usize {
        self.z.cols()
    }

    /// `z̄ᵢ`.
    pub fn unit(&self, i: usize) -> &[f64] {
        self.unit.row(i)
    }

    fn check_index(&self, i: usize) -> Result<()> {
        if i >= self.n() {
            return Err(Error::IndexOutOfRange {
                index: i,
                len: self.n(),
            });
        }
        Ok(())
    }

    /// Membership given the projections `proj[j] = ⟨w, z̄ⱼ⟩`.
    ///
    /// Uses `⟨Qᵢ'uᵢ', z̄ⱼ⟩ = ⟨w − uᵢ⁽¹⁾z̄ᵢ, z̄ⱼ⟩ = ⟨w, z̄ⱼ⟩ − uᵢ⁽¹⁾⟨z̄ᵢ, z̄ⱼ⟩`.
    fn member_from_projections(&self, proj: &[f64], i: usize) -> bool {
        let u1 = proj[i];
        if u1.abs() > self.gamma {
            return false;
        }
        (0..self.n())
            .filter(|&j| j != i)
            .all(|j| (proj[j] - u1 * self.cosines[(i, j)]).abs() >= 2.0 * self.gamma)
    }

    fn projections(&self, w: &[f64], out: &mut [f64]) {
        for (j, p) in out.iter_mut().enumerate() {
            *p = dot(w, self.unit.row(j));
        }
    }
}

/// Unit vectors with pairwise distance at least `phi_tilde`, by rejection
/// sampling from normalized Gaussians.
pub fn sample_separated_unit_vectors(
    n: usize,
    d: usize,
    phi_tilde: f64,
    rng: &mut Rng,
) -> Result<Matrix> {
    if n == 0 || d == 0 {
        return Err(Error::Dimension("need n, d >= 1".into()));
    }
    let budget = 1000 * n;
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut rejections = 0;
    while rows.len() < n {
        let mut v: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
        let r = norm(&v);
        v.iter_mut().for_each(|x| *x /= r);
        let far = rows.iter().all(|u| {
            let s: f64 = u.iter().zip(&v).map(|(a, b)| (a - b) * (a - b)).sum();
            s.sqrt() >= phi_tilde
        });
        if far {
            rows.push(v);
        } else {
            rejections += 1;
            if rejections > budget {
                return Err(Error::Generation(format!(
                    "could not place {n} unit vectors in R^{d} at separation {phi_tilde}"
                )));
            }
        }
    }
    Matrix::from_rows(&rows)
}

/// Orthonormal `d×d` frame whose first column is `z̄ᵢ`, completed by
/// Gram–Schmidt over the standard basis in index order.
pub fn build_region_frame(z: &Matrix, i: usize) -> Result<Matrix> {
    if i >= z.rows() {
        return Err(Error::IndexOutOfRange {
            index: i,
            len: z.rows(),
        });
    }
    let d = z.cols();
    let r = norm(z.row(i));
    if r == 0.0 {
        return Err(Error::Domain(format!("vector {i} is zero")));
    }
    let mut cols: Vec<Vec<f64>> = vec![z.row(i).iter().map(|v| v / r).collect()];
    for e in 0..d {
        if cols.len() == d {
            break;
        }
        let mut v = vec![0.0; d];
        v[e] = 1.0;
        // Two passes keep the frame orthonormal to rounding.
        for _ in 0..2 {
            for c in &cols {
                let p = dot(&v, c);
                v.iter_mut().zip(c).for_each(|(a, b)| *a -= p * b);
            }
        }
        let len = norm(&v);
        if len > 1e-6 {
            v.iter_mut().for_each(|a| *a /= len);
            cols.push(v);
        }
    }
    Ok(Matrix::from_fn(d, d, |r, c| cols[c][r]))
}

/// Coordinates `u = Qᵀw` of `w` in a frame; `u[0]` is `uᵢ⁽¹⁾`.
pub fn frame_coordinates(frame: &Matrix, w: &[f64]) -> Vec<f64> {
    frame.transpose_mul_vec(w)
}

/// `uᵢ⁽¹⁾ z̄ᵢ + Qᵢ'uᵢ'`, i.e. `Q u`.
pub fn reconstruct(frame: &Matrix, u: &[f64]) -> Vec<f64> {
    frame.mul_vec(u)
}

/// Whether `w ∈ 𝒲ᵢ`.
pub fn region_membership(w: &[f64], cfg: &RegionConfig, i: usize) -> Result<bool> {
    cfg.check_index(i)?;
    if w.len() != cfg.d() {
        return Err(Error::Dimension(format!(
            "w has {} coordinates, regions live in R^{}",
            w.len(),
            cfg.d()
        )));
    }
    let mut proj = vec![0.0; cfg.n()];
    cfg.projections(w, &mut proj);
    Ok(cfg.member_from_projections(&proj, i))
}

/// Calls `f` on `samples` standard Gaussian vectors in `R^d`.
///
/// Block `b` of 2¹⁶ samples is drawn from stream `b` of a seed taken from
/// `rng`, so the sequence does not depend on how blocks are scheduled.
fn for_each_gaussian(d: usize, samples: usize, rng: &mut Rng, mut f: impl FnMut(&[f64])) {
    let seed = rng.next_u64();
    let mut w = vec![0.0; d];
    let mut done = 0;
    let mut block = 0;
    while done < samples {
        let mut r = Rng::with_stream(seed, block);
        let len = SAMPLE_BLOCK.min(samples - done);
        for _ in 0..len {
            w.iter_mut().for_each(|v| *v = r.normal());
            f(&w);
        }
        done += len;
        block += 1;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionProbability {
    pub region: usize,
    pub samples: usize,
    pub hits: usize,
    pub p_hat: f64,
    pub std_err: f64,
    /// `φ̃ / (n √(128e))`.
    pub lower_bound: f64,
    /// `p̂ − 3σ̂`, reported against the bound.
    pub p_lower: f64,
    /// `p̂ + 3σ̂ ≥ lower_bound`.
    pub pass: bool,
}

impl RegionProbability {
    fn from_hits(cfg: &RegionConfig, region: usize, hits: usize, samples: usize) -> Self {
        let (p_hat, std_err) = proportion(hits, samples);
        let lower_bound = region_probability_bound(cfg.phi_tilde, cfg.n());
        Self {
            region,
            samples,
            hits,
            p_hat,
            std_err,
            lower_bound,
            p_lower: p_hat - 3.0 * std_err,
            pass: p_hat + 3.0 * std_err >= lower_bound,
        }
    }
}

fn proportion(hits: usize, samples: usize) -> (f64, f64) {
    let p = hits as f64 / samples as f64;
    (p, (p * (1.0 - p) / samples as f64).sqrt())
}

/// Monte Carlo estimate of `P(w ∈ 𝒲ᵢ)` for `w ~ N(0, I_d)`.
pub fn estimate_region_probability(
    cfg: &RegionConfig,
    i: usize,
    samples: usize,
    rng: &mut Rng,
) -> Result<RegionProbability> {
    cfg.check_index(i)?;
    check_samples(samples)?;
    let mut proj = vec![0.0; cfg.n()];
    let mut hits = 0;
    for_each_gaussian(cfg.d(), samples, rng, |w| {
        cfg.projections(w, &mut proj);
        if cfg.member_from_projections(&proj, i) {
            hits += 1;
        }
    });
    Ok(RegionProbability::from_hits(cfg, i, hits, samples))
}

fn check_samples(samples: usize) -> Result<()> {
    if samples < MIN_REGION_SAMPLES {
        return Err(Error::Domain(format!(
            "need at least {MIN_REGION_SAMPLES} samples, got {samples}"
        )));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionalCheck {
    pub region: usize,
    /// Samples that fell in `𝒲ᵢ`.
    pub hits: usize,
    /// Estimate of `P[‖h(w)‖ ≥ |aᵢ|/4 | w ∈ 𝒲ᵢ]`.
    pub p_hat: f64,
    pub std_err: f64,
    /// `p̂ + 3σ̂ ≥ 1/2`.
    pub pass: bool,
}

struct ConditionalTally {
    hits: usize,
    long: usize,
}

impl ConditionalTally {
    fn finish(self, region: usize) -> Result<ConditionalCheck> {
        if self.hits < MIN_CONDITIONAL_HITS {
            return Err(Error::InsufficientSamples {
                got: self.hits,
                needed: MIN_CONDITIONAL_HITS,
            });
        }
        let (p_hat, std_err) = proportion(self.long, self.hits);
        Ok(ConditionalCheck {
            region,
            hits: self.hits,
            p_hat,
            std_err,
            pass: p_hat + 3.0 * std_err >= 0.5,
        })
    }
}

/// `‖h(w)‖ ≥ |aᵢ|/4` with `h(w) = Σⱼ aⱼ 1(⟨w, zⱼ⟩ > 0) zⱼ`.
fn h_is_long(cfg: &RegionConfig, a: &[f64], i: usize, w: &[f64], h: &mut [f64]) -> bool {
    h.iter_mut().for_each(|v| *v = 0.0);
    for (j, &aj) in a.iter().enumerate() {
        let zj = cfg.z.row(j);
        if dot(w, zj) > 0.0 {
            h.iter_mut().zip(zj).for_each(|(hv, zv)| *hv += aj * zv);
        }
    }
    norm(h) >= a[i].abs() / 4.0
}

fn check_coefficients(cfg: &RegionConfig, a: &[f64], i: usize) -> Result<()> {
    cfg.check_index(i)?;
    if a.len() != cfg.n() {
        return Err(Error::Dimension(format!(
            "{} coefficients for {} vectors",
            a.len(),
            cfg.n()
        )));
    }
    if a[i] == 0.0 {
        return Err(Error::Domain(format!("coefficient a_{i} must be non-zero")));
    }
    Ok(())
}

/// Monte Carlo estimate of `P[‖h(w)‖ ≥ |aᵢ|/4 | w ∈ 𝒲ᵢ]`.
pub fn h_conditional_check(
    a: &[f64],
    cfg: &RegionConfig,
    i: usize,
    samples: usize,
    rng: &mut Rng,
) -> Result<ConditionalCheck> {
    check_coefficients(cfg, a, i)?;
    let mut proj = vec![0.0; cfg.n()];
    let mut h = vec![0.0; cfg.d()];
    let mut tally = ConditionalTally { hits: 0, long: 0 };
    for_each_gaussian(cfg.d(), samples, rng, |w| {
        cfg.projections(w, &mut proj);
        if cfg.member_from_projections(&proj, i) {
            tally.hits += 1;
            if h_is_long(cfg, a, i, w, &mut h) {
                tally.long += 1;
            }
        }
    });
    tally.finish(i)
}

/// Every region's probability, the disjointness count and, when `a` is
/// given, every region's conditional check, from a single sample stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionSurvey {
    pub n: usize,
    pub d: usize,
    pub phi_tilde: f64,
    pub gamma: f64,
    pub samples: usize,
    pub regions: Vec<RegionProbability>,
    /// Samples that fell in two or more regions.
    pub disjoint_violations: usize,
    /// One entry per region, or the reason it could not be estimated.
    pub conditional: Vec<std::result::Result<ConditionalCheck, String>>,
}

impl RegionSurvey {
    pub fn all_pass(&self) -> bool {
        self.disjoint_violations == 0
            && self.regions.iter().all(|r| r.pass)
            && self
                .conditional
                .iter()
                .all(|c| c.as_ref().is_ok_and(|c| c.pass))
    }
}

pub fn region_survey(
    cfg: &RegionConfig,
    a: Option<&[f64]>,
    samples: usize,
    rng: &mut Rng,
) -> Result<RegionSurvey> {
    check_samples(samples)?;
    let n = cfg.n();
    if let Some(a) = a {
        for i in 0..n {
            check_coefficients(cfg, a, i)?;
        }
    }
    let mut proj = vec![0.0; n];
    let mut h = vec![0.0; cfg.d()];
    let mut hits = vec![0usize; n];
    let mut tallies: Vec<ConditionalTally> =
        (0..n).map(|_| ConditionalTally { hits: 0, long: 0 }).collect();
    let mut violations = 0;
    for_each_gaussian(cfg.d(), samples, rng, |w| {
        cfg.projections(w, &mut proj);
        let mut member_of = 0;
        for i in 0..n {
            if cfg.member_from_projections(&proj, i) {
                member_of += 1;
                hits[i] += 1;
                if let Some(a) = a {
                    tallies[i].hits += 1;
                    if h_is_long(cfg, a, i, w, &mut h) {
                        tallies[i].long += 1;
                    }
                }
            }
        }
        if member_of > 1 {
            violations += 1;
        }
    });
    let regions = (0..n)
        .map(|i| RegionProbability::from_hits(cfg, i, hits[i], samples))
        .collect();
    let conditional = if a.is_some() {
        tallies
            .into_iter()
            .enumerate()
            .map(|(i, t)| t.finish(i).map_err(|e| e.to_string()))
            .collect()
    } else {
        Vec::new()
    };
    Ok(RegionSurvey {
        n,
        d: cfg.d(),
        phi_tilde: cfg.phi_tilde,
        gamma: cfg.gamma,
        samples,
        regions,
        disjoint_violations: violations,
        conditional,
    })
}
