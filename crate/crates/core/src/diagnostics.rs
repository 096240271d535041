//! Measured sides of the gradient, drift, smoothness and convergence bounds,
//! each compared with the shape of its theoretical rate.
//!
//! Absolute constants in the theory are unknown, so most checks report the
//! ratio `measured / shape` as an estimate of the constant. Only bounds with
//! explicit constants (or pure positivity claims) carry a pass/fail verdict.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::network::{
    evaluate, evaluate_subset, forward_batch, loss, Dims, Evaluation, GradientBundle,
    NetworkParams,
};
use crate::numerics::{linear_fit, gaussian_matrix, norm, Rng};
use crate::trainer::{spectral_distance, TrainResult};
use crate::{Error, Result};

/// Default iterations skipped before fitting a convergence rate.
pub const DEFAULT_BURN_IN: usize = 100;
/// Allowed spread of a scale-free ratio across a 16× range of widths.
pub const RATIO_BAND: f64 = 4.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    ReportOnly,
}

/// One measured quantity against the shape of its bound.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub name: String,
    #[serde(deserialize_with = "crate::nan_json::f64")]
    pub measured: f64,
    #[serde(deserialize_with = "crate::nan_json::f64")]
    pub bound_shape: f64,
    /// `measured / bound_shape`.
    #[serde(deserialize_with = "crate::nan_json::f64")]
    pub ratio: f64,
    pub verdict: Verdict,
    #[serde(deserialize_with = "crate::nan_json::map")]
    pub context: BTreeMap<String, f64>,
}

impl BoundCheck {
    fn new(name: &str, measured: f64, bound_shape: f64, verdict: Verdict) -> Self {
        Self {
            name: name.into(),
            measured,
            bound_shape,
            ratio: measured / bound_shape,
            verdict,
            context: BTreeMap::new(),
        }
    }

    fn with(mut self, key: &str, value: f64) -> Self {
        self.context.insert(key.into(), value);
        self
    }

    fn with_dims(self, dims: &Dims, n: usize) -> Self {
        self.with("n", n as f64)
            .with("L", dims.depth as f64)
            .with("m", dims.width as f64)
            .with("d", dims.input_dim as f64)
            .with("k", dims.output_dim as f64)
    }

    pub fn is_failure(&self) -> bool {
        self.verdict == Verdict::Fail
    }
}

fn positive_loss(l: f64, what: &str) -> Result<()> {
    if !(l > 0.0) {
        return Err(Error::Domain(format!("{what} is zero, so the ratio is undefined")));
    }
    Ok(())
}

fn phi_of(ds: &Dataset) -> Result<f64> {
    ds.phi
        .ok_or_else(|| Error::Domain("data separation needs at least two examples".into()))
}

/// `‖∇L‖_F²` against `mφL(W)/(kn²)`; passes when the ratio is positive.
pub fn gradient_lower_ratio(p: &NetworkParams, ds: &Dataset) -> Result<BoundCheck> {
    let ev = evaluate(p, ds)?;
    gradient_lower_from(&ev, p, ds)
}

fn gradient_lower_from(ev: &Evaluation, p: &NetworkParams, ds: &Dataset) -> Result<BoundCheck> {
    positive_loss(ev.loss, "training loss")?;
    let dims = p.dims();
    let n = ds.n() as f64;
    let phi = phi_of(ds)?;
    let shape = dims.width as f64 * phi * ev.loss / (dims.output_dim as f64 * n * n);
    let measured = ev.gradient.frobenius_norm_sq();
    let ok = measured > 0.0 && measured.is_finite();
    Ok(
        BoundCheck::new("gradient_lower", measured, shape, if ok { Verdict::Pass } else { Verdict::Fail })
            .with_dims(&dims, ds.n())
            .with("phi", phi)
            .with("loss", ev.loss),
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientUpper {
    /// `‖∇L‖_F²` against `mL(W)/k`.
    pub full: BoundCheck,
    /// `‖∇ℓᵢ‖_F² / (mℓᵢ/k)` for each example.
    pub per_example_ratios: Vec<f64>,
    /// The largest per-example ratio.
    pub per_example_max: BoundCheck,
}

/// Full and per-example gradient norms against `m·loss/k`.
pub fn gradient_upper_ratio(p: &NetworkParams, ds: &Dataset) -> Result<GradientUpper> {
    let ev = evaluate(p, ds)?;
    positive_loss(ev.loss, "training loss")?;
    let dims = p.dims();
    let scale = dims.width as f64 / dims.output_dim as f64;
    let full = BoundCheck::new(
        "gradient_upper",
        ev.gradient.frobenius_norm_sq(),
        scale * ev.loss,
        Verdict::ReportOnly,
    )
    .with_dims(&dims, ds.n())
    .with("loss", ev.loss);
    let mut ratios = Vec::with_capacity(ds.n());
    let mut worst: Option<BoundCheck> = None;
    for i in 0..ds.n() {
        let e = evaluate_subset(p, ds, &[i])?;
        positive_loss(e.loss, &format!("loss of example {i}"))?;
        let c = BoundCheck::new(
            "gradient_upper_per_example",
            e.gradient.frobenius_norm_sq(),
            scale * e.loss,
            Verdict::ReportOnly,
        )
        .with_dims(&dims, ds.n())
        .with("example", i as f64);
        ratios.push(c.ratio);
        if worst.as_ref().is_none_or(|w| c.ratio > w.ratio) {
            worst = Some(c);
        }
    }
    Ok(GradientUpper {
        full,
        per_example_ratios: ratios,
        per_example_max: worst.expect("dataset is non-empty"),
    })
}

/// `‖∇ℓᵢ‖²_{2,∞}` against `ℓᵢ ln m`, for single-hidden-layer networks.
pub fn two_infinity_ratio(p: &NetworkParams, ds: &Dataset, i: usize) -> Result<BoundCheck> {
    let dims = p.dims();
    if dims.depth != 1 {
        return Err(Error::Scope(format!(
            "the 2,inf gradient bound is stated for one hidden layer, network has {}",
            dims.depth
        )));
    }
    let e = evaluate_subset(p, ds, &[i])?;
    positive_loss(e.loss, &format!("loss of example {i}"))?;
    let t = e.gradient.two_infinity_norm();
    Ok(BoundCheck::new(
        "two_infinity",
        t * t,
        e.loss * (dims.width as f64).ln(),
        Verdict::ReportOnly,
    )
    .with_dims(&dims, ds.n())
    .with("example", i as f64))
}

/// The first-order remainder between two nearby parameter sets and the two
/// terms that bound it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SemiSmoothness {
    /// `L(W̃) − L(Ŵ) − ⟨∇L(Ŵ), W̃ − Ŵ⟩`.
    pub residual: f64,
    /// `√L(Ŵ) · τ^{1/3} L² √(m ln m)/√k · ‖W̃ − Ŵ‖₂`.
    pub term1_shape: f64,
    /// `L² m/k · ‖W̃ − Ŵ‖₂²`.
    pub term2_shape: f64,
    /// `max_l ‖W̃_l − Ŵ_l‖₂`.
    pub step_norm: f64,
}

/// Remainder and term shapes for one pair; both points must lie within
/// spectral distance `tau` of `reference` on every layer.
pub fn semi_smoothness_residual(
    w_hat: &NetworkParams,
    w_tilde: &NetworkParams,
    reference: &NetworkParams,
    ds: &Dataset,
    tau: f64,
) -> Result<SemiSmoothness> {
    for (name, w) in [("W_hat", w_hat), ("W_tilde", w_tilde)] {
        let far = w
            .weights
            .iter()
            .zip(&reference.weights)
            .map(|(a, b)| spectral_distance(&a.sub(b)))
            .fold(0.0, f64::max);
        if far > tau {
            return Err(Error::Scope(format!(
                "{name} is {far} from the reference, outside tau = {tau}"
            )));
        }
    }
    let ev = evaluate(w_hat, ds)?;
    let step = w_tilde.difference(w_hat);
    let residual = loss(w_tilde, ds)? - ev.loss - ev.gradient.inner(&step);
    let step_norm = step.layers.iter().map(spectral_distance).fold(0.0, f64::max);
    let dims = w_hat.dims();
    let (l, m, k) = (dims.depth as f64, dims.width as f64, dims.output_dim as f64);
    Ok(SemiSmoothness {
        residual,
        term1_shape: ev.loss.sqrt() * tau.cbrt() * l * l * (m * m.ln()).sqrt() / k.sqrt()
            * step_norm,
        term2_shape: l * l * m / k * step_norm * step_norm,
        step_norm,
    })
}

/// Smallest non-negative `(c1, c2)` with `residual ≤ c1·term1 + c2·term2` on
/// every sample.
///
/// A non-negative least-squares fit on the samples with positive residual
/// gives the direction; it is then scaled up just enough to cover the worst
/// sample.
pub fn fit_semi_smoothness(samples: &[SemiSmoothness]) -> (f64, f64) {
    let active: Vec<&SemiSmoothness> = samples.iter().filter(|s| s.residual > 0.0).collect();
    if active.is_empty() {
        return (0.0, 0.0);
    }
    let (mut a11, mut a12, mut a22, mut b1, mut b2) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for s in &active {
        a11 += s.term1_shape * s.term1_shape;
        a12 += s.term1_shape * s.term2_shape;
        a22 += s.term2_shape * s.term2_shape;
        b1 += s.term1_shape * s.residual;
        b2 += s.term2_shape * s.residual;
    }
    let sse = |c1: f64, c2: f64| -> f64 {
        active
            .iter()
            .map(|s| (s.residual - c1 * s.term1_shape - c2 * s.term2_shape).powi(2))
            .sum()
    };
    let mut candidates = Vec::new();
    let det = a11 * a22 - a12 * a12;
    if det > 0.0 {
        let c1 = (b1 * a22 - b2 * a12) / det;
        let c2 = (a11 * b2 - a12 * b1) / det;
        if c1 >= 0.0 && c2 >= 0.0 {
            candidates.push((c1, c2));
        }
    }
    if a11 > 0.0 {
        candidates.push(((b1 / a11).max(0.0), 0.0));
    }
    if a22 > 0.0 {
        candidates.push((0.0, (b2 / a22).max(0.0)));
    }
    let (c1, c2) = candidates
        .into_iter()
        .min_by(|x, y| sse(x.0, x.1).total_cmp(&sse(y.0, y.1)))
        .unwrap_or((0.0, 0.0));
    let scale = active
        .iter()
        .map(|s| {
            let cover = c1 * s.term1_shape + c2 * s.term2_shape;
            if cover > 0.0 {
                s.residual / cover
            } else {
                f64::INFINITY
            }
        })
        .fold(0.0, f64::max);
    if scale.is_finite() {
        let scale = scale.max(1.0);
        (c1 * scale, c2 * scale)
    } else {
        // Some positive residual has both terms zero; no finite constants cover it.
        (f64::INFINITY, f64::INFINITY)
    }
}

/// Samples violating `residual ≤ c1·term1 + c2·term2`.
pub fn semi_smoothness_violations(samples: &[SemiSmoothness], c1: f64, c2: f64) -> usize {
    samples
        .iter()
        .filter(|s| s.residual > c1 * s.term1_shape + c2 * s.term2_shape)
        .count()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SemiSmoothReport {
    pub tau: f64,
    pub c1: f64,
    pub c2: f64,
    pub fit_pairs: usize,
    pub holdout_pairs: usize,
    pub holdout_violations: usize,
    pub max_residual: f64,
}

/// A point `reference + Δ` with every `‖Δ_l‖₂ = scale · tau`, `Δ_l` Gaussian.
pub fn random_point_in_ball(
    reference: &NetworkParams,
    tau: f64,
    scale: f64,
    rng: &mut Rng,
) -> Result<NetworkParams> {
    let mut p = reference.clone();
    for w in &mut p.weights {
        let mut dir = gaussian_matrix(w.rows(), w.cols(), 1.0, rng)?;
        let s = spectral_distance(&dir);
        dir.scale_in_place(scale * tau / s);
        w.axpy(1.0, &dir);
    }
    Ok(p)
}

/// Fits `(c1, c2)` on `pairs` random pairs in the `tau`-ball around
/// `reference` and counts violations on as many fresh pairs.
pub fn semi_smoothness_experiment(
    reference: &NetworkParams,
    ds: &Dataset,
    tau: f64,
    pairs: usize,
    rng: &mut Rng,
) -> Result<SemiSmoothReport> {
    let draw = |rng: &mut Rng| -> Result<SemiSmoothness> {
        let a = rng.uniform();
        let b = rng.uniform();
        let w_hat = random_point_in_ball(reference, tau, a, rng)?;
        let w_tilde = random_point_in_ball(reference, tau, b, rng)?;
        semi_smoothness_residual(&w_hat, &w_tilde, reference, ds, tau * (1.0 + 1e-6))
    };
    let fit: Vec<_> = (0..pairs).map(|_| draw(rng)).collect::<Result<_>>()?;
    let hold: Vec<_> = (0..pairs).map(|_| draw(rng)).collect::<Result<_>>()?;
    let (c1, c2) = fit_semi_smoothness(&fit);
    Ok(SemiSmoothReport {
        tau,
        c1,
        c2,
        fit_pairs: pairs,
        holdout_pairs: pairs,
        holdout_violations: semi_smoothness_violations(&hold, c1, c2),
        max_residual: fit.iter().chain(&hold).map(|s| s.residual).fold(f64::MIN, f64::max),
    })
}

/// Activation and hidden-output drift between two parameter sets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationReport {
    /// Per layer, `(example, unit)` activation flags that differ.
    pub flips: Vec<usize>,
    /// `flips / (n·m)`.
    pub flip_fraction: Vec<f64>,
    /// Per example, `‖x̃_{L−1,i} − x_{L−1,i}‖₂` (the input of the last hidden layer).
    pub hidden_drift: Vec<f64>,
    /// `hidden_norms[l][i] = ‖x_{l,i}‖₂` under the second parameter set.
    pub hidden_norms: Vec<Vec<f64>>,
}

pub fn perturbation_report(
    p0: &NetworkParams,
    p: &NetworkParams,
    ds: &Dataset,
) -> Result<PerturbationReport> {
    let before = forward_batch(p0, &ds.x)?;
    let after = forward_batch(p, &ds.x)?;
    let dims = p.dims();
    let (n, m) = (ds.n(), dims.width);
    let flips: Vec<usize> = (0..dims.depth).map(|l| after.sign_flips(&before, l)).collect();
    let last_in = dims.depth - 1;
    let hidden_drift = (0..n)
        .map(|i| {
            let a = after.layer_input(last_in).row(i);
            let b = before.layer_input(last_in).row(i);
            norm(&a.iter().zip(b).map(|(x, y)| x - y).collect::<Vec<_>>())
        })
        .collect();
    Ok(PerturbationReport {
        flip_fraction: flips.iter().map(|&f| f as f64 / (n * m) as f64).collect(),
        flips,
        hidden_drift,
        hidden_norms: after
            .post
            .iter()
            .map(|h| (0..n).map(|i| norm(h.row(i))).collect())
            .collect(),
    })
}

/// `‖x_{l,i}‖₂` for every hidden layer `l` and example `i`.
pub fn hidden_norms(p: &NetworkParams, ds: &Dataset) -> Result<Vec<Vec<f64>>> {
    Ok(perturbation_report(p, p, ds)?.hidden_norms)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Contraction {
    /// `L(t+1)/L(t)` over the fitted window.
    pub per_step_ratios: Vec<f64>,
    /// Least-squares slope of `ln L` against `t`.
    pub log_slope: f64,
    pub r2: f64,
    /// `1 − exp(slope)`: fraction of loss removed per step.
    pub fitted_rate: f64,
    /// `mφη/(2kn²)`.
    pub theory_rate: f64,
    /// `1 − theory_rate`.
    pub theory_shape: f64,
    /// `fitted_rate / theory_rate`.
    pub fitted_constant: f64,
    pub burn_in: usize,
    /// Number of losses in the fit.
    pub points: usize,
}

/// Geometric fit of a loss sequence after `burn_in` steps.
///
/// Only the prefix of strictly positive losses is used.
pub fn contraction_from_losses(
    losses: &[f64],
    burn_in: usize,
    dims: &Dims,
    n: usize,
    phi: f64,
    eta: f64,
) -> Result<Contraction> {
    let positive = losses.iter().take_while(|&&l| l > 0.0).count();
    let window = losses.get(burn_in..positive).unwrap_or(&[]);
    if window.len() < 10 {
        return Err(Error::Domain(format!(
            "need at least 10 positive losses after burn-in {burn_in}, have {}",
            window.len()
        )));
    }
    let xs: Vec<f64> = (0..window.len()).map(|t| (burn_in + t) as f64).collect();
    let ys: Vec<f64> = window.iter().map(|l| l.ln()).collect();
    let (_, slope, r2) = linear_fit(&xs, &ys);
    let fitted_rate = -slope.exp_m1();
    let theory_rate = dims.width as f64 * phi * eta
        / (2.0 * dims.output_dim as f64 * (n * n) as f64);
    Ok(Contraction {
        per_step_ratios: window.windows(2).map(|w| w[1] / w[0]).collect(),
        log_slope: slope,
        r2,
        fitted_rate,
        theory_rate,
        theory_shape: 1.0 - theory_rate,
        fitted_constant: fitted_rate / theory_rate,
        burn_in,
        points: window.len(),
    })
}

pub fn contraction_estimate(
    result: &TrainResult,
    ds: &Dataset,
    burn_in: usize,
) -> Result<Contraction> {
    contraction_from_losses(
        &result.losses,
        burn_in,
        &result.initial.dims(),
        ds.n(),
        phi_of(ds)?,
        result.eta,
    )
}

/// How a minibatch is drawn for variance estimates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchSampling {
    /// `B` distinct indices, as the trainer draws them.
    WithoutReplacement,
    /// `B` independent uniform indices.
    WithReplacement,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgdVariance {
    /// Mean `‖G‖_F²` against `8mL/(Bk) + 2‖∇L‖_F²`.
    pub second_moment: BoundCheck,
    /// Mean `‖G − ∇L‖_F²`.
    pub variance: f64,
    pub batch: usize,
    pub trials: usize,
    pub sampling: BatchSampling,
}

/// Monte Carlo second moment and variance of the minibatch gradient.
pub fn sgd_variance_estimate(
    p: &NetworkParams,
    ds: &Dataset,
    batch: usize,
    trials: usize,
    sampling: BatchSampling,
    rng: &mut Rng,
) -> Result<SgdVariance> {
    let n = ds.n();
    if trials < 30 {
        return Err(Error::Domain(format!("need at least 30 trials, got {trials}")));
    }
    if batch == 0 || (sampling == BatchSampling::WithoutReplacement && batch > n) {
        return Err(Error::Domain(format!("batch size {batch} invalid for n = {n}")));
    }
    let full = evaluate(p, ds)?;
    positive_loss(full.loss, "training loss")?;
    let mut second = 0.0;
    let mut var = 0.0;
    for _ in 0..trials {
        let mut idx = match sampling {
            BatchSampling::WithoutReplacement => rng.sample_distinct(n, batch),
            BatchSampling::WithReplacement => rng.sample_with_replacement(n, batch),
        };
        idx.sort_unstable();
        let g = evaluate_subset(p, ds, &idx)?.gradient;
        second += g.frobenius_norm_sq();
        var += g.sub(&full.gradient).frobenius_norm_sq();
    }
    let dims = p.dims();
    let g2 = full.gradient.frobenius_norm_sq();
    let shape = 8.0 * dims.width as f64 * full.loss / (batch as f64 * dims.output_dim as f64)
        + 2.0 * g2;
    let measured = second / trials as f64;
    let verdict = if measured <= shape {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    Ok(SgdVariance {
        second_moment: BoundCheck::new("sgd_second_moment", measured, shape, verdict)
            .with_dims(&dims, n)
            .with("B", batch as f64)
            .with("trials", trials as f64),
        variance: var / trials as f64,
        batch,
        trials,
        sampling,
    })
}

/// Log-log slope of minibatch-gradient variance against batch size.
pub fn variance_slope(estimates: &[SgdVariance]) -> (f64, f64) {
    let xs: Vec<f64> = estimates.iter().map(|e| (e.batch as f64).ln()).collect();
    let ys: Vec<f64> = estimates.iter().map(|e| e.variance.ln()).collect();
    let (_, slope, r2) = linear_fit(&xs, &ys);
    (slope, r2)
}

/// Largest over ratios divided by smallest.
pub fn band(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::MIN, f64::max);
    let min = values.iter().cloned().fold(f64::MAX, f64::min);
    max / min
}

/// One width of a width-scaling sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WidthRun {
    pub width: usize,
    pub reached_target: bool,
    pub target_loss: f64,
    pub steps: usize,
    /// `max_{t,l} ‖W_l^(t) − W_l^(0)‖₂` over recorded steps.
    pub max_distance: f64,
    /// Per layer flip fraction at the final recorded step.
    pub flip_fraction: Vec<f64>,
    /// All-layer flip fraction at the final recorded step.
    pub total_flip_fraction: f64,
    pub lower_ratio_init: f64,
    pub upper_ratio_init: f64,
    /// Per-step fitted loss reduction (no burn-in; runs are short).
    pub fitted_rate: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WidthScaling {
    pub runs: Vec<WidthRun>,
    /// Slope of `ln max_distance` against `ln m`.
    pub exponent: f64,
    pub r2: f64,
    pub lower_ratio_band: f64,
    pub upper_ratio_band: f64,
    /// Flip fraction never increases with width.
    pub flips_non_increasing: bool,
    /// Some width missed its loss target.
    pub partial: bool,
}

/// Summarizes runs at several widths (each trained until its loss halved or
/// whatever target it used).
pub fn width_scaling_summary(runs: Vec<WidthRun>) -> Result<WidthScaling> {
    if runs.len() < 2 {
        return Err(Error::Domain("width scaling needs at least two widths".into()));
    }
    let mut runs = runs;
    runs.sort_by_key(|r| r.width);
    if !runs.iter().all(|r| r.max_distance > 0.0 && r.max_distance.is_finite()) {
        return Err(Error::Domain("trajectory distances must be positive and finite".into()));
    }
    let xs: Vec<f64> = runs.iter().map(|r| (r.width as f64).ln()).collect();
    let ys: Vec<f64> = runs.iter().map(|r| r.max_distance.ln()).collect();
    let (_, exponent, r2) = linear_fit(&xs, &ys);
    let lower: Vec<f64> = runs.iter().map(|r| r.lower_ratio_init).collect();
    let upper: Vec<f64> = runs.iter().map(|r| r.upper_ratio_init).collect();
    Ok(WidthScaling {
        exponent,
        r2,
        lower_ratio_band: band(&lower),
        upper_ratio_band: band(&upper),
        flips_non_increasing: runs
            .windows(2)
            .all(|w| w[1].total_flip_fraction <= w[0].total_flip_fraction),
        partial: runs.iter().any(|r| !r.reached_target),
        runs,
    })
}

/// Builds a [`WidthRun`] from a finished training run.
pub fn width_run(result: &TrainResult, ds: &Dataset, target_loss: f64) -> Result<WidthRun> {
    let dims = result.initial.dims();
    let first = result
        .records
        .first()
        .ok_or_else(|| Error::Domain("run has no records".into()))?;
    let last = result.records.last().expect("non-empty");
    let max_distance = result
        .records
        .iter()
        .flat_map(|r| r.dists.iter().copied())
        .fold(0.0, f64::max);
    let nm = (ds.n() * dims.width) as f64;
    let flip_fraction: Vec<f64> = last.flips.iter().map(|&f| f as f64 / nm).collect();
    let total = last.flips.iter().sum::<usize>() as f64 / (nm * dims.depth as f64);
    let fitted_rate = contraction_estimate(result, ds, 0).ok().map(|c| c.fitted_rate);
    Ok(WidthRun {
        width: dims.width,
        reached_target: *result.losses.last().expect("non-empty") <= target_loss,
        target_loss,
        steps: result.steps,
        max_distance,
        flip_fraction,
        total_flip_fraction: total,
        lower_ratio_init: first.grad_lower_ratio,
        upper_ratio_init: first.grad_upper_ratio,
        fitted_rate,
    })
}

/// `‖G‖_F` of a bundle relative to the network width, handy for reports.
pub fn gradient_norm_sq(g: &GradientBundle) -> f64 {
    g.frobenius_norm_sq()
}
