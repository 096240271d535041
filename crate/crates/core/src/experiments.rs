//! Experiment configuration files, seed/width sweeps, artifact layout and
//! verification reports.
//!
//! Output layout for an experiment named `name` under `out`:
//!
//! ```text
//! out/name/config.json              normalized copy of the config, without output_dir
//! out/name/dataset.json
//! out/name/report.json              the full VerificationReport
//! out/name/seed_S/m_M/trace.csv
//! out/name/seed_S/m_M/report.json   the CellReport
//! out/name/seed_S/m_M/params_final.ckpt
//! ```

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{generate_dataset, Dataset, DEFAULT_MU};
use crate::diagnostics::{
    contraction_estimate, contraction_from_losses, gradient_lower_ratio, gradient_upper_ratio,
    perturbation_report, semi_smoothness_experiment, sgd_variance_estimate, two_infinity_ratio,
    width_run, width_scaling_summary, BatchSampling, BoundCheck, Verdict, DEFAULT_BURN_IN,
    RATIO_BAND,
};
use crate::network::{init_params, save_checkpoint, Dims, NetworkParams};
use crate::numerics::Rng;
use crate::trainer::{csv_header, csv_row, read_csv, train, write_csv, StopReason, TrainConfig};
use crate::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

const INIT_STREAM: u64 = 1;
const DIAGNOSTICS_STREAM: u64 = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub n: usize,
    pub d: usize,
    pub k: usize,
    #[serde(default = "default_mu")]
    pub mu: f64,
    pub phi_target: f64,
    pub seed: u64,
}

fn default_mu() -> f64 {
    DEFAULT_MU
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    #[serde(rename = "L")]
    pub depth: usize,
    /// One or more hidden widths; each is a separate sweep cell.
    #[serde(rename = "m")]
    pub widths: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SemiSmoothSpec {
    pub tau: f64,
    pub pairs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VarianceSpec {
    #[serde(rename = "B")]
    pub batch: usize,
    pub trials: usize,
    #[serde(default = "default_sampling")]
    pub sampling: BatchSampling,
}

fn default_sampling() -> BatchSampling {
    BatchSampling::WithoutReplacement
}

/// Which per-cell checks run. Each enabled check yields exactly one
/// [`BoundCheck`] per (seed, width).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsToggles {
    /// Gradient lower-bound ratio at initialization.
    #[serde(default = "yes")]
    pub gradient_lower: bool,
    /// Gradient upper-bound ratio at initialization.
    #[serde(default = "yes")]
    pub gradient_upper: bool,
    /// Hidden norms at initialization inside `[1/2, 2]`.
    #[serde(default = "yes")]
    pub hidden_norms: bool,
    /// Activation flips and hidden drift between the initial and final parameters.
    #[serde(default = "yes")]
    pub perturbation: bool,
    /// Geometric fit of the loss curve.
    #[serde(default)]
    pub contraction: bool,
    /// Fails the contraction check below this R².
    #[serde(default)]
    pub contraction_min_r2: Option<f64>,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    /// Loss never rises by more than this between consecutive steps.
    #[serde(default)]
    pub monotone_tol: Option<f64>,
    /// 2,∞ gradient ratio at initialization, single hidden layer only.
    #[serde(default)]
    pub two_infinity: bool,
    #[serde(default)]
    pub semi_smoothness: Option<SemiSmoothSpec>,
    #[serde(default)]
    pub sgd_variance: Option<VarianceSpec>,
}

fn yes() -> bool {
    true
}

fn default_burn_in() -> usize {
    DEFAULT_BURN_IN
}

impl Default for DiagnosticsToggles {
    fn default() -> Self {
        Self {
            gradient_lower: true,
            gradient_upper: true,
            hidden_norms: true,
            perturbation: true,
            contraction: false,
            contraction_min_r2: None,
            burn_in: DEFAULT_BURN_IN,
            monotone_tol: None,
            two_infinity: false,
            semi_smoothness: None,
            sgd_variance: None,
        }
    }
}

impl DiagnosticsToggles {
    fn enabled(&self) -> Vec<&'static str> {
        let mut v = Vec::new();
        for (on, name) in [
            (self.gradient_lower, "gradient_lower"),
            (self.gradient_upper, "gradient_upper"),
            (self.hidden_norms, "hidden_norms"),
            (self.perturbation, "perturbation"),
            (self.contraction, "contraction"),
            (self.monotone_tol.is_some(), "monotone_loss"),
            (self.two_infinity, "two_infinity"),
            (self.semi_smoothness.is_some(), "semi_smoothness"),
            (self.sgd_variance.is_some(), "sgd_variance"),
        ] {
            if on {
                v.push(name);
            }
        }
        v
    }
}

/// Trains every width until its loss falls to `target_fraction` of its own
/// initial loss, then fits how the trajectory length scales with width.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WidthScalingSpec {
    #[serde(default = "default_target_fraction")]
    pub target_fraction: f64,
    /// Accepted range for the fitted exponent of distance against width.
    #[serde(default = "default_exponent_range")]
    pub exponent_range: [f64; 2],
    #[serde(default = "default_band")]
    pub ratio_band: f64,
}

fn default_target_fraction() -> f64 {
    0.5
}

fn default_exponent_range() -> [f64; 2] {
    [-0.65, -0.35]
}

fn default_band() -> f64 {
    RATIO_BAND
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub format_version: u32,
    pub name: String,
    pub dataset: DatasetSpec,
    pub network: NetworkSpec,
    /// Training settings; `seed` is replaced by each entry of `seeds`.
    pub train: TrainConfig,
    #[serde(default)]
    pub diagnostics: DiagnosticsToggles,
    #[serde(default)]
    pub width_scaling: Option<WidthScalingSpec>,
    /// Each seed fixes the network initialization and the minibatch stream.
    pub seeds: Vec<u64>,
    /// Not part of the config hash.
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.format_version != FORMAT_VERSION {
            return bad(format!(
                "format_version {} is not supported (expected {FORMAT_VERSION})",
                self.format_version
            ));
        }
        if self.name.is_empty() || self.name.contains(['/', '\\']) || self.name.starts_with('.') {
            return bad(format!("name {:?} is not a plain directory name", self.name));
        }
        if self.seeds.is_empty() {
            return bad("seeds must not be empty".into());
        }
        if self.network.widths.is_empty() || self.network.widths.contains(&0) {
            return bad("network.m must list positive widths".into());
        }
        if self.network.depth == 0 {
            return bad("network.L must be at least 1".into());
        }
        let mut seen = self.seeds.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.seeds.len() {
            return bad("seeds must be distinct".into());
        }
        let mut widths = self.network.widths.clone();
        widths.sort_unstable();
        widths.dedup();
        if widths.len() != self.network.widths.len() {
            return bad("widths must be distinct".into());
        }
        self.train.validate(self.dataset.n)?;
        let dg = &self.diagnostics;
        if dg.two_infinity && self.network.depth != 1 {
            return bad("two_infinity needs L = 1".into());
        }
        if let Some(v) = &dg.sgd_variance {
            if v.trials < 30 || v.batch == 0 {
                return bad("sgd_variance needs B >= 1 and at least 30 trials".into());
            }
        }
        if let Some(s) = &dg.semi_smoothness {
            if !(s.tau > 0.0) || s.pairs == 0 {
                return bad("semi_smoothness needs tau > 0 and pairs >= 1".into());
            }
        }
        if let Some(ws) = &self.width_scaling {
            if self.network.widths.len() < 3 {
                return bad("width_scaling needs at least three widths".into());
            }
            if !(ws.target_fraction > 0.0 && ws.target_fraction < 1.0) {
                return bad("width_scaling.target_fraction must lie in (0, 1)".into());
            }
        }
        Ok(())
    }

    /// SHA-256 of the normalized config, excluding `output_dir`.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = None;
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Cells in run order: seeds outer, widths inner.
    pub fn cells(&self) -> Vec<(u64, usize)> {
        self.seeds
            .iter()
            .flat_map(|&s| self.network.widths.iter().map(move |&m| (s, m)))
            .collect()
    }

    pub fn dataset(&self) -> Result<Dataset> {
        let d = &self.dataset;
        generate_dataset(d.n, d.d, d.k, d.mu, d.phi_target, &mut Rng::new(d.seed))
    }

    /// Initial parameters for one cell.
    pub fn initial_params(&self, seed: u64, width: usize) -> Result<NetworkParams> {
        let d = &self.dataset;
        init_params(
            Dims::new(self.network.depth, width, d.d, d.k),
            &mut Rng::with_stream(seed, INIT_STREAM),
        )
    }

    /// Training settings for one cell.
    pub fn cell_train_config(&self, seed: u64, initial_loss: f64) -> TrainConfig {
        let mut t = self.train.clone();
        t.seed = seed;
        if let Some(ws) = &self.width_scaling {
            t.target_loss = t.target_loss.max(ws.target_fraction * initial_loss);
        }
        t
    }
}

pub fn cell_dir(root: &Path, seed: u64, width: usize) -> PathBuf {
    root.join(format!("seed_{seed}")).join(format!("m_{width}"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub seed: u64,
    pub width: usize,
    #[serde(deserialize_with = "crate::nan_json::f64")]
    pub eta: f64,
    pub steps: usize,
    pub stop_reason: Option<StopReason>,
    #[serde(deserialize_with = "crate::nan_json::f64")]
    pub initial_loss: f64,
    #[serde(deserialize_with = "crate::nan_json::f64")]
    pub final_loss: f64,
    pub checks: Vec<BoundCheck>,
    /// Stage and diagnostic errors, in order.
    pub errors: Vec<String>,
    /// Training failed, so no trajectory exists.
    pub failed: bool,
    pub wall_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub tool_version: String,
    pub format_version: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub name: String,
    pub provenance: Provenance,
    pub enabled: Vec<String>,
    pub cells: Vec<CellReport>,
    /// Checks spanning several cells (width scaling, seed averages).
    pub experiment_checks: Vec<BoundCheck>,
    pub errors: Vec<String>,
    pub verdict: Verdict,
    pub wall_ms: f64,
}

impl VerificationReport {
    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }

    pub fn checks(&self) -> impl Iterator<Item = &BoundCheck> {
        self.cells.iter().flat_map(|c| c.checks.iter()).chain(&self.experiment_checks)
    }

    /// Copy with every wall-clock field zeroed, for comparisons.
    pub fn without_wall_time(&self) -> Self {
        let mut r = self.clone();
        r.wall_ms = 0.0;
        for c in &mut r.cells {
            c.wall_ms = 0.0;
        }
        r
    }
}

/// Everything [`run_experiment`] produced, in memory.
pub struct ExperimentOutput {
    pub report: VerificationReport,
    pub dataset: Dataset,
    /// Per cell, the recorded trace rows (aligned with `report.cells`).
    pub traces: Vec<Vec<crate::trainer::DiagnosticsRecord>>,
    /// Per cell, the full-dataset loss at every step.
    pub losses: Vec<Vec<f64>>,
    /// Experiment directory, when artifacts were written.
    pub dir: Option<PathBuf>,
}

/// Runs every (seed, width) cell, the enabled diagnostics and the
/// cross-cell checks. Writes artifacts when `output_dir` is set.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let start = Instant::now();
    let dir = cfg.output_dir.as_ref().map(|o| o.join(&cfg.name));
    let ds = cfg.dataset()?;
    if let Some(dir) = &dir {
        fs::create_dir_all(dir)?;
        // The stored copy does not pin where the artifacts live.
        let stored = ExperimentConfig { output_dir: None, ..cfg.clone() };
        fs::write(dir.join("config.json"), stored.to_json()?)?;
        ds.save_json(&dir.join("dataset.json"))?;
    }

    let mut cells = Vec::new();
    let mut traces = Vec::new();
    let mut losses = Vec::new();
    let mut width_runs = Vec::new();
    let mut errors = Vec::new();
    for (seed, width) in cfg.cells() {
        let out = run_cell(cfg, &ds, seed, width, dir.as_deref())?;
        if cfg.width_scaling.is_some() {
            let target = cfg.cell_train_config(seed, out.report.initial_loss).target_loss;
            match &out.result {
                Some(r) => match width_run(r, &ds, target) {
                    Ok(w) => width_runs.push((seed, w)),
                    Err(e) => errors.push(format!("seed {seed}, m {width}: {e}")),
                },
                None => errors.push(format!("seed {seed}, m {width}: no trajectory")),
            }
        }
        traces.push(out.result.as_ref().map(|r| r.records.clone()).unwrap_or_default());
        losses.push(out.result.map(|r| r.losses).unwrap_or_default());
        cells.push(out.report);
    }

    let mut experiment_checks = Vec::new();
    if let Some(ws) = &cfg.width_scaling {
        for &seed in &cfg.seeds {
            let runs: Vec<_> = width_runs
                .iter()
                .filter(|(s, _)| *s == seed)
                .map(|(_, r)| r.clone())
                .collect();
            match width_scaling_checks(ws, runs, seed) {
                Ok(c) => experiment_checks.extend(c),
                Err(e) => errors.push(format!("width scaling, seed {seed}: {e}")),
            }
        }
    }
    if cfg.diagnostics.contraction && cfg.seeds.len() >= 2 {
        for &width in &cfg.network.widths {
            match mean_contraction_check(cfg, &ds, &cells, &losses, width) {
                Ok(c) => experiment_checks.push(c),
                Err(e) => errors.push(format!("mean contraction, m {width}: {e}")),
            }
        }
    }

    let failed = cells.iter().any(|c| c.failed || c.checks.iter().any(BoundCheck::is_failure))
        || experiment_checks.iter().any(BoundCheck::is_failure)
        || !errors.is_empty();
    let report = VerificationReport {
        name: cfg.name.clone(),
        provenance: Provenance {
            config_hash: cfg.hash(),
            tool_version: TOOL_VERSION.into(),
            format_version: FORMAT_VERSION,
        },
        enabled: cfg.diagnostics.enabled().into_iter().map(String::from).collect(),
        cells,
        experiment_checks,
        errors,
        verdict: if failed { Verdict::Fail } else { Verdict::Pass },
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
    };
    if let Some(dir) = &dir {
        fs::write(dir.join("report.json"), serde_json::to_string_pretty(&report)?)?;
    }
    Ok(ExperimentOutput {
        report,
        dataset: ds,
        traces,
        losses,
        dir,
    })
}

struct CellOutput {
    report: CellReport,
    result: Option<crate::trainer::TrainResult>,
}

fn run_cell(
    cfg: &ExperimentConfig,
    ds: &Dataset,
    seed: u64,
    width: usize,
    root: Option<&Path>,
) -> Result<CellOutput> {
    let start = Instant::now();
    let dir = root.map(|r| cell_dir(r, seed, width));
    if let Some(d) = &dir {
        fs::create_dir_all(d)?;
    }
    let p0 = cfg.initial_params(seed, width)?;
    let initial_loss = crate::network::loss(&p0, ds)?;
    let tcfg = cfg.cell_train_config(seed, initial_loss);
    let enabled = cfg.diagnostics.enabled();
    let mut errors = Vec::new();

    let result = match train(&p0, ds, &tcfg) {
        Ok(r) => Some(r),
        Err(e) => {
            errors.push(format!("training: {e}"));
            None
        }
    };
    let mut checks = Vec::new();
    let mut rng = Rng::with_stream(seed, DIAGNOSTICS_STREAM);
    for name in &enabled {
        let outcome = match &result {
            Some(r) => run_check(name, cfg, ds, r, &mut rng),
            None => Err(Error::Domain("training failed".into())),
        };
        match outcome {
            Ok(c) => checks.push(c),
            Err(e) => {
                errors.push(format!("{name}: {e}"));
                checks.push(BoundCheck {
                    name: (*name).into(),
                    measured: f64::NAN,
                    bound_shape: f64::NAN,
                    ratio: f64::NAN,
                    verdict: Verdict::ReportOnly,
                    context: Default::default(),
                });
            }
        }
    }

    if let (Some(d), Some(r)) = (&dir, &result) {
        let f = fs::File::create(d.join("trace.csv"))?;
        write_csv(&r.records, cfg.network.depth, std::io::BufWriter::new(f))?;
        save_checkpoint(
            &r.final_params,
            Some(seed),
            Some(r.steps as u64),
            &d.join("params_final.ckpt"),
        )?;
    }
    let report = CellReport {
        seed,
        width,
        eta: result.as_ref().map_or(f64::NAN, |r| r.eta),
        steps: result.as_ref().map_or(0, |r| r.steps),
        stop_reason: result.as_ref().map(|r| r.stop_reason),
        initial_loss,
        final_loss: result
            .as_ref()
            .and_then(|r| r.losses.last().copied())
            .unwrap_or(f64::NAN),
        checks,
        failed: result.is_none(),
        errors,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
    };
    if let Some(d) = &dir {
        fs::write(d.join("report.json"), serde_json::to_string_pretty(&report)?)?;
    }
    Ok(CellOutput { report, result })
}

fn run_check(
    name: &str,
    cfg: &ExperimentConfig,
    ds: &Dataset,
    r: &crate::trainer::TrainResult,
    rng: &mut Rng,
) -> Result<BoundCheck> {
    let dg = &cfg.diagnostics;
    let p0 = &r.initial;
    let dims = p0.dims();
    match name {
        "gradient_lower" => gradient_lower_ratio(p0, ds),
        "gradient_upper" => {
            let u = gradient_upper_ratio(p0, ds)?;
            let mut c = u.full;
            c.context.insert("per_example_max_ratio".into(), u.per_example_max.ratio);
            Ok(c)
        }
        "hidden_norms" => {
            let norms = crate::diagnostics::hidden_norms(p0, ds)?;
            let all = norms.iter().flatten();
            let lo = all.clone().cloned().fold(f64::INFINITY, f64::min);
            let hi = all.cloned().fold(0.0, f64::max);
            let ok = (0.5..=2.0).contains(&lo) && (0.5..=2.0).contains(&hi);
            let mut c = BoundCheck {
                name: "hidden_norms".into(),
                measured: hi,
                bound_shape: 2.0,
                ratio: hi / 2.0,
                verdict: if ok { Verdict::Pass } else { Verdict::Fail },
                context: Default::default(),
            };
            c.context.insert("min_norm".into(), lo);
            c.context.insert("max_norm".into(), hi);
            Ok(c)
        }
        "perturbation" => {
            let p = perturbation_report(p0, &r.final_params, ds)?;
            let total = p.flips.iter().sum::<usize>() as f64
                / (ds.n() * dims.width * dims.depth) as f64;
            let drift = p.hidden_drift.iter().cloned().fold(0.0, f64::max);
            let mut c = BoundCheck {
                name: "perturbation".into(),
                measured: total,
                bound_shape: 1.0,
                ratio: total,
                verdict: Verdict::ReportOnly,
                context: Default::default(),
            };
            for (l, f) in p.flip_fraction.iter().enumerate() {
                c.context.insert(format!("flip_fraction_l{}", l + 1), *f);
            }
            c.context.insert("max_hidden_drift".into(), drift);
            Ok(c)
        }
        "contraction" => {
            let k = contraction_estimate(r, ds, dg.burn_in)?;
            Ok(contraction_check("contraction", &k, dg.contraction_min_r2))
        }
        "monotone_loss" => {
            let tol = dg.monotone_tol.expect("enabled");
            let worst = r.losses.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
            let ups = r.losses.windows(2).filter(|w| w[1] > w[0]).count();
            let mut c = BoundCheck {
                name: "monotone_loss".into(),
                measured: worst,
                bound_shape: tol,
                ratio: worst / tol,
                verdict: if worst <= tol { Verdict::Pass } else { Verdict::Fail },
                context: Default::default(),
            };
            c.context.insert("increases".into(), ups as f64);
            c.context.insert("steps".into(), r.steps as f64);
            Ok(c)
        }
        "two_infinity" => {
            let mut worst: Option<BoundCheck> = None;
            for i in 0..ds.n() {
                let c = two_infinity_ratio(p0, ds, i)?;
                if worst.as_ref().is_none_or(|w| c.ratio > w.ratio) {
                    worst = Some(c);
                }
            }
            Ok(worst.expect("dataset is non-empty"))
        }
        "semi_smoothness" => {
            let s = dg.semi_smoothness.as_ref().expect("enabled");
            let rep = semi_smoothness_experiment(p0, ds, s.tau, s.pairs, rng)?;
            let v = rep.holdout_violations as f64;
            let mut c = BoundCheck {
                name: "semi_smoothness".into(),
                measured: v,
                bound_shape: rep.holdout_pairs as f64,
                ratio: v / rep.holdout_pairs as f64,
                verdict: if rep.holdout_violations == 0 { Verdict::Pass } else { Verdict::Fail },
                context: Default::default(),
            };
            c.context.insert("c1".into(), rep.c1);
            c.context.insert("c2".into(), rep.c2);
            c.context.insert("tau".into(), rep.tau);
            c.context.insert("max_residual".into(), rep.max_residual);
            Ok(c)
        }
        "sgd_variance" => {
            let v = dg.sgd_variance.as_ref().expect("enabled");
            let e = sgd_variance_estimate(p0, ds, v.batch, v.trials, v.sampling, rng)?;
            let mut c = e.second_moment;
            c.context.insert("variance".into(), e.variance);
            Ok(c)
        }
        other => Err(Error::Config(format!("unknown diagnostic {other}"))),
    }
}

fn contraction_check(
    name: &str,
    k: &crate::diagnostics::Contraction,
    min_r2: Option<f64>,
) -> BoundCheck {
    let verdict = match min_r2 {
        Some(m) if k.r2 >= m => Verdict::Pass,
        Some(_) => Verdict::Fail,
        None => Verdict::ReportOnly,
    };
    let mut c = BoundCheck {
        name: name.into(),
        measured: k.fitted_rate,
        bound_shape: k.theory_rate,
        ratio: k.fitted_constant,
        verdict,
        context: Default::default(),
    };
    c.context.insert("r2".into(), k.r2);
    c.context.insert("log_slope".into(), k.log_slope);
    c.context.insert("points".into(), k.points as f64);
    c.context.insert("burn_in".into(), k.burn_in as f64);
    c
}

/// Geometric fit of the loss averaged over seeds at one width.
fn mean_contraction_check(
    cfg: &ExperimentConfig,
    ds: &Dataset,
    cells: &[CellReport],
    losses: &[Vec<f64>],
    width: usize,
) -> Result<BoundCheck> {
    let curves: Vec<&Vec<f64>> = cells
        .iter()
        .zip(losses)
        .filter(|(c, l)| c.width == width && !l.is_empty())
        .map(|(_, l)| l)
        .collect();
    if curves.len() < 2 {
        return Err(Error::Domain("fewer than two finished seeds".into()));
    }
    let len = curves.iter().map(|l| l.len()).min().expect("non-empty");
    let mean: Vec<f64> = (0..len)
        .map(|t| curves.iter().map(|l| l[t]).sum::<f64>() / curves.len() as f64)
        .collect();
    let eta = cells
        .iter()
        .find(|c| c.width == width && !c.failed)
        .map(|c| c.eta)
        .expect("a finished seed exists");
    let dims = Dims::new(cfg.network.depth, width, ds.d(), ds.k());
    let phi = ds.phi.ok_or_else(|| Error::Domain("n = 1 has no separation".into()))?;
    let k = contraction_from_losses(&mean, cfg.diagnostics.burn_in, &dims, ds.n(), phi, eta)?;
    let mut c = contraction_check("mean_contraction", &k, cfg.diagnostics.contraction_min_r2);
    c.context.insert("m".into(), width as f64);
    c.context.insert("seeds".into(), curves.len() as f64);
    Ok(c)
}

fn width_scaling_checks(
    ws: &WidthScalingSpec,
    runs: Vec<crate::diagnostics::WidthRun>,
    seed: u64,
) -> Result<Vec<BoundCheck>> {
    let s = width_scaling_summary(runs)?;
    let seed_ctx = |mut c: BoundCheck| {
        c.context.insert("seed".into(), seed as f64);
        c.context.insert("widths".into(), s.runs.len() as f64);
        c.context.insert("partial".into(), if s.partial { 1.0 } else { 0.0 });
        c
    };
    let hard = |ok: bool| {
        if s.partial {
            Verdict::Fail
        } else if ok {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    };
    let [lo, hi] = ws.exponent_range;
    let mut exponent = BoundCheck {
        name: "trajectory_exponent".into(),
        measured: s.exponent,
        bound_shape: -0.5,
        ratio: s.exponent / -0.5,
        verdict: hard((lo..=hi).contains(&s.exponent)),
        context: Default::default(),
    };
    exponent.context.insert("r2".into(), s.r2);
    for r in &s.runs {
        exponent.context.insert(format!("max_distance_m{}", r.width), r.max_distance);
    }
    let band = |name: &str, value: f64| BoundCheck {
        name: name.into(),
        measured: value,
        bound_shape: ws.ratio_band,
        ratio: value / ws.ratio_band,
        verdict: if value <= ws.ratio_band { Verdict::Pass } else { Verdict::Fail },
        context: Default::default(),
    };
    let mut flips = BoundCheck {
        name: "flip_fraction_monotone".into(),
        measured: if s.flips_non_increasing { 0.0 } else { 1.0 },
        bound_shape: 0.0,
        ratio: f64::NAN,
        verdict: hard(s.flips_non_increasing),
        context: Default::default(),
    };
    for r in &s.runs {
        flips.context.insert(format!("flip_fraction_m{}", r.width), r.total_flip_fraction);
    }
    let rates: Vec<f64> = s.runs.iter().filter_map(|r| r.fitted_rate).collect();
    let mut out = vec![
        seed_ctx(exponent),
        seed_ctx(band("gradient_lower_band", s.lower_ratio_band)),
        seed_ctx(band("gradient_upper_band", s.upper_ratio_band)),
        seed_ctx(flips),
    ];
    if rates.len() == s.runs.len() {
        let mut rate = band("contraction_rate_band", crate::diagnostics::band(&rates));
        rate.verdict = Verdict::ReportOnly;
        out.push(seed_ctx(rate));
    }
    Ok(out)
}

/// First cell where a replayed trace differs from a stored one.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mismatch {
    /// Data row, counting from 0 after the header.
    pub row: usize,
    pub column: String,
    pub expected: String,
    pub found: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayOutcome {
    pub seed: u64,
    pub width: usize,
    pub rows: usize,
    pub mismatch: Option<Mismatch>,
}

impl ReplayOutcome {
    pub fn matches(&self) -> bool {
        self.mismatch.is_none()
    }
}

/// Re-trains the cell a trace belongs to and compares it cell by cell,
/// ignoring `wall_ms`.
///
/// The cell is read from the `seed_S/m_M` directories around the CSV; if
/// those are absent the config must describe exactly one cell.
pub fn replay(config_path: &Path, record_csv: &Path) -> Result<ReplayOutcome> {
    let cfg = ExperimentConfig::load(config_path)?;
    let (seed, width) = match cell_from_path(record_csv) {
        Some(c) => c,
        None => match cfg.cells().as_slice() {
            [one] => *one,
            _ => {
                return Err(Error::Config(
                    "trace is not inside seed_S/m_M and the config has several cells".into(),
                ))
            }
        },
    };
    replay_cell(&cfg, seed, width, fs::File::open(record_csv)?)
}

/// `(seed, width)` from a `.../seed_S/m_M/file` path.
pub fn cell_from_path(p: &Path) -> Option<(u64, usize)> {
    let m_dir = p.parent()?;
    let seed_dir = m_dir.parent()?;
    let width = m_dir.file_name()?.to_str()?.strip_prefix("m_")?.parse().ok()?;
    let seed = seed_dir.file_name()?.to_str()?.strip_prefix("seed_")?.parse().ok()?;
    Some((seed, width))
}

/// [`replay`] for an explicit cell and trace reader.
pub fn replay_cell(
    cfg: &ExperimentConfig,
    seed: u64,
    width: usize,
    stored: impl std::io::Read,
) -> Result<ReplayOutcome> {
    let ds = cfg.dataset()?;
    let p0 = cfg.initial_params(seed, width)?;
    let initial_loss = crate::network::loss(&p0, &ds)?;
    let fresh = train(&p0, &ds, &cfg.cell_train_config(seed, initial_loss))?.records;

    let mut reader = csv::ReaderBuilder::new().has_headers(false).from_reader(stored);
    let rows: Vec<csv::StringRecord> = reader
        .records()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Validation(format!("trace is not valid CSV: {e}")))?;
    let header = csv_header(cfg.network.depth);
    let outcome = |mismatch| ReplayOutcome {
        seed,
        width,
        rows: rows.len().saturating_sub(1),
        mismatch,
    };
    let stored_header: Vec<&str> = rows.first().map(|r| r.iter().collect()).unwrap_or_default();
    if stored_header != header {
        return Ok(outcome(Some(Mismatch {
            row: 0,
            column: "header".into(),
            expected: header.join(","),
            found: stored_header.join(","),
        })));
    }
    let data = &rows[1..];
    for (i, rec) in fresh.iter().enumerate() {
        let expected = csv_row(rec);
        let Some(found) = data.get(i) else {
            return Ok(outcome(Some(Mismatch {
                row: i,
                column: header[0].clone(),
                expected: expected[0].clone(),
                found: String::new(),
            })));
        };
        for (c, name) in header.iter().enumerate() {
            if name == "wall_ms" {
                continue;
            }
            let f = found.get(c).unwrap_or("");
            if f != expected[c] {
                return Ok(outcome(Some(Mismatch {
                    row: i,
                    column: name.clone(),
                    expected: expected[c].clone(),
                    found: f.into(),
                })));
            }
        }
    }
    if data.len() > fresh.len() {
        return Ok(outcome(Some(Mismatch {
            row: fresh.len(),
            column: header[0].clone(),
            expected: String::new(),
            found: data[fresh.len()].get(0).unwrap_or("").into(),
        })));
    }
    Ok(outcome(None))
}

/// Reads a stored trace.
pub fn load_trace(path: &Path) -> Result<Vec<crate::trainer::DiagnosticsRecord>> {
    read_csv(fs::File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn minimal() -> ExperimentConfig {
        ExperimentConfig::from_json(
            r#"{
                "format_version": 1,
                "name": "minimal",
                "dataset": {"n": 4, "d": 5, "k": 1, "phi_target": 0.2, "seed": 3},
                "network": {"L": 1, "m": [64]},
                "train": {"algorithm": "gd", "T": 10, "eta_rule": "theorem_gd", "record_every": 2},
                "diagnostics": {"two_infinity": true, "monotone_tol": 1e-12},
                "seeds": [7]
            }"#,
        )
        .unwrap()
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let s = minimal().to_json().unwrap().replace("\"seeds\"", "\"seedz\"");
        assert!(matches!(ExperimentConfig::from_json(&s), Err(Error::Config(_))));
        let s = minimal()
            .to_json()
            .unwrap()
            .replace("\"two_infinity\": true", "\"two_infinity\": true, \"extra\": 1");
        assert!(matches!(ExperimentConfig::from_json(&s), Err(Error::Config(_))));
    }

    #[test]
    fn hash_tracks_meaningful_fields() {
        let a = minimal();
        let mut b = a.clone();
        b.output_dir = Some("/elsewhere".into());
        assert_eq!(a.hash(), b.hash());
        b.train.max_steps += 1;
        assert_ne!(a.hash(), b.hash());
        let reparsed = ExperimentConfig::from_json(&a.to_json().unwrap()).unwrap();
        assert_eq!(a.hash(), reparsed.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn minimal_report_is_complete() {
        let cfg = minimal();
        let out = run_experiment(&cfg).unwrap();
        let r = &out.report;
        assert_eq!(r.cells.len(), 1);
        let names: Vec<_> = r.cells[0].checks.iter().map(|c| c.name.as_str()).collect();
        assert_eq!(names, r.enabled.iter().map(String::as_str).collect::<Vec<_>>());
        assert_eq!(r.checks().count(), r.enabled.len());
        assert!(r.passed(), "{r:#?}");
    }

    #[test]
    fn report_with_nan_round_trips_through_json() {
        let mut r = run_experiment(&minimal()).unwrap().report;
        r.cells[0].checks[0].bound_shape = f64::NAN;
        r.cells[0].checks[0].context.insert("missing".into(), f64::NAN);
        let back: VerificationReport =
            serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        let (a, b) = (&r.cells[0].checks[0], &back.cells[0].checks[0]);
        assert!(b.bound_shape.is_nan() && b.context["missing"].is_nan());
        assert_eq!(a.measured, b.measured);
        assert_eq!(r.cells[0].checks[1..], back.cells[0].checks[1..]);
    }

    #[test]
    fn validation_catches_bad_sweeps() {
        let mut c = minimal();
        c.network.depth = 2;
        assert!(c.validate().is_err());
        let mut c = minimal();
        c.width_scaling = Some(WidthScalingSpec {
            target_fraction: 0.5,
            exponent_range: default_exponent_range(),
            ratio_band: 4.0,
        });
        assert!(c.validate().is_err());
        let mut c = minimal();
        c.seeds = vec![1, 1];
        assert!(c.validate().is_err());
        let mut c = minimal();
        c.format_version = 2;
        assert!(c.validate().is_err());
    }

    #[test]
    fn cell_path_parsing() {
        assert_eq!(
            cell_from_path(Path::new("/x/exp/seed_4/m_256/trace.csv")),
            Some((4, 256))
        );
        assert_eq!(cell_from_path(Path::new("trace.csv")), None);
    }
}
