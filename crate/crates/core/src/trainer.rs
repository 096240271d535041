//! Full-batch and minibatch gradient descent on the hidden layers, with
//! periodic measurements of loss, gradient size, drift from initialization
//! and activation-pattern churn.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::network::{evaluate, evaluate_subset, forward_batch, BatchTrace, Evaluation, NetworkParams};
use crate::numerics::{spectral_norm_default, Matrix, Rng};
use crate::{Error, Result};

/// Training stops once the loss exceeds this multiple of its initial value.
pub const DIVERGENCE_FACTOR: f64 = 1e3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Gd,
    Sgd,
}

/// How the step size is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EtaRule {
    /// Use `eta` as given.
    Explicit,
    /// `c_eta · k / (L² m)`.
    TheoremGd,
    /// `c_eta · k B φ / (n³ m ln m)`.
    TheoremSgdDeep,
    /// Same shape as the deep SGD rule.
    TheoremSgdTwoLayer,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub algorithm: Algorithm,
    /// Step size for [`EtaRule::Explicit`]; ignored by the other rules.
    #[serde(default)]
    pub eta: f64,
    /// Maximum number of updates.
    #[serde(rename = "T")]
    pub max_steps: usize,
    /// Minibatch size (SGD only).
    #[serde(rename = "B", default)]
    pub batch_size: Option<usize>,
    #[serde(default)]
    pub target_loss: f64,
    #[serde(default = "default_record_every")]
    pub record_every: usize,
    /// Seeds the minibatch stream.
    #[serde(default)]
    pub seed: u64,
    pub eta_rule: EtaRule,
    #[serde(default = "default_c_eta")]
    pub c_eta: f64,
}

fn default_record_every() -> usize {
    100
}

fn default_c_eta() -> f64 {
    1.0
}

impl TrainConfig {
    /// Full-batch GD with the theorem step size.
    pub fn gd(max_steps: usize) -> Self {
        Self {
            algorithm: Algorithm::Gd,
            eta: 0.0,
            max_steps,
            batch_size: None,
            target_loss: 0.0,
            record_every: default_record_every(),
            seed: 0,
            eta_rule: EtaRule::TheoremGd,
            c_eta: 1.0,
        }
    }

    /// Minibatch SGD with the deep-network theorem step size.
    pub fn sgd(max_steps: usize, batch_size: usize, seed: u64) -> Self {
        Self {
            algorithm: Algorithm::Sgd,
            batch_size: Some(batch_size),
            seed,
            eta_rule: EtaRule::TheoremSgdDeep,
            ..Self::gd(max_steps)
        }
    }

    pub fn with_eta(mut self, eta: f64) -> Self {
        self.eta_rule = EtaRule::Explicit;
        self.eta = eta;
        self
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.record_every == 0 {
            return Err(Error::Config("record_every must be at least 1".into()));
        }
        if !(self.target_loss >= 0.0) {
            return Err(Error::Config(format!("target_loss must be >= 0, got {}", self.target_loss)));
        }
        if !(self.c_eta > 0.0) || !self.c_eta.is_finite() {
            return Err(Error::Config(format!("c_eta must be positive, got {}", self.c_eta)));
        }
        if self.algorithm == Algorithm::Sgd {
            match self.batch_size {
                Some(b) if (1..=n).contains(&b) => {}
                Some(b) => {
                    return Err(Error::Config(format!("batch size {b} outside 1..={n}")));
                }
                None => return Err(Error::Config("sgd needs a batch size B".into())),
            }
        }
        Ok(())
    }
}

/// Sizes that enter the step-size rules.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepSizeDims {
    pub n: usize,
    pub depth: usize,
    pub width: usize,
    pub output_dim: usize,
}

/// The step size a config implies for the given problem sizes.
///
/// `phi` is only consulted by the SGD rules.
pub fn resolve_step_size(cfg: &TrainConfig, dims: StepSizeDims, phi: Option<f64>) -> Result<f64> {
    let StepSizeDims {
        n,
        depth,
        width,
        output_dim,
    } = dims;
    let (k, l, m) = (output_dim as f64, depth as f64, width as f64);
    let eta = match cfg.eta_rule {
        EtaRule::Explicit => cfg.eta,
        EtaRule::TheoremGd => cfg.c_eta * k / (l * l * m),
        EtaRule::TheoremSgdDeep | EtaRule::TheoremSgdTwoLayer => {
            let phi = phi.ok_or_else(|| {
                Error::Config("SGD step-size rules need the data separation phi".into())
            })?;
            let b = cfg
                .batch_size
                .ok_or_else(|| Error::Config("SGD step-size rules need a batch size B".into()))?;
            let n = n as f64;
            cfg.c_eta * k * b as f64 * phi / (n * n * n * m * m.ln())
        }
    };
    if !(eta >= 0.0) || !eta.is_finite() {
        return Err(Error::Config(format!("step size must be finite and >= 0, got {eta}")));
    }
    Ok(eta)
}

/// Measurements taken at one iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRecord {
    pub t: usize,
    pub loss: f64,
    /// `‖∇L(W^(t))‖_F` over the full dataset.
    pub grad_f: f64,
    /// Per layer `‖W_l^(t) − W_l^(0)‖₂`.
    pub dists: Vec<f64>,
    /// Per layer, activation flags that differ from iteration 0.
    pub flips: Vec<usize>,
    /// `‖∇L‖_F² / (mφL/(kn²))`.
    pub grad_lower_ratio: f64,
    /// `‖∇L‖_F² / (mL/k)`.
    pub grad_upper_ratio: f64,
    pub wall_ms: f64,
}

impl DiagnosticsRecord {
    /// Equality on every field except `wall_ms`.
    pub fn same_measurements(&self, other: &Self) -> bool {
        self.t == other.t
            && self.loss.to_bits() == other.loss.to_bits()
            && self.grad_f.to_bits() == other.grad_f.to_bits()
            && bits_eq(&self.dists, &other.dists)
            && self.flips == other.flips
            && self.grad_lower_ratio.to_bits() == other.grad_lower_ratio.to_bits()
            && self.grad_upper_ratio.to_bits() == other.grad_upper_ratio.to_bits()
    }
}

fn bits_eq(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    TargetReached,
    BudgetExhausted,
    Divergence,
}

#[derive(Clone, Debug)]
pub struct TrainResult {
    pub initial: NetworkParams,
    pub final_params: NetworkParams,
    pub records: Vec<DiagnosticsRecord>,
    /// Full-dataset loss before every update, plus the loss at the stopping point.
    pub losses: Vec<f64>,
    pub stop_reason: StopReason,
    /// Set when divergence was triggered by a NaN or infinite loss.
    pub non_finite: bool,
    /// Resolved step size.
    pub eta: f64,
    /// Number of updates applied.
    pub steps: usize,
}

/// Runs GD or SGD according to `cfg.algorithm`.
pub fn train(p0: &NetworkParams, ds: &Dataset, cfg: &TrainConfig) -> Result<TrainResult> {
    train_observed(p0, ds, cfg, |_| {})
}

pub fn train_gd(p0: &NetworkParams, ds: &Dataset, cfg: &TrainConfig) -> Result<TrainResult> {
    if cfg.algorithm != Algorithm::Gd {
        return Err(Error::Config("train_gd needs algorithm = gd".into()));
    }
    train(p0, ds, cfg)
}

pub fn train_sgd(p0: &NetworkParams, ds: &Dataset, cfg: &TrainConfig) -> Result<TrainResult> {
    if cfg.algorithm != Algorithm::Sgd {
        return Err(Error::Config("train_sgd needs algorithm = sgd".into()));
    }
    train(p0, ds, cfg)
}

/// [`train`], calling `on_record` with each record as it is taken.
pub fn train_observed(
    p0: &NetworkParams,
    ds: &Dataset,
    cfg: &TrainConfig,
    mut on_record: impl FnMut(&DiagnosticsRecord),
) -> Result<TrainResult> {
    let n = ds.n();
    cfg.validate(n)?;
    let dims = p0.dims();
    if dims.input_dim != ds.d() || dims.output_dim != ds.k() {
        return Err(Error::Dimension(format!(
            "network maps {} -> {} but data is {} -> {}",
            dims.input_dim,
            dims.output_dim,
            ds.d(),
            ds.k()
        )));
    }
    let phi = ds.phi;
    let eta = resolve_step_size(
        cfg,
        StepSizeDims {
            n,
            depth: dims.depth,
            width: dims.width,
            output_dim: dims.output_dim,
        },
        phi,
    )?;
    let shapes = RatioShapes {
        lower_per_loss: phi.map(|phi| {
            dims.width as f64 * phi / (dims.output_dim as f64 * (n * n) as f64)
        }),
        upper_per_loss: dims.width as f64 / dims.output_dim as f64,
    };

    let start = Instant::now();
    let mut p = p0.clone();
    let mut rng = Rng::new(cfg.seed);
    let mut records = Vec::new();
    let mut losses = Vec::new();
    let mut initial_trace: Option<BatchTrace> = None;
    let mut initial_loss = f64::NAN;
    let mut t = 0;

    let (stop_reason, non_finite) = loop {
        let batch = match cfg.algorithm {
            Algorithm::Sgd if cfg.batch_size != Some(n) => {
                let mut b = rng.sample_distinct(n, cfg.batch_size.expect("validated"));
                b.sort_unstable();
                Some(b)
            }
            // A full batch is the same index set every step; draw it anyway so
            // the minibatch stream advances exactly as for B < n.
            Algorithm::Sgd => {
                rng.sample_distinct(n, n);
                None
            }
            Algorithm::Gd => None,
        };
        let need_full_gradient = batch.is_none() || is_record_step(t, cfg);
        let full = if need_full_gradient {
            Full::Evaluated(evaluate(&p, ds)?)
        } else {
            Full::Forward(forward_batch(&p, &ds.x)?)
        };
        let loss = full.loss(ds);
        losses.push(loss);
        if t == 0 {
            initial_loss = loss;
            initial_trace = Some(full.trace().clone());
        }

        let stop = if !loss.is_finite() {
            Some((StopReason::Divergence, true))
        } else if loss > DIVERGENCE_FACTOR * initial_loss {
            Some((StopReason::Divergence, false))
        } else if loss <= cfg.target_loss {
            Some((StopReason::TargetReached, false))
        } else if t == cfg.max_steps {
            Some((StopReason::BudgetExhausted, false))
        } else {
            None
        };

        if is_record_step(t, cfg) || stop.is_some() {
            let full = match full {
                Full::Forward(_) => Full::Evaluated(evaluate(&p, ds)?),
                evaluated => evaluated,
            };
            let Full::Evaluated(ev) = &full else { unreachable!() };
            let rec = make_record(
                t,
                ev,
                &p,
                p0,
                initial_trace.as_ref().expect("set at t = 0"),
                &shapes,
                start,
            );
            on_record(&rec);
            records.push(rec);
            if let Some(stop) = stop {
                break stop;
            }
            step(&mut p, eta, ds, batch.as_deref(), &full)?;
        } else {
            step(&mut p, eta, ds, batch.as_deref(), &full)?;
        }
        t += 1;
    };

    Ok(TrainResult {
        initial: p0.clone(),
        final_params: p,
        records,
        losses,
        stop_reason,
        non_finite,
        eta,
        steps: t,
    })
}

enum Full {
    Evaluated(Evaluation),
    Forward(BatchTrace),
}

impl Full {
    fn loss(&self, ds: &Dataset) -> f64 {
        match self {
            Full::Evaluated(ev) => ev.loss,
            Full::Forward(tr) => crate::network::mean_loss(&crate::network::per_example_losses(
                &tr.output, &ds.y,
            )),
        }
    }

    fn trace(&self) -> &BatchTrace {
        match self {
            Full::Evaluated(ev) => &ev.trace,
            Full::Forward(tr) => tr,
        }
    }
}

fn is_record_step(t: usize, cfg: &TrainConfig) -> bool {
    t % cfg.record_every == 0
}

fn step(
    p: &mut NetworkParams,
    eta: f64,
    ds: &Dataset,
    batch: Option<&[usize]>,
    full: &Full,
) -> Result<()> {
    match (batch, full) {
        (Some(b), _) => {
            let g = evaluate_subset(p, ds, b)?.gradient;
            p.step(-eta, &g);
        }
        (None, Full::Evaluated(ev)) => p.step(-eta, &ev.gradient),
        (None, Full::Forward(_)) => unreachable!("full-batch steps always evaluate the gradient"),
    }
    Ok(())
}

struct RatioShapes {
    lower_per_loss: Option<f64>,
    upper_per_loss: f64,
}

fn make_record(
    t: usize,
    ev: &Evaluation,
    p: &NetworkParams,
    p0: &NetworkParams,
    initial_trace: &BatchTrace,
    shapes: &RatioShapes,
    start: Instant,
) -> DiagnosticsRecord {
    let g2 = ev.gradient.frobenius_norm_sq();
    let dists = p
        .weights
        .iter()
        .zip(&p0.weights)
        .map(|(w, w0)| spectral_distance(&w.sub(w0)))
        .collect();
    let flips = (0..p.depth())
        .map(|l| ev.trace.sign_flips(initial_trace, l))
        .collect();
    let grad_lower_ratio = match shapes.lower_per_loss {
        Some(s) => g2 / (s * ev.loss),
        None => f64::NAN,
    };
    DiagnosticsRecord {
        t,
        loss: ev.loss,
        grad_f: g2.sqrt(),
        dists,
        flips,
        grad_lower_ratio,
        grad_upper_ratio: g2 / (shapes.upper_per_loss * ev.loss),
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
    }
}

/// Spectral norm, falling back to the last power-iteration estimate if the
/// tolerance was not met.
pub(crate) fn spectral_distance(delta: &Matrix) -> f64 {
    match spectral_norm_default(delta) {
        Ok(s) => s,
        Err(Error::NoConvergence { estimate, .. }) => estimate,
        Err(e) => panic!("spectral norm of a non-empty matrix failed: {e}"),
    }
}

/// Column names of the trace CSV for a `depth`-layer network.
pub fn csv_header(depth: usize) -> Vec<String> {
    let mut h = vec!["t".to_string(), "loss".into(), "grad_f".into()];
    h.extend((1..=depth).map(|l| format!("dist_l{l}")));
    h.extend((1..=depth).map(|l| format!("flips_l{l}")));
    h.extend(["grad_lower_ratio", "grad_upper_ratio", "wall_ms"].map(String::from));
    h
}

/// One CSV row; floats use the shortest representation that round-trips.
pub fn csv_row(r: &DiagnosticsRecord) -> Vec<String> {
    let mut row = vec![r.t.to_string(), r.loss.to_string(), r.grad_f.to_string()];
    row.extend(r.dists.iter().map(f64::to_string));
    row.extend(r.flips.iter().map(usize::to_string));
    row.push(r.grad_lower_ratio.to_string());
    row.push(r.grad_upper_ratio.to_string());
    row.push(r.wall_ms.to_string());
    row
}

pub fn write_csv(records: &[DiagnosticsRecord], depth: usize, out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(csv_header(depth)).map_err(csv_error)?;
    for r in records {
        w.write_record(csv_row(r)).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_csv(records: &[DiagnosticsRecord], depth: usize, path: &Path) -> Result<()> {
    write_csv(records, depth, std::fs::File::create(path)?)
}

/// Parses a trace CSV back into records.
pub fn read_csv(input: impl std::io::Read) -> Result<Vec<DiagnosticsRecord>> {
    let mut rdr = csv::Reader::from_reader(input);
    let header = rdr.headers().map_err(csv_error)?.clone();
    let cols = header.len();
    if cols < 6 || (cols - 6) % 2 != 0 {
        return Err(Error::Validation(format!("unexpected trace header with {cols} columns")));
    }
    let depth = (cols - 6) / 2;
    let expected = csv_header(depth);
    if header.iter().ne(expected.iter().map(String::as_str)) {
        return Err(Error::Validation("trace header does not match the expected columns".into()));
    }
    let mut out = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_error)?;
        let f = |c: usize| -> Result<f64> {
            rec[c]
                .parse()
                .map_err(|_| Error::Validation(format!("row {row}, column {c}: bad number {:?}", &rec[c])))
        };
        let u = |c: usize| -> Result<usize> {
            rec[c]
                .parse()
                .map_err(|_| Error::Validation(format!("row {row}, column {c}: bad integer {:?}", &rec[c])))
        };
        out.push(DiagnosticsRecord {
            t: u(0)?,
            loss: f(1)?,
            grad_f: f(2)?,
            dists: (0..depth).map(|l| f(3 + l)).collect::<Result<_>>()?,
            flips: (0..depth).map(|l| u(3 + depth + l)).collect::<Result<_>>()?,
            grad_lower_ratio: f(3 + 2 * depth)?,
            grad_upper_ratio: f(4 + 2 * depth)?,
            wall_ms: f(5 + 2 * depth)?,
        });
    }
    Ok(out)
}

fn csv_error(e: csv::Error) -> Error {
    Error::Validation(format!("csv: {e}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_dataset;
    use crate::network::{init_params, Dims};

    fn desk(m: usize, depth: usize) -> (Dataset, NetworkParams) {
        let ds = generate_dataset(8, 6, 2, 0.5, 0.2, &mut Rng::new(3)).unwrap();
        let p = init_params(Dims::new(depth, m, 6, 2), &mut Rng::new(4)).unwrap();
        (ds, p)
    }

    #[test]
    fn step_size_rules() {
        let dims = StepSizeDims {
            n: 16,
            depth: 3,
            width: 1024,
            output_dim: 2,
        };
        let gd = TrainConfig::gd(1);
        assert_eq!(resolve_step_size(&gd, dims, None).unwrap(), 2.0 / 9216.0);
        let explicit = TrainConfig::gd(1).with_eta(0.01);
        assert_eq!(resolve_step_size(&explicit, dims, None).unwrap(), 0.01);

        let sgd = TrainConfig::sgd(1, 4, 0);
        let k1 = StepSizeDims { output_dim: 1, ..dims };
        let eta = resolve_step_size(&sgd, k1, Some(0.3)).unwrap();
        assert!((eta - 4.13e-8).abs() < 0.01e-8, "{eta}");
        assert!(matches!(resolve_step_size(&sgd, k1, None), Err(Error::Config(_))));
    }

    #[test]
    fn zero_step_leaves_params_alone() {
        let (ds, p) = desk(16, 2);
        let cfg = TrainConfig {
            record_every: 3,
            ..TrainConfig::gd(10).with_eta(0.0)
        };
        let r = train(&p, &ds, &cfg).unwrap();
        assert_eq!(r.final_params, p);
        assert!(r.losses.iter().all(|&l| l == r.losses[0]));
        assert_eq!(r.stop_reason, StopReason::BudgetExhausted);
        assert_eq!(r.steps, 10);
        let ts: Vec<usize> = r.records.iter().map(|r| r.t).collect();
        assert_eq!(ts, vec![0, 3, 6, 9, 10]);
        assert!(r.records.iter().all(|r| r.dists.iter().all(|&d| d == 0.0)));
        assert!(r.records.iter().all(|r| r.flips.iter().all(|&f| f == 0)));
    }

    #[test]
    fn full_batch_sgd_matches_gd() {
        let (ds, p) = desk(32, 2);
        let gd = TrainConfig::gd(30).with_eta(0.05);
        let sgd = TrainConfig {
            algorithm: Algorithm::Sgd,
            batch_size: Some(ds.n()),
            seed: 9,
            ..gd.clone()
        };
        let a = train(&p, &ds, &gd).unwrap();
        let b = train(&p, &ds, &sgd).unwrap();
        assert_eq!(a.final_params, b.final_params);
        assert_eq!(a.losses, b.losses);
    }

    #[test]
    fn sgd_is_seed_deterministic() {
        let (ds, p) = desk(32, 2);
        let cfg = TrainConfig::sgd(40, 3, 5).with_eta(0.05);
        let a = train(&p, &ds, &cfg).unwrap();
        let b = train(&p, &ds, &cfg).unwrap();
        assert_eq!(a.final_params, b.final_params);
        assert!(a.records.iter().zip(&b.records).all(|(x, y)| x.same_measurements(y)));
        let c = train(&p, &ds, &TrainConfig { seed: 6, ..cfg }).unwrap();
        assert_ne!(a.final_params, c.final_params);
    }

    #[test]
    fn stops_at_target_and_on_divergence() {
        let (ds, p) = desk(64, 1);
        let cfg = TrainConfig {
            target_loss: 0.5,
            ..TrainConfig::gd(10_000).with_eta(0.05)
        };
        let r = train(&p, &ds, &cfg).unwrap();
        assert_eq!(r.stop_reason, StopReason::TargetReached);
        assert!(*r.losses.last().unwrap() <= 0.5);
        assert_eq!(r.records.last().unwrap().t, r.steps);

        let r = train(&p, &ds, &TrainConfig::gd(10_000).with_eta(50.0)).unwrap();
        assert_eq!(r.stop_reason, StopReason::Divergence);
        assert!(r.steps < 10_000);
    }

    #[test]
    fn rejects_bad_batch() {
        let (ds, p) = desk(8, 1);
        let cfg = TrainConfig::sgd(1, 9, 0);
        assert!(matches!(train(&p, &ds, &cfg), Err(Error::Config(_))));
        let cfg = TrainConfig { batch_size: None, ..cfg };
        assert!(matches!(train(&p, &ds, &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn csv_round_trip() {
        let (ds, p) = desk(16, 2);
        let cfg = TrainConfig {
            record_every: 2,
            ..TrainConfig::gd(6).with_eta(0.1)
        };
        let r = train(&p, &ds, &cfg).unwrap();
        let mut buf = Vec::new();
        write_csv(&r.records, 2, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(
            "t,loss,grad_f,dist_l1,dist_l2,flips_l1,flips_l2,grad_lower_ratio,grad_upper_ratio,wall_ms\n"
        ));
        let back = read_csv(&buf[..]).unwrap();
        assert_eq!(back, r.records);
    }
}
