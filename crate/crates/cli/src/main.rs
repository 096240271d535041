use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use relu_lab::bounds::{compare_prior_work, solve, PriorWorkInputs, Theorem, TheoryQuery};
use relu_lab::data::{generate_dataset, validate_assumptions, Dataset, DEFAULT_MU};
use relu_lab::diagnostics::{
    gradient_lower_ratio, gradient_upper_ratio, perturbation_report, two_infinity_ratio,
    BoundCheck, Verdict,
};
use relu_lab::experiments::{cell_from_path, replay, replay_cell, run_experiment, ExperimentConfig};
use relu_lab::gram::{check_lambda0_phi_bound, gram_closed_form, gram_monte_carlo, lambda0};
use relu_lab::network::{init_params, load_checkpoint, save_checkpoint, Dims};
use relu_lab::numerics::Rng;
use relu_lab::regions::{region_survey, sample_separated_unit_vectors, RegionConfig};
use relu_lab::trainer::{save_csv, train, TrainConfig};

// Training allocates and frees megabyte-sized gradients every step, which the
// system allocator hands back to the kernel each time.
#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

/// Deep ReLU network training laboratory.
#[derive(Parser)]
#[command(name = "relu-lab", version)]
struct Cli {
    /// Config file (experiment config for `run`/`replay`, train config for `train`).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a separated synthetic dataset.
    GenData(GenData),
    /// Train one network and write its trace and checkpoints.
    Train(Train),
    /// Gradient-bound and drift checks for stored parameters.
    Diagnose(Diagnose),
    /// Two-layer Gram matrix and its least eigenvalue.
    Gram(Gram),
    /// Monte Carlo survey of the gradient regions.
    Regions(Regions),
    /// Theoretical widths, step sizes and iteration budgets.
    Bounds(Bounds),
    /// Run a full experiment from `--config`.
    Run,
    /// Re-run the cell behind a stored trace and compare.
    Replay(Replay),
}

#[derive(Args)]
struct GenData {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    d: usize,
    #[arg(long, default_value_t = 1)]
    k: usize,
    #[arg(long, default_value_t = DEFAULT_MU)]
    mu: f64,
    #[arg(long, default_value_t = 0.0)]
    phi: f64,
}

#[derive(Args)]
struct Train {
    /// Dataset JSON written by gen-data.
    #[arg(long)]
    data: PathBuf,
    /// Number of hidden layers.
    #[arg(long = "layers", short = 'L')]
    depth: usize,
    /// Hidden width.
    #[arg(long, short = 'm')]
    width: usize,
    /// Iterations when no --config is given.
    #[arg(long, default_value_t = 1000)]
    steps: usize,
}

#[derive(Args)]
struct Diagnose {
    #[arg(long)]
    data: PathBuf,
    /// Parameters to inspect.
    #[arg(long)]
    params: PathBuf,
    /// Reference parameters for flip and drift measurements.
    #[arg(long)]
    init: Option<PathBuf>,
}

#[derive(Args)]
struct Gram {
    #[arg(long)]
    data: PathBuf,
    /// Also estimate by Monte Carlo with this many directions.
    #[arg(long)]
    mc_samples: Option<usize>,
}

#[derive(Args)]
struct Regions {
    #[arg(long, default_value_t = 4)]
    n: usize,
    #[arg(long, default_value_t = 6)]
    d: usize,
    #[arg(long, default_value_t = 0.8)]
    phi_tilde: f64,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long, default_value_t = 1_000_000)]
    samples: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum TheoremArg {
    GdDeep,
    SgdDeep,
    SgdTwoLayer,
}

#[derive(Args)]
struct Bounds {
    #[arg(long, value_enum, default_value = "gd-deep")]
    theorem: TheoremArg,
    #[arg(long)]
    n: usize,
    #[arg(long = "layers", short = 'L', default_value_t = 1)]
    depth: usize,
    #[arg(long, default_value_t = 1)]
    k: usize,
    #[arg(long)]
    phi: f64,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long, default_value_t = 1e-3)]
    epsilon: f64,
    /// Constant in front of every shape.
    #[arg(long, default_value_t = 1.0)]
    c: f64,
    /// Input dimension, for the default spectral norm of the data.
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    lambda0: Option<f64>,
    #[arg(long)]
    x_spectral: Option<f64>,
}

#[derive(Args)]
struct Replay {
    /// Stored trace.csv.
    #[arg(long)]
    csv: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

/// Returns whether every hard check passed.
fn dispatch(cli: &Cli) -> Result<bool> {
    match &cli.command {
        Command::GenData(a) => gen_data(cli, a),
        Command::Train(a) => train_cmd(cli, a),
        Command::Diagnose(a) => diagnose(cli, a),
        Command::Gram(a) => gram(cli, a),
        Command::Regions(a) => regions(cli, a),
        Command::Bounds(a) => bounds(cli, a),
        Command::Run => run(cli),
        Command::Replay(a) => replay_cmd(cli, a),
    }
}

fn emit(cli: &Cli, file: &str, value: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match &cli.out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            let path = dir.join(file);
            std::fs::write(&path, text)?;
            eprintln!("wrote {}", path.display());
        }
        None => println!("{text}"),
    }
    Ok(())
}

fn load_data(path: &Path) -> Result<Dataset> {
    Dataset::load_json(path).with_context(|| format!("reading dataset {}", path.display()))
}

fn gen_data(cli: &Cli, a: &GenData) -> Result<bool> {
    let mut rng = Rng::new(cli.seed.unwrap_or(0));
    let mut ds = generate_dataset(a.n, a.d, a.k, a.mu, a.phi, &mut rng)?;
    ds.seed = Some(cli.seed.unwrap_or(0));
    let report = validate_assumptions(&ds);
    match &cli.out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            ds.save_json(&dir.join("dataset.json"))?;
            eprintln!("wrote {}", dir.join("dataset.json").display());
        }
        None => println!("{}", ds.to_json()?),
    }
    eprintln!("{}", serde_json::to_string(&report)?);
    Ok(report.all_pass())
}

fn train_cmd(cli: &Cli, a: &Train) -> Result<bool> {
    let ds = load_data(&a.data)?;
    let mut cfg = match &cli.config {
        Some(p) => serde_json::from_str::<TrainConfig>(&std::fs::read_to_string(p)?)
            .with_context(|| format!("reading train config {}", p.display()))?,
        None => TrainConfig::gd(a.steps),
    };
    let seed = cli.seed.unwrap_or(cfg.seed);
    cfg.seed = seed;
    let p0 = init_params(Dims::new(a.depth, a.width, ds.d(), ds.k()), &mut Rng::new(seed))?;
    let r = train(&p0, &ds, &cfg)?;
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out)?;
    save_csv(&r.records, a.depth, &out.join("trace.csv"))?;
    save_checkpoint(&p0, Some(seed), Some(0), &out.join("params_init.ckpt"))?;
    save_checkpoint(&r.final_params, Some(seed), Some(r.steps as u64), &out.join("params_final.ckpt"))?;
    println!(
        "{}",
        serde_json::to_string_pretty(&json!({
            "eta": r.eta,
            "steps": r.steps,
            "stop_reason": r.stop_reason,
            "initial_loss": r.losses.first(),
            "final_loss": r.losses.last(),
            "out": out,
        }))?
    );
    Ok(!r.non_finite)
}

fn diagnose(cli: &Cli, a: &Diagnose) -> Result<bool> {
    let ds = load_data(&a.data)?;
    let (_, p) = load_checkpoint(&a.params)?;
    let mut checks: Vec<BoundCheck> = Vec::new();
    let mut notes = Vec::new();
    match gradient_lower_ratio(&p, &ds) {
        Ok(c) => checks.push(c),
        Err(e) => notes.push(format!("gradient_lower: {e}")),
    }
    match gradient_upper_ratio(&p, &ds) {
        Ok(u) => {
            checks.push(u.full);
            checks.push(u.per_example_max);
        }
        Err(e) => notes.push(format!("gradient_upper: {e}")),
    }
    if p.depth() == 1 {
        for i in 0..ds.n() {
            match two_infinity_ratio(&p, &ds, i) {
                Ok(c) => checks.push(c),
                Err(e) => notes.push(format!("two_infinity {i}: {e}")),
            }
        }
    }
    let perturbation = match &a.init {
        Some(init) => {
            let (_, p0) = load_checkpoint(init)?;
            Some(perturbation_report(&p0, &p, &ds)?)
        }
        None => None,
    };
    let pass = !checks.iter().any(|c| c.verdict == Verdict::Fail);
    emit(
        cli,
        "diagnostics.json",
        &json!({ "checks": checks, "perturbation": perturbation, "notes": notes, "pass": pass }),
    )?;
    Ok(pass)
}

fn gram(cli: &Cli, a: &Gram) -> Result<bool> {
    let ds = load_data(&a.data)?;
    let closed = gram_closed_form(&ds.x)?;
    let l0 = lambda0(&closed)?;
    let check = if ds.n() >= 2 {
        Some(check_lambda0_phi_bound(&ds)?)
    } else {
        None
    };
    let mc = match a.mc_samples {
        Some(s) => {
            let g = gram_monte_carlo(&ds.x, s, &mut Rng::new(cli.seed.unwrap_or(0)))?;
            let diff = g.h.sub(&closed.h).max_abs();
            Some(json!({ "samples": s, "lambda0": lambda0(&g)?, "max_abs_diff": diff, "h": g.h }))
        }
        None => None,
    };
    let pass = check.as_ref().is_none_or(|c| c.pass);
    emit(
        cli,
        "gram.json",
        &json!({ "h": closed.h, "lambda0": l0, "bound_check": check, "monte_carlo": mc }),
    )?;
    Ok(pass)
}

fn regions(cli: &Cli, a: &Regions) -> Result<bool> {
    let mut rng = Rng::new(cli.seed.unwrap_or(0));
    let z = sample_separated_unit_vectors(a.n, a.d, a.phi_tilde, &mut rng)?;
    let cfg = RegionConfig::new(z, a.phi_tilde, a.gamma)?;
    let coeffs: Vec<f64> = (0..a.n).map(|_| rng.normal()).collect();
    let survey = region_survey(&cfg, Some(&coeffs), a.samples, &mut rng)?;
    let pass = survey.all_pass();
    emit(cli, "regions.json", &json!({ "z": cfg.z, "a": coeffs, "survey": survey, "pass": pass }))?;
    Ok(pass)
}

fn bounds(cli: &Cli, a: &Bounds) -> Result<bool> {
    let theorem = match a.theorem {
        TheoremArg::GdDeep => Theorem::GdDeep,
        TheoremArg::SgdDeep => Theorem::SgdDeep,
        TheoremArg::SgdTwoLayer => Theorem::SgdTwoLayer,
    };
    if theorem != Theorem::GdDeep && a.batch.is_none() {
        bail!("SGD theorems need --batch");
    }
    let q = TheoryQuery {
        theorem,
        n: a.n,
        depth: a.depth,
        k: a.k,
        phi: a.phi,
        batch: a.batch,
        epsilon: a.epsilon,
        c: a.c,
    };
    let answer = solve(&q)?;
    let table = compare_prior_work(&PriorWorkInputs {
        n: a.n,
        depth: a.depth,
        k: a.k,
        phi: a.phi,
        x_spectral: a.x_spectral,
        d: a.d,
        lambda0: a.lambda0,
        epsilon: a.epsilon,
    })?;
    if cli.out.is_some() {
        println!("{table}");
    } else {
        eprintln!("{table}");
    }
    emit(cli, "bounds.json", &json!({ "query": q, "answer": answer, "comparison": table }))?;
    Ok(answer.converged_fixed_point)
}

fn experiment_config(cli: &Cli) -> Result<ExperimentConfig> {
    let path = cli.config.as_ref().context("--config is required")?;
    let mut cfg = ExperimentConfig::load(path)
        .with_context(|| format!("reading experiment config {}", path.display()))?;
    if let Some(s) = cli.seed {
        cfg.seeds = vec![s];
    }
    if let Some(o) = &cli.out {
        cfg.output_dir = Some(o.clone());
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<bool> {
    let cfg = experiment_config(cli)?;
    let out = run_experiment(&cfg)?;
    let r = &out.report;
    for c in r.checks() {
        println!("{:<28} {:>14.6e} {:>14.6e} {:?}", c.name, c.measured, c.ratio, c.verdict);
    }
    for e in &r.errors {
        eprintln!("error: {e}");
    }
    if let Some(d) = &out.dir {
        eprintln!("artifacts in {}", d.display());
    }
    println!("verdict: {:?}", r.verdict);
    Ok(r.passed())
}

fn replay_cmd(cli: &Cli, a: &Replay) -> Result<bool> {
    let path = cli.config.as_ref().context("--config is required")?;
    let outcome = match cli.seed {
        None => replay(path, &a.csv)?,
        Some(seed) => {
            let cfg = ExperimentConfig::load(path)?;
            let width = match (cell_from_path(&a.csv), cfg.network.widths.as_slice()) {
                (Some((_, m)), _) => m,
                (None, [m]) => *m,
                _ => bail!("cannot tell which width {} belongs to", a.csv.display()),
            };
            replay_cell(&cfg, seed, width, std::fs::File::open(&a.csv)?)?
        }
    };
    println!("{}", serde_json::to_string_pretty(&outcome)?);
    Ok(outcome.matches())
}
