mod commands;
mod dataset;
mod manifest;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand, ValueEnum};
use cmf_core::bench::BenchConfig;
use cmf_core::implicit::ImplicitConfig;
use cmf_core::sgd::{SgdConfig, SgdMode};
use cmf_core::{AlsConfig, SolverConfig};

use dataset::{load_split, TextDelimiter, TextFormat};
use manifest::{manifest_path, BenchPlan, EngineConfig, EvalObjective, EvalPlan, Plan, RunManifest, SynthPlan, TrainPlan};

/// Bad flags or flag combinations.
#[derive(Debug)]
pub struct UsageError(pub String);

/// Inputs that cannot be read or do not fit together.
#[derive(Debug)]
pub struct DataError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Display for DataError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}
impl std::error::Error for DataError {}

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Parser)]
#[command(name = "cmf", version, about = "Matrix factorization for collaborative filtering")]
struct Cli {
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, env = "CMF_THREADS", default_value_t = 0)]
    threads: usize,

    /// Where to write the run manifest.
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a low-rank synthetic dataset.
    Synth(SynthArgs),
    /// Train a model.
    Train(TrainArgs),
    /// Score a model on held-out ratings.
    Eval(EvalArgs),
    /// Compare solver configurations and engines.
    Bench(BenchArgs),
    /// Rerun a command from its manifest.
    Replay(ReplayArgs),
}

#[derive(Args)]
struct FormatArgs {
    /// Field separator for text inputs.
    #[arg(long, value_enum, default_value_t = TextDelimiter::Tab)]
    delimiter: TextDelimiter,
    /// Text inputs use 1-based indices.
    #[arg(long)]
    one_based: bool,
    /// Matrix shape `M,N` for text inputs; inferred when omitted.
    #[arg(long, value_parser = parse_dims)]
    dims: Option<(usize, usize)>,
}

impl FormatArgs {
    fn format(&self) -> TextFormat {
        TextFormat {
            delimiter: self.delimiter,
            one_based: self.one_based,
        }
    }
}

fn parse_dims(s: &str) -> std::result::Result<(usize, usize), String> {
    let (m, n) = s.split_once(',').ok_or("expected M,N")?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{v:?}: {e}"));
    Ok((parse(m)?, parse(n)?))
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    m: usize,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    f: usize,
    #[arg(long)]
    density: f64,
    #[arg(long, default_value_t = 0.1)]
    noise: f32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fraction held out into test.tsv; 0 writes no split.
    #[arg(long, default_value_t = 0.1)]
    holdout: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Engine {
    Als,
    Implicit,
    Sgd,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Solver {
    Exact,
    Cg,
}

#[derive(Args)]
struct SolverArgs {
    #[arg(long, value_enum)]
    solver: Option<Solver>,
    #[arg(long)]
    cg_iters: Option<usize>,
    /// CG stops once ‖r‖ ≤ tol·‖b‖.
    #[arg(long)]
    cg_tol: Option<f32>,
    /// Store Gram matrices in binary16 (CG only).
    #[arg(long)]
    half: bool,
}

impl SolverArgs {
    fn resolve(&self) -> Result<SolverConfig> {
        let solver = self.solver.unwrap_or(Solver::Cg);
        if solver == Solver::Exact {
            if self.half {
                return Err(usage("--half stores A in binary16 for the CG solver; the exact solver needs --solver cg"));
            }
            if self.cg_iters.is_some() || self.cg_tol.is_some() {
                return Err(usage("--cg-iters and --cg-tol only apply to --solver cg"));
            }
            return Ok(SolverConfig::exact());
        }
        let iters = self.cg_iters.unwrap_or(6);
        let mut cfg = if self.half { SolverConfig::cg_half(iters) } else { SolverConfig::cg(iters) };
        if let Some(tol) = self.cg_tol {
            cfg = cfg.with_tol(tol);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn any_set(&self) -> bool {
        self.solver.is_some() || self.cg_iters.is_some() || self.cg_tol.is_some() || self.half
    }
}

#[derive(Args)]
struct SgdArgs {
    /// Initial SGD learning rate.
    #[arg(long)]
    lr: Option<f32>,
    /// Learning-rate decay: epoch k uses lr / (1 + decay·k).
    #[arg(long)]
    decay: Option<f32>,
    #[arg(long, value_enum)]
    sgd_mode: Option<SgdModeArg>,
    /// Hogwild workers.
    #[arg(long)]
    workers: Option<usize>,
}

impl SgdArgs {
    fn any_set(&self) -> bool {
        self.lr.is_some() || self.decay.is_some() || self.sgd_mode.is_some() || self.workers.is_some()
    }

    fn apply(&self, base: SgdConfig) -> SgdConfig {
        SgdConfig {
            lr: self.lr.unwrap_or(base.lr),
            decay: self.decay.unwrap_or(base.decay),
            mode: self.sgd_mode.map(Into::into).unwrap_or(base.mode),
            workers: self.workers.unwrap_or(base.workers),
            ..base
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SgdModeArg {
    Serial,
    Hogwild,
}

impl From<SgdModeArg> for SgdMode {
    fn from(m: SgdModeArg) -> Self {
        match m {
            SgdModeArg::Serial => SgdMode::Serial,
            SgdModeArg::Hogwild => SgdMode::Hogwild,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, value_enum, default_value_t = Engine::Als)]
    engine: Engine,
    #[command(flatten)]
    solver: SolverArgs,
    #[command(flatten)]
    sgd: SgdArgs,
    #[arg(long, default_value_t = 100)]
    factors: usize,
    #[arg(long, default_value_t = 0.05)]
    lambda: f32,
    /// Confidence scale for the implicit engine.
    #[arg(long)]
    alpha: Option<f32>,
    /// Defaults to 10 for ALS engines and 20 for SGD.
    #[arg(long)]
    epochs: Option<usize>,
    /// Stop once test RMSE reaches this value.
    #[arg(long)]
    target_rmse: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    test: Option<PathBuf>,
    #[arg(long)]
    model_out: Option<PathBuf>,
    /// JSON-lines report: roofline, one record per epoch, then a summary.
    #[arg(long)]
    report_out: Option<PathBuf>,
    #[command(flatten)]
    format: FormatArgs,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    test: PathBuf,
    /// Also print the training objective.
    #[arg(long)]
    train: Option<PathBuf>,
    /// Objective to report with --train.
    #[arg(long, value_enum, default_value_t = EvalObjective::Als)]
    objective: EvalObjective,
    #[arg(long, default_value_t = 0.05)]
    lambda: f32,
    #[arg(long, default_value_t = 40.0)]
    alpha: f32,
    #[command(flatten)]
    format: FormatArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum BenchMode {
    /// exact, cg-fp32 and cg-fp16 ALS.
    Solvers,
    /// exact and cg-fp32 ALS against SGD.
    Compare,
    /// Every solver plus SGD.
    All,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_enum, default_value_t = BenchMode::All)]
    mode: BenchMode,
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    test: PathBuf,
    #[arg(long, default_value_t = 100)]
    factors: usize,
    #[arg(long, default_value_t = 0.05)]
    lambda: f32,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 6)]
    cg_iters: usize,
    /// RMSE for the epochs-to-threshold column.
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    sgd: SgdArgs,
    /// JSON-lines output.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    format: FormatArgs,
}

#[derive(Args)]
struct ReplayArgs {
    /// Manifest written by an earlier run.
    #[arg(long = "from")]
    from: PathBuf,
    /// Write outputs here instead of the recorded locations.
    #[arg(long)]
    artifact_dir: Option<PathBuf>,
}

fn build_train(a: &TrainArgs, threads: usize) -> Result<TrainPlan> {
    if a.engine != Engine::Implicit && a.alpha.is_some() {
        return Err(usage("--alpha only applies to --engine implicit"));
    }
    if a.engine != Engine::Sgd && a.sgd.any_set() {
        return Err(usage("--lr, --decay, --sgd-mode and --workers only apply to --engine sgd"));
    }
    if a.engine == Engine::Sgd && a.solver.any_set() {
        return Err(usage("solver flags do not apply to --engine sgd"));
    }
    if a.engine == Engine::Implicit && a.target_rmse.is_some() {
        return Err(usage("--target-rmse does not apply to --engine implicit, which is evaluated by rank"));
    }
    let engine = match a.engine {
        Engine::Als => {
            let d = AlsConfig::default();
            let cfg = AlsConfig {
                f: a.factors,
                lambda: a.lambda,
                epochs: a.epochs.unwrap_or(d.epochs),
                solver: a.solver.resolve()?,
                seed: a.seed,
                target_rmse: a.target_rmse,
                threads,
                ..d
            };
            cfg.validate()?;
            EngineConfig::Als(cfg)
        }
        Engine::Implicit => {
            let d = ImplicitConfig::default();
            let cfg = ImplicitConfig {
                f: a.factors,
                alpha: a.alpha.unwrap_or(d.alpha),
                lambda: a.lambda,
                epochs: a.epochs.unwrap_or(d.epochs),
                solver: a.solver.resolve()?,
                seed: a.seed,
                threads,
                ..d
            };
            cfg.validate()?;
            EngineConfig::Implicit(cfg)
        }
        Engine::Sgd => {
            let d = SgdConfig::default();
            let cfg = a.sgd.apply(SgdConfig {
                f: a.factors,
                lambda: a.lambda,
                epochs: a.epochs.unwrap_or(d.epochs),
                seed: a.seed,
                target_rmse: a.target_rmse,
                ..d
            });
            cfg.validate()?;
            EngineConfig::Sgd(cfg)
        }
    };
    if a.target_rmse.is_some() && a.test.is_none() {
        return Err(usage("--target-rmse needs --test"));
    }
    Ok(TrainPlan {
        engine,
        train: a.train.clone(),
        test: a.test.clone(),
        format: a.format.format(),
        dims: (0, 0),
        model_out: a.model_out.clone(),
        report_out: a.report_out.clone(),
    })
}

fn build_bench(a: &BenchArgs, threads: usize) -> Result<BenchPlan> {
    let sgd = Some(a.sgd.apply(SgdConfig::default()));
    let (solvers, sgd, mode) = match a.mode {
        BenchMode::Solvers => {
            if a.sgd.any_set() {
                return Err(usage("SGD flags need --mode compare or --mode all"));
            }
            (vec![SolverConfig::exact(), SolverConfig::cg(a.cg_iters), SolverConfig::cg_half(a.cg_iters)], None, "solvers")
        }
        BenchMode::Compare => (vec![SolverConfig::exact(), SolverConfig::cg(a.cg_iters)], sgd, "compare"),
        BenchMode::All => (
            vec![SolverConfig::exact(), SolverConfig::cg(a.cg_iters), SolverConfig::cg_half(a.cg_iters)],
            sgd,
            "all",
        ),
    };
    let bench = BenchConfig {
        f: a.factors,
        lambda: a.lambda,
        epochs: a.epochs,
        solvers,
        sgd,
        threshold: a.threshold,
        threads,
        seed: a.seed,
        ..BenchConfig::default()
    };
    bench.als_config(SolverConfig::exact()).validate()?;
    for s in &bench.solvers {
        s.validate()?;
    }
    if let Some(s) = bench.sgd_config() {
        s.validate()?;
    }
    Ok(BenchPlan {
        mode: mode.into(),
        train: a.train.clone(),
        test: a.test.clone(),
        format: a.format.format(),
        dims: (0, 0),
        bench,
        out: a.out.clone(),
    })
}

fn run(cli: Cli) -> Result<()> {
    let threads = cli.threads;
    let explicit = cli.manifest.as_deref();
    match cli.command {
        Command::Synth(a) => {
            if !(a.density > 0.0 && a.density <= 1.0) {
                return Err(usage(format!("--density must lie in (0, 1], got {}", a.density)));
            }
            if !(0.0..1.0).contains(&a.holdout) {
                return Err(usage(format!("--holdout must lie in [0, 1), got {}", a.holdout)));
            }
            let plan = Plan::Synth(SynthPlan {
                m: a.m,
                n: a.n,
                f: a.f,
                density: a.density,
                noise: a.noise,
                seed: a.seed,
                holdout: a.holdout,
                out_dir: a.out.clone(),
            });
            let path = explicit.map(Into::into).unwrap_or_else(|| a.out.join("manifest.json"));
            RunManifest::new(plan.clone(), threads, Vec::new()).emit(Some(&path))?;
            commands::execute(&plan, threads, None)
        }
        Command::Train(a) => {
            let mut plan = build_train(&a, threads)?;
            let split = load_split(&a.train, a.test.as_deref(), plan.format, a.format.dims)?;
            plan.dims = split.dims();
            let primary = plan.model_out.clone().or_else(|| plan.report_out.clone());
            let datasets = split.fingerprints.clone();
            let plan = Plan::Train(plan);
            RunManifest::new(plan.clone(), threads, datasets).emit(manifest_path(explicit, primary.as_deref()).as_deref())?;
            commands::execute(&plan, threads, Some(split))
        }
        Command::Eval(a) => {
            let plan = Plan::Eval(EvalPlan {
                model: a.model,
                test: a.test,
                train: a.train,
                format: a.format.format(),
                objective: a.objective,
                lambda: a.lambda,
                alpha: a.alpha,
            });
            if let Some(p) = explicit {
                RunManifest::new(plan.clone(), threads, Vec::new()).emit(Some(p))?;
            }
            commands::execute(&plan, threads, None)
        }
        Command::Bench(a) => {
            let mut plan = build_bench(&a, threads)?;
            let split = load_split(&a.train, Some(&a.test), plan.format, a.format.dims)?;
            plan.dims = split.dims();
            let path = manifest_path(explicit, plan.out.as_deref());
            let datasets = split.fingerprints.clone();
            let plan = Plan::Bench(plan);
            RunManifest::new(plan.clone(), threads, datasets).emit(path.as_deref())?;
            commands::execute(&plan, threads, Some(split))
        }
        Command::Replay(a) => {
            let recorded = RunManifest::read(&a.from)?;
            for fp in &recorded.datasets {
                dataset::verify(fp)?;
            }
            let mut plan = recorded.config.clone();
            if let Some(dir) = &a.artifact_dir {
                plan.redirect(dir);
                let path = explicit.map(Into::into).unwrap_or_else(|| dir.join("manifest.json"));
                RunManifest::new(plan.clone(), recorded.threads, recorded.datasets.clone()).emit(Some(&path))?;
            }
            commands::execute(&plan, recorded.threads, None)
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return EXIT_USAGE;
    }
    if err.downcast_ref::<DataError>().is_some() {
        return EXIT_DATA;
    }
    match err.downcast_ref::<cmf_core::Error>() {
        Some(e) if e.is_numerical() => EXIT_NUMERICAL,
        Some(cmf_core::Error::InvalidArgument(_)) => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
