//! `omnipred` command-line driver.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use omnipred::dataio::{gen_simulated, load_dataset, load_forecasts, load_quantile_forecasts, write_dataset, SaleEvent};
use omnipred::eval::{omni_error, OmniReport};
use omnipred::experiment::{run_sweep, train, write_sweep, Method, ModelArtifact, SweepConfig, TrainOptions, TrainedModel};
use omnipred::losses::ThetaGrid;
use omnipred::predictors::{enumerate_linear_candidates, fit_base, BasePredictorSet, Competitor};
use omnipred::OmniError;
use serde::{Deserialize, Serialize};

#[derive(Parser)]
#[command(name = "omnipred", version, about = "Fit and evaluate omnipredictors for binary outcomes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a dataset from the built-in three-point distribution.
    Gen(GenArgs),
    /// Fit one base predictor per grid parameter.
    FitBase(FitBaseArgs),
    /// Train an ensemble on top of a base set.
    Run(RunArgs),
    /// Report omniprediction gaps of a trained model on a dataset.
    Eval(EvalArgs),
    /// Run a replicated sweep described by a JSON config.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum SaleEventArg {
    AboveZero,
    AtLeastOne,
}

#[derive(Args)]
struct FitBaseArgs {
    /// Training data (`x...,y` with a header).
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    m: u64,
    /// Competitor forecasts (`sample_id,forecaster_id,p`); without this or
    /// `--quantiles`, steep affine functions of a scalar covariate are used.
    #[arg(long, conflicts_with = "quantiles")]
    forecasts: Option<PathBuf>,
    /// Quantile forecasts (`item_id,forecaster_id,tau,quantile`).
    #[arg(long)]
    quantiles: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = SaleEventArg::AboveZero)]
    sale_event: SaleEventArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    TwoPlayer,
    Direct,
    CalmaBoost,
    CalmaGame,
    BestBase,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::TwoPlayer => Method::TwoPlayer,
            MethodArg::Direct => Method::Direct,
            MethodArg::CalmaBoost => Method::CalmaBoost,
            MethodArg::CalmaGame => Method::CalmaGame,
            MethodArg::BestBase => Method::BestBase,
        }
    }
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, value_enum)]
    method: MethodArg,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    base: PathBuf,
    /// Learning-rate scale for the game methods.
    #[arg(long)]
    eta_c: Option<f64>,
    /// Merge tolerance scale for the direct method.
    #[arg(long)]
    eps_c: Option<f64>,
    /// Violation threshold scale for the boosting baseline.
    #[arg(long)]
    alpha_c: Option<f64>,
    /// Average every `stride`-th round of the two-player game.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    stride: u64,
    /// Use a fresh data fold for each merge round.
    #[arg(long)]
    split: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    base: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Optional JSON report with the per-parameter gaps.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

/// Base set together with the competitor pool it was fitted from.
#[derive(Serialize, Deserialize)]
struct BaseArtifact {
    base: BasePredictorSet,
    pool: Vec<Competitor>,
}

enum Failure {
    Usage(String),
    Omni(OmniError),
}

impl From<OmniError> for Failure {
    fn from(e: OmniError) -> Self {
        Failure::Omni(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Omni(e.into())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Omni(e.into())
    }
}

type CliResult<T> = Result<T, Failure>;

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn print_report(label: &str, n: usize, m: usize, report: &OmniReport) {
    println!(
        "{label} n={n} m={m} sup_gap={:.6} argmax_theta={:.6}",
        report.sup_gap, report.argmax_theta
    );
}

fn cmd_gen(args: GenArgs) -> CliResult<()> {
    let data = gen_simulated(args.n, args.seed);
    let mut w = create(&args.out)?;
    write_dataset(&mut w, &data)?;
    w.flush()?;
    println!("wrote {} rows to {}", data.len(), args.out.display());
    Ok(())
}

fn cmd_fit_base(args: FitBaseArgs) -> CliResult<()> {
    let data = load_dataset(&args.data)?;
    let pool = if let Some(path) = &args.forecasts {
        load_forecasts(path)?
    } else if let Some(path) = &args.quantiles {
        let event = match args.sale_event {
            SaleEventArg::AboveZero => SaleEvent::AboveZero,
            SaleEventArg::AtLeastOne => SaleEvent::AtLeastOne,
        };
        load_quantile_forecasts(path, event)?
    } else {
        enumerate_linear_candidates(&data)?
    };
    let grid = ThetaGrid::new(args.m as usize)?;
    let base = fit_base(&pool, &data, &grid)?;
    write_json(&args.out, &BaseArtifact { base, pool })?;
    println!("fitted {} base members from {} candidates", args.m, pool_len(&args.out)?);
    Ok(())
}

fn pool_len(path: &Path) -> CliResult<usize> {
    let art: BaseArtifact = read_json(path)?;
    Ok(art.pool.len())
}

fn cmd_run(args: RunArgs) -> CliResult<()> {
    let method: Method = args.method.into();
    let scale = match method {
        Method::TwoPlayer | Method::CalmaGame => args.eta_c,
        Method::Direct => args.eps_c,
        Method::CalmaBoost => args.alpha_c,
        Method::BestBase => None,
    };
    let stray = [
        ("--eta-c", args.eta_c, matches!(method, Method::TwoPlayer | Method::CalmaGame)),
        ("--eps-c", args.eps_c, method == Method::Direct),
        ("--alpha-c", args.alpha_c, method == Method::CalmaBoost),
    ];
    if let Some((flag, _, _)) = stray.iter().find(|(_, v, ok)| v.is_some() && !ok) {
        return Err(Failure::Usage(format!("{flag} does not apply to method {method}")));
    }
    if args.stride != 1 && method != Method::TwoPlayer {
        return Err(Failure::Usage("--stride only applies to two-player".into()));
    }
    if args.split && method != Method::Direct {
        return Err(Failure::Usage("--split only applies to direct".into()));
    }
    let art: BaseArtifact = read_json(&args.base)?;
    let data = load_dataset(&args.data)?;
    let opts = TrainOptions {
        c: scale.unwrap_or(method.default_c()),
        stride: args.stride as usize,
        split: args.split,
    };
    let model = train(method, &art.base, &data, &art.pool, opts)?;
    let base_ref = args.base.display().to_string();
    write_json(&args.out, &model.to_artifact(&base_ref))?;
    let report = omni_error(&model, &art.base, &data)?;
    print_report(&format!("train method={method} c={}", opts.c), data.len(), art.base.m(), &report);
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> CliResult<()> {
    let art: BaseArtifact = read_json(&args.base)?;
    let model_art: ModelArtifact = read_json(&args.model)?;
    let model = TrainedModel::from_artifact(model_art, &art.base)?;
    let data = load_dataset(&args.data)?;
    let report = omni_error(&model, &art.base, &data)?;
    print_report(&format!("eval method={}", model.method()), data.len(), art.base.m(), &report);
    if let Some(out) = &args.out {
        write_json(out, &report)?;
    }
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> CliResult<()> {
    let mut cfg: SweepConfig = read_json(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let rows = run_sweep(&cfg)?;
    let mut w = create(&args.out)?;
    write_sweep(&mut w, &rows)?;
    w.flush()?;
    let failed = rows.iter().filter(|r| r.status != "ok").count();
    println!("wrote {} rows to {} ({failed} failed)", rows.len(), args.out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::FitBase(a) => cmd_fit_base(a),
        Command::Run(a) => cmd_run(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Sweep(a) => cmd_sweep(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Omni(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
