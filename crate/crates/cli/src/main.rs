//! `amgann`: corpus generation, surrogate training and threshold selection
//! for the two-level AMG preconditioner.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use amgann::amg::amg_setup;
use amgann::ann::{load_model, save_model, train, NetworkConfig, TrainOptions};
use amgann::dataset::{
    self, encode_frame, least_squares_rho_time, read_corpus, split_dataset3, split_plain, theta_grid, to_examples,
    write_prediction_csv, write_rho_time_csv, write_theta_series_csv, GenerateOptions, PredictionRow, Sample,
    SplitSpec,
};
use amgann::fem::{assemble, DiffusionPattern, PatternKind, ProblemSpec};
use amgann::pipeline::{ann_amg_solve, select_theta, AnnAmgOptions};
use amgann::pooling::{normalize, pooling_csr, NormalizationMode};
use amgann::solver::{pcg, SolveOptions};
use amgann::{Error, Result};

#[derive(Parser)]
#[command(name = "amgann", version, about = "Strong-threshold selection for two-level AMG with a CNN surrogate")]
struct Cli {
    /// Seed for splits, initialization and shuffling.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Pooled view size.
    #[arg(long, global = true, default_value_t = amgann::pooling::DEFAULT_M)]
    m: usize,
    /// Input normalization.
    #[arg(long, global = true, default_value = "sum-standard")]
    mode: NormalizationMode,
    /// Threshold grid: a point count on [0.12, 0.72] or a comma separated list.
    #[arg(long, global = true)]
    theta_grid: Option<String>,
    /// Allow mesh levels up to k = 10.
    #[arg(long, global = true)]
    full: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve every grid point of dataset 1 or 2 and append it to a corpus.
    Generate(GenerateArgs),
    /// Divide corpora into train/validation/test corpora.
    Split(SplitArgs),
    /// Fit the surrogate on a training and a validation corpus.
    Train(TrainArgs),
    /// Predict every sample of a corpus; writes CSV and prints the errors.
    Predict(PredictArgs),
    /// Print the surrogate's threshold choice for one problem.
    SelectTheta(ProblemModelArgs),
    /// Select the threshold and solve one problem.
    Solve(SolveArgs),
    /// CPU time of AMG setup plus PCG for one problem at every grid threshold.
    Benchmark(BenchmarkArgs),
    /// Least squares of CPU time against rho per mesh level.
    Analyze(AnalyzeArgs),
    /// CSV series for plotting.
    ExportFigures(ExportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Which {
    Ds1,
    Ds2,
}

#[derive(Args)]
struct GenerateArgs {
    which: Which,
    #[arg(long)]
    out: PathBuf,
    /// Finest mesh level (default 7, or 10 with --full).
    #[arg(long)]
    max_level: Option<u32>,
    /// Time every point with the repetition schedule (serial).
    #[arg(long)]
    timing: bool,
}

#[derive(Args)]
struct SplitArgs {
    /// Corpus to split 60/20/20.
    #[arg(long)]
    corpus: PathBuf,
    /// Dataset 2 corpus; with it `--corpus` is dataset 1 and dataset 3 is built.
    #[arg(long)]
    corpus2: Option<PathBuf>,
    /// Output directory for train.amgs, val.amgs and test.amgs.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    val: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Architecture `F D drop O W3 D3`, optionally with a second conv layer.
    #[arg(long, default_value = "40 2 0.25 128 128 4")]
    arch: String,
    #[arg(long, default_value_t = 1000)]
    epochs: usize,
    #[arg(long, default_value_t = 50)]
    patience: usize,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    /// Also write the per-epoch history as JSON.
    #[arg(long)]
    history: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct ProblemArgs {
    /// Coefficient pattern a, b, c or d.
    #[arg(long)]
    pattern: char,
    /// Exponent, or `e1,e2` for two exponents.
    #[arg(long)]
    eps: String,
    /// Mesh level k, N = 2^k.
    #[arg(long)]
    level: u32,
}

#[derive(Args)]
struct ProblemModelArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    #[arg(long)]
    model: PathBuf,
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchmarkArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    /// Repetitions per point (default from the level's schedule).
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Corpus generated with --timing.
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Add predicted-vs-measured series.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

fn parse_grid(spec: Option<&str>, default_count: usize) -> Result<Vec<f64>> {
    let Some(s) = spec else {
        return Ok(theta_grid(default_count));
    };
    let grid = if s.contains(',') || s.contains('.') {
        s.split(',')
            .map(|t| {
                t.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::InvalidArgument(format!("bad threshold '{t}'")))
            })
            .collect::<Result<Vec<_>>>()?
    } else {
        let n: usize = s
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("bad threshold grid '{s}'")))?;
        theta_grid(n)
    };
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty threshold grid".into()));
    }
    if let Some(&t) = grid.iter().find(|&&t| !(t > 0.0 && t <= 1.0)) {
        return Err(Error::InvalidTheta(t));
    }
    Ok(grid)
}

impl ProblemArgs {
    fn spec(&self, full: bool) -> Result<ProblemSpec> {
        let kind = PatternKind::ALL
            .into_iter()
            .find(|k| k.letter() == self.pattern.to_ascii_lowercase())
            .ok_or_else(|| Error::InvalidArgument(format!("unknown pattern '{}'", self.pattern)))?;
        let exps: Vec<f64> = self
            .eps
            .split(',')
            .map(|e| {
                e.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::InvalidArgument(format!("bad exponent '{e}'")))
            })
            .collect::<Result<_>>()?;
        let pattern = match exps[..] {
            [e] => DiffusionPattern::single(kind, e),
            [a, b] => DiffusionPattern::pair(kind, a, b),
            _ => return Err(Error::InvalidArgument("give one or two exponents".into())),
        };
        check_level(self.level, full)?;
        ProblemSpec::with_level(self.level, pattern)
    }
}

fn max_level(full: bool) -> u32 {
    if full {
        dataset::MAX_LEVEL
    } else {
        dataset::DESK_MAX_LEVEL
    }
}

fn check_level(k: u32, full: bool) -> Result<()> {
    let hi = max_level(full);
    if !(dataset::MIN_LEVEL..=hi).contains(&k) {
        let hint = if full { "" } else { " (use --full for finer meshes)" };
        return Err(Error::InvalidArgument(format!(
            "level {k} outside {}..={hi}{hint}",
            dataset::MIN_LEVEL
        )));
    }
    Ok(())
}

fn write_json<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match out {
        Some(p) => fs::write(p, text + "\n")?,
        None => println!("{text}"),
    }
    Ok(())
}

fn write_corpus(path: &Path, samples: &[&Sample]) -> Result<()> {
    let bytes: Vec<u8> = samples.iter().flat_map(|s| encode_frame(s)).collect();
    fs::write(path, bytes)?;
    Ok(())
}

fn generate(cli: &Cli, a: &GenerateArgs) -> Result<()> {
    let k = a.max_level.unwrap_or(max_level(cli.full));
    check_level(k, cli.full)?;
    let levels = dataset::MIN_LEVEL..=k;
    let grid = match a.which {
        Which::Ds1 => {
            let thetas = parse_grid(cli.theta_grid.as_deref(), 25)?;
            dataset::full_grid(&dataset::dataset1_patterns(), levels, &thetas)
        }
        Which::Ds2 => {
            let thetas = parse_grid(cli.theta_grid.as_deref(), 18)?;
            dataset::full_grid(&dataset::dataset2_patterns(), levels, &thetas)
        }
    };
    let opts = GenerateOptions {
        m: cli.m,
        timing: a.timing,
        ..GenerateOptions::default()
    };
    let summary = dataset::generate(&a.out, &grid, &opts)?;
    eprintln!(
        "{} samples written, {} already present ({} grid points)",
        summary.written,
        summary.skipped,
        grid.len()
    );
    Ok(())
}

fn split(cli: &Cli, a: &SplitArgs) -> Result<()> {
    let first = read_corpus(&a.corpus)?;
    let second = a.corpus2.as_deref().map(read_corpus).transpose()?;
    fs::create_dir_all(&a.out)?;
    let (train, val, test): (Vec<&Sample>, Vec<&Sample>, Vec<&Sample>) = match &second {
        None => {
            let s = split_plain(first.len(), &SplitSpec::default(), cli.seed)?;
            let pick = |idx: &[usize]| idx.iter().map(|&i| &first[i]).collect::<Vec<_>>();
            (pick(&s.train), pick(&s.val), pick(&s.test))
        }
        Some(second) => {
            let s = split_dataset3(first.len(), second.len(), cli.seed);
            let both = [&first, second];
            let pick = |idx: &[(usize, usize)]| idx.iter().map(|&(c, i)| &both[c][i]).collect::<Vec<_>>();
            (pick(&s.train), pick(&s.val), pick(&s.test))
        }
    };
    write_corpus(&a.out.join("train.amgs"), &train)?;
    write_corpus(&a.out.join("val.amgs"), &val)?;
    write_corpus(&a.out.join("test.amgs"), &test)?;
    eprintln!("train {} / val {} / test {}", train.len(), val.len(), test.len());
    Ok(())
}

fn view_size(samples: &[Sample]) -> Result<usize> {
    let m = samples
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty corpus".into()))?
        .view
        .m();
    if samples.iter().any(|s| s.view.m() != m) {
        return Err(Error::Format("corpus mixes view sizes".into()));
    }
    Ok(m)
}

fn train_cmd(cli: &Cli, a: &TrainArgs) -> Result<()> {
    let tr = read_corpus(&a.train)?;
    let va = read_corpus(&a.val)?;
    let m = view_size(&tr)?;
    let cfg: NetworkConfig = a.arch.parse()?;
    let opts = TrainOptions {
        batch_size: a.batch,
        learning_rate: a.lr,
        max_epochs: a.epochs,
        patience: a.patience,
    };
    let (model, hist) = train(
        &to_examples(&tr, cli.mode)?,
        &to_examples(&va, cli.mode)?,
        &cfg,
        m,
        cli.mode,
        cli.seed,
        &opts,
    )?;
    save_model(&model, &a.out)?;
    if let Some(p) = &a.history {
        write_json(&hist, Some(p))?;
    }
    eprintln!(
        "best epoch {} of {}, validation MSE {:.4e}",
        hist.best_epoch,
        hist.epochs.len(),
        hist.best_val_loss
    );
    Ok(())
}

fn predictions(model_path: &Path, samples: &[Sample]) -> Result<Vec<PredictionRow>> {
    let model = load_model(model_path)?;
    samples
        .iter()
        .map(|s| {
            let e = s.to_example(model.mode())?;
            Ok(PredictionRow {
                pattern: s.pattern,
                level: s.level,
                theta: s.theta,
                rho: s.rho,
                predicted: model.predict(&e.input, e.neg_log2_h, e.theta)?,
            })
        })
        .collect()
}

#[derive(Serialize)]
struct PredictSummary {
    n: usize,
    mse: f64,
    mae: f64,
}

fn predict(a: &PredictArgs) -> Result<()> {
    let samples = read_corpus(&a.corpus)?;
    let rows = predictions(&a.model, &samples)?;
    let p: Vec<f64> = rows.iter().map(|r| r.predicted).collect();
    let t: Vec<f64> = rows.iter().map(|r| r.rho).collect();
    if let Some(out) = &a.out {
        write_prediction_csv(out, &rows)?;
    }
    write_json(
        &PredictSummary {
            n: rows.len(),
            mse: amgann::ann::loss_mse(&p, &t)?,
            mae: amgann::ann::metric_mae(&p, &t)?,
        },
        None,
    )
}

fn select(cli: &Cli, a: &ProblemModelArgs) -> Result<()> {
    let spec = a.problem.spec(cli.full)?;
    let model = load_model(&a.model)?;
    let sys = assemble(&spec)?;
    let view = normalize(&pooling_csr(&sys.matrix, model.m())?, model.mode())?;
    let grid = parse_grid(cli.theta_grid.as_deref(), 25)?;
    write_json(&select_theta(&model, &view, spec.neg_log2_h(), &grid)?, None)
}

#[derive(Serialize)]
struct SolveOutput {
    theta: f64,
    report: amgann::solver::SolveReport,
    selection_cpu_secs: f64,
    l2_error: f64,
}

fn solve(cli: &Cli, a: &SolveArgs) -> Result<()> {
    let spec = a.problem.spec(cli.full)?;
    let model = load_model(&a.model)?;
    let grid = parse_grid(cli.theta_grid.as_deref(), 25)?;
    let out = ann_amg_solve(&spec, &model, &grid, &AnnAmgOptions::default())?;
    write_json(
        &SolveOutput {
            theta: out.selection.theta,
            l2_error: amgann::fem::l2_error(&spec, &out.solution)?,
            report: out.report,
            selection_cpu_secs: out.selection_cpu_secs,
        },
        a.out.as_deref(),
    )
}

#[derive(Serialize)]
struct BenchRow {
    theta: f64,
    rho: f64,
    iterations: usize,
    timing: amgann::timing::TimingStats,
}

fn benchmark(cli: &Cli, a: &BenchmarkArgs) -> Result<()> {
    let spec = a.problem.spec(cli.full)?;
    let grid = parse_grid(cli.theta_grid.as_deref(), 25)?;
    let reps = match a.reps {
        Some(r) => r,
        None => dataset::repetitions(a.problem.level)?,
    };
    let sys = assemble(&spec)?;
    let mut rows = Vec::new();
    for (theta, timing) in dataset::timing_benchmark(&spec, &grid, reps)? {
        let h = amg_setup(&sys.matrix, theta, 1, 1)?;
        let (_, r) = pcg(&sys.matrix, &sys.rhs, &h, &SolveOptions::default())?;
        rows.push(BenchRow {
            theta,
            rho: r.rho,
            iterations: r.iterations,
            timing,
        });
    }
    write_json(&rows, a.out.as_deref())
}

#[derive(Serialize)]
struct LevelReport {
    level: u32,
    h: f64,
    report: dataset::OlsReport,
}

fn analyze(a: &AnalyzeArgs) -> Result<()> {
    let samples = read_corpus(&a.corpus)?;
    let mut levels: Vec<u32> = samples.iter().filter(|s| s.timing.is_some()).map(|s| s.level).collect();
    levels.sort_unstable();
    levels.dedup();
    if levels.is_empty() {
        return Err(Error::InvalidArgument("corpus has no timed samples; generate with --timing".into()));
    }
    let reports = levels
        .into_iter()
        .map(|level| {
            Ok(LevelReport {
                level,
                h: 0.5f64.powi(level as i32),
                report: least_squares_rho_time(&samples, level)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    write_json(&reports, a.out.as_deref())
}

fn export(a: &ExportArgs) -> Result<()> {
    let samples = read_corpus(&a.corpus)?;
    fs::create_dir_all(&a.out)?;
    write_theta_series_csv(&a.out.join("theta_series.csv"), &samples)?;
    let mut levels: Vec<u32> = samples.iter().filter(|s| s.timing.is_some()).map(|s| s.level).collect();
    levels.sort_unstable();
    levels.dedup();
    if !levels.is_empty() {
        write_rho_time_csv(&a.out.join("rho_time.csv"), &samples, &levels)?;
    }
    if let Some(m) = &a.model {
        write_prediction_csv(&a.out.join("predictions.csv"), &predictions(m, &samples)?)?;
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Generate(a) => generate(cli, a),
        Command::Split(a) => split(cli, a),
        Command::Train(a) => train_cmd(cli, a),
        Command::Predict(a) => predict(a),
        Command::SelectTheta(a) => select(cli, a),
        Command::Solve(a) => solve(cli, a),
        Command::Benchmark(a) => benchmark(cli, a),
        Command::Analyze(a) => analyze(a),
        Command::ExportFigures(a) => export(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    // clap exits with 0 for --help/--version and 2 for usage errors
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("amgann: {e}");
            ExitCode::from(1)
        }
    }
}
