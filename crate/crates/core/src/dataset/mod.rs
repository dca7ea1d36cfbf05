//! Training corpora: parameter grids, generation, storage, splits, the
//! CPU-time benchmark and the rho/time regression.

mod export;
mod frame;
mod ols;
mod split;

use std::collections::HashSet;
use std::fs::OpenOptions;
use std::io::{BufWriter, Seek, SeekFrom, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use export::{write_prediction_csv, write_rho_time_csv, write_theta_series_csv, PredictionRow};
pub use frame::{decode_frame, encode_frame, read_corpus, scan_frames, FRAME_MAGIC, FRAME_VERSION};
pub use ols::{least_squares_rho_time, ols_through_origin, rho_time_cases, OlsReport};
pub use split::{split_dataset3, split_plain, Dataset3Split, Split, SplitSpec, DATASET3_TEST_FRACTIONS};

use crate::amg::amg_setup;
use crate::ann::Example;
use crate::fem::{assemble, DiffusionPattern, Exponents, PatternKind, ProblemSpec};
use crate::pooling::{normalize, pooling_csr, NormalizationMode, View};
use crate::solver::{pcg, SolveOptions, SolveReport};
use crate::timing::process_cpu_time;
use crate::timing::TimingStats;
use crate::{Error, Result};

/// Exponents of the single-exponent corpus.
pub const DATASET1_EPSILONS: [f64; 12] = [
    0.0, 0.4, 0.8, 1.2, 1.6, 2.0, 2.4, 2.8, 3.5, 5.0, 7.0, 9.5,
];

/// Exponent values combined pairwise in the two-exponent corpus.
pub const DATASET2_EXPONENTS: [f64; 3] = [0.5, 1.5, 3.0];

/// Timed repetitions for `k = 3..=10`.
pub const REPETITIONS: [usize; 8] = [200, 100, 50, 20, 10, 7, 5, 4];

pub const MIN_LEVEL: u32 = 3;
pub const MAX_LEVEL: u32 = 10;
/// Finest level generated unless the full range is requested.
pub const DESK_MAX_LEVEL: u32 = 7;

pub fn repetitions(k: u32) -> Result<usize> {
    if !(MIN_LEVEL..=MAX_LEVEL).contains(&k) {
        return Err(Error::InvalidArgument(format!(
            "mesh level k = {k} outside {MIN_LEVEL}..={MAX_LEVEL}"
        )));
    }
    Ok(REPETITIONS[(k - MIN_LEVEL) as usize])
}

/// `n` equally spaced thresholds on `[0.12, 0.72]`.
pub fn theta_grid(n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.12],
        _ => (0..n)
            .map(|i| 0.12 + 0.6 * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

pub fn default_theta_grid() -> Vec<f64> {
    theta_grid(25)
}

/// One (problem, threshold) combination.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub pattern: DiffusionPattern,
    pub level: u32,
    pub theta: f64,
}

impl GridPoint {
    fn key(&self) -> SampleKey {
        SampleKey::new(&self.pattern, self.level, self.theta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct SampleKey {
    kind: PatternKind,
    exps: [u64; 2],
    pair: bool,
    level: u32,
    theta: u64,
}

impl SampleKey {
    fn new(p: &DiffusionPattern, level: u32, theta: f64) -> Self {
        let (exps, pair) = match p.exponents {
            Exponents::Single(e) => ([e.to_bits(), 0], false),
            Exponents::Pair(a, b) => ([a.to_bits(), b.to_bits()], true),
        };
        Self {
            kind: p.kind,
            exps,
            pair,
            level,
            theta: theta.to_bits(),
        }
    }
}

/// Every combination of pattern, exponents, level and threshold, in that
/// nesting order.
pub fn full_grid(
    patterns: &[DiffusionPattern],
    levels: impl IntoIterator<Item = u32> + Clone,
    thetas: &[f64],
) -> Vec<GridPoint> {
    let mut out = Vec::new();
    for p in patterns {
        for level in levels.clone() {
            for &theta in thetas {
                out.push(GridPoint {
                    pattern: *p,
                    level,
                    theta,
                });
            }
        }
    }
    out
}

/// The 48 coefficient patterns of dataset 1.
pub fn dataset1_patterns() -> Vec<DiffusionPattern> {
    PatternKind::ALL
        .iter()
        .flat_map(|&k| DATASET1_EPSILONS.iter().map(move |&e| DiffusionPattern::single(k, e)))
        .collect()
}

/// The 36 coefficient patterns of dataset 2.
pub fn dataset2_patterns() -> Vec<DiffusionPattern> {
    let mut out = Vec::new();
    for k in PatternKind::ALL {
        for &e1 in &DATASET2_EXPONENTS {
            for &e2 in &DATASET2_EXPONENTS {
                out.push(DiffusionPattern::pair(k, e1, e2));
            }
        }
    }
    out
}

/// 4 patterns x 12 exponents x levels x 25 thresholds (9600 for k = 3..=10).
pub fn dataset1_grid(max_level: u32) -> Vec<GridPoint> {
    full_grid(&dataset1_patterns(), MIN_LEVEL..=max_level, &default_theta_grid())
}

/// 4 patterns x 9 exponent pairs x levels x 18 thresholds (5184 for k = 3..=10).
pub fn dataset2_grid(max_level: u32) -> Vec<GridPoint> {
    full_grid(&dataset2_patterns(), MIN_LEVEL..=max_level, &theta_grid(18))
}

/// Dataset 1 restricted to `k <= max_level` and `n_theta` thresholds.
pub fn reduced_dataset1_grid(max_level: u32, n_theta: usize) -> Vec<GridPoint> {
    full_grid(&dataset1_patterns(), MIN_LEVEL..=max_level, &theta_grid(n_theta))
}

/// One corpus record. The stored view is the raw pooled matrix; the input
/// normalization is applied when examples are built.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub pattern: DiffusionPattern,
    pub level: u32,
    pub theta: f64,
    pub rho: f64,
    pub iterations: usize,
    pub converged: bool,
    pub timing: Option<TimingStats>,
    pub view: View,
}

impl Sample {
    /// `N = 2^k`.
    pub fn n(&self) -> usize {
        1usize << self.level
    }

    /// `-log2(h)` with `h = 1 / N`.
    pub fn neg_log2_h(&self) -> f64 {
        self.level as f64
    }

    pub fn to_example(&self, mode: NormalizationMode) -> Result<Example> {
        Ok(Example {
            input: normalize(&self.view, mode)?.values,
            neg_log2_h: self.neg_log2_h(),
            theta: self.theta,
            target: self.rho,
        })
    }

    fn key(&self) -> SampleKey {
        SampleKey::new(&self.pattern, self.level, self.theta)
    }
}

/// Converts samples to network examples, normalizing each view once per
/// distinct problem.
pub fn to_examples(samples: &[Sample], mode: NormalizationMode) -> Result<Vec<Example>> {
    samples.iter().map(|s| s.to_example(mode)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerateOptions {
    pub m: usize,
    /// Time setup plus PCG over the repetition schedule and store the
    /// statistics. Timed generation runs serially and its files are not
    /// reproducible.
    pub timing: bool,
    pub solve: SolveOptions,
}

impl Default for GenerateOptions {
    fn default() -> Self {
        Self {
            m: crate::pooling::DEFAULT_M,
            timing: false,
            solve: SolveOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerateSummary {
    pub written: usize,
    pub skipped: usize,
    pub discarded_bytes: u64,
}

/// Builds the hierarchy for `theta` and runs PCG, returning the CPU
/// seconds of both phases together with the solver report.
pub fn timed_amg_solve(
    a: &crate::sparse::CsrMatrix,
    f: &[f64],
    theta: f64,
    opts: &SolveOptions,
) -> Result<(f64, SolveReport)> {
    let t0 = process_cpu_time();
    let h = amg_setup(a, theta, 1, 1)?;
    let (_, report) = pcg(a, f, &h, opts)?;
    Ok((process_cpu_time() - t0, report))
}

fn timed_runs(
    a: &crate::sparse::CsrMatrix,
    f: &[f64],
    theta: f64,
    opts: &SolveOptions,
    reps: usize,
) -> Result<(TimingStats, SolveReport)> {
    let mut times = Vec::with_capacity(reps);
    let mut first = None;
    for _ in 0..reps {
        let (t, r) = timed_amg_solve(a, f, theta, opts)?;
        times.push(t);
        first.get_or_insert(r);
    }
    let stats = TimingStats::from_samples(&times)
        .ok_or_else(|| Error::InvalidArgument("at least one repetition is needed".into()))?;
    Ok((stats, first.expect("nonempty")))
}

/// Solves every point of one problem and returns the samples in threshold order.
fn solve_problem_group(
    pattern: DiffusionPattern,
    level: u32,
    thetas: &[f64],
    opts: &GenerateOptions,
) -> Result<Vec<Sample>> {
    let spec = ProblemSpec::with_level(level, pattern)?;
    let sys = assemble(&spec)?;
    let view = pooling_csr(&sys.matrix, opts.m)?;
    thetas
        .iter()
        .map(|&theta| {
            let (timing, rep) = if opts.timing {
                let (t, r) = timed_runs(&sys.matrix, &sys.rhs, theta, &opts.solve, repetitions(level)?)?;
                (Some(t), r)
            } else {
                (None, timed_amg_solve(&sys.matrix, &sys.rhs, theta, &opts.solve)?.1)
            };
            Ok(Sample {
                pattern,
                level,
                theta,
                rho: rep.rho,
                iterations: rep.iterations,
                converged: rep.converged,
                timing,
                view: view.clone(),
            })
        })
        .collect()
}

fn worker_threads() -> usize {
    std::env::var("AMGANN_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(rayon::current_num_threads)
}

/// Generates the samples of `grid` into `path`, appending to an existing
/// corpus. Points already present are skipped and a truncated trailing
/// frame is dropped first, so an interrupted run can be restarted.
///
/// Problems are solved in parallel (capped by `AMGANN_THREADS`) unless
/// timing is requested; frames are always written in grid order.
pub fn generate(path: &Path, grid: &[GridPoint], opts: &GenerateOptions) -> Result<GenerateSummary> {
    let mut file = OpenOptions::new()
        .read(true)
        .write(true)
        .create(true)
        .truncate(false)
        .open(path)?;
    let bytes = std::fs::read(path)?;
    let (existing, valid) = scan_frames(&bytes)?;
    let discarded_bytes = (bytes.len() - valid) as u64;
    if discarded_bytes > 0 {
        log::warn!("dropping {discarded_bytes} bytes of incomplete frame at end of corpus");
        file.set_len(valid as u64)?;
    }
    file.seek(SeekFrom::Start(valid as u64))?;
    let done: HashSet<SampleKey> = existing.iter().map(Sample::key).collect();

    // group consecutive pending points of the same problem
    let mut groups: Vec<(DiffusionPattern, u32, Vec<f64>)> = Vec::new();
    let mut skipped = 0;
    for p in grid {
        if done.contains(&p.key()) {
            skipped += 1;
            continue;
        }
        match groups.last_mut() {
            Some((pat, lvl, thetas)) if *pat == p.pattern && *lvl == p.level => thetas.push(p.theta),
            _ => groups.push((p.pattern, p.level, vec![p.theta])),
        }
    }

    let threads = if opts.timing { 1 } else { worker_threads() };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let mut out = BufWriter::new(file);
    let mut written = 0;
    for chunk in groups.chunks(threads.max(1) * 2) {
        let solved: Vec<Result<Vec<Sample>>> = pool.install(|| {
            chunk
                .par_iter()
                .map(|(p, l, t)| solve_problem_group(*p, *l, t, opts))
                .collect()
        });
        for samples in solved {
            for s in samples? {
                out.write_all(&encode_frame(&s))?;
                written += 1;
            }
        }
        out.flush()?;
    }
    Ok(GenerateSummary {
        written,
        skipped,
        discarded_bytes,
    })
}

/// CPU time statistics of setup plus PCG at each threshold, after one
/// untimed warm-up solve per threshold. Runs serially.
pub fn timing_benchmark(spec: &ProblemSpec, thetas: &[f64], reps: usize) -> Result<Vec<(f64, TimingStats)>> {
    let sys = assemble(spec)?;
    let opts = SolveOptions::default();
    thetas
        .iter()
        .map(|&theta| {
            timed_amg_solve(&sys.matrix, &sys.rhs, theta, &opts)?;
            Ok((theta, timed_runs(&sys.matrix, &sys.rhs, theta, &opts, reps)?.0))
        })
        .collect()
}
