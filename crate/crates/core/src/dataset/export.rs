//! CSV series for plotting.

use std::path::Path;

use serde::Serialize;

use super::Sample;
use crate::fem::{DiffusionPattern, Exponents};
use crate::Result;

fn exps(p: &DiffusionPattern) -> (f64, Option<f64>) {
    match p.exponents {
        Exponents::Single(e) => (e, None),
        Exponents::Pair(a, b) => (a, Some(b)),
    }
}

#[derive(Serialize)]
struct ThetaRow {
    pattern: char,
    eps1: f64,
    eps2: Option<f64>,
    level: u32,
    h: f64,
    theta: f64,
    rho: f64,
    iterations: usize,
    converged: bool,
    time_mean: Option<f64>,
    time_std: Option<f64>,
    repetitions: Option<usize>,
}

/// One row per sample: problem, threshold, `rho`, iterations and timing.
pub fn write_theta_series_csv(path: &Path, samples: &[Sample]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for s in samples {
        let (eps1, eps2) = exps(&s.pattern);
        w.serialize(ThetaRow {
            pattern: s.pattern.kind.letter(),
            eps1,
            eps2,
            level: s.level,
            h: 1.0 / s.n() as f64,
            theta: s.theta,
            rho: s.rho,
            iterations: s.iterations,
            converged: s.converged,
            time_mean: s.timing.map(|t| t.mean),
            time_std: s.timing.map(|t| t.std),
            repetitions: s.timing.map(|t| t.repetitions),
        })
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct RhoTimeRow {
    level: u32,
    rho_centered: f64,
    time_centered: f64,
}

/// Case-centered `(rho, t)` pairs for each level.
pub fn write_rho_time_csv(path: &Path, samples: &[Sample], levels: &[u32]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for &level in levels {
        for (r, t) in super::rho_time_cases(samples, level) {
            w.serialize(RhoTimeRow {
                level,
                rho_centered: r,
                time_centered: t,
            })
            .map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Measured and predicted `rho` of one sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictionRow {
    pub pattern: DiffusionPattern,
    pub level: u32,
    pub theta: f64,
    pub rho: f64,
    pub predicted: f64,
}

#[derive(Serialize)]
struct PredictionCsv {
    pattern: char,
    eps1: f64,
    eps2: Option<f64>,
    level: u32,
    theta: f64,
    rho: f64,
    predicted: f64,
}

pub fn write_prediction_csv(path: &Path, rows: &[PredictionRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        let (eps1, eps2) = exps(&r.pattern);
        w.serialize(PredictionCsv {
            pattern: r.pattern.kind.letter(),
            eps1,
            eps2,
            level: r.level,
            theta: r.theta,
            rho: r.rho,
            predicted: r.predicted,
        })
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> crate::Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => crate::Error::Io(io),
        other => crate::Error::Format(format!("csv: {other:?}")),
    }
}
