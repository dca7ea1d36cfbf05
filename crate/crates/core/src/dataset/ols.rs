//! Regression of CPU time on the convergence factor at a fixed mesh level.
//!
//! Within every test case (one pattern and exponent set at one level, all
//! thresholds) both `rho` and `t` are centered on the case mean. The
//! centered pairs are then fitted by `t = beta * rho` without intercept and
//! reported with the usual no-constant conventions: uncentered `R^2`,
//! `df_resid = n - 1`, Gaussian log-likelihood AIC with one parameter.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::Sample;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OlsReport {
    pub n: usize,
    pub r2: f64,
    pub adj_r2: f64,
    pub f_statistic: f64,
    pub aic: f64,
    pub coef: f64,
    pub std_err: f64,
    pub t_value: f64,
    pub p_value: f64,
}

/// Least squares fit of `y = beta * x`.
pub fn ols_through_origin(x: &[f64], y: &[f64]) -> Result<OlsReport> {
    let n = x.len();
    if n != y.len() {
        return Err(Error::DimensionMismatch(format!("{n} regressors, {} responses", y.len())));
    }
    if n < 3 {
        return Err(Error::InvalidArgument(format!("regression needs at least 3 points, got {n}")));
    }
    let sxx: f64 = x.iter().map(|v| v * v).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let syy: f64 = y.iter().map(|v| v * v).sum();
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Degenerate("regression data have zero variance".into()));
    }
    let beta = sxy / sxx;
    let ssr: f64 = x.iter().zip(y).map(|(a, b)| (b - beta * a).powi(2)).sum();
    let nf = n as f64;
    let df = nf - 1.0;
    let r2 = 1.0 - ssr / syy;
    let sigma2 = ssr / df;
    let std_err = (sigma2 / sxx).sqrt();
    let t_value = beta / std_err;
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::Degenerate(e.to_string()))?;
    let p_value = 2.0 * dist.sf(t_value.abs());
    let llf = -0.5 * nf * ((2.0 * std::f64::consts::PI).ln() + (ssr / nf).ln() + 1.0);
    Ok(OlsReport {
        n,
        r2,
        adj_r2: 1.0 - nf / df * (1.0 - r2),
        f_statistic: (syy - ssr) / sigma2,
        aic: -2.0 * llf + 2.0,
        coef: beta,
        std_err,
        t_value,
        p_value,
    })
}

/// Centered `(rho, t)` pairs of all timed samples at `level`, in case order.
pub fn rho_time_cases(samples: &[Sample], level: u32) -> Vec<(f64, f64)> {
    let mut cases: BTreeMap<(u8, Vec<u64>), Vec<(f64, f64)>> = BTreeMap::new();
    for s in samples.iter().filter(|s| s.level == level) {
        let Some(t) = s.timing else { continue };
        let exps = match s.pattern.exponents {
            crate::fem::Exponents::Single(e) => vec![e.to_bits()],
            crate::fem::Exponents::Pair(a, b) => vec![a.to_bits(), b.to_bits()],
        };
        cases
            .entry((s.pattern.kind.code(), exps))
            .or_default()
            .push((s.rho, t.mean));
    }
    let mut out = Vec::new();
    for pts in cases.values() {
        let k = pts.len() as f64;
        let mr = pts.iter().map(|p| p.0).sum::<f64>() / k;
        let mt = pts.iter().map(|p| p.1).sum::<f64>() / k;
        out.extend(pts.iter().map(|&(r, t)| (r - mr, t - mt)));
    }
    out
}

/// Regression report for the timed samples at `level`.
pub fn least_squares_rho_time(samples: &[Sample], level: u32) -> Result<OlsReport> {
    let pts = rho_time_cases(samples, level);
    let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
    ols_through_origin(&x, &y)
}
