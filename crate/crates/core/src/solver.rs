//! Preconditioned conjugate gradients and the stationary two-level solver.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::amg::{amg_setup, TwoLevelHierarchy};
use crate::fem::{assemble, ProblemSpec};
use crate::sparse::{dot, norm2, CsrMatrix};
use crate::timing::process_cpu_time;
use crate::{Error, Result};

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub record_history: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
            record_history: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub converged: bool,
    /// Geometric-mean residual reduction per iteration.
    pub rho: f64,
    pub initial_residual: f64,
    pub final_residual: f64,
    /// Wall time of the iteration loop, excluding setup.
    pub elapsed_secs: f64,
    /// Process CPU time of the same loop.
    pub cpu_secs: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub history: Option<Vec<f64>>,
}

/// `(r_N / r_0)^(1/N)`; zero when nothing had to be done.
pub fn convergence_factor(initial: f64, last: f64, iterations: usize) -> f64 {
    if iterations == 0 || initial == 0.0 {
        return 0.0;
    }
    (last / initial).powf(1.0 / iterations as f64)
}

/// Convergence factor at the last entry of a residual history.
pub fn convergence_factor_from_history(residuals: &[f64]) -> Result<f64> {
    let first = *residuals
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty residual history".into()))?;
    let last = *residuals.last().expect("nonempty");
    if first == 0.0 {
        if last != 0.0 {
            return Err(Error::InvalidArgument(
                "zero initial residual followed by a nonzero one".into(),
            ));
        }
        return Ok(0.0);
    }
    Ok(convergence_factor(first, last, residuals.len() - 1))
}

fn check_dims(a: &CsrMatrix, h: &TwoLevelHierarchy, f: &[f64]) -> Result<()> {
    if a.n_rows() != a.n_cols() || f.len() != a.n_rows() || h.fine().n_rows() != a.n_rows() {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} system, rhs {}, preconditioner {}",
            a.n_rows(),
            a.n_cols(),
            f.len(),
            h.fine().n_rows()
        )));
    }
    Ok(())
}

fn zero_rhs_report(n: usize, record: bool) -> (Vec<f64>, SolveReport) {
    (
        vec![0.0; n],
        SolveReport {
            iterations: 0,
            converged: true,
            rho: 0.0,
            initial_residual: 0.0,
            final_residual: 0.0,
            elapsed_secs: 0.0,
            cpu_secs: 0.0,
            history: record.then(|| vec![0.0]),
        },
    )
}

/// CG on `A u = f` from `u = 0`, preconditioned by one two-level cycle.
/// Stops once `||r|| < tol * ||f||`.
pub fn pcg(
    a: &CsrMatrix,
    f: &[f64],
    h: &TwoLevelHierarchy,
    opts: &SolveOptions,
) -> Result<(Vec<f64>, SolveReport)> {
    check_dims(a, h, f)?;
    let n = f.len();
    let f_norm = norm2(f);
    if f_norm == 0.0 {
        return Ok(zero_rhs_report(n, opts.record_history));
    }
    let target = opts.tol * f_norm;
    let mut ws = h.workspace();
    let mut x = vec![0.0; n];
    let mut r = f.to_vec();
    let mut z = vec![0.0; n];
    let mut ap = vec![0.0; n];
    let mut history = opts.record_history.then(|| vec![f_norm]);

    let cpu_start = process_cpu_time();
    let start = Instant::now();
    h.apply(&r, &mut z, &mut ws);
    let mut rz = dot(&r, &z);
    if !(rz > 0.0) {
        return Err(Error::IndefinitePreconditioner {
            iteration: 0,
            value: rz,
        });
    }
    let mut p = z.clone();
    let mut r_norm = f_norm;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        a.spmv_into(&p, &mut ap);
        let alpha = rz / dot(&p, &ap);
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        iterations += 1;
        r_norm = norm2(&r);
        if let Some(hist) = history.as_mut() {
            hist.push(r_norm);
        }
        if r_norm < target {
            break;
        }
        h.apply(&r, &mut z, &mut ws);
        let rz_new = dot(&r, &z);
        if !(rz_new > 0.0) {
            return Err(Error::IndefinitePreconditioner {
                iteration: iterations,
                value: rz_new,
            });
        }
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    let elapsed_secs = start.elapsed().as_secs_f64();
    let cpu_secs = process_cpu_time() - cpu_start;
    Ok((
        x,
        SolveReport {
            iterations,
            converged: r_norm < target,
            rho: convergence_factor(f_norm, r_norm, iterations),
            initial_residual: f_norm,
            final_residual: r_norm,
            elapsed_secs,
            cpu_secs,
            history,
        },
    ))
}

/// Repeats two-level cycles from `u = 0` while `||r|| >= tol * ||f||`.
pub fn stationary_solve(
    a: &CsrMatrix,
    f: &[f64],
    h: &TwoLevelHierarchy,
    opts: &SolveOptions,
) -> Result<(Vec<f64>, SolveReport)> {
    check_dims(a, h, f)?;
    let n = f.len();
    let f_norm = norm2(f);
    if f_norm == 0.0 {
        return Ok(zero_rhs_report(n, opts.record_history));
    }
    let target = opts.tol * f_norm;
    let mut ws = h.workspace();
    let mut u = vec![0.0; n];
    let mut r = vec![0.0; n];
    let mut r_norm = f_norm;
    let mut iterations = 0;
    let mut history = opts.record_history.then(|| vec![f_norm]);
    let cpu_start = process_cpu_time();
    let start = Instant::now();
    while r_norm >= target && iterations < opts.max_iter {
        h.cycle(&mut u, f, &mut ws);
        a.residual_into(&u, f, &mut r);
        r_norm = norm2(&r);
        iterations += 1;
        if let Some(hist) = history.as_mut() {
            hist.push(r_norm);
        }
    }
    let elapsed_secs = start.elapsed().as_secs_f64();
    let cpu_secs = process_cpu_time() - cpu_start;
    Ok((
        u,
        SolveReport {
            iterations,
            converged: r_norm < target,
            rho: convergence_factor(f_norm, r_norm, iterations),
            initial_residual: f_norm,
            final_residual: r_norm,
            elapsed_secs,
            cpu_secs,
            history,
        },
    ))
}

/// Assembles the problem, builds the hierarchy for `theta` and runs PCG.
pub fn solve_problem(
    spec: &ProblemSpec,
    theta: f64,
    opts: &SolveOptions,
) -> Result<(Vec<f64>, SolveReport)> {
    let sys = assemble(spec)?;
    let h = amg_setup(&sys.matrix, theta, 1, 1)?;
    pcg(&sys.matrix, &sys.rhs, &h, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{l2_error, DiffusionPattern, PatternKind};
    use crate::sparse::CooMatrix;

    fn spec(n: usize, kind: PatternKind, eps: f64) -> ProblemSpec {
        ProblemSpec::new(n, DiffusionPattern::single(kind, eps)).unwrap()
    }

    #[test]
    fn convergence_factor_cases() {
        assert!((convergence_factor(1.0, 1e-8, 8) - 0.1).abs() < 1e-15);
        assert_eq!(convergence_factor(0.0, 0.0, 0), 0.0);
        assert!((convergence_factor(2.0, 2e-6, 3) - 0.01).abs() < 1e-15);
    }

    #[test]
    fn history_convergence_factor() {
        assert_eq!(convergence_factor_from_history(&[1.0, 1e-4]).unwrap(), 1e-4);
        let r = convergence_factor_from_history(&[1.0, 0.5, 0.1, 0.01, 1e-4]).unwrap();
        assert!((r - 0.1).abs() < 1e-15);
        assert_eq!(convergence_factor_from_history(&[3.0]).unwrap(), 0.0);
        assert!(convergence_factor_from_history(&[]).is_err());
        assert!(convergence_factor_from_history(&[0.0, 1.0]).is_err());
    }

    #[test]
    fn zero_rhs_is_immediate() {
        let sys = assemble(&spec(8, PatternKind::TwoStrides, 0.0)).unwrap();
        let h = amg_setup(&sys.matrix, 0.25, 1, 1).unwrap();
        let zero = vec![0.0; sys.rhs.len()];
        let (u, rep) = pcg(&sys.matrix, &zero, &h, &SolveOptions::default()).unwrap();
        assert_eq!(rep.iterations, 0);
        assert_eq!(rep.rho, 0.0);
        assert!(u.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn all_coarse_preconditioner_solves_in_one_step() {
        let a = CsrMatrix::identity(7);
        let h = amg_setup(&a, 0.25, 1, 1).unwrap();
        let f: Vec<f64> = (0..7).map(|i| i as f64 + 1.0).collect();
        let (u, rep) = pcg(&a, &f, &h, &SolveOptions::default()).unwrap();
        assert_eq!(rep.iterations, 1);
        assert!(rep.converged);
        for (p, q) in u.iter().zip(&f) {
            assert!((p - q).abs() < 1e-14);
        }
    }

    #[test]
    fn residual_history_and_tolerance() {
        let sys = assemble(&spec(32, PatternKind::Checkerboard2, 2.0)).unwrap();
        let h = amg_setup(&sys.matrix, 0.25, 1, 1).unwrap();
        let opts = SolveOptions {
            record_history: true,
            ..SolveOptions::default()
        };
        let (u, rep) = pcg(&sys.matrix, &sys.rhs, &h, &opts).unwrap();
        assert!(rep.converged);
        let hist = rep.history.as_ref().unwrap();
        assert_eq!(hist.len(), rep.iterations + 1);
        assert!(*hist.last().unwrap() < 1e-8 * norm2(&sys.rhs));
        let r = sys.matrix.spmv(&u).unwrap();
        let true_res: f64 = r
            .iter()
            .zip(&sys.rhs)
            .map(|(p, q)| (p - q) * (p - q))
            .sum::<f64>()
            .sqrt();
        assert!(true_res < 1e-7 * norm2(&sys.rhs));
        let expected = (hist.last().unwrap() / hist[0]).powf(1.0 / rep.iterations as f64);
        assert!((rep.rho - expected).abs() < 1e-15);
    }

    #[test]
    fn iteration_cap_reports_non_convergence() {
        let sys = assemble(&spec(32, PatternKind::Checkerboard4, 5.0)).unwrap();
        let h = amg_setup(&sys.matrix, 0.25, 1, 1).unwrap();
        let opts = SolveOptions {
            max_iter: 2,
            ..SolveOptions::default()
        };
        let (_, rep) = pcg(&sys.matrix, &sys.rhs, &h, &opts).unwrap();
        assert_eq!(rep.iterations, 2);
        assert!(!rep.converged);
    }

    #[test]
    fn indefinite_preconditioner_is_reported() {
        // negative-definite operator makes <r, M r> negative
        let a = CooMatrix::from_triplets(2, 2, [(0, 0, -1.0), (1, 1, -2.0)])
            .unwrap()
            .to_csr();
        let h = amg_setup(&a, 0.25, 1, 1).unwrap();
        assert!(matches!(
            pcg(&a, &[1.0, 1.0], &h, &SolveOptions::default()),
            Err(Error::IndefinitePreconditioner { iteration: 0, .. })
        ));
    }

    #[test]
    fn stationary_and_pcg_reach_the_same_solution() {
        let sys = assemble(&spec(16, PatternKind::FourStrides, 1.0)).unwrap();
        let h = amg_setup(&sys.matrix, 0.36, 1, 1).unwrap();
        let opts = SolveOptions::default();
        let (u1, r1) = pcg(&sys.matrix, &sys.rhs, &h, &opts).unwrap();
        let (u2, r2) = stationary_solve(&sys.matrix, &sys.rhs, &h, &opts).unwrap();
        assert!(r1.converged && r2.converged);
        assert!(r1.iterations <= r2.iterations);
        let diff = u1.iter().zip(&u2).fold(0.0f64, |m, (p, q)| m.max((p - q).abs()));
        assert!(diff < 1e-6);
    }

    #[test]
    fn discretisation_error_drops_with_refinement() {
        let mut prev = f64::INFINITY;
        for n in [8, 16, 32] {
            let s = spec(n, PatternKind::Checkerboard2, 1.0);
            let (u, _) = solve_problem(&s, 0.25, &SolveOptions::default()).unwrap();
            let e = l2_error(&s, &u).unwrap();
            assert!(e < prev / 2.5, "n={n}: {e} vs {prev}");
            prev = e;
        }
    }

    #[test]
    fn report_json_round_trip() {
        let (_, rep) =
            solve_problem(&spec(8, PatternKind::TwoStrides, 0.0), 0.5, &SolveOptions::default())
                .unwrap();
        let text = serde_json::to_string(&rep).unwrap();
        assert!(!text.contains("history"));
        let back: SolveReport = serde_json::from_str(&text).unwrap();
        assert_eq!(back, rep);
    }
}
