//! Threshold selection with a trained surrogate and the full
//! pool / normalize / select / solve sequence.

use serde::{Deserialize, Serialize};

use crate::amg::amg_setup;
use crate::ann::SurrogateModel;
use crate::fem::{assemble, ProblemSpec};
use crate::pooling::{normalize, pooling_csr, NormalizedView};
use crate::solver::{pcg, SolveOptions, SolveReport};
use crate::sparse::CsrMatrix;
use crate::timing::process_cpu_time;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaSelection {
    pub theta: f64,
    /// Predicted `rho` at every grid point, in grid order.
    pub predicted: Vec<f64>,
    pub grid: Vec<f64>,
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty threshold grid".into()));
    }
    if let Some(&t) = grid.iter().find(|&&t| !(t > 0.0 && t <= 1.0)) {
        return Err(Error::InvalidTheta(t));
    }
    Ok(())
}

/// Index of the smallest value; among equal values the one with the
/// smallest threshold wins.
fn argmin(grid: &[f64], values: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..values.len() {
        let better = values[i] < values[best] || (values[i] == values[best] && grid[i] < grid[best]);
        if better {
            best = i;
        }
    }
    best
}

/// Evaluates the surrogate on every grid threshold and returns the minimizer.
pub fn select_theta(
    model: &SurrogateModel,
    view: &NormalizedView,
    neg_log2_h: f64,
    grid: &[f64],
) -> Result<ThetaSelection> {
    check_grid(grid)?;
    if view.mode != model.mode() {
        return Err(Error::InvalidArgument(format!(
            "input normalized with {}, model trained on {}",
            view.mode,
            model.mode()
        )));
    }
    if view.m != model.m() {
        return Err(Error::DimensionMismatch(format!(
            "view of size {}, model expects {}",
            view.m,
            model.m()
        )));
    }
    let predicted = model.predict_thetas(&view.values, neg_log2_h, grid)?;
    if let Some(p) = predicted.iter().find(|p| !p.is_finite()) {
        return Err(Error::Degenerate(format!("surrogate returned {p}")));
    }
    let i = argmin(grid, &predicted);
    Ok(ThetaSelection {
        theta: grid[i],
        predicted,
        grid: grid.to_vec(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnnAmgOptions {
    pub pre_sweeps: usize,
    pub post_sweeps: usize,
    pub solve: SolveOptions,
}

impl Default for AnnAmgOptions {
    fn default() -> Self {
        Self {
            pre_sweeps: 1,
            post_sweeps: 1,
            solve: SolveOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnAmgOutcome {
    pub solution: Vec<f64>,
    pub report: SolveReport,
    pub selection: ThetaSelection,
    /// CPU seconds spent pooling, normalizing and evaluating the surrogate.
    pub selection_cpu_secs: f64,
}

/// Pools and normalizes `a`, picks the threshold with the surrogate, then
/// solves with PCG preconditioned by the two-level hierarchy for it.
pub fn ann_amg_solve_system(
    a: &CsrMatrix,
    f: &[f64],
    neg_log2_h: f64,
    model: &SurrogateModel,
    grid: &[f64],
    opts: &AnnAmgOptions,
) -> Result<AnnAmgOutcome> {
    let t0 = process_cpu_time();
    let view = normalize(&pooling_csr(a, model.m())?, model.mode())?;
    let selection = select_theta(model, &view, neg_log2_h, grid)?;
    let selection_cpu_secs = process_cpu_time() - t0;
    let h = amg_setup(a, selection.theta, opts.pre_sweeps, opts.post_sweeps)?;
    let (solution, report) = pcg(a, f, &h, &opts.solve)?;
    Ok(AnnAmgOutcome {
        solution,
        report,
        selection,
        selection_cpu_secs,
    })
}

/// Assembles `spec` and runs [`ann_amg_solve_system`].
pub fn ann_amg_solve(
    spec: &ProblemSpec,
    model: &SurrogateModel,
    grid: &[f64],
    opts: &AnnAmgOptions,
) -> Result<AnnAmgOutcome> {
    let sys = assemble(spec)?;
    ann_amg_solve_system(&sys.matrix, &sys.rhs, spec.neg_log2_h(), model, grid, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ann::{Network, NetworkConfig};
    use crate::dataset::default_theta_grid;
    use crate::fem::{DiffusionPattern, PatternKind};
    use crate::pooling::NormalizationMode;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_model(m: usize) -> SurrogateModel {
        let cfg = NetworkConfig::tiny();
        let net = Network::new(&cfg, m).unwrap();
        let p = net.init_params(&mut ChaCha8Rng::seed_from_u64(5));
        SurrogateModel::from_parts(cfg, m, 5, NormalizationMode::SumStandard, p).unwrap()
    }

    /// Zero weights everywhere: the output is the final bias for every input.
    fn constant_model(m: usize, c: f64) -> SurrogateModel {
        let mut model = random_model(m);
        let n = model.params().len();
        model.params_mut().iter_mut().for_each(|p| *p = 0.0);
        model.params_mut()[n - 1] = c;
        model
    }

    fn view_for(model: &SurrogateModel) -> NormalizedView {
        let spec = ProblemSpec::with_level(4, DiffusionPattern::single(PatternKind::Checkerboard4, 2.0)).unwrap();
        let sys = assemble(&spec).unwrap();
        normalize(&pooling_csr(&sys.matrix, model.m()).unwrap(), model.mode()).unwrap()
    }

    #[test]
    fn constant_model_picks_smallest_theta() {
        let model = constant_model(6, 0.3);
        let grid = [0.5, 0.2, 0.7, 0.3];
        let s = select_theta(&model, &view_for(&model), 4.0, &grid).unwrap();
        assert_eq!(s.theta, 0.2);
        assert!(s.predicted.iter().all(|&p| p == 0.3));
    }

    #[test]
    fn argmin_of_convex_profile() {
        let grid = default_theta_grid();
        let mut grid = grid;
        grid.push(0.4);
        let vals: Vec<f64> = grid.iter().map(|t| 0.05 + (t - 0.4) * (t - 0.4)).collect();
        assert_eq!(grid[argmin(&grid, &vals)], 0.4);
    }

    #[test]
    fn output_shift_leaves_choice_unchanged() {
        let mut model = random_model(6);
        let view = view_for(&model);
        let grid = default_theta_grid();
        let a = select_theta(&model, &view, 4.0, &grid).unwrap();
        let n = model.params().len();
        model.params_mut()[n - 1] += 0.75;
        let b = select_theta(&model, &view, 4.0, &grid).unwrap();
        assert_eq!(a.theta, b.theta);
    }

    #[test]
    fn rejects_bad_grid_and_mode() {
        let model = random_model(6);
        let view = view_for(&model);
        assert!(select_theta(&model, &view, 4.0, &[]).is_err());
        assert!(select_theta(&model, &view, 4.0, &[0.0, 0.5]).is_err());
        assert!(select_theta(&model, &view, 4.0, &[0.5, 1.5]).is_err());
        let mut other = view.clone();
        other.mode = NormalizationMode::MeanScaled;
        assert!(select_theta(&model, &other, 4.0, &[0.5]).is_err());
    }

    #[test]
    fn uniform_problem_converges() {
        let model = random_model(6);
        let spec = ProblemSpec::with_level(5, DiffusionPattern::single(PatternKind::TwoStrides, 0.0)).unwrap();
        let out = ann_amg_solve(&spec, &model, &default_theta_grid(), &AnnAmgOptions::default()).unwrap();
        assert!(out.report.converged);
        assert!(out.selection_cpu_secs >= 0.0);
    }

    #[test]
    fn pinned_theta_matches_direct_solve() {
        let model = random_model(6);
        let spec = ProblemSpec::with_level(5, DiffusionPattern::single(PatternKind::Checkerboard4, 3.5)).unwrap();
        let out = ann_amg_solve(&spec, &model, &[0.36], &AnnAmgOptions::default()).unwrap();
        let sys = assemble(&spec).unwrap();
        let h = amg_setup(&sys.matrix, 0.36, 1, 1).unwrap();
        let (u, r) = pcg(&sys.matrix, &sys.rhs, &h, &SolveOptions::default()).unwrap();
        assert_eq!(out.solution, u);
        assert_eq!(out.report.iterations, r.iterations);
        assert_eq!(out.report.rho.to_bits(), r.rho.to_bits());
        assert_eq!(out.report.final_residual.to_bits(), r.final_residual.to_bits());
    }
}
