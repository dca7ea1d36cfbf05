//! Classical two-level algebraic multigrid.
//!
//! Setup: strong-connection graph for a threshold `theta`, a Ruge–Stüben
//! first-pass C/F splitting, direct interpolation, and the Galerkin coarse
//! operator `A_H = P^T A P` factored by a direct solver. The cycle is
//! `nu1` forward Gauss–Seidel sweeps, coarse correction, `nu2` backward
//! sweeps, which keeps the preconditioner symmetric when `nu1 == nu2`.

use std::cmp::Reverse;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::sparse::{
    triple_product, CooMatrix, CsrMatrix, DenseMatrix, EnvelopeCholesky, LuFactorization,
};
use crate::{Error, Result};

/// Coarse systems up to this size are factored densely.
pub const DENSE_COARSE_LIMIT: usize = 400;

/// For each variable `i`, the sorted set `S_i` of variables it strongly
/// depends on: `-a_ij >= theta * max_{k != i} (-a_ik)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StrongGraph {
    theta_bits: u64,
    ptr: Vec<usize>,
    idx: Vec<usize>,
}

impl StrongGraph {
    pub fn theta(&self) -> f64 {
        f64::from_bits(self.theta_bits)
    }

    pub fn n(&self) -> usize {
        self.ptr.len() - 1
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.idx[self.ptr[i]..self.ptr[i + 1]]
    }

    pub fn n_edges(&self) -> usize {
        self.idx.len()
    }

    /// `S^T`: row `i` lists the variables that strongly depend on `i`.
    pub fn transpose(&self) -> StrongGraph {
        let n = self.n();
        let mut counts = vec![0usize; n + 1];
        for &j in &self.idx {
            counts[j + 1] += 1;
        }
        for i in 0..n {
            counts[i + 1] += counts[i];
        }
        let mut next = counts.clone();
        let mut idx = vec![0usize; self.idx.len()];
        for i in 0..n {
            for &j in self.row(i) {
                idx[next[j]] = i;
                next[j] += 1;
            }
        }
        StrongGraph {
            theta_bits: self.theta_bits,
            ptr: counts,
            idx,
        }
    }
}

pub fn strong_connections(a: &CsrMatrix, theta: f64) -> Result<StrongGraph> {
    if !(theta > 0.0 && theta <= 1.0) {
        return Err(Error::InvalidTheta(theta));
    }
    if a.n_rows() != a.n_cols() {
        return Err(Error::DimensionMismatch(format!(
            "strength graph needs a square matrix, got {}x{}",
            a.n_rows(),
            a.n_cols()
        )));
    }
    let n = a.n_rows();
    let mut ptr = Vec::with_capacity(n + 1);
    let mut idx = Vec::new();
    ptr.push(0);
    for i in 0..n {
        let max_neg = a
            .row(i)
            .filter(|&(j, _)| j != i)
            .fold(0.0f64, |m, (_, v)| m.max(-v));
        if max_neg > 0.0 {
            let cut = theta * max_neg;
            idx.extend(
                a.row(i)
                    .filter(|&(j, v)| j != i && -v >= cut)
                    .map(|(j, _)| j),
            );
        }
        ptr.push(idx.len());
    }
    Ok(StrongGraph {
        theta_bits: theta.to_bits(),
        ptr,
        idx,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PointKind {
    Coarse,
    Fine,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CfSplitting {
    kinds: Vec<PointKind>,
    coarse_index: Vec<Option<usize>>,
    n_coarse: usize,
    degenerate: bool,
}

impl CfSplitting {
    fn from_kinds(kinds: Vec<PointKind>, degenerate: bool) -> Self {
        let mut n_coarse = 0;
        let coarse_index = kinds
            .iter()
            .map(|k| match k {
                PointKind::Coarse => {
                    n_coarse += 1;
                    Some(n_coarse - 1)
                }
                PointKind::Fine => None,
            })
            .collect();
        Self {
            kinds,
            coarse_index,
            n_coarse,
            degenerate,
        }
    }

    /// Builds a splitting from explicit labels (no fallback applied).
    pub fn from_labels(kinds: Vec<PointKind>) -> Self {
        Self::from_kinds(kinds, false)
    }

    pub fn all_coarse(n: usize) -> Self {
        Self::from_kinds(vec![PointKind::Coarse; n], false)
    }

    pub fn kinds(&self) -> &[PointKind] {
        &self.kinds
    }

    pub fn is_coarse(&self, i: usize) -> bool {
        self.kinds[i] == PointKind::Coarse
    }

    pub fn coarse_index(&self, i: usize) -> Option<usize> {
        self.coarse_index[i]
    }

    pub fn n(&self) -> usize {
        self.kinds.len()
    }

    pub fn n_coarse(&self) -> usize {
        self.n_coarse
    }

    /// Set when the splitting produced no C-points and all-C was used instead.
    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    pub fn coarse_points(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.is_coarse(i)).collect()
    }
}

/// Ruge–Stüben first pass.
///
/// The measure of `i` starts at `|S^T_i|`. The undecided point with the
/// largest measure (lowest index on ties) becomes C; every undecided point
/// that strongly depends on it becomes F, and undecided members of each new
/// F-point's `S_j` gain one unit of measure. Points left with measure zero
/// are made C only if they still lack a C-point in a nonempty `S_i`.
pub fn cf_split(g: &StrongGraph) -> CfSplitting {
    let n = g.n();
    let gt = g.transpose();
    let mut measure: Vec<usize> = (0..n).map(|i| gt.row(i).len()).collect();
    let mut kind: Vec<Option<PointKind>> = vec![None; n];
    let mut queue: BTreeSet<(Reverse<usize>, usize)> =
        (0..n).map(|i| (Reverse(measure[i]), i)).collect();

    while let Some(&(Reverse(m), i)) = queue.first() {
        if m == 0 {
            break;
        }
        queue.remove(&(Reverse(m), i));
        kind[i] = Some(PointKind::Coarse);
        for &j in gt.row(i) {
            if kind[j].is_some() {
                continue;
            }
            queue.remove(&(Reverse(measure[j]), j));
            kind[j] = Some(PointKind::Fine);
            for &k in g.row(j) {
                if kind[k].is_none() {
                    queue.remove(&(Reverse(measure[k]), k));
                    measure[k] += 1;
                    queue.insert((Reverse(measure[k]), k));
                }
            }
        }
    }

    for i in 0..n {
        if kind[i].is_some() {
            continue;
        }
        let has_c = g
            .row(i)
            .iter()
            .any(|&j| kind[j] == Some(PointKind::Coarse));
        kind[i] = Some(if g.row(i).is_empty() || has_c {
            PointKind::Fine
        } else {
            PointKind::Coarse
        });
    }

    let kinds: Vec<PointKind> = kind.into_iter().map(|k| k.expect("all decided")).collect();
    if n > 0 && !kinds.contains(&PointKind::Coarse) {
        log::warn!("C/F splitting produced no coarse points; falling back to all-C");
        return CfSplitting::from_kinds(vec![PointKind::Coarse; n], true);
    }
    CfSplitting::from_kinds(kinds, false)
}

/// Prolongation `I_H^h` and restriction `I_h^H = (I_H^h)^T`.
#[derive(Debug, Clone)]
pub struct Interpolation {
    pub prolongation: CsrMatrix,
    pub restriction: CsrMatrix,
}

/// Direct interpolation on `P_i = S_i ∩ C`:
/// `w_ij = -(a_ij / a_ii) * (sum_{k != i} a_ik) / (sum_{k in P_i} a_ik)`.
///
/// F-points with an empty `S_i` get an empty row; an F-point with strong
/// connections but no C-point among them is an error.
pub fn build_interpolation(
    a: &CsrMatrix,
    g: &StrongGraph,
    s: &CfSplitting,
) -> Result<Interpolation> {
    let n = a.n_rows();
    if g.n() != n || s.n() != n {
        return Err(Error::DimensionMismatch(format!(
            "matrix has {n} rows, graph {} and splitting {}",
            g.n(),
            s.n()
        )));
    }
    let mut coo = CooMatrix::with_capacity(n, s.n_coarse(), 4 * n);
    for i in 0..n {
        if let Some(ci) = s.coarse_index(i) {
            coo.push(i, ci, 1.0)?;
            continue;
        }
        let strong = g.row(i);
        if strong.is_empty() {
            continue;
        }
        let mut diag = 0.0;
        let mut off_sum = 0.0;
        let mut interp_sum = 0.0;
        let mut strong_iter = strong.iter().peekable();
        for (j, v) in a.row(i) {
            if j == i {
                diag = v;
                continue;
            }
            off_sum += v;
            while strong_iter.peek().is_some_and(|&&k| k < j) {
                strong_iter.next();
            }
            if strong_iter.peek() == Some(&&j) && s.is_coarse(j) {
                interp_sum += v;
            }
        }
        if diag == 0.0 {
            return Err(Error::ZeroDiagonal(i));
        }
        if interp_sum == 0.0 {
            return Err(Error::Interpolation(i));
        }
        let scale = off_sum / interp_sum;
        for &j in strong {
            if let Some(cj) = s.coarse_index(j) {
                let w = -(a.get(i, j) / diag) * scale;
                coo.push(i, cj, w)?;
            }
        }
    }
    let prolongation = coo.to_csr();
    let restriction = prolongation.transpose();
    Ok(Interpolation {
        prolongation,
        restriction,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepDirection {
    Forward,
    Backward,
}

fn diagonal_checked(a: &CsrMatrix) -> Result<Vec<f64>> {
    let d = a.diagonal();
    match d.iter().position(|&v| v == 0.0) {
        Some(i) => Err(Error::ZeroDiagonal(i)),
        None => Ok(d),
    }
}

fn gauss_seidel(a: &CsrMatrix, diag: &[f64], u: &mut [f64], f: &[f64], dir: SweepDirection) {
    let (rp, ci, vals) = (a.row_ptr(), a.col_idx(), a.values());
    let mut relax = |i: usize| {
        let mut s = f[i];
        for k in rp[i]..rp[i + 1] {
            let j = ci[k];
            if j != i {
                s -= vals[k] * u[j];
            }
        }
        u[i] = s / diag[i];
    };
    let n = diag.len();
    match dir {
        SweepDirection::Forward => (0..n).for_each(&mut relax),
        SweepDirection::Backward => (0..n).rev().for_each(&mut relax),
    }
}

/// `sweeps` Gauss–Seidel sweeps on `a u = f` starting from `u`.
pub fn smooth(
    a: &CsrMatrix,
    u: &[f64],
    f: &[f64],
    sweeps: usize,
    dir: SweepDirection,
) -> Result<Vec<f64>> {
    if a.n_rows() != a.n_cols() || u.len() != a.n_rows() || f.len() != a.n_rows() {
        return Err(Error::DimensionMismatch(format!(
            "smooth: {}x{} matrix, u {}, f {}",
            a.n_rows(),
            a.n_cols(),
            u.len(),
            f.len()
        )));
    }
    let diag = diagonal_checked(a)?;
    let mut out = u.to_vec();
    for _ in 0..sweeps {
        gauss_seidel(a, &diag, &mut out, f, dir);
    }
    Ok(out)
}

#[derive(Debug, Clone)]
enum CoarseSolver {
    Dense(LuFactorization),
    Envelope(EnvelopeCholesky),
}

impl CoarseSolver {
    fn new(a_h: &CsrMatrix) -> Result<Self> {
        if a_h.n_rows() <= DENSE_COARSE_LIMIT {
            Ok(CoarseSolver::Dense(LuFactorization::new(&a_h.to_dense())?))
        } else {
            Ok(CoarseSolver::Envelope(EnvelopeCholesky::new(a_h)?))
        }
    }

    fn solve(&self, b: &[f64], x: &mut [f64]) {
        match self {
            CoarseSolver::Dense(lu) => lu.solve_into(b, x),
            CoarseSolver::Envelope(ch) => {
                x.copy_from_slice(b);
                ch.solve_in_place(x);
            }
        }
    }
}

/// Size summary of a hierarchy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HierarchyStats {
    pub n: usize,
    pub n_coarse: usize,
    pub nnz_fine: usize,
    pub nnz_coarse: usize,
    pub theta: f64,
    pub degenerate: bool,
}

/// Fine operator, transfer operators and the factored coarse operator.
#[derive(Debug, Clone)]
pub struct TwoLevelHierarchy {
    fine: CsrMatrix,
    diag: Vec<f64>,
    splitting: CfSplitting,
    interpolation: Interpolation,
    coarse: CsrMatrix,
    coarse_solver: CoarseSolver,
    pre_sweeps: usize,
    post_sweeps: usize,
    theta: f64,
}

/// Scratch vectors for [`TwoLevelHierarchy::cycle`].
#[derive(Debug, Clone)]
pub struct CycleWorkspace {
    residual: Vec<f64>,
    coarse_rhs: Vec<f64>,
    coarse_sol: Vec<f64>,
}

impl TwoLevelHierarchy {
    pub fn fine(&self) -> &CsrMatrix {
        &self.fine
    }

    pub fn coarse(&self) -> &CsrMatrix {
        &self.coarse
    }

    pub fn splitting(&self) -> &CfSplitting {
        &self.splitting
    }

    pub fn prolongation(&self) -> &CsrMatrix {
        &self.interpolation.prolongation
    }

    pub fn restriction(&self) -> &CsrMatrix {
        &self.interpolation.restriction
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn sweeps(&self) -> (usize, usize) {
        (self.pre_sweeps, self.post_sweeps)
    }

    pub fn stats(&self) -> HierarchyStats {
        HierarchyStats {
            n: self.fine.n_rows(),
            n_coarse: self.coarse.n_rows(),
            nnz_fine: self.fine.nnz(),
            nnz_coarse: self.coarse.nnz(),
            theta: self.theta,
            degenerate: self.splitting.is_degenerate(),
        }
    }

    pub fn workspace(&self) -> CycleWorkspace {
        CycleWorkspace {
            residual: vec![0.0; self.fine.n_rows()],
            coarse_rhs: vec![0.0; self.coarse.n_rows()],
            coarse_sol: vec![0.0; self.coarse.n_rows()],
        }
    }

    /// One two-level iteration, updating `u` in place.
    pub fn cycle(&self, u: &mut [f64], f: &[f64], ws: &mut CycleWorkspace) {
        for _ in 0..self.pre_sweeps {
            gauss_seidel(&self.fine, &self.diag, u, f, SweepDirection::Forward);
        }
        self.fine.residual_into(u, f, &mut ws.residual);
        self.interpolation
            .restriction
            .spmv_into(&ws.residual, &mut ws.coarse_rhs);
        self.coarse_solver.solve(&ws.coarse_rhs, &mut ws.coarse_sol);
        let p = &self.interpolation.prolongation;
        for (i, ui) in u.iter_mut().enumerate() {
            for (j, w) in p.row(i) {
                *ui += w * ws.coarse_sol[j];
            }
        }
        for _ in 0..self.post_sweeps {
            gauss_seidel(&self.fine, &self.diag, u, f, SweepDirection::Backward);
        }
    }

    /// Preconditioner application: one cycle on `A z = r` from `z = 0`.
    pub fn apply(&self, r: &[f64], z: &mut [f64], ws: &mut CycleWorkspace) {
        z.iter_mut().for_each(|v| *v = 0.0);
        self.cycle(z, r, ws);
    }
}

/// One iteration of the two-level method, returning the new iterate.
pub fn two_level_iteration(h: &TwoLevelHierarchy, u: &[f64], f: &[f64]) -> Result<Vec<f64>> {
    let n = h.fine.n_rows();
    if u.len() != n || f.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "two-level iteration on {n} unknowns with u {} and f {}",
            u.len(),
            f.len()
        )));
    }
    let mut out = u.to_vec();
    let mut ws = h.workspace();
    h.cycle(&mut out, f, &mut ws);
    Ok(out)
}

/// Builds the two-level hierarchy for threshold `theta`.
pub fn amg_setup(
    a: &CsrMatrix,
    theta: f64,
    pre_sweeps: usize,
    post_sweeps: usize,
) -> Result<TwoLevelHierarchy> {
    let graph = strong_connections(a, theta)?;
    let splitting = cf_split(&graph);
    setup_with_splitting(a, &graph, splitting, theta, pre_sweeps, post_sweeps)
}

/// Builds a hierarchy from a caller-supplied splitting.
pub fn setup_with_splitting(
    a: &CsrMatrix,
    graph: &StrongGraph,
    splitting: CfSplitting,
    theta: f64,
    pre_sweeps: usize,
    post_sweeps: usize,
) -> Result<TwoLevelHierarchy> {
    let diag = diagonal_checked(a)?;
    let interpolation = build_interpolation(a, graph, &splitting)?;
    let coarse = triple_product(&interpolation.restriction, a, &interpolation.prolongation)?;
    let coarse_solver = CoarseSolver::new(&coarse)?;
    Ok(TwoLevelHierarchy {
        fine: a.clone(),
        diag,
        splitting,
        interpolation,
        coarse,
        coarse_solver,
        pre_sweeps,
        post_sweeps,
        theta,
    })
}

/// Dense copy of the coarse operator, for inspection.
pub fn coarse_dense(h: &TwoLevelHierarchy) -> DenseMatrix {
    h.coarse.to_dense()
}
