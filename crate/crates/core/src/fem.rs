//! Linear finite elements for `-div(mu grad u) = f` on `(-1, 1)^2` with
//! Dirichlet data on the whole boundary.
//!
//! The mesh is an `N x N` grid of squares, each split along its
//! bottom-left to top-right diagonal. Unknowns are the `(N-1)^2` interior
//! nodes, numbered row by row from the bottom-left corner. Boundary values
//! are eliminated by lifting with the nodal interpolant of the exact
//! solution.
//!
//! The diffusion coefficient is piecewise constant on the tiles of one of
//! four patterns; tile edges lie on `x, y in {-1, -0.5, 0, 0.5, 1}` so they
//! always coincide with element edges when `N >= 4` is a power of two.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::sparse::{CooMatrix, CsrMatrix};
use crate::{Error, Result};

/// Tile layout of the diffusion coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PatternKind {
    /// (a) two vertical strides; left half is white.
    #[serde(rename = "a")]
    TwoStrides,
    /// (b) 2x2 checkerboard; top-left and bottom-right are white.
    #[serde(rename = "b")]
    Checkerboard2,
    /// (c) four vertical strides, white first.
    #[serde(rename = "c")]
    FourStrides,
    /// (d) 4x4 checkerboard.
    #[serde(rename = "d")]
    Checkerboard4,
}

impl PatternKind {
    pub const ALL: [PatternKind; 4] = [
        PatternKind::TwoStrides,
        PatternKind::Checkerboard2,
        PatternKind::FourStrides,
        PatternKind::Checkerboard4,
    ];

    pub fn letter(self) -> char {
        match self {
            PatternKind::TwoStrides => 'a',
            PatternKind::Checkerboard2 => 'b',
            PatternKind::FourStrides => 'c',
            PatternKind::Checkerboard4 => 'd',
        }
    }

    pub fn code(self) -> u8 {
        self.letter() as u8 - b'a'
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    fn tile_width(self) -> f64 {
        match self {
            PatternKind::TwoStrides | PatternKind::Checkerboard2 => 1.0,
            PatternKind::FourStrides | PatternKind::Checkerboard4 => 0.5,
        }
    }

    fn varies_in_y(self) -> bool {
        matches!(self, PatternKind::Checkerboard2 | PatternKind::Checkerboard4)
    }

    /// Exact solution the experiments pair with this pattern.
    pub fn default_solution(self) -> ExactSolution {
        match self {
            PatternKind::TwoStrides | PatternKind::Checkerboard2 => ExactSolution::CosPi,
            PatternKind::FourStrides | PatternKind::Checkerboard4 => ExactSolution::Cos2Pi,
        }
    }

    /// Whether `(x, y)` lies in the white region. Fails on interior tile edges.
    pub fn is_white(self, x: f64, y: f64) -> Result<bool> {
        let w = self.tile_width();
        let tiles = (2.0 / w) as i64;
        let index = |c: f64| -> Option<i64> {
            let t = (c + 1.0) / w;
            let r = t.round();
            if (t - r).abs() < 1e-12 && r > 0.0 && (r as i64) < tiles {
                return None;
            }
            Some((t.floor() as i64).clamp(0, tiles - 1))
        };
        let ix = index(x).ok_or(Error::OnInterface { x, y })?;
        let white = if self.varies_in_y() {
            let iy = index(y).ok_or(Error::OnInterface { x, y })?;
            (ix + iy) % 2 == 1
        } else {
            match self {
                PatternKind::TwoStrides => ix == 0,
                _ => ix % 2 == 0,
            }
        };
        Ok(white)
    }
}

impl fmt::Display for PatternKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

impl FromStr for PatternKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "a" => Ok(PatternKind::TwoStrides),
            "b" => Ok(PatternKind::Checkerboard2),
            "c" => Ok(PatternKind::FourStrides),
            "d" => Ok(PatternKind::Checkerboard4),
            _ => Err(Error::InvalidArgument(format!("unknown pattern '{s}'"))),
        }
    }
}

/// Exponent(s) of the coefficient: `Single(e)` gives `mu = 1` on gray and
/// `10^e` on white; `Pair(e1, e2)` gives `10^e1` on white and `10^e2` on gray.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Exponents {
    Single(f64),
    Pair(f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiffusionPattern {
    pub kind: PatternKind,
    pub exponents: Exponents,
}

impl DiffusionPattern {
    pub fn single(kind: PatternKind, epsilon: f64) -> Self {
        Self {
            kind,
            exponents: Exponents::Single(epsilon),
        }
    }

    pub fn pair(kind: PatternKind, eps_white: f64, eps_gray: f64) -> Self {
        Self {
            kind,
            exponents: Exponents::Pair(eps_white, eps_gray),
        }
    }

    /// Coefficient value at `(x, y)`; `(x, y)` must not sit on a tile edge.
    pub fn mu(&self, x: f64, y: f64) -> Result<f64> {
        let white = self.kind.is_white(x, y)?;
        Ok(match (self.exponents, white) {
            (Exponents::Single(e), true) => 10f64.powf(e),
            (Exponents::Single(_), false) => 1.0,
            (Exponents::Pair(e1, _), true) => 10f64.powf(e1),
            (Exponents::Pair(_, e2), false) => 10f64.powf(e2),
        })
    }
}

/// Free-function form of [`DiffusionPattern::mu`].
pub fn mu_eval(pattern: &DiffusionPattern, x: f64, y: f64) -> Result<f64> {
    pattern.mu(x, y)
}

/// Manufactured solution `cos(k x) cos(k y)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExactSolution {
    #[serde(rename = "cospi")]
    CosPi,
    #[serde(rename = "cos2pi")]
    Cos2Pi,
}

impl ExactSolution {
    fn wavenumber(self) -> f64 {
        match self {
            ExactSolution::CosPi => PI,
            ExactSolution::Cos2Pi => 2.0 * PI,
        }
    }

    pub fn value(self, x: f64, y: f64) -> f64 {
        let k = self.wavenumber();
        (k * x).cos() * (k * y).cos()
    }

    /// `-mu * laplacian(u)` for constant `mu`.
    pub fn forcing(self, mu: f64, x: f64, y: f64) -> f64 {
        let k = self.wavenumber();
        2.0 * k * k * mu * self.value(x, y)
    }
}

/// Model problem on an `n x n` cell grid of `(-1, 1)^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    /// Cells per side; the nominal mesh size is `h = 1 / n`.
    pub n: usize,
    pub pattern: DiffusionPattern,
    pub solution: ExactSolution,
}

impl ProblemSpec {
    /// Problem with the exact solution paired to the pattern kind.
    pub fn new(n: usize, pattern: DiffusionPattern) -> Result<Self> {
        let spec = Self {
            n,
            pattern,
            solution: pattern.kind.default_solution(),
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Problem with `n = 2^k` cells per side.
    pub fn with_level(k: u32, pattern: DiffusionPattern) -> Result<Self> {
        Self::new(1usize << k, pattern)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 || !self.n.is_power_of_two() {
            return Err(Error::InvalidMesh(format!(
                "cells per side must be a power of two >= 2, got {}",
                self.n
            )));
        }
        if self.pattern.kind.tile_width() < 2.0 / self.n as f64 {
            return Err(Error::InvalidMesh(format!(
                "pattern {} needs at least {} cells per side",
                self.pattern.kind,
                (2.0 / self.pattern.kind.tile_width()) as usize
            )));
        }
        Ok(())
    }

    pub fn h(&self) -> f64 {
        1.0 / self.n as f64
    }

    /// `-log2(h)`, the network's mesh feature.
    pub fn neg_log2_h(&self) -> f64 {
        (self.n as f64).log2()
    }

    pub fn n_unknowns(&self) -> usize {
        (self.n - 1) * (self.n - 1)
    }

    fn coord(&self, i: usize) -> f64 {
        -1.0 + 2.0 * i as f64 / self.n as f64
    }

    fn interior_index(&self, ix: usize, iy: usize) -> Option<usize> {
        if ix == 0 || iy == 0 || ix == self.n || iy == self.n {
            None
        } else {
            Some((iy - 1) * (self.n - 1) + (ix - 1))
        }
    }

    /// Exact solution sampled at the interior nodes.
    pub fn exact_interior_values(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_unknowns());
        for iy in 1..self.n {
            for ix in 1..self.n {
                out.push(self.solution.value(self.coord(ix), self.coord(iy)));
            }
        }
        out
    }

    fn triangles(&self) -> impl Iterator<Item = [(usize, usize); 3]> + '_ {
        let n = self.n;
        (0..n).flat_map(move |cy| {
            (0..n).flat_map(move |cx| {
                let bl = (cx, cy);
                let br = (cx + 1, cy);
                let tr = (cx + 1, cy + 1);
                let tl = (cx, cy + 1);
                [[bl, br, tr], [bl, tr, tl]]
            })
        })
    }
}

/// Assembled stiffness matrix and load vector.
#[derive(Debug, Clone)]
pub struct LinearSystem {
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
}

// Degree-2 rule on the reference triangle: barycentric points, equal weights.
const QUAD: [[f64; 3]; 3] = [
    [2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0],
    [1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0],
    [1.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0],
];

struct Element {
    xy: [(f64, f64); 3],
    area: f64,
    stiffness: [[f64; 3]; 3],
}

impl Element {
    fn new(xy: [(f64, f64); 3], mu: f64) -> Self {
        let [(x0, y0), (x1, y1), (x2, y2)] = xy;
        let det = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0);
        let area = 0.5 * det.abs();
        let b = [y1 - y2, y2 - y0, y0 - y1];
        let c = [x2 - x1, x0 - x2, x1 - x0];
        let mut stiffness = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                stiffness[i][j] = mu * (b[i] * b[j] + c[i] * c[j]) / (4.0 * area);
            }
        }
        Self {
            xy,
            area,
            stiffness,
        }
    }

    fn barycenter(xy: &[(f64, f64); 3]) -> (f64, f64) {
        (
            (xy[0].0 + xy[1].0 + xy[2].0) / 3.0,
            (xy[0].1 + xy[1].1 + xy[2].1) / 3.0,
        )
    }

    fn point(&self, lambda: &[f64; 3]) -> (f64, f64) {
        (
            lambda[0] * self.xy[0].0 + lambda[1] * self.xy[1].0 + lambda[2] * self.xy[2].0,
            lambda[0] * self.xy[0].1 + lambda[1] * self.xy[1].1 + lambda[2] * self.xy[2].1,
        )
    }
}

/// Assembles `A_h` and `f_h` for the interior unknowns.
pub fn assemble(spec: &ProblemSpec) -> Result<LinearSystem> {
    spec.validate()?;
    let n_int = spec.n_unknowns();
    let mut coo = CooMatrix::with_capacity(n_int, n_int, 12 * n_int);
    let mut rhs = vec![0.0; n_int];

    for tri in spec.triangles() {
        let xy = tri.map(|(ix, iy)| (spec.coord(ix), spec.coord(iy)));
        let (bx, by) = Element::barycenter(&xy);
        let mu = spec.pattern.mu(bx, by)?;
        let el = Element::new(xy, mu);
        let ids = tri.map(|(ix, iy)| spec.interior_index(ix, iy));

        let mut load = [0.0; 3];
        for lambda in &QUAD {
            let (qx, qy) = el.point(lambda);
            let f = spec.solution.forcing(mu, qx, qy);
            for a in 0..3 {
                load[a] += el.area / 3.0 * f * lambda[a];
            }
        }

        for a in 0..3 {
            let Some(i) = ids[a] else { continue };
            rhs[i] += load[a];
            for b in 0..3 {
                match ids[b] {
                    Some(j) => coo.push(i, j, el.stiffness[a][b])?,
                    None => {
                        let (gx, gy) = xy[b];
                        rhs[i] -= el.stiffness[a][b] * spec.solution.value(gx, gy);
                    }
                }
            }
        }
    }
    Ok(LinearSystem {
        matrix: coo.to_csr(),
        rhs,
    })
}

/// L2 norm of `u - u_h`, where `u_h` is the P1 function with the given
/// interior values and the exact solution's values on the boundary.
pub fn l2_error(spec: &ProblemSpec, u_h: &[f64]) -> Result<f64> {
    spec.validate()?;
    if u_h.len() != spec.n_unknowns() {
        return Err(Error::DimensionMismatch(format!(
            "u_h has {} entries, mesh has {} interior nodes",
            u_h.len(),
            spec.n_unknowns()
        )));
    }
    let mut total = 0.0;
    for tri in spec.triangles() {
        let xy = tri.map(|(ix, iy)| (spec.coord(ix), spec.coord(iy)));
        let el = Element::new(xy, 1.0);
        let nodal = [0, 1, 2].map(|a| {
            let (ix, iy) = tri[a];
            match spec.interior_index(ix, iy) {
                Some(i) => u_h[i],
                None => spec.solution.value(xy[a].0, xy[a].1),
            }
        });
        for lambda in &QUAD {
            let (qx, qy) = el.point(lambda);
            let uh: f64 = (0..3).map(|a| lambda[a] * nodal[a]).sum();
            let e = spec.solution.value(qx, qy) - uh;
            total += el.area / 3.0 * e * e;
        }
    }
    Ok(total.sqrt())
}
