//! Lax-Oleinik operators on lattices over the reduced two-body problems,
//! fixed-point iteration, and the checks that certify what the iteration
//! produced: domination, eikonal residuals and calibrated rays.
//!
//! Both reductions fix the centre of mass at the origin and leave a single
//! point `q` with Lagrangian `1/2 g |q'|^2 + k |q|^{-2 kappa}`:
//!
//! - collinear two-body: `q = s`, the signed separation `x_1 - x_2`;
//! - planar Kepler: `q = x`, the position of the first body.
//!
//! The fixed-time potential between lattice nodes is estimated with the
//! trajectory optimiser of [`crate::action_potential`] and cached once per
//! `(grid, t)`; iterations only read the cache.

use std::fmt::Write as _;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::action_potential::{default_starts, estimator_grid, free_phi_flat, holder_constant, minimize_flat};
use crate::error::{domain, Error, Result};
use crate::geometry::{Configuration, ProblemSpec};
use crate::optim::{bisect, LbfgsOptions};
use crate::paths::{ball_alpha, ball_beta, DiscretePath};
use crate::system::{Lagrangian, COLLISION_FLOOR};

/// Node count of the discrete paths behind each cached potential value.
pub const DEFAULT_PHI_NODES: usize = 32;
/// Cached potential values are rounded to multiples of `2^-36`. Grid
/// functions with values on the same lattice then add without rounding, so
/// the operator commutes with dyadic constants exactly.
pub const PHI_QUANTUM: f64 = 1.0 / (1u64 << 36) as f64;
const CANDIDATE_CHUNK: usize = 32;
/// Default cap for [`iterate_to_fixed_point`].
pub const DEFAULT_MAX_ITER: usize = 500;

/// Grid tolerance used by the checks: `tol(h) = h^2`.
pub fn grid_tolerance(spacing: f64) -> f64 {
    spacing * spacing
}

fn quantize(v: f64) -> f64 {
    (v / PHI_QUANTUM).round() * PHI_QUANTUM
}

fn norm(q: &[f64]) -> f64 {
    q.iter().map(|c| c * c).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReducedKind {
    CollinearTwoBody,
    PlanarKeplerCenterfix,
}

/// A two-body problem with the centre of mass fixed at the origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReducedProblem {
    pub kind: ReducedKind,
    pub kappa: f64,
    pub masses: [f64; 2],
    /// Kinetic weight `g`.
    pub inertia: f64,
    /// Potential coefficient `k`.
    pub strength: f64,
}

impl ReducedProblem {
    fn checked(kind: ReducedKind, m1: f64, m2: f64, kappa: f64) -> Result<()> {
        if !(m1 > 0.0 && m2 > 0.0 && m1.is_finite() && m2.is_finite()) {
            return domain(format!("masses must be positive, got {m1}, {m2}"));
        }
        if !(kappa > 0.0 && kappa < 1.0) {
            return domain(format!("kappa must lie in (0, 1), got {kappa}"));
        }
        let _ = kind;
        Ok(())
    }

    /// Two bodies on a line; `s = x_1 - x_2`, `g = m1 m2 / M`, `k = m1 m2`.
    pub fn collinear_two_body(m1: f64, m2: f64, kappa: f64) -> Result<Self> {
        Self::checked(ReducedKind::CollinearTwoBody, m1, m2, kappa)?;
        let total = m1 + m2;
        Ok(Self {
            kind: ReducedKind::CollinearTwoBody,
            kappa,
            masses: [m1, m2],
            inertia: m1 * m2 / total,
            strength: m1 * m2,
        })
    }

    /// Two bodies in the plane; `q` is the first body and the second sits
    /// at `-(m1/m2) q`, so `|r_12| = |q| M / m2`.
    pub fn planar_kepler(m1: f64, m2: f64, kappa: f64) -> Result<Self> {
        Self::checked(ReducedKind::PlanarKeplerCenterfix, m1, m2, kappa)?;
        let total = m1 + m2;
        Ok(Self {
            kind: ReducedKind::PlanarKeplerCenterfix,
            kappa,
            masses: [m1, m2],
            inertia: m1 * total / m2,
            strength: m1 * m2 * (total / m2).powf(-2.0 * kappa),
        })
    }

    /// Equal-mass planar problem whose eikonal equation reads
    /// `|grad u|^2 = constant |q|^{-2 kappa}`.
    pub fn planar_with_eikonal_constant(constant: f64, kappa: f64) -> Result<Self> {
        if !(constant > 0.0 && constant.is_finite()) {
            return domain(format!("eikonal constant must be positive, got {constant}"));
        }
        // 2 g k = 4 m^3 2^{-2 kappa} for equal masses m.
        let m = (constant * 2f64.powf(2.0 * kappa) / 4.0).cbrt();
        Self::planar_kepler(m, m, kappa)
    }

    pub fn dim(&self) -> usize {
        match self.kind {
            ReducedKind::CollinearTwoBody => 1,
            ReducedKind::PlanarKeplerCenterfix => 2,
        }
    }

    /// `C = 2 g k`: critical solutions satisfy `|grad u|^2 = C |q|^{-2 kappa}`.
    pub fn eikonal_constant(&self) -> f64 {
        2.0 * self.inertia * self.strength
    }

    /// `phi(q, q') <= eta |q - q'|^{1-k}`: the straight segment has Jacobi
    /// length at most `sqrt(2 g k) 2^k d^{1-k} / (1 - k)`.
    pub fn holder_constant(&self) -> f64 {
        let k = self.kappa;
        self.eikonal_constant().sqrt() * 2f64.powf(k) / (1.0 - k)
    }

    /// The unreduced problem the reduction came from.
    pub fn full_spec(&self) -> ProblemSpec {
        ProblemSpec::new(self.dim(), self.masses.to_vec(), self.kappa).expect("validated at construction")
    }

    /// Full configuration of a reduced point.
    pub fn lift(&self, q: &[f64]) -> Configuration {
        let [m1, m2] = self.masses;
        let total = m1 + m2;
        let coords = match self.kind {
            ReducedKind::CollinearTwoBody => vec![m2 / total * q[0], -m1 / total * q[0]],
            ReducedKind::PlanarKeplerCenterfix => vec![q[0], q[1], -m1 / m2 * q[0], -m1 / m2 * q[1]],
        };
        Configuration::new(self.dim(), coords).expect("dimension matches")
    }

    pub fn lift_path(&self, path: &DiscretePath) -> Result<DiscretePath> {
        DiscretePath::new(
            path.times.clone(),
            path.nodes.iter().map(|c| self.lift(&c.coords)).collect(),
        )
    }

    /// Search radius of the operator at `q`: the largest `d` with
    /// `(g / 2t) d^2 <= eta d^{1-k} + t U(q)`. A minimiser of
    /// `u(y) + phi(q, y, t)` for a dominated `u` lies within it.
    pub fn search_radius(&self, q: &[f64], t: f64) -> f64 {
        let g = self.inertia;
        let eta = self.holder_constant();
        let stay = t * Lagrangian::potential(self, q);
        if !stay.is_finite() {
            return f64::INFINITY;
        }
        let f = |d: f64| g / (2.0 * t) * d * d - eta * d.powf(1.0 - self.kappa) - stay;
        let mut hi = 1.0;
        while f(hi) <= 0.0 {
            hi *= 2.0;
        }
        bisect(f, 0.0, hi, 1e-12 * hi).unwrap_or(hi)
    }

    /// The radius `eta t / m + (eta^2 t^2 / m^2 + 2 alpha R^2 / m + 2 beta t^2 R^{-2k} / m)^{1/2}`
    /// of the full problem, for configurations of size `R`. Far larger than
    /// [`Self::search_radius`]; reported for comparison.
    pub fn proof_search_radius(&self, size: f64, t: f64) -> f64 {
        let spec = self.full_spec();
        let eta = holder_constant(&spec);
        let m = spec.min_mass();
        let (alpha, beta) = (ball_alpha(&spec), ball_beta(&spec));
        let a = eta * t / m;
        a + (a * a + 2.0 * alpha * size * size / m + 2.0 * beta * t * t * size.powf(-2.0 * self.kappa) / m).sqrt()
    }
}

impl Lagrangian for ReducedProblem {
    fn dof(&self) -> usize {
        self.dim()
    }

    fn point_dim(&self) -> usize {
        self.dim()
    }

    fn coordinate_mass(&self, _k: usize) -> f64 {
        self.inertia
    }

    fn min_mass(&self) -> f64 {
        self.inertia
    }

    fn kappa(&self) -> f64 {
        self.kappa
    }

    fn potential(&self, q: &[f64]) -> f64 {
        let r = norm(q);
        if r < COLLISION_FLOOR * (1.0 + r) {
            return f64::INFINITY;
        }
        self.strength * r.powf(-2.0 * self.kappa)
    }

    fn potential_and_gradient(&self, q: &[f64], grad: &mut [f64]) -> f64 {
        let r = norm(q);
        if r < COLLISION_FLOOR * (1.0 + r) {
            return f64::INFINITY;
        }
        let v = self.strength * r.powf(-2.0 * self.kappa);
        let c = -2.0 * self.kappa * v / (r * r);
        grad.iter_mut().zip(q).for_each(|(g, qi)| *g = c * qi);
        v
    }

    fn collision_distance(&self, q: &[f64]) -> f64 {
        norm(q)
    }

    fn segment_clearance(&self, a: &[f64], b: &[f64]) -> f64 {
        let w: Vec<f64> = b.iter().zip(a).map(|(x, y)| x - y).collect();
        let ww: f64 = w.iter().map(|c| c * c).sum();
        let s = if ww > 0.0 {
            (-a.iter().zip(&w).map(|(x, y)| x * y).sum::<f64>() / ww).clamp(0.0, 1.0)
        } else {
            0.0
        };
        a.iter().zip(&w).map(|(x, y)| (x + s * y).powi(2)).sum::<f64>().sqrt()
    }
}

/// Rectangular lattice with spacing `h`. Nodes closer than
/// `exclusion_radius` to the collision point (the origin) are excluded,
/// and so is the origin itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub lower: Vec<f64>,
    pub shape: Vec<usize>,
    pub spacing: f64,
    pub exclusion_radius: f64,
}

impl Grid {
    pub fn new(lower: Vec<f64>, shape: Vec<usize>, spacing: f64, exclusion_radius: f64) -> Result<Self> {
        if lower.is_empty() || lower.len() != shape.len() {
            return domain("grid lower corner and shape disagree");
        }
        if shape.iter().any(|&n| n < 2) {
            return domain("grid needs at least two nodes per axis");
        }
        if !(spacing > 0.0 && spacing.is_finite()) || !(exclusion_radius >= 0.0) {
            return domain(format!("invalid spacing {spacing} or exclusion radius {exclusion_radius}"));
        }
        Ok(Self { lower, shape, spacing, exclusion_radius })
    }

    /// Nodes `lo, lo + h, ..., hi`; `hi - lo` must be a multiple of `h`.
    pub fn line(lo: f64, hi: f64, h: f64) -> Result<Self> {
        let cells = ((hi - lo) / h).round();
        if !(cells >= 1.0) || (lo + cells * h - hi).abs() > 1e-9 * h {
            return domain(format!("[{lo}, {hi}] is not a whole number of cells of width {h}"));
        }
        Self::new(vec![lo], vec![cells as usize + 1], h, 0.0)
    }

    /// `[-w, w]^2` with the disc of radius `exclusion_radius` removed.
    pub fn square(half_width: f64, h: f64, exclusion_radius: f64) -> Result<Self> {
        let cells = (2.0 * half_width / h).round();
        if !(cells >= 1.0) || (cells * h - 2.0 * half_width).abs() > 1e-9 * h {
            return domain(format!("width {} is not a whole number of cells of width {h}", 2.0 * half_width));
        }
        let n = cells as usize + 1;
        Self::new(vec![-half_width; 2], vec![n, n], h, exclusion_radius)
    }

    /// Same box at half the spacing.
    pub fn refined(&self) -> Self {
        Self {
            lower: self.lower.clone(),
            shape: self.shape.iter().map(|n| 2 * n - 1).collect(),
            spacing: self.spacing / 2.0,
            exclusion_radius: self.exclusion_radius,
        }
    }

    pub fn dim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn upper(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.shape)
            .map(|(lo, n)| lo + (n - 1) as f64 * self.spacing)
            .collect()
    }

    /// Row-major: the first axis varies slowest.
    pub fn multi_index(&self, mut i: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim()];
        for c in (0..self.dim()).rev() {
            idx[c] = i % self.shape[c];
            i /= self.shape[c];
        }
        idx
    }

    pub fn index(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.shape).fold(0, |acc, (i, n)| acc * n + i)
    }

    pub fn point(&self, i: usize) -> Vec<f64> {
        self.multi_index(i)
            .iter()
            .zip(&self.lower)
            .map(|(&k, lo)| lo + k as f64 * self.spacing)
            .collect()
    }

    pub fn is_active(&self, i: usize) -> bool {
        let r = norm(&self.point(i));
        r > 0.0 && r >= self.exclusion_radius
    }

    /// Neighbour of `i` one step along `axis` (`dir = +1` or `-1`).
    pub fn step(&self, i: usize, axis: usize, dir: i64) -> Option<usize> {
        let mut idx = self.multi_index(i);
        let k = idx[axis] as i64 + dir;
        if k < 0 || k >= self.shape[axis] as i64 {
            return None;
        }
        idx[axis] = k as usize;
        Some(self.index(&idx))
    }

    /// The closed ball lies inside the box and avoids the excluded disc.
    pub fn contains_ball(&self, center: &[f64], radius: f64) -> bool {
        let slack = 1e-9 * self.spacing;
        let upper = self.upper();
        let inside = center
            .iter()
            .zip(self.lower.iter().zip(&upper))
            .all(|(c, (lo, hi))| c - radius >= lo - slack && c + radius <= hi + slack);
        let clear = norm(center) - radius;
        inside && clear > 0.0 && clear >= self.exclusion_radius - slack
    }

    pub fn dist(&self, i: usize, j: usize) -> f64 {
        norm(&self.point(i).iter().zip(self.point(j)).map(|(a, b)| a - b).collect::<Vec<_>>())
    }

    /// Active node nearest to `p`.
    pub fn nearest(&self, p: &[f64]) -> Option<usize> {
        (0..self.len())
            .filter(|&i| self.is_active(i))
            .map(|i| {
                let d: f64 = self.point(i).iter().zip(p).map(|(a, b)| (a - b).powi(2)).sum();
                (i, d)
            })
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(i, _)| i)
    }

    /// Active node nearest to the centre of the box.
    pub fn center_node(&self) -> usize {
        let c: Vec<f64> = self.lower.iter().zip(self.upper()).map(|(a, b)| 0.5 * (a + b)).collect();
        self.nearest(&c).expect("grid has an active node")
    }
}

/// Values on the active nodes of a grid; excluded nodes hold `NaN`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFunction {
    pub grid: Grid,
    pub values: Vec<f64>,
    pub reference_node: usize,
}

impl GridFunction {
    pub fn new(grid: Grid, values: Vec<f64>, reference_node: usize) -> Result<Self> {
        if values.len() != grid.len() {
            return domain(format!("{} values for a grid of {} nodes", values.len(), grid.len()));
        }
        if reference_node >= grid.len() || !grid.is_active(reference_node) {
            return domain(format!("reference node {reference_node} is not an active node"));
        }
        for (i, v) in values.iter().enumerate() {
            if grid.is_active(i) && !v.is_finite() {
                return domain(format!("value at active node {i} is not finite"));
            }
        }
        Ok(Self { grid, values, reference_node })
    }

    pub fn from_fn(grid: &Grid, mut f: impl FnMut(&[f64]) -> f64) -> Self {
        let values = (0..grid.len())
            .map(|i| if grid.is_active(i) { f(&grid.point(i)) } else { f64::NAN })
            .collect();
        Self { grid: grid.clone(), values, reference_node: grid.center_node() }
    }

    pub fn constant(grid: &Grid, c: f64) -> Self {
        Self::from_fn(grid, |_| c)
    }

    /// The oracle on the reduced coordinates of `problem`.
    pub fn from_oracle(grid: &Grid, problem: &ReducedProblem, oracle: KeplerOracle) -> Result<Self> {
        if oracle.kind() != problem.kind || grid.dim() != problem.dim() {
            return domain(format!("oracle {} does not live on this reduced problem", oracle.name()));
        }
        Ok(Self::from_fn(grid, |q| match problem.kind {
            ReducedKind::CollinearTwoBody => oracle.eval(&problem.lift(q).coords),
            ReducedKind::PlanarKeplerCenterfix => oracle.eval(q),
        }))
    }

    pub fn value(&self, i: usize) -> f64 {
        self.values[i]
    }

    /// Subtracts the value at the reference node and returns it.
    pub fn normalize(&mut self) -> f64 {
        let c = self.values[self.reference_node];
        self.values.iter_mut().for_each(|v| *v -= c);
        c
    }

    pub fn shifted(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v += c);
        out
    }

    /// Sup-norm of the difference over active nodes, restricted to `mask` when given.
    pub fn sup_distance(&self, other: &GridFunction, mask: Option<&[bool]>) -> f64 {
        (0..self.values.len())
            .filter(|&i| self.grid.is_active(i) && mask.map_or(true, |m| m[i]))
            .map(|i| (self.values[i] - other.values[i]).abs())
            .fold(0.0, f64::max)
    }

    /// One line per active node: coordinates then value.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let header: Vec<String> = (0..self.grid.dim()).map(|c| format!("q{c}")).collect();
        let _ = writeln!(out, "{},value", header.join(","));
        for i in 0..self.grid.len() {
            if !self.grid.is_active(i) {
                continue;
            }
            for c in self.grid.point(i) {
                let _ = write!(out, "{c:.16e},");
            }
            let _ = writeln!(out, "{:.16e}", self.values[i]);
        }
        out
    }

    /// Gnuplot input. On a line, two columns `q value`; in the plane, the
    /// ascii `nonuniform matrix` layout (first row: column count then `q0`
    /// values; each later row: `q1` then values), `NaN` at excluded nodes.
    pub fn to_matrix(&self) -> String {
        let mut out = String::new();
        let g = &self.grid;
        if g.dim() == 1 {
            for i in 0..g.len() {
                let _ = writeln!(out, "{:.16e} {:.16e}", g.point(i)[0], self.values[i]);
            }
            return out;
        }
        let (n0, n1) = (g.shape[0], g.shape[1]);
        let _ = write!(out, "{n0}");
        for a in 0..n0 {
            let _ = write!(out, " {:.16e}", g.lower[0] + a as f64 * g.spacing);
        }
        out.push('\n');
        for b in 0..n1 {
            let _ = write!(out, "{:.16e}", g.lower[1] + b as f64 * g.spacing);
            for a in 0..n0 {
                let _ = write!(out, " {:.16e}", self.values[g.index(&[a, b])]);
            }
            out.push('\n');
        }
        out
    }
}

/// Closed-form critical solutions of the Kepler problem (`kappa = 1/2`).
///
/// Collinear oracles take the two body positions `[x, y]` and solve
/// `u_x^2 + u_y^2 = 2 / |x - y|`; planar ones take `[x1, x2]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeplerOracle {
    UPlus,
    UMinus,
    BusemannBPlus,
    RotationInvariant,
    PlanarBusemann,
}

impl KeplerOracle {
    pub const ALL: [KeplerOracle; 5] = [
        Self::UPlus,
        Self::UMinus,
        Self::BusemannBPlus,
        Self::RotationInvariant,
        Self::PlanarBusemann,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::UPlus => "u_plus",
            Self::UMinus => "u_minus",
            Self::BusemannBPlus => "busemann_b_plus",
            Self::RotationInvariant => "rotation_invariant",
            Self::PlanarBusemann => "planar_busemann",
        }
    }

    pub fn kind(self) -> ReducedKind {
        match self {
            Self::UPlus | Self::UMinus | Self::BusemannBPlus => ReducedKind::CollinearTwoBody,
            Self::RotationInvariant | Self::PlanarBusemann => ReducedKind::PlanarKeplerCenterfix,
        }
    }

    pub fn eval(self, p: &[f64]) -> f64 {
        match self {
            Self::UPlus => 2.0 * (p[0] - p[1]).abs().sqrt(),
            Self::UMinus => -2.0 * (p[0] - p[1]).abs().sqrt(),
            Self::BusemannBPlus if p[0] >= p[1] => Self::UMinus.eval(p),
            Self::BusemannBPlus => Self::UPlus.eval(p),
            Self::RotationInvariant => -(p[0] * p[0] + p[1] * p[1]).powf(0.25),
            Self::PlanarBusemann => -(norm(p) + p[0]).max(0.0).sqrt(),
        }
    }

    /// Closed-form gradient; not finite on the kink and collision sets.
    pub fn gradient(self, p: &[f64]) -> Vec<f64> {
        match self {
            Self::UPlus | Self::UMinus => {
                let d = p[0] - p[1];
                let sign = if self == Self::UPlus { 1.0 } else { -1.0 };
                let gx = sign * d.signum() / d.abs().sqrt();
                vec![gx, -gx]
            }
            Self::BusemannBPlus if p[0] >= p[1] => Self::UMinus.gradient(p),
            Self::BusemannBPlus => Self::UPlus.gradient(p),
            Self::RotationInvariant => {
                let r = norm(p);
                let c = -0.5 * r.powf(-1.5);
                vec![c * p[0], c * p[1]]
            }
            Self::PlanarBusemann => {
                let r = norm(p);
                let c = -0.5 / (r + p[0]).sqrt();
                vec![c * (p[0] / r + 1.0), c * p[1] / r]
            }
        }
    }

    /// Reduced points within `collar` of the oracle's non-smooth set.
    pub fn in_kink_collar(self, q: &[f64], collar: f64) -> bool {
        match self {
            Self::UPlus | Self::UMinus | Self::RotationInvariant => norm(q) <= collar,
            Self::BusemannBPlus => q[0].abs() <= collar,
            Self::PlanarBusemann => norm(q) <= collar || (q[0] < collar && q[1].abs() <= collar),
        }
    }
}

impl FromStr for KeplerOracle {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|o| o.name() == s)
            .ok_or_else(|| Error::Domain(format!("unknown oracle '{s}'")))
    }
}

pub fn kepler_oracle(oracle: KeplerOracle, point: &[f64]) -> f64 {
    oracle.eval(point)
}

/// Estimate of `phi(x, y, t)` on a reduced problem, with the minimising
/// discrete path as `(times, flat nodes)`.
pub fn estimate_phi(
    problem: &ReducedProblem,
    x: &[f64],
    y: &[f64],
    t: f64,
    nodes: usize,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    if !(t > 0.0 && t.is_finite()) {
        return domain(format!("step time must be positive, got {t}"));
    }
    let times = estimator_grid(problem, x, y, t, nodes);
    let starts = default_starts(problem, x, y, &times);
    let best = minimize_flat(problem, &times, &starts, &LbfgsOptions::default())?;
    Ok((best.value, times, best.nodes))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Semigroup {
    /// `inf_y u(y) + phi(x, y, t)`.
    Backward,
    /// `sup_y u(y) - phi(x, y, t)`.
    Forward,
}

/// Lax-Oleinik operator of a fixed step `t` on a grid.
///
/// Each active node `x` searches the active nodes `y` with
/// `|x - y| <= max(r(x), r(y))`, `r` the problem's search radius, so the
/// neighbour relation is symmetric. A node is trusted when its search ball
/// stays inside the grid domain.
#[derive(Debug, Clone)]
pub struct LaxOleinik {
    problem: ReducedProblem,
    grid: Grid,
    step: f64,
    nodes: usize,
    radius: Vec<f64>,
    trusted: Vec<bool>,
    neighbors: Vec<Vec<usize>>,
    /// Quantised `phi(x, y, t)` aligned with `neighbors`; empty until built.
    table: Vec<Vec<f64>>,
}

impl LaxOleinik {
    /// Operator with the full potential table computed.
    pub fn new(problem: &ReducedProblem, grid: &Grid, t: f64, nodes: usize) -> Result<Self> {
        let mut op = Self::lazy(problem, grid, t, nodes)?;
        op.build_table()?;
        Ok(op)
    }

    /// Operator whose potential values are computed on demand by
    /// [`Self::phi`]; [`Self::apply`] needs the table.
    pub fn lazy(problem: &ReducedProblem, grid: &Grid, t: f64, nodes: usize) -> Result<Self> {
        if !(t > 0.0 && t.is_finite()) {
            return domain(format!("step time must be positive, got {t}"));
        }
        if grid.dim() != problem.dim() {
            return domain("grid dimension does not match the reduced problem");
        }
        let n = grid.len();
        let radius: Vec<f64> = (0..n)
            .into_par_iter()
            .map(|i| if grid.is_active(i) { problem.search_radius(&grid.point(i), t) } else { 0.0 })
            .collect();
        let trusted: Vec<bool> = (0..n)
            .map(|i| grid.is_active(i) && grid.contains_ball(&grid.point(i), radius[i]))
            .collect();
        let r_max = radius.iter().cloned().fold(0.0, f64::max);
        let reach = (r_max / grid.spacing).floor() as i64;
        let neighbors: Vec<Vec<usize>> = (0..n)
            .into_par_iter()
            .map(|i| {
                if !grid.is_active(i) {
                    return Vec::new();
                }
                let center = grid.multi_index(i);
                let p = grid.point(i);
                let mut out = Vec::new();
                let mut offset = vec![-reach; grid.dim()];
                loop {
                    let idx: Option<Vec<usize>> = center
                        .iter()
                        .zip(&offset)
                        .zip(&grid.shape)
                        .map(|((&c, &o), &s)| {
                            let k = c as i64 + o;
                            (k >= 0 && k < s as i64).then_some(k as usize)
                        })
                        .collect();
                    if let Some(idx) = idx {
                        let j = grid.index(&idx);
                        if grid.is_active(j) {
                            let d: f64 = grid.point(j).iter().zip(&p).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                            if d <= radius[i].max(radius[j]) {
                                out.push(j);
                            }
                        }
                    }
                    let mut c = grid.dim();
                    loop {
                        if c == 0 {
                            out.sort_unstable();
                            return out;
                        }
                        c -= 1;
                        if offset[c] < reach {
                            offset[c] += 1;
                            break;
                        }
                        offset[c] = -reach;
                    }
                }
            })
            .collect();
        Ok(Self {
            problem: problem.clone(),
            grid: grid.clone(),
            step: t,
            nodes,
            radius,
            trusted,
            neighbors,
            table: Vec::new(),
        })
    }

    fn build_table(&mut self) -> Result<()> {
        // One estimate per unordered pair.
        let pairs: Vec<(usize, usize)> = self
            .neighbors
            .iter()
            .enumerate()
            .flat_map(|(i, nb)| nb.iter().filter(move |&&j| j >= i).map(move |&j| (i, j)))
            .collect();
        let values: Vec<f64> = pairs
            .par_iter()
            .map(|&(i, j)| self.compute_phi(i, j))
            .collect::<Result<_>>()?;
        let mut table: Vec<Vec<f64>> = self.neighbors.iter().map(|nb| vec![f64::NAN; nb.len()]).collect();
        for (&(i, j), &v) in pairs.iter().zip(&values) {
            let a = self.neighbors[i].binary_search(&j).expect("symmetric neighbours");
            let b = self.neighbors[j].binary_search(&i).expect("symmetric neighbours");
            table[i][a] = v;
            table[j][b] = v;
        }
        self.table = table;
        Ok(())
    }

    fn compute_phi(&self, i: usize, j: usize) -> Result<f64> {
        let (a, b) = if i <= j { (i, j) } else { (j, i) };
        let (v, _, _) = estimate_phi(&self.problem, &self.grid.point(a), &self.grid.point(b), self.step, self.nodes)?;
        Ok(quantize(v))
    }

    pub fn problem(&self) -> &ReducedProblem {
        &self.problem
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn step_time(&self) -> f64 {
        self.step
    }

    pub fn phi_nodes(&self) -> usize {
        self.nodes
    }

    pub fn trusted(&self) -> &[bool] {
        &self.trusted
    }

    pub fn search_radius(&self, i: usize) -> f64 {
        self.radius[i]
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn has_table(&self) -> bool {
        !self.table.is_empty()
    }

    /// Cached (or freshly computed) `phi(x_i, x_j, t)`; `j` must be a neighbour of `i`.
    pub fn phi(&self, i: usize, j: usize) -> Result<f64> {
        let Ok(a) = self.neighbors[i].binary_search(&j) else {
            return domain(format!("node {j} is outside the search ball of node {i}"));
        };
        if self.has_table() {
            Ok(self.table[i][a])
        } else {
            self.compute_phi(i, j)
        }
    }

    /// Trusted unordered neighbour pairs with their cached values.
    pub fn trusted_pairs(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for (i, nb) in self.neighbors.iter().enumerate() {
            if !self.trusted[i] {
                continue;
            }
            for (a, &j) in nb.iter().enumerate() {
                if j > i && self.trusted[j] {
                    out.push((i, j, self.table.get(i).map_or(f64::NAN, |row| row[a])));
                }
            }
        }
        out
    }

    fn check_input(&self, u: &GridFunction) -> Result<()> {
        if u.grid != self.grid {
            return domain("grid function lives on a different grid");
        }
        if !self.has_table() {
            return Err(Error::Consistency("operator was built without its potential table".into()));
        }
        Ok(())
    }

    /// `T_t u` without normalisation.
    pub fn apply(&self, u: &GridFunction, semigroup: Semigroup) -> Result<GridFunction> {
        self.check_input(u)?;
        let values: Vec<f64> = (0..self.grid.len())
            .into_par_iter()
            .map(|i| {
                if !self.grid.is_active(i) {
                    return f64::NAN;
                }
                let pairs = self.neighbors[i].iter().zip(&self.table[i]);
                match semigroup {
                    Semigroup::Backward => pairs.map(|(&j, &p)| u.values[j] + p).fold(f64::INFINITY, f64::min),
                    Semigroup::Forward => pairs.map(|(&j, &p)| u.values[j] - p).fold(f64::NEG_INFINITY, f64::max),
                }
            })
            .collect();
        Ok(GridFunction { grid: self.grid.clone(), values, reference_node: u.reference_node })
    }

    /// `T_t u` renormalised at the reference node, and the constant removed.
    pub fn step(&self, u: &GridFunction, semigroup: Semigroup) -> Result<(GridFunction, f64)> {
        let mut out = self.apply(u, semigroup)?;
        let c = out.normalize();
        Ok((out, c))
    }

    /// `sup |T_t u - u|` over trusted nodes, without normalisation.
    pub fn fixed_point_defect(&self, u: &GridFunction, semigroup: Semigroup) -> Result<f64> {
        let next = self.apply(u, semigroup)?;
        Ok(next.sup_distance(u, Some(&self.trusted)))
    }

    /// Worst `u(x) - u(y) - phi(x, y, t)` over trusted cached pairs, both orders.
    pub fn step_domination_violation(&self, u: &GridFunction) -> f64 {
        self.trusted_pairs()
            .iter()
            .map(|&(i, j, p)| (u.values[i] - u.values[j]).abs() - p)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// One Lax-Oleinik step for `(problem, t)` on the grid of `u`, building the
/// operator on the fly. Returns the normalised result and the constant removed.
pub fn lax_oleinik_step(problem: &ReducedProblem, u: &GridFunction, t: f64) -> Result<(GridFunction, f64)> {
    LaxOleinik::new(problem, &u.grid, t, DEFAULT_PHI_NODES)?.step(u, Semigroup::Backward)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemigroupReport {
    pub semigroup: Semigroup,
    pub t_step: f64,
    pub spacing: f64,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub phi_nodes: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub iterations: usize,
    pub converged: bool,
    /// Sup over trusted nodes of the normalised change in the last step.
    pub sup_change: f64,
    /// Worst `u(x) - u(y) - phi(x, y, t)` on trusted cached pairs.
    pub dominated_violation: f64,
    /// Constant removed in the last step, per unit time.
    pub drift_c: f64,
    pub reference_node: usize,
    pub trusted_nodes: usize,
    pub history: Vec<f64>,
    pub shifts: Vec<f64>,
}

impl SemigroupReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }
}

/// Repeats normalised steps until the trusted sup change drops below `tol`
/// or `max_iter` steps were taken. Hitting the cap is reported, not an error.
pub fn iterate_to_fixed_point(
    op: &LaxOleinik,
    u0: &GridFunction,
    semigroup: Semigroup,
    tol: f64,
    max_iter: usize,
) -> Result<(GridFunction, SemigroupReport)> {
    if !(tol > 0.0) {
        return domain(format!("tolerance must be positive, got {tol}"));
    }
    let mut u = u0.clone();
    let mut history = Vec::new();
    let mut shifts = Vec::new();
    let mut converged = false;
    let mut sup_change = f64::INFINITY;
    while history.len() < max_iter {
        let (next, shift) = op.step(&u, semigroup)?;
        sup_change = next.sup_distance(&u, Some(op.trusted()));
        history.push(sup_change);
        shifts.push(shift);
        u = next;
        if sup_change < tol {
            converged = true;
            break;
        }
    }
    let report = SemigroupReport {
        semigroup,
        t_step: op.step,
        spacing: op.grid.spacing,
        lower: op.grid.lower.clone(),
        upper: op.grid.upper(),
        phi_nodes: op.nodes,
        tol,
        max_iter,
        iterations: history.len(),
        converged,
        sup_change,
        dominated_violation: op.step_domination_violation(&u),
        drift_c: shifts.last().map_or(0.0, |c| c / op.step),
        reference_node: u.reference_node,
        trusted_nodes: op.trusted.iter().filter(|&&t| t).count(),
        history,
        shifts,
    };
    Ok((u, report))
}

/// `count` random ordered pairs of distinct nodes where `mask` holds.
pub fn sample_pairs(mask: &[bool], count: usize, seed: u64) -> Vec<(usize, usize)> {
    let pool: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
    if pool.len() < 2 {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| loop {
            let a = pool[rng.gen_range(0..pool.len())];
            let b = pool[rng.gen_range(0..pool.len())];
            if a != b {
                break (a, b);
            }
        })
        .collect()
}

/// Worst `u(x) - u(y) - phi(x, y)` over `pairs`, with the free-time
/// potential estimated by trajectory optimisation. Negative means dominated
/// with margin.
pub fn check_domination(
    problem: &ReducedProblem,
    u: &GridFunction,
    pairs: &[(usize, usize)],
    nodes: usize,
) -> Result<f64> {
    let g = &u.grid;
    let excess: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let (phi, _) = free_phi_flat(problem, &g.point(i), &g.point(j), nodes)?;
            Ok(u.values[i] - u.values[j] - phi)
        })
        .collect::<Result<_>>()?;
    Ok(excess.into_iter().fold(f64::NEG_INFINITY, f64::max))
}

/// Finite-difference view of `|grad u|^2` against `C |q|^{-2 kappa}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EikonalField {
    pub inertia: f64,
    pub eikonal_constant: f64,
    /// Central-difference `|grad u|^2`; `NaN` where the stencil leaves the active set.
    pub gradient_sq: Vec<f64>,
    /// Sum over axes of the larger squared one-sided difference.
    pub one_sided_sq: Vec<f64>,
    /// `|q|^{-2 kappa}`, `NaN` at excluded nodes.
    pub weight: Vec<f64>,
}

impl EikonalField {
    /// `(|grad u|^2 - C w) / g`, the residual in the reduced metric.
    pub fn residual(&self) -> Vec<f64> {
        self.residual_with(self.eikonal_constant)
    }

    pub fn residual_with(&self, constant: f64) -> Vec<f64> {
        self.gradient_sq
            .iter()
            .zip(&self.weight)
            .map(|(s, w)| (s - constant * w) / self.inertia)
            .collect()
    }

    /// One-sided residual for the subsolution test.
    pub fn one_sided_residual(&self) -> Vec<f64> {
        self.one_sided_sq
            .iter()
            .zip(&self.weight)
            .map(|(s, w)| (s - self.eikonal_constant * w) / self.inertia)
            .collect()
    }

    /// Least-squares `C` with `|grad u|^2 ~ C w` over `mask`.
    pub fn fit_constant(&self, mask: &[bool]) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..self.weight.len() {
            if mask[i] && self.gradient_sq[i].is_finite() {
                num += self.gradient_sq[i] * self.weight[i];
                den += self.weight[i] * self.weight[i];
            }
        }
        num / den
    }
}

/// Max of `|values|` over the nodes where `mask` holds and the value is finite.
pub fn masked_max_abs(values: &[f64], mask: &[bool]) -> f64 {
    values
        .iter()
        .zip(mask)
        .filter(|(v, &m)| m && v.is_finite())
        .map(|(v, _)| v.abs())
        .fold(0.0, f64::max)
}

pub fn check_eikonal_residual(problem: &ReducedProblem, u: &GridFunction) -> EikonalField {
    let g = &u.grid;
    let h = g.spacing;
    let n = g.len();
    let usable = |j: Option<usize>| j.filter(|&j| g.is_active(j) && u.values[j].is_finite());
    let mut gradient_sq = vec![f64::NAN; n];
    let mut one_sided_sq = vec![f64::NAN; n];
    let mut weight = vec![f64::NAN; n];
    for i in 0..n {
        if !g.is_active(i) {
            continue;
        }
        weight[i] = norm(&g.point(i)).powf(-2.0 * problem.kappa);
        let (mut central, mut one_sided) = (0.0, 0.0);
        let mut central_ok = true;
        let mut one_sided_ok = true;
        for axis in 0..g.dim() {
            let plus = usable(g.step(i, axis, 1)).map(|j| (u.values[j] - u.values[i]) / h);
            let minus = usable(g.step(i, axis, -1)).map(|j| (u.values[i] - u.values[j]) / h);
            match (plus, minus) {
                (Some(p), Some(m)) => {
                    central += (0.5 * (p + m)).powi(2);
                    one_sided += p.powi(2).max(m.powi(2));
                }
                (Some(d), None) | (None, Some(d)) => {
                    central_ok = false;
                    one_sided += d * d;
                }
                (None, None) => {
                    central_ok = false;
                    one_sided_ok = false;
                }
            }
        }
        if central_ok {
            gradient_sq[i] = central;
        }
        if one_sided_ok {
            one_sided_sq[i] = one_sided;
        }
    }
    EikonalField {
        inertia: problem.inertia,
        eikonal_constant: problem.eikonal_constant(),
        gradient_sq,
        one_sided_sq,
        weight,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibratedRay {
    /// Visited grid nodes, starting node first.
    pub nodes: Vec<usize>,
    /// Concatenated minimising sub-paths in reduced coordinates.
    pub path: DiscretePath,
    /// `u(y) + phi(x, y, t) - u(x)` per step.
    pub defects: Vec<f64>,
    pub defect_per_unit_time: f64,
    /// The argmin left the trusted region before `t_max`.
    pub truncated: bool,
    /// `defect_per_unit_time <= tol`.
    pub calibrated: bool,
}

/// Greedy calibrated curve from `x0`: each step moves to the node `y` within
/// the search radius of `x` minimising `u(y) + phi(x, y, t)` and appends the
/// minimising sub-path. Stops early, flagged as truncated, when the argmin is
/// not trusted.
pub fn extract_calibrated_ray(
    op: &LaxOleinik,
    u: &GridFunction,
    x0: usize,
    t_max: f64,
    tol: f64,
) -> Result<CalibratedRay> {
    let grid = op.grid();
    if u.grid != *grid {
        return domain("grid function lives on a different grid");
    }
    if x0 >= grid.len() || !grid.is_active(x0) {
        return domain(format!("start node {x0} is not active"));
    }
    let t = op.step_time();
    let steps = (t_max / t - 1e-9).ceil().max(0.0) as usize;
    let dim = grid.dim();
    let mut nodes = vec![x0];
    let mut defects = Vec::new();
    let mut times = vec![0.0];
    let mut points = vec![Configuration::new(dim, grid.point(x0))?];
    let mut truncated = false;
    let mut x = x0;
    for _ in 0..steps {
        // Visit candidates by increasing lower bound u(y) + (g / 2t) |x - y|^2
        // and stop once it exceeds the best value found.
        let px = grid.point(x);
        let lower = |y: usize| {
            let d2: f64 = grid.point(y).iter().zip(&px).map(|(a, b)| (a - b).powi(2)).sum();
            u.values[y] + op.problem().inertia / (2.0 * t) * d2
        };
        let mut candidates: Vec<(usize, f64)> = op
            .neighbors(x)
            .iter()
            .filter(|&&y| grid.dist(x, y) <= op.search_radius(x))
            .map(|&y| (y, lower(y)))
            .collect();
        candidates.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        let (mut best, mut value) = (usize::MAX, f64::INFINITY);
        for chunk in candidates.chunks(CANDIDATE_CHUNK) {
            if chunk[0].1 > value {
                break;
            }
            let values: Vec<f64> = chunk
                .par_iter()
                .map(|&(y, bound)| if bound > value { Ok(f64::INFINITY) } else { op.phi(x, y).map(|p| u.values[y] + p) })
                .collect::<Result<_>>()?;
            for (&(y, _), &v) in chunk.iter().zip(&values) {
                if v < value || (v == value && y < best) {
                    best = y;
                    value = v;
                }
            }
        }
        if best == usize::MAX {
            return Err(Error::Numerical("no finite Lax-Oleinik candidate".into()));
        }
        if !op.trusted()[best] {
            truncated = true;
            break;
        }
        defects.push(value - u.values[x]);
        let (_, sub_times, sub_nodes) = estimate_phi(op.problem(), &grid.point(x), &grid.point(best), t, op.phi_nodes())?;
        let offset = times[times.len() - 1];
        for (k, &s) in sub_times.iter().enumerate().skip(1) {
            times.push(offset + s);
            points.push(Configuration::new(dim, sub_nodes[k * dim..(k + 1) * dim].to_vec())?);
        }
        nodes.push(best);
        x = best;
    }
    let elapsed = defects.len() as f64 * t;
    let defect_per_unit_time = if elapsed > 0.0 {
        defects.iter().map(|d| d.abs()).sum::<f64>() / elapsed
    } else {
        f64::INFINITY
    };
    let path = if times.len() > 1 {
        DiscretePath::new(times, points)?
    } else {
        DiscretePath::new(vec![0.0, t], vec![points[0].clone(), points[0].clone()])?
    };
    Ok(CalibratedRay {
        nodes,
        path,
        defects,
        defect_per_unit_time,
        truncated,
        calibrated: defect_per_unit_time <= tol,
    })
}
