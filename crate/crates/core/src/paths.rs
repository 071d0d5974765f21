//! Discrete paths and their action, the reparametrisation map and the explicit
//! bounded-action connectors.
//!
//! A connector leg is `z(tau) = x + psi(tau) (p - x)` on `tau in [0, 1]` where
//! `psi` is a [`ReparamMap`] that slows down near every parameter at which
//! two bodies of the straight segment collide. Its action is evaluated on the
//! exact curve: the kinetic part from the closed-form energy of `psi`, the
//! potential part by a substitution that cancels the `|tau - b|^{-2k/(1+k)}`
//! singularity at each collision parameter.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::geometry::{
    assign_clusters, cluster_partition, dist, Configuration, ProblemSpec, BALL_REL_TOL, DEDUP_TOL,
};
use crate::optim::bisect;
use crate::quadrature::{gl5, graded_gl5, GL5_NODES, GL5_WEIGHTS, GRADING_LEVELS, GRADING_RATIO};
use crate::system::Lagrangian;

/// A path sampled at strictly increasing times, linear between nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscretePath {
    pub times: Vec<f64>,
    pub nodes: Vec<Configuration>,
}

impl DiscretePath {
    pub fn new(times: Vec<f64>, nodes: Vec<Configuration>) -> Result<Self> {
        if times.len() != nodes.len() {
            return domain(format!("{} times for {} nodes", times.len(), nodes.len()));
        }
        if times.len() < 2 {
            return domain("a path needs at least two nodes");
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) || times.iter().any(|t| !t.is_finite()) {
            return domain("path times must be finite and strictly increasing");
        }
        let (dim, n) = (nodes[0].dim, nodes[0].n_bodies());
        if nodes.iter().any(|c| c.dim != dim || c.n_bodies() != n) {
            return domain("path nodes have inconsistent shapes");
        }
        Ok(Self { times, nodes })
    }

    /// Uniform sampling of the straight segment from `x` to `y` over `[0, horizon]`.
    pub fn straight(x: &Configuration, y: &Configuration, horizon: f64, segments: usize) -> Result<Self> {
        let k = segments.max(1);
        let times = (0..=k).map(|i| horizon * i as f64 / k as f64).collect();
        let nodes = (0..=k).map(|i| x.lerp(y, i as f64 / k as f64)).collect();
        Self::new(times, nodes)
    }

    pub(crate) fn from_flat(times: Vec<f64>, dim: usize, flat: &[f64]) -> Result<Self> {
        let dof = flat.len() / times.len();
        let nodes = flat
            .chunks_exact(dof)
            .map(|c| Configuration {
                dim,
                coords: c.to_vec(),
            })
            .collect();
        Self::new(times, nodes)
    }

    pub fn flat(&self) -> Vec<f64> {
        self.nodes.iter().flat_map(|c| c.coords.iter().copied()).collect()
    }

    pub fn duration(&self) -> f64 {
        self.times[self.times.len() - 1] - self.times[0]
    }

    pub fn start(&self) -> &Configuration {
        &self.nodes[0]
    }

    pub fn end(&self) -> &Configuration {
        &self.nodes[self.nodes.len() - 1]
    }

    /// Linear interpolation at time `t`, clamped to the time range.
    pub fn position(&self, t: f64) -> Configuration {
        let k = self.times.partition_point(|&s| s <= t);
        if k == 0 {
            return self.nodes[0].clone();
        }
        if k == self.times.len() {
            return self.end().clone();
        }
        let (t0, t1) = (self.times[k - 1], self.times[k]);
        self.nodes[k - 1].lerp(&self.nodes[k], (t - t0) / (t1 - t0))
    }

    /// `sigma(s) = gamma(t_0 + s T / S)` on `[0, S]` where `T` is the current duration.
    pub fn rescaled(&self, horizon: f64) -> Result<Self> {
        if !(horizon > 0.0) {
            return domain(format!("horizon must be positive, got {horizon}"));
        }
        let (t0, d) = (self.times[0], self.duration());
        let times = self.times.iter().map(|t| (t - t0) * horizon / d).collect();
        Self::new(times, self.nodes.clone())
    }

    /// CSV with header `t,body0_x0,...` and 17 significant digits per value.
    pub fn to_csv(&self) -> String {
        let dim = self.nodes[0].dim;
        let n = self.nodes[0].n_bodies();
        let mut out = String::from("t");
        for i in 0..n {
            for c in 0..dim {
                let _ = write!(out, ",body{i}_x{c}");
            }
        }
        out.push('\n');
        for (t, x) in self.times.iter().zip(&self.nodes) {
            let _ = write!(out, "{t:.16e}");
            for v in &x.coords {
                let _ = write!(out, ",{v:.16e}");
            }
            out.push('\n');
        }
        out
    }
}

/// Kinetic and potential contributions to an action.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionParts {
    pub kinetic: f64,
    pub potential: f64,
}

impl ActionParts {
    pub fn total(&self) -> f64 {
        self.kinetic + self.potential
    }
}

/// Segment `k` of `segments` passes below the collision floor. A boundary
/// node that is itself a collision is imposed data, so the first and last
/// segments are exempt when they start (end) there.
fn segment_blocked<L: Lagrangian + ?Sized>(sys: &L, q: &[f64], k: usize, segments: usize) -> bool {
    let dof = sys.dof();
    let (a, b) = (&q[k * dof..(k + 1) * dof], &q[(k + 1) * dof..(k + 2) * dof]);
    let at_collision = |z: &[f64]| {
        sys.collision_distance(z) < crate::system::COLLISION_FLOOR * (1.0 + sys.max_norm(z))
    };
    if (k == 0 && at_collision(a)) || (k + 1 == segments && at_collision(b)) {
        return false;
    }
    sys.segment_collides(a, b)
}

/// Action of the piecewise-linear path with flat nodes `q` (row-major, one row
/// per time). Kinetic part exact, potential by 5-point Gauss-Legendre per
/// segment, `+inf` for a segment that passes below the collision floor
/// (a boundary node that is itself a collision is exempt).
pub fn flat_action_parts<L: Lagrangian + ?Sized>(sys: &L, times: &[f64], q: &[f64]) -> ActionParts {
    let dof = sys.dof();
    let mut z = vec![0.0; dof];
    let mut kinetic = 0.0;
    let mut potential = 0.0;
    for k in 0..times.len() - 1 {
        let dt = times[k + 1] - times[k];
        let (a, b) = (&q[k * dof..(k + 1) * dof], &q[(k + 1) * dof..(k + 2) * dof]);
        if segment_blocked(sys, q, k, times.len() - 1) {
            potential = f64::INFINITY;
        }
        kinetic += (0..dof)
            .map(|c| sys.coordinate_mass(c) * (b[c] - a[c]).powi(2))
            .sum::<f64>()
            / (2.0 * dt);
        let mut seg = 0.0;
        for (s, w) in GL5_NODES.iter().zip(GL5_WEIGHTS) {
            for c in 0..dof {
                z[c] = a[c] + s * (b[c] - a[c]);
            }
            seg += w * sys.potential(&z);
        }
        potential += dt * seg;
    }
    ActionParts { kinetic, potential }
}

/// Value and Euclidean gradient (with respect to every flat node coordinate,
/// endpoints included) of [`flat_action_parts`]' total.
pub fn flat_action_and_gradient<L: Lagrangian + ?Sized>(
    sys: &L,
    times: &[f64],
    q: &[f64],
    grad: &mut [f64],
) -> f64 {
    let dof = sys.dof();
    let mut z = vec![0.0; dof];
    let mut gz = vec![0.0; dof];
    grad.iter_mut().for_each(|g| *g = 0.0);
    let mut total = 0.0;
    for k in 0..times.len() - 1 {
        let dt = times[k + 1] - times[k];
        let (ia, ib) = (k * dof, (k + 1) * dof);
        if segment_blocked(sys, q, k, times.len() - 1) {
            return f64::INFINITY;
        }
        for c in 0..dof {
            let m = sys.coordinate_mass(c);
            let d = q[ib + c] - q[ia + c];
            total += m * d * d / (2.0 * dt);
            grad[ia + c] -= m * d / dt;
            grad[ib + c] += m * d / dt;
        }
        for (s, w) in GL5_NODES.iter().zip(GL5_WEIGHTS) {
            for c in 0..dof {
                z[c] = q[ia + c] + s * (q[ib + c] - q[ia + c]);
            }
            let u = sys.potential_and_gradient(&z, &mut gz);
            if !u.is_finite() {
                return f64::INFINITY;
            }
            total += dt * w * u;
            for c in 0..dof {
                grad[ia + c] += dt * w * (1.0 - s) * gz[c];
                grad[ib + c] += dt * w * s * gz[c];
            }
        }
    }
    total
}

pub fn action_parts(spec: &ProblemSpec, path: &DiscretePath) -> ActionParts {
    flat_action_parts(spec, &path.times, &path.flat())
}

/// Action of the piecewise-linear path; `+inf` if a segment passes below
/// the collision floor.
pub fn action(spec: &ProblemSpec, path: &DiscretePath) -> f64 {
    action_parts(spec, path).total()
}

/// Smallest slack of `||gamma(t) - gamma(s)||_mass <= (2 A)^{1/2} |t - s|^{1/2}`
/// over node pairs, where `A` is the path's action. Negative means violated.
pub fn holder_margin(spec: &ProblemSpec, path: &DiscretePath) -> f64 {
    let c = (2.0 * action(spec, path)).sqrt();
    let k = path.times.len();
    let mut margin = f64::INFINITY;
    for i in 0..k {
        for j in i + 1..k {
            let d = path.nodes[j].sub(&path.nodes[i]).mass_norm(&spec.masses);
            margin = margin.min(c * (path.times[j] - path.times[i]).sqrt() - d);
        }
    }
    margin
}

/// Increasing homeomorphism `F` of `[0, 1]` with `F' = f_{b,c} = max_i g_c(. - b_i)`,
/// `g_c(x) = c |x|^{-k/(1+k)}`, `F(0) = 0`, `F(1) = 1` and `F(b_i) = a_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReparamMap {
    pub kappa: f64,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: f64,
}

/// Positions `b` for given `(kappa, a, c)` such that `F(0) = 0`.
fn reparam_layout(kappa: f64, a: &[f64], c: f64) -> Vec<f64> {
    let m = a.len();
    let ck = c * (1.0 + kappa);
    // Piece k covers F-values [(a_{k-1}+a_k)/2, (a_k+a_{k+1})/2]; 0 lies on piece k0.
    let k0 = (0..m - 1).find(|&k| 0.5 * (a[k] + a[k + 1]) >= 0.0).unwrap_or(m - 1);
    let mut b = vec![0.0; m];
    b[k0] = a[k0].signum() * (a[k0].abs() / ck).powf(1.0 + kappa);
    for i in k0..m - 1 {
        b[i + 1] = b[i] + 2f64.powf(-kappa) * ((a[i + 1] - a[i]) / ck).powf(1.0 + kappa);
    }
    for i in (0..k0).rev() {
        b[i] = b[i + 1] - 2f64.powf(-kappa) * ((a[i + 1] - a[i]) / ck).powf(1.0 + kappa);
    }
    b
}

impl ReparamMap {
    fn with_c(kappa: f64, a: Vec<f64>, c: f64) -> Self {
        let b = reparam_layout(kappa, &a, c);
        Self { kappa, a, b, c }
    }

    /// Antiderivative of `g_c`: `c (1+k) sgn(x) |x|^{1/(1+k)}`.
    pub fn g_antiderivative(&self, x: f64) -> f64 {
        self.c * (1.0 + self.kappa) * x.signum() * x.abs().powf(1.0 / (1.0 + self.kappa))
    }

    /// Index of the nearest `b_i` (the piece on which `F = a_i + G(t - b_i)`).
    pub fn piece(&self, t: f64) -> usize {
        let (mut lo, mut hi) = (0, self.b.len() - 1);
        while lo < hi {
            let mid = (lo + hi) / 2;
            if t > 0.5 * (self.b[mid] + self.b[mid + 1]) {
                lo = mid + 1;
            } else {
                hi = mid;
            }
        }
        lo
    }

    /// `(k, F(t) - a_k)` with `k` the piece of `t`.
    pub fn offset(&self, t: f64) -> (usize, f64) {
        let k = self.piece(t);
        (k, self.g_antiderivative(t - self.b[k]))
    }

    pub fn eval(&self, t: f64) -> f64 {
        let (k, d) = self.offset(t);
        self.a[k] + d
    }

    /// `F'(t) = g_c(t - nearest b)`; infinite at the `b_i`.
    pub fn derivative(&self, t: f64) -> f64 {
        let k = self.piece(t);
        self.c * (t - self.b[k]).abs().powf(-self.kappa / (1.0 + self.kappa))
    }

    /// Piece boundaries clipped to `[lo, hi]`: `(k, left, right)` for every
    /// non-empty intersection.
    fn pieces_within(&self, lo: f64, hi: f64) -> Vec<(usize, f64, f64)> {
        let m = self.b.len();
        (0..m)
            .filter_map(|k| {
                let l = if k == 0 { f64::NEG_INFINITY } else { 0.5 * (self.b[k - 1] + self.b[k]) };
                let r = if k + 1 == m { f64::INFINITY } else { 0.5 * (self.b[k] + self.b[k + 1]) };
                let (l, r) = (l.max(lo), r.min(hi));
                (r > l).then_some((k, l, r))
            })
            .collect()
    }

    /// `int_lo^hi F'(t)^2 dt`, in closed form.
    pub fn energy_between(&self, lo: f64, hi: f64) -> f64 {
        let k = self.kappa;
        let e = (1.0 - k) / (1.0 + k);
        let anti = |u: f64| self.c * self.c * (1.0 + k) / (1.0 - k) * u.signum() * u.abs().powf(e);
        self.pieces_within(lo, hi)
            .into_iter()
            .map(|(p, l, r)| anti(r - self.b[p]) - anti(l - self.b[p]))
            .sum()
    }

    /// `int_0^1 F'(t)^2 dt`.
    pub fn energy(&self) -> f64 {
        self.energy_between(0.0, 1.0)
    }

    pub fn a_min(&self) -> f64 {
        self.a.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()))
    }

    /// `(4 + 2 a_min)(m + 1)(1 + k)/(1 - k)`, the bound on [`Self::energy`].
    pub fn energy_bound(&self) -> f64 {
        let k = self.kappa;
        (4.0 + 2.0 * self.a_min()) * (self.a.len() as f64 + 1.0) * (1.0 + k) / (1.0 - k)
    }

    /// `1/(2m)`, the constant in `|F(t) - a_i| >= |t - b_i|^{1/(1+k)} / (2m)`.
    pub fn separation_constant(&self) -> f64 {
        1.0 / (2.0 * self.a.len() as f64)
    }
}

/// Sorts, merges values within `DEDUP_TOL` (keeping the first) and returns the
/// representatives.
fn dedup_sorted(values: &mut Vec<f64>) {
    values.sort_by(f64::total_cmp);
    values.dedup_by(|later, kept| (*later - *kept).abs() <= DEDUP_TOL);
}

/// Solves `F(1) = 1` for `c` by bisection on `[1/(2m(1+k)), 2 + a_min]`.
pub fn build_reparam(kappa: f64, a: &[f64]) -> Result<ReparamMap> {
    if !(kappa > 0.0 && kappa < 1.0) {
        return domain(format!("kappa must lie in (0, 1), got {kappa}"));
    }
    if a.is_empty() || a.iter().any(|v| !v.is_finite()) {
        return domain("reparametrisation needs at least one finite target value");
    }
    if a.windows(2).any(|w| w[1] < w[0]) {
        return domain("target values must be sorted");
    }
    let mut a = a.to_vec();
    dedup_sorted(&mut a);
    let m = a.len();
    let a_min = a.iter().fold(f64::INFINITY, |s, v| s.min(v.abs()));
    let lo = 1.0 / (2.0 * m as f64 * (1.0 + kappa));
    let hi = 2.0 + a_min;
    let delta = |c: f64| ReparamMap::with_c(kappa, a.clone(), c).eval(1.0) - 1.0;
    let c = bisect(delta, lo, hi, 1e-15 * hi).map_err(|e| match e {
        Error::Bracket(msg) => Error::Numerical(format!("reparametrisation constant: {msg}")),
        other => other,
    })?;
    Ok(ReparamMap::with_c(kappa, a, c))
}

/// Pair geometry of a straight segment `x -> p`: `r_ij(psi) = u + psi v`,
/// `|r_ij|^2 = perp2 + (psi - t)^2 v2`.
#[derive(Debug, Clone)]
struct PairGeometry {
    mm: f64,
    perp2: f64,
    v2: f64,
    /// `None` when `v = 0` (constant distance `sqrt(perp2)`).
    t: Option<f64>,
}

/// One reparametrised straight leg `z(tau) = start + psi(tau) (end - start)`.
#[derive(Debug, Clone)]
struct Leg {
    start: Vec<f64>,
    end: Vec<f64>,
    map: Option<ReparamMap>,
    pairs: Vec<PairGeometry>,
}

/// Clip applied to collision parameters before they enter the reparametrisation.
const T_CLIP: f64 = 0.5 - 1e-9;

impl Leg {
    fn new(spec: &ProblemSpec, start: &Configuration, end: &Configuration) -> Result<Self> {
        let d = spec.dim;
        let n = spec.n_bodies;
        let mut pairs = Vec::new();
        let mut targets = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                let u: Vec<f64> = (0..d).map(|c| start.body(i)[c] - start.body(j)[c]).collect();
                let v: Vec<f64> = (0..d)
                    .map(|c| end.body(i)[c] - end.body(j)[c] - u[c])
                    .collect();
                let v2: f64 = v.iter().map(|c| c * c).sum();
                let u2: f64 = u.iter().map(|c| c * c).sum();
                let mm = spec.masses[i] * spec.masses[j];
                if v2 <= 1e-28 * u2.max(f64::MIN_POSITIVE) {
                    pairs.push(PairGeometry { mm, perp2: u2, v2: 0.0, t: None });
                    continue;
                }
                let t = -u.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>() / v2;
                let perp2 = u.iter().zip(&v).map(|(a, b)| (a + t * b).powi(2)).sum();
                pairs.push(PairGeometry { mm, perp2, v2, t: Some(t) });
                targets.push(t.clamp(-T_CLIP, T_CLIP));
            }
        }
        let map = if targets.is_empty() {
            None
        } else {
            dedup_sorted(&mut targets);
            Some(build_reparam(spec.kappa, &targets)?)
        };
        Ok(Self {
            start: start.coords.clone(),
            end: end.coords.clone(),
            map,
            pairs,
        })
    }

    fn psi(&self, tau: f64) -> f64 {
        if tau <= 0.0 {
            0.0
        } else if tau >= 1.0 {
            1.0
        } else {
            self.map.as_ref().map_or(tau, |m| m.eval(tau))
        }
    }

    fn position(&self, tau: f64) -> Vec<f64> {
        let s = self.psi(tau);
        if s == 1.0 {
            return self.end.clone();
        }
        self.start
            .iter()
            .zip(&self.end)
            .map(|(a, b)| a + s * (b - a))
            .collect()
    }

    /// `int_0^1 psi'^2`.
    fn speed_energy(&self) -> f64 {
        self.map.as_ref().map_or(1.0, |m| m.energy())
    }

    /// Potential along the exact leg as a function of `psi - a_k` on piece `k`.
    fn potential_at(&self, kappa: f64, a_k: f64, offset: f64) -> f64 {
        self.pairs
            .iter()
            .map(|p| {
                let r2 = match p.t {
                    Some(t) => p.perp2 + ((a_k - t) + offset).powi(2) * p.v2,
                    None => p.perp2,
                };
                p.mm * r2.powf(-kappa)
            })
            .sum()
    }

    /// `int_0^1 U(z(tau)) dtau` on the exact curve.
    fn potential_integral(&self, kappa: f64) -> f64 {
        let Some(map) = &self.map else {
            // No pair changes its separation along the leg.
            return self.potential_at(kappa, 0.0, 0.0);
        };
        // On piece k, tau = b_k + sgn(s)|s|^q with q = (1+k)/(1-k):
        // psi - a_k = c(1+k) sgn(s)|s|^{1/(1-k)} and dtau = q |s|^{q-1} ds.
        let q = (1.0 + kappa) / (1.0 - kappa);
        let e = 1.0 / (1.0 - kappa);
        let ck = map.c * (1.0 + kappa);
        let mut total = 0.0;
        for (k, l, r) in map.pieces_within(0.0, 1.0) {
            let bk = map.b[k];
            let mut parts = vec![(l, r)];
            if l < bk && bk < r {
                parts = vec![(l, bk), (bk, r)];
            }
            for (pl, pr) in parts {
                // Orient so that `near` is the end closest to b_k.
                let (near, far) = if (pl - bk).abs() <= (pr - bk).abs() { (pl, pr) } else { (pr, pl) };
                let sgn = if pl + pr >= 2.0 * bk { 1.0 } else { -1.0 };
                let s_near = (near - bk).abs().powf(1.0 / q);
                let s_far = (far - bk).abs().powf(1.0 / q);
                let width = s_far - s_near;
                if width <= 0.0 {
                    continue;
                }
                total += width
                    * graded_gl5(GRADING_LEVELS, 2, |w| {
                        let s = s_near + w * width;
                        let offset = sgn * ck * s.powf(e);
                        self.potential_at(kappa, map.a[k], offset) * q * s.powf(q - 1.0)
                    });
            }
        }
        total
    }

    /// Leg parameters at which the sampled path is refined: uniform cells plus
    /// geometric ladders on both sides of every `b_i` inside `(0, 1)`. The
    /// `b_i` themselves are excluded.
    fn sample_parameters(&self) -> Vec<f64> {
        const BASE: usize = 16;
        let mut out: Vec<f64> = (0..=BASE).map(|i| i as f64 / BASE as f64).collect();
        if let Some(map) = &self.map {
            for &b in &map.b {
                for l in 0..=GRADING_LEVELS {
                    let h = GRADING_RATIO.powi(l as i32) / BASE as f64;
                    for t in [b - h, b + h] {
                        if t > 0.0 && t < 1.0 {
                            out.push(t);
                        }
                    }
                }
            }
            out.retain(|t| map.b.iter().all(|b| (t - b).abs() > 1e-14) || *t == 0.0 || *t == 1.0);
        }
        out.sort_by(f64::total_cmp);
        out.dedup_by(|a, b| (*a - *b).abs() <= 1e-15);
        out
    }
}

/// The two-leg connector `x -> p -> y` over `[0, horizon]` inside a ball.
#[derive(Debug, Clone)]
pub struct Connector {
    spec: ProblemSpec,
    horizon: f64,
    intermediate: Configuration,
    legs: [Leg; 2],
}

impl Connector {
    /// Builds the connector for `x, y` inside `B(center, radius)`, with
    /// `p_i = center + 6 (i - 1) radius e_1`.
    pub fn new(
        spec: &ProblemSpec,
        x: &Configuration,
        y: &Configuration,
        horizon: f64,
        center: &[f64],
        radius: f64,
    ) -> Result<Self> {
        Self::build(spec, x, y, horizon, center, radius, true)
    }

    pub(crate) fn build(
        spec: &ProblemSpec,
        x: &Configuration,
        y: &Configuration,
        horizon: f64,
        center: &[f64],
        radius: f64,
        check_ball: bool,
    ) -> Result<Self> {
        spec.check(x)?;
        spec.check(y)?;
        if !(horizon > 0.0 && horizon.is_finite()) {
            return domain(format!("horizon must be positive, got {horizon}"));
        }
        if !(radius > 0.0 && radius.is_finite()) {
            return domain(format!("radius must be positive, got {radius}"));
        }
        if center.len() != spec.dim {
            return domain("center has the wrong dimension");
        }
        let tol = radius * (1.0 + BALL_REL_TOL);
        for (name, c) in [("x", x), ("y", y)].into_iter().filter(|_| check_ball) {
            if let Some(i) = (0..spec.n_bodies).find(|&i| dist(c.body(i), center) > tol) {
                return domain(format!("body {i} of {name} lies outside B(center, {radius})"));
            }
        }
        let mut p = Configuration::zeros(spec.n_bodies, spec.dim);
        for i in 0..spec.n_bodies {
            let b = p.body_mut(i);
            b.copy_from_slice(center);
            b[0] += 6.0 * i as f64 * radius;
        }
        let legs = [Leg::new(spec, x, &p)?, Leg::new(spec, y, &p)?];
        Ok(Self {
            spec: spec.clone(),
            horizon,
            intermediate: p,
            legs,
        })
    }

    pub fn intermediate(&self) -> &Configuration {
        &self.intermediate
    }

    /// Reparametrisation of leg 0 (`x -> p`) or leg 1 (`y -> p`).
    pub fn reparam(&self, leg: usize) -> Option<&ReparamMap> {
        self.legs[leg].map.as_ref()
    }

    /// Exact position at time `t in [0, horizon]`.
    pub fn position(&self, t: f64) -> Configuration {
        let half = 0.5 * self.horizon;
        let coords = if t <= half {
            self.legs[0].position(t / half)
        } else {
            self.legs[1].position((self.horizon - t) / half)
        };
        Configuration {
            dim: self.spec.dim,
            coords,
        }
    }

    /// Exact action of the connector, split into kinetic and potential parts.
    pub fn action_parts(&self) -> ActionParts {
        let half = 0.5 * self.horizon;
        let m = &self.spec.masses;
        let mut kinetic = 0.0;
        let mut potential = 0.0;
        for leg in &self.legs {
            let disp = Configuration {
                dim: self.spec.dim,
                coords: leg.end.iter().zip(&leg.start).map(|(a, b)| a - b).collect(),
            };
            kinetic += 0.5 * disp.moment_of_inertia(m) * leg.speed_energy() / half;
            potential += half * leg.potential_integral(self.spec.kappa);
        }
        ActionParts { kinetic, potential }
    }

    /// Sample times in `[0, horizon]`, refined around every collision parameter.
    pub fn sample_times(&self) -> Vec<f64> {
        let half = 0.5 * self.horizon;
        let mut times: Vec<f64> = self.legs[0].sample_parameters().iter().map(|t| t * half).collect();
        let mut second: Vec<f64> = self.legs[1]
            .sample_parameters()
            .iter()
            .filter(|&&t| t < 1.0)
            .map(|t| self.horizon - t * half)
            .collect();
        second.reverse();
        times.extend(second);
        times
    }

    pub fn sample(&self) -> Result<DiscretePath> {
        let times = self.sample_times();
        let nodes = times.iter().map(|&t| self.position(t)).collect();
        DiscretePath::new(times, nodes)
    }
}

/// Which construction a [`BoundCertificate`] refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    /// `alpha T^{-1} R^2 + beta T R^{-2k}` for bodies in a ball of radius `R`.
    Ball,
    /// `alpha_1 T^{-1} eps^2 + beta_1 T eps^{-2k}` for `eps > ||x - y||`.
    Clustered,
}

/// Per-cluster bookkeeping of the clustered connector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterBound {
    pub bodies: Vec<usize>,
    pub center: Vec<f64>,
    pub kinetic: f64,
    pub kinetic_bound: f64,
    pub potential: f64,
    pub potential_bound: f64,
}

/// Computed action against the proven bound, with every constant echoed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCertificate {
    pub kind: BoundKind,
    pub action_computed: f64,
    pub bound_value: f64,
    pub alpha_used: f64,
    pub beta_used: f64,
    /// `action_computed <= bound_value`.
    pub satisfied: bool,
    pub kappa: f64,
    pub n_bodies: usize,
    pub total_mass: f64,
    pub horizon: f64,
    /// `R` for [`BoundKind::Ball`], `eps` for [`BoundKind::Clustered`].
    pub scale: f64,
    pub kinetic: f64,
    pub potential: f64,
    /// `alpha T^{-1} R^2`, or the sum of per-cluster kinetic bounds.
    pub kinetic_bound: f64,
    /// `beta T R^{-2k}`, or the sum of per-cluster and inter-cluster potential bounds.
    pub potential_bound: f64,
    /// Radius of the ball every node must stay in, and whether it did.
    pub containment_radius: f64,
    pub contained: bool,
    /// Cluster size `R(eps)`; clustered only.
    pub cluster_size: Option<f64>,
    pub clusters: Vec<ClusterBound>,
    /// Inter-cluster potential `W_0` and its bound; clustered only.
    pub inter_cluster: Option<(f64, f64)>,
}

impl BoundCertificate {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("certificate serialises")
    }
}

/// `alpha = 640 (1+k)/(1-k) M N^4`.
pub fn ball_alpha(spec: &ProblemSpec) -> f64 {
    let k = spec.kappa;
    640.0 * (1.0 + k) / (1.0 - k) * spec.total_mass() * (spec.n_bodies as f64).powi(4)
}

/// `beta = 2 (1+k)/(1-k) N^{4k+2} M^2`.
pub fn ball_beta(spec: &ProblemSpec) -> f64 {
    let k = spec.kappa;
    let n = spec.n_bodies as f64;
    2.0 * (1.0 + k) / (1.0 - k) * n.powf(4.0 * k + 2.0) * spec.total_mass().powi(2)
}

fn max_distance_from(path: &DiscretePath, center: &[f64]) -> f64 {
    path.nodes
        .iter()
        .flat_map(|c| c.bodies().map(|b| dist(b, center)).collect::<Vec<_>>())
        .fold(0.0, f64::max)
}

/// Explicit connector from `x` to `y` in time `horizon` for configurations
/// inside `B(center, radius)`, certified against `alpha T^{-1} R^2 + beta T R^{-2k}`.
pub fn connect(
    spec: &ProblemSpec,
    x: &Configuration,
    y: &Configuration,
    horizon: f64,
    center: &[f64],
    radius: f64,
) -> Result<(DiscretePath, BoundCertificate)> {
    let conn = Connector::new(spec, x, y, horizon, center, radius)?;
    let path = conn.sample()?;
    let parts = conn.action_parts();
    let (alpha, beta) = (ball_alpha(spec), ball_beta(spec));
    let kinetic_bound = alpha * radius * radius / horizon;
    let potential_bound = beta * horizon * radius.powf(-2.0 * spec.kappa);
    let containment_radius = 6.0 * spec.n_bodies as f64 * radius;
    let contained = max_distance_from(&path, center) <= containment_radius * (1.0 + BALL_REL_TOL);
    let action_computed = parts.total();
    let bound_value = kinetic_bound + potential_bound;
    Ok((
        path,
        BoundCertificate {
            kind: BoundKind::Ball,
            action_computed,
            bound_value,
            alpha_used: alpha,
            beta_used: beta,
            satisfied: action_computed <= bound_value,
            kappa: spec.kappa,
            n_bodies: spec.n_bodies,
            total_mass: spec.total_mass(),
            horizon,
            scale: radius,
            kinetic: parts.kinetic,
            potential: parts.potential,
            kinetic_bound,
            potential_bound,
            containment_radius,
            contained,
            cluster_size: None,
            clusters: Vec::new(),
            inter_cluster: None,
        },
    ))
}

/// `(alpha_1, beta_1)` of the clustered bound, assembled from the per-cluster
/// constants with `R(eps) < (48 N)^N eps`.
pub fn clustered_constants(spec: &ProblemSpec) -> (f64, f64) {
    let k = spec.kappa;
    let n = spec.n_bodies as f64;
    let m = spec.total_mass();
    let ratio = (1.0 + k) / (1.0 - k);
    let alpha1 = 1e6 * ratio * m * n.powi(6) * (48.0 * n).powf(2.0 * n);
    let beta1 = 2.0 * ratio * n.powf(2.0 * k + 2.0) * m * m * 12f64.powf(-2.0 * k)
        + n * n * m * m * (24.0 * n).powf(-2.0 * k);
    (alpha1, beta1)
}

/// `mu = alpha_1 + beta_1`, so that `phi(x, x, T) <= mu T^{(1-k)/(1+k)}`.
pub fn phi_xx_constant(spec: &ProblemSpec) -> f64 {
    let (a, b) = clustered_constants(spec);
    a + b
}

/// Default `eps = max(||x - y|| (1 + 1e-9), 1e-8 (1 + ||x||))`.
pub fn default_epsilon(x: &Configuration, y: &Configuration) -> f64 {
    (x.sub(y).max_norm() * (1.0 + 1e-9)).max(1e-8 * (1.0 + x.max_norm()))
}

/// Clustered connector with the default `eps`.
pub fn connect_clustered(
    spec: &ProblemSpec,
    x: &Configuration,
    y: &Configuration,
    horizon: f64,
) -> Result<(DiscretePath, BoundCertificate)> {
    connect_clustered_with_epsilon(spec, x, y, horizon, default_epsilon(x, y))
}

/// Connector for arbitrary `x, y`: cluster the bodies of `x` at scale `eps`
/// (`lambda = 24 N`), run [`Connector`] inside each doubled cluster ball and
/// certify against `alpha_1 T^{-1} eps^2 + beta_1 T eps^{-2k}`.
pub fn connect_clustered_with_epsilon(
    spec: &ProblemSpec,
    x: &Configuration,
    y: &Configuration,
    horizon: f64,
    epsilon: f64,
) -> Result<(DiscretePath, BoundCertificate)> {
    spec.check(x)?;
    spec.check(y)?;
    if !(epsilon > x.sub(y).max_norm()) || !epsilon.is_finite() {
        return domain(format!("epsilon {epsilon} must exceed ||x - y||"));
    }
    let n = spec.n_bodies;
    let k = spec.kappa;
    let lambda = 24.0 * n as f64;
    let partition = cluster_partition(&x.points(), lambda, epsilon)?;
    let size = partition.size;
    let groups = assign_clusters(x, y, &partition)?;
    let clusters: Vec<(Vec<usize>, Vec<f64>)> = groups
        .into_iter()
        .zip(partition.center_points.iter().cloned())
        .filter(|(g, _)| !g.is_empty())
        .collect();
    let connectors: Vec<Connector> = clusters
        .par_iter()
        .map(|(bodies, center)| {
            let sub = spec.subsystem(bodies);
            Connector::new(&sub, &x.select(bodies), &y.select(bodies), horizon, center, 2.0 * size)
        })
        .collect::<Result<_>>()?;

    let mut times: Vec<f64> = connectors.iter().flat_map(|c| c.sample_times()).collect();
    times.sort_by(f64::total_cmp);
    times.dedup_by(|a, b| (*a - *b).abs() <= 1e-15 * horizon);
    let last = times.len() - 1;
    times[0] = 0.0;
    times[last] = horizon;
    let assemble = |t: f64| {
        let mut full = Configuration::zeros(n, spec.dim);
        for ((bodies, _), conn) in clusters.iter().zip(&connectors) {
            let part = conn.position(t);
            for (local, &i) in bodies.iter().enumerate() {
                full.body_mut(i).copy_from_slice(part.body(local));
            }
        }
        full
    };
    let mut nodes: Vec<Configuration> = times.iter().map(|&t| assemble(t)).collect();
    nodes[0] = x.clone();
    nodes[last] = y.clone();
    let path = DiscretePath::new(times.clone(), nodes)?;

    // Inter-cluster potential W_0: pairs stay at least 44 N R(eps) apart, so
    // the integrand is bounded and composite Gauss-Legendre on the refined
    // grid suffices.
    let mut owner = vec![0usize; n];
    for (j, (bodies, _)) in clusters.iter().enumerate() {
        for &i in bodies {
            owner[i] = j;
        }
    }
    let inter = |t: f64| {
        let z = assemble(t);
        let mut u = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                if owner[i] != owner[j] {
                    u += spec.masses[i] * spec.masses[j] * dist(z.body(i), z.body(j)).powf(-2.0 * k);
                }
            }
        }
        u
    };
    let w0: f64 = times.windows(2).map(|w| gl5(w[0], w[1], inter)).sum();

    let ratio = (1.0 + k) / (1.0 - k);
    let mut cluster_bounds = Vec::with_capacity(clusters.len());
    let (mut kinetic, mut potential) = (0.0, w0);
    let mut max_reach: f64 = 0.0;
    for ((bodies, center), conn) in clusters.iter().zip(&connectors) {
        let parts = conn.action_parts();
        let nj = bodies.len() as f64;
        let mj: f64 = bodies.iter().map(|&i| spec.masses[i]).sum();
        kinetic += parts.kinetic;
        potential += parts.potential;
        for node in &path.nodes {
            for &i in bodies {
                max_reach = max_reach.max(dist(node.body(i), center) / size);
            }
        }
        cluster_bounds.push(ClusterBound {
            bodies: bodies.clone(),
            center: center.clone(),
            kinetic: parts.kinetic,
            kinetic_bound: 1e6 * ratio * mj * nj.powi(6) * size * size / horizon,
            potential: parts.potential,
            potential_bound: 2.0 * ratio * nj.powf(2.0 * k + 2.0) * mj * mj * 12f64.powf(-2.0 * k)
                * size.powf(-2.0 * k)
                * horizon,
        });
    }
    let m = spec.total_mass();
    let nf = n as f64;
    let w0_bound = nf * nf * m * m * (24.0 * nf).powf(-2.0 * k) * size.powf(-2.0 * k) * horizon;
    let (alpha1, beta1) = clustered_constants(spec);
    let action_computed = kinetic + potential;
    let bound_value = alpha1 * epsilon * epsilon / horizon + beta1 * horizon * epsilon.powf(-2.0 * k);
    let containment_radius = 12.0 * nf;
    Ok((
        path,
        BoundCertificate {
            kind: BoundKind::Clustered,
            action_computed,
            bound_value,
            alpha_used: alpha1,
            beta_used: beta1,
            satisfied: action_computed <= bound_value,
            kappa: k,
            n_bodies: n,
            total_mass: m,
            horizon,
            scale: epsilon,
            kinetic,
            potential,
            kinetic_bound: cluster_bounds.iter().map(|c| c.kinetic_bound).sum(),
            potential_bound: cluster_bounds.iter().map(|c| c.potential_bound).sum::<f64>() + w0_bound,
            // Measured in units of R(eps) around each body's own cluster center.
            containment_radius,
            contained: max_reach <= containment_radius * (1.0 + BALL_REL_TOL),
            cluster_size: Some(size),
            clusters: cluster_bounds,
            inter_cluster: Some((w0, w0_bound)),
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics;

    fn cfg(dim: usize, c: &[f64]) -> Configuration {
        Configuration::new(dim, c.to_vec()).unwrap()
    }

    /// Adaptive Simpson, used as an independent oracle for integrals of `F'`.
    fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
        fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
            let m = 0.5 * (a + b);
            let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
            let (flm, frm) = (f(lm), f(rm));
            let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
            let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
            if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
                return left + right + (left + right - whole) / 15.0;
            }
            rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
                + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
        }
        let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
        rec(f, a, b, fa, fm, fb, (b - a) / 6.0 * (fa + 4.0 * fm + fb), tol, 40)
    }

    #[test]
    fn stationary_path_action() {
        let s = ProblemSpec::unit_masses(3, 2, 0.5).unwrap();
        let x = cfg(2, &[0.0, 0.0, 1.0, 0.0, 0.0, 2.0]);
        let p = DiscretePath::new(vec![0.0, 0.7, 3.0], vec![x.clone(), x.clone(), x.clone()]).unwrap();
        let u = dynamics::potential(&s, &x);
        assert!((action(&s, &p) - 3.0 * u).abs() < 1e-13);
    }

    #[test]
    fn straight_through_collision_is_infinite() {
        let s = ProblemSpec::unit_masses(2, 1, 0.5).unwrap();
        let p = DiscretePath::straight(&cfg(1, &[-1.0, 1.0]), &cfg(1, &[1.0, -1.0]), 1.0, 2).unwrap();
        assert_eq!(action(&s, &p), f64::INFINITY);
    }

    #[test]
    fn path_validation_and_csv() {
        let x = cfg(1, &[0.0, 1.0]);
        assert!(DiscretePath::new(vec![0.0, 0.0], vec![x.clone(), x.clone()]).is_err());
        assert!(DiscretePath::new(vec![0.0], vec![x.clone()]).is_err());
        let p = DiscretePath::new(vec![0.0, 0.5], vec![x.clone(), x.clone()]).unwrap();
        let csv = p.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "t,body0_x0,body1_x0");
        let row: Vec<f64> = lines.nth(1).unwrap().split(',').map(|v| v.parse().unwrap()).collect();
        assert_eq!(row, vec![0.5, 0.0, 1.0]);
    }

    #[test]
    fn reparam_single_zero_is_odd() {
        for &k in &[0.3, 0.5, 0.7] {
            let f = build_reparam(k, &[0.0]).unwrap();
            assert_eq!(f.b, vec![0.0]);
            assert_eq!(f.eval(0.0), 0.0);
            assert!((f.eval(1.0) - 1.0).abs() < 1e-12);
            for &t in &[0.1, 0.3, 0.77] {
                assert!((f.eval(t) + f.eval(-t)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn reparam_single_target_against_quadrature() {
        let f = build_reparam(0.5, &[0.4]).unwrap();
        let b = f.b[0];
        assert!(b > 0.0 && b < 1.0);
        assert!((f.eval(b) - 0.4).abs() < 1e-15);
        let deriv = |t: f64| f.derivative(t);
        // Integrate F' around the singularity at b with the substitution t = b -+ u^3.
        // g_c(u^3) 3u^2 = 3 c u vanishes at u = 0.
        let sub = |u: f64, dir: f64| if u == 0.0 { 0.0 } else { deriv(b + dir * u * u * u) * 3.0 * u * u };
        let left = adaptive_simpson(&|u| sub(u, -1.0), 0.0, b.cbrt(), 1e-12);
        let right = adaptive_simpson(&|u| sub(u, 1.0), 0.0, (1.0 - b).cbrt(), 1e-12);
        assert!((left - 0.4).abs() < 1e-9, "{left}");
        assert!((left + right - 1.0).abs() < 1e-9);
    }

    #[test]
    fn reparam_three_targets_bounds() {
        let f = build_reparam(0.7, &[-0.3, 0.1, 0.45]).unwrap();
        assert!((f.eval(1.0) - 1.0).abs() < 1e-12);
        assert_eq!(f.eval(0.0), 0.0);
        for (a, b) in f.a.iter().zip(&f.b) {
            assert!((f.eval(*b) - a).abs() < 1e-14);
        }
        let c = f.separation_constant();
        for g in 0..=4096 {
            let t = g as f64 / 4096.0;
            for (a, b) in f.a.iter().zip(&f.b) {
                assert!((f.eval(t) - a).abs() >= c * (t - b).abs().powf(1.0 / 1.7) - 1e-9);
            }
        }
        assert!(f.energy() <= f.energy_bound());
        assert!(f.energy() > 1.0);
    }

    #[test]
    fn reparam_energy_matches_simpson() {
        let f = build_reparam(0.3, &[-0.2, 0.05]).unwrap();
        let mut breaks = vec![0.0, 1.0];
        breaks.extend(f.b.iter().filter(|b| **b > 0.0 && **b < 1.0));
        breaks.sort_by(f64::total_cmp);
        let q = 1.3 / 0.7;
        let mut oracle = 0.0;
        for w in breaks.windows(2) {
            // Singular ends handled by t = end -+ u^q (same exponent cancellation).
            let mid = 0.5 * (w[0] + w[1]);
            for (anchor, other) in [(w[0], mid), (w[1], mid)] {
                let dir = (other - anchor).signum();
                let h = (other - anchor).abs().powf(1.0 / q);
                oracle += adaptive_simpson(
                    &|u: f64| {
                        if u == 0.0 {
                            // F'^2 q u^{q-1} -> c^2 q when anchor is a b_i
                            return if f.b.contains(&anchor) { f.c * f.c * q } else { 0.0 };
                        }
                        let t = anchor + dir * u.powf(q);
                        f.derivative(t).powi(2) * q * u.powf(q - 1.0)
                    },
                    0.0,
                    h,
                    1e-13,
                );
            }
        }
        assert!((f.energy() - oracle).abs() < 1e-8 * oracle, "{} vs {oracle}", f.energy());
    }

    #[test]
    fn reparam_rejects_bad_input() {
        assert!(build_reparam(0.5, &[]).is_err());
        assert!(build_reparam(1.0, &[0.0]).is_err());
        assert!(build_reparam(0.5, &[0.2, 0.1]).is_err());
        let f = build_reparam(0.5, &[0.1, 0.1 + 1e-13]).unwrap();
        assert_eq!(f.a.len(), 1);
    }

    #[test]
    fn connector_from_intermediate_is_stationary() {
        // x = y = p lies outside B(center, R) for N >= 2, so the ball check is skipped.
        let s = ProblemSpec::unit_masses(3, 2, 0.5).unwrap();
        let probe = Connector::new(&s, &cfg(2, &[0.0; 6]), &cfg(2, &[0.0; 6]), 1.0, &[0.0, 0.0], 1.0).unwrap();
        let p = probe.intermediate().clone();
        assert_eq!(p, cfg(2, &[0.0, 0.0, 6.0, 0.0, 12.0, 0.0]));
        let horizon = 2.0;
        let conn = Connector::build(&s, &p, &p, horizon, &[0.0, 0.0], 1.0, false).unwrap();
        let parts = conn.action_parts();
        assert_eq!(parts.kinetic, 0.0);
        let u = dynamics::potential(&s, &p);
        assert!((parts.potential - horizon * u).abs() < 1e-12 * u);
        let bound = ball_alpha(&s) / horizon + ball_beta(&s) * horizon;
        assert!(parts.total() <= bound);
    }

    #[test]
    fn connector_exact_action_matches_sampled_for_planar_case() {
        let s = ProblemSpec::unit_masses(3, 2, 0.5).unwrap();
        let x = cfg(2, &[0.1, 0.2, -0.3, 0.4, 0.5, -0.6]);
        let y = cfg(2, &[-0.2, 0.1, 0.6, 0.0, 0.0, -0.7]);
        let conn = Connector::new(&s, &x, &y, 2.0, &[0.0, 0.0], 1.0).unwrap();
        let exact = conn.action_parts();
        // Dense refinement of the sampled path converges to the exact action.
        let mut times = conn.sample_times();
        for _ in 0..4 {
            let mut finer = Vec::with_capacity(2 * times.len());
            for w in times.windows(2) {
                finer.push(w[0]);
                finer.push(0.5 * (w[0] + w[1]));
            }
            finer.push(*times.last().unwrap());
            times = finer;
        }
        let nodes = times.iter().map(|&t| conn.position(t)).collect();
        let p = DiscretePath::new(times, nodes).unwrap();
        let pl = action_parts(&s, &p);
        assert!((pl.potential - exact.potential).abs() < 1e-4 * exact.potential);
        assert!(pl.kinetic <= exact.kinetic * (1.0 + 1e-12));
        assert!((pl.kinetic - exact.kinetic).abs() < 2e-2 * exact.kinetic);
    }

    #[test]
    fn connect_rejects_outside_ball() {
        let s = ProblemSpec::unit_masses(2, 1, 0.5).unwrap();
        let x = cfg(1, &[0.0, 2.0]);
        assert!(connect(&s, &x, &x, 1.0, &[0.0], 1.0).is_err());
    }
}
