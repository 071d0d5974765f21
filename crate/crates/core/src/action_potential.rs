//! Estimation of the fixed-time action potential `phi(x, y, T)` by direct
//! minimisation of the discrete action, of the free-time potential
//! `phi(x, y)` by an outer search over `T`, and certification of the bounds
//! and identities these satisfy.
//!
//! Estimates are upper approximations of the true potential: every value is
//! the action of an explicit discrete path. Lower bounds are certified
//! separately and never inferred from the estimate.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::geometry::{Configuration, ProblemSpec};
use crate::optim::{golden_section, lbfgs, LbfgsOptions};
use crate::paths::{
    ball_alpha, ball_beta, clustered_constants, flat_action_and_gradient, flat_action_parts, Connector,
    DiscretePath,
};
use crate::system::{Lagrangian, COLLISION_FLOOR};

/// Relative accuracy the estimator is trusted to.
pub const ESTIMATOR_REL_TOL: f64 = 1e-2;
pub const DEFAULT_NODES: usize = 64;
pub const MIN_NODES: usize = 8;
/// Free-time bracket `T in [1e-3, 1e3] ||x - y||^{1+k}`, searched in `log T`.
pub const FREE_TIME_BRACKET: (f64, f64) = (1e-3, 1e3);
const FREE_TIME_LOG_TOL: f64 = 1e-3;
const BENT_STARTS: u64 = 2;
const BENT_SEED: u64 = 0x5eed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhiEstimate {
    pub value: f64,
    pub horizon: f64,
    pub path: DiscretePath,
    pub lower_bound: f64,
    pub upper_bound: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// `(m / 2T) ||x - y||^2`.
pub fn lower_bound(spec: &ProblemSpec, x: &Configuration, y: &Configuration, horizon: f64) -> f64 {
    spec.min_mass() / (2.0 * horizon) * x.sub(y).max_norm().powi(2)
}

/// Smallest ball containing every body of `x` and `y`, centered on the
/// midpoint of their bounding box.
pub fn bounding_ball(x: &Configuration, y: &Configuration) -> (Vec<f64>, f64) {
    let d = x.dim;
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for b in x.bodies().chain(y.bodies()) {
        for c in 0..d {
            lo[c] = lo[c].min(b[c]);
            hi[c] = hi[c].max(b[c]);
        }
    }
    let center: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| 0.5 * (a + b)).collect();
    let r = x
        .bodies()
        .chain(y.bodies())
        .map(|b| crate::geometry::dist(b, &center))
        .fold(0.0, f64::max);
    (center, r)
}

/// Best certified upper bound on `phi(x, y, T)`: the ball bound on the
/// bounding ball, or the clustered bound at its optimal admissible `eps`.
pub fn upper_bound(spec: &ProblemSpec, x: &Configuration, y: &Configuration, horizon: f64) -> f64 {
    let k = spec.kappa;
    let (_, r) = bounding_ball(x, y);
    let ball = if r > 0.0 {
        ball_alpha(spec) * r * r / horizon + ball_beta(spec) * horizon * r.powf(-2.0 * k)
    } else {
        f64::INFINITY
    };
    let (a1, b1) = clustered_constants(spec);
    let eps_opt = (k * b1 * horizon * horizon / a1).powf(1.0 / (2.0 + 2.0 * k));
    let eps = eps_opt.max(x.sub(y).max_norm());
    let clustered = a1 * eps * eps / horizon + b1 * horizon * eps.powf(-2.0 * k);
    ball.min(clustered)
}

/// `eta = alpha_1 + beta_1`, so that `phi(x, y) <= eta ||x - y||^{1-k}`.
pub fn holder_constant(spec: &ProblemSpec) -> f64 {
    let (a, b) = clustered_constants(spec);
    a + b
}

/// `k(z) = M N / 2 + M^2 N^2 (delta(z)/2)^{-2k}`: `phi(z, z + x) <= k(z) ||x||`
/// whenever `||x|| < delta(z)/4`.
pub fn local_lipschitz_constant(spec: &ProblemSpec, z: &Configuration) -> Result<f64> {
    let delta = crate::geometry::min_mutual_distance(z)?;
    if !(delta > 0.0) {
        return domain("local Lipschitz constant needs a collision-free configuration");
    }
    let m = spec.total_mass();
    let n = spec.n_bodies as f64;
    Ok(m * n / 2.0 + m * m * n * n * (delta / 2.0).powf(-2.0 * spec.kappa))
}

fn near_collision<L: Lagrangian + ?Sized>(sys: &L, q: &[f64], horizon: f64) -> bool {
    sys.collision_distance(q) < horizon.powf(1.0 / (1.0 + sys.kappa()))
}

/// Node times on `[0, T]`: uniform, or power-graded with exponent `1 + k` at
/// each end flagged in `grade`. A path leaving a collision like
/// `t^{1/(1+k)}` is then linear in the node index.
pub fn time_grid(horizon: f64, nodes: usize, kappa: f64, grade: (bool, bool)) -> Vec<f64> {
    let k = nodes - 1;
    let p = 1.0 + kappa;
    (0..=k)
        .map(|i| {
            let s = i as f64 / k as f64;
            let tau = match grade {
                (false, false) => s,
                (true, false) => s.powf(p),
                (false, true) => 1.0 - (1.0 - s).powf(p),
                (true, true) => s.powf(p) / (s.powf(p) + (1.0 - s).powf(p)),
            };
            if i == k {
                horizon
            } else {
                horizon * tau
            }
        })
        .collect()
}

/// Time grid used by the estimator for `(x, y, T)`.
pub fn estimator_grid<L: Lagrangian + ?Sized>(sys: &L, x: &[f64], y: &[f64], horizon: f64, nodes: usize) -> Vec<f64> {
    time_grid(
        horizon,
        nodes,
        sys.kappa(),
        (near_collision(sys, x, horizon), near_collision(sys, y, horizon)),
    )
}

/// Result of [`minimize_flat`].
#[derive(Debug, Clone, PartialEq)]
pub struct FlatMinimum {
    /// All nodes, endpoints included, row-major.
    pub nodes: Vec<f64>,
    pub value: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Index into `starts` of the winning start.
    pub start: usize,
}

/// Minimises the discrete action over the interior nodes of each start
/// (endpoints fixed) and keeps the lowest value. Starts of infinite action
/// are skipped.
pub fn minimize_flat<L: Lagrangian + ?Sized>(
    sys: &L,
    times: &[f64],
    starts: &[Vec<f64>],
    opts: &LbfgsOptions,
) -> Result<FlatMinimum> {
    let dof = sys.dof();
    let k = times.len();
    let interior = (k - 2) * dof;
    let mut diag = vec![0.0; interior];
    for i in 1..k - 1 {
        let w = 1.0 / (times[i] - times[i - 1]) + 1.0 / (times[i + 1] - times[i]);
        for c in 0..dof {
            diag[(i - 1) * dof + c] = sys.coordinate_mass(c) * w;
        }
    }
    let mut best: Option<FlatMinimum> = None;
    for (index, start) in starts.iter().enumerate() {
        if start.len() != k * dof {
            return domain("start path has the wrong number of nodes");
        }
        let mut full = start.clone();
        let mut gfull = vec![0.0; k * dof];
        let objective = |z: &[f64], g: &mut [f64]| {
            full[dof..(k - 1) * dof].copy_from_slice(z);
            let v = flat_action_and_gradient(sys, times, &full, &mut gfull);
            g.copy_from_slice(&gfull[dof..(k - 1) * dof]);
            v
        };
        let x0 = start[dof..(k - 1) * dof].to_vec();
        if interior == 0 {
            let v = flat_action_parts(sys, times, start).total();
            if v.is_finite() && best.as_ref().map_or(true, |b| v < b.value) {
                best = Some(FlatMinimum { nodes: start.clone(), value: v, converged: true, iterations: 0, start: index });
            }
            continue;
        }
        let run = match lbfgs(objective, x0, &diag, opts) {
            Ok(r) => r,
            Err(Error::Domain(_)) => continue,
            Err(e) => return Err(e),
        };
        if best.as_ref().map_or(true, |b| run.value < b.value) {
            let mut nodes = start.clone();
            nodes[dof..(k - 1) * dof].copy_from_slice(&run.x);
            best = Some(FlatMinimum {
                nodes,
                value: run.value,
                converged: run.converged,
                iterations: run.iterations,
                start: index,
            });
        }
    }
    best.ok_or_else(|| Error::Numerical("every start path has infinite action".into()))
}

/// Straight start plus `BENT_STARTS` sine-bent starts with seeded directions.
pub fn default_starts<L: Lagrangian + ?Sized>(sys: &L, x: &[f64], y: &[f64], times: &[f64]) -> Vec<Vec<f64>> {
    let dof = sys.dof();
    let horizon = times[times.len() - 1];
    let sep = x.iter().zip(y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let amp = 0.5 * sep.max(horizon.powf(1.0 / (1.0 + sys.kappa())));
    let line = |bend: Option<&[f64]>| {
        let mut out = Vec::with_capacity(times.len() * dof);
        for &t in times {
            let s = t / horizon;
            let bump = (std::f64::consts::PI * s).sin();
            for c in 0..dof {
                let b = bend.map_or(0.0, |d| d[c] * bump);
                out.push(x[c] + s * (y[c] - x[c]) + b);
            }
        }
        let last = out.len() - dof;
        out[..dof].copy_from_slice(x);
        out[last..].copy_from_slice(y);
        out
    };
    let mut starts = vec![line(None)];
    for k in 0..BENT_STARTS {
        let mut rng = ChaCha8Rng::seed_from_u64(BENT_SEED + k);
        let mut dir: Vec<f64> = (0..dof).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let norm = dir.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        dir.iter_mut().for_each(|v| *v *= amp / norm);
        starts.push(line(Some(&dir)));
    }
    starts
}

/// Resamples a path at the given times (linear interpolation in time,
/// rescaled to the path's own duration).
pub fn resample(path: &DiscretePath, times: &[f64]) -> Vec<f64> {
    let horizon = times[times.len() - 1];
    let (t0, d) = (path.times[0], path.duration());
    let mut out: Vec<f64> = times
        .iter()
        .flat_map(|&t| path.position(t0 + t / horizon * d).coords)
        .collect();
    let dof = path.nodes[0].coords.len();
    let last = out.len() - dof;
    out[..dof].copy_from_slice(&path.start().coords);
    out[last..].copy_from_slice(&path.end().coords);
    out
}

fn check_pair(spec: &ProblemSpec, x: &Configuration, y: &Configuration) -> Result<()> {
    spec.check(x)?;
    spec.check(y)
}

/// Estimate of `phi(x, y, T)`. Without `init` the starts are the connector
/// through the bounding ball (when it has finite action), the straight path
/// and two bent paths; with `init` only the resampled `init` is used.
pub fn minimize_action(
    spec: &ProblemSpec,
    x: &Configuration,
    y: &Configuration,
    horizon: f64,
    nodes: usize,
    init: Option<&DiscretePath>,
) -> Result<PhiEstimate> {
    minimize_action_with(spec, x, y, horizon, nodes, init, &LbfgsOptions::default())
}

pub fn minimize_action_with(
    spec: &ProblemSpec,
    x: &Configuration,
    y: &Configuration,
    horizon: f64,
    nodes: usize,
    init: Option<&DiscretePath>,
    opts: &LbfgsOptions,
) -> Result<PhiEstimate> {
    check_pair(spec, x, y)?;
    if !(horizon > 0.0 && horizon.is_finite()) {
        return domain(format!("horizon must be positive, got {horizon}"));
    }
    if nodes < MIN_NODES {
        return domain(format!("at least {MIN_NODES} nodes are needed, got {nodes}"));
    }
    let times = estimator_grid(spec, &x.coords, &y.coords, horizon, nodes);
    let starts = match init {
        Some(p) => {
            let (a, b) = (p.start(), p.end());
            let close = |u: &Configuration, v: &Configuration| {
                u.sub(v).max_norm() <= 1e-12 * (1.0 + v.max_norm())
            };
            if !close(a, x) || !close(b, y) || (p.duration() - horizon).abs() > 1e-12 * horizon {
                return domain("initial path endpoints or duration do not match the query");
            }
            vec![resample(p, &times)]
        }
        None => {
            let mut s = Vec::new();
            let (center, r) = bounding_ball(x, y);
            if r > 0.0 {
                let conn = Connector::new(spec, x, y, horizon, &center, r)?;
                let sampled = DiscretePath::new(
                    times.clone(),
                    times.iter().map(|&t| conn.position(t)).collect(),
                )?;
                s.push(resample(&sampled, &times));
            }
            s.extend(default_starts(spec, &x.coords, &y.coords, &times));
            s
        }
    };
    let best = minimize_flat(spec, &times, &starts, opts)?;
    let path = DiscretePath::from_flat(times, spec.dim, &best.nodes)?;
    Ok(PhiEstimate {
        value: best.value,
        horizon,
        path,
        lower_bound: lower_bound(spec, x, y, horizon),
        upper_bound: upper_bound(spec, x, y, horizon),
        converged: best.converged,
        iterations: best.iterations,
    })
}

/// Max-norm of the action gradient at the interior nodes of `path`.
pub fn euler_lagrange_residual(spec: &ProblemSpec, path: &DiscretePath) -> f64 {
    let q = path.flat();
    let mut g = vec![0.0; q.len()];
    let v = flat_action_and_gradient(spec, &path.times, &q, &mut g);
    if !v.is_finite() {
        return f64::INFINITY;
    }
    let dof = spec.dof();
    g[dof..g.len() - dof].iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Free-time estimate `phi(x, y) = inf_T phi(x, y, T)` with the default node count.
pub fn free_phi(spec: &ProblemSpec, x: &Configuration, y: &Configuration) -> Result<PhiEstimate> {
    free_phi_with(spec, x, y, DEFAULT_NODES, None)
}

/// Golden-section search over `log T` on the free-time bracket. The first
/// evaluation is multi-start (or starts from `init`, rescaled in time); each
/// later one is warm-started from the previous argmin.
pub fn free_phi_with(
    spec: &ProblemSpec,
    x: &Configuration,
    y: &Configuration,
    nodes: usize,
    init: Option<&DiscretePath>,
) -> Result<PhiEstimate> {
    check_pair(spec, x, y)?;
    let sep = x.sub(y).max_norm();
    if sep <= COLLISION_FLOOR * (1.0 + x.max_norm()) {
        let path = DiscretePath::new(vec![0.0, f64::MIN_POSITIVE], vec![x.clone(), y.clone()])?;
        return Ok(PhiEstimate {
            value: 0.0,
            horizon: 0.0,
            path,
            lower_bound: 0.0,
            upper_bound: 0.0,
            converged: true,
            iterations: 0,
        });
    }
    let scale = sep.powf(1.0 + spec.kappa);
    let (lo, hi) = (
        (FREE_TIME_BRACKET.0 * scale).ln(),
        (FREE_TIME_BRACKET.1 * scale).ln(),
    );
    let mut warm: Option<DiscretePath> = init.cloned();
    let mut best: Option<PhiEstimate> = None;
    let mut failure: Option<Error> = None;
    let mut total_iterations = 0;
    let mut eval = |log_t: f64| -> f64 {
        let horizon = log_t.exp();
        let start = warm.as_ref().map(|p| p.rescaled(horizon)).transpose();
        let result = start.and_then(|s| minimize_action(spec, x, y, horizon, nodes, s.as_ref()));
        match result {
            Ok(est) => {
                total_iterations += est.iterations;
                let v = est.value;
                warm = Some(est.path.clone());
                if best.as_ref().map_or(true, |b| v < b.value) {
                    best = Some(est);
                }
                v
            }
            Err(e) => {
                failure.get_or_insert(e);
                f64::INFINITY
            }
        }
    };
    let (log_t, _) = golden_section(&mut eval, lo, hi, FREE_TIME_LOG_TOL);
    if let Some(e) = failure {
        return Err(e);
    }
    let mut best = best.ok_or_else(|| Error::Numerical("free-time search produced no estimate".into()))?;
    if log_t - lo < 2.0 * FREE_TIME_LOG_TOL || hi - log_t < 2.0 * FREE_TIME_LOG_TOL {
        return Err(Error::Bracket(format!(
            "free-time minimum at the bracket edge: T = {:.6e}, bracket [{:.3e}, {:.3e}], value {:.6e}",
            log_t.exp(),
            lo.exp(),
            hi.exp(),
            best.value
        )));
    }
    best.iterations = total_iterations;
    best.lower_bound = 0.0;
    best.upper_bound = holder_constant(spec) * sep.powf(1.0 - spec.kappa);
    Ok(best)
}

/// Free-time potential for any [`Lagrangian`], as `(value, argmin T)`.
/// Same search as [`free_phi_with`]; the first evaluation is multi-start and
/// later ones are warm-started node by node.
pub fn free_phi_flat<L: Lagrangian + ?Sized>(sys: &L, x: &[f64], y: &[f64], nodes: usize) -> Result<(f64, f64)> {
    if x.len() != sys.dof() || y.len() != sys.dof() {
        return domain("endpoint has the wrong number of coordinates");
    }
    if nodes < MIN_NODES {
        return domain(format!("at least {MIN_NODES} nodes are needed, got {nodes}"));
    }
    let sep = x.iter().zip(y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    if sep <= COLLISION_FLOOR * (1.0 + sys.max_norm(x)) {
        return Ok((0.0, 0.0));
    }
    let scale = sep.powf(1.0 + sys.kappa());
    let (lo, hi) = ((FREE_TIME_BRACKET.0 * scale).ln(), (FREE_TIME_BRACKET.1 * scale).ln());
    let opts = LbfgsOptions::default();
    let mut warm: Option<Vec<f64>> = None;
    let mut best = (f64::INFINITY, 0.0);
    let mut failure: Option<Error> = None;
    let mut eval = |log_t: f64| -> f64 {
        let horizon = log_t.exp();
        let times = estimator_grid(sys, x, y, horizon, nodes);
        let starts = match warm.take() {
            Some(w) => vec![w],
            None => default_starts(sys, x, y, &times),
        };
        match minimize_flat(sys, &times, &starts, &opts) {
            Ok(m) => {
                if m.value < best.0 {
                    best = (m.value, horizon);
                }
                warm = Some(m.nodes);
                m.value
            }
            Err(e) => {
                failure.get_or_insert(e);
                f64::INFINITY
            }
        }
    };
    let (log_t, _) = golden_section(&mut eval, lo, hi, FREE_TIME_LOG_TOL);
    if let Some(e) = failure {
        return Err(e);
    }
    if log_t - lo < 2.0 * FREE_TIME_LOG_TOL || hi - log_t < 2.0 * FREE_TIME_LOG_TOL {
        return Err(Error::Bracket(format!(
            "free-time minimum at the bracket edge: T = {:.6e}, value {:.6e}",
            log_t.exp(),
            best.0
        )));
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomogeneityReport {
    pub lambda: f64,
    pub phi_base: f64,
    pub phi_scaled: f64,
    pub ratio: f64,
    pub expected: f64,
    pub relative_error: f64,
}

/// Compares `phi(lambda x, lambda y)` with `lambda^{1-k} phi(x, y)`; the
/// scaled search is warm-started from the scaled base argmin.
pub fn certify_homogeneity(
    spec: &ProblemSpec,
    x: &Configuration,
    y: &Configuration,
    lambda: f64,
    nodes: usize,
) -> Result<HomogeneityReport> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return domain(format!("lambda must be positive, got {lambda}"));
    }
    let base = free_phi_with(spec, x, y, nodes, None)?;
    let expected = lambda.powf(1.0 - spec.kappa);
    let phi_scaled = if lambda == 1.0 {
        base.value
    } else {
        let horizon = base.horizon * lambda.powf(1.0 + spec.kappa);
        let init = DiscretePath::new(
            base.path.times.iter().map(|t| t * horizon / base.horizon).collect(),
            base.path.nodes.iter().map(|c| c.scale(lambda)).collect(),
        )?;
        free_phi_with(spec, &x.scale(lambda), &y.scale(lambda), nodes, Some(&init))?.value
    };
    let ratio = phi_scaled / base.value;
    Ok(HomogeneityReport {
        lambda,
        phi_base: base.value,
        phi_scaled,
        ratio,
        expected,
        relative_error: (ratio - expected).abs() / expected,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceAxiomReport {
    pub triples: usize,
    /// Worst `|phi(x,y) - phi(y,x)| - slack`.
    pub symmetry_excess: f64,
    /// Worst `phi(x,y) - phi(x,z) - phi(z,y) - slack`.
    pub triangle_excess: f64,
    /// Relative slack used: three times the estimator tolerance.
    pub slack_rel: f64,
    pub passed: bool,
}

/// Symmetry and triangle inequality of free-time estimates on `(x, y, z)`
/// triples, with slack `3 ESTIMATOR_REL_TOL` times the values involved.
pub fn certify_distance_axioms(
    spec: &ProblemSpec,
    sample: &[(Configuration, Configuration, Configuration)],
    nodes: usize,
) -> Result<DistanceAxiomReport> {
    let slack_rel = 3.0 * ESTIMATOR_REL_TOL;
    let mut symmetry_excess = f64::NEG_INFINITY;
    let mut triangle_excess = f64::NEG_INFINITY;
    for (x, y, z) in sample {
        let phi = |a: &Configuration, b: &Configuration| free_phi_with(spec, a, b, nodes, None).map(|e| e.value);
        let xy = phi(x, y)?;
        let yx = phi(y, x)?;
        let xz = phi(x, z)?;
        let zy = phi(z, y)?;
        symmetry_excess = symmetry_excess.max((xy - yx).abs() - slack_rel * xy.max(yx));
        triangle_excess = triangle_excess.max(xy - xz - zy - slack_rel * (xz + zy).max(xy));
    }
    Ok(DistanceAxiomReport {
        triples: sample.len(),
        symmetry_excess,
        triangle_excess,
        slack_rel,
        passed: symmetry_excess <= 0.0 && triangle_excess <= 0.0,
    })
}

/// One line of a batch query file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhiQuery {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<Vec<f64>>,
    #[serde(rename = "T", default)]
    pub horizon: Option<f64>,
    pub kappa: f64,
    pub masses: Vec<f64>,
}

/// One line of batch output: the estimate and the bounds it was checked against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhiResult {
    pub query: PhiQuery,
    pub value: f64,
    pub horizon: f64,
    pub lower_bound: f64,
    pub upper_bound: f64,
    pub converged: bool,
    pub iterations: usize,
    pub sandwich_holds: bool,
}

pub fn run_query(query: &PhiQuery, nodes: usize) -> Result<PhiResult> {
    let x = Configuration::from_points(&query.x)?;
    let y = Configuration::from_points(&query.y)?;
    let spec = ProblemSpec::new(x.dim, query.masses.clone(), query.kappa)?;
    let est = match query.horizon {
        Some(t) => minimize_action(&spec, &x, &y, t, nodes, None)?,
        None => free_phi_with(&spec, &x, &y, nodes, None)?,
    };
    Ok(PhiResult {
        query: query.clone(),
        value: est.value,
        horizon: est.horizon,
        lower_bound: est.lower_bound,
        upper_bound: est.upper_bound,
        converged: est.converged,
        iterations: est.iterations,
        sandwich_holds: est.lower_bound <= est.value && est.value <= est.upper_bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics;

    fn cfg(dim: usize, c: &[f64]) -> Configuration {
        Configuration::new(dim, c.to_vec()).unwrap()
    }

    #[test]
    fn grids_are_graded_and_end_exactly() {
        let g = time_grid(2.0, 9, 0.5, (true, true));
        assert_eq!(g[0], 0.0);
        assert_eq!(g[8], 2.0);
        assert!((g[4] - 1.0).abs() < 1e-15);
        assert!(g[1] < 2.0 / 8.0);
        let u = time_grid(2.0, 9, 0.5, (false, false));
        assert!((u[1] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn stationary_far_pair_short_time() {
        let s = ProblemSpec::unit_masses(2, 2, 0.5).unwrap();
        let x = cfg(2, &[-5.0, 0.0, 5.0, 0.0]);
        let t = 0.1;
        let est = minimize_action(&s, &x, &x, t, 16, None).unwrap();
        let stationary = t * dynamics::potential(&s, &x);
        assert!(est.value <= stationary * (1.0 + 1e-12));
        assert!(est.value >= stationary * (1.0 - 1e-6));
        assert!(est.lower_bound <= est.value && est.value <= est.upper_bound);
    }

    #[test]
    fn lower_bound_holds_for_moving_pair() {
        let s = ProblemSpec::unit_masses(2, 1, 0.5).unwrap();
        let x = cfg(1, &[-0.5, 0.5]);
        let y = cfg(1, &[-2.0, 2.0]);
        for &t in &[0.5, 2.0, 8.0] {
            let est = minimize_action(&s, &x, &y, t, 32, None).unwrap();
            assert!(est.converged);
            assert!(est.value >= est.lower_bound);
            assert!(est.value <= est.upper_bound);
        }
    }

    #[test]
    fn init_mismatch_is_rejected() {
        let s = ProblemSpec::unit_masses(2, 1, 0.5).unwrap();
        let x = cfg(1, &[-0.5, 0.5]);
        let y = cfg(1, &[-2.0, 2.0]);
        let p = DiscretePath::straight(&x, &y, 1.0, 4).unwrap();
        assert!(minimize_action(&s, &x, &y, 2.0, 16, Some(&p)).is_err());
        assert!(minimize_action(&s, &y, &x, 1.0, 16, Some(&p)).is_err());
        assert!(minimize_action(&s, &x, &y, 1.0, 4, None).is_err());
    }

    #[test]
    fn free_phi_of_identical_points_is_zero() {
        let s = ProblemSpec::unit_masses(2, 1, 0.5).unwrap();
        let x = cfg(1, &[-0.5, 0.5]);
        assert_eq!(free_phi(&s, &x, &x).unwrap().value, 0.0);
    }

    #[test]
    fn local_lipschitz_constant_examples() {
        let s = ProblemSpec::unit_masses(2, 1, 0.5).unwrap();
        let k = local_lipschitz_constant(&s, &cfg(1, &[0.0, 2.0])).unwrap();
        assert!((k - (2.0 + 16.0)).abs() < 1e-12);
        assert!(local_lipschitz_constant(&s, &cfg(1, &[1.0, 1.0])).is_err());
    }
}
