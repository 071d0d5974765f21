//! Potential, Hamiltonian and energy of the homogeneous N-body problem,
//! central configurations and their parabolic homothetic motions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::geometry::{Configuration, ProblemSpec};
use crate::quadrature::{GL5_NODES, GL5_WEIGHTS};
use crate::system::Lagrangian;

pub use crate::system::COLLISION_FLOOR;

fn collision_threshold(max_norm: f64) -> f64 {
    COLLISION_FLOOR * (1.0 + max_norm)
}

/// `U_kappa(x) = sum_{i<j} m_i m_j r_ij^{-2 kappa}`, or `+inf` at a collision.
pub fn potential(spec: &ProblemSpec, x: &Configuration) -> f64 {
    potential_flat(spec, &x.coords)
}

fn potential_flat(spec: &ProblemSpec, q: &[f64]) -> f64 {
    let d = spec.dim;
    let n = q.len() / d;
    let floor = collision_threshold(spec.max_norm(q));
    let mut u = 0.0;
    for i in 0..n {
        let ri = &q[i * d..(i + 1) * d];
        for j in i + 1..n {
            let rj = &q[j * d..(j + 1) * d];
            let r2: f64 = ri.iter().zip(rj).map(|(a, b)| (a - b) * (a - b)).sum();
            let r = r2.sqrt();
            if r < floor {
                return f64::INFINITY;
            }
            u += spec.masses[i] * spec.masses[j] * r2.powf(-spec.kappa);
        }
    }
    u
}

fn potential_and_euclidean_gradient(spec: &ProblemSpec, q: &[f64], grad: &mut [f64]) -> f64 {
    let d = spec.dim;
    let n = q.len() / d;
    let k = spec.kappa;
    let floor = collision_threshold(spec.max_norm(q));
    grad.iter_mut().for_each(|g| *g = 0.0);
    let mut u = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let mut r2 = 0.0;
            for c in 0..d {
                let diff = q[i * d + c] - q[j * d + c];
                r2 += diff * diff;
            }
            if r2.sqrt() < floor {
                return f64::INFINITY;
            }
            let mm = spec.masses[i] * spec.masses[j];
            let term = mm * r2.powf(-k);
            u += term;
            // d/dr_i (r2^{-k}) = -2k r2^{-k-1} (r_i - r_j)
            let coef = -2.0 * k * term / r2;
            for c in 0..d {
                let diff = q[i * d + c] - q[j * d + c];
                grad[i * d + c] += coef * diff;
                grad[j * d + c] -= coef * diff;
            }
        }
    }
    u
}

/// Gradient of `U_kappa` for the mass scalar product: `g_i = m_i^{-1} dU/dr_i`,
/// so that `<g, v>_mass` is the directional derivative along `v`.
pub fn potential_gradient(spec: &ProblemSpec, x: &Configuration) -> Result<Configuration> {
    spec.check(x)?;
    let mut g = vec![0.0; x.coords.len()];
    let u = potential_and_euclidean_gradient(spec, &x.coords, &mut g);
    if !u.is_finite() {
        return domain("potential gradient requested at a collision");
    }
    for (i, gi) in g.chunks_exact_mut(spec.dim).enumerate() {
        gi.iter_mut().for_each(|c| *c /= spec.masses[i]);
    }
    Ok(Configuration {
        dim: spec.dim,
        coords: g,
    })
}

/// `I(x)^kappa U_kappa(x)`, invariant under dilations.
pub fn normalized_potential(spec: &ProblemSpec, x: &Configuration) -> f64 {
    x.moment_of_inertia(&spec.masses).powf(spec.kappa) * potential(spec, x)
}

/// Legendre transform `p_i = m_i v_i`.
pub fn legendre(spec: &ProblemSpec, v: &Configuration) -> Configuration {
    let mut p = v.clone();
    for (i, pi) in p.coords.chunks_exact_mut(spec.dim).enumerate() {
        pi.iter_mut().for_each(|c| *c *= spec.masses[i]);
    }
    p
}

/// `H(x, p) = 1/2 sum m_i^{-1} ||p_i||^2 - U_kappa(x)`.
pub fn hamiltonian(spec: &ProblemSpec, x: &Configuration, p: &Configuration) -> f64 {
    let kinetic: f64 = p
        .bodies()
        .zip(&spec.masses)
        .map(|(pi, m)| pi.iter().map(|c| c * c).sum::<f64>() / m)
        .sum();
    0.5 * kinetic - potential(spec, x)
}

/// Kinetic energy, potential value and total energy `K - U` of a state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub kinetic: f64,
    pub potential_value: f64,
    pub total_energy: f64,
}

pub fn energy(spec: &ProblemSpec, x: &Configuration, v: &Configuration) -> EnergyReport {
    let kinetic = 0.5 * v.moment_of_inertia(&spec.masses);
    let potential_value = potential(spec, x);
    EnergyReport {
        kinetic,
        potential_value,
        total_energy: kinetic - potential_value,
    }
}

impl Lagrangian for ProblemSpec {
    fn dof(&self) -> usize {
        self.n_bodies * self.dim
    }

    fn point_dim(&self) -> usize {
        self.dim
    }

    fn coordinate_mass(&self, k: usize) -> f64 {
        self.masses[k / self.dim]
    }

    fn min_mass(&self) -> f64 {
        ProblemSpec::min_mass(self)
    }

    fn kappa(&self) -> f64 {
        self.kappa
    }

    fn potential(&self, q: &[f64]) -> f64 {
        potential_flat(self, q)
    }

    fn potential_and_gradient(&self, q: &[f64], grad: &mut [f64]) -> f64 {
        potential_and_euclidean_gradient(self, q, grad)
    }

    fn collision_distance(&self, q: &[f64]) -> f64 {
        let d = self.dim;
        let n = q.len() / d;
        let mut best = f64::INFINITY;
        for i in 0..n {
            for j in i + 1..n {
                let r: f64 = (0..d)
                    .map(|c| (q[i * d + c] - q[j * d + c]).powi(2))
                    .sum::<f64>()
                    .sqrt();
                best = best.min(r);
            }
        }
        best
    }

    fn segment_clearance(&self, a: &[f64], b: &[f64]) -> f64 {
        let d = self.dim;
        let n = a.len() / d;
        let mut best = f64::INFINITY;
        for i in 0..n {
            for j in i + 1..n {
                // r(s) = u + s w on s in [0, 1]
                let (mut uu, mut uw, mut ww) = (0.0, 0.0, 0.0);
                for c in 0..d {
                    let u = a[i * d + c] - a[j * d + c];
                    let w = b[i * d + c] - b[j * d + c] - u;
                    uu += u * u;
                    uw += u * w;
                    ww += w * w;
                }
                let s = if ww > 0.0 { (-uw / ww).clamp(0.0, 1.0) } else { 0.0 };
                best = best.min((uu + 2.0 * s * uw + s * s * ww).max(0.0).sqrt());
            }
        }
        best
    }
}

/// A normal (`I = 1`) central configuration found by minimising `U_kappa` on
/// the sphere of constant moment of inertia.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CentralConfiguration {
    pub config: Configuration,
    /// `U_kappa` at `config`.
    pub u0: f64,
    /// All restarts reached the same `U_0`. Heuristic evidence of global
    /// minimality, not a proof.
    pub is_minimal: bool,
    /// Norm of the tangential mass gradient at `config`.
    pub residual: f64,
    /// `U_0` reached by each restart, in restart order.
    pub restart_values: Vec<f64>,
}

/// Stopping threshold on the tangential gradient norm.
pub const CENTRAL_RESIDUAL_TOL: f64 = 1e-8;
/// Relative agreement required between restarts for the minimality flag.
pub const CENTRAL_AGREEMENT_TOL: f64 = 1e-6;
pub const CENTRAL_DEFAULT_RESTARTS: usize = 16;
const CENTRAL_MAX_ITER: usize = 50_000;

fn normalize_inertia(spec: &ProblemSpec, x: &mut Configuration) {
    let s = x.mass_norm(&spec.masses);
    x.coords.iter_mut().for_each(|c| *c /= s);
}

fn tangential_gradient(spec: &ProblemSpec, x: &Configuration) -> Option<(f64, Configuration)> {
    let u = potential(spec, x);
    if !u.is_finite() {
        return None;
    }
    let g = potential_gradient(spec, x).ok()?;
    let radial = g.mass_dot(x, &spec.masses);
    Some((u, g.sub(&x.scale(radial))))
}

struct Descent {
    config: Configuration,
    u: f64,
    residual: f64,
    converged: bool,
}

fn descend_on_sphere(spec: &ProblemSpec, mut x: Configuration) -> Descent {
    let cm = x.center_of_mass(&spec.masses);
    for r in x.coords.chunks_exact_mut(spec.dim) {
        r.iter_mut().zip(&cm).for_each(|(a, c)| *a -= c);
    }
    normalize_inertia(spec, &mut x);
    let Some((mut u, mut g)) = tangential_gradient(spec, &x) else {
        return Descent {
            config: x,
            u: f64::INFINITY,
            residual: f64::INFINITY,
            converged: false,
        };
    };
    let mut step = 1e-2 / (1.0 + u);
    for _ in 0..CENTRAL_MAX_ITER {
        let gn2 = g.moment_of_inertia(&spec.masses);
        let residual = gn2.sqrt();
        if residual < CENTRAL_RESIDUAL_TOL {
            return Descent {
                config: x,
                u,
                residual,
                converged: true,
            };
        }
        // Armijo backtracking along the retraction x - s g, renormalised.
        let mut s = step;
        let accepted = loop {
            let mut trial = x.sub(&g.scale(s));
            normalize_inertia(spec, &mut trial);
            if let Some((ut, gt)) = tangential_gradient(spec, &trial) {
                if ut <= u - 1e-4 * s * gn2 {
                    break Some((trial, ut, gt));
                }
            }
            s *= 0.5;
            if s < 1e-300 {
                break None;
            }
        };
        let Some((xn, un, gn)) = accepted else {
            return Descent {
                config: x,
                u,
                residual,
                converged: false,
            };
        };
        // Barzilai-Borwein proposal for the next trial step.
        let dx = xn.sub(&x);
        let dg = gn.sub(&g);
        let sy = dx.mass_dot(&dg, &spec.masses);
        let ss = dx.moment_of_inertia(&spec.masses);
        step = if sy > 0.0 { (ss / sy).clamp(1e-12, 1e6) } else { s * 2.0 };
        x = xn;
        u = un;
        g = gn;
    }
    let residual = g.mass_norm(&spec.masses);
    Descent {
        config: x,
        u,
        residual,
        converged: residual < CENTRAL_RESIDUAL_TOL,
    }
}

/// Multi-start projected gradient descent of `U_kappa` on `{I = 1}`.
///
/// Restart `k` draws its start from `ChaCha8Rng::seed_from_u64(seed + k)`.
/// Returns the lowest `U_0`; fails if no restart reached the residual tolerance.
pub fn find_central_configuration(
    spec: &ProblemSpec,
    seed: u64,
    restarts: usize,
) -> Result<CentralConfiguration> {
    if spec.n_bodies < 2 {
        return domain("central configurations need at least two bodies");
    }
    let restarts = restarts.max(1);
    let runs: Vec<Descent> = (0..restarts)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(k as u64));
            let coords = (0..spec.n_bodies * spec.dim)
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect();
            descend_on_sphere(spec, Configuration { dim: spec.dim, coords })
        })
        .collect();
    let restart_values: Vec<f64> = runs.iter().map(|r| r.u).collect();
    let best = runs
        .iter()
        .enumerate()
        .filter(|(_, r)| r.converged)
        .min_by(|a, b| a.1.u.total_cmp(&b.1.u).then(a.0.cmp(&b.0)))
        .map(|(i, _)| i);
    let Some(best) = best else {
        let r = runs
            .iter()
            .min_by(|a, b| a.u.total_cmp(&b.u))
            .expect("at least one restart");
        return Err(Error::Convergence {
            iterations: CENTRAL_MAX_ITER,
            best: r.u,
            residual: r.residual,
        });
    };
    let u0 = runs[best].u;
    let is_minimal = runs
        .iter()
        .all(|r| r.converged && (r.u - u0).abs() <= CENTRAL_AGREEMENT_TOL * u0);
    let run = &runs[best];
    Ok(CentralConfiguration {
        config: run.config.clone(),
        u0,
        is_minimal,
        residual: run.residual,
        restart_values,
    })
}

/// `c = (2 U_0)^{1/(2+2 kappa)} (1+kappa)^{1/(1+kappa)}`, the amplitude of the
/// zero-energy homothetic motion `x(t) = c t^{1/(1+kappa)} x_0`.
pub fn parabolic_amplitude(u0: f64, kappa: f64) -> f64 {
    (2.0 * u0).powf(1.0 / (2.0 + 2.0 * kappa)) * (1.0 + kappa).powf(1.0 / (1.0 + kappa))
}

/// Position and velocity of the parabolic homothetic motion at time `t > 0`.
pub fn parabolic_homothetic(
    central: &CentralConfiguration,
    spec: &ProblemSpec,
    t: f64,
) -> Result<(Configuration, Configuration)> {
    if !(t > 0.0) {
        return domain(format!("parabolic motion needs t > 0, got {t}"));
    }
    let k = spec.kappa;
    let c = parabolic_amplitude(central.u0, k);
    let r = c * t.powf(1.0 / (1.0 + k));
    let rdot = c / (1.0 + k) * t.powf(-k / (1.0 + k));
    Ok((central.config.scale(r), central.config.scale(rdot)))
}

/// Closed-form action of the parabolic motion on `[0, T]`:
/// `(c^2 / (2(1-k^2)) + c^{-2k} U_0 (1+k)/(1-k)) T^{(1-k)/(1+k)}`.
pub fn parabolic_action_closed_form(
    central: &CentralConfiguration,
    spec: &ProblemSpec,
    horizon: f64,
) -> f64 {
    let (kin, pot) = parabolic_action_parts(central.u0, spec.kappa, horizon);
    kin + pot
}

/// Kinetic and potential contributions of [`parabolic_action_closed_form`].
pub fn parabolic_action_parts(u0: f64, kappa: f64, horizon: f64) -> (f64, f64) {
    let k = kappa;
    let c = parabolic_amplitude(u0, k);
    let scale = horizon.powf((1.0 - k) / (1.0 + k));
    (
        c * c / (2.0 * (1.0 - k * k)) * scale,
        c.powf(-2.0 * k) * u0 * (1.0 + k) / (1.0 - k) * scale,
    )
}

/// Action of the parabolic motion on `[0, T]` by quadrature of the curve
/// itself on `nodes` time nodes `t_i = T (i/K)^q`, `q = (1+k)/(1-k)`, with
/// 5-point Gauss-Legendre in the mesh variable on each cell. Returns
/// `(kinetic, potential)`.
///
/// Both integrands behave like `t^{-2k/(1+k)}` at the collision; the mesh
/// turns that into a bounded integrand.
pub fn parabolic_action_quadrature(
    central: &CentralConfiguration,
    spec: &ProblemSpec,
    horizon: f64,
    nodes: usize,
) -> Result<(f64, f64)> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return domain(format!("horizon must be positive, got {horizon}"));
    }
    if nodes < 2 {
        return domain("quadrature needs at least two nodes");
    }
    let k = spec.kappa;
    let q = (1.0 + k) / (1.0 - k);
    let cells = nodes - 1;
    let (mut kin, mut pot) = (0.0, 0.0);
    for i in 0..cells {
        let (s0, s1) = (i as f64 / cells as f64, (i + 1) as f64 / cells as f64);
        for (x, w) in GL5_NODES.iter().zip(GL5_WEIGHTS) {
            let s = s0 + x * (s1 - s0);
            let t = horizon * s.powf(q);
            let jac = horizon * q * s.powf(q - 1.0) * (s1 - s0);
            let (pos, vel) = parabolic_homothetic(central, spec, t)?;
            kin += w * jac * 0.5 * vel.mass_norm(&spec.masses).powi(2);
            pot += w * jac * potential(spec, &pos);
        }
    }
    Ok((kin, pot))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(dim: usize, c: &[f64]) -> Configuration {
        Configuration::new(dim, c.to_vec()).unwrap()
    }

    #[test]
    fn potential_examples() {
        let s = ProblemSpec::unit_masses(2, 1, 0.3).unwrap();
        assert_eq!(potential(&s, &cfg(1, &[0.0, 1.0])), 1.0);
        let s = ProblemSpec::unit_masses(2, 1, 0.5).unwrap();
        assert!((potential(&s, &cfg(1, &[0.0, 4.0])) - 0.25).abs() < 1e-15);
        assert_eq!(potential(&s, &cfg(1, &[2.0, 2.0])), f64::INFINITY);
    }

    #[test]
    fn gradient_two_body_attraction() {
        let s = ProblemSpec::unit_masses(2, 2, 0.5).unwrap();
        let r = 2.5;
        let g = potential_gradient(&s, &cfg(2, &[0.0, 0.0, r, 0.0])).unwrap();
        assert!((g.coords[0] - 1.0 / (r * r)).abs() < 1e-14);
        assert!((g.coords[2] + 1.0 / (r * r)).abs() < 1e-14);
        assert_eq!(g.coords[1], 0.0);
        assert!(potential_gradient(&s, &cfg(2, &[1.0, 1.0, 1.0, 1.0])).is_err());
    }

    #[test]
    fn gradient_equilateral_points_inward() {
        let s = ProblemSpec::unit_masses(3, 2, 0.5).unwrap();
        let h = 3f64.sqrt() / 2.0;
        let x = cfg(2, &[0.0, 0.0, 1.0, 0.0, 0.5, h]);
        let c = [0.5, h / 3.0];
        let g = potential_gradient(&s, &x).unwrap();
        for i in 0..3 {
            let rel = [x.body(i)[0] - c[0], x.body(i)[1] - c[1]];
            let gi = g.body(i);
            let cross = rel[0] * gi[1] - rel[1] * gi[0];
            assert!(cross.abs() < 1e-14);
            assert!(rel[0] * gi[0] + rel[1] * gi[1] < 0.0);
        }
    }

    #[test]
    fn hamiltonian_examples() {
        let s = ProblemSpec::unit_masses(2, 1, 0.5).unwrap();
        let x = cfg(1, &[0.0, 1.0]);
        assert_eq!(hamiltonian(&s, &x, &Configuration::zeros(2, 1)), -1.0);
        let p = cfg(1, &[1.0, -1.0]);
        assert!(hamiltonian(&s, &x, &p).abs() < 1e-15);
        let s = ProblemSpec::new(2, vec![2.0, 0.5], 0.4).unwrap();
        let x = cfg(2, &[0.0, 0.0, 1.0, 1.0]);
        let v = cfg(2, &[0.3, -0.1, 0.2, 0.7]);
        let e = energy(&s, &x, &v);
        assert!((hamiltonian(&s, &x, &legendre(&s, &v)) - e.total_energy).abs() < 1e-14);
        assert_eq!(e.total_energy, e.kinetic - e.potential_value);
    }

    #[test]
    fn central_two_body() {
        let s = ProblemSpec::unit_masses(2, 2, 0.5).unwrap();
        let cc = find_central_configuration(&s, 7, 4).unwrap();
        assert!((cc.u0 - 1.0 / 2f64.sqrt()).abs() < 1e-10);
        assert!((cc.config.moment_of_inertia(&s.masses) - 1.0).abs() < 1e-10);
        assert!(cc.is_minimal);
    }

    #[test]
    fn central_lagrange_triangle() {
        let s = ProblemSpec::unit_masses(3, 2, 0.5).unwrap();
        let cc = find_central_configuration(&s, 1, 8).unwrap();
        assert!((cc.u0 - 3.0).abs() < 1e-6, "{}", cc.u0);
        assert!(cc.is_minimal);
        assert!(cc.residual < CENTRAL_RESIDUAL_TOL);
    }

    #[test]
    fn parabolic_amplitude_lagrange() {
        let c = parabolic_amplitude(3.0, 0.5);
        assert!((c - 13.5f64.powf(1.0 / 3.0)).abs() < 1e-14);
        // zero-energy radial equation rdot^2 = 2 U_0 r^{-2 kappa}
        for &t in &[0.1f64, 1.0, 7.0] {
            let r = c * t.powf(2.0 / 3.0);
            let rd = c * 2.0 / 3.0 * t.powf(-1.0 / 3.0);
            assert!((rd * rd - 6.0 / r).abs() < 1e-10 * rd * rd);
        }
    }

    #[test]
    fn parabolic_action_value() {
        let (k, p) = parabolic_action_parts(3.0, 0.5, 1.0);
        let c = 13.5f64.powf(1.0 / 3.0);
        assert!((k - c * c / 1.5).abs() < 1e-13);
        assert!((p - 9.0 / c).abs() < 1e-13);
        assert!((k - p).abs() < 1e-12 * k);
        assert!((k + p - 7.5595).abs() < 1e-4);
        let (k8, p8) = parabolic_action_parts(3.0, 0.5, 8.0);
        assert!(((k8 + p8) / (k + p) - 2.0).abs() < 1e-13);
    }

    #[test]
    fn parabolic_quadrature_matches_closed_form() {
        let spec = ProblemSpec::unit_masses(2, 1, 0.3).unwrap();
        let cc = find_central_configuration(&spec, 3, 4).unwrap();
        let (k, p) = parabolic_action_quadrature(&cc, &spec, 2.0, 50).unwrap();
        let (ke, pe) = parabolic_action_parts(cc.u0, 0.3, 2.0);
        assert!((k - ke).abs() < 1e-10 * ke && (p - pe).abs() < 1e-10 * pe);
    }

    #[test]
    fn parabolic_rejects_nonpositive_time() {
        let s = ProblemSpec::unit_masses(2, 1, 0.5).unwrap();
        let cc = CentralConfiguration {
            config: cfg(1, &[-0.5f64.sqrt(), 0.5f64.sqrt()]),
            u0: 0.5f64.sqrt(),
            is_minimal: true,
            residual: 0.0,
            restart_values: vec![],
        };
        assert!(parabolic_homothetic(&cc, &s, 0.0).is_err());
        let (x1, _) = parabolic_homothetic(&cc, &s, 1.0).unwrap();
        let (x8, _) = parabolic_homothetic(&cc, &s, 8.0).unwrap();
        for (a, b) in x1.coords.iter().zip(&x8.coords) {
            assert!((b / a - 8f64.powf(2.0 / 3.0)).abs() < 1e-13);
        }
    }
}
