//! Configuration-space primitives: problem description, configurations with
//! their two norms, mutual distances and lambda-cluster partitions.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

/// Bodies, ambient dimension, masses and homogeneity exponent.
///
/// Fixes the Lagrangian `L(x, v) = 1/2 sum m_i |v_i|^2 + U_kappa(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub n_bodies: usize,
    pub dim: usize,
    pub masses: Vec<f64>,
    pub kappa: f64,
}

impl ProblemSpec {
    pub fn new(dim: usize, masses: Vec<f64>, kappa: f64) -> Result<Self> {
        if dim == 0 {
            return domain("dimension must be positive");
        }
        if masses.is_empty() {
            return domain("at least one body is required");
        }
        if let Some(m) = masses.iter().find(|m| !(m.is_finite() && **m > 0.0)) {
            return domain(format!("masses must be finite and positive, got {m}"));
        }
        if !(kappa > 0.0 && kappa < 1.0) {
            return domain(format!("kappa must lie in (0, 1), got {kappa}"));
        }
        Ok(Self {
            n_bodies: masses.len(),
            dim,
            masses,
            kappa,
        })
    }

    /// `n` unit masses in dimension `dim`.
    pub fn unit_masses(n: usize, dim: usize, kappa: f64) -> Result<Self> {
        Self::new(dim, vec![1.0; n], kappa)
    }

    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum()
    }

    pub fn min_mass(&self) -> f64 {
        self.masses.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Restriction to a subset of bodies (same dimension and exponent).
    pub fn subsystem(&self, bodies: &[usize]) -> Self {
        Self {
            n_bodies: bodies.len(),
            dim: self.dim,
            masses: bodies.iter().map(|&i| self.masses[i]).collect(),
            kappa: self.kappa,
        }
    }

    /// Checks that `x` has the shape this problem expects.
    pub fn check(&self, x: &Configuration) -> Result<()> {
        if x.dim != self.dim || x.n_bodies() != self.n_bodies {
            return domain(format!(
                "configuration has {} bodies in dimension {}, problem expects {} in dimension {}",
                x.n_bodies(),
                x.dim,
                self.n_bodies,
                self.dim
            ));
        }
        Ok(())
    }
}

/// N points of a d-dimensional Euclidean space, stored body-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Configuration {
    pub dim: usize,
    pub coords: Vec<f64>,
}

impl Configuration {
    pub fn new(dim: usize, coords: Vec<f64>) -> Result<Self> {
        if dim == 0 || coords.len() % dim != 0 {
            return domain(format!(
                "{} coordinates do not split into points of dimension {dim}",
                coords.len()
            ));
        }
        Ok(Self { dim, coords })
    }

    pub fn zeros(n_bodies: usize, dim: usize) -> Self {
        Self {
            dim,
            coords: vec![0.0; n_bodies * dim],
        }
    }

    pub fn from_points(points: &[Vec<f64>]) -> Result<Self> {
        let dim = points.first().map(Vec::len).unwrap_or(0);
        if points.iter().any(|p| p.len() != dim) {
            return domain("points have inconsistent dimensions");
        }
        Self::new(dim, points.concat())
    }

    pub fn n_bodies(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn body(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn body_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn bodies(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks_exact(self.dim)
    }

    /// `max_i ||r_i||`.
    pub fn max_norm(&self) -> f64 {
        self.bodies().map(norm).fold(0.0, f64::max)
    }

    /// Moment of inertia about the origin, `sum m_i ||r_i||^2`.
    pub fn moment_of_inertia(&self, masses: &[f64]) -> f64 {
        self.bodies()
            .zip(masses)
            .map(|(r, m)| m * dot(r, r))
            .sum()
    }

    /// Norm induced by the mass scalar product.
    pub fn mass_norm(&self, masses: &[f64]) -> f64 {
        self.moment_of_inertia(masses).sqrt()
    }

    pub fn mass_dot(&self, other: &Configuration, masses: &[f64]) -> f64 {
        self.bodies()
            .zip(other.bodies())
            .zip(masses)
            .map(|((a, b), m)| m * dot(a, b))
            .sum()
    }

    pub fn sub(&self, other: &Configuration) -> Configuration {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn add(&self, other: &Configuration) -> Configuration {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn scale(&self, s: f64) -> Configuration {
        Configuration {
            dim: self.dim,
            coords: self.coords.iter().map(|c| c * s).collect(),
        }
    }

    /// `self + s (other - self)`.
    pub fn lerp(&self, other: &Configuration, s: f64) -> Configuration {
        self.zip_with(other, |a, b| a + s * (b - a))
    }

    /// Centre of mass.
    pub fn center_of_mass(&self, masses: &[f64]) -> Vec<f64> {
        let total: f64 = masses.iter().sum();
        let mut c = vec![0.0; self.dim];
        for (r, m) in self.bodies().zip(masses) {
            for (ck, rk) in c.iter_mut().zip(r) {
                *ck += m * rk / total;
            }
        }
        c
    }

    /// Sub-configuration made of the listed bodies.
    pub fn select(&self, bodies: &[usize]) -> Configuration {
        let mut coords = Vec::with_capacity(bodies.len() * self.dim);
        for &i in bodies {
            coords.extend_from_slice(self.body(i));
        }
        Configuration {
            dim: self.dim,
            coords,
        }
    }

    pub fn points(&self) -> Vec<Vec<f64>> {
        self.bodies().map(<[f64]>::to_vec).collect()
    }

    fn zip_with(&self, other: &Configuration, f: impl Fn(f64, f64) -> f64) -> Configuration {
        debug_assert_eq!(self.coords.len(), other.coords.len());
        Configuration {
            dim: self.dim,
            coords: self
                .coords
                .iter()
                .zip(&other.coords)
                .map(|(a, b)| f(*a, *b))
                .collect(),
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Minimal distance between two bodies; zero exactly at collisions.
pub fn min_mutual_distance(x: &Configuration) -> Result<f64> {
    let n = x.n_bodies();
    if n < 2 {
        return domain("mutual distances need at least two bodies");
    }
    let mut best = f64::INFINITY;
    for i in 0..n {
        for j in i + 1..n {
            best = best.min(dist(x.body(i), x.body(j)));
        }
    }
    Ok(best)
}

/// Absolute tolerance under which two input points count as the same point.
pub const DEDUP_TOL: f64 = 1e-12;
/// Relative slack on the closed-ball membership test.
pub const BALL_REL_TOL: f64 = 1e-9;

/// A lambda-cluster partition of size `size` of a finite point set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterPartition {
    /// Indices (into the input list) of the cluster centers.
    pub centers: Vec<usize>,
    /// Center coordinates, in the same order as `centers`.
    pub center_points: Vec<Vec<f64>>,
    pub size: f64,
    pub lambda: f64,
    pub epsilon: f64,
}

impl ClusterPartition {
    /// Pairwise center separation must be at least `2 lambda size`.
    pub fn separation_holds(&self) -> bool {
        let need = 2.0 * self.lambda * self.size;
        let c = &self.center_points;
        (0..c.len()).all(|i| (i + 1..c.len()).all(|j| dist(&c[i], &c[j]) >= need))
    }

    /// Every point must lie in a closed ball `B(center, size)`.
    pub fn covers(&self, points: &[Vec<f64>]) -> bool {
        let r = self.size * (1.0 + BALL_REL_TOL);
        points
            .iter()
            .all(|p| self.center_points.iter().any(|c| dist(p, c) <= r))
    }
}

/// Builds a lambda-cluster partition with `epsilon <= size < (2 lambda)^|A| epsilon`.
///
/// Stage `k` works at the ladder size `(2 lambda)^(k-1) epsilon`. The surviving
/// set is tested at the larger of the ladder size and its actual covering
/// radius; if some pair is closer than `2 lambda` times that size, the
/// higher-indexed point of the first such pair (lexicographic order) is
/// dropped and the ladder advances. The covering radius never exceeds
/// `2 lambda / (2 lambda - 1)` times the ladder size, which keeps the final
/// size under `(2 lambda)^|A| epsilon`.
pub fn cluster_partition(points: &[Vec<f64>], lambda: f64, epsilon: f64) -> Result<ClusterPartition> {
    if points.is_empty() {
        return domain("cluster partition of an empty set");
    }
    if !(lambda > 1.0) {
        return domain(format!("lambda must exceed 1, got {lambda}"));
    }
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return domain(format!("epsilon must be positive, got {epsilon}"));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return domain("points have inconsistent dimensions");
    }

    let mut alive: Vec<usize> = Vec::new();
    for (i, p) in points.iter().enumerate() {
        if !alive.iter().any(|&j| dist(p, &points[j]) <= DEDUP_TOL) {
            alive.push(i);
        }
    }

    let mut ladder = epsilon;
    loop {
        let cover = points
            .iter()
            .map(|p| {
                alive
                    .iter()
                    .map(|&c| dist(p, &points[c]))
                    .fold(f64::INFINITY, f64::min)
            })
            .fold(0.0, f64::max);
        let size = ladder.max(cover);
        let need = 2.0 * lambda * size;
        let violation = (0..alive.len()).find_map(|a| {
            (a + 1..alive.len())
                .find(|&b| dist(&points[alive[a]], &points[alive[b]]) < need)
        });
        match violation {
            None => {
                return Ok(ClusterPartition {
                    center_points: alive.iter().map(|&c| points[c].clone()).collect(),
                    centers: alive,
                    size,
                    lambda,
                    epsilon,
                })
            }
            Some(b) => {
                alive.remove(b);
                ladder *= 2.0 * lambda;
            }
        }
    }
}

/// Splits body indices into clusters: body `i` joins cluster `j` when both its
/// positions in `x` and `y` lie in `B(center_j, 2 size)`. Entry `j` of the
/// result belongs to `partition.center_points[j]` and may be empty.
pub fn assign_clusters(
    x: &Configuration,
    y: &Configuration,
    partition: &ClusterPartition,
) -> Result<Vec<Vec<usize>>> {
    if x.dim != y.dim || x.n_bodies() != y.n_bodies() {
        return domain("configurations have different shapes");
    }
    let radius = 2.0 * partition.size * (1.0 + BALL_REL_TOL);
    let mut clusters = vec![Vec::new(); partition.center_points.len()];
    for i in 0..x.n_bodies() {
        let j = partition
            .center_points
            .iter()
            .position(|c| dist(x.body(i), c) <= radius && dist(y.body(i), c) <= radius)
            .ok_or_else(|| {
                Error::Consistency(format!(
                    "body {i} is not inside any doubled cluster ball (radius {radius})"
                ))
            })?;
        clusters[j].push(i);
    }
    Ok(clusters)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(points: &[f64]) -> Vec<Vec<f64>> {
        points.iter().map(|&p| vec![p]).collect()
    }

    #[test]
    fn min_distance_examples() {
        let x = Configuration::new(1, vec![0.0, 3.0]).unwrap();
        assert_eq!(min_mutual_distance(&x).unwrap(), 3.0);
        let x = Configuration::new(2, vec![0.0, 0.0, 1.0, 1.0, 0.0, 0.0]).unwrap();
        assert_eq!(min_mutual_distance(&x).unwrap(), 0.0);
        let s3 = 3f64.sqrt() / 2.0;
        let x = Configuration::new(2, vec![0.0, 0.0, 1.0, 0.0, 0.5, s3]).unwrap();
        assert!((min_mutual_distance(&x).unwrap() - 1.0).abs() < 1e-15);
        let x = Configuration::new(2, vec![1.0, 2.0]).unwrap();
        assert!(matches!(min_mutual_distance(&x), Err(Error::Domain(_))));
    }

    #[test]
    fn spec_rejects_bad_inputs() {
        assert!(ProblemSpec::new(2, vec![1.0, -1.0], 0.5).is_err());
        assert!(ProblemSpec::new(2, vec![1.0, 1.0], 1.0).is_err());
        assert!(ProblemSpec::new(0, vec![1.0], 0.5).is_err());
        let s = ProblemSpec::new(3, vec![1.0, 2.0, 0.5], 0.3).unwrap();
        assert_eq!(s.total_mass(), 3.5);
        assert_eq!(s.min_mass(), 0.5);
    }

    #[test]
    fn norms_and_inertia() {
        let x = Configuration::new(2, vec![3.0, 4.0, 0.0, 1.0]).unwrap();
        let m = [2.0, 3.0];
        assert_eq!(x.max_norm(), 5.0);
        assert_eq!(x.moment_of_inertia(&m), 2.0 * 25.0 + 3.0);
        let i = x.moment_of_inertia(&m);
        assert!(i >= 2.0 * x.max_norm().powi(2));
        assert!(i <= 5.0 * 2.0 * x.max_norm().powi(2));
    }

    #[test]
    fn partition_far_pair() {
        let p = cluster_partition(&line(&[0.0, 100.0]), 2.0, 1.0).unwrap();
        assert_eq!(p.centers, vec![0, 1]);
        assert_eq!(p.size, 1.0);
    }

    #[test]
    fn partition_three_points_trace() {
        // size 1: (0,1) too close, drop 1; size 4: (0,10) too close, drop 10;
        // size 16: {0} covers 10.
        let pts = line(&[0.0, 1.0, 10.0]);
        let p = cluster_partition(&pts, 2.0, 1.0).unwrap();
        assert_eq!(p.centers, vec![0]);
        assert_eq!(p.size, 16.0);
        assert!(p.size >= 1.0 && p.size < 64.0);
        assert!(p.covers(&pts) && p.separation_holds());
    }

    #[test]
    fn partition_singleton() {
        let p = cluster_partition(&[vec![3.0, -1.0]], 5.0, 0.25).unwrap();
        assert_eq!(p.centers, vec![0]);
        assert_eq!(p.size, 0.25);
    }

    #[test]
    fn partition_chain_needs_covering_radius() {
        // Dropping 19.98 at size 1 and then 15.99 at size 4 leaves {0} whose
        // ladder size 16 does not cover 19.98; the covering radius is used.
        let pts = line(&[0.0, 15.99, 19.98]);
        let p = cluster_partition(&pts, 2.0, 1.0).unwrap();
        assert!(p.covers(&pts));
        assert!(p.separation_holds());
        assert!(p.size >= 1.0 && p.size < 64.0);
        assert!((p.size - 19.98).abs() < 1e-12);
    }

    #[test]
    fn partition_deduplicates() {
        let pts = line(&[1.0, 1.0, 1.0 + 1e-13, 50.0]);
        let p = cluster_partition(&pts, 2.0, 1.0).unwrap();
        assert_eq!(p.centers, vec![0, 3]);
    }

    #[test]
    fn partition_rejects_bad_args() {
        assert!(cluster_partition(&[], 2.0, 1.0).is_err());
        assert!(cluster_partition(&line(&[0.0]), 1.0, 1.0).is_err());
        assert!(cluster_partition(&line(&[0.0]), 2.0, 0.0).is_err());
    }

    #[test]
    fn assign_singletons_when_far() {
        let x = Configuration::new(1, vec![0.0, 100.0]).unwrap();
        let p = cluster_partition(&x.points(), 2.0, 1.0).unwrap();
        assert_eq!(assign_clusters(&x, &x, &p).unwrap(), vec![vec![0], vec![1]]);
    }

    #[test]
    fn assign_single_cluster() {
        let x = Configuration::new(1, vec![0.0, 1.0, 10.0]).unwrap();
        let p = cluster_partition(&x.points(), 2.0, 1.0).unwrap();
        assert_eq!(assign_clusters(&x, &x, &p).unwrap(), vec![vec![0, 1, 2]]);
    }

    #[test]
    fn assign_detects_outside_body() {
        let x = Configuration::new(1, vec![0.0, 100.0]).unwrap();
        let y = Configuration::new(1, vec![0.0, 105.0]).unwrap();
        let p = cluster_partition(&x.points(), 2.0, 1.0).unwrap();
        assert!(matches!(
            assign_clusters(&x, &y, &p),
            Err(Error::Consistency(_))
        ));
    }
}
