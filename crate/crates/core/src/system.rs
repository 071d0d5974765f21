//! Mechanical Lagrangians `1/2 <v, v>_mass + U(q)` seen as flat coordinate vectors.
//!
//! The trajectory optimiser, the action quadrature and the Lax-Oleinik grid
//! are written against this trait so that the full N-body problem and its
//! reduced (centre-of-mass fixed) versions share one implementation.

/// Relative collision floor: a separation below `COLLISION_FLOOR (1 + ||q||)` is a collision.
pub const COLLISION_FLOOR: f64 = 1e-13;

/// A natural mechanical system with diagonal mass matrix and a potential that
/// is `+inf` on its singular (collision) set.
pub trait Lagrangian: Sync {
    /// Number of flat coordinates.
    fn dof(&self) -> usize;

    /// Dimension of one point; coordinates group into `dof / point_dim` points.
    fn point_dim(&self) -> usize;

    /// Kinetic weight of flat coordinate `k`.
    fn coordinate_mass(&self, k: usize) -> f64;

    /// Smallest point mass (the `m` of the lower bound `phi >= m/(2T) ||x-y||^2`).
    fn min_mass(&self) -> f64;

    /// Homogeneity exponent of the potential (degree `-2 kappa`).
    fn kappa(&self) -> f64;

    /// Potential energy; `f64::INFINITY` below the collision floor.
    fn potential(&self, q: &[f64]) -> f64;

    /// Potential and its Euclidean coordinate gradient. `grad` is overwritten;
    /// its content is unspecified when the returned value is infinite.
    fn potential_and_gradient(&self, q: &[f64], grad: &mut [f64]) -> f64;

    /// Distance from `q` to the collision set.
    fn collision_distance(&self, q: &[f64]) -> f64;

    /// Smallest distance to the collision set along the segment `[a, b]`.
    fn segment_clearance(&self, a: &[f64], b: &[f64]) -> f64;

    /// The segment `[a, b]` passes below the collision floor.
    fn segment_collides(&self, a: &[f64], b: &[f64]) -> bool {
        let scale = 1.0 + self.max_norm(a).max(self.max_norm(b));
        self.segment_clearance(a, b) < COLLISION_FLOOR * scale
    }

    /// Max over points of the Euclidean norm.
    fn max_norm(&self, q: &[f64]) -> f64 {
        q.chunks_exact(self.point_dim())
            .map(|p| p.iter().map(|c| c * c).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    /// `1/2 sum_k m_k v_k^2`.
    fn kinetic(&self, v: &[f64]) -> f64 {
        0.5 * v
            .iter()
            .enumerate()
            .map(|(k, vk)| self.coordinate_mass(k) * vk * vk)
            .sum::<f64>()
    }
}
