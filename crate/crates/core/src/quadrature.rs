//! Gauss-Legendre rules and geometrically graded composite meshes.

/// 5-point Gauss-Legendre abscissae on `[0, 1]`.
pub const GL5_NODES: [f64; 5] = [
    0.046_910_077_030_668_004,
    0.230_765_344_947_158_45,
    0.5,
    0.769_234_655_052_841_6,
    0.953_089_922_969_332,
];

/// Weights matching [`GL5_NODES`], summing to one.
pub const GL5_WEIGHTS: [f64; 5] = [
    0.118_463_442_528_094_54,
    0.239_314_335_249_683_23,
    0.284_444_444_444_444_44,
    0.239_314_335_249_683_23,
    0.118_463_442_528_094_54,
];

/// Refinement ratio of graded meshes.
pub const GRADING_RATIO: f64 = 0.5;
/// Number of geometric levels added next to a singular point.
pub const GRADING_LEVELS: usize = 12;

/// n-point Gauss-Legendre rule on `[0, 1]` (Newton iteration on `P_n`).
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n > 0);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..(n + 1) / 2 {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            if n == 1 {
                p1 = z;
                p0 = 1.0;
            } else {
                for k in 2..=n {
                    let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = p2;
                }
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - z * z) * dp * dp);
        nodes[i] = 0.5 * (1.0 - z);
        nodes[n - 1 - i] = 0.5 * (1.0 + z);
        weights[i] = 0.5 * w;
        weights[n - 1 - i] = 0.5 * w;
    }
    (nodes, weights)
}

/// Integrates `f` over `[a, b]` with the 5-point rule on one cell.
pub fn gl5(a: f64, b: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
    let h = b - a;
    GL5_NODES
        .iter()
        .zip(GL5_WEIGHTS)
        .map(|(&s, w)| w * f(a + s * h))
        .sum::<f64>()
        * h
}

/// Breakpoints of `[0, 1]` refined geometrically towards 0: `0, r^L, r^{L-1}, ..., r, 1`
/// followed by `cells` uniform cells on the remainder when `cells > 1`.
pub fn graded_unit_breaks(levels: usize, cells: usize) -> Vec<f64> {
    let cells = cells.max(1);
    let first = 1.0 / cells as f64;
    let mut out = vec![0.0];
    for l in (1..=levels).rev() {
        out.push(first * GRADING_RATIO.powi(l as i32));
    }
    for k in 1..=cells {
        out.push(k as f64 / cells as f64);
    }
    out
}

/// Composite 5-point rule on `[0, 1]` with a mesh graded towards 0.
pub fn graded_gl5(levels: usize, cells: usize, mut f: impl FnMut(f64) -> f64) -> f64 {
    let breaks = graded_unit_breaks(levels, cells);
    breaks.windows(2).map(|w| gl5(w[0], w[1], &mut f)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gl5_constants_match_newton() {
        let (x, w) = gauss_legendre(5);
        for k in 0..5 {
            assert!((x[k] - GL5_NODES[k]).abs() < 1e-15);
            assert!((w[k] - GL5_WEIGHTS[k]).abs() < 1e-15);
        }
    }

    #[test]
    fn gl5_exact_for_degree_nine() {
        let v = gl5(-1.0, 2.0, |t| t.powi(9) - 3.0 * t.powi(4));
        let exact = (2f64.powi(10) - 1.0) / 10.0 - 3.0 * (32.0 + 1.0) / 5.0;
        assert!((v - exact).abs() < 1e-11);
    }

    #[test]
    fn graded_rule_handles_weak_singularity() {
        // int_0^1 t^{-1/2} dt = 2
        let v = graded_gl5(40, 4, |t| t.powf(-0.5));
        assert!((v - 2.0).abs() < 1e-6, "{v}");
    }

    #[test]
    fn breaks_are_increasing() {
        let b = graded_unit_breaks(GRADING_LEVELS, 8);
        assert!(b.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(*b.last().unwrap(), 1.0);
    }
}
