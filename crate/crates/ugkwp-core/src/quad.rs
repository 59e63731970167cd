//! Angular quadrature for slab ordinates and isotropic direction sampling.

use rand::Rng;

/// Ordinate set on `mu in [-1, 1]` with weights summing to 2.
#[derive(Debug, Clone, PartialEq)]
pub struct AngularQuadrature {
    pub mu: Vec<f64>,
    pub w: Vec<f64>,
}

impl AngularQuadrature {
    pub fn gauss_legendre(n: usize) -> Self {
        let (mu, w) = gauss_legendre(n);
        AngularQuadrature { mu, w }
    }

    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    /// `sum_k w_k f(mu_k)`, the slab angular integral of `f`.
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.mu
            .iter()
            .zip(&self.w)
            .map(|(&m, &w)| w * f(m))
            .sum()
    }
}

/// Nodes and weights of the `n`-point Gauss-Legendre rule on `[-1, 1]`.
///
/// Newton iteration on the Legendre recurrence; nodes are returned in
/// ascending order. Exact for polynomials of degree `2n - 1`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "quadrature order must be positive");
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Tricomi-style initial guess, then Newton.
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut pp = 0.0;
        for _ in 0..100 {
            let (p, dp) = legendre_with_derivative(n, z);
            pp = dp;
            let dz = p / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        let wi = 2.0 / ((1.0 - z * z) * pp * pp);
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    if n % 2 == 1 {
        // Enforce the exact midpoint for odd orders.
        x[n / 2] = 0.0;
    }
    (x, w)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// Uniform direction on the unit sphere.
pub fn sample_isotropic_direction(rng: &mut impl Rng) -> [f64; 3] {
    let mu: f64 = rng.gen_range(-1.0..=1.0);
    let phi: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let s = (1.0 - mu * mu).max(0.0).sqrt();
    [s * phi.cos(), s * phi.sin(), mu]
}

/// Uniform cosine on `[-1, 1]` for slab transport.
pub fn sample_isotropic_mu(rng: &mut impl Rng) -> f64 {
    rng.gen_range(-1.0f64..=1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn two_point_rule_is_symmetric_pair() {
        let q = AngularQuadrature::gauss_legendre(2);
        assert_abs_diff_eq!(q.mu[0], -1.0 / 3.0f64.sqrt(), epsilon = 1e-14);
        assert_abs_diff_eq!(q.mu[1], 1.0 / 3.0f64.sqrt(), epsilon = 1e-14);
        assert_abs_diff_eq!(q.w[0], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(q.w[1], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn four_point_rule_matches_reference_nodes() {
        let q = AngularQuadrature::gauss_legendre(4);
        assert_abs_diff_eq!(q.mu[2], 0.339981043584856, epsilon = 1e-13);
        assert_abs_diff_eq!(q.mu[3], 0.861136311594053, epsilon = 1e-13);
        assert_abs_diff_eq!(q.w[2], 0.652145154862546, epsilon = 1e-13);
        assert_abs_diff_eq!(q.w[3], 0.347854845137454, epsilon = 1e-13);
    }

    #[test]
    fn integrates_polynomials_exactly() {
        for n in 1..=16 {
            let q = AngularQuadrature::gauss_legendre(n);
            assert_abs_diff_eq!(q.integrate(|_| 1.0), 2.0, epsilon = 1e-12);
            for d in 1..(2 * n) {
                let exact = if d % 2 == 0 {
                    2.0 / (d as f64 + 1.0)
                } else {
                    0.0
                };
                assert_abs_diff_eq!(q.integrate(|m| m.powi(d as i32)), exact, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn weights_positive_nodes_sorted() {
        for n in [1, 3, 8, 33, 64] {
            let q = AngularQuadrature::gauss_legendre(n);
            assert!(q.w.iter().all(|&w| w > 0.0));
            assert!(q.mu.windows(2).all(|p| p[0] < p[1]));
        }
    }

    #[test]
    fn isotropic_direction_is_unit_and_balanced() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let n = 200_000;
        let mut mean = [0.0f64; 3];
        for _ in 0..n {
            let d = sample_isotropic_direction(&mut rng);
            let norm = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            assert_abs_diff_eq!(norm, 1.0, epsilon = 1e-12);
            for a in 0..3 {
                mean[a] += d[a];
            }
        }
        for a in 0..3 {
            assert!((mean[a] / n as f64).abs() < 5e-3);
        }
    }
}
