//! Gaussian quadrature rules (Legendre, Hermite, Laguerre).
//!
//! Nodes are roots of the orthogonal polynomial, found by Newton iteration
//! on the three-term recurrence from the usual asymptotic initial guesses.

use std::f64::consts::PI;

const MAX_NEWTON: usize = 100;
const NEWTON_TOL: f64 = 1e-15;

#[derive(Clone, Debug)]
pub struct QuadratureRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }
}

/// Gauss–Legendre rule on `[-1, 1]` with `n` nodes.
pub fn gauss_legendre(n: usize) -> QuadratureRule {
    assert!(n > 0, "quadrature needs at least one node");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    let nf = n as f64;
    for i in 0..m {
        let mut z = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..MAX_NEWTON {
            let (p, d) = legendre_with_derivative(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < NEWTON_TOL {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, z);
        dp = if d != 0.0 { d } else { dp };
        let w = 2.0 / ((1.0 - z * z) * dp * dp);
        nodes[i] = -z;
        nodes[n - 1 - i] = z;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    QuadratureRule { nodes, weights }
}

fn legendre_with_derivative(n: usize, z: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = z;
    for j in 2..=n {
        let jf = j as f64;
        let p2 = ((2.0 * jf - 1.0) * z * p1 - (jf - 1.0) * p0) / jf;
        p0 = p1;
        p1 = p2;
    }
    let p = if n == 0 { 1.0 } else { p1 };
    let d = n as f64 * (z * p - p0) / (z * z - 1.0);
    (p, d)
}

/// Gauss–Legendre rule mapped to `[a, b]`.
pub fn gauss_legendre_on(n: usize, a: f64, b: f64) -> QuadratureRule {
    let base = gauss_legendre(n);
    let half = 0.5 * (b - a);
    let mid = 0.5 * (b + a);
    QuadratureRule {
        nodes: base.nodes.iter().map(|&x| mid + half * x).collect(),
        weights: base.weights.iter().map(|&w| half * w).collect(),
    }
}

/// Gauss–Hermite rule for the weight `exp(-x²)` on the real line.
pub fn gauss_hermite(n: usize) -> QuadratureRule {
    assert!(n > 0, "quadrature needs at least one node");
    let pim4 = PI.powf(-0.25);
    let nf = n as f64;
    let m = n.div_ceil(2);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let mut z = 0.0f64;
    for i in 0..m {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-0.16667),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * nodes[0],
            3 => 1.91 * z - 0.91 * nodes[1],
            _ => 2.0 * z - nodes[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..MAX_NEWTON {
            // Orthonormal Hermite recurrence.
            let mut p1 = pim4;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let dz = p1 / pp;
            z -= dz;
            if dz.abs() < NEWTON_TOL * z.abs().max(1.0) {
                break;
            }
        }
        nodes[i] = z;
        nodes[n - 1 - i] = -z;
        weights[i] = 2.0 / (pp * pp);
        weights[n - 1 - i] = weights[i];
    }
    // Return nodes in ascending order.
    nodes.reverse();
    weights.reverse();
    QuadratureRule { nodes, weights }
}

/// Gauss–Laguerre rule for the weight `exp(-x)` on `[0, ∞)`.
pub fn gauss_laguerre(n: usize) -> QuadratureRule {
    assert!(n > 0, "quadrature needs at least one node");
    let nf = n as f64;
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let mut z = 0.0f64;
    for i in 0..n {
        z = match i {
            0 => 3.0 / (1.0 + 2.4 * nf),
            1 => z + 15.0 / (1.0 + 2.5 * nf),
            _ => {
                let ai = (i - 1) as f64;
                z + ((1.0 + 2.55 * ai) / (1.9 * ai)) * (z - nodes[i - 2])
            }
        };
        let mut pp = 0.0;
        let mut p2 = 0.0;
        for _ in 0..MAX_NEWTON {
            let mut p1 = 1.0;
            p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = ((2.0 * jf + 1.0 - z) * p2 - jf * p3) / (jf + 1.0);
            }
            pp = (nf * p1 - nf * p2) / z;
            let dz = p1 / pp;
            z -= dz;
            if dz.abs() < NEWTON_TOL * z.abs().max(1.0) {
                break;
            }
        }
        nodes[i] = z;
        weights[i] = -1.0 / (pp * nf * p2);
    }
    QuadratureRule { nodes, weights }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn legendre_integrates_polynomials_exactly() {
        for n in [1usize, 2, 5, 8, 16, 64] {
            let rule = gauss_legendre(n);
            let total: f64 = rule.weights.iter().sum();
            assert!((total - 2.0).abs() < 1e-13, "n = {n}");
            // degree 2n - 1 exact
            let deg = 2 * n - 2;
            let exact = 2.0 / (deg as f64 + 1.0);
            let got = rule.integrate(|x| x.powi(deg as i32));
            assert!((got - exact).abs() < 1e-12, "n = {n}: {got} vs {exact}");
        }
        let r = gauss_legendre_on(64, 0.0, 2.0);
        assert!((r.integrate(|x| x.exp()) - (2f64.exp() - 1.0)).abs() < 1e-13);
    }

    #[test]
    fn hermite_moments() {
        for n in [8usize, 16, 32, 40] {
            let rule = gauss_hermite(n);
            let sqrt_pi = PI.sqrt();
            assert!((rule.integrate(|_| 1.0) - sqrt_pi).abs() < 1e-13, "n = {n}");
            assert!((rule.integrate(|x| x * x) - sqrt_pi / 2.0).abs() < 1e-13);
            assert!((rule.integrate(|x| x.powi(4)) - 0.75 * sqrt_pi).abs() < 1e-12);
            assert!(rule.nodes.windows(2).all(|w| w[0] < w[1]));
        }
        // ∫ e^{-x²} cos x dx = √π e^{-1/4}
        let rule = gauss_hermite(32);
        let want = PI.sqrt() * (-0.25f64).exp();
        assert!((rule.integrate(f64::cos) - want).abs() < 1e-14);
    }

    #[test]
    fn laguerre_moments() {
        for n in [8usize, 16, 32] {
            let rule = gauss_laguerre(n);
            assert!((rule.integrate(|_| 1.0) - 1.0).abs() < 1e-12, "n = {n}");
            // ∫ x^k e^{-x} = k!
            assert!((rule.integrate(|x| x.powi(3)) - 6.0).abs() < 1e-10);
            assert!((rule.integrate(|x| x.powi(5)) - 120.0).abs() < 1e-8);
        }
    }
}
