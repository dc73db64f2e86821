//! Gauss-type quadrature on the reference edge `[0, 1]` and the reference
//! triangle `{x, y >= 0, x + y <= 1}`.
//!
//! Triangle rules are collapsed (Duffy) tensor products of Gauss-Legendre
//! rules, so all weights are positive and exactness is easy to reason about:
//! `n` points per direction integrate every monomial of total degree
//! `<= 2n - 2` exactly (the Jacobian of the collapse adds one degree in the
//! radial direction).

use crate::error::{HdgError, Result};

/// Highest exactness order supported by [`triangle_quadrature`] and
/// [`edge_quadrature`].
pub const MAX_QUADRATURE_ORDER: usize = 20;

/// A quadrature rule: points in reference coordinates and positive weights.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
    pub order: usize,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Applies the rule to `f` on the reference domain.
    pub fn integrate<F: Fn([f64; 2]) -> f64>(&self, f: F) -> f64 {
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(p, w)| w * f(*p))
            .sum()
    }
}

/// Gauss-Legendre nodes and weights on `[0, 1]` with `n` points.
///
/// Nodes come from Newton iteration on the three-term Legendre recurrence,
/// started from the Chebyshev-like asymptotic guess.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                let (_, d) = legendre_with_derivative(n, x);
                dp = d;
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        // map [-1, 1] -> [0, 1]
        nodes[i] = 0.5 * (1.0 - x);
        nodes[n - 1 - i] = 0.5 * (1.0 + x);
        weights[i] = 0.5 * w;
        weights[n - 1 - i] = 0.5 * w;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for j in 2..=n {
        let jf = j as f64;
        let p2 = ((2.0 * jf - 1.0) * x * p1 - (jf - 1.0) * p0) / jf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

fn check_order(order: usize) -> Result<()> {
    if order > MAX_QUADRATURE_ORDER {
        return Err(HdgError::UnsupportedQuadrature {
            order,
            max: MAX_QUADRATURE_ORDER,
        });
    }
    Ok(())
}

/// Rule on the reference triangle exact for all monomials of total degree
/// `<= order`.
pub fn triangle_quadrature(order: usize) -> Result<QuadratureRule> {
    check_order(order)?;
    // radial direction carries one extra degree from the collapse Jacobian
    let n = (order + 2).div_ceil(2).max(1);
    let (x, w) = gauss_legendre(n);
    let mut points = Vec::with_capacity(n * n);
    let mut weights = Vec::with_capacity(n * n);
    for (u, wu) in x.iter().zip(&w) {
        for (v, wv) in x.iter().zip(&w) {
            points.push([*u, (1.0 - u) * v]);
            weights.push(wu * wv * (1.0 - u));
        }
    }
    Ok(QuadratureRule {
        points,
        weights,
        order,
    })
}

/// Rule on `[0, 1]` exact for polynomials of degree `<= order`. Points are
/// stored as `[s, 0.0]`.
pub fn edge_quadrature(order: usize) -> Result<QuadratureRule> {
    check_order(order)?;
    let n = (order + 1).div_ceil(2).max(1);
    let (x, w) = gauss_legendre(n);
    Ok(QuadratureRule {
        points: x.into_iter().map(|s| [s, 0.0]).collect(),
        weights: w,
        order,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn factorial(n: u32) -> f64 {
        (1..=n).map(f64::from).product()
    }

    /// Closed form of the monomial integral over the reference triangle.
    fn monomial_exact(a: u32, b: u32) -> f64 {
        factorial(a) * factorial(b) / factorial(a + b + 2)
    }

    #[test]
    fn triangle_rules_are_exact_up_to_their_order() {
        for order in 0..=MAX_QUADRATURE_ORDER {
            let rule = triangle_quadrature(order).unwrap();
            assert!(rule.weights.iter().all(|&w| w > 0.0));
            for deg in 0..=order as u32 {
                for a in 0..=deg {
                    let b = deg - a;
                    let got = rule.integrate(|p| p[0].powi(a as i32) * p[1].powi(b as i32));
                    let exact = monomial_exact(a, b);
                    assert!(
                        ((got - exact) / exact).abs() < 1e-13,
                        "order {order}, x^{a} y^{b}: {got} vs {exact}"
                    );
                }
            }
        }
    }

    #[test]
    fn triangle_spot_values() {
        let r = triangle_quadrature(5).unwrap();
        assert!((r.integrate(|_| 1.0) - 0.5).abs() < 1e-15);
        assert!((r.integrate(|p| p[0]) - 1.0 / 6.0).abs() < 1e-15);
        assert!((r.integrate(|p| p[0] * p[1]) - 1.0 / 24.0).abs() < 1e-15);
        assert!((r.integrate(|p| p[0].powi(3) * p[1].powi(2)) - 1.0 / 420.0).abs() < 1e-16);
    }

    #[test]
    fn edge_rules_are_exact() {
        for order in 0..=MAX_QUADRATURE_ORDER {
            let rule = edge_quadrature(order).unwrap();
            for d in 0..=order as i32 {
                let got = rule.integrate(|p| p[0].powi(d));
                let exact = 1.0 / (d as f64 + 1.0);
                assert!(((got - exact) / exact).abs() < 1e-13);
            }
        }
        let r = edge_quadrature(5).unwrap();
        assert!((r.integrate(|p| p[0].powi(5)) - 1.0 / 6.0).abs() < 1e-15);
        assert!((r.integrate(|p| p[0] * p[0]) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn unsupported_order_is_an_error() {
        assert!(triangle_quadrature(21).is_err());
        assert!(edge_quadrature(99).is_err());
    }
}
