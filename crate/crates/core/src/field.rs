//! Evaluation of piecewise polynomial fields stored as per-element
//! coefficient vectors in the orthonormal reference bases.

use nalgebra::DVector;

use crate::basis::ScalarBasis;
use crate::error::Result;
use crate::mesh::{ElementGeometry, Mesh};
use crate::quadrature::triangle_quadrature;

/// Quadrature order used for errors against smooth functions.
pub const ERROR_QUADRATURE_ORDER: usize = 12;

pub fn scalar_at(basis: &ScalarBasis, geom: &ElementGeometry, c: &DVector<f64>, x: [f64; 2]) -> f64 {
    basis.eval(geom.inverse_map(x)).0.dot(c)
}

pub fn gradient_at(
    basis: &ScalarBasis,
    geom: &ElementGeometry,
    c: &DVector<f64>,
    x: [f64; 2],
) -> [f64; 2] {
    let (_, g) = basis.eval(geom.inverse_map(x));
    let mut s = [0.0; 2];
    for (gi, ci) in g.iter().zip(c.iter()) {
        s[0] += ci * gi[0];
        s[1] += ci * gi[1];
    }
    geom.push_gradient(s)
}

/// Value of a `P_k^2` field whose coefficients are the x-component block
/// followed by the y-component block.
pub fn vector_at(basis: &ScalarBasis, geom: &ElementGeometry, c: &DVector<f64>, x: [f64; 2]) -> [f64; 2] {
    let n = basis.dim();
    let v = basis.eval(geom.inverse_map(x)).0;
    let mut s = [0.0; 2];
    for a in 0..n {
        s[0] += c[a] * v[a];
        s[1] += c[n + a] * v[a];
    }
    s
}

pub fn divergence_at(
    basis: &ScalarBasis,
    geom: &ElementGeometry,
    c: &DVector<f64>,
    x: [f64; 2],
) -> f64 {
    let n = basis.dim();
    let (_, g) = basis.eval(geom.inverse_map(x));
    (0..n)
        .map(|a| {
            let p = geom.push_gradient(g[a]);
            c[a] * p[0] + c[n + a] * p[1]
        })
        .sum()
}

/// Exact `L^2(Omega)` norm of a scalar field (the reference basis is
/// orthonormal, so the element contribution is `|det B| |c|^2`).
pub fn l2_norm(mesh: &Mesh, coeffs: &[DVector<f64>]) -> f64 {
    coeffs
        .iter()
        .enumerate()
        .map(|(k, c)| mesh.geometry(k).det.abs() * c.norm_squared())
        .sum::<f64>()
        .sqrt()
}

/// `(u, 1)_K` for a scalar field.
pub fn element_mean_integral(basis: &ScalarBasis, geom: &ElementGeometry, c: &DVector<f64>) -> f64 {
    // only the constant basis function has nonzero mean; it equals sqrt(2)
    // on the reference triangle
    let phi0 = basis.eval([1.0 / 3.0, 1.0 / 3.0]).0[0];
    geom.det.abs() * 0.5 * phi0 * c[0]
}

/// `|| s u - g ||_{L^2(Omega)}` with the fixed error quadrature.
pub fn l2_distance<F: Fn([f64; 2]) -> f64 + Sync>(
    mesh: &Mesh,
    basis: &ScalarBasis,
    coeffs: &[DVector<f64>],
    scale: f64,
    exact: F,
) -> Result<f64> {
    let rule = triangle_quadrature(ERROR_QUADRATURE_ORDER)?;
    let table = basis.tabulate(&rule.points);
    let mut sum = 0.0;
    for (k, c) in coeffs.iter().enumerate() {
        let geom = mesh.geometry(k);
        let vals = &table.values * c;
        for (q, (p, w)) in rule.points.iter().zip(&rule.weights).enumerate() {
            let d = scale * vals[q] - exact(geom.map(*p));
            sum += w * geom.det.abs() * d * d;
        }
    }
    Ok(sum.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_square_mesh;

    #[test]
    fn mean_and_norm_of_constant_field() {
        let mesh = build_square_mesh(0);
        let basis = ScalarBasis::new(2).unwrap();
        let c0 = 1.0 / basis.eval([0.2, 0.2]).0[0];
        let coeffs: Vec<DVector<f64>> = (0..mesh.num_elements())
            .map(|_| {
                let mut c = DVector::zeros(basis.dim());
                c[0] = c0;
                c
            })
            .collect();
        let area = std::f64::consts::PI.powi(2);
        assert!((l2_norm(&mesh, &coeffs) - area.sqrt()).abs() < 1e-12);
        let total: f64 = (0..mesh.num_elements())
            .map(|k| element_mean_integral(&basis, &mesh.geometry(k), &coeffs[k]))
            .sum();
        assert!((total - area).abs() < 1e-12);
        assert!(l2_distance(&mesh, &basis, &coeffs, 1.0, |_| 1.0).unwrap() < 1e-12);
    }
}
