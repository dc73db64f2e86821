//! Polynomial bases on the reference triangle and the reference edge.
//!
//! Scalar bases are monomials in coordinates centred at the reference
//! centroid, orthonormalised once against the exact reference Gram matrix.
//! The ordering is by total degree, so the first `dim(P_j)` functions of a
//! degree-`k` basis span `P_j` for every `j <= k`.

use nalgebra::{DMatrix, DVector};

use crate::error::{HdgError, Result};
use crate::quadrature::triangle_quadrature;

/// Largest scalar degree a basis can be built for. Postprocessing needs
/// one degree above the trace degree.
pub const MAX_SCALAR_DEGREE: usize = 5;

const CENTROID: [f64; 2] = [1.0 / 3.0, 1.0 / 3.0];

pub fn scalar_dim(k: usize) -> usize {
    (k + 1) * (k + 2) / 2
}

pub fn rt_dim(k: usize) -> usize {
    (k + 1) * (k + 3)
}

fn monomial_exponents(k: usize) -> Vec<(i32, i32)> {
    let mut out = Vec::with_capacity(scalar_dim(k));
    for d in 0..=k as i32 {
        for b in 0..=d {
            out.push((d - b, b));
        }
    }
    out
}

/// Centred monomial values and gradients at a reference point.
fn monomials(exps: &[(i32, i32)], p: [f64; 2]) -> (Vec<f64>, Vec<[f64; 2]>) {
    let (x, y) = (p[0] - CENTROID[0], p[1] - CENTROID[1]);
    let pw = |v: f64, e: i32| if e <= 0 { 1.0 } else { v.powi(e) };
    let vals = exps.iter().map(|&(a, b)| pw(x, a) * pw(y, b)).collect();
    let grads = exps
        .iter()
        .map(|&(a, b)| {
            let gx = if a == 0 { 0.0 } else { a as f64 * pw(x, a - 1) * pw(y, b) };
            let gy = if b == 0 { 0.0 } else { b as f64 * pw(x, a) * pw(y, b - 1) };
            [gx, gy]
        })
        .collect();
    (vals, grads)
}

/// Values and reference gradients of a scalar basis at a set of points;
/// rows are points, columns basis functions.
#[derive(Debug, Clone)]
pub struct ScalarTable {
    pub values: DMatrix<f64>,
    pub dx: DMatrix<f64>,
    pub dy: DMatrix<f64>,
}

/// Orthonormal basis of `P_k` on the reference triangle.
#[derive(Debug, Clone)]
pub struct ScalarBasis {
    degree: usize,
    exponents: Vec<(i32, i32)>,
    /// Row `i` holds the monomial coefficients of basis function `i`.
    coefficients: DMatrix<f64>,
    gram_condition: f64,
}

impl ScalarBasis {
    pub fn new(degree: usize) -> Result<Self> {
        if degree > MAX_SCALAR_DEGREE {
            return Err(HdgError::UnsupportedDegree {
                degree,
                max: MAX_SCALAR_DEGREE,
            });
        }
        let exponents = monomial_exponents(degree);
        let n = exponents.len();
        let rule = triangle_quadrature(2 * degree)?;
        let mut gram = DMatrix::<f64>::zeros(n, n);
        for (p, w) in rule.points.iter().zip(&rule.weights) {
            let (v, _) = monomials(&exponents, *p);
            for i in 0..n {
                for j in 0..n {
                    gram[(i, j)] += w * v[i] * v[j];
                }
            }
        }
        let eig = gram.clone().symmetric_eigen();
        let gram_condition = eig.eigenvalues.max() / eig.eigenvalues.min();
        let chol = gram
            .cholesky()
            .expect("monomial Gram matrix on the reference triangle is SPD");
        let l = chol.l();
        let coefficients = l
            .solve_lower_triangular(&DMatrix::identity(n, n))
            .expect("Cholesky factor is nonsingular");
        Ok(Self {
            degree,
            exponents,
            coefficients,
            gram_condition,
        })
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn dim(&self) -> usize {
        self.exponents.len()
    }

    /// Condition number of the monomial Gram matrix that was orthonormalised.
    pub fn gram_condition(&self) -> f64 {
        self.gram_condition
    }

    pub fn eval(&self, p: [f64; 2]) -> (DVector<f64>, Vec<[f64; 2]>) {
        let (mv, mg) = monomials(&self.exponents, p);
        let n = self.dim();
        let mut vals = DVector::zeros(n);
        let mut grads = vec![[0.0; 2]; n];
        for i in 0..n {
            for j in 0..=i {
                let c = self.coefficients[(i, j)];
                vals[i] += c * mv[j];
                grads[i][0] += c * mg[j][0];
                grads[i][1] += c * mg[j][1];
            }
        }
        (vals, grads)
    }

    pub fn tabulate(&self, points: &[[f64; 2]]) -> ScalarTable {
        let n = self.dim();
        let mut values = DMatrix::zeros(points.len(), n);
        let mut dx = DMatrix::zeros(points.len(), n);
        let mut dy = DMatrix::zeros(points.len(), n);
        for (q, p) in points.iter().enumerate() {
            let (v, g) = self.eval(*p);
            for i in 0..n {
                values[(q, i)] = v[i];
                dx[(q, i)] = g[i][0];
                dy[(q, i)] = g[i][1];
            }
        }
        ScalarTable { values, dx, dy }
    }
}

/// Values and gradients of the degree-`k` scalar basis at `points`.
pub fn eval_scalar_basis(k: usize, points: &[[f64; 2]]) -> Result<ScalarTable> {
    Ok(ScalarBasis::new(k)?.tabulate(points))
}

/// Basis of `P_k^2`: function `i < dim` is `(phi_i, 0)`, function
/// `dim + i` is `(0, phi_i)`.
#[derive(Debug, Clone)]
pub struct VectorBasis {
    pub scalar: ScalarBasis,
}

impl VectorBasis {
    pub fn new(degree: usize) -> Result<Self> {
        Ok(Self {
            scalar: ScalarBasis::new(degree)?,
        })
    }

    pub fn dim(&self) -> usize {
        2 * self.scalar.dim()
    }

    /// Splits a vector-basis index into (component, scalar index).
    pub fn component(&self, i: usize) -> (usize, usize) {
        let n = self.scalar.dim();
        (i / n, i % n)
    }
}

/// Values and divergences of the RT-type basis at a set of points.
#[derive(Debug, Clone)]
pub struct RtTable {
    /// `values[q][i]` is the vector value of function `i` at point `q`.
    pub values: Vec<Vec<[f64; 2]>>,
    pub divergence: DMatrix<f64>,
}

/// Basis of `P_k^2 + x P_k` on the reference triangle: the `P_k^2` basis
/// followed by `(x - c) h_j(x - c)` for the homogeneous degree-`k` monomials
/// `h_j`.
#[derive(Debug, Clone)]
pub struct RtBasis {
    degree: usize,
    vector: VectorBasis,
}

impl RtBasis {
    pub fn new(degree: usize) -> Result<Self> {
        if degree + 1 > MAX_SCALAR_DEGREE {
            return Err(HdgError::UnsupportedDegree {
                degree,
                max: MAX_SCALAR_DEGREE - 1,
            });
        }
        let basis = Self {
            degree,
            vector: VectorBasis::new(degree)?,
        };
        let rule = triangle_quadrature(2 * degree + 2)?;
        let table = basis.tabulate(&rule.points);
        let n = basis.dim();
        let mut gram = DMatrix::<f64>::zeros(n, n);
        for (q, w) in rule.weights.iter().enumerate() {
            for i in 0..n {
                for j in 0..n {
                    let (a, b) = (table.values[q][i], table.values[q][j]);
                    gram[(i, j)] += w * (a[0] * b[0] + a[1] * b[1]);
                }
            }
        }
        assert!(
            gram.cholesky().is_some(),
            "RT-type basis of degree {degree} is linearly dependent"
        );
        Ok(basis)
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn dim(&self) -> usize {
        rt_dim(self.degree)
    }

    pub fn tabulate(&self, points: &[[f64; 2]]) -> RtTable {
        let k = self.degree as i32;
        let nv = self.vector.dim();
        let ns = self.vector.scalar.dim();
        let n = self.dim();
        let mut values = Vec::with_capacity(points.len());
        let mut divergence = DMatrix::zeros(points.len(), n);
        for (q, p) in points.iter().enumerate() {
            let (v, g) = self.vector.scalar.eval(*p);
            let mut row = vec![[0.0; 2]; n];
            for i in 0..ns {
                row[i] = [v[i], 0.0];
                row[ns + i] = [0.0, v[i]];
                divergence[(q, i)] = g[i][0];
                divergence[(q, ns + i)] = g[i][1];
            }
            let (x, y) = (p[0] - CENTROID[0], p[1] - CENTROID[1]);
            for j in 0..=k {
                let h = x.powi(k - j) * y.powi(j);
                let idx = nv + j as usize;
                row[idx] = [x * h, y * h];
                // div((x - c) h) = 2h + (x - c).grad h = (k + 2) h (Euler)
                divergence[(q, idx)] = (k as f64 + 2.0) * h;
            }
            values.push(row);
        }
        RtTable { values, divergence }
    }
}

/// Vector values and divergences of the RT-type basis of degree `k`.
pub fn eval_rt_basis(k: usize, points: &[[f64; 2]]) -> Result<RtTable> {
    Ok(RtBasis::new(k)?.tabulate(points))
}

/// Orthonormal Legendre polynomials on `[0, 1]` up to `degree`.
pub fn edge_basis(degree: usize, s: f64) -> Vec<f64> {
    let x = 2.0 * s - 1.0;
    let mut p = Vec::with_capacity(degree + 1);
    p.push(1.0);
    if degree >= 1 {
        p.push(x);
    }
    for n in 2..=degree {
        let nf = n as f64;
        let next = ((2.0 * nf - 1.0) * x * p[n - 1] - (nf - 1.0) * p[n - 2]) / nf;
        p.push(next);
    }
    p.iter()
        .enumerate()
        .map(|(n, v)| v * (2.0 * n as f64 + 1.0).sqrt())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::edge_quadrature;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_interior_points(n: usize, seed: u64) -> Vec<[f64; 2]> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| loop {
                let p = [rng.random_range(0.05..0.9), rng.random_range(0.05..0.9)];
                if p[0] + p[1] < 0.95 {
                    break p;
                }
            })
            .collect()
    }

    #[test]
    fn dimensions() {
        for k in 0..=4 {
            assert_eq!(ScalarBasis::new(k).unwrap().dim(), (k + 1) * (k + 2) / 2);
            assert_eq!(VectorBasis::new(k).unwrap().dim(), (k + 1) * (k + 2));
            if k <= 3 {
                assert_eq!(RtBasis::new(k).unwrap().dim(), (k + 1) * (k + 3));
            }
            assert_eq!(edge_basis(k, 0.3).len(), k + 1);
        }
        assert_eq!(RtBasis::new(0).unwrap().dim(), 3);
        assert_eq!(RtBasis::new(1).unwrap().dim(), 8);
        assert!(ScalarBasis::new(MAX_SCALAR_DEGREE + 1).is_err());
    }

    #[test]
    fn degree_zero_and_one() {
        let t = eval_scalar_basis(0, &[[0.2, 0.3], [0.7, 0.1]]).unwrap();
        assert_eq!(t.values.ncols(), 1);
        assert!((t.values[(0, 0)] - t.values[(1, 0)]).abs() < 1e-15);
        assert_eq!(t.dx[(0, 0)], 0.0);
        assert_eq!(t.dy[(1, 0)], 0.0);
        let t1 = eval_scalar_basis(1, &random_interior_points(5, 3)).unwrap();
        for i in 0..3 {
            for q in 1..5 {
                assert!((t1.dx[(q, i)] - t1.dx[(0, i)]).abs() < 1e-13);
                assert!((t1.dy[(q, i)] - t1.dy[(0, i)]).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn scalar_basis_is_orthonormal() {
        for k in 0..=MAX_SCALAR_DEGREE {
            let b = ScalarBasis::new(k).unwrap();
            let rule = triangle_quadrature(2 * k).unwrap();
            let t = b.tabulate(&rule.points);
            let w = DMatrix::from_diagonal(&DVector::from_vec(rule.weights.clone()));
            let gram = t.values.transpose() * w * &t.values;
            let eye = DMatrix::<f64>::identity(b.dim(), b.dim());
            assert!((gram.clone() - eye).amax() < 1e-9, "k={k}");
            assert!(gram.cholesky().is_some());
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let pts = random_interior_points(10, 11);
        let step = 1e-6;
        for k in 0..=4 {
            let b = ScalarBasis::new(k).unwrap();
            for p in &pts {
                let (_, g) = b.eval(*p);
                let (xp, _) = b.eval([p[0] + step, p[1]]);
                let (xm, _) = b.eval([p[0] - step, p[1]]);
                let (yp, _) = b.eval([p[0], p[1] + step]);
                let (ym, _) = b.eval([p[0], p[1] - step]);
                for i in 0..b.dim() {
                    let fdx = (xp[i] - xm[i]) / (2.0 * step);
                    let fdy = (yp[i] - ym[i]) / (2.0 * step);
                    assert!((fdx - g[i][0]).abs() < 1e-6, "k={k} i={i}");
                    assert!((fdy - g[i][1]).abs() < 1e-6, "k={k} i={i}");
                }
            }
        }
    }

    #[test]
    fn rt_divergence_matches_finite_differences() {
        let pts = random_interior_points(10, 5);
        let step = 1e-6;
        for k in 0..=3 {
            let rt = RtBasis::new(k).unwrap();
            let t = rt.tabulate(&pts);
            for (q, p) in pts.iter().enumerate() {
                let shifted = [
                    [p[0] + step, p[1]],
                    [p[0] - step, p[1]],
                    [p[0], p[1] + step],
                    [p[0], p[1] - step],
                ];
                let s = rt.tabulate(&shifted);
                for i in 0..rt.dim() {
                    let fd = (s.values[0][i][0] - s.values[1][i][0]) / (2.0 * step)
                        + (s.values[2][i][1] - s.values[3][i][1]) / (2.0 * step);
                    assert!((fd - t.divergence[(q, i)]).abs() < 1e-7, "k={k} i={i}");
                }
            }
        }
    }

    #[test]
    fn rt_normal_traces_are_degree_k_on_edges() {
        // least-squares fit of v.n on each reference edge by P_k(edge)
        let normals = [[0.0, -1.0], [1.0 / 2f64.sqrt(), 1.0 / 2f64.sqrt()], [-1.0, 0.0]];
        for k in 0..=3 {
            let rt = RtBasis::new(k).unwrap();
            let rule = edge_quadrature(2 * k + 4).unwrap();
            for (f, n) in normals.iter().enumerate() {
                let pts: Vec<[f64; 2]> = rule
                    .points
                    .iter()
                    .map(|s| crate::mesh::ElementGeometry::face_point_reference(f, s[0]))
                    .collect();
                let t = rt.tabulate(&pts);
                let design = DMatrix::from_fn(pts.len(), k + 1, |q, m| edge_basis(k, rule.points[q][0])[m]);
                for i in 0..rt.dim() {
                    let y = DVector::from_fn(pts.len(), |q, _| {
                        t.values[q][i][0] * n[0] + t.values[q][i][1] * n[1]
                    });
                    let svd = design.clone().svd(true, true);
                    let c = svd.solve(&y, 1e-14).unwrap();
                    let resid = (&design * c - &y).amax();
                    assert!(resid < 1e-10, "k={k} face={f} i={i} resid={resid}");
                }
            }
        }
    }

    #[test]
    fn edge_basis_is_orthonormal() {
        let rule = edge_quadrature(12).unwrap();
        for i in 0..=5 {
            for j in 0..=5 {
                let v = rule.integrate(|p| {
                    let b = edge_basis(5, p[0]);
                    b[i] * b[j]
                });
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((v - expect).abs() < 1e-13);
            }
        }
    }
}
