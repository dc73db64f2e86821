//! Eigenvalue solvers: the linear surrogate pencil `(A, G)`, the condensed
//! nonlinear problem `A eta = lambda M(lambda) eta`, and the full-spectrum
//! oracle built from the discrete solution operator.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assembly::{assemble_condensed, CondensedSystem};
use crate::error::{HdgError, Result};
use crate::localsolve::{MaterialSpec, SpaceConfig, TauSpec};
use crate::mesh::Mesh;
use crate::sparse::{spmv, to_dense, SparseMatrix, SpdFactor};

/// Pencils up to this size are solved densely.
pub const DENSE_PENCIL_LIMIT: usize = 300;

/// Largest `dim W_h` accepted by the oracle.
pub const ORACLE_SIZE_LIMIT: usize = 2000;

const LANCZOS_SEED: u64 = 0x4844_4745_4947;
const RITZ_TOL: f64 = 1e-12;

/// Eigenpair `(theta, x)` of a symmetric pencil with `x^T B x = 1`.
#[derive(Debug, Clone)]
pub struct PencilPair {
    pub value: f64,
    pub vector: DVector<f64>,
}

/// Lowest `m` eigenpairs of the dense pencil `(A, B)` with `B` SPD.
pub fn sym_gen_eig_lowest(a: &DMatrix<f64>, b: &DMatrix<f64>, m: usize) -> Result<Vec<PencilPair>> {
    let n = a.nrows();
    if a.ncols() != n || b.nrows() != n || b.ncols() != n {
        return Err(HdgError::InvalidConfig(format!(
            "pencil dimensions differ: A is {}x{}, B is {}x{}",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols()
        )));
    }
    if m > n {
        return Err(HdgError::InvalidConfig(format!(
            "requested {m} eigenpairs of a pencil of size {n}"
        )));
    }
    let chol = b
        .clone()
        .cholesky()
        .ok_or_else(|| HdgError::NotPositiveDefinite("B in sym_gen_eig_lowest".into()))?;
    let l = chol.l();
    let linv_a = l
        .solve_lower_triangular(a)
        .ok_or_else(|| HdgError::NotPositiveDefinite("B factor is singular".into()))?;
    let c = l
        .solve_lower_triangular(&linv_a.transpose())
        .ok_or_else(|| HdgError::NotPositiveDefinite("B factor is singular".into()))?;
    let c = (&c + c.transpose()) * 0.5;
    let eig = c.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let lt = l.transpose();
    order
        .into_iter()
        .take(m)
        .map(|i| {
            let y = eig.eigenvectors.column(i).into_owned();
            let x = lt
                .solve_upper_triangular(&y)
                .ok_or_else(|| HdgError::NotPositiveDefinite("B factor is singular".into()))?;
            Ok(PencilPair {
                value: eig.eigenvalues[i],
                vector: x,
            })
        })
        .collect()
}

/// The `m` smallest positive eigenvalues of `A x = theta B x` with `A` SPD
/// and `B` symmetric, via the largest eigenvalues `1 / theta` of `A^{-1} B`.
pub fn lowest_pencil_eigs(
    a: &SparseMatrix,
    factor: &SpdFactor,
    b: &SparseMatrix,
    m: usize,
) -> Result<Vec<PencilPair>> {
    let n = a.rows();
    if m == 0 {
        return Ok(Vec::new());
    }
    if m > n {
        return Err(HdgError::InvalidConfig(format!(
            "requested {m} eigenpairs but the trace space has dimension {n}"
        )));
    }
    if n <= DENSE_PENCIL_LIMIT {
        dense_inverse_pencil(&to_dense(a), &to_dense(b), m)
    } else {
        lanczos_inverse_pencil(a, factor, b, m)
    }
}

fn singular_b(m: usize) -> HdgError {
    HdgError::Degenerate(format!(
        "the right-hand form has fewer than {m} positive directions"
    ))
}

fn dense_inverse_pencil(a: &DMatrix<f64>, b: &DMatrix<f64>, m: usize) -> Result<Vec<PencilPair>> {
    let n = a.nrows();
    let chol = a
        .clone()
        .cholesky()
        .ok_or_else(|| HdgError::NotPositiveDefinite("condensed stiffness A".into()))?;
    let l = chol.l();
    let linv_b = l.solve_lower_triangular(b).expect("Cholesky factor is nonsingular");
    let c = l
        .solve_lower_triangular(&linv_b.transpose())
        .expect("Cholesky factor is nonsingular");
    let c = (&c + c.transpose()) * 0.5;
    let eig = c.symmetric_eigen();
    let numax = eig.eigenvalues.amax();
    let mut order: Vec<usize> = (0..n)
        .filter(|&i| eig.eigenvalues[i] > 1e-13 * numax)
        .collect();
    if order.len() < m {
        return Err(singular_b(m));
    }
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let lt = l.transpose();
    Ok(order
        .into_iter()
        .take(m)
        .map(|i| {
            let nu = eig.eigenvalues[i];
            let y = eig.eigenvectors.column(i).into_owned();
            let x = lt.solve_upper_triangular(&y).expect("nonsingular") / nu.sqrt();
            PencilPair {
                value: 1.0 / nu,
                vector: x,
            }
        })
        .collect())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Lanczos on `A^{-1} B` in the `A` inner product with full
/// reorthogonalisation.
fn lanczos_inverse_pencil(
    a: &SparseMatrix,
    factor: &SpdFactor,
    b: &SparseMatrix,
    m: usize,
) -> Result<Vec<PencilPair>> {
    let n = a.rows();
    let max_dim = n.min((6 * m + 60).max(120)).min(1500);
    let mut rng = ChaCha8Rng::seed_from_u64(LANCZOS_SEED);
    let r: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut w = factor.solve(&spmv(b, &r));
    let mut aw = spmv(a, &w);
    let nrm = dot(&w, &aw).sqrt();
    if !(nrm > 0.0) {
        return Err(singular_b(m));
    }
    w.iter_mut().for_each(|x| *x /= nrm);
    aw.iter_mut().for_each(|x| *x /= nrm);

    let mut basis: Vec<Vec<f64>> = vec![w];
    let mut a_basis: Vec<Vec<f64>> = vec![aw];
    let mut alpha: Vec<f64> = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let mut result = None;

    for j in 0..max_dim {
        let bv = spmv(b, &basis[j]);
        let mut w = factor.solve(&bv);
        let aj = dot(&basis[j], &bv);
        alpha.push(aj);
        axpy(&mut w, -aj, &basis[j]);
        if j > 0 {
            axpy(&mut w, -beta[j - 1], &basis[j - 1]);
        }
        for _ in 0..2 {
            for (v, av) in basis.iter().zip(&a_basis) {
                let c = dot(&w, av);
                axpy(&mut w, -c, v);
            }
        }
        let aw = spmv(a, &w);
        let bj = dot(&w, &aw).max(0.0).sqrt();
        let dim = j + 1;
        let tnorm = alpha.iter().fold(0.0f64, |s, x| s.max(x.abs()));
        let exhausted = bj <= 1e-13 * tnorm || dim == n;

        if dim >= m && (dim % 5 == 0 || exhausted || dim == max_dim) {
            let t = DMatrix::from_fn(dim, dim, |r, c| {
                if r == c {
                    alpha[r]
                } else if r + 1 == c {
                    beta[r]
                } else if c + 1 == r {
                    beta[c]
                } else {
                    0.0
                }
            });
            let eig = t.symmetric_eigen();
            let mut order: Vec<usize> = (0..dim).collect();
            order.sort_by(|&x, &y| eig.eigenvalues[y].total_cmp(&eig.eigenvalues[x]));
            let numax = eig.eigenvalues.amax();
            let top: Vec<usize> = order
                .into_iter()
                .filter(|&i| eig.eigenvalues[i] > 1e-13 * numax)
                .take(m)
                .collect();
            let converged = top.len() == m
                && top.iter().all(|&i| {
                    let nu = eig.eigenvalues[i];
                    (bj * eig.eigenvectors[(dim - 1, i)]).abs() <= RITZ_TOL * nu
                });
            if converged || exhausted || dim == max_dim {
                result = Some((eig, top, converged || exhausted));
                break;
            }
        }
        if exhausted {
            break;
        }
        beta.push(bj);
        basis.push(w.iter().map(|x| x / bj).collect());
        a_basis.push(aw.iter().map(|x| x / bj).collect());
    }

    let (eig, top, converged) = result.ok_or_else(|| HdgError::NoConvergence {
        what: "Lanczos".into(),
        iterations: max_dim,
        history: Vec::new(),
    })?;
    if !converged {
        return Err(HdgError::NoConvergence {
            what: format!("Lanczos for the lowest {m} eigenpairs"),
            iterations: max_dim,
            history: top.iter().map(|&i| 1.0 / eig.eigenvalues[i]).collect(),
        });
    }
    if top.len() < m {
        return Err(singular_b(m));
    }
    let dim = eig.eigenvalues.len();
    top.into_iter()
        .map(|i| {
            let nu = eig.eigenvalues[i];
            let mut x = vec![0.0; n];
            for l in 0..dim {
                axpy(&mut x, eig.eigenvectors[(l, i)], &basis[l]);
            }
            let bx = spmv(b, &x);
            let s = dot(&x, &bx).sqrt();
            Ok(PencilPair {
                value: 1.0 / nu,
                vector: DVector::from_iterator(n, x.into_iter().map(|v| v / s)),
            })
        })
        .collect()
}

/// `||A x - theta B x|| / ||A x||`.
pub fn pencil_residual(a: &SparseMatrix, b: &SparseMatrix, theta: f64, x: &[f64]) -> f64 {
    let ax = spmv(a, x);
    let bx = spmv(b, x);
    let r: f64 = ax.iter().zip(&bx).map(|(p, q)| (p - theta * q).powi(2)).sum();
    r.sqrt() / dot(&ax, &ax).sqrt()
}

/// Eigenpair of `A eta = lambda G eta` used to start the nonlinear solve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SurrogatePair {
    /// Zero-based position in the ascending spectrum.
    pub index: usize,
    pub lambda: f64,
    /// Normalised with `eta^T G eta = 1`.
    pub eta: Vec<f64>,
}

/// The `m` smallest eigenpairs of the linear surrogate `A eta = lambda G eta`.
pub fn solve_linear_surrogate(sys: &CondensedSystem, m: usize) -> Result<Vec<SurrogatePair>> {
    let pairs = lowest_pencil_eigs(&sys.a, sys.factor()?, &sys.g, m)?;
    pairs
        .into_iter()
        .enumerate()
        .map(|(index, p)| {
            let eta: Vec<f64> = p.vector.iter().copied().collect();
            let res = pencil_residual(&sys.a, &sys.g, p.value, &eta);
            if !(p.value > 0.0) || !(res <= 1e-9) {
                return Err(HdgError::NoConvergence {
                    what: format!("surrogate eigenpair {index} (residual {res:e})"),
                    iterations: 1,
                    history: vec![p.value],
                });
            }
            Ok(SurrogatePair {
                index,
                lambda: p.value,
                eta,
            })
        })
        .collect()
}

/// Controls of the nonlinear iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NonlinearOptions {
    pub rel_tol: f64,
    pub max_iter: usize,
}

impl Default for NonlinearOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-12,
            max_iter: 50,
        }
    }
}

/// Converged eigenpair of the condensed nonlinear problem.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EigenPair {
    pub index: usize,
    pub lambda: f64,
    /// Normalised with `eta^T M(lambda) eta = 1`.
    pub eta: Vec<f64>,
    pub iterations: usize,
    /// Final `|theta - lambda| / theta`.
    pub defect: f64,
    /// Successive iterates, starting with the seed.
    pub history: Vec<f64>,
    /// `||A eta - lambda M(lambda) eta|| / ||A eta||`.
    pub residual: f64,
}

/// Solves `A eta = lambda M(lambda) eta` for the eigenvalue with the seed's
/// position in the spectrum.
///
/// The Schur complement `A - lambda M(lambda)` of the uncondensed pencil
/// gives, by Haynsworth inertia additivity, the number of discrete
/// eigenvalues below `lambda` as `#{theta_j(lambda) < lambda} + P(lambda)`,
/// where `theta_j` are the positive eigenvalues of `(A, M(lambda))` and
/// `P(lambda)` counts local directions with `lambda sigma > 1`. The mode of
/// index `i` is therefore tracked by `theta_{i - P(lambda)}`, and
/// `g(lambda) = theta_{i - P(lambda)}(lambda) - lambda` is nonnegative below
/// the eigenvalue and negative above it. Every evaluation narrows a bracket;
/// steps are the fixed-point update `lambda <- theta`, replaced by the secant
/// on `g` after the first step, with bisection whenever the proposal leaves
/// the bracket.
pub fn solve_condensed_nonlinear(
    sys: &CondensedSystem,
    seed: &SurrogatePair,
    opts: NonlinearOptions,
) -> Result<EigenPair> {
    let factor = sys.factor()?;
    let index = seed.index;
    let n = sys.n_dofs();
    let mut lambda = seed.lambda;
    let mut history = vec![lambda];
    let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
    let mut prev: Option<(f64, f64, usize)> = None;

    for it in 1..=opts.max_iter {
        let shift = sys.negative_resolvent_directions(lambda);
        let m = sys.assemble_m_of_lambda(lambda)?;
        // None: every positive branch lies above lambda
        let pair = if shift > index {
            None
        } else {
            let j = index - shift;
            if j >= n {
                None
            } else {
                match lowest_pencil_eigs(&sys.a, factor, &m, j + 1) {
                    Ok(mut pairs) => Some(pairs.swap_remove(j)),
                    Err(HdgError::Degenerate(_)) => None,
                    Err(e) => return Err(e),
                }
            }
        };
        let next = match (pair, shift > index) {
            (_, true) => {
                hi = hi.min(lambda);
                prev = None;
                None
            }
            (None, false) => {
                lo = lo.max(lambda);
                prev = None;
                None
            }
            (Some(pair), false) => {
                let theta = pair.value;
                let g = theta - lambda;
                let defect = g.abs() / theta;
                if defect <= opts.rel_tol {
                    history.push(theta);
                    let eta: Vec<f64> = pair.vector.iter().copied().collect();
                    let residual = pencil_residual(&sys.a, &m, theta, &eta);
                    return Ok(EigenPair {
                        index,
                        lambda: theta,
                        eta,
                        iterations: it,
                        defect,
                        history,
                        residual,
                    });
                }
                if g > 0.0 {
                    lo = lo.max(lambda);
                } else {
                    hi = hi.min(lambda);
                }
                let mut next = theta;
                if let Some((lp, gp, sp)) = prev {
                    if sp == shift {
                        let secant = lambda - g * (lambda - lp) / (g - gp);
                        if secant.is_finite() {
                            next = secant;
                        }
                    }
                }
                prev = Some((lambda, g, shift));
                Some(next)
            }
        };
        lambda = match next {
            Some(x) if x > lo && x < hi => x,
            _ if hi.is_finite() => 0.5 * (lo + hi),
            _ => 2.0 * lo.max(lambda),
        };
        if hi.is_finite() && hi - lo <= opts.rel_tol * hi {
            return Err(HdgError::NoConvergence {
                what: format!(
                    "mode {} (the bracket closed at {lambda}, a resolvent pole)",
                    index + 1
                ),
                iterations: it,
                history,
            });
        }
        history.push(lambda);
    }
    Err(HdgError::NoConvergence {
        what: format!("nonlinear eigenvalue iteration for mode {}", index + 1),
        iterations: opts.max_iter,
        history,
    })
}

/// `||A eta - lambda M(lambda) eta|| / ||A eta||`.
pub fn nonlinear_residual(sys: &CondensedSystem, lambda: f64, eta: &[f64]) -> Result<f64> {
    let m = sys.assemble_m_of_lambda(lambda)?;
    Ok(pencil_residual(&sys.a, &m, lambda, eta))
}

/// Full spectrum of the discrete problem through the solution operator
/// `T_h f = u_h(f)` on `W_h`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OracleSpectrum {
    /// Ascending eigenvalues.
    pub eigenvalues: Vec<f64>,
    /// Relative asymmetry of `M_W R`.
    pub symmetry_defect: f64,
    pub dim_w: usize,
}

/// Builds `R` (the matrix of `T_h` on `W_h`) column by column from source
/// solves and returns the reciprocals of its eigenvalues.
pub fn oracle_full_eig(
    mesh: Arc<Mesh>,
    spaces: SpaceConfig,
    tau: TauSpec,
    mat: MaterialSpec,
) -> Result<OracleSpectrum> {
    let nw = spaces.n_w();
    let ne = mesh.num_elements();
    let dim_w = nw * ne;
    if dim_w > ORACLE_SIZE_LIMIT {
        return Err(HdgError::SizeGuard {
            size: dim_w,
            limit: ORACLE_SIZE_LIMIT,
        });
    }
    let sys = assemble_condensed(mesh, spaces, tau, mat)?;
    sys.factor()?;
    let dets: Vec<f64> = (0..ne).map(|k| sys.mesh.geometry(k).det.abs()).collect();
    let columns = (0..dim_w)
        .into_par_iter()
        .map(|col| {
            let (el, i) = (col / nw, col % nw);
            let mut loads = vec![DVector::zeros(nw); ne];
            // load vector of the basis function: M_W e_i = |det B| e_i
            loads[el][i] = dets[el];
            let sol = sys.solve_with_loads(&loads)?;
            Ok(DVector::from_iterator(
                dim_w,
                sol.u.iter().flat_map(|c| c.iter().copied()),
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let r = DMatrix::from_columns(&columns);
    let mass = DVector::from_iterator(dim_w, (0..dim_w).map(|c| dets[c / nw]));
    let mut mr = r.clone();
    for (mut row, d) in mr.row_iter_mut().zip(mass.iter()) {
        row *= *d;
    }
    let symmetry_defect = (&mr - mr.transpose()).amax() / mr.amax();
    // D^{-1/2} (M_W R) D^{-1/2} with D = M_W
    let mut s = mr;
    for i in 0..dim_w {
        for j in 0..dim_w {
            s[(i, j)] /= (mass[i] * mass[j]).sqrt();
        }
    }
    let s = (&s + s.transpose()) * 0.5;
    let mu = s.symmetric_eigenvalues();
    if let Some(bad) = mu.iter().find(|v| !(**v > 0.0)) {
        return Err(HdgError::NotPositiveDefinite(format!(
            "solution operator has eigenvalue {bad:e}"
        )));
    }
    let mut eigenvalues: Vec<f64> = mu.iter().map(|v| 1.0 / v).collect();
    eigenvalues.sort_by(f64::total_cmp);
    Ok(OracleSpectrum {
        eigenvalues,
        symmetry_defect,
        dim_w,
    })
}

/// Surrogate seeds and converged nonlinear eigenpairs for the lowest `m`
/// modes.
pub fn solve_lowest_modes(
    sys: &CondensedSystem,
    m: usize,
    opts: NonlinearOptions,
) -> Result<(Vec<SurrogatePair>, Vec<EigenPair>)> {
    let seeds = solve_linear_surrogate(sys, m)?;
    let pairs = seeds
        .iter()
        .map(|s| solve_condensed_nonlinear(sys, s, opts))
        .collect::<Result<Vec<_>>>()?;
    Ok((seeds, pairs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_square_mesh;

    fn random_spd(n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        &x * x.transpose() + DMatrix::identity(n, n) * (n as f64 * 0.1)
    }

    #[test]
    fn diagonal_pencils() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0, 3.0]));
        let p = sym_gen_eig_lowest(&a, &DMatrix::identity(3, 3), 2).unwrap();
        assert!((p[0].value - 1.0).abs() < 1e-14 && (p[1].value - 2.0).abs() < 1e-14);
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 2.0]));
        let b = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0]));
        let p = sym_gen_eig_lowest(&a, &b, 2).unwrap();
        assert!((p[0].value - 1.0).abs() < 1e-14 && (p[1].value - 2.0).abs() < 1e-14);
    }

    #[test]
    fn random_dense_pencil() {
        let (a, b) = (random_spd(50, 1), random_spd(50, 2));
        let p = sym_gen_eig_lowest(&a, &b, 50).unwrap();
        for (i, pi) in p.iter().enumerate() {
            let ax = &a * &pi.vector;
            let r = (&ax - &b * &pi.vector * pi.value).norm() / ax.norm();
            assert!(r < 1e-10, "{r}");
            for pj in &p[..i] {
                assert!(pi.vector.dot(&(&b * &pj.vector)).abs() < 1e-10);
            }
            assert!((pi.vector.dot(&(&b * &pi.vector)) - 1.0).abs() < 1e-10);
            if i > 0 {
                assert!(p[i - 1].value <= pi.value);
            }
        }
        assert!(sym_gen_eig_lowest(&a, &(-b), 2).is_err());
    }

    #[test]
    fn lanczos_matches_dense_path() {
        let sys = assemble_condensed(
            Arc::new(build_square_mesh(1)),
            SpaceConfig::equal(1).unwrap(),
            TauSpec::Constant(1.0),
            MaterialSpec::identity(),
        )
        .unwrap();
        assert!(sys.n_dofs() > DENSE_PENCIL_LIMIT);
        let f = sys.factor().unwrap();
        let lz = lanczos_inverse_pencil(&sys.a, f, &sys.g, 8).unwrap();
        let de = dense_inverse_pencil(&to_dense(&sys.a), &to_dense(&sys.g), 8).unwrap();
        for (x, y) in lz.iter().zip(&de) {
            assert!((x.value - y.value).abs() < 1e-11 * y.value, "{} {}", x.value, y.value);
            let xs: Vec<f64> = x.vector.iter().copied().collect();
            assert!(pencil_residual(&sys.a, &sys.g, x.value, &xs) < 1e-9);
        }
    }

    #[test]
    fn oracle_operator_is_self_adjoint_and_positive() {
        let o = oracle_full_eig(
            Arc::new(build_square_mesh(0)),
            SpaceConfig::equal(1).unwrap(),
            TauSpec::Constant(1.0),
            MaterialSpec::identity(),
        )
        .unwrap();
        assert!(o.symmetry_defect < 1e-10);
        assert!(o.eigenvalues.iter().all(|v| *v > 0.0));
        assert_eq!(o.eigenvalues.len(), 96);
    }

    #[test]
    fn oracle_size_guard() {
        let r = oracle_full_eig(
            Arc::new(build_square_mesh(3)),
            SpaceConfig::equal(1).unwrap(),
            TauSpec::Constant(1.0),
            MaterialSpec::identity(),
        );
        assert!(matches!(r, Err(HdgError::SizeGuard { .. })));
    }
}
