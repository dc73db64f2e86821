//! Recovery of the interior fields from a trace eigenpair and the local
//! postprocessings `u*` (one degree higher), `q*` (H(div)-conforming) and the
//! postprocessed eigenvalue `lambda*`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::assembly::CondensedSystem;
use crate::basis::{edge_basis, RtBasis, ScalarBasis};
use crate::eigensolve::EigenPair;
use crate::error::{HdgError, Result};
use crate::field::{element_mean_integral, l2_norm};
use crate::localsolve::MaterialSpec;
use crate::mesh::{ElementGeometry, Mesh};
use crate::quadrature::{edge_quadrature, triangle_quadrature};

/// Largest trace degree for which `q*` is available.
pub const MAX_FLUX_POSTPROCESS_DEGREE: usize = 3;

/// Interior fields of an eigenpair, scaled to `||u||_{L^2} = 1` with a
/// positive mean on the sign-anchor element.
#[derive(Debug, Clone)]
pub struct RecoveredFields {
    pub lambda: f64,
    /// Per-element W coefficients.
    pub u: Vec<DVector<f64>>,
    /// Per-element V coefficients (x block, then y block).
    pub q: Vec<DVector<f64>>,
    pub eta: Vec<f64>,
    /// Per element and local face: coefficients of `qhat . n` in the
    /// orthonormal edge basis of the local face parameter.
    pub flux: Vec<[DVector<f64>; 3]>,
    /// Factor applied to the raw fields.
    pub scale: f64,
    pub anchor_element: usize,
}

#[derive(Debug, Clone)]
pub struct PostprocessedFields {
    /// Per-element coefficients in the `P_{k+1}` basis.
    pub u_star: Vec<DVector<f64>>,
    /// Per-element coefficients in the RT-type basis, mapped by the
    /// contravariant Piola transform. Empty when `k` exceeds
    /// [`MAX_FLUX_POSTPROCESS_DEGREE`].
    pub q_star: Vec<DVector<f64>>,
    pub lambda_star: Option<f64>,
}

type ElementCoefficients = Vec<DVector<f64>>;

/// `u = (I - lambda U^W)^{-1} U eta`, `q = Q eta + lambda Q^W u`, unscaled.
pub fn recover_raw(
    sys: &CondensedSystem,
    lambda: f64,
    eta: &[f64],
) -> Result<(ElementCoefficients, ElementCoefficients)> {
    (0..sys.mesh.num_elements())
        .into_par_iter()
        .map(|k| {
            let l = sys.lift(k);
            let mu = sys.local_trace(k, eta);
            let u = l
                .apply_uw_inverse(lambda, &(&l.u * &mu))
                .map_err(|e| remap_element(e, k))?;
            let q = &l.q * &mu + l.qw() * &u * lambda;
            Ok((u, q))
        })
        .collect::<Result<Vec<_>>>()
        .map(|v| v.into_iter().unzip())
}

fn remap_element(e: HdgError, element: usize) -> HdgError {
    match e {
        HdgError::ResolventSingular {
            lambda, condition, ..
        } => HdgError::ResolventSingular {
            element,
            lambda,
            condition,
        },
        other => other,
    }
}

/// Coefficients of `q.n + tau (u - eta)` on each local face.
fn numerical_flux(
    sys: &CondensedSystem,
    u: &[DVector<f64>],
    q: &[DVector<f64>],
    eta: &[f64],
) -> Vec<[DVector<f64>; 3]> {
    let t = &sys.tables;
    let nf = sys.spaces.n_face();
    let nvs = t.v_basis.dim();
    (0..sys.mesh.num_elements())
        .map(|el| {
            let geom = sys.mesh.geometry(el);
            let tau = sys.lift(el).tau;
            let mu = sys.local_trace(el, eta);
            std::array::from_fn(|f| {
                let n = geom.face_normal(f);
                let uf = &t.w_face[f] * &u[el];
                let qx = t.v_face[f].clone() * q[el].rows(0, nvs);
                let qy = t.v_face[f].clone() * q[el].rows(nvs, nvs);
                let ef = &t.psi * mu.rows(f * nf, nf);
                let mut c = DVector::zeros(nf);
                for (p, w) in t.edge_rule.weights.iter().enumerate() {
                    let val = qx[p] * n[0] + qy[p] * n[1] + tau[f] * (uf[p] - ef[p]);
                    for m in 0..nf {
                        c[m] += w * val * t.psi[(p, m)];
                    }
                }
                c
            })
        })
        .collect()
}

/// Recovers and normalises the fields of a converged eigenpair.
pub fn recover_fields(sys: &CondensedSystem, pair: &EigenPair) -> Result<RecoveredFields> {
    recover_from_trace(sys, pair.lambda, &pair.eta)
}

pub fn recover_from_trace(sys: &CondensedSystem, lambda: f64, eta: &[f64]) -> Result<RecoveredFields> {
    let mesh = &sys.mesh;
    let (mut u, mut q) = recover_raw(sys, lambda, eta)?;
    let norm = l2_norm(mesh, &u);
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(HdgError::Degenerate(
            "recovered eigenfunction has zero norm".into(),
        ));
    }
    let anchor_element = mesh.locate(mesh.domain.sign_anchor()).ok_or_else(|| {
        HdgError::Degenerate("sign anchor lies outside the mesh".into())
    })?;
    let mean = element_mean_integral(
        &sys.tables.w_basis,
        &mesh.geometry(anchor_element),
        &u[anchor_element],
    );
    let scale = if mean < 0.0 { -1.0 } else { 1.0 } / norm;
    for c in u.iter_mut().chain(q.iter_mut()) {
        *c *= scale;
    }
    let eta: Vec<f64> = eta.iter().map(|v| v * scale).collect();
    let flux = numerical_flux(sys, &u, &q, &eta);
    Ok(RecoveredFields {
        lambda,
        u,
        q,
        eta,
        flux,
        scale,
        anchor_element,
    })
}

/// Contravariant Piola map `J v / det J`.
fn piola(geom: &ElementGeometry, v: [f64; 2]) -> [f64; 2] {
    let p = geom.push_vector(v);
    [p[0] / geom.det, p[1] / geom.det]
}

/// Value of `q*` at reference point `xhat` of an element.
pub fn q_star_at(basis: &RtBasis, geom: &ElementGeometry, c: &DVector<f64>, xhat: [f64; 2]) -> [f64; 2] {
    let table = basis.tabulate(&[xhat]);
    let mut s = [0.0; 2];
    for (v, ci) in table.values[0].iter().zip(c.iter()) {
        s[0] += ci * v[0];
        s[1] += ci * v[1];
    }
    piola(geom, s)
}

/// `u* in P_{k+1}(K)` with `(grad u*, grad w)_K = -(c q_h, grad w)_K` and
/// `(u*, 1)_K = (u_h, 1)_K`.
pub fn postprocess_u(
    sys: &CondensedSystem,
    fields: &RecoveredFields,
    mat: &MaterialSpec,
) -> Result<Vec<DVector<f64>>> {
    let k = sys.spaces.k;
    let basis = ScalarBasis::new(k + 1)?;
    let vb = &sys.tables.v_basis;
    let rule = triangle_quadrature(2 * k + 4)?;
    let table = basis.tabulate(&rule.points);
    let vtab = vb.tabulate(&rule.points);
    let n = basis.dim();
    let nvs = vb.dim();
    (0..sys.mesh.num_elements())
        .into_par_iter()
        .map(|el| {
            let geom = sys.mesh.geometry(el);
            let det = geom.det.abs();
            let mut sys_mat = DMatrix::zeros(n + 1, n + 1);
            let mut rhs = DVector::zeros(n + 1);
            let qc = &fields.q[el];
            for (p, w) in rule.weights.iter().enumerate() {
                let wt = w * det;
                let grads: Vec<[f64; 2]> = (0..n)
                    .map(|i| geom.push_gradient([table.dx[(p, i)], table.dy[(p, i)]]))
                    .collect();
                let mut qv = [0.0; 2];
                for a in 0..nvs {
                    qv[0] += qc[a] * vtab.values[(p, a)];
                    qv[1] += qc[nvs + a] * vtab.values[(p, a)];
                }
                let cq = mat.apply_c(qv);
                for i in 0..n {
                    for j in 0..n {
                        sys_mat[(i, j)] += wt * (grads[i][0] * grads[j][0] + grads[i][1] * grads[j][1]);
                    }
                    rhs[i] -= wt * (cq[0] * grads[i][0] + cq[1] * grads[i][1]);
                    let m = wt * table.values[(p, i)];
                    sys_mat[(i, n)] += m;
                    sys_mat[(n, i)] += m;
                }
            }
            rhs[n] = element_mean_integral(&sys.tables.w_basis, &geom, &fields.u[el]);
            let x = sys_mat.lu().solve(&rhs).ok_or_else(|| HdgError::SingularLocalSystem {
                element: el,
                reason: "bordered Neumann system for u*".into(),
            })?;
            Ok(x.rows(0, n).into_owned())
        })
        .collect()
}

/// `q* in P_k^2 + x P_k` matching the moments of `qhat . n` on every face
/// against `P_k(F)` and the moments of `q_h` against `P_{k-1}(K)^2`.
pub fn postprocess_q(sys: &CondensedSystem, fields: &RecoveredFields) -> Result<Vec<DVector<f64>>> {
    let k = sys.spaces.k;
    if k > MAX_FLUX_POSTPROCESS_DEGREE {
        return Err(HdgError::UnsupportedDegree {
            degree: k,
            max: MAX_FLUX_POSTPROCESS_DEGREE,
        });
    }
    let rt = RtBasis::new(k)?;
    let n = rt.dim();
    let nf = k + 1;
    let erule = edge_quadrature(2 * k + 2)?;
    let face_tabs: Vec<_> = (0..3)
        .map(|f| {
            let pts: Vec<[f64; 2]> = erule
                .points
                .iter()
                .map(|p| ElementGeometry::face_point_reference(f, p[0]))
                .collect();
            rt.tabulate(&pts)
        })
        .collect();
    let psi: Vec<Vec<f64>> = erule.points.iter().map(|p| edge_basis(k, p[0])).collect();
    let rule = triangle_quadrature(2 * k + 2)?;
    let rt_tab = rt.tabulate(&rule.points);
    let low = if k >= 1 { Some(ScalarBasis::new(k - 1)?) } else { None };
    let low_tab = low.as_ref().map(|b| b.tabulate(&rule.points));
    let nl = low.as_ref().map_or(0, |b| b.dim());
    let vtab = sys.tables.v_basis.tabulate(&rule.points);
    let nvs = sys.tables.v_basis.dim();

    (0..sys.mesh.num_elements())
        .into_par_iter()
        .map(|el| {
            let geom = sys.mesh.geometry(el);
            let det = geom.det.abs();
            let mut a = DMatrix::zeros(n, n);
            let mut b = DVector::zeros(n);
            for f in 0..3 {
                let normal = geom.face_normal(f);
                let len = geom.face_length(f);
                for (p, w) in erule.weights.iter().enumerate() {
                    for j in 0..n {
                        let v = piola(&geom, face_tabs[f].values[p][j]);
                        let vn = v[0] * normal[0] + v[1] * normal[1];
                        for m in 0..nf {
                            a[(f * nf + m, j)] += w * len * vn * psi[p][m];
                        }
                    }
                }
                for m in 0..nf {
                    b[f * nf + m] = len * fields.flux[el][f][m];
                }
            }
            if let Some(lt) = &low_tab {
                let qc = &fields.q[el];
                let row0 = 3 * nf;
                for (p, w) in rule.weights.iter().enumerate() {
                    let wt = w * det;
                    let mut qv = [0.0; 2];
                    for s in 0..nvs {
                        qv[0] += qc[s] * vtab.values[(p, s)];
                        qv[1] += qc[nvs + s] * vtab.values[(p, s)];
                    }
                    let phys: Vec<[f64; 2]> = (0..n)
                        .map(|j| piola(&geom, rt_tab.values[p][j]))
                        .collect();
                    for c in 0..2 {
                        for s in 0..nl {
                            let r = row0 + c * nl + s;
                            let chi = lt.values[(p, s)];
                            for j in 0..n {
                                a[(r, j)] += wt * phys[j][c] * chi;
                            }
                            b[r] += wt * qv[c] * chi;
                        }
                    }
                }
            }
            a.lu().solve(&b).ok_or_else(|| HdgError::SingularLocalSystem {
                element: el,
                reason: "moment system for q*".into(),
            })
        })
        .collect()
}

/// `lambda* = [(alpha grad u*, grad u*) + <q*.n, u*>] / (u*, u*)` with the
/// boundary term summed element by element.
pub fn rayleigh_eigenvalue(
    mesh: &Mesh,
    k: usize,
    u_star: &[DVector<f64>],
    q_star: &[DVector<f64>],
    mat: &MaterialSpec,
) -> Result<f64> {
    let basis = ScalarBasis::new(k + 1)?;
    let rt = RtBasis::new(k)?;
    let rule = triangle_quadrature(2 * k + 4)?;
    let table = basis.tabulate(&rule.points);
    let erule = edge_quadrature(2 * k + 4)?;
    let n = basis.dim();
    let (mut num, mut den) = (0.0, 0.0);
    for el in 0..mesh.num_elements() {
        let geom = mesh.geometry(el);
        let det = geom.det.abs();
        let c = &u_star[el];
        for (p, w) in rule.weights.iter().enumerate() {
            let wt = w * det;
            let mut g = [0.0; 2];
            let mut v = 0.0;
            for i in 0..n {
                let gi = geom.push_gradient([table.dx[(p, i)], table.dy[(p, i)]]);
                g[0] += c[i] * gi[0];
                g[1] += c[i] * gi[1];
                v += c[i] * table.values[(p, i)];
            }
            let ag = mat.apply_alpha(g);
            num += wt * (ag[0] * g[0] + ag[1] * g[1]);
            den += wt * v * v;
        }
        for f in 0..3 {
            let normal = geom.face_normal(f);
            let len = geom.face_length(f);
            for (p, w) in erule.points.iter().zip(&erule.weights) {
                let xhat = ElementGeometry::face_point_reference(f, p[0]);
                let qs = q_star_at(&rt, &geom, &q_star[el], xhat);
                let us = basis.eval(xhat).0.dot(c);
                num += w * len * (qs[0] * normal[0] + qs[1] * normal[1]) * us;
            }
        }
    }
    if !(den > 0.0) {
        return Err(HdgError::Degenerate("u* vanishes identically".into()));
    }
    Ok(num / den)
}

/// Largest `P_k(F)` moment of the jump of `q* . n` over interior edges,
/// relative to the largest one-sided moment.
pub fn normal_jump_defect(mesh: &Mesh, k: usize, q_star: &[DVector<f64>]) -> Result<f64> {
    let rt = RtBasis::new(k)?;
    let erule = edge_quadrature(2 * k + 2)?;
    let mut worst = 0.0f64;
    let mut scale = 0.0f64;
    for (e, inc) in mesh.edge_elements.iter().enumerate() {
        if mesh.boundary[e] {
            continue;
        }
        let mut jump = vec![0.0; k + 1];
        for (el, f) in inc.iter() {
            let geom = mesh.geometry(el);
            let normal = geom.face_normal(f);
            let len = geom.face_length(f);
            let flipped = mesh.face_is_flipped(el, f);
            let mut side = vec![0.0; k + 1];
            for (p, w) in erule.points.iter().zip(&erule.weights) {
                let xhat = ElementGeometry::face_point_reference(f, p[0]);
                let qs = q_star_at(&rt, &geom, &q_star[el], xhat);
                let sg = if flipped { 1.0 - p[0] } else { p[0] };
                let psi = edge_basis(k, sg);
                for m in 0..=k {
                    side[m] += w * len * (qs[0] * normal[0] + qs[1] * normal[1]) * psi[m];
                }
            }
            for m in 0..=k {
                jump[m] += side[m];
                scale = scale.max(side[m].abs());
            }
        }
        worst = jump.iter().fold(worst, |a, v| a.max(v.abs()));
    }
    Ok(if scale > 0.0 { worst / scale } else { worst })
}

/// Runs both postprocessings and `lambda*`. The flux postprocessing and
/// `lambda*` are skipped above [`MAX_FLUX_POSTPROCESS_DEGREE`].
pub fn postprocess(sys: &CondensedSystem, fields: &RecoveredFields) -> Result<PostprocessedFields> {
    let u_star = postprocess_u(sys, fields, &sys.mat)?;
    if sys.spaces.k > MAX_FLUX_POSTPROCESS_DEGREE {
        return Ok(PostprocessedFields {
            u_star,
            q_star: Vec::new(),
            lambda_star: None,
        });
    }
    let q_star = postprocess_q(sys, fields)?;
    let lambda_star = rayleigh_eigenvalue(&sys.mesh, sys.spaces.k, &u_star, &q_star, &sys.mat)?;
    Ok(PostprocessedFields {
        u_star,
        q_star,
        lambda_star: Some(lambda_star),
    })
}
