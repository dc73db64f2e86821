//! Residuals of the uncondensed HDG equations, evaluated by direct
//! quadrature in physical coordinates. This is deliberately independent of
//! the element matrices used by the solver.
//!
//! For every element `K`, vector test function `r`, scalar test function `w`
//! and interior-edge test function `mu`:
//!
//! ```text
//! (c q, r)_K - (u, div r)_K + <eta, r.n>_dK                  = 0
//! -(q, grad w)_K + <q.n + tau (u - eta), w>_dK - (f, w)_K      = 0
//! sum_K <q.n + tau (u - eta), mu>_dK                           = 0
//! ```

use nalgebra::DVector;

use crate::assembly::CondensedSystem;
use crate::basis::edge_basis;
use crate::error::Result;
use crate::field::{scalar_at, vector_at, ERROR_QUADRATURE_ORDER};
use crate::quadrature::{edge_quadrature, triangle_quadrature};

/// Right-hand side of the second equation.
pub enum Load<'a> {
    /// A source function `f`.
    Function(&'a (dyn Fn([f64; 2]) -> f64 + Sync)),
    /// The eigenvalue load `f = lambda u`.
    Eigen(f64),
}

/// Largest residual of each of the three equation families, relative to
/// the largest individual term of that family.
pub fn hdg_residuals(
    sys: &CondensedSystem,
    u: &[DVector<f64>],
    q: &[DVector<f64>],
    eta: &[f64],
    load: Load<'_>,
) -> Result<[f64; 3]> {
    let mesh = &sys.mesh;
    let wb = &sys.tables.w_basis;
    let vb = &sys.tables.v_basis;
    let nvs = vb.dim();
    let k = sys.spaces.k;
    let nf = k + 1;
    let rule = triangle_quadrature(ERROR_QUADRATURE_ORDER)?;
    let erule = edge_quadrature(ERROR_QUADRATURE_ORDER)?;
    let mat = &sys.mat;

    // trace value on global edge `e` at physical point `x`
    let eta_at = |e: usize, x: [f64; 2]| -> f64 {
        let Some(start) = sys.dofs.edge_start[e] else {
            return 0.0;
        };
        let [a, b] = mesh.edges[e];
        let (pa, pb) = (mesh.vertices[a], mesh.vertices[b]);
        let len = (pb[0] - pa[0]).hypot(pb[1] - pa[1]);
        let s = (x[0] - pa[0]).hypot(x[1] - pa[1]) / len;
        let psi = edge_basis(k, s);
        (0..nf).map(|m| eta[start + m] * psi[m]).sum()
    };

    let mut scale = [0.0f64; 3];
    let mut worst = [0.0f64; 3];
    let mut flux_balance = vec![0.0; sys.n_dofs()];
    let mut flux_scale = 0.0f64;

    for el in 0..mesh.num_elements() {
        let geom = mesh.geometry(el);
        let det = geom.det.abs();
        let tau = sys.lift(el).tau;
        let (uc, qc) = (&u[el], &q[el]);
        let nw = wb.dim();
        let mut eq_a = vec![[0.0f64; 3]; 2 * nvs];
        let mut eq_b = vec![[0.0f64; 4]; nw];

        for (p, w) in rule.points.iter().zip(&rule.weights) {
            let x = geom.map(*p);
            let wt = w * det;
            let uval = scalar_at(wb, &geom, uc, x);
            let qval = vector_at(vb, &geom, qc, x);
            let cq = mat.apply_c(qval);
            let fval = match &load {
                Load::Function(f) => f(x),
                Load::Eigen(lambda) => lambda * uval,
            };
            let (vv, vg) = vb.eval(*p);
            for a in 0..nvs {
                let g = geom.push_gradient(vg[a]);
                for c in 0..2 {
                    eq_a[c * nvs + a][0] += wt * cq[c] * vv[a];
                    eq_a[c * nvs + a][1] -= wt * uval * g[c];
                }
            }
            let (wv, wg) = wb.eval(*p);
            for i in 0..nw {
                let g = geom.push_gradient(wg[i]);
                eq_b[i][0] -= wt * (qval[0] * g[0] + qval[1] * g[1]);
                eq_b[i][3] -= wt * fval * wv[i];
            }
        }

        for f in 0..3 {
            let e = mesh.element_edges[el][f];
            let n = geom.face_normal(f);
            let (x0, x1) = geom.face_vertices(f);
            let len = geom.face_length(f);
            for (p, w) in erule.points.iter().zip(&erule.weights) {
                let s = p[0];
                let x = [x0[0] + s * (x1[0] - x0[0]), x0[1] + s * (x1[1] - x0[1])];
                let ws = w * len;
                let xr = geom.inverse_map(x);
                let uval = scalar_at(wb, &geom, uc, x);
                let qval = vector_at(vb, &geom, qc, x);
                let eval = eta_at(e, x);
                let qn = qval[0] * n[0] + qval[1] * n[1];
                let stab = tau[f] * (uval - eval);
                let vv = vb.eval(xr).0;
                for a in 0..nvs {
                    for c in 0..2 {
                        eq_a[c * nvs + a][2] += ws * eval * vv[a] * n[c];
                    }
                }
                let wv = wb.eval(xr).0;
                for i in 0..nw {
                    eq_b[i][1] += ws * qn * wv[i];
                    eq_b[i][2] += ws * stab * wv[i];
                }
                if let Some(start) = sys.dofs.edge_start[e] {
                    let [va, vb_] = mesh.edges[e];
                    let (pa, pb) = (mesh.vertices[va], mesh.vertices[vb_]);
                    let sg = (x[0] - pa[0]).hypot(x[1] - pa[1])
                        / (pb[0] - pa[0]).hypot(pb[1] - pa[1]);
                    let psi = edge_basis(k, sg);
                    for m in 0..nf {
                        let t1 = ws * qn * psi[m];
                        let t2 = ws * stab * psi[m];
                        flux_balance[start + m] += t1 + t2;
                        flux_scale = flux_scale.max(t1.abs()).max(t2.abs());
                    }
                }
            }
        }

        for terms in &eq_a {
            let r: f64 = terms.iter().sum();
            worst[0] = worst[0].max(r.abs());
            scale[0] = terms.iter().fold(scale[0], |m, t| m.max(t.abs()));
        }
        for terms in &eq_b {
            let r: f64 = terms.iter().sum();
            worst[1] = worst[1].max(r.abs());
            scale[1] = terms.iter().fold(scale[1], |m, t| m.max(t.abs()));
        }
    }
    worst[2] = flux_balance.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    scale[2] = flux_scale;
    Ok([0, 1, 2].map(|i| if scale[i] > 0.0 { worst[i] / scale[i] } else { worst[i] }))
}
