//! Trace numbering and assembly of the condensed global operators.

use std::collections::HashMap;
use std::sync::{Arc, OnceLock};

use nalgebra::DVector;
use rayon::prelude::*;

use crate::error::{HdgError, Result};
use crate::field::ERROR_QUADRATURE_ORDER;
use crate::localsolve::{
    element_tau, CongruenceKey, LocalLift, LocalTables, MaterialSpec, SpaceConfig, TauSpec,
};
use crate::mesh::Mesh;
use crate::quadrature::triangle_quadrature;
use crate::sparse::{spmv, BlockAssembler, SparseMatrix, SpdFactor};

/// Global numbering of trace unknowns: `k + 1` per interior edge, none on
/// the boundary.
#[derive(Debug, Clone)]
pub struct TraceDofMap {
    pub per_edge: usize,
    /// First global index of each edge, `None` on the boundary.
    pub edge_start: Vec<Option<usize>>,
    pub n_dofs: usize,
}

impl TraceDofMap {
    pub fn new(mesh: &Mesh, k: usize) -> Self {
        let per_edge = k + 1;
        let mut next = 0;
        let edge_start = mesh
            .boundary
            .iter()
            .map(|&b| {
                if b {
                    None
                } else {
                    let s = next;
                    next += per_edge;
                    Some(s)
                }
            })
            .collect();
        Self {
            per_edge,
            edge_start,
            n_dofs: next,
        }
    }

    /// Global indices and orientation signs of the local trace unknowns of
    /// `element`, ordered face by face. A face traversed against the global
    /// edge direction sees the degree-`m` Legendre mode with sign `(-1)^m`.
    pub fn element_dofs(&self, mesh: &Mesh, element: usize) -> (Vec<Option<usize>>, Vec<f64>) {
        let n = self.per_edge;
        let mut dofs = Vec::with_capacity(3 * n);
        let mut signs = Vec::with_capacity(3 * n);
        for f in 0..3 {
            let e = mesh.element_edges[element][f];
            let flipped = mesh.face_is_flipped(element, f);
            for m in 0..n {
                dofs.push(self.edge_start[e].map(|s| s + m));
                signs.push(if flipped && m % 2 == 1 { -1.0 } else { 1.0 });
            }
        }
        (dofs, signs)
    }
}

/// The condensed trace problem on one mesh.
pub struct CondensedSystem {
    pub mesh: Arc<Mesh>,
    pub spaces: SpaceConfig,
    pub tau: TauSpec,
    pub mat: MaterialSpec,
    pub tables: LocalTables,
    pub dofs: TraceDofMap,
    /// Index into `unique_lifts` for each element.
    pub lift_index: Vec<usize>,
    pub unique_lifts: Vec<LocalLift>,
    /// `a_h(eta_j, eta_i)`.
    pub a: SparseMatrix,
    /// `(U eta_j, U eta_i)`.
    pub g: SparseMatrix,
    element_dofs: Vec<(Vec<Option<usize>>, Vec<f64>)>,
    factor: OnceLock<SpdFactor>,
}

impl std::fmt::Debug for CondensedSystem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CondensedSystem")
            .field("elements", &self.mesh.num_elements())
            .field("dofs", &self.dofs.n_dofs)
            .field("unique_lifts", &self.unique_lifts.len())
            .finish()
    }
}

/// Trace-space solution of a source problem with the recovered fields.
#[derive(Debug, Clone)]
pub struct SourceSolution {
    pub eta: Vec<f64>,
    pub u: Vec<DVector<f64>>,
    pub q: Vec<DVector<f64>>,
}

/// Builds all local lifts (once per congruence class) and the global
/// matrices `A` and `G`.
pub fn assemble_condensed(
    mesh: Arc<Mesh>,
    spaces: SpaceConfig,
    tau: TauSpec,
    mat: MaterialSpec,
) -> Result<CondensedSystem> {
    spaces.validate_tau(&tau)?;
    let tables = LocalTables::new(spaces)?;
    let ne = mesh.num_elements();

    let mut classes: HashMap<CongruenceKey, usize> = HashMap::new();
    let mut representatives = Vec::new();
    let mut lift_index = Vec::with_capacity(ne);
    for k in 0..ne {
        let t = element_tau(&mesh, k, &tau);
        let key = CongruenceKey::new(&mesh.geometry(k), mesh.h, t);
        let idx = *classes.entry(key).or_insert_with(|| {
            representatives.push((k, t));
            representatives.len() - 1
        });
        lift_index.push(idx);
    }
    let unique_lifts = representatives
        .par_iter()
        .map(|&(k, t)| LocalLift::compute(k, &mesh.geometry(k), t, &mat, &tables))
        .collect::<Result<Vec<_>>>()?;

    let dofs = TraceDofMap::new(&mesh, spaces.k);
    let element_dofs: Vec<_> = (0..ne).map(|k| dofs.element_dofs(&mesh, k)).collect();
    let mut a_asm = BlockAssembler::new(dofs.n_dofs);
    let mut g_asm = BlockAssembler::new(dofs.n_dofs);
    for k in 0..ne {
        let lift = &unique_lifts[lift_index[k]];
        let (d, s) = &element_dofs[k];
        a_asm.add_block(d, s, &lift.a);
        g_asm.add_block(d, s, &lift.g);
    }
    Ok(CondensedSystem {
        mesh,
        spaces,
        tau,
        mat,
        tables,
        dofs,
        lift_index,
        unique_lifts,
        a: a_asm.finish(),
        g: g_asm.finish(),
        element_dofs,
        factor: OnceLock::new(),
    })
}

impl CondensedSystem {
    /// Ascending values of `lambda` at which some `I - lambda U^W` is
    /// singular.
    pub fn resolvent_poles(&self) -> Vec<f64> {
        let mut poles: Vec<f64> = self
            .unique_lifts
            .iter()
            .flat_map(|l| l.uw_sigma.iter().filter(|s| **s > 0.0).map(|s| 1.0 / s))
            .collect();
        poles.sort_by(f64::total_cmp);
        poles.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * b.abs());
        poles
    }

    /// Number of local directions, summed over all elements, for which
    /// `I - lambda U^W` is negative.
    pub fn negative_resolvent_directions(&self, lambda: f64) -> usize {
        let mut per_class = vec![0usize; self.unique_lifts.len()];
        for &c in &self.lift_index {
            per_class[c] += 1;
        }
        self.unique_lifts
            .iter()
            .zip(&per_class)
            .map(|(l, n)| n * l.uw_sigma.iter().filter(|s| lambda * **s > 1.0).count())
            .sum()
    }

    pub fn n_dofs(&self) -> usize {
        self.dofs.n_dofs
    }

    pub fn lift(&self, element: usize) -> &LocalLift {
        &self.unique_lifts[self.lift_index[element]]
    }

    pub fn element_dofs(&self, element: usize) -> (&[Option<usize>], &[f64]) {
        let (d, s) = &self.element_dofs[element];
        (d, s)
    }

    /// Sparse factorisation of `A`, computed on first use.
    pub fn factor(&self) -> Result<&SpdFactor> {
        if let Some(f) = self.factor.get() {
            return Ok(f);
        }
        let f = SpdFactor::new(&self.a, "condensed stiffness A")?;
        Ok(self.factor.get_or_init(|| f))
    }

    /// Local (element-oriented) trace coefficients of a global trace vector.
    pub fn local_trace(&self, element: usize, eta: &[f64]) -> DVector<f64> {
        let (d, s) = self.element_dofs(element);
        DVector::from_iterator(
            d.len(),
            d.iter().zip(s).map(|(di, si)| di.map_or(0.0, |i| si * eta[i])),
        )
    }

    /// Adds `sign * local` into a global trace vector.
    pub fn scatter_trace(&self, element: usize, local: &DVector<f64>, global: &mut [f64]) {
        let (d, s) = self.element_dofs(element);
        for ((di, si), v) in d.iter().zip(s).zip(local.iter()) {
            if let Some(i) = di {
                global[*i] += si * v;
            }
        }
    }

    /// `M(lambda)_ij = ((I - lambda U^W)^{-1} U eta_j, U eta_i)`.
    pub fn assemble_m_of_lambda(&self, lambda: f64) -> Result<SparseMatrix> {
        let blocks = self
            .unique_lifts
            .par_iter()
            .map(|l| l.m_block(lambda))
            .collect::<Vec<_>>();
        let mut asm = BlockAssembler::new(self.n_dofs());
        for k in 0..self.mesh.num_elements() {
            let block = match &blocks[self.lift_index[k]] {
                Ok(b) => b,
                Err(HdgError::ResolventSingular {
                    lambda, condition, ..
                }) => {
                    return Err(HdgError::ResolventSingular {
                        element: k,
                        lambda: *lambda,
                        condition: *condition,
                    })
                }
                Err(e) => return Err(HdgError::Degenerate(e.to_string())),
            };
            let (d, s) = self.element_dofs(k);
            asm.add_block(d, s, block);
        }
        Ok(asm.finish())
    }

    /// Per-element load vectors `(f, w_i)_K` with the error quadrature.
    pub fn load_vectors<F: Fn([f64; 2]) -> f64 + Sync>(&self, f: F) -> Result<Vec<DVector<f64>>> {
        let rule = triangle_quadrature(ERROR_QUADRATURE_ORDER)?;
        let table = self.tables.w_basis.tabulate(&rule.points);
        Ok((0..self.mesh.num_elements())
            .into_par_iter()
            .map(|k| {
                let geom = self.mesh.geometry(k);
                let fw = DVector::from_iterator(
                    rule.len(),
                    rule.points
                        .iter()
                        .zip(&rule.weights)
                        .map(|(p, w)| w * geom.det.abs() * f(geom.map(*p))),
                );
                table.values.transpose() * fw
            })
            .collect())
    }

    /// `b_i = (f, U eta_i)` from per-element load vectors.
    pub fn rhs_from_loads(&self, loads: &[DVector<f64>]) -> Vec<f64> {
        let mut b = vec![0.0; self.n_dofs()];
        for (k, load) in loads.iter().enumerate() {
            let local = self.lift(k).u.transpose() * load;
            self.scatter_trace(k, &local, &mut b);
        }
        b
    }

    pub fn assemble_source_rhs<F: Fn([f64; 2]) -> f64 + Sync>(&self, f: F) -> Result<Vec<f64>> {
        Ok(self.rhs_from_loads(&self.load_vectors(f)?))
    }

    /// Recovers `u = U eta + U^W f` and `q = Q eta + Q^W f`.
    pub fn recover_source(&self, eta: &[f64], loads: &[DVector<f64>]) -> (Vec<DVector<f64>>, Vec<DVector<f64>>) {
        (0..self.mesh.num_elements())
            .map(|k| {
                let l = self.lift(k);
                let mu = self.local_trace(k, eta);
                (
                    &l.u * &mu + &l.u_load * &loads[k],
                    &l.q * &mu + &l.q_load * &loads[k],
                )
            })
            .unzip()
    }

    pub fn solve_with_loads(&self, loads: &[DVector<f64>]) -> Result<SourceSolution> {
        let b = self.rhs_from_loads(loads);
        let eta = self.factor()?.solve(&b);
        let (u, q) = self.recover_source(&eta, loads);
        Ok(SourceSolution { eta, u, q })
    }

    /// Solves the source problem `-div(alpha grad u) = f`, `u = 0` on the
    /// boundary.
    pub fn solve_source<F: Fn([f64; 2]) -> f64 + Sync>(&self, f: F) -> Result<SourceSolution> {
        let loads = self.load_vectors(f)?;
        self.solve_with_loads(&loads)
    }

    /// `A x`.
    pub fn apply_a(&self, x: &[f64]) -> Vec<f64> {
        spmv(&self.a, x)
    }

    /// Same problem with `alpha` and `tau` multiplied by `s`.
    pub fn scaled(&self, s: f64) -> Result<CondensedSystem> {
        assemble_condensed(
            self.mesh.clone(),
            self.spaces,
            self.tau.scaled(s, &self.mesh)?,
            self.mat.scaled(s)?,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_lshape_mesh, build_square_mesh};
    use crate::residual::{hdg_residuals, Load};
    use crate::sparse::{max_abs, symmetry_defect, to_dense};

    fn system(mesh: Mesh, k: usize) -> CondensedSystem {
        assemble_condensed(
            Arc::new(mesh),
            SpaceConfig::equal(k).unwrap(),
            TauSpec::Constant(1.0),
            MaterialSpec::identity(),
        )
        .unwrap()
    }

    #[test]
    fn dof_counts() {
        assert_eq!(system(build_square_mesh(0), 0).n_dofs(), 40);
        assert_eq!(system(build_square_mesh(1), 1).n_dofs(), 352);
    }

    #[test]
    fn congruence_classes_are_few_on_structured_meshes() {
        let n2 = system(build_square_mesh(2), 1).unique_lifts.len();
        let n3 = system(build_square_mesh(3), 1).unique_lifts.len();
        assert!(n2 <= 8 && n3 <= 8, "{n2} {n3}");
    }

    #[test]
    fn a_is_symmetric_and_positive_definite() {
        let s = system(build_lshape_mesh(1), 2);
        assert!(symmetry_defect(&s.a) < 1e-12);
        assert!(symmetry_defect(&s.g) < 1e-12);
        s.factor().unwrap();
        let g = to_dense(&s.g).symmetric_eigen();
        assert!(g.eigenvalues.min() > -1e-12 * g.eigenvalues.max());
    }

    #[test]
    fn m_of_zero_is_g() {
        let s = system(build_square_mesh(0), 0);
        let m0 = to_dense(&s.assemble_m_of_lambda(0.0).unwrap());
        let g = to_dense(&s.g);
        assert!((&m0 - &g).amax() <= 1e-13 * g.amax().max(1.0));
        let m = to_dense(&s.assemble_m_of_lambda(1e-6).unwrap());
        assert!((m - &g).amax() / g.amax() < 1e-4);
    }

    #[test]
    fn m_of_lambda_is_symmetric() {
        let s = system(build_square_mesh(1), 1);
        let m = s.assemble_m_of_lambda(2.0).unwrap();
        assert!(symmetry_defect(&m) < 1e-12);
    }

    #[test]
    fn source_rhs_is_linear_and_matches_direct_integration() {
        let s = system(build_square_mesh(0), 0);
        assert!(s.assemble_source_rhs(|_| 0.0).unwrap().iter().all(|v| *v == 0.0));
        let f = |x: [f64; 2]| x[0] * x[1].cos();
        let g = |x: [f64; 2]| (x[0] - x[1]).exp();
        let bf = s.assemble_source_rhs(f).unwrap();
        let bg = s.assemble_source_rhs(g).unwrap();
        let bfg = s.assemble_source_rhs(|x| f(x) + g(x)).unwrap();
        for i in 0..s.n_dofs() {
            assert!((bfg[i] - bf[i] - bg[i]).abs() < 1e-13 * bfg[i].abs().max(1.0));
        }
        // (1, U eta_i) by an independent loop over elements and quadrature
        // points in physical coordinates
        let b1 = s.assemble_source_rhs(|_| 1.0).unwrap();
        let rule = triangle_quadrature(8).unwrap();
        let mut direct = vec![0.0; s.n_dofs()];
        for k in 0..s.mesh.num_elements() {
            let geom = s.mesh.geometry(k);
            let (d, sg) = s.element_dofs(k);
            for (a, da) in d.iter().enumerate() {
                let Some(i) = da else { continue };
                let mut e = DVector::zeros(d.len());
                e[a] = sg[a];
                let uc = &s.lift(k).u * e;
                for (p, w) in rule.points.iter().zip(&rule.weights) {
                    let x = geom.map(*p);
                    direct[*i] += w * geom.det.abs()
                        * crate::field::scalar_at(&s.tables.w_basis, &geom, &uc, x);
                }
            }
        }
        for i in 0..s.n_dofs() {
            assert!((b1[i] - direct[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_source_gives_zero_solution() {
        let s = system(build_square_mesh(0), 1);
        let sol = s.solve_source(|_| 0.0).unwrap();
        assert!(sol.eta.iter().all(|v| *v == 0.0));
        assert!(sol.u.iter().all(|c| c.amax() == 0.0));
    }

    #[test]
    fn condensation_reproduces_the_full_hdg_system() {
        for (level, k) in [(0, 0), (0, 1), (0, 2), (1, 1)] {
            let s = system(build_square_mesh(level), k);
            let f = |x: [f64; 2]| (1.3 * x[0]).sin() + x[1] * x[1] - 0.4 * x[0] * x[1];
            let sol = s.solve_source(f).unwrap();
            let r = hdg_residuals(&s, &sol.u, &sol.q, &sol.eta, Load::Function(&f)).unwrap();
            assert!(r.iter().all(|v| *v < 1e-10), "level {level} k {k}: {r:?}");
        }
    }

    #[test]
    fn source_problem_converges() {
        let exact = |x: [f64; 2]| x[0].sin() * x[1].sin();
        let mut errs = Vec::new();
        for level in 0..3 {
            let s = system(build_square_mesh(level), 2);
            let sol = s.solve_source(|x| 2.0 * exact(x)).unwrap();
            errs.push(
                crate::field::l2_distance(&s.mesh, &s.tables.w_basis, &sol.u, 1.0, exact).unwrap(),
            );
        }
        for w in errs.windows(2) {
            let order = (w[0] / w[1]).log2();
            assert!(order > 2.7, "{errs:?}");
        }
    }

    #[test]
    fn scaling_alpha_and_tau_scales_a() {
        let s = system(build_square_mesh(0), 1);
        let t = s.scaled(3.0).unwrap();
        let (a, a3) = (to_dense(&s.a), to_dense(&t.a));
        assert!((a * 3.0 - a3).amax() < 1e-12 * max_abs(&t.a));
        assert!((to_dense(&s.g) - to_dense(&t.g)).amax() < 1e-12 * max_abs(&s.g));
    }
}
