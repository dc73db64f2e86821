//! Structured triangulations of the square `(0, pi)^2` and the L-shaped
//! domain `(0, 2)^2 \ (1, 2)^2`, uniform red refinement, and edge
//! connectivity.
//!
//! Local face `i` of a triangle `[a, b, c]` runs from vertex `i` to vertex
//! `(i + 1) % 3`. Global edges store their endpoints sorted ascending; that
//! order also fixes the parametrisation (and hence the sign) of the trace
//! basis on the edge.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{HdgError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Square,
    #[serde(rename = "lshape")]
    LShape,
}

impl Domain {
    pub fn area(self) -> f64 {
        match self {
            Domain::Square => PI * PI,
            Domain::LShape => 3.0,
        }
    }

    /// Point used to fix the sign of computed eigenfunctions.
    pub fn sign_anchor(self) -> [f64; 2] {
        match self {
            Domain::Square => [PI / 2.0 - 1e-3, PI / 2.0 - 1e-3],
            Domain::LShape => [0.5, 0.5],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Domain::Square => "square",
            Domain::LShape => "lshape",
        }
    }
}

impl std::str::FromStr for Domain {
    type Err = HdgError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "square" => Ok(Domain::Square),
            "lshape" | "l-shape" | "l" => Ok(Domain::LShape),
            other => Err(HdgError::InvalidConfig(format!("unknown domain '{other}'"))),
        }
    }
}

/// Elements incident to an edge, as `(element, local face)`. The first entry
/// has the lower element index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeIncidence {
    pub first: (usize, usize),
    pub second: Option<(usize, usize)>,
}

impl EdgeIncidence {
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> {
        std::iter::once(self.first).chain(self.second)
    }
}

/// Affine map `x = origin + jacobian * xhat` from the reference triangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElementGeometry {
    pub vertices: [[f64; 2]; 3],
    /// Columns are `v1 - v0` and `v2 - v0`.
    pub jacobian: [[f64; 2]; 2],
    pub det: f64,
    pub inverse: [[f64; 2]; 2],
}

impl ElementGeometry {
    pub fn new(vertices: [[f64; 2]; 3]) -> Self {
        let [v0, v1, v2] = vertices;
        let jacobian = [[v1[0] - v0[0], v2[0] - v0[0]], [v1[1] - v0[1], v2[1] - v0[1]]];
        let det = jacobian[0][0] * jacobian[1][1] - jacobian[0][1] * jacobian[1][0];
        let inverse = [
            [jacobian[1][1] / det, -jacobian[0][1] / det],
            [-jacobian[1][0] / det, jacobian[0][0] / det],
        ];
        Self {
            vertices,
            jacobian,
            det,
            inverse,
        }
    }

    pub fn area(&self) -> f64 {
        0.5 * self.det.abs()
    }

    pub fn map(&self, xhat: [f64; 2]) -> [f64; 2] {
        let j = &self.jacobian;
        let v0 = self.vertices[0];
        [
            v0[0] + j[0][0] * xhat[0] + j[0][1] * xhat[1],
            v0[1] + j[1][0] * xhat[0] + j[1][1] * xhat[1],
        ]
    }

    pub fn inverse_map(&self, x: [f64; 2]) -> [f64; 2] {
        let d = [x[0] - self.vertices[0][0], x[1] - self.vertices[0][1]];
        let b = &self.inverse;
        [b[0][0] * d[0] + b[0][1] * d[1], b[1][0] * d[0] + b[1][1] * d[1]]
    }

    /// Physical gradient from a reference gradient: `B^{-T} ghat`.
    pub fn push_gradient(&self, g: [f64; 2]) -> [f64; 2] {
        let b = &self.inverse;
        [b[0][0] * g[0] + b[1][0] * g[1], b[0][1] * g[0] + b[1][1] * g[1]]
    }

    /// Applies the Jacobian to a reference vector.
    pub fn push_vector(&self, v: [f64; 2]) -> [f64; 2] {
        let j = &self.jacobian;
        [j[0][0] * v[0] + j[0][1] * v[1], j[1][0] * v[0] + j[1][1] * v[1]]
    }

    pub fn face_vertices(&self, face: usize) -> ([f64; 2], [f64; 2]) {
        (self.vertices[face], self.vertices[(face + 1) % 3])
    }

    pub fn face_length(&self, face: usize) -> f64 {
        let (a, b) = self.face_vertices(face);
        (b[0] - a[0]).hypot(b[1] - a[1])
    }

    /// Outward unit normal on local face `face` (counterclockwise element).
    pub fn face_normal(&self, face: usize) -> [f64; 2] {
        let (a, b) = self.face_vertices(face);
        let d = [b[0] - a[0], b[1] - a[1]];
        let len = d[0].hypot(d[1]);
        let s = self.det.signum();
        [s * d[1] / len, -s * d[0] / len]
    }

    /// Reference coordinates of the point at parameter `s` along local face
    /// `face`.
    pub fn face_point_reference(face: usize, s: f64) -> [f64; 2] {
        match face {
            0 => [s, 0.0],
            1 => [1.0 - s, s],
            _ => [0.0, 1.0 - s],
        }
    }

    pub fn diameter(&self) -> f64 {
        (0..3).map(|f| self.face_length(f)).fold(0.0, f64::max)
    }

    pub fn contains(&self, x: [f64; 2], tol: f64) -> bool {
        let r = self.inverse_map(x);
        r[0] >= -tol && r[1] >= -tol && r[0] + r[1] <= 1.0 + tol
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub domain: Domain,
    pub vertices: Vec<[f64; 2]>,
    pub triangles: Vec<[usize; 3]>,
    pub edges: Vec<[usize; 2]>,
    pub edge_elements: Vec<EdgeIncidence>,
    pub boundary: Vec<bool>,
    /// Global edge index of each local face.
    pub element_edges: Vec<[usize; 3]>,
    pub h_k: Vec<f64>,
    pub h: f64,
    pub level: usize,
}

impl Mesh {
    /// Builds connectivity for a list of counterclockwise triangles.
    pub fn from_parts(
        domain: Domain,
        vertices: Vec<[f64; 2]>,
        triangles: Vec<[usize; 3]>,
        level: usize,
    ) -> Result<Self> {
        let mut index: HashMap<[usize; 2], usize> = HashMap::with_capacity(triangles.len() * 2);
        let mut edges = Vec::new();
        let mut incidence: Vec<Vec<(usize, usize)>> = Vec::new();
        let mut element_edges = Vec::with_capacity(triangles.len());
        let mut h_k = Vec::with_capacity(triangles.len());

        for (t, tri) in triangles.iter().enumerate() {
            let geo = ElementGeometry::new([vertices[tri[0]], vertices[tri[1]], vertices[tri[2]]]);
            if geo.det <= 0.0 {
                return Err(HdgError::InvalidConfig(format!(
                    "triangle {t} is not counterclockwise (signed area {})",
                    0.5 * geo.det
                )));
            }
            h_k.push(geo.diameter());
            let mut local = [0; 3];
            for (f, slot) in local.iter_mut().enumerate() {
                let (a, b) = (tri[f], tri[(f + 1) % 3]);
                let key = [a.min(b), a.max(b)];
                let e = *index.entry(key).or_insert_with(|| {
                    edges.push(key);
                    incidence.push(Vec::with_capacity(2));
                    edges.len() - 1
                });
                incidence[e].push((t, f));
                *slot = e;
            }
            element_edges.push(local);
        }

        let mut edge_elements = Vec::with_capacity(edges.len());
        let mut boundary = Vec::with_capacity(edges.len());
        for (e, inc) in incidence.into_iter().enumerate() {
            match inc.as_slice() {
                [a] => {
                    edge_elements.push(EdgeIncidence {
                        first: *a,
                        second: None,
                    });
                    boundary.push(true);
                }
                [a, b] => {
                    let (first, second) = if a.0 < b.0 { (*a, *b) } else { (*b, *a) };
                    edge_elements.push(EdgeIncidence {
                        first,
                        second: Some(second),
                    });
                    boundary.push(false);
                }
                _ => {
                    return Err(HdgError::InvalidConfig(format!(
                        "edge {e} ({:?}) is shared by {} triangles",
                        edges[e],
                        inc.len()
                    )))
                }
            }
        }

        let h = h_k.iter().copied().fold(0.0, f64::max);
        Ok(Self {
            domain,
            vertices,
            triangles,
            edges,
            edge_elements,
            boundary,
            element_edges,
            h_k,
            h,
            level,
        })
    }

    pub fn num_elements(&self) -> usize {
        self.triangles.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn num_boundary_edges(&self) -> usize {
        self.boundary.iter().filter(|&&b| b).count()
    }

    pub fn num_interior_edges(&self) -> usize {
        self.num_edges() - self.num_boundary_edges()
    }

    pub fn geometry(&self, element: usize) -> ElementGeometry {
        let t = self.triangles[element];
        ElementGeometry::new([self.vertices[t[0]], self.vertices[t[1]], self.vertices[t[2]]])
    }

    /// Whether local face `face` of `element` runs against the global
    /// orientation of its edge.
    pub fn face_is_flipped(&self, element: usize, face: usize) -> bool {
        let t = self.triangles[element];
        t[face] > t[(face + 1) % 3]
    }

    /// Grid spacing: the largest over elements of the shortest edge. On the
    /// structured right-triangle meshes this is the leg length.
    pub fn spacing(&self) -> f64 {
        (0..self.num_elements())
            .map(|k| {
                let g = self.geometry(k);
                (0..3).map(|f| g.face_length(f)).fold(f64::INFINITY, f64::min)
            })
            .fold(0.0, f64::max)
    }

    pub fn total_area(&self) -> f64 {
        (0..self.num_elements()).map(|k| self.geometry(k).area()).sum()
    }

    /// First element (by index) containing `x`.
    pub fn locate(&self, x: [f64; 2]) -> Option<usize> {
        (0..self.num_elements()).find(|&k| self.geometry(k).contains(x, 1e-12))
    }

    /// Red refinement: every triangle is split into four congruent children
    /// through its edge midpoints.
    pub fn refine(&self) -> Mesh {
        let nv = self.vertices.len();
        let mut vertices = self.vertices.clone();
        vertices.extend(self.edges.iter().map(|&[a, b]| {
            let (p, q) = (self.vertices[a], self.vertices[b]);
            [0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1])]
        }));
        let mut triangles = Vec::with_capacity(4 * self.num_elements());
        for (t, &[a, b, c]) in self.triangles.iter().enumerate() {
            let [eab, ebc, eca] = self.element_edges[t].map(|e| nv + e);
            triangles.push([a, eab, eca]);
            triangles.push([eab, b, ebc]);
            triangles.push([eca, ebc, c]);
            triangles.push([eab, ebc, eca]);
        }
        Mesh::from_parts(self.domain, vertices, triangles, self.level + 1)
            .expect("red refinement of a valid mesh is valid")
    }

    /// Renumbers vertices and elements: new vertex `i` is old vertex
    /// `vertex_perm[i]`, new element `j` is old element `element_perm[j]`.
    /// Each triangle's vertices are cyclically rotated by `j % 3`.
    pub fn permuted(&self, vertex_perm: &[usize], element_perm: &[usize]) -> Result<Mesh> {
        let mut old_to_new = vec![0; vertex_perm.len()];
        for (new, &old) in vertex_perm.iter().enumerate() {
            old_to_new[old] = new;
        }
        let vertices = vertex_perm.iter().map(|&old| self.vertices[old]).collect();
        let triangles = element_perm
            .iter()
            .enumerate()
            .map(|(j, &old)| {
                let t = self.triangles[old].map(|v| old_to_new[v]);
                let r = j % 3;
                [t[r], t[(r + 1) % 3], t[(r + 2) % 3]]
            })
            .collect();
        Mesh::from_parts(self.domain, vertices, triangles, self.level)
    }

    /// Plain-text dump: `v x y`, `t i j k` and `e i j flag` lines
    /// (flag 1 marks a boundary edge).
    pub fn write_text<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for v in &self.vertices {
            writeln!(out, "v {:.17e} {:.17e}", v[0], v[1])?;
        }
        for t in &self.triangles {
            writeln!(out, "t {} {} {}", t[0], t[1], t[2])?;
        }
        for (e, &[a, b]) in self.edges.iter().enumerate() {
            writeln!(out, "e {a} {b} {}", u8::from(self.boundary[e]))?;
        }
        Ok(())
    }
}

/// 4x4 grid of `(0, side)^2` split along positively sloped diagonals, with
/// the squares for which `keep(i, j)` is false omitted.
fn grid_mesh(domain: Domain, side: f64, keep: impl Fn(usize, usize) -> bool) -> Mesh {
    const N: usize = 4;
    let id = |i: usize, j: usize| j * (N + 1) + i;
    let mut triangles = Vec::new();
    for j in 0..N {
        for i in 0..N {
            if !keep(i, j) {
                continue;
            }
            let (v00, v10, v11, v01) = (id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
            triangles.push([v00, v10, v11]);
            triangles.push([v00, v11, v01]);
        }
    }
    // drop vertices no kept triangle uses
    let mut used = [usize::MAX; (N + 1) * (N + 1)];
    let mut vertices = Vec::new();
    for t in triangles.iter_mut() {
        for v in t.iter_mut() {
            if used[*v] == usize::MAX {
                used[*v] = vertices.len();
                let (i, j) = (*v % (N + 1), *v / (N + 1));
                vertices.push([side * i as f64 / N as f64, side * j as f64 / N as f64]);
            }
            *v = used[*v];
        }
    }
    Mesh::from_parts(domain, vertices, triangles, 0).expect("structured grid is valid")
}

fn refine_to(mut mesh: Mesh, level: usize) -> Mesh {
    for _ in 0..level {
        mesh = mesh.refine();
    }
    mesh
}

/// Mesh of `(0, pi)^2` with `32 * 4^level` triangles.
pub fn build_square_mesh(level: usize) -> Mesh {
    refine_to(grid_mesh(Domain::Square, PI, |_, _| true), level)
}

/// Mesh of `(0, 2)^2 \ (1, 2)^2` with `24 * 4^level` triangles.
pub fn build_lshape_mesh(level: usize) -> Mesh {
    refine_to(grid_mesh(Domain::LShape, 2.0, |i, j| i < 2 || j < 2), level)
}

pub fn build_mesh(domain: Domain, level: usize) -> Mesh {
    match domain {
        Domain::Square => build_square_mesh(level),
        Domain::LShape => build_lshape_mesh(level),
    }
}

pub fn refine(mesh: &Mesh) -> Mesh {
    mesh.refine()
}
