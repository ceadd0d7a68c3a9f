//! Indexed triangle meshes: representation, file I/O, topology checks and the
//! quality-improvement chain (smoothing, edge-collapse simplification, 1-to-4
//! refinement).
//!
//! Faces are wound counter-clockwise when viewed from outside, so normals
//! computed with the right-hand rule point outward and the signed volume of a
//! closed mesh is positive.

mod io;
mod refine;
pub mod shapes;
mod simplify;
mod smooth;
mod topology;


use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

pub use io::{load_mesh, read_mesh, save_off, write_colored_ply, write_off, MeshFormat};
pub use refine::refine;
pub use simplify::simplify;
pub use smooth::laplacian_smooth;
pub use topology::{check_genus0, validate_genus0, MeshQualityReport};

pub type Face = [usize; 3];

#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Vector3<f64>>,
    pub faces: Vec<Face>,
}

impl TriangleMesh {
    /// Builds a mesh, checking index ranges and rejecting faces that repeat a
    /// vertex. Topology is not checked here; see [`check_genus0`].
    pub fn new(vertices: Vec<Vector3<f64>>, faces: Vec<Face>) -> Result<Self> {
        let n = vertices.len();
        for (fi, f) in faces.iter().enumerate() {
            for &v in f {
                if v >= n {
                    return Err(Error::IndexOutOfRange { index: v, len: n });
                }
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::Topology(format!("face {fi} repeats a vertex: {f:?}")));
            }
        }
        Ok(Self { vertices, faces })
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    /// Unique undirected edges as `(min, max)` pairs, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut edges: Vec<(usize, usize)> = self
            .faces
            .iter()
            .flat_map(|f| {
                [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])]
                    .map(|(a, b)| (a.min(b), a.max(b)))
            })
            .collect();
        edges.sort_unstable();
        edges.dedup();
        edges
    }

    pub fn euler_characteristic(&self) -> i64 {
        self.vertices.len() as i64 - self.edges().len() as i64 + self.faces.len() as i64
    }

    /// One-ring neighbour lists, each sorted ascending.
    pub fn vertex_neighbors(&self) -> Vec<Vec<usize>> {
        let mut nbrs = vec![Vec::new(); self.vertices.len()];
        for &(a, b) in &self.edges() {
            nbrs[a].push(b);
            nbrs[b].push(a);
        }
        for n in &mut nbrs {
            n.sort_unstable();
        }
        nbrs
    }

    pub fn face_positions(&self, fi: usize) -> [Vector3<f64>; 3] {
        let f = self.faces[fi];
        [self.vertices[f[0]], self.vertices[f[1]], self.vertices[f[2]]]
    }

    /// Unnormalized normal: twice the face area along the face normal.
    pub fn face_cross(&self, fi: usize) -> Vector3<f64> {
        let [a, b, c] = self.face_positions(fi);
        (b - a).cross(&(c - a))
    }

    pub fn face_area(&self, fi: usize) -> f64 {
        0.5 * self.face_cross(fi).norm()
    }

    pub fn face_areas(&self) -> Vec<f64> {
        (0..self.faces.len()).map(|fi| self.face_area(fi)).collect()
    }

    pub fn surface_area(&self) -> f64 {
        self.face_areas().iter().sum()
    }

    /// Sum over faces of `det(p1, p2, p3) / 6`.
    pub fn signed_volume(&self) -> f64 {
        self.faces
            .iter()
            .map(|f| {
                let (a, b, c) = (self.vertices[f[0]], self.vertices[f[1]], self.vertices[f[2]]);
                a.dot(&b.cross(&c)) / 6.0
            })
            .sum()
    }

    pub fn centroid(&self) -> Vector3<f64> {
        let sum: Vector3<f64> = self.vertices.iter().sum();
        sum / self.vertices.len().max(1) as f64
    }

    /// Area-weighted vertex normals, unit length.
    pub fn vertex_normals(&self) -> Vec<Vector3<f64>> {
        let mut normals = vec![Vector3::zeros(); self.vertices.len()];
        for (fi, f) in self.faces.iter().enumerate() {
            let n = self.face_cross(fi);
            for &v in f {
                normals[v] += n;
            }
        }
        for n in &mut normals {
            let len = n.norm();
            if len > 0.0 {
                *n /= len;
            }
        }
        normals
    }

    /// Mean and standard deviation of edge lengths, as their ratio.
    pub fn edge_length_cv(&self) -> f64 {
        let lengths: Vec<f64> = self
            .edges()
            .iter()
            .map(|&(a, b)| (self.vertices[a] - self.vertices[b]).norm())
            .collect();
        if lengths.is_empty() {
            return 0.0;
        }
        let n = lengths.len() as f64;
        let mean = lengths.iter().sum::<f64>() / n;
        if mean == 0.0 {
            return 0.0;
        }
        let var = lengths.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / n;
        var.sqrt() / mean
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            vertices: self.vertices.iter().map(|v| v * s).collect(),
            faces: self.faces.clone(),
        }
    }

    /// Applies `x -> rotation * x + translation` to every vertex.
    pub fn transformed(&self, rotation: &Matrix3<f64>, translation: &Vector3<f64>) -> Self {
        Self {
            vertices: self.vertices.iter().map(|v| rotation * v + translation).collect(),
            faces: self.faces.clone(),
        }
    }

    /// Same surface with every face wound the other way.
    pub fn reversed(&self) -> Self {
        Self {
            vertices: self.vertices.clone(),
            faces: self.faces.iter().map(|f| [f[0], f[2], f[1]]).collect(),
        }
    }

    /// Flips the winding if needed so the signed volume is non-negative.
    pub fn oriented_outward(self) -> Self {
        if self.signed_volume() < 0.0 {
            self.reversed()
        } else {
            self
        }
    }

    /// Per-vertex area: one third of the area of every incident face.
    pub fn barycentric_areas(&self) -> Vec<f64> {
        let mut areas = vec![0.0; self.vertices.len()];
        for (fi, f) in self.faces.iter().enumerate() {
            let a = self.face_area(fi) / 3.0;
            for &v in f {
                areas[v] += a;
            }
        }
        areas
    }
}

#[cfg(test)]
mod tests {
    use super::shapes;
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn unit_cube_volume() {
        let cube = shapes::unit_cube();
        assert_relative_eq!(cube.signed_volume(), 1.0, epsilon = 1e-15);
        assert_relative_eq!(cube.reversed().signed_volume(), -1.0, epsilon = 1e-15);
    }

    #[test]
    fn icosphere_volume_close_to_ball() {
        let s = shapes::icosphere(4, 1.0);
        let ball = 4.0 * std::f64::consts::PI / 3.0;
        let rel = (s.signed_volume() - ball).abs() / ball;
        assert!(rel < 0.01, "relative volume error {rel}");
    }

    #[test]
    fn volume_scales_cubically() {
        let m = shapes::ellipsoid([2.0, 1.0, 0.5], 2);
        for s in [0.5, 1.7, 3.0] {
            assert_relative_eq!(
                m.scaled(s).signed_volume(),
                s.powi(3) * m.signed_volume(),
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn rejects_bad_faces() {
        let v = vec![Vector3::zeros(); 3];
        assert!(TriangleMesh::new(v.clone(), vec![[0, 1, 3]]).is_err());
        assert!(TriangleMesh::new(v, vec![[0, 1, 1]]).is_err());
    }

    #[test]
    fn equilateral_icosahedron_has_zero_edge_cv() {
        let ico = shapes::icosahedron();
        assert!(ico.edge_length_cv() < 1e-12);
    }
}
