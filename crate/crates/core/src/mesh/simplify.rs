use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::Vector3;

use super::TriangleMesh;
use crate::error::{Error, Result};

#[derive(Debug, PartialEq)]
struct Candidate {
    len: f64,
    a: usize,
    b: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    // min-heap on length, ties broken by vertex ids for determinism
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .len
            .total_cmp(&self.len)
            .then_with(|| other.a.cmp(&self.a))
            .then_with(|| other.b.cmp(&self.b))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

struct Collapser {
    pos: Vec<Vector3<f64>>,
    faces: Vec<[usize; 3]>,
    face_alive: Vec<bool>,
    vert_faces: Vec<Vec<usize>>,
    vert_alive: Vec<bool>,
    alive: usize,
    min_area: f64,
}

impl Collapser {
    fn new(mesh: &TriangleMesh) -> Self {
        let mut vert_faces = vec![Vec::new(); mesh.vertices.len()];
        for (fi, f) in mesh.faces.iter().enumerate() {
            for &v in f {
                vert_faces[v].push(fi);
            }
        }
        let mean_area = mesh.surface_area() / mesh.faces.len().max(1) as f64;
        Self {
            pos: mesh.vertices.clone(),
            faces: mesh.faces.clone(),
            face_alive: vec![true; mesh.faces.len()],
            vert_faces,
            vert_alive: vec![true; mesh.vertices.len()],
            alive: mesh.vertices.len(),
            min_area: 1e-10 * mean_area,
        }
    }

    fn neighbors(&self, v: usize) -> Vec<usize> {
        let mut n: Vec<usize> = self.vert_faces[v]
            .iter()
            .flat_map(|&fi| self.faces[fi])
            .filter(|&u| u != v)
            .collect();
        n.sort_unstable();
        n.dedup();
        n
    }

    fn cross(&self, f: [usize; 3], moved: usize, to: &Vector3<f64>) -> Vector3<f64> {
        let p = |v: usize| if v == moved { *to } else { self.pos[v] };
        (p(f[1]) - p(f[0])).cross(&(p(f[2]) - p(f[0])))
    }

    /// Collapses edge (a, b) onto its midpoint, keeping `a`. Returns false
    /// when the link condition or the flip/area guard rejects the collapse.
    fn try_collapse(&mut self, a: usize, b: usize) -> bool {
        let na = self.neighbors(a);
        let nb = self.neighbors(b);
        if na.binary_search(&b).is_err() {
            return false;
        }
        let common: Vec<usize> = na.iter().copied().filter(|v| nb.binary_search(v).is_ok()).collect();
        if common.len() != 2 {
            return false;
        }
        let shared: Vec<usize> = self.vert_faces[a]
            .iter()
            .copied()
            .filter(|&fi| self.faces[fi].contains(&b))
            .collect();
        if shared.len() != 2 {
            return false;
        }

        let mid = (self.pos[a] + self.pos[b]) * 0.5;
        for &v in &[a, b] {
            for &fi in &self.vert_faces[v] {
                if shared.contains(&fi) {
                    continue;
                }
                let f = self.faces[fi];
                let old = self.cross(f, usize::MAX, &mid);
                let new = self.cross(f, v, &mid);
                if 0.5 * new.norm() <= self.min_area || old.dot(&new) <= 0.0 {
                    return false;
                }
            }
        }

        for &fi in &shared {
            self.face_alive[fi] = false;
            for v in self.faces[fi] {
                self.vert_faces[v].retain(|&g| g != fi);
            }
        }
        let moved = std::mem::take(&mut self.vert_faces[b]);
        for &fi in &moved {
            for v in &mut self.faces[fi] {
                if *v == b {
                    *v = a;
                }
            }
        }
        self.vert_faces[a].extend(moved);
        self.pos[a] = mid;
        self.vert_alive[b] = false;
        self.alive -= 1;
        true
    }

    fn live_edges(&self) -> BinaryHeap<Candidate> {
        let mut heap = BinaryHeap::new();
        for (fi, f) in self.faces.iter().enumerate() {
            if !self.face_alive[fi] {
                continue;
            }
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                if a < b {
                    heap.push(Candidate {
                        len: (self.pos[a] - self.pos[b]).norm(),
                        a,
                        b,
                    });
                }
            }
        }
        heap
    }

    fn into_mesh(self) -> TriangleMesh {
        let mut remap = vec![usize::MAX; self.pos.len()];
        let mut vertices = Vec::with_capacity(self.alive);
        for (v, &ok) in self.vert_alive.iter().enumerate() {
            if ok {
                remap[v] = vertices.len();
                vertices.push(self.pos[v]);
            }
        }
        let faces = self
            .faces
            .iter()
            .zip(&self.face_alive)
            .filter(|(_, &ok)| ok)
            .map(|(f, _)| [remap[f[0]], remap[f[1]], remap[f[2]]])
            .collect();
        TriangleMesh { vertices, faces }
    }
}

/// Shortest-edge-first edge-collapse decimation with midpoint placement.
///
/// A collapse is legal when the edge's endpoints share exactly two neighbours
/// (link condition) and no surviving face flips or degenerates.
pub fn simplify(mesh: &TriangleMesh, target_vertex_count: usize) -> Result<TriangleMesh> {
    let n = mesh.vertex_count();
    if target_vertex_count < 4 || target_vertex_count > n {
        return Err(Error::InvalidParameter(format!(
            "target vertex count {target_vertex_count} outside [4, {n}]"
        )));
    }
    if target_vertex_count == n {
        return Ok(mesh.clone());
    }
    let mut c = Collapser::new(mesh);
    let mut heap = c.live_edges();

    // Rejected edges are dropped from the queue; when it runs dry the queue is
    // reseeded from every live edge, as long as the previous pass made progress.
    let mut alive_at_reseed = c.alive;
    while c.alive > target_vertex_count {
        let Some(Candidate { len, a, b }) = heap.pop() else {
            if c.alive == alive_at_reseed {
                return Err(Error::Simplification(format!(
                    "no legal collapse left at {} vertices (target {target_vertex_count})",
                    c.alive
                )));
            }
            alive_at_reseed = c.alive;
            heap = c.live_edges();
            continue;
        };
        if !c.vert_alive[a] || !c.vert_alive[b] {
            continue;
        }
        let current = (c.pos[a] - c.pos[b]).norm();
        if current != len {
            // stale entry; a fresh one was pushed when the endpoint moved
            continue;
        }
        if c.try_collapse(a, b) {
            for u in c.neighbors(a) {
                heap.push(Candidate {
                    len: (c.pos[a] - c.pos[u]).norm(),
                    a: a.min(u),
                    b: a.max(u),
                });
            }
        }
    }
    Ok(c.into_mesh())
}
