use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::TriangleMesh;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshQualityReport {
    pub vertex_count: usize,
    pub edge_count: usize,
    pub face_count: usize,
    pub euler_characteristic: i64,
    /// Standard deviation over mean of the edge lengths.
    pub edge_length_cv: f64,
    pub min_face_area: f64,
    /// Topology problems found; empty for a closed, consistently oriented
    /// genus-0 manifold.
    pub issues: Vec<String>,
}

impl MeshQualityReport {
    pub fn is_genus0(&self) -> bool {
        self.euler_characteristic == 2 && self.issues.is_empty()
    }
}

/// Read-only quality and topology report. Findings are recorded, never thrown.
pub fn validate_genus0(mesh: &TriangleMesh) -> MeshQualityReport {
    let edges = mesh.edges();
    let chi = mesh.vertices.len() as i64 - edges.len() as i64 + mesh.faces.len() as i64;
    let min_face_area = mesh
        .face_areas()
        .into_iter()
        .fold(f64::INFINITY, f64::min);
    let issues = topology_issues(mesh);
    MeshQualityReport {
        vertex_count: mesh.vertices.len(),
        edge_count: edges.len(),
        face_count: mesh.faces.len(),
        euler_characteristic: chi,
        edge_length_cv: mesh.edge_length_cv(),
        min_face_area: if min_face_area.is_finite() { min_face_area } else { 0.0 },
        issues,
    }
}

/// Fails with a [`Error::Topology`] unless the mesh is a closed, edge- and
/// vertex-manifold, consistently oriented, connected surface with `V - E + F = 2`.
pub fn check_genus0(mesh: &TriangleMesh) -> Result<()> {
    let issues = topology_issues(mesh);
    if let Some(first) = issues.into_iter().next() {
        return Err(Error::Topology(first));
    }
    let chi = mesh.euler_characteristic();
    if chi != 2 {
        return Err(Error::Topology(format!(
            "Euler characteristic {chi}, expected 2 (genus 0)"
        )));
    }
    Ok(())
}

fn topology_issues(mesh: &TriangleMesh) -> Vec<String> {
    let mut issues = Vec::new();
    let n = mesh.vertices.len();
    if mesh.faces.is_empty() {
        issues.push("mesh has no faces".into());
        return issues;
    }

    let mut directed: HashMap<(usize, usize), usize> = HashMap::new();
    for f in &mesh.faces {
        for k in 0..3 {
            *directed.entry((f[k], f[(k + 1) % 3])).or_default() += 1;
        }
    }
    let mut dup = 0;
    let mut open = 0;
    for (&(a, b), &count) in &directed {
        if count > 1 {
            dup += 1;
        }
        if !directed.contains_key(&(b, a)) {
            open += 1;
        }
    }
    if dup > 0 {
        issues.push(format!(
            "{dup} directed edges used by more than one face (non-manifold edge or inconsistent orientation)"
        ));
    }
    if open > 0 {
        issues.push(format!("{open} boundary half-edges (surface is not closed)"));
    }

    // Around each vertex, the faces must form a single fan cycle.
    let mut next_around: Vec<HashMap<usize, usize>> = vec![HashMap::new(); n];
    for f in &mesh.faces {
        for k in 0..3 {
            next_around[f[k]].insert(f[(k + 1) % 3], f[(k + 2) % 3]);
        }
    }
    let mut isolated = 0;
    let mut non_manifold = Vec::new();
    for (v, ring) in next_around.iter().enumerate() {
        if ring.is_empty() {
            isolated += 1;
            continue;
        }
        let start = *ring.keys().min().unwrap();
        let mut cur = start;
        let mut steps = 0;
        loop {
            match ring.get(&cur) {
                Some(&nx) => {
                    cur = nx;
                    steps += 1;
                    if cur == start || steps > ring.len() {
                        break;
                    }
                }
                None => break,
            }
        }
        if cur != start || steps != ring.len() {
            non_manifold.push(v);
        }
    }
    if isolated > 0 {
        issues.push(format!("{isolated} vertices not referenced by any face"));
    }
    if !non_manifold.is_empty() {
        issues.push(format!(
            "{} non-manifold vertices (first: {})",
            non_manifold.len(),
            non_manifold[0]
        ));
    }

    let components = face_components(mesh);
    if components != 1 {
        issues.push(format!("{components} connected components"));
    }
    issues
}

fn face_components(mesh: &TriangleMesh) -> usize {
    let n = mesh.vertices.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for f in &mesh.faces {
        for k in 1..3 {
            let (a, b) = (find(&mut parent, f[0]), find(&mut parent, f[k]));
            if a != b {
                parent[a] = b;
            }
        }
    }
    let mut used = vec![false; n];
    for f in &mesh.faces {
        for &v in f {
            used[v] = true;
        }
    }
    let mut roots: Vec<usize> = (0..n).filter(|&v| used[v]).map(|v| find(&mut parent, v)).collect();
    roots.sort_unstable();
    roots.dedup();
    roots.len()
}
