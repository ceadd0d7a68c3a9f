use std::collections::HashMap;

use super::TriangleMesh;

/// 1-to-4 midpoint subdivision: one new vertex per edge, four faces per face.
/// Vertex count becomes `V + E`, face count `4F`.
pub fn refine(mesh: &TriangleMesh) -> TriangleMesh {
    let mut vertices = mesh.vertices.clone();
    let mut midpoint: HashMap<(usize, usize), usize> = HashMap::new();
    let mut mid = |a: usize, b: usize, vertices: &mut Vec<_>| -> usize {
        let key = (a.min(b), a.max(b));
        *midpoint.entry(key).or_insert_with(|| {
            vertices.push((mesh.vertices[a] + mesh.vertices[b]) * 0.5);
            vertices.len() - 1
        })
    };
    let mut faces = Vec::with_capacity(mesh.faces.len() * 4);
    for f in &mesh.faces {
        let ab = mid(f[0], f[1], &mut vertices);
        let bc = mid(f[1], f[2], &mut vertices);
        let ca = mid(f[2], f[0], &mut vertices);
        faces.push([f[0], ab, ca]);
        faces.push([f[1], bc, ab]);
        faces.push([f[2], ca, bc]);
        faces.push([ab, bc, ca]);
    }
    TriangleMesh { vertices, faces }
}
