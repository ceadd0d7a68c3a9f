use nalgebra::Vector3;

use super::TriangleMesh;
use crate::error::{Error, Result};

/// Uniform-weight Laplacian smoothing. Every iteration moves each vertex by
/// `step * (one-ring average - vertex)`, all vertices updated simultaneously.
pub fn laplacian_smooth(mesh: &TriangleMesh, iterations: usize, step: f64) -> Result<TriangleMesh> {
    if !(step > 0.0 && step <= 1.0) {
        return Err(Error::InvalidParameter(format!("smoothing step {step} outside (0, 1]")));
    }
    if iterations == 0 {
        return Err(Error::InvalidParameter("smoothing iterations must be positive".into()));
    }
    let nbrs = mesh.vertex_neighbors();
    let mut pos = mesh.vertices.clone();
    let mut next = pos.clone();
    for _ in 0..iterations {
        for (i, ring) in nbrs.iter().enumerate() {
            if ring.is_empty() {
                next[i] = pos[i];
                continue;
            }
            let avg = ring.iter().map(|&j| pos[j]).sum::<Vector3<f64>>() / ring.len() as f64;
            next[i] = pos[i] + step * (avg - pos[i]);
        }
        std::mem::swap(&mut pos, &mut next);
    }
    Ok(TriangleMesh {
        vertices: pos,
        faces: mesh.faces.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::super::shapes;
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn radial_std(m: &TriangleMesh) -> f64 {
        let r: Vec<f64> = m.vertices.iter().map(|v| v.norm()).collect();
        let mean = r.iter().sum::<f64>() / r.len() as f64;
        (r.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / r.len() as f64).sqrt()
    }

    #[test]
    fn sphere_shrinks_uniformly() {
        let s = shapes::icosahedron();
        let out = laplacian_smooth(&s, 1, 0.5).unwrap();
        let r0 = out.vertices[0].norm();
        for v in &out.vertices {
            assert!(v.norm() < 1.0);
            assert!((v.norm() - r0).abs() < 1e-12);
        }
        assert_eq!(out.faces, s.faces);
    }

    #[test]
    fn rejects_bad_step() {
        let s = shapes::icosahedron();
        assert!(laplacian_smooth(&s, 1, 0.0).is_err());
        assert!(laplacian_smooth(&s, 1, 1.5).is_err());
    }

    #[test]
    fn reduces_radial_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut m = shapes::icosphere(3, 1.0);
        for v in &mut m.vertices {
            let n: f64 = rng.sample(StandardNormal);
            *v *= 1.0 + 0.05 * n;
        }
        let before = radial_std(&m);
        let after = radial_std(&laplacian_smooth(&m, 10, 0.5).unwrap());
        assert!(after < before, "{after} !< {before}");
    }
}
