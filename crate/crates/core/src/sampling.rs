//! Point sets and rotations on the unit sphere.

use delaunator::{triangulate, Point};
use nalgebra::{Matrix3, Quaternion, Rotation3, UnitQuaternion, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::mesh::{Face, TriangleMesh};

/// Fibonacci (golden-angle) lattice of exactly `n` unit vectors.
pub fn fibonacci_points(n: usize) -> Vec<Vector3<f64>> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - (2.0 * i as f64 + 1.0) / n as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let phi = golden * i as f64;
            Vector3::new(r * phi.cos(), r * phi.sin(), z)
        })
        .collect()
}

/// Convex-hull triangulation of points lying on the unit sphere, outward
/// oriented. Computed as a planar Delaunay triangulation of the stereographic
/// projection from one of the points, closed by a fan around that point.
pub fn sphere_hull(points: &[Vector3<f64>]) -> Vec<Face> {
    assert!(points.len() >= 4, "hull needs at least 4 points");
    let pole_idx = 0;
    let pole = points[pole_idx].normalize();
    let to_north = rotation_to_north(&pole);
    let mut planar = Vec::with_capacity(points.len() - 1);
    let mut ids = Vec::with_capacity(points.len() - 1);
    for (i, p) in points.iter().enumerate() {
        if i == pole_idx {
            continue;
        }
        let q = to_north * p.normalize();
        let d = 1.0 - q.z;
        planar.push(Point {
            x: q.x / d,
            y: q.y / d,
        });
        ids.push(i);
    }
    let tri = triangulate(&planar);
    let mut faces: Vec<Face> = tri
        .triangles
        .chunks_exact(3)
        .map(|t| [ids[t[0]], ids[t[1]], ids[t[2]]])
        .collect();
    let h = &tri.hull;
    for k in 0..h.len() {
        faces.push([ids[h[k]], ids[h[(k + 1) % h.len()]], pole_idx]);
    }
    for f in &mut faces {
        let (a, b, c) = (points[f[0]], points[f[1]], points[f[2]]);
        if a.dot(&b.cross(&c)) < 0.0 {
            f.swap(1, 2);
        }
    }
    faces
}

/// Rotation taking `d` to `+z`.
fn rotation_to_north(d: &Vector3<f64>) -> Matrix3<f64> {
    let z = Vector3::z();
    match Rotation3::rotation_between(d, &z) {
        Some(r) => r.into_inner(),
        None => Rotation3::from_axis_angle(&Vector3::x_axis(), std::f64::consts::PI).into_inner(),
    }
}

/// Rotation taking `+z` to `d`.
pub fn rotation_from_north(d: &Vector3<f64>) -> Matrix3<f64> {
    rotation_to_north(d).transpose()
}

/// Fibonacci lattice triangulated by its convex hull.
pub fn fibonacci_sphere(n: usize) -> TriangleMesh {
    let vertices = fibonacci_points(n);
    let faces = sphere_hull(&vertices);
    TriangleMesh { vertices, faces }
}

/// Uniformly distributed random rotation (normalized Gaussian quaternion).
pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> Matrix3<f64> {
    let q = Quaternion::new(
        rng.sample::<f64, _>(StandardNormal),
        rng.sample::<f64, _>(StandardNormal),
        rng.sample::<f64, _>(StandardNormal),
        rng.sample::<f64, _>(StandardNormal),
    );
    UnitQuaternion::from_quaternion(q).to_rotation_matrix().into_inner()
}

/// 72 rotations spread over SO(3): each of the 12 icosahedron vertex
/// directions as image of `+z`, combined with 6 spins about `+z` in steps of
/// 60 degrees.
pub fn base_rotations() -> Vec<Matrix3<f64>> {
    let ico = crate::mesh::shapes::icosahedron();
    let mut out = Vec::with_capacity(72);
    for d in &ico.vertices {
        let tilt = rotation_from_north(d);
        for k in 0..6 {
            let spin = Rotation3::from_axis_angle(&Vector3::z_axis(), k as f64 * std::f64::consts::FRAC_PI_3);
            out.push(tilt * spin.into_inner());
        }
    }
    out
}

/// Geodesic angle of a rotation matrix.
pub fn rotation_angle(r: &Matrix3<f64>) -> f64 {
    ((r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
}
