//! Bijective maps from genus-0 meshes onto the unit sphere.
//!
//! The map starts from the radial projection about the mesh centroid and is
//! then relaxed on the sphere: every point moves toward the normalized average
//! of its one-ring, and a step is kept only if it creates no fold and lowers
//! the area distortion. Rejected steps halve the step size.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{Face, TriangleMesh};
use crate::spharm::to_angles;

/// Per-vertex unit vectors on the sphere.
#[derive(Debug, Clone, PartialEq)]
pub struct SphericalParam {
    points: Vec<Vector3<f64>>,
}

impl SphericalParam {
    /// Normalizes every point onto the sphere.
    pub fn new(points: Vec<Vector3<f64>>) -> Result<Self> {
        let points = points
            .into_iter()
            .enumerate()
            .map(|(i, p)| {
                let n = p.norm();
                if n > 0.0 && n.is_finite() {
                    Ok(p / n)
                } else {
                    Err(Error::InvalidParameter(format!("parameter point {i} has norm {n}")))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { points })
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// `(θ, φ)` per vertex, `θ ∈ [0, π]`, `φ ∈ [0, 2π)`.
    pub fn angles(&self) -> Vec<(f64, f64)> {
        self.points.iter().map(to_angles).collect()
    }

    pub fn fold_count(&self, faces: &[Face]) -> usize {
        check_bijectivity(self, faces)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.points.iter().map(|p| [p.x, p.y, p.z]).collect::<Vec<_>>())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: Vec<[f64; 3]> = serde_json::from_str(text)?;
        Self::new(raw.into_iter().map(|p| Vector3::new(p[0], p[1], p[2])).collect())
    }
}

/// Number of faces whose parameter triangle is not positively oriented.
pub fn check_bijectivity(param: &SphericalParam, faces: &[Face]) -> usize {
    faces
        .iter()
        .filter(|f| orientation(&param.points, f) <= 0.0)
        .count()
}

#[inline]
fn orientation(p: &[Vector3<f64>], f: &Face) -> f64 {
    p[f[0]].dot(&p[f[1]].cross(&p[f[2]]))
}

/// Spread of the area distortion: area-weighted standard deviation over faces
/// of `log((param area share) / (mesh area share))`, param areas measured on
/// the chord triangles.
pub fn area_distortion(mesh: &TriangleMesh, param: &[Vector3<f64>]) -> f64 {
    let mesh_areas = mesh.face_areas();
    let param_areas: Vec<f64> = mesh
        .faces
        .iter()
        .map(|f| 0.5 * (param[f[1]] - param[f[0]]).cross(&(param[f[2]] - param[f[0]])).norm())
        .collect();
    let mt: f64 = mesh_areas.iter().sum();
    let pt: f64 = param_areas.iter().sum();
    let logs: Vec<f64> = mesh_areas
        .iter()
        .zip(&param_areas)
        .map(|(m, p)| ((p / pt) / (m / mt)).max(1e-300).ln())
        .collect();
    let mean: f64 = logs.iter().zip(&mesh_areas).map(|(l, w)| l * w).sum::<f64>() / mt;
    let var: f64 = logs
        .iter()
        .zip(&mesh_areas)
        .map(|(l, w)| w * (l - mean).powi(2))
        .sum::<f64>()
        / mt;
    var.sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamOptions {
    pub max_iterations: usize,
    /// Stop once the largest per-iteration displacement falls below this.
    pub tolerance: f64,
    /// Initial relaxation step in `(0, 1]`.
    pub step: f64,
}

impl Default for ParamOptions {
    fn default() -> Self {
        Self {
            max_iterations: 30,
            tolerance: 1e-6,
            step: 0.5,
        }
    }
}

/// Spherical parametrization plus the area-distortion value after the
/// initial projection and after every accepted relaxation step.
#[derive(Debug, Clone)]
pub struct ParamTrace {
    pub param: SphericalParam,
    pub distortion_history: Vec<f64>,
    pub iterations: usize,
}

pub fn parametrize_sphere(mesh: &TriangleMesh, max_iterations: usize, tolerance: f64) -> Result<SphericalParam> {
    let opts = ParamOptions {
        max_iterations,
        tolerance,
        ..ParamOptions::default()
    };
    Ok(parametrize_sphere_traced(mesh, &opts)?.param)
}

pub fn parametrize_sphere_traced(mesh: &TriangleMesh, opts: &ParamOptions) -> Result<ParamTrace> {
    if !(opts.step > 0.0 && opts.step <= 1.0) {
        return Err(Error::InvalidParameter(format!("step {} outside (0, 1]", opts.step)));
    }
    let centroid = area_centroid(mesh);
    let mut current: Vec<Vector3<f64>> = mesh
        .vertices
        .iter()
        .map(|v| {
            let d = v - centroid;
            let n = d.norm();
            if n > 0.0 {
                d / n
            } else {
                Vector3::z()
            }
        })
        .collect();

    let nbrs = mesh.vertex_neighbors();
    let mut folds = count_folds(&current, &mesh.faces);
    let mut distortion = area_distortion(mesh, &current);
    let mut history = vec![distortion];
    let mut step = opts.step;
    let mut iterations = 0;
    let min_step = 1e-4;

    while iterations < opts.max_iterations && step >= min_step {
        iterations += 1;
        let mut proposal = current.clone();
        let mut max_move: f64 = 0.0;
        for (i, ring) in nbrs.iter().enumerate() {
            if ring.is_empty() {
                continue;
            }
            let avg: Vector3<f64> = ring.iter().map(|&j| current[j]).sum();
            let n = avg.norm();
            if n == 0.0 {
                continue;
            }
            let target = avg / n;
            let moved = (current[i] + step * (target - current[i])).normalize();
            max_move = max_move.max((moved - current[i]).norm());
            proposal[i] = moved;
        }
        if max_move < opts.tolerance {
            break;
        }
        let new_folds = count_folds(&proposal, &mesh.faces);
        let new_distortion = area_distortion(mesh, &proposal);
        let accept = if folds > 0 {
            new_folds < folds || (new_folds == folds && new_distortion < distortion)
        } else {
            new_folds == 0 && new_distortion < distortion
        };
        if accept {
            current = proposal;
            folds = new_folds;
            distortion = new_distortion;
            history.push(distortion);
        } else {
            step *= 0.5;
        }
    }

    if folds > 0 {
        return Err(Error::ParamFailure { folds });
    }
    Ok(ParamTrace {
        param: SphericalParam { points: current },
        distortion_history: history,
        iterations,
    })
}

fn count_folds(p: &[Vector3<f64>], faces: &[Face]) -> usize {
    faces.iter().filter(|f| orientation(p, f) <= 0.0).count()
}

/// Area-weighted centroid of the surface.
fn area_centroid(mesh: &TriangleMesh) -> Vector3<f64> {
    let mut acc = Vector3::zeros();
    let mut total = 0.0;
    for fi in 0..mesh.face_count() {
        let [a, b, c] = mesh.face_positions(fi);
        let area = mesh.face_area(fi);
        acc += area * (a + b + c) / 3.0;
        total += area;
    }
    if total > 0.0 {
        acc / total
    } else {
        mesh.centroid()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::shapes;

    #[test]
    fn unit_sphere_is_a_fixed_point() {
        let s = shapes::icosphere(3, 1.0);
        let p = parametrize_sphere(&s, 50, 1e-8).unwrap();
        for (a, b) in p.points().iter().zip(&s.vertices) {
            assert!((a - b.normalize()).norm() < 1e-12);
        }
    }

    #[test]
    fn ellipsoid_is_fold_free_and_unit() {
        let e = shapes::ellipsoid([2.0, 1.0, 1.0], 3);
        let p = parametrize_sphere(&e, 50, 1e-8).unwrap();
        assert_eq!(check_bijectivity(&p, &e.faces), 0);
        assert!(p.points().iter().all(|u| (u.norm() - 1.0).abs() < 1e-12));
    }

    #[test]
    fn area_distortion_decreases_monotonically() {
        let e = shapes::ellipsoid([2.0, 1.0, 1.0], 3);
        let trace = parametrize_sphere_traced(
            &e,
            &ParamOptions {
                max_iterations: 40,
                tolerance: 1e-9,
                step: 0.5,
            },
        )
        .unwrap();
        let h = &trace.distortion_history;
        assert!(h.len() > 2, "no relaxation step accepted: {h:?}");
        for w in h.windows(2) {
            assert!(w[1] < w[0], "{h:?}");
        }
    }

    #[test]
    fn swapped_parameters_fold() {
        let ico = shapes::icosahedron();
        let mut pts = ico.vertices.clone();
        let p = SphericalParam::new(pts.clone()).unwrap();
        assert_eq!(check_bijectivity(&p, &ico.faces), 0);
        pts.swap(0, 3);
        let q = SphericalParam::new(pts).unwrap();
        assert!(check_bijectivity(&q, &ico.faces) > 0);
    }

    #[test]
    fn angle_convention() {
        let p = SphericalParam::new(vec![
            Vector3::new(0.0, 0.0, 1.0),
            Vector3::new(0.0, -1.0, 0.0),
            Vector3::new(0.0, 0.0, -1.0),
        ])
        .unwrap();
        let a = p.angles();
        assert_eq!(a[0], (0.0, 0.0));
        assert!((a[1].0 - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
        assert!((a[1].1 - 1.5 * std::f64::consts::PI).abs() < 1e-15);
        assert_eq!(a[2], (std::f64::consts::PI, 0.0));
    }

    #[test]
    fn json_roundtrip() {
        let p = SphericalParam::new(shapes::icosahedron().vertices).unwrap();
        assert_eq!(SphericalParam::from_json(&p.to_json().unwrap()).unwrap(), p);
    }
}
