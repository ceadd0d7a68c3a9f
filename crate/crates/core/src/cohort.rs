//! Labeled synthetic cohorts of star-shaped genus-0 surfaces with a localized,
//! class-specific dent and a class-specific volume change.
//!
//! A subject is `x(u) = R(u)·u` over unit directions `u` in its body frame,
//! with `R(u)` the product of an ellipsoid radius, a mild asymmetry (so the
//! first-order ellipsoid has a unique orientation), band-limited radial noise,
//! the dent profile and the class scale. The mesh samples a randomly rotated
//! Fibonacci lattice and is placed in a random pose.

use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{NEGATIVE, POSITIVE};
use crate::mesh::{save_off, TriangleMesh};
use crate::sampling::{fibonacci_points, random_rotation, sphere_hull};
use crate::spharm::{basis_len, BasisEvaluator};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassEffect {
    /// Dent center in the body frame (normalized on use).
    pub center: [f64; 3],
    /// Angular radius of the dent, radians.
    pub radius: f64,
    /// Inward displacement at the dent center as a fraction of the local radius.
    pub amplitude: f64,
    /// Volume ratio of each class relative to the base shape.
    pub volume_scale_positive: f64,
    pub volume_scale_negative: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Root-mean-square relative radial perturbation.
    pub std: f64,
    /// Highest spherical-harmonic degree of the perturbation.
    pub degree: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSpec {
    pub subjects_per_class: usize,
    /// Ellipsoid semi-axes of the base shape.
    pub base_axes: [f64; 3],
    /// Radial factor `1 + a₀ u_x + a₁ u_y`.
    pub asymmetry: [f64; 2],
    pub effect: ClassEffect,
    pub noise: NoiseSpec,
    /// Vertices per generated mesh.
    pub vertices: usize,
    pub seed: u64,
}

impl Default for CohortSpec {
    fn default() -> Self {
        Self {
            subjects_per_class: 30,
            base_axes: [2.0, 1.0, 0.7],
            asymmetry: [0.12, 0.08],
            effect: ClassEffect {
                center: [0.8, 0.55, 0.25],
                radius: 0.5,
                amplitude: 0.15,
                volume_scale_positive: 1.0,
                volume_scale_negative: 0.97,
            },
            noise: NoiseSpec { std: 0.02, degree: 10 },
            vertices: 2500,
            seed: 1,
        }
    }
}

impl CohortSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.subjects_per_class < 3 {
            return bad(format!("subjects_per_class {} below 3", self.subjects_per_class));
        }
        if !(self.effect.radius > 0.0 && self.effect.radius < std::f64::consts::PI) {
            return bad(format!("angular radius {} outside (0, π)", self.effect.radius));
        }
        if !(self.effect.amplitude >= 0.0 && self.effect.amplitude < 1.0) {
            return bad(format!("amplitude {} outside [0, 1)", self.effect.amplitude));
        }
        if self.base_axes.iter().any(|a| !(*a > 0.0)) {
            return bad("base axes must be positive".into());
        }
        if !(self.effect.volume_scale_positive > 0.0 && self.effect.volume_scale_negative > 0.0) {
            return bad("volume scales must be positive".into());
        }
        if self.noise.std < 0.0 {
            return bad("noise std must be nonnegative".into());
        }
        if self.vertices < 12 {
            return bad(format!("{} vertices per mesh", self.vertices));
        }
        Ok(())
    }

    fn center(&self) -> Vector3<f64> {
        Vector3::from(self.effect.center).normalize()
    }

    fn volume_scale(&self, label: i32) -> f64 {
        if label == POSITIVE {
            self.effect.volume_scale_positive
        } else {
            self.effect.volume_scale_negative
        }
    }

    /// Cosine-taper dent weight in `[0, 1]` at body direction `u`.
    pub fn dent_weight(&self, u: &Vector3<f64>) -> f64 {
        let d = u.normalize().dot(&self.center()).clamp(-1.0, 1.0).acos();
        if d < self.effect.radius {
            0.5 * (1.0 + (std::f64::consts::PI * d / self.effect.radius).cos())
        } else {
            0.0
        }
    }

    /// Whether body direction `u` lies inside the dent for class `label`.
    pub fn in_effect(&self, u: &Vector3<f64>, label: i32) -> bool {
        label == NEGATIVE
            && self.effect.amplitude > 0.0
            && u.normalize().dot(&self.center()).clamp(-1.0, 1.0).acos() < self.effect.radius
    }
}

/// One generated surface and how it was placed.
#[derive(Debug, Clone)]
pub struct GeneratedSubject {
    pub id: String,
    pub label: i32,
    pub subject_seed: u64,
    pub mesh: TriangleMesh,
    /// Rotation from the body frame to the mesh frame.
    pub pose: Matrix3<f64>,
}

fn subject_rng(seed: u64, subject_seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(subject_seed);
    rng
}

/// Random band-limited radial perturbation with RMS `std` over the sphere,
/// spectrum falling as `1/l²`, degrees `1..=degree`.
fn noise_coefficients(rng: &mut ChaCha8Rng, noise: &NoiseSpec) -> Vec<f64> {
    let k = basis_len(noise.degree);
    let mut c = vec![0.0; k];
    if noise.std == 0.0 || noise.degree == 0 {
        return c;
    }
    let total: f64 = (1..=noise.degree).map(|l| (2 * l + 1) as f64 / (l * l) as f64).sum();
    // mean square over the sphere is Σ c² / 4π
    let unit = noise.std * noise.std * 4.0 * std::f64::consts::PI / total;
    for l in 1..=noise.degree {
        let sd = (unit / (l * l) as f64).sqrt();
        for m in -(l as i64)..=(l as i64) {
            c[crate::spharm::basis_index(l, m)] = sd * rng.sample::<f64, _>(StandardNormal);
        }
    }
    c
}

/// Radius of the body-frame surface in direction `u`.
fn radius(spec: &CohortSpec, label: i32, noise: &[f64], ev: &mut BasisEvaluator, row: &mut [f64], u: &Vector3<f64>) -> f64 {
    let a = spec.base_axes;
    let ell = 1.0 / ((u.x / a[0]).powi(2) + (u.y / a[1]).powi(2) + (u.z / a[2]).powi(2)).sqrt();
    let asym = 1.0 + spec.asymmetry[0] * u.x + spec.asymmetry[1] * u.y;
    let n = if noise.iter().any(|c| *c != 0.0) {
        ev.real_at(u, row);
        row.iter().zip(noise).map(|(y, c)| y * c).sum::<f64>()
    } else {
        0.0
    };
    let dent = if label == NEGATIVE {
        1.0 - spec.effect.amplitude * spec.dent_weight(u)
    } else {
        1.0
    };
    ell * asym * (1.0 + n) * dent * spec.volume_scale(label).cbrt()
}

/// Deterministic in `(spec.seed, subject_seed)`.
pub fn generate_subject_posed(spec: &CohortSpec, label: i32, subject_seed: u64) -> Result<GeneratedSubject> {
    spec.validate()?;
    if label != POSITIVE && label != NEGATIVE {
        return Err(Error::InvalidParameter(format!("label {label}")));
    }
    let mut rng = subject_rng(spec.seed, subject_seed);
    let sampling = random_rotation(&mut rng);
    let pose = random_rotation(&mut rng);
    let noise = noise_coefficients(&mut rng, &spec.noise);

    let dirs: Vec<Vector3<f64>> = fibonacci_points(spec.vertices).iter().map(|p| sampling * p).collect();
    let faces = sphere_hull(&dirs);
    let mut ev = BasisEvaluator::new(spec.noise.degree);
    let mut row = vec![0.0; basis_len(spec.noise.degree)];
    let vertices = dirs
        .iter()
        .map(|u| pose * (u * radius(spec, label, &noise, &mut ev, &mut row, u)))
        .collect();
    Ok(GeneratedSubject {
        id: String::new(),
        label,
        subject_seed,
        mesh: TriangleMesh::new(vertices, faces)?,
        pose,
    })
}

pub fn generate_subject(spec: &CohortSpec, label: i32, subject_seed: u64) -> Result<TriangleMesh> {
    Ok(generate_subject_posed(spec, label, subject_seed)?.mesh)
}

/// Dent masks and class volume ratios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Template-sphere vertices inside the dent, for the negative class, in
    /// the body frame. Empty for the positive class.
    pub mask_negative: Vec<usize>,
    pub mask_positive: Vec<usize>,
    pub volume_ratio_positive: f64,
    pub volume_ratio_negative: f64,
}

impl GroundTruth {
    /// Dent mask over template-sphere directions expressed in the body frame.
    pub fn on_sphere(spec: &CohortSpec, sphere_points: &[Vector3<f64>]) -> Self {
        Self {
            mask_negative: mask_of(spec, sphere_points.iter().copied()),
            mask_positive: vec![],
            volume_ratio_positive: spec.effect.volume_scale_positive,
            volume_ratio_negative: spec.effect.volume_scale_negative,
        }
    }
}

fn mask_of(spec: &CohortSpec, dirs: impl Iterator<Item = Vector3<f64>>) -> Vec<usize> {
    dirs.enumerate()
        .filter(|(_, u)| spec.in_effect(u, NEGATIVE))
        .map(|(i, _)| i)
        .collect()
}

/// Dent mask over the vertices of a surface lying in a subject's mesh frame
/// (for instance a mean template built with that subject as reference): each
/// point is taken back to the body frame with `pose` and classified by its
/// direction from the origin.
pub fn mask_on_surface(spec: &CohortSpec, points: &[Vector3<f64>], pose: &Matrix3<f64>) -> Vec<usize> {
    let back = pose.transpose();
    mask_of(spec, points.iter().map(|p| back * p))
}

/// A full cohort, positive class first; ids `s000`, `s001`, ….
#[derive(Debug, Clone)]
pub struct Cohort {
    pub spec: CohortSpec,
    pub subjects: Vec<GeneratedSubject>,
}

impl Cohort {
    pub fn labels(&self) -> Vec<i32> {
        self.subjects.iter().map(|s| s.label).collect()
    }
}

pub fn generate_cohort(spec: &CohortSpec) -> Result<Cohort> {
    spec.validate()?;
    use rayon::prelude::*;
    let n = spec.subjects_per_class;
    let subjects = (0..2 * n)
        .into_par_iter()
        .map(|i| {
            let label = if i < n { POSITIVE } else { NEGATIVE };
            let mut s = generate_subject_posed(spec, label, i as u64)?;
            s.id = format!("s{i:03}");
            Ok(s)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Cohort {
        spec: spec.clone(),
        subjects,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestSubject {
    pub id: String,
    pub label: i32,
    pub subject_seed: u64,
    pub file: String,
    /// Body-to-mesh rotation, row-major.
    pub pose: [[f64; 3]; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortManifest {
    pub spec: CohortSpec,
    pub subjects: Vec<ManifestSubject>,
    pub ground_truth: GroundTruth,
    /// Size of the Fibonacci template sphere the masks index.
    pub template_size: usize,
}

impl CohortManifest {
    pub fn pose(&self, id: &str) -> Option<Matrix3<f64>> {
        self.subjects
            .iter()
            .find(|s| s.id == id)
            .map(|s| Matrix3::from_fn(|i, j| s.pose[i][j]))
    }
}

/// Writes `<id>.off` per subject and `manifest.json`.
pub fn write_cohort(cohort: &Cohort, dir: &Path, template_size: usize) -> Result<CohortManifest> {
    std::fs::create_dir_all(dir)?;
    let mut subjects = Vec::new();
    for s in &cohort.subjects {
        let file = format!("{}.off", s.id);
        save_off(&s.mesh, &dir.join(&file))?;
        subjects.push(ManifestSubject {
            id: s.id.clone(),
            label: s.label,
            subject_seed: s.subject_seed,
            file,
            pose: [0, 1, 2].map(|i| [s.pose[(i, 0)], s.pose[(i, 1)], s.pose[(i, 2)]]),
        });
    }
    let manifest = CohortManifest {
        spec: cohort.spec.clone(),
        subjects,
        ground_truth: GroundTruth::on_sphere(&cohort.spec, &fibonacci_points(template_size)),
        template_size,
    };
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<CohortManifest> {
    let path = dir.join("manifest.json");
    let text = std::fs::read_to_string(&path)
        .map_err(|_| Error::MissingArtifact(path.display().to_string()))?;
    Ok(serde_json::from_str(&text)?)
}
