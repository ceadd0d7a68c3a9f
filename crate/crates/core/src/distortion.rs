//! Per-vertex distortion between a template surface and a registered subject
//! sharing its connectivity: conformality distortion `|μ|`, mean and Gaussian
//! curvature, their weighted shape index, and the global volume change.

use std::f64::consts::PI;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::TriangleMesh;

/// Weights of the shape index `γ|μ| + α|ΔH| + β|ΔK|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeIndexWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for ShapeIndexWeights {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            beta: 0.1,
            gamma: 1.0,
        }
    }
}

impl ShapeIndexWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} = {w} must be positive")));
            }
        }
        Ok(())
    }
}

fn same_connectivity(a: &TriangleMesh, b: &TriangleMesh) -> Result<()> {
    if a.vertex_count() != b.vertex_count() {
        return Err(Error::LengthMismatch(a.vertex_count(), b.vertex_count()));
    }
    if a.faces != b.faces {
        return Err(Error::SchemaMismatch("meshes do not share connectivity".into()));
    }
    Ok(())
}

/// Triangle laid out in its own plane: first vertex at the origin, first edge
/// on the positive x axis.
fn chart(p: [Vector3<f64>; 3]) -> Option<(Vector2<f64>, Vector2<f64>)> {
    let e1 = p[1] - p[0];
    let e2 = p[2] - p[0];
    let l1 = e1.norm();
    let n = e1.cross(&e2);
    if l1 == 0.0 || n.norm() == 0.0 {
        return None;
    }
    let ux = e1 / l1;
    let uy = n.normalize().cross(&ux);
    Some((Vector2::new(l1, 0.0), Vector2::new(e2.dot(&ux), e2.dot(&uy))))
}

/// `|μ|` of the affine map between the isometric charts of each source face
/// and the corresponding target face.
pub fn beltrami_faces(source: &TriangleMesh, target: &TriangleMesh) -> Result<Vec<f64>> {
    same_connectivity(source, target)?;
    (0..source.face_count())
        .map(|fi| {
            let (s1, s2) = chart(source.face_positions(fi)).ok_or(Error::DegenerateTriangle { face: fi })?;
            let Some((t1, t2)) = chart(target.face_positions(fi)) else {
                return Ok(1.0);
            };
            // J maps the source edge vectors onto the target edge vectors
            let det = s1.x * s2.y - s2.x * s1.y;
            let a = (t1.x * s2.y - t2.x * s1.y) / det;
            let b = (t2.x * s1.x - t1.x * s2.x) / det;
            let c = (t1.y * s2.y - t2.y * s1.y) / det;
            let d = (t2.y * s1.x - t1.y * s2.x) / det;
            let fz = Vector2::new(a + d, c - b).norm();
            let fzbar = Vector2::new(a - d, c + b).norm();
            Ok(if fz == 0.0 { 1.0 } else { fzbar / fz })
        })
        .collect()
}

/// Per-vertex `|μ|`: source-area-weighted mean over incident faces.
pub fn beltrami_magnitude(source: &TriangleMesh, target: &TriangleMesh) -> Result<Vec<f64>> {
    let per_face = beltrami_faces(source, target)?;
    let areas = source.face_areas();
    let mut acc = vec![0.0; source.vertex_count()];
    let mut w = vec![0.0; source.vertex_count()];
    for ((f, mu), a) in source.faces.iter().zip(&per_face).zip(&areas) {
        for &v in f {
            acc[v] += mu * a;
            w[v] += a;
        }
    }
    Ok(acc.iter().zip(&w).map(|(s, w)| if *w > 0.0 { s / w } else { 0.0 }).collect())
}

/// Discrete curvatures with the mixed Voronoi vertex areas they are normalized by.
#[derive(Debug, Clone, PartialEq)]
pub struct Curvatures {
    pub mean: Vec<f64>,
    pub gauss: Vec<f64>,
    pub area: Vec<f64>,
}

impl Curvatures {
    /// `Σ K_i A_i`, equal to `2πχ` by construction.
    pub fn total_gauss(&self) -> f64 {
        self.gauss.iter().zip(&self.area).map(|(k, a)| k * a).sum()
    }
}

/// Angle-deficit Gaussian curvature and cotangent-Laplacian mean curvature.
/// `H > 0` on convex surfaces with outward normals.
pub fn curvatures(mesh: &TriangleMesh) -> Result<Curvatures> {
    let n = mesh.vertex_count();
    let mut angle_sum = vec![0.0; n];
    let mut lap = vec![Vector3::zeros(); n];
    let mut area = vec![0.0; n];
    let mut normal = vec![Vector3::zeros(); n];
    for (fi, f) in mesh.faces.iter().enumerate() {
        let p = mesh.face_positions(fi);
        let cross = (p[1] - p[0]).cross(&(p[2] - p[0]));
        let a = 0.5 * cross.norm();
        if !(a > 0.0) {
            return Err(Error::DegenerateTriangle { face: fi });
        }
        for k in 0..3 {
            let (i, j, l) = (k, (k + 1) % 3, (k + 2) % 3);
            let u = p[j] - p[i];
            let v = p[l] - p[i];
            let cos = u.dot(&v);
            let sin = u.cross(&v).norm();
            angle_sum[f[i]] += sin.atan2(cos);
            // the angle at i weighs the opposite edge (j, l)
            let cot = cos / sin;
            let d = p[l] - p[j];
            lap[f[j]] += cot * d;
            lap[f[l]] -= cot * d;
            normal[f[i]] += cross;
        }
        mixed_areas(&p, a, |k, w| area[f[k]] += w);
    }
    let mut mean = Vec::with_capacity(n);
    let mut gauss = Vec::with_capacity(n);
    for i in 0..n {
        gauss.push((2.0 * PI - angle_sum[i]) / area[i]);
        // lap[i] = Σ (cot α + cot β)(x_j − x_i); divide by 2A for the Laplacian
        let hn = lap[i] / (2.0 * area[i]);
        let h = 0.5 * hn.norm();
        mean.push(if hn.dot(&normal[i]) > 0.0 { -h } else { h });
    }
    Ok(Curvatures { mean, gauss, area })
}

/// Mixed Voronoi split of one triangle's area among its corners: Voronoi
/// regions for non-obtuse triangles, otherwise half the area to the obtuse
/// corner and a quarter to each other corner.
fn mixed_areas(p: &[Vector3<f64>; 3], area: f64, mut add: impl FnMut(usize, f64)) {
    let mut cots = [0.0; 3];
    let mut obtuse = None;
    for k in 0..3 {
        let u = p[(k + 1) % 3] - p[k];
        let v = p[(k + 2) % 3] - p[k];
        let cos = u.dot(&v);
        if cos < 0.0 {
            obtuse = Some(k);
        }
        cots[k] = cos / u.cross(&v).norm();
    }
    match obtuse {
        Some(o) => {
            for k in 0..3 {
                add(k, if k == o { area / 2.0 } else { area / 4.0 });
            }
        }
        None => {
            for k in 0..3 {
                let (j, l) = ((k + 1) % 3, (k + 2) % 3);
                // edge k-j is opposite corner l, edge k-l opposite corner j
                let w = (cots[l] * (p[j] - p[k]).norm_squared() + cots[j] * (p[l] - p[k]).norm_squared()) / 8.0;
                add(k, w);
            }
        }
    }
}

/// Every per-vertex field between one template and one subject.
#[derive(Debug, Clone, PartialEq)]
pub struct DistortionField {
    pub mu_abs: Vec<f64>,
    pub mean_curvature: Vec<f64>,
    pub gauss_curvature: Vec<f64>,
    pub shape_index: Vec<f64>,
}

impl DistortionField {
    pub fn len(&self) -> usize {
        self.mu_abs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu_abs.is_empty()
    }

    /// CSV with header `vertex_id,mu_abs,H,K,E`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("vertex_id,mu_abs,H,K,E\n");
        for i in 0..self.len() {
            out.push_str(&format!(
                "{i},{:?},{:?},{:?},{:?}\n",
                self.mu_abs[i], self.mean_curvature[i], self.gauss_curvature[i], self.shape_index[i]
            ));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some("vertex_id,mu_abs,H,K,E") {
            return Err(Error::Parse("distortion CSV header".into()));
        }
        let mut f = DistortionField {
            mu_abs: vec![],
            mean_curvature: vec![],
            gauss_curvature: vec![],
            shape_index: vec![],
        };
        for (row, line) in lines.enumerate() {
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 5 {
                return Err(Error::Parse(format!("distortion CSV row {row}")));
            }
            let v = cols[1..]
                .iter()
                .map(|c| c.trim().parse::<f64>().map_err(|e| Error::Parse(format!("row {row}: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            f.mu_abs.push(v[0]);
            f.mean_curvature.push(v[1]);
            f.gauss_curvature.push(v[2]);
            f.shape_index.push(v[3]);
        }
        Ok(f)
    }
}

/// `E = γ|μ| + α|H₀ − H| + β|K₀ − K|` per vertex.
pub fn combine_shape_index(
    mu_abs: &[f64],
    template: &Curvatures,
    subject: &Curvatures,
    weights: &ShapeIndexWeights,
) -> Vec<f64> {
    mu_abs
        .iter()
        .enumerate()
        .map(|(j, mu)| {
            weights.gamma * mu
                + weights.alpha * (template.mean[j] - subject.mean[j]).abs()
                + weights.beta * (template.gauss[j] - subject.gauss[j]).abs()
        })
        .collect()
}

/// Full distortion field, reusing precomputed template curvatures.
pub fn distortion_field(
    template: &TriangleMesh,
    template_curvatures: &Curvatures,
    subject: &TriangleMesh,
    weights: &ShapeIndexWeights,
) -> Result<DistortionField> {
    weights.validate()?;
    let mu_abs = beltrami_magnitude(template, subject)?;
    let sc = curvatures(subject)?;
    let shape_index = combine_shape_index(&mu_abs, template_curvatures, &sc, weights);
    Ok(DistortionField {
        mu_abs,
        mean_curvature: sc.mean,
        gauss_curvature: sc.gauss,
        shape_index,
    })
}

pub fn shape_index(template: &TriangleMesh, subject: &TriangleMesh, weights: &ShapeIndexWeights) -> Result<Vec<f64>> {
    let tc = curvatures(template)?;
    Ok(distortion_field(template, &tc, subject, weights)?.shape_index)
}

/// `(V_subject − V_template) / V_template`.
pub fn volume_distortion(template: &TriangleMesh, subject: &TriangleMesh) -> Result<f64> {
    let vt = template.signed_volume();
    if !(vt > 0.0) {
        return Err(Error::ZeroVolume(vt));
    }
    Ok((subject.signed_volume() - vt) / vt)
}
