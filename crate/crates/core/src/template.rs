//! Pose normalization, mutual alignment of coefficient sets, the mean template
//! and registration of subjects onto the template sphere.
//!
//! Parameter-space rotations are applied by evaluating the expansion at rotated
//! directions and refitting on a fixed Fibonacci grid; since rotations preserve
//! the degree, this is exact up to round-off. Distances between two expansions
//! are measured in coefficient space, which equals the root-mean-square
//! distance between the surfaces over the sphere (the basis is orthonormal).

use std::f64::consts::PI;

use nalgebra::{DMatrix, Matrix3, Rotation3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{check_genus0, shapes, Face, TriangleMesh};
use crate::sampling::{base_rotations, fibonacci_sphere};
use crate::spharm::{basis_len, reconstruct, BasisEvaluator, SampleFitter, SpharmCoefficients};

/// Relative singular-value gap below which the first-order ellipsoid has no
/// well-defined axes.
pub const FOE_TOLERANCE: f64 = 1e-6;

/// Unit-vector vertex set with a closed triangulation, shared by every
/// registered surface.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplateSphere {
    mesh: TriangleMesh,
}

impl TemplateSphere {
    pub fn from_mesh(mesh: TriangleMesh) -> Result<Self> {
        for (i, v) in mesh.vertices.iter().enumerate() {
            if (v.norm() - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidParameter(format!(
                    "template vertex {i} has norm {}",
                    v.norm()
                )));
            }
        }
        check_genus0(&mesh)?;
        Ok(Self { mesh })
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.mesh.vertices
    }

    pub fn faces(&self) -> &[Face] {
        &self.mesh.faces
    }

    pub fn mesh(&self) -> &TriangleMesh {
        &self.mesh
    }

    pub fn len(&self) -> usize {
        self.mesh.vertex_count()
    }

    pub fn is_empty(&self) -> bool {
        self.mesh.vertices.is_empty()
    }

    /// Largest over smallest barycentric vertex area.
    pub fn density_ratio(&self) -> f64 {
        let a = self.mesh.barycentric_areas();
        let max = a.iter().cloned().fold(0.0, f64::max);
        let min = a.iter().cloned().fold(f64::INFINITY, f64::min);
        max / min
    }
}

/// Fibonacci lattice of exactly `n` points triangulated by its convex hull.
pub fn build_template_sphere(n: usize) -> Result<TemplateSphere> {
    if n < 12 {
        return Err(Error::InvalidParameter(format!("template size {n} below 12")));
    }
    TemplateSphere::from_mesh(fibonacci_sphere(n))
}

/// Subdivided icosahedron (`10·4^level + 2` vertices).
pub fn icosphere_template(level: u32) -> Result<TemplateSphere> {
    TemplateSphere::from_mesh(shapes::icosphere(level, 1.0))
}

/// Output of [`foe_normalize`].
#[derive(Debug, Clone)]
pub struct FoeNormalized {
    pub coefficients: SpharmCoefficients,
    /// Object-space rotation applied after centering.
    pub rotation: Matrix3<f64>,
    /// Axes of the first-order ellipsoid were not distinct; `rotation` is the
    /// identity.
    pub degenerate: bool,
}

/// Singular value decomposition of the degree-1 matrix with sorted singular
/// values, proper rotations for both factors and a deterministic sign choice.
/// `None` when two singular values coincide within tolerance.
fn foe_frame(coeffs: &SpharmCoefficients) -> Option<(Matrix3<f64>, Vector3<f64>, Matrix3<f64>)> {
    let a = coeffs.first_order_matrix();
    let svd = a.svd(true, true);
    let (mut u, s, mut vt) = (svd.u?, svd.singular_values, svd.v_t?);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| s[j].total_cmp(&s[i]));
    let su = Matrix3::from_columns(&[u.column(order[0]), u.column(order[1]), u.column(order[2])]);
    let sv = Matrix3::from_rows(&[vt.row(order[0]), vt.row(order[1]), vt.row(order[2])]);
    u = su;
    vt = sv;
    let s = Vector3::new(s[order[0]], s[order[1]], s[order[2]]);
    if s[0] <= 0.0 || (s[0] - s[1]) <= FOE_TOLERANCE * s[0] || (s[1] - s[2]) <= FOE_TOLERANCE * s[0] {
        return None;
    }
    for k in 0..3 {
        let col = u.column(k);
        let big = (0..3).max_by(|&i, &j| col[i].abs().total_cmp(&col[j].abs())).unwrap();
        if col[big] < 0.0 {
            u.column_mut(k).neg_mut();
            vt.row_mut(k).neg_mut();
        }
    }
    Some((u, s, vt.transpose()))
}

/// Centers the surface and rotates the first-order ellipsoid's principal axes
/// onto x, y, z in decreasing length.
pub fn foe_normalize(coeffs: &SpharmCoefficients) -> Result<FoeNormalized> {
    if coeffs.degree() < 1 {
        return Err(Error::InvalidParameter("first-order ellipsoid needs degree ≥ 1".into()));
    }
    let centered = coeffs.translated(&-coeffs.center());
    let (rotation, degenerate) = match foe_frame(coeffs) {
        Some((u, _, _)) => {
            let mut r = u.transpose();
            if r.determinant() < 0.0 {
                r.row_mut(2).neg_mut();
            }
            (r, false)
        }
        None => (Matrix3::identity(), true),
    };
    Ok(FoeNormalized {
        coefficients: centered.transformed(&rotation),
        rotation,
        degenerate,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignOptions {
    /// Number of local refinement levels after the base grid.
    pub search_depth: usize,
    /// Degree cap used while searching; the final alignment uses every degree.
    pub search_degree: usize,
    /// Candidates carried from the base grid into refinement.
    pub beam: usize,
}

impl Default for AlignOptions {
    fn default() -> Self {
        Self {
            search_depth: 5,
            search_degree: 8,
            beam: 3,
        }
    }
}

/// Rigid alignment of one expansion onto another.
#[derive(Debug, Clone)]
pub struct Alignment {
    pub coefficients: SpharmCoefficients,
    /// Root-mean-square distance over the sphere to the reference.
    pub rmsd: f64,
    /// The aligned surface is `R x(P u) + t` for the input surface `x`.
    pub param_rotation: Matrix3<f64>,
    pub object_rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

/// Refit operator on a fixed grid: `fitter` solves for real coefficients of
/// functions sampled at `grid`.
struct RotationGrid {
    degree: usize,
    grid: Vec<Vector3<f64>>,
    fitter: SampleFitter,
}

impl RotationGrid {
    fn new(degree: usize) -> Result<Self> {
        let n = 2 * basis_len(degree) + 16;
        let grid = crate::sampling::fibonacci_points(n);
        let fitter = SampleFitter::new(&grid, degree)?;
        Ok(Self { degree, grid, fitter })
    }

    /// Real coefficients of `u ↦ x(P u)`, given real coefficients of `x`
    /// truncated to this grid's degree.
    fn rotate(&self, real: &[Vector3<f64>], p: &Matrix3<f64>) -> Result<Vec<Vector3<f64>>> {
        let k = basis_len(self.degree);
        let mut ev = BasisEvaluator::new(self.degree);
        let mut row = vec![0.0; k];
        let values: Vec<Vector3<f64>> = self
            .grid
            .iter()
            .map(|g| {
                ev.real_at(&(p * g), &mut row);
                row.iter().zip(&real[..k]).map(|(y, c)| c * *y).sum()
            })
            .collect();
        Ok(self.fitter.fit(&values)?.coefficients.to_real())
    }
}

/// Best object rotation `R` with `R s_k ≈ t_k` over every non-constant basis
/// function, and the remaining squared distance.
fn procrustes(s: &[Vector3<f64>], t: &[Vector3<f64>]) -> (Matrix3<f64>, f64) {
    let mut h = Matrix3::zeros();
    let mut ss = 0.0;
    let mut tt = 0.0;
    for (a, b) in s.iter().zip(t).skip(1) {
        h += b * a.transpose();
        ss += a.norm_squared();
        tt += b.norm_squared();
    }
    let svd = h.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut dm = Vector3::repeat(1.0);
    if (u * vt).determinant() < 0.0 {
        dm[svd.singular_values.imin()] = -1.0;
    }
    let r = u * Matrix3::from_diagonal(&dm) * vt;
    let gain = r.component_mul(&h).sum();
    (r, (ss + tt - 2.0 * gain).max(0.0))
}

fn perturbations(angle: f64) -> Vec<Matrix3<f64>> {
    let mut axes: Vec<Vector3<f64>> = Vec::with_capacity(13);
    for i in 0..3 {
        let mut e = Vector3::zeros();
        e[i] = 1.0;
        axes.push(e);
    }
    for (i, j) in [(0, 1), (0, 2), (1, 2)] {
        for s in [1.0, -1.0] {
            let mut e = Vector3::zeros();
            e[i] = 1.0;
            e[j] = s;
            axes.push(e.normalize());
        }
    }
    for (a, b) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
        axes.push(Vector3::new(1.0, a, b).normalize());
    }
    axes.iter()
        .flat_map(|ax| {
            let ax = nalgebra::Unit::new_normalize(*ax);
            [angle, -angle].map(|t| Rotation3::from_axis_angle(&ax, t).into_inner())
        })
        .collect()
}

/// Reusable alignment machinery for one degree cap.
pub struct Aligner {
    degree: usize,
    options: AlignOptions,
    search: RotationGrid,
    full: RotationGrid,
}

impl Aligner {
    pub fn new(degree: usize, options: AlignOptions) -> Result<Self> {
        let search_degree = options.search_degree.min(degree).max(1);
        let search = RotationGrid::new(search_degree)?;
        let full = RotationGrid::new(degree)?;
        Ok(Self {
            degree,
            options,
            search,
            full,
        })
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn options(&self) -> &AlignOptions {
        &self.options
    }

    /// Starting rotations of the search: the identity, the parameter rotations
    /// matching the two first-order ellipsoids (four sign choices) when both
    /// are non-degenerate, and the 72 base rotations.
    pub fn candidates(coeffs: &SpharmCoefficients, reference: &SpharmCoefficients) -> Vec<Matrix3<f64>> {
        let mut out = vec![Matrix3::identity()];
        if let (Some((_, _, vs)), Some((_, _, vr))) = (foe_frame(coeffs), foe_frame(reference)) {
            for signs in [[1.0, 1.0, 1.0], [1.0, -1.0, -1.0], [-1.0, 1.0, -1.0], [-1.0, -1.0, 1.0]] {
                let f = Matrix3::from_diagonal(&Vector3::from(signs));
                let mut p = vs * f * vr.transpose();
                if p.determinant() < 0.0 {
                    p = -p;
                }
                out.push(p);
            }
        }
        out.extend(base_rotations());
        out
    }

    /// Squared coefficient distance after the best object rotation, at the
    /// search degree.
    fn search_cost(&self, s: &[Vector3<f64>], t: &[Vector3<f64>], p: &Matrix3<f64>) -> Result<f64> {
        let rotated = self.search.rotate(s, p)?;
        Ok(procrustes(&rotated, t).1)
    }

    /// Aligns `coeffs` onto `reference`.
    pub fn align(&self, coeffs: &SpharmCoefficients, reference: &SpharmCoefficients) -> Result<Alignment> {
        if coeffs.degree() != self.degree || reference.degree() != self.degree {
            return Err(Error::SchemaMismatch(format!(
                "degrees {} and {} for an aligner of degree {}",
                coeffs.degree(),
                reference.degree(),
                self.degree
            )));
        }
        let ls = self.search.degree;
        let s = coeffs.with_degree(ls).to_real();
        let t = reference.with_degree(ls).to_real();

        let starts = Self::candidates(coeffs, reference);
        let mut scored: Vec<(f64, Matrix3<f64>)> = starts
            .into_iter()
            .map(|p| Ok((self.search_cost(&s, &t, &p)?, p)))
            .collect::<Result<_>>()?;
        scored.sort_by(|a, b| a.0.total_cmp(&b.0));
        scored.truncate(self.options.beam.max(1));

        let mut best = scored[0];
        for (mut cost, mut p) in scored {
            let mut angle = PI / 6.0;
            for _ in 0..self.options.search_depth {
                let steps = perturbations(angle);
                for _ in 0..4 {
                    let mut improved = false;
                    for q in &steps {
                        let cand = q * p;
                        let c = self.search_cost(&s, &t, &cand)?;
                        if c < cost {
                            cost = c;
                            p = cand;
                            improved = true;
                        }
                    }
                    if !improved {
                        break;
                    }
                }
                angle *= 0.5;
            }
            if cost < best.0 {
                best = (cost, p);
            }
        }
        self.apply(coeffs, reference, &best.1)
    }

    /// Applies parameter rotation `p`, then the best object rotation and the
    /// translation matching the reference's center.
    pub fn apply(&self, coeffs: &SpharmCoefficients, reference: &SpharmCoefficients, p: &Matrix3<f64>) -> Result<Alignment> {
        let real = coeffs.to_real();
        let rotated = if *p == Matrix3::identity() {
            real
        } else {
            self.full.rotate(&real, p)?
        };
        let t = reference.to_real();
        let (r, _) = procrustes(&rotated, &t);
        let moved = SpharmCoefficients::from_real(self.degree, &rotated)?.transformed(&r);
        let translation = reference.center() - moved.center();
        let aligned = moved.translated(&translation);
        let rmsd = aligned.distance(reference) / (4.0 * PI).sqrt();
        Ok(Alignment {
            coefficients: aligned,
            rmsd,
            param_rotation: *p,
            object_rotation: r,
            translation,
        })
    }
}

/// Convenience wrapper building a one-off [`Aligner`].
pub fn align_to_reference(
    coeffs: &SpharmCoefficients,
    reference: &SpharmCoefficients,
    search_depth: usize,
) -> Result<(SpharmCoefficients, f64)> {
    if coeffs.degree() != reference.degree() {
        return Err(Error::SchemaMismatch(format!(
            "degree {} vs {}",
            coeffs.degree(),
            reference.degree()
        )));
    }
    let opts = AlignOptions {
        search_depth,
        ..AlignOptions::default()
    };
    let a = Aligner::new(coeffs.degree(), opts)?.align(coeffs, reference)?;
    Ok((a.coefficients, a.rmsd))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanOptions {
    pub iterations: usize,
    /// Stop once the mean moves less than this (root-mean-square over the
    /// sphere) between iterations.
    pub tolerance: f64,
    pub align: AlignOptions,
}

impl Default for MeanOptions {
    fn default() -> Self {
        Self {
            iterations: 20,
            tolerance: 1e-6,
            align: AlignOptions::default(),
        }
    }
}

/// Rigid transform taking one subject's input expansion onto the template.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectAlignment {
    pub param_rotation: [[f64; 3]; 3],
    pub object_rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
    pub rmsd: f64,
}

impl SubjectAlignment {
    fn from_alignment(a: &Alignment) -> Self {
        Self {
            param_rotation: mat_rows(&a.param_rotation),
            object_rotation: mat_rows(&a.object_rotation),
            translation: [a.translation.x, a.translation.y, a.translation.z],
            rmsd: a.rmsd,
        }
    }
}

fn mat_rows(m: &Matrix3<f64>) -> [[f64; 3]; 3] {
    [0, 1, 2].map(|i| [m[(i, 0)], m[(i, 1)], m[(i, 2)]])
}

/// Mean coefficients, their reconstruction on the template sphere and the
/// alignments of the subjects that formed the mean.
#[derive(Debug, Clone)]
pub struct MeanTemplate {
    pub mean: SpharmCoefficients,
    pub mesh: TriangleMesh,
    pub alignments: Vec<SubjectAlignment>,
    /// Aligned coefficients of every cohort member, in input order.
    pub aligned: Vec<SpharmCoefficients>,
    pub iterations: usize,
    pub converged: bool,
}

/// Iterated mean: every subject is aligned to the current mean (the first
/// subject initially) and the mean is replaced by the coefficient-wise average,
/// until it stops moving. The mean keeps the first subject's frame.
pub fn build_mean_surface(
    cohort: &[SpharmCoefficients],
    sphere: &TemplateSphere,
    options: &MeanOptions,
) -> Result<MeanTemplate> {
    let first = cohort
        .first()
        .ok_or_else(|| Error::TooFewSubjects("mean template of an empty cohort".into()))?;
    let degree = first.degree();
    if let Some(bad) = cohort.iter().find(|c| c.degree() != degree) {
        return Err(Error::SchemaMismatch(format!("degree {} vs {degree}", bad.degree())));
    }
    let aligner = Aligner::new(degree, options.align)?;
    let mut mean = first.clone();
    let mut alignments = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    while iterations < options.iterations.max(1) {
        iterations += 1;
        alignments = cohort
            .par_iter()
            .enumerate()
            .map(|(i, c)| aligner.align(c, &mean).map_err(|e| e.for_subject(i.to_string())))
            .collect::<Result<Vec<_>>>()?;
        let aligned: Vec<SpharmCoefficients> = alignments.iter().map(|a| a.coefficients.clone()).collect();
        let next = SpharmCoefficients::mean(&aligned)?;
        let moved = next.distance(&mean) / (4.0 * PI).sqrt();
        mean = next;
        if moved < options.tolerance {
            converged = true;
            break;
        }
    }
    let mesh = reconstruct(&mean, sphere.points(), sphere.faces())?;
    Ok(MeanTemplate {
        aligned: alignments.iter().map(|a| a.coefficients.clone()).collect(),
        alignments: alignments.iter().map(SubjectAlignment::from_alignment).collect(),
        mean,
        mesh,
        iterations,
        converged,
    })
}

/// Subject surface sampled at the template sphere's vertices; vertex `j`
/// corresponds to template vertex `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegisteredSurface {
    pub id: String,
    pub mesh: TriangleMesh,
}

/// Reconstructs already aligned coefficients on the template sphere.
pub fn register_aligned(id: &str, aligned: &SpharmCoefficients, sphere: &TemplateSphere) -> Result<RegisteredSurface> {
    let mesh = reconstruct(aligned, sphere.points(), sphere.faces()).map_err(|e| e.for_subject(id))?;
    Ok(RegisteredSurface { id: id.to_string(), mesh })
}

/// Aligns a subject to the template mean with the template's protocol, then
/// reconstructs it on the template sphere.
pub fn register_subject(
    id: &str,
    coeffs: &SpharmCoefficients,
    template: &MeanTemplate,
    sphere: &TemplateSphere,
    aligner: &Aligner,
) -> Result<(RegisteredSurface, SubjectAlignment)> {
    let a = aligner.align(coeffs, &template.mean).map_err(|e| e.for_subject(id))?;
    let reg = register_aligned(id, &a.coefficients, sphere)?;
    Ok((reg, SubjectAlignment::from_alignment(&a)))
}

/// Principal semi-axis lengths (descending) of a point cloud, from its second
/// moments scaled to the extent along each principal direction.
pub fn principal_axes(points: &[Vector3<f64>]) -> (Matrix3<f64>, Vector3<f64>) {
    let n = points.len() as f64;
    let c: Vector3<f64> = points.iter().sum::<Vector3<f64>>() / n;
    let mut m = DMatrix::<f64>::zeros(3, 3);
    for p in points {
        let d = p - c;
        for i in 0..3 {
            for j in 0..3 {
                m[(i, j)] += d[i] * d[j] / n;
            }
        }
    }
    let eig = Matrix3::from_iterator(m.iter().cloned()).symmetric_eigen();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let axes = Matrix3::from_columns(&[
        eig.eigenvectors.column(order[0]),
        eig.eigenvectors.column(order[1]),
        eig.eigenvectors.column(order[2]),
    ]);
    let ext = Vector3::new(
        eig.eigenvalues[order[0]],
        eig.eigenvalues[order[1]],
        eig.eigenvalues[order[2]],
    )
    .map(|v| v.max(0.0).sqrt());
    (axes, ext)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::{fibonacci_points, random_rotation};
    use crate::sphere_param::parametrize_sphere;
    use crate::spharm::fit_coefficients;
    use rand::SeedableRng;

    fn ellipsoid_coeffs(axes: [f64; 3], degree: usize) -> SpharmCoefficients {
        let e = shapes::ellipsoid(axes, 3);
        let p = parametrize_sphere(&e, 30, 1e-6).unwrap();
        fit_coefficients(&e, &p, degree).unwrap().coefficients
    }

    /// Surface `u ↦ diag(a) u` plus a small asymmetric term, exactly band-limited.
    fn lumpy(a: [f64; 3], degree: usize) -> SpharmCoefficients {
        let dirs = fibonacci_points(2 * basis_len(degree) + 50);
        let vals: Vec<_> = dirs
            .iter()
            .map(|u| {
                let bump = 0.3 * u.x * u.y + 0.2 * u.z * u.z * u.x;
                Vector3::new(a[0] * u.x + bump, a[1] * u.y, a[2] * u.z + 0.1 * u.x * u.x)
            })
            .collect();
        SampleFitter::new(&dirs, degree).unwrap().fit(&vals).unwrap().coefficients
    }

    #[test]
    fn template_sphere_sizes() {
        let s = build_template_sphere(8000).unwrap();
        assert_eq!(s.len(), 8000);
        assert_eq!(s.mesh().euler_characteristic(), 2);
        assert!(s.density_ratio() < 3.0, "{}", s.density_ratio());
        assert_eq!(build_template_sphere(12).unwrap().len(), 12);
        assert!(build_template_sphere(11).is_err());
        assert_eq!(icosphere_template(2).unwrap().len(), 162);
    }

    #[test]
    fn foe_of_axis_aligned_ellipsoid_is_identity() {
        let c = ellipsoid_coeffs([2.0, 1.0, 0.5], 4);
        let f = foe_normalize(&c).unwrap();
        assert!(!f.degenerate);
        for i in 0..3 {
            assert!((f.rotation[(i, i)].abs() - 1.0).abs() < 1e-8, "{}", f.rotation);
        }
        assert!(f.coefficients.center().norm() < 1e-12);
    }

    #[test]
    fn foe_undoes_rotation_about_z() {
        let c = ellipsoid_coeffs([2.0, 1.0, 0.5], 4);
        let rz = Rotation3::from_axis_angle(&Vector3::z_axis(), PI / 2.0).into_inner();
        let f = foe_normalize(&c.transformed(&rz)).unwrap();
        let pts = f.coefficients.evaluate(&fibonacci_points(4000));
        let (axes, ext) = principal_axes(&pts);
        assert!(axes.column(0).x.abs() > 0.999, "{axes}");
        assert!(axes.column(1).y.abs() > 0.999);
        assert!(ext[0] > ext[1] && ext[1] > ext[2]);
    }

    #[test]
    fn foe_of_sphere_is_degenerate() {
        let s = shapes::icosphere(3, 1.0);
        let p = crate::sphere_param::SphericalParam::new(s.vertices.clone()).unwrap();
        let c = fit_coefficients(&s, &p, 3).unwrap().coefficients;
        let f = foe_normalize(&c).unwrap();
        assert!(f.degenerate);
        assert_eq!(f.rotation, Matrix3::identity());
    }

    #[test]
    fn self_alignment_is_fixed_point() {
        let c = lumpy([2.0, 1.3, 0.8], 6);
        let (a, rmsd) = align_to_reference(&c, &c, 2).unwrap();
        assert!(rmsd < 1e-10);
        assert!(a.distance(&c) < 1e-10);
    }

    #[test]
    fn object_rotation_is_recovered() {
        let c = lumpy([2.0, 1.3, 0.8], 6);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let r = random_rotation(&mut rng);
        let moved = c.transformed(&r).translated(&Vector3::new(1.0, -2.0, 0.5));
        let (_, rmsd) = align_to_reference(&moved, &c, 3).unwrap();
        assert!(rmsd < 1e-6, "{rmsd}");
    }

    #[test]
    fn parameter_rotation_is_recovered() {
        let c = lumpy([2.0, 1.3, 0.8], 6);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let p = random_rotation(&mut rng);
        let aligner = Aligner::new(6, AlignOptions::default()).unwrap();
        let moved = aligner.full.rotate(&c.to_real(), &p).unwrap();
        let moved = SpharmCoefficients::from_real(6, &moved).unwrap();
        let a = aligner.align(&moved, &c).unwrap();
        let before = moved.distance(&c) / (4.0 * PI).sqrt();
        assert!(a.rmsd < 1e-3 * before, "{} vs {before}", a.rmsd);
    }

    #[test]
    fn parseval_distance_matches_sampled_rms() {
        let a = lumpy([2.0, 1.3, 0.8], 6);
        let b = lumpy([1.5, 1.4, 0.9], 6);
        let dirs = fibonacci_points(20000);
        let (pa, pb) = (a.evaluate(&dirs), b.evaluate(&dirs));
        let rms = (pa.iter().zip(&pb).map(|(x, y)| (x - y).norm_squared()).sum::<f64>() / dirs.len() as f64).sqrt();
        let pars = a.distance(&b) / (4.0 * PI).sqrt();
        assert!((rms - pars).abs() < 1e-3 * pars, "{rms} {pars}");
    }

    #[test]
    fn mean_of_one_and_identical() {
        let sphere = build_template_sphere(500).unwrap();
        let c = lumpy([2.0, 1.3, 0.8], 5);
        let opts = MeanOptions::default();
        let m = build_mean_surface(std::slice::from_ref(&c), &sphere, &opts).unwrap();
        assert!(m.mean.distance(&c) < 1e-10);
        let m3 = build_mean_surface(&[c.clone(), c.clone(), c.clone()], &sphere, &opts).unwrap();
        assert!(m3.mean.distance(&c) < 1e-10);
        assert_eq!(m3.mesh.vertex_count(), 500);
    }

    #[test]
    fn concentric_spheres_average_radius() {
        let sphere = build_template_sphere(600).unwrap();
        let dirs = fibonacci_points(200);
        let f = SampleFitter::new(&dirs, 3).unwrap();
        let s1 = f.fit(&dirs).unwrap().coefficients;
        let s3 = f.fit(&dirs.iter().map(|u| u * 3.0).collect::<Vec<_>>()).unwrap().coefficients;
        let m = build_mean_surface(&[s1, s3], &sphere, &MeanOptions::default()).unwrap();
        for v in &m.mesh.vertices {
            assert!((v.norm() - 2.0).abs() < 1e-6);
        }
    }

    #[test]
    fn registering_the_mean_gives_the_mean_mesh() {
        let sphere = build_template_sphere(400).unwrap();
        let c1 = lumpy([2.0, 1.3, 0.8], 4);
        let c2 = lumpy([2.2, 1.2, 0.7], 4);
        let m = build_mean_surface(&[c1.clone(), c2.clone()], &sphere, &MeanOptions::default()).unwrap();
        let aligner = Aligner::new(4, AlignOptions::default()).unwrap();
        let (reg, _) = register_subject("mean", &m.mean, &m, &sphere, &aligner).unwrap();
        for (a, b) in reg.mesh.vertices.iter().zip(&m.mesh.vertices) {
            assert!((a - b).norm() < 1e-9);
        }
        let (r1, _) = register_subject("a", &c1, &m, &sphere, &aligner).unwrap();
        assert_eq!(r1.mesh.faces, reg.mesh.faces);
        assert_eq!(r1.mesh.vertex_count(), 400);
    }
}
