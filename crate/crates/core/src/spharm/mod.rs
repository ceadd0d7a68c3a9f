//! Spherical-harmonic surface representation: basis evaluation, per-coordinate
//! least-squares fitting and reconstruction on arbitrary spherical samples.

mod basis;

use nalgebra::{Complex, DMatrix, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{Face, TriangleMesh};
use crate::sphere_param::SphericalParam;

pub use basis::{
    basis_index, basis_len, degree_order, eval_basis, from_angles, to_angles, BasisEvaluator,
    BasisRow,
};

/// Condition-number estimate above which a fit is refused.
pub const MAX_CONDITION: f64 = 1e8;

/// Ordering tag written into persisted coefficient files.
pub const ORDERING: &str = "l-major";

const SQRT_2: f64 = std::f64::consts::SQRT_2;

/// Complex 3-vector coefficients `r_l^m` for degrees `0..=degree`, l-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SpharmCoefficients {
    degree: usize,
    data: Vec<[Complex<f64>; 3]>,
}

#[derive(Serialize, Deserialize)]
struct CoefficientFile {
    #[serde(rename = "L")]
    degree: usize,
    ordering: String,
    data: Vec<[f64; 6]>,
}

impl SpharmCoefficients {
    pub fn zeros(degree: usize) -> Self {
        Self {
            degree,
            data: vec![[Complex::new(0.0, 0.0); 3]; basis_len(degree)],
        }
    }

    pub fn from_data(degree: usize, data: Vec<[Complex<f64>; 3]>) -> Result<Self> {
        if data.len() != basis_len(degree) {
            return Err(Error::LengthMismatch(data.len(), basis_len(degree)));
        }
        Ok(Self { degree, data })
    }

    /// Builds complex coefficients from coefficients of the real basis
    /// (see [`BasisEvaluator::real_at`]); one row per basis function.
    pub fn from_real(degree: usize, real: &[Vector3<f64>]) -> Result<Self> {
        if real.len() != basis_len(degree) {
            return Err(Error::LengthMismatch(real.len(), basis_len(degree)));
        }
        let mut out = Self::zeros(degree);
        for l in 0..=degree {
            let c0 = real[basis_index(l, 0)];
            out.data[basis_index(l, 0)] = [0, 1, 2].map(|k| Complex::new(c0[k], 0.0));
            for m in 1..=l as i64 {
                let a = real[basis_index(l, m)];
                let b = real[basis_index(l, -m)];
                let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
                let pos = [0, 1, 2].map(|k| Complex::new(a[k], -b[k]) / SQRT_2);
                out.data[basis_index(l, m)] = pos;
                out.data[basis_index(l, -m)] = pos.map(|c| c.conj() * sign);
            }
        }
        Ok(out)
    }

    /// Coefficients of the real basis, projecting onto the real-valued subspace
    /// (averaging the `+m` and `-m` halves).
    pub fn to_real(&self) -> Vec<Vector3<f64>> {
        let mut out = vec![Vector3::zeros(); self.data.len()];
        for l in 0..=self.degree {
            let c0 = self.data[basis_index(l, 0)];
            out[basis_index(l, 0)] = Vector3::new(c0[0].re, c0[1].re, c0[2].re);
            for m in 1..=l as i64 {
                let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
                let p = self.data[basis_index(l, m)];
                let n = self.data[basis_index(l, -m)];
                let mut a = Vector3::zeros();
                let mut b = Vector3::zeros();
                for k in 0..3 {
                    let sum = p[k] + n[k] * sign;
                    let diff = p[k] - n[k] * sign;
                    a[k] = sum.re / SQRT_2;
                    b[k] = -diff.im / SQRT_2;
                }
                out[basis_index(l, m)] = a;
                out[basis_index(l, -m)] = b;
            }
        }
        out
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[[Complex<f64>; 3]] {
        &self.data
    }

    pub fn get(&self, l: usize, m: i64) -> [Complex<f64>; 3] {
        self.data[basis_index(l, m)]
    }

    pub fn set(&mut self, l: usize, m: i64, value: [Complex<f64>; 3]) {
        self.data[basis_index(l, m)] = value;
    }

    /// Copy truncated (or zero-padded) to another degree cap.
    pub fn with_degree(&self, degree: usize) -> Self {
        let mut out = Self::zeros(degree);
        let n = basis_len(degree.min(self.degree));
        out.data[..n].copy_from_slice(&self.data[..n]);
        out
    }

    /// Largest violation of `r^{-m} = (-1)^m conj(r^m)` and `Im r^0 = 0`.
    pub fn reality_residual(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for l in 0..=self.degree {
            for k in 0..3 {
                worst = worst.max(self.data[basis_index(l, 0)][k].im.abs());
            }
            for m in 1..=l as i64 {
                let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
                let p = self.data[basis_index(l, m)];
                let n = self.data[basis_index(l, -m)];
                for k in 0..3 {
                    worst = worst.max((n[k] - p[k].conj() * sign).norm());
                }
            }
        }
        worst
    }

    /// Applies an object-space linear map to every coefficient 3-vector.
    pub fn transformed(&self, map: &Matrix3<f64>) -> Self {
        let data = self
            .data
            .iter()
            .map(|c| {
                let re = map * Vector3::new(c[0].re, c[1].re, c[2].re);
                let im = map * Vector3::new(c[0].im, c[1].im, c[2].im);
                [0, 1, 2].map(|k| Complex::new(re[k], im[k]))
            })
            .collect();
        Self {
            degree: self.degree,
            data,
        }
    }

    /// Adds `t` to the surface, i.e. `t·√(4π)` to the degree-0 coefficient.
    pub fn translated(&self, t: &Vector3<f64>) -> Self {
        let mut out = self.clone();
        let s = (4.0 * std::f64::consts::PI).sqrt();
        for k in 0..3 {
            out.data[0][k] += Complex::new(t[k] * s, 0.0);
        }
        out
    }

    /// Surface point encoded by the degree-0 coefficient (the sphere-mean of the
    /// surface function).
    pub fn center(&self) -> Vector3<f64> {
        let s = (4.0 * std::f64::consts::PI).sqrt();
        Vector3::new(self.data[0][0].re, self.data[0][1].re, self.data[0][2].re) / s
    }

    /// Real 3x3 matrix `A` of the degree-1 part: `x(u) ≈ center + A u`.
    pub fn first_order_matrix(&self) -> Matrix3<f64> {
        let real = self.to_real();
        // Real degree-1 functions are c·z (m=0), c·x (m=+1), c·y (m=-1) with
        // c = -sqrt(3/4π) for the ±1 pair (Condon–Shortley) and +sqrt(3/4π) for z.
        let c = (3.0 / (4.0 * std::f64::consts::PI)).sqrt();
        let mut a = Matrix3::zeros();
        if self.degree == 0 {
            return a;
        }
        let cx = real[basis_index(1, 1)] * -c;
        let cy = real[basis_index(1, -1)] * -c;
        let cz = real[basis_index(1, 0)] * c;
        a.set_column(0, &cx);
        a.set_column(1, &cy);
        a.set_column(2, &cz);
        a
    }

    pub fn add_scaled(&mut self, other: &Self, s: f64) {
        assert_eq!(self.degree, other.degree);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            for k in 0..3 {
                a[k] += b[k] * s;
            }
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        for a in &mut out.data {
            for v in a.iter_mut() {
                *v *= s;
            }
        }
        out
    }

    /// Coefficient-wise average of sets sharing one degree cap.
    pub fn mean(sets: &[Self]) -> Result<Self> {
        let first = sets
            .first()
            .ok_or_else(|| Error::InvalidParameter("mean of an empty coefficient list".into()))?;
        let mut acc = Self::zeros(first.degree);
        for s in sets {
            if s.degree != first.degree {
                return Err(Error::SchemaMismatch(format!(
                    "degree {} vs {}",
                    s.degree, first.degree
                )));
            }
            acc.add_scaled(s, 1.0);
        }
        Ok(acc.scaled(1.0 / sets.len() as f64))
    }

    /// Euclidean norm over every real and imaginary component.
    pub fn distance(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (0..3).map(|k| (a[k] - b[k]).norm_sqr()).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    /// Flattened feature block: per (l, m) in l-major order, per coordinate
    /// x, y, z, real part then imaginary part.
    pub fn flatten(&self) -> Vec<f64> {
        self.data
            .iter()
            .flat_map(|c| [c[0].re, c[0].im, c[1].re, c[1].im, c[2].re, c[2].im])
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        let file = CoefficientFile {
            degree: self.degree,
            ordering: ORDERING.into(),
            data: self
                .data
                .iter()
                .map(|c| [c[0].re, c[0].im, c[1].re, c[1].im, c[2].re, c[2].im])
                .collect(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: CoefficientFile = serde_json::from_str(text)?;
        if file.ordering != ORDERING {
            return Err(Error::SchemaMismatch(format!(
                "coefficient ordering {:?}, expected {ORDERING:?}",
                file.ordering
            )));
        }
        let data = file
            .data
            .iter()
            .map(|r| {
                [
                    Complex::new(r[0], r[1]),
                    Complex::new(r[2], r[3]),
                    Complex::new(r[4], r[5]),
                ]
            })
            .collect();
        Self::from_data(file.degree, data)
    }

    /// Surface points at the given unit directions, using the real basis.
    /// Assumes the coefficients describe a real surface.
    pub fn evaluate(&self, directions: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
        let real = self.to_real();
        let mut ev = BasisEvaluator::new(self.degree);
        let mut row = vec![0.0; basis_len(self.degree)];
        directions
            .iter()
            .map(|u| {
                ev.real_at(u, &mut row);
                row.iter().zip(&real).map(|(y, c)| c * *y).sum()
            })
            .collect()
    }
}

/// Result of a least-squares fit.
#[derive(Debug, Clone)]
pub struct SpharmFit {
    pub coefficients: SpharmCoefficients,
    /// Root-mean-square distance between the samples and the fitted surface.
    pub residual_rms: f64,
    /// Ratio of the largest to the smallest diagonal magnitude of the QR factor.
    pub condition_estimate: f64,
}

/// QR factorization of the real basis matrix over a fixed set of sample
/// directions; fits any number of value sets on those samples.
#[derive(Debug, Clone)]
pub struct SampleFitter {
    degree: usize,
    directions: Vec<Vector3<f64>>,
    qr: nalgebra::linalg::QR<f64, nalgebra::Dyn, nalgebra::Dyn>,
    r: DMatrix<f64>,
    condition_estimate: f64,
}

impl SampleFitter {
    pub fn new(directions: &[Vector3<f64>], degree: usize) -> Result<Self> {
        let k = basis_len(degree);
        let n = directions.len();
        if n < k {
            return Err(Error::InvalidParameter(format!(
                "{n} samples cannot determine {k} coefficients (degree {degree})"
            )));
        }
        let mut ev = BasisEvaluator::new(degree);
        let mut row = vec![0.0; k];
        let mut a = DMatrix::<f64>::zeros(n, k);
        for (i, u) in directions.iter().enumerate() {
            ev.real_at(u, &mut row);
            for (j, v) in row.iter().enumerate() {
                a[(i, j)] = *v;
            }
        }
        let qr = a.qr();
        let r = qr.r();
        let diag: Vec<f64> = (0..k).map(|i| r[(i, i)].abs()).collect();
        let max = diag.iter().cloned().fold(0.0, f64::max);
        let min = diag.iter().cloned().fold(f64::INFINITY, f64::min);
        let condition_estimate = if min > 0.0 { max / min } else { f64::INFINITY };
        if !(condition_estimate <= MAX_CONDITION) {
            return Err(Error::IllConditioned {
                condition: condition_estimate,
            });
        }
        Ok(Self {
            degree,
            directions: directions.to_vec(),
            qr,
            r,
            condition_estimate,
        })
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn directions(&self) -> &[Vector3<f64>] {
        &self.directions
    }

    pub fn condition_estimate(&self) -> f64 {
        self.condition_estimate
    }

    /// Least-squares coefficients for one value per sample direction.
    pub fn fit(&self, values: &[Vector3<f64>]) -> Result<SpharmFit> {
        let n = self.directions.len();
        if values.len() != n {
            return Err(Error::LengthMismatch(values.len(), n));
        }
        let k = basis_len(self.degree);
        let mut rhs = DMatrix::<f64>::zeros(n, 3);
        for (i, v) in values.iter().enumerate() {
            for c in 0..3 {
                rhs[(i, c)] = v[c];
            }
        }
        self.qr.q_tr_mul(&mut rhs);
        let top = rhs.rows(0, k).into_owned();
        let sol = self
            .r
            .solve_upper_triangular(&top)
            .ok_or(Error::IllConditioned {
                condition: f64::INFINITY,
            })?;
        let real: Vec<Vector3<f64>> = (0..k)
            .map(|j| Vector3::new(sol[(j, 0)], sol[(j, 1)], sol[(j, 2)]))
            .collect();
        // Residual norm is the norm of the trailing part of Qᵀb.
        let tail = rhs.rows(k, n - k);
        let residual_rms = (tail.norm_squared() / n as f64).sqrt();
        Ok(SpharmFit {
            coefficients: SpharmCoefficients::from_real(self.degree, &real)?,
            residual_rms,
            condition_estimate: self.condition_estimate,
        })
    }
}

/// Per-coordinate least-squares fit of the mesh vertices against the basis
/// evaluated at each vertex's spherical parameter.
pub fn fit_coefficients(mesh: &TriangleMesh, param: &SphericalParam, degree: usize) -> Result<SpharmFit> {
    if param.len() != mesh.vertex_count() {
        return Err(Error::LengthMismatch(param.len(), mesh.vertex_count()));
    }
    let folds = param.fold_count(&mesh.faces);
    if folds > 0 {
        return Err(Error::ParamFailure { folds });
    }
    SampleFitter::new(param.points(), degree)?.fit(&mesh.vertices)
}

/// Evaluates the complex expansion at every sample direction. Imaginary parts
/// are dropped after checking they are negligible.
pub fn reconstruct(coeffs: &SpharmCoefficients, samples: &[Vector3<f64>], faces: &[Face]) -> Result<TriangleMesh> {
    let k = basis_len(coeffs.degree());
    let mut ev = BasisEvaluator::new(coeffs.degree());
    let mut row = vec![Complex::new(0.0, 0.0); k];
    let mut vertices = Vec::with_capacity(samples.len());
    let mut worst = 0.0_f64;
    let mut scale = 0.0_f64;
    for u in samples {
        ev.complex_at(u, &mut row);
        let mut acc = [Complex::new(0.0, 0.0); 3];
        for (y, c) in row.iter().zip(coeffs.data()) {
            for d in 0..3 {
                acc[d] += c[d] * y;
            }
        }
        for a in &acc {
            worst = worst.max(a.im.abs());
            scale = scale.max(a.re.abs());
        }
        vertices.push(Vector3::new(acc[0].re, acc[1].re, acc[2].re));
    }
    if worst > 1e-8 * (1.0 + scale) {
        return Err(Error::RealityViolation { residue: worst });
    }
    TriangleMesh::new(vertices, faces.to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::fibonacci_points;
    use approx::assert_relative_eq;

    fn random_real_coeffs(degree: usize, seed: u64) -> SpharmCoefficients {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let real: Vec<Vector3<f64>> = (0..basis_len(degree))
            .map(|_| Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        SpharmCoefficients::from_real(degree, &real).unwrap()
    }

    #[test]
    fn real_complex_conversion_roundtrip() {
        let c = random_real_coeffs(5, 3);
        assert!(c.reality_residual() < 1e-15);
        let back = SpharmCoefficients::from_real(5, &c.to_real()).unwrap();
        assert!(back.distance(&c) < 1e-13);
    }

    #[test]
    fn complex_and_real_evaluation_agree() {
        let c = random_real_coeffs(6, 11);
        let pts = fibonacci_points(50);
        let faces = vec![];
        let complex = reconstruct(&c, &pts, &faces).unwrap();
        let real = c.evaluate(&pts);
        for (a, b) in complex.vertices.iter().zip(&real) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn constant_term_collapses_to_a_point() {
        let t = Vector3::new(0.5, -1.0, 2.0);
        let c = SpharmCoefficients::zeros(3).translated(&t);
        let out = reconstruct(&c, &fibonacci_points(20), &[]).unwrap();
        for v in &out.vertices {
            assert!((v - t).norm() < 1e-14);
        }
        assert!((c.center() - t).norm() < 1e-15);
    }

    #[test]
    fn corrupted_coefficients_are_rejected() {
        let mut c = random_real_coeffs(3, 5);
        let mut v = c.get(2, -1);
        v[0] += Complex::new(0.0, 0.3);
        c.set(2, -1, v);
        assert!(matches!(
            reconstruct(&c, &fibonacci_points(40), &[]),
            Err(Error::RealityViolation { .. })
        ));
    }

    #[test]
    fn first_order_matrix_of_linear_map() {
        // Fit the surface x(u) = A u exactly and recover A.
        let a = Matrix3::new(2.0, 0.3, -0.1, 0.0, 1.0, 0.4, 0.2, 0.0, 0.5);
        let pts = fibonacci_points(200);
        let values: Vec<_> = pts.iter().map(|u| a * u).collect();
        let fit = SampleFitter::new(&pts, 2).unwrap().fit(&values).unwrap();
        assert!((fit.coefficients.first_order_matrix() - a).norm() < 1e-12);
        assert!(fit.residual_rms < 1e-12);
    }

    #[test]
    fn json_roundtrip_and_ordering_tag() {
        let c = random_real_coeffs(4, 9);
        let text = c.to_json().unwrap();
        assert_eq!(SpharmCoefficients::from_json(&text).unwrap(), c);
        let bad = text.replace("l-major", "m-major");
        assert!(matches!(SpharmCoefficients::from_json(&bad), Err(Error::SchemaMismatch(_))));
    }

    #[test]
    fn underdetermined_fit_is_refused() {
        assert!(SampleFitter::new(&fibonacci_points(10), 3).is_err());
    }

    #[test]
    fn clustered_samples_are_ill_conditioned() {
        // every sample within a small polar cap
        let pts: Vec<_> = fibonacci_points(20000)
            .into_iter()
            .filter(|u| u.z > 0.98)
            .collect();
        assert!(pts.len() > basis_len(10));
        assert!(matches!(
            SampleFitter::new(&pts, 10),
            Err(Error::IllConditioned { .. })
        ));
    }

    #[test]
    fn translation_and_linear_map_commute_with_fit() {
        let c = random_real_coeffs(3, 21);
        let q = nalgebra::Rotation3::from_euler_angles(0.3, -0.2, 1.1).into_inner();
        let pts = fibonacci_points(100);
        let moved: Vec<_> = c.evaluate(&pts).iter().map(|p| q * p).collect();
        let fit = SampleFitter::new(&pts, 3).unwrap().fit(&moved).unwrap();
        assert!(fit.coefficients.distance(&c.transformed(&q)) < 1e-12);
        assert_relative_eq!(fit.residual_rms, 0.0, epsilon = 1e-12);
    }
}
