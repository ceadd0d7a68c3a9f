//! Orthonormal spherical harmonics.
//!
//! `Y_l^m(θ, φ) = P̄_l^m(cos θ) e^{imφ}` with `P̄` the associated Legendre
//! function normalized so that `∫ |Y_l^m|² dΩ = 1` over the unit sphere and
//! carrying the Condon–Shortley phase. Negative orders follow
//! `Y_l^{-m} = (-1)^m conj(Y_l^m)`.
//!
//! Rows are laid out l-major, m ascending from `-l` to `l`: index `l² + l + m`.

use std::f64::consts::PI;

use nalgebra::{Complex, Vector3};

use crate::error::{Error, Result};

pub type BasisRow = Vec<Complex<f64>>;

/// Number of basis functions for degrees `0..=l_max`.
pub fn basis_len(l_max: usize) -> usize {
    (l_max + 1) * (l_max + 1)
}

/// Position of `(l, m)` in a basis row.
#[inline]
pub fn basis_index(l: usize, m: i64) -> usize {
    debug_assert!(m.unsigned_abs() as usize <= l);
    ((l * l + l) as i64 + m) as usize
}

/// Inverse of [`basis_index`].
pub fn degree_order(index: usize) -> (usize, i64) {
    let l = (index as f64).sqrt() as usize;
    let l = if (l + 1) * (l + 1) <= index { l + 1 } else { l };
    (l, index as i64 - (l * l + l) as i64)
}

#[inline]
fn tri(l: usize, m: usize) -> usize {
    l * (l + 1) / 2 + m
}

/// Fills `out[tri(l, m)]` with `P̄_l^m(cos θ)` for `0 ≤ m ≤ l ≤ l_max`, using the
/// standard upward recurrences on the normalized functions (no factorials).
pub(crate) fn legendre_table(l_max: usize, cos_t: f64, sin_t: f64, out: &mut [f64]) {
    debug_assert!(out.len() >= tri(l_max, l_max) + 1);
    out[0] = (1.0 / (4.0 * PI)).sqrt();
    for m in 1..=l_max {
        let mf = m as f64;
        out[tri(m, m)] = -((2.0 * mf + 1.0) / (2.0 * mf)).sqrt() * sin_t * out[tri(m - 1, m - 1)];
    }
    for m in 0..l_max {
        let mf = m as f64;
        out[tri(m + 1, m)] = (2.0 * mf + 3.0).sqrt() * cos_t * out[tri(m, m)];
    }
    for m in 0..=l_max {
        let mf = m as f64;
        for l in (m + 2)..=l_max {
            let lf = l as f64;
            let a = ((4.0 * lf * lf - 1.0) / (lf * lf - mf * mf)).sqrt();
            let b = (((lf - 1.0) * (lf - 1.0) - mf * mf) / (4.0 * (lf - 1.0) * (lf - 1.0) - 1.0)).sqrt();
            out[tri(l, m)] = a * (cos_t * out[tri(l - 1, m)] - b * out[tri(l - 2, m)]);
        }
    }
}

pub(crate) fn legendre_len(l_max: usize) -> usize {
    tri(l_max, l_max) + 1
}

/// Polar angles of a unit vector: `θ = arccos z ∈ [0, π]`, `φ = atan2(y, x)`
/// wrapped to `[0, 2π)`; `φ = 0` at the poles.
pub fn to_angles(u: &Vector3<f64>) -> (f64, f64) {
    let z = u.z.clamp(-1.0, 1.0);
    let theta = z.acos();
    if u.x == 0.0 && u.y == 0.0 {
        return (theta, 0.0);
    }
    let mut phi = u.y.atan2(u.x);
    if phi < 0.0 {
        phi += 2.0 * PI;
    }
    if phi >= 2.0 * PI {
        phi = 0.0;
    }
    (theta, phi)
}

pub fn from_angles(theta: f64, phi: f64) -> Vector3<f64> {
    let s = theta.sin();
    Vector3::new(s * phi.cos(), s * phi.sin(), theta.cos())
}

/// Reusable evaluator; keeps its Legendre scratch buffer between calls.
#[derive(Debug, Clone)]
pub struct BasisEvaluator {
    l_max: usize,
    plm: Vec<f64>,
}

impl BasisEvaluator {
    pub fn new(l_max: usize) -> Self {
        Self {
            l_max,
            plm: vec![0.0; legendre_len(l_max)],
        }
    }

    pub fn l_max(&self) -> usize {
        self.l_max
    }

    pub fn len(&self) -> usize {
        basis_len(self.l_max)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// cos θ, sin θ, e^{iφ} for a unit direction.
    fn setup(&mut self, u: &Vector3<f64>) -> Complex<f64> {
        let r = u.norm();
        let (x, y, z) = (u.x / r, u.y / r, u.z / r);
        let s = (x * x + y * y).sqrt();
        legendre_table(self.l_max, z.clamp(-1.0, 1.0), s, &mut self.plm);
        if s > 0.0 {
            Complex::new(x / s, y / s)
        } else {
            Complex::new(1.0, 0.0)
        }
    }

    /// Complex row `Y_l^m(u)` for every `(l, m)`.
    pub fn complex_at(&mut self, u: &Vector3<f64>, out: &mut [Complex<f64>]) {
        let e = self.setup(u);
        let mut em = Complex::new(1.0, 0.0);
        for m in 0..=self.l_max {
            let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
            for l in m..=self.l_max {
                let y = em * self.plm[tri(l, m)];
                out[basis_index(l, m as i64)] = y;
                if m > 0 {
                    out[basis_index(l, -(m as i64))] = y.conj() * sign;
                }
            }
            em *= e;
        }
    }

    /// Real orthonormal row spanning the same space: `P̄_l^0` at `m = 0`,
    /// `√2 P̄_l^m cos mφ` at `+m`, `√2 P̄_l^m sin mφ` at `-m`.
    pub fn real_at(&mut self, u: &Vector3<f64>, out: &mut [f64]) {
        let e = self.setup(u);
        let mut em = Complex::new(1.0, 0.0);
        let s2 = std::f64::consts::SQRT_2;
        for m in 0..=self.l_max {
            for l in m..=self.l_max {
                let p = self.plm[tri(l, m)];
                if m == 0 {
                    out[basis_index(l, 0)] = p;
                } else {
                    out[basis_index(l, m as i64)] = s2 * p * em.re;
                    out[basis_index(l, -(m as i64))] = s2 * p * em.im;
                }
            }
            em *= e;
        }
    }
}

/// Complex basis row at `(θ, φ)` for degrees `0..=l_max`.
pub fn eval_basis(theta: f64, phi: f64, l_max: usize) -> Result<BasisRow> {
    if !(0.0..=PI).contains(&theta) {
        return Err(Error::InvalidParameter(format!("theta {theta} outside [0, π]")));
    }
    if !(0.0..2.0 * PI).contains(&phi) {
        return Err(Error::InvalidParameter(format!("phi {phi} outside [0, 2π)")));
    }
    let mut ev = BasisEvaluator::new(l_max);
    let mut row = vec![Complex::new(0.0, 0.0); basis_len(l_max)];
    ev.complex_at(&from_angles(theta, phi), &mut row);
    Ok(row)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn degree_zero_is_constant() {
        let row = eval_basis(1.1, 4.0, 0).unwrap();
        assert_eq!(row.len(), 1);
        assert_relative_eq!(row[0].re, 0.282_094_791_773_878_14, epsilon = 1e-15);
        assert_eq!(row[0].im, 0.0);
    }

    #[test]
    fn y10_at_north_pole() {
        let row = eval_basis(0.0, 0.0, 3).unwrap();
        assert_relative_eq!(row[basis_index(1, 0)].re, (3.0 / (4.0 * PI)).sqrt(), epsilon = 1e-15);
        for l in 1..=3 {
            for m in -(l as i64)..=(l as i64) {
                if m != 0 {
                    assert_eq!(row[basis_index(l, m)].norm(), 0.0);
                }
            }
        }
    }

    #[test]
    fn matches_closed_forms() {
        // Y_1^1 = -sqrt(3/8π) sinθ e^{iφ}, Y_2^0 = sqrt(5/16π)(3cos²θ - 1),
        // Y_2^2 = sqrt(15/32π) sin²θ e^{2iφ}
        let (t, p) = (0.7_f64, 2.3_f64);
        let row = eval_basis(t, p, 2).unwrap();
        let e = |m: f64| Complex::new((m * p).cos(), (m * p).sin());
        let y11 = e(1.0) * (-(3.0 / (8.0 * PI)).sqrt() * t.sin());
        let y20 = (5.0 / (16.0 * PI)).sqrt() * (3.0 * t.cos().powi(2) - 1.0);
        let y22 = e(2.0) * ((15.0 / (32.0 * PI)).sqrt() * t.sin().powi(2));
        assert!((row[basis_index(1, 1)] - y11).norm() < 1e-14);
        assert!((row[basis_index(2, 0)].re - y20).abs() < 1e-14);
        assert!((row[basis_index(2, 2)] - y22).norm() < 1e-14);
        assert!((row[basis_index(1, -1)] + y11.conj()).norm() < 1e-14);
    }

    #[test]
    fn rejects_out_of_range_angles() {
        assert!(eval_basis(-0.1, 0.0, 2).is_err());
        assert!(eval_basis(0.5, 2.0 * PI, 2).is_err());
    }

    #[test]
    fn index_roundtrip() {
        for i in 0..basis_len(12) {
            let (l, m) = degree_order(i);
            assert_eq!(basis_index(l, m), i);
        }
    }

    #[test]
    fn real_row_is_unitary_image_of_complex_row() {
        let u = Vector3::new(0.3, -0.5, 0.81).normalize();
        let l_max = 6;
        let mut ev = BasisEvaluator::new(l_max);
        let mut c = vec![Complex::new(0.0, 0.0); basis_len(l_max)];
        let mut r = vec![0.0; basis_len(l_max)];
        ev.complex_at(&u, &mut c);
        ev.real_at(&u, &mut r);
        for l in 0..=l_max {
            for m in 1..=l as i64 {
                let y = c[basis_index(l, m)];
                assert!((r[basis_index(l, m)] - 2f64.sqrt() * y.re).abs() < 1e-14);
                assert!((r[basis_index(l, -m)] - 2f64.sqrt() * y.im).abs() < 1e-14);
            }
        }
    }
}
