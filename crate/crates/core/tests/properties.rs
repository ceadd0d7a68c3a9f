use std::f64::consts::PI;

use nalgebra::{Complex, Vector3};
use proptest::prelude::*;

use qcspharm_core::features::{two_sample_ttest, FeatureMatrix, NEGATIVE, POSITIVE};
use qcspharm_core::mesh::{read_mesh, shapes, write_off, MeshFormat, TriangleMesh};
use qcspharm_core::sampling::fibonacci_points;
use qcspharm_core::spharm::{basis_index, basis_len, eval_basis, SampleFitter, SpharmCoefficients};
use qcspharm_core::svm::{predict, solve_dual, train_svm};

/// Gauss–Legendre nodes and weights on [-1, 1].
fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    (0..n)
        .map(|i| {
            let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for k in 2..=n {
                    let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = p2;
                }
                dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                let dx = p1 / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            (x, 2.0 / ((1.0 - x * x) * dp * dp))
        })
        .collect()
}

/// Gauss–Legendre in cos θ times the trapezoid rule in φ: exact for
/// band-limited integrands of degree below the node counts.
fn sphere_quadrature(f: &mut dyn FnMut(f64, f64, f64)) {
    let nt = 24;
    let np = 48;
    for (x, w) in gauss_legendre(nt) {
        let theta = x.acos();
        for k in 0..np {
            let phi = 2.0 * PI * k as f64 / np as f64;
            f(theta, phi, w * 2.0 * PI / np as f64);
        }
    }
}

#[test]
fn low_degree_closed_forms_by_quadrature() {
    let mut int_y00 = 0.0;
    let mut int_y10_sq = 0.0;
    let mut int_cos_y10 = 0.0;
    sphere_quadrature(&mut |t, p, w| {
        let row = eval_basis(t, p, 1).unwrap();
        int_y00 += w * row[0].re;
        int_y10_sq += w * row[basis_index(1, 0)].norm_sqr();
        int_cos_y10 += w * t.cos() * row[basis_index(1, 0)].re;
    });
    // ∫Y00 = √(4π); ∫|Y10|² = 1; ∫cos θ·Y10 = √(4π/3).
    assert!((int_y00 - (4.0 * PI).sqrt()).abs() < 1e-13);
    assert!((int_y10_sq - 1.0).abs() < 1e-13);
    assert!((int_cos_y10 - (4.0 * PI / 3.0).sqrt()).abs() < 1e-13);
}

#[test]
fn gram_matrix_is_identity_under_exact_quadrature() {
    let l = 8;
    let n = basis_len(l);
    let mut g = vec![Complex::new(0.0, 0.0); n * n];
    sphere_quadrature(&mut |t, p, w| {
        let row = eval_basis(t, p, l).unwrap();
        for i in 0..n {
            for j in 0..n {
                g[i * n + j] += row[i] * row[j].conj() * w;
            }
        }
    });
    for i in 0..n {
        for j in 0..n {
            let want = if i == j { 1.0 } else { 0.0 };
            assert!((g[i * n + j] - Complex::new(want, 0.0)).norm() < 1e-12, "({i}, {j})");
        }
    }
}

fn real_coefficients(l: usize) -> impl Strategy<Value = Vec<Vector3<f64>>> {
    prop::collection::vec(prop::array::uniform3(-1.0f64..1.0), basis_len(l))
        .prop_map(|v| v.into_iter().map(|a| Vector3::new(a[0], a[1], a[2])).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn fit_recovers_band_limited_surfaces(real in real_coefficients(5)) {
        let truth = SpharmCoefficients::from_real(5, &real).unwrap();
        prop_assert!(truth.reality_residual() < 1e-12);
        let dirs = fibonacci_points(300);
        let fitter = SampleFitter::new(&dirs, 5).unwrap();
        let fit = fitter.fit(&truth.evaluate(&dirs)).unwrap();
        prop_assert!(fit.coefficients.distance(&truth) < 1e-9);
        prop_assert!(fit.residual_rms < 1e-10);
    }

    #[test]
    fn translation_moves_only_degree_zero(real in real_coefficients(3), t in prop::array::uniform3(-2.0f64..2.0)) {
        let c = SpharmCoefficients::from_real(3, &real).unwrap();
        let t = Vector3::new(t[0], t[1], t[2]);
        let moved = c.translated(&t);
        prop_assert!((moved.center() - c.center() - t).norm() < 1e-12);
        for i in 1..c.len() {
            prop_assert_eq!(moved.data()[i], c.data()[i]);
        }
        let dirs = fibonacci_points(50);
        for (a, b) in moved.evaluate(&dirs).iter().zip(c.evaluate(&dirs)) {
            prop_assert!((a - b - t).norm() < 1e-12);
        }
    }

    #[test]
    fn coefficient_json_roundtrip(real in real_coefficients(4)) {
        let c = SpharmCoefficients::from_real(4, &real).unwrap();
        prop_assert_eq!(SpharmCoefficients::from_json(&c.to_json().unwrap()).unwrap(), c);
    }

    #[test]
    fn ttest_p_is_a_probability_and_affine_invariant(
        a in prop::collection::vec(-10.0f64..10.0, 3..30),
        b in prop::collection::vec(-10.0f64..10.0, 3..30),
        scale in prop::sample::select(vec![-3.0, -0.5, 0.25, 2.0, 7.0]),
        shift in -5.0f64..5.0,
    ) {
        let p = two_sample_ttest(&a, &b).unwrap().p;
        prop_assert!((0.0..=1.0).contains(&p));
        prop_assert_eq!(p, two_sample_ttest(&b, &a).unwrap().p);
        let f = |x: &Vec<f64>| x.iter().map(|v| scale * v + shift).collect::<Vec<_>>();
        let q = two_sample_ttest(&f(&a), &f(&b)).unwrap().p;
        prop_assert!((p - q).abs() < 1e-9, "{} vs {}", p, q);
    }

    #[test]
    fn off_roundtrip_is_exact(noise in prop::collection::vec(-0.1f64..0.1, 42 * 3)) {
        let mut m = shapes::icosphere(1, 1.0);
        for (v, d) in m.vertices.iter_mut().zip(noise.chunks(3)) {
            *v += Vector3::new(d[0], d[1], d[2]);
        }
        let back: TriangleMesh = read_mesh(&write_off(&m), MeshFormat::Off).unwrap();
        prop_assert_eq!(back, m);
    }

    #[test]
    fn feature_csv_roundtrip_is_exact(values in prop::collection::vec(-1e3f64..1e3, 6 * 4)) {
        let rows: Vec<Vec<f64>> = values.chunks(4).map(|c| c.to_vec()).collect();
        let m = FeatureMatrix::new(
            (0..6).map(|i| format!("s{i}")).collect(),
            vec!["e0".into(), "e1".into(), "r0".into(), "vol".into()],
            rows,
            vec![1, 1, 1, -1, -1, -1],
        ).unwrap();
        prop_assert_eq!(FeatureMatrix::from_csv(&m.to_csv()).unwrap(), m);
    }
}

fn blobs(seed: u64, n: usize) -> (Vec<Vec<f64>>, Vec<i32>) {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for i in 0..n {
        let y = if i % 2 == 0 { POSITIVE } else { NEGATIVE };
        rows.push(vec![
            rng.random_range(-1.0..1.0) + 0.5 * y as f64,
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0) - 0.3 * y as f64,
        ]);
        labels.push(y);
    }
    (rows, labels)
}

fn matrix(rows: &[Vec<f64>], labels: &[i32]) -> FeatureMatrix {
    FeatureMatrix::new(
        (0..rows.len()).map(|i| format!("s{i}")).collect(),
        (0..rows[0].len()).map(|j| format!("e{j}")).collect(),
        rows.to_vec(),
        labels.to_vec(),
    )
    .unwrap()
}

#[test]
fn label_flip_negates_the_decision() {
    for seed in 0..5 {
        let (rows, labels) = blobs(seed, 24);
        let flipped: Vec<i32> = labels.iter().map(|y| -y).collect();
        let a = train_svm(&matrix(&rows, &labels), 1.0, 1.0).unwrap();
        let b = train_svm(&matrix(&rows, &flipped), 1.0, 1.0).unwrap();
        let (probe, _) = blobs(seed + 100, 10);
        for x in &probe {
            let (da, db) = (predict(&a, x).unwrap().decision, predict(&b, x).unwrap().decision);
            assert!((da + db).abs() < 1e-6, "{da} vs {db}");
        }
    }
}

#[test]
fn duplicated_rows_keep_the_dual_feasible() {
    let (mut rows, mut labels) = blobs(9, 16);
    rows.extend(rows.clone());
    labels.extend(labels.clone());
    let c = 2.0;
    let sol = solve_dual(&rows, &labels, 1.0, c).unwrap();
    assert!(sol.converged);
    assert!(sol.alpha.iter().all(|a| (0.0..=c).contains(a)));
    let eq: f64 = sol.alpha.iter().zip(&labels).map(|(a, y)| a * *y as f64).sum();
    assert!(eq.abs() < 1e-9);
    let single = train_svm(&matrix(&rows[..16], &labels[..16]), 1.0, c).unwrap();
    let double = train_svm(&matrix(&rows, &labels), 1.0, c).unwrap();
    let agree = rows[..16]
        .iter()
        .filter(|x| predict(&single, x).unwrap().label == predict(&double, x).unwrap().label)
        .count();
    assert!(agree >= 14, "{agree}");
}
