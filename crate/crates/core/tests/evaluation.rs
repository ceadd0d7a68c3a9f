use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use qcspharm_core::cohort::{generate_cohort, CohortSpec};
use qcspharm_core::features::{Block, FeatureMatrix, NEGATIVE, POSITIVE};
use qcspharm_core::pipeline::{
    evaluate, evaluate_grid, fit_repetition, process_cohort, stratified_split, sweep_csv, sweep_pcut, ImproveConfig,
    Method, PipelineConfig, SplitConfig,
};
use qcspharm_core::Error;

/// `per_class` rows per class; the first `signal` columns of each block are
/// shifted by `shift` in the negative class.
fn synthetic(per_class: usize, shift: f64, seed: u64) -> FeatureMatrix {
    let (ns, nr, signal) = (30, 12, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut columns: Vec<String> = (0..ns).map(|j| format!("e{j}")).collect();
    columns.extend((0..nr).map(|k| format!("r{k}")));
    columns.push("vol".into());
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for i in 0..2 * per_class {
        let y = if i < per_class { POSITIVE } else { NEGATIVE };
        let row: Vec<f64> = (0..columns.len())
            .map(|j| {
                let in_signal = j < signal || (ns..ns + signal).contains(&j) || j == ns + nr;
                let z: f64 = rng.sample(StandardNormal);
                z + if in_signal && y == NEGATIVE { shift } else { 0.0 }
            })
            .collect();
        rows.push(row);
        labels.push(y);
    }
    FeatureMatrix::new((0..2 * per_class).map(|i| format!("s{i:03}")).collect(), columns, rows, labels).unwrap()
}

fn config(train: usize, test: usize, r: usize) -> PipelineConfig {
    PipelineConfig {
        splits: SplitConfig {
            train_per_class: train,
            test_per_class: test,
        },
        repetitions: r,
        p_cut: 0.01,
        p_cut_grid: vec![0.001, 0.01, 0.1],
        seed: 5,
        ..PipelineConfig::default()
    }
}

#[test]
fn report_structure() {
    let m = synthetic(15, 1.5, 1);
    let cfg = config(10, 5, 12);
    let rep = evaluate(&m, &cfg).unwrap();
    assert_eq!(rep.repetitions.len(), 12);
    for r in &rep.repetitions {
        assert_eq!(r.counts.total(), r.omega.len());
        let (p, n) = (5.0, 5.0);
        assert!((r.accuracy - (r.sensitivity * p + r.specificity * n) / (p + n)).abs() < 1e-12);
    }
    let mean = rep.repetitions.iter().map(|r| r.accuracy).sum::<f64>() / 12.0;
    assert!((mean - rep.mean_accuracy).abs() < 1e-12);
    assert!(rep.mean_accuracy > 0.9);
}

#[test]
fn sweep_rows_and_paired_splits() {
    let m = synthetic(15, 1.0, 2);
    let cfg = config(10, 5, 8);
    let (rows, reports) = sweep_pcut(&m, &cfg).unwrap();
    assert_eq!(rows.len(), 3);
    assert_eq!(sweep_csv(&rows).lines().count(), 4);
    for r in 0..8 {
        let test = &reports[0].repetitions[r].test_rows;
        for rep in &reports[1..] {
            assert_eq!(&rep.repetitions[r].test_rows, test);
        }
        let split = stratified_split(&m.labels, &cfg.splits, cfg.seed, r).unwrap();
        assert_eq!(&split.test, test);
    }
    // Ω grows with the threshold on shared splits.
    for r in 0..8 {
        for w in reports.windows(2) {
            let (a, b) = (&w[0].repetitions[r].omega, &w[1].repetitions[r].omega);
            assert!(a.iter().all(|j| b.contains(j)));
        }
    }
}

#[test]
fn selection_and_scaling_ignore_test_rows() {
    let m = synthetic(15, 1.0, 3);
    let cfg = config(10, 5, 4);
    for r in 0..4 {
        let clean = fit_repetition(&m, Method::QcSpharm, &cfg, r, 0.05).unwrap();
        let rows: Vec<Vec<f64>> = (0..m.nrows())
            .map(|i| {
                if clean.split.test.contains(&i) {
                    vec![1e6; m.ncols()]
                } else {
                    m.row(i).to_vec()
                }
            })
            .collect();
        let poisoned = FeatureMatrix::new(m.ids.clone(), m.columns.clone(), rows, m.labels.clone()).unwrap();
        let dirty = fit_repetition(&poisoned, Method::QcSpharm, &cfg, r, 0.05).unwrap();
        assert_eq!(clean.split, dirty.split);
        assert_eq!(clean.selection, dirty.selection);
        assert_eq!(clean.model, dirty.model);
        assert!(clean.model.is_some());
    }
}

#[test]
fn method_blocks() {
    let m = synthetic(15, 1.5, 4);
    let cfg = config(10, 5, 6);
    for method in Method::ALL {
        let rep = evaluate_grid(&m, method, &[0.05], &cfg).unwrap().remove(0);
        for r in &rep.repetitions {
            for &j in &r.omega {
                assert!(method.blocks().contains(&m.block_of(j).unwrap()), "{method:?} picked {}", m.columns[j]);
            }
            if method == Method::Volume {
                assert_eq!(r.omega, vec![m.ncols() - 1]);
            }
        }
    }
    assert_eq!(Method::Volume.blocks(), &[Block::Volume]);
}

#[test]
fn empty_selection_predicts_training_majority() {
    let m = synthetic(15, 0.0, 5);
    let cfg = PipelineConfig {
        p_cut: 1e-15,
        ..config(10, 5, 5)
    };
    let rep = evaluate(&m, &cfg).unwrap();
    for r in &rep.repetitions {
        assert!(r.empty_selection);
        assert_eq!((r.sensitivity, r.specificity, r.accuracy), (0.0, 1.0, 0.5));
    }
}

#[test]
fn null_matrix_is_near_chance() {
    let m = synthetic(30, 0.0, 6);
    let (train, test, r) = (20, 10, 30);
    let rep = evaluate(&m, &config(train, test, r)).unwrap();
    // Three binomial standard deviations of one repetition's accuracy.
    let half = 3.0 * (0.25 / (2 * test) as f64).sqrt();
    assert!(
        (rep.mean_accuracy - 0.5).abs() <= half,
        "{} outside 0.5 ± {half}",
        rep.mean_accuracy
    );
}

#[test]
fn split_sizes_are_checked() {
    let m = synthetic(8, 1.0, 7);
    assert!(matches!(
        evaluate(&m, &config(6, 3, 2)),
        Err(Error::TooFewSubjects(_))
    ));
}

#[test]
fn identical_inputs_give_identical_reports() {
    let m = synthetic(15, 0.8, 8);
    let cfg = config(10, 5, 10);
    assert_eq!(
        evaluate(&m, &cfg).unwrap().to_json().unwrap(),
        evaluate(&m, &cfg).unwrap().to_json().unwrap()
    );
}

fn small_pipeline() -> PipelineConfig {
    PipelineConfig {
        degree: 8,
        template_size: 800,
        improve: ImproveConfig {
            smooth_iterations: 0,
            smooth_step: 0.5,
            simplify_target: 0,
            refine: false,
        },
        mean_iterations: 4,
        splits: SplitConfig {
            train_per_class: 8,
            test_per_class: 4,
        },
        repetitions: 20,
        p_cut: 0.01,
        seed: 9,
        ..PipelineConfig::default()
    }
}

fn cohort_accuracy(spec: &CohortSpec, cfg: &PipelineConfig, method: Method) -> f64 {
    let cohort = generate_cohort(spec).unwrap();
    let subjects: Vec<_> = cohort
        .subjects
        .iter()
        .map(|s| (s.id.clone(), s.label, s.mesh.clone()))
        .collect();
    let processed = process_cohort(&subjects, cfg).unwrap();
    let p = if method == Method::Volume { 0.5 } else { cfg.p_cut };
    evaluate_grid(&processed.matrix, method, &[p], cfg).unwrap()[0].mean_accuracy
}

fn small_spec(amplitude: f64, volume_scale: f64, seed: u64) -> CohortSpec {
    let mut s = CohortSpec {
        subjects_per_class: 12,
        vertices: 800,
        seed,
        ..CohortSpec::default()
    };
    s.effect.amplitude = amplitude;
    s.effect.volume_scale_negative = volume_scale;
    s
}

#[test]
fn volume_baseline_detects_a_volume_only_difference() {
    let acc = cohort_accuracy(&small_spec(0.0, 0.9, 21), &small_pipeline(), Method::Volume);
    assert!(acc > 0.8, "volume accuracy {acc}");
}

#[test]
fn accuracy_trends_upward_with_amplitude() {
    let cfg = small_pipeline();
    let acc: Vec<f64> = [0.0, 0.06, 0.15]
        .iter()
        .map(|&a| cohort_accuracy(&small_spec(a, 1.0, 22), &cfg, Method::QcSpharm))
        .collect();
    let slope = (acc[2] - acc[0]) / 0.15;
    assert!(slope > 0.0 && acc[2] >= acc[0] + 0.2, "{acc:?}");
}
