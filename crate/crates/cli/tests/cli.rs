use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_qcspharm"))
}

fn run(args: &[&str], cwd: &Path) -> Output {
    bin().args(args).current_dir(cwd).output().expect("spawn")
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = run(args, cwd);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

const CONFIG: &str = r#"
L = 6
N = 300
repetitions = 6
p_cut = 0.05
p_cut_grid = [0.001, 0.05, 0.3]

[splits]
train_per_class = 3
test_per_class = 1

[improve]
smooth_iterations = 0
simplify_target = 0
refine = false
"#;

fn setup(dir: &Path, per_class: usize) {
    std::fs::write(dir.join("cfg.toml"), CONFIG).unwrap();
    ok(
        &[
            "synth",
            "--out",
            "cohort",
            "--subjects-per-class",
            &per_class.to_string(),
            "--vertices",
            "400",
            "--template-size",
            "300",
        ],
        dir,
    );
}

/// Replaces the synth manifest with a hand-written subject list.
fn use_subjects(dir: &Path, subjects: &[(&str, i32)]) {
    let mut csv = String::from("id,label,file\n");
    for (id, label) in subjects {
        csv.push_str(&format!("{id},{label},{id}.off\n"));
    }
    std::fs::write(dir.join("cohort/subjects.csv"), csv).unwrap();
    std::fs::remove_file(dir.join("cohort/manifest.json")).unwrap();
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("r/manifest.json")).unwrap()).unwrap()
}

#[test]
fn improve_parametrize_fit_on_four_subjects() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    setup(d, 3);
    use_subjects(d, &[("s000", 1), ("s001", 1), ("s003", -1), ("s004", -1)]);
    ok(&["improve", "--run", "r", "--config", "cfg.toml", "--cohort", "cohort"], d);
    ok(&["parametrize", "--run", "r"], d);
    ok(&["fit", "--run", "r"], d);
    let n = std::fs::read_dir(d.join("r/coeffs"))
        .unwrap()
        .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().starts_with('s'))
        .count();
    assert_eq!(n, 4);

    let before = manifest(d)["stages"]["fit"].clone();
    ok(&["fit", "--run", "r"], d);
    assert_eq!(manifest(d)["stages"]["fit"], before);
    let m = manifest(d);
    assert_eq!(
        m["stages"]["fit"]["inputs"]["param/s000.json"],
        m["stages"]["parametrize"]["outputs"]["param/s000.json"]
    );
}

#[test]
fn template_of_one_positive_subject_is_its_coefficients() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    setup(d, 3);
    use_subjects(d, &[("s000", 1), ("s003", -1)]);
    ok(&["improve", "--run", "r", "--config", "cfg.toml", "--cohort", "cohort"], d);
    for s in ["parametrize", "fit", "template"] {
        ok(&[s, "--run", "r"], d);
    }
    let read = |p: &str| -> serde_json::Value {
        serde_json::from_str(&std::fs::read_to_string(d.join("r").join(p)).unwrap()).unwrap()
    };
    let mean = read("template/mean.json");
    let subject = read("coeffs/s000.json");
    let flat = |v: &serde_json::Value| -> Vec<f64> {
        let mut out = Vec::new();
        fn walk(v: &serde_json::Value, out: &mut Vec<f64>) {
            match v {
                serde_json::Value::Number(n) => out.push(n.as_f64().unwrap()),
                serde_json::Value::Array(a) => a.iter().for_each(|x| walk(x, out)),
                serde_json::Value::Object(o) => o.values().for_each(|x| walk(x, out)),
                _ => {}
            }
        }
        walk(v, &mut out);
        out
    };
    let (a, b) = (flat(&mean), flat(&subject));
    assert_eq!(a.len(), b.len());
    let scale = b.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() <= 1e-9 * scale, "{x} vs {y}");
    }
}

#[test]
fn full_run_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    setup(d, 4);
    ok(&["improve", "--run", "r", "--config", "cfg.toml", "--cohort", "cohort"], d);
    for s in ["parametrize", "fit", "template", "register", "distort", "features"] {
        ok(&[s, "--run", "r"], d);
    }
    ok(&["evaluate", "--run", "r"], d);
    let first = std::fs::read(d.join("r/report.json")).unwrap();
    let report: serde_json::Value = serde_json::from_slice(&first).unwrap();
    assert_eq!(report["repetitions"].as_array().unwrap().len(), 6);
    for rep in report["repetitions"].as_array().unwrap() {
        let c = &rep["counts"];
        let total = c["shape"].as_u64().unwrap() + c["spharm"].as_u64().unwrap() + c["volume"].as_u64().unwrap();
        assert_eq!(total as usize, rep["omega"].as_array().unwrap().len());
    }
    ok(&["evaluate", "--run", "r"], d);
    assert_eq!(std::fs::read(d.join("r/report.json")).unwrap(), first);

    let csv = ok(&["sweep-pcut", "--run", "r"], d);
    assert_eq!(csv.lines().count(), 4);

    ok(&["train", "--run", "r"], d);
    let preds: serde_json::Value = serde_json::from_str(&ok(&["predict", "--run", "r"], d)).unwrap();
    assert_eq!(preds.as_array().unwrap().len(), 8);

    ok(&["export-map", "--run", "r"], d);
    let ply = std::fs::read_to_string(d.join("r/significance.ply")).unwrap();
    assert!(ply.starts_with("ply"));
    let side: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("r/significance.json")).unwrap()).unwrap();
    assert!(side["counts"].is_object());
}

#[test]
fn missing_artifact_reports_json_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["fit", "--run", "empty"], tmp.path());
    assert!(!out.status.success());
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "MissingArtifact");
}

#[test]
fn too_few_subjects_for_split() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    setup(d, 3);
    ok(&["improve", "--run", "r", "--config", "cfg.toml", "--cohort", "cohort"], d);
    for s in ["parametrize", "fit", "template", "register", "distort", "features"] {
        ok(&[s, "--run", "r"], d);
    }
    let out = run(&["evaluate", "--run", "r", "--train-per-class", "3", "--test-per-class", "2"], d);
    assert!(!out.status.success());
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "TooFewSubjects");
}

#[test]
fn bad_method_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["evaluate", "--run", "r", "--method", "nope"], tmp.path());
    assert!(!out.status.success());
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "InvalidParameter");
}
