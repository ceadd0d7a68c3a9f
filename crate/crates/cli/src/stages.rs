//! Pipeline stages over a run directory.

use std::collections::BTreeMap;
use std::path::Path;

use qcspharm_core::cohort::read_manifest;
use qcspharm_core::distortion::{curvatures, DistortionField};
use qcspharm_core::features::{assemble_feature_vector, FeatureMatrix, POSITIVE};
use qcspharm_core::mesh::{load_mesh, read_mesh, write_off, MeshFormat};
use qcspharm_core::pipeline::{
    align_subjects, build_template, improve_mesh, subject_distortion, PipelineConfig,
};
use qcspharm_core::sphere_param::{parametrize_sphere_traced, SphericalParam};
use qcspharm_core::spharm::{fit_coefficients, SpharmCoefficients};
use qcspharm_core::template::register_aligned;
use qcspharm_core::{Error, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::run::{RunDir, SubjectEntry, CONFIG, SUBJECTS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Stage {
    Improve,
    Parametrize,
    Fit,
    Template,
    Register,
    Distort,
    Features,
}

impl Stage {
    pub fn name(&self) -> &'static str {
        match self {
            Stage::Improve => "improve",
            Stage::Parametrize => "parametrize",
            Stage::Fit => "fit",
            Stage::Template => "template",
            Stage::Register => "register",
            Stage::Distort => "distort",
            Stage::Features => "features",
        }
    }
}

pub fn improved(id: &str) -> String {
    format!("improved/{id}.off")
}
pub fn param(id: &str) -> String {
    format!("param/{id}.json")
}
pub fn coeffs(id: &str) -> String {
    format!("coeffs/{id}.json")
}
pub fn aligned(id: &str) -> String {
    format!("aligned/{id}.json")
}
pub fn registered(id: &str) -> String {
    format!("registered/{id}.off")
}
pub fn distortion(id: &str) -> String {
    format!("distortion/{id}.csv")
}
pub const TEMPLATE_MEAN: &str = "template/mean.json";
pub const TEMPLATE_MESH: &str = "template/mesh.off";
pub const TEMPLATE_ALIGNMENTS: &str = "template/alignments.json";
pub const FIT_REPORT: &str = "coeffs/fit.json";
pub const REGISTER_ALIGNMENTS: &str = "registered/alignments.json";
pub const VOLUMES: &str = "distortion/volumes.json";
pub const FEATURES: &str = "features.csv";

/// Reads `manifest.json` written by `synth`, or else `subjects.csv` with
/// columns `id,label,file`.
pub fn cohort_subjects(dir: &Path) -> Result<Vec<SubjectEntry>> {
    let dir = &dir
        .canonicalize()
        .map_err(|_| Error::MissingArtifact(dir.display().to_string()))?;
    let source = |f: &str| dir.join(f).display().to_string();
    if dir.join("manifest.json").exists() {
        let m = read_manifest(dir)?;
        return Ok(m
            .subjects
            .iter()
            .map(|s| SubjectEntry {
                id: s.id.clone(),
                label: s.label,
                source: source(&s.file),
            })
            .collect());
    }
    let path = dir.join("subjects.csv");
    let text = std::fs::read_to_string(&path).map_err(|_| Error::MissingArtifact(path.display().to_string()))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 3 {
            return Err(Error::Parse(format!("subjects.csv line {}: expected id,label,file", i + 1)));
        }
        let label: i32 = f[1]
            .parse()
            .map_err(|_| Error::Parse(format!("subjects.csv line {}: label {:?}", i + 1, f[1])))?;
        if label != 1 && label != -1 {
            return Err(Error::Parse(format!("subjects.csv line {}: label must be 1 or -1", i + 1)));
        }
        out.push(SubjectEntry {
            id: f[0].to_string(),
            label,
            source: source(f[2]),
        });
    }
    Ok(out)
}

fn config_json(cfg: &PipelineConfig) -> Result<String> {
    Ok(serde_json::to_string_pretty(cfg)?)
}

fn load_off(run: &RunDir, rel: &str) -> Result<qcspharm_core::mesh::TriangleMesh> {
    read_mesh(&run.read(rel)?, MeshFormat::Off)
}

fn per_subject<T: Send>(subjects: &[SubjectEntry], f: impl Fn(&SubjectEntry) -> Result<T> + Sync) -> Result<Vec<T>> {
    subjects
        .par_iter()
        .map(|s| f(s).map_err(|e| match e {
            Error::Subject { .. } | Error::MissingArtifact(_) => e,
            e => e.for_subject(s.id.clone()),
        }))
        .collect()
}

fn ids(subjects: &[SubjectEntry], f: fn(&str) -> String) -> Vec<String> {
    subjects.iter().map(|s| f(&s.id)).collect()
}

/// Runs one stage; `cohort` is needed only by `improve`.
pub fn run_stage(stage: Stage, run: &RunDir, cfg: &PipelineConfig, cohort: Option<&Path>) -> Result<()> {
    let cj = config_json(cfg)?;
    run.write(CONFIG, &cj)?;
    let name = stage.name();
    match stage {
        Stage::Improve => {
            let dir = cohort.ok_or_else(|| Error::InvalidParameter("improve needs --cohort".into()))?;
            let subjects = cohort_subjects(dir)?;
            if subjects.is_empty() {
                return Err(Error::TooFewSubjects("cohort has no subjects".into()));
            }
            let meshes = per_subject(&subjects, |s| {
                let path = Path::new(&s.source);
                let format = MeshFormat::from_path(path)
                    .ok_or_else(|| Error::Parse(format!("unknown mesh format {}", s.source)))?;
                if !path.exists() {
                    return Err(Error::MissingArtifact(s.source.clone()));
                }
                improve_mesh(&load_mesh(path, format)?, &cfg.improve)
            })?;
            for (s, m) in subjects.iter().zip(&meshes) {
                run.write(&improved(&s.id), &write_off(m))?;
            }
            run.write(SUBJECTS, &serde_json::to_string_pretty(&subjects)?)?;
            let inputs: Vec<String> = subjects.iter().map(|s| s.source.clone()).collect();
            let mut outputs = ids(&subjects, improved);
            outputs.push(SUBJECTS.into());
            run.record(name, &cj, &inputs, &outputs)?;
        }
        Stage::Parametrize => {
            let subjects = run.subjects()?;
            let inputs = ids(&subjects, improved);
            run.require(&inputs)?;
            let params = per_subject(&subjects, |s| {
                let mesh = load_off(run, &improved(&s.id))?;
                parametrize_sphere_traced(&mesh, &cfg.param)?.param.to_json()
            })?;
            for (s, p) in subjects.iter().zip(&params) {
                run.write(&param(&s.id), p)?;
            }
            run.record(name, &cj, &inputs, &ids(&subjects, param))?;
        }
        Stage::Fit => {
            let subjects = run.subjects()?;
            let mut inputs = ids(&subjects, improved);
            inputs.extend(ids(&subjects, param));
            run.require(&inputs)?;
            let fits = per_subject(&subjects, |s| {
                let mesh = load_off(run, &improved(&s.id))?;
                let p = SphericalParam::from_json(&run.read(&param(&s.id))?)?;
                fit_coefficients(&mesh, &p, cfg.degree)
            })?;
            let mut report = BTreeMap::new();
            for (s, f) in subjects.iter().zip(&fits) {
                run.write(&coeffs(&s.id), &f.coefficients.to_json()?)?;
                report.insert(s.id.clone(), f.residual_rms);
            }
            run.write(FIT_REPORT, &serde_json::to_string_pretty(&report)?)?;
            let mut outputs = ids(&subjects, coeffs);
            outputs.push(FIT_REPORT.into());
            run.record(name, &cj, &inputs, &outputs)?;
        }
        Stage::Template => {
            let subjects = run.subjects()?;
            let inputs = ids(&subjects, coeffs);
            run.require(&inputs)?;
            let coefficients = load_coeffs(run, &subjects)?;
            let labels: Vec<i32> = subjects.iter().map(|s| s.label).collect();
            let sphere = cfg.template_sphere()?;
            let template = build_template(&coefficients, &labels, &sphere, cfg)?;
            run.write(TEMPLATE_MEAN, &template.mean.to_json()?)?;
            run.write(TEMPLATE_MESH, &write_off(&template.mesh))?;
            let log = TemplateLog {
                subjects: subjects.iter().filter(|s| s.label == POSITIVE).map(|s| s.id.clone()).collect(),
                iterations: template.iterations,
                converged: template.converged,
                alignments: template.alignments.clone(),
            };
            run.write(TEMPLATE_ALIGNMENTS, &serde_json::to_string_pretty(&log)?)?;
            run.record(
                name,
                &cj,
                &inputs,
                &[TEMPLATE_MEAN.into(), TEMPLATE_MESH.into(), TEMPLATE_ALIGNMENTS.into()],
            )?;
        }
        Stage::Register => {
            let subjects = run.subjects()?;
            let mut inputs = ids(&subjects, coeffs);
            inputs.push(TEMPLATE_MEAN.into());
            run.require(&inputs)?;
            let coefficients = load_coeffs(run, &subjects)?;
            let mean = SpharmCoefficients::from_json(&run.read(TEMPLATE_MEAN)?)?;
            let sphere = cfg.template_sphere()?;
            let subject_ids: Vec<String> = subjects.iter().map(|s| s.id.clone()).collect();
            let results = align_subjects(&subject_ids, &coefficients, &mean, cfg)?;
            let mut log = BTreeMap::new();
            for (s, (c, a)) in subjects.iter().zip(&results) {
                let reg = register_aligned(&s.id, c, &sphere)?;
                run.write(&aligned(&s.id), &c.to_json()?)?;
                run.write(&registered(&s.id), &write_off(&reg.mesh))?;
                log.insert(s.id.clone(), a.clone());
            }
            run.write(REGISTER_ALIGNMENTS, &serde_json::to_string_pretty(&log)?)?;
            let mut outputs = ids(&subjects, aligned);
            outputs.extend(ids(&subjects, registered));
            outputs.push(REGISTER_ALIGNMENTS.into());
            run.record(name, &cj, &inputs, &outputs)?;
        }
        Stage::Distort => {
            let subjects = run.subjects()?;
            let mut inputs = ids(&subjects, registered);
            inputs.push(TEMPLATE_MESH.into());
            run.require(&inputs)?;
            let tmesh = load_off(run, TEMPLATE_MESH)?;
            let tcurv = curvatures(&tmesh)?;
            let results = per_subject(&subjects, |s| {
                let reg = qcspharm_core::template::RegisteredSurface {
                    id: s.id.clone(),
                    mesh: load_off(run, &registered(&s.id))?,
                };
                subject_distortion(&tmesh, &tcurv, &reg, &cfg.weights)
            })?;
            let mut volumes = BTreeMap::new();
            for (s, (field, vol)) in subjects.iter().zip(&results) {
                run.write(&distortion(&s.id), &field.to_csv())?;
                volumes.insert(s.id.clone(), *vol);
            }
            run.write(VOLUMES, &serde_json::to_string_pretty(&volumes)?)?;
            let mut outputs = ids(&subjects, distortion);
            outputs.push(VOLUMES.into());
            run.record(name, &cj, &inputs, &outputs)?;
        }
        Stage::Features => {
            let subjects = run.subjects()?;
            let mut inputs = ids(&subjects, distortion);
            inputs.extend(ids(&subjects, aligned));
            inputs.push(VOLUMES.into());
            run.require(&inputs)?;
            let volumes: BTreeMap<String, f64> = serde_json::from_str(&run.read(VOLUMES)?)?;
            let vectors = per_subject(&subjects, |s| {
                let field = DistortionField::from_csv(&run.read(&distortion(&s.id))?)?;
                let c = SpharmCoefficients::from_json(&run.read(&aligned(&s.id))?)?;
                let vol = *volumes
                    .get(&s.id)
                    .ok_or_else(|| Error::MissingArtifact(format!("{VOLUMES}: {}", s.id)))?;
                assemble_feature_vector(&field.shape_index, &c, vol, &cfg.schema(field.len()))
            })?;
            let matrix = FeatureMatrix::from_vectors(
                subjects.iter().map(|s| s.id.clone()).collect(),
                &vectors,
                subjects.iter().map(|s| s.label).collect(),
            )?;
            run.write(FEATURES, &matrix.to_csv())?;
            run.record(name, &cj, &inputs, &[FEATURES.into()])?;
        }
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct TemplateLog {
    subjects: Vec<String>,
    iterations: usize,
    converged: bool,
    alignments: Vec<qcspharm_core::template::SubjectAlignment>,
}

fn load_coeffs(run: &RunDir, subjects: &[SubjectEntry]) -> Result<Vec<SpharmCoefficients>> {
    per_subject(subjects, |s| SpharmCoefficients::from_json(&run.read(&coeffs(&s.id))?))
}

pub fn load_features(run: &RunDir, path: Option<&Path>) -> Result<FeatureMatrix> {
    let text = match path {
        Some(p) => std::fs::read_to_string(p).map_err(|_| Error::MissingArtifact(p.display().to_string()))?,
        None => run.read(FEATURES)?,
    };
    FeatureMatrix::from_csv(&text)
}
