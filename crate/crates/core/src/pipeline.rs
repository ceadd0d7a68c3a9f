//! End-to-end processing of a cohort in memory and the repeated random-split
//! evaluation protocol.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distortion::{curvatures, distortion_field, volume_distortion, DistortionField, ShapeIndexWeights};
use crate::error::{Error, Result};
use crate::features::{
    assemble_feature_vector, bagged_ttest, column_block, restrict, Block, BlockCounts,
    FeatureMatrix, FeatureSchema, SelectionResult, NEGATIVE, POSITIVE,
};
use crate::mesh::{laplacian_smooth, refine, simplify, write_colored_ply, TriangleMesh};
use crate::sphere_param::{parametrize_sphere_traced, ParamOptions, SphericalParam};
use crate::spharm::{fit_coefficients, SpharmCoefficients};
use crate::svm::{fit_classifier, fit_classifier_weighted, predict, SvmModel};
use crate::template::{
    build_mean_surface, build_template_sphere, icosphere_template, register_aligned, AlignOptions, Aligner,
    MeanOptions, MeanTemplate, RegisteredSurface, SubjectAlignment, TemplateSphere,
};

/// Which feature blocks a classifier sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    QcSpharm,
    Qc,
    Volume,
    Spharm,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::QcSpharm, Method::Qc, Method::Spharm, Method::Volume];

    pub fn blocks(&self) -> &'static [Block] {
        match self {
            Method::QcSpharm => &[Block::Shape, Block::Spharm, Block::Volume],
            Method::Qc => &[Block::Shape],
            Method::Volume => &[Block::Volume],
            Method::Spharm => &[Block::Spharm],
        }
    }

    /// The volume baseline uses its single column without selection.
    pub fn uses_selection(&self) -> bool {
        !matches!(self, Method::Volume)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Method::QcSpharm => "qc-spharm",
            Method::Qc => "qc",
            Method::Volume => "volume",
            Method::Spharm => "spharm",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImproveConfig {
    pub smooth_iterations: usize,
    pub smooth_step: f64,
    /// Simplification target; meshes already at or below it are left alone.
    pub simplify_target: usize,
    pub refine: bool,
}

impl Default for ImproveConfig {
    fn default() -> Self {
        Self {
            smooth_iterations: 10,
            smooth_step: 0.5,
            simplify_target: 2000,
            refine: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TemplateKind {
    Fibonacci,
    Icosphere,
}

/// How the configured kernel width relates to the number of selected columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EtaScaling {
    /// Use `eta` as given.
    None,
    /// Use `eta / |Ω|`, keeping kernel values comparable across selection sizes.
    PerFeature,
    /// Give every feature block present in Ω the same share of the squared
    /// distance: column weight `1 / (B |Ω_b|)` for `B` nonempty blocks.
    /// Identical to `PerFeature` when Ω lies in one block.
    PerBlock,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub train_per_class: usize,
    pub test_per_class: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    #[serde(rename = "L")]
    pub degree: usize,
    #[serde(rename = "N")]
    pub template_size: usize,
    pub template_kind: TemplateKind,
    /// Used when `template_kind` is icosphere.
    pub icosphere_level: u32,
    pub weights: ShapeIndexWeights,
    pub eta: f64,
    pub eta_scaling: EtaScaling,
    #[serde(rename = "C")]
    pub c: f64,
    pub p_cut: f64,
    pub p_cut_grid: Vec<f64>,
    pub splits: SplitConfig,
    pub repetitions: usize,
    pub method: Method,
    pub seed: u64,
    pub improve: ImproveConfig,
    pub param: ParamOptions,
    pub align: AlignOptions,
    pub mean_iterations: usize,
    pub mean_tolerance: f64,
    /// Repetition whose selection is exported as the significance map.
    pub map_repetition: usize,
}

/// `n` log-spaced values from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect()
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            degree: 30,
            template_size: 8000,
            template_kind: TemplateKind::Fibonacci,
            icosphere_level: 5,
            weights: ShapeIndexWeights::default(),
            eta: 1.0,
            eta_scaling: EtaScaling::PerBlock,
            c: 1.0,
            p_cut: 0.001,
            p_cut_grid: log_grid(1e-4, 0.5, 10),
            splits: SplitConfig {
                train_per_class: 15,
                test_per_class: 5,
            },
            repetitions: 100,
            method: Method::QcSpharm,
            seed: 0,
            improve: ImproveConfig::default(),
            param: ParamOptions::default(),
            align: AlignOptions::default(),
            mean_iterations: 20,
            mean_tolerance: 1e-6,
            map_repetition: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        self.weights.validate()?;
        if !(self.eta > 0.0) || !(self.c > 0.0) {
            return bad(format!("eta {} and C {} must be positive", self.eta, self.c));
        }
        for p in std::iter::once(&self.p_cut).chain(&self.p_cut_grid) {
            if !(*p > 0.0 && *p < 1.0) {
                return bad(format!("p_cut {p} outside (0, 1)"));
            }
        }
        if self.splits.train_per_class < 3 || self.splits.test_per_class < 1 {
            return bad("splits need ≥ 3 training and ≥ 1 test subject per class".into());
        }
        if self.repetitions == 0 {
            return bad("repetitions must be positive".into());
        }
        Ok(())
    }

    pub fn mean_options(&self) -> MeanOptions {
        MeanOptions {
            iterations: self.mean_iterations,
            tolerance: self.mean_tolerance,
            align: self.align,
        }
    }

    pub fn template_sphere(&self) -> Result<TemplateSphere> {
        match self.template_kind {
            TemplateKind::Fibonacci => build_template_sphere(self.template_size),
            TemplateKind::Icosphere => icosphere_template(self.icosphere_level),
        }
    }

    pub fn schema(&self, template_vertices: usize) -> FeatureSchema {
        FeatureSchema::new(template_vertices, self.degree)
    }

    pub fn effective_eta(&self, selected: usize) -> f64 {
        match self.eta_scaling {
            EtaScaling::None => self.eta,
            EtaScaling::PerFeature => self.eta / selected.max(1) as f64,
            EtaScaling::PerBlock => self.eta,
        }
    }

    /// Trains on `omega` with the configured kernel scaling.
    pub fn fit(&self, matrix: &FeatureMatrix, omega: &[usize], schema_tag: &str) -> Result<SvmModel> {
        match self.eta_scaling {
            EtaScaling::PerBlock => {
                let blocks: Vec<Option<Block>> = omega.iter().map(|&j| matrix.block_of(j)).collect();
                let mut sizes: BTreeMap<Option<Block>, usize> = BTreeMap::new();
                for b in &blocks {
                    *sizes.entry(*b).or_default() += 1;
                }
                let nb = sizes.len() as f64;
                let weights: Vec<f64> = blocks.iter().map(|b| 1.0 / (nb * sizes[b] as f64)).collect();
                fit_classifier_weighted(matrix, omega, &weights, self.eta, self.c, schema_tag)
            }
            _ => fit_classifier(matrix, omega, self.effective_eta(omega.len()), self.c, schema_tag),
        }
    }
}

/// Smoothing, simplification and refinement in that order.
pub fn improve_mesh(mesh: &TriangleMesh, cfg: &ImproveConfig) -> Result<TriangleMesh> {
    let mut m = if cfg.smooth_iterations > 0 {
        laplacian_smooth(mesh, cfg.smooth_iterations, cfg.smooth_step)?
    } else {
        mesh.clone()
    };
    if cfg.simplify_target >= 4 && cfg.simplify_target < m.vertex_count() {
        m = simplify(&m, cfg.simplify_target)?;
    }
    if cfg.refine {
        m = refine(&m);
    }
    Ok(m)
}

/// Per-subject output of the first stages.
#[derive(Debug, Clone)]
pub struct SubjectFit {
    pub id: String,
    pub label: i32,
    pub improved: TriangleMesh,
    pub param: SphericalParam,
    pub coefficients: SpharmCoefficients,
    pub residual_rms: f64,
}

pub fn fit_subject(id: &str, label: i32, mesh: &TriangleMesh, cfg: &PipelineConfig) -> Result<SubjectFit> {
    let wrap = |e: Error| e.for_subject(id);
    let improved = improve_mesh(mesh, &cfg.improve).map_err(wrap)?;
    let param = parametrize_sphere_traced(&improved, &cfg.param).map_err(wrap)?.param;
    let fit = fit_coefficients(&improved, &param, cfg.degree).map_err(wrap)?;
    Ok(SubjectFit {
        id: id.to_string(),
        label,
        improved,
        param,
        coefficients: fit.coefficients,
        residual_rms: fit.residual_rms,
    })
}

/// Mean template from the positive-class subjects only.
pub fn build_template(
    coefficients: &[SpharmCoefficients],
    labels: &[i32],
    sphere: &TemplateSphere,
    cfg: &PipelineConfig,
) -> Result<MeanTemplate> {
    if coefficients.len() != labels.len() {
        return Err(Error::LengthMismatch(coefficients.len(), labels.len()));
    }
    let nc: Vec<SpharmCoefficients> = coefficients
        .iter()
        .zip(labels)
        .filter(|(_, l)| **l == POSITIVE)
        .map(|(c, _)| c.clone())
        .collect();
    if nc.is_empty() {
        return Err(Error::TooFewSubjects("no positive-class subject for the template".into()));
    }
    build_mean_surface(&nc, sphere, &cfg.mean_options())
}

/// Aligns every subject to the template mean.
pub fn align_subjects(
    ids: &[String],
    coefficients: &[SpharmCoefficients],
    mean: &SpharmCoefficients,
    cfg: &PipelineConfig,
) -> Result<Vec<(SpharmCoefficients, SubjectAlignment)>> {
    let aligner = Aligner::new(cfg.degree, cfg.align)?;
    ids.par_iter()
        .zip(coefficients)
        .map(|(id, c)| {
            let a = aligner.align(c, mean).map_err(|e| e.for_subject(id.clone()))?;
            let log = SubjectAlignment {
                param_rotation: rows(&a.param_rotation),
                object_rotation: rows(&a.object_rotation),
                translation: [a.translation.x, a.translation.y, a.translation.z],
                rmsd: a.rmsd,
            };
            Ok((a.coefficients, log))
        })
        .collect()
}

fn rows(m: &nalgebra::Matrix3<f64>) -> [[f64; 3]; 3] {
    [0, 1, 2].map(|i| [m[(i, 0)], m[(i, 1)], m[(i, 2)]])
}

/// Distortion field and volume change of one registered subject.
pub fn subject_distortion(
    template_mesh: &TriangleMesh,
    template_curv: &crate::distortion::Curvatures,
    registered: &RegisteredSurface,
    weights: &ShapeIndexWeights,
) -> Result<(DistortionField, f64)> {
    let wrap = |e: Error| e.for_subject(registered.id.clone());
    let field = distortion_field(template_mesh, template_curv, &registered.mesh, weights).map_err(wrap)?;
    let vol = volume_distortion(template_mesh, &registered.mesh).map_err(wrap)?;
    Ok((field, vol))
}

/// Everything the in-memory pipeline produces for a cohort.
#[derive(Debug, Clone)]
pub struct ProcessedCohort {
    pub sphere: TemplateSphere,
    pub template: MeanTemplate,
    pub fits: Vec<SubjectFit>,
    pub aligned: Vec<SpharmCoefficients>,
    pub fields: Vec<DistortionField>,
    pub volumes: Vec<f64>,
    pub matrix: FeatureMatrix,
}

/// Runs every stage from raw meshes to the feature matrix. Subjects are
/// `(id, label, mesh)`, kept in the given order.
pub fn process_cohort(subjects: &[(String, i32, TriangleMesh)], cfg: &PipelineConfig) -> Result<ProcessedCohort> {
    cfg.validate()?;
    let fits = subjects
        .par_iter()
        .map(|(id, label, mesh)| fit_subject(id, *label, mesh, cfg))
        .collect::<Result<Vec<_>>>()?;
    let sphere = cfg.template_sphere()?;
    let coefficients: Vec<SpharmCoefficients> = fits.iter().map(|f| f.coefficients.clone()).collect();
    let labels: Vec<i32> = fits.iter().map(|f| f.label).collect();
    let ids: Vec<String> = fits.iter().map(|f| f.id.clone()).collect();
    let template = build_template(&coefficients, &labels, &sphere, cfg)?;
    let aligned: Vec<SpharmCoefficients> = align_subjects(&ids, &coefficients, &template.mean, cfg)?
        .into_iter()
        .map(|(c, _)| c)
        .collect();
    let tcurv = curvatures(&template.mesh)?;
    let schema = cfg.schema(sphere.len());
    let per_subject = fits
        .par_iter()
        .zip(&aligned)
        .map(|(f, c)| {
            let reg = register_aligned(&f.id, c, &sphere)?;
            let (field, vol) = subject_distortion(&template.mesh, &tcurv, &reg, &cfg.weights)?;
            let fv = assemble_feature_vector(&field.shape_index, c, vol, &schema)?;
            Ok((field, vol, fv))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut fields = Vec::new();
    let mut volumes = Vec::new();
    let mut vectors = Vec::new();
    for (f, v, fv) in per_subject {
        fields.push(f);
        volumes.push(v);
        vectors.push(fv);
    }
    let matrix = FeatureMatrix::from_vectors(
        fits.iter().map(|f| f.id.clone()).collect(),
        &vectors,
        fits.iter().map(|f| f.label).collect(),
    )?;
    Ok(ProcessedCohort {
        sphere,
        template,
        fits,
        aligned,
        fields,
        volumes,
        matrix,
    })
}

/// Training and test row indices of one repetition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Stratified random split; repetition `r` draws from stream `r` of the
/// master seed, so splits are shared by every method and threshold.
pub fn stratified_split(labels: &[i32], split: &SplitConfig, seed: u64, repetition: usize) -> Result<Split> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(repetition as u64);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in [POSITIVE, NEGATIVE] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        let need = split.train_per_class + split.test_per_class;
        if idx.len() < need {
            return Err(Error::TooFewSubjects(format!(
                "class {class:+} has {} subjects, split needs {need}",
                idx.len()
            )));
        }
        idx.shuffle(&mut rng);
        train.extend_from_slice(&idx[..split.train_per_class]);
        test.extend_from_slice(&idx[split.train_per_class..need]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(Split { train, test })
}

/// Test-set scores of one repetition at one threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepetitionResult {
    pub repetition: usize,
    pub sensitivity: f64,
    pub specificity: f64,
    pub accuracy: f64,
    pub counts: BlockCounts,
    /// Selected columns of the full feature matrix.
    pub omega: Vec<usize>,
    /// No column passed the threshold; the training majority label was predicted.
    pub empty_selection: bool,
    /// Matrix rows scored in this repetition.
    pub test_rows: Vec<usize>,
}

/// Disease-class recall, control-class recall, overall accuracy.
pub fn score(truth: &[i32], predicted: &[i32]) -> (f64, f64, f64) {
    let mut tp = 0;
    let mut p = 0;
    let mut tn = 0;
    let mut n = 0;
    for (t, y) in truth.iter().zip(predicted) {
        if *t == NEGATIVE {
            p += 1;
            if *y == NEGATIVE {
                tp += 1;
            }
        } else {
            n += 1;
            if *y == POSITIVE {
                tn += 1;
            }
        }
    }
    let frac = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    (frac(tp, p), frac(tn, n), frac(tp + tn, p + n))
}

/// Column statistics of one training set: bagged p-values over the
/// method's columns (index into the full matrix).
struct TrainingStats {
    columns: Vec<usize>,
    p: Vec<f64>,
}

fn training_stats(matrix: &FeatureMatrix, train: &FeatureMatrix, method: Method) -> Result<TrainingStats> {
    let columns = matrix.block_columns(method.blocks());
    let p = if method.uses_selection() {
        bagged_ttest(&restrict(train, &columns)?)?
    } else {
        vec![0.0; columns.len()]
    };
    Ok(TrainingStats { columns, p })
}

/// Columns passing `p_cut` and, unless none do, the classifier trained on
/// them with training-row statistics only.
fn fit_on_split(
    train: &FeatureMatrix,
    stats: &TrainingStats,
    p_cut: f64,
    cfg: &PipelineConfig,
) -> Result<(Vec<usize>, Option<SvmModel>)> {
    let omega: Vec<usize> = stats
        .columns
        .iter()
        .zip(&stats.p)
        .filter(|(_, p)| **p <= p_cut)
        .map(|(j, _)| *j)
        .collect();
    if omega.is_empty() {
        return Ok((omega, None));
    }
    let model = cfg.fit(train, &omega, &matrix_schema_tag(train))?;
    Ok((omega, Some(model)))
}

fn run_threshold(
    matrix: &FeatureMatrix,
    train: &FeatureMatrix,
    split: &Split,
    stats: &TrainingStats,
    p_cut: f64,
    repetition: usize,
    cfg: &PipelineConfig,
) -> Result<RepetitionResult> {
    let (omega, model) = fit_on_split(train, stats, p_cut, cfg)?;
    let truth: Vec<i32> = split.test.iter().map(|&i| matrix.labels[i]).collect();
    let predicted = match &model {
        None => {
            let pos = train.labels.iter().filter(|l| **l == POSITIVE).count();
            let majority = if 2 * pos >= train.nrows() { POSITIVE } else { NEGATIVE };
            vec![majority; truth.len()]
        }
        Some(model) => split
            .test
            .iter()
            .map(|&i| predict(model, matrix.row(i)).map(|p| p.label))
            .collect::<Result<Vec<_>>>()?,
    };
    let (sensitivity, specificity, accuracy) = score(&truth, &predicted);
    Ok(RepetitionResult {
        repetition,
        sensitivity,
        specificity,
        accuracy,
        counts: BlockCounts::of(&matrix.columns, &omega),
        omega,
        empty_selection: model.is_none(),
        test_rows: split.test.clone(),
    })
}

/// Everything one repetition derives from its training rows.
#[derive(Debug, Clone)]
pub struct RepetitionFit {
    pub split: Split,
    /// Bagged p-values over the full matrix; columns outside the method are 1.
    pub selection: SelectionResult,
    pub model: Option<SvmModel>,
}

/// Split, selection and classifier of repetition `repetition` at `p_cut`.
pub fn fit_repetition(
    matrix: &FeatureMatrix,
    method: Method,
    cfg: &PipelineConfig,
    repetition: usize,
    p_cut: f64,
) -> Result<RepetitionFit> {
    let split = stratified_split(&matrix.labels, &cfg.splits, cfg.seed, repetition)?;
    let train = matrix.subset_rows(&split.train)?;
    let stats = training_stats(matrix, &train, method)?;
    let (omega, model) = fit_on_split(&train, &stats, p_cut, cfg)?;
    let mut p = vec![1.0; matrix.ncols()];
    for (j, pj) in stats.columns.iter().zip(&stats.p) {
        p[*j] = *pj;
    }
    Ok(RepetitionFit {
        split,
        selection: SelectionResult { p, omega, p_cut },
        model,
    })
}

/// One repetition at every threshold in `p_cuts` (selection statistics are
/// computed once and shared).
pub fn run_repetition(
    matrix: &FeatureMatrix,
    method: Method,
    p_cuts: &[f64],
    repetition: usize,
    cfg: &PipelineConfig,
) -> Result<Vec<RepetitionResult>> {
    let split = stratified_split(&matrix.labels, &cfg.splits, cfg.seed, repetition)?;
    let train = matrix.subset_rows(&split.train)?;
    let stats = training_stats(matrix, &train, method)?;
    p_cuts
        .iter()
        .map(|&p| run_threshold(matrix, &train, &split, &stats, p, repetition, cfg))
        .collect()
}

/// Mean of per-repetition block counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanCounts {
    pub shape: f64,
    pub spharm: f64,
    pub volume: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub method: Method,
    pub p_cut: f64,
    pub repetitions: Vec<RepetitionResult>,
    pub mean_sensitivity: f64,
    pub mean_specificity: f64,
    pub mean_accuracy: f64,
    pub mean_counts: MeanCounts,
}

impl EvaluationReport {
    fn from_results(method: Method, p_cut: f64, repetitions: Vec<RepetitionResult>) -> Self {
        let r = repetitions.len() as f64;
        let mean = |f: &dyn Fn(&RepetitionResult) -> f64| repetitions.iter().map(f).sum::<f64>() / r;
        let mean_counts = MeanCounts {
            shape: mean(&|x| x.counts.shape as f64),
            spharm: mean(&|x| x.counts.spharm as f64),
            volume: mean(&|x| x.counts.volume as f64),
            total: mean(&|x| x.counts.total() as f64),
        };
        Self {
            method,
            p_cut,
            mean_sensitivity: mean(&|x| x.sensitivity),
            mean_specificity: mean(&|x| x.specificity),
            mean_accuracy: mean(&|x| x.accuracy),
            mean_counts,
            repetitions,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Reports for every threshold of `p_cuts` over the same splits.
pub fn evaluate_grid(matrix: &FeatureMatrix, method: Method, p_cuts: &[f64], cfg: &PipelineConfig) -> Result<Vec<EvaluationReport>> {
    cfg.validate()?;
    if p_cuts.is_empty() {
        return Err(Error::InvalidParameter("empty p_cut grid".into()));
    }
    let per_rep = (0..cfg.repetitions)
        .into_par_iter()
        .map(|r| run_repetition(matrix, method, p_cuts, r, cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok(p_cuts
        .iter()
        .enumerate()
        .map(|(k, &p)| {
            let reps = per_rep.iter().map(|v| v[k].clone()).collect();
            EvaluationReport::from_results(method, p, reps)
        })
        .collect())
}

/// `cfg.repetitions` random splits at `cfg.p_cut` with `cfg.method`.
pub fn evaluate(matrix: &FeatureMatrix, cfg: &PipelineConfig) -> Result<EvaluationReport> {
    Ok(evaluate_grid(matrix, cfg.method, &[cfg.p_cut], cfg)?.remove(0))
}

/// One row of a threshold sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub p_cut: f64,
    pub mean_sensitivity: f64,
    pub mean_specificity: f64,
    pub mean_accuracy: f64,
    pub mean_selected: f64,
}

pub fn sweep_pcut(matrix: &FeatureMatrix, cfg: &PipelineConfig) -> Result<(Vec<SweepRow>, Vec<EvaluationReport>)> {
    let reports = evaluate_grid(matrix, cfg.method, &cfg.p_cut_grid, cfg)?;
    let rows = reports
        .iter()
        .map(|r| SweepRow {
            p_cut: r.p_cut,
            mean_sensitivity: r.mean_sensitivity,
            mean_specificity: r.mean_specificity,
            mean_accuracy: r.mean_accuracy,
            mean_selected: r.mean_counts.total,
        })
        .collect();
    Ok((rows, reports))
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("p_cut,mean_sensitivity,mean_specificity,mean_accuracy,mean_selected\n");
    for r in rows {
        out.push_str(&format!(
            "{:?},{:?},{:?},{:?},{:?}\n",
            r.p_cut, r.mean_sensitivity, r.mean_specificity, r.mean_accuracy, r.mean_selected
        ));
    }
    out
}

/// Mean accuracy per method over shared splits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodComparison {
    pub rows: Vec<ComparisonRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub method: Method,
    pub p_cut: f64,
    pub mean_sensitivity: f64,
    pub mean_specificity: f64,
    pub mean_accuracy: f64,
}

impl MethodComparison {
    pub fn accuracy(&self, m: Method) -> Option<f64> {
        self.rows.iter().find(|r| r.method == m).map(|r| r.mean_accuracy)
    }

    pub fn to_table(&self) -> String {
        let mut out = format!("{:<10} {:>8} {:>8} {:>8} {:>8}\n", "method", "p_cut", "sens", "spec", "acc");
        for r in &self.rows {
            out.push_str(&format!(
                "{:<10} {:>8.4} {:>8.3} {:>8.3} {:>8.3}\n",
                r.method.name(),
                r.p_cut,
                r.mean_sensitivity,
                r.mean_specificity,
                r.mean_accuracy
            ));
        }
        out
    }
}

/// Every method at its best grid threshold (the volume baseline has none).
pub fn compare_methods(matrix: &FeatureMatrix, cfg: &PipelineConfig) -> Result<MethodComparison> {
    let mut rows = Vec::new();
    for m in Method::ALL {
        let grid: &[f64] = if m.uses_selection() { &cfg.p_cut_grid } else { &[0.5] };
        let reports = evaluate_grid(matrix, m, grid, cfg)?;
        let best = reports
            .into_iter()
            .reduce(|a, b| if b.mean_accuracy > a.mean_accuracy { b } else { a })
            .expect("nonempty grid");
        rows.push(ComparisonRow {
            method: m,
            p_cut: best.p_cut,
            mean_sensitivity: best.mean_sensitivity,
            mean_specificity: best.mean_specificity,
            mean_accuracy: best.mean_accuracy,
        });
    }
    Ok(MethodComparison { rows })
}

/// Selection on the training rows of one repetition over the columns of
/// `method`, reported against the full matrix.
pub fn repetition_selection(
    matrix: &FeatureMatrix,
    method: Method,
    cfg: &PipelineConfig,
    repetition: usize,
    p_cut: f64,
) -> Result<SelectionResult> {
    if !(p_cut > 0.0 && p_cut < 1.0) {
        return Err(Error::InvalidParameter(format!("p_cut {p_cut} outside (0, 1)")));
    }
    let split = stratified_split(&matrix.labels, &cfg.splits, cfg.seed, repetition)?;
    let train = matrix.subset_rows(&split.train)?;
    let stats = training_stats(matrix, &train, method)?;
    let mut p = vec![1.0; matrix.ncols()];
    for (j, pj) in stats.columns.iter().zip(&stats.p) {
        p[*j] = *pj;
    }
    let omega = stats
        .columns
        .iter()
        .zip(&stats.p)
        .filter(|(_, p)| **p <= p_cut)
        .map(|(j, _)| *j)
        .collect();
    Ok(SelectionResult { p, omega, p_cut })
}

/// Schema tag of a feature matrix from its column names.
pub fn matrix_schema_tag(matrix: &FeatureMatrix) -> String {
    let all: Vec<usize> = (0..matrix.ncols()).collect();
    let c = BlockCounts::of(&matrix.columns, &all);
    FeatureSchema {
        shape: c.shape,
        spharm: c.spharm,
        volume: c.volume,
    }
    .tag()
}

/// Selection over every row at `cfg.p_cut` followed by training on every row.
pub fn train_model(matrix: &FeatureMatrix, cfg: &PipelineConfig) -> Result<SvmModel> {
    let stats = training_stats(matrix, matrix, cfg.method)?;
    let omega: Vec<usize> = stats
        .columns
        .iter()
        .zip(&stats.p)
        .filter(|(_, p)| **p <= cfg.p_cut)
        .map(|(j, _)| *j)
        .collect();
    if omega.is_empty() {
        return Err(Error::DegenerateData(format!("no feature passed p_cut {}", cfg.p_cut)));
    }
    cfg.fit(matrix, &omega, &matrix_schema_tag(matrix))
}

pub const SELECTED_COLOR: [u8; 3] = [220, 30, 30];
pub const OTHER_COLOR: [u8; 3] = [160, 160, 160];

/// Selected non-vertex features, by block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapSidecar {
    pub p_cut: f64,
    pub counts: BlockCounts,
    pub vertices: Vec<usize>,
    pub other: BTreeMap<String, Vec<String>>,
}

/// Colored PLY of the template (selected shape-index vertices red, others
/// gray) plus a sidecar listing the remaining selected features.
pub fn export_significance_map(
    selection: &SelectionResult,
    columns: &[String],
    template: &TriangleMesh,
) -> Result<(String, MapSidecar)> {
    let n = template.vertex_count();
    let mut colors = vec![OTHER_COLOR; n];
    let mut vertices = Vec::new();
    let mut other: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for &j in &selection.omega {
        let name = columns.get(j).ok_or(Error::IndexOutOfRange {
            index: j,
            len: columns.len(),
        })?;
        match column_block(name) {
            Some(Block::Shape) => {
                let v: usize = name[1..].parse().expect("shape column name");
                if v >= n {
                    return Err(Error::IndexOutOfRange { index: v, len: n });
                }
                colors[v] = SELECTED_COLOR;
                vertices.push(v);
            }
            Some(b) => {
                let key = match b {
                    Block::Spharm => "spharm",
                    _ => "volume",
                };
                other.entry(key.to_string()).or_default().push(name.clone());
            }
            None => {}
        }
    }
    let ply = write_colored_ply(template, &colors)?;
    Ok((
        ply,
        MapSidecar {
            p_cut: selection.p_cut,
            counts: BlockCounts::of(columns, &selection.omega),
            vertices,
            other,
        },
    ))
}

/// Fraction of `truth` covered by `selected`.
pub fn recall(selected: &[usize], truth: &[usize]) -> f64 {
    if truth.is_empty() {
        return 1.0;
    }
    let set: std::collections::HashSet<_> = selected.iter().collect();
    truth.iter().filter(|t| set.contains(t)).count() as f64 / truth.len() as f64
}
