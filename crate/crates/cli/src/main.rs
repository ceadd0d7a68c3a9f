use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use qcspharm_core::cohort::{generate_cohort, write_cohort, CohortSpec};
use qcspharm_core::pipeline::{
    evaluate, export_significance_map, matrix_schema_tag, repetition_selection, sweep_csv, sweep_pcut,
    train_model, compare_methods, Method, PipelineConfig,
};
use qcspharm_core::svm::{predict, SvmModel};
use qcspharm_core::{Error, Result};
use serde::Serialize;

mod run;
mod stages;

use run::{RunDir, CONFIG};
use stages::{load_features, run_stage, Stage};

#[derive(Parser)]
#[command(name = "qcspharm", version, about = "Genus-0 surface shape classification pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Run directory holding every artifact.
    #[arg(long, default_value = "run")]
    run: PathBuf,
    /// TOML or JSON configuration; replaces the run's stored configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long = "degree")]
    degree: Option<usize>,
    #[arg(long)]
    template_size: Option<usize>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long = "C")]
    c: Option<f64>,
    #[arg(long)]
    p_cut: Option<f64>,
    /// Comma-separated thresholds.
    #[arg(long, value_delimiter = ',')]
    p_cut_grid: Option<Vec<f64>>,
    #[arg(long)]
    repetitions: Option<usize>,
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    train_per_class: Option<usize>,
    #[arg(long)]
    test_per_class: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Smooth, simplify and refine the input meshes.
    Improve {
        #[command(flatten)]
        common: Common,
        /// Directory with manifest.json (from synth) or subjects.csv (id,label,file).
        #[arg(long)]
        cohort: PathBuf,
    },
    /// Map each improved mesh onto the unit sphere.
    Parametrize(StageArgs),
    /// Fit spherical-harmonic coefficients.
    Fit(StageArgs),
    /// Build the mean template from the positive class.
    Template(StageArgs),
    /// Align every subject to the template and resample on the template sphere.
    Register(StageArgs),
    /// Per-vertex distortion and volume change against the template.
    Distort(StageArgs),
    /// Assemble the feature matrix.
    Features(StageArgs),
    /// Select features on every subject and train a classifier.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Label the rows of a feature matrix with a trained model.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        features: Option<PathBuf>,
    },
    /// Repeated random-split evaluation.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        features: Option<PathBuf>,
        /// Also compare every method at its best grid threshold.
        #[arg(long)]
        compare: bool,
    },
    /// Evaluation at every threshold of the grid over shared splits.
    SweepPcut {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        features: Option<PathBuf>,
    },
    /// Generate a labeled synthetic cohort.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// JSON cohort description; flags below override it.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        subjects_per_class: Option<usize>,
        #[arg(long)]
        amplitude: Option<f64>,
        #[arg(long)]
        volume_scale: Option<f64>,
        #[arg(long)]
        noise: Option<f64>,
        #[arg(long)]
        vertices: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Size of the template sphere the ground-truth masks index.
        #[arg(long, default_value_t = 8000)]
        template_size: usize,
    },
    /// Color the template by the features selected in one repetition.
    ExportMap {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        repetition: Option<usize>,
    },
}

#[derive(Args)]
struct StageArgs {
    #[command(flatten)]
    common: Common,
}

fn parse_config(path: &Path) -> Result<PipelineConfig> {
    let text = std::fs::read_to_string(path).map_err(|_| Error::MissingArtifact(path.display().to_string()))?;
    if path.extension().and_then(|e| e.to_str()) == Some("toml") {
        toml::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
    } else {
        serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
    }
}

/// Stored run configuration, replaced by `--config`, then flag overrides.
fn resolve_config(common: &Common, run: &RunDir) -> Result<PipelineConfig> {
    let mut cfg = match &common.config {
        Some(p) => parse_config(p)?,
        None if run.exists(CONFIG) => parse_config(&run.path(CONFIG))?,
        None => PipelineConfig::default(),
    };
    if let Some(v) = common.degree {
        cfg.degree = v;
    }
    if let Some(v) = common.template_size {
        cfg.template_size = v;
    }
    if let Some(v) = common.eta {
        cfg.eta = v;
    }
    if let Some(v) = common.c {
        cfg.c = v;
    }
    if let Some(v) = common.p_cut {
        cfg.p_cut = v;
    }
    if let Some(v) = &common.p_cut_grid {
        cfg.p_cut_grid = v.clone();
    }
    if let Some(v) = common.repetitions {
        cfg.repetitions = v;
    }
    if let Some(v) = &common.method {
        cfg.method = v.parse::<Method>()?;
    }
    if let Some(v) = common.seed {
        cfg.seed = v;
    }
    if let Some(v) = common.train_per_class {
        cfg.splits.train_per_class = v;
    }
    if let Some(v) = common.test_per_class {
        cfg.splits.test_per_class = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn open(common: &Common) -> Result<(RunDir, PipelineConfig)> {
    let run = RunDir::create(&common.run)?;
    let cfg = resolve_config(common, &run)?;
    Ok((run, cfg))
}

fn write_out(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, text)?;
    Ok(())
}

/// Writes to stdout, ignoring a closed pipe.
fn emit(text: &str) {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(text.as_bytes());
    if !text.ends_with('\n') {
        let _ = out.write_all(b"\n");
    }
}

#[derive(Serialize)]
struct PredictionRow {
    id: String,
    label: i32,
    decision: f64,
}

fn stage(s: Stage, args: &StageArgs) -> Result<()> {
    let (run, cfg) = open(&args.common)?;
    run_stage(s, &run, &cfg, None)
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Improve { common, cohort } => {
            let (run, cfg) = open(&common)?;
            run_stage(Stage::Improve, &run, &cfg, Some(&cohort))
        }
        Command::Parametrize(a) => stage(Stage::Parametrize, &a),
        Command::Fit(a) => stage(Stage::Fit, &a),
        Command::Template(a) => stage(Stage::Template, &a),
        Command::Register(a) => stage(Stage::Register, &a),
        Command::Distort(a) => stage(Stage::Distort, &a),
        Command::Features(a) => stage(Stage::Features, &a),
        Command::Train { common, features, out } => {
            let (run, cfg) = open(&common)?;
            let matrix = load_features(&run, features.as_deref())?;
            let model = train_model(&matrix, &cfg)?;
            let out = out.unwrap_or_else(|| run.path("model.json"));
            write_out(&out, &model.to_json()?)?;
            println!("{}", out.display());
            Ok(())
        }
        Command::Predict { common, model, features } => {
            let (run, _) = open(&common)?;
            let model_path = model.unwrap_or_else(|| run.path("model.json"));
            let text = std::fs::read_to_string(&model_path)
                .map_err(|_| Error::MissingArtifact(model_path.display().to_string()))?;
            let model = SvmModel::from_json(&text)?;
            let matrix = load_features(&run, features.as_deref())?;
            let tag = matrix_schema_tag(&matrix);
            if !model.schema_tag.is_empty() && model.schema_tag != tag {
                return Err(Error::SchemaMismatch(format!(
                    "model trained on {}, features are {tag}",
                    model.schema_tag
                )));
            }
            let rows = (0..matrix.nrows())
                .map(|i| {
                    let p = predict(&model, matrix.row(i))?;
                    Ok(PredictionRow {
                        id: matrix.ids[i].clone(),
                        label: p.label,
                        decision: p.decision,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let json = serde_json::to_string_pretty(&rows)?;
            run.write("predictions.json", &json)?;
            emit(&json);
            Ok(())
        }
        Command::Evaluate { common, features, compare } => {
            let (run, cfg) = open(&common)?;
            let matrix = load_features(&run, features.as_deref())?;
            let report = evaluate(&matrix, &cfg)?;
            run.write("report.json", &report.to_json()?)?;
            println!(
                "{} p_cut={} R={} sensitivity={:.4} specificity={:.4} accuracy={:.4} selected(shape/spharm/volume)={:.1}/{:.1}/{:.1}",
                report.method.name(),
                report.p_cut,
                report.repetitions.len(),
                report.mean_sensitivity,
                report.mean_specificity,
                report.mean_accuracy,
                report.mean_counts.shape,
                report.mean_counts.spharm,
                report.mean_counts.volume
            );
            if compare {
                let table = compare_methods(&matrix, &cfg)?;
                run.write("comparison.json", &serde_json::to_string_pretty(&table)?)?;
                print!("{}", table.to_table());
            }
            Ok(())
        }
        Command::SweepPcut { common, features } => {
            let (run, cfg) = open(&common)?;
            let matrix = load_features(&run, features.as_deref())?;
            let (rows, reports) = sweep_pcut(&matrix, &cfg)?;
            let csv = sweep_csv(&rows);
            run.write("sweep.csv", &csv)?;
            run.write("sweep_reports.json", &serde_json::to_string_pretty(&reports)?)?;
            emit(&csv);
            Ok(())
        }
        Command::Synth {
            out,
            spec,
            subjects_per_class,
            amplitude,
            volume_scale,
            noise,
            vertices,
            seed,
            template_size,
        } => {
            let mut s = match spec {
                Some(p) => {
                    let text =
                        std::fs::read_to_string(&p).map_err(|_| Error::MissingArtifact(p.display().to_string()))?;
                    serde_json::from_str(&text)?
                }
                None => CohortSpec::default(),
            };
            if let Some(v) = subjects_per_class {
                s.subjects_per_class = v;
            }
            if let Some(v) = amplitude {
                s.effect.amplitude = v;
            }
            if let Some(v) = volume_scale {
                s.effect.volume_scale_negative = v;
            }
            if let Some(v) = noise {
                s.noise.std = v;
            }
            if let Some(v) = vertices {
                s.vertices = v;
            }
            if let Some(v) = seed {
                s.seed = v;
            }
            let cohort = generate_cohort(&s)?;
            write_cohort(&cohort, &out, template_size)?;
            println!("{}", out.join("manifest.json").display());
            Ok(())
        }
        Command::ExportMap { common, features, repetition } => {
            let (run, cfg) = open(&common)?;
            let matrix = load_features(&run, features.as_deref())?;
            let rep = repetition.unwrap_or(cfg.map_repetition);
            let selection = repetition_selection(&matrix, cfg.method, &cfg, rep, cfg.p_cut)?;
            let template = qcspharm_core::mesh::read_mesh(&run.read(stages::TEMPLATE_MESH)?, qcspharm_core::mesh::MeshFormat::Off)?;
            let (ply, sidecar) = export_significance_map(&selection, &matrix.columns, &template)?;
            run.write("significance.ply", &ply)?;
            run.write("significance.json", &serde_json::to_string_pretty(&sidecar)?)?;
            println!("{}", run.path("significance.ply").display());
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct ErrorReport {
    error: &'static str,
    message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    subject: Option<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let subject = match &e {
                Error::Subject { id, .. } => Some(id.clone()),
                _ => None,
            };
            let report = ErrorReport {
                error: e.kind(),
                message: e.to_string(),
                subject,
            };
            eprintln!("{}", serde_json::to_string(&report).unwrap_or_else(|_| e.to_string()));
            ExitCode::FAILURE
        }
    }
}
