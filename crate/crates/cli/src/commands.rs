use std::fmt;
use std::path::Path;

use serde_json::json;

use ntd_core::datastore::{split_dataset, AnnotationStore, DatasetManifest};
use ntd_core::eval::{compare_baseline, evaluate, oracle_annotate, train_category, EvalReport};
use ntd_core::fourier::make_mask;
use ntd_core::neural::{load_model, Activation, ModelRegistry, TrainConfig};
use ntd_core::overlay::{render_overlay, OverlayStyle};
use ntd_core::pipeline::{analyze_response, average_intensity, enhance, PipelineConfig};
use ntd_core::raster::{load_image, save_image, GrayImage};
use ntd_core::synth::{generate_corpus, SceneSpec};
use ntd_service::ServiceConfig;

use crate::{Cli, Command, ConfigArg, Format, TrainParams};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Io(String),
    Core(ntd_core::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Io(_) => 2,
            CliError::Core(e) if e.is_io() => 2,
            CliError::Core(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(s) | CliError::Io(s) => f.write_str(s),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<ntd_core::Error> for CliError {
    fn from(e: ntd_core::Error) -> Self {
        CliError::Core(e)
    }
}

type CliResult<T = ()> = Result<T, CliError>;

fn emit(value: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(value).expect("json value"));
}

fn create_dir(dir: &Path) -> CliResult {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))
}

fn load_config(arg: &ConfigArg) -> CliResult<PipelineConfig> {
    let cfg = match &arg.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn train_config(p: &TrainParams) -> CliResult<TrainConfig> {
    let cfg = TrainConfig {
        epochs: p.epochs,
        learning_rate: p.learning_rate,
        seed: p.train_seed,
        hidden_dim: p.hidden,
        activation: Activation::Sigmoid,
        ..TrainConfig::default()
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Scales to [0, 1] by the maximum so the map is viewable as an 8-bit image.
fn normalized(img: &GrayImage) -> GrayImage {
    let max = img.max();
    if max > 0.0 {
        img.map(|v| v / max)
    } else {
        img.clone()
    }
}

pub fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::Gen(a) => {
            let spec = match &a.spec {
                Some(path) => {
                    let text = std::fs::read_to_string(path)
                        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
                    let spec: SceneSpec = serde_json::from_str(&text)
                        .map_err(|e| CliError::Core(ntd_core::Error::Invalid {
                            what: "scene spec",
                            reason: e.to_string(),
                        }))?;
                    if spec.category != a.category {
                        return Err(CliError::Usage(format!(
                            "--category {} disagrees with the spec file category {}",
                            a.category, spec.category
                        )));
                    }
                    spec
                }
                None => SceneSpec::preset(a.category),
            };
            let manifest = generate_corpus(&spec, a.count, a.seed, &a.out)?;
            emit(&json!({
                "corpus_id": manifest.corpus_id,
                "category": manifest.category,
                "frames": manifest.frames.len(),
                "manifest": a.out.join("manifest.json"),
            }));
        }
        Command::Masks(a) => {
            let cfg = load_config(&a.config)?;
            create_dir(&a.out)?;
            let mut out = serde_json::Map::new();
            for (name, spec) in [("gaussian", cfg.gaussian_mask_spec()), ("disk", cfg.disk_mask_spec())] {
                let mask = make_mask(&spec)?;
                let path = a.out.join(format!("{name}.png"));
                save_image(&normalized(&mask), &path)?;
                out.insert(name.into(), json!({ "spec": spec, "sum": mask.sum(), "path": path }));
            }
            emit(&out.into());
        }
        Command::Enhance(a) => {
            let cfg = load_config(&a.config)?;
            let img = load_image(&a.frame)?;
            let resp = enhance(&img, &cfg)?;
            create_dir(&a.out)?;
            let path = a.out.join("response.png");
            save_image(&normalized(resp.image()), &path)?;
            let (w, h) = resp.dims();
            emit(&json!({
                "frame": a.frame,
                "width": w,
                "height": h,
                "average_intensity": average_intensity(&resp),
                "max_response": resp.max(),
                "config_hash": cfg.config_hash(),
                "response_png": path,
            }));
        }
        Command::Split(a) => {
            let manifest = DatasetManifest::load(&a.manifest)?;
            let split = split_dataset(&manifest, a.fraction, a.seed)?;
            split.save(&a.manifest)?;
            let train = split.frames_in(ntd_core::Split::Train).count();
            emit(&json!({
                "manifest": a.manifest,
                "train": train,
                "test": split.frames.len() - train,
            }));
        }
        Command::Annotate(a) => {
            let cfg = ServiceConfig {
                manifest: a.manifest,
                annotations: a.annotations,
                models: a.models,
                pipeline: load_config(&a.config)?,
                train: train_config(&a.train)?,
                ui_dir: a.ui_dir,
            };
            let addr = std::net::SocketAddr::new(a.host, a.port);
            let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Io(e.to_string()))?;
            rt.block_on(ntd_service::serve(cfg, addr, |bound| {
                emit(&json!({ "listening": format!("http://{bound}") }));
            }))
            .map_err(|e| match e.downcast::<ntd_core::Error>() {
                Ok(core) => CliError::Core(*core),
                Err(other) => CliError::Io(other.to_string()),
            })?;
        }
        Command::Train(a) => {
            let cfg = load_config(&a.config)?;
            let train_cfg = train_config(&a.train)?;
            let manifest = DatasetManifest::load(&a.manifest)?;
            check_category(&manifest, a.category.as_str())?;
            let annotations = AnnotationStore::open(&a.annotations).load(&manifest)?;
            let (records, outcome) = train_category(&manifest, &annotations, &cfg, &train_cfg)?;
            let path = ModelRegistry::open(&a.models).save(&outcome.model)?;
            emit(&json!({
                "category": manifest.category,
                "model": path,
                "n_records": records.len(),
                "initial_loss": outcome.initial_loss,
                "final_loss": outcome.final_loss,
                "final_rmse": outcome.final_rmse,
                "final_learning_rate": outcome.final_learning_rate,
            }));
        }
        Command::Count(a) => {
            let cfg = load_config(&a.config)?;
            let model = load_model(&a.model)?;
            let img = load_image(&a.frame)?;
            let analysis = analyze_response(enhance(&img, &cfg)?, &cfg, &model)?;
            if let Some(path) = &a.overlay {
                let style = OverlayStyle {
                    marker_radius: (cfg.max_track_radius.round() as usize).max(1),
                    ..OverlayStyle::default()
                };
                save_image(&render_overlay(&img, &analysis.report, &style), path)?;
            }
            emit(&json!({
                "threshold": analysis.threshold,
                "count": analysis.report.count,
                "centroids": analysis.report.centroids(),
            }));
        }
        Command::Evaluate(a) => {
            let cfg = load_config(&a.config)?;
            let train_cfg = train_config(&a.train)?;
            let store = AnnotationStore::open(&a.annotations);
            let mut report = EvalReport::default();
            for path in &a.manifest {
                let manifest = DatasetManifest::load(path)?;
                let annotations = store.load(&manifest)?;
                report.categories.push(evaluate(&manifest, &annotations, &cfg, &train_cfg, a.tol)?);
            }
            match a.format {
                Format::Json => print!("{}", with_newline(report.to_json())),
                Format::Table => print!("{}", with_newline(report.to_table())),
                Format::Csv => print!("{}", with_newline(report.to_csv())),
            }
        }
        Command::Compare(a) => {
            let cfg = load_config(&a.config)?;
            let train_cfg = train_config(&a.train)?;
            let manifest = DatasetManifest::load(&a.manifest)?;
            let annotations = AnnotationStore::open(&a.annotations).load(&manifest)?;
            let cmp = compare_baseline(&manifest, &annotations, &cfg, &train_cfg)?;
            match a.format {
                Format::Json => emit(&serde_json::to_value(&cmp).expect("comparison json")),
                Format::Table => print!("{}", with_newline(cmp.to_table())),
                Format::Csv => return Err(CliError::Usage("compare supports json and table".into())),
            }
        }
        Command::OracleAnnotate(a) => {
            let cfg = load_config(&a.config)?;
            let manifest = DatasetManifest::load(&a.manifest)?;
            let store = AnnotationStore::open(&a.annotations);
            let records = oracle_annotate(&manifest, &store, &cfg)?;
            emit(&json!({ "annotations": store.path(), "records": records }));
        }
    }
    Ok(())
}

fn with_newline(mut s: String) -> String {
    if !s.ends_with('\n') {
        s.push('\n');
    }
    s
}

fn check_category(manifest: &DatasetManifest, category: &str) -> CliResult {
    if manifest.category != category {
        return Err(CliError::Usage(format!(
            "--category {category} does not match the manifest category {}",
            manifest.category
        )));
    }
    Ok(())
}
