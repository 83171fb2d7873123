//! Run configuration and the stages behind the command-line tool.
//!
//! A run directory looks like
//!
//! ```text
//! <output>/config.resolved.json
//! <output>/render_report.json
//! <output>/dataset/manifest.json
//! <output>/dataset/<split>/<class>/<event_id>[_rN].png
//! <output>/ffn/{model.bin, history.csv, history.png}
//! <output>/eval/{predictions.csv, confusion.csv, confusion_normalized.csv,
//!                confusion.png, confusion_normalized.png, metrics.json}
//! ```
//!
//! One global seed feeds every stage through [`PipelineConfig::stage_seed`].

use std::collections::HashMap;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{
    self, BalanceTargets, DatasetError, DatasetManifest, ManifestEntry, Split, SplitPlan, WriteOptions,
};
use crate::event::Event;
use crate::features::{featurize, FeatureSpec};
use crate::ingest::{self, EventFileHeader, EventWriter, IngestError, IngestReport};
use crate::metrics::{self, ConfusionMatrix, MetricsError, Prediction};
use crate::nn::{self, LabeledData, MlpConfig, MlpModel, NnError};
use crate::plot;
use crate::render::{encode_png, render_event, CanvasSpec, RenderError};
use crate::rng::derive_seed;
use crate::selection::{
    label_dimuon_event, select_complex_event, MassWindow, MassWindows, SelectionConfig, SelectionError,
};
use crate::synth::{self, GeneratorSpec, SynthError};

pub const RESOLVED_CONFIG_FILE: &str = "config.resolved.json";
pub const DATASET_DIR: &str = "dataset";
pub const FFN_DIR: &str = "ffn";
pub const EVAL_DIR: &str = "eval";
pub const MODEL_FILE: &str = "model.bin";
pub const HISTORY_FILE: &str = "history.csv";
pub const PREDICTIONS_FILE: &str = "predictions.csv";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("cannot parse {path}: {message}")]
    ConfigParse { path: PathBuf, message: String },
    #[error("{0}")]
    Validation(String),
    #[error("{what} not found at {path}; run the `{stage}` stage first")]
    Missing {
        what: &'static str,
        path: PathBuf,
        stage: &'static str,
    },
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl From<SelectionError> for PipelineError {
    fn from(e: SelectionError) -> Self {
        PipelineError::Config(e.to_string())
    }
}

impl PipelineError {
    /// 2 for configuration problems, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) | PipelineError::ConfigParse { .. } => 2,
            PipelineError::Synth(SynthError::Spec(_) | SynthError::Windows(_)) => 2,
            PipelineError::Nn(NnError::Config(_)) => 2,
            PipelineError::Dataset(DatasetError::Plan(_) | DatasetError::Targets { .. }) => 2,
            _ => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, bytes).map_err(io_err(path))
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("plain data serializes");
    s.push('\n');
    s
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Two-muon events labelled by invariant-mass window, energy-sized circles.
    #[default]
    Dimuon,
    /// Preselected lepton + jets + MET events with truth labels, pT-sized circles.
    Complex,
}

impl Mode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "dimuon" => Some(Mode::Dimuon),
            "complex" => Some(Mode::Complex),
            _ => None,
        }
    }
}

fn default_canvas(mode: Mode) -> CanvasSpec {
    match mode {
        Mode::Dimuon => CanvasSpec::dimuon(),
        Mode::Complex => CanvasSpec::default(),
    }
}

fn default_features(mode: Mode) -> FeatureSpec {
    match mode {
        Mode::Dimuon => FeatureSpec {
            log_momentum: true,
            ..FeatureSpec::dimuon()
        },
        Mode::Complex => FeatureSpec::complex(6),
    }
}

/// Everything a run needs. Optional sections fall back to the mode's
/// defaults; [`PipelineConfig::resolve`] fills them in.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub input: PathBuf,
    #[serde(default)]
    pub output: PathBuf,
    #[serde(default)]
    pub canvas: Option<CanvasSpec>,
    #[serde(default)]
    pub selection: SelectionConfig,
    #[serde(default)]
    pub windows: Option<Vec<MassWindow>>,
    /// Class names for complex mode; defaults to the event file header.
    #[serde(default)]
    pub class_names: Option<Vec<String>>,
    #[serde(default)]
    pub split: SplitPlan,
    #[serde(default)]
    pub balance: BalanceTargets,
    #[serde(default)]
    pub features: Option<FeatureSpec>,
    #[serde(default)]
    pub mlp: MlpConfig,
    /// Class treated as signal by the efficiency summary.
    #[serde(default)]
    pub signal_class: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            mode: Mode::Dimuon,
            seed: 0,
            input: PathBuf::new(),
            output: PathBuf::new(),
            canvas: None,
            selection: SelectionConfig::default(),
            windows: None,
            class_names: None,
            split: SplitPlan::default(),
            balance: BalanceTargets::default(),
            features: None,
            mlp: MlpConfig::default(),
            signal_class: 0,
        }
    }
}

impl PipelineConfig {
    pub fn new(mode: Mode, input: impl Into<PathBuf>, output: impl Into<PathBuf>) -> Self {
        PipelineConfig {
            mode,
            input: input.into(),
            output: output.into(),
            ..Default::default()
        }
    }

    /// Parses TOML, or JSON when the text starts with `{`.
    pub fn parse(text: &str) -> Result<Self, String> {
        if text.trim_start().starts_with('{') {
            serde_json::from_str(text).map_err(|e| e.to_string())
        } else {
            toml::from_str(text).map_err(|e| e.to_string())
        }
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(|e| PipelineError::ConfigParse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Self::parse(&text).map_err(|message| PipelineError::ConfigParse {
            path: path.to_path_buf(),
            message,
        })
    }

    pub fn to_toml(&self) -> Result<String, PipelineError> {
        toml::to_string(self).map_err(|e| PipelineError::Config(e.to_string()))
    }

    pub fn stage_seed(&self, stage: &str) -> u64 {
        derive_seed(self.seed, stage)
    }

    /// Fills the optional sections from the mode and validates everything
    /// that does not depend on the input file.
    pub fn resolve(&self) -> Result<PipelineConfig, PipelineError> {
        let mut r = self.clone();
        if r.output.as_os_str().is_empty() {
            return Err(PipelineError::Config("output directory not set".into()));
        }
        let canvas = r.canvas.get_or_insert_with(|| default_canvas(self.mode));
        canvas.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        r.selection.validate()?;
        let windows = r
            .windows
            .get_or_insert_with(|| MassWindows::dimuon_resonances().windows().to_vec());
        MassWindows::new(windows.clone())?;
        r.features.get_or_insert_with(|| default_features(self.mode));
        r.split.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        Ok(r)
    }

    /// The canvas in effect: the configured one or the mode's default.
    pub fn canvas(&self) -> CanvasSpec {
        self.canvas.clone().unwrap_or_else(|| default_canvas(self.mode))
    }

    pub fn feature_spec(&self) -> FeatureSpec {
        self.features.clone().unwrap_or_else(|| default_features(self.mode))
    }

    pub fn mass_windows(&self) -> Result<MassWindows, PipelineError> {
        match &self.windows {
            Some(w) => Ok(MassWindows::new(w.clone())?),
            None => Ok(MassWindows::dimuon_resonances()),
        }
    }

    pub fn dataset_dir(&self) -> PathBuf {
        self.output.join(DATASET_DIR)
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.dataset_dir().join(dataset::MANIFEST_FILE)
    }

    pub fn model_path(&self) -> PathBuf {
        self.output.join(FFN_DIR).join(MODEL_FILE)
    }

    pub fn eval_dir(&self) -> PathBuf {
        self.output.join(EVAL_DIR)
    }
}

/// Counts from reading, labelling and selecting the input events.
#[derive(Clone, Debug, Default, Serialize)]
pub struct PrepareStats {
    pub ingest: IngestReport,
    /// Dimuon events with fewer than two muons, or complex events without a
    /// truth label.
    pub unlabelled: usize,
    /// Complex events failing the preselection.
    pub failed_selection: usize,
    pub kept: usize,
    pub class_counts: Vec<usize>,
}

/// Labelled (and, for complex mode, preselected) events.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub class_names: Vec<String>,
    pub events: Vec<Event>,
    pub stats: PrepareStats,
}

impl Prepared {
    pub fn by_id(&self) -> HashMap<&str, &Event> {
        self.events.iter().map(|e| (e.id.as_str(), e)).collect()
    }

    pub fn labels(&self) -> Vec<(String, u32)> {
        self.events
            .iter()
            .map(|e| (e.id.clone(), e.truth_class.expect("prepared events are labelled")))
            .collect()
    }
}

/// Reads the input file and labels every event. The config must be resolved.
pub fn prepare(cfg: &PipelineConfig) -> Result<Prepared, PipelineError> {
    let file = fs::File::open(&cfg.input).map_err(io_err(&cfg.input))?;
    let (header, raw, report) = ingest::read_all(file)?;
    prepare_events(cfg, &header, raw, report)
}

pub fn prepare_events(
    cfg: &PipelineConfig,
    header: &EventFileHeader,
    raw: Vec<Event>,
    report: IngestReport,
) -> Result<Prepared, PipelineError> {
    let mut stats = PrepareStats {
        ingest: report,
        ..Default::default()
    };
    let mut events = Vec::with_capacity(raw.len());
    let class_names = match cfg.mode {
        Mode::Dimuon => {
            let windows = cfg.mass_windows()?;
            for mut e in raw {
                match label_dimuon_event(&e, &windows) {
                    Some(c) => {
                        e.truth_class = Some(c);
                        events.push(e);
                    }
                    None => stats.unlabelled += 1,
                }
            }
            windows.class_names()
        }
        Mode::Complex => {
            let names = cfg.class_names.clone().unwrap_or_else(|| header.class_names.clone());
            if names.is_empty() {
                return Err(PipelineError::Config(
                    "complex mode needs class names from the config or the event file header".into(),
                ));
            }
            for e in raw {
                match e.truth_class {
                    Some(c) if (c as usize) < names.len() => match select_complex_event(&e, &cfg.selection) {
                        Some(s) => events.push(s.into_event()),
                        None => stats.failed_selection += 1,
                    },
                    Some(c) => {
                        return Err(PipelineError::Validation(format!(
                            "event {:?} has class {c} but only {} class names are known",
                            e.id,
                            names.len()
                        )))
                    }
                    None => stats.unlabelled += 1,
                }
            }
            names
        }
    };
    stats.kept = events.len();
    stats.class_counts = vec![0; class_names.len()];
    for e in &events {
        stats.class_counts[e.truth_class.expect("labelled above") as usize] += 1;
    }
    Ok(Prepared {
        class_names,
        events,
        stats,
    })
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Render workers; 0 lets the thread pool decide.
    pub threads: usize,
    /// Write the manifest without images.
    pub dry_run: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct RenderSummary {
    pub prepare: PrepareStats,
    pub counts: dataset::SplitCounts,
    pub images_written: usize,
    /// Objects skipped by the renderer because their size variable was not
    /// positive, summed over written images.
    pub skipped_objects: usize,
    pub manifest_path: PathBuf,
}

/// Splits, balances and renders the labelled events into the run directory.
pub fn run_render(cfg: &PipelineConfig, options: &RunOptions) -> Result<RenderSummary, PipelineError> {
    let cfg = cfg.resolve()?;
    fs::create_dir_all(&cfg.output).map_err(io_err(&cfg.output))?;
    write_file(&cfg.output.join(RESOLVED_CONFIG_FILE), to_json(&cfg))?;
    let prepared = prepare(&cfg)?;
    let mut manifest = dataset::split(
        &prepared.labels(),
        &prepared.class_names,
        &cfg.split,
        cfg.stage_seed("split"),
    )?;
    manifest.balance(&cfg.balance)?;

    let by_id = prepared.by_id();
    let canvas = cfg.canvas();
    let skipped = AtomicUsize::new(0);
    let renderer = |entry: &ManifestEntry| -> Result<Vec<u8>, String> {
        let event = by_id
            .get(entry.event_id.as_str())
            .ok_or_else(|| format!("unknown event {:?}", entry.event_id))?;
        let outcome = render_event(event, &canvas);
        skipped.fetch_add(outcome.skipped, Ordering::Relaxed);
        encode_png(&outcome.image).map_err(|e| e.to_string())
    };
    let written = dataset::write_dataset(
        &manifest,
        &renderer,
        &cfg.dataset_dir(),
        &WriteOptions {
            dry_run: options.dry_run,
            threads: options.threads,
        },
    )?;
    let summary = RenderSummary {
        prepare: prepared.stats,
        counts: written.counts,
        images_written: written.images_written,
        skipped_objects: skipped.into_inner(),
        manifest_path: written.manifest_path,
    };
    write_file(&cfg.output.join("render_report.json"), to_json(&summary))?;
    Ok(summary)
}

fn load_manifest(cfg: &PipelineConfig) -> Result<DatasetManifest, PipelineError> {
    let path = cfg.manifest_path();
    if !path.exists() {
        return Err(PipelineError::Missing {
            what: "dataset manifest",
            path,
            stage: "render",
        });
    }
    Ok(DatasetManifest::load(&path)?)
}

/// Feature rows for one split, replicas included.
pub fn split_features(
    manifest: &DatasetManifest,
    split: Split,
    events: &HashMap<&str, &Event>,
    spec: &FeatureSpec,
) -> Result<(LabeledData, Vec<String>, usize), PipelineError> {
    let entries = manifest.entries(split);
    let width = spec.width();
    let mut flat = Vec::with_capacity(entries.len() * width);
    let mut labels = Vec::with_capacity(entries.len());
    let mut ids = Vec::with_capacity(entries.len());
    let mut truncated = 0;
    for entry in entries {
        let event = events.get(entry.event_id.as_str()).ok_or_else(|| {
            PipelineError::Validation(format!(
                "manifest entry {:?} does not match any selected input event",
                entry.event_id
            ))
        })?;
        let f = featurize(event, spec);
        truncated += f.truncated_jets;
        flat.extend(f.values);
        labels.push(entry.class_id as usize);
        ids.push(entry.event_id.clone());
    }
    let x = Array2::from_shape_vec((entries.len(), width), flat).expect("rows have the layout width");
    Ok((LabeledData::new(x, labels)?, ids, truncated))
}

#[derive(Clone, Debug, Serialize)]
pub struct TrainSummary {
    pub epochs_run: usize,
    pub final_record: Option<nn::EpochRecord>,
    pub train_rows: usize,
    pub val_rows: usize,
    /// Jets beyond `max_jets`, dropped from the feature vectors.
    pub truncated_jets: usize,
    pub model_path: PathBuf,
}

/// The network settings used for training: layout width, class count and a
/// seed derived from the global one.
pub fn training_config(cfg: &PipelineConfig, n_classes: usize) -> MlpConfig {
    MlpConfig {
        input_dim: cfg.feature_spec().width(),
        n_classes,
        seed: cfg.stage_seed("train"),
        ..cfg.mlp.clone()
    }
}

/// Trains the feedforward baseline on the manifest's train split.
pub fn run_train(cfg: &PipelineConfig) -> Result<TrainSummary, PipelineError> {
    let cfg = cfg.resolve()?;
    let manifest = load_manifest(&cfg)?;
    let prepared = prepare(&cfg)?;
    let events = prepared.by_id();
    let spec = cfg.feature_spec();
    let (train, _, t1) = split_features(&manifest, Split::Train, &events, &spec)?;
    let (val, _, t2) = split_features(&manifest, Split::Val, &events, &spec)?;
    let mlp = training_config(&cfg, manifest.class_names.len());
    let (model, history) = nn::train(&train, &val, &mlp)?;

    let dir = cfg.output.join(FFN_DIR);
    let model_path = dir.join(MODEL_FILE);
    write_file(&model_path, model.to_bytes())?;
    write_file(&dir.join(HISTORY_FILE), nn::history_csv(&history))?;
    write_file(&dir.join("history.png"), encode_png(&plot::history_plot(&history))?)?;
    Ok(TrainSummary {
        epochs_run: history.len(),
        final_record: history.last().cloned(),
        train_rows: train.len(),
        val_rows: val.len(),
        truncated_jets: t1 + t2,
        model_path,
    })
}

/// Confusion matrices and the efficiency summary for one predictions file.
#[derive(Clone, Debug, Serialize)]
pub struct ReportSummary {
    pub class_names: Vec<String>,
    pub samples: usize,
    pub accuracy: f64,
    pub confusion: Vec<Vec<u64>>,
    pub per_class_recall: Vec<f64>,
    pub signal_class: usize,
    /// Absent when either the signal or the pooled background is empty.
    pub efficiency: Option<f64>,
    pub efficiency_definition: &'static str,
}

/// Scores predictions against the labels of the manifest and writes
/// `confusion.csv`, `confusion_normalized.csv`, both heat maps and
/// `metrics.json` into `out_dir`.
pub fn report(
    predictions: &[Prediction],
    manifest: &DatasetManifest,
    signal_class: usize,
    out_dir: &Path,
) -> Result<ReportSummary, PipelineError> {
    let labels = manifest.labels();
    let n = manifest.class_names.len();
    let mut truth = Vec::with_capacity(predictions.len());
    let mut preds = Vec::with_capacity(predictions.len());
    for p in predictions {
        let class = labels
            .get(p.event_id.as_str())
            .ok_or_else(|| PipelineError::Validation(format!("prediction for unknown event {:?}", p.event_id)))?;
        truth.push(*class as usize);
        preds.push(p.predicted);
    }
    let m = metrics::confusion(&preds, &truth, n)?;
    write_confusion(&m, &manifest.class_names, out_dir)?;
    let efficiency = match metrics::signal_background_efficiency(&m, signal_class) {
        Ok(e) => Some(e),
        Err(MetricsError::EmptyGroup(_) | MetricsError::TooFewClasses) => None,
        Err(e) => return Err(e.into()),
    };
    let summary = ReportSummary {
        class_names: manifest.class_names.clone(),
        samples: predictions.len(),
        accuracy: m.accuracy(),
        confusion: m.rows(),
        per_class_recall: metrics::normalize_rows(&m)
            .iter()
            .enumerate()
            .map(|(i, r)| r[i])
            .collect(),
        signal_class,
        efficiency,
        efficiency_definition: metrics::EFFICIENCY_DEFINITION,
    };
    write_file(&out_dir.join("metrics.json"), to_json(&summary))?;
    Ok(summary)
}

fn write_confusion(m: &ConfusionMatrix, names: &[String], dir: &Path) -> Result<(), PipelineError> {
    write_file(&dir.join("confusion.csv"), m.to_csv(names))?;
    write_file(&dir.join("confusion_normalized.csv"), metrics::normalized_csv(m, names))?;
    let cell = 32;
    write_file(&dir.join("confusion.png"), encode_png(&metrics::raw_heatmap(m, cell))?)?;
    write_file(
        &dir.join("confusion_normalized.png"),
        encode_png(&metrics::heatmap(&metrics::normalize_rows(m), cell))?,
    )?;
    Ok(())
}

/// Runs the trained model on the test split, writes `predictions.csv` and the
/// report files into `<output>/eval`.
pub fn run_evaluate(cfg: &PipelineConfig) -> Result<ReportSummary, PipelineError> {
    let cfg = cfg.resolve()?;
    let manifest = load_manifest(&cfg)?;
    let model_path = cfg.model_path();
    if !model_path.exists() {
        return Err(PipelineError::Missing {
            what: "trained model",
            path: model_path,
            stage: "train-ffn",
        });
    }
    let model = MlpModel::read_from(std::io::BufReader::new(
        fs::File::open(&model_path).map_err(io_err(&model_path))?,
    ))?;
    let prepared = prepare(&cfg)?;
    let (test, ids, _) = split_features(&manifest, Split::Test, &prepared.by_id(), &cfg.feature_spec())?;
    let probs = model.predict_proba(test.x.view())?;
    let predictions: Vec<Prediction> = ids
        .into_iter()
        .zip(probs.rows())
        .map(|(event_id, row)| {
            let probabilities = row.to_vec();
            let predicted = nn::argmax_rows(row.insert_axis(ndarray::Axis(0)))[0];
            Prediction {
                event_id,
                predicted,
                probabilities,
            }
        })
        .collect();
    let dir = cfg.eval_dir();
    write_file(
        &dir.join(PREDICTIONS_FILE),
        metrics::write_predictions(&predictions, manifest.class_names.len()),
    )?;
    report(&predictions, &manifest, cfg.signal_class, &dir)
}

/// Reads a predictions file (from this tool or any other classifier) and a
/// manifest, then writes the report files into `out_dir`.
pub fn run_report(
    predictions_path: &Path,
    manifest_path: &Path,
    signal_class: usize,
    out_dir: &Path,
) -> Result<ReportSummary, PipelineError> {
    let file = fs::File::open(predictions_path).map_err(io_err(predictions_path))?;
    let predictions = metrics::read_predictions(file)?;
    let manifest = DatasetManifest::load(manifest_path)?;
    report(&predictions, &manifest, signal_class, out_dir)
}

/// Synthetic events for `mode`, `per_class` of each class, with a header
/// naming the classes.
pub fn generate(
    mode: Mode,
    spec: &GeneratorSpec,
    per_class: usize,
) -> Result<(EventFileHeader, Vec<Event>), PipelineError> {
    let (names, events) = match mode {
        Mode::Dimuon => (
            MassWindows::new(spec.dimuon.windows.clone())?.class_names(),
            synth::dimuon_sample(spec, per_class)?,
        ),
        Mode::Complex => (spec.complex_class_names(), synth::complex_sample(spec, per_class)?),
    };
    let source = format!(
        "synthetic {} sample, seed {}",
        match mode {
            Mode::Dimuon => "dimuon",
            Mode::Complex => "complex",
        },
        spec.seed
    );
    Ok((EventFileHeader::new(source, names), events))
}

pub fn write_events(path: &Path, header: &EventFileHeader, events: &[Event]) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = EventWriter::new(BufWriter::new(file), header).map_err(io_err(path))?;
    for e in events {
        w.write(e).map_err(io_err(path))?;
    }
    use std::io::Write as _;
    w.into_inner().flush().map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip_with_sections() {
        let text = r#"
mode = "complex"
seed = 9
input = "events.ndjson"
output = "run"
signal_class = 0

[selection]
btag_threshold = 0.8

[split.counts]
val = 5
test = 5

[balance]
explicit = [10, 10, 10]

[mlp]
hidden_layers = 2
hidden_units = 16
epochs = 3
"#;
        let cfg = PipelineConfig::parse(text).unwrap();
        assert_eq!(cfg.mode, Mode::Complex);
        assert_eq!(cfg.split, SplitPlan::Counts { val: 5, test: 5 });
        assert_eq!(cfg.balance, BalanceTargets::Explicit(vec![10, 10, 10]));
        assert_eq!(cfg.mlp.hidden_units, 16);
        assert_eq!(cfg.selection.btag_threshold, 0.8);
        let again = PipelineConfig::parse(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn unknown_key_is_a_parse_error() {
        assert!(PipelineConfig::parse("mode = \"dimuon\"\ncolour = 3\n").is_err());
        assert!(PipelineConfig::parse("[mlp]\nunits = 3\n").is_err());
    }

    #[test]
    fn resolve_fills_mode_defaults() {
        let r = PipelineConfig::new(Mode::Dimuon, "in", "out").resolve().unwrap();
        assert_eq!(r.canvas, Some(CanvasSpec::dimuon()));
        assert!(r.features.as_ref().unwrap().log_momentum);
        let r = PipelineConfig::new(Mode::Complex, "in", "out").resolve().unwrap();
        assert_eq!(r.canvas, Some(CanvasSpec::default()));
        assert_eq!(r.features, Some(FeatureSpec::complex(6)));
    }

    #[test]
    fn invalid_sections_are_config_errors() {
        let mut cfg = PipelineConfig::new(Mode::Dimuon, "in", "out");
        cfg.windows = Some(vec![
            MassWindow::new(1, "a", 1.0, 3.0),
            MassWindow::new(2, "b", 2.0, 4.0),
        ]);
        assert_eq!(cfg.resolve().unwrap_err().exit_code(), 2);
        let mut cfg = PipelineConfig::new(Mode::Dimuon, "in", "out");
        cfg.split = SplitPlan::Ratios {
            train: 0.5,
            val: 0.1,
            test: 0.1,
        };
        assert_eq!(cfg.resolve().unwrap_err().exit_code(), 2);
        assert_eq!(
            PipelineConfig::new(Mode::Dimuon, "in", "")
                .resolve()
                .unwrap_err()
                .exit_code(),
            2
        );
    }

    #[test]
    fn stage_seeds_differ() {
        let cfg = PipelineConfig::default();
        assert_ne!(cfg.stage_seed("split"), cfg.stage_seed("train"));
    }
}
