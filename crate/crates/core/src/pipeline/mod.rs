//! Per-dataset pipeline and batch runner.
//!
//! For one dataset: load → repair → z-score (train statistics) → period
//! detection → for each model: optional STL on the training segment, fit,
//! walk-forward one-step forecasts → forecast metrics on the test segment →
//! for each detector: fit on post-warm-up training residuals, apply to test
//! residuals, score against the expanded label windows.
//!
//! Nothing fitted ever sees the test segment; the LSTM additionally uses the
//! validation segment for early stopping.

mod report;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classical::{hw_fit, sarima_select_fit, HoltWintersModel, SarimaModel};
use crate::detect::{apply_detector, compute_residuals, fit_detector, DetectionOutput, DetectorMethod, DetectorParams};
use crate::error::{Error, Result};
use crate::lstm::{lstm_fit, LstmHyperparams, LstmSnapshot, TrainingLog};
use crate::metrics::{detection_metrics, forecast_metrics, DetectionMetrics, ForecastMetrics};
use crate::preprocess::{default_max_lag, detect_period, repair_missing, stl_decompose, zscore_fit, NormParams, RepairReport};
use crate::timeseries::{expand_labels, load_series, LabelMap, SplitView, Timestamp};

pub use report::{
    aggregate_rankings, detection_overview, write_batch_reports, write_dataset_outputs, DetectionOverviewRow,
    RankRow, RankShare, DETECTION_HEADER, RANKINGS_HEADER, SUMMARY_HEADER,
};

pub const ARTIFACT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    HoltWinters,
    Sarima,
    Lstm,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::HoltWinters, ModelKind::Sarima, ModelKind::Lstm];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::HoltWinters => "holt_winters",
            ModelKind::Sarima => "sarima",
            ModelKind::Lstm => "lstm",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase().replace('-', "_");
        ModelKind::ALL
            .into_iter()
            .find(|m| m.name() == s || (s == "hw" && *m == ModelKind::HoltWinters))
            .ok_or_else(|| Error::invalid("model", format!("unknown model '{s}'")))
    }
}

/// When to remove an STL seasonal component before forecasting.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StlMode {
    /// Only for the LSTM, and only when a period is detected.
    #[default]
    Auto,
    On,
    Off,
}

impl FromStr for StlMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "auto" => Ok(StlMode::Auto),
            "on" => Ok(StlMode::On),
            "off" => Ok(StlMode::Off),
            other => Err(Error::invalid("stl", format!("expected auto, on or off, got '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data_root: PathBuf,
    /// Combined anomaly-window JSON; without it every dataset is treated as
    /// anomaly-free.
    pub labels_path: Option<PathBuf>,
    pub output_root: PathBuf,
    pub models: Vec<ModelKind>,
    pub detectors: Vec<DetectorMethod>,
    pub train_frac: f64,
    pub val_frac: f64,
    pub stl_mode: StlMode,
    pub seed: u64,
    /// Worker threads for dataset-level parallelism; 0 uses every core.
    pub parallelism: usize,
    /// LSTM settings; `seed` is replaced by the per-dataset seed.
    pub lstm: LstmHyperparams,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data_root: PathBuf::from("data"),
            labels_path: None,
            output_root: PathBuf::from("results"),
            models: ModelKind::ALL.to_vec(),
            detectors: DetectorMethod::ALL.to_vec(),
            train_frac: 0.7,
            val_frac: 0.15,
            stl_mode: StlMode::Auto,
            seed: 0,
            parallelism: 0,
            lstm: LstmHyperparams::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.models.is_empty() {
            return Err(Error::invalid("models", "at least one model is required"));
        }
        if self.detectors.is_empty() {
            return Err(Error::invalid("detectors", "at least one detector is required"));
        }
        let mut models = self.models.clone();
        models.sort();
        models.dedup();
        let mut detectors = self.detectors.clone();
        detectors.sort();
        detectors.dedup();
        if models.len() != self.models.len() || detectors.len() != self.detectors.len() {
            return Err(Error::invalid("models/detectors", "duplicates are not allowed"));
        }
        // Same checks as the split itself, on a nominal length.
        SplitView::new(1000, self.train_frac, self.val_frac)?;
        self.lstm.validate()
    }
}

/// Seed for one dataset: the run seed XOR the 64-bit FNV-1a hash of its key,
/// so results do not depend on traversal order or thread count.
pub fn dataset_seed(seed: u64, key: &str) -> u64 {
    use std::hash::Hasher;
    let mut h = fnv::FnvHasher::default();
    h.write(key.as_bytes());
    seed ^ h.finish()
}

/// Path of `path` relative to `root` with `/` separators; the bare file
/// name when `path` is not under `root`.
pub fn dataset_key(root: &Path, path: &Path) -> String {
    let rel = match path.strip_prefix(root) {
        Ok(rel) if !rel.as_os_str().is_empty() => rel,
        _ => Path::new(path.file_name().unwrap_or_default()),
    };
    rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/")
}

/// Every `.csv` file under `root`, sorted by key.
pub fn discover_datasets(root: &Path) -> Result<Vec<PathBuf>> {
    if !root.is_dir() {
        return Err(Error::invalid("data_root", format!("{} is not a directory", root.display())));
    }
    let mut files = Vec::new();
    for entry in walkdir::WalkDir::new(root).follow_links(true) {
        let entry = entry.map_err(|e| Error::Format(format!("walking {}: {e}", root.display())))?;
        let path = entry.path();
        if entry.file_type().is_file() && path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
            files.push(path.to_path_buf());
        }
    }
    files.sort_by_key(|p| dataset_key(root, p));
    if files.is_empty() {
        return Err(Error::InsufficientData { required: 1, actual: 0 });
    }
    Ok(files)
}

/// Forecasting result of one model on one dataset.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelRun {
    pub dataset: String,
    pub model: ModelKind,
    pub forecast: ForecastMetrics,
    pub train_seconds: f64,
    pub predict_seconds: f64,
    /// LSTM epochs, or optimiser iterations for the classical models.
    pub epochs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordStatus {
    Ok,
    Degenerate,
}

/// One row per (dataset, model, detector).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluationRecord {
    pub dataset: String,
    pub model: ModelKind,
    pub detector: DetectorMethod,
    pub forecast: ForecastMetrics,
    pub detection: DetectionMetrics,
    pub train_seconds: f64,
    pub predict_seconds: f64,
    pub epochs: usize,
    pub status: RecordStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FailureRecord {
    pub dataset: String,
    pub model: Option<ModelKind>,
    pub detector: Option<DetectorMethod>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "state", rename_all = "snake_case")]
pub enum FittedModel {
    HoltWinters(HoltWintersModel),
    Sarima(SarimaModel),
    Lstm(LstmSnapshot),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeasonalAdjustment {
    pub period: usize,
    /// The last seasonal cycle of the training decomposition, repeated over
    /// validation and test.
    pub last_cycle: Vec<f64>,
}

/// Everything fitted for one model on one dataset; written as
/// `model_<model>.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub format_version: u32,
    pub dataset: String,
    pub model: ModelKind,
    pub seed: u64,
    pub split: SplitView,
    pub repair: RepairReport,
    pub normalization: NormParams,
    pub detected_period: Option<usize>,
    pub model_period: usize,
    pub seasonal_adjustment: Option<SeasonalAdjustment>,
    /// First index with a residual; earlier points are cold start.
    pub warmup: usize,
    pub fitted: FittedModel,
    pub detectors: Vec<DetectorParams>,
    pub training_log: Option<TrainingLog>,
}

/// Per-point outputs of one model, kept for the per-dataset files.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelOutput {
    pub model: ModelKind,
    /// Index of `predicted[0]` in the series.
    pub start: usize,
    /// Forecasts in original units.
    pub predicted: Vec<f64>,
    pub detections: Vec<(DetectorMethod, DetectionOutput)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetResult {
    pub key: String,
    pub timestamps: Vec<Timestamp>,
    /// Repaired values in original units.
    pub values: Vec<f64>,
    pub truth: Vec<bool>,
    pub split: SplitView,
    /// The label file has an entry for this dataset.
    pub labelled: bool,
    pub runs: Vec<ModelRun>,
    pub records: Vec<EvaluationRecord>,
    pub failures: Vec<FailureRecord>,
    pub artifacts: Vec<ModelArtifact>,
    pub outputs: Vec<ModelOutput>,
}

/// Inputs shared by every model of one dataset.
struct Prepared<'a> {
    key: &'a str,
    seed: u64,
    split: SplitView,
    repair: RepairReport,
    norm: NormParams,
    normalized: Vec<f64>,
    period: Option<usize>,
}

struct Forecast {
    /// One-step forecasts of the normalised series from `start` on.
    normalized: Vec<f64>,
    start: usize,
    model_period: usize,
    fitted: FittedModel,
    training_log: Option<TrainingLog>,
    epochs: usize,
}

/// The seasonal adjustment for `model`, with seasonal values for every
/// index: STL on the training segment, its last cycle repeated afterwards.
fn stl_adjustment(prep: &Prepared, model: ModelKind, mode: StlMode) -> Result<Option<(SeasonalAdjustment, Vec<f64>)>> {
    let wanted = match mode {
        StlMode::Off => false,
        StlMode::On => true,
        StlMode::Auto => model == ModelKind::Lstm,
    };
    let Some(m) = prep.period.filter(|_| wanted) else { return Ok(None) };
    let n_train = prep.split.train_end;
    if n_train < 2 * m {
        return Ok(None);
    }
    let mut seasonal = stl_decompose(&prep.normalized[..n_train], m)?.seasonal;
    let last_cycle = seasonal[n_train - m..].to_vec();
    seasonal.extend((0..prep.split.total - n_train).map(|j| last_cycle[j % m]));
    Ok(Some((SeasonalAdjustment { period: m, last_cycle }, seasonal)))
}

fn forecast_model(model: ModelKind, y: &[f64], prep: &Prepared, config: &RunConfig) -> Result<Forecast> {
    let n_train = prep.split.train_end;
    let train = &y[..n_train];
    let m = prep.period.unwrap_or(1);
    match model {
        ModelKind::HoltWinters => {
            let period = if m >= 2 && n_train >= 2 * m { m } else { 1 };
            let fit = hw_fit(train, period)?;
            let mut normalized = fit.in_sample.clone();
            normalized.extend(fit.model.predict_one_step(&y[n_train..]));
            Ok(Forecast {
                normalized,
                start: period,
                model_period: period,
                fitted: FittedModel::HoltWinters(fit.model),
                training_log: None,
                epochs: fit.iterations,
            })
        }
        ModelKind::Sarima => {
            let period = if m >= 2 && n_train >= 3 * m + 20 { m } else { 1 };
            let fit = sarima_select_fit(train, period)?;
            let start = fit.model.orders.differencing_lag();
            let mut normalized = fit.in_sample.clone();
            normalized.extend(fit.model.predict_one_step(&y[n_train..]));
            Ok(Forecast {
                normalized,
                start,
                model_period: period,
                fitted: FittedModel::Sarima(fit.model),
                training_log: None,
                epochs: fit.iterations,
            })
        }
        ModelKind::Lstm => {
            let hp = LstmHyperparams { seed: prep.seed, ..config.lstm.clone() };
            let (fitted, log) = lstm_fit(train, &y[prep.split.val()], &hp)?;
            let normalized = fitted.predict_one_step(y)?;
            Ok(Forecast {
                normalized,
                start: hp.window,
                model_period: m,
                epochs: log.epochs.len(),
                fitted: FittedModel::Lstm(fitted.to_snapshot()),
                training_log: Some(log),
            })
        }
    }
}

fn seconds(since: Instant) -> f64 {
    since.elapsed().as_secs_f64()
}

struct ModelEvaluation {
    run: ModelRun,
    records: Vec<EvaluationRecord>,
    failures: Vec<FailureRecord>,
    artifact: ModelArtifact,
    output: ModelOutput,
}

fn evaluate_model(
    model: ModelKind,
    prep: &Prepared,
    values: &[f64],
    truth: &[bool],
    config: &RunConfig,
) -> Result<ModelEvaluation> {
    let split = prep.split;
    let started = Instant::now();
    let (adjustment, seasonal) = match stl_adjustment(prep, model, config.stl_mode)? {
        Some((a, s)) => (Some(a), Some(s)),
        None => (None, None),
    };
    let y: Vec<f64> = match &seasonal {
        Some(s) => prep.normalized.iter().zip(s).map(|(x, s)| x - s).collect(),
        None => prep.normalized.clone(),
    };
    let fc = forecast_model(model, &y, prep, config)?;
    let train_seconds = seconds(started);

    let predict_started = Instant::now();
    let start = fc.start;
    if start >= split.train_end || fc.normalized.len() != split.total - start {
        return Err(Error::InsufficientData { required: start + 1, actual: split.train_end });
    }
    let normalized: Vec<f64> = match &seasonal {
        Some(s) => fc.normalized.iter().zip(&s[start..]).map(|(f, s)| f + s).collect(),
        None => fc.normalized,
    };
    let predicted = prep.norm.invert(&normalized);
    if predicted.iter().any(|p| !p.is_finite()) {
        return Err(Error::Numerical(format!("{model} produced a non-finite forecast")));
    }
    let predict_seconds = seconds(predict_started);

    let residuals = compute_residuals(&values[start..], &predicted, start)?;
    let train_residuals = &residuals.signed[..split.train_end - start];
    let test_offset = split.val_end - start;
    let test_residuals = &residuals.signed[test_offset..];
    let forecast = forecast_metrics(&values[split.test()], &predicted[test_offset..])?;
    let run = ModelRun {
        dataset: prep.key.to_string(),
        model,
        forecast: forecast.clone(),
        train_seconds,
        predict_seconds,
        epochs: fc.epochs,
    };

    let test_truth = &truth[split.test()];
    let mut records = Vec::new();
    let mut failures = Vec::new();
    let mut fitted_detectors = Vec::new();
    let mut detections = Vec::new();
    for &method in &config.detectors {
        let outcome = fit_detector(method, train_residuals).and_then(|params| {
            let out = apply_detector(&params, test_residuals);
            let metrics = detection_metrics(&out.labels, test_truth, &out.scores)?;
            Ok((params, out, metrics))
        });
        match outcome {
            Ok((params, out, detection)) => {
                let degenerate = detection.flags.any()
                    || params.sigma_floored
                    || forecast.pcc_degenerate
                    || forecast.r2_degenerate;
                records.push(EvaluationRecord {
                    dataset: prep.key.to_string(),
                    model,
                    detector: method,
                    forecast: forecast.clone(),
                    detection,
                    train_seconds,
                    predict_seconds,
                    epochs: fc.epochs,
                    status: if degenerate { RecordStatus::Degenerate } else { RecordStatus::Ok },
                });
                fitted_detectors.push(params);
                detections.push((method, out));
            }
            Err(e) => failures.push(FailureRecord {
                dataset: prep.key.to_string(),
                model: Some(model),
                detector: Some(method),
                message: e.to_string(),
            }),
        }
    }

    let artifact = ModelArtifact {
        format_version: ARTIFACT_VERSION,
        dataset: prep.key.to_string(),
        model,
        seed: prep.seed,
        split,
        repair: prep.repair,
        normalization: prep.norm,
        detected_period: prep.period,
        model_period: fc.model_period,
        seasonal_adjustment: adjustment,
        warmup: start,
        fitted: fc.fitted,
        detectors: fitted_detectors,
        training_log: fc.training_log,
    };
    let output = ModelOutput { model, start, predicted, detections };
    Ok(ModelEvaluation { run, records, failures, artifact, output })
}

/// Runs every configured model and detector on one dataset. Errors are
/// returned only when the dataset itself cannot be loaded or split; model
/// and detector failures are recorded and the rest continue.
pub fn run_dataset(config: &RunConfig, labels: Option<&LabelMap>, path: &Path) -> Result<DatasetResult> {
    let key = dataset_key(&config.data_root, path);
    let series = load_series(path)?;
    let (values, repair) = repair_missing(series.values())?;
    let split = SplitView::new(values.len(), config.train_frac, config.val_frac)?;
    let train = &values[split.train()];
    let norm = zscore_fit(train)?;
    let normalized = norm.apply(&values);
    let period = detect_period(&normalized[split.train()], default_max_lag(split.train_end));

    let windows = labels.filter(|l| l.keys().any(|k| k == key)).map(|l| l.windows(&key)).transpose()?;
    let labelled = windows.is_some();
    let truth = match &windows {
        Some(w) => expand_labels(w, series.timestamps()),
        None => vec![false; values.len()],
    };

    let prep = Prepared { key: &key, seed: dataset_seed(config.seed, &key), split, repair, norm, normalized, period };
    let mut result = DatasetResult {
        key: key.clone(),
        timestamps: series.timestamps().to_vec(),
        values: values.clone(),
        truth: truth.clone(),
        split,
        labelled,
        runs: Vec::new(),
        records: Vec::new(),
        failures: Vec::new(),
        artifacts: Vec::new(),
        outputs: Vec::new(),
    };
    for &model in &config.models {
        match evaluate_model(model, &prep, &values, &truth, config) {
            Ok(eval) => {
                result.runs.push(eval.run);
                result.records.extend(eval.records);
                result.failures.extend(eval.failures);
                result.artifacts.push(eval.artifact);
                result.outputs.push(eval.output);
            }
            Err(e) => result.failures.push(FailureRecord {
                dataset: key.clone(),
                model: Some(model),
                detector: None,
                message: e.to_string(),
            }),
        }
    }
    Ok(result)
}

fn load_labels(config: &RunConfig) -> Result<Option<LabelMap>> {
    config.labels_path.as_deref().map(LabelMap::load).transpose()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchSummary {
    pub datasets: usize,
    pub succeeded: usize,
    pub failed: usize,
    pub runs: Vec<ModelRun>,
    pub records: Vec<EvaluationRecord>,
    pub failures: Vec<FailureRecord>,
}

impl BatchSummary {
    /// 0 when every dataset ran cleanly, 1 when anything failed.
    pub fn exit_code(&self) -> i32 {
        if self.failed == 0 {
            0
        } else {
            1
        }
    }
}

/// Runs one dataset end to end and writes its output directory.
pub fn run_one(config: &RunConfig, path: &Path) -> Result<DatasetResult> {
    config.validate()?;
    let labels = load_labels(config)?;
    let result = run_dataset(config, labels.as_ref(), path)?;
    write_dataset_outputs(&config.output_root, &result)?;
    Ok(result)
}

/// Runs every dataset under `data_root` and writes per-dataset outputs plus
/// the corpus-level CSV reports.
pub fn run_batch(config: &RunConfig) -> Result<BatchSummary> {
    config.validate()?;
    let labels = load_labels(config)?;
    let paths = discover_datasets(&config.data_root)?;
    std::fs::create_dir_all(&config.output_root).map_err(|e| Error::io(&config.output_root, e))?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.parallelism)
        .build()
        .map_err(|e| Error::invalid("parallelism", e.to_string()))?;
    let outcomes: Vec<(String, Result<DatasetResult>)> = pool.install(|| {
        paths
            .par_iter()
            .map(|path| {
                let key = dataset_key(&config.data_root, path);
                let outcome = run_dataset(config, labels.as_ref(), path)
                    .and_then(|r| write_dataset_outputs(&config.output_root, &r).map(|_| r));
                (key, outcome)
            })
            .collect()
    });

    let mut summary = BatchSummary {
        datasets: outcomes.len(),
        succeeded: 0,
        failed: 0,
        runs: Vec::new(),
        records: Vec::new(),
        failures: Vec::new(),
    };
    for (key, outcome) in outcomes {
        match outcome {
            Ok(result) => {
                if result.failures.is_empty() {
                    summary.succeeded += 1;
                } else {
                    summary.failed += 1;
                }
                summary.runs.extend(result.runs);
                summary.records.extend(result.records);
                summary.failures.extend(result.failures);
            }
            Err(e) => {
                summary.failed += 1;
                summary.failures.push(FailureRecord { dataset: key, model: None, detector: None, message: e.to_string() });
            }
        }
    }
    write_batch_reports(&config.output_root, &summary)?;
    Ok(summary)
}
