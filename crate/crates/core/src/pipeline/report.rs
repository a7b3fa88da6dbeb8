//! CSV and JSON outputs, rankings and corpus-level aggregation.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::{BatchSummary, DatasetResult, EvaluationRecord, FailureRecord, ModelKind, ModelRun};
use crate::detect::DetectorMethod;
use crate::error::{Error, Result};
use crate::timeseries::format_timestamp;

pub const SUMMARY_HEADER: [&str; 14] = [
    "dataset", "model", "mae", "rmse", "mse", "mape", "pcc", "euclid", "dtw", "cbd", "r2", "train_seconds",
    "predict_seconds", "epochs",
];
pub const DETECTION_HEADER: [&str; 14] = [
    "dataset", "model", "detector", "tp", "fp", "tn", "fn", "precision", "recall", "f1", "accuracy", "fpr", "auc",
    "flags",
];
pub const RANKINGS_HEADER: [&str; 3] = ["dataset", "model", "mae_rank"];
const REPORT_HEADER: [&str; 24] = [
    "dataset", "model", "detector", "mae", "rmse", "mse", "mape", "pcc", "euclid", "dtw", "cbd", "r2", "tp", "fp",
    "tn", "fn", "precision", "recall", "f1", "accuracy", "fpr", "auc", "status", "flags",
];

fn write_csv<I>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let wrap = |e| Error::Csv { path: path.to_path_buf(), source: e };
    let mut w = csv::Writer::from_path(path).map_err(wrap)?;
    w.write_record(header).map_err(wrap)?;
    for row in rows {
        w.write_record(&row).map_err(wrap)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Json { path: path.to_path_buf(), source: e })?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn seconds_field(s: f64) -> String {
    format!("{s:.3}")
}

/// `output_root/<key without extension>/`.
pub fn dataset_dir(output_root: &Path, key: &str) -> PathBuf {
    let stem = Path::new(key).with_extension("");
    output_root.join(stem)
}

fn segment(result: &DatasetResult, i: usize) -> &'static str {
    if i < result.split.train_end {
        "train"
    } else if i < result.split.val_end {
        "val"
    } else {
        "test"
    }
}

fn forecast_fields(r: &EvaluationRecord) -> Vec<String> {
    let f = &r.forecast;
    [f.mae, f.rmse, f.mse, f.mape, f.pcc, f.euclid, f.dtw, f.cbd, f.r2].iter().map(f64::to_string).collect()
}

fn detection_fields(r: &EvaluationRecord) -> Vec<String> {
    let d = &r.detection;
    let mut row: Vec<String> = [d.tp, d.fp, d.tn, d.fn_].iter().map(usize::to_string).collect();
    row.extend([d.precision, d.recall, d.f1, d.accuracy, d.fpr, d.auc].iter().map(f64::to_string));
    row
}

/// Writes predictions, residuals, detections, model snapshots, the LSTM
/// training log and `report.csv` for one dataset.
pub fn write_dataset_outputs(output_root: &Path, result: &DatasetResult) -> Result<()> {
    let dir = dataset_dir(output_root, &result.key);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let ts = |i: usize| format_timestamp(&result.timestamps[i]);

    for out in &result.outputs {
        let name = out.model.name();
        let positions = out.start..out.start + out.predicted.len();
        write_csv(
            &dir.join(format!("predictions_{name}.csv")),
            &["timestamp", "segment", "actual", "predicted"],
            positions.clone().zip(&out.predicted).map(|(i, p)| {
                vec![ts(i), segment(result, i).into(), result.values[i].to_string(), p.to_string()]
            }),
        )?;
        write_csv(
            &dir.join(format!("residuals_{name}.csv")),
            &["timestamp", "segment", "residual"],
            positions.zip(&out.predicted).map(|(i, p)| {
                vec![ts(i), segment(result, i).into(), (result.values[i] - p).to_string()]
            }),
        )?;
        let test_start = result.split.val_end;
        for (method, det) in &out.detections {
            write_csv(
                &dir.join(format!("detections_{name}_{}.csv", method.name())),
                &["timestamp", "residual", "score", "label"],
                (test_start..result.split.total).enumerate().map(|(k, i)| {
                    let residual = result.values[i] - out.predicted[i - out.start];
                    vec![ts(i), residual.to_string(), det.scores[k].to_string(), u8::from(det.labels[k]).to_string()]
                }),
            )?;
        }
    }
    for artifact in &result.artifacts {
        write_json(&dir.join(format!("model_{}.json", artifact.model.name())), artifact)?;
        if let Some(log) = &artifact.training_log {
            log.write_csv(&dir.join(format!("training_log_{}.csv", artifact.model.name())))?;
        }
    }
    write_csv(
        &dir.join("report.csv"),
        &REPORT_HEADER,
        result.records.iter().map(|r| {
            let mut row = vec![r.dataset.clone(), r.model.name().into(), r.detector.name().into()];
            row.extend(forecast_fields(r));
            row.extend(detection_fields(r));
            row.push(serde_json::to_value(r.status).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default());
            row.push(r.detection.flags.describe());
            row
        }),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankRow {
    pub dataset: String,
    pub model: ModelKind,
    pub mae_rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankShare {
    pub model: ModelKind,
    pub datasets: usize,
    pub rank1_share: f64,
    /// Share of datasets where the model ranks first or second.
    pub top2_share: f64,
}

/// Ranks models per dataset by test MAE (1 = best; ties share the lowest
/// rank) and summarises how often each model ranks first or in the top two.
pub fn aggregate_rankings(runs: &[ModelRun]) -> (Vec<RankRow>, Vec<RankShare>) {
    let mut by_dataset: Vec<(&str, Vec<&ModelRun>)> = Vec::new();
    for run in runs {
        match by_dataset.iter_mut().find(|(d, _)| *d == run.dataset) {
            Some((_, group)) => group.push(run),
            None => by_dataset.push((&run.dataset, vec![run])),
        }
    }
    let mut rows = Vec::new();
    for (_, group) in &by_dataset {
        for run in group {
            let better = group.iter().filter(|o| o.forecast.mae < run.forecast.mae).count();
            rows.push(RankRow { dataset: run.dataset.clone(), model: run.model, mae_rank: better + 1 });
        }
    }
    let mut tally: BTreeMap<ModelKind, (usize, usize, usize)> = BTreeMap::new();
    for row in &rows {
        let t = tally.entry(row.model).or_default();
        t.0 += 1;
        t.1 += usize::from(row.mae_rank == 1);
        t.2 += usize::from(row.mae_rank <= 2);
    }
    let shares = tally
        .into_iter()
        .map(|(model, (n, first, top2))| RankShare {
            model,
            datasets: n,
            rank1_share: first as f64 / n as f64,
            top2_share: top2 as f64 / n as f64,
        })
        .collect();
    (rows, shares)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectionOverviewRow {
    pub model: ModelKind,
    pub detector: DetectorMethod,
    pub rows: usize,
    /// Rows with at least one labelled anomaly in the test segment; the
    /// means below cover only these.
    pub included: usize,
    pub mean_precision: f64,
    pub mean_recall: f64,
    pub mean_f1: f64,
    pub mean_auc: f64,
}

/// Mean detection metrics per (model, detector), leaving out rows whose
/// recall is undefined (no anomalies in the test segment).
pub fn detection_overview(records: &[EvaluationRecord]) -> Vec<DetectionOverviewRow> {
    let mut groups: BTreeMap<(ModelKind, DetectorMethod), Vec<&EvaluationRecord>> = BTreeMap::new();
    for r in records {
        groups.entry((r.model, r.detector)).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((model, detector), group)| {
            let kept: Vec<_> = group.iter().filter(|r| !r.detection.flags.recall_undefined).collect();
            let mean = |f: &dyn Fn(&EvaluationRecord) -> f64| {
                if kept.is_empty() {
                    0.0
                } else {
                    kept.iter().map(|r| f(r)).sum::<f64>() / kept.len() as f64
                }
            };
            DetectionOverviewRow {
                model,
                detector,
                rows: group.len(),
                included: kept.len(),
                mean_precision: mean(&|r| r.detection.precision),
                mean_recall: mean(&|r| r.detection.recall),
                mean_f1: mean(&|r| r.detection.f1),
                mean_auc: mean(&|r| r.detection.auc),
            }
        })
        .collect()
}

fn failure_row(f: &FailureRecord) -> Vec<String> {
    vec![
        f.dataset.clone(),
        f.model.map(|m| m.name().to_string()).unwrap_or_default(),
        f.detector.map(|d| d.name().to_string()).unwrap_or_default(),
        f.message.clone(),
    ]
}

/// Writes the corpus-level CSVs into `output_root`.
pub fn write_batch_reports(output_root: &Path, summary: &BatchSummary) -> Result<()> {
    write_csv(
        &output_root.join("all_datasets_summary.csv"),
        &SUMMARY_HEADER,
        summary.runs.iter().map(|r| {
            let f = &r.forecast;
            let mut row = vec![r.dataset.clone(), r.model.name().into()];
            row.extend([f.mae, f.rmse, f.mse, f.mape, f.pcc, f.euclid, f.dtw, f.cbd, f.r2].iter().map(f64::to_string));
            row.extend([seconds_field(r.train_seconds), seconds_field(r.predict_seconds), r.epochs.to_string()]);
            row
        }),
    )?;
    write_csv(
        &output_root.join("all_datasets_detection.csv"),
        &DETECTION_HEADER,
        summary.records.iter().map(|r| {
            let mut row = vec![r.dataset.clone(), r.model.name().into(), r.detector.name().into()];
            row.extend(detection_fields(r));
            row.push(r.detection.flags.describe());
            row
        }),
    )?;
    let (ranks, shares) = aggregate_rankings(&summary.runs);
    write_csv(
        &output_root.join("model_rankings.csv"),
        &RANKINGS_HEADER,
        ranks.iter().map(|r| vec![r.dataset.clone(), r.model.name().into(), r.mae_rank.to_string()]),
    )?;
    write_csv(
        &output_root.join("model_rank_share.csv"),
        &["model", "datasets", "rank1_share", "top2_share"],
        shares.iter().map(|s| {
            vec![s.model.name().into(), s.datasets.to_string(), s.rank1_share.to_string(), s.top2_share.to_string()]
        }),
    )?;
    write_csv(
        &output_root.join("detection_overview.csv"),
        &["model", "detector", "rows", "included", "mean_precision", "mean_recall", "mean_f1", "mean_auc"],
        detection_overview(&summary.records).iter().map(|o| {
            vec![
                o.model.name().into(),
                o.detector.name().into(),
                o.rows.to_string(),
                o.included.to_string(),
                o.mean_precision.to_string(),
                o.mean_recall.to_string(),
                o.mean_f1.to_string(),
                o.mean_auc.to_string(),
            ]
        }),
    )?;
    write_csv(
        &output_root.join("failures.csv"),
        &["dataset", "model", "detector", "message"],
        summary.failures.iter().map(failure_row),
    )
}
