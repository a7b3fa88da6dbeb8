//! Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any
//! failure.

mod common;

use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use resid_core::classical::{sarima_fit, sarima_select_fit, SarimaOrders};
use resid_core::detect::{apply_detector, fit_detector, DetectorMethod};
use resid_core::lstm::{lstm_backward, lstm_fit, lstm_forward, DropoutMasks, LstmHyperparams, LstmParams};
use resid_core::metrics::{dtw_distance, pearson};
use resid_core::pipeline::{
    run_batch, run_dataset, ModelKind, RunConfig, StlMode, DETECTION_HEADER, RANKINGS_HEADER, SUMMARY_HEADER,
};
use resid_core::preprocess::{stl_decompose, zscore_apply, zscore_fit};
use resid_core::timeseries::{LabelMap, SplitView};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn ok<T, E: std::fmt::Display>(r: Result<T, E>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn flag_rate(method: DetectorMethod, reference: &[f64], test: &[f64]) -> Result<f64, String> {
    let params = ok(fit_detector(method, reference))?;
    let out = apply_detector(&params, test);
    Ok(out.labels.iter().filter(|&&l| l).count() as f64 / test.len() as f64)
}

fn within(rate: f64, target_pct: f64, tol_pct: f64) -> Outcome {
    let pct = 100.0 * rate;
    let detail = format!("flag rate {pct:.4}% (target {target_pct}% ± {tol_pct}%)");
    if (pct - target_pct).abs() <= tol_pct {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn flatline() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("data/flat.csv");
    write_nab_csv(&path, &[17.25; 500]);
    let cfg = RunConfig {
        data_root: dir.path().join("data"),
        output_root: dir.path().join("out"),
        models: vec![ModelKind::HoltWinters, ModelKind::Sarima],
        detectors: vec![DetectorMethod::ZTest],
        ..Default::default()
    };
    let result = ok(run_dataset(&cfg, None, &path))?;
    ensure(result.failures.is_empty(), format!("{:?}", result.failures))?;
    ensure(result.runs.len() == 2, "missing model runs")?;
    let mut detail = Vec::new();
    for run in &result.runs {
        let (mae, rmse) = (run.forecast.mae, run.forecast.rmse);
        ensure(mae.abs() <= 1e-9 && rmse.abs() <= 1e-9, format!("{}: mae {mae:e} rmse {rmse:e}", run.model))?;
        detail.push(format!("{} mae {mae:e} rmse {rmse:e}", run.model));
    }
    Ok(detail.join(", "))
}

fn ztest_calibration() -> Outcome {
    let r = normal(101, 100_000);
    within(flag_rate(DetectorMethod::ZTest, &r, &r)?, 0.27, 0.08)
}

fn percentile_calibration() -> Outcome {
    within(flag_rate(DetectorMethod::Percentile, &normal(102, 100_000), &normal(202, 100_000))?, 5.0, 0.3)
}

fn iqr_calibration() -> Outcome {
    within(flag_rate(DetectorMethod::Iqr, &normal(103, 100_000), &normal(203, 100_000))?, 0.70, 0.15)
}

fn gaussian_calibration() -> Outcome {
    within(flag_rate(DetectorMethod::Gaussian, &normal(104, 100_000), &normal(204, 100_000))?, 1.0, 0.3)
}

fn gradient_oracle() -> Outcome {
    let mut worst: f64 = 0.0;
    let instances = 24;
    for seed in 0..instances {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = LstmParams::init(2, 4, &mut rng);
        for v in &mut p.values {
            *v += rng.random_range(-0.3..0.3);
        }
        let window: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();
        let target: f64 = rng.random_range(-1.0..1.0);
        let masks = (seed % 2 == 1).then(|| DropoutMasks::sample(2, 4, 5, 0.2, &mut rng));
        let loss = |q: &LstmParams| -> Result<f64, String> {
            let (pred, _) = ok(lstm_forward(q, &window, masks.as_ref()))?;
            Ok((pred - target).powi(2))
        };
        let (_, cache) = ok(lstm_forward(&p, &window, masks.as_ref()))?;
        let analytic = ok(lstm_backward(&p, &cache, target))?;
        let mut q = p.clone();
        let h = 1e-5;
        for k in 0..p.values.len() {
            q.values[k] = p.values[k] + h;
            let up = loss(&q)?;
            q.values[k] = p.values[k] - h;
            let down = loss(&q)?;
            q.values[k] = p.values[k];
            let numeric = (up - down) / (2.0 * h);
            let rel = (analytic[k] - numeric).abs() / analytic[k].abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    ensure(worst < 1e-4, format!("worst relative error {worst:e}"))?;
    Ok(format!("{instances} instances, worst relative error {worst:.2e}"))
}

fn lstm_learning() -> Outcome {
    let raw = sine(480, 24.0, 0.0, 0);
    let view = ok(SplitView::new(raw.len(), 0.7, 0.15))?;
    let norm = ok(zscore_fit(&raw[view.train()]))?;
    let z = zscore_apply(&norm, &raw);
    let (train, val) = (&z[view.train()], &z[view.val()]);
    let (_, log) = ok(lstm_fit(train, val, &LstmHyperparams::default()))?;
    let prev = &z[view.val().start - 1..view.val().end - 1];
    let baseline = val.iter().zip(prev).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / val.len() as f64;
    let ratio = log.best_val_mse / baseline;
    ensure(log.epochs.len() <= 30, "more than 30 epochs")?;
    ensure(ratio < 0.2, format!("val mse {:.3e} is {:.1}% of persistence", log.best_val_mse, 100.0 * ratio))?;
    Ok(format!(
        "val mse {:.3e} = {:.3}% of persistence {:.3e} after {} epochs",
        log.best_val_mse,
        100.0 * ratio,
        baseline,
        log.epochs.len()
    ))
}

fn ar1(phi: f64, n: usize, seed: u64) -> Vec<f64> {
    let e = normal(seed, n + 100);
    let mut x = vec![0.0; n + 100];
    for t in 1..x.len() {
        x[t] = phi * x[t - 1] + e[t];
    }
    x.split_off(100)
}

fn sarima_oracle() -> Outcome {
    let x = ar1(0.8, 1000, 1);
    let fit = ok(sarima_fit(&x, ok(SarimaOrders::new((1, 0, 0), (0, 0, 0), 1))?))?;
    let phi = fit.model.ar[0];
    ensure((0.7..=0.9).contains(&phi), format!("phi {phi}"))?;
    // A seasonal grid (m = 2) so that D = 0 is a real choice.
    let selected = ok(sarima_select_fit(&x, 2))?.model.orders;
    ensure(selected.p >= 1 && selected.seasonal_d == 0, format!("selected {selected}"))?;
    Ok(format!("phi {phi:.4}, selected {selected}"))
}

fn stl_checks() -> Outcome {
    let n = 480;
    let truth: Vec<f64> = (0..n).map(|t| (2.0 * std::f64::consts::PI * t as f64 / 24.0).sin()).collect();
    let trend_sine: Vec<f64> = (0..n).map(|t| 5.0 + 0.02 * t as f64 + 1e-5 * (t * t) as f64 + truth[t]).collect();
    let fixtures: Vec<(&str, Vec<f64>, usize)> = vec![
        ("trend+sine", trend_sine.clone(), 24),
        ("sine", sine(n, 24.0, 0.1, 5), 24),
        ("spike", sine_with_spike(n, 300, 4.0, 6), 24),
        ("noise", normal(7, n), 12),
        ("flat", vec![3.0; n], 7),
    ];
    let mut worst: f64 = 0.0;
    for (name, values, period) in &fixtures {
        let c = ok(stl_decompose(values, *period))?;
        for t in 0..values.len() {
            let err = (c.trend[t] + c.seasonal[t] + c.residual[t] - values[t]).abs();
            ensure(err <= 1e-8, format!("{name}: reconstruction error {err:e} at {t}"))?;
            worst = worst.max(err);
        }
    }
    let c = ok(stl_decompose(&trend_sine, 24))?;
    let inner = 24..n - 24;
    let corr = pearson(&c.seasonal[inner.clone()], &truth[inner]).ok_or("constant seasonal")?;
    ensure(corr > 0.95, format!("seasonal correlation {corr}"))?;
    Ok(format!("max reconstruction error {worst:.1e}, seasonal correlation {corr:.5}"))
}

/// Minimum alignment cost over every monotone path, by explicit recursion.
fn brute_dtw(a: &[f64], b: &[f64], i: usize, j: usize) -> f64 {
    let cost = (a[i] - b[j]).abs();
    if i == 0 && j == 0 {
        return cost;
    }
    let mut best = f64::INFINITY;
    if i > 0 {
        best = best.min(brute_dtw(a, b, i - 1, j));
    }
    if j > 0 {
        best = best.min(brute_dtw(a, b, i, j - 1));
    }
    if i > 0 && j > 0 {
        best = best.min(brute_dtw(a, b, i - 1, j - 1));
    }
    cost + best
}

fn dtw_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let seq = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        let len = rng.random_range(1..=6);
        (0..len).map(|_| rng.random_range(0..3) as f64).collect()
    };
    let pairs = 500;
    for _ in 0..pairs {
        let (a, b) = (seq(&mut rng), seq(&mut rng));
        let dp = ok(dtw_distance(&a, &b))?;
        let brute = brute_dtw(&a, &b, a.len() - 1, b.len() - 1);
        ensure(dp == brute, format!("{a:?} vs {b:?}: dp {dp} brute {brute}"))?;
    }
    Ok(format!("{pairs} pairs equal"))
}

fn split_arithmetic() -> Outcome {
    for n in 10..=5000usize {
        let v = ok(SplitView::new(n, 0.7, 0.15))?;
        let (train, val, test) = (v.train().len(), v.val().len(), v.test().len());
        ensure(
            train == 7 * n / 10 && val == 15 * n / 100 && train + val + test == n,
            format!("n {n}: {train}/{val}/{test}"),
        )?;
    }
    Ok("n = 10..=5000".into())
}

fn spike_fixture(root: &Path, key: &str, seed: u64) -> Vec<f64> {
    let values = sine_with_spike(600, 550, 4.0, seed);
    write_nab_csv(&root.join("data").join(key), &values);
    values
}

fn leakage() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let values = spike_fixture(dir.path(), "x.csv", 12);
    write_labels(&dir.path().join("labels.json"), &[("x.csv", vec![(550, 552)])]);
    let labels = ok(LabelMap::load(&dir.path().join("labels.json")))?;
    let cfg = RunConfig {
        data_root: dir.path().join("data"),
        output_root: dir.path().join("out"),
        stl_mode: StlMode::On,
        lstm: small_lstm(),
        ..Default::default()
    };
    let path = dir.path().join("data/x.csv");
    let base = ok(run_dataset(&cfg, Some(&labels), &path))?;
    let mut perturbed = values;
    for (k, v) in perturbed[base.split.test()].iter_mut().enumerate() {
        *v = if k % 2 == 0 { 1e4 } else { -250.0 + k as f64 };
    }
    write_nab_csv(&path, &perturbed);
    let other = ok(run_dataset(&cfg, Some(&labels), &path))?;
    ensure(base.artifacts.len() == 3 && base.failures.is_empty(), "models failed")?;
    for (a, b) in base.artifacts.iter().zip(&other.artifacts) {
        let (ja, jb) = (ok(serde_json::to_string(a))?, ok(serde_json::to_string(b))?);
        ensure(ja == jb, format!("{} artifact changed", a.model))?;
    }
    ensure(base.runs[0].forecast != other.runs[0].forecast, "perturbation had no effect")?;
    Ok("3 models x 4 detectors, artifacts bit-identical".into())
}

fn small_lstm() -> LstmHyperparams {
    LstmHyperparams { window: 24, hidden: 16, max_epochs: 10, ..Default::default() }
}

fn spike_detection() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    spike_fixture(dir.path(), "spike.csv", 1);
    write_labels(&dir.path().join("labels.json"), &[("spike.csv", vec![(550, 552)])]);
    let labels = ok(LabelMap::load(&dir.path().join("labels.json")))?;
    let cfg = RunConfig {
        data_root: dir.path().join("data"),
        output_root: dir.path().join("out"),
        models: vec![ModelKind::HoltWinters],
        detectors: vec![DetectorMethod::ZTest],
        ..Default::default()
    };
    let result = ok(run_dataset(&cfg, Some(&labels), &dir.path().join("data/spike.csv")))?;
    let d = &result.records.first().ok_or("no record")?.detection;
    ensure(d.recall == 1.0 && d.fpr < 0.05, format!("recall {} fpr {}", d.recall, d.fpr))?;
    let detail = format!("recall {} fpr {:.4}", d.recall, d.fpr);

    let batch = batch_corpus()?;
    let out = batch.path().join("out");
    let summary = ok(run_batch(&batch_config(batch.path(), &out)))?;
    ensure(summary.failed == 0 && summary.succeeded == 5, format!("{:?}", summary.failures))?;
    for (file, header, rows) in [
        ("all_datasets_summary.csv", SUMMARY_HEADER.join(","), 15),
        ("all_datasets_detection.csv", DETECTION_HEADER.join(","), 60),
        ("model_rankings.csv", RANKINGS_HEADER.join(","), 15),
    ] {
        let text = ok(std::fs::read_to_string(out.join(file)))?;
        ensure(text.lines().next() == Some(header.as_str()), format!("{file}: header"))?;
        ensure(text.lines().count() == rows + 1, format!("{file}: {} lines", text.lines().count()))?;
    }
    Ok(format!("{detail}; 5-fixture batch clean"))
}

fn batch_corpus() -> Result<tempfile::TempDir, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = dir.path();
    write_nab_csv(&root.join("data/a/flat.csv"), &[2.0; 300]);
    write_nab_csv(&root.join("data/a/sine.csv"), &sine(400, 24.0, 0.2, 1));
    write_nab_csv(&root.join("data/b/noise.csv"), &normal(2, 350));
    let trend: Vec<f64> = sine(360, 36.0, 0.3, 3).iter().enumerate().map(|(t, v)| v + 0.01 * t as f64).collect();
    write_nab_csv(&root.join("data/b/trend.csv"), &trend);
    write_nab_csv(&root.join("data/c/spike.csv"), &sine_with_spike(420, 380, 4.0, 4));
    write_labels(
        &root.join("labels.json"),
        &[
            ("a/flat.csv", vec![]),
            ("a/sine.csv", vec![]),
            ("b/noise.csv", vec![(320, 325)]),
            ("c/spike.csv", vec![(380, 382)]),
        ],
    );
    Ok(dir)
}

fn batch_config(root: &Path, out: &Path) -> RunConfig {
    RunConfig {
        data_root: root.join("data"),
        labels_path: Some(root.join("labels.json")),
        output_root: out.to_path_buf(),
        seed: 7,
        lstm: small_lstm(),
        ..Default::default()
    }
}

/// CSV text without the timing columns.
fn strip_timing(text: &str) -> String {
    let mut lines = text.lines();
    let head: Vec<&str> = lines.next().unwrap_or_default().split(',').collect();
    let keep: Vec<usize> = (0..head.len()).filter(|&i| !head[i].ends_with("_seconds")).collect();
    std::iter::once(head)
        .chain(lines.map(|l| l.split(',').collect()))
        .map(|cols| keep.iter().filter_map(|&i| cols.get(i).copied()).collect::<Vec<_>>().join(","))
        .collect::<Vec<_>>()
        .join("\n")
}

fn determinism() -> Outcome {
    let dir = batch_corpus()?;
    let (first, second) = (dir.path().join("run1"), dir.path().join("run2"));
    ok(run_batch(&batch_config(dir.path(), &first)))?;
    ok(run_batch(&batch_config(dir.path(), &second)))?;
    let files = [
        "all_datasets_summary.csv",
        "all_datasets_detection.csv",
        "model_rankings.csv",
        "model_rank_share.csv",
        "detection_overview.csv",
        "failures.csv",
    ];
    for file in files {
        let a = ok(std::fs::read_to_string(first.join(file)))?;
        let b = ok(std::fs::read_to_string(second.join(file)))?;
        ensure(strip_timing(&a) == strip_timing(&b), format!("{file} differs"))?;
    }
    Ok(format!("{} report files identical", files.len()))
}

struct Criterion {
    name: &'static str,
    limit_secs: Option<f64>,
    check: fn() -> Outcome,
}

fn main() -> ExitCode {
    let criteria = [
        Criterion { name: "flatline exactness", limit_secs: Some(10.0), check: flatline },
        Criterion { name: "z-test calibration", limit_secs: Some(5.0), check: ztest_calibration },
        Criterion { name: "percentile calibration", limit_secs: None, check: percentile_calibration },
        Criterion { name: "iqr calibration", limit_secs: None, check: iqr_calibration },
        Criterion { name: "gaussian calibration", limit_secs: None, check: gaussian_calibration },
        Criterion { name: "lstm gradient oracle", limit_secs: Some(30.0), check: gradient_oracle },
        Criterion { name: "lstm learning", limit_secs: Some(180.0), check: lstm_learning },
        Criterion { name: "sarima estimation", limit_secs: Some(120.0), check: sarima_oracle },
        Criterion { name: "stl identity and separation", limit_secs: None, check: stl_checks },
        Criterion { name: "dtw oracle", limit_secs: None, check: dtw_oracle },
        Criterion { name: "split arithmetic", limit_secs: None, check: split_arithmetic },
        Criterion { name: "no test leakage", limit_secs: None, check: leakage },
        Criterion { name: "end-to-end spike detection", limit_secs: None, check: spike_detection },
        Criterion { name: "determinism", limit_secs: None, check: determinism },
    ];
    let mut failed = 0;
    for (i, c) in criteria.iter().enumerate() {
        let started = Instant::now();
        let outcome = std::panic::catch_unwind(c.check).unwrap_or_else(|_| Err("panicked".into()));
        let secs = started.elapsed().as_secs_f64();
        let outcome = match (outcome, c.limit_secs) {
            (Ok(_), Some(limit)) if secs >= limit => Err(format!("took {secs:.1} s, limit {limit} s")),
            (o, _) => o,
        };
        let (status, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("{status} {:>2} {:<28} {secs:>7.2} s  {detail}", i + 1, c.name);
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
