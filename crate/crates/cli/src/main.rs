use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use resid_core::detect::DetectorMethod;
use resid_core::pipeline::{run_batch, run_one, FittedModel, ModelArtifact, ModelKind, RunConfig, StlMode};

const EXIT_PARTIAL: u8 = 1;
const EXIT_CONFIG: u8 = 2;

/// Forecasting-residual anomaly detection over NAB-format corpora.
#[derive(Parser)]
#[command(name = "resid", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every dataset under the data root and write corpus reports.
    Run(RunArgs),
    /// Run a single dataset file.
    RunOne {
        dataset: PathBuf,
        #[command(flatten)]
        args: RunArgs,
    },
    /// Summarise a model artifact (.json) or print a report (.csv).
    Inspect { record: PathBuf },
}

#[derive(Args)]
struct RunArgs {
    /// TOML (or .json) config; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data_root: Option<PathBuf>,
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated: holt_winters,sarima,lstm
    #[arg(long, value_delimiter = ',')]
    models: Option<Vec<ModelKind>>,
    /// Comma-separated: ztest,gaussian,percentile,iqr
    #[arg(long, value_delimiter = ',')]
    detectors: Option<Vec<DetectorMethod>>,
    /// auto, on or off
    #[arg(long)]
    stl: Option<StlMode>,
    #[arg(long)]
    seed: Option<u64>,
    /// Dataset worker threads; 0 uses every core.
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    train_frac: Option<f64>,
    #[arg(long)]
    val_frac: Option<f64>,
}

impl RunArgs {
    fn resolve(self) -> anyhow::Result<RunConfig> {
        let mut config = match &self.config {
            Some(path) => load_config(path)?,
            None => RunConfig::default(),
        };
        if let Some(v) = self.data_root {
            config.data_root = v;
        }
        if let Some(v) = self.labels {
            config.labels_path = Some(v);
        }
        if let Some(v) = self.out {
            config.output_root = v;
        }
        if let Some(v) = self.models {
            config.models = v;
        }
        if let Some(v) = self.detectors {
            config.detectors = v;
        }
        if let Some(v) = self.stl {
            config.stl_mode = v;
        }
        if let Some(v) = self.seed {
            config.seed = v;
        }
        if let Some(v) = self.jobs {
            config.parallelism = v;
        }
        if let Some(v) = self.train_frac {
            config.train_frac = v;
        }
        if let Some(v) = self.val_frac {
            config.val_frac = v;
        }
        config.validate()?;
        if let Some(labels) = &config.labels_path {
            if !labels.is_file() {
                bail!("labels file {} does not exist", labels.display());
            }
        }
        Ok(config)
    }
}

fn load_config(path: &Path) -> anyhow::Result<RunConfig> {
    let raw = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let config = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&raw).with_context(|| format!("parsing {}", path.display()))?
    } else {
        toml::from_str(&raw).with_context(|| format!("parsing {}", path.display()))?
    };
    Ok(config)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run(args) => {
            let config = match args.resolve() {
                Ok(c) => c,
                Err(e) => return config_error(e),
            };
            match run_batch(&config) {
                Ok(summary) => {
                    for f in &summary.failures {
                        let what = [f.model.map(|m| m.name()), f.detector.map(|d| d.name())]
                            .into_iter()
                            .flatten()
                            .collect::<Vec<_>>()
                            .join("/");
                        eprintln!("failed: {} {}: {}", f.dataset, what, f.message);
                    }
                    println!(
                        "{} datasets: {} ok, {} failed; reports in {}",
                        summary.datasets,
                        summary.succeeded,
                        summary.failed,
                        config.output_root.display()
                    );
                    ExitCode::from(summary.exit_code() as u8)
                }
                // Empty corpus, unreadable labels, unwritable output root.
                Err(e) => config_error(e.into()),
            }
        }
        Command::RunOne { dataset, args } => {
            let config = match args.resolve() {
                Ok(c) => c,
                Err(e) => return config_error(e),
            };
            match run_one(&config, &dataset) {
                Ok(result) => {
                    for f in &result.failures {
                        eprintln!("failed: {}", f.message);
                    }
                    for run in &result.runs {
                        println!(
                            "{} {}: mae {:.6} rmse {:.6} mape {:.3}",
                            result.key, run.model, run.forecast.mae, run.forecast.rmse, run.forecast.mape
                        );
                    }
                    for r in &result.records {
                        println!(
                            "{} {} {}: precision {:.4} recall {:.4} f1 {:.4} fpr {:.4}",
                            result.key,
                            r.model,
                            r.detector,
                            r.detection.precision,
                            r.detection.recall,
                            r.detection.f1,
                            r.detection.fpr
                        );
                    }
                    if result.failures.is_empty() {
                        ExitCode::SUCCESS
                    } else {
                        ExitCode::from(EXIT_PARTIAL)
                    }
                }
                Err(e) => {
                    eprintln!("error: {}: {e}", dataset.display());
                    ExitCode::from(EXIT_PARTIAL)
                }
            }
        }
        Command::Inspect { record } => match inspect(&record) {
            Ok(text) => {
                print!("{text}");
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e:#}");
                ExitCode::from(EXIT_PARTIAL)
            }
        },
    }
}

fn config_error(e: anyhow::Error) -> ExitCode {
    eprintln!("error: {e:#}");
    ExitCode::from(EXIT_CONFIG)
}

fn inspect(path: &Path) -> anyhow::Result<String> {
    let raw = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if path.extension().is_some_and(|e| e == "json") {
        let artifact: ModelArtifact =
            serde_json::from_str(&raw).with_context(|| format!("{} is not a model artifact", path.display()))?;
        Ok(describe_artifact(&artifact))
    } else {
        table(&raw).with_context(|| format!("reading {}", path.display()))
    }
}

fn describe_artifact(a: &ModelArtifact) -> String {
    let mut out = Vec::new();
    out.push(format!("dataset        {}", a.dataset));
    out.push(format!("model          {}", a.model));
    out.push(format!("seed           {}", a.seed));
    out.push(format!(
        "split          train {} / val {} / test {}",
        a.split.train().len(),
        a.split.val().len(),
        a.split.test().len()
    ));
    out.push(format!(
        "normalization  mean {} std {}{}",
        a.normalization.mean,
        a.normalization.std,
        if a.normalization.degenerate { " (degenerate)" } else { "" }
    ));
    let detected = a.detected_period.map_or("none".to_string(), |p| p.to_string());
    out.push(format!("period         detected {detected}, used {}", a.model_period));
    if let Some(s) = &a.seasonal_adjustment {
        out.push(format!("stl            period {}", s.period));
    }
    out.push(format!("warm-up        {}", a.warmup));
    match &a.fitted {
        FittedModel::HoltWinters(m) => {
            out.push(format!("parameters     alpha {} beta {} gamma {} period {}", m.alpha, m.beta, m.gamma, m.period));
        }
        FittedModel::Sarima(m) => {
            out.push(format!("orders         {}", m.orders));
            out.push(format!("parameters     ar {:?} ma {:?} sar {:?} sma {:?}", m.ar, m.ma, m.sar, m.sma));
            out.push(format!("fit            intercept {} sigma2 {} aic {}", m.intercept, m.sigma2, m.aic));
        }
        FittedModel::Lstm(s) => {
            let hp = &s.model.hyperparams;
            out.push(format!(
                "network        {} layers x {} hidden, window {}, {} parameters",
                hp.layers, hp.hidden, hp.window, s.parameter_count
            ));
        }
    }
    if let Some(log) = &a.training_log {
        out.push(format!(
            "training       {} epochs, best epoch {} (val mse {}){}",
            log.epochs.len(),
            log.best_epoch,
            log.best_val_mse,
            if log.early_stopped { ", stopped early" } else { "" }
        ));
    }
    for d in &a.detectors {
        let threshold = match d.method {
            DetectorMethod::ZTest => format!("mu {} sigma {} k {}", d.mu, d.sigma, d.k),
            DetectorMethod::Gaussian => format!("mu {} sigma {} log tau {}", d.mu, d.sigma, d.log_tau),
            DetectorMethod::Percentile => format!("q95 {}", d.q95),
            DetectorMethod::Iqr => format!("q1 {} q3 {} iqr {}", d.q1, d.q3, d.iqr),
        };
        out.push(format!("detector       {:<10} {threshold}", d.method.name()));
    }
    let mut text = out.join("\n");
    text.push('\n');
    text
}

/// Column-aligned rendering of a CSV document.
fn table(raw: &str) -> anyhow::Result<String> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).from_reader(raw.as_bytes());
    let rows: Vec<Vec<String>> = reader
        .records()
        .map(|r| r.map(|r| r.iter().map(str::to_string).collect()))
        .collect::<Result<_, _>>()?;
    let columns = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> =
        (0..columns).map(|c| rows.iter().filter_map(|r| r.get(c)).map(|s| s.len()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for row in &rows {
        let cells: Vec<String> = row.iter().zip(&widths).map(|(s, w)| format!("{s:<w$}")).collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
    }
    Ok(out)
}
