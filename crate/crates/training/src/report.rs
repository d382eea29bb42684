use std::cmp::Ordering;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use signforge_core::models::{Model, ModelSpec};

use crate::config::TrainConfig;
use crate::data::TrainingData;
use crate::error::{Result, TrainError};
use crate::train::{train, RunRecord};

pub const REPORT_COLUMNS: [&str; 8] = [
    "Model Name",
    "Epochs Executed",
    "Train Accuracy",
    "Train Loss",
    "Validation Accuracy",
    "Validation Loss",
    "Time Train",
    "Time Execution",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub model_name: String,
    pub epochs_executed: usize,
    pub train_accuracy: f64,
    pub train_loss: f64,
    pub val_accuracy: f64,
    pub val_loss: f64,
    pub train_seconds: f64,
    pub inference_ms: f64,
}

impl From<&RunRecord> for ReportRow {
    fn from(r: &RunRecord) -> Self {
        Self {
            model_name: r.model_name.clone(),
            epochs_executed: r.epochs_executed,
            train_accuracy: r.train_accuracy,
            train_loss: r.train_loss,
            val_accuracy: r.val_accuracy,
            val_loss: r.val_loss,
            train_seconds: r.train_seconds,
            inference_ms: r.inference_ms,
        }
    }
}

impl ReportRow {
    pub fn cells(&self) -> [String; 8] {
        [
            self.model_name.clone(),
            self.epochs_executed.to_string(),
            format!("{:.4}", self.train_accuracy),
            format!("{:.4}", self.train_loss),
            format!("{:.4}", self.val_accuracy),
            format!("{:.4}", self.val_loss),
            format_duration(self.train_seconds),
            format_latency(self.inference_ms),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RowOutcome {
    Ok(ReportRow),
    Failed { model_name: String, error: String },
}

impl RowOutcome {
    pub fn model_name(&self) -> &str {
        match self {
            RowOutcome::Ok(r) => &r.model_name,
            RowOutcome::Failed { model_name, .. } => model_name,
        }
    }
}

/// Rows by validation accuracy descending, then lower validation loss, then
/// name; failed runs follow, by name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    rows: Vec<RowOutcome>,
}

impl ComparisonReport {
    pub fn new(mut rows: Vec<RowOutcome>) -> Self {
        rows.sort_by(row_order);
        Self { rows }
    }

    pub fn rows(&self) -> &[RowOutcome] {
        &self.rows
    }

    pub fn to_csv(&self) -> String {
        let mut out = REPORT_COLUMNS.join(",");
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = match row {
                RowOutcome::Ok(r) => r.cells().to_vec(),
                RowOutcome::Failed { model_name, .. } => {
                    let mut c = vec![String::new(); REPORT_COLUMNS.len()];
                    c[0] = model_name.clone();
                    c
                }
            };
            out.push_str(&cells.iter().map(|c| csv_field(c)).collect::<Vec<_>>().join(","));
            out.push('\n');
        }
        out
    }

    pub fn to_table(&self) -> String {
        let ok: Vec<[String; 8]> = self
            .rows
            .iter()
            .filter_map(|r| match r {
                RowOutcome::Ok(r) => Some(r.cells()),
                RowOutcome::Failed { .. } => None,
            })
            .collect();
        let mut widths: Vec<usize> = REPORT_COLUMNS.iter().map(|c| c.len()).collect();
        for cells in &ok {
            for (w, c) in widths.iter_mut().zip(cells) {
                *w = (*w).max(c.len());
            }
        }
        let line = |cells: &[&str]| {
            let mut s = String::new();
            for (i, (c, w)) in cells.iter().zip(&widths).enumerate() {
                if i == 0 {
                    let _ = write!(s, "{c:<w$}");
                } else {
                    let _ = write!(s, "  {c:>w$}");
                }
            }
            s.trim_end().to_string() + "\n"
        };
        let mut out = line(&REPORT_COLUMNS);
        let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
        out += &line(&rule.iter().map(String::as_str).collect::<Vec<_>>());
        for cells in &ok {
            out += &line(&cells.iter().map(String::as_str).collect::<Vec<_>>());
        }
        for r in &self.rows {
            if let RowOutcome::Failed { model_name, error } = r {
                let _ = writeln!(out, "{model_name}: FAILED: {error}");
            }
        }
        out
    }
}

fn row_order(a: &RowOutcome, b: &RowOutcome) -> Ordering {
    match (a, b) {
        (RowOutcome::Ok(x), RowOutcome::Ok(y)) => y
            .val_accuracy
            .total_cmp(&x.val_accuracy)
            .then(x.val_loss.total_cmp(&y.val_loss))
            .then_with(|| x.model_name.cmp(&y.model_name)),
        (RowOutcome::Ok(_), RowOutcome::Failed { .. }) => Ordering::Less,
        (RowOutcome::Failed { .. }, RowOutcome::Ok(_)) => Ordering::Greater,
        _ => a.model_name().cmp(b.model_name()),
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn row(name: &str, epochs: usize, ta: f64, tl: f64, va: f64, vl: f64, secs: f64, ms: f64) -> RowOutcome {
    RowOutcome::Ok(ReportRow {
        model_name: name.into(),
        epochs_executed: epochs,
        train_accuracy: ta,
        train_loss: tl,
        val_accuracy: va,
        val_loss: vl,
        train_seconds: secs,
        inference_ms: ms,
    })
}

/// Published results for ten pretrained models, in publication order.
pub fn reference_table() -> Vec<RowOutcome> {
    let hm = |h: f64, m: f64| h * 3600.0 + m * 60.0;
    vec![
        row("VGG16", 30, 0.9993, 0.1762, 0.6889, 2.2666, hm(1.0, 42.0), 25.0),
        row("MobileNetV2", 39, 0.9995, 0.0905, 0.7542, 1.3007, hm(0.0, 59.0), 10.0),
        row("NASNet", 49, 0.9996, 0.0421, 0.7542, 1.7506, hm(10.0, 12.0), 79.0),
        row("DenseNet169", 39, 0.9998, 0.0876, 0.7931, 1.2188, hm(2.0, 29.0), 29.0),
        row("Xception", 50, 0.9992, 0.0518, 0.7153, 1.4442, hm(2.0, 51.0), 22.0),
        row("InceptionV3", 43, 0.9995, 0.0708, 0.7667, 1.3883, hm(1.0, 24.0), 14.0),
        row("RegNetX040", 48, 0.9995, 0.0631, 0.7764, 1.1877, hm(3.0, 2.0), 25.0),
        row("ResNet152", 50, 0.9998, 0.0367, 0.7833, 1.2994, hm(5.0, 19.0), 48.0),
        row("RegNetY064", 50, 0.9996, 0.0544, 0.7917, 1.1983, hm(4.0, 40.0), 36.0),
        row("DenseNet201", 47, 0.9998, 0.0483, 0.8042, 1.2051, hm(3.0, 44.0), 37.0),
    ]
}

/// `3h 02m`, `59m` or `42s`.
pub fn format_duration(seconds: f64) -> String {
    let total = seconds.max(0.0).round() as u64;
    if total >= 3600 {
        format!("{}h {:02}m", total / 3600, (total % 3600) / 60)
    } else if total >= 60 {
        format!("{}m", total / 60)
    } else {
        format!("{total}s")
    }
}

/// Whole milliseconds, with one decimal below 10 ms.
pub fn format_latency(ms: f64) -> String {
    if ms < 10.0 {
        format!("{ms:.1}ms")
    } else {
        format!("{ms:.0}ms")
    }
}

/// A finished comparison entry: the trained model alongside its record, or the error.
pub type RunOutcome = std::result::Result<(RunRecord, Model), TrainError>;

/// Trains each spec under `config` from seed `config.seed`.
pub fn compare(specs: &[ModelSpec], data: &TrainingData, config: &TrainConfig) -> Result<ComparisonReport> {
    compare_with(specs, data, config, |_, _| {})
}

/// As [`compare`], handing every outcome to `on_run` as it finishes.
pub fn compare_with(
    specs: &[ModelSpec],
    data: &TrainingData,
    config: &TrainConfig,
    mut on_run: impl FnMut(&ModelSpec, &RunOutcome),
) -> Result<ComparisonReport> {
    if specs.len() < 2 {
        return Err(TrainError::Config(format!("compare needs at least 2 models, got {}", specs.len())));
    }
    config.validate()?;
    let mut rows = Vec::with_capacity(specs.len());
    for spec in specs {
        let outcome: RunOutcome = (|| {
            let mut model = Model::build(data.adapt(spec.clone()), config.seed)?;
            let record = train(&mut model, data, config)?;
            Ok((record, model))
        })();
        rows.push(match &outcome {
            Ok((record, _)) => RowOutcome::Ok(ReportRow::from(record)),
            Err(e) => RowOutcome::Failed {
                model_name: spec.name.clone(),
                error: e.to_string(),
            },
        });
        on_run(spec, &outcome);
    }
    Ok(ComparisonReport::new(rows))
}
