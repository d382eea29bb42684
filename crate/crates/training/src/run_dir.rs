use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde_json::json;
use signforge_core::models::Model;

use crate::error::{io_err, Result, TrainError};
use crate::report::{ComparisonReport, ReportRow, RowOutcome};
use crate::train::RunRecord;

pub const HISTORY_HEADER: &str = "epoch,train_acc,train_loss,val_acc,val_loss,seconds";

/// Writes `config.json`, `record.json`, `history.csv`, `model.sgnf` and `report.txt` into `dir`.
pub fn write_run_dir(dir: impl AsRef<Path>, record: &RunRecord, model: &Model) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(io_err(dir))?;

    let config = json!({ "model": model.spec(), "train": record.config });
    let text = serde_json::to_string_pretty(&config).map_err(|e| TrainError::Config(e.to_string()))?;
    write(&dir.join("config.json"), &text)?;
    let text = serde_json::to_string_pretty(record).map_err(|e| TrainError::Config(e.to_string()))?;
    write(&dir.join("record.json"), &text)?;
    write(&dir.join("history.csv"), &history_csv(record))?;
    model.save(dir.join("model.sgnf"))?;

    let mut report = ComparisonReport::new(vec![RowOutcome::Ok(ReportRow::from(record))]).to_table();
    let _ = writeln!(
        report,
        "\nbest epoch {} of {}, completion {:?}, {} parameters",
        record.best_epoch, record.epochs_executed, record.completion, record.param_count
    );
    write(&dir.join("report.txt"), &report)
}

pub fn history_csv(record: &RunRecord) -> String {
    let mut out = String::from(HISTORY_HEADER);
    out.push('\n');
    for m in &record.history {
        let _ = writeln!(
            out,
            "{},{:.6},{:.6},{:.6},{:.6},{:.3}",
            m.epoch, m.train_acc, m.train_loss, m.val_acc, m.val_loss, m.seconds
        );
    }
    out
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(io_err(path))
}
