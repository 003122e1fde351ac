//! Per-epoch metrics files.
//!
//! `metrics.csv` starts with a version line, then a fixed column header and
//! one row per epoch. Wall-clock times go to `timing.csv` instead, so that
//! runs with the same seed give byte-identical metrics files.

use std::io::Write;
use std::path::Path;

use relrot_core::train::{EpochMetrics, TrainConfig};

use crate::error::{AppError, Result};

pub const METRICS_FILE: &str = "metrics.csv";
pub const TIMING_FILE: &str = "timing.csv";
pub const CONFIG_FILE: &str = "config.resolved";
pub const VERSION_LINE: &str = "# relrot-metrics v1";

pub const COLUMNS: [&str; 12] = [
    "epoch",
    "loss_main",
    "loss_pretext",
    "loss_entropy",
    "loss_adapt",
    "loss_total",
    "source_accuracy",
    "target_accuracy",
    "pretext_accuracy_source",
    "pretext_accuracy_target",
    "feature_norm_source",
    "feature_norm_target",
];

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

pub fn row(m: &EpochMetrics) -> Vec<String> {
    vec![
        m.epoch.to_string(),
        m.loss_main.to_string(),
        m.loss_pretext.to_string(),
        m.loss_entropy.to_string(),
        m.loss_adapt.to_string(),
        m.loss_total.to_string(),
        opt(m.source_accuracy),
        opt(m.target_accuracy),
        opt(m.pretext_accuracy_source),
        opt(m.pretext_accuracy_target),
        opt(m.feature_norm_source),
        opt(m.feature_norm_target),
    ]
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> AppError + '_ {
    move |e| AppError::Data(format!("{}: {e}", path.display()))
}

/// Appends one row per epoch; creates the file with its header on first use.
pub struct MetricsWriter {
    metrics: csv::Writer<std::fs::File>,
    timing: csv::Writer<std::fs::File>,
    path: std::path::PathBuf,
}

impl MetricsWriter {
    /// Start fresh files in `dir`, or append to existing ones when resuming.
    pub fn open(dir: &Path, resume: bool) -> Result<Self> {
        let path = dir.join(METRICS_FILE);
        let tpath = dir.join(TIMING_FILE);
        let fresh = !resume || !path.exists();
        let open = |p: &Path| {
            std::fs::OpenOptions::new()
                .create(true)
                .write(true)
                .append(!fresh)
                .truncate(fresh)
                .open(p)
                .map_err(|e| AppError::io(p, e))
        };
        let mut mf = open(&path)?;
        let tf = open(&tpath)?;
        if fresh {
            writeln!(mf, "{VERSION_LINE}").map_err(|e| AppError::io(&path, e))?;
        }
        let mut w = MetricsWriter {
            metrics: csv::Writer::from_writer(mf),
            timing: csv::Writer::from_writer(tf),
            path,
        };
        if fresh {
            w.metrics.write_record(COLUMNS).map_err(csv_err(&w.path))?;
            w.timing.write_record(["epoch", "wall_clock_s"]).map_err(csv_err(&w.path))?;
        }
        Ok(w)
    }

    pub fn append(&mut self, m: &EpochMetrics) -> Result<()> {
        self.metrics.write_record(row(m)).map_err(csv_err(&self.path))?;
        self.timing
            .write_record([m.epoch.to_string(), format!("{:.3}", m.wall_clock_s)])
            .map_err(csv_err(&self.path))?;
        self.metrics.flush().map_err(|e| AppError::io(&self.path, e))?;
        self.timing.flush().map_err(|e| AppError::io(&self.path, e))
    }
}

/// Rows of a metrics file as strings keyed by [`COLUMNS`], exactly as written.
pub fn read_metrics(path: &Path) -> Result<Vec<Vec<String>>> {
    let text = std::fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
    let body = text
        .strip_prefix(VERSION_LINE)
        .and_then(|s| s.strip_prefix('\n'))
        .ok_or_else(|| AppError::Data(format!("{}: missing or unknown version line", path.display())))?;
    let mut r = csv::Reader::from_reader(body.as_bytes());
    let header: Vec<String> = r.headers().map_err(csv_err(path))?.iter().map(String::from).collect();
    if header != COLUMNS {
        return Err(AppError::Data(format!("{}: unexpected columns {header:?}", path.display())));
    }
    r.records()
        .map(|rec| Ok(rec.map_err(csv_err(path))?.iter().map(String::from).collect()))
        .collect()
}

/// The configuration as TOML, exactly as the run used it.
pub fn resolved_config(config: &TrainConfig) -> String {
    toml::to_string(config).expect("config serializes")
}

pub fn write_resolved_config(dir: &Path, config: &TrainConfig) -> Result<()> {
    let p = dir.join(CONFIG_FILE);
    std::fs::write(&p, resolved_config(config)).map_err(|e| AppError::io(&p, e))
}
