//! Training runs on disk: configuration files, the epoch loop with its
//! metrics and checkpoints, and evaluation of saved models.

use std::path::Path;
use std::time::Instant;

use relrot_core::data::{Domain, PairedSample};
use relrot_core::train::{evaluate, EpochMetrics, Evaluation, TrainConfig, Trainer};
use relrot_core::Error as CoreError;

use crate::checkpoint::{load_checkpoint_into, save_checkpoint, Checkpoint};
use crate::error::{AppError, Result};
use crate::manifest::load_manifest;
use crate::metrics::{write_resolved_config, MetricsWriter};

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const NAN_DUMP_FILE: &str = "nonfinite-batch.json";

pub fn parse_config(text: &str) -> Result<TrainConfig> {
    let cfg: TrainConfig = toml::from_str(text).map_err(|e| AppError::Config(e.to_string()))?;
    cfg.validate().map_err(AppError::config)?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<TrainConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
    parse_config(&text).map_err(|e| match e {
        AppError::Config(m) => AppError::Config(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Samples of both manifests; the class tables must agree.
pub fn load_datasets(source: &Path, target: &Path) -> Result<(Vec<String>, Vec<PairedSample>, Vec<PairedSample>)> {
    let sm = load_manifest(source)?;
    let tm = load_manifest(target)?;
    if sm.classes != tm.classes {
        return Err(AppError::Data(format!(
            "class tables differ: {} has {:?}, {} has {:?}",
            source.display(),
            sm.classes,
            target.display(),
            tm.classes
        )));
    }
    let s = sm.load_samples(Domain::Source, None)?;
    let t = tm.load_samples(Domain::Target, None)?;
    Ok((sm.classes, s, t))
}

/// Train for the configured epochs, writing `config.resolved`, `metrics.csv`,
/// `timing.csv` and `checkpoint.bin` into `out`. With `resume`, training
/// continues after the checkpoint's epoch and the metrics files are extended.
pub fn train_run(
    config: &TrainConfig,
    classes: &[String],
    source: &[PairedSample],
    target: &[PairedSample],
    out: &Path,
    resume: Option<&Path>,
    mut progress: impl FnMut(&EpochMetrics),
) -> Result<Trainer> {
    config.validate().map_err(AppError::config)?;
    std::fs::create_dir_all(out).map_err(|e| AppError::io(out, e))?;
    let native = relrot_core::train::check_datasets(classes.len(), source, target).map_err(AppError::data)?;
    let mut trainer = match resume {
        Some(p) => {
            let ck = load_checkpoint_into(p, config)?;
            if ck.classes != classes {
                return Err(AppError::Data(format!("checkpoint classes {:?} differ from the data's {classes:?}", ck.classes)));
            }
            ck.into_trainer(config.clone())?
        }
        None => Trainer::new(config.clone(), classes.len(), native).map_err(AppError::config)?,
    };
    write_resolved_config(out, config)?;
    let mut writer = MetricsWriter::open(out, resume.is_some())?;
    while !trainer.finished() {
        let t = Instant::now();
        let mut m = match trainer.run_epoch(source, target) {
            Ok(m) => m,
            Err(CoreError::NonFiniteLoss { epoch, iteration, ids }) => {
                let p = out.join(NAN_DUMP_FILE);
                let dump = serde_json::json!({ "epoch": epoch, "iteration": iteration, "batch_ids": ids });
                std::fs::write(&p, serde_json::to_string_pretty(&dump).unwrap()).map_err(|e| AppError::io(&p, e))?;
                return Err(AppError::Numerical(format!(
                    "non-finite loss at epoch {epoch}, iteration {iteration}; batch ids written to {}",
                    p.display()
                )));
            }
            Err(e) => return Err(AppError::data(e)),
        };
        m.wall_clock_s = t.elapsed().as_secs_f64();
        writer.append(&m)?;
        save_checkpoint(&out.join(CHECKPOINT_FILE), &Checkpoint::from_trainer(&trainer, classes))?;
        progress(&m);
    }
    Ok(trainer)
}

/// Main-head accuracy of a saved model on labelled samples.
pub fn evaluate_checkpoint(ck: &mut Checkpoint, samples: &[PairedSample]) -> Result<Evaluation> {
    evaluate(&mut ck.model, samples, ck.config.transform, ck.config.batch_size).map_err(AppError::data)
}
