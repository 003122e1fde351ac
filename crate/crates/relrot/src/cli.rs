//! Command-line entry points.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use relrot_core::data::{generate_toy_shift, Domain, PairedSample, ToyShiftSpec};
use relrot_core::model::PretextHeadKind;
use relrot_core::objectives::{Method, PretextDomains};
use relrot_core::rng::{self, streams};
use relrot_core::rotation::make_rotation_batch;
use serde::de::value::{Error as DeError, StrDeserializer};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::analyze::{embed_figure, saliency_figure, write_json};
use crate::checkpoint::load_checkpoint;
use crate::error::{AppError, Result};
use crate::manifest::load_manifest;
use crate::plot::panel_grid;
use crate::report::{emit_report, ReportFormat};
use crate::run::{evaluate_checkpoint, load_config, load_datasets, train_run};
use crate::toy::{load_spec, write_toy};

fn kebab<T: DeserializeOwned>(s: &str) -> std::result::Result<T, String> {
    T::deserialize(StrDeserializer::<DeError>::new(s)).map_err(|e| e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "relrot", version, about = "Relative-rotation domain adaptation for paired colour/depth data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the procedural toy shift as PNG images and two manifests.
    GenToy {
        /// TOML toy-shift specification; missing fields take defaults.
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Image grid of randomly rotated colour/depth pairs with their labels.
    DumpRotations {
        #[arg(long, default_value_t = 16)]
        n: usize,
        /// Manifest to draw samples from; a toy sample otherwise.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "rotations.png")]
        out: PathBuf,
    },
    /// Train a model; writes metrics.csv, timing.csv, config.resolved and checkpoint.bin.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_parser = kebab::<Method>)]
        method: Option<Method>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_parser = kebab::<PretextDomains>)]
        pretext_domains: Option<PretextDomains>,
        #[arg(long, value_parser = kebab::<PretextHeadKind>)]
        pretext_head: Option<PretextHeadKind>,
        /// Continue from this checkpoint, appending to the metrics files.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Main-head accuracy of a checkpoint on a labelled manifest, as JSON.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Only records of this split.
        #[arg(long)]
        split: Option<String>,
    },
    /// Saliency and embedding figures.
    Analyze {
        #[command(subcommand)]
        what: Analyze,
    },
    /// Summarise a run directory as markdown or HTML.
    Report {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, value_enum, default_value = "markdown")]
        format: ReportFormat,
    },
}

#[derive(Debug, Subcommand)]
pub enum Analyze {
    /// Guided backpropagation from the pretext head.
    Saliency {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 8)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = relrot_core::analysis::DEFAULT_PERCENTILE)]
        percentile: f64,
    },
    /// t-SNE of main-head features, source red and target blue.
    Embed {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 500)]
        max_per_domain: usize,
    },
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EvalOutput {
    pub accuracy: f64,
    pub per_class: Vec<Option<f64>>,
    pub samples: usize,
    pub classes: Vec<String>,
}

#[derive(Debug, Serialize)]
struct DumpEntry {
    sample_id: String,
    j: usize,
    k: usize,
    z: usize,
}

fn dump_rotations(n: usize, data: Option<&Path>, seed: u64, out: &Path) -> Result<()> {
    if n == 0 {
        return Err(AppError::Config("--n must be at least 1".into()));
    }
    let samples: Vec<PairedSample> = match data {
        Some(m) => load_manifest(m)?.load_samples(Domain::Source, None)?,
        None => {
            let spec = ToyShiftSpec {
                samples_per_domain: 4,
                seed,
                ..ToyShiftSpec::default()
            };
            generate_toy_shift(&spec).map_err(AppError::data)?.source
        }
    };
    let refs: Vec<&PairedSample> = samples.iter().cycle().take(n).collect();
    let batch = make_rotation_batch(&refs, &mut rng::stream(seed, streams::DUMP)).map_err(AppError::data)?;
    // four pairs per row, colour then depth
    let rows: Vec<Vec<relrot_core::Image>> = (0..n)
        .collect::<Vec<_>>()
        .chunks(4)
        .map(|c| c.iter().flat_map(|&i| [batch.color[i].clone(), batch.depth[i].clone()]).collect())
        .collect();
    panel_grid(&rows, 2, 4).save(out)?;
    let entries: Vec<DumpEntry> = (0..n)
        .map(|i| DumpEntry {
            sample_id: batch.ids[i].clone(),
            j: batch.j[i],
            k: batch.k[i],
            z: batch.z[i],
        })
        .collect();
    for (i, e) in entries.iter().enumerate() {
        println!("{i:3} {} j={} k={} z={}", e.sample_id, e.j, e.k, e.z);
    }
    write_json(&out.with_extension("json"), &entries)
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenToy { spec, out } => {
            let spec = load_spec(&spec)?;
            let (s, t) = write_toy(&spec, &out)?;
            println!("wrote {} and {}", s.display(), t.display());
        }
        Command::DumpRotations { n, data, seed, out } => dump_rotations(n, data.as_deref(), seed, &out)?,
        Command::Train {
            config,
            source,
            target,
            out,
            method,
            seed,
            pretext_domains,
            pretext_head,
            resume,
        } => {
            let mut cfg = load_config(&config)?;
            if let Some(m) = method {
                cfg.method = m;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(d) = pretext_domains {
                cfg.pretext_domains = d;
            }
            if let Some(h) = pretext_head {
                cfg.pretext_head = h;
            }
            cfg.validate().map_err(AppError::config)?;
            let (classes, s, t) = load_datasets(&source, &target)?;
            train_run(&cfg, &classes, &s, &t, &out, resume.as_deref(), |m| {
                let acc = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
                eprintln!(
                    "epoch {:3}  loss {:.4}  source {}  target {}  pretext {}/{}  {:.1}s",
                    m.epoch,
                    m.loss_total,
                    acc(m.source_accuracy),
                    acc(m.target_accuracy),
                    acc(m.pretext_accuracy_source),
                    acc(m.pretext_accuracy_target),
                    m.wall_clock_s
                );
            })?;
        }
        Command::Eval { checkpoint, data, split } => {
            let mut ck = load_checkpoint(&checkpoint)?;
            let m = load_manifest(&data)?;
            if m.classes != ck.classes {
                return Err(AppError::Data(format!("manifest classes {:?} differ from the checkpoint's {:?}", m.classes, ck.classes)));
            }
            let samples = m.load_samples(Domain::Target, split.as_deref())?;
            let ev = evaluate_checkpoint(&mut ck, &samples)?;
            let out = EvalOutput {
                accuracy: ev.accuracy,
                per_class: ev.per_class,
                samples: ev.samples,
                classes: ck.classes,
            };
            println!("{}", serde_json::to_string_pretty(&out).expect("serializes"));
        }
        Command::Analyze { what } => match what {
            Analyze::Saliency {
                checkpoint,
                data,
                n,
                out,
                percentile,
            } => {
                let mut ck = load_checkpoint(&checkpoint)?;
                let samples = load_manifest(&data)?.load_samples(Domain::Target, None)?;
                let (png, json) = saliency_figure(&mut ck, &checkpoint.display().to_string(), &samples, n, percentile, &out)?;
                println!("wrote {} and {}", png.display(), json.display());
            }
            Analyze::Embed {
                checkpoint,
                source,
                target,
                out,
                max_per_domain,
            } => {
                let mut ck = load_checkpoint(&checkpoint)?;
                let (_, s, t) = load_datasets(&source, &target)?;
                let (png, json, sep) = embed_figure(&mut ck, &checkpoint.display().to_string(), &s, &t, max_per_domain, &out)?;
                println!("wrote {} and {}; 1-NN domain separability {sep:.4}", png.display(), json.display());
            }
        },
        Command::Report { run, format } => {
            let r = emit_report(&run, format)?;
            println!("wrote {}", r.path.display());
            for m in &r.missing {
                eprintln!("missing: {m}");
            }
        }
    }
    Ok(())
}
