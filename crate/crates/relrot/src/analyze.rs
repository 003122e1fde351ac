//! Saliency and embedding figures with their JSON sidecars.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng as _;
use relrot_core::analysis::{
    binarize_saliency, domain_separability, embed_features_2d, guided_backprop, Reduction, TsneConfig,
};
use relrot_core::data::{Domain, PairedSample};
use relrot_core::rng::{self, streams};
use relrot_core::rotation::rot90_image;
use serde::Serialize;

use crate::checkpoint::Checkpoint;
use crate::error::{AppError, Result};
use crate::plot::{binary_image, heatmap, panel_grid, scatter};

pub const SALIENCY_PNG: &str = "saliency.png";
pub const SALIENCY_JSON: &str = "saliency.json";
pub const EMBED_PNG: &str = "embedding.png";
pub const EMBED_JSON: &str = "embedding.json";

#[derive(Debug, Clone, Serialize)]
pub struct SaliencyEntry {
    pub sample_id: String,
    pub class_label: Option<usize>,
    pub turns: (usize, usize),
    pub pretext_label: usize,
    pub predicted_pretext_label: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct SaliencySidecar {
    pub checkpoint: String,
    pub percentile: f64,
    pub reduction: Reduction,
    /// Panels of each row, left to right.
    pub columns: Vec<&'static str>,
    pub samples: Vec<SaliencyEntry>,
}

/// Indices of `min(n, len)` samples in a seeded order.
pub fn pick(len: usize, n: usize, seed: u64, stream: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..len).collect();
    idx.shuffle(&mut rng::stream(seed, stream));
    idx.truncate(n.min(len));
    idx
}

/// Guided-backpropagation figure for `n` seeded picks of `samples`, each
/// under a random rotation pair. One row per sample: rotated colour, rotated
/// depth, both relevance maps in the rotated frame and the binarised mean map.
pub fn saliency_figure(
    ck: &mut Checkpoint,
    checkpoint_name: &str,
    samples: &[PairedSample],
    n: usize,
    percentile: f64,
    out: &Path,
) -> Result<(PathBuf, PathBuf)> {
    if n == 0 {
        return Err(AppError::Config("--n must be at least 1".into()));
    }
    let seed = ck.config.seed;
    let mut r = rng::substream(seed, streams::SALIENCY_PICK, 1);
    let view = relrot_core::train::eval_view(samples, ck.config.transform);
    let mut rows = Vec::new();
    let mut entries = Vec::new();
    for i in pick(view.len(), n, seed, streams::SALIENCY_PICK) {
        let s = &view[i];
        let turns = (r.random_range(0..4), r.random_range(0..4));
        let map = guided_backprop(&mut ck.model, s, turns, None, Reduction::ChannelMax).map_err(AppError::data)?;
        let (h, w) = (map.height, map.width);
        let rot = |img: &relrot_core::Image, t: usize| rot90_image(img, t).map_err(AppError::data);
        let binary = match binarize_saliency(&map.combined(), percentile) {
            Ok(b) => b,
            Err(relrot_core::Error::DegenerateSaliency) => vec![0; h * w],
            Err(e) => return Err(AppError::data(e)),
        };
        let mut row = vec![rot(&s.color, turns.0)?, rot(&s.depth, turns.1)?, rot(&heatmap(&map.color, h, w), turns.0)?];
        if !map.depth.is_empty() {
            row.push(rot(&heatmap(&map.depth, h, w), turns.1)?);
        }
        row.push(rot(&binary_image(&binary, h, w), turns.0)?);
        rows.push(row);
        entries.push(SaliencyEntry {
            sample_id: s.id.clone(),
            class_label: s.label,
            turns,
            pretext_label: map.true_label,
            predicted_pretext_label: map.predicted_label,
        });
    }
    std::fs::create_dir_all(out).map_err(|e| AppError::io(out, e))?;
    let png = out.join(SALIENCY_PNG);
    panel_grid(&rows, 2, 4).save(&png)?;
    let color_only = rows.first().is_some_and(|r| r.len() == 4);
    let columns = if color_only {
        vec!["color", "depth", "color relevance", "binary relevance"]
    } else {
        vec!["color", "depth", "color relevance", "depth relevance", "binary mean relevance"]
    };
    let sidecar = SaliencySidecar {
        checkpoint: checkpoint_name.to_string(),
        percentile,
        reduction: Reduction::ChannelMax,
        columns,
        samples: entries,
    };
    let json = out.join(SALIENCY_JSON);
    write_json(&json, &sidecar)?;
    Ok((png, json))
}

#[derive(Debug, Clone, Serialize)]
pub struct EmbedSidecar {
    pub checkpoint: String,
    pub tsne: TsneConfig,
    pub domain_separability: f64,
    pub ids: Vec<String>,
    pub domains: Vec<Domain>,
    pub labels: Vec<Option<usize>>,
    pub points: Vec<[f64; 2]>,
}

/// t-SNE scatter of main-head features, at most `max_per_domain` seeded
/// picks per domain; source red, target blue.
pub fn embed_figure(
    ck: &mut Checkpoint,
    checkpoint_name: &str,
    source: &[PairedSample],
    target: &[PairedSample],
    max_per_domain: usize,
    out: &Path,
) -> Result<(PathBuf, PathBuf, f64)> {
    let seed = ck.config.seed;
    let sub = |set: &[PairedSample], salt: u64| -> Vec<PairedSample> {
        let mut idx = pick(set.len(), max_per_domain, seed ^ salt, streams::EMBED_PICK);
        idx.sort_unstable();
        idx.into_iter().map(|i| set[i].clone()).collect()
    };
    let s = sub(source, 0);
    let t = sub(target, 1);
    let tsne = TsneConfig {
        seed,
        ..TsneConfig::default()
    };
    if s.len() + t.len() < tsne.min_samples() {
        return Err(AppError::Data(format!(
            "perplexity {} needs at least {} samples, got {}",
            tsne.perplexity,
            tsne.min_samples(),
            s.len() + t.len()
        )));
    }
    let e = embed_features_2d(&mut ck.model, &s, &t, ck.config.transform, &tsne).map_err(AppError::data)?;
    let sep = domain_separability(&e.points, &e.domains).map_err(AppError::data)?;
    std::fs::create_dir_all(out).map_err(|e| AppError::io(out, e))?;
    let png = out.join(EMBED_PNG);
    scatter(&e.points, &e.domains, 512).save(&png)?;
    let json = out.join(EMBED_JSON);
    write_json(
        &json,
        &EmbedSidecar {
            checkpoint: checkpoint_name.to_string(),
            tsne,
            domain_separability: sep,
            ids: e.ids,
            domains: e.domains,
            labels: e.labels,
            points: e.points,
        },
    )?;
    Ok((png, json, sep))
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("sidecar serializes");
    std::fs::write(path, text + "\n").map_err(|e| AppError::io(path, e))
}
