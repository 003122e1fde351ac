//! The epoch loop.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::eval::{evaluate, input_tensors, predict_dataset};
use super::step::{accumulate_gradients, PretextBatch, StepBatch, StepRngs};
use super::{Sgd, TrainConfig};
use crate::data::{Domain, PairedSample};
use crate::model::ModelBundle;
use crate::nn::Module;
use crate::objectives::{Method, PretextDomains};
use crate::rng::{self, Rng};
use crate::rotation::{make_absolute_rotation_batch, make_rotation_batch, RotationBatch};
use crate::{Error, Image, Real, Result};

/// One row of the metrics file. Losses are means over the epoch's iterations;
/// accuracies and feature norms come from the evaluation pass and are absent
/// on epochs without one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    /// 1-based.
    pub epoch: usize,
    pub loss_main: f64,
    pub loss_pretext: f64,
    pub loss_entropy: f64,
    pub loss_adapt: f64,
    pub loss_total: f64,
    pub source_accuracy: Option<f64>,
    /// Needs target labels, which are read only here.
    pub target_accuracy: Option<f64>,
    /// Pretext accuracy on the epoch's training batches.
    pub pretext_accuracy_source: Option<f64>,
    pub pretext_accuracy_target: Option<f64>,
    /// Mean norm of the main head's last hidden layer.
    pub feature_norm_source: Option<f64>,
    pub feature_norm_target: Option<f64>,
    /// Filled in by callers that own a clock.
    pub wall_clock_s: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub epochs: Vec<EpochMetrics>,
}

/// Common square side of all samples, after checking the training contract.
pub fn check_datasets(classes: usize, source: &[PairedSample], target: &[PairedSample]) -> Result<usize> {
    if source.is_empty() {
        return Err(Error::EmptyDataset("source dataset is empty".into()));
    }
    if target.is_empty() {
        return Err(Error::EmptyDataset("target dataset is empty".into()));
    }
    let side = source[0].color.height();
    for s in source.iter().chain(target) {
        let (h, w) = s.size();
        if h != w || h != side {
            return Err(Error::Shape(format!("sample {} is {h}x{w}; all samples must be {side}x{side}", s.id)));
        }
        if s.depth.channels() != 3 {
            return Err(Error::InvalidArgument(format!("sample {} has raw depth; colorize it first", s.id)));
        }
    }
    for s in source {
        match s.label {
            None => return Err(Error::Unlabeled(format!("source sample {} has no label", s.id))),
            Some(y) if y >= classes => {
                return Err(Error::InvalidArgument(format!("sample {}: label {y} out of range for {classes} classes", s.id)))
            }
            _ => {}
        }
    }
    if source.len() < 2 {
        return Err(Error::EmptyDataset("source dataset needs at least 2 samples".into()));
    }
    Ok(side)
}

/// Random streams of one epoch; each is derived from `(seed, epoch)` so a
/// resumed run draws exactly what an uninterrupted one would.
struct EpochRngs {
    shuffle_source: Rng,
    shuffle_target: Rng,
    rotate_source: Rng,
    rotate_target: Rng,
    augment: Rng,
    step: StepRngs,
}

impl EpochRngs {
    fn new(seed: u64, epoch: u64) -> Self {
        use rng::streams::*;
        EpochRngs {
            shuffle_source: rng::substream(seed, SHUFFLE_SOURCE, epoch),
            shuffle_target: rng::substream(seed, SHUFFLE_TARGET, epoch),
            rotate_source: rng::substream(seed, ROTATE_SOURCE, epoch),
            rotate_target: rng::substream(seed, ROTATE_TARGET, epoch),
            augment: rng::substream(seed, AUGMENT, epoch),
            step: StepRngs::new(seed, epoch),
        }
    }
}

/// Endless shuffled pass over the target set.
struct TargetCycle {
    order: Vec<usize>,
    cursor: usize,
}

impl TargetCycle {
    fn new(n: usize, rng: &mut Rng) -> Self {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        TargetCycle { order, cursor: 0 }
    }

    fn take(&mut self, k: usize, rng: &mut Rng) -> Vec<usize> {
        let mut out = Vec::with_capacity(k);
        while out.len() < k {
            if self.cursor == self.order.len() {
                self.order.shuffle(rng);
                self.cursor = 0;
            }
            out.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        out
    }
}

fn pretext_batch<T: Real>(rb: RotationBatch) -> Result<PretextBatch<T>> {
    Ok(PretextBatch {
        color: Image::batch(&rb.color.iter().collect::<Vec<_>>())?,
        depth: Image::batch(&rb.depth.iter().collect::<Vec<_>>())?,
        labels: rb.z,
        ids: rb.ids,
    })
}

/// Training state: weights, optimizer and the number of completed epochs.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub config: TrainConfig,
    pub model: ModelBundle<f32>,
    pub optimizer: Sgd<f32>,
    pub epoch: usize,
}

impl Trainer {
    /// Fresh run for `classes` classes on samples of side `native`.
    pub fn new(config: TrainConfig, classes: usize, native: usize) -> Result<Self> {
        config.validate()?;
        let model = ModelBundle::new(config.model_spec(classes, native), config.seed)?;
        Ok(Self::resume(config, model, Sgd::new(0.0, 0.0, 0.0, true), 0))
    }

    /// Continue from saved state; `epoch` epochs are already complete.
    pub fn resume(config: TrainConfig, model: ModelBundle<f32>, optimizer: Sgd<f32>, epoch: usize) -> Self {
        let mut optimizer = optimizer;
        optimizer.lr = config.lr;
        optimizer.momentum = config.momentum;
        optimizer.weight_decay = config.weight_decay;
        optimizer.decay_norm_params = config.decay_norm_params;
        Trainer {
            config,
            model,
            optimizer,
            epoch,
        }
    }

    pub fn finished(&self) -> bool {
        self.epoch >= self.config.epochs
    }

    fn needs_target(&self) -> bool {
        self.config.target_in_main_pass()
    }

    /// Run the next epoch. Target labels are read only by the evaluation pass.
    pub fn run_epoch(&mut self, source: &[PairedSample], target: &[PairedSample]) -> Result<EpochMetrics> {
        check_datasets(self.model.spec.classes, source, target)?;
        let cfg = self.config.clone();
        let e = self.epoch;
        let mut r = EpochRngs::new(cfg.seed, e as u64);
        let mut order: Vec<usize> = (0..source.len()).collect();
        order.shuffle(&mut r.shuffle_source);
        let mut cycle = TargetCycle::new(target.len(), &mut r.shuffle_target);
        let bs = cfg.batch_size;
        let iters = source.len().div_ceil(bs);
        let total_iters = (cfg.epochs * iters) as f64;

        let mut sums = [0.0f64; 5];
        let mut pretext = [(0usize, 0usize); 2];
        for it in 0..iters {
            let mut idx = order[it * bs..((it + 1) * bs).min(source.len())].to_vec();
            if idx.len() < 2 {
                // batch normalisation needs two samples; borrow one from the front
                idx.push(order[0]);
            }
            let src: Vec<PairedSample> = idx.iter().map(|&i| cfg.transform.apply(&source[i], Some(&mut r.augment))).collect();
            let tgt: Vec<PairedSample> = if self.needs_target() {
                cycle
                    .take(bs, &mut r.shuffle_target)
                    .iter()
                    .map(|&i| cfg.transform.apply(&target[i], Some(&mut r.augment)).without_label())
                    .collect()
            } else {
                Vec::new()
            };
            let batch = build_step_batch(&cfg, &src, &tgt, &mut r.rotate_source, &mut r.rotate_target)?;
            let progress = ((e * iters + it) as f64 / total_iters).min(1.0);
            self.model.zero_grad();
            let out = accumulate_gradients(&mut self.model, &batch, &cfg, progress, &mut r.step)?;
            let rep = out.report;
            if !rep.total.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch: e + 1,
                    iteration: it,
                    ids: batch.all_ids(),
                });
            }
            self.optimizer.step(&mut self.model);
            for (s, v) in sums.iter_mut().zip([rep.main, rep.pretext, rep.entropy, rep.adapt, rep.total]) {
                *s += v;
            }
            for (acc, (c, n)) in pretext.iter_mut().zip([out.pretext_source, out.pretext_target]) {
                acc.0 += c;
                acc.1 += n;
            }
        }
        self.epoch += 1;

        let n = iters as f64;
        let ratio = |(c, n): (usize, usize)| (n > 0).then(|| c as f64 / n as f64);
        let mut m = EpochMetrics {
            epoch: self.epoch,
            loss_main: sums[0] / n,
            loss_pretext: sums[1] / n,
            loss_entropy: sums[2] / n,
            loss_adapt: sums[3] / n,
            loss_total: sums[4] / n,
            source_accuracy: None,
            target_accuracy: None,
            pretext_accuracy_source: ratio(pretext[0]),
            pretext_accuracy_target: ratio(pretext[1]),
            feature_norm_source: None,
            feature_norm_target: None,
            wall_clock_s: 0.0,
        };
        if self.epoch % cfg.eval_every == 0 || self.epoch == cfg.epochs {
            let ev = evaluate(&mut self.model, source, cfg.transform, bs)?;
            m.source_accuracy = Some(ev.accuracy);
            m.feature_norm_source = Some(ev.mean_feature_norm);
            if target.iter().all(|s| s.label.is_some()) {
                let ev = evaluate(&mut self.model, target, cfg.transform, bs)?;
                m.target_accuracy = Some(ev.accuracy);
                m.feature_norm_target = Some(ev.mean_feature_norm);
            } else {
                let p = predict_dataset(&mut self.model, target, cfg.transform, bs)?;
                m.feature_norm_target = Some(p.mean_feature_norm());
            }
        }
        Ok(m)
    }
}

/// Inputs of one iteration: the source batch, the unrotated target batch when
/// entropy or adaptation reads it, and the rotated pretext batches. `tgt`
/// must already be stripped of labels.
pub fn build_step_batch<T: Real>(
    cfg: &TrainConfig,
    src: &[PairedSample],
    tgt: &[PairedSample],
    rotate_source: &mut Rng,
    rotate_target: &mut Rng,
) -> Result<StepBatch<T>> {
    let src_refs: Vec<&PairedSample> = src.iter().collect();
    let tgt_refs: Vec<&PairedSample> = tgt.iter().collect();
    let (sc, sd) = input_tensors(&src_refs)?;
    let target = if cfg.target_in_main_pass() {
        Some(input_tensors(&tgt_refs)?)
    } else {
        None
    };
    let rotate = |refs: &[&PairedSample], rng: &mut Rng| -> Result<PretextBatch<T>> {
        let rb = match cfg.method {
            Method::AbsoluteRotation => make_absolute_rotation_batch(refs, rng)?,
            _ => make_rotation_batch(refs, rng)?,
        };
        pretext_batch(rb)
    };
    let (mut ps, mut pt) = (None, None);
    if cfg.pretext_active() {
        if cfg.pretext_domains == PretextDomains::Both {
            ps = Some(rotate(&src_refs, rotate_source)?);
        }
        pt = Some(rotate(&tgt_refs, rotate_target)?);
    }
    if let Some(s) = tgt.iter().find(|s| s.label.is_some() || s.domain != Domain::Target) {
        return Err(Error::InvalidArgument(format!("target batch sample {} is labelled or not a target sample", s.id)));
    }
    Ok(StepBatch {
        source_ids: src.iter().map(|s| s.id.clone()).collect(),
        source_color: sc,
        source_depth: sd,
        source_labels: src
            .iter()
            .map(|s| s.label.ok_or_else(|| Error::Unlabeled(s.id.clone())))
            .collect::<Result<_>>()?,
        target_ids: tgt.iter().map(|s| s.id.clone()).collect(),
        target,
        pretext_source: ps,
        pretext_target: pt,
    })
}

/// Train for `config.epochs` epochs from scratch.
pub fn train(
    config: &TrainConfig,
    classes: usize,
    source: &[PairedSample],
    target: &[PairedSample],
) -> Result<(ModelBundle<f32>, RunMetrics)> {
    let side = check_datasets(classes, source, target)?;
    let mut trainer = Trainer::new(config.clone(), classes, side)?;
    let mut metrics = RunMetrics::default();
    while !trainer.finished() {
        metrics.epochs.push(trainer.run_epoch(source, target)?);
    }
    Ok((trainer.model, metrics))
}
