//! One optimisation step's losses and gradients.

use alloc::string::String;
use alloc::vec::Vec;


use super::TrainConfig;
use crate::data::Domain;
use crate::model::{ModelBundle, PretextInput};
use crate::nn::{global_avg_pool, global_avg_pool_backward, softmax_backward, Mode, ReluMode};
use crate::objectives::{
    afn_adapt, combine, entropy_loss, grl_adapt, main_loss, mmd_loss, pretext_loss, LossReport, LossTerms, Method,
    PretextDomains,
};
use crate::rng::{self, Rng};
use crate::{Real, Result, Tensor};

/// Rotated inputs for the pretext head.
#[derive(Debug, Clone)]
pub struct PretextBatch<T> {
    pub ids: Vec<String>,
    pub color: Tensor<T>,
    pub depth: Tensor<T>,
    pub labels: Vec<usize>,
}

/// Everything one iteration reads. Target tensors carry no labels.
#[derive(Debug, Clone)]
pub struct StepBatch<T> {
    pub source_ids: Vec<String>,
    pub source_color: Tensor<T>,
    pub source_depth: Tensor<T>,
    pub source_labels: Vec<usize>,
    pub target_ids: Vec<String>,
    /// Unrotated target inputs, present when entropy or adaptation needs them.
    pub target: Option<(Tensor<T>, Tensor<T>)>,
    pub pretext_source: Option<PretextBatch<T>>,
    pub pretext_target: Option<PretextBatch<T>>,
}

impl<T> StepBatch<T> {
    /// Ids of every sample that entered the step.
    pub fn all_ids(&self) -> Vec<String> {
        let mut ids = self.source_ids.clone();
        ids.extend(self.target_ids.iter().cloned());
        for p in [&self.pretext_source, &self.pretext_target].into_iter().flatten() {
            ids.extend(p.ids.iter().cloned());
        }
        ids
    }
}

/// Dropout streams of the main and pretext head passes.
#[derive(Debug, Clone)]
pub struct StepRngs {
    pub main: Rng,
    pub pretext: Rng,
}

impl StepRngs {
    pub fn new(seed: u64, epoch: u64) -> Self {
        use rng::streams::*;
        StepRngs {
            main: rng::substream(seed, DROPOUT_MAIN, epoch),
            pretext: rng::substream(seed, DROPOUT_PRETEXT, epoch),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub report: LossReport,
    /// Correct and total pretext predictions per domain.
    pub pretext_source: (usize, usize),
    pub pretext_target: (usize, usize),
}

fn f64_of<T: Real>(v: T) -> f64 {
    v.to_f64().unwrap_or(f64::NAN)
}

pub(crate) fn argmax_rows<T: Real>(probs: &Tensor<T>) -> Vec<usize> {
    let (n, k) = probs.dims2();
    (0..n)
        .map(|i| {
            let row = &probs.data()[i * k..(i + 1) * k];
            let mut best = 0;
            for c in 1..k {
                if row[c] > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

fn count_correct(pred: &[usize], labels: &[usize]) -> (usize, usize) {
    (pred.iter().zip(labels).filter(|(a, b)| a == b).count(), labels.len())
}

fn scaled<T: Real>(mut t: Tensor<T>, s: f64) -> Tensor<T> {
    t.scale(T::lit(s));
    t
}

fn joined<T: Real>(a: &Tensor<T>, b: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    match b {
        Some(b) => Tensor::concat_rows(a, b),
        None => Ok(a.clone()),
    }
}

fn missing(what: &str) -> crate::Error {
    crate::Error::InvalidArgument(alloc::format!("step needs {what}"))
}

/// Which parts of the objective are backpropagated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backprop {
    All,
    /// Everything except the pretext term.
    MainOnly,
    PretextOnly,
}

/// Forward every active term, then backpropagate the weighted total once,
/// accumulating into the model's parameter gradients. `progress` in `[0, 1]`
/// drives the gradient-reversal schedule.
///
/// Source and target inputs that meet the same network share one forward
/// pass, so batch normalisation sees both domains together, as it does
/// through its running statistics at evaluation time.
pub fn accumulate_gradients<T: Real>(
    model: &mut ModelBundle<T>,
    batch: &StepBatch<T>,
    config: &TrainConfig,
    progress: f64,
    rngs: &mut StepRngs,
) -> Result<StepOutput> {
    accumulate_parts(model, batch, config, progress, rngs, Backprop::All)
}

/// As [`accumulate_gradients`], restricted to part of the objective. Every
/// term is still evaluated, so the random streams advance identically.
pub fn accumulate_parts<T: Real>(
    model: &mut ModelBundle<T>,
    batch: &StepBatch<T>,
    config: &TrainConfig,
    progress: f64,
    rngs: &mut StepRngs,
    parts: Backprop,
) -> Result<StepOutput> {
    let relu = ReluMode::Standard;
    let mut out = StepOutput {
        report: LossReport::default(),
        pretext_source: (0, 0),
        pretext_target: (0, 0),
    };
    let mut terms = LossTerms::default();

    // main head over source, plus target when a target term is active
    let with_target = config.target_in_main_pass();
    let target = if with_target {
        Some(batch.target.as_ref().ok_or_else(|| missing("a target batch"))?)
    } else {
        None
    };
    let ns = batch.source_labels.len();
    let color = joined(&batch.source_color, target.map(|t| &t.0))?;
    let depth = joined(&batch.source_depth, target.map(|t| &t.1))?;
    let (fused, fcache) = model.extract_features(&color, &depth, Mode::Train)?;
    let (head, hcache) = model.main_forward(&fused, Mode::Train, Some(&mut rngs.main))?;
    let (ps, pt) = head.probs.split_rows(ns);
    let lm = main_loss(&batch.source_labels, &ps)?;
    terms.main = f64_of(lm.value);
    let mut g_probs = lm.grad;
    let mut g_hidden: Option<Tensor<T>> = None;
    let mut g_fused_extra: Option<Tensor<T>> = None;
    if with_target {
        let g_target = if config.entropy_active() {
            let le = entropy_loss(&pt)?;
            terms.entropy = Some(f64_of(le.value));
            scaled(le.grad, config.lambda_entropy)
        } else {
            Tensor::zeros(pt.shape())
        };
        g_probs = Tensor::concat_rows(&g_probs, &g_target)?;
    }
    if config.adapt_active() {
        let w = config.lambda_adapt;
        let (hs, ht) = head.hidden.split_rows(ns);
        match config.method {
            Method::Mmd => {
                let l = mmd_loss(&hs, &ht)?;
                terms.adapt = Some(f64_of(l.value));
                g_hidden = Some(scaled(Tensor::concat_rows(&l.source_grad, &l.target_grad)?, w));
            }
            Method::Afn => {
                let l = afn_adapt(&hs, &ht, config.afn_delta_r)?;
                terms.adapt = Some(f64_of(l.value));
                g_hidden = Some(scaled(Tensor::concat_rows(&l.source_grad, &l.target_grad)?, w));
            }
            Method::Grl => {
                let pooled = global_avg_pool(&fused);
                let n = pooled.dims2().0;
                let mut domains = alloc::vec![Domain::Source; ns];
                domains.resize(n, Domain::Target);
                let disc = model.domain.as_mut().ok_or_else(|| missing("a domain discriminator"))?;
                let l = grl_adapt(&pooled, &domains, disc, progress.clamp(0.0, 1.0), T::lit(w))?;
                terms.adapt = Some(f64_of(l.value));
                let (_, _, h, wd) = fused.dims4();
                g_fused_extra = Some(global_avg_pool_backward(&l.feature_grad, h, wd));
            }
            _ => unreachable!("adaptation term for a method without one"),
        }
    }

    if config.pretext_active() {
        let both = config.pretext_domains == PretextDomains::Both;
        let tgt = batch.pretext_target.as_ref().ok_or_else(|| missing("a rotated target batch"))?;
        let src = if both {
            Some(batch.pretext_source.as_ref().ok_or_else(|| missing("a rotated source batch"))?)
        } else {
            None
        };
        let nps = src.map_or(0, |s| s.labels.len());
        let rc = match src {
            Some(s) => Tensor::concat_rows(&s.color, &tgt.color)?,
            None => tgt.color.clone(),
        };
        let (map, pcache) = match model.spec.pretext_input {
            PretextInput::Fused => {
                let rd = match src {
                    Some(s) => Tensor::concat_rows(&s.depth, &tgt.depth)?,
                    None => tgt.depth.clone(),
                };
                let (m, c) = model.extract_features(&rc, &rd, Mode::Train)?;
                (m, PretextFeatures::Fused(c))
            }
            PretextInput::Color => {
                let (m, c) = model.color.forward(&rc, Mode::Train)?;
                (m, PretextFeatures::Color(c))
            }
        };
        let (pout, phead) = model.pretext_forward(&map, Mode::Train, Some(&mut rngs.pretext))?;
        let (pps, ppt) = pout.probs.split_rows(nps);
        let lp = pretext_loss(
            src.map(|s| (s.labels.as_slice(), &pps)),
            Some((tgt.labels.as_slice(), &ppt)),
            config.pretext_domains,
        )?;
        terms.pretext = Some(f64_of(lp.value));
        if let Some(s) = src {
            out.pretext_source = count_correct(&argmax_rows(&pps), &s.labels);
        }
        out.pretext_target = count_correct(&argmax_rows(&ppt), &tgt.labels);
        if parts != Backprop::MainOnly {
            let g = match (lp.source_grad, lp.target_grad) {
                (Some(a), Some(b)) => Tensor::concat_rows(&a, &b)?,
                (None, Some(b)) => b,
                _ => return Err(missing("a target pretext gradient")),
            };
            let g_logits = softmax_backward(&pout.probs, &scaled(g, config.lambda_pretext));
            let g_map = model.pretext.backward(&phead, &g_logits, relu)?;
            match &pcache {
                PretextFeatures::Fused(c) => {
                    model.features_backward(c, &g_map, relu, false)?;
                }
                PretextFeatures::Color(c) => {
                    model.color.backward(c, &g_map, relu, false)?;
                }
            }
        }
    }

    if parts != Backprop::PretextOnly {
        let g_logits = softmax_backward(&head.probs, &g_probs);
        let mut g_fused = model.main.backward(&hcache, &g_logits, g_hidden.as_ref(), relu)?;
        if let Some(extra) = &g_fused_extra {
            g_fused.add_assign(extra);
        }
        model.features_backward(&fcache, &g_fused, relu, false)?;
    }

    out.report = combine(terms, config.weights(), config.method)?;
    Ok(out)
}

enum PretextFeatures<T> {
    Fused(crate::model::FeatureCache<T>),
    Color(crate::model::BackboneCache<T>),
}
