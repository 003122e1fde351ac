//! Evaluation of a trained bundle. Only the main head is used for class
//! predictions; the pretext head is consulted by [`evaluate_pretext`] alone.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;


use super::step::argmax_rows;
use crate::data::{InputTransform, PairedSample};
use crate::model::{ModelBundle, PretextInput};
use crate::nn::Mode;
use crate::rng::{self, Rng};
use crate::rotation::{make_absolute_rotation_batch, make_rotation_batch, RotationBatch};
use crate::{Error, Image, Real, Result, Tensor};

/// Colour and depth tensors of a batch of samples.
pub fn input_tensors<T: Real>(samples: &[&PairedSample]) -> Result<(Tensor<T>, Tensor<T>)> {
    let color: Vec<&Image> = samples.iter().map(|s| &s.color).collect();
    let depth: Vec<&Image> = samples.iter().map(|s| &s.depth).collect();
    Ok((Image::batch(&color)?, Image::batch(&depth)?))
}

/// Evaluation-time view of `samples` (centre crop when resizing).
pub fn eval_view(samples: &[PairedSample], transform: InputTransform) -> Vec<PairedSample> {
    samples.iter().map(|s| transform.apply(s, None)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub predicted: Vec<usize>,
    /// Class probabilities, one row per sample.
    pub probs: Vec<Vec<f64>>,
    /// Last hidden layer of the main head, one row per sample.
    pub hidden: Vec<Vec<f64>>,
}

impl Predictions {
    pub fn mean_feature_norm(&self) -> f64 {
        if self.hidden.is_empty() {
            return 0.0;
        }
        let total: f64 = self.hidden.iter().map(|h| libm::sqrt(h.iter().map(|v| v * v).sum::<f64>())).sum();
        total / self.hidden.len() as f64
    }
}

fn rows<T: Real>(t: &Tensor<T>) -> Vec<Vec<f64>> {
    let (n, _) = t.dims2();
    (0..n).map(|i| t.row(i).iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect()).collect()
}

/// Main-head predictions in evaluation mode, in sample order.
pub fn predict_dataset<T: Real>(
    model: &mut ModelBundle<T>,
    samples: &[PairedSample],
    transform: InputTransform,
    batch_size: usize,
) -> Result<Predictions> {
    let view = eval_view(samples, transform);
    let mut out = Predictions {
        predicted: Vec::with_capacity(view.len()),
        probs: Vec::with_capacity(view.len()),
        hidden: Vec::with_capacity(view.len()),
    };
    for chunk in view.chunks(batch_size.max(1)) {
        let refs: Vec<&PairedSample> = chunk.iter().collect();
        let (c, d) = input_tensors::<T>(&refs)?;
        let (fused, _) = model.extract_features(&c, &d, Mode::Eval)?;
        let (head, _) = model.main_forward(&fused, Mode::Eval, None)?;
        out.predicted.extend(argmax_rows(&head.probs));
        out.probs.extend(rows(&head.probs));
        out.hidden.extend(rows(&head.hidden));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    /// Accuracy per class; `None` for classes absent from the data.
    pub per_class: Vec<Option<f64>>,
    pub samples: usize,
    pub mean_feature_norm: f64,
}

/// Fraction of argmax-correct predictions and per-class accuracies.
pub fn accuracy(predicted: &[usize], labels: &[usize], classes: usize) -> Result<Evaluation> {
    if predicted.len() != labels.len() || labels.is_empty() {
        return Err(Error::Shape(format!("{} predictions for {} labels", predicted.len(), labels.len())));
    }
    let mut hit = vec![0usize; classes];
    let mut seen = vec![0usize; classes];
    for (&p, &y) in predicted.iter().zip(labels) {
        if y >= classes {
            return Err(Error::InvalidArgument(format!("label {y} out of range for {classes} classes")));
        }
        seen[y] += 1;
        hit[y] += (p == y) as usize;
    }
    Ok(Evaluation {
        accuracy: hit.iter().sum::<usize>() as f64 / labels.len() as f64,
        per_class: seen
            .iter()
            .zip(&hit)
            .map(|(&s, &h)| (s > 0).then(|| h as f64 / s as f64))
            .collect(),
        samples: labels.len(),
        mean_feature_norm: 0.0,
    })
}

/// Classify a labelled dataset with `M(E(x))`.
pub fn evaluate<T: Real>(
    model: &mut ModelBundle<T>,
    samples: &[PairedSample],
    transform: InputTransform,
    batch_size: usize,
) -> Result<Evaluation> {
    let labels = samples
        .iter()
        .map(|s| s.label.ok_or_else(|| Error::Unlabeled(format!("sample {} has no label", s.id))))
        .collect::<Result<Vec<_>>>()?;
    let pred = predict_dataset(model, samples, transform, batch_size)?;
    let mut eval = accuracy(&pred.predicted, &labels, model.spec.classes)?;
    eval.mean_feature_norm = pred.mean_feature_norm();
    Ok(eval)
}

fn rotation_batch(model: &ModelBundle<impl Real>, refs: &[&PairedSample], rng: &mut Rng) -> Result<RotationBatch> {
    match model.spec.pretext_input {
        PretextInput::Fused => make_rotation_batch(refs, rng),
        PretextInput::Color => make_absolute_rotation_batch(refs, rng),
    }
}

/// Accuracy of the pretext head on freshly rotated copies of `samples`:
/// relative rotations for the fused head, absolute colour rotations for the
/// colour-only head. Chance level is 0.25.
pub fn evaluate_pretext<T: Real>(
    model: &mut ModelBundle<T>,
    samples: &[PairedSample],
    transform: InputTransform,
    batch_size: usize,
    seed: u64,
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset("no samples to rotate".into()));
    }
    let view = eval_view(samples, transform);
    let mut r = rng::stream(seed, rng::streams::EVAL_PRETEXT);
    let mut correct = 0usize;
    for chunk in view.chunks(batch_size.max(1)) {
        let refs: Vec<&PairedSample> = chunk.iter().collect();
        let rb = rotation_batch(model, &refs, &mut r)?;
        let c: Tensor<T> = Image::batch(&rb.color.iter().collect::<Vec<_>>())?;
        let map = match model.spec.pretext_input {
            PretextInput::Fused => {
                let d: Tensor<T> = Image::batch(&rb.depth.iter().collect::<Vec<_>>())?;
                model.extract_features(&c, &d, Mode::Eval)?.0
            }
            PretextInput::Color => model.color.forward(&c, Mode::Eval)?.0,
        };
        let (out, _) = model.pretext_forward(&map, Mode::Eval, None)?;
        correct += argmax_rows(&out.probs).iter().zip(&rb.z).filter(|(a, b)| a == b).count();
    }
    Ok(correct as f64 / view.len() as f64)
}
