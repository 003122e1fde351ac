//! Post-hoc inspection of trained bundles: guided-backpropagation saliency
//! and 2-D embeddings of main-head features.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::{Domain, InputTransform, PairedSample};
use crate::model::{ModelBundle, PretextInput};
use crate::nn::{Mode, Module, ReluMode};
use crate::rotation::{relative_label, rot90_image};
use crate::train::{input_tensors, predict_dataset};
use crate::{Error, Image, Real, Result, Tensor};

mod tsne;

pub use tsne::{tsne, TsneConfig};

/// How per-channel input gradients collapse into one relevance value per pixel.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Reduction {
    /// Largest absolute value over channels.
    #[default]
    ChannelMax,
    /// Euclidean norm over channels.
    ChannelL2,
}

/// Relevance of the input pixels for one pretext decision. Both maps are
/// stored in the frame of the unrotated sample, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaliencyMap {
    pub sample_id: String,
    pub height: usize,
    pub width: usize,
    pub color: Vec<f32>,
    /// Empty when the pretext head reads the colour stream only.
    pub depth: Vec<f32>,
    /// Quarter-turns applied to the colour and depth inputs.
    pub turns: (usize, usize),
    /// Pretext label the gradient was taken from.
    pub label: usize,
    pub true_label: usize,
    pub predicted_label: usize,
}

impl SaliencyMap {
    /// Per-pixel mean over the available modalities.
    pub fn combined(&self) -> Vec<f32> {
        if self.depth.is_empty() {
            return self.color.clone();
        }
        self.color.iter().zip(&self.depth).map(|(a, b)| 0.5 * (a + b)).collect()
    }
}

fn check_finite<T: Real>(model: &ModelBundle<T>) -> Result<()> {
    for (name, p) in model.named_params() {
        if p.value.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("parameter {name} holds non-finite values")));
        }
    }
    Ok(())
}

fn reduce<T: Real>(grad: &Tensor<T>, reduction: Reduction) -> Vec<f32> {
    let (_, c, h, w) = grad.dims4();
    let g = grad.data();
    (0..h * w)
        .map(|i| {
            let vals = (0..c).map(|ch| g[ch * h * w + i].to_f64().unwrap_or(f64::NAN).abs());
            let v = match reduction {
                Reduction::ChannelMax => vals.fold(0.0, f64::max),
                Reduction::ChannelL2 => libm::sqrt(vals.map(|v| v * v).sum::<f64>()),
            };
            v as f32
        })
        .collect()
}

/// Undo `turns` clockwise quarter-turns of a single-channel map.
fn unrotate(map: Vec<f32>, side: usize, turns: usize) -> Result<Vec<f32>> {
    let img = Image::from_vec(side, side, 1, map)?;
    Ok(rot90_image(&img, (4 - turns) % 4)?.data().to_vec())
}

/// Input gradient of one pretext logit.
///
/// The sample's colour image is turned `turns.0` times and its depth image
/// `turns.1` times, the model runs in evaluation mode and the gradient of
/// logit `label` (the true relative rotation when `None`) is propagated back
/// to both inputs with the given rectified-linear rule. The absolute
/// rotation head sees the colour stream only; its true label is `turns.0`.
pub fn saliency<T: Real>(
    model: &mut ModelBundle<T>,
    sample: &PairedSample,
    turns: (usize, usize),
    label: Option<usize>,
    relu_mode: ReluMode,
    reduction: Reduction,
) -> Result<SaliencyMap> {
    check_finite(model)?;
    let (h, w) = sample.size();
    if h != w {
        return Err(Error::NonSquare { height: h, width: w });
    }
    if turns.0 > 3 || turns.1 > 3 {
        return Err(Error::InvalidArgument(format!("rotation indices {turns:?} outside [0, 3]")));
    }
    let color_only = model.spec.pretext_input == PretextInput::Color;
    let true_label = if color_only { turns.0 } else { relative_label(turns.0, turns.1) };
    let label = label.unwrap_or(true_label);
    if label > 3 {
        return Err(Error::InvalidArgument(format!("pretext label {label} outside [0, 3]")));
    }
    let rotated = PairedSample {
        color: rot90_image(&sample.color, turns.0)?,
        depth: rot90_image(&sample.depth, turns.1)?,
        ..sample.clone()
    };
    let (c, d) = input_tensors::<T>(&[&rotated])?;
    model.zero_grad();
    let mut onehot = Tensor::zeros(&[1, 4]);
    onehot.data_mut()[label] = T::one();
    let (gc, gd, predicted) = if color_only {
        let (map, cache) = model.color.forward(&c, Mode::Eval)?;
        let (out, pc) = model.pretext_forward(&map, Mode::Eval, None)?;
        let g = model.pretext.backward(&pc, &onehot, relu_mode)?;
        let gc = model.color.backward(&cache, &g, relu_mode, true)?;
        (gc, None, crate::train::argmax_rows(&out.probs)[0])
    } else {
        let (map, cache) = model.extract_features(&c, &d, Mode::Eval)?;
        let (out, pc) = model.pretext_forward(&map, Mode::Eval, None)?;
        let g = model.pretext.backward(&pc, &onehot, relu_mode)?;
        let (gc, gd) = model.features_backward(&cache, &g, relu_mode, true)?;
        (gc, gd, crate::train::argmax_rows(&out.probs)[0])
    };
    model.zero_grad();
    let gc = gc.ok_or_else(|| Error::Shape("no colour input gradient".into()))?;
    let color = unrotate(reduce(&gc, reduction), h, turns.0)?;
    let depth = match gd {
        Some(gd) => unrotate(reduce(&gd, reduction), h, turns.1)?,
        None => Vec::new(),
    };
    if color.iter().chain(&depth).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("saliency is not finite".into()));
    }
    Ok(SaliencyMap {
        sample_id: sample.id.clone(),
        height: h,
        width: w,
        color,
        depth,
        turns,
        label,
        true_label,
        predicted_label: predicted,
    })
}

/// [`saliency`] with the guided rule: every rectified-linear unit passes
/// gradient only where its activation was positive and the incoming
/// gradient is non-negative.
pub fn guided_backprop<T: Real>(
    model: &mut ModelBundle<T>,
    sample: &PairedSample,
    turns: (usize, usize),
    label: Option<usize>,
    reduction: Reduction,
) -> Result<SaliencyMap> {
    saliency(model, sample, turns, label, ReluMode::Guided, reduction)
}

pub const DEFAULT_PERCENTILE: f64 = 95.0;

/// Mark the top `100 - p` percent of `values`: exactly
/// `ceil((100 - p) / 100 * len)` ones, ties broken by scan order.
pub fn binarize_saliency(values: &[f32], percentile: f64) -> Result<Vec<u8>> {
    if !(percentile > 0.0 && percentile < 100.0) {
        return Err(Error::InvalidArgument(format!("percentile {percentile} outside (0, 100)")));
    }
    let n = values.len();
    let first = *values.first().ok_or(Error::DegenerateSaliency)?;
    if values.iter().all(|&v| v == first) {
        return Err(Error::DegenerateSaliency);
    }
    let exact = (100.0 - percentile) * n as f64 / 100.0;
    let nearest = libm::round(exact);
    let count = if (exact - nearest).abs() < 1e-9 { nearest } else { libm::ceil(exact) };
    let count = (count as usize).clamp(1, n);
    let mut order: Vec<usize> = (0..n).collect();
    // stable: equal values keep scan order
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    let mut out = vec![0u8; n];
    for &i in &order[..count] {
        out[i] = 1;
    }
    Ok(out)
}

/// Mean relevance inside and outside a boolean mask.
pub fn mask_contrast(values: &[f32], mask: &[bool]) -> Result<(f64, f64)> {
    if values.len() != mask.len() {
        return Err(Error::Shape(format!("{} values for a {}-pixel mask", values.len(), mask.len())));
    }
    let (mut si, mut ni, mut so, mut no) = (0.0, 0usize, 0.0, 0usize);
    for (&v, &m) in values.iter().zip(mask) {
        if m {
            si += v as f64;
            ni += 1;
        } else {
            so += v as f64;
            no += 1;
        }
    }
    if ni == 0 || no == 0 {
        return Err(Error::InvalidArgument("mask must split the image".into()));
    }
    Ok((si / ni as f64, so / no as f64))
}

/// Points of a 2-D embedding with their provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub points: Vec<[f64; 2]>,
    pub ids: Vec<String>,
    pub domains: Vec<Domain>,
    pub labels: Vec<Option<usize>>,
}

/// t-SNE of the main head's last hidden layer over both domains, source first.
pub fn embed_features_2d<T: Real>(
    model: &mut ModelBundle<T>,
    source: &[PairedSample],
    target: &[PairedSample],
    transform: InputTransform,
    config: &TsneConfig,
) -> Result<Embedding> {
    check_finite(model)?;
    let mut features = Vec::with_capacity(source.len() + target.len());
    let mut out = Embedding {
        points: Vec::new(),
        ids: Vec::new(),
        domains: Vec::new(),
        labels: Vec::new(),
    };
    for (set, domain) in [(source, Domain::Source), (target, Domain::Target)] {
        if set.is_empty() {
            continue;
        }
        let pred = predict_dataset(model, set, transform, 64)?;
        features.extend(pred.hidden);
        for s in set {
            out.ids.push(s.id.clone());
            out.domains.push(domain);
            out.labels.push(s.label);
        }
    }
    out.points = tsne(&features, config)?;
    Ok(out)
}

/// Leave-one-out accuracy of a 1-nearest-neighbour domain classifier;
/// ties go to the lower index. Near 0.5 means the domains are mixed.
pub fn domain_separability(points: &[[f64; 2]], domains: &[Domain]) -> Result<f64> {
    if points.len() != domains.len() || points.len() < 2 {
        return Err(Error::InvalidArgument("need at least two tagged points".into()));
    }
    let mut hits = 0usize;
    for (i, p) in points.iter().enumerate() {
        let mut best = (f64::INFINITY, 0usize);
        for (j, q) in points.iter().enumerate() {
            if i == j {
                continue;
            }
            let d = (p[0] - q[0]) * (p[0] - q[0]) + (p[1] - q[1]) * (p[1] - q[1]);
            if d < best.0 {
                best = (d, j);
            }
        }
        hits += (domains[best.1] == domains[i]) as usize;
    }
    Ok(hits as f64 / points.len() as f64)
}
