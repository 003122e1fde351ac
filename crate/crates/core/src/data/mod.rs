//! Paired colour/depth samples, depth colourisation, crop extraction and the
//! procedural toy-shift generator.

use alloc::format;
use alloc::string::String;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::rng::Rng;
use crate::{Error, Image, Result};

mod colorize;
mod crops;
pub mod toy;

pub use colorize::{colorize_depth, fill_missing_depth};
pub use crops::{extract_crops, CropWindow, InstanceCrop};
pub use toy::{generate_toy_shift, Appearance, ToyDataset, ToyLatent, ToyShiftSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Domain {
    Source,
    Target,
}

/// One colour/depth pair. Depth is either raw (one channel, zero marks a
/// missing measurement) or already colourised (three channels).
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSample {
    pub id: String,
    pub color: Image,
    pub depth: Image,
    pub label: Option<usize>,
    pub domain: Domain,
}

impl PairedSample {
    pub fn new(id: impl Into<String>, color: Image, depth: Image, label: Option<usize>, domain: Domain) -> Result<Self> {
        let id = id.into();
        if (color.height(), color.width()) != (depth.height(), depth.width()) {
            return Err(Error::Shape(format!(
                "sample {id}: colour is {}x{} but depth is {}x{}",
                color.height(),
                color.width(),
                depth.height(),
                depth.width()
            )));
        }
        if color.channels() != 3 {
            return Err(Error::Shape(format!("sample {id}: colour must have 3 channels")));
        }
        if !matches!(depth.channels(), 1 | 3) {
            return Err(Error::Shape(format!("sample {id}: depth must have 1 or 3 channels")));
        }
        if domain == Domain::Source && label.is_none() {
            return Err(Error::Unlabeled(id));
        }
        Ok(PairedSample {
            id,
            color,
            depth,
            label,
            domain,
        })
    }

    pub fn size(&self) -> (usize, usize) {
        (self.color.height(), self.color.width())
    }

    /// Replace a raw depth channel by its surface-normal colourisation.
    pub fn colorized(mut self) -> Result<Self> {
        if self.depth.channels() == 1 {
            self.depth = colorize_depth(&self.depth)?;
        }
        Ok(self)
    }

    /// Same sample with the label removed.
    pub fn without_label(mut self) -> Self {
        self.label = None;
        self
    }
}

/// Geometry applied to samples before they enter the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum InputTransform {
    /// Use images at their stored size.
    Native,
    /// Bilinear resize to `resize`, then a `crop` window: random while
    /// training, centred for evaluation.
    ResizeCrop { resize: usize, crop: usize },
}

impl InputTransform {
    pub fn output_size(&self, native: usize) -> usize {
        match *self {
            InputTransform::Native => native,
            InputTransform::ResizeCrop { crop, .. } => crop,
        }
    }

    /// `rng` is only consulted for random crops.
    pub fn apply(&self, sample: &PairedSample, rng: Option<&mut Rng>) -> PairedSample {
        match *self {
            InputTransform::Native => sample.clone(),
            InputTransform::ResizeCrop { resize, crop } => {
                let color = sample.color.resize(resize, resize);
                let depth = sample.depth.resize(resize, resize);
                let slack = resize.saturating_sub(crop);
                let (y0, x0) = match rng {
                    Some(r) => (r.random_range(0..=slack), r.random_range(0..=slack)),
                    None => (slack / 2, slack / 2),
                };
                let side = crop.min(resize);
                PairedSample {
                    id: sample.id.clone(),
                    color: color.crop(y0, x0, side, side),
                    depth: depth.crop(y0, x0, side, side),
                    label: sample.label,
                    domain: sample.domain,
                }
            }
        }
    }
}
