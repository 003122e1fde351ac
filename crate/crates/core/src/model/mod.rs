//! Two-stream late-fusion model: per-modality extractors, the main
//! classification head and the pretext head.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::nn::{Mode, Module, Param, ReluMode};
use crate::rng::{self, Rng};
use crate::{Error, Real, Result, Tensor};

mod backbone;
mod heads;

pub use backbone::{
    Backbone, BackboneCache, BackboneKind, BackboneSpec, BasicBlock, ConvBn, ConvBnCache, Resnet18, SmallConv,
};
pub use heads::{
    conv_head_side, ConvHead, ConvHeadCache, DomainHead, DomainHeadCache, HeadOutput, PooledHead, PooledHeadCache,
    PretextCache, PretextHead,
};

/// Parameter group prefixes used in checkpoints.
pub const GROUP_COLOR: &str = "E_color";
pub const GROUP_DEPTH: &str = "E_depth";
pub const GROUP_MAIN: &str = "M";
pub const GROUP_PRETEXT: &str = "P";
/// Domain discriminator, present only for adversarial training.
pub const GROUP_DOMAIN: &str = "D";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PretextHeadKind {
    /// Convolutional head without pooling.
    Conv,
    /// Same architecture as the main head.
    Fc,
}

/// Which features the pretext head reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PretextInput {
    /// Both streams, concatenated.
    Fused,
    /// The colour stream only (absolute-rotation baseline).
    Color,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub backbone: BackboneSpec,
    pub classes: usize,
    /// Side of the square network input.
    pub input_size: usize,
    pub main_hidden: usize,
    pub pretext_width: usize,
    pub pretext_head: PretextHeadKind,
    pub pretext_input: PretextInput,
    pub dropout: f64,
    /// Hidden width of the domain discriminator, when one is needed.
    pub domain_hidden: Option<usize>,
}

impl ModelSpec {
    pub fn new(backbone: BackboneSpec, classes: usize, input_size: usize) -> Self {
        ModelSpec {
            backbone,
            classes,
            input_size,
            main_hidden: 1000,
            pretext_width: 100,
            pretext_head: PretextHeadKind::Conv,
            pretext_input: PretextInput::Fused,
            dropout: 0.5,
            domain_hidden: None,
        }
    }

    pub fn feature_channels(&self) -> usize {
        self.backbone.feature_channels
    }

    /// Side of the fused feature map.
    pub fn feature_side(&self) -> Option<usize> {
        self.backbone.output_side(self.input_size)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle<T> {
    pub spec: ModelSpec,
    pub color: Backbone<T>,
    pub depth: Backbone<T>,
    pub main: PooledHead<T>,
    pub pretext: PretextHead<T>,
    pub domain: Option<DomainHead<T>>,
}

#[derive(Debug, Clone)]
pub struct FeatureCache<T> {
    color: BackboneCache<T>,
    depth: BackboneCache<T>,
    channels: usize,
}

impl<T: Real> ModelBundle<T> {
    /// Fresh Xavier-initialised model. Initialisation draws from its own
    /// stream of `seed`.
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.backbone.validate()?;
        if spec.classes < 2 {
            return Err(Error::InvalidArgument(format!("need at least 2 classes, got {}", spec.classes)));
        }
        let side = spec.feature_side().ok_or_else(|| {
            Error::Shape(format!("{0}x{0} input is too small for the backbone", spec.input_size))
        })?;
        let mut r = rng::stream(seed, rng::streams::INIT);
        let f = spec.feature_channels();
        let color = Backbone::new(&spec.backbone, 3, &mut r);
        let depth = Backbone::new(&spec.backbone, 3, &mut r);
        let main = PooledHead::new(2 * f, spec.main_hidden, spec.classes, spec.dropout, &mut r);
        let p_in = match spec.pretext_input {
            PretextInput::Fused => 2 * f,
            PretextInput::Color => f,
        };
        let pretext = match spec.pretext_head {
            PretextHeadKind::Conv => {
                PretextHead::Conv(ConvHead::new(p_in, side, spec.pretext_width, 4, spec.dropout, &mut r)?)
            }
            PretextHeadKind::Fc => PretextHead::Fc(PooledHead::new(p_in, spec.main_hidden, 4, spec.dropout, &mut r)),
        };
        let domain = spec.domain_hidden.map(|hd| DomainHead::new(2 * f, hd, &mut r));
        Ok(ModelBundle {
            spec,
            color,
            depth,
            main,
            pretext,
            domain,
        })
    }

    fn check_inputs(&self, color: &Tensor<T>, depth: &Tensor<T>) -> Result<()> {
        if color.shape().len() != 4 || depth.shape().len() != 4 {
            return Err(Error::Shape("extractor inputs must be (batch, channels, height, width)".into()));
        }
        let (nc, _, hc, wc) = color.dims4();
        let (nd, _, hd, wd) = depth.dims4();
        if nc != nd {
            return Err(Error::Shape(format!("colour batch has {nc} items, depth batch {nd}")));
        }
        if (hc, wc) != (hd, wd) || hc != wc {
            return Err(Error::Shape(format!("inputs must be square and equal: {hc}x{wc} vs {hd}x{wd}")));
        }
        let want = self.spec.feature_side();
        if self.spec.backbone.output_side(hc) != want {
            return Err(Error::Shape(format!(
                "{hc}x{hc} input does not give the {}x{} feature grid the model was built for",
                want.unwrap_or(0),
                want.unwrap_or(0)
            )));
        }
        Ok(())
    }

    /// Run both extractors and concatenate their maps along channels; the
    /// first `F` channels come from the colour stream.
    pub fn extract_features(
        &mut self,
        color: &Tensor<T>,
        depth: &Tensor<T>,
        mode: Mode,
    ) -> Result<(Tensor<T>, FeatureCache<T>)> {
        self.check_inputs(color, depth)?;
        let (fc, cc) = self.color.forward(color, mode)?;
        let (fd, cd) = self.depth.forward(depth, mode)?;
        let channels = fc.dims4().1;
        Ok((
            Tensor::concat_channels(&fc, &fd)?,
            FeatureCache {
                color: cc,
                depth: cd,
                channels,
            },
        ))
    }

    /// Returns the input gradients `(colour, depth)` when requested.
    pub fn features_backward(
        &mut self,
        cache: &FeatureCache<T>,
        g_fused: &Tensor<T>,
        relu_mode: ReluMode,
        input_grad: bool,
    ) -> Result<(Option<Tensor<T>>, Option<Tensor<T>>)> {
        let (gc, gd) = g_fused.split_channels(cache.channels);
        let dc = self.color.backward(&cache.color, &gc, relu_mode, input_grad)?;
        let dd = self.depth.backward(&cache.depth, &gd, relu_mode, input_grad)?;
        Ok((dc, dd))
    }

    pub fn main_forward(
        &mut self,
        fused: &Tensor<T>,
        mode: Mode,
        rng: Option<&mut Rng>,
    ) -> Result<(HeadOutput<T>, PooledHeadCache<T>)> {
        let want = 2 * self.spec.feature_channels();
        if fused.shape().len() != 4 || fused.dims4().1 != want {
            return Err(Error::Shape(format!(
                "main head expects {want} fused channels, got {:?}",
                fused.shape()
            )));
        }
        self.main.forward(fused, mode, rng)
    }

    pub fn pretext_forward(
        &mut self,
        features: &Tensor<T>,
        mode: Mode,
        rng: Option<&mut Rng>,
    ) -> Result<(HeadOutput<T>, PretextCache<T>)> {
        if features.shape().len() != 4 {
            return Err(Error::Shape(format!("pretext head expects a feature map, got {:?}", features.shape())));
        }
        let side = features.dims4().2;
        if self.spec.pretext_head == PretextHeadKind::Conv && conv_head_side(side).is_none() {
            return Err(Error::Shape(format!(
                "{side}x{side} feature map is too small for the 3x3 valid convolution"
            )));
        }
        self.pretext.forward(features, mode, rng)
    }

    /// Class probabilities in evaluation mode; the pretext head is not used.
    pub fn predict(&mut self, color: &Tensor<T>, depth: &Tensor<T>) -> Result<Tensor<T>> {
        let (fused, _) = self.extract_features(color, depth, Mode::Eval)?;
        Ok(self.main_forward(&fused, Mode::Eval, None)?.0.probs)
    }

    /// Trainable scalar count per group, in checkpoint order.
    pub fn group_sizes(&self) -> Vec<(&'static str, usize)> {
        let mut v = alloc::vec![
            (GROUP_COLOR, self.color.trainable_count()),
            (GROUP_DEPTH, self.depth.trainable_count()),
            (GROUP_MAIN, self.main.trainable_count()),
            (GROUP_PRETEXT, self.pretext.trainable_count()),
        ];
        if let Some(d) = &self.domain {
            v.push((GROUP_DOMAIN, d.trainable_count()));
        }
        v
    }
}

/// Group prefix of a parameter name.
pub fn group_of(name: &str) -> &str {
    name.split('/').next().unwrap_or("")
}

impl<T: Real> Module<T> for ModelBundle<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param<T>)>) {
        let j = |g: &str| crate::nn::join(prefix, g);
        self.color.visit(&j(GROUP_COLOR), out);
        self.depth.visit(&j(GROUP_DEPTH), out);
        self.main.visit(&j(GROUP_MAIN), out);
        self.pretext.visit(&j(GROUP_PRETEXT), out);
        if let Some(d) = &self.domain {
            d.visit(&j(GROUP_DOMAIN), out);
        }
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param<T>)>) {
        let j = |g: &str| crate::nn::join(prefix, g);
        self.color.visit_mut(&j(GROUP_COLOR), out);
        self.depth.visit_mut(&j(GROUP_DEPTH), out);
        self.main.visit_mut(&j(GROUP_MAIN), out);
        self.pretext.visit_mut(&j(GROUP_PRETEXT), out);
        if let Some(d) = &mut self.domain {
            d.visit_mut(&j(GROUP_DOMAIN), out);
        }
    }
}
