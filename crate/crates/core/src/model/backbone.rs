//! Convolutional feature extractors: a small four-block network for desk-scale
//! runs and the 18-layer residual network for full-size inputs.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::nn::{
    max_pool, max_pool_backward, relu, relu_backward, BatchNorm, BatchNormCache, Conv2d, MaxPoolCache, Mode, Module,
    Param, ReluMode,
};
use crate::rng::Rng;
use crate::{Error, Real, Result, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackboneKind {
    /// ResNet-18 without its pooling and classification layers.
    Resnet18,
    /// Four 3x3 stride-2 conv/batch-norm/ReLU blocks.
    SmallConv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case")]
pub struct BackboneSpec {
    pub kind: BackboneKind,
    /// Checkpoint whose `E_color/*` and `E_depth/*` tensors initialise the extractors.
    pub pretrained: Option<String>,
    /// Output channels `F` of each stream. Fixed at 512 for the residual kind.
    pub feature_channels: usize,
    /// Widths of the first three small-conv blocks.
    pub small_widths: [usize; 3],
}

impl Default for BackboneSpec {
    fn default() -> Self {
        BackboneSpec::small_conv(64)
    }
}

impl BackboneSpec {
    pub fn resnet18() -> Self {
        BackboneSpec {
            kind: BackboneKind::Resnet18,
            pretrained: None,
            feature_channels: 512,
            small_widths: [16, 32, 64],
        }
    }

    pub fn small_conv(feature_channels: usize) -> Self {
        BackboneSpec {
            kind: BackboneKind::SmallConv,
            pretrained: None,
            feature_channels,
            small_widths: [16, 32, 64],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == BackboneKind::Resnet18 && self.feature_channels != 512 {
            return Err(Error::InvalidArgument(format!(
                "the residual backbone has 512 feature channels, not {}",
                self.feature_channels
            )));
        }
        if self.feature_channels == 0 || self.small_widths.contains(&0) {
            return Err(Error::InvalidArgument("backbone widths must be positive".into()));
        }
        Ok(())
    }

    /// Side of the terminal feature grid for a square `input` side.
    pub fn output_side(&self, input: usize) -> Option<usize> {
        use crate::nn::conv_output_size as out;
        match self.kind {
            BackboneKind::SmallConv => (0..4).try_fold(input, |s, _| out(s, 3, 2, 1)),
            BackboneKind::Resnet18 => {
                let s = out(input, 7, 2, 3)?;
                let s = out(s, 3, 2, 1)?;
                (0..3).try_fold(s, |s, _| out(s, 3, 2, 1))
            }
        }
    }
}

/// Convolution (no bias), batch norm and an optional ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvBn<T> {
    pub conv: Conv2d<T>,
    pub bn: BatchNorm<T>,
}

#[derive(Debug, Clone)]
pub struct ConvBnCache<T> {
    input_shape: Vec<usize>,
    /// Unfolded input of the convolution.
    cols: Vec<T>,
    bn: BatchNormCache<T>,
    /// Post-ReLU output when the block ends in a ReLU.
    activation: Option<Tensor<T>>,
}

impl<T: Real> ConvBn<T> {
    pub fn new(cin: usize, cout: usize, kernel: usize, stride: usize, pad: usize, rng: &mut Rng) -> Self {
        ConvBn {
            conv: Conv2d::new(cin, cout, kernel, stride, pad, false, rng),
            bn: BatchNorm::new(cout),
        }
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode, with_relu: bool) -> Result<(Tensor<T>, ConvBnCache<T>)> {
        let (y, cols) = self.conv.forward_cols(x)?;
        let (y, bn) = self.bn.forward(&y, mode)?;
        let (y, activation) = if with_relu {
            let a = relu(&y);
            (a.clone(), Some(a))
        } else {
            (y, None)
        };
        Ok((
            y,
            ConvBnCache {
                input_shape: x.shape().to_vec(),
                cols,
                bn,
                activation,
            },
        ))
    }

    pub fn backward(
        &mut self,
        cache: &ConvBnCache<T>,
        gy: &Tensor<T>,
        relu_mode: ReluMode,
        input_grad: bool,
    ) -> Result<Option<Tensor<T>>> {
        let g = match &cache.activation {
            Some(a) => relu_backward(a, gy, relu_mode),
            None => gy.clone(),
        };
        let g = self.bn.backward(&cache.bn, &g)?;
        self.conv.backward_cols(&cache.input_shape, &cache.cols, &g, input_grad)
    }
}

impl<T: Real> Module<T> for ConvBn<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param<T>)>) {
        self.conv.visit(&crate::nn::join(prefix, "conv"), out);
        self.bn.visit(&crate::nn::join(prefix, "bn"), out);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param<T>)>) {
        self.conv.visit_mut(&crate::nn::join(prefix, "conv"), out);
        self.bn.visit_mut(&crate::nn::join(prefix, "bn"), out);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmallConv<T> {
    pub blocks: Vec<ConvBn<T>>,
}

impl<T: Real> SmallConv<T> {
    pub fn new(in_channels: usize, widths: [usize; 3], features: usize, rng: &mut Rng) -> Self {
        let chans = [in_channels, widths[0], widths[1], widths[2], features];
        SmallConv {
            blocks: (0..4).map(|i| ConvBn::new(chans[i], chans[i + 1], 3, 2, 1, rng)).collect(),
        }
    }
}

/// Two 3x3 conv/batch-norm layers with an identity or projected shortcut.
#[derive(Debug, Clone, PartialEq)]
pub struct BasicBlock<T> {
    pub a: ConvBn<T>,
    pub b: ConvBn<T>,
    pub downsample: Option<ConvBn<T>>,
}

#[derive(Debug, Clone)]
pub struct BasicBlockCache<T> {
    a: ConvBnCache<T>,
    b: ConvBnCache<T>,
    downsample: Option<ConvBnCache<T>>,
    output: Tensor<T>,
}

impl<T: Real> BasicBlock<T> {
    fn new(cin: usize, cout: usize, stride: usize, rng: &mut Rng) -> Self {
        BasicBlock {
            a: ConvBn::new(cin, cout, 3, stride, 1, rng),
            b: ConvBn::new(cout, cout, 3, 1, 1, rng),
            downsample: (stride != 1 || cin != cout).then(|| ConvBn::new(cin, cout, 1, stride, 0, rng)),
        }
    }

    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, BasicBlockCache<T>)> {
        let (h, a) = self.a.forward(x, mode, true)?;
        let (mut y, b) = self.b.forward(&h, mode, false)?;
        let downsample = match self.downsample.as_mut() {
            Some(ds) => {
                let (s, c) = ds.forward(x, mode, false)?;
                y.add_assign(&s);
                Some(c)
            }
            None => {
                y.add_assign(x);
                None
            }
        };
        let y = relu(&y);
        Ok((
            y.clone(),
            BasicBlockCache {
                a,
                b,
                downsample,
                output: y,
            },
        ))
    }

    fn backward(&mut self, cache: &BasicBlockCache<T>, gy: &Tensor<T>, relu_mode: ReluMode) -> Result<Tensor<T>> {
        let g = relu_backward(&cache.output, gy, relu_mode);
        let gh = self.b.backward(&cache.b, &g, relu_mode, true)?.expect("input grad requested");
        let mut gx = self.a.backward(&cache.a, &gh, relu_mode, true)?.expect("input grad requested");
        match (self.downsample.as_mut(), &cache.downsample) {
            (Some(ds), Some(c)) => gx.add_assign(&ds.backward(c, &g, relu_mode, true)?.expect("input grad requested")),
            _ => gx.add_assign(&g),
        }
        Ok(gx)
    }
}

impl<T: Real> Module<T> for BasicBlock<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param<T>)>) {
        self.a.visit(&crate::nn::join(prefix, "a"), out);
        self.b.visit(&crate::nn::join(prefix, "b"), out);
        if let Some(ds) = &self.downsample {
            ds.visit(&crate::nn::join(prefix, "downsample"), out);
        }
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param<T>)>) {
        self.a.visit_mut(&crate::nn::join(prefix, "a"), out);
        self.b.visit_mut(&crate::nn::join(prefix, "b"), out);
        if let Some(ds) = &mut self.downsample {
            ds.visit_mut(&crate::nn::join(prefix, "downsample"), out);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Resnet18<T> {
    pub stem: ConvBn<T>,
    pub blocks: Vec<BasicBlock<T>>,
}

impl<T: Real> Resnet18<T> {
    pub fn new(in_channels: usize, rng: &mut Rng) -> Self {
        let stem = ConvBn::new(in_channels, 64, 7, 2, 3, rng);
        let mut blocks = Vec::with_capacity(8);
        let mut cin = 64;
        for (i, &w) in [64usize, 128, 256, 512].iter().enumerate() {
            let stride = if i == 0 { 1 } else { 2 };
            blocks.push(BasicBlock::new(cin, w, stride, rng));
            blocks.push(BasicBlock::new(w, w, 1, rng));
            cin = w;
        }
        Resnet18 { stem, blocks }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Backbone<T> {
    SmallConv(SmallConv<T>),
    Resnet18(Resnet18<T>),
}

#[derive(Debug, Clone)]
pub enum BackboneCache<T> {
    SmallConv(Vec<ConvBnCache<T>>),
    Resnet18 {
        stem: ConvBnCache<T>,
        pool: MaxPoolCache,
        blocks: Vec<BasicBlockCache<T>>,
    },
}

impl<T: Real> Backbone<T> {
    pub fn new(spec: &BackboneSpec, in_channels: usize, rng: &mut Rng) -> Self {
        match spec.kind {
            BackboneKind::SmallConv => {
                Backbone::SmallConv(SmallConv::new(in_channels, spec.small_widths, spec.feature_channels, rng))
            }
            BackboneKind::Resnet18 => Backbone::Resnet18(Resnet18::new(in_channels, rng)),
        }
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, BackboneCache<T>)> {
        match self {
            Backbone::SmallConv(net) => {
                let mut caches = Vec::with_capacity(net.blocks.len());
                let mut h = x.clone();
                for block in net.blocks.iter_mut() {
                    let (y, c) = block.forward(&h, mode, true)?;
                    caches.push(c);
                    h = y;
                }
                Ok((h, BackboneCache::SmallConv(caches)))
            }
            Backbone::Resnet18(net) => {
                let (h, stem) = net.stem.forward(x, mode, true)?;
                let (_, _, hh, ww) = h.dims4();
                if hh < 3 || ww < 3 {
                    return Err(Error::Shape(format!("{hh}x{ww} stem output too small to pool")));
                }
                let (mut h, pool) = max_pool(&h, 3, 2, 1);
                let mut blocks = Vec::with_capacity(net.blocks.len());
                for block in net.blocks.iter_mut() {
                    let (y, c) = block.forward(&h, mode)?;
                    blocks.push(c);
                    h = y;
                }
                Ok((h, BackboneCache::Resnet18 { stem, pool, blocks }))
            }
        }
    }

    /// Back-propagate through the extractor. The input gradient is only
    /// computed when `input_grad` is set.
    pub fn backward(
        &mut self,
        cache: &BackboneCache<T>,
        gy: &Tensor<T>,
        relu_mode: ReluMode,
        input_grad: bool,
    ) -> Result<Option<Tensor<T>>> {
        match (self, cache) {
            (Backbone::SmallConv(net), BackboneCache::SmallConv(caches)) => {
                let mut g = gy.clone();
                for (i, (block, c)) in net.blocks.iter_mut().zip(caches).enumerate().rev() {
                    match block.backward(c, &g, relu_mode, i > 0 || input_grad)? {
                        Some(next) => g = next,
                        None => return Ok(None),
                    }
                }
                Ok(Some(g))
            }
            (Backbone::Resnet18(net), BackboneCache::Resnet18 { stem, pool, blocks }) => {
                let mut g = gy.clone();
                for (block, c) in net.blocks.iter_mut().zip(blocks).rev() {
                    g = block.backward(c, &g, relu_mode)?;
                }
                let g = max_pool_backward(pool, &g);
                net.stem.backward(stem, &g, relu_mode, input_grad)
            }
            _ => Err(Error::InvalidArgument("backbone cache does not match the backbone".into())),
        }
    }
}

impl<T: Real> Module<T> for Backbone<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param<T>)>) {
        match self {
            Backbone::SmallConv(net) => {
                for (i, b) in net.blocks.iter().enumerate() {
                    b.visit(&crate::nn::join(prefix, &format!("block{i}")), out);
                }
            }
            Backbone::Resnet18(net) => {
                net.stem.visit(&crate::nn::join(prefix, "stem"), out);
                for (i, b) in net.blocks.iter().enumerate() {
                    b.visit(&crate::nn::join(prefix, &format!("layer{}.{}", i / 2 + 1, i % 2)), out);
                }
            }
        }
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param<T>)>) {
        match self {
            Backbone::SmallConv(net) => {
                for (i, b) in net.blocks.iter_mut().enumerate() {
                    b.visit_mut(&crate::nn::join(prefix, &format!("block{i}")), out);
                }
            }
            Backbone::Resnet18(net) => {
                net.stem.visit_mut(&crate::nn::join(prefix, "stem"), out);
                for (i, b) in net.blocks.iter_mut().enumerate() {
                    b.visit_mut(&crate::nn::join(prefix, &format!("layer{}.{}", i / 2 + 1, i % 2)), out);
                }
            }
        }
    }
}
