//! Classification heads over the fused feature map.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::backbone::{ConvBn, ConvBnCache};
use crate::nn::{
    dropout, dropout_backward, global_avg_pool, global_avg_pool_backward, join, relu, relu_backward, softmax_rows,
    BatchNorm, BatchNormCache, Linear, Mode, Module, Param, ReluMode,
};
use crate::rng::Rng;
use crate::{Error, Real, Result, Tensor};

/// What a head produces for one batch.
#[derive(Debug, Clone)]
pub struct HeadOutput<T> {
    pub logits: Tensor<T>,
    pub probs: Tensor<T>,
    /// Activation of the last hidden layer (after ReLU, before dropout).
    pub hidden: Tensor<T>,
}

fn apply_dropout<T: Real>(
    h: &Tensor<T>,
    p: f64,
    mode: Mode,
    rng: Option<&mut Rng>,
) -> Result<(Tensor<T>, Option<Tensor<T>>)> {
    if mode == Mode::Eval || p <= 0.0 {
        return Ok((h.clone(), None));
    }
    let rng = rng.ok_or_else(|| Error::InvalidArgument("training-mode dropout needs a random stream".into()))?;
    let (y, mask) = dropout(h, p, rng);
    Ok((y, Some(mask)))
}

/// Global average pooling, `fc(hidden)` with batch norm and ReLU, dropout,
/// then `fc(outputs)` and softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledHead<T> {
    pub fc1: Linear<T>,
    pub bn: BatchNorm<T>,
    pub fc2: Linear<T>,
    pub dropout: f64,
}

#[derive(Debug, Clone)]
pub struct PooledHeadCache<T> {
    spatial: (usize, usize),
    pooled: Tensor<T>,
    bn: BatchNormCache<T>,
    hidden: Tensor<T>,
    mask: Option<Tensor<T>>,
    dropped: Tensor<T>,
}

impl<T: Real> PooledHead<T> {
    pub fn new(inputs: usize, hidden: usize, outputs: usize, dropout: f64, rng: &mut Rng) -> Self {
        PooledHead {
            fc1: Linear::new(inputs, hidden, false, rng),
            bn: BatchNorm::new(hidden),
            fc2: Linear::new(hidden, outputs, true, rng),
            dropout,
        }
    }

    pub fn outputs(&self) -> usize {
        self.fc2.outputs()
    }

    pub fn forward(
        &mut self,
        fused: &Tensor<T>,
        mode: Mode,
        rng: Option<&mut Rng>,
    ) -> Result<(HeadOutput<T>, PooledHeadCache<T>)> {
        if fused.shape().len() != 4 {
            return Err(Error::Shape(format!("head expects a feature map, got {:?}", fused.shape())));
        }
        let (_, _, h, w) = fused.dims4();
        let pooled = global_avg_pool(fused);
        let a = self.fc1.forward(&pooled)?;
        let (a, bn) = self.bn.forward(&a, mode)?;
        let hidden = relu(&a);
        let (dropped, mask) = apply_dropout(&hidden, self.dropout, mode, rng)?;
        let logits = self.fc2.forward(&dropped)?;
        let probs = softmax_rows(&logits);
        Ok((
            HeadOutput {
                logits,
                probs,
                hidden: hidden.clone(),
            },
            PooledHeadCache {
                spatial: (h, w),
                pooled,
                bn,
                hidden,
                mask,
                dropped,
            },
        ))
    }

    /// `g_hidden` adds a gradient on the hidden activation (feature-level losses).
    pub fn backward(
        &mut self,
        cache: &PooledHeadCache<T>,
        g_logits: &Tensor<T>,
        g_hidden: Option<&Tensor<T>>,
        relu_mode: ReluMode,
    ) -> Result<Tensor<T>> {
        let gd = self.fc2.backward(&cache.dropped, g_logits, true)?.expect("input grad requested");
        let mut gh = match &cache.mask {
            Some(m) => dropout_backward(m, &gd),
            None => gd,
        };
        if let Some(extra) = g_hidden {
            gh.add_assign(extra);
        }
        let ga = relu_backward(&cache.hidden, &gh, relu_mode);
        let ga = self.bn.backward(&cache.bn, &ga)?;
        let gp = self.fc1.backward(&cache.pooled, &ga, true)?.expect("input grad requested");
        Ok(global_avg_pool_backward(&gp, cache.spatial.0, cache.spatial.1))
    }
}

impl<T: Real> Module<T> for PooledHead<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param<T>)>) {
        self.fc1.visit(&join(prefix, "fc1"), out);
        self.bn.visit(&join(prefix, "bn"), out);
        self.fc2.visit(&join(prefix, "fc2"), out);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param<T>)>) {
        self.fc1.visit_mut(&join(prefix, "fc1"), out);
        self.bn.visit_mut(&join(prefix, "bn"), out);
        self.fc2.visit_mut(&join(prefix, "fc2"), out);
    }
}

/// `conv(1x1, width)`, `conv(3x3, width, stride 2, no padding)`, flatten,
/// `fc(width)`, `fc(outputs)`; batch norm and ReLU after every layer but the
/// last, dropout after the hidden fully connected layer. No pooling, so the
/// head sees where features are.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvHead<T> {
    pub conv1: ConvBn<T>,
    pub conv2: ConvBn<T>,
    pub fc1: Linear<T>,
    pub bn: BatchNorm<T>,
    pub fc2: Linear<T>,
    pub dropout: f64,
}

#[derive(Debug, Clone)]
pub struct ConvHeadCache<T> {
    conv1: ConvBnCache<T>,
    conv2: ConvBnCache<T>,
    map_shape: [usize; 4],
    flat: Tensor<T>,
    bn: BatchNormCache<T>,
    hidden: Tensor<T>,
    mask: Option<Tensor<T>>,
    dropped: Tensor<T>,
}

impl<T> ConvHeadCache<T> {
    /// Shape of the map entering the flatten step.
    pub fn map_shape(&self) -> [usize; 4] {
        self.map_shape
    }
}

impl<T: Real> ConvHead<T> {
    /// `side` is the spatial side of the fused map the head will see.
    pub fn new(inputs: usize, side: usize, width: usize, outputs: usize, dropout: f64, rng: &mut Rng) -> Result<Self> {
        let reduced = conv_head_side(side).ok_or_else(|| {
            Error::Shape(format!("{side}x{side} feature map is too small for the 3x3 valid convolution"))
        })?;
        Ok(ConvHead {
            conv1: ConvBn::new(inputs, width, 1, 1, 0, rng),
            conv2: ConvBn::new(width, width, 3, 2, 0, rng),
            fc1: Linear::new(width * reduced * reduced, width, false, rng),
            bn: BatchNorm::new(width),
            fc2: Linear::new(width, outputs, true, rng),
            dropout,
        })
    }

    pub fn forward(
        &mut self,
        fused: &Tensor<T>,
        mode: Mode,
        rng: Option<&mut Rng>,
    ) -> Result<(HeadOutput<T>, ConvHeadCache<T>)> {
        let (m1, conv1) = self.conv1.forward(fused, mode, true)?;
        let (m2, conv2) = self.conv2.forward(&m1, mode, true)?;
        let (n, c, h, w) = m2.dims4();
        let flat = m2.reshape(&[n, c * h * w]);
        let a = self.fc1.forward(&flat)?;
        let (a, bn) = self.bn.forward(&a, mode)?;
        let hidden = relu(&a);
        let (dropped, mask) = apply_dropout(&hidden, self.dropout, mode, rng)?;
        let logits = self.fc2.forward(&dropped)?;
        let probs = softmax_rows(&logits);
        Ok((
            HeadOutput {
                logits,
                probs,
                hidden: hidden.clone(),
            },
            ConvHeadCache {
                conv1,
                conv2,
                map_shape: [n, c, h, w],
                flat,
                bn,
                hidden,
                mask,
                dropped,
            },
        ))
    }

    pub fn backward(&mut self, cache: &ConvHeadCache<T>, g_logits: &Tensor<T>, relu_mode: ReluMode) -> Result<Tensor<T>> {
        let gd = self.fc2.backward(&cache.dropped, g_logits, true)?.expect("input grad requested");
        let gh = match &cache.mask {
            Some(m) => dropout_backward(m, &gd),
            None => gd,
        };
        let ga = relu_backward(&cache.hidden, &gh, relu_mode);
        let ga = self.bn.backward(&cache.bn, &ga)?;
        let gf = self.fc1.backward(&cache.flat, &ga, true)?.expect("input grad requested");
        let gm2 = gf.reshape(&cache.map_shape);
        let gm1 = self.conv2.backward(&cache.conv2, &gm2, relu_mode, true)?.expect("input grad requested");
        Ok(self.conv1.backward(&cache.conv1, &gm1, relu_mode, true)?.expect("input grad requested"))
    }
}

/// Side of the map after the 3x3 stride-2 valid convolution.
pub fn conv_head_side(side: usize) -> Option<usize> {
    crate::nn::conv_output_size(side, 3, 2, 0)
}

impl<T: Real> Module<T> for ConvHead<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param<T>)>) {
        self.conv1.visit(&join(prefix, "conv1"), out);
        self.conv2.visit(&join(prefix, "conv2"), out);
        self.fc1.visit(&join(prefix, "fc1"), out);
        self.bn.visit(&join(prefix, "bn"), out);
        self.fc2.visit(&join(prefix, "fc2"), out);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param<T>)>) {
        self.conv1.visit_mut(&join(prefix, "conv1"), out);
        self.conv2.visit_mut(&join(prefix, "conv2"), out);
        self.fc1.visit_mut(&join(prefix, "fc1"), out);
        self.bn.visit_mut(&join(prefix, "bn"), out);
        self.fc2.visit_mut(&join(prefix, "fc2"), out);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PretextHead<T> {
    Conv(ConvHead<T>),
    Fc(PooledHead<T>),
}

#[derive(Debug, Clone)]
pub enum PretextCache<T> {
    Conv(ConvHeadCache<T>),
    Fc(PooledHeadCache<T>),
}

impl<T: Real> PretextHead<T> {
    pub fn forward(
        &mut self,
        fused: &Tensor<T>,
        mode: Mode,
        rng: Option<&mut Rng>,
    ) -> Result<(HeadOutput<T>, PretextCache<T>)> {
        match self {
            PretextHead::Conv(h) => h.forward(fused, mode, rng).map(|(o, c)| (o, PretextCache::Conv(c))),
            PretextHead::Fc(h) => h.forward(fused, mode, rng).map(|(o, c)| (o, PretextCache::Fc(c))),
        }
    }

    pub fn backward(&mut self, cache: &PretextCache<T>, g_logits: &Tensor<T>, relu_mode: ReluMode) -> Result<Tensor<T>> {
        match (self, cache) {
            (PretextHead::Conv(h), PretextCache::Conv(c)) => h.backward(c, g_logits, relu_mode),
            (PretextHead::Fc(h), PretextCache::Fc(c)) => h.backward(c, g_logits, None, relu_mode),
            _ => Err(Error::InvalidArgument("pretext cache does not match the head".into())),
        }
    }
}

impl<T: Real> Module<T> for PretextHead<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param<T>)>) {
        match self {
            PretextHead::Conv(h) => h.visit(prefix, out),
            PretextHead::Fc(h) => h.visit(prefix, out),
        }
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param<T>)>) {
        match self {
            PretextHead::Conv(h) => h.visit_mut(prefix, out),
            PretextHead::Fc(h) => h.visit_mut(prefix, out),
        }
    }
}

/// Two-way domain classifier on pooled fused features: `fc(hidden)`, ReLU, `fc(2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainHead<T> {
    pub fc1: Linear<T>,
    pub fc2: Linear<T>,
}

#[derive(Debug, Clone)]
pub struct DomainHeadCache<T> {
    input: Tensor<T>,
    hidden: Tensor<T>,
}

impl<T: Real> DomainHead<T> {
    pub fn new(inputs: usize, hidden: usize, rng: &mut Rng) -> Self {
        DomainHead {
            fc1: Linear::new(inputs, hidden, true, rng),
            fc2: Linear::new(hidden, 2, true, rng),
        }
    }

    /// Returns logits over `(source, target)`.
    pub fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, DomainHeadCache<T>)> {
        let hidden = relu(&self.fc1.forward(x)?);
        let logits = self.fc2.forward(&hidden)?;
        Ok((
            logits,
            DomainHeadCache {
                input: x.clone(),
                hidden,
            },
        ))
    }

    pub fn backward(&mut self, cache: &DomainHeadCache<T>, g_logits: &Tensor<T>) -> Result<Tensor<T>> {
        let gh = self.fc2.backward(&cache.hidden, g_logits, true)?.expect("input grad requested");
        let ga = relu_backward(&cache.hidden, &gh, ReluMode::Standard);
        Ok(self.fc1.backward(&cache.input, &ga, true)?.expect("input grad requested"))
    }
}

impl<T: Real> Module<T> for DomainHead<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param<T>)>) {
        self.fc1.visit(&join(prefix, "fc1"), out);
        self.fc2.visit(&join(prefix, "fc2"), out);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param<T>)>) {
        self.fc1.visit_mut(&join(prefix, "fc1"), out);
        self.fc2.visit_mut(&join(prefix, "fc2"), out);
    }
}
