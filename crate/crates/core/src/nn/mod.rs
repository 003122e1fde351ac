//! Layers with explicit forward and backward passes.
//!
//! Forward passes never mutate cached activations inside the layer: each
//! `forward` returns whatever the matching `backward` needs, so one layer can
//! be applied to several batches in one training step and each batch is
//! back-propagated independently. Gradients accumulate into [`Param::grad`].

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng as _;

use crate::rng::Rng;
use crate::{Real, Tensor};

mod conv;
mod linear;
mod norm;
mod ops;

pub use conv::{conv_output_size, Conv2d};
pub use linear::Linear;
pub use norm::{BatchNorm, BatchNormCache};
pub use ops::{
    dropout, dropout_backward, global_avg_pool, global_avg_pool_backward, max_pool, max_pool_backward, relu,
    relu_backward, softmax_backward, softmax_rows, MaxPoolCache, ReluMode,
};

/// Role of a stored tensor, used by the optimizer and the checkpoint format.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    NormScale,
    NormShift,
    /// Running statistic: saved with the model but never optimized.
    Buffer,
}

impl ParamKind {
    pub fn trainable(self) -> bool {
        self != ParamKind::Buffer
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub kind: ParamKind,
}

impl<T: Real> Param<T> {
    pub fn new(value: Tensor<T>, kind: ParamKind) -> Self {
        let grad = if kind.trainable() {
            Tensor::zeros(value.shape())
        } else {
            Tensor::empty()
        };
        Param { value, grad, kind }
    }
}

/// Forward-pass mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics, active dropout, running statistics updated.
    Train,
    /// Running statistics, no dropout.
    Eval,
}

/// Anything holding named parameters.
pub trait Module<T: Real> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param<T>)>);
    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param<T>)>);

    fn named_params(&self) -> Vec<(String, &Param<T>)> {
        let mut out = Vec::new();
        self.visit("", &mut out);
        out
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Param<T>)> {
        let mut out = Vec::new();
        self.visit_mut("", &mut out);
        out
    }

    fn zero_grad(&mut self) {
        for (_, p) in self.named_params_mut() {
            if p.kind.trainable() {
                p.grad.fill(T::zero());
            }
        }
    }

    /// Number of trainable scalars.
    fn trainable_count(&self) -> usize {
        self.named_params()
            .iter()
            .filter(|(_, p)| p.kind.trainable())
            .map(|(_, p)| p.value.len())
            .sum()
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        String::from(name)
    } else {
        format!("{prefix}/{name}")
    }
}

/// Xavier (Glorot) uniform initialisation.
pub fn xavier_uniform<T: Real>(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut Rng) -> Tensor<T> {
    let bound = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
    let len: usize = shape.iter().product();
    let data = (0..len)
        .map(|_| T::lit(rng.random_range(-bound..bound)))
        .collect();
    Tensor::from_vec(shape, data).expect("length matches shape")
}
