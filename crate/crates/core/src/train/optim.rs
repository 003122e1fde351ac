use alloc::string::String;
use alloc::vec::Vec;

use crate::nn::{Module, ParamKind};
use crate::{Error, Real, Result, Tensor};

/// Stochastic gradient descent with heavy-ball momentum and L2 weight decay:
/// `v = momentum * v + (g + decay * w)`, `w -= lr * v`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sgd<T> {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub decay_norm_params: bool,
    velocity: Vec<(String, Tensor<T>)>,
}

impl<T: Real> Sgd<T> {
    pub fn new(lr: f64, momentum: f64, weight_decay: f64, decay_norm_params: bool) -> Self {
        Sgd {
            lr,
            momentum,
            weight_decay,
            decay_norm_params,
            velocity: Vec::new(),
        }
    }

    /// Momentum buffers by parameter name; empty before the first step.
    pub fn velocity(&self) -> &[(String, Tensor<T>)] {
        &self.velocity
    }

    /// Restore momentum buffers, e.g. when resuming. Names and shapes must
    /// match the model's trainable parameters.
    pub fn set_velocity(&mut self, model: &impl Module<T>, velocity: Vec<(String, Tensor<T>)>) -> Result<()> {
        let params: Vec<_> = model.named_params().into_iter().filter(|(_, p)| p.kind.trainable()).collect();
        if velocity.is_empty() {
            self.velocity.clear();
            return Ok(());
        }
        if params.len() != velocity.len()
            || params
                .iter()
                .zip(&velocity)
                .any(|((n, p), (m, v))| n != m || p.value.shape() != v.shape())
        {
            return Err(Error::Incompatible("optimizer state does not match the model parameters".into()));
        }
        self.velocity = velocity;
        Ok(())
    }

    pub fn step(&mut self, model: &mut impl Module<T>) {
        let mut params: Vec<_> = model.named_params_mut().into_iter().filter(|(_, p)| p.kind.trainable()).collect();
        if self.velocity.is_empty() {
            self.velocity = params.iter().map(|(n, p)| (n.clone(), Tensor::zeros(p.value.shape()))).collect();
        }
        debug_assert_eq!(params.len(), self.velocity.len());
        let (lr, mu) = (T::lit(self.lr), T::lit(self.momentum));
        for ((_, p), (_, v)) in params.iter_mut().zip(self.velocity.iter_mut()) {
            let norm = matches!(p.kind, ParamKind::NormScale | ParamKind::NormShift);
            let decay = if norm && !self.decay_norm_params { T::zero() } else { T::lit(self.weight_decay) };
            let w = p.value.data_mut();
            for ((w, g), v) in w.iter_mut().zip(p.grad.data()).zip(v.data_mut()) {
                *v = mu * *v + *g + decay * *w;
                *w = *w - lr * *v;
            }
        }
    }
}
