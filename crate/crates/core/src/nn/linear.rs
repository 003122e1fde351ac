use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::{join, xavier_uniform, Module, Param, ParamKind};
use crate::rng::Rng;
use crate::{Error, Real, Result, Tensor};

/// Fully connected layer, `y = x W^T + b` on `(n, in)` inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
}

impl<T: Real> Linear<T> {
    pub fn new(inputs: usize, outputs: usize, bias: bool, rng: &mut Rng) -> Self {
        Linear {
            weight: Param::new(xavier_uniform(&[outputs, inputs], inputs, outputs, rng), ParamKind::Weight),
            bias: bias.then(|| Param::new(Tensor::zeros(&[outputs]), ParamKind::Bias)),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn outputs(&self) -> usize {
        self.weight.value.shape()[0]
    }

    fn check(&self, x: &Tensor<T>) -> Result<usize> {
        match *x.shape() {
            [n, i] if i == self.inputs() => Ok(n),
            _ => Err(Error::Shape(format!(
                "linear layer expects (n, {}), got {:?}",
                self.inputs(),
                x.shape()
            ))),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let n = self.check(x)?;
        let o = self.outputs();
        let mut y = Tensor::zeros(&[n, o]);
        if let Some(b) = &self.bias {
            for row in y.data_mut().chunks_mut(o) {
                row.copy_from_slice(b.value.data());
            }
        }
        T::gemm(n, self.inputs(), o, T::one(), x.data(), false, self.weight.value.data(), true, T::one(), y.data_mut());
        Ok(y)
    }

    pub fn backward(&mut self, x: &Tensor<T>, gy: &Tensor<T>, input_grad: bool) -> Result<Option<Tensor<T>>> {
        let n = self.check(x)?;
        let (i, o) = (self.inputs(), self.outputs());
        if gy.shape() != [n, o] {
            return Err(Error::Shape(format!("linear output gradient has shape {:?}", gy.shape())));
        }
        T::gemm(o, n, i, T::one(), gy.data(), true, x.data(), false, T::one(), self.weight.grad.data_mut());
        if let Some(b) = self.bias.as_mut() {
            for row in gy.data().chunks(o) {
                for (g, &v) in b.grad.data_mut().iter_mut().zip(row) {
                    *g += v;
                }
            }
        }
        if !input_grad {
            return Ok(None);
        }
        let mut dx = Tensor::zeros(&[n, i]);
        T::gemm(n, o, i, T::one(), gy.data(), false, self.weight.value.data(), false, T::zero(), dx.data_mut());
        Ok(Some(dx))
    }
}

impl<T: Real> Module<T> for Linear<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param<T>)>) {
        out.push((join(prefix, "weight"), &self.weight));
        if let Some(b) = &self.bias {
            out.push((join(prefix, "bias"), b));
        }
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param<T>)>) {
        out.push((join(prefix, "weight"), &mut self.weight));
        if let Some(b) = &mut self.bias {
            out.push((join(prefix, "bias"), b));
        }
    }
}
