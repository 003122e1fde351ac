use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::{join, xavier_uniform, Module, Param, ParamKind};
use crate::rng::Rng;
use crate::{Error, Real, Result, Tensor};

/// Spatial output size of a convolution or pooling window.
pub fn conv_output_size(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if padded < kernel || stride == 0 {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T> {
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

struct Geometry {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
}

impl<T: Real> Conv2d<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        bias: bool,
        rng: &mut Rng,
    ) -> Self {
        let kk = kernel * kernel;
        let weight = xavier_uniform(
            &[out_channels, in_channels, kernel, kernel],
            in_channels * kk,
            out_channels * kk,
            rng,
        );
        Conv2d {
            weight: Param::new(weight, ParamKind::Weight),
            bias: bias.then(|| Param::new(Tensor::zeros(&[out_channels]), ParamKind::Bias)),
            in_channels,
            out_channels,
            kernel,
            stride,
            pad,
        }
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        Some((
            conv_output_size(h, self.kernel, self.stride, self.pad)?,
            conv_output_size(w, self.kernel, self.stride, self.pad)?,
        ))
    }

    fn geometry(&self, shape: &[usize]) -> Result<Geometry> {
        let &[n, c, h, w] = shape else {
            return Err(Error::Shape(format!("conv expects rank-4 input, got {shape:?}")));
        };
        if c != self.in_channels {
            return Err(Error::Shape(format!(
                "conv expects {} input channels, got {c}",
                self.in_channels
            )));
        }
        let (oh, ow) = self.output_hw(h, w).ok_or_else(|| {
            Error::Shape(format!(
                "{h}x{w} input too small for {}x{} kernel with padding {}",
                self.kernel, self.kernel, self.pad
            ))
        })?;
        Ok(Geometry { n, c, h, w, oh, ow })
    }

    /// Output columns `ox` whose input column `ox * stride + kx - pad` is in range.
    fn valid_cols(&self, kx: usize, w: usize, ow: usize) -> (usize, usize) {
        let s = self.stride;
        let lo = self.pad.saturating_sub(kx).div_ceil(s);
        let hi = if w + self.pad > kx { ((w + self.pad - kx - 1) / s + 1).min(ow) } else { 0 };
        (lo.min(hi), hi)
    }

    /// Unfold the batch into a `(c*k*k, n*oh*ow)` matrix.
    fn im2col(&self, x: &Tensor<T>, g: &Geometry) -> Vec<T> {
        let k = self.kernel;
        let s = self.stride;
        let cols = g.n * g.oh * g.ow;
        let mut col = vec![T::zero(); g.c * k * k * cols];
        let xd = x.data();
        for ci in 0..g.c {
            for ky in 0..k {
                for kx in 0..k {
                    let (lo, hi) = self.valid_cols(kx, g.w, g.ow);
                    let row = (ci * k + ky) * k + kx;
                    let dst = &mut col[row * cols..(row + 1) * cols];
                    for ni in 0..g.n {
                        let plane = &xd[(ni * g.c + ci) * g.h * g.w..(ni * g.c + ci + 1) * g.h * g.w];
                        for oy in 0..g.oh {
                            let iy = (oy * s + ky) as isize - self.pad as isize;
                            if iy < 0 || iy >= g.h as isize || lo >= hi {
                                continue;
                            }
                            let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                            let out = &mut dst[(ni * g.oh + oy) * g.ow + lo..(ni * g.oh + oy) * g.ow + hi];
                            let start = lo * s + kx - self.pad;
                            if s == 1 {
                                out.copy_from_slice(&src[start..start + out.len()]);
                            } else {
                                let src = &src[start..start + (out.len() - 1) * s + 1];
                                for (j, o) in out.iter_mut().enumerate() {
                                    *o = src[j * s];
                                }
                            }
                        }
                    }
                }
            }
        }
        col
    }

    fn col2im(&self, col: &[T], g: &Geometry) -> Tensor<T> {
        let k = self.kernel;
        let s = self.stride;
        let cols = g.n * g.oh * g.ow;
        let mut dx = Tensor::zeros(&[g.n, g.c, g.h, g.w]);
        let xd = dx.data_mut();
        for ci in 0..g.c {
            for ky in 0..k {
                for kx in 0..k {
                    let (lo, hi) = self.valid_cols(kx, g.w, g.ow);
                    let row = (ci * k + ky) * k + kx;
                    let src = &col[row * cols..(row + 1) * cols];
                    for ni in 0..g.n {
                        let base = (ni * g.c + ci) * g.h * g.w;
                        for oy in 0..g.oh {
                            let iy = (oy * s + ky) as isize - self.pad as isize;
                            if iy < 0 || iy >= g.h as isize || lo >= hi {
                                continue;
                            }
                            let v = &src[(ni * g.oh + oy) * g.ow + lo..(ni * g.oh + oy) * g.ow + hi];
                            let start = base + iy as usize * g.w + lo * s + kx - self.pad;
                            let dst = &mut xd[start..start + (v.len() - 1) * s + 1];
                            for (j, &v) in v.iter().enumerate() {
                                dst[j * s] += v;
                            }
                        }
                    }
                }
            }
        }
        dx
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward_cols(x)?.0)
    }

    /// Forward pass that also returns the unfolded input, which
    /// [`Conv2d::backward_cols`] accepts in place of the input itself.
    pub fn forward_cols(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Vec<T>)> {
        let g = self.geometry(x.shape())?;
        let col = self.im2col(x, &g);
        let ck = g.c * self.kernel * self.kernel;
        let l = g.oh * g.ow;
        let cols = g.n * l;
        let mut y = vec![T::zero(); self.out_channels * cols];
        T::gemm(self.out_channels, ck, cols, T::one(), self.weight.value.data(), false, &col, false, T::zero(), &mut y);
        // (o, n, l) -> (n, o, l)
        let mut out = Tensor::zeros(&[g.n, self.out_channels, g.oh, g.ow]);
        let od = out.data_mut();
        for o in 0..self.out_channels {
            let b = self.bias.as_ref().map_or(T::zero(), |b| b.value.data()[o]);
            for ni in 0..g.n {
                let src = &y[o * cols + ni * l..o * cols + (ni + 1) * l];
                let dst = &mut od[(ni * self.out_channels + o) * l..(ni * self.out_channels + o + 1) * l];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d = s + b;
                }
            }
        }
        Ok((out, col))
    }

    /// Accumulates parameter gradients and, when `input_grad` is set, returns the
    /// gradient with respect to `x`.
    pub fn backward(&mut self, x: &Tensor<T>, gy: &Tensor<T>, input_grad: bool) -> Result<Option<Tensor<T>>> {
        let g = self.geometry(x.shape())?;
        let col = self.im2col(x, &g);
        self.backward_cols(x.shape(), &col, gy, input_grad)
    }

    /// [`Conv2d::backward`] from the unfolded input of [`Conv2d::forward_cols`].
    pub fn backward_cols(
        &mut self,
        input_shape: &[usize],
        col: &[T],
        gy: &Tensor<T>,
        input_grad: bool,
    ) -> Result<Option<Tensor<T>>> {
        let g = self.geometry(input_shape)?;
        let l = g.oh * g.ow;
        let cols = g.n * l;
        let oc = self.out_channels;
        if gy.shape() != [g.n, oc, g.oh, g.ow] {
            return Err(Error::Shape(format!("conv output gradient has shape {:?}", gy.shape())));
        }
        let mut gyp = vec![T::zero(); oc * cols];
        let gd = gy.data();
        for ni in 0..g.n {
            for o in 0..oc {
                gyp[o * cols + ni * l..o * cols + (ni + 1) * l]
                    .copy_from_slice(&gd[(ni * oc + o) * l..(ni * oc + o + 1) * l]);
            }
        }
        if let Some(b) = self.bias.as_mut() {
            for (o, gb) in b.grad.data_mut().iter_mut().enumerate() {
                *gb += gyp[o * cols..(o + 1) * cols].iter().copied().sum::<T>();
            }
        }
        let ck = g.c * self.kernel * self.kernel;
        if col.len() != ck * cols {
            return Err(Error::Shape("unfolded input does not match the convolution".into()));
        }
        T::gemm(oc, cols, ck, T::one(), &gyp, false, col, true, T::one(), self.weight.grad.data_mut());
        if !input_grad {
            return Ok(None);
        }
        let mut dcol = vec![T::zero(); col.len()];
        T::gemm(ck, oc, cols, T::one(), self.weight.value.data(), true, &gyp, false, T::zero(), &mut dcol);
        Ok(Some(self.col2im(&dcol, &g)))
    }
}

impl<T: Real> Module<T> for Conv2d<T> {
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
