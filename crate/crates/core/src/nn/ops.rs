use alloc::vec::Vec;

use rand::Rng as _;

use crate::rng::Rng;
use crate::{Real, Tensor};

/// Backward rule for rectified-linear units.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReluMode {
    /// Pass the gradient where the forward activation was positive.
    Standard,
    /// Additionally zero every negative incoming gradient.
    Guided,
}

pub fn relu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// `y` is the forward output of [`relu`].
pub fn relu_backward<T: Real>(y: &Tensor<T>, gy: &Tensor<T>, mode: ReluMode) -> Tensor<T> {
    assert_eq!(y.shape(), gy.shape());
    let data = y
        .data()
        .iter()
        .zip(gy.data())
        .map(|(&a, &g)| {
            let pass = a > T::zero() && (mode == ReluMode::Standard || g > T::zero());
            if pass {
                g
            } else {
                T::zero()
            }
        })
        .collect();
    Tensor::from_vec(y.shape(), data).expect("same shape")
}

/// Inverted dropout. Returns the output and the scaled keep-mask.
pub fn dropout<T: Real>(x: &Tensor<T>, p: f64, rng: &mut Rng) -> (Tensor<T>, Tensor<T>) {
    let keep = T::lit(1.0 / (1.0 - p));
    let mask: Vec<T> = (0..x.len())
        .map(|_| if rng.random::<f64>() < p { T::zero() } else { keep })
        .collect();
    let mask = Tensor::from_vec(x.shape(), mask).expect("same shape");
    let y = Tensor::from_vec(
        x.shape(),
        x.data().iter().zip(mask.data()).map(|(&a, &m)| a * m).collect(),
    )
    .expect("same shape");
    (y, mask)
}

pub fn dropout_backward<T: Real>(mask: &Tensor<T>, gy: &Tensor<T>) -> Tensor<T> {
    Tensor::from_vec(
        gy.shape(),
        gy.data().iter().zip(mask.data()).map(|(&g, &m)| g * m).collect(),
    )
    .expect("same shape")
}

/// `(n, c, h, w) -> (n, c)` mean over spatial positions.
pub fn global_avg_pool<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let (n, c, h, w) = x.dims4();
    let inv = T::lit(1.0 / (h * w) as f64);
    let data = x.data().chunks(h * w).map(|p| p.iter().copied().sum::<T>() * inv).collect();
    Tensor::from_vec(&[n, c], data).expect("pooled shape")
}

pub fn global_avg_pool_backward<T: Real>(gy: &Tensor<T>, h: usize, w: usize) -> Tensor<T> {
    let (n, c) = gy.dims2();
    let inv = T::lit(1.0 / (h * w) as f64);
    let mut data = Vec::with_capacity(n * c * h * w);
    for &g in gy.data() {
        data.extend(core::iter::repeat_n(g * inv, h * w));
    }
    Tensor::from_vec(&[n, c, h, w], data).expect("unpooled shape")
}

#[derive(Debug, Clone)]
pub struct MaxPoolCache {
    argmax: Vec<usize>,
    input_shape: [usize; 4],
}

/// Max pooling with a square window; padded positions never win.
pub fn max_pool<T: Real>(x: &Tensor<T>, kernel: usize, stride: usize, pad: usize) -> (Tensor<T>, MaxPoolCache) {
    let (n, c, h, w) = x.dims4();
    let oh = super::conv_output_size(h, kernel, stride, pad).expect("pool window fits");
    let ow = super::conv_output_size(w, kernel, stride, pad).expect("pool window fits");
    let mut out = Tensor::zeros(&[n, c, oh, ow]);
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    let xd = x.data();
    let od = out.data_mut();
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = T::neg_infinity();
                let mut best_i = base;
                for ky in 0..kernel {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..kernel {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let i = base + iy as usize * w + ix as usize;
                        if xd[i] > best {
                            best = xd[i];
                            best_i = i;
                        }
                    }
                }
                od[(plane * oh + oy) * ow + ox] = best;
                argmax.push(best_i);
            }
        }
    }
    (
        out,
        MaxPoolCache {
            argmax,
            input_shape: [n, c, h, w],
        },
    )
}

pub fn max_pool_backward<T: Real>(cache: &MaxPoolCache, gy: &Tensor<T>) -> Tensor<T> {
    let mut dx = Tensor::zeros(&cache.input_shape);
    for (&i, &g) in cache.argmax.iter().zip(gy.data()) {
        dx.data_mut()[i] += g;
    }
    dx
}

/// Row-wise softmax of `(n, k)` logits.
pub fn softmax_rows<T: Real>(logits: &Tensor<T>) -> Tensor<T> {
    let (n, k) = logits.dims2();
    let mut out = Tensor::zeros(&[n, k]);
    for (src, dst) in logits.data().chunks(k).zip(out.data_mut().chunks_mut(k)) {
        let m = src.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
        let mut s = T::zero();
        for (d, &v) in dst.iter_mut().zip(src) {
            *d = (v - m).exp();
            s += *d;
        }
        dst.iter_mut().for_each(|d| *d /= s);
    }
    out
}

/// Vector-Jacobian product of the softmax: `dz = p * (g - <p, g>)` per row.
pub fn softmax_backward<T: Real>(probs: &Tensor<T>, gp: &Tensor<T>) -> Tensor<T> {
    let (n, k) = probs.dims2();
    let mut out = Tensor::zeros(&[n, k]);
    for ((p, g), d) in probs
        .data()
        .chunks(k)
        .zip(gp.data().chunks(k))
        .zip(out.data_mut().chunks_mut(k))
    {
        let dot: T = p.iter().zip(g).map(|(&a, &b)| a * b).sum();
        for ((d, &pi), &gi) in d.iter_mut().zip(p).zip(g) {
            *d = pi * (gi - dot);
        }
    }
    out
}
