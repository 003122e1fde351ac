use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::{join, Mode, Module, Param, ParamKind};
use crate::{Error, Real, Result, Tensor};

/// Batch normalisation over the channel axis of `(n, c)` or `(n, c, h, w)` inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Param<T>,
    pub running_var: Param<T>,
    pub momentum: f64,
    pub eps: f64,
}

#[derive(Debug, Clone)]
pub struct BatchNormCache<T> {
    xhat: Tensor<T>,
    inv_std: Vec<T>,
    batch_stats: bool,
}

fn layout<T: Real>(x: &Tensor<T>) -> Result<(usize, usize, usize)> {
    match *x.shape() {
        [n, c] => Ok((n, c, 1)),
        [n, c, h, w] => Ok((n, c, h * w)),
        _ => Err(Error::Shape(format!("batch norm expects rank 2 or 4, got {:?}", x.shape()))),
    }
}

impl<T: Real> BatchNorm<T> {
    pub fn new(channels: usize) -> Self {
        BatchNorm {
            gamma: Param::new(Tensor::full(&[channels], T::one()), ParamKind::NormScale),
            beta: Param::new(Tensor::zeros(&[channels]), ParamKind::NormShift),
            running_mean: Param::new(Tensor::zeros(&[channels]), ParamKind::Buffer),
            running_var: Param::new(Tensor::full(&[channels], T::one()), ParamKind::Buffer),
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.value.len()
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, BatchNormCache<T>)> {
        let (n, c, plane) = layout(x)?;
        if c != self.channels() {
            return Err(Error::Shape(format!("batch norm over {} channels got {c}", self.channels())));
        }
        let eps = T::lit(self.eps);
        let xd = x.data();
        let at = |ni: usize, ci: usize| (ni * c + ci) * plane;
        let (mean, var) = match mode {
            Mode::Train => {
                let m = T::lit((n * plane) as f64);
                let mut mean = vec![T::zero(); c];
                let mut var = vec![T::zero(); c];
                for ci in 0..c {
                    let mut s = T::zero();
                    for ni in 0..n {
                        s += xd[at(ni, ci)..at(ni, ci) + plane].iter().copied().sum::<T>();
                    }
                    let mu = s / m;
                    let mut v = T::zero();
                    for ni in 0..n {
                        for &e in &xd[at(ni, ci)..at(ni, ci) + plane] {
                            v += (e - mu) * (e - mu);
                        }
                    }
                    mean[ci] = mu;
                    var[ci] = v / m;
                }
                let mom = T::lit(self.momentum);
                let count = (n * plane) as f64;
                let unbias = if count > 1.0 { T::lit(count / (count - 1.0)) } else { T::one() };
                let rm = self.running_mean.value.data_mut();
                for ci in 0..c {
                    rm[ci] = (T::one() - mom) * rm[ci] + mom * mean[ci];
                }
                let rv = self.running_var.value.data_mut();
                for ci in 0..c {
                    rv[ci] = (T::one() - mom) * rv[ci] + mom * var[ci] * unbias;
                }
                (mean, var)
            }
            Mode::Eval => (
                self.running_mean.value.data().to_vec(),
                self.running_var.value.data().to_vec(),
            ),
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mut xhat = Tensor::zeros(x.shape());
        let mut y = Tensor::zeros(x.shape());
        let (g, b) = (self.gamma.value.data(), self.beta.value.data());
        for ni in 0..n {
            for ci in 0..c {
                let r = at(ni, ci)..at(ni, ci) + plane;
                for ((xh, yv), &e) in xhat.data_mut()[r.clone()]
                    .iter_mut()
                    .zip(&mut y.data_mut()[r.clone()])
                    .zip(&xd[r])
                {
                    *xh = (e - mean[ci]) * inv_std[ci];
                    *yv = g[ci] * *xh + b[ci];
                }
            }
        }
        Ok((
            y,
            BatchNormCache {
                xhat,
                inv_std,
                batch_stats: mode == Mode::Train,
            },
        ))
    }

    pub fn backward(&mut self, cache: &BatchNormCache<T>, gy: &Tensor<T>) -> Result<Tensor<T>> {
        let (n, c, plane) = layout(gy)?;
        if gy.shape() != cache.xhat.shape() {
            return Err(Error::Shape(format!("batch norm gradient has shape {:?}", gy.shape())));
        }
        let at = |ni: usize, ci: usize| (ni * c + ci) * plane;
        let gd = gy.data();
        let xh = cache.xhat.data();
        let m = T::lit((n * plane) as f64);
        let mut dx = Tensor::zeros(gy.shape());
        for ci in 0..c {
            let mut sum_g = T::zero();
            let mut sum_gx = T::zero();
            for ni in 0..n {
                for (&g, &x) in gd[at(ni, ci)..at(ni, ci) + plane].iter().zip(&xh[at(ni, ci)..at(ni, ci) + plane]) {
                    sum_g += g;
                    sum_gx += g * x;
                }
            }
            self.gamma.grad.data_mut()[ci] += sum_gx;
            self.beta.grad.data_mut()[ci] += sum_g;
            let k = self.gamma.value.data()[ci] * cache.inv_std[ci];
            for ni in 0..n {
                let r = at(ni, ci)..at(ni, ci) + plane;
                for ((d, &g), &x) in dx.data_mut()[r.clone()].iter_mut().zip(&gd[r.clone()]).zip(&xh[r]) {
                    *d = if cache.batch_stats {
                        k * (g - sum_g / m - x * sum_gx / m)
                    } else {
                        k * g
                    };
                }
            }
        }
        Ok(dx)
    }
}

impl<T: Real> Module<T> for BatchNorm<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param<T>)>) {
        out.push((join(prefix, "gamma"), &self.gamma));
        out.push((join(prefix, "beta"), &self.beta));
        out.push((join(prefix, "running_mean"), &self.running_mean));
        out.push((join(prefix, "running_var"), &self.running_var));
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param<T>)>) {
        out.push((join(prefix, "gamma"), &mut self.gamma));
        out.push((join(prefix, "beta"), &mut self.beta));
        out.push((join(prefix, "running_mean"), &mut self.running_mean));
        out.push((join(prefix, "running_var"), &mut self.running_var));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::xavier_uniform;
    use crate::rng;

    #[test]
    fn train_mode_normalizes_each_channel() {
        let mut r = rng::stream(4, 0);
        let x = xavier_uniform::<f64>(&[4, 3, 2, 2], 1, 1, &mut r).map(|v| 3.0 * v + 1.0);
        let mut bn = BatchNorm::<f64>::new(3);
        let (y, _) = bn.forward(&x, Mode::Train).unwrap();
        for c in 0..3 {
            let vals: Vec<f64> = (0..4).flat_map(|n| y.item(n)[c * 4..c * 4 + 4].to_vec()).collect();
            let mean = vals.iter().sum::<f64>() / 16.0;
            let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 16.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut r = rng::stream(5, 0);
        let x = xavier_uniform::<f64>(&[3, 2], 1, 1, &mut r);
        let probe = xavier_uniform::<f64>(&[3, 2], 1, 1, &mut r);
        let mut bn = BatchNorm::<f64>::new(2);
        bn.gamma.value = Tensor::from_vec(&[2], vec![1.5, -0.7]).unwrap();
        let loss = |bn: &BatchNorm<f64>, x: &Tensor<f64>| {
            let mut b = bn.clone();
            let (y, _) = b.forward(x, Mode::Train).unwrap();
            y.data().iter().zip(probe.data()).map(|(a, b)| a * b).sum::<f64>()
        };
        let (_, cache) = bn.clone().forward(&x, Mode::Train).unwrap();
        let dx = bn.backward(&cache, &probe).unwrap();
        let eps = 1e-6;
        for i in 0..6 {
            let mut xp = x.clone();
            xp.data_mut()[i] += eps;
            let mut xm = x.clone();
            xm.data_mut()[i] -= eps;
            let fd = (loss(&bn, &xp) - loss(&bn, &xm)) / (2.0 * eps);
            assert!((fd - dx.data()[i]).abs() < 1e-7, "{fd} vs {}", dx.data()[i]);
        }
    }

    #[test]
    fn eval_mode_uses_running_statistics() {
        let mut bn = BatchNorm::<f32>::new(1);
        bn.running_mean.value.data_mut()[0] = 2.0;
        bn.running_var.value.data_mut()[0] = 4.0;
        let x = Tensor::from_vec(&[1, 1], vec![4.0]).unwrap();
        let (y, _) = bn.forward(&x, Mode::Eval).unwrap();
        assert!((y.data()[0] - 1.0).abs() < 1e-4);
    }
}
