//! Exact t-distributed stochastic neighbour embedding into two dimensions.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::rng;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case")]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    /// `None` picks `max(n / early_exaggeration / 4, 50)`.
    pub learning_rate: Option<f64>,
    pub early_exaggeration: f64,
    /// Iterations that use the exaggerated affinities and the lower momentum.
    pub exaggeration_iters: usize,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        TsneConfig {
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: None,
            early_exaggeration: 12.0,
            exaggeration_iters: 250,
            seed: 0,
        }
    }
}

impl TsneConfig {
    /// Smallest sample count the perplexity allows.
    pub fn min_samples(&self) -> usize {
        libm::ceil(3.0 * self.perplexity) as usize + 1
    }
}

fn squared_distances(x: &[Vec<f64>]) -> Vec<f64> {
    let n = x.len();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let v: f64 = x[i].iter().zip(&x[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    d
}

/// Row `i` of the conditional affinities, with the Gaussian precision found
/// by bisection so that the row entropy equals `ln(perplexity)`.
fn conditional_row(d: &[f64], i: usize, target: f64, row: &mut [f64]) {
    let n = row.len();
    let (mut beta, mut lo, mut hi) = (1.0f64, 0.0f64, f64::INFINITY);
    // shift by the nearest neighbour so the exponentials cannot all underflow
    let dmin = (0..n).filter(|&j| j != i).map(|j| d[j]).fold(f64::INFINITY, f64::min);
    for _ in 0..200 {
        let mut sum = 0.0;
        let mut dot = 0.0;
        for j in 0..n {
            row[j] = if j == i { 0.0 } else { libm::exp(-beta * (d[j] - dmin)) };
            sum += row[j];
            dot += row[j] * (d[j] - dmin);
        }
        let entropy = libm::log(sum) + beta * dot / sum;
        row.iter_mut().for_each(|p| *p /= sum);
        let diff = entropy - target;
        if diff.abs() < 1e-5 {
            break;
        }
        if diff > 0.0 {
            lo = beta;
            beta = if hi.is_finite() { 0.5 * (beta + hi) } else { beta * 2.0 };
        } else {
            hi = beta;
            beta = 0.5 * (beta + lo);
        }
    }
}

/// Embed the rows of `x` in the plane. Deterministic for a fixed seed.
pub fn tsne(x: &[Vec<f64>], config: &TsneConfig) -> Result<Vec<[f64; 2]>> {
    let n = x.len();
    if !(config.perplexity > 0.0) {
        return Err(Error::InvalidArgument(format!("perplexity {} must be positive", config.perplexity)));
    }
    if n < config.min_samples() {
        return Err(Error::InvalidArgument(format!(
            "perplexity {} needs at least {} samples, got {n}",
            config.perplexity,
            config.min_samples()
        )));
    }
    let dim = x[0].len();
    if x.iter().any(|r| r.len() != dim) {
        return Err(Error::Shape("feature rows differ in length".into()));
    }
    if x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("features are not finite".into()));
    }

    let d = squared_distances(x);
    let target = libm::log(config.perplexity);
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        conditional_row(&d[i * n..(i + 1) * n], i, target, &mut p[i * n..(i + 1) * n]);
    }
    // symmetrise
    for i in 0..n {
        for j in i + 1..n {
            let v = ((p[i * n + j] + p[j * n + i]) / (2.0 * n as f64)).max(1e-12);
            p[i * n + j] = v;
            p[j * n + i] = v;
        }
    }

    let mut r = rng::stream(config.seed, rng::streams::EMBED);
    let init = Normal::new(0.0, 1e-4).map_err(|e| Error::InvalidArgument(format!("{e}")))?;
    let mut y: Vec<[f64; 2]> = (0..n).map(|_| [init.sample(&mut r), init.sample(&mut r)]).collect();
    let lr = config
        .learning_rate
        .unwrap_or((n as f64 / config.early_exaggeration.max(1.0) / 4.0).max(50.0));
    let mut step = vec![[0.0f64; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];
    let mut num = vec![0.0; n * n];
    let mut grad = vec![[0.0f64; 2]; n];
    for it in 0..config.iterations {
        let early = it < config.exaggeration_iters;
        let exaggeration = if early { config.early_exaggeration } else { 1.0 };
        let momentum = if early { 0.5 } else { 0.8 };
        let mut zsum = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                let dy0 = y[i][0] - y[j][0];
                let dy1 = y[i][1] - y[j][1];
                let v = 1.0 / (1.0 + dy0 * dy0 + dy1 * dy1);
                num[i * n + j] = v;
                num[j * n + i] = v;
                zsum += 2.0 * v;
            }
        }
        for i in 0..n {
            let mut g = [0.0; 2];
            for j in 0..n {
                if i == j {
                    continue;
                }
                let w = num[i * n + j];
                let coef = (exaggeration * p[i * n + j] - w / zsum) * w;
                g[0] += coef * (y[i][0] - y[j][0]);
                g[1] += coef * (y[i][1] - y[j][1]);
            }
            grad[i] = [4.0 * g[0], 4.0 * g[1]];
        }
        for i in 0..n {
            for a in 0..2 {
                let same = (grad[i][a] > 0.0) == (step[i][a] > 0.0);
                gains[i][a] = if same { gains[i][a] * 0.8 } else { gains[i][a] + 0.2 }.max(0.01);
                step[i][a] = momentum * step[i][a] - lr * gains[i][a] * grad[i][a];
                y[i][a] += step[i][a];
            }
        }
        for a in 0..2 {
            let mean = y.iter().map(|v| v[a]).sum::<f64>() / n as f64;
            y.iter_mut().for_each(|v| v[a] -= mean);
        }
    }
    if y.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("embedding diverged".into()));
    }
    Ok(y)
}
