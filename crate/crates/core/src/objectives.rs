//! Training objectives: classification and pretext cross-entropies, the
//! target entropy regulariser, the MMD / gradient-reversal / feature-norm
//! baselines, and the weighted combination of all terms.
//!
//! Every loss returns its value together with the gradient with respect to
//! its inputs, so callers can chain it into the model's backward passes.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::Domain;
use crate::model::{DomainHead, DomainHeadCache};
use crate::nn::softmax_rows;
use crate::{Error, Real, Result, Tensor};

/// Floor applied inside every logarithm.
pub const LOG_FLOOR: f64 = 1e-7;
/// Allowed deviation of a probability row sum from one.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-4;

/// A scalar loss and its gradient with respect to one input.
#[derive(Debug, Clone, PartialEq)]
pub struct Loss<T> {
    pub value: T,
    pub grad: Tensor<T>,
}

fn check_probs<T: Real>(probs: &Tensor<T>) -> Result<(usize, usize)> {
    if probs.shape().len() != 2 {
        return Err(Error::Shape(format!("expected (batch, classes) probabilities, got {:?}", probs.shape())));
    }
    let (n, k) = probs.dims2();
    for i in 0..n {
        let s: f64 = probs.row(i).iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).sum();
        if !((s - 1.0).abs() <= NORMALIZATION_TOLERANCE) {
            return Err(Error::NotNormalized { row: i, sum: s });
        }
    }
    Ok((n, k))
}

#[inline]
fn floored_ln<T: Real>(p: T) -> (T, bool) {
    let floor = T::lit(LOG_FLOOR);
    if p > floor {
        (p.ln(), true)
    } else {
        (floor.ln(), false)
    }
}

/// One-hot rows for class indices.
pub fn one_hot<T: Real>(labels: &[usize], classes: usize) -> Tensor<T> {
    let mut t = Tensor::zeros(&[labels.len(), classes]);
    for (i, &l) in labels.iter().enumerate() {
        t.data_mut()[i * classes + l] = T::one();
    }
    t
}

/// Mean cross-entropy `-(1/N) sum y log p` of probability rows against class
/// indices. The gradient is with respect to the probabilities.
pub fn cross_entropy<T: Real>(labels: &[usize], probs: &Tensor<T>) -> Result<Loss<T>> {
    let (n, k) = check_probs(probs)?;
    if labels.len() != n {
        return Err(Error::Shape(format!("{} labels for {n} predictions", labels.len())));
    }
    if n == 0 {
        return Err(Error::Shape("cross-entropy of an empty batch".into()));
    }
    let inv_n = T::lit(1.0 / n as f64);
    let mut grad = Tensor::zeros(&[n, k]);
    let mut total = T::zero();
    for (i, &y) in labels.iter().enumerate() {
        if y >= k {
            return Err(Error::InvalidArgument(format!("label {y} outside [0, {k})")));
        }
        let p = probs.row(i)[y];
        let (lp, live) = floored_ln(p);
        total -= lp;
        if live {
            grad.data_mut()[i * k + y] = -inv_n / p;
        }
    }
    Ok(Loss {
        value: total * inv_n,
        grad,
    })
}

/// Main classification loss on labelled source predictions.
pub fn main_loss<T: Real>(labels: &[usize], probs: &Tensor<T>) -> Result<Loss<T>> {
    cross_entropy(labels, probs)
}

/// Which domains feed the pretext loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PretextDomains {
    Both,
    TargetOnly,
}

/// Labels and predicted rotation probabilities of one domain.
pub type PretextSide<'a, T> = (&'a [usize], &'a Tensor<T>);

#[derive(Debug, Clone, PartialEq)]
pub struct PretextLoss<T> {
    pub value: T,
    pub source_grad: Option<Tensor<T>>,
    pub target_grad: Option<Tensor<T>>,
}

/// Sum of the per-domain mean rotation cross-entropies. With
/// [`PretextDomains::TargetOnly`] the source side must be absent.
pub fn pretext_loss<T: Real>(
    source: Option<PretextSide<'_, T>>,
    target: Option<PretextSide<'_, T>>,
    domains: PretextDomains,
) -> Result<PretextLoss<T>> {
    let source = source.filter(|(l, _)| !l.is_empty());
    let target = target.filter(|(l, _)| !l.is_empty());
    match (domains, &source, &target) {
        (_, None, None) => return Err(Error::InvalidArgument("pretext loss needs at least one batch".into())),
        (PretextDomains::Both, None, _) | (PretextDomains::Both, _, None) => {
            return Err(Error::InvalidArgument("pretext loss over both domains needs both batches".into()))
        }
        (PretextDomains::TargetOnly, Some(_), _) => {
            return Err(Error::InvalidArgument("target-only pretext loss got a source batch".into()))
        }
        _ => {}
    }
    let side = |s: Option<PretextSide<'_, T>>| -> Result<Option<Loss<T>>> {
        s.map(|(labels, probs)| {
            if labels.iter().any(|&z| z > 3) {
                return Err(Error::InvalidArgument("rotation labels must lie in [0, 3]".into()));
            }
            cross_entropy(labels, probs)
        })
        .transpose()
    };
    let s = side(source)?;
    let t = side(target)?;
    let value = s.as_ref().map_or(T::zero(), |l| l.value) + t.as_ref().map_or(T::zero(), |l| l.value);
    Ok(PretextLoss {
        value,
        source_grad: s.map(|l| l.grad),
        target_grad: t.map(|l| l.grad),
    })
}

/// Mean prediction entropy `-(1/N) sum_i sum_c p_ic log p_ic`.
pub fn entropy_loss<T: Real>(probs: &Tensor<T>) -> Result<Loss<T>> {
    let (n, k) = check_probs(probs)?;
    if n == 0 {
        return Err(Error::Shape("entropy of an empty batch".into()));
    }
    let inv_n = T::lit(1.0 / n as f64);
    let mut grad = Tensor::zeros(&[n, k]);
    let mut total = T::zero();
    for (p, g) in probs.data().iter().zip(grad.data_mut()) {
        let (lp, live) = floored_ln(*p);
        total -= *p * lp;
        *g = -inv_n * if live { lp + T::one() } else { lp };
    }
    Ok(Loss {
        value: total * inv_n,
        grad,
    })
}

fn sq_dist<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

/// Median of the pairwise squared distances between distinct rows of the joint
/// batch. The mean of the two middle values is used for even counts.
pub fn median_bandwidth<T: Real>(source: &Tensor<T>, target: &Tensor<T>) -> T {
    let rows: Vec<&[T]> = (0..source.dims2().0)
        .map(|i| source.row(i))
        .chain((0..target.dims2().0).map(|i| target.row(i)))
        .collect();
    let mut d = Vec::with_capacity(rows.len() * rows.len() / 2);
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            d.push(sq_dist(rows[i], rows[j]));
        }
    }
    d.sort_by(|a, b| a.partial_cmp(b).unwrap_or(core::cmp::Ordering::Equal));
    if d.is_empty() {
        return T::one();
    }
    let m = d.len() / 2;
    let med = if d.len() % 2 == 1 {
        d[m]
    } else {
        (d[m - 1] + d[m]) * T::lit(0.5)
    };
    if med > T::zero() {
        med
    } else {
        T::one()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MmdLoss<T> {
    pub value: T,
    pub bandwidth: T,
    pub source_grad: Tensor<T>,
    pub target_grad: Tensor<T>,
}

/// Biased squared MMD with the Gaussian kernel `exp(-|a - b|^2 / bandwidth)`;
/// the bandwidth is the median heuristic and carries no gradient.
pub fn mmd_loss<T: Real>(source: &Tensor<T>, target: &Tensor<T>) -> Result<MmdLoss<T>> {
    if source.shape().len() != 2 || target.shape().len() != 2 {
        return Err(Error::Shape("MMD expects (batch, features) inputs".into()));
    }
    let (ns, d) = source.dims2();
    let (nt, dt) = target.dims2();
    if d != dt {
        return Err(Error::Shape(format!("feature sizes differ: {d} vs {dt}")));
    }
    if ns < 2 || nt < 2 {
        return Err(Error::InvalidArgument(format!("MMD needs at least 2 samples per side, got {ns} and {nt}")));
    }
    let bw = median_bandwidth(source, target);
    // MMD^2 = sum_ij w_i w_j k(z_i, z_j) over the joint batch, with
    // w = 1/ns on source rows and -1/nt on target rows.
    let rows: Vec<(&[T], T)> = (0..ns)
        .map(|i| (source.row(i), T::lit(1.0 / ns as f64)))
        .chain((0..nt).map(|i| (target.row(i), T::lit(-1.0 / nt as f64))))
        .collect();
    let mut grads = alloc::vec![T::zero(); (ns + nt) * d];
    let mut value = T::zero();
    let c = T::lit(-4.0) / bw;
    for (i, &(zi, wi)) in rows.iter().enumerate() {
        let gi = &mut grads[i * d..(i + 1) * d];
        for &(zj, wj) in &rows {
            let k = (-sq_dist(zi, zj) / bw).exp();
            value += wi * wj * k;
            // d/dz_i of the symmetric double sum: 2 w_i w_j dk/dz_i, dk/dz_i = -2 k (z_i - z_j) / bw
            let s = c * wi * wj * k;
            for (g, (&a, &b)) in gi.iter_mut().zip(zi.iter().zip(zj)) {
                *g += s * (a - b);
            }
        }
    }
    let tgrads = grads.split_off(ns * d);
    let sg = Tensor::from_vec(&[ns, d], grads)?;
    let tg = Tensor::from_vec(&[nt, d], tgrads)?;
    Ok(MmdLoss {
        value: value.max(T::zero()),
        bandwidth: bw,
        source_grad: sg,
        target_grad: tg,
    })
}

/// Gradient-reversal coefficient `2 / (1 + exp(-10 p)) - 1`.
pub fn grl_lambda(progress: f64) -> f64 {
    2.0 / (1.0 + libm::exp(-10.0 * progress)) - 1.0
}

#[derive(Debug, Clone)]
pub struct GrlLoss<T> {
    /// Discriminator cross-entropy (the reversal only touches gradients).
    pub value: T,
    pub lambda: f64,
    /// Gradient for the feature extractor, already multiplied by `-lambda`.
    pub feature_grad: Tensor<T>,
    pub cache: DomainHeadCache<T>,
    /// Gradient with respect to the discriminator logits, unreversed.
    pub logit_grad: Tensor<T>,
}

/// Domain-adversarial coupling through a gradient reversal layer. The
/// discriminator's parameter gradients are accumulated unreversed (scaled by
/// `weight`); the returned feature gradient is `-lambda(p) * weight` times the
/// plain one.
pub fn grl_adapt<T: Real>(
    features: &Tensor<T>,
    domains: &[Domain],
    discriminator: &mut DomainHead<T>,
    progress: f64,
    weight: T,
) -> Result<GrlLoss<T>> {
    if !(0.0..=1.0).contains(&progress) {
        return Err(Error::InvalidArgument(format!("schedule progress {progress} outside [0, 1]")));
    }
    if features.shape().len() != 2 || features.dims2().0 != domains.len() {
        return Err(Error::Shape(format!(
            "{} domain labels for features {:?}",
            domains.len(),
            features.shape()
        )));
    }
    let labels: Vec<usize> = domains
        .iter()
        .map(|d| match d {
            Domain::Source => 0,
            Domain::Target => 1,
        })
        .collect();
    let (logits, cache) = discriminator.forward(features)?;
    let probs = softmax_rows(&logits);
    let ce = cross_entropy(&labels, &probs)?;
    let mut logit_grad = crate::nn::softmax_backward(&probs, &ce.grad);
    logit_grad.scale(weight);
    let plain = discriminator.backward(&cache, &logit_grad)?;
    let lambda = grl_lambda(progress);
    let mut feature_grad = plain;
    feature_grad.scale(T::lit(-lambda));
    Ok(GrlLoss {
        value: ce.value,
        lambda,
        feature_grad,
        cache,
        logit_grad,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AfnLoss<T> {
    pub value: T,
    pub source_grad: Tensor<T>,
    pub target_grad: Tensor<T>,
}

/// Stepwise feature-norm enlargement: the mean over both domains of
/// `(|f| - (r + delta_r))^2`, where `r` is each sample's current norm held
/// constant. Both per-domain means are averaged.
pub fn afn_adapt<T: Real>(source: &Tensor<T>, target: &Tensor<T>, delta_r: f64) -> Result<AfnLoss<T>> {
    if !(delta_r > 0.0) {
        return Err(Error::InvalidArgument(format!("feature-norm step must be positive, got {delta_r}")));
    }
    let side = |f: &Tensor<T>| -> Result<(T, Tensor<T>)> {
        if f.shape().len() != 2 || f.dims2().0 == 0 {
            return Err(Error::Shape(format!("expected a non-empty (batch, features) input, got {:?}", f.shape())));
        }
        let (n, d) = f.dims2();
        let inv = T::lit(0.5 / n as f64);
        let dr = T::lit(delta_r);
        let mut grad = Tensor::zeros(&[n, d]);
        let mut value = T::zero();
        for i in 0..n {
            let row = f.row(i);
            let norm = row.iter().map(|&v| v * v).sum::<T>().sqrt();
            if norm <= T::zero() {
                return Err(Error::DegenerateFeature);
            }
            let residual = norm - (norm + dr);
            value += residual * residual * inv;
            // d/df (|f| - c)^2 with c held fixed
            let c = T::lit(2.0) * residual * inv / norm;
            for (g, &v) in grad.data_mut()[i * d..(i + 1) * d].iter_mut().zip(row) {
                *g = c * v;
            }
        }
        Ok((value, grad))
    };
    let (vs, gs) = side(source)?;
    let (vt, gt) = side(target)?;
    Ok(AfnLoss {
        value: vs + vt,
        source_grad: gs,
        target_grad: gt,
    })
}

/// Training method; decides which auxiliary term is active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    SourceOnly,
    RelativeRotation,
    AbsoluteRotation,
    Grl,
    Mmd,
    Afn,
}

impl Method {
    pub fn uses_pretext(self) -> bool {
        matches!(self, Method::RelativeRotation | Method::AbsoluteRotation)
    }

    pub fn uses_adaptation(self) -> bool {
        matches!(self, Method::Grl | Method::Mmd | Method::Afn)
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::SourceOnly => "source-only",
            Method::RelativeRotation => "relative-rotation",
            Method::AbsoluteRotation => "absolute-rotation",
            Method::Grl => "grl",
            Method::Mmd => "mmd",
            Method::Afn => "afn",
        }
    }
}

impl core::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            Method::SourceOnly,
            Method::RelativeRotation,
            Method::AbsoluteRotation,
            Method::Grl,
            Method::Mmd,
            Method::Afn,
        ]
        .into_iter()
        .find(|m| m.name() == s)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub pretext: f64,
    pub entropy: f64,
    pub adapt: f64,
}

/// Raw loss values of one step; absent terms are inactive.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossTerms {
    pub main: f64,
    pub pretext: Option<f64>,
    pub entropy: Option<f64>,
    pub adapt: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub main: f64,
    pub pretext: f64,
    pub entropy: f64,
    pub adapt: f64,
    pub total: f64,
    pub lambda_pretext: f64,
    pub lambda_entropy: f64,
    pub lambda_adapt: f64,
}

impl LossReport {
    /// `main + lambda_p * pretext + lambda_ent * entropy + lambda_adapt * adapt`,
    /// evaluated in this order.
    pub fn weighted_total(&self) -> f64 {
        self.main
            + self.lambda_pretext * self.pretext
            + self.lambda_entropy * self.entropy
            + self.lambda_adapt * self.adapt
    }
}

/// Weighted sum of the active terms. Fails when a term the method does not
/// use is supplied.
pub fn combine(terms: LossTerms, weights: LossWeights, method: Method) -> Result<LossReport> {
    if terms.pretext.is_some() && !method.uses_pretext() {
        return Err(Error::ConflictingMethod(format!("{} has no pretext term", method.name())));
    }
    if terms.adapt.is_some() && !method.uses_adaptation() {
        return Err(Error::ConflictingMethod(format!("{} has no adaptation term", method.name())));
    }
    let mut report = LossReport {
        main: terms.main,
        pretext: terms.pretext.unwrap_or(0.0),
        entropy: terms.entropy.unwrap_or(0.0),
        adapt: terms.adapt.unwrap_or(0.0),
        total: 0.0,
        lambda_pretext: if method.uses_pretext() { weights.pretext } else { 0.0 },
        lambda_entropy: if terms.entropy.is_some() { weights.entropy } else { 0.0 },
        lambda_adapt: if method.uses_adaptation() { weights.adapt } else { 0.0 },
    };
    report.total = report.weighted_total();
    Ok(report)
}
