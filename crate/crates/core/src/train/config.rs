use alloc::format;

use serde::{Deserialize, Serialize};

use crate::data::InputTransform;
use crate::model::{BackboneSpec, ModelSpec, PretextHeadKind, PretextInput};
use crate::objectives::{LossWeights, Method, PretextDomains};
use crate::{Error, Result};

/// Every hyperparameter of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct TrainConfig {
    pub method: Method,
    pub lambda_pretext: f64,
    pub lambda_entropy: f64,
    pub lambda_adapt: f64,
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    /// Apply weight decay to batch-norm scales and shifts as well.
    pub decay_norm_params: bool,
    pub dropout: f64,
    pub epochs: usize,
    pub seed: u64,
    pub backbone: BackboneSpec,
    pub pretext_domains: PretextDomains,
    pub pretext_head: PretextHeadKind,
    /// Evaluate every this many epochs; the last epoch is always evaluated.
    pub eval_every: usize,
    pub main_hidden: usize,
    pub pretext_width: usize,
    /// Norm step of the feature-norm baseline.
    pub afn_delta_r: f64,
    /// Hidden width of the domain discriminator.
    pub grl_hidden: usize,
    pub transform: InputTransform,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            method: Method::RelativeRotation,
            lambda_pretext: 1.0,
            lambda_entropy: 0.1,
            lambda_adapt: 1.0,
            lr: 3e-4,
            momentum: 0.9,
            batch_size: 64,
            weight_decay: 0.05,
            decay_norm_params: true,
            dropout: 0.5,
            epochs: 30,
            seed: 0,
            backbone: BackboneSpec::resnet18(),
            pretext_domains: PretextDomains::Both,
            pretext_head: PretextHeadKind::Conv,
            eval_every: 1,
            main_hidden: 1000,
            pretext_width: 100,
            afn_delta_r: 1.0,
            grl_hidden: 1024,
            transform: InputTransform::Native,
        }
    }
}

fn check(ok: bool, what: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("invalid config: {what}")))
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        check(self.lr > 0.0 && self.lr.is_finite(), "lr must be positive")?;
        check((0.0..1.0).contains(&self.momentum), "momentum must lie in [0, 1)")?;
        check(self.batch_size >= 2, "batch-size must be at least 2 for batch normalization")?;
        check(self.weight_decay >= 0.0, "weight-decay must be non-negative")?;
        check((0.0..1.0).contains(&self.dropout), "dropout must lie in [0, 1)")?;
        check(self.epochs >= 1, "epochs must be at least 1")?;
        check(self.eval_every >= 1, "eval-every must be at least 1")?;
        check(
            self.lambda_pretext >= 0.0 && self.lambda_entropy >= 0.0 && self.lambda_adapt >= 0.0,
            "loss weights must be non-negative",
        )?;
        check(self.afn_delta_r > 0.0, "afn-delta-r must be positive")?;
        check(self.main_hidden > 0 && self.pretext_width > 0 && self.grl_hidden > 0, "head widths must be positive")?;
        if self.pretext_domains == PretextDomains::TargetOnly && !self.method.uses_pretext() {
            return Err(Error::ConflictingMethod(format!(
                "pretext-domains = target-only needs a rotation method, not {}",
                self.method.name()
            )));
        }
        if let InputTransform::ResizeCrop { resize, crop } = self.transform {
            check(crop > 0 && crop <= resize, "transform crop must lie in [1, resize]")?;
        }
        Ok(())
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            pretext: self.lambda_pretext,
            entropy: self.lambda_entropy,
            adapt: self.lambda_adapt,
        }
    }

    /// The pretext term contributes to training.
    pub fn pretext_active(&self) -> bool {
        self.method.uses_pretext() && self.lambda_pretext > 0.0
    }

    /// Entropy minimisation on target predictions. The source-only reference
    /// sees no target data at all.
    pub fn entropy_active(&self) -> bool {
        self.method != Method::SourceOnly && self.lambda_entropy > 0.0
    }

    pub fn adapt_active(&self) -> bool {
        self.method.uses_adaptation() && self.lambda_adapt > 0.0
    }

    /// Whether unrotated target images join the main forward pass. They do
    /// whenever any target term is active, even one that sends no gradient
    /// through the main head, so that the batch statistics the head trains
    /// under match the mixed running statistics used at evaluation.
    pub fn target_in_main_pass(&self) -> bool {
        self.entropy_active() || self.adapt_active() || self.pretext_active()
    }

    /// Network layout for `classes` classes and square inputs of side `native`
    /// before the input transform.
    pub fn model_spec(&self, classes: usize, native: usize) -> ModelSpec {
        let mut spec = ModelSpec::new(self.backbone.clone(), classes, self.transform.output_size(native));
        spec.main_hidden = self.main_hidden;
        spec.pretext_width = self.pretext_width;
        spec.pretext_head = self.pretext_head;
        spec.pretext_input = match self.method {
            Method::AbsoluteRotation => PretextInput::Color,
            _ => PretextInput::Fused,
        };
        spec.dropout = self.dropout;
        spec.domain_hidden = (self.method == Method::Grl).then_some(self.grl_hidden);
        spec
    }
}
