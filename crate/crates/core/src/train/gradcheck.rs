//! Finite-difference verification of the analytic gradients.

use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng as _;

use super::step::{accumulate_parts, Backprop, StepBatch, StepRngs};
use super::TrainConfig;
use crate::model::{group_of, ModelBundle, GROUP_COLOR, GROUP_DEPTH, GROUP_MAIN, GROUP_PRETEXT};
use crate::nn::Module;
use crate::rng;
use crate::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub probes: usize,
    pub max_relative_error: f64,
    /// Parameter name and element of the worst probe.
    pub worst: (String, usize),
}

fn total(model: &ModelBundle<f64>, batch: &StepBatch<f64>, config: &TrainConfig, progress: f64, rngs: &StepRngs) -> Result<f64> {
    let mut m = model.clone();
    let mut r = rngs.clone();
    Ok(accumulate_parts(&mut m, batch, config, progress, &mut r, Backprop::All)?.report.total)
}

/// Compare the analytic gradient of the total loss with central differences
/// at `probes` randomly chosen trainable scalars. The relative error is
/// `|a - n| / max(|a|, |n|, floor)`; the floor keeps probes whose gradient is
/// at rounding level from dominating. Dropout masks are replayed from `rngs`.
#[allow(clippy::too_many_arguments)]
pub fn check_gradients(
    model: &ModelBundle<f64>,
    batch: &StepBatch<f64>,
    config: &TrainConfig,
    progress: f64,
    rngs: &StepRngs,
    probes: usize,
    eps: f64,
    floor: f64,
    seed: u64,
) -> Result<GradCheck> {
    let mut analytic = model.clone();
    analytic.zero_grad();
    let mut r = rngs.clone();
    accumulate_parts(&mut analytic, batch, config, progress, &mut r, Backprop::All)?;
    let grads: Vec<(String, Vec<f64>)> = analytic
        .named_params()
        .into_iter()
        .filter(|(_, p)| p.kind.trainable())
        .map(|(n, p)| (n, p.grad.data().to_vec()))
        .collect();
    let sizes: Vec<usize> = grads.iter().map(|g| g.1.len()).collect();
    let count: usize = sizes.iter().sum();

    let mut pick = rng::stream(seed, 0);
    let mut worst = (String::new(), 0);
    let mut max_err = 0.0f64;
    for _ in 0..probes {
        let mut flat = pick.random_range(0..count);
        let mut which = 0;
        while flat >= sizes[which] {
            flat -= sizes[which];
            which += 1;
        }
        let name = &grads[which].0;
        let eval_at = |delta: f64| -> Result<f64> {
            let mut m = model.clone();
            for (n, p) in m.named_params_mut() {
                if &n == name {
                    p.value.data_mut()[flat] += delta;
                }
            }
            total(&m, batch, config, progress, rngs)
        };
        let numeric = (eval_at(eps)? - eval_at(-eps)?) / (2.0 * eps);
        let a = grads[which].1[flat];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
        if err > max_err || worst.0.is_empty() {
            max_err = max_err.max(err);
            worst = (name.clone(), flat);
        }
    }
    Ok(GradCheck {
        probes,
        max_relative_error: max_err,
        worst,
    })
}

/// Largest absolute gradient per parameter group after backpropagating part
/// of the objective.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupGradients {
    pub color: f64,
    pub depth: f64,
    pub main: f64,
    pub pretext: f64,
}

fn group_max<T: crate::Real>(model: &ModelBundle<T>) -> GroupGradients {
    let mut g = GroupGradients {
        color: 0.0,
        depth: 0.0,
        main: 0.0,
        pretext: 0.0,
    };
    for (name, p) in model.named_params() {
        if !p.kind.trainable() {
            continue;
        }
        let m = num_traits::ToPrimitive::to_f64(&p.grad.max_abs()).unwrap_or(f64::NAN);
        let slot = match group_of(&name) {
            GROUP_COLOR => &mut g.color,
            GROUP_DEPTH => &mut g.depth,
            GROUP_MAIN => &mut g.main,
            GROUP_PRETEXT => &mut g.pretext,
            _ => continue,
        };
        *slot = slot.max(m);
    }
    g
}

/// Gradients of the main-side terms alone and of the pretext term alone,
/// each from a zeroed copy of `model`.
pub fn gradient_partition<T: crate::Real>(
    model: &ModelBundle<T>,
    batch: &StepBatch<T>,
    config: &TrainConfig,
    rngs: &StepRngs,
) -> Result<(GroupGradients, GroupGradients)> {
    let run = |parts| -> Result<GroupGradients> {
        let mut m = model.clone();
        m.zero_grad();
        accumulate_parts(&mut m, batch, config, 0.0, &mut rngs.clone(), parts)?;
        Ok(group_max(&m))
    };
    Ok((run(Backprop::MainOnly)?, run(Backprop::PretextOnly)?))
}
