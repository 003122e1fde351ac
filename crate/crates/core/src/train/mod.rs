//! Training procedure: configuration, optimizer, the per-iteration objective
//! and the epoch loop, plus evaluation and gradient checking.

mod config;
mod eval;
mod gradcheck;
mod optim;
mod step;
mod trainer;

pub use config::TrainConfig;
pub use eval::{
    accuracy, eval_view, evaluate, evaluate_pretext, input_tensors, predict_dataset, Evaluation, Predictions,
};
pub use gradcheck::{check_gradients, gradient_partition, GradCheck, GroupGradients};
pub use optim::Sgd;
pub(crate) use step::argmax_rows;
pub use step::{accumulate_gradients, accumulate_parts, Backprop, PretextBatch, StepBatch, StepOutput, StepRngs};
pub use trainer::{build_step_batch, check_datasets, train, EpochMetrics, RunMetrics, Trainer};

#[cfg(test)]
mod tests;
