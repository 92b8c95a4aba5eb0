//! Physics-informed network training with exact or amortized residuals.

mod loss;
mod model;
mod problems;
mod train;

pub use crate::graph::nets::weight_share;
pub use loss::{
    amortized_residual_loss, gpinn_loss, residual_loss, IndexSample, LossSpec, LossValue,
    Objective, INITIAL_WEIGHT,
};
pub use model::{ModelSpec, PinnModel};
pub use problems::{
    pde_registry, sample_ball, Domain, ExactSolution, Factor, InitialCondition, Interaction,
    Monomial, Nonlinearity, PdeKind, PdeProblem, PARABOLIC_HORIZON, PROBLEM_NAMES,
};
pub use train::{
    metrics_csv, relative_l2, relative_l2_values, step_points, train, train_from, Adam, AdamConfig, Checkpoint,
    EvalSet, MetricRow, TrainConfig, TrainOutcome,
};
