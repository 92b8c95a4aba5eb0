//! Adam training loop, evaluation metric, metrics and checkpoints.

use std::time::Instant;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{LossSpec, Objective};
use super::model::{ModelSpec, PinnModel};
use super::problems::PdeProblem;
use crate::error::{Error, Result};
use crate::estimators::sample_rng;
use crate::graph::pairwise_sum;

/// Adam moment decay rates and stabilizer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam state for one flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub config: AdamConfig,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, n: usize) -> Self {
        Self {
            config,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    /// One bias-corrected update with step size `lr`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        let AdamConfig { beta1, beta2, eps } = self.config;
        self.t += 1;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * grad[i];
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * grad[i] * grad[i];
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + eps);
        }
    }
}

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "defaults::steps")]
    pub steps: usize,
    /// Initial learning rate, decayed linearly to 0 over `steps`.
    #[serde(default = "defaults::learning_rate")]
    pub learning_rate: f64,
    /// Residual points `N_r` per step.
    #[serde(default = "defaults::residual_points")]
    pub residual_points: usize,
    #[serde(default)]
    pub loss: LossSpec,
    /// Size of the fixed evaluation set.
    #[serde(default = "defaults::eval_points")]
    pub eval_points: usize,
    /// Steps between evaluations of the relative L2 error (0: only at the end).
    #[serde(default = "defaults::eval_every")]
    pub eval_every: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub adam: AdamConfig,
}

mod defaults {
    pub fn steps() -> usize {
        10_000
    }
    pub fn learning_rate() -> f64 {
        1e-3
    }
    pub fn residual_points() -> usize {
        100
    }
    pub fn eval_points() -> usize {
        20_000
    }
    pub fn eval_every() -> usize {
        1000
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: defaults::steps(),
            learning_rate: defaults::learning_rate(),
            residual_points: defaults::residual_points(),
            loss: LossSpec::default(),
            eval_points: defaults::eval_points(),
            eval_every: defaults::eval_every(),
            seed: 0,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, problem: &PdeProblem) -> Result<()> {
        if self.residual_points == 0 || self.eval_points == 0 {
            return Err(Error::InvalidArgument(
                "residual and evaluation point counts must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        for size in [self.loss.batch, self.loss.gpinn_batch]
            .into_iter()
            .flatten()
        {
            if size == 0 || size > problem.dim {
                return Err(Error::InvalidArgument(format!(
                    "index batch {size} must lie in 1..={}",
                    problem.dim
                )));
            }
        }
        Ok(())
    }

    /// Learning rate used at step `t` (0-based).
    pub fn learning_rate_at(&self, t: usize) -> f64 {
        self.learning_rate * (1.0 - t as f64 / self.steps as f64)
    }
}

/// `|u_theta - u| / |u|` over `points`.
pub fn relative_l2(
    model: &PinnModel,
    exact: &dyn Fn(&[f64]) -> f64,
    points: &[Vec<f64>],
) -> Result<f64> {
    let pred = model.values(points)?;
    relative_l2_values(&pred, &points.iter().map(|x| exact(x)).collect::<Vec<_>>())
}

/// `|pred - truth| / |truth|` for precomputed values.
pub fn relative_l2_values(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} reference values",
            pred.len(),
            truth.len()
        )));
    }
    let err: Vec<f64> = pred
        .iter()
        .zip(truth)
        .map(|(p, t)| (p - t) * (p - t))
        .collect();
    let norm: Vec<f64> = truth.iter().map(|t| t * t).collect();
    let denom = pairwise_sum(&norm);
    if denom == 0.0 {
        return Err(Error::InvalidArgument(
            "reference field has zero norm".into(),
        ));
    }
    Ok((pairwise_sum(&err) / denom).sqrt())
}

/// One row of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub step: usize,
    pub loss: f64,
    /// Present on evaluation steps of problems with an exact solution.
    pub rel_l2: Option<f64>,
    pub wall_ms: f64,
}

/// CSV with header `step,loss,rel_l2,wall_ms`; missing errors are empty.
pub fn metrics_csv(rows: &[MetricRow]) -> String {
    let mut out = String::from("step,loss,rel_l2,wall_ms\n");
    for r in rows {
        let rel = r.rel_l2.map(|v| format!("{v:e}")).unwrap_or_default();
        out.push_str(&format!(
            "{},{:e},{},{:.3}\n",
            r.step, r.loss, rel, r.wall_ms
        ));
    }
    out
}

/// Everything needed to resume or inspect a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub problem: PdeProblem,
    pub model: ModelSpec,
    pub config: TrainConfig,
    /// Steps completed; step `t` draws from RNG stream `t` of the seed.
    pub step: usize,
    pub params: Vec<f64>,
    pub adam: Adam,
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub history: Vec<MetricRow>,
    /// Relative L2 error after the last step, when an exact solution exists.
    pub final_rel_l2: Option<f64>,
    pub checkpoint: Checkpoint,
}

/// A fixed evaluation set with reference values.
#[derive(Debug, Clone)]
pub struct EvalSet {
    pub points: Vec<Vec<f64>>,
    pub truth: Vec<f64>,
}

impl EvalSet {
    /// `n` points from the problem domain, drawn from stream `u64::MAX` of `seed`.
    pub fn new(problem: &PdeProblem, n: usize, seed: u64) -> Option<Self> {
        let sol = problem.exact.as_ref()?;
        let mut rng = sample_rng(seed, u64::MAX);
        let points: Vec<Vec<f64>> = (0..n).map(|_| problem.sample_point(&mut rng)).collect();
        let truth = points.iter().map(|x| sol.value(x)).collect();
        Some(Self { points, truth })
    }

    pub fn relative_l2(&self, model: &PinnModel) -> Result<f64> {
        relative_l2_values(&model.values(&self.points)?, &self.truth)
    }
}

/// Residual points of step `t`.
pub fn step_points(
    problem: &PdeProblem,
    n: usize,
    seed: u64,
    t: usize,
) -> (Vec<Vec<f64>>, ChaCha8Rng) {
    let mut rng = sample_rng(seed, t as u64);
    let pts = (0..n).map(|_| problem.sample_point(&mut rng)).collect();
    (pts, rng)
}

/// Trains `model` on `problem`. `observe` sees every metrics row as it is
/// produced. On divergence the model keeps the last finite parameters and
/// the error carries the failing step.
pub fn train(
    model: &mut PinnModel,
    problem: &PdeProblem,
    config: &TrainConfig,
    observe: impl FnMut(&MetricRow),
) -> Result<TrainOutcome> {
    let mut adam = Adam::new(config.adam, model.param_count());
    train_from(model, problem, config, &mut adam, 0, observe)
}

/// Continues training at step `first` with existing optimizer state, as
/// stored in a [`Checkpoint`]. `adam` is left at the last finite step, so
/// after a divergence it can be saved alongside the model.
pub fn train_from(
    model: &mut PinnModel,
    problem: &PdeProblem,
    config: &TrainConfig,
    adam: &mut Adam,
    first: usize,
    mut observe: impl FnMut(&MetricRow),
) -> Result<TrainOutcome> {
    config.validate(problem)?;
    if adam.m.len() != model.param_count() || adam.v.len() != model.param_count() {
        return Err(Error::Shape(format!(
            "optimizer state for {} parameters, model has {}",
            adam.m.len(),
            model.param_count()
        )));
    }
    let objective = Objective::new(model, problem, config.loss.clone())?;
    let eval = EvalSet::new(problem, config.eval_points, config.seed);
    let mut history = Vec::new();
    let start = Instant::now();
    let checkpoint = |model: &PinnModel, adam: &Adam, step| Checkpoint {
        problem: problem.clone(),
        model: model.spec().clone(),
        config: config.clone(),
        step,
        params: model.params().to_vec(),
        adam: adam.clone(),
    };
    for t in first..config.steps {
        let (points, mut rng) = step_points(problem, config.residual_points, config.seed, t);
        let idx = objective.sample(&mut rng)?;
        let (loss, grad) = match objective.evaluate(model, &points, &idx, true) {
            Ok(v) => v,
            Err(Error::NonFinite { .. }) => {
                return Err(Error::Divergence {
                    step: t,
                    loss: f64::NAN,
                })
            }
            Err(e) => return Err(e),
        };
        let grad = grad.expect("gradient requested");
        if !loss.total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Divergence {
                step: t,
                loss: loss.total,
            });
        }
        adam.step(model.params_mut(), &grad, config.learning_rate_at(t));
        let last = t + 1 == config.steps;
        let rel_l2 = match &eval {
            Some(e) if last || (config.eval_every > 0 && (t + 1) % config.eval_every == 0) => {
                Some(e.relative_l2(model)?)
            }
            _ => None,
        };
        let row = MetricRow {
            step: t + 1,
            loss: loss.total,
            rel_l2,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        };
        observe(&row);
        history.push(row);
    }
    let final_rel_l2 = match &eval {
        Some(e) => Some(match history.last().and_then(|r| r.rel_l2) {
            Some(v) => v,
            None => e.relative_l2(model)?,
        }),
        None => None,
    };
    Ok(TrainOutcome {
        history,
        final_rel_l2,
        checkpoint: checkpoint(model, adam, config.steps.max(first)),
    })
}
