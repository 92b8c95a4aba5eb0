//! Run configuration: a JSON file, `key=value` overrides and global flags.

use std::path::PathBuf;

use jetstorm_core::operator::{DiffOperator, MultiIndex};
use jetstorm_core::oracle::functions;
use jetstorm_core::graph::Graph;
use jetstorm_core::estimators::sample_rng;
use jetstorm_core::pinn::TrainConfig;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::CliError;

/// Everything one invocation needs. Only the section of the chosen
/// subcommand is required.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Drives parameter initialization, point sampling and estimator draws.
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan: Option<PlanConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verify: Option<VerifyConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solve: Option<SolveConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bench: Option<BenchConfig>,
}

fn default_cap() -> usize {
    16
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanConfig {
    /// Mixed partials such as `"x1^2 x2"` (1-based dimensions).
    pub targets: Vec<String>,
    #[serde(default = "default_cap")]
    pub order_cap: usize,
}

/// Test function for `verify`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FunctionSpec {
    /// Random tanh network with Gaussian weights.
    Mlp {
        #[serde(default = "default_mlp_width")]
        width: usize,
        #[serde(default = "default_mlp_depth")]
        depth: usize,
    },
    /// `x^T A x` with standard normal `A`.
    Quadratic,
    /// `|x|^4`.
    NormFourth,
    /// `x_index^power`, 1-based index.
    CoordinatePower { index: usize, power: i32 },
}

fn default_mlp_width() -> usize {
    8
}

fn default_mlp_depth() -> usize {
    2
}

impl FunctionSpec {
    pub fn build(&self, d: usize, seed: u64) -> Result<(Graph, Vec<f64>), CliError> {
        Ok(match self {
            FunctionSpec::Mlp { width, depth } => functions::random_mlp(d, *width, *depth, seed)?,
            FunctionSpec::Quadratic => {
                let mut rng = sample_rng(seed, 1);
                let a: Vec<f64> = (0..d * d).map(|_| StandardNormal.sample(&mut rng)).collect();
                (functions::quadratic_form(&a, d)?, Vec::new())
            }
            FunctionSpec::NormFourth => (functions::norm_fourth(d)?, Vec::new()),
            FunctionSpec::CoordinatePower { index, power } => {
                if *index == 0 || *index > d {
                    return Err(CliError::Usage(format!(
                        "coordinate index {index} outside 1..={d}"
                    )));
                }
                (functions::coordinate_power(d, index - 1, *power)?, Vec::new())
            }
        })
    }
}

/// Operator for `verify`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OperatorSpec {
    Laplacian,
    /// `sum_i d^order / dx_i^order`.
    Diagonal { order: u32 },
    Biharmonic,
    /// `sum_ij C_ij d_i d_j` with row-major `C`; its size fixes the dimension.
    Matrix { entries: Vec<f64> },
}

impl OperatorSpec {
    pub fn build(&self, d: usize) -> Result<DiffOperator, CliError> {
        Ok(match self {
            OperatorSpec::Laplacian => DiffOperator::laplacian(d)?,
            OperatorSpec::Diagonal { order } => DiffOperator::diagonal(*order, d)?,
            OperatorSpec::Biharmonic => DiffOperator::biharmonic(d)?,
            OperatorSpec::Matrix { entries } => DiffOperator::from_matrix(entries, d)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    /// Sparse random jets, checked by exhaustive expectation.
    Sparse,
    /// Means of the subset estimate over every index set of size `batch`.
    Sdgd,
    /// Rademacher trace estimate, checked over all sign vectors.
    HteRademacher,
    /// Gaussian trace estimate, checked against the standard error.
    HteGaussian,
    /// Dense random jets, checked against the standard error.
    Dense,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_samples() -> usize {
    100_000
}

fn default_batch() -> usize {
    1
}

fn default_tolerance() -> f64 {
    1e-10
}

fn default_fd_tolerance() -> f64 {
    1e-4
}

fn default_sigmas() -> f64 {
    3.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    pub function: FunctionSpec,
    pub operator: OperatorSpec,
    pub estimator: EstimatorKind,
    pub dims: Vec<usize>,
    /// Seeds for the function and the evaluation point. The global seed
    /// is added to each.
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Monte Carlo samples for the randomized checks.
    #[serde(default = "default_samples")]
    pub samples: usize,
    /// Index set size for `sdgd`.
    #[serde(default = "default_batch")]
    pub batch: usize,
    /// Allowed relative deviation of exhaustive expectations.
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    /// Allowed relative deviation from finite differences.
    #[serde(default = "default_fd_tolerance")]
    pub fd_tolerance: f64,
    /// Allowed Monte Carlo deviation in standard errors.
    #[serde(default = "default_sigmas")]
    pub sigmas: f64,
}

fn default_width() -> usize {
    128
}

fn default_layers() -> usize {
    3
}

/// Network shape for `solve` and `bench`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelOptions {
    #[serde(default = "default_width")]
    pub width: usize,
    #[serde(default = "default_layers")]
    pub hidden_layers: usize,
    #[serde(default)]
    pub share_block: Option<usize>,
}

impl Default for ModelOptions {
    fn default() -> Self {
        Self {
            width: default_width(),
            hidden_layers: default_layers(),
            share_block: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveConfig {
    /// A registered problem name.
    pub problem: String,
    /// Spatial dimension (ignored by the fixed-dimension polynomial problems).
    #[serde(default)]
    pub dim: usize,
    /// Seed of the problem's random exact solution.
    #[serde(default)]
    pub problem_seed: u64,
    #[serde(default)]
    pub model: ModelOptions,
    /// Training settings; `train.seed` is replaced by the global seed.
    #[serde(default)]
    pub train: TrainConfig,
}

/// One estimator setting in a bench sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BenchEstimator {
    /// Randomized Laplacian over `batch` sampled dimensions.
    Stde {
        batch: usize,
        #[serde(default)]
        unbiased: bool,
    },
    /// Every dimension of the Laplacian, no randomization.
    Exact,
}

fn default_bench_problem() -> String {
    "allen-cahn-2body".into()
}

fn default_reps() -> usize {
    5
}

fn default_points() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    #[serde(default = "default_bench_problem")]
    pub problem: String,
    pub dims: Vec<usize>,
    pub estimators: Vec<BenchEstimator>,
    /// Timed steps per setting; the median is reported.
    #[serde(default = "default_reps")]
    pub reps: usize,
    /// Untimed steps before measuring.
    #[serde(default)]
    pub warmup: usize,
    #[serde(default = "default_points")]
    pub residual_points: usize,
    #[serde(default)]
    pub model: ModelOptions,
    /// Orders of single diagonal jets timed through the network at the
    /// first dimension of the sweep.
    #[serde(default)]
    pub jet_orders: Vec<usize>,
}

impl RunConfig {
    /// Parses `text` after applying `key.path=value` overrides. Values are
    /// read as JSON and fall back to plain strings.
    pub fn parse(text: &str, overrides: &[String]) -> Result<Self, CliError> {
        let mut value: Value =
            serde_json::from_str(text).map_err(|e| CliError::Usage(format!("config: {e}")))?;
        for item in overrides {
            apply_override(&mut value, item)?;
        }
        serde_json::from_value(value).map_err(|e| CliError::Usage(format!("config: {e}")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Rejects settings that would fail only after work has started.
    pub fn validate(&self) -> Result<(), CliError> {
        if self.threads == Some(0) {
            return Err(CliError::Usage("threads must be positive".into()));
        }
        if let Some(p) = &self.plan {
            if p.targets.is_empty() {
                return Err(CliError::Usage("plan.targets is empty".into()));
            }
            for t in &p.targets {
                t.parse::<MultiIndex>()
                    .map_err(|e| CliError::Usage(format!("plan target {t:?}: {e}")))?;
            }
        }
        if let Some(v) = &self.verify {
            if v.dims.is_empty() || v.dims.contains(&0) || v.seeds.is_empty() {
                return Err(CliError::Usage(
                    "verify needs positive dims and at least one seed".into(),
                ));
            }
            if v.samples < 2 {
                return Err(CliError::Usage("verify.samples must be at least 2".into()));
            }
        }
        if let Some(s) = &self.solve {
            jetstorm_core::pinn::pde_registry(&s.problem, s.dim, s.problem_seed)
                .map_err(|e| CliError::Usage(format!("solve: {e}")))?;
        }
        if let Some(b) = &self.bench {
            if b.dims.is_empty() || b.dims.contains(&0) || b.reps == 0 {
                return Err(CliError::Usage(
                    "bench needs positive dims and reps".into(),
                ));
            }
            for &d in &b.dims {
                let p = jetstorm_core::pinn::pde_registry(&b.problem, d, 0)
                    .map_err(|e| CliError::Usage(format!("bench: {e}")))?;
                if !p.is_semilinear() {
                    return Err(CliError::Usage(format!(
                        "bench needs a problem with a Laplacian, got {}",
                        b.problem
                    )));
                }
                for e in &b.estimators {
                    if let BenchEstimator::Stde { batch, .. } = e {
                        if *batch == 0 || *batch > d {
                            return Err(CliError::Usage(format!(
                                "bench batch {batch} outside 1..={d}"
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

fn apply_override(root: &mut Value, item: &str) -> Result<(), CliError> {
    let (path, raw) = item
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("override {item:?} is not key=value")))?;
    let new = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(CliError::Usage(format!("bad override key {path:?}")));
    }
    let mut node = root;
    for key in &keys[..keys.len() - 1] {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| CliError::Usage(format!("override {path:?} crosses a non-object")))?;
        node = obj
            .entry(key.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    node.as_object_mut()
        .ok_or_else(|| CliError::Usage(format!("override {path:?} crosses a non-object")))?
        .insert(keys[keys.len() - 1].to_string(), new);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const FULL: &str = r#"{
        "seed": 3,
        "threads": 2,
        "plan": {"targets": ["x1^2 x2"]},
        "verify": {
            "function": {"kind": "mlp", "width": 4},
            "operator": {"kind": "diagonal", "order": 3},
            "estimator": "sparse",
            "dims": [2, 3]
        },
        "solve": {"problem": "poisson-2body", "dim": 5, "train": {"steps": 7, "loss": {"batch": 2}}},
        "bench": {"dims": [10], "estimators": [{"kind": "stde", "batch": 4}, {"kind": "exact"}]}
    }"#;

    #[test]
    fn round_trip_is_lossless() {
        let c = RunConfig::parse(FULL, &[]).unwrap();
        let again = RunConfig::parse(&c.to_json(), &[]).unwrap();
        assert_eq!(c, again);
        assert_eq!(c.to_json(), again.to_json());
        c.validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected_at_every_level() {
        for bad in [
            r#"{"sed": 1}"#,
            r#"{"plan": {"targets": ["x1"], "cap": 3}}"#,
            r#"{"solve": {"problem": "poisson-2body", "train": {"step": 3}}}"#,
            r#"{"verify": {"function": {"kind": "mlp", "hight": 2}, "operator": {"kind": "laplacian"}, "estimator": "sparse", "dims": [2]}}"#,
        ] {
            assert!(matches!(RunConfig::parse(bad, &[]), Err(CliError::Usage(_))), "{bad}");
        }
    }

    #[test]
    fn overrides_reach_nested_fields() {
        let c = RunConfig::parse(
            FULL,
            &[
                "solve.train.steps=11".into(),
                "solve.model.width=16".into(),
                "plan.targets=[\"x3\"]".into(),
                "solve.problem=allen-cahn-2body".into(),
            ],
        )
        .unwrap();
        let s = c.solve.unwrap();
        assert_eq!(s.train.steps, 11);
        assert_eq!(s.model.width, 16);
        assert_eq!(s.problem, "allen-cahn-2body");
        assert_eq!(c.plan.unwrap().targets, vec!["x3".to_string()]);
        assert!(RunConfig::parse(FULL, &["solve.train.stepz=1".into()]).is_err());
        assert!(RunConfig::parse(FULL, &["seed".into()]).is_err());
        assert!(RunConfig::parse(FULL, &["seed.x=1".into()]).is_err());
    }

    #[test]
    fn validation_catches_bad_payloads_before_work() {
        let bad = [
            r#"{"plan": {"targets": ["y1"]}}"#,
            r#"{"solve": {"problem": "no-such-problem", "dim": 3}}"#,
            r#"{"bench": {"dims": [4], "estimators": [{"kind": "stde", "batch": 9}]}}"#,
            r#"{"threads": 0}"#,
        ];
        for text in bad {
            let c = RunConfig::parse(text, &[]).unwrap();
            assert!(c.validate().is_err(), "{text}");
        }
    }
}
