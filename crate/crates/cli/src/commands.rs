//! The four subcommands. Each returns its artifacts as strings and writes
//! them under the output directory.

use std::fs;
use std::path::Path;
use std::time::Instant;

use jetstorm_core::estimators::{
    dense_estimate, hte_dense, hte_rademacher_atoms, sample_rng, sdgd_subset, HteDistribution,
    SparseStde,
};
use jetstorm_core::graph::Graph;
use jetstorm_core::operator::{
    evaluate_plan, plan_mixed_partial, plan_operator, DiffOperator, JetPlan, MultiIndex,
    PushforwardEngine,
};
use jetstorm_core::oracle::{exhaustive_expectation, fd_derivative, graph_fn, FdScheme};
use jetstorm_core::pinn::{
    metrics_csv, pde_registry, step_points, train_from, Adam, Checkpoint, EvalSet, LossSpec,
    MetricRow, ModelSpec, Objective, PdeProblem, PinnModel,
};
use jetstorm_core::Error;
use log::info;
use rand::Rng;
use serde::Serialize;

use crate::alloc;
use crate::config::{
    BenchConfig, BenchEstimator, EstimatorKind, ModelOptions, PlanConfig, SolveConfig,
    VerifyConfig,
};
use crate::CliError;

fn write(dir: &Path, name: &str, contents: &str) -> Result<(), CliError> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(name), contents)?;
    Ok(())
}

/// Planner output for one target.
#[derive(Debug, Serialize)]
pub struct PlanRecord {
    pub target: String,
    pub order_cap: usize,
    pub pushforwards: usize,
    pub correction_free: bool,
    pub plan: JetPlan,
}

/// Plans every target. Fails with [`Error::NoPlan`] if any target has no
/// plan within the cap; the plans found so far are still written.
pub fn plan(cfg: &PlanConfig, out: &Path) -> Result<String, CliError> {
    let mut records = Vec::new();
    let mut failure = None;
    for t in &cfg.targets {
        let alpha: MultiIndex = t.parse()?;
        match plan_mixed_partial(&alpha, cfg.order_cap) {
            Ok(plan) => records.push(PlanRecord {
                target: t.clone(),
                order_cap: cfg.order_cap,
                pushforwards: plan.cost(),
                correction_free: plan.corrections.is_empty(),
                plan,
            }),
            Err(e @ Error::NoPlan { .. }) => {
                failure.get_or_insert(e);
            }
            Err(e) => return Err(e.into()),
        }
    }
    let json = serde_json::to_string_pretty(&records)?;
    write(out, "plan.json", &json)?;
    match failure {
        Some(e) => Err(e.into()),
        None => Ok(json),
    }
}

/// One row of the verification report.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub dim: usize,
    pub seed: u64,
    pub check: &'static str,
    pub value: f64,
    pub reference: f64,
    /// Relative deviation floored at 1, or for Monte Carlo checks the
    /// deviation in standard errors.
    pub deviation: f64,
    pub tolerance: f64,
}

impl Check {
    fn exact(dim: usize, seed: u64, check: &'static str, value: f64, reference: f64, tol: f64) -> Self {
        Self {
            dim,
            seed,
            check,
            value,
            reference,
            deviation: (value - reference).abs() / reference.abs().max(1.0),
            tolerance: tol,
        }
    }

    fn monte_carlo(dim: usize, seed: u64, value: f64, stderr: f64, reference: f64, sigmas: f64) -> Self {
        Self {
            dim,
            seed,
            check: "monte_carlo",
            value,
            reference,
            deviation: (value - reference).abs() / stderr.max(f64::MIN_POSITIVE),
            tolerance: sigmas,
        }
    }

    pub fn passed(&self) -> bool {
        self.deviation <= self.tolerance
    }
}

pub fn checks_csv(rows: &[Check]) -> String {
    let mut s = String::from("dim,seed,check,value,reference,deviation,tolerance,pass\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{:e},{:e},{:e},{:e},{}\n",
            r.dim,
            r.seed,
            r.check,
            r.value,
            r.reference,
            r.deviation,
            r.tolerance,
            r.passed()
        ));
    }
    s
}

/// Largest support enumerated by the subset check.
const MAX_SUBSETS: u128 = 100_000;

fn binomial(n: usize, k: usize) -> u128 {
    (0..k as u128).fold(1, |acc, i| acc * (n as u128 - i) / (i + 1))
}

fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn go(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            go(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    go(0, n, k, &mut Vec::new(), &mut out);
    out
}

/// `sum_alpha C_alpha D^alpha u(x)` through exact jet plans.
fn planned_value(g: &Graph, x: &[f64], theta: &[f64], op: &DiffOperator) -> Result<f64, CliError> {
    let mut total = 0.0;
    for t in plan_operator(op, g.max_order())? {
        total += t.coefficient * evaluate_plan(&t.plan, g, x, theta)?;
    }
    Ok(total)
}

fn fd_value(g: &Graph, x: &[f64], theta: &[f64], op: &DiffOperator) -> Result<f64, CliError> {
    let f = graph_fn(g, theta);
    let scheme = FdScheme::for_order(op.order()).with_richardson(2);
    let mut total = 0.0;
    for (alpha, c) in op.terms() {
        total += c * fd_derivative(&f, x, Some(alpha), scheme)?.value;
    }
    Ok(total)
}

/// Terms above which the finite-difference cross-check is skipped.
const MAX_FD_TERMS: usize = 400;

fn require_laplacian(op: &DiffOperator, d: usize) -> Result<(), CliError> {
    if *op != DiffOperator::laplacian(d)? {
        return Err(Error::Unsupported("trace estimators only estimate the Laplacian".into()).into());
    }
    Ok(())
}

/// Runs the oracle suite. Unsupported constructions surface as errors;
/// failed checks come back as rows with `passed() == false`.
pub fn verify(cfg: &VerifyConfig, global_seed: u64, out: &Path) -> Result<Vec<Check>, CliError> {
    let mut rows = Vec::new();
    for &d in &cfg.dims {
        let op = cfg.operator.build(d)?;
        for &s in &cfg.seeds {
            let seed = global_seed.wrapping_add(s);
            let (g, theta) = cfg.function.build(d, seed)?;
            let mut rng = sample_rng(seed, 2);
            let x: Vec<f64> = (0..d).map(|_| rng.random::<f64>() - 0.5).collect();
            let reference = planned_value(&g, &x, &theta, &op)?;
            if op.terms().len() <= MAX_FD_TERMS {
                let fd = fd_value(&g, &x, &theta, &op)?;
                rows.push(Check::exact(d, seed, "finite_difference", reference, fd, cfg.fd_tolerance));
            }
            match cfg.estimator {
                EstimatorKind::Sparse => {
                    let stde = SparseStde::new(&g, &op, g.max_order())?;
                    let mean = exhaustive_expectation(&stde.atoms_at(&x, &theta)?)?;
                    rows.push(Check::exact(d, seed, "exhaustive", mean, reference, cfg.tolerance));
                }
                EstimatorKind::Sdgd => {
                    if cfg.batch == 0 || cfg.batch > d {
                        return Err(CliError::Usage(format!(
                            "verify.batch {} outside 1..={d}",
                            cfg.batch
                        )));
                    }
                    if binomial(d, cfg.batch) > MAX_SUBSETS {
                        return Err(Error::Oracle(format!(
                            "C({d}, {}) index sets exceed the enumeration cap {MAX_SUBSETS}",
                            cfg.batch
                        ))
                        .into());
                    }
                    let sets = subsets(d, cfg.batch);
                    let mut sum = 0.0;
                    for j in &sets {
                        sum += sdgd_subset(&g, &x, &theta, &op, j)?;
                    }
                    let mean = sum / sets.len() as f64;
                    rows.push(Check::exact(d, seed, "exhaustive", mean, reference, cfg.tolerance));
                }
                EstimatorKind::HteRademacher => {
                    require_laplacian(&op, d)?;
                    let mean = exhaustive_expectation(&hte_rademacher_atoms(&g, &x, &theta)?)?;
                    rows.push(Check::exact(d, seed, "exhaustive", mean, reference, cfg.tolerance));
                }
                EstimatorKind::HteGaussian => {
                    require_laplacian(&op, d)?;
                    let r = hte_dense(&g, &x, &theta, HteDistribution::Gaussian, cfg.samples, seed)?;
                    rows.push(Check::monte_carlo(d, seed, r.mean, r.stderr(), reference, cfg.sigmas));
                }
                EstimatorKind::Dense => {
                    let r = dense_estimate(&g, &x, &theta, &op, cfg.samples, seed)?;
                    rows.push(Check::monte_carlo(d, seed, r.mean, r.stderr(), reference, cfg.sigmas));
                }
            }
            info!("verified d={d} seed={seed}");
        }
    }
    write(out, "verify.csv", &checks_csv(&rows))?;
    Ok(rows)
}

/// Written as `summary.json` after a solve.
#[derive(Debug, Clone, Serialize)]
pub struct SolveSummary {
    pub problem: String,
    pub dim: usize,
    pub params: usize,
    pub steps: usize,
    pub status: &'static str,
    pub final_loss: Option<f64>,
    pub final_rel_l2: Option<f64>,
    /// Relative L2 error of the untrained network on the same evaluation set.
    pub baseline_rel_l2: Option<f64>,
    pub wall_seconds: f64,
    /// Allocator high-water mark during the run, in bytes.
    pub peak_bytes: usize,
}

fn model_for(problem: &PdeProblem, opts: &ModelOptions, seed: u64) -> Result<PinnModel, CliError> {
    let spec = ModelSpec::new(problem.input_len())
        .width(opts.width)
        .hidden_layers(opts.hidden_layers)
        .share_block(opts.share_block)
        .boundary(problem.zero_boundary())
        .spatial(problem.dim);
    Ok(PinnModel::new(spec, seed)?)
}

/// Trains and writes `metrics.csv`, `checkpoint.json` and `summary.json`.
/// On divergence the checkpoint holds the last finite state.
pub fn solve(cfg: &SolveConfig, seed: u64, out: &Path) -> Result<SolveSummary, CliError> {
    let problem = pde_registry(&cfg.problem, cfg.dim, cfg.problem_seed)?;
    let mut train = cfg.train.clone();
    train.seed = seed;
    alloc::reset_peak();
    let base = alloc::current_bytes();
    let start = Instant::now();
    let mut model = model_for(&problem, &cfg.model, seed)?;
    let baseline = match EvalSet::new(&problem, train.eval_points, seed) {
        Some(e) => Some(e.relative_l2(&model)?),
        None => None,
    };
    let mut adam = Adam::new(train.adam, model.param_count());
    let mut rows: Vec<MetricRow> = Vec::new();
    let result = train_from(&mut model, &problem, &train, &mut adam, 0, |r| {
        if let Some(e) = r.rel_l2 {
            info!("step {} loss {:.4e} rel_l2 {:.4e}", r.step, r.loss, e);
        }
        rows.push(r.clone());
    });
    let mut summary = SolveSummary {
        problem: problem.name.clone(),
        dim: problem.dim,
        params: model.param_count(),
        steps: rows.len(),
        status: "ok",
        final_loss: rows.last().map(|r| r.loss),
        final_rel_l2: None,
        baseline_rel_l2: baseline,
        wall_seconds: 0.0,
        peak_bytes: 0,
    };
    let (checkpoint, err) = match result {
        Ok(outcome) => {
            summary.final_rel_l2 = outcome.final_rel_l2;
            (outcome.checkpoint, None)
        }
        Err(e @ Error::Divergence { .. }) => {
            summary.status = "diverged";
            let ck = Checkpoint {
                problem: problem.clone(),
                model: model.spec().clone(),
                config: train.clone(),
                step: rows.len(),
                params: model.params().to_vec(),
                adam,
            };
            (ck, Some(e))
        }
        Err(e) => return Err(e.into()),
    };
    summary.wall_seconds = start.elapsed().as_secs_f64();
    summary.peak_bytes = alloc::peak_bytes().saturating_sub(base);
    write(out, "metrics.csv", &metrics_csv(&rows))?;
    write(out, "checkpoint.json", &checkpoint.to_json()?)?;
    write(out, "summary.json", &serde_json::to_string_pretty(&summary)?)?;
    match err {
        Some(e) => Err(e.into()),
        None => Ok(summary),
    }
}

/// One row of the scaling table.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub section: &'static str,
    pub dim: usize,
    pub estimator: String,
    pub batch: usize,
    pub order: usize,
    pub reps: usize,
    pub median_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
    pub peak_bytes: usize,
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut s = String::from("section,dim,estimator,batch,order,reps,median_ms,min_ms,max_ms,peak_bytes\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{:.4},{:.4},{:.4},{}\n",
            r.section, r.dim, r.estimator, r.batch, r.order, r.reps, r.median_ms, r.min_ms, r.max_ms,
            r.peak_bytes
        ));
    }
    s
}

/// Times `f` `warmup + reps` times; returns median, min and max of the
/// timed calls in milliseconds and the allocation high-water mark above
/// the starting level.
fn time_reps(
    warmup: usize,
    reps: usize,
    mut f: impl FnMut(usize) -> Result<(), CliError>,
) -> Result<(f64, f64, f64, usize), CliError> {
    let base = alloc::current_bytes();
    alloc::reset_peak();
    for i in 0..warmup {
        f(i)?;
    }
    let mut ms = Vec::with_capacity(reps);
    for i in 0..reps {
        let t = Instant::now();
        f(warmup + i)?;
        ms.push(t.elapsed().as_secs_f64() * 1e3);
    }
    let peak = alloc::peak_bytes().saturating_sub(base);
    ms.sort_by(f64::total_cmp);
    let median = if reps % 2 == 1 {
        ms[reps / 2]
    } else {
        0.5 * (ms[reps / 2 - 1] + ms[reps / 2])
    };
    Ok((median, ms[0], ms[reps - 1], peak))
}

/// Times one training step (loss, gradient and Adam update) per
/// (dimension, estimator), and single diagonal jets per order.
pub fn bench(cfg: &BenchConfig, seed: u64, out: &Path) -> Result<Vec<BenchRow>, CliError> {
    let mut rows = Vec::new();
    for &d in &cfg.dims {
        let problem = pde_registry(&cfg.problem, d, seed)?;
        for est in &cfg.estimators {
            let (name, batch, spec) = match est {
                BenchEstimator::Stde { batch, unbiased } => (
                    if *unbiased { "stde_unbiased" } else { "stde" },
                    *batch,
                    LossSpec {
                        batch: Some(*batch),
                        unbiased: *unbiased,
                        ..LossSpec::default()
                    },
                ),
                BenchEstimator::Exact => ("exact", d, LossSpec::default()),
            };
            let mut model = model_for(&problem, &cfg.model, seed)?;
            let mut adam = Adam::new(Default::default(), model.param_count());
            let obj = Objective::new(&model, &problem, spec)?;
            let (median, min, max, peak) = time_reps(cfg.warmup, cfg.reps, |t| {
                let (pts, mut rng) = step_points(&problem, cfg.residual_points, seed, t);
                let idx = obj.sample(&mut rng)?;
                let (_, g) = obj.evaluate(&model, &pts, &idx, true)?;
                adam.step(model.params_mut(), &g.expect("gradient requested"), 1e-3);
                Ok(())
            })?;
            info!("d={d} {name}: {median:.2} ms/step");
            rows.push(BenchRow {
                section: "step",
                dim: d,
                estimator: name.into(),
                batch,
                order: 2,
                reps: cfg.reps,
                median_ms: median,
                min_ms: min,
                max_ms: max,
                peak_bytes: peak,
            });
        }
    }
    if let Some(&d) = cfg.dims.first() {
        let problem = pde_registry(&cfg.problem, d, seed)?;
        let model = model_for(&problem, &cfg.model, seed)?;
        let engine = PushforwardEngine::new(model.graph())?;
        let x = problem.sample_point(&mut sample_rng(seed, 0));
        for &k in &cfg.jet_orders {
            let plan = plan_mixed_partial(&MultiIndex::new([(0, k as u32)])?, k)?;
            let (median, min, max, peak) = time_reps(cfg.warmup.max(1), cfg.reps, |_| {
                engine.evaluate_plan(&plan, &x, model.params())?;
                Ok(())
            })?;
            rows.push(BenchRow {
                section: "jet_order",
                dim: d,
                estimator: "diagonal_jet".into(),
                batch: 1,
                order: k,
                reps: cfg.reps,
                median_ms: median,
                min_ms: min,
                max_ms: max,
                peak_bytes: peak,
            });
        }
    }
    write(out, "bench.csv", &bench_csv(&rows))?;
    Ok(rows)
}
