//! Residual, amortized-residual and gradient-enhanced losses.
//!
//! Every loss is a per-point graph built by pushing jets through the model:
//! inputs are `[x, directions..., extras...]`, output 0 is the per-point
//! loss. Directions are graph inputs, so a new index sample reuses the same
//! graph. Reverse mode through that graph gives the parameter gradient.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::PinnModel;
use super::problems::{Factor, Monomial, Nonlinearity, PdeKind, PdeProblem};
use crate::error::{Error, Result};
use crate::estimators::sample_indices;
use crate::graph::{pairwise_sum, Evaluator, Graph, GraphBuilder, NodeId};
use crate::jet::{embed_jets, JetNodes};
use crate::operator::{plan_mixed_partial, MultiIndex, Pushforward};

/// Fixed number of point chunks, so gradient sums do not depend on the
/// thread count.
const CHUNKS: usize = 8;

/// Weight of the initial-condition penalty for parabolic problems.
pub const INITIAL_WEIGHT: f64 = 20.0;

fn basis(d: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; d];
    v[i] = 1.0;
    v
}

/// Jets of one order sharing a single embedding; each entry lists active slots.
struct JetGroup {
    order: usize,
    jets: Vec<Vec<usize>>,
}

/// Builds `[x, directions per group/jet/slot..., extras...] -> outputs`.
fn build_point_graph(
    model: &Graph,
    groups: &[JetGroup],
    extra: &[usize],
    head: impl FnOnce(&mut GraphBuilder, &[JetNodes], &[NodeId]) -> Result<Vec<NodeId>>,
) -> Result<Graph> {
    let n = model.input_len(0);
    let mut b = GraphBuilder::new().with_max_order(model.max_order());
    let params: Vec<NodeId> = model
        .params()
        .iter()
        .map(|&p| b.param(model.node(p).len))
        .collect();
    let x = b.input(n);
    let mut bundles = Vec::with_capacity(groups.len());
    for g in groups {
        let mut tangents = Vec::with_capacity(g.jets.len());
        for slots in &g.jets {
            let mut jet = vec![None; g.order];
            for &j in slots {
                jet[j - 1] = Some(b.input(n));
            }
            tangents.push(jet);
        }
        bundles.push(JetNodes {
            primal: x,
            tangents,
        });
    }
    let extra: Vec<NodeId> = extra.iter().map(|&len| b.input(len)).collect();
    let mut outs = Vec::with_capacity(groups.len());
    for (g, input) in groups.iter().zip(bundles) {
        outs.push(
            embed_jets(&mut b, model, &params, &[input], g.order)?
                .pop()
                .expect("one output"),
        );
    }
    if outs.is_empty() {
        outs.push(
            embed_jets(&mut b, model, &params, &[JetNodes::primal_only(x)], 1)?
                .pop()
                .expect("one output"),
        );
    }
    let outputs = head(&mut b, &outs, &extra)?;
    b.finish(&outputs)
}

/// Sum of `nodes`, scaled by `c`.
fn scaled_sum(b: &mut GraphBuilder, nodes: &[NodeId], c: f64) -> NodeId {
    let mut acc = nodes[0];
    for &n in &nodes[1..] {
        acc = b.add(acc, n);
    }
    b.scale(acc, c)
}

/// A per-point loss graph together with its direction inputs.
#[derive(Debug, Clone)]
struct PointLoss {
    graph: Graph,
    /// Directions shared by all points.
    directions: Vec<Vec<f64>>,
}

/// Mean over points of output 0, with its parameter gradient when asked,
/// and means of the remaining outputs.
fn run_points(
    graph: &Graph,
    directions: &[Vec<f64>],
    params: &[f64],
    points: &[Vec<f64>],
    extras: &(dyn Fn(&[f64]) -> Vec<Vec<f64>> + Sync),
    want_grad: bool,
) -> Result<(Vec<f64>, Option<Vec<f64>>)> {
    if points.is_empty() {
        return Err(Error::InvalidArgument("no residual points".into()));
    }
    let n_out = graph.outputs().len();
    let seed = [1.0 / points.len() as f64];
    let chunk = points.len().div_ceil(CHUNKS);
    let parts = points
        .par_chunks(chunk)
        .map(|pts| {
            let mut ev = Evaluator::new(graph);
            let mut grad = want_grad.then(|| vec![0.0; graph.param_len()]);
            let mut values = Vec::with_capacity(pts.len());
            for x in pts {
                let ex = extras(x);
                let mut inputs: Vec<&[f64]> = Vec::with_capacity(1 + directions.len() + ex.len());
                inputs.push(x);
                inputs.extend(directions.iter().map(Vec::as_slice));
                inputs.extend(ex.iter().map(Vec::as_slice));
                ev.forward(graph, &inputs, params)?;
                let out: Vec<f64> = (0..n_out).map(|i| ev.output(graph, params, i)[0]).collect();
                if !out[0].is_finite() {
                    return Err(Error::NonFinite {
                        node: graph.outputs()[0].index(),
                    });
                }
                values.push(out);
                if let Some(g) = grad.as_mut() {
                    ev.backward(graph, params, &[(0, &seed)], g)?;
                }
            }
            Ok((values, grad))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut grad: Option<Vec<f64>> = None;
    let mut values = Vec::with_capacity(points.len());
    for (v, g) in parts {
        values.extend(v);
        if let Some(g) = g {
            match grad.as_mut() {
                None => grad = Some(g),
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
            }
        }
    }
    let means = (0..n_out)
        .map(|i| {
            let col: Vec<f64> = values.iter().map(|v| v[i]).collect();
            pairwise_sum(&col) / points.len() as f64
        })
        .collect();
    Ok((means, grad))
}

fn check_indices(set: &[usize], d: usize, what: &str) -> Result<()> {
    if set.is_empty() {
        return Err(Error::InvalidArgument(format!("index set {what} is empty")));
    }
    if let Some(&i) = set.iter().find(|&&i| i >= d) {
        return Err(Error::InvalidArgument(format!(
            "index {i} in {what} is out of range for dimension {d}"
        )));
    }
    Ok(())
}

/// `Lap_J u + N(u) - u_t - f` from order-2 jet outputs: `lap` lists the
/// second-order tangents, `ut` the time tangent.
fn semilinear_residual(
    b: &mut GraphBuilder,
    lap: NodeId,
    u: NodeId,
    ut: Option<NodeId>,
    f: NodeId,
    n: Nonlinearity,
) -> NodeId {
    let mut r = b.sub(lap, f);
    if let Some(nu) = n.build(b, u) {
        r = b.add(r, nu);
    }
    if let Some(ut) = ut {
        r = b.sub(r, ut);
    }
    r
}

fn semilinear_graph(model: &Graph, problem: &PdeProblem, nj: usize, nk: usize) -> Result<Graph> {
    let n = problem.nonlinearity().expect("semilinear problem");
    let d = problem.dim as f64;
    let time = matches!(problem.kind, PdeKind::Parabolic { .. });
    let jets = nj + nk + usize::from(time);
    let group = JetGroup {
        order: 2,
        jets: vec![vec![1]; jets],
    };
    build_point_graph(model, &[group], &[1], |b, outs, extra| {
        let out = &outs[0];
        let u = out.primal;
        let f = extra[0];
        let t2 = |b: &mut GraphBuilder, s: usize| out.tangent_or_zero(b, s, 2);
        let ut = time.then(|| out.tangent_or_zero(b, jets - 1, 1));
        let a: Vec<NodeId> = (0..nj).map(|s| t2(b, s)).collect();
        let lap_j = scaled_sum(b, &a, d / nj as f64);
        let rj = semilinear_residual(b, lap_j, u, ut, f, n);
        let loss = if nk == 0 {
            b.hadamard(rj, rj)
        } else {
            let a: Vec<NodeId> = (nj..nj + nk).map(|s| t2(b, s)).collect();
            let lap_k = scaled_sum(b, &a, d / nk as f64);
            let rk = semilinear_residual(b, lap_k, u, ut, f, n);
            b.hadamard(rj, rk)
        };
        Ok(vec![loss, loss, loss])
    })
}

/// Order-7 jets with `e_i` in slot 2 and `e_j` in slot 3 yield
/// `d_j u = t_3`, `d_i^2 u = t_4 / 3` and `d_j d_i^2 u = t_7 / 105`.
fn gpinn_graph(
    model: &Graph,
    problem: &PdeProblem,
    ni: usize,
    nj: usize,
    weight: f64,
) -> Result<Graph> {
    let n = match &problem.kind {
        PdeKind::Elliptic { nonlinearity } => *nonlinearity,
        _ => {
            return Err(Error::Unsupported(format!(
                "subsampled gradient enhancement needs an elliptic problem, got {}",
                problem.name
            )))
        }
    };
    let d = problem.dim as f64;
    let group = JetGroup {
        order: 7,
        jets: vec![vec![2, 3]; ni * nj],
    };
    build_point_graph(model, &[group], &[1, nj], |b, outs, extra| {
        let out = &outs[0];
        let u = out.primal;
        let (f, df) = (extra[0], extra[1]);
        let jet = |i: usize, j: usize| i * nj + j;
        let second: Vec<NodeId> = (0..ni)
            .map(|i| out.tangent_or_zero(b, jet(i, 0), 4))
            .collect();
        let lap = scaled_sum(b, &second, d / (3.0 * ni as f64));
        let r = semilinear_residual(b, lap, u, None, f, n);
        let res = b.hadamard(r, r);
        let dn = n.build_derivative(b, u);
        let mut squares = Vec::with_capacity(nj);
        for j in 0..nj {
            let third: Vec<NodeId> = (0..ni)
                .map(|i| out.tangent_or_zero(b, jet(i, j), 7))
                .collect();
            let mut g = scaled_sum(b, &third, d / (105.0 * ni as f64));
            if let Some(dn) = dn {
                let du = out.tangent_or_zero(b, jet(0, j), 3);
                let t = b.hadamard(dn, du);
                g = b.add(g, t);
            }
            let dfj = b.slice(df, j, 1);
            g = b.sub(g, dfj);
            squares.push(b.hadamard(g, g));
        }
        let gp = scaled_sum(b, &squares, d / nj as f64);
        let weighted = b.scale(gp, weight);
        let total = b.add(res, weighted);
        Ok(vec![total, res, gp])
    })
}

/// Exact-plan graph for polynomial residuals; with `gpinn` also
/// `weight * sum_j (d_j R)^2` over every input dimension.
fn polynomial_graph(
    model: &Graph,
    monomials: &[Monomial],
    gpinn: Option<f64>,
) -> Result<(Graph, Vec<Vec<f64>>)> {
    let n = model.input_len(0);
    let cap = model.max_order();
    let shift = |f: &Factor, j: usize| -> Result<MultiIndex> {
        match f {
            Factor::Value => MultiIndex::diagonal(j, 1),
            Factor::Partial(a) => MultiIndex::new(a.pairs().iter().copied().chain([(j, 1)])),
        }
    };
    let mut targets: Vec<MultiIndex> = Vec::new();
    let mut want = |a: MultiIndex| {
        if !targets.contains(&a) {
            targets.push(a);
        }
    };
    for m in monomials {
        for f in &m.factors {
            if let Factor::Partial(a) = f {
                want(a.clone());
            }
            if gpinn.is_some() {
                for j in 0..n {
                    want(shift(f, j)?);
                }
            }
        }
    }
    // Distinct pushforwards, then each target as a weighted sum of them.
    let mut pushes: Vec<Pushforward> = Vec::new();
    let mut combos: Vec<Vec<(usize, f64)>> = Vec::new();
    for a in &targets {
        if a.span() > n {
            return Err(Error::Shape(format!(
                "term {a} exceeds input dimension {n}"
            )));
        }
        let plan = plan_mixed_partial(a, cap)?;
        let mut combo = Vec::new();
        for (p, w) in plan.linearize() {
            let idx = match pushes.iter().position(|q| *q == p) {
                Some(i) => i,
                None => {
                    pushes.push(p);
                    pushes.len() - 1
                }
            };
            combo.push((idx, w));
        }
        combos.push(combo);
    }
    let mut orders: Vec<usize> = pushes.iter().map(|p| p.order).collect();
    orders.sort_unstable();
    orders.dedup();
    // (group, jet) of each pushforward.
    let mut place = vec![(0, 0); pushes.len()];
    let mut groups = Vec::new();
    let mut directions = Vec::new();
    for (gi, &o) in orders.iter().enumerate() {
        let mut jets = Vec::new();
        for (pi, p) in pushes.iter().enumerate().filter(|(_, p)| p.order == o) {
            place[pi] = (gi, jets.len());
            jets.push(p.slots.iter().map(|(s, _)| *s).collect());
            for (_, dir) in &p.slots {
                directions.push(dir.to_dense(n)?);
            }
        }
        groups.push(JetGroup { order: o, jets });
    }
    let graph = build_point_graph(model, &groups, &[], |b, outs, _| {
        let u = outs[0].primal;
        let raw: Vec<NodeId> = pushes
            .iter()
            .zip(&place)
            .map(|(p, &(g, s))| outs[g].tangent_or_zero(b, s, p.order))
            .collect();
        let mut value_of = std::collections::HashMap::new();
        for (a, combo) in targets.iter().zip(&combos) {
            let terms: Vec<NodeId> = combo.iter().map(|&(i, w)| b.scale(raw[i], w)).collect();
            let v = scaled_sum(b, &terms, 1.0);
            value_of.insert(a.clone(), v);
        }
        let node = |f: &Factor| match f {
            Factor::Value => u,
            Factor::Partial(a) => value_of[a],
        };
        let product = |b: &mut GraphBuilder, nodes: &[NodeId], c: f64| {
            let mut acc = nodes[0];
            for &x in &nodes[1..] {
                acc = b.hadamard(acc, x);
            }
            b.scale(acc, c)
        };
        let terms: Vec<NodeId> = monomials
            .iter()
            .map(|m| {
                let f: Vec<NodeId> = m.factors.iter().map(node).collect();
                product(b, &f, m.coefficient)
            })
            .collect();
        let r = scaled_sum(b, &terms, 1.0);
        let res = b.hadamard(r, r);
        let Some(weight) = gpinn else {
            return Ok(vec![res, res, res]);
        };
        let mut squares = Vec::with_capacity(n);
        for j in 0..n {
            let mut parts = Vec::new();
            for m in monomials {
                for k in 0..m.factors.len() {
                    let f: Vec<NodeId> = m
                        .factors
                        .iter()
                        .enumerate()
                        .map(|(l, f)| {
                            if l == k {
                                value_of[&shift(f, j).expect("checked")]
                            } else {
                                node(f)
                            }
                        })
                        .collect();
                    parts.push(product(b, &f, m.coefficient));
                }
            }
            let g = scaled_sum(b, &parts, 1.0);
            squares.push(b.hadamard(g, g));
        }
        let gp = scaled_sum(b, &squares, 1.0);
        let weighted = b.scale(gp, weight);
        let total = b.add(res, weighted);
        Ok(vec![total, res, gp])
    })?;
    Ok((graph, directions))
}

/// `(u - g)^2` at points `(x, 0)`.
fn initial_graph(model: &Graph) -> Result<Graph> {
    build_point_graph(model, &[], &[1], |b, outs, extra| {
        let e = b.sub(outs[0].primal, extra[0]);
        let sq = b.hadamard(e, e);
        Ok(vec![sq])
    })
}

/// How the differential part of the loss is estimated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossSpec {
    /// Sampled Laplacian dimensions `|J|` per step; `None` is exact.
    #[serde(default)]
    pub batch: Option<usize>,
    /// Two independent index sets and the product of the two residuals.
    #[serde(default)]
    pub unbiased: bool,
    /// Weight of the gradient-enhancement penalty; 0 disables it.
    #[serde(default)]
    pub gpinn_weight: f64,
    /// Sampled gradient dimensions for the penalty; `None` is all.
    #[serde(default)]
    pub gpinn_batch: Option<usize>,
}

impl Default for LossSpec {
    fn default() -> Self {
        Self {
            batch: None,
            unbiased: false,
            gpinn_weight: 0.0,
            gpinn_batch: None,
        }
    }
}

/// Index sets drawn for one step (0-based spatial dimensions).
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct IndexSample {
    /// Laplacian dimensions `J` (`I` in the gradient-enhanced form).
    pub laplacian: Vec<usize>,
    /// Independent second set `K` for the unbiased form.
    pub second: Vec<usize>,
    /// Outer gradient dimensions of the penalty.
    pub gradient: Vec<usize>,
}

/// Loss value with its components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossValue {
    pub total: f64,
    pub residual: f64,
    pub gpinn: f64,
    /// Initial-condition penalty (parabolic problems), already weighted in `total`.
    pub initial: f64,
}

/// A compiled training objective for one model shape and one problem.
#[derive(Debug, Clone)]
pub struct Objective {
    problem: PdeProblem,
    spec: LossSpec,
    main: PointLoss,
    initial: Option<PointLoss>,
    uses_gpinn: bool,
}

impl Objective {
    pub fn new(model: &PinnModel, problem: &PdeProblem, spec: LossSpec) -> Result<Self> {
        let graph = model.graph();
        if graph.input_len(0) != problem.input_len() {
            return Err(Error::Shape(format!(
                "model takes {} inputs, problem {} has {}",
                graph.input_len(0),
                problem.name,
                problem.input_len()
            )));
        }
        let d = problem.dim;
        let uses_gpinn = spec.gpinn_weight != 0.0;
        for (what, size) in [("batch", spec.batch), ("gpinn_batch", spec.gpinn_batch)] {
            if let Some(s) = size {
                if s == 0 || s > d {
                    return Err(Error::InvalidArgument(format!(
                        "{what} {s} must lie in 1..={d}"
                    )));
                }
            }
        }
        if spec.unbiased && uses_gpinn {
            return Err(Error::Unsupported(
                "the two-sample residual is not combined with gradient enhancement".into(),
            ));
        }
        let nj = spec.batch.unwrap_or(d);
        let main = match &problem.kind {
            PdeKind::Polynomial { monomials } => {
                if spec.batch.is_some() || spec.unbiased || spec.gpinn_batch.is_some() {
                    return Err(Error::Unsupported(
                        "polynomial residuals are evaluated exactly; index sampling does not apply"
                            .into(),
                    ));
                }
                let (graph, directions) =
                    polynomial_graph(graph, monomials, uses_gpinn.then_some(spec.gpinn_weight))?;
                PointLoss { graph, directions }
            }
            _ if uses_gpinn => PointLoss {
                graph: gpinn_graph(
                    graph,
                    problem,
                    nj,
                    spec.gpinn_batch.unwrap_or(d),
                    spec.gpinn_weight,
                )?,
                directions: Vec::new(),
            },
            _ => PointLoss {
                graph: semilinear_graph(graph, problem, nj, if spec.unbiased { nj } else { 0 })?,
                directions: Vec::new(),
            },
        };
        let initial = match problem.kind {
            PdeKind::Parabolic { .. } => Some(PointLoss {
                graph: initial_graph(graph)?,
                directions: Vec::new(),
            }),
            _ => None,
        };
        Ok(Self {
            problem: problem.clone(),
            spec,
            main,
            initial,
            uses_gpinn,
        })
    }

    pub fn spec(&self) -> &LossSpec {
        &self.spec
    }

    pub fn problem(&self) -> &PdeProblem {
        &self.problem
    }

    /// Draws the index sets of one step; exhaustive sets where no batch is set.
    pub fn sample(&self, rng: &mut impl Rng) -> Result<IndexSample> {
        let d = self.problem.dim;
        if !self.problem.is_semilinear() {
            return Ok(IndexSample::default());
        }
        fn draw(d: usize, size: Option<usize>, rng: &mut impl Rng) -> Result<Vec<usize>> {
            match size {
                Some(k) => sample_indices(d, k, rng),
                None => Ok((0..d).collect()),
            }
        }
        let laplacian = draw(d, self.spec.batch, rng)?;
        let second = if self.spec.unbiased {
            draw(d, self.spec.batch, rng)?
        } else {
            Vec::new()
        };
        let gradient = if self.uses_gpinn {
            draw(d, self.spec.gpinn_batch, rng)?
        } else {
            Vec::new()
        };
        Ok(IndexSample {
            laplacian,
            second,
            gradient,
        })
    }

    fn directions(&self, idx: &IndexSample) -> Result<Vec<Vec<f64>>> {
        let n = self.problem.input_len();
        let d = self.problem.dim;
        if !self.problem.is_semilinear() {
            return Ok(self.main.directions.clone());
        }
        let nj = self.spec.batch.unwrap_or(d);
        let want = |set: &[usize], len: usize, what: &str| -> Result<()> {
            check_indices(set, d, what)?;
            if set.len() != len {
                return Err(Error::Shape(format!(
                    "index set {what} has {} entries, objective was built for {len}",
                    set.len()
                )));
            }
            Ok(())
        };
        want(&idx.laplacian, nj, "J")?;
        if self.uses_gpinn {
            want(
                &idx.gradient,
                self.spec.gpinn_batch.unwrap_or(d),
                "gradient J",
            )?;
            let mut dirs = Vec::with_capacity(2 * nj * idx.gradient.len());
            for &i in &idx.laplacian {
                for &j in &idx.gradient {
                    dirs.push(basis(n, i));
                    dirs.push(basis(n, j));
                }
            }
            return Ok(dirs);
        }
        let mut dirs: Vec<Vec<f64>> = idx.laplacian.iter().map(|&i| basis(n, i)).collect();
        if self.spec.unbiased {
            want(&idx.second, nj, "K")?;
            dirs.extend(idx.second.iter().map(|&i| basis(n, i)));
        }
        if matches!(self.problem.kind, PdeKind::Parabolic { .. }) {
            dirs.push(basis(n, d));
        }
        Ok(dirs)
    }

    /// Loss at `points` for the given index sets, with the parameter
    /// gradient of `total` if `want_grad`.
    pub fn evaluate(
        &self,
        model: &PinnModel,
        points: &[Vec<f64>],
        idx: &IndexSample,
        want_grad: bool,
    ) -> Result<(LossValue, Option<Vec<f64>>)> {
        let directions = self.directions(idx)?;
        let problem = &self.problem;
        let gradient = idx.gradient.clone();
        let extras = move |x: &[f64]| -> Vec<Vec<f64>> {
            if !problem.is_semilinear() {
                return Vec::new();
            }
            let mut ex = vec![vec![problem.source(x)]];
            if !gradient.is_empty() {
                ex.push(
                    gradient
                        .iter()
                        .map(|&j| problem.source_partial(x, j))
                        .collect(),
                );
            }
            ex
        };
        let (means, mut grad) = run_points(
            &self.main.graph,
            &directions,
            model.params(),
            points,
            &extras,
            want_grad,
        )?;
        let mut value = LossValue {
            total: means[0],
            residual: means[1],
            gpinn: if self.uses_gpinn { means[2] } else { 0.0 },
            initial: 0.0,
        };
        if let (Some(init), PdeKind::Parabolic { initial, .. }) = (&self.initial, &problem.kind) {
            let d = problem.dim;
            let at_zero: Vec<Vec<f64>> = points
                .iter()
                .map(|x| {
                    let mut y = x[..d].to_vec();
                    y.push(0.0);
                    y
                })
                .collect();
            let g = |x: &[f64]| vec![vec![initial.value(&x[..d])]];
            let (m, ig) = run_points(&init.graph, &[], model.params(), &at_zero, &g, want_grad)?;
            value.initial = m[0];
            value.total += INITIAL_WEIGHT * m[0];
            if let (Some(acc), Some(ig)) = (grad.as_mut(), ig) {
                acc.iter_mut()
                    .zip(&ig)
                    .for_each(|(a, b)| *a += INITIAL_WEIGHT * b);
            }
        }
        Ok((value, grad))
    }
}

/// Mean squared residual with every derivative evaluated exactly.
pub fn residual_loss(model: &PinnModel, problem: &PdeProblem, points: &[Vec<f64>]) -> Result<f64> {
    let obj = Objective::new(model, problem, LossSpec::default())?;
    let idx = obj.sample(&mut crate::estimators::sample_rng(0, 0))?;
    Ok(obj.evaluate(model, points, &idx, false)?.0.residual)
}

/// Residual loss with the Laplacian replaced by its subset estimate over
/// `j`; with `k`, the product of the two independent estimates.
pub fn amortized_residual_loss(
    model: &PinnModel,
    problem: &PdeProblem,
    points: &[Vec<f64>],
    j: &[usize],
    k: Option<&[usize]>,
) -> Result<(f64, Vec<f64>)> {
    if !problem.is_semilinear() {
        return Err(Error::Unsupported(format!(
            "{} has no Laplacian to subsample",
            problem.name
        )));
    }
    check_indices(j, problem.dim, "J")?;
    if let Some(k) = k {
        check_indices(k, problem.dim, "K")?;
        if k.len() != j.len() {
            return Err(Error::InvalidArgument(
                "J and K must have equal sizes".into(),
            ));
        }
    }
    let spec = LossSpec {
        batch: Some(j.len()),
        unbiased: k.is_some(),
        ..LossSpec::default()
    };
    let obj = Objective::new(model, problem, spec)?;
    let idx = IndexSample {
        laplacian: j.to_vec(),
        second: k.map(<[usize]>::to_vec).unwrap_or_default(),
        gradient: Vec::new(),
    };
    let (v, g) = obj.evaluate(model, points, &idx, true)?;
    Ok((v.total, g.expect("gradient requested")))
}

/// The subsampled gradient-enhancement penalty
/// `(1/N) sum_x (d/|J|) sum_(j in J) |(d/|I|) sum_(i in I) d_j d_i^2 u + N'(u) d_j u - d_j f|^2`.
pub fn gpinn_loss(
    model: &PinnModel,
    problem: &PdeProblem,
    points: &[Vec<f64>],
    i: &[usize],
    j: &[usize],
) -> Result<f64> {
    check_indices(i, problem.dim, "I")?;
    check_indices(j, problem.dim, "J")?;
    let spec = LossSpec {
        batch: Some(i.len()),
        gpinn_weight: 1.0,
        gpinn_batch: Some(j.len()),
        ..LossSpec::default()
    };
    let obj = Objective::new(model, problem, spec)?;
    let idx = IndexSample {
        laplacian: i.to_vec(),
        second: Vec::new(),
        gradient: j.to_vec(),
    };
    Ok(obj.evaluate(model, points, &idx, false)?.0.gpinn)
}
