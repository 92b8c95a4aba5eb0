//! Graph-to-graph Taylor expansion.
//!
//! Every node of the source graph is rewritten into its primal plus `k`
//! tangent nodes built from ordinary first-order-differentiable ops, so the
//! expanded graph can be evaluated and reverse-differentiated like any other.
//!
//! Tangents follow the raw-derivative convention: an input curve
//! `g(t) = a + sum_j v_j t^j / j!` enters with `v_j = g^(j)(0)`, and output
//! tangent `j` is `d^j/dt^j F(g(t))` at `t = 0`.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::graph::{Graph, GraphBuilder, NodeId, Op};

use super::partition::enumerate_partitions;

/// A primal node plus several jets sharing it. `tangents[s][j - 1]` is the
/// order-`j` tangent of jet `s`; `None` marks a structurally zero tangent.
#[derive(Debug, Clone, PartialEq)]
pub struct JetNodes {
    pub primal: NodeId,
    pub tangents: Vec<Vec<Option<NodeId>>>,
}

impl JetNodes {
    /// A node with no jets attached.
    pub fn primal_only(primal: NodeId) -> Self {
        Self {
            primal,
            tangents: Vec::new(),
        }
    }

    /// Tangent `j` (1-based) of jet `s`.
    pub fn tangent(&self, s: usize, j: usize) -> Option<NodeId> {
        self.tangents[s][j - 1]
    }

    /// Tangent `j` of jet `s`, creating an explicit zero if it is structural.
    pub fn tangent_or_zero(&self, b: &mut GraphBuilder, s: usize, j: usize) -> NodeId {
        match self.tangent(s, j) {
            Some(id) => id,
            None => {
                let len = b.len(self.primal);
                b.constant(vec![0.0; len])
            }
        }
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k)
        .fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
        .round()
}

fn add_opt(b: &mut GraphBuilder, acc: Option<NodeId>, term: NodeId) -> NodeId {
    match acc {
        Some(a) => b.add(a, term),
        None => term,
    }
}

fn scaled(b: &mut GraphBuilder, x: NodeId, c: f64) -> NodeId {
    if c == 1.0 {
        x
    } else {
        b.scale(x, c)
    }
}

/// Which bilinear op a Leibniz expansion applies to.
#[derive(Clone, Copy)]
enum Bilinear {
    Hadamard,
    Dot,
    MatVec { rows: usize, cols: usize },
}

impl Bilinear {
    fn apply(self, b: &mut GraphBuilder, x: NodeId, y: NodeId) -> NodeId {
        match self {
            Bilinear::Hadamard => b.hadamard(x, y),
            Bilinear::Dot => b.dot(x, y),
            Bilinear::MatVec { rows, cols } => b.matvec(x, y, rows, cols),
        }
    }
}

/// Series of one operand for one jet: index 0 is the primal.
fn series(jn: &JetNodes, s: usize, order: usize) -> Vec<Option<NodeId>> {
    let mut out = Vec::with_capacity(order + 1);
    out.push(Some(jn.primal));
    out.extend((1..=order).map(|j| jn.tangent(s, j)));
    out
}

/// Pushes jets through `graph`, appending the expansion to `b`.
///
/// `params[i]` is the builder node standing in for the graph's `i`-th
/// parameter; `inputs[i]` carries the jets for its `i`-th input. All input
/// bundles must hold the same number of jets, each of length `order`.
/// Returns one bundle per graph output.
pub fn embed_jets(
    b: &mut GraphBuilder,
    graph: &Graph,
    params: &[NodeId],
    inputs: &[JetNodes],
    order: usize,
) -> Result<Vec<JetNodes>> {
    if inputs.len() != graph.inputs().len() {
        return Err(Error::Shape(format!(
            "graph has {} inputs, {} jet bundles supplied",
            graph.inputs().len(),
            inputs.len()
        )));
    }
    if params.len() != graph.params().len() {
        return Err(Error::Shape(format!(
            "graph has {} parameters, {} supplied",
            graph.params().len(),
            params.len()
        )));
    }
    if order > graph.max_order() {
        return Err(Error::OrderTooHigh {
            order,
            max: graph.max_order(),
        });
    }
    let n_jets = inputs.first().map_or(0, |j| j.tangents.len());
    for (i, jn) in inputs.iter().enumerate() {
        if jn.tangents.len() != n_jets || jn.tangents.iter().any(|t| t.len() != order) {
            return Err(Error::Shape(format!(
                "input {i}: expected {n_jets} jets of order {order}"
            )));
        }
        if b.len(jn.primal) != graph.input_len(i) {
            return Err(Error::Shape(format!(
                "input {i}: jet dimension {} but graph input has length {}",
                b.len(jn.primal),
                graph.input_len(i)
            )));
        }
    }

    let mut leaf_map: HashMap<NodeId, JetNodes> = HashMap::new();
    for (i, &id) in graph.inputs().iter().enumerate() {
        leaf_map.insert(id, inputs[i].clone());
    }
    for (i, &id) in graph.params().iter().enumerate() {
        if b.len(params[i]) != graph.node(id).len {
            return Err(Error::Shape(format!("parameter {i} length mismatch")));
        }
        leaf_map.insert(
            id,
            JetNodes {
                primal: params[i],
                tangents: vec![vec![None; order]; n_jets],
            },
        );
    }

    let mut map: Vec<Option<JetNodes>> = vec![None; graph.len()];
    for (idx, node) in graph.nodes().iter().enumerate() {
        let id = NodeId(idx);
        if let Some(jn) = leaf_map.remove(&id) {
            map[idx] = Some(jn);
            continue;
        }
        let operand = |k: usize| map[node.operands[k].0].as_ref().expect("operand expanded");
        let zero_tangents = || vec![vec![None; order]; n_jets];

        let mapped = match &node.op {
            Op::Input | Op::Param => unreachable!("leaves are mapped up front"),
            Op::Constant(v) => JetNodes {
                primal: b.constant(v.clone()),
                tangents: zero_tangents(),
            },
            Op::Add | Op::Sub => {
                let (x, y) = (operand(0).clone(), operand(1).clone());
                let sub = matches!(node.op, Op::Sub);
                let primal = if sub {
                    b.sub(x.primal, y.primal)
                } else {
                    b.add(x.primal, y.primal)
                };
                let tangents = (0..n_jets)
                    .map(|s| {
                        (1..=order)
                            .map(|j| match (x.tangent(s, j), y.tangent(s, j)) {
                                (Some(p), Some(q)) => {
                                    Some(if sub { b.sub(p, q) } else { b.add(p, q) })
                                }
                                (Some(p), None) => Some(p),
                                (None, Some(q)) => Some(if sub { b.neg(q) } else { q }),
                                (None, None) => None,
                            })
                            .collect()
                    })
                    .collect();
                JetNodes { primal, tangents }
            }
            Op::Scale(c) => {
                let x = operand(0).clone();
                let c = *c;
                unary_linear(b, &x, |b, n| b.scale(n, c))
            }
            Op::Sum => {
                let x = operand(0).clone();
                unary_linear(b, &x, |b, n| b.sum(n))
            }
            Op::Slice { offset } => {
                let x = operand(0).clone();
                let (offset, len) = (*offset, node.len);
                unary_linear(b, &x, |b, n| b.slice(n, offset, len))
            }
            Op::Hadamard => leibniz(b, operand(0), operand(1), Bilinear::Hadamard, order, n_jets),
            Op::Dot => leibniz(b, operand(0), operand(1), Bilinear::Dot, order, n_jets),
            Op::MatVec { rows, cols } => leibniz(
                b,
                operand(0),
                operand(1),
                Bilinear::MatVec {
                    rows: *rows,
                    cols: *cols,
                },
                order,
                n_jets,
            ),
            Op::Elementwise { prim, order: m } => {
                let x = operand(0).clone();
                faa_di_bruno(b, &x, *prim, *m, order, n_jets)?
            }
        };
        map[idx] = Some(mapped);
    }

    Ok(graph
        .outputs()
        .iter()
        .map(|o| map[o.0].clone().expect("output expanded"))
        .collect())
}

fn unary_linear(
    b: &mut GraphBuilder,
    x: &JetNodes,
    mut f: impl FnMut(&mut GraphBuilder, NodeId) -> NodeId,
) -> JetNodes {
    let primal = f(b, x.primal);
    let tangents = x
        .tangents
        .iter()
        .map(|jet| jet.iter().map(|t| t.map(|n| f(b, n))).collect())
        .collect();
    JetNodes { primal, tangents }
}

/// General Leibniz rule: `(xy)_j = sum_i C(j, i) x_i y_{j-i}`.
fn leibniz(
    b: &mut GraphBuilder,
    x: &JetNodes,
    y: &JetNodes,
    op: Bilinear,
    order: usize,
    n_jets: usize,
) -> JetNodes {
    let primal = op.apply(b, x.primal, y.primal);
    let tangents = (0..n_jets)
        .map(|s| {
            let (xs, ys) = (series(x, s, order), series(y, s, order));
            (1..=order)
                .map(|j| {
                    let mut acc = None;
                    for i in 0..=j {
                        if let (Some(p), Some(q)) = (xs[i], ys[j - i]) {
                            let term = op.apply(b, p, q);
                            let term = scaled(b, term, binomial(j, i));
                            acc = Some(add_opt(b, acc, term));
                        }
                    }
                    acc
                })
                .collect()
        })
        .collect();
    JetNodes { primal, tangents }
}

/// Faa di Bruno: `(f o g)_j = sum_p c_p f^(|p|)(g_0) prod_i g_i^p_i` over
/// partitions `p` of `j`, with `c_p` the set-partition count.
fn faa_di_bruno(
    b: &mut GraphBuilder,
    x: &JetNodes,
    prim: crate::graph::Primitive,
    base_order: usize,
    order: usize,
    n_jets: usize,
) -> Result<JetNodes> {
    let primal = b.derivative(prim, base_order, x.primal);
    let mut derivs: Vec<Option<NodeId>> = vec![None; order + 1];
    let mut tangents = Vec::with_capacity(n_jets);
    for s in 0..n_jets {
        let xs = series(x, s, order);
        let mut monomials: HashMap<Vec<u32>, NodeId> = HashMap::new();
        let mut jet = Vec::with_capacity(order);
        for j in 1..=order {
            // group terms by block count so each f^(m) multiplies once
            let mut by_blocks: Vec<Option<NodeId>> = vec![None; j + 1];
            for p in enumerate_partitions(j)? {
                if p.support().any(|i| xs[i].is_none()) {
                    continue;
                }
                let mono = monomial(b, &xs, p.multiplicities(), &mut monomials);
                let term = scaled(b, mono, p.coefficient() as f64);
                let m = p.blocks();
                by_blocks[m] = Some(add_opt(b, by_blocks[m], term));
            }
            let mut acc = None;
            for (m, inner) in by_blocks.into_iter().enumerate() {
                if let Some(inner) = inner {
                    let d = *derivs[m]
                        .get_or_insert_with(|| b.derivative(prim, base_order + m, x.primal));
                    let term = b.hadamard(d, inner);
                    acc = Some(add_opt(b, acc, term));
                }
            }
            jet.push(acc);
        }
        tangents.push(jet);
    }
    Ok(JetNodes { primal, tangents })
}

/// `prod_i x_i^{p_i}`, memoized on the multiplicity vector.
fn monomial(
    b: &mut GraphBuilder,
    xs: &[Option<NodeId>],
    mult: &[u32],
    memo: &mut HashMap<Vec<u32>, NodeId>,
) -> NodeId {
    let mut key: Vec<u32> = mult.to_vec();
    while key.last() == Some(&0) {
        key.pop();
    }
    if let Some(&id) = memo.get(&key) {
        return id;
    }
    let top = key.len();
    let factor = xs[top].expect("support checked");
    let mut rest = key.clone();
    rest[top - 1] -= 1;
    let id = if rest.iter().all(|&p| p == 0) {
        factor
    } else {
        let r = monomial(b, xs, &rest, memo);
        b.hadamard(r, factor)
    };
    memo.insert(key, id);
    id
}
