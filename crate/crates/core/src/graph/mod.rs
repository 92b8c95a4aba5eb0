//! Vector-valued expression graphs with forward evaluation and reverse-mode
//! parameter gradients.
//!
//! Nodes are stored in topological order. Every node holds a flat `f64`
//! vector; matrices are flat row-major vectors consumed by [`Op::MatVec`].
//! A finished [`Graph`] is immutable and can be shared across threads;
//! evaluation state lives in an [`Evaluator`].

mod eval;
mod kernels;
pub mod nets;
pub mod primitive;

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use eval::{forward_eval, reverse_grad, reverse_grad_wrt, Evaluator};
pub use kernels::pairwise_sum;
pub use primitive::{scalar_derivative, scalar_derivative_capped, Primitive, DEFAULT_MAX_ORDER};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "%{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Op {
    /// Data input.
    Input,
    /// Trainable parameter, stored in the flat parameter vector.
    Param,
    Constant(Vec<f64>),
    /// `y = M v` with `M` a row-major `rows x cols` operand. Operands `[M, v]`.
    MatVec {
        rows: usize,
        cols: usize,
    },
    /// Contiguous sub-vector starting at `offset`; the length is the node's.
    Slice {
        offset: usize,
    },
    Add,
    Sub,
    Hadamard,
    Dot,
    Sum,
    Scale(f64),
    /// Element-wise `f^(order)`.
    Elementwise {
        prim: Primitive,
        order: usize,
    },
}

impl Op {
    fn arity(&self) -> usize {
        match self {
            Op::Input | Op::Param | Op::Constant(_) => 0,
            Op::Slice { .. } | Op::Sum | Op::Scale(_) | Op::Elementwise { .. } => 1,
            Op::MatVec { .. } | Op::Add | Op::Sub | Op::Hadamard | Op::Dot => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub op: Op,
    pub operands: Vec<NodeId>,
    pub len: usize,
}

/// Where a node's value lives during evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Slot {
    Arena(usize),
    Param(usize),
}

#[derive(Debug, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
    inputs: Vec<NodeId>,
    params: Vec<NodeId>,
    outputs: Vec<NodeId>,
    max_order: usize,
    slots: Vec<Slot>,
    arena_len: usize,
    param_len: usize,
    /// Node depends (transitively) on at least one parameter.
    needs_grad: Vec<bool>,
    /// For each node, the index into `batches` of the matrix-vector batch
    /// it leads, if any.
    batch_of: Vec<Option<usize>>,
    /// Products sharing one matrix operand whose vector operands all precede
    /// the first member; evaluated together when the first member is reached.
    batches: Vec<Vec<NodeId>>,
    /// Non-leading batch members, skipped in the node loop.
    batched: Vec<bool>,
}

impl Graph {
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    pub fn inputs(&self) -> &[NodeId] {
        &self.inputs
    }

    pub fn params(&self) -> &[NodeId] {
        &self.params
    }

    pub fn outputs(&self) -> &[NodeId] {
        &self.outputs
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Highest jet order this graph may be expanded to.
    pub fn max_order(&self) -> usize {
        self.max_order
    }

    pub fn input_len(&self, i: usize) -> usize {
        self.nodes[self.inputs[i].0].len
    }

    pub fn output_len(&self, i: usize) -> usize {
        self.nodes[self.outputs[i].0].len
    }

    /// Total length of the flat parameter vector.
    pub fn param_len(&self) -> usize {
        self.param_len
    }

    /// Offset of the `i`-th parameter block inside the flat parameter vector.
    pub fn param_offset(&self, i: usize) -> usize {
        match self.slots[self.params[i].0] {
            Slot::Param(off) => off,
            Slot::Arena(_) => unreachable!("parameter without parameter slot"),
        }
    }

    /// Position of `id` in the parameter list, if it is a parameter.
    pub fn param_index(&self, id: NodeId) -> Option<usize> {
        self.params.iter().position(|&p| p == id)
    }

    pub(crate) fn slot(&self, id: NodeId) -> Slot {
        self.slots[id.0]
    }

    pub(crate) fn arena_len(&self) -> usize {
        self.arena_len
    }

    pub(crate) fn needs_grad(&self, id: NodeId) -> bool {
        self.needs_grad[id.0]
    }

    /// Members of the batch led by `id`, lead first.
    pub(crate) fn batch_led_by(&self, id: NodeId) -> Option<&[NodeId]> {
        self.batch_of[id.0].map(|b| self.batches[b].as_slice())
    }

    /// Whether `id` is evaluated as part of an earlier node's batch.
    pub(crate) fn is_batched(&self, id: NodeId) -> bool {
        self.batched[id.0]
    }

    /// Largest single node length; used by allocation audits.
    pub fn widest_node(&self) -> usize {
        self.nodes.iter().map(|n| n.len).max().unwrap_or(0)
    }
}

/// Incremental graph construction.
///
/// Shape errors are recorded on the first occurrence and reported by
/// [`GraphBuilder::finish`], so construction code can chain calls freely.
#[derive(Debug, Clone)]
pub struct GraphBuilder {
    nodes: Vec<Node>,
    inputs: Vec<NodeId>,
    params: Vec<NodeId>,
    max_order: usize,
    error: Option<Error>,
}

impl Default for GraphBuilder {
    fn default() -> Self {
        Self::new()
    }
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            inputs: Vec::new(),
            params: Vec::new(),
            max_order: DEFAULT_MAX_ORDER,
            error: None,
        }
    }

    /// Sets the highest jet order the finished graph accepts.
    pub fn with_max_order(mut self, k: usize) -> Self {
        if k == 0 || k > primitive::MAX_CONFIGURABLE_ORDER {
            self.fail(Error::OrderTooHigh {
                order: k,
                max: primitive::MAX_CONFIGURABLE_ORDER,
            });
        }
        self.max_order = k;
        self
    }

    pub fn max_order(&self) -> usize {
        self.max_order
    }

    pub fn len(&self, id: NodeId) -> usize {
        self.nodes[id.0].len
    }

    /// Parameters created so far; the next parameter gets this ordinal.
    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    fn fail(&mut self, e: Error) {
        if self.error.is_none() {
            self.error = Some(e);
        }
    }

    fn push(&mut self, op: Op, operands: Vec<NodeId>, len: usize) -> NodeId {
        debug_assert_eq!(op.arity(), operands.len());
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { op, operands, len });
        id
    }

    fn same_len(&mut self, what: &str, a: NodeId, b: NodeId) -> usize {
        let (la, lb) = (self.len(a), self.len(b));
        if la != lb {
            self.fail(Error::Shape(format!(
                "{what}: operand lengths {la} and {lb}"
            )));
        }
        la
    }

    pub fn input(&mut self, len: usize) -> NodeId {
        let id = self.push(Op::Input, vec![], len);
        self.inputs.push(id);
        id
    }

    pub fn param(&mut self, len: usize) -> NodeId {
        let id = self.push(Op::Param, vec![], len);
        self.params.push(id);
        id
    }

    pub fn constant(&mut self, values: Vec<f64>) -> NodeId {
        let len = values.len();
        self.push(Op::Constant(values), vec![], len)
    }

    pub fn scalar(&mut self, value: f64) -> NodeId {
        self.constant(vec![value])
    }

    /// `M v` where `m` holds a row-major `rows x cols` matrix.
    pub fn matvec(&mut self, m: NodeId, v: NodeId, rows: usize, cols: usize) -> NodeId {
        if self.len(m) != rows * cols || self.len(v) != cols {
            let (lm, lv) = (self.len(m), self.len(v));
            self.fail(Error::Shape(format!(
                "matvec {rows}x{cols}: matrix length {lm}, vector length {lv}"
            )));
        }
        self.push(Op::MatVec { rows, cols }, vec![m, v], rows)
    }

    pub fn slice(&mut self, x: NodeId, offset: usize, len: usize) -> NodeId {
        if offset + len > self.len(x) {
            let lx = self.len(x);
            self.fail(Error::Shape(format!(
                "slice [{offset}, {}) of length {lx}",
                offset + len
            )));
        }
        self.push(Op::Slice { offset }, vec![x], len)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let len = self.same_len("add", a, b);
        self.push(Op::Add, vec![a, b], len)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let len = self.same_len("sub", a, b);
        self.push(Op::Sub, vec![a, b], len)
    }

    pub fn hadamard(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let len = self.same_len("hadamard", a, b);
        self.push(Op::Hadamard, vec![a, b], len)
    }

    pub fn dot(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.same_len("dot", a, b);
        self.push(Op::Dot, vec![a, b], 1)
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Sum, vec![x], 1)
    }

    pub fn mean(&mut self, x: NodeId) -> NodeId {
        let n = self.len(x).max(1) as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let len = self.len(x);
        self.push(Op::Scale(c), vec![x], len)
    }

    pub fn neg(&mut self, x: NodeId) -> NodeId {
        self.scale(x, -1.0)
    }

    /// `x + c` element-wise.
    pub fn add_scalar(&mut self, x: NodeId, c: f64) -> NodeId {
        let k = self.constant(vec![c; self.len(x)]);
        self.add(x, k)
    }

    pub fn apply(&mut self, prim: Primitive, x: NodeId) -> NodeId {
        self.derivative(prim, 0, x)
    }

    /// Element-wise `f^(order)(x)`.
    pub fn derivative(&mut self, prim: Primitive, order: usize, x: NodeId) -> NodeId {
        if order > primitive::HARD_MAX_ORDER {
            self.fail(Error::OrderTooHigh {
                order,
                max: primitive::HARD_MAX_ORDER,
            });
        }
        let len = self.len(x);
        self.push(Op::Elementwise { prim, order }, vec![x], len)
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        self.apply(Primitive::Tanh, x)
    }

    pub fn sin(&mut self, x: NodeId) -> NodeId {
        self.apply(Primitive::Sin, x)
    }

    pub fn cos(&mut self, x: NodeId) -> NodeId {
        self.apply(Primitive::Cos, x)
    }

    pub fn exp(&mut self, x: NodeId) -> NodeId {
        self.apply(Primitive::Exp, x)
    }

    pub fn powi(&mut self, x: NodeId, n: i32) -> NodeId {
        self.apply(Primitive::Powi(n), x)
    }

    /// Dense affine layer `W x + b` with fresh parameters; `W` is `out x in`.
    pub fn affine(&mut self, x: NodeId, out: usize) -> (NodeId, NodeId, NodeId) {
        let inp = self.len(x);
        let w = self.param(out * inp);
        let b = self.param(out);
        let wx = self.matvec(w, x, out, inp);
        (self.add(wx, b), w, b)
    }

    /// Prunes nodes unreachable from `outputs` (inputs and parameters are
    /// always kept), renumbers, and lays out evaluation storage.
    pub fn finish(self, outputs: &[NodeId]) -> Result<Graph> {
        if let Some(e) = self.error {
            return Err(e);
        }
        if outputs.is_empty() {
            return Err(Error::Graph("graph has no outputs".into()));
        }
        let n = self.nodes.len();
        let mut live = vec![false; n];
        for &o in outputs {
            if o.0 >= n {
                return Err(Error::Graph(format!("output {o} does not exist")));
            }
            live[o.0] = true;
        }
        for i in (0..n).rev() {
            if live[i] {
                for op in &self.nodes[i].operands {
                    if op.0 >= i {
                        return Err(Error::Graph(format!(
                            "node %{i} uses {op}, which does not precede it"
                        )));
                    }
                    live[op.0] = true;
                }
            }
        }
        for id in self.inputs.iter().chain(&self.params) {
            live[id.0] = true;
        }

        let mut remap = vec![usize::MAX; n];
        let mut nodes = Vec::with_capacity(n);
        for (i, node) in self.nodes.into_iter().enumerate() {
            if live[i] {
                remap[i] = nodes.len();
                let operands = node.operands.iter().map(|o| NodeId(remap[o.0])).collect();
                nodes.push(Node {
                    op: node.op,
                    operands,
                    len: node.len,
                });
            }
        }
        let map = |ids: &[NodeId]| ids.iter().map(|id| NodeId(remap[id.0])).collect::<Vec<_>>();
        let inputs = map(&self.inputs);
        let params = map(&self.params);
        let outputs = map(outputs);

        let mut slots = Vec::with_capacity(nodes.len());
        let mut needs_grad = Vec::with_capacity(nodes.len());
        let (mut arena_len, mut param_len) = (0, 0);
        for node in &nodes {
            match node.op {
                Op::Param => {
                    slots.push(Slot::Param(param_len));
                    param_len += node.len;
                    needs_grad.push(true);
                }
                _ => {
                    slots.push(Slot::Arena(arena_len));
                    arena_len += node.len;
                    needs_grad.push(node.operands.iter().any(|o| needs_grad[o.0]));
                }
            }
        }
        let (batch_of, batches, batched) = matvec_batches(&nodes);
        Ok(Graph {
            nodes,
            inputs,
            params,
            outputs,
            max_order: self.max_order,
            slots,
            arena_len,
            param_len,
            needs_grad,
            batch_of,
            batches,
            batched,
        })
    }
}

type Batches = (Vec<Option<usize>>, Vec<Vec<NodeId>>, Vec<bool>);

/// Groups consecutive products with the same matrix operand, starting a new
/// group whenever a vector operand is not yet available at the group's lead.
fn matvec_batches(nodes: &[Node]) -> Batches {
    let mut open: HashMap<usize, usize> = HashMap::new();
    let mut groups: Vec<Vec<NodeId>> = Vec::new();
    for (i, node) in nodes.iter().enumerate() {
        if let Op::MatVec { .. } = node.op {
            let (m, v) = (node.operands[0].0, node.operands[1].0);
            match open.get(&m) {
                Some(&g) if v < groups[g][0].0 => groups[g].push(NodeId(i)),
                _ => {
                    open.insert(m, groups.len());
                    groups.push(vec![NodeId(i)]);
                }
            }
        }
    }
    let mut batch_of = vec![None; nodes.len()];
    let mut batched = vec![false; nodes.len()];
    let batches: Vec<Vec<NodeId>> = groups.into_iter().filter(|g| g.len() > 1).collect();
    for (b, g) in batches.iter().enumerate() {
        batch_of[g[0].0] = Some(b);
        for id in &g[1..] {
            batched[id.0] = true;
        }
    }
    (batch_of, batches, batched)
}
