use super::kernels::{
    axpy, dot, is_sparse, matmat, matmat_t, matvec, matvec_t_acc, outer_acc, outer_acc_multi,
};
use super::primitive::HARD_MAX_ORDER;
use super::{Graph, NodeId, Op, Slot};
use crate::error::{Error, Result};

/// Reusable evaluation buffers for one graph: per-node values (the tape)
/// and adjoint accumulators. Parameters are read in place and never copied.
#[derive(Debug, Clone)]
pub struct Evaluator {
    values: Vec<f64>,
    adjoints: Vec<f64>,
    scratch: Vec<f64>,
    packed: [Vec<f64>; 3],
    input_pos: Vec<usize>,
    evaluated: bool,
}

fn view<'a>(slot: Slot, len: usize, arena: &'a [f64], params: &'a [f64]) -> &'a [f64] {
    match slot {
        Slot::Arena(off) => &arena[off..off + len],
        Slot::Param(off) => &params[off..off + len],
    }
}

fn view_mut<'a>(
    slot: Slot,
    len: usize,
    arena: &'a mut [f64],
    grad: &'a mut [f64],
) -> &'a mut [f64] {
    match slot {
        Slot::Arena(off) => &mut arena[off..off + len],
        Slot::Param(off) => &mut grad[off..off + len],
    }
}

fn arena_offset(slot: Slot) -> usize {
    match slot {
        Slot::Arena(off) => off,
        Slot::Param(_) => unreachable!("parameters have no arena slot"),
    }
}

impl Evaluator {
    pub fn new(graph: &Graph) -> Self {
        let mut input_pos = vec![usize::MAX; graph.len()];
        for (i, id) in graph.inputs().iter().enumerate() {
            input_pos[id.0] = i;
        }
        Self {
            values: vec![0.0; graph.arena_len()],
            adjoints: Vec::new(),
            scratch: Vec::new(),
            packed: Default::default(),
            input_pos,
            evaluated: false,
        }
    }

    fn check_args(graph: &Graph, inputs: &[&[f64]], params: &[f64]) -> Result<()> {
        if inputs.len() != graph.inputs().len() {
            return Err(Error::Shape(format!(
                "expected {} inputs, got {}",
                graph.inputs().len(),
                inputs.len()
            )));
        }
        for (i, x) in inputs.iter().enumerate() {
            if x.len() != graph.input_len(i) {
                return Err(Error::Shape(format!(
                    "input {i}: expected length {}, got {}",
                    graph.input_len(i),
                    x.len()
                )));
            }
        }
        if params.len() != graph.param_len() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                graph.param_len(),
                params.len()
            )));
        }
        Ok(())
    }

    /// Evaluates every node in topological order and retains the values.
    pub fn forward(&mut self, graph: &Graph, inputs: &[&[f64]], params: &[f64]) -> Result<()> {
        Self::check_args(graph, inputs, params)?;
        self.evaluated = false;
        if self.values.len() != graph.arena_len() {
            self.values.resize(graph.arena_len(), 0.0);
        }
        for (i, node) in graph.nodes().iter().enumerate() {
            let slot = graph.slot(NodeId(i));
            if let Op::Param = node.op {
                if params[match slot {
                    Slot::Param(o) => o..o + node.len,
                    Slot::Arena(_) => unreachable!(),
                }]
                .iter()
                .any(|v| !v.is_finite())
                {
                    return Err(Error::NonFinite { node: i });
                }
                continue;
            }
            if graph.is_batched(NodeId(i)) {
                continue;
            }
            if let Some(batch) = graph.batch_led_by(NodeId(i)) {
                self.forward_batch(graph, batch, params)?;
                continue;
            }
            let off = arena_offset(slot);
            let (lo, hi) = self.values.split_at_mut(off);
            let out = &mut hi[..node.len];
            let operand = |k: usize| {
                let id = node.operands[k];
                view(graph.slot(id), graph.node(id).len, lo, params)
            };
            match &node.op {
                Op::Input => out.copy_from_slice(inputs[self.input_pos[i]]),
                Op::Param => unreachable!(),
                Op::Constant(v) => out.copy_from_slice(v),
                Op::MatVec { rows, cols } => matvec(operand(0), *rows, *cols, operand(1), out),
                Op::Slice { offset } => {
                    out.copy_from_slice(&operand(0)[*offset..*offset + node.len])
                }
                Op::Add => {
                    let (a, b) = (operand(0), operand(1));
                    for j in 0..out.len() {
                        out[j] = a[j] + b[j];
                    }
                }
                Op::Sub => {
                    let (a, b) = (operand(0), operand(1));
                    for j in 0..out.len() {
                        out[j] = a[j] - b[j];
                    }
                }
                Op::Hadamard => {
                    let (a, b) = (operand(0), operand(1));
                    for j in 0..out.len() {
                        out[j] = a[j] * b[j];
                    }
                }
                Op::Dot => out[0] = dot(operand(0), operand(1)),
                Op::Sum => out[0] = operand(0).iter().sum(),
                Op::Scale(c) => {
                    let a = operand(0);
                    for j in 0..out.len() {
                        out[j] = c * a[j];
                    }
                }
                Op::Elementwise { prim, order } => prim.eval_into(*order, operand(0), out),
            }
            if out.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { node: i });
            }
        }
        self.evaluated = true;
        Ok(())
    }

    /// Products sharing one matrix, computed together at the first member.
    /// Dense vectors go through one matrix-matrix product; sparse ones keep
    /// the column-gather path.
    fn forward_batch(&mut self, graph: &Graph, batch: &[NodeId], params: &[f64]) -> Result<()> {
        let lead = graph.node(batch[0]);
        let Op::MatVec { rows, cols } = lead.op else {
            unreachable!("batches hold matrix-vector products")
        };
        let off = arena_offset(graph.slot(batch[0]));
        let [vbuf, obuf, _] = &mut self.packed;
        vbuf.clear();
        let mut dense = Vec::with_capacity(batch.len());
        {
            let (lo, hi) = self.values.split_at_mut(off);
            let operand = |id: NodeId| view(graph.slot(id), graph.node(id).len, lo, params);
            let m = operand(lead.operands[0]);
            for &b in batch {
                let v = operand(graph.node(b).operands[1]);
                if is_sparse(v) {
                    let o = arena_offset(graph.slot(b)) - off;
                    matvec(m, rows, cols, v, &mut hi[o..o + rows]);
                } else {
                    vbuf.extend_from_slice(v);
                    dense.push(b);
                }
            }
            obuf.clear();
            obuf.resize(dense.len() * rows, 0.0);
            if !dense.is_empty() {
                matmat(m, rows, cols, vbuf, dense.len(), obuf);
            }
        }
        for (&b, src) in dense.iter().zip(obuf.chunks(rows)) {
            let o = arena_offset(graph.slot(b));
            self.values[o..o + rows].copy_from_slice(src);
        }
        for &b in batch {
            let o = arena_offset(graph.slot(b));
            if self.values[o..o + rows].iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { node: b.0 });
            }
        }
        Ok(())
    }

    /// Adjoints of a product batch, run once every member's adjoint is final.
    fn backward_batch(
        &mut self,
        graph: &Graph,
        batch: &[NodeId],
        params: &[f64],
        grad: &mut [f64],
    ) {
        let lead = graph.node(batch[0]);
        let Op::MatVec { rows, cols } = lead.op else {
            unreachable!("batches hold matrix-vector products")
        };
        let off = arena_offset(graph.slot(batch[0]));
        let (lo, hi) = self.adjoints.split_at_mut(off);
        let hi = &*hi;
        let adj_of = |id: NodeId| {
            let o = arena_offset(graph.slot(id)) - off;
            &hi[o..o + rows]
        };
        let active: Vec<NodeId> = batch
            .iter()
            .copied()
            .filter(|&b| graph.needs_grad(b) && adj_of(b).iter().any(|&a| a != 0.0))
            .collect();
        if active.is_empty() {
            return;
        }
        let values = &self.values;
        let val = |id: NodeId| view(graph.slot(id), graph.node(id).len, values, params);
        let wid = lead.operands[0];
        let m = val(wid);
        let [abuf, vbuf, obuf] = &mut self.packed;

        if graph.needs_grad(wid) {
            let gm = view_mut(graph.slot(wid), graph.node(wid).len, lo, grad);
            abuf.clear();
            vbuf.clear();
            let mut k = 0;
            for &b in &active {
                let v = val(graph.node(b).operands[1]);
                if is_sparse(v) {
                    outer_acc(adj_of(b), v, cols, gm);
                } else {
                    abuf.extend_from_slice(adj_of(b));
                    vbuf.extend_from_slice(v);
                    k += 1;
                }
            }
            if k > 0 {
                outer_acc_multi(abuf, vbuf, k, rows, cols, gm);
            }
        }

        abuf.clear();
        let mut targets = Vec::with_capacity(active.len());
        for &b in &active {
            let v = graph.node(b).operands[1];
            if graph.needs_grad(v) {
                abuf.extend_from_slice(adj_of(b));
                targets.push(v);
            }
        }
        if targets.is_empty() {
            return;
        }
        obuf.clear();
        obuf.resize(targets.len() * cols, 0.0);
        matmat_t(m, rows, cols, abuf, targets.len(), obuf);
        for (&v, src) in targets.iter().zip(obuf.chunks(cols)) {
            axpy(1.0, src, view_mut(graph.slot(v), cols, lo, grad));
        }
    }

    /// Value of a node after [`Evaluator::forward`].
    pub fn value<'a>(&'a self, graph: &Graph, params: &'a [f64], id: NodeId) -> &'a [f64] {
        debug_assert!(self.evaluated);
        view(graph.slot(id), graph.node(id).len, &self.values, params)
    }

    pub fn output<'a>(&'a self, graph: &Graph, params: &'a [f64], i: usize) -> &'a [f64] {
        self.value(graph, params, graph.outputs()[i])
    }

    /// Accumulates `sum_i seed_i^T d(output_i)/d(params)` into `grad`.
    ///
    /// `seeds` pairs output positions with cotangents. Adjoints are
    /// propagated in reverse topological order and only into nodes that
    /// depend on a parameter.
    pub fn backward(
        &mut self,
        graph: &Graph,
        params: &[f64],
        seeds: &[(usize, &[f64])],
        grad: &mut [f64],
    ) -> Result<()> {
        if !self.evaluated {
            return Err(Error::Graph("backward called before forward".into()));
        }
        if grad.len() != graph.param_len() {
            return Err(Error::Shape(format!(
                "gradient buffer has length {}, expected {}",
                grad.len(),
                graph.param_len()
            )));
        }
        self.adjoints.clear();
        self.adjoints.resize(graph.arena_len(), 0.0);
        for &(i, seed) in seeds {
            let id = graph.outputs()[i];
            let len = graph.node(id).len;
            if seed.len() != len {
                return Err(Error::Shape(format!(
                    "seed for output {i} has length {}, expected {len}",
                    seed.len()
                )));
            }
            if graph.needs_grad(id) {
                axpy(
                    1.0,
                    seed,
                    view_mut(graph.slot(id), len, &mut self.adjoints, grad),
                );
            }
        }

        for i in (0..graph.len()).rev() {
            let id = NodeId(i);
            let node = graph.node(id);
            if graph.is_batched(id) {
                continue;
            }
            if let Some(batch) = graph.batch_led_by(id) {
                self.backward_batch(graph, batch, params, grad);
                continue;
            }
            if !graph.needs_grad(id) || node.operands.is_empty() {
                continue;
            }
            let off = arena_offset(graph.slot(id));
            let (lo, hi) = self.adjoints.split_at_mut(off);
            let adj = &hi[..node.len];
            if adj.iter().all(|&a| a == 0.0) {
                continue;
            }
            let values = &self.values;
            let val = |k: usize| {
                let o = node.operands[k];
                view(graph.slot(o), graph.node(o).len, values, params)
            };
            let wants = |k: usize| graph.needs_grad(node.operands[k]);
            let slot_of = |k: usize| {
                let o = node.operands[k];
                (graph.slot(o), graph.node(o).len)
            };

            match &node.op {
                Op::Input | Op::Param | Op::Constant(_) => {}
                Op::MatVec { cols, .. } => {
                    if wants(0) {
                        let (s, l) = slot_of(0);
                        outer_acc(adj, val(1), *cols, view_mut(s, l, lo, grad));
                    }
                    if wants(1) {
                        let (s, l) = slot_of(1);
                        matvec_t_acc(val(0), *cols, adj, view_mut(s, l, lo, grad));
                    }
                }
                Op::Slice { offset } => {
                    let (s, l) = slot_of(0);
                    let t = view_mut(s, l, lo, grad);
                    axpy(1.0, adj, &mut t[*offset..*offset + node.len]);
                }
                Op::Add | Op::Sub => {
                    let sign = if matches!(node.op, Op::Sub) {
                        -1.0
                    } else {
                        1.0
                    };
                    for (k, c) in [(0, 1.0), (1, sign)] {
                        if wants(k) {
                            let (s, l) = slot_of(k);
                            axpy(c, adj, view_mut(s, l, lo, grad));
                        }
                    }
                }
                Op::Hadamard => {
                    for k in 0..2 {
                        if wants(k) {
                            let other = val(1 - k);
                            let (s, l) = slot_of(k);
                            let t = view_mut(s, l, lo, grad);
                            for j in 0..t.len() {
                                t[j] += adj[j] * other[j];
                            }
                        }
                    }
                }
                Op::Dot => {
                    for k in 0..2 {
                        if wants(k) {
                            let other = val(1 - k);
                            let (s, l) = slot_of(k);
                            axpy(adj[0], other, view_mut(s, l, lo, grad));
                        }
                    }
                }
                Op::Sum => {
                    let (s, l) = slot_of(0);
                    for t in view_mut(s, l, lo, grad) {
                        *t += adj[0];
                    }
                }
                Op::Scale(c) => {
                    let (s, l) = slot_of(0);
                    axpy(*c, adj, view_mut(s, l, lo, grad));
                }
                Op::Elementwise { prim, order } => {
                    if order + 1 > HARD_MAX_ORDER {
                        return Err(Error::OrderTooHigh {
                            order: order + 1,
                            max: HARD_MAX_ORDER,
                        });
                    }
                    self.scratch.resize(node.len, 0.0);
                    prim.eval_into(order + 1, val(0), &mut self.scratch);
                    let (s, l) = slot_of(0);
                    let t = view_mut(s, l, lo, grad);
                    for j in 0..t.len() {
                        t[j] += adj[j] * self.scratch[j];
                    }
                }
            }
        }
        Ok(())
    }
}

/// Evaluates the graph and returns the output values.
pub fn forward_eval(graph: &Graph, inputs: &[&[f64]], params: &[f64]) -> Result<Vec<Vec<f64>>> {
    let mut ev = Evaluator::new(graph);
    ev.forward(graph, inputs, params)?;
    Ok((0..graph.outputs().len())
        .map(|i| ev.output(graph, params, i).to_vec())
        .collect())
}

/// Gradient of the (scalar) first output with respect to the flat
/// parameter vector.
pub fn reverse_grad(graph: &Graph, inputs: &[&[f64]], params: &[f64]) -> Result<Vec<f64>> {
    let out_len = graph.output_len(0);
    if out_len != 1 {
        return Err(Error::NonScalarOutput(out_len));
    }
    let mut ev = Evaluator::new(graph);
    ev.forward(graph, inputs, params)?;
    let mut grad = vec![0.0; graph.param_len()];
    ev.backward(graph, params, &[(0, &[1.0])], &mut grad)?;
    Ok(grad)
}

/// Gradient blocks for the listed parameter nodes.
pub fn reverse_grad_wrt(
    graph: &Graph,
    inputs: &[&[f64]],
    params: &[f64],
    wrt: &[NodeId],
) -> Result<Vec<Vec<f64>>> {
    let grad = reverse_grad(graph, inputs, params)?;
    wrt.iter()
        .map(|&id| {
            let i = graph
                .param_index(id)
                .ok_or_else(|| Error::InvalidArgument(format!("{id} is not a parameter")))?;
            let off = graph.param_offset(i);
            Ok(grad[off..off + graph.node(id).len].to_vec())
        })
        .collect()
}
