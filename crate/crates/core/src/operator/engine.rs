//! Batched evaluation of pushforwards through a scalar function.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use rayon::prelude::*;

use super::plan::{JetPlan, Pushforward};
use crate::error::{Error, Result};
use crate::graph::{Evaluator, Graph};
use crate::jet::JetExpansion;

/// Most jets placed in a single expansion; larger batches are chunked.
const MAX_JETS_PER_EXPANSION: usize = 64;

type ShapeKey = (usize, Vec<usize>, usize);

/// Evaluates pushforwards of a single-input, scalar-output graph. Jets with
/// the same order and slot pattern share one expanded graph (and one primal
/// pass). Expanded graphs are cached and may be shared across threads.
#[derive(Debug)]
pub struct PushforwardEngine<'g> {
    graph: &'g Graph,
    cache: Mutex<HashMap<ShapeKey, Arc<JetExpansion>>>,
}

impl<'g> PushforwardEngine<'g> {
    pub fn new(graph: &'g Graph) -> Result<Self> {
        if graph.inputs().len() != 1 || graph.outputs().len() != 1 || graph.output_len(0) != 1 {
            return Err(Error::Graph(
                "pushforward engine needs one input and one scalar output".into(),
            ));
        }
        Ok(Self {
            graph,
            cache: Mutex::new(HashMap::new()),
        })
    }

    pub fn graph(&self) -> &Graph {
        self.graph
    }

    pub fn dim(&self) -> usize {
        self.graph.input_len(0)
    }

    /// Expanded graph for `n_jets` jets of order `order` with the given
    /// active slots; outputs are the order-`order` tangent of each jet.
    pub fn expansion(
        &self,
        order: usize,
        slots: &[usize],
        n_jets: usize,
    ) -> Result<Arc<JetExpansion>> {
        let key = (order, slots.to_vec(), n_jets);
        if let Some(e) = self.cache.lock().expect("cache lock").get(&key) {
            return Ok(Arc::clone(e));
        }
        let exp = JetExpansion::with_head(
            self.graph,
            order,
            vec![slots.to_vec(); n_jets],
            &[],
            |b, out, _| {
                Ok((0..n_jets)
                    .map(|s| out.tangent_or_zero(b, s, order))
                    .collect())
            },
        )?;
        let exp = Arc::new(exp);
        self.cache
            .lock()
            .expect("cache lock")
            .insert(key, Arc::clone(&exp));
        Ok(exp)
    }

    /// Order-`order` output tangent of each pushforward, in input order.
    pub fn evaluate(&self, x: &[f64], params: &[f64], pushes: &[&Pushforward]) -> Result<Vec<f64>> {
        let d = self.dim();
        if x.len() != d {
            return Err(Error::Shape(format!(
                "point has dimension {}, expected {d}",
                x.len()
            )));
        }
        let mut groups: Vec<((usize, Vec<usize>), Vec<usize>)> = Vec::new();
        for (i, p) in pushes.iter().enumerate() {
            let shape = p.shape();
            match groups.iter_mut().find(|(s, _)| *s == shape) {
                Some((_, members)) => members.push(i),
                None => groups.push((shape, vec![i])),
            }
        }
        let mut out = vec![0.0; pushes.len()];
        for ((order, slots), members) in groups {
            for chunk in members.chunks(MAX_JETS_PER_EXPANSION) {
                let exp = self.expansion(order, &slots, chunk.len())?;
                let dirs = chunk
                    .iter()
                    .flat_map(|&i| pushes[i].slots.iter().map(|(_, dir)| dir.to_dense(d)))
                    .collect::<Result<Vec<_>>>()?;
                let refs: Vec<&[f64]> = dirs.iter().map(Vec::as_slice).collect();
                let mut ev = Evaluator::new(exp.graph());
                exp.forward(&mut ev, x, &refs, &[], params)?;
                for (s, &i) in chunk.iter().enumerate() {
                    out[i] = ev.output(exp.graph(), params, s)[0];
                }
            }
        }
        Ok(out)
    }

    /// Like [`evaluate`](Self::evaluate), split into chunks evaluated in
    /// parallel. Each value depends only on its own pushforward, so the
    /// result is bit-identical to the sequential one.
    pub fn evaluate_par(
        &self,
        x: &[f64],
        params: &[f64],
        pushes: &[Pushforward],
    ) -> Result<Vec<f64>> {
        let chunks = pushes
            .par_chunks(MAX_JETS_PER_EXPANSION)
            .map(|c| {
                let refs: Vec<&Pushforward> = c.iter().collect();
                self.evaluate(x, params, &refs)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(chunks.concat())
    }

    /// Exact value of `plan` at `x`.
    pub fn evaluate_plan(&self, plan: &JetPlan, x: &[f64], params: &[f64]) -> Result<f64> {
        self.evaluate_plans(&[plan], x, params).map(|v| v[0])
    }

    /// Values of several plans, all pushforwards batched together.
    pub fn evaluate_plans(
        &self,
        plans: &[&JetPlan],
        x: &[f64],
        params: &[f64],
    ) -> Result<Vec<f64>> {
        let lin: Vec<Vec<(Pushforward, f64)>> = plans.iter().map(|p| p.linearize()).collect();
        let pushes: Vec<&Pushforward> = lin.iter().flatten().map(|(p, _)| p).collect();
        let values = self.evaluate(x, params, &pushes)?;
        let mut k = 0;
        Ok(lin
            .iter()
            .map(|terms| {
                let v: f64 = terms
                    .iter()
                    .zip(&values[k..])
                    .map(|((_, w), v)| w * v)
                    .sum();
                k += terms.len();
                v
            })
            .collect())
    }
}

/// Exact value of the planned derivative of a scalar graph at `x`.
pub fn evaluate_plan(plan: &JetPlan, graph: &Graph, x: &[f64], params: &[f64]) -> Result<f64> {
    PushforwardEngine::new(graph)?.evaluate_plan(plan, x, params)
}

#[cfg(test)]
mod tests {
    use super::super::{plan_mixed_partial, MultiIndex};
    use super::*;
    use crate::graph::GraphBuilder;

    /// u(x) = x1^2 x2
    fn monomial() -> Graph {
        let mut b = GraphBuilder::new();
        let x = b.input(2);
        let x1 = b.slice(x, 0, 1);
        let x2 = b.slice(x, 1, 1);
        let sq = b.hadamard(x1, x1);
        let y = b.hadamard(sq, x2);
        b.finish(&[y]).unwrap()
    }

    #[test]
    fn mixed_partial_of_monomial() {
        let g = monomial();
        let target: MultiIndex = "x1^2 x2".parse().unwrap();
        for cap in [5, 16] {
            let plan = plan_mixed_partial(&target, cap).unwrap();
            let v = evaluate_plan(&plan, &g, &[0.7, -1.3], &[]).unwrap();
            assert!((v - 2.0).abs() < 1e-12, "cap {cap}: {v}");
        }
    }

    #[test]
    fn linear_function_has_no_second_derivatives() {
        let mut b = GraphBuilder::new();
        let x = b.input(3);
        let y = b.sum(x);
        let g = b.finish(&[y]).unwrap();
        for s in ["x1^2", "x1 x3", "x2^2 x3"] {
            let plan = plan_mixed_partial(&s.parse().unwrap(), 16).unwrap();
            assert_eq!(
                evaluate_plan(&plan, &g, &[1.0, 2.0, 3.0], &[]).unwrap(),
                0.0
            );
        }
    }

    #[test]
    fn rejects_vector_output() {
        let mut b = GraphBuilder::new();
        let x = b.input(2);
        let g = b.finish(&[x]).unwrap();
        assert!(PushforwardEngine::new(&g).is_err());
    }
}
