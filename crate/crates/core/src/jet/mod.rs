//! Univariate Taylor mode.
//!
//! A [`Jet`] is a truncated curve through input space. Pushing it through a
//! graph is done by [`embed_jets`], which rewrites the graph into ordinary
//! first-order nodes, so the result stays reverse-differentiable in the
//! parameters.

mod expand;
mod partition;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::primitive::MAX_CONFIGURABLE_ORDER;
use crate::graph::{Evaluator, Graph, GraphBuilder, NodeId};

pub use expand::{embed_jets, JetNodes};
pub use partition::{enumerate_partitions, faa_di_bruno_coefficient, Partition};

/// Primal point plus `k` raw-derivative tangents, all of the same dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Jet {
    primal: Vec<f64>,
    tangents: Vec<Vec<f64>>,
}

impl Jet {
    pub fn new(primal: Vec<f64>, tangents: Vec<Vec<f64>>) -> Result<Self> {
        let k = tangents.len();
        if k == 0 || k > MAX_CONFIGURABLE_ORDER {
            return Err(Error::OrderTooHigh {
                order: k,
                max: MAX_CONFIGURABLE_ORDER,
            });
        }
        if let Some((j, t)) = tangents
            .iter()
            .enumerate()
            .find(|(_, t)| t.len() != primal.len())
        {
            return Err(Error::Shape(format!(
                "tangent {} has dimension {}, primal has {}",
                j + 1,
                t.len(),
                primal.len()
            )));
        }
        Ok(Self { primal, tangents })
    }

    /// The jet of the line `a + t v`, with higher tangents zero.
    pub fn line(a: Vec<f64>, v: Vec<f64>, order: usize) -> Result<Self> {
        let d = a.len();
        let mut tangents = vec![vec![0.0; d]; order];
        if let Some(first) = tangents.first_mut() {
            *first = v;
        }
        Self::new(a, tangents)
    }

    /// A constant series: primal `c`, all tangents zero.
    pub fn constant(c: Vec<f64>, order: usize) -> Result<Self> {
        let d = c.len();
        Self::new(c, vec![vec![0.0; d]; order])
    }

    pub fn primal(&self) -> &[f64] {
        &self.primal
    }

    /// Tangent of order `j`, 1-based.
    pub fn tangent(&self, j: usize) -> &[f64] {
        &self.tangents[j - 1]
    }

    pub fn tangents(&self) -> &[Vec<f64>] {
        &self.tangents
    }

    pub fn order(&self) -> usize {
        self.tangents.len()
    }

    pub fn dim(&self) -> usize {
        self.primal.len()
    }

    /// Coefficient `j` of the series, with `0` the primal.
    fn coeff(&self, j: usize) -> &[f64] {
        if j == 0 {
            &self.primal
        } else {
            &self.tangents[j - 1]
        }
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k)
        .fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
        .round()
}

/// Product of two series by the general Leibniz rule.
pub fn jet_mul(a: &Jet, b: &Jet) -> Result<Jet> {
    if a.order() != b.order() {
        return Err(Error::Shape(format!(
            "jet orders differ: {} and {}",
            a.order(),
            b.order()
        )));
    }
    if a.dim() != b.dim() {
        return Err(Error::Shape(format!(
            "jet dimensions differ: {} and {}",
            a.dim(),
            b.dim()
        )));
    }
    let d = a.dim();
    let coeff = |j: usize| -> Vec<f64> {
        let mut out = vec![0.0; d];
        for i in 0..=j {
            let c = binomial(j, i);
            let (x, y) = (a.coeff(i), b.coeff(j - i));
            for n in 0..d {
                out[n] += c * x[n] * y[n];
            }
        }
        out
    };
    Jet::new(coeff(0), (1..=a.order()).map(coeff).collect())
}

/// Taylor expansion of a single-input, single-output graph.
///
/// The expanded graph takes `[x, v_(s,j) for each jet s and active slot j,
/// extra...]` and has the same flat parameter layout as the source graph,
/// so parameter vectors and gradients carry over unchanged.
#[derive(Debug, Clone)]
pub struct JetExpansion {
    graph: Graph,
    order: usize,
    active: Vec<Vec<usize>>,
}

impl JetExpansion {
    /// Outputs are `[primal, then t_1..t_k for each jet]`.
    pub fn new(source: &Graph, order: usize, active: Vec<Vec<usize>>) -> Result<Self> {
        Self::with_head(source, order, active, &[], |b, out, _| {
            let mut nodes = vec![out.primal];
            for s in 0..out.tangents.len() {
                for j in 1..=order {
                    nodes.push(out.tangent_or_zero(b, s, j));
                }
            }
            Ok(nodes)
        })
    }

    /// Expands `source` and lets `head` build the outputs from the output
    /// jets. `extra` lists lengths of additional inputs handed to `head`.
    pub fn with_head(
        source: &Graph,
        order: usize,
        active: Vec<Vec<usize>>,
        extra: &[usize],
        head: impl FnOnce(&mut GraphBuilder, &JetNodes, &[NodeId]) -> Result<Vec<NodeId>>,
    ) -> Result<Self> {
        if source.inputs().len() != 1 || source.outputs().len() != 1 {
            return Err(Error::Graph(format!(
                "Taylor expansion needs one input and one output, graph has {} and {}",
                source.inputs().len(),
                source.outputs().len()
            )));
        }
        if order == 0 || order > source.max_order() {
            return Err(Error::OrderTooHigh {
                order,
                max: source.max_order(),
            });
        }
        for slots in &active {
            if let Some(&j) = slots.iter().find(|&&j| j == 0 || j > order) {
                return Err(Error::InvalidArgument(format!(
                    "active slot {j} outside 1..={order}"
                )));
            }
        }
        let d = source.input_len(0);
        let mut b = GraphBuilder::new().with_max_order(source.max_order());
        let params: Vec<NodeId> = source
            .params()
            .iter()
            .map(|&p| b.param(source.node(p).len))
            .collect();
        let x = b.input(d);
        let mut tangents = Vec::with_capacity(active.len());
        for slots in &active {
            let mut jet = vec![None; order];
            for &j in slots {
                jet[j - 1] = Some(b.input(d));
            }
            tangents.push(jet);
        }
        let extra: Vec<NodeId> = extra.iter().map(|&len| b.input(len)).collect();
        let input = JetNodes {
            primal: x,
            tangents,
        };
        let out = embed_jets(&mut b, source, &params, &[input], order)?
            .pop()
            .expect("one output");
        let outputs = head(&mut b, &out, &extra)?;
        Ok(Self {
            graph: b.finish(&outputs)?,
            order,
            active,
        })
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn active(&self) -> &[Vec<usize>] {
        &self.active
    }

    /// Number of direction inputs the graph expects after `x`.
    pub fn direction_count(&self) -> usize {
        self.active.iter().map(Vec::len).sum()
    }

    /// Runs the expansion with all outputs retained in `ev`.
    pub fn forward(
        &self,
        ev: &mut Evaluator,
        x: &[f64],
        directions: &[&[f64]],
        extra: &[&[f64]],
        params: &[f64],
    ) -> Result<()> {
        if directions.len() != self.direction_count() {
            return Err(Error::Shape(format!(
                "expected {} direction vectors, got {}",
                self.direction_count(),
                directions.len()
            )));
        }
        let mut inputs: Vec<&[f64]> = Vec::with_capacity(1 + directions.len() + extra.len());
        inputs.push(x);
        inputs.extend_from_slice(directions);
        inputs.extend_from_slice(extra);
        ev.forward(&self.graph, &inputs, params)
    }
}

/// Pushes `jet` through a single-input, single-output graph.
pub fn jet_pushforward(graph: &Graph, jet: &Jet, params: &[f64]) -> Result<Jet> {
    if graph.inputs().len() == 1 && jet.dim() != graph.input_len(0) {
        return Err(Error::Shape(format!(
            "jet dimension {} but graph input has length {}",
            jet.dim(),
            graph.input_len(0)
        )));
    }
    let k = jet.order();
    let slots: Vec<usize> = (1..=k)
        .filter(|&j| jet.tangent(j).iter().any(|&v| v != 0.0))
        .collect();
    let dirs: Vec<&[f64]> = slots.iter().map(|&j| jet.tangent(j)).collect();
    let exp = JetExpansion::new(graph, k, vec![slots])?;
    let mut ev = Evaluator::new(exp.graph());
    exp.forward(&mut ev, jet.primal(), &dirs, &[], params)?;
    let g = exp.graph();
    let primal = ev.output(g, params, 0).to_vec();
    let tangents = (1..=k).map(|j| ev.output(g, params, j).to_vec()).collect();
    Jet::new(primal, tangents)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    fn scalar_graph(f: impl FnOnce(&mut GraphBuilder, NodeId) -> NodeId) -> Graph {
        let mut b = GraphBuilder::new();
        let x = b.input(1);
        let y = f(&mut b, x);
        b.finish(&[y]).unwrap()
    }

    #[test]
    fn identity_returns_jet() {
        let g = scalar_graph(|_, x| x);
        let jet = Jet::new(vec![0.3], vec![vec![1.0], vec![-2.0], vec![0.5]]).unwrap();
        assert_eq!(jet_pushforward(&g, &jet, &[]).unwrap(), jet);
    }

    #[test]
    fn linear_map_scales_every_tangent() {
        let g = scalar_graph(|b, x| b.scale(x, 3.0));
        let out = jet_pushforward(
            &g,
            &Jet::new(vec![2.0], vec![vec![5.0], vec![7.0]]).unwrap(),
            &[],
        )
        .unwrap();
        assert_eq!(out.primal(), &[6.0]);
        assert_eq!(out.tangents(), &[vec![15.0], vec![21.0]]);
    }

    #[test]
    fn sine_second_order() {
        let g = scalar_graph(|b, x| b.sin(x));
        let out =
            jet_pushforward(&g, &Jet::line(vec![FRAC_PI_2], vec![1.0], 2).unwrap(), &[]).unwrap();
        assert!(close(out.primal(), &[1.0], 1e-15));
        assert!(close(out.tangent(1), &[0.0], 1e-15));
        assert!(close(out.tangent(2), &[-1.0], 1e-15));
    }

    #[test]
    fn leibniz_product() {
        let a = Jet::new(vec![2.0], vec![vec![3.0], vec![4.0]]).unwrap();
        let b = Jet::new(vec![5.0], vec![vec![7.0], vec![1.0]]).unwrap();
        let p = jet_mul(&a, &b).unwrap();
        assert_eq!(p.primal(), &[10.0]);
        assert_eq!(p.tangents(), &[vec![29.0], vec![64.0]]);
        assert_eq!(jet_mul(&b, &a).unwrap(), p);
        let one = Jet::constant(vec![1.0], 2).unwrap();
        assert_eq!(jet_mul(&a, &one).unwrap(), a);
    }

    #[test]
    fn jet_mul_rejects_order_mismatch() {
        let a = Jet::constant(vec![1.0], 2).unwrap();
        let b = Jet::constant(vec![1.0], 3).unwrap();
        assert!(matches!(jet_mul(&a, &b), Err(Error::Shape(_))));
    }

    #[test]
    fn jet_invariants() {
        assert!(Jet::new(vec![1.0], vec![]).is_err());
        assert!(Jet::new(vec![1.0, 2.0], vec![vec![1.0]]).is_err());
        assert!(Jet::constant(vec![0.0], MAX_CONFIGURABLE_ORDER + 1).is_err());
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let g = scalar_graph(|b, x| b.sin(x));
        let jet = Jet::line(vec![0.0, 0.0], vec![1.0, 0.0], 2).unwrap();
        assert!(matches!(
            jet_pushforward(&g, &jet, &[]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn order_above_graph_cap_is_rejected() {
        let mut b = GraphBuilder::new().with_max_order(2);
        let x = b.input(1);
        let y = b.sin(x);
        let g = b.finish(&[y]).unwrap();
        let jet = Jet::line(vec![0.0], vec![1.0], 3).unwrap();
        assert!(matches!(
            jet_pushforward(&g, &jet, &[]),
            Err(Error::OrderTooHigh { .. })
        ));
    }

    #[test]
    fn exp_of_line_has_all_tangents_equal() {
        let g = scalar_graph(|b, x| b.exp(x));
        let out = jet_pushforward(&g, &Jet::line(vec![0.5], vec![1.0], 6).unwrap(), &[]).unwrap();
        let e = 0.5f64.exp();
        for j in 1..=6 {
            assert!((out.tangent(j)[0] - e).abs() < 1e-12);
        }
    }

    #[test]
    fn cube_of_curve_matches_hand_expansion() {
        // F(x) = x^3 along g(t) = a + v t + w t^2 / 2
        let g = scalar_graph(|b, x| b.powi(x, 3));
        let (a, v, w) = (1.5, 0.7, -0.4);
        let out = jet_pushforward(
            &g,
            &Jet::new(vec![a], vec![vec![v], vec![w], vec![0.0]]).unwrap(),
            &[],
        )
        .unwrap();
        let t1 = 3.0 * a * a * v;
        let t2 = 6.0 * a * v * v + 3.0 * a * a * w;
        let t3 = 6.0 * v * v * v + 18.0 * a * v * w;
        assert!((out.tangent(1)[0] - t1).abs() < 1e-12);
        assert!((out.tangent(2)[0] - t2).abs() < 1e-12);
        assert!((out.tangent(3)[0] - t3).abs() < 1e-12);
    }
}
