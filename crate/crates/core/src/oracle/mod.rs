//! Independent ground truth: finite differences, exhaustive expectations,
//! and analytic test functions.

pub mod functions;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{pairwise_sum, Evaluator, Graph};
use crate::operator::MultiIndex;

/// Central finite-difference scheme, composed per axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FdScheme {
    pub step: f64,
    /// Number of Richardson extrapolation levels (0 = plain stencil).
    pub richardson: usize,
}

impl FdScheme {
    /// Default step for a total derivative order.
    pub fn for_order(order: usize) -> Self {
        let step = match order {
            0..=2 => 1e-4,
            3..=4 => 1e-2,
            _ => 2e-2,
        };
        Self {
            step,
            richardson: 0,
        }
    }

    pub fn with_richardson(mut self, levels: usize) -> Self {
        self.richardson = levels;
        self
    }
}

/// A finite-difference estimate with a step-halving error bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FdEstimate {
    pub value: f64,
    pub error_bound: f64,
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k)
        .fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
        .round()
}

/// Nested central stencil `h^-m sum_i (-1)^i C(m,i) f(x + (m/2 - i) h e_dim)`
/// over the remaining axes of `axes`.
fn stencil(f: &dyn Fn(&[f64]) -> f64, x: &mut [f64], axes: &[(usize, u32)], h: f64) -> Result<f64> {
    let Some((&(dim, m), rest)) = axes.split_first() else {
        let v = f(x);
        return if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Oracle(format!("non-finite sample at {x:?}")))
        };
    };
    let m = m as usize;
    let x0 = x[dim];
    let mut terms = Vec::with_capacity(m + 1);
    for i in 0..=m {
        x[dim] = x0 + (m as f64 / 2.0 - i as f64) * h;
        let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
        terms.push(sign * binomial(m, i) * stencil(f, x, rest, h)?);
    }
    x[dim] = x0;
    Ok(pairwise_sum(&terms) / h.powi(m as i32))
}

/// Estimates `D^target f(x)`. An empty `target` returns `f(x)`.
pub fn fd_derivative(
    f: &dyn Fn(&[f64]) -> f64,
    x: &[f64],
    target: Option<&MultiIndex>,
    scheme: FdScheme,
) -> Result<FdEstimate> {
    let axes: Vec<(usize, u32)> = target.map(|t| t.pairs().to_vec()).unwrap_or_default();
    if let Some(&(d, _)) = axes.iter().find(|(d, _)| *d >= x.len()) {
        return Err(Error::Shape(format!(
            "axis {d} outside dimension {}",
            x.len()
        )));
    }
    if !(scheme.step > 0.0) || !scheme.step.is_finite() {
        return Err(Error::Oracle(format!("invalid step {}", scheme.step)));
    }
    let mut xs = x.to_vec();
    if axes.is_empty() {
        let value = stencil(f, &mut xs, &[], scheme.step)?;
        return Ok(FdEstimate {
            value,
            error_bound: 0.0,
        });
    }
    let finest = scheme.step / 2f64.powi(scheme.richardson as i32 + 1);
    if axes
        .iter()
        .any(|&(d, _)| x[d] + finest / 2.0 == x[d] || finest < 1e-12)
    {
        return Err(Error::Oracle(format!("step {finest} underflows at {x:?}")));
    }
    // table[i][k]: k-th extrapolation from step h / 2^i
    let levels = scheme.richardson;
    let mut table: Vec<Vec<f64>> = Vec::with_capacity(levels + 2);
    for i in 0..levels + 2 {
        let h = scheme.step / 2f64.powi(i as i32);
        let mut row = vec![stencil(f, &mut xs, &axes, h)?];
        for k in 1..=i.min(levels) {
            let p = 4f64.powi(k as i32);
            let v = (p * row[k - 1] - table[i - 1][k - 1]) / (p - 1.0);
            row.push(v);
        }
        table.push(row);
    }
    let value = table[levels][levels];
    let error_bound = (table[levels + 1][levels] - value).abs();
    Ok(FdEstimate { value, error_bound })
}

/// Dense order-`k` derivative tensor of `f` at `x`, row-major over
/// `d^k` entries. Each distinct index multiset is differenced once, so the
/// result is exactly symmetric.
pub fn full_derivative_tensor(
    f: &dyn Fn(&[f64]) -> f64,
    x: &[f64],
    k: usize,
    scheme: FdScheme,
) -> Result<Vec<f64>> {
    let d = x.len();
    let size = (d as f64).powi(k as i32);
    if k == 0 || size > 1e4 {
        return Err(Error::Oracle(format!(
            "derivative tensor of order {k} in dimension {d} exceeds 10^4 entries"
        )));
    }
    let size = size as usize;
    let mut out = vec![0.0; size];
    let mut cache: std::collections::HashMap<MultiIndex, f64> = std::collections::HashMap::new();
    for (flat, slot) in out.iter_mut().enumerate() {
        let mut rem = flat;
        let mut idx = Vec::with_capacity(k);
        for _ in 0..k {
            idx.push((rem % d, 1));
            rem /= d;
        }
        let alpha = MultiIndex::new(idx)?;
        *slot = match cache.get(&alpha) {
            Some(&v) => v,
            None => {
                let v = fd_derivative(f, x, Some(&alpha), scheme)?.value;
                cache.insert(alpha, v);
                v
            }
        };
    }
    Ok(out)
}

/// Largest support [`exhaustive_expectation`] accepts.
pub const MAX_ATOMS: usize = 100_000;

/// One atom of a finite distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub probability: f64,
    pub value: f64,
}

/// `sum_a p_a v_a` over a finite support.
pub fn exhaustive_expectation(atoms: &[Atom]) -> Result<f64> {
    if atoms.is_empty() || atoms.len() > MAX_ATOMS {
        return Err(Error::Oracle(format!(
            "support of {} atoms is outside 1..={MAX_ATOMS}",
            atoms.len()
        )));
    }
    let total = pairwise_sum(&atoms.iter().map(|a| a.probability).collect::<Vec<_>>());
    if (total - 1.0).abs() > 1e-9 || atoms.iter().any(|a| a.probability < 0.0) {
        return Err(Error::Oracle(format!("probabilities sum to {total}")));
    }
    Ok(pairwise_sum(
        &atoms
            .iter()
            .map(|a| a.probability * a.value)
            .collect::<Vec<_>>(),
    ))
}

/// Scalar closure evaluating the first output entry of `graph`.
pub fn graph_fn<'a>(graph: &'a Graph, params: &'a [f64]) -> impl Fn(&[f64]) -> f64 + 'a {
    move |x: &[f64]| {
        let mut ev = Evaluator::new(graph);
        match ev.forward(graph, &[x], params) {
            Ok(()) => ev.output(graph, params, 0)[0],
            Err(_) => f64::NAN,
        }
    }
}
