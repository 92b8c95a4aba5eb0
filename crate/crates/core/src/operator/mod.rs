//! Linear differential operators with constant coefficients, and jet plans
//! that evaluate their mixed partials exactly.

mod engine;
mod plan;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use engine::{evaluate_plan, PushforwardEngine};
pub use plan::{
    plan_mixed_partial, plan_operator, Correction, Direction, JetPlan, PlanSlot, PlannedTerm,
    Pushforward,
};

/// Sparse multi-index: sorted `(dimension, order)` pairs with distinct
/// dimensions and positive orders.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "Vec<(usize, u32)>", into = "Vec<(usize, u32)>")]
pub struct MultiIndex(Vec<(usize, u32)>);

impl MultiIndex {
    /// Builds a multi-index; repeated dimensions have their orders added.
    pub fn new(pairs: impl IntoIterator<Item = (usize, u32)>) -> Result<Self> {
        let mut v: Vec<(usize, u32)> = Vec::new();
        for (dim, ord) in pairs {
            match v.iter_mut().find(|(d, _)| *d == dim) {
                Some(e) => e.1 += ord,
                None => v.push((dim, ord)),
            }
        }
        v.retain(|&(_, o)| o > 0);
        if v.is_empty() {
            return Err(Error::Operator("multi-index has total order 0".into()));
        }
        v.sort_unstable();
        Ok(Self(v))
    }

    /// `order`-th derivative along a single dimension.
    pub fn diagonal(dim: usize, order: u32) -> Result<Self> {
        Self::new([(dim, order)])
    }

    pub fn pairs(&self) -> &[(usize, u32)] {
        &self.0
    }

    pub fn total_order(&self) -> usize {
        self.0.iter().map(|&(_, o)| o as usize).sum()
    }

    /// Order along `dim` (zero if absent).
    pub fn order_of(&self, dim: usize) -> u32 {
        self.0
            .iter()
            .find(|(d, _)| *d == dim)
            .map_or(0, |&(_, o)| o)
    }

    /// Largest dimension index used, plus one.
    pub fn span(&self) -> usize {
        self.0.last().map_or(0, |&(d, _)| d + 1)
    }

    pub fn is_diagonal(&self) -> bool {
        self.0.len() == 1
    }
}

impl TryFrom<Vec<(usize, u32)>> for MultiIndex {
    type Error = Error;
    fn try_from(v: Vec<(usize, u32)>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<MultiIndex> for Vec<(usize, u32)> {
    fn from(m: MultiIndex) -> Self {
        m.0
    }
}

/// Formats as `x1^2 x3`, with 1-based dimension labels.
impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, &(d, o)) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "x{}", d + 1)?;
            if o > 1 {
                write!(f, "^{o}")?;
            }
        }
        Ok(())
    }
}

/// Parses the [`Display`](fmt::Display) form, e.g. `"x1^2 x2"`.
impl FromStr for MultiIndex {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let bad = |tok: &str| Error::InvalidArgument(format!("bad multi-index factor {tok:?}"));
        let mut pairs = Vec::new();
        for tok in s
            .split(|c: char| c.is_whitespace() || c == '*')
            .filter(|t| !t.is_empty())
        {
            let rest = tok.strip_prefix('x').ok_or_else(|| bad(tok))?;
            let (dim, ord) = match rest.split_once('^') {
                Some((d, o)) => (d, o.parse::<u32>().map_err(|_| bad(tok))?),
                None => (rest, 1),
            };
            let dim: usize = dim.parse().map_err(|_| bad(tok))?;
            if dim == 0 {
                return Err(bad(tok));
            }
            pairs.push((dim - 1, ord));
        }
        Self::new(pairs)
    }
}

/// `sum_alpha C_alpha D^alpha` with every `|alpha|` equal to `order`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffOperator {
    terms: Vec<(MultiIndex, f64)>,
    order: usize,
    dim: usize,
}

impl DiffOperator {
    /// Canonicalizes `terms`: sorts multi-indices, merges duplicates and
    /// drops terms whose merged coefficient is zero.
    pub fn new(terms: Vec<(MultiIndex, f64)>, dim: usize) -> Result<Self> {
        let Some(order) = terms.first().map(|(a, _)| a.total_order()) else {
            return Err(Error::Operator("operator has no terms".into()));
        };
        let mut merged: Vec<(MultiIndex, f64)> = Vec::with_capacity(terms.len());
        for (alpha, c) in terms {
            if !c.is_finite() {
                return Err(Error::Operator(format!("coefficient of {alpha} is {c}")));
            }
            if alpha.total_order() != order {
                return Err(Error::Operator(format!(
                    "mixed total orders {order} and {} ({alpha})",
                    alpha.total_order()
                )));
            }
            if alpha.span() > dim {
                return Err(Error::Operator(format!("{alpha} exceeds dimension {dim}")));
            }
            merged.push((alpha, c));
        }
        merged.sort_by(|a, b| a.0.cmp(&b.0));
        merged.dedup_by(|later, earlier| {
            if later.0 == earlier.0 {
                earlier.1 += later.1;
                true
            } else {
                false
            }
        });
        merged.retain(|(_, c)| *c != 0.0);
        if merged.is_empty() {
            return Err(Error::Operator(
                "operator is zero after merging terms".into(),
            ));
        }
        Ok(Self {
            terms: merged,
            order,
            dim,
        })
    }

    /// `sum_i d^k / dx_i^k` weighted by `coeffs` (one per dimension).
    pub fn weighted_diagonal(order: u32, coeffs: &[f64]) -> Result<Self> {
        let terms = coeffs
            .iter()
            .enumerate()
            .map(|(i, &c)| Ok((MultiIndex::diagonal(i, order)?, c)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(terms, coeffs.len())
    }

    pub fn diagonal(order: u32, dim: usize) -> Result<Self> {
        Self::weighted_diagonal(order, &vec![1.0; dim])
    }

    pub fn laplacian(dim: usize) -> Result<Self> {
        Self::diagonal(2, dim)
    }

    /// `sum_ij d^4 / dx_i^2 dx_j^2`.
    pub fn biharmonic(dim: usize) -> Result<Self> {
        let mut terms = Vec::with_capacity(dim * dim);
        for i in 0..dim {
            for j in 0..dim {
                terms.push((MultiIndex::new([(i, 2), (j, 2)])?, 1.0));
            }
        }
        Self::new(terms, dim)
    }

    /// Second-order operator `sum_ij C_ij d^2 / dx_i dx_j` from a row-major
    /// `dim x dim` matrix.
    pub fn from_matrix(c: &[f64], dim: usize) -> Result<Self> {
        if c.len() != dim * dim {
            return Err(Error::Shape(format!(
                "coefficient matrix has {} entries, expected {}",
                c.len(),
                dim * dim
            )));
        }
        let mut terms = Vec::new();
        for i in 0..dim {
            for j in 0..dim {
                if c[i * dim + j] != 0.0 {
                    terms.push((MultiIndex::new([(i, 1), (j, 1)])?, c[i * dim + j]));
                }
            }
        }
        Self::new(terms, dim)
    }

    pub fn terms(&self) -> &[(MultiIndex, f64)] {
        &self.terms
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `sum |C_alpha|`.
    pub fn abs_mass(&self) -> f64 {
        self.terms.iter().map(|(_, c)| c.abs()).sum()
    }

    /// Every term is a pure derivative along one dimension.
    pub fn is_diagonal(&self) -> bool {
        self.terms.iter().all(|(a, _)| a.is_diagonal())
    }

    /// Symmetric coefficient matrix of a second-order operator, row-major.
    pub fn second_order_matrix(&self) -> Result<Vec<f64>> {
        if self.order != 2 {
            return Err(Error::Operator(format!(
                "operator has order {}, expected 2",
                self.order
            )));
        }
        let d = self.dim;
        let mut m = vec![0.0; d * d];
        for (alpha, c) in &self.terms {
            match alpha.pairs() {
                [(i, 2)] => m[i * d + i] += c,
                [(i, 1), (j, 1)] => {
                    m[i * d + j] += c / 2.0;
                    m[j * d + i] += c / 2.0;
                }
                _ => unreachable!("order-2 multi-index"),
            }
        }
        Ok(m)
    }
}
