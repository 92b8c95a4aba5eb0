//! Scalar primitives with closed-form derivatives of arbitrary order.
//!
//! `tanh` and `arctan` derivatives are evaluated from polynomial recurrences
//! (in `tanh x` and in `x` respectively); `sin`, `cos` and `exp` cycle; the
//! power family uses falling factorials.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default highest derivative order exposed through [`scalar_derivative`].
pub const DEFAULT_MAX_ORDER: usize = 16;

/// Hard ceiling for any derivative order. Jet expansion of order `k` needs
/// `f^(k)` and the reverse pass through it needs `f^(k+1)`, so this sits one
/// above the largest configurable jet order.
pub const HARD_MAX_ORDER: usize = 33;

/// Largest jet order a graph may be configured for.
pub const MAX_CONFIGURABLE_ORDER: usize = HARD_MAX_ORDER - 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Primitive {
    Tanh,
    Sin,
    Cos,
    Exp,
    Arctan,
    /// `x^n` for an integer exponent.
    Powi(i32),
    Recip,
    Ln,
}

impl Primitive {
    pub fn name(&self) -> &'static str {
        match self {
            Primitive::Tanh => "tanh",
            Primitive::Sin => "sin",
            Primitive::Cos => "cos",
            Primitive::Exp => "exp",
            Primitive::Arctan => "arctan",
            Primitive::Powi(_) => "powi",
            Primitive::Recip => "recip",
            Primitive::Ln => "ln",
        }
    }

    /// Whether `x` lies in the domain on which every derivative is finite.
    pub fn in_domain(&self, x: f64) -> bool {
        match self {
            Primitive::Recip => x != 0.0,
            Primitive::Powi(n) if *n < 0 => x != 0.0,
            Primitive::Ln => x > 0.0,
            _ => x.is_finite(),
        }
    }

    /// `f^(order)(x)` without range or domain checks.
    pub fn eval(&self, order: usize, x: f64) -> f64 {
        debug_assert!(order <= HARD_MAX_ORDER);
        match self {
            Primitive::Tanh => horner(&tanh_polys()[order], x.tanh()),
            Primitive::Sin => match order % 4 {
                0 => x.sin(),
                1 => x.cos(),
                2 => -x.sin(),
                _ => -x.cos(),
            },
            Primitive::Cos => match order % 4 {
                0 => x.cos(),
                1 => -x.sin(),
                2 => -x.cos(),
                _ => x.sin(),
            },
            Primitive::Exp => x.exp(),
            Primitive::Arctan => {
                if order == 0 {
                    x.atan()
                } else {
                    let q = horner(&arctan_polys()[order], x);
                    q / (1.0 + x * x).powi(order as i32)
                }
            }
            Primitive::Powi(n) => powi_derivative(*n, order, x),
            Primitive::Recip => powi_derivative(-1, order, x),
            Primitive::Ln => {
                if order == 0 {
                    x.ln()
                } else {
                    // (-1)^(m-1) (m-1)! / x^m
                    let sign = if order % 2 == 1 { 1.0 } else { -1.0 };
                    sign * factorial_f64(order - 1) / x.powi(order as i32)
                }
            }
        }
    }

    /// Element-wise `f^(order)` over a slice.
    pub fn eval_into(&self, order: usize, xs: &[f64], out: &mut [f64]) {
        match self {
            Primitive::Tanh => {
                let poly = &tanh_polys()[order];
                for (o, &x) in out.iter_mut().zip(xs) {
                    *o = horner(poly, x.tanh());
                }
            }
            _ => {
                for (o, &x) in out.iter_mut().zip(xs) {
                    *o = self.eval(order, x);
                }
            }
        }
    }
}

/// Checked `f^(order)(x)` with the default order cap.
pub fn scalar_derivative(prim: Primitive, order: usize, x: f64) -> Result<f64> {
    scalar_derivative_capped(prim, order, x, DEFAULT_MAX_ORDER)
}

/// Checked `f^(order)(x)` with an explicit order cap.
pub fn scalar_derivative_capped(
    prim: Primitive,
    order: usize,
    x: f64,
    max_order: usize,
) -> Result<f64> {
    let max = max_order.min(HARD_MAX_ORDER);
    if order > max {
        return Err(Error::OrderTooHigh { order, max });
    }
    if !prim.in_domain(x) {
        return Err(Error::Domain {
            primitive: prim.name(),
            x,
        });
    }
    Ok(prim.eval(order, x))
}

fn powi_derivative(n: i32, order: usize, x: f64) -> f64 {
    let mut coeff = 1.0;
    for i in 0..order as i32 {
        let factor = (n - i) as f64;
        if factor == 0.0 {
            return 0.0;
        }
        coeff *= factor;
    }
    coeff * x.powi(n - order as i32)
}

fn factorial_f64(n: usize) -> f64 {
    (1..=n).fold(1.0, |acc, i| acc * i as f64)
}

fn horner(coeffs: &[f64], t: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * t + c)
}

/// Polynomials P_m with tanh^(m)(x) = P_m(tanh x), coefficients low to high.
fn tanh_polys() -> &'static [Vec<f64>] {
    static TABLE: OnceLock<Vec<Vec<f64>>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut polys = vec![vec![0.0, 1.0]];
        for m in 0..HARD_MAX_ORDER {
            // P_{m+1}(t) = P_m'(t) (1 - t^2)
            let p = &polys[m];
            let dp: Vec<f64> = (1..p.len()).map(|i| i as f64 * p[i]).collect();
            let mut next = vec![0.0; dp.len() + 2];
            for (i, &c) in dp.iter().enumerate() {
                next[i] += c;
                next[i + 2] -= c;
            }
            polys.push(next);
        }
        polys
    })
}

/// Polynomials Q_m with arctan^(m)(x) = Q_m(x) / (1 + x^2)^m for m >= 1.
fn arctan_polys() -> &'static [Vec<f64>] {
    static TABLE: OnceLock<Vec<Vec<f64>>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut polys = vec![vec![0.0], vec![1.0]];
        for m in 1..HARD_MAX_ORDER {
            // Q_{m+1} = Q_m' (1 + x^2) - 2 m x Q_m
            let q = &polys[m];
            let mut next = vec![0.0; q.len() + 1];
            for i in 1..q.len() {
                let c = i as f64 * q[i];
                next[i - 1] += c;
                next[i + 1] += c;
            }
            for (i, &c) in q.iter().enumerate() {
                next[i + 1] -= 2.0 * m as f64 * c;
            }
            polys.push(next);
        }
        polys
    })
}
