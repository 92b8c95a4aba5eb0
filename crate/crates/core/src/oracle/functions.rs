//! Test functions as graphs, with known derivatives.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::graph::nets::{mlp, MlpSpec};
use crate::graph::{Graph, GraphBuilder};

/// `||x||^2`.
pub fn sum_of_squares(d: usize) -> Result<Graph> {
    let mut b = GraphBuilder::new();
    let x = b.input(d);
    let y = b.dot(x, x);
    b.finish(&[y])
}

/// `||x||^4`.
pub fn norm_fourth(d: usize) -> Result<Graph> {
    let mut b = GraphBuilder::new();
    let x = b.input(d);
    let r2 = b.dot(x, x);
    let y = b.hadamard(r2, r2);
    b.finish(&[y])
}

/// `x^T A x` for row-major `a`.
pub fn quadratic_form(a: &[f64], d: usize) -> Result<Graph> {
    let mut b = GraphBuilder::new();
    let x = b.input(d);
    let m = b.constant(a.to_vec());
    let ax = b.matvec(m, x, d, d);
    let y = b.dot(x, ax);
    b.finish(&[y])
}

/// `c . x`.
pub fn linear(c: &[f64]) -> Result<Graph> {
    let mut b = GraphBuilder::new();
    let x = b.input(c.len());
    let w = b.constant(c.to_vec());
    let y = b.dot(w, x);
    b.finish(&[y])
}

/// `x_i^n`.
pub fn coordinate_power(d: usize, i: usize, n: i32) -> Result<Graph> {
    let mut b = GraphBuilder::new();
    let x = b.input(d);
    let xi = b.slice(x, i, 1);
    let y = b.powi(xi, n);
    b.finish(&[y])
}

/// Random tanh network with scalar output and nonzero biases.
pub fn random_mlp(d: usize, width: usize, depth: usize, seed: u64) -> Result<(Graph, Vec<f64>)> {
    let mut b = GraphBuilder::new();
    let x = b.input(d);
    let net = mlp(&mut b, x, &MlpSpec::tanh(d, width, depth))?;
    let g = b.finish(&[net.output])?;
    let theta = net.init(&g, &mut ChaCha8Rng::seed_from_u64(seed), 0.5);
    Ok((g, theta))
}

/// Random network of mixed primitives: `sin(a.x) exp(b.x / 2) + tanh(W x).c`.
pub fn random_smooth(d: usize, seed: u64) -> Result<(Graph, Vec<f64>)> {
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |n: usize| -> Vec<f64> {
        (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z / (d as f64).sqrt()
            })
            .collect()
    };
    let (a, bv, w, c) = (draw(d), draw(d), draw(3 * d), draw(3));
    let mut b = GraphBuilder::new();
    let x = b.input(d);
    let a = b.constant(a);
    let bv = b.constant(bv);
    let ax = b.dot(a, x);
    let s = b.sin(ax);
    let bx = b.dot(bv, x);
    let bx = b.scale(bx, 0.5);
    let e = b.exp(bx);
    let first = b.hadamard(s, e);
    let w = b.constant(w);
    let wx = b.matvec(w, x, 3, d);
    let t = b.tanh(wx);
    let c = b.constant(c);
    let second = b.dot(t, c);
    let y = b.add(first, second);
    Ok((b.finish(&[y])?, Vec::new()))
}
