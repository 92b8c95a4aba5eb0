//! Random expression graphs shared by the integration tests.

#![allow(dead_code)]

use jetstorm_core::graph::{Graph, GraphBuilder, NodeId, Primitive};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Appends a random smooth map from `x` (length `d_in`) to a node of length
/// `d_out`, built from `ops` random operations on width-`h` vectors.
/// Returns the output node and the initial values of the parameters it
/// created, in creation order.
pub fn append_random(
    b: &mut GraphBuilder,
    x: NodeId,
    d_in: usize,
    d_out: usize,
    h: usize,
    ops: usize,
    rng: &mut ChaCha8Rng,
) -> (NodeId, Vec<f64>) {
    let mut init = Vec::new();
    let mut weight = |b: &mut GraphBuilder, rows: usize, cols: usize, rng: &mut ChaCha8Rng| {
        let w = b.param(rows * cols);
        let s = 1.0 / (cols as f64).sqrt();
        init.extend((0..rows * cols).map(|_| s * rng.sample::<f64, _>(StandardNormal)));
        w
    };
    let w0 = weight(b, h, d_in, rng);
    let first = b.matvec(w0, x, h, d_in);
    let mut pool = vec![b.tanh(first)];
    let mut shared = vec![w0].into_iter().filter(|_| d_in == h).collect::<Vec<_>>();
    for _ in 0..ops {
        let pick = |rng: &mut ChaCha8Rng, pool: &[NodeId]| pool[rng.random_range(0..pool.len())];
        let a = pick(rng, &pool);
        let node = match rng.random_range(0..8) {
            0 => {
                let c = pick(rng, &pool);
                b.add(a, c)
            }
            1 => {
                let c = pick(rng, &pool);
                b.sub(a, c)
            }
            2 => {
                let c = pick(rng, &pool);
                b.hadamard(a, c)
            }
            3 => {
                let prim = [Primitive::Tanh, Primitive::Sin, Primitive::Cos, Primitive::Arctan]
                    [rng.random_range(0..4)];
                b.apply(prim, a)
            }
            4 => {
                let s = b.scale(a, 0.5);
                b.exp(s)
            }
            5 => {
                let c = rng.random_range(-1.5..1.5);
                b.scale(a, c)
            }
            _ => {
                // Reusing a square matrix exercises shared-operand products.
                let w = if !shared.is_empty() && rng.random_bool(0.5) {
                    shared[rng.random_range(0..shared.len())]
                } else {
                    let w = weight(b, h, h, rng);
                    shared.push(w);
                    w
                };
                let y = b.matvec(w, a, h, h);
                b.tanh(y)
            }
        };
        pool.push(node);
    }
    let last = *pool.last().unwrap();
    let wo = weight(b, d_out, h, rng);
    let out = b.matvec(wo, last, d_out, h);
    (out, init)
}

/// A random graph `R^d_in -> R^d_out` with its parameters.
pub fn random_graph(d_in: usize, d_out: usize, h: usize, ops: usize, seed: u64) -> (Graph, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = GraphBuilder::new();
    let x = b.input(d_in);
    let (out, theta) = append_random(&mut b, x, d_in, d_out, h, ops, &mut rng);
    (b.finish(&[out]).unwrap(), theta)
}

/// `F1: R^d -> R^m`, `F2: R^m -> R`, and their composition built in one
/// graph, whose parameter vector is the concatenation of theirs.
pub struct ComposedPair {
    pub first: (Graph, Vec<f64>),
    pub second: (Graph, Vec<f64>),
    pub composed: (Graph, Vec<f64>),
}

pub fn composed_pair(d: usize, m: usize, h: usize, ops: usize, seed: u64) -> ComposedPair {
    let build = |parts: u8| {
        let mut rng1 = ChaCha8Rng::seed_from_u64(seed);
        let mut rng2 = ChaCha8Rng::seed_from_u64(seed ^ 0x5555);
        let mut b = GraphBuilder::new();
        let mut theta = Vec::new();
        let mut cur = b.input(if parts == 2 { m } else { d });
        if parts != 2 {
            let (o, t) = append_random(&mut b, cur, d, m, h, ops, &mut rng1);
            cur = o;
            theta.extend(t);
        }
        if parts != 1 {
            let (o, t) = append_random(&mut b, cur, m, 1, h, ops, &mut rng2);
            cur = o;
            theta.extend(t);
        }
        (b.finish(&[cur]).unwrap(), theta)
    };
    ComposedPair {
        first: build(1),
        second: build(2),
        composed: build(3),
    }
}

pub fn random_point(d: usize, scale: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..d).map(|_| rng.random_range(-scale..scale)).collect()
}
