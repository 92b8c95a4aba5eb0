//! Multilayer perceptron construction and initialization.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Graph, GraphBuilder, NodeId, Primitive};
use crate::error::{Error, Result};

/// Fully connected network shape. With `share_block = Some(B)` the input is
/// first reduced to `input / B` features by a stride-`B` convolution with a
/// single shared filter of length `B`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub output: usize,
    pub activation: Primitive,
    #[serde(default)]
    pub share_block: Option<usize>,
}

impl MlpSpec {
    /// `depth` hidden layers of `width` units, scalar output, tanh.
    pub fn tanh(input: usize, width: usize, depth: usize) -> Self {
        Self {
            input,
            hidden: vec![width; depth],
            output: 1,
            activation: Primitive::Tanh,
            share_block: None,
        }
    }
}

/// A parameter block with its initialization scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamBlock {
    /// Position of the parameter among all parameters of the builder.
    pub ordinal: usize,
    /// Fan-in for weights; `None` marks a bias.
    pub fan_in: Option<usize>,
}

/// Output node of a built network plus its parameter blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpNodes {
    pub output: NodeId,
    pub blocks: Vec<ParamBlock>,
}

/// `B`-strided single-filter convolution: `y_r = sum_c x_(rB + c) theta_c`.
pub fn weight_share(b: &mut GraphBuilder, x: NodeId, block: usize) -> Result<(NodeId, NodeId)> {
    let d = b.len(x);
    if block == 0 || d % block != 0 {
        return Err(Error::Shape(format!(
            "weight-sharing block {block} does not divide input dimension {d}"
        )));
    }
    let theta = b.param(block);
    Ok((b.matvec(x, theta, d / block, block), theta))
}

/// Appends the network to `b`, reading from `x`.
pub fn mlp(b: &mut GraphBuilder, x: NodeId, spec: &MlpSpec) -> Result<MlpNodes> {
    if b.len(x) != spec.input {
        return Err(Error::Shape(format!(
            "network expects {} inputs, node has length {}",
            spec.input,
            b.len(x)
        )));
    }
    let mut blocks = Vec::new();
    let mut h = x;
    if let Some(block) = spec.share_block {
        blocks.push(ParamBlock {
            ordinal: b.param_count(),
            fan_in: Some(block),
        });
        h = weight_share(b, x, block)?.0;
    }
    let widths: Vec<usize> = spec.hidden.iter().copied().chain([spec.output]).collect();
    for (layer, &width) in widths.iter().enumerate() {
        let fan_in = b.len(h);
        let ordinal = b.param_count();
        let (y, _, _) = b.affine(h, width);
        blocks.push(ParamBlock {
            ordinal,
            fan_in: Some(fan_in),
        });
        blocks.push(ParamBlock {
            ordinal: ordinal + 1,
            fan_in: None,
        });
        h = if layer + 1 < widths.len() {
            b.apply(spec.activation, y)
        } else {
            y
        };
    }
    Ok(MlpNodes { output: h, blocks })
}

impl MlpNodes {
    /// LeCun-normal weights (`N(0, 1/fan_in)`); biases `N(0, bias_std^2)`.
    /// Parameters not owned by this network are left at zero.
    pub fn init(&self, graph: &Graph, rng: &mut impl Rng, bias_std: f64) -> Vec<f64> {
        let mut theta = vec![0.0; graph.param_len()];
        for block in &self.blocks {
            let id = graph.params()[block.ordinal];
            let off = graph.param_offset(block.ordinal);
            let len = graph.node(id).len;
            let std = match block.fan_in {
                Some(f) => 1.0 / (f as f64).sqrt(),
                None => bias_std,
            };
            if std > 0.0 {
                let normal = Normal::new(0.0, std).expect("positive std");
                for t in &mut theta[off..off + len] {
                    *t = normal.sample(rng);
                }
            }
        }
        theta
    }
}
