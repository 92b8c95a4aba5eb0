//! Network ansatz `u_theta(x) = (1 - |x|^2) MLP(x)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::nets::{mlp, MlpSpec};
use crate::graph::{Evaluator, Graph, GraphBuilder, Primitive};

/// Architecture of a PINN ansatz.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    /// Input length: the spatial dimension, plus one for a trailing time
    /// coordinate when the problem has one.
    pub input: usize,
    #[serde(default = "default_width")]
    pub width: usize,
    #[serde(default = "default_hidden_layers")]
    pub hidden_layers: usize,
    /// Stride-`B` shared first-layer filter.
    #[serde(default)]
    pub share_block: Option<usize>,
    /// Multiply by `1 - |x_space|^2` so the output vanishes on the unit sphere.
    #[serde(default = "yes")]
    pub boundary: bool,
    /// Number of leading input coordinates that are spatial.
    #[serde(default)]
    pub spatial: Option<usize>,
}

fn default_width() -> usize {
    128
}

fn default_hidden_layers() -> usize {
    3
}

fn yes() -> bool {
    true
}

impl ModelSpec {
    pub fn new(input: usize) -> Self {
        Self {
            input,
            width: default_width(),
            hidden_layers: default_hidden_layers(),
            share_block: None,
            boundary: true,
            spatial: None,
        }
    }

    pub fn width(mut self, width: usize) -> Self {
        self.width = width;
        self
    }

    pub fn hidden_layers(mut self, n: usize) -> Self {
        self.hidden_layers = n;
        self
    }

    pub fn share_block(mut self, block: Option<usize>) -> Self {
        self.share_block = block;
        self
    }

    pub fn boundary(mut self, on: bool) -> Self {
        self.boundary = on;
        self
    }

    pub fn spatial(mut self, spatial: usize) -> Self {
        self.spatial = Some(spatial);
        self
    }

    fn spatial_len(&self) -> usize {
        self.spatial.unwrap_or(self.input)
    }
}

/// Scalar network with its parameters.
#[derive(Debug, Clone)]
pub struct PinnModel {
    spec: ModelSpec,
    graph: Graph,
    params: Vec<f64>,
}

impl PinnModel {
    /// Builds the graph and draws LeCun-normal weights (zero biases) from `seed`.
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self> {
        if spec.input == 0 || spec.width == 0 || spec.hidden_layers == 0 {
            return Err(Error::InvalidArgument(
                "model needs positive input length, width and depth".into(),
            ));
        }
        if spec.spatial_len() == 0 || spec.spatial_len() > spec.input {
            return Err(Error::InvalidArgument(format!(
                "spatial length {} outside 1..={}",
                spec.spatial_len(),
                spec.input
            )));
        }
        let mut b = GraphBuilder::new();
        let x = b.input(spec.input);
        let net = MlpSpec {
            input: spec.input,
            hidden: vec![spec.width; spec.hidden_layers],
            output: 1,
            activation: Primitive::Tanh,
            share_block: spec.share_block,
        };
        let nodes = mlp(&mut b, x, &net)?;
        let out = if spec.boundary {
            let xs = if spec.spatial_len() == spec.input {
                x
            } else {
                b.slice(x, 0, spec.spatial_len())
            };
            let sq = b.dot(xs, xs);
            let factor = b.scale(sq, -1.0);
            let factor = b.add_scalar(factor, 1.0);
            b.hadamard(factor, nodes.output)
        } else {
            nodes.output
        };
        let graph = b.finish(&[out])?;
        let params = nodes.init(&graph, &mut ChaCha8Rng::seed_from_u64(seed), 0.0);
        Ok(Self {
            spec,
            graph,
            params,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: Vec<f64>) -> Result<()> {
        if params.len() != self.graph.param_len() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                self.graph.param_len(),
                params.len()
            )));
        }
        self.params = params;
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Weights feeding the first hidden layer: the shared filter plus the
    /// reduced dense matrix, `(d/B) h + B`, or `d h` without sharing.
    pub fn first_layer_weight_count(&self) -> usize {
        let h = self.spec.width;
        match self.spec.share_block {
            Some(b) => self.spec.input / b * h + b,
            None => self.spec.input * h,
        }
    }

    /// `u_theta(x)`.
    pub fn value(&self, x: &[f64]) -> Result<f64> {
        let mut ev = Evaluator::new(&self.graph);
        ev.forward(&self.graph, &[x], &self.params)?;
        Ok(ev.output(&self.graph, &self.params, 0)[0])
    }

    /// `u_theta` at many points, evaluated in parallel.
    pub fn values(&self, points: &[Vec<f64>]) -> Result<Vec<f64>> {
        points
            .par_chunks(256)
            .map(|chunk| {
                let mut ev = Evaluator::new(&self.graph);
                chunk
                    .iter()
                    .map(|x| {
                        ev.forward(&self.graph, &[x], &self.params)?;
                        Ok(ev.output(&self.graph, &self.params, 0)[0])
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()
            .map(|v| v.concat())
    }
}
