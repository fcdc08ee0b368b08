use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Shape of a fully connected network: `depth` affine layers with relu in
/// between, and optionally a relu after the last one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mlp {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
    pub depth: usize,
    pub final_relu: bool,
}

impl Mlp {
    pub fn new(input: usize, hidden: usize, output: usize, depth: usize, final_relu: bool) -> Result<Self> {
        if depth == 0 || input == 0 || output == 0 || (depth > 1 && hidden == 0) {
            return Err(Error::invalid(format!(
                "MLP needs positive sizes and depth (in {input}, hidden {hidden}, out {output}, depth {depth})"
            )));
        }
        Ok(Self { input, hidden, output, depth, final_relu })
    }

    /// `(fan_in, fan_out)` of each affine layer.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        (0..self.depth)
            .map(|l| {
                let i = if l == 0 { self.input } else { self.hidden };
                let o = if l + 1 == self.depth { self.output } else { self.hidden };
                (i, o)
            })
            .collect()
    }

    /// Number of parameter tensors (a weight and a bias per layer).
    pub fn tensor_count(&self) -> usize {
        2 * self.depth
    }

    /// Parameters in declared order `W0, b0, W1, b1, ...`, drawn uniformly
    /// from `±1/sqrt(fan_in)`.
    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<Tensor> {
        let mut out = Vec::with_capacity(self.tensor_count());
        for (i, o) in self.layer_dims() {
            let bound = 1.0 / (i as f64).sqrt();
            let w = (0..i * o).map(|_| rng.random_range(-bound..bound)).collect();
            let b = (0..o).map(|_| rng.random_range(-bound..bound)).collect();
            out.push(Tensor::new(&[o, i], w).expect("shape"));
            out.push(Tensor::new(&[o], b).expect("shape"));
        }
        out
    }

    pub fn forward(&self, tape: &mut Tape, params: &[Var], x: Var) -> Result<Var> {
        if params.len() != self.tensor_count() {
            return Err(Error::shape(format!("MLP expects {} parameter tensors, got {}", self.tensor_count(), params.len())));
        }
        let mut h = x;
        for l in 0..self.depth {
            h = tape.linear(h, params[2 * l], params[2 * l + 1])?;
            if l + 1 < self.depth || self.final_relu {
                h = tape.relu(h);
            }
        }
        Ok(h)
    }
}
