//! Fully-connected networks.

use rand::Rng;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Output activation of an [`Mlp`]. Hidden layers are always ReLU.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Sigmoid,
    Softmax,
}

impl Activation {
    pub fn tag(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Sigmoid => "sigmoid",
            Activation::Softmax => "softmax",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        match tag {
            "identity" => Ok(Activation::Identity),
            "sigmoid" => Ok(Activation::Sigmoid),
            "softmax" => Ok(Activation::Softmax),
            other => Err(Error::format(format!("unknown activation tag {other:?}"))),
        }
    }
}

/// One affine layer, `y = x · weight + bias` with `weight: [in, out]` and
/// `bias: [1, out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Layer>,
    output: Activation,
}

/// Handles produced by [`Mlp::forward`].
#[derive(Debug, Clone)]
pub struct MlpVars {
    /// Final pre-activation.
    pub logits: Var,
    /// After the output activation.
    pub output: Var,
    /// `[w0, b0, w1, b1, ...]` in layer order.
    pub params: Vec<Var>,
}

impl Mlp {
    /// Network with layer widths `sizes = [in, h1, ..., out]`.
    ///
    /// Weights are drawn from `U(-√(6/fan_in), √(6/fan_in))`, biases are zero.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], output: Activation, rng: &mut R) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::shape(format!("invalid layer sizes {sizes:?}")));
        }
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = (6.0 / fan_in as f64).sqrt();
                let data = (0..fan_in * fan_out)
                    .map(|_| rng.gen_range(-bound..bound))
                    .collect();
                Layer {
                    weight: Tensor::matrix(fan_in, fan_out, data).expect("sized"),
                    bias: Tensor::zeros(&[1, fan_out]),
                }
            })
            .collect();
        Ok(Mlp { layers, output })
    }

    pub fn from_layers(layers: Vec<Layer>, output: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::shape("an MLP needs at least one layer"));
        }
        for (i, l) in layers.iter().enumerate() {
            let out = l.weight.cols();
            if !l.weight.is_matrix() || l.bias.shape() != [1, out] {
                return Err(Error::shape(format!(
                    "layer {i}: weight {:?} / bias {:?}",
                    l.weight.shape(),
                    l.bias.shape()
                )));
            }
            if let Some(next) = layers.get(i + 1) {
                if next.weight.rows() != out {
                    return Err(Error::shape(format!(
                        "layer {i} emits {out} but layer {} expects {}",
                        i + 1,
                        next.weight.rows()
                    )));
                }
            }
        }
        Ok(Mlp { layers, output })
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].weight.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].weight.cols()
    }

    pub fn output_activation(&self) -> Activation {
        self.output
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    /// Parameters in the same order as [`MlpVars::params`].
    pub fn params(&self) -> Vec<&Tensor> {
        self.layers
            .iter()
            .flat_map(|l| [&l.weight, &l.bias])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    /// `("layer{i}.weight", w)`, `("layer{i}.bias", b)` pairs.
    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| {
                [
                    (format!("layer{i}.weight"), &l.weight),
                    (format!("layer{i}.bias"), &l.bias),
                ]
            })
            .collect()
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if !x.is_matrix() || x.cols() != self.in_dim() {
            return Err(Error::shape(format!(
                "network expects [n, {}], got {:?}",
                self.in_dim(),
                x.shape()
            )));
        }
        Ok(())
    }

    /// Record a forward pass on `g`. Parameters become fresh leaves.
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<MlpVars> {
        self.check_input(g.value(x))?;
        let mut params = Vec::with_capacity(self.layers.len() * 2);
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let w = g.leaf(layer.weight.clone());
            let b = g.leaf(layer.bias.clone());
            params.push(w);
            params.push(b);
            let z = g.matmul(h, w)?;
            h = g.add_row(z, b)?;
            if i < last {
                h = g.relu(h)?;
            }
        }
        let logits = h;
        let output = match self.output {
            Activation::Identity => logits,
            Activation::Sigmoid => g.sigmoid(logits)?,
            Activation::Softmax => {
                let lp = g.log_softmax(logits)?;
                g.exp(lp)?
            }
        };
        Ok(MlpVars {
            logits,
            output,
            params,
        })
    }

    /// Forward pass on a fresh tape.
    pub fn forward_taped(&self, x: &Tensor) -> Result<(Graph, MlpVars)> {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let vars = self.forward(&mut g, xv)?;
        Ok((g, vars))
    }

    /// Pre-activation output without recording a tape.
    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let last = self.layers.len() - 1;
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = h.matmul(&layer.weight)?;
            let c = z.cols();
            let relu = i < last;
            for (k, v) in z.data_mut().iter_mut().enumerate() {
                *v += layer.bias.data()[k % c];
                if relu && *v < 0.0 {
                    *v = 0.0;
                }
            }
            h = z;
        }
        Ok(h)
    }

    /// Batched inference without a tape; agrees with [`Mlp::forward`].
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        let z = self.logits(x)?;
        Ok(match self.output {
            Activation::Identity => z,
            Activation::Sigmoid => {
                let mut g = Graph::new();
                let zv = g.constant(z);
                let s = g.sigmoid(zv)?;
                g.value(s).clone()
            }
            Activation::Softmax => softmax_rows(&z),
        })
    }

    pub fn predict_one(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.predict(&Tensor::row(x.to_vec()))?.into_data())
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(z: &Tensor) -> Tensor {
    let c = z.cols();
    let mut out = Vec::with_capacity(z.len());
    for r in 0..z.rows() {
        let row = z.row_slice(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        out.extend(row.iter().map(|x| (x - lse).exp()));
    }
    Tensor::matrix(z.rows(), c, out).expect("softmax shape")
}
