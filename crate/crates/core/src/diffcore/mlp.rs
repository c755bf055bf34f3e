//! Fully connected networks with ReLU (or sigmoid) activations, optional input skip
//! connections, and inverted dropout.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::graph::{Gradients, Graph, Var};
use super::tensor::Tensor;
use crate::error::{invalid, shape_err, Result};
use crate::seed::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    /// Smooth alternative, used where differentiability matters.
    Sigmoid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub input_dim: usize,
    pub hidden: usize,
    /// Number of linear layers, output layer included.
    pub layers: usize,
    pub output_dim: usize,
    /// Concatenate the network input onto the input of every layer after
    /// the first.
    pub skip: bool,
    pub dropout: f64,
    pub activation: Activation,
}

impl MlpConfig {
    pub fn new(input_dim: usize, hidden: usize, layers: usize, output_dim: usize) -> Self {
        Self {
            input_dim,
            hidden,
            layers,
            output_dim,
            skip: true,
            dropout: 0.0,
            activation: Activation::Relu,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.layers == 0 {
            return invalid(format!("degenerate mlp config {self:?}"));
        }
        if self.layers > 1 && self.hidden == 0 {
            return invalid("hidden width must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return invalid(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of each layer.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        (0..self.layers)
            .map(|i| {
                let fan_in = match (i, self.skip) {
                    (0, _) => self.input_dim,
                    (_, true) => self.hidden + self.input_dim,
                    (_, false) => self.hidden,
                };
                let fan_out = if i + 1 == self.layers { self.output_dim } else { self.hidden };
                (fan_in, fan_out)
            })
            .collect()
    }
}

/// Affine layer `y = x·W + b` with `W: [fan_in, fan_out]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn new(weight: Tensor, bias: Tensor) -> Result<Self> {
        let ws = weight.shape();
        if ws.len() != 2 || bias.shape() != [ws[1]] {
            return shape_err(format!("linear weight {ws:?} with bias {:?}", bias.shape()));
        }
        Ok(Self { weight, bias })
    }

    /// Uniform in `±1/sqrt(fan_in)` for weights and biases.
    pub fn uniform(fan_in: usize, fan_out: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-bound..bound)).collect() };
        let w = draw(fan_in * fan_out);
        let b = draw(fan_out);
        Self {
            weight: Tensor::from_parts(vec![fan_in, fan_out], w),
            bias: Tensor::from_parts(vec![fan_out], b),
        }
    }

    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self { weight: Tensor::zeros(&[fan_in, fan_out]), bias: Tensor::zeros(&[fan_out]) }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn fan_out(&self) -> usize {
        self.weight.shape()[1]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    config: MlpConfig,
    layers: Vec<Linear>,
}

/// Graph handles for one bound copy of an [`Mlp`]'s parameters.
#[derive(Clone, Debug)]
pub struct MlpVars {
    layers: Vec<(Var, Var)>,
}

impl Mlp {
    pub fn new(config: MlpConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let layers = config.layer_dims().into_iter().map(|(i, o)| Linear::uniform(i, o, rng)).collect();
        Ok(Self { config, layers })
    }

    pub fn zeros(config: MlpConfig) -> Result<Self> {
        config.validate()?;
        let layers = config.layer_dims().into_iter().map(|(i, o)| Linear::zeros(i, o)).collect();
        Ok(Self { config, layers })
    }

    /// Wraps explicit layers; their dimensions must agree with `config`.
    pub fn from_layers(config: MlpConfig, layers: Vec<Linear>) -> Result<Self> {
        config.validate()?;
        let dims = config.layer_dims();
        if dims.len() != layers.len() {
            return shape_err(format!("config wants {} layers, got {}", dims.len(), layers.len()));
        }
        for (i, ((fi, fo), l)) in dims.iter().zip(&layers).enumerate() {
            if (l.fan_in(), l.fan_out()) != (*fi, *fo) {
                return shape_err(format!(
                    "layer {i} is {}x{}, config wants {fi}x{fo}",
                    l.fan_in(),
                    l.fan_out()
                ));
            }
        }
        Ok(Self { config, layers })
    }

    pub fn config(&self) -> &MlpConfig {
        &self.config
    }

    pub fn layers(&self) -> &[Linear] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.config.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.config.output_dim
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias]).collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    /// Places the parameters on `g` as trainable leaves.
    pub fn bind(&self, g: &mut Graph) -> MlpVars {
        MlpVars { layers: self.layers.iter().map(|l| (g.param(&l.weight), g.param(&l.bias))).collect() }
    }

    /// Places the parameters on `g` as constants.
    pub fn bind_frozen(&self, g: &mut Graph) -> MlpVars {
        MlpVars {
            layers: self
                .layers
                .iter()
                .map(|l| (g.input(l.weight.clone()), g.input(l.bias.clone())))
                .collect(),
        }
    }

    /// Eval-mode forward of a `[batch, input_dim]` matrix.
    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let vars = self.bind_frozen(&mut g);
        let x = g.input(input.clone());
        let y = vars.forward(&mut g, &self.config, x, None)?;
        let out = g.value(y).clone();
        if !out.all_finite() {
            return Err(crate::Error::NonFinite("mlp output".into()));
        }
        Ok(out)
    }
}

impl MlpVars {
    /// Records the forward pass. Dropout on hidden activations is active
    /// only when `train_rng` is given.
    pub fn forward(
        &self,
        g: &mut Graph,
        config: &MlpConfig,
        input: Var,
        mut train_rng: Option<&mut Rng>,
    ) -> Result<Var> {
        let shape = g.value(input).shape();
        if shape.len() != 2 || shape[1] != config.input_dim {
            return shape_err(format!(
                "mlp expects [batch, {}] input, got {shape:?}",
                config.input_dim
            ));
        }
        let mut h = input;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            let layer_in = if i > 0 && config.skip { g.concat(h, input)? } else { h };
            let z = g.matmul(layer_in, w)?;
            let z = g.add_bias(z, b)?;
            if i + 1 == self.layers.len() {
                return Ok(z);
            }
            h = match config.activation {
                Activation::Relu => g.relu(z),
                Activation::Sigmoid => g.sigmoid(z),
            };
            if let (Some(rng), p) = (train_rng.as_deref_mut(), config.dropout) {
                if p > 0.0 {
                    let keep = 1.0 / (1.0 - p);
                    let mask = (0..g.value(h).len())
                        .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
                        .collect();
                    h = g.scale(h, mask)?;
                }
            }
        }
        unreachable!("validated configs have at least one layer")
    }

    /// Parameter gradients in [`Mlp::params`] order.
    pub fn grads(&self, grads: &Gradients, mlp: &Mlp) -> Vec<Tensor> {
        self.layers
            .iter()
            .zip(&mlp.layers)
            .flat_map(|(&(w, b), l)| [grads.get_or_zeros(w, &l.weight), grads.get_or_zeros(b, &l.bias)])
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn zero_params_give_zero_output() {
        let mlp = Mlp::zeros(MlpConfig::new(3, 8, 4, 2)).unwrap();
        let x = Tensor::new(vec![2, 3], vec![1.0, -2.0, 3.0, 0.5, 0.1, 9.0]).unwrap();
        let y = mlp.forward(&x).unwrap();
        assert_eq!(y.shape(), &[2, 2]);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_affine_layer() {
        let cfg = MlpConfig::new(1, 0, 1, 1);
        let layer = Linear::new(Tensor::new(vec![1, 1], vec![2.0]).unwrap(), Tensor::new(vec![1], vec![1.0]).unwrap()).unwrap();
        let mlp = Mlp::from_layers(cfg, vec![layer]).unwrap();
        let y = mlp.forward(&Tensor::new(vec![1, 1], vec![3.0]).unwrap()).unwrap();
        assert_eq!(y.data(), &[7.0]);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let mut rng = Rng::seed_from_u64(0);
        let mlp = Mlp::new(MlpConfig::new(3, 4, 2, 1), &mut rng).unwrap();
        let err = mlp.forward(&Tensor::zeros(&[5, 2])).unwrap_err();
        assert!(err.to_string().contains("[batch, 3]"), "{err}");
    }

    #[test]
    fn skip_layers_widen_fan_in() {
        let cfg = MlpConfig::new(16, 100, 4, 1);
        assert_eq!(cfg.layer_dims(), vec![(16, 100), (116, 100), (116, 100), (116, 1)]);
        let plain = MlpConfig { skip: false, ..cfg };
        assert_eq!(plain.layer_dims(), vec![(16, 100), (100, 100), (100, 100), (100, 1)]);
    }

    #[test]
    fn init_respects_fan_in_bound() {
        let mut rng = Rng::seed_from_u64(3);
        let mlp = Mlp::new(MlpConfig::new(9, 25, 3, 1), &mut rng).unwrap();
        for l in mlp.layers() {
            let bound = 1.0 / (l.fan_in() as f64).sqrt();
            assert!(l.weight.max_abs() <= bound && l.bias.max_abs() <= bound);
        }
    }
}
