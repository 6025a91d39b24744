//! Fully connected feed-forward networks.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::kernels;
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, x: Tensor) -> Tensor {
        match self {
            Activation::Identity => x,
            Activation::Relu => kernels::relu(&x),
            Activation::Tanh => kernels::tanh(&x),
        }
    }

    fn record(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Identity => x,
            Activation::Relu => tape.relu(x),
            Activation::Tanh => tape.tanh(x),
        }
    }
}

/// One affine layer: `weight` is `[out, in]`, `bias` is `[out]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    layers: Vec<Layer>,
    hidden_activation: Activation,
    output_activation: Activation,
}

/// Parameter handles of one network recorded on a tape.
#[derive(Clone, Debug)]
pub struct MlpVars {
    pub layers: Vec<(Var, Var)>,
}

impl MlpVars {
    /// Pulls this network's parameter gradients out of a finished sweep, in
    /// `params()` order.
    pub fn grads(&self, grads: &super::Gradients) -> Vec<Tensor> {
        self.layers
            .iter()
            .flat_map(|(w, b)| [grads.get(*w), grads.get(*b)])
            .collect()
    }
}

impl Mlp {
    /// Randomly initialised network, weights and biases uniform in
    /// `±1/√fan_in`.
    pub fn new<R: Rng + ?Sized>(
        layer_sizes: &[usize],
        hidden_activation: Activation,
        output_activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        check_sizes(layer_sizes)?;
        let layers = layer_sizes
            .windows(2)
            .map(|w| {
                let (inp, out) = (w[0], w[1]);
                let bound = 1.0 / (inp as f64).sqrt();
                let weight = (0..inp * out)
                    .map(|_| rng.random_range(-bound..bound))
                    .collect();
                let bias = (0..out).map(|_| rng.random_range(-bound..bound)).collect();
                Layer {
                    weight: Tensor::from_parts(vec![out, inp], weight),
                    bias: Tensor::from_parts(vec![out], bias),
                }
            })
            .collect();
        Ok(Self {
            layers,
            hidden_activation,
            output_activation,
        })
    }

    /// Network with every parameter zero.
    pub fn zeros(
        layer_sizes: &[usize],
        hidden_activation: Activation,
        output_activation: Activation,
    ) -> Result<Self> {
        check_sizes(layer_sizes)?;
        let layers = layer_sizes
            .windows(2)
            .map(|w| Layer {
                weight: Tensor::zeros(&[w[1], w[0]]),
                bias: Tensor::zeros(&[w[1]]),
            })
            .collect();
        Ok(Self {
            layers,
            hidden_activation,
            output_activation,
        })
    }

    /// Assembles a network from explicit layers.
    pub fn from_layers(
        layers: Vec<Layer>,
        hidden_activation: Activation,
        output_activation: Activation,
    ) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Shape("network needs at least one layer".into()));
        }
        for (k, l) in layers.iter().enumerate() {
            if l.weight.shape().len() != 2 || l.bias.len() != l.weight.rows() {
                return Err(Error::Shape(format!(
                    "layer {k}: weight {:?} with bias {:?}",
                    l.weight.shape(),
                    l.bias.shape()
                )));
            }
            if k > 0 && layers[k - 1].weight.rows() != l.weight.cols() {
                return Err(Error::Shape(format!(
                    "layer {k} expects {} inputs but layer {} yields {}",
                    l.weight.cols(),
                    k - 1,
                    layers[k - 1].weight.rows()
                )));
            }
        }
        Ok(Self {
            layers,
            hidden_activation,
            output_activation,
        })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn hidden_activation(&self) -> Activation {
        self.hidden_activation
    }

    pub fn output_activation(&self) -> Activation {
        self.output_activation
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.input_dim()];
        sizes.extend(self.layers.iter().map(|l| l.weight.rows()));
        sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers
            .last()
            .expect("at least one layer")
            .weight
            .rows()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    /// Parameters as `[w0, b0, w1, b1, ...]`.
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

    pub fn same_architecture(&self, other: &Mlp) -> bool {
        self.layer_sizes() == other.layer_sizes()
            && self.hidden_activation == other.hidden_activation
            && self.output_activation == other.output_activation
    }

    fn check_input(&self, input: &Tensor) -> Result<()> {
        if input.cols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "network expects {} inputs per row, got {} (input shape {:?})",
                self.input_dim(),
                input.cols(),
                input.shape()
            )));
        }
        Ok(())
    }

    /// Untaped forward pass. Input rows are independent samples; a rank-1
    /// input yields a rank-1 output.
    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        self.check_input(input)?;
        let last = self.layers.len() - 1;
        let mut h = input.as_matrix();
        for (k, layer) in self.layers.iter().enumerate() {
            h = kernels::affine(&h, &layer.weight, &layer.bias);
            let act = if k == last {
                self.output_activation
            } else {
                self.hidden_activation
            };
            h = act.apply(h);
        }
        if input.shape().len() == 1 {
            h = h.flatten();
        }
        Ok(h)
    }

    /// Registers the parameters as tape leaves.
    pub fn register(&self, tape: &mut Tape) -> MlpVars {
        MlpVars {
            layers: self
                .layers
                .iter()
                .map(|l| (tape.leaf(l.weight.clone()), tape.leaf(l.bias.clone())))
                .collect(),
        }
    }

    /// Taped forward pass using previously registered parameters.
    pub fn record_with(&self, tape: &mut Tape, vars: &MlpVars, input: Var) -> Result<Var> {
        self.check_input(tape.value(input))?;
        let last = self.layers.len() - 1;
        let mut h = input;
        for (k, (w, b)) in vars.layers.iter().enumerate() {
            h = tape.affine(h, *w, *b)?;
            let act = if k == last {
                self.output_activation
            } else {
                self.hidden_activation
            };
            h = act.record(tape, h);
        }
        Ok(h)
    }

    /// Registers parameters and records a forward pass.
    pub fn record(&self, tape: &mut Tape, input: Var) -> Result<(Var, MlpVars)> {
        let vars = self.register(tape);
        let out = self.record_with(tape, &vars, input)?;
        Ok((out, vars))
    }

    /// Forward pass with its own tape, ready for exactly one backward pass.
    pub fn forward_traced(&self, input: &Tensor) -> Result<(Tensor, MlpTrace)> {
        let mut tape = Tape::new();
        let x = tape.leaf(input.as_matrix());
        let (out, vars) = self.record(&mut tape, x)?;
        let mut value = tape.value(out).clone();
        if input.shape().len() == 1 {
            value = value.flatten();
        }
        Ok((
            value,
            MlpTrace {
                tape,
                input: x,
                output: out,
                vars,
            },
        ))
    }

    /// `self ← (1 − tau)·self + tau·online`, elementwise.
    pub fn soft_update_from(&mut self, online: &Mlp, tau: f64) -> Result<()> {
        if !self.same_architecture(online) {
            return Err(Error::Shape(format!(
                "soft update between {:?} and {:?}",
                self.layer_sizes(),
                online.layer_sizes()
            )));
        }
        if !(0.0..=1.0).contains(&tau) {
            return Err(Error::InvalidArgument(format!("tau {tau} outside [0, 1]")));
        }
        for (t, o) in self.params_mut().into_iter().zip(online.params()) {
            for (tv, ov) in t.data_mut().iter_mut().zip(o.data()) {
                *tv = (1.0 - tau) * *tv + tau * ov;
            }
        }
        Ok(())
    }
}

/// Free-function form of [`Mlp::soft_update_from`].
pub fn soft_update(target: &mut Mlp, online: &Mlp, tau: f64) -> Result<()> {
    target.soft_update_from(online, tau)
}

fn check_sizes(sizes: &[usize]) -> Result<()> {
    if sizes.len() < 2 || sizes.iter().any(|&s| s == 0) {
        return Err(Error::Shape(format!("invalid layer sizes {sizes:?}")));
    }
    Ok(())
}

/// Gradients of one layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrads {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// A recorded single-network forward pass.
#[derive(Debug)]
pub struct MlpTrace {
    tape: Tape,
    input: Var,
    output: Var,
    vars: MlpVars,
}

impl MlpTrace {
    /// Gradients of `Σ output ⊙ output_gradient` with respect to every
    /// parameter and to the input.
    pub fn backward(&mut self, output_gradient: &Tensor) -> Result<(Vec<LayerGrads>, Tensor)> {
        let seed = output_gradient.as_matrix();
        let grads = self.tape.backward(self.output, &seed)?;
        let layers = self
            .vars
            .layers
            .iter()
            .map(|(w, b)| LayerGrads {
                weight: grads.get(*w),
                bias: grads.get(*b),
            })
            .collect();
        let mut input_grad = grads.get(self.input);
        if output_gradient.shape().len() == 1 && input_grad.rows() == 1 {
            input_grad = input_grad.flatten();
        }
        Ok((layers, input_grad))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn single_layer(weight: Vec<f64>, rows: usize, cols: usize, bias: Vec<f64>) -> Mlp {
        Mlp::from_layers(
            vec![Layer {
                weight: Tensor::matrix(rows, cols, weight).unwrap(),
                bias: Tensor::vector(bias).unwrap(),
            }],
            Activation::Relu,
            Activation::Identity,
        )
        .unwrap()
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let net = single_layer(vec![1.0, 0.0, 0.0, 1.0], 2, 2, vec![0.0, 0.0]);
        let y = net
            .forward(&Tensor::vector(vec![1.0, 2.0]).unwrap())
            .unwrap();
        assert_eq!(y.data(), &[1.0, 2.0]);
    }

    #[test]
    fn zero_weights_yield_bias() {
        let net = single_layer(vec![0.0, 0.0, 0.0], 1, 3, vec![0.5]);
        let y = net
            .forward(&Tensor::vector(vec![3.0, -1.0, 7.0]).unwrap())
            .unwrap();
        assert_eq!(y.data(), &[0.5]);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let net = single_layer(vec![1.0, 0.0, 0.0, 1.0], 2, 2, vec![0.0, 0.0]);
        let err = net
            .forward(&Tensor::vector(vec![1.0, 2.0, 3.0]).unwrap())
            .unwrap_err();
        assert!(err.to_string().contains("expects 2 inputs"), "{err}");
    }

    #[test]
    fn parameter_count_matches_layer_sizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = Mlp::new(
            &[16, 64, 64, 2],
            Activation::Relu,
            Activation::Tanh,
            &mut rng,
        )
        .unwrap();
        assert_eq!(net.param_count(), 16 * 64 + 64 + 64 * 64 + 64 + 64 * 2 + 2);
        assert_eq!(net.layer_sizes(), vec![16, 64, 64, 2]);
    }

    #[test]
    fn init_respects_fan_in_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Mlp::new(&[9, 5, 3], Activation::Tanh, Activation::Identity, &mut rng).unwrap();
        let b0 = 1.0 / 3.0;
        assert!(net.layers()[0].weight.data().iter().all(|v| v.abs() <= b0));
        let b1 = 1.0 / 5f64.sqrt();
        assert!(net.layers()[1].bias.data().iter().all(|v| v.abs() <= b1));
    }

    #[test]
    fn linear_input_gradient_is_weight_row() {
        let net = single_layer(vec![0.3, -1.2, 2.5], 1, 3, vec![0.1]);
        let (_, mut trace) = net
            .forward_traced(&Tensor::vector(vec![1.0, 2.0, 3.0]).unwrap())
            .unwrap();
        let (_, dx) = trace.backward(&Tensor::vector(vec![1.0]).unwrap()).unwrap();
        assert_eq!(dx.data(), &[0.3, -1.2, 2.5]);
    }

    #[test]
    fn constant_network_has_zero_gradients() {
        let net = Mlp::zeros(&[3, 4, 2], Activation::Relu, Activation::Identity).unwrap();
        let (_, mut trace) = net
            .forward_traced(&Tensor::vector(vec![0.2, -0.4, 0.9]).unwrap())
            .unwrap();
        let (layers, dx) = trace
            .backward(&Tensor::vector(vec![1.0, 1.0]).unwrap())
            .unwrap();
        assert!(dx.data().iter().all(|&v| v == 0.0));
        // The last bias still receives the output gradient directly.
        assert_eq!(layers[1].bias.data(), &[1.0, 1.0]);
        assert!(layers[0].weight.data().iter().all(|&v| v == 0.0));
        assert!(layers[1].weight.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn trace_is_single_use() {
        let net = single_layer(vec![1.0], 1, 1, vec![0.0]);
        let (_, mut trace) = net
            .forward_traced(&Tensor::vector(vec![1.0]).unwrap())
            .unwrap();
        let g = Tensor::vector(vec![1.0]).unwrap();
        trace.backward(&g).unwrap();
        assert!(matches!(trace.backward(&g), Err(Error::TapeConsumed)));
    }

    #[test]
    fn taped_and_plain_forward_agree_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = Mlp::new(&[4, 8, 8, 3], Activation::Relu, Activation::Tanh, &mut rng).unwrap();
        let x = Tensor::matrix(2, 4, vec![0.1, -0.2, 0.3, 0.9, -1.0, 0.5, 0.0, 0.25]).unwrap();
        let (traced, _) = net.forward_traced(&x).unwrap();
        assert!(traced.bit_eq(&net.forward(&x).unwrap()));
    }

    #[test]
    fn soft_update_cases() {
        let online = single_layer(vec![2.0], 1, 1, vec![2.0]);
        let mut target = single_layer(vec![0.0], 1, 1, vec![0.0]);
        target.soft_update_from(&online, 0.5).unwrap();
        assert_eq!(target.layers()[0].weight.data(), &[1.0]);

        let before = target.clone();
        target.soft_update_from(&online, 0.0).unwrap();
        assert_eq!(target, before);

        target.soft_update_from(&online, 1.0).unwrap();
        assert_eq!(target, online);

        let other = single_layer(vec![1.0, 1.0], 1, 2, vec![0.0]);
        assert!(target.soft_update_from(&other, 0.5).is_err());
    }
}
