use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

/// One affine layer `x·W + b` followed by an activation. `weight` is
/// `in_dim × out_dim`, `bias` is `1 × out_dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weight: Tensor,
    pub bias: Tensor,
    pub activation: Activation,
}

impl Layer {
    pub fn in_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.cols()
    }
}

/// Weight initialization for [`MlpParams::init`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// `N(0, 2/fan_in)` for relu layers, `N(0, 1/fan_in)` otherwise.
    He,
    /// `N(0, 1/fan_in)` everywhere.
    LeCun,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    layers: Vec<Layer>,
}

/// Parameter gradients, congruent to the [`MlpParams`] they were computed for.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Values retained by [`forward`] for [`backward`]: the network input followed
/// by every layer's post-activation output.
#[derive(Debug, Clone)]
pub struct Activations {
    values: Vec<Tensor>,
}

impl Activations {
    pub fn input(&self) -> &Tensor {
        &self.values[0]
    }

    pub fn output(&self) -> &Tensor {
        self.values.last().expect("activations are never empty")
    }

    /// Post-activation output of each layer, in order.
    pub fn layer_outputs(&self) -> &[Tensor] {
        &self.values[1..]
    }

    pub fn into_output(mut self) -> Tensor {
        self.values.pop().expect("activations are never empty")
    }
}

impl MlpParams {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("an MLP needs at least one layer".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.shape() != (1, l.out_dim()) {
                return Err(Error::shape(
                    "MlpParams::new bias",
                    format!("(1, {})", l.out_dim()),
                    format!("{:?}", l.bias.shape()),
                ));
            }
            if let Some(next) = layers.get(i + 1) {
                if next.in_dim() != l.out_dim() {
                    return Err(Error::shape(
                        "MlpParams::new chain",
                        l.out_dim(),
                        next.in_dim(),
                    ));
                }
            }
        }
        Ok(MlpParams { layers })
    }

    /// Random network with layer widths `dims[0] → dims[1] → …`; zero biases.
    pub fn init<R: rand::Rng + ?Sized>(
        dims: &[usize],
        activations: &[Activation],
        init: Init,
        rng: &mut R,
    ) -> Result<Self> {
        if dims.len() < 2 || activations.len() != dims.len() - 1 {
            return Err(Error::Config(format!(
                "{} dims need {} activations, got {}",
                dims.len(),
                dims.len().saturating_sub(1),
                activations.len()
            )));
        }
        if dims.contains(&0) {
            return Err(Error::Config("layer widths must be at least 1".into()));
        }
        let layers = dims
            .windows(2)
            .zip(activations)
            .map(|(w, &activation)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let gain = match (init, activation) {
                    (Init::He, Activation::Relu) => 2.0,
                    _ => 1.0,
                };
                let std = (gain / fan_in as f64).sqrt();
                let data = (0..fan_in * fan_out)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(rng);
                        std * z
                    })
                    .collect();
                Layer {
                    weight: Tensor::from_vec(fan_in, fan_out, data).expect("sized above"),
                    bias: Tensor::zeros(1, fan_out),
                    activation,
                }
            })
            .collect();
        MlpParams::new(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().expect("non-empty").out_dim()
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.data().len() + l.bias.data().len())
            .sum()
    }

    /// Flattens all parameters: for each layer, weights (row-major) then bias.
    pub fn to_vector(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        self.write_vector(&mut out);
        out
    }

    pub fn write_vector(&self, out: &mut Vec<f64>) {
        for l in &self.layers {
            out.extend_from_slice(l.weight.data());
            out.extend_from_slice(l.bias.data());
        }
    }

    /// Rebuilds parameters of the same architecture from a flat vector.
    pub fn from_vector(&self, flat: &[f64]) -> Result<Self> {
        if flat.len() != self.num_params() {
            return Err(Error::shape(
                "MlpParams::from_vector",
                self.num_params(),
                flat.len(),
            ));
        }
        let mut out = self.clone();
        let mut offset = 0;
        for l in &mut out.layers {
            for t in [&mut l.weight, &mut l.bias] {
                let n = t.data().len();
                t.data_mut().copy_from_slice(&flat[offset..offset + n]);
                offset += n;
            }
        }
        Ok(out)
    }

    pub fn zero_gradients(&self) -> Gradients {
        Gradients {
            layers: self
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weight: Tensor::zeros(l.in_dim(), l.out_dim()),
                    bias: Tensor::zeros(1, l.out_dim()),
                })
                .collect(),
        }
    }

    fn check_congruent(&self, grads: &Gradients) -> Result<()> {
        let ok = grads.layers.len() == self.layers.len()
            && self.layers.iter().zip(&grads.layers).all(|(l, g)| {
                l.weight.shape() == g.weight.shape() && l.bias.shape() == g.bias.shape()
            });
        if ok {
            Ok(())
        } else {
            Err(Error::Contract(
                "gradients are not congruent to parameters".into(),
            ))
        }
    }
}

impl Gradients {
    pub fn to_vector(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for g in &self.layers {
            out.extend_from_slice(g.weight.data());
            out.extend_from_slice(g.bias.data());
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|g| g.weight.is_finite() && g.bias.is_finite())
    }

    pub fn add_scaled(&mut self, alpha: f64, other: &Gradients) -> Result<()> {
        if self.layers.len() != other.layers.len() {
            return Err(Error::Contract("gradient layer counts differ".into()));
        }
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight.add_scaled(alpha, &b.weight)?;
            a.bias.add_scaled(alpha, &b.bias)?;
        }
        Ok(())
    }
}

/// Runs the network on a batch (one sample per row).
pub fn forward(params: &MlpParams, x: &Tensor) -> Result<Activations> {
    if x.cols() != params.in_dim() {
        return Err(Error::shape("forward input", params.in_dim(), x.cols()));
    }
    let mut values = Vec::with_capacity(params.layers.len() + 1);
    values.push(x.clone());
    for layer in &params.layers {
        let mut z = values.last().expect("seeded").matmul(&layer.weight)?;
        let bias = layer.bias.data();
        for r in 0..z.rows() {
            let row = z.row_mut(r);
            for (v, b) in row.iter_mut().zip(bias) {
                *v += b;
                if layer.activation == Activation::Relu && *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
        values.push(z);
    }
    Ok(Activations { values })
}

/// Gradients of a scalar loss with respect to every parameter, given the loss
/// gradient with respect to the network output.
pub fn backward(
    params: &MlpParams,
    activations: &Activations,
    output_grad: &Tensor,
) -> Result<Gradients> {
    backward_with_input(params, activations, output_grad).map(|(g, _)| g)
}

/// As [`backward`], also returning the gradient with respect to the input so
/// that networks can be chained.
pub fn backward_with_input(
    params: &MlpParams,
    activations: &Activations,
    output_grad: &Tensor,
) -> Result<(Gradients, Tensor)> {
    if activations.values.len() != params.layers.len() + 1 {
        return Err(Error::Contract(
            "activations do not belong to these parameters".into(),
        ));
    }
    if output_grad.shape() != activations.output().shape() {
        return Err(Error::shape(
            "backward output_grad",
            format!("{:?}", activations.output().shape()),
            format!("{:?}", output_grad.shape()),
        ));
    }
    let mut grads = Vec::with_capacity(params.layers.len());
    let mut delta = output_grad.clone();
    for (i, layer) in params.layers.iter().enumerate().rev() {
        if layer.activation == Activation::Relu {
            let out = &activations.values[i + 1];
            for (d, &o) in delta.data_mut().iter_mut().zip(out.data()) {
                if o <= 0.0 {
                    *d = 0.0;
                }
            }
        }
        let input = &activations.values[i];
        let weight = input.t_matmul(&delta)?;
        let bias = delta.sum_rows();
        let next = delta.matmul_t(&layer.weight)?;
        grads.push(LayerGrad { weight, bias });
        delta = next;
    }
    grads.reverse();
    Ok((Gradients { layers: grads }, delta))
}

/// Plain gradient-descent update `p ← p − lr·g`.
pub fn sgd_step(params: &MlpParams, grads: &Gradients, lr: f64) -> Result<MlpParams> {
    let mut out = params.clone();
    sgd_step_in_place(&mut out, grads, lr)?;
    Ok(out)
}

pub fn sgd_step_in_place(params: &mut MlpParams, grads: &Gradients, lr: f64) -> Result<()> {
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(Error::Config(format!(
            "learning rate must be finite and non-negative, got {lr}"
        )));
    }
    params.check_congruent(grads)?;
    if !grads.is_finite() {
        return Err(Error::NumericFault("non-finite gradient entry".into()));
    }
    for (l, g) in params.layers.iter_mut().zip(&grads.layers) {
        l.weight.add_scaled(-lr, &g.weight)?;
        l.bias.add_scaled(-lr, &g.bias)?;
    }
    Ok(())
}

/// Random `rows × cols` matrix with standard normal entries.
pub fn random_normal<R: rand::Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    Tensor::from_vec(rows, cols, data).expect("sized above")
}
