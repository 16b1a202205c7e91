//! Fully connected layers and a small MLP with explicit backprop.

use ndarray::{Array1, Array2, ArrayD, ArrayViewD, ArrayViewMutD, Axis};
use rand::Rng;

use super::{he_normal, standard_normal, xavier_uniform, Activation};

/// One affine layer `y = x W^T + b` with `W` stored `(out, in)`.
#[derive(Debug, Clone)]
pub struct Dense {
    pub weight: Array2<f32>,
    pub bias: Array1<f32>,
}

/// Parameter gradients of one dense layer.
#[derive(Debug, Clone)]
pub struct DenseGrad {
    pub weight: Array2<f32>,
    pub bias: Array1<f32>,
}

impl Dense {
    pub fn new<R: Rng>(inputs: usize, outputs: usize, act: Activation, rng: &mut R) -> Self {
        let weight = match act {
            Activation::Relu | Activation::Identity => he_normal(outputs, inputs, rng),
            Activation::Sigmoid | Activation::Tanh => xavier_uniform(outputs, inputs, rng),
        };
        Self { weight, bias: Array1::zeros(outputs) }
    }

    pub fn inputs(&self) -> usize {
        self.weight.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.nrows()
    }

    /// `x` is `(batch, in)`; returns `(batch, out)`.
    pub fn forward(&self, x: &Array2<f32>) -> Array2<f32> {
        x.dot(&self.weight.t()) + &self.bias
    }

    /// Backprop given the layer input and the output gradient.
    pub fn backward(&self, x: &Array2<f32>, dy: &Array2<f32>) -> (Array2<f32>, DenseGrad) {
        let dx = dy.dot(&self.weight);
        let dw = dy.t().dot(x);
        let db = dy.sum_axis(Axis(0));
        (dx, DenseGrad { weight: dw, bias: db })
    }
}

/// A feedforward stack: hidden layers share one activation, the output layer
/// has its own (often `Identity` for value heads, `Tanh` for actors).
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
}

/// Cached forward pass: the input and each layer's post-activation output.
#[derive(Debug, Clone)]
pub struct MlpTrace {
    /// `activations[0]` is the input; `activations[i+1]` is layer i's output
    /// after its activation.
    pub activations: Vec<Array2<f32>>,
}

impl MlpTrace {
    pub fn output(&self) -> &Array2<f32> {
        self.activations.last().expect("trace holds at least the input")
    }
}

impl Mlp {
    pub fn new<R: Rng>(
        inputs: usize,
        hidden: &[usize],
        outputs: usize,
        hidden_activation: Activation,
        output_activation: Activation,
        rng: &mut R,
    ) -> Self {
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut fan_in = inputs;
        for &width in hidden {
            layers.push(Dense::new(fan_in, width, hidden_activation, rng));
            fan_in = width;
        }
        layers.push(Dense::new(fan_in, outputs, output_activation, rng));
        Self { layers, hidden_activation, output_activation }
    }

    pub fn inputs(&self) -> usize {
        self.layers.first().expect("non-empty").inputs()
    }

    pub fn outputs(&self) -> usize {
        self.layers.last().expect("non-empty").outputs()
    }

    pub fn forward(&self, x: &Array2<f32>) -> Array2<f32> {
        self.forward_trace(x).activations.pop().expect("non-empty")
    }

    pub fn forward_trace(&self, x: &Array2<f32>) -> MlpTrace {
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x.clone());
        for (i, layer) in self.layers.iter().enumerate() {
            let act = if i + 1 == self.layers.len() {
                self.output_activation
            } else {
                self.hidden_activation
            };
            let mut y = layer.forward(activations.last().unwrap());
            y.mapv_inplace(|v| act.apply(v));
            activations.push(y);
        }
        MlpTrace { activations }
    }

    /// Backprop `dy` (gradient at the network output, post-activation) to
    /// the input. Returns the input gradient and per-layer gradients in
    /// `params_mut` order.
    pub fn backward(&self, trace: &MlpTrace, dy: &Array2<f32>) -> (Array2<f32>, Vec<DenseGrad>) {
        let mut grads: Vec<Option<DenseGrad>> = vec![None; self.layers.len()];
        let mut delta = dy.clone();
        for i in (0..self.layers.len()).rev() {
            let act = if i + 1 == self.layers.len() {
                self.output_activation
            } else {
                self.hidden_activation
            };
            let output = &trace.activations[i + 1];
            delta.zip_mut_with(output, |d, &y| *d *= act.derivative_from_output(y));
            let (dx, grad) = self.layers[i].backward(&trace.activations[i], &delta);
            grads[i] = Some(grad);
            delta = dx;
        }
        (delta, grads.into_iter().map(|g| g.expect("filled")).collect())
    }

    pub fn params_mut(&mut self) -> Vec<ArrayViewMutD<'_, f32>> {
        self.layers
            .iter_mut()
            .flat_map(|l| {
                [l.weight.view_mut().into_dyn(), l.bias.view_mut().into_dyn()]
            })
            .collect()
    }

    pub fn params(&self) -> Vec<ArrayViewD<'_, f32>> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.view().into_dyn(), l.bias.view().into_dyn()])
            .collect()
    }

    /// Flatten per-layer gradients into `params_mut` order.
    pub fn flatten_grads(grads: Vec<DenseGrad>) -> Vec<ArrayD<f32>> {
        grads
            .into_iter()
            .flat_map(|g| [g.weight.into_dyn(), g.bias.into_dyn()])
            .collect()
    }

    /// Named parameters for checkpointing, `prefix.layerN.{weight,bias}`.
    pub fn named_params(&self, prefix: &str) -> Vec<(String, ArrayViewD<'_, f32>)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| {
                [
                    (format!("{prefix}.layer{i}.weight"), l.weight.view().into_dyn()),
                    (format!("{prefix}.layer{i}.bias"), l.bias.view().into_dyn()),
                ]
            })
            .collect()
    }

    /// Mutable counterpart of [`Mlp::named_params`], same order.
    pub fn named_params_mut(&mut self, prefix: &str) -> Vec<(String, ArrayViewMutD<'_, f32>)> {
        self.layers
            .iter_mut()
            .enumerate()
            .flat_map(|(i, l)| {
                [
                    (format!("{prefix}.layer{i}.weight"), l.weight.view_mut().into_dyn()),
                    (format!("{prefix}.layer{i}.bias"), l.bias.view_mut().into_dyn()),
                ]
            })
            .collect()
    }
}

/// Gaussian-perturbed copy of an MLP, used by tests that need two networks
/// that disagree.
pub fn perturbed<R: Rng>(net: &Mlp, scale: f32, rng: &mut R) -> Mlp {
    let mut out = net.clone();
    for layer in &mut out.layers {
        layer.weight.mapv_inplace(|w| w + standard_normal(rng) * scale);
        layer.bias.mapv_inplace(|b| b + standard_normal(rng) * scale);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Central-difference gradient check on the scalar loss L = sum(y^2)/2,
    /// probing a handful of weights and biases in every layer.
    #[test]
    fn mlp_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut net = Mlp::new(3, &[5, 4], 2, Activation::Tanh, Activation::Identity, &mut rng);
        let x = array![[0.3f32, -0.7, 1.1], [0.9, 0.2, -0.4]];

        let loss = |net: &Mlp| -> f32 {
            let y = net.forward(&x);
            0.5 * y.iter().map(|v| v * v).sum::<f32>()
        };

        let trace = net.forward_trace(&x);
        let y = trace.output().clone();
        let (_, grads) = net.backward(&trace, &y); // dL/dy = y

        let eps = 1e-2f32;
        for li in 0..net.layers.len() {
            let probes = [(0usize, 0usize), (1, 1)];
            for &(r, c) in &probes {
                if r >= net.layers[li].weight.nrows() || c >= net.layers[li].weight.ncols() {
                    continue;
                }
                let orig = net.layers[li].weight[[r, c]];
                net.layers[li].weight[[r, c]] = orig + eps;
                let plus = loss(&net);
                net.layers[li].weight[[r, c]] = orig - eps;
                let minus = loss(&net);
                net.layers[li].weight[[r, c]] = orig;
                let numeric = (plus - minus) / (2.0 * eps);
                let analytic = grads[li].weight[[r, c]];
                assert!(
                    (analytic - numeric).abs() <= 3e-2 * numeric.abs().max(0.2),
                    "layer {li} w[{r},{c}]: analytic {analytic} vs numeric {numeric}"
                );
            }
            let orig = net.layers[li].bias[0];
            net.layers[li].bias[0] = orig + eps;
            let plus = loss(&net);
            net.layers[li].bias[0] = orig - eps;
            let minus = loss(&net);
            net.layers[li].bias[0] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let analytic = grads[li].bias[0];
            assert!(
                (analytic - numeric).abs() <= 3e-2 * numeric.abs().max(0.2),
                "layer {li} bias[0]: analytic {analytic} vs numeric {numeric}"
            );
        }
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = Mlp::new(3, &[6], 1, Activation::Sigmoid, Activation::Identity, &mut rng);
        let x = array![[0.2f32, 0.5, -0.3]];
        let trace = net.forward_trace(&x);
        let dy = Array2::ones((1, 1));
        let (dx, _) = net.backward(&trace, &dy);

        let eps = 1e-2f32;
        for j in 0..3 {
            let mut xp = x.clone();
            xp[[0, j]] += eps;
            let mut xm = x.clone();
            xm[[0, j]] -= eps;
            let numeric = (net.forward(&xp)[[0, 0]] - net.forward(&xm)[[0, 0]]) / (2.0 * eps);
            assert!(
                (dx[[0, j]] - numeric).abs() <= 2e-2 * numeric.abs().max(0.1),
                "dx[{j}] analytic {} vs numeric {}",
                dx[[0, j]],
                numeric
            );
        }
    }

    #[test]
    fn shapes_are_as_documented() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = Mlp::new(7, &[64, 128, 64], 5, Activation::Relu, Activation::Identity, &mut rng);
        assert_eq!(net.inputs(), 7);
        assert_eq!(net.outputs(), 5);
        let y = net.forward(&Array2::zeros((4, 7)));
        assert_eq!(y.shape(), &[4, 5]);
        assert_eq!(net.params().len(), 8);
    }
}
