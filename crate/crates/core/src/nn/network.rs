use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::init::xavier_with_rng;
use super::{ParamMut, Parameterized};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Tanh,
    Sigmoid,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative expressed through the activation's output.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Training,
    Inference,
}

/// Dense layer `y = x W + b` with `W` stored `in x out`, so column `c` of the
/// output layer's weight is the class vector `w_c`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub grad_weight: Array2<f64>,
    pub grad_bias: Array1<f64>,
    input: Option<Array2<f64>>,
}

impl Linear {
    pub fn new(weight: Array2<f64>, bias: Array1<f64>) -> Result<Self> {
        if weight.ncols() != bias.len() {
            return Err(Error::DimensionMismatch {
                expected: weight.ncols(),
                actual: bias.len(),
            });
        }
        Ok(Self {
            grad_weight: Array2::zeros(weight.raw_dim()),
            grad_bias: Array1::zeros(bias.raw_dim()),
            weight,
            bias,
            input: None,
        })
    }

    pub fn xavier(inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        Self::new(xavier_with_rng(inputs, outputs, rng), Array1::zeros(outputs)).expect("shapes agree")
    }

    pub fn inputs(&self) -> usize {
        self.weight.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.weight.ncols()
    }

    fn apply(&self, x: &ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.weight) + &self.bias
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
    pub eps: f64,
    pub momentum: f64,
    pub grad_gamma: Array1<f64>,
    pub grad_beta: Array1<f64>,
    cache: Option<BnCache>,
}

#[derive(Debug, Clone, PartialEq)]
enum BnCache {
    Batch { x_hat: Array2<f64>, inv_std: Array1<f64> },
    Running { x_hat: Array2<f64>, inv_std: Array1<f64> },
}

impl BatchNorm {
    pub const DEFAULT_EPS: f64 = 1e-5;
    pub const DEFAULT_MOMENTUM: f64 = 0.1;

    pub fn new(dim: usize) -> Self {
        Self {
            gamma: Array1::ones(dim),
            beta: Array1::zeros(dim),
            running_mean: Array1::zeros(dim),
            running_var: Array1::ones(dim),
            eps: Self::DEFAULT_EPS,
            momentum: Self::DEFAULT_MOMENTUM,
            grad_gamma: Array1::zeros(dim),
            grad_beta: Array1::zeros(dim),
            cache: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.gamma.len()
    }

    fn apply_running(&self, x: &ArrayView2<f64>) -> Array2<f64> {
        let inv_std = self.running_var.mapv(|v| 1.0 / (v + self.eps).sqrt());
        (x - &self.running_mean) * &(&inv_std * &self.gamma) + &self.beta
    }

    fn forward_running(&mut self, x: &ArrayView2<f64>) -> Array2<f64> {
        let inv_std = self.running_var.mapv(|v| 1.0 / (v + self.eps).sqrt());
        let x_hat = (x - &self.running_mean) * &inv_std;
        let y = &x_hat * &self.gamma + &self.beta;
        self.cache = Some(BnCache::Running { x_hat, inv_std });
        y
    }

    fn forward_batch(&mut self, x: &ArrayView2<f64>) -> Array2<f64> {
        let n = x.nrows() as f64;
        let mean = x.mean_axis(Axis(0)).expect("non-empty batch");
        let centered = x - &mean;
        let var = centered.mapv(|v| v * v).sum_axis(Axis(0)) / n;
        let inv_std = var.mapv(|v| 1.0 / (v + self.eps).sqrt());
        let x_hat = centered * &inv_std;
        let y = &x_hat * &self.gamma + &self.beta;
        let unbiased = if n > 1.0 { &var * (n / (n - 1.0)) } else { var.clone() };
        let m = self.momentum;
        self.running_mean = &self.running_mean * (1.0 - m) + &mean * m;
        self.running_var = &self.running_var * (1.0 - m) + &unbiased * m;
        self.cache = Some(BnCache::Batch { x_hat, inv_std });
        y
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActivationLayer {
    pub kind: Activation,
    pub dim: usize,
    output: Option<Array2<f64>>,
}

impl ActivationLayer {
    pub fn new(kind: Activation, dim: usize) -> Self {
        Self {
            kind,
            dim,
            output: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Linear(Linear),
    BatchNorm(BatchNorm),
    Activation(ActivationLayer),
}

impl Layer {
    fn input_dim(&self) -> usize {
        match self {
            Layer::Linear(l) => l.inputs(),
            Layer::BatchNorm(b) => b.dim(),
            Layer::Activation(a) => a.dim,
        }
    }

    fn output_dim(&self) -> usize {
        match self {
            Layer::Linear(l) => l.outputs(),
            Layer::BatchNorm(b) => b.dim(),
            Layer::Activation(a) => a.dim,
        }
    }

    fn clear_cache(&mut self) {
        match self {
            Layer::Linear(l) => l.input = None,
            Layer::BatchNorm(b) => b.cache = None,
            Layer::Activation(a) => a.output = None,
        }
    }
}

/// Result of a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardPass {
    /// Output of the final layer.
    pub logits: Array2<f64>,
    /// Elementwise sigmoid of the logits.
    pub outputs: Array2<f64>,
    /// Input of the final linear layer (the penultimate embedding).
    pub embeddings: Array2<f64>,
}

/// A feed-forward stack of linear, batch-norm and activation layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<Layer>,
    mode: Mode,
}

impl Network {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidConfig("network needs at least one layer".into()));
        }
        for w in layers.windows(2) {
            if w[0].output_dim() != w[1].input_dim() {
                return Err(Error::DimensionMismatch {
                    expected: w[0].output_dim(),
                    actual: w[1].input_dim(),
                });
            }
        }
        Ok(Self {
            layers,
            mode: Mode::Training,
        })
    }

    /// `input -> [linear (-> batchnorm) -> activation] per hidden -> linear`.
    pub fn mlp(
        input: usize,
        hidden: &[usize],
        output: usize,
        activation: Activation,
        batch_norm: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let mut layers = Vec::new();
        let mut prev = input;
        for &h in hidden {
            layers.push(Layer::Linear(Linear::xavier(prev, h, rng)));
            if batch_norm {
                layers.push(Layer::BatchNorm(BatchNorm::new(h)));
            }
            layers.push(Layer::Activation(ActivationLayer::new(activation, h)));
            prev = h;
        }
        layers.push(Layer::Linear(Linear::xavier(prev, output, rng)));
        Self::new(layers).expect("mlp dimensions chain")
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").output_dim()
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    /// The final linear layer, if the network ends in one.
    pub fn output_layer(&self) -> Option<&Linear> {
        self.layers.iter().rev().find_map(|l| match l {
            Layer::Linear(lin) => Some(lin),
            _ => None,
        })
    }

    fn last_linear_index(&self) -> Option<usize> {
        self.layers.iter().rposition(|l| matches!(l, Layer::Linear(_)))
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| match l {
                Layer::Linear(l) => l.weight.len() + l.bias.len(),
                Layer::BatchNorm(b) => 2 * b.dim(),
                Layer::Activation(_) => 0,
            })
            .sum()
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                actual: x.ncols(),
            });
        }
        Ok(())
    }

    /// Forward pass that caches what [`backward`](Self::backward) needs. In
    /// training mode batch norm uses batch statistics and updates its running
    /// estimates; in inference mode it uses the running estimates.
    pub fn forward(&mut self, x: ArrayView2<f64>) -> Result<ForwardPass> {
        self.check_input(&x)?;
        let last = self.last_linear_index();
        let training = self.mode == Mode::Training;
        let mut h = x.to_owned();
        let mut embeddings = None;
        for (i, layer) in self.layers.iter_mut().enumerate() {
            if Some(i) == last {
                embeddings = Some(h.clone());
            }
            h = match layer {
                Layer::Linear(l) => {
                    let y = l.apply(&h.view());
                    l.input = Some(h);
                    y
                }
                Layer::BatchNorm(b) => {
                    if training {
                        b.forward_batch(&h.view())
                    } else {
                        b.forward_running(&h.view())
                    }
                }
                Layer::Activation(a) => {
                    let y = h.mapv(|v| a.kind.apply(v));
                    a.output = Some(y.clone());
                    y
                }
            };
        }
        Ok(finish(h, embeddings))
    }

    /// Inference-mode forward pass; no state is touched.
    pub fn infer(&self, x: ArrayView2<f64>) -> Result<ForwardPass> {
        self.check_input(&x)?;
        let last = self.last_linear_index();
        let mut h = x.to_owned();
        let mut embeddings = None;
        for (i, layer) in self.layers.iter().enumerate() {
            if Some(i) == last {
                embeddings = Some(h.clone());
            }
            h = match layer {
                Layer::Linear(l) => l.apply(&h.view()),
                Layer::BatchNorm(b) => b.apply_running(&h.view()),
                Layer::Activation(a) => h.mapv(|v| a.kind.apply(v)),
            };
        }
        Ok(finish(h, embeddings))
    }

    /// Backpropagates `grad` (d loss / d final output) through the cached
    /// forward pass, storing parameter gradients and returning d loss / d input.
    pub fn backward(&mut self, grad: ArrayView2<f64>) -> Result<Array2<f64>> {
        if grad.ncols() != self.output_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.output_dim(),
                actual: grad.ncols(),
            });
        }
        let mut g = grad.to_owned();
        for layer in self.layers.iter_mut().rev() {
            g = match layer {
                Layer::Linear(l) => {
                    let input = l.input.take().ok_or(Error::StaleCache)?;
                    if input.nrows() != g.nrows() {
                        return Err(Error::DimensionMismatch {
                            expected: input.nrows(),
                            actual: g.nrows(),
                        });
                    }
                    l.grad_weight.assign(&input.t().dot(&g));
                    l.grad_bias = g.sum_axis(Axis(0));
                    g.dot(&l.weight.t())
                }
                Layer::BatchNorm(b) => match b.cache.take().ok_or(Error::StaleCache)? {
                    BnCache::Batch { x_hat, inv_std } => {
                        let n = g.nrows() as f64;
                        b.grad_beta = g.sum_axis(Axis(0));
                        b.grad_gamma = (&g * &x_hat).sum_axis(Axis(0));
                        let dx_hat = &g * &b.gamma;
                        let sum_dx_hat = dx_hat.sum_axis(Axis(0));
                        let sum_dx_hat_xhat = (&dx_hat * &x_hat).sum_axis(Axis(0));
                        let mut dx = dx_hat * n;
                        dx -= &sum_dx_hat;
                        dx -= &(&x_hat * &sum_dx_hat_xhat);
                        dx * &(inv_std / n)
                    }
                    BnCache::Running { x_hat, inv_std } => {
                        b.grad_beta = g.sum_axis(Axis(0));
                        b.grad_gamma = (&g * &x_hat).sum_axis(Axis(0));
                        g * &(&inv_std * &b.gamma)
                    }
                },
                Layer::Activation(a) => {
                    let y = a.output.take().ok_or(Error::StaleCache)?;
                    let kind = a.kind;
                    let mut out = g;
                    Zip::from(&mut out)
                        .and(&y)
                        .for_each(|gv, &yv| *gv *= kind.derivative_from_output(yv));
                    out
                }
            };
        }
        Ok(g)
    }

    pub fn zero_grad(&mut self) {
        for layer in &mut self.layers {
            match layer {
                Layer::Linear(l) => {
                    l.grad_weight.fill(0.0);
                    l.grad_bias.fill(0.0);
                }
                Layer::BatchNorm(b) => {
                    b.grad_gamma.fill(0.0);
                    b.grad_beta.fill(0.0);
                }
                Layer::Activation(_) => {}
            }
        }
    }

    pub fn clear_caches(&mut self) {
        self.layers.iter_mut().for_each(Layer::clear_cache);
    }
}

fn finish(logits: Array2<f64>, embeddings: Option<Array2<f64>>) -> ForwardPass {
    let outputs = logits.mapv(sigmoid);
    let embeddings = embeddings.unwrap_or_else(|| logits.clone());
    ForwardPass {
        logits,
        outputs,
        embeddings,
    }
}

impl Parameterized for Network {
    fn visit_params(&mut self, f: &mut dyn FnMut(ParamMut<'_>)) {
        for layer in &mut self.layers {
            match layer {
                Layer::Linear(l) => {
                    f(ParamMut {
                        value: l.weight.as_slice_mut().expect("standard layout"),
                        grad: l.grad_weight.as_slice().expect("standard layout"),
                        decay: true,
                    });
                    f(ParamMut {
                        value: l.bias.as_slice_mut().expect("standard layout"),
                        grad: l.grad_bias.as_slice().expect("standard layout"),
                        decay: false,
                    });
                }
                Layer::BatchNorm(b) => {
                    f(ParamMut {
                        value: b.gamma.as_slice_mut().expect("standard layout"),
                        grad: b.grad_gamma.as_slice().expect("standard layout"),
                        decay: false,
                    });
                    f(ParamMut {
                        value: b.beta.as_slice_mut().expect("standard layout"),
                        grad: b.grad_beta.as_slice().expect("standard layout"),
                        decay: false,
                    });
                }
                Layer::Activation(_) => {}
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::check_network;
    use crate::nn::loss::LossKind;
    use crate::nn::optim::{Optimizer, OptimizerKind};
    use crate::nn::train::{train, TrainConfig};
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn normal_matrix(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut r = rng(seed);
        Array2::from_shape_fn((rows, cols), |_| StandardNormal.sample(&mut r))
    }

    #[test]
    fn zero_weights_give_half_everywhere() {
        let lin = Linear::new(Array2::zeros((3, 4)), Array1::zeros(4)).unwrap();
        let net = Network::new(vec![Layer::Linear(lin)]).unwrap();
        let out = net.infer(normal_matrix(5, 3, 1).view()).unwrap();
        assert!(out.outputs.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn identity_linear_passes_input_through() {
        let lin = Linear::new(Array2::eye(3), Array1::zeros(3)).unwrap();
        let net = Network::new(vec![Layer::Linear(lin)]).unwrap();
        let x = normal_matrix(4, 3, 2);
        assert_eq!(net.infer(x.view()).unwrap().logits, x);
    }

    #[test]
    fn batch_norm_training_output_is_standardized() {
        let mut net = Network::new(vec![Layer::BatchNorm(BatchNorm::new(3))]).unwrap();
        let x = normal_matrix(64, 3, 3) * 7.0 + 2.0;
        let y = net.forward(x.view()).unwrap().logits;
        for c in 0..3 {
            let col = y.column(c);
            let mean = col.mean().unwrap();
            let var = col.mapv(|v| (v - mean).powi(2)).mean().unwrap();
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-3, "{var}");
        }
    }

    #[test]
    fn batch_norm_running_stats_use_unbiased_variance() {
        let mut bn = BatchNorm::new(1);
        bn.momentum = 1.0;
        let mut net = Network::new(vec![Layer::BatchNorm(bn)]).unwrap();
        net.forward(array![[1.0], [3.0]].view()).unwrap();
        let Layer::BatchNorm(b) = &net.layers()[0] else { unreachable!() };
        assert_eq!(b.running_mean[0], 2.0);
        assert_eq!(b.running_var[0], 2.0);
    }

    #[test]
    fn gradients_match_finite_differences_with_batch_norm() {
        let mut net = Network::mlp(20, &[40, 40], 10, Activation::Tanh, true, &mut rng(5));
        let x = normal_matrix(16, 20, 6);
        let y = normal_matrix(16, 10, 7).mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
        let check = check_network(&mut net, x.view(), y.view(), LossKind::Bce, 1e-5, 1e-6);
        assert!(check.max_relative_error < 1e-4, "{check:?}");
        let expected = 20 * 40 + 40 + 2 * 40 + 40 * 40 + 40 + 2 * 40 + 40 * 10 + 10 + 16 * 20;
        assert_eq!(check.parameters_checked, expected);
    }

    #[test]
    fn bias_before_batch_norm_checks_as_zero() {
        // The bias feeding a batch norm has an exactly zero gradient; the
        // check must not report rounding noise of the loss as an error.
        let mut net = Network::mlp(20, &[40, 40], 10, Activation::Tanh, true, &mut rng(11));
        let x = normal_matrix(16, 20, 12);
        let y = normal_matrix(16, 10, 13).mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
        let check = check_network(&mut net, x.view(), y.view(), LossKind::Bce, 1e-5, 1e-6);
        assert!(check.max_relative_error < 1e-4, "{check:?}");
        let Layer::Linear(first) = &net.layers()[0] else { unreachable!() };
        assert!(first.grad_bias.iter().all(|g| g.abs() < 1e-12));
    }

    #[test]
    fn gradients_match_in_inference_mode() {
        let mut net = Network::mlp(4, &[6], 3, Activation::Sigmoid, true, &mut rng(8));
        if let Layer::BatchNorm(b) = &mut net.layers_mut()[1] {
            b.running_mean.fill(0.3);
            b.running_var.fill(2.0);
        }
        net.set_mode(Mode::Inference);
        let x = normal_matrix(5, 4, 9);
        let y = normal_matrix(5, 3, 10);
        let check = check_network(&mut net, x.view(), y.view(), LossKind::Mse, 1e-5, 1e-6);
        assert!(check.max_relative_error < 1e-5, "{check:?}");
    }

    fn loss_fd_error(kind: LossKind) -> f64 {
        let logits = normal_matrix(8, 4, 11);
        let targets = match kind {
            LossKind::Bce => normal_matrix(8, 4, 12).mapv(|v| if v > 0.0 { 1.0 } else { 0.0 }),
            LossKind::Mse => normal_matrix(8, 4, 12),
        };
        let analytic = kind.evaluate(logits.view(), targets.view()).grad;
        let mut worst = 0.0f64;
        let h = 1e-5;
        for idx in 0..logits.len() {
            let (r, c) = (idx / 4, idx % 4);
            let mut plus = logits.clone();
            plus[[r, c]] += h;
            let mut minus = logits.clone();
            minus[[r, c]] -= h;
            let numeric = (kind.evaluate(plus.view(), targets.view()).loss
                - kind.evaluate(minus.view(), targets.view()).loss)
                / (2.0 * h);
            let rel = (analytic[[r, c]] - numeric).abs() / analytic[[r, c]].abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
        }
        worst
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        assert!(loss_fd_error(LossKind::Bce) < 1e-6);
        assert!(loss_fd_error(LossKind::Mse) < 1e-6);
    }

    #[test]
    fn hand_computed_two_two_one() {
        // x = (1, 2); W1 = [[0.1, 0.2], [0.3, 0.4]], b1 = (0.5, -0.5); tanh;
        // W2 = (0.7, -0.6)^T, b2 = 0.1; MSE against 1.
        let l1 = Linear::new(array![[0.1, 0.2], [0.3, 0.4]], array![0.5, -0.5]).unwrap();
        let l2 = Linear::new(array![[0.7], [-0.6]], array![0.1]).unwrap();
        let mut net = Network::new(vec![
            Layer::Linear(l1),
            Layer::Activation(ActivationLayer::new(Activation::Tanh, 2)),
            Layer::Linear(l2),
        ])
        .unwrap();
        let x = array![[1.0, 2.0]];
        let pass = net.forward(x.view()).unwrap();
        let a = [1.2f64.tanh(), 0.5f64.tanh()];
        let out = 0.7 * a[0] - 0.6 * a[1] + 0.1;
        assert!((pass.logits[[0, 0]] - out).abs() < 1e-15);
        assert_eq!(pass.embeddings, array![[a[0], a[1]]]);
        let d_out = 2.0 * (out - 1.0);
        net.backward(array![[d_out]].view()).unwrap();
        let dz = [d_out * 0.7 * (1.0 - a[0] * a[0]), d_out * -0.6 * (1.0 - a[1] * a[1])];
        let Layer::Linear(l1) = &net.layers()[0] else { unreachable!() };
        let Layer::Linear(l2) = &net.layers()[2] else { unreachable!() };
        assert!((l2.grad_weight[[0, 0]] - d_out * a[0]).abs() < 1e-15);
        assert!((l2.grad_bias[0] - d_out).abs() < 1e-15);
        for (i, xi) in [1.0, 2.0].iter().enumerate() {
            for (j, dzj) in dz.iter().enumerate() {
                assert!((l1.grad_weight[[i, j]] - xi * dzj).abs() < 1e-15);
            }
        }
        assert!((l1.grad_bias[1] - dz[1]).abs() < 1e-15);
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_gradients() {
        let mut net = Network::mlp(3, &[5], 2, Activation::Tanh, true, &mut rng(13));
        net.forward(normal_matrix(4, 3, 14).view()).unwrap();
        let gx = net.backward(Array2::zeros((4, 2)).view()).unwrap();
        assert!(gx.iter().all(|&v| v == 0.0));
        for layer in net.layers() {
            match layer {
                Layer::Linear(l) => {
                    assert!(l.grad_weight.iter().chain(l.grad_bias.iter()).all(|&v| v == 0.0))
                }
                Layer::BatchNorm(b) => {
                    assert!(b.grad_gamma.iter().chain(b.grad_beta.iter()).all(|&v| v == 0.0))
                }
                Layer::Activation(_) => {}
            }
        }
    }

    #[test]
    fn backward_without_forward_is_stale() {
        let mut net = Network::mlp(3, &[5], 2, Activation::Tanh, false, &mut rng(15));
        assert!(matches!(
            net.backward(Array2::zeros((1, 2)).view()),
            Err(Error::StaleCache)
        ));
        net.forward(normal_matrix(2, 3, 16).view()).unwrap();
        net.backward(Array2::zeros((2, 2)).view()).unwrap();
        assert!(matches!(
            net.backward(Array2::zeros((2, 2)).view()),
            Err(Error::StaleCache)
        ));
    }

    #[test]
    fn xor_is_learned() {
        let x = array![[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]];
        let y = array![[0.0], [1.0], [1.0], [0.0]];
        let mut net = Network::mlp(2, &[8, 8], 1, Activation::Tanh, false, &mut rng(17));
        let config = TrainConfig {
            learning_rate: 0.01,
            batch_size: 4,
            epochs: 2000,
            patience: None,
            ..TrainConfig::default()
        };
        let report = train(&mut net, x.view(), y.view(), LossKind::Bce, &config, None).unwrap();
        assert!(*report.train_loss.last().unwrap() < 0.05, "{:?}", report.train_loss.last());
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_unchanged() {
        let mut net = Network::mlp(3, &[4], 2, Activation::Tanh, false, &mut rng(18));
        let before = net.clone();
        net.forward(normal_matrix(4, 3, 19).view()).unwrap();
        net.backward(Array2::ones((4, 2)).view()).unwrap();
        for kind in [OptimizerKind::Sgd, OptimizerKind::Adam] {
            Optimizer::new(kind, 0.0, 0.0).step(&mut net);
        }
        for (a, b) in net.layers().iter().zip(before.layers()) {
            if let (Layer::Linear(a), Layer::Linear(b)) = (a, b) {
                assert_eq!(a.weight, b.weight);
                assert_eq!(a.bias, b.bias);
            }
        }
    }

    #[test]
    fn same_seed_gives_identical_traces() {
        let x = normal_matrix(50, 4, 20);
        let y = normal_matrix(50, 2, 21);
        let run = || {
            let mut net = Network::mlp(4, &[8], 2, Activation::Tanh, true, &mut rng(22));
            let config = TrainConfig {
                epochs: 5,
                batch_size: 16,
                seed: 3,
                ..TrainConfig::default()
            };
            let report = train(&mut net, x.view(), y.view(), LossKind::Mse, &config, Some((x.view(), y.view())))
                .unwrap();
            (report, net)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn early_stopping_restores_best_epoch() {
        let x = normal_matrix(40, 3, 23);
        let y = normal_matrix(40, 1, 24);
        let vx = normal_matrix(40, 3, 25);
        let vy = normal_matrix(40, 1, 26);
        let mut net = Network::mlp(3, &[32], 1, Activation::Tanh, false, &mut rng(27));
        let config = TrainConfig {
            learning_rate: 0.05,
            epochs: 400,
            batch_size: 8,
            patience: Some(5),
            ..TrainConfig::default()
        };
        let report = train(&mut net, x.view(), y.view(), LossKind::Mse, &config, Some((vx.view(), vy.view())))
            .unwrap();
        let best = report.best_epoch.unwrap();
        let kept = crate::nn::train::evaluate_loss(&net, vx.view(), vy.view(), LossKind::Mse).unwrap();
        assert!((kept - report.validation_loss[best]).abs() < 1e-12);
        assert_eq!(
            report.validation_loss[best],
            report.validation_loss.iter().cloned().fold(f64::INFINITY, f64::min)
        );
        if report.stopped_early {
            assert_eq!(report.validation_loss.len(), best + 6);
        }
    }

    #[test]
    fn nan_input_reports_divergence() {
        let mut x = normal_matrix(8, 2, 28);
        x[[0, 0]] = f64::NAN;
        let y = Array2::zeros((8, 1));
        let mut net = Network::mlp(2, &[3], 1, Activation::Tanh, false, &mut rng(29));
        let config = TrainConfig { epochs: 1, ..TrainConfig::default() };
        assert!(matches!(
            train(&mut net, x.view(), y.view(), LossKind::Mse, &config, None),
            Err(Error::DivergedLoss { epoch: 0 })
        ));
    }
}
