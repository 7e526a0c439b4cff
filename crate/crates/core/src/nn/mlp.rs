use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView2, ArrayViewMut2, Axis};
use rand::Rng as _;

use crate::error::{check_dim, Error, Result};
use crate::rng::Rng;

/// Hidden-layer nonlinearity. The output layer is always linear.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
}

impl Activation {
    pub(crate) fn tag(self) -> u8 {
        match self {
            Activation::Tanh => 0,
            Activation::Relu => 1,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::Tanh),
            1 => Some(Activation::Relu),
            _ => None,
        }
    }

    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed through the activation's output.
    fn derivative_at_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Feed-forward network stored as one flat parameter vector.
///
/// Layer `l` occupies `n_out * n_in` weights (row-major, one row per output
/// unit) followed by `n_out` biases.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layer_sizes: Vec<usize>,
    params: Vec<f64>,
    activation: Activation,
}

/// Per-layer activations of a batched forward pass, kept for backprop.
#[derive(Debug, Clone)]
pub struct Trace {
    activations: Vec<Array2<f64>>,
}

impl Trace {
    pub fn input(&self) -> &Array2<f64> {
        &self.activations[0]
    }

    pub fn output(&self) -> &Array2<f64> {
        self.activations.last().expect("trace has at least input and output")
    }
}

#[derive(Debug, Clone)]
pub struct Gradients {
    /// Gradient w.r.t. the flat parameter vector, summed over the batch.
    pub params: Vec<f64>,
    /// Gradient w.r.t. each input row.
    pub input: Array2<f64>,
}

impl Mlp {
    pub fn param_count(layer_sizes: &[usize]) -> usize {
        layer_sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    fn validate_sizes(layer_sizes: &[usize]) -> Result<()> {
        if layer_sizes.len() < 2 {
            return Err(Error::Usage(format!(
                "an mlp needs at least input and output sizes, got {layer_sizes:?}"
            )));
        }
        if layer_sizes.contains(&0) {
            return Err(Error::Usage(format!("zero-width layer in {layer_sizes:?}")));
        }
        Ok(())
    }

    /// All-zero network.
    pub fn zeros(layer_sizes: &[usize], activation: Activation) -> Result<Self> {
        Self::validate_sizes(layer_sizes)?;
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            params: vec![0.0; Self::param_count(layer_sizes)],
            activation,
        })
    }

    /// Xavier-uniform weights, zero biases.
    pub fn random(layer_sizes: &[usize], activation: Activation, rng: &mut Rng) -> Result<Self> {
        let mut net = Self::zeros(layer_sizes, activation)?;
        for l in 0..net.num_layers() {
            let (n_in, n_out) = (net.layer_sizes[l], net.layer_sizes[l + 1]);
            let bound = (6.0 / (n_in + n_out) as f64).sqrt();
            let off = net.layer_offset(l);
            for w in &mut net.params[off..off + n_in * n_out] {
                *w = rng.random_range(-bound..bound);
            }
        }
        Ok(net)
    }

    pub fn from_params(layer_sizes: &[usize], activation: Activation, params: Vec<f64>) -> Result<Self> {
        Self::validate_sizes(layer_sizes)?;
        check_dim(Self::param_count(layer_sizes), params.len())?;
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("mlp parameters".into()));
        }
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            params,
            activation,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    fn layer_offset(&self, layer: usize) -> usize {
        Self::param_count(&self.layer_sizes[..=layer])
    }

    fn weights(&self, layer: usize) -> ArrayView2<'_, f64> {
        let (n_in, n_out) = (self.layer_sizes[layer], self.layer_sizes[layer + 1]);
        let off = self.layer_offset(layer);
        ArrayView2::from_shape((n_out, n_in), &self.params[off..off + n_in * n_out])
            .expect("layer slice matches its shape")
    }

    fn biases(&self, layer: usize) -> &[f64] {
        let (n_in, n_out) = (self.layer_sizes[layer], self.layer_sizes[layer + 1]);
        let off = self.layer_offset(layer) + n_in * n_out;
        &self.params[off..off + n_out]
    }

    /// Multiplies the output layer's weights by `factor`.
    pub fn scale_output_layer(&mut self, factor: f64) {
        let l = self.num_layers() - 1;
        let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
        let off = self.layer_offset(l);
        for w in &mut self.params[off..off + n_in * n_out] {
            *w *= factor;
        }
    }

    /// Single-sample forward pass.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        let x = ArrayView2::from_shape((1, input.len()), input).expect("row view");
        Ok(self.forward_trace(x)?.output().row(0).to_vec())
    }

    pub fn forward_batch(&self, inputs: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let trace = self.forward_trace(inputs)?;
        Ok(trace.activations.into_iter().last().unwrap())
    }

    /// Batched forward pass keeping every layer's activations.
    pub fn forward_trace(&self, inputs: ArrayView2<'_, f64>) -> Result<Trace> {
        check_dim(self.input_dim(), inputs.ncols())?;
        let batch = inputs.nrows();
        let mut activations = Vec::with_capacity(self.layer_sizes.len());
        activations.push(inputs.to_owned());
        for l in 0..self.num_layers() {
            let n_out = self.layer_sizes[l + 1];
            let bias = self.biases(l);
            let mut z = Array2::from_shape_fn((batch, n_out), |(_, j)| bias[j]);
            general_mat_mul(1.0, &activations[l], &self.weights(l).t(), 1.0, &mut z);
            if l + 1 < self.num_layers() {
                let act = self.activation;
                z.mapv_inplace(|v| act.apply(v));
            }
            activations.push(z);
        }
        Ok(Trace { activations })
    }

    /// Reverse pass. `upstream` is dLoss/dOutput per row; parameter gradients
    /// are summed over rows. With `want_params = false` only the input
    /// gradient is computed and `params` is empty.
    pub fn backward(&self, trace: &Trace, upstream: ArrayView2<'_, f64>, want_params: bool) -> Result<Gradients> {
        check_dim(self.output_dim(), upstream.ncols())?;
        check_dim(trace.input().nrows(), upstream.nrows())?;
        check_dim(self.layer_sizes.len(), trace.activations.len())?;
        let mut grads = if want_params {
            vec![0.0; self.params.len()]
        } else {
            Vec::new()
        };
        let mut delta = upstream.to_owned();
        for l in (0..self.num_layers()).rev() {
            if l + 1 < self.num_layers() {
                let act = self.activation;
                ndarray::Zip::from(&mut delta)
                    .and(&trace.activations[l + 1])
                    .for_each(|d, &y| *d *= act.derivative_at_output(y));
            }
            if want_params {
                let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
                let off = self.layer_offset(l);
                let (w_slice, b_slice) = grads[off..off + n_in * n_out + n_out].split_at_mut(n_in * n_out);
                let mut gw = ArrayViewMut2::from_shape((n_out, n_in), w_slice).expect("grad view");
                general_mat_mul(1.0, &delta.t(), &trace.activations[l], 0.0, &mut gw);
                for (gb, s) in b_slice.iter_mut().zip(delta.sum_axis(Axis(0)).iter()) {
                    *gb = *s;
                }
            }
            let w = self.weights(l);
            let mut prev = Array2::zeros((delta.nrows(), self.layer_sizes[l]));
            general_mat_mul(1.0, &delta, &w, 0.0, &mut prev);
            delta = prev;
        }
        Ok(Gradients {
            params: grads,
            input: delta,
        })
    }

    /// dLoss/dParams for one input, given dLoss/dOutput.
    pub fn param_gradient(&self, input: &[f64], loss_grad_at_output: &[f64]) -> Result<Vec<f64>> {
        let (trace, up) = self.single(input, loss_grad_at_output)?;
        Ok(self.backward(&trace, up.view(), true)?.params)
    }

    /// dLoss/dInput for one input, given dLoss/dOutput.
    pub fn input_gradient(&self, input: &[f64], loss_grad_at_output: &[f64]) -> Result<Vec<f64>> {
        let (trace, up) = self.single(input, loss_grad_at_output)?;
        Ok(self.backward(&trace, up.view(), false)?.input.row(0).to_vec())
    }

    fn single(&self, input: &[f64], upstream: &[f64]) -> Result<(Trace, Array2<f64>)> {
        check_dim(self.output_dim(), upstream.len())?;
        let x = ArrayView2::from_shape((1, input.len()), input).expect("row view");
        let trace = self.forward_trace(x)?;
        let up = Array2::from_shape_vec((1, upstream.len()), upstream.to_vec()).expect("row");
        Ok((trace, up))
    }

    /// `self ← (1 − tau)·self + tau·source`, elementwise.
    pub fn polyak_from(&mut self, source: &Mlp, tau: f64) -> Result<()> {
        if self.layer_sizes != source.layer_sizes {
            return Err(Error::Usage("polyak update between differently shaped nets".into()));
        }
        for (t, s) in self.params.iter_mut().zip(&source.params) {
            *t = (1.0 - tau) * *t + tau * s;
        }
        Ok(())
    }
}
