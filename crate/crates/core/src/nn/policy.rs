use super::gaussian::{squash, squash_derivative};
use super::Mlp;
use crate::error::Result;

/// A policy with a deterministic (mean) action and its gradient with
/// respect to the observation.
pub trait DeterministicPolicy {
    fn mean_action(&self, obs: &[f64]) -> Result<f64>;

    /// `(μ(o), ∇_o μ(o))`.
    fn mean_action_and_grad(&self, obs: &[f64]) -> Result<(f64, Vec<f64>)>;
}

/// An actor network whose first output is the pre-tanh mean; the mean
/// action is `ACTION_BOUND · tanh(output[0])`.
impl DeterministicPolicy for Mlp {
    fn mean_action(&self, obs: &[f64]) -> Result<f64> {
        Ok(squash(self.forward(obs)?[0]))
    }

    fn mean_action_and_grad(&self, obs: &[f64]) -> Result<(f64, Vec<f64>)> {
        let x = ndarray::ArrayView2::from_shape((1, obs.len()), obs).expect("row view");
        let trace = self.forward_trace(x)?;
        let pre = trace.output()[[0, 0]];
        let mut upstream = ndarray::Array2::zeros((1, self.output_dim()));
        upstream[[0, 0]] = squash_derivative(pre);
        let grads = self.backward(&trace, upstream.view(), false)?;
        Ok((squash(pre), grads.input.row(0).to_vec()))
    }
}

impl<P: DeterministicPolicy + ?Sized> DeterministicPolicy for &P {
    fn mean_action(&self, obs: &[f64]) -> Result<f64> {
        (**self).mean_action(obs)
    }

    fn mean_action_and_grad(&self, obs: &[f64]) -> Result<(f64, Vec<f64>)> {
        (**self).mean_action_and_grad(obs)
    }
}

/// Scripted policy returning the same action everywhere.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantPolicy(pub f64);

impl DeterministicPolicy for ConstantPolicy {
    fn mean_action(&self, _obs: &[f64]) -> Result<f64> {
        Ok(self.0)
    }

    fn mean_action_and_grad(&self, obs: &[f64]) -> Result<(f64, Vec<f64>)> {
        Ok((self.0, vec![0.0; obs.len()]))
    }
}
