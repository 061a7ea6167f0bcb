//! RMSE objective and the AMSGrad optimizer with decoupled weight decay.

use crate::autodiff::{Real, Tape, Tensor, Var};
use crate::nn::ParameterSet;
use crate::{Error, Result};

/// Root mean squared error between two equally shaped tape values.
pub fn rmse<F: Real>(tape: &mut Tape<F>, predictions: Var, targets: Var) -> Result<Var> {
    let n = tape.value(predictions).numel();
    if n != tape.value(targets).numel() {
        return Err(Error::dim(
            "rmse",
            tape.value(predictions).shape(),
            tape.value(targets).shape(),
        ));
    }
    let diff = tape.sub(predictions, targets)?;
    let sq = tape.mul(diff, diff)?;
    let mse = tape.mean(sq);
    tape.sqrt(mse)
}

/// RMSE of plain slices, accumulated in `f64` in index order.
pub fn rmse_values(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::Domain("rmse of an empty set".into()));
    }
    if predictions.len() != targets.len() {
        return Err(Error::dim("rmse", &[predictions.len()], &[targets.len()]));
    }
    let sum: f64 = predictions
        .iter()
        .zip(targets)
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok((sum / predictions.len() as f64).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AmsGradConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AmsGradConfig {
    fn default() -> Self {
        AmsGradConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-5,
        }
    }
}

impl AmsGradConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 1), got {b}")));
            }
        }
        if !(self.lr >= 0.0) || !(self.eps > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config(format!(
                "lr and weight_decay must be non-negative and eps positive: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Moment buffers for one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments<F> {
    pub m: Vec<F>,
    pub v: Vec<F>,
    pub v_max: Vec<F>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<F> {
    pub config: AmsGradConfig,
    pub step: u64,
    pub moments: Vec<Moments<F>>,
}

impl<F: Real> OptimizerState<F> {
    /// Zeroed state shaped like `params`.
    pub fn new(config: AmsGradConfig, params: &ParameterSet<F>) -> Result<Self> {
        config.validate()?;
        let moments = params
            .iter()
            .map(|(_, t)| Moments {
                m: vec![F::zero(); t.numel()],
                v: vec![F::zero(); t.numel()],
                v_max: vec![F::zero(); t.numel()],
            })
            .collect();
        Ok(OptimizerState {
            config,
            step: 0,
            moments,
        })
    }

    /// One AMSGrad update of every parameter. `grads` follows the parameter
    /// order of `params`.
    pub fn step(&mut self, params: &mut ParameterSet<F>, grads: &[Tensor<F>]) -> Result<()> {
        self.config.validate()?;
        if grads.len() != params.len() || self.moments.len() != params.len() {
            return Err(Error::Contract(format!(
                "{} parameters, {} gradients, {} moment buffers",
                params.len(),
                grads.len(),
                self.moments.len()
            )));
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let f = F::from_f64_lossy;
        let (b1, b2, eps) = (f(c.beta1), f(c.beta2), f(c.eps));
        let (lr, decay) = (f(c.lr), f(c.lr * c.weight_decay));
        let correct1 = f(1.0 - c.beta1.powi(t));
        let correct2 = f(1.0 - c.beta2.powi(t));
        let one = F::one();

        for (((name, theta), g), mo) in params.iter_mut().zip(grads).zip(&mut self.moments) {
            if g.shape() != theta.shape() || mo.m.len() != theta.numel() {
                return Err(Error::Contract(format!(
                    "gradient for `{name}` has shape {:?}, parameter {:?}",
                    g.shape(),
                    theta.shape()
                )));
            }
            let theta = theta.data_mut();
            for i in 0..theta.len() {
                let gi = g.data()[i];
                mo.m[i] = b1 * mo.m[i] + (one - b1) * gi;
                mo.v[i] = b2 * mo.v[i] + (one - b2) * gi * gi;
                if mo.v[i] > mo.v_max[i] {
                    mo.v_max[i] = mo.v[i];
                }
                let m_hat = mo.m[i] / correct1;
                let v_hat = mo.v_max[i] / correct2;
                theta[i] = theta[i] - lr * m_hat / (v_hat.sqrt() + eps) - decay * theta[i];
            }
        }
        Ok(())
    }
}
