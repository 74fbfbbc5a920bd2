//! Adam with bias correction and the warmup + cosine learning-rate schedule.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OptimizerState {
    first_moment: Vec<Tensor>,
    second_moment: Vec<Tensor>,
    step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl OptimizerState {
    /// Fresh state with zeroed moments shaped like `params`.
    pub fn new(params: &[Tensor]) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        OptimizerState { first_moment: zeros.clone(), second_moment: zeros, step: 0, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One Adam update of `params` in place.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor], lr: f64) -> Result<()> {
        if params.len() != self.first_moment.len() || grads.len() != params.len() {
            return Err(Error::shape(
                "optimizer_step",
                format!("{} params, {} grads, state for {}", params.len(), grads.len(), self.first_moment.len()),
            ));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.shape() != self.first_moment[i].shape() {
                return Err(Error::shape(
                    "optimizer_step",
                    format!("param {} has shape {:?}, grad {:?}", i, p.shape(), g.shape()),
                ));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.first_moment.iter_mut().zip(self.second_moment.iter_mut()))
        {
            let (pd, gd) = (p.data_mut(), g.data());
            let (md, vd) = (m.data_mut(), v.data_mut());
            for k in 0..pd.len() {
                md[k] = self.beta1 * md[k] + (1.0 - self.beta1) * gd[k];
                vd[k] = self.beta2 * vd[k] + (1.0 - self.beta2) * gd[k] * gd[k];
                let m_hat = md[k] / bc1;
                let v_hat = vd[k] / bc2;
                pd[k] -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Learning rate for `epoch`: the base rate at epoch 0, a linear ramp
/// `base · epoch / warmup` over epochs `1..=warmup`, then cosine decay that
/// reaches zero at `total`.
pub fn lr_schedule(epoch: usize, warmup: usize, total: usize, base_lr: f64) -> Result<f64> {
    if epoch >= total {
        return Err(Error::InvalidArgument(format!("epoch {epoch} out of range for a {total}-epoch schedule")));
    }
    if warmup >= total {
        return Err(Error::InvalidArgument(format!("warmup {warmup} must be shorter than the schedule ({total})")));
    }
    if epoch == 0 {
        return Ok(base_lr);
    }
    if epoch <= warmup {
        return Ok(base_lr * epoch as f64 / warmup as f64);
    }
    let progress = (epoch - warmup) as f64 / (total - warmup) as f64;
    Ok(0.5 * base_lr * (1.0 + (PI * progress).cos()))
}
