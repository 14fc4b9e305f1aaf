use serde::{Deserialize, Serialize};

use crate::{Result, Tensor, TensorError};

/// Adam hyper-parameters. The learning rate is passed per step so that
/// separate parameter groups can share one configuration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment buffers for one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    m: Tensor,
    v: Tensor,
    step: u64,
}

impl AdamState {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self {
            m: Tensor::zeros(rows, cols),
            v: Tensor::zeros(rows, cols),
            step: 0,
        }
    }

    pub fn for_param(p: &Tensor) -> Self {
        Self::new(p.rows(), p.cols())
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

fn check(param: &Tensor, grad: &Tensor) -> Result<()> {
    if param.shape() != grad.shape() {
        return Err(TensorError::ShapeMismatch {
            op: "optimizer step",
            left: param.shape(),
            right: grad.shape(),
        });
    }
    if !grad.is_finite() {
        return Err(TensorError::NonFinite("gradient"));
    }
    Ok(())
}

impl Adam {
    /// One bias-corrected Adam update. A non-finite gradient is reported and
    /// leaves both the parameter and the state untouched.
    pub fn step(
        &self,
        param: &mut Tensor,
        grad: &Tensor,
        state: &mut AdamState,
        lr: f64,
    ) -> Result<()> {
        check(param, grad)?;
        if state.m.shape() != param.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "adam state",
                left: state.m.shape(),
                right: param.shape(),
            });
        }
        state.step += 1;
        let t = state.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let p = param.data_mut().iter_mut();
        let m = state.m.data_mut().iter_mut();
        let v = state.v.data_mut().iter_mut();
        for (((p, m), v), &g) in p.zip(m).zip(v).zip(grad.data()) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Plain gradient descent, `p <- p - lr * g`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Sgd;

impl Sgd {
    pub fn step(&self, param: &mut Tensor, grad: &Tensor, lr: f64) -> Result<()> {
        check(param, grad)?;
        for (p, g) in param.data_mut().iter_mut().zip(grad.data()) {
            *p -= lr * g;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Adam(Adam),
    Sgd,
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Adam(Adam::default())
    }
}

impl Optimizer {
    pub fn step(
        &self,
        param: &mut Tensor,
        grad: &Tensor,
        state: &mut AdamState,
        lr: f64,
    ) -> Result<()> {
        match self {
            Optimizer::Adam(a) => a.step(param, grad, state, lr),
            Optimizer::Sgd => Sgd.step(param, grad, lr),
        }
    }
}
