use ndarray::{Array1, ArrayViewD, ArrayViewMutD, Zip};

use super::Network;
use crate::error::{DeepKeyError, Result};

/// A collection of parameter tensors an optimizer can walk in a fixed order.
pub trait ParamSet: Clone {
    fn tensors(&self) -> Vec<ArrayViewD<'_, f64>>;
    fn tensors_mut(&mut self) -> Vec<ArrayViewMutD<'_, f64>>;
    fn zeros_like(&self) -> Self;
}

impl ParamSet for Network {
    fn tensors(&self) -> Vec<ArrayViewD<'_, f64>> {
        Network::tensors(self)
    }

    fn tensors_mut(&mut self) -> Vec<ArrayViewMutD<'_, f64>> {
        Network::tensors_mut(self)
    }

    fn zeros_like(&self) -> Self {
        Network::zeros_like(self)
    }
}

impl ParamSet for Array1<f64> {
    fn tensors(&self) -> Vec<ArrayViewD<'_, f64>> {
        vec![self.view().into_dyn()]
    }

    fn tensors_mut(&mut self) -> Vec<ArrayViewMutD<'_, f64>> {
        vec![self.view_mut().into_dyn()]
    }

    fn zeros_like(&self) -> Self {
        Array1::zeros(self.len())
    }
}

fn same_layout<P: ParamSet>(a: &P, b: &P) -> bool {
    let (a, b) = (a.tensors(), b.tensors());
    a.len() == b.len() && a.iter().zip(&b).all(|(x, y)| x.shape() == y.shape())
}

/// First/second moment estimates, one slot per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<P = Network> {
    pub m: P,
    pub v: P,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl<P: ParamSet> AdamState<P> {
    pub fn new(params: &P) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step<P: ParamSet>(params: &mut P, grads: &P, lr: f64, st: &mut AdamState<P>) -> Result<()> {
    if !same_layout(params, grads) || !same_layout(params, &st.m) {
        return Err(DeepKeyError::Shape("parameters, gradients and optimizer state differ in shape".into()));
    }
    st.t += 1;
    let (b1, b2, eps) = (st.beta1, st.beta2, st.epsilon);
    let correction1 = 1.0 - b1.powi(st.t as i32);
    let correction2 = 1.0 - b2.powi(st.t as i32);
    let grads = grads.tensors();
    let moments = st.m.tensors_mut();
    let velocities = st.v.tensors_mut();
    for (((mut p, g), mut m), mut v) in params.tensors_mut().into_iter().zip(grads).zip(moments).zip(velocities) {
        Zip::from(&mut p)
            .and(&g)
            .and(&mut m)
            .and(&mut v)
            .for_each(|p, &g, m, v| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let m_hat = *m / correction1;
                let v_hat = *v / correction2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            });
    }
    Ok(())
}
