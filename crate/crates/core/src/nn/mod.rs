//! A small deterministic neural-network kernel: tanh dense layers, LSTM,
//! softmax attention over the code, linear decoder, cross-entropy with an
//! l2 penalty, hand-written backpropagation through time, and Adam.
//!
//! Everything is `f64` and batched time-major: a batch of `B` windows of
//! `T` steps is one `[T * B, D]` matrix whose row `t * B + b` holds step
//! `t` of window `b`.

mod adam;
mod dense;
mod lstm;
mod network;

pub use adam::{adam_step, AdamState, ParamSet};
pub use dense::{dense_forward, tanh_layer, DenseParams};
pub use lstm::{lstm_step, run_sequence, LstmCache, LstmParams, GATES};
pub use network::{
    attention_weights, cross_entropy, decode, weighted_code, NetState, Network, NetworkShape,
};

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::Rng;

use crate::error::{DeepKeyError, Result};

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(x: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = x.to_owned();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

pub(crate) fn uniform_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-scale..=scale))
}

pub(crate) fn check_finite<'a, I>(values: I, name: &str) -> Result<()>
where
    I: IntoIterator<Item = &'a f64>,
{
    if values.into_iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(DeepKeyError::Numeric(name.to_string()))
    }
}

/// Windows stacked time-major for batched evaluation.
#[derive(Debug, Clone)]
pub struct SequenceBatch {
    pub data: Array2<f64>,
    pub batch: usize,
    pub steps: usize,
}

impl SequenceBatch {
    pub fn from_windows<W: std::borrow::Borrow<Array2<f64>>>(windows: &[W]) -> Result<Self> {
        let first = windows
            .first()
            .ok_or_else(|| DeepKeyError::Shape("empty batch".into()))?
            .borrow();
        let (steps, features) = first.dim();
        if steps == 0 || features == 0 {
            return Err(DeepKeyError::Shape("windows must be non-empty".into()));
        }
        let batch = windows.len();
        let mut data = Array2::zeros((steps * batch, features));
        for (b, w) in windows.iter().enumerate() {
            let w = w.borrow();
            if w.dim() != (steps, features) {
                return Err(DeepKeyError::Shape(format!(
                    "window {b} has shape {:?}, expected {:?}",
                    w.dim(),
                    (steps, features)
                )));
            }
            for t in 0..steps {
                data.row_mut(t * batch + b).assign(&w.row(t));
            }
        }
        Ok(Self { data, batch, steps })
    }

    pub fn features(&self) -> usize {
        self.data.ncols()
    }

    pub fn step(&self, t: usize) -> ArrayView2<'_, f64> {
        self.data.slice(s![t * self.batch..(t + 1) * self.batch, ..])
    }
}
