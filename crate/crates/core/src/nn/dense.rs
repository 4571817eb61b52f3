use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use super::uniform_matrix;
use crate::error::{DeepKeyError, Result};

/// Affine layer `x W + b`, `W: [in, out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseParams {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl DenseParams {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            w: Array2::zeros((input, output)),
            b: Array1::zeros(output),
        }
    }

    /// Uniform(-s, s) with `s = 1 / sqrt(input)`, biases included.
    pub fn init<R: Rng>(rng: &mut R, input: usize, output: usize) -> Self {
        let scale = 1.0 / (input as f64).sqrt();
        let w = uniform_matrix(rng, input, output, scale);
        let b = Array1::from_shape_simple_fn(output, || rng.random_range(-scale..=scale));
        Self { w, b }
    }

    pub fn input(&self) -> usize {
        self.w.nrows()
    }

    pub fn output(&self) -> usize {
        self.w.ncols()
    }
}

pub fn dense_forward(x: ArrayView2<'_, f64>, p: &DenseParams) -> Result<Array2<f64>> {
    if x.ncols() != p.w.nrows() || p.b.len() != p.w.ncols() {
        return Err(DeepKeyError::Shape(format!(
            "dense layer [{}, {}] (+{}) applied to input with {} features",
            p.w.nrows(),
            p.w.ncols(),
            p.b.len(),
            x.ncols()
        )));
    }
    Ok(x.dot(&p.w) + &p.b)
}

pub fn tanh_layer(x: ArrayView2<'_, f64>) -> Array2<f64> {
    x.mapv(f64::tanh)
}

/// Gradients of `tanh(x W + b)` given the upstream gradient on its output.
/// Returns `(dW, db, dx)`; `dx` is skipped when not needed.
pub(crate) fn tanh_dense_backward(
    x: ArrayView2<'_, f64>,
    activation: ArrayView2<'_, f64>,
    upstream: Array2<f64>,
    p: &DenseParams,
    want_input_grad: bool,
) -> (Array2<f64>, Array1<f64>, Option<Array2<f64>>) {
    let mut dz = upstream;
    dz.zip_mut_with(&activation, |g, &a| *g *= 1.0 - a * a);
    let dw = x.t().dot(&dz);
    let db = dz.sum_axis(Axis(0));
    let dx = want_input_grad.then(|| dz.dot(&p.w.t()));
    (dw, db, dx)
}
