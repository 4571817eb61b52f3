use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::Rng;

use super::{check_finite, sigmoid, uniform_matrix, SequenceBatch};
use crate::error::{DeepKeyError, Result};

/// Column-block order of the fused gate matrices: output, forget, input,
/// input modulation.
pub const GATES: [&str; 4] = ["output", "forget", "input", "modulation"];

/// LSTM weights with the four gates fused column-wise.
///
/// `w_in: [in, 4H]`, `w_rec: [H, 4H]`, `b: [4H]`; columns `g*H..(g+1)*H`
/// belong to gate `GATES[g]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub w_in: Array2<f64>,
    pub w_rec: Array2<f64>,
    pub b: Array1<f64>,
}

impl LstmParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w_in: Array2::zeros((input, 4 * hidden)),
            w_rec: Array2::zeros((hidden, 4 * hidden)),
            b: Array1::zeros(4 * hidden),
        }
    }

    pub fn init<R: Rng>(rng: &mut R, input: usize, hidden: usize) -> Self {
        let s_in = 1.0 / (input as f64).sqrt();
        let s_rec = 1.0 / (hidden as f64).sqrt();
        let w_in = uniform_matrix(rng, input, 4 * hidden, s_in);
        let w_rec = uniform_matrix(rng, hidden, 4 * hidden, s_rec);
        let b = Array1::from_shape_simple_fn(4 * hidden, || rng.random_range(-s_in..=s_in));
        Self { w_in, w_rec, b }
    }

    pub fn input(&self) -> usize {
        self.w_in.nrows()
    }

    pub fn hidden(&self) -> usize {
        self.w_rec.nrows()
    }

    /// Input weights of one gate, `[in, H]`.
    pub fn gate_input_weights(&self, gate: usize) -> ArrayView2<'_, f64> {
        let h = self.hidden();
        self.w_in.slice(s![.., gate * h..(gate + 1) * h])
    }

    pub fn gate_recurrent_weights(&self, gate: usize) -> ArrayView2<'_, f64> {
        let h = self.hidden();
        self.w_rec.slice(s![.., gate * h..(gate + 1) * h])
    }

    pub fn gate_bias(&self, gate: usize) -> ArrayView1<'_, f64> {
        let h = self.hidden();
        self.b.slice(s![gate * h..(gate + 1) * h])
    }

    fn check(&self) -> Result<()> {
        let h = self.hidden();
        if self.w_rec.ncols() != 4 * h || self.w_in.ncols() != 4 * h || self.b.len() != 4 * h {
            return Err(DeepKeyError::Shape(format!(
                "inconsistent LSTM shapes: w_in {:?}, w_rec {:?}, b {}",
                self.w_in.dim(),
                self.w_rec.dim(),
                self.b.len()
            )));
        }
        Ok(())
    }
}

/// Per-step activations kept for backpropagation.
#[derive(Debug, Clone)]
pub struct LstmCache {
    /// Post-activation gates `[B, 4H]` per step.
    pub gates: Vec<Array2<f64>>,
    pub cells: Vec<Array2<f64>>,
    pub cell_tanh: Vec<Array2<f64>>,
    pub hidden: Vec<Array2<f64>>,
}

impl LstmCache {
    pub fn last_hidden(&self) -> &Array2<f64> {
        self.hidden.last().expect("at least one step")
    }
}

/// Applies the gate nonlinearities in place on pre-activations `[B, 4H]`.
fn activate_gates(pre: &mut Array2<f64>, h: usize) {
    pre.slice_mut(s![.., ..3 * h]).mapv_inplace(sigmoid);
    pre.slice_mut(s![.., 3 * h..]).mapv_inplace(f64::tanh);
}

/// One cell update for a batch: returns `(gates, c_t, tanh(c_t), h_t)`.
fn cell_step(
    projected: ArrayView2<'_, f64>,
    h_prev: &Array2<f64>,
    c_prev: &Array2<f64>,
    p: &LstmParams,
) -> (Array2<f64>, Array2<f64>, Array2<f64>, Array2<f64>) {
    let h = p.hidden();
    let mut gates = h_prev.dot(&p.w_rec);
    gates += &projected;
    activate_gates(&mut gates, h);
    let o = gates.slice(s![.., ..h]);
    let f = gates.slice(s![.., h..2 * h]);
    let i = gates.slice(s![.., 2 * h..3 * h]);
    let m = gates.slice(s![.., 3 * h..]);
    let c = Zip::from(&f)
        .and(c_prev)
        .and(&i)
        .and(&m)
        .map_collect(|&f, &c, &i, &m| f * c + i * m);
    let tc = c.mapv(f64::tanh);
    let hidden = &o * &tc;
    (gates, c, tc, hidden)
}

/// Single-vector LSTM step: `(h_t, c_t)`.
pub fn lstm_step(
    x: ArrayView1<'_, f64>,
    h_prev: ArrayView1<'_, f64>,
    c_prev: ArrayView1<'_, f64>,
    p: &LstmParams,
) -> Result<(Array1<f64>, Array1<f64>)> {
    p.check()?;
    let h = p.hidden();
    if x.len() != p.input() || h_prev.len() != h || c_prev.len() != h {
        return Err(DeepKeyError::Shape(format!(
            "lstm_step: x {}, h {}, c {} against params in={} hidden={h}",
            x.len(),
            h_prev.len(),
            c_prev.len(),
            p.input()
        )));
    }
    let projected = x.insert_axis(Axis(0)).dot(&p.w_in) + &p.b;
    let h_prev = h_prev.insert_axis(Axis(0)).to_owned();
    let c_prev = c_prev.insert_axis(Axis(0)).to_owned();
    let (gates, c, _, hidden) = cell_step(projected.view(), &h_prev, &c_prev, p);
    check_finite(gates.iter(), "lstm.gates")?;
    check_finite(c.iter(), "lstm.cell")?;
    check_finite(hidden.iter(), "lstm.hidden")?;
    Ok((hidden.row(0).to_owned(), c.row(0).to_owned()))
}

/// Runs the LSTM over a time-major input `[T * B, in]` from zero state.
pub(crate) fn lstm_sequence(
    input: ArrayView2<'_, f64>,
    batch: usize,
    steps: usize,
    p: &LstmParams,
) -> Result<LstmCache> {
    p.check()?;
    if input.ncols() != p.input() || input.nrows() != batch * steps {
        return Err(DeepKeyError::Shape(format!(
            "LSTM input {:?} does not match in={} with {steps} steps of {batch}",
            input.dim(),
            p.input()
        )));
    }
    let h = p.hidden();
    let projected = input.dot(&p.w_in) + &p.b;
    let mut cache = LstmCache {
        gates: Vec::with_capacity(steps),
        cells: Vec::with_capacity(steps),
        cell_tanh: Vec::with_capacity(steps),
        hidden: Vec::with_capacity(steps),
    };
    let zeros = Array2::zeros((batch, h));
    for t in 0..steps {
        let (h_prev, c_prev) = if t == 0 {
            (&zeros, &zeros)
        } else {
            (&cache.hidden[t - 1], &cache.cells[t - 1])
        };
        let rows = projected.slice(s![t * batch..(t + 1) * batch, ..]);
        let (gates, c, tc, hidden) = cell_step(rows, h_prev, c_prev, p);
        cache.gates.push(gates);
        cache.cells.push(c);
        cache.cell_tanh.push(tc);
        cache.hidden.push(hidden);
    }
    Ok(cache)
}

pub(crate) struct LstmGrads {
    pub w_in: Array2<f64>,
    pub w_rec: Array2<f64>,
    pub b: Array1<f64>,
    pub input: Array2<f64>,
}

/// Backpropagation through time when only the last hidden state feeds the loss.
pub(crate) fn lstm_backward(
    input: ArrayView2<'_, f64>,
    cache: &LstmCache,
    d_last: Array2<f64>,
    p: &LstmParams,
) -> LstmGrads {
    let steps = cache.hidden.len();
    let (batch, h) = d_last.dim();
    let mut d_projected = Array2::zeros((steps * batch, 4 * h));
    let mut dw_rec = Array2::zeros((h, 4 * h));
    let zeros = Array2::zeros((batch, h));
    let mut dh = d_last;
    let mut dc: Array2<f64> = Array2::zeros((batch, h));

    for t in (0..steps).rev() {
        let gates = &cache.gates[t];
        let tc = &cache.cell_tanh[t];
        let (c_prev, h_prev) = if t == 0 {
            (&zeros, &zeros)
        } else {
            (&cache.cells[t - 1], &cache.hidden[t - 1])
        };
        let o = gates.slice(s![.., ..h]);
        let f = gates.slice(s![.., h..2 * h]);
        let i = gates.slice(s![.., 2 * h..3 * h]);
        let m = gates.slice(s![.., 3 * h..]);

        Zip::from(&mut dc)
            .and(&dh)
            .and(&o)
            .and(tc)
            .for_each(|dc, &dh, &o, &tc| *dc += dh * o * (1.0 - tc * tc));

        let mut dg = d_projected.slice_mut(s![t * batch..(t + 1) * batch, ..]);
        Zip::from(dg.slice_mut(s![.., ..h]))
            .and(&dh)
            .and(tc)
            .and(&o)
            .for_each(|g, &dh, &tc, &o| *g = dh * tc * o * (1.0 - o));
        Zip::from(dg.slice_mut(s![.., h..2 * h]))
            .and(&dc)
            .and(c_prev)
            .and(&f)
            .for_each(|g, &dc, &cp, &f| *g = dc * cp * f * (1.0 - f));
        Zip::from(dg.slice_mut(s![.., 2 * h..3 * h]))
            .and(&dc)
            .and(&m)
            .and(&i)
            .for_each(|g, &dc, &m, &i| *g = dc * m * i * (1.0 - i));
        Zip::from(dg.slice_mut(s![.., 3 * h..]))
            .and(&dc)
            .and(&i)
            .and(&m)
            .for_each(|g, &dc, &i, &m| *g = dc * i * (1.0 - m * m));

        let dg = dg.view();
        dw_rec += &h_prev.t().dot(&dg);
        dh = dg.dot(&p.w_rec.t());
        dc.zip_mut_with(&f, |dc, &f| *dc *= f);
    }

    LstmGrads {
        w_in: input.t().dot(&d_projected),
        w_rec: dw_rec,
        b: d_projected.sum_axis(Axis(0)),
        input: d_projected.dot(&p.w_in.t()),
    }
}

/// Convenience for tests and diagnostics: final hidden state of a batch.
pub fn run_sequence(batch: &SequenceBatch, p: &LstmParams) -> Result<Array2<f64>> {
    Ok(lstm_sequence(batch.data.view(), batch.batch, batch.steps, p)?
        .last_hidden()
        .clone())
}
