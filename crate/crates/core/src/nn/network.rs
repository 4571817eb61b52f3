use ndarray::{Array1, Array2, ArrayView2, ArrayViewD, ArrayViewMutD, Axis, Zip};
use rand::{Rng, SeedableRng};

use super::dense::tanh_dense_backward;
use super::lstm::{lstm_backward, lstm_sequence};
use super::{check_finite, dense_forward, softmax_rows, DenseParams, LstmCache, LstmParams, SequenceBatch};
use crate::container::Container;
use crate::error::{DeepKeyError, Result};

/// Layer sizes of an identifier network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetworkShape {
    pub features: usize,
    pub hidden: usize,
    pub dense_layers: usize,
    pub classes: usize,
}

/// Attention-based encoder-decoder RNN.
///
/// Each step passes through `dense_layers` tanh layers, then the encoder
/// LSTM whose final hidden state is the code `C`. A second LSTM reads the
/// same dense outputs; its final hidden state, softmax-normalised, weights
/// the code elementwise. A linear decoder maps the weighted code to logits.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub dense: Vec<DenseParams>,
    pub encoder: LstmParams,
    pub attention: LstmParams,
    pub decoder: DenseParams,
}

/// Forward activations of one batch.
#[derive(Debug, Clone)]
pub struct NetState {
    pub input: SequenceBatch,
    /// Output of each dense layer, time-major `[T * B, H]`.
    pub dense_out: Vec<Array2<f64>>,
    pub encoder: LstmCache,
    pub attention: LstmCache,
    /// Code `C`, `[B, H]`.
    pub code: Array2<f64>,
    /// Unnormalised attention weights (attention LSTM output), `[B, H]`.
    pub attention_raw: Array2<f64>,
    pub attention_weights: Array2<f64>,
    pub code_att: Array2<f64>,
    pub logits: Array2<f64>,
}

pub fn attention_weights(raw: ArrayView2<'_, f64>) -> Array2<f64> {
    softmax_rows(raw)
}

pub fn weighted_code(code: ArrayView2<'_, f64>, weights: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    if code.dim() != weights.dim() {
        return Err(DeepKeyError::Shape(format!(
            "code {:?} vs attention weights {:?}",
            code.dim(),
            weights.dim()
        )));
    }
    Ok(&code * &weights)
}

pub fn decode(code_att: ArrayView2<'_, f64>, decoder: &DenseParams) -> Result<Array2<f64>> {
    dense_forward(code_att, decoder)
}

/// Mean softmax cross-entropy of logits against integer labels.
pub fn cross_entropy(logits: ArrayView2<'_, f64>, labels: &[usize]) -> Result<f64> {
    if logits.nrows() != labels.len() {
        return Err(DeepKeyError::Shape(format!(
            "{} logit rows for {} labels",
            logits.nrows(),
            labels.len()
        )));
    }
    let k = logits.ncols();
    let mut total = 0.0;
    for (row, &y) in logits.axis_iter(Axis(0)).zip(labels) {
        if y >= k {
            return Err(DeepKeyError::Data(format!("label {y} out of range for {k} classes")));
        }
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += lse - row[y];
    }
    Ok(total / labels.len() as f64)
}

impl Network {
    pub fn init<R: Rng>(rng: &mut R, shape: NetworkShape) -> Result<Self> {
        if shape.features == 0 || shape.hidden == 0 || shape.dense_layers == 0 {
            return Err(DeepKeyError::Parameter(format!("degenerate network shape {shape:?}")));
        }
        if shape.classes < 2 {
            return Err(DeepKeyError::Parameter("a classifier needs at least two classes".into()));
        }
        let mut dense = Vec::with_capacity(shape.dense_layers);
        let mut width = shape.features;
        for _ in 0..shape.dense_layers {
            dense.push(DenseParams::init(rng, width, shape.hidden));
            width = shape.hidden;
        }
        let encoder = LstmParams::init(rng, shape.hidden, shape.hidden);
        let attention = LstmParams::init(rng, shape.hidden, shape.hidden);
        let decoder = DenseParams::init(rng, shape.hidden, shape.classes);
        Ok(Self {
            dense,
            encoder,
            attention,
            decoder,
        })
    }

    pub fn shape(&self) -> NetworkShape {
        NetworkShape {
            features: self.dense[0].input(),
            hidden: self.encoder.hidden(),
            dense_layers: self.dense.len(),
            classes: self.decoder.output(),
        }
    }

    /// Writes every tensor under its [`Self::tensor_names`] name.
    pub fn to_container(&self) -> Result<Container> {
        let mut c = Container::new();
        for (name, t) in self.tensor_names().into_iter().zip(self.tensors()) {
            c.insert_view(name, t)?;
        }
        Ok(c)
    }

    /// Rebuilds a network of the given shape from named tensors.
    pub fn from_container(c: &Container, shape: NetworkShape) -> Result<Self> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut net = Self::init(&mut rng, shape)?;
        let names = net.tensor_names();
        for (name, mut t) in names.iter().zip(net.tensors_mut()) {
            let stored = c.get(name)?;
            if stored.shape != t.shape() {
                return Err(DeepKeyError::Format(format!(
                    "tensor `{name}` has shape {:?}, expected {:?}",
                    stored.shape,
                    t.shape()
                )));
            }
            t.iter_mut().zip(&stored.data).for_each(|(dst, &src)| *dst = src);
        }
        check_finite(net.tensors().iter().flat_map(|t| t.iter()).collect::<Vec<_>>(), "network")?;
        Ok(net)
    }

    pub fn zeros_like(&self) -> Self {
        let zero_dense = |d: &DenseParams| DenseParams::zeros(d.input(), d.output());
        Self {
            dense: self.dense.iter().map(zero_dense).collect(),
            encoder: LstmParams::zeros(self.encoder.input(), self.encoder.hidden()),
            attention: LstmParams::zeros(self.attention.input(), self.attention.hidden()),
            decoder: zero_dense(&self.decoder),
        }
    }

    /// Names of every tensor, in the order used by [`Self::tensors`].
    pub fn tensor_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for i in 0..self.dense.len() {
            names.push(format!("dense{i}.w"));
            names.push(format!("dense{i}.b"));
        }
        for lstm in ["encoder", "attention"] {
            names.push(format!("{lstm}.w_in"));
            names.push(format!("{lstm}.w_rec"));
            names.push(format!("{lstm}.b"));
        }
        names.push("decoder.w".into());
        names.push("decoder.b".into());
        names
    }

    pub fn tensors(&self) -> Vec<ArrayViewD<'_, f64>> {
        let mut out = Vec::new();
        for d in &self.dense {
            out.push(d.w.view().into_dyn());
            out.push(d.b.view().into_dyn());
        }
        for l in [&self.encoder, &self.attention] {
            out.push(l.w_in.view().into_dyn());
            out.push(l.w_rec.view().into_dyn());
            out.push(l.b.view().into_dyn());
        }
        out.push(self.decoder.w.view().into_dyn());
        out.push(self.decoder.b.view().into_dyn());
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<ArrayViewMutD<'_, f64>> {
        let mut out = Vec::new();
        for d in &mut self.dense {
            out.push(d.w.view_mut().into_dyn());
            out.push(d.b.view_mut().into_dyn());
        }
        for l in [&mut self.encoder, &mut self.attention] {
            out.push(l.w_in.view_mut().into_dyn());
            out.push(l.w_rec.view_mut().into_dyn());
            out.push(l.b.view_mut().into_dyn());
        }
        out.push(self.decoder.w.view_mut().into_dyn());
        out.push(self.decoder.b.view_mut().into_dyn());
        out
    }

    /// Weight matrices subject to the l2 penalty (biases excluded).
    pub fn weight_matrices(&self) -> Vec<&Array2<f64>> {
        let mut out: Vec<&Array2<f64>> = self.dense.iter().map(|d| &d.w).collect();
        out.extend([
            &self.encoder.w_in,
            &self.encoder.w_rec,
            &self.attention.w_in,
            &self.attention.w_rec,
            &self.decoder.w,
        ]);
        out
    }

    fn weight_matrices_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut out: Vec<&mut Array2<f64>> = self.dense.iter_mut().map(|d| &mut d.w).collect();
        out.extend([
            &mut self.encoder.w_in,
            &mut self.encoder.w_rec,
            &mut self.attention.w_in,
            &mut self.attention.w_rec,
            &mut self.decoder.w,
        ]);
        out
    }

    pub fn l2_penalty(&self) -> f64 {
        self.weight_matrices()
            .iter()
            .map(|w| w.iter().map(|v| v * v).sum::<f64>())
            .sum()
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Dense stack and encoder LSTM only; returns `(C, dense outputs, encoder cache)`.
    fn encode_batch(&self, batch: &SequenceBatch) -> Result<(Vec<Array2<f64>>, LstmCache)> {
        if batch.features() != self.dense[0].input() {
            return Err(DeepKeyError::Shape(format!(
                "network expects {} features, batch has {}",
                self.dense[0].input(),
                batch.features()
            )));
        }
        let mut dense_out: Vec<Array2<f64>> = Vec::with_capacity(self.dense.len());
        for layer in &self.dense {
            let x = dense_out.last().map_or(batch.data.view(), |a| a.view());
            let mut a = dense_forward(x, layer)?;
            a.mapv_inplace(f64::tanh);
            dense_out.push(a);
        }
        let top = dense_out.last().expect("at least one dense layer");
        let encoder = lstm_sequence(top.view(), batch.batch, batch.steps, &self.encoder)?;
        Ok((dense_out, encoder))
    }

    /// Code `C` for every window of the batch, `[B, H]`.
    pub fn encode(&self, batch: &SequenceBatch) -> Result<Array2<f64>> {
        let (_, encoder) = self.encode_batch(batch)?;
        let code = encoder.last_hidden().clone();
        check_finite(code.iter(), "code")?;
        Ok(code)
    }

    pub fn forward(&self, batch: &SequenceBatch) -> Result<NetState> {
        let (dense_out, encoder) = self.encode_batch(batch)?;
        let top = dense_out.last().expect("at least one dense layer");
        let attention = lstm_sequence(top.view(), batch.batch, batch.steps, &self.attention)?;
        let code = encoder.last_hidden().clone();
        let attention_raw = attention.last_hidden().clone();
        check_finite(code.iter(), "code")?;
        check_finite(attention_raw.iter(), "attention_raw")?;
        let weights = attention_weights(attention_raw.view());
        let code_att = weighted_code(code.view(), weights.view())?;
        let logits = decode(code_att.view(), &self.decoder)?;
        check_finite(logits.iter(), "logits")?;
        Ok(NetState {
            input: batch.clone(),
            dense_out,
            encoder,
            attention,
            code,
            attention_raw,
            attention_weights: weights,
            code_att,
            logits,
        })
    }

    /// Weighted code `C_att` for every window, computed in chunks.
    pub fn codes<W: std::borrow::Borrow<Array2<f64>>>(&self, windows: &[W], chunk: usize) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((windows.len(), self.encoder.hidden()));
        for (ci, part) in windows.chunks(chunk.max(1)).enumerate() {
            let state = self.forward(&SequenceBatch::from_windows(part)?)?;
            let start = ci * chunk.max(1);
            out.slice_mut(ndarray::s![start..start + part.len(), ..])
                .assign(&state.code_att);
        }
        Ok(out)
    }

    /// Cross-entropy summed over the windows of the batch, plus
    /// `lambda * sum ||W||^2` over the weight matrices (biases excluded).
    pub fn loss(&self, state: &NetState, labels: &[usize], lambda: f64) -> Result<f64> {
        let data_term = cross_entropy(state.logits.view(), labels)? * labels.len() as f64;
        let value = data_term + lambda * self.l2_penalty();
        if !value.is_finite() {
            return Err(DeepKeyError::Numeric("loss".into()));
        }
        Ok(value)
    }

    /// Exact gradient of [`Self::loss`] with respect to every parameter.
    pub fn backward(&self, state: &NetState, labels: &[usize], lambda: f64) -> Result<Network> {
        let batch = state.input.batch;
        let steps = state.input.steps;
        if labels.len() != batch {
            return Err(DeepKeyError::Shape(format!("{} labels for batch of {batch}", labels.len())));
        }
        let k = self.decoder.output();

        let mut d_logits = softmax_rows(state.logits.view());
        for (b, &y) in labels.iter().enumerate() {
            if y >= k {
                return Err(DeepKeyError::Data(format!("label {y} out of range for {k} classes")));
            }
            d_logits[[b, y]] -= 1.0;
        }

        let mut grads = self.zeros_like();
        grads.decoder.w = state.code_att.t().dot(&d_logits);
        grads.decoder.b = d_logits.sum_axis(Axis(0));

        let d_code_att = d_logits.dot(&self.decoder.w.t());
        let d_code = &d_code_att * &state.attention_weights;
        let d_weights = &d_code_att * &state.code;

        // softmax Jacobian per row: w * (g - <g, w>)
        let mut d_raw = d_weights;
        for (mut g, w) in d_raw.axis_iter_mut(Axis(0)).zip(state.attention_weights.axis_iter(Axis(0))) {
            let dot: f64 = g.iter().zip(w.iter()).map(|(a, b)| a * b).sum();
            Zip::from(&mut g).and(&w).for_each(|g, &w| *g = w * (*g - dot));
        }

        let top = state.dense_out.last().expect("at least one dense layer");
        let enc = lstm_backward(top.view(), &state.encoder, d_code, &self.encoder);
        let att = lstm_backward(top.view(), &state.attention, d_raw, &self.attention);
        debug_assert_eq!(enc.input.nrows(), batch * steps);
        grads.encoder.w_in = enc.w_in;
        grads.encoder.w_rec = enc.w_rec;
        grads.encoder.b = enc.b;
        grads.attention.w_in = att.w_in;
        grads.attention.w_rec = att.w_rec;
        grads.attention.b = att.b;

        let mut upstream = enc.input + att.input;
        for layer in (0..self.dense.len()).rev() {
            let x: ArrayView2<'_, f64> = if layer == 0 {
                state.input.data.view()
            } else {
                state.dense_out[layer - 1].view()
            };
            let (dw, db, dx) = tanh_dense_backward(
                x,
                state.dense_out[layer].view(),
                upstream,
                &self.dense[layer],
                layer > 0,
            );
            grads.dense[layer].w = dw;
            grads.dense[layer].b = db;
            upstream = dx.unwrap_or_else(|| Array2::zeros((0, 0)));
        }

        if lambda != 0.0 {
            for (g, w) in grads.weight_matrices_mut().into_iter().zip(self.weight_matrices()) {
                g.scaled_add(2.0 * lambda, w);
            }
        }

        for (name, t) in grads.tensor_names().iter().zip(grads.tensors()) {
            check_finite(t.iter(), &format!("grad.{name}"))?;
        }
        Ok(grads)
    }

    /// Decoder argmax for each window of the batch.
    pub fn predict(state: &NetState) -> Vec<usize> {
        state
            .logits
            .axis_iter(Axis(0))
            .map(|row| {
                row.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                    .0
            })
            .collect()
    }
}

impl NetState {
    pub fn code_att_row(&self, b: usize) -> Array1<f64> {
        self.code_att.row(b).to_owned()
    }
}
