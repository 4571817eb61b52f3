//! Per-modality subject identification: the attention RNN learns codes,
//! a k-nearest-neighbour vote over the training codes names the subject.
//!
//! EEG and gait share this implementation; they differ only in the input
//! width and in the band filter applied upstream.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::container::Container;
use crate::dsp::{Modality, Sample};
use crate::error::{DeepKeyError, Result};
use crate::nn::{adam_step, AdamState, Network, NetworkShape, SequenceBatch};
use crate::synthgen::mix_seed;

/// Forward passes are chunked so memory stays flat on large sets.
const CHUNK: usize = 512;
/// Upper bound on the fixed subset used to report training loss.
const MONITOR: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdentifierConfig {
    pub hidden: usize,
    pub dense_layers: usize,
    pub learning_rate: f64,
    pub lambda: f64,
    pub iterations: usize,
    /// Windows per Adam step; 0 means the whole training set.
    pub batch_size: usize,
    pub k: usize,
    pub seed: u64,
}

impl Default for IdentifierConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            dense_layers: 2,
            learning_rate: 0.001,
            lambda: 0.001,
            iterations: 1000,
            batch_size: 128,
            k: 3,
            seed: 0,
        }
    }
}

/// Training codes `C_att` with their class indices.
#[derive(Debug, Clone, PartialEq)]
pub struct CodeBank {
    pub codes: Array2<f64>,
    pub labels: Vec<usize>,
    pub classes: usize,
}

/// Result of one k-nearest-neighbour query.
#[derive(Debug, Clone, PartialEq)]
pub struct KnnVote {
    pub label: usize,
    /// Share of the `k` neighbours per class; the ROC score.
    pub fractions: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingTrace {
    /// Mini-batch objective before each step, divided by the batch size.
    pub batch_losses: Vec<f64>,
    /// Mean cross-entropy on a fixed subset of the training set, plus the
    /// penalty's per-window share, before the first step.
    pub initial_loss: f64,
    pub final_loss: f64,
    /// Decoder-argmax accuracy on the same subset after training.
    pub final_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Identifier {
    pub modality: Modality,
    pub network: Network,
    /// Per-feature input standardisation fitted on the training windows.
    pub mean: Array1<f64>,
    pub std: Array1<f64>,
    /// Class index to subject id.
    pub subjects: Vec<u32>,
    pub config: IdentifierConfig,
}

impl CodeBank {
    pub fn new(codes: Array2<f64>, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if codes.nrows() != labels.len() {
            return Err(DeepKeyError::Shape(format!(
                "{} codes but {} labels",
                codes.nrows(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(DeepKeyError::Data(format!("label {bad} outside 0..{classes}")));
        }
        Ok(Self { codes, labels, classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

fn squared_distance(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Majority label among the `k` nearest codes (Euclidean). Neighbours are
/// ranked by (distance, label); vote ties go to the smaller summed distance,
/// then the smaller label.
pub fn knn_vote(bank: &CodeBank, code: ArrayView1<'_, f64>, k: usize) -> Result<KnnVote> {
    if k == 0 {
        return Err(DeepKeyError::Parameter("k must be at least 1".into()));
    }
    if bank.is_empty() {
        return Err(DeepKeyError::Parameter("empty code bank".into()));
    }
    if k > bank.len() {
        return Err(DeepKeyError::Parameter(format!("k = {k} exceeds bank size {}", bank.len())));
    }
    if code.len() != bank.codes.ncols() {
        return Err(DeepKeyError::Shape(format!(
            "query has {} dimensions, bank {}",
            code.len(),
            bank.codes.ncols()
        )));
    }
    let mut ranked: Vec<(f64, usize)> = bank
        .codes
        .axis_iter(Axis(0))
        .zip(&bank.labels)
        .map(|(row, &label)| (squared_distance(row, code), label))
        .collect();
    let key = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < ranked.len() {
        ranked.select_nth_unstable_by(k - 1, key);
        ranked.truncate(k);
    }
    ranked.sort_by(key);

    let mut votes = vec![0usize; bank.classes];
    let mut spread = vec![0.0f64; bank.classes];
    for &(d2, label) in &ranked {
        votes[label] += 1;
        spread[label] += d2.sqrt();
    }
    let label = (0..bank.classes)
        .filter(|&c| votes[c] > 0)
        .min_by(|&a, &b| {
            votes[b]
                .cmp(&votes[a])
                .then(spread[a].total_cmp(&spread[b]))
                .then(a.cmp(&b))
        })
        .expect("k >= 1 neighbours");
    Ok(KnnVote {
        label,
        fractions: votes.iter().map(|&v| v as f64 / k as f64).collect(),
    })
}

pub fn knn_predict(bank: &CodeBank, code: ArrayView1<'_, f64>, k: usize) -> Result<usize> {
    Ok(knn_vote(bank, code, k)?.label)
}

/// Combines per-window votes of one request: most frequent winning label,
/// then the larger summed vote share, then the smaller label.
pub fn majority_vote(votes: &[KnnVote]) -> Option<usize> {
    let classes = votes.first()?.fractions.len();
    let mut wins = vec![0usize; classes];
    let mut share = vec![0.0f64; classes];
    for v in votes {
        wins[v.label] += 1;
        for (s, f) in share.iter_mut().zip(&v.fractions) {
            *s += f;
        }
    }
    (0..classes)
        .filter(|&c| wins[c] > 0)
        .min_by(|&a, &b| wins[b].cmp(&wins[a]).then(share[b].total_cmp(&share[a])).then(a.cmp(&b)))
}

fn class_map(samples: &[Sample], modality: Modality) -> Result<(Vec<u32>, Vec<usize>)> {
    let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        if s.modality != modality {
            return Err(DeepKeyError::Data(format!("sample {i} is {}, expected {modality}", s.modality)));
        }
        let id = s
            .subject
            .ok_or_else(|| DeepKeyError::Data(format!("sample {i} has no subject label")))?;
        *counts.entry(id).or_default() += 1;
    }
    if counts.len() < 2 {
        return Err(DeepKeyError::Config(format!(
            "identification needs at least two subjects, got {}",
            counts.len()
        )));
    }
    if let Some((id, n)) = counts.iter().find(|(_, &n)| n < 2) {
        return Err(DeepKeyError::Config(format!("subject {id} has only {n} sample(s)")));
    }
    let subjects: Vec<u32> = counts.keys().copied().collect();
    let labels = samples
        .iter()
        .map(|s| subjects.binary_search(&s.subject.expect("checked")).expect("present"))
        .collect();
    Ok((subjects, labels))
}

/// Trains the network with Adam and fills the code bank from every
/// training window.
pub fn train_identifier(samples: &[Sample], config: &IdentifierConfig) -> Result<(Identifier, CodeBank, TrainingTrace)> {
    let modality = samples
        .first()
        .ok_or_else(|| DeepKeyError::Config("no training samples".into()))?
        .modality;
    let (subjects, labels) = class_map(samples, modality)?;
    if config.k == 0 || config.k > samples.len() {
        return Err(DeepKeyError::Parameter(format!("k = {} invalid for {} samples", config.k, samples.len())));
    }
    if !(config.learning_rate > 0.0) || !(config.lambda >= 0.0) {
        return Err(DeepKeyError::Parameter("learning rate must be positive and lambda non-negative".into()));
    }
    let steps = samples[0].data.nrows();
    if let Some(bad) = samples.iter().position(|s| s.data.nrows() != steps) {
        return Err(DeepKeyError::Shape(format!("sample {bad} has a different window length")));
    }

    let rows = samples.iter().map(|s| s.data.view());
    let stacked = ndarray::concatenate(Axis(0), &rows.collect::<Vec<_>>())
        .map_err(|e| DeepKeyError::Shape(e.to_string()))?;
    crate::dsp::ensure_finite(stacked.view(), "training samples")?;
    let mean = stacked.mean_axis(Axis(0)).expect("non-empty");
    let std = stacked.std_axis(Axis(0), 0.0).mapv(|s| if s > 0.0 { s } else { 1.0 });
    drop(stacked);
    let windows: Vec<Array2<f64>> = samples.iter().map(|s| (&s.data - &mean) / &std).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, modality.code() as u64 + 1));
    let shape = NetworkShape {
        features: modality.channels(),
        hidden: config.hidden,
        dense_layers: config.dense_layers,
        classes: subjects.len(),
    };
    let mut network = Network::init(&mut rng, shape)?;
    let mut adam = AdamState::new(&network);

    let n = windows.len();
    let batch_size = if config.batch_size == 0 { n } else { config.batch_size.min(n) };
    let monitor: Vec<usize> = if n <= MONITOR {
        (0..n).collect()
    } else {
        (0..MONITOR).map(|i| i * n / MONITOR).collect()
    };
    let monitor_loss = |net: &Network| -> Result<(f64, f64)> {
        let mut total = 0.0;
        let mut correct = 0usize;
        for part in monitor.chunks(CHUNK) {
            let batch = SequenceBatch::from_windows(&part.iter().map(|&i| &windows[i]).collect::<Vec<_>>())?;
            let ys: Vec<usize> = part.iter().map(|&i| labels[i]).collect();
            let state = net.forward(&batch)?;
            total += crate::nn::cross_entropy(state.logits.view(), &ys)? * part.len() as f64;
            correct += Network::predict(&state).iter().zip(&ys).filter(|(p, y)| p == y).count();
        }
        let m = monitor.len() as f64;
        Ok((total / m + config.lambda * net.l2_penalty() / batch_size as f64, correct as f64 / m))
    };
    let (initial_loss, _) = monitor_loss(&network)?;
    let mut order: Vec<usize> = (0..n).collect();
    let mut cursor = n;
    let mut batch_losses = Vec::with_capacity(config.iterations);
    for _ in 0..config.iterations {
        if cursor + batch_size > n {
            if batch_size < n {
                order.shuffle(&mut rng);
            }
            cursor = 0;
        }
        let idx = &order[cursor..cursor + batch_size];
        cursor += batch_size;
        let batch = SequenceBatch::from_windows(&idx.iter().map(|&i| &windows[i]).collect::<Vec<_>>())?;
        let ys: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
        let state = network.forward(&batch)?;
        batch_losses.push(network.loss(&state, &ys, config.lambda)? / batch_size as f64);
        let grads = network.backward(&state, &ys, config.lambda)?;
        adam_step(&mut network, &grads, config.learning_rate, &mut adam)?;
    }
    let (final_loss, final_accuracy) = monitor_loss(&network)?;

    let identifier = Identifier {
        modality,
        network,
        mean,
        std,
        subjects,
        config: *config,
    };
    let codes = identifier.network.codes(&windows, CHUNK)?;
    let bank = CodeBank::new(codes, labels, identifier.subjects.len())?;
    Ok((
        identifier,
        bank,
        TrainingTrace {
            batch_losses,
            initial_loss,
            final_loss,
            final_accuracy,
        },
    ))
}

impl Identifier {
    pub fn classes(&self) -> usize {
        self.subjects.len()
    }

    fn prepare(&self, samples: &[Sample]) -> Result<Vec<Array2<f64>>> {
        samples
            .iter()
            .enumerate()
            .map(|(i, s)| {
                if s.modality != self.modality || s.data.ncols() != self.mean.len() {
                    return Err(DeepKeyError::Shape(format!(
                        "sample {i} ({}, {} channels) does not fit the {} identifier",
                        s.modality,
                        s.data.ncols(),
                        self.modality
                    )));
                }
                crate::dsp::ensure_finite(s.data.view(), "sample")?;
                Ok((&s.data - &self.mean) / &self.std)
            })
            .collect()
    }

    /// Weighted codes `C_att`, one row per sample.
    pub fn codes(&self, samples: &[Sample]) -> Result<Array2<f64>> {
        if samples.is_empty() {
            return Ok(Array2::zeros((0, self.network.encoder.hidden())));
        }
        self.network.codes(&self.prepare(samples)?, CHUNK)
    }

    /// KNN vote per sample, in class-index space.
    pub fn votes(&self, bank: &CodeBank, samples: &[Sample]) -> Result<Vec<KnnVote>> {
        let codes = self.codes(samples)?;
        codes
            .axis_iter(Axis(0))
            .map(|c| knn_vote(bank, c, self.config.k))
            .collect()
    }

    /// Subject id of one sample.
    pub fn identify(&self, bank: &CodeBank, sample: &Sample) -> Result<u32> {
        let vote = self.votes(bank, std::slice::from_ref(sample))?;
        Ok(self.subjects[vote[0].label])
    }

    /// Subject id from a majority vote over several windows of one request.
    pub fn identify_session(&self, bank: &CodeBank, samples: &[Sample]) -> Result<u32> {
        let votes = self.votes(bank, samples)?;
        let label = majority_vote(&votes).ok_or_else(|| DeepKeyError::Request("no windows to identify".into()))?;
        Ok(self.subjects[label])
    }

    pub fn class_of(&self, subject: u32) -> Option<usize> {
        self.subjects.iter().position(|&s| s == subject)
    }

    pub fn to_container(&self, bank: &CodeBank) -> Result<Container> {
        let c = &self.config;
        let mut out = Container::new();
        out.insert_scalar("modality", self.modality.code())?;
        out.insert_vec("subjects", self.subjects.iter().map(|&s| f64::from(s)).collect())?;
        out.insert_vec("mean", self.mean.to_vec())?;
        out.insert_vec("std", self.std.to_vec())?;
        out.insert_scalar("hidden", c.hidden as f64)?;
        out.insert_scalar("dense_layers", c.dense_layers as f64)?;
        out.insert_scalar("learning_rate", c.learning_rate)?;
        out.insert_scalar("lambda", c.lambda)?;
        out.insert_scalar("iterations", c.iterations as f64)?;
        out.insert_scalar("batch_size", c.batch_size as f64)?;
        out.insert_scalar("k", c.k as f64)?;
        out.insert_scalar("seed_hi", (c.seed >> 32) as f64)?;
        out.insert_scalar("seed_lo", (c.seed & 0xFFFF_FFFF) as f64)?;
        out.extend_prefixed("net", &self.network.to_container()?)?;
        out.insert_view("bank.codes", bank.codes.view().into_dyn())?;
        out.insert_vec("bank.labels", bank.labels.iter().map(|&l| l as f64).collect())?;
        Ok(out)
    }

    pub fn from_container(c: &Container) -> Result<(Self, CodeBank)> {
        let modality = Modality::from_code(c.scalar("modality")?)
            .ok_or_else(|| DeepKeyError::Format("unknown modality code".into()))?;
        let subjects = c
            .vector("subjects")?
            .iter()
            .map(|&v| {
                if v >= 0.0 && v.fract() == 0.0 && v <= f64::from(u32::MAX) {
                    Ok(v as u32)
                } else {
                    Err(DeepKeyError::Format(format!("bad subject id {v}")))
                }
            })
            .collect::<Result<Vec<u32>>>()?;
        let config = IdentifierConfig {
            hidden: c.count("hidden")?,
            dense_layers: c.count("dense_layers")?,
            learning_rate: c.scalar("learning_rate")?,
            lambda: c.scalar("lambda")?,
            iterations: c.count("iterations")?,
            batch_size: c.count("batch_size")?,
            k: c.count("k")?,
            seed: ((c.count("seed_hi")? as u64) << 32) | c.count("seed_lo")? as u64,
        };
        let mean = c.vector("mean")?;
        let std = c.vector("std")?;
        if mean.len() != modality.channels() || std.len() != mean.len() {
            return Err(DeepKeyError::Format("standardisation vectors do not match the modality".into()));
        }
        let shape = NetworkShape {
            features: modality.channels(),
            hidden: config.hidden,
            dense_layers: config.dense_layers,
            classes: subjects.len(),
        };
        let network = Network::from_container(&c.subset("net"), shape)?;
        let labels = c
            .vector("bank.labels")?
            .iter()
            .map(|&v| v as usize)
            .collect();
        let bank = CodeBank::new(c.matrix("bank.codes")?, labels, subjects.len())?;
        if bank.codes.ncols() != config.hidden {
            return Err(DeepKeyError::Format("code bank width differs from hidden size".into()));
        }
        Ok((
            Self {
                modality,
                network,
                mean,
                std,
                subjects,
                config,
            },
            bank,
        ))
    }
}
