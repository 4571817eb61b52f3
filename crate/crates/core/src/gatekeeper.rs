//! One-class SVM gate over raw EEG instances.
//!
//! Trained on genuine data only (nu-formulation, RBF kernel); a block of
//! instances passes when the mean sign of the per-instance decision values
//! is positive.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::container::Container;
use crate::dsp::ensure_finite;
use crate::error::{DeepKeyError, Result};

const TAU: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GateVerdict {
    Genuine,
    Impostor,
}

/// Solver settings for [`train_gate`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateParams {
    pub nu: f64,
    /// RBF width; `None` selects `1 / (d * var(z))` on standardised data.
    pub gamma: Option<f64>,
    pub tolerance: f64,
}

impl Default for GateParams {
    fn default() -> Self {
        Self {
            nu: 0.15,
            gamma: None,
            tolerance: 1e-4,
        }
    }
}

/// A trained one-class SVM.
///
/// Support vectors live in standardised space; `alphas` sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct GateModel {
    pub support_vectors: Array2<f64>,
    pub alphas: Array1<f64>,
    pub rho: f64,
    pub gamma: f64,
    pub nu: f64,
    pub mean: Array1<f64>,
    pub std: Array1<f64>,
    /// Solver iterations used.
    pub iterations: usize,
}

/// Dense RBF kernel matrix of the rows of `x`.
fn kernel_matrix(x: ArrayView2<'_, f64>, gamma: f64) -> Vec<f64> {
    let n = x.nrows();
    let norms: Vec<f64> = x.axis_iter(Axis(0)).map(|r| r.dot(&r)).collect();
    let gram = x.dot(&x.t());
    let mut q = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let d2 = (norms[i] + norms[j] - 2.0 * gram[[i, j]]).max(0.0);
            q[i * n + j] = (-gamma * d2).exp();
        }
    }
    q
}

struct Solution {
    alpha: Vec<f64>,
    rho: f64,
    iterations: usize,
}

/// SMO on `min 1/2 a'Qa  s.t. 0 <= a_i <= 1, sum a = nu * n`, with
/// second-order working-set selection.
fn solve(q: &[f64], n: usize, nu: f64, tolerance: f64) -> Result<Solution> {
    let upper = 1.0;
    let total = nu * n as f64;
    let mut alpha = vec![0.0; n];
    let full = total.floor() as usize;
    for a in alpha.iter_mut().take(full) {
        *a = upper;
    }
    if full < n {
        alpha[full] = total - full as f64;
    }

    let mut grad = vec![0.0; n];
    for (i, &a) in alpha.iter().enumerate() {
        if a != 0.0 {
            for t in 0..n {
                grad[t] += a * q[t * n + i];
            }
        }
    }

    let max_iter = 100_000usize.saturating_mul(n);
    let mut iterations = 0;
    loop {
        // i: most violating index that can still grow.
        let mut g_max = f64::NEG_INFINITY;
        let mut i_sel = None;
        for t in 0..n {
            if alpha[t] < upper && -grad[t] >= g_max {
                g_max = -grad[t];
                i_sel = Some(t);
            }
        }
        let mut g_max2 = f64::NEG_INFINITY;
        let mut j_sel = None;
        let mut best_obj = f64::INFINITY;
        if let Some(i) = i_sel {
            for t in 0..n {
                if alpha[t] > 0.0 {
                    g_max2 = g_max2.max(grad[t]);
                    let diff = g_max + grad[t];
                    if diff > 0.0 {
                        let quad = q[i * n + i] + q[t * n + t] - 2.0 * q[i * n + t];
                        let obj = -(diff * diff) / if quad > 0.0 { quad } else { TAU };
                        if obj <= best_obj {
                            best_obj = obj;
                            j_sel = Some(t);
                        }
                    }
                }
            }
        }
        let (i, j) = match (i_sel, j_sel) {
            (Some(i), Some(j)) if g_max + g_max2 >= tolerance => (i, j),
            _ => break,
        };
        iterations += 1;
        if iterations > max_iter {
            return Err(DeepKeyError::Training(format!(
                "SMO did not reach tolerance {tolerance} within {max_iter} iterations"
            )));
        }

        let (old_i, old_j) = (alpha[i], alpha[j]);
        let quad = q[i * n + i] + q[j * n + j] - 2.0 * q[i * n + j];
        let delta = (grad[i] - grad[j]) / if quad > 0.0 { quad } else { TAU };
        let sum = old_i + old_j;
        let (mut ai, mut aj) = (old_i - delta, old_j + delta);
        if sum > upper {
            if ai > upper {
                ai = upper;
                aj = sum - upper;
            }
        } else if aj < 0.0 {
            aj = 0.0;
            ai = sum;
        }
        if sum > upper {
            if aj > upper {
                aj = upper;
                ai = sum - upper;
            }
        } else if ai < 0.0 {
            ai = 0.0;
            aj = sum;
        }
        alpha[i] = ai;
        alpha[j] = aj;
        let (di, dj) = (ai - old_i, aj - old_j);
        for t in 0..n {
            grad[t] += q[t * n + i] * di + q[t * n + j] * dj;
        }
    }

    // Offset from free vectors, or the midpoint of the feasible interval.
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut free_sum, mut free_count) = (0.0, 0usize);
    for t in 0..n {
        if alpha[t] >= upper {
            lb = lb.max(grad[t]);
        } else if alpha[t] <= 0.0 {
            ub = ub.min(grad[t]);
        } else {
            free_sum += grad[t];
            free_count += 1;
        }
    }
    let rho = if free_count > 0 {
        free_sum / free_count as f64
    } else {
        (ub + lb) / 2.0
    };
    Ok(Solution { alpha, rho, iterations })
}

/// Fits the gate on genuine instances `[n, d]`.
pub fn train_gate(instances: ArrayView2<'_, f64>, params: GateParams) -> Result<GateModel> {
    let (n, d) = instances.dim();
    if n < 10 {
        return Err(DeepKeyError::Parameter(format!("gate needs at least 10 instances, got {n}")));
    }
    if !(params.nu > 0.0 && params.nu < 1.0) {
        return Err(DeepKeyError::Parameter(format!("nu must lie in (0, 1), got {}", params.nu)));
    }
    if let Some(g) = params.gamma {
        if !(g > 0.0 && g.is_finite()) {
            return Err(DeepKeyError::Parameter(format!("gamma must be positive, got {g}")));
        }
    }
    ensure_finite(instances, "gate training data")?;

    let mean = instances.mean_axis(Axis(0)).expect("n >= 10");
    let mut std = instances.std_axis(Axis(0), 0.0);
    if std.iter().all(|&s| s == 0.0) {
        return Err(DeepKeyError::Training("gate training rows are all identical".into()));
    }
    std.mapv_inplace(|s| if s > 0.0 { s } else { 1.0 });
    let z = (&instances - &mean) / &std;

    let gamma = match params.gamma {
        Some(g) => g,
        None => {
            let var = z.var(0.0);
            1.0 / (d as f64 * var)
        }
    };

    let q = kernel_matrix(z.view(), gamma);
    let sol = solve(&q, n, params.nu, params.tolerance)?;
    let scale = params.nu * n as f64;
    let sv_idx: Vec<usize> = (0..n).filter(|&i| sol.alpha[i] > 0.0).collect();
    if sv_idx.is_empty() {
        return Err(DeepKeyError::Training("no support vectors".into()));
    }
    let support_vectors = z.select(Axis(0), &sv_idx);
    let alphas = Array1::from_iter(sv_idx.iter().map(|&i| sol.alpha[i] / scale));

    Ok(GateModel {
        support_vectors,
        alphas,
        rho: sol.rho / scale,
        gamma,
        nu: params.nu,
        mean,
        std,
        iterations: sol.iterations,
    })
}

impl GateModel {
    pub fn features(&self) -> usize {
        self.mean.len()
    }

    pub fn standardise(&self, x: ArrayView1<'_, f64>) -> Array1<f64> {
        (&x - &self.mean) / &self.std
    }

    /// `sum_i alpha_i K(sv_i, x) - rho`; positive means genuine-like.
    pub fn decision_value(&self, x: ArrayView1<'_, f64>) -> Result<f64> {
        if x.len() != self.features() {
            return Err(DeepKeyError::Shape(format!(
                "gate expects {} features, got {}",
                self.features(),
                x.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(DeepKeyError::Data("non-finite gate input".into()));
        }
        let z = self.standardise(x);
        let mut acc = 0.0;
        for (sv, &a) in self.support_vectors.axis_iter(Axis(0)).zip(&self.alphas) {
            let d2: f64 = sv.iter().zip(&z).map(|(s, v)| (s - v) * (s - v)).sum();
            acc += a * (-self.gamma * d2).exp();
        }
        Ok(acc - self.rho)
    }

    pub fn decision_values(&self, rows: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        rows.axis_iter(Axis(0)).map(|r| self.decision_value(r)).collect()
    }

    pub fn to_container(&self) -> Result<Container> {
        let mut c = Container::new();
        c.insert_view("sv", self.support_vectors.view().into_dyn())?;
        c.insert_vec("alpha", self.alphas.to_vec())?;
        c.insert_scalar("rho", self.rho)?;
        c.insert_scalar("gamma", self.gamma)?;
        c.insert_scalar("nu", self.nu)?;
        c.insert_vec("mean", self.mean.to_vec())?;
        c.insert_vec("std", self.std.to_vec())?;
        c.insert_scalar("iterations", self.iterations as f64)?;
        Ok(c)
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let support_vectors = c.matrix("sv")?;
        let alphas = c.vector("alpha")?;
        let mean = c.vector("mean")?;
        let std = c.vector("std")?;
        if support_vectors.nrows() != alphas.len() || support_vectors.ncols() != mean.len() || std.len() != mean.len() {
            return Err(DeepKeyError::Format("inconsistent gate tensor shapes".into()));
        }
        Ok(Self {
            support_vectors,
            alphas,
            rho: c.scalar("rho")?,
            gamma: c.scalar("gamma")?,
            nu: c.scalar("nu")?,
            mean,
            std,
            iterations: c.count("iterations")?,
        })
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Majority vote over a block: score is the mean decision sign, ties fail closed.
pub fn filter_block(model: &GateModel, block: ArrayView2<'_, f64>) -> Result<(GateVerdict, f64)> {
    if block.nrows() == 0 {
        return Err(DeepKeyError::Data("empty gate block".into()));
    }
    let signs = model.decision_values(block)?;
    let score = signs.iter().map(|&v| sign(v)).sum::<f64>() / signs.len() as f64;
    let verdict = if score > 0.0 {
        GateVerdict::Genuine
    } else {
        GateVerdict::Impostor
    };
    Ok((verdict, score))
}
