//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test --release -p deepkey-core --test acceptance`.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

use deepkey::dataset::{Dataset, GenSpec};
use deepkey::dsp::{apply_filter, design_bandpass, Modality, Recording};
use deepkey::eval::{datasize_sweep, evaluate, train_on_dataset, write_reports, DETERMINISTIC_REPORTS};
use deepkey::gatekeeper::{train_gate, GateModel, GateParams, GateVerdict};
use deepkey::identifier::{knn_predict, CodeBank};
use deepkey::nn::{LstmParams, Network, NetworkShape, SequenceBatch};
use deepkey::pipeline::{authenticate_with, compose_frr, AuthReason, AuthRequest, GateStage, IdentifyStage, Limits, Verdict};
use deepkey::{Config, Result};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::{num_complex::Complex64, FftPlanner};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

// ---------------------------------------------------------------- 1

fn tiny_problem(seed: u64) -> (Network, SequenceBatch, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = NetworkShape {
        features: 3,
        hidden: 8,
        dense_layers: 2,
        classes: 3,
    };
    let net = Network::init(&mut rng, shape).unwrap();
    let windows: Vec<Array2<f64>> = (0..4)
        .map(|_| Array2::from_shape_simple_fn((5, 3), || rng.random_range(-1.5..1.5)))
        .collect();
    let labels = (0..4).map(|i| i % 3).collect();
    (net, SequenceBatch::from_windows(&windows).unwrap(), labels)
}

fn max_gradient_error(seed: u64) -> f64 {
    const STEP: f64 = 1e-5;
    let lambda = 0.001;
    let (net, batch, labels) = tiny_problem(seed);
    let state = net.forward(&batch).unwrap();
    let grads = net.backward(&state, &labels, lambda).unwrap();
    let grads: Vec<Vec<f64>> = grads.tensors().iter().map(|t| t.iter().copied().collect()).collect();
    let mut probe = net.clone();
    let mut worst = 0.0f64;
    for (ti, g) in grads.iter().enumerate() {
        for (ci, &analytic) in g.iter().enumerate() {
            let orig = probe.tensors()[ti].iter().nth(ci).copied().unwrap();
            let mut loss_with = |v: f64| {
                *probe.tensors_mut()[ti].iter_mut().nth(ci).unwrap() = v;
                let s = probe.forward(&batch).unwrap();
                probe.loss(&s, &labels, lambda).unwrap()
            };
            let numeric = (loss_with(orig + STEP) - loss_with(orig - STEP)) / (2.0 * STEP);
            loss_with(orig);
            let denom = analytic.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max((analytic - numeric).abs() / denom);
        }
    }
    worst
}

fn criterion_gradients() -> Outcome {
    let start = Instant::now();
    let worst = (0..10).map(max_gradient_error).fold(0.0, f64::max);
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst < 1e-4 && secs < 30.0,
        format!("max relative error {worst:.2e} over 10 seeds (< 1e-4), {secs:.1} s (< 30 s)"),
    )
}

// ---------------------------------------------------------------- 2

/// Error-free `a + b` and `a * b`.
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let v = s - a;
    (s, (a - (s - v)) + (b - v))
}

fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

/// `sum_k c[k] * z^k` with every product and sum error term collected
/// separately, then added back once.
fn compensated_poly(c: &[f64], z: Complex64) -> Complex64 {
    let mut power = (Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0));
    let (mut sum, mut err) = (Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0));
    for &ck in c {
        let (pr, er) = two_prod(ck, power.0.re);
        let (pi, ei) = two_prod(ck, power.0.im);
        let (sr, fr) = two_sum(sum.re, pr);
        let (si, fi) = two_sum(sum.im, pi);
        sum = Complex64::new(sr, si);
        err += Complex64::new(er + fr, ei + fi) + power.1 * ck;
        // next power in double-double: (hi + lo) * z
        let (a1, a2) = two_prod(power.0.re, z.re);
        let (b1, b2) = two_prod(-power.0.im, z.im);
        let (c1, c2) = two_prod(power.0.re, z.im);
        let (d1, d2) = two_prod(power.0.im, z.re);
        let (re, re_e) = two_sum(a1, b1);
        let (im, im_e) = two_sum(c1, d1);
        power = (
            Complex64::new(re, im),
            Complex64::new(a2 + b2 + re_e, c2 + d2 + im_e) + power.1 * z,
        );
    }
    sum + err
}

fn gain(b: &[f64], a: &[f64], f: f64, fs: f64) -> f64 {
    let z = Complex64::from_polar(1.0, -2.0 * PI * f / fs);
    (compensated_poly(b, z) / compensated_poly(a, z)).norm()
}

fn criterion_filter() -> Outcome {
    let fs = 128.0;
    let f = design_bandpass(3, 0.5, 3.5, fs).unwrap();
    let (b, a) = (&f.b, &f.a);
    let peak = (0..=6400).map(|i| gain(b, a, i as f64 * 0.01, fs)).fold(0.0, f64::max);
    let at10 = gain(b, a, 10.0, fs);
    let at0 = gain(b, a, 0.0, fs);
    let low = gain(b, a, 0.5, fs) / peak;
    let high = gain(b, a, 3.5, fs) / peak;
    let cutoff_err = ((low - FRAC_1_SQRT_2).abs()).max((high - FRAC_1_SQRT_2).abs()) / FRAC_1_SQRT_2;

    let n = 8192;
    let mut impulse = Array2::zeros((n, 14));
    impulse[[0, 3]] = 1.0;
    let rec = Recording::new(Modality::Eeg, fs, impulse, None).unwrap();
    let response = apply_filter(&f, &rec).unwrap();
    let mut spectrum: Vec<Complex64> = response.data().column(3).iter().map(|&v| Complex64::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut spectrum);
    let fft_err = spectrum
        .iter()
        .take(n / 2 + 1)
        .enumerate()
        .map(|(k, c)| (c.norm() - gain(b, a, k as f64 * fs / n as f64, fs)).abs())
        .fold(0.0, f64::max);

    let pass = at10 <= 0.05 && at0 < 1e-6 && cutoff_err <= 0.02 && fft_err <= 1e-9;
    outcome(
        pass,
        format!(
            "|H(10)| {at10:.2e} (<= 0.05), |H(0)| {at0:.1e} (< 1e-6), cutoff deviation {:.2}% (<= 2%), FFT error {fft_err:.1e} (<= 1e-9)",
            cutoff_err * 100.0
        ),
    )
}

// ---------------------------------------------------------------- 3

fn gaussian(n: usize, d: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_simple_fn((n, d), || StandardNormal.sample(&mut rng))
}

fn criterion_nu() -> Outcome {
    let start = Instant::now();
    let (mut lo, mut hi, mut sv_min) = (1.0f64, 0.0f64, 1.0f64);
    for seed in 0..5 {
        let x = gaussian(1000, 14, 100 + seed);
        let m = train_gate(x.view(), GateParams::default()).unwrap();
        let values = m.decision_values(x.view()).unwrap();
        let outliers = values.iter().filter(|&&v| v < 0.0).count() as f64 / 1000.0;
        lo = lo.min(outliers);
        hi = hi.max(outliers);
        sv_min = sv_min.min(m.alphas.len() as f64 / 1000.0);
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        lo >= 0.10 && hi <= 0.20 && sv_min >= 0.13 && secs < 60.0,
        format!("outlier fraction in [{lo:.3}, {hi:.3}] (within [0.10, 0.20]), min SV fraction {sv_min:.3} (>= 0.13), {secs:.1} s (< 60 s)"),
    )
}

// ---------------------------------------------------------------- 4

/// Brute-force KNN: full sort, explicit vote counting and tie rules.
fn brute_knn(codes: &Array2<f64>, labels: &[usize], q: &[f64], k: usize, classes: usize) -> usize {
    let mut all: Vec<(f64, usize)> = (0..codes.nrows())
        .map(|i| {
            let d: f64 = (0..q.len()).map(|j| (codes[[i, j]] - q[j]).powi(2)).sum();
            (d, labels[i])
        })
        .collect();
    all.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
    let mut count = vec![0usize; classes];
    let mut dist = vec![0.0f64; classes];
    for &(d, l) in &all[..k] {
        count[l] += 1;
        dist[l] += d.sqrt();
    }
    let mut best = 0;
    for c in 1..classes {
        if count[c] > count[best] || (count[c] == count[best] && count[c] > 0 && dist[c] < dist[best]) {
            best = c;
        }
    }
    if count[best] == 0 {
        best = (0..classes).find(|&c| count[c] > 0).unwrap();
    }
    best
}

fn knn_mismatches() -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let classes = 6;
    let codes = Array2::from_shape_simple_fn((200, 64), || rng.random_range(-1.0..1.0));
    let labels: Vec<usize> = (0..200).map(|_| rng.random_range(0..classes)).collect();
    let bank = CodeBank::new(codes.clone(), labels.clone(), classes).unwrap();
    let mut bad = 0;
    for _ in 0..200 {
        let q: Vec<f64> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
        for k in [1, 3] {
            let fast = knn_predict(&bank, Array1::from(q.clone()).view(), k).unwrap();
            bad += usize::from(fast != brute_knn(&codes, &labels, &q, k, classes));
        }
    }
    bad
}

fn naive_decision(m: &GateModel, x: &[f64]) -> f64 {
    let mut total = 0.0;
    for i in 0..m.support_vectors.nrows() {
        let mut d2 = 0.0;
        for c in 0..x.len() {
            let z = (x[c] - m.mean[c]) / m.std[c];
            d2 += (m.support_vectors[[i, c]] - z).powi(2);
        }
        total += m.alphas[i] * (-m.gamma * d2).exp();
    }
    total - m.rho
}

fn svm_error() -> f64 {
    let x = gaussian(500, 14, 7) * 2.0 + 0.5;
    let m = train_gate(x.view(), GateParams::default()).unwrap();
    let probes = gaussian(100, 14, 8) * 3.0;
    probes
        .rows()
        .into_iter()
        .map(|r| (m.decision_value(r).unwrap() - naive_decision(&m, r.as_slice().unwrap())).abs())
        .fold(0.0, f64::max)
}

fn scalar_dense(x: &[f64], w: &Array2<f64>, b: &Array1<f64>) -> Vec<f64> {
    (0..w.ncols())
        .map(|o| {
            let mut acc = b[o];
            for (i, xv) in x.iter().enumerate() {
                acc += xv * w[[i, o]];
            }
            acc
        })
        .collect()
}

fn scalar_lstm(seq: &[Vec<f64>], p: &LstmParams) -> Vec<f64> {
    let n = p.w_rec.nrows();
    let (mut h, mut c) = (vec![0.0; n], vec![0.0; n]);
    let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
    for x in seq {
        let pre = |gate: usize, u: usize| {
            let col = gate * n + u;
            let mut acc = p.b[col];
            for (k, xv) in x.iter().enumerate() {
                acc += xv * p.w_in[[k, col]];
            }
            for (k, hv) in h.iter().enumerate() {
                acc += hv * p.w_rec[[k, col]];
            }
            acc
        };
        let mut h2 = vec![0.0; n];
        let mut c2 = vec![0.0; n];
        for u in 0..n {
            let (o, f, i, m) = (sig(pre(0, u)), sig(pre(1, u)), sig(pre(2, u)), pre(3, u).tanh());
            c2[u] = f * c[u] + i * m;
            h2[u] = o * c2[u].tanh();
        }
        h = h2;
        c = c2;
    }
    h
}

/// Scalar forward of one window: returns (C_att, logits).
fn scalar_network(net: &Network, window: &Array2<f64>) -> (Vec<f64>, Vec<f64>) {
    let seq: Vec<Vec<f64>> = window
        .rows()
        .into_iter()
        .map(|row| {
            let mut x = row.to_vec();
            for layer in &net.dense {
                x = scalar_dense(&x, &layer.w, &layer.b).into_iter().map(f64::tanh).collect();
            }
            x
        })
        .collect();
    let code = scalar_lstm(&seq, &net.encoder);
    let raw = scalar_lstm(&seq, &net.attention);
    let peak = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = raw.iter().map(|v| (v - peak).exp()).collect();
    let total: f64 = exps.iter().sum();
    let att: Vec<f64> = code.iter().zip(&exps).map(|(c, e)| c * e / total).collect();
    let logits = scalar_dense(&att, &net.decoder.w, &net.decoder.b);
    (att, logits)
}

fn forward_error() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let shape = NetworkShape {
        features: 14,
        hidden: 16,
        dense_layers: 2,
        classes: 5,
    };
    let net = Network::init(&mut rng, shape).unwrap();
    let windows: Vec<Array2<f64>> = (0..6)
        .map(|_| Array2::from_shape_simple_fn((10, 14), || rng.random_range(-2.0..2.0)))
        .collect();
    let state = net.forward(&SequenceBatch::from_windows(&windows).unwrap()).unwrap();
    let mut worst = 0.0f64;
    for (b, w) in windows.iter().enumerate() {
        let (att, logits) = scalar_network(&net, w);
        for (j, v) in att.iter().enumerate() {
            worst = worst.max((state.code_att[[b, j]] - v).abs());
        }
        for (j, v) in logits.iter().enumerate() {
            worst = worst.max((state.logits[[b, j]] - v).abs());
        }
    }
    worst
}

fn criterion_oracles() -> Outcome {
    let knn_bad = knn_mismatches();
    let svm = svm_error();
    let fwd = forward_error();
    outcome(
        knn_bad == 0 && svm <= 1e-10 && fwd <= 1e-12,
        format!("KNN mismatches {knn_bad}/400 (0), OC-SVM max diff {svm:.1e} (<= 1e-10), forward max diff {fwd:.1e} (<= 1e-12)"),
    )
}

// ---------------------------------------------------------------- 5

struct StubGate(GateVerdict);
struct StubId(u32, AtomicUsize);

impl GateStage for StubGate {
    fn screen(&self, _: &Recording) -> Result<(GateVerdict, f64)> {
        Ok((self.0, if self.0 == GateVerdict::Genuine { 1.0 } else { -1.0 }))
    }
}

impl IdentifyStage for StubId {
    fn identify(&self, _: &Recording) -> Result<u32> {
        self.1.fetch_add(1, Ordering::SeqCst);
        Ok(self.0)
    }
}

fn criterion_fusion() -> Outcome {
    let eeg = Recording::new(Modality::Eeg, 128.0, Array2::zeros((200, 14)), None).unwrap();
    let gait = Recording::new(Modality::Gait, 80.0, Array2::zeros((125, 27)), None).unwrap();
    let req = AuthRequest::new(eeg, gait).unwrap();
    let limits = Limits {
        gate_block: 200,
        window: 10,
    };
    let mut right = 0;
    for verdict in [GateVerdict::Genuine, GateVerdict::Impostor] {
        for e in 0..2 {
            for g in 0..2 {
                let (ei, gi) = (StubId(e, AtomicUsize::new(0)), StubId(g, AtomicUsize::new(0)));
                let d = authenticate_with(&StubGate(verdict), &ei, &gi, limits, &req).unwrap();
                let calls = ei.1.load(Ordering::SeqCst) + gi.1.load(Ordering::SeqCst);
                let expected = match verdict {
                    GateVerdict::Impostor => {
                        d.verdict == Verdict::Deny && d.reason == AuthReason::ImpostorFiltered && d.e_id.is_none() && d.g_id.is_none() && calls == 0
                    }
                    GateVerdict::Genuine if e == g => d.verdict == Verdict::Approve && d.reason == AuthReason::Approved && d.e_id == Some(e) && d.g_id == Some(g),
                    GateVerdict::Genuine => d.verdict == Verdict::Deny && d.reason == AuthReason::IdMismatch && calls == 2,
                };
                right += usize::from(expected);
            }
        }
    }
    let frr = compose_frr(0.006, 0.9961, 0.9996).unwrap();
    outcome(
        right == 8 && (frr - 0.01027).abs() <= 1e-5,
        format!("truth table {right}/8, compose_frr(0.006, 0.9961, 0.9996) = {frr:.6} (0.01027 +/- 1e-5)"),
    )
}

// ---------------------------------------------------------------- 6, 7

fn cohort() -> Dataset {
    Dataset::generate(&GenSpec {
        subjects: 7,
        sessions: 3,
        seconds: 60.0,
        seed: 42,
        seconds_for: vec![(6, 120.0)],
    })
    .unwrap()
}

fn criteria_end_to_end() -> (Outcome, Outcome) {
    let start = Instant::now();
    let data = cohort();
    let config = Config::default();
    let enrolled: Vec<u32> = (0..6).collect();
    let multi = train_on_dataset(&data, &enrolled, &config, 1.0).unwrap();
    let report = evaluate(&multi.system, &data, &[6]).unwrap();
    let single_data = data.filter(|e| e.session == 0);
    let single = train_on_dataset(&single_data, &enrolled, &config, 1.0).unwrap();
    let secs = start.elapsed().as_secs_f64();

    let gate_far = report.gate.far.unwrap_or(f64::NAN);
    let fused_frr = report.fused.frr.unwrap_or(f64::NAN);
    let (me, mg) = (multi.eeg.accuracy(), multi.gait.accuracy());
    let (se, sg) = (single.eeg.accuracy(), single.gait.accuracy());
    let pass6 = report.gate.impostors >= 200
        && gate_far == 0.0
        && fused_frr <= 0.05
        && me.min(mg) >= 0.95
        && se >= me
        && sg >= mg
        && secs < 900.0;
    let six = outcome(
        pass6,
        format!(
            "gate FAR {gate_far} on {} impostor blocks (0 on >= 200), fused FRR {fused_frr:.4} (<= 0.05), \
             accuracy EEG {me:.4} gait {mg:.4} (>= 0.95), single-session EEG {se:.4} gait {sg:.4} (>= multi), {secs:.0} s (< 900 s)",
            report.gate.impostors
        ),
    );

    let sweep = datasize_sweep(&data, &enrolled, &config, &[0.2], &[Modality::Eeg]).unwrap();
    let at20 = sweep[0].eeg.unwrap();
    let seven = outcome(
        me >= at20,
        format!("EEG accuracy at 100% {me:.4} >= at 20% {at20:.4}"),
    );
    (six, seven)
}

// ---------------------------------------------------------------- 8

fn criterion_determinism() -> Outcome {
    let spec = GenSpec {
        subjects: 4,
        sessions: 2,
        seconds: 20.0,
        seed: 8,
        seconds_for: vec![],
    };
    let config = Config {
        eeg_iterations: 40,
        gait_iterations: 40,
        hidden: 16,
        seed: 5,
        ..Config::default()
    };
    let enrolled = [0, 1, 2];
    let run = || {
        let data = Dataset::generate(&spec).unwrap();
        let trained = train_on_dataset(&data, &enrolled, &config, 1.0).unwrap();
        let report = evaluate(&trained.system, &data, &[3]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_reports(dir.path(), &report).unwrap();
        let reports: Vec<Vec<u8>> = DETERMINISTIC_REPORTS
            .iter()
            .map(|n| std::fs::read(dir.path().join(n)).unwrap())
            .collect();
        (trained.system.to_bytes().unwrap(), reports)
    };
    let (bundle_a, reports_a) = run();
    let (bundle_b, reports_b) = run();
    let same_bundle = bundle_a == bundle_b;
    let same_reports = reports_a == reports_b;
    outcome(
        same_bundle && same_reports,
        format!(
            "bundles identical: {same_bundle} ({} bytes), {} reports identical: {same_reports}",
            bundle_a.len(),
            reports_a.len()
        ),
    )
}

fn main() -> ExitCode {
    let mut all = true;
    let mut report = |n: usize, name: &str, o: Outcome| {
        all &= o.pass;
        println!("{} [{n}] {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    };
    report(1, "gradient correctness", criterion_gradients());
    report(2, "filter correctness", criterion_filter());
    report(3, "nu-property", criterion_nu());
    report(4, "oracle equivalence", criterion_oracles());
    report(5, "fusion truth table", criterion_fusion());
    if std::env::var_os("ACCEPTANCE_QUICK").is_some() {
        return ExitCode::SUCCESS;
    }
    let (six, seven) = criteria_end_to_end();
    report(6, "end-to-end synthetic cohort", six);
    report(7, "datasize sweep", seven);
    report(8, "determinism", criterion_determinism());
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
