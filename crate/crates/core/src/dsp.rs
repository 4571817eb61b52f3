//! Filter design, filtering and windowing for EEG and gait recordings.

use std::f64::consts::PI;
use std::fmt;

use ndarray::{s, Array2, ArrayView2, Axis};
use num_complex::Complex64;

use crate::error::{DeepKeyError, Result};

/// Sensor modality of a recording.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Modality {
    Eeg,
    Gait,
}

impl Modality {
    /// 14 electrodes on the headset; 3 IMUs x 9 axes for gait.
    pub fn channels(self) -> usize {
        match self {
            Modality::Eeg => 14,
            Modality::Gait => 27,
        }
    }

    pub fn sample_rate(self) -> f64 {
        match self {
            Modality::Eeg => 128.0,
            Modality::Gait => 80.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Eeg => "eeg",
            Modality::Gait => "gait",
        }
    }

    pub fn code(self) -> f64 {
        match self {
            Modality::Eeg => 0.0,
            Modality::Gait => 1.0,
        }
    }

    pub fn from_code(code: f64) -> Option<Self> {
        match code as i64 {
            0 => Some(Modality::Eeg),
            1 => Some(Modality::Gait),
            _ => None,
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Modality {
    type Err = DeepKeyError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "eeg" => Ok(Modality::Eeg),
            "gait" => Ok(Modality::Gait),
            other => Err(DeepKeyError::Data(format!("unknown modality `{other}`"))),
        }
    }
}

/// A multichannel time series, one row per instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    modality: Modality,
    sample_rate: f64,
    data: Array2<f64>,
    subject: Option<u32>,
}

impl Recording {
    pub fn new(
        modality: Modality,
        sample_rate: f64,
        data: Array2<f64>,
        subject: Option<u32>,
    ) -> Result<Self> {
        if !(sample_rate > 0.0 && sample_rate.is_finite()) {
            return Err(DeepKeyError::Data(format!(
                "sample rate must be positive, got {sample_rate}"
            )));
        }
        if data.nrows() == 0 {
            return Err(DeepKeyError::Data("recording has no instances".into()));
        }
        if data.ncols() != modality.channels() {
            return Err(DeepKeyError::Data(format!(
                "{modality} recording needs {} channels, got {}",
                modality.channels(),
                data.ncols()
            )));
        }
        ensure_finite(data.view(), "recording")?;
        Ok(Self {
            modality,
            sample_rate,
            data,
            subject,
        })
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn into_data(self) -> Array2<f64> {
        self.data
    }

    pub fn subject(&self) -> Option<u32> {
        self.subject
    }

    pub fn len(&self) -> usize {
        self.data.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.data.nrows() == 0
    }

    pub fn channels(&self) -> usize {
        self.data.ncols()
    }

    /// Rows `start..end`, keeping metadata. Errors when the range is empty.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        let end = end.min(self.len());
        if start >= end {
            return Err(DeepKeyError::Data(format!(
                "empty slice {start}..{end} of a {}-instance recording",
                self.len()
            )));
        }
        Ok(Self {
            modality: self.modality,
            sample_rate: self.sample_rate,
            data: self.data.slice(s![start..end, ..]).to_owned(),
            subject: self.subject,
        })
    }

    fn with_data(&self, data: Array2<f64>) -> Self {
        Self {
            modality: self.modality,
            sample_rate: self.sample_rate,
            data,
            subject: self.subject,
        }
    }
}

/// A fixed-length window of a recording: the RNN input unit.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub data: Array2<f64>,
    pub modality: Modality,
    pub subject: Option<u32>,
}

/// IIR coefficients `b / a` of a digital filter, with `a[0] == 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterCoefficients {
    pub b: Vec<f64>,
    pub a: Vec<f64>,
    pub low_hz: f64,
    pub high_hz: f64,
    pub fs: f64,
}

impl FilterCoefficients {
    /// Complex frequency response at `freq_hz`.
    pub fn response(&self, freq_hz: f64) -> Complex64 {
        let w = 2.0 * PI * freq_hz / self.fs;
        let z_inv = Complex64::from_polar(1.0, -w);
        horner(&self.b, z_inv) / horner(&self.a, z_inv)
    }

    pub fn magnitude(&self, freq_hz: f64) -> f64 {
        self.response(freq_hz).norm()
    }

    /// Roots of the denominator polynomial.
    pub fn poles(&self) -> Vec<Complex64> {
        polynomial_roots(&self.a)
    }

    pub fn is_stable(&self) -> bool {
        self.poles().iter().all(|p| p.norm() < 1.0)
    }
}

/// Digital Butterworth band-pass of the given prototype order.
///
/// Analog low-pass prototype, low-pass to band-pass transform, then the
/// bilinear transform with both edges pre-warped. The resulting transfer
/// function has order `2 * order`.
pub fn design_bandpass(order: usize, low_hz: f64, high_hz: f64, fs: f64) -> Result<FilterCoefficients> {
    if order == 0 {
        return Err(DeepKeyError::Parameter("filter order must be at least 1".into()));
    }
    if !(fs > 0.0 && fs.is_finite()) {
        return Err(DeepKeyError::Parameter(format!("sample rate must be positive, got {fs}")));
    }
    if !(low_hz > 0.0 && low_hz < high_hz && high_hz < fs / 2.0) {
        return Err(DeepKeyError::Parameter(format!(
            "band edges must satisfy 0 < low < high < fs/2, got {low_hz}..{high_hz} at fs={fs}"
        )));
    }

    let fs2 = 2.0 * fs;
    let warped_low = fs2 * (PI * low_hz / fs).tan();
    let warped_high = fs2 * (PI * high_hz / fs).tan();
    let bandwidth = warped_high - warped_low;
    let center_sq = warped_low * warped_high;

    let prototype: Vec<Complex64> = (0..order)
        .map(|k| {
            let theta = PI * (2 * k + order + 1) as f64 / (2 * order) as f64;
            Complex64::from_polar(1.0, theta)
        })
        .collect();

    let mut analog_poles = Vec::with_capacity(2 * order);
    for p in &prototype {
        let half = p * bandwidth / 2.0;
        let disc = (half * half - center_sq).sqrt();
        analog_poles.push(half + disc);
        analog_poles.push(half - disc);
    }
    // `order` zeros at s = 0 and `order` at infinity.
    let analog_gain = bandwidth.powi(order as i32);

    let bilinear = |s: Complex64| (fs2 + s) / (fs2 - s);
    let digital_poles: Vec<Complex64> = analog_poles.iter().map(|&p| bilinear(p)).collect();
    let mut digital_zeros = vec![Complex64::new(1.0, 0.0); order];
    digital_zeros.extend(std::iter::repeat(Complex64::new(-1.0, 0.0)).take(order));

    let zero_factor = Complex64::new(fs2, 0.0).powu(order as u32);
    let pole_factor = analog_poles
        .iter()
        .fold(Complex64::new(1.0, 0.0), |acc, &p| acc * (fs2 - p));
    let gain = analog_gain * (zero_factor / pole_factor).re;

    let b: Vec<f64> = poly_from_roots(&digital_zeros).into_iter().map(|c| c * gain).collect();
    let a = poly_from_roots(&digital_poles);

    let coeffs = FilterCoefficients {
        b,
        a,
        low_hz,
        high_hz,
        fs,
    };
    if coeffs.b.iter().chain(&coeffs.a).any(|c| !c.is_finite()) {
        return Err(DeepKeyError::Numeric("filter coefficients".into()));
    }
    Ok(coeffs)
}

/// Real coefficients (highest power first) of `prod (z - r)`.
fn poly_from_roots(roots: &[Complex64]) -> Vec<f64> {
    let mut poly = vec![Complex64::new(1.0, 0.0)];
    for &r in roots {
        let mut next = vec![Complex64::new(0.0, 0.0); poly.len() + 1];
        for (i, &c) in poly.iter().enumerate() {
            next[i] += c;
            next[i + 1] -= c * r;
        }
        poly = next;
    }
    poly.into_iter().map(|c| c.re).collect()
}

/// Durand-Kerner root finding for a monic-normalisable polynomial.
fn polynomial_roots(coeffs: &[f64]) -> Vec<Complex64> {
    let lead = coeffs.iter().position(|&c| c != 0.0).unwrap_or(coeffs.len());
    let coeffs = &coeffs[lead..];
    if coeffs.len() < 2 {
        return Vec::new();
    }
    let degree = coeffs.len() - 1;
    let monic: Vec<f64> = coeffs.iter().map(|c| c / coeffs[0]).collect();
    let eval = |z: Complex64| {
        monic
            .iter()
            .fold(Complex64::new(0.0, 0.0), |acc, &c| acc * z + c)
    };
    let seed = Complex64::new(0.4, 0.9);
    let mut roots: Vec<Complex64> = (0..degree).map(|k| seed.powu(k as u32)).collect();
    for _ in 0..500 {
        let mut max_step = 0.0f64;
        for i in 0..degree {
            let denom = roots
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .fold(Complex64::new(1.0, 0.0), |acc, (_, &r)| acc * (roots[i] - r));
            let step = eval(roots[i]) / denom;
            roots[i] -= step;
            max_step = max_step.max(step.norm());
        }
        if max_step < 1e-14 {
            break;
        }
    }
    roots
}

pub(crate) fn ensure_finite(data: ArrayView2<'_, f64>, what: &str) -> Result<()> {
    if let Some(((row, col), v)) = data.indexed_iter().find(|(_, v)| !v.is_finite()) {
        return Err(DeepKeyError::Data(format!(
            "{what}: non-finite value {v} at instance {row}, channel {col}"
        )));
    }
    Ok(())
}

/// Unevaluated sum `hi + lo` carried through the filter recursion.
#[derive(Clone, Copy, Default)]
struct Wide {
    hi: f64,
    lo: f64,
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

impl Wide {
    fn normalised(hi: f64, lo: f64) -> Self {
        let s = hi + lo;
        Self { hi: s, lo: lo - (s - hi) }
    }

    fn add(self, o: Wide) -> Self {
        let (s, e) = two_sum(self.hi, o.hi);
        Self::normalised(s, e + self.lo + o.lo)
    }

    fn scale(self, c: f64) -> Self {
        let p = self.hi * c;
        let e = self.hi.mul_add(c, -p);
        Self::normalised(p, e + self.lo * c)
    }

    fn product(x: f64, c: f64) -> Self {
        let p = x * c;
        Self { hi: p, lo: x.mul_add(c, -p) }
    }
}

/// `sum_k c[k] z^k` in double-double arithmetic. Near the passband the
/// denominator is a small difference of large terms.
fn horner(coeffs: &[f64], z: Complex64) -> Complex64 {
    let (mut re, mut im) = (Wide::default(), Wide::default());
    for &c in coeffs.iter().rev() {
        let next_re = re.scale(z.re).add(im.scale(-z.im)).add(Wide { hi: c, lo: 0.0 });
        im = re.scale(z.im).add(im.scale(z.re));
        re = next_re;
    }
    Complex64::new(re.hi + re.lo, im.hi + im.lo)
}

/// Direct-form-II-transposed filtering of every column, zero initial state.
///
/// The delay line is kept in double-double precision: with poles this close
/// to the unit circle, plain `f64` state drifts from the exact response by
/// about 1e-8.
pub fn filter_channels(coeffs: &FilterCoefficients, data: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    ensure_finite(data, "filter input")?;
    let order = coeffs.a.len().max(coeffs.b.len());
    let mut b = coeffs.b.clone();
    let mut a = coeffs.a.clone();
    b.resize(order, 0.0);
    a.resize(order, 0.0);
    let a0 = a[0];
    if a0 == 0.0 {
        return Err(DeepKeyError::Parameter("a[0] must be non-zero".into()));
    }
    for c in b.iter_mut().chain(a.iter_mut()) {
        *c /= a0;
    }

    let mut out = Array2::zeros(data.raw_dim());
    let mut state = vec![Wide::default(); order];
    for (input, mut output) in data.axis_iter(Axis(1)).zip(out.axis_iter_mut(Axis(1))) {
        state.iter_mut().for_each(|z| *z = Wide::default());
        for (&x, y_out) in input.iter().zip(output.iter_mut()) {
            let y = Wide::product(x, b[0]).add(state[0]);
            for i in 1..order {
                let carry = if i + 1 < order { state[i] } else { Wide::default() };
                state[i - 1] = Wide::product(x, b[i]).add(y.scale(-a[i])).add(carry);
            }
            *y_out = y.hi + y.lo;
        }
    }
    Ok(out)
}

pub fn apply_filter(coeffs: &FilterCoefficients, rec: &Recording) -> Result<Recording> {
    let filtered = filter_channels(coeffs, rec.data.view())?;
    Ok(rec.with_data(filtered))
}

/// Per-channel mean removal.
pub fn remove_mean(rec: &Recording) -> Recording {
    let mean = rec.data.mean_axis(Axis(0)).expect("recording is non-empty");
    rec.with_data(&rec.data - &mean)
}

/// EEG identification front end: per-channel mean removal, then the band-pass.
///
/// Short authentication requests are filtered from a zero state, so the
/// electrode DC level would otherwise ring through the whole request.
pub fn delta_band(coeffs: &FilterCoefficients, rec: &Recording) -> Result<Recording> {
    apply_filter(coeffs, &remove_mean(rec))
}

fn windows(n: usize, window: usize, overlap: usize) -> Result<impl Iterator<Item = usize>> {
    if window == 0 {
        return Err(DeepKeyError::Parameter("window must be at least 1".into()));
    }
    if overlap >= window {
        return Err(DeepKeyError::Parameter(format!(
            "overlap {overlap} must be smaller than window {window}"
        )));
    }
    let stride = window - overlap;
    let count = if n < window { 0 } else { (n - window) / stride + 1 };
    Ok((0..count).map(move |i| i * stride))
}

/// Cuts a recording into consecutive windows; the short tail is dropped.
pub fn segment(rec: &Recording, window: usize, overlap: usize) -> Result<Vec<Sample>> {
    Ok(windows(rec.len(), window, overlap)?
        .map(|start| Sample {
            data: rec.data.slice(s![start..start + window, ..]).to_owned(),
            modality: rec.modality,
            subject: rec.subject,
        })
        .collect())
}

/// Non-overlapping blocks for the gatekeeper.
pub fn segment_block(rec: &Recording, block: usize) -> Result<Vec<Array2<f64>>> {
    Ok(windows(rec.len(), block, 0)?
        .map(|start| rec.data.slice(s![start..start + block, ..]).to_owned())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array1;

    fn delta() -> FilterCoefficients {
        design_bandpass(3, 0.5, 3.5, 128.0).unwrap()
    }

    fn eeg(n: usize, f: impl Fn(usize, usize) -> f64) -> Recording {
        Recording::new(Modality::Eeg, 128.0, Array2::from_shape_fn((n, 14), |(i, c)| f(i, c)), Some(0)).unwrap()
    }

    #[test]
    fn delta_filter_has_seven_taps_and_unit_leading_denominator() {
        let c = delta();
        assert_eq!(c.b.len(), 7);
        assert_eq!(c.a.len(), 7);
        assert!((c.a[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn delta_filter_zeros_at_dc_and_nyquist() {
        let c = delta();
        assert!(c.magnitude(0.0) < 1e-6);
        assert!(c.magnitude(64.0) < 1e-6);
    }

    #[test]
    fn passband_and_stopband_on_integer_grid() {
        let c = delta();
        let peak = (0..=64).map(|f| c.magnitude(f as f64)).fold(0.0, f64::max);
        assert!(c.magnitude(2.0) >= 0.95 * peak);
        assert!(c.magnitude(10.0) <= 0.05);
    }

    #[test]
    fn cutoffs_sit_at_half_power() {
        for (order, lo, hi, fs) in [(3, 0.5, 3.5, 128.0), (2, 4.0, 8.0, 128.0), (4, 1.0, 20.0, 80.0)] {
            let c = design_bandpass(order, lo, hi, fs).unwrap();
            let peak = (0..20000)
                .map(|i| c.magnitude(lo + (hi - lo) * i as f64 / 20000.0))
                .fold(0.0, f64::max);
            for edge in [lo, hi] {
                let rel = c.magnitude(edge) / peak / std::f64::consts::FRAC_1_SQRT_2;
                assert!((rel - 1.0).abs() < 0.02, "order {order} edge {edge}: {rel}");
            }
        }
    }

    #[test]
    fn designed_filters_are_stable() {
        for order in 1..=5 {
            for (lo, hi) in [(0.5, 3.5), (8.0, 12.0), (12.0, 30.0)] {
                assert!(design_bandpass(order, lo, hi, 128.0).unwrap().is_stable());
            }
        }
    }

    #[test]
    fn rejects_bad_band_edges() {
        assert!(matches!(design_bandpass(3, 3.5, 0.5, 128.0), Err(DeepKeyError::Parameter(_))));
        assert!(matches!(design_bandpass(3, 0.5, 64.0, 128.0), Err(DeepKeyError::Parameter(_))));
        assert!(matches!(design_bandpass(3, 0.0, 3.0, 128.0), Err(DeepKeyError::Parameter(_))));
        assert!(matches!(design_bandpass(0, 0.5, 3.5, 128.0), Err(DeepKeyError::Parameter(_))));
    }

    #[test]
    fn zero_in_zero_out() {
        let rec = eeg(300, |_, _| 0.0);
        let out = apply_filter(&delta(), &rec).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
        assert_eq!(out.data().dim(), rec.data().dim());
    }

    #[test]
    fn beta_sinusoid_is_suppressed() {
        let fs = 128.0;
        let rec = eeg(3 * 128, |i, _| (2.0 * PI * 30.0 * i as f64 / fs).sin());
        let out = apply_filter(&delta(), &rec).unwrap();
        let tail = out.data().slice(s![2 * 128.., 0]).to_owned();
        let amp = tail.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(amp <= 0.01, "residual amplitude {amp}");
    }

    #[test]
    fn non_finite_input_is_a_data_error() {
        let mut data = Array2::zeros((20, 2));
        data[[5, 1]] = f64::NAN;
        assert!(matches!(filter_channels(&delta(), data.view()), Err(DeepKeyError::Data(_))));
        let mut rec = Array2::zeros((20, 14));
        rec[[3, 3]] = f64::INFINITY;
        assert!(Recording::new(Modality::Eeg, 128.0, rec, None).is_err());
    }

    #[test]
    fn recording_validates_shape() {
        assert!(Recording::new(Modality::Gait, 80.0, Array2::zeros((5, 14)), None).is_err());
        assert!(Recording::new(Modality::Eeg, 0.0, Array2::zeros((5, 14)), None).is_err());
        assert!(Recording::new(Modality::Eeg, 128.0, Array2::zeros((0, 14)), None).is_err());
    }

    #[test]
    fn segment_counts() {
        for (n, expect) in [(100, 10), (95, 9), (7, 0)] {
            let rec = eeg(n, |i, c| (i * 14 + c) as f64);
            let samples = segment(&rec, 10, 0).unwrap();
            assert_eq!(samples.len(), expect);
            for s in &samples {
                assert_eq!(s.data.dim(), (10, 14));
            }
        }
    }

    #[test]
    fn segment_with_overlap_uses_stride() {
        let rec = eeg(30, |i, _| i as f64);
        let samples = segment(&rec, 10, 5).unwrap();
        assert_eq!(samples.len(), 5);
        assert_eq!(samples[1].data[[0, 0]], 5.0);
        assert!(segment(&rec, 10, 10).is_err());
        assert!(segment(&rec, 0, 0).is_err());
    }

    #[test]
    fn block_counts() {
        for (n, expect) in [(1000, 5), (200, 1), (199, 0)] {
            let rec = eeg(n, |_, _| 1.0);
            assert_eq!(segment_block(&rec, 200).unwrap().len(), expect);
        }
    }

    #[test]
    fn mean_removal_zeroes_channel_means() {
        let rec = eeg(64, |i, c| 100.0 * c as f64 + (i as f64).sin());
        let centered = remove_mean(&rec);
        let means: Array1<f64> = centered.data().mean_axis(Axis(0)).unwrap();
        assert!(means.iter().all(|m| m.abs() < 1e-12));
    }
}
