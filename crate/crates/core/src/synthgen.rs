//! Seeded synthetic subjects for both modalities.
//!
//! EEG is a sum of five band-limited source processes mixed onto the 14
//! electrodes, a per-electrode DC level, and AR(2) coloured noise. The delta
//! sources use a low-rank, purely subject-specific mixing; the other bands
//! blend the subject mixing with a cohort-wide one, alpha the most.
//!
//! Gait is a harmonic series at the subject's stride frequency on each of
//! the 27 IMU channels, plus white noise.

use std::f64::consts::PI;

use ndarray::{s, Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::dsp::{design_bandpass, filter_channels, Modality, Recording};
use crate::error::{DeepKeyError, Result};

/// EEG bands as `(name, low, high)`; gamma is clipped below Nyquist.
pub const BANDS: [(&str, f64, f64); 5] = [
    ("delta", 0.5, 3.5),
    ("theta", 4.0, 8.0),
    ("alpha", 8.0, 12.0),
    ("beta", 12.0, 30.0),
    ("gamma", 30.0, 60.0),
];

/// How much of each band's mixing is subject-specific.
const SUBJECT_SHARE: [f64; 5] = [1.0, 0.5, 0.1, 0.3, 0.3];
const BASE_POWER: [f64; 5] = [4.0, 1.0, 0.6, 0.3, 0.15];
const DELTA_SOURCES: usize = 3;
const HARMONICS: usize = 3;
const WARMUP_SECONDS: f64 = 4.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectProfile {
    pub id: u32,
    pub seed: u64,
    /// Subject electrode mixing `[14, 14]`; delta uses its first columns.
    pub mixing: Array2<f64>,
    /// Cohort-wide mixing shared by every profile of one `make_profiles` call.
    pub common_mixing: Array2<f64>,
    pub band_power: [f64; 5],
    pub dc_offset: Array1<f64>,
    /// `(a1, a2)` per channel for `x_t = a1 x_{t-1} + a2 x_{t-2} + e_t`.
    pub ar: Array2<f64>,
    pub noise: f64,
    pub stride_hz: f64,
    pub gait_offset: Array1<f64>,
    /// `[27, HARMONICS]`
    pub gait_weights: Array2<f64>,
    pub gait_phase: Array2<f64>,
    /// Per-channel sensitivity of the phase to sensor placement.
    pub gait_phase_drift: Array1<f64>,
    pub gait_noise: f64,
}

/// One wear-record-remove cycle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SessionConfig {
    pub index: u32,
    /// Electrode-space rotation angle in radians.
    pub rotation: f64,
    pub noise_multiplier: f64,
}

impl SessionConfig {
    /// Session `index` with the default drift schedule.
    pub fn standard(index: u32) -> Self {
        Self {
            index,
            rotation: 0.15 * index as f64,
            noise_multiplier: 1.0 + 3.0 * index as f64,
        }
    }
}

/// splitmix64 finaliser, used to derive independent stream seeds.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || {
        let v: f64 = StandardNormal.sample(rng);
        scale * v
    })
}

fn profile(id: u32, seed: u64, common: &Array2<f64>) -> SubjectProfile {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, id as u64 + 1));
    let d = Modality::Eeg.channels();
    let g = Modality::Gait.channels();
    let mixing = gaussian_matrix(&mut rng, d, d, 1.0 / (d as f64).sqrt());
    let mut band_power = BASE_POWER;
    for p in band_power.iter_mut() {
        *p *= rng.random_range(0.8..1.2);
    }
    let offset_dist = Normal::new(0.0, 12.0).expect("valid normal");
    let dc_offset = Array1::from_shape_simple_fn(d, || offset_dist.sample(&mut rng));
    let mut ar = Array2::zeros((d, 2));
    for mut row in ar.rows_mut() {
        let r: f64 = rng.random_range(0.5..0.9);
        let theta: f64 = rng.random_range(0.1..1.0);
        row[0] = 2.0 * r * theta.cos();
        row[1] = -r * r;
    }
    let noise = rng.random_range(0.1..0.2);

    let stride_hz = rng.random_range(0.6..1.4);
    let gait_offset = Array1::from_shape_simple_fn(g, || StandardNormal.sample(&mut rng));
    let mut gait_weights = Array2::zeros((g, HARMONICS));
    for mut row in gait_weights.rows_mut() {
        row[0] = rng.random_range(0.6..1.0);
        row[1] = rng.random_range(0.05..0.3);
        row[2] = rng.random_range(0.0..0.15);
    }
    let gait_phase = Array2::from_shape_simple_fn((g, HARMONICS), || rng.random_range(0.0..2.0 * PI));
    let gait_phase_drift = Array1::from_shape_simple_fn(g, || rng.random_range(-1.0..1.0));
    let gait_noise = rng.random_range(0.05..0.1);

    SubjectProfile {
        id,
        seed,
        mixing,
        common_mixing: common.clone(),
        band_power,
        dc_offset,
        ar,
        noise,
        stride_hz,
        gait_offset,
        gait_weights,
        gait_phase,
        gait_phase_drift,
        gait_noise,
    }
}

/// `k` subjects drawn from one seed. Subject `i` does not depend on `k`.
pub fn make_profiles(k: usize, seed: u64) -> Vec<SubjectProfile> {
    let d = Modality::Eeg.channels();
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0));
    let common = gaussian_matrix(&mut rng, d, d, 1.0 / (d as f64).sqrt());
    (0..k as u32).map(|id| profile(id, seed, &common)).collect()
}

fn instances(seconds: f64, fs: f64) -> Result<usize> {
    let n = (seconds * fs).round();
    if !(n >= 1.0 && n.is_finite()) {
        return Err(DeepKeyError::Parameter(format!("duration {seconds} s gives no instances")));
    }
    Ok(n as usize)
}

fn recording_rng(p: &SubjectProfile, s: &SessionConfig, modality: Modality) -> ChaCha8Rng {
    let stream = mix_seed(mix_seed(p.seed, p.id as u64 + 101), s.index as u64 + 1);
    ChaCha8Rng::seed_from_u64(mix_seed(stream, modality.code() as u64 + 7))
}

/// Unit-variance band-limited noise, `[n, sources]`.
fn band_process(rng: &mut ChaCha8Rng, n: usize, sources: usize, low: f64, high: f64, fs: f64) -> Result<Array2<f64>> {
    let warm = (WARMUP_SECONDS * fs) as usize;
    let white = gaussian_matrix(rng, n + warm, sources, 1.0);
    let coeffs = design_bandpass(3, low, high, fs)?;
    let filtered = filter_channels(&coeffs, white.view())?;
    let mut kept = filtered.slice(s![warm.., ..]).to_owned();
    let std = kept.std_axis(Axis(0), 0.0);
    kept /= &std.mapv(|v| if v > 0.0 { v } else { 1.0 });
    Ok(kept)
}

/// Rotation of electrode space by `angle` in consecutive channel pairs.
fn placement_rotation(d: usize, angle: f64) -> Array2<f64> {
    let mut r = Array2::eye(d);
    let (c, s) = (angle.cos(), angle.sin());
    for k in (0..d - 1).step_by(2) {
        r[[k, k]] = c;
        r[[k, k + 1]] = -s;
        r[[k + 1, k]] = s;
        r[[k + 1, k + 1]] = c;
    }
    r
}

/// 14-channel EEG at 128 Hz.
pub fn generate_eeg(p: &SubjectProfile, s: &SessionConfig, seconds: f64) -> Result<Recording> {
    let modality = Modality::Eeg;
    let fs = modality.sample_rate();
    let d = modality.channels();
    let n = instances(seconds, fs)?;
    let mut rng = recording_rng(p, s, modality);
    let rotation = placement_rotation(d, s.rotation);

    let mut data = Array2::zeros((n, d));
    for (b, &(_, low, high)) in BANDS.iter().enumerate() {
        let mixing = if b == 0 {
            p.mixing.slice(s![.., ..DELTA_SOURCES]).to_owned() * (d as f64 / DELTA_SOURCES as f64).sqrt()
        } else {
            &p.mixing * SUBJECT_SHARE[b] + &p.common_mixing * (1.0 - SUBJECT_SHARE[b])
        };
        let placed = rotation.dot(&mixing);
        let sources = band_process(&mut rng, n, placed.ncols(), low, high, fs)?;
        data.scaled_add(p.band_power[b].sqrt(), &sources.dot(&placed.t()));
    }

    let warm = (WARMUP_SECONDS * fs) as usize;
    let sigma = p.noise * s.noise_multiplier;
    for c in 0..d {
        let (a1, a2) = (p.ar[[c, 0]], p.ar[[c, 1]]);
        let mut series = Vec::with_capacity(n + warm);
        let (mut x1, mut x2) = (0.0, 0.0);
        for _ in 0..n + warm {
            let e: f64 = StandardNormal.sample(&mut rng);
            let x = a1 * x1 + a2 * x2 + e;
            x2 = x1;
            x1 = x;
            series.push(x);
        }
        let kept = Array1::from(series[warm..].to_vec());
        let std = kept.std(0.0);
        let scale = if std > 0.0 { sigma / std } else { 0.0 };
        let mut col = data.column_mut(c);
        col.scaled_add(scale, &kept);
        col += p.dc_offset[c];
    }
    Recording::new(modality, fs, data, Some(p.id))
}

/// Noise-free gait sample at time `t` seconds.
pub fn gait_signature(p: &SubjectProfile, s: &SessionConfig, t: f64) -> Array1<f64> {
    let g = p.gait_offset.len();
    Array1::from_shape_fn(g, |c| {
        let shift = s.rotation * p.gait_phase_drift[c];
        (0..HARMONICS).fold(p.gait_offset[c], |acc, h| {
            let k = (h + 1) as f64;
            acc + p.gait_weights[[c, h]] * (2.0 * PI * k * p.stride_hz * t + p.gait_phase[[c, h]] + k * shift).sin()
        })
    })
}

/// 27-channel gait at 80 Hz; `noise_scale` multiplies the profile noise.
pub fn generate_gait_with_noise(p: &SubjectProfile, s: &SessionConfig, seconds: f64, noise_scale: f64) -> Result<Recording> {
    let modality = Modality::Gait;
    let fs = modality.sample_rate();
    let n = instances(seconds, fs)?;
    let mut rng = recording_rng(p, s, modality);
    let sigma = p.gait_noise * s.noise_multiplier * noise_scale;
    let mut data = Array2::zeros((n, modality.channels()));
    for (i, mut row) in data.rows_mut().into_iter().enumerate() {
        row.assign(&gait_signature(p, s, i as f64 / fs));
        for v in row.iter_mut() {
            let e: f64 = StandardNormal.sample(&mut rng);
            *v += sigma * e;
        }
    }
    Recording::new(modality, fs, data, Some(p.id))
}

pub fn generate_gait(p: &SubjectProfile, s: &SessionConfig, seconds: f64) -> Result<Recording> {
    generate_gait_with_noise(p, s, seconds, 1.0)
}
