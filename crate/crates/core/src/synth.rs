//! Synthetic mixtures: two damped-sinusoid discharge prototypes repeated
//! at a nominal rate with per-pulse jitter, a structured background, and
//! additive Gaussian noise.
//!
//! The default sampling rate (14.4 kHz) makes the nominal discharge period
//! at 36 Hz exactly 400 samples, one discharge per block.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_FS: f64 = 14_400.0;
pub const DEFAULT_RATE: f64 = 36.0;
pub const DEFAULT_BLOCK_LEN: usize = 400;
pub const DEFAULT_JITTER: usize = 5;

/// `amplitude * exp(-decay_rate t) * sin(2 pi carrier_freq t + phase)` on `[0, duration)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseSpec {
    pub carrier_freq: f64,
    pub decay_rate: f64,
    pub duration: f64,
    pub amplitude: f64,
    pub phase: f64,
}

impl PulseSpec {
    /// Artifact default for the low-resistance state.
    pub fn default_low() -> Self {
        PulseSpec {
            carrier_freq: 1200.0,
            decay_rate: 60.0,
            duration: 0.025,
            amplitude: 1.0,
            phase: 0.0,
        }
    }

    /// Artifact default for the high-resistance state.
    pub fn default_high() -> Self {
        PulseSpec {
            carrier_freq: 2200.0,
            decay_rate: 140.0,
            duration: 0.012,
            amplitude: 1.0,
            phase: 0.0,
        }
    }

    fn validate(&self, fs: f64) -> Result<()> {
        if !(fs > 0.0) {
            return Err(Error::invalid("sampling rate must be positive"));
        }
        if !(self.carrier_freq >= 0.0 && self.carrier_freq < fs / 2.0) {
            return Err(Error::invalid(format!(
                "carrier {} Hz is not below Nyquist ({} Hz)",
                self.carrier_freq,
                fs / 2.0
            )));
        }
        if !(self.decay_rate > 0.0) || !(self.duration > 0.0) || !self.amplitude.is_finite() {
            return Err(Error::invalid("pulse decay rate and duration must be positive"));
        }
        Ok(())
    }

    /// Sampled pulse at rate `fs`, zero-padded to `m` samples.
    pub fn sample(&self, fs: f64, m: usize) -> Result<Vec<f64>> {
        self.validate(fs)?;
        let len = (self.duration * fs).ceil() as usize;
        if len > m {
            return Err(Error::invalid(format!("pulse needs {len} samples but block holds {m}")));
        }
        let mut out = vec![0.0; m];
        for (i, v) in out.iter_mut().take(len).enumerate() {
            let t = i as f64 / fs;
            *v = self.amplitude
                * (-self.decay_rate * t).exp()
                * (2.0 * PI * self.carrier_freq * t + self.phase).sin();
        }
        Ok(out)
    }
}

pub fn make_prototypes(low: &PulseSpec, high: &PulseSpec, fs: f64, m: usize) -> Result<[Vec<f64>; 2]> {
    Ok([low.sample(fs, m)?, high.sample(fs, m)?])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LoadState {
    Low,
    High,
}

impl LoadState {
    pub fn index(self) -> usize {
        match self {
            LoadState::Low => 0,
            LoadState::High => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PulseTrain {
    pub x_p: Vec<f64>,
    pub labels: Vec<LoadState>,
    /// Onset of each discharge in samples. The first may be negative, in
    /// which case the pulse is truncated at the start of the signal.
    pub onsets: Vec<i64>,
}

/// Discharges at `round(k fs / rate) + jitter`, jitter uniform in
/// `[-jitter_max, jitter_max]`, state chosen uniformly per discharge.
pub fn make_pulse_train(
    n: usize,
    fs: f64,
    rate: f64,
    jitter_max: usize,
    prototypes: &[Vec<f64>; 2],
    seed: u64,
) -> Result<PulseTrain> {
    if !(fs > 0.0 && rate > 0.0) {
        return Err(Error::invalid("sampling rate and discharge rate must be positive"));
    }
    let period = fs / rate;
    if (jitter_max as f64) >= period / 2.0 {
        return Err(Error::invalid(format!(
            "jitter {jitter_max} must be below half the nominal period ({period})"
        )));
    }
    if (n as f64) < period {
        return Err(Error::invalid(format!("signal of {n} samples is shorter than one period")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let j = jitter_max as i64;
    let mut x_p = vec![0.0; n];
    let mut labels = Vec::new();
    let mut onsets: Vec<i64> = Vec::new();
    let mut last_end: i64 = i64::MIN;
    for k in 0.. {
        let nominal = (k as f64 * period).round() as i64;
        if nominal >= n as i64 {
            break;
        }
        let onset = nominal + rng.random_range(-j..=j);
        let state = if rng.random_bool(0.5) { LoadState::High } else { LoadState::Low };
        let proto = &prototypes[state.index()];
        let support = proto.iter().rposition(|v| *v != 0.0).map_or(0, |i| i + 1) as i64;
        if onset < last_end {
            log::info!("pulse {k} at {onset} overlaps the previous pulse ending at {last_end}");
        }
        last_end = onset + support;
        for (i, &v) in proto.iter().enumerate() {
            let t = onset + i as i64;
            if t >= 0 && (t as usize) < n {
                x_p[t as usize] += v;
            }
        }
        labels.push(state);
        onsets.push(onset);
    }
    Ok(PulseTrain { x_p, labels, onsets })
}

fn rms(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

/// Scales `x_u` so that `rms(x_u) = ratio * rms(reference)`. Silent inputs stay silent.
pub fn scale_to_rms_ratio(x_u: &mut [f64], reference: &[f64], ratio: f64) -> Result<()> {
    if !(ratio >= 0.0 && ratio.is_finite()) {
        return Err(Error::invalid("RMS ratio must be non-negative"));
    }
    let cur = rms(x_u);
    let target = ratio * rms(reference);
    let g = if cur > 0.0 { target / cur } else { 0.0 };
    for v in x_u.iter_mut() {
        *v *= g;
    }
    Ok(())
}

/// Speech-like stand-in: three harmonic chirps with slowly varying envelopes.
pub fn synth_background(n: usize, fs: f64, seed: u64) -> Result<Vec<f64>> {
    if !(fs > 0.0) {
        return Err(Error::invalid("sampling rate must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let duration = n as f64 / fs;
    let mut x = vec![0.0; n];
    for _ in 0..3 {
        let f_start: f64 = rng.random_range(110.0..260.0);
        let f_end: f64 = f_start * rng.random_range(0.7..1.4);
        let sweep = (f_end - f_start) / duration.max(1.0 / fs);
        let env_freq: f64 = rng.random_range(0.2..1.0);
        let env_phase: f64 = rng.random_range(0.0..2.0 * PI);
        let harmonics = 4;
        let phases: Vec<f64> = (0..harmonics).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
        for (i, v) in x.iter_mut().enumerate() {
            let t = i as f64 / fs;
            let inst = 2.0 * PI * (f_start * t + 0.5 * sweep * t * t);
            let env = 0.6 + 0.4 * (2.0 * PI * env_freq * t + env_phase).sin();
            let f_now = f_start + sweep * t;
            let mut s = 0.0;
            for (h, ph) in phases.iter().enumerate() {
                let order = (h + 1) as f64;
                if order * f_now < fs / 2.0 {
                    s += (order * inst + ph).sin() / order;
                }
            }
            *v += env * s;
        }
    }
    Ok(x)
}

/// Mixture with ground truth. `x = (x_p + x_u) + noise` holds bit-exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureDataset {
    pub x_p: Vec<f64>,
    pub x_u: Vec<f64>,
    pub noise: Vec<f64>,
    pub x: Vec<f64>,
    pub labels: Vec<LoadState>,
    pub onsets: Vec<i64>,
    pub sigma: f64,
    pub seed: u64,
    pub fs: f64,
}

/// `x = x_p + x_u + sigma g`, `g` i.i.d. standard normal drawn from `seed`.
/// Labels and onsets are left empty; [`DatasetConfig::generate`] fills them.
pub fn mix(x_p: &[f64], x_u: &[f64], sigma: f64, seed: u64) -> Result<MixtureDataset> {
    if x_p.len() != x_u.len() {
        return Err(Error::invalid(format!(
            "component lengths differ: {} vs {}",
            x_p.len(),
            x_u.len()
        )));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::invalid("noise sigma must be non-negative"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise: Vec<f64> = if sigma == 0.0 {
        vec![0.0; x_p.len()]
    } else {
        (0..x_p.len())
            .map(|_| {
                let g: f64 = StandardNormal.sample(&mut rng);
                sigma * g
            })
            .collect::<Vec<f64>>()
    };
    let x = x_p
        .iter()
        .zip(x_u)
        .zip(&noise)
        .map(|((p, u), w)| (p + u) + w)
        .collect();
    Ok(MixtureDataset {
        x_p: x_p.to_vec(),
        x_u: x_u.to_vec(),
        noise,
        x,
        labels: Vec::new(),
        onsets: Vec::new(),
        sigma,
        seed,
        fs: 0.0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BackgroundSource {
    Synthetic,
    File { path: String },
}

/// Every parameter needed to regenerate a dataset exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub n: usize,
    pub fs: f64,
    pub rate: f64,
    pub block_len: usize,
    pub jitter_max: usize,
    pub low: PulseSpec,
    pub high: PulseSpec,
    pub sigma: f64,
    pub rms_ratio: f64,
    pub background: BackgroundSource,
    pub seed: u64,
}

impl DatasetConfig {
    /// Ten seconds at 14.4 kHz, 400-sample blocks, `sigma` noise.
    pub fn default_with(seed: u64, sigma: f64) -> Self {
        DatasetConfig {
            n: (DEFAULT_FS as usize) * 10,
            fs: DEFAULT_FS,
            rate: DEFAULT_RATE,
            block_len: DEFAULT_BLOCK_LEN,
            jitter_max: DEFAULT_JITTER,
            low: PulseSpec::default_low(),
            high: PulseSpec::default_high(),
            sigma,
            rms_ratio: 1.0,
            background: BackgroundSource::Synthetic,
            seed,
        }
    }

    /// Seeds of the pulse train, background and noise streams.
    pub fn sub_seeds(&self) -> (u64, u64, u64) {
        let s = self.seed;
        (s, s.wrapping_add(0x9E37_79B9_7F4A_7C15), s.wrapping_add(0x3C6E_F372_FE94_F82A))
    }

    pub fn prototypes(&self) -> Result<[Vec<f64>; 2]> {
        make_prototypes(&self.low, &self.high, self.fs, self.block_len)
    }

    pub fn generate(&self) -> Result<MixtureDataset> {
        let (train_seed, bg_seed, noise_seed) = self.sub_seeds();
        let protos = self.prototypes()?;
        let train = make_pulse_train(self.n, self.fs, self.rate, self.jitter_max, &protos, train_seed)?;
        let mut x_u = match &self.background {
            BackgroundSource::Synthetic => synth_background(self.n, self.fs, bg_seed)?,
            BackgroundSource::File { path } => crate::audio::load_background(path.as_ref(), self.n, self.fs)?,
        };
        scale_to_rms_ratio(&mut x_u, &train.x_p, self.rms_ratio)?;
        let mut ds = mix(&train.x_p, &x_u, self.sigma, noise_seed)?;
        ds.labels = train.labels;
        ds.onsets = train.onsets;
        ds.seed = self.seed;
        ds.fs = self.fs;
        Ok(ds)
    }
}
