//! Signal IO: mono WAV (16-bit PCM or 32-bit float) and plain CSV with one
//! sample per line.
//!
//! CSV values are written with Rust's shortest round-trip float formatting,
//! so reading a CSV back reproduces the `f64` values exactly.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WavFormat {
    Pcm16,
    Float32,
}

impl std::str::FromStr for WavFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pcm16" => Ok(WavFormat::Pcm16),
            "f32" | "float32" => Ok(WavFormat::Float32),
            _ => Err(Error::invalid(format!("unknown WAV format `{s}` (pcm16|f32)"))),
        }
    }
}

/// Reads a mono WAV file. Integer samples are scaled to `[-1, 1)`.
pub fn read_wav(path: &Path) -> Result<(Vec<f64>, f64)> {
    let reader = hound::WavReader::open(path).map_err(|e| Error::io(path, e))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::io(path, format!("expected mono audio, found {} channels", spec.channels)));
    }
    let samples: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Float => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>(),
        hound::SampleFormat::Int => {
            let scale = 2f64.powi(spec.bits_per_sample as i32 - 1);
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<std::result::Result<_, _>>()
        }
    }
    .map_err(|e| Error::io(path, e))?;
    Ok((samples, spec.sample_rate as f64))
}

pub fn write_wav(path: &Path, x: &[f64], fs: f64, format: WavFormat) -> Result<()> {
    if !(fs >= 1.0 && fs <= u32::MAX as f64) {
        return Err(Error::invalid(format!("sample rate {fs} cannot be stored in a WAV header")));
    }
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: fs.round() as u32,
        bits_per_sample: match format {
            WavFormat::Pcm16 => 16,
            WavFormat::Float32 => 32,
        },
        sample_format: match format {
            WavFormat::Pcm16 => hound::SampleFormat::Int,
            WavFormat::Float32 => hound::SampleFormat::Float,
        },
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(|e| Error::io(path, e))?;
    for &v in x {
        let r = match format {
            WavFormat::Pcm16 => w.write_sample((v.clamp(-1.0, 1.0) * 32767.0).round() as i16),
            WavFormat::Float32 => w.write_sample(v as f32),
        };
        r.map_err(|e| Error::io(path, e))?;
    }
    w.finalize().map_err(|e| Error::io(path, e))
}

pub fn write_csv(path: &Path, x: &[f64]) -> Result<()> {
    let mut s = String::with_capacity(x.len() * 20);
    for v in x {
        writeln!(s, "{v}").unwrap();
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn read_csv(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim()
                .parse::<f64>()
                .map_err(|e| Error::io(path, format!("line {}: {e}", i + 1)))
        })
        .collect()
}

/// Reads a signal from `.wav` or `.csv` (by extension). CSV has no rate, so `None`.
pub fn read_signal(path: &Path) -> Result<(Vec<f64>, Option<f64>)> {
    match path.extension().and_then(|e| e.to_str()) {
        Some(e) if e.eq_ignore_ascii_case("wav") => read_wav(path).map(|(x, fs)| (x, Some(fs))),
        _ => read_csv(path).map(|x| (x, None)),
    }
}

/// Linear-interpolation resampling from `from` Hz to `to` Hz.
pub fn resample_linear(x: &[f64], from: f64, to: f64) -> Vec<f64> {
    if x.is_empty() || from == to {
        return x.to_vec();
    }
    let out_len = ((x.len() as f64) * to / from).floor() as usize;
    (0..out_len)
        .map(|i| {
            let pos = i as f64 * from / to;
            let k = pos.floor() as usize;
            let frac = pos - k as f64;
            match (x.get(k), x.get(k + 1)) {
                (Some(a), Some(b)) => a + (b - a) * frac,
                (Some(a), None) => *a,
                _ => 0.0,
            }
        })
        .collect()
}

/// Background from a mono WAV or CSV file, resampled to `fs` and truncated to `n`.
pub fn load_background(path: &Path, n: usize, fs: f64) -> Result<Vec<f64>> {
    let (x, file_fs) = read_signal(path)?;
    let x = match file_fs {
        Some(r) if r != fs => resample_linear(&x, r, fs),
        _ => x,
    };
    if x.len() < n {
        return Err(Error::io(
            path,
            format!("background has {} samples at {fs} Hz, need {n}", x.len()),
        ));
    }
    Ok(x[..n].to_vec())
}
