//! On-disk layout of datasets and separation results.
//!
//! Dataset directory (written by `sbmca synth`):
//!
//! ```text
//! manifest.json   DatasetConfig, labels, onsets, sub-seeds
//! x.csv xp.csv xu.csv noise.csv   exact f64 samples, one per line
//! x.wav xp.wav xu.wav             the same signals as WAV for listening
//! ```
//!
//! Result directory (written by `sbmca separate`):
//!
//! ```text
//! manifest.json          method, parameters, seeds, traces, iteration counts
//! xp_hat.csv xu_hat.csv  estimated components
//! xp_hat.wav xu_hat.wav
//! objective_trace.csv    stage,value
//! [d1.dict] [d2.dict]    dictionaries used / learned
//! timing.json            wall-clock time, the only non-reproducible file
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::audio::{read_csv, write_csv, write_wav, WavFormat};
use crate::blocking::{deblockify, BlockMatrix};
use crate::dictionaries::Dictionary;
use crate::error::{Error, Result};
use crate::separators::{SeparationResult, TraceEntry};
use crate::synth::{DatasetConfig, LoadState, MixtureDataset};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub config: DatasetConfig,
    pub sub_seeds: (u64, u64, u64),
    pub labels: Vec<LoadState>,
    pub onsets: Vec<i64>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::io(path, e))?;
    s.push('\n');
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::io(path, e))
}

pub fn write_dataset(dir: &Path, cfg: &DatasetConfig, ds: &MixtureDataset, wav: WavFormat) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_json(
        &dir.join("manifest.json"),
        &DatasetManifest {
            config: cfg.clone(),
            sub_seeds: cfg.sub_seeds(),
            labels: ds.labels.clone(),
            onsets: ds.onsets.clone(),
        },
    )?;
    for (name, sig) in [("x", &ds.x), ("xp", &ds.x_p), ("xu", &ds.x_u), ("noise", &ds.noise)] {
        write_csv(&dir.join(format!("{name}.csv")), sig)?;
    }
    for (name, sig) in [("x", &ds.x), ("xp", &ds.x_p), ("xu", &ds.x_u)] {
        write_wav(&dir.join(format!("{name}.wav")), sig, cfg.fs, wav)?;
    }
    Ok(())
}

pub fn read_dataset(dir: &Path) -> Result<(DatasetConfig, MixtureDataset)> {
    let manifest: DatasetManifest = read_json(&dir.join("manifest.json"))?;
    let x = read_csv(&dir.join("x.csv"))?;
    let x_p = read_csv(&dir.join("xp.csv"))?;
    let x_u = read_csv(&dir.join("xu.csv"))?;
    let noise = read_csv(&dir.join("noise.csv"))?;
    let n = manifest.config.n;
    for (name, s) in [("x", &x), ("xp", &x_p), ("xu", &x_u), ("noise", &noise)] {
        if s.len() != n {
            return Err(Error::io(dir.join(format!("{name}.csv")), format!("expected {n} samples, found {}", s.len())));
        }
    }
    let cfg = manifest.config;
    let ds = MixtureDataset {
        x_p,
        x_u,
        noise,
        x,
        labels: manifest.labels,
        onsets: manifest.onsets,
        sigma: cfg.sigma,
        seed: cfg.seed,
        fs: cfg.fs,
    };
    Ok((cfg, ds))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultManifest {
    pub method: String,
    pub params: serde_json::Value,
    pub input: String,
    pub fs: f64,
    pub block_len: usize,
    pub orig_len: usize,
    pub num_blocks: usize,
    pub d1_id: Option<String>,
    pub d2_id: Option<String>,
    pub outer_iters: usize,
    pub converged: bool,
    pub nnz_a1: usize,
    pub nnz_a2: usize,
    pub objective_trace: Vec<(String, f64)>,
}

pub struct ResultWriter<'a> {
    pub method: &'a str,
    pub params: serde_json::Value,
    pub input: String,
    pub fs: f64,
    pub wav: WavFormat,
}

impl ResultWriter<'_> {
    pub fn write(&self, dir: &Path, d1: Option<&Dictionary>, res: &SeparationResult) -> Result<ResultManifest> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let xp = deblockify(&res.xp_hat)?;
        let xu = deblockify(&res.xu_hat)?;
        write_csv(&dir.join("xp_hat.csv"), &xp)?;
        write_csv(&dir.join("xu_hat.csv"), &xu)?;
        write_wav(&dir.join("xp_hat.wav"), &xp, self.fs, self.wav)?;
        write_wav(&dir.join("xu_hat.wav"), &xu, self.fs, self.wav)?;
        if let Some(d1) = d1 {
            d1.save(&dir.join("d1.dict"))?;
        }
        if let Some(d2) = &res.d2_hat {
            d2.save(&dir.join("d2.dict"))?;
        }
        fs::write(dir.join("objective_trace.csv"), trace_csv(&res.objective_trace))
            .map_err(|e| Error::io(dir.join("objective_trace.csv"), e))?;
        let manifest = ResultManifest {
            method: self.method.to_string(),
            params: self.params.clone(),
            input: self.input.clone(),
            fs: self.fs,
            block_len: res.xp_hat.block_len,
            orig_len: res.xp_hat.orig_len,
            num_blocks: res.xp_hat.num_blocks(),
            d1_id: d1.map(|d| d.id().to_string()),
            d2_id: res.d2_hat.as_ref().map(|d| d.id().to_string()),
            outer_iters: res.outer_iters,
            converged: res.converged,
            nnz_a1: res.a1_hat.nnz(),
            nnz_a2: res.a2_hat.nnz(),
            objective_trace: res
                .objective_trace
                .iter()
                .map(|t| (t.stage.tag().to_string(), t.value))
                .collect(),
        };
        write_json(&dir.join("manifest.json"), &manifest)?;
        write_json(&dir.join("timing.json"), &serde_json::json!({ "wall_time_s": res.wall_time }))?;
        Ok(manifest)
    }
}

pub fn trace_csv(trace: &[TraceEntry]) -> String {
    let mut s = String::from("stage,value\n");
    for t in trace {
        s.push_str(&format!("{},{}\n", t.stage.tag(), t.value));
    }
    s
}

/// Reads the estimated components of a result directory back as block matrices.
pub fn read_result(dir: &Path) -> Result<(ResultManifest, BlockMatrix, BlockMatrix)> {
    let manifest: ResultManifest = read_json(&dir.join("manifest.json"))?;
    let xp = read_csv(&dir.join("xp_hat.csv"))?;
    let xu = read_csv(&dir.join("xu_hat.csv"))?;
    let m = manifest.block_len;
    Ok((
        manifest,
        crate::blocking::blockify(&xp, m)?,
        crate::blocking::blockify(&xu, m)?,
    ))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_json_file<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_json(path, value)
}
