//! Evaluation against ground truth: reconstruction SNR, per-block
//! normalised errors, histograms, and clairvoyant regularisation sweeps.
//!
//! SNRs are computed on full (deblockified) signals. Errors are always
//! measured against the noise-free components `x_p` and `x_u`.

use std::fmt;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Serialize, Serializer};

use crate::blocking::{blockify, deblockify, BlockMatrix};
use crate::dictionaries::{dct_dictionary, identity_dictionary, Dictionary};
use crate::error::{Error, Result};
use crate::separators::{
    initialize_known_codes, mca_separate_with, sbmca_separate_from, SbmcaParams, SeparationResult,
};
use crate::solvers::LassoOptions;

/// Reconstruction SNR in dB, or `Exact` when the estimate equals the reference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Snr {
    Db(f64),
    Exact,
}

impl Snr {
    /// The value in dB; `Exact` maps to `+inf`.
    pub fn db(self) -> f64 {
        match self {
            Snr::Db(v) => v,
            Snr::Exact => f64::INFINITY,
        }
    }
}

impl fmt::Display for Snr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Snr::Db(v) => write!(f, "{v:.4}"),
            Snr::Exact => f.write_str("exact"),
        }
    }
}

impl Serialize for Snr {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Snr::Db(v) => s.serialize_f64(*v),
            Snr::Exact => s.serialize_str("exact"),
        }
    }
}

/// `10 log10(||ref||^2 / ||ref - est||^2)`.
pub fn reconstruction_snr(reference: &[f64], estimate: &[f64]) -> Result<Snr> {
    if reference.len() != estimate.len() {
        return Err(Error::invalid(format!(
            "reference has {} samples, estimate {}",
            reference.len(),
            estimate.len()
        )));
    }
    let signal: f64 = reference.iter().map(|v| v * v).sum();
    if !(signal > 0.0) {
        return Err(Error::invalid("reference signal has zero energy"));
    }
    let err: f64 = reference.iter().zip(estimate).map(|(r, e)| (r - e) * (r - e)).sum();
    if err == 0.0 {
        return Ok(Snr::Exact);
    }
    Ok(Snr::Db(10.0 * (signal / err).log10()))
}

/// Normalised per-block errors `||ref_j - est_j|| / ||ref_j||`.
///
/// Blocks with a zero reference hold `NaN` and are listed in `zero_reference`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockErrors {
    pub values: Vec<f64>,
    pub zero_reference: Vec<usize>,
}

impl BlockErrors {
    pub fn valid(&self) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().copied().filter(|v| !v.is_nan())
    }

    /// Fraction of valid blocks with error strictly below `threshold`.
    pub fn fraction_below(&self, threshold: f64) -> f64 {
        let (below, total) = self
            .valid()
            .fold((0usize, 0usize), |(b, t), v| (b + (v < threshold) as usize, t + 1));
        if total == 0 {
            0.0
        } else {
            below as f64 / total as f64
        }
    }
}

pub fn per_block_errors(reference: &BlockMatrix, estimate: &BlockMatrix) -> Result<BlockErrors> {
    if reference.data.shape() != estimate.data.shape() {
        return Err(Error::invalid(format!(
            "block shapes differ: {:?} vs {:?}",
            reference.data.shape(),
            estimate.data.shape()
        )));
    }
    let mut values = Vec::with_capacity(reference.num_blocks());
    let mut zero_reference = Vec::new();
    for (j, (r, e)) in reference.data.column_iter().zip(estimate.data.column_iter()).enumerate() {
        let rn = r.norm();
        if rn == 0.0 {
            values.push(f64::NAN);
            zero_reference.push(j);
        } else {
            values.push((r - e).norm() / rn);
        }
    }
    Ok(BlockErrors { values, zero_reference })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

/// Equal-width bins on `[lo, hi]`, left-closed except the last, which is
/// closed. Values outside the range land in the end bins; NaN is skipped.
pub fn histogram(values: &[f64], bins: usize, lo: f64, hi: f64) -> Result<Vec<HistogramBin>> {
    if bins == 0 {
        return Err(Error::invalid("histogram needs at least one bin"));
    }
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::invalid(format!("invalid histogram range [{lo}, {hi}]")));
    }
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &v in values {
        if v.is_nan() {
            continue;
        }
        let idx = if v <= lo {
            0
        } else if v >= hi {
            bins - 1
        } else {
            (((v - lo) / width).floor() as usize).min(bins - 1)
        };
        counts[idx] += 1;
    }
    Ok(counts
        .into_iter()
        .enumerate()
        .map(|(i, count)| HistogramBin {
            lo: lo + width * i as f64,
            hi: if i + 1 == bins { hi } else { lo + width * (i + 1) as f64 },
            count,
        })
        .collect())
}

pub fn histogram_csv(bins: &[HistogramBin]) -> String {
    let mut s = String::from("bin_lo,bin_hi,count\n");
    for b in bins {
        s.push_str(&format!("{},{},{}\n", b.lo, b.hi, b.count));
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Sbmca,
    McaDct,
    McaIdentity,
    Svd,
}

impl Method {
    pub fn tag(self) -> &'static str {
        match self {
            Method::Sbmca => "sbmca",
            Method::McaDct => "mca-dct",
            Method::McaIdentity => "mca-identity",
            Method::Svd => "svd",
        }
    }

    /// The fixed background dictionary of an MCA baseline.
    pub fn fixed_background(self, m: usize) -> Result<Option<Dictionary>> {
        match self {
            Method::Sbmca | Method::Svd => Ok(None),
            Method::McaDct => dct_dictionary(m).map(Some),
            Method::McaIdentity => identity_dictionary(m).map(Some),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sbmca" => Ok(Method::Sbmca),
            "mca-dct" => Ok(Method::McaDct),
            "mca-identity" => Ok(Method::McaIdentity),
            "svd" => Ok(Method::Svd),
            _ => Err(Error::invalid(format!("unknown method `{s}`"))),
        }
    }
}

/// Ground-truth components used for clairvoyant evaluation.
#[derive(Debug, Clone, Copy)]
pub struct Truth<'a> {
    pub x_p: &'a [f64],
    pub x_u: &'a [f64],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub method: Method,
    pub snr_xp_db: Snr,
    pub snr_xu_db: Snr,
    pub block_errors_xp: BlockErrors,
    pub block_errors_xu: BlockErrors,
    pub params: serde_json::Value,
}

impl EvalReport {
    pub fn block_errors_csv(&self) -> String {
        let mut s = String::from("block,err_xp,err_xu\n");
        for (j, (p, u)) in self
            .block_errors_xp
            .values
            .iter()
            .zip(&self.block_errors_xu.values)
            .enumerate()
        {
            s.push_str(&format!("{j},{p},{u}\n"));
        }
        s
    }
}

/// Scores estimated components against ground truth.
pub fn evaluate(
    method: Method,
    truth: Truth<'_>,
    xp_hat: &BlockMatrix,
    xu_hat: &BlockMatrix,
    params: serde_json::Value,
) -> Result<EvalReport> {
    let m = xp_hat.block_len;
    let ref_p = blockify(truth.x_p, m)?;
    let ref_u = blockify(truth.x_u, m)?;
    Ok(EvalReport {
        method,
        snr_xp_db: reconstruction_snr(truth.x_p, &deblockify(xp_hat)?)?,
        snr_xu_db: reconstruction_snr(truth.x_u, &deblockify(xu_hat)?)?,
        block_errors_xp: per_block_errors(&ref_p, xp_hat)?,
        block_errors_xu: per_block_errors(&ref_u, xu_hat)?,
        params,
    })
}

/// One regularisation setting. MCA baselines use `lambda` only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(untagged)]
pub enum GridPoint {
    Mca { lambda: f64 },
    Sbmca { lambda1: f64, lambda2: f64, lambda3: f64 },
}

impl GridPoint {
    fn csv_lambdas(&self) -> String {
        match *self {
            GridPoint::Mca { lambda } => format!("{lambda},,,"),
            GridPoint::Sbmca { lambda1, lambda2, lambda3 } => format!(",{lambda1},{lambda2},{lambda3}"),
        }
    }
}

/// Grid of settings for one method. For SBMCA the grid is the Cartesian
/// product of the three lists, or the pairs `lambda2 = lambda3` when `tie_23`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub method: Method,
    pub lambdas: Vec<f64>,
    pub lambda1: Vec<f64>,
    pub lambda2: Vec<f64>,
    pub lambda3: Vec<f64>,
    pub tie_23: bool,
}

impl GridSpec {
    pub fn mca(method: Method, lambdas: Vec<f64>) -> Self {
        GridSpec {
            method,
            lambdas,
            lambda1: Vec::new(),
            lambda2: Vec::new(),
            lambda3: Vec::new(),
            tie_23: false,
        }
    }

    pub fn sbmca(lambda1: Vec<f64>, lambda2: Vec<f64>, lambda3: Vec<f64>, tie_23: bool) -> Self {
        GridSpec {
            method: Method::Sbmca,
            lambdas: Vec::new(),
            lambda1,
            lambda2,
            lambda3,
            tie_23,
        }
    }

    pub fn points(&self) -> Vec<GridPoint> {
        match self.method {
            Method::Sbmca => {
                let mut pts = Vec::new();
                for &l1 in &self.lambda1 {
                    if self.tie_23 {
                        for &l in &self.lambda2 {
                            pts.push(GridPoint::Sbmca { lambda1: l1, lambda2: l, lambda3: l });
                        }
                    } else {
                        for &l2 in &self.lambda2 {
                            for &l3 in &self.lambda3 {
                                pts.push(GridPoint::Sbmca { lambda1: l1, lambda2: l2, lambda3: l3 });
                            }
                        }
                    }
                }
                pts
            }
            _ => self.lambdas.iter().map(|&lambda| GridPoint::Mca { lambda }).collect(),
        }
    }
}

/// `per_decade` log-spaced points from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, per_decade: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi >= lo) || per_decade == 0 {
        return Err(Error::invalid("log grid needs 0 < lo <= hi and per_decade >= 1"));
    }
    let decades = (hi / lo).log10();
    let steps = (decades * per_decade as f64).round() as usize;
    if steps == 0 {
        return Ok(vec![lo]);
    }
    Ok((0..=steps)
        .map(|i| lo * 10f64.powf(decades * i as f64 / steps as f64))
        .collect())
}

/// `max |D^T X|`, the scale used for default grids.
pub fn correlation_scale(d: &Dictionary, x: &DMatrix<f64>) -> f64 {
    (d.atoms().transpose() * x).amax()
}

/// Default grid: 7 points per decade over `[1e-3, 1e1] * scale`.
pub fn default_lambda_grid(scale: f64) -> Result<Vec<f64>> {
    log_grid(1e-3 * scale, 1e1 * scale, 7)
}

#[derive(Debug, Clone, Serialize)]
pub struct GridRow {
    pub method: Method,
    pub point: GridPoint,
    pub snr_xp_db: Snr,
    pub snr_xu_db: Snr,
    pub frac_xp_below: f64,
    pub outer_iters: usize,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct GridOutcome {
    pub rows: Vec<GridRow>,
    pub best_xp: EvalReport,
    pub best_xu: EvalReport,
}

/// Block-error threshold reported in grid rows.
pub const BLOCK_ERROR_THRESHOLD: f64 = 0.2;

impl GridOutcome {
    pub fn csv(&self) -> String {
        let mut s = String::from(
            "method,lambda,lambda1,lambda2,lambda3,snr_xp_db,snr_xu_db,frac_xp_err_below_0.2,outer_iters,converged\n",
        );
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.method,
                r.point.csv_lambdas(), r.snr_xp_db, r.snr_xu_db, r.frac_xp_below, r.outer_iters, r.converged
            ));
        }
        s
    }
}

fn run_point(
    x: &BlockMatrix,
    d1: &Dictionary,
    d2_fixed: Option<&Dictionary>,
    base: &SbmcaParams,
    init_codes: &[(f64, DMatrix<f64>)],
    point: GridPoint,
    lasso: &LassoOptions,
) -> Result<SeparationResult> {
    match point {
        GridPoint::Mca { lambda } => {
            let d2 = d2_fixed.ok_or_else(|| Error::invalid("MCA grid point without background dictionary"))?;
            mca_separate_with(x, d1, d2, lambda, lasso)
        }
        GridPoint::Sbmca { lambda1, lambda2, lambda3 } => {
            let a1 = &init_codes
                .iter()
                .find(|(l, _)| *l == lambda1)
                .expect("initial codes computed for every lambda1")
                .1;
            let mut p = base.clone();
            p.lambda1 = lambda1;
            p.lambda2 = lambda2;
            p.lambda3 = lambda3;
            p.dict_opts.lambda2 = lambda2;
            sbmca_separate_from(x, d1, a1, &p)
        }
    }
}

fn point_params(point: &GridPoint, base: &SbmcaParams) -> serde_json::Value {
    match point {
        GridPoint::Mca { lambda } => serde_json::json!({ "lambda": lambda }),
        GridPoint::Sbmca { lambda1, lambda2, lambda3 } => {
            let mut p = base.clone();
            p.lambda1 = *lambda1;
            p.lambda2 = *lambda2;
            p.lambda3 = *lambda3;
            p.dict_opts.lambda2 = *lambda2;
            serde_json::to_value(p).unwrap_or(serde_json::Value::Null)
        }
    }
}

/// Exhaustive clairvoyant sweep. Every grid point is scored against the
/// ground truth and the best setting is reported separately for `x_p` and
/// `x_u`. Ties keep the earliest grid point.
///
/// `base` supplies the non-lambda SBMCA settings (atoms, iterations, init,
/// seed); it is ignored for MCA baselines. `base.lasso` is used for every
/// LASSO call.
pub fn grid_search(
    x: &BlockMatrix,
    truth: Truth<'_>,
    d1: &Dictionary,
    spec: &GridSpec,
    base: &SbmcaParams,
) -> Result<GridOutcome> {
    if spec.method == Method::Svd {
        return Err(Error::invalid("grid search has no regularisation grid for the svd baseline"));
    }
    let points = spec.points();
    if points.is_empty() {
        return Err(Error::invalid("empty regularisation grid"));
    }
    let d2_fixed = spec.method.fixed_background(x.block_len)?;

    let mut init_codes: Vec<(f64, DMatrix<f64>)> = Vec::new();
    if spec.method == Method::Sbmca {
        let mut distinct: Vec<f64> = Vec::new();
        for l in &spec.lambda1 {
            if !distinct.contains(l) {
                distinct.push(*l);
            }
        }
        init_codes = distinct
            .par_iter()
            .map(|&l1| initialize_known_codes(x, d1, base.init, l1, &base.lasso).map(|c| (l1, c.coeffs)))
            .collect::<Result<_>>()?;
    }

    let runs: Vec<(GridRow, EvalReport)> = points
        .par_iter()
        .map(|&point| {
            let res = run_point(x, d1, d2_fixed.as_ref(), base, &init_codes, point, &base.lasso)?;
            let report = evaluate(spec.method, truth, &res.xp_hat, &res.xu_hat, point_params(&point, base))?;
            let row = GridRow {
                method: spec.method,
                point,
                snr_xp_db: report.snr_xp_db,
                snr_xu_db: report.snr_xu_db,
                frac_xp_below: report.block_errors_xp.fraction_below(BLOCK_ERROR_THRESHOLD),
                outer_iters: res.outer_iters,
                converged: res.converged,
            };
            Ok((row, report))
        })
        .collect::<Result<_>>()?;

    let best_by = |key: fn(&EvalReport) -> f64| -> EvalReport {
        let mut best = &runs[0].1;
        for (_, r) in &runs[1..] {
            if key(r) > key(best) {
                best = r;
            }
        }
        best.clone()
    };
    let best_xp = best_by(|r| r.snr_xp_db.db());
    let best_xu = best_by(|r| r.snr_xu_db.db());
    Ok(GridOutcome {
        rows: runs.into_iter().map(|(row, _)| row).collect(),
        best_xp,
        best_xu,
    })
}
