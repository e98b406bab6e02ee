//! Separation drivers: semi-blind MCA, fixed-dictionary MCA and the
//! truncated-SVD baseline.

use std::time::Instant;

use nalgebra::DMatrix;

use crate::blocking::BlockMatrix;
use crate::dictionaries::{dct_dictionary, Dictionary};
use crate::dictlearn::{learn_dictionary_warm, DictLearnOptions};
use crate::error::{Error, Result};
use crate::solvers::{lasso, lasso_split_basis, lasso_warm, omp_one_step_columns, LassoOptions, SparseCode};

/// How SBMCA obtains its first estimate of the known-component codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Init {
    /// `A1 = lasso(D1, X, lambda1)`.
    LassoD1,
    /// MCA against `[D1 DCT]` with `lambda1`, then one OMP step per column
    /// of the resulting known-component estimate against `D1`.
    McaDctOmp,
}

impl std::str::FromStr for Init {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lasso-d1" => Ok(Init::LassoD1),
            "mca-dct-omp" => Ok(Init::McaDctOmp),
            _ => Err(Error::invalid(format!("unknown init `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SbmcaParams {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub dict_opts: DictLearnOptions,
    pub max_outer_iters: usize,
    pub outer_tol: f64,
    pub init: Init,
    pub lasso: LassoOptions,
}

impl SbmcaParams {
    pub fn new(lambda1: f64, lambda2: f64, lambda3: f64, num_atoms: usize, seed: u64) -> Self {
        SbmcaParams {
            lambda1,
            lambda2,
            lambda3,
            dict_opts: DictLearnOptions::new(num_atoms, lambda2, seed),
            max_outer_iters: 10,
            outer_tol: 1e-4,
            init: Init::McaDctOmp,
            lasso: LassoOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda1", self.lambda1), ("lambda2", self.lambda2), ("lambda3", self.lambda3)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if self.max_outer_iters == 0 {
            return Err(Error::invalid("max_outer_iters must be at least 1"));
        }
        if !(self.outer_tol > 0.0) {
            return Err(Error::invalid("outer_tol must be positive"));
        }
        self.dict_opts.validate()?;
        self.lasso.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Init,
    DictLearn,
    CoefUpdate,
    Mca,
}

impl Stage {
    pub fn tag(self) -> &'static str {
        match self {
            Stage::Init => "init",
            Stage::DictLearn => "dict-learn",
            Stage::CoefUpdate => "coef-update",
            Stage::Mca => "mca",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct TraceEntry {
    pub stage: Stage,
    pub value: f64,
}

#[derive(Debug, Clone)]
pub struct SeparationResult {
    pub xp_hat: BlockMatrix,
    pub xu_hat: BlockMatrix,
    pub a1_hat: SparseCode,
    pub a2_hat: SparseCode,
    /// Learned background dictionary; `None` when the background dictionary was fixed.
    pub d2_hat: Option<Dictionary>,
    pub objective_trace: Vec<TraceEntry>,
    pub outer_iters: usize,
    pub converged: bool,
    pub wall_time: f64,
}

fn check_rows(x: &BlockMatrix, d: &Dictionary) -> Result<()> {
    x.check()?;
    if x.data.nrows() != d.rows() {
        return Err(Error::invalid(format!(
            "blocks have {} rows but dictionary `{}` has {}",
            x.data.nrows(),
            d.id(),
            d.rows()
        )));
    }
    Ok(())
}

fn ensure_finite(stage: Stage, m: &DMatrix<f64>) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::numeric(stage.tag(), "non-finite values"))
    }
}

/// Splits stacked codes `[A1; A2]` after `d1` rows.
fn split_codes(a: &DMatrix<f64>, d1: &Dictionary, d2: &Dictionary) -> (SparseCode, SparseCode) {
    let (k1, k2) = (d1.num_atoms(), d2.num_atoms());
    (
        SparseCode {
            coeffs: a.rows(0, k1).into_owned(),
            dict_id: d1.id().to_string(),
        },
        SparseCode {
            coeffs: a.rows(k1, k2).into_owned(),
            dict_id: d2.id().to_string(),
        },
    )
}

fn stack(a1: &DMatrix<f64>, a2: &DMatrix<f64>) -> DMatrix<f64> {
    let (k1, k2, q) = (a1.nrows(), a2.nrows(), a1.ncols());
    let mut out = DMatrix::zeros(k1 + k2, q);
    out.rows_mut(0, k1).copy_from(a1);
    out.rows_mut(k1, k2).copy_from(a2);
    out
}

fn l1(a: &DMatrix<f64>) -> f64 {
    a.iter().map(|v| v.abs()).sum()
}

/// Fixed-dictionary MCA in penalised form:
/// `min ||X - D1 A1 - D2 A2||_F^2 + lambda (||A1||_1 + ||A2||_1)`.
pub fn mca_separate(x: &BlockMatrix, d1: &Dictionary, d2: &Dictionary, lambda: f64) -> Result<SeparationResult> {
    mca_separate_with(x, d1, d2, lambda, &LassoOptions::default())
}

pub fn mca_separate_with(
    x: &BlockMatrix,
    d1: &Dictionary,
    d2: &Dictionary,
    lambda: f64,
    opts: &LassoOptions,
) -> Result<SeparationResult> {
    let start = Instant::now();
    check_rows(x, d1)?;
    check_rows(x, d2)?;
    let fit = if d2.is_orthonormal_basis() {
        lasso_split_basis(d1, d2, &x.data, lambda, opts, None)?
    } else {
        lasso(&d1.concat(d2)?, &x.data, lambda, opts)?
    };
    ensure_finite(Stage::Mca, &fit.code.coeffs)?;
    let (a1, a2) = split_codes(&fit.code.coeffs, d1, d2);
    let xp = d1.atoms() * &a1.coeffs;
    let xu = d2.atoms() * &a2.coeffs;
    Ok(SeparationResult {
        xp_hat: x.with_data(xp)?,
        xu_hat: x.with_data(xu)?,
        a1_hat: a1,
        a2_hat: a2,
        d2_hat: None,
        objective_trace: vec![TraceEntry {
            stage: Stage::Mca,
            value: fit.diagnostics.objective(),
        }],
        outer_iters: 1,
        converged: fit.diagnostics.converged,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

/// First estimate of the known-component codes, per [`Init`].
pub fn initialize_known_codes(
    x: &BlockMatrix,
    d1: &Dictionary,
    init: Init,
    lambda1: f64,
    opts: &LassoOptions,
) -> Result<SparseCode> {
    check_rows(x, d1)?;
    let a1 = match init {
        Init::LassoD1 => lasso(d1, &x.data, lambda1, opts)?.code,
        Init::McaDctOmp => {
            let dct = dct_dictionary(x.block_len)?;
            let mca = mca_separate_with(x, d1, &dct, lambda1, opts)?;
            omp_one_step_columns(d1, &mca.xp_hat.data)?
        }
    };
    ensure_finite(Stage::Init, &a1.coeffs)?;
    Ok(a1)
}

/// Semi-blind MCA: alternate dictionary learning on `X - D1 A1` with a joint
/// LASSO over `[D1 D2]`.
pub fn sbmca_separate(x: &BlockMatrix, d1: &Dictionary, params: &SbmcaParams) -> Result<SeparationResult> {
    let start = Instant::now();
    params.validate()?;
    let a1 = initialize_known_codes(x, d1, params.init, params.lambda1, &params.lasso)?;
    let mut res = sbmca_separate_from(x, d1, &a1.coeffs, params)?;
    res.wall_time = start.elapsed().as_secs_f64();
    Ok(res)
}

/// The SBMCA iterations starting from given known-component codes; `lambda1`
/// and `init` in `params` are not used.
pub fn sbmca_separate_from(
    x: &BlockMatrix,
    d1: &Dictionary,
    a1_init: &DMatrix<f64>,
    params: &SbmcaParams,
) -> Result<SeparationResult> {
    let start = Instant::now();
    check_rows(x, d1)?;
    params.validate()?;
    if a1_init.shape() != (d1.num_atoms(), x.num_blocks()) {
        return Err(Error::invalid("initial codes do not match dictionary and block count"));
    }
    ensure_finite(Stage::Init, a1_init)?;
    let xd = &x.data;
    let mut trace = Vec::new();
    let mut a1 = a1_init.clone();
    let mut f_prev = (xd - d1.atoms() * &a1).norm_squared() + params.lambda3 * l1(&a1);
    trace.push(TraceEntry {
        stage: Stage::Init,
        value: f_prev,
    });

    let mut dict_opts = params.dict_opts.clone();
    dict_opts.lambda2 = params.lambda2;
    let mut d2: Option<Dictionary> = None;
    let mut a2 = DMatrix::zeros(dict_opts.num_atoms, xd.ncols());
    let mut converged = false;
    let mut outer = 0;

    while outer < params.max_outer_iters {
        outer += 1;

        let residual = xd - d1.atoms() * &a1;
        let warm = d2.as_ref().map(|d| (d, &a2));
        let learned = learn_dictionary_warm(&residual, &dict_opts, warm)?;
        ensure_finite(Stage::DictLearn, &learned.code.coeffs)?;
        trace.push(TraceEntry {
            stage: Stage::DictLearn,
            value: learned.trace.last().map_or(0.0, |r| r.objective),
        });
        let d2_cur = learned.dictionary;

        let joint = d1.concat(&d2_cur)?;
        let init = stack(&a1, &learned.code.coeffs);
        let fit = lasso_warm(&joint, xd, params.lambda3, &params.lasso, Some(&init))?;
        ensure_finite(Stage::CoefUpdate, &fit.code.coeffs)?;
        let (c1, c2) = split_codes(&fit.code.coeffs, d1, &d2_cur);
        a1 = c1.coeffs;
        a2 = c2.coeffs;
        d2 = Some(d2_cur);

        let f = fit.diagnostics.objective();
        if !f.is_finite() {
            return Err(Error::numeric(Stage::CoefUpdate.tag(), "objective is not finite"));
        }
        trace.push(TraceEntry {
            stage: Stage::CoefUpdate,
            value: f,
        });
        let rel = if f_prev == f { 0.0 } else { (f_prev - f).abs() / f_prev.abs() };
        f_prev = f;
        if rel < params.outer_tol {
            converged = true;
            break;
        }
    }

    let d2 = d2.expect("at least one outer iteration runs");
    let xp = d1.atoms() * &a1;
    let xu = d2.atoms() * &a2;
    Ok(SeparationResult {
        xp_hat: x.with_data(xp)?,
        xu_hat: x.with_data(xu)?,
        a1_hat: SparseCode {
            coeffs: a1,
            dict_id: d1.id().to_string(),
        },
        a2_hat: SparseCode {
            coeffs: a2,
            dict_id: d2.id().to_string(),
        },
        d2_hat: Some(d2),
        objective_trace: trace,
        outer_iters: outer,
        converged,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

/// Best rank-`r` Frobenius approximation of the block matrix.
pub fn truncated_svd_denoise(x: &BlockMatrix, r: usize) -> Result<BlockMatrix> {
    x.check()?;
    let (m, q) = x.data.shape();
    if r == 0 || r > m.min(q) {
        return Err(Error::invalid(format!("rank {r} outside 1..={}", m.min(q))));
    }
    if x.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("data contains non-finite entries"));
    }
    let svd = x.data.clone().svd(true, true);
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let u = svd.u.as_ref().expect("u requested");
    let vt = svd.v_t.as_ref().expect("v_t requested");
    let mut out = DMatrix::zeros(m, q);
    for &i in &order[..r] {
        out += u.column(i) * vt.row(i) * svd.singular_values[i];
    }
    x.with_data(out)
}
