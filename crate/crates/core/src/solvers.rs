//! Sparse-approximation kernels.
//!
//! [`lasso`] minimises, independently for every column `j` of `X`,
//!
//! ```text
//! ||x_j - D a_j||_2^2 + lambda * ||a_j||_1
//! ```
//!
//! Note there is no 1/2 on the quadratic term, so for an orthonormal `D`
//! the solution is `soft_threshold(D^T x_j, lambda / 2)`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::dictionaries::Dictionary;
use crate::error::{Error, Result};

/// `sign(v) * max(|v| - tau, 0)`.
#[inline]
pub fn soft_threshold(v: f64, tau: f64) -> f64 {
    debug_assert!(tau >= 0.0);
    if v > tau {
        v - tau
    } else if v < -tau {
        v + tau
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LassoSolver {
    #[default]
    CoordinateDescent,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LassoOptions {
    pub max_iters: usize,
    /// Relative objective change between sweeps below which the KKT check runs.
    pub tol: f64,
    /// Maximum KKT violation accepted as converged.
    pub kkt_tol: f64,
    pub solver: LassoSolver,
}

impl Default for LassoOptions {
    fn default() -> Self {
        LassoOptions {
            max_iters: 500,
            tol: 1e-7,
            kkt_tol: 1e-5,
            solver: LassoSolver::CoordinateDescent,
        }
    }
}

impl LassoOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters must be at least 1"));
        }
        if !(self.tol > 0.0) || !(self.kkt_tol > 0.0) {
            return Err(Error::invalid("solver tolerances must be positive"));
        }
        Ok(())
    }
}

/// Coefficients together with the id of the dictionary they index.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseCode {
    pub coeffs: DMatrix<f64>,
    pub dict_id: String,
}

impl SparseCode {
    pub fn zeros(dict: &Dictionary, q: usize) -> Self {
        SparseCode {
            coeffs: DMatrix::zeros(dict.num_atoms(), q),
            dict_id: dict.id().to_string(),
        }
    }

    pub fn l1_norm(&self) -> f64 {
        self.coeffs.iter().map(|v| v.abs()).sum()
    }

    pub fn nnz(&self) -> usize {
        self.coeffs.iter().filter(|v| **v != 0.0).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LassoDiagnostics {
    /// Every column met the KKT tolerance.
    pub converged: bool,
    /// Largest number of sweeps used by any column.
    pub sweeps: usize,
    /// Largest KKT violation over all columns at exit.
    pub max_kkt: f64,
    /// Total objective (summed over columns) before the first sweep and after each sweep.
    pub objective_trace: Vec<f64>,
}

impl LassoDiagnostics {
    pub fn objective(&self) -> f64 {
        *self.objective_trace.last().unwrap_or(&0.0)
    }
}

#[derive(Debug, Clone)]
pub struct LassoFit {
    pub code: SparseCode,
    pub diagnostics: LassoDiagnostics,
}

pub fn lasso(dict: &Dictionary, x: &DMatrix<f64>, lambda: f64, opts: &LassoOptions) -> Result<LassoFit> {
    lasso_warm(dict, x, lambda, opts, None)
}

/// [`lasso`] started from `init` instead of zero.
pub fn lasso_warm(
    dict: &Dictionary,
    x: &DMatrix<f64>,
    lambda: f64,
    opts: &LassoOptions,
    init: Option<&DMatrix<f64>>,
) -> Result<LassoFit> {
    opts.validate()?;
    let d = dict.atoms();
    if x.nrows() != d.nrows() {
        return Err(Error::invalid(format!(
            "data has {} rows but dictionary has {}",
            x.nrows(),
            d.nrows()
        )));
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::invalid(format!("lambda must be positive and finite, got {lambda}")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("data contains non-finite entries"));
    }
    let k = d.ncols();
    let q = x.ncols();
    if let Some(a0) = init {
        if a0.shape() != (k, q) {
            return Err(Error::invalid(format!(
                "warm start has shape {:?}, expected {:?}",
                a0.shape(),
                (k, q)
            )));
        }
        if a0.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("warm start contains non-finite entries"));
        }
    }

    let gram = d.transpose() * d;
    let corr = d.transpose() * x;

    let columns: Vec<ColumnFit> = (0..q)
        .into_par_iter()
        .map(|j| {
            let mut a: Vec<f64> = match init {
                Some(a0) => a0.column(j).iter().copied().collect(),
                None => vec![0.0; k],
            };
            let xnorm2 = x.column(j).norm_squared();
            let fit = solve_column(&gram, corr.column(j).as_slice(), xnorm2, lambda, &mut a, opts);
            ColumnFit { a, ..fit }
        })
        .collect();

    let sweeps = columns.iter().map(|c| c.trace.len() - 1).max().unwrap_or(0);
    let mut trace = vec![0.0; sweeps + 1];
    for c in &columns {
        let last = *c.trace.last().unwrap();
        for (s, t) in trace.iter_mut().enumerate() {
            *t += c.trace.get(s).copied().unwrap_or(last);
        }
    }
    let mut coeffs = DMatrix::zeros(k, q);
    for (j, c) in columns.iter().enumerate() {
        coeffs.column_mut(j).copy_from_slice(&c.a);
    }
    Ok(LassoFit {
        code: SparseCode {
            coeffs,
            dict_id: dict.id().to_string(),
        },
        diagnostics: LassoDiagnostics {
            converged: columns.iter().all(|c| c.converged),
            sweeps,
            max_kkt: columns.iter().map(|c| c.kkt).fold(0.0, f64::max),
            objective_trace: trace,
        },
    })
}

/// Objective `||X - D A||_F^2 + lambda ||A||_1` evaluated directly.
pub fn lasso_objective(d: &DMatrix<f64>, x: &DMatrix<f64>, a: &DMatrix<f64>, lambda: f64) -> f64 {
    (x - d * a).norm_squared() + lambda * a.iter().map(|v| v.abs()).sum::<f64>()
}

/// Largest KKT violation of `a` for the column objective, using `grad = 2 (D^T D a - D^T x)`.
pub fn kkt_violation(gram: &DMatrix<f64>, corr: &[f64], a: &[f64], lambda: f64) -> f64 {
    let mut worst: f64 = 0.0;
    for k in 0..a.len() {
        let g = 2.0 * (gram.column(k).iter().zip(a).map(|(gk, ak)| gk * ak).sum::<f64>() - corr[k]);
        let v = if a[k] > 0.0 {
            (g + lambda).abs()
        } else if a[k] < 0.0 {
            (g - lambda).abs()
        } else {
            (g.abs() - lambda).max(0.0)
        };
        worst = worst.max(v);
    }
    worst
}

struct ColumnFit {
    a: Vec<f64>,
    converged: bool,
    kkt: f64,
    trace: Vec<f64>,
}

/// Cyclic coordinate descent on one column, in place.
///
/// `half_grad = G a - c` is maintained incrementally and refreshed exactly
/// before every KKT check.
fn solve_column(
    gram: &DMatrix<f64>,
    corr: &[f64],
    xnorm2: f64,
    lambda: f64,
    a: &mut [f64],
    opts: &LassoOptions,
) -> ColumnFit {
    let k = a.len();
    let half_lambda = 0.5 * lambda;
    let mut half_grad = vec![0.0; k];
    refresh_half_grad(gram, corr, a, &mut half_grad);

    let objective = |a: &[f64], hg: &[f64]| -> f64 {
        let mut f = xnorm2;
        for i in 0..k {
            if a[i] != 0.0 {
                f += a[i] * (hg[i] - corr[i]) + lambda * a[i].abs();
            }
        }
        f
    };

    let mut f_prev = objective(a, &half_grad);
    let mut trace = vec![f_prev];
    let mut best = a.to_vec();
    let mut best_f = f_prev;
    let mut converged = false;
    let mut kkt = f64::INFINITY;
    let mut last_pattern: Vec<(usize, bool)> = Vec::new();

    for _ in 0..opts.max_iters {
        for i in 0..k {
            let gii = gram[(i, i)];
            if gii <= 0.0 {
                continue;
            }
            let old = a[i];
            let z = old - half_grad[i] / gii;
            let new = soft_threshold(z, half_lambda / gii);
            let delta = new - old;
            if delta != 0.0 {
                a[i] = new;
                for (h, g) in half_grad.iter_mut().zip(gram.column(i).iter()) {
                    *h += delta * g;
                }
            }
        }
        let mut f = objective(a, &half_grad);
        let pattern: Vec<(usize, bool)> = (0..k).filter(|&i| a[i] != 0.0).map(|i| (i, a[i] > 0.0)).collect();
        if pattern == last_pattern {
            if let Some(fp) = polish_support(gram, corr, xnorm2, lambda, a, f) {
                f = fp;
                refresh_half_grad(gram, corr, a, &mut half_grad);
            }
        }
        last_pattern = pattern;
        trace.push(f);
        if f <= best_f {
            best_f = f;
            best.copy_from_slice(a);
        }
        let rel = (f_prev - f).abs() / f_prev.abs().max(f64::MIN_POSITIVE);
        if rel < opts.tol || f == f_prev {
            refresh_half_grad(gram, corr, a, &mut half_grad);
            kkt = kkt_violation(gram, corr, a, lambda);
            if kkt <= opts.kkt_tol {
                converged = true;
                break;
            }
        }
        f_prev = f;
    }
    if !converged {
        a.copy_from_slice(&best);
        kkt = kkt_violation(gram, corr, a, lambda);
    }
    ColumnFit {
        a: Vec::new(),
        converged,
        kkt,
        trace,
    }
}

/// Exact minimiser on the current support with the current signs.
///
/// Solves `G_SS a_S = c_S - (lambda/2) sign(a_S)` and moves towards that
/// point, stopping where the first coordinate reaches zero. The step is taken
/// only when the objective does not increase, in which case the new objective
/// is returned.
fn polish_support(gram: &DMatrix<f64>, corr: &[f64], xnorm2: f64, lambda: f64, a: &mut [f64], f: f64) -> Option<f64> {
    let support: Vec<usize> = (0..a.len()).filter(|&i| a[i] != 0.0).collect();
    let s = support.len();
    if s == 0 || s > 256 {
        return None;
    }
    let gss = DMatrix::from_fn(s, s, |r, c| gram[(support[r], support[c])]);
    let rhs = DVector::from_fn(s, |r, _| corr[support[r]] - 0.5 * lambda * a[support[r]].signum());
    let cur = DVector::from_fn(s, |r, _| a[support[r]]);
    // Direction towards the minimiser of the signed quadratic, or, when that
    // is unbounded on a singular face, a descent direction in the null space.
    let (dir, tmax) = match gss.clone().cholesky() {
        Some(ch) => (ch.solve(&rhs) - &cur, 1.0),
        None => {
            let eig = gss.clone().symmetric_eigen();
            let wmax = eig.eigenvalues.amax();
            let cutoff = 1e-10 * wmax.max(f64::MIN_POSITIVE);
            let g = &gss * &cur - &rhs;
            let vg = eig.eigenvectors.transpose() * &g;
            let mut newton = DVector::zeros(s);
            let mut null = DVector::zeros(s);
            for (r, w) in eig.eigenvalues.iter().enumerate() {
                if *w > cutoff {
                    newton[r] = -vg[r] / w;
                } else {
                    null[r] = -vg[r];
                }
            }
            if null.norm() > 1e-12 * g.norm().max(f64::MIN_POSITIVE) {
                (&eig.eigenvectors * null, f64::INFINITY)
            } else {
                (&eig.eigenvectors * newton, 1.0)
            }
        }
    };
    if dir.iter().any(|v| !v.is_finite()) {
        return None;
    }
    // The signed quadratic decreases along the segment, so stop at the first
    // sign change and drop that coordinate.
    let mut t = tmax;
    let mut hit = None;
    for r in 0..s {
        if dir[r] != 0.0 && dir[r].signum() != cur[r].signum() {
            let ti = -cur[r] / dir[r];
            if ti < t {
                t = ti;
                hit = Some(r);
            }
        }
    }
    if !t.is_finite() {
        return None;
    }
    let mut sol = &cur + &dir * t;
    for r in 0..s {
        if sol[r].signum() != cur[r].signum() {
            sol[r] = 0.0;
        }
    }
    if let Some(h) = hit {
        sol[h] = 0.0;
    }
    // f = ||x||^2 - 2 c^T a + a^T G a + lambda ||a||_1
    let mut quad = 0.0;
    for r in 0..s {
        let mut row = 0.0;
        for c in 0..s {
            row += gss[(r, c)] * sol[c];
        }
        quad += sol[r] * row;
    }
    let lin: f64 = sol.iter().zip(&support).map(|(v, &i)| v * corr[i]).sum();
    let l1: f64 = sol.iter().map(|v| v.abs()).sum();
    let fp = xnorm2 - 2.0 * lin + quad + lambda * l1;
    if !(fp <= f) {
        return None;
    }
    for (v, &i) in sol.iter().zip(&support) {
        a[i] = *v;
    }
    Some(fp)
}

fn refresh_half_grad(gram: &DMatrix<f64>, corr: &[f64], a: &[f64], out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate() {
        *o = gram.column(i).iter().zip(a).map(|(g, v)| g * v).sum::<f64>() - corr[i];
    }
}

/// [`lasso_warm`] over the concatenation `[d1 basis]` when `basis` is a
/// square orthonormal basis (DCT, identity).
///
/// For fixed `a1` the optimal basis codes are `soft_threshold(B^T (x - D1 a1), lambda/2)`.
/// Eliminating them leaves a Huber-loss lasso in the `d1` codes only, which
/// is solved by proximal Newton steps with an exact line search. The returned
/// coefficients are stacked `[a1; a2]`, as `lasso` on the concatenation would
/// return them, and the objective is the same.
pub fn lasso_split_basis(
    d1: &Dictionary,
    basis: &Dictionary,
    x: &DMatrix<f64>,
    lambda: f64,
    opts: &LassoOptions,
    init: Option<&DMatrix<f64>>,
) -> Result<LassoFit> {
    opts.validate()?;
    if !basis.is_orthonormal_basis() {
        return Err(Error::invalid(format!("dictionary {} is not an orthonormal basis", basis.id())));
    }
    if d1.rows() != basis.rows() || x.nrows() != d1.rows() {
        return Err(Error::invalid(format!(
            "row mismatch: data {}, dictionaries {} and {}",
            x.nrows(),
            d1.rows(),
            basis.rows()
        )));
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::invalid(format!("lambda must be positive and finite, got {lambda}")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("data contains non-finite entries"));
    }
    let k1 = d1.num_atoms();
    let m = basis.num_atoms();
    let q = x.ncols();
    if let Some(a0) = init {
        if a0.shape() != (k1 + m, q) {
            return Err(Error::invalid(format!(
                "warm start has shape {:?}, expected {:?}",
                a0.shape(),
                (k1 + m, q)
            )));
        }
        if a0.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("warm start contains non-finite entries"));
        }
    }

    let bt = basis.atoms().transpose();
    let proj = &bt * d1.atoms();
    let bx = &bt * x;
    let problem = HuberLasso::new(proj, lambda);

    let columns: Vec<(Vec<f64>, ColumnFit)> = (0..q)
        .into_par_iter()
        .map(|j| {
            let mut a: Vec<f64> = match init {
                Some(a0) => a0.column(j).rows(0, k1).iter().copied().collect(),
                None => vec![0.0; k1],
            };
            let b = bx.column(j);
            let fit = problem.solve(b.as_slice(), &mut a, opts);
            let u = problem.residual(b.as_slice(), &a);
            let mut full = a;
            full.extend(u.iter().map(|v| soft_threshold(*v, problem.tau)));
            (full, fit)
        })
        .collect();

    let sweeps = columns.iter().map(|(_, c)| c.trace.len() - 1).max().unwrap_or(0);
    let mut trace = vec![0.0; sweeps + 1];
    for (_, c) in &columns {
        let last = *c.trace.last().unwrap();
        for (s, t) in trace.iter_mut().enumerate() {
            *t += c.trace.get(s).copied().unwrap_or(last);
        }
    }
    let mut coeffs = DMatrix::zeros(k1 + m, q);
    for (j, (a, _)) in columns.iter().enumerate() {
        coeffs.column_mut(j).copy_from_slice(a);
    }
    Ok(LassoFit {
        code: SparseCode {
            coeffs,
            dict_id: format!("{}+{}", d1.id(), basis.id()),
        },
        diagnostics: LassoDiagnostics {
            converged: columns.iter().all(|(_, c)| c.converged),
            sweeps,
            max_kkt: columns.iter().map(|(_, c)| c.kkt).fold(0.0, f64::max),
            objective_trace: trace,
        },
    })
}

/// `sum_i h(b_i - (P a)_i) + lambda ||a||_1` with `h` the Huber function of
/// threshold `tau = lambda/2`, scaled so that `h(u) = u^2` for `|u| <= tau`.
struct HuberLasso {
    proj: DMatrix<f64>,
    lambda: f64,
    tau: f64,
    ridge: f64,
}

impl HuberLasso {
    fn new(proj: DMatrix<f64>, lambda: f64) -> Self {
        let max_diag = proj.column_iter().map(|c| 2.0 * c.norm_squared()).fold(0.0, f64::max);
        HuberLasso {
            proj,
            lambda,
            tau: 0.5 * lambda,
            ridge: 1e-10 * (1.0 + max_diag),
        }
    }

    fn residual(&self, b: &[f64], a: &[f64]) -> Vec<f64> {
        let mut u = b.to_vec();
        for (k, &ak) in a.iter().enumerate() {
            if ak != 0.0 {
                for (ui, p) in u.iter_mut().zip(self.proj.column(k).iter()) {
                    *ui -= ak * p;
                }
            }
        }
        u
    }

    fn huber(&self, u: f64) -> f64 {
        let au = u.abs();
        if au <= self.tau {
            u * u
        } else {
            2.0 * self.tau * au - self.tau * self.tau
        }
    }

    fn value(&self, u: &[f64], a: &[f64]) -> f64 {
        u.iter().map(|&v| self.huber(v)).sum::<f64>() + self.lambda * a.iter().map(|v| v.abs()).sum::<f64>()
    }

    /// `-P^T clip(u, tau)`, half the gradient of the smooth part.
    fn half_grad(&self, u: &[f64]) -> Vec<f64> {
        self.proj
            .column_iter()
            .map(|c| -c.iter().zip(u).map(|(p, v)| p * v.clamp(-self.tau, self.tau)).sum::<f64>())
            .collect()
    }

    fn kkt(&self, hg: &[f64], a: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for (g, &ak) in hg.iter().zip(a) {
            let g = 2.0 * g;
            let v = if ak > 0.0 {
                (g + self.lambda).abs()
            } else if ak < 0.0 {
                (g - self.lambda).abs()
            } else {
                (g.abs() - self.lambda).max(0.0)
            };
            worst = worst.max(v);
        }
        worst
    }

    fn solve(&self, b: &[f64], a: &mut [f64], opts: &LassoOptions) -> ColumnFit {
        let k = a.len();
        let mut u = self.residual(b, a);
        let mut f = self.value(&u, a);
        let mut trace = vec![f];
        let mut converged = false;
        let mut kkt = f64::INFINITY;
        for _ in 0..opts.max_iters {
            let hg = self.half_grad(&u);
            kkt = self.kkt(&hg, a);
            if kkt <= opts.kkt_tol {
                converged = true;
                break;
            }
            let z = self.newton_model_step(&u, &hg, a);
            let d: Vec<f64> = z.iter().zip(a.iter()).map(|(zi, ai)| zi - ai).collect();
            if d.iter().all(|v| *v == 0.0) {
                break;
            }
            let v = DVector::from(self.proj.clone() * DVector::from_column_slice(&d));
            let t = self.line_search(&u, v.as_slice(), a, &d, f);
            if t == 0.0 {
                break;
            }
            let mut next: Vec<f64> = a.iter().zip(&d).map(|(ai, di)| ai + t * di).collect();
            for (ni, (ai, di)) in next.iter_mut().zip(a.iter().zip(&d)) {
                // land exactly on zero when the step crosses it at the kink
                if *di != 0.0 && (ai + t * di).abs() <= 1e-15 * ai.abs().max(di.abs()) {
                    *ni = 0.0;
                }
            }
            let u_next = self.residual(b, &next);
            let f_next = self.value(&u_next, &next);
            if !(f_next <= f) {
                break;
            }
            a.copy_from_slice(&next);
            u = u_next;
            f = f_next;
            trace.push(f);
        }
        if !converged {
            kkt = self.kkt(&self.half_grad(&u), a);
            converged = kkt <= opts.kkt_tol;
        }
        debug_assert_eq!(k, a.len());
        ColumnFit {
            a: Vec::new(),
            converged,
            kkt,
            trace,
        }
    }

    /// Minimiser of the local quadratic model plus the l1 term, by coordinate descent.
    fn newton_model_step(&self, u: &[f64], hg: &[f64], a: &[f64]) -> Vec<f64> {
        let k = a.len();
        let mut h = DMatrix::<f64>::zeros(k, k);
        let active: Vec<usize> = (0..u.len()).filter(|&i| u[i].abs() <= self.tau).collect();
        if !active.is_empty() {
            let pq = self.proj.select_rows(active.iter());
            h = pq.transpose() * pq * 2.0;
        }
        for i in 0..k {
            h[(i, i)] += self.ridge;
        }
        let mut z = a.to_vec();
        let mut w = vec![0.0; k];
        let scale = 1.0 + a.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        for _ in 0..2000 {
            let mut max_delta: f64 = 0.0;
            for j in 0..k {
                let hjj = h[(j, j)];
                let g = 2.0 * hg[j] + w[j];
                let new = soft_threshold(z[j] - g / hjj, self.lambda / hjj);
                let delta = new - z[j];
                if delta != 0.0 {
                    z[j] = new;
                    for (wi, hv) in w.iter_mut().zip(h.column(j).iter()) {
                        *wi += delta * hv;
                    }
                    max_delta = max_delta.max(delta.abs());
                }
            }
            if max_delta <= 1e-15 * scale {
                break;
            }
        }
        z
    }

    /// Exact minimiser over `t >= 0` of the convex piecewise quadratic
    /// `phi(t) = F(a + t d)`, by bisection on its right derivative.
    fn line_search(&self, u: &[f64], v: &[f64], a: &[f64], d: &[f64], f0: f64) -> f64 {
        let slope = |t: f64| -> f64 {
            let mut s = 0.0;
            for (ui, vi) in u.iter().zip(v) {
                s -= 2.0 * vi * (ui - t * vi).clamp(-self.tau, self.tau);
            }
            for (ai, di) in a.iter().zip(d) {
                if *di != 0.0 {
                    let y = ai + t * di;
                    let sg = if y != 0.0 { y.signum() } else { di.signum() };
                    s += self.lambda * di * sg;
                }
            }
            s
        };
        let phi = |t: f64| -> f64 {
            let mut s = 0.0;
            for (ui, vi) in u.iter().zip(v) {
                s += self.huber(ui - t * vi);
            }
            s + self.lambda * a.iter().zip(d).map(|(ai, di)| (ai + t * di).abs()).sum::<f64>()
        };
        if slope(0.0) >= 0.0 {
            return 0.0;
        }
        let mut lo = 0.0;
        let mut hi = 1.0;
        while slope(hi) < 0.0 {
            lo = hi;
            hi *= 2.0;
            if hi > 1e12 {
                break;
            }
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if slope(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let mut best = (0.0, f0);
        for t in [lo, hi, 1.0] {
            if t >= lo && t <= hi {
                let p = phi(t);
                if p < best.1 {
                    best = (t, p);
                }
            }
        }
        best.0
    }
}

/// One step of orthogonal matching pursuit.
///
/// Picks the atom with the largest `|d_k^T x|` (lowest index on ties) and
/// returns a vector with that single coefficient set to `d_k^T x`.
pub fn omp_one_step(dict: &Dictionary, x: &[f64]) -> Result<DVector<f64>> {
    let d = dict.atoms();
    if x.len() != d.nrows() {
        return Err(Error::invalid(format!(
            "signal has length {} but dictionary has {} rows",
            x.len(),
            d.nrows()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("signal contains non-finite entries"));
    }
    let mut out = DVector::zeros(d.ncols());
    let mut best: Option<(usize, f64)> = None;
    for (k, col) in d.column_iter().enumerate() {
        let c: f64 = col.iter().zip(x).map(|(a, b)| a * b).sum();
        if c != 0.0 && best.map_or(true, |(_, b)| c.abs() > b.abs()) {
            best = Some((k, c));
        }
    }
    if let Some((k, c)) = best {
        out[k] = c;
    }
    Ok(out)
}

/// [`omp_one_step`] applied to every column of `x`.
pub fn omp_one_step_columns(dict: &Dictionary, x: &DMatrix<f64>) -> Result<SparseCode> {
    let mut coeffs = DMatrix::zeros(dict.num_atoms(), x.ncols());
    for (j, col) in x.column_iter().enumerate() {
        let a = omp_one_step(dict, &col.iter().copied().collect::<Vec<_>>())?;
        coeffs.set_column(j, &a);
    }
    Ok(SparseCode {
        coeffs,
        dict_id: dict.id().to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dictionaries::{dct_dictionary, identity_dictionary, AtomLabel};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_dictionary(m: usize, d: usize, rng: &mut ChaCha8Rng) -> Dictionary {
        let mut a = DMatrix::from_fn(m, d, |_, _| rng.random_range(-1.0..1.0));
        for mut c in a.column_iter_mut() {
            let n = c.norm();
            c /= n;
        }
        Dictionary::new(a, (0..d).map(AtomLabel::Learned).collect(), "rand").unwrap()
    }

    #[test]
    fn soft_threshold_examples() {
        assert_eq!(soft_threshold(2.0, 0.5), 1.5);
        assert_eq!(soft_threshold(-0.3, 0.5), 0.0);
        assert_eq!(soft_threshold(-1.25, 0.0), -1.25);
        assert_eq!(soft_threshold(-2.0, 0.5), -1.5);
    }

    #[test]
    fn orthonormal_closed_form() {
        let d = dct_dictionary(16).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = DMatrix::from_fn(16, 4, |_, _| rng.random_range(-1.0..1.0));
        let lambda = 0.3;
        let fit = lasso(&d, &x, lambda, &LassoOptions::default()).unwrap();
        let want = (d.atoms().transpose() * &x).map(|v| soft_threshold(v, lambda / 2.0));
        assert!((fit.code.coeffs - want).amax() < 1e-8);
        assert!(fit.diagnostics.converged);
    }

    #[test]
    fn identity_reduces_to_entrywise_threshold() {
        let d = identity_dictionary(5).unwrap();
        let x = DMatrix::from_row_slice(5, 2, &[1.0, -0.1, 0.2, 3.0, -2.0, 0.05, 0.0, 0.4, 0.6, -0.6]);
        let fit = lasso(&d, &x, 0.5, &LassoOptions::default()).unwrap();
        assert_eq!(fit.code.coeffs, x.map(|v| soft_threshold(v, 0.25)));
    }

    #[test]
    fn large_lambda_gives_exact_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let d = random_dictionary(6, 9, &mut rng);
        let x = DMatrix::from_fn(6, 3, |_, _| rng.random_range(-1.0..1.0));
        let lmax = 2.0 * (d.atoms().transpose() * &x).amax();
        let fit = lasso(&d, &x, lmax, &LassoOptions::default()).unwrap();
        assert!(fit.code.coeffs.iter().all(|v| *v == 0.0));
        assert!(fit.diagnostics.converged);
    }

    #[test]
    fn kkt_and_monotone_on_random_problem() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let d = random_dictionary(30, 50, &mut rng);
        let x = DMatrix::from_fn(30, 7, |_, _| rng.random_range(-1.0..1.0));
        let fit = lasso(&d, &x, 0.05, &LassoOptions { max_iters: 5000, ..Default::default() }).unwrap();
        assert!(fit.diagnostics.converged);
        assert!(fit.diagnostics.max_kkt <= 1e-5);
        let t = &fit.diagnostics.objective_trace;
        for w in t.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12), "{} -> {}", w[0], w[1]);
        }
        let direct = lasso_objective(d.atoms(), &x, &fit.code.coeffs, 0.05);
        assert!((direct - fit.diagnostics.objective()).abs() < 1e-8 * direct.max(1.0));
    }

    #[test]
    fn warm_start_from_solution_is_immediate() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d = random_dictionary(10, 14, &mut rng);
        let x = DMatrix::from_fn(10, 3, |_, _| rng.random_range(-1.0..1.0));
        let opts = LassoOptions::default();
        let cold = lasso(&d, &x, 0.1, &opts).unwrap();
        let warm = lasso_warm(&d, &x, 0.1, &opts, Some(&cold.code.coeffs)).unwrap();
        assert!(warm.diagnostics.sweeps <= 2, "{}", warm.diagnostics.sweeps);
        assert!(warm.diagnostics.converged);
        assert!(warm.diagnostics.objective() <= cold.diagnostics.objective() * (1.0 + 1e-12));
    }

    #[test]
    fn lasso_rejects_bad_input() {
        let d = identity_dictionary(3).unwrap();
        let mut x = DMatrix::zeros(3, 1);
        assert!(lasso(&d, &x, 0.0, &LassoOptions::default()).is_err());
        assert!(lasso(&d, &DMatrix::zeros(4, 1), 1.0, &LassoOptions::default()).is_err());
        x[(1, 0)] = f64::NAN;
        assert!(matches!(lasso(&d, &x, 1.0, &LassoOptions::default()), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn non_convergence_is_flagged_not_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d = random_dictionary(20, 40, &mut rng);
        let x = DMatrix::from_fn(20, 2, |_, _| rng.random_range(-1.0..1.0));
        let fit = lasso(&d, &x, 1e-4, &LassoOptions { max_iters: 1, ..Default::default() }).unwrap();
        assert!(!fit.diagnostics.converged);
        assert_eq!(fit.diagnostics.sweeps, 1);
    }

    #[test]
    fn split_basis_matches_joint_solver() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for basis in [dct_dictionary(8).unwrap(), identity_dictionary(8).unwrap()] {
            for trial in 0..10 {
                let d1 = random_dictionary(8, 3 + trial % 3, &mut rng);
                let x = DMatrix::from_fn(8, 3, |_, _| rng.random_range(-1.0..1.0));
                let lambda = rng.random_range(0.05..0.8);
                let opts = LassoOptions {
                    max_iters: 20000,
                    ..LassoOptions::default()
                };
                let joint = d1.concat(&basis).unwrap();
                let slow = lasso(&joint, &x, lambda, &opts).unwrap();
                let fast = lasso_split_basis(&d1, &basis, &x, lambda, &opts, None).unwrap();
                assert!(fast.diagnostics.converged);
                assert!(fast.diagnostics.max_kkt <= 1e-5);
                let f_fast = lasso_objective(joint.atoms(), &x, &fast.code.coeffs, lambda);
                let f_slow = lasso_objective(joint.atoms(), &x, &slow.code.coeffs, lambda);
                assert!((f_fast - f_slow).abs() <= 1e-9 * f_slow.max(1.0), "{f_fast} {f_slow}");
                assert!((fast.diagnostics.objective() - f_fast).abs() <= 1e-9 * f_fast.max(1.0));
                // the joint KKT conditions hold for the stacked codes
                let gram = joint.atoms().transpose() * joint.atoms();
                let corr = joint.atoms().transpose() * &x;
                for j in 0..3 {
                    let a: Vec<f64> = fast.code.coeffs.column(j).iter().copied().collect();
                    assert!(kkt_violation(&gram, corr.column(j).as_slice(), &a, lambda) <= 1e-5);
                }
                for w in fast.diagnostics.objective_trace.windows(2) {
                    assert!(w[1] <= w[0]);
                }
            }
        }
    }

    #[test]
    fn split_basis_rejects_non_basis() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d1 = random_dictionary(6, 2, &mut rng);
        let not_basis = random_dictionary(6, 6, &mut rng);
        let x = DMatrix::zeros(6, 1);
        assert!(lasso_split_basis(&d1, &not_basis, &x, 0.1, &LassoOptions::default(), None).is_err());
        let fit = lasso_split_basis(&d1, &identity_dictionary(6).unwrap(), &x, 0.1, &LassoOptions::default(), None).unwrap();
        assert_eq!(fit.code.nnz(), 0);
        assert!(fit.diagnostics.converged);
    }

    #[test]
    fn omp_examples() {
        let d = dct_dictionary(8).unwrap();
        let x: Vec<f64> = d.atoms().column(3).iter().copied().collect();
        let a = omp_one_step(&d, &x).unwrap();
        assert_eq!(a.iter().filter(|v| **v != 0.0).count(), 1);
        assert!((a[3] - 1.0).abs() < 1e-12);

        assert!(omp_one_step(&d, &[0.0; 8]).unwrap().iter().all(|v| *v == 0.0));

        let i2 = identity_dictionary(2).unwrap();
        let a = omp_one_step(&i2, &[0.6, -0.8]).unwrap();
        assert_eq!(a.as_slice(), &[0.0, -0.8]);

        // ties go to the lowest index
        let a = omp_one_step(&i2, &[0.5, -0.5]).unwrap();
        assert_eq!(a.as_slice(), &[0.5, 0.0]);

        assert!(omp_one_step(&i2, &[f64::INFINITY, 0.0]).is_err());
    }

    proptest! {
        #[test]
        fn soft_threshold_properties(v in -100f64..100.0, w in -100f64..100.0, tau in 0f64..10.0) {
            prop_assert_eq!(soft_threshold(-v, tau), -soft_threshold(v, tau));
            prop_assert!(soft_threshold(v, tau).abs() <= v.abs());
            prop_assert!((soft_threshold(v, tau) - soft_threshold(w, tau)).abs() <= (v - w).abs() + 1e-12);
            prop_assert_eq!(soft_threshold(v, 0.0), v);
        }

        #[test]
        fn omp_residual_orthogonal_to_selected_atom(seed in 0u64..1000, m in 2usize..12, d in 1usize..15) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let dict = random_dictionary(m, d, &mut rng);
            let x: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
            let a = omp_one_step(&dict, &x).unwrap();
            let r = DVector::from_vec(x) - dict.atoms() * &a;
            if let Some(k) = a.iter().position(|v| *v != 0.0) {
                prop_assert!(dict.atoms().column(k).dot(&r).abs() <= 1e-10);
            }
        }

        #[test]
        fn positive_scaling_covariance(seed in 0u64..200, c in 0.1f64..10.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = random_dictionary(6, 8, &mut rng);
            let x = DMatrix::from_fn(6, 2, |_, _| rng.random_range(-1.0..1.0));
            let opts = LassoOptions { max_iters: 20_000, kkt_tol: 1e-9, ..Default::default() };
            let a = lasso(&d, &x, 0.1, &opts).unwrap().code.coeffs;
            let b = lasso(&d, &(&x * c), 0.1 * c, &opts).unwrap().code.coeffs;
            prop_assert!((b - a * c).amax() <= 1e-6 * c.max(1.0));
        }
    }
}
