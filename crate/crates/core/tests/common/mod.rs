//! Independent reference computations shared by the integration tests.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sbmca::dictionaries::AtomLabel;
use sbmca::Dictionary;

pub fn gaussian_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| {
        let g: f64 = StandardNormal.sample(rng);
        g
    })
}

pub fn random_unit_dictionary(m: usize, d: usize, rng: &mut ChaCha8Rng) -> Dictionary {
    let mut a = gaussian_matrix(m, d, rng);
    for mut c in a.column_iter_mut() {
        let n = c.norm();
        c /= n;
    }
    Dictionary::new(a, (0..d).map(AtomLabel::Learned).collect(), "random").unwrap()
}

fn column_objective(d: &DMatrix<f64>, x: &DVector<f64>, a: &DVector<f64>, lambda: f64) -> f64 {
    (x - d * a).norm_squared() + lambda * a.lp_norm(1)
}

/// Solution of `min ||x - D a||^2 + lambda ||a||_1` by exhaustive enumeration
/// of supports and sign patterns.
///
/// For every support `S` and signs `s`, the stationarity condition on `S` is
/// `G_SS a_S = c_S - (lambda/2) s`. A candidate is kept when its signs agree
/// with `s` and every off-support coordinate satisfies `|2 (G a - c)_j| <= lambda`;
/// the lowest-objective candidate wins.
pub fn exhaustive_lasso(d: &DMatrix<f64>, x: &DVector<f64>, lambda: f64) -> DVector<f64> {
    let k = d.ncols();
    let m = d.nrows();
    assert!(k <= 16, "exhaustive oracle limited to 16 atoms");
    let g = d.transpose() * d;
    let c = d.transpose() * x;
    let mut best = DVector::zeros(k);
    let mut best_f = f64::INFINITY;
    let zero_ok = c.iter().all(|v| (2.0 * v).abs() <= lambda * (1.0 + 1e-9));
    if zero_ok {
        best_f = x.norm_squared();
    }
    for mask in 1u32..(1 << k) {
        let support: Vec<usize> = (0..k).filter(|i| mask & (1 << i) != 0).collect();
        let s = support.len();
        if s > m {
            continue;
        }
        let gss = DMatrix::from_fn(s, s, |r, q| g[(support[r], support[q])]);
        let Some(chol) = gss.clone().cholesky() else { continue };
        for signs in 0u32..(1 << s) {
            let sg: Vec<f64> = (0..s).map(|i| if signs & (1 << i) != 0 { 1.0 } else { -1.0 }).collect();
            let rhs = DVector::from_fn(s, |r, _| c[support[r]] - 0.5 * lambda * sg[r]);
            let sol = chol.solve(&rhs);
            if (0..s).any(|r| sol[r] * sg[r] <= 0.0) {
                continue;
            }
            let mut a = DVector::zeros(k);
            for (r, &i) in support.iter().enumerate() {
                a[i] = sol[r];
            }
            let grad = (&g * &a - &c) * 2.0;
            let off_ok = (0..k)
                .filter(|i| mask & (1 << i) == 0)
                .all(|j| grad[j].abs() <= lambda * (1.0 + 1e-9) + 1e-12);
            if !off_ok {
                continue;
            }
            let f = column_objective(d, x, &a, lambda);
            if f < best_f {
                best_f = f;
                best = a;
            }
        }
    }
    assert!(best_f.is_finite(), "oracle found no KKT point");
    best
}

/// Lasso solution certified on a given support and sign pattern: solves the
/// restricted stationarity system and checks signs and the off-support
/// subgradient bound. Returns `None` if the certificate fails.
pub fn certified_lasso(d: &DMatrix<f64>, x: &DVector<f64>, lambda: f64, support: &[usize], signs: &[f64]) -> Option<DVector<f64>> {
    let k = d.ncols();
    let g = d.transpose() * d;
    let c = d.transpose() * x;
    let s = support.len();
    let gss = DMatrix::from_fn(s, s, |r, q| g[(support[r], support[q])]);
    let rhs = DVector::from_fn(s, |r, _| c[support[r]] - 0.5 * lambda * signs[r]);
    let sol = gss.cholesky()?.solve(&rhs);
    if (0..s).any(|r| sol[r] * signs[r] <= 0.0) {
        return None;
    }
    let mut a = DVector::zeros(k);
    for (r, &i) in support.iter().enumerate() {
        a[i] = sol[r];
    }
    let grad = (&g * &a - &c) * 2.0;
    let off_ok = (0..k).filter(|i| !support.contains(i)).all(|j| grad[j].abs() < lambda);
    off_ok.then_some(a)
}

/// Squared singular values of `x`, descending, from the eigenvalues of `x^T x`.
pub fn squared_singular_values(x: &DMatrix<f64>) -> Vec<f64> {
    let gram = if x.nrows() >= x.ncols() { x.transpose() * x } else { x * x.transpose() };
    let mut ev: Vec<f64> = SymmetricEigen::new(gram).eigenvalues.iter().map(|v| v.max(0.0)).collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    ev
}

/// Planted 1-sparse dictionary-learning instance: two random unit atoms in
/// `R^m`, `q` columns each using one atom with coefficient `±U[1, 2]`.
pub struct Planted {
    pub atoms: DMatrix<f64>,
    pub data: DMatrix<f64>,
}

pub fn planted_two_atoms(m: usize, q: usize, rng: &mut ChaCha8Rng) -> Planted {
    let atoms = random_unit_dictionary(m, 2, rng).atoms().clone();
    let mut data = DMatrix::zeros(m, q);
    for j in 0..q {
        let k = rng.random_range(0..2);
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let v = sign * rng.random_range(1.0..2.0);
        data.set_column(j, &(atoms.column(k) * v));
    }
    Planted { atoms, data }
}

/// Greedy matching of learned to planted atoms by |cosine|; returns the
/// matched |cosine| for each planted atom.
pub fn greedy_match(planted: &DMatrix<f64>, learned: &DMatrix<f64>) -> Vec<f64> {
    let mut pairs = Vec::new();
    for i in 0..planted.ncols() {
        for j in 0..learned.ncols() {
            let cos = planted.column(i).dot(&learned.column(j)).abs() / (planted.column(i).norm() * learned.column(j).norm());
            pairs.push((cos, i, j));
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut used_p = vec![false; planted.ncols()];
    let mut used_l = vec![false; learned.ncols()];
    let mut out = vec![0.0; planted.ncols()];
    for (cos, i, j) in pairs {
        if !used_p[i] && !used_l[j] {
            used_p[i] = true;
            used_l[j] = true;
            out[i] = cos;
        }
    }
    out
}
