//! Dictionary-learning stage: fit `D2` (unit-norm atoms) and sparse codes
//! `A2` to a residual `R` by minimising `||R - D2 A2||_F^2 + lambda2 ||A2||_1`.
//!
//! Each round runs a LASSO sparse-coding pass followed by sequential
//! rank-one atom updates. Atoms whose code row has died are re-seeded
//! from the worst-fit residual column.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::weighted::WeightedIndex;
use rand_distr::{Distribution, StandardNormal};

use crate::dictionaries::{AtomLabel, Dictionary};
use crate::error::{Error, Result};
use crate::solvers::{lasso_warm, LassoOptions, SparseCode};

const REL_OBJECTIVE_STOP: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DictLearnOptions {
    pub num_atoms: usize,
    pub lambda2: f64,
    pub inner_iters: usize,
    pub dead_atom_threshold: f64,
    pub seed: u64,
    pub lasso: LassoOptions,
}

impl DictLearnOptions {
    pub fn new(num_atoms: usize, lambda2: f64, seed: u64) -> Self {
        DictLearnOptions {
            num_atoms,
            lambda2,
            inner_iters: 20,
            dead_atom_threshold: 1e-8,
            seed,
            lasso: LassoOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_atoms == 0 {
            return Err(Error::invalid("num_atoms must be at least 1"));
        }
        if self.inner_iters == 0 {
            return Err(Error::invalid("inner_iters must be at least 1"));
        }
        if !(self.lambda2 > 0.0 && self.lambda2.is_finite()) {
            return Err(Error::invalid("lambda2 must be positive"));
        }
        if !(self.dead_atom_threshold >= 0.0) {
            return Err(Error::invalid("dead_atom_threshold must be non-negative"));
        }
        self.lasso.validate()
    }
}

/// One entry per sparse-coding pass.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct RoundRecord {
    pub round: usize,
    pub objective: f64,
    /// Atoms replaced in the atom-update pass that preceded this coding pass.
    pub dead_atoms: usize,
}

#[derive(Debug, Clone)]
pub struct DictLearnOutput {
    pub dictionary: Dictionary,
    pub code: SparseCode,
    pub trace: Vec<RoundRecord>,
    /// Set when the residual was identically zero.
    pub degenerate: bool,
}

impl DictLearnOutput {
    /// Trace as CSV with header `round,objective,dead_atom_count`.
    pub fn trace_csv(&self) -> String {
        let mut s = String::from("round,objective,dead_atom_count\n");
        for r in &self.trace {
            s.push_str(&format!("{},{},{}\n", r.round, r.objective, r.dead_atoms));
        }
        s
    }
}

fn learned_labels(n: usize) -> Vec<AtomLabel> {
    (0..n).map(AtomLabel::Learned).collect()
}

fn random_unit(m: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    loop {
        let v: DVector<f64> = DVector::from_fn(m, |_, _| StandardNormal.sample(rng));
        let n = v.norm();
        if n > 0.0 {
            return v / n;
        }
    }
}

/// Seeds `num_atoms` atoms from normalised columns of `r`.
///
/// The first column is drawn uniformly, each later one with probability
/// proportional to its squared distance from the lines spanned by the atoms
/// already chosen (k-means++ style), so near-duplicate directions are
/// unlikely. When no column is left at positive distance, or `r` has fewer
/// columns than atoms, the rest become random Gaussian unit vectors.
pub fn init_atoms(r: &DMatrix<f64>, num_atoms: usize, seed: u64) -> Result<Dictionary> {
    if r.ncols() == 0 || r.nrows() == 0 {
        return Err(Error::invalid("residual matrix must be non-empty"));
    }
    if num_atoms == 0 {
        return Err(Error::invalid("num_atoms must be at least 1"));
    }
    let (m, q) = r.shape();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dist: Vec<f64> = r.column_iter().map(|c| c.norm_squared()).collect();
    let mut atoms = DMatrix::zeros(m, num_atoms);
    for k in 0..num_atoms {
        let pick = if k == 0 {
            Some(rng.random_range(0..q)).filter(|&j| dist[j] > 0.0 && dist[j].is_finite())
        } else {
            WeightedIndex::new(&dist).ok().map(|w| w.sample(&mut rng))
        };
        let col = match pick {
            Some(j) => {
                let c = r.column(j);
                c / c.norm()
            }
            None => random_unit(m, &mut rng),
        };
        for (j, d) in dist.iter_mut().enumerate() {
            let proj = r.column(j).dot(&col);
            *d = d.min(r.column(j).norm_squared() - proj * proj).max(0.0);
        }
        if let Some(j) = pick {
            dist[j] = 0.0;
        }
        atoms.set_column(k, &col);
    }
    Dictionary::new(atoms, learned_labels(num_atoms), format!("learned-{num_atoms}-seed{seed}"))
}

pub fn learn_dictionary(r: &DMatrix<f64>, opts: &DictLearnOptions) -> Result<DictLearnOutput> {
    learn_dictionary_warm(r, opts, None)
}

/// [`learn_dictionary`] starting from a given dictionary and codes instead
/// of a random column selection.
pub fn learn_dictionary_warm(
    r: &DMatrix<f64>,
    opts: &DictLearnOptions,
    warm: Option<(&Dictionary, &DMatrix<f64>)>,
) -> Result<DictLearnOutput> {
    opts.validate()?;
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("residual contains non-finite entries"));
    }
    let (m, q) = r.shape();
    let l = opts.num_atoms;
    if l > q {
        log::warn!("learning {l} atoms from only {q} columns");
    }
    let id = format!("learned-{l}-seed{}", opts.seed);

    let (mut atoms, mut codes) = match warm {
        Some((d, a)) => {
            if d.rows() != m || d.num_atoms() != l || a.shape() != (l, q) {
                return Err(Error::invalid("warm start does not match residual / atom count"));
            }
            (d.atoms().clone(), Some(a.clone()))
        }
        None => (init_atoms(r, l, opts.seed)?.atoms().clone(), None),
    };

    if r.iter().all(|v| *v == 0.0) {
        return Ok(DictLearnOutput {
            dictionary: Dictionary::new(atoms, learned_labels(l), id)?,
            code: SparseCode {
                coeffs: DMatrix::zeros(l, q),
                dict_id: format!("learned-{l}-seed{}", opts.seed),
            },
            trace: vec![RoundRecord {
                round: 0,
                objective: 0.0,
                dead_atoms: 0,
            }],
            degenerate: true,
        });
    }

    let mut trace = Vec::new();
    let mut dead_last = 0;
    let mut prev_obj: Option<f64> = None;
    let mut round = 0;
    loop {
        let dict = Dictionary::new(atoms.clone(), learned_labels(l), id.clone())
            .map_err(|e| Error::numeric("dictionary-learning", e.to_string()))?;
        let fit = lasso_warm(&dict, r, opts.lambda2, &opts.lasso, codes.as_ref())?;
        let a = fit.code.coeffs;
        let objective = fit.diagnostics.objective();
        if !objective.is_finite() {
            return Err(Error::numeric("dictionary-learning", "objective is not finite"));
        }
        trace.push(RoundRecord {
            round,
            objective,
            dead_atoms: dead_last,
        });
        let stop = round + 1 >= opts.inner_iters
            || (dead_last == 0
                && prev_obj.is_some_and(|p| (p - objective).abs() <= REL_OBJECTIVE_STOP * p.abs()));
        if stop {
            return Ok(DictLearnOutput {
                dictionary: dict,
                code: SparseCode {
                    coeffs: a,
                    dict_id: id,
                },
                trace,
                degenerate: false,
            });
        }
        prev_obj = Some(objective);
        let mut a = a;
        dead_last = update_atoms(r, &mut atoms, &mut a, opts.dead_atom_threshold);
        if dead_last > 0 {
            log::debug!("round {round}: replaced {dead_last} dead atoms");
        }
        codes = Some(a);
        round += 1;
    }
}

/// Sequential rank-one atom updates in place. Returns the number of atoms
/// re-seeded because their code row was dead.
///
/// For a live atom `k` with code row `a_k` and rank-one residual `R_k`, the
/// least-squares direction `R_k a_k / ||a_k||^2` is normalised to unit norm
/// and `a_k` is scaled by the removed norm, so `d_k a_k^T` equals the
/// least-squares rank-one fit.
pub fn update_atoms(r: &DMatrix<f64>, atoms: &mut DMatrix<f64>, a: &mut DMatrix<f64>, dead_threshold: f64) -> usize {
    let l = atoms.ncols();
    let mut err = r - &*atoms * &*a;
    let mut used_columns = Vec::new();
    let mut dead = 0;
    for k in 0..l {
        let row = a.row(k).transpose();
        let row_max = row.amax();
        let row_norm2 = row.norm_squared();
        if row_max >= dead_threshold && row_norm2 > 0.0 {
            // R_k = err + d_k a_k^T; direction R_k a_k / ||a_k||^2.
            let dk = atoms.column(k).into_owned();
            let dir = (&err * &row + &dk * row_norm2) / row_norm2;
            let s = dir.norm();
            if s > 0.0 && s.is_finite() {
                let new_atom = dir / s;
                let new_row = &row * s;
                // err = R_k - d_new a_new^T
                err += &dk * row.transpose() - &new_atom * new_row.transpose();
                atoms.set_column(k, &new_atom);
                a.set_row(k, &new_row.transpose());
                continue;
            }
        }
        // Dead atom: re-seed from the worst-fit residual column not yet used.
        dead += 1;
        let dk = atoms.column(k).into_owned();
        err += &dk * row.transpose();
        a.row_mut(k).fill(0.0);
        let worst = err
            .column_iter()
            .enumerate()
            .filter(|(j, _)| !used_columns.contains(j))
            .map(|(j, c)| (j, c.norm()))
            .fold(None::<(usize, f64)>, |best, (j, n)| match best {
                Some((_, bn)) if bn >= n => best,
                _ => Some((j, n)),
            });
        if let Some((j, n)) = worst {
            if n > 0.0 {
                used_columns.push(j);
                let c = err.column(j) / n;
                atoms.set_column(k, &c);
            }
        }
    }
    dead
}
