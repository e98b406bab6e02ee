//! Dictionaries with unit-norm atoms: the known pulse dictionary built
//! from circularly shifted prototypes, and the fixed DCT / identity bases.
//!
//! # File format
//!
//! [`Dictionary::save`] writes a little-endian binary file:
//!
//! ```text
//! magic      8 bytes   "SBMCADIC"
//! version    u32       1
//! rows m     u64
//! atoms d    u64
//! id         u32 length + UTF-8 bytes
//! labels     d x (u32 length + UTF-8 bytes)
//! atoms      m*d f64, column-major (atom 0 first)
//! ```
//!
//! Values are stored as raw IEEE-754 bits, so a save/load round trip is
//! bit-exact.

use std::collections::HashSet;
use std::f64::consts::PI;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub const UNIT_NORM_TOL: f64 = 1e-10;

const MAGIC: &[u8; 8] = b"SBMCADIC";
const VERSION: u32 = 1;

/// Where an atom came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AtomLabel {
    Pulse { prototype: usize, shift: i64 },
    Learned(usize),
    Dct(usize),
    Identity(usize),
}

impl fmt::Display for AtomLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AtomLabel::Pulse { prototype, shift } => write!(f, "pulse-p{prototype}-s{shift}"),
            AtomLabel::Learned(k) => write!(f, "learned-{k}"),
            AtomLabel::Dct(k) => write!(f, "dct-{k}"),
            AtomLabel::Identity(k) => write!(f, "identity-{k}"),
        }
    }
}

impl FromStr for AtomLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::invalid(format!("unrecognised atom label `{s}`"));
        if let Some(rest) = s.strip_prefix("pulse-p") {
            let (p, sh) = rest.split_once("-s").ok_or_else(bad)?;
            return Ok(AtomLabel::Pulse {
                prototype: p.parse().map_err(|_| bad())?,
                shift: sh.parse().map_err(|_| bad())?,
            });
        }
        let (kind, k) = s.rsplit_once('-').ok_or_else(bad)?;
        let k: usize = k.parse().map_err(|_| bad())?;
        match kind {
            "learned" => Ok(AtomLabel::Learned(k)),
            "dct" => Ok(AtomLabel::Dct(k)),
            "identity" => Ok(AtomLabel::Identity(k)),
            _ => Err(bad()),
        }
    }
}

/// An `m x d` matrix of unit-norm atoms with a provenance label per atom.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    atoms: DMatrix<f64>,
    labels: Vec<AtomLabel>,
    id: String,
}

impl Dictionary {
    /// Checks that every atom has unit norm and that labels match the atom count.
    pub fn new(atoms: DMatrix<f64>, labels: Vec<AtomLabel>, id: impl Into<String>) -> Result<Self> {
        if atoms.ncols() == 0 || atoms.nrows() == 0 {
            return Err(Error::invalid("dictionary must have at least one row and one atom"));
        }
        if labels.len() != atoms.ncols() {
            return Err(Error::invalid(format!(
                "{} labels for {} atoms",
                labels.len(),
                atoms.ncols()
            )));
        }
        if atoms.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("dictionary contains non-finite entries"));
        }
        for (k, col) in atoms.column_iter().enumerate() {
            let norm = col.norm();
            if (norm - 1.0).abs() > UNIT_NORM_TOL {
                return Err(Error::invalid(format!("atom {k} has norm {norm}, expected 1")));
            }
        }
        Ok(Dictionary {
            atoms,
            labels,
            id: id.into(),
        })
    }

    pub fn atoms(&self) -> &DMatrix<f64> {
        &self.atoms
    }

    pub fn labels(&self) -> &[AtomLabel] {
        &self.labels
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn rows(&self) -> usize {
        self.atoms.nrows()
    }

    pub fn num_atoms(&self) -> usize {
        self.atoms.ncols()
    }

    /// Square with `D^T D = I` to within [`UNIT_NORM_TOL`] entrywise.
    pub fn is_orthonormal_basis(&self) -> bool {
        if self.rows() != self.num_atoms() {
            return false;
        }
        let g = self.atoms.transpose() * &self.atoms;
        g.iter()
            .enumerate()
            .all(|(idx, v)| {
                let target = if idx % self.rows() == idx / self.rows() { 1.0 } else { 0.0 };
                (v - target).abs() <= UNIT_NORM_TOL
            })
    }

    /// `[self other]`, the column-wise concatenation.
    pub fn concat(&self, other: &Dictionary) -> Result<Dictionary> {
        if self.rows() != other.rows() {
            return Err(Error::invalid(format!(
                "cannot concatenate dictionaries with {} and {} rows",
                self.rows(),
                other.rows()
            )));
        }
        let (m, d1, d2) = (self.rows(), self.num_atoms(), other.num_atoms());
        let mut atoms = DMatrix::zeros(m, d1 + d2);
        atoms.columns_mut(0, d1).copy_from(&self.atoms);
        atoms.columns_mut(d1, d2).copy_from(&other.atoms);
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        Ok(Dictionary {
            atoms,
            labels,
            id: format!("{}+{}", self.id, other.id),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(64 + 8 * self.atoms.len());
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.rows() as u64).to_le_bytes());
        buf.extend_from_slice(&(self.num_atoms() as u64).to_le_bytes());
        write_str(&mut buf, &self.id);
        for label in &self.labels {
            write_str(&mut buf, &label.to_string());
        }
        for v in self.atoms.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Dictionary> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        let mut r = ByteReader { buf: &bytes, pos: 0, path };
        if r.take(8)? != MAGIC {
            return Err(Error::io(path, "not a dictionary file (bad magic)"));
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
        if version != VERSION {
            return Err(Error::io(path, format!("unsupported dictionary version {version}")));
        }
        let m = r.u64()? as usize;
        let d = r.u64()? as usize;
        let id = r.string()?;
        let labels = (0..d)
            .map(|_| r.string().and_then(|s| s.parse()))
            .collect::<Result<Vec<AtomLabel>>>()?;
        let count = m
            .checked_mul(d)
            .ok_or_else(|| Error::io(path, "dictionary dimensions overflow"))?;
        if count.checked_mul(8) != Some(bytes.len() - r.pos) {
            return Err(Error::io(path, "payload size does not match header"));
        }
        let mut vals = Vec::with_capacity(count);
        for _ in 0..count {
            vals.push(f64::from_le_bytes(r.take(8)?.try_into().unwrap()));
        }
        Dictionary::new(DMatrix::from_vec(m, d, vals), labels, id)
    }
}

fn write_str(buf: &mut Vec<u8>, s: &str) {
    buf.extend_from_slice(&(s.len() as u32).to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
}

struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::io(self.path, "truncated dictionary file"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let len = u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize;
        String::from_utf8(self.take(len)?.to_vec()).map_err(|e| Error::io(self.path, e))
    }
}

/// Circularly shifts `x` by `shift` samples (positive delays the signal).
pub fn circular_shift(x: &[f64], shift: i64) -> Vec<f64> {
    let m = x.len();
    if m == 0 {
        return Vec::new();
    }
    let s = shift.rem_euclid(m as i64) as usize;
    let mut out = vec![0.0; m];
    for (i, &v) in x.iter().enumerate() {
        out[(i + s) % m] = v;
    }
    out
}

/// Known dictionary: every prototype under every circular shift, normalised.
///
/// Column `p * shifts.len() + s` holds prototype `p` shifted by `shifts[s]`.
pub fn build_pulse_dictionary(prototypes: &[Vec<f64>], shifts: &[i64]) -> Result<Dictionary> {
    if prototypes.is_empty() {
        return Err(Error::invalid("at least one prototype is required"));
    }
    if shifts.is_empty() {
        return Err(Error::invalid("shift list must not be empty"));
    }
    let m = prototypes[0].len();
    if m == 0 {
        return Err(Error::invalid("prototypes must be non-empty"));
    }
    let mut atoms = DMatrix::zeros(m, prototypes.len() * shifts.len());
    let mut labels = Vec::with_capacity(atoms.ncols());
    let mut seen = HashSet::new();
    for (p, proto) in prototypes.iter().enumerate() {
        if proto.len() != m {
            return Err(Error::invalid(format!(
                "prototype {p} has length {}, expected {m}",
                proto.len()
            )));
        }
        let norm = proto.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::invalid(format!("prototype {p} has zero or non-finite norm")));
        }
        for &s in shifts {
            // Shifts equal modulo m produce the same atom.
            if !seen.insert((p, s.rem_euclid(m as i64))) {
                return Err(Error::invalid(format!("duplicate shift {s} for prototype {p}")));
            }
            let col = labels.len();
            let shifted = circular_shift(proto, s);
            let n = shifted.iter().map(|v| v * v).sum::<f64>().sqrt();
            for (i, v) in shifted.into_iter().enumerate() {
                atoms[(i, col)] = v / n;
            }
            labels.push(AtomLabel::Pulse { prototype: p, shift: s });
        }
    }
    Dictionary::new(atoms, labels, format!("pulse-{}x{}", prototypes.len(), shifts.len()))
}

/// Shifts `-r..=r` in unit steps.
pub fn symmetric_shifts(r: i64) -> Vec<i64> {
    (-r..=r).collect()
}

/// Orthonormal DCT-II basis: atom `k`, entry `t` is `c_k cos(pi (t + 1/2) k / m)`.
pub fn dct_dictionary(m: usize) -> Result<Dictionary> {
    if m == 0 {
        return Err(Error::invalid("DCT size must be positive"));
    }
    let mf = m as f64;
    let c0 = (1.0 / mf).sqrt();
    let ck = (2.0 / mf).sqrt();
    let mut atoms = DMatrix::from_fn(m, m, |t, k| {
        let c = if k == 0 { c0 } else { ck };
        c * (PI * (t as f64 + 0.5) * k as f64 / mf).cos()
    });
    // Absorb the last few ulps of rounding so every atom passes the norm check.
    for mut col in atoms.column_iter_mut() {
        let n = col.norm();
        col /= n;
    }
    Dictionary::new(atoms, (0..m).map(AtomLabel::Dct).collect(), format!("dct-{m}"))
}

pub fn identity_dictionary(m: usize) -> Result<Dictionary> {
    if m == 0 {
        return Err(Error::invalid("identity size must be positive"));
    }
    Dictionary::new(
        DMatrix::identity(m, m),
        (0..m).map(AtomLabel::Identity).collect(),
        format!("identity-{m}"),
    )
}
