//! Conversion between 1-D signals and the `m x q` block-matrix form.
//!
//! Column `j` of a [`BlockMatrix`] holds samples `[j*m, (j+1)*m)` of the
//! signal. Signals whose length is not a multiple of `m` are padded with
//! trailing zeros and the pad count is kept so the round trip is exact.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct BlockMatrix {
    pub data: DMatrix<f64>,
    pub block_len: usize,
    pub orig_len: usize,
    pub pad: usize,
}

impl BlockMatrix {
    /// Wraps an existing matrix, checking the blocking invariants.
    pub fn from_parts(data: DMatrix<f64>, orig_len: usize, pad: usize) -> Result<Self> {
        let b = BlockMatrix {
            block_len: data.nrows(),
            data,
            orig_len,
            pad,
        };
        b.check()?;
        Ok(b)
    }

    /// A block matrix with the same metadata as `self` but new contents.
    pub fn with_data(&self, data: DMatrix<f64>) -> Result<Self> {
        if data.shape() != self.data.shape() {
            return Err(Error::invalid(format!(
                "shape {:?} does not match block layout {:?}",
                data.shape(),
                self.data.shape()
            )));
        }
        Ok(BlockMatrix {
            data,
            block_len: self.block_len,
            orig_len: self.orig_len,
            pad: self.pad,
        })
    }

    pub fn num_blocks(&self) -> usize {
        self.data.ncols()
    }

    pub fn check(&self) -> Result<()> {
        let m = self.block_len;
        let q = self.data.ncols();
        if self.data.nrows() != m {
            return Err(Error::InvalidState(format!(
                "row count {} differs from block length {m}",
                self.data.nrows()
            )));
        }
        if m == 0 || m * q != self.orig_len + self.pad || self.pad >= m {
            return Err(Error::InvalidState(format!(
                "inconsistent blocking metadata: m={m}, q={q}, orig_len={}, pad={}",
                self.orig_len, self.pad
            )));
        }
        Ok(())
    }
}

pub fn blockify(x: &[f64], m: usize) -> Result<BlockMatrix> {
    if m == 0 {
        return Err(Error::invalid("block length must be positive"));
    }
    if x.is_empty() {
        return Err(Error::invalid("cannot blockify an empty signal"));
    }
    let n = x.len();
    let pad = (m - n % m) % m;
    let q = (n + pad) / m;
    let mut buf = Vec::with_capacity(n + pad);
    buf.extend_from_slice(x);
    buf.resize(n + pad, 0.0);
    Ok(BlockMatrix {
        data: DMatrix::from_vec(m, q, buf),
        block_len: m,
        orig_len: n,
        pad,
    })
}

pub fn deblockify(b: &BlockMatrix) -> Result<Vec<f64>> {
    b.check()?;
    // nalgebra storage is column-major, so the raw slice is the padded signal.
    Ok(b.data.as_slice()[..b.orig_len].to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn exact_division() {
        let b = blockify(&[1., 2., 3., 4., 5., 6.], 3).unwrap();
        assert_eq!(b.pad, 0);
        assert_eq!(b.data.column(0).as_slice(), &[1., 2., 3.]);
        assert_eq!(b.data.column(1).as_slice(), &[4., 5., 6.]);
    }

    #[test]
    fn zero_padding() {
        let b = blockify(&[1., 2., 3., 4., 5.], 3).unwrap();
        assert_eq!(b.pad, 1);
        assert_eq!(b.data.column(1).as_slice(), &[4., 5., 0.]);
        assert_eq!(deblockify(&b).unwrap(), vec![1., 2., 3., 4., 5.]);
    }

    #[test]
    fn deblockify_examples() {
        let b = BlockMatrix::from_parts(
            DMatrix::from_row_slice(3, 2, &[1., 4., 2., 5., 3., 6.]),
            6,
            0,
        )
        .unwrap();
        assert_eq!(deblockify(&b).unwrap(), vec![1., 2., 3., 4., 5., 6.]);
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(matches!(blockify(&[1.0], 0), Err(Error::InvalidArgument(_))));
        assert!(matches!(blockify(&[], 4), Err(Error::InvalidArgument(_))));
        let bad = BlockMatrix {
            data: DMatrix::zeros(3, 2),
            block_len: 3,
            orig_len: 7,
            pad: 0,
        };
        assert!(matches!(deblockify(&bad), Err(Error::InvalidState(_))));
    }

    #[test]
    fn round_trip_1000_by_400() {
        let x: Vec<f64> = (0..1000).map(|i| (i as f64 * 0.37).sin()).collect();
        let b = blockify(&x, 400).unwrap();
        assert_eq!(b.num_blocks(), 3);
        assert_eq!(b.pad, 200);
        assert_eq!(deblockify(&b).unwrap(), x);
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(x in prop::collection::vec(-1e6f64..1e6, 1..300), m in 1usize..50) {
            let b = blockify(&x, m).unwrap();
            prop_assert!(b.pad < m);
            prop_assert_eq!(b.block_len * b.num_blocks(), x.len() + b.pad);
            let back = deblockify(&b).unwrap();
            prop_assert_eq!(back.len(), x.len());
            for (u, v) in back.iter().zip(&x) {
                prop_assert_eq!(u.to_bits(), v.to_bits());
            }
        }

        #[test]
        fn blockify_is_linear(
            pairs in prop::collection::vec((-100f64..100.0, -100f64..100.0), 1..120),
            m in 1usize..20,
            a in -3f64..3.0,
            c in -3f64..3.0,
        ) {
            let x: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let y: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            let z: Vec<f64> = pairs.iter().map(|p| a * p.0 + c * p.1).collect();
            let lhs = blockify(&z, m).unwrap().data;
            let rhs = blockify(&x, m).unwrap().data * a + blockify(&y, m).unwrap().data * c;
            prop_assert!((lhs - rhs).amax() <= 1e-9);
        }
    }
}
