//! First-difference operator and the change of variables that turns the
//! fused penalty on each subject's latent path into a plain l1 penalty.
//!
//! For one subject the square transform is `M = [C; 1ᵀ]` where `C` is the
//! `(T-1) x T` first-difference matrix. Stacking all subjects gives the
//! `nT x nT` transform whose rows are the `n(T-1)` difference rows (subject
//! major) followed by the `n` per-subject sums. It is applied blockwise and
//! never materialized.

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, ArrayView1};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct FusedBasis {
    n: usize,
    t: usize,
    diff: Array2<f64>,
    transform_inv: Array2<f64>,
}

impl FusedBasis {
    pub fn build(n: usize, t: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidDimension("need at least one subject".into()));
        }
        if t < 2 {
            return Err(Error::InvalidDimension(format!(
                "need at least two replicates to form differences, got T={t}"
            )));
        }
        let diff = Array2::from_shape_fn((t - 1, t), |(r, c)| {
            if c == r {
                -1.0
            } else if c == r + 1 {
                1.0
            } else {
                0.0
            }
        });
        let transform = DMatrix::from_fn(t, t, |r, c| if r + 1 < t { diff[[r, c]] } else { 1.0 });
        let inv = transform
            .lu()
            .try_inverse()
            .ok_or_else(|| Error::Construction("difference transform is singular".into()))?;
        let transform_inv = Array2::from_shape_fn((t, t), |(r, c)| inv[(r, c)]);
        Ok(Self {
            n,
            t,
            diff,
            transform_inv,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn len(&self) -> usize {
        self.n * self.t
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Number of penalized (difference) coordinates, `n(T-1)`.
    pub fn n_differences(&self) -> usize {
        self.n * (self.t - 1)
    }

    /// The `(T-1) x T` first-difference matrix.
    pub fn diff_matrix(&self) -> &Array2<f64> {
        &self.diff
    }

    /// Inverse of the per-subject transform `[C; 1ᵀ]`.
    pub fn block_inverse(&self) -> &Array2<f64> {
        &self.transform_inv
    }

    /// Per-subject penalty weights for the transformed coordinates:
    /// difference coordinates penalized, the sum coordinate free.
    pub fn block_weights(&self) -> Vec<bool> {
        let mut w = vec![true; self.t];
        w[self.t - 1] = false;
        w
    }

    /// Position in the stacked `h` vector of subject `i`'s local coordinate
    /// `r` (`r < T-1` a difference, `r = T-1` the sum).
    pub fn h_index(&self, i: usize, r: usize) -> usize {
        if r + 1 < self.t {
            i * (self.t - 1) + r
        } else {
            self.n_differences() + i
        }
    }

    /// Gathers subject `i`'s `T` transformed coordinates from `h`.
    pub fn subject_block(&self, h: ArrayView1<'_, f64>, i: usize) -> Array1<f64> {
        Array1::from_iter((0..self.t).map(|r| h[self.h_index(i, r)]))
    }

    /// Scatters a subject's local block back into the stacked vector.
    pub fn set_subject_block(&self, h: &mut Array1<f64>, i: usize, block: ArrayView1<'_, f64>) {
        for r in 0..self.t {
            h[self.h_index(i, r)] = block[r];
        }
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.len() {
            return Err(Error::LengthMismatch {
                expected: self.len(),
                got: len,
            });
        }
        Ok(())
    }

    /// Applies the stacked transform: differences for every subject, then sums.
    pub fn to_h(&self, delta: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        self.check_len(delta.len())?;
        let t = self.t;
        let mut h = Array1::zeros(self.len());
        for i in 0..self.n {
            let block = delta.slice(ndarray::s![i * t..(i + 1) * t]);
            for r in 0..t - 1 {
                h[self.h_index(i, r)] = block[r + 1] - block[r];
            }
            h[self.h_index(i, t - 1)] = block.sum();
        }
        Ok(h)
    }

    /// Inverse of [`to_h`](Self::to_h).
    pub fn from_h(&self, h: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        self.check_len(h.len())?;
        let t = self.t;
        let mut delta = Array1::zeros(self.len());
        for i in 0..self.n {
            let block = self.subject_block(h, i);
            let local = self.transform_inv.dot(&block);
            delta
                .slice_mut(ndarray::s![i * t..(i + 1) * t])
                .assign(&local);
        }
        Ok(delta)
    }

    /// Fused penalty `sum_i ||C delta_i||_1` evaluated directly on `delta`.
    pub fn fused_penalty(&self, delta: ArrayView1<'_, f64>) -> Result<f64> {
        self.check_len(delta.len())?;
        let t = self.t;
        Ok((0..self.n)
            .map(|i| {
                (0..t - 1)
                    .map(|r| (delta[i * t + r + 1] - delta[i * t + r]).abs())
                    .sum::<f64>()
            })
            .sum())
    }

    /// l1 norm of the difference part of `h`.
    pub fn difference_norm(&self, h: ArrayView1<'_, f64>) -> f64 {
        h.iter().take(self.n_differences()).map(|v| v.abs()).sum()
    }
}
