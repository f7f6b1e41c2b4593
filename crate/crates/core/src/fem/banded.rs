//! Symmetric banded matrix storage with an in-band Cholesky factorization.
//!
//! Structured-grid stiffness matrices have a fixed half-bandwidth set by the
//! node numbering, so band storage is the natural sparse format here: the
//! factorization stays inside the band and the solve is deterministic.

use alloc::vec;
use alloc::vec::Vec;

use super::FemError;

#[cfg(not(feature = "std"))]
use crate::float::F64Ext;

/// Symmetric n×n matrix storing the diagonal and `half_bandwidth` subdiagonals.
///
/// Entry (i, j) with i ≥ j and i − j ≤ half_bandwidth lives at
/// `data[(i - j) * n + j]`; everything further from the diagonal is zero.
#[derive(Clone, Debug)]
pub struct BandedSymMatrix {
    n: usize,
    half_bandwidth: usize,
    data: Vec<f64>,
}

impl BandedSymMatrix {
    pub fn zeros(n: usize, half_bandwidth: usize) -> Self {
        Self {
            n,
            half_bandwidth,
            data: vec![0.0; (half_bandwidth + 1) * n],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn half_bandwidth(&self) -> usize {
        self.half_bandwidth
    }

    /// Storage size in scalars (used to pick direct vs iterative solves).
    pub fn storage_len(&self) -> usize {
        self.data.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (hi, lo) = if i >= j { (i, j) } else { (j, i) };
        if hi - lo > self.half_bandwidth {
            0.0
        } else {
            self.data[(hi - lo) * self.n + lo]
        }
    }

    /// Adds `v` to the symmetric entry (i, j). Panics if outside the band.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (hi, lo) = if i >= j { (i, j) } else { (j, i) };
        debug_assert!(hi - lo <= self.half_bandwidth, "entry outside band");
        self.data[(hi - lo) * self.n + lo] += v;
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.n);
        let mut y = vec![0.0; self.n];
        for j in 0..self.n {
            y[j] += self.data[j] * x[j];
            let top = (j + self.half_bandwidth).min(self.n - 1);
            for i in (j + 1)..=top {
                let a = self.data[(i - j) * self.n + j];
                y[i] += a * x[j];
                y[j] += a * x[i];
            }
        }
        y
    }

    /// Zeroes row and column `dof` and puts 1 on the diagonal, so a zero
    /// right-hand-side entry pins the solution to zero there.
    pub fn eliminate_dof(&mut self, dof: usize) {
        for d in 1..=self.half_bandwidth {
            if dof + d < self.n {
                self.data[d * self.n + dof] = 0.0;
            }
            if dof >= d {
                self.data[d * self.n + (dof - d)] = 0.0;
            }
        }
        self.data[dof] = 1.0;
    }

    pub fn diagonal(&self) -> &[f64] {
        &self.data[..self.n]
    }

    /// In-band LLᵀ factorization. Fails on a non-positive pivot, which marks
    /// a DOF the constraints left free to move without resistance.
    pub fn cholesky(mut self) -> Result<BandedCholesky, FemError> {
        let n = self.n;
        let hb = self.half_bandwidth;
        // Pivots that collapse to rounding noise relative to the matrix scale
        // mean a numerically unresisted motion, even if they stay positive.
        let scale = self.data[..n].iter().fold(0.0f64, |m, &d| m.max(d.abs()));
        let pivot_floor = scale * 1e-14;
        for j in 0..n {
            let start = j.saturating_sub(hb);
            let mut d = self.data[j];
            for k in start..j {
                let ljk = self.data[(j - k) * n + k];
                d -= ljk * ljk;
            }
            if !(d > pivot_floor) || !d.is_finite() {
                return Err(FemError::SingularSystem { dof: j });
            }
            let ljj = d.sqrt();
            self.data[j] = ljj;
            let top = (j + hb).min(n - 1);
            for i in (j + 1)..=top {
                let mut s = self.data[(i - j) * n + j];
                let kstart = i.saturating_sub(hb).max(start);
                for k in kstart..j {
                    s -= self.data[(i - k) * n + k] * self.data[(j - k) * n + k];
                }
                self.data[(i - j) * n + j] = s / ljj;
            }
        }
        Ok(BandedCholesky {
            n,
            half_bandwidth: hb,
            data: self.data,
        })
    }
}

/// Lower-triangular Cholesky factor in band storage.
#[derive(Clone, Debug)]
pub struct BandedCholesky {
    n: usize,
    half_bandwidth: usize,
    data: Vec<f64>,
}

impl BandedCholesky {
    /// Solves L Lᵀ x = b.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        debug_assert_eq!(b.len(), self.n);
        let n = self.n;
        let hb = self.half_bandwidth;
        let mut x = b.to_vec();
        // Forward: L y = b
        for j in 0..n {
            x[j] /= self.data[j];
            let top = (j + hb).min(n - 1);
            let xj = x[j];
            for i in (j + 1)..=top {
                x[i] -= self.data[(i - j) * n + j] * xj;
            }
        }
        // Backward: Lᵀ x = y
        for j in (0..n).rev() {
            let top = (j + hb).min(n - 1);
            let mut s = x[j];
            for i in (j + 1)..=top {
                s -= self.data[(i - j) * n + j] * x[i];
            }
            x[j] = s / self.data[j];
        }
        x
    }
}
