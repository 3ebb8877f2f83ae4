//! Symmetric banded matrices with a banded Cholesky factorization.
//!
//! Storage holds the main diagonal and `hb` superdiagonals; entry (i, i+d)
//! lives at `data[d * n + i]`. Plate bending meshes have bandwidth about
//! 3*(nx+2)+2, so factor and solve cost O(n * hb^2) and O(n * hb).

use crate::error::{Error, Result};
use nalgebra::DVector;

#[derive(Clone, Debug)]
pub struct SymBand {
    n: usize,
    hb: usize,
    data: Vec<f64>,
}

impl SymBand {
    pub fn zeros(n: usize, hb: usize) -> Self {
        SymBand {
            n,
            hb,
            data: vec![0.0; (hb + 1) * n],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn half_bandwidth(&self) -> usize {
        self.hb
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (lo, hi) = if i <= j { (i, j) } else { (j, i) };
        let d = hi - lo;
        debug_assert!(d <= self.hb, "entry ({i},{j}) outside band {}", self.hb);
        self.data[d * self.n + lo] += v;
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (lo, hi) = if i <= j { (i, j) } else { (j, i) };
        let d = hi - lo;
        if d > self.hb {
            0.0
        } else {
            self.data[d * self.n + lo]
        }
    }

    /// y = A x for the full symmetric matrix.
    pub fn matvec(&self, x: &DVector<f64>) -> DVector<f64> {
        debug_assert_eq!(x.len(), self.n);
        let mut y = DVector::zeros(self.n);
        let n = self.n;
        for i in 0..n {
            let mut acc = self.data[i] * x[i];
            let dmax = self.hb.min(n - 1 - i);
            for d in 1..=dmax {
                let a = self.data[d * n + i];
                acc += a * x[i + d];
                y[i + d] += a * x[i];
            }
            y[i] += acc;
        }
        y
    }

    /// x^T A y without forming A y separately.
    pub fn quad(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        x.dot(&self.matvec(y))
    }

    /// Largest absolute diagonal entry; scale reference for shifts/tolerances.
    pub fn max_abs_diag(&self) -> f64 {
        self.data[..self.n].iter().fold(0.0, |m, &v| m.max(v.abs()))
    }

    /// C = A + s * B, requiring identical shape.
    pub fn add_scaled(&self, other: &SymBand, s: f64) -> SymBand {
        assert_eq!(self.n, other.n);
        assert_eq!(self.hb, other.hb);
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a + s * b)
            .collect();
        SymBand {
            n: self.n,
            hb: self.hb,
            data,
        }
    }

    /// Banded Cholesky A = L L^T. Fails on a non-positive pivot.
    pub fn cholesky(&self) -> Result<BandCholesky> {
        let n = self.n;
        let hb = self.hb;
        // l[d * n + i] = L[i + d][i] (column i, subdiagonal d)
        let mut l = self.data.clone();
        for j in 0..n {
            let mut pivot = l[j];
            // subtract contributions of earlier columns k in [j-hb, j)
            let k0 = j.saturating_sub(hb);
            for k in k0..j {
                let ljk = l[(j - k) * n + k];
                pivot -= ljk * ljk;
            }
            if pivot <= 0.0 || !pivot.is_finite() {
                return Err(Error::NotPositiveDefinite {
                    pivot: j,
                    value: pivot,
                });
            }
            let pivot = pivot.sqrt();
            l[j] = pivot;
            let dmax = hb.min(n - 1 - j);
            for d in 1..=dmax {
                let i = j + d;
                let mut v = l[d * n + j];
                let k0 = i.saturating_sub(hb);
                for k in k0..j {
                    v -= l[(i - k) * n + k] * l[(j - k) * n + k];
                }
                l[d * n + j] = v / pivot;
            }
        }
        Ok(BandCholesky { n, hb, l })
    }
}

pub struct BandCholesky {
    n: usize,
    hb: usize,
    l: Vec<f64>,
}

impl BandCholesky {
    /// Solve A x = b in place (forward then back substitution).
    pub fn solve_in_place(&self, b: &mut DVector<f64>) {
        let n = self.n;
        let hb = self.hb;
        debug_assert_eq!(b.len(), n);
        // L y = b
        for i in 0..n {
            let k0 = i.saturating_sub(hb);
            let mut v = b[i];
            for k in k0..i {
                v -= self.l[(i - k) * n + k] * b[k];
            }
            b[i] = v / self.l[i];
        }
        // L^T x = y
        for i in (0..n).rev() {
            let dmax = hb.min(n - 1 - i);
            let mut v = b[i];
            for d in 1..=dmax {
                v -= self.l[d * n + i] * b[i + d];
            }
            b[i] = v / self.l[i];
        }
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut x = b.clone();
        self.solve_in_place(&mut x);
        x
    }
}
