//! Symmetric positive definite factorisations for path-functional Hessians.
//!
//! Path Hessians are block tridiagonal whenever the terminal cost has no curvature in
//! `y` and no `x`-`y` coupling; those are stored and factored in band form.

use nalgebra::{DMatrix, DVector};

/// Symmetric matrix stored as its lower band: `data[i * (bw + 1) + (i - j)] = A[i][j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BandMatrix {
    dim: usize,
    bandwidth: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(dim: usize, bandwidth: usize) -> Self {
        Self {
            dim,
            bandwidth,
            data: vec![0.0; dim * (bandwidth + 1)],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bandwidth(&self) -> usize {
        self.bandwidth
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && i - j <= self.bandwidth);
        i * (self.bandwidth + 1) + (i - j)
    }

    /// Entry `(i, j)`; zero outside the band.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        if i - j > self.bandwidth {
            0.0
        } else {
            self.data[self.idx(i, j)]
        }
    }

    /// Adds `v` to entry `(i, j)` (and implicitly `(j, i)`).
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        assert!(i - j <= self.bandwidth, "entry ({i}, {j}) outside band");
        let k = self.idx(i, j);
        self.data[k] += v;
    }

    pub fn add_diagonal(&mut self, v: f64) {
        for i in 0..self.dim {
            let k = self.idx(i, i);
            self.data[k] += v;
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.dim, self.dim, |i, j| self.get(i, j))
    }

    pub fn mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut y = DVector::zeros(self.dim);
        for i in 0..self.dim {
            let lo = i.saturating_sub(self.bandwidth);
            for j in lo..i {
                let a = self.data[self.idx(i, j)];
                y[i] += a * x[j];
                y[j] += a * x[i];
            }
            y[i] += self.data[self.idx(i, i)] * x[i];
        }
        y
    }

    /// Band Cholesky `A = L L'`; `None` if `A` is not positive definite.
    pub fn cholesky(&self) -> Option<BandCholesky> {
        let (n, b) = (self.dim, self.bandwidth);
        let mut l = vec![0.0; self.data.len()];
        let at = |i: usize, j: usize| i * (b + 1) + (i - j);
        for i in 0..n {
            let lo = i.saturating_sub(b);
            for j in lo..=i {
                let mut sum = self.data[at(i, j)];
                let klo = lo.max(j.saturating_sub(b));
                for k in klo..j {
                    sum -= l[at(i, k)] * l[at(j, k)];
                }
                if i == j {
                    if !(sum > 0.0) || !sum.is_finite() {
                        return None;
                    }
                    l[at(i, i)] = sum.sqrt();
                } else {
                    l[at(i, j)] = sum / l[at(j, j)];
                }
            }
        }
        Some(BandCholesky {
            factor: BandMatrix {
                dim: n,
                bandwidth: b,
                data: l,
            },
        })
    }
}

/// Lower-triangular band factor.
#[derive(Debug, Clone)]
pub struct BandCholesky {
    factor: BandMatrix,
}

impl BandCholesky {
    fn l(&self, i: usize, j: usize) -> f64 {
        self.factor.data[self.factor.idx(i, j)]
    }

    pub fn solve_lower(&self, rhs: &DVector<f64>) -> DVector<f64> {
        let (n, b) = (self.factor.dim, self.factor.bandwidth);
        let mut y = rhs.clone();
        for i in 0..n {
            let mut s = y[i];
            for k in i.saturating_sub(b)..i {
                s -= self.l(i, k) * y[k];
            }
            y[i] = s / self.l(i, i);
        }
        y
    }

    pub fn solve_upper(&self, rhs: &DVector<f64>) -> DVector<f64> {
        let (n, b) = (self.factor.dim, self.factor.bandwidth);
        let data = &self.factor.data;
        let mut x = rhs.clone();
        let xs = x.as_mut_slice();
        for i in (0..n).rev() {
            // Row i of L holds L[i][i - d] at offset d.
            let row = &data[i * (b + 1)..(i + 1) * (b + 1)];
            let w = b.min(i);
            let (head, tail) = xs.split_at_mut(i);
            let xi = tail[0] / row[0];
            tail[0] = xi;
            for (t, l) in head[i - w..].iter_mut().rev().zip(&row[1..=w]) {
                *t -= l * xi;
            }
        }
        x
    }

    pub fn log_det_factor(&self) -> f64 {
        (0..self.factor.dim).map(|i| self.l(i, i).ln()).sum()
    }

    pub fn lower_dense(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.factor.dim, self.factor.dim, |i, j| {
            if j <= i && i - j <= self.factor.bandwidth {
                self.l(i, j)
            } else {
                0.0
            }
        })
    }
}

/// Symmetric Hessian in band or dense storage.
#[derive(Debug, Clone)]
pub enum SymMatrix {
    Banded(BandMatrix),
    Dense(DMatrix<f64>),
}

impl SymMatrix {
    pub fn dim(&self) -> usize {
        match self {
            SymMatrix::Banded(b) => b.dim(),
            SymMatrix::Dense(d) => d.nrows(),
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            SymMatrix::Banded(b) => b.to_dense(),
            SymMatrix::Dense(d) => d.clone(),
        }
    }

    pub fn mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            SymMatrix::Banded(b) => b.mul_vec(x),
            SymMatrix::Dense(d) => d * x,
        }
    }

    pub fn add_diagonal(&mut self, v: f64) {
        match self {
            SymMatrix::Banded(b) => b.add_diagonal(v),
            SymMatrix::Dense(d) => {
                for i in 0..d.nrows() {
                    d[(i, i)] += v;
                }
            }
        }
    }

    pub fn cholesky(&self) -> Option<SpdFactor> {
        match self {
            SymMatrix::Banded(b) => b.cholesky().map(SpdFactor::Banded),
            SymMatrix::Dense(d) => {
                let c = d.clone().cholesky()?;
                let l = c.l();
                if (0..l.nrows()).all(|i| l[(i, i)] > 0.0 && l[(i, i)].is_finite()) {
                    Some(SpdFactor::Dense(l))
                } else {
                    None
                }
            }
        }
    }
}

/// Cholesky factor `L` with `H = L L'`.
#[derive(Debug, Clone)]
pub enum SpdFactor {
    Banded(BandCholesky),
    Dense(DMatrix<f64>),
}

impl SpdFactor {
    /// `H^-1 b`.
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.solve_upper(&self.solve_lower(b))
    }

    /// `L^-1 b`.
    pub fn solve_lower(&self, b: &DVector<f64>) -> DVector<f64> {
        match self {
            SpdFactor::Banded(c) => c.solve_lower(b),
            SpdFactor::Dense(l) => l
                .solve_lower_triangular(b)
                .expect("factor has a positive diagonal"),
        }
    }

    /// `L'^-1 b`.
    pub fn solve_upper(&self, b: &DVector<f64>) -> DVector<f64> {
        match self {
            SpdFactor::Banded(c) => c.solve_upper(b),
            SpdFactor::Dense(l) => l
                .tr_solve_lower_triangular(b)
                .expect("factor has a positive diagonal"),
        }
    }

    /// `log det L = 1/2 log det H`.
    pub fn log_det_factor(&self) -> f64 {
        match self {
            SpdFactor::Banded(c) => c.log_det_factor(),
            SpdFactor::Dense(l) => (0..l.nrows()).map(|i| l[(i, i)].ln()).sum(),
        }
    }

    pub fn lower_dense(&self) -> DMatrix<f64> {
        match self {
            SpdFactor::Banded(c) => c.lower_dense(),
            SpdFactor::Dense(l) => l.clone(),
        }
    }
}
