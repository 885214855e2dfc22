//! Small dense matrices for the homogeneous affine systems (4x4 reduced, 10x10 full).

use std::ops::{Add, Index, IndexMut, Mul, Sub};

use crate::Real;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix is singular to working precision (pivot {pivot:e} at column {column})")]
    Singular { column: usize, pivot: f64 },
    #[error("matrix contains non-finite entries")]
    NonFinite,
}

/// Row-major square matrix of fixed dimension.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Matrix<T, const N: usize>(pub [[T; N]; N]);

impl<T: Real, const N: usize> Matrix<T, N> {
    pub fn zeros() -> Self {
        Matrix([[T::zero(); N]; N])
    }

    pub fn identity() -> Self {
        let mut m = Self::zeros();
        for i in 0..N {
            m.0[i][i] = T::one();
        }
        m
    }

    pub fn scale(&self, s: T) -> Self {
        let mut out = *self;
        out.0.iter_mut().flatten().for_each(|v| *v = *v * s);
        out
    }

    pub fn mul_vec(&self, x: &[T; N]) -> [T; N] {
        let mut y = [T::zero(); N];
        for (yi, row) in y.iter_mut().zip(self.0.iter()) {
            *yi = row
                .iter()
                .zip(x.iter())
                .fold(T::zero(), |acc, (&a, &b)| acc + a * b);
        }
        y
    }

    /// Maximum absolute row sum.
    pub fn norm_inf(&self) -> T {
        self.0
            .iter()
            .map(|row| row.iter().fold(T::zero(), |acc, v| acc + v.abs()))
            .fold(T::zero(), T::max)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().flatten().all(|v| v.is_finite())
    }

    pub fn lu(&self) -> Result<Lu<T, N>, LinalgError> {
        Lu::factor(self)
    }

    /// Matrix exponential by scaling and squaring with a diagonal (6,6) Padé
    /// approximant.
    ///
    /// After scaling the infinity norm is at most 1/2, where the truncation
    /// error of the q = 6 approximant is below 1e-16 relative.
    pub fn exp(&self) -> Result<Self, LinalgError> {
        if !self.is_finite() {
            return Err(LinalgError::NonFinite);
        }
        let norm = self.norm_inf().to_f64_lossy();
        let squarings = if norm > 0.5 {
            (norm.log2().floor() as i32 + 2).max(0) as u32
        } else {
            0
        };
        let a = self.scale(T::c(0.5f64.powi(squarings as i32)));

        const Q: usize = 6;
        let mut c = T::c(0.5);
        let mut x = a;
        let mut num = Self::identity() + a.scale(c);
        let mut den = Self::identity() - a.scale(c);
        let mut positive = true;
        for k in 2..=Q {
            c = c * T::from_usize_lossy(Q - k + 1) / T::from_usize_lossy(k * (2 * Q - k + 1));
            x = a * x;
            let term = x.scale(c);
            num = num + term;
            den = if positive { den + term } else { den - term };
            positive = !positive;
        }
        let mut f = den.lu()?.solve_mat(&num);
        for _ in 0..squarings {
            f = f * f;
        }
        Ok(f)
    }
}

impl<T, const N: usize> Index<(usize, usize)> for Matrix<T, N> {
    type Output = T;
    fn index(&self, (r, c): (usize, usize)) -> &T {
        &self.0[r][c]
    }
}

impl<T, const N: usize> IndexMut<(usize, usize)> for Matrix<T, N> {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut T {
        &mut self.0[r][c]
    }
}

impl<T: Real, const N: usize> Add for Matrix<T, N> {
    type Output = Self;
    fn add(mut self, rhs: Self) -> Self {
        for (a, b) in self.0.iter_mut().flatten().zip(rhs.0.iter().flatten()) {
            *a = *a + *b;
        }
        self
    }
}

impl<T: Real, const N: usize> Sub for Matrix<T, N> {
    type Output = Self;
    fn sub(mut self, rhs: Self) -> Self {
        for (a, b) in self.0.iter_mut().flatten().zip(rhs.0.iter().flatten()) {
            *a = *a - *b;
        }
        self
    }
}

impl<T: Real, const N: usize> Mul for Matrix<T, N> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        let mut out = Self::zeros();
        for i in 0..N {
            for k in 0..N {
                let a = self.0[i][k];
                if a == T::zero() {
                    continue;
                }
                for j in 0..N {
                    out.0[i][j] = out.0[i][j] + a * rhs.0[k][j];
                }
            }
        }
        out
    }
}

/// LU factorization with partial pivoting.
#[derive(Clone, Debug)]
pub struct Lu<T, const N: usize> {
    lu: [[T; N]; N],
    perm: [usize; N],
}

impl<T: Real, const N: usize> Lu<T, N> {
    fn factor(m: &Matrix<T, N>) -> Result<Self, LinalgError> {
        if !m.is_finite() {
            return Err(LinalgError::NonFinite);
        }
        let mut lu = m.0;
        let mut perm = [0usize; N];
        for (i, p) in perm.iter_mut().enumerate() {
            *p = i;
        }
        let scale = m.norm_inf().max(T::min_positive_value());
        let tiny = scale * T::epsilon() * T::from_usize_lossy(N);
        for col in 0..N {
            let (pivot_row, pivot) = (col..N)
                .map(|r| (r, lu[r][col].abs()))
                .fold((col, -T::one()), |best, cand| if cand.1 > best.1 { cand } else { best });
            if pivot <= tiny {
                return Err(LinalgError::Singular {
                    column: col,
                    pivot: pivot.to_f64_lossy(),
                });
            }
            lu.swap(col, pivot_row);
            perm.swap(col, pivot_row);
            for r in col + 1..N {
                let factor = lu[r][col] / lu[col][col];
                lu[r][col] = factor;
                for c in col + 1..N {
                    lu[r][c] = lu[r][c] - factor * lu[col][c];
                }
            }
        }
        Ok(Lu { lu, perm })
    }

    pub fn solve_vec(&self, b: &[T; N]) -> [T; N] {
        let mut x = [T::zero(); N];
        for i in 0..N {
            x[i] = b[self.perm[i]];
        }
        for i in 0..N {
            for j in 0..i {
                x[i] = x[i] - self.lu[i][j] * x[j];
            }
        }
        for i in (0..N).rev() {
            for j in i + 1..N {
                x[i] = x[i] - self.lu[i][j] * x[j];
            }
            x[i] = x[i] / self.lu[i][i];
        }
        x
    }

    pub fn solve_mat(&self, b: &Matrix<T, N>) -> Matrix<T, N> {
        let mut out = Matrix::zeros();
        for col in 0..N {
            let column: [T; N] = std::array::from_fn(|r| b.0[r][col]);
            let x = self.solve_vec(&column);
            for r in 0..N {
                out.0[r][col] = x[r];
            }
        }
        out
    }
}
