//! Banded symmetric positive-definite storage, Cholesky factorisation and a
//! factor-preconditioned conjugate-gradient solve.
//!
//! The structured meshes number nodes row by row, so the stiffness matrix
//! has a half-bandwidth of one mesh row and a dense band factorisation is a
//! sparse direct solve with no fill outside the band.

use crate::error::{Error, Result};

/// Lower band of a symmetric matrix: row `i` stores columns
/// `i - bw ..= i`.
#[derive(Debug, Clone)]
pub struct BandedSym {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl BandedSym {
    pub fn zeros(n: usize, bw: usize) -> Self {
        Self {
            n,
            bw,
            data: vec![0.0; n * (bw + 1)],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    pub fn clear(&mut self) {
        self.data.iter_mut().for_each(|v| *v = 0.0);
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && i - j <= self.bw);
        i * (self.bw + 1) + (self.bw + j - i)
    }

    /// Entry `(i, j)`; zero outside the band.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        if i - j > self.bw {
            0.0
        } else {
            self.data[self.slot(i, j)]
        }
    }

    /// Adds `v` to `(i, j)` (and implicitly `(j, i)`).
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        let s = self.slot(i, j);
        self.data[s] += v;
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        let s = self.slot(i, j);
        self.data[s] = v;
    }

    /// Replaces row and column `i` by the identity row.
    pub fn constrain(&mut self, i: usize) {
        let lo = i.saturating_sub(self.bw);
        for j in lo..i {
            self.set(i, j, 0.0);
        }
        let hi = (i + self.bw).min(self.n - 1);
        for k in i + 1..=hi {
            self.set(k, i, 0.0);
        }
        self.set(i, i, 1.0);
    }

    /// `y = A x`.
    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        y.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..self.n {
            let lo = i.saturating_sub(self.bw);
            let row = &self.data[i * (self.bw + 1)..(i + 1) * (self.bw + 1)];
            let mut acc = row[self.bw] * x[i];
            for j in lo..i {
                let a = row[self.bw + j - i];
                acc += a * x[j];
                y[j] += a * x[i];
            }
            y[i] += acc;
        }
    }

    /// In-place Cholesky factorisation `A = L Lᵀ`.
    pub fn cholesky(mut self) -> Result<BandCholesky> {
        let (n, bw) = (self.n, self.bw);
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            for j in lo..=i {
                let mut s = self.data[self.slot(i, j)];
                let klo = lo.max(j.saturating_sub(bw));
                for k in klo..j {
                    s -= self.data[self.slot(i, k)] * self.data[self.slot(j, k)];
                }
                if i == j {
                    if !(s > 0.0) || !s.is_finite() {
                        return Err(Error::Numerical(format!(
                            "matrix not positive definite at row {i} (pivot {s:e})"
                        )));
                    }
                    let si = self.slot(i, i);
                    self.data[si] = s.sqrt();
                } else {
                    let d = self.data[self.slot(j, j)];
                    let sij = self.slot(i, j);
                    self.data[sij] = s / d;
                }
            }
        }
        Ok(BandCholesky { factor: self })
    }
}

/// Cholesky factor of a [`BandedSym`].
#[derive(Debug, Clone)]
pub struct BandCholesky {
    factor: BandedSym,
}

impl BandCholesky {
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let l = &self.factor;
        let (n, bw) = (l.n, l.bw);
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            let mut s = b[i];
            for k in lo..i {
                s -= l.data[l.slot(i, k)] * b[k];
            }
            b[i] = s / l.data[l.slot(i, i)];
        }
        for i in (0..n).rev() {
            let hi = (i + bw).min(n - 1);
            let mut s = b[i];
            for k in i + 1..=hi {
                s -= l.data[l.slot(k, i)] * b[k];
            }
            b[i] = s / l.data[l.slot(i, i)];
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves `A x = b` by conjugate gradients preconditioned with the Cholesky
/// factor of a nearby matrix. `x` holds the initial guess on entry.
/// Returns the iteration count.
pub fn pcg(
    a: &BandedSym,
    precond: &BandCholesky,
    b: &[f64],
    x: &mut [f64],
    rel_tol: f64,
    max_iter: usize,
) -> Result<usize> {
    let n = a.dim();
    let mut r = vec![0.0; n];
    a.mul_vec(x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let b_norm = dot(b, b).sqrt().max(f64::MIN_POSITIVE);
    if dot(&r, &r).sqrt() <= rel_tol * b_norm {
        return Ok(0);
    }
    let mut z = r.clone();
    precond.solve_in_place(&mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for it in 1..=max_iter {
        a.mul_vec(&p, &mut ap);
        let alpha = rz / dot(&p, &ap);
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        if dot(&r, &r).sqrt() <= rel_tol * b_norm {
            return Ok(it);
        }
        z.copy_from_slice(&r);
        precond.solve_in_place(&mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::Numerical(format!(
        "preconditioned CG did not converge in {max_iter} iterations"
    )))
}
