//! Linear solvers for the Newton systems.
//!
//! In one dimension the Jacobian is a periodic (cyclic) banded matrix. It is
//! split as `A = B + U C` where `B` is the plain banded part and the rank
//! `2w` term `U C` holds the wrap-around corners, then solved with the
//! Sherman-Morrison-Woodbury identity
//!
//! ```text
//! A^{-1} r = z - Y (I + C Y)^{-1} C z,   B z = r,   B Y = U.
//! ```
//!
//! For more dimensions a matrix-free, Jacobi-preconditioned conjugate
//! gradient is used; the Jacobians are symmetric positive definite.

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Cyclic banded matrix with half-bandwidth `w`: row `i` has entries at
/// columns `(i + o) mod n` for `o` in `-w..=w`.
#[derive(Debug, Clone)]
pub struct CyclicBanded<T> {
    n: usize,
    w: usize,
    /// `bands[i * (2w+1) + (o + w)]`
    bands: Vec<T>,
}

impl<T: Real> CyclicBanded<T> {
    pub fn zeros(n: usize, w: usize) -> Result<Self> {
        if n < 2 * w + 1 {
            return Err(Error::Argument(format!(
                "cyclic band of half-width {w} needs at least {} rows, got {n}",
                2 * w + 1
            )));
        }
        Ok(Self {
            n,
            w,
            bands: vec![T::zero(); n * (2 * w + 1)],
        })
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn half_width(&self) -> usize {
        self.w
    }

    #[inline]
    pub fn get(&self, row: usize, offset: isize) -> T {
        self.bands[row * (2 * self.w + 1) + (offset + self.w as isize) as usize]
    }

    #[inline]
    pub fn set(&mut self, row: usize, offset: isize, value: T) {
        let w = self.w;
        self.bands[row * (2 * w + 1) + (offset + w as isize) as usize] = value;
    }

    #[inline]
    pub fn add(&mut self, row: usize, offset: isize, value: T) {
        let w = self.w;
        self.bands[row * (2 * w + 1) + (offset + w as isize) as usize] += value;
    }

    /// `A x`.
    pub fn matvec(&self, x: &[T]) -> Vec<T> {
        let (n, w) = (self.n as isize, self.w as isize);
        (0..self.n)
            .map(|i| {
                (-w..=w).fold(T::zero(), |acc, o| {
                    acc + self.get(i, o) * x[(i as isize + o).rem_euclid(n) as usize]
                })
            })
            .collect()
    }

    /// Solves `A x = rhs`.
    pub fn solve(&self, rhs: &[T]) -> Result<Vec<T>> {
        assert_eq!(rhs.len(), self.n, "right-hand side length");
        let lu = BandLu::factor(self)?;
        let mut z = rhs.to_vec();
        lu.solve_in_place(&mut z);
        if self.w == 0 {
            return Ok(z);
        }

        // corner rows: the first w and last w rows carry wrap entries
        let (n, w) = (self.n, self.w);
        let rows: Vec<usize> = (0..w).chain(n - w..n).collect();
        let r = rows.len();
        // C: r x n, sparse; store as (row index into `rows`, column, value)
        let mut corners = Vec::new();
        for (ci, &i) in rows.iter().enumerate() {
            for o in -(w as isize)..=(w as isize) {
                let j = i as isize + o;
                if j < 0 || j >= n as isize {
                    corners.push((ci, j.rem_euclid(n as isize) as usize, self.get(i, o)));
                }
            }
        }
        // Y = B^{-1} U, U = [e_rows]
        let mut y = vec![vec![T::zero(); n]; r];
        for (ci, &i) in rows.iter().enumerate() {
            y[ci][i] = T::one();
            lu.solve_in_place(&mut y[ci]);
        }
        // S = I + C Y (r x r), g = C z
        let mut s = vec![T::zero(); r * r];
        for d in 0..r {
            s[d * r + d] = T::one();
        }
        let mut g = vec![T::zero(); r];
        for &(ci, j, v) in &corners {
            g[ci] += v * z[j];
            for (cj, col) in y.iter().enumerate() {
                s[ci * r + cj] += v * col[j];
            }
        }
        solve_dense(&mut s, &mut g, r)?;
        for (cj, col) in y.iter().enumerate() {
            for (zi, &yi) in z.iter_mut().zip(col) {
                *zi -= yi * g[cj];
            }
        }
        Ok(z)
    }
}

/// LU factors of the non-cyclic band part, without pivoting.
struct BandLu<T> {
    n: usize,
    w: usize,
    /// Row-major `(2w+1)` wide storage of L (strictly lower, unit diagonal) and U.
    lu: Vec<T>,
}

impl<T: Real> BandLu<T> {
    fn factor(a: &CyclicBanded<T>) -> Result<Self> {
        let (n, w) = (a.n, a.w);
        let width = 2 * w + 1;
        let mut lu = vec![T::zero(); n * width];
        for i in 0..n {
            for o in -(w as isize)..=(w as isize) {
                let j = i as isize + o;
                if j >= 0 && (j as usize) < n {
                    lu[i * width + (o + w as isize) as usize] = a.get(i, o);
                }
            }
        }
        let at = |i: usize, j: usize| i * width + (j + w - i);
        for k in 0..n {
            let pivot = lu[at(k, k)];
            if pivot == T::zero() || !pivot.is_finite() {
                return Err(Error::SingularJacobian(format!("zero pivot in band LU at row {k}")));
            }
            for i in k + 1..(k + w + 1).min(n) {
                let l = lu[at(i, k)] / pivot;
                lu[at(i, k)] = l;
                for j in k + 1..(k + w + 1).min(n) {
                    let ukj = lu[at(k, j)];
                    lu[at(i, j)] -= l * ukj;
                }
            }
        }
        Ok(Self { n, w, lu })
    }

    fn solve_in_place(&self, x: &mut [T]) {
        let (n, w) = (self.n, self.w);
        let width = 2 * w + 1;
        let at = |i: usize, j: usize| i * width + (j + w - i);
        for i in 0..n {
            let mut acc = x[i];
            for j in i.saturating_sub(w)..i {
                acc -= self.lu[at(i, j)] * x[j];
            }
            x[i] = acc;
        }
        for i in (0..n).rev() {
            let mut acc = x[i];
            for j in i + 1..(i + w + 1).min(n) {
                acc -= self.lu[at(i, j)] * x[j];
            }
            x[i] = acc / self.lu[at(i, i)];
        }
    }
}

/// Gaussian elimination with partial pivoting on a small dense system.
fn solve_dense<T: Real>(a: &mut [T], b: &mut [T], n: usize) -> Result<()> {
    for k in 0..n {
        let piv = (k..n)
            .max_by(|&i, &j| a[i * n + k].abs().partial_cmp(&a[j * n + k].abs()).unwrap())
            .unwrap();
        if a[piv * n + k] == T::zero() {
            return Err(Error::SingularJacobian("singular capacitance matrix".into()));
        }
        if piv != k {
            for j in 0..n {
                a.swap(k * n + j, piv * n + j);
            }
            b.swap(k, piv);
        }
        for i in k + 1..n {
            let l = a[i * n + k] / a[k * n + k];
            for j in k..n {
                let akj = a[k * n + j];
                a[i * n + j] -= l * akj;
            }
            let bk = b[k];
            b[i] -= l * bk;
        }
    }
    for k in (0..n).rev() {
        let mut acc = b[k];
        for j in k + 1..n {
            acc -= a[k * n + j] * b[j];
        }
        b[k] = acc / a[k * n + k];
    }
    Ok(())
}

/// Jacobi-preconditioned conjugate gradient for an SPD operator.
///
/// Stops once `||r||_inf <= tol * ||b||_inf` or after `max_iter` iterations;
/// returns the iterate and the number of iterations.
pub fn conjugate_gradient<T: Real>(
    apply: impl Fn(&[T]) -> Vec<T>,
    diagonal: &[T],
    b: &[T],
    tol: T,
    max_iter: usize,
) -> Result<(Vec<T>, usize)> {
    let n = b.len();
    let inf = |v: &[T]| v.iter().fold(T::zero(), |m, x| m.max(x.abs()));
    let dot = |u: &[T], v: &[T]| u.iter().zip(v).fold(T::zero(), |s, (a, b)| s + *a * *b);
    let bnorm = inf(b);
    let mut x = vec![T::zero(); n];
    if bnorm == T::zero() {
        return Ok((x, 0));
    }
    if diagonal.iter().any(|d| !(*d > T::zero())) {
        return Err(Error::SingularJacobian("nonpositive diagonal in CG preconditioner".into()));
    }
    let mut r = b.to_vec();
    let mut z: Vec<T> = r.iter().zip(diagonal).map(|(r, d)| *r / *d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    for it in 0..max_iter {
        if inf(&r) <= tol * bnorm {
            return Ok((x, it));
        }
        let ap = apply(&p);
        let pap = dot(&p, &ap);
        if !(pap > T::zero()) {
            return Err(Error::SingularJacobian("operator not positive definite".into()));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        for i in 0..n {
            z[i] = r[i] / diagonal[i];
        }
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    if inf(&r) <= tol * bnorm {
        Ok((x, max_iter))
    } else {
        Err(Error::NonConvergence {
            iterations: max_iter,
            residual: (inf(&r) / bnorm).to_f64().unwrap_or(f64::NAN),
        })
    }
}
