//! Periodic uniform grids and the finite-difference operators used by both
//! discretizations.
//!
//! Values are stored row-major: the last axis varies fastest, so the flat
//! index of `(k_0, .., k_{n-1})` is `sum_i k_i * stride_i` with
//! `stride_{n-1} = 1` and `stride_i = stride_{i+1} * N_{i+1}`. Periodic
//! neighbours are resolved by index arithmetic modulo `N_i`; there are no
//! ghost cells.

use std::sync::Arc;

use crate::error::{arg_err, config_err, Result};
use crate::scalar::Real;

/// Smallest per-axis point count accepted by any operator.
pub const MIN_POINTS: usize = 3;
/// Smallest per-axis point count for the stride-2 (wide) Laplacian.
pub const MIN_POINTS_WIDE: usize = 5;

/// Periodic uniform grid in `n` dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct Lattice<T> {
    counts: Vec<usize>,
    spacings: Vec<T>,
    origin: Vec<T>,
    strides: Vec<usize>,
}

impl<T: Real> Lattice<T> {
    /// Builds a lattice from per-axis point counts, spacings and lower bounds.
    pub fn new(counts: Vec<usize>, spacings: Vec<T>, origin: Vec<T>) -> Result<Self> {
        if counts.is_empty() {
            return config_err("lattice needs at least one axis");
        }
        if spacings.len() != counts.len() || origin.len() != counts.len() {
            return config_err(format!(
                "axis mismatch: {} counts, {} spacings, {} origins",
                counts.len(),
                spacings.len(),
                origin.len()
            ));
        }
        for (axis, &n) in counts.iter().enumerate() {
            if n < MIN_POINTS {
                return config_err(format!(
                    "axis {axis} has {n} points, need at least {MIN_POINTS}"
                ));
            }
        }
        for (axis, &h) in spacings.iter().enumerate() {
            if !(h > T::zero()) || !h.is_finite() {
                return config_err(format!("axis {axis} spacing must be positive and finite"));
            }
        }
        if origin.iter().any(|o| !o.is_finite()) {
            return config_err("lattice origin must be finite");
        }
        let mut strides = vec![1; counts.len()];
        for axis in (0..counts.len().saturating_sub(1)).rev() {
            strides[axis] = strides[axis + 1] * counts[axis + 1];
        }
        Ok(Self {
            counts,
            spacings,
            origin,
            strides,
        })
    }

    /// One-dimensional lattice of `count` points covering `[origin, origin + extent)`.
    pub fn periodic_1d(count: usize, origin: T, extent: T) -> Result<Self> {
        if count == 0 {
            return config_err("lattice needs at least one point");
        }
        Self::new(vec![count], vec![extent / T::from_count(count)], vec![origin])
    }

    /// The interval `[-1/2, 1/2)` sampled with `count` points.
    pub fn unit_interval(count: usize) -> Result<Self> {
        Self::periodic_1d(count, T::lit(-0.5), T::one())
    }

    pub fn dim(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn spacings(&self) -> &[T] {
        &self.spacings
    }

    pub fn origin(&self) -> &[T] {
        &self.origin
    }

    pub fn spacing(&self, axis: usize) -> T {
        self.spacings[axis]
    }

    pub fn count(&self, axis: usize) -> usize {
        self.counts[axis]
    }

    pub fn stride(&self, axis: usize) -> usize {
        self.strides[axis]
    }

    /// Total number of lattice points.
    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Domain length along `axis` (`N_i * dx_i`).
    pub fn extent(&self, axis: usize) -> T {
        self.spacings[axis] * T::from_count(self.counts[axis])
    }

    /// Volume element `dx_1 * ... * dx_n`.
    pub fn cell_volume(&self) -> T {
        self.spacings.iter().fold(T::one(), |acc, &h| acc * h)
    }

    /// Coordinate of grid index `k` along `axis`.
    pub fn coordinate(&self, axis: usize, k: usize) -> T {
        self.origin[axis] + T::from_count(k) * self.spacings[axis]
    }

    /// Multi-index of a flat index.
    pub fn unravel(&self, flat: usize) -> Vec<usize> {
        self.counts
            .iter()
            .zip(&self.strides)
            .map(|(&n, &s)| (flat / s) % n)
            .collect()
    }

    /// Flat index of a multi-index, wrapping every component periodically.
    pub fn ravel(&self, index: &[isize]) -> usize {
        index
            .iter()
            .zip(self.counts.iter().zip(&self.strides))
            .map(|(&k, (&n, &s))| k.rem_euclid(n as isize) as usize * s)
            .sum()
    }

    /// Flat index of the periodic neighbour `offset` steps away along `axis`.
    #[inline]
    pub fn neighbor(&self, flat: usize, axis: usize, offset: isize) -> usize {
        let n = self.counts[axis];
        let s = self.strides[axis];
        let k = (flat / s) % n;
        let shifted = (k as isize + offset).rem_euclid(n as isize) as usize;
        flat + shifted * s - k * s
    }

    pub(crate) fn check_axis(&self, axis: usize) -> Result<()> {
        if axis >= self.dim() {
            return arg_err(format!("axis {axis} out of range for a {}-d lattice", self.dim()));
        }
        Ok(())
    }

    pub(crate) fn require_min_points(&self, min: usize, what: &str) -> Result<()> {
        for (axis, &n) in self.counts.iter().enumerate() {
            if n < min {
                return config_err(format!(
                    "{what} needs at least {min} points per axis, axis {axis} has {n}"
                ));
            }
        }
        Ok(())
    }
}

/// Real-valued grid function on a [`Lattice`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField<T> {
    lattice: Arc<Lattice<T>>,
    values: Vec<T>,
}

impl<T: Real> ScalarField<T> {
    pub fn zeros(lattice: Arc<Lattice<T>>) -> Self {
        Self::constant(lattice, T::zero())
    }

    pub fn constant(lattice: Arc<Lattice<T>>, value: T) -> Self {
        let len = lattice.len();
        Self {
            lattice,
            values: vec![value; len],
        }
    }

    pub fn from_values(lattice: Arc<Lattice<T>>, values: Vec<T>) -> Result<Self> {
        if values.len() != lattice.len() {
            return arg_err(format!(
                "field has {} values but lattice has {} points",
                values.len(),
                lattice.len()
            ));
        }
        Ok(Self { lattice, values })
    }

    /// Samples `f` at every lattice point; `f` receives the point's coordinates.
    pub fn from_fn(lattice: Arc<Lattice<T>>, mut f: impl FnMut(&[T]) -> T) -> Self {
        let mut coords = vec![T::zero(); lattice.dim()];
        let values = (0..lattice.len())
            .map(|flat| {
                for (axis, k) in lattice.unravel(flat).into_iter().enumerate() {
                    coords[axis] = lattice.coordinate(axis, k);
                }
                f(&coords)
            })
            .collect();
        Self { lattice, values }
    }

    /// Samples `f` at every flat index.
    pub fn from_index_fn(lattice: Arc<Lattice<T>>, f: impl FnMut(usize) -> T) -> Self {
        let values = (0..lattice.len()).map(f).collect();
        Self { lattice, values }
    }

    pub fn lattice(&self) -> &Arc<Lattice<T>> {
        &self.lattice
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn same_lattice(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.lattice, &other.lattice) || self.lattice == other.lattice
    }

    pub(crate) fn check_same_lattice(&self, other: &Self) -> Result<()> {
        if !self.same_lattice(other) {
            return arg_err("fields live on different lattices");
        }
        Ok(())
    }

    pub fn map(&self, mut f: impl FnMut(T) -> T) -> Self {
        Self {
            lattice: Arc::clone(&self.lattice),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Pointwise combination of two fields on the same lattice.
    pub fn zip_with(&self, other: &Self, mut f: impl FnMut(T, T) -> T) -> Result<Self> {
        self.check_same_lattice(other)?;
        Ok(Self {
            lattice: Arc::clone(&self.lattice),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, c: T) -> Self {
        self.map(|v| c * v)
    }

    pub fn sum(&self) -> T {
        self.values.iter().fold(T::zero(), |acc, &v| acc + v)
    }

    /// `sum_k self_k * other_k`.
    pub fn dot(&self, other: &Self) -> Result<T> {
        self.check_same_lattice(other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .fold(T::zero(), |acc, (&a, &b)| acc + a * b))
    }

    pub fn max_abs(&self) -> T {
        self.values.iter().fold(T::zero(), |acc, &v| acc.max(v.abs()))
    }

    pub fn min_value(&self) -> T {
        self.values.iter().fold(T::infinity(), |acc, &v| acc.min(v))
    }

    pub fn max_value(&self) -> T {
        self.values.iter().fold(T::neg_infinity(), |acc, &v| acc.max(v))
    }

    /// Field shifted by `offset` points along `axis`: `out_k = f_{k + offset}`.
    pub fn shifted(&self, axis: usize, offset: isize) -> Result<Self> {
        self.lattice.check_axis(axis)?;
        Ok(self.stencil(axis, [offset], |[v]| v))
    }

    /// Applies a one-axis stencil; `kernel` receives the values at `offsets`
    /// relative to each point.
    fn stencil<const K: usize>(&self, axis: usize, offsets: [isize; K], kernel: impl Fn([T; K]) -> T) -> Self {
        let lat = &self.lattice;
        let n = lat.count(axis) as isize;
        let s = lat.stride(axis);
        let values = (0..self.values.len())
            .map(|flat| {
                let k = ((flat / s) as isize) % n;
                let base = flat - k as usize * s;
                let gathered = offsets.map(|o| {
                    let mut j = k + o;
                    if j < 0 || j >= n {
                        j = j.rem_euclid(n);
                    }
                    self.values[base + j as usize * s]
                });
                kernel(gathered)
            })
            .collect();
        Self {
            lattice: Arc::clone(lat),
            values,
        }
    }
}

/// First-order central difference `(f_{k+1} - f_{k-1}) / (2 dx)` along `axis`.
pub fn central_diff<T: Real>(f: &ScalarField<T>, axis: usize) -> Result<ScalarField<T>> {
    f.lattice.check_axis(axis)?;
    let inv = (T::lit(2.0) * f.lattice.spacing(axis)).recip();
    Ok(f.stencil(axis, [1, -1], |[up, down]| (up - down) * inv))
}

/// Forward difference `(f_{k+1} - f_k) / dx` along `axis`.
pub fn forward_diff<T: Real>(f: &ScalarField<T>, axis: usize) -> Result<ScalarField<T>> {
    f.lattice.check_axis(axis)?;
    let inv = f.lattice.spacing(axis).recip();
    Ok(f.stencil(axis, [1, 0], |[up, here]| (up - here) * inv))
}

/// Backward difference `(f_k - f_{k-1}) / dx` along `axis`.
pub fn backward_diff<T: Real>(f: &ScalarField<T>, axis: usize) -> Result<ScalarField<T>> {
    f.lattice.check_axis(axis)?;
    let inv = f.lattice.spacing(axis).recip();
    Ok(f.stencil(axis, [0, -1], |[here, down]| (here - down) * inv))
}

/// Sum over axes of the central difference applied twice.
///
/// Along each axis this is `(f_{k+2} - 2 f_k + f_{k-2}) / (2 dx)^2`: points
/// of opposite index parity never meet in the stencil.
pub fn laplacian_wide<T: Real>(f: &ScalarField<T>) -> Result<ScalarField<T>> {
    f.lattice.require_min_points(MIN_POINTS_WIDE, "wide Laplacian")?;
    let mut out = ScalarField::zeros(Arc::clone(&f.lattice));
    for axis in 0..f.lattice.dim() {
        let d2 = central_diff(&central_diff(f, axis)?, axis)?;
        for (o, d) in out.values.iter_mut().zip(d2.values) {
            *o += d;
        }
    }
    Ok(out)
}

/// Compact second difference `sum_i (f_{k+1} - 2 f_k + f_{k-1}) / dx_i^2`.
pub fn laplacian_compact<T: Real>(f: &ScalarField<T>) -> Result<ScalarField<T>> {
    f.lattice.require_min_points(MIN_POINTS, "compact Laplacian")?;
    let mut out = ScalarField::zeros(Arc::clone(&f.lattice));
    let two = T::lit(2.0);
    for axis in 0..f.lattice.dim() {
        let h = f.lattice.spacing(axis);
        let inv = (h * h).recip();
        let d2 = f.stencil(axis, [1, 0, -1], |[up, here, down]| (up - two * here + down) * inv);
        for (o, d) in out.values.iter_mut().zip(d2.values) {
            *o += d;
        }
    }
    Ok(out)
}
