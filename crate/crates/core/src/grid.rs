//! The discrete weighted space: a rectangular grid carrying a nonnegative
//! density per cell, plus scalar and vector data bound to it.
//!
//! Cells are addressed by a flat row-major index (last axis fastest). Cell
//! `i` has its center at `origin + (multi_index(i) + 1/2) * spacing` and mass
//! `w_i * spacing^d`. The support is the exact set `{i : w_i > 0}`.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::scalar::{norm, Real};

#[derive(Debug, Clone, PartialEq)]
pub struct GridMeasure<T> {
    shape: Vec<usize>,
    strides: Vec<usize>,
    spacing: T,
    origin: Vec<T>,
    weights: Vec<T>,
}

impl<T: Real> GridMeasure<T> {
    pub fn new(shape: Vec<usize>, spacing: T, origin: Vec<T>, weights: Vec<T>) -> Result<Self> {
        if shape.is_empty() {
            return Err(Error::MalformedSpec("dimension must be at least 1".into()));
        }
        if shape.contains(&0) {
            return Err(Error::MalformedSpec(
                "every axis needs at least one cell".into(),
            ));
        }
        if origin.len() != shape.len() {
            return Err(Error::MalformedSpec(format!(
                "origin has {} entries, expected {}",
                origin.len(),
                shape.len()
            )));
        }
        if !(spacing > T::zero()) || !spacing.is_finite() {
            return Err(Error::MalformedSpec(
                "spacing must be positive and finite".into(),
            ));
        }
        let len: usize = shape.iter().product();
        if weights.len() != len {
            return Err(Error::MalformedSpec(format!(
                "{} weights for {} cells",
                weights.len(),
                len
            )));
        }
        for (index, &w) in weights.iter().enumerate() {
            if !w.is_finite() {
                return Err(Error::NonFiniteWeight { index });
            }
            if w < T::zero() {
                return Err(Error::NegativeWeight {
                    index,
                    value: w.as_f64(),
                });
            }
        }
        if !weights.iter().any(|&w| w > T::zero()) {
            return Err(Error::ZeroTotalMass);
        }
        let mut strides = vec![1usize; shape.len()];
        for k in (0..shape.len().saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * shape[k + 1];
        }
        Ok(Self {
            shape,
            strides,
            spacing,
            origin,
            weights,
        })
    }

    /// Unit-density grid anchored at the origin.
    pub fn uniform(shape: Vec<usize>, spacing: T) -> Result<Self> {
        let len = shape.iter().product();
        let d = shape.len();
        Self::new(shape, spacing, vec![T::zero(); d], vec![T::one(); len])
    }

    pub fn dim(&self) -> usize {
        self.shape.len()
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn spacing(&self) -> T {
        self.spacing
    }

    pub fn origin(&self) -> &[T] {
        &self.origin
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    #[inline]
    pub fn weight(&self, i: usize) -> T {
        self.weights[i]
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// `h^d`.
    pub fn cell_volume(&self) -> T {
        self.spacing.powi(self.dim() as i32)
    }

    /// Mass `w_i h^d` of one cell.
    #[inline]
    pub fn cell_mass(&self, i: usize) -> T {
        self.weights[i] * self.cell_volume()
    }

    pub fn total_mass(&self) -> T {
        self.weights.iter().copied().sum::<T>() * self.cell_volume()
    }

    #[inline]
    pub fn is_support(&self, i: usize) -> bool {
        self.weights[i] > T::zero()
    }

    pub fn support(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(move |&i| self.is_support(i))
    }

    pub fn support_len(&self) -> usize {
        self.support().count()
    }

    pub fn multi_index(&self, mut i: usize) -> Vec<usize> {
        let mut out = vec![0; self.dim()];
        for (k, &s) in self.strides.iter().enumerate() {
            out[k] = i / s;
            i %= s;
        }
        out
    }

    #[inline]
    pub fn coord(&self, i: usize, k: usize) -> usize {
        (i / self.strides[k]) % self.shape[k]
    }

    pub fn flat(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.strides).map(|(a, s)| a * s).sum()
    }

    #[inline]
    pub fn stride(&self, k: usize) -> usize {
        self.strides[k]
    }

    /// Neighbor `i + e_k`, if inside the grid.
    #[inline]
    pub fn forward(&self, i: usize, k: usize) -> Option<usize> {
        if self.coord(i, k) + 1 < self.shape[k] {
            Some(i + self.strides[k])
        } else {
            None
        }
    }

    /// Neighbor `i - e_k`, if inside the grid.
    #[inline]
    pub fn backward(&self, i: usize, k: usize) -> Option<usize> {
        if self.coord(i, k) > 0 {
            Some(i - self.strides[k])
        } else {
            None
        }
    }

    /// Cell reached from `i` by a lattice offset, if inside the grid.
    pub fn offset(&self, i: usize, off: &[isize]) -> Option<usize> {
        let mut out = i as isize;
        for (k, &o) in off.iter().enumerate() {
            let c = self.coord(i, k) as isize + o;
            if c < 0 || c >= self.shape[k] as isize {
                return None;
            }
            out += o * self.strides[k] as isize;
        }
        Some(out as usize)
    }

    /// Cell reached by an offset with coordinates clamped to the grid.
    pub fn offset_clamped(&self, i: usize, off: &[isize]) -> usize {
        let mut out = 0usize;
        for (k, &o) in off.iter().enumerate() {
            let c = (self.coord(i, k) as isize + o).clamp(0, self.shape[k] as isize - 1);
            out += c as usize * self.strides[k];
        }
        out
    }

    /// True when the forward difference along axis `k` leaves the grid at cell `i`.
    /// The `k`-th component of a field at such a cell is invisible to every
    /// discrete operator.
    #[inline]
    pub fn is_upper_boundary(&self, i: usize, k: usize) -> bool {
        self.coord(i, k) + 1 == self.shape[k]
    }

    pub fn center(&self, i: usize) -> Vec<T> {
        (0..self.dim()).map(|k| self.center_coord(i, k)).collect()
    }

    #[inline]
    pub fn center_coord(&self, i: usize, k: usize) -> T {
        self.origin[k] + (T::from_usize_lossy(self.coord(i, k)) + T::lit(0.5)) * self.spacing
    }

    pub fn same_grid(&self, other: &Self) -> bool {
        self.shape == other.shape && self.spacing == other.spacing && self.origin == other.origin
    }

    /// Same grid geometry with different weights.
    pub fn with_weights(&self, weights: Vec<T>) -> Result<Self> {
        Self::new(
            self.shape.clone(),
            self.spacing,
            self.origin.clone(),
            weights,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction<T> {
    measure: Arc<GridMeasure<T>>,
    values: Vec<T>,
}

impl<T: Real> GridFunction<T> {
    pub fn new(measure: Arc<GridMeasure<T>>, values: Vec<T>) -> Result<Self> {
        if values.len() != measure.len() {
            return Err(Error::MalformedSpec(format!(
                "{} values for {} cells",
                values.len(),
                measure.len()
            )));
        }
        Ok(Self { measure, values })
    }

    pub fn zeros(measure: Arc<GridMeasure<T>>) -> Self {
        let n = measure.len();
        Self {
            measure,
            values: vec![T::zero(); n],
        }
    }

    pub fn constant(measure: Arc<GridMeasure<T>>, c: T) -> Self {
        let n = measure.len();
        Self {
            measure,
            values: vec![c; n],
        }
    }

    /// Samples `f` at cell centers.
    pub fn from_fn(measure: Arc<GridMeasure<T>>, f: impl Fn(&[T]) -> T) -> Self {
        let values = (0..measure.len()).map(|i| f(&measure.center(i))).collect();
        Self { measure, values }
    }

    pub fn measure(&self) -> &Arc<GridMeasure<T>> {
        &self.measure
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

    #[inline]
    pub fn get(&self, i: usize) -> T {
        self.values[i]
    }

    /// `sum_i |f_i| w_i h^d`.
    pub fn l1_norm(&self) -> T {
        let m = &self.measure;
        m.support()
            .map(|i| self.values[i].abs() * m.weight(i))
            .sum::<T>()
            * m.cell_volume()
    }

    /// `sum_i f_i w_i h^d`.
    pub fn integrate(&self) -> T {
        let m = &self.measure;
        m.support().map(|i| self.values[i] * m.weight(i)).sum::<T>() * m.cell_volume()
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            measure: self.measure.clone(),
            values: self.values.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.check_grid(other.measure())?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Self {
            measure: self.measure.clone(),
            values,
        })
    }

    pub fn scale(&self, c: T) -> Self {
        self.map(|x| x * c)
    }

    /// Max of `|f_i|` over the support.
    pub fn sup_on_support(&self) -> T {
        self.measure
            .support()
            .map(|i| self.values[i].abs())
            .fold(T::zero(), T::max)
    }

    pub(crate) fn check_grid(&self, other: &GridMeasure<T>) -> Result<()> {
        if std::ptr::eq(self.measure.as_ref(), other) || *self.measure == *other {
            Ok(())
        } else {
            Err(Error::MeasureMismatch)
        }
    }
}

/// Where a vector field is meaningful.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FieldDomain {
    /// Stored and compared only on `{w > 0}`; entries elsewhere are zero.
    SupportOnly,
    AllCells,
}

/// Cellwise `d`-vectors stored cell-major: component `k` of cell `i` at `i * d + k`.
#[derive(Debug, Clone)]
pub struct GridVectorField<T> {
    measure: Arc<GridMeasure<T>>,
    data: Vec<T>,
    domain: FieldDomain,
}

impl<T: Real> GridVectorField<T> {
    pub fn new(
        measure: Arc<GridMeasure<T>>,
        mut data: Vec<T>,
        domain: FieldDomain,
    ) -> Result<Self> {
        let d = measure.dim();
        if data.len() != measure.len() * d {
            return Err(Error::MalformedSpec(format!(
                "{} field entries for {} cells of dimension {}",
                data.len(),
                measure.len(),
                d
            )));
        }
        if domain == FieldDomain::SupportOnly {
            for i in 0..measure.len() {
                if !measure.is_support(i) {
                    data[i * d..(i + 1) * d]
                        .iter_mut()
                        .for_each(|x| *x = T::zero());
                }
            }
        }
        Ok(Self {
            measure,
            data,
            domain,
        })
    }

    pub fn zeros(measure: Arc<GridMeasure<T>>, domain: FieldDomain) -> Self {
        let n = measure.len() * measure.dim();
        Self {
            measure,
            data: vec![T::zero(); n],
            domain,
        }
    }

    /// Samples `v` at cell centers.
    pub fn from_fn(
        measure: Arc<GridMeasure<T>>,
        domain: FieldDomain,
        v: impl Fn(&[T]) -> Vec<T>,
    ) -> Self {
        let d = measure.dim();
        let mut data = Vec::with_capacity(measure.len() * d);
        for i in 0..measure.len() {
            let val = v(&measure.center(i));
            assert_eq!(val.len(), d, "field closure returned wrong dimension");
            data.extend(val);
        }
        Self::new(measure, data, domain).expect("sizes agree by construction")
    }

    pub fn measure(&self) -> &Arc<GridMeasure<T>> {
        &self.measure
    }

    pub fn domain(&self) -> FieldDomain {
        self.domain
    }

    pub fn dim(&self) -> usize {
        self.measure.dim()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn at(&self, i: usize) -> &[T] {
        let d = self.dim();
        &self.data[i * d..(i + 1) * d]
    }

    #[inline]
    pub fn component(&self, i: usize, k: usize) -> T {
        self.data[i * self.dim() + k]
    }

    pub fn norm_at(&self, i: usize) -> T {
        norm(self.at(i))
    }

    /// Cellwise Euclidean norms as a scalar function.
    pub fn pointwise_norm(&self) -> GridFunction<T> {
        let values = (0..self.measure.len()).map(|i| self.norm_at(i)).collect();
        GridFunction {
            measure: self.measure.clone(),
            values,
        }
    }

    /// `max_{w_i > 0} |v_i|`; zero-weight cells are ignored.
    pub fn sup_norm_on_support(&self) -> T {
        self.measure
            .support()
            .map(|i| self.norm_at(i))
            .fold(T::zero(), T::max)
    }

    /// Restricts to the support, zeroing every other cell.
    pub fn to_support_only(&self) -> Self {
        Self::new(
            self.measure.clone(),
            self.data.clone(),
            FieldDomain::SupportOnly,
        )
        .expect("same sizes")
    }

    /// Multiplies cell `i` by the scalar `s_i`.
    pub fn scale_by(&self, s: &GridFunction<T>) -> Result<Self> {
        s.check_grid(&self.measure)?;
        let d = self.dim();
        let data = self
            .data
            .iter()
            .enumerate()
            .map(|(j, &x)| x * s.get(j / d))
            .collect();
        Ok(Self {
            measure: self.measure.clone(),
            data,
            domain: self.domain,
        })
    }

    pub fn scale(&self, c: T) -> Self {
        Self {
            measure: self.measure.clone(),
            data: self.data.iter().map(|&x| x * c).collect(),
            domain: self.domain,
        }
    }

    /// Zeroes the components no discrete operator can see: component `k`
    /// on the last slab of axis `k`.
    pub fn without_gauge(&self) -> Self {
        let d = self.dim();
        let mut data = self.data.clone();
        for i in 0..self.measure.len() {
            for k in 0..d {
                if self.measure.is_upper_boundary(i, k) {
                    data[i * d + k] = T::zero();
                }
            }
        }
        Self {
            measure: self.measure.clone(),
            data,
            domain: self.domain,
        }
    }

    pub(crate) fn check_grid(&self, other: &GridMeasure<T>) -> Result<()> {
        if std::ptr::eq(self.measure.as_ref(), other) || *self.measure == *other {
            Ok(())
        } else {
            Err(Error::MeasureMismatch)
        }
    }

    /// Equality up to `tol` on the support (entries elsewhere are ignored).
    pub fn approx_eq_on_support(&self, other: &Self, tol: T) -> bool {
        self.measure.same_grid(&other.measure)
            && self.measure.support().all(|i| {
                self.at(i)
                    .iter()
                    .zip(other.at(i))
                    .all(|(&a, &b)| (a - b).abs() <= tol)
            })
    }
}

/// Lattice offsets within a Euclidean ball: `{o : |o| h <= r}`.
#[derive(Debug, Clone, PartialEq)]
pub struct BallStencil<T> {
    radius: T,
    offsets: Vec<Vec<isize>>,
}

impl<T: Real> BallStencil<T> {
    pub fn new(dim: usize, spacing: T, radius: T) -> Self {
        let reach = (radius / spacing).floor().to_isize().unwrap_or(0).max(0);
        let mut offsets = Vec::new();
        let mut cur = vec![-reach; dim];
        let r2 = (radius / spacing) * (radius / spacing);
        loop {
            let n2 = cur
                .iter()
                .fold(T::zero(), |acc, &o| acc + T::lit((o * o) as f64));
            // relative slack so that lattice points exactly on the sphere are kept
            if n2 <= r2 * (T::one() + T::lit(1e-12)) {
                offsets.push(cur.clone());
            }
            let mut k = dim;
            loop {
                if k == 0 {
                    return Self { radius, offsets };
                }
                k -= 1;
                if cur[k] < reach {
                    cur[k] += 1;
                    break;
                }
                cur[k] = -reach;
            }
        }
    }

    pub fn radius(&self) -> T {
        self.radius
    }

    pub fn offsets(&self) -> &[Vec<isize>] {
        &self.offsets
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }
}
