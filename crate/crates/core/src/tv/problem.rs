//! The discrete dual total-variation LP in operator form.
//!
//! Variables live in per-cell blocks `x_i ∈ R^{r_i}` embedded as
//! `v_i = E_i x_i`. With `K = h A` the problem reads
//!
//! ```text
//! max c·x   s.t.  |x_i| <= 1,  (K x)_j = 0 on {w = 0},  |(K x)_j| <= h M w_j on {w > 0}
//! ```
//!
//! where `c = h^{d-1} K_S^T f`, so that `c·x = sum_j f_j div_μ(v)_j w_j h^d`.

use crate::calculus::{adjoint_flux_transpose, flux_of};
use crate::grid::{FieldDomain, GridFunction, GridMeasure, GridVectorField};
use crate::linalg::conjugate_gradient;
use crate::scalar::{dot, Real};
use crate::tangent::FiberField;
use std::sync::Arc;

#[derive(Debug, Clone)]
pub(crate) struct DualProblem<T> {
    pub measure: Arc<GridMeasure<T>>,
    /// `offsets[i]..offsets[i + 1]` are the variables of cell `i`.
    pub offsets: Vec<usize>,
    /// Embedding column of every variable, `d` entries each.
    pub cols: Vec<T>,
    pub c: Vec<T>,
    /// `h M w_j` on support rows, zero on equality rows.
    pub bounds: Vec<T>,
    /// Every column is a coordinate vector, so each variable meets at most one
    /// tangency row and the tangency projection has a closed form.
    pub coordinate: bool,
}

impl<T: Real> DualProblem<T> {
    /// Coordinate embedding on the support cells selected by `mask`, dropping
    /// the components no operator can see.
    pub fn ambient(f: &GridFunction<T>, div_bound: T, mask: Option<&[bool]>) -> Self {
        let m = f.measure().clone();
        let d = m.dim();
        let mut offsets = vec![0];
        let mut cols = Vec::new();
        for i in 0..m.len() {
            if m.is_support(i) && mask.is_none_or(|mk| mk[i]) {
                for k in 0..d {
                    if !m.is_upper_boundary(i, k) {
                        cols.extend((0..d).map(|r| if r == k { T::one() } else { T::zero() }));
                    }
                }
            }
            offsets.push(cols.len() / d);
        }
        Self::finish(f, div_bound, offsets, cols, true)
    }

    /// Fiber coordinates: `v_i = B_i z_i` with the first `rank(i)` basis columns.
    pub fn fibered(f: &GridFunction<T>, fibers: &FiberField<T>, div_bound: T) -> Self {
        let m = f.measure().clone();
        let d = m.dim();
        let mut offsets = vec![0];
        let mut cols = Vec::new();
        for i in 0..m.len() {
            if m.is_support(i) {
                for c in 0..fibers.rank(i) {
                    cols.extend(fibers.basis_column(i, c));
                }
            }
            offsets.push(cols.len() / d);
        }
        Self::finish(f, div_bound, offsets, cols, false)
    }

    fn finish(
        f: &GridFunction<T>,
        div_bound: T,
        offsets: Vec<usize>,
        cols: Vec<T>,
        coordinate: bool,
    ) -> Self {
        let m = f.measure().clone();
        let h = m.spacing();
        let bounds = (0..m.len()).map(|j| h * div_bound * m.weight(j)).collect();
        let mut p = Self {
            measure: m.clone(),
            offsets,
            cols,
            c: Vec::new(),
            bounds,
            coordinate,
        };
        let fs: Vec<T> = (0..m.len())
            .map(|j| if m.is_support(j) { f.get(j) } else { T::zero() })
            .collect();
        let hd1 = h.powi(m.dim() as i32 - 1);
        p.c = p.kt(&fs).into_iter().map(|x| x * hd1).collect();
        p
    }

    pub fn nvars(&self) -> usize {
        self.offsets[self.offsets.len() - 1]
    }

    pub fn cell_vars(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    /// Cell-major field data `E x`.
    pub fn embed(&self, x: &[T]) -> Vec<T> {
        let m = &self.measure;
        let d = m.dim();
        let mut v = vec![T::zero(); m.len() * d];
        for i in 0..m.len() {
            for p in self.cell_vars(i) {
                for r in 0..d {
                    v[i * d + r] += self.cols[p * d + r] * x[p];
                }
            }
        }
        v
    }

    /// `E^T v`.
    pub fn restrict(&self, v: &[T]) -> Vec<T> {
        let d = self.measure.dim();
        let mut x = vec![T::zero(); self.nvars()];
        for i in 0..self.measure.len() {
            for p in self.cell_vars(i) {
                x[p] = (0..d).fold(T::zero(), |a, r| a + self.cols[p * d + r] * v[i * d + r]);
            }
        }
        x
    }

    pub fn k(&self, x: &[T]) -> Vec<T> {
        let h = self.measure.spacing();
        flux_of(&self.measure, &self.embed(x))
            .into_iter()
            .map(|a| a * h)
            .collect()
    }

    pub fn kt(&self, y: &[T]) -> Vec<T> {
        let h = self.measure.spacing();
        let atz: Vec<T> = adjoint_flux_transpose(&self.measure, y)
            .into_iter()
            .map(|a| a * h)
            .collect();
        self.restrict(&atz)
    }

    pub fn to_field(&self, x: &[T]) -> GridVectorField<T> {
        GridVectorField::new(
            self.measure.clone(),
            self.embed(x),
            FieldDomain::SupportOnly,
        )
        .expect("sizes agree")
    }

    pub fn objective(&self, x: &[T]) -> T {
        dot(&self.c, x)
    }

    pub fn block_norm(&self, x: &[T], i: usize) -> T {
        self.cell_vars(i)
            .fold(T::zero(), |a, p| a + x[p] * x[p])
            .sqrt()
    }

    /// Weak-duality bound `sum_i |(c - K^T y)_i| + sum_S h M w_j |y_j|`.
    pub fn upper_bound(&self, y: &[T]) -> T {
        let kty = self.kt(y);
        let m = &self.measure;
        let mut u = T::zero();
        for i in 0..m.len() {
            u += self
                .cell_vars(i)
                .fold(T::zero(), |a, p| a + (self.c[p] - kty[p]).powi(2))
                .sqrt();
        }
        for j in m.support() {
            u += self.bounds[j] * y[j].abs();
        }
        u
    }

    /// Projects `x` onto `{(K x)_j = 0 on w_j = 0}` in the Euclidean norm.
    pub fn project_tangency(&self, x: &mut [T]) {
        let m = &self.measure;
        if self.coordinate {
            let d = m.dim();
            // (row, Σ a², Σ a x) per zero-weight row
            let mut acc: Vec<(T, T)> = vec![(T::zero(), T::zero()); m.len()];
            let mut row_of = vec![usize::MAX; self.nvars()];
            for i in 0..m.len() {
                for p in self.cell_vars(i) {
                    let k = (0..d)
                        .find(|&r| self.cols[p * d + r] != T::zero())
                        .expect("coordinate column");
                    if let Some(j) = m.forward(i, k) {
                        if !m.is_support(j) {
                            let a = m.weight(i);
                            acc[j].0 += a * a;
                            acc[j].1 += a * x[p];
                            row_of[p] = j;
                        }
                    }
                }
            }
            for i in 0..m.len() {
                for p in self.cell_vars(i) {
                    let j = row_of[p];
                    if j != usize::MAX && acc[j].0 > T::zero() {
                        x[p] -= m.weight(i) * acc[j].1 / acc[j].0;
                    }
                }
            }
            return;
        }
        // General embedding: x -= T^T (T T^T)^+ T x with T = K restricted to zero rows.
        let zero_rows = |z: &mut [T]| {
            for (j, zj) in z.iter_mut().enumerate() {
                if m.is_support(j) {
                    *zj = T::zero();
                }
            }
        };
        let mut rhs = self.k(x);
        zero_rows(&mut rhs);
        if rhs.iter().all(|&r| r == T::zero()) {
            return;
        }
        let d = m.dim();
        let mut diag = vec![T::zero(); m.len()];
        for i in 0..m.len() {
            for p in self.cell_vars(i) {
                for k in 0..d {
                    if let Some(j) = m.forward(i, k) {
                        if !m.is_support(j) {
                            diag[j] += (m.weight(i) * self.cols[p * d + k]).powi(2);
                        }
                    }
                }
            }
        }
        let inv: Vec<T> = diag
            .iter()
            .map(|&g| {
                if g > T::zero() {
                    T::one() / g
                } else {
                    T::zero()
                }
            })
            .collect();
        let apply = |z: &[T], out: &mut [T]| {
            let mut tz = self.k(&self.kt(z));
            zero_rows(&mut tz);
            out.copy_from_slice(&tz);
        };
        let tol = T::lit(1e-13).max(T::epsilon() * T::lit(10.0));
        let lam = match conjugate_gradient(apply, &inv, &rhs, tol, 20 * m.len().max(50)) {
            Ok(s) => s.x,
            Err(_) => return,
        };
        let mut lz = lam;
        zero_rows(&mut lz);
        for (xp, dp) in x.iter_mut().zip(self.kt(&lz)) {
            *xp -= dp;
        }
    }

    /// Repairs `x` into a feasible point and returns its objective together
    /// with the repaired point.
    pub fn feasible(&self, x: &[T]) -> (T, Vec<T>) {
        let m = &self.measure;
        let mut z = x.to_vec();
        self.project_tangency(&mut z);
        let mut t = T::one();
        for i in 0..m.len() {
            let nb = self.block_norm(&z, i);
            if nb > T::one() {
                t = t.min(T::one() / nb);
            }
        }
        let kz = self.k(&z);
        for j in m.support() {
            if kz[j].abs() > self.bounds[j] {
                t = t.min(self.bounds[j] / kz[j].abs());
            }
        }
        for zp in &mut z {
            *zp *= t;
        }
        let val = self.objective(&z);
        if val > T::zero() {
            (val, z)
        } else {
            (T::zero(), vec![T::zero(); self.nvars()])
        }
    }

    /// Largest singular value of `K` by power iteration, padded by 5%.
    pub fn operator_norm(&self) -> T {
        let n = self.nvars();
        if n == 0 {
            return T::one();
        }
        let mut x: Vec<T> = (0..n)
            .map(|p| T::one() + T::lit(((p * 7919) % 13) as f64 / 13.0))
            .collect();
        let mut lam = T::zero();
        for _ in 0..100 {
            let nx = dot(&x, &x).sqrt();
            if nx == T::zero() {
                break;
            }
            for xp in &mut x {
                *xp /= nx;
            }
            let y = self.kt(&self.k(&x));
            lam = dot(&x, &y);
            x = y;
        }
        (lam.max(T::zero()).sqrt() * T::lit(1.05)).max(T::epsilon())
    }
}
