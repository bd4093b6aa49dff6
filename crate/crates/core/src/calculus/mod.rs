//! Discrete differential calculus on a [`GridMeasure`].
//!
//! The gradient is the forward difference `(f_{i+e_k} - f_i) / h`, set to
//! zero on the last slab of each axis. The μ-divergence is its exact
//! weighted negative transpose: for every grid function `φ`
//!
//! ```text
//! sum_i (G φ)_i · v_i w_i h^d = - sum_j φ_j (A v)_j h^d
//! ```
//!
//! where `(A v)_j = sum_k (w_j v_{j,k} - w_{j-e_k} v_{j-e_k,k}) / h` is the
//! adjoint flux. On the support `div_μ(v)_j = (A v)_j / w_j`; on zero-weight
//! cells the flux must vanish (tangency).

mod lipschitz;
mod mollifier;

pub use lipschitz::{
    asymptotic_lipschitz, global_lipschitz, local_lipschitz, ASYMPTOTIC_RADIUS_SLACK,
};
pub use mollifier::{
    bump_profile, mollification_bounds, mollify, MollificationBounds, MollifierKernel,
};

use crate::grid::{FieldDomain, GridFunction, GridMeasure, GridVectorField};
use crate::scalar::Real;

/// Default tolerance of admissibility certificates.
pub const DEFAULT_ADMISSIBILITY_TOL: f64 = 1e-9;

pub fn grid_gradient<T: Real>(f: &GridFunction<T>) -> GridVectorField<T> {
    let m = f.measure();
    let d = m.dim();
    let inv_h = T::one() / m.spacing();
    let vals = f.values();
    let mut data = vec![T::zero(); m.len() * d];
    for i in 0..m.len() {
        for k in 0..d {
            if let Some(j) = m.forward(i, k) {
                data[i * d + k] = (vals[j] - vals[i]) * inv_h;
            }
        }
    }
    GridVectorField::new(m.clone(), data, FieldDomain::AllCells).expect("sizes agree")
}

/// `(A v)_j` for every cell, with `F = w v` taken as zero on the last slab of
/// each axis.
pub fn adjoint_flux<T: Real>(v: &GridVectorField<T>) -> Vec<T> {
    flux_of(v.measure(), v.data())
}

/// [`adjoint_flux`] on raw cell-major data.
pub(crate) fn flux_of<T: Real>(m: &GridMeasure<T>, data: &[T]) -> Vec<T> {
    let d = m.dim();
    let inv_h = T::one() / m.spacing();
    let mut out = vec![T::zero(); m.len()];
    for i in 0..m.len() {
        let w = m.weight(i);
        if w == T::zero() {
            continue;
        }
        for k in 0..d {
            if let Some(j) = m.forward(i, k) {
                let flux = w * data[i * d + k] * inv_h;
                out[i] += flux;
                out[j] -= flux;
            }
        }
    }
    out
}

/// Weighted transpose of [`adjoint_flux`]: `(A^T z)_{i,k} = w_i (z_i - z_{i+e_k}) / h`,
/// zero on the last slab. Equals `-W G z`.
pub fn adjoint_flux_transpose<T: Real>(m: &GridMeasure<T>, z: &[T]) -> Vec<T> {
    let d = m.dim();
    let inv_h = T::one() / m.spacing();
    let mut out = vec![T::zero(); m.len() * d];
    for i in 0..m.len() {
        let w = m.weight(i);
        if w == T::zero() {
            continue;
        }
        for k in 0..d {
            if let Some(j) = m.forward(i, k) {
                out[i * d + k] = w * (z[i] - z[j]) * inv_h;
            }
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct DivergenceResult<T> {
    /// `div_μ(v)` on the support, zero elsewhere.
    pub div: GridFunction<T>,
    /// Max of `|(A v)_j|` over zero-weight cells.
    pub tangency_residual: T,
}

impl<T: Real> DivergenceResult<T> {
    pub fn max_abs_div(&self) -> T {
        self.div.sup_on_support()
    }
}

pub fn mu_divergence<T: Real>(v: &GridVectorField<T>) -> DivergenceResult<T> {
    let m = v.measure();
    let flux = adjoint_flux(v);
    let mut div = vec![T::zero(); m.len()];
    let mut residual = T::zero();
    for (j, &a) in flux.iter().enumerate() {
        let w = m.weight(j);
        if w > T::zero() {
            div[j] = a / w;
        } else {
            residual = residual.max(a.abs());
        }
    }
    DivergenceResult {
        div: GridFunction::new(m.clone(), div).expect("sizes agree"),
        tangency_residual: residual,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct Admissibility<T> {
    pub admissible: bool,
    pub sup_norm: T,
    pub tangency_residual: T,
    pub max_divergence: T,
}

/// Tests `|v| <= 1`, vanishing tangency flux and `|div_μ v| <= div_bound`,
/// each up to `tol`.
pub fn is_admissible<T: Real>(v: &GridVectorField<T>, div_bound: T, tol: T) -> Admissibility<T> {
    let sup_norm = v.sup_norm_on_support();
    let dv = mu_divergence(v);
    let max_divergence = dv.max_abs_div();
    let admissible = sup_norm <= T::one() + tol
        && dv.tangency_residual <= tol
        && max_divergence <= div_bound + tol;
    Admissibility {
        admissible,
        sup_norm,
        tangency_residual: dv.tangency_residual,
        max_divergence,
    }
}
