//! Estimation of the measure-tangent bundle.
//!
//! A generating family of admissible fields is built by regularized least
//! squares around localized bumps; the fiber at a support cell is the span
//! of the member values there, read off from the per-cell Gram matrix.

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::calculus::{adjoint_flux_transpose, bump_profile, flux_of, is_admissible};
use crate::error::{Error, Result};
use crate::grid::{FieldDomain, GridFunction, GridMeasure, GridVectorField};
use crate::linalg::{conjugate_gradient, symmetric_eigen};
use crate::scalar::Real;

/// Default relative singular-value threshold.
pub const DEFAULT_SVD_THRESHOLD: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct FamilyConfig<T> {
    /// Bump radius in cells.
    pub bump_radius: T,
    /// Distance between bump centers, in cells.
    pub stride: usize,
    /// Coordinate directions to use; empty means all.
    pub directions: Vec<usize>,
    /// Weight `λ` of the divergence penalty.
    pub div_penalty: T,
    /// Admissibility tolerance; members above it are projected.
    pub tol: T,
    pub max_iter: usize,
}

impl<T: Real> Default for FamilyConfig<T> {
    fn default() -> Self {
        Self {
            bump_radius: T::lit(3.0),
            stride: 4,
            directions: Vec::new(),
            div_penalty: T::one(),
            tol: T::lit(crate::calculus::DEFAULT_ADMISSIBILITY_TOL),
            max_iter: 50_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FamilyMember<T> {
    pub field: GridVectorField<T>,
    /// Attained `max |div_μ|`, the bound the member is admissible for.
    pub div_bound: T,
    pub direction: usize,
    /// Flat index of the bump center.
    pub center: usize,
    /// Whether the exact tangency projection was needed.
    pub projected: bool,
}

#[derive(Debug, Clone)]
pub struct GeneratingFamily<T> {
    measure: Arc<GridMeasure<T>>,
    members: Vec<FamilyMember<T>>,
    tol: T,
}

impl<T: Real> GeneratingFamily<T> {
    /// Wraps externally built fields, checking each against `tol`.
    pub fn from_fields(
        measure: Arc<GridMeasure<T>>,
        fields: Vec<GridVectorField<T>>,
        tol: T,
    ) -> Result<Self> {
        let mut members = Vec::with_capacity(fields.len());
        for (n, field) in fields.into_iter().enumerate() {
            field.check_grid(&measure)?;
            let cert = is_admissible(&field, T::max_value(), tol);
            if !cert.admissible {
                return Err(Error::NotAdmissible(format!(
                    "member {n}: sup {} tangency {}",
                    cert.sup_norm, cert.tangency_residual
                )));
            }
            members.push(FamilyMember {
                field,
                div_bound: cert.max_divergence,
                direction: 0,
                center: 0,
                projected: false,
            });
        }
        Ok(Self {
            measure,
            members,
            tol,
        })
    }

    pub fn measure(&self) -> &Arc<GridMeasure<T>> {
        &self.measure
    }

    pub fn members(&self) -> &[FamilyMember<T>] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn tol(&self) -> T {
        self.tol
    }
}

/// Bump centers along one axis: every `stride` cells, starting half a stride in.
fn lattice_axis(n: usize, stride: usize) -> Vec<usize> {
    let start = (stride / 2).min((n - 1) / 2);
    (start..n).step_by(stride.max(1)).collect()
}

fn bump_centers<T: Real>(m: &GridMeasure<T>, stride: usize) -> Vec<usize> {
    let axes: Vec<Vec<usize>> = m.shape().iter().map(|&n| lattice_axis(n, stride)).collect();
    let mut out = vec![Vec::new()];
    for axis in &axes {
        out = out
            .into_iter()
            .flat_map(|prefix: Vec<usize>| {
                axis.iter().map(move |&c| {
                    let mut p = prefix.clone();
                    p.push(c);
                    p
                })
            })
            .collect();
    }
    out.iter().map(|idx| m.flat(idx)).collect()
}

/// Smooth bump `ρ(|x - x_c| / (r h))` sampled at cell centers.
pub fn bump_function<T: Real>(
    m: &Arc<GridMeasure<T>>,
    center: usize,
    radius_cells: T,
) -> GridFunction<T> {
    let c = m.center(center);
    let r = radius_cells * m.spacing();
    GridFunction::from_fn(m.clone(), |x| {
        let dist = x
            .iter()
            .zip(&c)
            .fold(T::zero(), |a, (&p, &q)| a + (p - q) * (p - q))
            .sqrt();
        bump_profile(dist / r)
    })
}

/// Mask of the variables `(i, k)` visible to the calculus: support cells off
/// the last slab of axis `k`.
pub(crate) fn active_mask<T: Real>(m: &GridMeasure<T>) -> Vec<bool> {
    let d = m.dim();
    (0..m.len() * d)
        .map(|ik| m.is_support(ik / d) && !m.is_upper_boundary(ik / d, ik % d))
        .collect()
}

/// Orthogonal projection onto the fields with zero flux on every
/// zero-weight cell. Each variable enters at most one such constraint, so the
/// projection is computed row by row in closed form. The result is
/// support-only with gauge entries zeroed.
pub fn project_tangent<T: Real>(v: &GridVectorField<T>) -> GridVectorField<T> {
    let m = v.measure();
    let d = m.dim();
    let mut data = v.without_gauge().to_support_only().into_data();
    for j in 0..m.len() {
        if m.is_support(j) {
            continue;
        }
        let mut incoming: Vec<(usize, T)> = Vec::with_capacity(d);
        for k in 0..d {
            if let Some(i) = m.backward(j, k) {
                if m.is_support(i) {
                    incoming.push((i * d + k, m.weight(i)));
                }
            }
        }
        let aa: T = incoming.iter().map(|(_, a)| *a * *a).sum();
        if aa == T::zero() {
            continue;
        }
        let ax: T = incoming.iter().map(|&(ik, a)| a * data[ik]).sum();
        for &(ik, a) in &incoming {
            data[ik] -= a * ax / aa;
        }
    }
    GridVectorField::new(m.clone(), data, FieldDomain::SupportOnly).expect("sizes agree")
}

/// Builds the generating family: for every direction `e_k` and bump `η_c`
/// the minimizer of
///
/// ```text
/// |A v|^2_{w=0} + λ |div_μ v|^2_{L²_μ} + |v - η_c e_k|^2_{L²_μ}
/// ```
///
/// scaled to unit sup-norm and projected onto exact tangency if needed.
pub fn generate_family<T: Real>(
    mu: &Arc<GridMeasure<T>>,
    config: &FamilyConfig<T>,
) -> Result<GeneratingFamily<T>> {
    let m = mu.as_ref();
    let d = m.dim();
    let h = m.spacing();
    let lambda = config.div_penalty;
    let mask = active_mask(m);
    // Per-cell weight of the squared flux: λ / w on the support, 1 elsewhere.
    let row_weight: Vec<T> = (0..m.len())
        .map(|j| {
            if m.is_support(j) {
                lambda / m.weight(j)
            } else {
                T::one()
            }
        })
        .collect();
    let inv_diag: Vec<T> = (0..m.len() * d)
        .map(|ik| {
            if !mask[ik] {
                return T::zero();
            }
            let (i, k) = (ik / d, ik % d);
            let a = m.weight(i) / h;
            let j = m
                .forward(i, k)
                .expect("active variables have a forward neighbor");
            T::one() / (a * a * (row_weight[i] + row_weight[j]) + m.weight(i))
        })
        .collect();
    let apply = |x: &[T], y: &mut [T]| {
        let mut z = flux_of(m, x);
        for (zj, rw) in z.iter_mut().zip(&row_weight) {
            *zj *= *rw;
        }
        let atz = adjoint_flux_transpose(m, &z);
        for ik in 0..x.len() {
            y[ik] = if mask[ik] {
                atz[ik] + m.weight(ik / d) * x[ik]
            } else {
                T::zero()
            };
        }
    };
    let directions: Vec<usize> = if config.directions.is_empty() {
        (0..d).collect()
    } else {
        config.directions.clone()
    };
    if let Some(&k) = directions.iter().find(|&&k| k >= d) {
        return Err(Error::InvalidArgument(format!(
            "direction {k} in dimension {d}"
        )));
    }
    let centers = bump_centers(m, config.stride);
    let jobs: Vec<(usize, usize)> = directions
        .iter()
        .flat_map(|&k| centers.iter().map(move |&c| (k, c)))
        .collect();
    let rel_tol = T::lit(1e-10).max(T::epsilon() * T::lit(100.0));
    let members = jobs
        .par_iter()
        .map(|&(k, c)| -> Result<FamilyMember<T>> {
            let eta = bump_function(mu, c, config.bump_radius);
            let mut b = vec![T::zero(); m.len() * d];
            for i in 0..m.len() {
                b[i * d + k] = m.weight(i) * eta.get(i);
            }
            let sol = conjugate_gradient(apply, &inv_diag, &b, rel_tol, config.max_iter)?;
            let mut field = GridVectorField::new(mu.clone(), sol.x, FieldDomain::SupportOnly)?;
            let mut projected = false;
            if is_admissible(&field, T::max_value(), config.tol).tangency_residual > config.tol {
                field = project_tangent(&field);
                projected = true;
            }
            let sup = field.sup_norm_on_support();
            if sup > T::zero() {
                field = field.scale(T::one() / sup);
            }
            let cert = is_admissible(&field, T::max_value(), config.tol);
            if cert.tangency_residual > config.tol {
                return Err(Error::SolverDiverged {
                    iterations: sol.iterations,
                    residual: cert.tangency_residual.as_f64(),
                });
            }
            Ok(FamilyMember {
                field,
                div_bound: cert.max_divergence,
                direction: k,
                center: c,
                projected,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GeneratingFamily {
        measure: mu.clone(),
        members,
        tol: config.tol,
    })
}

/// Per-cell orthonormal bases of the estimated tangent spaces.
#[derive(Debug, Clone, PartialEq)]
pub struct FiberField<T> {
    measure: Arc<GridMeasure<T>>,
    tau: T,
    ranks: Vec<usize>,
    sigmas: Vec<T>,
    bases: Vec<T>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RankHistogram {
    /// `counts[k]` = number of support cells with rank `k`.
    pub counts: Vec<usize>,
}

impl<T: Real> FiberField<T> {
    /// `T_μ(x) = R^d` on the whole support.
    pub fn full_rank(measure: Arc<GridMeasure<T>>) -> Self {
        let d = measure.dim();
        let n = measure.len();
        let mut ranks = vec![0; n];
        let mut sigmas = vec![T::zero(); n * d];
        let mut bases = vec![T::zero(); n * d * d];
        for i in measure.support() {
            ranks[i] = d;
            for k in 0..d {
                sigmas[i * d + k] = T::one();
                bases[i * d * d + k * d + k] = T::one();
            }
        }
        Self {
            measure,
            tau: T::lit(DEFAULT_SVD_THRESHOLD),
            ranks,
            sigmas,
            bases,
        }
    }

    pub fn measure(&self) -> &Arc<GridMeasure<T>> {
        &self.measure
    }

    pub fn tau(&self) -> T {
        self.tau
    }

    pub fn dim(&self) -> usize {
        self.measure.dim()
    }

    pub fn rank(&self, i: usize) -> usize {
        self.ranks[i]
    }

    pub fn ranks(&self) -> &[usize] {
        &self.ranks
    }

    /// Non-increasing singular values at cell `i`.
    pub fn singular_values(&self, i: usize) -> &[T] {
        let d = self.dim();
        &self.sigmas[i * d..(i + 1) * d]
    }

    /// Row-major `d × d` matrix whose first `rank(i)` columns span the fiber.
    pub fn basis_matrix(&self, i: usize) -> &[T] {
        let d = self.dim();
        &self.bases[i * d * d..(i + 1) * d * d]
    }

    pub fn basis_column(&self, i: usize, c: usize) -> Vec<T> {
        let d = self.dim();
        let b = self.basis_matrix(i);
        (0..d).map(|r| b[r * d + c]).collect()
    }

    /// Coefficients `Bᵢᵀ x` in the fiber basis.
    pub fn coefficients(&self, i: usize, x: &[T]) -> Vec<T> {
        let d = self.dim();
        let b = self.basis_matrix(i);
        (0..self.ranks[i])
            .map(|c| (0..d).fold(T::zero(), |a, r| a + b[r * d + c] * x[r]))
            .collect()
    }

    /// `Bᵢ y` for fiber coefficients `y`.
    pub fn embed(&self, i: usize, y: &[T]) -> Vec<T> {
        let d = self.dim();
        let b = self.basis_matrix(i);
        (0..d)
            .map(|r| {
                y.iter()
                    .enumerate()
                    .fold(T::zero(), |a, (c, &yc)| a + b[r * d + c] * yc)
            })
            .collect()
    }

    /// Orthogonal projection `Bᵢ Bᵢᵀ x`.
    pub fn project(&self, i: usize, x: &[T]) -> Vec<T> {
        self.embed(i, &self.coefficients(i, x))
    }

    pub fn rank_histogram(&self) -> RankHistogram {
        let mut counts = vec![0; self.dim() + 1];
        for i in self.measure.support() {
            counts[self.ranks[i]] += 1;
        }
        RankHistogram { counts }
    }

    /// Projects every support value of `v` onto the fibers.
    pub fn project_field(&self, v: &GridVectorField<T>) -> Result<GridVectorField<T>> {
        v.check_grid(&self.measure)?;
        let d = self.dim();
        let mut data = vec![T::zero(); self.measure.len() * d];
        for i in self.measure.support() {
            data[i * d..(i + 1) * d].copy_from_slice(&self.project(i, v.at(i)));
        }
        GridVectorField::new(self.measure.clone(), data, FieldDomain::SupportOnly)
    }
}

/// Stacks the member values at each support cell and reads off the left
/// singular vectors through the eigen-decomposition of the Gram matrix.
pub fn compute_fibers<T: Real>(family: &GeneratingFamily<T>, tau: T) -> Result<FiberField<T>> {
    if family.is_empty() {
        return Err(Error::InvalidArgument("empty generating family".into()));
    }
    let m = family.measure().clone();
    let d = m.dim();
    let per_cell: Vec<(usize, Vec<T>, Vec<T>)> = (0..m.len())
        .into_par_iter()
        .map(|i| {
            if !m.is_support(i) {
                return (0, vec![T::zero(); d], vec![T::zero(); d * d]);
            }
            let mut gram = vec![T::zero(); d * d];
            for member in family.members() {
                let x = member.field.at(i);
                for r in 0..d {
                    for c in 0..d {
                        gram[r * d + c] += x[r] * x[c];
                    }
                }
            }
            let (vals, vecs) = symmetric_eigen(&gram, d);
            let sig: Vec<T> = vals.iter().map(|&l| l.max(T::zero()).sqrt()).collect();
            let cut = tau * sig[0];
            let rank = if sig[0] > T::zero() {
                sig.iter().filter(|&&s| s > cut).count()
            } else {
                0
            };
            (rank, sig, vecs)
        })
        .collect();
    let mut ranks = Vec::with_capacity(m.len());
    let mut sigmas = Vec::with_capacity(m.len() * d);
    let mut bases = Vec::with_capacity(m.len() * d * d);
    for (r, s, b) in per_cell {
        ranks.push(r);
        sigmas.extend(s);
        bases.extend(b);
    }
    Ok(FiberField {
        measure: m,
        tau,
        ranks,
        sigmas,
        bases,
    })
}

/// `∇_μ f = Bᵢ Bᵢᵀ (G f)ᵢ` on the support.
pub fn tangential_gradient<T: Real>(
    f: &GridFunction<T>,
    fibers: &FiberField<T>,
) -> Result<GridVectorField<T>> {
    f.check_grid(fibers.measure())?;
    fibers.project_field(&crate::calculus::grid_gradient(f))
}
