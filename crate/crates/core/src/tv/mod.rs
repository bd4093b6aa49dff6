//! The four total-variation functionals and the localized variation measure.

mod pdhg;
pub(crate) mod problem;

pub use pdhg::DualOptions;

use rayon::prelude::*;
use serde::Serialize;

use crate::calculus::{asymptotic_lipschitz, grid_gradient, mollify};
use crate::error::{Error, Result};
use crate::grid::{GridFunction, GridMeasure, GridVectorField};
use crate::scalar::Real;
use crate::tangent::FiberField;
use problem::DualProblem;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Formulation {
    Dual,
    RelaxLip,
    RelaxSmooth,
    Derivation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RelaxMode {
    /// Integrate the asymptotic Lipschitz constant of the approximants.
    Lip,
    /// Integrate the gradient norm of the (smooth) approximants.
    Smooth,
}

#[derive(Debug, Clone, Serialize)]
pub struct TVReport<T> {
    pub formulation: Formulation,
    pub value: T,
    #[serde(rename = "M", skip_serializing_if = "Option::is_none")]
    pub div_bound: Option<T>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps_schedule: Option<Vec<T>>,
    /// Certified primal-dual gap (dual formulations).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gap: Option<T>,
    /// Per-entry values along the schedule (relaxations).
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub trace: Vec<T>,
    pub iterations: usize,
    pub converged: bool,
}

/// A dual report together with the feasible field attaining its value.
#[derive(Debug, Clone)]
pub struct DualSolution<T> {
    pub report: TVReport<T>,
    pub field: GridVectorField<T>,
}

fn run_dual<T: Real>(
    prob: &DualProblem<T>,
    formulation: Formulation,
    m_bound: T,
    opts: &DualOptions<T>,
) -> DualSolution<T> {
    let out = pdhg::solve(prob, opts);
    let field = prob.to_field(&out.x);
    DualSolution {
        report: TVReport {
            formulation,
            value: out.lower,
            div_bound: Some(m_bound),
            eps_schedule: None,
            gap: Some((out.upper - out.lower).max(T::zero())),
            trace: Vec::new(),
            iterations: out.iterations,
            converged: out.converged,
        },
        field,
    }
}

fn check_bound<T: Real>(m_bound: T) -> Result<()> {
    if m_bound > T::zero() && m_bound.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "divergence bound must be positive and finite, got {m_bound}"
        )))
    }
}

/// `sup { sum f div_μ(v) w h^d : |v| <= 1, tangent, |div_μ v| <= M }`.
pub fn tv_dual<T: Real>(
    f: &GridFunction<T>,
    m_bound: T,
    opts: &DualOptions<T>,
) -> Result<TVReport<T>> {
    tv_dual_solution(f, m_bound, opts).map(|s| s.report)
}

pub fn tv_dual_solution<T: Real>(
    f: &GridFunction<T>,
    m_bound: T,
    opts: &DualOptions<T>,
) -> Result<DualSolution<T>> {
    check_bound(m_bound)?;
    let prob = DualProblem::ambient(f, m_bound, None);
    Ok(run_dual(&prob, Formulation::Dual, m_bound, opts))
}

/// The dual problem over derivations: fields restricted to the fibers, i.e.
/// `v = Φ⁻¹(b)` with `|b| <= 1` and `|div b| <= M`.
pub fn tv_derivation<T: Real>(
    f: &GridFunction<T>,
    fibers: &FiberField<T>,
    m_bound: T,
    opts: &DualOptions<T>,
) -> Result<TVReport<T>> {
    tv_derivation_solution(f, fibers, m_bound, opts).map(|s| s.report)
}

pub fn tv_derivation_solution<T: Real>(
    f: &GridFunction<T>,
    fibers: &FiberField<T>,
    m_bound: T,
    opts: &DualOptions<T>,
) -> Result<DualSolution<T>> {
    check_bound(m_bound)?;
    f.check_grid(fibers.measure())?;
    let prob = DualProblem::fibered(f, fibers, m_bound);
    Ok(run_dual(&prob, Formulation::Derivation, m_bound, opts))
}

/// Relaxation along `f_ε = mollify(f, ε)`: the value is the minimum over the
/// last third of the schedule.
pub fn tv_relaxed<T: Real>(
    f: &GridFunction<T>,
    mode: RelaxMode,
    eps_schedule: &[T],
    trace_tol: T,
) -> Result<TVReport<T>> {
    if eps_schedule.is_empty() {
        return Err(Error::InvalidArgument("empty eps schedule".into()));
    }
    if eps_schedule.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidArgument(
            "eps schedule must be strictly decreasing".into(),
        ));
    }
    let m = f.measure();
    let trace = eps_schedule
        .par_iter()
        .map(|&eps| -> Result<T> {
            let fe = mollify(f, eps)?;
            let density = match mode {
                RelaxMode::Lip => asymptotic_lipschitz(&fe),
                RelaxMode::Smooth => grid_gradient(&fe).pointwise_norm(),
            };
            Ok((0..m.len()).fold(T::zero(), |a, i| a + density.get(i) * m.cell_mass(i)))
        })
        .collect::<Result<Vec<T>>>()?;
    let tail = &trace[trace.len() - trace.len().div_ceil(3)..];
    let value = tail.iter().copied().fold(T::infinity(), T::min);
    let spread = tail.iter().copied().fold(T::neg_infinity(), T::max) - value;
    Ok(TVReport {
        formulation: match mode {
            RelaxMode::Lip => Formulation::RelaxLip,
            RelaxMode::Smooth => Formulation::RelaxSmooth,
        },
        value,
        div_bound: None,
        eps_schedule: Some(eps_schedule.to_vec()),
        gap: None,
        iterations: trace.len(),
        converged: spread <= trace_tol * (T::one() + value),
        trace,
    })
}

/// Schedule `ε_k = factor_k h` for the given multiples of the spacing.
pub fn eps_schedule_in_cells<T: Real>(m: &GridMeasure<T>, multiples: &[f64]) -> Vec<T> {
    multiples.iter().map(|&c| T::lit(c) * m.spacing()).collect()
}

/// Half-open cell box `[lo, hi)`; may reach past the grid.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CellBox {
    pub lo: Vec<isize>,
    pub hi: Vec<isize>,
}

impl CellBox {
    pub fn new(lo: Vec<isize>, hi: Vec<isize>) -> Result<Self> {
        if lo.len() != hi.len() || lo.iter().zip(&hi).any(|(a, b)| a >= b) {
            return Err(Error::InvalidArgument(format!("bad box {lo:?}..{hi:?}")));
        }
        Ok(Self { lo, hi })
    }

    /// The whole grid, exactly.
    pub fn grid<T: Real>(m: &GridMeasure<T>) -> Self {
        Self {
            lo: vec![0; m.dim()],
            hi: m.shape().iter().map(|&n| n as isize).collect(),
        }
    }

    pub fn dilate(&self, cells: usize) -> Self {
        let c = cells as isize;
        Self {
            lo: self.lo.iter().map(|x| x - c).collect(),
            hi: self.hi.iter().map(|x| x + c).collect(),
        }
    }

    pub fn contains(&self, idx: &[isize]) -> bool {
        idx.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(x, (a, b))| a <= x && x < b)
    }

    /// Grid cells inside the box.
    pub fn mask<T: Real>(&self, m: &GridMeasure<T>) -> Vec<bool> {
        (0..m.len())
            .map(|i| {
                let idx: Vec<isize> = m.multi_index(i).into_iter().map(|x| x as isize).collect();
                self.contains(&idx)
            })
            .collect()
    }
}

/// Open set `Ω` as a union of cell boxes; fields must vanish within
/// `margin` cells (Chebyshev) of its complement.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct OpenRegion {
    pub boxes: Vec<CellBox>,
    pub margin: usize,
}

impl OpenRegion {
    pub fn new(boxes: Vec<CellBox>, margin: usize) -> Result<Self> {
        if margin < 1 {
            return Err(Error::InvalidArgument(
                "margin must be at least one cell".into(),
            ));
        }
        if boxes.is_empty() {
            return Err(Error::EmptyRegion);
        }
        Ok(Self { boxes, margin })
    }

    /// A region whose eroded core is the whole grid.
    pub fn containing<T: Real>(m: &GridMeasure<T>, margin: usize) -> Self {
        Self {
            boxes: vec![CellBox::grid(m).dilate(margin)],
            margin,
        }
    }

    fn contains(&self, idx: &[isize]) -> bool {
        self.boxes.iter().any(|b| b.contains(idx))
    }

    /// Cells whose whole `margin`-neighborhood lies in `Ω`. Space beyond the
    /// grid counts as outside unless a box covers it.
    pub fn eroded_mask<T: Real>(&self, m: &GridMeasure<T>) -> Vec<bool> {
        let d = m.dim();
        let r = self.margin as isize;
        let side = (2 * r + 1) as usize;
        let offsets: Vec<Vec<isize>> = (0..side.pow(d as u32))
            .map(|mut s| {
                (0..d)
                    .map(|_| {
                        let o = (s % side) as isize - r;
                        s /= side;
                        o
                    })
                    .collect()
            })
            .collect();
        (0..m.len())
            .map(|i| {
                let idx = m.multi_index(i);
                offsets.iter().all(|o| {
                    let p: Vec<isize> = idx.iter().zip(o).map(|(&x, &y)| x as isize + y).collect();
                    self.contains(&p)
                })
            })
            .collect()
    }
}

/// Dual problem over fields supported in the eroded region.
pub fn tv_localized<T: Real>(
    f: &GridFunction<T>,
    omega: &OpenRegion,
    m_bound: T,
    opts: &DualOptions<T>,
) -> Result<TVReport<T>> {
    check_bound(m_bound)?;
    let m = f.measure();
    let mask = omega.eroded_mask(m);
    if !m.support().any(|i| mask[i]) {
        return Err(Error::EmptyRegion);
    }
    let prob = DualProblem::ambient(f, m_bound, Some(&mask));
    Ok(run_dual(&prob, Formulation::Dual, m_bound, opts).report)
}

/// Default neighborhood schedule for [`tv_measure_on_box`], in cells.
pub const DEFAULT_DILATIONS: [usize; 4] = [8, 4, 2, 1];

/// `|D_μ f|(B) = inf { |D_μ f|(Ω) : B ⊆ Ω }` over the box neighborhoods
/// `Ω_s = B` dilated by `s` cells (margin one), `s` from `dilations`.
pub fn tv_measure_on_box<T: Real>(
    f: &GridFunction<T>,
    b: &CellBox,
    m_bound: T,
    dilations: &[usize],
    opts: &DualOptions<T>,
) -> Result<T> {
    if dilations.is_empty() || dilations.contains(&0) {
        return Err(Error::InvalidArgument("dilations must be positive".into()));
    }
    let values = dilations
        .par_iter()
        .map(|&s| {
            match tv_localized(
                f,
                &OpenRegion {
                    boxes: vec![b.dilate(s)],
                    margin: 1,
                },
                m_bound,
                opts,
            ) {
                Ok(r) => Ok(r.value),
                Err(Error::EmptyRegion) => Ok(T::zero()),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<Vec<T>>>()?;
    Ok(values.into_iter().fold(T::infinity(), T::min))
}

#[derive(Debug, Clone, Serialize)]
pub struct Membership<T> {
    pub member: bool,
    pub value: T,
    pub relative_increment: T,
    pub reports: Vec<TVReport<T>>,
}

/// M-sweep of [`tv_dual`]: `f` is declared BV when the last relative increment
/// is below `stab_tol`.
pub fn bv_membership<T: Real>(
    f: &GridFunction<T>,
    m_schedule: &[T],
    stab_tol: T,
    opts: &DualOptions<T>,
) -> Result<Membership<T>> {
    if m_schedule.len() < 2 || m_schedule.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument(
            "M schedule must be increasing with at least two entries".into(),
        ));
    }
    let reports = m_schedule
        .par_iter()
        .map(|&mb| tv_dual(f, mb, opts))
        .collect::<Result<Vec<_>>>()?;
    let a = reports[reports.len() - 2].value;
    let b = reports[reports.len() - 1].value;
    let relative_increment = (b - a).abs() / (T::one() + b.abs());
    Ok(Membership {
        member: relative_increment < stab_tol,
        value: b,
        relative_increment,
        reports,
    })
}

/// Default M-sweep in units of `1/h`.
pub fn default_m_schedule<T: Real>(m: &GridMeasure<T>) -> Vec<T> {
    [0.25, 1.0, 4.0, 16.0]
        .iter()
        .map(|&c| T::lit(c) / m.spacing())
        .collect()
}
