//! W^{1,1} calculus: tangential norm, relaxed slopes and the inclusion check.

use rayon::prelude::*;
use serde::Serialize;

use crate::calculus::{asymptotic_lipschitz, global_lipschitz, mollify};
use crate::error::{Error, Result};
use crate::grid::GridFunction;
use crate::scalar::Real;
use crate::tangent::{tangential_gradient, FiberField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SlopeKind {
    /// Relaxed slope: limits of `lip_a(f_n)`.
    Rs,
    /// Tangential relaxed slope: limits of `|∇_μ f_n|`.
    Trs,
}

#[derive(Debug, Clone, Serialize)]
pub struct SlopeEstimate<T> {
    #[serde(skip)]
    pub slope: GridFunction<T>,
    pub kind: SlopeKind,
    pub eps_schedule: Vec<T>,
    /// Averaging weights applied at each stage (uniform over the tail).
    pub stage_weights: Vec<Vec<T>>,
    /// `L¹_μ` distance between consecutive stage averages.
    pub increments: Vec<T>,
}

/// `‖f‖_{L¹_μ} + ‖∇_μ f‖_{L¹_μ}`.
pub fn w11_norm<T: Real>(f: &GridFunction<T>, fibers: &FiberField<T>) -> Result<T> {
    let g = tangential_gradient(f, fibers)?;
    Ok(f.l1_norm() + g.pointwise_norm().l1_norm())
}

fn density<T: Real>(
    f: &GridFunction<T>,
    kind: SlopeKind,
    fibers: &FiberField<T>,
) -> Result<GridFunction<T>> {
    match kind {
        SlopeKind::Rs => Ok(asymptotic_lipschitz(f)),
        SlopeKind::Trs => Ok(tangential_gradient(f, fibers)?.pointwise_norm()),
    }
}

/// Relaxed slope along `f_ε = mollify(f, ε)` for the given schedule.
///
/// Stage `s` of `stages` keeps the first `⌈s N / stages⌉` approximants and
/// averages the densities of the last half of them with uniform weights.
/// The stage averages must be Cauchy in `L¹_μ`: the last increment may not
/// exceed `trace_tol · (μ(R^d) + ‖average‖)`.
pub fn relaxed_slope<T: Real>(
    f: &GridFunction<T>,
    kind: SlopeKind,
    fibers: &FiberField<T>,
    eps_schedule: &[T],
    stages: usize,
    trace_tol: T,
) -> Result<SlopeEstimate<T>> {
    if eps_schedule.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidArgument(
            "eps schedule must be strictly decreasing".into(),
        ));
    }
    let seq = eps_schedule
        .par_iter()
        .map(|&e| mollify(f, e))
        .collect::<Result<Vec<_>>>()?;
    let mut est = relaxed_slope_of_sequence(&seq, kind, fibers, stages, trace_tol)?;
    est.eps_schedule = eps_schedule.to_vec();
    Ok(est)
}

/// [`relaxed_slope`] for an explicit approximating sequence.
pub fn relaxed_slope_of_sequence<T: Real>(
    seq: &[GridFunction<T>],
    kind: SlopeKind,
    fibers: &FiberField<T>,
    stages: usize,
    trace_tol: T,
) -> Result<SlopeEstimate<T>> {
    let n = seq.len();
    if n == 0 || stages == 0 || stages > n {
        return Err(Error::InvalidArgument(format!(
            "{stages} stages over {n} approximants"
        )));
    }
    let dens = seq
        .par_iter()
        .map(|g| density(g, kind, fibers))
        .collect::<Result<Vec<_>>>()?;
    let m = fibers.measure().clone();
    let mass = m.total_mass();
    let mut stage_weights = Vec::with_capacity(stages);
    let mut increments = Vec::new();
    let mut prev: Option<GridFunction<T>> = None;
    for s in 1..=stages {
        let upto = (s * n).div_ceil(stages);
        let take = upto.div_ceil(2);
        let wgt = T::one() / T::from_usize_lossy(take);
        let mut avg = vec![T::zero(); m.len()];
        for g in &dens[upto - take..upto] {
            for (a, &x) in avg.iter_mut().zip(g.values()) {
                *a += wgt * x;
            }
        }
        stage_weights.push(vec![wgt; take]);
        let avg = GridFunction::new(m.clone(), avg)?;
        if let Some(p) = &prev {
            increments.push(avg.zip_map(p, |a, b| a - b)?.l1_norm());
        }
        prev = Some(avg);
    }
    let slope = prev.expect("at least one stage");
    if let Some(&last) = increments.last() {
        let tol = trace_tol * (mass + slope.l1_norm());
        if last > tol {
            return Err(Error::NotStabilized {
                increment: last.as_f64(),
                tolerance: tol.as_f64(),
            });
        }
    }
    Ok(SlopeEstimate {
        slope,
        kind,
        eps_schedule: Vec::new(),
        stage_weights,
        increments,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct InclusionReport<T> {
    pub rs: SlopeEstimate<T>,
    pub trs: SlopeEstimate<T>,
    pub incl_tol: T,
    pub pointwise_ok: bool,
    /// `max (trs - rs - incl_tol)^+` over the support.
    pub violation: T,
}

/// Default inclusion tolerance `10 h Lip(f)`.
pub fn default_incl_tol<T: Real>(f: &GridFunction<T>) -> T {
    T::lit(10.0) * f.measure().spacing() * global_lipschitz(f)
}

/// Checks `|∇_μ f|_{trs} <= |∇ f|_{rs} + incl_tol` cellwise on the support.
pub fn w11_inclusion_check<T: Real>(
    f: &GridFunction<T>,
    fibers: &FiberField<T>,
    eps_schedule: &[T],
    stages: usize,
    trace_tol: T,
    incl_tol: T,
) -> Result<InclusionReport<T>> {
    let rs = relaxed_slope(f, SlopeKind::Rs, fibers, eps_schedule, stages, trace_tol)?;
    let trs = relaxed_slope(f, SlopeKind::Trs, fibers, eps_schedule, stages, trace_tol)?;
    let m = fibers.measure();
    let violation = m
        .support()
        .map(|i| (trs.slope.get(i) - rs.slope.get(i) - incl_tol).max(T::zero()))
        .fold(T::zero(), T::max);
    Ok(InclusionReport {
        rs,
        trs,
        incl_tol,
        pointwise_ok: violation == T::zero(),
        violation,
    })
}

/// `max_i |∇_μ(fg) - g ∇_μ f - f ∇_μ g|` over the support.
pub fn leibniz_check<T: Real>(
    f: &GridFunction<T>,
    g: &GridFunction<T>,
    fibers: &FiberField<T>,
) -> Result<T> {
    let fg = f.zip_map(g, |a, b| a * b)?;
    let dfg = tangential_gradient(&fg, fibers)?;
    let df = tangential_gradient(f, fibers)?;
    let dg = tangential_gradient(g, fibers)?;
    let m = fibers.measure();
    let d = m.dim();
    let mut worst = T::zero();
    for i in m.support() {
        let r = (0..d).fold(T::zero(), |a, k| {
            let e =
                dfg.component(i, k) - g.get(i) * df.component(i, k) - f.get(i) * dg.component(i, k);
            a + e * e
        });
        worst = worst.max(r.sqrt());
    }
    Ok(worst)
}
