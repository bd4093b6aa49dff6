//! Dense reference solver for the dual total-variation LP.
//!
//! Every coefficient is assembled from the definitions, one unit field at a
//! time, so the oracle shares no operator code with the first-order solver
//! beyond [`adjoint_flux`]. The Euclidean unit balls are handled by outer
//! polyhedral approximation with tangent cuts (Kelley's method); the LP value
//! is an upper bound and the solution scaled back into the balls is a lower
//! bound.

use minilp::{ComparisonOp, OptimizationDirection, Problem, Variable};

use crate::calculus::{adjoint_flux, mu_divergence};
use crate::error::{Error, Result};
use crate::grid::{FieldDomain, GridFunction, GridVectorField};
use crate::tangent::FiberField;

#[derive(Debug, Clone)]
pub struct LpReport {
    /// Value of the feasible point (rescaled LP solution).
    pub value: f64,
    /// Value of the outer polyhedral relaxation.
    pub upper: f64,
    pub cut_rounds: usize,
    /// The feasible maximizer.
    pub field: GridVectorField<f64>,
}

/// The simplex works to about `1e-9` feasibility, so cuts cannot push the
/// ball violation much below that.
const REL_GAP: f64 = 1e-8;
const MAX_ROUNDS: usize = 400;

/// Solves `max sum f div_μ(v) w h^d` over `|v| <= 1`, zero tangency flux and
/// `|div_μ v| <= div_bound`. With `mask`, fields vanish off the selected
/// cells; with `fibers`, `v_i` ranges over the fiber at `i` only.
pub fn dual_tv_lp(
    f: &GridFunction<f64>,
    div_bound: f64,
    mask: Option<&[bool]>,
    fibers: Option<&FiberField<f64>>,
) -> Result<LpReport> {
    let m = f.measure().clone();
    let d = m.dim();
    let n = m.len();
    // (cell, direction) per variable
    let mut dirs: Vec<(usize, Vec<f64>)> = Vec::new();
    for i in m.support() {
        if mask.is_some_and(|mk| !mk[i]) {
            continue;
        }
        match fibers {
            Some(fb) => {
                for c in 0..fb.rank(i) {
                    dirs.push((i, fb.basis_column(i, c)));
                }
            }
            None => {
                for k in 0..d {
                    dirs.push((i, (0..d).map(|r| if r == k { 1.0 } else { 0.0 }).collect()));
                }
            }
        }
    }
    let mut lp = Problem::new(OptimizationDirection::Maximize);
    let mut rows: Vec<Vec<(Variable, f64)>> = vec![Vec::new(); n];
    let mut vars = Vec::with_capacity(dirs.len());
    for (i, dir) in &dirs {
        let mut data = vec![0.0; n * d];
        data[i * d..(i + 1) * d].copy_from_slice(dir);
        let u = GridVectorField::new(m.clone(), data, FieldDomain::AllCells)?;
        let div = mu_divergence(&u);
        let obj: f64 = m
            .support()
            .map(|j| f.get(j) * div.div.get(j) * m.cell_mass(j))
            .sum();
        let var = lp.add_var(obj, (-1.0, 1.0));
        for (j, a) in adjoint_flux(&u).into_iter().enumerate() {
            if a != 0.0 {
                rows[j].push((var, a));
            }
        }
        vars.push(var);
    }
    for (j, row) in rows.iter().enumerate() {
        if row.is_empty() {
            continue;
        }
        if m.is_support(j) {
            let b = div_bound * m.weight(j);
            lp.add_constraint(row.as_slice(), ComparisonOp::Le, b);
            lp.add_constraint(row.as_slice(), ComparisonOp::Ge, -b);
        } else {
            lp.add_constraint(row.as_slice(), ComparisonOp::Eq, 0.0);
        }
    }
    let mut blocks: Vec<(usize, Vec<usize>)> = Vec::new();
    for (p, (i, _)) in dirs.iter().enumerate() {
        match blocks.last_mut() {
            Some((c, ps)) if c == i => ps.push(p),
            _ => blocks.push((*i, vec![p])),
        }
    }
    let mut sol = lp.solve().map_err(|e| Error::LpFailure(e.to_string()))?;
    let mut rounds = 0;
    loop {
        let x: Vec<f64> = vars.iter().map(|v| sol[*v]).collect();
        let upper = sol.objective();
        let mut worst = 1.0f64;
        let mut cuts = Vec::new();
        for (_, ps) in &blocks {
            let nb = ps.iter().map(|&p| x[p] * x[p]).sum::<f64>().sqrt();
            worst = worst.max(nb);
            if nb > 1.0 + 1e-12 {
                cuts.push(ps.iter().map(|&p| (vars[p], x[p] / nb)).collect::<Vec<_>>());
            }
        }
        let value = (upper / worst).max(0.0);
        if cuts.is_empty()
            || upper - value <= REL_GAP * (1.0 + upper.abs())
            || worst - 1.0 <= REL_GAP
            || rounds >= MAX_ROUNDS
        {
            let mut data = vec![0.0; n * d];
            for ((i, dir), xp) in dirs.iter().zip(&x) {
                for r in 0..d {
                    data[i * d + r] += dir[r] * xp / worst;
                }
            }
            let field = GridVectorField::new(m.clone(), data, FieldDomain::SupportOnly)?;
            return Ok(LpReport {
                value,
                upper,
                cut_rounds: rounds,
                field,
            });
        }
        for cut in cuts {
            sol = sol
                .add_constraint(cut.as_slice(), ComparisonOp::Le, 1.0)
                .map_err(|e| Error::LpFailure(e.to_string()))?;
        }
        rounds += 1;
    }
}
