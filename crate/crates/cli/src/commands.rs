use std::fmt::Write as _;
use std::sync::Arc;

use bvgrid::calculus::{asymptotic_lipschitz, mu_divergence};
use bvgrid::derivation::{
    box_bump, derivation_modulus, leibniz_div_residual, leibniz_div_scale, pairing_lf, phi,
    Derivation,
};
use bvgrid::grid::{GridFunction, GridMeasure, GridVectorField};
use bvgrid::io::{to_json, CellTable};
use bvgrid::lp_oracle::dual_tv_lp;
use bvgrid::scenarios::{scenario_at, SCALABLE};
use bvgrid::sobolev::{default_incl_tol, w11_inclusion_check, w11_norm, SlopeEstimate};
use bvgrid::superposition::{decompose, default_min_weight, rasterize_flux, verify_marginals};
use bvgrid::tangent::{
    compute_fibers, generate_family, tangential_gradient, FamilyConfig, FiberField,
    GeneratingFamily, DEFAULT_SVD_THRESHOLD,
};
use bvgrid::tv::{
    bv_membership, default_m_schedule, eps_schedule_in_cells, tv_derivation, tv_dual,
    tv_dual_solution, tv_relaxed, CellBox, DualOptions, Formulation, RelaxMode, TVReport,
};
use serde::Serialize;
use serde_json::{json, Value};

use crate::inputs::Inputs;
use crate::{Artifact, Check, CliError, Command, Report, RunConfig};

/// Mollification scales of the default schedule, in cells.
pub const DEFAULT_EPS_CELLS: [f64; 5] = [8.0, 6.0, 4.0, 3.0, 2.0];
pub const PROBE_BUDGET: usize = 64;
/// Marginal tolerance when the field and dictionary admit a closed form.
pub const CLOSED_FORM_TOL: f64 = 1e-8;
pub const CONSERVATION_TOL: f64 = 1e-12;
pub const MODULUS_TOL: f64 = 1e-6;
/// Support size up to which every dual value is compared with the LP oracle.
pub const LP_ORACLE_MAX_CELLS: usize = 100;
pub const SUB_INSTANCE_SIDE: usize = 8;

type Dict = Vec<(GridFunction<f64>, GridFunction<f64>)>;

pub(crate) fn dispatch(
    config: &RunConfig,
    inputs: &Inputs,
) -> Result<(Report, Vec<Artifact>), CliError> {
    let mut ctx = Ctx {
        config,
        inputs,
        checks: Vec::new(),
        artifacts: Vec::new(),
        fibers: None,
    };
    let results = match config.command {
        Command::Tv => ctx.tv()?,
        Command::Fibers => ctx.fibers_cmd()?,
        Command::W11 => ctx.w11()?,
        Command::Derivation => ctx.derivation()?,
        Command::Superpose => ctx.superpose()?,
        Command::EquivalenceReport => ctx.equivalence_report()?,
    };
    let passed = ctx.checks.iter().all(|c| c.passed);
    let report = Report {
        command: config.command,
        scenario: config.scenario.clone(),
        measure: inputs.summary(),
        seed: config.seed,
        tolerances: config.tolerances.clone(),
        results,
        checks: ctx.checks,
        passed,
    };
    Ok((report, ctx.artifacts))
}

#[derive(Serialize)]
struct ComparisonTable {
    formulations: Vec<Formulation>,
    values: Vec<f64>,
    /// `|a - b| / max(|a|, |b|)`, zero when the difference is within the
    /// solver gap tolerance.
    relative_gaps: Vec<Vec<f64>>,
    max_relative_gap: f64,
}

fn relative_gap(a: f64, b: f64, gap_tol: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if (a - b).abs() <= gap_tol * (1.0 + scale) {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

impl ComparisonTable {
    fn new(reports: &[&TVReport<f64>], gap_tol: f64) -> Self {
        let values: Vec<f64> = reports.iter().map(|r| r.value).collect();
        let relative_gaps: Vec<Vec<f64>> = values
            .iter()
            .map(|&a| {
                values
                    .iter()
                    .map(|&b| relative_gap(a, b, gap_tol))
                    .collect()
            })
            .collect();
        let max_relative_gap = relative_gaps.iter().flatten().copied().fold(0.0, f64::max);
        Self {
            formulations: reports.iter().map(|r| r.formulation).collect(),
            values,
            relative_gaps,
            max_relative_gap,
        }
    }
}

/// Spread of the stabilized tail of a relaxation trace, relative to `1 + value`.
fn tail_spread(r: &TVReport<f64>) -> f64 {
    let tail = &r.trace[r.trace.len() - r.trace.len().div_ceil(3)..];
    let hi = tail.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (hi - r.value) / (1.0 + r.value)
}

/// Residual of a dual certificate: `gap / (1 + value)`, infinite when the
/// solver stopped without converging.
fn certificate(r: &TVReport<f64>) -> f64 {
    match (r.converged, r.gap) {
        (true, Some(g)) => g / (1.0 + r.value.abs()),
        _ => f64::INFINITY,
    }
}

fn sup_diff_on_support(m: &GridMeasure<f64>, a: &GridFunction<f64>, b: &GridFunction<f64>) -> f64 {
    m.support()
        .map(|i| (a.get(i) - b.get(i)).abs())
        .fold(0.0, f64::max)
}

fn central_box(m: &GridMeasure<f64>) -> (CellBox, usize) {
    let lo: Vec<isize> = m.shape().iter().map(|&n| (n / 4) as isize).collect();
    let hi: Vec<isize> = m
        .shape()
        .iter()
        .map(|&n| (3 * n).div_ceil(4).max(n / 4 + 1) as isize)
        .collect();
    let margin = (m.shape().iter().copied().min().unwrap_or(1) / 8).max(1);
    (CellBox::new(lo, hi).expect("nonempty box"), margin)
}

struct Ctx<'a> {
    config: &'a RunConfig,
    inputs: &'a Inputs,
    checks: Vec<Check>,
    artifacts: Vec<Artifact>,
    fibers: Option<Arc<FiberField<f64>>>,
}

impl Ctx<'_> {
    fn m(&self) -> &Arc<GridMeasure<f64>> {
        &self.inputs.measure
    }

    fn m_schedule(&self) -> Vec<f64> {
        if self.config.m_schedule.is_empty() {
            default_m_schedule(self.m())
        } else {
            self.config.m_schedule.clone()
        }
    }

    fn m_max(&self) -> f64 {
        *self.m_schedule().last().expect("nonempty schedule")
    }

    fn eps_schedule(&self) -> Vec<f64> {
        if self.config.eps_schedule.is_empty() {
            eps_schedule_in_cells(self.m(), &DEFAULT_EPS_CELLS)
        } else {
            self.config.eps_schedule.clone()
        }
    }

    fn dual_opts(&self) -> DualOptions<f64> {
        DualOptions {
            gap_tol: self.config.tolerances.gap_tol,
            ..DualOptions::default()
        }
    }

    fn check(&mut self, name: impl Into<String>, residual: f64, threshold: f64) {
        self.checks.push(Check::at_most(name, residual, threshold));
    }

    fn artifact(&mut self, name: &str, bytes: Vec<u8>) {
        self.artifacts.push(Artifact {
            name: name.into(),
            bytes,
        });
    }

    fn table(&mut self, name: &str, t: CellTable<f64>) -> Result<(), CliError> {
        let mut buf = Vec::new();
        t.write(&mut buf)?;
        self.artifact(name, buf);
        Ok(())
    }

    fn family(&self) -> Result<GeneratingFamily<f64>, CliError> {
        let cfg = FamilyConfig {
            tol: self.config.tolerances.tol,
            ..FamilyConfig::default()
        };
        Ok(generate_family(self.m(), &cfg)?)
    }

    fn fibers(&mut self) -> Result<Arc<FiberField<f64>>, CliError> {
        if let Some(f) = &self.fibers {
            return Ok(f.clone());
        }
        let fb = Arc::new(compute_fibers(&self.family()?, DEFAULT_SVD_THRESHOLD)?);
        self.fibers = Some(fb.clone());
        Ok(fb)
    }

    /// The builtin field of the scenario, else the DUAL maximizer of the
    /// first function at the largest divergence bound.
    fn field(&self) -> Result<(String, GridVectorField<f64>), CliError> {
        if let Some(v) = self.inputs.builtin_field() {
            return Ok(("builtin".into(), v.clone()));
        }
        let (name, f) = self.inputs.first_function()?;
        let sol = tv_dual_solution(f, self.m_max(), &self.dual_opts())?;
        Ok((format!("dual maximizer of {name}"), sol.field))
    }

    fn tv_block(&mut self, name: &str, f: &GridFunction<f64>) -> Result<Value, CliError> {
        let tol = self.config.tolerances.clone();
        let opts = self.dual_opts();
        let ms = self.m_schedule();
        let m_max = *ms.last().expect("nonempty");
        let membership = bv_membership(f, &ms, tol.stab_tol, &opts)?;
        let fb = self.fibers()?;
        let derivation = tv_derivation(f, &fb, m_max, &opts)?;
        let eps = self.eps_schedule();
        let lip = tv_relaxed(f, RelaxMode::Lip, &eps, tol.trace_tol)?;
        let smooth = tv_relaxed(f, RelaxMode::Smooth, &eps, tol.trace_tol)?;
        let dual = membership.reports.last().expect("nonempty").clone();

        for r in membership.reports.iter().chain([&derivation]) {
            let label = if r.formulation == Formulation::Dual {
                "dual"
            } else {
                "derivation"
            };
            self.check(
                format!(
                    "{name}/{label}_certificate[M={}]",
                    r.div_bound.unwrap_or(0.0)
                ),
                certificate(r),
                tol.gap_tol,
            );
        }
        self.check(
            format!("{name}/m_saturation"),
            membership.relative_increment,
            tol.stab_tol,
        );
        let table = ComparisonTable::new(&[&dual, &derivation, &lip, &smooth], tol.gap_tol);
        if self.inputs.full_support() {
            self.check(
                format!("{name}/equivalence"),
                table.max_relative_gap,
                tol.equiv_tol,
            );
        } else {
            // Mollified approximants are not recovery sequences for singular μ;
            // only the two dual formulations are compared there.
            self.check(
                format!("{name}/equivalence_dual_derivation"),
                table.relative_gaps[0][1],
                tol.equiv_tol,
            );
        }
        let lp = if self.m().support_len() <= LP_ORACLE_MAX_CELLS {
            let lp = dual_tv_lp(f, m_max, None, None)?;
            let slack = tol.gap_tol * (1.0 + lp.value.abs()) + (lp.upper - lp.value);
            self.check(
                format!("{name}/lp_oracle"),
                (dual.value - lp.value).abs(),
                slack,
            );
            Some(json!({ "value": lp.value, "upper": lp.upper, "cut_rounds": lp.cut_rounds }))
        } else {
            None
        };
        Ok(json!({
            "membership": membership,
            "reports": [dual, derivation, lip, smooth],
            "comparison": table,
            "relaxation_tail_spread": { "RELAX_LIP": tail_spread(&lip), "RELAX_SMOOTH": tail_spread(&smooth) },
            "lp_oracle": lp,
        }))
    }

    /// DUAL against the LP oracle on the coarse version of the scenario.
    fn sub_instance(&mut self, fname: &str) -> Result<Option<Value>, CliError> {
        let Some(sc) = &self.inputs.scenario else {
            return Ok(None);
        };
        if !SCALABLE.contains(&sc.name) || !sc.full_support {
            return Ok(None);
        }
        let coarse = scenario_at(sc.name, Some(SUB_INSTANCE_SIDE))?;
        let f = coarse.function(fname)?;
        let m_max = *default_m_schedule(&coarse.measure)
            .last()
            .expect("nonempty");
        let dual = tv_dual(f, m_max, &self.dual_opts())?;
        let lp = dual_tv_lp(f, m_max, None, None)?;
        let slack = self.config.tolerances.gap_tol * (1.0 + lp.value.abs()) + (lp.upper - lp.value);
        self.check(
            format!("{fname}/lp_oracle_{SUB_INSTANCE_SIDE}x{SUB_INSTANCE_SIDE}"),
            (dual.value - lp.value).abs(),
            slack,
        );
        self.check(
            format!("{fname}/dual_certificate_{SUB_INSTANCE_SIDE}x{SUB_INSTANCE_SIDE}"),
            certificate(&dual),
            self.config.tolerances.gap_tol,
        );
        Ok(Some(
            json!({ "dual": dual, "lp_value": lp.value, "lp_upper": lp.upper }),
        ))
    }

    fn w11_block(
        &mut self,
        name: &str,
        f: &GridFunction<f64>,
        table: &mut Option<CellTable<f64>>,
    ) -> Result<Value, CliError> {
        let fb = self.fibers()?;
        let tol = self.config.tolerances.clone();
        let incl_tol = tol.incl_tol.unwrap_or_else(|| default_incl_tol(f));
        let eps = self.eps_schedule();
        let norm = w11_norm(f, &fb)?;
        // Estimates are kept even when the stages do not settle: a function
        // outside W^{1,1} has no L¹ slope, yet the cellwise inclusion holds.
        let r = w11_inclusion_check(f, &fb, &eps, 2, f64::MAX, incl_tol)?;
        let mass = self.m().total_mass();
        let settled = |e: &SlopeEstimate<f64>| {
            e.increments
                .last()
                .is_none_or(|&inc| inc <= tol.trace_tol * (mass + e.slope.l1_norm()))
        };
        let stabilized = settled(&r.rs) && settled(&r.trs);
        self.check(format!("{name}/w11_inclusion"), r.violation, 0.0);
        let m = self.m().clone();
        let gaps: Vec<f64> = m
            .support()
            .map(|i| r.rs.slope.get(i) - r.trs.slope.get(i))
            .collect();
        let tangential = tangential_gradient(f, &fb)?.pointwise_norm();
        let t = table.take().unwrap_or_else(|| CellTable::new(m.clone()));
        *table = Some(
            t.function(&format!("{name}_rs"), &r.rs.slope)?
                .function(&format!("{name}_trs"), &r.trs.slope)?
                .function(&format!("{name}_lip_a"), &asymptotic_lipschitz(f))?
                .function(&format!("{name}_tangential"), &tangential)?,
        );
        Ok(json!({
            "w11_norm": norm,
            "stabilized": stabilized,
            "inclusion": r,
            "min_rs_minus_trs": gaps.iter().copied().fold(f64::INFINITY, f64::min),
            "max_rs_minus_trs": gaps.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }))
    }

    fn tv(&mut self) -> Result<Value, CliError> {
        let (name, f) = self.inputs.first_function()?.clone();
        let block = self.tv_block(&name, &f)?;
        let sol = tv_dual_solution(&f, self.m_max(), &self.dual_opts())?;
        let div = mu_divergence(&sol.field).div;
        let t = CellTable::new(self.m().clone())
            .function("f", &f)?
            .field("v", &sol.field)?
            .function("div", &div)?;
        self.table("tv_fields.csv", t)?;
        let csv = trace_csv(&[(name.as_str(), &block)]);
        self.artifact("tv_trace.csv", csv.into_bytes());
        Ok(json!({ "function": name, "tv": block }))
    }

    fn fibers_cmd(&mut self) -> Result<Value, CliError> {
        let family = self.family()?;
        let fb = Arc::new(compute_fibers(&family, DEFAULT_SVD_THRESHOLD)?);
        self.fibers = Some(fb.clone());
        let m = self.m().clone();
        let d = m.dim();
        let mut tangency: f64 = 0.0;
        let mut excess: f64 = 0.0;
        for member in family.members() {
            let dv = mu_divergence(&member.field);
            tangency = tangency.max(dv.tangency_residual);
            excess = excess.max(member.field.sup_norm_on_support() - 1.0);
        }
        let tol = self.config.tolerances.tol;
        self.check("family_tangency", tangency, tol);
        self.check("family_unit_bound", excess.max(0.0), tol);

        let mut t = CellTable::new(m.clone())
            .column("rank", (0..m.len()).map(|i| fb.rank(i) as f64).collect())?;
        for k in 0..d {
            t = t.column(
                format!("sigma_{}", k + 1),
                (0..m.len()).map(|i| fb.singular_values(i)[k]).collect(),
            )?;
        }
        for c in 0..d {
            for k in 0..d {
                let col = (0..m.len())
                    .map(|i| {
                        if c < fb.rank(i) {
                            fb.basis_column(i, c)[k]
                        } else {
                            0.0
                        }
                    })
                    .collect();
                t = t.column(format!("basis_{}_{}", c + 1, k + 1), col)?;
            }
        }
        self.table("fibers.csv", t)?;
        Ok(json!({
            "family_size": family.len(),
            "projected_members": family.members().iter().filter(|mb| mb.projected).count(),
            "max_member_div_bound": family.members().iter().map(|mb| mb.div_bound).fold(0.0, f64::max),
            "tau": fb.tau(),
            "rank_histogram": fb.rank_histogram(),
        }))
    }

    fn w11(&mut self) -> Result<Value, CliError> {
        let (name, f) = self.inputs.first_function()?.clone();
        let mut table = None;
        let block = self.w11_block(&name, &f, &mut table)?;
        if let Some(t) = table {
            self.table("slopes.csv", t)?;
        }
        Ok(json!({ "function": name, "w11": block }))
    }

    fn derivation(&mut self) -> Result<Value, CliError> {
        let (source, v) = self.field()?;
        let fb = self.fibers()?;
        let tol = self.config.tolerances.tol;
        let m = self.m().clone();
        let d = m.dim();
        let b: Derivation<f64> = phi(&v, fb.clone(), tol)?;

        // Components on the last slab of their axis carry no flux; the
        // isometry is stated for the representative without them.
        let isometry =
            sup_diff_on_support(&m, b.bound_field(), &v.without_gauge().pointwise_norm());
        let intertwining = sup_diff_on_support(&m, b.divergence(), &mu_divergence(&v).div);
        self.check("isometry", isometry, 0.0);
        self.check("intertwining", intertwining, 0.0);

        let modulus = derivation_modulus(&b, PROBE_BUDGET, self.config.seed)?;
        let above = m
            .support()
            .map(|i| modulus.get(i) - b.bound_field().get(i))
            .fold(0.0, f64::max);
        self.check("modulus_below_bound", above, tol);
        let interior =
            |i: usize| (0..d).all(|k| m.backward(i, k).is_some() && !m.is_upper_boundary(i, k));
        let cells: Vec<usize> = m
            .support()
            .filter(|&i| fb.rank(i) == d && interior(i))
            .collect();
        let interior_gap = cells
            .iter()
            .map(|&i| (b.bound_field().get(i) - modulus.get(i)).abs())
            .fold(0.0, f64::max);
        if !cells.is_empty() {
            self.check("modulus_interior_full_rank", interior_gap, MODULUS_TOL);
        }

        let f = match self.inputs.functions.first() {
            Some((_, f)) => f.clone(),
            None => GridFunction::from_fn(m.clone(), |x| x[0]),
        };
        let (bx, margin) = central_box(&m);
        let eta = box_bump(&m, &bx, margin);
        let pairing = pairing_lf(&f, &b, &bx, margin)?;
        let bf = b.apply(&f)?;
        let direct: f64 = m
            .support()
            .map(|i| eta.get(i) * bf.get(i) * m.cell_mass(i))
            .sum();
        let leibniz = leibniz_div_residual(&eta, &b)?;
        let scale = leibniz_div_scale(&eta, b.field());
        self.check("leibniz_div", leibniz, 8.0 * scale);

        let t = CellTable::new(m.clone())
            .field("v", b.field())?
            .function("div", b.divergence())?
            .function("bound", b.bound_field())?
            .function("modulus", &modulus)?
            .function("eta", &eta)?;
        self.table("derivation.csv", t)?;
        Ok(json!({
            "field": source,
            "probe_budget": PROBE_BUDGET,
            "isometry_residual": isometry,
            "intertwining_residual": intertwining,
            "modulus_excess": above,
            "interior_full_rank_cells": cells.len(),
            "modulus_interior_gap": interior_gap,
            "pairing": { "box_lo": bx.lo, "box_hi": bx.hi, "margin": margin, "value": pairing, "eta_b_f": direct },
            "leibniz_div": { "residual": leibniz, "scale": scale },
        }))
    }

    fn superpose(&mut self) -> Result<Value, CliError> {
        let (source, v) = self.field()?;
        let m = self.m().clone();
        let (closed_form, dict): (bool, Dict) =
            match (&self.inputs.scenario, self.inputs.builtin_field()) {
                (Some(sc), Some(_)) => (sc.closed_form, sc.test_dict.clone()),
                _ => {
                    let one = GridFunction::constant(m.clone(), 1.0);
                    let mut dict: Dict = (0..m.dim())
                        .map(|k| (one.clone(), GridFunction::from_fn(m.clone(), move |x| x[k])))
                        .collect();
                    dict.extend(
                        self.inputs
                            .functions
                            .iter()
                            .map(|(_, f)| (one.clone(), f.clone())),
                    );
                    (false, dict)
                }
            };
        let tol = self.config.tolerances.tol;
        let g = rasterize_flux(&v, tol)?;
        let min_weight = default_min_weight(&g);
        let pi = decompose(&g, min_weight)?;
        let fb = self.fibers()?;
        let b = phi(&v, fb, tol)?;
        let errs = verify_marginals(&pi, &b, &dict)?;
        let conservation = pi.conservation_error(&g);
        let threshold = if closed_form {
            CLOSED_FORM_TOL
        } else {
            3.0 * m.spacing()
        };
        self.check("flux_conservation", conservation, CONSERVATION_TOL);
        self.check("marginal_err1", errs.err1, threshold);
        self.check("marginal_err2", errs.err2, threshold);
        self.artifact("curves.json", to_json(&pi.curves).into_bytes());
        Ok(json!({
            "field": source,
            "closed_form": closed_form,
            "edges": g.edges().len(),
            "total_flux": g.total_flux(),
            "min_weight": min_weight,
            "paths": pi.path_count(),
            "cycles": pi.cycle_count(),
            "residual_flux": pi.residual.iter().map(|x| x.abs()).sum::<f64>(),
            "conservation_error": conservation,
            "err1": errs.err1,
            "err2": errs.err2,
        }))
    }

    fn equivalence_report(&mut self) -> Result<Value, CliError> {
        if self.inputs.functions.is_empty() {
            return Err(CliError::Usage(
                "equivalence-report needs --function or --scenario".into(),
            ));
        }
        let functions = self.inputs.functions.clone();
        let mut table = None;
        let mut blocks = Vec::new();
        for (name, f) in &functions {
            let tv = self.tv_block(name, f)?;
            let w11 = self.w11_block(name, f, &mut table)?;
            let coarse = self.sub_instance(name)?;
            blocks.push((
                name.clone(),
                json!({ "function": name, "tv": tv, "w11": w11, "coarse_lp": coarse }),
            ));
        }
        if let Some(t) = table {
            self.table("slopes.csv", t)?;
        }
        let trace: Vec<(&str, &Value)> =
            blocks.iter().map(|(n, b)| (n.as_str(), &b["tv"])).collect();
        let csv = trace_csv(&trace);
        self.artifact("tv_trace.csv", csv.into_bytes());
        Ok(json!({ "functions": blocks.into_iter().map(|(_, b)| b).collect::<Vec<_>>() }))
    }
}

/// `function,eps,relax_lip,relax_smooth` rows from embedded TV blocks.
fn trace_csv(blocks: &[(&str, &Value)]) -> String {
    let mut out = String::from("function,eps,relax_lip,relax_smooth\n");
    for (name, block) in blocks {
        let reports = &block["reports"];
        let eps = reports[2]["eps_schedule"]
            .as_array()
            .cloned()
            .unwrap_or_default();
        for (k, e) in eps.iter().enumerate() {
            let _ = writeln!(
                out,
                "{name},{},{},{}",
                e, reports[2]["trace"][k], reports[3]["trace"][k]
            );
        }
    }
    out
}
