//! Discrete superposition: decomposition of a field's flux into weighted
//! paths and cycles on the grid graph.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::sync::Arc;

use serde::Serialize;

use crate::calculus::is_admissible;
use crate::derivation::Derivation;
use crate::error::{Error, Result};
use crate::grid::{FieldDomain, GridFunction, GridMeasure, GridVectorField};
use crate::scalar::Real;

/// Directed edge of the rasterized flux.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FluxEdge<T> {
    pub from: usize,
    pub to: usize,
    pub flux: T,
}

/// Edge fluxes on the axis-neighbor graph. Every cell owns the edge to its
/// forward neighbor along each axis; the sign of `w_i v_{i,k}` fixes the
/// direction.
#[derive(Debug, Clone)]
pub struct FluxGraph<T> {
    measure: Arc<GridMeasure<T>>,
    edges: Vec<FluxEdge<T>>,
    imbalance: Vec<T>,
}

impl<T: Real> FluxGraph<T> {
    pub fn measure(&self) -> &Arc<GridMeasure<T>> {
        &self.measure
    }

    pub fn edges(&self) -> &[FluxEdge<T>] {
        &self.edges
    }

    /// `outflux - influx` per cell.
    pub fn imbalance(&self) -> &[T] {
        &self.imbalance
    }

    pub fn total_flux(&self) -> T {
        self.edges.iter().map(|e| e.flux).sum()
    }
}

/// Edge flux `w_i v_{i,k} h^{d-1}` on the edge `(i, i + e_k)`.
pub fn rasterize_flux<T: Real>(v: &GridVectorField<T>, tol: T) -> Result<FluxGraph<T>> {
    let cert = is_admissible(v, T::max_value(), tol);
    if !cert.admissible {
        return Err(Error::NotAdmissible(format!(
            "sup norm {}, tangency residual {}",
            cert.sup_norm, cert.tangency_residual
        )));
    }
    let m = v.measure().clone();
    let d = m.dim();
    let hd1 = m.spacing().powi(d as i32 - 1);
    let mut edges = Vec::new();
    let mut imbalance = vec![T::zero(); m.len()];
    for i in m.support() {
        for k in 0..d {
            let Some(j) = m.forward(i, k) else { continue };
            let phi = m.weight(i) * v.component(i, k) * hd1;
            if phi == T::zero() {
                continue;
            }
            let (from, to) = if phi > T::zero() { (i, j) } else { (j, i) };
            let flux = phi.abs();
            imbalance[from] += flux;
            imbalance[to] -= flux;
            edges.push(FluxEdge { from, to, flux });
        }
    }
    Ok(FluxGraph {
        measure: m,
        edges,
        imbalance,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CurveKind {
    Path,
    Cycle,
}

/// Polyline through cell centers, traversed at constant speed over `[0, 1]`.
#[derive(Debug, Clone, Serialize)]
pub struct Curve<T> {
    pub kind: CurveKind,
    pub weight: T,
    /// Visited cells; a cycle repeats its first cell at the end.
    pub nodes: Vec<usize>,
    /// Edge indices into the flux graph, one per segment.
    #[serde(skip)]
    pub edges: Vec<usize>,
    pub length: T,
}

impl<T: Real> Curve<T> {
    /// Constant speed `|γ̇| = length`.
    pub fn speed(&self) -> T {
        self.length
    }

    /// Segment `s` is traversed for `t ∈ [s/n, (s+1)/n]`.
    pub fn segment_times(&self) -> Vec<T> {
        let n = self.edges.len();
        (0..=n)
            .map(|s| T::from_usize_lossy(s) / T::from_usize_lossy(n))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct CurveMeasure<T> {
    pub curves: Vec<Curve<T>>,
    /// Edge flux left over after extraction.
    pub residual: Vec<T>,
    measure: Arc<GridMeasure<T>>,
}

impl<T: Real> CurveMeasure<T> {
    pub fn measure(&self) -> &Arc<GridMeasure<T>> {
        &self.measure
    }

    /// `max_e |sum_k λ_k [e ∈ γ_k] + residual_e - flux_e|`.
    pub fn conservation_error(&self, g: &FluxGraph<T>) -> T {
        let mut acc = self.residual.clone();
        for c in &self.curves {
            for &e in &c.edges {
                acc[e] += c.weight;
            }
        }
        acc.iter()
            .zip(g.edges())
            .map(|(&a, e)| (a - e.flux).abs())
            .fold(T::zero(), T::max)
    }

    /// Field whose rasterized flux is the curve superposition `Σ λ_k [e ∈ γ_k]`,
    /// read back on the cells that own each edge.
    pub fn reconstruct_field(&self, g: &FluxGraph<T>) -> Result<GridVectorField<T>> {
        if !self.measure.same_grid(g.measure()) {
            return Err(Error::MeasureMismatch);
        }
        let m = &self.measure;
        let d = m.dim();
        let hd1 = m.spacing().powi(d as i32 - 1);
        let mut flux = vec![T::zero(); g.edges().len()];
        for c in &self.curves {
            for &e in &c.edges {
                flux[e] += c.weight;
            }
        }
        let mut data = vec![T::zero(); m.len() * d];
        for (edge, &phi) in g.edges().iter().zip(&flux) {
            let (owner, sign) = if edge.from < edge.to {
                (edge.from, T::one())
            } else {
                (edge.to, -T::one())
            };
            let k = (0..d)
                .find(|&k| m.forward(owner, k) == Some(edge.from.max(edge.to)))
                .expect("axis edge");
            data[owner * d + k] = sign * phi / (m.weight(owner) * hd1);
        }
        GridVectorField::new(m.clone(), data, FieldDomain::SupportOnly)
    }

    pub fn path_count(&self) -> usize {
        self.curves
            .iter()
            .filter(|c| c.kind == CurveKind::Path)
            .count()
    }

    pub fn cycle_count(&self) -> usize {
        self.curves
            .iter()
            .filter(|c| c.kind == CurveKind::Cycle)
            .count()
    }
}

#[derive(PartialEq)]
struct Frontier<T> {
    width: T,
    node: usize,
}

impl<T: PartialOrd> Eq for Frontier<T> {}

impl<T: PartialOrd> Ord for Frontier<T> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.width
            .partial_cmp(&other.width)
            .unwrap_or(Ordering::Equal)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl<T: PartialOrd> PartialOrd for Frontier<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Maximum-bottleneck search from the weighted `starts`. Returns, per node,
/// the best width and the edge used to reach it.
fn widest<T: Real>(
    n: usize,
    out: &[Vec<usize>],
    edges: &[FluxEdge<T>],
    residual: &[T],
    floor: T,
    starts: &[(usize, T)],
) -> (Vec<T>, Vec<Option<usize>>) {
    let mut width = vec![T::zero(); n];
    let mut via: Vec<Option<usize>> = vec![None; n];
    let mut done = vec![false; n];
    let mut heap = BinaryHeap::new();
    for &(s, w) in starts {
        if w > width[s] {
            width[s] = w;
            heap.push(Frontier { width: w, node: s });
        }
    }
    while let Some(Frontier { width: w, node: u }) = heap.pop() {
        if done[u] || w < width[u] {
            continue;
        }
        done[u] = true;
        for &e in &out[u] {
            if residual[e] < floor {
                continue;
            }
            let t = edges[e].to;
            let nw = w.min(residual[e]);
            if !done[t] && nw > width[t] {
                width[t] = nw;
                via[t] = Some(e);
                heap.push(Frontier { width: nw, node: t });
            }
        }
    }
    (width, via)
}

/// Follows `via` backwards from `end` until `stop`; returns edges in forward order.
fn trace_back<T: Real>(
    edges: &[FluxEdge<T>],
    via: &[Option<usize>],
    end: usize,
    stop: impl Fn(usize) -> bool,
) -> Vec<usize> {
    let mut path = Vec::new();
    let mut node = end;
    while !stop(node) {
        let Some(e) = via[node] else { break };
        path.push(e);
        node = edges[e].from;
    }
    path.reverse();
    path
}

fn make_curve<T: Real>(
    edges: &[FluxEdge<T>],
    h: T,
    kind: CurveKind,
    weight: T,
    path: Vec<usize>,
) -> Curve<T> {
    let mut nodes = vec![edges[path[0]].from];
    nodes.extend(path.iter().map(|&e| edges[e].to));
    let length = h * T::from_usize_lossy(path.len());
    Curve {
        kind,
        weight,
        nodes,
        edges: path,
        length,
    }
}

/// Default `min_weight`: `1e-12` of the total edge flux.
pub fn default_min_weight<T: Real>(g: &FluxGraph<T>) -> T {
    let t = g.total_flux();
    if t > T::zero() {
        T::lit(1e-12) * t
    } else {
        T::min_positive_value()
    }
}

/// Greedy flow decomposition: maximum-bottleneck source-to-sink paths first,
/// then cycles seeded at the heaviest remaining edge, until every residual
/// edge flux is below `min_weight`.
pub fn decompose<T: Real>(g: &FluxGraph<T>, min_weight: T) -> Result<CurveMeasure<T>> {
    if !(min_weight > T::zero()) {
        return Err(Error::InvalidArgument("min_weight must be positive".into()));
    }
    let m = g.measure().clone();
    let n = m.len();
    let h = m.spacing();
    let edges = g.edges();
    let sum: T = g.imbalance().iter().copied().sum();
    let scale: T = g.imbalance().iter().map(|x| x.abs()).sum::<T>() + g.total_flux();
    if sum.abs() > T::lit(1e-10) * (T::one() + scale) {
        return Err(Error::Inconsistent(sum.as_f64()));
    }
    let mut out: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (e, edge) in edges.iter().enumerate() {
        out[edge.from].push(e);
    }
    for list in &mut out {
        list.sort_by_key(|&e| edges[e].to);
    }
    let mut residual: Vec<T> = edges.iter().map(|e| e.flux).collect();
    let mut excess = g.imbalance().to_vec();
    let mut curves = Vec::new();

    loop {
        let sources: Vec<(usize, T)> = (0..n)
            .filter(|&i| excess[i] >= min_weight)
            .map(|i| (i, excess[i]))
            .collect();
        if sources.is_empty() {
            break;
        }
        let (width, via) = widest(n, &out, edges, &residual, min_weight, &sources);
        let mut best: Option<(T, usize)> = None;
        for t in 0..n {
            if -excess[t] >= min_weight && via[t].is_some() {
                let w = width[t].min(-excess[t]);
                if best.is_none_or(|(bw, _)| w > bw) {
                    best = Some((w, t));
                }
            }
        }
        let Some((_, sink)) = best else { break };
        let path = trace_back(edges, &via, sink, |u| via[u].is_none());
        let start = edges[path[0]].from;
        let lambda = path
            .iter()
            .map(|&e| residual[e])
            .fold(excess[start].min(-excess[sink]), T::min);
        for &e in &path {
            residual[e] -= lambda;
        }
        excess[start] -= lambda;
        excess[sink] += lambda;
        curves.push(make_curve(edges, h, CurveKind::Path, lambda, path));
    }

    // Edges that cannot be closed into a cycle above the floor stay as residual.
    let mut blocked = vec![false; edges.len()];
    loop {
        let mut seed: Option<usize> = None;
        for (e, &r) in residual.iter().enumerate() {
            if !blocked[e] && r >= min_weight && seed.is_none_or(|s| r > residual[s]) {
                seed = Some(e);
            }
        }
        let Some(e0) = seed else { break };
        let (u, v) = (edges[e0].from, edges[e0].to);
        let (_, via) = widest(n, &out, edges, &residual, min_weight, &[(v, residual[e0])]);
        if via[u].is_none() {
            blocked[e0] = true;
            continue;
        }
        let mut path = vec![e0];
        path.extend(trace_back(edges, &via, u, |x| x == v));
        let lambda = path
            .iter()
            .map(|&e| residual[e])
            .fold(T::infinity(), T::min);
        for &e in &path {
            residual[e] -= lambda;
        }
        curves.push(make_curve(edges, h, CurveKind::Cycle, lambda, path));
    }
    Ok(CurveMeasure {
        curves,
        residual,
        measure: m,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MarginalErrors<T> {
    pub err1: T,
    pub err2: T,
}

/// Curve side of both marginal identities for one `(g, f)` pair, with `f`
/// and `g` linearly interpolated along each segment.
fn curve_integrals<T: Real>(pi: &CurveMeasure<T>, g: &[T], f: &[T]) -> (T, T) {
    let h = pi.measure().spacing();
    let half = T::lit(0.5);
    let mut first = T::zero();
    let mut second = T::zero();
    for c in &pi.curves {
        let mut a = T::zero();
        let mut b = T::zero();
        for s in c.nodes.windows(2) {
            let gm = half * (g[s[0]] + g[s[1]]);
            a += gm * (f[s[1]] - f[s[0]]);
            b += gm * h;
        }
        first += c.weight * a;
        second += c.weight * b;
    }
    (first, second)
}

/// Largest defects of `∫ g b(f) dμ = Σ λ ∫ g(γ)(f∘γ)'` and
/// `∫ g |b| dμ = Σ λ ∫ g(γ)|γ'|` over the dictionary.
pub fn verify_marginals<T: Real>(
    pi: &CurveMeasure<T>,
    b: &Derivation<T>,
    test_dict: &[(GridFunction<T>, GridFunction<T>)],
) -> Result<MarginalErrors<T>> {
    use rayon::prelude::*;
    let m = b.measure();
    if !m.same_grid(pi.measure()) {
        return Err(Error::MeasureMismatch);
    }
    let modulus = b.field().pointwise_norm();
    let per_pair: Vec<Result<(T, T)>> = test_dict
        .par_iter()
        .map(|(g, f)| {
            g.check_grid(m)?;
            f.check_grid(m)?;
            let bf = b.apply(f)?;
            let mut lhs1 = T::zero();
            let mut lhs2 = T::zero();
            for i in m.support() {
                let mass = m.cell_mass(i);
                lhs1 += g.get(i) * bf.get(i) * mass;
                lhs2 += g.get(i) * modulus.get(i) * mass;
            }
            let (rhs1, rhs2) = curve_integrals(pi, g.values(), f.values());
            Ok(((lhs1 - rhs1).abs(), (lhs2 - rhs2).abs()))
        })
        .collect();
    let mut errs = MarginalErrors {
        err1: T::zero(),
        err2: T::zero(),
    };
    for r in per_pair {
        let (e1, e2) = r?;
        errs.err1 = errs.err1.max(e1);
        errs.err2 = errs.err2.max(e2);
    }
    Ok(errs)
}
