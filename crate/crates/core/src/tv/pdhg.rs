//! Restarted primal-dual hybrid gradient for [`DualProblem`].

use super::problem::DualProblem;
use crate::scalar::{dot, Real};

#[derive(Debug, Clone)]
pub struct DualOptions<T> {
    /// Relative gap target: stop once `U - L <= gap_tol (1 + L)`.
    pub gap_tol: T,
    pub max_iter: usize,
    /// Iterations between gap evaluations.
    pub check_every: usize,
}

impl<T: Real> Default for DualOptions<T> {
    fn default() -> Self {
        Self {
            gap_tol: T::lit(1e-6),
            max_iter: 100_000,
            check_every: 64,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct PdhgOutcome<T> {
    /// Objective of the best feasible point found.
    pub lower: T,
    /// Smallest weak-duality bound found.
    pub upper: T,
    pub iterations: usize,
    pub converged: bool,
    pub x: Vec<T>,
}

fn diff_norm<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter()
        .zip(b)
        .fold(T::zero(), |s, (&x, &y)| s + (x - y) * (x - y))
        .sqrt()
}

pub(crate) fn solve<T: Real>(prob: &DualProblem<T>, opts: &DualOptions<T>) -> PdhgOutcome<T> {
    let m = &prob.measure;
    let n = prob.nvars();
    let rows = m.len();
    if n == 0 {
        return PdhgOutcome {
            lower: T::zero(),
            upper: T::zero(),
            iterations: 0,
            converged: true,
            x: Vec::new(),
        };
    }
    let norm_k = prob.operator_norm();
    let eta = T::lit(0.95) / norm_k;
    let c_norm = dot(&prob.c, &prob.c).sqrt();
    let mut omega = if c_norm > T::zero() {
        c_norm / (norm_k * T::from_usize_lossy(n).sqrt())
    } else {
        T::one()
    };

    let mut x = vec![T::zero(); n];
    let mut y = vec![T::zero(); rows];
    let mut x_sum = vec![T::zero(); n];
    let mut y_sum = vec![T::zero(); rows];
    let mut n_avg = 0usize;
    let mut x_anchor = x.clone();
    let mut y_anchor = y.clone();

    let (mut best_lower, mut best_x) = (T::zero(), vec![T::zero(); n]);
    let mut best_upper = prob.upper_bound(&y);
    let mut gap_at_restart = best_upper;
    let mut last_candidate_gap = T::infinity();
    let mut since_restart = 0usize;

    let stop = |lo: T, up: T| up - lo <= opts.gap_tol * (T::one() + lo);
    if stop(best_lower, best_upper) {
        return PdhgOutcome {
            lower: best_lower,
            upper: best_upper,
            iterations: 0,
            converged: true,
            x: best_x,
        };
    }

    let mut x_new = vec![T::zero(); n];
    let mut x_bar = vec![T::zero(); n];
    for it in 1..=opts.max_iter {
        let tau = eta / omega;
        let sigma = eta * omega;
        let kty = prob.kt(&y);
        for p in 0..n {
            x_new[p] = x[p] - tau * (kty[p] - prob.c[p]);
        }
        for i in 0..rows {
            let r = prob.cell_vars(i);
            let nb = r
                .clone()
                .fold(T::zero(), |a, p| a + x_new[p] * x_new[p])
                .sqrt();
            if nb > T::one() {
                for p in r {
                    x_new[p] /= nb;
                }
            }
        }
        for p in 0..n {
            x_bar[p] = x_new[p] + x_new[p] - x[p];
        }
        let kx = prob.k(&x_bar);
        for j in 0..rows {
            let yj = y[j] + sigma * kx[j];
            y[j] = if m.is_support(j) {
                let t = sigma * prob.bounds[j];
                yj.signum() * (yj.abs() - t).max(T::zero())
            } else {
                yj
            };
        }
        std::mem::swap(&mut x, &mut x_new);
        for p in 0..n {
            x_sum[p] += x[p];
        }
        for j in 0..rows {
            y_sum[j] += y[j];
        }
        n_avg += 1;
        since_restart += 1;

        if it % opts.check_every != 0 && it != opts.max_iter {
            continue;
        }
        let inv = T::one() / T::from_usize_lossy(n_avg);
        let x_avg: Vec<T> = x_sum.iter().map(|&s| s * inv).collect();
        let y_avg: Vec<T> = y_sum.iter().map(|&s| s * inv).collect();
        let mut candidates = Vec::with_capacity(2);
        for (cx, cy) in [(&x, &y), (&x_avg, &y_avg)] {
            let (lo, fx) = prob.feasible(cx);
            let up = prob.upper_bound(cy);
            if lo > best_lower {
                best_lower = lo;
                best_x = fx;
            }
            best_upper = best_upper.min(up);
            candidates.push(up - lo);
        }
        if stop(best_lower, best_upper) {
            return PdhgOutcome {
                lower: best_lower,
                upper: best_upper,
                iterations: it,
                converged: true,
                x: best_x,
            };
        }
        let use_avg = candidates[1] < candidates[0];
        let g = candidates[0].min(candidates[1]);
        let restart = g <= T::lit(0.2) * gap_at_restart
            || (g <= T::lit(0.8) * gap_at_restart && g > last_candidate_gap)
            || T::from_usize_lossy(since_restart) >= T::lit(0.36) * T::from_usize_lossy(it);
        last_candidate_gap = g;
        if restart {
            if use_avg {
                x = x_avg;
                y = y_avg;
            }
            let dx = diff_norm(&x, &x_anchor);
            let dy = diff_norm(&y, &y_anchor);
            if dx > T::lit(1e-10) && dy > T::lit(1e-10) {
                omega = (T::lit(0.5) * (dy / dx).ln() + T::lit(0.5) * omega.ln()).exp();
            }
            x_anchor.copy_from_slice(&x);
            y_anchor.copy_from_slice(&y);
            x_sum.iter_mut().for_each(|s| *s = T::zero());
            y_sum.iter_mut().for_each(|s| *s = T::zero());
            n_avg = 0;
            since_restart = 0;
            gap_at_restart = g;
            last_candidate_gap = T::infinity();
        }
    }
    PdhgOutcome {
        lower: best_lower,
        upper: best_upper,
        iterations: opts.max_iter,
        converged: stop(best_lower, best_upper),
        x: best_x,
    }
}
