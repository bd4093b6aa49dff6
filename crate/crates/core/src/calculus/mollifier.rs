use crate::error::{Error, Result};
use crate::grid::GridFunction;
use crate::scalar::Real;

/// Radial profile `(1 - s^2)^3` for `s < 1`, zero beyond.
#[inline]
pub fn bump_profile<T: Real>(s: T) -> T {
    if s >= T::one() {
        T::zero()
    } else {
        let t = T::one() - s * s;
        t * t * t
    }
}

/// Discrete ε-mollifier: the bump profile sampled on the lattice and
/// normalized to unit sum. Taps are exactly the offsets with `|o| h < ε`.
#[derive(Debug, Clone)]
pub struct MollifierKernel<T> {
    epsilon: T,
    taps: Vec<(Vec<isize>, T)>,
}

impl<T: Real> MollifierKernel<T> {
    pub fn new(dim: usize, spacing: T, epsilon: T) -> Result<Self> {
        if !(epsilon >= spacing) {
            return Err(Error::EpsTooSmall {
                eps: epsilon.as_f64(),
                spacing: spacing.as_f64(),
            });
        }
        let stencil = crate::grid::BallStencil::new(dim, spacing, epsilon);
        let mut taps: Vec<(Vec<isize>, T)> = stencil
            .offsets()
            .iter()
            .filter_map(|o| {
                let r = o
                    .iter()
                    .fold(T::zero(), |a, &x| a + T::lit((x * x) as f64))
                    .sqrt()
                    * spacing;
                let w = bump_profile(r / epsilon);
                (w > T::zero()).then(|| (o.clone(), w))
            })
            .collect();
        let total: T = taps.iter().map(|(_, w)| *w).sum();
        for (_, w) in &mut taps {
            *w /= total;
        }
        Ok(Self { epsilon, taps })
    }

    pub fn epsilon(&self) -> T {
        self.epsilon
    }

    pub fn taps(&self) -> &[(Vec<isize>, T)] {
        &self.taps
    }

    /// Largest `|o|_∞` among taps, i.e. how many cells the support can grow.
    pub fn reach(&self) -> usize {
        self.taps
            .iter()
            .flat_map(|(o, _)| o.iter().map(|x| x.unsigned_abs()))
            .max()
            .unwrap_or(0)
    }
}

/// `f_ε(x_i) = sum_o ρ_o f(x_i - o h)` against Lebesgue cell volume; values
/// outside the grid are taken from the nearest grid cell.
pub fn mollify<T: Real>(f: &GridFunction<T>, eps: T) -> Result<GridFunction<T>> {
    let m = f.measure();
    let kernel = MollifierKernel::new(m.dim(), m.spacing(), eps)?;
    Ok(apply_kernel(f, &kernel))
}

pub(crate) fn apply_kernel<T: Real>(
    f: &GridFunction<T>,
    kernel: &MollifierKernel<T>,
) -> GridFunction<T> {
    let m = f.measure();
    let vals = f.values();
    let neg: Vec<(Vec<isize>, T)> = kernel
        .taps
        .iter()
        .map(|(o, w)| (o.iter().map(|x| -x).collect(), *w))
        .collect();
    let out = (0..m.len())
        .map(|i| {
            neg.iter().fold(T::zero(), |acc, (o, w)| {
                acc + *w * vals[m.offset_clamped(i, o)]
            })
        })
        .collect();
    GridFunction::new(m.clone(), out).expect("sizes agree")
}

/// Attained quantities in the three mollification bounds, with the slack
/// constants `C` they require in units of `h`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct MollificationBounds<T> {
    pub epsilon: T,
    /// Discrete `Lip(f)`.
    pub lipschitz: T,
    /// Largest distance, in cells, from `supp f_ε` to `supp f`.
    pub support_growth: T,
    /// `ε / h`.
    pub support_bound: T,
    /// `max |f_ε - f|`.
    pub deviation: T,
    /// `(deviation - Lip ε)^+ / (h Lip)`.
    pub deviation_slack: T,
    /// `max (|∇f_ε| - Lip(f; B_2ε))^+`.
    pub gradient_excess: T,
    /// `gradient_excess / (h Lip / ε)`.
    pub gradient_slack: T,
}

impl<T: Real> MollificationBounds<T> {
    /// All bounds hold with slack constant at most `c`.
    pub fn holds_with(&self, c: T) -> bool {
        self.support_growth <= self.support_bound
            && self.deviation_slack <= c
            && self.gradient_slack <= c
    }
}

pub fn mollification_bounds<T: Real>(
    f: &GridFunction<T>,
    eps: T,
) -> Result<MollificationBounds<T>> {
    let m = f.measure();
    let h = m.spacing();
    let fe = mollify(f, eps)?;
    let lip = super::global_lipschitz(f);
    let supp: Vec<usize> = (0..m.len()).filter(|&i| f.get(i) != T::zero()).collect();
    let mut support_growth = T::zero();
    for i in (0..m.len()).filter(|&i| fe.get(i) != T::zero() && f.get(i) == T::zero()) {
        let dist = supp
            .iter()
            .map(|&j| {
                (0..m.dim())
                    .map(|k| T::lit(m.coord(i, k) as f64 - m.coord(j, k) as f64).powi(2))
                    .sum::<T>()
                    .sqrt()
            })
            .fold(T::infinity(), T::min);
        support_growth = support_growth.max(dist);
    }
    let deviation = f
        .values()
        .iter()
        .zip(fe.values())
        .map(|(a, b)| (*a - *b).abs())
        .fold(T::zero(), T::max);
    let grad = super::grid_gradient(&fe);
    let local = super::local_lipschitz(f, T::lit(2.0) * eps)?;
    let gradient_excess = (0..m.len())
        .map(|i| (grad.norm_at(i) - local.get(i)).max(T::zero()))
        .fold(T::zero(), T::max);
    let ratio = |num: T, den: T| {
        if num > T::zero() {
            num / den
        } else {
            T::zero()
        }
    };
    Ok(MollificationBounds {
        epsilon: eps,
        lipschitz: lip,
        support_growth,
        support_bound: eps / h,
        deviation,
        deviation_slack: ratio((deviation - lip * eps).max(T::zero()), h * lip),
        gradient_excess,
        gradient_slack: ratio(gradient_excess, h * lip / eps),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridMeasure;
    use std::sync::Arc;

    #[test]
    fn kernel_is_normalized_symmetric_and_local() {
        for eps in [1.0, 2.0, 2.5, 4.0] {
            let k = MollifierKernel::<f64>::new(2, 1.0, eps).unwrap();
            let s: f64 = k.taps().iter().map(|t| t.1).sum();
            assert!((s - 1.0).abs() < 1e-15);
            for (o, w) in k.taps() {
                assert!(((o[0] * o[0] + o[1] * o[1]) as f64).sqrt() < eps);
                let neg = vec![-o[0], -o[1]];
                let mirror = k.taps().iter().find(|t| t.0 == neg).unwrap();
                assert_eq!(mirror.1, *w);
            }
        }
        assert!(matches!(
            MollifierKernel::<f64>::new(1, 1.0, 0.5),
            Err(Error::EpsTooSmall { .. })
        ));
    }

    #[test]
    fn constants_are_fixed() {
        let m = Arc::new(GridMeasure::<f64>::uniform(vec![7, 5], 0.1).unwrap());
        let f = GridFunction::constant(m, 2.5);
        let g = mollify(&f, 0.3).unwrap();
        assert!(g.values().iter().all(|&x| (x - 2.5).abs() < 1e-14));
    }

    #[test]
    fn delta_response_copies_taps() {
        let m = Arc::new(GridMeasure::<f64>::uniform(vec![9, 9], 1.0).unwrap());
        let c = m.flat(&[4, 4]);
        let mut v = vec![0.0; 81];
        v[c] = 1.0;
        let g = mollify(&GridFunction::new(m.clone(), v).unwrap(), 2.0).unwrap();
        let k = MollifierKernel::<f64>::new(2, 1.0, 2.0).unwrap();
        for (o, w) in k.taps() {
            assert_eq!(g.get(m.offset(c, o).unwrap()), *w);
        }
        assert!((g.values().iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(
            g.values().iter().filter(|&&x| x != 0.0).count(),
            k.taps().len()
        );
    }

    #[test]
    fn clipped_linear_error_within_lipschitz_bound() {
        let m = Arc::new(GridMeasure::<f64>::uniform(vec![24, 24], 1.0 / 24.0).unwrap());
        let f = GridFunction::from_fn(m.clone(), |x| x[0].clamp(0.25, 0.75));
        for eps in [2.0 / 24.0, 3.0 / 24.0] {
            let g = mollify(&f, eps).unwrap();
            let err = f
                .values()
                .iter()
                .zip(g.values())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(err <= eps + 1e-12, "eps {eps}: err {err}");
        }
    }
}
