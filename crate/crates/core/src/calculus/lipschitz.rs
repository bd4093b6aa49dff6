use crate::error::{Error, Result};
use crate::grid::{BallStencil, GridFunction};
use crate::scalar::Real;

/// Relative margin above `h sqrt(d)` used as the smallest legal radius.
pub const ASYMPTOTIC_RADIUS_SLACK: f64 = 1e-3;

/// `Lip(f; B_r(x_i))`: the largest difference quotient over pairs of cells
/// inside the (grid-clipped) ball around each cell.
pub fn local_lipschitz<T: Real>(f: &GridFunction<T>, r: T) -> Result<GridFunction<T>> {
    let m = f.measure();
    let h = m.spacing();
    let min = h * T::from_usize_lossy(m.dim()).sqrt();
    if r < min * (T::one() - T::lit(1e-12)) {
        return Err(Error::RadiusTooSmall {
            radius: r.as_f64(),
            min: min.as_f64(),
        });
    }
    let stencil = BallStencil::new(m.dim(), h, r);
    let offs = stencil.offsets();
    let mut pairs: Vec<(usize, usize, T)> = Vec::new();
    for a in 0..offs.len() {
        for b in a + 1..offs.len() {
            let dist2: isize = offs[a]
                .iter()
                .zip(&offs[b])
                .map(|(x, y)| (x - y) * (x - y))
                .sum();
            pairs.push((a, b, T::one() / (T::lit(dist2 as f64).sqrt() * h)));
        }
    }
    let vals = f.values();
    let mut local: Vec<Option<T>> = vec![None; offs.len()];
    let out = (0..m.len())
        .map(|i| {
            for (slot, o) in local.iter_mut().zip(offs) {
                *slot = m.offset(i, o).map(|j| vals[j]);
            }
            pairs
                .iter()
                .fold(T::zero(), |acc, &(a, b, inv)| match (local[a], local[b]) {
                    (Some(x), Some(y)) => acc.max((x - y).abs() * inv),
                    _ => acc,
                })
        })
        .collect();
    Ok(GridFunction::new(m.clone(), out).expect("sizes agree"))
}

/// `local_lipschitz` at `r_0 = h sqrt(d) (1 + δ)`, the finest ball that still
/// contains all diagonal neighbors. First-order accurate stand-in for `lip_a`.
pub fn asymptotic_lipschitz<T: Real>(f: &GridFunction<T>) -> GridFunction<T> {
    let m = f.measure();
    let r0 =
        m.spacing() * T::from_usize_lossy(m.dim()).sqrt() * T::lit(1.0 + ASYMPTOTIC_RADIUS_SLACK);
    local_lipschitz(f, r0).expect("r0 is legal")
}

/// Global Lipschitz constant of the samples, by brute force over all pairs.
pub fn global_lipschitz<T: Real>(f: &GridFunction<T>) -> T {
    let m = f.measure();
    let centers: Vec<Vec<T>> = (0..m.len()).map(|i| m.center(i)).collect();
    let vals = f.values();
    let mut best = T::zero();
    for a in 0..m.len() {
        for b in a + 1..m.len() {
            let dist = centers[a]
                .iter()
                .zip(&centers[b])
                .fold(T::zero(), |acc, (&x, &y)| acc + (x - y) * (x - y))
                .sqrt();
            best = best.max((vals[a] - vals[b]).abs() / dist);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridMeasure;
    use std::sync::Arc;

    #[test]
    fn examples() {
        let m = Arc::new(GridMeasure::<f64>::uniform(vec![8, 8], 0.125).unwrap());
        let c = local_lipschitz(&GridFunction::constant(m.clone(), 1.0), 0.5).unwrap();
        assert!(c.values().iter().all(|&x| x == 0.0));
        let l = local_lipschitz(&GridFunction::from_fn(m.clone(), |x| x[0]), 0.6).unwrap();
        assert!(l.values().iter().all(|&x| (x - 1.0).abs() < 1e-12));

        let line =
            Arc::new(GridMeasure::<f64>::new(vec![8], 1.0, vec![-4.0], vec![1.0; 8]).unwrap());
        let f = GridFunction::from_fn(line.clone(), |x| x[0].abs());
        let l = local_lipschitz(&f, 2.0).unwrap();
        // centers -0.5 and 0.5 straddle the kink
        assert_eq!(l.get(3), 1.0);
        assert_eq!(l.get(4), 1.0);

        assert!(matches!(
            local_lipschitz(&f, 0.5),
            Err(Error::RadiusTooSmall { .. })
        ));
        assert!(matches!(
            local_lipschitz(&GridFunction::constant(m, 0.0), 0.1),
            Err(Error::RadiusTooSmall { .. })
        ));
    }

    #[test]
    fn asymptotic_of_linear_is_one_in_the_interior() {
        let m = Arc::new(GridMeasure::<f64>::uniform(vec![6, 6], 0.2).unwrap());
        let a = asymptotic_lipschitz(&GridFunction::from_fn(m.clone(), |x| x[0]));
        assert!(a.values().iter().all(|&x| (x - 1.0).abs() < 1e-12));
        let z = asymptotic_lipschitz(&GridFunction::constant(m, -3.0));
        assert!(z.values().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn radius_sweep_is_monotone_and_settles() {
        let m = Arc::new(GridMeasure::<f64>::uniform(vec![16, 16], 1.0 / 16.0).unwrap());
        let f = GridFunction::from_fn(m.clone(), |x| {
            ((x[0] - 0.4).powi(2) + (x[1] - 0.55).powi(2)).sqrt()
        });
        let h = m.spacing();
        let radii: Vec<f64> = [4.0, 3.0, 2.0, 1.5, 2f64.sqrt() * 1.001]
            .iter()
            .map(|r| r * h)
            .collect();
        let sweeps: Vec<GridFunction<f64>> = radii
            .iter()
            .map(|&r| local_lipschitz(&f, r).unwrap())
            .collect();
        for w in sweeps.windows(2) {
            for i in 0..m.len() {
                assert!(w[1].get(i) <= w[0].get(i) + 1e-15);
            }
        }
        let masses: Vec<f64> = sweeps.iter().map(|s| s.l1_norm()).collect();
        // distance function: lip_a = 1 except at the apex, the L1 values decrease towards 1
        assert!(masses.windows(2).all(|w| w[1] <= w[0] + 1e-15));
        assert!((masses.last().unwrap() - 1.0).abs() < 0.05);
        let a = asymptotic_lipschitz(&f);
        assert_eq!(a.values(), sweeps.last().unwrap().values());
    }

    #[test]
    fn global_lipschitz_of_linear() {
        let m = Arc::new(GridMeasure::<f64>::uniform(vec![5, 5], 0.2).unwrap());
        let f = GridFunction::from_fn(m, |x| 3.0 * x[0] - 4.0 * x[1]);
        assert!((global_lipschitz(&f) - 5.0).abs() < 1e-12);
    }
}
