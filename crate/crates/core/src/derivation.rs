//! Bounded derivations with bounded divergence, stored through their vector
//! field `v = Φ⁻¹(b)`.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::calculus::{
    bump_profile, global_lipschitz, grid_gradient, is_admissible, mu_divergence,
};
use crate::error::{Error, Result};
use crate::grid::{GridFunction, GridMeasure, GridVectorField};
use crate::scalar::Real;
use crate::tangent::{tangential_gradient, FiberField};
use crate::tv::CellBox;

#[derive(Debug, Clone)]
pub struct Derivation<T> {
    field: GridVectorField<T>,
    divergence: GridFunction<T>,
    bound_field: GridFunction<T>,
    fibers: Arc<FiberField<T>>,
}

/// `Φ(v)(f) = v · ∇_μ f`. The stored field is `v` on the support with the
/// invisible boundary components dropped.
pub fn phi<T: Real>(
    v: &GridVectorField<T>,
    fibers: Arc<FiberField<T>>,
    tol: T,
) -> Result<Derivation<T>> {
    v.check_grid(fibers.measure())?;
    let cert = is_admissible(v, T::max_value(), tol);
    if !cert.admissible {
        return Err(Error::NotAdmissible(format!(
            "sup norm {}, tangency residual {}",
            cert.sup_norm, cert.tangency_residual
        )));
    }
    let field = v.without_gauge().to_support_only();
    let divergence = mu_divergence(&field).div;
    let bound_field = field.pointwise_norm();
    Ok(Derivation {
        field,
        divergence,
        bound_field,
        fibers,
    })
}

impl<T: Real> Derivation<T> {
    pub fn field(&self) -> &GridVectorField<T> {
        &self.field
    }

    pub fn divergence(&self) -> &GridFunction<T> {
        &self.divergence
    }

    /// `|b|`, equal to `|v|` on the support.
    pub fn bound_field(&self) -> &GridFunction<T> {
        &self.bound_field
    }

    pub fn fibers(&self) -> &Arc<FiberField<T>> {
        &self.fibers
    }

    pub fn measure(&self) -> &Arc<GridMeasure<T>> {
        self.field.measure()
    }

    /// `b(f) = v · ∇_μ f` on the support, zero elsewhere.
    pub fn apply(&self, f: &GridFunction<T>) -> Result<GridFunction<T>> {
        let g = tangential_gradient(f, &self.fibers)?;
        Ok(self.dot_field(&g))
    }

    fn dot_field(&self, g: &GridVectorField<T>) -> GridFunction<T> {
        let m = self.measure();
        let vals = (0..m.len())
            .map(|i| {
                if m.is_support(i) {
                    self.field
                        .at(i)
                        .iter()
                        .zip(g.at(i))
                        .fold(T::zero(), |a, (&x, &y)| a + x * y)
                } else {
                    T::zero()
                }
            })
            .collect();
        GridFunction::new(m.clone(), vals).expect("sizes agree")
    }
}

/// Probe functions used by [`derivation_modulus`], in evaluation order.
pub fn probe_dictionary<T: Real>(
    b: &Derivation<T>,
    budget: usize,
    seed: u64,
) -> Result<Vec<GridFunction<T>>> {
    let m = b.measure().clone();
    let d = m.dim();
    if budget < 2 * d {
        return Err(Error::InvalidArgument(format!(
            "probe budget {budget} below 2d = {}",
            2 * d
        )));
    }
    let mut probes = Vec::with_capacity(budget);
    for k in 0..d {
        for s in [T::one(), -T::one()] {
            probes.push(GridFunction::from_fn(m.clone(), move |x| s * x[k]));
        }
    }
    // Field-aligned stencil probes: on each shift of the stride-3 sublattice,
    // the forward differences at the lattice cells equal v/|v| there.
    let shifts = 3usize.pow(d as u32);
    if probes.len() + shifts <= budget {
        let h = m.spacing();
        for s in 0..shifts {
            let shift: Vec<usize> = (0..d).map(|k| (s / 3usize.pow(k as u32)) % 3).collect();
            let mut vals = vec![T::zero(); m.len()];
            for i in m.support() {
                let idx = m.multi_index(i);
                if idx.iter().zip(&shift).any(|(&x, &sh)| x % 3 != sh) {
                    continue;
                }
                let n = b.bound_field.get(i);
                if n == T::zero() {
                    continue;
                }
                for k in 0..d {
                    if let Some(j) = m.forward(i, k) {
                        vals[j] = h * b.field.component(i, k) / n;
                    }
                }
            }
            probes.push(GridFunction::new(m.clone(), vals)?);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lo: Vec<T> = m.origin().to_vec();
    let ext: Vec<T> = m
        .shape()
        .iter()
        .map(|&n| T::from_usize_lossy(n) * m.spacing())
        .collect();
    let mut linear = true;
    while probes.len() < budget {
        if linear {
            let mut u: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let n = u.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            u.iter_mut().for_each(|x| *x /= n);
            let u: Vec<T> = u.into_iter().map(T::lit).collect();
            probes.push(GridFunction::from_fn(m.clone(), move |x| {
                x.iter().zip(&u).fold(T::zero(), |a, (&p, &q)| a + p * q)
            }));
        } else {
            let p: Vec<T> = (0..d)
                .map(|k| lo[k] + ext[k] * T::lit(rng.gen_range(0.0..1.0)))
                .collect();
            let sign = if rng.gen_bool(0.5) {
                T::one()
            } else {
                -T::one()
            };
            probes.push(GridFunction::from_fn(m.clone(), move |x| {
                sign * x
                    .iter()
                    .zip(&p)
                    .fold(T::zero(), |a, (&y, &z)| a + (y - z) * (y - z))
                    .sqrt()
            }));
        }
        linear = !linear;
    }
    Ok(probes)
}

/// Empirical `|b|`: the cellwise maximum of `b(f)` over the probe
/// dictionary, each probe rescaled at a cell so its discrete gradient has
/// norm at most one there.
pub fn derivation_modulus<T: Real>(
    b: &Derivation<T>,
    probe_budget: usize,
    seed: u64,
) -> Result<GridFunction<T>> {
    let m = b.measure().clone();
    let probes = probe_dictionary(b, probe_budget, seed)?;
    let per_probe = probes
        .par_iter()
        .map(|f| -> Result<Vec<T>> {
            let bf = b.apply(f)?;
            let g = grid_gradient(f);
            Ok((0..m.len())
                .map(|i| (bf.get(i) / g.norm_at(i).max(T::one())).max(T::zero()))
                .collect())
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = vec![T::zero(); m.len()];
    for vals in &per_probe {
        for (o, &x) in out.iter_mut().zip(vals) {
            *o = o.max(x);
        }
    }
    for (i, o) in out.iter_mut().enumerate() {
        if !m.is_support(i) {
            *o = T::zero();
        }
    }
    GridFunction::new(m, out)
}

/// Bump equal to one on `B`, decaying with the mollifier profile to zero
/// `margin` cells away from it.
pub fn box_bump<T: Real>(m: &Arc<GridMeasure<T>>, b: &CellBox, margin: usize) -> GridFunction<T> {
    let vals = (0..m.len())
        .map(|i| {
            let idx = m.multi_index(i);
            let dist2 = idx.iter().enumerate().fold(0isize, |a, (k, &x)| {
                let x = x as isize;
                let gap = (b.lo[k] - x).max(x - (b.hi[k] - 1)).max(0);
                a + gap * gap
            });
            if margin == 0 {
                return if dist2 == 0 { T::one() } else { T::zero() };
            }
            bump_profile(T::lit((dist2 as f64).sqrt() / margin as f64))
        })
        .collect();
    GridFunction::new(m.clone(), vals).expect("sizes agree")
}

/// `L_f(b)(η) = -sum f (b(η) + η div b) w h^d` with `η` the box bump.
pub fn pairing_lf<T: Real>(
    f: &GridFunction<T>,
    b: &Derivation<T>,
    bx: &CellBox,
    bump_margin: usize,
) -> Result<T> {
    let m = b.measure();
    f.check_grid(m)?;
    let eta = box_bump(m, bx, bump_margin);
    let b_eta = b.apply(&eta)?;
    let div = b.divergence();
    Ok(-m.support().fold(T::zero(), |a, i| {
        a + f.get(i) * (b_eta.get(i) + eta.get(i) * div.get(i)) * m.cell_mass(i)
    }))
}

/// `max_i |div_μ(η v) - (v·∇_μ η + η div_μ v)|` over the support.
pub fn leibniz_div_residual<T: Real>(eta: &GridFunction<T>, b: &Derivation<T>) -> Result<T> {
    let m = b.measure();
    let lhs = mu_divergence(&b.field().scale_by(eta)?).div;
    let b_eta = b.apply(eta)?;
    Ok(m.support()
        .map(|i| (lhs.get(i) - (b_eta.get(i) + eta.get(i) * b.divergence().get(i))).abs())
        .fold(T::zero(), T::max))
}

/// `h (‖v‖_∞ Lip(Gη) + Lip(η) Lip(v))`, the scale of [`leibniz_div_residual`].
pub fn leibniz_div_scale<T: Real>(eta: &GridFunction<T>, v: &GridVectorField<T>) -> T {
    let m = eta.measure();
    let d = m.dim();
    let g = grid_gradient(eta);
    let lip_of = |f: &dyn Fn(usize) -> T| {
        global_lipschitz(
            &GridFunction::new(m.clone(), (0..m.len()).map(f).collect()).expect("sizes agree"),
        )
    };
    // The last slab repeats its neighbor so the one-sided zero does not count.
    let grad_k = |i: usize, k: usize| match m.backward(i, k) {
        Some(j) if m.is_upper_boundary(i, k) => g.component(j, k),
        _ => g.component(i, k),
    };
    let norm = |f: &dyn Fn(usize) -> T| {
        (0..d)
            .fold(T::zero(), |a, k| a + lip_of(&|i| f(i * d + k)).powi(2))
            .sqrt()
    };
    let lip_g = norm(&|ik| grad_k(ik / d, ik % d));
    let lip_v = norm(&|ik| v.component(ik / d, ik % d));
    m.spacing() * (v.sup_norm_on_support() * lip_g + global_lipschitz(eta) * lip_v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::FieldDomain;

    fn unit_box(n: usize) -> Arc<GridMeasure<f64>> {
        Arc::new(GridMeasure::<f64>::uniform(vec![n, n], 1.0 / n as f64).unwrap())
    }

    #[test]
    fn phi_examples() {
        let m = unit_box(8);
        let fib = Arc::new(FiberField::full_rank(m.clone()));
        let zero = phi(
            &GridVectorField::zeros(m.clone(), FieldDomain::SupportOnly),
            fib.clone(),
            1e-9,
        )
        .unwrap();
        assert!(zero.bound_field().values().iter().all(|&x| x == 0.0));

        let e1 = GridVectorField::from_fn(m.clone(), FieldDomain::AllCells, |_| vec![1.0, 0.0]);
        let b = phi(&e1, fib.clone(), 1e-9).unwrap();
        let x1 = b
            .apply(&GridFunction::from_fn(m.clone(), |x| x[0]))
            .unwrap();
        let x2 = b
            .apply(&GridFunction::from_fn(m.clone(), |x| x[1]))
            .unwrap();
        for i in 0..m.len() {
            if !m.is_upper_boundary(i, 0) {
                assert!((x1.get(i) - 1.0).abs() < 1e-12);
            }
            assert_eq!(x2.get(i), 0.0);
        }
        let c = b.apply(&GridFunction::constant(m.clone(), 4.0)).unwrap();
        assert!(c.values().iter().all(|&x| x == 0.0));

        let two = e1.scale(2.0);
        assert!(matches!(phi(&two, fib, 1e-9), Err(Error::NotAdmissible(_))));
    }

    #[test]
    fn apply_is_the_forward_difference_in_1d() {
        let m = Arc::new(GridMeasure::<f64>::uniform(vec![4], 1.0).unwrap());
        let fib = Arc::new(FiberField::full_rank(m.clone()));
        let b = phi(
            &GridVectorField::from_fn(m.clone(), FieldDomain::AllCells, |_| vec![1.0]),
            fib,
            0.0,
        )
        .unwrap();
        let d = b.apply(&GridFunction::from_fn(m, |x| x[0] * x[0])).unwrap();
        // centers 0.5, 1.5, 2.5, 3.5
        assert_eq!(d.values(), &[2.0, 4.0, 6.0, 0.0]);
    }

    #[test]
    fn modulus_attains_unit_field() {
        let m = unit_box(12);
        let fib = Arc::new(FiberField::full_rank(m.clone()));
        let v = GridVectorField::from_fn(m.clone(), FieldDomain::AllCells, |x| {
            let a = 3.0 * x[0] + x[1];
            vec![0.8 * a.cos(), 0.8 * a.sin()]
        });
        let v = crate::tangent::project_tangent(&v);
        let b = phi(&v, fib, 1e-9).unwrap();
        let modulus = derivation_modulus(&b, 64, 7).unwrap();
        for i in m.support() {
            assert!(modulus.get(i) <= b.bound_field().get(i) + 1e-12);
            let idx = m.multi_index(i);
            if idx.iter().all(|&x| x + 1 < 12) {
                assert!((modulus.get(i) - b.bound_field().get(i)).abs() < 1e-12);
            }
        }
        let zero = phi(
            &GridVectorField::zeros(m.clone(), FieldDomain::SupportOnly),
            b.fibers().clone(),
            0.0,
        )
        .unwrap();
        assert!(derivation_modulus(&zero, 64, 7)
            .unwrap()
            .values()
            .iter()
            .all(|&x| x == 0.0));
    }

    #[test]
    fn pairing_of_constant_vanishes() {
        let m = unit_box(10);
        let fib = Arc::new(FiberField::full_rank(m.clone()));
        let v = crate::tangent::project_tangent(&GridVectorField::from_fn(
            m.clone(),
            FieldDomain::AllCells,
            |x| vec![(x[1] * 5.0).sin() * 0.5, x[0] * 0.7],
        ));
        let b = phi(&v, fib, 1e-9).unwrap();
        let p = pairing_lf(
            &GridFunction::constant(m.clone(), 3.0),
            &b,
            &CellBox::grid(&m),
            2,
        )
        .unwrap();
        assert!(p.abs() < 1e-12, "{p}");
        let zero = phi(
            &GridVectorField::zeros(m.clone(), FieldDomain::SupportOnly),
            b.fibers().clone(),
            0.0,
        )
        .unwrap();
        let f = GridFunction::from_fn(m.clone(), |x| x[0]);
        assert_eq!(
            pairing_lf(&f, &zero, &CellBox::new(vec![2, 2], vec![5, 5]).unwrap(), 2).unwrap(),
            0.0
        );
    }

    #[test]
    fn leibniz_scale_examples() {
        let m = unit_box(8);
        let fib = Arc::new(FiberField::full_rank(m.clone()));
        let e1 = GridVectorField::from_fn(m.clone(), FieldDomain::AllCells, |_| vec![1.0, 0.0]);
        let b = phi(&e1, fib, 1e-9).unwrap();
        let one = GridFunction::constant(m.clone(), 1.0);
        assert_eq!(leibniz_div_scale(&one, b.field()), 0.0);
        assert!(leibniz_div_residual(&one, &b).unwrap() < 1e-12);
        // Linear η: Gη is constant once the last slab copies its neighbor.
        let x = GridFunction::from_fn(m.clone(), |p| p[0]);
        let s = leibniz_div_scale(
            &x,
            &GridVectorField::zeros(m.clone(), FieldDomain::SupportOnly),
        );
        assert_eq!(s, 0.0);
    }
}
