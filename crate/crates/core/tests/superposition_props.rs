mod common;

use std::sync::Arc;

use bvgrid::calculus::mu_divergence;
use bvgrid::derivation::phi;
use bvgrid::grid::{FieldDomain, GridFunction, GridVectorField};
use bvgrid::scenarios::scenario;
use bvgrid::superposition::*;
use bvgrid::tangent::{project_tangent, FiberField};
use common::{uniform, with_weights};
use proptest::prelude::*;

/// Random field made tangent and scaled into the unit ball.
fn admissible(w: Vec<f64>, shape: &[usize], seed: f64) -> GridVectorField<f64> {
    let m = with_weights(shape, w);
    let v = GridVectorField::from_fn(m, FieldDomain::AllCells, |x| {
        vec![
            (seed * x[0] + 3.0 * x[1]).sin(),
            (seed - x[0] * x[1] * 7.0).cos(),
        ]
    });
    let v = project_tangent(&v);
    let s = v.sup_norm_on_support();
    if s > 0.0 {
        v.scale(1.0 / s)
    } else {
        v
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn decomposition_invariants(
        w in prop::collection::vec(prop_oneof![1 => Just(0.0), 3 => 0.2f64..4.0], 42),
        seed in -5.0f64..5.0,
    ) {
        prop_assume!(w.iter().any(|&x| x > 0.0));
        let v = admissible(w, &[6, 7], seed);
        let m = v.measure().clone();
        let g = rasterize_flux(&v, 1e-9).unwrap();
        prop_assert!(g.edges().iter().all(|e| e.flux > 0.0));
        let div = mu_divergence(&v).div;
        for i in 0..m.len() {
            let expected = if m.is_support(i) { div.get(i) * m.cell_mass(i) } else { 0.0 };
            prop_assert!((g.imbalance()[i] - expected).abs() <= 1e-10);
        }
        let pi = decompose(&g, default_min_weight(&g)).unwrap();
        prop_assert!(pi.conservation_error(&g) <= 1e-12);
        prop_assert!(pi.path_count() <= g.edges().len() + m.len());
        let min_weight = default_min_weight(&g);
        prop_assert!(pi.residual.iter().all(|&r| r < min_weight));
        for c in &pi.curves {
            prop_assert!(c.weight > 0.0);
            prop_assert!(c.nodes.len() >= 2 && c.length > 0.0);
            prop_assert_eq!(c.nodes.len(), c.edges.len() + 1);
            for (s, &e) in c.edges.iter().enumerate() {
                prop_assert_eq!(g.edges()[e].from, c.nodes[s]);
                prop_assert_eq!(g.edges()[e].to, c.nodes[s + 1]);
            }
            match c.kind {
                CurveKind::Path => {
                    prop_assert!(g.imbalance()[c.nodes[0]] > 0.0);
                    prop_assert!(g.imbalance()[*c.nodes.last().unwrap()] < 0.0);
                }
                CurveKind::Cycle => prop_assert_eq!(c.nodes[0], *c.nodes.last().unwrap()),
            }
        }
        let mass_length: f64 = pi.curves.iter().map(|c| c.weight * c.length).sum();
        let flux_length = m.spacing() * g.total_flux();
        prop_assert!((mass_length - flux_length).abs() <= 1e-12 * (1.0 + flux_length) + m.spacing() * pi.residual.iter().sum::<f64>());
    }
}

#[test]
fn min_weight_must_be_positive() {
    let m = uniform(&[4]);
    let v = GridVectorField::from_fn(m, FieldDomain::AllCells, |_| vec![0.5]);
    let g = rasterize_flux(&v, 1e-9).unwrap();
    assert!(decompose(&g, 0.0).is_err());
    assert!(decompose(&g, default_min_weight(&g)).is_ok());
}

#[test]
fn closed_form_scenarios() {
    for name in ["1d-strip", "thin-strip"] {
        let s = scenario(name).unwrap();
        let v = s.field.clone().unwrap();
        let b = phi(&v, Arc::new(FiberField::full_rank(s.measure.clone())), 1e-9).unwrap();
        let g = rasterize_flux(&v, 1e-9).unwrap();
        let pi = decompose(&g, default_min_weight(&g)).unwrap();
        assert_eq!((pi.path_count(), pi.cycle_count()), (1, 0), "{name}");
        let e = verify_marginals(&pi, &b, &s.test_dict).unwrap();
        assert!(e.err1 <= 1e-8 && e.err2 <= 1e-8, "{name}: {e:?}");
    }
}

#[test]
fn axis_aligned_fields_have_exact_length_identity() {
    let m = uniform(&[8, 8]);
    let v = GridVectorField::from_fn(m.clone(), FieldDomain::AllCells, |x| {
        vec![0.0, if x[0] < 0.5 { 1.0 } else { -0.5 }]
    });
    let b = phi(&v, Arc::new(FiberField::full_rank(m.clone())), 1e-9).unwrap();
    let g = rasterize_flux(&v, 1e-9).unwrap();
    let pi = decompose(&g, default_min_weight(&g)).unwrap();
    let one = GridFunction::constant(m.clone(), 1.0);
    let e = verify_marginals(&pi, &b, &[(one.clone(), one)]).unwrap();
    assert!(e.err2 <= 1e-12, "{e:?}");
}

#[test]
fn empty_measure_gives_zero_errors() {
    let m = uniform(&[5, 5]);
    let v = GridVectorField::zeros(m.clone(), FieldDomain::AllCells);
    let b = phi(&v, Arc::new(FiberField::full_rank(m.clone())), 1e-9).unwrap();
    let g = rasterize_flux(&v, 1e-9).unwrap();
    let pi = decompose(&g, default_min_weight(&g)).unwrap();
    let f = GridFunction::from_fn(m.clone(), |x| x[0]);
    let e = verify_marginals(&pi, &b, &[(f.clone(), f)]).unwrap();
    assert_eq!((e.err1, e.err2), (0.0, 0.0));
}
