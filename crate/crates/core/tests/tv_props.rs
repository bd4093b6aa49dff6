mod common;

use bvgrid::calculus::{is_admissible, mu_divergence};
use bvgrid::grid::GridFunction;
use bvgrid::lp_oracle::dual_tv_lp;
use bvgrid::tangent::*;
use bvgrid::tv::*;
use common::{random_lipschitz, uniform, with_weights};
use proptest::prelude::*;

fn opts() -> DualOptions<f64> {
    DualOptions::default()
}

/// PDHG and the LP oracle bracket the same optimum.
fn agree(pdhg: &TVReport<f64>, lp_value: f64, lp_upper: f64) -> bool {
    let slack =
        pdhg.gap.unwrap() + (lp_upper - lp_value) + opts().gap_tol * (1.0 + pdhg.value.abs());
    (pdhg.value - lp_value).abs() <= slack
}

fn certificate_ok(r: &TVReport<f64>) -> bool {
    !r.converged || r.gap.unwrap() <= 1e-6 * (1.0 + r.value.abs())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn dual_matches_lp_oracle(seed in 0u64..10_000, nx in 3usize..8, ny in 3usize..8, mb in 1.0f64..40.0) {
        let m = uniform(&[nx, ny]);
        let f = random_lipschitz(&m, seed).zip_map(&GridFunction::from_fn(m.clone(), |x| x[0] - x[1] * x[1]), |a, b| a + b).unwrap();
        let r = tv_dual(&f, mb, &opts()).unwrap();
        let lp = dual_tv_lp(&f, mb, None, None).unwrap();
        prop_assert!(certificate_ok(&r));
        prop_assert!(agree(&r, lp.value, lp.upper), "pdhg {} lp {} {}", r.value, lp.value, lp.upper);
    }

    #[test]
    fn degenerate_measures_match_lp_oracle(seed in 0u64..10_000, mb in 1.0f64..40.0) {
        let mut w = vec![0.0; 64];
        for (i, x) in w.iter_mut().enumerate() {
            let (r, c) = (i / 8, i % 8);
            if !(r + seed as usize).is_multiple_of(3) || c == 4 {
                *x = 1.0 + (i % 5) as f64 * 0.3;
            }
        }
        let m = with_weights(&[8, 8], w);
        let f = random_lipschitz(&m, seed);
        let r = tv_dual(&f, mb, &opts()).unwrap();
        let lp = dual_tv_lp(&f, mb, None, None).unwrap();
        prop_assert!(certificate_ok(&r));
        prop_assert!(agree(&r, lp.value, lp.upper), "pdhg {} lp {} {}", r.value, lp.value, lp.upper);
    }
}

#[test]
fn derivation_formulation_matches_lp_oracle() {
    for m in [
        uniform(&[6, 6]),
        bvgrid::scenarios::scenario("thin-strip").unwrap().measure,
    ] {
        let fam = generate_family(&m, &FamilyConfig::default()).unwrap();
        let fb = compute_fibers(&fam, DEFAULT_SVD_THRESHOLD).unwrap();
        let f = GridFunction::from_fn(m.clone(), |x| (4.0 * x[0]).sin() + x[1]);
        let mb = 4.0 / m.spacing();
        let r = tv_derivation(&f, &fb, mb, &opts()).unwrap();
        let lp = dual_tv_lp(&f, mb, None, Some(&fb)).unwrap();
        assert!(certificate_ok(&r));
        assert!(
            agree(&r, lp.value, lp.upper),
            "pdhg {} lp {}",
            r.value,
            lp.value
        );
    }
}

#[test]
fn localized_matches_lp_oracle() {
    let m = uniform(&[9, 9]);
    let f = random_lipschitz(&m, 3);
    let omega = OpenRegion::new(vec![CellBox::new(vec![1, 2], vec![7, 9]).unwrap()], 1).unwrap();
    let mask = omega.eroded_mask(&m);
    let r = tv_localized(&f, &omega, 20.0, &opts()).unwrap();
    let lp = dual_tv_lp(&f, 20.0, Some(&mask), None).unwrap();
    assert!(
        agree(&r, lp.value, lp.upper),
        "pdhg {} lp {}",
        r.value,
        lp.value
    );
}

#[test]
fn returned_field_certifies_the_value() {
    let m = uniform(&[16, 16]);
    let f = random_lipschitz(&m, 11);
    let mb = 8.0 / m.spacing();
    let s = tv_dual_solution(&f, mb, &opts()).unwrap();
    let cert = is_admissible(&s.field, mb, 1e-9);
    assert!(cert.admissible, "{cert:?}");
    let div = mu_divergence(&s.field).div;
    let pairing: f64 = m
        .support()
        .map(|i| f.get(i) * div.get(i) * m.cell_mass(i))
        .sum();
    assert!(pairing <= s.report.value + opts().gap_tol * (1.0 + s.report.value));
    assert!((pairing - s.report.value).abs() <= 1e-9 * (1.0 + pairing.abs()));
}

#[test]
fn halfspace_indicator_has_unit_perimeter() {
    let m = uniform(&[8, 8]);
    let f = GridFunction::from_fn(m.clone(), |x| if x[0] >= 0.5 { 1.0 } else { 0.0 });
    let r = tv_dual(&f, 16.0 / m.spacing(), &opts()).unwrap();
    assert!((r.value - 1.0).abs() <= 1e-6 * 2.0, "{}", r.value);
    let lp = dual_tv_lp(&f, 16.0 / m.spacing(), None, None).unwrap();
    assert!((lp.value - 1.0).abs() <= 1e-7);
}

#[test]
fn scale_covariance() {
    let m = uniform(&[7, 7]);
    let f = random_lipschitz(&m, 5);
    let tight = DualOptions {
        gap_tol: 1e-11,
        max_iter: 2_000_000,
        ..opts()
    };
    let base = tv_dual(&f, 30.0, &tight).unwrap();
    assert!(base.converged);
    let eps = [4.0, 3.0, 2.0].map(|c| c * m.spacing());
    for c in [-2.5, 0.5, 3.0] {
        let cf = f.scale(c);
        let r = tv_dual(&cf, 30.0, &tight).unwrap();
        assert!(
            (r.value - c.abs() * base.value).abs() <= 1e-8,
            "c {c}: {} vs {}",
            r.value,
            c.abs() * base.value
        );
        for mode in [RelaxMode::Lip, RelaxMode::Smooth] {
            let a = tv_relaxed(&f, mode, &eps, 1.0).unwrap().value;
            let b = tv_relaxed(&cf, mode, &eps, 1.0).unwrap().value;
            assert!((b - c.abs() * a).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }
}

#[test]
fn monotone_in_bound_and_region() {
    let m = uniform(&[12, 12]);
    let f = random_lipschitz(&m, 8);
    let tol = |v: f64| 2.0 * opts().gap_tol * (1.0 + v);
    let mut prev = 0.0;
    for mb in [1.0, 4.0, 16.0, 64.0, 256.0] {
        let v = tv_dual(&f, mb, &opts()).unwrap().value;
        assert!(v + tol(v) >= prev, "M {mb}: {v} < {prev}");
        prev = v;
    }
    let inner = OpenRegion::new(vec![CellBox::new(vec![3, 3], vec![8, 8]).unwrap()], 1).unwrap();
    let outer = OpenRegion::new(vec![CellBox::new(vec![1, 2], vec![10, 11]).unwrap()], 1).unwrap();
    let a = tv_localized(&f, &inner, 48.0, &opts()).unwrap().value;
    let b = tv_localized(&f, &outer, 48.0, &opts()).unwrap().value;
    let c = tv_dual(&f, 48.0, &opts()).unwrap().value;
    assert!(a <= b + tol(b) && b <= c + tol(c), "{a} {b} {c}");
}

#[test]
fn empty_region_is_reported() {
    let m = uniform(&[6, 6]);
    let f = random_lipschitz(&m, 1);
    let omega = OpenRegion::new(vec![CellBox::new(vec![2, 2], vec![3, 3]).unwrap()], 1).unwrap();
    assert!(matches!(
        tv_localized(&f, &omega, 10.0, &opts()),
        Err(bvgrid::Error::EmptyRegion)
    ));
}

#[test]
fn box_measure_is_bounded_by_total() {
    let m = uniform(&[16, 16]);
    let f = GridFunction::from_fn(m.clone(), |x| if x[0] + x[1] >= 1.0 { 1.0 } else { 0.0 });
    let mb = 16.0 / m.spacing();
    let total = tv_dual(&f, mb, &opts()).unwrap().value;
    let left = tv_measure_on_box(
        &f,
        &CellBox::new(vec![0, 0], vec![8, 16]).unwrap(),
        mb,
        &DEFAULT_DILATIONS,
        &opts(),
    )
    .unwrap();
    let right = tv_measure_on_box(
        &f,
        &CellBox::new(vec![8, 0], vec![16, 16]).unwrap(),
        mb,
        &DEFAULT_DILATIONS,
        &opts(),
    )
    .unwrap();
    assert!(left <= total * (1.0 + 1e-5) && right <= total * (1.0 + 1e-5));
    assert!(
        left + right >= total * (1.0 - 1e-5),
        "{left} + {right} < {total}"
    );
}

#[test]
fn membership_flags_bounded_variation() {
    let m = uniform(&[12, 12]);
    let f = random_lipschitz(&m, 4);
    let r = bv_membership(&f, &default_m_schedule(&m), 1e-3, &opts()).unwrap();
    assert!(r.member, "{}", r.relative_increment);
    let sched: Vec<f64> = default_m_schedule(&m);
    assert!(bv_membership(&f, &sched[..1], 1e-3, &opts()).is_err());
}
