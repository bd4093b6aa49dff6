//! Builtin measures, functions and fields used by the CLI and the checks.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::{FieldDomain, GridFunction, GridMeasure, GridVectorField};
use crate::io::{FunctionDoc, FunctionExpr, IndexBox, MeasureDoc, WeightExpr};

#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: &'static str,
    pub measure_doc: MeasureDoc,
    pub measure: Arc<GridMeasure<f64>>,
    pub functions: Vec<(String, GridFunction<f64>)>,
    /// Admissible field for superposition runs.
    pub field: Option<GridVectorField<f64>>,
    /// `(g, f)` pairs for marginal checks.
    pub test_dict: Vec<(GridFunction<f64>, GridFunction<f64>)>,
    /// Both marginal identities hold exactly for `field` on `test_dict`.
    pub closed_form: bool,
    /// Every cell carries mass.
    pub full_support: bool,
}

pub const NAMES: [&str; 8] = [
    "uniform-square",
    "density-ramp",
    "two-box",
    "1d-strip",
    "thin-strip",
    "atomic-cloud",
    "plaquette",
    "e1-box",
];

fn doc(shape: Vec<usize>, weight_expr: WeightExpr) -> MeasureDoc {
    let h = 1.0 / shape[0] as f64;
    MeasureDoc {
        dim: Some(shape.len()),
        shape,
        spacing: h,
        origin: None,
        weights: None,
        weight_expr: Some(weight_expr),
    }
}

fn uniform(shape: Vec<usize>) -> MeasureDoc {
    doc(shape, WeightExpr::Uniform { value: 1.0 })
}

fn gaussian(d: usize, sigma: f64) -> FunctionExpr {
    FunctionExpr::GaussianBump {
        center: vec![0.5; d],
        sigma,
        amplitude: 1.0,
    }
}

fn coordinate(axis: usize) -> FunctionExpr {
    FunctionExpr::Coordinate { axis }
}

fn build(m: &Arc<GridMeasure<f64>>, e: FunctionExpr) -> GridFunction<f64> {
    FunctionDoc::expr(e)
        .build(m)
        .expect("builtin expression fits its grid")
}

fn field(m: &Arc<GridMeasure<f64>>, data: impl Fn(usize) -> Vec<f64>) -> GridVectorField<f64> {
    let flat = (0..m.len()).flat_map(data).collect();
    GridVectorField::new(m.clone(), flat, FieldDomain::AllCells)
        .expect("builtin field fits its grid")
}

/// `g ≡ 1` against every listed `f`.
fn unit_dict(
    m: &Arc<GridMeasure<f64>>,
    fs: &[FunctionExpr],
) -> Vec<(GridFunction<f64>, GridFunction<f64>)> {
    fs.iter()
        .map(|f| (GridFunction::constant(m.clone(), 1.0), build(m, f.clone())))
        .collect()
}

/// Scenarios that accept [`scenario_at`] with another resolution.
pub const SCALABLE: [&str; 5] = [
    "uniform-square",
    "density-ramp",
    "two-box",
    "1d-strip",
    "e1-box",
];

pub fn scenario(name: &str) -> Result<Scenario> {
    scenario_at(name, None)
}

/// [`scenario`] with `n` cells per axis instead of the default, for the
/// names in [`SCALABLE`].
pub fn scenario_at(name: &str, n: Option<usize>) -> Result<Scenario> {
    if let Some(n) = n {
        if !SCALABLE.contains(&name) {
            return Err(Error::InvalidArgument(format!(
                "scenario {name:?} has a fixed resolution"
            )));
        }
        if n < 2 || n % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "resolution must be even and at least 2, got {n}"
            )));
        }
    }
    let side = |default: usize| n.unwrap_or(default);
    let (measure_doc, fexprs): (MeasureDoc, Vec<(&str, FunctionExpr)>) = match name {
        "uniform-square" => (
            uniform(vec![side(32); 2]),
            vec![
                (
                    "halfspace",
                    FunctionExpr::IndicatorHalfspace {
                        normal: vec![1.0, 0.0],
                        offset: 0.5,
                    },
                ),
                ("gaussian", gaussian(2, 0.15)),
            ],
        ),
        "density-ramp" => (
            doc(
                vec![side(32); 2],
                WeightExpr::Density {
                    axis: 1,
                    base: 1.0,
                    slope: 1.0,
                },
            ),
            vec![("gaussian", gaussian(2, 0.35))],
        ),
        "two-box" => {
            let n = side(32);
            (
                doc(
                    vec![n, n],
                    WeightExpr::Boxes {
                        boxes: vec![
                            IndexBox {
                                lo: vec![0, 0],
                                hi: vec![n / 2 - 1, n - 1],
                            },
                            IndexBox {
                                lo: vec![n / 2, 0],
                                hi: vec![n - 1, n - 1],
                            },
                        ],
                        values: vec![1.0, 3.0],
                        background: 0.0,
                    },
                ),
                vec![(
                    "sine",
                    FunctionExpr::SineProduct {
                        freq: vec![1.0, 1.0],
                    },
                )],
            )
        }
        "1d-strip" => (
            uniform(vec![side(32)]),
            vec![
                (
                    "tent",
                    FunctionExpr::Tent {
                        center: vec![0.5],
                        height: 0.25,
                    },
                ),
                ("x1", coordinate(0)),
            ],
        ),
        "thin-strip" => (
            doc(
                vec![16, 8],
                WeightExpr::Segment {
                    along: 0,
                    at: vec![0, 4],
                    lo: 2,
                    hi: 13,
                    value: 1.0,
                },
            ),
            vec![("x1", coordinate(0)), ("x2", coordinate(1))],
        ),
        "atomic-cloud" => (
            doc(
                vec![9, 9],
                WeightExpr::Atoms {
                    cells: Vec::new(),
                    stride: Some(3),
                    offset: 1,
                    value: 1.0,
                },
            ),
            vec![
                ("x1", coordinate(0)),
                ("x2", coordinate(1)),
                ("gaussian", gaussian(2, 0.25)),
                (
                    "halfspace",
                    FunctionExpr::IndicatorHalfspace {
                        normal: vec![1.0, 1.0],
                        offset: 1.0,
                    },
                ),
            ],
        ),
        "plaquette" => (
            uniform(vec![2, 2]),
            vec![("x1", coordinate(0)), ("x2", coordinate(1))],
        ),
        "e1-box" => (
            uniform(vec![side(16); 2]),
            vec![("x1", coordinate(0)), ("x2", coordinate(1))],
        ),
        other => {
            return Err(Error::InvalidArgument(format!(
                "unknown scenario {other:?}; known: {}",
                NAMES.join(", ")
            )))
        }
    };
    let measure = Arc::new(measure_doc.build::<f64>()?);
    let functions = fexprs
        .iter()
        .map(|(n, e)| (n.to_string(), build(&measure, e.clone())))
        .collect();
    let m = &measure;
    let nonlinear = |d: usize| FunctionExpr::GaussianBump {
        center: vec![0.3; d],
        sigma: 0.2,
        amplitude: 1.0,
    };
    let (field, test_dict, closed_form) = match name {
        "1d-strip" => (
            Some(field(m, |_| vec![1.0])),
            unit_dict(m, &[coordinate(0), nonlinear(1)]),
            true,
        ),
        "thin-strip" => (
            Some(field(m, |i| {
                let c = m.coord(i, 0);
                vec![if m.is_support(i) && c < 13 { 1.0 } else { 0.0 }, 0.0]
            })),
            unit_dict(m, &[coordinate(0), coordinate(1), nonlinear(2)]),
            true,
        ),
        "plaquette" => {
            let s = std::f64::consts::FRAC_1_SQRT_2;
            (
                Some(field(m, |i| match (m.coord(i, 0), m.coord(i, 1)) {
                    (0, 0) => vec![s, -s],
                    (1, 0) => vec![0.0, s],
                    (0, 1) => vec![-s, 0.0],
                    _ => vec![0.0, 0.0],
                })),
                unit_dict(m, &[coordinate(0), coordinate(1), nonlinear(2)]),
                true,
            )
        }
        "e1-box" => (
            Some(field(m, |_| vec![1.0, 0.0])),
            vec![
                (build(m, coordinate(1)), build(m, coordinate(0))),
                (
                    build(m, coordinate(0)),
                    build(
                        m,
                        FunctionExpr::SineProduct {
                            freq: vec![1.0, 0.5],
                        },
                    ),
                ),
                (build(m, gaussian(2, 0.3)), build(m, nonlinear(2))),
            ],
            false,
        ),
        _ => (None, Vec::new(), false),
    };
    let full_support = measure.support_len() == measure.len();
    Ok(Scenario {
        name: NAMES.iter().copied().find(|n| *n == name).expect("listed"),
        measure_doc,
        measure,
        functions,
        field,
        test_dict,
        closed_form,
        full_support,
    })
}

impl Scenario {
    pub fn function(&self, name: &str) -> Result<&GridFunction<f64>> {
        self.functions
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, f)| f)
            .ok_or_else(|| {
                Error::InvalidArgument(format!("scenario {} has no function {name:?}", self.name))
            })
    }
}

/// `(scenario, function)` pairs on which the four total variations are compared.
pub fn equivalence_suite() -> Vec<(&'static str, &'static str)> {
    vec![
        ("uniform-square", "halfspace"),
        ("uniform-square", "gaussian"),
        ("density-ramp", "gaussian"),
        ("two-box", "sine"),
        ("1d-strip", "tent"),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calculus::{is_admissible, DEFAULT_ADMISSIBILITY_TOL};

    #[test]
    fn every_scenario_builds() {
        for name in NAMES {
            let s = scenario(name).unwrap();
            assert!(!s.functions.is_empty(), "{name}");
            if let Some(v) = &s.field {
                assert!(
                    is_admissible(v, f64::MAX, DEFAULT_ADMISSIBILITY_TOL).admissible,
                    "{name}"
                );
            }
        }
        assert!(scenario("nope").is_err());
    }

    #[test]
    fn rescaled_scenarios() {
        for name in SCALABLE {
            let s = scenario_at(name, Some(8)).unwrap();
            assert!(s.measure.shape().iter().all(|&n| n == 8), "{name}");
            assert_eq!(s.measure.spacing(), 0.125);
        }
        let tb = scenario_at("two-box", Some(8)).unwrap();
        assert_eq!(tb.measure.weight(3 * 8), 1.0);
        assert_eq!(tb.measure.weight(4 * 8), 3.0);
        assert!(scenario_at("plaquette", Some(8)).is_err());
        assert!(scenario_at("uniform-square", Some(7)).is_err());
    }

    #[test]
    fn supports() {
        assert_eq!(scenario("thin-strip").unwrap().measure.support_len(), 12);
        assert_eq!(scenario("atomic-cloud").unwrap().measure.support_len(), 9);
        for (s, f) in equivalence_suite() {
            let sc = scenario(s).unwrap();
            assert!(sc.full_support);
            sc.function(f).unwrap();
        }
    }
}
