//! JSON input documents and CSV cell dumps.
//!
//! A measure document gives `shape`, `spacing`, optional `origin` and either
//! explicit row-major `weights` or a named `weight_expr`. A function
//! document gives `values` or a named `expr`. Dumps are one CSV row per
//! cell: `index, x1..xd, w`, then any requested data columns.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{FieldDomain, GridFunction, GridMeasure, GridVectorField};
use crate::scalar::Real;

/// Inclusive cell-index box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexBox {
    pub lo: Vec<usize>,
    pub hi: Vec<usize>,
}

impl IndexBox {
    fn contains(&self, idx: &[usize]) -> bool {
        idx.iter()
            .zip(&self.lo)
            .zip(&self.hi)
            .all(|((&x, &lo), &hi)| lo <= x && x <= hi)
    }
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum WeightExpr {
    Uniform {
        #[serde(default = "one")]
        value: f64,
    },
    /// Slab `lo <= x_axis <= hi` (cell indices), full extent in the other axes.
    Strip {
        axis: usize,
        lo: usize,
        hi: usize,
        #[serde(default = "one")]
        value: f64,
    },
    /// One-cell-thick segment along `along`, through the cell `at`, from index `lo` to `hi`.
    Segment {
        along: usize,
        at: Vec<usize>,
        lo: usize,
        hi: usize,
        #[serde(default = "one")]
        value: f64,
    },
    /// Isolated cells: the listed ones, or every cell whose indices are all `≡ offset (mod stride)`.
    Atoms {
        #[serde(default)]
        cells: Vec<Vec<usize>>,
        #[serde(default)]
        stride: Option<usize>,
        #[serde(default)]
        offset: usize,
        #[serde(default = "one")]
        value: f64,
    },
    /// Piecewise constant density; cells outside every box get `background`.
    Boxes {
        boxes: Vec<IndexBox>,
        values: Vec<f64>,
        #[serde(default)]
        background: f64,
    },
    /// `base + slope * x_axis` evaluated at cell centers.
    Density { axis: usize, base: f64, slope: f64 },
}

impl WeightExpr {
    pub fn weights(&self, shape: &[usize], spacing: f64, origin: &[f64]) -> Result<Vec<f64>> {
        let d = shape.len();
        let check_axis = |k: usize| {
            if k < d {
                Ok(())
            } else {
                Err(Error::MalformedSpec(format!(
                    "axis {k} out of range for dimension {d}"
                )))
            }
        };
        let mut idx = vec![0usize; d];
        let len: usize = shape.iter().product();
        let mut w = Vec::with_capacity(len);
        match self {
            WeightExpr::Strip { axis, .. }
            | WeightExpr::Segment { along: axis, .. }
            | WeightExpr::Density { axis, .. } => check_axis(*axis)?,
            _ => {}
        }
        if let WeightExpr::Segment { at, .. } = self {
            if at.len() != d {
                return Err(Error::MalformedSpec(
                    "segment `at` needs one index per axis".into(),
                ));
            }
        }
        if let WeightExpr::Boxes { boxes, values, .. } = self {
            if boxes.len() != values.len() {
                return Err(Error::MalformedSpec("one value per box required".into()));
            }
            if boxes.iter().any(|b| b.lo.len() != d || b.hi.len() != d) {
                return Err(Error::MalformedSpec(
                    "box corners need one index per axis".into(),
                ));
            }
        }
        for _ in 0..len {
            let value = match self {
                WeightExpr::Uniform { value } => *value,
                WeightExpr::Strip {
                    axis,
                    lo,
                    hi,
                    value,
                } => {
                    if (*lo..=*hi).contains(&idx[*axis]) {
                        *value
                    } else {
                        0.0
                    }
                }
                WeightExpr::Segment {
                    along,
                    at,
                    lo,
                    hi,
                    value,
                } => {
                    let on = (0..d).all(|k| {
                        if k == *along {
                            (*lo..=*hi).contains(&idx[k])
                        } else {
                            idx[k] == at[k]
                        }
                    });
                    if on {
                        *value
                    } else {
                        0.0
                    }
                }
                WeightExpr::Atoms {
                    cells,
                    stride,
                    offset,
                    value,
                } => {
                    let listed = cells.iter().any(|c| c.as_slice() == idx.as_slice());
                    let lattice =
                        stride.is_some_and(|s| s > 0 && idx.iter().all(|&x| x % s == offset % s));
                    if listed || lattice {
                        *value
                    } else {
                        0.0
                    }
                }
                WeightExpr::Boxes {
                    boxes,
                    values,
                    background,
                } => boxes
                    .iter()
                    .zip(values)
                    .find(|(b, _)| b.contains(&idx))
                    .map_or(*background, |(_, &v)| v),
                WeightExpr::Density { axis, base, slope } => {
                    base + slope * (origin[*axis] + (idx[*axis] as f64 + 0.5) * spacing)
                }
            };
            w.push(value);
            for k in (0..d).rev() {
                idx[k] += 1;
                if idx[k] < shape[k] {
                    break;
                }
                idx[k] = 0;
            }
        }
        Ok(w)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    pub shape: Vec<usize>,
    pub spacing: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight_expr: Option<WeightExpr>,
}

impl MeasureDoc {
    pub fn from_measure<T: Real>(m: &GridMeasure<T>) -> Self {
        MeasureDoc {
            dim: Some(m.dim()),
            shape: m.shape().to_vec(),
            spacing: m.spacing().as_f64(),
            origin: Some(m.origin().iter().map(|x| x.as_f64()).collect()),
            weights: Some(m.weights().iter().map(|x| x.as_f64()).collect()),
            weight_expr: None,
        }
    }

    pub fn build<T: Real>(&self) -> Result<GridMeasure<T>> {
        let d = self.shape.len();
        if let Some(dim) = self.dim {
            if dim != d {
                return Err(Error::MalformedSpec(format!(
                    "dim {dim} but shape has {d} axes"
                )));
            }
        }
        let origin = self.origin.clone().unwrap_or_else(|| vec![0.0; d]);
        if origin.len() != d {
            return Err(Error::MalformedSpec(format!(
                "origin has {} entries, expected {d}",
                origin.len()
            )));
        }
        let weights = match (&self.weights, &self.weight_expr) {
            (Some(w), None) => w.clone(),
            (None, Some(e)) => e.weights(&self.shape, self.spacing, &origin)?,
            (None, None) => {
                return Err(Error::MalformedSpec(
                    "need `weights` or `weight_expr`".into(),
                ))
            }
            (Some(_), Some(_)) => {
                return Err(Error::MalformedSpec(
                    "`weights` and `weight_expr` are exclusive".into(),
                ))
            }
        };
        GridMeasure::new(
            self.shape.clone(),
            T::lit(self.spacing),
            origin.into_iter().map(T::lit).collect(),
            weights.into_iter().map(T::lit).collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FunctionExpr {
    Coordinate {
        axis: usize,
    },
    /// `1` where `normal · x >= offset`, else `0`.
    IndicatorHalfspace {
        normal: Vec<f64>,
        offset: f64,
    },
    GaussianBump {
        center: Vec<f64>,
        sigma: f64,
        #[serde(default = "one")]
        amplitude: f64,
    },
    /// `max(0, height - |x - center|)`.
    Tent {
        center: Vec<f64>,
        height: f64,
    },
    /// `normal · x`.
    Linear {
        normal: Vec<f64>,
    },
    /// `prod_k sin(pi freq_k x_k)`.
    SineProduct {
        freq: Vec<f64>,
    },
}

impl FunctionExpr {
    pub fn eval(&self, x: &[f64]) -> f64 {
        let dotp = |n: &[f64]| n.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        let dist2 = |c: &[f64]| c.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        match self {
            FunctionExpr::Coordinate { axis } => x[*axis],
            FunctionExpr::IndicatorHalfspace { normal, offset } => {
                if dotp(normal) >= *offset {
                    1.0
                } else {
                    0.0
                }
            }
            FunctionExpr::GaussianBump {
                center,
                sigma,
                amplitude,
            } => amplitude * (-dist2(center) / (2.0 * sigma * sigma)).exp(),
            FunctionExpr::Tent { center, height } => (height - dist2(center).sqrt()).max(0.0),
            FunctionExpr::Linear { normal } => dotp(normal),
            FunctionExpr::SineProduct { freq } => freq
                .iter()
                .zip(x)
                .map(|(f, &xi)| (std::f64::consts::PI * f * xi).sin())
                .product(),
        }
    }

    fn check(&self, d: usize) -> Result<()> {
        let bad = match self {
            FunctionExpr::Coordinate { axis } => *axis >= d,
            FunctionExpr::IndicatorHalfspace { normal: v, .. }
            | FunctionExpr::GaussianBump { center: v, .. }
            | FunctionExpr::Tent { center: v, .. }
            | FunctionExpr::Linear { normal: v }
            | FunctionExpr::SineProduct { freq: v } => v.len() != d,
        };
        if bad {
            Err(Error::MalformedSpec(format!(
                "function expression does not fit dimension {d}"
            )))
        } else {
            Ok(())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunctionDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expr: Option<FunctionExpr>,
}

impl FunctionDoc {
    pub fn expr(expr: FunctionExpr) -> Self {
        FunctionDoc {
            values: None,
            expr: Some(expr),
        }
    }

    pub fn build<T: Real>(&self, m: &Arc<GridMeasure<T>>) -> Result<GridFunction<T>> {
        match (&self.values, &self.expr) {
            (Some(v), None) => GridFunction::new(m.clone(), v.iter().map(|&x| T::lit(x)).collect()),
            (None, Some(e)) => {
                e.check(m.dim())?;
                let values = (0..m.len())
                    .map(|i| {
                        let x: Vec<f64> = m.center(i).iter().map(|c| c.as_f64()).collect();
                        T::lit(e.eval(&x))
                    })
                    .collect();
                GridFunction::new(m.clone(), values)
            }
            (None, None) => Err(Error::MalformedSpec("need `values` or `expr`".into())),
            (Some(_), Some(_)) => Err(Error::MalformedSpec(
                "`values` and `expr` are exclusive".into(),
            )),
        }
    }
}

fn parse_json<D: serde::de::DeserializeOwned>(text: &str) -> Result<D> {
    serde_json::from_str(text).map_err(|e| Error::MalformedSpec(e.to_string()))
}

pub fn parse_measure<T: Real>(text: &str) -> Result<GridMeasure<T>> {
    parse_json::<MeasureDoc>(text)?.build()
}

pub fn parse_function<T: Real>(text: &str, m: &Arc<GridMeasure<T>>) -> Result<GridFunction<T>> {
    parse_json::<FunctionDoc>(text)?.build(m)
}

fn read_file(path: &Path) -> Result<String> {
    let mut s = String::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_string(&mut s))
        .map_err(|e| Error::MalformedSpec(format!("{}: {e}", path.display())))?;
    Ok(s)
}

pub fn load_measure<T: Real>(path: &Path) -> Result<GridMeasure<T>> {
    parse_measure(&read_file(path)?)
}

pub fn load_function<T: Real>(path: &Path, m: &Arc<GridMeasure<T>>) -> Result<GridFunction<T>> {
    parse_function(&read_file(path)?, m)
}

/// Column-wise builder for a per-cell CSV dump.
#[derive(Debug, Clone)]
pub struct CellTable<T> {
    measure: Arc<GridMeasure<T>>,
    headers: Vec<String>,
    columns: Vec<Vec<T>>,
}

impl<T: Real> CellTable<T> {
    pub fn new(measure: Arc<GridMeasure<T>>) -> Self {
        CellTable {
            measure,
            headers: Vec::new(),
            columns: Vec::new(),
        }
    }

    pub fn column(mut self, name: impl Into<String>, values: Vec<T>) -> Result<Self> {
        if values.len() != self.measure.len() {
            return Err(Error::MeasureMismatch);
        }
        self.headers.push(name.into());
        self.columns.push(values);
        Ok(self)
    }

    pub fn function(self, name: &str, f: &GridFunction<T>) -> Result<Self> {
        f.check_grid(&self.measure)?;
        self.column(name, f.values().to_vec())
    }

    /// Columns `{prefix}1..{prefix}d`.
    pub fn field(mut self, prefix: &str, v: &GridVectorField<T>) -> Result<Self> {
        v.check_grid(&self.measure)?;
        for k in 0..v.dim() {
            let values = (0..self.measure.len()).map(|i| v.component(i, k)).collect();
            self = self.column(format!("{prefix}{}", k + 1), values)?;
        }
        Ok(self)
    }

    pub fn write<W: Write>(&self, out: W) -> Result<()> {
        let m = &self.measure;
        let d = m.dim();
        let mut w = csv::Writer::from_writer(out);
        let mut head = vec!["index".to_string()];
        head.extend((1..=d).map(|k| format!("x{k}")));
        head.push("w".into());
        head.extend(self.headers.iter().cloned());
        let io = |e: csv::Error| Error::InvalidArgument(e.to_string());
        w.write_record(&head).map_err(io)?;
        for i in 0..m.len() {
            let mut row = vec![i.to_string()];
            row.extend(m.center(i).iter().map(|x| x.as_f64().to_string()));
            row.push(m.weight(i).as_f64().to_string());
            row.extend(self.columns.iter().map(|c| c[i].as_f64().to_string()));
            w.write_record(&row).map_err(io)?;
        }
        w.flush().map_err(|e| Error::InvalidArgument(e.to_string()))
    }

    pub fn write_path(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)
            .map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))?;
        self.write(std::io::BufWriter::new(file))
    }
}

/// Parsed cell dump: headers and rows in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct CellDump {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl CellDump {
    pub fn read<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let bad = |e: csv::Error| Error::MalformedSpec(e.to_string());
        let headers = r
            .headers()
            .map_err(bad)?
            .iter()
            .map(str::to_string)
            .collect();
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(bad)?;
            let row = rec
                .iter()
                .map(|s| {
                    s.parse::<f64>()
                        .map_err(|e| Error::MalformedSpec(format!("{s:?}: {e}")))
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        Ok(CellDump { headers, rows })
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let c = self.headers.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[c]).collect())
    }

    /// Rebuilds the weights on the grid of `m`.
    pub fn measure<T: Real>(&self, m: &GridMeasure<T>) -> Result<GridMeasure<T>> {
        let w = self
            .column("w")
            .ok_or_else(|| Error::MalformedSpec("missing column w".into()))?;
        m.with_weights(w.into_iter().map(T::lit).collect())
    }

    pub fn function<T: Real>(
        &self,
        name: &str,
        m: &Arc<GridMeasure<T>>,
    ) -> Result<GridFunction<T>> {
        let v = self
            .column(name)
            .ok_or_else(|| Error::MalformedSpec(format!("missing column {name}")))?;
        GridFunction::new(m.clone(), v.into_iter().map(T::lit).collect())
    }

    pub fn field<T: Real>(
        &self,
        prefix: &str,
        m: &Arc<GridMeasure<T>>,
    ) -> Result<GridVectorField<T>> {
        let d = m.dim();
        let cols = (1..=d)
            .map(|k| {
                self.column(&format!("{prefix}{k}"))
                    .ok_or_else(|| Error::MalformedSpec(format!("missing column {prefix}{k}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut data = Vec::with_capacity(m.len() * d);
        for i in 0..m.len() {
            for c in &cols {
                data.push(T::lit(*c.get(i).ok_or(Error::MeasureMismatch)?));
            }
        }
        GridVectorField::new(m.clone(), data, FieldDomain::AllCells)
    }
}

/// Pretty JSON with a trailing newline.
pub fn to_json<S: Serialize>(value: &S) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn explicit_weights_round_trip() {
        let text = r#"{"dim": 2, "shape": [2, 3], "spacing": 0.5, "weights": [1, 0, 2, 0, 0, 3]}"#;
        let m: GridMeasure<f64> = parse_measure(text).unwrap();
        assert_eq!(m.weights(), &[1.0, 0.0, 2.0, 0.0, 0.0, 3.0]);
        let doc = MeasureDoc::from_measure(&m);
        let again: GridMeasure<f64> = parse_measure(&to_json(&doc)).unwrap();
        assert_eq!(again, m);
    }

    #[test]
    fn weight_expressions() {
        let seg = r#"{"shape": [5, 4], "spacing": 1, "weight_expr": {"kind": "segment", "along": 0, "at": [0, 2], "lo": 1, "hi": 3}}"#;
        let m: GridMeasure<f64> = parse_measure(seg).unwrap();
        let support: Vec<usize> = m.support().collect();
        assert_eq!(
            support,
            vec![m.flat(&[1, 2]), m.flat(&[2, 2]), m.flat(&[3, 2])]
        );

        let atoms = r#"{"shape": [6, 6], "spacing": 1, "weight_expr": {"kind": "atoms", "stride": 3, "offset": 1}}"#;
        let m: GridMeasure<f64> = parse_measure(atoms).unwrap();
        assert_eq!(m.support_len(), 4);

        let dens = r#"{"shape": [2], "spacing": 0.5, "weight_expr": {"kind": "density", "axis": 0, "base": 1, "slope": 2}}"#;
        let m: GridMeasure<f64> = parse_measure(dens).unwrap();
        assert_eq!(m.weights(), &[1.5, 2.5]);
    }

    #[test]
    fn malformed_documents_are_rejected() {
        assert!(matches!(
            parse_measure::<f64>("{"),
            Err(Error::MalformedSpec(_))
        ));
        assert!(matches!(
            parse_measure::<f64>(r#"{"shape": [2], "spacing": 1}"#),
            Err(Error::MalformedSpec(_))
        ));
        assert!(matches!(
            parse_measure::<f64>(r#"{"dim": 3, "shape": [2], "spacing": 1, "weights": [1, 1]}"#),
            Err(Error::MalformedSpec(_))
        ));
        assert!(matches!(
            parse_measure::<f64>(r#"{"shape": [2], "spacing": 1, "weights": [1, -1]}"#),
            Err(Error::NegativeWeight { index: 1, .. })
        ));
    }

    #[test]
    fn function_expressions() {
        let m: Arc<GridMeasure<f64>> = Arc::new(GridMeasure::uniform(vec![4, 4], 0.25).unwrap());
        let f = parse_function(r#"{"expr": {"kind": "coordinate", "axis": 1}}"#, &m).unwrap();
        assert_eq!(f.get(m.flat(&[0, 2])), 0.625);
        let f = parse_function(
            r#"{"expr": {"kind": "indicator_halfspace", "normal": [1, 0], "offset": 0.5}}"#,
            &m,
        )
        .unwrap();
        assert_eq!(f.integrate(), 0.5);
        assert!(parse_function(r#"{"expr": {"kind": "coordinate", "axis": 2}}"#, &m).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let m = Arc::new(
            GridMeasure::<f64>::new(
                vec![3, 2],
                0.1,
                vec![0.0, 1.0],
                vec![1.0, 0.0, 0.3, 2.0, 1.0, 7.0],
            )
            .unwrap(),
        );
        let f = GridFunction::from_fn(m.clone(), |x| x[0].sin() / 3.0);
        let v = GridVectorField::from_fn(m.clone(), FieldDomain::AllCells, |x| {
            vec![x[1], -x[0] / 7.0]
        });
        let mut buf = Vec::new();
        CellTable::new(m.clone())
            .function("f", &f)
            .unwrap()
            .field("v", &v)
            .unwrap()
            .write(&mut buf)
            .unwrap();
        let dump = CellDump::read(buf.as_slice()).unwrap();
        assert_eq!(dump.headers, ["index", "x1", "x2", "w", "f", "v1", "v2"]);
        assert_eq!(&dump.measure(&m).unwrap(), m.as_ref());
        assert_eq!(dump.function("f", &m).unwrap().values(), f.values());
        assert_eq!(dump.field("v", &m).unwrap().data(), v.data());
    }
}
