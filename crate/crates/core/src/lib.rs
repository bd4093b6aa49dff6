//! Total variation, Sobolev slopes, derivations and flow decompositions for
//! weighted measures sampled on regular grids.
//!
//! Everything is generic over the scalar type through [`Real`]; the aliases
//! at the crate root fix it to `f64`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calculus;
pub mod derivation;
pub mod error;
pub mod grid;
pub mod io;
pub mod linalg;
pub mod lp_oracle;
pub mod scalar;
pub mod scenarios;
pub mod sobolev;
pub mod superposition;
pub mod tangent;
pub mod tv;

pub use error::{Error, Result};
pub use scalar::Real;

pub type GridMeasureF64 = grid::GridMeasure<f64>;
pub type GridFunctionF64 = grid::GridFunction<f64>;
pub type GridVectorFieldF64 = grid::GridVectorField<f64>;
pub type FiberFieldF64 = tangent::FiberField<f64>;
pub type GeneratingFamilyF64 = tangent::GeneratingFamily<f64>;
pub type DerivationF64 = derivation::Derivation<f64>;
pub type TVReportF64 = tv::TVReport<f64>;
pub type FluxGraphF64 = superposition::FluxGraph<f64>;
pub type CurveMeasureF64 = superposition::CurveMeasure<f64>;
