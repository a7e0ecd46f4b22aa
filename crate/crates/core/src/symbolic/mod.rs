//! Exact symbolic layer: canonical expressions, the expression parser, and
//! finite-dimensional function spaces with exact rational elimination.

mod expr;
mod parse;
mod space;

pub use crate::error::SymbolicError;
pub use expr::{rational_to_f64, AffineForm, Atom, CanonicalExpr, NumericExpr, TrigKind, VectorField};
pub use parse::{parse_expr, parse_expr_with, parse_rational};
pub use space::FunctionSpace;

#[cfg(test)]
pub(crate) use expr::rat;

/// Exact coefficient field.
pub type Rational = num_rational::BigRational;
