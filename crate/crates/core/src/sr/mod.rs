//! Equation discovery: sparse regression over a polynomial library and
//! genetic-programming symbolic regression.

mod discover;
mod expr;
mod gp;
mod library;

pub use discover::{
    discover, regress, report_csv, report_text, sample_targets, ComponentFit, Discovery, DiscoverySettings, Method,
    TargetSource,
};
pub use expr::{monomial_text, Exponents, Expression, Polynomial, VARIABLE_NAMES};
pub use gp::{gp_regress, GpConfig, GpFit, Operator};
pub use library::{build_library, stlsq, CandidateLibrary, SparseModel, StlsqConfig, DEFAULT_RIDGE};
