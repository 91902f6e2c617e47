//! G-segments, the duality between price menus and indirect utilities,
//! incentive-compatibility checks and the profit functional.

mod duality;
mod grid;
mod segment;

use thiserror::Error;

use crate::expr::ExprError;
use crate::model::ModelError;

pub(crate) use duality::{better_choice, choice_tie};
pub use duality::{
    check_incentive_compatible, check_individually_rational, discrete_sobolev_distance,
    menu_from_utility, profit_functional, utility_from_menu, IcReport, IndirectUtility, IrReport,
    Menu, IC_TOL,
};
pub use grid::{product_grid, AgentGrid};
pub use segment::{
    check_g3_along_segment, check_g3_at, interpolate_allocation, segment_second_differences,
    solve_g_segment, G3Result, GSegment, SegmentSample, DEFAULT_STEPS, SEGMENT_TOL,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error(
        "segment solve did not converge at t = {t} (residual {residual:e}, last iterate {last:?})"
    )]
    NoConvergence {
        t: f64,
        last: Vec<f64>,
        residual: f64,
    },
    #[error("segment iterate left cl(Y x Z) at t = {t}: {point:?}")]
    LeftDomain { t: f64, point: Vec<f64> },
    #[error("grid needs at least two points per axis")]
    GridTooSmall,
    #[error("allocation has no assignment")]
    MissingAssignment,
    #[error("{0}")]
    InvalidInput(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl From<ExprError> for GeometryError {
    fn from(e: ExprError) -> Self {
        GeometryError::Model(ModelError::Expr(e))
    }
}
