//! Concavity and convexity certification of the principal's objective: the
//! criterion matrix along G-segments, closed forms for the example families,
//! the fourth-order re-expression of segment convexity and the local
//! envelope test for type-independent profits.

mod closed_form;
mod fourth;
mod lemma49;
mod local;

use serde::Serialize;
use thiserror::Error;

use crate::expr::ExprError;
use crate::geometry::GeometryError;
use crate::model::ModelError;

pub use closed_form::{
    certify_closed_form, closed_form_bracket, closed_form_matrix, criterion_example1,
    criterion_example2, criterion_example3, family_margin, Example2Value, Example3Value,
};
pub use fourth::{
    fourth_order_at, fourth_order_test, FourthOrderReport, FourthOrderSample, FOURTH_ORDER_TOL,
};
pub use lemma49::{
    certify_lemma49, classify, criterion_matrix, CertificationReport, CriterionSample,
    DEFAULT_SAMPLES, DEFAULT_TOL,
};
pub use local::{
    gbar_double_transform, gbar_transform_check, local_gbar_star_test, x0_grid, LocalReport,
    LocalWitness, TransformReport,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CertifyError {
    #[error("Gbar_(xbar, ybar) is rank deficient at {point:?}")]
    RankDeficient { point: Vec<f64> },
    #[error("closed-form denominator vanishes at {point:?}")]
    SingularDenominator { point: Vec<f64> },
    #[error("model does not match the family: {0}")]
    FamilyMismatch(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("no convergence: {0}")]
    NoConvergence(String),
    #[error("iterate left cl(X) at {point:?}")]
    DomainExit { point: Vec<f64> },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Certification verdicts, from the sign of the criterion matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Linear,
    Concave,
    StrictlyConcaveSampled,
    UniformlyConcave,
    Convex,
    StrictlyConvexSampled,
    UniformlyConvex,
    Indefinite,
    Inconclusive,
}

impl Verdict {
    pub fn name(self) -> &'static str {
        match self {
            Verdict::Linear => "linear",
            Verdict::Concave => "concave",
            Verdict::StrictlyConcaveSampled => "strictly_concave_sampled",
            Verdict::UniformlyConcave => "uniformly_concave",
            Verdict::Convex => "convex",
            Verdict::StrictlyConvexSampled => "strictly_convex_sampled",
            Verdict::UniformlyConvex => "uniformly_convex",
            Verdict::Indefinite => "indefinite",
            Verdict::Inconclusive => "inconclusive",
        }
    }

    /// Linear or any of the concave levels.
    pub fn is_concave(self) -> bool {
        matches!(
            self,
            Verdict::Linear
                | Verdict::Concave
                | Verdict::StrictlyConcaveSampled
                | Verdict::UniformlyConcave
        )
    }

    /// Linear or any of the convex levels.
    pub fn is_convex(self) -> bool {
        matches!(
            self,
            Verdict::Linear
                | Verdict::Convex
                | Verdict::StrictlyConvexSampled
                | Verdict::UniformlyConvex
        )
    }
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}
