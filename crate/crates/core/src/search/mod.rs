//! Relative-attribute feedback search.
//!
//! Database images are ranked by how many feedback constraints they satisfy.
//! Within a group satisfying the same number, the prominence variant orders
//! images by the log-relevance `sum_c log P_{m_c}(x_i, x_ref_c)`, the baseline
//! variant leaves them in a seeded random order.

mod experiment;
mod session;
mod simulate;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use experiment::{
    run_search_experiment, sign_test, write_traces_csv, ExperimentConfig, ExperimentResult, IterationSummary,
    TargetTrace,
};
pub use session::{SearchSession, SessionMode};
pub use simulate::{feedback_attribute, simulate_user_feedback, FeedbackParams, ProminenceOracle};

use crate::dataset::AttributeId;
use crate::error::{Error, Result};
use crate::prominence::{Polarity, ProminenceModel};
use crate::scores::ScoreMatrix;

/// Probabilities are clamped to `[RELEVANCE_FLOOR, 1 - RELEVANCE_FLOOR]`
/// before taking logs.
pub const RELEVANCE_FLOOR: f64 = 1e-9;

/// "The target has more (or less) of `attribute` than `reference`."
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Constraint {
    /// Database index of the reference image.
    pub reference: usize,
    pub attribute: AttributeId,
    pub polarity: Polarity,
}

impl Constraint {
    pub fn is_satisfied_by(&self, image: &[f64], reference: &[f64]) -> bool {
        let (a, b) = (image[self.attribute], reference[self.attribute]);
        match self.polarity {
            Polarity::More => a > b,
            Polarity::Less => a < b,
            Polarity::Equal => false,
        }
    }
}

/// Number of constraints `image` satisfies (strict inequalities).
pub fn satisfaction_count(image: usize, constraints: &[Constraint], scores: &ScoreMatrix) -> usize {
    constraints
        .iter()
        .filter(|c| c.is_satisfied_by(scores.row(image), scores.row(c.reference)))
        .count()
}

pub fn log_relevance_term(p: f64) -> f64 {
    p.clamp(RELEVANCE_FLOOR, 1.0 - RELEVANCE_FLOOR).ln()
}

/// `sum_c log P_{m_c}(image, ref_c)`; zero for no constraints.
pub fn prominence_relevance(
    image: usize,
    constraints: &[Constraint],
    model: &ProminenceModel,
    scores: &ScoreMatrix,
) -> Result<f64> {
    constraints.iter().try_fold(0.0, |acc, c| {
        let p = model.confidence(c.attribute, scores.row(image), scores.row(c.reference))?;
        Ok(acc + log_relevance_term(p))
    })
}

/// How images within a satisfaction group are ordered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Prominence,
    Baseline,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Prominence => "prominence",
            Variant::Baseline => "baseline",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "prominence" => Ok(Variant::Prominence),
            "baseline" => Ok(Variant::Baseline),
            _ => Err(Error::InvalidParameter(format!("unknown search variant `{s}`"))),
        }
    }
}

/// Immutable state shared by every session over one database.
#[derive(Debug, Clone)]
pub struct SearchEngine {
    pub scores: ScoreMatrix,
    pub model: ProminenceModel,
}

impl SearchEngine {
    pub fn new(scores: ScoreMatrix, model: ProminenceModel) -> Result<Self> {
        if scores.n_attributes() != model.n_attributes() {
            return Err(Error::LengthMismatch {
                expected: model.n_attributes(),
                found: scores.n_attributes(),
            });
        }
        if scores.is_empty() {
            return Err(Error::InvalidParameter("search database is empty".into()));
        }
        Ok(Self { scores, model })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn n_attributes(&self) -> usize {
        self.scores.n_attributes()
    }

    pub fn validate(&self, c: &Constraint) -> Result<()> {
        if c.reference >= self.len() {
            return Err(Error::NotFound(format!("database image {}", c.reference)));
        }
        if c.attribute >= self.n_attributes() {
            return Err(Error::BadAttribute(c.attribute));
        }
        if c.polarity == Polarity::Equal {
            return Err(Error::InvalidParameter("feedback polarity must be more or less".into()));
        }
        Ok(())
    }
}
