//! Exact solver for causal games: multi-agent influence diagrams with
//! mechanised extensions, equilibrium computation, subgame decomposition,
//! causal queries over rational outcomes, extensive-form conversion, and
//! agent-analysis metrics.
//!
//! All probabilities and utilities are `BigRational`; nothing is rounded
//! until a caller formats output.

pub mod analysis;
pub mod counterfactual;
pub mod dsl;
pub mod efg;
pub mod equilibrium;
#[cfg(test)]
pub(crate) mod fixtures;
pub mod graph;
pub mod inference;
pub mod mechanism;
pub mod model;
pub mod policy;
pub mod query;
pub mod rational;
pub mod subgame;

pub use graph::{Condensation, Dag, Digraph};
pub use model::{Cpd, GameModel, Level, VarKind, VariableDecl};
pub use rational::{parse_rational, q, qi, rational_to_f64, show_rational, Value, Q};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cycle detected: {0}")]
    CycleDetected(String),
    #[error("edge endpoint {0} is not a declared node")]
    DanglingEndpoint(String),
    #[error("unknown node {0}")]
    UnknownNode(String),
    #[error("query sets overlap on {0}")]
    OverlappingSets(String),
    #[error("variable {0} has no CPD")]
    MissingCpd(String),
    #[error("CPD row for {0} (context {1}) does not sum to 1")]
    RowNotNormalized(String, String),
    #[error("utility variable {0} has children")]
    UtilityHasChild(String),
    #[error("structural-level violation at {0}: {1}")]
    StructuralDiscipline(String, String),
    #[error("restriction context missing value for {0}")]
    ContextIncomplete(String),
    #[error("intervention on {0} with new parents introduces a cycle")]
    CycleIntroduced(String),
    #[error("conditioning event has probability zero: {0}")]
    ZeroProbabilityEvidence(String),
    #[error("enumeration would exceed the profile cap ({0} > {1})")]
    ExplosionGuard(u128, u128),
    #[error("equilibrium solver does not handle this game shape: {0}")]
    UnsupportedShape(String),
    #[error("no subgame perfect equilibrium found")]
    NoSpeFound,
    #[error("perturbed solutions did not converge")]
    NumericNonConvergence,
    #[error("quantifier {0} needs a comparison query")]
    InvalidQuantifier(String),
    #[error("answer set is empty: {0}")]
    EmptyAnswerSet(String),
    #[error("natural mapping mismatch: {0}")]
    MappingMismatch(String),
    #[error("invalid intervention sets: {0}")]
    InvalidInterventionSets(String),
    #[error("conditioning node {0} is not an ancestor of the intervened set")]
    NonAncestralConditioning(String),
    #[error("sensitivity {0} is not above the maximum action cost {1}")]
    SensitivityTooLow(String, String),
    #[error("{0} requires a single-decision model")]
    MultiDecisionUnsupported(String),
    #[error("parse error at {pos}: {msg}\n{snippet}")]
    Parse { pos: usize, msg: String, snippet: String },
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
