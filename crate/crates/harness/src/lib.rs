//! Evaluation harness for process channels: conformance replay of mutated
//! traces, dispute scenarios with cost accounting, and break-even analysis.

pub mod conformance;
pub mod cost;
pub mod report;
pub mod scenario;
pub mod trace;

use pchan_core::fixtures::Case;
use thiserror::Error;

pub use conformance::{replay_conformance, ClassificationReport, TraceResult};
pub use cost::{break_even, measure_case, BaselineCost, BreakEven, CaseCosts, CostReport, Mix};
pub use report::{evaluate, Evaluation};
pub use scenario::{run_scenario, ScenarioKind, ScenarioOutcome, ScenarioRun, ScenarioSpec};
pub use trace::{classify, mutate_traces, Mutation, Trace, Verdict};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{case} has no variant {variant}")]
    NoSuchVariant { case: Case, variant: usize },
    #[error("no traces or no tasks to mutate")]
    NothingToMutate,
    #[error("only {produced} of {wanted} non-conforming mutants after {attempts} attempts")]
    MutationBudget { wanted: usize, produced: usize, attempts: usize },
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("scenario error: {0}")]
    Scenario(String),
}

/// Conforming variants of a fixture as traces.
pub fn variant_traces(case: Case) -> Vec<Trace> {
    case.variants().into_iter().map(Trace::new).collect()
}
