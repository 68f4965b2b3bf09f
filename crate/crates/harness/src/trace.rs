//! Event traces and the add/remove/swap mutations used for conformance runs.

use std::fmt;

use pchan_core::machine::{ProcessStateMachine, TaskRequest};
use pchan_core::model::ChoreographyModel;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "op")]
pub enum Mutation {
    Add { at: usize, task: usize },
    Remove { at: usize },
    Swap { a: usize, b: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trace {
    pub events: Vec<TaskRequest>,
    /// Index of the conforming trace this one was derived from, and how.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<(usize, Mutation)>,
}

impl Trace {
    pub fn new(events: Vec<TaskRequest>) -> Self {
        Trace { events, origin: None }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

impl fmt::Display for Trace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ids: Vec<&str> = self.events.iter().map(|e| e.task_id.as_str()).collect();
        write!(f, "<{}>", ids.join(", "))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "verdict", content = "at")]
pub enum Verdict {
    Conforming,
    /// Every event was accepted but the case cannot end without more tasks.
    Incomplete,
    RejectedAt(usize),
}

/// Reference classification by pure replay through the state machine.
pub fn classify(machine: &ProcessStateMachine, trace: &Trace) -> Verdict {
    match machine.replay(&trace.events) {
        Err((at, _)) => Verdict::RejectedAt(at),
        Ok(end) => completion_verdict(machine, &end),
    }
}

/// A trace whose events are all accepted conforms if its last state is an
/// end state or reaches one through silent choices alone.
pub fn completion_verdict(machine: &ProcessStateMachine, state: &pchan_core::marking::Marking) -> Verdict {
    if machine.completion_choices(state).is_some() {
        Verdict::Conforming
    } else {
        Verdict::Incomplete
    }
}

fn mutate(rng: &mut ChaCha8Rng, events: &[TaskRequest], pool: &[TaskRequest]) -> (Vec<TaskRequest>, Mutation) {
    let mut ops = vec![0u8, 1];
    if events.len() >= 2 {
        ops.push(2);
    }
    if events.is_empty() {
        ops.retain(|&o| o != 1);
    }
    let mut out = events.to_vec();
    match ops[rng.random_range(0..ops.len())] {
        0 => {
            let at = rng.random_range(0..=events.len());
            let task = rng.random_range(0..pool.len());
            out.insert(at, pool[task].clone());
            (out, Mutation::Add { at, task })
        }
        1 => {
            let at = rng.random_range(0..events.len());
            out.remove(at);
            (out, Mutation::Remove { at })
        }
        _ => {
            let a = rng.random_range(0..events.len());
            let mut b = rng.random_range(0..events.len() - 1);
            if b >= a {
                b += 1;
            }
            out.swap(a, b);
            (out, Mutation::Swap { a: a.min(b), b: a.max(b) })
        }
    }
}

/// `n` single-mutation variants of the given conforming traces, none of
/// which conforms. Tasks added by the add operation come from `model`
/// with their declared initiator.
pub fn mutate_traces(
    model: &ChoreographyModel,
    machine: &ProcessStateMachine,
    conforming: &[Trace],
    n: usize,
    seed: u64,
) -> Result<Vec<Trace>, HarnessError> {
    if n == 0 || conforming.is_empty() {
        return Err(HarnessError::NothingToMutate);
    }
    let pool: Vec<TaskRequest> = model.tasks().map(|t| TaskRequest::new(t.id.clone(), t.initiator.clone())).collect();
    if pool.is_empty() {
        return Err(HarnessError::NothingToMutate);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let budget = n.saturating_mul(100).max(1_000);
    let mut out = Vec::with_capacity(n);
    for _ in 0..budget {
        if out.len() == n {
            return Ok(out);
        }
        let base = rng.random_range(0..conforming.len());
        let (events, op) = mutate(&mut rng, &conforming[base].events, &pool);
        let t = Trace { events, origin: Some((base, op)) };
        if classify(machine, &t) != Verdict::Conforming {
            out.push(t);
        }
    }
    if out.len() == n {
        Ok(out)
    } else {
        Err(HarnessError::MutationBudget { wanted: n, produced: out.len(), attempts: budget })
    }
}
