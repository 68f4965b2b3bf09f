//! Bitmask state machine shared by triggers and the channel contract.
//!
//! Autonomous transitions come in two flavours. An *eager* one owns all its
//! input places, so firing it can never disable anything else; these run to
//! a fixpoint after every manual step. A *conflicted* one shares an input
//! place with some other transition (a loop-back edge, or a parallel split
//! directly behind an exclusive choice). Firing it is a decision, so it only
//! happens on demand: either because the requested task needs it, or
//! because the initiator named it in the request's choice data.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::marking::Marking;
use crate::model::{validate_model, ChoreographyModel, Diagnostic};
use crate::net::{check_safeness, reduce_net, to_interaction_net, InteractionNet, Label, Safeness, UnsafeWitness};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TransitionKind {
    Manual { task_id: String, initiator: String, respondent: String },
    Autonomous { eager: bool },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompiledTransition {
    pub id: usize,
    pub name: String,
    pub consume: Marking,
    pub produce: Marking,
    pub kind: TransitionKind,
}

impl CompiledTransition {
    pub fn task_id(&self) -> Option<&str> {
        match &self.kind {
            TransitionKind::Manual { task_id, .. } => Some(task_id),
            TransitionKind::Autonomous { .. } => None,
        }
    }

    pub fn initiator(&self) -> Option<&str> {
        match &self.kind {
            TransitionKind::Manual { initiator, .. } => Some(initiator),
            TransitionKind::Autonomous { .. } => None,
        }
    }

    pub fn is_eager(&self) -> bool {
        matches!(self.kind, TransitionKind::Autonomous { eager: true })
    }

    pub fn is_conflicted(&self) -> bool {
        matches!(self.kind, TransitionKind::Autonomous { eager: false })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProcessStateMachine {
    pub place_count: usize,
    pub place_names: Vec<String>,
    pub transitions: Vec<CompiledTransition>,
    pub initial_state: Marking,
    pub final_mask: Marking,
    pub role_ids: Vec<String>,
    tasks: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskRequest {
    pub task_id: String,
    pub requester_role: String,
    #[serde(with = "hex::serde")]
    pub choice_data: Vec<u8>,
}

impl TaskRequest {
    pub fn new(task_id: impl Into<String>, requester_role: impl Into<String>) -> Self {
        TaskRequest { task_id: task_id.into(), requester_role: requester_role.into(), choice_data: Vec::new() }
    }

    pub fn with_choices(mut self, choices: &Choices) -> Self {
        self.choice_data = choices.encode();
        self
    }
}

/// Conflicted autonomous transitions the initiator decides on, by id.
/// `before` replaces the default lookahead that would otherwise find the
/// task's enabling path; `after` fires once the task is done (typically a
/// loop exit that ends the case).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Choices {
    pub before: Vec<u32>,
    pub after: Vec<u32>,
}

impl Choices {
    pub fn is_empty(&self) -> bool {
        self.before.is_empty() && self.after.is_empty()
    }

    /// `u32 len(before) | before ids | after ids`, all big-endian; empty
    /// when there is nothing to choose.
    pub fn encode(&self) -> Vec<u8> {
        if self.is_empty() {
            return Vec::new();
        }
        let mut out = (self.before.len() as u32).to_be_bytes().to_vec();
        for id in self.before.iter().chain(&self.after) {
            out.extend_from_slice(&id.to_be_bytes());
        }
        out
    }

    pub fn decode(data: &[u8]) -> Result<Self, ConformanceError> {
        if data.is_empty() {
            return Ok(Choices::default());
        }
        if !data.len().is_multiple_of(4) {
            return Err(ConformanceError::InvalidChoice(format!("{} bytes is not a multiple of 4", data.len())));
        }
        let mut words = data.chunks_exact(4).map(|c| u32::from_be_bytes([c[0], c[1], c[2], c[3]]));
        let n = words.next().unwrap_or(0) as usize;
        let ids: Vec<u32> = words.collect();
        if n > ids.len() {
            return Err(ConformanceError::InvalidChoice(format!("{n} leading choices announced, {} present", ids.len())));
        }
        Ok(Choices { before: ids[..n].to_vec(), after: ids[n..].to_vec() })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum ConformanceError {
    #[error("unknown task {0}")]
    UnknownTask(String),
    #[error("task {task} is initiated by {expected}, not {actual}")]
    WrongRole { task: String, expected: String, actual: String },
    #[error("task {0} is not enabled")]
    NotEnabled(String),
    #[error("invalid choice data: {0}")]
    InvalidChoice(String),
    #[error("autonomous firing exceeded {0} steps")]
    FiringBudgetExceeded(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CompileError {
    #[error("model is invalid: {}", .0.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(", "))]
    Invalid(Vec<Diagnostic>),
    #[error("net is not 1-safe: {} marks {} twice", .0.firing_sequence.join(" "), .0.place)]
    Unsafe(UnsafeWitness),
    #[error("safeness check gave up after {0} markings")]
    BoundExceeded(usize),
    #[error("{places} places exceed the state width of {max}")]
    StateWidthExceeded { places: usize, max: usize },
    #[error("silent transitions form a cycle")]
    SilentCycle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CompileOptions {
    pub max_width: usize,
    pub state_bound: usize,
}

impl Default for CompileOptions {
    fn default() -> Self {
        CompileOptions { max_width: 64, state_bound: 100_000 }
    }
}

/// Whole pipeline: validate, map to a net, check safeness, reduce, compile.
pub fn compile_model(model: &ChoreographyModel, opts: CompileOptions) -> Result<Compiled, CompileError> {
    let diagnostics = validate_model(model);
    if !diagnostics.is_empty() {
        return Err(CompileError::Invalid(diagnostics));
    }
    let net = to_interaction_net(model);
    match check_safeness(&net, opts.state_bound) {
        Safeness::Safe { .. } => {}
        Safeness::Unsafe(w) => return Err(CompileError::Unsafe(w)),
        Safeness::BoundExceeded { explored } => return Err(CompileError::BoundExceeded(explored)),
    }
    let reduced = reduce_net(&net);
    let machine = compile_state_machine_with(&reduced, opts.max_width)?;
    Ok(Compiled { net, reduced, machine })
}

#[derive(Debug, Clone)]
pub struct Compiled {
    pub net: InteractionNet,
    pub reduced: InteractionNet,
    pub machine: ProcessStateMachine,
}

pub fn compile_state_machine(net: &InteractionNet) -> Result<ProcessStateMachine, CompileError> {
    compile_state_machine_with(net, CompileOptions::default().max_width)
}

pub fn compile_state_machine_with(net: &InteractionNet, max_width: usize) -> Result<ProcessStateMachine, CompileError> {
    if net.places.len() > max_width {
        return Err(CompileError::StateWidthExceeded { places: net.places.len(), max: max_width });
    }
    if net.has_silent_cycle() {
        return Err(CompileError::SilentCycle);
    }
    let transitions: Vec<CompiledTransition> = net
        .transitions
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let kind = match &t.label {
                Label::Task { task_id, initiator, respondent } => TransitionKind::Manual {
                    task_id: task_id.clone(),
                    initiator: initiator.clone(),
                    respondent: respondent.clone(),
                },
                // Consuming from a final place means choosing to continue
                // rather than stop, so that is a decision too.
                Label::Silent => TransitionKind::Autonomous {
                    eager: t
                        .inputs
                        .iter()
                        .all(|&p| !net.final_places.contains(&p) && net.consumers(p).all(|u| u == i)),
                },
            };
            CompiledTransition {
                id: i,
                name: t.id.clone(),
                consume: net.consume_mask(i),
                produce: net.produce_mask(i),
                kind,
            }
        })
        .collect();
    let tasks = transitions
        .iter()
        .filter_map(|t| t.task_id().map(|id| (id.to_string(), t.id)))
        .collect();
    let mut machine = ProcessStateMachine {
        place_count: net.places.len(),
        place_names: net.places.iter().map(|p| p.id.clone()).collect(),
        transitions,
        initial_state: net.initial_marking(),
        final_mask: net.final_mask(),
        role_ids: net.roles.clone(),
        tasks,
    };
    // Eager transitions may already be enabled at the start.
    machine.initial_state = machine
        .settle(machine.initial_state.clone())
        .map_err(|_| CompileError::SilentCycle)?;
    Ok(machine)
}

impl ProcessStateMachine {
    fn budget(&self) -> usize {
        (self.place_count * self.transitions.len()).max(1)
    }

    pub fn task_transition(&self, task_id: &str) -> Option<&CompiledTransition> {
        self.tasks.get(task_id).map(|&i| &self.transitions[i])
    }

    pub fn manual_count(&self) -> usize {
        self.tasks.len()
    }

    pub fn autonomous_count(&self) -> usize {
        self.transitions.len() - self.tasks.len()
    }

    pub fn state_bytes(&self, state: &Marking) -> Vec<u8> {
        state.to_bytes(self.place_count)
    }

    /// Fires enabled eager transitions, lowest id first, until none is left.
    pub fn settle(&self, mut state: Marking) -> Result<Marking, ConformanceError> {
        let budget = self.budget();
        let mut fired = 0;
        'outer: loop {
            for t in &self.transitions {
                if t.is_eager() && state.covers(&t.consume) {
                    fired += 1;
                    if fired > budget {
                        return Err(ConformanceError::FiringBudgetExceeded(budget));
                    }
                    state = state.fire(&t.consume, &t.produce);
                    continue 'outer;
                }
            }
            return Ok(state);
        }
    }

    /// States reachable through conflicted autonomous transitions, in
    /// breadth-first order with ascending transition ids, each with the
    /// firing path that first reached it; the first entry is `state` itself.
    pub fn silent_options(&self, state: &Marking) -> Result<Vec<(Vec<u32>, Marking)>, ConformanceError> {
        let state = self.settle(state.clone())?;
        let mut seen = BTreeSet::from([state.clone()]);
        let mut order = vec![(Vec::new(), state)];
        let mut i = 0;
        while i < order.len() {
            let (path, m) = order[i].clone();
            for t in self.transitions.iter().filter(|t| t.is_conflicted()) {
                if m.covers(&t.consume) {
                    let next = self.settle(m.fire(&t.consume, &t.produce))?;
                    if seen.insert(next.clone()) {
                        let mut p = path.clone();
                        p.push(t.id as u32);
                        order.push((p, next));
                    }
                }
            }
            i += 1;
        }
        Ok(order)
    }

    fn fire_choices(&self, mut state: Marking, ids: &[u32], context: &str) -> Result<Marking, ConformanceError> {
        for &id in ids {
            let t = self
                .transitions
                .get(id as usize)
                .filter(|t| t.task_id().is_none())
                .ok_or_else(|| ConformanceError::InvalidChoice(format!("{id} is not an autonomous transition")))?;
            if !state.covers(&t.consume) {
                return Err(ConformanceError::InvalidChoice(format!("{} is not enabled {context}", t.name)));
            }
            state = self.settle(state.fire(&t.consume, &t.produce))?;
        }
        Ok(state)
    }

    pub fn step(&self, state: &Marking, req: &TaskRequest) -> Result<Marking, ConformanceError> {
        let state = self.settle(state.clone())?;
        let t = self
            .task_transition(&req.task_id)
            .ok_or_else(|| ConformanceError::UnknownTask(req.task_id.clone()))?;
        let initiator = t.initiator().unwrap_or_default();
        if initiator != req.requester_role {
            return Err(ConformanceError::WrongRole {
                task: req.task_id.clone(),
                expected: initiator.to_string(),
                actual: req.requester_role.clone(),
            });
        }
        let choices = Choices::decode(&req.choice_data)?;
        let ready = if !choices.before.is_empty() {
            self.fire_choices(state, &choices.before, &format!("before {}", req.task_id))?
        } else if state.covers(&t.consume) {
            state
        } else {
            self.silent_options(&state)?
                .into_iter()
                .map(|(_, m)| m)
                .find(|m| m.covers(&t.consume))
                .ok_or_else(|| ConformanceError::NotEnabled(req.task_id.clone()))?
        };
        if !ready.covers(&t.consume) {
            return Err(ConformanceError::NotEnabled(req.task_id.clone()));
        }
        let next = self.settle(ready.fire(&t.consume, &t.produce))?;
        self.fire_choices(next, &choices.after, &format!("after {}", req.task_id))
    }

    /// Fires the task's arcs without any checks; used to model a faulty
    /// proposer whose local conformance check is switched off.
    pub fn fire_unchecked(&self, state: &Marking, task_id: &str) -> Option<Marking> {
        let t = self.task_transition(task_id)?;
        Some(state.fire(&t.consume, &t.produce))
    }

    /// Tasks `step` would accept from `state`, with their initiators.
    pub fn enabled_tasks(&self, state: &Marking) -> BTreeSet<(String, String)> {
        let Ok(reach) = self.silent_options(state) else {
            return BTreeSet::new();
        };
        self.transitions
            .iter()
            .filter(|t| reach.iter().any(|(_, m)| m.covers(&t.consume)))
            .filter_map(|t| match &t.kind {
                TransitionKind::Manual { task_id, initiator, .. } => Some((task_id.clone(), initiator.clone())),
                TransitionKind::Autonomous { .. } => None,
            })
            .collect()
    }

    /// Shortest list of conflicted autonomous transitions that takes `state`
    /// to an end state, for use as `after` choices on the last task of a
    /// case. Empty if `state` already is one; `None` if no silent path gets
    /// there.
    pub fn completion_choices(&self, state: &Marking) -> Option<Vec<u32>> {
        self.silent_options(state)
            .ok()?
            .into_iter()
            .find(|(_, m)| self.is_end_state(m))
            .map(|(path, _)| path)
    }

    pub fn is_end_state(&self, state: &Marking) -> bool {
        state.intersects(&self.final_mask) && state.is_subset(&self.final_mask)
    }

    /// Replays a task sequence from the initial state; returns the index of
    /// the first rejected event, or the final state.
    pub fn replay<'a, I>(&self, requests: I) -> Result<Marking, (usize, ConformanceError)>
    where
        I: IntoIterator<Item = &'a TaskRequest>,
    {
        let mut state = self.initial_state.clone();
        for (i, req) in requests.into_iter().enumerate() {
            state = self.step(&state, req).map_err(|e| (i, e))?;
        }
        Ok(state)
    }

    pub fn dump(&self) -> MachineDump {
        let w = self.place_count;
        MachineDump {
            place_count: w,
            places: self.place_names.clone(),
            roles: self.role_ids.clone(),
            initial_state: self.initial_state.to_hex(w),
            final_mask: self.final_mask.to_hex(w),
            transitions: self
                .transitions
                .iter()
                .map(|t| TransitionDump {
                    id: t.id,
                    name: t.name.clone(),
                    kind: t.kind.clone(),
                    consume: t.consume.to_hex(w),
                    produce: t.produce.to_hex(w),
                })
                .collect(),
        }
    }
}

/// Golden-file form of a compiled machine; masks are hex of the
/// big-endian state encoding.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MachineDump {
    pub place_count: usize,
    pub places: Vec<String>,
    pub roles: Vec<String>,
    pub initial_state: String,
    pub final_mask: String,
    pub transitions: Vec<TransitionDump>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionDump {
    pub id: usize,
    pub name: String,
    #[serde(flatten)]
    pub kind: TransitionKind,
    pub consume: String,
    pub produce: String,
}
