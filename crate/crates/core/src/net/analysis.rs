use std::collections::{BTreeMap, BTreeSet, VecDeque};

use thiserror::Error;

use super::{InteractionNet, Label};
use crate::marking::Marking;

/// Closure nodes explored by `traces_equivalent` before giving up.
pub const DEFAULT_TRACE_BUDGET: usize = 200_000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnsafeWitness {
    /// Transition ids fired from the initial marking; the last one puts a
    /// second token on `place`.
    pub firing_sequence: Vec<String>,
    pub place: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Safeness {
    Safe { states: usize },
    Unsafe(UnsafeWitness),
    BoundExceeded { explored: usize },
}

impl Safeness {
    pub fn is_safe(&self) -> bool {
        matches!(self, Safeness::Safe { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("trace comparison explored more than {budget} nodes; lower the length bound")]
pub struct TraceBudgetExceeded {
    pub budget: usize,
}

/// Breadth-first exploration of the reachability graph, stopping at the
/// first marking that would put two tokens on a place.
pub fn check_safeness(net: &InteractionNet, state_bound: usize) -> Safeness {
    let consume: Vec<Marking> = (0..net.transitions.len()).map(|t| net.consume_mask(t)).collect();
    let produce: Vec<Marking> = (0..net.transitions.len()).map(|t| net.produce_mask(t)).collect();

    let init = net.initial_marking();
    let mut parent: BTreeMap<Marking, Option<(Marking, usize)>> = BTreeMap::new();
    parent.insert(init.clone(), None);
    let mut queue = VecDeque::from([init]);

    let witness = |parent: &BTreeMap<Marking, Option<(Marking, usize)>>, mut m: Marking, last: usize, place: usize| {
        let mut seq = vec![net.transitions[last].id.clone()];
        while let Some(Some((prev, t))) = parent.get(&m) {
            seq.push(net.transitions[*t].id.clone());
            m = prev.clone();
        }
        seq.reverse();
        UnsafeWitness { firing_sequence: seq, place: net.places[place].id.clone() }
    };

    while let Some(m) = queue.pop_front() {
        for t in 0..net.transitions.len() {
            if !m.covers(&consume[t]) {
                continue;
            }
            let rest = m.difference(&consume[t]);
            if let Some(p) = produce[t].places().find(|&p| rest.contains(p)) {
                return Safeness::Unsafe(witness(&parent, m.clone(), t, p));
            }
            let next = rest.union(&produce[t]);
            if !parent.contains_key(&next) {
                if parent.len() >= state_bound {
                    return Safeness::BoundExceeded { explored: parent.len() };
                }
                parent.insert(next.clone(), Some((m.clone(), t)));
                queue.push_back(next);
            }
        }
    }
    Safeness::Safe { states: parent.len() }
}

struct Explorer<'a> {
    net: &'a InteractionNet,
    consume: Vec<Marking>,
    produce: Vec<Marking>,
}

impl<'a> Explorer<'a> {
    fn new(net: &'a InteractionNet) -> Self {
        Explorer {
            net,
            consume: (0..net.transitions.len()).map(|t| net.consume_mask(t)).collect(),
            produce: (0..net.transitions.len()).map(|t| net.produce_mask(t)).collect(),
        }
    }

    fn closure(&self, seed: BTreeSet<Marking>, nodes: &mut usize) -> BTreeSet<Marking> {
        let mut out = seed.clone();
        let mut stack: Vec<Marking> = seed.into_iter().collect();
        while let Some(m) = stack.pop() {
            *nodes += 1;
            for (t, tr) in self.net.transitions.iter().enumerate() {
                if tr.label.is_silent() && m.covers(&self.consume[t]) {
                    let next = m.fire(&self.consume[t], &self.produce[t]);
                    if out.insert(next.clone()) {
                        stack.push(next);
                    }
                }
            }
        }
        out
    }

    fn labels(&self, set: &BTreeSet<Marking>) -> BTreeSet<&'a Label> {
        let mut out = BTreeSet::new();
        for m in set {
            for (t, tr) in self.net.transitions.iter().enumerate() {
                if !tr.label.is_silent() && m.covers(&self.consume[t]) {
                    out.insert(&tr.label);
                }
            }
        }
        out
    }

    fn complete(&self, set: &BTreeSet<Marking>) -> bool {
        set.iter().any(|m| self.net.is_final(m))
    }

    fn after(&self, set: &BTreeSet<Marking>, label: &Label, nodes: &mut usize) -> BTreeSet<Marking> {
        let mut seed = BTreeSet::new();
        for m in set {
            for (t, tr) in self.net.transitions.iter().enumerate() {
                if &tr.label == label && m.covers(&self.consume[t]) {
                    seed.insert(m.fire(&self.consume[t], &self.produce[t]));
                }
            }
        }
        self.closure(seed, nodes)
    }
}

/// Compares the observable languages of two safe nets up to `max_len`
/// labelled steps, including whether each prefix can complete.
pub fn traces_equivalent(a: &InteractionNet, b: &InteractionNet, max_len: usize) -> Result<bool, TraceBudgetExceeded> {
    traces_equivalent_with_budget(a, b, max_len, DEFAULT_TRACE_BUDGET)
}

pub fn traces_equivalent_with_budget(
    a: &InteractionNet,
    b: &InteractionNet,
    max_len: usize,
    budget: usize,
) -> Result<bool, TraceBudgetExceeded> {
    let (ea, eb) = (Explorer::new(a), Explorer::new(b));
    let mut nodes = 0usize;
    let start = (
        ea.closure(BTreeSet::from([a.initial_marking()]), &mut nodes),
        eb.closure(BTreeSet::from([b.initial_marking()]), &mut nodes),
    );
    // BFS reaches every pair at its shallowest depth first, so a pair seen
    // once never needs revisiting.
    let mut seen = BTreeSet::from([start.clone()]);
    let mut queue = VecDeque::from([(start, 0usize)]);
    while let Some(((sa, sb), depth)) = queue.pop_front() {
        if nodes > budget {
            return Err(TraceBudgetExceeded { budget });
        }
        if ea.complete(&sa) != eb.complete(&sb) {
            return Ok(false);
        }
        if depth == max_len {
            continue;
        }
        let (la, lb) = (ea.labels(&sa), eb.labels(&sb));
        if la != lb {
            return Ok(false);
        }
        for label in la {
            let next = (ea.after(&sa, label, &mut nodes), eb.after(&sb, label, &mut nodes));
            if seen.insert(next.clone()) {
                queue.push_back((next, depth + 1));
            }
        }
    }
    Ok(true)
}
