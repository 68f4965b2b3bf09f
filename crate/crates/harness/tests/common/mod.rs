//! Reference verdicts from a token game on the unreduced interaction net,
//! tracking every marking the trace could have reached.
#![allow(dead_code)]

use std::collections::BTreeSet;

use pchan_core::machine::TaskRequest;
use pchan_core::net::{InteractionNet, Label};
use pchan_harness::Verdict;

type Places = BTreeSet<usize>;

fn enabled(net: &InteractionNet, m: &Places, t: usize) -> bool {
    net.transitions[t].inputs.iter().all(|p| m.contains(p))
}

fn fire(net: &InteractionNet, m: &Places, t: usize) -> Places {
    let tr = &net.transitions[t];
    let mut out: Places = m.iter().copied().filter(|p| !tr.inputs.contains(p)).collect();
    out.extend(tr.outputs.iter().copied());
    out
}

fn silent_closure(net: &InteractionNet, from: BTreeSet<Places>) -> BTreeSet<Places> {
    let mut seen = from.clone();
    let mut stack: Vec<Places> = from.into_iter().collect();
    while let Some(m) = stack.pop() {
        for t in 0..net.transitions.len() {
            if net.transitions[t].label.is_silent() && enabled(net, &m, t) {
                let next = fire(net, &m, t);
                if seen.insert(next.clone()) {
                    stack.push(next);
                }
            }
        }
    }
    seen
}

fn is_final(net: &InteractionNet, m: &Places) -> bool {
    !m.is_empty() && m.iter().all(|p| net.final_places.contains(p))
}

pub fn net_verdict(net: &InteractionNet, events: &[TaskRequest]) -> Verdict {
    let mut now = silent_closure(net, BTreeSet::from([BTreeSet::from([net.initial_place])]));
    for (i, e) in events.iter().enumerate() {
        let mut next = BTreeSet::new();
        for m in &now {
            for t in 0..net.transitions.len() {
                let Label::Task { task_id, initiator, .. } = &net.transitions[t].label else { continue };
                if *task_id == e.task_id && *initiator == e.requester_role && enabled(net, m, t) {
                    next.insert(fire(net, m, t));
                }
            }
        }
        if next.is_empty() {
            return Verdict::RejectedAt(i);
        }
        now = silent_closure(net, next);
    }
    if now.iter().any(|m| is_final(net, m)) {
        Verdict::Conforming
    } else {
        Verdict::Incomplete
    }
}
