//! Interaction Petri nets: labelled place/transition nets whose visible
//! transitions carry the initiator and respondent of a choreography task.
//!
//! Mapping from the choreography model:
//!
//! * start events, end events and exclusive gateways become places;
//! * tasks become labelled transitions, parallel gateways silent ones;
//! * a flow between two transition-like nodes gets its own place;
//! * a flow between two place-like nodes becomes a silent transition, except
//!   where the source has no other outgoing flow or the target no other
//!   incoming one; then the two places are merged.
//!
//! Numbering follows document order (nodes first, then flows), so compiled
//! bit layouts are stable across runs.

mod analysis;
mod reduce;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::marking::Marking;
use crate::model::{ChoreographyModel, FlowNode, GatewayKind};

pub use analysis::{
    check_safeness, traces_equivalent, traces_equivalent_with_budget, Safeness, TraceBudgetExceeded, UnsafeWitness,
    DEFAULT_TRACE_BUDGET,
};
pub use reduce::reduce_net;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    Silent,
    Task { task_id: String, initiator: String, respondent: String },
}

impl Label {
    pub fn is_silent(&self) -> bool {
        matches!(self, Label::Silent)
    }

    pub fn task_id(&self) -> Option<&str> {
        match self {
            Label::Silent => None,
            Label::Task { task_id, .. } => Some(task_id),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Place {
    pub id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transition {
    pub id: String,
    pub label: Label,
    /// Sorted, duplicate-free place indices.
    pub inputs: Vec<usize>,
    pub outputs: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionNet {
    pub places: Vec<Place>,
    pub transitions: Vec<Transition>,
    pub initial_place: usize,
    pub final_places: Vec<usize>,
    /// Channel roles, in model order; not every role needs a task.
    pub roles: Vec<String>,
}

impl InteractionNet {
    pub fn initial_marking(&self) -> Marking {
        Marking::singleton(self.initial_place)
    }

    pub fn final_mask(&self) -> Marking {
        Marking::from_places(self.final_places.iter().copied())
    }

    /// Final-marking convention: at least one final place marked and nothing else.
    pub fn is_final(&self, m: &Marking) -> bool {
        !m.is_empty() && m.is_subset(&self.final_mask())
    }

    pub fn consume_mask(&self, t: usize) -> Marking {
        Marking::from_places(self.transitions[t].inputs.iter().copied())
    }

    pub fn produce_mask(&self, t: usize) -> Marking {
        Marking::from_places(self.transitions[t].outputs.iter().copied())
    }

    pub fn silent_count(&self) -> usize {
        self.transitions.iter().filter(|t| t.label.is_silent()).count()
    }

    pub fn labelled_count(&self) -> usize {
        self.transitions.len() - self.silent_count()
    }

    pub fn place_index(&self, id: &str) -> Option<usize> {
        self.places.iter().position(|p| p.id == id)
    }

    pub fn transition_index(&self, id: &str) -> Option<usize> {
        self.transitions.iter().position(|t| t.id == id)
    }

    /// Transitions consuming from `place`.
    pub fn consumers(&self, place: usize) -> impl Iterator<Item = usize> + '_ {
        self.transitions
            .iter()
            .enumerate()
            .filter(move |(_, t)| t.inputs.contains(&place))
            .map(|(i, _)| i)
    }

    /// Transitions producing into `place`.
    pub fn producers(&self, place: usize) -> impl Iterator<Item = usize> + '_ {
        self.transitions
            .iter()
            .enumerate()
            .filter(move |(_, t)| t.outputs.contains(&place))
            .map(|(i, _)| i)
    }

    /// True if some chain of silent transitions leads back to itself.
    pub fn has_silent_cycle(&self) -> bool {
        let silent: Vec<usize> = (0..self.transitions.len())
            .filter(|&t| self.transitions[t].label.is_silent())
            .collect();
        let edges: BTreeMap<usize, Vec<usize>> = silent
            .iter()
            .map(|&t| {
                let outs = &self.transitions[t].outputs;
                let next = silent
                    .iter()
                    .copied()
                    .filter(|&u| self.transitions[u].inputs.iter().any(|p| outs.contains(p)))
                    .collect();
                (t, next)
            })
            .collect();
        // 0 = unvisited, 1 = on stack, 2 = done
        let mut state: BTreeMap<usize, u8> = BTreeMap::new();
        fn dfs(t: usize, edges: &BTreeMap<usize, Vec<usize>>, state: &mut BTreeMap<usize, u8>) -> bool {
            state.insert(t, 1);
            for &u in &edges[&t] {
                match state.get(&u).copied().unwrap_or(0) {
                    1 => return true,
                    0 if dfs(u, edges, state) => return true,
                    _ => {}
                }
            }
            state.insert(t, 2);
            false
        }
        silent.iter().any(|&t| state.get(&t).copied().unwrap_or(0) == 0 && dfs(t, &edges, &mut state))
    }

    /// PNML (place/transition net type) dump for inspection in external tools.
    /// Task labels become transition names; initiator/respondent go into a
    /// tool-specific block.
    pub fn to_pnml(&self) -> String {
        let mut x = String::new();
        let _ = writeln!(x, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
        let _ = writeln!(x, r#"<pnml xmlns="http://www.pnml.org/version-2009/grammar/pnml">"#);
        let _ = writeln!(x, r#"  <net id="net" type="http://www.pnml.org/version-2009/grammar/ptnet">"#);
        let _ = writeln!(x, r#"    <page id="page0">"#);
        for (i, p) in self.places.iter().enumerate() {
            let _ = writeln!(x, r#"      <place id="p{i}"><name><text>{}</text></name>"#, xml_text(&p.id));
            if i == self.initial_place {
                let _ = writeln!(x, "        <initialMarking><text>1</text></initialMarking>");
            }
            let _ = writeln!(x, "      </place>");
        }
        for (i, t) in self.transitions.iter().enumerate() {
            let _ = writeln!(x, r#"      <transition id="t{i}"><name><text>{}</text></name>"#, xml_text(&t.id));
            if let Label::Task { initiator, respondent, .. } = &t.label {
                let _ = writeln!(
                    x,
                    r#"        <toolspecific tool="pchan" version="1"><initiator>{}</initiator><respondent>{}</respondent></toolspecific>"#,
                    xml_text(initiator),
                    xml_text(respondent)
                );
            }
            let _ = writeln!(x, "      </transition>");
        }
        let mut arc = 0;
        for (i, t) in self.transitions.iter().enumerate() {
            for p in &t.inputs {
                let _ = writeln!(x, r#"      <arc id="a{arc}" source="p{p}" target="t{i}"/>"#);
                arc += 1;
            }
            for p in &t.outputs {
                let _ = writeln!(x, r#"      <arc id="a{arc}" source="t{i}" target="p{p}"/>"#);
                arc += 1;
            }
        }
        let _ = writeln!(x, "    </page>");
        let _ = writeln!(x, "  </net>");
        let _ = writeln!(x, "</pnml>");
        x
    }
}

fn xml_text(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn is_place_like(node: &FlowNode) -> bool {
    match node {
        FlowNode::Start { .. } | FlowNode::End { .. } => true,
        FlowNode::Gateway(g) => g.kind == GatewayKind::Exclusive,
        FlowNode::Task(_) => false,
    }
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn find(&mut self, x: usize) -> usize {
        let parent = self.0[x];
        if parent == x {
            return x;
        }
        let root = self.find(parent);
        self.0[x] = root;
        root
    }

    /// Keeps the smaller index as representative so naming follows document order.
    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.0[hi] = lo;
        }
    }
}

/// Builds the interaction net of a validated model.
pub fn to_interaction_net(model: &ChoreographyModel) -> InteractionNet {
    let node_index: BTreeMap<&str, usize> =
        model.nodes.iter().enumerate().map(|(i, n)| (n.id(), i)).collect();
    let out_degree = |id: &str| model.outgoing(id).count();
    let in_degree = |id: &str| model.incoming(id).count();

    let mut uf = UnionFind((0..model.nodes.len()).collect());
    let mut merged_flows = BTreeSet::new();
    for (fi, f) in model.flows.iter().enumerate() {
        let (s, t) = (node_index[f.source.as_str()], node_index[f.target.as_str()]);
        if is_place_like(&model.nodes[s])
            && is_place_like(&model.nodes[t])
            && (out_degree(&f.source) == 1 || in_degree(&f.target) == 1)
        {
            uf.union(s, t);
            merged_flows.insert(fi);
        }
    }

    let mut places = Vec::new();
    let mut class_place: BTreeMap<usize, usize> = BTreeMap::new();
    for (i, n) in model.nodes.iter().enumerate() {
        if is_place_like(n) {
            let root = uf.find(i);
            class_place.entry(root).or_insert_with(|| {
                places.push(Place { id: format!("p_{}", model.nodes[root].id()) });
                places.len() - 1
            });
        }
    }
    let mut flow_place: BTreeMap<usize, usize> = BTreeMap::new();
    for (fi, f) in model.flows.iter().enumerate() {
        let (s, t) = (node_index[f.source.as_str()], node_index[f.target.as_str()]);
        if !is_place_like(&model.nodes[s]) && !is_place_like(&model.nodes[t]) {
            places.push(Place { id: format!("p_{}", f.id) });
            flow_place.insert(fi, places.len() - 1);
        }
    }

    let node_place = |i: usize, uf: &mut UnionFind| class_place[&uf.find(i)];

    let mut transitions = Vec::new();
    for n in &model.nodes {
        let label = match n {
            FlowNode::Task(t) => Label::Task {
                task_id: t.id.clone(),
                initiator: t.initiator.clone(),
                respondent: t.respondent.clone(),
            },
            FlowNode::Gateway(g) if g.kind == GatewayKind::Parallel => Label::Silent,
            _ => continue,
        };
        let mut inputs = BTreeSet::new();
        let mut outputs = BTreeSet::new();
        for (fi, f) in model.flows.iter().enumerate() {
            if f.target == n.id() {
                let s = node_index[f.source.as_str()];
                inputs.insert(if is_place_like(&model.nodes[s]) { node_place(s, &mut uf) } else { flow_place[&fi] });
            }
            if f.source == n.id() {
                let t = node_index[f.target.as_str()];
                outputs.insert(if is_place_like(&model.nodes[t]) { node_place(t, &mut uf) } else { flow_place[&fi] });
            }
        }
        transitions.push(Transition {
            id: n.id().to_string(),
            label,
            inputs: inputs.into_iter().collect(),
            outputs: outputs.into_iter().collect(),
        });
    }
    for (fi, f) in model.flows.iter().enumerate() {
        let (s, t) = (node_index[f.source.as_str()], node_index[f.target.as_str()]);
        if is_place_like(&model.nodes[s]) && is_place_like(&model.nodes[t]) && !merged_flows.contains(&fi) {
            transitions.push(Transition {
                id: format!("t_{}", f.id),
                label: Label::Silent,
                inputs: vec![node_place(s, &mut uf)],
                outputs: vec![node_place(t, &mut uf)],
            });
        }
    }

    let start = model
        .nodes
        .iter()
        .position(|n| matches!(n, FlowNode::Start { .. }))
        .expect("validated model has a start event");
    let initial_place = node_place(start, &mut uf);
    let final_places: BTreeSet<usize> = model
        .nodes
        .iter()
        .enumerate()
        .filter(|(_, n)| matches!(n, FlowNode::End { .. }))
        .map(|(i, _)| node_place(i, &mut uf))
        .collect();

    InteractionNet {
        places,
        transitions,
        initial_place,
        final_places: final_places.into_iter().collect(),
        roles: model.role_ids(),
    }
}
