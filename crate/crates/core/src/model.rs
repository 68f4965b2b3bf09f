//! In-memory BPMN 2.0 choreography model, restricted to the subset the
//! compiler understands: one-way choreography tasks, start and end events,
//! exclusive and parallel gateways, and sequence flows.
//!
//! Anything outside that subset is a hard parse error naming the offending
//! element. Diagram interchange (`BPMNDiagram`), message definitions,
//! documentation and extension elements are skipped.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const BPMN_MODEL_NS: &str = "http://www.omg.org/spec/BPMN/20100524/MODEL";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Role {
    pub id: String,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChoreographyTask {
    pub id: String,
    pub name: String,
    pub initiator: String,
    pub respondent: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GatewayKind {
    Exclusive,
    Parallel,
}

/// Derived from flow degree; only `Split` and `Join` are valid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GatewayDirection {
    Split,
    Join,
    Mixed,
    Passthrough,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Gateway {
    pub id: String,
    pub kind: GatewayKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum FlowNode {
    Start { id: String },
    End { id: String },
    Task(ChoreographyTask),
    Gateway(Gateway),
}

impl FlowNode {
    pub fn id(&self) -> &str {
        match self {
            FlowNode::Start { id } | FlowNode::End { id } => id,
            FlowNode::Task(t) => &t.id,
            FlowNode::Gateway(g) => &g.id,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceFlow {
    pub id: String,
    pub source: String,
    pub target: String,
}

/// A parsed choreography. Node and flow order is document order, which the
/// net compiler relies on for stable place/transition numbering.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChoreographyModel {
    pub id: String,
    pub roles: Vec<Role>,
    pub nodes: Vec<FlowNode>,
    pub flows: Vec<SequenceFlow>,
}

impl ChoreographyModel {
    pub fn node(&self, id: &str) -> Option<&FlowNode> {
        self.nodes.iter().find(|n| n.id() == id)
    }

    pub fn tasks(&self) -> impl Iterator<Item = &ChoreographyTask> {
        self.nodes.iter().filter_map(|n| match n {
            FlowNode::Task(t) => Some(t),
            _ => None,
        })
    }

    pub fn task(&self, id: &str) -> Option<&ChoreographyTask> {
        self.tasks().find(|t| t.id == id)
    }

    pub fn gateways(&self) -> impl Iterator<Item = &Gateway> {
        self.nodes.iter().filter_map(|n| match n {
            FlowNode::Gateway(g) => Some(g),
            _ => None,
        })
    }

    pub fn start_events(&self) -> impl Iterator<Item = &str> {
        self.nodes.iter().filter_map(|n| match n {
            FlowNode::Start { id } => Some(id.as_str()),
            _ => None,
        })
    }

    pub fn end_events(&self) -> impl Iterator<Item = &str> {
        self.nodes.iter().filter_map(|n| match n {
            FlowNode::End { id } => Some(id.as_str()),
            _ => None,
        })
    }

    pub fn outgoing<'a>(&'a self, node: &'a str) -> impl Iterator<Item = &'a SequenceFlow> + 'a {
        self.flows.iter().filter(move |f| f.source == node)
    }

    pub fn incoming<'a>(&'a self, node: &'a str) -> impl Iterator<Item = &'a SequenceFlow> + 'a {
        self.flows.iter().filter(move |f| f.target == node)
    }

    pub fn gateway_direction(&self, gateway: &str) -> GatewayDirection {
        let ins = self.incoming(gateway).count();
        let outs = self.outgoing(gateway).count();
        match (ins, outs) {
            (i, o) if i >= 2 && o >= 2 => GatewayDirection::Mixed,
            (_, o) if o >= 2 => GatewayDirection::Split,
            (i, _) if i >= 2 => GatewayDirection::Join,
            _ => GatewayDirection::Passthrough,
        }
    }

    pub fn role_ids(&self) -> Vec<String> {
        self.roles.iter().map(|r| r.id.clone()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("malformed XML: {0}")]
    Malformed(String),
    #[error("root element must be BPMN <definitions>, found <{0}>")]
    NotDefinitions(String),
    #[error("unsupported BPMN element <{element}> (id {id})")]
    Unsupported { element: String, id: String },
    #[error("document contains no <choreography>")]
    MissingChoreography,
    #[error("<{element}> (id {id}) is missing attribute `{attribute}`")]
    MissingAttribute { element: String, id: String, attribute: String },
    #[error("choreography task {task} has no initiatingParticipantRef")]
    MissingInitiator { task: String },
    #[error("choreography task {task}: {reason}")]
    InvalidTask { task: String, reason: String },
}

const IGNORED: &[&str] = &["documentation", "extensionElements", "incoming", "outgoing"];

fn element_id(node: roxmltree::Node<'_, '_>) -> String {
    node.attribute("id").unwrap_or("<no id>").to_string()
}

fn unsupported(node: roxmltree::Node<'_, '_>) -> ParseError {
    ParseError::Unsupported {
        element: node.tag_name().name().to_string(),
        id: element_id(node),
    }
}

fn required_attr(node: roxmltree::Node<'_, '_>, attr: &str) -> Result<String, ParseError> {
    node.attribute(attr).map(str::to_string).ok_or_else(|| ParseError::MissingAttribute {
        element: node.tag_name().name().to_string(),
        id: element_id(node),
        attribute: attr.to_string(),
    })
}

fn in_bpmn_ns(node: roxmltree::Node<'_, '_>) -> bool {
    matches!(node.tag_name().namespace(), None | Some(BPMN_MODEL_NS))
}

/// Parses a BPMN 2.0 document holding exactly one choreography.
pub fn parse_choreography(xml: &[u8]) -> Result<ChoreographyModel, ParseError> {
    let text = std::str::from_utf8(xml).map_err(|e| ParseError::Malformed(e.to_string()))?;
    let doc = roxmltree::Document::parse(text).map_err(|e| ParseError::Malformed(e.to_string()))?;
    let root = doc.root_element();
    if root.tag_name().name() != "definitions" || !in_bpmn_ns(root) {
        return Err(ParseError::NotDefinitions(root.tag_name().name().to_string()));
    }

    let mut choreography = None;
    for child in root.children().filter(|n| n.is_element()) {
        if !in_bpmn_ns(child) {
            // DI and vendor extensions live in foreign namespaces.
            continue;
        }
        match child.tag_name().name() {
            "choreography" if choreography.is_none() => choreography = Some(child),
            "message" | "itemDefinition" | "import" => {}
            name if IGNORED.contains(&name) => {}
            _ => return Err(unsupported(child)),
        }
    }
    let choreo = choreography.ok_or(ParseError::MissingChoreography)?;

    let mut model = ChoreographyModel {
        id: required_attr(choreo, "id")?,
        roles: Vec::new(),
        nodes: Vec::new(),
        flows: Vec::new(),
    };

    for el in choreo.children().filter(|n| n.is_element()) {
        if !in_bpmn_ns(el) {
            continue;
        }
        match el.tag_name().name() {
            "participant" => {
                let id = required_attr(el, "id")?;
                let name = el.attribute("name").unwrap_or(&id).to_string();
                model.roles.push(Role { id, name });
            }
            "messageFlow" => {}
            "startEvent" => {
                reject_event_definitions(el)?;
                model.nodes.push(FlowNode::Start { id: required_attr(el, "id")? });
            }
            "endEvent" => {
                reject_event_definitions(el)?;
                model.nodes.push(FlowNode::End { id: required_attr(el, "id")? });
            }
            "choreographyTask" => model.nodes.push(FlowNode::Task(parse_task(el)?)),
            "exclusiveGateway" | "parallelGateway" => {
                reject_children(el, &[])?;
                let kind = if el.tag_name().name() == "exclusiveGateway" {
                    GatewayKind::Exclusive
                } else {
                    GatewayKind::Parallel
                };
                model.nodes.push(FlowNode::Gateway(Gateway { id: required_attr(el, "id")?, kind }));
            }
            "sequenceFlow" => {
                // Conditions are carried by the initiator's branch choice at run time.
                reject_children(el, &["conditionExpression"])?;
                model.flows.push(SequenceFlow {
                    id: required_attr(el, "id")?,
                    source: required_attr(el, "sourceRef")?,
                    target: required_attr(el, "targetRef")?,
                });
            }
            name if IGNORED.contains(&name) => {}
            _ => return Err(unsupported(el)),
        }
    }
    Ok(model)
}

fn reject_children(el: roxmltree::Node<'_, '_>, allowed: &[&str]) -> Result<(), ParseError> {
    for c in el.children().filter(|n| n.is_element() && in_bpmn_ns(*n)) {
        let name = c.tag_name().name();
        if !IGNORED.contains(&name) && !allowed.contains(&name) {
            return Err(ParseError::Unsupported { element: name.to_string(), id: element_id(el) });
        }
    }
    Ok(())
}

fn reject_event_definitions(el: roxmltree::Node<'_, '_>) -> Result<(), ParseError> {
    // Timer, message, signal ... definitions turn a plain event into an unsupported kind.
    reject_children(el, &[])
}

fn parse_task(el: roxmltree::Node<'_, '_>) -> Result<ChoreographyTask, ParseError> {
    let id = required_attr(el, "id")?;
    let name = el.attribute("name").unwrap_or(&id).to_string();
    let initiator = el
        .attribute("initiatingParticipantRef")
        .ok_or_else(|| ParseError::MissingInitiator { task: id.clone() })?
        .to_string();

    let mut participants = Vec::new();
    let mut message_refs = 0;
    for c in el.children().filter(|n| n.is_element() && in_bpmn_ns(*n)) {
        match c.tag_name().name() {
            "participantRef" => participants.push(c.text().unwrap_or("").trim().to_string()),
            "messageFlowRef" => message_refs += 1,
            name if IGNORED.contains(&name) => {}
            other => {
                return Err(ParseError::Unsupported { element: other.to_string(), id: id.clone() });
            }
        }
    }
    if message_refs > 1 {
        return Err(ParseError::InvalidTask {
            task: id,
            reason: "two-way tasks (response message) are not supported".into(),
        });
    }
    if participants.len() != 2 {
        return Err(ParseError::InvalidTask {
            task: id,
            reason: format!("expected 2 participantRef entries, found {}", participants.len()),
        });
    }
    if !participants.contains(&initiator) {
        return Err(ParseError::InvalidTask {
            task: id,
            reason: format!("initiator {initiator} is not a participant of the task"),
        });
    }
    let respondent = participants
        .iter()
        .find(|p| **p != initiator)
        .unwrap_or(&initiator)
        .clone();
    Ok(ChoreographyTask { id, name, initiator, respondent })
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

/// Serialises the model back to BPMN 2.0 XML. One message and message flow
/// is emitted per task so the output stays a valid one-way choreography.
pub fn to_xml(model: &ChoreographyModel) -> String {
    let mut x = String::new();
    let _ = writeln!(x, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(x, r#"<definitions xmlns="{BPMN_MODEL_NS}" id="defs_{}">"#, escape(&model.id));
    for t in model.tasks() {
        let _ = writeln!(x, r#"  <message id="msg_{}" name="{}"/>"#, escape(&t.id), escape(&t.name));
    }
    let _ = writeln!(x, r#"  <choreography id="{}">"#, escape(&model.id));
    for r in &model.roles {
        let _ = writeln!(x, r#"    <participant id="{}" name="{}"/>"#, escape(&r.id), escape(&r.name));
    }
    for t in model.tasks() {
        let _ = writeln!(
            x,
            r#"    <messageFlow id="mf_{0}" sourceRef="{1}" targetRef="{2}" messageRef="msg_{0}"/>"#,
            escape(&t.id),
            escape(&t.initiator),
            escape(&t.respondent)
        );
    }
    for n in &model.nodes {
        match n {
            FlowNode::Start { id } => {
                let _ = writeln!(x, r#"    <startEvent id="{}"/>"#, escape(id));
            }
            FlowNode::End { id } => {
                let _ = writeln!(x, r#"    <endEvent id="{}"/>"#, escape(id));
            }
            FlowNode::Gateway(g) => {
                let tag = match g.kind {
                    GatewayKind::Exclusive => "exclusiveGateway",
                    GatewayKind::Parallel => "parallelGateway",
                };
                let _ = writeln!(x, r#"    <{tag} id="{}"/>"#, escape(&g.id));
            }
            FlowNode::Task(t) => {
                let _ = writeln!(
                    x,
                    r#"    <choreographyTask id="{}" name="{}" initiatingParticipantRef="{}">"#,
                    escape(&t.id),
                    escape(&t.name),
                    escape(&t.initiator)
                );
                let _ = writeln!(x, "      <participantRef>{}</participantRef>", escape(&t.initiator));
                let _ = writeln!(x, "      <participantRef>{}</participantRef>", escape(&t.respondent));
                let _ = writeln!(x, "      <messageFlowRef>mf_{}</messageFlowRef>", escape(&t.id));
                let _ = writeln!(x, "    </choreographyTask>");
            }
        }
    }
    for f in &model.flows {
        let _ = writeln!(
            x,
            r#"    <sequenceFlow id="{}" sourceRef="{}" targetRef="{}"/>"#,
            escape(&f.id),
            escape(&f.source),
            escape(&f.target)
        );
    }
    let _ = writeln!(x, "  </choreography>");
    let _ = writeln!(x, "</definitions>");
    x
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Rule {
    NoStartEvent,
    MultipleStartEvents,
    NoEndEvent,
    DuplicateId,
    UnknownRole,
    SelfInteraction,
    DanglingFlow,
    StartEventFlows,
    EndEventFlows,
    TaskFlowDegree,
    DegenerateGateway,
    MixedGateway,
    UnreachableNode,
    CannotReachEnd,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Diagnostic {
    pub rule: Rule,
    /// Id of the offending node, flow or (for model-wide rules) choreography.
    pub node: String,
}

impl Diagnostic {
    fn new(rule: Rule, node: impl Into<String>) -> Self {
        Self { rule, node: node.into() }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}({})", self.rule, self.node)
    }
}

/// Checks the structural invariants the compiler depends on. An empty result
/// means the model can be compiled.
pub fn validate_model(model: &ChoreographyModel) -> Vec<Diagnostic> {
    let mut out = Vec::new();

    let mut seen = BTreeSet::new();
    let ids = model
        .roles
        .iter()
        .map(|r| r.id.as_str())
        .chain(model.nodes.iter().map(FlowNode::id))
        .chain(model.flows.iter().map(|f| f.id.as_str()));
    for id in ids {
        if !seen.insert(id) {
            out.push(Diagnostic::new(Rule::DuplicateId, id));
        }
    }

    let starts: Vec<&str> = model.start_events().collect();
    match starts.as_slice() {
        [] => out.push(Diagnostic::new(Rule::NoStartEvent, &model.id)),
        [_] => {}
        [_, rest @ ..] => out.extend(rest.iter().map(|s| Diagnostic::new(Rule::MultipleStartEvents, *s))),
    }
    if model.end_events().next().is_none() {
        out.push(Diagnostic::new(Rule::NoEndEvent, &model.id));
    }

    let roles: BTreeSet<&str> = model.roles.iter().map(|r| r.id.as_str()).collect();
    for t in model.tasks() {
        if !roles.contains(t.initiator.as_str()) || !roles.contains(t.respondent.as_str()) {
            out.push(Diagnostic::new(Rule::UnknownRole, &t.id));
        }
        if t.initiator == t.respondent {
            out.push(Diagnostic::new(Rule::SelfInteraction, &t.id));
        }
    }

    let node_ids: BTreeSet<&str> = model.nodes.iter().map(FlowNode::id).collect();
    for f in &model.flows {
        if !node_ids.contains(f.source.as_str()) || !node_ids.contains(f.target.as_str()) {
            out.push(Diagnostic::new(Rule::DanglingFlow, &f.id));
        }
    }

    for n in &model.nodes {
        let id = n.id();
        let ins = model.incoming(id).count();
        let outs = model.outgoing(id).count();
        match n {
            FlowNode::Start { .. } if ins != 0 || outs != 1 => {
                out.push(Diagnostic::new(Rule::StartEventFlows, id))
            }
            FlowNode::End { .. } if outs != 0 => out.push(Diagnostic::new(Rule::EndEventFlows, id)),
            // A task without incoming flow is only unreachable; that is reported below.
            FlowNode::Task(_) if outs != 1 || ins > 1 => {
                out.push(Diagnostic::new(Rule::TaskFlowDegree, id))
            }
            FlowNode::Gateway(_) => match model.gateway_direction(id) {
                GatewayDirection::Mixed => out.push(Diagnostic::new(Rule::MixedGateway, id)),
                GatewayDirection::Passthrough => out.push(Diagnostic::new(Rule::DegenerateGateway, id)),
                _ => {}
            },
            _ => {}
        }
    }

    let mut succ: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    let mut pred: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for f in &model.flows {
        succ.entry(f.source.as_str()).or_default().push(f.target.as_str());
        pred.entry(f.target.as_str()).or_default().push(f.source.as_str());
    }
    if !starts.is_empty() {
        let forward = reach(starts.iter().copied(), &succ);
        for n in &model.nodes {
            if !forward.contains(n.id()) {
                out.push(Diagnostic::new(Rule::UnreachableNode, n.id()));
            }
        }
    }
    let ends: Vec<&str> = model.end_events().collect();
    if !ends.is_empty() {
        let backward = reach(ends, &pred);
        for n in &model.nodes {
            if !backward.contains(n.id()) {
                out.push(Diagnostic::new(Rule::CannotReachEnd, n.id()));
            }
        }
    }
    out
}

fn reach<'a, I: IntoIterator<Item = &'a str>>(
    from: I,
    edges: &BTreeMap<&'a str, Vec<&'a str>>,
) -> BTreeSet<&'a str> {
    let mut seen: BTreeSet<&str> = BTreeSet::new();
    let mut queue: VecDeque<&str> = VecDeque::new();
    for s in from {
        if seen.insert(s) {
            queue.push_back(s);
        }
    }
    while let Some(n) = queue.pop_front() {
        for m in edges.get(n).into_iter().flatten() {
            if seen.insert(m) {
                queue.push_back(m);
            }
        }
    }
    seen
}

/// Programmatic construction, mostly for tests and the random model generator.
#[derive(Debug, Clone)]
pub struct ModelBuilder {
    model: ChoreographyModel,
    flow_counter: usize,
}

impl ModelBuilder {
    pub fn new(id: &str) -> Self {
        Self {
            model: ChoreographyModel { id: id.into(), roles: Vec::new(), nodes: Vec::new(), flows: Vec::new() },
            flow_counter: 0,
        }
    }

    pub fn role(mut self, id: &str) -> Self {
        self.model.roles.push(Role { id: id.into(), name: id.into() });
        self
    }

    pub fn start(mut self, id: &str) -> Self {
        self.model.nodes.push(FlowNode::Start { id: id.into() });
        self
    }

    pub fn end(mut self, id: &str) -> Self {
        self.model.nodes.push(FlowNode::End { id: id.into() });
        self
    }

    pub fn task(mut self, id: &str, initiator: &str, respondent: &str) -> Self {
        self.model.nodes.push(FlowNode::Task(ChoreographyTask {
            id: id.into(),
            name: id.into(),
            initiator: initiator.into(),
            respondent: respondent.into(),
        }));
        self
    }

    pub fn xor(mut self, id: &str) -> Self {
        self.model.nodes.push(FlowNode::Gateway(Gateway { id: id.into(), kind: GatewayKind::Exclusive }));
        self
    }

    pub fn and(mut self, id: &str) -> Self {
        self.model.nodes.push(FlowNode::Gateway(Gateway { id: id.into(), kind: GatewayKind::Parallel }));
        self
    }

    pub fn flow(mut self, source: &str, target: &str) -> Self {
        self.flow_counter += 1;
        self.model.flows.push(SequenceFlow {
            id: format!("f{}", self.flow_counter),
            source: source.into(),
            target: target.into(),
        });
        self
    }

    /// Chains `a -> b -> c ...` with one flow per consecutive pair.
    pub fn path(mut self, ids: &[&str]) -> Self {
        for w in ids.windows(2) {
            self = self.flow(w[0], w[1]);
        }
        self
    }

    pub fn build(self) -> ChoreographyModel {
        self.model
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> ChoreographyModel {
        ModelBuilder::new("c")
            .role("A")
            .role("B")
            .start("s")
            .task("t", "A", "B")
            .end("e")
            .path(&["s", "t", "e"])
            .build()
    }

    const MINIMAL_XML: &str = r#"<?xml version="1.0"?>
<definitions xmlns="http://www.omg.org/spec/BPMN/20100524/MODEL" xmlns:bpmndi="http://www.omg.org/spec/BPMN/20100524/DI">
  <message id="m1"/>
  <choreography id="c">
    <participant id="A" name="Alice"/>
    <participant id="B" name="Bob"/>
    <messageFlow id="mf1" sourceRef="A" targetRef="B" messageRef="m1"/>
    <startEvent id="s"><outgoing>f1</outgoing></startEvent>
    <choreographyTask id="t" name="Order" initiatingParticipantRef="A">
      <incoming>f1</incoming><outgoing>f2</outgoing>
      <participantRef>A</participantRef>
      <participantRef>B</participantRef>
      <messageFlowRef>mf1</messageFlowRef>
    </choreographyTask>
    <endEvent id="e"/>
    <sequenceFlow id="f1" sourceRef="s" targetRef="t"/>
    <sequenceFlow id="f2" sourceRef="t" targetRef="e"/>
  </choreography>
  <bpmndi:BPMNDiagram id="d"/>
</definitions>"#;

    #[test]
    fn parses_minimal_choreography() {
        let m = parse_choreography(MINIMAL_XML.as_bytes()).unwrap();
        assert_eq!(m.tasks().count(), 1);
        assert_eq!(m.gateways().count(), 0);
        assert_eq!(m.roles.len(), 2);
        let t = m.task("t").unwrap();
        assert_eq!((t.initiator.as_str(), t.respondent.as_str()), ("A", "B"));
        assert!(validate_model(&m).is_empty());
    }

    #[test]
    fn rejects_process_models() {
        let xml = r#"<definitions xmlns="http://www.omg.org/spec/BPMN/20100524/MODEL">
            <process id="p1"><startEvent id="s"/></process></definitions>"#;
        assert_eq!(
            parse_choreography(xml.as_bytes()),
            Err(ParseError::Unsupported { element: "process".into(), id: "p1".into() })
        );
    }

    #[test]
    fn rejects_timer_events_by_id() {
        let xml = MINIMAL_XML.replace(
            r#"<endEvent id="e"/>"#,
            r#"<endEvent id="e"/><intermediateCatchEvent id="timer1"><timerEventDefinition/></intermediateCatchEvent>"#,
        );
        let err = parse_choreography(xml.as_bytes()).unwrap_err();
        assert_eq!(err, ParseError::Unsupported { element: "intermediateCatchEvent".into(), id: "timer1".into() });

        let xml = MINIMAL_XML.replace(
            r#"<endEvent id="e"/>"#,
            r#"<endEvent id="e"><terminateEventDefinition/></endEvent>"#,
        );
        assert!(matches!(
            parse_choreography(xml.as_bytes()),
            Err(ParseError::Unsupported { id, .. }) if id == "e"
        ));
    }

    #[test]
    fn rejects_missing_initiator_and_two_way_tasks() {
        let xml = MINIMAL_XML.replace(r#" initiatingParticipantRef="A""#, "");
        assert_eq!(
            parse_choreography(xml.as_bytes()),
            Err(ParseError::MissingInitiator { task: "t".into() })
        );
        let xml = MINIMAL_XML.replace(
            "<messageFlowRef>mf1</messageFlowRef>",
            "<messageFlowRef>mf1</messageFlowRef><messageFlowRef>mf2</messageFlowRef>",
        );
        assert!(matches!(parse_choreography(xml.as_bytes()), Err(ParseError::InvalidTask { .. })));
    }

    #[test]
    fn rejects_malformed_xml() {
        assert!(matches!(parse_choreography(b"<definitions>"), Err(ParseError::Malformed(_))));
        assert!(matches!(parse_choreography(&[0xff, 0xfe]), Err(ParseError::Malformed(_))));
    }

    #[test]
    fn serialise_then_parse_is_identity() {
        let m = parse_choreography(MINIMAL_XML.as_bytes()).unwrap();
        let again = parse_choreography(to_xml(&m).as_bytes()).unwrap();
        assert_eq!(m, again);
    }

    #[test]
    fn two_start_events() {
        let mut m = minimal();
        m.nodes.insert(0, FlowNode::Start { id: "s2".into() });
        m.flows.push(SequenceFlow { id: "fx".into(), source: "s2".into(), target: "e".into() });
        assert_eq!(validate_model(&m), vec![Diagnostic::new(Rule::MultipleStartEvents, "s")]);
    }

    #[test]
    fn unreachable_task() {
        let m = ModelBuilder::new("c")
            .role("A")
            .role("B")
            .start("s")
            .task("t", "A", "B")
            .task("orphan", "B", "A")
            .xor("j")
            .end("e")
            .path(&["s", "t", "j", "e"])
            .flow("orphan", "j")
            .build();
        assert_eq!(validate_model(&m), vec![Diagnostic::new(Rule::UnreachableNode, "orphan")]);
    }

    #[test]
    fn gateway_shape_rules() {
        let m = ModelBuilder::new("c")
            .role("A")
            .role("B")
            .start("s")
            .xor("g")
            .task("t1", "A", "B")
            .task("t2", "A", "B")
            .and("mixed")
            .end("e1")
            .end("e2")
            .path(&["s", "g"])
            .flow("g", "t1")
            .flow("g", "t2")
            .flow("t1", "mixed")
            .flow("t2", "mixed")
            .flow("mixed", "e1")
            .flow("mixed", "e2")
            .build();
        assert_eq!(validate_model(&m), vec![Diagnostic::new(Rule::MixedGateway, "mixed")]);
    }

    #[test]
    fn unknown_roles_and_dangling_flows() {
        let mut m = minimal();
        m.flows.push(SequenceFlow { id: "bad".into(), source: "t".into(), target: "nowhere".into() });
        if let FlowNode::Task(t) = &mut m.nodes[1] {
            t.respondent = "Z".into();
        }
        let d = validate_model(&m);
        assert!(d.contains(&Diagnostic::new(Rule::UnknownRole, "t")));
        assert!(d.contains(&Diagnostic::new(Rule::DanglingFlow, "bad")));
        assert!(d.contains(&Diagnostic::new(Rule::TaskFlowDegree, "t")));
    }
}
