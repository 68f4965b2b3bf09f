//! Brute-force reference semantics, kept separate from the library code.
#![allow(dead_code)]

use std::collections::BTreeSet;

use pchan_core::machine::{Choices, CompiledTransition, ProcessStateMachine, TaskRequest, TransitionKind};
use pchan_core::net::{InteractionNet, Label};

type Places = BTreeSet<usize>;

fn label_key(l: &Label) -> Option<String> {
    match l {
        Label::Silent => None,
        Label::Task { task_id, initiator, respondent } => Some(format!("{task_id}:{initiator}>{respondent}")),
    }
}

fn is_final(net: &InteractionNet, m: &Places) -> bool {
    !m.is_empty() && m.iter().all(|p| net.final_places.contains(p))
}

fn enabled(net: &InteractionNet, m: &Places, t: usize) -> bool {
    net.transitions[t].inputs.iter().all(|p| m.contains(p))
}

fn fire(net: &InteractionNet, m: &Places, t: usize) -> Places {
    let tr = &net.transitions[t];
    let mut out: Places = m.iter().copied().filter(|p| !tr.inputs.contains(p)).collect();
    out.extend(tr.outputs.iter().copied());
    out
}

/// Every observable trace of length ≤ `max_len`, silent steps erased, each
/// paired with whether the marking it ends in is final. Prefix closed.
pub fn language(net: &InteractionNet, max_len: usize) -> BTreeSet<(Vec<String>, bool)> {
    let mut out = BTreeSet::new();
    let mut seen: BTreeSet<(Places, Vec<String>)> = BTreeSet::new();
    let mut stack = vec![(BTreeSet::from([net.initial_place]), Vec::<String>::new())];
    while let Some((m, trace)) = stack.pop() {
        if !seen.insert((m.clone(), trace.clone())) {
            continue;
        }
        out.insert((trace.clone(), is_final(net, &m)));
        for t in 0..net.transitions.len() {
            if !enabled(net, &m, t) {
                continue;
            }
            let next = fire(net, &m, t);
            match label_key(&net.transitions[t].label) {
                None => stack.push((next, trace.clone())),
                Some(l) if trace.len() < max_len => {
                    let mut tr = trace.clone();
                    tr.push(l);
                    stack.push((next, tr));
                }
                Some(_) => {}
            }
        }
    }
    out
}

pub fn traces(lang: &BTreeSet<(Vec<String>, bool)>) -> BTreeSet<Vec<String>> {
    lang.iter().map(|(t, _)| t.clone()).collect()
}

pub fn completable(lang: &BTreeSet<(Vec<String>, bool)>) -> BTreeSet<Vec<String>> {
    lang.iter().filter(|(_, f)| *f).map(|(t, _)| t.clone()).collect()
}

/// Sequences accepted by repeated `step`, trying every task of the machine
/// with its declared initiator and every silent path that enables it; the
/// flag is `is_end_state` after the prefix.
pub fn machine_language(m: &ProcessStateMachine, max_len: usize) -> BTreeSet<(Vec<String>, bool)> {
    let tasks: Vec<(&CompiledTransition, String)> = m
        .transitions
        .iter()
        .filter_map(|t| match &t.kind {
            TransitionKind::Manual { task_id, initiator, respondent } => {
                Some((t, format!("{task_id}:{initiator}>{respondent}")))
            }
            _ => None,
        })
        .collect();
    let mut out = BTreeSet::new();
    let mut seen = BTreeSet::new();
    let mut stack = vec![(m.initial_state.clone(), Vec::<String>::new())];
    while let Some((state, trace)) = stack.pop() {
        if !seen.insert((state.clone(), trace.clone())) {
            continue;
        }
        out.insert((trace.clone(), m.is_end_state(&state)));
        if trace.len() == max_len {
            continue;
        }
        let options = m.silent_options(&state).expect("settles");
        for (t, key) in &tasks {
            let (task, init) = (t.task_id().unwrap(), t.initiator().unwrap());
            let plain = TaskRequest::new(task, init);
            for (path, reached) in &options {
                if !reached.covers(&t.consume) {
                    continue;
                }
                let before = Choices { before: path.clone(), after: vec![] };
                let next = m.step(&state, &plain.clone().with_choices(&before)).expect("enabled path applies");
                let mut tr = trace.clone();
                tr.push(key.clone());
                // Closing the case here may take an explicit exit choice.
                if let Some(exit) = m.completion_choices(&next).filter(|c| !c.is_empty()) {
                    let both = Choices { before: path.clone(), after: exit };
                    let done = m.step(&state, &plain.clone().with_choices(&both)).expect("exit choice applies");
                    assert!(m.is_end_state(&done));
                    out.insert((tr.clone(), true));
                }
                stack.push((next, tr));
            }
        }
    }
    out
}

/// Compares `actual` with `tests/golden/<name>`; `PCHAN_BLESS=1` rewrites
/// the file instead.
pub fn golden(name: &str, actual: &str) {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    if std::env::var_os("PCHAN_BLESS").is_some() {
        std::fs::write(&path, actual).expect("write golden file");
        return;
    }
    let expected = std::fs::read_to_string(&path)
        .unwrap_or_else(|e| panic!("{}: {e}; run with PCHAN_BLESS=1 to create it", path.display()));
    assert_eq!(actual, expected, "{name} differs from the golden file");
}

pub mod chan {
    use std::collections::BTreeMap;
    use std::sync::Arc;

    use ed25519_dalek::SigningKey;
    use pchan_core::fixtures::Case;
    use pchan_core::ledger::Ledger;
    use pchan_core::machine::{ProcessStateMachine, TaskRequest};
    use pchan_core::marking::Marking;
    use pchan_core::wire::{derive_signing_key, sign_step, Address, ContractId, SignedStep, StepPayload};

    pub struct Channel {
        pub ledger: Ledger,
        pub machine: Arc<ProcessStateMachine>,
        pub keys: BTreeMap<String, SigningKey>,
        pub addrs: BTreeMap<String, Address>,
        pub id: ContractId,
    }

    impl Channel {
        pub fn open(case: Case, window: u64) -> Self {
            let machine = Arc::new(case.compile().machine);
            let mut ledger = Ledger::new(1);
            let keys: BTreeMap<String, SigningKey> =
                machine.role_ids.iter().map(|r| (r.clone(), derive_signing_key(r.as_bytes()))).collect();
            let addrs: BTreeMap<String, Address> = keys
                .iter()
                .map(|(r, k)| (r.clone(), ledger.register_account(k.verifying_key().to_bytes())))
                .collect();
            let id = ledger.deploy_channel(machine.clone(), addrs.clone(), window).unwrap();
            Channel { ledger, machine, keys, addrs, id }
        }

        pub fn addr(&self, role: &str) -> Address {
            self.addrs[role]
        }

        pub fn sign_all(&self, payload: StepPayload) -> SignedStep {
            let mut s = SignedStep::new(payload);
            for (r, k) in &self.keys {
                s.add(r.clone(), sign_step(&s.payload, k).unwrap());
            }
            s
        }

        /// Complete signed steps for the first `n` events of `events`,
        /// numbered from seq 1 in case `case_id`.
        pub fn signed_prefix(&self, case_id: u64, events: &[TaskRequest], n: usize) -> Vec<SignedStep> {
            let m = &self.machine;
            let mut state: Marking = m.initial_state.clone();
            let mut out = Vec::new();
            for (i, req) in events.iter().take(n).enumerate() {
                state = m.step(&state, req).unwrap();
                out.push(self.sign_all(StepPayload {
                    chain_id: self.ledger.chain_id,
                    contract_id: self.id,
                    case_id,
                    seq: i as u64 + 1,
                    task_id: req.task_id.clone(),
                    choice_data: req.choice_data.clone(),
                    new_state: m.state_bytes(&state),
                }));
            }
            out
        }
    }
}
