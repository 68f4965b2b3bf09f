use std::sync::Arc;

use pchan_core::fixtures::Case;
use pchan_core::ledger::{Phase, TxAction};
use pchan_core::machine::{compile_model, CompileOptions, ConformanceError, TaskRequest};
use pchan_core::model::ModelBuilder;
use pchan_core::wire::{derive_signing_key, sign_step, ChannelMessage, SignedStep, StepPayload};
use pchan_trigger::{Behaviour, CloseError, EnactError, NodeEvent, Outcome, SimConfig, SimNetwork};

/// State bytes after the first supply-chain task.
fn after_order_goods(net: &SimNetwork) -> Vec<u8> {
    let m = net.machine();
    m.state_bytes(&m.step(&m.initial_state, &TaskRequest::new("order_goods", "BulkBuyer")).unwrap())
}

fn network(case: Case) -> SimNetwork {
    SimNetwork::new(Arc::new(case.compile().machine), SimConfig::default())
}

fn run(net: &mut SimNetwork, events: &[TaskRequest]) {
    for req in events {
        let out = net.enact(&req.requester_role, req);
        assert!(out.accepted(), "{} -> {out:?}", req.task_id);
    }
}

fn disputes(net: &SimNetwork, role: &str) -> usize {
    net.node(role).events().iter().filter(|e| matches!(e, NodeEvent::DisputeRaised { .. })).count()
}

/// A proposal for `task` at `seq` from its initiator, with whatever state
/// the test wants to claim.
fn crafted(net: &SimNetwork, initiator: &str, task: &str, seq: u64, state: Vec<u8>) -> ChannelMessage {
    let step = StepPayload {
        chain_id: 1,
        contract_id: net.contract_id(),
        case_id: 0,
        seq,
        task_id: task.into(),
        choice_data: vec![],
        new_state: state,
    };
    let signature = sign_step(&step, &derive_signing_key(initiator.as_bytes())).unwrap();
    ChannelMessage::Propose { step, initiator: initiator.into(), signature }
}

#[test]
fn happy_path_one_task() {
    let mut net = network(Case::SupplyChain);
    let req = &Case::SupplyChain.variant(0).unwrap()[0];
    let out = net.enact("BulkBuyer", req);
    assert!(matches!(out, Outcome::Confirmed { seq: 1, .. }), "{out:?}");
    let st = net.statuses();
    assert_eq!(st.len(), 5);
    assert!(st.iter().all(|s| (s.seq, &s.state) == (1, &st[0].state)));
    assert!(net.is_stable());
    assert_eq!(net.ledger.transactions().len(), 1);
}

#[test]
fn best_case_touches_the_ledger_twice() {
    for case in Case::ALL {
        for v in case.variants() {
            let mut net = network(case);
            run(&mut net, &v);
            net.close().unwrap();
            let accepted: Vec<TxAction> =
                net.ledger.transactions().iter().filter(|t| t.accepted).map(|t| t.action).collect();
            assert_eq!(accepted, [TxAction::Deploy, TxAction::Close], "{case}");
            assert!(net.statuses().iter().all(|s| (s.case_id, s.seq) == (1, 0)));
            assert!(net.is_stable());
        }
    }
}

#[test]
fn channel_is_reused_for_the_next_case() {
    let mut net = network(Case::IncidentManagement);
    for v in Case::IncidentManagement.variants() {
        run(&mut net, &v);
        net.close().unwrap();
    }
    assert!(net.statuses().iter().all(|s| s.case_id == 4));
    let deploys = net.ledger.transactions().iter().filter(|t| t.action == TxAction::Deploy).count();
    assert_eq!(deploys, 1);
}

#[test]
fn foreign_task_is_rejected_locally() {
    let mut net = network(Case::SupplyChain);
    let req = TaskRequest::new("order_goods", "Supplier");
    let out = net.enact("Supplier", &req);
    assert!(matches!(out, Outcome::Rejected(EnactError::Conformance(ConformanceError::WrongRole { .. }))), "{out:?}");
    assert!(net.node("BulkBuyer").events().is_empty());
}

#[test]
fn silent_signer_forces_a_dispute_and_on_chain_completion() {
    let mut net = network(Case::SupplyChain);
    let v = Case::SupplyChain.variant(1).unwrap();
    run(&mut net, &v[..3]);
    net.set_behaviour("Supplier", Behaviour::Silent);
    let out = net.enact(&v[3].requester_role, &v[3]);
    assert!(matches!(out, Outcome::Disputed { .. }), "{out:?}");
    assert_eq!(net.phase(), Phase::Dispute);
    assert_eq!(net.ledger.view(&net.contract_id()).unwrap().seq, 3);

    net.expire_window();
    assert_eq!(net.phase(), Phase::OnChain);
    for req in &v[3..] {
        let out = net.enact(&req.requester_role, req);
        assert!(matches!(out, Outcome::OnChain { .. }), "{out:?}");
    }
    assert_eq!(net.phase(), Phase::ChannelOpen);
    assert!(net.statuses().iter().all(|s| (s.case_id, s.seq) == (1, 0)));
}

#[test]
fn non_conforming_state_is_disputed() {
    let mut net = network(Case::SupplyChain);
    let msg = crafted(&net, "BulkBuyer", "order_goods", 1, vec![0x00, 0x08]);
    net.inject("BulkBuyer", "Manufacturer", msg);
    assert_eq!(disputes(&net, "Manufacturer"), 1);
    assert!(!net.node("Manufacturer").events().iter().any(|e| matches!(e, NodeEvent::Signed { .. })));
    assert_eq!(net.phase(), Phase::Dispute);
}

#[test]
fn proposal_from_the_wrong_initiator_is_disputed() {
    let mut net = network(Case::SupplyChain);
    let msg = crafted(&net, "Supplier", "order_goods", 1, after_order_goods(&net));
    net.inject("Supplier", "Manufacturer", msg);
    assert_eq!(disputes(&net, "Manufacturer"), 1);
}

#[test]
fn stale_and_gapped_seqs_are_disputed() {
    let v = Case::SupplyChain.variant(0).unwrap();

    let mut net = network(Case::SupplyChain);
    run(&mut net, &v[..3]);
    let state = net.node("Middleman").state().to_bytes(11);
    net.inject("BulkBuyer", "Supplier", crafted(&net, "BulkBuyer", "order_goods", 1, state));
    assert_eq!(disputes(&net, "Supplier"), 1);
    assert_eq!(net.phase(), Phase::Dispute);
    assert_eq!(net.ledger.view(&net.contract_id()).unwrap().seq, 3);

    let mut net = network(Case::SupplyChain);
    net.inject("BulkBuyer", "Supplier", crafted(&net, "BulkBuyer", "order_goods", 2, after_order_goods(&net)));
    assert_eq!(disputes(&net, "Supplier"), 1);
}

#[test]
fn conforming_proposal_gets_a_valid_signature() {
    let mut net = network(Case::SupplyChain);
    let msg = crafted(&net, "BulkBuyer", "order_goods", 1, after_order_goods(&net));
    let step = msg.payload().clone();
    let now = net.now();
    let node = net.node_mut("Manufacturer");
    let mut chain = pchan_core::ledger::Ledger::new(1);
    let out = node.on_message("BulkBuyer", msg, now, &mut chain);
    assert_eq!(out.len(), 1);
    assert_eq!(out[0].to, "BulkBuyer");
    let ChannelMessage::Sign { signer, signature, step: signed } = &out[0].msg else { panic!("{out:?}") };
    assert_eq!((signer.as_str(), signed), ("Manufacturer", &step));
    let pk = derive_signing_key(b"Manufacturer").verifying_key().to_bytes();
    assert!(pchan_core::wire::verify_step(&step, &signature.0, &pk));
}

#[test]
fn confirm_handling() {
    let mut net = network(Case::SupplyChain);
    let msg = crafted(&net, "BulkBuyer", "order_goods", 1, after_order_goods(&net));
    let payload = msg.payload().clone();
    let mut full = SignedStep::new(payload.clone());
    for r in net.roles().cloned().collect::<Vec<_>>() {
        full.add(r.clone(), sign_step(&payload, &derive_signing_key(r.as_bytes())).unwrap());
    }

    // Out of order: a confirm two steps ahead is dropped.
    let ahead = SignedStep { payload: StepPayload { seq: 3, ..payload.clone() }, ..full.clone() };
    net.inject("BulkBuyer", "Supplier", ChannelMessage::Confirm { step: ahead });
    assert_eq!(net.node("Supplier").seq(), 0);
    assert!(matches!(net.node("Supplier").events().last(), Some(NodeEvent::Ignored { .. })));

    let mut short = full.clone();
    short.signatures.remove("Middleman");
    net.inject("BulkBuyer", "Supplier", ChannelMessage::Confirm { step: short });
    assert_eq!(disputes(&net, "Supplier"), 1);

    let mut net = network(Case::SupplyChain);
    net.inject("BulkBuyer", "Supplier", ChannelMessage::Confirm { step: full });
    assert_eq!(net.node("Supplier").seq(), 1);
    assert_eq!(net.node("Supplier").archive().steps().len(), 1);
}

#[test]
fn watcher_counters_stale_state() {
    for stale in [0, 2] {
        let mut net = network(Case::SupplyChain);
        let v = Case::SupplyChain.variant(1).unwrap();
        run(&mut net, &v[..4]);
        net.set_behaviour("Supplier", Behaviour::Adversary);
        let id = net.contract_id();
        net.act("Supplier", |n, chain, _| n.submit_stale(stale, chain)).unwrap();
        assert_eq!(net.ledger.view(&id).unwrap().seq, stale);
        net.watch_all();
        let view = net.ledger.view(&id).unwrap();
        assert_eq!((view.phase, view.seq), (Phase::Dispute, 4));
        let counters: usize = net
            .roles()
            .map(|r| net.node(r).events().iter().filter(|e| matches!(e, NodeEvent::Countered { .. })).count())
            .sum();
        assert_eq!(counters, 1, "the first watcher counters, the rest see nothing to do");
        net.expire_window();
        assert_eq!(net.ledger.view(&id).unwrap().seq, 4);
        assert_eq!(net.phase(), Phase::OnChain);
        for req in &v[4..] {
            assert!(net.enact(&req.requester_role, req).accepted());
        }
        assert!(net.statuses().iter().all(|s| s.case_id == 1));
    }
}

#[test]
fn close_before_the_end_fails_locally() {
    let mut net = network(Case::IncidentManagement);
    let v = Case::IncidentManagement.variant(0).unwrap();
    run(&mut net, &v[..2]);
    assert_eq!(net.close(), Err(CloseError::NotAtEnd));
    assert_eq!(net.phase(), Phase::ChannelOpen);
}

#[test]
fn close_racing_a_stale_submission() {
    let mut net = network(Case::IncidentManagement);
    let v = Case::IncidentManagement.variant(2).unwrap();
    run(&mut net, &v);
    net.act("Customer", |n, chain, _| n.submit_stale(1, chain)).unwrap();
    // Whoever closes now loses the race and falls back to the dispute.
    let closed = net.close();
    assert!(matches!(closed, Err(CloseError::Refused(_))), "{closed:?}");
    assert_eq!(net.ledger.view(&net.contract_id()).unwrap().seq, v.len() as u64);
    net.expire_window();
    // The installed end state closes the case on expiry.
    assert!(net.statuses().iter().all(|s| (s.case_id, s.seq) == (1, 0)));
    assert!(net.is_stable());
}

#[test]
fn competing_proposals_on_parallel_branches() {
    let model = ModelBuilder::new("race")
        .role("A")
        .role("B")
        .role("C")
        .start("s")
        .and("split")
        .task("a", "A", "C")
        .task("b", "B", "C")
        .and("join")
        .end("e")
        .path(&["s", "split", "a", "join", "e"])
        .path(&["split", "b", "join"])
        .build();
    let machine = Arc::new(compile_model(&model, CompileOptions::default()).unwrap().machine);
    let mut net = SimNetwork::new(machine, SimConfig::default());
    // Both propose seq 1 before anything is delivered.
    let (a, b) = (TaskRequest::new("a", "A"), TaskRequest::new("b", "B"));
    let pa = net.act("A", |n, chain, now| n.enact(&a, now, chain)).unwrap();
    let pb = net.act("B", |n, chain, now| n.enact(&b, now, chain)).unwrap();
    for (from, p) in [("A", pa), ("B", pb)] {
        let pchan_trigger::Enacted::Proposed(out) = p else { panic!() };
        net.send(from, out);
    }
    net.run();
    assert!(net.node("B").events().iter().any(|e| matches!(e, NodeEvent::Yielded { seq: 1, .. })));
    assert_eq!(net.node("C").seq(), 2);
    assert!(net.is_stable());
    assert!(net.machine().is_end_state(net.node("C").state()));
    assert_eq!(net.phase(), Phase::ChannelOpen);
    net.close().unwrap();
}

#[test]
fn lossy_network_still_finishes_the_case() {
    for seed in 0..10 {
        let faults = pchan_trigger::Faults { drop_probability: 0.2, max_extra_delay: 5 };
        let cfg = SimConfig { faults, seed, ..Default::default() };
        let mut net = SimNetwork::new(Arc::new(Case::SupplyChain.compile().machine), cfg);
        let v = Case::SupplyChain.variant(1).unwrap();
        let mut i = 0;
        for _ in 0..100 {
            if i == v.len() {
                break;
            }
            match net.enact(&v[i].requester_role, &v[i]) {
                Outcome::Confirmed { .. } | Outcome::OnChain { .. } => i += 1,
                Outcome::Disputed { .. } | Outcome::Rejected(EnactError::InDispute) => net.expire_window(),
                // The initiator missed a confirm and its own check refuses;
                // its process system falls back to the ledger.
                Outcome::Rejected(e) => {
                    let role = v[i].requester_role.clone();
                    net.act(&role, |n, chain, _| n.start_dispute(e.to_string(), chain));
                    net.expire_window();
                }
            }
        }
        assert_eq!(i, v.len(), "seed {seed}: {:#?}", net.node(&v[i.min(v.len()-1)].requester_role).events());
        if net.phase() == Phase::ChannelOpen && net.node("Manufacturer").seq() > 0 {
            net.close().unwrap();
        }
        assert!(net.statuses().iter().all(|s| (s.case_id, s.seq) == (1, 0)), "seed {seed}: {:?}", net.statuses());
    }
}

#[test]
fn journal_is_written_before_messages_leave() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bulkbuyer.jsonl");
    let machine = Arc::new(Case::SupplyChain.compile().machine);
    let mut net = SimNetwork::new(machine.clone(), SimConfig::default());
    let archive = pchan_trigger::Archive::with_journal(&path).unwrap();
    let cfg = pchan_trigger::TriggerConfig {
        role: "BulkBuyer".into(),
        chain_id: 1,
        contract_id: net.contract_id(),
        role_keys: machine
            .role_ids
            .iter()
            .map(|r| (r.clone(), derive_signing_key(r.as_bytes()).verifying_key().to_bytes()))
            .collect(),
        proposal_timeout: 2_000,
        local_check: true,
        behaviour: Behaviour::Honest,
    };
    let mut node = pchan_trigger::TriggerNode::with_archive(cfg, derive_signing_key(b"BulkBuyer"), machine, archive);
    let req = &Case::SupplyChain.variant(0).unwrap()[0];
    let pchan_trigger::Enacted::Proposed(out) = node.enact(req, 0, &mut net.ledger).unwrap() else { panic!() };
    let lines = std::fs::read_to_string(&path).unwrap();
    assert_eq!(lines.lines().count(), 1);
    assert!(lines.contains(r#""entry":"signed""#));
    assert_eq!(out.len(), 4);
}

#[test]
fn identical_runs_give_identical_ledgers() {
    let go = || {
        let mut net = network(Case::SupplyChain);
        let v = Case::SupplyChain.variant(1).unwrap();
        run(&mut net, &v[..5]);
        net.set_behaviour("Middleman", Behaviour::Silent);
        net.enact(&v[5].requester_role, &v[5]);
        net.expire_window();
        for req in &v[5..] {
            net.enact(&req.requester_role, req);
        }
        net.ledger.export_jsonl()
    };
    assert_eq!(go(), go());
}
