//! One PASS/FAIL line per acceptance criterion; exits non-zero on any FAIL.

mod common;

use std::collections::BTreeMap;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use pchan_core::fixtures::Case;
use pchan_core::ledger::{Ledger, Rejection, TxKind};
use pchan_core::machine::TaskRequest;
use pchan_core::net::{reduce_net, to_interaction_net, traces_equivalent};
use pchan_core::synth::{random_model_seeded, SynthParams};
use pchan_core::wire::{derive_signing_key, sign_step, Address, SignedStep, StepPayload};
use pchan_harness::{
    break_even, classify, evaluate, mutate_traces, replay_conformance, run_scenario, variant_traces, Mix,
    ScenarioKind, ScenarioSpec, Verdict,
};
use pchan_trigger::SimConfig;

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn ac1_conformance() -> Check {
    let started = Instant::now();
    let mut summary = vec![];
    for case in Case::ALL {
        let compiled = case.compile();
        let machine = Arc::new(compiled.machine.clone());
        let variants = variant_traces(case);
        let mutants = mutate_traces(&case.model(), &machine, &variants, 2000, 42).map_err(|e| e.to_string())?;
        let mut traces = variants.clone();
        traces.extend(mutants);
        let r = replay_conformance(machine.clone(), &traces, SimConfig::default()).map_err(|e| e.to_string())?;
        for (i, (t, res)) in traces.iter().zip(&r.results).enumerate() {
            let oracle = common::net_verdict(&compiled.net, &t.events);
            ensure(res.verdict == oracle, format!("{case} trace {i} {t}: channel {:?}, oracle {oracle:?}", res.verdict))?;
            ensure(classify(&machine, t) == oracle, format!("{case} trace {i}: machine replay disagrees"))?;
            ensure(res.stable, format!("{case} trace {i} left the channel unstable"))?;
            if i < variants.len() {
                ensure(oracle == Verdict::Conforming && res.accepted.iter().all(|a| *a), format!("{case} variant {i}"))?;
            }
        }
        ensure(r.conforming == variants.len() && r.false_accepts == 0, format!("{case}: {} conforming", r.conforming))?;
        summary.push(format!("{case} {} rejected/{} incomplete", r.rejected, r.incomplete));
    }
    let took = started.elapsed();
    ensure(took < Duration::from_secs(300), format!("took {took:?}"))?;
    Ok(format!("0 misclassified; {}; {:.1}s", summary.join(", "), took.as_secs_f64()))
}

fn ac2_best_case() -> Check {
    let mut closes = BTreeMap::new();
    for case in Case::ALL {
        for v in 0..case.variant_count() {
            let run = run_scenario(&ScenarioSpec::new(case, v, ScenarioKind::Best)).map_err(|e| e.to_string())?;
            let kinds: Vec<TxKind> = run.report.records.iter().map(|r| r.tx_kind).collect();
            ensure(kinds == [TxKind::Deploy, TxKind::Close], format!("{case} variant {v}: {kinds:?}"))?;
            closes.insert((case, v, run.outcome.events), run.report.run_cost);
        }
    }
    let first = *closes.values().next().unwrap();
    ensure(closes.values().all(|c| *c == first), format!("close costs differ: {closes:?}"))?;
    Ok(format!("close = {first} units for all {} variants", closes.len()))
}

fn all_variants() -> Vec<(Case, usize)> {
    Case::ALL.iter().flat_map(|&c| (0..c.variant_count()).map(move |v| (c, v))).collect()
}

fn ac3_stale_state() -> Check {
    let variants = all_variants();
    let mut stale = [0; 2];
    for seed in 0..120u64 {
        let (case, v) = variants[seed as usize % variants.len()];
        let run = run_scenario(&ScenarioSpec::new(case, v, ScenarioKind::Worst).seed(seed)).map_err(|e| e.to_string())?;
        let o = &run.outcome;
        let s = o.stale_seq.unwrap();
        stale[s as usize] += 1;
        ensure(
            o.installed_seq == o.honest_best_seq && o.installed_seq > Some(s) && o.end_reached,
            format!("seed {seed}: {o:?}"),
        )?;
    }
    ensure(stale.iter().all(|n| *n > 0), "only one stale seq exercised")?;
    Ok(format!("120 seeds, stale seq 0 x{} and 1 x{}", stale[0], stale[1]))
}

fn ac4_unavailability() -> Check {
    let variants = all_variants();
    for seed in 0..120u64 {
        let (case, v) = variants[seed as usize % variants.len()];
        let run = run_scenario(&ScenarioSpec::new(case, v, ScenarioKind::Unavailable).seed(seed)).map_err(|e| e.to_string())?;
        let o = &run.outcome;
        ensure(o.end_reached && o.on_chain_events > 0, format!("seed {seed}: {o:?}"))?;
    }
    Ok("120 seeds reached an end state on-chain".into())
}

fn ac5_reduction() -> Check {
    let started = Instant::now();
    let mut nets: Vec<(String, _)> = Case::ALL.iter().map(|c| (c.to_string(), to_interaction_net(&c.model()))).collect();
    nets.extend((0..200).map(|s| (format!("random {s}"), to_interaction_net(&random_model_seeded(s, SynthParams::default())))));
    for (name, net) in &nets {
        let reduced = reduce_net(net);
        let eq = traces_equivalent(net, &reduced, 12).map_err(|e| format!("{name}: {e:?}"))?;
        ensure(eq, format!("{name}: traces differ"))?;
        ensure(reduce_net(&reduced) == reduced, format!("{name}: not idempotent"))?;
    }
    let took = started.elapsed();
    ensure(took < Duration::from_secs(120), format!("took {took:?}"))?;
    Ok(format!("{} nets; {:.1}s", nets.len(), took.as_secs_f64()))
}

fn ac6_amortisation() -> Check {
    let ev = evaluate(5, 10, 20).map_err(|e| e.to_string())?;
    let mut lines = vec![];
    for c in &ev.cases {
        let s = |m: Mix| break_even(c, m, 20);
        let savings = [
            c.baseline_run - c.best,
            s(Mix::disputes(0.05)).per_run_savings,
            s(Mix::disputes(0.2)).per_run_savings,
            c.baseline_run - c.bad,
            c.baseline_run - c.worst,
        ];
        ensure(savings.windows(2).all(|w| w[0] > w[1]), format!("{}: savings {savings:?}", c.case))?;
        let (b0, b5, b20) = (s(Mix::NONE).runs, s(Mix::disputes(0.05)).runs, s(Mix::disputes(0.2)).runs);
        ensure(b0.is_some_and(|k| k <= 10), format!("{}: break-even at 0% {b0:?}", c.case))?;
        ensure(b5.is_some() && b20.is_some() && b5 <= b20, format!("{}: 5% {b5:?}, 20% {b20:?}", c.case))?;
        lines.push(format!("{} break-even {}/{}/{}", c.case, b0.unwrap(), b5.unwrap(), b20.unwrap()));
    }
    Ok(lines.join(", "))
}

fn ac7_replay_protection() -> Check {
    let machine = Arc::new(Case::SupplyChain.compile().machine);
    let mut ledger = Ledger::new(1);
    let keys: BTreeMap<String, _> = machine.role_ids.iter().map(|r| (r.clone(), derive_signing_key(r.as_bytes()))).collect();
    let binding: BTreeMap<String, Address> =
        keys.iter().map(|(r, k)| (r.clone(), ledger.register_account(k.verifying_key().to_bytes()))).collect();
    let x = ledger.deploy_channel(machine.clone(), binding.clone(), 10).map_err(|e| e.to_string())?;
    let y = ledger.deploy_channel(machine.clone(), binding.clone(), 10).map_err(|e| e.to_string())?;
    let complete = |contract, case_id, seq, state: &pchan_core::marking::Marking, task: &str| {
        let payload = StepPayload {
            chain_id: 1,
            contract_id: contract,
            case_id,
            seq,
            task_id: task.into(),
            choice_data: vec![],
            new_state: machine.state_bytes(state),
        };
        let mut s = SignedStep::new(payload.clone());
        for (r, k) in &keys {
            s.add(r.clone(), sign_step(&payload, k).unwrap());
        }
        s
    };
    let sender = binding["BulkBuyer"];
    let first = machine.step(&machine.initial_state, &TaskRequest::new("order_goods", "BulkBuyer")).unwrap();
    let on_x = complete(x, 0, 1, &first, "order_goods");
    let r = ledger.submit_state(&y, &on_x, sender);
    ensure(r == Err(Rejection::WrongContract), format!("contract Y took X's step: {r:?}"))?;

    let end = Case::SupplyChain.variant(0).unwrap().iter().try_fold(machine.initial_state.clone(), |m, req| machine.step(&m, req));
    let end = end.map_err(|e| e.to_string())?;
    ledger.close_channel(&x, &complete(x, 0, 8, &end, "report_delivery"), sender).map_err(|e| e.to_string())?;
    let r = ledger.submit_state(&x, &on_x, sender);
    ensure(matches!(r, Err(Rejection::WrongCase { submitted: 0, current: 1 })), format!("case 1 took a case 0 step: {r:?}"))?;
    let r = ledger.submit_state(&y, &on_x, sender);
    ensure(r == Err(Rejection::WrongContract), "second attempt on Y")?;
    Ok("cross-contract and cross-case steps refused".into())
}

fn ac8_determinism() -> Check {
    let mut n = 0;
    for (case, v) in all_variants() {
        for kind in ScenarioKind::ALL {
            let spec = ScenarioSpec::new(case, v, kind).seed(31 + v as u64);
            let a = run_scenario(&spec).map_err(|e| e.to_string())?;
            let b = run_scenario(&spec).map_err(|e| e.to_string())?;
            ensure(a.ledger_log == b.ledger_log, format!("{case} {v} {kind}: ledger logs differ"))?;
            let (ra, rb) = (serde_json::to_vec(&a.report).unwrap(), serde_json::to_vec(&b.report).unwrap());
            ensure(ra == rb, format!("{case} {v} {kind}: cost reports differ"))?;
            n += 1;
        }
    }
    Ok(format!("{n} scenario pairs byte-identical"))
}

fn main() -> ExitCode {
    let checks: [Criterion; 8] = [
        ("AC1 conformance reproduction", ac1_conformance),
        ("AC2 best-case footprint", ac2_best_case),
        ("AC3 stale-state safety", ac3_stale_state),
        ("AC4 liveness under unavailability", ac4_unavailability),
        ("AC5 reduction oracle", ac5_reduction),
        ("AC6 amortisation shape", ac6_amortisation),
        ("AC7 replay protection", ac7_replay_protection),
        ("AC8 determinism", ac8_determinism),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        match check() {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
