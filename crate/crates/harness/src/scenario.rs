//! Best, bad, worst and unavailable-signer runs of one fixture variant.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use pchan_core::fixtures::Case;
use pchan_core::ledger::{Phase, TxAction};
use pchan_core::machine::TaskRequest;
use pchan_trigger::{Behaviour, Outcome, SimConfig, SimNetwork};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cost::CostReport;
use crate::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    /// Everything off-chain, closed unanimously.
    Best,
    /// Dispute with the latest state after half the events.
    Bad,
    /// Stale dispute right after the start, remainder on-chain.
    Worst,
    /// One signer falls silent at a random event.
    Unavailable,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 4] =
        [ScenarioKind::Best, ScenarioKind::Bad, ScenarioKind::Worst, ScenarioKind::Unavailable];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::Best => "best",
            ScenarioKind::Bad => "bad",
            ScenarioKind::Worst => "worst",
            ScenarioKind::Unavailable => "unavailable",
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScenarioKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ScenarioKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown scenario kind {s}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub case: Case,
    pub variant: usize,
    pub kind: ScenarioKind,
    pub seed: u64,
    pub dispute_window: u64,
    /// Ticks a proposer waits for signatures before disputing.
    pub proposal_timeout: u64,
}

impl ScenarioSpec {
    pub fn new(case: Case, variant: usize, kind: ScenarioKind) -> Self {
        let d = SimConfig::default();
        ScenarioSpec { case, variant, kind, seed: 0, dispute_window: d.dispute_window, proposal_timeout: d.proposal_timeout }
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn window(mut self, blocks: u64) -> Self {
        self.dispute_window = blocks;
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioOutcome {
    pub events: usize,
    pub off_chain_events: usize,
    pub on_chain_events: usize,
    pub end_reached: bool,
    /// Node that opened the dispute, if any.
    pub disputer: Option<String>,
    pub stale_seq: Option<u64>,
    /// Contract seq in the last block before the window closed.
    pub installed_seq: Option<u64>,
    /// Highest complete seq archived by any honest node at that point.
    pub honest_best_seq: Option<u64>,
    pub silenced: Option<String>,
    pub silenced_at: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRun {
    pub spec: ScenarioSpec,
    pub outcome: ScenarioOutcome,
    pub report: CostReport,
    #[serde(skip)]
    pub ledger_log: String,
}

fn invariant(ok: bool, spec: &ScenarioSpec, what: impl FnOnce() -> String) -> Result<(), HarnessError> {
    if ok {
        Ok(())
    } else {
        Err(HarnessError::Invariant(format!("{} variant {} {} seed {}: {}", spec.case, spec.variant, spec.kind, spec.seed, what())))
    }
}

fn off_chain(net: &mut SimNetwork, spec: &ScenarioSpec, events: &[TaskRequest]) -> Result<(), HarnessError> {
    for req in events {
        let out = net.enact(&req.requester_role, req);
        invariant(matches!(out, Outcome::Confirmed { .. }), spec, || format!("{} was not confirmed: {out:?}", req.task_id))?;
    }
    Ok(())
}

fn on_chain(net: &mut SimNetwork, spec: &ScenarioSpec, events: &[TaskRequest]) -> Result<(), HarnessError> {
    for req in events {
        let out = net.enact(&req.requester_role, req);
        invariant(matches!(out, Outcome::OnChain { .. }), spec, || format!("{} did not run on-chain: {out:?}", req.task_id))?;
    }
    Ok(())
}

fn honest_best(net: &SimNetwork) -> Option<u64> {
    net.roles()
        .map(|r| net.node(r))
        .filter(|n| n.behaviour() == Behaviour::Honest)
        .filter_map(|n| n.archive().best().map(|s| s.payload.seq))
        .max()
}

/// Runs blocks until the last one before the deadline, notes what is
/// installed there, then lets the window close.
fn ride_out_window(net: &mut SimNetwork, out: &mut ScenarioOutcome) {
    let id = net.contract_id();
    net.watch_all();
    if let Some(d) = net.ledger.view(&id).and_then(|v| v.dispute_deadline) {
        let h = net.ledger.height();
        net.advance_blocks(d.saturating_sub(h).saturating_sub(1));
    }
    out.installed_seq = net.ledger.view(&id).map(|v| v.seq);
    out.honest_best_seq = honest_best(net);
    net.expire_window();
}

pub fn run_scenario(spec: &ScenarioSpec) -> Result<ScenarioRun, HarnessError> {
    let events = spec
        .case
        .variant(spec.variant)
        .ok_or(HarnessError::NoSuchVariant { case: spec.case, variant: spec.variant })?;
    let machine = Arc::new(spec.case.compile().machine);
    let cfg = SimConfig {
        dispute_window: spec.dispute_window,
        proposal_timeout: spec.proposal_timeout,
        seed: spec.seed,
        ..SimConfig::default()
    };
    let mut net = SimNetwork::new(machine.clone(), cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let roles: Vec<String> = net.roles().cloned().collect();
    let len = events.len();
    let mut out = ScenarioOutcome { events: len, ..Default::default() };

    match spec.kind {
        ScenarioKind::Best => {
            off_chain(&mut net, spec, &events)?;
            out.off_chain_events = len;
            let closed = net.close();
            invariant(closed.is_ok(), spec, || format!("close failed: {closed:?}"))?;
        }
        ScenarioKind::Bad => {
            let half = len.div_ceil(2);
            off_chain(&mut net, spec, &events[..half])?;
            let disputer = roles[rng.random_range(0..roles.len())].clone();
            net.act(&disputer, |n, chain, _| n.start_dispute("local process system requested settlement", chain));
            invariant(net.phase() == Phase::Dispute, spec, || format!("no dispute after {disputer} asked"))?;
            ride_out_window(&mut net, &mut out);
            on_chain(&mut net, spec, &events[half..])?;
            out.off_chain_events = half;
            out.on_chain_events = len - half;
            out.disputer = Some(disputer);
        }
        ScenarioKind::Worst => {
            let stale = rng.random_range(0..=1u64);
            let prefix = stale as usize + 1;
            off_chain(&mut net, spec, &events[..prefix])?;
            let adversary = roles[rng.random_range(0..roles.len())].clone();
            net.set_behaviour(&adversary, Behaviour::Adversary);
            let submitted = net.act(&adversary, |n, chain, _| n.submit_stale(stale, chain));
            invariant(submitted.is_ok(), spec, || format!("stale submission refused: {submitted:?}"))?;
            ride_out_window(&mut net, &mut out);
            invariant(out.installed_seq == out.honest_best_seq, spec, || {
                format!("installed seq {:?}, honest nodes hold {:?}", out.installed_seq, out.honest_best_seq)
            })?;
            invariant(out.installed_seq > Some(stale), spec, || "stale state survived the window".into())?;
            on_chain(&mut net, spec, &events[prefix..])?;
            out.off_chain_events = prefix;
            out.on_chain_events = len - prefix;
            out.disputer = Some(adversary);
            out.stale_seq = Some(stale);
        }
        ScenarioKind::Unavailable => {
            let at = rng.random_range(0..len);
            let initiator = &events[at].requester_role;
            let others: Vec<&String> = roles.iter().filter(|r| *r != initiator).collect();
            let victim = others[rng.random_range(0..others.len())].clone();
            off_chain(&mut net, spec, &events[..at])?;
            net.set_behaviour(&victim, Behaviour::Silent);
            let stalled = net.enact(initiator, &events[at]);
            invariant(matches!(stalled, Outcome::Disputed { .. }), spec, || format!("silent {victim} went unnoticed: {stalled:?}"))?;
            ride_out_window(&mut net, &mut out);
            on_chain(&mut net, spec, &events[at..])?;
            out.off_chain_events = at;
            out.on_chain_events = len - at;
            out.disputer = Some(initiator.clone());
            out.silenced = Some(victim);
            out.silenced_at = Some(at);
        }
    }

    let view = net.ledger.view(&net.contract_id());
    out.end_reached = view.as_ref().is_some_and(|v| v.case_id == 1 && v.phase == Phase::ChannelOpen);
    invariant(out.end_reached, spec, || format!("case did not end: {view:?}"))?;
    if spec.kind == ScenarioKind::Best {
        let actions: Vec<TxAction> = net.ledger.transactions().iter().filter(|t| t.accepted).map(|t| t.action).collect();
        invariant(actions == [TxAction::Deploy, TxAction::Close], spec, || format!("best case used {actions:?}"))?;
    }

    let report = CostReport::new(spec, &net.ledger, &net.contract_id(), &machine, &events)?;
    Ok(ScenarioRun { spec: spec.clone(), outcome: out, report, ledger_log: net.ledger.export_jsonl() })
}
