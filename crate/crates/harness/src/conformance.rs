//! Replays traces through a simulated channel with the proposers' local
//! checks switched off, so every verdict comes from the signers.

use std::sync::Arc;

use pchan_core::ledger::Phase;
use pchan_core::machine::ProcessStateMachine;
use pchan_trigger::{Outcome, SimConfig, SimNetwork};
use serde::{Deserialize, Serialize};

use crate::trace::{classify, completion_verdict, Trace, Verdict};
use crate::HarnessError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceResult {
    pub verdict: Verdict,
    pub expected: Verdict,
    /// Accept flag per driven event; driving stops at the first rejection.
    pub accepted: Vec<bool>,
    pub stable: bool,
}

impl TraceResult {
    pub fn correct(&self) -> bool {
        self.verdict == self.expected
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub traces: usize,
    pub conforming: usize,
    pub rejected: usize,
    pub incomplete: usize,
    pub misclassified: usize,
    /// Traces the oracle rejects but the channel accepted to the end.
    pub false_accepts: usize,
    pub unstable: usize,
    pub results: Vec<TraceResult>,
}

impl ClassificationReport {
    pub fn sound(&self) -> bool {
        self.misclassified == 0 && self.unstable == 0
    }

    fn push(&mut self, r: TraceResult) {
        self.traces += 1;
        match r.verdict {
            Verdict::Conforming => self.conforming += 1,
            Verdict::Incomplete => self.incomplete += 1,
            Verdict::RejectedAt(_) => self.rejected += 1,
        }
        if !r.correct() {
            self.misclassified += 1;
            if r.verdict == Verdict::Conforming {
                self.false_accepts += 1;
            }
        }
        if !r.stable {
            self.unstable += 1;
        }
        self.results.push(r);
    }
}

/// Drives every event of every trace to its initiator's node, one trace
/// per case. A case that closed cleanly leaves the contract ready for the
/// next one; anything else gets a fresh contract.
pub fn replay_conformance(
    machine: Arc<ProcessStateMachine>,
    traces: &[Trace],
    cfg: SimConfig,
) -> Result<ClassificationReport, HarnessError> {
    let mut net = SimNetwork::new(machine.clone(), SimConfig { local_check: false, ..cfg });
    let mut report = ClassificationReport::default();
    let probe = net.roles().next().cloned().ok_or_else(|| HarnessError::Scenario("process has no roles".into()))?;
    for trace in traces {
        let case_before = net.node(&probe).case_id();
        let mut accepted = Vec::with_capacity(trace.len());
        let mut rejected_at = None;
        for (i, req) in trace.events.iter().enumerate() {
            if !net.machine().role_ids.contains(&req.requester_role) {
                rejected_at = Some(i);
                break;
            }
            match net.enact(&req.requester_role, req) {
                Outcome::Confirmed { .. } => accepted.push(true),
                Outcome::Disputed { .. } | Outcome::Rejected(_) => {
                    accepted.push(false);
                    rejected_at = Some(i);
                    break;
                }
                Outcome::OnChain { .. } => {
                    return Err(HarnessError::Scenario(format!("trace {trace} went on-chain unprompted")));
                }
            }
        }
        let stable = net.is_stable();
        let verdict = match rejected_at {
            Some(i) => Verdict::RejectedAt(i),
            None => completion_verdict(&machine, net.node(&probe).state()),
        };
        report.push(TraceResult { verdict, expected: classify(&machine, trace), accepted, stable });

        let closed = verdict == Verdict::Conforming && !trace.is_empty() && net.close().is_ok();
        if !(closed && net.phase() == Phase::ChannelOpen && net.node(&probe).case_id() == case_before + 1) {
            net.redeploy();
        }
    }
    Ok(report)
}
