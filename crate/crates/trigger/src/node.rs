//! The off-chain protocol for one participant.
//!
//! A proposal is a [`StepPayload`] for `seq + 1` signed by its initiator.
//! Every other node re-runs the step on its own state and replies with a
//! signature; once the initiator holds all of them it installs the state
//! and broadcasts the full set. Anything that does not check out sends the
//! node to the ledger with the best evidence it has.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{self, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use ed25519_dalek::SigningKey;
use pchan_core::ledger::{Phase, Rejection};
use pchan_core::machine::{ConformanceError, ProcessStateMachine, TaskRequest};
use pchan_core::marking::Marking;
use pchan_core::wire::{
    address_of, sign_step, verify_step, Address, ChannelMessage, ContractId, Hash32, SigBytes, SignedStep, StepPayload,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{debug, info, warn};

use crate::chain::ChainClient;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Behaviour {
    Honest,
    /// Drops every channel message; still watches the ledger and can be
    /// driven on-chain.
    Silent,
    /// Follows the channel protocol but never counters a dispute, so its
    /// own stale submissions are left to the others.
    Adversary,
}

#[derive(Debug, Clone)]
pub struct TriggerConfig {
    pub role: String,
    pub chain_id: u64,
    pub contract_id: ContractId,
    /// Verifying key of every channel role, this one included.
    pub role_keys: BTreeMap<String, [u8; 32]>,
    /// Logical ticks a proposal may wait for signatures.
    pub proposal_timeout: u64,
    /// Reject requests this node's own machine refuses before they reach
    /// the peers. Switched off to model a faulty process system.
    pub local_check: bool,
    pub behaviour: Behaviour,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outbound {
    pub to: String,
    pub msg: ChannelMessage,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum NodeEvent {
    Proposed { seq: u64, task: String },
    Signed { seq: u64, task: String, proposer: String },
    Confirmed { seq: u64, task: String, proposer: String },
    Yielded { seq: u64, task: String },
    Ignored { reason: String },
    DisputeRaised { reason: String },
    Countered { seq: u64 },
    OnChainTask { seq: u64, task: String },
    Closed { case_id: u64 },
    Reset { case_id: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeStatus {
    pub role: String,
    pub case_id: u64,
    pub seq: u64,
    pub state: String,
    pub phase: Phase,
    pub pending: Option<u64>,
    pub archived: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Enacted {
    /// Proposal sent; the outcome arrives through later messages.
    Proposed(Vec<Outbound>),
    /// The channel is on-chain and the ledger accepted the task.
    OnChain(Marking),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EnactError {
    #[error("a proposal for seq {0} is still open")]
    Busy(u64),
    #[error("the contract is in dispute; wait for the window to close")]
    InDispute,
    #[error(transparent)]
    Conformance(#[from] ConformanceError),
    #[error("ledger refused the task: {0}")]
    Chain(Rejection),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CloseError {
    #[error("local state is not an end state")]
    NotAtEnd,
    #[error("the final step was proposed by {0}")]
    NotProposer(String),
    #[error("close refused, dispute raised: {0}")]
    Refused(Rejection),
}

/// Complete steps of the running case plus an optional append-only
/// journal of everything signed or installed.
#[derive(Debug, Default)]
pub struct Archive {
    steps: Vec<SignedStep>,
    journal: Option<BufWriter<File>>,
}

#[derive(Serialize)]
#[serde(tag = "entry", rename_all = "snake_case")]
enum JournalEntry<'a> {
    Signed { step: &'a StepPayload, proposer: &'a str },
    Confirmed { step: &'a SignedStep },
}

impl Archive {
    pub fn with_journal(path: &Path) -> io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Archive { steps: Vec::new(), journal: Some(BufWriter::new(file)) })
    }

    fn write(&mut self, entry: &JournalEntry<'_>) {
        if let Some(j) = &mut self.journal {
            let line = serde_json::to_string(entry).expect("journal entry serialises");
            // Flushed before the caller lets any message out.
            if let Err(e) = writeln!(j, "{line}").and_then(|_| j.flush()) {
                warn!("journal write failed: {e}");
            }
        }
    }

    fn push(&mut self, step: SignedStep) {
        self.write(&JournalEntry::Confirmed { step: &step });
        self.steps.push(step);
    }

    pub fn steps(&self) -> &[SignedStep] {
        &self.steps
    }

    pub fn best(&self) -> Option<&SignedStep> {
        self.steps.iter().max_by_key(|s| s.payload.seq)
    }

    pub fn lowest(&self) -> Option<&SignedStep> {
        self.steps.iter().min_by_key(|s| s.payload.seq)
    }

    pub fn at(&self, seq: u64) -> Option<&SignedStep> {
        self.steps.iter().find(|s| s.payload.seq == seq)
    }

    fn clear(&mut self) {
        self.steps.clear();
    }
}

#[derive(Debug, Clone)]
struct Pending {
    step: SignedStep,
    request: TaskRequest,
    deadline: u64,
}

pub struct TriggerNode {
    cfg: TriggerConfig,
    key: SigningKey,
    address: Address,
    machine: Arc<ProcessStateMachine>,
    state: Marking,
    seq: u64,
    case_id: u64,
    phase: Phase,
    pending: Option<Pending>,
    /// Digest signed per seq in this case; never sign two different steps
    /// for one seq.
    signed: BTreeMap<u64, Hash32>,
    /// Who proposed each installed seq.
    proposers: BTreeMap<u64, String>,
    /// Requests that lost a race for their seq.
    retry: Vec<TaskRequest>,
    archive: Archive,
    events: Vec<NodeEvent>,
}

impl TriggerNode {
    pub fn new(cfg: TriggerConfig, key: SigningKey, machine: Arc<ProcessStateMachine>) -> Self {
        Self::with_archive(cfg, key, machine, Archive::default())
    }

    pub fn with_archive(cfg: TriggerConfig, key: SigningKey, machine: Arc<ProcessStateMachine>, archive: Archive) -> Self {
        TriggerNode {
            address: address_of(&key.verifying_key()),
            key,
            state: machine.initial_state.clone(),
            machine,
            seq: 0,
            case_id: 0,
            phase: Phase::ChannelOpen,
            pending: None,
            signed: BTreeMap::new(),
            proposers: BTreeMap::new(),
            retry: Vec::new(),
            archive,
            events: Vec::new(),
            cfg,
        }
    }

    pub fn role(&self) -> &str {
        &self.cfg.role
    }

    pub fn address(&self) -> Address {
        self.address
    }

    pub fn behaviour(&self) -> Behaviour {
        self.cfg.behaviour
    }

    pub fn set_behaviour(&mut self, b: Behaviour) {
        self.cfg.behaviour = b;
    }

    pub fn set_local_check(&mut self, on: bool) {
        self.cfg.local_check = on;
    }

    pub fn state(&self) -> &Marking {
        &self.state
    }

    pub fn seq(&self) -> u64 {
        self.seq
    }

    pub fn case_id(&self) -> u64 {
        self.case_id
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn archive(&self) -> &Archive {
        &self.archive
    }

    pub fn events(&self) -> &[NodeEvent] {
        &self.events
    }

    pub fn next_deadline(&self) -> Option<u64> {
        self.pending.as_ref().map(|p| p.deadline)
    }

    pub fn status(&self) -> NodeStatus {
        NodeStatus {
            role: self.cfg.role.clone(),
            case_id: self.case_id,
            seq: self.seq,
            state: self.state.to_hex(self.machine.place_count),
            phase: self.phase,
            pending: self.pending.as_ref().map(|p| p.step.payload.seq),
            archived: self.archive.steps.len(),
        }
    }

    /// Points the node at a fresh contract and forgets the old case.
    pub fn rebind(&mut self, contract_id: ContractId) {
        self.cfg.contract_id = contract_id;
        self.reset_to(0);
        self.phase = Phase::ChannelOpen;
    }

    fn note(&mut self, e: NodeEvent) {
        debug!(role = %self.cfg.role, ?e);
        self.events.push(e);
    }

    fn peers(&self) -> impl Iterator<Item = &String> + '_ {
        self.cfg.role_keys.keys().filter(move |r| **r != self.cfg.role)
    }

    fn broadcast(&self, msg: ChannelMessage) -> Vec<Outbound> {
        self.peers().map(|to| Outbound { to: to.clone(), msg: msg.clone() }).collect()
    }

    fn ours(&self, p: &StepPayload) -> bool {
        p.chain_id == self.cfg.chain_id && p.contract_id == self.cfg.contract_id && p.case_id == self.case_id
    }

    fn reset_to(&mut self, case_id: u64) {
        self.case_id = case_id;
        self.seq = 0;
        self.state = self.machine.initial_state.clone();
        self.pending = None;
        self.signed.clear();
        self.proposers.clear();
        self.retry.clear();
        self.archive.clear();
    }

    /// Runs a task for this node's role: on the channel while it is open,
    /// directly on the ledger once the case went on-chain.
    pub fn enact(&mut self, req: &TaskRequest, now: u64, chain: &mut dyn ChainClient) -> Result<Enacted, EnactError> {
        let req = TaskRequest { requester_role: self.cfg.role.clone(), ..req.clone() };
        match self.phase {
            Phase::Dispute => return Err(EnactError::InDispute),
            Phase::OnChain => {
                if self.cfg.local_check {
                    self.machine.step(&self.state, &req)?;
                }
                let next = chain
                    .on_chain_step(&self.cfg.contract_id, &req, self.address)
                    .map_err(EnactError::Chain)?;
                self.seq += 1;
                self.state = next;
                self.note(NodeEvent::OnChainTask { seq: self.seq, task: req.task_id.clone() });
                self.watch(chain);
                return Ok(Enacted::OnChain(self.state.clone()));
            }
            Phase::ChannelOpen | Phase::Closed => {}
        }
        if let Some(p) = &self.pending {
            return Err(EnactError::Busy(p.step.payload.seq));
        }
        Ok(Enacted::Proposed(self.propose(req, now)?))
    }

    fn propose(&mut self, req: TaskRequest, now: u64) -> Result<Vec<Outbound>, EnactError> {
        let next = match self.machine.step(&self.state, &req) {
            Ok(next) => next,
            Err(e) if self.cfg.local_check => return Err(e.into()),
            // Faulty proposer: fire the arcs regardless and let the peers judge.
            Err(_) => self.machine.fire_unchecked(&self.state, &req.task_id).unwrap_or_else(|| self.state.clone()),
        };
        let payload = StepPayload {
            chain_id: self.cfg.chain_id,
            contract_id: self.cfg.contract_id,
            case_id: self.case_id,
            seq: self.seq + 1,
            task_id: req.task_id.clone(),
            choice_data: req.choice_data.clone(),
            new_state: self.machine.state_bytes(&next),
        };
        let sig = sign_step(&payload, &self.key).expect("payload fields fit their prefixes");
        self.signed.insert(payload.seq, payload.digest());
        self.archive.write(&JournalEntry::Signed { step: &payload, proposer: &self.cfg.role });
        let mut step = SignedStep::new(payload.clone());
        step.add(self.cfg.role.clone(), sig.clone());
        self.note(NodeEvent::Proposed { seq: payload.seq, task: req.task_id.clone() });
        self.pending = Some(Pending { step, request: req, deadline: now + self.cfg.proposal_timeout });
        let out = self.broadcast(ChannelMessage::Propose { step: payload, initiator: self.cfg.role.clone(), signature: sig });
        if out.is_empty() {
            return Ok(self.try_finish());
        }
        Ok(out)
    }

    pub fn on_message(&mut self, from: &str, msg: ChannelMessage, now: u64, chain: &mut dyn ChainClient) -> Vec<Outbound> {
        if self.cfg.behaviour == Behaviour::Silent {
            return Vec::new();
        }
        match msg {
            ChannelMessage::Propose { step, initiator, signature } => self.on_propose(step, &initiator, &signature, chain),
            ChannelMessage::Sign { step, signer, signature } => self.on_sign(step, &signer, signature),
            ChannelMessage::Confirm { step } => self.on_confirm(step, from, now, chain),
        }
    }

    fn ignore(&mut self, reason: String) -> Vec<Outbound> {
        debug!(role = %self.cfg.role, "ignored: {reason}");
        self.note(NodeEvent::Ignored { reason });
        Vec::new()
    }

    fn on_propose(&mut self, step: StepPayload, initiator: &str, sig: &SigBytes, chain: &mut dyn ChainClient) -> Vec<Outbound> {
        if !self.ours(&step) {
            return self.ignore(format!("proposal for another channel or case ({})", step.case_id));
        }
        if self.phase != Phase::ChannelOpen {
            return self.ignore(format!("proposal while {}", self.phase));
        }
        let Some(key) = self.cfg.role_keys.get(initiator) else {
            return self.ignore(format!("proposal from unknown role {initiator}"));
        };
        if !verify_step(&step, &sig.0, key) {
            self.dispute(format!("proposal for seq {} carries a bad signature from {initiator}", step.seq), chain);
            return Vec::new();
        }
        let digest = step.digest();
        if step.seq <= self.seq {
            if step.seq == self.seq && self.archive.at(step.seq).is_some_and(|s| s.payload.digest() != digest) {
                // Lost a race for this seq; its proposer will see our confirm.
                return self.ignore(format!("late competing proposal for seq {} from {initiator}", step.seq));
            }
            if self.archive.at(step.seq).is_some_and(|s| s.payload.digest() == digest) {
                return self.ignore(format!("duplicate proposal for seq {}", step.seq));
            }
            self.dispute(format!("stale proposal: seq {} but the channel is at {}", step.seq, self.seq), chain);
            return Vec::new();
        }
        if step.seq > self.seq + 1 {
            self.dispute(format!("seq gap: proposal for {} while at {}", step.seq, self.seq), chain);
            return Vec::new();
        }
        if let Some(prev) = self.signed.get(&step.seq) {
            if *prev == digest {
                return self.ignore(format!("already signed seq {}", step.seq));
            }
            let yield_to = self.pending.as_ref().is_some_and(|p| p.step.payload.seq == step.seq) && initiator < self.cfg.role.as_str();
            if !yield_to {
                return self.ignore(format!("seq {} already signed for another proposal", step.seq));
            }
            let own = self.pending.take().expect("checked above");
            self.note(NodeEvent::Yielded { seq: step.seq, task: own.request.task_id.clone() });
            self.retry.push(own.request);
        }
        let expected = self.machine.task_transition(&step.task_id).and_then(|t| t.initiator()).unwrap_or_default();
        if expected != initiator {
            self.dispute(format!("{} proposed {} whose initiator is {expected:?}", initiator, step.task_id), chain);
            return Vec::new();
        }
        let verdict = self
            .machine
            .step(&self.state, &step.request(initiator))
            .map_err(|e| e.to_string())
            .and_then(|next| {
                let bytes = self.machine.state_bytes(&next);
                if bytes == step.new_state {
                    Ok(())
                } else {
                    Err(format!("new state {} does not follow, expected {}", hex::encode(&step.new_state), hex::encode(&bytes)))
                }
            });
        if let Err(why) = verdict {
            self.dispute(format!("non-conforming proposal {} seq {}: {why}", step.task_id, step.seq), chain);
            return Vec::new();
        }
        let sig = sign_step(&step, &self.key).expect("payload fields fit their prefixes");
        self.signed.insert(step.seq, digest);
        self.archive.write(&JournalEntry::Signed { step: &step, proposer: initiator });
        self.note(NodeEvent::Signed { seq: step.seq, task: step.task_id.clone(), proposer: initiator.to_string() });
        vec![Outbound {
            to: initiator.to_string(),
            msg: ChannelMessage::Sign { step, signer: self.cfg.role.clone(), signature: sig },
        }]
    }

    fn on_sign(&mut self, step: StepPayload, signer: &str, sig: SigBytes) -> Vec<Outbound> {
        let Some(p) = &mut self.pending else {
            return self.ignore(format!("signature from {signer} with nothing pending"));
        };
        if p.step.payload != step {
            return self.ignore(format!("signature from {signer} for a step that is not pending"));
        }
        let valid = self.cfg.role_keys.get(signer).is_some_and(|k| verify_step(&step, &sig.0, k));
        if !valid {
            return self.ignore(format!("invalid signature from {signer}"));
        }
        p.step.add(signer, sig);
        self.try_finish()
    }

    fn try_finish(&mut self) -> Vec<Outbound> {
        let roles: Vec<&String> = self.cfg.role_keys.keys().collect();
        if !self.pending.as_ref().is_some_and(|p| p.step.is_complete(&roles)) {
            return Vec::new();
        }
        let p = self.pending.take().expect("checked above");
        let role = self.cfg.role.clone();
        self.install(p.step.clone(), &role);
        self.broadcast(ChannelMessage::Confirm { step: p.step })
    }

    fn install(&mut self, step: SignedStep, proposer: &str) {
        let width = self.machine.place_count;
        self.state = step.payload.state(width).expect("checked before signing");
        self.seq = step.payload.seq;
        self.proposers.insert(self.seq, proposer.to_string());
        self.note(NodeEvent::Confirmed { seq: self.seq, task: step.payload.task_id.clone(), proposer: proposer.to_string() });
        self.archive.push(step);
    }

    fn on_confirm(&mut self, step: SignedStep, from: &str, now: u64, chain: &mut dyn ChainClient) -> Vec<Outbound> {
        let p = &step.payload;
        if !self.ours(p) || p.seq != self.seq + 1 {
            return self.ignore(format!("confirm for unknown step seq {} case {}", p.seq, p.case_id));
        }
        if let Err(e) = step.verify_complete(&self.cfg.role_keys) {
            self.dispute(format!("confirm for seq {} from {from}: {e}", p.seq), chain);
            return Vec::new();
        }
        if p.state(self.machine.place_count).is_err() {
            self.dispute(format!("confirm for seq {} carries an undecodable state", p.seq), chain);
            return Vec::new();
        }
        let lost = self.pending.take_if(|own| own.step.payload.seq == p.seq);
        self.install(step, from);
        if let Some(own) = lost {
            self.note(NodeEvent::Yielded { seq: self.seq, task: own.request.task_id.clone() });
            self.retry.push(own.request);
        }
        self.resume(now)
    }

    /// Re-proposes requests that lost a race, one at a time.
    fn resume(&mut self, now: u64) -> Vec<Outbound> {
        if self.pending.is_some() || self.retry.is_empty() || self.phase != Phase::ChannelOpen {
            return Vec::new();
        }
        let req = self.retry.remove(0);
        match self.propose(req.clone(), now) {
            Ok(out) => out,
            Err(e) => self.ignore(format!("dropped retry of {}: {e}", req.task_id)),
        }
    }

    /// Timeout duty. An unanswered proposal cannot be blamed on anyone: the
    /// missing signers may be down, or this node may be the one stalling.
    pub fn tick(&mut self, now: u64, chain: &mut dyn ChainClient) -> Vec<Outbound> {
        let expired = self.pending.as_ref().is_some_and(|p| now >= p.deadline);
        if expired {
            let p = self.pending.as_ref().expect("checked above");
            let missing: Vec<&String> = self.cfg.role_keys.keys().filter(|r| !p.step.signatures.contains_key(*r)).collect();
            let reason = format!(
                "no signatures from {missing:?} for seq {} by tick {now}: signer unavailable or proposer stalling",
                p.step.payload.seq
            );
            self.dispute(reason, chain);
        }
        self.resume(now)
    }

    /// Dispute on request of the local process system, e.g. when it stops
    /// trusting the channel.
    pub fn start_dispute(&mut self, reason: impl Into<String>, chain: &mut dyn ChainClient) {
        self.dispute(reason.into(), chain);
    }

    /// Sends the best complete evidence this node holds to the ledger.
    fn dispute(&mut self, reason: String, chain: &mut dyn ChainClient) {
        warn!(role = %self.cfg.role, "dispute: {reason}");
        self.pending = None;
        self.retry.clear();
        let id = self.cfg.contract_id;
        let view = chain.view(&id);
        let best = self.archive.best().cloned();
        let result = match (&view, best) {
            (Some(v), Some(s)) if matches!(v.phase, Phase::ChannelOpen | Phase::Dispute) && s.payload.seq > v.seq => {
                chain.submit_state(&id, &s, self.address)
            }
            (Some(v), _) if v.phase == Phase::ChannelOpen => chain.raise_dispute(&id, self.address),
            _ => Ok(()),
        };
        if let Err(e) = result {
            warn!(role = %self.cfg.role, "dispute submission refused: {e}");
        }
        self.note(NodeEvent::DisputeRaised { reason });
        self.watch(chain);
    }

    /// Adversarial move: opens a dispute with the oldest evidence at or
    /// below `seq`, or with none at all for seq 0.
    pub fn submit_stale(&mut self, seq: u64, chain: &mut dyn ChainClient) -> Result<(), Rejection> {
        let id = self.cfg.contract_id;
        let stale = self.archive.steps.iter().filter(|s| s.payload.seq <= seq).max_by_key(|s| s.payload.seq).cloned();
        let r = match stale {
            Some(s) => chain.submit_state(&id, &s, self.address),
            None => chain.raise_dispute(&id, self.address),
        };
        info!(role = %self.cfg.role, seq, ok = r.is_ok(), "stale submission");
        self.watch(chain);
        r
    }

    /// Polling duty against the contract.
    pub fn watch(&mut self, chain: &mut dyn ChainClient) {
        let Some(v) = chain.view(&self.cfg.contract_id) else { return };
        if v.case_id > self.case_id {
            self.reset_to(v.case_id);
            self.phase = v.phase;
            self.note(NodeEvent::Reset { case_id: v.case_id });
            return;
        }
        self.phase = v.phase;
        match v.phase {
            Phase::Dispute => {
                self.pending = None;
                let best = self.archive.best().filter(|s| s.payload.seq > v.seq).cloned();
                if let (Some(s), true) = (best, self.cfg.behaviour != Behaviour::Adversary) {
                    let seq = s.payload.seq;
                    match chain.submit_state(&self.cfg.contract_id, &s, self.address) {
                        Ok(()) => self.note(NodeEvent::Countered { seq }),
                        Err(e) => warn!(role = %self.cfg.role, "counter with seq {seq} refused: {e}"),
                    }
                }
            }
            Phase::OnChain => {
                self.pending = None;
                self.retry.clear();
                if v.seq >= self.seq {
                    self.seq = v.seq;
                    self.state = v.state;
                }
            }
            Phase::ChannelOpen | Phase::Closed => {}
        }
    }

    /// Submits the agreed end state. Only the proposer of the final step
    /// does this; everyone else learns about it by watching.
    pub fn close(&mut self, chain: &mut dyn ChainClient) -> Result<u64, CloseError> {
        if !self.machine.is_end_state(&self.state) {
            return Err(CloseError::NotAtEnd);
        }
        let proposer = self.proposers.get(&self.seq).cloned().unwrap_or_default();
        if proposer != self.cfg.role {
            return Err(CloseError::NotProposer(proposer));
        }
        let step = self.archive.best().cloned().ok_or(CloseError::NotAtEnd)?;
        let case_id = self.case_id;
        match chain.close_channel(&self.cfg.contract_id, &step, self.address) {
            Ok(()) => {
                self.note(NodeEvent::Closed { case_id });
                self.watch(chain);
                Ok(case_id)
            }
            Err(e) => {
                self.dispute(format!("close refused: {e}"), chain);
                Err(CloseError::Refused(e))
            }
        }
    }
}
