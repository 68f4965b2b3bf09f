//! Single-order simulated ledger hosting channel and baseline contracts.
//!
//! Every call is one transaction at the current height. Rejected
//! transactions are logged but carry no cost record.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::machine::{ConformanceError, ProcessStateMachine, TaskRequest};
use crate::marking::Marking;
use crate::wire::{Address, ContractId, Hash32, SignedStep, WireError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostModel {
    pub fixed_base: u64,
    pub per_byte: u64,
    pub per_sig_verify: u64,
    pub per_storage_write: u64,
    /// Extra charge on channel-contract tasks for checking that the dispute
    /// phase is over; the baseline contract has no such check.
    pub dispute_check_surcharge: u64,
    pub channel_code_bytes: u64,
    pub baseline_code_bytes: u64,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            fixed_base: 21_000,
            per_byte: 16,
            per_sig_verify: 3_000,
            per_storage_write: 5_000,
            dispute_check_surcharge: 2_800,
            channel_code_bytes: 12_288,
            baseline_code_bytes: 6_144,
        }
    }
}

const WORD: u64 = 32;

/// ABI-style size: static words plus, per dynamic field, a length word and
/// the content padded to whole words.
fn abi_bytes(static_words: u64, dynamic: &[usize]) -> u64 {
    WORD * (static_words + dynamic.iter().map(|&l| 1 + (l as u64).div_ceil(WORD)).sum::<u64>())
}

fn signed_step_bytes(s: &SignedStep) -> u64 {
    let p = &s.payload;
    let sigs: Vec<usize> = s.signatures.values().map(|sig| sig.0.len()).collect();
    abi_bytes(4, &[p.task_id.len(), p.choice_data.len(), p.new_state.len()]) + WORD + abi_bytes(0, &sigs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TxKind {
    Deploy,
    SubmitState,
    OnChainTask,
    Close,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostRecord {
    pub tx_kind: TxKind,
    pub payload_bytes: u64,
    pub signatures: u64,
    pub words_written: u64,
    pub surcharge: u64,
    pub cost_units: u64,
}

impl CostModel {
    pub fn record(&self, tx_kind: TxKind, payload_bytes: u64, signatures: u64, words_written: u64, surcharge: u64) -> CostRecord {
        let cost_units = self.fixed_base
            + self.per_byte * payload_bytes
            + self.per_sig_verify * signatures
            + self.per_storage_write * words_written
            + surcharge;
        CostRecord { tx_kind, payload_bytes, signatures, words_written, surcharge, cost_units }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Phase {
    ChannelOpen,
    Dispute,
    OnChain,
    Closed,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::ChannelOpen => "CHANNEL_OPEN",
            Phase::Dispute => "DISPUTE",
            Phase::OnChain => "ON_CHAIN",
            Phase::Closed => "CLOSED",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Contract {
    Channel,
    /// Same machine, every task a ledger transaction, no channel logic.
    Baseline,
}

#[derive(Debug, Clone)]
pub struct ChannelContractState {
    pub contract: Contract,
    pub role_binding: BTreeMap<String, Address>,
    pub machine: Arc<ProcessStateMachine>,
    pub current_state: Marking,
    pub seq: u64,
    pub case_id: u64,
    pub phase: Phase,
    pub dispute_window: u64,
    pub dispute_deadline: Option<u64>,
    pub costs: Vec<CostRecord>,
}

impl ChannelContractState {
    pub fn role_of(&self, address: &Address) -> Option<&str> {
        self.role_binding.iter().find(|(_, a)| *a == address).map(|(r, _)| r.as_str())
    }

    fn reset_case(&mut self) {
        self.case_id += 1;
        self.seq = 0;
        self.current_state = self.machine.initial_state.clone();
        self.phase = Phase::ChannelOpen;
        self.dispute_deadline = None;
    }
}

/// Snapshot handed to watchers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContractView {
    pub phase: Phase,
    pub seq: u64,
    pub case_id: u64,
    pub state: Marking,
    pub dispute_deadline: Option<u64>,
    pub height: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DeployError {
    #[error("role {0} has no address")]
    UnboundRole(String),
    #[error("role {0} is not part of the process")]
    UnknownRole(String),
    #[error("address {0} has no registered key")]
    UnregisteredAddress(Address),
    #[error("address {0} is bound to more than one role")]
    DuplicateAddress(Address),
    #[error("dispute window must be at least one block")]
    ZeroWindow,
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum Rejection {
    #[error("unknown contract")]
    UnknownContract,
    #[error("contract is in phase {0}")]
    WrongPhase(Phase),
    #[error("seq {submitted} is not above {current}")]
    Stale { submitted: u64, current: u64 },
    #[error("step is for chain {0}")]
    WrongChain(u64),
    #[error("step is for another contract")]
    WrongContract,
    #[error("step is for case {submitted}, contract is at case {current}")]
    WrongCase { submitted: u64, current: u64 },
    #[error("signature set: {0}")]
    Signatures(String),
    #[error("new state does not decode: {0}")]
    BadState(String),
    #[error("state is not an end state")]
    NotFinal,
    #[error("sender is not bound to a role")]
    UnboundSender,
    #[error(transparent)]
    Conformance(#[from] ConformanceError),
    #[error("not supported by a {0:?} contract")]
    Unsupported(Contract),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TxAction {
    Deploy,
    SubmitState,
    RaiseDispute,
    OnChainTask,
    Close,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxRecord {
    pub index: u64,
    pub height: u64,
    pub action: TxAction,
    pub contract: Option<ContractId>,
    pub sender: Option<Address>,
    pub case_id: Option<u64>,
    pub seq: Option<u64>,
    pub task_id: Option<String>,
    pub accepted: bool,
    pub reason: Option<String>,
    pub cost: Option<CostRecord>,
}

#[derive(Debug, Clone)]
pub struct Ledger {
    pub chain_id: u64,
    height: u64,
    txs: Vec<TxRecord>,
    contracts: BTreeMap<ContractId, ChannelContractState>,
    accounts: BTreeMap<Address, [u8; 32]>,
    cost_model: CostModel,
}

impl Ledger {
    pub fn new(chain_id: u64) -> Self {
        Self::with_cost_model(chain_id, CostModel::default())
    }

    pub fn with_cost_model(chain_id: u64, cost_model: CostModel) -> Self {
        Ledger { chain_id, height: 0, txs: Vec::new(), contracts: BTreeMap::new(), accounts: BTreeMap::new(), cost_model }
    }

    pub fn height(&self) -> u64 {
        self.height
    }

    pub fn cost_model(&self) -> &CostModel {
        &self.cost_model
    }

    pub fn transactions(&self) -> &[TxRecord] {
        &self.txs
    }

    pub fn contract(&self, id: &ContractId) -> Option<&ChannelContractState> {
        self.contracts.get(id)
    }

    pub fn view(&self, id: &ContractId) -> Option<ContractView> {
        self.contracts.get(id).map(|c| ContractView {
            phase: c.phase,
            seq: c.seq,
            case_id: c.case_id,
            state: c.current_state.clone(),
            dispute_deadline: c.dispute_deadline,
            height: self.height,
        })
    }

    /// Registers a verifying key; the address is its sha256.
    pub fn register_account(&mut self, pubkey: [u8; 32]) -> Address {
        let addr = Hash32::of(&pubkey);
        self.accounts.insert(addr, pubkey);
        addr
    }

    fn log(&mut self, mut rec: TxRecord) {
        rec.index = self.txs.len() as u64;
        rec.height = self.height;
        self.txs.push(rec);
    }

    fn blank(action: TxAction, contract: Option<ContractId>, sender: Option<Address>) -> TxRecord {
        TxRecord {
            index: 0,
            height: 0,
            action,
            contract,
            sender,
            case_id: None,
            seq: None,
            task_id: None,
            accepted: false,
            reason: None,
            cost: None,
        }
    }

    pub fn deploy_channel(
        &mut self,
        machine: Arc<ProcessStateMachine>,
        role_binding: BTreeMap<String, Address>,
        dispute_window: u64,
    ) -> Result<ContractId, DeployError> {
        self.deploy(Contract::Channel, machine, role_binding, dispute_window)
    }

    pub fn deploy_baseline(
        &mut self,
        machine: Arc<ProcessStateMachine>,
        role_binding: BTreeMap<String, Address>,
    ) -> Result<ContractId, DeployError> {
        self.deploy(Contract::Baseline, machine, role_binding, 1)
    }

    fn deploy(
        &mut self,
        contract: Contract,
        machine: Arc<ProcessStateMachine>,
        role_binding: BTreeMap<String, Address>,
        dispute_window: u64,
    ) -> Result<ContractId, DeployError> {
        let result = self.check_binding(&machine, &role_binding, dispute_window);
        if let Err(e) = &result {
            let mut rec = Self::blank(TxAction::Deploy, None, None);
            rec.reason = Some(e.to_string());
            self.log(rec);
            result?;
        }
        let payload = serde_json::to_vec(&(contract, machine.dump(), &role_binding, dispute_window))
            .expect("deploy payload serialises");
        let mut salted = payload;
        salted.extend_from_slice(&self.height.to_be_bytes());
        salted.extend_from_slice(&(self.txs.len() as u64).to_be_bytes());
        let id = Hash32::of(&salted);

        let cm = self.cost_model;
        let code = match contract {
            Contract::Channel => cm.channel_code_bytes,
            Contract::Baseline => cm.baseline_code_bytes,
        };
        // One packed word per transition (masks + role index), one per role
        // binding, plus initial state and final mask.
        let table_words = (machine.transitions.len() + role_binding.len() + 2) as u64;
        let state_words = match contract {
            Contract::Channel => 3, // state+seq, case id, phase+deadline
            Contract::Baseline => 2,
        };
        let cost = cm.record(TxKind::Deploy, code + WORD * (table_words + 1), 0, table_words + state_words, 0);

        self.contracts.insert(
            id,
            ChannelContractState {
                contract,
                role_binding,
                current_state: machine.initial_state.clone(),
                machine,
                seq: 0,
                case_id: 0,
                phase: match contract {
                    Contract::Channel => Phase::ChannelOpen,
                    Contract::Baseline => Phase::OnChain,
                },
                dispute_window,
                dispute_deadline: None,
                costs: vec![cost.clone()],
            },
        );
        let mut rec = Self::blank(TxAction::Deploy, Some(id), None);
        rec.accepted = true;
        rec.case_id = Some(0);
        rec.cost = Some(cost);
        self.log(rec);
        Ok(id)
    }

    fn check_binding(
        &self,
        machine: &ProcessStateMachine,
        binding: &BTreeMap<String, Address>,
        window: u64,
    ) -> Result<(), DeployError> {
        if window == 0 {
            return Err(DeployError::ZeroWindow);
        }
        if let Some(role) = machine.role_ids.iter().find(|r| !binding.contains_key(*r)) {
            return Err(DeployError::UnboundRole(role.clone()));
        }
        if let Some(role) = binding.keys().find(|r| !machine.role_ids.contains(r)) {
            return Err(DeployError::UnknownRole(role.clone()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for addr in binding.values() {
            if !self.accounts.contains_key(addr) {
                return Err(DeployError::UnregisteredAddress(*addr));
            }
            if !seen.insert(*addr) {
                return Err(DeployError::DuplicateAddress(*addr));
            }
        }
        Ok(())
    }

    fn role_keys(&self, c: &ChannelContractState) -> BTreeMap<String, [u8; 32]> {
        c.role_binding
            .iter()
            .filter_map(|(r, a)| self.accounts.get(a).map(|k| (r.clone(), *k)))
            .collect()
    }

    /// Shared checks for state submission and closure.
    fn check_step(&self, id: &ContractId, s: &SignedStep) -> Result<Marking, Rejection> {
        let c = self.contracts.get(id).ok_or(Rejection::UnknownContract)?;
        if c.contract != Contract::Channel {
            return Err(Rejection::Unsupported(c.contract));
        }
        let p = &s.payload;
        if p.chain_id != self.chain_id {
            return Err(Rejection::WrongChain(p.chain_id));
        }
        if p.contract_id != *id {
            return Err(Rejection::WrongContract);
        }
        if p.case_id != c.case_id {
            return Err(Rejection::WrongCase { submitted: p.case_id, current: c.case_id });
        }
        if p.seq <= c.seq {
            return Err(Rejection::Stale { submitted: p.seq, current: c.seq });
        }
        s.verify_complete(&self.role_keys(c)).map_err(|e: WireError| Rejection::Signatures(e.to_string()))?;
        p.state(c.machine.place_count).map_err(|e| Rejection::BadState(e.to_string()))
    }

    fn step_record(action: TxAction, id: &ContractId, sender: Address, s: &SignedStep) -> TxRecord {
        let mut rec = Self::blank(action, Some(*id), Some(sender));
        rec.case_id = Some(s.payload.case_id);
        rec.seq = Some(s.payload.seq);
        rec.task_id = Some(s.payload.task_id.clone());
        rec
    }

    fn finish(&mut self, mut rec: TxRecord, outcome: Result<CostRecord, Rejection>) -> Result<(), Rejection> {
        match outcome {
            Ok(cost) => {
                if let Some(c) = rec.contract.and_then(|id| self.contracts.get_mut(&id)) {
                    c.costs.push(cost.clone());
                }
                rec.accepted = true;
                rec.cost = Some(cost);
                self.log(rec);
                Ok(())
            }
            Err(e) => {
                rec.reason = Some(e.to_string());
                self.log(rec);
                Err(e)
            }
        }
    }

    /// Installs a complete, newer signed state and opens (or continues) the
    /// dispute window. Later submissions do not move the deadline.
    pub fn submit_state(&mut self, id: &ContractId, s: &SignedStep, sender: Address) -> Result<(), Rejection> {
        let rec = Self::step_record(TxAction::SubmitState, id, sender, s);
        let outcome = self.try_submit(id, s);
        self.finish(rec, outcome)
    }

    fn try_submit(&mut self, id: &ContractId, s: &SignedStep) -> Result<CostRecord, Rejection> {
        let phase = self.contracts.get(id).ok_or(Rejection::UnknownContract)?.phase;
        if !matches!(phase, Phase::ChannelOpen | Phase::Dispute) {
            return Err(Rejection::WrongPhase(phase));
        }
        let state = self.check_step(id, s)?;
        let (height, cm) = (self.height, self.cost_model);
        let c = self.contracts.get_mut(id).expect("checked above");
        let mut words = 1;
        if c.phase == Phase::ChannelOpen {
            c.phase = Phase::Dispute;
            c.dispute_deadline = Some(height + c.dispute_window);
            words += 1;
        }
        c.current_state = state;
        c.seq = s.payload.seq;
        Ok(cm.record(TxKind::SubmitState, signed_step_bytes(s), s.signatures.len() as u64, words, 0))
    }

    /// Opens a dispute without newer evidence, for a case whose only agreed
    /// state is the one already installed (seq 0 right after deployment or reset).
    pub fn raise_dispute(&mut self, id: &ContractId, sender: Address) -> Result<(), Rejection> {
        let mut rec = Self::blank(TxAction::RaiseDispute, Some(*id), Some(sender));
        let outcome = (|| {
            let (height, cm) = (self.height, self.cost_model);
            let c = self.contracts.get_mut(id).ok_or(Rejection::UnknownContract)?;
            if c.contract != Contract::Channel {
                return Err(Rejection::Unsupported(c.contract));
            }
            if c.role_of(&sender).is_none() {
                return Err(Rejection::UnboundSender);
            }
            if c.phase != Phase::ChannelOpen {
                return Err(Rejection::WrongPhase(c.phase));
            }
            c.phase = Phase::Dispute;
            c.dispute_deadline = Some(height + c.dispute_window);
            Ok(cm.record(TxKind::SubmitState, abi_bytes(2, &[]), 0, 1, 0))
        })();
        if let Some(c) = self.contracts.get(id) {
            rec.case_id = Some(c.case_id);
            rec.seq = Some(c.seq);
        }
        self.finish(rec, outcome)
    }

    /// Moves time forward; expired disputes continue on-chain. A case whose
    /// installed state is already final is closed and reset right away.
    pub fn advance_blocks(&mut self, n: u64) -> u64 {
        self.height += n;
        let height = self.height;
        for c in self.contracts.values_mut() {
            if c.phase == Phase::Dispute && c.dispute_deadline.is_some_and(|d| d <= height) {
                c.phase = Phase::OnChain;
                c.dispute_deadline = None;
                if c.machine.is_end_state(&c.current_state) {
                    c.phase = Phase::Closed;
                    c.reset_case();
                }
            }
        }
        height
    }

    pub fn on_chain_step(&mut self, id: &ContractId, req: &TaskRequest, sender: Address) -> Result<Marking, Rejection> {
        let mut rec = Self::blank(TxAction::OnChainTask, Some(*id), Some(sender));
        rec.task_id = Some(req.task_id.clone());
        let cm = self.cost_model;
        let outcome = (|| {
            let c = self.contracts.get_mut(id).ok_or(Rejection::UnknownContract)?;
            if c.phase != Phase::OnChain {
                return Err(Rejection::WrongPhase(c.phase));
            }
            let role = c.role_of(&sender).ok_or(Rejection::UnboundSender)?.to_string();
            let req = TaskRequest { requester_role: role, ..req.clone() };
            let next = c.machine.step(&c.current_state, &req)?;
            let surcharge = match c.contract {
                Contract::Channel => cm.dispute_check_surcharge,
                Contract::Baseline => 0,
            };
            let mut words = 1;
            c.seq += 1;
            c.current_state = next.clone();
            if c.machine.is_end_state(&next) {
                c.phase = Phase::Closed;
                c.reset_case();
                if c.contract == Contract::Baseline {
                    c.phase = Phase::OnChain;
                }
                words += 1;
            }
            let bytes = abi_bytes(0, &[req.task_id.len(), req.choice_data.len()]);
            Ok((next, cm.record(TxKind::OnChainTask, bytes, 0, words, surcharge)))
        })();
        if let Some(c) = self.contracts.get(id) {
            rec.case_id = Some(c.case_id);
            rec.seq = Some(c.seq);
        }
        match outcome {
            Ok((next, cost)) => {
                self.finish(rec, Ok(cost))?;
                Ok(next)
            }
            Err(e) => {
                let _ = self.finish(rec, Err(e.clone()));
                Err(e)
            }
        }
    }

    /// Installs the unanimously signed end state, closes the case and resets
    /// the contract for the next one.
    pub fn close_channel(&mut self, id: &ContractId, s: &SignedStep, sender: Address) -> Result<(), Rejection> {
        let rec = Self::step_record(TxAction::Close, id, sender, s);
        let outcome = (|| {
            let phase = self.contracts.get(id).ok_or(Rejection::UnknownContract)?.phase;
            if phase != Phase::ChannelOpen {
                return Err(Rejection::WrongPhase(phase));
            }
            let state = self.check_step(id, s)?;
            let cm = self.cost_model;
            let c = self.contracts.get_mut(id).expect("checked above");
            if !c.machine.is_end_state(&state) {
                return Err(Rejection::NotFinal);
            }
            c.current_state = state;
            c.seq = s.payload.seq;
            c.phase = Phase::Closed;
            c.reset_case();
            Ok(cm.record(TxKind::Close, signed_step_bytes(s), s.signatures.len() as u64, 2, 0))
        })();
        self.finish(rec, outcome)
    }

    /// Line-delimited JSON, one transaction per line.
    pub fn export_jsonl(&self) -> String {
        self.txs
            .iter()
            .map(|t| serde_json::to_string(t).expect("record serialises") + "\n")
            .collect()
    }

    pub fn costs_for(&self, id: &ContractId) -> Vec<CostRecord> {
        self.txs
            .iter()
            .filter(|t| t.contract.as_ref() == Some(id))
            .filter_map(|t| t.cost.clone())
            .collect()
    }
}
