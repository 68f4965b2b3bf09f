use std::sync::{Arc, Mutex, MutexGuard};

use pchan_core::ledger::{ContractView, Ledger, Rejection};
use pchan_core::machine::TaskRequest;
use pchan_core::marking::Marking;
use pchan_core::wire::{Address, ContractId, SignedStep};

/// What a node needs from the settlement layer.
pub trait ChainClient {
    fn view(&self, id: &ContractId) -> Option<ContractView>;
    fn submit_state(&mut self, id: &ContractId, step: &SignedStep, sender: Address) -> Result<(), Rejection>;
    fn raise_dispute(&mut self, id: &ContractId, sender: Address) -> Result<(), Rejection>;
    fn on_chain_step(&mut self, id: &ContractId, req: &TaskRequest, sender: Address) -> Result<Marking, Rejection>;
    fn close_channel(&mut self, id: &ContractId, step: &SignedStep, sender: Address) -> Result<(), Rejection>;
}

impl ChainClient for Ledger {
    fn view(&self, id: &ContractId) -> Option<ContractView> {
        Ledger::view(self, id)
    }

    fn submit_state(&mut self, id: &ContractId, step: &SignedStep, sender: Address) -> Result<(), Rejection> {
        Ledger::submit_state(self, id, step, sender)
    }

    fn raise_dispute(&mut self, id: &ContractId, sender: Address) -> Result<(), Rejection> {
        Ledger::raise_dispute(self, id, sender)
    }

    fn on_chain_step(&mut self, id: &ContractId, req: &TaskRequest, sender: Address) -> Result<Marking, Rejection> {
        Ledger::on_chain_step(self, id, req, sender)
    }

    fn close_channel(&mut self, id: &ContractId, step: &SignedStep, sender: Address) -> Result<(), Rejection> {
        Ledger::close_channel(self, id, step, sender)
    }
}

/// A ledger shared between threads; each call is one locked transaction,
/// which keeps the single total order.
#[derive(Debug, Clone)]
pub struct SharedLedger(pub Arc<Mutex<Ledger>>);

impl SharedLedger {
    pub fn new(ledger: Ledger) -> Self {
        SharedLedger(Arc::new(Mutex::new(ledger)))
    }

    pub fn lock(&self) -> MutexGuard<'_, Ledger> {
        // A panicking holder cannot leave the ledger half-applied: every
        // operation mutates only after its checks pass.
        self.0.lock().unwrap_or_else(|p| p.into_inner())
    }
}

impl ChainClient for SharedLedger {
    fn view(&self, id: &ContractId) -> Option<ContractView> {
        self.lock().view(id)
    }

    fn submit_state(&mut self, id: &ContractId, step: &SignedStep, sender: Address) -> Result<(), Rejection> {
        self.lock().submit_state(id, step, sender)
    }

    fn raise_dispute(&mut self, id: &ContractId, sender: Address) -> Result<(), Rejection> {
        self.lock().raise_dispute(id, sender)
    }

    fn on_chain_step(&mut self, id: &ContractId, req: &TaskRequest, sender: Address) -> Result<Marking, Rejection> {
        self.lock().on_chain_step(id, req, sender)
    }

    fn close_channel(&mut self, id: &ContractId, step: &SignedStep, sender: Address) -> Result<(), Rejection> {
        self.lock().close_channel(id, step, sender)
    }
}
