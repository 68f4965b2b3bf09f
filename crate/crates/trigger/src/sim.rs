//! Deterministic in-process network: one ledger, one node per role, a
//! logical clock and an ordered message queue with optional loss and delay.

use std::collections::BTreeMap;
use std::sync::Arc;

use pchan_core::ledger::{Ledger, Phase};
use pchan_core::machine::{ProcessStateMachine, TaskRequest};
use pchan_core::marking::Marking;
use pchan_core::wire::{derive_signing_key, Address, ChannelMessage, ContractId};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::node::{Behaviour, CloseError, EnactError, Enacted, NodeEvent, NodeStatus, Outbound, TriggerConfig, TriggerNode};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Faults {
    pub drop_probability: f64,
    /// Extra delivery delay drawn uniformly from `0..=max_extra_delay` ticks.
    pub max_extra_delay: u64,
}

impl Default for Faults {
    fn default() -> Self {
        Faults { drop_probability: 0.0, max_extra_delay: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub chain_id: u64,
    pub dispute_window: u64,
    /// Ticks; one tick stands for a millisecond.
    pub proposal_timeout: u64,
    pub latency: u64,
    pub local_check: bool,
    pub seed: u64,
    pub faults: Faults,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            chain_id: 1,
            dispute_window: 10,
            proposal_timeout: 2_000,
            latency: 1,
            local_check: true,
            seed: 0,
            faults: Faults::default(),
        }
    }
}

/// What became of one enacted event once the network went quiet.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outcome {
    Confirmed { seq: u64, state: Marking },
    OnChain { state: Marking },
    Disputed { reasons: Vec<String> },
    Rejected(EnactError),
}

impl Outcome {
    pub fn accepted(&self) -> bool {
        matches!(self, Outcome::Confirmed { .. } | Outcome::OnChain { .. })
    }
}

#[derive(Debug, Clone)]
struct Envelope {
    from: String,
    to: String,
    msg: ChannelMessage,
}

pub struct SimNetwork {
    pub ledger: Ledger,
    machine: Arc<ProcessStateMachine>,
    nodes: BTreeMap<String, TriggerNode>,
    binding: BTreeMap<String, Address>,
    contract: ContractId,
    cfg: SimConfig,
    now: u64,
    queue: BTreeMap<(u64, u64), Envelope>,
    sent: u64,
    rng: ChaCha8Rng,
}

impl SimNetwork {
    /// Registers one key per role (derived from the role name), deploys the
    /// channel contract and starts an honest node for every role.
    pub fn new(machine: Arc<ProcessStateMachine>, cfg: SimConfig) -> Self {
        let mut ledger = Ledger::new(cfg.chain_id);
        let keys: BTreeMap<String, _> =
            machine.role_ids.iter().map(|r| (r.clone(), derive_signing_key(r.as_bytes()))).collect();
        let role_keys: BTreeMap<String, [u8; 32]> =
            keys.iter().map(|(r, k)| (r.clone(), k.verifying_key().to_bytes())).collect();
        let binding: BTreeMap<String, Address> =
            role_keys.iter().map(|(r, pk)| (r.clone(), ledger.register_account(*pk))).collect();
        let contract = ledger
            .deploy_channel(machine.clone(), binding.clone(), cfg.dispute_window)
            .expect("every role is bound to its own key");
        let nodes = keys
            .into_iter()
            .map(|(role, key)| {
                let tc = TriggerConfig {
                    role: role.clone(),
                    chain_id: cfg.chain_id,
                    contract_id: contract,
                    role_keys: role_keys.clone(),
                    proposal_timeout: cfg.proposal_timeout,
                    local_check: cfg.local_check,
                    behaviour: Behaviour::Honest,
                };
                (role, TriggerNode::new(tc, key, machine.clone()))
            })
            .collect();
        SimNetwork {
            ledger,
            machine,
            nodes,
            binding,
            contract,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            cfg,
            now: 0,
            queue: BTreeMap::new(),
            sent: 0,
        }
    }

    pub fn contract_id(&self) -> ContractId {
        self.contract
    }

    pub fn machine(&self) -> &Arc<ProcessStateMachine> {
        &self.machine
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn roles(&self) -> impl Iterator<Item = &String> {
        self.nodes.keys()
    }

    pub fn node(&self, role: &str) -> &TriggerNode {
        &self.nodes[role]
    }

    pub fn node_mut(&mut self, role: &str) -> &mut TriggerNode {
        self.nodes.get_mut(role).expect("known role")
    }

    /// Runs `f` on one node with the ledger and the current time, then
    /// sends whatever it returns.
    pub fn act<R>(&mut self, role: &str, f: impl FnOnce(&mut TriggerNode, &mut Ledger, u64) -> R) -> R {
        let now = self.now;
        let node = self.nodes.get_mut(role).expect("known role");
        f(node, &mut self.ledger, now)
    }

    pub fn set_behaviour(&mut self, role: &str, b: Behaviour) {
        self.node_mut(role).set_behaviour(b);
    }

    pub fn set_local_check(&mut self, on: bool) {
        for n in self.nodes.values_mut() {
            n.set_local_check(on);
        }
    }

    /// Deploys a fresh contract for the same roles and points every node
    /// at it; the previous contract is abandoned where it stands.
    pub fn redeploy(&mut self) -> ContractId {
        self.queue.clear();
        self.contract = self
            .ledger
            .deploy_channel(self.machine.clone(), self.binding.clone(), self.cfg.dispute_window)
            .expect("binding was valid before");
        for n in self.nodes.values_mut() {
            n.rebind(self.contract);
        }
        self.contract
    }

    /// Queues messages from `from` for delivery by the next [`run`](Self::run).
    pub fn send(&mut self, from: &str, out: Vec<Outbound>) {
        for o in out {
            let f = self.cfg.faults;
            if f.drop_probability > 0.0 && self.rng.random_bool(f.drop_probability) {
                continue;
            }
            let extra = if f.max_extra_delay > 0 { self.rng.random_range(0..=f.max_extra_delay) } else { 0 };
            self.sent += 1;
            self.queue.insert(
                (self.now + self.cfg.latency + extra, self.sent),
                Envelope { from: from.to_string(), to: o.to, msg: o.msg },
            );
        }
    }

    /// Delivers a message as if `from` had sent it, without the network.
    pub fn inject(&mut self, from: &str, to: &str, msg: ChannelMessage) {
        let now = self.now;
        let node = self.nodes.get_mut(to).expect("known role");
        let out = node.on_message(from, msg, now, &mut self.ledger);
        self.send(to, out);
        self.run();
    }

    /// Delivers messages and fires timeouts until nothing is in flight,
    /// then lets every node poll the ledger once.
    pub fn run(&mut self) {
        loop {
            if let Some(((at, _), env)) = self.queue.pop_first() {
                self.now = self.now.max(at);
                let now = self.now;
                let Some(node) = self.nodes.get_mut(&env.to) else { continue };
                let out = node.on_message(&env.from, env.msg, now, &mut self.ledger);
                self.send(&env.to, out);
                continue;
            }
            let Some(deadline) = self.nodes.values().filter_map(|n| n.next_deadline()).min() else { break };
            self.now = self.now.max(deadline);
            let now = self.now;
            let roles: Vec<String> = self.nodes.keys().cloned().collect();
            for r in roles {
                let out = self.nodes.get_mut(&r).expect("listed").tick(now, &mut self.ledger);
                self.send(&r, out);
            }
        }
        self.watch_all();
    }

    pub fn watch_all(&mut self) {
        for n in self.nodes.values_mut() {
            n.watch(&mut self.ledger);
        }
    }

    /// Hands `req` to the node of `role` and runs the network until quiet.
    pub fn enact(&mut self, role: &str, req: &TaskRequest) -> Outcome {
        let marks: BTreeMap<String, usize> = self.nodes.iter().map(|(r, n)| (r.clone(), n.events().len())).collect();
        let now = self.now;
        let node = self.nodes.get_mut(role).expect("known role");
        let before = node.seq();
        match node.enact(req, now, &mut self.ledger) {
            Err(e) => return Outcome::Rejected(e),
            Ok(Enacted::OnChain(state)) => {
                self.watch_all();
                return Outcome::OnChain { state };
            }
            Ok(Enacted::Proposed(out)) => self.send(role, out),
        }
        self.run();
        let reasons: Vec<String> = self
            .nodes
            .iter()
            .flat_map(|(r, n)| n.events()[marks[r]..].iter())
            .filter_map(|e| match e {
                NodeEvent::DisputeRaised { reason } => Some(reason.clone()),
                _ => None,
            })
            .collect();
        let node = &self.nodes[role];
        let confirmed = node.events()[marks[role]..].iter().any(|e| {
            matches!(e, NodeEvent::Confirmed { task, proposer, .. } if *task == req.task_id && proposer == role)
        });
        if confirmed && node.seq() > before {
            Outcome::Confirmed { seq: node.seq(), state: node.state().clone() }
        } else {
            Outcome::Disputed { reasons }
        }
    }

    /// Moves the ledger on and lets every node poll it.
    /// Every node polls once per block.
    pub fn advance_blocks(&mut self, n: u64) {
        for _ in 0..n {
            self.ledger.advance_blocks(1);
            self.watch_all();
        }
    }

    /// Lets an open dispute window run out.
    pub fn expire_window(&mut self) {
        if let Some(d) = self.ledger.view(&self.contract).and_then(|v| v.dispute_deadline) {
            let h = self.ledger.height();
            self.advance_blocks(d.saturating_sub(h).max(1));
        }
    }

    /// Asks every node to close; only the final proposer acts.
    pub fn close(&mut self) -> Result<u64, CloseError> {
        let mut last = Err(CloseError::NotAtEnd);
        for n in self.nodes.values_mut() {
            if n.behaviour() == Behaviour::Silent {
                continue;
            }
            match n.close(&mut self.ledger) {
                Ok(case) => {
                    last = Ok(case);
                    break;
                }
                Err(e @ CloseError::Refused(_)) => {
                    last = Err(e);
                    break;
                }
                Err(e) => last = Err(e),
            }
        }
        self.watch_all();
        last
    }

    pub fn phase(&self) -> Phase {
        self.ledger.view(&self.contract).map(|v| v.phase).unwrap_or(Phase::Closed)
    }

    pub fn statuses(&self) -> Vec<NodeStatus> {
        self.nodes.values().map(|n| n.status()).collect()
    }

    /// All honest nodes agree on case, seq and state.
    pub fn is_stable(&self) -> bool {
        let mut honest = self.nodes.values().filter(|n| n.behaviour() == Behaviour::Honest);
        let Some(first) = honest.next() else { return true };
        let key = |n: &TriggerNode| (n.case_id(), n.seq(), n.state().clone());
        let k0 = key(first);
        honest.all(|n| key(n) == k0) && self.queue.is_empty()
    }
}
