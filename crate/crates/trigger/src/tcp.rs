//! Nodes behind local TCP sockets.
//!
//! One request per line, one response line back, both JSON:
//! `{"path": "/propose", "from": "Role", "body": ...}` and
//! `{"ok": true, "body": ...}` or `{"ok": false, "error": "..."}`.
//! Paths: `/propose`, `/sign`, `/confirm` (body: a channel message),
//! `/enact` (body: a task request), `/status`, `/close`, `/watch`.
//!
//! The ledger stays an in-process [`SharedLedger`] handle.

use std::collections::BTreeMap;
use std::io::{self, BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::{Arc, Mutex, MutexGuard};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use pchan_core::ledger::Ledger;
use pchan_core::machine::{ProcessStateMachine, TaskRequest};
use pchan_core::wire::{derive_signing_key, ChannelMessage, ContractId};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tracing::{debug, warn};

use crate::chain::SharedLedger;
use crate::node::{Behaviour, Enacted, NodeStatus, Outbound, TriggerConfig, TriggerNode};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Request {
    pub path: String,
    #[serde(default)]
    pub from: Option<String>,
    #[serde(default)]
    pub body: Value,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Response {
    pub ok: bool,
    #[serde(default)]
    pub body: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Response {
    fn ok(body: Value) -> Self {
        Response { ok: true, body, error: None }
    }

    fn err(e: impl ToString) -> Self {
        Response { ok: false, body: Value::Null, error: Some(e.to_string()) }
    }
}

const IO_TIMEOUT: Duration = Duration::from_secs(10);

/// Sends one request and waits for its response line.
pub fn call(addr: SocketAddr, path: &str, from: Option<&str>, body: Value) -> io::Result<Response> {
    let stream = TcpStream::connect_timeout(&addr, IO_TIMEOUT)?;
    stream.set_read_timeout(Some(IO_TIMEOUT))?;
    let mut w = stream.try_clone()?;
    let req = Request { path: path.to_string(), from: from.map(str::to_string), body };
    writeln!(w, "{}", serde_json::to_string(&req).map_err(io::Error::other)?)?;
    let mut line = String::new();
    BufReader::new(stream).read_line(&mut line)?;
    serde_json::from_str(&line).map_err(io::Error::other)
}

fn path_of(msg: &ChannelMessage) -> &'static str {
    match msg {
        ChannelMessage::Propose { .. } => "/propose",
        ChannelMessage::Sign { .. } => "/sign",
        ChannelMessage::Confirm { .. } => "/confirm",
    }
}

struct Shared {
    node: Mutex<TriggerNode>,
    chain: SharedLedger,
    outbox: Mutex<Sender<Outbound>>,
    started: Instant,
}

impl Shared {
    fn node(&self) -> MutexGuard<'_, TriggerNode> {
        self.node.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn now(&self) -> u64 {
        self.started.elapsed().as_millis() as u64
    }

    fn post(&self, out: Vec<Outbound>) {
        let tx = self.outbox.lock().unwrap_or_else(|p| p.into_inner());
        for o in out {
            // The sender thread only goes away on shutdown.
            let _ = tx.send(o);
        }
    }

    fn handle(&self, req: Request) -> Response {
        let mut chain = self.chain.clone();
        match req.path.as_str() {
            "/propose" | "/sign" | "/confirm" => {
                let msg: ChannelMessage = match serde_json::from_value(req.body) {
                    Ok(m) => m,
                    Err(e) => return Response::err(e),
                };
                let from = req.from.unwrap_or_default();
                let now = self.now();
                let out = self.node().on_message(&from, msg, now, &mut chain);
                self.post(out);
                Response::ok(Value::Null)
            }
            "/enact" => {
                let task: TaskRequest = match serde_json::from_value(req.body) {
                    Ok(t) => t,
                    Err(e) => return Response::err(e),
                };
                let now = self.now();
                let result = self.node().enact(&task, now, &mut chain);
                match result {
                    Ok(Enacted::Proposed(out)) => {
                        self.post(out);
                        Response::ok(json!({"result": "proposed"}))
                    }
                    Ok(Enacted::OnChain(state)) => Response::ok(json!({"result": "on_chain", "state": state})),
                    Err(e) => Response::err(e),
                }
            }
            "/status" => Response::ok(serde_json::to_value(self.node().status()).expect("status serialises")),
            "/close" => match self.node().close(&mut chain) {
                Ok(case_id) => Response::ok(json!({"closed": case_id})),
                Err(e) => Response::err(e),
            },
            "/watch" => {
                self.node().watch(&mut chain);
                Response::ok(Value::Null)
            }
            other => Response::err(format!("no endpoint {other}")),
        }
    }
}

pub struct NodeServer {
    pub role: String,
    pub addr: SocketAddr,
    stop: Arc<AtomicBool>,
    threads: Vec<JoinHandle<()>>,
}

impl NodeServer {
    /// Serves `node` on `listener`; `peers` maps every other role to its
    /// socket. The ticker fires timeouts and polls the ledger every `poll`.
    pub fn spawn(
        node: TriggerNode,
        listener: TcpListener,
        peers: BTreeMap<String, SocketAddr>,
        chain: SharedLedger,
        poll: Duration,
    ) -> io::Result<Self> {
        let addr = listener.local_addr()?;
        let role = node.role().to_string();
        let (tx, rx) = mpsc::channel();
        let shared = Arc::new(Shared { node: Mutex::new(node), chain, outbox: Mutex::new(tx), started: Instant::now() });
        let stop = Arc::new(AtomicBool::new(false));
        listener.set_nonblocking(true)?;

        let mut threads = Vec::new();
        {
            let (shared, stop) = (shared.clone(), stop.clone());
            threads.push(thread::spawn(move || accept_loop(listener, shared, stop)));
        }
        {
            let role = role.clone();
            threads.push(thread::spawn(move || send_loop(rx, peers, role)));
        }
        {
            let (shared, stop) = (shared.clone(), stop.clone());
            threads.push(thread::spawn(move || {
                while !stop.load(Ordering::Relaxed) {
                    thread::sleep(poll);
                    let mut chain = shared.chain.clone();
                    let now = shared.now();
                    let out = {
                        let mut n = shared.node();
                        let out = n.tick(now, &mut chain);
                        n.watch(&mut chain);
                        out
                    };
                    shared.post(out);
                }
                // Dropping the last sender ends the send loop.
                let (dead, _) = mpsc::channel();
                *shared.outbox.lock().unwrap_or_else(|p| p.into_inner()) = dead;
            }));
        }
        Ok(NodeServer { role, addr, stop, threads })
    }

    pub fn shutdown(self) {
        self.stop.store(true, Ordering::Relaxed);
        for t in self.threads {
            let _ = t.join();
        }
    }
}

fn accept_loop(listener: TcpListener, shared: Arc<Shared>, stop: Arc<AtomicBool>) {
    while !stop.load(Ordering::Relaxed) {
        match listener.accept() {
            Ok((stream, _)) => {
                let shared = shared.clone();
                thread::spawn(move || {
                    if let Err(e) = serve_conn(stream, &shared) {
                        debug!("connection ended: {e}");
                    }
                });
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(2)),
            Err(e) => warn!("accept failed: {e}"),
        }
    }
}

fn serve_conn(stream: TcpStream, shared: &Shared) -> io::Result<()> {
    stream.set_nonblocking(false)?;
    stream.set_read_timeout(Some(IO_TIMEOUT))?;
    let mut w = stream.try_clone()?;
    for line in BufReader::new(stream).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let resp = match serde_json::from_str::<Request>(&line) {
            Ok(req) => shared.handle(req),
            Err(e) => Response::err(format!("bad request: {e}")),
        };
        writeln!(w, "{}", serde_json::to_string(&resp).map_err(io::Error::other)?)?;
    }
    Ok(())
}

fn send_loop(rx: Receiver<Outbound>, peers: BTreeMap<String, SocketAddr>, role: String) {
    for o in rx {
        let Some(addr) = peers.get(&o.to) else {
            warn!("{role}: no endpoint for {}", o.to);
            continue;
        };
        let body = serde_json::to_value(&o.msg).expect("message serialises");
        match call(*addr, path_of(&o.msg), Some(&role), body) {
            Ok(r) if !r.ok => warn!("{role} -> {}: {:?}", o.to, r.error),
            Ok(_) => {}
            Err(e) => warn!("{role} -> {}: {e}", o.to),
        }
    }
}

/// One node per role on 127.0.0.1, sharing one ledger.
pub struct TcpNetwork {
    pub ledger: SharedLedger,
    pub contract: ContractId,
    pub servers: BTreeMap<String, NodeServer>,
}

impl TcpNetwork {
    pub fn launch(
        machine: Arc<ProcessStateMachine>,
        window: u64,
        proposal_timeout: Duration,
        poll: Duration,
    ) -> io::Result<Self> {
        let mut ledger = Ledger::new(1);
        let keys: BTreeMap<String, _> =
            machine.role_ids.iter().map(|r| (r.clone(), derive_signing_key(r.as_bytes()))).collect();
        let role_keys: BTreeMap<String, [u8; 32]> =
            keys.iter().map(|(r, k)| (r.clone(), k.verifying_key().to_bytes())).collect();
        let binding = role_keys.iter().map(|(r, pk)| (r.clone(), ledger.register_account(*pk))).collect();
        let contract = ledger.deploy_channel(machine.clone(), binding, window).map_err(io::Error::other)?;
        let ledger = SharedLedger::new(ledger);

        let mut listeners = BTreeMap::new();
        for role in keys.keys() {
            listeners.insert(role.clone(), TcpListener::bind("127.0.0.1:0")?);
        }
        let addrs: BTreeMap<String, SocketAddr> =
            listeners.iter().map(|(r, l)| l.local_addr().map(|a| (r.clone(), a))).collect::<io::Result<_>>()?;
        let mut servers = BTreeMap::new();
        for (role, key) in keys {
            let cfg = TriggerConfig {
                role: role.clone(),
                chain_id: 1,
                contract_id: contract,
                role_keys: role_keys.clone(),
                proposal_timeout: proposal_timeout.as_millis() as u64,
                local_check: true,
                behaviour: Behaviour::Honest,
            };
            let node = TriggerNode::new(cfg, key, machine.clone());
            let peers = addrs.iter().filter(|(r, _)| **r != role).map(|(r, a)| (r.clone(), *a)).collect();
            let listener = listeners.remove(&role).expect("bound above");
            servers.insert(role.clone(), NodeServer::spawn(node, listener, peers, ledger.clone(), poll)?);
        }
        Ok(TcpNetwork { ledger, contract, servers })
    }

    pub fn addr(&self, role: &str) -> SocketAddr {
        self.servers[role].addr
    }

    pub fn status(&self, role: &str) -> io::Result<NodeStatus> {
        let r = call(self.addr(role), "/status", None, Value::Null)?;
        serde_json::from_value(r.body).map_err(io::Error::other)
    }

    pub fn statuses(&self) -> io::Result<Vec<NodeStatus>> {
        self.servers.keys().map(|r| self.status(r)).collect()
    }

    /// Posts `/enact` to the node of `role`, then waits until every node
    /// reports the same seq and no proposal is open, or `timeout` passes.
    pub fn enact(&self, role: &str, req: &TaskRequest, timeout: Duration) -> io::Result<Vec<NodeStatus>> {
        let body = serde_json::to_value(req).map_err(io::Error::other)?;
        let r = call(self.addr(role), "/enact", None, body)?;
        if !r.ok {
            return Err(io::Error::other(r.error.unwrap_or_default()));
        }
        self.settle(timeout)
    }

    pub fn settle(&self, timeout: Duration) -> io::Result<Vec<NodeStatus>> {
        let until = Instant::now() + timeout;
        loop {
            let all = self.statuses()?;
            let agreed = all.windows(2).all(|w| (w[0].case_id, w[0].seq, &w[0].state) == (w[1].case_id, w[1].seq, &w[1].state));
            if agreed && all.iter().all(|s| s.pending.is_none()) {
                return Ok(all);
            }
            if Instant::now() >= until {
                return Ok(all);
            }
            thread::sleep(Duration::from_millis(5));
        }
    }

    /// Asks every node to close; the final proposer is the one that does.
    pub fn close(&self) -> io::Result<Option<u64>> {
        for role in self.servers.keys() {
            let r = call(self.addr(role), "/close", None, Value::Null)?;
            if r.ok {
                for role in self.servers.keys() {
                    call(self.addr(role), "/watch", None, Value::Null)?;
                }
                return Ok(r.body.get("closed").and_then(Value::as_u64));
            }
        }
        Ok(None)
    }

    pub fn shutdown(self) {
        for s in self.servers.into_values() {
            s.shutdown();
        }
    }
}
