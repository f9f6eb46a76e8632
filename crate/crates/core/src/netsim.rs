//! Deterministic discrete-event network simulator.
//!
//! Slot `s` spans ticks `[s*L, (s+1)*L]`. Nodes act at the slot's first
//! tick, deliveries due by its last tick are processed in `(tick, sequence)`
//! order, then every node closes the slot. Broadcasts are direct full-mesh
//! sends; per-recipient delay comes from the configured [`Medium`]:
//!
//! * `independent`: uniform on `[min_delay, max_delay]`, with `max_delay <= Δ`;
//! * `shared`: one serialized channel where each transmission costs
//!   `ticks_per_message + ticks_per_kib * size / 1024`, so a broadcast to `n`
//!   peers finishes after `n` transmissions.
//!
//! The seed fixes every random draw, so a configuration determines its trace.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::committee::{select_committee, Registry};
use crate::crypto::{hash, hash_concat, keygen, Digest, KeyPair};
use crate::ledger::{make_genesis, Block, Slot};
use crate::node::{phase_of, Message, MsgKind, NodeConfig, NodeEvent, NodeState, Phase};
use crate::trace::{FinalBlock, KindStats, Record, RunHeader, Tick, Trace};
use crate::txpool::Transaction;
use crate::vcf::{make_vote, Vote, VoteVerdict};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Medium {
    Independent { min_delay: Tick, max_delay: Tick },
    Shared { ticks_per_message: Tick, ticks_per_kib: Tick },
}

/// Disconnects the listed groups from each other during `[from_slot, until_slot)`.
/// Nodes not listed in any group stay connected to everyone.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Partition {
    pub from_slot: Slot,
    pub until_slot: Slot,
    pub groups: Vec<Vec<usize>>,
}

impl Partition {
    fn group_of(&self, node: usize) -> Option<usize> {
        self.groups.iter().position(|g| g.contains(&node))
    }

    fn separates(&self, a: usize, b: usize, slot: Slot) -> bool {
        if slot < self.from_slot || slot >= self.until_slot {
            return false;
        }
        matches!((self.group_of(a), self.group_of(b)), (Some(x), Some(y)) if x != y)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubmitPattern {
    /// Every proposal slot.
    EverySlot,
    /// The first proposal slot of each epoch.
    EpochStart,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Workload {
    pub clients: usize,
    pub tx_per_slot: usize,
    pub payload_bytes: usize,
    pub pattern: SubmitPattern,
    pub from_slot: Slot,
    pub until_slot: Option<Slot>,
    /// Ticks after slot begin at which transactions are submitted.
    pub submit_offset: Tick,
}

impl Default for Workload {
    fn default() -> Self {
        Workload {
            clients: 4,
            tx_per_slot: 0,
            payload_bytes: 64,
            pattern: SubmitPattern::EverySlot,
            from_slot: 1,
            until_slot: None,
            submit_offset: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "snake_case", deny_unknown_fields)]
pub enum Strategy {
    /// Signs a second, conflicting target in every finality round. Under a
    /// partition it signs each side's own target and sends it to that side.
    /// With `only_when_split` it votes honestly until the sides disagree.
    EquivocatingVoter {
        #[serde(default)]
        only_when_split: bool,
    },
    /// Never releases blocks or votes.
    WithholdingProposer,
    /// Holds each won block for one slot before releasing it.
    SelfishProposer,
    /// Sends two conflicting payments to disjoint halves of the honest nodes
    /// at `at_slot`, then releases a private branch carrying the second one.
    DoubleSpender { at_slot: Slot, release_slot: Slot },
    /// Releases a private branch grown from genesis.
    LongRange { release_slot: Slot, length: u64 },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdversarySpec {
    pub node: usize,
    #[serde(flatten)]
    pub strategy: Strategy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub seed: u64,
    pub n_nodes: usize,
    /// Starting credit per node; `c_init` for all when empty.
    pub credits: Vec<u64>,
    pub node: NodeConfig,
    pub slots: Slot,
    pub ticks_per_slot: Tick,
    pub delta: Tick,
    pub ticks_per_second: u64,
    pub medium: Medium,
    pub drop_rate: f64,
    pub workload: Workload,
    pub adversaries: Vec<AdversarySpec>,
    pub partitions: Vec<Partition>,
    pub abort_on_violation: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            seed: 1,
            n_nodes: 4,
            credits: Vec::new(),
            node: NodeConfig {
                committee: crate::committee::CommitteeParams { committee_size: 4, ..Default::default() },
                ..Default::default()
            },
            slots: 60,
            ticks_per_slot: 100,
            delta: 100,
            ticks_per_second: 100,
            medium: Medium::Independent { min_delay: 1, max_delay: 100 },
            drop_rate: 0.0,
            workload: Workload::default(),
            adversaries: Vec::new(),
            partitions: Vec::new(),
            abort_on_violation: false,
        }
    }
}

impl SimConfig {
    pub fn committee_size(&self) -> usize {
        self.node.committee.committee_size
    }

    /// Slot count covering `cycles` full epochs (proposal, finality and
    /// beacon slots).
    pub fn slots_for_epochs(epoch_size: u64, cycles: u64) -> Slot {
        cycles * (epoch_size + 2)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidConfig(m));
        let k = self.committee_size();
        if self.n_nodes == 0 {
            return bad("n_nodes must be at least 1".into());
        }
        if k == 0 || k > self.n_nodes {
            return bad(format!("committee size {k} must be in 1..={}", self.n_nodes));
        }
        if self.node.epoch_size == 0 {
            return bad("epoch_size must be at least 1".into());
        }
        if self.ticks_per_slot == 0 || self.delta == 0 || self.delta > self.ticks_per_slot {
            return bad(format!("need 1 <= delta ({}) <= ticks_per_slot ({})", self.delta, self.ticks_per_slot));
        }
        if self.ticks_per_second == 0 {
            return bad("ticks_per_second must be positive".into());
        }
        if let Medium::Independent { min_delay, max_delay } = self.medium {
            if min_delay > max_delay || max_delay > self.delta {
                return bad(format!("need min_delay ({min_delay}) <= max_delay ({max_delay}) <= delta ({})", self.delta));
            }
        }
        if !(0.0..1.0).contains(&self.drop_rate) {
            return bad(format!("drop_rate {} outside [0, 1)", self.drop_rate));
        }
        if !self.credits.is_empty() {
            if self.credits.len() != self.n_nodes {
                return bad(format!("{} credits given for {} nodes", self.credits.len(), self.n_nodes));
            }
            if let Some(c) = self.credits.iter().find(|&&c| c > self.node.committee.c_max) {
                return bad(format!("credit {c} above c_max {}", self.node.committee.c_max));
            }
        }
        let mut seen = std::collections::BTreeSet::new();
        for a in &self.adversaries {
            if a.node >= self.n_nodes || !seen.insert(a.node) {
                return bad(format!("adversary node {} out of range or repeated", a.node));
            }
        }
        if seen.len() == self.n_nodes {
            return bad("at least one node must be honest".into());
        }
        for p in &self.partitions {
            if p.groups.iter().flatten().any(|&n| n >= self.n_nodes) {
                return bad("partition names an unknown node".into());
            }
        }
        if self.workload.tx_per_slot > 0 && self.workload.clients < 2 {
            return bad("workload needs at least two clients".into());
        }
        Ok(())
    }
}

/// A message plus its recipients (`None` means every other node).
#[derive(Clone, Debug)]
pub struct Outbound {
    pub to: Option<Vec<usize>>,
    pub msg: Message,
}

impl Outbound {
    fn all(msg: Message) -> Self {
        Outbound { to: None, msg }
    }
}

struct Adversary {
    id: usize,
    strategy: Strategy,
    held: Vec<(Slot, Outbound)>,
    fork: Option<(Digest, u64, Transaction)>,
}

impl Adversary {
    /// Extra messages an adversary injects at slot begin.
    fn on_slot_begin(&mut self, slot: Slot, nodes: &[NodeState], honest: &[usize]) -> Vec<Outbound> {
        let mut out: Vec<Outbound> = Vec::new();
        let (due, keep): (Vec<_>, Vec<_>) = std::mem::take(&mut self.held).into_iter().partition(|(s, _)| *s <= slot);
        self.held = keep;
        out.extend(due.into_iter().map(|(_, o)| o));
        let own = &nodes[self.id];
        match self.strategy.clone() {
            Strategy::DoubleSpender { at_slot, release_slot } => {
                if slot == at_slot {
                    let users: Vec<_> = own.registry().users().iter().copied().filter(|u| *u != own.public()).collect();
                    let pay = |i: usize, tag: &[u8]| Transaction::new(own.keys(), users[i % users.len()], slot, tag.to_vec());
                    let (tx1, tx2) = (pay(0, b"spend-a"), pay(1, b"spend-b"));
                    let half = honest.len() / 2;
                    out.push(Outbound { to: Some(honest[..half].to_vec()), msg: Message::Tx(tx1) });
                    out.push(Outbound { to: Some(honest[half..].to_vec()), msg: Message::Tx(tx2.clone()) });
                    let head = own.tree().head_block();
                    self.fork = Some((own.tree().head(), head.height, tx2));
                }
                if slot == release_slot {
                    if let Some((parent, height, tx)) = self.fork.take() {
                        let n = release_slot.saturating_sub(at_slot).max(1);
                        out.extend(private_branch(own.keys(), parent, height, at_slot, n, Some(tx)).into_iter().map(|b| Outbound::all(Message::Block(b))));
                    }
                }
            }
            Strategy::LongRange { release_slot, length } if slot == release_slot => {
                let g = own.tree().genesis();
                let tx = Transaction::new(own.keys(), own.public(), 1, b"long-range".to_vec());
                out.extend(private_branch(own.keys(), g, 0, 1, length, Some(tx)).into_iter().map(|b| Outbound::all(Message::Block(b))));
            }
            _ => {}
        }
        out
    }

    /// Rewrites the honest behaviour's outbound messages.
    fn transform(&mut self, slot: Slot, msgs: Vec<Message>, nodes: &[NodeState], honest: &[usize]) -> Vec<Outbound> {
        let own = &nodes[self.id];
        let mut out = Vec::new();
        for m in msgs {
            match (&self.strategy, m) {
                (Strategy::EquivocatingVoter { only_when_split }, Message::Finality { vote, commit }) => {
                    out.extend(equivocate(own.keys(), slot, vote, commit, nodes, honest, *only_when_split));
                }
                (Strategy::WithholdingProposer, Message::Block(_)) => {}
                (Strategy::WithholdingProposer, Message::Finality { commit, .. }) => {
                    if commit.is_some() {
                        out.push(Outbound::all(Message::Finality { vote: None, commit }));
                    }
                }
                (Strategy::SelfishProposer, m @ Message::Block(_)) => self.held.push((slot + 1, Outbound::all(m))),
                (_, m) => out.push(Outbound::all(m)),
            }
        }
        out
    }
}

fn equivocate(
    keys: &KeyPair,
    slot: Slot,
    own_vote: Option<Vote>,
    commit: Option<crate::committee::BeaconShare>,
    nodes: &[NodeState],
    honest: &[usize],
    only_when_split: bool,
) -> Vec<Outbound> {
    let mut groups: BTreeMap<(Digest, Digest), (Vote, Vec<usize>)> = BTreeMap::new();
    for &h in honest {
        if let Some(v) = make_vote(keys, nodes[h].tree(), slot) {
            groups.entry((v.source, v.target)).or_insert_with(|| (v, Vec::new())).1.push(h);
        }
    }
    if groups.len() >= 2 {
        let covered: Vec<usize> = groups.values().flat_map(|(_, ids)| ids.iter().copied()).collect();
        let rest: Vec<usize> = (0..nodes.len()).filter(|i| !covered.contains(i)).collect();
        let mut out: Vec<Outbound> = groups
            .into_values()
            .map(|(v, ids)| Outbound { to: Some(ids), msg: Message::Finality { vote: Some(v), commit: commit.clone() } })
            .collect();
        out.push(Outbound { to: Some(rest), msg: Message::Finality { vote: own_vote, commit } });
        return out;
    }
    if only_when_split {
        return vec![Outbound::all(Message::Finality { vote: own_vote, commit })];
    }
    let Some(v) = own_vote.or_else(|| groups.into_values().next().map(|(v, _)| v)) else {
        return vec![Outbound::all(Message::Finality { vote: None, commit })];
    };
    let fake_target = hash_concat(&[&v.target.0, b"conflict"]);
    let fake = Vote::new(keys, v.source, fake_target, v.source_epoch, v.target_epoch, slot);
    vec![
        Outbound::all(Message::Finality { vote: Some(v), commit }),
        Outbound::all(Message::Finality { vote: Some(fake), commit: None }),
    ]
}

/// Signed blocks extending `parent` that never went through leader election.
fn private_branch(keys: &KeyPair, parent: Digest, parent_height: u64, first_slot: Slot, n: u64, tx: Option<Transaction>) -> Vec<Block> {
    let mut out = Vec::new();
    let mut prev = parent;
    for i in 0..n {
        let mut b = Block {
            pre_hash: prev,
            height: parent_height + 1 + i,
            tx_data: if i == 0 { tx.clone().into_iter().collect() } else { Vec::new() },
            roster: None,
            slot: first_slot + i,
            proposer: Some(keys.public()),
            signature: None,
        };
        b.signature = Some(keys.sign(&b.body_bytes()));
        prev = b.digest();
        out.push(b);
    }
    out
}

#[derive(Debug)]
enum Payload {
    Msg(Message),
    Submit { tx: Transaction, entry: usize },
}

#[derive(Debug)]
struct Event {
    tick: Tick,
    seq: u64,
    to: usize,
    payload: Payload,
}

impl PartialEq for Event {
    fn eq(&self, o: &Self) -> bool {
        (self.tick, self.seq) == (o.tick, o.seq)
    }
}
impl Eq for Event {}
impl PartialOrd for Event {
    fn partial_cmp(&self, o: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Event {
    fn cmp(&self, o: &Self) -> std::cmp::Ordering {
        (self.tick, self.seq).cmp(&(o.tick, o.seq))
    }
}

/// Finalized checkpoints reported by honest nodes, keyed by height.
#[derive(Default)]
struct SafetyMonitor {
    by_height: BTreeMap<u64, Vec<(Digest, usize)>>,
}

impl SafetyMonitor {
    /// Registers `d` finalized at `node`; returns conflicting pairs.
    fn add(&mut self, d: Digest, node: usize, nodes: &[NodeState]) -> Vec<(Digest, Digest, usize, usize)> {
        let h = nodes[node].tree().get(&d).map_or(0, |b| b.height);
        if self.by_height.get(&h).is_some_and(|v| v.iter().any(|(x, _)| *x == d)) {
            return Vec::new();
        }
        let mut conflicts = Vec::new();
        for &(other, on) in self.by_height.get(&h).into_iter().flatten() {
            conflicts.push((other, d, on, node));
        }
        if let Some((_, below)) = self.by_height.range(..h).next_back() {
            for &(p, pn) in below {
                if !nodes[node].tree().is_ancestor(&p, &d) {
                    conflicts.push((p, d, pn, node));
                }
            }
        }
        if let Some((_, above)) = self.by_height.range(h + 1..).next() {
            for &(s, sn) in above {
                if !nodes[sn].tree().is_ancestor(&d, &s) {
                    conflicts.push((d, s, node, sn));
                }
            }
        }
        self.by_height.entry(h).or_default().push((d, node));
        conflicts
    }
}

pub struct SimOutcome {
    pub trace: Trace,
    pub nodes: Vec<NodeState>,
    pub honest: Vec<usize>,
    pub safety_violations: usize,
    pub aborted: bool,
}

impl SimOutcome {
    pub fn reference(&self) -> &NodeState {
        &self.nodes[self.honest[0]]
    }
}

struct Sim<'a> {
    cfg: &'a SimConfig,
    rng: ChaCha8Rng,
    nodes: Vec<NodeState>,
    is_honest: Vec<bool>,
    honest: Vec<usize>,
    adversaries: BTreeMap<usize, Adversary>,
    clients: Vec<KeyPair>,
    heap: BinaryHeap<Reverse<Event>>,
    seq: u64,
    channel_free: Tick,
    stats: BTreeMap<Slot, BTreeMap<MsgKind, KindStats>>,
    trace: Trace,
    monitor: SafetyMonitor,
    reported_evidence: std::collections::BTreeSet<(crate::crypto::PublicKey, u8)>,
    violations: usize,
    tx_counter: u64,
}

pub fn run(cfg: &SimConfig) -> Result<SimOutcome, SimError> {
    cfg.validate()?;
    let keys: Vec<KeyPair> = (0..cfg.n_nodes)
        .map(|i| keygen(format!("node-{i}").as_bytes()).expect("non-empty seed"))
        .collect();
    let clients: Vec<KeyPair> = (0..cfg.workload.clients)
        .map(|i| keygen(format!("client-{i}").as_bytes()).expect("non-empty seed"))
        .collect();
    let params = cfg.node.committee;
    let mut registry = Registry::new(params);
    for (i, k) in keys.iter().enumerate() {
        let credit = cfg.credits.get(i).copied().unwrap_or(params.c_init);
        registry
            .register_validator_with_credit(k.public(), params.min_deposit, credit, 0)
            .map_err(|e| SimError::InvalidConfig(e.to_string()))?;
    }
    for c in &clients {
        registry.register_user(c.public());
    }
    let seed_randomness = hash(&cfg.seed.to_be_bytes());
    let genesis_dynasty = select_committee(&registry, seed_randomness, cfg.committee_size(), 0, 0, cfg.node.epoch_size)
        .map_err(|e| SimError::InvalidConfig(e.to_string()))?;
    let genesis = make_genesis(&genesis_dynasty.descriptor()).map_err(|e| SimError::InvalidConfig(e.to_string()))?;
    let nodes: Vec<NodeState> =
        keys.into_iter().map(|k| NodeState::new(k, genesis.clone(), registry.clone(), cfg.node)).collect();

    let adversaries: BTreeMap<usize, Adversary> = cfg
        .adversaries
        .iter()
        .map(|a| (a.node, Adversary { id: a.node, strategy: a.strategy.clone(), held: Vec::new(), fork: None }))
        .collect();
    let is_honest: Vec<bool> = (0..cfg.n_nodes).map(|i| !adversaries.contains_key(&i)).collect();
    let honest: Vec<usize> = (0..cfg.n_nodes).filter(|&i| is_honest[i]).collect();

    let mut sim = Sim {
        cfg,
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        nodes,
        is_honest,
        honest,
        adversaries,
        clients,
        heap: BinaryHeap::new(),
        seq: 0,
        channel_free: 0,
        stats: BTreeMap::new(),
        trace: Trace::default(),
        monitor: SafetyMonitor::default(),
        reported_evidence: Default::default(),
        violations: 0,
        tx_counter: 0,
    };
    let aborted = sim.run_all();
    Ok(SimOutcome {
        trace: sim.trace,
        nodes: sim.nodes,
        honest: sim.honest,
        safety_violations: sim.violations,
        aborted,
    })
}

impl Sim<'_> {
    fn reference(&self) -> usize {
        self.honest[0]
    }

    fn run_all(&mut self) -> bool {
        let cfg = self.cfg;
        self.trace.push(Record::Run(RunHeader {
            seed: cfg.seed,
            n_nodes: cfg.n_nodes,
            committee_size: cfg.committee_size(),
            epoch_size: cfg.node.epoch_size,
            ticks_per_slot: cfg.ticks_per_slot,
            delta: cfg.delta,
            ticks_per_second: cfg.ticks_per_second,
            slots: cfg.slots,
            payload_bytes: cfg.workload.payload_bytes,
            honest: self.honest.clone(),
            reference: self.reference(),
        }));
        let d0 = self.nodes[self.reference()].dynasty().clone();
        self.trace.push(Record::Dynasty {
            slot: 0,
            index: d0.index,
            randomness: d0.randomness,
            members: d0.members,
            flagged: Vec::new(),
        });
        for slot in 1..=cfg.slots {
            self.run_slot(slot);
            if cfg.abort_on_violation && self.violations > 0 {
                return true;
            }
        }
        false
    }

    fn run_slot(&mut self, slot: Slot) {
        let l = self.cfg.ticks_per_slot;
        let (t0, t_end) = (slot * l, slot * l + l);

        for i in 0..self.nodes.len() {
            let mut outbound = Vec::new();
            if let Some(adv) = self.adversaries.get_mut(&i) {
                outbound.extend(adv.on_slot_begin(slot, &self.nodes, &self.honest));
            }
            let (msgs, events) = self.nodes[i].on_slot_begin(slot);
            self.log_events(i, slot, t0, events, None);
            match self.adversaries.get_mut(&i) {
                Some(adv) => outbound.extend(adv.transform(slot, msgs, &self.nodes, &self.honest)),
                None => outbound.extend(msgs.into_iter().map(Outbound::all)),
            }
            for o in outbound {
                self.broadcast(i, o, t0, slot);
            }
        }
        self.schedule_workload(slot, t0);

        while self.heap.peek().is_some_and(|Reverse(e)| e.tick <= t_end) {
            let Reverse(ev) = self.heap.pop().expect("peeked");
            match ev.payload {
                Payload::Msg(msg) => {
                    let block = match &msg {
                        Message::Block(b) => Some(b.clone()),
                        _ => None,
                    };
                    let events = self.nodes[ev.to].on_message(msg, slot);
                    self.log_events(ev.to, slot, ev.tick, events, block.as_ref());
                }
                Payload::Submit { tx, entry } => {
                    let (msg, event) = self.nodes[entry].submit_tx(tx.clone(), slot);
                    self.trace.push(Record::Tx {
                        slot,
                        tick: ev.tick,
                        tx: tx.tx_hash,
                        sender: tx.sender,
                        entry,
                        accepted: msg.is_some(),
                    });
                    self.log_events(entry, slot, ev.tick, vec![event], None);
                    if let Some(m) = msg {
                        self.broadcast(entry, Outbound::all(m), ev.tick, slot);
                    }
                }
            }
        }

        for i in 0..self.nodes.len() {
            let events = self.nodes[i].on_slot_end(slot);
            self.log_events(i, slot, t_end, events, None);
        }
        self.end_of_slot_checks(slot);
    }

    fn schedule_workload(&mut self, slot: Slot, t0: Tick) {
        let w = &self.cfg.workload;
        if w.tx_per_slot == 0 || slot < w.from_slot || w.until_slot.is_some_and(|u| slot > u) {
            return;
        }
        let r = self.cfg.node.epoch_size;
        let (_, phase) = phase_of(slot, r);
        let epoch_start = (slot - 1) % (r + 2) == 0;
        let due = phase == Phase::Proposal && (w.pattern == SubmitPattern::EverySlot || epoch_start);
        if !due {
            return;
        }
        for _ in 0..w.tx_per_slot {
            let c = self.tx_counter as usize;
            self.tx_counter += 1;
            let sender = &self.clients[c % self.clients.len()];
            let recipient = self.clients[(c + 1) % self.clients.len()].public();
            let mut data = vec![0u8; w.payload_bytes.max(8)];
            data[..8].copy_from_slice(&(c as u64).to_be_bytes());
            data.truncate(w.payload_bytes.max(8));
            let tx = Transaction::new(sender, recipient, slot, data);
            let entry = self.honest[c % self.honest.len()];
            self.seq += 1;
            self.heap.push(Reverse(Event {
                tick: t0 + w.submit_offset,
                seq: self.seq,
                to: entry,
                payload: Payload::Submit { tx, entry },
            }));
        }
    }

    fn broadcast(&mut self, from: usize, o: Outbound, tick: Tick, slot: Slot) {
        let recipients: Vec<usize> = match o.to {
            Some(ids) => ids.into_iter().filter(|&i| i != from).collect(),
            None => (0..self.nodes.len()).filter(|&i| i != from).collect(),
        };
        let kind = o.msg.kind();
        let size = o.msg.wire_size() as u64;
        let slot_end = slot * self.cfg.ticks_per_slot + self.cfg.ticks_per_slot;
        for to in recipients {
            if self.cfg.partitions.iter().any(|p| p.separates(from, to, slot)) {
                self.stats.entry(slot).or_default().entry(kind).or_default().blocked += 1;
                continue;
            }
            if self.cfg.drop_rate > 0.0 && self.rng.gen::<f64>() < self.cfg.drop_rate {
                self.stats.entry(slot).or_default().entry(kind).or_default().dropped += 1;
                continue;
            }
            let deliver = match self.cfg.medium {
                Medium::Independent { min_delay, max_delay } => tick + self.rng.gen_range(min_delay..=max_delay),
                Medium::Shared { ticks_per_message, ticks_per_kib } => {
                    let start = tick.max(self.channel_free);
                    self.channel_free = start + ticks_per_message + (ticks_per_kib * size).div_ceil(1024);
                    self.channel_free
                }
            };
            let st = self.stats.entry(slot).or_default().entry(kind).or_default();
            st.sent += 1;
            if deliver > slot_end || deliver - tick > self.cfg.delta {
                st.late += 1;
            }
            if self.is_honest[to] {
                st.last_honest_delivery = Some(st.last_honest_delivery.map_or(deliver, |t| t.max(deliver)));
            }
            self.seq += 1;
            self.heap.push(Reverse(Event {
                tick: deliver,
                seq: self.seq,
                to,
                payload: Payload::Msg(o.msg.clone()),
            }));
        }
    }

    fn log_events(&mut self, node: usize, slot: Slot, tick: Tick, events: Vec<NodeEvent>, block: Option<&Block>) {
        if !self.is_honest[node] {
            return;
        }
        let is_ref = node == self.reference();
        for ev in events {
            match ev {
                NodeEvent::TxAccepted(tx) => self.trace.push(Record::TxAccept { tick, node, tx }),
                NodeEvent::BlockAccepted(d) | NodeEvent::BlockRejected(d, _) => {
                    let status = match &ev {
                        NodeEvent::BlockRejected(_, r) => format!("rejected:{}", serde_json::to_value(r).unwrap().as_str().unwrap()),
                        _ => "accepted".to_string(),
                    };
                    let (height, proposer) = match block.or_else(|| self.nodes[node].tree().get(&d)) {
                        Some(b) => (b.height, b.proposer),
                        None => (0, None),
                    };
                    self.trace.push(Record::Block { slot, tick, node, digest: d, height, proposer, status });
                }
                NodeEvent::Vote(vote, verdict) => {
                    if let VoteVerdict::Violation(evidence) = &verdict {
                        if self.reported_evidence.insert((evidence.offender, evidence.rule)) {
                            self.trace.push(Record::Evidence { slot, node, evidence: evidence.clone() });
                        }
                    }
                    let verdict = verdict.label();
                    self.trace.push(Record::Vote { slot, tick, node, vote, verdict });
                }
                NodeEvent::Head { digest, height, empty } if is_ref => {
                    let proposer = self.nodes[node].tree().get(&digest).and_then(|b| b.proposer);
                    self.trace.push(Record::Head { slot, digest, height, empty, proposer });
                }
                NodeEvent::Finality(crate::vcf::FinalityChange::Finalized(d)) => {
                    for (a, b, na, nb) in self.monitor.add(d, node, &self.nodes) {
                        self.violations += 1;
                        self.trace.push(Record::Violation {
                            slot,
                            what: "conflicting_finality".into(),
                            first: a,
                            second: b,
                            nodes: (na, nb),
                        });
                    }
                }
                NodeEvent::NewlyFinal(blocks) if is_ref => {
                    let tree = self.nodes[node].tree();
                    let blocks = blocks
                        .iter()
                        .filter_map(|d| tree.get(d).map(|b| (d, b)))
                        .map(|(d, b)| FinalBlock {
                            digest: *d,
                            height: b.height,
                            txs: b.tx_data.iter().map(|t| t.tx_hash).collect(),
                        })
                        .collect();
                    let head_height = tree.head_block().height;
                    self.trace.push(Record::Final { slot, tick, head_height, blocks });
                }
                NodeEvent::Rotation { dynasty, beacon, incentives } if is_ref => {
                    self.trace.push(Record::Dynasty {
                        slot,
                        index: dynasty.index,
                        randomness: dynasty.randomness,
                        members: dynasty.members,
                        flagged: beacon.flagged,
                    });
                    for change in incentives.changes {
                        self.trace.push(Record::StakeChange {
                            slot,
                            change,
                            distributed: incentives.distributed,
                            carried: incentives.carried,
                        });
                    }
                }
                _ => {}
            }
        }
    }

    fn end_of_slot_checks(&mut self, slot: Slot) {
        for &i in &self.honest {
            let t = self.nodes[i].tree();
            let last = self.nodes[i].last_final();
            if !t.is_ancestor(&last, &t.head()) {
                self.violations += 1;
                self.trace.push(Record::Violation {
                    slot,
                    what: "finality_revert".into(),
                    first: last,
                    second: t.head(),
                    nodes: (i, i),
                });
            }
        }
        let kinds = self
            .stats
            .remove(&slot)
            .unwrap_or_default()
            .into_iter()
            .map(|(k, v)| (k.name().to_string(), v))
            .collect();
        self.trace.push(Record::MsgStats { slot, kinds });
        let state_hashes: Vec<(usize, Digest)> = self.honest.iter().map(|&i| (i, self.nodes[i].state_hash())).collect();
        let first = state_hashes.first().map(|(_, h)| *h);
        let agree = state_hashes.iter().all(|(_, h)| Some(*h) == first);
        let head_height = self.nodes[self.reference()].tree().head_block().height;
        self.trace.push(Record::SlotSummary { slot, head_height, state_hashes, agree });
    }
}
