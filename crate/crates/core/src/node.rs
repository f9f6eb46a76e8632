//! The per-validator state machine.
//!
//! Slots are numbered from 1; slot 0 is genesis. Every cycle of `R + 2`
//! slots is `R` proposal slots, one finality slot and one beacon slot:
//!
//! ```text
//! pos = (slot - 1) % (R + 2)
//! pos <  R   proposal
//! pos == R   finality (vote plus beacon commitment)
//! pos == R+1 beacon reveal, incentives and dynasty selection
//! ```
//!
//! A dynasty lives for one cycle. Each node sends at most one protocol
//! message per slot.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::committee::{
    apply_incentives, beacon_round, honest_reveal, select_committee, BeaconOutput, BeaconPhase, BeaconShare,
    CommitteeParams, Contribution, Dynasty, IncentiveOutcome, Registry,
};
use crate::crypto::{hash, Digest, KeyPair, PublicKey};
use crate::ledger::{Block, CheckpointTree, Slot};
use crate::poc::{accept_block, propose_block, resolve_slot, BlockRejection, CreditDistribution, PocParams, ProposalContext};
use crate::txpool::{prune_pool, validate_transaction, Transaction, TxPool, TxRejection};
use crate::vcf::{make_vote, tally_and_finalize, FinalityChange, SlashingEvidence, Threshold, Vote, VoteLedger, VoteVerdict};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Message {
    Tx(Transaction),
    Block(Block),
    /// A member's finality-slot broadcast: its vote and its beacon commitment.
    Finality { vote: Option<Vote>, commit: Option<BeaconShare> },
    Beacon(BeaconShare),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MsgKind {
    Tx,
    Block,
    Finality,
    Beacon,
}

impl MsgKind {
    pub const ALL: [MsgKind; 4] = [MsgKind::Tx, MsgKind::Block, MsgKind::Finality, MsgKind::Beacon];

    pub fn name(self) -> &'static str {
        match self {
            MsgKind::Tx => "tx",
            MsgKind::Block => "block",
            MsgKind::Finality => "finality",
            MsgKind::Beacon => "beacon",
        }
    }
}

impl Message {
    pub fn kind(&self) -> MsgKind {
        match self {
            Message::Tx(_) => MsgKind::Tx,
            Message::Block(_) => MsgKind::Block,
            Message::Finality { .. } => MsgKind::Finality,
            Message::Beacon(_) => MsgKind::Beacon,
        }
    }

    /// Approximate wire size in bytes.
    pub fn wire_size(&self) -> usize {
        const TX: usize = 32 * 3 + 8 + 64 + 8;
        match self {
            Message::Tx(tx) => TX + tx.data.len(),
            Message::Block(b) => {
                32 + 8 + 8 + 32 + 64
                    + b.tx_data.iter().map(|t| TX + t.data.len()).sum::<usize>()
                    + b.roster.as_ref().map_or(0, |r| 8 + 40 * r.members.len())
            }
            Message::Finality { vote, commit } => {
                vote.as_ref().map_or(0, |_| 32 * 4 + 24 + 64) + commit.as_ref().map_or(0, |_| 8 + 32 * 2 + 64)
            }
            Message::Beacon(_) => 8 + 32 * 2 + 64,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Proposal,
    Finality,
    Beacon,
}

/// Cycle index and phase of `slot` (slot 0 is genesis, treated as a beacon
/// slot of cycle "-1" and reported as cycle 0).
pub fn phase_of(slot: Slot, epoch_size: u64) -> (u64, Phase) {
    if slot == 0 {
        return (0, Phase::Beacon);
    }
    let cycle = epoch_size + 2;
    let pos = (slot - 1) % cycle;
    let phase = if pos < epoch_size {
        Phase::Proposal
    } else if pos == epoch_size {
        Phase::Finality
    } else {
        Phase::Beacon
    };
    ((slot - 1) / cycle, phase)
}

/// First slot of cycle `c`.
pub fn cycle_start(cycle: u64, epoch_size: u64) -> Slot {
    cycle * (epoch_size + 2) + 1
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeConfig {
    pub epoch_size: u64,
    pub poc: PocParams,
    pub threshold: Threshold,
    pub committee: CommitteeParams,
    pub max_tx_per_block: usize,
    pub pool_capacity: usize,
    pub kappa: usize,
    /// Keep the genesis dynasty forever and skip incentives.
    pub static_dynasty: bool,
}

impl Default for NodeConfig {
    fn default() -> Self {
        NodeConfig {
            epoch_size: 10,
            poc: PocParams::default(),
            threshold: Threshold::default(),
            committee: CommitteeParams::default(),
            max_tx_per_block: 100,
            pool_capacity: crate::txpool::DEFAULT_POOL_CAPACITY,
            kappa: crate::txpool::DEFAULT_KAPPA,
            static_dynasty: false,
        }
    }
}

/// Observable outcome of a node step.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum NodeEvent {
    TxAccepted(Digest),
    TxRejected(Digest, TxRejection),
    BlockAccepted(Digest),
    BlockRejected(Digest, BlockRejection),
    Vote(Vote, VoteVerdict),
    Head { digest: Digest, height: u64, empty: bool },
    Finality(FinalityChange),
    /// Blocks that became final, oldest first.
    NewlyFinal(Vec<Digest>),
    Rotation { dynasty: Dynasty, beacon: BeaconOutput, incentives: IncentiveOutcome },
    /// A candidate no longer extended the head at slot end.
    ProtocolViolation(Digest),
    Dropped,
}

#[derive(Clone, Debug)]
pub struct NodeState {
    keys: KeyPair,
    cfg: NodeConfig,
    tree: CheckpointTree,
    pool: TxPool,
    votes: VoteLedger,
    registry: Registry,
    dynasty: Dynasty,
    dist: CreditDistribution,
    candidates: BTreeSet<Digest>,
    // Beacon contributions for the next dynasty.
    beacon: BTreeMap<PublicKey, Contribution>,
    fee_pool: u64,
    last_final: Digest,
    dropped: u64,
}

impl NodeState {
    pub fn new(keys: KeyPair, genesis: Block, registry: Registry, cfg: NodeConfig) -> Self {
        let roster = genesis.roster.clone().expect("genesis carries the initial dynasty");
        let dynasty = Dynasty::from_descriptor(&roster, cfg.epoch_size);
        let dist = dynasty.distribution();
        let tree = CheckpointTree::new(genesis, cfg.epoch_size).expect("valid genesis");
        let last_final = tree.genesis();
        NodeState {
            keys,
            pool: TxPool::new(cfg.pool_capacity, cfg.kappa),
            cfg,
            tree,
            votes: VoteLedger::new(),
            registry,
            dynasty,
            dist,
            candidates: BTreeSet::new(),
            beacon: BTreeMap::new(),
            fee_pool: 0,
            last_final,
            dropped: 0,
        }
    }

    pub fn public(&self) -> PublicKey {
        self.keys.public()
    }

    pub fn keys(&self) -> &KeyPair {
        &self.keys
    }

    pub fn config(&self) -> &NodeConfig {
        &self.cfg
    }

    pub fn tree(&self) -> &CheckpointTree {
        &self.tree
    }

    pub fn pool(&self) -> &TxPool {
        &self.pool
    }

    pub fn votes(&self) -> &VoteLedger {
        &self.votes
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    pub fn dynasty(&self) -> &Dynasty {
        &self.dynasty
    }

    pub fn is_member(&self) -> bool {
        self.dynasty.contains(&self.keys.public())
    }

    /// Highest block this node has reported as final.
    pub fn last_final(&self) -> Digest {
        self.last_final
    }

    pub fn dropped(&self) -> u64 {
        self.dropped
    }

    pub fn state_hash(&self) -> Digest {
        self.tree.state_hash()
    }

    /// Admits a locally created transaction and returns it for broadcast.
    pub fn submit_tx(&mut self, tx: Transaction, now: Slot) -> (Option<Message>, NodeEvent) {
        let ev = self.admit_tx(tx.clone(), now);
        let msg = matches!(ev, NodeEvent::TxAccepted(_)).then_some(Message::Tx(tx));
        (msg, ev)
    }

    fn admit_tx(&mut self, tx: Transaction, now: Slot) -> NodeEvent {
        let d = tx.tx_hash;
        match validate_transaction(&tx, self.registry.users(), &self.tree, &self.pool, now)
            .and_then(|_| self.pool.insert(tx))
        {
            Ok(()) => NodeEvent::TxAccepted(d),
            Err(r) => NodeEvent::TxRejected(d, r),
        }
    }

    pub fn on_slot_begin(&mut self, now: Slot) -> (Vec<Message>, Vec<NodeEvent>) {
        let mut events = Vec::new();
        if !self.is_member() {
            return (Vec::new(), events);
        }
        let (_, phase) = phase_of(now, self.cfg.epoch_size);
        let msg = match phase {
            Phase::Proposal => self.propose(now, &mut events),
            Phase::Finality => {
                let vote = make_vote(&self.keys, &self.tree, now);
                if let Some(v) = &vote {
                    let verdict = self.votes.validate_vote(v, &self.dist, &self.tree, now);
                    events.push(NodeEvent::Vote(v.clone(), verdict));
                }
                let commit = (!self.cfg.static_dynasty).then(|| {
                    let idx = self.dynasty.index + 1;
                    let share = BeaconShare::new(&self.keys, idx, BeaconPhase::Commit, hash(&honest_reveal(&self.keys, idx).0));
                    self.record_beacon(&share);
                    share
                });
                (vote.is_some() || commit.is_some()).then_some(Message::Finality { vote, commit })
            }
            Phase::Beacon if !self.cfg.static_dynasty && now > 0 => {
                let idx = self.dynasty.index + 1;
                let share = BeaconShare::new(&self.keys, idx, BeaconPhase::Reveal, honest_reveal(&self.keys, idx));
                self.record_beacon(&share);
                Some(Message::Beacon(share))
            }
            Phase::Beacon => None,
        };
        (msg.into_iter().collect(), events)
    }

    fn propose(&mut self, now: Slot, events: &mut Vec<NodeEvent>) -> Option<Message> {
        let head = self.tree.head_block();
        let opens_dynasty = self.dynasty.index > 0 && head.height % self.cfg.epoch_size == 0;
        let ctx = ProposalContext {
            keys: &self.keys,
            tree: &self.tree,
            pool: &self.pool,
            dist: &self.dist,
            params: &self.cfg.poc,
            max_tx: self.cfg.max_tx_per_block,
            roster: opens_dynasty.then(|| self.dynasty.descriptor()),
        };
        let block = propose_block(&ctx, now)?;
        events.push(self.receive_block(block.clone(), now));
        Some(Message::Block(block))
    }

    fn receive_block(&mut self, b: Block, now: Slot) -> NodeEvent {
        let d = b.digest();
        if phase_of(now, self.cfg.epoch_size).1 != Phase::Proposal {
            return NodeEvent::BlockRejected(d, BlockRejection::WrongSlot);
        }
        match accept_block(b, &self.dist, &mut self.tree, &self.cfg.poc, now) {
            Ok(d) => {
                self.candidates.insert(d);
                NodeEvent::BlockAccepted(d)
            }
            Err(r) => NodeEvent::BlockRejected(d, r),
        }
    }

    fn record_beacon(&mut self, share: &BeaconShare) -> bool {
        if share.dynasty_index != self.dynasty.index + 1 || !self.dynasty.contains(&share.member) || !share.is_well_signed() {
            return false;
        }
        let entry = self.beacon.entry(share.member).or_default();
        match share.phase {
            BeaconPhase::Commit if entry.commitment.is_none() => entry.commitment = Some(share.value),
            BeaconPhase::Reveal if entry.reveal.is_none() => entry.reveal = Some(share.value),
            _ => return false,
        }
        true
    }

    pub fn on_message(&mut self, msg: Message, now: Slot) -> Vec<NodeEvent> {
        match msg {
            Message::Tx(tx) => vec![self.admit_tx(tx, now)],
            Message::Block(b) => vec![self.receive_block(b, now)],
            Message::Finality { vote, commit } => {
                let mut out = Vec::new();
                if let Some(v) = vote {
                    let verdict = self.votes.validate_vote(&v, &self.dist, &self.tree, now);
                    out.push(NodeEvent::Vote(v, verdict));
                }
                if let Some(c) = commit {
                    if !self.record_beacon(&c) {
                        self.dropped += 1;
                        out.push(NodeEvent::Dropped);
                    }
                }
                out
            }
            Message::Beacon(share) => {
                if self.record_beacon(&share) {
                    Vec::new()
                } else {
                    self.dropped += 1;
                    vec![NodeEvent::Dropped]
                }
            }
        }
    }

    pub fn on_slot_end(&mut self, now: Slot) -> Vec<NodeEvent> {
        let mut events = Vec::new();
        for (v, verdict) in self.votes.retry_pending(&self.tree, now) {
            events.push(NodeEvent::Vote(v, verdict));
        }
        match phase_of(now, self.cfg.epoch_size).1 {
            Phase::Proposal => self.end_proposal(now, &mut events),
            Phase::Finality => self.end_finality(&mut events),
            Phase::Beacon if now > 0 => self.end_beacon(now, &mut events),
            Phase::Beacon => {}
        }
        events
    }

    fn end_proposal(&mut self, now: Slot, events: &mut Vec<NodeEvent>) {
        let candidates = std::mem::take(&mut self.candidates);
        let winner = match resolve_slot(&candidates, &mut self.tree, &self.dist, &self.cfg.poc, now) {
            Ok(w) => w,
            Err(e) => {
                if let crate::poc::PocError::ProtocolViolation(d) = e {
                    events.push(NodeEvent::ProtocolViolation(d));
                }
                let fresh: BTreeSet<_> = candidates.into_iter().filter(|c| {
                    self.tree.get(c).is_some_and(|b| b.pre_hash == self.tree.head())
                }).collect();
                resolve_slot(&fresh, &mut self.tree, &self.dist, &self.cfg.poc, now).expect("filtered candidates")
            }
        };
        let block = self.tree.get(&winner).expect("winner stored");
        self.pool.remove_committed(block.tx_data.iter());
        events.push(NodeEvent::Head { digest: winner, height: block.height, empty: block.is_empty_block() });
        prune_pool(&mut self.pool, &self.tree, now);
    }

    fn end_finality(&mut self, events: &mut Vec<NodeEvent>) {
        let changes = tally_and_finalize(&self.votes, &mut self.tree, self.dynasty.len(), self.cfg.threshold);
        let finalized_any = changes.iter().any(|c| matches!(c, FinalityChange::Finalized(_)));
        events.extend(changes.into_iter().map(NodeEvent::Finality));
        if finalized_any {
            let newly = self.newly_final();
            self.fee_pool += newly.iter().map(|d| self.tree.get(d).map_or(0, |b| b.tx_data.len() as u64)).sum::<u64>();
            events.push(NodeEvent::NewlyFinal(newly));
        }
        let top = self.tree.highest_committed();
        if !self.tree.is_ancestor(&top, &self.tree.head()) {
            let head = self.tree.deepest_descendant(top);
            self.tree.set_head(head);
            let b = self.tree.head_block();
            events.push(NodeEvent::Head { digest: head, height: b.height, empty: b.is_empty_block() });
        }
    }

    fn newly_final(&mut self) -> Vec<Digest> {
        let top = self.tree.highest_finalized();
        let floor = self.tree.get(&self.last_final).map_or(0, |b| b.height);
        let mut out: Vec<Digest> = self
            .tree
            .ancestors(top)
            .take_while(|(_, b)| b.height > floor)
            .map(|(d, _)| d)
            .collect();
        out.reverse();
        self.last_final = top;
        out
    }

    fn end_beacon(&mut self, now: Slot, events: &mut Vec<NodeEvent>) {
        if self.cfg.static_dynasty {
            return;
        }
        let members: Vec<PublicKey> = self.dynasty.members.iter().map(|(pk, _)| *pk).collect();
        let beacon = beacon_round(&self.dynasty.randomness, &members, &std::mem::take(&mut self.beacon));
        let evidence: Vec<SlashingEvidence> = self.votes.drain_evidence();
        let incentives = apply_incentives(&self.dynasty, &mut self.registry, std::mem::take(&mut self.fee_pool), &evidence);
        let next = select_committee(
            &self.registry,
            beacon.randomness,
            self.cfg.committee.committee_size,
            self.dynasty.index + 1,
            now + 1,
            self.cfg.epoch_size,
        )
        .unwrap_or_else(|_| Dynasty {
            index: self.dynasty.index + 1,
            start_slot: now + 1,
            randomness: beacon.randomness,
            ..self.dynasty.clone()
        });
        self.dist = next.distribution();
        self.dynasty = next.clone();
        events.push(NodeEvent::Rotation { dynasty: next, beacon, incentives });
    }
}
