//! Transactions, admission checks and the per-node pending pool.

use std::collections::{BTreeSet, HashSet};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{verify, Canonical, Digest, KeyPair, PublicKey, Signature};
use crate::ledger::{CheckpointTree, Slot};

pub const DEFAULT_KAPPA: usize = 6;
pub const DEFAULT_POOL_CAPACITY: usize = 10_000;

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Transaction {
    pub tx_hash: Digest,
    pub sender: PublicKey,
    pub recipient: PublicKey,
    pub timestamp: Slot,
    #[serde(with = "hex_bytes")]
    pub data: Vec<u8>,
    pub signature: Signature,
}

mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        hex::decode(s).map_err(serde::de::Error::custom)
    }
}

impl Transaction {
    pub fn compute_hash(sender: &PublicKey, recipient: &PublicKey, timestamp: Slot, data: &[u8]) -> Digest {
        Canonical::new().pk(sender).pk(recipient).u64(timestamp).bytes(data).hash()
    }

    fn signing_bytes(&self) -> Vec<u8> {
        Canonical::new()
            .digest(&self.tx_hash)
            .pk(&self.sender)
            .pk(&self.recipient)
            .u64(self.timestamp)
            .bytes(&self.data)
            .finish()
    }

    /// Builds and signs a transaction from `keys`.
    pub fn new(keys: &KeyPair, recipient: PublicKey, timestamp: Slot, data: Vec<u8>) -> Self {
        let sender = keys.public();
        let mut tx = Transaction {
            tx_hash: Self::compute_hash(&sender, &recipient, timestamp, &data),
            sender,
            recipient,
            timestamp,
            data,
            signature: Signature([0; 64]),
        };
        tx.signature = keys.sign(&tx.signing_bytes());
        tx
    }

    /// Hash consistency plus sender signature.
    pub fn is_well_signed(&self) -> bool {
        self.tx_hash == Self::compute_hash(&self.sender, &self.recipient, self.timestamp, &self.data)
            && verify(&self.sender, &self.signing_bytes(), &self.signature)
    }

    /// Full canonical form, as embedded in block bodies.
    pub fn encode(&self) -> Vec<u8> {
        Canonical::new()
            .digest(&self.tx_hash)
            .pk(&self.sender)
            .pk(&self.recipient)
            .u64(self.timestamp)
            .bytes(&self.data)
            .bytes(&self.signature.0)
            .finish()
    }
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TxRejection {
    #[error("sender or recipient is not a registered user")]
    UnknownParty,
    #[error("transaction hash or signature does not verify")]
    BadSignature,
    #[error("transaction already pooled or recently committed")]
    Duplicate,
    #[error("timestamp outside the admissible window")]
    StaleTimestamp,
    #[error("pool is full")]
    PoolFull,
}

/// FIFO pool of admitted transactions.
#[derive(Clone, Debug)]
pub struct TxPool {
    entries: IndexMap<Digest, Transaction>,
    capacity: usize,
    kappa: usize,
}

impl Default for TxPool {
    fn default() -> Self {
        Self::new(DEFAULT_POOL_CAPACITY, DEFAULT_KAPPA)
    }
}

impl TxPool {
    pub fn new(capacity: usize, kappa: usize) -> Self {
        assert!(capacity > 0 && kappa > 0, "pool capacity and kappa must be positive");
        TxPool { entries: IndexMap::new(), capacity, kappa }
    }

    pub fn kappa(&self) -> usize {
        self.kappa
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, d: &Digest) -> bool {
        self.entries.contains_key(d)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transaction> {
        self.entries.values()
    }

    /// Inserts without checks; callers run [`validate_transaction`] first.
    pub fn insert(&mut self, tx: Transaction) -> Result<(), TxRejection> {
        if self.entries.len() >= self.capacity {
            return Err(TxRejection::PoolFull);
        }
        self.entries.insert(tx.tx_hash, tx);
        Ok(())
    }

    pub fn remove(&mut self, d: &Digest) -> Option<Transaction> {
        self.entries.shift_remove(d)
    }

    /// Drops every pooled transaction included in `block_txs`.
    pub fn remove_committed<'a>(&mut self, block_txs: impl IntoIterator<Item = &'a Transaction>) -> usize {
        block_txs
            .into_iter()
            .filter(|tx| self.entries.shift_remove(&tx.tx_hash).is_some())
            .count()
    }
}

/// Lower bound of the admissible timestamp window: the slot of the
/// κ-th-last block on the head chain (genesis slot when the chain is shorter).
pub fn window_start(tree: &CheckpointTree, kappa: usize) -> Slot {
    tree.recent_chain(kappa).last().map(|b| b.slot).unwrap_or(0)
}

fn recently_committed(tree: &CheckpointTree, kappa: usize) -> HashSet<Digest> {
    tree.recent_chain(kappa)
        .into_iter()
        .flat_map(|b| b.tx_data.iter().map(|tx| tx.tx_hash))
        .collect()
}

/// The three admission conditions, checked in order.
pub fn validate_transaction(
    tx: &Transaction,
    users: &BTreeSet<PublicKey>,
    tree: &CheckpointTree,
    pool: &TxPool,
    now: Slot,
) -> Result<(), TxRejection> {
    if !users.contains(&tx.sender) || !users.contains(&tx.recipient) {
        return Err(TxRejection::UnknownParty);
    }
    if !tx.is_well_signed() {
        return Err(TxRejection::BadSignature);
    }
    if pool.contains(&tx.tx_hash) || recently_committed(tree, pool.kappa).contains(&tx.tx_hash) {
        return Err(TxRejection::Duplicate);
    }
    if tx.timestamp < window_start(tree, pool.kappa) || tx.timestamp > now {
        return Err(TxRejection::StaleTimestamp);
    }
    Ok(())
}

/// Removes outdated entries (and any already in the recent head chain);
/// returns how many were dropped.
pub fn prune_pool(pool: &mut TxPool, tree: &CheckpointTree, now: Slot) -> usize {
    let start = window_start(tree, pool.kappa);
    let recent = recently_committed(tree, pool.kappa);
    let before = pool.entries.len();
    pool.entries
        .retain(|d, tx| tx.timestamp >= start && tx.timestamp <= now && !recent.contains(d));
    before - pool.entries.len()
}

/// Oldest-first payload; selected transactions stay pooled until committed.
pub fn select_payload(pool: &TxPool, max_tx: usize) -> Vec<Transaction> {
    pool.entries.values().take(max_tx).cloned().collect()
}
