//! Blocks, the block tree and checkpoint bookkeeping.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{hash, Canonical, Digest, PublicKey, Signature};
use crate::txpool::Transaction;

pub type Slot = u64;
pub type Height = u64;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LedgerError {
    #[error("initial dynasty must have at least one member")]
    EmptyDynasty,
    #[error("epoch size must be at least 1")]
    ZeroEpochSize,
    #[error("genesis must have height 0, slot 0 and a zero parent hash")]
    MalformedGenesis,
}

/// Why [`CheckpointTree::insert_block`] refused a block.
#[derive(Debug, Error, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InsertRejection {
    #[error("parent block unknown")]
    Orphan,
    #[error("height is not parent height + 1")]
    BadHeight,
    #[error("block already stored")]
    Duplicate,
}

/// Committee roster as carried inside a block.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DynastyDescriptor {
    pub index: u64,
    pub members: Vec<(PublicKey, u64)>,
}

impl DynastyDescriptor {
    fn encode(&self) -> Vec<u8> {
        let mut c = Canonical::new().u64(self.index).u64(self.members.len() as u64);
        for (pk, credit) in &self.members {
            c = c.pk(pk).u64(*credit);
        }
        c.finish()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub pre_hash: Digest,
    pub height: Height,
    pub tx_data: Vec<Transaction>,
    /// Roster of a freshly selected dynasty (genesis and dynasty-opening blocks).
    pub roster: Option<DynastyDescriptor>,
    pub slot: Slot,
    pub proposer: Option<PublicKey>,
    pub signature: Option<Signature>,
}

impl Block {
    /// Canonical encoding of the hashed fields. Proposer and signature are
    /// deliberately absent so the digest is independent of who signed.
    pub fn body_bytes(&self) -> Vec<u8> {
        let mut c = Canonical::new()
            .digest(&self.pre_hash)
            .u64(self.height)
            .u64(self.tx_data.len() as u64);
        for tx in &self.tx_data {
            c = c.bytes(&tx.encode());
        }
        let roster = self.roster.as_ref().map(DynastyDescriptor::encode);
        c.opt_bytes(roster.as_deref()).u64(self.slot).finish()
    }

    pub fn digest(&self) -> Digest {
        hash(&self.body_bytes())
    }

    /// The deterministic no-proposer block adopted when a slot has no candidate.
    pub fn empty(parent: Digest, parent_height: Height, slot: Slot) -> Block {
        Block {
            pre_hash: parent,
            height: parent_height + 1,
            tx_data: Vec::new(),
            roster: None,
            slot,
            proposer: None,
            signature: None,
        }
    }

    pub fn is_genesis(&self) -> bool {
        self.height == 0
    }

    pub fn is_empty_block(&self) -> bool {
        self.height > 0 && self.proposer.is_none()
    }

    pub fn record(&self) -> BlockRecord {
        BlockRecord {
            digest: self.digest(),
            pre_hash: self.pre_hash,
            height: self.height,
            slot: self.slot,
            proposer: self.proposer,
            n_tx: self.tx_data.len(),
        }
    }
}

pub fn block_hash(b: &Block) -> Digest {
    b.digest()
}

/// One line of the block trace.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockRecord {
    pub digest: Digest,
    pub pre_hash: Digest,
    pub height: Height,
    pub slot: Slot,
    pub proposer: Option<PublicKey>,
    pub n_tx: usize,
}

pub fn make_genesis(init_dynasty: &DynastyDescriptor) -> Result<Block, LedgerError> {
    if init_dynasty.members.is_empty() {
        return Err(LedgerError::EmptyDynasty);
    }
    Ok(Block {
        pre_hash: Digest::ZERO,
        height: 0,
        tx_data: Vec::new(),
        roster: Some(init_dynasty.clone()),
        slot: 0,
        proposer: None,
        signature: None,
    })
}

pub fn is_checkpoint_height(height: Height, epoch_size: u64) -> bool {
    height % epoch_size == 0
}

pub fn epoch_height_of(height: Height, epoch_size: u64) -> u64 {
    height / epoch_size
}

/// Block tree rooted at genesis with committed/finalized checkpoint marks.
#[derive(Clone, Debug)]
pub struct CheckpointTree {
    blocks: HashMap<Digest, Block>,
    children: HashMap<Digest, BTreeSet<Digest>>,
    genesis: Digest,
    head: Digest,
    committed: BTreeSet<Digest>,
    finalized: BTreeSet<Digest>,
    epoch_size: u64,
    log: Vec<Digest>,
    // XOR of hash(tag || digest) over stored blocks and finality marks: an
    // order-independent set hash.
    block_acc: Digest,
    committed_acc: Digest,
    finalized_acc: Digest,
}

fn mark_hash(tag: &[u8], d: &Digest) -> Digest {
    crate::crypto::hash_concat(&[tag, &d.0])
}

impl CheckpointTree {
    pub fn new(genesis: Block, epoch_size: u64) -> Result<Self, LedgerError> {
        if epoch_size == 0 {
            return Err(LedgerError::ZeroEpochSize);
        }
        if genesis.height != 0 || genesis.slot != 0 || genesis.pre_hash != Digest::ZERO {
            return Err(LedgerError::MalformedGenesis);
        }
        let g = genesis.digest();
        let mut tree = CheckpointTree {
            blocks: HashMap::new(),
            children: HashMap::new(),
            genesis: g,
            head: g,
            committed: BTreeSet::from([g]),
            finalized: BTreeSet::from([g]),
            epoch_size,
            log: vec![g],
            block_acc: hash(&g.0),
            committed_acc: mark_hash(b"c", &g),
            finalized_acc: mark_hash(b"f", &g),
        };
        tree.blocks.insert(g, genesis);
        Ok(tree)
    }

    pub fn epoch_size(&self) -> u64 {
        self.epoch_size
    }

    pub fn genesis(&self) -> Digest {
        self.genesis
    }

    pub fn head(&self) -> Digest {
        self.head
    }

    pub fn head_block(&self) -> &Block {
        &self.blocks[&self.head]
    }

    pub fn get(&self, d: &Digest) -> Option<&Block> {
        self.blocks.get(d)
    }

    pub fn contains(&self, d: &Digest) -> bool {
        self.blocks.contains_key(d)
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn children(&self, d: &Digest) -> impl Iterator<Item = &Digest> {
        self.children.get(d).into_iter().flatten()
    }

    pub fn is_checkpoint(&self, b: &Block) -> bool {
        is_checkpoint_height(b.height, self.epoch_size)
    }

    pub fn epoch_height(&self, b: &Block) -> u64 {
        epoch_height_of(b.height, self.epoch_size)
    }

    pub fn insert_block(&mut self, b: Block) -> Result<Digest, InsertRejection> {
        let d = b.digest();
        if self.blocks.contains_key(&d) {
            return Err(InsertRejection::Duplicate);
        }
        let parent = self.blocks.get(&b.pre_hash).ok_or(InsertRejection::Orphan)?;
        if b.height != parent.height + 1 {
            return Err(InsertRejection::BadHeight);
        }
        self.children.entry(b.pre_hash).or_default().insert(d);
        self.blocks.insert(d, b);
        self.log.push(d);
        self.block_acc = self.block_acc.xor(&hash(&d.0));
        Ok(d)
    }

    /// Swaps the signer of a stored block. The digest does not cover the
    /// signer, so two members can produce the same candidate.
    pub(crate) fn replace_signer(&mut self, d: &Digest, proposer: Option<PublicKey>, signature: Option<Signature>) {
        if let Some(b) = self.blocks.get_mut(d) {
            b.proposer = proposer;
            b.signature = signature;
        }
    }

    /// Blocks in the order they were inserted, genesis first.
    pub fn insertion_log(&self) -> &[Digest] {
        &self.log
    }

    pub(crate) fn set_head(&mut self, d: Digest) {
        assert!(self.blocks.contains_key(&d), "head must be a stored block");
        self.head = d;
    }

    /// Walks from `d` towards genesis (inclusive of both ends).
    pub fn ancestors(&self, d: Digest) -> impl Iterator<Item = (Digest, &Block)> + '_ {
        let mut cur = self.blocks.get(&d).map(|b| (d, b));
        std::iter::from_fn(move || {
            let out = cur?;
            cur = if out.1.height == 0 {
                None
            } else {
                self.blocks.get(&out.1.pre_hash).map(|b| (out.1.pre_hash, b))
            };
            Some(out)
        })
    }

    pub fn ancestor_at_height(&self, d: Digest, height: Height) -> Option<Digest> {
        let b = self.blocks.get(&d)?;
        if height > b.height {
            return None;
        }
        self.ancestors(d).find(|(_, b)| b.height == height).map(|(d, _)| d)
    }

    /// True when `anc` lies on the path from `desc` to genesis (or equals it).
    pub fn is_ancestor(&self, anc: &Digest, desc: &Digest) -> bool {
        match self.blocks.get(anc) {
            Some(a) => self.ancestor_at_height(*desc, a.height) == Some(*anc),
            None => false,
        }
    }

    /// The checkpoint at epoch height `epoch` on the path to `d`.
    pub fn checkpoint_at_epoch(&self, d: Digest, epoch: u64) -> Option<Digest> {
        self.ancestor_at_height(d, epoch * self.epoch_size)
    }

    /// The highest committed checkpoint on the path from `d` to genesis.
    pub fn last_committed_on_path(&self, d: Digest) -> Digest {
        let Some(b) = self.blocks.get(&d) else {
            return self.genesis;
        };
        let top = epoch_height_of(b.height, self.epoch_size);
        let mut cur = match self.checkpoint_at_epoch(d, top) {
            Some(c) => c,
            None => return self.genesis,
        };
        loop {
            if self.committed.contains(&cur) {
                return cur;
            }
            let h = self.blocks[&cur].height;
            match self.ancestor_at_height(cur, h - self.epoch_size) {
                Some(p) => cur = p,
                None => return self.genesis,
            }
        }
    }

    pub fn committed(&self) -> &BTreeSet<Digest> {
        &self.committed
    }

    pub fn finalized(&self) -> &BTreeSet<Digest> {
        &self.finalized
    }

    pub fn is_committed(&self, d: &Digest) -> bool {
        self.committed.contains(d)
    }

    pub fn is_finalized(&self, d: &Digest) -> bool {
        self.finalized.contains(d)
    }

    pub(crate) fn mark_committed(&mut self, d: Digest) -> bool {
        debug_assert!(self.blocks.contains_key(&d));
        let fresh = self.committed.insert(d);
        if fresh {
            self.committed_acc = self.committed_acc.xor(&mark_hash(b"c", &d));
        }
        fresh
    }

    pub(crate) fn mark_finalized(&mut self, d: Digest) -> bool {
        debug_assert!(self.committed.contains(&d), "finalized must be committed");
        let fresh = self.finalized.insert(d);
        if fresh {
            self.finalized_acc = self.finalized_acc.xor(&mark_hash(b"f", &d));
        }
        fresh
    }

    /// Finalized checkpoint with the largest height.
    pub fn highest_finalized(&self) -> Digest {
        self.finalized
            .iter()
            .max_by_key(|d| (self.blocks[*d].height, std::cmp::Reverse(**d)))
            .copied()
            .unwrap_or(self.genesis)
    }

    /// Committed checkpoint with the largest height (smallest digest on ties).
    pub fn highest_committed(&self) -> Digest {
        self.committed
            .iter()
            .max_by_key(|d| (self.blocks[*d].height, std::cmp::Reverse(**d)))
            .copied()
            .unwrap_or(self.genesis)
    }

    /// True if `d` is an ancestor-or-self of some finalized checkpoint.
    pub fn is_block_final(&self, d: &Digest) -> bool {
        self.is_ancestor(d, &self.highest_finalized())
    }

    /// The last `count` blocks on the head chain, head first.
    pub fn recent_chain(&self, count: usize) -> Vec<&Block> {
        self.ancestors(self.head).take(count).map(|(_, b)| b).collect()
    }

    /// Order-independent digest of stored blocks, head and finality marks.
    pub fn state_hash(&self) -> Digest {
        Canonical::new()
            .digest(&self.block_acc)
            .digest(&self.head)
            .digest(&self.committed_acc)
            .digest(&self.finalized_acc)
            .hash()
    }

    /// The deepest block descending from `root`, ties broken by smallest digest.
    pub fn deepest_descendant(&self, root: Digest) -> Digest {
        let mut best = (self.blocks[&root].height, std::cmp::Reverse(root));
        let mut stack = vec![root];
        while let Some(d) = stack.pop() {
            let h = self.blocks[&d].height;
            if (h, std::cmp::Reverse(d)) > best {
                best = (h, std::cmp::Reverse(d));
            }
            stack.extend(self.children(&d).copied());
        }
        best.1 .0
    }

    pub fn block_records(&self) -> Vec<BlockRecord> {
        self.log.iter().map(|d| self.blocks[d].record()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::keygen;

    pub(crate) fn descriptor() -> DynastyDescriptor {
        let pk = keygen(b"v0").unwrap().public();
        DynastyDescriptor { index: 0, members: vec![(pk, 10)] }
    }

    fn child(tree: &CheckpointTree, parent: Digest, slot: Slot) -> Block {
        let p = tree.get(&parent).unwrap();
        Block::empty(parent, p.height, slot)
    }

    #[test]
    fn genesis_shape() {
        let g = make_genesis(&descriptor()).unwrap();
        assert_eq!(g.height, 0);
        assert_eq!(g.pre_hash, Digest::ZERO);
        assert_eq!(g.slot, 0);
        assert_eq!(g.digest(), make_genesis(&descriptor()).unwrap().digest());
        let empty = DynastyDescriptor { index: 0, members: vec![] };
        assert_eq!(make_genesis(&empty), Err(LedgerError::EmptyDynasty));

        let tree = CheckpointTree::new(g.clone(), 3).unwrap();
        assert_eq!(tree.head(), g.digest());
        assert_eq!(tree.finalized(), &BTreeSet::from([g.digest()]));
        assert!(tree.is_committed(&g.digest()));
    }

    #[test]
    fn hash_excludes_signature_and_proposer() {
        let g = make_genesis(&descriptor()).unwrap();
        let mut a = Block::empty(g.digest(), 0, 1);
        let b = a.clone();
        a.signature = Some(Signature([9; 64]));
        a.proposer = Some(keygen(b"p").unwrap().public());
        assert_eq!(a.digest(), b.digest());
        let mut c = b.clone();
        c.slot = 2;
        assert_ne!(c.digest(), b.digest());
    }

    #[test]
    fn checkpoints_and_epoch_heights() {
        assert!(is_checkpoint_height(0, 3));
        assert!(is_checkpoint_height(3, 3));
        assert!(!is_checkpoint_height(7, 3));
        assert_eq!(epoch_height_of(0, 3), 0);
        assert_eq!(epoch_height_of(6, 3), 2);
        assert_eq!(epoch_height_of(8, 3), 2);
    }

    #[test]
    fn insert_rules() {
        let g = make_genesis(&descriptor()).unwrap();
        let mut tree = CheckpointTree::new(g, 3).unwrap();
        let b1 = child(&tree, tree.head(), 1);
        let d1 = tree.insert_block(b1.clone()).unwrap();
        assert_eq!(tree.head(), tree.genesis(), "insert never moves head");
        assert_eq!(tree.insert_block(b1), Err(InsertRejection::Duplicate));

        let orphan = Block::empty(crate::crypto::hash(b"nowhere"), 1, 2);
        assert_eq!(tree.insert_block(orphan), Err(InsertRejection::Orphan));

        let mut bad = Block::empty(d1, 1, 2);
        bad.height = 5;
        assert_eq!(tree.insert_block(bad), Err(InsertRejection::BadHeight));
    }

    #[test]
    fn ancestry_and_committed_walk() {
        let g = make_genesis(&descriptor()).unwrap();
        let mut tree = CheckpointTree::new(g, 3).unwrap();
        let mut tip = tree.genesis();
        let mut chain = vec![tip];
        for s in 1..=7 {
            let b = child(&tree, tip, s);
            tip = tree.insert_block(b).unwrap();
            chain.push(tip);
        }
        assert!(tree.is_ancestor(&chain[2], &chain[7]));
        assert!(!tree.is_ancestor(&chain[7], &chain[2]));
        assert_eq!(tree.checkpoint_at_epoch(tip, 2), Some(chain[6]));
        assert_eq!(tree.last_committed_on_path(tip), tree.genesis());
        tree.mark_committed(chain[3]);
        assert_eq!(tree.last_committed_on_path(tip), chain[3]);
        assert_eq!(tree.deepest_descendant(tree.genesis()), tip);
    }

    #[test]
    fn replaying_insertion_log_reproduces_tree() {
        let g = make_genesis(&descriptor()).unwrap();
        let mut tree = CheckpointTree::new(g.clone(), 2).unwrap();
        let mut tip = tree.genesis();
        for s in 1..=5 {
            let b = child(&tree, tip, s);
            tip = tree.insert_block(b).unwrap();
            // a sibling fork at every height
            let mut fork = child(&tree, tree.get(&tip).unwrap().pre_hash, s);
            fork.slot += 100;
            tree.insert_block(fork).unwrap();
        }
        let mut fresh = CheckpointTree::new(g, 2).unwrap();
        for d in &tree.insertion_log()[1..] {
            fresh.insert_block(tree.get(d).unwrap().clone()).unwrap();
        }
        assert_eq!(fresh.state_hash(), tree.state_hash());
        assert_eq!(fresh.block_records(), tree.block_records());
    }
}
