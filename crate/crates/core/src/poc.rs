//! Proof-of-Credit leader election, block proposal/verification and the
//! per-slot chain extension rules.
//!
//! A dynasty member with credit `c` out of a dynasty total `C` may propose
//! in a slot when the low `ξ` bits of `hash(head || pk || c)` do not exceed
//! `(2^ξ - 1) * c / C`. The comparison is done on cross-multiplied integers
//! (`truncation * C <= (2^ξ - 1) * c`) so every node reaches the same verdict.

use std::cmp::Reverse;
use std::collections::BTreeSet;

use num_bigint::{BigInt, BigUint};
use num_rational::{BigRational, Ratio};
use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{
    hash_concat, truncate_bits, truncate_bits_u128, verify, Digest, KeyPair, PublicKey, DIGEST_BITS,
};
use crate::ledger::{Block, CheckpointTree, DynastyDescriptor, Slot};
use crate::txpool::{select_payload, TxPool};

pub const DEFAULT_DIFFICULTY_BITS: u32 = 16;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PocError {
    #[error("public key is not a member of the current dynasty")]
    NotMember,
    #[error("credit distribution has zero total credit")]
    ZeroTotal,
    #[error("duplicate member in credit distribution")]
    DuplicateMember,
    #[error("probability must lie in [0, 1]")]
    ProbabilityOutOfRange,
    #[error("difficulty bits {0} outside 1..=256")]
    BadDifficulty(u32),
    #[error("candidate {0} is not a child of the current head")]
    ProtocolViolation(Digest),
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockRejection {
    #[error("proposer is not a dynasty member")]
    NotMember,
    #[error("block signature does not verify")]
    BadSignature,
    #[error("block slot is not the current slot")]
    WrongSlot,
    #[error("height is not head height + 1")]
    BadHeight,
    #[error("parent hash is not the current head")]
    BadParent,
    #[error("proposer does not satisfy the credit puzzle")]
    BadProof,
    #[error("block already stored")]
    Duplicate,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PocParams {
    pub difficulty_bits: u32,
}

impl Default for PocParams {
    fn default() -> Self {
        PocParams { difficulty_bits: DEFAULT_DIFFICULTY_BITS }
    }
}

impl PocParams {
    pub fn new(difficulty_bits: u32) -> Result<Self, PocError> {
        if difficulty_bits == 0 || difficulty_bits > DIGEST_BITS {
            return Err(PocError::BadDifficulty(difficulty_bits));
        }
        Ok(PocParams { difficulty_bits })
    }
}

/// Credit weights of the current dynasty, ordered by public key.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CreditDistribution {
    members: Vec<(PublicKey, u64)>,
    total: u64,
}

impl CreditDistribution {
    pub fn new(mut members: Vec<(PublicKey, u64)>) -> Result<Self, PocError> {
        members.sort();
        if members.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(PocError::DuplicateMember);
        }
        let total: u64 = members.iter().map(|(_, c)| *c).sum();
        if total == 0 {
            return Err(PocError::ZeroTotal);
        }
        Ok(CreditDistribution { members, total })
    }

    pub fn from_descriptor(d: &DynastyDescriptor) -> Result<Self, PocError> {
        Self::new(d.members.clone())
    }

    pub fn members(&self) -> &[(PublicKey, u64)] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn credit(&self, pk: &PublicKey) -> Option<u64> {
        self.members
            .binary_search_by(|(m, _)| m.cmp(pk))
            .ok()
            .map(|i| self.members[i].1)
    }

    pub fn contains(&self, pk: &PublicKey) -> bool {
        self.credit(pk).is_some()
    }

    /// Exact `c_j / Σc`.
    pub fn probability(&self, pk: &PublicKey) -> Option<Ratio<u64>> {
        self.credit(pk).map(|c| Ratio::new(c, self.total))
    }
}

/// `(2^ξ - 1) * p`, exactly.
pub fn difficulty_target(bits: u32, p: &BigRational) -> Result<BigRational, PocError> {
    if *p < BigRational::zero() || *p > BigRational::one() {
        return Err(PocError::ProbabilityOutOfRange);
    }
    let full = (BigInt::from(1) << bits) - 1;
    Ok(BigRational::from_integer(full) * p)
}

/// The puzzle inequality on an already-truncated hashcode.
pub fn poc_accepts(truncation: &BigUint, credit: u64, total: u64, bits: u32) -> bool {
    if bits <= 64 && truncation.bits() <= 64 {
        let t = truncation.iter_u64_digits().next().unwrap_or(0);
        let full = (1u128 << bits) - 1;
        return (t as u128) * (total as u128) <= full * (credit as u128);
    }
    let full = (BigUint::from(1u8) << bits) - 1u8;
    truncation * BigUint::from(total) <= full * BigUint::from(credit)
}

/// `hash(head || pk || credit)` with credit as 8-byte big-endian.
pub fn hashcode(head: &Digest, pk: &PublicKey, credit: u64) -> Digest {
    hash_concat(&[&head.0, &pk.0, &credit.to_be_bytes()])
}

/// Result of evaluating the puzzle for one member.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PocOutcome {
    pub truncation: BigUint,
    pub passed: bool,
}

impl PocOutcome {
    /// Truncation as u64 for logging; saturates above 64 bits.
    pub fn truncation_u64(&self) -> u64 {
        if self.truncation.bits() > 64 {
            u64::MAX
        } else {
            self.truncation.to_u64_digits().first().copied().unwrap_or(0)
        }
    }
}

pub fn check_poc(
    head: &Digest,
    pk: &PublicKey,
    dist: &CreditDistribution,
    params: &PocParams,
) -> Result<PocOutcome, PocError> {
    let credit = dist.credit(pk).ok_or(PocError::NotMember)?;
    let hc = hashcode(head, pk, credit);
    let truncation = if params.difficulty_bits <= 128 {
        BigUint::from(truncate_bits_u128(&hc, params.difficulty_bits))
    } else {
        truncate_bits(&hc, params.difficulty_bits).map_err(|_| PocError::BadDifficulty(params.difficulty_bits))?
    };
    let passed = poc_accepts(&truncation, credit, dist.total(), params.difficulty_bits);
    Ok(PocOutcome { truncation, passed })
}

/// Everything a member needs to build a block for the current slot.
pub struct ProposalContext<'a> {
    pub keys: &'a KeyPair,
    pub tree: &'a CheckpointTree,
    pub pool: &'a TxPool,
    pub dist: &'a CreditDistribution,
    pub params: &'a PocParams,
    pub max_tx: usize,
    pub roster: Option<DynastyDescriptor>,
}

/// A signed block extending the head, if the puzzle is solved this slot.
pub fn propose_block(ctx: &ProposalContext<'_>, now: Slot) -> Option<Block> {
    let pk = ctx.keys.public();
    let outcome = check_poc(&ctx.tree.head(), &pk, ctx.dist, ctx.params).ok()?;
    if !outcome.passed {
        return None;
    }
    let head = ctx.tree.head_block();
    let mut block = Block {
        pre_hash: ctx.tree.head(),
        height: head.height + 1,
        tx_data: select_payload(ctx.pool, ctx.max_tx),
        roster: ctx.roster.clone(),
        slot: now,
        proposer: Some(pk),
        signature: None,
    };
    block.signature = Some(ctx.keys.sign(&block.body_bytes()));
    Some(block)
}

/// Ordered block checks against the local head.
pub fn verify_block(
    b: &Block,
    dist: &CreditDistribution,
    tree: &CheckpointTree,
    params: &PocParams,
    now: Slot,
) -> Result<(), BlockRejection> {
    let proposer = b.proposer.filter(|pk| dist.contains(pk)).ok_or(BlockRejection::NotMember)?;
    let sig = b.signature.ok_or(BlockRejection::BadSignature)?;
    if !verify(&proposer, &b.body_bytes(), &sig) {
        return Err(BlockRejection::BadSignature);
    }
    if b.slot != now {
        return Err(BlockRejection::WrongSlot);
    }
    if b.height != tree.head_block().height + 1 {
        return Err(BlockRejection::BadHeight);
    }
    if b.pre_hash != tree.head() {
        return Err(BlockRejection::BadParent);
    }
    match check_poc(&b.pre_hash, &proposer, dist, params) {
        Ok(o) if o.passed => Ok(()),
        _ => Err(BlockRejection::BadProof),
    }
}

/// Verifies `b` and stores it as a candidate for the current slot.
pub fn accept_block(
    b: Block,
    dist: &CreditDistribution,
    tree: &mut CheckpointTree,
    params: &PocParams,
    now: Slot,
) -> Result<Digest, BlockRejection> {
    verify_block(&b, dist, tree, params, now)?;
    let d = b.digest();
    if let Some(stored) = tree.get(&d) {
        // Same content from a better-ranked member: keep that signer.
        let better = stored.slot == now
            && stored.proposer.is_some_and(|old| signer_rank(&b, dist, params) < signer_rank_of(&old, stored, dist, params));
        if !better {
            return Err(BlockRejection::Duplicate);
        }
        tree.replace_signer(&d, b.proposer, b.signature);
        return Ok(d);
    }
    tree.insert_block(b).map_err(|_| BlockRejection::Duplicate)
}

fn signer_rank_of(pk: &PublicKey, b: &Block, dist: &CreditDistribution, params: &PocParams) -> (Reverse<u64>, BigUint) {
    let credit = dist.credit(pk).unwrap_or(0);
    let trunc = check_poc(&b.pre_hash, pk, dist, params)
        .map(|o| o.truncation)
        .unwrap_or_else(|_| BigUint::from(u8::MAX) << DIGEST_BITS);
    (Reverse(credit), trunc)
}

fn signer_rank(b: &Block, dist: &CreditDistribution, params: &PocParams) -> (Reverse<u64>, BigUint) {
    match &b.proposer {
        Some(pk) => signer_rank_of(pk, b, dist, params),
        None => (Reverse(0), BigUint::from(u8::MAX) << DIGEST_BITS),
    }
}

/// Picks the new head among this slot's candidates (or appends the empty
/// block when there are none) and moves the head there.
///
/// Ranking: highest proposer credit, then smallest truncation, then smallest
/// block digest.
pub fn resolve_slot(
    candidates: &BTreeSet<Digest>,
    tree: &mut CheckpointTree,
    dist: &CreditDistribution,
    params: &PocParams,
    now: Slot,
) -> Result<Digest, PocError> {
    let head = tree.head();
    let head_height = tree.head_block().height;
    for c in candidates {
        match tree.get(c) {
            Some(b) if b.pre_hash == head && b.height == head_height + 1 => {}
            _ => return Err(PocError::ProtocolViolation(*c)),
        }
    }

    let winner = if candidates.is_empty() {
        let empty = Block::empty(head, head_height, now);
        let d = empty.digest();
        match tree.insert_block(empty) {
            Ok(_) | Err(crate::ledger::InsertRejection::Duplicate) => d,
            Err(_) => unreachable!("empty child of head always inserts"),
        }
    } else {
        candidates
            .iter()
            .map(|d| {
                let (credit, trunc) = signer_rank(tree.get(d).expect("checked above"), dist, params);
                ((credit, trunc, *d), *d)
            })
            .min_by(|a, b| a.0.cmp(&b.0))
            .map(|(_, d)| d)
            .expect("non-empty candidate set")
    };
    tree.set_head(winner);
    Ok(winner)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{hash, keygen};
    use crate::ledger::make_genesis;

    fn keys(n: usize) -> Vec<KeyPair> {
        (0..n).map(|i| keygen(format!("m{i}").as_bytes()).unwrap()).collect()
    }

    fn setup(credits: &[u64]) -> (Vec<KeyPair>, CreditDistribution, CheckpointTree) {
        let ks = keys(credits.len());
        let members: Vec<_> = ks.iter().zip(credits).map(|(k, c)| (k.public(), *c)).collect();
        let dist = CreditDistribution::new(members.clone()).unwrap();
        let g = make_genesis(&DynastyDescriptor { index: 0, members }).unwrap();
        (ks, dist, CheckpointTree::new(g, 3).unwrap())
    }

    fn rat(n: i64, d: i64) -> BigRational {
        BigRational::new(BigInt::from(n), BigInt::from(d))
    }

    #[test]
    fn target_arithmetic() {
        assert_eq!(difficulty_target(8, &rat(1, 1)).unwrap(), rat(255, 1));
        assert_eq!(difficulty_target(8, &rat(0, 1)).unwrap(), rat(0, 1));
        assert_eq!(difficulty_target(8, &rat(1, 4)).unwrap(), rat(255, 4));
        assert_eq!(difficulty_target(8, &rat(5, 4)), Err(PocError::ProbabilityOutOfRange));
    }

    #[test]
    fn probabilities_sum_to_one() {
        let (ks, dist, _) = setup(&[1, 2, 3, 7]);
        let sum: Ratio<u64> = ks.iter().map(|k| dist.probability(&k.public()).unwrap()).sum();
        assert_eq!(sum, Ratio::from_integer(1));
        assert!(CreditDistribution::new(vec![(ks[0].public(), 0)]).is_err());
    }

    #[test]
    fn single_member_always_passes() {
        let (ks, dist, _) = setup(&[5]);
        for i in 0u32..200 {
            let head = hash(&i.to_be_bytes());
            assert!(check_poc(&head, &ks[0].public(), &dist, &PocParams::new(8).unwrap()).unwrap().passed);
        }
    }

    #[test]
    fn zero_probability_boundary() {
        assert!(poc_accepts(&BigUint::from(0u8), 0, 10, 8));
        assert!(!poc_accepts(&BigUint::from(1u8), 0, 10, 8));
        assert!(poc_accepts(&BigUint::from(255u8), 10, 10, 8));
        // 63.75 target: 63 passes, 64 does not.
        assert!(poc_accepts(&BigUint::from(63u8), 1, 4, 8));
        assert!(!poc_accepts(&BigUint::from(64u8), 1, 4, 8));
        // wide difficulty exercises the big-integer path
        let big = BigUint::from(1u8) << 200;
        assert!(poc_accepts(&big, 1, 2, 256));
    }

    #[test]
    fn non_member_is_an_error() {
        let (_, dist, tree) = setup(&[1, 1]);
        let outsider = keygen(b"outsider").unwrap().public();
        assert_eq!(
            check_poc(&tree.head(), &outsider, &dist, &PocParams::default()),
            Err(PocError::NotMember)
        );
    }

    #[test]
    fn equal_credit_pass_rate() {
        let (ks, dist, _) = setup(&[1, 1, 1, 1]);
        let params = PocParams::new(16).unwrap();
        let trials = 100_000u32;
        let expected = ((((1u64 << 16) - 1) / 4) + 1) as f64 / 65536.0;
        for k in &ks {
            let passes = (0..trials)
                .filter(|i| check_poc(&hash(&i.to_be_bytes()), &k.public(), &dist, &params).unwrap().passed)
                .count();
            let rate = passes as f64 / trials as f64;
            assert!((rate - 0.25).abs() < 0.01, "rate {rate}");
            assert!((rate - expected).abs() < 0.01);
        }
    }

    #[test]
    fn propose_and_verify() {
        let (ks, dist, tree) = setup(&[1, 1, 1, 1]);
        let params = PocParams::default();
        let pool = TxPool::default();
        let proposals: Vec<_> = ks
            .iter()
            .map(|k| {
                let ctx = ProposalContext { keys: k, tree: &tree, pool: &pool, dist: &dist, params: &params, max_tx: 10, roster: None };
                (propose_block(&ctx, 1), propose_block(&ctx, 1))
            })
            .collect();
        for (k, (a, b)) in ks.iter().zip(&proposals) {
            let passed = check_poc(&tree.head(), &k.public(), &dist, &params).unwrap().passed;
            assert_eq!(a.is_some(), passed);
            assert_eq!(a, b, "one deterministic proposal per slot");
            if let Some(block) = a {
                assert_eq!(block.height, 1);
                assert_eq!(block.pre_hash, tree.head());
                assert_eq!(verify_block(block, &dist, &tree, &params, 1), Ok(()));
                assert_eq!(verify_block(block, &dist, &tree, &params, 2), Err(BlockRejection::WrongSlot));
            }
        }
    }

    #[test]
    fn verification_reasons() {
        let (ks, dist, tree) = setup(&[1, 1, 1, 1]);
        let params = PocParams::new(8).unwrap();
        let outsider = keygen(b"outsider").unwrap();

        let mut b = Block::empty(tree.head(), 0, 1);
        b.proposer = Some(outsider.public());
        b.signature = Some(outsider.sign(&b.body_bytes()));
        assert_eq!(verify_block(&b, &dist, &tree, &params, 1), Err(BlockRejection::NotMember));

        let signed = |k: &KeyPair, mut b: Block| {
            b.proposer = Some(k.public());
            b.signature = Some(k.sign(&b.body_bytes()));
            b
        };
        let mut forged = signed(&ks[0], Block::empty(tree.head(), 0, 1));
        forged.slot = 2;
        assert_eq!(verify_block(&forged, &dist, &tree, &params, 1), Err(BlockRejection::BadSignature));

        let mut tall = Block::empty(tree.head(), 0, 1);
        tall.height = 2;
        assert_eq!(verify_block(&signed(&ks[0], tall), &dist, &tree, &params, 1), Err(BlockRejection::BadHeight));

        let stray = Block::empty(hash(b"elsewhere"), 0, 1);
        assert_eq!(verify_block(&signed(&ks[0], stray), &dist, &tree, &params, 1), Err(BlockRejection::BadParent));
    }

    #[test]
    fn forged_proof_is_rejected() {
        // Build a tree whose head makes member 0 fail the puzzle.
        let ks = keys(4);
        let members: Vec<_> = ks.iter().map(|k| (k.public(), 1)).collect();
        let dist = CreditDistribution::new(members.clone()).unwrap();
        let params = PocParams::new(16).unwrap();
        let mut slot = 0;
        let tree = loop {
            slot += 1;
            let g = make_genesis(&DynastyDescriptor { index: slot, members: members.clone() }).unwrap();
            let tree = CheckpointTree::new(g, 3).unwrap();
            if !check_poc(&tree.head(), &ks[0].public(), &dist, &params).unwrap().passed {
                break tree;
            }
        };
        let mut b = Block::empty(tree.head(), 0, 1);
        b.proposer = Some(ks[0].public());
        b.signature = Some(ks[0].sign(&b.body_bytes()));
        assert_eq!(verify_block(&b, &dist, &tree, &params, 1), Err(BlockRejection::BadProof));
    }

    fn candidate(tree: &mut CheckpointTree, k: &KeyPair, tag: u8) -> Digest {
        let mut b = Block::empty(tree.head(), tree.head_block().height, 1);
        b.proposer = Some(k.public());
        b.tx_data = vec![];
        b.roster = Some(DynastyDescriptor { index: tag as u64, members: vec![] });
        b.signature = Some(k.sign(&b.body_bytes()));
        tree.insert_block(b).unwrap()
    }

    #[test]
    fn extension_rules() {
        let params = PocParams::default();
        // rule i
        let (ks, dist, mut tree) = setup(&[5, 3]);
        let only = candidate(&mut tree, &ks[1], 0);
        assert_eq!(resolve_slot(&BTreeSet::from([only]), &mut tree, &dist, &params, 1), Ok(only));

        // rule ii: higher credit wins
        let (ks, dist, mut tree) = setup(&[5, 3]);
        let a = candidate(&mut tree, &ks[0], 0);
        let b = candidate(&mut tree, &ks[1], 1);
        assert_eq!(resolve_slot(&BTreeSet::from([a, b]), &mut tree, &dist, &params, 1), Ok(a));
        assert!(tree.contains(&b), "losing candidates stay stored");

        // rule ii: equal credit, smaller truncation wins
        let (ks, dist, mut tree) = setup(&[4, 4]);
        let head = tree.head();
        let t: Vec<_> = ks.iter().map(|k| check_poc(&head, &k.public(), &dist, &params).unwrap().truncation).collect();
        let a = candidate(&mut tree, &ks[0], 0);
        let b = candidate(&mut tree, &ks[1], 1);
        let expected = if t[0] < t[1] { a } else { b };
        assert_eq!(resolve_slot(&BTreeSet::from([a, b]), &mut tree, &dist, &params, 1), Ok(expected));

        // residual tie: same proposer twice, smallest digest
        let (ks, dist, mut tree) = setup(&[4, 4]);
        let a = candidate(&mut tree, &ks[0], 0);
        let b = candidate(&mut tree, &ks[0], 1);
        assert_eq!(resolve_slot(&BTreeSet::from([a, b]), &mut tree, &dist, &params, 1), Ok(a.min(b)));

        // rule iii
        let (_, dist, mut tree) = setup(&[4, 4]);
        let g = tree.head();
        let h = resolve_slot(&BTreeSet::new(), &mut tree, &dist, &params, 1).unwrap();
        let empty = tree.get(&h).unwrap();
        assert!(empty.is_empty_block());
        assert_eq!((empty.pre_hash, empty.height, empty.slot), (g, 1, 1));
        assert_eq!(tree.head(), h);
    }

    #[test]
    fn stale_candidate_is_a_protocol_violation() {
        let params = PocParams::default();
        let (ks, dist, mut tree) = setup(&[4, 4]);
        let a = candidate(&mut tree, &ks[0], 0);
        resolve_slot(&BTreeSet::from([a]), &mut tree, &dist, &params, 1).unwrap();
        assert_eq!(
            resolve_slot(&BTreeSet::from([a]), &mut tree, &dist, &params, 2),
            Err(PocError::ProtocolViolation(a))
        );
    }

    #[test]
    fn identical_candidates_keep_best_signer() {
        // at ξ = 1 every member passes with probability 1/2
        let params = PocParams::new(1).unwrap();
        let credits: Vec<u64> = (1..=16).collect();
        let (ks, dist, tree) = setup(&credits);
        let pool = crate::txpool::TxPool::new(10, 2);
        let passers: Vec<Block> = ks
            .iter()
            .filter_map(|k| {
                let ctx = ProposalContext { keys: k, tree: &tree, pool: &pool, dist: &dist, params: &params, max_tx: 10, roster: None };
                propose_block(&ctx, 1)
            })
            .collect();
        assert!(passers.len() >= 2);
        let (low, high) = (passers[0].clone(), passers[passers.len() - 1].clone());
        let winner = high.proposer;
        assert_eq!(low.digest(), high.digest());

        let mut t = tree.clone();
        let d = accept_block(low.clone(), &dist, &mut t, &params, 1).unwrap();
        assert_eq!(accept_block(high.clone(), &dist, &mut t, &params, 1), Ok(d));
        assert_eq!(t.get(&d).unwrap().proposer, winner);

        let mut t = tree.clone();
        accept_block(high, &dist, &mut t, &params, 1).unwrap();
        assert_eq!(accept_block(low, &dist, &mut t, &params, 1), Err(BlockRejection::Duplicate));
        assert_eq!(t.get(&d).unwrap().proposer, winner);
    }
}
