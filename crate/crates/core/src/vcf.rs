//! Voting-based checkpoint finality.
//!
//! Dynasty members vote for a link `source -> target` between checkpoints.
//! A link backed by more than `T * K` members (default `T = 2/3`) whose
//! source is committed commits the target; when the target is the direct
//! checkpoint child of the source, the source also becomes finalized.
//!
//! Two voting rules are enforced:
//!
//! * rule 1: the target must sit one epoch above the source, descend from
//!   it, and match the epoch height of the validating node's head;
//! * rule 2: a voter may not sign two different targets at one epoch height.
//!
//! Only objective failures produce [`SlashingEvidence`]: equivocation, an
//! epoch gap other than one, a source that is not an ancestor of the target,
//! or declared epoch heights that disagree with the referenced blocks. A
//! mismatch against the local head alone is rejected without evidence.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{verify, Canonical, Digest, KeyPair, PublicKey, Signature};
use crate::ledger::{epoch_height_of, CheckpointTree, Slot};
use crate::poc::CreditDistribution;

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Vote {
    pub vote_hash: Digest,
    pub source: Digest,
    pub target: Digest,
    pub source_epoch: u64,
    pub target_epoch: u64,
    pub timestamp: Slot,
    pub voter: PublicKey,
    pub signature: Signature,
}

impl Vote {
    pub fn compute_hash(
        source: &Digest,
        target: &Digest,
        source_epoch: u64,
        target_epoch: u64,
        timestamp: Slot,
        voter: &PublicKey,
    ) -> Digest {
        Canonical::new()
            .digest(source)
            .digest(target)
            .u64(source_epoch)
            .u64(target_epoch)
            .u64(timestamp)
            .pk(voter)
            .hash()
    }

    fn signing_bytes(&self) -> Vec<u8> {
        Canonical::new()
            .digest(&self.vote_hash)
            .digest(&self.source)
            .digest(&self.target)
            .u64(self.source_epoch)
            .u64(self.target_epoch)
            .u64(self.timestamp)
            .pk(&self.voter)
            .finish()
    }

    pub fn new(
        keys: &KeyPair,
        source: Digest,
        target: Digest,
        source_epoch: u64,
        target_epoch: u64,
        timestamp: Slot,
    ) -> Vote {
        let voter = keys.public();
        let mut v = Vote {
            vote_hash: Self::compute_hash(&source, &target, source_epoch, target_epoch, timestamp, &voter),
            source,
            target,
            source_epoch,
            target_epoch,
            timestamp,
            voter,
            signature: Signature([0; 64]),
        };
        v.signature = keys.sign(&v.signing_bytes());
        v
    }

    pub fn is_well_signed(&self) -> bool {
        self.vote_hash
            == Self::compute_hash(
                &self.source,
                &self.target,
                self.source_epoch,
                self.target_epoch,
                self.timestamp,
                &self.voter,
            )
            && verify(&self.voter, &self.signing_bytes(), &self.signature)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    /// Target epoch is not source epoch + 1.
    EpochGap,
    /// Source is not an ancestor of the target.
    NotAncestor,
    /// Declared epoch heights disagree with the referenced checkpoints.
    EpochMismatch,
    /// Two different targets signed at one epoch height.
    Equivocation,
}

impl ViolationKind {
    pub fn rule(self) -> u8 {
        match self {
            ViolationKind::Equivocation => 2,
            _ => 1,
        }
    }
}

/// Signed votes proving a rule violation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlashingEvidence {
    pub offender: PublicKey,
    pub rule: u8,
    pub kind: ViolationKind,
    pub votes: Vec<Vote>,
}

impl SlashingEvidence {
    fn new(kind: ViolationKind, votes: Vec<Vote>) -> Self {
        SlashingEvidence { offender: votes[0].voter, rule: kind.rule(), kind, votes }
    }

    /// Replays the violated check on the contained votes. Ancestry and
    /// epoch-mismatch evidence needs the block tree the votes refer to.
    pub fn verify(&self, tree: Option<&CheckpointTree>) -> bool {
        if self.votes.iter().any(|v| v.voter != self.offender || !v.is_well_signed()) {
            return false;
        }
        if self.rule != self.kind.rule() {
            return false;
        }
        match (self.kind, self.votes.as_slice()) {
            (ViolationKind::Equivocation, [a, b]) => a.target_epoch == b.target_epoch && a.target != b.target,
            (ViolationKind::EpochGap, [v]) => v.target_epoch != v.source_epoch + 1,
            (ViolationKind::NotAncestor, [v]) => tree.is_some_and(|t| {
                t.contains(&v.source) && t.contains(&v.target) && !t.is_ancestor(&v.source, &v.target)
            }),
            (ViolationKind::EpochMismatch, [v]) => tree.is_some_and(|t| epochs_disagree(t, v) == Some(true)),
            _ => false,
        }
    }
}

fn epochs_disagree(tree: &CheckpointTree, v: &Vote) -> Option<bool> {
    let r = tree.epoch_size();
    let s = tree.get(&v.source)?;
    let t = tree.get(&v.target)?;
    Some(s.height != v.source_epoch * r || t.height != v.target_epoch * r)
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VoteRejection {
    #[error("voter is not a dynasty member")]
    NotMember,
    #[error("vote hash or signature does not verify")]
    BadSignature,
    #[error("voter was caught equivocating")]
    Offender,
    #[error("vote for this epoch height already received")]
    Duplicate,
    #[error("target epoch differs from the local head's epoch height")]
    StaleHead,
    #[error("referenced checkpoint never arrived")]
    UnknownCheckpoint,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum VoteVerdict {
    Valid,
    Invalid(VoteRejection),
    Violation(SlashingEvidence),
    /// Source or target not yet known; held for one slot.
    Pending,
}

impl VoteVerdict {
    pub fn label(&self) -> String {
        match self {
            VoteVerdict::Valid => "valid".into(),
            VoteVerdict::Invalid(r) => format!("invalid:{}", serde_json::to_value(r).unwrap().as_str().unwrap()),
            VoteVerdict::Violation(e) => format!("violation:rule{}", e.rule),
            VoteVerdict::Pending => "pending".into(),
        }
    }
}

/// Committee threshold fraction `num / den`; a link needs `tally > num/den * K`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Threshold {
    pub num: u64,
    pub den: u64,
}

impl Default for Threshold {
    fn default() -> Self {
        Threshold { num: 2, den: 3 }
    }
}

impl Threshold {
    pub fn exceeded(&self, tally: usize, committee_size: usize) -> bool {
        (tally as u128) * (self.den as u128) > (self.num as u128) * (committee_size as u128)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LinkVotes {
    pub source_epoch: u64,
    pub target_epoch: u64,
    pub voters: BTreeSet<PublicKey>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "change", content = "checkpoint", rename_all = "snake_case")]
pub enum FinalityChange {
    Committed(Digest),
    Finalized(Digest),
}

/// Per-node vote bookkeeping.
#[derive(Clone, Debug, Default)]
pub struct VoteLedger {
    links: BTreeMap<(Digest, Digest), LinkVotes>,
    by_voter: BTreeMap<PublicKey, BTreeSet<(Digest, u64)>>,
    // First signed vote seen per (voter, target epoch), for equivocation checks.
    seen: BTreeMap<(PublicKey, u64), Vote>,
    equivocators: BTreeSet<PublicKey>,
    evidence: Vec<SlashingEvidence>,
    pending: Vec<(Vote, Slot)>,
}

impl VoteLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn links(&self) -> &BTreeMap<(Digest, Digest), LinkVotes> {
        &self.links
    }

    /// Counted votes for a link, excluding equivocators.
    pub fn tally(&self, source: &Digest, target: &Digest) -> usize {
        self.links
            .get(&(*source, *target))
            .map(|l| l.voters.difference(&self.equivocators).count())
            .unwrap_or(0)
    }

    /// Targets a voter currently has counted, as `(target, target_epoch)`.
    pub fn counted_targets(&self, voter: &PublicKey) -> BTreeSet<(Digest, u64)> {
        if self.equivocators.contains(voter) {
            return BTreeSet::new();
        }
        self.by_voter.get(voter).cloned().unwrap_or_default()
    }

    pub fn evidence(&self) -> &[SlashingEvidence] {
        &self.evidence
    }

    pub fn equivocators(&self) -> &BTreeSet<PublicKey> {
        &self.equivocators
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    /// Removes and returns evidence gathered so far.
    pub fn drain_evidence(&mut self) -> Vec<SlashingEvidence> {
        std::mem::take(&mut self.evidence)
    }

    pub fn validate_vote(
        &mut self,
        v: &Vote,
        dynasty: &CreditDistribution,
        tree: &CheckpointTree,
        now: Slot,
    ) -> VoteVerdict {
        if !dynasty.contains(&v.voter) {
            return VoteVerdict::Invalid(VoteRejection::NotMember);
        }
        if !v.is_well_signed() {
            return VoteVerdict::Invalid(VoteRejection::BadSignature);
        }
        if self.equivocators.contains(&v.voter) {
            return VoteVerdict::Invalid(VoteRejection::Offender);
        }
        if v.target_epoch != v.source_epoch + 1 {
            return self.violation(ViolationKind::EpochGap, vec![v.clone()]);
        }
        let key = (v.voter, v.target_epoch);
        match self.seen.get(&key) {
            Some(prior) if prior.target != v.target => {
                let prior = prior.clone();
                self.equivocators.insert(v.voter);
                return self.violation(ViolationKind::Equivocation, vec![prior, v.clone()]);
            }
            Some(_) => return VoteVerdict::Invalid(VoteRejection::Duplicate),
            None => {
                self.seen.insert(key, v.clone());
            }
        }
        self.check_against_tree(v, tree, now)
    }

    fn violation(&mut self, kind: ViolationKind, votes: Vec<Vote>) -> VoteVerdict {
        let ev = SlashingEvidence::new(kind, votes);
        self.evidence.push(ev.clone());
        VoteVerdict::Violation(ev)
    }

    fn check_against_tree(&mut self, v: &Vote, tree: &CheckpointTree, now: Slot) -> VoteVerdict {
        match epochs_disagree(tree, v) {
            None => {
                self.pending.push((v.clone(), now));
                return VoteVerdict::Pending;
            }
            Some(true) => return self.violation(ViolationKind::EpochMismatch, vec![v.clone()]),
            Some(false) => {}
        }
        if !tree.is_ancestor(&v.source, &v.target) {
            return self.violation(ViolationKind::NotAncestor, vec![v.clone()]);
        }
        let head_epoch = epoch_height_of(tree.head_block().height, tree.epoch_size());
        if v.target_epoch != head_epoch {
            return VoteVerdict::Invalid(VoteRejection::StaleHead);
        }
        let link = self.links.entry((v.source, v.target)).or_insert_with(|| LinkVotes {
            source_epoch: v.source_epoch,
            target_epoch: v.target_epoch,
            voters: BTreeSet::new(),
        });
        link.voters.insert(v.voter);
        self.by_voter.entry(v.voter).or_default().insert((v.target, v.target_epoch));
        VoteVerdict::Valid
    }

    /// Re-examines buffered votes whose checkpoints may have arrived and
    /// drops those buffered for longer than one slot.
    pub fn retry_pending(&mut self, tree: &CheckpointTree, now: Slot) -> Vec<(Vote, VoteVerdict)> {
        let pending = std::mem::take(&mut self.pending);
        let mut out = Vec::new();
        for (v, received) in pending {
            if self.equivocators.contains(&v.voter) {
                out.push((v, VoteVerdict::Invalid(VoteRejection::Offender)));
                continue;
            }
            if epochs_disagree(tree, &v).is_none() {
                if now > received + 1 {
                    out.push((v, VoteVerdict::Invalid(VoteRejection::UnknownCheckpoint)));
                } else {
                    self.pending.push((v, received));
                }
                continue;
            }
            let verdict = self.check_against_tree(&v, tree, received.max(now));
            out.push((v, verdict));
        }
        out
    }
}

/// Commits and finalizes checkpoints from the current tallies.
pub fn tally_and_finalize(
    ledger: &VoteLedger,
    tree: &mut CheckpointTree,
    committee_size: usize,
    threshold: Threshold,
) -> Vec<FinalityChange> {
    let mut changes = Vec::new();
    loop {
        let mut progressed = false;
        for ((source, target), link) in &ledger.links {
            let tally = link.voters.difference(&ledger.equivocators).count();
            if !threshold.exceeded(tally, committee_size) || !tree.is_committed(source) || !tree.contains(target) {
                continue;
            }
            if tree.mark_committed(*target) {
                changes.push(FinalityChange::Committed(*target));
                progressed = true;
            }
            if link.target_epoch == link.source_epoch + 1
                && tree.is_ancestor(source, target)
                && tree.mark_finalized(*source)
            {
                changes.push(FinalityChange::Finalized(*source));
                progressed = true;
            }
        }
        if !progressed {
            return changes;
        }
    }
}

/// The vote an honest member casts from its current head, if any.
pub fn make_vote(keys: &KeyPair, tree: &CheckpointTree, now: Slot) -> Option<Vote> {
    let r = tree.epoch_size();
    let head = tree.head();
    let head_epoch = epoch_height_of(tree.head_block().height, r);
    let source = tree.last_committed_on_path(head);
    let source_epoch = epoch_height_of(tree.get(&source)?.height, r);
    if head_epoch != source_epoch + 1 {
        return None;
    }
    let target = tree.checkpoint_at_epoch(head, head_epoch)?;
    Some(Vote::new(keys, source, target, source_epoch, head_epoch, now))
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[error("finalized checkpoints {first} and {second} lie on distinct branches")]
pub struct SafetyViolation {
    pub first: Digest,
    pub second: Digest,
}

/// Checks that all finalized checkpoints lie on one root-to-head path.
pub fn check_conflicting_finality(tree: &CheckpointTree) -> Result<(), SafetyViolation> {
    let mut fin: Vec<_> = tree.finalized().iter().map(|d| (tree.get(d).map(|b| b.height), *d)).collect();
    fin.sort();
    for w in fin.windows(2) {
        let (lo, hi) = (w[0].1, w[1].1);
        if !tree.is_ancestor(&lo, &hi) {
            return Err(SafetyViolation { first: lo, second: hi });
        }
    }
    Ok(())
}

/// Forensic scan over any collection of votes: every voter who signed two
/// different targets at one epoch height, with the proving pair.
pub fn accountable_offenders<'a>(votes: impl IntoIterator<Item = &'a Vote>) -> Vec<SlashingEvidence> {
    let mut first: BTreeMap<(PublicKey, u64), &Vote> = BTreeMap::new();
    let mut found: BTreeMap<PublicKey, SlashingEvidence> = BTreeMap::new();
    for v in votes {
        if !v.is_well_signed() || found.contains_key(&v.voter) {
            continue;
        }
        match first.get(&(v.voter, v.target_epoch)) {
            Some(prior) if prior.target != v.target => {
                found.insert(
                    v.voter,
                    SlashingEvidence::new(ViolationKind::Equivocation, vec![(*prior).clone(), v.clone()]),
                );
            }
            Some(_) => {}
            None => {
                first.insert((v.voter, v.target_epoch), v);
            }
        }
    }
    found.into_values().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::keygen;
    use crate::ledger::{make_genesis, Block, DynastyDescriptor};

    /// A checkpoint tree with R = 3:
    /// main branch B0..B6 plus a fork B'1..B'3 off genesis.
    struct ForkTree {
        keys: Vec<KeyPair>,
        dist: CreditDistribution,
        tree: CheckpointTree,
        b0: Digest,
        b3: Digest,
        b3p: Digest,
        b6: Digest,
    }

    fn extend(tree: &mut CheckpointTree, mut parent: Digest, n: u64, slot_base: u64) -> Vec<Digest> {
        let mut out = Vec::new();
        for i in 0..n {
            let h = tree.get(&parent).unwrap().height;
            let b = Block::empty(parent, h, slot_base + h + 1 + i * 0);
            parent = tree.insert_block(b).unwrap();
            out.push(parent);
        }
        out
    }

    fn fork_tree(k: usize) -> ForkTree {
        let keys: Vec<_> = (0..k).map(|i| keygen(format!("voter{i}").as_bytes()).unwrap()).collect();
        let members: Vec<_> = keys.iter().map(|k| (k.public(), 1)).collect();
        let dist = CreditDistribution::new(members.clone()).unwrap();
        let g = make_genesis(&DynastyDescriptor { index: 0, members }).unwrap();
        let mut tree = CheckpointTree::new(g, 3).unwrap();
        let b0 = tree.genesis();
        let main = extend(&mut tree, b0, 6, 0);
        let fork = extend(&mut tree, b0, 3, 100);
        ForkTree { keys, dist, b0, b3: main[2], b6: main[5], b3p: fork[2], tree }
    }

    #[test]
    fn honest_vote_from_head() {
        let mut f = fork_tree(4);
        f.tree.set_head(f.b3);
        let v = make_vote(&f.keys[0], &f.tree, 4).unwrap();
        assert_eq!((v.source, v.target, v.source_epoch, v.target_epoch), (f.b0, f.b3, 0, 1));
        assert_eq!(make_vote(&f.keys[1], &f.tree, 4).map(|v| (v.source, v.target)), Some((f.b0, f.b3)));

        let mut ledger = VoteLedger::new();
        assert_eq!(ledger.validate_vote(&v, &f.dist, &f.tree, 4), VoteVerdict::Valid);
        assert_eq!(ledger.validate_vote(&v, &f.dist, &f.tree, 4), VoteVerdict::Invalid(VoteRejection::Duplicate));

        // head inside epoch 0: nothing to vote for
        let below = f.tree.ancestor_at_height(f.b3, 2).unwrap();
        f.tree.set_head(below);
        assert_eq!(make_vote(&f.keys[0], &f.tree, 4), None);
    }

    #[test]
    fn skipping_an_epoch_violates_rule_one() {
        let mut f = fork_tree(4);
        f.tree.set_head(f.b6);
        let v = Vote::new(&f.keys[0], f.b0, f.b6, 0, 2, 7);
        let mut ledger = VoteLedger::new();
        match ledger.validate_vote(&v, &f.dist, &f.tree, 7) {
            VoteVerdict::Violation(ev) => {
                assert_eq!((ev.rule, ev.kind), (1, ViolationKind::EpochGap));
                assert!(ev.verify(None));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn non_ancestor_source_violates_rule_one() {
        let mut f = fork_tree(4);
        f.tree.mark_committed(f.b3p);
        f.tree.set_head(f.b6);
        let v = Vote::new(&f.keys[1], f.b3p, f.b6, 1, 2, 7);
        let mut ledger = VoteLedger::new();
        match ledger.validate_vote(&v, &f.dist, &f.tree, 7) {
            VoteVerdict::Violation(ev) => {
                assert_eq!((ev.rule, ev.kind), (1, ViolationKind::NotAncestor));
                assert!(ev.verify(Some(&f.tree)));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn double_vote_violates_rule_two() {
        let mut f = fork_tree(4);
        f.tree.set_head(f.b3);
        let mut ledger = VoteLedger::new();
        let a = Vote::new(&f.keys[2], f.b0, f.b3, 0, 1, 4);
        let b = Vote::new(&f.keys[2], f.b0, f.b3p, 0, 1, 4);
        assert_eq!(ledger.validate_vote(&a, &f.dist, &f.tree, 4), VoteVerdict::Valid);
        assert_eq!(ledger.tally(&f.b0, &f.b3), 1);
        match ledger.validate_vote(&b, &f.dist, &f.tree, 4) {
            VoteVerdict::Violation(ev) => {
                assert_eq!((ev.rule, ev.offender), (2, f.keys[2].public()));
                assert_eq!(ev.votes, vec![a.clone(), b.clone()]);
                assert!(ev.verify(None));
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(ledger.tally(&f.b0, &f.b3), 0, "all of the voter's votes are discarded");
        assert!(ledger.counted_targets(&f.keys[2].public()).is_empty());
        assert_eq!(
            ledger.validate_vote(&a, &f.dist, &f.tree, 4),
            VoteVerdict::Invalid(VoteRejection::Offender)
        );
        assert_eq!(accountable_offenders([&a, &b]).len(), 1);
    }

    #[test]
    fn membership_signature_and_stale_head() {
        let mut f = fork_tree(4);
        f.tree.set_head(f.b3);
        let mut ledger = VoteLedger::new();
        let outsider = keygen(b"outsider").unwrap();
        let v = Vote::new(&outsider, f.b0, f.b3, 0, 1, 4);
        assert_eq!(ledger.validate_vote(&v, &f.dist, &f.tree, 4), VoteVerdict::Invalid(VoteRejection::NotMember));

        let mut forged = Vote::new(&f.keys[0], f.b0, f.b3, 0, 1, 4);
        forged.timestamp = 5;
        assert_eq!(
            ledger.validate_vote(&forged, &f.dist, &f.tree, 4),
            VoteVerdict::Invalid(VoteRejection::BadSignature)
        );

        let early = f.tree.ancestor_at_height(f.b3, 2).unwrap();
        f.tree.set_head(early);
        let v = Vote::new(&f.keys[0], f.b0, f.b3, 0, 1, 4);
        assert_eq!(ledger.validate_vote(&v, &f.dist, &f.tree, 4), VoteVerdict::Invalid(VoteRejection::StaleHead));
        assert!(ledger.evidence().is_empty(), "head mismatch alone is not slashable");
    }

    #[test]
    fn unknown_checkpoints_are_buffered_one_slot() {
        let mut f = fork_tree(4);
        f.tree.set_head(f.b3);
        let mut ledger = VoteLedger::new();
        let ghost = crate::crypto::hash(b"ghost");
        let v = Vote::new(&f.keys[0], f.b0, ghost, 0, 1, 4);
        assert_eq!(ledger.validate_vote(&v, &f.dist, &f.tree, 4), VoteVerdict::Pending);
        assert!(ledger.retry_pending(&f.tree, 5).is_empty());
        assert_eq!(ledger.pending_len(), 1);
        let out = ledger.retry_pending(&f.tree, 6);
        assert_eq!(out, vec![(v, VoteVerdict::Invalid(VoteRejection::UnknownCheckpoint))]);
    }

    #[test]
    fn threshold_arithmetic() {
        let t = Threshold::default();
        assert!(t.exceeded(3, 4));
        assert!(!t.exceeded(2, 4));
        assert!(t.exceeded(11, 16));
        assert!(!t.exceeded(10, 15));
    }

    fn cast(ledger: &mut VoteLedger, f: &ForkTree, voters: &[usize], s: Digest, t: Digest, se: u64, te: u64) {
        for &i in voters {
            let v = Vote::new(&f.keys[i], s, t, se, te, 10);
            assert_eq!(ledger.validate_vote(&v, &f.dist, &f.tree, 10), VoteVerdict::Valid);
        }
    }

    #[test]
    fn committed_majority_chain_finalizes() {
        let mut f = fork_tree(4);
        let mut ledger = VoteLedger::new();
        assert!(tally_and_finalize(&ledger, &mut f.tree, 4, Threshold::default()).is_empty());
        assert!(f.tree.is_finalized(&f.b0));

        f.tree.set_head(f.b3);
        cast(&mut ledger, &f, &[0, 1], f.b0, f.b3, 0, 1);
        assert!(tally_and_finalize(&ledger, &mut f.tree, 4, Threshold::default()).is_empty(), "2 of 4 is not enough");
        cast(&mut ledger, &f, &[2], f.b0, f.b3, 0, 1);
        assert_eq!(
            tally_and_finalize(&ledger, &mut f.tree, 4, Threshold::default()),
            vec![FinalityChange::Committed(f.b3)]
        );

        f.tree.set_head(f.b6);
        cast(&mut ledger, &f, &[0, 1, 3], f.b3, f.b6, 1, 2);
        let changes = tally_and_finalize(&ledger, &mut f.tree, 4, Threshold::default());
        assert_eq!(changes, vec![FinalityChange::Committed(f.b6), FinalityChange::Finalized(f.b3)]);
        assert!(f.tree.is_committed(&f.b6) && !f.tree.is_finalized(&f.b6));
        assert_eq!(check_conflicting_finality(&f.tree), Ok(()));
    }

    #[test]
    fn conflicting_finalized_checkpoints_are_detected() {
        let mut f = fork_tree(4);
        for d in [f.b3, f.b3p] {
            f.tree.mark_committed(d);
            f.tree.mark_finalized(d);
        }
        assert!(check_conflicting_finality(&f.tree).is_err());
    }
}
