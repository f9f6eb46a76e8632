//! Validator registry, randomness beacon, dynasty selection and incentives.
//!
//! Selection is weighted sampling without replacement: each of `K` rounds
//! draws a 64-bit sortition score from `hash(randomness || round)` and maps
//! it onto the cumulative credit of the validators not yet chosen.
//!
//! The beacon is a commit-reveal fold. Members publish `hash(reveal)` first
//! and the reveal later; the output hashes the previous randomness together
//! with every reveal matching its commitment, in public-key order. A member
//! that withholds or mismatches is dropped from the fold and flagged. The last
//! member to reveal can still bias the output by withholding.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{hash, score64, verify, Canonical, Digest, KeyPair, PublicKey, Signature};
use crate::ledger::{DynastyDescriptor, Slot};
use crate::poc::CreditDistribution;
use crate::vcf::SlashingEvidence;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CommitteeError {
    #[error("public key already registered as a validator")]
    AlreadyRegistered,
    #[error("deposit {deposit} below the minimum {minimum}")]
    DepositTooSmall { deposit: u64, minimum: u64 },
    #[error("credit {0} above the cap")]
    CreditAboveCap(u64),
    #[error("no validator is eligible for the committee")]
    NoEligibleValidators,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CommitteeParams {
    pub c_max: u64,
    pub c_init: u64,
    pub min_deposit: u64,
    pub committee_size: usize,
}

impl Default for CommitteeParams {
    fn default() -> Self {
        CommitteeParams { c_max: 100, c_init: 10, min_deposit: 100, committee_size: 16 }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidatorRecord {
    pub pk: PublicKey,
    pub credit: u64,
    pub security_stake: u64,
    pub registered_at: Slot,
}

/// Registered users and validators. Validators are users too.
#[derive(Clone, Debug, Default)]
pub struct Registry {
    params: CommitteeParams,
    users: BTreeSet<PublicKey>,
    validators: BTreeMap<PublicKey, ValidatorRecord>,
    fee_carry: u64,
}

impl Registry {
    pub fn new(params: CommitteeParams) -> Self {
        Registry { params, ..Default::default() }
    }

    pub fn params(&self) -> &CommitteeParams {
        &self.params
    }

    pub fn users(&self) -> &BTreeSet<PublicKey> {
        &self.users
    }

    pub fn validators(&self) -> &BTreeMap<PublicKey, ValidatorRecord> {
        &self.validators
    }

    pub fn get(&self, pk: &PublicKey) -> Option<&ValidatorRecord> {
        self.validators.get(pk)
    }

    /// Fees left over from earlier dynasties.
    pub fn fee_carry(&self) -> u64 {
        self.fee_carry
    }

    /// Returns false if the user was already known.
    pub fn register_user(&mut self, pk: PublicKey) -> bool {
        self.users.insert(pk)
    }

    pub fn register_validator(
        &mut self,
        pk: PublicKey,
        deposit: u64,
        now: Slot,
    ) -> Result<ValidatorRecord, CommitteeError> {
        self.register_validator_with_credit(pk, deposit, self.params.c_init, now)
    }

    /// Registration with an explicit starting credit, for scenarios that
    /// begin from a non-uniform credit distribution.
    pub fn register_validator_with_credit(
        &mut self,
        pk: PublicKey,
        deposit: u64,
        credit: u64,
        now: Slot,
    ) -> Result<ValidatorRecord, CommitteeError> {
        if self.validators.contains_key(&pk) {
            return Err(CommitteeError::AlreadyRegistered);
        }
        if deposit < self.params.min_deposit {
            return Err(CommitteeError::DepositTooSmall { deposit, minimum: self.params.min_deposit });
        }
        if credit > self.params.c_max {
            return Err(CommitteeError::CreditAboveCap(credit));
        }
        let rec = ValidatorRecord { pk, credit, security_stake: deposit, registered_at: now };
        self.users.insert(pk);
        self.validators.insert(pk, rec.clone());
        Ok(rec)
    }

    pub fn is_eligible(&self, rec: &ValidatorRecord) -> bool {
        rec.security_stake >= self.params.min_deposit && rec.credit >= 1
    }

    /// Eligible validators in public-key order.
    pub fn eligible(&self) -> impl Iterator<Item = &ValidatorRecord> {
        self.validators.values().filter(|r| self.is_eligible(r))
    }
}

/// The active final committee.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dynasty {
    pub index: u64,
    pub start_slot: Slot,
    pub randomness: Digest,
    pub epoch_size: u64,
    pub committee_size: usize,
    /// Members with their credit at selection time, ordered by public key.
    pub members: Vec<(PublicKey, u64)>,
}

impl Dynasty {
    /// The initial dynasty as recorded in genesis.
    pub fn from_descriptor(d: &DynastyDescriptor, epoch_size: u64) -> Self {
        let mut members = d.members.clone();
        members.sort();
        Dynasty {
            index: d.index,
            start_slot: 0,
            randomness: Digest::ZERO,
            epoch_size,
            committee_size: members.len(),
            members,
        }
    }

    pub fn descriptor(&self) -> DynastyDescriptor {
        DynastyDescriptor { index: self.index, members: self.members.clone() }
    }

    pub fn distribution(&self) -> CreditDistribution {
        CreditDistribution::new(self.members.clone()).expect("selected members carry positive credit")
    }

    pub fn contains(&self, pk: &PublicKey) -> bool {
        self.members.binary_search_by(|(m, _)| m.cmp(pk)).is_ok()
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

pub fn select_committee(
    registry: &Registry,
    randomness: Digest,
    committee_size: usize,
    index: u64,
    start_slot: Slot,
    epoch_size: u64,
) -> Result<Dynasty, CommitteeError> {
    let mut pool: Vec<(PublicKey, u64)> = registry.eligible().map(|r| (r.pk, r.credit)).collect();
    if pool.is_empty() {
        return Err(CommitteeError::NoEligibleValidators);
    }
    let mut members = Vec::with_capacity(committee_size.min(pool.len()));
    for round in 0..committee_size.min(pool.len()) as u64 {
        let total: u64 = pool.iter().map(|(_, c)| c).sum();
        let u = score64(&randomness, &round.to_be_bytes());
        let point = ((u as u128 * total as u128) >> 64) as u64;
        let mut acc = 0;
        let pick = pool
            .iter()
            .position(|(_, c)| {
                acc += c;
                point < acc
            })
            .expect("point < total");
        members.push(pool.remove(pick));
    }
    members.sort();
    Ok(Dynasty { index, start_slot, randomness, epoch_size, committee_size, members })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BeaconPhase {
    Commit,
    Reveal,
}

/// A signed beacon contribution: a commitment or the matching reveal.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BeaconShare {
    pub dynasty_index: u64,
    pub member: PublicKey,
    pub phase: BeaconPhase,
    pub value: Digest,
    pub signature: Signature,
}

impl BeaconShare {
    fn signing_bytes(index: u64, member: &PublicKey, phase: BeaconPhase, value: &Digest) -> Vec<u8> {
        let tag: &[u8] = match phase {
            BeaconPhase::Commit => b"commit",
            BeaconPhase::Reveal => b"reveal",
        };
        Canonical::new().bytes(tag).u64(index).pk(member).digest(value).finish()
    }

    pub fn new(keys: &KeyPair, dynasty_index: u64, phase: BeaconPhase, value: Digest) -> Self {
        let member = keys.public();
        let signature = keys.sign(&Self::signing_bytes(dynasty_index, &member, phase, &value));
        BeaconShare { dynasty_index, member, phase, value, signature }
    }

    pub fn is_well_signed(&self) -> bool {
        verify(
            &self.member,
            &Self::signing_bytes(self.dynasty_index, &self.member, self.phase, &self.value),
            &self.signature,
        )
    }
}

/// An honest member's secret for dynasty `index`: unpredictable to others,
/// reproducible by the member.
pub fn honest_reveal(keys: &KeyPair, index: u64) -> Digest {
    hash(&keys.sign(&Canonical::new().bytes(b"beacon").u64(index).finish()).0)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Contribution {
    pub commitment: Option<Digest>,
    pub reveal: Option<Digest>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BeaconOutput {
    pub randomness: Digest,
    /// Members that committed but withheld or mismatched their reveal, or
    /// never committed.
    pub flagged: Vec<PublicKey>,
}

pub fn beacon_round(
    previous: &Digest,
    members: &[PublicKey],
    contributions: &BTreeMap<PublicKey, Contribution>,
) -> BeaconOutput {
    let mut ordered: Vec<_> = members.to_vec();
    ordered.sort();
    ordered.dedup();
    let mut c = Canonical::new().digest(previous);
    let mut flagged = Vec::new();
    for pk in ordered {
        match contributions.get(&pk) {
            Some(Contribution { commitment: Some(cm), reveal: Some(rv) }) if hash(&rv.0) == *cm => {
                c = c.digest(rv);
            }
            _ => flagged.push(pk),
        }
    }
    BeaconOutput { randomness: c.hash(), flagged }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StakeReason {
    Reward,
    Slash,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StakeChange {
    pub pk: PublicKey,
    pub reason: StakeReason,
    pub credit_before: u64,
    pub credit_after: u64,
    pub stake_before: u64,
    pub stake_after: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IncentiveOutcome {
    pub changes: Vec<StakeChange>,
    pub distributed: u64,
    pub carried: u64,
    /// Evidence items naming someone outside the dynasty.
    pub rejected_evidence: usize,
}

/// Rewards honest members of a finished dynasty and slashes offenders.
/// `fee_pool` is added to fees carried from earlier dynasties.
pub fn apply_incentives(
    dynasty: &Dynasty,
    registry: &mut Registry,
    fee_pool: u64,
    evidence: &[SlashingEvidence],
) -> IncentiveOutcome {
    let mut out = IncentiveOutcome::default();
    let mut offenders = BTreeSet::new();
    for ev in evidence {
        if dynasty.contains(&ev.offender) {
            offenders.insert(ev.offender);
        } else {
            out.rejected_evidence += 1;
        }
    }
    let honest: Vec<PublicKey> = dynasty
        .members
        .iter()
        .map(|(pk, _)| *pk)
        .filter(|pk| !offenders.contains(pk) && registry.validators.contains_key(pk))
        .collect();
    let pool = fee_pool + registry.fee_carry;
    let share = if honest.is_empty() { 0 } else { pool / honest.len() as u64 };
    out.distributed = share * honest.len() as u64;
    out.carried = pool - out.distributed;
    registry.fee_carry = out.carried;

    let c_max = registry.params.c_max;
    for pk in &offenders {
        if let Some(rec) = registry.validators.get_mut(pk) {
            let before = (rec.credit, rec.security_stake);
            rec.security_stake = 0;
            rec.credit = rec.credit.saturating_sub(1);
            out.changes.push(StakeChange {
                pk: *pk,
                reason: StakeReason::Slash,
                credit_before: before.0,
                credit_after: rec.credit,
                stake_before: before.1,
                stake_after: 0,
            });
        }
    }
    for pk in &honest {
        let rec = registry.validators.get_mut(pk).expect("filtered above");
        let before = (rec.credit, rec.security_stake);
        rec.credit = (rec.credit + 1).min(c_max);
        rec.security_stake += share;
        out.changes.push(StakeChange {
            pk: *pk,
            reason: StakeReason::Reward,
            credit_before: before.0,
            credit_after: rec.credit,
            stake_before: before.1,
            stake_after: rec.security_stake,
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::keygen;
    use crate::vcf::{Vote, ViolationKind};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pk(i: usize) -> PublicKey {
        keygen(format!("val{i}").as_bytes()).unwrap().public()
    }

    fn registry_with(credits: &[u64]) -> Registry {
        let mut r = Registry::new(CommitteeParams::default());
        for (i, c) in credits.iter().enumerate() {
            r.register_validator_with_credit(pk(i), 100, *c, 0).unwrap();
        }
        r
    }

    #[test]
    fn registration_rules() {
        let mut r = Registry::new(CommitteeParams::default());
        let rec = r.register_validator(pk(0), 100, 3).unwrap();
        assert_eq!((rec.credit, rec.security_stake, rec.registered_at), (10, 100, 3));
        assert!(r.users().contains(&pk(0)));
        assert_eq!(r.register_validator(pk(0), 100, 4), Err(CommitteeError::AlreadyRegistered));
        assert_eq!(
            r.register_validator(pk(1), 99, 4),
            Err(CommitteeError::DepositTooSmall { deposit: 99, minimum: 100 })
        );
    }

    #[test]
    fn selection_edges() {
        let r = registry_with(&[5, 7, 9]);
        let d = select_committee(&r, hash(b"x"), 16, 1, 0, 10).unwrap();
        assert_eq!(d.len(), 3);
        let single = registry_with(&[4]);
        assert_eq!(select_committee(&single, hash(b"y"), 16, 1, 0, 10).unwrap().len(), 1);
        let none = Registry::new(CommitteeParams::default());
        assert_eq!(select_committee(&none, hash(b"z"), 4, 1, 0, 10), Err(CommitteeError::NoEligibleValidators));
    }

    #[test]
    fn zero_credit_never_selected_and_selection_is_pure() {
        let r = registry_with(&[0, 3, 0, 5, 1, 0, 2]);
        for t in 0..200u64 {
            let rnd = hash(&t.to_be_bytes());
            let d = select_committee(&r, rnd, 3, 1, 0, 10).unwrap();
            assert!(d.members.iter().all(|(_, c)| *c > 0));
            assert_eq!(d, select_committee(&r.clone(), rnd, 3, 1, 0, 10).unwrap());
        }
    }

    /// Inclusion frequency against an independent weighted-sampling oracle
    /// driven by a floating-point RNG.
    #[test]
    fn inclusion_matches_sampling_oracle() {
        let n = 100;
        let k = 16;
        let credits: Vec<u64> = (1..=n as u64).collect();
        let r = registry_with(&credits);
        let index_of: BTreeMap<PublicKey, usize> = (0..n).map(|i| (pk(i), i)).collect();

        let trials = 10_000;
        let mut observed = vec![0u32; n];
        for t in 0..trials as u64 {
            let d = select_committee(&r, hash(&t.to_be_bytes()), k, 1, 0, 10).unwrap();
            for (p, _) in &d.members {
                observed[index_of[p]] += 1;
            }
        }

        let oracle_trials = 200_000;
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut expected = vec![0u32; n];
        for _ in 0..oracle_trials {
            let mut w: Vec<f64> = credits.iter().map(|&c| c as f64).collect();
            for _ in 0..k {
                let total: f64 = w.iter().sum();
                let mut x = rng.gen::<f64>() * total;
                let mut pick = n - 1;
                for (i, wi) in w.iter().enumerate() {
                    if x < *wi {
                        pick = i;
                        break;
                    }
                    x -= wi;
                }
                expected[pick] += 1;
                w[pick] = 0.0;
            }
        }

        for i in 0..n {
            let p = expected[i] as f64 / oracle_trials as f64;
            let q = observed[i] as f64 / trials as f64;
            let sigma = (p * (1.0 - p) / trials as f64 + p * (1.0 - p) / oracle_trials as f64).sqrt();
            assert!((q - p).abs() <= 3.0 * sigma.max(1e-9), "validator {i}: {q} vs {p} (σ={sigma})");
        }
    }

    fn commit_reveal(members: &[KeyPair], index: u64) -> BTreeMap<PublicKey, Contribution> {
        members
            .iter()
            .map(|k| {
                let rv = honest_reveal(k, index);
                (k.public(), Contribution { commitment: Some(hash(&rv.0)), reveal: Some(rv) })
            })
            .collect()
    }

    #[test]
    fn beacon_round_behaviour() {
        let keys: Vec<_> = (0..4).map(|i| keygen(format!("b{i}").as_bytes()).unwrap()).collect();
        let members: Vec<_> = keys.iter().map(|k| k.public()).collect();
        let mut contrib = commit_reveal(&keys, 1);
        let a = beacon_round(&Digest::ZERO, &members, &contrib);
        let mut rev = members.clone();
        rev.reverse();
        assert_eq!(a, beacon_round(&Digest::ZERO, &rev, &contrib));
        assert!(a.flagged.is_empty());

        let mut flipped = contrib.clone();
        let e = flipped.get_mut(&members[2]).unwrap();
        let mut rv = e.reveal.unwrap();
        rv.0[0] ^= 1;
        e.reveal = Some(rv);
        let b = beacon_round(&Digest::ZERO, &members, &flipped);
        assert_ne!(a.randomness, b.randomness);
        assert_eq!(b.flagged, vec![members[2]]);

        contrib.get_mut(&members[1]).unwrap().reveal = None;
        let c = beacon_round(&Digest::ZERO, &members, &contrib);
        assert_eq!(c.flagged, vec![members[1]]);
        assert_ne!(c.randomness, a.randomness);
    }

    #[test]
    fn reveal_bit_flip_avalanche() {
        let keys: Vec<_> = (0..4).map(|i| keygen(format!("b{i}").as_bytes()).unwrap()).collect();
        let members: Vec<_> = keys.iter().map(|k| k.public()).collect();
        let base = beacon_round(&Digest::ZERO, &members, &commit_reveal(&keys, 1)).randomness;
        let mut total = 0u32;
        for bit in 0..256 {
            let mut c = commit_reveal(&keys, 1);
            let e = c.get_mut(&members[0]).unwrap();
            let mut rv = e.reveal.unwrap();
            rv.0[bit / 8] ^= 1 << (bit % 8);
            e.reveal = Some(rv);
            e.commitment = Some(hash(&rv.0));
            let out = beacon_round(&Digest::ZERO, &members, &c).randomness;
            total += base.xor(&out).0.iter().map(|b| b.count_ones()).sum::<u32>();
        }
        let mean = total as f64 / 256.0;
        assert!((mean - 128.0).abs() < 4.0, "mean flipped bits {mean}");
    }

    #[test]
    fn beacon_share_signatures() {
        let k = keygen(b"s").unwrap();
        let s = BeaconShare::new(&k, 2, BeaconPhase::Commit, hash(b"v"));
        assert!(s.is_well_signed());
        let mut t = s.clone();
        t.phase = BeaconPhase::Reveal;
        assert!(!t.is_well_signed());
    }

    fn dynasty_of(r: &Registry, n: usize) -> Dynasty {
        select_committee(r, hash(b"d"), n, 1, 0, 3).unwrap()
    }

    fn equivocation(keys: &KeyPair) -> SlashingEvidence {
        let a = Vote::new(keys, Digest::ZERO, hash(b"t1"), 0, 1, 1);
        let b = Vote::new(keys, Digest::ZERO, hash(b"t2"), 0, 1, 1);
        let ev = crate::vcf::accountable_offenders([&a, &b]).pop().unwrap();
        assert_eq!(ev.kind, ViolationKind::Equivocation);
        ev
    }

    #[test]
    fn equal_split_without_evidence() {
        let mut r = registry_with(&[10, 10, 10, 10]);
        let d = dynasty_of(&r, 4);
        let out = apply_incentives(&d, &mut r, 8, &[]);
        assert_eq!((out.distributed, out.carried), (8, 0));
        for rec in r.validators().values() {
            assert_eq!((rec.credit, rec.security_stake), (11, 102));
        }
    }

    #[test]
    fn offender_slashed_honest_rewarded() {
        let keys: Vec<_> = (0..4).map(|i| keygen(format!("val{i}").as_bytes()).unwrap()).collect();
        let mut r = registry_with(&[10, 10, 10, 10]);
        let d = dynasty_of(&r, 4);
        let out = apply_incentives(&d, &mut r, 9, &[equivocation(&keys[1])]);
        assert_eq!(out.carried, 0);
        for (i, k) in keys.iter().enumerate() {
            let rec = r.get(&k.public()).unwrap();
            if i == 1 {
                assert_eq!((rec.credit, rec.security_stake), (9, 0));
            } else {
                assert_eq!((rec.credit, rec.security_stake), (11, 103));
            }
        }
    }

    #[test]
    fn cap_carry_and_foreign_evidence() {
        let mut r = registry_with(&[100, 10, 10]);
        let d = dynasty_of(&r, 3);
        let outsider = keygen(b"outsider").unwrap();
        let out = apply_incentives(&d, &mut r, 10, &[equivocation(&outsider)]);
        assert_eq!(out.rejected_evidence, 1);
        assert_eq!((out.distributed, out.carried), (9, 1));
        assert_eq!(r.get(&pk(0)).unwrap().credit, 100);
        assert_eq!(r.fee_carry(), 1);
        let out = apply_incentives(&d, &mut r, 2, &[]);
        assert_eq!((out.distributed, out.carried), (3, 0));
    }

    #[test]
    fn slashed_validator_loses_eligibility() {
        let keys: Vec<_> = (0..4).map(|i| keygen(format!("val{i}").as_bytes()).unwrap()).collect();
        let mut r = registry_with(&[10, 10, 10, 10]);
        let d = dynasty_of(&r, 4);
        apply_incentives(&d, &mut r, 0, &[equivocation(&keys[0])]);
        assert_eq!(r.eligible().count(), 3);
        let next = select_committee(&r, hash(b"n"), 4, 2, 0, 3).unwrap();
        assert!(!next.contains(&keys[0].public()));
    }
}
