//! One dynasty change: registration, beacon randomness, credit-weighted
//! selection and the incentive step that rewards and slashes members.

use std::collections::BTreeMap;

use pocvcf::committee::{
    apply_incentives, beacon_round, honest_reveal, select_committee, CommitteeParams, Contribution, Registry,
};
use pocvcf::crypto::{hash, keygen};
use pocvcf::vcf::{accountable_offenders, Vote};

fn main() {
    let params = CommitteeParams { committee_size: 5, ..Default::default() };
    let mut registry = Registry::new(params);
    let keys: Vec<_> = (0..8).map(|i| keygen(format!("validator{i}").as_bytes()).unwrap()).collect();
    for (i, k) in keys.iter().enumerate() {
        registry.register_validator_with_credit(k.public(), 100, 5 + i as u64, 0).unwrap();
    }

    let dynasty = select_committee(&registry, hash(b"genesis beacon"), 5, 0, 0, 4).unwrap();
    let members: Vec<_> = dynasty.members.iter().map(|(pk, _)| *pk).collect();
    println!("dynasty 0: {:?}", dynasty.members);

    // every member but the last commits and reveals
    let by_pk: BTreeMap<_, _> = keys.iter().map(|k| (k.public(), k)).collect();
    let mut contributions = BTreeMap::new();
    for pk in &members[..members.len() - 1] {
        let reveal = honest_reveal(by_pk[pk], 1);
        contributions.insert(*pk, Contribution { commitment: Some(hash(&reveal.0)), reveal: Some(reveal) });
    }
    let beacon = beacon_round(&dynasty.randomness, &members, &contributions);
    println!("beacon {} flagged {:?}", beacon.randomness, beacon.flagged);

    // member 0 signs two targets at the same epoch height
    let k = by_pk[&members[0]];
    let votes = [
        Vote::new(k, hash(b"source"), hash(b"a"), 0, 1, 5),
        Vote::new(k, hash(b"source"), hash(b"b"), 0, 1, 5),
    ];
    let evidence = accountable_offenders(votes.iter());
    let outcome = apply_incentives(&dynasty, &mut registry, 40, &evidence);
    for c in &outcome.changes {
        println!(
            "{:?} {:?}: credit {} -> {}, stake {} -> {}",
            c.pk, c.reason, c.credit_before, c.credit_after, c.stake_before, c.stake_after
        );
    }

    let next = select_committee(&registry, beacon.randomness, 5, 1, 6, 4).unwrap();
    println!("dynasty 1: {:?}", next.members);
}
