//! Checkpoint voting on a small tree with epoch size 3.
//!
//! Four members vote the genesis-to-B3 link, then the B3-to-B6 link, which
//! finalizes B3. A member that then votes for a competing checkpoint at the
//! same epoch height produces slashing evidence.

use std::collections::BTreeSet;

use pocvcf::crypto::keygen;
use pocvcf::ledger::{make_genesis, Block, CheckpointTree, DynastyDescriptor};
use pocvcf::poc::{resolve_slot, CreditDistribution, PocParams};
use pocvcf::vcf::{make_vote, tally_and_finalize, Threshold, Vote, VoteLedger, VoteVerdict};

fn main() {
    let keys: Vec<_> = (0..4).map(|i| keygen(format!("voter{i}").as_bytes()).unwrap()).collect();
    let members: Vec<_> = keys.iter().map(|k| (k.public(), 1)).collect();
    let dist = CreditDistribution::new(members.clone()).unwrap();
    let params = PocParams::new(16).unwrap();
    let genesis = make_genesis(&DynastyDescriptor { index: 0, members }).unwrap();
    let mut tree = CheckpointTree::new(genesis, 3).unwrap();

    // a fork off genesis that never becomes the head
    let mut fork = tree.genesis();
    for h in 0..3 {
        fork = tree.insert_block(Block::empty(fork, h, 100 + h)).unwrap();
    }

    let mut ledger = VoteLedger::new();
    let mut slot = 0;
    for epoch in 1..=2 {
        for _ in 0..3 {
            slot += 1;
            resolve_slot(&BTreeSet::new(), &mut tree, &dist, &params, slot).unwrap();
        }
        slot += 1;
        for k in &keys {
            let v = make_vote(k, &tree, slot).unwrap();
            assert_eq!(ledger.validate_vote(&v, &dist, &tree, slot), VoteVerdict::Valid);
        }
        for change in tally_and_finalize(&ledger, &mut tree, keys.len(), Threshold::default()) {
            println!("epoch {epoch}: {change:?}");
        }
    }
    println!("highest finalized {}", tree.highest_finalized());

    let v = Vote::new(&keys[3], tree.genesis(), fork, 0, 1, slot);
    match ledger.validate_vote(&v, &dist, &tree, slot) {
        VoteVerdict::Violation(ev) => {
            println!("rule {} violation by {} ({:?}), evidence verifies: {}", ev.rule, ev.offender, ev.kind, ev.verify(Some(&tree)));
        }
        other => println!("unexpected verdict {other:?}"),
    }
}
