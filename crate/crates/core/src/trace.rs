//! JSON-lines run trace. Every metric in a report is recomputed from these
//! records alone.
//!
//! Record kinds (field `kind`): `run`, `block`, `head`, `vote`, `evidence`,
//! `tx`, `tx_accept`, `final`, `msg_stats`, `slot_summary`, `dynasty`,
//! `stake_change`, `violation`.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::committee::StakeChange;
use crate::crypto::{Digest, PublicKey};
use crate::ledger::Slot;
use crate::vcf::{SlashingEvidence, Vote};

pub type Tick = u64;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunHeader {
    pub seed: u64,
    pub n_nodes: usize,
    pub committee_size: usize,
    pub epoch_size: u64,
    pub ticks_per_slot: u64,
    pub delta: u64,
    pub ticks_per_second: u64,
    pub slots: u64,
    pub payload_bytes: usize,
    pub honest: Vec<usize>,
    pub reference: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KindStats {
    pub sent: u64,
    pub dropped: u64,
    pub blocked: u64,
    /// Deliveries later than the slot end.
    pub late: u64,
    /// Latest delivery tick to an honest node among this slot's sends.
    pub last_honest_delivery: Option<Tick>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinalBlock {
    pub digest: Digest,
    pub height: u64,
    pub txs: Vec<Digest>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Record {
    Run(RunHeader),
    /// A node's verdict on a received (or own) block.
    Block {
        slot: Slot,
        tick: Tick,
        node: usize,
        digest: Digest,
        height: u64,
        proposer: Option<PublicKey>,
        status: String,
    },
    /// The reference node's head after a proposal slot or realignment.
    Head { slot: Slot, digest: Digest, height: u64, empty: bool, proposer: Option<PublicKey> },
    /// A node's verdict on a received (or own) vote, with the full signed vote.
    Vote {
        slot: Slot,
        tick: Tick,
        node: usize,
        #[serde(flatten)]
        vote: Vote,
        verdict: String,
    },
    Evidence { slot: Slot, node: usize, evidence: SlashingEvidence },
    Tx { slot: Slot, tick: Tick, tx: Digest, sender: PublicKey, entry: usize, accepted: bool },
    TxAccept { tick: Tick, node: usize, tx: Digest },
    /// Blocks that became final at the reference node.
    Final { slot: Slot, tick: Tick, head_height: u64, blocks: Vec<FinalBlock> },
    MsgStats { slot: Slot, kinds: BTreeMap<String, KindStats> },
    SlotSummary { slot: Slot, head_height: u64, state_hashes: Vec<(usize, Digest)>, agree: bool },
    Dynasty { slot: Slot, index: u64, randomness: Digest, members: Vec<(PublicKey, u64)>, flagged: Vec<PublicKey> },
    StakeChange { slot: Slot, change: StakeChange, distributed: u64, carried: u64 },
    Violation { slot: Slot, what: String, first: Digest, second: Digest, nodes: (usize, usize) },
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Trace {
    pub records: Vec<Record>,
}

impl Trace {
    pub fn push(&mut self, r: Record) {
        self.records.push(r);
    }

    pub fn header(&self) -> Option<&RunHeader> {
        self.records.iter().find_map(|r| match r {
            Record::Run(h) => Some(h),
            _ => None,
        })
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("json is utf-8")
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self, serde_json::Error> {
        let mut records = Vec::new();
        for line in r.lines() {
            let line = line.map_err(serde_json::Error::io)?;
            if !line.trim().is_empty() {
                records.push(serde_json::from_str(&line)?);
            }
        }
        Ok(Trace { records })
    }

    /// Every signed vote any node logged.
    pub fn votes(&self) -> impl Iterator<Item = &Vote> {
        self.records.iter().filter_map(|r| match r {
            Record::Vote { vote, .. } => Some(vote),
            _ => None,
        })
    }

    pub fn violations(&self) -> impl Iterator<Item = &Record> {
        self.records.iter().filter(|r| matches!(r, Record::Violation { .. }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::hash;

    #[test]
    fn jsonl_round_trip() {
        let mut t = Trace::default();
        t.push(Record::Head { slot: 3, digest: hash(b"h"), height: 3, empty: false, proposer: None });
        let k = crate::crypto::keygen(b"v").unwrap();
        let vote = Vote::new(&k, hash(b"s"), hash(b"t"), 0, 1, 4);
        t.push(Record::Vote { slot: 4, tick: 401, node: 2, vote, verdict: "valid".into() });
        t.push(Record::MsgStats { slot: 3, kinds: BTreeMap::from([("tx".into(), KindStats::default())]) });
        let text = t.to_jsonl();
        assert!(text.lines().next().unwrap().starts_with("{\"kind\":\"head\""));
        assert_eq!(Trace::read_jsonl(text.as_bytes()).unwrap(), t);
    }
}
