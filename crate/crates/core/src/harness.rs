//! Scenario files, metrics, sweeps and report emission.
//!
//! Metrics are computed from a [`Trace`] only, so a report can be rebuilt
//! from `trace.jsonl` alone.
//!
//! Latencies, in ticks:
//!
//! * `t_ct`: transaction broadcast until the last honest node admits it;
//! * `t_bp`: proposal slot begin until the last honest node accepts the
//!   winning block (empty slots skipped);
//! * `t_cf`: finality slot begin until the last finality message reaches an
//!   honest node;
//! * `t_bc = (t_cf + t_bp * R) / R`.
//!
//! Throughput is finalized payload bytes per simulated hour.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use thiserror::Error;

use crate::committee::CommitteeParams;
use crate::crypto::{Digest, PublicKey};
use crate::netsim::{run, AdversarySpec, Medium, Partition, SimConfig, SimOutcome, Workload};
use crate::node::{phase_of, NodeConfig, Phase};
use crate::poc::PocParams;
use crate::trace::{Record, RunHeader, Trace};
use crate::vcf::{accountable_offenders, SlashingEvidence, Threshold};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_ASSERTION: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_SAFETY: i32 = 3;
pub const EXIT_LIVENESS: i32 = 4;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{path}: {msg}")]
    Config { path: String, msg: String },
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config { .. } => EXIT_CONFIG,
            HarnessError::Io { .. } => EXIT_CONFIG,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.display().to_string(), source }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolSection {
    pub epoch_size: u64,
    pub difficulty_bits: u32,
    pub threshold: [u64; 2],
    pub max_tx_per_block: usize,
    pub pool_capacity: usize,
    pub kappa: usize,
    pub static_dynasty: bool,
}

impl Default for ProtocolSection {
    fn default() -> Self {
        let n = NodeConfig::default();
        ProtocolSection {
            epoch_size: n.epoch_size,
            difficulty_bits: n.poc.difficulty_bits,
            threshold: [n.threshold.num, n.threshold.den],
            max_tx_per_block: n.max_tx_per_block,
            pool_capacity: n.pool_capacity,
            kappa: n.kappa,
            static_dynasty: false,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CommitteeSection {
    pub size: usize,
    pub c_max: u64,
    pub c_init: u64,
    pub min_deposit: u64,
}

impl Default for CommitteeSection {
    fn default() -> Self {
        let c = CommitteeParams::default();
        CommitteeSection { size: c.committee_size, c_max: c.c_max, c_init: c.c_init, min_deposit: c.min_deposit }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSection {
    /// Registered validators; defaults to the committee size.
    pub nodes: Option<usize>,
    pub ticks_per_slot: u64,
    pub delta: u64,
    pub ticks_per_second: u64,
    pub drop_rate: f64,
    pub medium: Option<Medium>,
}

impl Default for NetworkSection {
    fn default() -> Self {
        NetworkSection { nodes: None, ticks_per_slot: 100, delta: 100, ticks_per_second: 100, drop_rate: 0.0, medium: None }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidatorsSection {
    pub credits: Vec<u64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AssertSection {
    pub safety: bool,
    pub liveness: bool,
    pub fairness: bool,
    pub complexity: bool,
    /// Longest admissible wait, in slots, from pool admission to the slot
    /// whose finality record includes the transaction; defaults to `2R`.
    pub liveness_slots: Option<u64>,
    /// Fairness tolerance in standard deviations.
    pub fairness_sigmas: f64,
    pub fairness_min_p: f64,
}

impl Default for AssertSection {
    fn default() -> Self {
        AssertSection {
            safety: true,
            liveness: false,
            fairness: false,
            complexity: false,
            liveness_slots: None,
            fairness_sigmas: 4.0,
            fairness_min_p: 0.001,
        }
    }
}

/// A scenario file.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Number of epochs (each `R + 2` slots).
    pub epochs: u64,
    #[serde(default)]
    pub abort_on_violation: bool,
    #[serde(default)]
    pub protocol: ProtocolSection,
    #[serde(default)]
    pub committee: CommitteeSection,
    #[serde(default)]
    pub network: NetworkSection,
    #[serde(default)]
    pub validators: ValidatorsSection,
    #[serde(default)]
    pub workload: Workload,
    #[serde(default)]
    pub adversary: Vec<AdversarySpec>,
    #[serde(default)]
    pub partition: Vec<Partition>,
    #[serde(default, rename = "assert")]
    pub asserts: AssertSection,
}

fn default_seed() -> u64 {
    1
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_toml(&text).map_err(|msg| HarnessError::Config { path: path.display().to_string(), msg })
    }

    pub fn sim_config(&self) -> Result<SimConfig, String> {
        let p = &self.protocol;
        let poc = PocParams::new(p.difficulty_bits).map_err(|e| format!("protocol.difficulty_bits: {e}"))?;
        if p.threshold[1] == 0 || p.threshold[0] > p.threshold[1] {
            return Err("protocol.threshold: expected [num, den] with 0 <= num <= den, den > 0".into());
        }
        if p.kappa == 0 || p.pool_capacity == 0 {
            return Err("protocol.kappa and protocol.pool_capacity must be positive".into());
        }
        let committee = CommitteeParams {
            c_max: self.committee.c_max,
            c_init: self.committee.c_init,
            min_deposit: self.committee.min_deposit,
            committee_size: self.committee.size,
        };
        let net = &self.network;
        let cfg = SimConfig {
            seed: self.seed,
            n_nodes: net.nodes.unwrap_or(self.committee.size),
            credits: self.validators.credits.clone(),
            node: NodeConfig {
                epoch_size: p.epoch_size,
                poc,
                threshold: Threshold { num: p.threshold[0], den: p.threshold[1] },
                committee,
                max_tx_per_block: p.max_tx_per_block,
                pool_capacity: p.pool_capacity,
                kappa: p.kappa,
                static_dynasty: p.static_dynasty,
            },
            slots: SimConfig::slots_for_epochs(p.epoch_size, self.epochs),
            ticks_per_slot: net.ticks_per_slot,
            delta: net.delta,
            ticks_per_second: net.ticks_per_second,
            medium: net.medium.clone().unwrap_or(Medium::Independent { min_delay: 1, max_delay: net.delta }),
            drop_rate: net.drop_rate,
            workload: self.workload.clone(),
            adversaries: self.adversary.clone(),
            partitions: self.partition.clone(),
            abort_on_violation: self.abort_on_violation,
        };
        cfg.validate().map_err(|e| e.to_string())?;
        Ok(cfg)
    }

    /// Applies `name=value` from a sweep. Supported names: `K` (committee
    /// size and node count), `R`, `nodes`, `payload`, `tx_per_slot`, `seed`,
    /// `epochs`.
    pub fn with_param(&self, name: &str, value: u64) -> Result<Scenario, String> {
        let mut s = self.clone();
        match name {
            "K" => {
                s.committee.size = value as usize;
                s.network.nodes = Some(value as usize);
            }
            "R" => s.protocol.epoch_size = value,
            "nodes" => s.network.nodes = Some(value as usize),
            "payload" => s.workload.payload_bytes = value as usize,
            "tx_per_slot" => s.workload.tx_per_slot = value as usize,
            "seed" => s.seed = value,
            "epochs" => s.epochs = value,
            other => return Err(format!("unknown sweep parameter {other:?}")),
        }
        Ok(s)
    }
}

/// Verdict of one assertion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub pass: bool,
    pub detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Verdict { pass, detail: detail.into() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FairnessRow {
    pub proposer: String,
    pub credit: u64,
    pub wins: u64,
    pub share: f64,
    pub expected: f64,
    pub z: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FairnessTable {
    pub slots: u64,
    pub rows: Vec<FairnessRow>,
    pub empty_share: f64,
    pub empty_expected: f64,
    pub chi_squared: f64,
    pub p_value: f64,
    pub max_abs_z: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub seed: u64,
    pub committee_size: usize,
    pub epoch_size: u64,
    pub slots: u64,
    pub t_ct: Option<f64>,
    pub t_bp: Option<f64>,
    pub t_cf: Option<f64>,
    pub t_bc: Option<f64>,
    /// Finalized payload bytes per simulated hour.
    pub throughput: f64,
    pub msg_counts: BTreeMap<String, u64>,
    /// Mean transaction messages sent per admitted transaction broadcast.
    pub tx_msgs_per_tx: Option<f64>,
    /// Largest number of finality messages sent in one finality slot.
    pub finality_msgs_per_round: u64,
    pub late_messages: u64,
    /// Checkpoints newly finalized in each epoch, at the reference node.
    pub finalized_per_epoch: Vec<u64>,
    pub finalized_txs: u64,
    pub submitted_txs: u64,
    /// Longest observed wait, in slots, from pool admission to finalization.
    pub max_tx_finality_slots: Option<u64>,
    /// Admitted transactions still not final when the run ended, despite
    /// having had the full liveness window.
    pub overdue_txs: u64,
    pub evidence: u64,
    pub safety_violations: u64,
    pub state_hash_disagreements: u64,
}

fn header(trace: &Trace) -> &RunHeader {
    trace.header().expect("trace starts with a run header")
}

pub fn compute_throughput(trace: &Trace, payload_size: usize) -> f64 {
    let h = header(trace);
    let finalized: u64 = trace
        .records
        .iter()
        .map(|r| match r {
            Record::Final { blocks, .. } => blocks.iter().map(|b| b.txs.len() as u64).sum(),
            _ => 0,
        })
        .sum();
    let seconds = (h.slots * h.ticks_per_slot) as f64 / h.ticks_per_second as f64;
    if seconds == 0.0 {
        return 0.0;
    }
    finalized as f64 * payload_size as f64 * 3600.0 / seconds
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

pub fn compute_metrics(trace: &Trace, liveness_slots: Option<u64>) -> MetricsReport {
    let h = header(trace);
    let r = h.epoch_size;
    let l = h.ticks_per_slot;
    let n_honest = h.honest.len();

    let mut tx_submit: BTreeMap<Digest, (u64, u64)> = BTreeMap::new();
    let mut tx_accepts: HashMap<Digest, (usize, u64)> = HashMap::new();
    let mut block_accepts: HashMap<Digest, BTreeMap<usize, u64>> = HashMap::new();
    let mut heads: Vec<(u64, Digest, bool)> = Vec::new();
    let mut msg_counts: BTreeMap<String, u64> = BTreeMap::new();
    let mut finality_msgs = 0;
    let mut late = 0;
    let mut t_cf = Vec::new();
    let mut tx_msgs = 0u64;
    let mut cycles = h.slots / (r + 2);
    if h.slots % (r + 2) != 0 {
        cycles += 1;
    }
    let mut finalized_per_epoch = vec![0u64; cycles as usize];
    let mut final_at: HashMap<Digest, u64> = HashMap::new();
    let mut evidence = 0;
    let mut violations = 0;
    let mut disagreements = 0;

    for rec in &trace.records {
        match rec {
            Record::Tx { slot, tick, tx, accepted: true, .. } => {
                tx_submit.insert(*tx, (*tick, *slot));
            }
            Record::TxAccept { tick, tx, .. } => {
                let e = tx_accepts.entry(*tx).or_insert((0, 0));
                e.0 += 1;
                e.1 = e.1.max(*tick);
            }
            Record::Block { tick, node, digest, status, .. } if status == "accepted" => {
                // first acceptance per node; later ones are signer swaps
                block_accepts.entry(*digest).or_default().entry(*node).or_insert(*tick);
            }
            Record::Head { slot, digest, empty, .. } => {
                if phase_of(*slot, r).1 == Phase::Proposal {
                    heads.push((*slot, *digest, *empty));
                }
            }
            Record::SlotSummary { agree, .. } => {
                if !agree {
                    disagreements += 1;
                }
            }
            Record::MsgStats { slot, kinds } => {
                for (k, s) in kinds {
                    *msg_counts.entry(k.clone()).or_default() += s.sent;
                    late += s.late;
                }
                if let Some(f) = kinds.get("finality") {
                    if phase_of(*slot, r).1 == Phase::Finality {
                        finality_msgs = finality_msgs.max(f.sent);
                        if let Some(t) = f.last_honest_delivery {
                            t_cf.push((t - slot * l) as f64);
                        }
                    }
                }
                if let Some(t) = kinds.get("tx") {
                    tx_msgs += t.sent;
                }
            }
            Record::Final { slot, blocks, .. } => {
                let (cycle, _) = phase_of(*slot, r);
                for b in blocks {
                    if b.height > 0 && b.height % r == 0 {
                        if let Some(c) = finalized_per_epoch.get_mut(cycle as usize) {
                            *c += 1;
                        }
                    }
                    for t in &b.txs {
                        final_at.entry(*t).or_insert(*slot);
                    }
                }
            }
            Record::Evidence { .. } => evidence += 1,
            Record::Violation { .. } => violations += 1,
            _ => {}
        }
    }

    let t_ct: Vec<f64> = tx_submit
        .iter()
        .filter_map(|(tx, (tick, _))| {
            tx_accepts.get(tx).filter(|(n, _)| *n == n_honest).map(|(_, last)| (last - tick) as f64)
        })
        .collect();
    let t_bp: Vec<f64> = heads
        .iter()
        .filter(|(_, _, empty)| !empty)
        .filter_map(|(slot, d, _)| {
            let nodes = block_accepts.get(d).filter(|nodes| nodes.len() == n_honest)?;
            nodes.values().max().map(|last| (last - slot * l) as f64)
        })
        .collect();
    let (t_ct, t_bp, t_cf) = (mean(&t_ct), mean(&t_bp), mean(&t_cf));
    let t_bc = match (t_cf, t_bp) {
        (Some(cf), Some(bp)) => Some((cf + bp * r as f64) / r as f64),
        _ => None,
    };

    let bound = liveness_slots.unwrap_or(2 * r);
    let mut max_wait = None;
    let mut overdue = 0;
    for (tx, (_, slot)) in &tx_submit {
        match final_at.get(tx) {
            Some(fs) => max_wait = Some(max_wait.unwrap_or(0).max(fs.saturating_sub(*slot))),
            None if slot + bound <= h.slots => overdue += 1,
            None => {}
        }
    }

    MetricsReport {
        seed: h.seed,
        committee_size: h.committee_size,
        epoch_size: r,
        slots: h.slots,
        t_ct,
        t_bp,
        t_cf,
        t_bc,
        throughput: compute_throughput(trace, h.payload_bytes),
        msg_counts,
        tx_msgs_per_tx: (!tx_submit.is_empty()).then(|| tx_msgs as f64 / tx_submit.len() as f64),
        finality_msgs_per_round: finality_msgs,
        late_messages: late,
        finalized_per_epoch,
        finalized_txs: final_at.len() as u64,
        submitted_txs: tx_submit.len() as u64,
        max_tx_finality_slots: max_wait,
        overdue_txs: overdue,
        evidence,
        safety_violations: violations,
        state_hash_disagreements: disagreements,
    }
}

/// Exact per-member winning probability under the credit-first ranking,
/// by enumerating every subset of members that pass the puzzle. Member `j`
/// passes with probability `(floor((2^ξ-1) c_j / C) + 1) / 2^ξ`. Returns the
/// per-member probabilities and the empty-slot probability.
pub fn rule_ii_oracle(credits: &[u64], difficulty_bits: u32) -> (Vec<f64>, f64) {
    assert!(credits.len() <= 20, "enumeration is exponential in the committee size");
    assert!(difficulty_bits <= 64);
    let total: u128 = credits.iter().map(|&c| c as u128).sum();
    let space = 1u128 << difficulty_bits;
    let q: Vec<f64> = credits
        .iter()
        .map(|&c| (((space - 1) * c as u128 / total + 1) as f64) / space as f64)
        .collect();
    let k = credits.len();
    let mut win = vec![0.0; k];
    let mut empty = 0.0;
    for mask in 0u32..(1 << k) {
        let mut p = 1.0;
        for (j, qj) in q.iter().enumerate() {
            p *= if mask >> j & 1 == 1 { *qj } else { 1.0 - qj };
        }
        if mask == 0 {
            empty = p;
            continue;
        }
        let best = (0..k).filter(|j| mask >> j & 1 == 1).map(|j| credits[j]).max().expect("non-empty");
        let tied: Vec<usize> = (0..k).filter(|&j| mask >> j & 1 == 1 && credits[j] == best).collect();
        for j in &tied {
            win[*j] += p / tied.len() as f64;
        }
    }
    (win, empty)
}

/// Per-member proposal shares over the proposal slots of a trace, compared
/// with [`rule_ii_oracle`] for the genesis dynasty.
pub fn fairness_table(trace: &Trace, difficulty_bits: u32) -> FairnessTable {
    let members: Vec<(PublicKey, u64)> = trace
        .records
        .iter()
        .find_map(|r| match r {
            Record::Dynasty { index: 0, members, .. } => Some(members.clone()),
            _ => None,
        })
        .expect("trace records the genesis dynasty");
    let credits: Vec<u64> = members.iter().map(|(_, c)| *c).collect();
    let (expected, empty_expected) = rule_ii_oracle(&credits, difficulty_bits);
    let r = header(trace).epoch_size;
    let mut wins = vec![0u64; members.len()];
    let mut empties = 0u64;
    let mut n = 0u64;
    for rec in &trace.records {
        if let Record::Head { slot, proposer, .. } = rec {
            if phase_of(*slot, r).1 != Phase::Proposal {
                continue;
            }
            n += 1;
            match proposer.and_then(|p| members.iter().position(|(m, _)| *m == p)) {
                Some(i) => wins[i] += 1,
                None => empties += 1,
            }
        }
    }
    let nf = n.max(1) as f64;
    let mut chi = 0.0;
    let mut rows = Vec::new();
    let mut max_abs_z: f64 = 0.0;
    for (i, (pk, c)) in members.iter().enumerate() {
        let p = expected[i];
        let share = wins[i] as f64 / nf;
        let sigma = (p * (1.0 - p) / nf).sqrt();
        let z = if sigma > 0.0 { (share - p) / sigma } else { 0.0 };
        max_abs_z = max_abs_z.max(z.abs());
        chi += (wins[i] as f64 - nf * p).powi(2) / (nf * p);
        rows.push(FairnessRow { proposer: pk.to_hex()[..16].to_string(), credit: *c, wins: wins[i], share, expected: p, z });
    }
    chi += (empties as f64 - nf * empty_expected).powi(2) / (nf * empty_expected);
    let dof = members.len() as f64;
    let p_value = 1.0 - ChiSquared::new(dof).expect("positive dof").cdf(chi);
    FairnessTable {
        slots: n,
        rows,
        empty_share: empties as f64 / nf,
        empty_expected,
        chi_squared: chi,
        p_value,
        max_abs_z,
    }
}

/// Least-squares polynomial fit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fit {
    /// Coefficients, constant term first.
    pub coeffs: Vec<f64>,
    pub r_squared: f64,
    pub aic: f64,
}

fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Some(x)
}

/// Fits `y = Σ c_i x^i` for `i <= degree`. AIC is `n ln(RSS/n) + 2k` with
/// RSS floored at a tiny fraction of the total sum of squares.
pub fn poly_fit(xs: &[f64], ys: &[f64], degree: usize) -> Option<Fit> {
    let m = degree + 1;
    if xs.len() != ys.len() || xs.len() < m {
        return None;
    }
    let mut ata = vec![vec![0.0; m]; m];
    let mut aty = vec![0.0; m];
    for (&x, &y) in xs.iter().zip(ys) {
        for i in 0..m {
            aty[i] += x.powi(i as i32) * y;
            for j in 0..m {
                ata[i][j] += x.powi((i + j) as i32);
            }
        }
    }
    let coeffs = solve(ata, aty)?;
    let n = xs.len() as f64;
    let ybar = ys.iter().sum::<f64>() / n;
    let tss: f64 = ys.iter().map(|y| (y - ybar).powi(2)).sum();
    let rss: f64 = xs
        .iter()
        .zip(ys)
        .map(|(&x, &y)| (y - coeffs.iter().enumerate().map(|(i, c)| c * x.powi(i as i32)).sum::<f64>()).powi(2))
        .sum();
    let r_squared = if tss > 0.0 { 1.0 - rss / tss } else { 1.0 };
    let floor = (tss.max(ys.iter().map(|y| y * y).sum::<f64>()) * 1e-12).max(f64::MIN_POSITIVE);
    let aic = n * (rss.max(floor) / n).ln() + 2.0 * m as f64;
    Some(Fit { coeffs, r_squared, aic })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdicts {
    pub safety: Option<Verdict>,
    pub liveness: Option<Verdict>,
    pub fairness: Option<Verdict>,
    pub complexity: Option<Verdict>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: String,
    pub metrics: MetricsReport,
    pub fairness: Option<FairnessTable>,
    pub verdicts: Verdicts,
    pub forensics: Vec<SlashingEvidence>,
    pub exit_code: i32,
}

/// Which assertions to evaluate; `None` means "as configured in the file".
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AssertSelection {
    pub safety: bool,
    pub liveness: bool,
    pub fairness: bool,
    pub complexity: bool,
}

impl AssertSelection {
    pub fn from_scenario(a: &AssertSection) -> Self {
        AssertSelection { safety: a.safety, liveness: a.liveness, fairness: a.fairness, complexity: a.complexity }
    }

    pub fn parse(list: &str) -> Result<Self, String> {
        let mut s = AssertSelection::default();
        for item in list.split(',').map(str::trim).filter(|x| !x.is_empty()) {
            match item {
                "safety" => s.safety = true,
                "liveness" => s.liveness = true,
                "fairness" => s.fairness = true,
                "complexity" => s.complexity = true,
                other => return Err(format!("unknown assertion {other:?}")),
            }
        }
        Ok(s)
    }
}

pub fn liveness_verdict(m: &MetricsReport, bound: u64) -> Verdict {
    let per_epoch_ok = m.finalized_per_epoch.first().is_none_or(|&c| c == 0)
        && m.finalized_per_epoch.iter().skip(1).all(|&c| c == 1);
    let wait_ok = m.max_tx_finality_slots.is_none_or(|w| w <= bound) && m.overdue_txs == 0;
    Verdict::new(
        per_epoch_ok && wait_ok,
        format!(
            "finalized per epoch {:?}; max wait {:?} slots (bound {bound}); overdue {}",
            m.finalized_per_epoch, m.max_tx_finality_slots, m.overdue_txs
        ),
    )
}

pub fn complexity_verdict(m: &MetricsReport) -> Verdict {
    let k = m.committee_size as f64;
    let tx_ok = m.tx_msgs_per_tx.is_some_and(|x| x == k - 1.0);
    let fin_ok = m.finality_msgs_per_round as f64 <= k * (k - 1.0);
    Verdict::new(
        tx_ok && fin_ok,
        format!(
            "tx msgs per tx {:?} (expect {}), finality msgs per round {} (bound {})",
            m.tx_msgs_per_tx,
            k - 1.0,
            m.finality_msgs_per_round,
            k * (k - 1.0)
        ),
    )
}

/// Runs a loaded scenario and evaluates the selected assertions.
pub fn evaluate(scenario: &Scenario, select: AssertSelection) -> Result<(RunReport, SimOutcome), String> {
    let cfg = scenario.sim_config()?;
    let outcome = run(&cfg).map_err(|e| e.to_string())?;
    let report = report_for(scenario, &outcome.trace, select);
    Ok((report, outcome))
}

/// Builds the report from a trace alone.
pub fn report_for(scenario: &Scenario, trace: &Trace, select: AssertSelection) -> RunReport {
    let bound = scenario.asserts.liveness_slots.unwrap_or(2 * scenario.protocol.epoch_size);
    let metrics = compute_metrics(trace, Some(bound));
    let forensics = accountable_offenders(trace.votes());
    let fairness = select.fairness.then(|| fairness_table(trace, scenario.protocol.difficulty_bits));
    let verdicts = Verdicts {
        safety: select.safety.then(|| {
            Verdict::new(metrics.safety_violations == 0, format!("{} violation records", metrics.safety_violations))
        }),
        liveness: select.liveness.then(|| liveness_verdict(&metrics, bound)),
        fairness: fairness.as_ref().map(|f| {
            Verdict::new(
                f.max_abs_z <= scenario.asserts.fairness_sigmas && f.p_value > scenario.asserts.fairness_min_p,
                format!("max |z| {:.2}, chi-squared p {:.4}", f.max_abs_z, f.p_value),
            )
        }),
        complexity: select.complexity.then(|| complexity_verdict(&metrics)),
    };
    let failed = |v: &Option<Verdict>| v.as_ref().is_some_and(|v| !v.pass);
    let exit_code = if failed(&verdicts.safety) {
        EXIT_SAFETY
    } else if failed(&verdicts.liveness) {
        EXIT_LIVENESS
    } else if failed(&verdicts.fairness) || failed(&verdicts.complexity) {
        EXIT_ASSERTION
    } else {
        EXIT_PASS
    };
    RunReport { scenario: scenario.name.clone(), metrics, fairness, verdicts, forensics, exit_code }
}

pub const CSV_COLUMNS: [&str; 19] = [
    "scenario",
    "param",
    "value",
    "seed",
    "committee_size",
    "epoch_size",
    "slots",
    "t_ct",
    "t_bp",
    "t_cf",
    "t_bc",
    "throughput",
    "tx_msgs_per_tx",
    "finality_msgs_per_round",
    "late_messages",
    "finalized_checkpoints",
    "finalized_txs",
    "safety_violations",
    "exit_code",
];

fn opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v}")).unwrap_or_default()
}

fn csv_row(r: &RunReport, param: &str, value: &str) -> Vec<String> {
    let m = &r.metrics;
    vec![
        r.scenario.clone(),
        param.to_string(),
        value.to_string(),
        m.seed.to_string(),
        m.committee_size.to_string(),
        m.epoch_size.to_string(),
        m.slots.to_string(),
        opt(m.t_ct),
        opt(m.t_bp),
        opt(m.t_cf),
        opt(m.t_bc),
        format!("{}", m.throughput),
        opt(m.tx_msgs_per_tx),
        m.finality_msgs_per_round.to_string(),
        m.late_messages.to_string(),
        m.finalized_per_epoch.iter().sum::<u64>().to_string(),
        m.finalized_txs.to_string(),
        m.safety_violations.to_string(),
        r.exit_code.to_string(),
    ]
}

fn write_csv(path: &Path, rows: &[Vec<String>]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| HarnessError::Io {
        path: path.display().to_string(),
        source: std::io::Error::other(e),
    })?;
    let mut put = |rec: &[String]| {
        w.write_record(rec).map_err(|e| HarnessError::Io {
            path: path.display().to_string(),
            source: std::io::Error::other(e),
        })
    };
    put(&CSV_COLUMNS.map(String::from))?;
    for r in rows {
        put(r)?;
    }
    w.flush().map_err(io_err(path))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    let text = serde_json::to_string_pretty(value).expect("report serializes");
    fs::write(path, text + "\n").map_err(io_err(path))
}

/// `run` subcommand: executes the scenario and writes `report.json`,
/// `trace.jsonl` and `metrics.csv` (plus `forensics.json` after a safety
/// failure) into `out`.
pub fn run_scenario(
    path: &Path,
    seed: Option<u64>,
    out: &Path,
    select: Option<AssertSelection>,
) -> Result<RunReport, HarnessError> {
    let mut scenario = Scenario::load(path)?;
    if let Some(s) = seed {
        scenario.seed = s;
    }
    if scenario.name.is_empty() {
        scenario.name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    }
    let select = select.unwrap_or_else(|| AssertSelection::from_scenario(&scenario.asserts));
    let config_err = |msg| HarnessError::Config { path: path.display().to_string(), msg };
    let (report, outcome) = evaluate(&scenario, select).map_err(config_err)?;
    fs::create_dir_all(out).map_err(io_err(out))?;
    let trace_path = out.join("trace.jsonl");
    let file = fs::File::create(&trace_path).map_err(io_err(&trace_path))?;
    outcome.trace.write_jsonl(std::io::BufWriter::new(file)).map_err(io_err(&trace_path))?;
    write_json(&out.join("report.json"), &report)?;
    write_csv(&out.join("metrics.csv"), &[csv_row(&report, "", "")])?;
    if report.exit_code == EXIT_SAFETY {
        let violations: Vec<&Record> = outcome.trace.violations().collect();
        write_json(
            &out.join("forensics.json"),
            &serde_json::json!({ "violations": violations, "offenders": report.forensics }),
        )?;
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub scenario: String,
    pub param: String,
    pub values: Vec<u64>,
    pub runs: Vec<RunReport>,
    pub t_ct_linear: Option<Fit>,
    pub t_cf_linear: Option<Fit>,
    pub t_cf_quadratic: Option<Fit>,
    pub exit_code: i32,
}

/// Parses `NAME=v1,v2,...`.
pub fn parse_sweep_param(spec: &str) -> Result<(String, Vec<u64>), String> {
    let (name, values) = spec.split_once('=').ok_or_else(|| format!("expected NAME=v1,v2,... in {spec:?}"))?;
    let values = values
        .split(',')
        .map(|v| v.trim().parse::<u64>().map_err(|e| format!("bad value {v:?}: {e}")))
        .collect::<Result<Vec<_>, _>>()?;
    if values.is_empty() {
        return Err("sweep needs at least one value".into());
    }
    Ok((name.trim().to_string(), values))
}

pub fn sweep_scenario(scenario: &Scenario, param: &str, values: &[u64], select: AssertSelection) -> Result<SweepReport, String> {
    let mut runs = Vec::new();
    for &v in values {
        let s = scenario.with_param(param, v)?;
        runs.push(evaluate(&s, select)?.0);
    }
    let xs: Vec<f64> = values.iter().map(|&v| v as f64).collect();
    let series = |f: fn(&MetricsReport) -> Option<f64>| -> Option<Vec<f64>> { runs.iter().map(|r| f(&r.metrics)).collect() };
    let t_ct = series(|m| m.t_ct);
    let t_cf = series(|m| m.t_cf);
    let exit_code = runs.iter().map(|r| r.exit_code).max().unwrap_or(EXIT_PASS);
    Ok(SweepReport {
        scenario: scenario.name.clone(),
        param: param.to_string(),
        values: values.to_vec(),
        t_ct_linear: t_ct.as_ref().and_then(|y| poly_fit(&xs, y, 1)),
        t_cf_linear: t_cf.as_ref().and_then(|y| poly_fit(&xs, y, 1)),
        t_cf_quadratic: t_cf.as_ref().and_then(|y| poly_fit(&xs, y, 2)),
        runs,
        exit_code,
    })
}

/// `sweep` subcommand: one run per value, `metrics.csv` with one row each
/// and `report.json` with the latency fits.
pub fn run_sweep(path: &Path, param_spec: &str, out: &Path, select: Option<AssertSelection>) -> Result<SweepReport, HarnessError> {
    let config_err = |msg| HarnessError::Config { path: path.display().to_string(), msg };
    let mut scenario = Scenario::load(path)?;
    if scenario.name.is_empty() {
        scenario.name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    }
    let (param, values) = parse_sweep_param(param_spec).map_err(config_err)?;
    let select = select.unwrap_or_else(|| AssertSelection::from_scenario(&scenario.asserts));
    let report = sweep_scenario(&scenario, &param, &values, select).map_err(config_err)?;
    fs::create_dir_all(out).map_err(io_err(out))?;
    let rows: Vec<Vec<String>> =
        report.runs.iter().zip(&values).map(|(r, v)| csv_row(r, &param, &v.to_string())).collect();
    write_csv(&out.join("metrics.csv"), &rows)?;
    write_json(&out.join("report.json"), &report)?;
    Ok(report)
}

/// Default output directory for a scenario path.
pub fn default_out_dir(path: &Path) -> PathBuf {
    PathBuf::from("out").join(path.file_stem().unwrap_or_default())
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        epochs = 4
        [protocol]
        epoch_size = 3
        [committee]
        size = 4
        [workload]
        tx_per_slot = 1
        pattern = "epoch_start"
        [assert]
        liveness_slots = 16
    "#;

    #[test]
    fn config_errors_name_the_field() {
        let err = Scenario::from_toml("epochs = 3\n[protocol]\nepoch_sise = 3\n").unwrap_err();
        assert!(err.contains("epoch_sise") && err.contains("line 3"), "{err}");
        let s = Scenario::from_toml("epochs = 3\n[network]\ndelta = 500\n").unwrap();
        assert!(s.sim_config().unwrap_err().contains("delta"));
    }

    #[test]
    fn bc_formula_holds_exactly() {
        let s = Scenario::from_toml(MINIMAL).unwrap();
        let (rep, _) = evaluate(&s, AssertSelection::default()).unwrap();
        let m = &rep.metrics;
        let (cf, bp) = (m.t_cf.unwrap(), m.t_bp.unwrap());
        assert_eq!(m.t_bc.unwrap(), (cf + bp * 3.0) / 3.0);
    }

    #[test]
    fn report_rebuilds_from_trace_file() {
        let s = Scenario::from_toml(MINIMAL).unwrap();
        let sel = AssertSelection { safety: true, liveness: true, ..Default::default() };
        let (rep, out) = evaluate(&s, sel).unwrap();
        let text = out.trace.to_jsonl();
        let reread = Trace::read_jsonl(text.as_bytes()).unwrap();
        assert_eq!(report_for(&s, &reread, sel), rep);
        assert_eq!(rep.exit_code, EXIT_PASS, "{:?}", rep.verdicts);
    }

    #[test]
    fn zero_finalized_means_zero_throughput() {
        let mut s = Scenario::from_toml(MINIMAL).unwrap();
        s.epochs = 1;
        let (rep, _) = evaluate(&s, AssertSelection::default()).unwrap();
        assert_eq!(rep.metrics.throughput, 0.0);
    }

    #[test]
    fn fits_recover_exact_polynomials() {
        let xs = [4.0, 8.0, 12.0, 16.0];
        let lin: Vec<f64> = xs.iter().map(|x| 3.0 + 2.0 * x).collect();
        let f = poly_fit(&xs, &lin, 1).unwrap();
        assert!((f.coeffs[1] - 2.0).abs() < 1e-9 && f.r_squared > 0.999_999);
        let quad: Vec<f64> = xs.iter().map(|x| 1.0 + x * (x - 1.0)).collect();
        let (l, q) = (poly_fit(&xs, &quad, 1).unwrap(), poly_fit(&xs, &quad, 2).unwrap());
        assert!(q.aic < l.aic);
    }

    #[test]
    fn oracle_matches_hand_computation() {
        // two members, credits 1 and 3, ξ = 2: pass counts floor(3c/4)+1 = 1 and 3
        let (w, e) = rule_ii_oracle(&[1, 3], 2);
        let (q1, q3) = (0.25, 0.75);
        assert!((w[1] - q3).abs() < 1e-12);
        assert!((w[0] - q1 * (1.0 - q3)).abs() < 1e-12);
        assert!((e - (1.0 - q1) * (1.0 - q3)).abs() < 1e-12);
        let (w, _) = rule_ii_oracle(&[2, 2], 4);
        assert!((w[0] - w[1]).abs() < 1e-12);
    }

    #[test]
    fn sweep_param_parsing() {
        assert_eq!(parse_sweep_param("K=4,8").unwrap(), ("K".into(), vec![4, 8]));
        assert!(parse_sweep_param("K").is_err());
        assert!(parse_sweep_param("K=a").is_err());
    }
}
