//! Runs the honest scenario and prints its latency metrics and verdicts.

use std::path::Path;

use pocvcf::harness::{evaluate, AssertSelection, Scenario};

fn main() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios/honest.toml");
    let scenario = Scenario::load(&path).unwrap();
    let (report, outcome) = evaluate(&scenario, AssertSelection::from_scenario(&scenario.asserts)).unwrap();
    let m = &report.metrics;
    println!("{} nodes, K={}, R={}, {} slots", outcome.nodes.len(), m.committee_size, m.epoch_size, m.slots);
    println!("T_ct {:?}  T_bp {:?}  T_cf {:?}  T_bc {:?} ticks", m.t_ct, m.t_bp, m.t_cf, m.t_bc);
    println!("throughput {:.1} B/h, {} of {} txs final", m.throughput, m.finalized_txs, m.submitted_txs);
    println!("messages {:?}", m.msg_counts);
    println!("reference finalized {}", outcome.reference().tree().highest_finalized());
    for (name, v) in [("safety", &report.verdicts.safety), ("liveness", &report.verdicts.liveness), ("complexity", &report.verdicts.complexity)] {
        if let Some(v) = v {
            println!("{name}: {} {}", if v.pass { "pass" } else { "FAIL" }, v.detail);
        }
    }
}
