//! Adversarial scenarios: equivocating voters, a split network with enough
//! equivocators to finalize both sides, a double spend, a long-range branch,
//! withholding and selfish proposers.

use std::path::Path;

use pocvcf::harness::{evaluate, AssertSelection, Scenario};

fn main() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios");
    let sel = AssertSelection { safety: true, ..Default::default() };
    for name in ["equivocators", "partition", "double_spend", "long_range", "withholding", "selfish"] {
        let scenario = Scenario::load(&dir.join(format!("{name}.toml"))).unwrap();
        let (report, _) = evaluate(&scenario, sel).unwrap();
        let m = &report.metrics;
        println!(
            "{name:>13}: exit {} violations {} evidence {} finalized per epoch {:?}",
            report.exit_code, m.safety_violations, m.evidence, m.finalized_per_epoch
        );
        for ev in &report.forensics {
            println!("{:>15} rule {} {:?} by {}", "", ev.rule, ev.kind, ev.offender);
        }
    }
}
