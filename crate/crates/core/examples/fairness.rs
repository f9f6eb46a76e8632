//! Proposer shares in a shortened fairness run against the exact winner
//! distribution of the election rule.

use std::path::Path;

use pocvcf::harness::{evaluate, AssertSelection, Scenario};

fn main() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios/fairness.toml");
    let mut scenario = Scenario::load(&path).unwrap();
    scenario.epochs = 40;
    let (report, _) = evaluate(&scenario, AssertSelection { fairness: true, ..Default::default() }).unwrap();
    let t = report.fairness.unwrap();
    println!("{} proposal slots", t.slots);
    println!("{:>6} {:>6} {:>8} {:>8} {:>6}", "credit", "wins", "share", "expected", "z");
    for r in &t.rows {
        println!("{:>6} {:>6} {:>8.4} {:>8.4} {:>6.2}", r.credit, r.wins, r.share, r.expected, r.z);
    }
    println!("empty {:.4} (expected {:.4})", t.empty_share, t.empty_expected);
    println!("chi-squared {:.2}, p {:.4}", t.chi_squared, t.p_value);
}
