//! Proof-of-credit leader election for one committee over many heads.
//!
//! Each member hashes the head with its key and credit; a member wins the
//! slot when its truncated hash clears a target scaled by its credit share.
//! Among several winners the highest credit wins.

use pocvcf::crypto::{hash, keygen};
use pocvcf::harness::rule_ii_oracle;
use pocvcf::poc::{check_poc, CreditDistribution, PocParams};

fn main() {
    let credits = [1u64, 2, 3, 4, 5, 6, 7, 8];
    let bits = 8;
    let keys: Vec<_> = (0..credits.len()).map(|i| keygen(format!("member{i}").as_bytes()).unwrap()).collect();
    let dist = CreditDistribution::new(keys.iter().zip(credits).map(|(k, c)| (k.public(), c)).collect()).unwrap();
    let params = PocParams::new(bits).unwrap();

    let rounds = 20_000;
    let mut wins = vec![0u64; credits.len()];
    let mut passes = vec![0u64; credits.len()];
    let mut empty = 0;
    for round in 0..rounds {
        let head = hash(format!("head{round}").as_bytes());
        let mut best: Option<(u64, u64, usize)> = None;
        for (i, k) in keys.iter().enumerate() {
            let o = check_poc(&head, &k.public(), &dist, &params).unwrap();
            if !o.passed {
                continue;
            }
            passes[i] += 1;
            // highest credit first, then the smaller truncation
            let rank = (u64::MAX - credits[i], o.truncation_u64(), i);
            if best.is_none_or(|b| rank < b) {
                best = Some(rank);
            }
        }
        match best {
            Some((_, _, i)) => wins[i] += 1,
            None => empty += 1,
        }
    }

    let (expected, expected_empty) = rule_ii_oracle(&credits, bits);
    println!("{:>6} {:>10} {:>10} {:>10}", "credit", "pass rate", "win share", "expected");
    for i in 0..credits.len() {
        println!(
            "{:>6} {:>10.4} {:>10.4} {:>10.4}",
            credits[i],
            passes[i] as f64 / rounds as f64,
            wins[i] as f64 / rounds as f64,
            expected[i]
        );
    }
    println!("empty slots {:.4} (expected {:.4})", empty as f64 / rounds as f64, expected_empty);
}
