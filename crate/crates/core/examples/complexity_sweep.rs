//! Sweeps the committee size and fits finality latency against K.

use std::path::Path;

use pocvcf::harness::{sweep_scenario, AssertSelection, Scenario};

fn main() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios/complexity.toml");
    let scenario = Scenario::load(&path).unwrap();
    let sel = AssertSelection { complexity: true, ..Default::default() };
    let sweep = sweep_scenario(&scenario, "K", &[4, 8, 12, 16], sel).unwrap();
    println!("{:>3} {:>10} {:>10} {:>10} {:>12}", "K", "T_ct", "T_cf", "tx msgs", "fin msgs");
    for (k, run) in sweep.values.iter().zip(&sweep.runs) {
        let m = &run.metrics;
        println!(
            "{k:>3} {:>10.1} {:>10.1} {:>10.1} {:>12}",
            m.t_ct.unwrap_or(f64::NAN),
            m.t_cf.unwrap_or(f64::NAN),
            m.tx_msgs_per_tx.unwrap_or(f64::NAN),
            m.finality_msgs_per_round
        );
    }
    if let (Some(l), Some(q)) = (&sweep.t_cf_linear, &sweep.t_cf_quadratic) {
        println!("T_cf linear   R²={:.4} AIC={:.1}", l.r_squared, l.aic);
        println!("T_cf quadratic R²={:.4} AIC={:.1}", q.r_squared, q.aic);
    }
    if let Some(l) = &sweep.t_ct_linear {
        println!("T_ct linear   R²={:.4} coeffs {:?}", l.r_squared, l.coeffs);
    }
}
