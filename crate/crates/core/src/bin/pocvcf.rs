use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pocvcf::harness::{self, AssertSelection};

#[derive(Parser)]
#[command(name = "pocvcf", about = "Run consensus simulations from scenario files")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one scenario and write report.json, trace.jsonl and metrics.csv.
    Run {
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Comma-separated subset of safety,liveness,fairness,complexity.
        #[arg(long = "assert")]
        asserts: Option<String>,
    },
    /// Run a scenario once per parameter value, e.g. `--param K=4,8,12,16`.
    Sweep {
        scenario: PathBuf,
        #[arg(long)]
        param: String,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long = "assert")]
        asserts: Option<String>,
    },
}

fn selection(asserts: Option<String>) -> Result<Option<AssertSelection>, String> {
    asserts.map(|a| AssertSelection::parse(&a)).transpose()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.cmd {
        Cmd::Run { scenario, seed, out, asserts } => {
            let out = out.unwrap_or_else(|| harness::default_out_dir(&scenario));
            match selection(asserts) {
                Err(e) => {
                    eprintln!("error: {e}");
                    harness::EXIT_CONFIG
                }
                Ok(sel) => match harness::run_scenario(&scenario, seed, &out, sel) {
                    Ok(r) => {
                        let m = &r.metrics;
                        println!(
                            "{}: t_ct={:?} t_bp={:?} t_cf={:?} t_bc={:?} throughput={:.1} B/h finalized={:?}",
                            r.scenario, m.t_ct, m.t_bp, m.t_cf, m.t_bc, m.throughput, m.finalized_per_epoch
                        );
                        for (name, v) in [
                            ("safety", &r.verdicts.safety),
                            ("liveness", &r.verdicts.liveness),
                            ("fairness", &r.verdicts.fairness),
                            ("complexity", &r.verdicts.complexity),
                        ] {
                            if let Some(v) = v {
                                println!("{name}: {} ({})", if v.pass { "PASS" } else { "FAIL" }, v.detail);
                            }
                        }
                        println!("wrote {}", out.display());
                        r.exit_code
                    }
                    Err(e) => {
                        eprintln!("error: {e}");
                        e.exit_code()
                    }
                },
            }
        }
        Cmd::Sweep { scenario, param, out, asserts } => {
            let out = out.unwrap_or_else(|| harness::default_out_dir(&scenario));
            match selection(asserts) {
                Err(e) => {
                    eprintln!("error: {e}");
                    harness::EXIT_CONFIG
                }
                Ok(sel) => match harness::run_sweep(&scenario, &param, &out, sel) {
                    Ok(r) => {
                        for (v, run) in r.values.iter().zip(&r.runs) {
                            let m = &run.metrics;
                            println!("{}={v}: t_ct={:?} t_cf={:?} throughput={:.1}", r.param, m.t_ct, m.t_cf, m.throughput);
                        }
                        if let (Some(l), Some(q)) = (&r.t_cf_linear, &r.t_cf_quadratic) {
                            println!("t_cf fit: linear R2={:.4} AIC={:.1}, quadratic R2={:.4} AIC={:.1}", l.r_squared, l.aic, q.r_squared, q.aic);
                        }
                        println!("wrote {}", out.display());
                        r.exit_code
                    }
                    Err(e) => {
                        eprintln!("error: {e}");
                        e.exit_code()
                    }
                },
            }
        }
    };
    ExitCode::from(code as u8)
}
