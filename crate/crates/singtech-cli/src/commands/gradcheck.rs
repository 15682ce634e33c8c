use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use singtech::gradcheck::{default_epsilon, default_tolerance, run_suite};

#[derive(Args)]
pub struct GradcheckArgs {
    /// Scalar width: 32 or 64.
    #[arg(long, default_value_t = 32)]
    bits: u32,
    /// Random seeds per operation.
    #[arg(long, default_value_t = 20)]
    seeds: u64,
    #[arg(long)]
    threads: Option<usize>,
    /// Write the reports as JSON to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn run(args: GradcheckArgs) -> Result<i32> {
    if args.bits != 32 && args.bits != 64 {
        anyhow::bail!("--bits must be 32 or 64");
    }
    super::setup_threads(args.threads)?;
    let eps = default_epsilon(args.bits);
    let tol = default_tolerance(args.bits);
    let reports = if args.bits == 64 {
        run_suite::<f64>(args.seeds, eps, tol)
    } else {
        run_suite::<f32>(args.seeds, eps, tol)
    };
    println!(
        "finite-difference suite: {} bits, eps {eps:.0e}, tolerance {tol:.0e}, {} seeds/op",
        args.bits, args.seeds
    );
    println!("{:<34} {:>12} {:>8}", "op", "max rel err", "status");
    let mut all_passed = true;
    for r in &reports {
        println!("{:<34} {:>12.3e} {:>8}", r.op, r.max_rel_err, if r.passed { "pass" } else { "FAIL" });
        all_passed &= r.passed;
    }
    if let Some(path) = &args.out {
        let rows: Vec<serde_json::Value> = reports
            .iter()
            .map(|r| {
                serde_json::json!({
                    "op": r.op, "max_rel_err": r.max_rel_err,
                    "tolerance": r.tolerance, "passed": r.passed,
                })
            })
            .collect();
        super::write_json(
            path,
            &serde_json::json!({"bits": args.bits, "seeds": args.seeds, "reports": rows}),
        )?;
    }
    if all_passed {
        Ok(0)
    } else {
        eprintln!("gradient check failed");
        Ok(3)
    }
}
