use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use singtech::data::synth::{synth_generate, SynthSpec};
use singtech::data::TECHNIQUES;

#[derive(Args)]
pub struct SynthArgs {
    /// Output directory for WAV files and manifest.jsonl.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Comma-separated per-class clip counts (10 values); defaults to the
    /// long-tail 64,32,16,8,8,4,4,2,2,2.
    #[arg(long)]
    counts: Option<String>,
    #[arg(long)]
    threads: Option<usize>,
}

pub fn run(args: SynthArgs) -> Result<i32> {
    super::setup_threads(args.threads)?;
    let counts = match &args.counts {
        Some(raw) => raw
            .split(',')
            .map(|t| t.trim().parse::<usize>().context("parsing --counts"))
            .collect::<Result<Vec<_>>>()?,
        None => SynthSpec::long_tail(0).counts,
    };
    let spec = SynthSpec { counts, seed: args.seed };
    let entries = synth_generate(&spec, &args.out)?;
    println!("generated {} clips under {}", entries.len(), args.out.display());
    for (class, n) in spec.counts.iter().enumerate() {
        println!("  {:<10} {n}", TECHNIQUES[class]);
    }
    Ok(0)
}
