use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use singtech::model::{build_model, count_params, DCPlacement, ModelConfig};

#[derive(Args)]
pub struct ParamsArgs {
    /// Write the counts as JSON to this file.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Show the per-layer breakdown for each placement.
    #[arg(long)]
    breakdown: bool,
}

pub fn run(args: ParamsArgs) -> Result<i32> {
    let base = count_params(&build_model::<f32>(&ModelConfig::paper(DCPlacement::None), 0));
    let mut rows = Vec::new();
    println!("{:<8} {:>10} {:>12}", "model", "params", "delta vs none");
    for placement in DCPlacement::ALL_PLACEMENTS {
        let count = count_params(&build_model::<f32>(&ModelConfig::paper(placement), 0));
        let delta = count.total as i64 - base.total as i64;
        println!("{:<8} {:>10} {:>+12}", placement.name(), count.total, delta);
        if args.breakdown {
            for (name, n) in &count.layers {
                println!("    {name:<18} {n:>8}");
            }
        }
        rows.push(serde_json::json!({
            "placement": placement.name(),
            "total": count.total,
            "delta_vs_none": delta,
            "classifier": count.classifier,
            "layers": count.layers.iter().map(|(k, v)| serde_json::json!({"layer": k, "params": v})).collect::<Vec<_>>(),
        }));
    }
    if let Some(path) = args.out {
        super::write_json(&path, &serde_json::json!({ "placements": rows }))?;
        println!("wrote {}", path.display());
    }
    Ok(0)
}
