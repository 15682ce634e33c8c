use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::Args;
use singtech::audio::NormStats;
use singtech::checkpoint::load_model;
use singtech::data::index_dataset;
use singtech::eval::{compute_metrics, confusion_csv};
use singtech::model::Model;
use singtech::{Scalar, Tensor};

#[derive(Args)]
pub struct EvalArgs {
    /// Checkpoint to evaluate.
    #[arg(long)]
    model: PathBuf,
    /// Corpus root.
    #[arg(long)]
    data: PathBuf,
    /// Training-singer split file; evaluation then runs on the held-out
    /// test singers. Without it, every file is evaluated.
    #[arg(long)]
    split: Option<PathBuf>,
    /// Evaluate "train" or "test" side of the split (default test).
    #[arg(long, default_value = "test")]
    scope: String,
    /// Write the JSON report here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the confusion matrix as CSV.
    #[arg(long)]
    confusion_csv: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    batch: usize,
    #[arg(long)]
    bits: Option<u32>,
    #[arg(long)]
    threads: Option<usize>,
}

pub fn run(args: EvalArgs) -> Result<i32> {
    super::setup_threads(args.threads)?;
    match args.bits.unwrap_or(32) {
        32 => run_typed::<f32>(&args),
        64 => run_typed::<f64>(&args),
        _ => bail!("--bits must be 32 or 64"),
    }
}

fn run_typed<T: Scalar>(args: &EvalArgs) -> Result<i32> {
    let model: Model<T> = load_model(&args.model)?;
    let stats = match &model.norm_stats {
        Some(s) => s.clone(),
        None => {
            eprintln!("warning: checkpoint has no normalization statistics; using identity");
            NormStats::identity()
        }
    };
    let index = index_dataset(&args.data, args.split.as_deref())?;
    super::warn_skipped(&index.skipped);
    let subset: Vec<usize> = match (args.split.is_some(), args.scope.as_str()) {
        (true, "test") => index.test.clone(),
        (true, "train") => index.train.clone(),
        (false, _) => index.train.clone(),
        (_, other) => bail!("--scope must be 'train' or 'test', got '{other}'"),
    };
    if subset.is_empty() {
        bail!(singtech::Error::Data(format!("no files in the '{}' scope", args.scope)));
    }

    // Stream in file chunks so arbitrarily large corpora fit in memory.
    let classes = singtech::data::TECHNIQUES.len();
    let mut logits_rows: Vec<T> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    for file_chunk in subset.chunks(16) {
        let (mut stacks, chunk_labels) = super::clip_stacks(&index, file_chunk)?;
        for s in stacks.iter_mut() {
            stats.apply(s);
        }
        let inputs: Vec<Tensor<T>> = stacks.iter().map(|s| s.cast::<T>()).collect();
        drop(stacks);
        for (batch_inputs, batch_labels) in
            inputs.chunks(args.batch.max(1)).zip(chunk_labels.chunks(args.batch.max(1)))
        {
            let refs: Vec<&Tensor<T>> = batch_inputs.iter().collect();
            let batch = Tensor::stack(&refs)?;
            let logits = model.forward_eval(&batch)?;
            logits_rows.extend_from_slice(logits.data());
            labels.extend_from_slice(batch_labels);
        }
    }
    let logits = Tensor::from_vec(&[labels.len(), classes], logits_rows)?;
    let report = compute_metrics(&logits, &labels)?;
    println!(
        "{} clips | macro-F1 {:.4} acc {:.4} b-acc {:.4} top2 {:.4} top3 {:.4}",
        report.samples, report.macro_f1, report.accuracy, report.balanced_accuracy, report.top2, report.top3
    );
    if let Some(path) = &args.out {
        super::write_json(path, &serde_json::to_value(&report)?)?;
        println!("wrote {}", path.display());
    }
    if let Some(path) = &args.confusion_csv {
        std::fs::write(path, confusion_csv(&report))?;
        println!("wrote {}", path.display());
    }
    Ok(0)
}
